use super::Model;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{identity_init, ConvKernel, ConvSpec, SampleKind};
use crate::tensor::{Real, Tensor};

pub const GENERATOR_BLOCKS: usize = 3;
pub const LAYERS_PER_BLOCK: usize = 3;
const CHANNELS: usize = 3;

/// Perturbation generator: three blocks of three 3-channel same-padded
/// convolutions, with a relu closing each block.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorP {
    kind: SampleKind,
    layers: Vec<ConvSpec>,
}

/// A generator whose layers are all identity-initialized, so `P(x) == x` for
/// every non-negative `x`.
pub fn build_generator(kind: SampleKind) -> GeneratorP {
    let zero = ConvSpec::zeros(ConvKernel::for_kind(kind), CHANNELS, CHANNELS).expect("fixed sizes are valid");
    let layer = identity_init(&zero).expect("square layer");
    GeneratorP {
        kind,
        layers: vec![layer; GENERATOR_BLOCKS * LAYERS_PER_BLOCK],
    }
}

impl GeneratorP {
    pub(crate) fn from_layers(kind: SampleKind, layers: Vec<ConvSpec>) -> Result<Self> {
        let kernel = ConvKernel::for_kind(kind);
        let ok = layers.len() == GENERATOR_BLOCKS * LAYERS_PER_BLOCK
            && layers
                .iter()
                .all(|l| l.kernel() == kernel && l.in_channels() == CHANNELS && l.out_channels() == CHANNELS);
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "generator needs {} {kind} conv layers with 3 channels",
                GENERATOR_BLOCKS * LAYERS_PER_BLOCK
            )));
        }
        Ok(Self { kind, layers })
    }

    pub fn kind(&self) -> SampleKind {
        self.kind
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }
}

impl Model for GeneratorP {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn forward<R: Real>(&self, tape: &mut Tape<R>, params: &[Var], x: Var) -> Result<Var> {
        let shape = tape.value(x).shape();
        if shape.len() != self.kind.spatial_rank() + 1 || shape[0] != CHANNELS {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("{} generator expects a 3-channel sample", self.kind),
            });
        }
        let mut h = x;
        for block in params.chunks(2 * LAYERS_PER_BLOCK) {
            for layer in block.chunks(2) {
                h = tape.conv(h, layer[0], layer[1])?;
            }
            h = tape.relu(h)?;
        }
        Ok(h)
    }
}
