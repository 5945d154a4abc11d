use rand::Rng;

use super::Model;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ConvKernel, ConvSpec, SampleKind, TransposedConvSpec};
use crate::tensor::{Real, Tensor};

const HIDDEN: usize = 8;

/// Reconstruction network: two stride-2 transposed convolutions upsample by
/// four, then a maxpool, a 3×3 convolution back to three channels and a
/// second maxpool return to the input size. Video samples are processed
/// frame by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructorR {
    kind: SampleKind,
    pub(crate) up1: TransposedConvSpec,
    pub(crate) up2: TransposedConvSpec,
    pub(crate) down: ConvSpec,
}

fn down_kernel(kind: SampleKind) -> ConvKernel {
    match kind {
        SampleKind::Image => ConvKernel::Image,
        SampleKind::Video => ConvKernel::PerFrame,
    }
}

fn pool_window(kind: SampleKind) -> &'static [usize] {
    match kind {
        SampleKind::Image => &[2, 2],
        SampleKind::Video => &[1, 2, 2],
    }
}

impl ReconstructorR {
    pub fn new(kind: SampleKind, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            kind,
            up1: TransposedConvSpec::random(kind, 3, HIDDEN, 2, rng)?,
            up2: TransposedConvSpec::random(kind, HIDDEN, HIDDEN, 2, rng)?,
            down: ConvSpec::random(down_kernel(kind), HIDDEN, 3, rng)?,
        })
    }

    pub(crate) fn from_parts(
        kind: SampleKind,
        up1: TransposedConvSpec,
        up2: TransposedConvSpec,
        down: ConvSpec,
    ) -> Result<Self> {
        let stride = [1, 2, 2];
        let up_rank = kind.spatial_rank() + 2;
        let ok = up1.stride() == stride
            && up2.stride() == stride
            && up1.weight.rank() == up_rank
            && up2.weight.rank() == up_rank
            && up1.weight.shape()[..2] == [3, HIDDEN]
            && up2.weight.shape()[..2] == [HIDDEN, HIDDEN]
            && up1.weight.shape()[up_rank - 2..] == [2, 2]
            && up2.weight.shape()[up_rank - 2..] == [2, 2]
            && down.kernel() == down_kernel(kind)
            && down.in_channels() == HIDDEN
            && down.out_channels() == 3;
        if !ok {
            return Err(Error::InvalidArgument("reconstructor layers do not fit together".into()));
        }
        Ok(Self { kind, up1, up2, down })
    }

    pub fn kind(&self) -> SampleKind {
        self.kind
    }
}

impl Model for ReconstructorR {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(6);
        out.extend(self.up1.params());
        out.extend(self.up2.params());
        out.extend(self.down.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(6);
        out.extend(self.up1.params_mut());
        out.extend(self.up2.params_mut());
        out.extend(self.down.params_mut());
        out
    }

    fn forward<R: Real>(&self, tape: &mut Tape<R>, params: &[Var], x: Var) -> Result<Var> {
        let shape = tape.value(x).shape();
        if shape.len() != self.kind.spatial_rank() + 1 || shape[0] != 3 {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("{} reconstructor expects a 3-channel sample", self.kind),
            });
        }
        let window = pool_window(self.kind);
        let h = tape.conv_transpose(x, params[0], params[1], self.up1.stride())?;
        let h = tape.relu(h)?;
        let h = tape.conv_transpose(h, params[2], params[3], self.up2.stride())?;
        let h = tape.relu(h)?;
        let h = tape.maxpool(h, window)?;
        let h = tape.conv(h, params[4], params[5])?;
        tape.maxpool(h, window)
    }
}
