//! The three parameterized networks: the frozen classifier, the perturbation
//! generator and the reconstructor, plus their `WGT1` weight files.

mod classifier;
mod generator;
mod reconstructor;
mod train;
mod weights;

pub use classifier::ClassifierM;
pub use generator::{build_generator, GeneratorP, GENERATOR_BLOCKS, LAYERS_PER_BLOCK};
pub use reconstructor::ReconstructorR;
pub use train::{accuracy, smoothed_cross_entropy, train_classifier, TrainConfig, TrainReport};
pub use weights::{load_weights, save_weights, AnyModel, LayerRecord, ModelKind};

use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// A network whose parameters are stored in `f32` and bound onto a tape for
/// each forward pass.
pub trait Model {
    fn params(&self) -> Vec<&Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Forward pass using `params`, the tape handles returned by
    /// `tape.bind(&self.params(), ..)` (in the same order).
    fn forward<R: Real>(&self, tape: &mut Tape<R>, params: &[Var], x: Var) -> Result<Var>;

    /// SHA-256 over every parameter's shape and bit pattern.
    fn weight_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for &d in p.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Binds parameters as constants and runs a forward pass in `f32`.
    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::<f32>::new();
        let params = tape.bind(&self.params(), false)?;
        let xv = tape.constant(x.clone())?;
        let out = self.forward(&mut tape, &params, xv)?;
        Ok(tape.value(out).clone())
    }
}
