use rand::Rng;

use super::Model;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{ConvKernel, ConvSpec, SampleKind};
use crate::tensor::{Real, Tensor};

pub const MIN_CLASSES: usize = 8;

/// Reference classifier: conv(3→8) relu pool2, conv(8→16) relu pool2, dense,
/// softmax. Video inputs use (3,3,3) kernels and (2,2,2) pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierM {
    kind: SampleKind,
    input_shape: Vec<usize>,
    pub(crate) conv1: ConvSpec,
    pub(crate) conv2: ConvSpec,
    pub(crate) dense_w: Tensor,
    pub(crate) dense_b: Tensor,
    frozen: bool,
}

fn validate_input_shape(kind: SampleKind, shape: &[usize]) -> Result<()> {
    let ok = match (kind, shape) {
        (SampleKind::Image, [3, h, w]) => h % 4 == 0 && w % 4 == 0,
        (SampleKind::Video, [3, t, h, w]) => t % 4 == 0 && h % 4 == 0 && w % 4 == 0,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("{kind} classifier needs 3 channels and spatial dims divisible by 4"),
        })
    }
}

fn pool_window(kind: SampleKind) -> &'static [usize] {
    match kind {
        SampleKind::Image => &[2, 2],
        SampleKind::Video => &[2, 2, 2],
    }
}

impl ClassifierM {
    pub fn new(kind: SampleKind, input_shape: &[usize], classes: usize, rng: &mut impl Rng) -> Result<Self> {
        validate_input_shape(kind, input_shape)?;
        if classes < MIN_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "classifier needs at least {MIN_CLASSES} classes, got {classes}"
            )));
        }
        let kernel = ConvKernel::for_kind(kind);
        let conv1 = ConvSpec::random(kernel, 3, 8, rng)?;
        let conv2 = ConvSpec::random(kernel, 8, 16, rng)?;
        let features = 16 * input_shape[1..].iter().map(|d| d / 4).product::<usize>();
        let bound = (1.0 / features as f64).sqrt();
        Ok(Self {
            kind,
            input_shape: input_shape.to_vec(),
            conv1,
            conv2,
            dense_w: Tensor::uniform(&[classes, features], -bound, bound, rng),
            dense_b: Tensor::zeros(&[classes]),
            frozen: false,
        })
    }

    pub(crate) fn from_parts(
        kind: SampleKind,
        input_shape: &[usize],
        conv1: ConvSpec,
        conv2: ConvSpec,
        dense_w: Tensor,
        dense_b: Tensor,
    ) -> Result<Self> {
        validate_input_shape(kind, input_shape)?;
        let kernel = ConvKernel::for_kind(kind);
        let features = 16 * input_shape[1..].iter().map(|d| d / 4).product::<usize>();
        let ok = conv1.kernel() == kernel
            && conv2.kernel() == kernel
            && conv1.in_channels() == 3
            && conv1.out_channels() == 8
            && conv2.in_channels() == 8
            && conv2.out_channels() == 16
            && dense_w.rank() == 2
            && dense_w.shape()[1] == features
            && dense_b.shape() == [dense_w.shape()[0]]
            && dense_w.shape()[0] >= MIN_CLASSES;
        if !ok {
            return Err(Error::InvalidArgument("classifier layers do not fit together".into()));
        }
        Ok(Self {
            kind,
            input_shape: input_shape.to_vec(),
            conv1,
            conv2,
            dense_w,
            dense_b,
            frozen: false,
        })
    }

    pub fn kind(&self) -> SampleKind {
        self.kind
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.dense_b.numel()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Class probabilities `y = M(x)`.
    pub fn classifier_forward<R: Real>(&self, tape: &mut Tape<R>, params: &[Var], x: Var) -> Result<Var> {
        self.forward(tape, params, x)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.infer(x)
    }
}

impl Model for ClassifierM {
    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }

    fn forward<R: Real>(&self, tape: &mut Tape<R>, params: &[Var], x: Var) -> Result<Var> {
        if tape.value(x).shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "classifier input",
                lhs: tape.value(x).shape().to_vec(),
                rhs: self.input_shape.clone(),
            });
        }
        let window = pool_window(self.kind);
        let h = tape.conv(x, params[0], params[1])?;
        let h = tape.relu(h)?;
        let h = tape.maxpool(h, window)?;
        let h = tape.conv(h, params[2], params[3])?;
        let h = tape.relu(h)?;
        let h = tape.maxpool(h, window)?;
        let logits = tape.dense(h, params[4], params[5])?;
        tape.softmax(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn scores_form_a_simplex() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let m = ClassifierM::new(SampleKind::Image, &[3, 16, 16], 8, &mut rng).unwrap();
        let x = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[8]);
        assert!((y.sum_f64() - 1.0).abs() < 1e-6);
        assert!(y.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let m = ClassifierM::new(SampleKind::Image, &[3, 16, 16], 8, &mut rng).unwrap();
        assert!(matches!(
            m.predict(&Tensor::zeros(&[3, 8, 8])),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(ClassifierM::new(SampleKind::Image, &[3, 16, 16], 4, &mut rng).is_err());
        assert!(ClassifierM::new(SampleKind::Video, &[3, 16, 16], 8, &mut rng).is_err());
    }

    #[test]
    fn untrained_scores_are_spread_out() {
        // empirical: random init should not be confident
        let mut confident = 0;
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = ClassifierM::new(SampleKind::Image, &[3, 32, 32], 8, &mut rng).unwrap();
            let x = Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
            let y = m.predict(&x).unwrap();
            if y.max_abs() >= 0.5 {
                confident += 1;
            }
        }
        assert!(confident <= 5, "{confident} of 100 random classifiers exceeded 0.5");
    }
}
