//! Layers: same-padded convolution (2D and 3D), transposed convolution,
//! max pooling and dense layers recorded on a [`Tape`]. Relu, softmax,
//! cross-entropy and the L1 distance live directly on the tape.

pub(crate) mod kernels;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use kernels::Volume;

/// Whether samples are `[3,H,W]` images or `[3,T,H,W]` videos.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Image,
    Video,
}

impl SampleKind {
    pub fn spatial_rank(self) -> usize {
        match self {
            SampleKind::Image => 2,
            SampleKind::Video => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            SampleKind::Image => 0,
            SampleKind::Video => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SampleKind::Image),
            1 => Some(SampleKind::Video),
            _ => None,
        }
    }
}

impl std::fmt::Display for SampleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SampleKind::Image => "image",
            SampleKind::Video => "video",
        })
    }
}

impl std::str::FromStr for SampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(SampleKind::Image),
            "video" => Ok(SampleKind::Video),
            other => Err(Error::InvalidArgument(format!("unknown sample kind {other:?}"))),
        }
    }
}

/// Kernel footprint of a same-padded convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKernel {
    /// (3,3) over `[C,H,W]`.
    Image,
    /// (3,3,3) over `[C,T,H,W]`.
    Video,
    /// (1,3,3) over `[C,T,H,W]`: each frame convolved independently.
    PerFrame,
}

impl ConvKernel {
    pub fn for_kind(kind: SampleKind) -> Self {
        match kind {
            SampleKind::Image => ConvKernel::Image,
            SampleKind::Video => ConvKernel::Video,
        }
    }

    /// `[kd, kh, kw]`
    pub fn dims(self) -> [usize; 3] {
        match self {
            ConvKernel::Image | ConvKernel::PerFrame => [1, 3, 3],
            ConvKernel::Video => [3, 3, 3],
        }
    }

    fn weight_shape(self, in_c: usize, out_c: usize) -> Vec<usize> {
        match self {
            ConvKernel::Image => vec![out_c, in_c, 3, 3],
            ConvKernel::Video => vec![out_c, in_c, 3, 3, 3],
            ConvKernel::PerFrame => vec![out_c, in_c, 1, 3, 3],
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ConvKernel::Image => 0,
            ConvKernel::Video => 1,
            ConvKernel::PerFrame => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ConvKernel::Image),
            1 => Some(ConvKernel::Video),
            2 => Some(ConvKernel::PerFrame),
            _ => None,
        }
    }
}

/// A same-padded, stride-1 convolution layer and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    kernel: ConvKernel,
    in_channels: usize,
    out_channels: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvSpec {
    pub fn zeros(kernel: ConvKernel, in_channels: usize, out_channels: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(Self {
            kernel,
            in_channels,
            out_channels,
            weight: Tensor::zeros(&kernel.weight_shape(in_channels, out_channels)),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    /// He-uniform weights, zero bias.
    pub fn random(kernel: ConvKernel, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut spec = Self::zeros(kernel, in_channels, out_channels)?;
        let fan_in = in_channels * kernel.dims().iter().product::<usize>();
        let bound = (6.0 / fan_in as f64).sqrt();
        spec.weight = Tensor::uniform(spec.weight.shape(), -bound, bound, rng);
        Ok(spec)
    }

    /// Rebuilds a layer from stored tensors, validating their shapes.
    pub fn from_parts(kernel: ConvKernel, weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out_c, in_c) = match weight.shape() {
            [o, i, ..] => (*o, *i),
            s => {
                return Err(Error::InvalidShape {
                    shape: s.to_vec(),
                    reason: "conv weight needs [out, in, kernel...]".into(),
                })
            }
        };
        let expected = kernel.weight_shape(in_c, out_c);
        if weight.shape() != expected.as_slice() || bias.shape() != [out_c] {
            return Err(Error::ShapeMismatch {
                op: "conv layer",
                lhs: weight.shape().to_vec(),
                rhs: expected,
            });
        }
        Ok(Self {
            kernel,
            in_channels: in_c,
            out_channels: out_c,
            weight,
            bias,
        })
    }

    pub fn kernel(&self) -> ConvKernel {
        self.kernel
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Center-tap delta weights and zero bias: the layer passes its input
/// through unchanged.
pub fn identity_init(spec: &ConvSpec) -> Result<ConvSpec> {
    if spec.in_channels != spec.out_channels {
        return Err(Error::InvalidArgument(format!(
            "identity init needs equal channel counts, got {} -> {}",
            spec.in_channels, spec.out_channels
        )));
    }
    let mut out = ConvSpec::zeros(spec.kernel, spec.in_channels, spec.out_channels)?;
    let [kd, kh, kw] = spec.kernel.dims();
    let center = ((kd / 2) * kh + kh / 2) * kw + kw / 2;
    let kn = kd * kh * kw;
    let c = spec.in_channels;
    for ch in 0..c {
        out.weight.data_mut()[(ch * c + ch) * kn + center] = 1.0;
    }
    Ok(out)
}

/// Applies a conv layer whose parameters are bound as constants.
pub fn conv_forward<R: Real>(spec: &ConvSpec, x: Var, tape: &mut Tape<R>) -> Result<Var> {
    let p = tape.bind(&spec.params(), false)?;
    tape.conv(x, p[0], p[1])
}

/// A transposed convolution (learnable upsampling) without padding.
#[derive(Clone, Debug, PartialEq)]
pub struct TransposedConvSpec {
    stride: [usize; 3],
    pub weight: Tensor,
    pub bias: Tensor,
}

impl TransposedConvSpec {
    /// `kernel == stride`, so each input element paints a disjoint block.
    pub fn random(kind: SampleKind, in_c: usize, out_c: usize, factor: usize, rng: &mut impl Rng) -> Result<Self> {
        if in_c == 0 || out_c == 0 || factor == 0 {
            return Err(Error::InvalidArgument("transposed conv sizes must be positive".into()));
        }
        let shape = match kind {
            SampleKind::Image => vec![in_c, out_c, factor, factor],
            SampleKind::Video => vec![in_c, out_c, 1, factor, factor],
        };
        let bound = (6.0 / in_c as f64).sqrt();
        Ok(Self {
            stride: [1, factor, factor],
            weight: Tensor::uniform(&shape, -bound, bound, rng),
            bias: Tensor::zeros(&[out_c]),
        })
    }

    pub fn from_parts(stride: [usize; 3], weight: Tensor, bias: Tensor) -> Result<Self> {
        let out_c = match weight.shape() {
            [_, o, _, _] | [_, o, _, _, _] => *o,
            s => {
                return Err(Error::InvalidShape {
                    shape: s.to_vec(),
                    reason: "transposed conv weight needs [in, out, kernel...]".into(),
                })
            }
        };
        if bias.shape() != [out_c] || stride.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "transposed conv layer",
                lhs: bias.shape().to_vec(),
                rhs: vec![out_c],
            });
        }
        Ok(Self { stride, weight, bias })
    }

    pub fn stride(&self) -> [usize; 3] {
        self.stride
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn volume_of(shape: &[usize], op: &'static str) -> Result<Volume> {
    Volume::from_shape(shape).ok_or_else(|| Error::InvalidShape {
        shape: shape.to_vec(),
        reason: format!("{op} expects [C,H,W] or [C,T,H,W]"),
    })
}

/// Kernel dims implied by a weight of shape `[a, b, k...]` applied to an input of rank `rank`.
fn kernel_of(weight: &[usize], rank: usize, op: &'static str) -> Result<[usize; 3]> {
    match (rank, weight) {
        (3, [_, _, kh, kw]) => Ok([1, *kh, *kw]),
        (4, [_, _, kd, kh, kw]) => Ok([*kd, *kh, *kw]),
        _ => Err(Error::InvalidShape {
            shape: weight.to_vec(),
            reason: format!("{op} weight rank does not match input rank {rank}"),
        }),
    }
}

impl<R: Real> Tape<R> {
    /// Same-padded stride-1 cross-correlation with zero padding.
    pub fn conv(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let vol = volume_of(&xs, "conv")?;
        let kernel = kernel_of(&ws, xs.len(), "conv")?;
        if kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidShape {
                shape: ws,
                reason: "same padding needs odd kernel dims".into(),
            });
        }
        let (out_c, in_c) = (ws[0], ws[1]);
        if in_c != vol.c {
            return Err(Error::ShapeMismatch {
                op: "conv channels",
                lhs: xs,
                rhs: ws,
            });
        }
        if self.value(bias).shape() != [out_c] {
            return Err(Error::ShapeMismatch {
                op: "conv bias",
                lhs: self.value(bias).shape().to_vec(),
                rhs: vec![out_c],
            });
        }
        let data = kernels::conv_forward(
            self.value(x).data(),
            vol,
            self.value(weight).data(),
            self.value(bias).data(),
            out_c,
            kernel,
        );
        let out_vol = Volume { c: out_c, ..vol };
        let value = Tensor::from_parts(out_vol.shape(xs.len()), data);
        self.push(value, Op::Conv { input: x, weight, bias, vol, kernel }, "conv", &[x, weight, bias])
    }

    /// Transposed convolution without padding; weight `[C_in, C_out, k...]`.
    pub fn conv_transpose(&mut self, x: Var, weight: Var, bias: Var, stride: [usize; 3]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let vol = volume_of(&xs, "conv_transpose")?;
        let kernel = kernel_of(&ws, xs.len(), "conv_transpose")?;
        if xs.len() == 3 && stride[0] != 1 {
            return Err(Error::InvalidArgument("image transposed conv needs depth stride 1".into()));
        }
        let (in_c, out_c) = (ws[0], ws[1]);
        if in_c != vol.c || self.value(bias).shape() != [out_c] {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose channels",
                lhs: xs,
                rhs: ws,
            });
        }
        let data = kernels::conv_transpose_forward(
            self.value(x).data(),
            vol,
            self.value(weight).data(),
            self.value(bias).data(),
            out_c,
            kernel,
            stride,
        );
        let ov = kernels::conv_transpose_out(vol, out_c, kernel, stride);
        let value = Tensor::from_parts(ov.shape(xs.len()), data);
        self.push(
            value,
            Op::ConvTranspose { input: x, weight, bias, vol, kernel, stride },
            "conv_transpose",
            &[x, weight, bias],
        )
    }

    /// Non-overlapping max pooling over the spatial dims; `window` has one
    /// entry per spatial dim.
    pub fn maxpool(&mut self, x: Var, window: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let vol = volume_of(&xs, "maxpool")?;
        let win = match (xs.len(), window) {
            (3, [h, w]) => [1, *h, *w],
            (4, [d, h, w]) => [*d, *h, *w],
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "pool window {window:?} does not match input shape {xs:?}"
                )))
            }
        };
        if win.contains(&0) || win[0] > vol.d || win[1] > vol.h || win[2] > vol.w {
            return Err(Error::InvalidArgument(format!(
                "pool window {window:?} exceeds spatial dims of {xs:?}"
            )));
        }
        let (data, argmax, ov) = kernels::maxpool_forward(self.value(x).data(), vol, win);
        let value = Tensor::from_parts(ov.shape(xs.len()), data);
        self.push(value, Op::MaxPool { input: x, argmax }, "maxpool", &[x])
    }

    /// `W · flatten(x) + b` with `W` shaped `[out, in]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let ws = self.value(weight).shape().to_vec();
        if ws.len() != 2 || ws[1] != n || self.value(bias).shape() != [ws[0]] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: self.value(x).shape().to_vec(),
                rhs: ws,
            });
        }
        let data = kernels::dense_forward(self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let value = Tensor::from_parts(vec![ws[0]], data);
        self.push(value, Op::Dense { input: x, weight, bias }, "dense", &[x, weight, bias])
    }
}
