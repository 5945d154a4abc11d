//! Wavelet compression of difference maps and the reconstruction network
//! that maps the decompressed signal back towards the original sample.

mod wavelet;

pub use wavelet::{threshold_coeffs, wavelet_forward, wavelet_inverse, ThresholdPolicy, WaveletCoeffs};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::codec::{put_shape, put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::models::{Model, ReconstructorR};
use crate::nn::SampleKind;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SWC1";
const FORMAT: &str = "SWC1";

/// `SWC1`, `u32` rank and dims, `u8` levels, `u32` entry count, then
/// `(u32 index, f32 value)` pairs; little-endian.
pub fn encode(c: &WaveletCoeffs) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 4 * c.shape().len() + 8 * c.entries().len());
    out.extend_from_slice(MAGIC);
    put_shape(&mut out, c.shape());
    out.push(c.levels() as u8);
    put_u32(&mut out, c.entries().len() as u32);
    for &(i, v) in c.entries() {
        put_u32(&mut out, i);
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<WaveletCoeffs> {
    let mut r = ByteReader::new(bytes, FORMAT);
    r.expect_magic(MAGIC)?;
    let shape = r.shape()?;
    let levels = r.u8("levels")? as usize;
    let count = r.u32("entry count")? as usize;
    let entries_at = r.offset();
    if count.saturating_mul(8) > bytes.len() {
        return Err(r.error(format!("truncated entries: {count} entries declared")));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let i = r.u32("entry index")?;
        let v = r.f32("entry value")?;
        entries.push((i, v));
    }
    r.finish()?;
    WaveletCoeffs::new(shape, levels, entries).map_err(|e| Error::format(FORMAT, entries_at, e.to_string()))
}

pub fn save_coeffs(c: &WaveletCoeffs, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(c)).map_err(|e| Error::io(path, e))
}

pub fn load_coeffs(path: impl AsRef<Path>) -> Result<WaveletCoeffs> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// `W⁻¹(T(W(δ)))`: the signal the reconstructor receives.
pub fn compress_roundtrip(delta: &Tensor, levels: usize, policy: ThresholdPolicy) -> Result<(WaveletCoeffs, Tensor)> {
    let omega = threshold_coeffs(&wavelet_forward(delta, levels)?, policy)?;
    let gamma = wavelet_inverse(&omega)?;
    Ok((omega, gamma))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructorConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Weight of the mean absolute change between adjacent output frames
    /// (video only).
    pub frame_penalty: f64,
    /// Share of pairs held out for validation, ignored when `overfit` is set.
    pub validation_fraction: f64,
    /// Train on every pair, memorizing the training content.
    pub overfit: bool,
    pub seed: u64,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            adam: AdamConfig::with_lr(3e-3),
            frame_penalty: 0.1,
            validation_fraction: 0.2,
            overfit: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructorReport {
    /// Mean training objective per epoch.
    pub train_loss: Vec<f64>,
    /// Mean squared error on held-out pairs per epoch (empty when none are held out).
    pub validation_mse: Vec<f64>,
    pub train_pairs: usize,
    pub validation_pairs: usize,
}

fn sample_loss(
    r: &ReconstructorR,
    gamma: &Tensor,
    target: &Tensor,
    frame_penalty: f64,
    grads_into: Option<&mut [Tensor]>,
) -> Result<f64> {
    let mut tape = Tape::<f32>::new();
    let params = tape.bind(&r.params(), grads_into.is_some())?;
    let g = tape.constant(gamma.clone())?;
    let t = tape.constant(target.clone())?;
    let out = r.forward(&mut tape, &params, g)?;
    let mut loss = tape.mse(out, t)?;
    if frame_penalty > 0.0 && r.kind() == SampleKind::Video && target.shape()[1] >= 2 {
        let fd = tape.frame_diff_l1(out)?;
        let fd = tape.scale(fd, frame_penalty)?;
        loss = tape.add(loss, fd)?;
    }
    let value = tape.value(loss).item()? as f64;
    if let Some(acc) = grads_into {
        let grads = tape.backward(loss)?;
        for (a, &p) in acc.iter_mut().zip(&params) {
            for (av, &gv) in a.data_mut().iter_mut().zip(grads.expect(p)?.data()) {
                *av += gv;
            }
        }
    }
    Ok(value)
}

/// Full-batch Adam on `mse(R(γ), X) [+ β·frame_diff_l1(R(γ))]` over `(γ, X)` pairs.
pub fn train_reconstructor(
    r: &mut ReconstructorR,
    pairs: &[(Tensor, Tensor)],
    config: &ReconstructorConfig,
) -> Result<ReconstructorReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if !(config.frame_penalty >= 0.0) {
        return Err(Error::InvalidArgument("frame penalty must be non-negative".into()));
    }
    for (g, x) in pairs {
        g.expect_same_shape(x, "train_reconstructor")?;
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let n_val = if config.overfit {
        0
    } else {
        ((config.validation_fraction * pairs.len() as f64).round() as usize).min(pairs.len() - 1)
    };
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let (val, train) = order.split_at(n_val);
    let mut report = ReconstructorReport {
        train_pairs: train.len(),
        validation_pairs: val.len(),
        ..ReconstructorReport::default()
    };
    let mut adam = AdamState::new(config.adam);
    for _ in 0..config.epochs {
        let mut acc: Vec<Tensor> = r.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut total = 0.0;
        for &i in train {
            let (g, x) = &pairs[i];
            total += sample_loss(r, g, x, config.frame_penalty, Some(&mut acc))?;
        }
        let inv = 1.0 / train.len() as f32;
        acc.iter_mut().for_each(|a| a.data_mut().iter_mut().for_each(|v| *v *= inv));
        let grads: Vec<&Tensor> = acc.iter().collect();
        adam.adam_step(&mut r.params_mut(), &grads)?;
        report.train_loss.push(total / train.len() as f64);
        if !val.is_empty() {
            let mut v = 0.0;
            for &i in val {
                let (g, x) = &pairs[i];
                v += sample_loss(r, g, x, 0.0, None)?;
            }
            report.validation_mse.push(v / val.len() as f64);
        }
    }
    Ok(report)
}

/// `χ = R(W⁻¹(ω))`
pub fn reconstruct(omega: &WaveletCoeffs, r: &ReconstructorR) -> Result<Tensor> {
    if omega.shape().len() != r.kind().spatial_rank() + 1 {
        return Err(Error::ShapeMismatch {
            op: "reconstruct",
            lhs: omega.shape().to_vec(),
            rhs: vec![3; r.kind().spatial_rank() + 1],
        });
    }
    r.infer(&wavelet_inverse(omega)?)
}

pub fn mean_squared_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "mean_squared_error")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.numel() as f64)
}

/// Mean squared change between adjacent frames of a `[C,T,H,W]` video.
pub fn frame_difference_energy(video: &Tensor) -> Result<f64> {
    let [c, t, h, w] = match *video.shape() {
        [c, t, h, w] if t >= 2 => [c, t, h, w],
        _ => {
            return Err(Error::InvalidShape {
                shape: video.shape().to_vec(),
                reason: "need a [C,T,H,W] video with at least two frames".into(),
            })
        }
    };
    let plane = h * w;
    let d = video.data();
    let mut total = 0.0;
    for ch in 0..c {
        for f in 0..t - 1 {
            let a = &d[(ch * t + f) * plane..(ch * t + f + 1) * plane];
            let b = &d[(ch * t + f + 1) * plane..(ch * t + f + 2) * plane];
            total += a.iter().zip(b).map(|(&x, &y)| (y as f64 - x as f64).powi(2)).sum::<f64>();
        }
    }
    Ok(total / (c * (t - 1) * plane) as f64)
}
