//! Orthonormal multi-level 2D Haar transform, applied to every `[H,W]`
//! plane (each channel, and each frame of a video).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_LEVELS: usize = 16;

/// Sparse wavelet coefficients of a tensor. Indices address the padded
/// coefficient array `[.., Hp, Wp]` in row-major order, where `Hp` and `Wp`
/// are the plane dims rounded up to a multiple of `2^levels`. Each plane uses
/// the usual pyramid layout: the coarsest approximation sits in the top-left
/// corner, detail bands to its right and below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletCoeffs {
    shape: Vec<usize>,
    levels: usize,
    /// `(flat index, value)`, strictly increasing by index.
    entries: Vec<(u32, f32)>,
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 || levels > MAX_LEVELS {
        return Err(Error::InvalidArgument(format!(
            "levels must be in 1..={MAX_LEVELS}, got {levels}"
        )));
    }
    Ok(())
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "wavelet transform needs at least two positive dims".into(),
        });
    }
    Ok(())
}

/// `(plane count, padded height, padded width)`
fn padded_layout(shape: &[usize], levels: usize) -> (usize, usize, usize) {
    let r = shape.len();
    let block = 1usize << levels;
    let planes = shape[..r - 2].iter().product();
    (planes, shape[r - 2].div_ceil(block) * block, shape[r - 1].div_ceil(block) * block)
}

impl WaveletCoeffs {
    /// Validates and builds coefficients; entries must be strictly increasing
    /// by index and inside the padded coefficient array.
    pub fn new(shape: Vec<usize>, levels: usize, entries: Vec<(u32, f32)>) -> Result<Self> {
        check_shape(&shape)?;
        check_levels(levels)?;
        let out = Self { shape, levels, entries };
        let len = out.coefficient_count();
        let mut prev: Option<u32> = None;
        for &(i, v) in &out.entries {
            if i as usize >= len {
                return Err(Error::InvalidArgument(format!("coefficient index {i} out of range {len}")));
            }
            if prev.is_some_and(|p| p >= i) {
                return Err(Error::InvalidArgument(format!("coefficient index {i} not strictly increasing")));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite { op: "wavelet coefficients" });
            }
            prev = Some(i);
        }
        Ok(out)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    /// Size of the padded coefficient array.
    pub fn coefficient_count(&self) -> usize {
        let (p, h, w) = padded_layout(&self.shape, self.levels);
        p * h * w
    }

    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| (v as f64).powi(2)).sum()
    }

    fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.coefficient_count()];
        for &(i, v) in &self.entries {
            out[i as usize] = v as f64;
        }
        out
    }
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One analysis step on `n` values spaced `stride` apart.
fn haar_step(data: &mut [f64], start: usize, stride: usize, n: usize, scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend((0..n).map(|k| data[start + k * stride]));
    let half = n / 2;
    for k in 0..half {
        let (a, b) = (scratch[2 * k], scratch[2 * k + 1]);
        data[start + k * stride] = (a + b) * SQRT_HALF;
        data[start + (half + k) * stride] = (a - b) * SQRT_HALF;
    }
}

fn haar_step_inverse(data: &mut [f64], start: usize, stride: usize, n: usize, scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend((0..n).map(|k| data[start + k * stride]));
    let half = n / 2;
    for k in 0..half {
        let (s, d) = (scratch[k], scratch[half + k]);
        data[start + 2 * k * stride] = (s + d) * SQRT_HALF;
        data[start + (2 * k + 1) * stride] = (s - d) * SQRT_HALF;
    }
}

fn forward_plane(plane: &mut [f64], h: usize, w: usize, levels: usize) {
    let mut scratch = Vec::with_capacity(h.max(w));
    let (mut ch, mut cw) = (h, w);
    for _ in 0..levels {
        for y in 0..ch {
            haar_step(plane, y * w, 1, cw, &mut scratch);
        }
        for x in 0..cw {
            haar_step(plane, x, w, ch, &mut scratch);
        }
        ch /= 2;
        cw /= 2;
    }
}

fn inverse_plane(plane: &mut [f64], h: usize, w: usize, levels: usize) {
    let mut scratch = Vec::with_capacity(h.max(w));
    for level in (0..levels).rev() {
        let (ch, cw) = (h >> level, w >> level);
        for x in 0..cw {
            haar_step_inverse(plane, x, w, ch, &mut scratch);
        }
        for y in 0..ch {
            haar_step_inverse(plane, y * w, 1, cw, &mut scratch);
        }
    }
}

/// Forward transform keeping every coefficient (including zeros). Plane dims
/// that are not multiples of `2^levels` are zero-padded.
pub fn wavelet_forward(x: &Tensor, levels: usize) -> Result<WaveletCoeffs> {
    check_shape(x.shape())?;
    check_levels(levels)?;
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let (planes, hp, wp) = padded_layout(x.shape(), levels);
    let mut dense = vec![0.0f64; planes * hp * wp];
    for p in 0..planes {
        let dst = &mut dense[p * hp * wp..(p + 1) * hp * wp];
        for y in 0..h {
            for (xx, &v) in x.data()[(p * h + y) * w..(p * h + y + 1) * w].iter().enumerate() {
                dst[y * wp + xx] = v as f64;
            }
        }
        forward_plane(dst, hp, wp, levels);
    }
    let entries = dense.iter().enumerate().map(|(i, &v)| (i as u32, v as f32)).collect();
    Ok(WaveletCoeffs {
        shape: x.shape().to_vec(),
        levels,
        entries,
    })
}

/// Inverse transform with the padding cropped away.
pub fn wavelet_inverse(c: &WaveletCoeffs) -> Result<Tensor> {
    let shape = c.shape();
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let (planes, hp, wp) = padded_layout(shape, c.levels);
    let mut dense = c.dense();
    let mut out = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        let plane = &mut dense[p * hp * wp..(p + 1) * hp * wp];
        inverse_plane(plane, hp, wp, c.levels);
        for y in 0..h {
            out.extend(plane[y * wp..y * wp + w].iter().map(|&v| v as f32));
        }
    }
    Tensor::new(shape.to_vec(), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "value", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Keep the `⌈f·N⌉` largest magnitudes of the `N` coefficients.
    KeepTopFraction(f64),
    /// Keep coefficients with `|v| ≥ τ`.
    Absolute(f64),
}

pub fn threshold_coeffs(c: &WaveletCoeffs, policy: ThresholdPolicy) -> Result<WaveletCoeffs> {
    let entries = match policy {
        ThresholdPolicy::KeepTopFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!("keep fraction must be in (0,1], got {f}")));
            }
            // the small slack keeps products like 0.07 × 100 from rounding up
            let keep = ((f * c.coefficient_count() as f64 - 1e-9).ceil() as usize).min(c.entries.len());
            let mut order: Vec<usize> = (0..c.entries.len()).collect();
            order.sort_by(|&a, &b| {
                let (ia, va) = c.entries[a];
                let (ib, vb) = c.entries[b];
                vb.abs().total_cmp(&va.abs()).then(ia.cmp(&ib))
            });
            let mut kept: Vec<(u32, f32)> = order[..keep].iter().map(|&k| c.entries[k]).collect();
            kept.sort_by_key(|&(i, _)| i);
            kept
        }
        ThresholdPolicy::Absolute(tau) => {
            if !(tau >= 0.0) {
                return Err(Error::InvalidArgument(format!("threshold must be non-negative, got {tau}")));
            }
            c.entries.iter().copied().filter(|&(_, v)| v.abs() as f64 >= tau).collect()
        }
    };
    Ok(WaveletCoeffs {
        shape: c.shape.clone(),
        levels: c.levels,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Orthonormal one-level Haar analysis matrix for length `n`.
    fn haar_matrix(n: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n]; n];
        for k in 0..n / 2 {
            m[k][2 * k] = SQRT_HALF;
            m[k][2 * k + 1] = SQRT_HALF;
            m[n / 2 + k][2 * k] = SQRT_HALF;
            m[n / 2 + k][2 * k + 1] = -SQRT_HALF;
        }
        m
    }

    #[test]
    fn single_level_matches_matrix_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[4, 6], -1.0, 1.0, &mut rng);
        let c = wavelet_forward(&x, 1).unwrap();
        // A X Bᵀ with A, B the row/column analysis matrices
        let (a, b) = (haar_matrix(4), haar_matrix(6));
        let xv = |i: usize, j: usize| x.data()[i * 6 + j] as f64;
        for i in 0..4 {
            for j in 0..6 {
                let mut expected = 0.0;
                for p in 0..4 {
                    for q in 0..6 {
                        expected += a[i][p] * xv(p, q) * b[j][q];
                    }
                }
                let got = c.entries()[i * 6 + j].1 as f64;
                assert!((got - expected).abs() < 1e-6, "({i},{j}) {got} vs {expected}");
            }
        }
    }

    #[test]
    fn constant_image_has_one_coefficient() {
        let x = Tensor::full(&[4, 4], 0.75f32);
        let c = wavelet_forward(&x, 2).unwrap();
        assert!((c.entries()[0].1 - 3.0).abs() < 1e-6);
        assert!(c.entries()[1..].iter().all(|&(_, v)| v.abs() < 1e-6));
    }

    #[test]
    fn zero_in_zero_out() {
        let c = wavelet_forward(&Tensor::zeros(&[3, 8, 8]), 3).unwrap();
        assert!(c.entries().iter().all(|&(_, v)| v == 0.0));
        let empty = WaveletCoeffs::new(vec![3, 8, 8], 3, Vec::new()).unwrap();
        assert_eq!(wavelet_inverse(&empty).unwrap(), Tensor::zeros(&[3, 8, 8]));
    }

    #[test]
    fn parseval_and_round_trip_with_padding() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for shape in [vec![8, 8], vec![3, 32, 32], vec![3, 5, 7], vec![2, 3, 9, 6]] {
            let x = Tensor::uniform(&shape, -1.0, 1.0, &mut rng);
            let c = wavelet_forward(&x, 2).unwrap();
            let ex: f64 = x.data().iter().map(|&v| (v as f64).powi(2)).sum();
            assert!((c.energy() - ex).abs() / ex < 1e-4);
            let back = wavelet_inverse(&c).unwrap();
            assert!(back.sub(&x).unwrap().max_abs() < 1e-5);
        }
    }

    #[test]
    fn thresholds() {
        let c = WaveletCoeffs::new(vec![2, 2], 1, vec![(0, 5.0), (1, -3.0), (2, 1.0), (3, 0.5)]).unwrap();
        let half = threshold_coeffs(&c, ThresholdPolicy::KeepTopFraction(0.5)).unwrap();
        assert_eq!(half.entries(), &[(0, 5.0), (1, -3.0)]);
        assert_eq!(threshold_coeffs(&c, ThresholdPolicy::KeepTopFraction(1.0)).unwrap(), c);
        assert!(threshold_coeffs(&c, ThresholdPolicy::Absolute(6.0)).unwrap().entries().is_empty());
        assert_eq!(
            threshold_coeffs(&c, ThresholdPolicy::Absolute(1.0)).unwrap().entries(),
            &[(0, 5.0), (1, -3.0), (2, 1.0)]
        );
        let ties = WaveletCoeffs::new(vec![2, 2], 1, vec![(0, 1.0), (1, -2.0), (2, 2.0), (3, 1.0)]).unwrap();
        let kept = threshold_coeffs(&ties, ThresholdPolicy::KeepTopFraction(0.25)).unwrap();
        assert_eq!(kept.entries(), &[(1, -2.0)]);
        assert!(threshold_coeffs(&c, ThresholdPolicy::KeepTopFraction(0.0)).is_err());
        assert!(threshold_coeffs(&c, ThresholdPolicy::Absolute(-1.0)).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(wavelet_forward(&Tensor::zeros(&[4, 4]), 0).is_err());
        assert!(wavelet_forward(&Tensor::zeros(&[4]), 1).is_err());
        assert!(WaveletCoeffs::new(vec![2, 2], 1, vec![(4, 1.0)]).is_err());
        assert!(WaveletCoeffs::new(vec![2, 2], 1, vec![(1, 1.0), (1, 2.0)]).is_err());
    }
}
