//! Slice-level forward/backward kernels.
//!
//! Images `[C,H,W]` are handled as volumes with depth 1, so one set of loops
//! covers 2D and 3D convolution and pooling. Inner loops run over contiguous
//! row segments so they vectorize.

use crate::tensor::Real;

/// Channel-major spatial volume; a `[C,H,W]` image has `depth == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Volume {
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Volume {
    pub(crate) fn from_shape(shape: &[usize]) -> Option<Self> {
        match *shape {
            [c, h, w] => Some(Self { c, d: 1, h, w }),
            [c, d, h, w] => Some(Self { c, d, h, w }),
            _ => None,
        }
    }

    pub(crate) fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    /// Shape with the same rank convention as the input (`rank` 3 or 4).
    pub(crate) fn shape(&self, rank: usize) -> Vec<usize> {
        if rank == 3 {
            vec![self.c, self.h, self.w]
        } else {
            vec![self.c, self.d, self.h, self.w]
        }
    }
}

/// Range of output positions for which `pos + k - pad` stays inside `[0, n)`.
#[inline]
fn valid(n: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (n + pad).saturating_sub(k).min(n);
    (lo, hi.max(lo))
}

/// Same-padded stride-1 cross-correlation. Weight layout `[O, C, kd, kh, kw]`.
pub(crate) fn conv_forward<R: Real>(
    input: &[R],
    vol: Volume,
    weight: &[R],
    bias: &[R],
    out_c: usize,
    k: [usize; 3],
) -> Vec<R> {
    let s = vol.spatial();
    let (hh, ww) = (vol.h, vol.w);
    let pad = [k[0] / 2, k[1] / 2, k[2] / 2];
    let mut out = vec![R::zero(); out_c * s];
    for o in 0..out_c {
        let out_o = &mut out[o * s..(o + 1) * s];
        out_o.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..vol.c {
            let in_i = &input[i * s..(i + 1) * s];
            for dz in 0..k[0] {
                let (z0, z1) = valid(vol.d, pad[0], dz);
                for dy in 0..k[1] {
                    let (y0, y1) = valid(hh, pad[1], dy);
                    for dx in 0..k[2] {
                        let (x0, x1) = valid(ww, pad[2], dx);
                        let w = weight[(((o * vol.c + i) * k[0] + dz) * k[1] + dy) * k[2] + dx];
                        for z in z0..z1 {
                            let iz = z + dz - pad[0];
                            for y in y0..y1 {
                                let iy = y + dy - pad[1];
                                let orow = &mut out_o[(z * hh + y) * ww + x0..(z * hh + y) * ww + x1];
                                let start = (iz * hh + iy) * ww + x0 + dx - pad[2];
                                let irow = &in_i[start..start + (x1 - x0)];
                                for (a, &b) in orow.iter_mut().zip(irow) {
                                    *a = *a + w * b;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_backward_input<R: Real>(
    grad_out: &[R],
    vol: Volume,
    weight: &[R],
    out_c: usize,
    k: [usize; 3],
) -> Vec<R> {
    let s = vol.spatial();
    let (hh, ww) = (vol.h, vol.w);
    let pad = [k[0] / 2, k[1] / 2, k[2] / 2];
    let mut gin = vec![R::zero(); vol.c * s];
    for i in 0..vol.c {
        let gin_i = &mut gin[i * s..(i + 1) * s];
        for o in 0..out_c {
            let g_o = &grad_out[o * s..(o + 1) * s];
            for dz in 0..k[0] {
                let (z0, z1) = valid(vol.d, pad[0], dz);
                for dy in 0..k[1] {
                    let (y0, y1) = valid(hh, pad[1], dy);
                    for dx in 0..k[2] {
                        let (x0, x1) = valid(ww, pad[2], dx);
                        let w = weight[(((o * vol.c + i) * k[0] + dz) * k[1] + dy) * k[2] + dx];
                        for z in z0..z1 {
                            let iz = z + dz - pad[0];
                            for y in y0..y1 {
                                let iy = y + dy - pad[1];
                                let grow = &g_o[(z * hh + y) * ww + x0..(z * hh + y) * ww + x1];
                                let start = (iz * hh + iy) * ww + x0 + dx - pad[2];
                                let irow = &mut gin_i[start..start + (x1 - x0)];
                                for (a, &b) in irow.iter_mut().zip(grow) {
                                    *a = *a + w * b;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Returns (weight gradient, bias gradient).
pub(crate) fn conv_backward_params<R: Real>(
    grad_out: &[R],
    input: &[R],
    vol: Volume,
    out_c: usize,
    k: [usize; 3],
) -> (Vec<R>, Vec<R>) {
    let s = vol.spatial();
    let (hh, ww) = (vol.h, vol.w);
    let pad = [k[0] / 2, k[1] / 2, k[2] / 2];
    let kn = k[0] * k[1] * k[2];
    let mut gw = vec![R::zero(); out_c * vol.c * kn];
    let mut gb = vec![R::zero(); out_c];
    for o in 0..out_c {
        let g_o = &grad_out[o * s..(o + 1) * s];
        gb[o] = R::of(g_o.iter().map(|v| v.f64()).sum());
        for i in 0..vol.c {
            let in_i = &input[i * s..(i + 1) * s];
            for dz in 0..k[0] {
                let (z0, z1) = valid(vol.d, pad[0], dz);
                for dy in 0..k[1] {
                    let (y0, y1) = valid(hh, pad[1], dy);
                    for dx in 0..k[2] {
                        let (x0, x1) = valid(ww, pad[2], dx);
                        let mut acc = 0.0f64;
                        for z in z0..z1 {
                            let iz = z + dz - pad[0];
                            for y in y0..y1 {
                                let iy = y + dy - pad[1];
                                let grow = &g_o[(z * hh + y) * ww + x0..(z * hh + y) * ww + x1];
                                let start = (iz * hh + iy) * ww + x0 + dx - pad[2];
                                let irow = &in_i[start..start + (x1 - x0)];
                                let mut row = R::zero();
                                for (&a, &b) in grow.iter().zip(irow) {
                                    row = row + a * b;
                                }
                                acc += row.f64();
                            }
                        }
                        gw[(((o * vol.c + i) * k[0] + dz) * k[1] + dy) * k[2] + dx] = R::of(acc);
                    }
                }
            }
        }
    }
    (gw, gb)
}

/// Output volume of a transposed convolution without padding.
pub(crate) fn conv_transpose_out(vol: Volume, out_c: usize, k: [usize; 3], stride: [usize; 3]) -> Volume {
    Volume {
        c: out_c,
        d: (vol.d - 1) * stride[0] + k[0],
        h: (vol.h - 1) * stride[1] + k[1],
        w: (vol.w - 1) * stride[2] + k[2],
    }
}

/// Transposed convolution. Weight layout `[C_in, O, kd, kh, kw]`.
pub(crate) fn conv_transpose_forward<R: Real>(
    input: &[R],
    vol: Volume,
    weight: &[R],
    bias: &[R],
    out_c: usize,
    k: [usize; 3],
    stride: [usize; 3],
) -> Vec<R> {
    let ov = conv_transpose_out(vol, out_c, k, stride);
    let (s, os) = (vol.spatial(), ov.spatial());
    let kn = k[0] * k[1] * k[2];
    let mut out = vec![R::zero(); out_c * os];
    for o in 0..out_c {
        out[o * os..(o + 1) * os].iter_mut().for_each(|v| *v = bias[o]);
    }
    for i in 0..vol.c {
        let in_i = &input[i * s..(i + 1) * s];
        for o in 0..out_c {
            let out_o = &mut out[o * os..(o + 1) * os];
            let wbase = (i * out_c + o) * kn;
            for z in 0..vol.d {
                for y in 0..vol.h {
                    for x in 0..vol.w {
                        let v = in_i[(z * vol.h + y) * vol.w + x];
                        for dz in 0..k[0] {
                            for dy in 0..k[1] {
                                let orow = ((z * stride[0] + dz) * ov.h + y * stride[1] + dy) * ov.w
                                    + x * stride[2];
                                let wrow = wbase + (dz * k[1] + dy) * k[2];
                                for dx in 0..k[2] {
                                    out_o[orow + dx] = out_o[orow + dx] + weight[wrow + dx] * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (input gradient, weight gradient, bias gradient), each optional.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose_backward<R: Real>(
    grad_out: &[R],
    input: &[R],
    vol: Volume,
    weight: &[R],
    out_c: usize,
    k: [usize; 3],
    stride: [usize; 3],
    want_input: bool,
    want_params: bool,
) -> (Option<Vec<R>>, Option<Vec<R>>, Option<Vec<R>>) {
    let ov = conv_transpose_out(vol, out_c, k, stride);
    let (s, os) = (vol.spatial(), ov.spatial());
    let kn = k[0] * k[1] * k[2];
    let mut gin = want_input.then(|| vec![R::zero(); vol.c * s]);
    let mut gw = want_params.then(|| vec![0.0f64; vol.c * out_c * kn]);
    for i in 0..vol.c {
        let in_i = &input[i * s..(i + 1) * s];
        for o in 0..out_c {
            let g_o = &grad_out[o * os..(o + 1) * os];
            let wbase = (i * out_c + o) * kn;
            for z in 0..vol.d {
                for y in 0..vol.h {
                    for x in 0..vol.w {
                        let at = (z * vol.h + y) * vol.w + x;
                        let v = in_i[at];
                        let mut acc = R::zero();
                        for dz in 0..k[0] {
                            for dy in 0..k[1] {
                                let orow = ((z * stride[0] + dz) * ov.h + y * stride[1] + dy) * ov.w
                                    + x * stride[2];
                                let wrow = wbase + (dz * k[1] + dy) * k[2];
                                for dx in 0..k[2] {
                                    let g = g_o[orow + dx];
                                    acc = acc + weight[wrow + dx] * g;
                                    if let Some(gw) = gw.as_mut() {
                                        gw[wrow + dx] += (g * v).f64();
                                    }
                                }
                            }
                        }
                        if let Some(gin) = gin.as_mut() {
                            gin[i * s + at] = gin[i * s + at] + acc;
                        }
                    }
                }
            }
        }
    }
    let gb = want_params.then(|| {
        (0..out_c)
            .map(|o| R::of(grad_out[o * os..(o + 1) * os].iter().map(|v| v.f64()).sum()))
            .collect()
    });
    (gin, gw.map(|g| g.into_iter().map(R::of).collect()), gb)
}

/// Non-overlapping max pooling; `window` is `[wd, wh, ww]`. Returns the
/// pooled values and, per output element, the flat input index of the
/// maximum (lowest index on ties).
pub(crate) fn maxpool_forward<R: Real>(input: &[R], vol: Volume, window: [usize; 3]) -> (Vec<R>, Vec<usize>, Volume) {
    let ov = Volume {
        c: vol.c,
        d: vol.d / window[0],
        h: vol.h / window[1],
        w: vol.w / window[2],
    };
    let n = ov.c * ov.spatial();
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for c in 0..vol.c {
        let base = c * vol.spatial();
        for z in 0..ov.d {
            for y in 0..ov.h {
                for x in 0..ov.w {
                    let mut best_i = base + ((z * window[0]) * vol.h + y * window[1]) * vol.w + x * window[2];
                    let mut best = input[best_i];
                    for dz in 0..window[0] {
                        for dy in 0..window[1] {
                            let row = base
                                + ((z * window[0] + dz) * vol.h + y * window[1] + dy) * vol.w
                                + x * window[2];
                            for dx in 0..window[2] {
                                if input[row + dx] > best {
                                    best = input[row + dx];
                                    best_i = row + dx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (out, arg, ov)
}

/// `y = W x + b` with `W` laid out `[out, in]`.
pub(crate) fn dense_forward<R: Real>(x: &[R], weight: &[R], bias: &[R]) -> Vec<R> {
    let n = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * n..(o + 1) * n];
            let acc: f64 = row.iter().zip(x).map(|(&w, &v)| (w * v).f64()).sum();
            R::of(b.f64() + acc)
        })
        .collect()
}

/// Max-subtracted softmax with 64-bit normalization.
pub(crate) fn softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let exps: Vec<f64> = logits.iter().map(|v| (v.f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| R::of(e / total)).collect()
}

#[inline]
pub(crate) fn sign<R: Real>(v: R) -> R {
    if v > R::zero() {
        R::one()
    } else if v < R::zero() {
        -R::one()
    } else {
        R::zero()
    }
}
