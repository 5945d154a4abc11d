//! Finite-difference gradient checks shared by the integration tests and the
//! acceptance harness. Everything runs in f64.
#![allow(dead_code)]

use perturbnet::autodiff::{finite_diff_report_at, FiniteDiffReport};
use perturbnet::models::{build_generator, smoothed_cross_entropy, ClassifierM, Model, ReconstructorR};
use perturbnet::nn::SampleKind;
use perturbnet::perturb::{loss_suppress, loss_target};
use perturbnet::{Result, Tape, Tensor, Var};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
/// Larger tensors are probed at this many seeded random elements.
pub const MAX_PROBES: usize = 48;

pub struct GradCheck {
    pub name: String,
    pub report: FiniteDiffReport,
    pub elapsed: Duration,
}

type T64 = Tensor<f64>;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> T64 {
    Tensor::uniform(shape, lo, hi, rng)
}

/// `Σ c ⊙ v`, so every output element contributes to the scalar.
fn project(tape: &mut Tape<f64>, v: Var, c: &T64) -> Result<Var> {
    let c = tape.constant(c.clone())?;
    let p = tape.mul(v, c)?;
    tape.sum(p)
}

struct Suite {
    rng: ChaCha8Rng,
    out: Vec<GradCheck>,
}

impl Suite {
    fn check(&mut self, name: &str, x: &T64, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) {
        let start = Instant::now();
        let mut indices: Vec<usize> = (0..x.numel()).collect();
        if indices.len() > MAX_PROBES {
            indices.shuffle(&mut self.rng);
            indices.truncate(MAX_PROBES);
            indices.sort_unstable();
        }
        let report = finite_diff_report_at(f, x, FD_STEP, &indices).unwrap_or_else(|e| panic!("{name}: {e}"));
        self.out.push(GradCheck {
            name: name.to_string(),
            report,
            elapsed: start.elapsed(),
        });
    }

    /// Checks `Σ c ⊙ op(x, a, b)` with respect to each of `x`, `a` and `b`.
    fn ternary(
        &mut self,
        name: &str,
        inputs: [T64; 3],
        out_shape: &[usize],
        op: impl Fn(&mut Tape<f64>, Var, Var, Var) -> Result<Var>,
    ) {
        let c = uniform(out_shape, -1.0, 1.0, &mut self.rng);
        for (slot, label) in ["input", "weight", "bias"].iter().enumerate() {
            let inputs = &inputs;
            let op = &op;
            let c = &c;
            self.check(&format!("{name} d/d{label}"), &inputs[slot], move |t, leaf| {
                let mut vars = Vec::with_capacity(3);
                for (i, v) in inputs.iter().enumerate() {
                    vars.push(if i == slot { leaf } else { t.constant(v.clone())? });
                }
                let y = op(t, vars[0], vars[1], vars[2])?;
                project(t, y, c)
            });
        }
    }

    fn unary(&mut self, name: &str, x: T64, out_shape: &[usize], op: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) {
        let c = uniform(out_shape, -1.0, 1.0, &mut self.rng);
        self.check(name, &x, |t, v| {
            let y = op(t, v)?;
            project(t, y, &c)
        });
    }
}

fn layers(s: &mut Suite) {
    let r = &mut s.rng;
    let conv_image = [
        uniform(&[3, 6, 6], -1.0, 1.0, r),
        uniform(&[4, 3, 3, 3], -0.5, 0.5, r),
        uniform(&[4], -0.1, 0.1, r),
    ];
    let conv_video = [
        uniform(&[2, 4, 5, 5], -1.0, 1.0, r),
        uniform(&[3, 2, 3, 3, 3], -0.5, 0.5, r),
        uniform(&[3], -0.1, 0.1, r),
    ];
    let conv_frame = [
        uniform(&[2, 3, 4, 4], -1.0, 1.0, r),
        uniform(&[3, 2, 1, 3, 3], -0.5, 0.5, r),
        uniform(&[3], -0.1, 0.1, r),
    ];
    let tconv_image = [
        uniform(&[3, 3, 3], -1.0, 1.0, r),
        uniform(&[3, 2, 2, 2], -0.5, 0.5, r),
        uniform(&[2], -0.1, 0.1, r),
    ];
    let tconv_video = [
        uniform(&[2, 2, 3, 3], -1.0, 1.0, r),
        uniform(&[2, 2, 1, 2, 2], -0.5, 0.5, r),
        uniform(&[2], -0.1, 0.1, r),
    ];
    let dense = [
        uniform(&[2, 2, 2], -1.0, 1.0, r),
        uniform(&[5, 8], -0.5, 0.5, r),
        uniform(&[5], -0.1, 0.1, r),
    ];
    s.ternary("conv 3x3", conv_image, &[4, 6, 6], |t, x, w, b| t.conv(x, w, b));
    s.ternary("conv 3x3x3", conv_video, &[3, 4, 5, 5], |t, x, w, b| t.conv(x, w, b));
    s.ternary("conv 1x3x3", conv_frame, &[3, 3, 4, 4], |t, x, w, b| t.conv(x, w, b));
    s.ternary("transposed conv image", tconv_image, &[2, 6, 6], |t, x, w, b| {
        t.conv_transpose(x, w, b, [1, 2, 2])
    });
    s.ternary("transposed conv video", tconv_video, &[2, 2, 6, 6], |t, x, w, b| {
        t.conv_transpose(x, w, b, [1, 2, 2])
    });
    s.ternary("dense", dense, &[5], |t, x, w, b| t.dense(x, w, b));

    let r = &mut s.rng;
    let pool2 = uniform(&[2, 4, 4], -1.0, 1.0, r);
    let pool3 = uniform(&[2, 4, 4, 4], -1.0, 1.0, r);
    let relu_in = uniform(&[24], -1.0, 1.0, r);
    let logits = uniform(&[6], -2.0, 2.0, r);
    let video = uniform(&[2, 3, 4, 4], 0.0, 1.0, r);
    let a = uniform(&[10], -1.0, 1.0, r);
    let b = uniform(&[10], -1.0, 1.0, r);
    s.unary("maxpool 2x2", pool2, &[2, 2, 2], |t, x| t.maxpool(x, &[2, 2]));
    s.unary("maxpool 2x2x2", pool3.clone(), &[2, 2, 2, 2], |t, x| t.maxpool(x, &[2, 2, 2]));
    s.unary("maxpool 1x2x2", pool3, &[2, 4, 2, 2], |t, x| t.maxpool(x, &[1, 2, 2]));
    s.unary("relu", relu_in.clone(), &[24], |t, x| t.relu(x));
    s.unary("affine", relu_in.clone(), &[24], |t, x| t.affine(x, -1.5, 0.25));
    s.unary("mean", relu_in.clone(), &[1], |t, x| t.mean(x));
    s.unary("gather", relu_in, &[3], |t, x| t.gather(x, &[5, 0, 17]));
    s.unary("softmax", logits.clone(), &[6], |t, x| t.softmax(x));
    s.check("cross entropy", &logits, |t, x| {
        let p = t.softmax(x)?;
        t.cross_entropy(p, 2)
    });
    s.check("smoothed cross entropy", &logits, |t, x| {
        let p = t.softmax(x)?;
        smoothed_cross_entropy(t, p, 4, 0.1)
    });
    s.check("frame difference l1", &video, |t, x| t.frame_diff_l1(x));
    let pair = |s: &mut Suite, name: &str, f: fn(&mut Tape<f64>, Var, Var) -> Result<Var>| {
        let (a, b) = (a.clone(), b.clone());
        s.check(&format!("{name} d/da"), &a, |t, x| {
            let c = t.constant(b.clone())?;
            f(t, x, c)
        });
        s.check(&format!("{name} d/db"), &b, |t, x| {
            let c = t.constant(a.clone())?;
            f(t, c, x)
        });
    };
    pair(s, "l1 distance", |t, x, y| t.l1_distance(x, y));
    pair(s, "mse", |t, x, y| t.mse(x, y));
    pair(s, "mul", |t, x, y| {
        let m = t.mul(x, y)?;
        t.sum(m)
    });
    pair(s, "sub", |t, x, y| {
        let d = t.sub(x, y)?;
        let d2 = t.mul(d, d)?;
        t.sum(d2)
    });
}

fn noisy_params(params: &[&Tensor], scale: f64, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    params
        .iter()
        .map(|p| {
            let mut q = (*p).clone();
            for v in q.data_mut() {
                *v += rng.gen_range(-scale..scale) as f32;
            }
            q
        })
        .collect()
}

fn bind_with_leaf(t: &mut Tape<f64>, params: &[Tensor], leaf_slot: Option<usize>, leaf: Var) -> Result<Vec<Var>> {
    params
        .iter()
        .enumerate()
        .map(|(i, p)| if Some(i) == leaf_slot { Ok(leaf) } else { t.constant(p.cast()) })
        .collect()
}

fn models(s: &mut Suite, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (kind, shape) in [(SampleKind::Image, vec![3, 8, 8]), (SampleKind::Video, vec![3, 4, 8, 8])] {
        model_checks(s, kind, &shape, seed, &mut rng);
    }
}

fn model_checks(s: &mut Suite, kind: SampleKind, shape: &[usize], seed: u64, rng: &mut ChaCha8Rng) {
    let m = ClassifierM::new(kind, shape, 8, rng).unwrap();
    let p = build_generator(kind);
    // move P away from the identity so X − P(X) has no exact zeros
    let p_params = noisy_params(&p.params(), 0.05, rng);
    let m_params: Vec<Tensor> = m.params().into_iter().cloned().collect();
    let x = Tensor::<f32>::uniform(shape, 0.05, 0.95, rng).cast::<f64>();
    let c = uniform(&[8], -1.0, 1.0, rng);

    s.check(&format!("{kind} classifier d/dinput"), &x, |t, v| {
        let mp = bind_with_leaf(t, &m_params, None, v)?;
        let y = m.forward(t, &mp, v)?;
        project(t, y, &c)
    });
    s.check(&format!("{kind} classifier d/ddense"), &m_params[4].cast(), |t, v| {
        let mp = bind_with_leaf(t, &m_params, Some(4), v)?;
        let xv = t.constant(x.clone())?;
        let y = m.forward(t, &mp, xv)?;
        project(t, y, &c)
    });

    let top: Vec<usize> = vec![0, 3, 5, 6, 7];
    let target = (seed as usize) % 8;
    for lambda in [0.0, 1.0, 10.0] {
        s.check(&format!("{kind} suppress loss lambda {lambda} d/dinput"), &x, |t, v| {
            let mp = bind_with_leaf(t, &m_params, None, v)?;
            let pp = bind_with_leaf(t, &p_params, None, v)?;
            loss_suppress(t, &m, &mp, &p, &pp, v, &top, lambda)
        });
        s.check(&format!("{kind} target loss lambda {lambda} d/dinput"), &x, |t, v| {
            let mp = bind_with_leaf(t, &m_params, None, v)?;
            let pp = bind_with_leaf(t, &p_params, None, v)?;
            loss_target(t, &m, &mp, &p, &pp, v, target, lambda)
        });
    }
    for slot in [0, 6, p_params.len() - 2] {
        s.check(&format!("{kind} suppress loss d/dgenerator[{slot}]"), &p_params[slot].cast(), |t, v| {
            let mp = bind_with_leaf(t, &m_params, None, v)?;
            let pp = bind_with_leaf(t, &p_params, Some(slot), v)?;
            let xv = t.constant(x.clone())?;
            loss_suppress(t, &m, &mp, &p, &pp, xv, &top, 1.0)
        });
        s.check(&format!("{kind} target loss d/dgenerator[{slot}]"), &p_params[slot].cast(), |t, v| {
            let mp = bind_with_leaf(t, &m_params, None, v)?;
            let pp = bind_with_leaf(t, &p_params, Some(slot), v)?;
            let xv = t.constant(x.clone())?;
            loss_target(t, &m, &mp, &p, &pp, xv, target, 1.0)
        });
    }

    let rec = ReconstructorR::new(kind, rng).unwrap();
    let r_params: Vec<Tensor> = rec.params().into_iter().cloned().collect();
    // every relu downstream of a bias shifts with it; keep their count small
    let small: &[usize] = match kind {
        SampleKind::Image => &[3, 4, 4],
        SampleKind::Video => &[3, 2, 2, 2],
    };
    let g = uniform(small, -0.5, 0.5, rng);
    let target_x = uniform(small, 0.0, 1.0, rng);
    s.check(&format!("{kind} reconstructor mse d/dinput"), &g, |t, v| {
        let rp = bind_with_leaf(t, &r_params, None, v)?;
        let y = rec.forward(t, &rp, v)?;
        let tx = t.constant(target_x.clone())?;
        t.mse(y, tx)
    });
    for slot in 0..r_params.len() {
        s.check(&format!("{kind} reconstructor mse d/dparam[{slot}]"), &r_params[slot].cast(), |t, v| {
            let rp = bind_with_leaf(t, &r_params, Some(slot), v)?;
            let gv = t.constant(g.clone())?;
            let y = rec.forward(t, &rp, gv)?;
            let tx = t.constant(target_x.clone())?;
            t.mse(y, tx)
        });
    }
}

/// Every layer, both perturbation losses and the model objectives, with
/// inputs drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Vec<GradCheck> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };
    layers(&mut s);
    models(&mut s, seed);
    s.out
}
