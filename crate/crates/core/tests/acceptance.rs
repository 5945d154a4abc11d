//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use perturbnet::compression::{
    compress_roundtrip, decode, encode, frame_difference_energy, mean_squared_error, reconstruct, threshold_coeffs,
    train_reconstructor, wavelet_forward, wavelet_inverse, ReconstructorConfig, ThresholdPolicy,
};
use perturbnet::data::{generate_dataset, sample_shape, Sample, SyntheticDataset};
use perturbnet::models::{accuracy, build_generator, train_classifier, ClassifierM, Model, ReconstructorR, TrainConfig};
use perturbnet::nn::SampleKind;
use perturbnet::perturb::{
    augment_retrain, optimize_perturbation, sparsity_metrics, top_k_indices, AugmentConfig, PerturbConfig,
    PerturbationResult,
};
use perturbnet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;
const TEST_FRACTION: f64 = 0.3;
const IMAGE_PER_CLASS: usize = 300;
const IMAGE_EPOCHS: usize = 20;
const VIDEO_PER_CLASS: usize = 100;
const VIDEO_EPOCHS: usize = 12;
const ATTACK_IMAGES: usize = 50;
const ATTACK_VIDEOS: usize = 20;
const LAMBDA_SUITE: usize = 10;
const WAVELET_LEVELS: usize = 3;
const KEEP_FRACTION: f64 = 0.05;
const RECON_TRAIN_IMAGES: usize = 48;
const RECON_IMAGE_EPOCHS: usize = 150;
const RECON_VIDEOS: usize = 8;
const RECON_VIDEO_EPOCHS: usize = 20;
const AUGMENT_SAMPLES: usize = 32;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(outcomes: &mut Vec<Outcome>, id: usize, name: &'static str, pass: bool, detail: String) {
    println!("{} criterion {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().flush().ok();
    outcomes.push(Outcome { id, name, pass, detail });
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

struct Trained {
    train: SyntheticDataset,
    test: SyntheticDataset,
    model: ClassifierM,
    accuracy: f64,
    elapsed: Duration,
}

fn train_fixture(kind: SampleKind, per_class: usize, epochs: usize) -> Trained {
    let start = Instant::now();
    let data = generate_dataset(kind, per_class, SEED).unwrap();
    let (train, test) = data.split(TEST_FRACTION, SEED).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut model = ClassifierM::new(kind, &sample_shape(kind), data.class_names.len(), &mut rng).unwrap();
    let config = TrainConfig {
        epochs,
        seed: SEED,
        ..TrainConfig::default()
    };
    train_classifier(&mut model, &train.samples, &config).unwrap();
    let accuracy = accuracy(&model, &test.samples).unwrap();
    model.freeze();
    Trained {
        train,
        test,
        model,
        accuracy,
        elapsed: start.elapsed(),
    }
}

struct Attack {
    sample: Sample,
    result: PerturbationResult,
}

impl Attack {
    fn success(&self) -> bool {
        self.result.suppressed_score_sum(5).unwrap() < 0.2 && self.mean_abs() < 0.1
    }

    fn mean_abs(&self) -> f64 {
        sparsity_metrics(&self.result.delta, 0.01).unwrap().mean_abs
    }
}

/// Tracks the classifier hash across perturbation runs.
struct HashGuard {
    expected: String,
    runs: usize,
    mismatches: usize,
}

impl HashGuard {
    fn new(m: &ClassifierM) -> Self {
        Self {
            expected: m.weight_hash(),
            runs: 0,
            mismatches: 0,
        }
    }

    fn perturb(&mut self, m: &ClassifierM, x: &Tensor, config: &PerturbConfig) -> PerturbationResult {
        let before = m.weight_hash();
        let r = optimize_perturbation(m, x, config).unwrap();
        self.runs += 1;
        if before != self.expected || m.weight_hash() != before {
            self.mismatches += 1;
        }
        r
    }
}

fn attack_suite(t: &Trained, n: usize, guard: &mut HashGuard) -> Vec<Attack> {
    let config = PerturbConfig {
        seed: SEED,
        ..PerturbConfig::default()
    };
    let mut out = Vec::new();
    for s in &t.test.samples {
        if out.len() == n {
            break;
        }
        if t.model.predict(&s.x).unwrap().argmax() != s.label {
            continue;
        }
        let result = guard.perturb(&t.model, &s.x, &config);
        out.push(Attack {
            sample: s.clone(),
            result,
        });
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_1(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let (mut checked, mut skipped, mut checks) = (0, 0, 0);
    for seed in 0..10 {
        for c in common::gradient_suite(seed) {
            checks += 1;
            checked += c.report.checked;
            skipped += c.report.skipped_at_kinks;
            if c.report.max_rel_error >= worst.0 {
                worst = (c.report.max_rel_error, format!("seed {seed} {}", c.name));
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        out,
        1,
        "gradient correctness",
        worst.0 < 1e-3 && elapsed < Duration::from_secs(30),
        format!(
            "max relative error {:.2e} (< 1e-3, worst: {}) over {checks} checks x 10 seeds, {checked} probes, {skipped} skipped at kinks, {:.1} s (< 30 s)",
            worst.0,
            worst.1,
            secs(elapsed)
        ),
    );
}

fn criterion_2(out: &mut Vec<Outcome>, image: &Trained, video: &Trained) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut identity_failures = 0;
    let mut worst_gap = 0.0f64;
    for (kind, m) in [(SampleKind::Image, &image.model), (SampleKind::Video, &video.model)] {
        let p = build_generator(kind);
        let config = PerturbConfig {
            epochs: 1,
            ..PerturbConfig::default()
        };
        for _ in 0..20 {
            let x = Tensor::uniform(&sample_shape(kind), 0.0, 1.0, &mut rng);
            if p.infer(&x).unwrap() != x {
                identity_failures += 1;
            }
            let r = optimize_perturbation(m, &x, &config).unwrap();
            let scores = m.predict(&x).unwrap();
            let analytic: f64 = top_k_indices(&scores, 5)
                .unwrap()
                .iter()
                .map(|&i| scores.data()[i] as f64)
                .sum();
            worst_gap = worst_gap.max((r.loss_history[0] - analytic).abs());
        }
    }
    report(
        out,
        2,
        "identity initialization",
        identity_failures == 0 && worst_gap < 1e-6,
        format!(
            "P(X) != X on {identity_failures} of 40 tensors; max |epoch-0 loss - sum of top-5 scores| {worst_gap:.2e} (< 1e-6)"
        ),
    );
}

fn criterion_3(out: &mut Vec<Outcome>, image: &Trained, video: &Trained) {
    let elapsed = image.elapsed + video.elapsed;
    report(
        out,
        3,
        "classifier quality",
        image.accuracy >= 0.95 && video.accuracy >= 0.90 && elapsed < Duration::from_secs(300),
        format!(
            "held-out accuracy image {:.4} (>= 0.95, {IMAGE_EPOCHS} epochs, {} test), video {:.4} (>= 0.90, {VIDEO_EPOCHS} epochs, {} test), {:.1} s (< 300 s)",
            image.accuracy,
            image.test.len(),
            video.accuracy,
            video.test.len(),
            secs(elapsed)
        ),
    );
}

fn criterion_4(out: &mut Vec<Outcome>, images: &[Attack], videos: &[Attack], elapsed: Duration) {
    let rate = |a: &[Attack]| a.iter().filter(|x| x.success()).count() as f64 / a.len().max(1) as f64;
    let (ri, rv) = (rate(images), rate(videos));
    report(
        out,
        4,
        "adversarial success",
        images.len() == ATTACK_IMAGES
            && videos.len() == ATTACK_VIDEOS
            && ri >= 0.9
            && rv >= 0.8
            && elapsed < Duration::from_secs(900),
        format!(
            "images {:.0}% of {} (>= 90%), videos {:.0}% of {} (>= 80%), {:.1} s (< 900 s)",
            100.0 * ri,
            images.len(),
            100.0 * rv,
            videos.len(),
            secs(elapsed)
        ),
    );
}

fn criterion_5(out: &mut Vec<Outcome>, images: &[Attack]) {
    let fractions: Vec<f64> = images
        .iter()
        .map(|a| sparsity_metrics(&a.result.delta, 0.01).unwrap().sparse_fraction)
        .collect();
    let med = median(fractions.clone());
    let min = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    report(
        out,
        5,
        "sparsity",
        med >= 0.7,
        format!("median sparse fraction {med:.3} (>= 0.7) over {} images, minimum {min:.3}", images.len()),
    );
}

fn criterion_6(out: &mut Vec<Outcome>, image: &Trained, images: &[Attack], guard: &mut HashGuard) {
    let suite = &images[..LAMBDA_SUITE.min(images.len())];
    let mean_abs = |lambda: f64, guard: &mut HashGuard| {
        let config = PerturbConfig {
            lambda,
            seed: SEED,
            ..PerturbConfig::default()
        };
        let v: Vec<f64> = suite
            .iter()
            .map(|a| {
                let r = guard.perturb(&image.model, &a.sample.x, &config);
                sparsity_metrics(&r.delta, 0.01).unwrap().mean_abs
            })
            .collect();
        v
    };
    let low = mean_abs(0.1, guard);
    let high = mean_abs(10.0, guard);
    let violations = low.iter().zip(&high).filter(|(l, h)| h > l).count();
    report(
        out,
        6,
        "lambda monotonicity",
        mean(&high) <= mean(&low),
        format!(
            "mean |delta| at lambda 10 {:.5} <= at lambda 0.1 {:.5} over {} images ({violations} per-sample violations)",
            mean(&high),
            mean(&low),
            suite.len()
        ),
    );
}

fn criterion_7(out: &mut Vec<Outcome>, guards: &[&HashGuard]) {
    let runs: usize = guards.iter().map(|g| g.runs).sum();
    let mismatches: usize = guards.iter().map(|g| g.mismatches).sum();
    report(
        out,
        7,
        "frozen classifier",
        mismatches == 0 && runs > 0,
        format!("weight hash changed in {mismatches} of {runs} perturbation runs"),
    );
}

fn criterion_8(out: &mut Vec<Outcome>, attacks: &[&Attack]) {
    let (mut round_trip, mut parseval, mut worst_ratio) = (0.0f64, 0.0f64, 0.0f64);
    let mut codec_failures = 0;
    for a in attacks {
        let delta = &a.result.delta;
        let c = wavelet_forward(delta, WAVELET_LEVELS).unwrap();
        let back = wavelet_inverse(&c).unwrap();
        for (&x, &y) in delta.data().iter().zip(back.data()) {
            round_trip = round_trip.max((x - y).abs() as f64);
        }
        let energy: f64 = delta.data().iter().map(|&v| (v as f64).powi(2)).sum();
        if energy > 0.0 {
            parseval = parseval.max((c.energy() - energy).abs() / energy);
        }
        let kept = threshold_coeffs(&c, ThresholdPolicy::KeepTopFraction(KEEP_FRACTION)).unwrap();
        let bytes = encode(&kept);
        match decode(&bytes) {
            Ok(d) if d == kept && encode(&d) == bytes => {}
            _ => codec_failures += 1,
        }
        worst_ratio = worst_ratio.max(bytes.len() as f64 / (4 * delta.numel()) as f64);
    }
    report(
        out,
        8,
        "wavelet pipeline",
        round_trip <= 1e-5 && parseval <= 1e-4 && codec_failures == 0 && worst_ratio < 0.15,
        format!(
            "over {} difference maps: max round-trip error {round_trip:.2e} (<= 1e-5), max Parseval error {parseval:.2e} (<= 1e-4), {codec_failures} codec mismatches, largest encoded size at keep {KEEP_FRACTION} {:.1}% of raw (< 15%)",
            attacks.len(),
            100.0 * worst_ratio
        ),
    );
}

fn pair(a: &Attack) -> (Tensor, Tensor) {
    let (_, gamma) = compress_roundtrip(
        &a.result.delta,
        WAVELET_LEVELS,
        ThresholdPolicy::KeepTopFraction(KEEP_FRACTION),
    )
    .unwrap();
    (gamma, a.sample.x.clone())
}

fn criterion_9(out: &mut Vec<Outcome>, image: &Trained, images: &[Attack], videos: &[Attack], guard: &mut HashGuard) {
    let start = Instant::now();
    let config = PerturbConfig {
        seed: SEED,
        ..PerturbConfig::default()
    };
    let train_pairs: Vec<(Tensor, Tensor)> = image
        .train
        .samples
        .iter()
        .take(RECON_TRAIN_IMAGES)
        .map(|s| {
            let result = guard.perturb(&image.model, &s.x, &config);
            pair(&Attack {
                sample: s.clone(),
                result,
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut r = ReconstructorR::new(SampleKind::Image, &mut rng).unwrap();
    train_reconstructor(
        &mut r,
        &train_pairs,
        &ReconstructorConfig {
            epochs: RECON_IMAGE_EPOCHS,
            overfit: true,
            seed: SEED,
            ..ReconstructorConfig::default()
        },
    )
    .unwrap();
    let (mut mse_chi, mut mse_gamma) = (Vec::new(), Vec::new());
    for a in images {
        let (omega, gamma) = compress_roundtrip(
            &a.result.delta,
            WAVELET_LEVELS,
            ThresholdPolicy::KeepTopFraction(KEEP_FRACTION),
        )
        .unwrap();
        let chi = reconstruct(&omega, &r).unwrap();
        mse_chi.push(mean_squared_error(&chi, &a.sample.x).unwrap());
        mse_gamma.push(mean_squared_error(&gamma, &a.sample.x).unwrap());
    }

    let video_pairs: Vec<(Tensor, Tensor)> = videos.iter().take(RECON_VIDEOS).map(pair).collect();
    let frame_energy = |beta: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut r = ReconstructorR::new(SampleKind::Video, &mut rng).unwrap();
        train_reconstructor(
            &mut r,
            &video_pairs,
            &ReconstructorConfig {
                epochs: RECON_VIDEO_EPOCHS,
                frame_penalty: beta,
                overfit: true,
                seed: SEED,
                ..ReconstructorConfig::default()
            },
        )
        .unwrap();
        let e: Vec<f64> = video_pairs
            .iter()
            .map(|(g, _)| frame_difference_energy(&r.infer(g).unwrap()).unwrap())
            .collect();
        mean(&e)
    };
    let (e0, e1) = (frame_energy(0.0), frame_energy(0.1));
    report(
        out,
        9,
        "reconstruction",
        mean(&mse_chi) < mean(&mse_gamma) && e1 < e0,
        format!(
            "test MSE(chi, X) {:.5} < MSE(gamma, X) {:.5} over {} images (R trained on {} pairs); video frame-difference energy beta 0.1 {e1:.3e} < beta 0 {e0:.3e}; {:.1} s",
            mean(&mse_chi),
            mean(&mse_gamma),
            images.len(),
            train_pairs.len(),
            secs(start.elapsed())
        ),
    );
}

fn criterion_10(out: &mut Vec<Outcome>, image: &Trained) {
    let start = Instant::now();
    let mut m = image.model.clone();
    let train: Vec<Sample> = image.train.samples.iter().take(AUGMENT_SAMPLES).cloned().collect();
    let config = AugmentConfig {
        rounds: 2,
        perturb: PerturbConfig {
            seed: SEED,
            ..PerturbConfig::default()
        },
        ..AugmentConfig::default()
    };
    let rep = augment_retrain(&mut m, &train, &image.test.samples, &config).unwrap();
    let first = rep.rounds.first();
    let drop = first.map(|r| rep.initial_accuracy - r.clean_accuracy).unwrap_or(f64::INFINITY);
    let rates: Vec<String> = rep.rounds.iter().map(|r| format!("{:.3}", r.convergence_rate)).collect();
    report(
        out,
        10,
        "augmentation loop",
        first.is_some_and(|r| r.finetuned) && drop < 0.05,
        format!(
            "clean accuracy {:.4} -> {:.4} after round 1 (drop {:.2} pp < 5 pp); convergence rate per round [{}] on {} samples (observation only); {:.1} s",
            rep.initial_accuracy,
            first.map_or(f64::NAN, |r| r.clean_accuracy),
            100.0 * drop,
            rates.join(", "),
            train.len(),
            secs(start.elapsed())
        ),
    );
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_perturbnet"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Runs a full CLI pipeline into `dir` and returns every output file's bytes.
fn cli_pipeline(dir: &Path) -> Option<Vec<(String, Vec<u8>)>> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let seed = "5";
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-data", "--kind", "image", "--per-class", "6", "--seed", seed, "--out", &p("data")],
        vec!["train-classifier", "--data", &p("data"), "--epochs", "2", "--seed", seed, "--out", &p("m.wgt")],
        vec![
            "perturb", &p("data/test/sample_0000.tsr"), "--model", &p("m.wgt"), "--out", &p("run"),
            "--epochs", "60", "--seed", seed,
        ],
        vec!["compress", &p("run/delta.tsr"), "--keep", "0.05", "--out", &p("delta.swc")],
        vec![
            "augment", "--model", &p("m.wgt"), "--data", &p("data"), "--limit", "3", "--epochs", "20", "--seed",
            seed, "--out", &p("m2.wgt"), "--report", &p("augment.jsonl"),
        ],
    ]
    .into_iter()
    .map(|s| s.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        if !cli(&args) {
            return None;
        }
    }
    let files = ["run/report.jsonl", "augment.jsonl", "m.wgt", "m2.wgt", "delta.swc", "run/abs_delta.ppm"];
    files
        .iter()
        .map(|f| std::fs::read(dir.join(f)).ok().map(|b| (f.to_string(), b)))
        .collect()
}

fn criterion_11(out: &mut Vec<Outcome>) {
    let tmp = tempfile::tempdir().unwrap();
    let a = cli_pipeline(&tmp.path().join("a"));
    let b = cli_pipeline(&tmp.path().join("b"));
    let (pass, detail) = match (a, b) {
        (Some(a), Some(b)) => {
            let differing: Vec<&str> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x.1 != y.1)
                .map(|(x, _)| x.0.as_str())
                .collect();
            let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
            (
                differing.is_empty(),
                format!("compared {} across two seeded runs, differing: {:?}", names.join(", "), differing),
            )
        }
        _ => (false, "a CLI step failed".to_string()),
    };
    report(out, 11, "CLI determinism", pass, detail);
}

fn main() {
    let start = Instant::now();
    let mut out = Vec::new();

    criterion_1(&mut out);

    let image = train_fixture(SampleKind::Image, IMAGE_PER_CLASS, IMAGE_EPOCHS);
    let video = train_fixture(SampleKind::Video, VIDEO_PER_CLASS, VIDEO_EPOCHS);
    criterion_3(&mut out, &image, &video);
    criterion_2(&mut out, &image, &video);

    let mut image_guard = HashGuard::new(&image.model);
    let mut video_guard = HashGuard::new(&video.model);
    let attack_start = Instant::now();
    let image_attacks = attack_suite(&image, ATTACK_IMAGES, &mut image_guard);
    let video_attacks = attack_suite(&video, ATTACK_VIDEOS, &mut video_guard);
    criterion_4(&mut out, &image_attacks, &video_attacks, attack_start.elapsed());
    criterion_5(&mut out, &image_attacks);
    criterion_6(&mut out, &image, &image_attacks, &mut image_guard);

    let all: Vec<&Attack> = image_attacks.iter().chain(&video_attacks).collect();
    criterion_8(&mut out, &all);
    criterion_9(&mut out, &image, &image_attacks, &video_attacks, &mut image_guard);
    criterion_7(&mut out, &[&image_guard, &video_guard]);
    criterion_10(&mut out, &image);
    criterion_11(&mut out);

    out.sort_by_key(|o| o.id);
    let passed = out.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed in {:.1} s", out.len(), secs(start.elapsed()));
    for o in out.iter().filter(|o| !o.pass) {
        println!("  failed: {} {} ({})", o.id, o.name, o.detail);
    }
    if passed != out.len() {
        std::process::exit(1);
    }
}
