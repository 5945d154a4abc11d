//! Synthetic labeled datasets, frame subsampling, PPM export and dataset
//! directories.

mod ppm;
mod render;

pub use ppm::{image_to_ppm, ppm_to_image, read_image, read_video, write_image, write_video, VideoManifest};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SampleKind;
use crate::tensor::Tensor;
use render::{background, draw, Placement, Rgb, Shape};

pub const IMAGE_SIZE: usize = 32;
pub const VIDEO_FRAMES: usize = 8;
pub const NUM_CLASSES: usize = 8;

pub const IMAGE_CLASSES: [&str; NUM_CLASSES] = [
    "red-circle",
    "red-square",
    "red-triangle",
    "red-cross",
    "blue-circle",
    "blue-square",
    "blue-triangle",
    "blue-cross",
];

pub const VIDEO_CLASSES: [&str; NUM_CLASSES] = [
    "move-left",
    "move-right",
    "move-up",
    "move-down",
    "grow",
    "shrink",
    "rotate-cw",
    "rotate-ccw",
];

pub fn class_names(kind: SampleKind) -> &'static [&'static str] {
    match kind {
        SampleKind::Image => &IMAGE_CLASSES,
        SampleKind::Video => &VIDEO_CLASSES,
    }
}

/// Shape of one generated sample.
pub fn sample_shape(kind: SampleKind) -> Vec<usize> {
    match kind {
        SampleKind::Image => vec![3, IMAGE_SIZE, IMAGE_SIZE],
        SampleKind::Video => vec![3, VIDEO_FRAMES, IMAGE_SIZE, IMAGE_SIZE],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub kind: SampleKind,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

fn jitter(rng: &mut impl Rng, base: Rgb, amount: f32) -> Rgb {
    base.map(|v| (v + rng.gen_range(-amount..amount)).clamp(0.0, 1.0))
}

fn render_image(label: usize, rng: &mut impl Rng) -> Tensor {
    let n = IMAGE_SIZE;
    let mut x = background(n, n, rng);
    let size: f32 = rng.gen_range(5.0..7.5);
    let shape = match label % 4 {
        0 => Shape::Circle { r: size },
        1 => Shape::Rect { hw: size * 0.85, hh: size * 0.85 },
        2 => Shape::Triangle { r: size * 1.1 },
        _ => Shape::Cross { arm: size, half_width: size * 0.33 },
    };
    let color = if label < 4 {
        jitter(rng, [0.9, 0.15, 0.12], 0.08)
    } else {
        jitter(rng, [0.12, 0.22, 0.9], 0.08)
    };
    let at = Placement {
        cx: rng.gen_range(11.0..21.0),
        cy: rng.gen_range(11.0..21.0),
        angle: rng.gen_range(-0.3..0.3),
        scale: 1.0,
    };
    draw(x.data_mut(), n, n, shape, at, color);
    x.clamp(0.0, 1.0)
}

fn render_video(label: usize, rng: &mut impl Rng) -> Tensor {
    let (n, t) = (IMAGE_SIZE, VIDEO_FRAMES);
    let bg = background(n, n, rng);
    let bar = Shape::Rect { hw: 6.0, hh: 2.0 };
    let color: Rgb = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    // push the color away from the background gray so the bar stays visible
    let mean = color.iter().sum::<f32>() / 3.0;
    let color = color.map(|v| if mean > 0.5 { (v + 0.35).min(1.0) } else { (v - 0.35).max(0.0) });
    let angle0: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let speed: f32 = rng.gen_range(1.3..1.8);
    let travel = speed * (t - 1) as f32;
    let (mut cx, mut cy) = (rng.gen_range(12.0..20.0), rng.gen_range(12.0..20.0));
    match label {
        0 => cx = rng.gen_range(travel / 2.0 + 12.0..travel / 2.0 + 14.0),
        1 => cx = rng.gen_range(18.0 - travel / 2.0..20.0 - travel / 2.0),
        2 => cy = rng.gen_range(travel / 2.0 + 12.0..travel / 2.0 + 14.0),
        3 => cy = rng.gen_range(18.0 - travel / 2.0..20.0 - travel / 2.0),
        _ => {}
    }
    let mut out = Tensor::zeros(&[3, t, n, n]);
    for f in 0..t {
        let s = f as f32;
        let mut at = Placement { cx, cy, angle: angle0, scale: 1.0 };
        match label {
            0 => at.cx -= speed * s,
            1 => at.cx += speed * s,
            2 => at.cy -= speed * s,
            3 => at.cy += speed * s,
            4 => at.scale = 0.6 + 0.8 * s / (t - 1) as f32,
            5 => at.scale = 1.4 - 0.8 * s / (t - 1) as f32,
            6 => at.angle += 0.2 * s,
            _ => at.angle -= 0.2 * s,
        }
        let mut frame = bg.clone();
        draw(frame.data_mut(), n, n, bar, at, color);
        for c in 0..3 {
            let src = &frame.data()[c * n * n..(c + 1) * n * n];
            out.data_mut()[(c * t + f) * n * n..(c * t + f + 1) * n * n].copy_from_slice(src);
        }
    }
    out.clamp(0.0, 1.0)
}

/// `n_per_class` samples of every class, interleaved by class. Identical
/// seeds give bit-identical datasets.
pub fn generate_dataset(kind: SampleKind, n_per_class: usize, seed: u64) -> Result<SyntheticDataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("need at least one sample per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_per_class * NUM_CLASSES);
    for _ in 0..n_per_class {
        for label in 0..NUM_CLASSES {
            let x = match kind {
                SampleKind::Image => render_image(label, &mut rng),
                SampleKind::Video => render_video(label, &mut rng),
            };
            samples.push(Sample { x, label });
        }
    }
    Ok(SyntheticDataset {
        kind,
        class_names: class_names(kind).iter().map(|s| s.to_string()).collect(),
        samples,
    })
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stratified split: from each class, `round(test_fraction × count)`
    /// shuffled samples go to the test side. Sample order within each side
    /// follows the original order.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(SyntheticDataset, SyntheticDataset)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0,1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut is_test = vec![false; self.samples.len()];
        for class in 0..self.class_names.len() {
            let mut idx: Vec<usize> = (0..self.samples.len()).filter(|&i| self.samples[i].label == class).collect();
            idx.shuffle(&mut rng);
            let n_test = (test_fraction * idx.len() as f64).round() as usize;
            for &i in &idx[..n_test] {
                is_test[i] = true;
            }
        }
        let pick = |want: bool| SyntheticDataset {
            kind: self.kind,
            class_names: self.class_names.clone(),
            samples: self
                .samples
                .iter()
                .zip(&is_test)
                .filter(|(_, &t)| t == want)
                .map(|(s, _)| s.clone())
                .collect(),
        };
        Ok((pick(false), pick(true)))
    }

    /// Writes `dataset.json` plus one TSR1 file per sample into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let width = self.samples.len().to_string().len().max(4);
        let mut entries = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let file = format!("sample_{i:0width$}.tsr");
            s.x.save(dir.join(&file))?;
            entries.push(IndexEntry { file, label: s.label });
        }
        let index = DatasetIndex {
            kind: self.kind,
            class_names: self.class_names.clone(),
            samples: entries,
        };
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&index)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex = serde_json::from_str(&text)?;
        let mut samples = Vec::with_capacity(index.samples.len());
        for e in index.samples {
            if e.label >= index.class_names.len() {
                return Err(Error::InvalidArgument(format!("{}: label {} out of range", e.file, e.label)));
            }
            samples.push(Sample {
                x: Tensor::load(dir.join(&e.file))?,
                label: e.label,
            });
        }
        Ok(Self {
            kind: index.kind,
            class_names: index.class_names,
            samples,
        })
    }
}

const INDEX_FILE: &str = "dataset.json";

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    label: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetIndex {
    kind: SampleKind,
    class_names: Vec<String>,
    samples: Vec<IndexEntry>,
}

/// Keeps frames `0, stride, 2·stride, …` of a `[C,T,H,W]` video.
pub fn subsample_frames(video: &Tensor, stride: usize) -> Result<Tensor> {
    let [c, t, h, w] = match *video.shape() {
        [c, t, h, w] => [c, t, h, w],
        _ => {
            return Err(Error::InvalidShape {
                shape: video.shape().to_vec(),
                reason: "video must be [C,T,H,W]".into(),
            })
        }
    };
    if stride == 0 || (stride > 1 && stride >= t) {
        return Err(Error::InvalidArgument(format!("stride {stride} invalid for {t} frames")));
    }
    let kept: Vec<usize> = (0..t).step_by(stride).collect();
    let plane = h * w;
    let mut data = Vec::with_capacity(c * kept.len() * plane);
    for ch in 0..c {
        for &f in &kept {
            let start = (ch * t + f) * plane;
            data.extend_from_slice(&video.data()[start..start + plane]);
        }
    }
    Tensor::new(vec![c, kept.len(), h, w], data)
}
