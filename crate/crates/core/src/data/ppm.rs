//! Binary PPM (`P6`, 8-bit) export of images and videos.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "PPM";
const MANIFEST: &str = "manifest.json";

/// Clamps to [0,1], scales by 255 and rounds half up.
fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v as f64 * 255.0 + 0.5).floor() as u8
}

fn image_dims(x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "image must be [3,H,W]".into(),
        }),
    }
}

fn planes_to_ppm(planes: [&[f32]; 3], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for i in 0..h * w {
        for plane in planes {
            out.push(quantize(plane[i]));
        }
    }
    out
}

pub fn image_to_ppm(x: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image_dims(x)?;
    let n = h * w;
    let d = x.data();
    Ok(planes_to_ppm([&d[..n], &d[n..2 * n], &d[2 * n..]], h, w))
}

/// Parses a `P6` file into a `[3,H,W]` tensor with values `byte / maxval`.
pub fn ppm_to_image(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b' ' | b'\t' | b'\n' | b'\r' => pos += 1,
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(FORMAT, pos as u64, "truncated header"));
        }
        fields.push((start, &bytes[start..pos]));
    }
    if fields[0].1 != b"P6" {
        return Err(Error::format(FORMAT, 0, "expected P6 magic"));
    }
    let mut nums = [0usize; 3];
    for (k, &(at, text)) in fields[1..].iter().enumerate() {
        nums[k] = std::str::from_utf8(text)
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| Error::format(FORMAT, at as u64, "expected a positive integer"))?;
    }
    let [w, h, maxval] = nums;
    if maxval > 255 {
        return Err(Error::format(FORMAT, fields[3].0 as u64, "only 8-bit maxval supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(FORMAT, pos as u64, "missing separator after header"));
    }
    pos += 1;
    let need = 3 * h * w;
    if bytes.len() - pos != need {
        return Err(Error::format(
            FORMAT,
            pos as u64,
            format!("expected {need} pixel bytes, found {}", bytes.len() - pos),
        ));
    }
    let scale = maxval as f32;
    let mut data = vec![0f32; need];
    for (i, px) in bytes[pos..].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / scale;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_image(x: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image_to_ppm(x)?).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    ppm_to_image(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub files: Vec<String>,
}

/// Writes a `[3,T,H,W]` video as `frame_0000.ppm`, … plus `manifest.json`.
pub fn write_video(x: &Tensor, dir: impl AsRef<Path>) -> Result<VideoManifest> {
    let dir = dir.as_ref();
    let [t, h, w] = match *x.shape() {
        [3, t, h, w] => [t, h, w],
        _ => {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "video must be [3,T,H,W]".into(),
            })
        }
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = t.to_string().len().max(4);
    let plane = h * w;
    let d = x.data();
    let mut files = Vec::with_capacity(t);
    for f in 0..t {
        let at = |c: usize| &d[(c * t + f) * plane..(c * t + f + 1) * plane];
        let name = format!("frame_{f:0width$}.ppm");
        let path = dir.join(&name);
        std::fs::write(&path, planes_to_ppm([at(0), at(1), at(2)], h, w)).map_err(|e| Error::io(path, e))?;
        files.push(name);
    }
    let manifest = VideoManifest {
        frames: t,
        height: h,
        width: w,
        files,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn read_video(dir: impl AsRef<Path>) -> Result<Tensor> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: VideoManifest = serde_json::from_str(&text)?;
    if m.files.len() != m.frames || m.frames == 0 {
        return Err(Error::InvalidArgument("manifest frame count does not match its file list".into()));
    }
    let plane = m.height * m.width;
    let mut data = vec![0f32; 3 * m.frames * plane];
    for (f, name) in m.files.iter().enumerate() {
        let frame = read_image(dir.join(name))?;
        if frame.shape() != [3, m.height, m.width] {
            return Err(Error::ShapeMismatch {
                op: "read_video",
                lhs: frame.shape().to_vec(),
                rhs: vec![3, m.height, m.width],
            });
        }
        for c in 0..3 {
            data[(c * m.frames + f) * plane..(c * m.frames + f + 1) * plane]
                .copy_from_slice(&frame.data()[c * plane..(c + 1) * plane]);
        }
    }
    Tensor::new(vec![3, m.frames, m.height, m.width], data)
}
