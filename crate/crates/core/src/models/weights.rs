//! `WGT1` weight files: magic, model-kind byte, sample-kind byte, expected
//! input shape (rank 0 when any size is accepted), `u32` layer count, then
//! one record per layer. A record is a layer-type byte, its geometry (kernel
//! code or transposed-conv stride) and the weight and bias tensors as
//! `u32` rank, dims and `f32` payload, all little-endian.

use std::path::Path;

use super::{ClassifierM, GeneratorP, ReconstructorR};
use crate::codec::{put_shape, put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::nn::{ConvKernel, ConvSpec, SampleKind, TransposedConvSpec};
use crate::tensor::{read_tensor_body, write_tensor_body, Tensor};

const MAGIC: &[u8; 4] = b"WGT1";
const FORMAT: &str = "WGT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Classifier,
    Generator,
    Reconstructor,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Classifier => 0,
            ModelKind::Generator => 1,
            ModelKind::Reconstructor => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Classifier),
            1 => Some(ModelKind::Generator),
            2 => Some(ModelKind::Reconstructor),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Generator => "generator",
            ModelKind::Reconstructor => "reconstructor",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerRecord {
    Conv(ConvSpec),
    ConvTranspose(TransposedConvSpec),
    Dense { weight: Tensor, bias: Tensor },
}

/// Any of the three networks, as loaded from a weight file.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Classifier(ClassifierM),
    Generator(GeneratorP),
    Reconstructor(ReconstructorR),
}

impl From<ClassifierM> for AnyModel {
    fn from(m: ClassifierM) -> Self {
        AnyModel::Classifier(m)
    }
}

impl From<GeneratorP> for AnyModel {
    fn from(m: GeneratorP) -> Self {
        AnyModel::Generator(m)
    }
}

impl From<ReconstructorR> for AnyModel {
    fn from(m: ReconstructorR) -> Self {
        AnyModel::Reconstructor(m)
    }
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Classifier(_) => ModelKind::Classifier,
            AnyModel::Generator(_) => ModelKind::Generator,
            AnyModel::Reconstructor(_) => ModelKind::Reconstructor,
        }
    }

    fn wrong_kind(&self, wanted: ModelKind) -> Error {
        Error::InvalidArgument(format!("expected {wanted} weights, found {}", self.kind()))
    }

    pub fn into_classifier(self) -> Result<ClassifierM> {
        match self {
            AnyModel::Classifier(m) => Ok(m),
            other => Err(other.wrong_kind(ModelKind::Classifier)),
        }
    }

    pub fn into_generator(self) -> Result<GeneratorP> {
        match self {
            AnyModel::Generator(m) => Ok(m),
            other => Err(other.wrong_kind(ModelKind::Generator)),
        }
    }

    pub fn into_reconstructor(self) -> Result<ReconstructorR> {
        match self {
            AnyModel::Reconstructor(m) => Ok(m),
            other => Err(other.wrong_kind(ModelKind::Reconstructor)),
        }
    }

    fn header(&self) -> (SampleKind, Vec<usize>, Vec<LayerRecord>) {
        match self {
            AnyModel::Classifier(m) => (
                m.kind(),
                m.input_shape().to_vec(),
                vec![
                    LayerRecord::Conv(m.conv1.clone()),
                    LayerRecord::Conv(m.conv2.clone()),
                    LayerRecord::Dense {
                        weight: m.dense_w.clone(),
                        bias: m.dense_b.clone(),
                    },
                ],
            ),
            AnyModel::Generator(m) => (
                m.kind(),
                Vec::new(),
                m.layers().iter().cloned().map(LayerRecord::Conv).collect(),
            ),
            AnyModel::Reconstructor(m) => (
                m.kind(),
                Vec::new(),
                vec![
                    LayerRecord::ConvTranspose(m.up1.clone()),
                    LayerRecord::ConvTranspose(m.up2.clone()),
                    LayerRecord::Conv(m.down.clone()),
                ],
            ),
        }
    }

    pub fn to_wgt_bytes(&self) -> Vec<u8> {
        let (sample, input_shape, layers) = self.header();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.kind().code());
        out.push(sample.code());
        put_shape(&mut out, &input_shape);
        put_u32(&mut out, layers.len() as u32);
        for layer in &layers {
            match layer {
                LayerRecord::Conv(spec) => {
                    out.push(0);
                    out.push(spec.kernel().code());
                    write_tensor_body(&mut out, &spec.weight);
                    write_tensor_body(&mut out, &spec.bias);
                }
                LayerRecord::ConvTranspose(spec) => {
                    out.push(1);
                    for s in spec.stride() {
                        put_u32(&mut out, s as u32);
                    }
                    write_tensor_body(&mut out, &spec.weight);
                    write_tensor_body(&mut out, &spec.bias);
                }
                LayerRecord::Dense { weight, bias } => {
                    out.push(2);
                    write_tensor_body(&mut out, weight);
                    write_tensor_body(&mut out, bias);
                }
            }
        }
        out
    }

    pub fn from_wgt_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, FORMAT);
        r.expect_magic(MAGIC)?;
        let at = r.offset();
        let kind = ModelKind::from_code(r.u8("model kind")?)
            .ok_or_else(|| Error::format(FORMAT, at, "unknown model kind"))?;
        let at = r.offset();
        let sample = SampleKind::from_code(r.u8("sample kind")?)
            .ok_or_else(|| Error::format(FORMAT, at, "unknown sample kind"))?;
        let input_shape = r.shape()?;
        let at = r.offset();
        let count = r.u32("layer count")? as usize;
        if count > 64 {
            return Err(Error::format(FORMAT, at, format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(read_layer(&mut r)?);
        }
        r.finish()?;
        let end = r.offset();
        assemble(kind, sample, &input_shape, layers)
            .map_err(|e| Error::format(FORMAT, end, format!("layers do not form a {kind}: {e}")))
    }
}

fn read_layer(r: &mut ByteReader<'_>) -> Result<LayerRecord> {
    let at = r.offset();
    let tag = r.u8("layer type")?;
    let layer_err = |at: u64, e: Error| Error::format(FORMAT, at, e.to_string());
    match tag {
        0 => {
            let at = r.offset();
            let kernel =
                ConvKernel::from_code(r.u8("kernel code")?).ok_or_else(|| r_err(at, "unknown kernel code"))?;
            let weight = read_tensor_body(r)?;
            let bias = read_tensor_body(r)?;
            ConvSpec::from_parts(kernel, weight, bias)
                .map(LayerRecord::Conv)
                .map_err(|e| layer_err(at, e))
        }
        1 => {
            let mut stride = [0usize; 3];
            for s in &mut stride {
                *s = r.u32("stride")? as usize;
            }
            let weight = read_tensor_body(r)?;
            let bias = read_tensor_body(r)?;
            TransposedConvSpec::from_parts(stride, weight, bias)
                .map(LayerRecord::ConvTranspose)
                .map_err(|e| layer_err(at, e))
        }
        2 => {
            let weight = read_tensor_body(r)?;
            let bias = read_tensor_body(r)?;
            if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
                return Err(r_err(at, "dense layer needs [out, in] weight and [out] bias"));
            }
            Ok(LayerRecord::Dense { weight, bias })
        }
        other => Err(r_err(at, &format!("unknown layer type {other}"))),
    }
}

fn r_err(at: u64, reason: &str) -> Error {
    Error::format(FORMAT, at, reason)
}

fn assemble(kind: ModelKind, sample: SampleKind, input_shape: &[usize], layers: Vec<LayerRecord>) -> Result<AnyModel> {
    let bad = || Error::InvalidArgument("unexpected layer sequence".into());
    match kind {
        ModelKind::Classifier => {
            let mut it = layers.into_iter();
            match (it.next(), it.next(), it.next(), it.next()) {
                (
                    Some(LayerRecord::Conv(c1)),
                    Some(LayerRecord::Conv(c2)),
                    Some(LayerRecord::Dense { weight, bias }),
                    None,
                ) => Ok(ClassifierM::from_parts(sample, input_shape, c1, c2, weight, bias)?.into()),
                _ => Err(bad()),
            }
        }
        ModelKind::Generator => {
            let convs = layers
                .into_iter()
                .map(|l| match l {
                    LayerRecord::Conv(c) => Ok(c),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GeneratorP::from_layers(sample, convs)?.into())
        }
        ModelKind::Reconstructor => {
            let mut it = layers.into_iter();
            match (it.next(), it.next(), it.next(), it.next()) {
                (
                    Some(LayerRecord::ConvTranspose(u1)),
                    Some(LayerRecord::ConvTranspose(u2)),
                    Some(LayerRecord::Conv(d)),
                    None,
                ) => Ok(ReconstructorR::from_parts(sample, u1, u2, d)?.into()),
                _ => Err(bad()),
            }
        }
    }
}

pub fn save_weights(model: impl Into<AnyModel>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.into().to_wgt_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    AnyModel::from_wgt_bytes(&bytes)
}
