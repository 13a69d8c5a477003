//! Checkpoint file: 8-byte magic, u32 LE header length, JSON header, then
//! little-endian f32 tensors in manifest order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::modules::{Autoencoder, CrossModel, Phase};
use super::spec::ModelSpec;
use crate::data::write_atomic;
use crate::dataset::NormalizationParams;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"STSC0001";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    DaeX,
    DaeY,
    Cross,
}

/// Networks of one model plus everything needed to use them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub spec: ModelSpec,
    pub phase: Phase,
    pub normalization: Option<NormalizationParams>,
    /// `encoder`/`decoder` for auto-encoders, plus `lfmm` for the cross model.
    pub networks: Vec<(String, Network)>,
}

#[derive(Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    layers: Vec<LayerSpec>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset inside the blob section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ModelKind,
    phase: Phase,
    spec: ModelSpec,
    normalization: Option<NormalizationParams>,
    networks: Vec<NetworkEntry>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn from_dae(
        kind: ModelKind,
        spec: &ModelSpec,
        dae: &Autoencoder,
        normalization: Option<NormalizationParams>,
    ) -> Self {
        Self {
            kind,
            spec: spec.clone(),
            phase: dae.phase,
            normalization,
            networks: vec![
                ("encoder".into(), dae.encoder.clone()),
                ("decoder".into(), dae.decoder.clone()),
            ],
        }
    }

    pub fn from_cross(model: &CrossModel, normalization: Option<NormalizationParams>) -> Self {
        Self {
            kind: ModelKind::Cross,
            spec: model.spec.clone(),
            phase: model.phase,
            normalization,
            networks: vec![
                ("encoder".into(), model.encoder.clone()),
                ("lfmm".into(), model.lfmm.clone()),
                ("decoder".into(), model.decoder.clone()),
            ],
        }
    }

    fn take(&mut self, name: &str) -> Result<Network> {
        let i = self
            .networks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint has no {name} network")))?;
        Ok(self.networks.remove(i).1)
    }

    fn expect_kind(&self, kinds: &[ModelKind]) -> Result<()> {
        if kinds.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::State(format!(
                "checkpoint holds {:?}, expected one of {kinds:?}",
                self.kind
            )))
        }
    }

    pub fn into_dae(mut self) -> Result<Autoencoder> {
        self.expect_kind(&[ModelKind::DaeX, ModelKind::DaeY])?;
        let layout = if self.kind == ModelKind::DaeX {
            self.spec.dae_x_layout()?
        } else {
            self.spec.dae_y_layout()?
        };
        let encoder = self.take("encoder")?;
        let decoder = self.take("decoder")?;
        if encoder.specs() != layout.encoder || decoder.specs() != layout.decoder {
            return Err(Error::ShapeMismatch("stored layers differ from the model spec".into()));
        }
        Ok(Autoencoder {
            encoder,
            decoder,
            input_shape: layout.input_shape,
            latent_shape: layout.latent_shape,
            phase: self.phase,
        })
    }

    pub fn into_cross(mut self) -> Result<CrossModel> {
        self.expect_kind(&[ModelKind::Cross])?;
        let x = self.spec.dae_x_layout()?;
        let y = self.spec.dae_y_layout()?;
        let encoder = self.take("encoder")?;
        let lfmm = self.take("lfmm")?;
        let decoder = self.take("decoder")?;
        if encoder.specs() != x.encoder
            || decoder.specs() != y.decoder
            || lfmm.specs() != self.spec.lfmm_layout(&x.latent_shape, &y.latent_shape)?
        {
            return Err(Error::ShapeMismatch("stored layers differ from the model spec".into()));
        }
        Ok(CrossModel {
            spec: self.spec,
            encoder,
            lfmm,
            decoder,
            zy_shape: y.latent_shape,
            phase: self.phase,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        for (name, net) in &self.networks {
            for (tname, t) in net.named_tensors(name) {
                tensors.push(TensorEntry {
                    name: tname,
                    shape: t.shape().to_vec(),
                    offset: blob.len(),
                });
                for v in t.data() {
                    blob.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            phase: self.phase,
            spec: self.spec.clone(),
            normalization: self.normalization,
            networks: self
                .networks
                .iter()
                .map(|(name, net)| NetworkEntry {
                    name: name.clone(),
                    layers: net.specs(),
                })
                .collect(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::State("checkpoint header too large".into()))?;
        let mut out = Vec::with_capacity(12 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Truncated(format!(
                "{} bytes is shorter than the preamble",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Version(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                std::str::from_utf8(MAGIC).expect("ascii")
            )));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let Some(json) = bytes.get(12..12 + len) else {
            return Err(Error::Truncated(format!(
                "header of {len} bytes runs past the end of the file"
            )));
        };
        let version: serde_json::Value = serde_json::from_slice(json)?;
        match version.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            other => {
                return Err(Error::Version(format!(
                    "format version {other:?}, expected {FORMAT_VERSION}"
                )))
            }
        }
        let header: Header = serde_json::from_value(version)?;
        let blob = &bytes[12 + len..];

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut networks = Vec::new();
        for entry in header.networks {
            let net = Network::from_specs(entry.layers, &mut rng)
                .map_err(|e| Error::ShapeMismatch(format!("network {}: {e}", entry.name)))?;
            networks.push((entry.name, net));
        }
        let mut expected = 0;
        for (name, net) in &mut networks {
            for (tname, t) in net.named_tensors_mut(name) {
                let entry = header
                    .tensors
                    .iter()
                    .find(|e| e.name == tname)
                    .ok_or_else(|| Error::ShapeMismatch(format!("tensor {tname} missing from manifest")))?;
                if entry.shape != t.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "tensor {tname}: stored {:?}, layer needs {:?}",
                        entry.shape,
                        t.shape()
                    )));
                }
                let end = entry.offset + 4 * t.len();
                let Some(raw) = blob.get(entry.offset..end) else {
                    return Err(Error::Truncated(format!(
                        "tensor {tname} ends past the end of the file"
                    )));
                };
                for (dst, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                    *dst = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                }
                expected += 4 * t.len();
            }
        }
        if header.tensors.len()
            != networks
                .iter()
                .map(|(n, net)| net.named_tensors(n).len())
                .sum::<usize>()
        {
            return Err(Error::ShapeMismatch(
                "manifest lists tensors the layers do not have".into(),
            ));
        }
        if blob.len() != expected {
            return Err(Error::Truncated(format!(
                "blob section has {} bytes, expected {expected}",
                blob.len()
            )));
        }
        Ok(Self {
            kind: header.kind,
            spec: header.spec,
            phase: header.phase,
            normalization: header.normalization,
            networks,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Checkpoint::from_bytes(&bytes)
}
