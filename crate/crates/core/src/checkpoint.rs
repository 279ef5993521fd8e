//! Checkpoint file: the magic `LFINETv1`, a u64 little-endian header
//! length, a UTF-8 JSON header, then every parameter as little-endian f32
//! in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::model::{Lfinet, ModelConfig};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"LFINETv1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Running statistics; f32 values widen to f64 exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dtype: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub training: Option<TrainConfig>,
    /// Completed epochs at save time.
    pub epoch: usize,
    pub params: Vec<ParamEntry>,
    pub buffers: Vec<BufferEntry>,
}

pub fn encode(model: &Lfinet<f32>, seed: u64, training: Option<&TrainConfig>, epoch: usize) -> Vec<u8> {
    let header = Header {
        dtype: "f32".into(),
        seed,
        model: model.config.clone(),
        training: training.cloned(),
        epoch,
        params: model.store.params().map(|(n, p)| ParamEntry { name: n.into(), shape: p.shape().to_vec() }).collect(),
        buffers: model
            .store
            .buffers()
            .map(|(n, b)| BufferEntry {
                name: n.into(),
                shape: b.shape().to_vec(),
                values: b.data().iter().map(|&v| v as f64).collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.params() {
        for &v in p.data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(path: &Path, model: &Lfinet<f32>, seed: u64, training: Option<&TrainConfig>, epoch: usize) -> Result<()> {
    let bytes = encode(model, seed, training, epoch);
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<(Header, Lfinet<f32>)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let len_bytes: [u8; 8] = bytes.get(8..16).ok_or_else(|| bad("truncated header length"))?.try_into().unwrap();
    let len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("invalid header: {e}")))?;
    if header.dtype != "f32" {
        return Err(bad(format!("unsupported dtype {}", header.dtype)));
    }
    let model = Lfinet::<f32>::new(header.model.clone(), header.seed)?;

    let names: Vec<(&str, Vec<usize>)> = model.store.params().map(|(n, p)| (n, p.shape().to_vec())).collect();
    if names.len() != header.params.len() {
        return Err(bad(format!("header lists {} parameters, model has {}", header.params.len(), names.len())));
    }
    let mut blob = &bytes[16 + len..];
    for (entry, (name, shape)) in header.params.iter().zip(&names) {
        if entry.name != *name || entry.shape != *shape {
            return Err(bad(format!("parameter `{}` {:?} does not match model `{name}` {shape:?}", entry.name, entry.shape)));
        }
        let p = model.store.param(name)?;
        let mut data = p.data_mut();
        for v in data.iter_mut() {
            let mut b = [0u8; 4];
            blob.read_exact(&mut b).map_err(|_| bad(format!("parameter data ends inside `{name}`")))?;
            *v = f32::from_le_bytes(b);
        }
    }
    if !blob.is_empty() {
        return Err(bad(format!("{} trailing bytes after parameter data", blob.len())));
    }
    let buffer_count = model.store.buffers().count();
    if buffer_count != header.buffers.len() {
        return Err(bad(format!("header lists {} buffers, model has {buffer_count}", header.buffers.len())));
    }
    for entry in &header.buffers {
        let b = model.store.buffer(&entry.name).map_err(|_| bad(format!("unknown buffer `{}`", entry.name)))?;
        if b.shape() != entry.shape.as_slice() || entry.values.len() != b.numel() {
            return Err(bad(format!("buffer `{}` has the wrong shape", entry.name)));
        }
        b.data_mut().iter_mut().zip(&entry.values).for_each(|(d, &v)| *d = v as f32);
    }
    Ok((header, model))
}

pub fn load(path: &Path) -> Result<(Header, Lfinet<f32>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|e| match e {
        Error::BadMagic => Error::BadMagic,
        other => Error::File { path: path.into(), msg: other.to_string() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;
    use lfinet_tensor::ops::NormMode;
    use lfinet_tensor::Tensor;
    use rand::SeedableRng;

    fn small(ablate: &[Ablation]) -> ModelConfig {
        ModelConfig {
            image_size: [16, 16],
            channels: [8, 8, 16],
            st_dim: 16,
            st_layers: 1,
            st_heads: 2,
            st_ffn_mult: 2,
            ablate: ablate.iter().copied().collect(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = Lfinet::<f32>::new(small(&[]), 7).unwrap();
        // perturb so loaded values cannot come from re-initialization
        for (_, p) in m.store.params() {
            p.data_mut().iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
        }
        for (_, b) in m.store.buffers() {
            b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += 0.1 * i as f32 + 1.0 / 3.0);
        }
        let x = Tensor::<f32>::rand_uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let before = m.forward(&x, NormMode::Eval).unwrap().to_vec();

        let cfg = TrainConfig { lr: 3e-4, ..Default::default() };
        let bytes = encode(&m, 7, Some(&cfg), 4);
        let (h, back) = decode(&bytes).unwrap();
        assert_eq!(h.training, Some(cfg.clone()));
        assert_eq!(h.epoch, 4);
        for ((_, a), (_, b)) in m.store.params().zip(back.store.params()) {
            assert_eq!(a.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        for ((_, a), (_, b)) in m.store.buffers().zip(back.store.buffers()) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
        let after = back.forward(&x, NormMode::Eval).unwrap().to_vec();
        assert_eq!(before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), after.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(encode(&back, 7, Some(&cfg), 4), bytes);
    }

    #[test]
    fn ablated_models_round_trip() {
        let m = Lfinet::<f32>::new(small(&[Ablation::Lms, Ablation::Prd, Ablation::Fgm]), 2).unwrap();
        let (h, back) = decode(&encode(&m, 2, None, 0)).unwrap();
        assert_eq!(h.model, m.config);
        assert_eq!(back.store.num_scalars(), m.store.num_scalars());
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = Lfinet::<f32>::new(small(&[]), 1).unwrap();
        let bytes = encode(&m, 1, None, 0);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert_eq!(decode(&wrong).unwrap_err().to_string(), "not an LFINETv1 checkpoint");
        assert!(decode(&bytes[..bytes.len() - 3]).unwrap_err().to_string().contains("ends inside"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).unwrap_err().to_string().contains("trailing"));
        assert!(decode(&bytes[..12]).is_err());
    }

    #[test]
    fn load_reports_path_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        std::fs::write(&p, b"garbage!garbage!").unwrap();
        assert_eq!(load(&p).unwrap_err().to_string(), "not an LFINETv1 checkpoint");
        assert!(load(&dir.path().join("none.ckpt")).unwrap_err().to_string().contains("none.ckpt"));
    }
}
