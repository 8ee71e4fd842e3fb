//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `PMIRISNN`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header, then
//! the concatenated tensor payloads as little-endian f32. The header holds
//! the model config, the mode, and one entry per named tensor with its shape
//! and offset (in f32 elements) into the payload. Batch-norm running
//! statistics are stored as ordinary named tensors.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Mode, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PMIRISNN";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    mode: Mode,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn named_tensors(model: &Model) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    for u in &model.units {
        out.push((format!("{}.weight", u.name), u.weight.shape().to_vec(), u.weight.data().to_vec()));
        out.push((format!("{}.bias", u.name), u.bias.shape().to_vec(), u.bias.data().to_vec()));
        if let Some(bn) = &u.bn {
            let c = bn.gamma.len();
            out.push((format!("{}.bn.gamma", u.name), vec![c], bn.gamma.data().to_vec()));
            out.push((format!("{}.bn.beta", u.name), vec![c], bn.beta.data().to_vec()));
            out.push((format!("{}.bn.running_mean", u.name), vec![c], bn.stats.mean.clone()));
            out.push((format!("{}.bn.running_var", u.name), vec![c], bn.stats.var.clone()));
        }
    }
    out
}

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<()> {
    let tensors = named_tensors(model);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, shape, data) in &tensors {
        entries.push(Entry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        offset += data.len();
    }
    let header = serde_json::to_vec(&Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        mode: model.mode,
        tensors: entries,
    })?;
    let mut buf = Vec::with_capacity(20 + header.len() + 4 * offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, _, data) in &tensors {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    if header.format_version != version {
        return Err(bad("header and preamble versions disagree"));
    }
    let payload = &bytes[header_end..];
    if payload.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let lookup = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let e = header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                e.shape
            )));
        }
        let n: usize = shape.iter().product();
        floats
            .get(e.offset..e.offset + n)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} runs past the payload")))
    };
    let mut model = Model::build(&header.config, 0)?;
    model.mode = header.mode;
    for u in &mut model.units {
        u.weight = Tensor::new(u.weight.shape(), lookup(&format!("{}.weight", u.name), u.weight.shape())?)?;
        u.bias = Tensor::new(u.bias.shape(), lookup(&format!("{}.bias", u.name), u.bias.shape())?)?;
        if let Some(bn) = &mut u.bn {
            let c = [bn.gamma.len()];
            bn.gamma = Tensor::new(&c, lookup(&format!("{}.bn.gamma", u.name), &c)?)?;
            bn.beta = Tensor::new(&c, lookup(&format!("{}.bn.beta", u.name), &c)?)?;
            bn.stats.mean = lookup(&format!("{}.bn.running_mean", u.name), &c)?;
            bn.stats.var = lookup(&format!("{}.bn.running_var", u.name), &c)?;
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let mut m = Model::build(&ModelConfig::mini(), 9).unwrap();
        if let Some(bn) = &mut m.units[2].bn {
            bn.stats.mean[1] = 0.25;
            bn.stats.var[0] = 3.5;
        }
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"PMIRISNN");
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Model::build(&ModelConfig::mini(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(read_checkpoint(&b"NOTACKPT0000000000000"[..]).is_err());
        let mut v2 = buf.clone();
        v2[8] = 2;
        assert!(read_checkpoint(&v2[..]).unwrap_err().to_string().contains("version"));
        assert!(read_checkpoint(&buf[..buf.len() - 4]).is_err());
    }
}
