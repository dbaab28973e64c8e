//! Model checkpoints: `OFM1`, a little-endian `u64` header length, a JSON
//! header, then every parameter and buffer block as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{build_encoder, EncoderConfig, Model};
use crate::scalar::{c, Real};

pub const MAGIC: &[u8; 4] = b"OFM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    /// Scalar type the model was trained in.
    pub scalar: String,
    pub config: EncoderConfig,
    pub seed: u64,
    pub blocks: Vec<BlockInfo>,
}

fn blocks<T: Real>(model: &Model<T>) -> Vec<(BlockInfo, Vec<f64>)> {
    let mut out = Vec::new();
    for (li, layer) in model.layers.iter().enumerate() {
        for (pi, p) in layer.params().into_iter().enumerate() {
            out.push((
                BlockInfo {
                    name: format!("{li}.{}.param{pi}", layer.name()),
                    shape: p.shape.clone(),
                },
                p.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            ));
        }
        for (bi, b) in layer.buffers().into_iter().enumerate() {
            out.push((
                BlockInfo {
                    name: format!("{li}.{}.buffer{bi}", layer.name()),
                    shape: vec![b.len()],
                },
                b.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            ));
        }
    }
    out
}

pub fn write<T: Real, W: Write>(model: &Model<T>, mut out: W) -> Result<()> {
    let blocks = blocks(model);
    let header = Header {
        version: VERSION,
        scalar: T::NAME.into(),
        config: model.config.clone(),
        seed: model.seed,
        blocks: blocks.iter().map(|(b, _)| b.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, data) in &blocks {
        for v in data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read<T: Real, R: Read>(mut input: R) -> Result<(Model<T>, Header)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 26 {
        return Err(Error::Format(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", header.version)));
    }
    let mut model = build_encoder::<T>(&header.config, header.seed)?;
    let expected: Vec<BlockInfo> = blocks(&model).into_iter().map(|(b, _)| b).collect();
    if expected != header.blocks {
        return Err(Error::Format("checkpoint blocks do not match its configuration".into()));
    }
    let mut next = |n: usize| -> Result<Vec<T>> {
        let mut buf = vec![0u8; 8 * n];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|b| c(f64::from_le_bytes(b.try_into().expect("8-byte chunk"))))
            .collect())
    };
    for layer in &mut model.layers {
        for p in layer.params_mut() {
            p.data = next(p.len())?;
        }
        for b in layer.buffers_mut() {
            *b = next(b.len())?;
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after the last block", rest.len())));
    }
    Ok((model, header))
}

pub fn save<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    write(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load<T: Real>(path: &Path) -> Result<(Model<T>, Header)> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}
