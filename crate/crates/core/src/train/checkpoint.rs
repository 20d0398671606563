//! Single-file parameter container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"VIDPCKPT"  u32 version
//! u64 header length, JSON header
//! u64 block count, then per block:
//!   u32 name length, UTF-8 name
//!   u8 dtype (0 = f32, 1 = f64)
//!   u32 rank, rank x u64 dims
//!   u64 element count, raw values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use vidpred_autograd::{ParamSet, Tensor};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"VIDPCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

/// One named tensor in a container.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub dtype: Dtype,
    pub tensor: Tensor,
}

impl Block {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            dtype: Dtype::F64,
            tensor,
        }
    }

    /// One block per parameter, named `prefix + parameter name`.
    pub fn from_params(prefix: &str, params: &ParamSet) -> Vec<Block> {
        params
            .iter()
            .map(|(name, t)| Block::new(format!("{prefix}{name}"), t.clone()))
            .collect()
    }

    /// Fills `params` from the blocks named `prefix + parameter name`.
    pub fn load_params(blocks: &[Block], prefix: &str, params: &mut ParamSet) -> std::result::Result<(), String> {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", params.name(id));
            let block = blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| format!("missing block `{name}`"))?;
            let dst = params.get_mut(id);
            if block.tensor.shape() != dst.shape() {
                return Err(format!(
                    "block `{name}` has shape {:?}, expected {:?}",
                    block.tensor.shape(),
                    dst.shape()
                ));
            }
            dst.data_mut().copy_from_slice(block.tensor.data());
        }
        Ok(())
    }

    /// Tensors of the blocks named `prefix0, prefix1, ...` in order.
    pub fn sequence(blocks: &[Block], prefix: &str) -> Vec<Tensor> {
        (0..)
            .map_while(|i| {
                let name = format!("{prefix}{i}");
                blocks.iter().find(|b| b.name == name).map(|b| b.tensor.clone())
            })
            .collect()
    }
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes atomically through a sibling temporary file.
pub fn write_container(path: &Path, header: &serde_json::Value, blocks: &[Block]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let header = serde_json::to_vec(header)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(blocks.len() as u64).to_le_bytes())?;
        for b in blocks {
            w.write_all(&(b.name.len() as u32).to_le_bytes())?;
            w.write_all(b.name.as_bytes())?;
            w.write_all(&[match b.dtype {
                Dtype::F32 => 0,
                Dtype::F64 => 1,
            }])?;
            let shape = b.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&(b.tensor.numel() as u64).to_le_bytes())?;
            match b.dtype {
                Dtype::F32 => {
                    for &v in b.tensor.data() {
                        w.write_all(&(v as f32).to_le_bytes())?;
                    }
                }
                Dtype::F64 => {
                    for &v in b.tensor.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| corrupt(self.path, "truncated file"))?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn len(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(corrupt(self.path, format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
}

pub fn read_container(path: &Path) -> Result<(serde_json::Value, Vec<Block>)> {
    let file = File::open(path).map_err(|e| corrupt(path, e.to_string()))?;
    let limit = file.metadata()?.len();
    let mut r = Reader {
        inner: BufReader::new(file),
        path,
    };
    if &r.array::<8>()? != MAGIC {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let n = r.len(limit)?;
    let header = serde_json::from_slice(&r.bytes(n)?)?;
    let count = r.len(limit)?;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(n)?).map_err(|_| corrupt(path, "block name is not UTF-8"))?;
        let dtype = match r.array::<1>()?[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            d => return Err(corrupt(path, format!("unknown dtype {d} in `{name}`"))),
        };
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len(limit * 8)).collect::<Result<Vec<_>>>()?;
        let count = r.len(limit)?;
        if count != shape.iter().product::<usize>() {
            return Err(corrupt(path, format!("block `{name}` count does not match its shape")));
        }
        let data = match dtype {
            Dtype::F32 => r
                .bytes(count * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => r
                .bytes(count * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        blocks.push(Block {
            name,
            dtype,
            tensor: Tensor::new(&shape, data)?,
        });
    }
    Ok((header, blocks))
}
