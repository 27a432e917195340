//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "GTRCKPT\0"
//! version    u32 LE
//! config     u64 LE length, then ModelConfig as UTF-8 JSON
//! count      u64 LE number of parameters
//! per parameter:
//!   name     u32 LE length, then UTF-8 bytes
//!   rank     u32 LE, then rank x u64 LE dimensions
//!   values   u64 LE count, then count x f64 LE
//! ```
//! Parameters are written in name order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::{check_params, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GTRCKPT\0";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    check_params(cfg, params)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let json = serde_json::to_vec(cfg)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_bytes<R: Read>(r: &mut R, len: u64) -> Result<Vec<u8>> {
    const LIMIT: u64 = 1 << 32;
    if len > LIMIT {
        return Err(Error::Checkpoint(format!("implausible length {len}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelConfig, ModelParams)> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u64(&mut r)?;
    let cfg: ModelConfig = serde_json::from_slice(&read_bytes(&mut r, len)?)?;
    let count = read_u64(&mut r)?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as u64;
        let name = String::from_utf8(read_bytes(&mut r, name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = read_u64(&mut r)?;
        let raw = read_bytes(&mut r, n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    check_params(&cfg, &params)?;
    Ok((cfg, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), cfg, params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::params::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            d_n: 8,
            d_e: 4,
            d_h: 4,
            heads: 2,
            ..Default::default()
        };
        let mut params = init_params(&cfg, 3).unwrap();
        params.get_mut("classifier.bias").unwrap().data_mut()[0] = -0.0;
        params.get_mut("classifier.bias").unwrap().data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &params).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let (cfg2, params2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(cfg2, cfg);
        for ((n1, a), (n2, b)) in params.iter().zip(params2.iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(matches!(read_checkpoint(&b"NOTACKPT"[..]), Err(Error::Checkpoint(_))));
        let cfg = ModelConfig {
            d_n: 4,
            d_e: 2,
            d_h: 2,
            heads: 1,
            ..Default::default()
        };
        let params = init_params(&cfg, 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &params).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
