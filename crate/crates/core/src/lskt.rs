//! `LSKT` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field                     |
//! |-------|---------------------------|
//! | 4     | magic `4C 53 4B 54`       |
//! | 2     | version, `1`              |
//! | 1     | dtype, `1` = f64          |
//! | 1     | rank, `4`                 |
//! | 32    | dims N, C, H, W as u64    |
//! | 8·len | payload, f64              |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"LSKT";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 32;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    write_to(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

pub fn write_to(mut w: impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64, 4])?;
    for d in t.shape().dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_from(mut r: impl Read) -> Result<Tensor> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated LSKT header"),
        _ => Error::Io(e),
    })?;
    if header[..4] != MAGIC {
        return Err(Error::format(format!("bad magic {:02X?}, expected 4C 53 4B 54", &header[..4])));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::format(format!("unsupported LSKT version {version}")));
    }
    if header[6] != DTYPE_F64 {
        return Err(Error::format(format!("unsupported dtype code {}", header[6])));
    }
    if header[7] != 4 {
        return Err(Error::format(format!("unsupported rank {}", header[7])));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 8 + 8 * i;
        let raw = u64::from_le_bytes(header[off..off + 8].try_into().unwrap());
        *d = usize::try_from(raw).map_err(|_| Error::format(format!("dimension {raw} too large")))?;
    }
    let shape = Shape::from(dims);
    let len = shape
        .checked_numel()
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::format(format!("dims {shape} overflow")))?;
    let mut payload = Vec::new();
    r.take(len as u64 * 8).read_to_end(&mut payload)?;
    if payload.len() != len * 8 {
        return Err(Error::format(format!(
            "payload has {} bytes, shape {shape} needs {}",
            payload.len(),
            len * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let t = read_from(bytes)?;
    if bytes.len() != HEADER_LEN + 8 * t.len() {
        return Err(Error::format("trailing bytes after LSKT payload"));
    }
    Ok(t)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    read_from(BufReader::new(File::open(path)?))
}
