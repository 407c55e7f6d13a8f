//! `FTEN` binary tensor files.
//!
//! Layout: magic `b"FTEN"`, one `u8` dtype code (0 = f64), `u32` LE rank,
//! `rank` × `u32` LE dims, then the row-major payload as LE `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FTEN";
pub const DTYPE_F64: u8 = 0;

pub fn write_ften<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&[DTYPE_F64])?;
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| TensorError::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ften<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:02x?}")));
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] != DTYPE_F64 {
        return Err(TensorError::Format(format!("unsupported dtype code {}", dtype[0])));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let ndim = u32::from_le_bytes(word) as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut word)?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut payload = vec![0u8; numel * 8];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Format("trailing bytes after payload".into()));
    }
    Tensor::new(&shape, data).map_err(|e| TensorError::Format(e.to_string()))
}

pub fn save_ften(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ften(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_ften(path: impl AsRef<Path>) -> Result<Tensor> {
    read_ften(BufReader::new(File::open(path)?))
}
