//! CSTB array files: `"CSTB"`, u32 version, u32 ndim, u32 dims, then
//! little-endian f64 values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

pub const MAGIC: [u8; 4] = *b"CSTB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CstbArray {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl CstbArray {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        ensure!(values.len() == expected, "{} values do not fill dims {dims:?}", values.len());
        Ok(CstbArray { dims, values })
    }

    /// Rows and columns of a 2D array.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => bail!("expected a 2D array, got dims {:?}", self.dims),
        }
    }
}

fn header(dims: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * dims.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(dims.len())?.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&u32::try_from(d).context("dimension exceeds u32")?.to_le_bytes());
    }
    Ok(out)
}

pub fn encode(array: &CstbArray) -> Result<Vec<u8>> {
    let mut out = header(&array.dims)?;
    out.reserve(8 * array.values.len());
    for v in &array.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<CstbArray> {
    read_from(bytes)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_from(mut r: impl Read) -> Result<CstbArray> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).context("truncated header")?;
    ensure!(magic == MAGIC, "bad magic {magic:?}");
    let version = read_u32(&mut r)?;
    ensure!(version == VERSION, "unsupported version {version}");
    let ndim = read_u32(&mut r)? as usize;
    let dims = (0..ndim).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let count: usize = dims.iter().product();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    ensure!(payload.len() == 8 * count, "payload of {} bytes, expected {} for dims {dims:?}", payload.len(), 8 * count);
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(CstbArray { dims, values })
}

pub fn read(path: &Path) -> Result<CstbArray> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_from(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Writes values as they come; `finish` checks the count against the dims.
pub struct CstbWriter {
    out: BufWriter<File>,
    remaining: usize,
}

impl CstbWriter {
    pub fn create(path: &Path, dims: &[usize]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        out.write_all(&header(dims)?)?;
        Ok(CstbWriter { out, remaining: dims.iter().product() })
    }

    pub fn write(&mut self, values: &[f64]) -> Result<()> {
        ensure!(values.len() <= self.remaining, "more values than the declared dims hold");
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        self.remaining -= values.len();
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        ensure!(self.remaining == 0, "{} values missing", self.remaining);
        self.out.flush()?;
        Ok(())
    }
}

pub fn write(path: &Path, dims: &[usize], values: &[f64]) -> Result<()> {
    let mut w = CstbWriter::create(path, dims)?;
    w.write(values)?;
    w.finish()
}
