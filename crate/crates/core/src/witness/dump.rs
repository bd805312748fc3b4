//! Flat binary dump of a solved witness system, for diffing implementations.
//!
//! All numbers little-endian:
//!
//! ```text
//! bytes 0..8    magic "SRMMDWIT"
//! u64           N (particles)
//! u64           d (dimension)
//! f64           λ
//! f64 × Nd·N    D, row-major (row i·d + l, column j)
//! f64 × Nd·Nd   H, row-major
//! f64 × Nd      r
//! f64 × Nd      β
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SRMMDWIT";

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessDump {
    pub n: usize,
    pub dim: usize,
    pub lambda: f64,
    pub d_xx: DMatrix<f64>,
    pub h_xx: DMatrix<f64>,
    pub r: DVector<f64>,
    pub beta: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn write(
    path: &Path,
    n: usize,
    dim: usize,
    lambda: f64,
    d: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 8 * (d.len() + h.len() + r.len() + beta.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u64).to_le_bytes());
    buf.extend_from_slice(&lambda.to_le_bytes());
    for m in [d, h] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                buf.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    for v in r.iter().chain(beta.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                message: format!("dump truncated: needed {len} more bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }

    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_witness_dump(path: &Path) -> Result<WitnessDump> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(8)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not a witness dump (bad magic)".into(),
        });
    }
    let n = c.u64()?;
    let dim = c.u64()?;
    let lambda = c.f64s(1)?[0];
    let nd = n * dim;
    let d_xx = DMatrix::from_row_slice(nd, n, &c.f64s(nd * n)?);
    let h_xx = DMatrix::from_row_slice(nd, nd, &c.f64s(nd * nd)?);
    let r = DVector::from_vec(c.f64s(nd)?);
    let beta = DVector::from_vec(c.f64s(nd)?);
    Ok(WitnessDump {
        n,
        dim,
        lambda,
        d_xx,
        h_xx,
        r,
        beta,
    })
}
