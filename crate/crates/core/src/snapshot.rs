//! Binary field snapshots.
//!
//! Layout: a 32-byte header (`b"NSKF"`, version `u32`, `Nh u32`, `Nv u32`,
//! `Lh f64`, component count `u32`, parity bitmask `u32`, bit set = odd),
//! followed by each component as row-major little-endian `f64` samples.
//! Plane fields are written with `Nv = 1`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NskError, Result};
use crate::grid::{Grid, Parity, ScalarField};

pub const MAGIC: &[u8; 4] = b"NSKF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub nh: u32,
    pub nv: u32,
    pub lh: f64,
    pub components: Vec<ScalarField>,
}

impl Snapshot {
    pub fn from_grid(grid: &Grid, components: Vec<ScalarField>) -> Result<Self> {
        for c in &components {
            if c.len() != grid.len() {
                return Err(NskError::SizeMismatch {
                    expected: grid.len(),
                    found: c.len(),
                });
            }
        }
        Ok(Self {
            nh: grid.nh() as u32,
            nv: grid.nv() as u32,
            lh: grid.lh(),
            components,
        })
    }

    /// A single plane field (`Nv = 1`).
    pub fn plane(n: usize, lh: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(NskError::SizeMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        Ok(Self {
            nh: n as u32,
            nv: 1,
            lh,
            components: vec![ScalarField::new(values, Parity::Even)],
        })
    }

    fn samples(&self) -> usize {
        (self.nh as usize).pow(2) * self.nv as usize
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.components.len() > 32 {
            return Err(NskError::Format("at most 32 components".into()));
        }
        let mask = self
            .components
            .iter()
            .enumerate()
            .fold(0u32, |m, (i, c)| if c.parity == Parity::Odd { m | (1 << i) } else { m });
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&self.nh.to_le_bytes());
        header.extend_from_slice(&self.nv.to_le_bytes());
        header.extend_from_slice(&self.lh.to_le_bytes());
        header.extend_from_slice(&(self.components.len() as u32).to_le_bytes());
        header.extend_from_slice(&mask.to_le_bytes());
        w.write_all(&header)?;
        let n = self.samples();
        for c in &self.components {
            if c.len() != n {
                return Err(NskError::SizeMismatch {
                    expected: n,
                    found: c.len(),
                });
            }
            let bytes: Vec<u8> = c.values.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[0..4] != MAGIC {
            return Err(NskError::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(NskError::Format(format!("unsupported version {version}")));
        }
        let nh = u32_at(8);
        let nv = u32_at(12);
        let lh = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let count = u32_at(24) as usize;
        let mask = u32_at(28);
        let n = (nh as usize).pow(2) * nv as usize;
        let mut components = Vec::with_capacity(count);
        let mut buf = vec![0u8; n * 8];
        for i in 0..count {
            r.read_exact(&mut buf)?;
            let values = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let parity = if mask & (1 << i) != 0 {
                Parity::Odd
            } else {
                Parity::Even
            };
            components.push(ScalarField::new(values, parity));
        }
        Ok(Self {
            nh,
            nv,
            lh,
            components,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
