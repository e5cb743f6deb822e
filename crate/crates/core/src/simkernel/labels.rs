use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `T × (l+1)` occupancy distributions; row `t` is the law at the end of
/// period `t+1`, the last column collects `>= l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMatrix {
    rows: Vec<Vec<f64>>,
}

impl LabelMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = LabelMatrix { rows };
        m.validate(1e-9)?;
        Ok(m)
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        LabelMatrix { rows }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let Some(w) = self.rows.first().map(Vec::len) else {
            return invalid("label matrix has no rows");
        };
        for (t, r) in self.rows.iter().enumerate() {
            if r.len() != w {
                return invalid(format!("row {t} has width {}, expected {w}", r.len()));
            }
            if r.iter().any(|p| !(0.0..=1.0 + tol).contains(p)) {
                return invalid(format!("row {t} has entries outside [0, 1]"));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > tol {
                return invalid(format!("row {t} sums to {s}"));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }

    /// Mean occupancy per period (the last bin counts as `l`).
    pub fn means(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().enumerate().map(|(i, p)| i as f64 * p).sum())
            .collect()
    }

    /// Raw binary form: `u32 T`, `u32 l+1`, then row-major little-endian f32.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let t = u32::try_from(self.horizon()).map_err(|_| Error::Format("horizon too large".into()))?;
        let c = u32::try_from(self.width()).map_err(|_| Error::Format("width too large".into()))?;
        w.write_all(&t.to_le_bytes())?;
        w.write_all(&c.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.horizon() * self.width() * 4);
        for v in self.rows.iter().flatten() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head).map_err(|_| Error::Format("truncated label header".into()))?;
        let t = u32::from_le_bytes(head[..4].try_into().expect("4 bytes")) as usize;
        let c = u32::from_le_bytes(head[4..].try_into().expect("4 bytes")) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != t * c * 4 {
            return Err(Error::Format(format!(
                "label payload has {} bytes, header implies {}",
                body.len(),
                t * c * 4
            )));
        }
        let vals: Vec<f64> = body
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        let rows = vals.chunks(c.max(1)).map(<[f64]>::to_vec).collect();
        let m = LabelMatrix { rows };
        m.validate(1e-5)?;
        Ok(m)
    }
}
