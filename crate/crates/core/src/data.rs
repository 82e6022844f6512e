//! Labeled embedding sets and the `FHVE1` binary dataset format.
//!
//! File layout (all little-endian): magic `FHVE1`, then `d_x`, `|Y|` and
//! `count` as `u32`, then `count` records of `d_x` `f64` values followed by
//! a `u32` label.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 5] = b"FHVE1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub dim: usize,
    pub num_classes: usize,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
}

impl LabeledSet {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        Self {
            dim,
            num_classes,
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, num_classes: usize, xs: Vec<Vec<f64>>, ys: Vec<usize>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::dim("LabeledSet", format!("{} points", xs.len()), format!("{} labels", ys.len())));
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::dim("LabeledSet", format!("dim {dim}"), format!("point of len {}", bad.len())));
        }
        if let Some(&y) = ys.iter().find(|y| **y >= num_classes) {
            return Err(Error::UnknownClass { class: y, num_classes });
        }
        Ok(Self {
            dim,
            num_classes,
            xs,
            ys,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: usize) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert!(y < self.num_classes);
        self.xs.push(x);
        self.ys.push(y);
    }

    pub fn extend_from(&mut self, other: &LabeledSet) {
        self.xs.extend(other.xs.iter().cloned());
        self.ys.extend(other.ys.iter().copied());
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            dim: self.dim,
            num_classes: self.num_classes,
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &y in &self.ys {
            c[y] += 1;
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.len() * (8 * self.dim + 4));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (x, y) in self.xs.iter().zip(&self.ys) {
            for v in x {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(*y as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 17 || &bytes[..5] != DATASET_MAGIC {
            return Err(bad("missing FHVE1 header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (dim, k, count) = (u32_at(5), u32_at(9), u32_at(13));
        let rec = 8 * dim + 4;
        if dim == 0 || bytes.len() != 17 + count * rec {
            return Err(bad(format!(
                "expected {} bytes for {count} records of dim {dim}, found {}",
                17 + count * rec,
                bytes.len()
            )));
        }
        let mut set = LabeledSet::new(dim, k);
        for r in 0..count {
            let base = 17 + r * rec;
            let x = (0..dim)
                .map(|j| f64::from_le_bytes(bytes[base + 8 * j..base + 8 * j + 8].try_into().unwrap()))
                .collect();
            let y = u32_at(base + 8 * dim);
            if y >= k {
                return Err(bad(format!("record {r} has label {y} >= {k}")));
            }
            set.xs.push(x);
            set.ys.push(y);
        }
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
