use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{norm2, Mat};
use crate::error::{Error, Result};

/// One named slice of a flat parameter vector. Matrices carry their shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn is_matrix(&self) -> bool {
        self.cols > 1 && self.rows > 1
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Deterministic, gap-free tiling of a flat vector into named segments.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows x cols` matrix segment and returns its offset.
    pub fn push_matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.push(name.into(), rows, cols)
    }

    /// Appends a vector segment and returns its offset.
    pub fn push_vector(&mut self, name: impl Into<String>, len: usize) -> usize {
        self.push(name.into(), len, 1)
    }

    fn push(&mut self, name: String, rows: usize, cols: usize) -> usize {
        assert!(
            self.segments.iter().all(|s| s.name != name),
            "duplicate segment {name}"
        );
        let offset = self.total;
        let len = rows * cols;
        self.segments.push(Segment {
            name,
            offset,
            len,
            rows,
            cols,
        });
        self.total += len;
        offset
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn offset_of(&self, name: &str) -> usize {
        self.segment(name)
            .unwrap_or_else(|| panic!("no segment named {name}"))
            .offset
    }

    /// Checks the tiling invariant: segments are contiguous and cover `len()`.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.segments {
            if s.offset != cursor || s.len != s.rows * s.cols {
                return Err(Error::LayoutMismatch(format!(
                    "segment {} at {} (len {}) breaks tiling at {}",
                    s.name, s.offset, s.len, cursor
                )));
            }
            cursor += s.len;
        }
        if cursor != self.total {
            return Err(Error::LayoutMismatch(format!(
                "segments cover {cursor} of {}",
                self.total
            )));
        }
        Ok(())
    }
}

/// A flat `f64` vector with a shared named-segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![0.0; layout.len()];
        Self { layout, data }
    }

    pub fn from_data(layout: Arc<ParamLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "data len {} vs layout len {}",
                data.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        let s = self
            .layout
            .segment(name)
            .unwrap_or_else(|| panic!("no segment named {name}"));
        &self.data[s.range()]
    }

    pub fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let s = self
            .layout
            .segment(name)
            .unwrap_or_else(|| panic!("no segment named {name}"))
            .clone();
        &mut self.data[s.range()]
    }

    /// Copies a matrix-shaped segment out as a [`Mat`].
    pub fn matrix(&self, name: &str) -> Result<Mat> {
        let s = self
            .layout
            .segment(name)
            .ok_or_else(|| Error::LayoutMismatch(format!("no segment named {name}")))?;
        Mat::new(s.rows, s.cols, self.data[s.range()].to_vec())
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn all_finite(&self) -> bool {
        super::all_finite(&self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_the_vector() {
        let mut l = ParamLayout::new();
        l.push_matrix("w", 3, 2);
        l.push_vector("b", 3);
        l.push_vector("v", 4);
        assert_eq!(l.len(), 13);
        l.validate().unwrap();
        assert_eq!(l.offset_of("b"), 6);
        assert!(l.segment("w").unwrap().is_matrix());
        assert!(!l.segment("b").unwrap().is_matrix());
    }

    #[test]
    fn from_data_checks_length() {
        let mut l = ParamLayout::new();
        l.push_vector("b", 3);
        let l = Arc::new(l);
        assert!(ParamVector::from_data(l.clone(), vec![1.0; 2]).is_err());
        let p = ParamVector::from_data(l, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.segment("b"), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matrix_segment_round_trips() {
        let mut l = ParamLayout::new();
        l.push_vector("pad", 1);
        l.push_matrix("w", 2, 2);
        let p = ParamVector::from_data(Arc::new(l), vec![9.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = p.matrix("w").unwrap();
        assert_eq!(m.get(1, 0), 3.0);
    }
}
