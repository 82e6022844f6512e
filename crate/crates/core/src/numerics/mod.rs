//! Dense vector/matrix arithmetic, flat parameter vectors, and a small
//! reverse-mode tape over vector-valued nodes.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; matrices are row-major [`Mat`].

mod finite_diff;
mod params;
mod tape;

pub use finite_diff::finite_diff;
pub use params::{ParamLayout, ParamVector, Segment};
pub use tape::{BlockId, Gradients, NodeId, Tape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("Mat::new", format!("{rows}x{cols}"), "positive dims"));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Mat::new",
                format!("{rows}x{cols}"),
                format!("data len {}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("Mat::from_rows", "ragged rows", c));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim(
                "matvec",
                format!("W {}x{}", self.rows, self.cols),
                format!("x len {}", x.len()),
            ));
        }
        Ok(matvec_raw(&self.data, self.rows, self.cols, x))
    }

    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::dim(
                "matvec_t",
                format!("W {}x{}", self.rows, self.cols),
                format!("y len {}", y.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            axpy(yr, self.row(r), &mut out);
        }
        Ok(out)
    }
}

/// `W x + b`.
pub fn affine(x: &[f64], w: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols || b.len() != w.rows {
        return Err(Error::dim(
            "affine",
            format!("W {}x{}", w.rows, w.cols),
            format!("x len {}, b len {}", x.len(), b.len()),
        ));
    }
    let mut y = matvec_raw(&w.data, w.rows, w.cols, x);
    for (yi, bi) in y.iter_mut().zip(b) {
        *yi += bi;
    }
    Ok(y)
}

#[inline]
pub(crate) fn matvec_raw(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|v| v * c).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Projects `v` onto the ℓ₂ ball of the given radius, in place.
pub fn project_l2_ball(v: &mut [f64], radius: f64) {
    let n = norm2(v);
    if n > radius {
        let c = radius / n;
        v.iter_mut().for_each(|x| *x *= c);
    }
}

pub fn one_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_basis_vector() {
        let w = Mat::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        assert_eq!(affine(&[1.0, 0.0], &w, &[0.0, 0.0]).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn affine_zero_input_returns_bias() {
        let w = Mat::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        assert_eq!(affine(&[0.0, 0.0], &w, &[7.0, -1.0]).unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn affine_hand_computed() {
        let w = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(affine(&[1.0, 1.0], &w, &[1.0, 1.0]).unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn affine_dimension_error_names_shapes() {
        let w = Mat::zeros(2, 3);
        let err = affine(&[1.0, 2.0], &w, &[0.0, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
        assert!(msg.contains("x len 2"), "{msg}");
    }

    #[test]
    fn projection_keeps_inside_points() {
        let mut v = vec![0.3, 0.4];
        project_l2_ball(&mut v, 1.0);
        assert_eq!(v, vec![0.3, 0.4]);
        let mut w = vec![3.0, 4.0];
        project_l2_ball(&mut w, 1.0);
        assert!(norm2(&w) <= 1.0);
        assert!((w[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) > 0.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn small() -> impl Strategy<Value = f64> {
            -5.0..5.0f64
        }

        proptest! {
            #[test]
            fn affine_is_linear(
                w in proptest::collection::vec(small(), 6),
                b in proptest::collection::vec(small(), 2),
                x in proptest::collection::vec(small(), 3),
                y in proptest::collection::vec(small(), 3),
                alpha in small(),
                beta in small(),
            ) {
                let w = Mat::new(2, 3, w).unwrap();
                let mix: Vec<f64> = x.iter().zip(&y).map(|(a, c)| alpha * a + beta * c).collect();
                let lhs = affine(&mix, &w, &b).unwrap();
                let zero = [0.0, 0.0];
                let fx = affine(&x, &w, &zero).unwrap();
                let fy = affine(&y, &w, &zero).unwrap();
                for i in 0..2 {
                    let rhs = alpha * fx[i] + beta * fy[i] + b[i];
                    prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * 10.0);
                }
            }
        }
    }
}
