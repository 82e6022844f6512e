//! Multi-kernel Gaussian MMD between real and synthetic embedding sets.
//!
//! `mmd2` is the biased V-statistic (diagonal terms kept). The per-sample
//! variant treats one real point as a singleton set so each sample's
//! contribution to a clipped gradient stays bounded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, NodeId, Tape};

pub const BANDWIDTH_FLOOR: f64 = 1e-6;
pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// `k(x, x') = Σ_m exp(−‖x − x'‖² / (m · base_bandwidth))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiKernel {
    pub base_bandwidth: f64,
    pub multipliers: Vec<f64>,
}

impl MultiKernel {
    pub fn new(base_bandwidth: f64, multipliers: Vec<f64>) -> Result<Self> {
        if !(base_bandwidth > 0.0) || multipliers.is_empty() || multipliers.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidths must be positive (base {base_bandwidth}, multipliers {multipliers:?})"
            )));
        }
        Ok(Self {
            base_bandwidth,
            multipliers,
        })
    }

    pub fn with_default_multipliers(base_bandwidth: f64) -> Result<Self> {
        Self::new(base_bandwidth, DEFAULT_MULTIPLIERS.to_vec())
    }

    pub fn count(&self) -> usize {
        self.multipliers.len()
    }

    /// Kernel value as a function of the squared distance.
    pub fn eval_sq(&self, d2: f64) -> f64 {
        self.multipliers
            .iter()
            .map(|m| (-d2 / (m * self.base_bandwidth)).exp())
            .sum()
    }

    /// `∂k/∂(d²)`.
    pub(crate) fn deriv_sq(&self, d2: f64) -> f64 {
        self.multipliers
            .iter()
            .map(|m| {
                let bw = m * self.base_bandwidth;
                -(-d2 / bw).exp() / bw
            })
            .sum()
    }
}

/// Median of pairwise squared distances (lower median on ties), floored.
pub fn median_heuristic(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "median heuristic needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]));
        }
    }
    let mid = (d.len() - 1) / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(m.max(BANDWIDTH_FLOOR))
}

pub fn kernel_eval(x: &[f64], x2: &[f64], k: &MultiKernel) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::dim("kernel_eval", x.len(), x2.len()));
    }
    Ok(k.eval_sq(sq_dist(x, x2)))
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], k: &MultiKernel) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += k.eval_sq(sq_dist(x, y));
        }
    }
    s / (a.len() * b.len()) as f64
}

fn check_sets(op: &'static str, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument(format!("{op}: empty point set")));
    }
    let d = x[0].len();
    if x.iter().chain(y).any(|p| p.len() != d) {
        return Err(Error::dim(op, format!("point dim {d}"), "mixed dims"));
    }
    Ok(())
}

/// Biased squared MMD between two point sets.
pub fn mmd2(real: &[Vec<f64>], synth: &[Vec<f64>], k: &MultiKernel) -> Result<f64> {
    check_sets("mmd2", real, synth)?;
    Ok(mean_kernel(real, real, k) + mean_kernel(synth, synth, k) - 2.0 * mean_kernel(real, synth, k))
}

/// `mmd2({x}, synth)`.
pub fn per_sample_mmd2(x: &[f64], synth: &[Vec<f64>], k: &MultiKernel) -> Result<f64> {
    let xs = [x.to_vec()];
    check_sets("per_sample_mmd2", &xs, synth)?;
    Ok(k.count() as f64 + mean_kernel(synth, synth, k) - 2.0 * mean_kernel(&xs, synth, k))
}

/// Cotangents of `per_sample_mmd2(x, synth)` w.r.t. each synthetic point,
/// excluding the synth–synth term (which does not depend on `x`; see
/// [`synth_self_term_cotangents`]).
pub(crate) fn cross_term_cotangents(x: &[f64], synth: &[Vec<f64>], k: &MultiKernel) -> Vec<Vec<f64>> {
    let c = -2.0 / synth.len() as f64;
    synth
        .iter()
        .map(|s| {
            let d2 = sq_dist(x, s);
            // ∂k(x,s)/∂s = k'(d²)·2(s − x)
            let g = c * k.deriv_sq(d2) * 2.0;
            s.iter().zip(x).map(|(si, xi)| g * (si - xi)).collect()
        })
        .collect()
}

/// Cotangents of `(1/B²) Σ_jk k(s_j, s_k)` w.r.t. each `s_j`.
pub(crate) fn synth_self_term_cotangents(synth: &[Vec<f64>], k: &MultiKernel) -> Vec<Vec<f64>> {
    let b = synth.len() as f64;
    let c = 2.0 / (b * b);
    synth
        .iter()
        .map(|sj| {
            let mut g = vec![0.0; sj.len()];
            for sk in synth {
                let w = c * k.deriv_sq(sq_dist(sj, sk)) * 2.0;
                for (gi, (a, bk)) in g.iter_mut().zip(sj.iter().zip(sk)) {
                    *gi += w * (a - bk);
                }
            }
            g
        })
        .collect()
}

/// Kernel between two tape nodes.
pub(crate) fn kernel_on_tape(tape: &mut Tape<'_>, a: NodeId, b: NodeId, k: &MultiKernel) -> NodeId {
    let d = tape.sub(a, b);
    let d2 = tape.sum_sq(d);
    let mut acc: Option<NodeId> = None;
    for m in &k.multipliers {
        let s = tape.scale(d2, -1.0 / (m * k.base_bandwidth));
        let e = tape.exp(s);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, e),
            None => e,
        });
    }
    acc.expect("at least one multiplier")
}

/// `per_sample_mmd2` with the synthetic points as tape nodes.
pub(crate) fn per_sample_mmd2_on_tape(
    tape: &mut Tape<'_>,
    x: &[f64],
    synth: &[NodeId],
    k: &MultiKernel,
) -> NodeId {
    let b = synth.len() as f64;
    let xn = tape.constant(x.to_vec());
    let mut cross = Vec::with_capacity(synth.len());
    for s in synth {
        cross.push(kernel_on_tape(tape, xn, *s, k));
    }
    let mut own = Vec::with_capacity(synth.len() * synth.len());
    for a in synth {
        for c in synth {
            own.push(kernel_on_tape(tape, *a, *c, k));
        }
    }
    let cross = tape.concat(&cross);
    let cross = tape.sum(cross);
    let cross = tape.scale(cross, -2.0 / b);
    let own = tape.concat(&own);
    let own = tape.sum(own);
    let own = tape.scale(own, 1.0 / (b * b));
    let total = tape.add(cross, own);
    tape.shift(total, k.count() as f64)
}
