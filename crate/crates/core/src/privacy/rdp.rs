//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Integer orders use the binomial expansion of `E[(μ_mix/μ_0)^α]`;
//! fractional orders use the two-sided series with Gaussian tail (erfc)
//! factors. Both are evaluated in log space.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Rényi orders tracked by every ledger.
pub const RDP_ORDERS: [f64; 65] = {
    let mut o = [0.0; 65];
    o[0] = 1.25;
    o[1] = 1.5;
    let mut i = 2;
    while i < 65 {
        o[i] = i as f64;
        i += 1;
    }
    o
};

/// Upper end of the noise-multiplier search in [`calibrate_sigma`].
pub const SIGMA_CAP: f64 = 200.0;

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    debug_assert!(a >= b, "log_sub({a}, {b})");
    a + (-(b - a).exp()).ln_1p()
}

fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        erfc(x).ln()
    } else {
        // asymptotic expansion; erfc underflows well before it matters
        let x2 = x * x;
        -x2 - x.ln() - 0.5 * std::f64::consts::PI.ln() + (1.0 - 0.5 / x2 + 0.75 / (x2 * x2)).ln()
    }
}

fn log_a_integer(q: f64, sigma: f64, alpha: u32) -> f64 {
    let a = alpha as f64;
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let log_binom = ln_gamma(a + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(a - kf + 1.0);
        let term = log_binom + kf * lq + (a - kf) * l1q + (kf * kf - kf) / (2.0 * sigma * sigma);
        acc = log_add(acc, term);
    }
    acc
}

fn log_a_fractional(q: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let z0 = s2 * (1.0 / q - 1.0).ln() + 0.5;
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let (mut a0, mut a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut coef = 1.0_f64;
    let mut i = 0u32;
    loop {
        let fi = i as f64;
        let j = alpha - fi;
        let lc = coef.abs().ln();
        let lt0 = lc + fi * lq + j * l1q;
        let lt1 = lc + j * lq + fi * l1q;
        let le0 = 0.5f64.ln() + log_erfc((fi - z0) / (std::f64::consts::SQRT_2 * sigma));
        let le1 = 0.5f64.ln() + log_erfc((z0 - j) / (std::f64::consts::SQRT_2 * sigma));
        let ls0 = lt0 + (fi * fi - fi) / (2.0 * s2) + le0;
        let ls1 = lt1 + (j * j - j) / (2.0 * s2) + le1;
        if coef > 0.0 {
            a0 = log_add(a0, ls0);
            a1 = log_add(a1, ls1);
        } else {
            a0 = log_sub(a0, ls0);
            a1 = log_sub(a1, ls1);
        }
        if ls0.max(ls1) < -30.0 || i > 10_000 {
            break;
        }
        coef *= (alpha - fi) / (fi + 1.0);
        i += 1;
    }
    log_add(a0, a1)
}

/// One-step RDP at order `alpha` of the Gaussian mechanism with noise
/// multiplier `sigma`, Poisson-subsampled at rate `q`.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: f64) -> f64 {
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    if q <= 0.0 {
        return 0.0;
    }
    if q >= 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 {
        log_a_integer(q, sigma, alpha as u32)
    } else {
        log_a_fractional(q, sigma, alpha)
    };
    log_a / (alpha - 1.0)
}

fn step_vector(q: f64, sigma: f64) -> Vec<f64> {
    RDP_ORDERS
        .iter()
        .map(|a| rdp_subsampled_gaussian(q, sigma, *a))
        .collect()
}

/// Running per-order RDP totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    orders: Vec<f64>,
    rdp: Vec<f64>,
    steps: usize,
    #[serde(skip)]
    cache: Option<(f64, f64, Vec<f64>)>,
}

impl Default for PrivacyLedger {
    fn default() -> Self {
        Self::new()
    }
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self {
            orders: RDP_ORDERS.to_vec(),
            rdp: vec![0.0; RDP_ORDERS.len()],
            steps: 0,
            cache: None,
        }
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// True once a noiseless step has been recorded.
    pub fn is_infinite(&self) -> bool {
        self.rdp.iter().any(|v| v.is_infinite())
    }

    /// Records one subsampled Gaussian step. `sigma = 0` makes ε infinite.
    pub fn rdp_step(&mut self, q: f64, sigma: f64) -> Result<()> {
        self.rdp_steps(q, sigma, 1)
    }

    /// Records `count` identical steps.
    pub fn rdp_steps(&mut self, q: f64, sigma: f64, count: usize) -> Result<()> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidArgument(format!("sampling rate {q} outside (0, 1]")));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise multiplier {sigma} is negative")));
        }
        let per_step = match &self.cache {
            Some((cq, cs, v)) if *cq == q && *cs == sigma => v.clone(),
            _ => {
                let v = step_vector(q, sigma);
                self.cache = Some((q, sigma, v.clone()));
                v
            }
        };
        for (acc, s) in self.rdp.iter_mut().zip(&per_step) {
            *acc += s * count as f64;
        }
        self.steps += count;
        Ok(())
    }

    /// Adds another ledger's totals (sequential composition).
    pub fn compose(&mut self, other: &PrivacyLedger) {
        for (a, b) in self.rdp.iter_mut().zip(&other.rdp) {
            *a += b;
        }
        self.steps += other.steps;
    }

    /// `min_α [ rdp(α) + ln(1/δ)/(α − 1) ]`.
    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        Ok(self.epsilon_with_order(delta)?.0)
    }

    /// ε and the order attaining it.
    pub fn epsilon_with_order(&self, delta: f64) -> Result<(f64, f64)> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("epsilon of an empty ledger".into()));
        }
        let log_inv_delta = (1.0 / delta).ln();
        let mut best = (f64::INFINITY, f64::NAN);
        for (a, r) in self.orders.iter().zip(&self.rdp) {
            let eps = r + log_inv_delta / (a - 1.0);
            if eps < best.0 {
                best = (eps, *a);
            }
        }
        Ok(best)
    }
}

/// Smallest noise multiplier (to 1e-3) for which `steps` subsampled steps at
/// rate `q` stay within `target_epsilon` at `delta`.
pub fn calibrate_sigma(target_epsilon: f64, delta: f64, q: f64, steps: usize) -> Result<f64> {
    calibrate_sigma_with_base(target_epsilon, delta, q, steps, None)
}

/// As [`calibrate_sigma`], with an already-spent ledger composed in.
pub fn calibrate_sigma_with_base(
    target_epsilon: f64,
    delta: f64,
    q: f64,
    steps: usize,
    base: Option<&PrivacyLedger>,
) -> Result<f64> {
    if !(target_epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("target epsilon {target_epsilon} must be positive")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("calibration needs at least one step".into()));
    }
    let eps_at = |sigma: f64| -> Result<f64> {
        let mut l = base.cloned().unwrap_or_default();
        l.rdp_steps(q, sigma, steps)?;
        l.epsilon(delta)
    };
    if eps_at(SIGMA_CAP)? > target_epsilon {
        return Err(Error::BudgetUnreachable(format!(
            "ε ≤ {target_epsilon} at δ = {delta} needs σ > {SIGMA_CAP} (q = {q}, T = {steps})"
        )));
    }
    let (mut lo, mut hi) = (0.0, SIGMA_CAP);
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if mid > 0.0 && eps_at(mid)? <= target_epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
