use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::norm2;

/// Where the Gaussian noise std is divided by the batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `mean(clip(g)) + N(0, σ²C²I)`: noise added after averaging, unscaled.
    AsWritten,
    /// `mean(clip(g)) + N(0, (σC/|B|)² I)`: the usual DP-SGD convention.
    PerBatch,
}

/// A fixed noise multiplier, or `"auto"` to calibrate it to the target budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSetting {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl NoiseSetting {
    pub const AUTO: NoiseSetting = NoiseSetting::Auto(AutoTag::Auto);

    pub fn fixed(&self) -> Option<f64> {
        match self {
            NoiseSetting::Fixed(s) => Some(*s),
            NoiseSetting::Auto(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DPConfig {
    /// When false, per-sample gradients are still clipped but no noise is
    /// added and no privacy is accounted.
    pub enabled: bool,
    pub clip_bound: f64,
    pub noise_multiplier: NoiseSetting,
    pub target_epsilon: f64,
    pub delta: f64,
    pub noise_mode: NoiseMode,
    /// ℓ₂ clip applied to embeddings before the class-statistics release.
    pub stats_clip: f64,
    /// Noise multiplier of the class-statistics release.
    pub stats_noise_multiplier: f64,
}

impl Default for DPConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            clip_bound: 1.5,
            noise_multiplier: NoiseSetting::AUTO,
            target_epsilon: 1.0,
            delta: 1e-4,
            noise_mode: NoiseMode::PerBatch,
            stats_clip: 8.0,
            stats_noise_multiplier: 20.0,
        }
    }
}

impl DPConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            noise_multiplier: NoiseSetting::Fixed(0.0),
            stats_noise_multiplier: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0) {
            return Err(Error::config("dp.clip_bound", "must be positive"));
        }
        if let Some(s) = self.noise_multiplier.fixed() {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::config("dp.noise_multiplier", "must be a finite value >= 0 or \"auto\""));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("dp.delta", "must lie in (0, 1)"));
        }
        if !(self.target_epsilon > 0.0) {
            return Err(Error::config("dp.target_epsilon", "must be positive"));
        }
        if !(self.stats_clip > 0.0) {
            return Err(Error::config("dp.stats_clip", "must be positive"));
        }
        if !(self.stats_noise_multiplier >= 0.0) {
            return Err(Error::config("dp.stats_noise_multiplier", "must be >= 0"));
        }
        Ok(())
    }
}

/// Factor that brings `g` within ℓ₂ norm `bound`, shrunk past any rounding
/// so the scaled norm never exceeds `bound`.
fn clip_scale(g: &[f64], bound: f64) -> f64 {
    let n = norm2(g);
    if n <= bound {
        return 1.0;
    }
    let mut c = bound / n;
    while c > 0.0 && norm2(&g.iter().map(|v| v * c).collect::<Vec<_>>()) > bound {
        c *= 1.0 - f64::EPSILON;
    }
    c
}

/// Scales `g` down to ℓ₂ norm `bound` if it is longer.
pub fn clip(g: &[f64], bound: f64) -> Vec<f64> {
    let c = clip_scale(g, bound);
    if c == 1.0 {
        g.to_vec()
    } else {
        g.iter().map(|v| v * c).collect()
    }
}

fn check_batch(grads: &[Vec<f64>]) -> Result<usize> {
    let first = grads
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty gradient batch".into()))?;
    let d = first.len();
    if let Some(bad) = grads.iter().find(|g| g.len() != d) {
        return Err(Error::dim("privatize", d, bad.len()));
    }
    Ok(d)
}

/// Plain average of per-sample gradients.
pub fn mean_gradient(grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = check_batch(grads)?;
    let mut out = vec![0.0; d];
    for g in grads {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    let inv = 1.0 / grads.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// `(1/|B|) Σ clip(g_j, C) + N(0, s² I)` with `s = σC` or `σC/|B|` per `mode`.
pub fn privatize<R: Rng + ?Sized>(
    grads: &[Vec<f64>],
    clip_bound: f64,
    sigma: f64,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = check_batch(grads)?;
    let mut out = vec![0.0; d];
    for g in grads {
        let c = clip_scale(g, clip_bound);
        for (o, v) in out.iter_mut().zip(g) {
            *o += c * v;
        }
    }
    let b = grads.len() as f64;
    let std = match mode {
        NoiseMode::AsWritten => sigma * clip_bound,
        NoiseMode::PerBatch => sigma * clip_bound / b,
    };
    for o in &mut out {
        *o /= b;
        if std > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            *o += std * n;
        }
    }
    Ok(out)
}
