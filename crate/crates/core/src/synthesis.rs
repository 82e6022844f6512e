//! Global generation after training: privatized class statistics, a neutral
//! meta-code fitted to them, mixtures of codes, and sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cvae::{decode, decode_on_tape, reparameterize, reparameterize_on_tape, DecoderParams};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::hypernet::{
    domain_on_tape, generate_class_prior, generate_decoder, modulation_on_tape, prior_head_on_tape, ClassPrior,
    GeneratedDecoder,
};
use crate::model::Architecture;
use crate::numerics::{norm2, project_l2_ball, ParamVector, Tape};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Per-class noisy mean and diagonal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Noisy counts.
    pub counts: Vec<f64>,
    /// Classes that fell back to the global statistics.
    pub fallback: Vec<bool>,
}

impl ClassStats {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    if std > 0.0 {
        let n: f64 = StandardNormal.sample(rng);
        std * n
    } else {
        0.0
    }
}

/// Each client clips its embeddings to `clip_x` and reports per-class sums,
/// sums of squares and counts. The server adds Gaussian noise with std
/// `σ·clip_x`, `σ·clip_x²` and `σ` respectively, then forms means and
/// floored variances.
pub fn dp_class_statistics<R: Rng + ?Sized>(
    clients: &[LabeledSet],
    clip_x: f64,
    sigma_stat: f64,
    rng: &mut R,
) -> Result<ClassStats> {
    let first = clients
        .first()
        .ok_or_else(|| Error::InvalidArgument("class statistics need at least one client".into()))?;
    if !(clip_x > 0.0) || !(sigma_stat >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip {clip_x} must be positive and noise {sigma_stat} nonnegative"
        )));
    }
    let (d, k) = (first.dim, first.num_classes);
    let mut sums = vec![vec![0.0; d]; k];
    let mut sq = vec![vec![0.0; d]; k];
    let mut counts = vec![0.0; k];
    for c in clients {
        if c.dim != d || c.num_classes != k {
            return Err(Error::dim("dp_class_statistics", format!("{d}x{k}"), format!("{}x{}", c.dim, c.num_classes)));
        }
        for (x, &y) in c.xs.iter().zip(&c.ys) {
            let n = norm2(x);
            let s = if n > clip_x { clip_x / n } else { 1.0 };
            for j in 0..d {
                let v = s * x[j];
                sums[y][j] += v;
                sq[y][j] += v * v;
            }
            counts[y] += 1.0;
        }
    }
    for y in 0..k {
        for v in sums[y].iter_mut() {
            *v += gaussian(rng, sigma_stat * clip_x);
        }
        for v in sq[y].iter_mut() {
            *v += gaussian(rng, sigma_stat * clip_x * clip_x);
        }
        counts[y] += gaussian(rng, sigma_stat);
    }

    let moments = |s: &[f64], q: &[f64], c: f64| -> (Vec<f64>, Vec<f64>) {
        let mean: Vec<f64> = s.iter().map(|v| v / c).collect();
        let var = q
            .iter()
            .zip(&mean)
            .map(|(v, m)| (v / c - m * m).max(VARIANCE_FLOOR))
            .collect();
        (mean, var)
    };
    let usable: Vec<bool> = counts.iter().map(|&c| c >= 1.0).collect();
    let mut g_sum = vec![0.0; d];
    let mut g_sq = vec![0.0; d];
    let mut g_count = 0.0;
    for y in (0..k).filter(|&y| usable[y]) {
        for j in 0..d {
            g_sum[j] += sums[y][j];
            g_sq[j] += sq[y][j];
        }
        g_count += counts[y];
    }
    let mut stats = ClassStats {
        means: Vec::with_capacity(k),
        variances: Vec::with_capacity(k),
        counts: counts.clone(),
        fallback: vec![false; k],
    };
    for y in 0..k {
        let (m, v) = if usable[y] {
            moments(&sums[y], &sq[y], counts[y])
        } else {
            if g_count < 1.0 {
                return Err(Error::InvalidArgument("no class has a usable noisy count".into()));
            }
            log::warn!("class {y} has noisy count {:.3}; using global statistics", counts[y]);
            stats.fallback[y] = true;
            moments(&g_sum, &g_sq, g_count)
        };
        stats.means.push(m);
        stats.variances.push(v);
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPrior {
    /// `z ~ p_ω(z | y)` from the generated class prior.
    #[default]
    ClassPrior,
    /// `z ~ N(0, I)`.
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    /// Weight of the covariance term.
    pub beta: f64,
    /// Monte-Carlo draws per class.
    pub samples: usize,
    pub steps: usize,
    pub lr: f64,
    pub sampling_prior: SamplingPrior,
    /// Size of the balanced global synthetic set.
    pub count: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            samples: 256,
            steps: 500,
            lr: 1e-2,
            sampling_prior: SamplingPrior::ClassPrior,
            count: 1500,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("synthesis.beta", "must be finite and >= 0"));
        }
        if self.samples < 2 {
            return Err(Error::config("synthesis.samples", "must be at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("synthesis.lr", "must be positive"));
        }
        if self.count == 0 {
            return Err(Error::config("synthesis.count", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaCode {
    pub code: Vec<f64>,
    /// Objective at `code`.
    pub objective: f64,
    /// Objective at the zero initialization.
    pub initial_objective: f64,
    pub iterations: usize,
    /// Step index of the returned iterate; 0 is the initialization.
    pub best_step: usize,
}

/// Common random numbers for the meta-code objective, `[class][sample]`.
fn crn_noise<R: Rng + ?Sized>(rng: &mut R, k: usize, s: usize, dz: usize) -> Vec<Vec<Vec<f64>>> {
    (0..k)
        .map(|_| {
            (0..s)
                .map(|_| (0..dz).map(|_| StandardNormal.sample(rng)).collect())
                .collect()
        })
        .collect()
}

/// Σ_y ‖x̄_y − μ̂_y‖² + β‖C_y − diag Σ̂_y‖²_F and its gradient w.r.t. `v`.
fn meta_objective(
    arch: &Architecture,
    phi: &ParamVector,
    stats: &ClassStats,
    beta: f64,
    noise: &[Vec<Vec<f64>>],
    code: &[f64],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let d = arch.cfg.data_dim;
    let mut tape = Tape::new();
    let fb = tape.register_frozen(phi.as_slice());
    let vb = tape.register(code);
    let v = tape.param(vb, 0, code.len());
    let mods = modulation_on_tape(&mut tape, arch, fb, v);
    let u = domain_on_tape(&mut tape, arch, fb, v);
    let mut total = 0.0;
    let mut seeds: Vec<(crate::numerics::NodeId, Vec<f64>)> = Vec::new();
    for (y, eps) in noise.iter().enumerate() {
        let (mu, ls) = prior_head_on_tape(&mut tape, arch, fb, u, y);
        let nodes: Vec<_> = eps
            .iter()
            .map(|e| {
                let z = reparameterize_on_tape(&mut tape, mu, ls, e);
                decode_on_tape(&mut tape, arch, fb, &mods, z, y)
            })
            .collect();
        let xs: Vec<&[f64]> = nodes.iter().map(|n| tape.value(*n)).collect();
        let s = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in &xs {
            for (m, xi) in mean.iter_mut().zip(*x) {
                *m += xi / s;
            }
        }
        let centered: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
        // E = C − diag Σ̂ with C the unbiased sample covariance.
        let mut e = vec![0.0; d * d];
        for c in &centered {
            for i in 0..d {
                for j in 0..d {
                    e[i * d + j] += c[i] * c[j] / (s - 1.0);
                }
            }
        }
        for i in 0..d {
            e[i * d + i] -= stats.variances[y][i];
        }
        let dm: Vec<f64> = mean.iter().zip(&stats.means[y]).map(|(a, b)| a - b).collect();
        total += dm.iter().map(|x| x * x).sum::<f64>() + beta * e.iter().map(|x| x * x).sum::<f64>();
        if want_grad {
            for (node, c) in nodes.iter().zip(&centered) {
                let mut g: Vec<f64> = dm.iter().map(|x| 2.0 * x / s).collect();
                if beta != 0.0 {
                    let w = 4.0 * beta / (s - 1.0);
                    for i in 0..d {
                        let row = &e[i * d..(i + 1) * d];
                        g[i] += w * row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                seeds.push((*node, g));
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: format!("in the meta-code objective at ‖v‖ = {:.4}", norm2(code)),
        });
    }
    if !want_grad {
        return Ok((total, Vec::new()));
    }
    let refs: Vec<_> = seeds.iter().map(|(n, g)| (*n, g.as_slice())).collect();
    let mut g = tape.backward_many(&refs)?;
    Ok((total, g.take(vb)))
}

/// Value of the meta-code objective at `code` with common random numbers
/// drawn from `rng` the same way [`fit_meta_code`] draws them.
pub fn meta_code_objective<R: Rng + ?Sized>(
    arch: &Architecture,
    phi: &ParamVector,
    stats: &ClassStats,
    beta: f64,
    samples: usize,
    code: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let noise = crn_noise(rng, arch.cfg.num_classes, samples, arch.cfg.latent_dim);
    meta_objective(arch, phi, stats, beta, &noise, code, false).map(|r| r.0)
}

/// Projected gradient descent on the meta-code from `v = 0`, returning the
/// best iterate seen.
pub fn fit_meta_code<R: Rng + ?Sized>(
    arch: &Architecture,
    phi: &ParamVector,
    stats: &ClassStats,
    cfg: &SynthesisConfig,
    rng: &mut R,
) -> Result<MetaCode> {
    cfg.validate()?;
    if stats.num_classes() != arch.cfg.num_classes {
        return Err(Error::dim("fit_meta_code", format!("{} stat classes", stats.num_classes()), arch.cfg.num_classes));
    }
    let noise = crn_noise(rng, arch.cfg.num_classes, cfg.samples, arch.cfg.latent_dim);
    let mut code = vec![0.0; arch.cfg.code_dim];
    let (initial, mut grad) = meta_objective(arch, phi, stats, cfg.beta, &noise, &code, true)?;
    let mut best = MetaCode {
        code: code.clone(),
        objective: initial,
        initial_objective: initial,
        iterations: cfg.steps,
        best_step: 0,
    };
    for step in 1..=cfg.steps {
        for (c, g) in code.iter_mut().zip(&grad) {
            *c -= cfg.lr * g;
        }
        project_l2_ball(&mut code, arch.cfg.code_radius);
        let (f, g) = meta_objective(arch, phi, stats, cfg.beta, &noise, &code, true)?;
        if f < best.objective {
            best.objective = f;
            best.code = code.clone();
            best.best_step = step;
        }
        grad = g;
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaMixture {
    pub codes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl MetaMixture {
    pub fn single(code: Vec<f64>) -> Self {
        Self {
            codes: vec![code],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.codes.is_empty() || self.codes.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "mixture has {} codes and {} weights",
                self.codes.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be nonnegative".into()));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {s}, not 1")));
        }
        Ok(())
    }
}

/// A decoder modulation and class prior ready for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub decoder: GeneratedDecoder,
    pub prior: ClassPrior,
}

impl Generator {
    pub fn from_code(arch: &Architecture, code: &[f64], phi: &ParamVector) -> Result<Self> {
        Ok(Self {
            decoder: generate_decoder(arch, code, phi)?,
            prior: generate_class_prior(arch, code, phi)?,
        })
    }
}

fn blend(acc: &mut Option<Vec<Vec<f64>>>, part: &[Vec<f64>], w: f64) {
    match acc {
        None => *acc = Some(part.iter().map(|r| r.iter().map(|v| w * v).collect()).collect()),
        Some(a) => {
            for (ra, rp) in a.iter_mut().zip(part) {
                for (x, v) in ra.iter_mut().zip(rp) {
                    *x += w * v;
                }
            }
        }
    }
}

/// Convex combination of the generated modulations and prior heads.
/// Zero-weight codes are skipped.
pub fn mix_parameters(arch: &Architecture, mix: &MetaMixture, phi: &ParamVector) -> Result<Generator> {
    mix.validate()?;
    let (mut scales, mut shifts, mut mus, mut logsigs) = (None, None, None, None);
    for (code, &w) in mix.codes.iter().zip(&mix.weights) {
        if w == 0.0 {
            continue;
        }
        let g = Generator::from_code(arch, code, phi)?;
        blend(&mut scales, &g.decoder.scales, w);
        blend(&mut shifts, &g.decoder.shifts, w);
        blend(&mut mus, &g.prior.mu, w);
        blend(&mut logsigs, &g.prior.logsig, w);
    }
    let missing = || Error::InvalidArgument("mixture has no positive weight".into());
    Ok(Generator {
        decoder: GeneratedDecoder {
            scales: scales.ok_or_else(missing)?,
            shifts: shifts.ok_or_else(missing)?,
        },
        prior: ClassPrior {
            mu: mus.ok_or_else(missing)?,
            logsig: logsigs.ok_or_else(missing)?,
        },
    })
}

/// `n` labeled samples of class `y`.
pub fn synthesize<R: Rng + ?Sized>(
    arch: &Architecture,
    gen: &Generator,
    phi: &ParamVector,
    y: usize,
    n: usize,
    mode: SamplingPrior,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, usize)>> {
    arch.check_class(y)?;
    if n == 0 {
        return Err(Error::InvalidArgument("synthesize needs n >= 1".into()));
    }
    let params = DecoderParams {
        phi,
        modulation: &gen.decoder,
    };
    let dz = arch.cfg.latent_dim;
    (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..dz).map(|_| StandardNormal.sample(rng)).collect();
            let z = match mode {
                SamplingPrior::ClassPrior => reparameterize(&gen.prior.mu[y], &gen.prior.logsig[y], &e)?,
                SamplingPrior::StandardNormal => e,
            };
            let x = decode(arch, &z, y, params)?;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("in a synthetic sample of class {y}"),
                });
            }
            Ok((x, y))
        })
        .collect()
}

/// Per-class counts summing to `total` that differ by at most one.
pub fn balanced_counts(total: usize, num_classes: usize) -> Vec<usize> {
    (0..num_classes)
        .map(|y| total / num_classes + usize::from(y < total % num_classes))
        .collect()
}

/// A class-balanced synthetic set of `total` samples.
pub fn synthesize_balanced<R: Rng + ?Sized>(
    arch: &Architecture,
    gen: &Generator,
    phi: &ParamVector,
    total: usize,
    mode: SamplingPrior,
    rng: &mut R,
) -> Result<LabeledSet> {
    let mut out = LabeledSet::new(arch.cfg.data_dim, arch.cfg.num_classes);
    for (y, n) in balanced_counts(total, arch.cfg.num_classes).into_iter().enumerate() {
        if n == 0 {
            continue;
        }
        for (x, label) in synthesize(arch, gen, phi, y, n, mode, rng)? {
            out.push(x, label);
        }
    }
    Ok(out)
}

/// JSON sidecar written next to an exported synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSidecar {
    pub codes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub sampling_prior: SamplingPrior,
    pub seed: u64,
    pub count: usize,
    /// ε consumed by training plus the statistics release; `None` without DP.
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}
