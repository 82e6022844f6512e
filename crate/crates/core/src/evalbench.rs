//! Gaussian-mixture federations standing in for foundation-model embeddings,
//! the downstream linear probe, and the multi-seed experiment driver.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::federation::{initial_phi, run_federation, FederationConfig, FederationOutcome};
use crate::model::{Architecture, ModelConfig};
use crate::numerics::{norm2, Mat, ParamVector};
use crate::synthesis::{
    dp_class_statistics, fit_meta_code, synthesize_balanced, ClassStats, Generator, MetaCode, SynthesisConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSkew {
    Iid,
    /// Per-client class proportions drawn from `Dirichlet(α·1_K)`.
    Dirichlet(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSpec {
    pub num_classes: usize,
    pub data_dim: usize,
    pub clients: usize,
    pub samples_per_client: usize,
    /// Radius ρ of the sphere holding the class means.
    pub mean_radius: f64,
    /// Isotropic std `s` of each component.
    pub cov_scale: f64,
    /// Norm τ of the per-client, per-class mean shift.
    pub client_jitter: f64,
    pub label_skew: LabelSkew,
    pub test_fraction: f64,
}

impl Default for FederationSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            data_dim: 16,
            clients: 4,
            samples_per_client: 500,
            mean_radius: 4.0,
            cov_scale: 1.0,
            client_jitter: 1.0,
            label_skew: LabelSkew::Iid,
            test_fraction: 0.2,
        }
    }
}

impl FederationSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("data.num_classes", self.num_classes),
            ("data.data_dim", self.data_dim),
            ("data.clients", self.clients),
            ("data.samples_per_client", self.samples_per_client),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.samples_per_client < 2 {
            return Err(Error::config("data.samples_per_client", "must be at least 2"));
        }
        if !(self.cov_scale > 0.0 && self.cov_scale.is_finite()) {
            return Err(Error::config("data.cov_scale", "must be positive"));
        }
        if !(self.mean_radius >= 0.0 && self.mean_radius.is_finite()) {
            return Err(Error::config("data.mean_radius", "must be finite and >= 0"));
        }
        if !(self.client_jitter >= 0.0 && self.client_jitter.is_finite()) {
            return Err(Error::config("data.client_jitter", "must be finite and >= 0"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("data.test_fraction", "must lie in (0, 1)"));
        }
        if let LabelSkew::Dirichlet(a) = self.label_skew {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("data.label_skew", "dirichlet alpha must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFederation {
    pub train: Vec<LabeledSet>,
    pub test: Vec<LabeledSet>,
    pub class_means: Vec<Vec<f64>>,
    /// Clients whose split fell back to unstratified.
    pub unstratified: Vec<bool>,
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn class_proportions<R: Rng + ?Sized>(skew: LabelSkew, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    match skew {
        LabelSkew::Iid => Ok(vec![1.0 / k as f64; k]),
        LabelSkew::Dirichlet(a) => {
            let g = Gamma::new(a, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            loop {
                let p: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
                let s: f64 = p.iter().sum();
                if s > 0.0 {
                    return Ok(p.into_iter().map(|v| v / s).collect());
                }
            }
        }
    }
}

/// Splits `data` into train/test, stratified by class when every class has
/// at least two samples. Returns `(train, test, stratified)`.
pub fn train_test_split<R: Rng + ?Sized>(
    data: &LabeledSet,
    test_fraction: f64,
    rng: &mut R,
) -> (LabeledSet, LabeledSet, bool) {
    let counts = data.class_counts();
    let stratified = counts.iter().all(|&c| c == 0 || c >= 2);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut take = |mut idx: Vec<usize>, rng: &mut R| {
        idx.shuffle(rng);
        let n = idx.len();
        let t = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        test_idx.extend_from_slice(&idx[..t]);
        train_idx.extend_from_slice(&idx[t..]);
    };
    if stratified {
        for y in 0..data.num_classes {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.ys[i] == y).collect();
            if !idx.is_empty() {
                take(idx, rng);
            }
        }
    } else {
        take((0..data.len()).collect(), rng);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    (data.subset(&train_idx), data.subset(&test_idx), stratified)
}

/// Class means on a sphere of radius ρ, per-client per-class shifts of norm
/// τ, isotropic noise of std `s`, then an 80/20 split per client.
pub fn make_synthetic_federation<R: Rng + ?Sized>(spec: &FederationSpec, rng: &mut R) -> Result<SyntheticFederation> {
    spec.validate()?;
    let (k, d) = (spec.num_classes, spec.data_dim);
    let class_means: Vec<Vec<f64>> = (0..k)
        .map(|_| unit_vector(rng, d).into_iter().map(|v| v * spec.mean_radius).collect())
        .collect();
    let mut fed = SyntheticFederation {
        train: Vec::new(),
        test: Vec::new(),
        class_means: class_means.clone(),
        unstratified: Vec::new(),
    };
    for i in 0..spec.clients {
        let means: Vec<Vec<f64>> = class_means
            .iter()
            .map(|m| {
                let u = unit_vector(rng, d);
                m.iter().zip(&u).map(|(a, b)| a + spec.client_jitter * b).collect()
            })
            .collect();
        let p = class_proportions(spec.label_skew, k, rng)?;
        let pick = WeightedIndex::new(&p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut set = LabeledSet::new(d, k);
        for _ in 0..spec.samples_per_client {
            let y = pick.sample(rng);
            let x = means[y]
                .iter()
                .map(|m| {
                    let n: f64 = StandardNormal.sample(rng);
                    m + spec.cov_scale * n
                })
                .collect();
            set.push(x, y);
        }
        let (train, test, stratified) = train_test_split(&set, spec.test_fraction, rng);
        if !stratified {
            log::warn!("client {i}: a class has fewer than 2 samples; split is unstratified");
        }
        fed.train.push(train);
        fed.test.push(test);
        fed.unstratified.push(!stratified);
    }
    Ok(fed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.1 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("probe.epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("probe.lr", "must be positive"));
        }
        Ok(())
    }
}

/// Multinomial logistic regression `softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Mat,
    pub bias: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl LinearProbe {
    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        Self {
            weights: Mat::zeros(num_classes, dim),
            bias: vec![0.0; num_classes],
        }
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = crate::numerics::affine(x, &self.weights, &self.bias)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.probabilities(x)?;
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Full-batch gradient descent on the mean cross-entropy from zero.
    pub fn fit(train: &LabeledSet, cfg: &ProbeConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("probe training set is empty".into()));
        }
        let (k, d) = (train.num_classes, train.dim);
        let mut probe = Self::zeros(d, k);
        let n = train.len() as f64;
        for _ in 0..cfg.epochs {
            let mut gw = vec![0.0; k * d];
            let mut gb = vec![0.0; k];
            for (x, &y) in train.xs.iter().zip(&train.ys) {
                let mut p = probe.probabilities(x)?;
                p[y] -= 1.0;
                for (c, pc) in p.iter().enumerate() {
                    gb[c] += pc / n;
                    for (g, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *g += pc * xi / n;
                    }
                }
            }
            let mut w = probe.weights.data().to_vec();
            for (a, g) in w.iter_mut().zip(&gw) {
                *a -= cfg.lr * g;
            }
            probe.weights = Mat::new(k, d, w)?;
            for (a, g) in probe.bias.iter_mut().zip(&gb) {
                *a -= cfg.lr * g;
            }
        }
        Ok(probe)
    }
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("balanced accuracy of an empty set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::dim("balanced_accuracy", preds.len(), labels.len()));
    }
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, l) in preds.iter().zip(labels) {
        let e = per.entry(*l).or_default();
        e.1 += 1;
        if p == l {
            e.0 += 1;
        }
    }
    Ok(per.values().map(|(h, n)| *h as f64 / *n as f64).sum::<f64>() / per.len() as f64)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::dim("accuracy", preds.len(), labels.len()));
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Training set had a single class, so the probe is constant.
    pub degenerate: bool,
}

/// Trains a probe on `train` and scores it on the real `test` set.
pub fn train_linear_probe(train: &LabeledSet, test: &LabeledSet, cfg: &ProbeConfig) -> Result<ProbeScore> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("probe test set is empty".into()));
    }
    let degenerate = train.class_counts().iter().filter(|&&c| c > 0).count() < 2;
    if degenerate {
        log::warn!("probe training set has a single class; predictor is constant");
    }
    let probe = LinearProbe::fit(train, cfg)?;
    let preds = test.xs.iter().map(|x| probe.predict(x)).collect::<Result<Vec<_>>>()?;
    Ok(ProbeScore {
        accuracy: accuracy(&preds, &test.ys)?,
        balanced_accuracy: balanced_accuracy(&preds, &test.ys)?,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Client's own real training data.
    Local,
    /// Real training data plus the global synthetic set.
    Augmented,
    /// Global synthetic set only.
    Synthetic,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Local, Condition::Augmented, Condition::Synthetic];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub seed: u64,
    pub client: usize,
    pub condition: Condition,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

pub fn write_probe_csv(rows: &[ProbeRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_probe_csv(path: &Path) -> Result<Vec<ProbeRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ProbeRow>, _>>()?)
}

/// Everything the experiment needs apart from the seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: FederationSpec,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    pub synthesis: SynthesisConfig,
    pub probe: ProbeConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.federation.validate()?;
        self.synthesis.validate()?;
        self.probe.validate()?;
        if self.model.data_dim != self.data.data_dim {
            return Err(Error::config("model.data_dim", "must equal data.data_dim"));
        }
        if self.model.num_classes != self.data.num_classes {
            return Err(Error::config("model.num_classes", "must equal data.num_classes"));
        }
        if self.federation.clients != self.data.clients {
            return Err(Error::config("federation.clients", "must equal data.clients"));
        }
        Ok(())
    }
}

pub const DATA_STREAM: u64 = 1 << 32;
pub const STATS_STREAM: u64 = DATA_STREAM + 1;
pub const META_STREAM: u64 = DATA_STREAM + 2;
pub const SYNTH_STREAM: u64 = DATA_STREAM + 3;
pub const BASELINE_STREAM: u64 = DATA_STREAM + 4;

/// Independent stream of `seed` for one experiment stage.
pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Artifacts and scores of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub data: SyntheticFederation,
    pub outcome: FederationOutcome,
    pub stats: ClassStats,
    pub meta: MetaCode,
    pub synthetic: LabeledSet,
    pub probes: Vec<ProbeRow>,
    /// Mean over clients of the probe trained on pooled real training data.
    pub pooled_bacc: f64,
    /// Mean over clients of the synthetic-only probe from the untrained generator.
    pub untrained_bacc: f64,
    pub total_epsilon: Option<f64>,
}

impl SeedRun {
    pub fn mean_bacc(&self, c: Condition) -> f64 {
        let v: Vec<f64> = self
            .probes
            .iter()
            .filter(|r| r.condition == c)
            .map(|r| r.balanced_accuracy)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn mean_acc(&self, c: Condition) -> f64 {
        let v: Vec<f64> = self.probes.iter().filter(|r| r.condition == c).map(|r| r.accuracy).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn summary(&self) -> SeedSummary {
        let first = self.outcome.reports.first().map(|r| r.mean_mmd());
        let last = self.outcome.reports.last().map(|r| r.mean_mmd());
        SeedSummary {
            seed: self.seed,
            conditions: Condition::ALL
                .iter()
                .map(|&c| ConditionMean {
                    condition: c,
                    accuracy: self.mean_acc(c),
                    balanced_accuracy: self.mean_bacc(c),
                })
                .collect(),
            pooled_bacc: self.pooled_bacc,
            untrained_bacc: self.untrained_bacc,
            noise_multiplier: self.outcome.noise_multiplier,
            total_epsilon: self.total_epsilon,
            epsilon_trajectory: self.outcome.epsilon_trajectory(),
            first_round_mmd: first.unwrap_or(f64::NAN),
            last_round_mmd: last.unwrap_or(f64::NAN),
            meta_objective: self.meta.objective,
            fallback_classes: self.stats.fallback.iter().filter(|f| **f).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMean {
    pub condition: Condition,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub conditions: Vec<ConditionMean>,
    pub pooled_bacc: f64,
    pub untrained_bacc: f64,
    pub noise_multiplier: f64,
    pub total_epsilon: Option<f64>,
    pub epsilon_trajectory: Vec<Option<f64>>,
    pub first_round_mmd: f64,
    pub last_round_mmd: f64,
    pub meta_objective: f64,
    pub fallback_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and std (divisor `n`).
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub accuracy: MeanStd,
    pub balanced_accuracy: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<u64>,
    /// Across seeds of the per-seed client means; std is the population std.
    pub conditions: Vec<ConditionSummary>,
    pub pooled_bacc: MeanStd,
    pub untrained_bacc: MeanStd,
    pub per_seed: Vec<SeedSummary>,
    pub probes: Vec<ProbeRow>,
}

/// Builds the report from finished seeds.
pub fn summarize(runs: &[SeedRun]) -> ExperimentReport {
    let per_seed: Vec<SeedSummary> = runs.iter().map(SeedRun::summary).collect();
    let conditions = Condition::ALL
        .iter()
        .map(|&c| ConditionSummary {
            condition: c,
            accuracy: mean_std(&runs.iter().map(|r| r.mean_acc(c)).collect::<Vec<_>>()),
            balanced_accuracy: mean_std(&runs.iter().map(|r| r.mean_bacc(c)).collect::<Vec<_>>()),
        })
        .collect();
    ExperimentReport {
        seeds: runs.iter().map(|r| r.seed).collect(),
        conditions,
        pooled_bacc: mean_std(&runs.iter().map(|r| r.pooled_bacc).collect::<Vec<_>>()),
        untrained_bacc: mean_std(&runs.iter().map(|r| r.untrained_bacc).collect::<Vec<_>>()),
        per_seed,
        probes: runs.iter().flat_map(|r| r.probes.iter().cloned()).collect(),
    }
}

fn mean_client_bacc(train: &LabeledSet, tests: &[LabeledSet], cfg: &ProbeConfig) -> Result<f64> {
    let probe = LinearProbe::fit(train, cfg)?;
    let mut total = 0.0;
    for t in tests {
        let preds = t.xs.iter().map(|x| probe.predict(x)).collect::<Result<Vec<_>>>()?;
        total += balanced_accuracy(&preds, &t.ys)?;
    }
    Ok(total / tests.len() as f64)
}

/// Probe scores of every condition for one client.
pub fn probe_client(
    seed: u64,
    client: usize,
    train: &LabeledSet,
    test: &LabeledSet,
    synthetic: &LabeledSet,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeRow>> {
    let mut augmented = train.clone();
    augmented.extend_from(synthetic);
    let sets = [(Condition::Local, train), (Condition::Augmented, &augmented), (Condition::Synthetic, synthetic)];
    sets.iter()
        .map(|(c, tr)| {
            let s = train_linear_probe(tr, test, cfg)?;
            Ok(ProbeRow {
                seed,
                client,
                condition: *c,
                accuracy: s.accuracy,
                balanced_accuracy: s.balanced_accuracy,
            })
        })
        .collect()
}

/// One seed: data, federation, statistics, meta-code, synthesis, probes.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let arch = Architecture::new(cfg.model.clone())?;
    let data = make_synthetic_federation(&cfg.data, &mut stage_rng(seed, DATA_STREAM))?;
    let fed_cfg = FederationConfig {
        seed,
        ..cfg.federation.clone()
    };
    let outcome = run_federation(&arch, &fed_cfg, &data.train)?;

    let dp = &fed_cfg.dp;
    let sigma_stat = if dp.enabled { dp.stats_noise_multiplier } else { 0.0 };
    let stats = dp_class_statistics(&data.train, dp.stats_clip, sigma_stat, &mut stage_rng(seed, STATS_STREAM))?;
    let meta = fit_meta_code(&arch, &outcome.phi, &stats, &cfg.synthesis, &mut stage_rng(seed, META_STREAM))?;
    let gen = Generator::from_code(&arch, &meta.code, &outcome.phi)?;
    let synthetic = synthesize_balanced(
        &arch,
        &gen,
        &outcome.phi,
        cfg.synthesis.count,
        cfg.synthesis.sampling_prior,
        &mut stage_rng(seed, SYNTH_STREAM),
    )?;

    let mut probes = Vec::new();
    for (i, (tr, te)) in data.train.iter().zip(&data.test).enumerate() {
        probes.extend(probe_client(seed, i, tr, te, &synthetic, &cfg.probe)?);
    }

    let mut pooled = LabeledSet::new(cfg.data.data_dim, cfg.data.num_classes);
    data.train.iter().for_each(|t| pooled.extend_from(t));
    let pooled_bacc = mean_client_bacc(&pooled, &data.test, &cfg.probe)?;
    let untrained_bacc = untrained_baseline(&arch, seed, cfg, &data.test)?;
    let total_epsilon = outcome.total_epsilon(dp)?;

    Ok(SeedRun {
        seed,
        data,
        outcome,
        stats,
        meta,
        synthetic,
        probes,
        pooled_bacc,
        untrained_bacc,
        total_epsilon,
    })
}

/// Synthetic-only probe score from the seed's initial Φ with a zero code.
pub fn untrained_baseline(arch: &Architecture, seed: u64, cfg: &ExperimentConfig, tests: &[LabeledSet]) -> Result<f64> {
    let phi: ParamVector = initial_phi(arch, seed);
    let code = vec![0.0; arch.cfg.code_dim];
    let gen = Generator::from_code(arch, &code, &phi)?;
    let synth = synthesize_balanced(
        arch,
        &gen,
        &phi,
        cfg.synthesis.count,
        cfg.synthesis.sampling_prior,
        &mut stage_rng(seed, BASELINE_STREAM),
    )?;
    mean_client_bacc(&synth, tests, &cfg.probe)
}

pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<(ExperimentReport, Vec<SeedRun>)> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    let runs = seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>()?;
    Ok((summarize(&runs), runs))
}
