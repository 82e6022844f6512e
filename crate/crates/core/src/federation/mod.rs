//! Round orchestration: broadcast Φ, local client rounds, privatized
//! gradient upload, weighted aggregation and privacy accounting.

mod client;
mod messages;
mod objective;
mod partition;
mod server;

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use client::{
    client_local_round, mean_reconstruction_mse, synthesize_for_code, ClientRoundMetrics, ClientState,
    ClientUpdate, RoundContext, EVAL_POINTS, METRIC_SALT,
};
pub use messages::{decode_payload, encode_payload, MessageLog, MessageRecord, Party, PayloadKind};
pub use objective::{
    batch_phi_gradients, per_sample_objective, per_sample_objective_value, BatchPhiGradients, ObjectiveGradient,
    ObjectiveTerms, SynthBatch,
};
pub use partition::{dirichlet_partition, MAX_PARTITION_RETRIES};
pub use server::{aggregation_weights, server_aggregate, LipschitzStep};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::hypernet::LipschitzState;
use crate::model::Architecture;
use crate::numerics::ParamVector;
use crate::privacy::{calibrate_sigma_with_base, stats_release_ledger, DPConfig, NoiseSetting, PrivacyLedger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// η_ψ
    pub lr_encoder: f64,
    /// η_v
    pub lr_code: f64,
    /// η_Φ
    pub lr_hyper: f64,
    pub lambda_mmd: f64,
    pub lambda_lip: f64,
    /// λ_v
    pub lambda_code: f64,
    pub lipschitz_kappa: f64,
    pub power_iterations: usize,
    /// Adds the spectral penalty gradient to every per-sample Φ-gradient
    /// instead of stepping on it at the server.
    pub lipschitz_on_client: bool,
    pub dirichlet_alpha: f64,
    /// Ablation: every client starts from client 0's code.
    pub tie_codes: bool,
    /// Keep raw payload bytes in the message log.
    pub audit_payloads: bool,
    pub dp: DPConfig,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            rounds: 50,
            local_epochs: 5,
            batch_size: 32,
            lr_encoder: 1e-3,
            lr_code: 1e-3,
            lr_hyper: 1e-3,
            lambda_mmd: 0.1,
            lambda_lip: 1e-3,
            lambda_code: 1e-3,
            lipschitz_kappa: 2.0,
            power_iterations: 1,
            lipschitz_on_client: false,
            dirichlet_alpha: 0.3,
            tie_codes: false,
            audit_payloads: false,
            dp: DPConfig::default(),
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("federation.clients", self.clients),
            ("federation.rounds", self.rounds),
            ("federation.local_epochs", self.local_epochs),
            ("federation.batch_size", self.batch_size),
            ("federation.power_iterations", self.power_iterations),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        let nonneg = [
            ("federation.lr_encoder", self.lr_encoder),
            ("federation.lr_code", self.lr_code),
            ("federation.lr_hyper", self.lr_hyper),
            ("federation.lambda_mmd", self.lambda_mmd),
            ("federation.lambda_lip", self.lambda_lip),
            ("federation.lambda_code", self.lambda_code),
            ("federation.lipschitz_kappa", self.lipschitz_kappa),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::config("federation.dirichlet_alpha", "must be positive"));
        }
        self.dp.validate()?;
        if self.dp.enabled && self.dp.stats_noise_multiplier == 0.0 {
            return Err(Error::config(
                "dp.stats_noise_multiplier",
                "must be positive when DP is enabled",
            ));
        }
        Ok(())
    }

    /// Accountant steps one client takes over the whole run.
    pub fn total_steps(&self, n: usize) -> usize {
        self.rounds * self.local_epochs * n.div_ceil(self.batch_size.min(n).max(1))
    }

    pub fn sampling_rate(&self, n: usize) -> f64 {
        self.batch_size.min(n) as f64 / n as f64
    }
}

/// Noise multiplier for the run: 0 without DP, the fixed value, or the
/// largest per-client calibration that keeps training plus the statistics
/// release within the target.
pub fn resolve_noise_multiplier(cfg: &FederationConfig, client_sizes: &[usize]) -> Result<f64> {
    if !cfg.dp.enabled {
        return Ok(0.0);
    }
    match cfg.dp.noise_multiplier {
        NoiseSetting::Fixed(s) => Ok(s),
        NoiseSetting::Auto(_) => {
            let base = stats_release_ledger(&cfg.dp)?;
            let mut sigma: f64 = 0.0;
            for &n in client_sizes {
                let s = calibrate_sigma_with_base(
                    cfg.dp.target_epsilon,
                    cfg.dp.delta,
                    cfg.sampling_rate(n),
                    cfg.total_steps(n),
                    Some(&base),
                )?;
                sigma = sigma.max(s);
            }
            Ok(sigma)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientRoundMetrics>,
    /// Max over clients of the training ε so far; `None` without DP.
    pub epsilon: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RoundReport {
    pub fn mean_mmd(&self) -> f64 {
        self.clients.iter().map(|c| c.mmd).sum::<f64>() / self.clients.len() as f64
    }

    pub fn mean_elbo(&self) -> f64 {
        self.clients.iter().map(|c| c.elbo).sum::<f64>() / self.clients.len() as f64
    }
}

/// One CSV row per client per round.
pub fn write_round_csv(reports: &[RoundReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for c in &r.clients {
            w.serialize(c)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub phi: ParamVector,
    pub clients: Vec<ClientState>,
    pub reports: Vec<RoundReport>,
    /// Training-only ledgers, one per client.
    pub ledgers: Vec<PrivacyLedger>,
    pub noise_multiplier: f64,
    pub messages: MessageLog,
}

impl FederationOutcome {
    pub fn epsilon_trajectory(&self) -> Vec<Option<f64>> {
        self.reports.iter().map(|r| r.epsilon).collect()
    }

    /// Max over clients of ε for training composed with each client's
    /// statistics release.
    pub fn total_epsilon(&self, dp: &DPConfig) -> Result<Option<f64>> {
        if !dp.enabled {
            return Ok(None);
        }
        let stats = stats_release_ledger(dp)?;
        let mut worst: f64 = 0.0;
        for l in &self.ledgers {
            let mut total = l.clone();
            total.compose(&stats);
            worst = worst.max(total.epsilon(dp.delta)?);
        }
        Ok(Some(worst))
    }
}

/// Initial Φ drawn from stream 0 of the seed.
pub fn initial_phi(arch: &Architecture, seed: u64) -> ParamVector {
    arch.init_phi(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Initial client states, with the tied-code ablation applied.
pub fn initial_clients(arch: &Architecture, cfg: &FederationConfig, datasets: &[LabeledSet]) -> Result<Vec<ClientState>> {
    let mut clients = datasets
        .iter()
        .enumerate()
        .map(|(i, d)| ClientState::new(arch, i, d.clone(), cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    if cfg.tie_codes {
        let shared = clients[0].code.clone();
        clients.iter_mut().for_each(|c| c.code = shared.clone());
    }
    Ok(clients)
}

/// Runs `T` rounds from the seeded initial Φ and client states.
pub fn run_federation(arch: &Architecture, cfg: &FederationConfig, datasets: &[LabeledSet]) -> Result<FederationOutcome> {
    cfg.validate()?;
    if datasets.len() != cfg.clients {
        return Err(Error::config(
            "federation.clients",
            format!("{} clients configured but {} datasets given", cfg.clients, datasets.len()),
        ));
    }
    let clients = initial_clients(arch, cfg, datasets)?;
    run_federation_from(arch, cfg, initial_phi(arch, cfg.seed), clients)
}

/// Runs `T` rounds from explicit starting state.
pub fn run_federation_from(
    arch: &Architecture,
    cfg: &FederationConfig,
    mut phi: ParamVector,
    mut clients: Vec<ClientState>,
) -> Result<FederationOutcome> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::config("federation.clients", "no clients"));
    }
    if **phi.layout() != *arch.phi_layout {
        return Err(Error::LayoutMismatch("initial Φ does not match the architecture".into()));
    }
    let sizes: Vec<usize> = clients.iter().map(|c| c.data.len()).collect();
    let sigma = resolve_noise_multiplier(cfg, &sizes)?;
    let mut ledgers = vec![PrivacyLedger::new(); clients.len()];
    let mut lipschitz = LipschitzState::new();
    let mut log = MessageLog::new(cfg.audit_payloads);
    let mut reports = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let start = Instant::now();
        let mut received = Vec::with_capacity(clients.len());
        for c in &clients {
            let v = log.transmit(round, Party::Server, Party::Client(c.id), PayloadKind::PhiBroadcast, phi.as_slice())?;
            received.push(ParamVector::from_data(phi.layout().clone(), v)?);
        }
        let ctx = RoundContext {
            arch,
            config: cfg,
            noise_multiplier: sigma,
            round,
        };
        let updates: Vec<ClientUpdate> = clients
            .par_iter_mut()
            .zip(received.par_iter())
            .map(|(c, p)| client_local_round(c, p, &ctx))
            .collect::<Result<_>>()?;

        let mut grads = Vec::with_capacity(updates.len());
        let mut metrics = Vec::with_capacity(updates.len());
        for (i, u) in updates.into_iter().enumerate() {
            let v = log.transmit(
                round,
                Party::Client(clients[i].id),
                Party::Server,
                PayloadKind::PrivatizedGradient,
                u.gradient.as_slice(),
            )?;
            grads.push(ParamVector::from_data(phi.layout().clone(), v)?);
            if cfg.dp.enabled {
                ledgers[i].rdp_steps(u.sampling_rate, sigma, u.privatize_calls)?;
            }
            metrics.push(u.metrics);
        }
        let lip = (!cfg.lipschitz_on_client && cfg.lambda_lip > 0.0).then_some(LipschitzStep {
            state: &mut lipschitz,
            weight: cfg.lambda_lip,
            kappa: cfg.lipschitz_kappa,
            iters: cfg.power_iterations,
        });
        phi = server_aggregate(&phi, &grads, &sizes, cfg.lr_hyper, lip)?;
        if !phi.all_finite() {
            return Err(Error::NonFinite {
                context: format!("in the hypernetwork parameters after round {round}"),
            });
        }

        let epsilon = if cfg.dp.enabled {
            let mut worst: f64 = 0.0;
            for (m, l) in metrics.iter_mut().zip(&ledgers) {
                let e = l.epsilon(cfg.dp.delta)?;
                m.epsilon = Some(e);
                worst = worst.max(e);
            }
            Some(worst)
        } else {
            None
        };
        log::debug!("round {round}: ε = {epsilon:?}");
        reports.push(RoundReport {
            round,
            clients: metrics,
            epsilon,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }

    Ok(FederationOutcome {
        phi,
        clients,
        reports,
        ledgers,
        noise_multiplier: sigma,
        messages: log,
    })
}
