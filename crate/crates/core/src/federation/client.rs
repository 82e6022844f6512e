//! One client's local round.
//!
//! Random draws come from the client's own stream in a fixed order: per
//! epoch a shuffle of the sample order, then per batch the encoder noise
//! (one `d_z` vector per sample), the synthetic-batch noise (one per sample)
//! and finally the privatization noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::objective::{batch_phi_gradients, local_objective, ObjectiveTerms, SynthBatch};
use super::FederationConfig;
use crate::alignment::{median_heuristic, mmd2, MultiKernel};
use crate::cvae::{decode, encode, reparameterize, DecoderParams};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::hypernet::{generate_class_prior, generate_decoder, LipschitzState};
use crate::model::Architecture;
use crate::numerics::{axpy, norm2, project_l2_ball, sq_dist, ParamVector};
use crate::privacy::privatize;

/// Real points used for the bandwidth and the end-of-round MMD metric.
pub const EVAL_POINTS: usize = 128;
/// Mixed into the seed of the per-client metric and kernel stream.
pub const METRIC_SALT: u64 = 0x6d6d_645f_6576_616c;
const CLIENT_LIP_ITERS: usize = 20;

/// Private per-client state. The dataset, encoder and code never leave it.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub data: LabeledSet,
    pub psi: ParamVector,
    pub code: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl ClientState {
    /// Stream `id + 1` of `seed`; the encoder and code are drawn from it.
    pub fn new(arch: &Architecture, id: usize, data: LabeledSet, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument(format!("client {id} has an empty dataset")));
        }
        arch.check_len("client", "data dim", data.dim, arch.cfg.data_dim)?;
        if data.num_classes != arch.cfg.num_classes {
            return Err(Error::dim("client", format!("{} classes in data", data.num_classes), arch.cfg.num_classes));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64 + 1);
        let psi = arch.init_psi(&mut rng);
        let code = arch.init_code(&mut rng);
        Ok(Self {
            id,
            data,
            psi,
            code,
            rng,
        })
    }

    /// Mean of `‖x − x̂‖² / d_x` with `x̂` decoded from the posterior mean.
    pub fn reconstruction_mse(&self, arch: &Architecture, phi: &ParamVector) -> Result<f64> {
        mean_reconstruction_mse(arch, &self.data, &self.psi, &self.code, phi)
    }
}

pub fn mean_reconstruction_mse(
    arch: &Architecture,
    data: &LabeledSet,
    psi: &ParamVector,
    code: &[f64],
    phi: &ParamVector,
) -> Result<f64> {
    let theta = generate_decoder(arch, code, phi)?;
    let params = DecoderParams { phi, modulation: &theta };
    let mut total = 0.0;
    for (x, &y) in data.xs.iter().zip(&data.ys) {
        let (mu, _) = encode(arch, x, y, psi)?;
        let xh = decode(arch, &mu, y, params)?;
        total += sq_dist(x, &xh) / x.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClientRoundMetrics {
    pub round: usize,
    pub client: usize,
    /// Mean one-sample ELBO over the round's samples.
    pub elbo: f64,
    /// `mmd2(real, synthetic)` on the evaluation subset after the round.
    pub mmd: f64,
    pub code_norm: f64,
    /// Mean per-sample Φ-gradient norm before clipping.
    pub grad_norm_pre: f64,
    /// Norm of the transmitted round gradient.
    pub grad_norm_post: f64,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub gradient: ParamVector,
    pub privatize_calls: usize,
    pub sampling_rate: f64,
    pub metrics: ClientRoundMetrics,
}

/// Everything a client needs besides its own state.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    pub arch: &'a Architecture,
    pub config: &'a FederationConfig,
    pub noise_multiplier: f64,
    pub round: usize,
}

fn draw_normals(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Evaluation subset and kernel for this client; the same every round.
fn evaluation_kernel(state: &ClientState, seed: u64) -> Result<(Vec<usize>, MultiKernel, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ METRIC_SALT);
    rng.set_stream(state.id as u64 + 1);
    let mut idx: Vec<usize> = (0..state.data.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(EVAL_POINTS);
    let pts: Vec<Vec<f64>> = idx.iter().map(|&i| state.data.xs[i].clone()).collect();
    let kernel = MultiKernel::with_default_multipliers(median_heuristic(&pts)?)?;
    Ok((idx, kernel, rng))
}

/// Synthetic points for `labels` from the client's generated decoder and prior.
pub fn synthesize_for_code<R: Rng + ?Sized>(
    arch: &Architecture,
    code: &[f64],
    phi: &ParamVector,
    labels: &[usize],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let theta = generate_decoder(arch, code, phi)?;
    let prior = generate_class_prior(arch, code, phi)?;
    let params = DecoderParams { phi, modulation: &theta };
    labels
        .iter()
        .map(|&y| {
            arch.check_class(y)?;
            let e: Vec<f64> = (0..arch.cfg.latent_dim).map(|_| StandardNormal.sample(rng)).collect();
            let z = reparameterize(&prior.mu[y], &prior.logsig[y], &e)?;
            decode(arch, &z, y, params)
        })
        .collect()
}

/// Runs `E` local epochs and returns the round gradient `g̃_i`: the mean of
/// the batch-level privatized Φ-gradients.
pub fn client_local_round(state: &mut ClientState, phi: &ParamVector, ctx: &RoundContext<'_>) -> Result<ClientUpdate> {
    let arch = ctx.arch;
    let cfg = ctx.config;
    let n = state.data.len();
    if n == 0 {
        return Err(Error::InvalidArgument(format!("client {} has an empty dataset", state.id)));
    }
    let (eval_idx, kernel, mut metric_rng) = evaluation_kernel(state, cfg.seed)?;
    let terms = ObjectiveTerms {
        lambda_code: cfg.lambda_code,
        lambda_mmd: cfg.lambda_mmd,
        kernel: Some(kernel.clone()),
    };
    let lip_grad = if cfg.lipschitz_on_client && cfg.lambda_lip > 0.0 {
        let (_, g) = LipschitzState::new().penalty_and_gradient(phi, cfg.lipschitz_kappa, CLIENT_LIP_ITERS);
        Some(g)
    } else {
        None
    };

    let dz = arch.cfg.latent_dim;
    let b = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut acc = vec![0.0; phi.len()];
    let (mut calls, mut elbo_sum, mut seen, mut pre_sum) = (0usize, 0.0, 0usize, 0.0);

    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut state.rng);
        for batch in order.chunks(b) {
            let eps = draw_normals(&mut state.rng, batch.len(), dz);
            let synth_noise = draw_normals(&mut state.rng, batch.len(), dz);
            let xs: Vec<&[f64]> = batch.iter().map(|&i| state.data.xs[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| state.data.ys[i]).collect();

            if cfg.lr_encoder != 0.0 || cfg.lr_code != 0.0 {
                let mut g_psi = vec![0.0; state.psi.len()];
                let mut g_code = vec![0.0; state.code.len()];
                for ((x, &y), e) in xs.iter().zip(&ys).zip(&eps) {
                    let (_, gp, gv) = local_objective(arch, x, y, &state.psi, &state.code, phi, e, cfg.lambda_code)?;
                    axpy(1.0, &gp, &mut g_psi);
                    axpy(1.0, &gv, &mut g_code);
                }
                let inv = 1.0 / batch.len() as f64;
                axpy(-cfg.lr_encoder * inv, &g_psi, state.psi.as_mut_slice());
                axpy(-cfg.lr_code * inv, &g_code, &mut state.code);
                project_l2_ball(&mut state.code, arch.cfg.code_radius);
            }

            let synth = SynthBatch {
                labels: &ys,
                noise: &synth_noise,
            };
            let mut grads = batch_phi_gradients(arch, &xs, &ys, &eps, &state.psi, &state.code, phi, &synth, &terms)?;
            if let Some(lg) = &lip_grad {
                for g in &mut grads.per_sample {
                    axpy(cfg.lambda_lip, lg, g);
                }
            }
            elbo_sum -= grads.neg_elbo.iter().sum::<f64>();
            seen += batch.len();
            pre_sum += grads.per_sample.iter().map(|g| norm2(g)).sum::<f64>();

            let sigma = if cfg.dp.enabled { ctx.noise_multiplier } else { 0.0 };
            let g_batch = privatize(&grads.per_sample, cfg.dp.clip_bound, sigma, cfg.dp.noise_mode, &mut state.rng)?;
            axpy(1.0, &g_batch, &mut acc);
            calls += 1;
        }
    }
    acc.iter_mut().for_each(|v| *v /= calls as f64);
    let gradient = ParamVector::from_data(phi.layout().clone(), acc)?;

    let real: Vec<Vec<f64>> = eval_idx.iter().map(|&i| state.data.xs[i].clone()).collect();
    let labels: Vec<usize> = eval_idx.iter().map(|&i| state.data.ys[i]).collect();
    let fake = synthesize_for_code(arch, &state.code, phi, &labels, &mut metric_rng)?;
    let metrics = ClientRoundMetrics {
        round: ctx.round,
        client: state.id,
        elbo: elbo_sum / seen as f64,
        mmd: mmd2(&real, &fake, &kernel)?,
        code_norm: norm2(&state.code),
        grad_norm_pre: pre_sum / seen as f64,
        grad_norm_post: gradient.norm(),
        epsilon: None,
    };
    Ok(ClientUpdate {
        gradient,
        privatize_calls: calls,
        sampling_rate: b as f64 / n as f64,
        metrics,
    })
}
