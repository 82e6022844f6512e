//! Oracles shared by the integration suites and the acceptance target.
#![allow(dead_code)]

use fedhypevae::alignment::{median_heuristic, per_sample_mmd2, MultiKernel};
use fedhypevae::cvae::{decode, encode, kl_diag_gaussians, reparameterize, DecoderParams};
use fedhypevae::data::LabeledSet;
use fedhypevae::federation::{
    initial_clients, initial_phi, per_sample_objective, FederationConfig, ObjectiveTerms, SynthBatch, EVAL_POINTS,
    METRIC_SALT,
};
use fedhypevae::hypernet::{generate_class_prior, generate_decoder};
use fedhypevae::model::{Architecture, ModelConfig};
use fedhypevae::numerics::ParamVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normals<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn l2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- gradients

pub struct GradCase {
    pub arch: Architecture,
    pub x: Vec<f64>,
    pub y: usize,
    pub psi: ParamVector,
    pub code: Vec<f64>,
    pub phi: ParamVector,
    pub eps: Vec<f64>,
    pub labels: Vec<usize>,
    pub noise: Vec<Vec<f64>>,
    pub terms: ObjectiveTerms,
}

fn jitter(p: &mut ParamVector, rng: &mut ChaCha8Rng, scale: f64) {
    for v in p.as_mut_slice() {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
}

/// d_x = 8, d_z = 4, d_v = 4, three classes; widths and weights random.
pub fn random_grad_case(rng: &mut ChaCha8Rng) -> GradCase {
    let cfg = ModelConfig {
        data_dim: 8,
        num_classes: 3,
        latent_dim: 4,
        code_dim: 4,
        hidden_dim: rng.gen_range(3..=6),
        domain_dim: rng.gen_range(2..=4),
        label_embed_dim: rng.gen_range(2..=3),
        hyper_hidden_dim: rng.gen_range(3..=5),
        code_radius: 3.0,
    };
    let arch = Architecture::new(cfg).unwrap();
    let mut phi = arch.init_phi(rng);
    jitter(&mut phi, rng, 0.2);
    let mut psi = arch.init_psi(rng);
    jitter(&mut psi, rng, 0.1);
    let m = rng.gen_range(1..=4);
    let labels: Vec<usize> = (0..m).map(|_| rng.gen_range(0..3)).collect();
    let noise = (0..m).map(|_| normals(rng, 4, 1.0)).collect();
    let kernel = MultiKernel::with_default_multipliers(rng.gen_range(0.5..4.0)).unwrap();
    GradCase {
        x: normals(rng, 8, 1.0),
        y: rng.gen_range(0..3),
        code: normals(rng, 4, 0.5),
        eps: normals(rng, 4, 1.0),
        arch,
        psi,
        phi,
        labels,
        noise,
        terms: ObjectiveTerms {
            lambda_code: rng.gen_range(0.0..0.5),
            lambda_mmd: rng.gen_range(0.0..2.0),
            kernel: Some(kernel),
        },
    }
}

/// The objective assembled from the plain model functions:
/// `½‖x − x̂‖² + KL(q ‖ p_y) + λ_v‖v‖² + λ_MMD·per_sample_mmd2(x, X̂)`.
pub fn objective_forward(c: &GradCase, psi: &ParamVector, code: &[f64], phi: &ParamVector) -> f64 {
    let a = &c.arch;
    let theta = generate_decoder(a, code, phi).unwrap();
    let prior = generate_class_prior(a, code, phi).unwrap();
    let params = DecoderParams { phi, modulation: &theta };
    let (mu_q, ls_q) = encode(a, &c.x, c.y, psi).unwrap();
    let z = reparameterize(&mu_q, &ls_q, &c.eps).unwrap();
    let x_hat = decode(a, &z, c.y, params).unwrap();
    let recon: f64 = 0.5 * c.x.iter().zip(&x_hat).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
    let kl = kl_diag_gaussians(&mu_q, &ls_q, &prior.mu[c.y], &prior.logsig[c.y]).unwrap();
    let reg = c.terms.lambda_code * code.iter().map(|v| v * v).sum::<f64>();
    let mmd = match &c.terms.kernel {
        Some(k) if c.terms.lambda_mmd != 0.0 => {
            let synth: Vec<Vec<f64>> = c
                .labels
                .iter()
                .zip(&c.noise)
                .map(|(&l, e)| {
                    let z = reparameterize(&prior.mu[l], &prior.logsig[l], e).unwrap();
                    decode(a, &z, l, params).unwrap()
                })
                .collect();
            c.terms.lambda_mmd * per_sample_mmd2(&c.x, &synth, k).unwrap()
        }
        _ => 0.0,
    };
    recon + kl + reg + mmd
}

pub fn central<F: FnMut(&[f64]) -> f64>(mut f: F, p: &[f64], h: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|j| {
            let o = q[j];
            q[j] = o + h;
            let up = f(&q);
            q[j] = o - h;
            let down = f(&q);
            q[j] = o;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    diff / l2(a).max(l2(b)).max(1e-8)
}

/// Worst of the ψ, v and Φ relative errors between the analytic gradient and
/// central differences of [`objective_forward`].
pub fn grad_case_error(c: &GradCase) -> f64 {
    let synth = SynthBatch {
        labels: &c.labels,
        noise: &c.noise,
    };
    let g = per_sample_objective(&c.arch, &c.x, c.y, &c.psi, &c.code, &c.phi, &c.eps, &synth, &c.terms).unwrap();
    let v = objective_forward(c, &c.psi, &c.code, &c.phi);
    assert!((g.value - v).abs() <= 1e-10 * v.abs().max(1.0), "value {} vs {}", g.value, v);
    let h = 1e-5;
    let with_psi = |p: &[f64]| ParamVector::from_data(c.psi.layout().clone(), p.to_vec()).unwrap();
    let with_phi = |p: &[f64]| ParamVector::from_data(c.phi.layout().clone(), p.to_vec()).unwrap();
    let fd_psi = central(|p| objective_forward(c, &with_psi(p), &c.code, &c.phi), c.psi.as_slice(), h);
    let fd_code = central(|v| objective_forward(c, &c.psi, v, &c.phi), &c.code, h);
    let fd_phi = central(|p| objective_forward(c, &c.psi, &c.code, &with_phi(p)), c.phi.as_slice(), h);
    rel_err(&g.psi, &fd_psi).max(rel_err(&g.code, &fd_code)).max(rel_err(&g.phi, &fd_phi))
}

// ---------------------------------------------------------------- accountant

/// RDP of the sampled Gaussian mechanism at order `alpha` by quadrature:
/// `ln ∫ N(z; 0, σ²) ((1−q) + q·exp((2z − 1)/(2σ²)))^α dz / (α − 1)`.
pub fn rdp_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let log_mix = |z: f64| {
        let t = (2.0 * z - 1.0) / (2.0 * s2);
        if q == 1.0 {
            t
        } else if t > 0.0 {
            t + (q + (1.0 - q) * (-t).exp()).ln()
        } else {
            (q * t.exp_m1()).ln_1p()
        }
    };
    let log_f = |z: f64| -z * z / (2.0 * s2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln() + alpha * log_mix(z);
    let lo = -20.0 * sigma - 2.0;
    let hi = alpha + 20.0 * sigma + 2.0;
    let h = sigma / 400.0;
    let n = (((hi - lo) / h).ceil() as usize).div_ceil(2) * 2;
    let h = (hi - lo) / n as f64;
    // Composite Simpson in log space.
    let terms: Vec<f64> = (0..=n)
        .map(|i| {
            let w: f64 = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w.ln() + log_f(lo + i as f64 * h)
        })
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_int = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln() + (h / 3.0).ln();
    log_int / (alpha - 1.0)
}

// ---------------------------------------------------------------- federation

pub fn small_arch() -> Architecture {
    Architecture::new(ModelConfig {
        data_dim: 5,
        num_classes: 3,
        latent_dim: 3,
        hidden_dim: 6,
        code_dim: 3,
        domain_dim: 3,
        label_embed_dim: 2,
        hyper_hidden_dim: 4,
        code_radius: 3.0,
    })
    .unwrap()
}

/// Three small clients with class-dependent means.
pub fn small_datasets(seed: u64, sizes: &[usize]) -> Vec<LabeledSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&n| {
            let mut s = LabeledSet::new(5, 3);
            for j in 0..n {
                let y = j % 3;
                let x: Vec<f64> = (0..5).map(|d| if d == y { 2.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal)).collect();
                s.push(x, y);
            }
            s
        })
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| normals(rng, dim, 1.0)).collect()
}

/// The federation protocol written out step by step with the reference
/// per-sample objective, for `σ = 0` and no Lipschitz term. Returns Φ after
/// each round.
pub fn hand_rolled_federation(arch: &Architecture, cfg: &FederationConfig, data: &[LabeledSet]) -> Vec<ParamVector> {
    assert!(!cfg.dp.enabled || cfg.dp.noise_multiplier.fixed() == Some(0.0));
    assert_eq!(cfg.lambda_lip, 0.0);
    let mut phi = initial_phi(arch, cfg.seed);
    let mut clients = initial_clients(arch, cfg, data).unwrap();
    let dz = arch.cfg.latent_dim;
    let mut history = Vec::new();
    for _ in 0..cfg.rounds {
        let mut uploads = Vec::new();
        for c in clients.iter_mut() {
            let n = c.data.len();
            let mut metric_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ METRIC_SALT);
            metric_rng.set_stream(c.id as u64 + 1);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut metric_rng);
            idx.truncate(EVAL_POINTS);
            let pts: Vec<Vec<f64>> = idx.iter().map(|&i| c.data.xs[i].clone()).collect();
            let kernel = MultiKernel::with_default_multipliers(median_heuristic(&pts).unwrap()).unwrap();
            let full = ObjectiveTerms {
                lambda_code: cfg.lambda_code,
                lambda_mmd: cfg.lambda_mmd,
                kernel: Some(kernel),
            };
            let local = ObjectiveTerms {
                lambda_code: cfg.lambda_code,
                lambda_mmd: 0.0,
                kernel: None,
            };

            let b = cfg.batch_size.min(n);
            let mut order: Vec<usize> = (0..n).collect();
            let mut acc = vec![0.0; phi.len()];
            let mut calls = 0;
            for _ in 0..cfg.local_epochs {
                order.shuffle(&mut c.rng);
                for batch in order.chunks(b) {
                    let eps = draw(&mut c.rng, batch.len(), dz);
                    let noise = draw(&mut c.rng, batch.len(), dz);
                    let ys: Vec<usize> = batch.iter().map(|&i| c.data.ys[i]).collect();
                    let synth = SynthBatch { labels: &ys, noise: &noise };

                    let mut gp = vec![0.0; c.psi.len()];
                    let mut gv = vec![0.0; c.code.len()];
                    for (k, &i) in batch.iter().enumerate() {
                        let g = per_sample_objective(arch, &c.data.xs[i], ys[k], &c.psi, &c.code, &phi, &eps[k], &synth, &local)
                            .unwrap();
                        gp.iter_mut().zip(&g.psi).for_each(|(a, v)| *a += v);
                        gv.iter_mut().zip(&g.code).for_each(|(a, v)| *a += v);
                    }
                    let m = batch.len() as f64;
                    for (p, g) in c.psi.as_mut_slice().iter_mut().zip(&gp) {
                        *p -= cfg.lr_encoder * g / m;
                    }
                    for (p, g) in c.code.iter_mut().zip(&gv) {
                        *p -= cfg.lr_code * g / m;
                    }
                    let norm = l2(&c.code);
                    if norm > arch.cfg.code_radius {
                        c.code.iter_mut().for_each(|v| *v *= arch.cfg.code_radius / norm);
                    }

                    let mut mean = vec![0.0; phi.len()];
                    for (k, &i) in batch.iter().enumerate() {
                        let g = per_sample_objective(arch, &c.data.xs[i], ys[k], &c.psi, &c.code, &phi, &eps[k], &synth, &full)
                            .unwrap();
                        let n = l2(&g.phi);
                        let s = if n > cfg.dp.clip_bound { cfg.dp.clip_bound / n } else { 1.0 };
                        mean.iter_mut().zip(&g.phi).for_each(|(a, v)| *a += s * v / m);
                    }
                    acc.iter_mut().zip(&mean).for_each(|(a, v)| *a += v);
                    calls += 1;
                }
            }
            acc.iter_mut().for_each(|v| *v /= calls as f64);
            uploads.push((n, acc));
        }
        let total: usize = uploads.iter().map(|u| u.0).sum();
        let mut next = phi.clone();
        for (n, g) in &uploads {
            let w = *n as f64 / total as f64;
            next.as_mut_slice().iter_mut().zip(g).for_each(|(p, v)| *p -= cfg.lr_hyper * w * v);
        }
        phi = next;
        history.push(phi.clone());
    }
    history
}
