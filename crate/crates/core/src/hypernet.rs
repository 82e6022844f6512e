//! The shared hypernetwork: client code → row-scaled decoder modulations and
//! class-conditional prior heads, plus the spectral-norm Lipschitz penalty.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Architecture, LayerOffsets, HYPER_MATRICES, LOGSIG_MAX, LOGSIG_MIN};
use crate::numerics::{norm2, BlockId, Mat, NodeId, ParamVector, Tape};

/// Per-layer row scales `d_ℓ(v)` and bias shifts `Δb_ℓ(v)`; base weights stay in Φ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDecoder {
    pub scales: Vec<Vec<f64>>,
    pub shifts: Vec<Vec<f64>>,
}

impl GeneratedDecoder {
    /// Unit scales and zero shifts: the base decoder itself.
    pub fn identity(arch: &Architecture) -> Self {
        Self {
            scales: arch.dec.iter().map(|l| vec![1.0; l.rows]).collect(),
            shifts: arch.dec.iter().map(|l| vec![0.0; l.rows]).collect(),
        }
    }

    /// `W_ℓ(v) = diag(d_ℓ) W_ℓ` for decoder layer `layer`.
    pub fn effective_weight(&self, arch: &Architecture, phi: &ParamVector, layer: usize) -> Mat {
        let l = arch.dec[layer];
        let base = &phi.as_slice()[l.w..l.w + l.rows * l.cols];
        let data = base
            .chunks_exact(l.cols)
            .zip(&self.scales[layer])
            .flat_map(|(row, d)| row.iter().map(move |w| w * d))
            .collect();
        Mat::new(l.rows, l.cols, data).expect("layer shape")
    }

    /// `b_ℓ(v) = b_ℓ + Δb_ℓ`.
    pub fn effective_bias(&self, arch: &Architecture, phi: &ParamVector, layer: usize) -> Vec<f64> {
        let l = arch.dec[layer];
        phi.as_slice()[l.b..l.b + l.rows]
            .iter()
            .zip(&self.shifts[layer])
            .map(|(b, s)| b + s)
            .collect()
    }
}

/// Prior heads `(μ_y, logσ_y)` for every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub mu: Vec<Vec<f64>>,
    pub logsig: Vec<Vec<f64>>,
}

impl ClassPrior {
    pub fn standard_normal(num_classes: usize, latent_dim: usize) -> Self {
        Self {
            mu: vec![vec![0.0; latent_dim]; num_classes],
            logsig: vec![vec![0.0; latent_dim]; num_classes],
        }
    }
}

pub(crate) struct DecoderNodes {
    pub scales: [NodeId; 3],
    pub shifts: [NodeId; 3],
}

fn mlp2(tape: &mut Tape<'_>, block: BlockId, layers: &[LayerOffsets; 2], x: NodeId) -> NodeId {
    let [l0, l1] = layers;
    let h = tape.linear(block, l0.w, l0.rows, l0.cols, Some(l0.b), x);
    let h = tape.tanh(h);
    tape.linear(block, l1.w, l1.rows, l1.cols, Some(l1.b), h)
}

/// Records `h_θ(v)` and splits it into `d_ℓ = 1 + ½·tanh(a_ℓ)` and `Δb_ℓ`.
pub(crate) fn modulation_on_tape(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    phi: BlockId,
    code: NodeId,
) -> DecoderNodes {
    let raw = mlp2(tape, phi, &arch.h_theta, code);
    let mut scales = [raw; 3];
    let mut shifts = [raw; 3];
    for (i, ((a_off, s_off), l)) in arch.modulation.iter().zip(&arch.dec).enumerate() {
        let a = tape.slice(raw, *a_off, l.rows);
        let t = tape.tanh(a);
        let t = tape.scale(t, 0.5);
        scales[i] = tape.shift(t, 1.0);
        shifts[i] = tape.slice(raw, *s_off, l.rows);
    }
    DecoderNodes { scales, shifts }
}

/// Constants on the tape for an already generated (or mixed) modulation.
pub(crate) fn modulation_constants(tape: &mut Tape<'_>, gen: &GeneratedDecoder) -> DecoderNodes {
    let mut scales = Vec::with_capacity(3);
    let mut shifts = Vec::with_capacity(3);
    for (s, b) in gen.scales.iter().zip(&gen.shifts) {
        scales.push(tape.constant(s.clone()));
        shifts.push(tape.constant(b.clone()));
    }
    DecoderNodes {
        scales: scales.try_into().expect("three layers"),
        shifts: shifts.try_into().expect("three layers"),
    }
}

/// Domain vector `u = h_ω(v)`; shared by all class heads of one code.
pub(crate) fn domain_on_tape(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    phi: BlockId,
    code: NodeId,
) -> NodeId {
    mlp2(tape, phi, &arch.h_omega, code)
}

/// `(μ_y, logσ_y) = g_ω(u, e(y))` with logσ clamped.
pub(crate) fn prior_head_on_tape(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    phi: BlockId,
    domain: NodeId,
    y: usize,
) -> (NodeId, NodeId) {
    let de = arch.cfg.label_embed_dim;
    let dz = arch.cfg.latent_dim;
    let e = tape.param(phi, arch.label_embedding + y * de, de);
    let input = tape.concat(&[domain, e]);
    let out = mlp2(tape, phi, &arch.g_omega, input);
    let mu = tape.slice(out, 0, dz);
    let ls = tape.slice(out, dz, dz);
    let ls = tape.clamp(ls, LOGSIG_MIN, LOGSIG_MAX);
    (mu, ls)
}

fn check_code(arch: &Architecture, code: &[f64]) -> Result<()> {
    arch.check_len("hypernet", "code", code.len(), arch.cfg.code_dim)
}

/// Row scales and bias shifts for client code `v`.
pub fn generate_decoder(arch: &Architecture, code: &[f64], phi: &ParamVector) -> Result<GeneratedDecoder> {
    check_code(arch, code)?;
    let mut tape = Tape::new();
    let b = tape.register_frozen(phi.as_slice());
    let v = tape.constant(code.to_vec());
    let nodes = modulation_on_tape(&mut tape, arch, b, v);
    Ok(GeneratedDecoder {
        scales: nodes.scales.iter().map(|n| tape.value(*n).to_vec()).collect(),
        shifts: nodes.shifts.iter().map(|n| tape.value(*n).to_vec()).collect(),
    })
}

/// Class-conditional prior `(μ_y, logσ_y)` for code `v`.
pub fn generate_prior(
    arch: &Architecture,
    code: &[f64],
    y: usize,
    phi: &ParamVector,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_code(arch, code)?;
    arch.check_class(y)?;
    let mut tape = Tape::new();
    let b = tape.register_frozen(phi.as_slice());
    let v = tape.constant(code.to_vec());
    let u = domain_on_tape(&mut tape, arch, b, v);
    let (mu, ls) = prior_head_on_tape(&mut tape, arch, b, u, y);
    Ok((tape.value(mu).to_vec(), tape.value(ls).to_vec()))
}

/// Prior heads for every class of code `v`.
pub fn generate_class_prior(arch: &Architecture, code: &[f64], phi: &ParamVector) -> Result<ClassPrior> {
    check_code(arch, code)?;
    let mut tape = Tape::new();
    let b = tape.register_frozen(phi.as_slice());
    let v = tape.constant(code.to_vec());
    let u = domain_on_tape(&mut tape, arch, b, v);
    let mut prior = ClassPrior {
        mu: Vec::new(),
        logsig: Vec::new(),
    };
    for y in 0..arch.cfg.num_classes {
        let (mu, ls) = prior_head_on_tape(&mut tape, arch, b, u, y);
        prior.mu.push(tape.value(mu).to_vec());
        prior.logsig.push(tape.value(ls).to_vec());
    }
    Ok(prior)
}

/// Power-iteration estimate of the largest singular value of `w`.
///
/// `state` holds the right singular vector estimate and is warm-started
/// across calls; an empty or zero state is re-seeded deterministically.
/// The estimate `‖W v‖` is nondecreasing in `iters`.
pub fn spectral_norm(w: &Mat, iters: usize, state: &mut Vec<f64>) -> f64 {
    let cols = w.cols();
    if state.len() != cols || norm2(state) == 0.0 {
        *state = (0..cols).map(|j| 1.0 + 0.1 * ((j * 7919) % 13) as f64).collect();
        let n = norm2(state);
        state.iter_mut().for_each(|x| *x /= n);
    }
    for _ in 0..iters.max(1) {
        let u = w.matvec(state).expect("state len");
        let mut next = w.matvec_t(&u).expect("u len");
        let n = norm2(&next);
        if n == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= n);
        *state = next;
    }
    norm2(&w.matvec(state).expect("state len"))
}

/// Warm-started power-iteration vectors, one per hypernetwork matrix.
#[derive(Debug, Clone, Default)]
pub struct LipschitzState {
    vectors: Vec<Vec<f64>>,
}

impl LipschitzState {
    pub fn new() -> Self {
        Self {
            vectors: vec![Vec::new(); HYPER_MATRICES.len()],
        }
    }

    /// `Σ max(0, σ_max(W) − κ)²` over the hypernetwork matrices and its
    /// gradient over the Φ layout (`2(σ−κ) u vᵀ` per active matrix).
    pub fn penalty_and_gradient(
        &mut self,
        phi: &ParamVector,
        kappa: f64,
        iters: usize,
    ) -> (f64, Vec<f64>) {
        if self.vectors.len() != HYPER_MATRICES.len() {
            *self = Self::new();
        }
        let mut grad = vec![0.0; phi.len()];
        let mut total = 0.0;
        for (name, state) in HYPER_MATRICES.iter().zip(&mut self.vectors) {
            let seg = phi.layout().segment(name).expect("hyper matrix").clone();
            let w = phi.matrix(name).expect("hyper matrix");
            let sigma = spectral_norm(&w, iters, state);
            let excess = sigma - kappa;
            if excess > 0.0 {
                total += excess * excess;
                let mut u = w.matvec(state).expect("state len");
                u.iter_mut().for_each(|x| *x /= sigma);
                let g = &mut grad[seg.range()];
                for (r, ur) in u.iter().enumerate() {
                    for (c, vc) in state.iter().enumerate() {
                        g[r * seg.cols + c] = 2.0 * excess * ur * vc;
                    }
                }
            }
        }
        (total, grad)
    }
}

/// Lipschitz penalty with fresh power-iteration state.
pub fn lipschitz_penalty(phi: &ParamVector, kappa: f64, iters: usize) -> f64 {
    LipschitzState::new().penalty_and_gradient(phi, kappa, iters).0
}
