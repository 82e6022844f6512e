//! The per-sample client objective
//! `−ELBO + λ_v‖v‖² + λ_MMD·per_sample_mmd2(x, X̂)` and its gradients.
//!
//! The synthetic batch `X̂` is generated from the same client code and Φ:
//! `x̂_j = decode(μ_{y_j} + σ_{y_j} ⊙ ε'_j, y_j)`, so the MMD term is
//! differentiable in Φ and `v`.

use crate::alignment::{
    cross_term_cotangents, per_sample_mmd2, per_sample_mmd2_on_tape, synth_self_term_cotangents, MultiKernel,
};
use crate::cvae::{decode_on_tape, neg_elbo_on_tape, reparameterize_on_tape};
use crate::error::Result;
use crate::hypernet::{domain_on_tape, modulation_on_tape, prior_head_on_tape};
use crate::model::Architecture;
use crate::numerics::{ParamVector, Tape};

/// Labels and latent noise of the synthetic batch used by the MMD term.
#[derive(Debug, Clone, Copy)]
pub struct SynthBatch<'a> {
    pub labels: &'a [usize],
    pub noise: &'a [Vec<f64>],
}

/// Regularizer weights of the per-sample objective.
#[derive(Debug, Clone)]
pub struct ObjectiveTerms {
    pub lambda_code: f64,
    pub lambda_mmd: f64,
    pub kernel: Option<MultiKernel>,
}

impl ObjectiveTerms {
    pub fn elbo_only() -> Self {
        Self {
            lambda_code: 0.0,
            lambda_mmd: 0.0,
            kernel: None,
        }
    }

    fn mmd_kernel(&self) -> Option<&MultiKernel> {
        if self.lambda_mmd != 0.0 {
            self.kernel.as_ref()
        } else {
            None
        }
    }
}

/// Value and gradients of one per-sample objective evaluation.
#[derive(Debug, Clone)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub neg_elbo: f64,
    pub mmd: f64,
    pub psi: Vec<f64>,
    pub code: Vec<f64>,
    pub phi: Vec<f64>,
}

fn check_inputs(arch: &Architecture, x: &[f64], y: usize, code: &[f64], eps: &[f64], synth: &SynthBatch<'_>) -> Result<()> {
    arch.check_len("objective", "x", x.len(), arch.cfg.data_dim)?;
    arch.check_len("objective", "code", code.len(), arch.cfg.code_dim)?;
    arch.check_len("objective", "eps", eps.len(), arch.cfg.latent_dim)?;
    arch.check_class(y)?;
    arch.check_len("objective", "synthetic noise", synth.noise.len(), synth.labels.len())?;
    for (l, n) in synth.labels.iter().zip(synth.noise) {
        arch.check_class(*l)?;
        arch.check_len("objective", "synthetic noise", n.len(), arch.cfg.latent_dim)?;
    }
    Ok(())
}

/// Reference evaluation on a single tape, differentiated w.r.t. ψ, v and Φ.
#[allow(clippy::too_many_arguments)]
pub fn per_sample_objective(
    arch: &Architecture,
    x: &[f64],
    y: usize,
    psi: &ParamVector,
    code: &[f64],
    phi: &ParamVector,
    eps: &[f64],
    synth: &SynthBatch<'_>,
    terms: &ObjectiveTerms,
) -> Result<ObjectiveGradient> {
    check_inputs(arch, x, y, code, eps, synth)?;
    let mut tape = Tape::new();
    let pb = tape.register(psi.as_slice());
    let fb = tape.register(phi.as_slice());
    let vb = tape.register(code);
    let v = tape.param(vb, 0, code.len());
    let mods = modulation_on_tape(&mut tape, arch, fb, v);
    let u = domain_on_tape(&mut tape, arch, fb, v);
    let prior = prior_head_on_tape(&mut tape, arch, fb, u, y);
    let nll = neg_elbo_on_tape(&mut tape, arch, pb, fb, &mods, prior, x, y, eps);
    let mut loss = nll;
    if terms.lambda_code != 0.0 {
        let sq = tape.sum_sq(v);
        let pen = tape.scale(sq, terms.lambda_code);
        loss = tape.add(loss, pen);
    }
    let mut mmd = 0.0;
    if let Some(k) = terms.mmd_kernel() {
        let mut xs = Vec::with_capacity(synth.labels.len());
        for (&l, n) in synth.labels.iter().zip(synth.noise) {
            let (mu, ls) = prior_head_on_tape(&mut tape, arch, fb, u, l);
            let z = reparameterize_on_tape(&mut tape, mu, ls, n);
            xs.push(decode_on_tape(&mut tape, arch, fb, &mods, z, l));
        }
        let m = per_sample_mmd2_on_tape(&mut tape, x, &xs, k);
        mmd = tape.scalar(m);
        let w = tape.scale(m, terms.lambda_mmd);
        loss = tape.add(loss, w);
    }
    let mut g = tape.backward(loss, &[1.0])?;
    Ok(ObjectiveGradient {
        value: tape.scalar(loss),
        neg_elbo: tape.scalar(nll),
        mmd,
        psi: g.take(pb),
        code: g.take(vb),
        phi: g.take(fb),
    })
}

/// Scalar value of [`per_sample_objective`] without gradients.
#[allow(clippy::too_many_arguments)]
pub fn per_sample_objective_value(
    arch: &Architecture,
    x: &[f64],
    y: usize,
    psi: &ParamVector,
    code: &[f64],
    phi: &ParamVector,
    eps: &[f64],
    synth: &SynthBatch<'_>,
    terms: &ObjectiveTerms,
) -> Result<f64> {
    per_sample_objective(arch, x, y, psi, code, phi, eps, synth, terms).map(|g| g.value)
}

/// `−ELBO + λ_v‖v‖²` and its gradients w.r.t. ψ and v (Φ held fixed).
#[allow(clippy::too_many_arguments)]
pub(crate) fn local_objective(
    arch: &Architecture,
    x: &[f64],
    y: usize,
    psi: &ParamVector,
    code: &[f64],
    phi: &ParamVector,
    eps: &[f64],
    lambda_code: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let pb = tape.register(psi.as_slice());
    let fb = tape.register_frozen(phi.as_slice());
    let vb = tape.register(code);
    let v = tape.param(vb, 0, code.len());
    let mods = modulation_on_tape(&mut tape, arch, fb, v);
    let u = domain_on_tape(&mut tape, arch, fb, v);
    let prior = prior_head_on_tape(&mut tape, arch, fb, u, y);
    let nll = neg_elbo_on_tape(&mut tape, arch, pb, fb, &mods, prior, x, y, eps);
    let mut loss = nll;
    if lambda_code != 0.0 {
        let sq = tape.sum_sq(v);
        let pen = tape.scale(sq, lambda_code);
        loss = tape.add(loss, pen);
    }
    let mut g = tape.backward(loss, &[1.0])?;
    Ok((tape.scalar(nll), g.take(pb), g.take(vb)))
}

/// Per-sample Φ-gradients of a whole batch.
#[derive(Debug, Clone)]
pub struct BatchPhiGradients {
    pub per_sample: Vec<Vec<f64>>,
    pub neg_elbo: Vec<f64>,
    pub mmd: Vec<f64>,
}

/// Φ-gradient of [`per_sample_objective`] for every sample of a batch.
///
/// The synthetic batch is recorded once. Each sample's MMD gradient is the
/// backward pass of that shared tape seeded with the sample's cross-term
/// cotangents, plus the synth–synth term, which is the same for all samples.
#[allow(clippy::too_many_arguments)]
pub fn batch_phi_gradients(
    arch: &Architecture,
    xs: &[&[f64]],
    ys: &[usize],
    eps: &[Vec<f64>],
    psi: &ParamVector,
    code: &[f64],
    phi: &ParamVector,
    synth: &SynthBatch<'_>,
    terms: &ObjectiveTerms,
) -> Result<BatchPhiGradients> {
    arch.check_len("batch_phi_gradients", "labels", ys.len(), xs.len())?;
    arch.check_len("batch_phi_gradients", "noise", eps.len(), xs.len())?;
    for ((x, y), e) in xs.iter().zip(ys).zip(eps) {
        check_inputs(arch, x, *y, code, e, synth)?;
    }

    let mut synth_tape = Tape::new();
    let sb = synth_tape.register(phi.as_slice());
    let mut synth_nodes = Vec::new();
    let mut synth_vals: Vec<Vec<f64>> = Vec::new();
    let mut self_term = vec![0.0; phi.len()];
    let kernel = terms.mmd_kernel();
    if let Some(k) = kernel {
        let v = synth_tape.constant(code.to_vec());
        let mods = modulation_on_tape(&mut synth_tape, arch, sb, v);
        let u = domain_on_tape(&mut synth_tape, arch, sb, v);
        for (&l, n) in synth.labels.iter().zip(synth.noise) {
            let (mu, ls) = prior_head_on_tape(&mut synth_tape, arch, sb, u, l);
            let z = reparameterize_on_tape(&mut synth_tape, mu, ls, n);
            let xh = decode_on_tape(&mut synth_tape, arch, sb, &mods, z, l);
            synth_nodes.push(xh);
            synth_vals.push(synth_tape.value(xh).to_vec());
        }
        if !synth_nodes.is_empty() {
            let own = scaled(synth_self_term_cotangents(&synth_vals, k), terms.lambda_mmd);
            let seeds: Vec<_> = synth_nodes.iter().copied().zip(own.iter().map(Vec::as_slice)).collect();
            self_term = synth_tape.backward_many(&seeds)?.take(sb);
        }
    }

    let mut out = BatchPhiGradients {
        per_sample: Vec::with_capacity(xs.len()),
        neg_elbo: Vec::with_capacity(xs.len()),
        mmd: Vec::with_capacity(xs.len()),
    };
    for ((x, &y), e) in xs.iter().zip(ys).zip(eps) {
        let mut tape = Tape::new();
        let pb = tape.register_frozen(psi.as_slice());
        let fb = tape.register(phi.as_slice());
        let v = tape.constant(code.to_vec());
        let mods = modulation_on_tape(&mut tape, arch, fb, v);
        let u = domain_on_tape(&mut tape, arch, fb, v);
        let prior = prior_head_on_tape(&mut tape, arch, fb, u, y);
        let nll = neg_elbo_on_tape(&mut tape, arch, pb, fb, &mods, prior, x, y, e);
        let mut g = tape.backward(nll, &[1.0])?.take(fb);
        out.neg_elbo.push(tape.scalar(nll));
        match kernel {
            Some(k) if !synth_nodes.is_empty() => {
                let cross = scaled(cross_term_cotangents(x, &synth_vals, k), terms.lambda_mmd);
                let seeds: Vec<_> = synth_nodes.iter().copied().zip(cross.iter().map(Vec::as_slice)).collect();
                let gc = synth_tape.backward_many(&seeds)?.take(sb);
                for ((gi, ci), si) in g.iter_mut().zip(&gc).zip(&self_term) {
                    *gi += ci + si;
                }
                out.mmd.push(per_sample_mmd2(x, &synth_vals, k)?);
            }
            _ => out.mmd.push(0.0),
        }
        out.per_sample.push(g);
    }
    Ok(out)
}

fn scaled(mut v: Vec<Vec<f64>>, c: f64) -> Vec<Vec<f64>> {
    v.iter_mut().flatten().for_each(|x| *x *= c);
    v
}
