//! Conditional VAE pieces: encoder q(z|x,y), decoder p(x|z,y) built from
//! hypernetwork modulations, diagonal-Gaussian KL, and the one-sample ELBO
//! with a unit-variance Gaussian likelihood.

use crate::error::{Error, Result};
use crate::hypernet::{modulation_constants, ClassPrior, DecoderNodes, GeneratedDecoder};
use crate::model::{Architecture, LOGSIG_MAX, LOGSIG_MIN};
use crate::numerics::{one_hot, BlockId, NodeId, ParamVector, Tape};

/// A concrete decoder: base weights in Φ plus one client's modulation.
#[derive(Debug, Clone, Copy)]
pub struct DecoderParams<'a> {
    pub phi: &'a ParamVector,
    pub modulation: &'a GeneratedDecoder,
}

pub(crate) fn encode_on_tape(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    psi: BlockId,
    x: &[f64],
    y: usize,
) -> (NodeId, NodeId) {
    let mut input = x.to_vec();
    input.extend(one_hot(y, arch.cfg.num_classes));
    let mut h = tape.constant(input);
    for (i, l) in arch.enc.iter().enumerate() {
        h = tape.linear(psi, l.w, l.rows, l.cols, Some(l.b), h);
        if i < 2 {
            h = tape.tanh(h);
        }
    }
    let dz = arch.cfg.latent_dim;
    let mu = tape.slice(h, 0, dz);
    let ls = tape.slice(h, dz, dz);
    let ls = tape.clamp(ls, LOGSIG_MIN, LOGSIG_MAX);
    (mu, ls)
}

/// `d_ℓ ⊙ (W_ℓ h) + b_ℓ + Δb_ℓ` per layer, tanh on the hidden layers.
pub(crate) fn decode_on_tape(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    phi: BlockId,
    mods: &DecoderNodes,
    z: NodeId,
    y: usize,
) -> NodeId {
    let label = tape.constant(one_hot(y, arch.cfg.num_classes));
    let mut h = tape.concat(&[z, label]);
    for (i, l) in arch.dec.iter().enumerate() {
        let wx = tape.linear(phi, l.w, l.rows, l.cols, None, h);
        let scaled = tape.mul(mods.scales[i], wx);
        let bias = tape.param(phi, l.b, l.rows);
        let biased = tape.add(scaled, bias);
        h = tape.add(biased, mods.shifts[i]);
        if i < 2 {
            h = tape.tanh(h);
        }
    }
    h
}

/// `z = μ + exp(logσ) ⊙ ε` on the tape.
pub(crate) fn reparameterize_on_tape(
    tape: &mut Tape<'_>,
    mu: NodeId,
    logsig: NodeId,
    eps: &[f64],
) -> NodeId {
    let sig = tape.exp(logsig);
    let e = tape.constant(eps.to_vec());
    let noise = tape.mul(sig, e);
    tape.add(mu, noise)
}

pub(crate) fn kl_on_tape(
    tape: &mut Tape<'_>,
    mu_q: NodeId,
    ls_q: NodeId,
    mu_p: NodeId,
    ls_p: NodeId,
) -> NodeId {
    let log_ratio = tape.sub(ls_p, ls_q);
    let two_ls_q = tape.scale(ls_q, 2.0);
    let var_q = tape.exp(two_ls_q);
    let dmu = tape.sub(mu_q, mu_p);
    let dmu2 = tape.square(dmu);
    let num = tape.add(var_q, dmu2);
    let neg_two_ls_p = tape.scale(ls_p, -2.0);
    let inv_var_p = tape.exp(neg_two_ls_p);
    let ratio = tape.mul(num, inv_var_p);
    let half = tape.scale(ratio, 0.5);
    let terms = tape.add(log_ratio, half);
    let terms = tape.shift(terms, -0.5);
    tape.sum(terms)
}

/// Nodes of one negative-ELBO evaluation.
/// `½‖x − x̂‖² + KL(q ‖ p)` with `x̂ = decode(μ_q + σ_q ε)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn neg_elbo_on_tape(
    tape: &mut Tape<'_>,
    arch: &Architecture,
    psi: BlockId,
    phi: BlockId,
    mods: &DecoderNodes,
    prior: (NodeId, NodeId),
    x: &[f64],
    y: usize,
    eps: &[f64],
) -> NodeId {
    let (mu_q, ls_q) = encode_on_tape(tape, arch, psi, x, y);
    let z = reparameterize_on_tape(tape, mu_q, ls_q, eps);
    let x_hat = decode_on_tape(tape, arch, phi, mods, z, y);
    let target = tape.constant(x.to_vec());
    let diff = tape.sub(target, x_hat);
    let sq = tape.sum_sq(diff);
    let recon = tape.scale(sq, 0.5);
    let kl = kl_on_tape(tape, mu_q, ls_q, prior.0, prior.1);
    tape.add(recon, kl)
}

/// `q(z | x, y)` as `(μ_q, logσ_q)`, logσ clamped to `[−6, 2]`.
pub fn encode(arch: &Architecture, x: &[f64], y: usize, psi: &ParamVector) -> Result<(Vec<f64>, Vec<f64>)> {
    arch.check_len("encode", "x", x.len(), arch.cfg.data_dim)?;
    arch.check_class(y)?;
    check_layout(psi, &arch.psi_layout, "encoder")?;
    let mut tape = Tape::new();
    let b = tape.register_frozen(psi.as_slice());
    let (mu, ls) = encode_on_tape(&mut tape, arch, b, x, y);
    Ok((tape.value(mu).to_vec(), tape.value(ls).to_vec()))
}

/// `z = μ + exp(logσ) ⊙ ε`.
pub fn reparameterize(mu: &[f64], logsig: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logsig.len() || mu.len() != eps.len() {
        return Err(Error::dim(
            "reparameterize",
            format!("mu {} logsig {}", mu.len(), logsig.len()),
            format!("eps {}", eps.len()),
        ));
    }
    Ok(mu
        .iter()
        .zip(logsig)
        .zip(eps)
        .map(|((m, l), e)| m + l.exp() * e)
        .collect())
}

/// Decoder mean `x̂(z, y)`.
pub fn decode(arch: &Architecture, z: &[f64], y: usize, theta: DecoderParams<'_>) -> Result<Vec<f64>> {
    arch.check_len("decode", "z", z.len(), arch.cfg.latent_dim)?;
    arch.check_class(y)?;
    check_layout(theta.phi, &arch.phi_layout, "hypernetwork")?;
    check_modulation(arch, theta.modulation)?;
    let mut tape = Tape::new();
    let b = tape.register_frozen(theta.phi.as_slice());
    let mods = modulation_constants(&mut tape, theta.modulation);
    let zn = tape.constant(z.to_vec());
    let out = decode_on_tape(&mut tape, arch, b, &mods, zn, y);
    Ok(tape.value(out).to_vec())
}

/// `KL(N(μ_q, σ_q²) ‖ N(μ_p, σ_p²))` for diagonal Gaussians.
pub fn kl_diag_gaussians(mu_q: &[f64], ls_q: &[f64], mu_p: &[f64], ls_p: &[f64]) -> Result<f64> {
    let n = mu_q.len();
    if ls_q.len() != n || mu_p.len() != n || ls_p.len() != n {
        return Err(Error::dim(
            "kl_diag_gaussians",
            format!("q ({}, {})", n, ls_q.len()),
            format!("p ({}, {})", mu_p.len(), ls_p.len()),
        ));
    }
    let mut kl = 0.0;
    for j in 0..n {
        let var_q = (2.0 * ls_q[j]).exp();
        let var_p = (2.0 * ls_p[j]).exp();
        let d = mu_q[j] - mu_p[j];
        kl += ls_p[j] - ls_q[j] + (var_q + d * d) / (2.0 * var_p) - 0.5;
    }
    Ok(kl)
}

/// One-sample ELBO: `−½‖x − x̂‖² − KL(q(z|x,y) ‖ p_ω(z|y))`.
pub fn elbo(
    arch: &Architecture,
    x: &[f64],
    y: usize,
    psi: &ParamVector,
    theta: DecoderParams<'_>,
    omega: &ClassPrior,
    eps: &[f64],
) -> Result<f64> {
    arch.check_len("elbo", "x", x.len(), arch.cfg.data_dim)?;
    arch.check_len("elbo", "eps", eps.len(), arch.cfg.latent_dim)?;
    arch.check_class(y)?;
    check_layout(psi, &arch.psi_layout, "encoder")?;
    check_layout(theta.phi, &arch.phi_layout, "hypernetwork")?;
    check_modulation(arch, theta.modulation)?;
    if omega.mu.len() != arch.cfg.num_classes {
        return Err(Error::dim("elbo", "prior classes", omega.mu.len()));
    }
    let mut tape = Tape::new();
    let pb = tape.register_frozen(psi.as_slice());
    let fb = tape.register_frozen(theta.phi.as_slice());
    let mods = modulation_constants(&mut tape, theta.modulation);
    let mu_p = tape.constant(omega.mu[y].clone());
    let ls_p = tape.constant(omega.logsig[y].clone());
    let neg_elbo = neg_elbo_on_tape(&mut tape, arch, pb, fb, &mods, (mu_p, ls_p), x, y, eps);
    Ok(-tape.scalar(neg_elbo))
}

fn check_layout(p: &ParamVector, want: &crate::numerics::ParamLayout, what: &str) -> Result<()> {
    if **p.layout() != *want {
        return Err(Error::LayoutMismatch(format!("{what} parameters do not match the architecture")));
    }
    Ok(())
}

fn check_modulation(arch: &Architecture, m: &GeneratedDecoder) -> Result<()> {
    if m.scales.len() != 3 || m.shifts.len() != 3 {
        return Err(Error::dim("decode", "modulation layers", m.scales.len()));
    }
    for (i, l) in arch.dec.iter().enumerate() {
        if m.scales[i].len() != l.rows || m.shifts[i].len() != l.rows {
            return Err(Error::dim(
                "decode",
                format!("layer {i} modulation {}", m.scales[i].len()),
                format!("rows {}", l.rows),
            ));
        }
    }
    Ok(())
}
