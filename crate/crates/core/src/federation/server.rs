use crate::error::{Error, Result};
use crate::hypernet::LipschitzState;
use crate::numerics::ParamVector;

/// `w_i = n_i / Σ_j n_j`.
pub fn aggregation_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("aggregation needs Σ n_i > 0".into()));
    }
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Server-side spectral penalty step applied after aggregation.
#[derive(Debug)]
pub struct LipschitzStep<'a> {
    pub state: &'a mut LipschitzState,
    pub weight: f64,
    pub kappa: f64,
    pub iters: usize,
}

/// `Φ′ = Φ − η Σ_i w_i g̃_i`, summed in client index order, followed by
/// `Φ″ = Φ′ − η λ_Lip ∇ℛ_Lip(Φ′)` when a Lipschitz step is given.
pub fn server_aggregate(
    phi: &ParamVector,
    grads: &[ParamVector],
    counts: &[usize],
    lr: f64,
    lipschitz: Option<LipschitzStep<'_>>,
) -> Result<ParamVector> {
    if grads.len() != counts.len() {
        return Err(Error::dim("server_aggregate", format!("{} gradients", grads.len()), format!("{} counts", counts.len())));
    }
    if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| !g.same_layout(phi)) {
        return Err(Error::LayoutMismatch(format!("gradient of client {i} does not match the Φ layout")));
    }
    let weights = aggregation_weights(counts)?;
    let mut agg = vec![0.0; phi.len()];
    for (g, w) in grads.iter().zip(&weights) {
        for (a, v) in agg.iter_mut().zip(g.as_slice()) {
            *a += w * v;
        }
    }
    let mut out = phi.clone();
    for (p, a) in out.as_mut_slice().iter_mut().zip(&agg) {
        *p -= lr * a;
    }
    if let Some(step) = lipschitz {
        if step.weight > 0.0 {
            let (_, g) = step.state.penalty_and_gradient(&out, step.kappa, step.iters);
            for (p, v) in out.as_mut_slice().iter_mut().zip(&g) {
                *p -= lr * step.weight * v;
            }
        }
    }
    Ok(out)
}
