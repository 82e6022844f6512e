use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::LabeledSet;
use crate::error::{Error, Result};

pub const MAX_PARTITION_RETRIES: usize = 100;

/// Splits `data` into `m` disjoint client sets with per-class proportions
/// drawn from `Dirichlet(α·1_m)`. Draws that leave a client empty are redrawn.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    data: &LabeledSet,
    m: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<LabeledSet>> {
    if m == 0 {
        return Err(Error::InvalidArgument("partition needs at least one client".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("dirichlet alpha {alpha} must be positive")));
    }
    if data.len() < m {
        return Err(Error::InvalidArgument(format!(
            "dataset of {} samples cannot cover {m} clients",
            data.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut by_class = vec![Vec::new(); data.num_classes];
    for (i, &y) in data.ys.iter().enumerate() {
        by_class[y].push(i);
    }

    for _ in 0..MAX_PARTITION_RETRIES {
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); m];
        for idx in by_class.iter().filter(|c| !c.is_empty()) {
            let mut shuffled = idx.clone();
            shuffled.shuffle(rng);
            let p = dirichlet(&gamma, m, rng);
            let n = shuffled.len();
            let (mut cum, mut start) = (0.0, 0);
            for (i, pi) in p.iter().enumerate() {
                cum += pi;
                let end = if i + 1 == m {
                    n
                } else {
                    ((cum * n as f64).round() as usize).clamp(start, n)
                };
                parts[i].extend_from_slice(&shuffled[start..end]);
                start = end;
            }
        }
        if parts.iter().all(|p| !p.is_empty()) {
            return Ok(parts
                .into_iter()
                .map(|mut p| {
                    p.sort_unstable();
                    data.subset(&p)
                })
                .collect());
        }
    }
    Err(Error::InvalidArgument(format!(
        "no Dirichlet({alpha}) draw gave all {m} clients a sample after {MAX_PARTITION_RETRIES} tries"
    )))
}

fn dirichlet<R: Rng + ?Sized>(gamma: &Gamma<f64>, m: usize, rng: &mut R) -> Vec<f64> {
    for _ in 0..1000 {
        let g: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return g.into_iter().map(|v| v / s).collect();
        }
    }
    // Every gamma draw underflowed: all mass on one client.
    let mut p = vec![0.0; m];
    p[rng.gen_range(0..m)] = 1.0;
    p
}
