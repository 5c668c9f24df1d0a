use nalgebra::DVector;
use rand::Rng;

use crate::error::{domain, Result};
use crate::models::Model;
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// Accepted parameters of a rejection-ABC run, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcSample {
    pub draws: Vec<Vec<f64>>,
    pub distances: Vec<f64>,
    /// Distance of the last accepted draw.
    pub threshold: f64,
}

impl AbcSample {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}

/// Rejection ABC with Euclidean summary distance, keeping the
/// `ceil(keep_frac * n_sims)` closest simulations.
///
/// Simulation `i` draws its parameter from `prior_sampler` and its dataset
/// from a stream seeded by child `i` of `seed`. Simulations whose summaries
/// cannot be formed get infinite distance. Ties are broken by index.
pub fn rejection_abc(
    model: &dyn Model,
    prior_sampler: &(dyn Fn(&mut SimRng) -> Vec<f64> + Sync),
    s_obs: &DVector<f64>,
    n: usize,
    n_sims: usize,
    keep_frac: f64,
    seed: u64,
) -> Result<AbcSample> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(domain(format!("keep_frac must lie in (0, 1], got {keep_frac}")));
    }
    if n_sims == 0 {
        return Err(domain("n_sims must be positive"));
    }
    let mut sims: Vec<(usize, Vec<f64>, f64)> = (0..n_sims)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let theta = prior_sampler(&mut rng);
            let sim_seed: u64 = rng.random();
            let dist = model
                .simulate_summary(&theta, n, sim_seed)
                .map(|s| (s - s_obs).norm())
                .unwrap_or(f64::INFINITY);
            (i, theta, dist)
        })
        .collect();
    let keep = ((keep_frac * n_sims as f64).ceil() as usize).min(n_sims);
    sims.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    sims.truncate(keep);
    let threshold = sims.last().map_or(f64::NAN, |s| s.2);
    Ok(AbcSample {
        distances: sims.iter().map(|s| s.2).collect(),
        draws: sims.into_iter().map(|s| s.1).collect(),
        threshold,
    })
}
