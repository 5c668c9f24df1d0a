//! Posterior computation: grid posteriors, pseudo-marginal BSL, robust BSL
//! and rejection ABC.

mod abc;
mod grid;
mod mcmc;

pub use abc::{rejection_abc, AbcSample};
pub use grid::{
    flat_log_prior, from_log_unnorm, grid_posterior, ma1_grid, trapezoid, uniform_grid,
    GridPosterior,
};
pub use mcmc::{
    bsl_rwmh, bsl_rwmh_with, rbsl_mh, Chain, GammaPrior, InflationRoot, McmcConfig, SlCovariance, TuningStep,
};

/// Log density of independent uniform priors on a box; `-inf` outside.
pub fn box_log_prior(bounds: &[(f64, f64)]) -> impl Fn(&[f64]) -> f64 + '_ {
    move |theta: &[f64]| {
        if theta.len() == bounds.len()
            && theta
                .iter()
                .zip(bounds)
                .all(|(t, (lo, hi))| t >= lo && t <= hi)
        {
            -bounds.iter().map(|(lo, hi)| (hi - lo).ln()).sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }
}
