use crate::csv::{fmt_f64, CsvTable};
use crate::error::{domain, Error, Result};
use crate::rng::rng_from_seed;
use rand::Rng;

/// Relative height below which a local maximum is not reported as a mode.
pub const MODE_REL_HEIGHT: f64 = 0.05;

/// A one-dimensional posterior tabulated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    /// Normalized so that the trapezoid integral is one.
    pub density: Vec<f64>,
    /// Unnormalized log posterior, `log_prior + loglik`.
    pub log_unnorm: Vec<f64>,
}

/// `points` equispaced values from `lo` to `hi` inclusive. A grid with
/// `lo == -hi` is exactly symmetric, with an exact zero when `points` is odd.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let last = (points - 1) as f64;
    let mut g: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * (i as f64 / last))
        .collect();
    g[points - 1] = hi;
    if lo == -hi {
        for i in 0..points / 2 {
            g[points - 1 - i] = -g[i];
        }
        if points % 2 == 1 {
            g[points / 2] = 0.0;
        }
    }
    g
}

/// Default MA(1) grid: 2001 points on [-0.999, 0.999].
pub fn ma1_grid() -> Vec<f64> {
    uniform_grid(-0.999, 0.999, 2001)
}

pub fn flat_log_prior(_theta: f64) -> f64 {
    0.0
}

/// Evaluates `log_prior + loglik` on the grid and normalizes with the
/// trapezoid rule. `-inf` values get zero density; NaN is an error.
pub fn grid_posterior<L, P>(loglik_fn: L, log_prior_fn: P, grid: &[f64]) -> Result<GridPosterior>
where
    L: Fn(f64) -> f64,
    P: Fn(f64) -> f64,
{
    let lu: Vec<f64> = grid.iter().map(|&t| log_prior_fn(t) + loglik_fn(t)).collect();
    from_log_unnorm(grid, lu)
}

/// Builds a grid posterior from precomputed unnormalized log values.
pub fn from_log_unnorm(grid: &[f64], log_unnorm: Vec<f64>) -> Result<GridPosterior> {
    if grid.len() < 101 {
        return Err(domain(format!(
            "grid posterior needs at least 101 points, got {}",
            grid.len()
        )));
    }
    if log_unnorm.len() != grid.len() {
        return Err(domain("log values and grid differ in length"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("grid must be strictly increasing"));
    }
    if log_unnorm.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(domain("log posterior is NaN or +inf on the grid"));
    }
    let top = log_unnorm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::DegeneratePosterior);
    }
    let mut density: Vec<f64> = log_unnorm.iter().map(|v| (v - top).exp()).collect();
    let z = trapezoid(grid, &density);
    if !(z > 0.0) {
        return Err(Error::DegeneratePosterior);
    }
    for d in &mut density {
        *d /= z;
    }
    Ok(GridPosterior {
        grid: grid.to_vec(),
        density,
        log_unnorm,
    })
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

impl GridPosterior {
    fn moment(&self, f: impl Fn(f64) -> f64) -> f64 {
        let y: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(&t, &d)| f(t) * d)
            .collect();
        trapezoid(&self.grid, &y)
    }

    pub fn mean(&self) -> f64 {
        self.moment(|t| t)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(|t| (t - m) * (t - m))
    }

    /// Indices of strict local maxima of the log posterior (end points count
    /// when they exceed their single neighbour). Working on the log scale makes
    /// the set invariant to any increasing affine map of the log-likelihood.
    pub fn mode_indices(&self) -> Vec<usize> {
        let v = &self.log_unnorm;
        let n = v.len();
        (0..n)
            .filter(|&i| {
                v[i].is_finite()
                    && (i == 0 || v[i] > v[i - 1])
                    && (i + 1 == n || v[i] > v[i + 1])
            })
            .collect()
    }

    /// Local maxima whose density is at least 5% of the peak density.
    pub fn significant_mode_indices(&self) -> Vec<usize> {
        let top = self.density.iter().cloned().fold(0.0, f64::max);
        self.mode_indices()
            .into_iter()
            .filter(|&i| self.density[i] >= MODE_REL_HEIGHT * top)
            .collect()
    }

    /// Locations of the significant modes.
    pub fn modes(&self) -> Vec<f64> {
        self.significant_mode_indices()
            .iter()
            .map(|&i| self.grid[i])
            .collect()
    }

    /// Indices attaining the global maximum of the log posterior.
    pub fn argmax_indices(&self) -> Vec<usize> {
        let top = self.log_unnorm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (0..self.grid.len())
            .filter(|&i| self.log_unnorm[i] == top)
            .collect()
    }

    /// Cumulative trapezoid mass at each grid point.
    pub fn cdf(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        c.push(0.0);
        for i in 1..self.grid.len() {
            acc += 0.5 * (self.grid[i] - self.grid[i - 1]) * (self.density[i] + self.density[i - 1]);
            c.push(acc);
        }
        c
    }

    /// Posterior mass of `[lo, hi]` under the piecewise-linear density.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.cdf_at(hi) - self.cdf_at(lo)
    }

    fn cdf_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return 0.0;
        }
        let cdf = self.cdf();
        if x >= g[g.len() - 1] {
            return cdf[g.len() - 1];
        }
        let i = g.partition_point(|&t| t <= x) - 1;
        let h = x - g[i];
        let slope = (self.density[i + 1] - self.density[i]) / (g[i + 1] - g[i]);
        cdf[i] + self.density[i] * h + 0.5 * slope * h * h
    }

    /// Independent draws from the piecewise-linear density by inversion.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let cdf = self.cdf();
        let total = cdf[cdf.len() - 1];
        (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let i = (cdf.partition_point(|&c| c <= u)).clamp(1, cdf.len() - 1) - 1;
                let (d0, d1) = (self.density[i], self.density[i + 1]);
                let w = self.grid[i + 1] - self.grid[i];
                let r = u - cdf[i];
                // solve d0 h + (d1 - d0) h^2 / (2w) = r for h in [0, w]
                let a = 0.5 * (d1 - d0) / w;
                let h = if a.abs() < 1e-300 || (a * r).abs() < 1e-14 * d0 * d0 {
                    if d0 > 0.0 {
                        r / d0
                    } else {
                        0.0
                    }
                } else {
                    let disc = (d0 * d0 + 4.0 * a * r).max(0.0);
                    2.0 * r / (d0 + disc.sqrt())
                };
                self.grid[i] + h.clamp(0.0, w)
            })
            .collect()
    }

    /// CSV with header `theta,density,log_unnorm`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["theta", "density", "log_unnorm"]);
        for i in 0..self.grid.len() {
            t.row(&[
                fmt_f64(self.grid[i]),
                fmt_f64(self.density[i]),
                fmt_f64(self.log_unnorm[i]),
            ]);
        }
        t.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_conjugate_check() {
        let grid = uniform_grid(-6.0, 6.0, 4001);
        let p = grid_posterior(|t| -0.5 * t * t, flat_log_prior, &grid).unwrap();
        let sup = grid
            .iter()
            .zip(&p.density)
            .map(|(&t, &d)| (d - (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "{sup}");
        assert!((trapezoid(&grid, &p.density) - 1.0).abs() < 1e-8);
        assert!(p.mean().abs() < 1e-10);
        assert!((p.variance() - 1.0).abs() < 1e-5);
        assert_eq!(p.modes(), vec![0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = uniform_grid(-1.0, 1.0, 101);
        assert_eq!(
            grid_posterior(|_| f64::NEG_INFINITY, flat_log_prior, &grid),
            Err(Error::DegeneratePosterior)
        );
        assert!(grid_posterior(|t| t, flat_log_prior, &uniform_grid(0.0, 1.0, 50)).is_err());
        assert!(grid_posterior(|_| f64::NAN, flat_log_prior, &grid).is_err());
    }

    #[test]
    fn neg_inf_points_have_zero_density() {
        let grid = uniform_grid(-1.0, 1.0, 201);
        let p = grid_posterior(|t| if t < 0.0 { f64::NEG_INFINITY } else { 0.0 }, flat_log_prior, &grid)
            .unwrap();
        assert_eq!(p.density[0], 0.0);
        assert!((p.mass_between(-0.01, 1.0) - 1.0).abs() < 1e-12);
        assert!(p.mass_between(-1.0, -0.01).abs() < 1e-15);
    }

    #[test]
    fn sampling_reproduces_moments() {
        let grid = uniform_grid(-6.0, 6.0, 1201);
        let p = grid_posterior(|t| -0.5 * (t - 1.0) * (t - 1.0) / 0.25, flat_log_prior, &grid).unwrap();
        let d = p.sample(50_000, 11);
        assert!((stats::mean(&d) - 1.0).abs() < 0.01);
        assert!((stats::variance(&d) - 0.25).abs() < 0.01);
        assert_eq!(d, p.sample(50_000, 11));
    }

    #[test]
    fn csv_header_and_rows() {
        let grid = uniform_grid(-1.0, 1.0, 101);
        let p = grid_posterior(|t| -t * t, flat_log_prior, &grid).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("theta,density,log_unnorm\n"));
        assert_eq!(csv.lines().count(), 102);
    }

    proptest! {
        #[test]
        fn invariant_to_loglik_shift(c in -500.0f64..500.0, a in 0.1f64..20.0) {
            let grid = uniform_grid(-1.0, 1.0, 301);
            let base = grid_posterior(|t| -a * (t - 0.2).powi(2) + (3.0 * t).sin(), flat_log_prior, &grid).unwrap();
            let shifted = grid_posterior(|t| -a * (t - 0.2).powi(2) + (3.0 * t).sin() + c, flat_log_prior, &grid).unwrap();
            let sup = base.density.iter().zip(&shifted.density).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(sup < 1e-8);
        }
    }
}
