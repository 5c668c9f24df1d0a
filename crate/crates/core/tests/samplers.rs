use nalgebra::{DMatrix, DVector};
use synlik::diagnostics::gamma_departure;
use synlik::error::Result;
use synlik::models::{simulate_ma1, Ma1Model, Ma1Params, Model, TimeSeries};
use synlik::posterior::{
    box_log_prior, bsl_rwmh, bsl_rwmh_with, grid_posterior, rbsl_mh, rejection_abc, uniform_grid, GammaPrior,
    InflationRoot, McmcConfig, SlCovariance,
};
use synlik::rng::derive_seed;
use synlik::synthlik::{estimate_sl, ExactMa1SL};
use rand::Rng;

/// MA(1) whose parameter is read off a 21-point grid: a continuous
/// `u in (-10.5, 10.5)` maps to `theta = GRID[round(u) + 10]`. A uniform prior
/// on `u` is then the uniform discrete prior on the grid.
struct Discretized(Ma1Model);

fn grid_theta(k: usize) -> f64 {
    -0.5 + 0.05 * k as f64
}

fn cell(u: f64) -> usize {
    (u.round() + 10.0) as usize
}

impl Model for Discretized {
    fn name(&self) -> &str {
        "ma1-discrete"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn summary_dim(&self) -> usize {
        2
    }
    fn summary_labels(&self) -> Vec<String> {
        self.0.summary_labels()
    }
    fn in_support(&self, theta: &[f64]) -> bool {
        theta[0] > -10.5 && theta[0] < 10.5
    }
    fn simulate(&self, theta: &[f64], n: usize, seed: u64) -> Result<TimeSeries> {
        self.0.simulate(&[grid_theta(cell(theta[0]))], n, seed)
    }
    fn summarize(&self, y: &[f64]) -> Result<DVector<f64>> {
        self.0.summarize(y)
    }
}

const N: usize = 100;
const M: usize = 20;

fn s_obs() -> DVector<f64> {
    DVector::from_vec(vec![1.0 + 0.1 * 0.1, 0.1])
}

/// Importance-sampling estimate of the BSL posterior over the grid cells and
/// its standard errors (delta method).
fn reference_masses(reps: usize) -> (Vec<f64>, Vec<f64>) {
    let s = s_obs();
    let model = Ma1Model::default();
    let logs: Vec<Vec<f64>> = (0..21)
        .map(|k| {
            (0..reps)
                .map(|r| {
                    estimate_sl(&model, &[grid_theta(k)], M, N, derive_seed(7_000 + k as u64, r as u64))
                        .and_then(|e| e.logpdf(&s))
                        .unwrap_or(f64::NEG_INFINITY)
                })
                .collect()
        })
        .collect();
    let top = logs.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let stats: Vec<(f64, f64)> = logs
        .iter()
        .map(|l| {
            let w: Vec<f64> = l.iter().map(|x| (x - top).exp()).collect();
            let mean = w.iter().sum::<f64>() / reps as f64;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            (mean, (var / reps as f64).sqrt())
        })
        .collect();
    let z: f64 = stats.iter().map(|s| s.0).sum();
    let p = stats.iter().map(|s| s.0 / z).collect();
    // treating the normaliser as known is conservative enough at 21 cells
    let se = stats.iter().map(|s| s.1 / z).collect();
    (p, se)
}

/// Cell frequencies and batch-means standard errors of a chain over `u`.
fn chain_frequencies(draws: &[Vec<f64>], batches: usize) -> (Vec<f64>, Vec<f64>) {
    let len = draws.len() / batches;
    let mut per_batch = vec![vec![0.0; 21]; batches];
    for (b, chunk) in draws.chunks(len).take(batches).enumerate() {
        for d in chunk {
            per_batch[b][cell(d[0])] += 1.0 / len as f64;
        }
    }
    let freq: Vec<f64> = (0..21)
        .map(|k| per_batch.iter().map(|b| b[k]).sum::<f64>() / batches as f64)
        .collect();
    let se = (0..21)
        .map(|k| {
            let v = per_batch.iter().map(|b| (b[k] - freq[k]).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (v / batches as f64).sqrt()
        })
        .collect();
    (freq, se)
}

fn assert_matches_reference(draws: &[Vec<f64>], label: &str) {
    let (p, p_se) = reference_masses(4000);
    let (f, f_se) = chain_frequencies(draws, 25);
    for k in 0..21 {
        let se = (p_se[k].powi(2) + f_se[k].powi(2)).sqrt().max(1e-4);
        let z = (f[k] - p[k]) / se;
        assert!(
            z.abs() < 3.0,
            "{label}: cell {k} chain {:.4} vs reference {:.4} (z = {z:.2})",
            f[k],
            p[k]
        );
    }
}

#[test]
fn pseudo_marginal_discrete_prior() {
    let model = Discretized(Ma1Model::default());
    let prior = box_log_prior(&[(-10.5, 10.5)]);
    let cfg = McmcConfig::new(200_000, vec![0.0], vec![3.0], 11);
    let chain = bsl_rwmh(&model, &prior, &s_obs(), M, N, &cfg).unwrap();
    assert_matches_reference(&chain.draws, "bsl_rwmh");
}

#[test]
fn rbsl_without_gamma_targets_the_bsl_posterior() {
    let model = Discretized(Ma1Model::default());
    let prior = box_log_prior(&[(-10.5, 10.5)]);
    let cfg = McmcConfig::new(200_000, vec![0.0], vec![3.0], 12);
    let pinned = GammaPrior {
        mean: 0.0,
        ..Default::default()
    };
    let chain = rbsl_mh(&model, &prior, &s_obs(), M, N, &cfg, &pinned).unwrap();
    assert!(chain.gammas.as_ref().unwrap().iter().flatten().all(|&g| g == 0.0));
    assert_matches_reference(&chain.draws, "rbsl_mh with gamma = 0");

    // same seed, same kernel: identical draws
    let plain = bsl_rwmh(&model, &prior, &s_obs(), M, N, &cfg).unwrap();
    assert_eq!(plain.draws, chain.draws);
}

#[test]
fn chain_bookkeeping() {
    let model = Ma1Model::default();
    let prior = box_log_prior(&[(-1.0, 1.0)]);
    let s = s_obs();
    let cfg = McmcConfig::new(500, vec![0.0], vec![0.1], 3);
    let a = bsl_rwmh(&model, &prior, &s, 10, 200, &cfg).unwrap();
    assert_eq!(a.draws.len(), 500);
    assert_eq!(a.loglik_trace.len(), 500);
    let repeats = a.accepted.iter().filter(|&&x| x).count();
    assert_eq!(a.acceptance_rate, repeats as f64 / 500.0);
    for (i, w) in a.draws.windows(2).enumerate() {
        if !a.accepted[i + 1] {
            assert_eq!(w[0], w[1]);
        }
    }
    assert_eq!(a, bsl_rwmh(&model, &prior, &s, 10, 200, &cfg).unwrap());

    let empty = bsl_rwmh(&model, &prior, &s, 10, 200, &McmcConfig::new(0, vec![0.0], vec![0.1], 3)).unwrap();
    assert!(empty.is_empty() && empty.acceptance_rate.is_nan());

    let outside = McmcConfig::new(10, vec![1.5], vec![0.1], 3);
    assert!(bsl_rwmh(&model, &prior, &s, 10, 200, &outside).is_err());
}

#[test]
fn fixed_covariance_noise_inflates_the_likelihood_variance() {
    // summary theta + tau z averaged over m draws against a fixed unit
    // covariance: the expected SL is N(s; theta, 1 + tau^2 / m).
    struct Shift;
    impl Model for Shift {
        fn name(&self) -> &str {
            "shift"
        }
        fn theta_dim(&self) -> usize {
            1
        }
        fn summary_dim(&self) -> usize {
            1
        }
        fn summary_labels(&self) -> Vec<String> {
            vec!["S".into()]
        }
        fn in_support(&self, _: &[f64]) -> bool {
            true
        }
        fn simulate(&self, theta: &[f64], _n: usize, seed: u64) -> Result<TimeSeries> {
            let mut rng = synlik::rng::rng_from_seed(seed);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            TimeSeries::new(vec![theta[0] + z, 0.0], seed)
        }
        fn summarize(&self, y: &[f64]) -> Result<DVector<f64>> {
            Ok(DVector::from_element(1, y[0]))
        }
    }
    let prior = box_log_prior(&[(-10.0, 10.0)]);
    let cfg = McmcConfig::new(100_000, vec![0.0], vec![2.0], 5);
    let s = DVector::from_element(1, 1.0);
    let chain = bsl_rwmh_with(&Shift, &prior, &s, 4, 2, &cfg, &SlCovariance::Fixed(DMatrix::identity(1, 1))).unwrap();
    let x = chain.column(0);
    let mean = synlik::stats::mean(&x);
    let var = synlik::stats::variance(&x);
    assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    assert!((var / 1.25 - 1.0).abs() < 0.1, "variance {var}");
}

#[test]
fn ma1_chain_agrees_with_grid_posterior() {
    let n = 500;
    let theta = 0.3;
    let s = DVector::from_vec(vec![1.0 + theta * theta, theta]);
    let exact = ExactMa1SL::new(n).unwrap();
    let grid = uniform_grid(-0.999, 0.999, 2001);
    let post = grid_posterior(|t| exact.loglik(t, &s).unwrap_or(f64::NEG_INFINITY), |_| 0.0, &grid).unwrap();
    let prior = box_log_prior(&[(-1.0, 1.0)]);
    let cfg = McmcConfig::new(6_000, vec![0.3], vec![0.08], 21).with_burn_in(1_000, false);
    let chain = bsl_rwmh(&Ma1Model::default(), &prior, &s, 50, n, &cfg).unwrap();
    let kept: Vec<f64> = chain.kept().iter().map(|d| d[0]).collect();
    let mean = synlik::stats::mean(&kept);
    assert!((mean - post.mean()).abs() < 0.05, "chain {mean} vs grid {}", post.mean());
}

/// Two summaries with unequal scales; the observed value of the second is
/// far from anything the model produces.
struct TwoScale;

impl Model for TwoScale {
    fn name(&self) -> &str {
        "two-scale"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn summary_dim(&self) -> usize {
        2
    }
    fn summary_labels(&self) -> Vec<String> {
        vec!["S1".into(), "S2".into()]
    }
    fn in_support(&self, _: &[f64]) -> bool {
        true
    }
    fn simulate(&self, theta: &[f64], _n: usize, seed: u64) -> Result<TimeSeries> {
        let mut rng = synlik::rng::rng_from_seed(seed);
        let a: f64 = rng.sample(rand_distr::StandardNormal);
        let b: f64 = rng.sample(rand_distr::StandardNormal);
        TimeSeries::new(vec![theta[0] + a, 10.0 * b], seed)
    }
    fn summarize(&self, y: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(y))
    }
}

#[test]
fn gamma_flags_the_incompatible_summary() {
    let prior = box_log_prior(&[(-10.0, 10.0)]);
    let s = DVector::from_vec(vec![0.0, 60.0]);
    for root in [InflationRoot::Symmetric, InflationRoot::Diagonal] {
        let cfg = McmcConfig::new(8_000, vec![0.0], vec![1.0], 8).with_burn_in(1_000, false);
        let gp = GammaPrior {
            root,
            ..Default::default()
        };
        let chain = rbsl_mh(&TwoScale, &prior, &s, 30, 2, &cfg, &gp).unwrap();
        assert!(chain.gammas.as_ref().unwrap().iter().flatten().all(|&g| g >= 0.0));
        let dep = gamma_departure(&chain, 0.5).unwrap();
        assert_eq!(dep[0].coordinate, 1, "{root:?}: {dep:?}");
        // log target in x = 1 + gamma_2 is -ln(x)/2 - 18/x - 2x, maximized at x ~ 2.9
        let g2 = synlik::stats::mean(&chain.gamma_column(1).unwrap()[1_000..]);
        let g1 = synlik::stats::mean(&chain.gamma_column(0).unwrap()[1_000..]);
        assert!(g2 > 1.2 && g2 < 3.0 && g1 < 0.6, "{root:?}: gamma means {g1} {g2}");
    }
}

#[test]
fn diagonal_root_scales_each_summary_alone() {
    // with a diagonal root, inflating gamma_2 leaves the S1 marginal alone;
    // the chain on S1 alone should therefore see the same theta posterior
    let prior = box_log_prior(&[(-10.0, 10.0)]);
    let s = DVector::from_vec(vec![0.5, 60.0]);
    let cfg = McmcConfig::new(10_000, vec![0.0], vec![1.5], 9).with_burn_in(1_000, false);
    let gp = GammaPrior {
        root: InflationRoot::Diagonal,
        ..Default::default()
    };
    let chain = rbsl_mh(&TwoScale, &prior, &s, 30, 2, &cfg, &gp).unwrap();
    let kept: Vec<f64> = chain.kept().iter().map(|d| d[0]).collect();
    let mean = synlik::stats::mean(&kept);
    assert!((mean - 0.5).abs() < 0.25, "theta mean {mean}");
}

#[test]
fn compatible_data_leave_gamma_at_its_prior() {
    let model = Ma1Model::default();
    let y = simulate_ma1(&Ma1Params::new(0.3).unwrap(), 500, 31).unwrap();
    let s = model.summarize(y.values()).unwrap();
    let prior = box_log_prior(&[(-1.0, 1.0)]);
    let cfg = McmcConfig::new(12_000, vec![0.3], vec![0.1], 32).with_burn_in(2_000, false);
    let chain = rbsl_mh(&model, &prior, &s, 30, 500, &cfg, &GammaPrior::default()).unwrap();
    for d in gamma_departure(&chain, 0.5).unwrap() {
        assert!(d.ks < 0.15, "gamma_{} KS {}", d.coordinate + 1, d.ks);
    }
}

#[test]
fn abc_basics() {
    let model = Ma1Model::default();
    let s = DVector::from_vec(vec![1.09, 0.3]);
    let sampler = |r: &mut synlik::rng::SimRng| vec![r.random_range(-1.0..1.0)];
    assert!(rejection_abc(&model, &sampler, &s, 100, 100, 0.0, 1).is_err());
    assert!(rejection_abc(&model, &sampler, &s, 100, 100, 1.5, 1).is_err());

    let all = rejection_abc(&model, &sampler, &s, 100, 200, 1.0, 1).unwrap();
    assert_eq!(all.draws.len(), 200);
    assert!(all.distances.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(all.threshold, *all.distances.last().unwrap());
    // keep_frac = 1 returns every prior draw
    let mut prior: Vec<f64> = (0..200)
        .map(|i| sampler(&mut synlik::rng::rng_from_seed(derive_seed(1, i)))[0])
        .collect();
    let mut got = all.column(0);
    prior.sort_by(f64::total_cmp);
    got.sort_by(f64::total_cmp);
    assert_eq!(prior, got);

    let a = rejection_abc(&model, &sampler, &s, 200, 2_000, 0.013, 4).unwrap();
    assert_eq!(a.draws.len(), 26);
    assert_eq!(a, rejection_abc(&model, &sampler, &s, 200, 2_000, 0.013, 4).unwrap());
    let mean = synlik::stats::mean(&a.column(0));
    assert!((mean - 0.3).abs() < 0.1, "abc mean {mean}");
}
