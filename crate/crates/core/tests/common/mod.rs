//! Shared fixtures and the module property suite, used by both the
//! `properties` and `acceptance` test targets.
#![allow(dead_code)]

use std::path::Path;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF, Gamma};

use spatial_profile::config::RunConfig;
use spatial_profile::covariate::{covariate_log_likelihood, sample_phi, ClusterCovariateParams};
use spatial_profile::data::{
    build_graph, quintile_discretize, validate_dataset, Dataset, Hyperparameters, NeighborhoodGraph, RawTable,
    ResponseKind,
};
use spatial_profile::io;
use spatial_profile::mcmc::{
    allocation_probabilities, check_invariants, draw_prior_state, init_state, joint_log_density,
    log_density_with_lambda, simulate_observations, McmcState, Sampler, TraceCluster, TraceSample,
};
use spatial_profile::oracle::{enumerate_posterior, generate, stats, EnumerationGrid, GraphKind, SynthSpec};
use spatial_profile::postprocess::{pam_fixed_k, selection_probabilities, similarity, PseudoProfile};
use spatial_profile::response::{
    gaussian_log_likelihood, metropolis_step, poisson_log_likelihood, sample_tau_y, tau_y_posterior,
};
use spatial_profile::run;
use spatial_profile::spatial::{
    quadratic_form, recenter, sample_u_gaussian, tau_posterior, PoissonSiteConditional, SpatialField,
};

/// Randomized cases per property.
pub const CASES: u32 = 100;
/// Per-case significance for statistical properties: 0.01 spread over all cases.
pub const CASE_ALPHA: f64 = 0.01 / CASES as f64;

pub type Check = fn() -> Result<(), String>;

fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        max_shrink_iters: 64,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

// ---------------------------------------------------------------- fixtures

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

pub fn dataset(
    y: Vec<f64>,
    codes: Vec<Vec<i64>>,
    categories: &[usize],
    edges: &[(usize, usize)],
    kind: ResponseKind,
    offset: Option<Vec<f64>>,
) -> Dataset {
    let n = y.len();
    let raw = RawTable {
        y,
        x: codes.into_iter().enumerate().map(|(j, c)| (format!("x_{j}"), c)).collect(),
        w: vec![],
        offset,
    };
    validate_dataset(raw, build_graph(n, edges).unwrap(), kind, Some(categories)).unwrap()
}

/// Reorders areas so that new area `k` is old area `perm[k]`.
pub fn permute_dataset(data: &Dataset, perm: &[usize]) -> Dataset {
    let raw = data.to_raw();
    let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let permuted = RawTable {
        y: pick(&raw.y),
        x: raw.x.iter().map(|(n, c)| (n.clone(), perm.iter().map(|&i| c[i]).collect())).collect(),
        w: raw.w.iter().map(|(n, c)| (n.clone(), pick(c))).collect(),
        offset: raw.offset.as_deref().map(pick),
    };
    let graph = data.graph().permuted(perm).unwrap();
    validate_dataset(permuted, graph, data.kind(), Some(data.categories())).unwrap()
}

/// Three areas, two covariates: the exact-enumeration fixture.
pub fn enumeration_fixture() -> (Dataset, Hyperparameters) {
    let data = dataset(
        vec![-0.8, -0.5, 1.2],
        vec![vec![0, 0, 1], vec![1, 1, 0]],
        &[2, 2],
        &[],
        ResponseKind::Gaussian,
        None,
    );
    let hyper = Hyperparameters::with_categories(data.categories());
    (data, hyper)
}

pub fn enumeration_grid() -> EnumerationGrid {
    EnumerationGrid::default()
}

fn edges_from(n: usize, pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    pairs.iter().map(|&(a, b)| (a % n, b % n)).filter(|(a, b)| a != b).collect()
}

fn small_dataset() -> impl Strategy<Value = Dataset> {
    (3usize..8, 1usize..3, any::<bool>(), any::<u64>()).prop_map(|(n, j, poisson, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let categories: Vec<usize> = (0..j).map(|_| rng.random_range(2..4)).collect();
        let codes = categories
            .iter()
            .map(|&k| (0..n).map(|_| rng.random_range(0..k) as i64).collect())
            .collect();
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        let edges = edges_from(n, &pairs);
        if poisson {
            let y = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let off = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
            dataset(y, codes, &categories, &edges, ResponseKind::Poisson, Some(off))
        } else {
            let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            dataset(y, codes, &categories, &edges, ResponseKind::Gaussian, None)
        }
    })
}

fn random_graph() -> impl Strategy<Value = NeighborhoodGraph> {
    (2usize..12, prop::collection::vec((0usize..12, 0usize..12), 0..20))
        .prop_map(|(n, pairs)| build_graph(n, &edges_from(n, &pairs)).unwrap())
}

fn random_trace_sample(rng: &mut ChaCha8Rng, iteration: usize, n: usize, categories: &[usize]) -> TraceSample {
    let k = rng.random_range(1..4usize);
    let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut psi: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = psi.iter().sum::<f64>() * 1.25;
    psi.iter_mut().for_each(|p| *p /= total);
    TraceSample {
        iteration,
        alpha: rng.random_range(0.1..5.0),
        tau: rng.random_range(0.1..5.0),
        tau_y: Some(rng.random_range(0.1..5.0)),
        beta: vec![],
        clusters: (0..k)
            .map(|label| TraceCluster {
                label,
                size: z.iter().filter(|&&c| c == label).count(),
                psi: psi[label],
                theta: rng.random_range(-3.0..3.0),
                phi: categories
                    .iter()
                    .map(|&m| {
                        let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
                        let s: f64 = w.iter().sum();
                        w.into_iter().map(|x| x / s).collect()
                    })
                    .collect(),
            })
            .collect(),
        z,
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

// ---------------------------------------------------------------- data-model

fn data_permutation_preserves_validity() -> Result<(), String> {
    let strat = (2usize..8, any::<u64>(), any::<bool>(), any::<bool>());
    check(strat, |(n, seed, poisson, corrupt)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes: Vec<i64> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut offset: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        if corrupt {
            let i = rng.random_range(0..n);
            match rng.random_range(0..3) {
                0 => codes[i] = 3,
                1 => offset[i] = 0.0,
                _ => y[i] = 0.5,
            }
        }
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        let graph = build_graph(n, &edges_from(n, &pairs)).unwrap();
        let kind = if poisson { ResponseKind::Poisson } else { ResponseKind::Gaussian };
        let raw = RawTable {
            y: y.clone(),
            x: vec![("x_0".into(), codes.clone())],
            w: vec![],
            offset: poisson.then(|| offset.clone()),
        };
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = RawTable {
            y: perm.iter().map(|&i| y[i]).collect(),
            x: vec![("x_0".into(), perm.iter().map(|&i| codes[i]).collect())],
            w: vec![],
            offset: poisson.then(|| perm.iter().map(|&i| offset[i]).collect()),
        };
        let a = validate_dataset(raw, graph.clone(), kind, Some(&[3])).is_ok();
        let b = validate_dataset(permuted, graph.permuted(&perm).unwrap(), kind, Some(&[3])).is_ok();
        ensure(a == b, || format!("validity {a} before, {b} after permutation"))
    })
}

fn quintiles_are_monotone() -> Result<(), String> {
    check(prop::collection::vec(-100i32..100, 5..60), |raw| {
        let values: Vec<f64> = raw.iter().map(|&v| v as f64 / 4.0).collect();
        let codes = quintile_discretize(&values).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] <= values[j] {
                    ensure(codes[i] <= codes[j], || format!("{} -> {}, {} -> {}", values[i], codes[i], values[j], codes[j]))?;
                }
            }
        }
        ensure(codes.iter().all(|&c| c < 5), || "code out of range".into())
    })
}

fn graph_is_symmetric() -> Result<(), String> {
    check(random_graph(), |g| {
        for i in 0..g.n() {
            let nb = g.neighbors(i);
            ensure(nb.windows(2).all(|w| w[0] < w[1]), || format!("neighbours of {i} not sorted and unique"))?;
            ensure(!nb.contains(&i), || format!("self-loop at {i}"))?;
            ensure(g.degree(i) == nb.len(), || "degree mismatch".into())?;
            for &j in nb {
                ensure(j < g.n() && g.neighbors(j).contains(&i), || format!("{i} -> {j} not mirrored"))?;
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- covariate-model

fn covariate_likelihood_exchangeable() -> Result<(), String> {
    let strat = (1usize..6, any::<u64>());
    check(strat, |(j, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let categories: Vec<usize> = (0..j).map(|_| rng.random_range(2..6)).collect();
        let a: Vec<Vec<f64>> = categories.iter().map(|&k| vec![1.0; k]).collect();
        let params = sample_phi(std::iter::empty(), &a, &mut rng).unwrap();
        let x: Vec<usize> = categories.iter().map(|&k| rng.random_range(0..k)).collect();
        let mut order: Vec<usize> = (0..j).collect();
        for i in (1..j).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let reordered = ClusterCovariateParams {
            phi: order.iter().map(|&o| params.phi[o].clone()).collect(),
        };
        let xr: Vec<usize> = order.iter().map(|&o| x[o]).collect();
        let l1 = covariate_log_likelihood(&x, &params).unwrap();
        let l2 = covariate_log_likelihood(&xr, &reordered).unwrap();
        ensure((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0), || format!("{l1} vs {l2}"))
    })
}

fn phi_draws_on_simplex() -> Result<(), String> {
    let strat = (1usize..5, 0usize..30, any::<u64>(), 0.01f64..5.0);
    check(strat, |(j, members, seed, conc)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let categories: Vec<usize> = (0..j).map(|_| rng.random_range(2..7)).collect();
        let rows: Vec<Vec<usize>> = (0..members)
            .map(|_| categories.iter().map(|&k| rng.random_range(0..k)).collect())
            .collect();
        let a: Vec<Vec<f64>> = categories.iter().map(|&k| vec![conc; k]).collect();
        let p = sample_phi(rows.iter().map(Vec::as_slice), &a, &mut rng).unwrap();
        ensure(p.is_valid(), || format!("{:?} is not on the simplex", p.phi))
    })
}

fn phi_matches_beta_posterior() -> Result<(), String> {
    let strat = (0usize..=3, 0.2f64..4.0, 0.2f64..4.0, any::<u64>());
    check(strat, |(ones, a0, a1, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<usize>> = (0..3).map(|i| vec![usize::from(i < ones)]).collect();
        let a = vec![vec![a0, a1]];
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_phi(rows.iter().map(Vec::as_slice), &a, &mut rng).unwrap().phi[0][0])
            .collect();
        let beta = Beta::new(a0 + (3 - ones) as f64, a1 + ones as f64).unwrap();
        let (_, p) = stats::ks_test(&draws, |x| beta.cdf(x));
        ensure(p > CASE_ALPHA, || format!("KS p = {p}"))
    })
}

// ---------------------------------------------------------------- response-model

fn gaussian_density_integrates() -> Result<(), String> {
    check((-5.0f64..5.0, 0.05f64..4.0), |(lambda, s2)| {
        let sd = s2.sqrt();
        let m = 40_000;
        let (lo, hi) = (lambda - 12.0 * sd, lambda + 12.0 * sd);
        let h = (hi - lo) / m as f64;
        let total: f64 = (0..=m)
            .map(|k| {
                let w = if k == 0 || k == m { 0.5 } else { 1.0 };
                w * gaussian_log_likelihood(lo + h * k as f64, lambda, s2).exp()
            })
            .sum::<f64>()
            * h;
        ensure((total - 1.0).abs() < 1e-6, || format!("integral {total}"))
    })
}

fn poisson_pmf_sums_to_one() -> Result<(), String> {
    check((0.05f64..5.0, -3.0f64..1.0), |(offset, lambda)| {
        let mu = offset * lambda.exp();
        prop_assume!(mu <= 20.0);
        let total: f64 = (0..200)
            .map(|y| poisson_log_likelihood(y as f64, offset, lambda).unwrap().exp())
            .sum();
        ensure((total - 1.0).abs() < 1e-10, || format!("mu {mu}: sum {total}"))
    })
}

fn tau_y_matches_gamma() -> Result<(), String> {
    let strat = (prop::collection::vec(-3.0f64..3.0, 0..30), 0.5f64..5.0, 0.5f64..5.0, any::<u64>());
    check(strat, |(residuals, s, r, seed)| {
        let mut hyper = Hyperparameters::with_categories(&[]);
        hyper.s_tau_y = s;
        hyper.r_tau_y = r;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_tau_y(ResponseKind::Gaussian, residuals.iter().copied(), &hyper, &mut rng).unwrap())
            .collect();
        let ss: f64 = residuals.iter().map(|x| x * x).sum();
        let (shape, rate) = (s + residuals.len() as f64 / 2.0, r + 0.5 * ss);
        ensure(tau_y_posterior(residuals.len(), ss, &hyper) == (shape, rate), || "posterior parameters".into())?;
        let g = Gamma::new(shape, rate).unwrap();
        let (_, p) = stats::ks_test(&draws, |x| g.cdf(x));
        ensure(p > CASE_ALPHA, || format!("KS p = {p}"))
    })
}

/// Generator that replays one fixed uniform, so an acceptance decision can be
/// integrated over a stratified grid.
struct FixedUniform(u64);

impl RngCore for FixedUniform {
    fn next_u32(&mut self) -> u32 {
        (self.0 >> 32) as u32
    }
    fn next_u64(&mut self) -> u64 {
        self.0
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        dst.iter_mut().for_each(|b| *b = 0);
    }
}

fn metropolis_detailed_balance() -> Result<(), String> {
    check(prop::array::uniform3(0.01f64..1.0), |w| {
        let total: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
        let log_pi = |s: usize| pi[s].ln();
        let strata = 20_000u64;
        let mut p = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mut accepted = 0u64;
                for m in 0..strata {
                    let u = (m as f64 + 0.5) / strata as f64;
                    let mut rng = FixedUniform(((u * (1u64 << 53) as f64) as u64) << 11);
                    let (next, _, _) = metropolis_step(i, log_pi(i), log_pi, |_, _| j, &mut rng);
                    accepted += u64::from(next == j);
                }
                // the other state is proposed with probability 1/2
                p[i][j] = 0.5 * accepted as f64 / strata as f64;
            }
            p[i][i] = 1.0 - p[i].iter().sum::<f64>();
        }
        for j in 0..3 {
            let flow: f64 = (0..3).map(|i| pi[i] * p[i][j]).sum();
            ensure((flow - pi[j]).abs() < 1e-3, || format!("stationarity at {j}: {flow} vs {}", pi[j]))?;
            for i in 0..3 {
                let d = (pi[i] * p[i][j] - pi[j] * p[j][i]).abs();
                ensure(d < 1e-3, || format!("balance ({i},{j}) off by {d}"))?;
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- spatial-icar

fn quadratic_form_null_space() -> Result<(), String> {
    check((random_graph(), any::<u64>()), |(g, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q = quadratic_form(&u, &g).unwrap();
        ensure(q >= 0.0, || format!("negative quadratic form {q}"))?;
        let level: Vec<f64> = (0..g.n()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let flat: Vec<f64> = (0..g.n()).map(|i| level[g.component_of(i)]).collect();
        ensure(quadratic_form(&flat, &g).unwrap() == 0.0, || "nonzero on component-constant field".into())?;
        let varies = g.edges().any(|(i, j)| u[i] != u[j]);
        ensure(!varies || q > 0.0, || "zero quadratic form on a varying field".into())
    })
}

fn gaussian_site_moments() -> Result<(), String> {
    let strat = (1usize..6, 0.1f64..4.0, 0.1f64..4.0, -3.0f64..3.0, -2.0f64..2.0, any::<u64>());
    check(strat, |(k, s2, tau, residual, ubar, seed)| {
        // star graph: area 0 with k neighbours whose mean is ubar
        let g = build_graph(k + 1, &(1..=k).map(|j| (0, j)).collect::<Vec<_>>()).unwrap();
        let mut u = vec![0.0; k + 1];
        (1..=k).for_each(|j| u[j] = ubar + (j as f64 - (k as f64 + 1.0) / 2.0) * 0.3);
        let field = SpatialField { u, tau };
        let precision = 1.0 / s2 + tau * k as f64;
        let mean = (residual / s2 + tau * k as f64 * ubar) / precision;
        let var = 1.0 / precision;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_u_gaussian(0, residual, s2, &field, &g, &mut rng).unwrap()).collect();
        let m = stats::mean(&draws);
        let v = stats::variance(&draws);
        // 4.5 standard errors keeps the family-wise error near 0.01 over all cases
        let se_m = (var / n as f64).sqrt();
        let se_v = var * (2.0 / (n as f64 - 1.0)).sqrt();
        ensure((m - mean).abs() < 4.5 * se_m, || format!("mean {m} vs {mean}"))?;
        ensure((v - var).abs() < 4.5 * se_v, || format!("variance {v} vs {var}"))
    })
}

/// CDF of l(u) = y u − exp(c + u) − ½ k (u − ū)² by trapezoid on a fine grid.
pub fn poisson_site_grid(y: f64, c: f64, k: f64, ubar: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let log_f = |u: f64| y * u - (c + u).exp() - 0.5 * k * (u - ubar).powi(2);
    let target = (y.max(0.5)).ln() - c;
    let pad = 14.0 / k.sqrt();
    let (lo, hi) = (ubar.min(target) - pad, ubar.max(target) + pad);
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|p| lo + h * p as f64).collect();
    let lv: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = lv.iter().map(|l| (l - max).exp()).collect();
    let mut cdf = vec![0.0; points];
    for p in 1..points {
        cdf[p] = cdf[p - 1] + 0.5 * h * (dens[p] + dens[p - 1]);
    }
    let total = cdf[points - 1];
    cdf.iter_mut().for_each(|v| *v /= total);
    (xs, cdf)
}

fn interpolate(xs: &[f64], cdf: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return 0.0;
    }
    if x >= xs[xs.len() - 1] {
        return 1.0;
    }
    let h = xs[1] - xs[0];
    let p = ((x - xs[0]) / h) as usize;
    let t = (x - xs[p]) / h;
    cdf[p] + t * (cdf[p + 1] - cdf[p])
}

fn poisson_site_exact() -> Result<(), String> {
    let strat = (0u32..=50, 0.1f64..10.0, -2.0f64..2.0, 0.2f64..5.0, 1usize..7, -2.0f64..2.0, any::<u64>());
    check(strat, |(y, offset, fixed, tau, n_i, ubar, seed)| {
        let cond = PoissonSiteConditional::new(y as f64, offset, fixed, tau, n_i, ubar);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..3000)
            .map(|_| cond.sample(&mut rng))
            .collect::<Result<_, _>>()
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let (xs, cdf) = poisson_site_grid(y as f64, offset.ln() + fixed, tau * n_i as f64, ubar, 100_001);
        let (_, p) = stats::ks_test(&draws, |x| interpolate(&xs, &cdf, x));
        ensure(p > CASE_ALPHA, || format!("KS p = {p}"))
    })
}

fn recenter_preserves_predictor() -> Result<(), String> {
    check((random_graph(), any::<u64>()), |(g, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.n();
        let k = rng.random_range(1..4usize);
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut thetas: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut u: Vec<f64> = (0..n).map(|i| if g.is_isolated(i) { 0.0 } else { rng.random_range(-1.0..3.0) }).collect();
        let before: Vec<f64> = (0..n).map(|i| thetas[z[i]] + u[i]).collect();
        recenter(&mut u, &g, &mut thetas);
        for i in 0..n {
            if g.is_isolated(i) {
                ensure(u[i] == 0.0, || format!("isolated area {i} moved"))?;
            } else {
                let after = thetas[z[i]] + u[i];
                ensure((after - before[i]).abs() < 1e-12, || format!("area {i}: {} -> {after}", before[i]))?;
            }
        }
        ensure(u.iter().sum::<f64>().abs() < 1e-10, || "not centred".into())?;
        let (u1, t1) = (u.clone(), thetas.clone());
        recenter(&mut u, &g, &mut thetas);
        let same = u.iter().zip(&u1).all(|(a, b)| (a - b).abs() < 1e-14)
            && thetas.iter().zip(&t1).all(|(a, b)| (a - b).abs() < 1e-14);
        ensure(same, || "recenter is not idempotent".into())
    })
}

fn tau_shape_uses_rank() -> Result<(), String> {
    check((random_graph(), 0.1f64..3.0, 0.1f64..3.0), |(g, a, b)| {
        let u = vec![0.0; g.n()];
        let (shape, rate) = tau_posterior(&u, &g, a, b).unwrap();
        let k = g.n_components();
        ensure(shape == a + (g.n() - k) as f64 / 2.0, || format!("shape {shape} with {k} components"))?;
        ensure(rate == b, || "rate".into())
    })
}

// ---------------------------------------------------------------- mcmc-engine

fn sweeps_keep_invariants_and_density() -> Result<(), String> {
    check((small_dataset(), any::<u64>()), |(data, seed)| {
        let hyper = Hyperparameters::with_categories(data.categories());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = init_state(&data, &hyper, 2 + (seed % 6) as usize, &mut rng).unwrap();
        let mut sampler = Sampler::new(&data, &hyper, true);
        sampler.set_checking(true);
        let spatial = sampler.spatial();
        for t in 0..15 {
            sampler.sweep(&mut state, &mut rng).map_err(|e| TestCaseError::fail(format!("sweep {t}: {e}")))?;
            check_invariants(&state, &data, spatial).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let cached = log_density_with_lambda(&state, &data, &hyper, spatial, state.lambda());
            let full = joint_log_density(&state, &data, &hyper, spatial);
            ensure((cached - full).abs() < 1e-8, || format!("sweep {t}: {cached} vs {full}"))?;
        }
        Ok(())
    })
}

fn permute_state(state: &McmcState, perm: &[usize], data: &Dataset) -> McmcState {
    let mut s = state.clone();
    s.z = perm.iter().map(|&i| state.z[i]).collect();
    s.spatial.u = perm.iter().map(|&i| state.spatial.u[i]).collect();
    s.refresh(data);
    s
}

fn conditionals_are_permutation_equivariant() -> Result<(), String> {
    check((small_dataset(), any::<u64>()), |(data, seed)| {
        let hyper = Hyperparameters::with_categories(data.categories());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = init_state(&data, &hyper, 4, &mut rng).unwrap();
        let mut sampler = Sampler::new(&data, &hyper, true);
        for _ in 0..3 {
            sampler.sweep(&mut state, &mut rng).unwrap();
        }
        let n = data.n();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pdata = permute_dataset(&data, &perm);
        let pstate = permute_state(&state, &perm, &pdata);
        let spatial = sampler.spatial();
        let a = joint_log_density(&state, &data, &hyper, spatial);
        let b = joint_log_density(&pstate, &pdata, &hyper, spatial);
        ensure((a - b).abs() < 1e-9 * a.abs().max(1.0), || format!("joint density {a} vs {b}"))?;
        for (new, &old) in perm.iter().enumerate() {
            let p = allocation_probabilities(&state, &data, old).unwrap();
            let q = allocation_probabilities(&pstate, &pdata, new).unwrap();
            let d = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ensure(d < 1e-12, || format!("area {old}: allocation probabilities differ by {d}"))?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- postprocess

fn similarity_symmetric_unit_diagonal() -> Result<(), String> {
    let strat = (1usize..15, 1usize..40, any::<u64>());
    check(strat, |(n, t, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace: Vec<Vec<usize>> = (0..t).map(|_| (0..n).map(|_| rng.random_range(0..4)).collect()).collect();
        let s = similarity(trace.iter().map(Vec::as_slice)).unwrap();
        for i in 0..n {
            ensure(s.get(i, i) == 1.0, || format!("S[{i}][{i}] = {}", s.get(i, i)))?;
            for j in 0..n {
                let v = s.get(i, j);
                ensure(v == s.get(j, i) && (0.0..=1.0).contains(&v), || format!("S[{i}][{j}] = {v}"))?;
            }
        }
        Ok(())
    })
}

fn pam_cost_never_increases() -> Result<(), String> {
    let strat = (4usize..14, 1usize..30, any::<u64>());
    check(strat, |(n, t, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace: Vec<Vec<usize>> = (0..t).map(|_| (0..n).map(|_| rng.random_range(0..3)).collect()).collect();
        let d = similarity(trace.iter().map(Vec::as_slice)).unwrap().dissimilarity();
        let k = rng.random_range(2..n);
        let fit = pam_fixed_k(&d, n, k).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(fit.history.windows(2).all(|w| w[1] <= w[0]), || format!("history {:?}", fit.history))?;
        ensure(fit.history.last() == Some(&fit.cost), || "final cost not recorded".into())?;
        for (m, &med) in fit.medoids.iter().enumerate() {
            ensure(fit.labels[med] == m, || format!("medoid {med} labeled {}", fit.labels[med]))?;
        }
        ensure(fit.labels.iter().all(|&l| l < k), || "label out of range".into())
    })
}

fn modal_profile_concentrates() -> Result<(), String> {
    let strat = (2usize..4, 3usize..6, any::<u64>());
    check(strat, |(k, j, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kcat = 4;
        // cluster c puts 0.85 on category c of every covariate
        let samples: Vec<TraceSample> = (0..200)
            .map(|it| {
                let mut s = random_trace_sample(&mut rng, it, 5, &vec![kcat; j]);
                s.clusters.truncate(1);
                let psi = 1.0 / k as f64;
                s.clusters = (0..k)
                    .map(|c| TraceCluster {
                        label: c,
                        size: 1,
                        psi,
                        theta: c as f64 * 10.0,
                        phi: (0..j)
                            .map(|_| (0..kcat).map(|m| if m == c { 0.85 } else { 0.05 }).collect())
                            .collect(),
                    })
                    .collect();
                s
            })
            .collect();
        let target = rng.random_range(0..k);
        let profile = PseudoProfile::new("modal", vec![Some(target); j]);
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let draws = spatial_profile::postprocess::predict(&[profile], &samples, ResponseKind::Gaussian, &mut prng).unwrap();
        let hits = draws[0].iter().filter(|d| d.cluster == target).count();
        ensure(hits as f64 >= 0.9 * samples.len() as f64, || format!("{hits} of {} draws from cluster {target}", samples.len()))
    })
}

fn marginalization_never_lowers_entropy() -> Result<(), String> {
    let strat = (1usize..5, 1usize..4, any::<u64>());
    check(strat, |(t, j, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let categories: Vec<usize> = (0..j).map(|_| rng.random_range(2..5)).collect();
        let trace: Vec<TraceSample> = (0..t).map(|it| random_trace_sample(&mut rng, it, 4, &categories)).collect();
        let codes: Vec<Option<usize>> = categories
            .iter()
            .map(|&k| if rng.random::<bool>() { Some(rng.random_range(0..k)) } else { None })
            .collect();
        let free = rng.random_range(0..j);
        let mut marginal = codes.clone();
        marginal[free] = None;
        let mut h_marginal = 0.0;
        let mut h_expected = 0.0;
        for s in &trace {
            let p = selection_probabilities(&PseudoProfile::new("m", marginal.clone()), s).unwrap();
            h_marginal += entropy(&p);
            for code in 0..categories[free] {
                let q: f64 = p.iter().zip(&s.clusters).map(|(pc, cl)| pc * cl.phi[free][code]).sum();
                let mut fixed = marginal.clone();
                fixed[free] = Some(code);
                let pf = selection_probabilities(&PseudoProfile::new("f", fixed), s).unwrap();
                h_expected += q * entropy(&pf);
            }
        }
        ensure(h_marginal >= h_expected - 1e-12, || format!("{h_marginal} < {h_expected}"))
    })
}

// ---------------------------------------------------------------- synth-oracle

fn synth_deterministic_and_centred() -> Result<(), String> {
    let strat = (4usize..40, 1usize..4, 0.0f64..4.0, 0.2f64..4.0, 0usize..3, any::<bool>(), any::<u64>());
    check(strat, |(n, k, sep, tau, graph, poisson, seed)| {
        let mut spec = SynthSpec::new(n, k.min(n), sep, tau, seed);
        spec.graph_kind = [GraphKind::Grid, GraphKind::Path, GraphKind::RandomPlanar][graph];
        if poisson {
            spec.response_kind = ResponseKind::Poisson;
        }
        let a = generate(&spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = generate(&spec).unwrap();
        ensure(a.dataset.y() == b.dataset.y() && a.true_labels == b.true_labels && a.true_u == b.true_u, || {
            "generate is not deterministic".into()
        })?;
        let sum: f64 = a.true_u.iter().sum();
        ensure(sum.abs() < 1e-8, || format!("true u sums to {sum}"))
    })
}

fn enumeration_is_a_distribution() -> Result<(), String> {
    let strat = (1usize..4, 1usize..3, any::<u64>());
    check(strat, |(n, j, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let codes = (0..j).map(|_| (0..n).map(|_| rng.random_range(0..2)).collect()).collect();
        let data = dataset(y, codes, &vec![2; j], &[], ResponseKind::Gaussian, None);
        let hyper = Hyperparameters::with_categories(data.categories());
        let grid = EnumerationGrid {
            alpha_points: 401,
            tau_points: 101,
            theta_points: 101,
        };
        let post = enumerate_posterior(&data, &hyper, grid).unwrap();
        let total: f64 = post.partitions.iter().map(|(_, p)| p).sum();
        ensure((total - 1.0).abs() < 1e-10, || format!("total {total}"))?;
        ensure(post.partitions.iter().all(|(_, p)| *p >= 0.0), || "negative probability".into())?;
        for i in 0..n {
            ensure((post.together(i, i) - 1.0).abs() < 1e-10, || "diagonal".into())?;
            for k in 0..n {
                ensure((post.together(i, k) - post.together(k, i)).abs() < 1e-15, || "asymmetric".into())?;
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- cli-io

fn csv_round_trip() -> Result<(), String> {
    let strat = (2usize..10, 1usize..6, 1usize..3, any::<u64>());
    check(strat, |(n, t, j, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let categories: Vec<usize> = (0..j).map(|_| rng.random_range(2..5)).collect();
        let samples: Vec<TraceSample> = (0..t).map(|it| random_trace_sample(&mut rng, 10 + it, n, &categories)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = |f: &str| dir.path().join(f);
        io::write_trace_scalars(&p("s.csv"), &samples, &[]).unwrap();
        io::write_allocations(&p("a.csv"), &samples).unwrap();
        io::write_trace_clusters(&p("c.csv"), &samples, &categories).unwrap();
        let back = io::read_trace(&p("s.csv"), &p("a.csv"), &p("c.csv")).map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(back == samples, || "trace differs after round trip".into())?;
        let s = similarity(samples.iter().map(|s| s.z.as_slice())).unwrap();
        io::write_similarity(&p("sim.csv"), &s).unwrap();
        ensure(io::read_similarity(&p("sim.csv")).unwrap() == s, || "similarity differs".into())?;
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        io::write_spatial_u(&p("u.csv"), &u).unwrap();
        ensure(io::read_spatial_u(&p("u.csv")).unwrap() == u, || "spatial u differs".into())?;

        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let codes: Vec<Vec<i64>> = categories.iter().map(|&k| (0..n).map(|_| rng.random_range(0..k) as i64).collect()).collect();
        let data = dataset(y, codes, &categories, &path_edges(n), ResponseKind::Gaussian, None);
        io::write_data_csv(&p("d.csv"), &data).unwrap();
        io::write_adjacency(&p("adj.txt"), data.graph()).unwrap();
        let raw = io::read_data_csv(&p("d.csv")).unwrap();
        let g = io::read_adjacency(&p("adj.txt"), n).unwrap();
        let again = validate_dataset(raw, g, ResponseKind::Gaussian, Some(&categories)).unwrap();
        ensure(again.y() == data.y() && again.graph() == data.graph(), || "dataset differs".into())?;
        for i in 0..n {
            ensure(again.x_row(i) == data.x_row(i), || format!("codes of area {i} differ"))?;
        }
        Ok(())
    })
}

/// Writes a small synthetic problem and a fit config into `dir`; returns the config path.
pub fn write_fixture(dir: &Path, spec: &SynthSpec, mcmc: &str, extra: &str) -> std::path::PathBuf {
    let synth = generate(spec).unwrap();
    run::write_synthetic(dir, &synth.dataset, &synth.true_labels, &synth.true_u).unwrap();
    let categories: Vec<String> = synth.dataset.categories().iter().map(usize::to_string).collect();
    let text = format!(
        "[data]\npath = \"data.csv\"\nadjacency = \"adjacency.txt\"\noutput = \"out\"\nresponse = \"{}\"\ncategories = [{}]\n\n[mcmc]\n{mcmc}\n{extra}",
        spec.response_kind,
        categories.join(", ")
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Every CSV in a directory, by name.
pub fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn fit_is_pure_function_of_inputs() -> Result<(), String> {
    let strat = (4usize..10, 1usize..3, any::<bool>(), 1u64..1000);
    check(strat, |(n, chains, poisson, seed)| {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::new(n, 2, 2.0, 2.0, seed);
        spec.n_covariates = 2;
        spec.n_categories = 3;
        if poisson {
            spec.response_kind = ResponseKind::Poisson;
        }
        let mcmc = format!("n_iter = 30\nburn_in = 10\nthin = 2\nn_chains = {chains}\nseed = {seed}\nn_init_clusters = 4\n");
        let profile = "[[profile]]\ncodes = \"0,NA\"\n";
        let cfg_path = write_fixture(dir.path(), &spec, &mcmc, profile);
        let mut cfg = RunConfig::from_file(&cfg_path).unwrap();
        run::run_fit(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let first = read_outputs(&cfg.output_dir);
        cfg.output_dir = dir.path().join("again");
        run::run_fit(&cfg).unwrap();
        let second = read_outputs(&cfg.output_dir);
        ensure(first == second, || "outputs differ between identical runs".into())
    })
}

// ---------------------------------------------------------------- registry

/// Every module invariant checked as a randomized property, with its module.
pub fn properties() -> Vec<(&'static str, &'static str, Check)> {
    vec![
        ("data-model", "row permutation preserves dataset validity", data_permutation_preserves_validity),
        ("data-model", "quintile codes are monotone", quintiles_are_monotone),
        ("data-model", "built graphs are symmetric without self-loops", graph_is_symmetric),
        ("covariate-model", "covariate likelihood is exchangeable", covariate_likelihood_exchangeable),
        ("covariate-model", "phi draws lie on the simplex", phi_draws_on_simplex),
        ("covariate-model", "phi draws match the Beta posterior (KS)", phi_matches_beta_posterior),
        ("response-model", "gaussian density integrates to 1", gaussian_density_integrates),
        ("response-model", "poisson pmf sums to 1", poisson_pmf_sums_to_one),
        ("response-model", "tau_Y draws match the Gamma conditional (KS)", tau_y_matches_gamma),
        ("response-model", "metropolis kernel satisfies detailed balance", metropolis_detailed_balance),
        ("spatial-icar", "quadratic form is nonnegative, zero iff flat per component", quadratic_form_null_space),
        ("spatial-icar", "gaussian site draws match conditional moments", gaussian_site_moments),
        ("spatial-icar", "poisson site draws match the grid density (KS)", poisson_site_exact),
        ("spatial-icar", "recenter preserves predictors and is idempotent", recenter_preserves_predictor),
        ("spatial-icar", "tau shape uses n minus components", tau_shape_uses_rank),
        ("mcmc-engine", "sweeps keep invariants and incremental density", sweeps_keep_invariants_and_density),
        ("mcmc-engine", "conditionals are equivariant under area permutation", conditionals_are_permutation_equivariant),
        ("postprocess", "similarity is symmetric with unit diagonal", similarity_symmetric_unit_diagonal),
        ("postprocess", "pam swap cost never increases", pam_cost_never_increases),
        ("postprocess", "modal profile concentrates on its cluster", modal_profile_concentrates),
        ("postprocess", "marginalizing a code never lowers expected entropy", marginalization_never_lowers_entropy),
        ("synth-oracle", "generate is deterministic with centred u", synth_deterministic_and_centred),
        ("synth-oracle", "enumeration is a proper distribution", enumeration_is_a_distribution),
        ("cli-io", "emitted CSVs re-parse to the same values", csv_round_trip),
        ("cli-io", "fit output is a pure function of inputs", fit_is_pure_function_of_inputs),
    ]
}

// ---------------------------------------------------------------- geweke

/// Scalar summaries compared by the Geweke test.
pub const GEWEKE_SUMMARIES: [&str; 10] = [
    "alpha", "alpha^2", "tau", "tau^2", "theta_z0", "theta_z0^2", "tau_y", "k_occupied", "k_occupied^2", "size_z0",
];

fn geweke_summaries(state: &McmcState) -> [f64; 10] {
    let k = state.c_active() as f64;
    let theta0 = state.clusters[state.z[0]].response.theta;
    let size0 = state.z.iter().filter(|&&c| c == state.z[0]).count() as f64;
    [
        state.alpha,
        state.alpha * state.alpha,
        state.spatial.tau,
        state.spatial.tau.powi(2),
        theta0,
        theta0 * theta0,
        state.globals.tau_y(),
        k,
        k * k,
        size0,
    ]
}

/// Geweke fixture: 20 areas on a 4 × 5 grid, two covariates, gaussian response.
pub fn geweke_fixture() -> (Dataset, Hyperparameters) {
    let n = 20;
    let edges = spatial_profile::oracle::grid_edges(4, 5);
    let codes = vec![(0..n).map(|i| (i % 3) as i64).collect(), (0..n).map(|i| (i % 2) as i64).collect()];
    let data = dataset(vec![0.0; n], codes, &[3, 2], &edges, ResponseKind::Gaussian, None);
    let mut hyper = Hyperparameters::with_categories(data.categories());
    // moderate precision priors keep the successive-conditional chain well mixed
    hyper.a_tau = 5.0;
    hyper.b_tau = 5.0;
    hyper.s_tau_y = 5.0;
    hyper.r_tau_y = 5.0;
    hyper.sigma_theta = 1.0;
    (data, hyper)
}

/// z-scores of (marginal-conditional − successive-conditional) summary means.
pub fn geweke(n_marginal: usize, n_successive: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let (mut data, hyper) = geweke_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut marginal: Vec<[f64; 10]> = Vec::with_capacity(n_marginal);
    for _ in 0..n_marginal {
        let state = draw_prior_state(&data, &hyper, true, &mut rng).unwrap();
        marginal.push(geweke_summaries(&state));
    }

    let mut state = draw_prior_state(&data, &hyper, true, &mut rng).unwrap();
    let (y, codes) = simulate_observations(&state, &data, &mut rng).unwrap();
    data.set_observations(y, codes);
    let mut successive: Vec<[f64; 10]> = Vec::with_capacity(n_successive);
    for _ in 0..n_successive {
        {
            let mut sampler = Sampler::new(&data, &hyper, true);
            sampler.set_adapting(false);
            sampler.sweep(&mut state, &mut rng).unwrap();
        }
        let (y, codes) = simulate_observations(&state, &data, &mut rng).unwrap();
        data.set_observations(y, codes);
        state.refresh(&data);
        successive.push(geweke_summaries(&state));
    }

    (0..10)
        .map(|s| {
            let a: Vec<f64> = marginal.iter().map(|g| g[s]).collect();
            let b: Vec<f64> = successive.iter().map(|g| g[s]).collect();
            let se_a2 = stats::variance(&a) / a.len() as f64;
            let se_b = stats::batch_means_se(&b, 50);
            let z = (stats::mean(&a) - stats::mean(&b)) / (se_a2 + se_b * se_b).sqrt();
            (GEWEKE_SUMMARIES[s], z)
        })
        .collect()
}
