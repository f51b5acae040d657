use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::ln_gamma;

use crate::covariate::{covariate_ll_unchecked, sample_dirichlet, ClusterCovariateParams};
use crate::data::{Dataset, Hyperparameters, ResponseKind};
use crate::error::{Error, Result};
use crate::response::{
    dot, gamma_draw, sample_t, t_log_density, ClusterResponseParams, ResponseGlobals, ResponseView,
};
use crate::spatial::{quadratic_form, SpatialField};

/// Sticks are kept inside (ε, 1 − ε).
pub const STICK_EPS: f64 = 1e-12;
/// Allocation-time bound on the stick mass beyond the truncation level.
pub const RESIDUAL_MASS: f64 = 1e-8;
/// Hard cap on the truncation level.
pub const MAX_STICKS: usize = 50_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub response: ClusterResponseParams,
    pub covariates: ClusterCovariateParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcState {
    pub z: Vec<usize>,
    pub v: Vec<f64>,
    pub psi: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub globals: ResponseGlobals,
    pub spatial: SpatialField,
    pub alpha: f64,
    pub(crate) counts: Vec<usize>,
    /// Cached linear predictors θ_{z_i} + W_iβ + u_i.
    pub(crate) lambda: Vec<f64>,
}

impl McmcState {
    /// Truncation level C_total.
    pub fn c_total(&self) -> usize {
        self.v.len()
    }

    /// Number of occupied clusters C_active.
    pub fn c_active(&self) -> usize {
        self.counts.iter().filter(|&&n| n > 0).count()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.response.theta).collect()
    }

    /// Stick mass left beyond the truncation level, ∏(1 − V_c).
    pub fn residual_mass(&self) -> f64 {
        log_residual(&self.v).exp()
    }

    /// Rebuilds the cached counts and linear predictors from scratch.
    pub fn refresh(&mut self, data: &Dataset) {
        self.counts = occupancy(&self.z, self.v.len());
        self.lambda = full_lambda(self, data);
    }

    /// Replaces the stick variables, recomputing ψ and resizing the cluster
    /// list; clusters past the new truncation are dropped and new ones are
    /// drawn from the prior.
    pub(crate) fn set_sticks<R: Rng + ?Sized>(
        &mut self,
        v: Vec<f64>,
        hyper: &Hyperparameters,
        rng: &mut R,
    ) -> Result<()> {
        let c = v.len();
        debug_assert!(self.z.iter().all(|&k| k < c));
        self.psi = stick_breaking(&v);
        self.v = v;
        self.clusters.truncate(c);
        while self.clusters.len() < c {
            self.clusters.push(prior_cluster(hyper, rng)?);
        }
        self.counts.resize(c, 0);
        Ok(())
    }
}

pub(crate) fn occupancy(z: &[usize], c_total: usize) -> Vec<usize> {
    let mut counts = vec![0; c_total];
    for &k in z {
        counts[k] += 1;
    }
    counts
}

pub(crate) fn full_lambda(state: &McmcState, data: &Dataset) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            state.clusters[state.z[i]].response.theta
                + dot(&state.globals.beta, data.w_row(i))
                + state.spatial.u[i]
        })
        .collect()
}

pub(crate) fn view<'a>(data: &'a Dataset, globals: &ResponseGlobals) -> ResponseView<'a> {
    ResponseView {
        kind: data.kind(),
        y: data.y(),
        offsets: data.offsets(),
        sigma_y2: globals.sigma_y2(),
    }
}

pub(crate) fn clamp_stick(v: f64) -> f64 {
    v.clamp(STICK_EPS, 1.0 - STICK_EPS)
}

fn log_residual(v: &[f64]) -> f64 {
    v.iter().map(|&x| (-x).ln_1p()).sum()
}

/// ψ_c = V_c ∏_{l<c} (1 − V_l).
pub fn stick_breaking(v: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    v.iter()
        .map(|&x| {
            let p = x * rest;
            rest *= 1.0 - x;
            p
        })
        .collect()
}

/// Conjugate stick update V_c ~ Beta(1 + n_c, α + Σ_{l>c} n_l) for every
/// entry of `counts`.
pub fn sample_sticks<R: Rng + ?Sized>(counts: &[usize], alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut tail: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&n_c| {
            tail -= n_c;
            let b = Beta::new(1.0 + n_c as f64, alpha + tail as f64)
                .map_err(|e| Error::numerical("sample_sticks", format!("alpha = {alpha}: {e}")))?;
            Ok(clamp_stick(b.sample(rng)))
        })
        .collect()
}

/// α ~ Gamma(s_α + C, r_α − Σ log(1 − V_c)) over the given sticks.
pub fn sample_alpha<R: Rng + ?Sized>(v: &[f64], s_alpha: f64, r_alpha: f64, rng: &mut R) -> f64 {
    gamma_draw(s_alpha + v.len() as f64, r_alpha - log_residual(v), rng)
}

/// Appends Beta(1, α) sticks until the residual mass drops below
/// [`RESIDUAL_MASS`].
pub fn extend_truncation<R: Rng + ?Sized>(v: &mut Vec<f64>, alpha: f64, rng: &mut R) -> Result<()> {
    let target = RESIDUAL_MASS.ln();
    let mut log_rest = log_residual(v);
    if log_rest < target {
        return Ok(());
    }
    let beta = Beta::new(1.0, alpha)
        .map_err(|e| Error::numerical("extend_truncation", format!("alpha = {alpha}: {e}")))?;
    while log_rest >= target {
        if v.len() >= MAX_STICKS {
            return Err(Error::numerical(
                "extend_truncation",
                format!("more than {MAX_STICKS} sticks needed at alpha = {alpha}"),
            ));
        }
        let x = clamp_stick(beta.sample(rng));
        log_rest += (-x).ln_1p();
        v.push(x);
    }
    Ok(())
}

pub(crate) fn prior_cluster<R: Rng + ?Sized>(hyper: &Hyperparameters, rng: &mut R) -> Result<Cluster> {
    let phi = hyper
        .dirichlet
        .iter()
        .map(|a| sample_dirichlet(a, rng))
        .collect::<Result<_>>()?;
    Ok(Cluster {
        response: ClusterResponseParams {
            theta: sample_t(hyper.mu_theta, hyper.sigma_theta, hyper.t_df, rng),
        },
        covariates: ClusterCovariateParams { phi },
    })
}

/// Starting state: allocations uniform over `n_init_clusters`, parameters from
/// their priors, sticks from their conditional given the initial allocation,
/// u = 0.
pub fn init_state<R: Rng + ?Sized>(
    data: &Dataset,
    hyper: &Hyperparameters,
    n_init_clusters: usize,
    rng: &mut R,
) -> Result<McmcState> {
    if n_init_clusters < 2 {
        return Err(Error::InvalidInput(format!(
            "n_init_clusters must be at least 2, got {n_init_clusters}"
        )));
    }
    hyper.validate(data.categories())?;
    let n = data.n();
    let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_init_clusters)).collect();
    let alpha = gamma_draw(hyper.s_alpha, hyper.r_alpha, rng);
    let mut v = sample_sticks(&occupancy(&z, n_init_clusters), alpha, rng)?;
    extend_truncation(&mut v, alpha, rng)?;
    let beta = (0..data.n_fixed())
        .map(|_| sample_t(hyper.mu_beta, hyper.sigma_beta, hyper.t_df, rng))
        .collect();
    let tau_y = match data.kind() {
        ResponseKind::Gaussian => gamma_draw(hyper.s_tau_y, hyper.r_tau_y, rng),
        ResponseKind::Poisson => 1.0,
    };
    let tau = gamma_draw(hyper.a_tau, hyper.b_tau, rng);
    let mut state = McmcState {
        z,
        v: vec![],
        psi: vec![],
        clusters: vec![],
        globals: ResponseGlobals::new(beta, tau_y),
        spatial: SpatialField::zeros(n, tau),
        alpha,
        counts: vec![],
        lambda: vec![],
    };
    state.set_sticks(v, hyper, rng)?;
    state.refresh(data);
    Ok(state)
}

/// Checks the structural invariants of a state and the agreement of the
/// cached bookkeeping with a fresh recomputation.
pub fn check_invariants(state: &McmcState, data: &Dataset, spatial: bool) -> Result<()> {
    let fail = |msg: String| Err(Error::numerical("check_invariants", msg));
    let c = state.c_total();
    if state.psi.len() != c || state.clusters.len() != c || state.counts.len() != c {
        return fail(format!(
            "length mismatch: V {c}, psi {}, clusters {}, counts {}",
            state.psi.len(),
            state.clusters.len(),
            state.counts.len()
        ));
    }
    if let Some(v) = state.v.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return fail(format!("stick {v} outside (0, 1)"));
    }
    let psi = stick_breaking(&state.v);
    if psi.iter().zip(&state.psi).any(|(a, b)| (a - b).abs() > 1e-12) {
        return fail("psi does not match the stick-breaking formula".into());
    }
    let total: f64 = state.psi.iter().sum();
    if total > 1.0 + 1e-12 {
        return fail(format!("psi sums to {total}"));
    }
    if state.residual_mass() >= RESIDUAL_MASS {
        return fail(format!("residual stick mass {}", state.residual_mass()));
    }
    if let Some(i) = state.z.iter().position(|&k| k >= c) {
        return fail(format!("z[{i}] = {} >= C_total = {c}", state.z[i]));
    }
    if occupancy(&state.z, c) != state.counts {
        return fail("cached cluster counts are stale".into());
    }
    if state.clusters.iter().any(|cl| !cl.covariates.is_valid()) {
        return fail("a cluster has an invalid probability vector".into());
    }
    let fresh = full_lambda(state, data);
    for (i, (a, b)) in fresh.iter().zip(&state.lambda).enumerate() {
        if (a - b).abs() > 1e-8 * (1.0 + a.abs()) {
            return fail(format!("cached linear predictor of area {i} is {b}, recomputed {a}"));
        }
    }
    let graph = data.graph();
    if spatial {
        let mean = state.spatial.u.iter().sum::<f64>() / data.n().max(1) as f64;
        if mean.abs() > 1e-8 {
            return fail(format!("spatial field has mean {mean}"));
        }
    }
    if (0..data.n()).any(|i| graph.is_isolated(i) && state.spatial.u[i] != 0.0) {
        return fail("isolated area with a nonzero spatial effect".into());
    }
    if !(state.alpha > 0.0) || !(state.spatial.tau > 0.0) || !(state.globals.tau_y() > 0.0) {
        return fail("non-positive precision or concentration".into());
    }
    Ok(())
}

fn gamma_log_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

fn dirichlet_log_density(p: &[f64], a: &[f64]) -> f64 {
    let total: f64 = a.iter().sum();
    ln_gamma(total)
        + p.iter()
            .zip(a)
            .map(|(&pk, &ak)| (ak - 1.0) * pk.ln() - ln_gamma(ak))
            .sum::<f64>()
}

/// Joint log density of data and all parameters, up to the improper ICAR
/// normalizer, evaluated with the supplied linear predictors.
pub fn log_density_with_lambda(
    state: &McmcState,
    data: &Dataset,
    hyper: &Hyperparameters,
    spatial: bool,
    lambda: &[f64],
) -> f64 {
    let view = view(data, &state.globals);
    let mut lp = 0.0;
    for i in 0..data.n() {
        let c = state.z[i];
        lp += view.area_log_likelihood(i, lambda[i])
            + covariate_ll_unchecked(data.x_row(i), &state.clusters[c].covariates)
            + state.psi[c].ln();
    }
    let beta_norm = ln_gamma(1.0 + state.alpha) - ln_gamma(state.alpha);
    for (cl, &v) in state.clusters.iter().zip(&state.v) {
        lp += t_log_density(cl.response.theta, hyper.mu_theta, hyper.sigma_theta, hyper.t_df);
        lp += cl
            .covariates
            .phi
            .iter()
            .zip(&hyper.dirichlet)
            .map(|(p, a)| dirichlet_log_density(p, a))
            .sum::<f64>();
        lp += beta_norm + (state.alpha - 1.0) * (-v).ln_1p();
    }
    lp += gamma_log_density(state.alpha, hyper.s_alpha, hyper.r_alpha);
    lp += state
        .globals
        .beta
        .iter()
        .map(|&b| t_log_density(b, hyper.mu_beta, hyper.sigma_beta, hyper.t_df))
        .sum::<f64>();
    if data.kind() == ResponseKind::Gaussian {
        lp += gamma_log_density(state.globals.tau_y(), hyper.s_tau_y, hyper.r_tau_y);
    }
    if spatial {
        let graph = data.graph();
        let tau = state.spatial.tau;
        let rank = (graph.n() - graph.n_components()) as f64;
        let q = quadratic_form(&state.spatial.u, graph).unwrap_or(f64::NAN);
        lp += 0.5 * rank * tau.ln() - 0.5 * tau * q + gamma_log_density(tau, hyper.a_tau, hyper.b_tau);
    }
    lp
}

/// Joint log density recomputed entirely from the state.
pub fn joint_log_density(state: &McmcState, data: &Dataset, hyper: &Hyperparameters, spatial: bool) -> f64 {
    log_density_with_lambda(state, data, hyper, spatial, &full_lambda(state, data))
}

/// Log likelihood of the data alone (response and covariates) given the state.
pub fn data_log_likelihood(state: &McmcState, data: &Dataset) -> f64 {
    let lambda = full_lambda(state, data);
    let view = view(data, &state.globals);
    (0..data.n())
        .map(|i| {
            view.area_log_likelihood(i, lambda[i])
                + covariate_ll_unchecked(data.x_row(i), &state.clusters[state.z[i]].covariates)
        })
        .sum()
}
