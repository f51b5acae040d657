use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::covariate::{covariate_ll_unchecked, sample_phi};
use crate::data::{Dataset, Hyperparameters, ResponseKind};
use crate::error::{Error, Result};
use crate::response::{sample_beta, sample_tau_y, sample_theta, t_log_density, AdaptiveStep};
use crate::spatial::{gaussian_site_conditional, recenter, sample_tau, PoissonSiteConditional};

use super::state::{
    check_invariants, extend_truncation, sample_alpha, sample_sticks, view, McmcState,
};

/// Conditional allocation probabilities of area `i` over all clusters up to
/// the truncation level.
pub fn allocation_probabilities(state: &McmcState, data: &Dataset, i: usize) -> Result<Vec<f64>> {
    let mut w = vec![0.0; state.c_total()];
    allocation_log_weights(state, data, i, &mut w);
    normalize_log_weights(&mut w).ok_or_else(|| all_zero(i))?;
    Ok(w)
}

fn all_zero(i: usize) -> Error {
    Error::numerical(
        "sample_allocations",
        format!("area {i}: every cluster has zero allocation weight"),
    )
}

fn allocation_log_weights(state: &McmcState, data: &Dataset, i: usize, out: &mut [f64]) {
    let view = view(data, &state.globals);
    let rest = state.lambda[i] - state.clusters[state.z[i]].response.theta;
    let x = data.x_row(i);
    for (c, w) in out.iter_mut().enumerate() {
        let psi = state.psi[c];
        *w = if psi > 0.0 {
            let cl = &state.clusters[c];
            psi.ln()
                + covariate_ll_unchecked(x, &cl.covariates)
                + view.area_log_likelihood(i, cl.response.theta + rest)
        } else {
            f64::NEG_INFINITY
        };
    }
}

/// In-place softmax with max subtraction. `None` when every entry is −∞ or NaN.
fn normalize_log_weights(w: &mut [f64]) -> Option<()> {
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for v in w.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    w.iter_mut().for_each(|v| *v /= total);
    Some(())
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut target = rng.random::<f64>();
    for (k, &pk) in p.iter().enumerate() {
        if target < pk {
            return k;
        }
        target -= pk;
    }
    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(0)
}

/// Redraws every z_i from its conditional given the cluster parameters and
/// weights, keeping counts and linear predictors in sync.
pub fn sample_allocations<R: Rng + ?Sized>(state: &mut McmcState, data: &Dataset, rng: &mut R) -> Result<()> {
    let mut w = vec![0.0; state.c_total()];
    for i in 0..data.n() {
        allocation_log_weights(state, data, i, &mut w);
        normalize_log_weights(&mut w).ok_or_else(|| all_zero(i))?;
        let old = state.z[i];
        let new = categorical(&w, rng);
        if new != old {
            state.counts[old] -= 1;
            state.counts[new] += 1;
            state.lambda[i] += state.clusters[new].response.theta - state.clusters[old].response.theta;
            state.z[i] = new;
        }
    }
    Ok(())
}

/// Metropolis swap of two uniformly chosen labels, moving parameters and
/// allocations together and keeping the sticks. Returns whether it was accepted.
pub fn swap_labels<R: Rng + ?Sized>(state: &mut McmcState, rng: &mut R) -> bool {
    let c = state.c_total();
    if c < 2 {
        return false;
    }
    let a = rng.random_range(0..c);
    let mut b = rng.random_range(0..c - 1);
    if b >= a {
        b += 1;
    }
    let (na, nb) = (state.counts[a] as f64, state.counts[b] as f64);
    let log_ratio = if na == nb {
        0.0
    } else {
        (na - nb) * (state.psi[b].ln() - state.psi[a].ln())
    };
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        apply_swap(state, a, b);
    }
    accept
}

pub(crate) fn apply_swap(state: &mut McmcState, a: usize, b: usize) {
    state.clusters.swap(a, b);
    state.counts.swap(a, b);
    for k in state.z.iter_mut() {
        if *k == a {
            *k = b;
        } else if *k == b {
            *k = a;
        }
    }
}

/// Relabeling by descending occupancy (ties by label): returns `order` with
/// `order[new] = old` over occupied clusters only.
pub fn occupancy_order(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MoveCounts {
    pub accepted: u64,
    pub proposed: u64,
}

impl MoveCounts {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// One full sweep of the blocked sampler over a fixed dataset.
pub struct Sampler<'a> {
    data: &'a Dataset,
    hyper: &'a Hyperparameters,
    spatial: bool,
    check: bool,
    iteration: usize,
    pub theta_step: AdaptiveStep,
    pub beta_steps: Vec<AdaptiveStep>,
    pub swaps: MoveCounts,
    pub site_moves: MoveCounts,
}

impl<'a> Sampler<'a> {
    /// `spatial` switches the ICAR term on; it is ignored for graphs without edges.
    pub fn new(data: &'a Dataset, hyper: &'a Hyperparameters, spatial: bool) -> Self {
        Sampler {
            data,
            hyper,
            spatial: spatial && data.graph().n_edges() > 0,
            check: cfg!(debug_assertions),
            iteration: 0,
            theta_step: AdaptiveStep::new(0.5),
            beta_steps: vec![AdaptiveStep::new(0.1); data.n_fixed()],
            swaps: MoveCounts::default(),
            site_moves: MoveCounts::default(),
        }
    }

    pub fn spatial(&self) -> bool {
        self.spatial
    }

    pub fn set_adapting(&mut self, on: bool) {
        self.theta_step.adapting = on;
        self.beta_steps.iter_mut().for_each(|s| s.adapting = on);
    }

    /// Turns the per-sweep invariant check on or off (on by default in debug builds).
    pub fn set_checking(&mut self, on: bool) {
        self.check = on;
    }

    pub fn reset_counts(&mut self) {
        self.theta_step.reset_counts();
        self.beta_steps.iter_mut().for_each(AdaptiveStep::reset_counts);
        self.swaps = MoveCounts::default();
        self.site_moves = MoveCounts::default();
    }

    fn abort(&self, component: &'static str) -> impl Fn(Error) -> Error + '_ {
        move |e| Error::ChainAborted {
            iteration: self.iteration,
            component,
            source: Box::new(e),
        }
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut McmcState, rng: &mut R) -> Result<()> {
        sample_allocations(state, self.data, rng).map_err(self.abort("sample_allocations"))?;
        self.update_sticks(state, rng).map_err(self.abort("sample_sticks"))?;
        self.update_phi(state, rng).map_err(self.abort("sample_phi"))?;
        self.update_theta(state, rng);
        self.update_beta(state, rng);
        if self.data.kind() == ResponseKind::Gaussian {
            let residuals = self.data.y().iter().zip(&state.lambda).map(|(y, l)| y - l);
            let tau_y = sample_tau_y(ResponseKind::Gaussian, residuals, self.hyper, rng)
                .map_err(self.abort("sample_tau_y"))?;
            state.globals.set_tau_y(tau_y);
        }
        if self.spatial {
            self.update_field(state, rng).map_err(self.abort("sample_u"))?;
            state.spatial.tau = sample_tau(&state.spatial.u, self.data.graph(), self.hyper, rng)
                .map_err(self.abort("sample_tau"))?;
        }
        let accepted = swap_labels(state, rng);
        self.swaps.record(accepted);
        if self.check {
            check_invariants(state, self.data, self.spatial).map_err(self.abort("check_invariants"))?;
        }
        self.iteration += 1;
        Ok(())
    }

    /// Sticks of the occupied prefix, then α with the remaining sticks
    /// integrated out, then a fresh tail until the residual mass is below
    /// the truncation bound.
    fn update_sticks<R: Rng + ?Sized>(&self, state: &mut McmcState, rng: &mut R) -> Result<()> {
        let m = state.counts.iter().rposition(|&n| n > 0).unwrap_or(0);
        let mut v = sample_sticks(&state.counts[..=m], state.alpha, rng)?;
        state.alpha = sample_alpha(&v, self.hyper.s_alpha, self.hyper.r_alpha, rng);
        extend_truncation(&mut v, state.alpha, rng)?;
        state.set_sticks(v, self.hyper, rng)
    }

    fn members(&self, state: &McmcState) -> Vec<Vec<usize>> {
        let mut members: Vec<Vec<usize>> = state.counts.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (i, &c) in state.z.iter().enumerate() {
            members[c].push(i);
        }
        members
    }

    fn update_phi<R: Rng + ?Sized>(&self, state: &mut McmcState, rng: &mut R) -> Result<()> {
        let members = self.members(state);
        for (cl, rows) in state.clusters.iter_mut().zip(&members) {
            cl.covariates = sample_phi(rows.iter().map(|&i| self.data.x_row(i)), &self.hyper.dirichlet, rng)?;
        }
        Ok(())
    }

    fn update_theta<R: Rng + ?Sized>(&mut self, state: &mut McmcState, rng: &mut R) {
        let members = self.members(state);
        let rest: Vec<f64> = (0..self.data.n())
            .map(|i| state.lambda[i] - state.clusters[state.z[i]].response.theta)
            .collect();
        let view = view(self.data, &state.globals);
        for (cl, rows) in state.clusters.iter_mut().zip(&members) {
            let old = cl.response.theta;
            let new = sample_theta(old, rows, &rest, &view, self.hyper, &mut self.theta_step, rng);
            if new != old {
                for &i in rows {
                    state.lambda[i] = new + rest[i];
                }
                cl.response.theta = new;
            }
        }
    }

    fn update_beta<R: Rng + ?Sized>(&mut self, state: &mut McmcState, rng: &mut R) {
        if self.data.n_fixed() == 0 {
            return;
        }
        let view = view(self.data, &state.globals);
        let data = self.data;
        sample_beta(
            &mut state.globals.beta,
            &mut state.lambda,
            |i| data.w_row(i),
            &view,
            self.hyper,
            &mut self.beta_steps,
            rng,
        );
    }

    /// Site-by-site update of u that keeps the field centred over the
    /// non-isolated areas.
    ///
    /// For site i a new value is drawn from its full conditional; the change
    /// t is then spread so that u_i moves by t, every non-isolated u_j moves by
    /// −t/m and every occupied intercept by +t/m. This leaves Pu and the linear
    /// predictors of non-isolated areas other than i unchanged, so the move is
    /// accepted with the ratio of the intercept priors and of the isolated
    /// areas' likelihoods. The common shift is accumulated lazily.
    fn update_field<R: Rng + ?Sized>(&mut self, state: &mut McmcState, rng: &mut R) -> Result<()> {
        let data = self.data;
        let graph = data.graph();
        let n = data.n();
        let m = graph.n_connected_nodes() as f64;
        let isolated: Vec<usize> = (0..n).filter(|&i| graph.is_isolated(i)).collect();
        let occupied: Vec<usize> = (0..state.c_total()).filter(|&c| state.counts[c] > 0).collect();
        let view = view(data, &state.globals);
        let tau = state.spatial.tau;
        let h = self.hyper;
        let prior = |theta: f64| t_log_density(theta, h.mu_theta, h.sigma_theta, h.t_df);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");

        // u_j = stored[j] − shift for non-isolated j
        let mut stored = state.spatial.u.clone();
        let mut shift = 0.0;
        for i in 0..n {
            if graph.is_isolated(i) {
                continue;
            }
            let nb = graph.neighbors(i);
            let ubar = nb.iter().map(|&j| stored[j]).sum::<f64>() / nb.len() as f64 - shift;
            let ui = stored[i] - shift;
            let fixed = state.lambda[i] - ui;
            let proposal = match data.kind() {
                ResponseKind::Gaussian => {
                    let (mean, var) =
                        gaussian_site_conditional(data.y_at(i) - fixed, view.sigma_y2, tau, nb.len(), ubar)?;
                    mean + var.sqrt() * normal.sample(rng)
                }
                ResponseKind::Poisson => {
                    PoissonSiteConditional::new(data.y_at(i), data.offset(i), fixed, tau, nb.len(), ubar)
                        .sample(rng)
                        .map_err(|e| Error::numerical("sample_u_poisson", format!("area {i}: {e}")))?
                }
            };
            let t = proposal - ui;
            let d = t / m;
            let mut log_ratio = 0.0;
            for &c in &occupied {
                let theta = state.clusters[c].response.theta;
                log_ratio += prior(theta + d) - prior(theta);
            }
            for &j in &isolated {
                log_ratio += view.area_log_likelihood(j, state.lambda[j] + d)
                    - view.area_log_likelihood(j, state.lambda[j]);
            }
            let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
            self.site_moves.record(accept);
            if !accept {
                continue;
            }
            stored[i] += t;
            shift += d;
            state.lambda[i] += t;
            for &c in &occupied {
                state.clusters[c].response.theta += d;
            }
            for &j in &isolated {
                state.lambda[j] += d;
            }
        }
        for (j, (u, s)) in state.spatial.u.iter_mut().zip(&stored).enumerate() {
            if !graph.is_isolated(j) {
                *u = s - shift;
            }
        }
        let mut thetas = state.thetas();
        let drift = recenter(&mut state.spatial.u, graph, &mut thetas);
        if drift != 0.0 {
            for (cl, t) in state.clusters.iter_mut().zip(thetas) {
                cl.response.theta = t;
            }
            for &j in &isolated {
                state.lambda[j] += drift;
            }
        }
        Ok(())
    }
}
