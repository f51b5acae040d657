//! Gaussian and Poisson response likelihoods, the t location-scale priors on
//! cluster intercepts and fixed effects, and their parameter updates.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StudentT};
use statrs::function::gamma::ln_gamma;

use crate::data::{Hyperparameters, ResponseKind};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Global response parameters Λ = (β, σ²_Y).
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseGlobals {
    pub beta: Vec<f64>,
    sigma_y2: f64,
    tau_y: f64,
}

impl ResponseGlobals {
    pub fn new(beta: Vec<f64>, tau_y: f64) -> Self {
        ResponseGlobals {
            beta,
            sigma_y2: 1.0 / tau_y,
            tau_y,
        }
    }

    pub fn sigma_y2(&self) -> f64 {
        self.sigma_y2
    }

    pub fn tau_y(&self) -> f64 {
        self.tau_y
    }

    pub fn set_tau_y(&mut self, tau_y: f64) {
        self.tau_y = tau_y;
        self.sigma_y2 = 1.0 / tau_y;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterResponseParams {
    pub theta: f64,
}

/// λ = θ + β·w + u.
pub fn linear_predictor(theta: f64, beta: &[f64], w: &[f64], u: f64) -> Result<f64> {
    if beta.len() != w.len() {
        return Err(Error::DimensionMismatch {
            what: "fixed effects".into(),
            expected: beta.len(),
            found: w.len(),
        });
    }
    Ok(theta + dot(beta, w) + u)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn gaussian_log_likelihood(y: f64, lambda: f64, sigma_y2: f64) -> f64 {
    let r = y - lambda;
    -0.5 * (LN_2PI + sigma_y2.ln()) - r * r / (2.0 * sigma_y2)
}

/// log Poisson(y | E e^λ).
pub fn poisson_log_likelihood(y: f64, offset: f64, lambda: f64) -> Result<f64> {
    if y < 0.0 || y.fract() != 0.0 {
        return Err(Error::InvalidCount { row: 0, value: y });
    }
    Ok(poisson_ll_unchecked(y, offset, lambda))
}

#[inline]
pub(crate) fn poisson_ll_unchecked(y: f64, offset: f64, lambda: f64) -> f64 {
    let log_mu = offset.ln() + lambda;
    let mut ll = -log_mu.exp() - ln_gamma(y + 1.0);
    if y > 0.0 {
        ll += y * log_mu;
    }
    ll
}

/// Normalized log density of the location-scale t distribution.
pub fn t_log_density(x: f64, mu: f64, sigma: f64, df: f64) -> f64 {
    let z = (x - mu) / sigma;
    ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - sigma.ln()
        - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
}

pub fn sample_t<R: Rng + ?Sized>(mu: f64, sigma: f64, df: f64, rng: &mut R) -> f64 {
    let t = StudentT::new(df).expect("positive degrees of freedom");
    mu + sigma * t.sample(rng)
}

/// Likelihood evaluator for one area given its linear predictor.
#[derive(Clone, Copy, Debug)]
pub struct ResponseView<'a> {
    pub kind: ResponseKind,
    pub y: &'a [f64],
    pub offsets: Option<&'a [f64]>,
    pub sigma_y2: f64,
}

impl ResponseView<'_> {
    #[inline]
    pub fn area_log_likelihood(&self, i: usize, lambda: f64) -> f64 {
        match self.kind {
            ResponseKind::Gaussian => gaussian_log_likelihood(self.y[i], lambda, self.sigma_y2),
            ResponseKind::Poisson => {
                let e = self.offsets.map_or(1.0, |o| o[i]);
                poisson_ll_unchecked(self.y[i], e, lambda)
            }
        }
    }
}

/// Random-walk proposal scale tuned toward a target acceptance rate in
/// batches while adaptation is on.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveStep {
    log_step: f64,
    batch_accepted: u32,
    batch_proposed: u32,
    batches: u32,
    pub adapting: bool,
    pub accepted: u64,
    pub proposed: u64,
}

pub const TARGET_ACCEPTANCE: f64 = 0.44;
const BATCH: u32 = 50;

impl AdaptiveStep {
    pub fn new(step: f64) -> Self {
        AdaptiveStep {
            log_step: step.ln(),
            batch_accepted: 0,
            batch_proposed: 0,
            batches: 0,
            adapting: true,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
        if !self.adapting {
            return;
        }
        self.batch_proposed += 1;
        self.batch_accepted += u32::from(accepted);
        if self.batch_proposed == BATCH {
            self.batches += 1;
            let delta = (1.0 / f64::from(self.batches).sqrt()).min(0.1);
            let rate = f64::from(self.batch_accepted) / f64::from(BATCH);
            if rate > TARGET_ACCEPTANCE {
                self.log_step += delta;
            } else {
                self.log_step -= delta;
            }
            self.log_step = self.log_step.clamp(-20.0, 10.0);
            self.batch_accepted = 0;
            self.batch_proposed = 0;
        }
    }
}

/// One Metropolis step with a symmetric proposal. Returns the new value and
/// whether the proposal was accepted.
pub fn metropolis_step<T: Copy, R: Rng + ?Sized>(
    current: T,
    log_current: f64,
    log_target: impl Fn(T) -> f64,
    propose: impl FnOnce(T, &mut R) -> T,
    rng: &mut R,
) -> (T, f64, bool) {
    let proposal = propose(current, rng);
    let log_prop = log_target(proposal);
    let log_ratio = log_prop - log_current;
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        (proposal, log_prop, true)
    } else {
        (current, log_current, false)
    }
}

fn random_walk<R: Rng + ?Sized>(
    current: f64,
    log_target: impl Fn(f64) -> f64,
    step: &mut AdaptiveStep,
    rng: &mut R,
) -> f64 {
    let scale = step.step();
    let (next, _, accepted) = metropolis_step(
        current,
        log_target(current),
        &log_target,
        |x, r| x + scale * Normal::new(0.0, 1.0).expect("unit normal").sample(r),
        rng,
    );
    step.record(accepted);
    next
}

/// Updates a cluster intercept given its members.
///
/// `rest[i]` is λ_i − θ for every area (fixed effects plus spatial term).
/// An empty cluster draws directly from the t prior.
#[allow(clippy::too_many_arguments)]
pub fn sample_theta<R: Rng + ?Sized>(
    current: f64,
    members: &[usize],
    rest: &[f64],
    view: &ResponseView<'_>,
    hyper: &Hyperparameters,
    step: &mut AdaptiveStep,
    rng: &mut R,
) -> f64 {
    if members.is_empty() {
        return sample_t(hyper.mu_theta, hyper.sigma_theta, hyper.t_df, rng);
    }
    let log_target = |theta: f64| {
        t_log_density(theta, hyper.mu_theta, hyper.sigma_theta, hyper.t_df)
            + members
                .iter()
                .map(|&i| view.area_log_likelihood(i, theta + rest[i]))
                .sum::<f64>()
    };
    random_walk(current, log_target, step, rng)
}

/// Componentwise random-walk update of the fixed effects. `lambda` holds the
/// current linear predictors and is kept in sync with `beta`.
#[allow(clippy::too_many_arguments)]
pub fn sample_beta<'w, R: Rng + ?Sized>(
    beta: &mut [f64],
    lambda: &mut [f64],
    w_row: impl Fn(usize) -> &'w [f64],
    view: &ResponseView<'_>,
    hyper: &Hyperparameters,
    steps: &mut [AdaptiveStep],
    rng: &mut R,
) {
    let n = lambda.len();
    for k in 0..beta.len() {
        let current = beta[k];
        let base: &[f64] = lambda;
        let log_target = |b: f64| {
            let shift = b - current;
            t_log_density(b, hyper.mu_beta, hyper.sigma_beta, hyper.t_df)
                + (0..n)
                    .map(|i| view.area_log_likelihood(i, base[i] + shift * w_row(i)[k]))
                    .sum::<f64>()
        };
        let next = random_walk(current, log_target, &mut steps[k], rng);
        if next != current {
            let shift = next - current;
            for (i, l) in lambda.iter_mut().enumerate() {
                *l += shift * w_row(i)[k];
            }
            beta[k] = next;
        }
    }
}

/// Conjugate draw τ_Y ~ Gamma(s + n/2, r + ½ Σ residual²).
pub fn sample_tau_y<R: Rng + ?Sized>(
    kind: ResponseKind,
    residuals: impl IntoIterator<Item = f64>,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<f64> {
    if kind != ResponseKind::Gaussian {
        return Err(Error::InvalidInput(
            "tau_Y is only defined for a gaussian response".into(),
        ));
    }
    let (count, ss) = residuals
        .into_iter()
        .fold((0usize, 0.0), |(c, s), r| (c + 1, s + r * r));
    let (shape, rate) = tau_y_posterior(count, ss, hyper);
    Ok(gamma_draw(shape, rate, rng))
}

/// Shape and rate of the τ_Y full conditional.
pub fn tau_y_posterior(count: usize, sum_sq: f64, hyper: &Hyperparameters) -> (f64, f64) {
    (hyper.s_tau_y + count as f64 / 2.0, hyper.r_tau_y + 0.5 * sum_sq)
}

/// Gamma draw with shape/rate parametrization.
pub fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("positive gamma parameters")
        .sample(rng)
}
