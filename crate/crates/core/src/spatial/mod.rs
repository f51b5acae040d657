//! Intrinsic CAR spatial random effect u with precision τP, where P has the
//! neighbour counts on the diagonal and −1 for adjacent pairs.

pub mod ars;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Hyperparameters, NeighborhoodGraph};
use crate::error::{Error, Result};
use crate::response::gamma_draw;

use ars::LogConcave;

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialField {
    pub u: Vec<f64>,
    pub tau: f64,
}

impl SpatialField {
    pub fn zeros(n: usize, tau: f64) -> Self {
        SpatialField { u: vec![0.0; n], tau }
    }
}

fn check_len(u: &[f64], graph: &NeighborhoodGraph) -> Result<()> {
    if u.len() != graph.n() {
        return Err(Error::DimensionMismatch {
            what: "spatial field length".into(),
            expected: graph.n(),
            found: u.len(),
        });
    }
    Ok(())
}

/// uᵀPu as the sum of squared differences over undirected edges.
pub fn quadratic_form(u: &[f64], graph: &NeighborhoodGraph) -> Result<f64> {
    check_len(u, graph)?;
    Ok(graph.edges().map(|(i, j)| (u[i] - u[j]).powi(2)).sum())
}

/// Mean of the neighbours' values, ū_i.
pub fn neighbor_mean(i: usize, u: &[f64], graph: &NeighborhoodGraph) -> Result<f64> {
    let nb = graph.neighbors(i);
    if nb.is_empty() {
        return Err(Error::InvalidInput(format!(
            "area {i} has no neighbours; its ICAR conditional is undefined"
        )));
    }
    Ok(nb.iter().map(|&j| u[j]).sum::<f64>() / nb.len() as f64)
}

/// Normal full conditional of u_i under a Gaussian response: returns (m_i, σ_i²).
///
/// `residual` is Y_i − θ_{z_i} − W_iβ.
pub fn gaussian_site_conditional(
    residual: f64,
    sigma_y2: f64,
    tau: f64,
    n_neighbors: usize,
    neighbor_mean: f64,
) -> Result<(f64, f64)> {
    if !(sigma_y2 > 0.0) || !(tau > 0.0) {
        return Err(Error::numerical(
            "sample_u_gaussian",
            format!("non-positive variance parameters (sigma_Y2 = {sigma_y2}, tau = {tau})"),
        ));
    }
    let prior_prec = tau * n_neighbors as f64;
    let var = 1.0 / (1.0 / sigma_y2 + prior_prec);
    let mean = (residual / sigma_y2 + prior_prec * neighbor_mean) * var;
    Ok((mean, var))
}

/// Draws u_i from its Gaussian-response full conditional.
pub fn sample_u_gaussian<R: Rng + ?Sized>(
    i: usize,
    residual: f64,
    sigma_y2: f64,
    field: &SpatialField,
    graph: &NeighborhoodGraph,
    rng: &mut R,
) -> Result<f64> {
    let ubar = neighbor_mean(i, &field.u, graph)?;
    let (m, v) = gaussian_site_conditional(residual, sigma_y2, field.tau, graph.degree(i), ubar)?;
    Ok(Normal::new(m, v.sqrt())
        .map_err(|e| Error::numerical("sample_u_gaussian", e.to_string()))?
        .sample(rng))
}

/// Log full conditional of u_i under a Poisson response:
/// `y u − exp(c + u) − ½ k (u − ū)²` with `c = log E + θ + Wβ` and `k = τ n_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonSiteConditional {
    pub y: f64,
    pub log_rate: f64,
    pub prior_precision: f64,
    pub neighbor_mean: f64,
}

impl PoissonSiteConditional {
    pub fn new(y: f64, offset: f64, fixed_lambda: f64, tau: f64, n_neighbors: usize, ubar: f64) -> Self {
        PoissonSiteConditional {
            y,
            log_rate: offset.ln() + fixed_lambda,
            prior_precision: tau * n_neighbors as f64,
            neighbor_mean: ubar,
        }
    }

    /// Exact draw by adaptive rejection sampling, with initial abscissae one
    /// curvature-based standard deviation either side of the mode.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let start = self.neighbor_mean;
        let scale = 1.0 / (-self.second_derivative(start)).sqrt();
        let mode = ars::find_mode(self, start, scale)?;
        let sd = 1.0 / (-self.second_derivative(mode)).sqrt();
        ars::sample(self, &[mode - sd, mode, mode + sd], rng)
    }
}

impl LogConcave for PoissonSiteConditional {
    fn log_density(&self, u: f64) -> f64 {
        let d = u - self.neighbor_mean;
        self.y * u - (self.log_rate + u).exp() - 0.5 * self.prior_precision * d * d
    }

    fn derivative(&self, u: f64) -> f64 {
        self.y - (self.log_rate + u).exp() - self.prior_precision * (u - self.neighbor_mean)
    }

    fn second_derivative(&self, u: f64) -> f64 {
        -(self.log_rate + u).exp() - self.prior_precision
    }
}

/// Draws u_i from its Poisson-response full conditional.
///
/// `fixed_lambda` is θ_{z_i} + W_iβ.
pub fn sample_u_poisson<R: Rng + ?Sized>(
    i: usize,
    y: f64,
    offset: f64,
    fixed_lambda: f64,
    field: &SpatialField,
    graph: &NeighborhoodGraph,
    rng: &mut R,
) -> Result<f64> {
    let ubar = neighbor_mean(i, &field.u, graph)?;
    let cond = PoissonSiteConditional::new(y, offset, fixed_lambda, field.tau, graph.degree(i), ubar);
    cond.sample(rng).map_err(|e| match e {
        Error::Numerical { message, .. } => Error::numerical("sample_u_poisson", format!("area {i}: {message}")),
        other => other,
    })
}

/// Shape and rate of the τ full conditional. The shape uses the rank of P,
/// n − (number of connected components).
pub fn tau_posterior(u: &[f64], graph: &NeighborhoodGraph, a_tau: f64, b_tau: f64) -> Result<(f64, f64)> {
    let q = quadratic_form(u, graph)?;
    let rank = graph.n() - graph.n_components();
    Ok((a_tau + rank as f64 / 2.0, b_tau + 0.5 * q))
}

pub fn sample_tau<R: Rng + ?Sized>(
    u: &[f64],
    graph: &NeighborhoodGraph,
    hyper: &Hyperparameters,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = tau_posterior(u, graph, hyper.a_tau, hyper.b_tau)?;
    Ok(gamma_draw(shape, rate, rng))
}

/// Centers u over the areas that have neighbours and adds the removed mean to
/// every cluster intercept, so θ_{z_i} + u_i is unchanged for those areas.
/// Isolated areas stay at zero. Returns the shift.
pub fn recenter(u: &mut [f64], graph: &NeighborhoodGraph, thetas: &mut [f64]) -> f64 {
    let connected = graph.n_connected_nodes();
    if connected == 0 {
        return 0.0;
    }
    let mean = (0..u.len())
        .filter(|&i| !graph.is_isolated(i))
        .map(|i| u[i])
        .sum::<f64>()
        / connected as f64;
    for (i, v) in u.iter_mut().enumerate() {
        if graph.is_isolated(i) {
            *v = 0.0;
        } else {
            *v -= mean;
        }
    }
    thetas.iter_mut().for_each(|t| *t += mean);
    mean
}

/// Exact draw from the ICAR prior restricted to the complement of the null
/// space of P (sum-zero within every connected component; isolated areas are 0).
/// Uses a dense eigendecomposition, so it is meant for simulation and tests.
pub fn sample_icar<R: Rng + ?Sized>(graph: &NeighborhoodGraph, tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::numerical("sample_icar", format!("tau = {tau} is not positive")));
    }
    let n = graph.n();
    let mut p = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        p[(i, i)] = graph.degree(i) as f64;
    }
    for (i, j) in graph.edges() {
        p[(i, j)] = -1.0;
        p[(j, i)] = -1.0;
    }
    let eig = nalgebra::SymmetricEigen::new(p);
    let cutoff = 1e-9 * eig.eigenvalues.iter().cloned().fold(1.0, f64::max);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut u = vec![0.0; n];
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        let scale = normal.sample(rng) / (tau * lambda).sqrt();
        for (i, v) in u.iter_mut().enumerate() {
            *v += scale * eig.eigenvectors[(i, k)];
        }
    }
    for i in 0..n {
        if graph.is_isolated(i) {
            u[i] = 0.0;
        }
    }
    Ok(u)
}
