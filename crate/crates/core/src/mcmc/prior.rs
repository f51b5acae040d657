use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::{Dataset, Hyperparameters, ResponseKind};
use crate::error::{Error, Result};
use crate::response::{gamma_draw, sample_t, ResponseGlobals};
use crate::spatial::{sample_icar, SpatialField};

use super::state::{extend_truncation, occupancy, prior_cluster, stick_breaking, McmcState};

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (k, &pk) in p.iter().enumerate() {
        if target < pk {
            return k;
        }
        target -= pk;
    }
    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(0)
}

/// Draws every parameter, including the allocations, from the prior. The
/// dataset supplies only shapes, the graph and the fixed-effect design.
pub fn draw_prior_state<R: Rng + ?Sized>(
    data: &Dataset,
    hyper: &Hyperparameters,
    spatial: bool,
    rng: &mut R,
) -> Result<McmcState> {
    let alpha = gamma_draw(hyper.s_alpha, hyper.r_alpha, rng);
    let mut v = vec![];
    extend_truncation(&mut v, alpha, rng)?;
    let psi = stick_breaking(&v);
    let z: Vec<usize> = (0..data.n()).map(|_| categorical(&psi, rng)).collect();
    let clusters = (0..v.len()).map(|_| prior_cluster(hyper, rng)).collect::<Result<_>>()?;
    let beta = (0..data.n_fixed())
        .map(|_| sample_t(hyper.mu_beta, hyper.sigma_beta, hyper.t_df, rng))
        .collect();
    let tau_y = match data.kind() {
        ResponseKind::Gaussian => gamma_draw(hyper.s_tau_y, hyper.r_tau_y, rng),
        ResponseKind::Poisson => 1.0,
    };
    let tau = gamma_draw(hyper.a_tau, hyper.b_tau, rng);
    let u = if spatial && data.graph().n_edges() > 0 {
        sample_icar(data.graph(), tau, rng)?
    } else {
        vec![0.0; data.n()]
    };
    let counts = occupancy(&z, v.len());
    let mut state = McmcState {
        z,
        psi,
        v,
        clusters,
        globals: ResponseGlobals::new(beta, tau_y),
        spatial: SpatialField { u, tau },
        alpha,
        counts,
        lambda: vec![],
    };
    state.refresh(data);
    Ok(state)
}

/// Draws responses and covariate codes given the parameters in `state`.
/// Returns (y, row-major codes).
pub fn simulate_observations<R: Rng + ?Sized>(
    state: &McmcState,
    data: &Dataset,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let lambda = state.lambda();
    let mut y = Vec::with_capacity(data.n());
    let mut codes = Vec::with_capacity(data.n() * data.n_covariates());
    for i in 0..data.n() {
        let cl = &state.clusters[state.z[i]];
        for phi in &cl.covariates.phi {
            codes.push(categorical(phi, rng));
        }
        let value = match data.kind() {
            ResponseKind::Gaussian => Normal::new(lambda[i], state.globals.sigma_y2().sqrt())
                .map_err(|e| Error::numerical("simulate_observations", e.to_string()))?
                .sample(rng),
            ResponseKind::Poisson => {
                let mean = data.offset(i) * lambda[i].exp();
                if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| Error::numerical("simulate_observations", format!("mean {mean}: {e}")))?
                        .sample(rng)
                } else {
                    0.0
                }
            }
        };
        y.push(value);
    }
    Ok((y, codes))
}
