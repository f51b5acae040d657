use statrs::function::gamma::ln_gamma;

use crate::data::{Dataset, Hyperparameters, ResponseKind};
use crate::error::{Error, Result};
use crate::response::t_log_density;

/// Quadrature resolution of the enumeration oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumerationGrid {
    /// Points of the log-α grid on [1e−6, 500].
    pub alpha_points: usize,
    /// Points of the log-τ_Y grid on [1e−4, 1e4].
    pub tau_points: usize,
    /// Simpson points for each intercept integral (odd).
    pub theta_points: usize,
}

impl Default for EnumerationGrid {
    fn default() -> Self {
        EnumerationGrid {
            alpha_points: 4001,
            tau_points: 801,
            theta_points: 801,
        }
    }
}

/// Exact posterior over set partitions of a tiny dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPosterior {
    /// Canonical labelings (restricted growth strings) with their probabilities.
    pub partitions: Vec<(Vec<usize>, f64)>,
    /// Row-major n×n co-clustering probabilities.
    pub co_clustering: Vec<f64>,
    pub n: usize,
}

impl PartitionPosterior {
    pub fn together(&self, i: usize, j: usize) -> f64 {
        self.co_clustering[i * self.n + j]
    }
}

/// All set partitions of n items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for label in 0..=next {
            prefix.push(label);
            extend(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = vec![];
    if n > 0 {
        extend(&mut vec![], n, &mut out);
    } else {
        out.push(vec![]);
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Trapezoid weights on a uniform grid, in log form.
fn log_trapezoid(log_f: &[f64], step: f64) -> f64 {
    let mut w: Vec<f64> = log_f.to_vec();
    let last = w.len() - 1;
    w[0] += 0.5f64.ln();
    w[last] += 0.5f64.ln();
    log_sum_exp(&w) + step.ln()
}

/// log ∫ α^K Γ(α)/Γ(α + n) Gamma(α; s, r) dα: the Dirichlet-process partition
/// prior up to the ∏(n_b − 1)! factor.
fn log_eppf_alpha(k: usize, n: usize, hyper: &Hyperparameters, points: usize) -> f64 {
    let (lo, hi) = (1e-6f64.ln(), 500f64.ln());
    let step = (hi - lo) / (points - 1) as f64;
    let (s, r) = (hyper.s_alpha, hyper.r_alpha);
    let log_f: Vec<f64> = (0..points)
        .map(|p| {
            let la = lo + step * p as f64;
            let a = la.exp();
            let prior = s * r.ln() - ln_gamma(s) + (s - 1.0) * la - r * a;
            // Γ(α)/Γ(α+n) as a product to avoid cancellation
            let rising: f64 = (0..n).map(|m| (a + m as f64).ln()).sum();
            k as f64 * la - rising + prior + la
        })
        .collect();
    log_trapezoid(&log_f, step)
}

/// log of the Dirichlet-multinomial sequence probability of the codes in one block.
fn log_dirichlet_multinomial(codes: &[usize], a: &[f64]) -> f64 {
    let mut counts = vec![0.0; a.len()];
    codes.iter().for_each(|&c| counts[c] += 1.0);
    let total: f64 = a.iter().sum();
    ln_gamma(total) - ln_gamma(total + codes.len() as f64)
        + a.iter()
            .zip(&counts)
            .map(|(&ak, &ck)| ln_gamma(ak + ck) - ln_gamma(ak))
            .sum::<f64>()
}

/// log ∫ t(θ) ∏_{i∈block} N(y_i | θ, 1/τ_Y) dθ for a block with values `y`.
fn log_block_response(y: &[f64], tau_y: f64, hyper: &Hyperparameters, points: usize) -> f64 {
    let m = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / m;
    let ss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let s = 1.0 / (m * tau_y).sqrt();
    // ∏ N(y_i|θ) = (τ/2π)^{m/2} e^{−τ ss/2} · √(2π) s · N(θ; ȳ, s²)
    let constant = 0.5 * m * (tau_y / (2.0 * std::f64::consts::PI)).ln() - 0.5 * tau_y * ss
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + s.ln();
    // Simpson on θ = ȳ + s·x, x ∈ [−12, 12]; the Gaussian factor becomes φ(x)
    let half = 12.0;
    let step = 2.0 * half / (points - 1) as f64;
    let terms: Vec<f64> = (0..points)
        .map(|p| {
            let x = -half + step * p as f64;
            let weight: f64 = if p == 0 || p == points - 1 {
                1.0
            } else if p % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weight.ln() - 0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
                + t_log_density(ybar + s * x, hyper.mu_theta, hyper.sigma_theta, hyper.t_df)
        })
        .collect();
    constant + log_sum_exp(&terms) + (step / 3.0).ln()
}

/// Exact posterior over partitions for a Gaussian-response dataset without
/// a spatial term or fixed effects, integrating α, Φ, θ and τ_Y.
pub fn enumerate_posterior(
    data: &Dataset,
    hyper: &Hyperparameters,
    grid: EnumerationGrid,
) -> Result<PartitionPosterior> {
    let n = data.n();
    if n > 4 || data.n_covariates() > 2 {
        return Err(Error::InvalidInput(format!(
            "enumeration supports n <= 4 and J <= 2, got n = {n}, J = {}",
            data.n_covariates()
        )));
    }
    if data.kind() != ResponseKind::Gaussian || data.n_fixed() > 0 {
        return Err(Error::InvalidInput(
            "enumeration supports a gaussian response without fixed effects".into(),
        ));
    }
    if grid.theta_points % 2 == 0 || grid.theta_points < 3 || grid.tau_points < 2 || grid.alpha_points < 2 {
        return Err(Error::InvalidInput("grid sizes too small (theta_points must be odd)".into()));
    }
    hyper.validate(data.categories())?;

    let (tlo, thi) = (1e-4f64.ln(), 1e4f64.ln());
    let tstep = (thi - tlo) / (grid.tau_points - 1) as f64;
    let tau_grid: Vec<f64> = (0..grid.tau_points).map(|p| tlo + tstep * p as f64).collect();
    let log_tau_prior: Vec<f64> = tau_grid
        .iter()
        .map(|&lt| {
            let (s, r) = (hyper.s_tau_y, hyper.r_tau_y);
            s * r.ln() - ln_gamma(s) + s * lt - r * lt.exp()
        })
        .collect();

    let partitions = set_partitions(n);
    let mut log_post = Vec::with_capacity(partitions.len());
    for labels in &partitions {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let blocks: Vec<Vec<usize>> = (0..k)
            .map(|b| (0..n).filter(|&i| labels[i] == b).collect())
            .collect();
        let mut lp = log_eppf_alpha(k, n, hyper, grid.alpha_points);
        for block in &blocks {
            lp += ln_gamma(block.len() as f64);
            for (j, a) in hyper.dirichlet.iter().enumerate() {
                let codes: Vec<usize> = block.iter().map(|&i| data.x_row(i)[j]).collect();
                lp += log_dirichlet_multinomial(&codes, a);
            }
        }
        let block_y: Vec<Vec<f64>> = blocks
            .iter()
            .map(|b| b.iter().map(|&i| data.y_at(i)).collect())
            .collect();
        let integrand: Vec<f64> = tau_grid
            .iter()
            .zip(&log_tau_prior)
            .map(|(&lt, &prior)| {
                prior
                    + block_y
                        .iter()
                        .map(|y| log_block_response(y, lt.exp(), hyper, grid.theta_points))
                        .sum::<f64>()
            })
            .collect();
        lp += log_trapezoid(&integrand, tstep);
        log_post.push(lp);
    }
    let norm = log_sum_exp(&log_post);
    let probs: Vec<f64> = log_post.iter().map(|lp| (lp - norm).exp()).collect();
    let mut co = vec![0.0; n * n];
    for (labels, &p) in partitions.iter().zip(&probs) {
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    co[i * n + j] += p;
                }
            }
        }
    }
    Ok(PartitionPosterior {
        partitions: partitions.into_iter().zip(probs).collect(),
        co_clustering: co,
        n,
    })
}
