//! Locally independent categorical covariate model and its Dirichlet update.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Per-covariate category probabilities of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterCovariateParams {
    pub phi: Vec<Vec<f64>>,
}

impl ClusterCovariateParams {
    pub fn uniform(categories: &[usize]) -> Self {
        ClusterCovariateParams {
            phi: categories.iter().map(|&k| vec![1.0 / k as f64; k]).collect(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.phi.iter().all(|p| {
            p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        })
    }
}

/// Sum over covariates of log φ_{j, x_j}; −∞ if any observed code has zero mass.
pub fn covariate_log_likelihood(x: &[usize], params: &ClusterCovariateParams) -> Result<f64> {
    if x.len() != params.phi.len() {
        return Err(Error::DimensionMismatch {
            what: "covariate profile length".into(),
            expected: params.phi.len(),
            found: x.len(),
        });
    }
    let mut ll = 0.0;
    for (j, (&code, phi)) in x.iter().zip(&params.phi).enumerate() {
        let p = *phi.get(code).ok_or(Error::CategoryOutOfRange {
            covariate: j,
            row: 0,
            code: code as i64,
            categories: phi.len(),
        })?;
        ll += p.ln();
    }
    Ok(ll)
}

/// Unchecked variant for the allocation inner loop.
#[inline]
pub(crate) fn covariate_ll_unchecked(x: &[usize], params: &ClusterCovariateParams) -> f64 {
    x.iter().zip(&params.phi).map(|(&c, phi)| phi[c].ln()).sum()
}

/// Category counts per covariate among the given member rows.
pub fn category_counts<'a>(
    rows: impl IntoIterator<Item = &'a [usize]>,
    categories: &[usize],
) -> Vec<Vec<f64>> {
    let mut counts: Vec<Vec<f64>> = categories.iter().map(|&k| vec![0.0; k]).collect();
    for row in rows {
        for (j, &c) in row.iter().enumerate() {
            counts[j][c] += 1.0;
        }
    }
    counts
}

/// Draws from Dirichlet(conc) by normalizing independent Gamma(conc_k, 1) draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(conc: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut draws = Vec::with_capacity(conc.len());
    for &a in conc {
        let g = Gamma::new(a, 1.0).map_err(|_| Error::InvalidHyperparameter {
            name: "dirichlet".into(),
            reason: format!("concentration {a} is not positive"),
        })?;
        draws.push(g.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter_mut().for_each(|v| *v /= total);
    } else {
        // every gamma underflowed (tiny concentrations): put the mass on the largest weight
        let best = conc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(k, _)| k);
        draws.iter_mut().enumerate().for_each(|(k, v)| *v = f64::from(k == best));
    }
    Ok(draws)
}

/// Conjugate draw Φ_{c,j} ~ Dirichlet(a_j + category counts of the members).
pub fn sample_phi<'a, R: Rng + ?Sized>(
    member_rows: impl IntoIterator<Item = &'a [usize]>,
    a: &[Vec<f64>],
    rng: &mut R,
) -> Result<ClusterCovariateParams> {
    let categories: Vec<usize> = a.iter().map(Vec::len).collect();
    let counts = category_counts(member_rows, &categories);
    sample_phi_from_counts(&counts, a, rng)
}

pub(crate) fn sample_phi_from_counts<R: Rng + ?Sized>(
    counts: &[Vec<f64>],
    a: &[Vec<f64>],
    rng: &mut R,
) -> Result<ClusterCovariateParams> {
    let phi = a
        .iter()
        .zip(counts)
        .map(|(aj, cj)| {
            let conc: Vec<f64> = aj.iter().zip(cj).map(|(x, y)| x + y).collect();
            sample_dirichlet(&conc, rng)
        })
        .collect::<Result<_>>()?;
    Ok(ClusterCovariateParams { phi })
}
