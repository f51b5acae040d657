use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::ResponseKind;
use crate::error::{Error, Result};
use crate::mcmc::TraceSample;
use crate::response::dot;

/// Covariate scenario for posterior prediction. `None` codes are marginalized.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoProfile {
    pub name: String,
    pub codes: Vec<Option<usize>>,
    pub fixed_effects: Vec<f64>,
    pub spatial_offset: f64,
    /// Expected count E for a Poisson response.
    pub offset: Option<f64>,
}

impl PseudoProfile {
    pub fn new(name: impl Into<String>, codes: Vec<Option<usize>>) -> Self {
        PseudoProfile {
            name: name.into(),
            codes,
            fixed_effects: vec![],
            spatial_offset: 0.0,
            offset: None,
        }
    }

    /// Parses a comma-separated code list where `NA` marks a marginalized entry.
    pub fn parse_codes(text: &str) -> Result<Vec<Option<usize>>> {
        text.split(',')
            .map(str::trim)
            .enumerate()
            .map(|(j, tok)| {
                if tok.eq_ignore_ascii_case("na") {
                    Ok(None)
                } else {
                    tok.parse::<usize>().map(Some).map_err(|_| {
                        Error::InvalidInput(format!("profile entry {j}: `{tok}` is neither a category nor NA"))
                    })
                }
            })
            .collect()
    }

    pub fn validate(&self, categories: &[usize], n_fixed: usize, kind: ResponseKind) -> Result<()> {
        if self.codes.len() != categories.len() {
            return Err(Error::DimensionMismatch {
                what: format!("profile `{}` codes", self.name),
                expected: categories.len(),
                found: self.codes.len(),
            });
        }
        for (j, (code, &k)) in self.codes.iter().zip(categories).enumerate() {
            if let Some(c) = *code {
                if c >= k {
                    return Err(Error::CategoryOutOfRange {
                        covariate: j,
                        row: 0,
                        code: c as i64,
                        categories: k,
                    });
                }
            }
        }
        if self.fixed_effects.len() != n_fixed {
            return Err(Error::DimensionMismatch {
                what: format!("profile `{}` fixed effects", self.name),
                expected: n_fixed,
                found: self.fixed_effects.len(),
            });
        }
        if !self.spatial_offset.is_finite() {
            return Err(Error::InvalidInput(format!("profile `{}`: spatial offset is not finite", self.name)));
        }
        match (kind, self.offset) {
            (ResponseKind::Poisson, Some(e)) if !(e > 0.0 && e.is_finite()) => {
                Err(Error::NonPositiveOffset { row: 0, value: e })
            }
            (ResponseKind::Gaussian, Some(_)) => Err(Error::UnexpectedOffsets),
            _ => Ok(()),
        }
    }
}

/// Probability of each occupied cluster of one retained iteration for a
/// profile: ψ_c times the probabilities of the non-missing codes, normalized.
pub fn selection_probabilities(profile: &PseudoProfile, sample: &TraceSample) -> Result<Vec<f64>> {
    let mut w: Vec<f64> = sample
        .clusters
        .iter()
        .map(|cl| {
            cl.psi.ln()
                + profile
                    .codes
                    .iter()
                    .zip(&cl.phi)
                    .filter_map(|(code, phi)| code.map(|c| phi[c].ln()))
                    .sum::<f64>()
        })
        .collect();
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numerical(
            "predict",
            format!(
                "profile `{}` has zero weight in every cluster at iteration {}",
                profile.name, sample.iteration
            ),
        ));
    }
    let mut total = 0.0;
    for v in w.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictiveDraw {
    pub iteration: usize,
    /// Trace cluster label (occupancy order) the profile was allocated to.
    pub cluster: usize,
    /// Conditional mean of the response given the cluster.
    pub mean: f64,
    pub draw: f64,
}

/// One posterior predictive draw per retained iteration and profile.
pub fn predict<R: Rng + ?Sized>(
    profiles: &[PseudoProfile],
    trace: &[TraceSample],
    kind: ResponseKind,
    rng: &mut R,
) -> Result<Vec<Vec<PredictiveDraw>>> {
    profiles
        .iter()
        .map(|profile| {
            trace
                .iter()
                .map(|sample| {
                    let p = selection_probabilities(profile, sample)?;
                    let mut target = rng.random::<f64>();
                    let mut c = p.len() - 1;
                    for (k, &pk) in p.iter().enumerate() {
                        if target < pk {
                            c = k;
                            break;
                        }
                        target -= pk;
                    }
                    let cl = &sample.clusters[c];
                    let eta = cl.theta + dot(&sample.beta, &profile.fixed_effects) + profile.spatial_offset;
                    let (mean, draw) = match kind {
                        ResponseKind::Gaussian => {
                            let sd = sample.tau_y.map_or(1.0, |t| 1.0 / t.sqrt());
                            let d = Normal::new(eta, sd)
                                .map_err(|e| Error::numerical("predict", e.to_string()))?;
                            (eta, d.sample(rng))
                        }
                        ResponseKind::Poisson => {
                            let mean = profile.offset.unwrap_or(1.0) * eta.exp();
                            let draw = if mean > 0.0 {
                                Poisson::new(mean)
                                    .map_err(|e| Error::numerical("predict", format!("mean {mean}: {e}")))?
                                    .sample(rng)
                            } else {
                                0.0
                            };
                            (mean, draw)
                        }
                    };
                    Ok(PredictiveDraw {
                        iteration: sample.iteration,
                        cluster: cl.label,
                        mean,
                        draw,
                    })
                })
                .collect()
        })
        .collect()
}
