//! Run configuration read from a TOML file.
//!
//! ```toml
//! [data]
//! path = "areas.csv"          # relative paths resolve against the config file
//! adjacency = "adjacency.txt"
//! output = "out"
//! response = "gaussian"       # or "poisson"
//! spatial = true
//! categories = [5, 5, 5]      # optional; inferred from the data otherwise
//!
//! [mcmc]
//! n_iter = 10000
//! burn_in = 5000
//! thin = 1
//! n_chains = 2
//! seed = 1
//!
//! [hyper]
//! s_alpha = 2.0
//! dirichlet = 1.0             # or one array per covariate
//!
//! [postprocess]
//! k_min = 2
//! k_max = 20
//!
//! [[profile]]
//! name = "low income"
//! codes = "0,NA,NA,NA,NA,NA"
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::data::{Hyperparameters, ResponseKind};
use crate::error::{Error, Result};
use crate::mcmc::Schedule;
use crate::postprocess::PseudoProfile;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    data: RawData,
    #[serde(default)]
    mcmc: RawMcmc,
    #[serde(default)]
    hyper: RawHyper,
    #[serde(default)]
    postprocess: RawPostprocess,
    #[serde(default)]
    profile: Vec<Spanned<RawProfile>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    path: PathBuf,
    adjacency: Option<PathBuf>,
    output: PathBuf,
    #[serde(default = "default_response")]
    response: ResponseKind,
    spatial: Option<Spanned<bool>>,
    categories: Option<Spanned<Vec<usize>>>,
}

fn default_response() -> ResponseKind {
    ResponseKind::Gaussian
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMcmc {
    n_iter: Option<Spanned<usize>>,
    burn_in: Option<Spanned<usize>>,
    thin: Option<Spanned<usize>>,
    n_init_clusters: Option<Spanned<usize>>,
    seed: Option<u64>,
    n_chains: Option<Spanned<usize>>,
    u_thin: Option<Spanned<usize>>,
    adapt: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDirichlet {
    Scalar(f64),
    PerCovariate(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyper {
    s_alpha: Option<Spanned<f64>>,
    r_alpha: Option<Spanned<f64>>,
    dirichlet: Option<Spanned<RawDirichlet>>,
    mu_theta: Option<Spanned<f64>>,
    sigma_theta: Option<Spanned<f64>>,
    mu_beta: Option<Spanned<f64>>,
    sigma_beta: Option<Spanned<f64>>,
    t_df: Option<Spanned<f64>>,
    s_tau_y: Option<Spanned<f64>>,
    r_tau_y: Option<Spanned<f64>>,
    a_tau: Option<Spanned<f64>>,
    b_tau: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPostprocess {
    k_min: Option<Spanned<usize>>,
    k_max: Option<Spanned<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    name: Option<String>,
    codes: Spanned<String>,
    #[serde(default)]
    fixed_effects: Vec<f64>,
    #[serde(default)]
    spatial_offset: f64,
    offset: Option<f64>,
}

/// Dirichlet concentration override: one value for every category, or explicit vectors.
#[derive(Clone, Debug, PartialEq)]
pub enum DirichletOverride {
    Scalar(f64),
    PerCovariate(Vec<Vec<f64>>),
}

/// Hyperparameter overrides with the config line each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HyperOverrides {
    values: Vec<(&'static str, f64, usize)>,
    dirichlet: Option<(DirichletOverride, usize)>,
}

impl HyperOverrides {
    /// Defaults for the given categories with the overrides applied and validated.
    pub fn apply(&self, categories: &[usize], config: &Path) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::with_categories(categories);
        for &(name, v, _) in &self.values {
            let slot = match name {
                "s_alpha" => &mut h.s_alpha,
                "r_alpha" => &mut h.r_alpha,
                "mu_theta" => &mut h.mu_theta,
                "sigma_theta" => &mut h.sigma_theta,
                "mu_beta" => &mut h.mu_beta,
                "sigma_beta" => &mut h.sigma_beta,
                "t_df" => &mut h.t_df,
                "s_tau_y" => &mut h.s_tau_y,
                "r_tau_y" => &mut h.r_tau_y,
                "a_tau" => &mut h.a_tau,
                _ => &mut h.b_tau,
            };
            *slot = v;
        }
        let mut dirichlet_line = 0;
        if let Some((d, line)) = &self.dirichlet {
            dirichlet_line = *line;
            h.dirichlet = match d {
                DirichletOverride::Scalar(a) => categories.iter().map(|&k| vec![*a; k]).collect(),
                DirichletOverride::PerCovariate(v) => v.clone(),
            };
        }
        h.validate(categories).map_err(|e| {
            let line = match &e {
                Error::InvalidHyperparameter { name, .. } => self
                    .values
                    .iter()
                    .find(|(n, _, _)| n == name)
                    .map(|v| v.2)
                    .unwrap_or(dirichlet_line),
                _ => dirichlet_line,
            };
            Error::Config {
                path: config.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        Ok(h)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|v| v.0 == name).map(|v| v.1)
    }
}

/// A pseudo-profile as configured, before it is checked against the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSpec {
    pub profile: PseudoProfile,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// The file the configuration was read from (used in error messages).
    pub source: PathBuf,
    pub data_path: PathBuf,
    pub adjacency_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub response: ResponseKind,
    pub spatial: bool,
    pub categories: Option<Vec<usize>>,
    /// Chain schedule; `schedule.seed` is the master seed shared by all chains.
    pub schedule: Schedule,
    pub n_chains: usize,
    pub hyper: HyperOverrides,
    pub k_min: usize,
    pub k_max: usize,
    pub profiles: Vec<ProfileSpec>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, path, base)
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, source: &Path, base: &Path) -> Result<RunConfig> {
        let err = |span: Option<Range<usize>>, message: String| Error::Config {
            path: source.to_path_buf(),
            line: span.map_or(1, |s| line_of(text, s.start)),
            message,
        };
        let raw: RawConfig = toml::from_str(text).map_err(|e| err(e.span(), e.message().to_string()))?;

        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let get = |v: &Option<Spanned<usize>>, default: usize| v.as_ref().map_or(default, |s| *s.get_ref());
        let span = |v: &Option<Spanned<usize>>| v.as_ref().map(|s| s.span());

        let mcmc = &raw.mcmc;
        let n_iter = get(&mcmc.n_iter, 10_000);
        let burn_in = get(&mcmc.burn_in, 5_000);
        let thin = get(&mcmc.thin, 1);
        let n_chains = get(&mcmc.n_chains, 1);
        let n_init = get(&mcmc.n_init_clusters, 50);
        let u_thin = get(&mcmc.u_thin, 10);
        if n_iter == 0 {
            return Err(err(span(&mcmc.n_iter), "n_iter must be positive".into()));
        }
        if burn_in >= n_iter {
            let at = span(&mcmc.burn_in).or(span(&mcmc.n_iter));
            return Err(err(at, format!("burn_in ({burn_in}) must be smaller than n_iter ({n_iter})")));
        }
        if thin == 0 {
            return Err(err(span(&mcmc.thin), "thin must be at least 1".into()));
        }
        if n_chains == 0 {
            return Err(err(span(&mcmc.n_chains), "n_chains must be at least 1".into()));
        }
        if n_init < 2 {
            return Err(err(span(&mcmc.n_init_clusters), "n_init_clusters must be at least 2".into()));
        }
        if u_thin == 0 {
            return Err(err(span(&mcmc.u_thin), "u_thin must be at least 1".into()));
        }

        let data = raw.data;
        let spatial = data.spatial.as_ref().map_or(data.adjacency.is_some(), |s| *s.get_ref());
        if spatial && data.adjacency.is_none() {
            return Err(err(
                data.spatial.as_ref().map(|s| s.span()),
                "spatial = true requires an adjacency file".into(),
            ));
        }
        if let Some(c) = &data.categories {
            if c.get_ref().iter().any(|&k| k < 2) {
                return Err(err(Some(c.span()), "every covariate needs at least 2 categories".into()));
            }
        }

        let h = raw.hyper;
        let mut hyper = HyperOverrides::default();
        let scalars = [
            ("s_alpha", h.s_alpha, true),
            ("r_alpha", h.r_alpha, true),
            ("mu_theta", h.mu_theta, false),
            ("sigma_theta", h.sigma_theta, true),
            ("mu_beta", h.mu_beta, false),
            ("sigma_beta", h.sigma_beta, true),
            ("t_df", h.t_df, true),
            ("s_tau_y", h.s_tau_y, true),
            ("r_tau_y", h.r_tau_y, true),
            ("a_tau", h.a_tau, true),
            ("b_tau", h.b_tau, true),
        ];
        for (name, value, positive) in scalars {
            if let Some(v) = value {
                let x = *v.get_ref();
                let ok = x.is_finite() && (!positive || x > 0.0);
                if !ok {
                    let need = if positive { "positive and finite" } else { "finite" };
                    return Err(err(Some(v.span()), format!("{name} must be {need}, got {x}")));
                }
                hyper.values.push((name, x, line_of(text, v.span().start)));
            }
        }
        if let Some(d) = h.dirichlet {
            let line = line_of(text, d.span().start);
            let value = match d.into_inner() {
                RawDirichlet::Scalar(a) => DirichletOverride::Scalar(a),
                RawDirichlet::PerCovariate(v) => DirichletOverride::PerCovariate(v),
            };
            hyper.dirichlet = Some((value, line));
        }

        let pp = &raw.postprocess;
        let k_min = get(&pp.k_min, 2);
        let k_max = get(&pp.k_max, 20);
        if k_min < 2 || k_max < k_min {
            let at = span(&pp.k_min).or(span(&pp.k_max));
            return Err(err(at, format!("need 2 <= k_min <= k_max, got {k_min} and {k_max}")));
        }

        let mut profiles = vec![];
        for (p, spanned) in raw.profile.into_iter().enumerate() {
            let line = line_of(text, spanned.span().start);
            let rp = spanned.into_inner();
            let codes = PseudoProfile::parse_codes(rp.codes.get_ref())
                .map_err(|e| err(Some(rp.codes.span()), e.to_string()))?;
            let mut profile = PseudoProfile::new(rp.name.unwrap_or_else(|| format!("profile_{p}")), codes);
            profile.fixed_effects = rp.fixed_effects;
            profile.spatial_offset = rp.spatial_offset;
            profile.offset = rp.offset;
            profiles.push(ProfileSpec { profile, line });
        }

        let mut schedule = Schedule::new(n_iter, burn_in, thin);
        schedule.n_init_clusters = n_init;
        schedule.seed = mcmc.seed.unwrap_or(1);
        schedule.u_thin = u_thin;
        schedule.spatial = spatial;
        schedule.adapt = mcmc.adapt.unwrap_or(true);

        Ok(RunConfig {
            source: source.to_path_buf(),
            data_path: resolve(data.path),
            adjacency_path: data.adjacency.map(resolve),
            output_dir: resolve(data.output),
            response: data.response,
            spatial,
            categories: data.categories.map(Spanned::into_inner),
            schedule,
            n_chains,
            hyper,
            k_min,
            k_max,
            profiles,
        })
    }
}
