use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::covariate::sample_dirichlet;
use crate::data::{build_graph, validate_dataset, Dataset, NeighborhoodGraph, RawTable, ResponseKind};
use crate::error::{Error, Result};
use crate::spatial::sample_icar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Grid,
    Path,
    /// Grid with a random diagonal (or none) added in each cell.
    RandomPlanar,
}

fn default_covariates() -> usize {
    6
}
fn default_categories() -> usize {
    5
}
fn default_noise() -> f64 {
    0.5
}
fn default_offset() -> f64 {
    20.0
}

/// Recipe for a synthetic dataset with a known partition and spatial field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_areas: usize,
    pub graph_kind: GraphKind,
    pub k_true: usize,
    /// Spacing of the cluster intercepts and concentration of Φ on one category per cluster.
    pub separation: f64,
    pub tau_true: f64,
    pub response_kind: ResponseKind,
    pub seed: u64,
    #[serde(default = "default_covariates")]
    pub n_covariates: usize,
    #[serde(default = "default_categories")]
    pub n_categories: usize,
    /// Residual standard deviation of a Gaussian response.
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    /// Mean expected count of a Poisson response.
    #[serde(default = "default_offset")]
    pub offset_scale: f64,
    /// Grid rows; chosen as the largest divisor of n_areas not above √n when absent.
    #[serde(default)]
    pub grid_rows: Option<usize>,
}

impl SynthSpec {
    pub fn new(n_areas: usize, k_true: usize, separation: f64, tau_true: f64, seed: u64) -> Self {
        SynthSpec {
            n_areas,
            graph_kind: GraphKind::Grid,
            k_true,
            separation,
            tau_true,
            response_kind: ResponseKind::Gaussian,
            seed,
            n_covariates: default_covariates(),
            n_categories: default_categories(),
            noise_sd: default_noise(),
            offset_scale: default_offset(),
            grid_rows: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_areas < 2 {
            return bad(format!("n_areas must be at least 2, got {}", self.n_areas));
        }
        if self.k_true < 1 || self.k_true > self.n_areas {
            return bad(format!("k_true must lie in [1, n_areas], got {}", self.k_true));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be nonnegative, got {}", self.separation));
        }
        if !(self.tau_true > 0.0 && self.tau_true.is_finite()) {
            return bad(format!("tau_true must be positive, got {}", self.tau_true));
        }
        if self.n_covariates == 0 || self.n_categories < 2 {
            return bad("need at least one covariate with two or more categories".into());
        }
        if !(self.noise_sd > 0.0) || !(self.offset_scale > 0.0) {
            return bad("noise_sd and offset_scale must be positive".into());
        }
        if let Some(r) = self.grid_rows {
            if r == 0 || self.n_areas % r != 0 {
                return bad(format!("grid_rows {r} does not divide n_areas {}", self.n_areas));
            }
        }
        Ok(())
    }

    fn grid_shape(&self) -> (usize, usize) {
        let n = self.n_areas;
        let rows = self.grid_rows.unwrap_or_else(|| {
            (1..=((n as f64).sqrt() as usize)).rev().find(|r| n % r == 0).unwrap_or(1)
        });
        (rows, n / rows)
    }
}

/// Rook adjacency edges of a rows × cols grid, row-major.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = vec![];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    edges
}

fn make_graph<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<NeighborhoodGraph> {
    let n = spec.n_areas;
    let edges = match spec.graph_kind {
        GraphKind::Path => (1..n).map(|i| (i - 1, i)).collect(),
        GraphKind::Grid => {
            let (rows, cols) = spec.grid_shape();
            grid_edges(rows, cols)
        }
        GraphKind::RandomPlanar => {
            let (rows, cols) = spec.grid_shape();
            let mut edges = grid_edges(rows, cols);
            for r in 0..rows.saturating_sub(1) {
                for c in 0..cols.saturating_sub(1) {
                    let i = r * cols + c;
                    match rng.random_range(0..3) {
                        0 => edges.push((i, i + cols + 1)),
                        1 => edges.push((i + 1, i + cols)),
                        _ => {}
                    }
                }
            }
            edges
        }
    };
    build_graph(n, &edges)
}

/// A generated dataset with its ground truth.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    pub true_labels: Vec<usize>,
    pub true_u: Vec<f64>,
    pub true_theta: Vec<f64>,
    /// `true_phi[c][j]` is the category distribution of covariate j in cluster c.
    pub true_phi: Vec<Vec<Vec<f64>>>,
    /// Most probable category of each covariate in each cluster.
    pub modal_codes: Vec<Vec<usize>>,
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut target = rng.random::<f64>();
    for (k, &pk) in p.iter().enumerate() {
        if target < pk {
            return k;
        }
        target -= pk;
    }
    p.len() - 1
}

/// Simulates a dataset from the generative model with balanced clusters.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, k, jn, kn) = (spec.n_areas, spec.k_true, spec.n_covariates, spec.n_categories);
    let graph = make_graph(spec, &mut rng)?;

    let mut z: Vec<usize> = (0..n).map(|i| i % k).collect();
    z.shuffle(&mut rng);

    let w = spec.separation / (1.0 + spec.separation);
    let base: Vec<Vec<f64>> = (0..jn)
        .map(|_| sample_dirichlet(&vec![1.0; kn], &mut rng))
        .collect::<Result<_>>()?;
    let favourite: Vec<Vec<usize>> = (0..jn)
        .map(|_| {
            let mut perm: Vec<usize> = (0..kn).collect();
            perm.shuffle(&mut rng);
            (0..k).map(|c| perm[c % kn]).collect()
        })
        .collect();
    let true_phi: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|c| {
            (0..jn)
                .map(|j| {
                    (0..kn)
                        .map(|m| (1.0 - w) * base[j][m] + if m == favourite[j][c] { w } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    let modal_codes = true_phi
        .iter()
        .map(|pc| {
            pc.iter()
                .map(|p: &Vec<f64>| (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0))
                .collect()
        })
        .collect();
    let true_theta: Vec<f64> = (0..k)
        .map(|c| spec.separation * (c as f64 - (k as f64 - 1.0) / 2.0))
        .collect();

    let mut true_u = sample_icar(&graph, spec.tau_true, &mut rng)?;
    let connected = graph.n_connected_nodes().max(1) as f64;
    let mean = (0..n).filter(|&i| !graph.is_isolated(i)).map(|i| true_u[i]).sum::<f64>() / connected;
    for i in 0..n {
        if !graph.is_isolated(i) {
            true_u[i] -= mean;
        }
    }

    let mut codes = vec![vec![0i64; n]; jn];
    for i in 0..n {
        for j in 0..jn {
            codes[j][i] = categorical(&true_phi[z[i]][j], &mut rng) as i64;
        }
    }
    let (y, offset) = match spec.response_kind {
        ResponseKind::Gaussian => {
            let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let y = (0..n).map(|i| true_theta[z[i]] + true_u[i] + noise.sample(&mut rng)).collect();
            (y, None)
        }
        ResponseKind::Poisson => {
            let offsets: Vec<f64> = (0..n)
                .map(|_| spec.offset_scale * rng.random_range(0.5..1.5))
                .collect();
            let y = (0..n)
                .map(|i| {
                    let mean = offsets[i] * (true_theta[z[i]] + true_u[i]).exp();
                    Poisson::new(mean)
                        .map(|p| p.sample(&mut rng))
                        .map_err(|e| Error::numerical("generate", format!("mean {mean}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            (y, Some(offsets))
        }
    };
    let raw = RawTable {
        y,
        x: codes
            .into_iter()
            .enumerate()
            .map(|(j, c)| (format!("x_{j}"), c))
            .collect(),
        w: vec![],
        offset,
    };
    let dataset = validate_dataset(raw, graph, spec.response_kind, Some(&vec![kn; jn]))?;
    Ok(SynthData {
        dataset,
        true_labels: z,
        true_u,
        true_theta,
        true_phi,
        modal_codes,
    })
}
