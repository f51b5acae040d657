//! Validated model inputs: response, categorical covariate profiles, fixed
//! effects, Poisson offsets and the area neighbourhood graph.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Gaussian,
    Poisson,
}

impl fmt::Display for ResponseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseKind::Gaussian => f.write_str("gaussian"),
            ResponseKind::Poisson => f.write_str("poisson"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphWarning {
    /// Area with no neighbours. Its spatial effect is pinned at zero.
    IsolatedNode(usize),
}

/// Undirected area adjacency. Neighbour lists are sorted and symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodGraph {
    adjacency: Vec<Vec<usize>>,
    component: Vec<usize>,
    n_components: usize,
}

impl NeighborhoodGraph {
    /// Builds a graph from explicit neighbour lists, checking symmetry.
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = adjacency.len();
        let mut adjacency = adjacency;
        for (i, nb) in adjacency.iter_mut().enumerate() {
            for &j in nb.iter() {
                if j >= n {
                    return Err(Error::IndexOutOfRange { index: j, n });
                }
                if j == i {
                    return Err(Error::SelfLoop(i));
                }
            }
            nb.sort_unstable();
            nb.dedup();
        }
        for (i, nb) in adjacency.iter().enumerate() {
            for &j in nb {
                if adjacency[j].binary_search(&i).is_err() {
                    return Err(Error::AsymmetricAdjacency { from: i, to: j });
                }
            }
        }
        let (component, n_components) = label_components(&adjacency);
        Ok(NeighborhoodGraph {
            adjacency,
            component,
            n_components,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Neighbour count n_i.
    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.adjacency[i].is_empty()
    }

    /// Number of areas with at least one neighbour.
    pub fn n_connected_nodes(&self) -> usize {
        self.adjacency.iter().filter(|nb| !nb.is_empty()).count()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Connected component label per area (isolated areas are singleton components).
    pub fn component_of(&self, i: usize) -> usize {
        self.component[i]
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn warnings(&self) -> Vec<GraphWarning> {
        (0..self.n())
            .filter(|&i| self.is_isolated(i))
            .map(GraphWarning::IsolatedNode)
            .collect()
    }

    /// Relabels areas so that new area `k` is old area `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                what: "permutation".into(),
                expected: n,
                found: perm.len(),
            });
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::InvalidInput("not a permutation".into()));
            }
            inverse[old] = new;
        }
        let adjacency = perm
            .iter()
            .map(|&old| self.adjacency[old].iter().map(|&j| inverse[j]).collect())
            .collect();
        NeighborhoodGraph::from_adjacency(adjacency)
    }
}

fn label_components(adjacency: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = adjacency.len();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if label[j] == usize::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (label, next)
}

/// Symmetrizes and de-duplicates an undirected edge list over `n` areas.
pub fn build_graph(n: usize, edges: &[(usize, usize)]) -> Result<NeighborhoodGraph> {
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        for idx in [a, b] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, n });
            }
        }
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        sets[a].insert(b);
        sets[b].insert(a);
    }
    let graph =
        NeighborhoodGraph::from_adjacency(sets.into_iter().map(|s| s.into_iter().collect()).collect())?;
    for w in graph.warnings() {
        let GraphWarning::IsolatedNode(i) = w;
        log::warn!("area {i} has no neighbours; its spatial effect is pinned at zero");
    }
    Ok(graph)
}

/// Parsed but unvalidated input columns.
#[derive(Clone, Debug, Default)]
pub struct RawTable {
    pub y: Vec<f64>,
    /// Covariate columns (name, codes).
    pub x: Vec<(String, Vec<i64>)>,
    /// Fixed-effect columns (name, values).
    pub w: Vec<(String, Vec<f64>)>,
    pub offset: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    y: Vec<f64>,
    codes: Vec<usize>,
    categories: Vec<usize>,
    w: Vec<f64>,
    n_fixed: usize,
    offsets: Option<Vec<f64>>,
    graph: NeighborhoodGraph,
    kind: ResponseKind,
    covariate_names: Vec<String>,
    fixed_names: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariates J.
    pub fn n_covariates(&self) -> usize {
        self.categories.len()
    }

    /// Category counts K_j.
    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_at(&self, i: usize) -> f64 {
        self.y[i]
    }

    /// Covariate profile of area `i`.
    pub fn x_row(&self, i: usize) -> &[usize] {
        let j = self.categories.len();
        &self.codes[i * j..(i + 1) * j]
    }

    /// Fixed-effect row of area `i` (empty when there are none).
    pub fn w_row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n_fixed..(i + 1) * self.n_fixed]
    }

    pub fn offset(&self, i: usize) -> f64 {
        self.offsets.as_ref().map_or(1.0, |e| e[i])
    }

    pub fn offsets(&self) -> Option<&[f64]> {
        self.offsets.as_deref()
    }

    pub fn graph(&self) -> &NeighborhoodGraph {
        &self.graph
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.fixed_names
    }

    /// Replaces the response and covariates in place, keeping the shape.
    /// Used by simulators that redraw data given parameters.
    pub fn set_observations(&mut self, y: Vec<f64>, codes: Vec<usize>) {
        assert_eq!(y.len(), self.y.len());
        assert_eq!(codes.len(), self.codes.len());
        debug_assert!(codes
            .chunks(self.categories.len().max(1))
            .all(|row| row.iter().zip(&self.categories).all(|(&c, &k)| c < k)));
        self.y = y;
        self.codes = codes;
    }

    /// Rebuilds the raw column form (for CSV export and permutation checks).
    pub fn to_raw(&self) -> RawTable {
        let n = self.n();
        let x = (0..self.n_covariates())
            .map(|j| {
                (
                    self.covariate_names[j].clone(),
                    (0..n).map(|i| self.x_row(i)[j] as i64).collect(),
                )
            })
            .collect();
        let w = (0..self.n_fixed)
            .map(|k| {
                (
                    self.fixed_names[k].clone(),
                    (0..n).map(|i| self.w_row(i)[k]).collect(),
                )
            })
            .collect();
        RawTable {
            y: self.y.clone(),
            x,
            w,
            offset: self.offsets.clone(),
        }
    }
}

/// Checks raw columns against the graph and response kind.
///
/// Category counts are taken from `declared_categories` when given, otherwise
/// inferred as max code + 1 per covariate.
pub fn validate_dataset(
    raw: RawTable,
    graph: NeighborhoodGraph,
    kind: ResponseKind,
    declared_categories: Option<&[usize]>,
) -> Result<Dataset> {
    let n = graph.n();
    let check_len = |what: &str, len: usize| -> Result<()> {
        if len != n {
            Err(Error::DimensionMismatch {
                what: what.to_string(),
                expected: n,
                found: len,
            })
        } else {
            Ok(())
        }
    };
    check_len("response rows vs graph areas", raw.y.len())?;
    for (name, col) in &raw.x {
        check_len(&format!("covariate `{name}` rows"), col.len())?;
    }
    for (name, col) in &raw.w {
        check_len(&format!("fixed effect `{name}` rows"), col.len())?;
    }
    if let Some(e) = &raw.offset {
        check_len("offset rows", e.len())?;
    }
    if let Some(dec) = declared_categories {
        if dec.len() != raw.x.len() {
            return Err(Error::DimensionMismatch {
                what: "declared category counts vs covariates".into(),
                expected: raw.x.len(),
                found: dec.len(),
            });
        }
    }

    for (i, &v) in raw.y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("response at row {i} is not finite")));
        }
        if kind == ResponseKind::Poisson && (v < 0.0 || v.fract() != 0.0) {
            return Err(Error::InvalidCount { row: i, value: v });
        }
    }
    for (name, col) in &raw.w {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "fixed effect `{name}` at row {i} is not finite"
            )));
        }
    }
    match (&raw.offset, kind) {
        (None, ResponseKind::Poisson) => return Err(Error::MissingOffsets),
        (Some(_), ResponseKind::Gaussian) => return Err(Error::UnexpectedOffsets),
        (Some(e), ResponseKind::Poisson) => {
            if let Some((row, &value)) = e.iter().enumerate().find(|(_, &v)| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::NonPositiveOffset { row, value });
            }
        }
        (None, ResponseKind::Gaussian) => {}
    }

    let n_cov = raw.x.len();
    let mut categories = Vec::with_capacity(n_cov);
    for (j, (_, col)) in raw.x.iter().enumerate() {
        let inferred = col.iter().copied().max().map_or(1, |m| (m.max(0) + 1) as usize);
        let k = declared_categories.map_or(inferred, |d| d[j]);
        if k == 0 {
            return Err(Error::InvalidInput(format!("covariate {j} declares zero categories")));
        }
        for (row, &code) in col.iter().enumerate() {
            if code < 0 || code as usize >= k {
                return Err(Error::CategoryOutOfRange {
                    covariate: j,
                    row,
                    code,
                    categories: k,
                });
            }
        }
        categories.push(k);
    }

    let mut codes = vec![0usize; n * n_cov];
    for (j, (_, col)) in raw.x.iter().enumerate() {
        for (i, &c) in col.iter().enumerate() {
            codes[i * n_cov + j] = c as usize;
        }
    }
    let n_fixed = raw.w.len();
    let mut w = vec![0.0; n * n_fixed];
    for (k, (_, col)) in raw.w.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            w[i * n_fixed + k] = v;
        }
    }
    Ok(Dataset {
        y: raw.y,
        codes,
        categories,
        w,
        n_fixed,
        offsets: raw.offset,
        graph,
        kind,
        covariate_names: raw.x.into_iter().map(|(name, _)| name).collect(),
        fixed_names: raw.w.into_iter().map(|(name, _)| name).collect(),
    })
}

/// Maps values to quintile codes 0..=4.
///
/// Boundary q (q = 1..4) is the order statistic of rank ceil(q n / 5); a value
/// equal to a boundary goes to the lower quintile.
pub fn quintile_discretize(values: &[f64]) -> Result<Vec<usize>> {
    if values.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "quintile discretization needs at least 5 values, got {}",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("value at index {i} is not finite")));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bounds: Vec<f64> = (1..5).map(|q| sorted[(q * n).div_ceil(5) - 1]).collect();
    Ok(values
        .iter()
        .map(|&v| bounds.iter().filter(|&&b| v > b).count())
        .collect())
}

/// Prior constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub s_alpha: f64,
    pub r_alpha: f64,
    /// Dirichlet concentration vector a_j per covariate.
    pub dirichlet: Vec<Vec<f64>>,
    pub mu_theta: f64,
    pub sigma_theta: f64,
    pub mu_beta: f64,
    pub sigma_beta: f64,
    pub t_df: f64,
    pub s_tau_y: f64,
    pub r_tau_y: f64,
    pub a_tau: f64,
    pub b_tau: f64,
}

impl Hyperparameters {
    /// Defaults for covariates with the given category counts: a_j ≡ 1,
    /// alpha ~ Gamma(2, 1), t(0, 2.5, 7) priors on intercepts and fixed
    /// effects, tau_Y ~ Gamma(2.5, 2.5), tau ~ Gamma(1, 1).
    pub fn with_categories(categories: &[usize]) -> Self {
        Hyperparameters {
            s_alpha: 2.0,
            r_alpha: 1.0,
            dirichlet: categories.iter().map(|&k| vec![1.0; k]).collect(),
            mu_theta: 0.0,
            sigma_theta: 2.5,
            mu_beta: 0.0,
            sigma_beta: 2.5,
            t_df: 7.0,
            s_tau_y: 2.5,
            r_tau_y: 2.5,
            a_tau: 1.0,
            b_tau: 1.0,
        }
    }

    pub fn validate(&self, categories: &[usize]) -> Result<()> {
        let positive = [
            ("s_alpha", self.s_alpha),
            ("r_alpha", self.r_alpha),
            ("sigma_theta", self.sigma_theta),
            ("sigma_beta", self.sigma_beta),
            ("t_df", self.t_df),
            ("s_tau_y", self.s_tau_y),
            ("r_tau_y", self.r_tau_y),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyperparameter {
                    name: name.into(),
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        for (name, v) in [("mu_theta", self.mu_theta), ("mu_beta", self.mu_beta)] {
            if !v.is_finite() {
                return Err(Error::InvalidHyperparameter {
                    name: name.into(),
                    reason: "must be finite".into(),
                });
            }
        }
        if self.dirichlet.len() != categories.len() {
            return Err(Error::InvalidHyperparameter {
                name: "dirichlet".into(),
                reason: format!(
                    "{} concentration vectors for {} covariates",
                    self.dirichlet.len(),
                    categories.len()
                ),
            });
        }
        for (j, (a, &k)) in self.dirichlet.iter().zip(categories).enumerate() {
            if a.len() != k {
                return Err(Error::InvalidHyperparameter {
                    name: format!("dirichlet[{j}]"),
                    reason: format!("length {} but covariate has {k} categories", a.len()),
                });
            }
            if a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidHyperparameter {
                    name: format!("dirichlet[{j}]"),
                    reason: "entries must be strictly positive".into(),
                });
            }
        }
        Ok(())
    }
}
