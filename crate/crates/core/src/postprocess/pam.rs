use std::ops::RangeInclusive;

use crate::error::{Error, Result};

use super::similarity::SimilarityMatrix;

/// Representative partition chosen by PAM.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub labels: Vec<usize>,
    /// Medoid area of each cluster, in label order.
    pub medoids: Vec<usize>,
    pub k: usize,
    pub silhouette: f64,
    /// Sum of dissimilarities to the assigned medoids.
    pub cost: f64,
}

/// Result of PAM for one fixed k.
#[derive(Clone, Debug, PartialEq)]
pub struct PamFit {
    pub medoids: Vec<usize>,
    pub labels: Vec<usize>,
    pub cost: f64,
    /// Objective after BUILD and after every accepted swap.
    pub history: Vec<f64>,
}

struct Dissim<'a> {
    n: usize,
    d: &'a [f64],
}

impl Dissim<'_> {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Nearest and second-nearest medoid (by position in `medoids`) with distances.
fn assign(d: &Dissim<'_>, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut nearest = vec![0; d.n];
    let mut d1 = vec![f64::INFINITY; d.n];
    let mut d2 = vec![f64::INFINITY; d.n];
    for o in 0..d.n {
        for (m, &med) in medoids.iter().enumerate() {
            let v = d.get(o, med);
            if v < d1[o] {
                d2[o] = d1[o];
                d1[o] = v;
                nearest[o] = m;
            } else if v < d2[o] {
                d2[o] = v;
            }
        }
    }
    for (m, &med) in medoids.iter().enumerate() {
        nearest[med] = m;
    }
    (nearest, d1, d2)
}

fn build(d: &Dissim<'_>, k: usize) -> Vec<usize> {
    let n = d.n;
    let first = (0..n)
        .min_by(|&a, &b| {
            let sa: f64 = (0..n).map(|j| d.get(a, j)).sum();
            let sb: f64 = (0..n).map(|j| d.get(b, j)).sum();
            sa.total_cmp(&sb)
        })
        .expect("non-empty");
    let mut medoids = vec![first];
    let mut near: Vec<f64> = (0..n).map(|j| d.get(first, j)).collect();
    while medoids.len() < k {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for x in 0..n {
            if medoids.contains(&x) {
                continue;
            }
            let gain: f64 = (0..n).map(|j| (near[j] - d.get(x, j)).max(0.0)).sum();
            if gain > best.0 {
                best = (gain, x);
            }
        }
        let x = best.1;
        medoids.push(x);
        for (j, v) in near.iter_mut().enumerate() {
            *v = v.min(d.get(x, j));
        }
    }
    medoids
}

/// PAM (BUILD then SWAP) for a fixed k on a row-major n×n dissimilarity.
///
/// The SWAP phase evaluates every (medoid, non-medoid) exchange per pass with
/// the nearest/second-nearest decomposition and applies the best one while it
/// lowers the objective.
pub fn pam_fixed_k(d: &[f64], n: usize, k: usize) -> Result<PamFit> {
    if d.len() != n * n {
        return Err(Error::DimensionMismatch {
            what: "dissimilarity entries".into(),
            expected: n * n,
            found: d.len(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot place {k} medoids among {n} points")));
    }
    let d = Dissim { n, d };
    let mut medoids = build(&d, k);
    let (mut nearest, mut d1, mut d2) = assign(&d, &medoids);
    let mut cost: f64 = d1.iter().sum();
    let mut history = vec![cost];
    let mut is_medoid = vec![false; n];
    medoids.iter().for_each(|&m| is_medoid[m] = true);
    let mut delta = vec![0.0; k];
    for _ in 0..10 * n.max(10) {
        let mut best = (0.0, 0, 0);
        for x in 0..n {
            if is_medoid[x] {
                continue;
            }
            delta.iter_mut().for_each(|v| *v = 0.0);
            let mut shared = 0.0;
            for o in 0..n {
                let dox = d.get(o, x);
                let gain = (dox - d1[o]).min(0.0);
                shared += gain;
                delta[nearest[o]] += dox.min(d2[o]) - d1[o] - gain;
            }
            for (m, &dm) in delta.iter().enumerate() {
                let change = shared + dm;
                if change < best.0 {
                    best = (change, m, x);
                }
            }
        }
        if best.0 >= -1e-12 * (1.0 + cost) {
            break;
        }
        let (_, m, x) = best;
        is_medoid[medoids[m]] = false;
        is_medoid[x] = true;
        medoids[m] = x;
        (nearest, d1, d2) = assign(&d, &medoids);
        cost = d1.iter().sum();
        history.push(cost);
    }
    // labels follow ascending medoid index
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&m| medoids[m]);
    let mut rank = vec![0; k];
    for (r, &m) in order.iter().enumerate() {
        rank[m] = r;
    }
    Ok(PamFit {
        medoids: order.iter().map(|&m| medoids[m]).collect(),
        labels: nearest.iter().map(|&m| rank[m]).collect(),
        cost,
        history,
    })
}

/// Average silhouette width; singletons contribute 0.
pub fn average_silhouette(d: &[f64], n: usize, labels: &[usize], k: usize) -> f64 {
    let d = Dissim { n, d };
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let mut sums = vec![0.0; k];
    let mut total = 0.0;
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += d.get(i, j);
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Runs PAM on D = 1 − S for every k in `k_range` and keeps the k with the
/// largest average silhouette (smaller k on ties).
pub fn pam(s: &SimilarityMatrix, k_range: RangeInclusive<usize>) -> Result<Partition> {
    let n = s.n();
    let d = s.dissimilarity();
    if d.iter().all(|&v| v == 0.0) {
        log::warn!("all areas are always clustered together; returning a single cluster");
        let medoid = 0;
        return Ok(Partition {
            labels: vec![0; n],
            medoids: vec![medoid],
            k: 1,
            silhouette: 0.0,
            cost: 0.0,
        });
    }
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi < lo || hi + 1 > n {
        return Err(Error::InvalidInput(format!(
            "k range {lo}..={hi} must lie within [2, n - 1] for n = {n}"
        )));
    }
    let mut best: Option<Partition> = None;
    for k in lo..=hi {
        let fit = pam_fixed_k(&d, n, k)?;
        let silhouette = average_silhouette(&d, n, &fit.labels, k);
        log::debug!("pam k = {k}: cost {:.4}, silhouette {silhouette:.4}", fit.cost);
        if best.as_ref().is_none_or(|b| silhouette > b.silhouette + 1e-12) {
            best = Some(Partition {
                labels: fit.labels,
                medoids: fit.medoids,
                k,
                silhouette,
                cost: fit.cost,
            });
        }
    }
    Ok(best.expect("non-empty k range"))
}
