use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mcmc::TraceSample;

use super::pam::Partition;

pub const QUANTILE_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantiles(mut values: Vec<f64>) -> [f64; 5] {
    values.sort_by(f64::total_cmp);
    QUANTILE_LEVELS.map(|p| quantile(&values, p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSummary {
    /// Position after ordering by observed response mean.
    pub cluster: usize,
    /// Label in the representative partition.
    pub partition_label: usize,
    pub size: usize,
    pub y_mean: f64,
    /// Iterations in which some trace cluster was matched to this cluster.
    pub matched_iterations: usize,
    pub theta_mean: f64,
    pub theta_quantiles: [f64; 5],
    /// `phi_quantiles[j][k]` for covariate j, category k.
    pub phi_quantiles: Vec<Vec<[f64; 5]>>,
}

/// For one iteration: the trace cluster standing in for each representative
/// cluster. Each trace cluster is mapped to the representative cluster it
/// shares most members with; among those mapped to a representative cluster
/// the one with the largest overlap is kept. Ties go to the smaller label.
pub fn match_clusters(sample: &TraceSample, partition: &Partition) -> Vec<Option<usize>> {
    let k_trace = sample.clusters.len();
    let mut overlap = vec![vec![0usize; partition.k]; k_trace];
    for (&t, &r) in sample.z.iter().zip(&partition.labels) {
        overlap[t][r] += 1;
    }
    let mut chosen: Vec<Option<(usize, usize)>> = vec![None; partition.k];
    for (t, row) in overlap.iter().enumerate() {
        let (r, &best) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least one representative cluster");
        if best == 0 {
            continue;
        }
        if chosen[r].is_none_or(|(_, o)| best > o) {
            chosen[r] = Some((t, best));
        }
    }
    chosen.into_iter().map(|c| c.map(|(t, _)| t)).collect()
}

/// Posterior summaries per representative cluster, ordered by ascending
/// observed response mean.
pub fn cluster_summaries(
    partition: &Partition,
    trace: &[TraceSample],
    data: &Dataset,
) -> Result<Vec<ClusterSummary>> {
    if partition.labels.len() != data.n() {
        return Err(Error::DimensionMismatch {
            what: "partition length".into(),
            expected: data.n(),
            found: partition.labels.len(),
        });
    }
    if let Some(s) = trace.iter().find(|s| s.z.len() != data.n()) {
        return Err(Error::DimensionMismatch {
            what: "trace allocation length".into(),
            expected: data.n(),
            found: s.z.len(),
        });
    }
    let k = partition.k;
    let mut sizes = vec![0usize; k];
    let mut y_sum = vec![0.0; k];
    for (i, &r) in partition.labels.iter().enumerate() {
        sizes[r] += 1;
        y_sum[r] += data.y_at(i);
    }
    let categories = data.categories();
    let mut thetas: Vec<Vec<f64>> = vec![vec![]; k];
    let mut phis: Vec<Vec<Vec<Vec<f64>>>> = (0..k)
        .map(|_| categories.iter().map(|&kj| vec![vec![]; kj]).collect())
        .collect();
    for sample in trace {
        for (r, t) in match_clusters(sample, partition).into_iter().enumerate() {
            let Some(t) = t else { continue };
            let cl = &sample.clusters[t];
            thetas[r].push(cl.theta);
            for (j, pj) in cl.phi.iter().enumerate() {
                for (c, &v) in pj.iter().enumerate() {
                    phis[r][j][c].push(v);
                }
            }
        }
    }
    let mut out: Vec<ClusterSummary> = (0..k)
        .map(|r| {
            let th = std::mem::take(&mut thetas[r]);
            let theta_mean = if th.is_empty() {
                f64::NAN
            } else {
                th.iter().sum::<f64>() / th.len() as f64
            };
            ClusterSummary {
                cluster: 0,
                partition_label: r,
                size: sizes[r],
                y_mean: if sizes[r] > 0 { y_sum[r] / sizes[r] as f64 } else { f64::NAN },
                matched_iterations: th.len(),
                theta_mean,
                theta_quantiles: quantiles(th),
                phi_quantiles: std::mem::take(&mut phis[r])
                    .into_iter()
                    .map(|pj| pj.into_iter().map(quantiles).collect())
                    .collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| a.y_mean.total_cmp(&b.y_mean).then(a.partition_label.cmp(&b.partition_label)));
    for (pos, s) in out.iter_mut().enumerate() {
        s.cluster = pos;
    }
    Ok(out)
}
