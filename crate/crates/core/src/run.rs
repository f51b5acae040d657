//! Batch commands: fit chains and write outputs, re-run prediction on a stored
//! trace, summarize an output directory, and simulate a synthetic dataset.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::config::RunConfig;
use crate::data::{validate_dataset, Dataset, Hyperparameters, NeighborhoodGraph};
use crate::error::{Error, Result};
use crate::io;
use crate::mcmc::{run_chain_stream, SampleTrace, TraceSample};
use crate::oracle::{generate, stats, SynthSpec};
use crate::postprocess::{
    cluster_summaries, pam, predict, similarity, ClusterSummary, Partition, PredictiveDraw, PseudoProfile,
    SimilarityMatrix,
};

/// Random stream used for predictive draws of chain `k` is `PREDICT_STREAM_BASE + k`.
const PREDICT_STREAM_BASE: u64 = 1 << 32;

/// File name of a per-chain output; unsuffixed when there is a single chain.
pub fn chain_file(stem: &str, chain: usize, n_chains: usize) -> String {
    if n_chains == 1 {
        format!("{stem}.csv")
    } else {
        format!("{stem}_chain{chain}.csv")
    }
}

/// Validated data, priors and profiles for a configuration.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub data: Dataset,
    pub hyper: Hyperparameters,
    pub profiles: Vec<PseudoProfile>,
}

pub fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    let raw = io::read_data_csv(&config.data_path)?;
    let n = raw.y.len();
    let graph = match &config.adjacency_path {
        Some(p) => io::read_adjacency(p, n)?,
        None => NeighborhoodGraph::from_adjacency(vec![vec![]; n])?,
    };
    let data = validate_dataset(raw, graph, config.response, config.categories.as_deref())
        .map_err(|e| Error::parse(&config.data_path, e.to_string()))?;
    let hyper = config.hyper.apply(data.categories(), &config.source)?;
    let profiles = config
        .profiles
        .iter()
        .map(|spec| {
            spec.profile
                .validate(data.categories(), data.n_fixed(), data.kind())
                .map_err(|e| Error::Config {
                    path: config.source.clone(),
                    line: spec.line,
                    message: e.to_string(),
                })?;
            Ok(spec.profile.clone())
        })
        .collect::<Result<_>>()?;
    Ok(Inputs { data, hyper, profiles })
}

/// Everything a fit produces, as written to the output directory.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub traces: Vec<SampleTrace>,
    pub similarity: SimilarityMatrix,
    pub partition: Partition,
    pub summaries: Vec<ClusterSummary>,
    /// `predictions[chain][profile]`.
    pub predictions: Vec<Vec<Vec<PredictiveDraw>>>,
    pub diagnostics: Vec<(String, String, f64)>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_chain_files(dir: &Path, chain: usize, n_chains: usize, trace: &SampleTrace, data: &Dataset) -> Result<()> {
    let f = |stem| dir.join(chain_file(stem, chain, n_chains));
    io::write_trace_scalars(&f("trace_scalars"), &trace.samples, data.fixed_names())?;
    io::write_allocations(&f("allocations"), &trace.samples)?;
    io::write_trace_clusters(&f("trace_clusters"), &trace.samples, data.categories())?;
    if trace.spatial {
        io::write_u_snapshots(&f("spatial_u_snapshots"), &trace.u_snapshots)?;
    }
    Ok(())
}

/// Representative partition from a similarity matrix over the configured k range.
pub fn representative_partition(s: &SimilarityMatrix, k_min: usize, k_max: usize) -> Result<Partition> {
    let n = s.n();
    let hi = k_max.min(n.saturating_sub(1));
    if hi < k_min.max(2) {
        log::warn!("{n} areas are too few for a k range starting at {k_min}; reporting a single cluster");
        let d = s.dissimilarity();
        let cost = |m: usize| (0..n).map(|i| d[i * n + m]).sum::<f64>();
        let medoid = (0..n).min_by(|&a, &b| cost(a).total_cmp(&cost(b))).unwrap_or(0);
        return Ok(Partition {
            labels: vec![0; n],
            medoids: vec![medoid],
            k: 1,
            silhouette: 0.0,
            cost: cost(medoid),
        });
    }
    pam(s, k_min.max(2)..=hi)
}

/// Predictive draws for each chain's samples on its own random stream.
pub fn predict_chains(
    profiles: &[PseudoProfile],
    chains: &[&[TraceSample]],
    data: &Dataset,
    seed: u64,
) -> Result<Vec<Vec<Vec<PredictiveDraw>>>> {
    chains
        .iter()
        .enumerate()
        .map(|(k, samples)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(PREDICT_STREAM_BASE + k as u64);
            predict(profiles, samples, data.kind(), &mut rng)
        })
        .collect()
}

fn diagnostics(
    traces: &[SampleTrace],
    data: &Dataset,
    partition: &Partition,
    profiles: &[PseudoProfile],
    predictions: &[Vec<Vec<PredictiveDraw>>],
) -> Vec<(String, String, f64)> {
    let mut rows = vec![];
    let all = || "all".to_string();
    let series = |f: &dyn Fn(&TraceSample) -> f64| -> Vec<Vec<f64>> {
        traces.iter().map(|t| t.samples.iter().map(f).collect()).collect()
    };
    let mut scalars: Vec<(&str, Vec<Vec<f64>>)> = vec![
        ("alpha", series(&|s| s.alpha)),
        ("k_occupied", series(&|s| s.k_occupied() as f64)),
    ];
    if traces.first().is_some_and(|t| t.spatial) {
        scalars.push(("tau", series(&|s| s.tau)));
    }
    if data.kind() == crate::data::ResponseKind::Gaussian {
        scalars.push(("tau_y", series(&|s| s.tau_y.unwrap_or(f64::NAN))));
    }
    for (name, chains) in &scalars {
        rows.push((format!("rhat_{name}"), all(), stats::split_rhat(chains)));
    }
    for (k, t) in traces.iter().enumerate() {
        let c = k.to_string();
        for (name, chains) in &scalars {
            let x = &chains[k];
            let m = if x.is_empty() { f64::NAN } else { stats::mean(x) };
            rows.push((format!("mean_{name}"), c.clone(), m));
        }
        rows.push(("theta_acceptance".into(), c.clone(), t.stats.theta_acceptance));
        for (b, rate) in t.stats.beta_acceptance.iter().enumerate() {
            rows.push((format!("beta_acceptance_{b}"), c.clone(), *rate));
        }
        rows.push(("swap_acceptance".into(), c.clone(), t.stats.swap_acceptance));
        if t.spatial {
            rows.push(("site_acceptance".into(), c.clone(), t.stats.site_acceptance));
        }
        for (p, profile) in profiles.iter().enumerate() {
            let draws: Vec<f64> = predictions[k][p].iter().map(|d| d.draw).collect();
            let m = if draws.is_empty() { f64::NAN } else { stats::mean(&draws) };
            rows.push((format!("predictive_mean:{}", profile.name), c.clone(), m));
        }
    }
    rows.push(("partition_k".into(), all(), partition.k as f64));
    rows.push(("partition_silhouette".into(), all(), partition.silhouette));
    rows
}

/// Runs every chain, post-processes the pooled trace and writes all outputs.
pub fn run_fit(config: &RunConfig) -> Result<FitOutput> {
    let inputs = load_inputs(config)?;
    let Inputs { data, hyper, profiles } = &inputs;
    let dir = &config.output_dir;
    create_dir(dir)?;
    log::info!(
        "fitting {} areas, {} covariates, {} chains of {} iterations",
        data.n(),
        data.n_covariates(),
        config.n_chains,
        config.schedule.n_iter
    );

    let results: Vec<Result<SampleTrace>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.n_chains)
            .map(|k| {
                scope.spawn(move || {
                    let trace = run_chain_stream(data, hyper, &config.schedule, k as u64)?;
                    write_chain_files(dir, k, config.n_chains, &trace, data)?;
                    Ok(trace)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::numerical("chain", "chain thread panicked"))))
            .collect()
    });
    let traces = results.into_iter().collect::<Result<Vec<_>>>()?;

    let pooled: Vec<TraceSample> = traces.iter().flat_map(|t| t.samples.iter().cloned()).collect();
    if pooled.is_empty() {
        return Err(Error::InvalidInput("no iterations were retained; check burn_in and thin".into()));
    }
    let s = similarity(pooled.iter().map(|t| t.z.as_slice()))?;
    let partition = representative_partition(&s, config.k_min, config.k_max)?;
    let summaries = cluster_summaries(&partition, &pooled, data)?;
    let chains: Vec<&[TraceSample]> = traces.iter().map(|t| t.samples.as_slice()).collect();
    let predictions = predict_chains(profiles, &chains, data, config.schedule.seed)?;
    let diagnostics = diagnostics(&traces, data, &partition, profiles, &predictions);

    let n = data.n();
    let mut u_mean = vec![0.0; n];
    for t in &traces {
        u_mean.iter_mut().zip(&t.u_mean).for_each(|(a, b)| *a += b / traces.len() as f64);
    }
    io::write_similarity(&dir.join("similarity.csv"), &s)?;
    io::write_partition(&dir.join("partition.csv"), &partition)?;
    io::write_cluster_summary(&dir.join("cluster_summary.csv"), &summaries, data.covariate_names())?;
    io::write_spatial_u(&dir.join("spatial_u.csv"), &u_mean)?;
    io::write_predictions(&dir.join("predictions.csv"), profiles, &predictions)?;
    io::write_diagnostics(&dir.join("diagnostics.csv"), &diagnostics)?;
    log::info!("representative partition: {} clusters, silhouette {:.3}", partition.k, partition.silhouette);

    Ok(FitOutput {
        traces,
        similarity: s,
        partition,
        summaries,
        predictions,
        diagnostics,
    })
}

/// Reads back the retained samples of every chain stored in `dir`.
pub fn read_chains(dir: &Path) -> Result<Vec<Vec<TraceSample>>> {
    let read = |n_chains: usize, k: usize| {
        let f = |stem| dir.join(chain_file(stem, k, n_chains));
        io::read_trace(&f("trace_scalars"), &f("allocations"), &f("trace_clusters"))
    };
    if dir.join("trace_scalars.csv").exists() {
        return Ok(vec![read(1, 0)?]);
    }
    let mut chains = vec![];
    while dir.join(chain_file("trace_scalars", chains.len(), 2)).exists() {
        chains.push(read(2, chains.len())?);
    }
    if chains.is_empty() {
        return Err(Error::io(
            dir.join("trace_scalars.csv"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no stored trace in this directory"),
        ));
    }
    Ok(chains)
}

/// Posterior predictive draws from the trace stored in the configured output
/// directory; rewrites `predictions.csv`.
pub fn run_predict(config: &RunConfig) -> Result<Vec<Vec<Vec<PredictiveDraw>>>> {
    let inputs = load_inputs(config)?;
    let chains = read_chains(&config.output_dir)?;
    let refs: Vec<&[TraceSample]> = chains.iter().map(Vec::as_slice).collect();
    let predictions = predict_chains(&inputs.profiles, &refs, &inputs.data, config.schedule.seed)?;
    io::write_predictions(&config.output_dir.join("predictions.csv"), &inputs.profiles, &predictions)?;
    Ok(predictions)
}

/// Plain-text report on an output directory, recomputing the similarity
/// matrix from the stored allocations as a consistency check.
pub fn summarize(dir: &Path) -> Result<String> {
    let chains = read_chains(dir)?;
    let mut out = String::new();
    let lens: Vec<String> = chains.iter().map(|c| c.len().to_string()).collect();
    out.push_str(&format!("chains: {} (retained {})\n", chains.len(), lens.join(", ")));
    let series = |f: &dyn Fn(&TraceSample) -> f64| -> Vec<Vec<f64>> {
        chains.iter().map(|c| c.iter().map(f).collect()).collect()
    };
    for (name, s) in [
        ("alpha", series(&|s| s.alpha)),
        ("tau", series(&|s| s.tau)),
        ("k_occupied", series(&|s| s.k_occupied() as f64)),
    ] {
        let pooled: Vec<f64> = s.iter().flatten().copied().collect();
        out.push_str(&format!(
            "{name}: mean {:.4}, split R-hat {:.4}\n",
            stats::mean(&pooled),
            stats::split_rhat(&s)
        ));
    }
    let recomputed = similarity(chains.iter().flatten().map(|t| t.z.as_slice()))?;
    let stored_path = dir.join("similarity.csv");
    if stored_path.exists() {
        let stored = io::read_similarity(&stored_path)?;
        let n = stored.n();
        let diff = if n == recomputed.n() {
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (stored.get(i, j) - recomputed.get(i, j)).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        out.push_str(&format!("similarity: max deviation from allocations {diff:e}\n"));
    }
    let partition_path = dir.join("partition.csv");
    if partition_path.exists() {
        let labels = io::read_partition(&partition_path)?;
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let sizes: Vec<String> = sizes.iter().map(usize::to_string).collect();
        out.push_str(&format!("partition: {k} clusters, sizes {}\n", sizes.join(", ")));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    output: PathBuf,
    synth: SynthSpec,
}

/// Generates a synthetic dataset from a TOML spec and writes `data.csv`,
/// `adjacency.txt`, `truth.csv` and a ready-to-run `fit.toml`. Returns the output directory.
pub fn simulate(config_path: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let cfg: SimulateConfig = toml::from_str(&text).map_err(|e| Error::Config {
        path: config_path.to_path_buf(),
        line: e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let dir = if cfg.output.is_absolute() { cfg.output } else { base.join(cfg.output) };
    let synth = generate(&cfg.synth)?;
    write_synthetic(&dir, &synth.dataset, &synth.true_labels, &synth.true_u)?;
    Ok(dir)
}

/// Writes a dataset with its ground truth and a matching fit configuration.
pub fn write_synthetic(dir: &Path, data: &Dataset, labels: &[usize], u: &[f64]) -> Result<()> {
    create_dir(dir)?;
    io::write_data_csv(&dir.join("data.csv"), data)?;
    io::write_adjacency(&dir.join("adjacency.txt"), data.graph())?;
    let truth = dir.join("truth.csv");
    let mut w = csv::Writer::from_path(&truth).map_err(|e| Error::parse(&truth, e.to_string()))?;
    let rows = std::iter::once(["area".to_string(), "cluster".into(), "u".into()])
        .chain((0..data.n()).map(|i| [i.to_string(), labels[i].to_string(), u[i].to_string()]));
    for row in rows {
        w.write_record(&row).map_err(|e| Error::parse(&truth, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&truth, e))?;
    let categories: Vec<String> = data.categories().iter().map(usize::to_string).collect();
    let spatial = data.graph().n_edges() > 0;
    let fit = format!(
        "[data]\npath = \"data.csv\"\nadjacency = \"adjacency.txt\"\noutput = \"fit\"\nresponse = \"{}\"\nspatial = {spatial}\ncategories = [{}]\n\n[mcmc]\nn_iter = 10000\nburn_in = 5000\nthin = 1\nn_chains = 2\nseed = 1\n",
        data.kind(),
        categories.join(", ")
    );
    let path = dir.join("fit.toml");
    fs::write(&path, fit).map_err(|e| Error::io(&path, e))
}
