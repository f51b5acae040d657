//! CSV and adjacency readers and writers for inputs, traces and summaries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file re-parses to the exact values that produced it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{build_graph, Dataset, NeighborhoodGraph, RawTable};
use crate::error::{Error, Result};
use crate::mcmc::{TraceCluster, TraceSample};
use crate::postprocess::{ClusterSummary, Partition, PredictiveDraw, PseudoProfile, SimilarityMatrix};

/// Above this many areas the similarity matrix is written as an upper triangle.
pub const DENSE_SIMILARITY_LIMIT: usize = 2000;

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(path: &Path, row: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let line = row.position().map_or(0, |p| p.line());
    let text = row
        .get(col)
        .ok_or_else(|| Error::parse(path, format!("line {line}: missing column `{name}`")))?;
    text.parse()
        .map_err(|_| Error::parse(path, format!("line {line}: cannot parse `{text}` in column `{name}`")))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_row<I, T>(path: &Path, w: &mut csv::Writer<File>, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_error(path, e))
}

/// Reads the area data table: `y`, `x_*` codes, `w_*` fixed effects and an optional `offset`.
pub fn read_data_csv(path: &Path) -> Result<RawTable> {
    let (header, rows) = records(path)?;
    let mut y_col = None;
    let mut offset_col = None;
    let mut x_cols = vec![];
    let mut w_cols = vec![];
    for (c, name) in header.iter().enumerate() {
        match name.as_str() {
            "y" => y_col = Some(c),
            "offset" => offset_col = Some(c),
            n if n.starts_with("x_") => x_cols.push((c, n.to_string())),
            n if n.starts_with("w_") => w_cols.push((c, n.to_string())),
            n => return Err(Error::parse(path, format!("unexpected column `{n}`"))),
        }
    }
    let y_col = y_col.ok_or_else(|| Error::parse(path, "no `y` column"))?;
    let mut raw = RawTable {
        y: Vec::with_capacity(rows.len()),
        x: x_cols.iter().map(|(_, n)| (n.clone(), vec![])).collect(),
        w: w_cols.iter().map(|(_, n)| (n.clone(), vec![])).collect(),
        offset: offset_col.map(|_| vec![]),
    };
    for row in &rows {
        raw.y.push(field(path, row, y_col, "y")?);
        for (k, (c, name)) in x_cols.iter().enumerate() {
            raw.x[k].1.push(field(path, row, *c, name)?);
        }
        for (k, (c, name)) in w_cols.iter().enumerate() {
            raw.w[k].1.push(field(path, row, *c, name)?);
        }
        if let (Some(c), Some(off)) = (offset_col, raw.offset.as_mut()) {
            off.push(field(path, row, c, "offset")?);
        }
    }
    Ok(raw)
}

pub fn write_data_csv(path: &Path, data: &Dataset) -> Result<()> {
    let raw = data.to_raw();
    let mut w = writer(path)?;
    let mut header = vec!["y".to_string()];
    header.extend(raw.x.iter().map(|(n, _)| n.clone()));
    header.extend(raw.w.iter().map(|(n, _)| n.clone()));
    if raw.offset.is_some() {
        header.push("offset".into());
    }
    write_row(path, &mut w, &header)?;
    for i in 0..data.n() {
        let mut row = vec![raw.y[i].to_string()];
        row.extend(raw.x.iter().map(|(_, c)| c[i].to_string()));
        row.extend(raw.w.iter().map(|(_, c)| c[i].to_string()));
        if let Some(off) = &raw.offset {
            row.push(off[i].to_string());
        }
        write_row(path, &mut w, &row)?;
    }
    finish(path, w)
}

/// Reads an edge list of zero-based index pairs; blank lines and `#` lines are skipped.
pub fn read_adjacency(path: &Path, n: usize) -> Result<NeighborhoodGraph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = vec![];
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = text.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| {
                Error::parse(path, format!("line {}: `{s}` is not an area index", lineno + 1))
            })
        };
        if parts.len() != 2 {
            return Err(Error::parse(
                path,
                format!("line {}: expected two indices, found {}", lineno + 1, parts.len()),
            ));
        }
        edges.push((parse(parts[0])?, parse(parts[1])?));
    }
    build_graph(n, &edges).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_adjacency(path: &Path, graph: &NeighborhoodGraph) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "# {} areas, {} edges", graph.n(), graph.n_edges()).map_err(io)?;
    for (i, j) in graph.edges() {
        writeln!(out, "{i} {j}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Iteration, α, τ, τ_Y (empty for Poisson), occupied-cluster count and β.
pub fn write_trace_scalars(path: &Path, samples: &[TraceSample], fixed_names: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["iteration", "alpha", "tau", "tau_y", "k_occupied"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(fixed_names.iter().map(|n| format!("beta_{n}")));
    write_row(path, &mut w, &header)?;
    for s in samples {
        let mut row = vec![
            s.iteration.to_string(),
            s.alpha.to_string(),
            s.tau.to_string(),
            opt(s.tau_y),
            s.k_occupied().to_string(),
        ];
        row.extend(s.beta.iter().map(f64::to_string));
        write_row(path, &mut w, &row)?;
    }
    finish(path, w)
}

/// One row per retained iteration: the iteration followed by each area's cluster label.
pub fn write_allocations(path: &Path, samples: &[TraceSample]) -> Result<()> {
    let mut w = writer(path)?;
    if let Some(first) = samples.first() {
        let mut header = vec!["iteration".to_string()];
        header.extend((0..first.z.len()).map(|i| format!("area_{i}")));
        write_row(path, &mut w, &header)?;
    } else {
        write_row(path, &mut w, ["iteration"])?;
    }
    for s in samples {
        let mut row = vec![s.iteration.to_string()];
        row.extend(s.z.iter().map(usize::to_string));
        write_row(path, &mut w, &row)?;
    }
    finish(path, w)
}

pub fn read_allocations(path: &Path) -> Result<Vec<(usize, Vec<usize>)>> {
    let (header, rows) = records(path)?;
    let n = header.len().saturating_sub(1);
    rows.iter()
        .map(|row| {
            let it = field(path, row, 0, "iteration")?;
            let z = (1..=n).map(|c| field(path, row, c, &header[c])).collect::<Result<_>>()?;
            Ok((it, z))
        })
        .collect()
}

/// Occupied clusters per retained iteration with ψ, θ and Φ flattened as `phi_<j>_<k>`.
pub fn write_trace_clusters(path: &Path, samples: &[TraceSample], categories: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["iteration", "label", "size", "psi", "theta"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for (j, &k) in categories.iter().enumerate() {
        header.extend((0..k).map(|m| format!("phi_{j}_{m}")));
    }
    write_row(path, &mut w, &header)?;
    for s in samples {
        for c in &s.clusters {
            let mut row = vec![
                s.iteration.to_string(),
                c.label.to_string(),
                c.size.to_string(),
                c.psi.to_string(),
                c.theta.to_string(),
            ];
            row.extend(c.phi.iter().flatten().map(f64::to_string));
            write_row(path, &mut w, &row)?;
        }
    }
    finish(path, w)
}

/// Reassembles retained samples from the scalar, allocation and cluster files of one chain.
pub fn read_trace(scalars: &Path, allocations: &Path, clusters: &Path) -> Result<Vec<TraceSample>> {
    let (sh, srows) = records(scalars)?;
    let beta_cols: Vec<usize> = (0..sh.len()).filter(|&c| sh[c].starts_with("beta_")).collect();
    let mut samples = vec![];
    for row in &srows {
        let tau_y = match row.get(3) {
            Some("") | None => None,
            Some(_) => Some(field(scalars, row, 3, "tau_y")?),
        };
        samples.push(TraceSample {
            iteration: field(scalars, row, 0, "iteration")?,
            z: vec![],
            alpha: field(scalars, row, 1, "alpha")?,
            tau: field(scalars, row, 2, "tau")?,
            tau_y,
            beta: beta_cols.iter().map(|&c| field(scalars, row, c, &sh[c])).collect::<Result<_>>()?,
            clusters: vec![],
        });
    }
    let allocs = read_allocations(allocations)?;
    if allocs.len() != samples.len() {
        return Err(Error::parse(
            allocations,
            format!("{} rows but {} rows of scalars", allocs.len(), samples.len()),
        ));
    }
    for (s, (it, z)) in samples.iter_mut().zip(allocs) {
        if s.iteration != it {
            return Err(Error::parse(allocations, format!("iteration {it} does not match scalars ({})", s.iteration)));
        }
        s.z = z;
    }

    let (ch, crows) = records(clusters)?;
    // phi_<j>_<k> columns in order, with their covariate index
    let phi_cols: Vec<(usize, usize)> = (0..ch.len())
        .filter_map(|c| {
            let rest = ch[c].strip_prefix("phi_")?;
            let (j, _) = rest.split_once('_')?;
            Some((c, j.parse().ok()?))
        })
        .collect();
    let n_cov = phi_cols.iter().map(|&(_, j)| j + 1).max().unwrap_or(0);
    let mut cursor = 0;
    for row in &crows {
        let it: usize = field(clusters, row, 0, "iteration")?;
        while cursor < samples.len() && samples[cursor].iteration != it {
            cursor += 1;
        }
        if cursor == samples.len() {
            return Err(Error::parse(clusters, format!("iteration {it} missing from or out of order with scalars")));
        }
        let mut phi = vec![vec![]; n_cov];
        for &(c, j) in &phi_cols {
            phi[j].push(field(clusters, row, c, &ch[c])?);
        }
        samples[cursor].clusters.push(TraceCluster {
            label: field(clusters, row, 1, "label")?,
            size: field(clusters, row, 2, "size")?,
            psi: field(clusters, row, 3, "psi")?,
            theta: field(clusters, row, 4, "theta")?,
            phi,
        });
    }
    Ok(samples)
}

pub fn write_spatial_u(path: &Path, u_mean: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    write_row(path, &mut w, ["area", "u_mean"])?;
    for (i, u) in u_mean.iter().enumerate() {
        write_row(path, &mut w, [i.to_string(), u.to_string()])?;
    }
    finish(path, w)
}

pub fn read_spatial_u(path: &Path) -> Result<Vec<f64>> {
    let (_, rows) = records(path)?;
    rows.iter().map(|r| field(path, r, 1, "u_mean")).collect()
}

pub fn write_u_snapshots(path: &Path, snapshots: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    let n = snapshots.first().map_or(0, |(_, u)| u.len());
    let mut header = vec!["iteration".to_string()];
    header.extend((0..n).map(|i| format!("area_{i}")));
    write_row(path, &mut w, &header)?;
    for (it, u) in snapshots {
        let mut row = vec![it.to_string()];
        row.extend(u.iter().map(f64::to_string));
        write_row(path, &mut w, &row)?;
    }
    finish(path, w)
}

/// Dense rows for small n; `i,j,s` triples with i ≤ j above [`DENSE_SIMILARITY_LIMIT`].
/// The first line is a `#` comment naming the layout.
pub fn write_similarity(path: &Path, s: &SimilarityMatrix) -> Result<()> {
    let n = s.n();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if n > DENSE_SIMILARITY_LIMIT {
        writeln!(out, "# layout=upper n={n}").map_err(io)?;
        writeln!(out, "i,j,s").map_err(io)?;
        for i in 0..n {
            for j in i..n {
                writeln!(out, "{i},{j},{}", s.get(i, j)).map_err(io)?;
            }
        }
    } else {
        writeln!(out, "# layout=dense n={n}").map_err(io)?;
        let header: Vec<String> = (0..n).map(|j| format!("area_{j}")).collect();
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for i in 0..n {
            let row: Vec<String> = s.row(i).iter().map(f64::to_string).collect();
            writeln!(out, "{}", row.join(",")).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_similarity(path: &Path) -> Result<SimilarityMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let meta = first.trim().strip_prefix('#').unwrap_or("").trim();
    let mut layout = "";
    let mut n: Option<usize> = None;
    for kv in meta.split_whitespace() {
        match kv.split_once('=') {
            Some(("layout", v)) => layout = v,
            Some(("n", v)) => n = v.parse().ok(),
            _ => {}
        }
    }
    let n = n.ok_or_else(|| Error::parse(path, "missing `# layout=... n=...` header line"))?;
    let (_, rows) = records(path)?;
    let mut values = vec![0.0; n * n];
    match layout {
        "dense" => {
            if rows.len() != n {
                return Err(Error::parse(path, format!("{} rows for n = {n}", rows.len())));
            }
            for (i, row) in rows.iter().enumerate() {
                for j in 0..n {
                    values[i * n + j] = field(path, row, j, "similarity")?;
                }
            }
        }
        "upper" => {
            for row in &rows {
                let i: usize = field(path, row, 0, "i")?;
                let j: usize = field(path, row, 1, "j")?;
                if i >= n || j >= n {
                    return Err(Error::parse(path, format!("index ({i}, {j}) out of range")));
                }
                let v = field(path, row, 2, "s")?;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        other => return Err(Error::parse(path, format!("unknown layout `{other}`"))),
    }
    SimilarityMatrix::from_values(n, values).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_partition(path: &Path, partition: &Partition) -> Result<()> {
    let mut w = writer(path)?;
    write_row(path, &mut w, ["area", "cluster", "is_medoid"])?;
    for (i, &l) in partition.labels.iter().enumerate() {
        let medoid = partition.medoids.get(l) == Some(&i);
        write_row(path, &mut w, [i.to_string(), l.to_string(), (medoid as u8).to_string()])?;
    }
    finish(path, w)
}

pub fn read_partition(path: &Path) -> Result<Vec<usize>> {
    let (_, rows) = records(path)?;
    rows.iter().map(|r| field(path, r, 1, "cluster")).collect()
}

/// Long format: one θ row and one row per (covariate, category) φ per cluster.
pub fn write_cluster_summary(path: &Path, summaries: &[ClusterSummary], covariate_names: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    write_row(
        path,
        &mut w,
        [
            "cluster", "partition_label", "size", "y_mean", "matched_iterations", "parameter", "covariate",
            "category", "mean", "q025", "q25", "q50", "q75", "q975",
        ],
    )?;
    for s in summaries {
        let lead = [
            s.cluster.to_string(),
            s.partition_label.to_string(),
            s.size.to_string(),
            s.y_mean.to_string(),
            s.matched_iterations.to_string(),
        ];
        let mut row: Vec<String> = lead.to_vec();
        row.extend(["theta".into(), String::new(), String::new(), s.theta_mean.to_string()]);
        row.extend(s.theta_quantiles.iter().map(f64::to_string));
        write_row(path, &mut w, &row)?;
        for (j, per_cat) in s.phi_quantiles.iter().enumerate() {
            for (k, q) in per_cat.iter().enumerate() {
                let mut row: Vec<String> = lead.to_vec();
                row.extend([
                    "phi".into(),
                    covariate_names.get(j).cloned().unwrap_or_else(|| j.to_string()),
                    k.to_string(),
                    String::new(),
                ]);
                row.extend(q.iter().map(f64::to_string));
                write_row(path, &mut w, &row)?;
            }
        }
    }
    finish(path, w)
}

/// One row per chain, profile and retained iteration; `draws` is indexed `[chain][profile]`.
pub fn write_predictions(path: &Path, profiles: &[PseudoProfile], draws: &[Vec<Vec<PredictiveDraw>>]) -> Result<()> {
    let mut w = writer(path)?;
    write_row(path, &mut w, ["profile", "name", "chain", "iteration", "cluster", "mean", "draw"])?;
    for (p, profile) in profiles.iter().enumerate() {
        for (chain, per_profile) in draws.iter().enumerate() {
            for d in &per_profile[p] {
                write_row(
                    path,
                    &mut w,
                    [
                        p.to_string(),
                        profile.name.clone(),
                        chain.to_string(),
                        d.iteration.to_string(),
                        d.cluster.to_string(),
                        d.mean.to_string(),
                        d.draw.to_string(),
                    ],
                )?;
            }
        }
    }
    finish(path, w)
}

/// `(profile, chain, draw)` triples from a predictions file.
pub fn read_predictions(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let (_, rows) = records(path)?;
    rows.iter()
        .map(|r| Ok((field(path, r, 0, "profile")?, field(path, r, 2, "chain")?, field(path, r, 6, "draw")?)))
        .collect()
}

/// `(quantity, chain, value)` rows; `chain` is `all` for pooled quantities.
pub fn write_diagnostics(path: &Path, rows: &[(String, String, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    write_row(path, &mut w, ["quantity", "chain", "value"])?;
    for (q, c, v) in rows {
        write_row(path, &mut w, [q.clone(), c.clone(), v.to_string()])?;
    }
    finish(path, w)
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let (_, rows) = records(path)?;
    rows.iter()
        .map(|r| Ok((field(path, r, 0, "quantity")?, field(path, r, 1, "chain")?, field(path, r, 2, "value")?)))
        .collect()
}
