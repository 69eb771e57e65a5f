//! Pipeline stages behind the command line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ddtrx_core::abc::{simulate_records, AbcEstimate};
use ddtrx_core::cluster::ward_tree;
use ddtrx_core::ingest::{load_csv, mvn_qq_points, preprocess, write_qq_csv};
use ddtrx_core::mh::{pool_chains, run_chains};
use ddtrx_core::summaries::project_ultrametric;
use ddtrx_core::{AbcPool, DataMatrix, RngSeed, SimRecord, SyntheticSpec};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result, StageExt};
use crate::manifest::{
    projection_out, query_ipcp, read_json, read_trees, register, summarize_trees, write_json, write_trees,
    IpcpResponse, LoadedRun, MapTree, ParamSummary, ProjectionOut, RunManifest, ABC_FILE, DATA_FILE, SUMMARIES_FILE,
    TREES_FILE,
};

/// Offset separating the chain streams from the synthetic-data streams.
const CHAIN_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub const DEFAULT_SHARD: usize = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub spec: SyntheticSpec,
    pub seed: u64,
}

fn meta_path(cache: &Path) -> PathBuf {
    cache.with_extension("meta.json")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimulateReport {
    pub reused: usize,
    pub generated: usize,
}

// Valid records at the head of the cache and the byte length they occupy.
// A torn final line is dropped; any other bad line is an error.
fn scan_cache(path: &Path, seed: u64) -> Result<(Vec<SimRecord>, u64)> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        let complete = line.ends_with('\n');
        match serde_json::from_str::<SimRecord>(line.trim_end()) {
            Ok(r) if complete => {
                if r.seed != seed || r.index != records.len() as u64 {
                    return Err(CliError::CacheMismatch(path.display().to_string()));
                }
                records.push(r);
                valid_len += n as u64;
            }
            Ok(_) => break,
            Err(_) if !complete => break,
            Err(e) => return Err(CliError::json(path, e)),
        }
    }
    Ok((records, valid_len))
}

/// Ensures the JSON-lines cache at `path` holds at least `n` draws of the
/// stream `(spec, seed)`, generating the missing ones in shards of `shard`
/// and appending each shard as it completes. An interrupted run resumes
/// where it stopped.
pub fn cmd_simulate(spec: &SyntheticSpec, n: usize, seed: u64, path: &Path, shard: usize) -> Result<SimulateReport> {
    spec.validate()?;
    if shard == 0 {
        return Err(CliError::Usage("shard size must be positive".into()));
    }
    let meta = CacheMeta { spec: *spec, seed };
    let mp = meta_path(path);
    if mp.exists() {
        let on_disk: CacheMeta = read_json(&mp)?;
        if on_disk != meta {
            return Err(CliError::CacheMismatch(path.display().to_string()));
        }
    } else if path.exists() {
        return Err(CliError::CacheMismatch(path.display().to_string()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write_json(&mp, &meta)?;
    let (existing, valid_len) = scan_cache(path, seed)?;
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| CliError::io(path, e))?;
    file.set_len(valid_len).map_err(|e| CliError::io(path, e))?;
    let start = existing.len();
    let mut generated = 0;
    let mut at = start;
    while at < n {
        let end = (at + shard).min(n);
        let recs = simulate_records(spec, at as u64..end as u64, RngSeed(seed))?;
        let mut buf = String::new();
        for r in &recs {
            buf.push_str(&serde_json::to_string(r).map_err(|e| CliError::json(path, e))?);
            buf.push('\n');
        }
        file.write_all(buf.as_bytes()).map_err(|e| CliError::io(path, e))?;
        file.flush().map_err(|e| CliError::io(path, e))?;
        log::info!("synthetic draws {at}..{end} written to {}", path.display());
        generated += end - at;
        at = end;
    }
    Ok(SimulateReport { reused: start.min(n), generated })
}

/// First `n` draws of a cache written by [`cmd_simulate`].
pub fn load_cache(path: &Path, n: usize) -> Result<Vec<SimRecord>> {
    let meta: CacheMeta = read_json(&meta_path(path))?;
    let (mut records, _) = scan_cache(path, meta.seed)?;
    if records.len() < n {
        return Err(CliError::Usage(format!("cache {} holds {} draws, {n} requested", path.display(), records.len())));
    }
    records.truncate(n);
    Ok(records)
}

/// Reads a raw response table, preprocesses it and writes the data matrix,
/// plus QQ points when `qq` is given.
pub fn cmd_ingest(input: &Path, untreated: &str, k: usize, out: &Path, qq: Option<&Path>) -> Result<DataMatrix> {
    let table = load_csv(input, untreated)?;
    let data = preprocess(&table, k)?;
    let f = fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    data.write_csv(f)?;
    if let Some(q) = qq {
        let f = fs::File::create(q).map_err(|e| CliError::io(q, e))?;
        write_qq_csv(&mvn_qq_points(&data)?, f)?;
    }
    Ok(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputKind {
    /// Treatment-by-patient responses with an untreated row.
    #[default]
    Raw,
    /// A data matrix as written by the ingest stage.
    Preprocessed,
}

#[derive(Clone, Debug)]
pub struct InferOptions {
    pub input: PathBuf,
    pub kind: InputKind,
    pub out: PathBuf,
    /// Synthetic cache; defaults to `synthetic.jsonl` in the output directory.
    pub cache: Option<PathBuf>,
    /// Dataset id; defaults to the output directory name.
    pub id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbcParamOut {
    pub summary: ParamSummary,
    pub adjusted: Vec<f64>,
    pub weights: Vec<f64>,
    pub dropped_columns: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbcOut {
    pub c: AbcParamOut,
    pub sigma2: AbcParamOut,
}

fn param_out(e: &AbcEstimate) -> AbcParamOut {
    AbcParamOut {
        summary: ParamSummary { median: e.median, lower: e.lower, upper: e.upper, ess: e.ess, accepted: e.samples.len() },
        adjusted: e.adjusted.values.clone(),
        weights: e.samples.weights.clone(),
        dropped_columns: e.adjusted.dropped.clone(),
    }
}

/// Ingest, ABC for `(c, sigma2)`, tree sampling at the posterior medians and
/// summaries, each persisted in `opts.out` and recorded in the manifest.
pub fn cmd_infer(opts: &InferOptions, cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = &opts.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let data_path = out.join(DATA_FILE);
    let data = (|| -> Result<DataMatrix> {
        let data = match opts.kind {
            InputKind::Raw => preprocess(&load_csv(&opts.input, &cfg.untreated)?, cfg.k_neighbors)?,
            InputKind::Preprocessed => {
                DataMatrix::read_csv(fs::File::open(&opts.input).map_err(|e| CliError::io(&opts.input, e))?)?
            }
        };
        data.write_csv(fs::File::create(&data_path).map_err(|e| CliError::io(&data_path, e))?)?;
        Ok(data)
    })()
    .stage("ingest")?;
    log::info!("data: {} treatments x {} patients", data.rows(), data.cols());

    let cache = opts.cache.clone().unwrap_or_else(|| out.join("synthetic.jsonl"));
    let spec = cfg.synthetic_spec(data.rows(), data.cols());
    let records = cmd_simulate(&spec, cfg.n_syn, cfg.seed, &cache, DEFAULT_SHARD)
        .and_then(|_| load_cache(&cache, cfg.n_syn))
        .stage("simulate")?;

    let abc_path = out.join(ABC_FILE);
    let abc = (|| -> Result<AbcOut> {
        let pool = AbcPool::new(&records)?;
        let (c, s) = pool.estimate_data(&data, cfg.d)?;
        let abc = AbcOut { c: param_out(&c), sigma2: param_out(&s) };
        write_json(&abc_path, &abc)?;
        Ok(abc)
    })()
    .stage("abc")?;
    let (c0, s0) = (abc.c.summary.median, abc.sigma2.summary.median);
    log::info!("posterior medians: c = {c0}, sigma2 = {s0}");

    let trees_path = out.join(TREES_FILE);
    let runs = (|| -> Result<_> {
        let init = ward_tree(&data, s0)?;
        let seed = RngSeed(cfg.seed.wrapping_add(CHAIN_SEED_OFFSET));
        let runs = run_chains(&data, c0, s0, &init, cfg.chain_config(), seed, cfg.chains)?;
        write_trees(&trees_path, pool_chains(&runs)?.samples())?;
        Ok(runs)
    })()
    .stage("mh")?;

    let summaries_path = out.join(SUMMARIES_FILE);
    (|| -> Result<()> {
        let ts = read_trees(&trees_path)?;
        write_json(&summaries_path, &summarize_trees(&ts)?)
    })()
    .stage("summarize")?;

    let mut artifacts = BTreeMap::new();
    for (key, path) in
        [("data", &data_path), ("synthetic", &cache), ("abc", &abc_path), ("trees", &trees_path), ("summaries", &summaries_path)]
    {
        register(&mut artifacts, out, key, path)?;
    }
    let id = opts.id.clone().unwrap_or_else(|| {
        out.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
    });
    let created_unix = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = RunManifest {
        id,
        created_unix,
        config: cfg.clone(),
        labels: data.row_labels().to_vec(),
        n_patients: data.cols(),
        c: abc.c.summary,
        sigma2: abc.sigma2.summary,
        diagnostics: runs.iter().map(|r| r.diagnostics()).collect(),
        artifacts,
    };
    manifest.save(out)?;
    Ok(manifest)
}

/// Plain-text table of the ABC estimates and per-chain diagnostics.
pub fn diagnostics_table(m: &RunManifest) -> String {
    let mut s = String::new();
    s.push_str("parameter    median       2.5%         97.5%        ESS\n");
    for (name, p) in [("c", &m.c), ("sigma2", &m.sigma2)] {
        s.push_str(&format!("{name:<12} {:<12.6} {:<12.6} {:<12.6} {:.1}\n", p.median, p.lower, p.upper, p.ess));
    }
    s.push_str("\nchain  accept   geweke_z   ESS        failures\n");
    let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
    for d in &m.diagnostics {
        s.push_str(&format!(
            "{:<6} {:<8.3} {:<10} {:<10} {}\n",
            d.chain,
            d.acceptance_rate,
            opt(d.geweke_z, 3),
            opt(d.ess, 1),
            d.proposal_failures
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummarizeOutput {
    pub id: String,
    pub n_trees: usize,
    pub map_tree: MapTree,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<IpcpResponse>,
}

/// MAP tree of a run and, for a non-empty subset, its iPCP and PCP curve.
pub fn cmd_summarize(run: &LoadedRun, subset: &[String]) -> Result<SummarizeOutput> {
    let query = if subset.is_empty() { None } else { Some(query_ipcp(&run.trees, subset)?) };
    Ok(SummarizeOutput {
        id: run.manifest.id.clone(),
        n_trees: run.trees.len(),
        map_tree: run.summaries.map_tree.clone(),
        query,
    })
}

/// Projects a labelled square similarity matrix onto tree-structured ones.
pub fn cmd_project(matrix_csv: &Path) -> Result<ProjectionOut> {
    let f = fs::File::open(matrix_csv).map_err(|e| CliError::io(matrix_csv, e))?;
    let m = DataMatrix::read_csv(f)?;
    if m.rows() != m.cols() || m.row_labels() != m.col_labels() {
        return Err(CliError::Usage(format!(
            "{}: expected a square matrix with matching row and column labels",
            matrix_csv.display()
        )));
    }
    let p = project_ultrametric(m.values(), m.row_labels())?;
    Ok(projection_out(&p, m.row_labels()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ddtrx_core::GammaSpec;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n_leaves: 4,
            n_cols: 3,
            prior_c: GammaSpec { shape: 2.0, rate: 2.0 },
            prior_sigma2_inv: GammaSpec { shape: 1.0, rate: 1.0 },
        }
    }

    #[test]
    fn simulate_round_trips_and_reuses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let r = cmd_simulate(&spec(), 100, 7, &path, 30).unwrap();
        assert_eq!(r, SimulateReport { reused: 0, generated: 100 });
        let recs = load_cache(&path, 100).unwrap();
        assert_eq!(recs, simulate_records(&spec(), 0..100, RngSeed(7)).unwrap());
        let before = fs::read(&path).unwrap();
        let again = cmd_simulate(&spec(), 80, 7, &path, 30).unwrap();
        assert_eq!(again, SimulateReport { reused: 80, generated: 0 });
        assert_eq!(fs::read(&path).unwrap(), before);
    }

    #[test]
    fn sharded_and_resumed_runs_match_monolithic() {
        let dir = tempfile::tempdir().unwrap();
        let mono = dir.path().join("mono.jsonl");
        cmd_simulate(&spec(), 60, 3, &mono, 1000).unwrap();
        let part = dir.path().join("part.jsonl");
        cmd_simulate(&spec(), 25, 3, &part, 7).unwrap();
        // a torn final line is discarded on resume
        let mut f = fs::OpenOptions::new().append(true).open(&part).unwrap();
        f.write_all(b"{\"c\":0.5,\"sig").unwrap();
        drop(f);
        let r = cmd_simulate(&spec(), 60, 3, &part, 7).unwrap();
        assert_eq!(r, SimulateReport { reused: 25, generated: 35 });
        assert_eq!(fs::read(&mono).unwrap(), fs::read(&part).unwrap());
    }

    #[test]
    fn cache_rejects_other_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        cmd_simulate(&spec(), 10, 1, &path, 10).unwrap();
        assert!(matches!(cmd_simulate(&spec(), 10, 2, &path, 10), Err(CliError::CacheMismatch(_))));
        let other = SyntheticSpec { n_cols: 5, ..spec() };
        assert!(matches!(cmd_simulate(&other, 10, 1, &path, 10), Err(CliError::CacheMismatch(_))));
        assert!(load_cache(&path, 11).is_err());
    }

    #[test]
    fn project_reads_labelled_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, ",a,b,c\na,1,0.9,0.2\nb,0.9,1,0.4\nc,0.2,0.4,1\n").unwrap();
        let p = cmd_project(&path).unwrap();
        assert!(p.exact);
        assert!((p.matrix[0][2] - 0.3).abs() < 1e-12 && (p.matrix[0][1] - 0.9).abs() < 1e-12);
        fs::write(&path, ",a,b\na,1,0.5\n").unwrap();
        assert!(cmd_project(&path).is_err());
        fs::write(&path, ",a,b\na,1,0.5,3\nb,0.5,1\n").unwrap();
        assert!(cmd_project(&path).is_err());
    }

    #[test]
    fn ingest_writes_matrix_and_qq() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("raw.csv");
        fs::write(&input, ",p1,p2,p3\nuntreated,1,2,0\nA,0.5,,1\nB,2,1,0\nC,1,3,2\n").unwrap();
        let out = dir.path().join("data.csv");
        let qq = dir.path().join("qq.csv");
        let d = cmd_ingest(&input, "untreated", 10, &out, Some(&qq)).unwrap();
        assert_eq!(d.rows(), 3);
        assert_eq!(DataMatrix::read_csv(fs::File::open(&out).unwrap()).unwrap(), d);
        assert_eq!(fs::read_to_string(&qq).unwrap().lines().count(), 4);
        assert!(matches!(cmd_ingest(&input, "control", 10, &out, None), Err(CliError::Core(_))));
    }
}
