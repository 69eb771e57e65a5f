//! Run artifacts on disk: the manifest, posterior trees and summary matrices.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ddtrx_core::mh::ChainDiagnostics;
use ddtrx_core::summaries::{ipcp, map_tree, pairwise_ipcp, pcp_curve, project_ultrametric};
use ddtrx_core::{parse_newick, serialize_newick, PosteriorTreeSet, Projection, TreeSample};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.csv";
pub const ABC_FILE: &str = "abc.json";
pub const TREES_FILE: &str = "trees.jsonl";
pub const SUMMARIES_FILE: &str = "summaries.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the manifest directory unless absolute.
    pub path: String,
    pub sha256: String,
}

/// Weighted posterior summary of one Euclidean parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub ess: f64,
    pub accepted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub created_unix: u64,
    pub config: RunConfig,
    pub labels: Vec<String>,
    pub n_patients: usize,
    pub c: ParamSummary,
    pub sigma2: ParamSummary,
    pub diagnostics: Vec<ChainDiagnostics>,
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

impl RunManifest {
    pub fn artifact_path(&self, dir: &Path, key: &str) -> Result<PathBuf> {
        let a = self.artifacts.get(key).ok_or_else(|| CliError::NotFound(format!("artifact `{key}`")))?;
        Ok(dir.join(&a.path))
    }

    /// Artifact hashes by key, the reproducible fingerprint of a run.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.artifacts.iter().map(|(k, a)| (k.clone(), a.sha256.clone())).collect()
    }

    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in self.artifacts.values() {
            let path = dir.join(&a.path);
            let actual = sha256_file(&path)?;
            if actual != a.sha256 {
                return Err(CliError::HashMismatch { path: path.display().to_string(), expected: a.sha256.clone(), actual });
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// Reads `dir/manifest.json` (or the given manifest file) and checks every
    /// artifact hash.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let (dir, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
        };
        let m: Self = read_json(&file)?;
        m.verify(&dir)?;
        Ok((m, dir))
    }
}

/// Records `path` under `key` with its current hash.
pub fn register(artifacts: &mut BTreeMap<String, ArtifactRef>, dir: &Path, key: &str, path: &Path) -> Result<()> {
    let rel = path.strip_prefix(dir).unwrap_or(path);
    artifacts.insert(key.to_string(), ArtifactRef { path: rel.display().to_string(), sha256: sha256_file(path)? });
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub chain: usize,
    pub iter: usize,
    pub log_prior: f64,
    pub log_lik: f64,
    pub newick: String,
}

pub fn write_trees(path: &Path, samples: &[TreeSample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let rec = TreeRecord {
            chain: s.chain,
            iter: s.iter,
            log_prior: s.log_prior,
            log_lik: s.log_lik,
            newick: serialize_newick(&s.tree),
        };
        let line = serde_json::to_string(&rec).map_err(|e| CliError::json(path, e))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_trees(path: &Path) -> Result<PosteriorTreeSet> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut samples = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TreeRecord = serde_json::from_str(&line).map_err(|e| CliError::json(path, e))?;
        samples.push(TreeSample {
            chain: rec.chain,
            iter: rec.iter,
            tree: parse_newick(&rec.newick)?,
            log_prior: rec.log_prior,
            log_lik: rec.log_lik,
        });
    }
    Ok(PosteriorTreeSet::new(samples)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapTree {
    pub newick: String,
    pub log_score: f64,
    pub chain: usize,
    pub iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOut {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub newick: String,
    pub distance: f64,
    pub exact: bool,
}

/// Global summaries of a posterior tree set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummaries {
    pub labels: Vec<String>,
    pub pairwise_ipcp: Vec<Vec<f64>>,
    pub map_tree: MapTree,
    pub projection: ProjectionOut,
}

fn rows(m: &ddtrx_core::TreeCov) -> Vec<Vec<f64>> {
    (0..m.dim()).map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect()).collect()
}

pub(crate) fn projection_out(p: &Projection, labels: &[String]) -> ProjectionOut {
    ProjectionOut {
        labels: labels.to_vec(),
        matrix: rows(&p.cov),
        newick: p.hierarchy.to_newick(),
        distance: p.distance,
        exact: p.exact,
    }
}

pub fn project_matrix(m: &ddtrx_core::TreeCov) -> Result<ProjectionOut> {
    let p = project_ultrametric(m.entries(), m.leaf_order())?;
    Ok(projection_out(&p, m.leaf_order()))
}

pub fn summarize_trees(ts: &PosteriorTreeSet) -> Result<RunSummaries> {
    let pw = pairwise_ipcp(ts);
    let best = map_tree(ts);
    Ok(RunSummaries {
        labels: ts.labels().to_vec(),
        pairwise_ipcp: rows(&pw),
        map_tree: MapTree {
            newick: serialize_newick(&best.tree),
            log_score: best.log_score(),
            chain: best.chain,
            iter: best.iter,
        },
        projection: project_matrix(&pw)?,
    })
}

/// Integrated score and co-clustering curve of a subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpcpResponse {
    pub subset: Vec<String>,
    pub ipcp: f64,
    pub pcp: Vec<(f64, f64)>,
}

pub fn query_ipcp(ts: &PosteriorTreeSet, subset: &[String]) -> Result<IpcpResponse> {
    if subset.len() < 2 {
        return Err(CliError::Usage(format!("a subset needs at least 2 labels, got {}", subset.len())));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = subset.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(CliError::Usage(format!("label `{dup}` repeats in the subset")));
    }
    if let Some(unknown) = subset.iter().find(|l| !ts.labels().contains(l)) {
        return Err(CliError::NotFound(format!("label `{unknown}`")));
    }
    Ok(IpcpResponse {
        subset: subset.to_vec(),
        ipcp: ipcp(ts, subset)?,
        pcp: pcp_curve(ts, subset)?.breakpoints,
    })
}

/// A verified run with its trees and summaries in memory.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub trees: PosteriorTreeSet,
    pub summaries: RunSummaries,
}

impl LoadedRun {
    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, dir) = RunManifest::load(path)?;
        let trees = read_trees(&manifest.artifact_path(&dir, "trees")?)?;
        let summaries = read_json(&manifest.artifact_path(&dir, "summaries")?)?;
        Ok(Self { dir, manifest, trees, summaries })
    }
}
