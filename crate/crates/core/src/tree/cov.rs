use nalgebra::DMatrix;

use super::{NodeId, Tree};
use crate::error::{Error, Result};

/// Tree-structured correlation matrix: entry `(i, i')` is the time at which
/// the paths to leaves `i` and `i'` diverge, the diagonal is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeCov {
    entries: DMatrix<f64>,
    leaf_order: Vec<String>,
}

impl TreeCov {
    /// Wraps a matrix after checking it is square, matches the label count and
    /// is ultrametric within `1e-9`.
    pub fn new(entries: DMatrix<f64>, leaf_order: Vec<String>) -> Result<Self> {
        if entries.nrows() != leaf_order.len() {
            return Err(Error::Dimension(format!(
                "{}x{} matrix with {} labels",
                entries.nrows(),
                entries.ncols(),
                leaf_order.len()
            )));
        }
        let report = validate_ultrametric(&entries, 1e-9)?;
        if !report.valid {
            return Err(Error::InvalidArgument(format!("matrix is not tree-structured: {:?}", report.worst)));
        }
        Ok(Self { entries, leaf_order })
    }

    pub(crate) fn new_unchecked(entries: DMatrix<f64>, leaf_order: Vec<String>) -> Self {
        Self { entries, leaf_order }
    }

    pub fn dim(&self) -> usize {
        self.leaf_order.len()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn leaf_order(&self) -> &[String] {
        &self.leaf_order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Same matrix with rows and columns permuted to follow `order`.
    pub fn reordered<S: AsRef<str>>(&self, order: &[S]) -> Result<Self> {
        if order.len() != self.dim() {
            return Err(Error::Dimension("label count differs".into()));
        }
        let idx = order
            .iter()
            .map(|l| {
                self.leaf_order
                    .iter()
                    .position(|x| x == l.as_ref())
                    .ok_or_else(|| Error::UnknownLabel(l.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.dim();
        let entries = DMatrix::from_fn(n, n, |i, j| self.entries[(idx[i], idx[j])]);
        Ok(Self { entries, leaf_order: order.iter().map(|s| s.as_ref().to_string()).collect() })
    }
}

/// Builds the covariance with leaves in the tree's preorder.
pub fn build_cov(tree: &Tree) -> TreeCov {
    let labels = tree.leaf_labels();
    let pos: Vec<usize> = (0..tree.n_leaves()).collect();
    let entries = fill(tree, &pos_by_node(tree, &pos));
    TreeCov::new_unchecked(entries, labels)
}

/// Builds the covariance with rows in the order of `labels`, which must be a
/// permutation of the tree's leaf labels.
pub fn build_cov_ordered<S: AsRef<str>>(tree: &Tree, labels: &[S]) -> Result<TreeCov> {
    if labels.len() != tree.n_leaves() {
        return Err(Error::Dimension(format!(
            "{} labels for a tree with {} leaves",
            labels.len(),
            tree.n_leaves()
        )));
    }
    let index = tree.label_index();
    let mut pos = vec![usize::MAX; tree.n_leaves()];
    let leaf_rank: std::collections::HashMap<NodeId, usize> =
        tree.leaves().iter().enumerate().map(|(k, &l)| (l, k)).collect();
    for (row, l) in labels.iter().enumerate() {
        let id = index.get(l.as_ref()).ok_or_else(|| Error::UnknownLabel(l.as_ref().to_string()))?;
        let k = leaf_rank[id];
        if pos[k] != usize::MAX {
            return Err(Error::InvalidArgument(format!("label `{}` repeated", l.as_ref())));
        }
        pos[k] = row;
    }
    let entries = fill(tree, &pos_by_node(tree, &pos));
    Ok(TreeCov::new_unchecked(entries, labels.iter().map(|s| s.as_ref().to_string()).collect()))
}

// Matrix row of each leaf, indexed by node id.
fn pos_by_node(tree: &Tree, pos_by_leaf_rank: &[usize]) -> Vec<usize> {
    let mut out = vec![usize::MAX; tree.len()];
    for (k, &l) in tree.leaves().iter().enumerate() {
        out[l.0] = pos_by_leaf_rank[k];
    }
    out
}

fn fill(tree: &Tree, row_of: &[usize]) -> DMatrix<f64> {
    let n = tree.n_leaves();
    let mut m = DMatrix::<f64>::identity(n, n);
    // rows below each node, built bottom-up (preorder reversed visits children first)
    let mut below: Vec<Vec<usize>> = vec![Vec::new(); tree.len()];
    for i in (1..tree.len()).rev() {
        let id = NodeId(i);
        if tree.is_leaf(id) {
            below[i].push(row_of[i]);
            continue;
        }
        let ch = tree.children(id);
        let (a, b) = (std::mem::take(&mut below[ch[0].0]), std::mem::take(&mut below[ch[1].0]));
        let t = tree.time(id);
        for &x in &a {
            for &y in &b {
                m[(x, y)] = t;
                m[(y, x)] = t;
            }
        }
        let mut merged = a;
        merged.extend(b);
        below[i] = merged;
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Asymmetric { i: usize, j: usize, diff: f64 },
    OutOfRange { i: usize, j: usize, value: f64 },
    /// An off-diagonal entry exceeds the diagonal entry of its row.
    DiagonalDominance { i: usize, j: usize },
    /// `entries[i][j] < min(entries[i][k], entries[j][k])` by `excess`.
    Ultrametric { i: usize, j: usize, k: usize, excess: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct UltrametricReport {
    pub valid: bool,
    pub violations: usize,
    /// Worst ultrametric triple if any, else the first pairwise violation.
    pub worst: Option<Violation>,
}

/// Checks symmetry, the `[0, 1]` range, diagonal dominance and the ultrametric
/// inequality `m[i][j] >= min(m[i][k], m[j][k])` for all distinct triples.
pub fn validate_ultrametric(m: &DMatrix<f64>, tol: f64) -> Result<UltrametricReport> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    let mut violations = 0;
    let mut first_pair: Option<Violation> = None;
    let mut note = |v: Violation, first: &mut Option<Violation>| {
        violations += 1;
        first.get_or_insert(v);
    };
    for i in 0..n {
        let d = m[(i, i)];
        if !(-tol..=1.0 + tol).contains(&d) {
            note(Violation::OutOfRange { i, j: i, value: d }, &mut first_pair);
        }
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > tol {
                note(Violation::Asymmetric { i, j, diff: a - b }, &mut first_pair);
            }
            if !(-tol..=1.0 + tol).contains(&a) {
                note(Violation::OutOfRange { i, j, value: a }, &mut first_pair);
            }
            if a > m[(i, i)] + tol || a > m[(j, j)] + tol {
                note(Violation::DiagonalDominance { i, j }, &mut first_pair);
            }
        }
    }
    let mut worst: Option<Violation> = None;
    let mut worst_excess = tol;
    for i in 0..n {
        for j in (i + 1)..n {
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                let excess = m[(i, k)].min(m[(j, k)]) - m[(i, j)];
                if excess > tol {
                    violations += 1;
                    if excess > worst_excess {
                        worst_excess = excess;
                        worst = Some(Violation::Ultrametric { i, j, k, excess });
                    }
                }
            }
        }
    }
    Ok(UltrametricReport { valid: violations == 0, violations, worst: worst.or(first_pair) })
}
