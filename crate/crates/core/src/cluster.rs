//! Ward agglomerative clustering and its conversion to a diffusion tree.

use nalgebra::DMatrix;

use crate::data::DataMatrix;
use crate::error::{invalid, Result};
use crate::tree::{Node, NodeId, Tree};

/// One agglomeration step. Clusters `0..n` are the observations, step `k`
/// creates cluster `n + k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Height at which each observation first joins another cluster.
    pub fn leaf_merge_heights(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.n];
        for m in &self.merges {
            for x in [m.a, m.b] {
                if x < self.n {
                    out[x] = m.height;
                }
            }
        }
        out
    }
}

/// Euclidean distances between the rows of `x`.
pub fn row_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in (i + 1)..n {
            let v = (x.row(i) - x.row(k)).norm();
            d[(i, k)] = v;
            d[(k, i)] = v;
        }
    }
    d
}

/// Ward's minimum-variance linkage on a Euclidean distance matrix, updating
/// squared distances by Lance-Williams and reporting heights on the distance
/// scale. Ties merge the lowest-numbered pair.
pub fn ward(dist: &DMatrix<f64>) -> Result<Dendrogram> {
    let n = dist.nrows();
    if dist.ncols() != n || n < 2 {
        return invalid(format!("ward needs a square matrix of size at least 2, got {}x{}", n, dist.ncols()));
    }
    let mut d2 = dist.map(|v| v * v);
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut active: Vec<bool> = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && d2[(i, j)] < best.2 {
                    best = (i, j, d2[(i, j)]);
                }
            }
        }
        let (i, j, dij) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((ni + nk) * d2[(i, k)] + (nj + nk) * d2[(j, k)] - nk * dij) / (ni + nj + nk);
            d2[(i, k)] = v;
            d2[(k, i)] = v;
        }
        let (a, b) = (id[i].min(id[j]), id[i].max(id[j]));
        size[i] += size[j];
        active[j] = false;
        id[i] = n + step;
        merges.push(Merge { a, b, height: dij.max(0.0).sqrt(), size: size[i] });
    }
    Ok(Dendrogram { n, merges })
}

/// Ward tree of the data rows with heights mapped to divergence times by
/// `t = 1 - h^2 / (2 J sigma2)`, the inverse of the expected squared distance
/// between two leaves diverging at `t`. Times are then forced strictly
/// increasing from the root: a node whose mapped time does not exceed its
/// parent's time `lo` gets `lo + 0.05 (1 - lo)`, one at or above 1 gets
/// `lo + 0.95 (1 - lo)`.
pub fn ward_tree(data: &DataMatrix, sigma2: f64) -> Result<Tree> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return invalid(format!("variance scale must be positive, got {sigma2}"));
    }
    let n = data.rows();
    let dend = ward(&row_distances(data.values()))?;
    let scale = 2.0 * data.cols() as f64 * sigma2;

    // node ids: 0 root, 1..=n leaves, n + 1 + k for merge k
    let mut nodes: Vec<Node> = Vec::with_capacity(2 * n);
    nodes.push(Node::internal(0.0));
    for l in data.row_labels() {
        nodes.push(Node::leaf(l.clone()));
    }
    let node_of = |cluster: usize| cluster + 1;
    for m in &dend.merges {
        let mut v = Node::internal(1.0 - m.height * m.height / scale);
        v.children = vec![NodeId(node_of(m.a)), NodeId(node_of(m.b))];
        nodes.push(v);
    }
    let top = nodes.len() - 1;
    nodes[0].children = vec![NodeId(top)];

    // fix times top-down; merges are listed bottom-up
    let mut stack = vec![(top, 0.0f64)];
    while let Some((v, lo)) = stack.pop() {
        if nodes[v].children.is_empty() {
            continue;
        }
        let raw = nodes[v].time;
        let t = if !raw.is_finite() || raw <= lo {
            lo + 0.05 * (1.0 - lo)
        } else if raw >= 1.0 - 1e-9 {
            lo + 0.95 * (1.0 - lo)
        } else {
            raw
        };
        nodes[v].time = t;
        for &c in &nodes[v].children.clone() {
            stack.push((c.0, t));
        }
    }
    Tree::from_nodes(nodes, NodeId(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(rows: &[Vec<f64>]) -> DataMatrix {
        let labels = (0..rows.len()).map(|i| format!("r{i}")).collect();
        DataMatrix::from_rows(labels, rows).unwrap()
    }

    #[test]
    fn equilateral_merges_at_one() {
        let mut d = DMatrix::from_element(3, 3, 1.0);
        d.fill_diagonal(0.0);
        let dend = ward(&d).unwrap();
        assert_eq!(dend.merges.len(), 2);
        for h in dend.leaf_merge_heights() {
            assert!((h - 1.0).abs() < 1e-12);
        }
        assert_eq!((dend.merges[0].a, dend.merges[0].b), (0, 1));
    }

    #[test]
    fn ward_on_line_points() {
        // points 0, 1, 5 on a line: {0,1} at 1, then Ward distance
        // sqrt((2 * 25 + 2 * 16 - 1) / 3)
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 5.0]);
        let dend = ward(&row_distances(&x)).unwrap();
        assert!((dend.merges[0].height - 1.0).abs() < 1e-12);
        let expected = ((2.0 * 25.0 + 2.0 * 16.0 - 1.0) / 3.0f64).sqrt();
        assert!((dend.merges[1].height - expected).abs() < 1e-12);
        // equals sqrt(2 n_a n_b / (n_a + n_b)) times the centroid distance
        let centroid = (2.0 * 2.0 / 3.0f64).sqrt() * 4.5;
        assert!((expected - centroid).abs() < 1e-12);
        assert_eq!(dend.merges[1].size, 3);
    }

    #[test]
    fn ward_tree_is_valid_and_nests_close_rows() {
        let d = dm(&[vec![0.0, 0.1], vec![0.05, 0.1], vec![3.0, 3.0], vec![3.1, 2.9], vec![3.0, 3.0]]);
        let t = ward_tree(&d, 1.0).unwrap();
        assert_eq!(t.n_leaves(), 5);
        let clusters = t.clusters();
        assert!(clusters.contains(&vec!["r0".to_string(), "r1".to_string()]));
        assert!(clusters.contains(&vec!["r2".to_string(), "r3".to_string(), "r4".to_string()]));
    }
}
