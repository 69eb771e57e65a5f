use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::tree::newick::quote_label;
use crate::tree::TreeCov;

/// Largest size solved by exhaustive search over topologies.
pub const EXHAUSTIVE_MAX_LEAVES: usize = 7;

/// A rooted hierarchy whose internal nodes may have more than two children.
/// Node 0 is a root at level 0 with a single child; leaves sit at level 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    pub levels: Vec<f64>,
    pub children: Vec<Vec<usize>>,
    pub labels: Vec<Option<String>>,
}

impl Hierarchy {
    pub fn to_newick(&self) -> String {
        fn write(h: &Hierarchy, v: usize, parent_level: f64, out: &mut String) {
            if h.children[v].is_empty() {
                out.push_str(&quote_label(h.labels[v].as_deref().unwrap_or("")));
            } else {
                out.push('(');
                for (k, &c) in h.children[v].iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    write(h, c, h.levels[v], out);
                }
                out.push(')');
            }
            out.push(':');
            out.push_str(&format!("{}", h.levels[v] - parent_level));
        }
        let mut out = String::from("(");
        write(self, self.children[0][0], 0.0, &mut out);
        out.push_str(");");
        out
    }

    /// Number of internal nodes below the root.
    pub fn n_internal(&self) -> usize {
        (1..self.levels.len()).filter(|&v| !self.children[v].is_empty()).count()
    }
}

/// Nearest ultrametric matrix found and its hierarchy.
#[derive(Clone, Debug)]
pub struct Projection {
    pub cov: TreeCov,
    pub hierarchy: Hierarchy,
    /// Frobenius distance between the input and the projection.
    pub distance: f64,
    /// Whether the search was exhaustive.
    pub exact: bool,
}

fn check_input(m: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n || labels.len() != n {
        return Err(Error::Dimension(format!("{}x{} matrix with {} labels", n, m.ncols(), labels.len())));
    }
    if n < 2 {
        return invalid("projection needs at least 2 leaves");
    }
    for i in 0..n {
        if (m[(i, i)] - 1.0).abs() > 1e-9 {
            return invalid(format!("diagonal entry {i} is {}, expected 1", m[(i, i)]));
        }
        for j in (i + 1)..n {
            let v = m[(i, j)];
            if (v - m[(j, i)]).abs() > 1e-9 {
                return invalid(format!("matrix is not symmetric at ({i}, {j})"));
            }
            if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return invalid(format!("entry ({i}, {j}) = {v} lies outside [0, 1]"));
            }
        }
    }
    Ok(())
}

/// Nearest tree-structured matrix in Frobenius norm: exhaustive and exact up
/// to [`EXHAUSTIVE_MAX_LEAVES`] leaves, average linkage with level pooling
/// above.
pub fn project_ultrametric(m: &DMatrix<f64>, labels: &[String]) -> Result<Projection> {
    if m.nrows() <= EXHAUSTIVE_MAX_LEAVES {
        exhaustive_projection(m, labels)
    } else {
        heuristic_projection(m, labels)
    }
}

// Binary topology over leaves 0..n: internal nodes n..2n-1, parent[top] = NONE.
#[derive(Clone)]
struct Topology {
    parent: Vec<usize>,
    children: Vec<[usize; 2]>,
    top: usize,
}

const NONE: usize = usize::MAX;

fn enumerate_topologies(n: usize) -> Vec<Topology> {
    let size = 2 * n - 1;
    let mut start = Topology { parent: vec![NONE; size], children: vec![[NONE; 2]; size], top: n };
    start.parent[0] = n;
    start.parent[1] = n;
    start.children[n] = [0, 1];
    let mut out = Vec::new();
    fn insert(t: &Topology, leaf: usize, n: usize, out: &mut Vec<Topology>) {
        if leaf == n {
            out.push(t.clone());
            return;
        }
        let next_internal = n + leaf - 1;
        let mut existing: Vec<usize> = (0..leaf).collect();
        existing.extend(n..next_internal);
        for e in existing {
            let mut t2 = t.clone();
            let up = t2.parent[e];
            t2.parent[e] = next_internal;
            t2.parent[leaf] = next_internal;
            t2.children[next_internal] = [e, leaf];
            t2.parent[next_internal] = up;
            if up == NONE {
                t2.top = next_internal;
            } else {
                let slot = if t2.children[up][0] == e { 0 } else { 1 };
                t2.children[up][slot] = next_internal;
            }
            insert(&t2, leaf + 1, n, out);
        }
    }
    insert(&start, 2, n, &mut out);
    out
}

// Per-internal-node sums of the entries whose most recent common ancestor is
// that node, with pair counts.
fn node_sums(t: &Topology, m: &DMatrix<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let size = 2 * n - 1;
    let mut leaves: Vec<Vec<usize>> = vec![Vec::new(); size];
    for (i, l) in leaves.iter_mut().enumerate().take(n) {
        l.push(i);
    }
    let mut sum = vec![0.0; size];
    let mut cnt = vec![0.0; size];
    for v in post_order(t, n) {
        if v < n {
            continue;
        }
        let [a, b] = t.children[v];
        for &i in &leaves[a] {
            for &j in &leaves[b] {
                sum[v] += m[(i, j)];
            }
        }
        cnt[v] = (leaves[a].len() * leaves[b].len()) as f64;
        let mut merged = leaves[a].clone();
        merged.extend_from_slice(&leaves[b]);
        leaves[v] = merged;
    }
    (sum, cnt)
}

fn post_order(t: &Topology, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * n - 1);
    let mut stack = vec![(t.top, false)];
    while let Some((v, done)) = stack.pop() {
        if done || v < n {
            out.push(v);
        } else {
            stack.push((v, true));
            stack.push((t.children[v][1], false));
            stack.push((t.children[v][0], false));
        }
    }
    out
}

fn find(rep: &mut [usize], v: usize) -> usize {
    let mut r = v;
    while rep[r] != r {
        r = rep[r];
    }
    let mut x = v;
    while rep[x] != r {
        let next = rep[x];
        rep[x] = r;
        x = next;
    }
    r
}

// Exact isotonic regression of node levels on a binary topology (levels must
// not decrease from parent to child), by enumerating which internal edges
// are pooled. Returns the score to maximize and the level of every node.
fn tree_isotonic_exact(t: &Topology, sum: &[f64], cnt: &[f64], n: usize) -> (f64, Vec<f64>) {
    let size = 2 * n - 1;
    let edges: Vec<usize> = (n..size).filter(|&v| t.parent[v] != NONE).collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for mask in 0u64..(1u64 << edges.len()) {
        let mut rep: Vec<usize> = (0..size).collect();
        for (k, &v) in edges.iter().enumerate() {
            if mask >> k & 1 == 1 {
                let (a, b) = (find(&mut rep, v), find(&mut rep, t.parent[v]));
                rep[a] = b;
            }
        }
        let mut bs = vec![0.0; size];
        let mut bc = vec![0.0; size];
        for v in n..size {
            let r = find(&mut rep, v);
            bs[r] += sum[v];
            bc[r] += cnt[v];
        }
        let level = |rep: &mut Vec<usize>, v: usize| {
            let r = find(rep, v);
            bs[r] / bc[r]
        };
        let feasible = edges
            .iter()
            .enumerate()
            .all(|(k, &v)| mask >> k & 1 == 1 || level(&mut rep, v) >= level(&mut rep, t.parent[v]));
        if !feasible {
            continue;
        }
        let score: f64 = (n..size).filter(|&v| find(&mut rep, v) == v).map(|v| bs[v] * bs[v] / bc[v]).sum();
        if score > best.0 + 1e-12 {
            let levels: Vec<f64> = (0..size).map(|v| if v < n { 1.0 } else { level(&mut rep, v) }).collect();
            best = (score, levels);
        }
    }
    best
}

/// Exhaustive search over all rooted binary topologies, each with its exact
/// optimal levels.
pub fn exhaustive_projection(m: &DMatrix<f64>, labels: &[String]) -> Result<Projection> {
    check_input(m, labels)?;
    let n = m.nrows();
    if n > EXHAUSTIVE_MAX_LEAVES {
        return invalid(format!("exhaustive projection is limited to {EXHAUSTIVE_MAX_LEAVES} leaves"));
    }
    let mut best: Option<(f64, Topology, Vec<f64>)> = None;
    for t in enumerate_topologies(n) {
        let (sum, cnt) = node_sums(&t, m, n);
        let (score, levels) = tree_isotonic_exact(&t, &sum, &cnt, n);
        if best.as_ref().is_none_or(|b| score > b.0 + 1e-12) {
            best = Some((score, t, levels));
        }
    }
    let (_, t, levels) = best.expect("at least one topology");
    Ok(finish(m, labels, &t, &levels, true))
}

/// Average linkage on similarities, then pooling of any child level below its
/// parent's level.
pub fn heuristic_projection(m: &DMatrix<f64>, labels: &[String]) -> Result<Projection> {
    check_input(m, labels)?;
    let n = m.nrows();
    let size = 2 * n - 1;
    let mut t = Topology { parent: vec![NONE; size], children: vec![[NONE; 2]; size], top: size - 1 };
    let mut sim = m.clone();
    let mut members: Vec<usize> = vec![1; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    for step in 0..n - 1 {
        let mut best = (NONE, NONE, f64::NEG_INFINITY);
        for i in 0..n {
            for j in (i + 1)..n {
                if active[i] && active[j] && sim[(i, j)] > best.2 {
                    best = (i, j, sim[(i, j)]);
                }
            }
        }
        let (i, j, _) = best;
        let v = n + step;
        t.children[v] = [id[i], id[j]];
        t.parent[id[i]] = v;
        t.parent[id[j]] = v;
        let (wi, wj) = (members[i] as f64, members[j] as f64);
        for k in 0..n {
            if active[k] && k != i && k != j {
                let s = (wi * sim[(i, k)] + wj * sim[(j, k)]) / (wi + wj);
                sim[(i, k)] = s;
                sim[(k, i)] = s;
            }
        }
        members[i] += members[j];
        active[j] = false;
        id[i] = v;
    }
    let (sum, cnt) = node_sums(&t, m, n);
    let mut rep: Vec<usize> = (0..size).collect();
    loop {
        let mut bs = vec![0.0; size];
        let mut bc = vec![0.0; size];
        for v in n..size {
            let r = find(&mut rep, v);
            bs[r] += sum[v];
            bc[r] += cnt[v];
        }
        let mut violated = None;
        for v in n..size {
            let p = t.parent[v];
            if p == NONE {
                continue;
            }
            let (rv, rp) = (find(&mut rep, v), find(&mut rep, p));
            if rv != rp && bs[rv] / bc[rv] < bs[rp] / bc[rp] {
                violated = Some((rv, rp));
                break;
            }
        }
        match violated {
            Some((a, b)) => rep[a] = b,
            None => {
                let levels: Vec<f64> =
                    (0..size).map(|v| if v < n { 1.0 } else { bs[find(&mut rep, v)] / bc[find(&mut rep, v)] }).collect();
                return Ok(finish(m, labels, &t, &levels, false));
            }
        }
    }
}

fn finish(m: &DMatrix<f64>, labels: &[String], t: &Topology, levels: &[f64], exact: bool) -> Projection {
    let n = labels.len();
    let mut u = DMatrix::<f64>::identity(n, n);
    let mut leaves: Vec<Vec<usize>> = vec![Vec::new(); 2 * n - 1];
    for (i, l) in leaves.iter_mut().enumerate().take(n) {
        l.push(i);
    }
    for v in post_order(t, n) {
        if v < n {
            continue;
        }
        let [a, b] = t.children[v];
        for &i in &leaves[a] {
            for &j in &leaves[b] {
                u[(i, j)] = levels[v];
                u[(j, i)] = levels[v];
            }
        }
        let mut merged = leaves[a].clone();
        merged.extend_from_slice(&leaves[b]);
        leaves[v] = merged;
    }

    // collapse nodes sharing their parent's level
    let mut hier = Hierarchy { levels: vec![0.0], children: vec![vec![]], labels: vec![None] };
    // smallest leaf index below each hierarchy node, for a stable child order
    let mut key = vec![0usize];
    let mut stack = vec![(t.top, 0usize)];
    while let Some((v, hparent)) = stack.pop() {
        if v < n {
            hier.levels.push(1.0);
            hier.children.push(vec![]);
            hier.labels.push(Some(labels[v].clone()));
            key.push(v);
            let id = hier.levels.len() - 1;
            hier.children[hparent].push(id);
            continue;
        }
        let pooled_with_parent = hparent != 0 && (levels[v] - hier.levels[hparent]).abs() <= 1e-12;
        let here = if pooled_with_parent {
            hparent
        } else {
            hier.levels.push(levels[v]);
            hier.children.push(vec![]);
            hier.labels.push(None);
            key.push(leaves[v].iter().copied().min().unwrap_or(0));
            let id = hier.levels.len() - 1;
            hier.children[hparent].push(id);
            id
        };
        stack.push((t.children[v][1], here));
        stack.push((t.children[v][0], here));
    }
    for c in hier.children.iter_mut() {
        c.sort_by_key(|&x| key[x]);
    }
    let distance = (m - &u).norm();
    Projection { cov: TreeCov::new_unchecked(u, labels.to_vec()), hierarchy: hier, distance, exact }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::validate_ultrametric;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    fn double_factorial(k: usize) -> usize {
        (1..=k).rev().step_by(2).product()
    }

    #[test]
    fn topology_counts() {
        for n in 2..=7 {
            assert_eq!(enumerate_topologies(n).len(), double_factorial(2 * n - 3).max(1), "n={n}");
        }
    }

    #[test]
    fn three_by_three_pools_smaller_entries() {
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(3, 3, &[
            1.0, 0.9, 0.2,
            0.9, 1.0, 0.4,
            0.2, 0.4, 1.0,
        ]);
        let p = project_ultrametric(&m, &labels(3)).unwrap();
        let u = p.cov.entries();
        assert!((u[(0, 1)] - 0.9).abs() < 1e-12);
        assert!((u[(0, 2)] - 0.3).abs() < 1e-12);
        assert!((u[(1, 2)] - 0.3).abs() < 1e-12);
        assert!(p.exact);
        assert!((p.distance - (2.0f64 * 0.01 * 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(p.hierarchy.to_newick(), "(((L0:0.09999999999999998,L1:0.09999999999999998):0.6,L2:0.7):0.30000000000000004);");
    }

    #[test]
    fn ultrametric_input_is_fixed_point() {
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.7, 0.2, 0.2,
            0.7, 1.0, 0.2, 0.2,
            0.2, 0.2, 1.0, 0.5,
            0.2, 0.2, 0.5, 1.0,
        ]);
        for p in [exhaustive_projection(&m, &labels(4)).unwrap(), heuristic_projection(&m, &labels(4)).unwrap()] {
            assert!(p.distance < 1e-12);
            assert_eq!(p.cov.entries(), &m);
        }
    }

    #[test]
    fn star_hierarchy_is_multifurcating() {
        let mut m = DMatrix::from_element(4, 4, 0.3);
        m.fill_diagonal(1.0);
        let p = project_ultrametric(&m, &labels(4)).unwrap();
        assert!(p.distance < 1e-12);
        assert_eq!(p.hierarchy.n_internal(), 1);
        assert_eq!(p.hierarchy.to_newick(), "((L0:0.7,L1:0.7,L2:0.7,L3:0.7):0.3);");
    }

    #[test]
    fn heuristic_output_is_ultrametric() {
        let mut rng = crate::generate::RngSeed(3).rng();
        use rand::Rng;
        for n in [4, 9, 12] {
            let mut m = DMatrix::<f64>::identity(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let v: f64 = rng.random();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let h = heuristic_projection(&m, &labels(n)).unwrap();
            assert!(validate_ultrametric(h.cov.entries(), 1e-12).unwrap().valid);
            if n <= EXHAUSTIVE_MAX_LEAVES {
                let e = exhaustive_projection(&m, &labels(n)).unwrap();
                assert!(e.distance <= h.distance + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(project_ultrametric(&m, &labels(2)).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.5, 0.5, 1.0]);
        assert!(project_ultrametric(&m, &labels(2)).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(project_ultrametric(&m, &labels(2)).is_err());
    }
}
