//! Forward simulation of the diffusion tree: sequential path addition for the
//! topology and divergence times, Brownian diffusion for the responses.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{invalid, Error, Result};
use crate::tree::{Node, NodeId, Tree};

/// Root seed of a reproducible computation. Independent work items draw from
/// numbered substreams, so results do not depend on how items are sharded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn substream(self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(index);
        rng
    }
}

/// Inverse-CDF draw of the first divergence after `t_start` on a branch
/// traversed by `m` earlier paths: `1 - (1 - t_start) u^{m/c}`.
pub fn next_divergence_time(t_start: f64, m: usize, c: f64, u: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t_start) {
        return invalid(format!("start time must lie in [0, 1), got {t_start}"));
    }
    if m == 0 {
        return invalid("traversal count must be positive");
    }
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("divergence parameter must be positive, got {c}"));
    }
    if !(u > 0.0 && u < 1.0) {
        return invalid(format!("uniform draw must lie in (0, 1), got {u}"));
    }
    Ok(divergence_time(t_start, m, c, u))
}

// Largest f64 below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

fn divergence_time(t_start: f64, m: usize, c: f64, u: f64) -> f64 {
    1.0 - (1.0 - t_start) * u.powf(m as f64 / c)
}

/// Gamma distribution by shape and rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub shape: f64,
    pub rate: f64,
}

impl GammaSpec {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return invalid(format!("gamma shape and rate must be positive, got ({shape}, {rate})"));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate).expect("validated gamma parameters").sample(rng)
    }
}

/// A simulated tree with the locations of its internal nodes and leaves.
#[derive(Clone, Debug)]
pub struct DdtSample {
    pub tree: Tree,
    /// One row per non-root internal node, in the tree's preorder.
    pub internal_locations: DMatrix<f64>,
    pub data: DataMatrix,
}

/// Label of the `k`-th leaf (zero based) of a generated tree.
pub fn leaf_label(k: usize) -> String {
    format!("T{}", k + 1)
}

// Arena used while growing a tree. Times may round to 1 for tiny `c`; the
// arena still diffuses correctly, only conversion to `Tree` rejects it.
struct Growth {
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    time: Vec<f64>,
    count: Vec<usize>,
    leaf: Vec<Option<usize>>,
}

const ROOT: usize = 0;

impl Growth {
    fn push(&mut self, parent: usize, time: f64, count: usize, leaf: Option<usize>) -> usize {
        self.parent.push(parent);
        self.children.push(Vec::new());
        self.time.push(time);
        self.count.push(count);
        self.leaf.push(leaf);
        self.time.len() - 1
    }

    fn grow<R: Rng + ?Sized>(n_leaves: usize, c: f64, rng: &mut R) -> Self {
        let mut g = Growth { parent: vec![], children: vec![], time: vec![], count: vec![], leaf: vec![] };
        g.push(ROOT, 0.0, n_leaves, None);
        let first = g.push(ROOT, 1.0, 1, Some(0));
        g.children[ROOT].push(first);
        g.count[ROOT] = 1;
        for k in 1..n_leaves {
            g.count[ROOT] += 1;
            let mut top = ROOT;
            let mut below = g.children[ROOT][0];
            loop {
                let m = g.count[below];
                // ties with the branch start have probability zero unless
                // the start already rounds to 1
                let mut t = g.time[top];
                for _ in 0..64 {
                    let u: f64 = rng.random();
                    let draw = divergence_time(g.time[top], m, c, u);
                    if draw > g.time[top] {
                        t = draw;
                        break;
                    }
                }
                let is_leaf = g.children[below].is_empty();
                if is_leaf || t < g.time[below] {
                    let mid = g.push(top, t.min(BELOW_ONE), m + 1, None);
                    let new_leaf = g.push(mid, 1.0, 1, Some(k));
                    let slot = g.children[top].iter().position(|&x| x == below).expect("child of top");
                    g.children[top][slot] = mid;
                    g.parent[below] = mid;
                    g.children[mid] = vec![below, new_leaf];
                    break;
                }
                g.count[below] += 1;
                let ch = &g.children[below];
                let (a, b) = (ch[0], ch[1]);
                let pick = rng.random_range(0..g.count[a] + g.count[b]);
                top = below;
                below = if pick < g.count[a] { a } else { b };
            }
        }
        g
    }

    fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.time.len());
        let mut stack = vec![ROOT];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(self.children[v].iter().rev());
        }
        order
    }

    fn into_tree(self) -> Result<Tree> {
        let nodes = (0..self.time.len())
            .map(|i| Node {
                parent: None,
                children: self.children[i].iter().map(|&c| NodeId(c)).collect(),
                time: self.time[i],
                label: self.leaf[i].map(leaf_label),
            })
            .collect();
        Tree::from_nodes(nodes, NodeId(ROOT)).map_err(|e| match e {
            Error::InvalidTree(msg) => Error::InvalidTree(format!("{msg} (divergence time not representable below 1)")),
            other => other,
        })
    }

    // Leaf locations ordered by leaf index.
    fn diffuse_leaves<R: Rng + ?Sized>(&self, sigma2: f64, n_cols: usize, rng: &mut R) -> DMatrix<f64> {
        let n_leaves = self.leaf.iter().filter(|l| l.is_some()).count();
        let mut loc = DMatrix::<f64>::zeros(self.time.len(), n_cols);
        let mut out = DMatrix::<f64>::zeros(n_leaves, n_cols);
        for v in self.preorder().into_iter().skip(1) {
            let p = self.parent[v];
            let sd = (sigma2 * (self.time[v] - self.time[p])).sqrt();
            for j in 0..n_cols {
                let z: f64 = StandardNormal.sample(rng);
                loc[(v, j)] = loc[(p, j)] + sd * z;
            }
            if let Some(k) = self.leaf[v] {
                out.set_row(k, &loc.row(v));
            }
        }
        out
    }
}

fn check_leaves(n_leaves: usize, c: f64) -> Result<()> {
    if n_leaves < 2 {
        return invalid(format!("need at least 2 leaves, got {n_leaves}"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("divergence parameter must be positive, got {c}"));
    }
    Ok(())
}

/// Grows a tree with leaves `T1..TI` by sequential path addition.
///
/// Divergence times that round to 1 are stored as the largest float below 1.
/// Fails only when two nested divergences both land there, which requires a
/// very small `c`.
pub fn sample_tree<R: Rng + ?Sized>(n_leaves: usize, c: f64, rng: &mut R) -> Result<Tree> {
    check_leaves(n_leaves, c)?;
    Growth::grow(n_leaves, c, rng).into_tree()
}

/// Diffuses `n_cols` independent Brownian coordinates down the tree. Data
/// rows follow the leaf labels in natural order (`T2` before `T10`).
pub fn diffuse<R: Rng + ?Sized>(tree: &Tree, sigma2: f64, n_cols: usize, rng: &mut R) -> Result<DdtSample> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return invalid(format!("diffusion variance must be positive, got {sigma2}"));
    }
    if n_cols == 0 {
        return invalid("need at least one column");
    }
    let mut loc = DMatrix::<f64>::zeros(tree.len(), n_cols);
    for i in 1..tree.len() {
        let v = NodeId(i);
        let p = tree.parent(v).expect("non-root");
        let sd = (sigma2 * (tree.time(v) - tree.time(p))).sqrt();
        for j in 0..n_cols {
            let z: f64 = StandardNormal.sample(rng);
            loc[(i, j)] = loc[(p.0, j)] + sd * z;
        }
    }
    let internal: Vec<NodeId> = tree.internal_nodes().collect();
    let internal_locations = DMatrix::from_fn(internal.len(), n_cols, |r, j| loc[(internal[r].0, j)]);
    let mut leaves: Vec<NodeId> = tree.leaves().to_vec();
    leaves.sort_by(|&a, &b| natural_cmp(tree.label(a).unwrap_or(""), tree.label(b).unwrap_or("")));
    let values = DMatrix::from_fn(leaves.len(), n_cols, |r, j| loc[(leaves[r].0, j)]);
    let labels = leaves.iter().map(|&l| tree.label(l).unwrap_or("").to_string()).collect();
    let cols = (1..=n_cols).map(|j| format!("P{j}")).collect();
    Ok(DdtSample { tree: tree.clone(), internal_locations, data: DataMatrix::new(values, labels, cols)? })
}

/// Orders strings by their non-digit prefix, then by a trailing integer.
pub fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        (&s[..cut], s[cut..].parse().ok())
    }
    split(a).cmp(&split(b)).then_with(|| a.cmp(b))
}

/// Prior and shape of the synthetic datasets used by ABC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_leaves: usize,
    pub n_cols: usize,
    /// Prior of `c`.
    pub prior_c: GammaSpec,
    /// Prior of the precision `1 / sigma2`.
    pub prior_sigma2_inv: GammaSpec,
}

/// One prior draw paired with a dataset simulated from it.
#[derive(Clone, Debug)]
pub struct SyntheticDraw {
    pub index: u64,
    pub c: f64,
    pub sigma2: f64,
    pub data: DataMatrix,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        check_leaves(self.n_leaves, 1.0)?;
        if self.n_cols == 0 {
            return invalid("need at least one column");
        }
        GammaSpec::new(self.prior_c.shape, self.prior_c.rate)?;
        GammaSpec::new(self.prior_sigma2_inv.shape, self.prior_sigma2_inv.rate)?;
        Ok(())
    }

    /// Draw number `index` of the stream rooted at `seed`.
    pub fn draw(&self, seed: RngSeed, index: u64) -> SyntheticDraw {
        let mut rng = seed.substream(index);
        let c = self.prior_c.sample(&mut rng);
        let sigma2 = 1.0 / self.prior_sigma2_inv.sample(&mut rng);
        let data = simulate_data(self.n_leaves, self.n_cols, c, sigma2, &mut rng);
        SyntheticDraw { index, c, sigma2, data }
    }
}

/// Simulates a dataset at fixed parameters without materializing the tree.
/// Never fails for valid `c`, `sigma2`.
pub fn simulate_data<R: Rng + ?Sized>(n_leaves: usize, n_cols: usize, c: f64, sigma2: f64, rng: &mut R) -> DataMatrix {
    let g = Growth::grow(n_leaves, c, rng);
    let values = g.diffuse_leaves(sigma2, n_cols, rng);
    let labels = (0..n_leaves).map(leaf_label).collect();
    let cols = (1..=n_cols).map(|j| format!("P{j}")).collect();
    DataMatrix::new(values, labels, cols).expect("simulated values are finite")
}

/// Lazily yields draws `range` of the synthetic stream. Any partition of the
/// index range into shards reproduces the same draws.
pub fn generate_synthetic(
    spec: SyntheticSpec,
    range: Range<u64>,
    seed: RngSeed,
) -> Result<impl Iterator<Item = SyntheticDraw>> {
    spec.validate()?;
    Ok(range.map(move |i| spec.draw(seed, i)))
}
