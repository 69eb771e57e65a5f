//! Posterior summaries of sampled trees: co-clustering curves, integrated
//! scores, the MAP tree and ultrametric projection of similarity matrices.

mod projection;

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tree::{build_cov_ordered, Tree, TreeCov};

pub use projection::{
    exhaustive_projection, heuristic_projection, project_ultrametric, Hierarchy, Projection, EXHAUSTIVE_MAX_LEAVES,
};

/// One retained posterior draw.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSample {
    pub chain: usize,
    pub iter: usize,
    pub tree: Tree,
    pub log_prior: f64,
    pub log_lik: f64,
}

impl TreeSample {
    pub fn log_score(&self) -> f64 {
        self.log_prior + self.log_lik
    }
}

/// Posterior tree draws sharing one leaf set.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTreeSet {
    samples: Vec<TreeSample>,
    labels: Vec<String>,
}

impl PosteriorTreeSet {
    pub fn new(samples: Vec<TreeSample>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InsufficientSamples("no posterior trees".into()))?;
        let mut labels = first.tree.leaf_labels();
        labels.sort();
        let want: HashSet<&String> = labels.iter().collect();
        for s in &samples[1..] {
            let got = s.tree.leaf_labels();
            if got.len() != labels.len() || !got.iter().all(|l| want.contains(l)) {
                return invalid("posterior trees do not share one leaf set");
            }
        }
        Ok(Self { samples, labels })
    }

    /// Trees with zero scores, for summaries that ignore scores.
    pub fn from_trees(trees: Vec<Tree>) -> Result<Self> {
        Self::new(
            trees
                .into_iter()
                .enumerate()
                .map(|(i, tree)| TreeSample { chain: 0, iter: i, tree, log_prior: 0.0, log_lik: 0.0 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TreeSample] {
        &self.samples
    }

    /// Leaf labels in sorted order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mrca_times<S: AsRef<str>>(&self, subset: &[S]) -> Result<Vec<f64>> {
        self.samples.iter().map(|s| s.tree.mrca_time(subset)).collect()
    }
}

/// Right-continuous step function `t -> P(subset not yet diverged at t)`.
/// `breakpoints[k] = (t_k, v_k)` means the value is `v_k` from `t_k` until the
/// next breakpoint; the first breakpoint is `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcpCurve {
    pub breakpoints: Vec<(f64, f64)>,
}

impl PcpCurve {
    pub fn value(&self, t: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&(x, _)| x <= t);
        if k == 0 {
            1.0
        } else {
            self.breakpoints[k - 1].1
        }
    }

    /// Area under the curve on `[0, 1]`.
    pub fn integral(&self) -> f64 {
        let mut area = 0.0;
        for (k, &(t, v)) in self.breakpoints.iter().enumerate() {
            let end = self.breakpoints.get(k + 1).map_or(1.0, |b| b.0);
            area += v * (end - t);
        }
        area
    }
}

pub fn pcp_curve<S: AsRef<str>>(ts: &PosteriorTreeSet, subset: &[S]) -> Result<PcpCurve> {
    let mut times = ts.mrca_times(subset)?;
    times.sort_by(f64::total_cmp);
    let l = times.len();
    let mut breakpoints = vec![(0.0, 1.0)];
    let mut k = 0;
    while k < l {
        let t = times[k];
        while k < l && times[k] == t {
            k += 1;
        }
        let v = (l - k) as f64 / l as f64;
        if t == 0.0 {
            breakpoints[0].1 = v;
        } else {
            breakpoints.push((t, v));
        }
    }
    Ok(PcpCurve { breakpoints })
}

/// Integrated co-clustering probability: mean divergence time of the subset.
pub fn ipcp<S: AsRef<str>>(ts: &PosteriorTreeSet, subset: &[S]) -> Result<f64> {
    let times = ts.mrca_times(subset)?;
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

/// Mean tree covariance over the draws, rows in sorted label order.
pub fn pairwise_ipcp(ts: &PosteriorTreeSet) -> TreeCov {
    let n = ts.labels().len();
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for s in ts.samples() {
        acc += build_cov_ordered(&s.tree, ts.labels()).expect("shared leaf set").entries();
    }
    acc /= ts.len() as f64;
    TreeCov::new_unchecked(acc, ts.labels().to_vec())
}

/// Draw with the largest `log_prior + log_lik`; the earliest wins ties.
pub fn map_tree(ts: &PosteriorTreeSet) -> &TreeSample {
    let mut best = &ts.samples()[0];
    for s in &ts.samples()[1..] {
        if s.log_score() > best.log_score() {
            best = s;
        }
    }
    best
}

pub fn frobenius_tree_distance(a: &TreeCov, b: &TreeCov) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{} vs {} leaves", a.dim(), b.dim())));
    }
    if a.leaf_order() != b.leaf_order() {
        return invalid("matrices use different leaf orders");
    }
    Ok((a.entries() - b.entries()).norm())
}

/// Number of clusters present in exactly one of the two trees.
pub fn robinson_foulds(a: &Tree, b: &Tree) -> Result<usize> {
    let (mut la, mut lb) = (a.leaf_labels(), b.leaf_labels());
    la.sort();
    lb.sort();
    if la != lb {
        return invalid("trees have different leaf sets");
    }
    let ca: HashSet<Vec<String>> = a.clusters().into_iter().collect();
    let cb: HashSet<Vec<String>> = b.clusters().into_iter().collect();
    Ok(ca.symmetric_difference(&cb).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::build::*;
    use crate::tree::build_cov;

    fn three(t_ab: f64, t_top: f64) -> Tree {
        from_shape(split(t_top, split(t_ab, leaf("a"), leaf("b")), leaf("c"))).unwrap()
    }

    #[test]
    fn single_tree_identities() {
        let ts = PosteriorTreeSet::from_trees(vec![three(0.6, 0.2)]).unwrap();
        assert_eq!(ipcp(&ts, &["a", "b"]).unwrap(), 0.6);
        let curve = pcp_curve(&ts, &["a", "b"]).unwrap();
        assert_eq!(curve.breakpoints, vec![(0.0, 1.0), (0.6, 0.0)]);
        assert_eq!(curve.value(0.59), 1.0);
        assert_eq!(curve.value(0.6), 0.0);
        assert_eq!(pairwise_ipcp(&ts), build_cov(&ts.samples()[0].tree).reordered(&["a", "b", "c"]).unwrap());
    }

    #[test]
    fn three_tree_curve() {
        let ts = PosteriorTreeSet::from_trees(vec![three(0.5, 0.1), three(0.7, 0.2), three(0.3, 0.25)]).unwrap();
        let curve = pcp_curve(&ts, &["a", "b"]).unwrap();
        assert_eq!(curve.breakpoints[1], (0.3, 2.0 / 3.0));
        assert_eq!(curve.breakpoints.last().unwrap().1, 0.0);
        let i = ipcp(&ts, &["a", "b"]).unwrap();
        assert!((curve.integral() - i).abs() < 1e-12);
        assert!(ipcp(&ts, &["a", "b", "c"]).unwrap() <= i);
        assert!(matches!(ipcp(&ts, &["a", "zz"]), Err(Error::UnknownLabel(_))));
        assert!(ipcp(&ts, &["a"]).is_err());
    }

    #[test]
    fn map_prefers_earliest_on_ties() {
        let mut samples: Vec<TreeSample> = (0..3)
            .map(|i| TreeSample { chain: 0, iter: i, tree: three(0.5, 0.1), log_prior: -1.0, log_lik: -2.0 })
            .collect();
        samples[2].log_lik = 0.0;
        samples[1].log_lik = 0.0;
        let ts = PosteriorTreeSet::new(samples).unwrap();
        assert_eq!(map_tree(&ts).iter, 1);
    }

    #[test]
    fn mixed_leaf_sets_rejected() {
        let other = from_shape(split(0.1, split(0.5, leaf("a"), leaf("b")), leaf("d"))).unwrap();
        assert!(PosteriorTreeSet::from_trees(vec![three(0.5, 0.1), other]).is_err());
        assert!(PosteriorTreeSet::from_trees(vec![]).is_err());
    }

    #[test]
    fn averaged_matrix_can_break_ultrametricity() {
        let t1 = from_shape(split(0.1, split(0.9, leaf("a"), leaf("b")), leaf("c"))).unwrap();
        let t2 = from_shape(split(0.1, split(0.9, leaf("b"), leaf("c")), leaf("a"))).unwrap();
        let avg = pairwise_ipcp(&PosteriorTreeSet::from_trees(vec![t1.clone(), t2.clone()]).unwrap());
        // ab = bc = 0.5, ac = 0.1 violates ac >= min(ab, bc)
        assert!(!crate::tree::validate_ultrametric(avg.entries(), 1e-12).unwrap().valid);
        assert_eq!(robinson_foulds(&t1, &t2).unwrap(), 2);
        assert_eq!(robinson_foulds(&t1, &t1).unwrap(), 0);
    }

    #[test]
    fn frobenius_examples() {
        let a = build_cov(&three(0.5, 0.1));
        let b = build_cov(&three(0.7, 0.1));
        assert_eq!(frobenius_tree_distance(&a, &a).unwrap(), 0.0);
        assert!((frobenius_tree_distance(&a, &b).unwrap() - 0.2 * 2f64.sqrt()).abs() < 1e-12);
        let c = a.reordered(&["c", "a", "b"]).unwrap();
        assert!(frobenius_tree_distance(&a, &c).is_err());
    }
}
