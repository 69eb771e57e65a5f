//! Likelihood and covariance checked against computations that never form
//! the leaf covariance matrix.

use ddtrx_core::generate::sample_tree;
use ddtrx_core::tree::{build_cov, log_likelihood};
use ddtrx_core::{DataMatrix, NodeId, RngSeed, Tree};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn random_tree(n: usize, c: f64, seed: u64) -> Option<Tree> {
    let tree = sample_tree(n, c, &mut RngSeed(seed).rng()).ok()?;
    // keep every branch long enough for the oracle to be well conditioned
    let ok = (1..tree.len()).all(|i| {
        let v = NodeId(i);
        tree.time(v) - tree.time(tree.parent(v).unwrap()) > 1e-6
    });
    ok.then_some(tree)
}

fn random_data(tree: &Tree, j: usize, seed: u64) -> DataMatrix {
    let mut rng = RngSeed(seed).substream(7);
    let labels = tree.leaf_labels();
    let rows: Vec<Vec<f64>> = labels.iter().map(|_| (0..j).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    DataMatrix::from_rows(labels, &rows).unwrap()
}

// Partial likelihood of the data below `v` as a function of the value at `v`:
// `exp(log_k) * N(mean; value, var)` per column.
struct Message {
    mean: Vec<f64>,
    var: f64,
    log_k: f64,
}

fn normal_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + x * x / var)
}

fn prune(tree: &Tree, v: NodeId, data: &DataMatrix, sigma2: f64) -> Message {
    if tree.is_leaf(v) {
        let label = tree.label(v).unwrap();
        let row = data.row_labels().iter().position(|l| l == label).unwrap();
        return Message { mean: data.row(row), var: 0.0, log_k: 0.0 };
    }
    let kids = tree.children(v);
    let mut msgs = kids.iter().map(|&c| {
        let m = prune(tree, c, data, sigma2);
        let b = tree.time(c) - tree.time(v);
        Message { var: m.var + sigma2 * b, ..m }
    });
    let mut acc = msgs.next().unwrap();
    for m in msgs {
        // merge two subtrees: integrate the shared parent value
        let s = acc.var + m.var;
        let mut log_k = acc.log_k + m.log_k;
        let mut mean = Vec::with_capacity(acc.mean.len());
        for (a, b) in acc.mean.iter().zip(&m.mean) {
            log_k += normal_logpdf(a - b, s);
            mean.push((a * m.var + b * acc.var) / s);
        }
        acc = Message { mean, var: acc.var * m.var / s, log_k };
    }
    acc
}

fn pruning_log_likelihood(tree: &Tree, data: &DataMatrix, sigma2: f64) -> f64 {
    let top = tree.root_child();
    let m = prune(tree, top, data, sigma2);
    let var = m.var + sigma2 * tree.time(top);
    m.log_k + m.mean.iter().map(|&x| normal_logpdf(x, var)).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_matches_pruning(n in 2usize..=8, j in 1usize..=4, c in 1.0f64..4.0, sigma2 in 0.2f64..3.0, seed in any::<u64>()) {
        let tree = random_tree(n, c, seed);
        prop_assume!(tree.is_some());
        let tree = tree.unwrap();
        let data = random_data(&tree, j, seed);
        let got = log_likelihood(&data, &tree, sigma2).unwrap();
        let want = pruning_log_likelihood(&tree, &data, sigma2);
        prop_assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn covariance_is_sum_of_shared_branches(n in 2usize..=10, c in 0.5f64..4.0, seed in any::<u64>()) {
        let tree = sample_tree(n, c, &mut RngSeed(seed).rng()).unwrap();
        let cov = build_cov(&tree);
        let order = cov.leaf_order().to_vec();
        let pos = |id: NodeId| order.iter().position(|l| l == tree.label(id).unwrap()).unwrap();
        let mut want = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 1..tree.len() {
            let v = NodeId(i);
            let b = tree.time(v) - tree.time(tree.parent(v).unwrap());
            let below: Vec<usize> = tree.leaves_below(v).into_iter().map(pos).collect();
            for &a in &below {
                for &z in &below {
                    want[(a, z)] += b;
                }
            }
        }
        for (g, w) in cov.entries().iter().zip(want.iter()) {
            prop_assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn triple_mrca_is_min_of_pairs(n in 3usize..=10, c in 0.5f64..4.0, seed in any::<u64>(), pick in any::<[u16; 3]>()) {
        let tree = sample_tree(n, c, &mut RngSeed(seed).rng()).unwrap();
        let labels = tree.leaf_labels();
        let mut idx: Vec<usize> = pick.iter().map(|&p| p as usize % n).collect();
        idx.sort_unstable();
        idx.dedup();
        prop_assume!(idx.len() == 3);
        let l: Vec<&str> = idx.iter().map(|&i| labels[i].as_str()).collect();
        let triple = tree.mrca_time(&l).unwrap();
        let pairs = [
            tree.mrca_time(&[l[0], l[1]]).unwrap(),
            tree.mrca_time(&[l[0], l[2]]).unwrap(),
            tree.mrca_time(&[l[1], l[2]]).unwrap(),
        ];
        prop_assert_eq!(triple, pairs.iter().copied().fold(f64::INFINITY, f64::min));
    }
}
