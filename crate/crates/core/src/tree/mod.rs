//! Rooted binary trees with divergence times in `[0, 1]`.
//!
//! The root sits at time 0 with a single child, every other internal node has
//! exactly two children and leaves sit at time 1. Times strictly increase from
//! the root to every leaf. Node storage is normalized to preorder so that two
//! trees with the same shape, child order, times and labels compare equal.

mod cov;
mod density;
pub(crate) mod newick;

use std::collections::{HashMap, HashSet};

pub use cov::{build_cov, build_cov_ordered, validate_ultrametric, TreeCov, UltrametricReport, Violation};
pub use density::{harmonic_j, log_likelihood, log_tree_prior, log_topology_factor};
pub use newick::{parse_newick, serialize_newick, NEWICK_DEPTH_TOL};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub time: f64,
    pub label: Option<String>,
}

impl Node {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self { parent: None, children: Vec::new(), time: 1.0, label: Some(label.into()) }
    }

    pub fn internal(time: f64) -> Self {
        Self { parent: None, children: Vec::new(), time, label: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    // leaves below each node, indexed by node id
    leaf_counts: Vec<usize>,
    leaves: Vec<NodeId>,
}

impl Tree {
    /// Validates the node arena and normalizes it to preorder. Parent links are
    /// recomputed from child lists, so callers only need to get `children`
    /// right. Nodes unreachable from `root` are an error.
    pub fn from_nodes(nodes: Vec<Node>, root: NodeId) -> Result<Self> {
        Self::from_nodes_mapped(nodes, root).map(|(t, _)| t)
    }

    /// As [`Tree::from_nodes`], also returning the new id of every input node.
    pub(crate) fn from_nodes_mapped(mut nodes: Vec<Node>, root: NodeId) -> Result<(Self, Vec<usize>)> {
        if root.0 >= nodes.len() {
            return Err(Error::InvalidTree("root id out of range".into()));
        }
        for n in nodes.iter_mut() {
            n.parent = None;
        }
        for p in 0..nodes.len() {
            for k in 0..nodes[p].children.len() {
                let c = nodes[p].children[k];
                if c.0 >= nodes.len() {
                    return Err(Error::InvalidTree(format!("child id {} out of range", c.0)));
                }
                if nodes[c.0].parent.is_some() || c == root {
                    return Err(Error::InvalidTree(format!("node {} has more than one parent", c.0)));
                }
                nodes[c.0].parent = Some(NodeId(p));
            }
        }

        // preorder relabel
        let mut order = Vec::with_capacity(nodes.len());
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            order.push(id);
            if order.len() > nodes.len() {
                return Err(Error::InvalidTree("cycle detected".into()));
            }
            for &c in nodes[id.0].children.iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != nodes.len() {
            return Err(Error::InvalidTree(format!(
                "{} of {} nodes are unreachable from the root",
                nodes.len() - order.len(),
                nodes.len()
            )));
        }
        let mut new_id = vec![0usize; nodes.len()];
        for (k, id) in order.iter().enumerate() {
            new_id[id.0] = k;
        }
        let mut old: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
        let nodes: Vec<Node> = order
            .iter()
            .map(|id| {
                let mut n = old[id.0].take().expect("visited once");
                n.parent = n.parent.map(|p| NodeId(new_id[p.0]));
                for c in n.children.iter_mut() {
                    *c = NodeId(new_id[c.0]);
                }
                n
            })
            .collect();

        let mut leaf_counts = vec![0usize; nodes.len()];
        for i in (0..nodes.len()).rev() {
            leaf_counts[i] = if nodes[i].children.is_empty() {
                1
            } else {
                nodes[i].children.iter().map(|c| leaf_counts[c.0]).sum()
            };
        }
        let leaves = (0..nodes.len()).filter(|&i| nodes[i].children.is_empty()).map(NodeId).collect();
        let tree = Self { nodes, leaf_counts, leaves };
        tree.validate()?;
        Ok((tree, new_id))
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTree(msg));
        let root = &self.nodes[0];
        if root.time != 0.0 {
            return bad(format!("root time must be 0, got {}", root.time));
        }
        if root.children.len() != 1 {
            return bad(format!("root must have exactly one child, has {}", root.children.len()));
        }
        let mut labels = HashSet::new();
        for (i, n) in self.nodes.iter().enumerate().skip(1) {
            let parent_time = self.nodes[n.parent.expect("non-root has parent").0].time;
            if !(n.time > parent_time) {
                return bad(format!("node {i}: time {} does not exceed parent time {parent_time}", n.time));
            }
            match n.children.len() {
                0 => {
                    if n.time != 1.0 {
                        return bad(format!("leaf {i} has time {}, expected 1", n.time));
                    }
                    match &n.label {
                        Some(l) if !l.is_empty() => {
                            if !labels.insert(l.as_str()) {
                                return bad(format!("duplicate leaf label `{l}`"));
                            }
                        }
                        _ => return bad(format!("leaf {i} has no label")),
                    }
                }
                2 => {
                    if !(n.time < 1.0) {
                        return bad(format!("internal node {i} has time {} >= 1", n.time));
                    }
                }
                k => return bad(format!("internal node {i} has {k} children, expected 2")),
            }
        }
        Ok(())
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// The root's only child: the first divergence of the tree.
    pub fn root_child(&self) -> NodeId {
        self.nodes[0].children[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn time(&self, id: NodeId) -> f64 {
        self.nodes[id.0].time
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].children.is_empty()
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.0].label.as_deref()
    }

    /// Number of leaves below (or at) `id`; the traversal count of the branch
    /// above `id`.
    pub fn leaf_count(&self, id: NodeId) -> usize {
        self.leaf_counts[id.0]
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Leaves in preorder.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaves.iter().map(|&l| self.nodes[l.0].label.clone().expect("leaf label")).collect()
    }

    /// Internal nodes other than the root, in preorder.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..self.nodes.len()).map(NodeId).filter(|&id| !self.is_leaf(id))
    }

    pub fn leaf_by_label(&self, label: &str) -> Option<NodeId> {
        self.leaves.iter().copied().find(|&l| self.label(l) == Some(label))
    }

    pub fn label_index(&self) -> HashMap<&str, NodeId> {
        self.leaves.iter().map(|&l| (self.label(l).expect("leaf label"), l)).collect()
    }

    /// Leaf ids below `id` in preorder.
    pub fn leaves_below(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.leaf_count(id));
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if self.is_leaf(n) {
                out.push(n);
            } else {
                stack.extend(self.children(n).iter().rev());
            }
        }
        out
    }

    /// Path from `id` up to the root, inclusive at both ends.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn mrca(&self, a: NodeId, b: NodeId) -> NodeId {
        let up: HashSet<NodeId> = self.ancestors(a).into_iter().collect();
        let mut cur = b;
        loop {
            if up.contains(&cur) {
                return cur;
            }
            cur = self.parent(cur).expect("nodes share the root");
        }
    }

    /// Divergence time of the most recent common ancestor of the labelled
    /// leaves.
    pub fn mrca_time<S: AsRef<str>>(&self, subset: &[S]) -> Result<f64> {
        if subset.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "subset needs at least 2 leaves, got {}",
                subset.len()
            )));
        }
        let index = self.label_index();
        let ids = subset
            .iter()
            .map(|s| index.get(s.as_ref()).copied().ok_or_else(|| Error::UnknownLabel(s.as_ref().to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = ids[0];
        for &id in &ids[1..] {
            acc = self.mrca(acc, id);
        }
        Ok(self.time(acc))
    }

    /// Topology factor counts `(l, r)` for an internal node: leaves below its
    /// two children.
    pub fn split_counts(&self, id: NodeId) -> (usize, usize) {
        let ch = self.children(id);
        (self.leaf_count(ch[0]), self.leaf_count(ch[1]))
    }

    /// Clusters (sorted leaf-label sets) of every non-root internal node except
    /// the root child, whose cluster is the full leaf set.
    pub fn clusters(&self) -> Vec<Vec<String>> {
        let rc = self.root_child();
        self.internal_nodes()
            .filter(|&id| id != rc)
            .map(|id| {
                let mut v: Vec<String> =
                    self.leaves_below(id).iter().map(|&l| self.label(l).unwrap().to_string()).collect();
                v.sort();
                v
            })
            .collect()
    }
}

/// Helpers for assembling trees by hand, mainly in tests.
pub mod build {
    use super::*;

    /// Two leaves diverging at `t`.
    pub fn cherry(a: &str, b: &str, t: f64) -> Result<Tree> {
        let nodes = vec![
            Node { children: vec![NodeId(1)], ..Node::internal(0.0) },
            Node { children: vec![NodeId(2), NodeId(3)], ..Node::internal(t) },
            Node::leaf(a),
            Node::leaf(b),
        ];
        Tree::from_nodes(nodes, NodeId(0))
    }

    /// A nested description of a tree: leaves are labels, internal nodes carry
    /// a divergence time.
    #[derive(Clone, Debug)]
    pub enum Shape {
        Leaf(String),
        Split(f64, Box<Shape>, Box<Shape>),
    }

    pub fn leaf(l: &str) -> Shape {
        Shape::Leaf(l.to_string())
    }

    pub fn split(t: f64, a: Shape, b: Shape) -> Shape {
        Shape::Split(t, Box::new(a), Box::new(b))
    }

    /// Builds a tree whose root child is `top`.
    pub fn from_shape(top: Shape) -> Result<Tree> {
        fn push(nodes: &mut Vec<Node>, s: Shape) -> NodeId {
            match s {
                Shape::Leaf(l) => {
                    nodes.push(Node::leaf(l));
                    NodeId(nodes.len() - 1)
                }
                Shape::Split(t, a, b) => {
                    nodes.push(Node::internal(t));
                    let id = NodeId(nodes.len() - 1);
                    let ca = push(nodes, *a);
                    let cb = push(nodes, *b);
                    nodes[id.0].children = vec![ca, cb];
                    id
                }
            }
        }
        let mut nodes = vec![Node::internal(0.0)];
        let top = push(&mut nodes, top);
        nodes[0].children = vec![top];
        Tree::from_nodes(nodes, NodeId(0))
    }
}

#[cfg(test)]
mod tests {
    use super::build::*;
    use super::*;

    /// Four-leaf tree: leaves 1,2 diverge at t2, leaves 3,4 at t3, the two
    /// pairs at t1.
    pub(crate) fn four_leaf(t1: f64, t2: f64, t3: f64) -> Tree {
        from_shape(split(t1, split(t2, leaf("1"), leaf("2")), split(t3, leaf("3"), leaf("4")))).unwrap()
    }

    #[test]
    fn rejects_structural_violations() {
        // leaf not at time 1
        let nodes = vec![
            Node { children: vec![NodeId(1)], ..Node::internal(0.0) },
            Node { children: vec![NodeId(2), NodeId(3)], ..Node::internal(0.5) },
            Node { time: 0.9, ..Node::leaf("a") },
            Node::leaf("b"),
        ];
        assert!(Tree::from_nodes(nodes, NodeId(0)).is_err());
        // non-increasing time
        assert!(from_shape(split(0.5, split(0.5, leaf("a"), leaf("b")), leaf("c"))).is_err());
        // duplicate labels
        assert!(cherry("a", "a", 0.3).is_err());
        // internal node at time 1
        assert!(cherry("a", "b", 1.0).is_err());
    }

    #[test]
    fn normalizes_to_preorder() {
        let nodes = vec![
            Node::leaf("b"),
            Node { children: vec![NodeId(3), NodeId(0)], ..Node::internal(0.4) },
            Node { children: vec![NodeId(1)], ..Node::internal(0.0) },
            Node::leaf("a"),
        ];
        let t = Tree::from_nodes(nodes, NodeId(2)).unwrap();
        assert_eq!(t, cherry("a", "b", 0.4).unwrap());
        assert_eq!(t.leaf_labels(), vec!["a", "b"]);
    }

    #[test]
    fn mrca_time_of_pairs_and_all_leaves() {
        let t = four_leaf(0.2, 0.5, 0.7);
        assert_eq!(t.mrca_time(&["1", "3"]).unwrap(), 0.2);
        assert_eq!(t.mrca_time(&["1", "2"]).unwrap(), 0.5);
        assert_eq!(t.mrca_time(&["4", "3"]).unwrap(), 0.7);
        assert_eq!(t.mrca_time(&["1", "2", "3", "4"]).unwrap(), t.time(t.root_child()));
        assert!(matches!(t.mrca_time(&["1"]), Err(Error::InvalidArgument(_))));
        assert!(matches!(t.mrca_time(&["1", "9"]), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn clusters_exclude_root_child() {
        let t = four_leaf(0.2, 0.5, 0.7);
        let mut c = t.clusters();
        c.sort();
        assert_eq!(c, vec![vec!["1".to_string(), "2".into()], vec!["3".into(), "4".into()]]);
    }
}
