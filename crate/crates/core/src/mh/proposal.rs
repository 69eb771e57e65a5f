use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::tree::{Node, NodeId, Tree};

/// A point on a branch: the node below the branch and a time strictly inside
/// the branch's interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttachPoint {
    pub branch: NodeId,
    pub time: f64,
}

/// A subtree cut out of a tree, with the remainder and the detach point.
#[derive(Clone, Debug)]
pub struct Detached {
    /// Nodes of the subtree; index 0 is its root, child ids are local.
    pub subtree: Vec<Node>,
    pub remainder: Tree,
    /// Branch of the former sibling in the remainder, at the former parent's time.
    pub point: AttachPoint,
    /// Position of the subtree among its former parent's children.
    pub slot: usize,
}

impl Detached {
    pub fn subtree_time(&self) -> f64 {
        self.subtree[0].time
    }
}

/// Nodes that can be detached: all but the root and the root's child.
pub fn detach_candidates(tree: &Tree) -> Vec<NodeId> {
    let rc = tree.root_child();
    (1..tree.len()).map(NodeId).filter(|&id| id != rc).collect()
}

/// Detaches a uniformly chosen eligible node.
pub fn detach<R: Rng + ?Sized>(tree: &Tree, rng: &mut R) -> Result<Detached> {
    if tree.n_leaves() < 3 {
        return invalid(format!("detach needs at least 3 leaves, tree has {}", tree.n_leaves()));
    }
    let cands = detach_candidates(tree);
    detach_at(tree, cands[rng.random_range(0..cands.len())])
}

/// Cuts the subtree rooted at `s` and splices out its parent.
pub fn detach_at(tree: &Tree, s: NodeId) -> Result<Detached> {
    if s == tree.root() || s == tree.root_child() || s.0 >= tree.len() {
        return invalid(format!("node {} cannot be detached", s.0));
    }
    let p = tree.parent(s).expect("non-root");
    let g = tree.parent(p).expect("parent is not the root");
    let slot = tree.children(p).iter().position(|&c| c == s).expect("child of parent");
    let b = tree.children(p)[1 - slot];

    let mut in_sub = vec![false; tree.len()];
    let sub_ids = {
        let mut out = vec![];
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            in_sub[v.0] = true;
            out.push(v);
            stack.extend(tree.children(v).iter().rev());
        }
        out
    };
    let mut local = vec![usize::MAX; tree.len()];
    for (k, v) in sub_ids.iter().enumerate() {
        local[v.0] = k;
    }
    let subtree = sub_ids
        .iter()
        .map(|&v| Node {
            parent: None,
            children: tree.children(v).iter().map(|c| NodeId(local[c.0])).collect(),
            time: tree.time(v),
            label: tree.label(v).map(str::to_string),
        })
        .collect();

    // remainder: every node outside the subtree except p, with b in p's place
    let mut keep = vec![usize::MAX; tree.len()];
    let mut count = 0;
    for i in 0..tree.len() {
        if !in_sub[i] && i != p.0 {
            keep[i] = count;
            count += 1;
        }
    }
    let mut nodes = Vec::with_capacity(count);
    for i in 0..tree.len() {
        if keep[i] == usize::MAX {
            continue;
        }
        let v = NodeId(i);
        let children = tree
            .children(v)
            .iter()
            .map(|&c| if c == p { NodeId(keep[b.0]) } else { NodeId(keep[c.0]) })
            .collect();
        nodes.push(Node { parent: None, children, time: tree.time(v), label: tree.label(v).map(str::to_string) });
    }
    debug_assert!(keep[g.0] != usize::MAX);
    let (remainder, map) = Tree::from_nodes_mapped(nodes, NodeId(keep[0]))?;
    let point = AttachPoint { branch: NodeId(map[keep[b.0]]), time: tree.time(p) };
    Ok(Detached { subtree, remainder, point, slot })
}

/// Regrafts the subtree onto the remainder at `at`: a new parent node at
/// `at.time` splits the branch above `at.branch`, with the subtree in `slot`.
pub fn reattach(d: &Detached, at: AttachPoint) -> Result<Tree> {
    let r = &d.remainder;
    check_point(r, at)?;
    if at.time >= d.subtree_time() {
        return Err(Error::InvalidTree(format!(
            "attach time {} is not earlier than the subtree root time {}",
            at.time,
            d.subtree_time()
        )));
    }
    let mut nodes: Vec<Node> = r.nodes().to_vec();
    let new_p = nodes.len();
    let sub_offset = new_p + 1;
    let above = r.parent(at.branch).expect("branch below a parent");
    for c in nodes[above.0].children.iter_mut() {
        if *c == at.branch {
            *c = NodeId(new_p);
        }
    }
    let mut pnode = Node::internal(at.time);
    pnode.children = if d.slot == 0 {
        vec![NodeId(sub_offset), at.branch]
    } else {
        vec![at.branch, NodeId(sub_offset)]
    };
    nodes.push(pnode);
    for n in &d.subtree {
        let mut n = n.clone();
        for c in n.children.iter_mut() {
            *c = NodeId(c.0 + sub_offset);
        }
        nodes.push(n);
    }
    Tree::from_nodes(nodes, r.root())
}

fn check_point(r: &Tree, at: AttachPoint) -> Result<()> {
    if at.branch.0 >= r.len() || at.branch == r.root() {
        return invalid(format!("branch {} is not a branch of the remainder", at.branch.0));
    }
    let lo = r.time(r.parent(at.branch).expect("non-root"));
    let hi = r.time(at.branch);
    if !(at.time > lo && at.time < hi) {
        return invalid(format!("time {} lies outside the branch interval ({lo}, {hi})", at.time));
    }
    Ok(())
}

/// Log density of a single new datum diverging from `r` at `at` under the
/// diffusion tree prior with divergence parameter `c`: survival along the
/// path from the root, count-proportional child choices and the divergence
/// density `c / (m (1 - t))` on the landing branch.
pub fn attach_log_density(r: &Tree, at: AttachPoint, c: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("divergence parameter must be positive, got {c}"));
    }
    check_point(r, at)?;
    let path = r.ancestors(at.branch);
    let mut lp = 0.0;
    // path runs from the branch up to the root; walk it top-down
    for w in path.windows(2).rev() {
        let (below, above) = (w[0], w[1]);
        let m = r.leaf_count(below) as f64;
        if above != r.root() {
            lp += (m / r.leaf_count(above) as f64).ln();
        }
        let t_a = r.time(above);
        let t_end = if below == at.branch { at.time } else { r.time(below) };
        lp += (c / m) * ((-t_end).ln_1p() - (-t_a).ln_1p());
        if below == at.branch {
            lp += (c / m).ln() - (-at.time).ln_1p();
        }
    }
    Ok(lp)
}

/// Cap on redraws of a truncated attach point.
pub const MAX_ATTACH_DRAWS: usize = 100_000;

/// Simulates the divergence of a single datum from `r`, conditioned on
/// diverging before `cutoff`, by redrawing.
pub fn sample_attach<R: Rng + ?Sized>(r: &Tree, c: f64, cutoff: f64, rng: &mut R) -> Result<AttachPoint> {
    'draw: for _ in 0..MAX_ATTACH_DRAWS {
        let mut top = r.root();
        let mut below = r.root_child();
        loop {
            let t_top = r.time(top);
            if t_top >= cutoff {
                continue 'draw;
            }
            let m = r.leaf_count(below) as f64;
            let u: f64 = rng.random();
            let t = 1.0 - (1.0 - t_top) * u.powf(m / c);
            if !(t > t_top) {
                continue 'draw;
            }
            if t < r.time(below) {
                if t >= cutoff {
                    continue 'draw;
                }
                return Ok(AttachPoint { branch: below, time: t });
            }
            if r.is_leaf(below) {
                continue 'draw;
            }
            let ch = r.children(below);
            let (a, b) = (ch[0], ch[1]);
            let pick = rng.random_range(0..r.leaf_count(a) + r.leaf_count(b));
            top = below;
            below = if pick < r.leaf_count(a) { a } else { b };
        }
    }
    Err(Error::ProposalFailure(MAX_ATTACH_DRAWS))
}

/// A candidate tree with the forward and reverse attach densities.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub candidate: Tree,
    pub detach_point: AttachPoint,
    pub attach_point: AttachPoint,
    pub log_q_u: f64,
    pub log_q_v: f64,
}

/// Detach a uniform subtree and regraft it where a new datum would diverge.
pub fn propose<R: Rng + ?Sized>(tree: &Tree, c: f64, rng: &mut R) -> Result<Proposal> {
    let d = detach(tree, rng)?;
    propose_from(&d, c, rng)
}

pub(crate) fn propose_from<R: Rng + ?Sized>(d: &Detached, c: f64, rng: &mut R) -> Result<Proposal> {
    let v = sample_attach(&d.remainder, c, d.subtree_time(), rng)?;
    Ok(Proposal {
        candidate: reattach(d, v)?,
        detach_point: d.point,
        attach_point: v,
        log_q_u: attach_log_density(&d.remainder, d.point, c)?,
        log_q_v: attach_log_density(&d.remainder, v, c)?,
    })
}
