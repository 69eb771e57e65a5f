//! Newick text for trees with divergence times.
//!
//! The outermost group is the root, which has a single child. Branch lengths
//! are time differences, so every leaf must sit at cumulative depth 1.
//! Example: `((A:0.6,B:0.6):0.4);` is two leaves diverging at 0.4.

use super::{Node, NodeId, Tree};
use crate::error::{Error, Result};

/// Allowed deviation of a leaf's cumulative depth from 1.
pub const NEWICK_DEPTH_TOL: f64 = 1e-9;

pub fn parse_newick(text: &str) -> Result<Tree> {
    let mut p = Parser { s: text.as_bytes(), pos: 0, nodes: Vec::new() };
    p.skip_ws();
    let root = p.subtree()?;
    p.skip_ws();
    p.expect(b';')?;
    p.skip_ws();
    if p.pos != p.s.len() {
        return p.err("trailing characters after `;`");
    }
    let Parsed { id: root_id, length: root_len } = root;
    if root_len.is_some_and(|l| l != 0.0) {
        return Err(Error::Newick { pos: 0, msg: "root branch length must be absent or 0".into() });
    }
    let (mut nodes, lengths): (Vec<Node>, Vec<Option<f64>>) = p.nodes.into_iter().map(|r| (r.node, r.length)).unzip();

    // cumulative depth from the root
    let mut stack = vec![(root_id, 0.0f64)];
    while let Some((id, depth)) = stack.pop() {
        let n = &mut nodes[id];
        n.time = depth;
        if n.children.is_empty() {
            if (depth - 1.0).abs() > NEWICK_DEPTH_TOL {
                return Err(Error::InvalidTree(format!(
                    "leaf `{}` has depth {depth}, expected 1",
                    n.label.as_deref().unwrap_or("")
                )));
            }
            n.time = 1.0;
        } else {
            // internal labels are not part of the model
            n.label = None;
        }
        for &c in &n.children.clone() {
            let len = lengths[c.0].ok_or_else(|| {
                Error::InvalidTree(format!("node `{}` has no branch length", nodes[c.0].label.as_deref().unwrap_or("")))
            })?;
            if !(len >= 0.0 && len.is_finite()) {
                return Err(Error::InvalidTree(format!("invalid branch length {len}")));
            }
            stack.push((c.0, depth + len));
        }
    }
    Tree::from_nodes(nodes, NodeId(root_id))
}

/// Writes the tree with branch lengths `t_child - t_parent`.
pub fn serialize_newick(tree: &Tree) -> String {
    let mut out = String::new();
    out.push('(');
    write_node(tree, tree.root_child(), &mut out);
    out.push_str(");");
    out
}

fn write_node(tree: &Tree, id: NodeId, out: &mut String) {
    if tree.is_leaf(id) {
        out.push_str(&quote_label(tree.label(id).unwrap_or("")));
    } else {
        out.push('(');
        for (k, &c) in tree.children(id).iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write_node(tree, c, out);
        }
        out.push(')');
    }
    let parent_time = tree.time(tree.parent(id).expect("non-root"));
    out.push(':');
    out.push_str(&format!("{}", tree.time(id) - parent_time));
}

pub(crate) fn quote_label(label: &str) -> String {
    if label.is_empty() || label.chars().any(|c| "()[]',:; \t\n".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

struct Raw {
    node: Node,
    length: Option<f64>,
}

struct Parsed {
    id: usize,
    length: Option<f64>,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    nodes: Vec<Raw>,
}

impl Parser<'_> {
    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Newick { pos: self.pos, msg: msg.to_string() })
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("expected `{}`", c as char))
        }
    }

    fn subtree(&mut self) -> Result<Parsed> {
        self.skip_ws();
        let id = self.nodes.len();
        self.nodes.push(Raw { node: Node::internal(0.0), length: None });
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut children = Vec::new();
            loop {
                let child = self.subtree()?;
                self.nodes[child.id].length = child.length;
                children.push(NodeId(child.id));
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.err("expected `,` or `)`"),
                }
            }
            self.nodes[id].node.children = children;
        }
        self.skip_ws();
        let label = self.label()?;
        if let Some(l) = label {
            self.nodes[id].node.label = Some(l);
        } else if self.nodes[id].node.children.is_empty() {
            return self.err("leaf without a label");
        }
        self.skip_ws();
        let length = if self.peek() == Some(b':') {
            self.pos += 1;
            self.skip_ws();
            Some(self.number()?)
        } else {
            None
        };
        Ok(Parsed { id, length })
    }

    fn label(&mut self) -> Result<Option<String>> {
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.peek() {
                    None => return self.err("unterminated quoted label"),
                    Some(b'\'') if self.s.get(self.pos + 1) == Some(&b'\'') => {
                        out.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => {
                        out.push(c);
                        self.pos += 1;
                    }
                }
            }
            return String::from_utf8(out).map(Some).or_else(|_| self.err("label is not UTF-8"));
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if b"()[]',:;".contains(&c) || c.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Ok(None);
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .map(|s| Some(s.to_string()))
            .or_else(|_| self.err("label is not UTF-8"))
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit() || b"+-.eE".contains(&c)) {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err("expected a branch length")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::tests::four_leaf;

    #[test]
    fn two_leaf_text_is_stable() {
        let t = parse_newick("((A:0.6,B:0.6):0.4);").unwrap();
        assert_eq!(t.n_leaves(), 2);
        assert!((t.time(t.root_child()) - 0.4).abs() < 1e-15);
        assert_eq!(serialize_newick(&t), "((A:0.6,B:0.6):0.4);");
    }

    #[test]
    fn round_trip_four_leaf() {
        let t = four_leaf(0.125, 0.5, 0.75);
        let back = parse_newick(&serialize_newick(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn quoted_labels_round_trip() {
        let t = crate::tree::build::cherry("drug (a)", "it's", 0.3).unwrap();
        let text = serialize_newick(&t);
        assert!(text.contains("'drug (a)'") && text.contains("'it''s'"));
        let back = parse_newick(&text).unwrap();
        assert_eq!(back.leaf_labels(), t.leaf_labels());
    }

    #[test]
    fn leaf_depth_must_reach_one() {
        let r = parse_newick("((A:0.5,B:0.6):0.4);");
        assert!(matches!(r, Err(Error::InvalidTree(_))));
        // within tolerance is snapped to 1
        let t = parse_newick("((A:0.6000000000001,B:0.6):0.4);").unwrap();
        assert_eq!(t.time(t.leaves()[0]), 1.0);
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_newick("((A:0.6,B:0.6):0.4)") {
            Err(Error::Newick { pos, .. }) => assert_eq!(pos, 19),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_newick("((A:x,B:0.6):0.4);"), Err(Error::Newick { pos: 4, .. })));
        assert!(parse_newick("((A,B):0.4);").is_err());
        assert!(parse_newick("((A:0.6,B:0.6):0.4); x").is_err());
    }

    #[test]
    fn root_must_be_unary() {
        assert!(parse_newick("(A:1,B:1);").is_err());
    }
}
