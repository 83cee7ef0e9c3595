use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One node of a regression tree. Rows with `value <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        weight: f64,
    },
}

/// A regression tree stored as a flat node array.
///
/// Nodes are laid out in pre-order with the root first; leaf weights are the
/// unshrunk second-order optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    root: usize,
}

impl Tree {
    pub fn new(nodes: Vec<Node>, root: usize) -> Result<Self> {
        let t = Self { nodes, root };
        t.validate()?;
        Ok(t)
    }

    /// Used by growers that emit nodes in a valid layout by construction.
    pub(crate) fn from_grown(nodes: Vec<Node>) -> Self {
        debug_assert!(Self::new(nodes.clone(), 0).is_ok());
        Self { nodes, root: 0 }
    }

    pub fn leaf(weight: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { weight }],
            root: 0,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, self.root)
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Checks that the links form one binary tree rooted at `root`.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.root >= n {
            return Err(Error::Data(format!("root {} out of {n} nodes", self.root)));
        }
        let mut refs = vec![0u32; n];
        for node in &self.nodes {
            if let Node::Internal { left, right, .. } = *node {
                for c in [left, right] {
                    if c >= n {
                        return Err(Error::Data(format!("child index {c} out of {n} nodes")));
                    }
                    refs[c] += 1;
                }
            }
        }
        if refs[self.root] != 0 {
            return Err(Error::Data("root is referenced as a child".into()));
        }
        if let Some(i) = (0..n).find(|&i| i != self.root && refs[i] != 1) {
            return Err(Error::Data(format!("node {i} referenced {} times", refs[i])));
        }
        // Every non-root node has exactly one parent and the root none, so the
        // structure is a tree iff everything is reachable from the root.
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("cycle through node {i}")));
            }
            if let Node::Internal { left, right, .. } = self.nodes[i] {
                stack.push(left);
                stack.push(right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("unreachable nodes".into()));
        }
        Ok(())
    }

    /// Leaf weight reached by a row whose column values come from `value`.
    #[inline]
    pub fn predict_with(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut i = self.root;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if value(feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_with(|f| row[f])
    }

    /// Adds each internal node's gain to the slot of its feature.
    pub(crate) fn accumulate_gains(&self, out: &mut [f64]) {
        for node in &self.nodes {
            if let Node::Internal { feature, gain, .. } = *node {
                out[feature] += gain;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn internal(left: usize, right: usize) -> Node {
        Node::Internal {
            feature: 0,
            threshold: 0.0,
            left,
            right,
            gain: 1.0,
        }
    }

    #[test]
    fn validation_catches_bad_links() {
        let leaf = Node::Leaf { weight: 0.0 };
        assert!(Tree::new(vec![internal(1, 2), leaf.clone(), leaf.clone()], 0).is_ok());
        assert!(Tree::new(vec![internal(1, 1), leaf.clone()], 0).is_err());
        assert!(Tree::new(vec![internal(1, 3), leaf.clone(), leaf.clone()], 0).is_err());
        assert!(Tree::new(vec![internal(1, 2), internal(0, 2), leaf.clone()], 0).is_err());
        assert!(Tree::new(vec![leaf.clone(), leaf.clone()], 0).is_err());
    }

    #[test]
    fn routing_sends_ties_left() {
        let t = Tree::new(
            vec![
                Node::Internal {
                    feature: 1,
                    threshold: 2.0,
                    left: 1,
                    right: 2,
                    gain: 1.0,
                },
                Node::Leaf { weight: -1.0 },
                Node::Leaf { weight: 1.0 },
            ],
            0,
        )
        .unwrap();
        assert_eq!(t.predict_row(&[9.0, 2.0]), -1.0);
        assert_eq!(t.predict_row(&[9.0, 2.0001]), 1.0);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.num_leaves(), 2);
    }

    #[test]
    fn serialized_nodes_name_their_fields() {
        let json = serde_json::to_string(&Tree::leaf(0.5)).unwrap();
        assert_eq!(json, r#"{"nodes":[{"type":"leaf","weight":0.5}],"root":0}"#);
    }
}
