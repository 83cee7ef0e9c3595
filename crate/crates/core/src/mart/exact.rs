//! Reference grower: exhaustive enumeration of every midpoint between
//! consecutive distinct training values, re-sorting rows at every node.

use super::{improves, leaf_weight, node_score, split_gain, MartParams, Node, Tree, TreeGrower};
use crate::dataio::Features;

pub(crate) struct ExactGrower<'a, F: Features + ?Sized> {
    features: &'a F,
    rows: &'a [usize],
    /// Distinct training values per feature, ascending.
    distinct: Vec<Vec<f64>>,
    max_depth: usize,
}

impl<'a, F: Features + ?Sized> ExactGrower<'a, F> {
    pub(crate) fn new(features: &'a F, rows: &'a [usize], max_depth: usize) -> Self {
        let distinct = (0..features.n_cols())
            .map(|f| {
                let mut v: Vec<f64> = rows.iter().map(|&r| features.value(r, f)).collect();
                v.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
                v.dedup_by(|a, b| a == b);
                v
            })
            .collect();
        Self {
            features,
            rows,
            distinct,
            max_depth,
        }
    }

    fn value(&self, local: usize, f: usize) -> f64 {
        self.features.value(self.rows[local], f)
    }

    fn grow_node(&self, node_rows: Vec<usize>, depth: usize, ctx: &mut Ctx<'_>) -> usize {
        let g: f64 = node_rows.iter().map(|&r| ctx.grad[r]).sum();
        let h: f64 = node_rows.iter().map(|&r| ctx.hess[r]).sum();
        if depth < self.max_depth && node_rows.len() >= 2 {
            if let Some((feature, threshold, gain)) = self.best_split(&node_rows, g, h, ctx) {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    node_rows.iter().partition(|&&i| self.value(i, feature) <= threshold);
                let idx = ctx.nodes.len();
                ctx.nodes.push(Node::Leaf { weight: 0.0 });
                let left = self.grow_node(l, depth + 1, ctx);
                let right = self.grow_node(r, depth + 1, ctx);
                ctx.nodes[idx] = Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    gain,
                };
                return idx;
            }
        }
        let weight = leaf_weight(g, h, ctx.params.lambda);
        for &r in &node_rows {
            ctx.leaf_of_row[r] = weight;
        }
        ctx.nodes.push(Node::Leaf { weight });
        ctx.nodes.len() - 1
    }

    fn best_split(&self, node_rows: &[usize], g: f64, h: f64, ctx: &Ctx<'_>) -> Option<(usize, f64, f64)> {
        let p = ctx.params;
        let mut best = None;
        let scale = node_score(g, h, p.lambda);
        let mut best_gain = 0.0;
        for &f in ctx.mask {
            let mut sorted: Vec<(f64, usize)> = node_rows.iter().map(|&i| (self.value(i, f), i)).collect();
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
            // (value, g, h, count) per distinct value present in the node.
            let mut groups: Vec<(f64, f64, f64, usize)> = Vec::new();
            for &(v, i) in &sorted {
                match groups.last_mut() {
                    Some(last) if last.0 == v => {
                        last.1 += ctx.grad[i];
                        last.2 += ctx.hess[i];
                        last.3 += 1;
                    }
                    _ => groups.push((v, 0.0 + ctx.grad[i], 0.0 + ctx.hess[i], 1)),
                }
            }
            let d = &self.distinct[f];
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            let mut next = 0;
            for k in 0..d.len().saturating_sub(1) {
                let t = 0.5 * (d[k] + d[k + 1]);
                while next < groups.len() && groups[next].0 <= t {
                    gl += groups[next].1;
                    hl += groups[next].2;
                    nl += groups[next].3;
                    next += 1;
                }
                if nl == 0 {
                    continue;
                }
                if nl == node_rows.len() {
                    break;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = split_gain(gl, hl, gr, hr, p.lambda, p.gamma);
                if improves(gain, best_gain, scale) {
                    best_gain = gain;
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }
}

struct Ctx<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    mask: &'a [usize],
    params: &'a MartParams,
    nodes: Vec<Node>,
    leaf_of_row: Vec<f64>,
}

impl<F: Features + ?Sized> TreeGrower for ExactGrower<'_, F> {
    fn grow(&self, grad: &[f64], hess: &[f64], mask: &[usize], params: &MartParams) -> (Tree, Vec<f64>) {
        let mut ctx = Ctx {
            grad,
            hess,
            mask,
            params,
            nodes: Vec::new(),
            leaf_of_row: vec![0.0; self.rows.len()],
        };
        self.grow_node((0..self.rows.len()).collect(), 0, &mut ctx);
        (Tree::from_grown(ctx.nodes), ctx.leaf_of_row)
    }
}
