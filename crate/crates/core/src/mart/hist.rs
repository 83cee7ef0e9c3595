//! Histogram split finding over sketch-proposed bins.

use super::{improves, leaf_weight, node_score, split_gain, MartParams, Node, Tree, TreeGrower};
use crate::dataio::Features;

/// Feature-major bin indices: `bins[f * rows + i]` for local row `i`.
enum Bins {
    Narrow(Vec<u8>),
    Wide(Vec<u16>),
}

#[derive(Clone, Copy, Default)]
struct Cell {
    g: f64,
    h: f64,
    n: u32,
}

pub(crate) struct HistGrower {
    bins: Bins,
    rows: usize,
    thresholds: Vec<Vec<f64>>,
    /// Histogram slots per feature: one more than the largest threshold count.
    stride: usize,
    max_depth: usize,
}

fn bin_columns<F: Features + ?Sized, B: Copy + Default>(
    features: &F,
    rows: &[usize],
    thresholds: &[Vec<f64>],
    narrow: impl Fn(usize) -> B,
) -> Vec<B> {
    let n = rows.len();
    let mut bins = vec![B::default(); n * thresholds.len()];
    for (f, t) in thresholds.iter().enumerate() {
        for (slot, &r) in bins[f * n..(f + 1) * n].iter_mut().zip(rows) {
            let v = features.value(r, f);
            *slot = narrow(t.partition_point(|&x| x < v));
        }
    }
    bins
}

impl HistGrower {
    pub(crate) fn new<F: Features + ?Sized>(
        features: &F,
        rows: &[usize],
        thresholds: Vec<Vec<f64>>,
        max_depth: usize,
    ) -> Self {
        let stride = thresholds.iter().map(|t| t.len() + 1).max().unwrap_or(1);
        let bins = if stride <= 256 {
            Bins::Narrow(bin_columns(features, rows, &thresholds, |b| b as u8))
        } else {
            Bins::Wide(bin_columns(features, rows, &thresholds, |b| b as u16))
        };
        Self {
            bins,
            rows: rows.len(),
            thresholds,
            stride,
            max_depth,
        }
    }

    fn bin(&self, row: usize, f: usize) -> usize {
        match &self.bins {
            Bins::Narrow(b) => b[f * self.rows + row] as usize,
            Bins::Wide(b) => b[f * self.rows + row] as usize,
        }
    }

    fn fill(&self, hist: &mut [Cell], rows: &[u32], grad: &[f64], hess: &[f64], mask: &[usize]) {
        hist.fill(Cell::default());
        let gh: Vec<(f64, f64)> = rows.iter().map(|&r| (grad[r as usize], hess[r as usize])).collect();
        for (slot, &f) in mask.iter().enumerate() {
            let cells = &mut hist[slot * self.stride..(slot + 1) * self.stride];
            let col = f * self.rows..(f + 1) * self.rows;
            match &self.bins {
                Bins::Narrow(b) => accumulate(&b[col], cells, rows, &gh),
                Bins::Wide(b) => accumulate(&b[col], cells, rows, &gh),
            }
        }
    }

    fn grow_node(&self, rows: Vec<u32>, depth: usize, ctx: &mut GrowCtx<'_>) -> usize {
        let g: f64 = rows.iter().map(|&r| ctx.grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| ctx.hess[r as usize]).sum();
        if depth < self.max_depth && rows.len() >= 2 {
            if let Some((slot, k, gain)) = self.best_split(&rows, g, h, ctx) {
                let feature = ctx.mask[slot];
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
                    rows.iter().partition(|&&r| self.bin(r as usize, feature) <= k);
                drop(rows);
                let idx = ctx.nodes.len();
                ctx.nodes.push(Node::Leaf { weight: 0.0 });
                let left = self.grow_node(left_rows, depth + 1, ctx);
                let right = self.grow_node(right_rows, depth + 1, ctx);
                ctx.nodes[idx] = Node::Internal {
                    feature,
                    threshold: self.thresholds[feature][k],
                    left,
                    right,
                    gain,
                };
                return idx;
            }
        }
        let weight = leaf_weight(g, h, ctx.params.lambda);
        for &r in &rows {
            ctx.leaf_of_row[r as usize] = weight;
        }
        ctx.nodes.push(Node::Leaf { weight });
        ctx.nodes.len() - 1
    }

    /// Best (mask slot, threshold index, gain) whose gain clears the rounding floor.
    fn best_split(&self, rows: &[u32], g: f64, h: f64, ctx: &mut GrowCtx<'_>) -> Option<(usize, usize, f64)> {
        self.fill(&mut ctx.hist, rows, ctx.grad, ctx.hess, ctx.mask);
        let n = rows.len() as u32;
        let p = ctx.params;
        let mut best = None;
        let scale = node_score(g, h, p.lambda);
        let mut best_gain = 0.0;
        for (slot, &f) in ctx.mask.iter().enumerate() {
            let cells = &ctx.hist[slot * self.stride..(slot + 1) * self.stride];
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
            for (k, cell) in cells.iter().take(self.thresholds[f].len()).enumerate() {
                gl += cell.g;
                hl += cell.h;
                nl += cell.n;
                if nl == 0 {
                    continue;
                }
                if nl == n {
                    break;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = split_gain(gl, hl, gr, hr, p.lambda, p.gamma);
                if improves(gain, best_gain, scale) {
                    best_gain = gain;
                    best = Some((slot, k, gain));
                }
            }
        }
        best
    }
}

struct GrowCtx<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
    mask: &'a [usize],
    params: &'a MartParams,
    hist: Vec<Cell>,
    nodes: Vec<Node>,
    leaf_of_row: Vec<f64>,
}

/// Adds each row's gradient pair to its bin, in row order.
fn accumulate<B: Copy + Into<usize>>(col: &[B], cells: &mut [Cell], rows: &[u32], gh: &[(f64, f64)]) {
    for (&r, &(g, h)) in rows.iter().zip(gh) {
        let cell = &mut cells[col[r as usize].into()];
        cell.g += g;
        cell.h += h;
        cell.n += 1;
    }
}

impl TreeGrower for HistGrower {
    fn grow(&self, grad: &[f64], hess: &[f64], mask: &[usize], params: &MartParams) -> (Tree, Vec<f64>) {
        let mut ctx = GrowCtx {
            grad,
            hess,
            mask,
            params,
            hist: vec![Cell::default(); mask.len() * self.stride],
            nodes: Vec::new(),
            leaf_of_row: vec![0.0; self.rows],
        };
        let all: Vec<u32> = (0..self.rows as u32).collect();
        self.grow_node(all, 0, &mut ctx);
        (Tree::from_grown(ctx.nodes), ctx.leaf_of_row)
    }
}
