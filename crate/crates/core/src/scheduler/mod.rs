//! DAG execution of per-layer jobs on a bounded worker pool.
//!
//! A [`JobGraph`] holds [`JobNode`]s whose edges are implied by their `deps`.
//! [`execute`] and [`resume`] run a graph through a [`JobRunner`], writing one
//! completion record per finished node to a [`Checkpoint`] and logging every
//! status transition. A node may append more nodes when it finishes (see
//! [`JobRunner::expand`]), which is how the cascade grows layer by layer.

mod checkpoint;
mod exec;

use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, Outputs};
pub use exec::{execute, resume, run_graph, Event, ExecOptions, JobRunner, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    FoldPrep,
    Train,
    Predict,
    Combine,
    EvaluateGate,
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobKind::FoldPrep => "fold_prep",
            JobKind::Train => "train",
            JobKind::Predict => "predict",
            JobKind::Combine => "combine",
            JobKind::EvaluateGate => "evaluate_gate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Ready,
    Running,
    Done,
    Failed,
    Blocked,
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobStatus::Pending => "pending",
            JobStatus::Ready => "ready",
            JobStatus::Running => "running",
            JobStatus::Done => "done",
            JobStatus::Failed => "failed",
            JobStatus::Blocked => "blocked",
        })
    }
}

impl std::str::FromStr for JobStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pending" => JobStatus::Pending,
            "ready" => JobStatus::Ready,
            "running" => JobStatus::Running,
            "done" => JobStatus::Done,
            "failed" => JobStatus::Failed,
            "blocked" => JobStatus::Blocked,
            _ => return Err(Error::Graph(format!("unknown status '{s}'"))),
        })
    }
}

/// Kind-specific coordinates of a job. Fields a kind does not use are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct JobParams {
    pub layer: usize,
    pub learner: Option<usize>,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobNode {
    pub id: String,
    pub kind: JobKind,
    pub params: JobParams,
    pub deps: Vec<String>,
}

impl JobNode {
    pub fn new(id: impl Into<String>, kind: JobKind, params: JobParams, deps: Vec<String>) -> Self {
        JobNode {
            id: id.into(),
            kind,
            params,
            deps,
        }
    }
}

/// Acyclic job graph. Node order is insertion order and is the scheduler's
/// tie-break when several nodes become ready together.
#[derive(Debug, Clone, Default)]
pub struct JobGraph {
    nodes: Vec<JobNode>,
    index: HashMap<String, usize>,
}

impl JobGraph {
    pub fn new(nodes: Vec<JobNode>) -> Result<Self> {
        let mut g = JobGraph::default();
        g.extend(nodes)?;
        Ok(g)
    }

    /// Appends nodes whose deps name existing or newly added nodes. On error
    /// the graph is left unchanged.
    pub fn extend(&mut self, nodes: Vec<JobNode>) -> Result<()> {
        let start = self.nodes.len();
        let mut index = self.index.clone();
        for (k, n) in nodes.iter().enumerate() {
            if !is_valid_id(&n.id) {
                return Err(Error::Graph(format!("invalid node id '{}'", n.id)));
            }
            if index.insert(n.id.clone(), start + k).is_some() {
                return Err(Error::Graph(format!("duplicate node id '{}'", n.id)));
            }
        }
        for n in &nodes {
            for d in &n.deps {
                if !index.contains_key(d) {
                    return Err(Error::Graph(format!("node '{}' depends on unknown '{d}'", n.id)));
                }
            }
        }
        let mut all = self.nodes.clone();
        all.extend(nodes);
        if let Some(id) = find_cycle(&all, &index) {
            return Err(Error::Graph(format!("cycle through '{id}'")));
        }
        self.nodes = all;
        self.index = index;
        Ok(())
    }

    pub fn nodes(&self) -> &[JobNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&JobNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// All nodes reachable from `id` along reversed dependency edges.
    pub fn descendants(&self, id: &str) -> Vec<String> {
        let children = self.children();
        let Some(start) = self.position(id) else {
            return Vec::new();
        };
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([start]);
        let mut out = Vec::new();
        while let Some(i) = queue.pop_front() {
            for &c in &children[i] {
                if !seen[c] {
                    seen[c] = true;
                    out.push(self.nodes[c].id.clone());
                    queue.push_back(c);
                }
            }
        }
        out
    }

    pub(crate) fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for d in &n.deps {
                children[self.index[d]].push(i);
            }
        }
        children
    }
}

fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Kahn's algorithm; returns a node on a cycle if one exists.
fn find_cycle(nodes: &[JobNode], index: &HashMap<String, usize>) -> Option<String> {
    let mut indegree: Vec<usize> = nodes.iter().map(|n| n.deps.len()).collect();
    let mut children = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for d in &n.deps {
            children[index[d]].push(i);
        }
    }
    let mut queue: VecDeque<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(i) = queue.pop_front() {
        visited += 1;
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    (visited < nodes.len()).then(|| {
        let i = indegree.iter().position(|&d| d > 0).expect("unvisited node");
        nodes[i].id.clone()
    })
}

pub fn prep_id(layer: usize, fold: usize) -> String {
    format!("L{layer}-prep-f{fold}")
}

pub fn train_id(layer: usize, learner: usize, fold: usize) -> String {
    format!("L{layer}-train-j{learner}-f{fold}")
}

pub fn predict_id(layer: usize, learner: usize, fold: usize) -> String {
    format!("L{layer}-predict-j{learner}-f{fold}")
}

pub fn combine_id(layer: usize) -> String {
    format!("L{layer}-combine")
}

pub fn gate_id(layer: usize) -> String {
    format!("L{layer}-gate")
}

/// Nodes of one cascade layer: `k` fold preps, `k·l` trains, `k·l` predicts,
/// a combine and a gate. When `after` is given, every fold prep also waits
/// for that node (the previous layer's gate).
pub fn layer_nodes(layer: usize, k: usize, l: usize, after: Option<&str>) -> Result<Vec<JobNode>> {
    if k < 2 {
        return Err(Error::InvalidParam(format!("k must be at least 2, got {k}")));
    }
    if l < 1 {
        return Err(Error::InvalidParam("l must be at least 1".into()));
    }
    let at = |learner, fold| JobParams { layer, learner, fold };
    let mut nodes = Vec::with_capacity(k + 2 * k * l + 2);
    for f in 0..k {
        let deps = after.map(|a| vec![a.to_string()]).unwrap_or_default();
        nodes.push(JobNode::new(
            prep_id(layer, f),
            JobKind::FoldPrep,
            at(None, Some(f)),
            deps,
        ));
    }
    for j in 0..l {
        for f in 0..k {
            nodes.push(JobNode::new(
                train_id(layer, j, f),
                JobKind::Train,
                at(Some(j), Some(f)),
                vec![prep_id(layer, f)],
            ));
        }
    }
    let mut predicts = Vec::with_capacity(k * l);
    for j in 0..l {
        for f in 0..k {
            predicts.push(predict_id(layer, j, f));
            nodes.push(JobNode::new(
                predict_id(layer, j, f),
                JobKind::Predict,
                at(Some(j), Some(f)),
                vec![train_id(layer, j, f)],
            ));
        }
    }
    nodes.push(JobNode::new(
        combine_id(layer),
        JobKind::Combine,
        at(None, None),
        predicts,
    ));
    nodes.push(JobNode::new(
        gate_id(layer),
        JobKind::EvaluateGate,
        at(None, None),
        vec![combine_id(layer)],
    ));
    Ok(nodes)
}

/// Graph of a single layer with no predecessor.
pub fn build_layer_graph(layer: usize, k: usize, l: usize) -> Result<JobGraph> {
    JobGraph::new(layer_nodes(layer, k, l, None)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, deps: &[&str]) -> JobNode {
        JobNode::new(
            id,
            JobKind::Train,
            JobParams::default(),
            deps.iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn layer_graph_counts() {
        let g = build_layer_graph(0, 5, 4).unwrap();
        assert_eq!(g.len(), 47);
        let count = |k| g.nodes().iter().filter(|n| n.kind == k).count();
        assert_eq!(count(JobKind::FoldPrep), 5);
        assert_eq!(count(JobKind::Train), 20);
        assert_eq!(count(JobKind::Predict), 20);
        assert_eq!(count(JobKind::Combine), 1);
        assert_eq!(count(JobKind::EvaluateGate), 1);
        for (k, l) in [(2, 1), (3, 2), (10, 7)] {
            assert_eq!(build_layer_graph(1, k, l).unwrap().len(), k + 2 * k * l + 2);
        }
    }

    #[test]
    fn train_depends_only_on_its_fold() {
        let g = build_layer_graph(0, 5, 4).unwrap();
        let t = g.get("L0-train-j2-f3").unwrap();
        assert_eq!(t.deps, vec!["L0-prep-f3".to_string()]);
        assert_eq!(
            t.params,
            JobParams {
                layer: 0,
                learner: Some(2),
                fold: Some(3)
            }
        );
        assert_eq!(
            g.get("L0-predict-j2-f3").unwrap().deps,
            vec!["L0-train-j2-f3".to_string()]
        );
        assert_eq!(g.get("L0-combine").unwrap().deps.len(), 20);
        assert_eq!(g.get("L0-gate").unwrap().deps, vec!["L0-combine".to_string()]);
    }

    #[test]
    fn invalid_layer_shapes() {
        assert!(build_layer_graph(0, 1, 4).is_err());
        assert!(build_layer_graph(0, 5, 0).is_err());
    }

    #[test]
    fn chained_layers_wait_for_gate() {
        let mut g = build_layer_graph(0, 3, 2).unwrap();
        g.extend(layer_nodes(1, 3, 2, Some("L0-gate")).unwrap()).unwrap();
        assert_eq!(g.len(), 2 * (3 + 12 + 2));
        assert_eq!(g.get("L1-prep-f0").unwrap().deps, vec!["L0-gate".to_string()]);
        assert!(g.descendants("L0-train-j0-f0").contains(&"L1-gate".to_string()));
    }

    #[test]
    fn rejects_cycles_unknown_deps_and_duplicates() {
        assert!(matches!(
            JobGraph::new(vec![node("a", &["b"]), node("b", &["a"])]),
            Err(Error::Graph(_))
        ));
        assert!(JobGraph::new(vec![node("a", &["a"])]).is_err());
        assert!(JobGraph::new(vec![node("a", &["zz"])]).is_err());
        assert!(JobGraph::new(vec![node("a", &[]), node("a", &[])]).is_err());
        assert!(JobGraph::new(vec![node("../x", &[])]).is_err());
    }

    #[test]
    fn failed_extend_leaves_graph_unchanged() {
        let mut g = JobGraph::new(vec![node("a", &[])]).unwrap();
        assert!(g.extend(vec![node("b", &["c"]), node("c", &["b"])]).is_err());
        assert_eq!(g.len(), 1);
        g.extend(vec![node("b", &["a"])]).unwrap();
        assert_eq!(g.descendants("a"), vec!["b".to_string()]);
    }

    #[test]
    fn names_round_trip() {
        assert_eq!(JobKind::EvaluateGate.to_string(), "evaluate_gate");
        assert_eq!(serde_json::to_string(&JobKind::FoldPrep).unwrap(), "\"fold_prep\"");
        for s in [JobStatus::Pending, JobStatus::Blocked, JobStatus::Done] {
            assert_eq!(s.to_string().parse::<JobStatus>().unwrap(), s);
        }
    }
}
