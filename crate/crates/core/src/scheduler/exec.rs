use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use crossbeam_channel::unbounded;

use super::{Checkpoint, JobGraph, JobNode, JobStatus, Outputs};
use crate::error::{Error, Result};

/// Executes jobs for the scheduler. Implementations are shared across worker
/// threads and must not rely on call order beyond the graph's dependencies.
pub trait JobRunner: Sync {
    /// Runs one job. Outputs of finished dependencies are available through
    /// [`Checkpoint::output`].
    fn run(&self, node: &JobNode, checkpoint: &Checkpoint) -> std::result::Result<Outputs, String>;

    /// Nodes to append to the graph once `node` is done, called both for
    /// nodes that ran and for nodes restored from a checkpoint.
    fn expand(&self, node: &JobNode, outputs: &Outputs) -> std::result::Result<Vec<JobNode>, String> {
        let _ = (node, outputs);
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOptions {
    pub pool_size: usize,
    /// Skip nodes whose completion record verifies and whose deps were all
    /// skipped the same way.
    pub resume: bool,
    /// Stop dispatching after this many jobs, leaving the rest pending.
    pub max_jobs: Option<usize>,
}

impl ExecOptions {
    pub fn new(pool_size: usize) -> Self {
        ExecOptions {
            pool_size,
            resume: false,
            max_jobs: None,
        }
    }
}

/// One status transition. Restored nodes go straight from pending to done.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    /// Nanoseconds since the run started.
    pub t_ns: u64,
    pub id: String,
    pub from: JobStatus,
    pub to: JobStatus,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.t_ns, self.id, self.from, self.to)
    }
}

impl std::str::FromStr for Event {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::Graph(format!("malformed event line '{line}'"));
        let parts: Vec<&str> = line.trim().split(',').collect();
        let [t, id, from, to] = parts[..] else {
            return Err(bad());
        };
        Ok(Event {
            t_ns: t.parse().map_err(|_| bad())?,
            id: id.to_string(),
            from: from.parse()?,
            to: to.parse()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// The graph as it stood at the end, including appended nodes.
    pub graph: JobGraph,
    pub statuses: BTreeMap<String, JobStatus>,
    pub events: Vec<Event>,
    /// Dispatched ids in dispatch order.
    pub executed: Vec<String>,
    pub restored: Vec<String>,
    /// `(id, message)` for every failed node.
    pub failures: Vec<(String, String)>,
    /// True when `max_jobs` stopped the run before every node finished.
    pub interrupted: bool,
}

impl RunReport {
    pub fn status(&self, id: &str) -> Option<JobStatus> {
        self.statuses.get(id).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.statuses.values().all(|&s| s == JobStatus::Done)
    }

    pub fn with_status(&self, status: JobStatus) -> Vec<String> {
        self.statuses
            .iter()
            .filter(|(_, &s)| s == status)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// `Ok` when every node is done, otherwise the matching error.
    pub fn check(&self) -> Result<()> {
        if !self.failures.is_empty() {
            return Err(Error::JobsFailed(
                self.failures.iter().map(|(id, msg)| format!("{id}: {msg}")).collect(),
            ));
        }
        if !self.is_complete() {
            return Err(Error::Interrupted(self.executed.len()));
        }
        Ok(())
    }

    pub fn event_log(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn write_event_log(&self, path: &Path) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(self.event_log().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Runs every node from scratch.
pub fn execute<R: JobRunner>(
    graph: JobGraph,
    pool_size: usize,
    checkpoint: &Checkpoint,
    runner: &R,
) -> Result<RunReport> {
    run_graph(graph, checkpoint, runner, &ExecOptions::new(pool_size))
}

/// Runs the nodes a previous run left unfinished, restoring the rest.
pub fn resume<R: JobRunner>(
    graph: JobGraph,
    checkpoint: &Checkpoint,
    pool_size: usize,
    runner: &R,
) -> Result<RunReport> {
    let opts = ExecOptions {
        resume: true,
        ..ExecOptions::new(pool_size)
    };
    run_graph(graph, checkpoint, runner, &opts)
}

struct State {
    graph: JobGraph,
    status: Vec<JobStatus>,
    remaining: Vec<usize>,
    restored: Vec<bool>,
    children: Vec<Vec<usize>>,
    ready: VecDeque<usize>,
    events: Vec<Event>,
    start: Instant,
}

impl State {
    fn log(&mut self, i: usize, to: JobStatus) {
        let from = self.status[i];
        self.status[i] = to;
        self.events.push(Event {
            t_ns: self.start.elapsed().as_nanos() as u64,
            id: self.graph.nodes()[i].id.clone(),
            from,
            to,
        });
    }

    /// Registers nodes appended since `from`, returning those with no
    /// outstanding deps. Nodes downstream of a failure are blocked at once.
    fn adopt(&mut self, from: usize) -> Vec<usize> {
        let mut fresh = Vec::new();
        for i in from..self.graph.len() {
            self.status.push(JobStatus::Pending);
            self.restored.push(false);
            self.children.push(Vec::new());
            let deps: Vec<usize> = self.graph.nodes()[i]
                .deps
                .iter()
                .map(|d| self.graph.position(d).expect("validated dep"))
                .collect();
            let mut open = 0;
            let mut dead = false;
            for &d in &deps {
                self.children[d].push(i);
                match self.status[d] {
                    JobStatus::Done => {}
                    JobStatus::Failed | JobStatus::Blocked => dead = true,
                    _ => open += 1,
                }
            }
            self.remaining.push(open);
            if dead {
                self.log(i, JobStatus::Blocked);
            } else if open == 0 {
                fresh.push(i);
            }
        }
        fresh
    }

    fn block_descendants(&mut self, i: usize) {
        let mut queue = VecDeque::from([i]);
        while let Some(n) = queue.pop_front() {
            for c in self.children[n].clone() {
                if self.status[c] == JobStatus::Pending {
                    self.log(c, JobStatus::Blocked);
                    queue.push_back(c);
                }
            }
        }
    }
}

/// Runs `graph` to completion, failure or interruption.
pub fn run_graph<R: JobRunner>(
    graph: JobGraph,
    checkpoint: &Checkpoint,
    runner: &R,
    opts: &ExecOptions,
) -> Result<RunReport> {
    if opts.pool_size == 0 {
        return Err(Error::InvalidParam("pool_size must be at least 1".into()));
    }
    let mut st = State {
        graph,
        status: Vec::new(),
        remaining: Vec::new(),
        restored: Vec::new(),
        children: Vec::new(),
        ready: VecDeque::new(),
        events: Vec::new(),
        start: Instant::now(),
    };
    let mut executed = Vec::new();
    let mut restored_ids = Vec::new();
    let mut failures = Vec::new();

    // Nodes whose deps are all done, waiting for promotion or restore.
    let mut unlocked: VecDeque<usize> = st.adopt(0).into();
    let (job_tx, job_rx) = unbounded::<(usize, JobNode)>();
    let (res_tx, res_rx) = unbounded::<(usize, std::result::Result<Outputs, String>)>();

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..opts.pool_size {
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            scope.spawn(move || {
                for (i, node) in job_rx {
                    let result = catch_unwind(AssertUnwindSafe(|| runner.run(&node, checkpoint)))
                        .unwrap_or_else(|p| Err(panic_message(p.as_ref())))
                        .and_then(|out| {
                            checkpoint
                                .record(&node.id, &out)
                                .map(|()| out)
                                .map_err(|e| format!("checkpoint write failed: {e}"))
                        });
                    if res_tx.send((i, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(res_tx);

        let mut running = 0usize;
        let mut dispatched = 0usize;
        loop {
            // Promote unlocked nodes, restoring those the checkpoint vouches for.
            while let Some(i) = unlocked.pop_front() {
                let node = st.graph.nodes()[i].clone();
                let restorable = opts.resume
                    && node
                        .deps
                        .iter()
                        .all(|d| st.restored[st.graph.position(d).expect("dep")]);
                let restored = restorable
                    .then(|| checkpoint.load(&node.id))
                    .flatten()
                    .and_then(|out| runner.expand(&node, &out).ok())
                    .and_then(|extra| {
                        let before = st.graph.len();
                        st.graph.extend(extra).ok().map(|()| before)
                    });
                match restored {
                    Some(before) => {
                        st.restored[i] = true;
                        st.log(i, JobStatus::Done);
                        restored_ids.push(node.id.clone());
                        // Appended nodes already count this one as done.
                        let children = st.children[i].clone();
                        unlocked.extend(st.adopt(before));
                        for c in children {
                            st.remaining[c] -= 1;
                            if st.remaining[c] == 0 && st.status[c] == JobStatus::Pending {
                                unlocked.push_back(c);
                            }
                        }
                    }
                    None => {
                        st.log(i, JobStatus::Ready);
                        st.ready.push_back(i);
                    }
                }
            }

            let budget_left = |d: usize| opts.max_jobs.is_none_or(|m| d < m);
            while running < opts.pool_size && budget_left(dispatched) {
                let Some(i) = st.ready.pop_front() else { break };
                let node = st.graph.nodes()[i].clone();
                if let Err(e) = checkpoint.clear(&node.id) {
                    st.log(i, JobStatus::Running);
                    st.log(i, JobStatus::Failed);
                    failures.push((node.id.clone(), e.to_string()));
                    st.block_descendants(i);
                    continue;
                }
                st.log(i, JobStatus::Running);
                executed.push(node.id.clone());
                dispatched += 1;
                running += 1;
                job_tx.send((i, node)).expect("workers alive while jobs pending");
            }

            if running == 0 {
                break;
            }
            let (i, result) = res_rx.recv().expect("worker result");
            running -= 1;
            let node = st.graph.nodes()[i].clone();
            let expanded = result.and_then(|out| {
                let extra = runner.expand(&node, &out)?;
                let before = st.graph.len();
                st.graph.extend(extra).map_err(|e| e.to_string())?;
                Ok(before)
            });
            match expanded {
                Ok(before) => {
                    st.log(i, JobStatus::Done);
                    let children = st.children[i].clone();
                    unlocked.extend(st.adopt(before));
                    for c in children {
                        st.remaining[c] -= 1;
                        if st.remaining[c] == 0 && st.status[c] == JobStatus::Pending {
                            unlocked.push_back(c);
                        }
                    }
                }
                Err(msg) => {
                    st.log(i, JobStatus::Failed);
                    failures.push((node.id.clone(), msg));
                    st.block_descendants(i);
                }
            }
        }
        drop(job_tx);
        Ok(())
    })?;

    let interrupted = st
        .status
        .iter()
        .any(|s| matches!(s, JobStatus::Pending | JobStatus::Ready))
        && opts.max_jobs.is_some_and(|m| executed.len() >= m);
    let statuses = st
        .graph
        .nodes()
        .iter()
        .zip(&st.status)
        .map(|(n, &s)| (n.id.clone(), s))
        .collect();
    Ok(RunReport {
        graph: st.graph,
        statuses,
        events: st.events,
        executed,
        restored: restored_ids,
        failures,
        interrupted,
    })
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    let msg = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic payload".into());
    format!("panicked: {msg}")
}
