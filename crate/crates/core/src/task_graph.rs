//! Task/subtask DAG with effort-weighted progress accounting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_skill, AgentId, Skill, TaskId, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Ready,
    InProgress,
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub task_id: TaskId,
    pub parent_id: Option<TaskId>,
    pub description: String,
    pub estimated_hours: f64,
    pub required_skills: BTreeSet<Skill>,
    pub dependencies: BTreeSet<TaskId>,
    pub assignee: Option<AgentId>,
    /// Uncapped: overshoot past the estimate is kept so credited hours
    /// always sum to this value.
    pub accumulated_effective_hours: f64,
    pub status: TaskStatus,
    pub children: Vec<TaskId>,
}

impl TaskNode {
    /// P_i, capped at 1.
    pub fn progress(&self) -> f64 {
        (self.accumulated_effective_hours / self.estimated_hours).min(1.0)
    }

    pub fn is_done(&self) -> bool {
        self.status == TaskStatus::Done
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn remaining_hours(&self) -> f64 {
        (self.estimated_hours - self.accumulated_effective_hours).max(0.0)
    }
}

/// One entry of a decomposition; dependencies index into the sibling list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub description: String,
    pub estimated_hours: f64,
    pub required_skills: Vec<Skill>,
    #[serde(default)]
    pub dependencies: Vec<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} already has subtasks")]
    AlreadyDecomposed(TaskId),
    #[error("cycle detected")]
    CycleDetected,
    #[error("bad dependency: index {index} out of range for {count} subtasks")]
    BadDependency { index: usize, count: usize },
    #[error("no subtasks under {0}")]
    NoSubtasks(TaskId),
    #[error("task {0} already done")]
    AlreadyDone(TaskId),
    #[error("task {0} is not ready")]
    NotReady(TaskId),
    #[error("task {0} is not a leaf")]
    NotLeaf(TaskId),
    #[error("non-positive effort on subtask {0}")]
    NonPositiveEffort(usize),
    #[error("contract violation: negative work {0}")]
    NegativeWork(f64),
}

/// Result of crediting work to a leaf.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkOutcome {
    pub accumulated: f64,
    /// Effective hours credited beyond the estimate.
    pub overshoot: f64,
    /// Tasks (the leaf and any ancestors) that became done.
    pub completed: Vec<TaskId>,
    /// Siblings whose last dependency just completed.
    pub unblocked: Vec<TaskId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub nodes: BTreeMap<TaskId, TaskNode>,
    pub roots: BTreeSet<TaskId>,
}

fn done_threshold(estimate: f64) -> f64 {
    estimate - 1e-9 * estimate.max(1.0)
}

impl TaskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_specs(specs: &[TaskSpec]) -> Self {
        let mut g = Self::new();
        for s in specs {
            g.add_root(s);
        }
        g
    }

    pub fn add_root(&mut self, spec: &TaskSpec) -> TaskId {
        let id = TaskId::new(format!("T{}", self.roots.len() + 1));
        self.nodes.insert(
            id.clone(),
            TaskNode {
                task_id: id.clone(),
                parent_id: None,
                description: spec.description.clone(),
                estimated_hours: spec.estimated_hours,
                required_skills: spec.required_skills.iter().map(|s| normalize_skill(s)).collect(),
                dependencies: BTreeSet::new(),
                assignee: None,
                accumulated_effective_hours: 0.0,
                status: TaskStatus::Ready,
                children: Vec::new(),
            },
        );
        self.roots.insert(id.clone());
        id
    }

    pub fn get(&self, id: &TaskId) -> Result<&TaskNode, GraphError> {
        self.nodes.get(id).ok_or_else(|| GraphError::UnknownTask(id.clone()))
    }

    fn get_mut(&mut self, id: &TaskId) -> Result<&mut TaskNode, GraphError> {
        self.nodes.get_mut(id).ok_or_else(|| GraphError::UnknownTask(id.clone()))
    }

    /// Inserts the subtasks of `parent`, resolving sibling indices to ids.
    /// Nothing is inserted if validation fails.
    pub fn add_subtasks(&mut self, parent: &TaskId, specs: &[SubtaskSpec]) -> Result<Vec<TaskId>, GraphError> {
        let p = self.get(parent)?;
        if !p.children.is_empty() {
            return Err(GraphError::AlreadyDecomposed(parent.clone()));
        }
        let count = specs.len();
        for (i, s) in specs.iter().enumerate() {
            if s.estimated_hours.is_nan() || s.estimated_hours <= 0.0 {
                return Err(GraphError::NonPositiveEffort(i));
            }
            if let Some(&index) = s.dependencies.iter().find(|&&d| d >= count) {
                return Err(GraphError::BadDependency { index, count });
            }
        }
        let deps: Vec<Vec<usize>> = specs.iter().map(|s| s.dependencies.clone()).collect();
        if topo_order(&deps).is_none() {
            return Err(GraphError::CycleDetected);
        }

        let ids: Vec<TaskId> = (1..=count).map(|i| TaskId::new(format!("{}.{}", parent, i))).collect();
        for (i, s) in specs.iter().enumerate() {
            let dependencies: BTreeSet<TaskId> = s.dependencies.iter().map(|&d| ids[d].clone()).collect();
            let status = if dependencies.is_empty() { TaskStatus::Ready } else { TaskStatus::Pending };
            self.nodes.insert(
                ids[i].clone(),
                TaskNode {
                    task_id: ids[i].clone(),
                    parent_id: Some(parent.clone()),
                    description: s.description.clone(),
                    estimated_hours: s.estimated_hours,
                    required_skills: s.required_skills.iter().map(|k| normalize_skill(k)).collect(),
                    dependencies,
                    assignee: None,
                    accumulated_effective_hours: 0.0,
                    status,
                    children: Vec::new(),
                },
            );
        }
        let p = self.get_mut(parent)?;
        p.children = ids.clone();
        p.status = TaskStatus::InProgress;
        Ok(ids)
    }

    /// Non-done leaves whose dependencies are all done.
    pub fn ready_tasks(&self) -> BTreeSet<TaskId> {
        self.nodes
            .values()
            .filter(|n| n.is_leaf() && !n.is_done() && self.deps_done(n))
            .map(|n| n.task_id.clone())
            .collect()
    }

    pub fn is_ready(&self, id: &TaskId) -> bool {
        self.nodes.get(id).is_some_and(|n| n.is_leaf() && !n.is_done() && self.deps_done(n))
    }

    fn deps_done(&self, n: &TaskNode) -> bool {
        n.dependencies.iter().all(|d| self.nodes.get(d).is_some_and(|x| x.is_done()))
    }

    /// Effort-weighted mean of child progress.
    pub fn parent_progress(&self, parent: &TaskId) -> Result<f64, GraphError> {
        let p = self.get(parent)?;
        if p.children.is_empty() {
            return Err(GraphError::NoSubtasks(parent.clone()));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for c in &p.children {
            let n = self.get(c)?;
            num += n.estimated_hours * n.progress();
            den += n.estimated_hours;
        }
        Ok(num / den)
    }

    /// Progress of any node: leaves report P_i, parents the weighted mean.
    pub fn progress(&self, id: &TaskId) -> Result<f64, GraphError> {
        let n = self.get(id)?;
        if n.is_leaf() {
            Ok(n.progress())
        } else {
            self.parent_progress(id)
        }
    }

    pub fn record_work(&mut self, task: &TaskId, effective_hours: f64) -> Result<WorkOutcome, GraphError> {
        if effective_hours < 0.0 || effective_hours.is_nan() {
            return Err(GraphError::NegativeWork(effective_hours));
        }
        let n = self.get(task)?;
        if n.is_done() {
            return Err(GraphError::AlreadyDone(task.clone()));
        }
        if !n.is_leaf() {
            return Err(GraphError::NotLeaf(task.clone()));
        }
        if !self.deps_done(n) {
            return Err(GraphError::NotReady(task.clone()));
        }

        let n = self.get_mut(task)?;
        let before = n.accumulated_effective_hours;
        n.accumulated_effective_hours += effective_hours;
        let mut out = WorkOutcome { accumulated: n.accumulated_effective_hours, ..Default::default() };
        if n.accumulated_effective_hours >= done_threshold(n.estimated_hours) {
            out.overshoot = (n.accumulated_effective_hours - n.estimated_hours.max(before)).max(0.0);
            n.status = TaskStatus::Done;
            out.completed.push(task.clone());
            let parent = n.parent_id.clone();
            out.unblocked = self.refresh_dependents(task);
            let mut cursor = parent;
            while let Some(pid) = cursor {
                let p = self.get(&pid)?;
                let all_done = p.children.iter().all(|c| self.nodes[c].is_done());
                if !all_done {
                    break;
                }
                let next = p.parent_id.clone();
                self.get_mut(&pid)?.status = TaskStatus::Done;
                out.completed.push(pid.clone());
                out.unblocked.extend(self.refresh_dependents(&pid));
                cursor = next;
            }
        } else {
            n.status = TaskStatus::InProgress;
        }
        Ok(out)
    }

    fn refresh_dependents(&mut self, done: &TaskId) -> Vec<TaskId> {
        let candidates: Vec<TaskId> = self
            .nodes
            .values()
            .filter(|n| n.status == TaskStatus::Pending && n.dependencies.contains(done))
            .map(|n| n.task_id.clone())
            .collect();
        let mut unblocked = Vec::new();
        for id in candidates {
            if self.deps_done(&self.nodes[&id]) {
                self.nodes.get_mut(&id).unwrap().status = TaskStatus::Ready;
                unblocked.push(id);
            }
        }
        unblocked
    }

    /// Siblings that list `task` among their dependencies.
    pub fn dependents_of(&self, task: &TaskId) -> Vec<TaskId> {
        self.nodes.values().filter(|n| n.dependencies.contains(task)).map(|n| n.task_id.clone()).collect()
    }

    pub fn root_of(&self, task: &TaskId) -> TaskId {
        let mut cur = task.clone();
        while let Some(p) = self.nodes.get(&cur).and_then(|n| n.parent_id.clone()) {
            cur = p;
        }
        cur
    }

    pub fn all_roots_done(&self) -> bool {
        self.roots.iter().all(|r| self.nodes[r].is_done())
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TaskNode> {
        self.nodes.values().filter(|n| n.is_leaf())
    }

    /// Re-checks acyclicity of every sibling group.
    pub fn is_acyclic(&self) -> bool {
        self.nodes.values().filter(|n| !n.children.is_empty()).all(|p| {
            let index: BTreeMap<&TaskId, usize> = p.children.iter().enumerate().map(|(i, c)| (c, i)).collect();
            let deps: Vec<Vec<usize>> = p
                .children
                .iter()
                .map(|c| self.nodes[c].dependencies.iter().filter_map(|d| index.get(d).copied()).collect())
                .collect();
            topo_order(&deps).is_some()
        })
    }
}

/// Kahn's algorithm over index adjacency (`deps[i]` lists what i waits on).
/// Returns None when a cycle exists.
pub fn topo_order(deps: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = deps.len();
    let mut indegree = vec![0usize; n];
    let mut out_edges = vec![Vec::new(); n];
    for (i, ds) in deps.iter().enumerate() {
        for &d in ds {
            if d >= n {
                return None;
            }
            indegree[i] += 1;
            out_edges[d].push(i);
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = queue.pop() {
        order.push(i);
        for &j in &out_edges[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                queue.push(j);
            }
        }
    }
    (order.len() == n).then_some(order)
}
