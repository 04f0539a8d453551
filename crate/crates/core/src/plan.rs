//! Plan extraction from a subtask tree with discounted UCB, subtask
//! termination by cosine similarity, and the per-subtask statistics.

use std::fmt::Write as _;
use std::path::Path;

use crate::tree::PlanTree;
use crate::{Error, Result};

pub const DEFAULT_KAPPA: f64 = 0.8;
pub const DEFAULT_DELTA: f64 = 0.5;

/// Selection count and mean segment return of one subtask.
///
/// Starts at `c = 1, r̄ = 0`, i.e. one zero-return pseudo-observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbStats {
    pub count: u64,
    pub mean_return: f64,
}

impl Default for UcbStats {
    fn default() -> Self {
        Self { count: 1, mean_return: 0.0 }
    }
}

impl UcbStats {
    pub fn record(&mut self, ret: f64) {
        self.count += 1;
        self.mean_return += (ret - self.mean_return) / self.count as f64;
    }
}

/// `v = r̄ + 0.5·sqrt(2 ln c^pa / c)`.
pub fn ucb_value(stats: UcbStats, parent_count: u64) -> Result<f64> {
    if stats.count == 0 || parent_count == 0 {
        return Err(Error::Invalid("UCB counts must be at least 1".into()));
    }
    Ok(stats.mean_return + 0.5 * (2.0 * (parent_count as f64).ln() / stats.count as f64).sqrt())
}

/// Statistics for every subtask, shared across episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbTable {
    stats: Vec<UcbStats>,
}

impl UcbTable {
    pub fn new(num_subtasks: usize) -> Self {
        Self { stats: vec![UcbStats::default(); num_subtasks] }
    }

    pub fn from_stats(stats: Vec<UcbStats>) -> Self {
        Self { stats }
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn get(&self, subtask: usize) -> Result<UcbStats> {
        self.stats.get(subtask).copied().ok_or_else(|| Error::Invalid(format!("unknown subtask id {subtask}")))
    }

    /// UCB value of `subtask` when reached from a node of subtask `parent`.
    pub fn value(&self, subtask: usize, parent: usize) -> Result<f64> {
        ucb_value(self.get(subtask)?, self.get(parent)?.count)
    }

    pub fn record_segment(&mut self, subtask: usize, ret: f64) -> Result<()> {
        if !ret.is_finite() {
            return Err(Error::NonFinite(format!("segment return for subtask {subtask}")));
        }
        let n = self.stats.len();
        self.stats.get_mut(subtask).ok_or_else(|| Error::Invalid(format!("unknown subtask id {subtask} of {n}")))?.record(ret);
        Ok(())
    }

    /// Rows `subtask,c,mean_return,v` where `v` uses the largest count in the
    /// table as the parent count.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let top = self.stats.iter().map(|s| s.count).max().unwrap_or(1);
        let mut out = String::from("subtask,c,mean_return,v\n");
        for (i, s) in self.stats.iter().enumerate() {
            let name = names.get(i).map_or_else(|| i.to_string(), |n| n.to_string());
            let v = ucb_value(*s, top).unwrap_or(f64::NAN);
            let _ = writeln!(out, "{name},{},{},{}", s.count, s.mean_return, v);
        }
        out
    }

    pub fn write_csv(&self, path: &Path, names: &[&str]) -> Result<()> {
        std::fs::write(path, self.to_csv(names))?;
        Ok(())
    }
}

/// `d̂ = Σ_l κ^l · e^{l,l+1} · v_{l+1}` over `(edge, value)` pairs from the root.
pub fn discounted_path_length(path: &[(f64, f64)], kappa: f64) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::Invalid("discounted length of an empty path".into()));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::Invalid(format!("κ = {kappa} outside (0, 1]")));
    }
    let mut total = 0.0;
    let mut w = 1.0;
    for &(e, v) in path {
        total += w * e * v;
        w *= kappa;
    }
    Ok(total)
}

/// Subtask sequence along the chosen root-to-leaf path.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub subtasks: Vec<usize>,
    pub nodes: Vec<usize>,
    pub cursor: usize,
}

impl Plan {
    pub fn current(&self) -> Option<usize> {
        self.subtasks.get(self.cursor).copied()
    }

    pub fn advance(&mut self) -> Option<usize> {
        self.cursor = (self.cursor + 1).min(self.subtasks.len());
        self.current()
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor >= self.subtasks.len()
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }
}

/// `(edge α, node UCB value)` pairs along a node path.
pub fn path_terms(tree: &PlanTree, path: &[usize], table: &UcbTable) -> Result<Vec<(f64, f64)>> {
    path.windows(2)
        .map(|w| {
            let (parent, child) = (&tree.nodes[w[0]], &tree.nodes[w[1]]);
            let alpha = child.alpha.ok_or_else(|| Error::Invalid("non-root node without edge weight".into()))?;
            Ok((alpha, table.value(child.subtask, parent.subtask)?))
        })
        .collect()
}

fn plan_from(tree: &PlanTree, nodes: Vec<usize>) -> Plan {
    Plan { subtasks: nodes.iter().map(|&i| tree.nodes[i].subtask).collect(), nodes, cursor: 0 }
}

fn by_value_then_ids(tree: &PlanTree, scored: Vec<(f64, Vec<usize>)>) -> Result<Plan> {
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for (value, path) in scored {
        if !value.is_finite() {
            return Err(Error::NonFinite("path score".into()));
        }
        let ids: Vec<usize> = path.iter().map(|&i| tree.nodes[i].subtask).collect();
        let better = match &best {
            None => true,
            Some((bv, bids, _)) => value > *bv || (value == *bv && ids < *bids),
        };
        if better {
            best = Some((value, ids, path));
        }
    }
    let (_, _, path) = best.ok_or_else(|| Error::Invalid("tree has no nodes".into()))?;
    Ok(plan_from(tree, path))
}

/// Root-to-leaf path with the largest discounted length; exact ties go to the
/// lexicographically smallest subtask-id sequence. A single-node tree yields
/// the root alone.
pub fn select_plan(tree: &PlanTree, table: &UcbTable, kappa: f64) -> Result<Plan> {
    if tree.nodes.is_empty() {
        return Err(Error::Invalid("empty tree".into()));
    }
    if tree.nodes.len() == 1 {
        return Ok(plan_from(tree, vec![0]));
    }
    let scored = tree
        .paths()
        .into_iter()
        .map(|p| Ok((discounted_path_length(&path_terms(tree, &p, table)?, kappa)?, p)))
        .collect::<Result<Vec<_>>>()?;
    by_value_then_ids(tree, scored)
}

/// Path with the largest product of edge weights.
pub fn max_selection(tree: &PlanTree) -> Result<Plan> {
    let scored = tree
        .paths()
        .into_iter()
        .map(|p| (p[1..].iter().map(|&i| tree.nodes[i].alpha.unwrap_or(1.0)).product(), p))
        .collect();
    by_value_then_ids(tree, scored)
}

/// Follows the heaviest edge layer by layer.
pub fn greedy_selection(tree: &PlanTree) -> Result<Plan> {
    if tree.nodes.is_empty() {
        return Err(Error::Invalid("empty tree".into()));
    }
    let mut path = vec![0usize];
    loop {
        let node = &tree.nodes[*path.last().expect("non-empty")];
        let next = node.children.iter().copied().max_by(|&a, &b| {
            let (na, nb) = (&tree.nodes[a], &tree.nodes[b]);
            na.alpha.unwrap_or(0.0).total_cmp(&nb.alpha.unwrap_or(0.0)).then(nb.subtask.cmp(&na.subtask))
        });
        match next {
            Some(c) => path.push(c),
            None => return Ok(plan_from(tree, path)),
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// True when the query drifts away from the executing subtask's embedding:
/// `cos(v^q, v^T) < delta`. A zero vector counts as similarity 0.
pub fn should_terminate(query: &[f64], key: &[f64], delta: f64) -> Result<bool> {
    Ok(cosine_similarity(query, key)? < delta)
}
