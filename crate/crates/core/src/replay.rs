//! Proportional prioritized replay over an unbounded transition store.
//!
//! Sampling weight of record `i` is `p_i^a / sum_j p_j^a`; lookups go
//! through a cumulative-sum tree so a draw costs `O(log n)`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub instance_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub priority_exponent: f64,
    pub importance_exponent: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            priority_exponent: 0.2,
            importance_exponent: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub indices: Vec<usize>,
    /// Importance weights, scaled so the largest in the draw is 1.
    pub weights: Vec<f64>,
}

/// Binary tree over a power-of-two leaf array. Internal nodes are recomputed
/// from their children on every update, so no floating-point drift builds up.
#[derive(Debug, Clone, Default)]
struct SumTree {
    leaves: usize,
    sum: Vec<f64>,
    max: Vec<f64>,
}

impl SumTree {
    fn grow(&mut self, needed: usize) {
        if needed <= self.leaves {
            return;
        }
        let mut leaves = self.leaves.max(1);
        while leaves < needed {
            leaves *= 2;
        }
        let mut sum = vec![0.0; 2 * leaves];
        let mut max = vec![0.0; 2 * leaves];
        for i in 0..self.leaves {
            sum[leaves + i] = self.sum[self.leaves + i];
            max[leaves + i] = self.max[self.leaves + i];
        }
        for node in (1..leaves).rev() {
            sum[node] = sum[2 * node] + sum[2 * node + 1];
            max[node] = max[2 * node].max(max[2 * node + 1]);
        }
        self.leaves = leaves;
        self.sum = sum;
        self.max = max;
    }

    fn set(&mut self, i: usize, weight: f64, raw: f64) {
        let mut node = self.leaves + i;
        self.sum[node] = weight;
        self.max[node] = raw;
        while node > 1 {
            node /= 2;
            self.sum[node] = self.sum[2 * node] + self.sum[2 * node + 1];
            self.max[node] = self.max[2 * node].max(self.max[2 * node + 1]);
        }
    }

    fn total(&self) -> f64 {
        if self.leaves == 0 {
            0.0
        } else {
            self.sum[1]
        }
    }

    fn max_raw(&self) -> f64 {
        if self.leaves == 0 {
            0.0
        } else {
            self.max[1]
        }
    }

    fn weight(&self, i: usize) -> f64 {
        self.sum[self.leaves + i]
    }

    /// Leaf whose cumulative interval contains `u`. Never returns a
    /// zero-weight leaf while the total is positive.
    fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = self.sum[2 * node];
            let right = self.sum[2 * node + 1];
            if (u < left && left > 0.0) || right <= 0.0 {
                node *= 2;
            } else {
                u -= left;
                node = 2 * node + 1;
            }
        }
        node - self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    config: ReplayConfig,
    records: Vec<Transition>,
    priorities: Vec<f64>,
    tree: SumTree,
}

impl PrioritizedBuffer {
    pub fn new(config: ReplayConfig) -> Self {
        Self {
            config,
            records: Vec::new(),
            priorities: Vec::new(),
            tree: SumTree::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.records[i]
    }

    pub fn priority(&self, i: usize) -> f64 {
        self.priorities[i]
    }

    pub fn max_priority(&self) -> f64 {
        if self.is_empty() {
            1.0
        } else {
            self.tree.max_raw()
        }
    }

    /// Appends at the current maximum priority (1.0 when empty).
    pub fn push(&mut self, record: Transition) {
        let p = self.max_priority();
        self.push_with_priority(record, p);
    }

    /// Appends with an explicit raw priority; no floor is applied.
    pub fn push_with_priority(&mut self, record: Transition, priority: f64) {
        let i = self.records.len();
        self.records.push(record);
        self.priorities.push(priority);
        self.tree.grow(i + 1);
        self.tree
            .set(i, priority.powf(self.config.priority_exponent), priority);
    }

    /// Exact sampling probability of every record.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.tree.total();
        (0..self.len()).map(|i| self.tree.weight(i) / total).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        let total = self.tree.total();
        if self.is_empty() || total <= 0.0 {
            return Err(Error::InvalidState(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        let count = self.len() as f64;
        let mut indices = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let i = self.tree.find(u);
            let p = self.tree.weight(i) / total;
            indices.push(i);
            weights.push((count * p).powf(-self.config.importance_exponent));
        }
        let top = weights.iter().cloned().fold(0.0, f64::max);
        for w in &mut weights {
            *w /= top;
        }
        Ok(Sample { indices, weights })
    }

    /// Sets each listed priority to `|error| + 1e-6`.
    pub fn update_priorities(&mut self, indices: &[usize], errors: &[f64]) -> Result<()> {
        if indices.len() != errors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} indices but {} priorities",
                indices.len(),
                errors.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "priority index {bad} out of range for buffer of {}",
                self.len()
            )));
        }
        for (&i, &e) in indices.iter().zip(errors) {
            if !e.is_finite() {
                return Err(Error::numerical("priority update", Some(i)));
            }
            let p = e.abs() + PRIORITY_FLOOR;
            self.priorities[i] = p;
            self.tree.set(i, p.powf(self.config.priority_exponent), p);
        }
        Ok(())
    }

    /// Writes every record and its priority as CSV.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let dim = self.records.first().map_or(0, |r| r.state.len());
        let mut out = String::new();
        let cols: Vec<String> = (0..dim)
            .map(|d| format!("s{d}"))
            .chain(["action".into(), "reward".into()])
            .chain((0..dim).map(|d| format!("next_s{d}")))
            .chain(["done".into(), "instance_id".into(), "priority".into()])
            .collect();
        out.push_str(&cols.join(","));
        out.push('\n');
        for (r, p) in self.records.iter().zip(&self.priorities) {
            for v in &r.state {
                let _ = write!(out, "{v},");
            }
            let _ = write!(out, "{},{},", r.action, r.reward);
            for v in &r.next_state {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{},{},{}", u8::from(r.done), r.instance_id, p);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
