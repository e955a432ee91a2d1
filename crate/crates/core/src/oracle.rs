//! Annotators: a simulated oracle that answers from ground truth, and the
//! review queue a human works through.
//!
//! Every task carries a default combination. The annotator either confirms
//! it or corrects it; a correction is what counts as manual labeling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{LabelCombination, ProbabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Confirmed,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub sample_id: String,
    pub proposed: LabelCombination,
    pub prob: ProbabilityVector,
    pub iteration: usize,
    pub status: TaskStatus,
    /// Distance to the nearest correlation-table entry, when validated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl AnnotationTask {
    pub fn new(
        sample_id: impl Into<String>,
        proposed: LabelCombination,
        prob: ProbabilityVector,
        iteration: usize,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            proposed,
            prob,
            iteration,
            status: TaskStatus::Pending,
            distance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Simulated,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub sample_id: String,
    #[serde(rename = "final")]
    pub final_combination: LabelCombination,
    pub changed: bool,
    pub source: AnnotationSource,
}

/// Answers with the ground truth; `changed` is set when it differs from the
/// default.
pub fn oracle_confirm(task: &AnnotationTask, truth: Option<&LabelCombination>) -> Result<AnnotationResult> {
    let truth = truth.ok_or_else(|| Error::MissingTruth(task.sample_id.clone()))?;
    truth.check_len(task.proposed.len())?;
    Ok(AnnotationResult {
        sample_id: task.sample_id.clone(),
        changed: *truth != task.proposed,
        final_combination: truth.clone(),
        source: AnnotationSource::Simulated,
    })
}

/// Ground-truth oracle with optional label noise.
///
/// With `noise_rate > 0` each bit of the answer flips with that probability.
/// The flips are seeded by `(seed, sample id, iteration)`, so asking twice
/// gives the same answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedOracle {
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SimulatedOracle {
    fn default() -> Self {
        Self {
            noise_rate: 0.0,
            seed: 0,
        }
    }
}

impl SimulatedOracle {
    pub fn new(noise_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_rate) {
            return Err(Error::InvalidConfig(format!(
                "noise rate must be in [0, 1], got {noise_rate}"
            )));
        }
        Ok(Self { noise_rate, seed })
    }

    pub fn confirm(
        &self,
        task: &AnnotationTask,
        truth: Option<&LabelCombination>,
    ) -> Result<AnnotationResult> {
        let mut result = oracle_confirm(task, truth)?;
        if self.noise_rate > 0.0 {
            let mut rng = self.rng_for(&task.sample_id, task.iteration);
            let bits = result
                .final_combination
                .bits()
                .iter()
                .map(|&b| b ^ rng.random_bool(self.noise_rate))
                .collect();
            result.final_combination = LabelCombination::new(bits);
            result.changed = result.final_combination != task.proposed;
        }
        Ok(result)
    }

    fn rng_for(&self, id: &str, iteration: usize) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((iteration as u64).to_le_bytes());
        h.update(id.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

/// Counts of one iteration's review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueTally {
    pub pending: usize,
    pub confirmed: usize,
    pub corrected: usize,
}

impl QueueTally {
    pub fn finalized(&self) -> usize {
        self.confirmed + self.corrected
    }

    pub fn total(&self) -> usize {
        self.pending + self.finalized()
    }

    /// Corrected share of all tasks; 0 for an empty queue.
    pub fn corrected_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.corrected as f64 / self.total() as f64
        }
    }

    /// Finalized share of all tasks.
    pub fn reviewed_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.finalized() as f64 / self.total() as f64
        }
    }
}

/// Tasks in selection order. Tasks move from pending to confirmed or
/// corrected exactly once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationQueue {
    order: Vec<String>,
    tasks: BTreeMap<String, AnnotationTask>,
    results: BTreeMap<String, AnnotationResult>,
}

impl AnnotationQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, tasks: Vec<AnnotationTask>) -> Result<()> {
        let mut incoming = std::collections::BTreeSet::new();
        for t in &tasks {
            let pending_here = self
                .tasks
                .get(&t.sample_id)
                .is_some_and(|old| old.status == TaskStatus::Pending);
            if pending_here || !incoming.insert(t.sample_id.as_str()) {
                return Err(Error::AlreadyPending(t.sample_id.clone()));
            }
        }
        for mut t in tasks {
            t.status = TaskStatus::Pending;
            if self.tasks.contains_key(&t.sample_id) {
                self.order.retain(|id| id != &t.sample_id);
                self.results.remove(&t.sample_id);
            }
            self.order.push(t.sample_id.clone());
            self.tasks.insert(t.sample_id.clone(), t);
        }
        Ok(())
    }

    /// First pending task in selection order.
    pub fn next_pending(&self) -> Option<&AnnotationTask> {
        self.order
            .iter()
            .map(|id| &self.tasks[id])
            .find(|t| t.status == TaskStatus::Pending)
    }

    pub fn pending(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.order
            .iter()
            .map(|id| &self.tasks[id])
            .filter(|t| t.status == TaskStatus::Pending)
    }

    pub fn task(&self, id: &str) -> Option<&AnnotationTask> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.order.iter().map(|id| &self.tasks[id])
    }

    pub fn submit(
        &mut self,
        sample_id: &str,
        final_combination: LabelCombination,
        source: AnnotationSource,
    ) -> Result<AnnotationResult> {
        let task = self
            .tasks
            .get_mut(sample_id)
            .ok_or_else(|| Error::UnknownSample(sample_id.to_string()))?;
        if task.status != TaskStatus::Pending {
            return Err(Error::AlreadyFinalized(sample_id.to_string()));
        }
        final_combination.check_len(task.proposed.len())?;
        let changed = final_combination != task.proposed;
        task.status = if changed {
            TaskStatus::Corrected
        } else {
            TaskStatus::Confirmed
        };
        let result = AnnotationResult {
            sample_id: sample_id.to_string(),
            final_combination,
            changed,
            source,
        };
        self.results.insert(sample_id.to_string(), result.clone());
        Ok(result)
    }

    pub fn is_drained(&self) -> bool {
        self.next_pending().is_none()
    }

    pub fn tally(&self) -> QueueTally {
        let mut tally = QueueTally::default();
        for t in self.tasks.values() {
            match t.status {
                TaskStatus::Pending => tally.pending += 1,
                TaskStatus::Confirmed => tally.confirmed += 1,
                TaskStatus::Corrected => tally.corrected += 1,
            }
        }
        tally
    }

    /// Results in selection order.
    pub fn results(&self) -> Vec<AnnotationResult> {
        self.order
            .iter()
            .filter_map(|id| self.results.get(id))
            .cloned()
            .collect()
    }

    /// Removes and returns all results once every task is finalized.
    pub fn drain(&mut self) -> Result<Vec<AnnotationResult>> {
        let tally = self.tally();
        if tally.pending > 0 {
            return Err(Error::QueueNotEmpty(tally.pending));
        }
        let results = self.results();
        *self = Self::default();
        Ok(results)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}
