//! The active-learning loop.
//!
//! One iteration is split in two halves so that a human can sit between them:
//!
//! 1. [`ActiveLearner::propose`] predicts the candidate pool, selects a batch,
//!    derives a default combination for each selected sample and returns the
//!    annotation tasks.
//! 2. [`ActiveLearner::complete`] takes the finalized annotations, moves the
//!    samples to the labeled set, rebuilds and merges the correlation table,
//!    fine-tunes the head and evaluates on the test set.
//!
//! [`ActiveLearner::run_iteration`] chains both with the simulated oracle.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{init_model, ClassifierModel, Example, TrainConfig};
use crate::dataset::dataset_hash;
use crate::error::{Error, Result};
use crate::label_stream::{
    assign_pseudo_with, build_table, refine_pseudo_with, update_table, CorrelationTable,
    PseudoLabelConfig, RefinementOutcome,
};
use crate::metrics::{evaluate, Evaluation};
use crate::model::{Dataset, LabelCombination, PoolPartition, ProbabilityVector, Sample};
use crate::oracle::{AnnotationResult, AnnotationTask, SimulatedOracle};
use crate::sample_stream::{select, ActionBatch, SelectionStrategy};

/// How default annotations are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelStreamMode {
    /// No defaults; every selected sample is annotated by hand.
    Manual,
    /// Thresholded predictions as defaults.
    PseudoLabel,
    /// Thresholded predictions refined through the correlation table.
    #[default]
    Validated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneScope {
    /// Only the samples annotated in this iteration.
    Batch,
    /// Everything labeled so far.
    #[default]
    Cumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ALConfig {
    pub k_max: usize,
    pub max_iterations: usize,
    pub strategy: SelectionStrategy,
    pub pseudo: PseudoLabelConfig,
    pub label_stream: LabelStreamMode,
    /// Stop once test macro-accuracy reaches this value.
    pub target_metric: Option<f64>,
    pub seed: u64,
    pub finetune_scope: FinetuneScope,
    pub train: TrainConfig,
    pub oracle_noise: f64,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            k_max: 25,
            max_iterations: 20,
            strategy: SelectionStrategy::Mlm,
            pseudo: PseudoLabelConfig::default(),
            label_stream: LabelStreamMode::Validated,
            target_metric: None,
            seed: 42,
            finetune_scope: FinetuneScope::Cumulative,
            train: TrainConfig::default(),
            oracle_noise: 0.0,
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.pseudo.threshold > 0.0 && self.pseudo.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be in (0, 1), got {}",
                self.pseudo.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.oracle_noise) {
            return Err(Error::InvalidConfig("oracle_noise must be in [0, 1]".into()));
        }
        self.train.validate()
    }
}

/// SplitMix64 finalizer, used to derive per-iteration seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub selected: Vec<String>,
    /// Score of each selected sample under the active strategy.
    pub selected_scores: Vec<f64>,
    /// Tasks whose final combination differs from the default (all tasks in
    /// manual mode).
    pub corrected: usize,
    pub corrected_fraction: f64,
    /// Tasks a human looked at; every task is reviewed before the loop moves.
    pub reviewed_fraction: f64,
    /// Defaults the correlation table changed from the thresholded proposal.
    pub refined_changed: usize,
    pub labeled_count: usize,
    pub labeled_fraction: f64,
    pub pool_remaining: usize,
    pub table_size: usize,
    pub evaluation: Evaluation,
    pub macro_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    PoolExhausted,
    TargetReached,
}

/// Work handed to the annotator for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub iteration: usize,
    pub batch: ActionBatch,
    pub tasks: Vec<AnnotationTask>,
    pub outcomes: Vec<RefinementOutcome>,
}

#[derive(Debug, Clone)]
pub struct ActiveLearner {
    config: ALConfig,
    dataset: Arc<Dataset>,
    partition: PoolPartition,
    model: ClassifierModel,
    table: CorrelationTable,
    completed: usize,
    pool_size: usize,
    pending: Option<Proposal>,
    reports: Vec<IterationReport>,
}

impl ActiveLearner {
    /// Starts from a freshly initialized model seeded by `config.seed`.
    pub fn new(config: ALConfig, dataset: Arc<Dataset>) -> Result<Self> {
        let model_cfg = TrainConfig {
            seed: config.seed,
            ..config.train.clone()
        };
        let model = init_model(dataset.schema(), dataset.feature_dim(), &model_cfg)?;
        Self::with_model(config, dataset, model)
    }

    pub fn with_model(
        config: ALConfig,
        dataset: Arc<Dataset>,
        model: ClassifierModel,
    ) -> Result<Self> {
        config.validate()?;
        if model.feature_dim() != dataset.feature_dim() || model.schema() != dataset.schema() {
            return Err(Error::InvalidConfig(
                "model does not match the dataset schema or feature dimension".into(),
            ));
        }
        let partition = PoolPartition::from_dataset(&dataset)?;
        for id in partition.candidate().iter().chain(partition.test()) {
            if dataset.require(id)?.truth.is_none() && partition.test().contains(id) {
                return Err(Error::MissingTruth(id.clone()));
            }
        }
        let pool_size = partition.candidate().len();
        Ok(Self {
            config,
            dataset,
            partition,
            model,
            table: CorrelationTable::default(),
            completed: 0,
            pool_size,
            pending: None,
            reports: Vec::new(),
        })
    }

    pub fn config(&self) -> &ALConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn partition(&self) -> &PoolPartition {
        &self.partition
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn table(&self) -> &CorrelationTable {
        &self.table
    }

    pub fn reports(&self) -> &[IterationReport] {
        &self.reports
    }

    pub fn completed_iterations(&self) -> usize {
        self.completed
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn pending(&self) -> Option<&Proposal> {
        self.pending.as_ref()
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.partition.labeled().len() as f64 / self.pool_size as f64
    }

    /// Why the loop should stop now, if it should.
    pub fn stop_reason(&self) -> Option<StopReason> {
        if let (Some(target), Some(last)) = (self.config.target_metric, self.reports.last()) {
            if last.macro_accuracy >= target {
                return Some(StopReason::TargetReached);
            }
        }
        if self.partition.candidate().is_empty() {
            return Some(StopReason::PoolExhausted);
        }
        if self.completed >= self.config.max_iterations {
            return Some(StopReason::MaxIterations);
        }
        None
    }

    fn samples<'a>(&'a self, ids: impl IntoIterator<Item = &'a String>) -> Result<Vec<&'a Sample>> {
        ids.into_iter().map(|id| self.dataset.require(id)).collect()
    }

    /// Selects this iteration's batch and derives the default annotations.
    /// Calling it again before [`complete`](Self::complete) returns the same
    /// proposal.
    pub fn propose(&mut self) -> Result<&Proposal> {
        if self.pending.is_none() {
            let proposal = self.build_proposal()?;
            self.pending = Some(proposal);
        }
        Ok(self.pending.as_ref().expect("just set"))
    }

    fn build_proposal(&self) -> Result<Proposal> {
        if self.partition.candidate().is_empty() {
            return Err(Error::Empty("candidate pool"));
        }
        let t = self.completed + 1;
        let pool = self.samples(self.partition.candidate())?;
        let mut state = self.model.predict_proba(&pool)?;
        state.iteration = t;
        let schema = self.dataset.schema();
        let batch = select(
            &state,
            self.config.strategy,
            schema,
            self.config.k_max,
            mix_seed(self.config.seed, t as u64),
        )?;

        let mut tasks = Vec::with_capacity(batch.len());
        let mut outcomes = Vec::with_capacity(batch.len());
        for id in &batch.ids {
            let p = state.row(id).expect("selected from state").clone();
            let outcome = match self.config.label_stream {
                LabelStreamMode::Validated => {
                    refine_pseudo_with(&p, &self.table, &self.config.pseudo)?
                }
                LabelStreamMode::PseudoLabel | LabelStreamMode::Manual => {
                    let proposed =
                        assign_pseudo_with(&p, self.config.pseudo.threshold, self.config.pseudo.boundary)?;
                    RefinementOutcome {
                        refined: proposed.clone(),
                        proposed,
                        distance: None,
                        changed: false,
                        validated: false,
                    }
                }
            };
            let default = match self.config.label_stream {
                LabelStreamMode::Manual => LabelCombination::zeros(schema.m()),
                _ => outcome.refined.clone(),
            };
            let mut task = AnnotationTask::new(id.clone(), default, p, t);
            task.distance = outcome.distance;
            tasks.push(task);
            outcomes.push(outcome);
        }
        Ok(Proposal {
            iteration: t,
            batch,
            tasks,
            outcomes,
        })
    }

    /// Applies the finalized annotations of the pending proposal.
    pub fn complete(&mut self, results: &[AnnotationResult]) -> Result<IterationReport> {
        let proposal = self
            .pending
            .as_ref()
            .ok_or(Error::Empty("pending proposal"))?;
        let by_id: BTreeMap<&str, &AnnotationResult> =
            results.iter().map(|r| (r.sample_id.as_str(), r)).collect();
        if by_id.len() != results.len() {
            let dup = results
                .iter()
                .find(|r| results.iter().filter(|o| o.sample_id == r.sample_id).count() > 1)
                .expect("a duplicate exists");
            return Err(Error::DuplicateId(dup.sample_id.clone()));
        }
        let m = self.dataset.schema().m();
        let mut annotated = Vec::with_capacity(proposal.tasks.len());
        let mut corrected = 0;
        for task in &proposal.tasks {
            let r = by_id
                .get(task.sample_id.as_str())
                .ok_or_else(|| Error::QueueNotEmpty(proposal.tasks.len() - results.len()))?;
            r.final_combination.check_len(m)?;
            if r.final_combination != task.proposed {
                corrected += 1;
            }
            annotated.push((task.sample_id.clone(), r.final_combination.clone()));
        }
        if let Some(extra) = results
            .iter()
            .find(|r| !proposal.tasks.iter().any(|t| t.sample_id == r.sample_id))
        {
            return Err(Error::UnknownSample(extra.sample_id.clone()));
        }
        if self.config.label_stream == LabelStreamMode::Manual {
            corrected = proposal.tasks.len();
        }

        let t = proposal.iteration;
        let partition = self.partition.commit_annotations(&annotated)?;

        // correlation table from this iteration's confirmed samples
        let probs: Vec<&ProbabilityVector> = proposal.tasks.iter().map(|task| &task.prob).collect();
        let combos: Vec<&LabelCombination> = annotated.iter().map(|(_, c)| c).collect();
        let table = if probs.is_empty() {
            self.table.clone()
        } else {
            let (fresh, _) = build_table(&probs, &combos, t)?;
            if self.table.is_empty() {
                fresh
            } else {
                update_table(&self.table, &fresh)?
            }
        };

        let train_set: Vec<(&Sample, &LabelCombination)> = match self.config.finetune_scope {
            FinetuneScope::Batch => annotated
                .iter()
                .map(|(id, c)| Ok((self.dataset.require(id)?, c)))
                .collect::<Result<_>>()?,
            FinetuneScope::Cumulative => partition
                .labeled()
                .iter()
                .map(|(id, c)| Ok((self.dataset.require(id)?, c)))
                .collect::<Result<_>>()?,
        };
        let examples: Vec<Example> = train_set.into_iter().map(Example::from).collect();
        let train_cfg = TrainConfig {
            seed: mix_seed(self.config.seed, 1_000_000 + t as u64),
            ..self.config.train.clone()
        };
        let model = if examples.is_empty() {
            self.model.clone()
        } else {
            self.model.fine_tune(&examples, &train_cfg)?
        };

        let test = self.samples(partition.test())?;
        let evaluation = evaluate(&model, &test, self.config.pseudo.threshold, self.config.pseudo.boundary)?;

        let tasks = proposal.tasks.len();
        let fraction = |n: usize| if tasks == 0 { 0.0 } else { n as f64 / tasks as f64 };
        let report = IterationReport {
            iteration: t,
            selected: proposal.batch.ids.clone(),
            selected_scores: proposal.batch.scores.clone(),
            corrected,
            corrected_fraction: fraction(corrected),
            reviewed_fraction: fraction(results.len()),
            refined_changed: proposal.outcomes.iter().filter(|o| o.changed).count(),
            labeled_count: partition.labeled().len(),
            labeled_fraction: partition.labeled().len() as f64 / self.pool_size as f64,
            pool_remaining: partition.candidate().len(),
            table_size: table.len(),
            macro_accuracy: evaluation.macro_accuracy,
            evaluation,
        };
        log::info!(
            "iteration {t}: labeled {} ({:.1}%), corrected {:.1}%, macro accuracy {:.2}%",
            report.labeled_count,
            100.0 * report.labeled_fraction,
            100.0 * report.corrected_fraction,
            100.0 * report.macro_accuracy
        );

        self.partition = partition;
        self.table = table;
        self.model = model;
        self.completed = t;
        self.pending = None;
        self.reports.push(report.clone());
        Ok(report)
    }

    /// One full iteration answered by the simulated oracle.
    pub fn run_iteration(&mut self) -> Result<IterationReport> {
        let oracle = SimulatedOracle::new(self.config.oracle_noise, self.config.seed)?;
        self.propose()?;
        let proposal = self.pending.as_ref().expect("proposed");
        let results = proposal
            .tasks
            .iter()
            .map(|task| {
                let truth = self.dataset.require(&task.sample_id)?.truth.as_ref();
                oracle.confirm(task, truth)
            })
            .collect::<Result<Vec<_>>>()?;
        self.complete(&results)
    }

    /// Iterates until a stop condition holds.
    pub fn run_to_end(&mut self) -> Result<StopReason> {
        loop {
            if let Some(reason) = self.stop_reason() {
                return Ok(reason);
            }
            self.run_iteration()?;
        }
    }
}

/// Run metadata written as the first record of a report series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub kind: String,
    pub config: ALConfig,
    pub seed: u64,
    pub dataset_hash: String,
    pub pool_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub header: RunHeader,
    pub iterations: Vec<IterationReport>,
    pub stop_reason: StopReason,
}

impl RunReport {
    pub fn final_iteration(&self) -> Option<&IterationReport> {
        self.iterations.last()
    }

    /// First iteration whose macro-accuracy is at least `level`.
    pub fn first_reaching(&self, level: f64) -> Option<&IterationReport> {
        self.iterations.iter().find(|r| r.macro_accuracy >= level)
    }
}

/// Headless run with the simulated oracle. `model` defaults to a fresh
/// seeded initialization.
pub fn run(
    config: &ALConfig,
    dataset: Arc<Dataset>,
    model: Option<ClassifierModel>,
) -> Result<RunReport> {
    let mut learner = match model {
        Some(m) => ActiveLearner::with_model(config.clone(), dataset.clone(), m)?,
        None => ActiveLearner::new(config.clone(), dataset.clone())?,
    };
    let stop_reason = learner.run_to_end()?;
    Ok(RunReport {
        header: RunHeader {
            kind: "run".into(),
            config: config.clone(),
            seed: config.seed,
            dataset_hash: dataset_hash(&dataset),
            pool_size: learner.pool_size(),
            test_size: learner.partition().test().len(),
        },
        iterations: learner.reports,
        stop_reason,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub kind: String,
    pub train: TrainConfig,
    pub threshold: f64,
    pub dataset_hash: String,
    pub labeled_count: usize,
    pub evaluation: Evaluation,
    pub macro_accuracy: f64,
}

/// Epoch count used for full-data reference training.
pub const BASELINE_EPOCHS: usize = 50;

/// Trains on every pool sample with its ground truth and evaluates on the
/// test split.
pub fn baseline(
    dataset: &Dataset,
    train: &TrainConfig,
    pseudo: &PseudoLabelConfig,
) -> Result<(ClassifierModel, BaselineReport)> {
    let partition = PoolPartition::from_dataset(dataset)?;
    let pool: Vec<&Sample> = partition
        .candidate()
        .iter()
        .map(|id| dataset.require(id))
        .collect::<Result<_>>()?;
    let examples: Vec<Example> = pool
        .iter()
        .map(|s| {
            s.truth
                .as_ref()
                .map(|t| Example::new(&s.features, t))
                .ok_or_else(|| Error::MissingTruth(s.id.clone()))
        })
        .collect::<Result<_>>()?;
    let model = init_model(dataset.schema(), dataset.feature_dim(), train)?;
    let model = model.train(&examples, train)?;
    let test: Vec<&Sample> = partition
        .test()
        .iter()
        .map(|id| dataset.require(id))
        .collect::<Result<_>>()?;
    let evaluation = evaluate(&model, &test, pseudo.threshold, pseudo.boundary)?;
    let report = BaselineReport {
        kind: "baseline".into(),
        train: train.clone(),
        threshold: pseudo.threshold,
        dataset_hash: dataset_hash(dataset),
        labeled_count: examples.len(),
        macro_accuracy: evaluation.macro_accuracy,
        evaluation,
    };
    Ok((model, report))
}

/// One JSON object per line: the header, then one record per iteration,
/// then a trailer carrying the stop reason.
pub fn write_series(report: &RunReport) -> String {
    #[derive(Serialize)]
    struct Trailer {
        kind: &'static str,
        stop_reason: StopReason,
        iterations: usize,
    }
    let mut out = serde_json::to_string(&report.header).expect("header serializes");
    out.push('\n');
    for it in &report.iterations {
        out.push_str(&serde_json::to_string(it).expect("iteration serializes"));
        out.push('\n');
    }
    out.push_str(
        &serde_json::to_string(&Trailer {
            kind: "end",
            stop_reason: report.stop_reason,
            iterations: report.iterations.len(),
        })
        .expect("trailer serializes"),
    );
    out.push('\n');
    out
}

pub fn read_series(text: &str) -> Result<RunReport> {
    #[derive(Deserialize)]
    struct Trailer {
        stop_reason: StopReason,
        iterations: usize,
    }
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let parse = |line: usize, e: serde_json::Error| Error::Parse {
        line,
        message: e.to_string(),
    };
    let (&(hl, hraw), rest) = lines.split_first().ok_or(Error::Empty("report series"))?;
    let header: RunHeader = serde_json::from_str(hraw).map_err(|e| parse(hl, e))?;
    let (&(tl, traw), body) = rest.split_last().ok_or(Error::Parse {
        line: hl,
        message: "missing trailer".into(),
    })?;
    let trailer: Trailer = serde_json::from_str(traw).map_err(|e| parse(tl, e))?;
    let iterations = body
        .iter()
        .map(|&(l, raw)| serde_json::from_str(raw).map_err(|e| parse(l, e)))
        .collect::<Result<Vec<IterationReport>>>()?;
    if iterations.len() != trailer.iterations {
        return Err(Error::Parse {
            line: tl,
            message: format!(
                "trailer counts {} iterations, found {}",
                trailer.iterations,
                iterations.len()
            ),
        });
    }
    Ok(RunReport {
        header,
        iterations,
        stop_reason: trailer.stop_reason,
    })
}
