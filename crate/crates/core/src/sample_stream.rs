//! Informativeness scores and batch selection over the candidate pool.
//!
//! Every strategy turns a probability row into a scalar where *smaller means
//! more worth annotating*, and selection takes the `k` smallest scores with
//! ties broken by ascending sample id:
//!
//! | strategy | score                                               |
//! |----------|-----------------------------------------------------|
//! | MLM      | `|p(exclusive) - max over other labels p|`          |
//! | LC       | `max_i p_i`                                         |
//! | MLE      | `sum_i p_i ln p_i + (1 - p_i) ln (1 - p_i)`          |
//! | Random   | a seeded uniform key per sample                     |
//!
//! The entropy score is the negated binary entropy summed over labels, so its
//! smallest values are the most entropic rows.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelSchema, ProbabilityVector, StateMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionStrategy {
    /// Multi-label margin between the exclusive label and the strongest other.
    Mlm,
    /// Least confidence.
    Lc,
    /// Multi-label entropy.
    Mle,
    Random,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 4] = [
        SelectionStrategy::Mlm,
        SelectionStrategy::Lc,
        SelectionStrategy::Mle,
        SelectionStrategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::Mlm => "mlm",
            SelectionStrategy::Lc => "lc",
            SelectionStrategy::Mle => "mle",
            SelectionStrategy::Random => "random",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlm" => Ok(SelectionStrategy::Mlm),
            "lc" => Ok(SelectionStrategy::Lc),
            "mle" => Ok(SelectionStrategy::Mle),
            "random" => Ok(SelectionStrategy::Random),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Margin between the exclusive label and the most probable other label.
pub fn score_mlm(p: &ProbabilityVector, schema: &LabelSchema) -> f64 {
    let p = p.as_slice();
    let ex = schema.exclusive_index();
    let strongest_other = p
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != ex)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (p[ex] - strongest_other).abs()
}

/// Confidence of the most probable label.
pub fn score_lc(p: &ProbabilityVector) -> f64 {
    p.as_slice().iter().copied().fold(0.0, f64::max)
}

/// Summed `p ln p + (1 - p) ln (1 - p)` with `0 ln 0 = 0`. Always `<= 0`.
pub fn score_mle(p: &ProbabilityVector) -> f64 {
    fn xlogx(x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            x * x.ln()
        }
    }
    p.as_slice().iter().map(|&v| xlogx(v) + xlogx(1.0 - v)).sum()
}

/// All three deterministic scores of one row, logged whatever the strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowScores {
    pub mlm: f64,
    pub lc: f64,
    pub mle: f64,
}

impl RowScores {
    pub fn of(p: &ProbabilityVector, schema: &LabelSchema) -> Self {
        Self {
            mlm: score_mlm(p, schema),
            lc: score_lc(p),
            mle: score_mle(p),
        }
    }
}

/// Seeded uniform keys, one per id, drawn in ascending id order so that the
/// key of a sample does not depend on its row position.
pub fn random_keys(ids: &[String], seed: u64) -> Vec<f64> {
    let mut sorted: Vec<usize> = (0..ids.len()).collect();
    sorted.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = vec![0.0; ids.len()];
    for i in sorted {
        keys[i] = rng.random::<f64>();
    }
    keys
}

/// Score of every row under `strategy`, aligned with `state.ids()`.
pub fn score_state(
    state: &StateMatrix,
    strategy: SelectionStrategy,
    schema: &LabelSchema,
    seed: u64,
) -> Vec<f64> {
    match strategy {
        SelectionStrategy::Mlm => state.rows().iter().map(|p| score_mlm(p, schema)).collect(),
        SelectionStrategy::Lc => state.rows().iter().map(score_lc).collect(),
        SelectionStrategy::Mle => state.rows().iter().map(score_mle).collect(),
        SelectionStrategy::Random => random_keys(state.ids(), seed),
    }
}

/// The samples chosen for annotation at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBatch {
    pub ids: Vec<String>,
    /// Score of each selected id under the active strategy.
    pub scores: Vec<f64>,
    /// MLM/LC/MLE scores of each selected id.
    pub all_scores: Vec<RowScores>,
    pub iteration: usize,
}

impl ActionBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Picks the `min(k, pool size)` most informative rows.
pub fn select(
    state: &StateMatrix,
    strategy: SelectionStrategy,
    schema: &LabelSchema,
    k: usize,
    seed: u64,
) -> Result<ActionBatch> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if state.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let scores = score_state(state, strategy, schema, seed);
    let ids = state.ids();
    let rank = |&a: &usize, &b: &usize| -> Ordering {
        scores[a]
            .total_cmp(&scores[b])
            .then_with(|| ids[a].cmp(&ids[b]))
    };
    let mut order: Vec<usize> = (0..state.len()).collect();
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable_by(rank);

    log::debug!(
        "iteration {}: {} selected {} of {}",
        state.iteration,
        strategy,
        k,
        state.len()
    );
    Ok(ActionBatch {
        ids: order.iter().map(|&i| ids[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
        all_scores: order
            .iter()
            .map(|&i| RowScores::of(&state.rows()[i], schema))
            .collect(),
        iteration: state.iteration,
    })
}
