//! Pseudo-labels and their validation against a label-correlation table.
//!
//! The table maps each confirmed label combination to a *relationship vector*
//! (RV): the column mean of the probability rows of the samples confirmed with
//! that combination, normalized to sum to one. A new prediction is normalized
//! the same way and assigned the combination whose RV is nearest in Manhattan
//! distance.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelCombination, ProbabilityVector};

/// Tolerance on the unit sum of every stored relationship vector.
pub const RV_SUM_TOLERANCE: f64 = 1e-9;

/// Whether a probability exactly at the threshold counts as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// `p >= threshold` is positive.
    #[default]
    Inclusive,
    /// `p > threshold` is positive.
    Strict,
}

impl Boundary {
    pub fn is_positive(self, p: f64, threshold: f64) -> bool {
        match self {
            Boundary::Inclusive => p >= threshold,
            Boundary::Strict => p > threshold,
        }
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    Ok(())
}

/// Thresholds each label independently, `p >= threshold` being positive.
pub fn assign_pseudo(p: &ProbabilityVector, threshold: f64) -> Result<LabelCombination> {
    assign_pseudo_with(p, threshold, Boundary::Inclusive)
}

pub fn assign_pseudo_with(
    p: &ProbabilityVector,
    threshold: f64,
    boundary: Boundary,
) -> Result<LabelCombination> {
    check_threshold(threshold)?;
    Ok(LabelCombination::new(
        p.as_slice()
            .iter()
            .map(|&v| boundary.is_positive(v, threshold))
            .collect(),
    ))
}

/// Divides a non-negative vector by its sum.
pub fn normalize_rv(p_avg: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = p_avg
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
    {
        return Err(Error::ProbabilityRange { index, value });
    }
    let sum: f64 = p_avg.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroSum);
    }
    Ok(p_avg.iter().map(|v| v / sum).collect())
}

pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrelationTable {
    entries: BTreeMap<LabelCombination, Vec<f64>>,
    pub iteration_built: usize,
}

impl CorrelationTable {
    pub fn new(iteration_built: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            iteration_built,
        }
    }

    /// Inserts an entry after checking that `rv` is a normalized,
    /// non-negative vector of the combination's length.
    pub fn insert(&mut self, combo: LabelCombination, rv: Vec<f64>) -> Result<()> {
        combo.check_len(rv.len())?;
        if let Some((index, &value)) = rv.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
            return Err(Error::ProbabilityRange { index, value });
        }
        let sum: f64 = rv.iter().sum();
        if (sum - 1.0).abs() > RV_SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "relationship vector for {combo} sums to {sum}"
            )));
        }
        if let Some(m) = self.num_labels() {
            combo.check_len(m)?;
        }
        self.entries.insert(combo, rv);
        Ok(())
    }

    pub fn get(&self, combo: &LabelCombination) -> Option<&[f64]> {
        self.entries.get(combo).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&LabelCombination, &[f64])> {
        self.entries.iter().map(|(c, rv)| (c, rv.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_labels(&self) -> Option<usize> {
        self.entries.keys().next().map(LabelCombination::len)
    }

    /// Text dump: one `combination rv_1 ... rv_m` line per entry, ascending
    /// combination order, six decimals, after a `# iteration <t>` header.
    pub fn dump(&self) -> String {
        let mut out = format!("# iteration {}\n", self.iteration_built);
        for (combo, rv) in &self.entries {
            out.push_str(&combo.encode());
            for v in rv {
                let _ = write!(out, " {v:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Reads a dump back. Values are renormalized to absorb the rounding
    /// of the six-decimal form.
    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# iteration") {
                table.iteration_built = rest
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad iteration {rest:?}")))?;
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let combo: LabelCombination = parts
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e: Error| err(e.to_string()))?;
            let values = parts
                .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let rv = normalize_rv(&values).map_err(|e| err(e.to_string()))?;
            table.insert(combo, rv).map_err(|e| err(e.to_string()))?;
        }
        Ok(table)
    }
}

/// Groups probability rows by their confirmed combination and stores one
/// normalized mean row per group. Groups whose mean sums to zero are skipped
/// and returned in the second element.
pub fn build_table(
    probabilities: &[&ProbabilityVector],
    combos: &[&LabelCombination],
    iteration: usize,
) -> Result<(CorrelationTable, Vec<LabelCombination>)> {
    if probabilities.is_empty() {
        return Err(Error::Empty("correlation table input"));
    }
    if probabilities.len() != combos.len() {
        return Err(Error::DimensionMismatch {
            expected: probabilities.len(),
            got: combos.len(),
        });
    }
    let m = probabilities[0].len();
    let mut groups: BTreeMap<&LabelCombination, (Vec<f64>, usize)> = BTreeMap::new();
    for (p, combo) in probabilities.iter().zip(combos) {
        if p.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: p.len(),
            });
        }
        combo.check_len(m)?;
        let (sum, count) = groups.entry(combo).or_insert_with(|| (vec![0.0; m], 0));
        for (s, v) in sum.iter_mut().zip(p.as_slice()) {
            *s += v;
        }
        *count += 1;
    }
    let mut table = CorrelationTable::new(iteration);
    let mut skipped = Vec::new();
    for (combo, (sum, count)) in groups {
        let p_avg: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        match normalize_rv(&p_avg) {
            Ok(rv) => table.insert(combo.clone(), rv)?,
            Err(Error::ZeroSum) => {
                log::warn!("combination {combo}: mean probability row sums to zero, skipped");
                skipped.push(combo.clone());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((table, skipped))
}

/// Entry with the smallest Manhattan distance to `q`; ties go to the smaller
/// combination string.
pub fn nearest_combination(q: &[f64], table: &CorrelationTable) -> Result<(LabelCombination, f64)> {
    let mut best: Option<(&LabelCombination, f64)> = None;
    // entries iterate in ascending combination order, so strict `<` keeps the
    // first of equal distances
    for (combo, rv) in table.entries() {
        if rv.len() != q.len() {
            return Err(Error::DimensionMismatch {
                expected: rv.len(),
                got: q.len(),
            });
        }
        let d = manhattan(q, rv);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((combo, d));
        }
    }
    best.map(|(c, d)| (c.clone(), d))
        .ok_or(Error::Empty("correlation table"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub proposed: LabelCombination,
    pub refined: LabelCombination,
    /// Manhattan distance to the nearest entry, when a lookup happened.
    pub distance: Option<f64>,
    pub changed: bool,
    /// False when the table was empty, the row could not be normalized, or
    /// the nearest entry was beyond the distance gate.
    pub validated: bool,
}

impl RefinementOutcome {
    fn unvalidated(proposed: LabelCombination, distance: Option<f64>) -> Self {
        Self {
            refined: proposed.clone(),
            proposed,
            distance,
            changed: false,
            validated: false,
        }
    }
}

/// Settings of the pseudo-label / validation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub threshold: f64,
    #[serde(default)]
    pub boundary: Boundary,
    /// Refinement is skipped when the nearest entry is farther than this.
    #[serde(default)]
    pub max_distance: Option<f64>,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            boundary: Boundary::Inclusive,
            max_distance: None,
        }
    }
}

/// Thresholded proposal replaced by the table's nearest combination.
pub fn refine_pseudo(
    p: &ProbabilityVector,
    table: &CorrelationTable,
    threshold: f64,
) -> Result<RefinementOutcome> {
    refine_pseudo_with(
        p,
        table,
        &PseudoLabelConfig {
            threshold,
            ..PseudoLabelConfig::default()
        },
    )
}

pub fn refine_pseudo_with(
    p: &ProbabilityVector,
    table: &CorrelationTable,
    config: &PseudoLabelConfig,
) -> Result<RefinementOutcome> {
    let proposed = assign_pseudo_with(p, config.threshold, config.boundary)?;
    if table.is_empty() {
        return Ok(RefinementOutcome::unvalidated(proposed, None));
    }
    let q = match normalize_rv(p.as_slice()) {
        Ok(q) => q,
        Err(Error::ZeroSum) => return Ok(RefinementOutcome::unvalidated(proposed, None)),
        Err(e) => return Err(e),
    };
    let (refined, distance) = nearest_combination(&q, table)?;
    if config.max_distance.is_some_and(|gate| distance > gate) {
        return Ok(RefinementOutcome::unvalidated(proposed, Some(distance)));
    }
    Ok(RefinementOutcome {
        changed: refined != proposed,
        proposed,
        refined,
        distance: Some(distance),
        validated: true,
    })
}

/// `sum_i rv_i * l_i`, the mass an entry puts on its own positive labels.
pub fn masked_mass(combo: &LabelCombination, rv: &[f64]) -> f64 {
    combo
        .bits()
        .iter()
        .zip(rv)
        .filter(|(&b, _)| b)
        .map(|(_, v)| v)
        .sum()
}

/// Whether `fresh` may replace `old` for `combo`: every positive label must
/// keep or grow its share.
pub fn accepts_update(combo: &LabelCombination, old: &[f64], fresh: &[f64]) -> bool {
    combo
        .as_targets()
        .zip(old.iter().zip(fresh))
        .all(|(l, (o, f))| f * l >= o * l)
}

/// Merges a freshly built table into the running one. New combinations are
/// inserted, existing ones replaced only when [`accepts_update`] holds, and
/// combinations missing from `fresh` are kept.
pub fn update_table(old: &CorrelationTable, fresh: &CorrelationTable) -> Result<CorrelationTable> {
    if let (Some(a), Some(b)) = (old.num_labels(), fresh.num_labels()) {
        if a != b {
            return Err(Error::DimensionMismatch {
                expected: a,
                got: b,
            });
        }
    }
    let mut next = old.clone();
    next.iteration_built = fresh.iteration_built.max(old.iteration_built);
    for (combo, rv) in fresh.entries() {
        match old.get(combo) {
            Some(prev) if !accepts_update(combo, prev, rv) => {
                log::debug!("combination {combo}: update rejected");
            }
            _ => {
                next.entries.insert(combo.clone(), rv.to_vec());
            }
        }
    }
    Ok(next)
}
