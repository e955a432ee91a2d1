//! Class-conditional Gaussian benchmark generator.
//!
//! Each sample draws a label combination from a prior, then features from a
//! Gaussian around that combination's center. Unless a center is given
//! explicitly it is the sum of one seeded prototype direction per positive
//! label, which makes every label roughly linearly decodable while
//! combinations overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabelCombination, LabelSchema, Sample, Split};

pub const PRIOR_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationPrior {
    pub combination: LabelCombination,
    pub probability: f64,
    /// Overrides the prototype-sum center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Multiplies the global noise scale for this combination.
    #[serde(default = "one")]
    pub spread: f64,
}

fn one() -> f64 {
    1.0
}

impl CombinationPrior {
    pub fn new(combination: &str, probability: f64) -> Self {
        Self {
            combination: combination.parse().expect("valid combination literal"),
            probability,
            center: None,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub n_pool: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    pub labels: Vec<String>,
    pub exclusive_index: usize,
    pub prior: Vec<CombinationPrior>,
    /// Length of each label prototype.
    pub separation: f64,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Desk-scale four-label lung ultrasound analog: 2000 pool and 500 test
    /// samples in 32 dimensions, with P-effusion rare and A-line never
    /// combined with another label.
    pub fn lusms_synth_v1(seed: u64) -> Self {
        Self {
            name: "lusms-synth-v1".into(),
            n_pool: 2000,
            n_test: 500,
            feature_dim: 32,
            labels: LabelSchema::lung_ultrasound().labels().to_vec(),
            exclusive_index: 0,
            prior: vec![
                CombinationPrior::new("1000", 0.36),
                CombinationPrior::new("0100", 0.24),
                CombinationPrior::new("0010", 0.12),
                CombinationPrior::new("0110", 0.18),
                CombinationPrior::new("0101", 0.04),
                CombinationPrior::new("0011", 0.03),
                CombinationPrior::new("0111", 0.03),
            ],
            separation: 4.0,
            noise: 1.0,
            seed,
        }
    }

    pub fn schema(&self) -> Result<LabelSchema> {
        LabelSchema::new(self.labels.clone(), self.exclusive_index)
    }

    pub fn validate(&self) -> Result<LabelSchema> {
        let schema = self.schema()?;
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be at least 1".into()));
        }
        if self.n_pool == 0 {
            return Err(Error::InvalidConfig("n_pool must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad noise scale {}", self.noise)));
        }
        if self.prior.is_empty() {
            return Err(Error::InvalidConfig("empty combination prior".into()));
        }
        let mut total = 0.0;
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.prior {
            let c = &entry.combination;
            c.check_len(schema.m())?;
            if !seen.insert(c) {
                return Err(Error::InvalidConfig(format!("combination {c} listed twice")));
            }
            if entry.probability.is_nan() || entry.probability < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "negative probability for {c}"
                )));
            }
            if !(entry.spread >= 0.0 && entry.spread.is_finite()) {
                return Err(Error::InvalidConfig(format!("bad spread for {c}")));
            }
            if c.get(schema.exclusive_index()) && c.count_ones() > 1 {
                return Err(Error::InvalidConfig(format!(
                    "combination {c} pairs the exclusive label with another label"
                )));
            }
            if let Some(center) = &entry.center {
                if center.len() != self.feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.feature_dim,
                        got: center.len(),
                    });
                }
            }
            total += entry.probability;
        }
        if (total - 1.0).abs() > PRIOR_SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "prior probabilities sum to {total}, not 1"
            )));
        }
        Ok(schema)
    }
}

/// One random direction of length `separation` per label.
fn prototypes(cfg: &SynthConfig, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * cfg.separation / norm).collect()
        })
        .collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    let schema = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos = prototypes(cfg, schema.m(), &mut rng);
    let centers: Vec<Vec<f64>> = cfg
        .prior
        .iter()
        .map(|entry| {
            entry.center.clone().unwrap_or_else(|| {
                let mut c = vec![0.0; cfg.feature_dim];
                for (j, proto) in protos.iter().enumerate() {
                    if entry.combination.get(j) {
                        c.iter_mut().zip(proto).for_each(|(a, b)| *a += b);
                    }
                }
                c
            })
        })
        .collect();
    let picker = WeightedIndex::new(cfg.prior.iter().map(|e| e.probability))
        .map_err(|e| Error::InvalidConfig(format!("invalid prior: {e}")))?;
    let total = cfg.n_pool + cfg.n_test;
    let width = total.to_string().len().max(4);
    let mut samples = Vec::with_capacity(total);
    for i in 0..total {
        let k = picker.sample(&mut rng);
        let entry = &cfg.prior[k];
        let sd = cfg.noise * entry.spread;
        let features: Vec<f64> = if sd > 0.0 {
            let normal = Normal::new(0.0, sd).expect("finite positive sd");
            centers[k].iter().map(|c| c + normal.sample(&mut rng)).collect()
        } else {
            centers[k].clone()
        };
        let split = if i < cfg.n_pool { Split::Pool } else { Split::Test };
        samples.push(
            Sample::new(format!("s{i:0width$}"), features)
                .with_truth(entry.combination.clone())
                .with_split(split),
        );
    }
    Dataset::new(schema, cfg.feature_dim, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn seeded_generation_is_reproducible() {
        let cfg = SynthConfig::lusms_synth_v1(42);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2500);
        assert_eq!(a.split_ids(Split::Test).count(), 500);
        let c = generate_synthetic(&SynthConfig::lusms_synth_v1(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_frequencies_follow_prior() {
        let cfg = SynthConfig {
            n_pool: 1000,
            n_test: 0,
            prior: vec![
                CombinationPrior::new("1000", 0.5),
                CombinationPrior::new("0100", 0.5),
            ],
            ..SynthConfig::lusms_synth_v1(7)
        };
        let d = generate_synthetic(&cfg).unwrap();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in d.samples() {
            *counts.entry(s.truth.as_ref().unwrap().encode()).or_default() += 1;
        }
        for key in ["1000", "0100"] {
            let freq = counts[key] as f64 / 1000.0;
            assert!((freq - 0.5).abs() <= 0.04, "{key}: {freq}");
        }
    }

    #[test]
    fn zero_noise_collapses_each_combination() {
        let cfg = SynthConfig {
            noise: 0.0,
            n_pool: 200,
            n_test: 0,
            ..SynthConfig::lusms_synth_v1(1)
        };
        let d = generate_synthetic(&cfg).unwrap();
        let mut first: BTreeMap<String, &Vec<f64>> = BTreeMap::new();
        for s in d.samples() {
            let key = s.truth.as_ref().unwrap().encode();
            let f = first.entry(key).or_insert(&s.features);
            assert_eq!(*f, &s.features);
        }
    }

    #[test]
    fn exclusive_label_never_co_occurs() {
        let d = generate_synthetic(&SynthConfig::lusms_synth_v1(42)).unwrap();
        for s in d.samples() {
            let t = s.truth.as_ref().unwrap();
            assert!(!(t.get(0) && t.count_ones() > 1), "{}", s.id);
        }
    }

    #[test]
    fn invalid_priors_are_rejected() {
        let base = SynthConfig::lusms_synth_v1(0);
        let bad_sum = SynthConfig {
            prior: vec![CombinationPrior::new("1000", 0.6), CombinationPrior::new("0100", 0.3)],
            ..base.clone()
        };
        assert!(generate_synthetic(&bad_sum).is_err());
        let exclusive = SynthConfig {
            prior: vec![CombinationPrior::new("1100", 1.0)],
            ..base.clone()
        };
        assert!(generate_synthetic(&exclusive).is_err());
        let wrong_len = SynthConfig {
            prior: vec![CombinationPrior::new("100", 1.0)],
            ..base.clone()
        };
        assert!(generate_synthetic(&wrong_len).is_err());
        let dup = SynthConfig {
            prior: vec![CombinationPrior::new("1000", 0.5), CombinationPrior::new("1000", 0.5)],
            ..base
        };
        assert!(generate_synthetic(&dup).is_err());
    }
}
