//! Stand-in environment whose success probability depends only on which
//! perturbation dimensions are active.

use super::{Action, Environment, EpisodeTask, HarnessError, Observation, Step};
use crate::perturbation::{Dimension, PerturbationVector};
use crate::rng::SeedKey;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const COMBINATIONS: usize = 1 << 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyntheticError {
    #[error("probability table needs {COMBINATIONS} entries, found {0}")]
    TableSize(usize),
    #[error("probability {value} at index {index} is outside [0, 1]")]
    Probability { index: usize, value: f64 },
    #[error("non-finite model term `{0}`")]
    NonFinite(String),
}

/// Success probability for each of the 128 flag combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SyntheticEnvModel {
    /// `probabilities[mask]`, bit `i` of `mask` set when `D_{i+1} = 1`.
    Table { probabilities: Vec<f64> },
    /// `clamp(base + sum effects[d] + sum interactions[(a, b)], 0, 1)` over active dimensions.
    Pairwise {
        base: f64,
        #[serde(default)]
        effects: BTreeMap<Dimension, f64>,
        #[serde(default, with = "pair_map")]
        interactions: BTreeMap<(Dimension, Dimension), f64>,
    },
}

mod pair_map {
    //! Pair-keyed maps as `"a,b"` string keys.
    use crate::perturbation::Dimension;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(m: &BTreeMap<(Dimension, Dimension), f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|((a, b), v)| (format!("{a},{b}"), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(Dimension, Dimension), f64>, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let (a, b) = k
                    .split_once(',')
                    .ok_or_else(|| D::Error::custom(format!("pair key `{k}` needs the form `a,b`")))?;
                let a: Dimension = a.trim().parse().map_err(D::Error::custom)?;
                let b: Dimension = b.trim().parse().map_err(D::Error::custom)?;
                Ok((if a <= b { (a, b) } else { (b, a) }, v))
            })
            .collect()
    }
}

impl SyntheticEnvModel {
    pub fn constant(p: f64) -> Result<Self, SyntheticError> {
        Self::table(vec![p; COMBINATIONS])
    }

    pub fn table(probabilities: Vec<f64>) -> Result<Self, SyntheticError> {
        let m = Self::Table { probabilities };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        match self {
            Self::Table { probabilities } => {
                if probabilities.len() != COMBINATIONS {
                    return Err(SyntheticError::TableSize(probabilities.len()));
                }
                for (index, &value) in probabilities.iter().enumerate() {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(SyntheticError::Probability { index, value });
                    }
                }
            }
            Self::Pairwise {
                base,
                effects,
                interactions,
            } => {
                if !base.is_finite() {
                    return Err(SyntheticError::NonFinite("base".into()));
                }
                for (d, v) in effects {
                    if !v.is_finite() {
                        return Err(SyntheticError::NonFinite(d.to_string()));
                    }
                }
                for ((a, b), v) in interactions {
                    if !v.is_finite() {
                        return Err(SyntheticError::NonFinite(format!("{a},{b}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn probability_for_mask(&self, mask: u8) -> f64 {
        match self {
            Self::Table { probabilities } => probabilities[usize::from(mask) & (COMBINATIONS - 1)],
            Self::Pairwise {
                base,
                effects,
                interactions,
            } => {
                let on = |d: Dimension| mask & (1 << d.index()) != 0;
                let mut p = *base;
                p += effects.iter().filter(|(d, _)| on(**d)).map(|(_, v)| v).sum::<f64>();
                p += interactions
                    .iter()
                    .filter(|((a, b), _)| a != b && on(*a) && on(*b))
                    .map(|(_, v)| v)
                    .sum::<f64>();
                p.clamp(0.0, 1.0)
            }
        }
    }

    pub fn probability(&self, v: &PerturbationVector) -> f64 {
        self.probability_for_mask(v.mask())
    }
}

/// One Bernoulli draw per episode: success ends the episode after the first
/// action, failure lets it run until the step budget is spent.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    model: SyntheticEnvModel,
    succeeds: Option<bool>,
}

impl SyntheticEnv {
    pub fn new(model: SyntheticEnvModel) -> Self {
        Self { model, succeeds: None }
    }
}

impl Environment for SyntheticEnv {
    fn reset(&mut self, task: &EpisodeTask, seed: u64) -> Result<Observation, HarnessError> {
        let p = self.model.probability(&task.perturbation);
        let mut rng = SeedKey::new(seed).str("synthetic").rng();
        self.succeeds = Some(rng.next_f64() < p);
        Ok(Observation::default())
    }

    fn step(&mut self, _action: &Action) -> Result<Step, HarnessError> {
        match self.succeeds {
            None => Err(HarnessError::Env("step before reset".into())),
            Some(true) => Ok(Step::Done { success: true }),
            Some(false) => Ok(Step::Observation(Observation::default())),
        }
    }
}
