use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::Variant;
use crate::error::{Error, Result};
use crate::losses::ObjectiveWeights;

use super::adam::AdamParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bpr,
    Coles,
    GrColes,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bpr => "bpr",
            Self::Coles => "coles",
            Self::GrColes => "gr_coles",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "bpr" => Ok(Self::Bpr),
            "coles" => Ok(Self::Coles),
            "gr_coles" => Ok(Self::GrColes),
            _ => Err(Error::Config(format!(
                "unknown loss '{s}' (bpr, coles, gr-coles)"
            ))),
        }
    }
}

/// Whether final embeddings are row-normalized before the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    On,
    Off,
    /// Off for BPR, on for the contrastive losses.
    Auto,
}

impl NormalizeMode {
    pub fn resolve(self, loss: LossKind) -> bool {
        match self {
            Self::On => true,
            Self::Off => false,
            Self::Auto => loss != LossKind::Bpr,
        }
    }
}

impl FromStr for NormalizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" | "true" => Ok(Self::On),
            "off" | "false" => Ok(Self::Off),
            "auto" => Ok(Self::Auto),
            _ => Err(Error::Config(format!(
                "unknown normalize mode '{s}' (on, off, auto)"
            ))),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "layer-average" => Ok(Self::LayerAverage),
            "selfloop-last" | "self-loop-last" => Ok(Self::SelfLoopLast),
            _ => Err(Error::Config(format!(
                "unknown variant '{s}' (layer-average, selfloop-last)"
            ))),
        }
    }
}

/// When the node-level negative Laplacian is resampled during full-graph
/// contrastive pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeRefresh {
    Once,
    PerEpoch,
}

impl FromStr for NegativeRefresh {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "once" => Ok(Self::Once),
            "per-epoch" | "epoch" => Ok(Self::PerEpoch),
            _ => Err(Error::Config(format!(
                "unknown refresh mode '{s}' (once, per-epoch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives per batch row.
    pub neg_k: usize,
    pub lr: f64,
    pub beta: f64,
    pub t: f64,
    pub lambda: f64,
    pub layers: usize,
    pub dim: usize,
    pub seed: u64,
    /// Evaluate every this many epochs; 0 disables evaluation.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping; 0 disables.
    pub patience: usize,
    pub variant: Variant,
    pub normalize: NormalizeMode,
    /// Standard deviation of the Gaussian initialization of `E^(0)`.
    pub init_std: f64,
    pub weights: ObjectiveWeights,
    pub eval_ks: Vec<usize>,
    /// Cutoff whose recall drives early stopping.
    pub early_stop_k: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub neg_refresh: NegativeRefresh,
}

impl TrainConfig {
    /// Defaults for recommendation training.
    pub fn recommendation(loss: LossKind) -> Self {
        Self {
            loss,
            epochs: 50,
            batch_size: 2048,
            neg_k: 1,
            lr: 1e-2,
            beta: 0.9,
            t: 2.0,
            lambda: 1e-4,
            layers: 3,
            dim: 64,
            seed: 0,
            eval_every: 1,
            patience: 10,
            variant: Variant::LayerAverage,
            normalize: NormalizeMode::Auto,
            init_std: 0.1,
            weights: ObjectiveWeights::default(),
            eval_ks: vec![10, 20],
            early_stop_k: 20,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            neg_refresh: NegativeRefresh::PerEpoch,
        }
    }

    /// Defaults for contrastive pre-training on a plain graph.
    pub fn node_classification(loss: LossKind) -> Self {
        Self {
            layers: 2,
            dim: 512,
            epochs: 100,
            eval_every: 0,
            patience: 0,
            ..Self::recommendation(loss)
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn normalize_output(&self) -> bool {
        self.normalize.resolve(self.loss)
    }

    /// Objective weights actually applied: plain COLES ignores the
    /// regularizer weights.
    pub fn effective_weights(&self) -> ObjectiveWeights {
        match self.loss {
            LossKind::Coles => ObjectiveWeights {
                coles: self.weights.coles,
                hom: 0.0,
                het: 0.0,
            },
            _ => self.weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("neg_k", self.neg_k),
            ("dim", self.dim),
            ("early_stop_k", self.early_stop_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let reals = [
            ("lr", self.lr),
            ("t", self.t),
            ("init_std", self.init_std),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "beta must be nonnegative, got {}",
                self.beta
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        let w = self.weights;
        if [w.coles, w.hom, w.het]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(Error::Config(
                "objective weights must be nonnegative".into(),
            ));
        }
        if self.eval_ks.iter().any(|&k| k == 0) {
            return Err(Error::Config(
                "evaluation cutoffs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Evaluation cutoffs including the early-stopping cutoff, ascending.
    pub fn all_eval_ks(&self) -> Vec<usize> {
        let mut ks = self.eval_ks.clone();
        ks.push(self.early_stop_k);
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}
