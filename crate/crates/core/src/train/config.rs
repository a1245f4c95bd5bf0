use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agreement::{MixupConfig, TagRule};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    CeOnly,
    CeOt,
    CeAt,
    CeOtAt,
    /// Distance between mean-pooled source and target states.
    Sra,
    /// KL from target-conditioned to source-conditioned predictions.
    Sf,
    /// In-batch contrastive loss over mean-pooled states.
    Cl,
}

impl Objective {
    pub fn uses_ot(self) -> bool {
        matches!(self, Objective::CeOt | Objective::CeOtAt)
    }

    pub fn uses_at(self) -> bool {
        matches!(self, Objective::CeAt | Objective::CeOtAt)
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Objective::Sra | Objective::Sf | Objective::Cl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::CeOnly => "ce",
            Objective::CeOt => "ce+ot",
            Objective::CeAt => "ce+at",
            Objective::CeOtAt => "ce+ot+at",
            Objective::Sra => "sra",
            Objective::Sf => "sf",
            Objective::Cl => "cl",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ce" | "ce_only" => Objective::CeOnly,
            "ce+ot" | "ce_ot" => Objective::CeOt,
            "ce+at" | "ce_at" => Objective::CeAt,
            "ce+ot+at" | "ce_ot_at" => Objective::CeOtAt,
            "sra" => Objective::Sra,
            "sf" => Objective::Sf,
            "cl" => Objective::Cl,
            _ => return Err(Error::Config(format!("unknown objective {s:?}"))),
        })
    }
}

/// How the OT term is scaled by source length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LenScale {
    /// One batch-mean length multiplies the mean OT loss.
    BatchMean,
    /// Each pair's OT loss is multiplied by its own source length.
    PerSentence,
}

/// Which validation average picks the returned checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ZeroShot,
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sra_gamma: f64,
    pub sf_gamma: f64,
    pub cl_gamma: f64,
    pub cl_tau: f64,
    pub mixup_alpha: f64,
    pub mixup_beta: f64,
    pub mixup_tag: TagRuleName,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub pretrain_steps: usize,
    pub total_steps: usize,
    pub batch_sentences: usize,
    pub seed: u64,
    pub stop_grad_hy: bool,
    pub include_tag_position: bool,
    pub len_scale: LenScale,
    pub selection: Selection,
    /// Validation interval in steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Cap on validation sentences per direction (0 = all).
    pub eval_sentences: usize,
    pub model: ModelConfig,
}

/// Serialisable mirror of [`TagRule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagRuleName {
    UniformRandom,
    AlwaysX,
    AlwaysY,
}

impl From<TagRuleName> for TagRule {
    fn from(t: TagRuleName) -> Self {
        match t {
            TagRuleName::UniformRandom => TagRule::UniformRandom,
            TagRuleName::AlwaysX => TagRule::AlwaysX,
            TagRuleName::AlwaysY => TagRule::AlwaysY,
        }
    }
}

/// Settings of the original large-scale setup, kept for reference.
pub const REFERENCE_WARMUP_STEPS: usize = 4000;
pub const REFERENCE_PEAK_LR: f64 = 0.0007;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::CeOtAt,
            gamma1: 0.4,
            gamma2: 0.001,
            sra_gamma: 0.5,
            sf_gamma: 0.5,
            cl_gamma: 0.5,
            cl_tau: 0.1,
            mixup_alpha: 6.0,
            mixup_beta: 3.0,
            mixup_tag: TagRuleName::UniformRandom,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            peak_lr: 0.06,
            warmup_steps: 400,
            pretrain_steps: 1000,
            total_steps: 6000,
            batch_sentences: 32,
            seed: 0,
            stop_grad_hy: true,
            include_tag_position: true,
            len_scale: LenScale::BatchMean,
            selection: Selection::ZeroShot,
            eval_every: 500,
            eval_sentences: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("sra_gamma", self.sra_gamma),
            ("sf_gamma", self.sf_gamma),
            ("cl_gamma", self.cl_gamma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.cl_tau > 0.0) {
            return Err(Error::Config(format!("cl_tau must be > 0, got {}", self.cl_tau)));
        }
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be >= 1".into()));
        }
        if self.batch_sentences == 0 {
            return Err(Error::Config("batch_sentences must be >= 1".into()));
        }
        if self.objective == Objective::Cl && self.batch_sentences < 2 {
            return Err(Error::Config("contrastive objective needs batch_sentences >= 2".into()));
        }
        if self.pretrain_steps > self.total_steps {
            return Err(Error::Config(format!(
                "pretrain_steps {} exceeds total_steps {}",
                self.pretrain_steps, self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be > 0".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        self.mixup().validate()?;
        self.model.validate()
    }

    pub fn mixup(&self) -> MixupConfig {
        MixupConfig {
            alpha: self.mixup_alpha,
            beta: self.mixup_beta,
            tag_rule: self.mixup_tag.into(),
        }
    }

    /// `(gamma1, gamma2)` as actually applied by the configured objective.
    pub fn effective_gammas(&self) -> (f64, f64) {
        (
            if self.objective.uses_ot() { self.gamma1 } else { 0.0 },
            if self.objective.uses_at() { self.gamma2 } else { 0.0 },
        )
    }
}
