use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barrier::BarrierSchedule;
use crate::barrier::HandlerKind;
use crate::constraints::{BoundsConfig, ConstraintSetting};
use crate::error::{Error, Result};
use crate::optimize::{LoopConfig, OptimizerConfig};
use crate::segbench::{MethodConfig, ModelConfig, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Directory holding `manifest.json` and the split folders.
    pub dir: PathBuf,
    pub synth: SynthConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintsSection {
    pub setting: ConstraintSetting,
    pub bounds: BoundsConfig,
}

impl Default for ConstraintsSection {
    fn default() -> Self {
        Self {
            setting: ConstraintSetting::SizeAndCentroid,
            bounds: BoundsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// Epochs without a better validation Dice before the learning rate is
    /// halved; `null` disables the rule.
    pub plateau_patience: Option<usize>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self { plateau_patience: Some(20) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Record elapsed milliseconds in `metrics.csv`. Off by default so that
    /// repeated runs produce identical files.
    pub wall_clock: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            wall_clock: false,
        }
    }
}

/// Everything a `gen-data` or `train` invocation needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub constraints: ConstraintsSection,
    pub method: MethodConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Parse a config file. Relative paths are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset.dir = base.join(&cfg.dataset.dir);
        cfg.output.dir = base.join(&cfg.output.dir);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.synth.validate()?;
        self.model.validate()?;
        self.optimizer.validate()?;
        let (lo, hi) = self.constraints.bounds.size_factors;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::Config(format!("size factors ({lo}, {hi})")));
        }
        let margin = self.constraints.bounds.centroid_margin;
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::Config(format!("centroid margin {margin}")));
        }
        if self.constraints.bounds.class >= crate::segbench::N_CLASSES {
            return Err(Error::Config(format!("class {} out of range", self.constraints.bounds.class)));
        }
        let m = &self.method;
        BarrierSchedule::new(m.t0, m.mu)?;
        if !(m.constraint_weight > 0.0 && m.constraint_weight.is_finite()) {
            return Err(Error::Config(format!("constraint_weight must be positive, got {}", m.constraint_weight)));
        }
        if m.handler == HandlerKind::LagrangianDual && !(m.dual_lr > 0.0 && m.dual_lr.is_finite()) {
            return Err(Error::Config(format!("dual_lr must be positive, got {}", m.dual_lr)));
        }
        if self.training.plateau_patience == Some(0) {
            return Err(Error::Config("plateau_patience must be at least 1 or null".into()));
        }
        Ok(())
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            optimizer: self.optimizer.clone(),
            constraint_weight: self.method.constraint_weight,
            plateau_patience: self.training.plateau_patience,
        }
    }
}
