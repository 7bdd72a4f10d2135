//! Run configuration, read from TOML and overridable field by field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::horizon_frames;
use crate::dln::default_hard_count;
use crate::error::{HvisError, Result};

pub const SEED_ENV: &str = "HVIS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Observed window length in frames.
    pub observed: usize,
    /// Predicted window length in frames.
    pub future: usize,
    pub fps: f64,
    pub learning_rate: f64,
    pub n_critic: usize,
    pub batch_size: usize,
    pub epochs_sln: usize,
    pub epochs_dln: usize,
    pub clip_c: f64,
    /// Weight of the joint displacement term against the adversarial term.
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_fraction: Option<f64>,
    pub seed: u64,
    pub horizons_ms: Vec<f64>,
    /// Frames between consecutive window starts.
    pub stride: usize,
    pub synth_sequences: usize,
    pub synth_frames: usize,
    /// Directory of CSV sequences; the synthetic corpus is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Skeleton description; the built-in 12-joint body when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub reports: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            observed: 25,
            future: 25,
            fps: 25.0,
            learning_rate: 0.001,
            n_critic: 5,
            batch_size: 32,
            epochs_sln: 200,
            epochs_dln: 200,
            clip_c: 0.01,
            lambda: 1.0,
            m: None,
            m_fraction: None,
            seed: 0,
            horizons_ms: vec![80.0, 160.0, 320.0, 400.0, 1000.0],
            stride: 5,
            synth_sequences: 200,
            synth_frames: 100,
            corpus: None,
            skeleton: None,
            checkpoint: PathBuf::from("hvis.ckpt"),
            reports: PathBuf::from("reports"),
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> HvisError {
    HvisError::Config(format!("{name}: {msg}"))
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HvisError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| field("config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are plain TOML values")
    }

    /// Replaces the seed with `HVIS_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| field("seed", format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("observed", self.observed),
            ("future", self.future),
            ("n_critic", self.n_critic),
            ("batch_size", self.batch_size),
            ("stride", self.stride),
            ("synth_sequences", self.synth_sequences),
        ] {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        for (name, v) in [("fps", self.fps), ("learning_rate", self.learning_rate), ("clip_c", self.clip_c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field(name, format!("must be a positive number, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(field("lambda", format!("must be non-negative, got {}", self.lambda)));
        }
        match (self.m, self.m_fraction) {
            (Some(_), Some(_)) => return Err(field("m", "set either m or m_fraction, not both")),
            (Some(0), None) => return Err(field("m", "must be positive")),
            (None, Some(f)) if !(f > 0.0 && f <= 1.0) => return Err(field("m_fraction", format!("must be in (0, 1], got {f}"))),
            _ => {}
        }
        if self.horizons_ms.is_empty() {
            return Err(field("horizons_ms", "needs at least one horizon"));
        }
        for &ms in &self.horizons_ms {
            let exact = ms * self.fps / 1000.0;
            if !(exact.is_finite() && (exact - exact.round()).abs() < 1e-9) {
                return Err(field("horizons_ms", format!("{ms} ms is not a whole number of frames at {} fps", self.fps)));
            }
            let f = horizon_frames(ms, self.fps);
            if f == 0 || f > self.future {
                return Err(field("horizons_ms", format!("{ms} ms is frame {f}, outside 1..={}", self.future)));
            }
        }
        if self.corpus.is_none() && self.synth_frames < 2 * (self.observed + self.future) {
            return Err(field(
                "synth_frames",
                format!("must be at least {} for the chosen window lengths", 2 * (self.observed + self.future)),
            ));
        }
        Ok(())
    }

    pub fn horizon_frames(&self) -> Vec<usize> {
        self.horizons_ms.iter().map(|&ms| horizon_frames(ms, self.fps)).collect()
    }

    /// Number of hard joints to select out of `joints`.
    pub fn hard_count(&self, joints: usize) -> Result<usize> {
        let m = match (self.m, self.m_fraction) {
            (Some(m), _) => m,
            (None, Some(f)) => ((f * joints as f64).ceil() as usize).max(1),
            (None, None) => default_hard_count(joints),
        };
        if m == 0 || m > joints {
            return Err(field("m", format!("{m} hard joints requested for a {joints}-joint skeleton")));
        }
        Ok(m)
    }
}
