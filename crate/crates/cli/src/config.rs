//! TOML experiment configuration: one file with nested sections so every
//! constant of the training recipe is auditable in a single place.

use std::path::Path;

use anonyvid::data::SyntheticSpec;
use anonyvid::eval::AttackerConfig;
use anonyvid::trainer::TrainingConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepConfig {
    /// Methods to cover: any of `raw`, `downsample`, `adversarial`.
    pub methods: Vec<String>,
    /// Downsampling ratios for the `downsample` method.
    #[serde(default = "default_s_values")]
    pub s_values: Vec<u32>,
    /// Ensemble sizes for the `adversarial` method.
    #[serde(default = "default_m_values")]
    pub m_values: Vec<u32>,
    /// Restarting on/off variants for the `adversarial` method.
    #[serde(default = "default_restarting")]
    pub restarting: Vec<bool>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_s_values() -> Vec<u32> {
    vec![2, 4, 8]
}
fn default_m_values() -> Vec<u32> {
    vec![4]
}
fn default_restarting() -> Vec<bool> {
    vec![true]
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            methods: vec!["raw".into(), "downsample".into(), "adversarial".into()],
            s_values: default_s_values(),
            m_values: default_m_values(),
            restarting: default_restarting(),
            seeds: default_seeds(),
        }
    }
}

/// Partial `[train]` section; unset keys fall back to the per-mode defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainOverrides {
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub threshold_1: Option<f64>,
    pub threshold_2: Option<f64>,
    pub restart_period: Option<usize>,
    pub m: Option<usize>,
    pub iterations: Option<usize>,
    pub inner_loop_fuse: Option<usize>,
    pub eval_every: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainingConfig) -> TrainingConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        take!(
            gamma,
            alpha,
            threshold_1,
            threshold_2,
            restart_period,
            m,
            iterations,
            inner_loop_fuse,
            eval_every,
            batch_size,
            lr,
            momentum,
            seed
        );
        cfg
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<SyntheticSpec>,
    #[serde(default)]
    pub train: Option<TrainOverrides>,
    #[serde(default)]
    pub eval: Option<AttackerConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}
