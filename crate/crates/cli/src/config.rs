//! Run configuration: one flat TOML table. Every key is optional and falls
//! back to the default listed in `RunConfig::default`; unknown keys are an
//! error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use statediff::model::{ModelConfig, ModelDims, TrainConfig};
use statediff::schedule::{ScheduleKind, ScheduleSpec};
use statediff::synth::{AuxMode, GridConfig, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Bimodal,
    Unimodal,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    History,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub task: TaskKind,
    /// Half the distance between the two bimodal centers.
    pub c: f64,
    pub sigma: f64,
    pub state_dim: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_pairs: usize,

    pub grid_size: usize,
    pub n_agents: usize,
    pub sight_radius: usize,
    pub n_landmarks: usize,
    pub episode_len: usize,
    pub aux: AuxKind,
    pub observer: usize,
    /// History window: the condition stacks the last `m + 1` observations.
    pub m: usize,

    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,

    pub z_dim: usize,
    pub denoiser_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta_kl: f64,
    pub eval_interval: usize,

    pub n_samples: usize,
    /// Conditions to sample at when no `--x` file is given.
    pub sample_x: Vec<Vec<f64>>,
    pub hist_bins: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,

    pub eval_x: Vec<f64>,
    pub eval_samples: usize,
    pub propagation_trials: usize,
    pub c2: f64,

    /// The gradient check builds its own small model, independent of the
    /// task above.
    pub gradcheck_state_dim: usize,
    pub gradcheck_cond_dim: usize,
    pub gradcheck_z_dim: usize,
    pub gradcheck_steps: usize,
    pub gradcheck_hidden: usize,
    pub gradcheck_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            task: TaskKind::Bimodal,
            c: 2.0,
            sigma: 0.1,
            state_dim: 1,
            x_lo: -1.0,
            x_hi: 1.0,
            n_pairs: 5000,
            grid_size: 5,
            n_agents: 3,
            sight_radius: 1,
            n_landmarks: 2,
            episode_len: 20,
            aux: AuxKind::History,
            observer: 0,
            m: 3,
            schedule: ScheduleKind::Linear,
            diffusion_steps: 5,
            beta_lo: 1e-4,
            beta_hi: 0.02,
            z_dim: 16,
            denoiser_hidden: vec![64, 64, 64],
            head_hidden: vec![64, 64],
            epochs: 100,
            batch_size: 32,
            lr: 2e-4,
            weight_decay: 1e-4,
            beta_kl: 0.1,
            eval_interval: 10,
            n_samples: 1000,
            sample_x: vec![vec![0.0]],
            hist_bins: 80,
            hist_lo: -4.0,
            hist_hi: 4.0,
            eval_x: vec![0.0],
            eval_samples: 1000,
            propagation_trials: 100_000,
            c2: 1.0,
            gradcheck_state_dim: 2,
            gradcheck_cond_dim: 2,
            gradcheck_z_dim: 2,
            gradcheck_steps: 2,
            gradcheck_hidden: 4,
            gradcheck_batch: 4,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn task_spec(&self) -> TaskSpec {
        match self.task {
            TaskKind::Bimodal => TaskSpec::Bimodal {
                c: self.c,
                sigma: self.sigma,
                state_dim: self.state_dim,
                x_lo: self.x_lo,
                x_hi: self.x_hi,
            },
            TaskKind::Unimodal => TaskSpec::Unimodal {
                sigma: self.sigma,
                state_dim: self.state_dim,
                x_lo: self.x_lo,
                x_hi: self.x_hi,
            },
            TaskKind::Grid => TaskSpec::Grid {
                grid: GridConfig {
                    size: self.grid_size,
                    n_agents: self.n_agents,
                    sight_radius: self.sight_radius,
                    n_landmarks: self.n_landmarks,
                    episode_len: self.episode_len,
                },
                aux: match self.aux {
                    AuxKind::History => AuxMode::History {
                        observer: self.observer,
                        m: self.m,
                    },
                    AuxKind::Joint => AuxMode::Joint,
                },
            },
        }
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule,
            num_steps: self.diffusion_steps,
            beta_lo: self.beta_lo,
            beta_hi: self.beta_hi,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let dims = self.task_spec().dims();
        ModelConfig {
            dims: ModelDims {
                state: dims.state,
                cond: dims.cond,
                latent: self.z_dim,
            },
            denoiser_hidden: self.denoiser_hidden.clone(),
            head_hidden: self.head_hidden.clone(),
            schedule: self.schedule_spec(),
            beta_kl: self.beta_kl,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta_kl: self.beta_kl,
            seed: self.seed,
            eval_interval: self.eval_interval,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_toml()).unwrap(), d);
        assert_eq!(RunConfig::parse("").unwrap(), d);
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let err = RunConfig::parse("seed = 3\n\nbogus_key = 1\n").unwrap_err();
        assert!(err.contains("bogus_key"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn type_errors_carry_line_numbers() {
        let err = RunConfig::parse("c = 2.0\nepochs = \"many\"\n").unwrap_err();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn grid_task_dims() {
        let cfg = RunConfig::parse("task = \"grid\"\naux = \"joint\"\n").unwrap();
        let dims = cfg.task_spec().dims();
        assert_eq!(dims.cond, 3 * (2 + 3 * 25));
        assert_eq!(dims.state, 2 * 3 + 3 * 2);
        let cfg = RunConfig::parse("task = \"grid\"\n").unwrap();
        assert_eq!(cfg.task_spec().dims().cond, 4 * (2 + 3 * 25));
    }

    #[test]
    fn reference_hyperparameter_defaults() {
        let d = RunConfig::default();
        assert_eq!(
            (d.diffusion_steps, d.z_dim, d.lr, d.batch_size, d.weight_decay, d.m),
            (5, 16, 2e-4, 32, 1e-4, 3)
        );
    }
}
