use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aux::{build_history_aux, build_joint_aux};
use super::gmm::{make_bimodal_task, make_unimodal_task, ConditionalGMM};
use super::grid::{AuxMode, GridConfig, GridWorld};
use crate::error::{check_dim, Error, Result};
use crate::rng;

/// One training pair: conditioning vector `x` and target state `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDims {
    pub state: usize,
    pub cond: usize,
}

/// What to generate. GMM tasks draw `x` uniformly from `[x_lo, x_hi]` in
/// every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskSpec {
    Bimodal {
        c: f64,
        sigma: f64,
        state_dim: usize,
        x_lo: f64,
        x_hi: f64,
    },
    Unimodal {
        sigma: f64,
        state_dim: usize,
        x_lo: f64,
        x_hi: f64,
    },
    Grid {
        #[serde(flatten)]
        grid: GridConfig,
        #[serde(flatten)]
        aux: AuxMode,
    },
}

impl TaskSpec {
    /// The conditional law behind a GMM task; `None` for the grid world.
    pub fn gmm(&self) -> Result<Option<ConditionalGMM>> {
        match *self {
            TaskSpec::Bimodal { c, sigma, state_dim, .. } => make_bimodal_task(c, sigma, state_dim).map(Some),
            TaskSpec::Unimodal { sigma, state_dim, .. } => make_unimodal_task(sigma, state_dim).map(Some),
            TaskSpec::Grid { .. } => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskSpec::Bimodal { x_lo, x_hi, .. } | TaskSpec::Unimodal { x_lo, x_hi, .. } => {
                if !(x_lo.is_finite() && x_hi.is_finite() && x_lo <= x_hi) {
                    return Err(Error::InvalidRange(format!("x range [{x_lo}, {x_hi}]")));
                }
                self.gmm().map(|_| ())
            }
            TaskSpec::Grid { grid, aux } => {
                grid.validate()?;
                if let AuxMode::History { observer, .. } = aux {
                    if observer >= grid.n_agents {
                        return Err(Error::InvalidParameter(format!(
                            "observer {observer} out of range 0..{}",
                            grid.n_agents
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn dims(&self) -> StateDims {
        match *self {
            TaskSpec::Bimodal { state_dim, .. } | TaskSpec::Unimodal { state_dim, .. } => StateDims {
                state: state_dim,
                cond: state_dim,
            },
            TaskSpec::Grid { grid, aux } => StateDims {
                state: grid.state_dim(),
                cond: match aux {
                    AuxMode::History { m, .. } => grid.observation_dim() * (m + 1),
                    AuxMode::Joint => grid.observation_dim() * grid.n_agents,
                },
            },
        }
    }
}

/// Header line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(flatten)]
    pub task: TaskSpec,
    pub seed: u64,
    pub dims: StateDims,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub pairs: Vec<Sample>,
}

impl Dataset {
    /// GMM pair `i` comes from the stream `(seed, "pair", i)`; grid episode
    /// `e` from `(seed, "episode", e)`, each episode contributing
    /// `episode_len` consecutive pairs.
    pub fn generate(task: &TaskSpec, n_pairs: usize, seed: u64) -> Result<Self> {
        task.validate()?;
        if n_pairs == 0 {
            return Err(Error::InvalidParameter("n_pairs must be at least 1".into()));
        }
        let pairs = match *task {
            TaskSpec::Bimodal { x_lo, x_hi, .. } | TaskSpec::Unimodal { x_lo, x_hi, .. } => {
                let gmm = task.gmm()?.expect("GMM task");
                (0..n_pairs)
                    .into_par_iter()
                    .map(|i| {
                        let mut r = rng::stream(seed, "pair", i as u64);
                        let x: Vec<f64> = (0..gmm.cond_dim())
                            .map(|_| if x_lo < x_hi { r.random_range(x_lo..=x_hi) } else { x_lo })
                            .collect();
                        let (_, s) = gmm.sample(&x, &mut r)?;
                        Ok(Sample { x, s })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            TaskSpec::Grid { grid, aux } => {
                let episodes = n_pairs.div_ceil(grid.episode_len);
                let mut pairs: Vec<Sample> = (0..episodes)
                    .into_par_iter()
                    .map(|e| rollout(grid, aux, seed, e as u64))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect();
                pairs.truncate(n_pairs);
                pairs
            }
        };
        Ok(Dataset {
            meta: DatasetMeta {
                task: task.clone(),
                seed,
                dims: task.dims(),
                n: n_pairs,
            },
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// JSON Lines: the header, then one `{"x":[..],"s":[..]}` per pair.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.meta)?;
        out.write_all(b"\n")?;
        for p in &self.pairs {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let (_, header) = lines.next().ok_or(Error::Dataset("missing header line".into()))?;
        let meta: DatasetMeta = serde_json::from_str(&header?)
            .map_err(|e| Error::Dataset(format!("line 1: bad header: {e}")))?;
        let mut pairs = Vec::with_capacity(meta.n);
        for (i, line) in lines {
            let p: Sample = serde_json::from_str(&line?)
                .map_err(|e| Error::Dataset(format!("line {}: {e}", i + 1)))?;
            check_dim("dataset state", meta.dims.state, p.s.len())?;
            check_dim("dataset condition", meta.dims.cond, p.x.len())?;
            pairs.push(p);
        }
        if pairs.len() != meta.n {
            return Err(Error::Dataset(format!(
                "header declares {} pairs, file holds {}",
                meta.n,
                pairs.len()
            )));
        }
        Ok(Dataset { meta, pairs })
    }
}

fn rollout(grid: GridConfig, aux: AuxMode, seed: u64, episode: u64) -> Result<Vec<Sample>> {
    let mut r = rng::stream(seed, "episode", episode);
    let mut world = GridWorld::reset(grid, &mut r)?;
    let mut history = Vec::with_capacity(grid.episode_len);
    let mut out = Vec::with_capacity(grid.episode_len);
    for t in 0..grid.episode_len {
        if t > 0 {
            world.step(&mut r);
        }
        let x = match aux {
            AuxMode::History { observer, m } => {
                history.push(world.observe(observer)?);
                build_history_aux(&history, t, m)?
            }
            AuxMode::Joint => build_joint_aux(&world.observe_all())?,
        };
        out.push(Sample {
            x,
            s: world.global_state(),
        });
    }
    Ok(out)
}
