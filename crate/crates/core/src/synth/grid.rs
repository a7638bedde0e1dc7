//! A square grid with randomly walking agents and valued landmarks.
//!
//! The global state is every agent's position and every landmark's position
//! and value, positions scaled to `[0, 1]`. An agent observes its own scaled
//! position followed by [`CELL_FEATURES`] numbers per cell in row-major order:
//! the number of other agents there, the landmark value there, and a
//! visibility bit. Cells farther than the sight radius (Chebyshev distance)
//! read `0, 0, 0`, so a masked cell is distinguishable from an empty one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CELL_FEATURES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub size: usize,
    pub n_agents: usize,
    pub sight_radius: usize,
    pub n_landmarks: usize,
    pub episode_len: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            size: 5,
            n_agents: 3,
            sight_radius: 1,
            n_landmarks: 2,
            episode_len: 20,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.n_agents == 0 || self.episode_len == 0 {
            return Err(Error::InvalidParameter(
                "grid size, agent count and episode length must be positive".into(),
            ));
        }
        if self.n_landmarks > self.size * self.size {
            return Err(Error::InvalidParameter("more landmarks than cells".into()));
        }
        Ok(())
    }

    pub fn observation_dim(&self) -> usize {
        2 + CELL_FEATURES * self.size * self.size
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_agents + 3 * self.n_landmarks
    }
}

/// How the conditioning vector is assembled from observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "aux", rename_all = "lowercase")]
pub enum AuxMode {
    /// One agent's last `m + 1` observations.
    History { observer: usize, m: usize },
    /// Every agent's current observation.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub pos: (usize, usize),
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    cfg: GridConfig,
    agents: Vec<(usize, usize)>,
    landmarks: Vec<Landmark>,
    t: usize,
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

impl GridWorld {
    /// Random agent positions, distinct landmark cells, landmark values in
    /// `[0.5, 1.5)`.
    pub fn reset<R: Rng + ?Sized>(cfg: GridConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let cells = cfg.size * cfg.size;
        let mut free: Vec<usize> = (0..cells).collect();
        let mut landmarks = Vec::with_capacity(cfg.n_landmarks);
        for _ in 0..cfg.n_landmarks {
            let cell = free.swap_remove(rng.random_range(0..free.len()));
            landmarks.push(Landmark {
                pos: (cell / cfg.size, cell % cfg.size),
                value: rng.random_range(0.5..1.5),
            });
        }
        let agents = (0..cfg.n_agents)
            .map(|_| (rng.random_range(0..cfg.size), rng.random_range(0..cfg.size)))
            .collect();
        Ok(GridWorld {
            cfg,
            agents,
            landmarks,
            t: 0,
        })
    }

    pub fn from_parts(cfg: GridConfig, agents: Vec<(usize, usize)>, landmarks: Vec<Landmark>) -> Result<Self> {
        cfg.validate()?;
        let inside = |p: (usize, usize)| p.0 < cfg.size && p.1 < cfg.size;
        if agents.len() != cfg.n_agents
            || landmarks.len() != cfg.n_landmarks
            || !agents.iter().copied().all(inside)
            || !landmarks.iter().all(|l| inside(l.pos))
        {
            return Err(Error::InvalidParameter("grid layout does not match config".into()));
        }
        Ok(GridWorld {
            cfg,
            agents,
            landmarks,
            t: 0,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn agents(&self) -> &[(usize, usize)] {
        &self.agents
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn time(&self) -> usize {
        self.t
    }

    fn scale(&self, v: usize) -> f64 {
        if self.cfg.size > 1 {
            v as f64 / (self.cfg.size - 1) as f64
        } else {
            0.0
        }
    }

    /// Each agent stays or moves one cell in a compass direction, uniformly;
    /// moves off the grid leave it in place.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.cfg.size;
        for a in &mut self.agents {
            *a = match rng.random_range(0..5u8) {
                1 if a.0 > 0 => (a.0 - 1, a.1),
                2 if a.0 + 1 < n => (a.0 + 1, a.1),
                3 if a.1 > 0 => (a.0, a.1 - 1),
                4 if a.1 + 1 < n => (a.0, a.1 + 1),
                _ => *a,
            };
        }
        self.t += 1;
    }

    pub fn global_state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.cfg.state_dim());
        for a in &self.agents {
            s.push(self.scale(a.0));
            s.push(self.scale(a.1));
        }
        for l in &self.landmarks {
            s.push(self.scale(l.pos.0));
            s.push(self.scale(l.pos.1));
            s.push(l.value);
        }
        s
    }

    pub fn observe(&self, agent: usize) -> Result<Vec<f64>> {
        let me = *self.agents.get(agent).ok_or_else(|| {
            Error::InvalidParameter(format!("agent {agent} out of range 0..{}", self.cfg.n_agents))
        })?;
        let n = self.cfg.size;
        let mut obs = vec![0.0; self.cfg.observation_dim()];
        obs[0] = self.scale(me.0);
        obs[1] = self.scale(me.1);
        for r in 0..n {
            for c in 0..n {
                if chebyshev(me, (r, c)) > self.cfg.sight_radius {
                    continue;
                }
                let base = 2 + CELL_FEATURES * (r * n + c);
                obs[base] = self
                    .agents
                    .iter()
                    .enumerate()
                    .filter(|&(i, p)| i != agent && *p == (r, c))
                    .count() as f64;
                obs[base + 1] = self
                    .landmarks
                    .iter()
                    .find(|l| l.pos == (r, c))
                    .map_or(0.0, |l| l.value);
                obs[base + 2] = 1.0;
            }
        }
        Ok(obs)
    }

    pub fn observe_all(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents)
            .map(|i| self.observe(i).expect("agent index in range"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn observation_layout() {
        let cfg = GridConfig {
            size: 3,
            n_agents: 2,
            sight_radius: 1,
            n_landmarks: 1,
            episode_len: 5,
        };
        let w = GridWorld::from_parts(
            cfg,
            vec![(0, 0), (1, 1)],
            vec![Landmark {
                pos: (2, 2),
                value: 0.9,
            }],
        )
        .unwrap();
        let o = w.observe(0).unwrap();
        assert_eq!(o.len(), cfg.observation_dim());
        assert_eq!(&o[..2], &[0.0, 0.0]);
        let cell = |r: usize, c: usize| &o[2 + 3 * (r * 3 + c)..2 + 3 * (r * 3 + c) + 3];
        assert_eq!(cell(1, 1), &[1.0, 0.0, 1.0]);
        assert_eq!(cell(0, 0), &[0.0, 0.0, 1.0]);
        assert_eq!(cell(2, 2), &[0.0, 0.0, 0.0]);
        let o1 = w.observe(1).unwrap();
        assert_eq!(&o1[2 + 3 * 8..], &[0.0, 0.9, 1.0]);
        assert!(w.observe(2).is_err());
        assert_eq!(w.global_state(), vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 0.9]);
    }

    #[test]
    fn walk_stays_on_grid() {
        let cfg = GridConfig::default();
        let mut r = rng::stream(5, "grid", 0);
        let mut w = GridWorld::reset(cfg, &mut r).unwrap();
        for _ in 0..200 {
            w.step(&mut r);
            assert!(w.agents().iter().all(|a| a.0 < cfg.size && a.1 < cfg.size));
        }
        assert_eq!(w.time(), 200);
    }

    #[test]
    fn rejects_invalid_config() {
        let mut r = rng::stream(0, "grid", 0);
        let bad = GridConfig {
            n_landmarks: 30,
            ..Default::default()
        };
        assert!(GridWorld::reset(bad, &mut r).is_err());
        let bad = GridConfig {
            size: 0,
            ..Default::default()
        };
        assert!(GridWorld::reset(bad, &mut r).is_err());
    }
}
