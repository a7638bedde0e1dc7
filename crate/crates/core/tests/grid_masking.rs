//! Exhaustive visibility checks on a 5×5 grid: every observer cell, every
//! cell for a second agent and every landmark cell, for each sight radius.

use statediff::synth::{GridConfig, GridWorld, Landmark, CELL_FEATURES};

const N: usize = 5;

fn cells() -> impl Iterator<Item = (usize, usize)> {
    (0..N).flat_map(|r| (0..N).map(move |c| (r, c)))
}

#[test]
fn hidden_cells_reveal_nothing_and_visible_cells_are_exact() {
    for radius in 0..=N {
        let cfg = GridConfig {
            size: N,
            n_agents: 2,
            sight_radius: radius,
            n_landmarks: 1,
            episode_len: 1,
        };
        for me in cells() {
            for other in cells() {
                for mark in cells() {
                    let world = GridWorld::from_parts(
                        cfg,
                        vec![me, other],
                        vec![Landmark { pos: mark, value: 1.25 }],
                    )
                    .unwrap();
                    let obs = world.observe(0).unwrap();
                    assert_eq!(obs.len(), 2 + CELL_FEATURES * N * N);
                    for (r, c) in cells() {
                        let base = 2 + CELL_FEATURES * (r * N + c);
                        let cell = &obs[base..base + CELL_FEATURES];
                        let dist = me.0.abs_diff(r).max(me.1.abs_diff(c));
                        if dist > radius {
                            assert_eq!(cell, &[0.0, 0.0, 0.0], "radius {radius} me {me:?} cell {:?}", (r, c));
                        } else {
                            let agents = if other == (r, c) { 1.0 } else { 0.0 };
                            let value = if mark == (r, c) { 1.25 } else { 0.0 };
                            assert_eq!(cell, &[agents, value, 1.0]);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn own_position_is_always_visible() {
    let cfg = GridConfig {
        size: N,
        n_agents: 1,
        sight_radius: 0,
        n_landmarks: 0,
        episode_len: 1,
    };
    for me in cells() {
        let obs = GridWorld::from_parts(cfg, vec![me], vec![]).unwrap().observe(0).unwrap();
        let visible: Vec<usize> = (0..N * N).filter(|i| obs[2 + CELL_FEATURES * i + 2] == 1.0).collect();
        assert_eq!(visible, vec![me.0 * N + me.1]);
        assert_eq!(obs[0], me.0 as f64 / (N - 1) as f64);
        assert_eq!(obs[1], me.1 as f64 / (N - 1) as f64);
    }
}
