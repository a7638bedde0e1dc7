//! Auxiliary conditioning vectors built from local observations.

use crate::error::{check_dim, Error, Result};

/// Stack one agent's observations `o_{t−m} … o_t`. Slots before the start
/// of the episode are zero.
pub fn build_history_aux(observations: &[Vec<f64>], t: usize, m: usize) -> Result<Vec<f64>> {
    let current = observations.get(t).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "time {t} beyond the {} recorded observations",
            observations.len()
        ))
    })?;
    let width = current.len();
    let mut out = Vec::with_capacity(width * (m + 1));
    for step in 0..=m {
        match (t + step).checked_sub(m) {
            Some(idx) => {
                check_dim("history observation", width, observations[idx].len())?;
                out.extend_from_slice(&observations[idx]);
            }
            None => out.extend(std::iter::repeat_n(0.0, width)),
        }
    }
    Ok(out)
}

/// Concatenate every agent's observation at one time, in agent order.
pub fn build_joint_aux(observations: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = observations.first().ok_or(Error::Empty("joint observation needs an agent"))?;
    let width = first.len();
    let mut out = Vec::with_capacity(width * observations.len());
    for o in observations {
        check_dim("joint observation", width, o.len())?;
        out.extend_from_slice(o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(n: usize, width: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|t| (0..width).map(|j| (t * 10 + j + 1) as f64).collect())
            .collect()
    }

    #[test]
    fn zero_window_is_current_observation() {
        let o = obs(4, 3);
        assert_eq!(build_history_aux(&o, 2, 0).unwrap(), o[2]);
    }

    #[test]
    fn default_window_stacks_four() {
        let o = obs(6, 2);
        let x = build_history_aux(&o, 5, 3).unwrap();
        assert_eq!(x.len(), 8);
        assert_eq!(x, [o[2].clone(), o[3].clone(), o[4].clone(), o[5].clone()].concat());
    }

    #[test]
    fn early_steps_are_zero_padded() {
        let o = obs(3, 2);
        let x = build_history_aux(&o, 1, 3).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 11.0, 12.0]);
        assert!(build_history_aux(&o, 3, 1).is_err());
    }

    #[test]
    fn joint_concatenates_in_order() {
        let o = obs(1, 5);
        assert_eq!(build_joint_aux(&o).unwrap(), o[0]);
        let o = obs(3, 4);
        let x = build_joint_aux(&o).unwrap();
        assert_eq!(x.len(), 12);
        assert_eq!(&x[4..8], &o[1][..]);
        let swapped = vec![o[1].clone(), o[0].clone(), o[2].clone()];
        assert_ne!(build_joint_aux(&swapped).unwrap(), x);
        assert!(build_joint_aux(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(build_joint_aux(&[]).is_err());
    }

    proptest! {
        #[test]
        fn history_window_is_injective(
            a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 5),
            b in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 5),
        ) {
            let xa = build_history_aux(&a, 4, 4).unwrap();
            let xb = build_history_aux(&b, 4, 4).unwrap();
            prop_assert_eq!(a == b, xa == xb);
        }

        #[test]
        fn joint_is_injective(
            a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..5),
            b in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..5),
        ) {
            let xa = build_joint_aux(&a).unwrap();
            let xb = build_joint_aux(&b).unwrap();
            prop_assert_eq!(a == b, xa == xb);
        }

        #[test]
        fn history_layout(t in 0usize..8, m in 0usize..6) {
            let o = obs(8, 3);
            let x = build_history_aux(&o, t, m).unwrap();
            prop_assert_eq!(x.len(), 3 * (m + 1));
            for slot in 0..=m {
                let chunk = &x[slot * 3..slot * 3 + 3];
                if t + slot >= m {
                    prop_assert_eq!(chunk, &o[t + slot - m][..]);
                } else {
                    prop_assert!(chunk.iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}
