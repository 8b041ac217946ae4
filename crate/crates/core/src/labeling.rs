//! Square-wave encoding of heel strikes: the label is 1 after a left strike
//! and 0 after a right strike, so every strike is a transition of the wave.

use serde::{Deserialize, Serialize};

use crate::ingest::{Foot, StepEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrideSignal {
    pub times: Vec<f64>,
    pub values: Vec<u8>,
}

impl StrideSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Debug dump as `t,value` CSV lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

/// Evaluate the wave at each sample time. A strike takes effect at the first
/// sample whose time is at or after the strike.
pub fn build_square_wave(steps: &[StepEvent], sample_times: &[f64]) -> StrideSignal {
    let mut values = Vec::with_capacity(sample_times.len());
    let mut state = 0u8;
    let mut next = 0usize;
    let mut prev_foot: Option<Foot> = None;
    for &t in sample_times {
        let mut applied = 0;
        while next < steps.len() && steps[next].t <= t {
            let step = steps[next];
            if prev_foot == Some(step.foot) {
                log::warn!(
                    "consecutive {:?} strikes at {}; the second one is not visible in the wave",
                    step.foot,
                    step.t
                );
            }
            prev_foot = Some(step.foot);
            state = u8::from(step.foot == Foot::Left);
            applied += 1;
            next += 1;
        }
        if applied > 1 {
            log::warn!("{applied} strikes collapse onto the sample at {t}");
        }
        values.push(state);
    }
    StrideSignal {
        times: sample_times.to_vec(),
        values,
    }
}

/// Times of every sample whose value differs from the previous sample's.
pub fn signal_to_steps(sig: &StrideSignal) -> Vec<f64> {
    transition_indices(&sig.values)
        .into_iter()
        .map(|i| sig.times[i])
        .collect()
}

pub(crate) fn transition_indices(values: &[u8]) -> Vec<usize> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, _)| i + 1)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(t: f64, foot: Foot) -> StepEvent {
        StepEvent { t, foot }
    }

    #[test]
    fn first_left_step_raises_the_wave() {
        let sig = build_square_wave(&[step(5.4761, Foot::Left)], &[5.40, 5.48, 5.56]);
        assert_eq!(sig.values, vec![0, 1, 1]);
    }

    #[test]
    fn no_steps_is_all_zero() {
        let sig = build_square_wave(&[], &[0.0, 1.0, 2.0]);
        assert_eq!(sig.values, vec![0, 0, 0]);
    }

    #[test]
    fn alternating_toggles() {
        let steps = [step(1.0, Foot::Left), step(1.5, Foot::Right), step(2.0, Foot::Left)];
        let times: Vec<f64> = (0..=12).map(|i| i as f64 * 0.25).collect();
        let sig = build_square_wave(&steps, &times);
        let expected: Vec<u8> = times
            .iter()
            .map(|&t| u8::from((1.0..1.5).contains(&t) || t >= 2.0))
            .collect();
        assert_eq!(sig.values, expected);
    }

    #[test]
    fn transitions_are_reported_both_ways() {
        let sig = StrideSignal {
            times: vec![0.0, 1.0, 2.0, 3.0],
            values: vec![0, 1, 1, 0],
        };
        assert_eq!(signal_to_steps(&sig), vec![1.0, 3.0]);
        let flat = StrideSignal {
            times: vec![0.0, 1.0, 2.0],
            values: vec![1, 1, 1],
        };
        assert!(signal_to_steps(&flat).is_empty());
    }

    #[test]
    fn repeated_foot_is_absorbed() {
        let steps = [step(1.0, Foot::Left), step(2.0, Foot::Left), step(3.0, Foot::Right)];
        let times: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        let sig = build_square_wave(&steps, &times);
        assert_eq!(signal_to_steps(&sig), vec![1.0, 3.0]);
    }

    #[test]
    fn leading_right_step_is_invisible() {
        let steps = [step(1.0, Foot::Right), step(2.0, Foot::Left)];
        let times: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let sig = build_square_wave(&steps, &times);
        assert_eq!(signal_to_steps(&sig), vec![2.0]);
    }

    proptest! {
        #[test]
        fn change_count_matches(values in proptest::collection::vec(0u8..2, 1..200)) {
            let times: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
            let changes = values.windows(2).filter(|w| w[0] != w[1]).count();
            let sig = StrideSignal { times, values };
            prop_assert_eq!(signal_to_steps(&sig).len(), changes);
        }

        #[test]
        fn causal(gaps in proptest::collection::vec(0.05f64..1.0, 1..20), cut in 0usize..400) {
            // truncating the strike list after time t never changes values before t
            let mut t = 0.0;
            let steps: Vec<StepEvent> = gaps.iter().enumerate().map(|(i, g)| {
                t += g;
                step(t, if i % 2 == 0 { Foot::Left } else { Foot::Right })
            }).collect();
            let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
            let full = build_square_wave(&steps, &times);
            let horizon = times[cut];
            let kept: Vec<StepEvent> = steps.iter().copied().filter(|s| s.t <= horizon).collect();
            let part = build_square_wave(&kept, &times);
            prop_assert_eq!(&full.values[..=cut], &part.values[..=cut]);
        }
    }
}
