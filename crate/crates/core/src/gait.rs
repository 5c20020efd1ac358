//! Open-loop pronking contact schedule: every leg shares one stance/swing
//! timeline, stance first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("phase durations must be positive (stance {stance}, swing {swing})")]
    InvalidDuration { stance: f64, swing: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    pub stance_duration: f64,
    pub swing_duration: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            stance_duration: 0.5,
            swing_duration: 0.5,
        }
    }
}

impl GaitConfig {
    pub fn cycle_duration(&self) -> f64 {
        self.stance_duration + self.swing_duration
    }

    pub fn schedule_at(&self, t: f64) -> Result<LegSchedule, GaitError> {
        schedule_at(t, self.stance_duration, self.swing_duration)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegSchedule {
    /// Desired contact per leg; identical for all legs when pronking.
    pub desired_contact: [bool; 4],
    /// Progress through the current phase in `[0, 1)`.
    pub phase_fraction: f64,
    /// Time left in the current phase, in `(0, phase duration]`.
    pub remaining_phase_time: f64,
    /// Time left in the whole cycle, in `(0, cycle duration]`.
    pub remaining_cycle_time: f64,
    pub cycle_index: u64,
}

impl LegSchedule {
    pub fn is_stance(&self) -> bool {
        self.desired_contact[0]
    }
}

/// Phase boundaries belong to the phase being entered: `t = stance` is the
/// first instant of swing.
pub fn schedule_at(t: f64, stance: f64, swing: f64) -> Result<LegSchedule, GaitError> {
    if !(stance > 0.0 && swing > 0.0) {
        return Err(GaitError::InvalidDuration { stance, swing });
    }
    let cycle = stance + swing;
    let t = t.max(0.0);
    let mut index = (t / cycle).floor();
    let mut tau = t - index * cycle;
    if tau >= cycle {
        index += 1.0;
        tau = 0.0;
    } else if tau < 0.0 {
        index -= 1.0;
        tau += cycle;
    }

    let in_stance = tau < stance;
    let (phase_fraction, remaining) = if in_stance {
        (tau / stance, stance - tau)
    } else {
        ((tau - stance) / swing, cycle - tau)
    };
    Ok(LegSchedule {
        desired_contact: [in_stance; 4],
        phase_fraction,
        remaining_phase_time: remaining,
        remaining_cycle_time: cycle - tau,
        cycle_index: index as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn starts_in_stance() {
        let s = schedule_at(0.0, 0.5, 0.5).unwrap();
        assert!(s.is_stance());
        assert_eq!(s.remaining_phase_time, 0.5);
        assert_eq!(s.remaining_cycle_time, 1.0);
        assert_eq!(s.cycle_index, 0);
    }

    #[test]
    fn swing_midpoint() {
        let s = schedule_at(0.75, 0.5, 0.5).unwrap();
        assert!(!s.is_stance());
        assert_relative_eq!(s.remaining_phase_time, 0.25);
        assert_relative_eq!(s.phase_fraction, 0.5);
    }

    #[test]
    fn periodic_restart() {
        let s = schedule_at(2.0, 0.5, 0.5).unwrap();
        assert!(s.is_stance());
        assert_eq!(s.cycle_index, 2);
        assert_eq!(s.phase_fraction, 0.0);
    }

    #[test]
    fn boundary_belongs_to_swing() {
        let s = schedule_at(0.5, 0.5, 0.5).unwrap();
        assert!(!s.is_stance());
        assert_eq!(s.remaining_phase_time, 0.5);
    }

    #[test]
    fn rejects_bad_durations() {
        assert!(schedule_at(0.1, 0.0, 0.5).is_err());
        assert!(schedule_at(0.1, 0.5, -1.0).is_err());
    }

    #[test]
    fn one_transition_per_half_second() {
        let mut last = schedule_at(0.0, 0.5, 0.5).unwrap().is_stance();
        let mut transitions = 0;
        for k in 1..=2500u32 {
            let s = schedule_at(k as f64 / 500.0, 0.5, 0.5).unwrap();
            if s.is_stance() != last {
                transitions += 1;
                last = s.is_stance();
            }
        }
        assert_eq!(transitions, 10);
    }

    proptest! {
        #[test]
        fn periodicity(t in 0.0f64..10.0, k in 1u32..20) {
            let a = schedule_at(t, 0.5, 0.5).unwrap();
            let b = schedule_at(t + k as f64, 0.5, 0.5).unwrap();
            prop_assert_eq!(a.desired_contact, b.desired_contact);
            prop_assert!((a.remaining_phase_time - b.remaining_phase_time).abs() < 1e-9);
            prop_assert!(a.remaining_phase_time > 0.0 && a.remaining_phase_time <= 0.5);
        }
    }
}
