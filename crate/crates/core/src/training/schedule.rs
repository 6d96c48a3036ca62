//! Loss-aware scheduled teacher forcing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherForcingConfig {
    /// Above this recent refinement L1 the ground truth is always fed back.
    pub d_start: f64,
    /// Below this recent refinement L1 the model's own output is always fed back.
    pub d_end: f64,
    /// Number of recent minibatches averaged.
    pub window: usize,
}

impl Default for TeacherForcingConfig {
    fn default() -> Self {
        Self {
            d_start: 0.06,
            d_end: 0.01,
            window: 20,
        }
    }
}

impl TeacherForcingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_end > 0.0 && self.d_start > self.d_end && self.d_start.is_finite()) {
            return Err(Error::Config(format!(
                "teacher forcing needs d_start > d_end > 0, got d_start = {}, d_end = {}",
                self.d_start, self.d_end
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("teacher forcing window must be at least 1".into()));
        }
        Ok(())
    }
}

/// 1 above `d_start`, 0 below `d_end`, linear in between.
pub fn teacher_forcing_prob(mean_recent_l1: f64, d_start: f64, d_end: f64) -> Result<f64> {
    if !(d_start > d_end) {
        return Err(Error::Config(format!("d_start ({d_start}) must exceed d_end ({d_end})")));
    }
    Ok(if mean_recent_l1 >= d_start {
        1.0
    } else if mean_recent_l1 <= d_end {
        0.0
    } else {
        // Same line as (l − d_end)/(d_start − d_end); this form is exact at
        // both ends and at the midpoint of the default thresholds.
        1.0 - (d_start - mean_recent_l1) / (d_start - d_end)
    })
}

/// Ring buffer of recent refinement-L1 values and the resulting probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForcingState {
    pub config: TeacherForcingConfig,
    window: VecDeque<f64>,
}

impl TeacherForcingState {
    pub fn new(config: TeacherForcingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            window: VecDeque::with_capacity(config.window),
        })
    }

    pub fn from_window(config: TeacherForcingConfig, values: &[f64]) -> Result<Self> {
        let mut s = Self::new(config)?;
        for &v in values {
            s.push(v);
        }
        Ok(s)
    }

    pub fn push(&mut self, l1: f64) {
        if self.window.len() == self.config.window {
            self.window.pop_front();
        }
        self.window.push_back(l1);
    }

    pub fn window(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.window.is_empty()).then(|| self.window.iter().sum::<f64>() / self.window.len() as f64)
    }

    /// Current probability; 1 until the first value arrives.
    pub fn p_tf(&self) -> f64 {
        match self.mean() {
            None => 1.0,
            Some(m) => teacher_forcing_prob(m, self.config.d_start, self.config.d_end).expect("validated thresholds"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_bounded() {
        let cfg = TeacherForcingConfig {
            window: 3,
            ..Default::default()
        };
        let mut s = TeacherForcingState::new(cfg).unwrap();
        assert_eq!(s.p_tf(), 1.0);
        for v in [1.0, 2.0, 3.0, 4.0] {
            s.push(v);
        }
        assert_eq!(s.window(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn inverted_thresholds_are_rejected() {
        assert!(matches!(teacher_forcing_prob(0.03, 0.01, 0.06), Err(Error::Config(_))));
        let bad = TeacherForcingConfig {
            d_start: 0.01,
            d_end: 0.01,
            window: 20,
        };
        assert!(TeacherForcingState::new(bad).is_err());
    }
}
