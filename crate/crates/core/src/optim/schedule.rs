use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cosine annealing with warm restarts: cycles of length `T0`, `T0·Tmult`,
/// `T0·Tmult²`, …
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub t0: u64,
    pub t_mult: u64,
}

impl SchedulerConfig {
    pub fn new(lr_max: f64) -> Self {
        Self { lr_max, lr_min: 0.0, t0: 10, t_mult: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min >= 0.0 && self.lr_max > self.lr_min) {
            return Err(Error::invalid("scheduler needs lr_max > lr_min >= 0"));
        }
        if self.t0 == 0 || self.t_mult == 0 {
            return Err(Error::invalid("scheduler needs T0 >= 1 and Tmult >= 1"));
        }
        Ok(())
    }

    /// `(offset within cycle, cycle length)` for a global step.
    pub fn cycle_position(&self, step: u64) -> (u64, u64) {
        let mut len = self.t0.max(1);
        let mut cur = step;
        if self.t_mult <= 1 {
            return (cur % len, len);
        }
        while cur >= len {
            cur -= len;
            len = len.saturating_mul(self.t_mult);
        }
        (cur, len)
    }
}

pub fn cosine_warm_restarts_lr(step: u64, cfg: &SchedulerConfig) -> f64 {
    let (t_cur, t_i) = cfg.cycle_position(step);
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * t_cur as f64 / t_i as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors() {
        let cfg = SchedulerConfig::new(1e-3);
        assert_eq!(cosine_warm_restarts_lr(0, &cfg), 1e-3);
        assert!((cosine_warm_restarts_lr(5, &cfg) - 0.5e-3).abs() < 1e-18);
        assert_eq!(cosine_warm_restarts_lr(10, &cfg), 1e-3);
        assert_eq!(cfg.cycle_position(10), (0, 20));
        assert_eq!(cfg.cycle_position(29), (19, 20));
        assert_eq!(cfg.cycle_position(30), (0, 40));
    }

    #[test]
    fn constant_cycles_without_multiplier() {
        let cfg = SchedulerConfig { t_mult: 1, ..SchedulerConfig::new(1.0) };
        assert_eq!(cfg.cycle_position(25), (5, 10));
    }

    #[test]
    fn validation() {
        assert!(SchedulerConfig { lr_min: 1.0, ..SchedulerConfig::new(1.0) }.validate().is_err());
        assert!(SchedulerConfig { t0: 0, ..SchedulerConfig::new(1.0) }.validate().is_err());
        assert!(SchedulerConfig::new(1.0).validate().is_ok());
    }
}
