//! Step-size schedules, all expressed per datum: the value at iteration `t ≥ 1` is
//! divided by the number of active items `n`.

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "schedule", rename_all = "lowercase"))]
pub enum Schedule {
    /// `a / n`
    Constant { a: f64 },
    /// `a · t^b / n`
    Power { a: f64, b: f64 },
    /// `a · factor^⌊(t − 1) / every⌋ / n`
    Step { a: f64, factor: f64, every: usize },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Constant { a } => a > 0.0 && a.is_finite(),
            Schedule::Power { a, b } => a > 0.0 && a.is_finite() && b.is_finite(),
            Schedule::Step { a, factor, every } => a > 0.0 && a.is_finite() && factor > 0.0 && factor.is_finite() && every > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("invalid schedule {self:?}")))
        }
    }

    /// Step size at iteration `t` (1-based) for `n` datums.
    pub fn at(&self, t: usize, n: usize) -> f64 {
        let t = t.max(1);
        let n = n.max(1) as f64;
        match *self {
            Schedule::Constant { a } => a / n,
            Schedule::Power { a, b } => a * math::powf(t as f64, b) / n,
            Schedule::Step { a, factor, every } => {
                a * math::powf(factor, math::floor(((t - 1) / every) as f64)) / n
            }
        }
    }
}

/// SGHMC friction coupled to the step size: `α_t = α₀ · √(η_t / η₁)`.
///
/// When η decays by a factor `c`, α decays by `√c`.
pub fn coupled_alpha(alpha0: f64, eta_t: f64, eta_1: f64) -> f64 {
    alpha0 * math::sqrt(eta_t / eta_1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgld_first_step() {
        let s = Schedule::Power { a: 4.0, b: -0.15 };
        assert!((s.at(1, 2000) - 0.002).abs() < 1e-18);
        assert!(s.at(2, 2000) < s.at(1, 2000));
    }

    #[test]
    fn step_schedule_and_coupling() {
        let s = Schedule::Step { a: 1.0, factor: 0.5, every: 10 };
        assert_eq!(s.at(10, 1), 1.0);
        assert_eq!(s.at(11, 1), 0.5);
        let a0 = 0.4;
        let ratio = coupled_alpha(a0, s.at(11, 1), s.at(1, 1)) / coupled_alpha(a0, s.at(10, 1), s.at(1, 1));
        assert!((ratio - (0.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(Schedule::Constant { a: 0.0 }.validate().is_err());
        assert!(Schedule::Step { a: 1.0, factor: 0.5, every: 0 }.validate().is_err());
        assert!(Schedule::Power { a: 2.0, b: -0.15 }.validate().is_ok());
    }
}
