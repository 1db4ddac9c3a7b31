//! Power-law noise schedule in `σ^{1/ρ}` space and its single-step and
//! inverse forms.

use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub steps: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            rho: 5.0,
            sigma_min: 0.01,
            sigma_max: 30.0,
            steps: 256,
        }
    }
}

impl ScheduleParams {
    pub fn new(rho: f64, sigma_min: f64, sigma_max: f64, steps: usize) -> Result<Self> {
        let p = ScheduleParams {
            rho,
            sigma_min,
            sigma_max,
            steps,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_steps(self, steps: usize) -> Self {
        ScheduleParams { steps, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(GpffError::InvalidArgument(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(GpffError::InvalidArgument(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.steps < 2 {
            return Err(GpffError::InvalidArgument(format!(
                "schedule needs at least 2 steps, got {}",
                self.steps
            )));
        }
        Ok(())
    }

    /// `σ_max^{1/ρ} − σ_min^{1/ρ}`.
    pub fn span(&self) -> f64 {
        self.sigma_max.powf(1.0 / self.rho) - self.sigma_min.powf(1.0 / self.rho)
    }

    /// Uniform step `1/(N−1)` in `σ^{1/ρ}` space.
    pub fn step_size(&self) -> f64 {
        1.0 / (self.steps - 1) as f64
    }
}

/// `N + 1` levels from `σ_max` down to `σ_min` at index `N − 1`, followed by
/// a terminal zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub levels: Vec<f64>,
    pub params: ScheduleParams,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.params.steps
    }

    /// Level `i`, or 0 past the end.
    pub fn level(&self, i: usize) -> f64 {
        self.levels.get(i).copied().unwrap_or(0.0)
    }
}

pub fn build_schedule(p: &ScheduleParams) -> Result<NoiseSchedule> {
    p.validate()?;
    let inv = 1.0 / p.rho;
    let hi = p.sigma_max.powf(inv);
    let lo = p.sigma_min.powf(inv);
    let last = (p.steps - 1) as f64;
    let mut levels: Vec<f64> = (0..p.steps)
        .map(|i| (hi - (i as f64 / last) * (hi - lo)).powf(p.rho))
        .collect();
    levels[0] = p.sigma_max;
    levels[p.steps - 1] = p.sigma_min;
    levels.push(0.0);
    Ok(NoiseSchedule { levels, params: *p })
}

/// One schedule step of size `Δs` from `σ`, without the terminal clamp.
pub fn next_sigma_raw(sigma: f64, ds: f64, p: &ScheduleParams) -> f64 {
    let base = sigma.max(0.0).powf(1.0 / p.rho) - ds * p.span();
    if base <= 0.0 {
        0.0
    } else {
        base.powf(p.rho)
    }
}

/// Relative slack on the `σ_min` clamp absorbing `σ^{1/ρ}` round-off.
const CLAMP_SLACK: f64 = 1e-12;

/// One schedule step of size `Δs` from `σ`; results at or below `σ_min`
/// become 0.
pub fn next_sigma(sigma: f64, ds: f64, p: &ScheduleParams) -> f64 {
    clamp_terminal(next_sigma_raw(sigma, ds, p), p)
}

/// Sends levels at or below `σ_min` to 0.
pub fn clamp_terminal(sigma: f64, p: &ScheduleParams) -> f64 {
    if sigma <= p.sigma_min * (1.0 + CLAMP_SLACK) {
        0.0
    } else {
        sigma
    }
}

/// Step size in `σ^{1/ρ}` units that takes `σ_prev` to `σ_now`; negative
/// when the noise level increased.
pub fn observed_step_size(sigma_prev: f64, sigma_now: f64, p: &ScheduleParams) -> Result<f64> {
    if !(sigma_prev > 0.0 && sigma_now > 0.0) {
        return Err(GpffError::InvalidArgument(format!(
            "observed step needs positive noise levels, got {sigma_prev} and {sigma_now}"
        )));
    }
    Ok(observed_step_size_unchecked(sigma_prev, sigma_now, p))
}

pub(crate) fn observed_step_size_unchecked(
    sigma_prev: f64,
    sigma_now: f64,
    p: &ScheduleParams,
) -> f64 {
    let inv = 1.0 / p.rho;
    (sigma_prev.max(0.0).powf(inv) - sigma_now.max(0.0).powf(inv)) / p.span()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(n: usize) -> ScheduleParams {
        ScheduleParams::new(5.0, 0.01, 30.0, n).unwrap()
    }

    #[test]
    fn endpoints_and_terminal_zero() {
        for n in [2, 3, 10, 64] {
            let s = build_schedule(&defaults(n)).unwrap();
            assert_eq!(s.levels.len(), n + 1);
            assert_eq!(s.levels[0], 30.0);
            assert_eq!(s.levels[n - 1], 0.01);
            assert_eq!(s.levels[n], 0.0);
            assert!(s.levels.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn rho_one_is_linear() {
        let p = ScheduleParams::new(1.0, 1.0, 10.0, 10).unwrap();
        let s = build_schedule(&p).unwrap();
        for i in 0..10 {
            assert!((s.levels[i] - (10.0 - i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_levels() {
        let p = defaults(10);
        let s = build_schedule(&p).unwrap();
        for i in 0..10 {
            let direct = (30f64.powf(0.2)
                - (i as f64 / 9.0) * (30f64.powf(0.2) - 0.01f64.powf(0.2)))
            .powf(5.0);
            assert!((s.levels[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_params() {
        assert!(ScheduleParams::new(0.0, 0.01, 30.0, 10).is_err());
        assert!(ScheduleParams::new(5.0, 0.0, 30.0, 10).is_err());
        assert!(ScheduleParams::new(5.0, 40.0, 30.0, 10).is_err());
        assert!(ScheduleParams::new(5.0, 0.01, 30.0, 1).is_err());
    }

    #[test]
    fn next_sigma_cases() {
        let p = defaults(10);
        assert!((next_sigma(3.0, 0.0, &p) - 3.0).abs() < 1e-12);
        assert!((next_sigma_raw(30.0, 1.0, &p) - 0.01).abs() < 1e-12);
        assert_eq!(next_sigma(30.0, 1.0, &p), 0.0);
        assert_eq!(next_sigma(0.02, 0.5, &p), 0.0);
    }

    #[test]
    fn chaining_reproduces_levels() {
        let p = defaults(10);
        let s = build_schedule(&p).unwrap();
        let mut sigma = p.sigma_max;
        for i in 1..10 {
            sigma = next_sigma_raw(sigma, p.step_size(), &p);
            assert!((sigma - s.levels[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn observed_step_inverts_next_sigma() {
        let p = defaults(32);
        for &(sigma, ds) in &[(30.0, 0.03), (5.0, 0.1), (0.5, 0.01)] {
            let next = next_sigma_raw(sigma, ds, &p);
            assert!((observed_step_size(sigma, next, &p).unwrap() - ds).abs() < 1e-12);
        }
        assert_eq!(observed_step_size(2.0, 2.0, &p).unwrap(), 0.0);
        assert!((observed_step_size(0.01, 30.0, &p).unwrap() + 1.0).abs() < 1e-12);
        assert!(observed_step_size(0.0, 1.0, &p).is_err());
    }

    #[test]
    fn consecutive_levels_have_uniform_steps() {
        let p = defaults(16);
        let s = build_schedule(&p).unwrap();
        for w in s.levels[..16].windows(2) {
            let ds = observed_step_size(w[0], w[1], &p).unwrap();
            assert!((ds - 1.0 / 15.0).abs() < 1e-9);
        }
    }
}
