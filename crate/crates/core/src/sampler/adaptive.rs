//! Adaptive samplers. Each step reads `σ̂` off the forces, infers the step
//! actually taken since the previous estimate, and proposes the next level
//! from `σ̂` with that step, capped by the `N`-step schedule so every run ends
//! within `N` outer steps.

use rand::Rng;

use super::constraints::ScaffoldMask;
use super::diffusion::{churn_gamma, inject_churn, mean_slope, slope, snapshot};
use super::trace::{Termination, TraceStep, TrajectoryTrace};
use super::{
    axpy, estimate_sigma, evaluate_masked, gaussian_noise, Sample, SamplerConfig, MIN_ADAPTIVE_STEP,
};
use crate::error::Result;
use crate::geometry::{max_abs, Structure};
use crate::provider::ForceProvider;
use crate::schedule::{
    build_schedule, clamp_terminal, next_sigma_raw, observed_step_size_unchecked, NoiseSchedule,
    ScheduleParams,
};

struct Controller {
    params: ScheduleParams,
    upper: NoiseSchedule,
    ds: f64,
    previous: Option<f64>,
    capped: bool,
}

impl Controller {
    fn new(cfg: &SamplerConfig, params: &ScheduleParams) -> Result<Self> {
        let params = params.with_steps(cfg.steps);
        Ok(Controller {
            upper: build_schedule(&params)?,
            params,
            ds: 1.0 / (cfg.target_steps() - 1) as f64,
            previous: None,
            capped: false,
        })
    }

    /// Updates `Δs` from the last estimate and returns the next level.
    fn propose(&mut self, step: usize, sigma_hat: f64) -> f64 {
        if let Some(prev) = self.previous {
            self.ds =
                observed_step_size_unchecked(prev, sigma_hat, &self.params).max(MIN_ADAPTIVE_STEP);
        }
        let free = next_sigma_raw(sigma_hat, self.ds, &self.params);
        let bound = self.upper.level(step + 1);
        self.capped = bound < free;
        clamp_terminal(free.min(bound), &self.params)
    }

    fn commit(&mut self, sigma_hat: f64) {
        self.previous = Some(sigma_hat);
    }

    fn termination(&self) -> Termination {
        if self.capped {
            Termination::ScheduleExhausted
        } else {
            Termination::Converged
        }
    }
}

fn prepare(
    prior: &Structure,
    cfg: &SamplerConfig,
    params: &ScheduleParams,
) -> Result<(Controller, ScaffoldMask)> {
    let mut cfg = cfg.clone();
    cfg.adaptive = true;
    cfg.validate(Some(prior.len()))?;
    Ok((
        Controller::new(&cfg, params)?,
        ScaffoldMask::new(cfg.scaffold.clone()),
    ))
}

/// Ancestral sampling on the force-estimated noise level.
pub fn adaptive_ancestral<R: Rng + ?Sized>(
    prior: &Structure,
    provider: &dyn ForceProvider,
    cfg: &SamplerConfig,
    params: &ScheduleParams,
    rng: &mut R,
) -> Result<Sample> {
    let (mut ctl, mask) = prepare(prior, cfg, params)?;
    let mut trace = TrajectoryTrace::new();
    let mut x = prior.clone();
    for i in 0..cfg.steps {
        let eval = evaluate_masked(provider, &x, &mask, i)?;
        trace.nfe += 1;
        let sigma_hat = estimate_sigma(&eval.forces, &mask);
        let next = ctl.propose(i, sigma_hat);
        let keep = if sigma_hat > 0.0 {
            (next * next) / (sigma_hat * sigma_hat)
        } else {
            0.0
        };
        let mut pos = x.positions.clone();
        axpy(&mut pos, 0.5 * (1.0 - keep), &eval.forces);
        if next > 0.0 {
            let inj = (next * next * (1.0 - keep)).max(0.0).sqrt();
            if inj > 0.0 {
                let mut eps = gaussian_noise(x.len(), rng);
                mask.zero_rows(&mut eps);
                axpy(&mut pos, inj, &eps);
            }
        }
        x = x.with_positions(pos);
        trace.steps.push(TraceStep {
            step: i,
            nfe: trace.nfe,
            sigma: Some(sigma_hat),
            sigma_hat: Some(sigma_hat),
            sigma_hat_corrected: None,
            sigma_next: Some(next),
            ds: Some(ctl.ds),
            max_force: max_abs(&eval.forces),
            positions: snapshot(cfg, i, &x),
        });
        ctl.commit(sigma_hat);
        if next == 0.0 {
            trace.termination = ctl.termination();
            break;
        }
    }
    Ok(Sample {
        structure: x,
        trace,
    })
}

/// Heun sampling on the force-estimated noise level; a final Euler step to
/// σ = 0 once `σ̂ ≤ σ_min` or the proposed level reaches 0.
pub fn adaptive_heun(
    prior: &Structure,
    provider: &dyn ForceProvider,
    cfg: &SamplerConfig,
    params: &ScheduleParams,
) -> Result<Sample> {
    let mut cfg = cfg.clone();
    cfg.churn.sigma_churn = 0.0;
    adaptive_stochastic_heun(
        prior,
        provider,
        &cfg,
        params,
        &mut <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(0),
    )
}

/// Stochastic Heun on the force-estimated noise level. `σ̂` is read before
/// churn is injected; the estimate carried to the next step is
/// `σ̃/(1 + γα)`, removing a share `α` of the injected inflation.
pub fn adaptive_stochastic_heun<R: Rng + ?Sized>(
    prior: &Structure,
    provider: &dyn ForceProvider,
    cfg: &SamplerConfig,
    params: &ScheduleParams,
    rng: &mut R,
) -> Result<Sample> {
    let (mut ctl, mask) = prepare(prior, cfg, params)?;
    let churn = cfg.churn;
    let mut trace = TrajectoryTrace::new();
    let mut x = prior.clone();
    for i in 0..cfg.steps {
        let first = evaluate_masked(provider, &x, &mask, i)?;
        trace.nfe += 1;
        let sigma_hat = estimate_sigma(&first.forces, &mask);
        let next = ctl.propose(i, sigma_hat);

        let gamma = churn_gamma(sigma_hat, &churn, cfg.steps);
        let raised = sigma_hat * (1.0 + gamma);
        let injected = inject_churn(&x, sigma_hat, gamma, churn.sigma_noise, &mask, rng);
        let corrected = raised / (1.0 + gamma * cfg.alpha);

        // The clean-state prediction comes from the pre-churn evaluation, so
        // the slope is taken from the injected state toward it.
        let mut denoised = x.positions.clone();
        axpy(&mut denoised, 0.5, &first.forces);
        let pos = if next == 0.0 || raised == 0.0 {
            denoised
        } else {
            let d1: Vec<[f64; 3]> = injected
                .positions
                .iter()
                .zip(&denoised)
                .map(|(p, q)| [0, 1, 2].map(|k| (p[k] - q[k]) / raised))
                .collect();
            let mut predicted = injected.positions.clone();
            axpy(&mut predicted, next - raised, &d1);
            let second = evaluate_masked(provider, &x.with_positions(predicted), &mask, i)?;
            trace.nfe += 1;
            let d2 = slope(&second.forces, next);
            let mut pos = injected.positions.clone();
            axpy(&mut pos, next - raised, &mean_slope(&d1, &d2));
            pos
        };
        x = x.with_positions(pos);
        trace.steps.push(TraceStep {
            step: i,
            nfe: trace.nfe,
            sigma: Some(sigma_hat),
            sigma_hat: Some(sigma_hat),
            sigma_hat_corrected: (gamma > 0.0).then_some(corrected),
            sigma_next: Some(next),
            ds: Some(ctl.ds),
            max_force: max_abs(&first.forces),
            positions: snapshot(cfg, i, &x),
        });
        ctl.commit(corrected);
        if next == 0.0 {
            trace.termination = ctl.termination();
            break;
        }
    }
    Ok(Sample {
        structure: x,
        trace,
    })
}
