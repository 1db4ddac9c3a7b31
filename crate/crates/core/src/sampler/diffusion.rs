use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::constraints::ScaffoldMask;
use super::trace::{TraceStep, TrajectoryTrace};
use super::{
    axpy, estimate_sigma, evaluate_masked, gaussian_noise, ChurnParams, Sample, SamplerConfig,
};
use crate::error::{GpffError, Result};
use crate::geometry::{max_abs, Coords, Structure};
use crate::provider::ForceProvider;
use crate::schedule::NoiseSchedule;

/// Churn factor `γ = min(σ_churn / N, √2 − 1)` inside `[σ_t,min, σ_t,max]`,
/// else 0.
pub fn churn_gamma(sigma: f64, churn: &ChurnParams, steps: usize) -> f64 {
    if churn.sigma_t_min <= sigma && sigma <= churn.sigma_t_max {
        (churn.sigma_churn / steps as f64).min(std::f64::consts::SQRT_2 - 1.0)
    } else {
        0.0
    }
}

/// Raises the noise level from `σ` to `σ(1 + γ)` by adding
/// `σ_noise·sqrt(σ̃² − σ²)·ε` to the free atoms. Draws nothing when `γ = 0`.
pub fn inject_churn<R: Rng + ?Sized>(
    x: &Structure,
    sigma: f64,
    gamma: f64,
    sigma_noise: f64,
    mask: &ScaffoldMask,
    rng: &mut R,
) -> Structure {
    if gamma == 0.0 {
        return x.clone();
    }
    let raised = sigma * (1.0 + gamma);
    let scale = sigma_noise * (raised * raised - sigma * sigma).max(0.0).sqrt();
    let mut eps = gaussian_noise(x.len(), rng);
    mask.zero_rows(&mut eps);
    let mut pos = x.positions.clone();
    axpy(&mut pos, scale, &eps);
    x.with_positions(pos)
}

/// `dX/dσ = (X − X̂₀)/σ = −F/(2σ)`.
pub(crate) fn slope(forces: &[[f64; 3]], sigma: f64) -> Coords {
    let k = -0.5 / sigma;
    forces.iter().map(|f| f.map(|v| v * k)).collect()
}

pub(crate) fn mean_slope(a: &[[f64; 3]], b: &[[f64; 3]]) -> Coords {
    a.iter()
        .zip(b)
        .map(|(p, q)| [0, 1, 2].map(|k| 0.5 * (p[k] + q[k])))
        .collect()
}

pub(crate) fn snapshot(cfg: &SamplerConfig, step: usize, x: &Structure) -> Option<Coords> {
    TrajectoryTrace::wants_snapshot(cfg.snapshot_stride, step).then(|| x.positions.clone())
}

fn check_schedule(schedule: &NoiseSchedule) -> Result<usize> {
    let n = schedule.levels.len().saturating_sub(1);
    if n < 1 || schedule.levels[n] != 0.0 || schedule.levels[..n].iter().any(|s| !(*s > 0.0)) {
        return Err(GpffError::InvalidArgument(
            "schedule must be positive and end in a single zero".into(),
        ));
    }
    Ok(n)
}

/// Ancestral sampling over a fixed schedule: move toward the predicted clean
/// state by `s·(σᵢ² − σᵢ₊₁²)` with `s = F/(2σᵢ²)`, then re-noise to `σᵢ₊₁`.
pub fn ancestral<R: Rng + ?Sized>(
    prior: &Structure,
    provider: &dyn ForceProvider,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Sample> {
    let n = check_schedule(schedule)?;
    cfg.validate(Some(prior.len()))?;
    let mask = ScaffoldMask::new(cfg.scaffold.clone());
    let mut trace = TrajectoryTrace::new();
    let mut x = prior.clone();
    for i in 0..n {
        let (sigma, next) = (schedule.levels[i], schedule.levels[i + 1]);
        let eval = evaluate_masked(provider, &x, &mask, i)?;
        trace.nfe += 1;
        let mut pos = x.positions.clone();
        axpy(
            &mut pos,
            0.5 * (1.0 - (next * next) / (sigma * sigma)),
            &eval.forces,
        );
        if next > 0.0 {
            let inj = (next * next * (sigma * sigma - next * next) / (sigma * sigma))
                .max(0.0)
                .sqrt();
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
            sigma: Some(sigma),
            sigma_hat: Some(estimate_sigma(&eval.forces, &mask)),
            sigma_hat_corrected: None,
            sigma_next: Some(next),
            ds: None,
            max_force: max_abs(&eval.forces),
            positions: snapshot(cfg, i, &x),
        });
    }
    Ok(Sample {
        structure: x,
        trace,
    })
}

/// Deterministic Heun integration of the probability-flow ODE over a fixed
/// schedule; the final step is an Euler step to σ = 0.
pub fn heun(
    prior: &Structure,
    provider: &dyn ForceProvider,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Sample> {
    let cfg = SamplerConfig {
        churn: ChurnParams {
            sigma_churn: 0.0,
            ..cfg.churn
        },
        ..cfg.clone()
    };
    // Without churn no noise is drawn; the generator is never used.
    stochastic_heun(
        prior,
        provider,
        schedule,
        &cfg,
        &mut ChaCha20Rng::seed_from_u64(0),
    )
}

/// Heun sampling with churn: raise the level to `σ̃ = σ(1 + γ)` by fresh
/// noise, then take a Heun step from `σ̃` to the next scheduled level.
pub fn stochastic_heun<R: Rng + ?Sized>(
    prior: &Structure,
    provider: &dyn ForceProvider,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Sample> {
    let n = check_schedule(schedule)?;
    cfg.validate(Some(prior.len()))?;
    let mask = ScaffoldMask::new(cfg.scaffold.clone());
    let churn = cfg.churn;
    let mut trace = TrajectoryTrace::new();
    let mut x = prior.clone();
    for i in 0..n {
        let (sigma, next) = (schedule.levels[i], schedule.levels[i + 1]);
        let gamma = churn_gamma(sigma, &churn, n);
        let raised = sigma * (1.0 + gamma);
        x = inject_churn(&x, sigma, gamma, churn.sigma_noise, &mask, rng);

        let first = evaluate_masked(provider, &x, &mask, i)?;
        trace.nfe += 1;
        let d1 = slope(&first.forces, raised);
        let mut pos = x.positions.clone();
        if next == 0.0 {
            axpy(&mut pos, next - raised, &d1);
        } else {
            let mut predicted = x.positions.clone();
            axpy(&mut predicted, next - raised, &d1);
            let second = evaluate_masked(provider, &x.with_positions(predicted), &mask, i)?;
            trace.nfe += 1;
            let d2 = slope(&second.forces, next);
            axpy(&mut pos, next - raised, &mean_slope(&d1, &d2));
        }
        x = x.with_positions(pos);
        trace.steps.push(TraceStep {
            step: i,
            nfe: trace.nfe,
            sigma: Some(sigma),
            sigma_hat: Some(estimate_sigma(&first.forces, &mask)),
            sigma_hat_corrected: None,
            sigma_next: Some(next),
            ds: None,
            max_force: max_abs(&first.forces),
            positions: snapshot(cfg, i, &x),
        });
        if next == 0.0 {
            break;
        }
    }
    Ok(Sample {
        structure: x,
        trace,
    })
}
