use rand::Rng;

use super::constraints::{apply_shape_projection_masked, ScaffoldMask};
use super::trace::{Termination, TraceStep, TrajectoryTrace};
use super::{axpy, estimate_sigma, evaluate_masked, gaussian_noise, Sample, SamplerConfig};
use crate::error::Result;
use crate::geometry::{max_abs, Structure};
use crate::pes::x0_from_forces;
use crate::provider::ForceProvider;

/// Direct denoising: repeated jumps to the predicted equilibrium `X + F/2`.
///
/// The shape projection (weight `(i/N)^p`) is applied before each provider
/// call and the stochastic kick `β·ε`, `β = 1 − i/N`, after the update. The
/// force threshold only ends the run when neither is active.
pub fn direct_denoise<R: Rng + ?Sized>(
    prior: &Structure,
    provider: &dyn ForceProvider,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Sample> {
    cfg.validate(Some(prior.len()))?;
    let mask = ScaffoldMask::new(cfg.scaffold.clone());
    let n = cfg.steps;
    let may_stop = !cfg.stochastic && cfg.shape.is_none();
    let mut trace = TrajectoryTrace::new();
    let mut x = prior.clone();

    for i in 0..n {
        if let Some(shape) = &cfg.shape {
            let alpha = (i as f64 / n as f64).powf(shape.strictness);
            x = apply_shape_projection_masked(&x, shape.target, alpha, &mask);
        }
        let eval = evaluate_masked(provider, &x, &mask, i)?;
        trace.nfe += 1;
        let max_force = max_abs(&eval.forces);
        let sigma_hat = estimate_sigma(&eval.forces, &mask);
        let mut next = x0_from_forces(&x, &eval.forces)?.positions;
        let converged = may_stop && max_force <= cfg.f_max;
        if !converged && cfg.stochastic {
            let beta = 1.0 - i as f64 / n as f64;
            let mut eps = gaussian_noise(x.len(), rng);
            mask.zero_rows(&mut eps);
            axpy(&mut next, beta, &eps);
        }
        x = x.with_positions(next);
        trace.steps.push(TraceStep {
            step: i,
            nfe: trace.nfe,
            sigma: None,
            sigma_hat: Some(sigma_hat),
            sigma_hat_corrected: None,
            sigma_next: None,
            ds: None,
            max_force,
            positions: TrajectoryTrace::wants_snapshot(cfg.snapshot_stride, i)
                .then(|| x.positions.clone()),
        });
        if converged {
            trace.termination = Termination::Converged;
            break;
        }
    }
    Ok(Sample {
        structure: x,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{perturb, rmsd};
    use crate::provider::{ForceEvaluation, OracleMode, OracleProvider, ZeroProvider};
    use crate::sampler::ShapeConstraint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn molecule() -> Structure {
        Structure::new(
            vec!["C".into(), "O".into(), "H".into(), "H".into()],
            vec![
                [0.0, 0.0, 0.0],
                [1.2, 0.0, 0.0],
                [-0.5, 0.9, 0.0],
                [-0.5, -0.9, 0.0],
            ],
        )
        .unwrap()
    }

    fn oracle(refs: &[Structure]) -> OracleProvider {
        OracleProvider::from_structures(refs, OracleMode::SigmaAgnostic).unwrap()
    }

    #[test]
    fn single_reference_converges_in_one_step() {
        let r = molecule();
        let p = oracle(std::slice::from_ref(&r));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prior = perturb(&r, 30.0, &mut rng).unwrap();
        let out = direct_denoise(&prior, &p, &SamplerConfig::dd(64), &mut rng).unwrap();
        assert!(rmsd(&out.structure.positions, &r.positions) < 1e-9);
        assert_eq!(out.trace.steps.len(), 2);
        assert_eq!(out.trace.termination, Termination::Converged);
    }

    #[test]
    fn full_scaffold_returns_prior() {
        let r = molecule();
        let p = oracle(std::slice::from_ref(&r));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior = perturb(&r, 5.0, &mut rng).unwrap();
        let cfg = SamplerConfig {
            scaffold: Some(vec![true; 4]),
            ..SamplerConfig::sdd(10)
        };
        let out = direct_denoise(&prior, &p, &cfg, &mut rng).unwrap();
        assert_eq!(out.structure.positions, prior.positions);
    }

    #[test]
    fn stochastic_and_shaped_run_all_steps() {
        let r = molecule();
        let p = oracle(std::slice::from_ref(&r));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prior = perturb(&r, 5.0, &mut rng).unwrap();
        let out = direct_denoise(&prior, &p, &SamplerConfig::sdd(12), &mut rng).unwrap();
        assert_eq!(out.trace.steps.len(), 12);
        assert_eq!(out.trace.nfe, 12);
        let cfg = SamplerConfig {
            shape: Some(ShapeConstraint {
                target: [2.0, 1.0, 0.5],
                strictness: 1.0,
            }),
            ..SamplerConfig::dd(9)
        };
        let out = direct_denoise(&prior, &p, &cfg, &mut rng).unwrap();
        assert_eq!(out.trace.steps.len(), 9);
        assert_eq!(out.trace.termination, Termination::ScheduleExhausted);
    }

    #[test]
    fn zero_provider_stops_immediately() {
        let r = molecule();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = direct_denoise(&r, &ZeroProvider, &SamplerConfig::dd(5), &mut rng).unwrap();
        assert_eq!(out.trace.nfe, 1);
        assert_eq!(out.structure, r);
    }

    #[test]
    fn provider_error_carries_step() {
        let r = molecule();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let flaky = |x: &Structure| -> Result<ForceEvaluation> {
            if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 3 {
                Err(crate::error::GpffError::Transport("down".into()))
            } else {
                Ok(ForceEvaluation::new(vec![[1.0, 0.0, 0.0]; x.len()]))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = direct_denoise(&r, &flaky, &SamplerConfig::dd(10), &mut rng).unwrap_err();
        assert!(matches!(
            err,
            crate::error::GpffError::ProviderAtStep { step: 3, .. }
        ));
    }
}
