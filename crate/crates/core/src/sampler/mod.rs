//! Samplers driven by a [`ForceProvider`]: direct denoising (optionally
//! stochastic, shape- and scaffold-constrained), ancestral, Heun and
//! stochastic Heun, each with an adaptive variant that reads the noise level
//! off the force magnitude.

mod adaptive;
mod constraints;
mod dd;
mod diffusion;
pub(crate) mod prior;
mod trace;

pub use adaptive::{adaptive_ancestral, adaptive_heun, adaptive_stochastic_heun};
pub use constraints::{apply_shape_projection, apply_shape_projection_masked, ScaffoldMask};
pub use dd::direct_denoise;
pub use diffusion::{ancestral, churn_gamma, heun, inject_churn, stochastic_heun};
pub use prior::{build_prior, PriorSpec};
pub use trace::{Termination, TraceStep, TrajectoryTrace};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};
use crate::geometry::{Coords, Structure};
use crate::provider::{ForceEvaluation, ForceProvider};
use crate::schedule::{build_schedule, ScheduleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Dd,
    Ancestral,
    Heun,
    StochasticHeun,
}

/// Target principal variances (Å²) and strictness exponent `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeConstraint {
    pub target: [f64; 3],
    #[serde(default = "default_strictness")]
    pub strictness: f64,
}

fn default_strictness() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnParams {
    pub sigma_churn: f64,
    pub sigma_t_min: f64,
    pub sigma_t_max: f64,
    pub sigma_noise: f64,
}

impl Default for ChurnParams {
    fn default() -> Self {
        ChurnParams {
            sigma_churn: 60.0,
            sigma_t_min: 0.01,
            sigma_t_max: 15.0,
            sigma_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub adaptive: bool,
    /// Maximum number of steps `N`.
    pub steps: usize,
    /// Force threshold for deterministic, unshaped direct denoising.
    pub f_max: f64,
    /// Linearly decaying noise injection in direct denoising.
    pub stochastic: bool,
    pub shape: Option<ShapeConstraint>,
    /// `true` marks a fixed scaffold atom.
    pub scaffold: Option<Vec<bool>>,
    pub churn: ChurnParams,
    /// Target step count for adaptive samplers; defaults to `N / 2`.
    pub n_target: Option<usize>,
    /// Share of the injected churn removed from the noise estimate.
    pub alpha: f64,
    /// Positions are snapshotted every `snapshot_stride` steps; 0 disables.
    pub snapshot_stride: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Dd,
            adaptive: false,
            steps: 256,
            f_max: 0.01,
            stochastic: false,
            shape: None,
            scaffold: None,
            churn: ChurnParams::default(),
            n_target: None,
            alpha: 0.5,
            snapshot_stride: 8,
        }
    }
}

/// Floor on the adaptive step size so a stalled provider cannot freeze the
/// schedule.
pub const MIN_ADAPTIVE_STEP: f64 = 1e-6;

impl SamplerConfig {
    pub fn dd(steps: usize) -> Self {
        SamplerConfig {
            kind: SamplerKind::Dd,
            steps,
            ..Default::default()
        }
    }

    pub fn sdd(steps: usize) -> Self {
        SamplerConfig {
            stochastic: true,
            ..Self::dd(steps)
        }
    }

    pub fn of_kind(kind: SamplerKind, steps: usize) -> Self {
        SamplerConfig {
            kind,
            steps,
            ..Default::default()
        }
    }

    pub fn target_steps(&self) -> usize {
        self.n_target.unwrap_or((self.steps / 2).max(2))
    }

    pub fn validate(&self, n_atoms: Option<usize>) -> Result<()> {
        let bad = |m: String| Err(GpffError::InvalidArgument(m));
        if self.steps < 1 {
            return bad("sampler needs at least one step".into());
        }
        if self.kind != SamplerKind::Dd && self.steps < 2 {
            return bad("diffusion samplers need at least two steps".into());
        }
        if self.kind == SamplerKind::Dd && !(self.f_max > 0.0) {
            return bad(format!("f_max must be positive, got {}", self.f_max));
        }
        if let Some(shape) = &self.shape {
            if shape.target.iter().any(|v| !(*v > 0.0)) {
                return bad(format!(
                    "shape target variances must be positive: {:?}",
                    shape.target
                ));
            }
            if !(shape.strictness > 0.0) {
                return bad(format!(
                    "strictness must be positive, got {}",
                    shape.strictness
                ));
            }
        }
        if self.adaptive {
            let t = self.target_steps();
            if t < 2 || t > self.steps {
                return bad(format!("n_target must lie in [2, {}], got {t}", self.steps));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if let (Some(mask), Some(n)) = (&self.scaffold, n_atoms) {
            if mask.len() != n {
                return Err(GpffError::ShapeMismatch {
                    expected: n,
                    got: mask.len(),
                });
            }
        }
        Ok(())
    }
}

/// Final structure and its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub structure: Structure,
    pub trace: TrajectoryTrace,
}

/// Runs the sampler selected by `cfg` from `prior`.
pub fn sample<R: rand::Rng + ?Sized>(
    prior: &Structure,
    provider: &dyn ForceProvider,
    cfg: &SamplerConfig,
    params: &ScheduleParams,
    rng: &mut R,
) -> Result<Sample> {
    cfg.validate(Some(prior.len()))?;
    let params = params.with_steps(cfg.steps.max(2));
    match (cfg.kind, cfg.adaptive) {
        (SamplerKind::Dd, _) => direct_denoise(prior, provider, cfg, rng),
        (SamplerKind::Ancestral, false) => {
            ancestral(prior, provider, &build_schedule(&params)?, cfg, rng)
        }
        (SamplerKind::Heun, false) => heun(prior, provider, &build_schedule(&params)?, cfg),
        (SamplerKind::StochasticHeun, false) => {
            stochastic_heun(prior, provider, &build_schedule(&params)?, cfg, rng)
        }
        (SamplerKind::Ancestral, true) => adaptive_ancestral(prior, provider, cfg, &params, rng),
        (SamplerKind::Heun, true) => adaptive_heun(prior, provider, cfg, &params),
        (SamplerKind::StochasticHeun, true) => {
            adaptive_stochastic_heun(prior, provider, cfg, &params, rng)
        }
    }
}

/// Per-trajectory generator: ChaCha20 seeded from the master seed, with the
/// trajectory index as stream id.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draws a prior and samples `count` trajectories in parallel (at most
/// `jobs` threads). Results are in trajectory-index order.
pub fn run_batch(
    provider: &dyn ForceProvider,
    cfg: &SamplerConfig,
    params: &ScheduleParams,
    prior: &PriorSpec,
    elements: &[String],
    count: usize,
    master_seed: u64,
    jobs: usize,
) -> Vec<Result<Sample>> {
    let run = |i: usize| -> Result<Sample> {
        let mut rng = trajectory_rng(master_seed, i as u64);
        let x0 = build_prior(prior, elements, &mut rng)?;
        sample(&x0, provider, cfg, params, &mut rng)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build();
    match pool {
        Ok(pool) => pool.install(|| (0..count).into_par_iter().map(run).collect()),
        Err(_) => (0..count).map(run).collect(),
    }
}

/// Calls the provider, checks the reply shape and zeroes scaffold rows.
pub(crate) fn evaluate_masked(
    provider: &dyn ForceProvider,
    x: &Structure,
    mask: &ScaffoldMask,
    step: usize,
) -> Result<ForceEvaluation> {
    let mut eval = provider
        .evaluate(x)
        .map_err(|e| GpffError::ProviderAtStep {
            step,
            source: Box::new(e),
        })?;
    if eval.forces.len() != x.len() {
        return Err(GpffError::ProviderAtStep {
            step,
            source: Box::new(GpffError::ShapeMismatch {
                expected: x.len(),
                got: eval.forces.len(),
            }),
        });
    }
    if eval.forces.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GpffError::ProviderAtStep {
            step,
            source: Box::new(GpffError::Schema("non-finite force component".into())),
        });
    }
    mask.zero_rows(&mut eval.forces);
    Ok(eval)
}

pub(crate) fn axpy(x: &mut Coords, a: f64, y: &[[f64; 3]]) {
    for (p, q) in x.iter_mut().zip(y) {
        for k in 0..3 {
            p[k] += a * q[k];
        }
    }
}

pub(crate) fn gaussian_noise<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Coords {
    use rand_distr::StandardNormal;
    (0..n)
        .map(|_| [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Noise estimate over the movable atoms' forces.
pub(crate) fn estimate_sigma(forces: &[[f64; 3]], mask: &ScaffoldMask) -> f64 {
    if !mask.is_active() {
        return crate::pes::sigma_estimate_unchecked(forces);
    }
    let free: Coords = mask
        .free_indices(forces.len())
        .into_iter()
        .map(|i| forces[i])
        .collect();
    if free.is_empty() {
        0.0
    } else {
        crate::pes::sigma_estimate_unchecked(&free)
    }
}
