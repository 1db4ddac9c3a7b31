use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};
use crate::geometry::{Coords, Structure};

/// Distribution of the starting structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    /// Every coordinate `~ N(center, σ²)`.
    Isotropic {
        sigma: f64,
        #[serde(default)]
        center: [f64; 3],
    },
    /// Every atom `~ N(center, Σ)`.
    Shaped {
        covariance: [[f64; 3]; 3],
        #[serde(default)]
        center: [f64; 3],
    },
    /// Atoms with a position are held there; the rest are drawn from `free`.
    Mixed {
        fixed: Vec<Option<[f64; 3]>>,
        free: Box<PriorSpec>,
    },
}

impl PriorSpec {
    pub fn isotropic(sigma: f64) -> Self {
        PriorSpec::Isotropic {
            sigma,
            center: [0.0; 3],
        }
    }

    /// Scaffold mask implied by this prior (`true` = fixed), if any.
    pub fn scaffold_mask(&self) -> Option<Vec<bool>> {
        match self {
            PriorSpec::Mixed { fixed, .. } => Some(fixed.iter().map(Option::is_some).collect()),
            _ => None,
        }
    }
}

/// Lower Cholesky factor of a symmetric positive-definite 3×3 matrix.
pub(crate) fn cholesky3(cov: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if cov.iter().any(|v| !v.is_finite())
        || (cov - cov.transpose()).abs().max() > 1e-9 * cov.abs().max().max(1.0)
    {
        return Err(GpffError::NotPositiveDefinite);
    }
    cov.cholesky()
        .map(|c| c.l())
        .ok_or(GpffError::NotPositiveDefinite)
}

fn draw_free<R: Rng + ?Sized>(spec: &PriorSpec, count: usize, rng: &mut R) -> Result<Coords> {
    use rand_distr::StandardNormal;
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    match spec {
        PriorSpec::Isotropic { sigma, center } => {
            if !(*sigma >= 0.0) || !sigma.is_finite() {
                return Err(GpffError::InvalidArgument(format!(
                    "prior sigma must be non-negative, got {sigma}"
                )));
            }
            Ok((0..count)
                .map(|_| [0, 1, 2].map(|k| center[k] + sigma * normal()))
                .collect())
        }
        PriorSpec::Shaped { covariance, center } => {
            let l = cholesky3(&Matrix3::from_fn(|r, c| covariance[r][c]))?;
            Ok((0..count)
                .map(|_| {
                    let z = Vector3::new(normal(), normal(), normal());
                    let p = l * z;
                    [center[0] + p[0], center[1] + p[1], center[2] + p[2]]
                })
                .collect())
        }
        PriorSpec::Mixed { .. } => Err(GpffError::InvalidArgument(
            "mixed priors cannot be nested".into(),
        )),
    }
}

/// Draws a starting structure with the given elements.
pub fn build_prior<R: Rng + ?Sized>(
    spec: &PriorSpec,
    elements: &[String],
    rng: &mut R,
) -> Result<Structure> {
    let n = elements.len();
    let positions = match spec {
        PriorSpec::Mixed { fixed, free } => {
            if fixed.len() != n {
                return Err(GpffError::ShapeMismatch {
                    expected: n,
                    got: fixed.len(),
                });
            }
            let open = fixed.iter().filter(|p| p.is_none()).count();
            let mut drawn = draw_free(free, open, rng)?.into_iter();
            fixed
                .iter()
                .map(|p| p.unwrap_or_else(|| drawn.next().unwrap_or_default()))
                .collect()
        }
        other => draw_free(other, n, rng)?,
    };
    Structure::new(elements.to_vec(), positions)
}
