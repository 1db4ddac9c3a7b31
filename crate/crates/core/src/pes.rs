//! Quadratic pseudo-potential and the conversions between pseudo-forces,
//! scores, denoised structures and noise levels.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use crate::error::{GpffError, Result};
use crate::geometry::{frobenius_sq, Coords, Structure};

/// Boltzmann constant in eV/K; pseudo-energies are read as eV.
pub const BOLTZMANN_EV_PER_K: f64 = 8.617_333_262e-5;

fn check_shapes(x: &Structure, x0: &Structure) -> Result<()> {
    if x.len() != x0.len() {
        return Err(GpffError::ShapeMismatch {
            expected: x0.len(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_rows(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(GpffError::ShapeMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// `‖X − X₀‖²_F`.
pub fn pseudo_energy(x: &Structure, x0: &Structure) -> Result<f64> {
    check_shapes(x, x0)?;
    Ok(frobenius_sq(&x.positions, &x0.positions))
}

/// `−2 (X − X₀)`, the negative gradient of [`pseudo_energy`].
pub fn pseudo_forces(x: &Structure, x0: &Structure) -> Result<Coords> {
    check_shapes(x, x0)?;
    Ok(x.positions
        .iter()
        .zip(&x0.positions)
        .map(|(p, q)| [0, 1, 2].map(|k| -2.0 * (p[k] - q[k])))
        .collect())
}

/// Score of the Gaussian perturbation kernel, `F / (2σ²)`.
pub fn score_from_forces(forces: &[[f64; 3]], sigma: f64) -> Result<Coords> {
    if !(sigma > 0.0) {
        return Err(GpffError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let scale = 1.0 / (2.0 * sigma * sigma);
    Ok(forces.iter().map(|f| f.map(|v| v * scale)).collect())
}

/// Closed-form equilibrium prediction `X + F/2`.
pub fn x0_from_forces(x: &Structure, forces: &[[f64; 3]]) -> Result<Structure> {
    check_rows(x.len(), forces.len())?;
    Ok(x.with_positions(
        x.positions
            .iter()
            .zip(forces)
            .map(|(p, f)| [0, 1, 2].map(|k| p[k] + 0.5 * f[k]))
            .collect(),
    ))
}

/// Noise level read off the force magnitude: standard deviation of all
/// `3n` components of `F/2` about their mean (population form).
pub fn sigma_estimate(forces: &[[f64; 3]]) -> Result<f64> {
    if forces.len() < 2 {
        return Err(GpffError::InvalidArgument(
            "noise estimate needs at least two atoms".into(),
        ));
    }
    Ok(sigma_estimate_unchecked(forces))
}

pub(crate) fn sigma_estimate_unchecked(forces: &[[f64; 3]]) -> f64 {
    let m = (3 * forces.len()) as f64;
    let mean = forces.iter().flatten().map(|f| 0.5 * f).sum::<f64>() / m;
    let var = forces
        .iter()
        .flatten()
        .map(|f| (0.5 * f - mean).powi(2))
        .sum::<f64>()
        / m;
    var.sqrt()
}

/// Root-mean-square of the components of `F/2`, without mean removal.
pub fn sigma_rms(forces: &[[f64; 3]]) -> Result<f64> {
    if forces.len() < 2 {
        return Err(GpffError::InvalidArgument(
            "noise estimate needs at least two atoms".into(),
        ));
    }
    let m = (3 * forces.len()) as f64;
    Ok((forces.iter().flatten().map(|f| 0.25 * f * f).sum::<f64>() / m).sqrt())
}

/// Temperature at which the Boltzmann density of the pseudo-potential equals
/// the Gaussian perturbation kernel of width `σ`: `2σ²/k_B`.
pub fn boltzmann_temperature(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(GpffError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    Ok(2.0 * sigma * sigma / BOLTZMANN_EV_PER_K)
}

/// Parameters of the clipped log-normal training noise distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalSigma {
    pub mu: f64,
    pub s: f64,
    pub clip: (f64, f64),
}

impl Default for LogNormalSigma {
    fn default() -> Self {
        LogNormalSigma {
            mu: -0.7,
            s: 1.2,
            clip: (0.0, 30.0),
        }
    }
}

impl LogNormalSigma {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        lognormal_sigma(rng, self.mu, self.s, self.clip)
    }
}

/// `exp(N(μ, s²))` clipped to `clip`.
pub fn lognormal_sigma<R: Rng + ?Sized>(rng: &mut R, mu: f64, s: f64, clip: (f64, f64)) -> f64 {
    assert!(clip.0 <= clip.1, "invalid clip interval {clip:?}");
    let v = if s == 0.0 {
        mu.exp()
    } else {
        match LogNormal::new(mu, s) {
            Ok(d) => d.sample(rng),
            Err(_) => (mu + s * rng.sample::<f64, _>(StandardNormal)).exp(),
        }
    };
    v.clamp(clip.0, clip.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_structure(n: usize, rng: &mut ChaCha8Rng) -> Structure {
        Structure::new(
            vec!["C".into(); n],
            (0..n)
                .map(|_| [0; 3].map(|_| rng.random_range(-2.0..2.0)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn energy_hand_cases() {
        let x0 = Structure::from_parts(&["H"], vec![[0.0; 3]]).unwrap();
        assert_eq!(pseudo_energy(&x0, &x0).unwrap(), 0.0);
        let x = Structure::from_parts(&["H"], vec![[3.0, 4.0, 0.0]]).unwrap();
        assert_eq!(pseudo_energy(&x, &x0).unwrap(), 25.0);
        let two = Structure::from_parts(&["H", "H"], vec![[0.0; 3]; 2]).unwrap();
        assert!(pseudo_energy(&two, &x0).is_err());
    }

    #[test]
    fn energy_expectation_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = random_structure(4, &mut rng);
        let sigma = 0.7;
        let draws = 10_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let x = crate::geometry::perturb(&x0, sigma, &mut rng).unwrap();
            total += pseudo_energy(&x, &x0).unwrap();
        }
        let expected = 3.0 * 4.0 * sigma * sigma;
        assert!((total / draws as f64 - expected).abs() / expected < 0.1);
    }

    #[test]
    fn forces_hand_cases() {
        let x0 = Structure::from_parts(&["H"], vec![[0.0; 3]]).unwrap();
        assert_eq!(pseudo_forces(&x0, &x0).unwrap(), vec![[0.0; 3]]);
        let x = Structure::from_parts(&["H"], vec![[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(pseudo_forces(&x, &x0).unwrap(), vec![[-2.0, 0.0, 0.0]]);
    }

    #[test]
    fn forces_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = random_structure(6, &mut rng);
        let x = random_structure(6, &mut rng);
        let f = pseudo_forces(&x, &x0).unwrap();
        let h = 1e-4;
        for i in 0..6 {
            for k in 0..3 {
                let mut plus = x.clone();
                plus.positions[i][k] += h;
                let mut minus = x.clone();
                minus.positions[i][k] -= h;
                let grad = (pseudo_energy(&plus, &x0).unwrap()
                    - pseudo_energy(&minus, &x0).unwrap())
                    / (2.0 * h);
                assert!((f[i][k] + grad).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn score_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma = 1.7;
        let eps: Coords = (0..5)
            .map(|_| [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let f: Coords = eps.iter().map(|e| e.map(|v| -2.0 * sigma * v)).collect();
        let s = score_from_forces(&f, sigma).unwrap();
        for (si, ei) in s.iter().zip(&eps) {
            for k in 0..3 {
                assert!((si[k] + ei[k] / sigma).abs() < 1e-12);
            }
        }
        assert_eq!(score_from_forces(&[[0.0; 3]], 2.0).unwrap(), vec![[0.0; 3]]);
        assert!(score_from_forces(&f, 0.0).is_err());
    }

    #[test]
    fn score_matches_gaussian_kernel_gradient() {
        // ∇ log N(x; x0, σ²I) = −(x − x0)/σ²
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x0 = random_structure(4, &mut rng);
        let x = random_structure(4, &mut rng);
        let sigma = 0.8;
        let s = score_from_forces(&pseudo_forces(&x, &x0).unwrap(), sigma).unwrap();
        for i in 0..4 {
            for k in 0..3 {
                let analytic = -(x.positions[i][k] - x0.positions[i][k]) / (sigma * sigma);
                assert!((s[i][k] - analytic).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn x0_from_exact_forces_is_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = random_structure(7, &mut rng);
        let x = random_structure(7, &mut rng);
        let back = x0_from_forces(&x, &pseudo_forces(&x, &x0).unwrap()).unwrap();
        for (p, q) in back.positions.iter().zip(&x0.positions) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-12);
            }
        }
        let same = x0_from_forces(&x, &[[0.0; 3]; 7]).unwrap();
        assert_eq!(same, x);
        assert!(x0_from_forces(&x, &[[0.0; 3]]).is_err());
    }

    #[test]
    fn sigma_estimate_definitional() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sigma = 2.0;
        let eps: Coords = (0..10)
            .map(|_| [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let f: Coords = eps.iter().map(|e| e.map(|v| -2.0 * sigma * v)).collect();
        let comps: Vec<f64> = eps.iter().flatten().map(|v| sigma * v).collect();
        let mean = comps.iter().sum::<f64>() / comps.len() as f64;
        let std =
            (comps.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / comps.len() as f64).sqrt();
        assert!((sigma_estimate(&f).unwrap() - std).abs() < 1e-12);
        assert_eq!(sigma_estimate(&[[0.0; 3]; 4]).unwrap(), 0.0);
        assert!(sigma_estimate(&[[1.0; 3]]).is_err());
        assert!(sigma_rms(&f).unwrap() >= sigma_estimate(&f).unwrap());
    }

    #[test]
    fn sigma_estimate_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x0 = random_structure(50, &mut rng);
        let mut inside = 0;
        for _ in 0..100 {
            let x = crate::geometry::perturb(&x0, 2.0, &mut rng).unwrap();
            let est = sigma_estimate(&pseudo_forces(&x, &x0).unwrap()).unwrap();
            if (est - 2.0).abs() <= 0.25 {
                inside += 1;
            }
        }
        assert!(inside >= 99, "{inside}");
    }

    #[test]
    fn temperature_scaling() {
        let t1 = boltzmann_temperature(1.0).unwrap();
        assert!((t1 - 2.0 / BOLTZMANN_EV_PER_K).abs() < 1e-9);
        assert!((boltzmann_temperature(2.0).unwrap() / t1 - 4.0).abs() < 1e-12);
        assert!(boltzmann_temperature(1e-8).unwrap() < 1e-10);
        assert!(boltzmann_temperature(0.0).is_err());
    }

    #[test]
    fn lognormal_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = LogNormalSigma::default();
        let mut draws: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        assert!(draws.iter().all(|v| (0.0..=30.0).contains(v)));
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = draws[draws.len() / 2];
        assert!((median / (-0.7f64).exp() - 1.0).abs() < 0.05);
        let v = lognormal_sigma(&mut rng, -0.7, 0.0, (0.0, 30.0));
        assert!((v - 0.4966).abs() < 1e-4);
    }
}
