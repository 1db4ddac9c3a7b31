//! Geometry value types: structures, principal frames and shape descriptors.
//!
//! Covariances use the population normalization (divide by `n`) with unit
//! atomic weights, so shape targets and shape points agree across modules.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};

/// Rows of Cartesian coordinates in Å, one per atom.
pub type Coords = Vec<[f64; 3]>;

/// A molecule: element symbols plus Cartesian positions in Å.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub elements: Vec<String>,
    pub positions: Coords,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Structure {
    pub fn new(elements: Vec<String>, positions: Coords) -> Result<Self> {
        let s = Structure {
            elements,
            positions,
            name: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds a structure from element symbols given as `&str`.
    pub fn from_parts<S: AsRef<str>>(elements: &[S], positions: Coords) -> Result<Self> {
        Self::new(
            elements.iter().map(|e| e.as_ref().to_string()).collect(),
            positions,
        )
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements.is_empty() {
            return Err(GpffError::InvalidStructure("structure has no atoms".into()));
        }
        if self.elements.len() != self.positions.len() {
            return Err(GpffError::InvalidStructure(format!(
                "{} elements but {} position rows",
                self.elements.len(),
                self.positions.len()
            )));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GpffError::InvalidStructure("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Same elements, new coordinates.
    pub fn with_positions(&self, positions: Coords) -> Structure {
        debug_assert_eq!(positions.len(), self.elements.len());
        Structure {
            elements: self.elements.clone(),
            positions,
            name: self.name.clone(),
        }
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.positions)
    }
}

/// Principal axes (columns of `rotation`) and principal variances, sorted
/// non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rotation: Matrix3<f64>,
    pub variances: [f64; 3],
}

/// Normalized principal-moment ratios locating a structure in the
/// rod/sphere/disc triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePoint {
    pub npr1: f64,
    pub npr2: f64,
}

impl ShapePoint {
    pub const ROD: ShapePoint = ShapePoint {
        npr1: 0.0,
        npr2: 1.0,
    };
    pub const SPHERE: ShapePoint = ShapePoint {
        npr1: 1.0,
        npr2: 1.0,
    };
    pub const DISC: ShapePoint = ShapePoint {
        npr1: 0.5,
        npr2: 0.5,
    };

    /// Shape point for principal variances sorted non-increasing.
    pub fn from_variances(l: [f64; 3]) -> Result<ShapePoint> {
        let denom = l[0] + l[1];
        if !(denom > 0.0) {
            return Err(GpffError::ZeroExtent);
        }
        Ok(ShapePoint {
            npr1: (l[1] + l[2]) / denom,
            npr2: (l[0] + l[2]) / denom,
        })
    }

    pub fn distance(&self, other: &ShapePoint) -> f64 {
        ((self.npr1 - other.npr1).powi(2) + (self.npr2 - other.npr2).powi(2)).sqrt()
    }
}

pub fn centroid(positions: &[[f64; 3]]) -> [f64; 3] {
    let n = positions.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in positions {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / n)
}

pub fn centered(positions: &[[f64; 3]]) -> Coords {
    let c = centroid(positions);
    positions
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect()
}

/// Removes the centroid.
pub fn center(s: &Structure) -> Structure {
    s.with_positions(centered(&s.positions))
}

pub fn covariance_of(positions: &[[f64; 3]]) -> Matrix3<f64> {
    let xc = centered(positions);
    let n = positions.len().max(1) as f64;
    let mut cov = Matrix3::zeros();
    for p in &xc {
        let v = Vector3::new(p[0], p[1], p[2]);
        cov += v * v.transpose();
    }
    cov / n
}

/// Population covariance `(1/n) Xcᵀ Xc` of the centered coordinates.
pub fn covariance3(s: &Structure) -> Matrix3<f64> {
    covariance_of(&s.positions)
}

/// Eigendecomposition of a symmetric 3×3 matrix, eigenvalues sorted
/// non-increasing (ties keep axis order), each eigenvector signed so its
/// largest-magnitude entry is positive.
pub fn sorted_eigen(m: &Matrix3<f64>) -> Frame {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rotation = Matrix3::zeros();
    let mut variances = [0.0; 3];
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let mut big = 0;
        for r in 1..3 {
            if v[r].abs() > v[big].abs() + 1e-12 {
                big = r;
            }
        }
        if v[big] < 0.0 {
            v = -v;
        }
        rotation.set_column(col, &v);
        variances[col] = eig.eigenvalues[k].max(0.0);
    }
    Frame {
        rotation,
        variances,
    }
}

pub fn principal_frame(s: &Structure) -> Frame {
    sorted_eigen(&covariance3(s))
}

pub fn principal_frame_of(positions: &[[f64; 3]]) -> Frame {
    sorted_eigen(&covariance_of(positions))
}

/// Shape point from the principal variances (unit weights).
pub fn shape_point(s: &Structure) -> Result<ShapePoint> {
    ShapePoint::from_variances(principal_frame(s).variances)
}

/// Largest interatomic distance, exhaustive over pairs.
pub fn max_pairwise_distance(s: &Structure) -> Result<f64> {
    if s.len() < 2 {
        return Err(GpffError::InvalidArgument(
            "max pairwise distance needs at least two atoms".into(),
        ));
    }
    let mut best = 0.0f64;
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            best = best.max(distance(&s.positions[i], &s.positions[j]));
        }
    }
    Ok(best)
}

/// Adds i.i.d. `N(0, sigma²)` noise to every coordinate.
pub fn perturb<R: Rng + ?Sized>(s: &Structure, sigma: f64, rng: &mut R) -> Result<Structure> {
    if !(sigma >= 0.0) {
        return Err(GpffError::InvalidArgument(format!(
            "noise scale must be non-negative, got {sigma}"
        )));
    }
    let positions = s
        .positions
        .iter()
        .map(|p| p.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Ok(s.with_positions(positions))
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    squared_distance(a, b).sqrt()
}

pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Squared Frobenius norm of `a - b`.
pub fn frobenius_sq(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| squared_distance(p, q)).sum()
}

/// Root-mean-square per-atom displacement between two coordinate sets.
pub fn rmsd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    (frobenius_sq(a, b) / a.len().max(1) as f64).sqrt()
}

pub fn max_abs(m: &[[f64; 3]]) -> f64 {
    m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Applies a rotation given as principal axes: `p ↦ axesᵀ · p`.
pub fn to_frame(p: &[f64; 3], axes: &Matrix3<f64>) -> [f64; 3] {
    let v = axes.transpose() * Vector3::new(p[0], p[1], p[2]);
    [v[0], v[1], v[2]]
}

pub fn from_frame(p: &[f64; 3], axes: &Matrix3<f64>) -> [f64; 3] {
    let v = axes * Vector3::new(p[0], p[1], p[2]);
    [v[0], v[1], v[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_structure(n: usize, seed: u64) -> Structure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| [0; 3].map(|_| rng.random_range(-3.0..3.0)))
            .collect();
        Structure::new(vec!["C".into(); n], positions).unwrap()
    }

    fn random_rotation(seed: u64) -> Matrix3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
    }

    #[test]
    fn center_single_and_pair() {
        let s = Structure::from_parts(&["H"], vec![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(center(&s).positions, vec![[0.0, 0.0, 0.0]]);
        let s = Structure::from_parts(&["H", "H"], vec![[0.0; 3], [2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(
            center(&s).positions,
            vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn center_is_idempotent() {
        let s = random_structure(10, 3);
        let once = center(&s);
        let twice = center(&once);
        for (a, b) in once.positions.iter().zip(&twice.positions) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        let c = once.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn covariance_hand_cases() {
        let s = Structure::from_parts(&["C", "C"], vec![[1.0; 3], [1.0; 3]]).unwrap();
        assert_eq!(covariance3(&s), Matrix3::zeros());
        let s =
            Structure::from_parts(&["C", "C"], vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(
            covariance3(&s),
            Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0))
        );
    }

    /// With 20 atoms a single draw's eigenvalues scatter by about a third of
    /// their value, so the 35% band is checked on the median over seeds.
    #[test]
    fn covariance_monte_carlo_eigenvalues() {
        let sd = [2.0, 1.0, 0.5];
        let mut per_axis: [Vec<f64>; 3] = Default::default();
        for seed in 0..201 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let positions = (0..20)
                .map(|_| [0, 1, 2].map(|k| sd[k] * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let s = Structure::new(vec!["C".into(); 20], positions).unwrap();
            let l = principal_frame(&s).variances;
            for k in 0..3 {
                per_axis[k].push(l[k]);
            }
        }
        for (values, want) in per_axis.iter_mut().zip([4.0, 1.0, 0.25]) {
            values.sort_by(f64::total_cmp);
            let median = values[values.len() / 2];
            assert!((median - want).abs() / want < 0.35, "{median} vs {want}");
        }
    }

    #[test]
    fn frame_is_orthonormal_and_rotation_invariant() {
        let s = random_structure(12, 5);
        let f = principal_frame(&s);
        let rtr = f.rotation.transpose() * f.rotation;
        assert!((rtr - Matrix3::identity()).abs().max() < 1e-9);
        assert!(f.variances[0] >= f.variances[1] && f.variances[1] >= f.variances[2]);

        let r = random_rotation(9);
        let rotated = s.with_positions(s.positions.iter().map(|p| from_frame(p, &r)).collect());
        let g = principal_frame(&rotated);
        for k in 0..3 {
            assert!((f.variances[k] - g.variances[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_of_axis_aligned_input() {
        let s = Structure::from_parts(
            &["C"; 4],
            vec![
                [2.0, 0.0, 0.0],
                [-2.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0],
            ],
        )
        .unwrap();
        let f = principal_frame(&s);
        // entries are 0 or ±1: identity up to permutation and sign
        assert!(f
            .rotation
            .iter()
            .all(|v| v.abs() < 1e-12 || (v.abs() - 1.0).abs() < 1e-12));
        assert!(f.variances[2].abs() < 1e-12);
    }

    #[test]
    fn planar_structure_has_zero_minor_variance() {
        let s = random_structure(9, 2);
        let planar = s.with_positions(s.positions.iter().map(|p| [p[0], p[1], 0.0]).collect());
        let r = random_rotation(4);
        let planar =
            planar.with_positions(planar.positions.iter().map(|p| from_frame(p, &r)).collect());
        assert!(principal_frame(&planar).variances[2] < 1e-12);
    }

    #[test]
    fn shape_point_vertices() {
        let rod =
            Structure::from_parts(&["C"; 3], vec![[0.0; 3], [1.0, 1.0, 1.0], [2.5, 2.5, 2.5]])
                .unwrap();
        let sp = shape_point(&rod).unwrap();
        assert!(sp.npr1.abs() < 1e-9 && (sp.npr2 - 1.0).abs() < 1e-9);

        let sp = ShapePoint::from_variances([1.0, 1.0, 1.0]).unwrap();
        assert_eq!(sp, ShapePoint::SPHERE);
        let sp = ShapePoint::from_variances([0.9, 0.05, 0.05]).unwrap();
        assert!((sp.npr1 - 0.1 / 0.95).abs() < 1e-12);
        assert!((sp.npr1 - 0.105).abs() < 1e-3);
        assert!((sp.npr2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_point_degenerate() {
        let s = Structure::from_parts(&["C", "C"], vec![[1.0; 3], [1.0; 3]]).unwrap();
        assert!(matches!(shape_point(&s), Err(GpffError::ZeroExtent)));
    }

    #[test]
    fn shape_point_rigid_and_scale_invariant() {
        let s = random_structure(15, 21);
        let a = shape_point(&s).unwrap();
        let r = random_rotation(1);
        let moved = s.with_positions(
            s.positions
                .iter()
                .map(|p| {
                    let q = from_frame(p, &r);
                    [3.0 * q[0] + 1.0, 3.0 * q[1] - 2.0, 3.0 * q[2] + 0.5]
                })
                .collect(),
        );
        let b = shape_point(&moved).unwrap();
        assert!(a.distance(&b) < 1e-9);
        assert!(a.npr1 <= a.npr2 + 1e-9);
    }

    #[test]
    fn mpd_cases() {
        let s = Structure::from_parts(&["H", "H"], vec![[0.0; 3], [1.5, 0.0, 0.0]]).unwrap();
        assert_eq!(max_pairwise_distance(&s).unwrap(), 1.5);
        let h = 3f64.sqrt();
        let s = Structure::from_parts(&["C"; 3], vec![[0.0; 3], [2.0, 0.0, 0.0], [1.0, h, 0.0]])
            .unwrap();
        assert!((max_pairwise_distance(&s).unwrap() - 2.0).abs() < 1e-12);
        let one = Structure::from_parts(&["H"], vec![[0.0; 3]]).unwrap();
        assert!(max_pairwise_distance(&one).is_err());
    }

    #[test]
    fn perturb_zero_and_determinism() {
        let s = random_structure(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(perturb(&s, 0.0, &mut rng).unwrap(), s);
        let a = perturb(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = perturb(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(perturb(&s, -1.0, &mut rng).is_err());
    }

    #[test]
    fn perturb_empirical_std() {
        let s = Structure::from_parts(&["H"], vec![[0.0; 3]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sq = [0.0; 3];
        for _ in 0..1000 {
            let p = perturb(&s, 2.0, &mut rng).unwrap().positions[0];
            for k in 0..3 {
                sq[k] += p[k] * p[k];
            }
        }
        for v in sq {
            let sd = (v / 1000.0).sqrt();
            assert!((1.9..=2.1).contains(&sd), "{sd}");
        }
    }

    #[test]
    fn structure_validation() {
        assert!(Structure::from_parts::<&str>(&[], vec![]).is_err());
        assert!(Structure::from_parts(&["H"], vec![[f64::NAN, 0.0, 0.0]]).is_err());
        assert!(Structure::from_parts(&["H", "H"], vec![[0.0; 3]]).is_err());
    }
}
