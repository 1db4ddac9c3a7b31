use crate::geometry::{centroid, from_frame, principal_frame_of, to_frame, Coords, Structure};

/// Floor on current principal variances during shape projection.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Atoms whose coordinates stay fixed: their forces and injected noise are
/// zeroed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScaffoldMask {
    fixed: Option<Vec<bool>>,
}

impl ScaffoldMask {
    pub fn none() -> Self {
        ScaffoldMask { fixed: None }
    }

    pub fn new(fixed: Option<Vec<bool>>) -> Self {
        match fixed {
            Some(f) if f.iter().any(|b| *b) => ScaffoldMask { fixed: Some(f) },
            _ => ScaffoldMask { fixed: None },
        }
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed.as_ref().is_some_and(|f| f[i])
    }

    pub fn is_active(&self) -> bool {
        self.fixed.is_some()
    }

    pub fn zero_rows(&self, m: &mut Coords) {
        if let Some(f) = &self.fixed {
            for (row, &fixed) in m.iter_mut().zip(f) {
                if fixed {
                    *row = [0.0; 3];
                }
            }
        }
    }

    /// Indices of movable atoms.
    pub fn free_indices(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|&i| !self.is_fixed(i)).collect()
    }
}

/// Rescales the structure about its centroid in its principal frame: axis `a`
/// is multiplied by `(1 − α)·sqrt(λ_target,a / λ̃_a) + α`.
pub fn apply_shape_projection(x: &Structure, target: [f64; 3], alpha: f64) -> Structure {
    apply_shape_projection_masked(x, target, alpha, &ScaffoldMask::none())
}

/// Shape projection restricted to the free atoms: their own centroid and
/// principal frame are used and scaffold atoms are left untouched.
pub fn apply_shape_projection_masked(
    x: &Structure,
    target: [f64; 3],
    alpha: f64,
    mask: &ScaffoldMask,
) -> Structure {
    let free = mask.free_indices(x.len());
    if free.len() < 2 {
        return x.clone();
    }
    let pts: Coords = free.iter().map(|&i| x.positions[i]).collect();
    let frame = principal_frame_of(&pts);
    let c = centroid(&pts);
    let scale: [f64; 3] = [0, 1, 2].map(|a| {
        let current = frame.variances[a].max(VARIANCE_FLOOR);
        (1.0 - alpha) * (target[a] / current).sqrt() + alpha
    });
    let mut positions = x.positions.clone();
    for &i in &free {
        let p = x.positions[i];
        let local = to_frame(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]], &frame.rotation);
        let scaled = [0, 1, 2].map(|a| local[a] * scale[a]);
        let back = from_frame(&scaled, &frame.rotation);
        positions[i] = [back[0] + c[0], back[1] + c[1], back[2] + c[2]];
    }
    x.with_positions(positions)
}
