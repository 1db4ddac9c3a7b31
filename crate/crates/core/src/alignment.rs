//! Index alignment of a perturbed structure onto its reference.
//!
//! Atoms are matched independently per element type by solving a linear
//! assignment on squared distances between globally centered coordinates.
//! [`align_rigid`] additionally optimizes a proper rotation.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};
use crate::geometry::{
    centered, centroid, frobenius_sq, principal_frame_of, squared_distance, Coords, Structure,
};

/// `mapping[slot]` is the index of the source atom placed at `slot`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.mapping.iter().map(|&j| items[j].clone()).collect()
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.mapping.len()];
        for (slot, &src) in self.mapping.iter().enumerate() {
            inv[src] = slot;
        }
        Permutation { mapping: inv }
    }
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Shortest augmenting paths with row/column potentials, `O(k³)`. Returns
/// the permutation mapping each row to its assigned column; ties resolve to
/// the lowest column index.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Permutation> {
    let n = cost.len();
    if cost.iter().any(|row| row.len() != n) {
        return Err(GpffError::InvalidArgument(
            "assignment cost matrix must be square".into(),
        ));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(GpffError::InvalidArgument(
            "assignment cost matrix has non-finite entries".into(),
        ));
    }
    if n == 0 {
        return Ok(Permutation { mapping: vec![] });
    }

    // 1-based indexing; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut next = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r - 1][col - 1] - u[r] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    next = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = next;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; n];
    for col in 1..=n {
        mapping[row_of_col[col] - 1] = col - 1;
    }
    Ok(Permutation { mapping })
}

pub fn assignment_cost(cost: &[Vec<f64>], perm: &Permutation) -> f64 {
    perm.mapping
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[r][c])
        .sum()
}

/// Element symbol → ascending atom indices.
pub fn indices_by_element(elements: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in elements.iter().enumerate() {
        groups.entry(e.as_str()).or_default().push(i);
    }
    groups
}

pub fn same_multiset(a: &[String], b: &[String]) -> bool {
    let ga = indices_by_element(a);
    let gb = indices_by_element(b);
    ga.len() == gb.len()
        && ga
            .iter()
            .all(|(e, idx)| gb.get(e).is_some_and(|other| other.len() == idx.len()))
}

/// Reorders `noisy` so each slot holds the same element as `reference` and
/// the summed squared distance between centered coordinates is minimal.
///
/// The returned structure carries the original (uncentered) noisy
/// coordinates, in reference order.
pub fn align_permutation(
    noisy: &Structure,
    reference: &Structure,
) -> Result<(Permutation, Structure)> {
    if noisy.len() != reference.len() || !same_multiset(&noisy.elements, &reference.elements) {
        return Err(GpffError::ElementMismatch(
            "noisy and reference structures have different element multisets".into(),
        ));
    }
    let xn = centered(&noisy.positions);
    let xr = centered(&reference.positions);
    let ref_groups = indices_by_element(&reference.elements);
    let noisy_groups = indices_by_element(&noisy.elements);

    let mut mapping = vec![0usize; reference.len()];
    for (el, ref_idx) in &ref_groups {
        let src_idx = &noisy_groups[el];
        let cost: Vec<Vec<f64>> = ref_idx
            .iter()
            .map(|&r| {
                src_idx
                    .iter()
                    .map(|&s| squared_distance(&xr[r], &xn[s]))
                    .collect()
            })
            .collect();
        let perm = solve_assignment(&cost)?;
        for (k, &r) in ref_idx.iter().enumerate() {
            mapping[r] = src_idx[perm.mapping[k]];
        }
    }
    let perm = Permutation { mapping };
    let aligned = Structure {
        elements: reference.elements.clone(),
        positions: perm.apply(&noisy.positions),
        name: noisy.name.clone(),
    };
    Ok((perm, aligned))
}

/// Proper rotation `R` minimizing `Σ ‖pᵢ − R qᵢ‖²` for centered point sets.
pub fn kabsch(p: &[[f64; 3]], q: &[[f64; 3]]) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += Vector3::from(*a) * Vector3::from(*b).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Matrix3::identity(),
    };
    let d = (u * vt).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d })) * vt
}

/// A reference superimposed on a query structure.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidAlignment {
    /// Reference coordinates rotated and translated onto the query, listed in
    /// query atom order.
    pub positions: Coords,
    /// `mapping[i]` is the reference atom placed on query atom `i`.
    pub mapping: Vec<usize>,
    pub rotation: Matrix3<f64>,
    /// Summed squared distance to the query.
    pub cost: f64,
}

const RIGID_MAX_ITER: usize = 30;

/// Superimposes `reference` on `query` over translations, proper rotations
/// and element-preserving permutations. Alternates per-element assignment
/// and Kabsch rotation from each sign choice of the principal-axis match and
/// keeps the best local optimum.
pub fn align_rigid(query: &Structure, reference: &Structure) -> Result<RigidAlignment> {
    if query.len() != reference.len() || !same_multiset(&query.elements, &reference.elements) {
        return Err(GpffError::ElementMismatch(
            "query and reference structures have different element multisets".into(),
        ));
    }
    let xq = centered(&query.positions);
    let xr = centered(&reference.positions);
    let cq = centroid(&query.positions);
    let groups_q = indices_by_element(&query.elements);
    let groups_r = indices_by_element(&reference.elements);
    let fq = principal_frame_of(&xq).rotation;
    let fr = principal_frame_of(&xr).rotation;

    let assign = |rot: &Matrix3<f64>| -> Result<Vec<usize>> {
        let moved: Coords = xr
            .iter()
            .map(|p| {
                let v = rot * Vector3::from(*p);
                [v[0], v[1], v[2]]
            })
            .collect();
        let mut mapping = vec![0usize; xq.len()];
        for (el, qi) in &groups_q {
            let ri = &groups_r[el];
            let cost: Vec<Vec<f64>> = qi
                .iter()
                .map(|&a| {
                    ri.iter()
                        .map(|&b| squared_distance(&xq[a], &moved[b]))
                        .collect()
                })
                .collect();
            let perm = solve_assignment(&cost)?;
            for (k, &a) in qi.iter().enumerate() {
                mapping[a] = ri[perm.mapping[k]];
            }
        }
        Ok(mapping)
    };
    let place = |rot: &Matrix3<f64>, mapping: &[usize]| -> Coords {
        mapping
            .iter()
            .map(|&j| {
                let v = rot * Vector3::from(xr[j]);
                [v[0], v[1], v[2]]
            })
            .collect()
    };

    let mut best: Option<(f64, Matrix3<f64>, Vec<usize>)> = None;
    for signs in [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ] {
        let mut s = Matrix3::from_diagonal(&Vector3::from(signs));
        if (fq * s * fr.transpose()).determinant() < 0.0 {
            s = -s;
        }
        let mut rot = fq * s * fr.transpose();
        let mut mapping = assign(&rot)?;
        let mut cost = frobenius_sq(&xq, &place(&rot, &mapping));
        for _ in 0..RIGID_MAX_ITER {
            let ordered: Coords = mapping.iter().map(|&j| xr[j]).collect();
            let next_rot = kabsch(&xq, &ordered);
            let next_mapping = assign(&next_rot)?;
            let next_cost = frobenius_sq(&xq, &place(&next_rot, &next_mapping));
            if next_cost >= cost * (1.0 - 1e-12) {
                if next_cost < cost {
                    (rot, mapping, cost) = (next_rot, next_mapping, next_cost);
                }
                break;
            }
            (rot, mapping, cost) = (next_rot, next_mapping, next_cost);
        }
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, rot, mapping));
        }
    }
    let (cost, rotation, mapping) = best.expect("at least one start");
    let positions = place(&rotation, &mapping)
        .into_iter()
        .map(|p| [p[0] + cq[0], p[1] + cq[1], p[2] + cq[2]])
        .collect();
    Ok(RigidAlignment {
        positions,
        mapping,
        rotation,
        cost,
    })
}
