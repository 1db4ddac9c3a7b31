//! Force providers: the contract samplers consume, the analytic mixture
//! oracle over a discrete reference set, and the training-loss evaluator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{align_permutation, align_rigid, indices_by_element, same_multiset};
use crate::error::{GpffError, Result};
use crate::geometry::{centered, frobenius_sq, Coords, Structure};
use crate::pes::pseudo_forces;

/// Pseudo-forces for one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceEvaluation {
    pub forces: Coords,
    /// Noise level the provider believes it saw, when it knows one.
    #[serde(default)]
    pub sigma_hint: Option<f64>,
    /// False when an iterative provider hit its iteration cap.
    #[serde(default = "yes", skip_serializing)]
    pub converged: bool,
}

fn yes() -> bool {
    true
}

impl ForceEvaluation {
    pub fn new(forces: Coords) -> Self {
        ForceEvaluation {
            forces,
            sigma_hint: None,
            converged: true,
        }
    }
}

/// Maps a structure to pseudo-forces. Implementations must be
/// deterministic for fixed state and input and shareable across threads.
pub trait ForceProvider: Send + Sync {
    fn evaluate(&self, structure: &Structure) -> Result<ForceEvaluation>;

    /// Conforming providers infer the noise level from geometry alone.
    fn noise_agnostic(&self) -> bool {
        true
    }
}

impl<F> ForceProvider for F
where
    F: Fn(&Structure) -> Result<ForceEvaluation> + Send + Sync,
{
    fn evaluate(&self, structure: &Structure) -> Result<ForceEvaluation> {
        self(structure)
    }
}

impl<P: ForceProvider + ?Sized> ForceProvider for std::sync::Arc<P> {
    fn evaluate(&self, structure: &Structure) -> Result<ForceEvaluation> {
        (**self).evaluate(structure)
    }

    fn noise_agnostic(&self) -> bool {
        (**self).noise_agnostic()
    }
}

/// Always returns zero forces.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroProvider;

impl ForceProvider for ZeroProvider {
    fn evaluate(&self, structure: &Structure) -> Result<ForceEvaluation> {
        Ok(ForceEvaluation::new(vec![[0.0; 3]; structure.len()]))
    }
}

/// Equilibrium structures sharing one element multiset, stored in the
/// element order of the first member.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    elements: Vec<String>,
    members: Vec<Coords>,
    centered: Vec<Coords>,
}

impl ReferenceSet {
    pub fn new(structures: &[Structure]) -> Result<Self> {
        let first = structures
            .first()
            .ok_or_else(|| GpffError::InvalidArgument("reference set must not be empty".into()))?;
        let elements = first.elements.clone();
        let mut members = Vec::with_capacity(structures.len());
        for s in structures {
            s.validate()?;
            let map = occurrence_map(&s.elements, &elements).ok_or_else(|| {
                GpffError::ElementMismatch(format!(
                    "reference '{}' has a different element multiset",
                    s.name.as_deref().unwrap_or("?")
                ))
            })?;
            let mut pos = vec![[0.0; 3]; s.len()];
            for (i, &slot) in map.iter().enumerate() {
                pos[slot] = s.positions[i];
            }
            members.push(pos);
        }
        let centered = members.iter().map(|m| centered(m)).collect();
        Ok(ReferenceSet {
            elements,
            members,
            centered,
        })
    }

    /// Groups arbitrary structures into one set per element multiset,
    /// preserving first-appearance order.
    pub fn group(structures: &[Structure]) -> Result<Vec<ReferenceSet>> {
        let mut groups: Vec<Vec<Structure>> = Vec::new();
        for s in structures {
            match groups
                .iter_mut()
                .find(|g| same_multiset(&g[0].elements, &s.elements))
            {
                Some(g) => g.push(s.clone()),
                None => groups.push(vec![s.clone()]),
            }
        }
        groups.iter().map(|g| ReferenceSet::new(g)).collect()
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_atoms(&self) -> usize {
        self.elements.len()
    }

    pub fn positions(&self, k: usize) -> &Coords {
        &self.members[k]
    }

    pub fn centered_positions(&self, k: usize) -> &Coords {
        &self.centered[k]
    }

    pub fn structure(&self, k: usize) -> Structure {
        Structure {
            elements: self.elements.clone(),
            positions: self.members[k].clone(),
            name: None,
        }
    }

    pub fn structures(&self) -> Vec<Structure> {
        (0..self.len()).map(|k| self.structure(k)).collect()
    }

    pub fn accepts(&self, elements: &[String]) -> bool {
        elements == self.elements.as_slice() || same_multiset(elements, &self.elements)
    }

    /// Query coordinates reordered into set order, and the query→set map.
    fn to_set_order(&self, x: &Structure) -> Result<(Coords, Option<Vec<usize>>)> {
        if x.elements == self.elements {
            return Ok((x.positions.clone(), None));
        }
        let map = occurrence_map(&x.elements, &self.elements).ok_or_else(|| {
            GpffError::ElementMismatch("structure is incompatible with the reference set".into())
        })?;
        let mut pos = vec![[0.0; 3]; x.len()];
        for (i, &slot) in map.iter().enumerate() {
            pos[slot] = x.positions[i];
        }
        Ok((pos, Some(map)))
    }
}

/// Maps each index of `from` to the slot in `to` holding the same element
/// occurrence (k-th carbon to k-th carbon).
fn occurrence_map(from: &[String], to: &[String]) -> Option<Vec<usize>> {
    if from.len() != to.len() || !same_multiset(from, to) {
        return None;
    }
    let groups = indices_by_element(to);
    let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut map = Vec::with_capacity(from.len());
    for e in from {
        let k = seen.entry(e.as_str()).or_insert(0);
        map.push(groups[e.as_str()][*k]);
        *k += 1;
    }
    Some(map)
}

/// Normalized posterior weights `w_k ∝ exp(−‖X − X_k‖² / 2σ²)` over set-order
/// coordinates. `σ = 0` gives the hard nearest-reference limit.
fn posterior_weights(x: &[[f64; 3]], members: &[Coords], sigma: f64) -> Vec<f64> {
    let d2: Vec<f64> = members.iter().map(|m| frobenius_sq(x, m)).collect();
    let (nearest, dmin) = d2
        .iter()
        .copied()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (k, d)| if d < acc.1 { (k, d) } else { acc },
        );
    if sigma == 0.0 {
        let mut w = vec![0.0; d2.len()];
        w[nearest] = 1.0;
        return w;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut w: Vec<f64> = d2.iter().map(|d| (-(d - dmin) * inv).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

fn weighted_mean(members: &[Coords], w: &[f64]) -> Coords {
    let mut out = vec![[0.0; 3]; members.first().map_or(0, Vec::len)];
    for (m, &wk) in members.iter().zip(w) {
        if wk == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(m) {
            for k in 0..3 {
                o[k] += wk * p[k];
            }
        }
    }
    out
}

fn from_set_order(pos: Coords, map: &Option<Vec<usize>>) -> Coords {
    match map {
        None => pos,
        Some(map) => map.iter().map(|&slot| pos[slot]).collect(),
    }
}

/// Posterior mean of the clean structure under isotropic Gaussian noise of
/// width `σ` and a uniform prior over the references.
pub fn mixture_denoiser(
    x: &Structure,
    refs: &ReferenceSet,
    sigma: f64,
) -> Result<(Structure, Vec<f64>)> {
    if !(sigma > 0.0) {
        return Err(GpffError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if refs.is_empty() {
        return Err(GpffError::InvalidArgument("empty reference set".into()));
    }
    let (xs, map) = refs.to_set_order(x)?;
    let w = posterior_weights(&xs, &refs.members, sigma);
    let mean = weighted_mean(&refs.members, &w);
    Ok((x.with_positions(from_set_order(mean, &map)), w))
}

/// How the oracle chooses the noise level of the posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Infer σ from the geometry by fixed-point iteration.
    SigmaAgnostic,
    /// Use the given σ.
    FixedSigma(f64),
}

/// How references are matched to the query before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleAlignment {
    /// Compare coordinates as given.
    #[default]
    None,
    /// Superimpose every reference on the query (rotation, translation and
    /// same-element permutation) first, making the oracle invariant to the
    /// query's orientation and atom order.
    Rigid,
}

pub const SIGMA_FIXED_POINT_TOL: f64 = 1e-6;
pub const SIGMA_FIXED_POINT_MAX_ITER: usize = 50;

/// Analytic stand-in for a trained model: forces `−2(X − X̂₀)` with `X̂₀` the
/// mixture posterior mean over the matching reference set.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    sets: Vec<ReferenceSet>,
    mode: OracleMode,
    alignment: OracleAlignment,
}

impl OracleProvider {
    pub fn new(refs: ReferenceSet, mode: OracleMode) -> Result<Self> {
        Self::with_sets(vec![refs], mode)
    }

    pub fn with_sets(sets: Vec<ReferenceSet>, mode: OracleMode) -> Result<Self> {
        if sets.is_empty() || sets.iter().any(ReferenceSet::is_empty) {
            return Err(GpffError::InvalidArgument(
                "oracle needs at least one reference".into(),
            ));
        }
        if let OracleMode::FixedSigma(s) = mode {
            if !(s > 0.0) {
                return Err(GpffError::InvalidArgument(format!(
                    "fixed sigma must be positive, got {s}"
                )));
            }
        }
        Ok(OracleProvider {
            sets,
            mode,
            alignment: OracleAlignment::None,
        })
    }

    pub fn from_structures(structures: &[Structure], mode: OracleMode) -> Result<Self> {
        Self::with_sets(ReferenceSet::group(structures)?, mode)
    }

    pub fn with_alignment(mut self, alignment: OracleAlignment) -> Self {
        self.alignment = alignment;
        self
    }

    pub fn alignment(&self) -> OracleAlignment {
        self.alignment
    }

    pub fn sets(&self) -> &[ReferenceSet] {
        &self.sets
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn set_for(&self, elements: &[String]) -> Option<&ReferenceSet> {
        self.sets.iter().find(|s| s.accepts(elements))
    }

    /// Fixed-point noise inference: start from the nearest-reference
    /// distance, then iterate `σ² ← ‖X − X̂₀(σ)‖² / 3n`.
    /// Returns `(σ̂, converged)`.
    pub fn infer_sigma(x: &[[f64; 3]], refs: &ReferenceSet) -> (f64, bool) {
        infer_sigma_over(x, &refs.members)
    }
}

fn infer_sigma_over(x: &[[f64; 3]], members: &[Coords]) -> (f64, bool) {
    let m = (3 * x.len()) as f64;
    let dmin = members
        .iter()
        .map(|r| frobenius_sq(x, r))
        .fold(f64::INFINITY, f64::min);
    let mut sigma = (dmin / m).sqrt();
    if sigma == 0.0 {
        return (0.0, true);
    }
    for _ in 0..SIGMA_FIXED_POINT_MAX_ITER {
        let w = posterior_weights(x, members, sigma);
        let mean = weighted_mean(members, &w);
        let next = (frobenius_sq(x, &mean) / m).sqrt();
        let done = (next - sigma).abs() < SIGMA_FIXED_POINT_TOL * next;
        sigma = next;
        if done || sigma == 0.0 {
            return (sigma, true);
        }
    }
    (sigma, false)
}

impl ForceProvider for OracleProvider {
    fn evaluate(&self, structure: &Structure) -> Result<ForceEvaluation> {
        let refs = self.set_for(&structure.elements).ok_or_else(|| {
            GpffError::ElementMismatch(format!(
                "no reference set matches a {}-atom structure with this composition",
                structure.len()
            ))
        })?;
        let (xs, map, aligned);
        let members: &[Coords] = match self.alignment {
            OracleAlignment::None => {
                (xs, map) = refs.to_set_order(structure)?;
                &refs.members
            }
            OracleAlignment::Rigid => {
                (xs, map) = (structure.positions.clone(), None);
                let query = Structure {
                    elements: structure.elements.clone(),
                    positions: structure.positions.clone(),
                    name: None,
                };
                aligned = (0..refs.len())
                    .map(|k| align_rigid(&query, &refs.structure(k)).map(|a| a.positions))
                    .collect::<Result<Vec<Coords>>>()?;
                &aligned
            }
        };
        let (sigma, converged) = match self.mode {
            OracleMode::FixedSigma(s) => (s, true),
            OracleMode::SigmaAgnostic => infer_sigma_over(&xs, members),
        };
        let w = posterior_weights(&xs, members, sigma);
        let mean = from_set_order(weighted_mean(members, &w), &map);
        let forces = structure
            .positions
            .iter()
            .zip(&mean)
            .map(|(p, q)| [0, 1, 2].map(|k| -2.0 * (p[k] - q[k])))
            .collect();
        Ok(ForceEvaluation {
            forces,
            sigma_hint: Some(sigma),
            converged,
        })
    }

    fn noise_agnostic(&self) -> bool {
        matches!(self.mode, OracleMode::SigmaAgnostic)
    }
}

/// Cap on the per-sample force-loss weight `σ⁻²`.
pub const LOSS_WEIGHT_CAP: f64 = 1000.0;

/// Monte-Carlo estimate of `E[min(σ⁻², 1000) ‖−2σε − F̂(X̃)‖²_F]`, one draw
/// per entry of `sigmas` with a uniformly chosen reference. With `align`,
/// the noisy structure is index-aligned to its reference first.
pub fn simple_loss<R: Rng + ?Sized>(
    provider: &dyn ForceProvider,
    refs: &ReferenceSet,
    sigmas: &[f64],
    rng: &mut R,
    align: bool,
) -> Result<f64> {
    if sigmas.is_empty() || refs.is_empty() {
        return Err(GpffError::InvalidArgument(
            "loss needs at least one sigma and one reference".into(),
        ));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0)) {
        return Err(GpffError::InvalidArgument(format!(
            "loss sigmas must be positive, got {bad}"
        )));
    }
    let mut total = 0.0;
    for &sigma in sigmas {
        let k = rng.random_range(0..refs.len());
        let x0 = refs.structure(k);
        let mut noisy = crate::geometry::perturb(&x0, sigma, rng)?;
        if align {
            noisy = align_permutation(&noisy, &x0)?.1;
        }
        let target = pseudo_forces(&noisy, &x0)?;
        let eval = provider.evaluate(&noisy)?;
        if eval.forces.len() != target.len() {
            return Err(GpffError::ShapeMismatch {
                expected: target.len(),
                got: eval.forces.len(),
            });
        }
        let weight = (1.0 / (sigma * sigma)).min(LOSS_WEIGHT_CAP);
        total += weight * frobenius_sq(&target, &eval.forces);
    }
    Ok(total / sigmas.len() as f64)
}
