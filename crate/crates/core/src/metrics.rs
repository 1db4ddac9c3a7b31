//! Ensemble evaluation: heuristic validity from distance-based bond
//! perception, maximum-pairwise-distance histograms, Jensen-Shannon
//! divergence and shape-space scatter.
//!
//! Validity here is a geometric heuristic over the H/C/N/O/F alphabet:
//! bonds are perceived from covalent radii, and a structure is valid when
//! no two atoms overlap, the bond graph is connected and every atom's
//! neighbor count is allowed for its element. It has no notion of bond
//! orders or aromaticity, so its fractions are not comparable to
//! cheminformatics-toolkit validity.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};
use crate::geometry::{distance, max_pairwise_distance, shape_point, ShapePoint, Structure};
use crate::sampler::TrajectoryTrace;

pub const DEFAULT_BINS: usize = 100;
pub const BOND_SCALE: f64 = 1.2;
pub const OVERLAP_DISTANCE: f64 = 0.5;

pub fn covalent_radius(element: &str) -> Option<f64> {
    Some(match element {
        "H" => 0.31,
        "C" => 0.76,
        "N" => 0.71,
        "O" => 0.66,
        "F" => 0.57,
        _ => return None,
    })
}

/// Neighbor counts accepted for an element. Without bond orders a carbon
/// in a double or triple bond has fewer than four neighbors, so lower
/// counts down to the element's minimum are allowed.
pub fn allowed_degrees(element: &str) -> Option<&'static [usize]> {
    Some(match element {
        "H" => &[1],
        "C" => &[2, 3, 4],
        "N" => &[1, 2, 3],
        "O" => &[1, 2],
        "F" => &[1],
        _ => return None,
    })
}

/// Undirected bond list `(i, j)` with `i < j`.
pub fn perceive_bonds(s: &Structure) -> Result<Vec<(usize, usize)>> {
    perceive_bonds_scaled(s, BOND_SCALE)
}

pub fn perceive_bonds_scaled(s: &Structure, scale: f64) -> Result<Vec<(usize, usize)>> {
    let radii = s
        .elements
        .iter()
        .map(|e| covalent_radius(e).ok_or_else(|| GpffError::UnknownElement(e.clone())))
        .collect::<Result<Vec<f64>>>()?;
    let mut bonds = Vec::new();
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            if distance(&s.positions[i], &s.positions[j]) < scale * (radii[i] + radii[j]) {
                bonds.push((i, j));
            }
        }
    }
    Ok(bonds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Failure {
    Disconnected,
    BadValence,
    OverlappingAtoms,
    Parse,
}

impl Failure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Failure::Disconnected => "disconnected",
            Failure::BadValence => "bad-valence",
            Failure::OverlappingAtoms => "overlapping-atoms",
            Failure::Parse => "parse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

fn connected(n: usize, bonds: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in bonds {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|v| v)
}

/// Checks overlap, then connectivity, then neighbor counts; reports the
/// first failure.
pub fn validity(s: &Structure) -> Validity {
    let fail = |f| Validity {
        valid: false,
        failure: Some(f),
    };
    let Ok(bonds) = perceive_bonds(s) else {
        return fail(Failure::Parse);
    };
    let n = s.len();
    for i in 0..n {
        for j in i + 1..n {
            if distance(&s.positions[i], &s.positions[j]) < OVERLAP_DISTANCE {
                return fail(Failure::OverlappingAtoms);
            }
        }
    }
    if n == 0 || !connected(n, &bonds) {
        return fail(Failure::Disconnected);
    }
    let mut degree = vec![0usize; n];
    for &(i, j) in &bonds {
        degree[i] += 1;
        degree[j] += 1;
    }
    let ok = s
        .elements
        .iter()
        .zip(&degree)
        .all(|(e, d)| allowed_degrees(e).is_some_and(|set| set.contains(d)));
    if !ok {
        return fail(Failure::BadValence);
    }
    Validity {
        valid: true,
        failure: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub entries: Vec<Validity>,
    pub valid: usize,
    pub total: usize,
    pub fraction: f64,
    pub failures: BTreeMap<String, usize>,
}

pub fn validity_report(structures: &[Structure]) -> ValidityReport {
    let entries: Vec<Validity> = structures.par_iter().map(validity).collect();
    let valid = entries.iter().filter(|e| e.valid).count();
    let mut failures = BTreeMap::new();
    for f in entries.iter().filter_map(|e| e.failure) {
        *failures.entry(f.as_str().to_string()).or_insert(0) += 1;
    }
    let total = entries.len();
    ValidityReport {
        entries,
        valid,
        total,
        fraction: if total == 0 {
            0.0
        } else {
            valid as f64 / total as f64
        },
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; the last bin is closed.
    pub fn with_range(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
        if bins == 0 {
            return Err(GpffError::InvalidArgument(
                "histogram needs at least one bin".into(),
            ));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(GpffError::InvalidArgument(format!(
                "bad histogram range [{lo}, {hi}]"
            )));
        }
        let width = if hi > lo {
            (hi - lo) / bins as f64
        } else {
            1.0
        };
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            if !v.is_finite() || v < lo || v > hi {
                continue;
            }
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let total = counts.iter().sum();
        Ok(Histogram {
            edges,
            counts,
            total,
        })
    }

    /// Histograms of `a` and `b` over the range of their union.
    pub fn shared(a: &[f64], b: &[f64], bins: usize) -> Result<(Histogram, Histogram)> {
        let (lo, hi) = a
            .iter()
            .chain(b)
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        if lo > hi {
            return Err(GpffError::InvalidArgument("no finite samples".into()));
        }
        Ok((
            Histogram::with_range(a, lo, hi, bins)?,
            Histogram::with_range(b, lo, hi, bins)?,
        ))
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Base-2 Jensen-Shannon divergence of two probability vectors.
pub fn js_from_probabilities(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl2(p, &m) + 0.5 * kl2(q, &m)).clamp(0.0, 1.0)
}

/// Base-2 Jensen-Shannon divergence between the histograms of two sample
/// sets on their shared range.
pub fn js_divergence(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GpffError::InvalidArgument(
            "js divergence needs two non-empty samples".into(),
        ));
    }
    let (ha, hb) = Histogram::shared(a, b, bins)?;
    Ok(js_from_probabilities(
        &ha.probabilities(),
        &hb.probabilities(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpdSection {
    pub generated: Histogram,
    pub reference: Histogram,
    pub js: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfeRow {
    pub nfe: usize,
    pub count: usize,
    pub valid: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfeSection {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    /// Present when there is one trace per generated structure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validity_vs_nfe: Vec<NfeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub count: usize,
    pub validity: ValidityReport,
    pub reference_validity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpd: Option<MpdSection>,
    pub shape_points: Vec<ShapePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_shape_point: Option<ShapePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfe: Option<NfeSection>,
}

fn mpds(structures: &[Structure]) -> Vec<f64> {
    structures
        .iter()
        .filter_map(|s| max_pairwise_distance(s).ok())
        .collect()
}

/// Mean of the defined shape points (zero-extent structures are skipped).
pub fn mean_shape_point(points: &[ShapePoint]) -> Option<ShapePoint> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    Some(ShapePoint {
        npr1: points.iter().map(|p| p.npr1).sum::<f64>() / n,
        npr2: points.iter().map(|p| p.npr2).sum::<f64>() / n,
    })
}

pub fn ensemble_report(
    generated: &[Structure],
    reference: &[Structure],
    traces: &[TrajectoryTrace],
    bins: usize,
) -> Result<EnsembleReport> {
    let validity = validity_report(generated);
    let reference_validity = validity_report(reference).fraction;
    let (g, r) = (mpds(generated), mpds(reference));
    let mpd = if g.is_empty() || r.is_empty() {
        None
    } else {
        let (hg, hr) = Histogram::shared(&g, &r, bins)?;
        let js = js_from_probabilities(&hg.probabilities(), &hr.probabilities());
        Some(MpdSection {
            generated: hg,
            reference: hr,
            js,
        })
    };
    let shape_points: Vec<ShapePoint> = generated
        .iter()
        .filter_map(|s| shape_point(s).ok())
        .collect();
    let nfe = (!traces.is_empty()).then(|| {
        let counts: Vec<usize> = traces.iter().map(|t| t.nfe).collect();
        let mut rows: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        if traces.len() == generated.len() {
            for (c, v) in counts.iter().zip(&validity.entries) {
                let e = rows.entry(*c).or_default();
                e.0 += 1;
                e.1 += v.valid as usize;
            }
        }
        NfeSection {
            mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
            min: counts.iter().copied().min().unwrap_or(0),
            max: counts.iter().copied().max().unwrap_or(0),
            validity_vs_nfe: rows
                .into_iter()
                .map(|(nfe, (count, valid))| NfeRow {
                    nfe,
                    count,
                    valid,
                    fraction: valid as f64 / count as f64,
                })
                .collect(),
        }
    });
    Ok(EnsembleReport {
        count: generated.len(),
        mean_shape_point: mean_shape_point(&shape_points),
        validity,
        reference_validity,
        mpd,
        shape_points,
        nfe,
    })
}

impl EnsembleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// `bin_lo,bin_hi,generated,reference` rows of the MPD histograms.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,generated,reference\n");
        if let Some(m) = &self.mpd {
            for (i, w) in m.generated.edges.windows(2).enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    w[0], w[1], m.generated.counts[i], m.reference.counts[i]
                );
            }
        }
        out
    }

    pub fn validity_vs_nfe_csv(&self) -> String {
        let mut out = String::from("nfe,count,valid,fraction\n");
        for r in self.nfe.iter().flat_map(|n| &n.validity_vs_nfe) {
            let _ = writeln!(out, "{},{},{},{}", r.nfe, r.count, r.valid, r.fraction);
        }
        out
    }

    pub fn shape_points_csv(&self) -> String {
        let mut out = String::from("npr1,npr2\n");
        for p in &self.shape_points {
            let _ = writeln!(out, "{},{}", p.npr1, p.npr2);
        }
        out
    }
}
