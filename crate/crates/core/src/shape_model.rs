//! Shape predictor: a Gaussian mixture per atom count over 6-dimensional
//! log-Cholesky vectors of the 3×3 coordinate covariance.
//!
//! A covariance `Σ = L·Lᵀ` maps to
//! `v = (ln L₁₁, L₂₁, ln L₂₂, L₃₁, L₃₂, ln L₃₃)`, which is unconstrained, so any
//! Gaussian draw in `v` maps back to a positive-definite matrix.
//!
//! EM maximizes the log-likelihood plus an improper inverse-Wishart penalty
//! `−ψ/2·Σₖ tr(Σₖ⁻¹)`, giving the ridge-regularized M-step
//! `Σₖ = Sₖ + (ψ/Nₖ)·I`. The penalized objective is what EM keeps monotone;
//! `ψ` is set so a component holding `N/K` samples gets the ridge
//! `1e-6·tr(S)/6`.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SMatrix, SVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};
use crate::geometry::{covariance3, sorted_eigen, Structure};
use crate::sampler::prior::cholesky3;

pub type CholVec = [f64; 6];
type V6 = SVector<f64, 6>;
type M6 = SMatrix<f64, 6, 6>;

pub const SHAPE_MODEL_VERSION: u32 = 1;
pub const DEFAULT_COMPONENTS: usize = 5;
pub const EM_MAX_ITER: usize = 500;
/// Stop when the objective gains less than this per sample.
pub const EM_TOL_PER_SAMPLE: f64 = 1e-7;
pub const RIDGE_SCALE: f64 = 1e-6;
/// Absolute ridge floor for data with no spread at all.
pub const RIDGE_FLOOR: f64 = 1e-12;
/// L¹ acceptance radius for conditional draws on relative variances.
pub const CONDITION_TOL: f64 = 0.1;
pub const CONDITION_TRIES: usize = 200;
/// Smallest relative variance used when turning a relative target into
/// absolute variances (keeps targets like the flat disc positive).
pub const MIN_RELATIVE_VARIANCE: f64 = 1e-3;

pub fn cov_to_vec(cov: &Matrix3<f64>) -> Result<CholVec> {
    let l = cholesky3(cov)?;
    Ok([
        l[(0, 0)].ln(),
        l[(1, 0)],
        l[(1, 1)].ln(),
        l[(2, 0)],
        l[(2, 1)],
        l[(2, 2)].ln(),
    ])
}

pub fn vec_to_cov(v: &CholVec) -> Matrix3<f64> {
    let l = Matrix3::new(
        v[0].exp(),
        0.0,
        0.0,
        v[1],
        v[2].exp(),
        0.0,
        v[3],
        v[4],
        v[5].exp(),
    );
    l * l.transpose()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: CholVec,
    pub covariance: [[f64; 6]; 6],
}

impl Component {
    fn cov(&self) -> M6 {
        M6::from_fn(|r, c| self.covariance[r][c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<Component>,
}

/// Outcome of fitting one mixture.
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub mixture: Mixture,
    /// Penalized log-likelihood after each EM iteration (index 0 is the
    /// initialization).
    pub objective: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
}

struct Gauss {
    log_weight: f64,
    mean: V6,
    chol: M6,
    log_norm: f64,
}

impl Gauss {
    fn new(weight: f64, mean: V6, cov: &M6) -> Result<Gauss> {
        let chol = cov.cholesky().ok_or(GpffError::NotPositiveDefinite)?.l();
        let log_det: f64 = (0..6).map(|i| chol[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok(Gauss {
            log_weight: weight.ln(),
            mean,
            chol,
            log_norm: -0.5 * (6.0 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    fn log_density(&self, x: &V6) -> f64 {
        let z = self
            .chol
            .solve_lower_triangular(&(x - self.mean))
            .unwrap_or_else(|| V6::repeat(f64::INFINITY));
        self.log_norm - 0.5 * z.norm_squared()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn to_v6(v: &CholVec) -> V6 {
    V6::from_column_slice(v)
}

fn to_array(v: &V6) -> CholVec {
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

fn scatter(data: &[V6], resp: impl Fn(usize) -> f64, mean: &V6) -> M6 {
    let mut s = M6::zeros();
    for (i, x) in data.iter().enumerate() {
        let d = x - mean;
        s += resp(i) * d * d.transpose();
    }
    s
}

/// k-means++ seeding over distinct points; returns fewer than `k` centers
/// when the data has fewer distinct values.
fn kmeans_pp<R: Rng + ?Sized>(data: &[V6], k: usize, rng: &mut R) -> Vec<V6> {
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|c| (x - c).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let Ok(pick) = WeightedIndex::new(&d2) else {
            break;
        };
        centers.push(data[pick.sample(rng)]);
    }
    centers
}

struct Em<'a> {
    data: &'a [V6],
    psi: f64,
}

impl Em<'_> {
    fn gaussians(&self, m: &Mixture) -> Result<Vec<Gauss>> {
        m.components
            .iter()
            .map(|c| Gauss::new(c.weight, to_v6(&c.mean), &c.cov()))
            .collect()
    }

    fn penalty(&self, m: &Mixture) -> f64 {
        m.components
            .iter()
            .map(|c| {
                c.cov()
                    .try_inverse()
                    .map_or(f64::INFINITY, |inv| inv.trace())
            })
            .sum::<f64>()
            * self.psi
            * 0.5
    }

    /// Log-likelihood and per-sample responsibilities.
    fn e_step(&self, m: &Mixture) -> Result<(f64, Vec<Vec<f64>>)> {
        let gs = self.gaussians(m)?;
        let mut total = 0.0;
        let mut resp = Vec::with_capacity(self.data.len());
        for x in self.data {
            let lp: Vec<f64> = gs.iter().map(|g| g.log_weight + g.log_density(x)).collect();
            let z = log_sum_exp(&lp);
            total += z;
            resp.push(lp.iter().map(|v| (v - z).exp()).collect());
        }
        Ok((total, resp))
    }

    fn m_step(&self, prev: &Mixture, resp: &[Vec<f64>]) -> Mixture {
        let n = self.data.len() as f64;
        let components = prev
            .components
            .iter()
            .enumerate()
            .map(|(k, old)| {
                let nk: f64 = resp.iter().map(|r| r[k]).sum();
                if nk < 1e-12 {
                    return Component {
                        weight: nk / n,
                        ..old.clone()
                    };
                }
                let mean = self
                    .data
                    .iter()
                    .zip(resp)
                    .fold(V6::zeros(), |acc, (x, r)| acc + r[k] * x)
                    / nk;
                let s = scatter(self.data, |i| resp[i][k], &mean) / nk;
                let cov = s + M6::identity() * (self.psi / nk);
                Component {
                    weight: nk / n,
                    mean: to_array(&mean),
                    covariance: std::array::from_fn(|r| std::array::from_fn(|c| cov[(r, c)])),
                }
            })
            .collect();
        Mixture { components }
    }
}

/// EM for a `k`-component full-covariance mixture. Groups smaller than `k`
/// get a single component.
pub fn fit_mixture<R: Rng + ?Sized>(data: &[CholVec], k: usize, rng: &mut R) -> Result<MixtureFit> {
    if data.is_empty() {
        return Err(GpffError::InvalidArgument("no shape samples to fit".into()));
    }
    if k == 0 {
        return Err(GpffError::InvalidArgument(
            "need at least one component".into(),
        ));
    }
    let xs: Vec<V6> = data.iter().map(to_v6).collect();
    let n = xs.len() as f64;
    let k = if xs.len() < k { 1 } else { k };

    let global_mean = xs.iter().fold(V6::zeros(), |a, x| a + x) / n;
    let global = scatter(&xs, |_| 1.0, &global_mean) / n;
    let ridge = (RIDGE_SCALE * global.trace() / 6.0).max(RIDGE_FLOOR);
    let em = Em {
        data: &xs,
        psi: ridge * n / k as f64,
    };

    let centers = if k == 1 {
        vec![global_mean]
    } else {
        kmeans_pp(&xs, k, rng)
    };
    let kk = centers.len();
    let init_cov = global + M6::identity() * ridge;
    let mut mixture = Mixture {
        components: centers
            .iter()
            .map(|c| Component {
                weight: 1.0 / kk as f64,
                mean: to_array(c),
                covariance: std::array::from_fn(|r| std::array::from_fn(|q| init_cov[(r, q)])),
            })
            .collect(),
    };

    let (mut ll, mut resp) = em.e_step(&mixture)?;
    let mut objective = vec![ll - em.penalty(&mixture)];
    let mut converged = false;
    for _ in 0..EM_MAX_ITER {
        let next = em.m_step(&mixture, &resp);
        let (next_ll, next_resp) = em.e_step(&next)?;
        let obj = next_ll - em.penalty(&next);
        let gain = obj - objective[objective.len() - 1];
        mixture = next;
        ll = next_ll;
        resp = next_resp;
        objective.push(obj);
        if gain.abs() < EM_TOL_PER_SAMPLE * n {
            converged = true;
            break;
        }
    }
    mixture.components.retain(|c| c.weight > 0.0);
    let total: f64 = mixture.components.iter().map(|c| c.weight).sum();
    for c in &mut mixture.components {
        c.weight /= total;
    }
    Ok(MixtureFit {
        mixture,
        objective,
        log_likelihood: ll,
        converged,
    })
}

/// A covariance drawn from the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDraw {
    pub covariance: Matrix3<f64>,
    /// Atom count whose mixture produced the draw.
    pub atom_count: usize,
    /// `false` when the requested atom count was missing and the nearest
    /// one was used.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeModel {
    pub version: u32,
    pub components: usize,
    pub groups: BTreeMap<usize, Mixture>,
}

impl ShapeModel {
    /// Fits one mixture per atom count. Deterministic for a given seed; each
    /// group draws from its own stream.
    pub fn fit(structures: &[Structure], k: usize, seed: u64) -> Result<ShapeModel> {
        if structures.is_empty() {
            return Err(GpffError::InvalidArgument("no structures to fit".into()));
        }
        let mut by_count: BTreeMap<usize, Vec<CholVec>> = BTreeMap::new();
        for s in structures {
            let cov = covariance3(s);
            by_count.entry(s.len()).or_default().push(cov_to_vec(&cov)?);
        }
        let fitted: Result<Vec<(usize, Mixture)>> = by_count
            .into_par_iter()
            .map(|(n, data)| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(n as u64);
                Ok((n, fit_mixture(&data, k, &mut rng)?.mixture))
            })
            .collect();
        Ok(ShapeModel {
            version: SHAPE_MODEL_VERSION,
            components: k,
            groups: fitted?.into_iter().collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<ShapeModel> {
        let model: ShapeModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SHAPE_MODEL_VERSION {
            return Err(GpffError::InvalidArgument(format!(
                "unsupported shape model version {}",
                self.version
            )));
        }
        if self.groups.is_empty() {
            return Err(GpffError::InvalidArgument(
                "shape model has no groups".into(),
            ));
        }
        for (n, m) in &self.groups {
            let total: f64 = m.components.iter().map(|c| c.weight).sum();
            if m.components.is_empty()
                || m.components.iter().any(|c| !(c.weight > 0.0))
                || (total - 1.0).abs() > 1e-6
            {
                return Err(GpffError::InvalidArgument(format!(
                    "bad mixture weights for {n} atoms"
                )));
            }
            for c in &m.components {
                if c.cov().cholesky().is_none() {
                    return Err(GpffError::NotPositiveDefinite);
                }
            }
        }
        Ok(())
    }

    /// Atom count of the nearest fitted group (ties go to the smaller count).
    pub fn nearest_count(&self, n_atoms: usize) -> Option<usize> {
        self.groups
            .keys()
            .copied()
            .min_by_key(|&k| (k.abs_diff(n_atoms), k))
    }

    pub fn sample_cov<R: Rng + ?Sized>(
        &self,
        n_atoms: usize,
        rng: &mut R,
    ) -> Result<CovarianceDraw> {
        let count = self
            .nearest_count(n_atoms)
            .ok_or_else(|| GpffError::InvalidArgument("shape model is empty".into()))?;
        let mixture = &self.groups[&count];
        let weights: Vec<f64> = mixture.components.iter().map(|c| c.weight).collect();
        let pick = WeightedIndex::new(&weights)
            .map_err(|e| GpffError::InvalidArgument(format!("mixture weights: {e}")))?;
        let c = &mixture.components[pick.sample(rng)];
        let l = c
            .cov()
            .cholesky()
            .ok_or(GpffError::NotPositiveDefinite)?
            .l();
        let z = V6::from_fn(|_, _| rng.sample(StandardNormal));
        let v = to_v6(&c.mean) + l * z;
        Ok(CovarianceDraw {
            covariance: vec_to_cov(&to_array(&v)),
            atom_count: count,
            exact: count == n_atoms,
        })
    }

    /// Draws a covariance whose relative principal variances are within L¹
    /// `0.1` of `relative`. After 200 misses the closest candidate keeps its
    /// axes and trace and takes the target's relative variances.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        n_atoms: usize,
        relative: [f64; 3],
        rng: &mut R,
    ) -> Result<CovarianceDraw> {
        let target = normalize_relative(relative)?;
        let mut best: Option<(f64, CovarianceDraw)> = None;
        for _ in 0..CONDITION_TRIES {
            let draw = self.sample_cov(n_atoms, rng)?;
            let frame = sorted_eigen(&draw.covariance);
            let tr: f64 = frame.variances.iter().sum();
            let gap: f64 = (0..3)
                .map(|k| (frame.variances[k] / tr - target[k]).abs())
                .sum();
            if gap <= CONDITION_TOL {
                return Ok(draw);
            }
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, draw));
            }
        }
        let (_, mut draw) =
            best.ok_or_else(|| GpffError::InvalidArgument("no candidates".into()))?;
        let frame = sorted_eigen(&draw.covariance);
        let tr: f64 = frame.variances.iter().sum();
        let lam = absolute_target(target, tr);
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::from(lam));
        draw.covariance = frame.rotation * d * frame.rotation.transpose();
        Ok(draw)
    }

    /// Absolute principal variances for a relative target, scaled by the
    /// trace of a covariance drawn for the same atom count.
    pub fn absolute_target<R: Rng + ?Sized>(
        &self,
        n_atoms: usize,
        relative: [f64; 3],
        rng: &mut R,
    ) -> Result<[f64; 3]> {
        let draw = self.sample_cov(n_atoms, rng)?;
        Ok(absolute_target(
            normalize_relative(relative)?,
            draw.covariance.trace(),
        ))
    }
}

/// Sorts non-increasing and scales to unit sum.
pub fn normalize_relative(relative: [f64; 3]) -> Result<[f64; 3]> {
    let total: f64 = relative.iter().sum();
    if relative.iter().any(|v| !(*v >= 0.0)) || !(total > 0.0) || !total.is_finite() {
        return Err(GpffError::InvalidArgument(format!(
            "relative variances must be non-negative with positive sum: {relative:?}"
        )));
    }
    let mut r = relative.map(|v| v / total);
    r.sort_by(|a, b| b.total_cmp(a));
    Ok(r)
}

/// `relative · trace`, with each relative entry floored at
/// [`MIN_RELATIVE_VARIANCE`].
pub fn absolute_target(relative: [f64; 3], trace: f64) -> [f64; 3] {
    relative.map(|r| r.max(MIN_RELATIVE_VARIANCE) * trace)
}

pub fn named_targets() -> BTreeMap<&'static str, [f64; 3]> {
    BTreeMap::from([
        ("rod", [0.9, 0.05, 0.05]),
        ("sphere", [1.0 / 3.0; 3]),
        ("disc", [0.5, 0.5, 0.0]),
    ])
}

pub fn named_target(name: &str) -> Option<[f64; 3]> {
    named_targets()
        .get(name.to_ascii_lowercase().as_str())
        .copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ShapePoint;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    fn random_pd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        a * a.transpose() + Matrix3::identity() * 0.1
    }

    #[test]
    fn identity_and_diagonal_vectors() {
        let v = cov_to_vec(&Matrix3::identity()).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-15));
        let v = cov_to_vec(&Matrix3::from_diagonal(&[4.0, 1.0, 0.25].into())).unwrap();
        let want = [2f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.5f64.ln()];
        assert!(v.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(close(&vec_to_cov(&[0.0; 6]), &Matrix3::identity(), 0.0));
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let s = random_pd(&mut rng);
            assert!(close(&vec_to_cov(&cov_to_vec(&s).unwrap()), &s, 1e-9));
            let v: CholVec = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
            let back = cov_to_vec(&vec_to_cov(&v)).unwrap();
            assert!(v.iter().zip(back).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn tiny_diagonals_stay_pd() {
        let c = vec_to_cov(&[-12.0, 1e-6, -12.0, 0.0, -1e-6, -12.0]);
        assert!(c.cholesky().is_some());
        assert!(c.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn non_pd_rejected() {
        let m = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(cov_to_vec(&m).is_err());
    }

    #[test]
    fn separated_clusters_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = [0.0, 1.0, -1.0, 0.5, 0.0, 0.2];
        let b = [3.0, -2.0, 1.0, 0.0, 2.0, -1.0];
        let data: Vec<CholVec> = (0..400)
            .map(|i| {
                let c = if i % 2 == 0 { a } else { b };
                c.map(|m| m + 0.1 * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let fit = fit_mixture(&data, 2, &mut rng).unwrap();
        for center in [a, b] {
            let best = fit
                .mixture
                .components
                .iter()
                .map(|c| {
                    c.mean
                        .iter()
                        .zip(center)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "{best}");
        }
        assert!(fit
            .objective
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }

    #[test]
    fn identical_data_gives_one_tight_component() {
        let v = [0.3, -0.1, 0.2, 0.05, 0.0, -0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fit = fit_mixture(&vec![v; 30], 5, &mut rng).unwrap();
        assert_eq!(fit.mixture.components.len(), 1);
        let c = &fit.mixture.components[0];
        assert!(c.mean.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(c.covariance.iter().flatten().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn small_groups_use_one_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<CholVec> = (0..3).map(|i| [i as f64; 6]).collect();
        let fit = fit_mixture(&data, 5, &mut rng).unwrap();
        assert_eq!(fit.mixture.components.len(), 1);
    }

    fn clouds(count: usize, n: usize, seed: u64) -> Vec<Structure> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let scale = [2.0, 1.0, 0.5].map(|s: f64| s * (1.0 + 0.2 * rng.random::<f64>()));
                let pos = (0..n)
                    .map(|_| scale.map(|s| s * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                Structure::new(vec!["C".into(); n], pos).unwrap()
            })
            .collect()
    }

    #[test]
    fn model_fits_groups_and_samples_pd() {
        let mut data = clouds(40, 9, 4);
        data.extend(clouds(3, 12, 5));
        let model = ShapeModel::fit(&data, 5, 7).unwrap();
        assert_eq!(
            model.groups.keys().copied().collect::<Vec<_>>(),
            vec![9, 12]
        );
        assert_eq!(model.groups[&12].components.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = model.sample_cov(10, &mut rng).unwrap();
        assert_eq!((d.atom_count, d.exact), (9, false));
        assert!(model.sample_cov(12, &mut rng).unwrap().exact);
        assert!(d.covariance.cholesky().is_some());

        let again = ShapeModel::fit(&data, 5, 7).unwrap();
        assert_eq!(model, again);
        let loaded = ShapeModel::from_json(&model.to_json()).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let model = ShapeModel::fit(&clouds(30, 8, 8), 3, 1).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| model.sample_cov(8, &mut rng).unwrap().covariance)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn conditional_draws_hit_target() {
        let model = ShapeModel::fit(&clouds(30, 8, 9), 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for rel in named_targets().values() {
            let d = model.sample_conditional(8, *rel, &mut rng).unwrap();
            let f = sorted_eigen(&d.covariance);
            let tr: f64 = f.variances.iter().sum();
            let want = normalize_relative(*rel).unwrap();
            let gap: f64 = (0..3).map(|k| (f.variances[k] / tr - want[k]).abs()).sum();
            assert!(
                gap <= CONDITION_TOL + 2.0 * MIN_RELATIVE_VARIANCE,
                "{rel:?} {gap}"
            );
            assert!(d.covariance.cholesky().is_some());
        }
    }

    #[test]
    fn named_shape_points() {
        let sp = |name| ShapePoint::from_variances(named_target(name).unwrap()).unwrap();
        let rod = sp("rod");
        assert!((rod.npr1 - 0.1 / 0.95).abs() < 1e-12 && (rod.npr2 - 1.0).abs() < 1e-12);
        assert!(sp("sphere").distance(&ShapePoint::SPHERE) < 1e-12);
        assert!(sp("Disc").distance(&ShapePoint::DISC) < 1e-12);
        assert!(named_target("cube").is_none());
    }

    #[test]
    fn version_is_checked() {
        let model = ShapeModel::fit(&clouds(10, 6, 11), 2, 0).unwrap();
        let mut bad = model.clone();
        bad.version = 99;
        assert!(ShapeModel::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }
}
