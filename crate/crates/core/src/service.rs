//! Session-oriented HTTP/JSON service for iterative scaffold-guided design.
//!
//! A session holds a scaffold (fixed atoms), a prior for the free atoms, a
//! gallery of sampled candidates and the history of accepted steps.
//! Sampling runs as an asynchronous job that clients poll.
//!
//! | method | path | body |
//! |---|---|---|
//! | `POST` | `/sessions` | `{seed?}` |
//! | `GET`, `DELETE` | `/sessions/{id}` | |
//! | `PUT` | `/sessions/{id}/prior` | [`PriorRequest`] |
//! | `POST` | `/sessions/{id}/sample` | [`SampleRequest`], answers `202 {job}` |
//! | `GET` | `/jobs/{id}` | |
//! | `POST` | `/sessions/{id}/accept` | [`AcceptRequest`] |
//! | `POST` | `/sessions/{id}/undo` | |
//! | `POST` | `/evaluate` | force-provider wire protocol |
//! | `GET` | `/health` | |
//!
//! Structures travel as `{elements, positions}` in Å; errors as
//! `{code, message, field?}`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::GpffError;
use crate::geometry::{shape_point, sorted_eigen, ShapePoint, Structure};
use crate::metrics::{perceive_bonds, validity, Failure};
use crate::provider::ForceProvider;
use crate::remote::{EvaluateRequest, EvaluateResponse};
use crate::sampler::prior::cholesky3;
use crate::sampler::{
    build_prior, sample, trajectory_rng, PriorSpec, SamplerConfig, ShapeConstraint, Termination,
};
use crate::schedule::ScheduleParams;
use crate::shape_model::{absolute_target, named_target, normalize_relative, ShapeModel};

pub const DEFAULT_MAX_CANDIDATES: usize = 32;
pub const DEFAULT_STEPS: usize = 64;

/// Atom-type frequencies used when a client asks for randomized free atoms.
/// Roughly the composition of small organic molecules; configurable.
pub fn default_element_frequencies() -> BTreeMap<String, f64> {
    [
        ("H", 0.51),
        ("C", 0.35),
        ("N", 0.06),
        ("O", 0.079),
        ("F", 0.001),
    ]
    .into_iter()
    .map(|(e, f)| (e.to_string(), f))
    .collect()
}

#[derive(Clone)]
pub struct ServiceOptions {
    pub provider: Arc<dyn ForceProvider>,
    pub references: Vec<Structure>,
    pub shape_model: Option<ShapeModel>,
    pub schedule: ScheduleParams,
    pub max_candidates: usize,
    pub element_frequencies: BTreeMap<String, f64>,
    /// Worker threads per sampling job.
    pub jobs: usize,
    /// Sessions are written here as JSON after every change.
    pub snapshot_dir: Option<PathBuf>,
}

impl ServiceOptions {
    pub fn new(provider: Arc<dyn ForceProvider>) -> Self {
        ServiceOptions {
            provider,
            references: Vec::new(),
            shape_model: None,
            schedule: ScheduleParams::default(),
            max_candidates: DEFAULT_MAX_CANDIDATES,
            element_frequencies: default_element_frequencies(),
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            snapshot_dir: None,
        }
    }
}

/// `{elements, positions}` plus the perceived bond list for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructurePayload {
    pub elements: Vec<String>,
    pub positions: Vec<[f64; 3]>,
    #[serde(default)]
    pub bonds: Vec<(usize, usize)>,
}

impl From<&Structure> for StructurePayload {
    fn from(s: &Structure) -> Self {
        StructurePayload {
            elements: s.elements.clone(),
            positions: s.positions.clone(),
            bonds: perceive_bonds(s).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorRequest {
    /// Free-atom elements.
    pub elements: Option<Vec<String>>,
    /// Draw this many free-atom elements from the configured frequencies.
    pub randomize: Option<usize>,
    pub center: [f64; 3],
    /// Named shape: rod, sphere or disc.
    pub shape: Option<String>,
    /// Relative principal variances.
    pub relative: Option<[f64; 3]>,
    /// Absolute target covariance, Å².
    pub covariance: Option<[[f64; 3]; 3]>,
    /// Trace used to scale a relative target.
    pub trace: Option<f64>,
    /// Isotropic width when no shape is given.
    pub sigma: Option<f64>,
    pub strictness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPrior {
    pub elements: Vec<String>,
    pub center: [f64; 3],
    /// Covariance of the free-atom prior.
    pub covariance: [[f64; 3]; 3],
    /// Principal-variance target for the shape projection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
    pub strictness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub structure: StructurePayload,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_point: Option<ShapePoint>,
    pub nfe: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub previous: Option<Structure>,
    pub accepted: Structure,
    pub removed: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: Uuid,
    pub seed: u64,
    /// Sample requests served so far; with `seed` it fixes the next batch
    /// seed. Undo does not rewind it.
    pub draws: u64,
    pub scaffold: Option<Structure>,
    pub prior: Option<ResolvedPrior>,
    pub gallery: Vec<Candidate>,
    pub history: Vec<HistoryEntry>,
    pub job: Option<Uuid>,
    #[serde(skip)]
    running: bool,
}

impl Session {
    fn new(seed: u64) -> Self {
        Session {
            id: Uuid::new_v4(),
            seed,
            draws: 0,
            scaffold: None,
            prior: None,
            gallery: Vec::new(),
            history: Vec::new(),
            job: None,
            running: false,
        }
    }

    fn next_batch_seed(&mut self) -> u64 {
        let mut rng = trajectory_rng(self.seed, u64::MAX - self.draws);
        self.draws += 1;
        rng.next_u64()
    }

    /// Full element list for sampling: scaffold atoms first.
    pub fn sampling_elements(&self, prior: &ResolvedPrior) -> Vec<String> {
        let mut els: Vec<String> = self
            .scaffold
            .as_ref()
            .map(|s| s.elements.clone())
            .unwrap_or_default();
        els.extend(prior.elements.iter().cloned());
        els
    }

    /// Prior over all atoms: scaffold fixed, free atoms `~ N(center, Σ)`.
    pub fn prior_spec(&self, prior: &ResolvedPrior) -> PriorSpec {
        let free = PriorSpec::Shaped {
            covariance: prior.covariance,
            center: prior.center,
        };
        match &self.scaffold {
            None => free,
            Some(s) => PriorSpec::Mixed {
                fixed: s
                    .positions
                    .iter()
                    .map(|p| Some(*p))
                    .chain(prior.elements.iter().map(|_| None))
                    .collect(),
                free: Box::new(free),
            },
        }
    }

    /// Default sampler: stochastic direct denoising with the prior's shape
    /// target, `N = 64`, scaffold masked.
    pub fn default_sampler(&self, prior: &ResolvedPrior) -> SamplerConfig {
        SamplerConfig {
            shape: prior.target.map(|target| ShapeConstraint {
                target,
                strictness: prior.strictness,
            }),
            ..SamplerConfig::sdd(DEFAULT_STEPS)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: Uuid,
    pub session: Uuid,
    pub status: JobStatus,
    pub completed: usize,
    pub total: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleRequest {
    pub k: Option<usize>,
    pub sampler: Option<SamplerConfig>,
    /// Overrides the session's next batch seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AcceptRequest {
    pub index: usize,
    pub remove: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateRequest {
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
            field: None,
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            field: Some(field.into()),
            ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-field", message)
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not-found",
            format!("no {what} with id {id}"),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    opts: Arc<ServiceOptions>,
    sessions: Arc<Mutex<HashMap<Uuid, Arc<Mutex<Session>>>>>,
    jobs: Arc<Mutex<HashMap<Uuid, Arc<Mutex<Job>>>>>,
}

impl AppState {
    pub fn new(opts: ServiceOptions) -> Self {
        AppState {
            opts: Arc::new(opts),
            sessions: Arc::default(),
            jobs: Arc::default(),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::not_found("session", id))?;
        lock(&self.sessions)
            .get(&uuid)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    fn snapshot(&self, s: &Session) {
        if let Some(dir) = &self.opts.snapshot_dir {
            let path = dir.join(format!("{}.json", s.id));
            if let Err(e) =
                std::fs::write(&path, serde_json::to_string_pretty(s).unwrap_or_default())
            {
                log::warn!("cannot write session snapshot {}: {e}", path.display());
            }
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Resolves a prior request against the session and service options.
pub fn resolve_prior(
    req: &PriorRequest,
    session: &mut Session,
    opts: &ServiceOptions,
) -> ApiResult<ResolvedPrior> {
    let elements = match (&req.elements, req.randomize) {
        (Some(_), Some(_)) => {
            return Err(ApiError::field(
                "elements",
                "give either elements or randomize",
            ))
        }
        (Some(e), None) => e.clone(),
        (None, Some(n)) => {
            let (names, weights): (Vec<&String>, Vec<f64>) = opts
                .element_frequencies
                .iter()
                .map(|(k, v)| (k, *v))
                .unzip();
            let pick = WeightedIndex::new(&weights).map_err(|e| {
                ApiError::field("randomize", format!("bad element frequencies: {e}"))
            })?;
            let mut rng = trajectory_rng(session.seed, u64::MAX / 2 - session.draws);
            session.draws += 1;
            (0..n)
                .map(|_| names[pick.sample(&mut rng)].clone())
                .collect()
        }
        (None, None) => {
            return Err(ApiError::field(
                "elements",
                "free-atom elements are required",
            ))
        }
    };
    if elements.is_empty() && session.scaffold.is_none() {
        return Err(ApiError::field("elements", "need at least one atom"));
    }
    if req.center.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::field("center", "center must be finite"));
    }
    let strictness = req.strictness.unwrap_or(1.0);
    if !(strictness > 0.0) {
        return Err(ApiError::field("strictness", "strictness must be positive"));
    }
    let n_total = elements.len() + session.scaffold.as_ref().map_or(0, |s| s.len());

    let relative = match (&req.shape, req.relative) {
        (Some(_), Some(_)) => {
            return Err(ApiError::field("shape", "give either shape or relative"))
        }
        (Some(name), None) => Some(
            named_target(name)
                .ok_or_else(|| ApiError::field("shape", format!("unknown shape '{name}'")))?,
        ),
        (None, r) => r,
    };
    let (covariance, target) = match (req.covariance, relative, req.sigma) {
        (Some(c), None, None) => {
            let m = nalgebra::Matrix3::from_fn(|r, q| c[r][q]);
            cholesky3(&m).map_err(|_| {
                ApiError::field(
                    "covariance",
                    "covariance must be symmetric positive definite",
                )
            })?;
            (c, Some(sorted_eigen(&m).variances))
        }
        (None, Some(rel), None) => {
            let rel =
                normalize_relative(rel).map_err(|e| ApiError::field("relative", e.to_string()))?;
            let trace = match req.trace {
                Some(t) if t > 0.0 && t.is_finite() => t,
                Some(_) => return Err(ApiError::field("trace", "trace must be positive")),
                None => default_trace(session, opts, n_total)?,
            };
            let lam = absolute_target(rel, trace);
            let c = [[lam[0], 0.0, 0.0], [0.0, lam[1], 0.0], [0.0, 0.0, lam[2]]];
            (c, Some(lam))
        }
        (None, None, Some(s)) if s > 0.0 && s.is_finite() => {
            let v = s * s;
            ([[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]], None)
        }
        (None, None, Some(_)) => return Err(ApiError::field("sigma", "sigma must be positive")),
        (None, None, None) => {
            return Err(ApiError::field(
                "covariance",
                "give a covariance, a shape or a sigma",
            ))
        }
        _ => {
            return Err(ApiError::field(
                "covariance",
                "covariance, shape/relative and sigma are mutually exclusive",
            ))
        }
    };
    Ok(ResolvedPrior {
        elements,
        center: req.center,
        covariance,
        target,
        strictness,
    })
}

fn default_trace(session: &mut Session, opts: &ServiceOptions, n_atoms: usize) -> ApiResult<f64> {
    if let Some(model) = &opts.shape_model {
        let mut rng = trajectory_rng(session.seed, u64::MAX / 4 - session.draws);
        session.draws += 1;
        let draw = model
            .sample_cov(n_atoms, &mut rng)
            .map_err(|e| ApiError::field("trace", e.to_string()))?;
        return Ok(draw.covariance.trace());
    }
    let traces: Vec<f64> = opts
        .references
        .iter()
        .filter(|r| r.len() == n_atoms)
        .map(|r| crate::geometry::covariance3(r).trace())
        .collect();
    if traces.is_empty() {
        return Err(ApiError::field(
            "trace",
            "no shape model or same-size references to scale a relative target; give a trace",
        ));
    }
    Ok(traces.iter().sum::<f64>() / traces.len() as f64)
}

/// Runs `k` trajectories exactly as [`crate::sampler::run_batch`] would,
/// counting completions.
pub fn sample_batch(
    provider: &dyn ForceProvider,
    cfg: &SamplerConfig,
    params: &ScheduleParams,
    prior: &PriorSpec,
    elements: &[String],
    k: usize,
    seed: u64,
    jobs: usize,
    progress: &AtomicUsize,
) -> Vec<crate::error::Result<crate::sampler::Sample>> {
    let run = |i: usize| {
        let mut rng = trajectory_rng(seed, i as u64);
        let out = build_prior(prior, elements, &mut rng)
            .and_then(|x0| sample(&x0, provider, cfg, params, &mut rng));
        progress.fetch_add(1, Ordering::Relaxed);
        out
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| (0..k).into_par_iter().map(run).collect()),
        Err(_) => (0..k).map(run).collect(),
    }
}

fn candidate(sample: crate::sampler::Sample) -> Candidate {
    let v = validity(&sample.structure);
    Candidate {
        structure: StructurePayload::from(&sample.structure),
        valid: v.valid,
        failure: v.failure,
        shape_point: shape_point(&sample.structure).ok(),
        nfe: sample.trace.nfe,
        termination: sample.trace.termination,
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn create_session(
    State(st): State<AppState>,
    body: Option<Json<CreateRequest>>,
) -> (StatusCode, Json<Session>) {
    let seed = body
        .and_then(|Json(b)| b.seed)
        .unwrap_or_else(|| rand::rng().next_u64());
    let s = Session::new(seed);
    st.snapshot(&s);
    let out = s.clone();
    lock(&st.sessions).insert(s.id, Arc::new(Mutex::new(s)));
    (StatusCode::CREATED, Json(out))
}

async fn get_session(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Session>> {
    let s = st.session(&id)?;
    let snapshot = lock(&s).clone();
    Ok(Json(snapshot))
}

async fn delete_session(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    let uuid = Uuid::parse_str(&id).map_err(|_| ApiError::not_found("session", &id))?;
    lock(&st.sessions)
        .remove(&uuid)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found("session", &id))
}

async fn put_prior(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PriorRequest>,
) -> ApiResult<Json<Session>> {
    let s = st.session(&id)?;
    let mut guard = lock(&s);
    let prior = resolve_prior(&req, &mut guard, &st.opts)?;
    guard.prior = Some(prior);
    st.snapshot(&guard);
    Ok(Json(guard.clone()))
}

async fn post_sample(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<SampleRequest>>,
) -> ApiResult<(StatusCode, Json<Job>)> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let s = st.session(&id)?;
    let (job, work) = {
        let mut guard = lock(&s);
        if guard.running {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "job-running",
                "a sampling job is already running for this session",
            ));
        }
        let prior = guard
            .prior
            .clone()
            .ok_or_else(|| ApiError::field("prior", "set a prior before sampling"))?;
        let k = req.k.unwrap_or(3);
        if k == 0 || k > st.opts.max_candidates {
            return Err(ApiError::field(
                "k",
                format!("k must lie in [1, {}]", st.opts.max_candidates),
            ));
        }
        let elements = guard.sampling_elements(&prior);
        let spec = guard.prior_spec(&prior);
        let mut cfg = req
            .sampler
            .clone()
            .unwrap_or_else(|| guard.default_sampler(&prior));
        cfg.scaffold = spec.scaffold_mask();
        cfg.validate(Some(elements.len()))
            .map_err(|e| ApiError::field("sampler", e.to_string()))?;
        let seed = match req.seed {
            Some(seed) => seed,
            None => guard.next_batch_seed(),
        };
        let job = Job {
            id: Uuid::new_v4(),
            session: guard.id,
            status: JobStatus::Running,
            completed: 0,
            total: k,
            seed,
            candidates: Vec::new(),
            error: None,
        };
        guard.running = true;
        guard.job = Some(job.id);
        (job, (cfg, spec, elements, k, seed))
    };
    let handle = Arc::new(Mutex::new(job.clone()));
    lock(&st.jobs).insert(job.id, handle.clone());

    let st2 = st.clone();
    tokio::spawn(async move {
        let (cfg, spec, elements, k, seed) = work;
        let progress = Arc::new(AtomicUsize::new(0));
        let opts = st2.opts.clone();
        let counter = progress.clone();
        let poll = handle.clone();
        let ticker = tokio::spawn(async move {
            loop {
                tokio::time::sleep(std::time::Duration::from_millis(50)).await;
                lock(&poll).completed = counter.load(Ordering::Relaxed);
            }
        });
        let result = tokio::task::spawn_blocking(move || {
            sample_batch(
                opts.provider.as_ref(),
                &cfg,
                &opts.schedule,
                &spec,
                &elements,
                k,
                seed,
                opts.jobs,
                &progress,
            )
        })
        .await;
        ticker.abort();
        let outcome: std::result::Result<Vec<Candidate>, String> = match result {
            Err(e) => Err(format!("sampling task failed: {e}")),
            Ok(samples) => samples
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.map(candidate).map_err(|e| format!("trajectory {i}: {e}")))
                .collect(),
        };
        let mut session = lock(&s);
        session.running = false;
        let mut job = lock(&handle);
        job.completed = job.total;
        match outcome {
            Ok(cands) => {
                session.gallery = cands.clone();
                job.candidates = cands;
                job.status = JobStatus::Done;
            }
            Err(e) => {
                job.error = Some(e);
                job.status = JobStatus::Failed;
            }
        }
        st2.snapshot(&session);
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    let uuid = Uuid::parse_str(&id).map_err(|_| ApiError::not_found("job", &id))?;
    let handle = lock(&st.jobs)
        .get(&uuid)
        .cloned()
        .ok_or_else(|| ApiError::not_found("job", &id))?;
    let job = lock(&handle).clone();
    Ok(Json(job))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptResponse {
    pub session: Session,
    #[serde(default)]
    pub warnings: Vec<String>,
}

async fn post_accept(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<AcceptRequest>,
) -> ApiResult<Json<AcceptResponse>> {
    let s = st.session(&id)?;
    let mut guard = lock(&s);
    if guard.running {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "job-running",
            "wait for the sampling job",
        ));
    }
    let chosen = guard.gallery.get(req.index).ok_or_else(|| {
        ApiError::field(
            "index",
            format!(
                "index {} outside gallery of {}",
                req.index,
                guard.gallery.len()
            ),
        )
    })?;
    let n = chosen.structure.elements.len();
    let mut removed = req.remove.clone();
    removed.sort_unstable();
    removed.dedup();
    if let Some(bad) = removed.iter().find(|&&i| i >= n) {
        return Err(ApiError::field(
            "remove",
            format!("atom {bad} does not exist ({n} atoms)"),
        ));
    }
    if removed.len() == n {
        return Err(ApiError::field("remove", "cannot remove every atom"));
    }
    let warnings = removed
        .iter()
        .filter(|&&i| chosen.structure.elements[i] != "H")
        .map(|&i| {
            format!(
                "removed atom {i} is {}, not H",
                chosen.structure.elements[i]
            )
        })
        .collect();
    let keep = |i: &usize| removed.binary_search(i).is_err();
    let accepted = Structure::new(
        (0..n)
            .filter(keep)
            .map(|i| chosen.structure.elements[i].clone())
            .collect(),
        (0..n)
            .filter(keep)
            .map(|i| chosen.structure.positions[i])
            .collect(),
    )
    .map_err(|e: GpffError| ApiError::field("index", e.to_string()))?;
    let previous = guard.scaffold.replace(accepted.clone());
    guard.history.push(HistoryEntry {
        previous,
        accepted,
        removed,
    });
    guard.gallery.clear();
    st.snapshot(&guard);
    Ok(Json(AcceptResponse {
        session: guard.clone(),
        warnings,
    }))
}

async fn post_undo(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    let s = st.session(&id)?;
    let mut guard = lock(&s);
    let entry = guard
        .history
        .pop()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "empty-history", "nothing to undo"))?;
    guard.scaffold = entry.previous;
    guard.gallery.clear();
    st.snapshot(&guard);
    Ok(Json(guard.clone()))
}

async fn evaluate(
    State(st): State<AppState>,
    Json(req): Json<EvaluateRequest>,
) -> ApiResult<Json<EvaluateResponse>> {
    let s = Structure::new(req.elements, req.positions)
        .map_err(|e| ApiError::field("positions", e.to_string()))?;
    let provider = st.opts.provider.clone();
    let eval = tokio::task::spawn_blocking(move || provider.evaluate(&s))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "provider-error",
                e.to_string(),
            )
        })?;
    Ok(Json(eval.into()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/evaluate", post(evaluate))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/prior", put(put_prior))
        .route("/sessions/{id}/sample", post(post_sample))
        .route("/sessions/{id}/accept", post(post_accept))
        .route("/sessions/{id}/undo", post(post_undo))
        .route("/jobs/{id}", get(get_job))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, opts: ServiceOptions) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(opts)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
