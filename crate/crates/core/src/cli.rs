//! Command-line frontend. Every command accepts `--config FILE` (a
//! [`RunConfig`] JSON document); flags given on the command line override
//! the file, which overrides built-in defaults.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{
    build_provider, read_structures, scaffold_prior, LoadedProvider, ProviderSpec, RunConfig,
};
use crate::error::GpffError;
use crate::geometry::{covariance3, Structure};
use crate::metrics::{ensemble_report, validity_report, EnsembleReport};
use crate::pes::LogNormalSigma;
use crate::provider::{simple_loss, OracleAlignment, ReferenceSet};
use crate::sampler::{
    run_batch, trajectory_rng, PriorSpec, SamplerKind, ShapeConstraint, Termination,
    TrajectoryTrace,
};
use crate::shape_model::{absolute_target, named_target, normalize_relative, ShapeModel};
use crate::xyz::to_xyz_string;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "gpff",
    version,
    about = "Generative pseudo-force-field sampling engine"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Sample structures and write XYZ frames plus JSON-lines traces.
    Generate(GenerateArgs),
    /// Validity, MPD divergence and shape-space report for an ensemble.
    Metrics(MetricsArgs),
    /// Fit the per-atom-count shape mixture.
    ShapeFit(ShapeFitArgs),
    /// Monte-Carlo estimate of the simplified force loss of a provider.
    LossAudit(LossAuditArgs),
    /// Run the session service.
    Serve(ServeArgs),
}

/// Sampler presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerName {
    #[value(name = "dd")]
    Dd,
    #[value(name = "sdd")]
    Sdd,
    #[value(name = "dd+shape")]
    DdShape,
    #[value(name = "sdd+shape")]
    SddShape,
    #[value(name = "dd+scaffold")]
    DdScaffold,
    #[value(name = "ancestral")]
    Ancestral,
    #[value(name = "heun")]
    Heun,
    #[value(name = "sheun")]
    Sheun,
}

impl SamplerName {
    pub fn kind(self) -> SamplerKind {
        match self {
            SamplerName::Ancestral => SamplerKind::Ancestral,
            SamplerName::Heun => SamplerKind::Heun,
            SamplerName::Sheun => SamplerKind::StochasticHeun,
            _ => SamplerKind::Dd,
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, SamplerName::Sdd | SamplerName::SddShape)
    }

    pub fn shaped(self) -> bool {
        matches!(self, SamplerName::DdShape | SamplerName::SddShape)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProviderArgs {
    /// Oracle reference structures (multi-frame XYZ).
    #[arg(long, value_name = "XYZ")]
    pub refs: Option<PathBuf>,
    /// Remote force provider base URL.
    #[arg(long, value_name = "URL", conflicts_with = "refs")]
    pub remote: Option<String>,
    /// Zero-force provider (baselines and audits).
    #[arg(long, conflicts_with_all = ["refs", "remote"])]
    pub zero_provider: bool,
    /// Fixed oracle noise level instead of inferring it.
    #[arg(long, value_name = "SIGMA")]
    pub oracle_sigma: Option<f64>,
    /// Superimpose references on the query (rotation and atom order).
    #[arg(long)]
    pub rigid: bool,
}

impl ProviderArgs {
    fn apply(&self, current: Option<ProviderSpec>) -> Option<ProviderSpec> {
        let mut spec = if let Some(refs) = &self.refs {
            Some(ProviderSpec::Oracle {
                refs: refs.clone(),
                sigma: None,
                alignment: OracleAlignment::None,
            })
        } else if let Some(endpoint) = &self.remote {
            Some(ProviderSpec::Remote {
                endpoint: endpoint.clone(),
                timeout_secs: None,
            })
        } else if self.zero_provider {
            Some(ProviderSpec::Zero)
        } else {
            current
        };
        if let Some(ProviderSpec::Oracle {
            sigma, alignment, ..
        }) = &mut spec
        {
            if self.oracle_sigma.is_some() {
                *sigma = self.oracle_sigma;
            }
            if self.rigid {
                *alignment = OracleAlignment::Rigid;
            }
        }
        spec
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(usage)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerName>,
    /// Maximum steps `N`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Noise-estimate-driven schedule (diffusion samplers).
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long)]
    pub n_target: Option<usize>,
    /// Share of injected churn removed from the noise estimate.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub f_max: Option<f64>,
    #[arg(long)]
    pub sigma_churn: Option<f64>,
    /// Named shape (rod, sphere, disc) or relative variances `a,b,c`.
    #[arg(long)]
    pub shape: Option<String>,
    /// Trace (Å²) that scales a relative shape target.
    #[arg(long)]
    pub shape_trace: Option<f64>,
    #[arg(long)]
    pub strictness: Option<f64>,
    /// Fitted shape model used to scale relative targets.
    #[arg(long, value_name = "JSON")]
    pub shape_model: Option<PathBuf>,
    /// Single-frame XYZ held fixed as the leading atoms.
    #[arg(long, value_name = "XYZ")]
    pub scaffold: Option<PathBuf>,
    /// Width of the isotropic prior (defaults to σ_max).
    #[arg(long)]
    pub prior_sigma: Option<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 3,
        allow_negative_numbers = true
    )]
    pub prior_center: Option<Vec<f64>>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub snapshot_stride: Option<usize>,
    /// Multi-frame XYZ output (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// JSON-lines trace output.
    #[arg(long)]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "XYZ")]
    pub generated: PathBuf,
    #[arg(long, value_name = "XYZ")]
    pub reference: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Trace file written by `generate`.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// JSON report path (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Directory for CSV tables.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ShapeFitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "XYZ")]
    pub structures: PathBuf,
    /// Mixture components.
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LossAuditArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// References to perturb (defaults to the oracle's).
    #[arg(long, value_name = "XYZ")]
    pub references: Option<PathBuf>,
    #[arg(long)]
    pub draws: Option<usize>,
    /// Fixed noise level; log-normal draws when absent.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Index-align noisy structures to their reference first.
    #[arg(long)]
    pub align: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long, value_name = "JSON")]
    pub shape_model: Option<PathBuf>,
    /// Directory for per-session JSON snapshots.
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|s| {
            eprintln!("{}", s.line());
            if s.failed > 0 {
                Err(CliError::Runtime(format!(
                    "{} trajectories failed",
                    s.failed
                )))
            } else {
                Ok(())
            }
        }),
        Command::Metrics(a) => cmd_metrics(a).map(|_| Ok(())),
        Command::ShapeFit(a) => cmd_shape_fit(a).map(|_| Ok(())),
        Command::LossAudit(a) => cmd_loss_audit(a).map(|r| {
            println!("{}", serde_json::to_string(&r).unwrap_or_default());
            Ok(())
        }),
        Command::Serve(a) => cmd_serve(a).map(|_| Ok(())),
    }
    .and_then(|r| r);
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn load_provider(spec: &Option<ProviderSpec>) -> CliResult<LoadedProvider> {
    let spec = spec
        .as_ref()
        .ok_or_else(|| usage("no force provider: give --refs, --remote or --zero-provider"))?;
    build_provider(spec).map_err(usage)
}

fn parse_relative(text: &str) -> CliResult<[f64; 3]> {
    if let Some(t) = named_target(text) {
        return Ok(t);
    }
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            usage(format!(
                "--shape expects rod, sphere, disc or a,b,c; got '{text}'"
            ))
        })?;
    let arr: [f64; 3] = parts
        .try_into()
        .map_err(|_| usage(format!("--shape needs three values, got '{text}'")))?;
    normalize_relative(arr).map_err(usage)
}

/// Everything `generate` needs after resolving config, flags and inputs.
pub struct GeneratePlan {
    pub config: RunConfig,
    pub provider: LoadedProvider,
    pub prior: PriorSpec,
    pub elements: Vec<String>,
}

pub fn plan_generate(a: &GenerateArgs) -> CliResult<GeneratePlan> {
    let mut cfg = a.common.load()?;
    cfg.provider = a.provider.apply(cfg.provider.take());
    if let Some(c) = a.count {
        cfg.count = c;
    }
    let s = &mut cfg.sampler;
    if let Some(name) = a.sampler {
        s.kind = name.kind();
        s.stochastic = name.stochastic();
        if !name.shaped() {
            s.shape = None;
        }
        if name == SamplerName::DdScaffold && a.scaffold.is_none() && cfg.scaffold.is_none() {
            return Err(usage("dd+scaffold needs --scaffold"));
        }
    }
    if let Some(v) = a.steps {
        s.steps = v;
    }
    if a.adaptive {
        s.adaptive = true;
    }
    if a.n_target.is_some() {
        s.n_target = a.n_target;
    }
    if let Some(v) = a.alpha {
        s.alpha = v;
    }
    if let Some(v) = a.f_max {
        s.f_max = v;
    }
    if let Some(v) = a.sigma_churn {
        s.churn.sigma_churn = v;
    }
    if let Some(v) = a.snapshot_stride {
        s.snapshot_stride = v;
    }
    let sp = &mut cfg.schedule;
    if let Some(v) = a.rho {
        sp.rho = v;
    }
    if let Some(v) = a.sigma_min {
        sp.sigma_min = v;
    }
    if let Some(v) = a.sigma_max {
        sp.sigma_max = v;
    }
    if a.scaffold.is_some() {
        cfg.scaffold = a.scaffold.clone();
    }
    if a.shape_model.is_some() {
        cfg.shape_model = a.shape_model.clone();
    }
    if a.output.is_some() {
        cfg.output = a.output.clone();
    }
    if a.traces.is_some() {
        cfg.traces = a.traces.clone();
    }
    if a.adaptive && cfg.sampler.kind == SamplerKind::Dd {
        return Err(usage("--adaptive applies to ancestral, heun and sheun"));
    }

    let provider = load_provider(&cfg.provider)?;
    let scaffold = match &cfg.scaffold {
        Some(p) => {
            let frames = read_structures(p).map_err(usage)?;
            Some(
                frames
                    .into_iter()
                    .next()
                    .expect("read_structures rejects empty files"),
            )
        }
        None => None,
    };
    let elements = cfg
        .elements
        .clone()
        .or_else(|| provider.references.first().map(|r| r.elements.clone()))
        .or_else(|| scaffold.as_ref().map(|s| s.elements.clone()))
        .ok_or_else(|| usage("cannot infer the element list: set `elements` in the config"))?;

    let shaped_name = a.sampler.is_some_and(SamplerName::shaped);
    if a.shape.is_some() || shaped_name {
        if a.shape.is_none() && cfg.sampler.shape.is_none() {
            return Err(usage("shaped samplers need --shape"));
        }
        if let Some(text) = &a.shape {
            let rel = parse_relative(text)?;
            let trace = shape_trace(a.shape_trace, &cfg, &provider.references, elements.len())?;
            cfg.sampler.shape = Some(ShapeConstraint {
                target: absolute_target(rel, trace),
                strictness: 1.0,
            });
        }
    }
    if let (Some(shape), Some(p)) = (&mut cfg.sampler.shape, a.strictness) {
        shape.strictness = p;
    }

    let free = match &cfg.prior {
        Some(p) if a.prior_sigma.is_none() && a.prior_center.is_none() => p.clone(),
        _ => {
            let center = match &a.prior_center {
                Some(v) => [v[0], v[1], v[2]],
                None => [0.0; 3],
            };
            PriorSpec::Isotropic {
                sigma: a.prior_sigma.unwrap_or(cfg.schedule.sigma_max),
                center,
            }
        }
    };
    let prior = match &scaffold {
        Some(s) => scaffold_prior(free, s, &elements).map_err(usage)?,
        None => free,
    };
    if let Some(mask) = prior.scaffold_mask() {
        cfg.sampler.scaffold = Some(mask);
    }
    cfg.validate().map_err(usage)?;
    cfg.sampler.validate(Some(elements.len())).map_err(usage)?;
    Ok(GeneratePlan {
        config: cfg,
        provider,
        prior,
        elements,
    })
}

fn shape_trace(flag: Option<f64>, cfg: &RunConfig, refs: &[Structure], n: usize) -> CliResult<f64> {
    if let Some(t) = flag {
        return if t > 0.0 {
            Ok(t)
        } else {
            Err(usage("--shape-trace must be positive"))
        };
    }
    if let Some(path) = &cfg.shape_model {
        let model = load_shape_model(path)?;
        let mut rng = trajectory_rng(cfg.seed, u64::MAX);
        return Ok(model
            .sample_cov(n, &mut rng)
            .map_err(usage)?
            .covariance
            .trace());
    }
    let traces: Vec<f64> = refs
        .iter()
        .filter(|r| r.len() == n)
        .map(|r| covariance3(r).trace())
        .collect();
    if traces.is_empty() {
        return Err(usage(
            "cannot scale the shape target: give --shape-trace or --shape-model",
        ));
    }
    Ok(traces.iter().sum::<f64>() / traces.len() as f64)
}

fn load_shape_model(path: &Path) -> CliResult<ShapeModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read shape model {}: {e}", path.display())))?;
    ShapeModel::from_json(&text).map_err(usage)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub count: usize,
    pub failed: usize,
    pub nfe_mean: f64,
    pub validity: f64,
    pub xyz: String,
    pub traces: String,
}

impl GenerateSummary {
    pub fn line(&self) -> String {
        format!(
            "generated {} of {} structures; mean NFE {:.2}; validity {:.4}",
            self.count - self.failed,
            self.count,
            self.nfe_mean,
            self.validity
        )
    }
}

fn trace_lines(plan: &GeneratePlan, traces: &[(usize, TrajectoryTrace)]) -> String {
    let cfg = &plan.config;
    let mut out = String::new();
    let header = serde_json::json!({
        "record": "header",
        "format": "gpff-trace",
        "version": 1,
        "seed": cfg.seed,
        "rng": "chacha20 seeded from the master seed, stream = trajectory index",
        "count": cfg.count,
        "sampler": cfg.sampler,
        "schedule": cfg.schedule,
        "prior": plan.prior,
        "elements": plan.elements,
    });
    let _ = writeln!(out, "{header}");
    for (i, t) in traces {
        for step in &t.steps {
            let mut v = serde_json::to_value(step).unwrap_or_default();
            if let Some(obj) = v.as_object_mut() {
                obj.insert("record".into(), "step".into());
                obj.insert("trajectory".into(), (*i).into());
            }
            let _ = writeln!(out, "{v}");
        }
        let summary = serde_json::json!({
            "record": "summary",
            "trajectory": i,
            "nfe": t.nfe,
            "termination": t.termination,
            "error": t.error,
        });
        let _ = writeln!(out, "{summary}");
    }
    out
}

/// Runs generation and writes the outputs named in the plan. The returned
/// summary carries the XYZ and trace text as written.
pub fn cmd_generate(a: &GenerateArgs) -> CliResult<GenerateSummary> {
    let plan = plan_generate(a)?;
    let cfg = &plan.config;
    let results = run_batch(
        plan.provider.provider.as_ref(),
        &cfg.sampler,
        &cfg.schedule,
        &plan.prior,
        &plan.elements,
        cfg.count,
        cfg.seed,
        cfg.jobs,
    );
    let mut frames = Vec::new();
    let mut traces = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                frames.push(s.structure.with_name(format!("trajectory-{i}")));
                traces.push((i, s.trace));
            }
            Err(e) => {
                log::error!("trajectory {i} failed: {e}");
                traces.push((i, TrajectoryTrace::failed(e.to_string())));
            }
        }
    }
    let failed = traces
        .iter()
        .filter(|(_, t)| t.termination == Termination::Error)
        .count();
    let ok: Vec<&TrajectoryTrace> = traces
        .iter()
        .map(|(_, t)| t)
        .filter(|t| t.termination != Termination::Error)
        .collect();
    let nfe_mean = if ok.is_empty() {
        0.0
    } else {
        ok.iter().map(|t| t.nfe as f64).sum::<f64>() / ok.len() as f64
    };
    let summary = GenerateSummary {
        count: cfg.count,
        failed,
        nfe_mean,
        validity: validity_report(&frames).fraction,
        xyz: to_xyz_string(&frames),
        traces: trace_lines(&plan, &traces),
    };
    match &cfg.output {
        Some(p) => {
            std::fs::write(p, &summary.xyz).map_err(|e| runtime(format!("{}: {e}", p.display())))?
        }
        None => {
            let _ = std::io::stdout().write_all(summary.xyz.as_bytes());
        }
    }
    if let Some(p) = &cfg.traces {
        std::fs::write(p, &summary.traces).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(summary)
}

/// Reads per-trajectory summaries from a trace file.
pub fn read_trace_summaries(path: &Path) -> CliResult<Vec<TrajectoryTrace>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| usage(format!("{} line {}: {e}", path.display(), no + 1)))?;
        if v["record"] == "summary" {
            let nfe = v["nfe"].as_u64().unwrap_or(0) as usize;
            let termination: Termination = serde_json::from_value(v["termination"].clone())
                .map_err(|e| usage(format!("{} line {}: {e}", path.display(), no + 1)))?;
            if termination != Termination::Error {
                let mut t = TrajectoryTrace::failed("");
                t.error = None;
                t.nfe = nfe;
                t.termination = termination;
                out.push(t);
            }
        }
    }
    Ok(out)
}

pub fn cmd_metrics(a: &MetricsArgs) -> CliResult<EnsembleReport> {
    let cfg = a.common.load()?;
    let bins = a.bins.unwrap_or(cfg.bins);
    let generated = read_structures(&a.generated).map_err(usage)?;
    let reference = read_structures(&a.reference).map_err(usage)?;
    let traces = match &a.traces {
        Some(p) => read_trace_summaries(p)?,
        None => Vec::new(),
    };
    let report = ensemble_report(&generated, &reference, &traces, bins).map_err(usage)?;
    let json = report.to_json();
    match &a.output {
        Some(p) => {
            std::fs::write(p, &json).map_err(|e| runtime(format!("{}: {e}", p.display())))?
        }
        None => println!("{json}"),
    }
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        for (name, body) in [
            ("mpd_histogram.csv", report.histogram_csv()),
            ("validity_vs_nfe.csv", report.validity_vs_nfe_csv()),
            ("shape_points.csv", report.shape_points_csv()),
        ] {
            std::fs::write(dir.join(name), body).map_err(runtime)?;
        }
    }
    Ok(report)
}

pub fn cmd_shape_fit(a: &ShapeFitArgs) -> CliResult<ShapeModel> {
    let cfg = a.common.load()?;
    let k = a.k.unwrap_or(cfg.components);
    let structures = read_structures(&a.structures).map_err(usage)?;
    let model = ShapeModel::fit(&structures, k, cfg.seed).map_err(runtime)?;
    std::fs::write(&a.output, model.to_json())
        .map_err(|e| runtime(format!("{}: {e}", a.output.display())))?;
    for (n, m) in &model.groups {
        log::info!("{n} atoms: {} components", m.components.len());
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LossAudit {
    pub loss: f64,
    pub draws: usize,
    pub n_atoms: usize,
    /// Expected loss of a zero-force provider, `12n`, before weight capping.
    pub zero_force_value: f64,
}

pub fn cmd_loss_audit(a: &LossAuditArgs) -> CliResult<LossAudit> {
    let mut cfg = a.common.load()?;
    cfg.provider = a.provider.apply(cfg.provider.take());
    let draws = a.draws.unwrap_or(cfg.draws);
    if draws == 0 {
        return Err(usage("--draws must be positive"));
    }
    let loaded = load_provider(&cfg.provider)?;
    let refs = match &a.references {
        Some(p) => read_structures(p).map_err(usage)?,
        None => loaded.references.clone(),
    };
    if refs.is_empty() {
        return Err(usage("loss audit needs references: give --references"));
    }
    let set = ReferenceSet::new(&refs).map_err(usage)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let sigmas: Vec<f64> = match a.sigma {
        Some(s) if s > 0.0 => vec![s; draws],
        Some(_) => return Err(usage("--sigma must be positive")),
        None => {
            let dist = LogNormalSigma::default();
            (0..draws)
                .map(|_| dist.sample(&mut rng))
                .filter(|s| *s > 0.0)
                .collect()
        }
    };
    let loss =
        simple_loss(loaded.provider.as_ref(), &set, &sigmas, &mut rng, a.align).map_err(runtime)?;
    Ok(LossAudit {
        loss,
        draws: sigmas.len(),
        n_atoms: set.n_atoms(),
        zero_force_value: 12.0 * set.n_atoms() as f64,
    })
}

pub fn cmd_serve(a: &ServeArgs) -> CliResult<()> {
    let mut cfg = a.common.load()?;
    cfg.provider = a.provider.apply(cfg.provider.take());
    if let Some(b) = &a.bind {
        cfg.bind = b.clone();
    }
    if a.shape_model.is_some() {
        cfg.shape_model = a.shape_model.clone();
    }
    let loaded = load_provider(&cfg.provider)?;
    let mut opts = crate::service::ServiceOptions::new(loaded.provider);
    opts.references = loaded.references;
    opts.schedule = cfg.schedule;
    opts.snapshot_dir = a.snapshot_dir.clone();
    if let Some(p) = &cfg.shape_model {
        opts.shape_model = Some(load_shape_model(p)?);
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .map_err(|e| usage(format!("cannot bind {}: {e}", cfg.bind)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        eprintln!("listening on http://{addr}");
        crate::service::serve(listener, opts).await.map_err(runtime)
    })
}

impl From<GpffError> for CliError {
    fn from(e: GpffError) -> Self {
        runtime(e)
    }
}
