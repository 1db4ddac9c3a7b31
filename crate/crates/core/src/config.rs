//! Versioned JSON run configuration shared by the CLI and the service.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};
use crate::geometry::Structure;
use crate::provider::{ForceProvider, OracleAlignment, OracleMode, OracleProvider, ZeroProvider};
use crate::remote::RemoteProvider;
use crate::sampler::{PriorSpec, SamplerConfig};
use crate::schedule::ScheduleParams;
use crate::xyz::read_xyz_file;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderSpec {
    /// Mixture oracle over the frames of an XYZ file.
    Oracle {
        refs: PathBuf,
        /// Fixed σ; inferred from the geometry when absent.
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        alignment: OracleAlignment,
    },
    Remote {
        endpoint: String,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub provider: Option<ProviderSpec>,
    pub sampler: SamplerConfig,
    pub schedule: ScheduleParams,
    /// Defaults to an isotropic prior of width `schedule.sigma_max`.
    pub prior: Option<PriorSpec>,
    /// Element list of generated structures; defaults to the first
    /// reference's.
    pub elements: Option<Vec<String>>,
    /// Single-frame XYZ whose atoms are held fixed as the leading atoms.
    pub scaffold: Option<PathBuf>,
    pub shape_model: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub jobs: usize,
    pub output: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    /// Histogram bins for ensemble metrics.
    pub bins: usize,
    /// Monte-Carlo draws for the loss audit.
    pub draws: usize,
    /// Mixture components for shape-model fitting.
    pub components: usize,
    /// Listen address of the session service.
    pub bind: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            provider: None,
            sampler: SamplerConfig::default(),
            schedule: ScheduleParams::default(),
            prior: None,
            elements: None,
            scaffold: None,
            shape_model: None,
            count: 1,
            seed: 0,
            jobs: 1,
            output: None,
            traces: None,
            bins: crate::metrics::DEFAULT_BINS,
            draws: 10_000,
            components: crate::shape_model::DEFAULT_COMPONENTS,
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(GpffError::InvalidArgument(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GpffError::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(GpffError::InvalidArgument(
                "count must be at least 1".into(),
            ));
        }
        self.schedule.validate()?;
        self.sampler.validate(None)
    }
}

/// A built provider plus the references it was built from, if any.
pub struct LoadedProvider {
    pub provider: Arc<dyn ForceProvider>,
    pub references: Vec<Structure>,
}

pub fn read_structures(path: &Path) -> Result<Vec<Structure>> {
    if !path.exists() {
        return Err(GpffError::InvalidArgument(format!(
            "file not found: {}",
            path.display()
        )));
    }
    let frames = read_xyz_file(path)?;
    if frames.is_empty() {
        return Err(GpffError::InvalidArgument(format!(
            "{} contains no frames",
            path.display()
        )));
    }
    Ok(frames)
}

pub fn build_provider(spec: &ProviderSpec) -> Result<LoadedProvider> {
    match spec {
        ProviderSpec::Oracle {
            refs,
            sigma,
            alignment,
        } => {
            let references = read_structures(refs)?;
            let mode = match sigma {
                Some(s) => OracleMode::FixedSigma(*s),
                None => OracleMode::SigmaAgnostic,
            };
            let oracle =
                OracleProvider::from_structures(&references, mode)?.with_alignment(*alignment);
            Ok(LoadedProvider {
                provider: Arc::new(oracle),
                references,
            })
        }
        ProviderSpec::Remote {
            endpoint,
            timeout_secs,
        } => {
            let timeout = timeout_secs.map_or(crate::remote::DEFAULT_TIMEOUT, Duration::from_secs);
            Ok(LoadedProvider {
                provider: Arc::new(RemoteProvider::with_timeout(endpoint, timeout)?),
                references: Vec::new(),
            })
        }
        ProviderSpec::Zero => Ok(LoadedProvider {
            provider: Arc::new(ZeroProvider),
            references: Vec::new(),
        }),
    }
}

/// Prior with the scaffold atoms fixed in front: the scaffold's elements
/// must equal the leading entries of `elements`.
pub fn scaffold_prior(
    free: PriorSpec,
    scaffold: &Structure,
    elements: &[String],
) -> Result<PriorSpec> {
    let m = scaffold.len();
    if m > elements.len() || scaffold.elements[..] != elements[..m] {
        return Err(GpffError::ElementMismatch(format!(
            "scaffold elements {:?} are not a prefix of {:?}",
            scaffold.elements, elements
        )));
    }
    if matches!(free, PriorSpec::Mixed { .. }) {
        return Err(GpffError::InvalidArgument(
            "scaffold prior cannot wrap a mixed prior".into(),
        ));
    }
    let fixed = (0..elements.len())
        .map(|i| scaffold.positions.get(i).copied())
        .collect();
    Ok(PriorSpec::Mixed {
        fixed,
        free: Box::new(free),
    })
}
