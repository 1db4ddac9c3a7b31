use serde::{Deserialize, Serialize};

use crate::geometry::Coords;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    ScheduleExhausted,
    Error,
}

/// One outer sampler step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    /// Provider calls so far, including this step's.
    pub nfe: usize,
    /// Noise level the step started from (scheduled, or estimated for
    /// adaptive samplers); absent for direct denoising.
    pub sigma: Option<f64>,
    /// Noise level read off the first force evaluation of the step.
    pub sigma_hat: Option<f64>,
    /// Estimate after removing injected churn (adaptive stochastic Heun).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_hat_corrected: Option<f64>,
    pub sigma_next: Option<f64>,
    pub ds: Option<f64>,
    pub max_force: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Coords>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrace {
    pub steps: Vec<TraceStep>,
    pub nfe: usize,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrajectoryTrace {
    pub(crate) fn new() -> Self {
        TrajectoryTrace {
            steps: Vec::new(),
            nfe: 0,
            termination: Termination::ScheduleExhausted,
            error: None,
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        TrajectoryTrace {
            steps: Vec::new(),
            nfe: 0,
            termination: Termination::Error,
            error: Some(message.into()),
        }
    }

    pub(crate) fn wants_snapshot(stride: usize, step: usize) -> bool {
        stride > 0 && step.is_multiple_of(stride)
    }

    /// `(nfe, σ̂)` pairs, one per outer step, where `nfe` counts provider
    /// calls up to and including the evaluation that produced `σ̂`.
    pub fn sigma_hat_series(&self) -> Vec<(usize, f64)> {
        let mut before = 0;
        let mut out = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            if let Some(h) = s.sigma_hat {
                out.push((before + 1, h));
            }
            before = s.nfe;
        }
        out
    }
}
