//! Client for force providers served over HTTP.
//!
//! `POST /evaluate` with `{"elements": [..], "positions": [[x, y, z], ..]}`
//! answers `{"forces": [[fx, fy, fz], ..], "sigma_hint": number | null}`.
//! Units are Å; unknown fields are ignored.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{GpffError, Result};
use crate::geometry::{Coords, Structure};
use crate::provider::{ForceEvaluation, ForceProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub elements: Vec<String>,
    pub positions: Coords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub forces: Coords,
    #[serde(default)]
    pub sigma_hint: Option<f64>,
}

impl From<&Structure> for EvaluateRequest {
    fn from(s: &Structure) -> Self {
        EvaluateRequest {
            elements: s.elements.clone(),
            positions: s.positions.clone(),
        }
    }
}

impl From<ForceEvaluation> for EvaluateResponse {
    fn from(e: ForceEvaluation) -> Self {
        EvaluateResponse {
            forces: e.forces,
            sigma_hint: e.sigma_hint,
        }
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
pub struct RemoteProvider {
    url: String,
    agent: ureq::Agent,
}

impl RemoteProvider {
    /// `endpoint` is a base URL (`http://host:port`) or the full
    /// `/evaluate` URL.
    pub fn new(endpoint: &str) -> Result<Self> {
        Self::with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: &str, timeout: Duration) -> Result<Self> {
        let base = endpoint.trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(GpffError::InvalidArgument(format!(
                "remote endpoint must be an http(s) URL, got '{endpoint}'"
            )));
        }
        let url = if base.ends_with("/evaluate") {
            base.to_string()
        } else {
            format!("{base}/evaluate")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteProvider { url, agent })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

/// Parses and checks a provider reply for a structure of `n_atoms`.
pub fn parse_response(body: &str, n_atoms: usize) -> Result<ForceEvaluation> {
    let resp: EvaluateResponse =
        serde_json::from_str(body).map_err(|e| GpffError::Schema(e.to_string()))?;
    if resp.forces.len() != n_atoms {
        return Err(GpffError::ShapeMismatch {
            expected: n_atoms,
            got: resp.forces.len(),
        });
    }
    if resp.forces.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GpffError::Schema("non-finite force component".into()));
    }
    Ok(ForceEvaluation {
        forces: resp.forces,
        sigma_hint: resp.sigma_hint,
        converged: true,
    })
}

impl ForceProvider for RemoteProvider {
    fn evaluate(&self, structure: &Structure) -> Result<ForceEvaluation> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EvaluateRequest::from(structure))
            .map_err(|e| GpffError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GpffError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GpffError::Transport(format!(
                "{} returned {status}: {}",
                self.url,
                body.chars().take(200).collect::<String>()
            )));
        }
        parse_response(&body, structure.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_normalization() {
        let r = RemoteProvider::new("http://127.0.0.1:9000/").unwrap();
        assert_eq!(r.url(), "http://127.0.0.1:9000/evaluate");
        let r = RemoteProvider::new("http://h/evaluate").unwrap();
        assert_eq!(r.url(), "http://h/evaluate");
        assert!(RemoteProvider::new("127.0.0.1:9000").is_err());
    }

    #[test]
    fn missing_field_is_named() {
        let err = parse_response(r#"{"force": []}"#, 2).unwrap_err();
        assert!(
            matches!(&err, GpffError::Schema(m) if m.contains("forces")),
            "{err}"
        );
    }

    #[test]
    fn wrong_count_is_shape_error() {
        let err = parse_response(r#"{"forces": [[0,0,0]], "sigma_hint": null}"#, 2).unwrap_err();
        assert!(matches!(
            err,
            GpffError::ShapeMismatch {
                expected: 2,
                got: 1
            }
        ));
    }

    #[test]
    fn unknown_fields_ignored() {
        let e =
            parse_response(r#"{"forces": [[1,2,3]], "sigma_hint": 0.5, "extra": 1}"#, 1).unwrap();
        assert_eq!(e.forces, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(e.sigma_hint, Some(0.5));
    }

    #[test]
    fn unreachable_is_transport_error() {
        let r = RemoteProvider::with_timeout("http://127.0.0.1:1", Duration::from_secs(2)).unwrap();
        let s = Structure::from_parts(&["H"], vec![[0.0; 3]]).unwrap();
        assert!(matches!(r.evaluate(&s), Err(GpffError::Transport(_))));
    }
}
