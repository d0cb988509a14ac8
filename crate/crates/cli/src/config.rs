//! JSON experiment configuration: schema-validated before any computation,
//! unknown keys rejected.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use davies_sim::chain::{self, Boundary, ChainHamiltonian};
use davies_sim::davies::{JumpOperator, RateFunction};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Gibbs,
    DaviesCheck,
    MixingScan,
    MlsiScan,
    QfCheck,
    SptCheck,
    OverlapScan,
    Detectability,
}

impl ExperimentKind {
    /// Experiments that build superoperators are capped at n = 7 by the
    /// desk-scale guard; state-only experiments at n = 11.
    pub fn superoperator_bound(&self) -> usize {
        match self {
            ExperimentKind::Gibbs | ExperimentKind::OverlapScan => 11,
            _ => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ising,
    Cluster,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub j: Option<f64>,
    #[serde(default)]
    pub h_z: Option<f64>,
    /// complex entries as [re, im] pairs, row major (custom models)
    #[serde(default)]
    pub local_term: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub range: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub site: usize,
    /// Pauli string starting at `site`, e.g. "X" or "ZXZ"
    pub paulis: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_probe_count")]
    pub count: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_probe_count() -> usize {
    20
}

fn default_seed() -> u64 {
    1
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { count: default_probe_count(), seed: default_seed() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub ell: usize,
    pub w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "tol_1e10")]
    pub fixed_point: f64,
    #[serde(default = "tol_1e10")]
    pub detailed_balance: f64,
    #[serde(default = "tol_1e10")]
    pub covariance: f64,
    #[serde(default = "tol_qf")]
    pub qf_slack: f64,
}

fn tol_1e10() -> f64 {
    1e-10
}

fn tol_qf() -> f64 {
    -1e-9
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            fixed_point: tol_1e10(),
            detailed_balance: tol_1e10(),
            covariance: tol_1e10(),
            qf_slack: tol_qf(),
        }
    }
}

fn default_boundary() -> Boundary {
    Boundary::Periodic
}

fn default_rate() -> RateFunction {
    RateFunction::Glauber
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub beta_list: Option<Vec<f64>>,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    #[serde(default = "default_rate")]
    pub rate_fn: RateFunction,
    #[serde(default)]
    pub jumps: Option<Vec<JumpSpec>>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub probes: Option<ProbeSpec>,
    #[serde(default)]
    pub geometry: Option<GeometrySpec>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| RunError::schema(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.n.is_none() && self.n_list.is_none() {
            return Err(RunError::schema("one of `n` or `n_list` is required".into()));
        }
        if self.n.is_some() && self.n_list.is_some() {
            return Err(RunError::schema("`n` and `n_list` are mutually exclusive".into()));
        }
        if self.beta.is_some() && self.beta_list.is_some() {
            return Err(RunError::schema("`beta` and `beta_list` are mutually exclusive".into()));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 2.0) {
                return Err(RunError::schema(format!("epsilon {eps} outside (0, 2)")));
            }
        }
        match self.model.kind {
            ModelKind::Custom => {
                if self.model.local_term.is_none() || self.model.range.is_none() {
                    return Err(RunError::schema(
                        "custom models need `local_term` and `range`".into(),
                    ));
                }
            }
            _ => {
                if self.model.local_term.is_some() || self.model.range.is_some() {
                    return Err(RunError::schema(
                        "`local_term`/`range` only apply to custom models".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_values(&self) -> Vec<usize> {
        match (&self.n, &self.n_list) {
            (Some(n), _) => vec![*n],
            (_, Some(l)) => l.clone(),
            _ => unreachable!("validated"),
        }
    }

    pub fn beta_values(&self) -> Vec<f64> {
        match (&self.beta, &self.beta_list) {
            (Some(b), _) => vec![*b],
            (_, Some(l)) => l.clone(),
            _ => vec![1.0],
        }
    }

    pub fn probe_spec(&self) -> ProbeSpec {
        self.probes.clone().unwrap_or_default()
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tolerances.clone().unwrap_or_default()
    }

    pub fn build_chain(&self, n: usize) -> Result<Arc<ChainHamiltonian>, RunError> {
        let chain = match self.model.kind {
            ModelKind::Ising => chain::build_ising(
                n,
                self.boundary,
                self.model.j.unwrap_or(1.0),
                self.model.h_z.unwrap_or(0.0),
            ),
            ModelKind::Cluster => chain::build_cluster(n, self.boundary),
            ModelKind::Custom => {
                let rows = self.model.local_term.as_ref().expect("validated");
                let range = self.model.range.expect("validated");
                let dim = rows.len();
                let mut m = Array2::zeros((dim, dim));
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != dim {
                        return Err(RunError::schema("local_term must be square".into()));
                    }
                    for (j, &[re, im]) in row.iter().enumerate() {
                        m[(i, j)] = C64::new(re, im);
                    }
                }
                chain::build_custom(n, self.boundary, m, range, true)
            }
        };
        chain.map(Arc::new).map_err(RunError::from_core)
    }

    /// The jump set: configured Pauli strings, or the one-site Pauli default.
    pub fn build_jumps(&self, n: usize) -> Result<Vec<JumpOperator>, RunError> {
        match &self.jumps {
            None => Ok(davies_sim::davies::default_pauli_jumps(n)),
            Some(list) => {
                if list.is_empty() {
                    return Err(RunError::schema("empty jump list".into()));
                }
                list.iter()
                    .map(|j| {
                        if j.site >= n {
                            return Err(RunError::schema(format!(
                                "jump site {} out of range for n={n}",
                                j.site
                            )));
                        }
                        JumpOperator::pauli_string(j.site, &j.paulis, n)
                            .map_err(RunError::from_core)
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::parse(
            r#"{"experiment": "gibbs", "model": {"kind": "ising"}, "n": 3, "beta": 0.5}"#,
        )
        .unwrap();
        assert_eq!(cfg.n_values(), vec![3]);
        assert_eq!(cfg.beta_values(), vec![0.5]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::parse(
            r#"{"experiment": "gibbs", "model": {"kind": "ising"}, "n": 3, "betta": 1.0}"#,
        )
        .unwrap_err();
        assert_eq!(err.code, 2);
    }

    #[test]
    fn missing_n_rejected() {
        let err = ExperimentConfig::parse(
            r#"{"experiment": "gibbs", "model": {"kind": "ising"}}"#,
        )
        .unwrap_err();
        assert_eq!(err.code, 2);
    }
}
