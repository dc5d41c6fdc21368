//! Machine-readable run reports.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::invariance::{DecreaseCheck, PiCertificate};
use crate::plant::ExcitationReport;
use crate::synthesis::{RobustReport, SolverSummary};

use super::gamma::GammaDerivation;

/// Row-major matrix with explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub kernel: String,
    pub lambda: f64,
    pub num_centers: usize,
    pub fit_residual: f64,
    pub gram_min_eigenvalue: f64,
    pub gram_max_eigenvalue: f64,
    pub gamma: Vec<f64>,
    pub gamma_source: String,
    pub gamma_derivation: Option<GammaDerivation>,
    pub coeffs: MatrixJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub excitation: ExcitationReport,
    pub delta: f64,
    pub sample_deltas: Vec<f64>,
    pub p: MatrixJson,
    pub y: MatrixJson,
    pub eps: f64,
    pub kbar: MatrixJson,
    pub khat: MatrixJson,
    pub residual: MatrixJson,
    pub residual_first_row_norm: f64,
    pub residual_norm: f64,
    pub objective: f64,
    pub closed_loop_linear: MatrixJson,
    pub spectral_radius: f64,
    pub lmi_min_eigenvalue: f64,
    pub cancellation_solve: SolverSummary,
    pub stability_solve: SolverSummary,
    pub robust: RobustReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub p: MatrixJson,
    pub p_source: String,
    pub certificate: PiCertificate,
    pub delta_ratio: f64,
    pub largest_certified_level: Option<f64>,
    pub decrease_check: Option<DecreaseCheck>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub trajectories: usize,
    pub steps: usize,
    pub level: f64,
    pub exits: usize,
    pub diverged: usize,
    pub max_final_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed: value <= threshold,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    pub fn flag(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            value: f64::from(u8::from(passed)),
            threshold: 1.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub data_source: String,
    pub seed: u64,
    pub fit: Option<FitSummary>,
    pub synthesis: Option<SynthesisSummary>,
    pub certificate: Option<CertificateSummary>,
    pub simulation: Option<SimulationSummary>,
    pub checks: Vec<Check>,
    pub passed: bool,
    /// Wall-clock milliseconds per stage; kept out of the JSON so reports are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, config_hash: String, data_source: String, seed: u64) -> Self {
        RunReport {
            command: command.to_string(),
            config_hash,
            data_source,
            seed,
            fit: None,
            synthesis: None,
            certificate: None,
            simulation: None,
            checks: Vec::new(),
            passed: true,
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, c: Check) {
        self.passed &= c.passed;
        self.checks.push(c);
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn human_summary(&self) -> String {
        let mut s = format!("{} [{}]\n", self.command, if self.passed { "ok" } else { "FAILED" });
        if let Some(f) = &self.fit {
            s += &format!(
                "  fit: {} centers, λ = {:e}, relative residual {:.3e}, Γ = {:?} ({})\n",
                f.num_centers, f.lambda, f.fit_residual, f.gamma, f.gamma_source
            );
        }
        if let Some(y) = &self.synthesis {
            s += &format!(
                "  synthesis: ‖Δ‖ = {:.4e}, K̄ = {:?}, residual row-1 norm {:.3e}, ρ(A_cl) = {:.4}, status {}\n",
                y.delta,
                y.kbar.data,
                y.residual_first_row_norm,
                y.spectral_radius,
                y.stability_solve.status
            );
        }
        if let Some(c) = &self.certificate {
            s += &format!(
                "  certificate: {} at γ = {} (𝒵 empty: {}, worst margin {:.4e})\n",
                c.certificate.verdict, c.certificate.gamma, c.certificate.z_empty, c.certificate.worst_margin
            );
        }
        if let Some(m) = &self.simulation {
            s += &format!(
                "  simulation: {} runs × {} steps, {} exits, {} diverged, max final |x| {:.3e}\n",
                m.trajectories, m.steps, m.exits, m.diverged, m.max_final_norm
            );
        }
        for c in &self.checks {
            s += &format!(
                "  [{}] {}: {:.4e} (threshold {:.1e}) {}\n",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.value,
                c.threshold,
                c.detail
            );
        }
        s
    }
}
