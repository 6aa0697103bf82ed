//! JSON run reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alm::{Certificates, KktReport, Solution, SolveOptions, SolveStatus};
use crate::error::{Result, SdpError};
use crate::model::SdpProblem;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Solver configuration name, used to group runs in performance profiles.
    pub label: String,
    pub instance: String,
    pub class: String,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub m0: usize,
    pub m_ineq: usize,
    pub kkt: KktReport,
    pub time_secs: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub cg_iterations: usize,
    pub escapes: usize,
    pub certificates: Certificates,
    pub status: SolveStatus,
    /// `eta_max < options.tol`.
    pub success: bool,
    pub options: SolveOptions,
    pub seed: u64,
    /// Application metrics such as a rounded cut value.
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn from_solution(
        label: &str,
        instance: &str,
        class: &str,
        prob: &SdpProblem,
        sol: &Solution,
        opts: &SolveOptions,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            label: label.to_string(),
            instance: instance.to_string(),
            class: class.to_string(),
            n: prob.n(),
            p: sol.r.nrows(),
            m: prob.m(),
            m0: prob.m0(),
            m_ineq: prob.m_ineq(),
            kkt: sol.report.clone(),
            time_secs: sol.time_secs,
            outer_iterations: sol.outer_iterations,
            inner_iterations: sol.inner_iterations,
            cg_iterations: sol.cg_iterations,
            escapes: sol.escapes,
            certificates: sol.certificates.clone(),
            status: sol.status,
            success: sol.report.eta_max < opts.tol,
            options: opts.clone(),
            seed: opts.seed,
            extras: BTreeMap::new(),
        }
    }

    /// `eta_max` equals the largest of the components it is built from.
    pub fn eta_max_consistent(&self) -> bool {
        let k = &self.kkt;
        let mut e = k.eta_p.max(k.eta_z).max(k.eta_d).max(k.eta_k_star).max(k.eta_c1);
        for v in [k.eta_g, k.eta_c3].into_iter().flatten() {
            e = e.max(v);
        }
        e == k.eta_max
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(SdpError::Unsupported(format!(
                "report schema version {} (expected {SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
