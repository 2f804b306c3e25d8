//! Solver reports and their versioned JSON document.

use std::time::Duration;

use serde::Serialize;

use crate::certificate::Certificate;
use crate::linops::StiefelStack;

/// JSON schema version written into every report document.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gpm,
    BurerMonteiro,
}

/// Diagnostics that never fail a run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveNotes {
    pub degenerate_init_gap: bool,
    /// `(iteration, block)` pairs where a polar factor was not unique.
    pub degenerate_steps: Vec<(usize, usize)>,
    /// Iterations where the objective dropped by more than `1e-9 ‖C‖_F`.
    pub monotonicity_violations: Vec<usize>,
    /// `min_i λ_min(Λ_ii)` at each iterate (diagnostics mode only).
    pub min_block_eig_history: Vec<f64>,
    /// Backtracking halvings in retraction (Burer-Monteiro only).
    pub retraction_halvings: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    /// Gauge-fixed final iterate (block 1 is `[I_d | 0]`).
    pub solution: StiefelStack,
    pub iterations: usize,
    /// `‖S^{t+1}S^{t+1ᵀ} − S^tS^{tᵀ}‖_F` per step.
    pub residual_history: Vec<f64>,
    /// `d_F(S^{t+1}, S^t)` per step.
    pub step_distance_history: Vec<f64>,
    /// `⟨C, S^tS^{tᵀ}⟩` for `t = 0..=iterations`.
    pub objective_history: Vec<f64>,
    /// Riemannian gradient norms (Burer-Monteiro only).
    pub grad_norm_history: Vec<f64>,
    pub converged: bool,
    pub timed_out: bool,
    pub rate_estimate: Option<f64>,
    /// All iterates, when retained by the configuration.
    pub iterates: Vec<StiefelStack>,
    pub notes: SolveNotes,
    pub certificate: Option<Certificate>,
    pub runtime: Duration,
}

impl SolveReport {
    pub(crate) fn new(method: Method, n: usize, d: usize, p: usize) -> Self {
        Self {
            method,
            n,
            d,
            p,
            solution: StiefelStack::padded_identity(n, d, p),
            iterations: 0,
            residual_history: Vec::new(),
            step_distance_history: Vec::new(),
            objective_history: Vec::new(),
            grad_norm_history: Vec::new(),
            converged: false,
            timed_out: false,
            rate_estimate: None,
            iterates: Vec::new(),
            notes: SolveNotes::default(),
            certificate: None,
            runtime: Duration::ZERO,
        }
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }

    /// Singular values of the `nd × p` solution.
    pub fn singular_values_of_solution(&self) -> Vec<f64> {
        crate::linops::singular_values(self.solution.as_matrix()).unwrap_or_default()
    }

    pub fn to_document(&self) -> ReportDocument<'_> {
        let bm = self.method == Method::BurerMonteiro;
        ReportDocument {
            version: REPORT_VERSION,
            method: self.method,
            n: self.n,
            d: self.d,
            p: bm.then_some(self.p),
            iterations: self.iterations,
            converged: self.converged,
            timed_out: self.timed_out,
            final_objective: self.final_objective(),
            final_residual: self.final_residual(),
            rate_estimate: self.rate_estimate,
            runtime_ms: self.runtime.as_secs_f64() * 1e3,
            residual_history: &self.residual_history,
            step_distance_history: &self.step_distance_history,
            objective_history: &self.objective_history,
            grad_norm_history: bm.then_some(&self.grad_norm_history[..]),
            singular_values_of_s: bm.then(|| self.singular_values_of_solution()),
            solution: self
                .solution
                .blocks()
                .map(|b| {
                    let mut row_major = Vec::with_capacity(b.len());
                    for r in 0..b.nrows() {
                        row_major.extend(b.row(r).iter().copied());
                    }
                    row_major
                })
                .collect(),
            notes: &self.notes,
            certificate: self.certificate.as_ref(),
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&self.to_document())
    }
}

/// Serialized form of a [`SolveReport`].
#[derive(Debug, Serialize)]
pub struct ReportDocument<'a> {
    pub version: u32,
    pub method: Method,
    pub n: usize,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub timed_out: bool,
    pub final_objective: f64,
    pub final_residual: Option<f64>,
    pub rate_estimate: Option<f64>,
    pub runtime_ms: f64,
    pub residual_history: &'a [f64],
    pub step_distance_history: &'a [f64],
    pub objective_history: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm_history: Option<&'a [f64]>,
    #[serde(rename = "singular_values_of_S", skip_serializing_if = "Option::is_none")]
    pub singular_values_of_s: Option<Vec<f64>>,
    /// One row-major `d × p` block per cloud.
    pub solution: Vec<Vec<f64>>,
    pub notes: &'a SolveNotes,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<&'a Certificate>,
}
