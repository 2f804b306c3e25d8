//! Synthetic instances, Monte Carlo trials and phase-transition grids.

pub mod cli;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bm::{self, BmConfig};
use crate::certificate::{certify, CertifyOptions};
use crate::error::{Error, Result};
use crate::gpm::{self, GpmConfig, InitMode};
use crate::linops::{self, gaussian_matrix, random_orthogonal, StiefelStack};
use crate::model::{build_data_matrix, PointCloud, SyntheticInstance};

/// Default per-trial wall-clock cap.
pub const DEFAULT_TRIAL_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudModel {
    /// Columns i.i.d. uniform on `[-1, 1]^d`.
    UniformCube,
    /// Columns i.i.d. `N(0, I_d)`.
    StandardNormal,
}

impl CloudModel {
    pub fn name(self) -> &'static str {
        match self {
            CloudModel::UniformCube => "uniform_cube",
            CloudModel::StandardNormal => "standard_normal",
        }
    }
}

impl fmt::Display for CloudModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CloudModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_cube" | "uniform" => Ok(CloudModel::UniformCube),
            "standard_normal" | "normal" | "gaussian" => Ok(CloudModel::StandardNormal),
            other => Err(Error::InvalidArgument(format!("unknown cloud model `{other}`"))),
        }
    }
}

/// Parameters of one planted instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub model: CloudModel,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub sigma: f64,
    /// Draw shifts `μ_i ~ N(0, I_d)`; otherwise all shifts are zero.
    pub with_shifts: bool,
    /// Draw Haar-random `O_i`; otherwise `O_i = I_d`.
    pub haar: bool,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(model: CloudModel, n: usize, m: usize, d: usize, sigma: f64, seed: u64) -> Self {
        Self { model, n, m, d, sigma, with_shifts: false, haar: false, seed }
    }
}

/// Draws `A`, then `O_i`, then `μ_i`, then `W_i` from one stream seeded by `spec.seed`.
pub fn generate_instance(spec: &InstanceSpec) -> Result<SyntheticInstance> {
    let (n, m, d) = (spec.n, spec.m, spec.d);
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("need n >= 1 and d >= 1, got n={n}, d={d}")));
    }
    if m < d + 1 {
        return Err(Error::InvalidArgument(format!("need m >= d + 1, got m={m}, d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = match spec.model {
        CloudModel::UniformCube => DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..=1.0)),
        CloudModel::StandardNormal => gaussian_matrix(d, m, &mut rng),
    };
    let blocks: Vec<DMatrix<f64>> = (0..n)
        .map(|_| if spec.haar { random_orthogonal(d, &mut rng) } else { DMatrix::identity(d, d) })
        .collect();
    let rotations = StiefelStack::from_blocks(&blocks)?;
    let shifts: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            if spec.with_shifts {
                DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
            } else {
                DVector::zeros(d)
            }
        })
        .collect();
    let noise: Vec<DMatrix<f64>> = (0..n).map(|_| gaussian_matrix(d, m, &mut rng)).collect();
    SyntheticInstance::assemble(PointCloud::new(truth)?, rotations, shifts, spec.sigma, noise, spec.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialMethod {
    GpmSpectral,
    GpmRandom,
    /// Burer-Monteiro with `p` columns per block.
    Bm(usize),
}

impl fmt::Display for TrialMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrialMethod::GpmSpectral => f.write_str("gpm_spectral"),
            TrialMethod::GpmRandom => f.write_str("gpm_random"),
            TrialMethod::Bm(p) => write!(f, "bm({p})"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
    pub gpm_converged: bool,
    pub certified: bool,
    pub iterations: usize,
    pub df_to_truth: f64,
    pub runtime_ms: f64,
    pub timed_out: bool,
    /// Solver error message when the trial aborted.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrialOptions {
    pub timeout: Duration,
    pub certify: CertifyOptions,
    /// Iteration cap for GPM; `None` keeps the solver default.
    pub max_iter: Option<usize>,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self { timeout: DEFAULT_TRIAL_TIMEOUT, certify: CertifyOptions::with_margin(), max_iter: None }
    }
}

/// Seed used for the random initialization of a trial on an instance.
pub fn init_seed(instance_seed: u64) -> u64 {
    splitmix64(instance_seed ^ 0x5EED_1A17_0000_0001)
}

/// Solves, certifies and scores one instance. Solver errors make a failed
/// trial rather than an error.
pub fn run_trial(instance: &SyntheticInstance, method: TrialMethod, opts: &TrialOptions) -> TrialResult {
    let start = Instant::now();
    let observed = &instance.observed;
    let mut result = TrialResult {
        n: observed.n(),
        m: observed.m(),
        d: observed.d(),
        sigma: instance.sigma,
        seed: instance.seed,
        gpm_converged: false,
        certified: false,
        iterations: 0,
        df_to_truth: f64::NAN,
        runtime_ms: 0.0,
        timed_out: false,
        error: None,
    };
    if let Err(e) = trial_body(instance, method, opts, &mut result) {
        result.error = Some(e.to_string());
        result.certified = false;
    }
    result.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    result
}

fn trial_body(instance: &SyntheticInstance, method: TrialMethod, opts: &TrialOptions, out: &mut TrialResult) -> Result<()> {
    let c = instance.gram();
    let seed = init_seed(instance.seed);
    let (solution, converged, iterations, timed_out) = match method {
        TrialMethod::GpmSpectral | TrialMethod::GpmRandom => {
            let mut cfg = GpmConfig { seed, time_limit: Some(opts.timeout), ..Default::default() };
            if let Some(max_iter) = opts.max_iter {
                cfg.max_iter = max_iter;
            }
            let report = if method == TrialMethod::GpmSpectral {
                let data = if instance.has_shifts() {
                    let centered: Vec<PointCloud> = observed_centered(instance);
                    build_data_matrix(&crate::model::PointCloudSet::new(centered)?)
                } else {
                    build_data_matrix(&instance.observed)
                };
                gpm::solve(&c, &cfg, Some(&data), None)?
            } else {
                cfg.init = InitMode::Random;
                gpm::solve(&c, &cfg, None, None)?
            };
            (report.solution, report.converged, report.iterations, report.timed_out)
        }
        TrialMethod::Bm(p) => {
            let cfg = BmConfig { p: Some(p), seed, time_limit: Some(opts.timeout), ..Default::default() };
            let report = bm::solve_bm(&c, &cfg, None)?;
            let rounded = bm::round_to_orthogonal(&report.solution)?;
            (rounded.stack, report.converged, report.iterations, report.timed_out)
        }
    };
    out.gpm_converged = converged;
    out.iterations = iterations;
    out.timed_out = timed_out;
    out.df_to_truth = linops::distance(&solution, &instance.rotations)?;
    if converged {
        out.certified = certify(&c, &solution, &opts.certify)?.is_certified();
    }
    Ok(())
}

fn observed_centered(instance: &SyntheticInstance) -> Vec<PointCloud> {
    instance.observed.clouds().iter().map(crate::model::center).collect()
}

/// Monte Carlo grid over `(n, m, σ)` for one cloud model and dimension.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub cloud_model: CloudModel,
    pub d: usize,
    pub m_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub sigma_list: Vec<f64>,
    pub trials_per_cell: usize,
    pub base_seed: u64,
    pub with_shifts: bool,
    pub haar: bool,
    pub trial: TrialOptions,
}

impl PhaseGrid {
    pub fn new(cloud_model: CloudModel, d: usize, m_list: Vec<usize>, n_list: Vec<usize>, sigma_list: Vec<f64>) -> Self {
        Self {
            cloud_model,
            d,
            m_list,
            n_list,
            sigma_list,
            trials_per_cell: 20,
            base_seed: 0,
            with_shifts: false,
            haar: false,
            trial: TrialOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_list.is_empty() || self.n_list.is_empty() || self.sigma_list.is_empty() {
            return Err(Error::InvalidArgument("grid lists must be non-empty".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::InvalidArgument("trials_per_cell must be >= 1".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be >= 1".into()));
        }
        if let Some(&m) = self.m_list.iter().find(|&&m| m < self.d + 1) {
            return Err(Error::InvalidArgument(format!("m={m} must be >= d + 1")));
        }
        if self.n_list.contains(&0) {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if let Some(s) = self.sigma_list.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("sigma={s} must be finite and >= 0")));
        }
        Ok(())
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `base ⊕ h(n, m, σ, trial)` where `h` chains splitmix64 over the coordinates
/// (σ by its bit pattern).
pub fn cell_seed(base: u64, n: usize, m: usize, sigma: f64, trial: usize) -> u64 {
    let mut h = splitmix64(n as u64);
    h = splitmix64(h ^ m as u64);
    h = splitmix64(h ^ sigma.to_bits());
    h = splitmix64(h ^ trial as u64);
    base ^ h
}

/// One row of the phase table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub model: CloudModel,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub sigma: f64,
    pub trials: usize,
    pub successes: usize,
    pub mean_iters: f64,
    pub mean_df_truth: f64,
    pub timeouts: usize,
}

impl CellSummary {
    pub fn success_fraction(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Runs every trial of the grid in parallel and summarizes per cell, ordered
/// by `(n, m, σ)` as listed in the grid.
pub fn phase_diagram(grid: &PhaseGrid, method: TrialMethod) -> Result<Vec<CellSummary>> {
    Ok(phase_trials(grid, method)?.into_iter().map(|(summary, _)| summary).collect())
}

/// Like [`phase_diagram`] but also returns the individual trial results.
pub fn phase_trials(grid: &PhaseGrid, method: TrialMethod) -> Result<Vec<(CellSummary, Vec<TrialResult>)>> {
    grid.validate()?;
    let mut jobs = Vec::new();
    for (ni, &n) in grid.n_list.iter().enumerate() {
        for (mi, &m) in grid.m_list.iter().enumerate() {
            for (si, &sigma) in grid.sigma_list.iter().enumerate() {
                for trial in 0..grid.trials_per_cell {
                    jobs.push(((ni, mi, si), n, m, sigma, trial));
                }
            }
        }
    }
    let results: Vec<((usize, usize, usize), usize, Result<TrialResult>)> = jobs
        .into_par_iter()
        .map(|(key, n, m, sigma, trial)| {
            let spec = InstanceSpec {
                model: grid.cloud_model,
                n,
                m,
                d: grid.d,
                sigma,
                with_shifts: grid.with_shifts,
                haar: grid.haar,
                seed: cell_seed(grid.base_seed, n, m, sigma, trial),
            };
            let outcome = generate_instance(&spec).map(|inst| run_trial(&inst, method, &grid.trial));
            (key, trial, outcome)
        })
        .collect();

    let mut cells: BTreeMap<(usize, usize, usize), Vec<(usize, TrialResult)>> = BTreeMap::new();
    for (key, trial, outcome) in results {
        cells.entry(key).or_default().push((trial, outcome?));
    }
    Ok(cells
        .into_iter()
        .map(|((ni, mi, si), mut trials)| {
            trials.sort_by_key(|(t, _)| *t);
            let trials: Vec<TrialResult> = trials.into_iter().map(|(_, r)| r).collect();
            let count = trials.len();
            let finite: Vec<f64> = trials.iter().map(|t| t.df_to_truth).filter(|v| v.is_finite()).collect();
            let summary = CellSummary {
                model: grid.cloud_model,
                n: grid.n_list[ni],
                m: grid.m_list[mi],
                d: grid.d,
                sigma: grid.sigma_list[si],
                trials: count,
                successes: trials.iter().filter(|t| t.certified).count(),
                mean_iters: trials.iter().map(|t| t.iterations as f64).sum::<f64>() / count as f64,
                mean_df_truth: if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 },
                timeouts: trials.iter().filter(|t| t.timed_out).count(),
            };
            (summary, trials)
        })
        .collect())
}

/// Exact header of the phase CSV.
pub const PHASE_CSV_HEADER: &str = "model,n,m,d,sigma,trials,successes,mean_iters,mean_df_truth,timeouts";

pub fn write_phase_csv<W: std::io::Write>(rows: &[CellSummary], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    if rows.is_empty() {
        writer.write_record(PHASE_CSV_HEADER.split(',')).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn phase_csv(rows: &[CellSummary]) -> Result<String> {
    let mut buf = Vec::new();
    write_phase_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
}

/// Noise level where the success fraction first falls through 1/2, by
/// linear interpolation between grid points. `None` when the curve never
/// starts at or above 1/2 or never drops below it.
pub fn crossing_50(sigmas: &[f64], fractions: &[f64]) -> Option<f64> {
    if sigmas.len() != fractions.len() || sigmas.is_empty() || fractions[0] < 0.5 {
        return None;
    }
    for k in 1..sigmas.len() {
        let (f0, f1) = (fractions[k - 1], fractions[k]);
        if f0 >= 0.5 && f1 < 0.5 {
            let t = (f0 - 0.5) / (f0 - f1);
            return Some(sigmas[k - 1] + t * (sigmas[k] - sigmas[k - 1]));
        }
    }
    None
}
