//! Generalized power method `S ← 𝒫_n(C S)` with spectral initialization.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linops::{self, BlockPolar, BlockStack, RotationStack, StiefelStack};
use crate::model::GramMatrix;
use crate::report::{Method, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Blockwise polar of the top-`d` left singular vectors of `D`.
    Spectral,
    /// Start at the planted truth (passed as the initial stack).
    GroundTruth,
    /// Start at a caller-supplied stack.
    Provided,
    /// Blockwise polar of i.i.d. standard normal blocks drawn from `seed`.
    Random,
}

#[derive(Debug, Clone)]
pub struct GpmConfig {
    /// Stopping threshold on `‖S^{t+1}S^{t+1ᵀ} − S^tS^{tᵀ}‖_F`.
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitMode,
    pub seed: u64,
    /// Retain every iterate (needed by [`estimate_rate`]).
    pub keep_iterates: bool,
    /// Track `λ_min(Λ_ii)` along the trajectory and log objective decreases.
    pub diagnostics: bool,
    /// Wall-clock cap; the run stops unconverged when exceeded.
    pub time_limit: Option<Duration>,
}

impl Default for GpmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            init: InitMode::Spectral,
            seed: 0,
            keep_iterates: false,
            diagnostics: false,
            time_limit: None,
        }
    }
}

impl GpmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Output of [`spectral_init`].
#[derive(Debug, Clone)]
pub struct SpectralInit {
    pub stack: RotationStack,
    /// The `d`-th and `(d+1)`-th singular values of `D` coincide.
    pub degenerate_gap: bool,
    pub degenerate_blocks: Vec<usize>,
}

/// `S⁰ = 𝒫_n(U)` with `U` the top-`d` left singular vectors of `data` (`nd × m`).
pub fn spectral_init(data: &DMatrix<f64>, d: usize) -> Result<SpectralInit> {
    let left = linops::top_d_left_singular(data, d)?;
    let u = BlockStack::from_matrix(left.u, d)?;
    let BlockPolar { stack, degenerate_blocks, .. } = linops::polar_blockwise(&u)?;
    Ok(SpectralInit { stack, degenerate_gap: left.degenerate_gap, degenerate_blocks })
}

/// One power step `𝒫_n(C S)`.
pub fn gpm_step(c: &GramMatrix, s: &RotationStack) -> Result<BlockPolar> {
    linops::polar_blockwise(&c.apply(s)?)
}

/// Normalized distance `d_F(S, Z)/√(nd)` to a known truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonDiagnostic {
    pub epsilon_hat: f64,
}

pub fn epsilon_hat(s: &StiefelStack, truth: &StiefelStack) -> Result<EpsilonDiagnostic> {
    let dist = linops::distance(s, truth)?;
    Ok(EpsilonDiagnostic { epsilon_hat: dist / ((s.n() * s.d()) as f64).sqrt() })
}

/// Right-multiplies by an orthogonal `p × p` matrix so that block 1 becomes `[I_d | 0]`.
pub fn gauge_fix(s: &StiefelStack) -> StiefelStack {
    let (d, p) = (s.d(), s.p());
    let first = s.block(0).clone_owned();
    let q = if p == d {
        first.transpose()
    } else {
        orthonormal_completion(&first)
    };
    let fixed = s.rotate(&q);
    let mut data = fixed.into_stack().into_matrix();
    let mut head = data.rows_mut(0, d);
    head.fill(0.0);
    for k in 0..d {
        head[(k, k)] = 1.0;
    }
    StiefelStack::from_unchecked(BlockStack::from_matrix(data, d).expect("shape preserved"))
}

/// `[Sᵀ | N]` with `N` an orthonormal basis of the complement of the rows of `S`.
fn orthonormal_completion(s: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, p) = s.shape();
    let projector = DMatrix::<f64>::identity(p, p) - s.transpose() * s;
    let eig = ((&projector + projector.transpose()) * 0.5).symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut q = DMatrix::zeros(p, p);
    q.columns_mut(0, d).copy_from(&s.transpose());
    for (k, &idx) in order.iter().take(p - d).enumerate() {
        q.column_mut(d + k).copy_from(&eig.eigenvectors.column(idx));
    }
    q
}

/// Runs the power iteration from the configured initialization.
///
/// `data` is the stacked `nd × m` data matrix (required for spectral init);
/// `initial` is required for `GroundTruth` and `Provided`.
pub fn solve(
    c: &GramMatrix,
    config: &GpmConfig,
    data: Option<&DMatrix<f64>>,
    initial: Option<&RotationStack>,
) -> Result<SolveReport> {
    config.validate()?;
    let start = Instant::now();
    let (n, d) = (c.n(), c.d());
    let mut report = SolveReport::new(Method::Gpm, n, d, d);

    let s0 = match config.init {
        InitMode::Spectral => {
            let data = data.ok_or_else(|| Error::InvalidArgument("spectral init needs the data matrix".into()))?;
            if data.nrows() != n * d {
                return Err(Error::mismatch("data matrix rows", n * d, data.nrows()));
            }
            let init = spectral_init(data, d)?;
            report.notes.degenerate_init_gap = init.degenerate_gap;
            init.stack
        }
        InitMode::GroundTruth | InitMode::Provided => {
            let s = initial.ok_or_else(|| Error::InvalidArgument("init mode needs an initial stack".into()))?;
            if !s.is_square() {
                return Err(Error::mismatch("initial stack", "square blocks", format!("{}x{}", s.d(), s.p())));
            }
            c.check_stack(s)?;
            s.clone()
        }
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            StiefelStack::random(n, d, d, &mut rng)
        }
    };

    let c_norm = c.frobenius_norm();
    let mut s = s0;
    report.objective_history.push(c.objective(&s)?);
    if config.keep_iterates {
        report.iterates.push(s.clone());
    }

    for t in 0..config.max_iter {
        let step = gpm_step(c, &s)?;
        for &b in &step.degenerate_blocks {
            report.notes.degenerate_steps.push((t, b));
        }
        let next = step.stack;
        let residual = linops::gram_distance(next.as_matrix(), s.as_matrix());
        let objective = c.objective(&next)?;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("objective became non-finite at iteration {t}")));
        }
        if config.diagnostics {
            let prev = *report.objective_history.last().expect("non-empty");
            let min_eig = crate::certificate::min_lambda_block_eigenvalue(c, &s)?;
            report.notes.min_block_eig_history.push(min_eig);
            if objective < prev - 1e-9 * c_norm {
                report.notes.monotonicity_violations.push(t);
            }
        }
        report.residual_history.push(residual);
        report.step_distance_history.push(linops::distance(&next, &s)?);
        report.objective_history.push(objective);
        report.iterations = t + 1;
        s = next;
        if config.keep_iterates {
            report.iterates.push(s.clone());
        }
        if residual <= config.tol {
            report.converged = true;
            break;
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed() > limit {
                report.timed_out = true;
                break;
            }
        }
    }

    report.rate_estimate = if config.keep_iterates {
        estimate_rate(&report, &s).ok()
    } else {
        residual_rate(&report.residual_history)
    };
    report.solution = gauge_fix(&s);
    report.runtime = start.elapsed();
    Ok(report)
}

/// Iterations used by the rate fit.
const RATE_WINDOW: usize = 10;

/// Empirical contraction factor `ρ̂` from retained iterates.
///
/// Fits the least-squares slope of `log d_F(S^t, reference)` over the last
/// iterations still above the numerical floor and returns its exponential.
/// When the trajectory sits on the floor from the start, returns 0.
pub fn estimate_rate(report: &SolveReport, reference: &StiefelStack) -> Result<f64> {
    if report.iterates.len() < 3 {
        return Err(Error::TooFewIterations { needed: 3, have: report.iterates.len() });
    }
    let floor = 1e-12 * ((reference.n() * reference.d()) as f64).sqrt();
    let mut points = Vec::new();
    for (t, s) in report.iterates.iter().enumerate() {
        let dist = linops::distance(s, reference)?;
        if dist > floor {
            points.push((t as f64, dist.ln()));
        }
    }
    if points.len() < 2 {
        return Ok(0.0);
    }
    let tail = &points[points.len().saturating_sub(RATE_WINDOW)..];
    Ok(least_squares_slope(tail).exp())
}

fn residual_rate(history: &[f64]) -> Option<f64> {
    let points: Vec<(f64, f64)> = history
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0)
        .map(|(t, r)| (t as f64, r.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    Some(least_squares_slope(&points[points.len().saturating_sub(RATE_WINDOW)..]).exp())
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
