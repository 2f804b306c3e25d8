//! Burer-Monteiro factorization on `St(d, p)^n`.
//!
//! Riemannian gradient ascent with a polar retraction, first- and
//! second-order criticality measures, and the noise quantities that govern
//! the benign-landscape condition.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gpm::gauge_fix;
use crate::linops::{self, gaussian_matrix, BlockStack, StiefelStack};
use crate::model::{GramMatrix, SyntheticInstance};
use crate::report::{Method, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// Armijo backtracking. `initial` defaults to `1/‖C‖`.
    Backtracking { beta: f64, c: f64, initial: Option<f64> },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking { beta: 0.5, c: 1e-4, initial: None }
    }
}

#[derive(Debug, Clone)]
pub struct BmConfig {
    /// Number of columns per block; defaults to `2d + 1`.
    pub p: Option<usize>,
    pub step: StepRule,
    /// Stop once `‖grad‖_F ≤ grad_tol · ‖C‖_F`.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub time_limit: Option<Duration>,
}

impl Default for BmConfig {
    fn default() -> Self {
        Self {
            p: None,
            step: StepRule::default(),
            grad_tol: 1e-8,
            max_iter: 5000,
            seed: 0,
            time_limit: None,
        }
    }
}

impl BmConfig {
    pub fn p_for(&self, d: usize) -> usize {
        self.p.unwrap_or(2 * d + 1)
    }
}

/// Euclidean gradient of `⟨C, SSᵀ⟩`: block `i` is `2 Σ_j C_ij S_j`.
pub fn euclidean_gradient(c: &GramMatrix, s: &BlockStack) -> Result<BlockStack> {
    let cs = c.apply(s)?;
    BlockStack::from_matrix(cs.into_matrix() * 2.0, s.d())
}

/// Orthogonal projection onto the tangent space at `s_i`: `G − ½(G s_iᵀ + s_i Gᵀ) s_i`.
pub fn tangent_project(s_i: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (g * s_i.transpose() + s_i * g.transpose()) * 0.5;
    g - sym * s_i
}

/// Blockwise [`tangent_project`].
pub fn project_stack(s: &BlockStack, g: &BlockStack) -> BlockStack {
    let blocks: Vec<DMatrix<f64>> = (0..s.n())
        .map(|i| tangent_project(&s.block(i).clone_owned(), &g.block(i).clone_owned()))
        .collect();
    BlockStack::from_blocks(&blocks).expect("consistent blocks")
}

/// First-order residual, blockwise
/// `Σ_j C_ij S_j − ½ Σ_j (S_i S_jᵀ C_ji + C_ij S_j S_iᵀ) S_i`.
///
/// This is half the tangent projection of the Euclidean gradient.
pub fn riemannian_gradient(c: &GramMatrix, s: &BlockStack) -> Result<BlockStack> {
    let cs = c.apply(s)?;
    let blocks: Vec<DMatrix<f64>> = (0..s.n())
        .map(|i| {
            let x = cs.block(i);
            let si = s.block(i);
            // Σ_j S_i S_jᵀ C_ji = S_i [CS]_iᵀ since C_ji = C_ijᵀ.
            let sym = si * x.transpose() + x * si.transpose();
            x - sym * si * 0.5
        })
        .collect();
    BlockStack::from_blocks(&blocks)
}

/// Polar retraction outcome.
#[derive(Debug, Clone)]
pub struct Retraction {
    pub stack: StiefelStack,
    /// Step actually taken (smaller than requested after halvings).
    pub step: f64,
    pub halvings: usize,
}

const MAX_RETRACTION_HALVINGS: usize = 60;

/// `𝒫(S_i + step·T_i)` blockwise; rank-deficient blocks halve the step.
pub fn retract(s: &StiefelStack, t: &BlockStack, step: f64) -> Result<Retraction> {
    if !(step >= 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("retraction step must be finite and >= 0, got {step}")));
    }
    if t.n() != s.n() || t.d() != s.d() || t.p() != s.p() {
        return Err(Error::mismatch("retract direction", format!("{}x{}x{}", s.n(), s.d(), s.p()), format!("{}x{}x{}", t.n(), t.d(), t.p())));
    }
    if step == 0.0 {
        return Ok(Retraction { stack: s.clone(), step, halvings: 0 });
    }
    let mut h = step;
    for halvings in 0..=MAX_RETRACTION_HALVINGS {
        let moved = BlockStack::from_matrix(s.as_matrix() + t.as_matrix() * h, s.d())?;
        let pol = linops::polar_blockwise(&moved)?;
        if pol.degenerate_blocks.is_empty() {
            return Ok(Retraction { stack: pol.stack, step: h, halvings });
        }
        h *= 0.5;
    }
    Err(Error::Numerical("retraction stayed rank deficient after repeated halving".into()))
}

/// Riemannian gradient ascent from `init` (or a random stack drawn from `config.seed`).
pub fn solve_bm(c: &GramMatrix, config: &BmConfig, init: Option<&StiefelStack>) -> Result<SolveReport> {
    let start = Instant::now();
    let (n, d) = (c.n(), c.d());
    let p = config.p_for(d);
    if p < d {
        return Err(Error::InvalidArgument(format!("p={p} must be >= d={d}")));
    }
    if config.max_iter == 0 || !(config.grad_tol >= 0.0) {
        return Err(Error::InvalidArgument("max_iter must be >= 1 and grad_tol >= 0".into()));
    }
    let mut s = match init {
        Some(s0) => {
            c.check_stack(s0)?;
            if s0.p() != p {
                return Err(Error::mismatch("initial stack columns", p, s0.p()));
            }
            s0.clone()
        }
        None => StiefelStack::random(n, d, p, &mut ChaCha8Rng::seed_from_u64(config.seed)),
    };

    let c_norm = c.frobenius_norm();
    let stop = config.grad_tol * c_norm;
    let (mut eta, beta, armijo) = match config.step {
        StepRule::Fixed(eta) => {
            if !(eta > 0.0) {
                return Err(Error::InvalidArgument(format!("fixed step must be > 0, got {eta}")));
            }
            (eta, 1.0, None)
        }
        StepRule::Backtracking { beta, c: suff, initial } => {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")));
            }
            let eta0 = initial.unwrap_or_else(|| 1.0 / c.spectral_norm().max(f64::MIN_POSITIVE));
            (eta0, beta, Some((suff, eta0)))
        }
    };

    let mut report = SolveReport::new(Method::BurerMonteiro, n, d, p);
    let mut f = c.objective(&s)?;
    report.objective_history.push(f);
    let mut grow = true;

    for t in 0..config.max_iter {
        let g = riemannian_gradient(c, &s)?;
        let gnorm = g.as_matrix().norm();
        report.grad_norm_history.push(gnorm);
        if !gnorm.is_finite() {
            return Err(Error::Numerical(format!("gradient became non-finite at iteration {t}")));
        }
        if gnorm <= stop {
            report.converged = true;
            break;
        }

        let (next, f_next) = match armijo {
            None => {
                let r = retract(&s, &g, eta)?;
                report.notes.retraction_halvings += r.halvings;
                let fv = c.objective(&r.stack)?;
                (r.stack, fv)
            }
            Some((suff, eta0)) => {
                // directional derivative along g is ⟨2·g, g⟩
                let slope = 2.0 * gnorm * gnorm;
                let mut trial = if grow { (eta / beta).min(1e6 * eta0) } else { eta.min(eta0) };
                // objective differences below this are rounding noise
                let floor = 64.0 * f64::EPSILON * f.abs();
                loop {
                    let r = retract(&s, &g, trial)?;
                    report.notes.retraction_halvings += r.halvings;
                    let fv = c.objective(&r.stack)?;
                    let target = f + suff * r.step * slope;
                    if fv >= target {
                        eta = r.step;
                        grow = true;
                        break (r.stack, fv);
                    }
                    if r.step <= eta0 && fv >= target - floor {
                        eta = r.step;
                        grow = false;
                        break (r.stack, fv);
                    }
                    trial *= beta;
                    if trial < 1e-16 * eta0 {
                        // no ascent left at working precision
                        break (s.clone(), f);
                    }
                }
            }
        };
        if !f_next.is_finite() {
            return Err(Error::Numerical(format!("objective became non-finite at iteration {t}")));
        }
        report.iterations = t + 1;
        report.residual_history.push(linops::gram_distance(next.as_matrix(), s.as_matrix()));
        report.objective_history.push(f_next);
        let stalled = next == s;
        s = next;
        f = f_next;
        if stalled {
            break;
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed() > limit {
                report.timed_out = true;
                break;
            }
        }
    }
    report.solution = gauge_fix(&s);
    report.runtime = start.elapsed();
    Ok(report)
}

/// A `St(d, p)` solution compressed to `d × d` orthogonal blocks.
#[derive(Debug, Clone)]
pub struct Rounding {
    pub stack: StiefelStack,
    /// `σ_{d+1}` of the `nd × p` input; zero when `p = d`.
    pub sigma_d_plus_1: f64,
}

/// Projects `S` onto its top-`d` right singular subspace and rounds each block
/// to the nearest orthogonal matrix. Exact (up to gauge) when `rank S = d`.
pub fn round_to_orthogonal(s: &StiefelStack) -> Result<Rounding> {
    let d = s.d();
    let dec = linops::svd(s.as_matrix())?;
    let sigma_d_plus_1 = dec.singular_values.get(d).copied().unwrap_or(0.0);
    let v_d = dec.v_t.rows(0, d).transpose();
    let compressed = BlockStack::from_matrix(s.as_matrix() * v_d, d)?;
    let pol = linops::polar_blockwise(&compressed)?;
    Ok(Rounding { stack: pol.stack, sigma_d_plus_1 })
}

/// How random tangent directions are drawn for the second-order test.
#[derive(Debug, Clone)]
pub enum TangentSampler {
    /// Gaussian `d × p` blocks, tangent-projected per block.
    Isotropic,
    /// `Ṡ_i = Π^{-1/2} Φ (I_p − S_iᵀ S_i)` with one Gaussian `Φ` shared by all blocks.
    Weighted { pi: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct SecondOrderProbe {
    /// Minimum of `Σ_i⟨Λ_ii, Ṡ_iṠ_iᵀ⟩ − ⟨C, ṠṠᵀ⟩` over unit-norm samples.
    pub residual: f64,
    /// Sample achieving the minimum.
    pub direction: BlockStack,
    /// `min_i λ_min(Λ_ii)`.
    pub min_block_eig: f64,
}

/// Quadratic form of the second-order condition at `s` along `dot`.
pub fn second_order_form(c: &GramMatrix, s: &BlockStack, dot: &BlockStack) -> Result<f64> {
    let lambda = crate::certificate::build_lambda(c, s)?;
    Ok(second_order_form_with(c, &lambda, dot))
}

fn second_order_form_with(c: &GramMatrix, lambda: &[DMatrix<f64>], dot: &BlockStack) -> f64 {
    let diag: f64 = lambda
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let b = dot.block(i);
            let sym = (l + l.transpose()) * 0.5;
            sym.dot(&(b * b.transpose()))
        })
        .sum();
    let cross = dot.as_matrix().dot(&(c.as_matrix() * dot.as_matrix()));
    diag - cross
}

/// First-order criticality threshold for [`second_order_residual`], relative to `‖C‖_F`.
pub const FIRST_ORDER_GATE: f64 = 1e-6;

/// Sampled witness for the second-order condition.
pub fn second_order_residual(
    c: &GramMatrix,
    s: &StiefelStack,
    trials: usize,
    seed: u64,
    sampler: &TangentSampler,
) -> Result<SecondOrderProbe> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let grad_norm = riemannian_gradient(c, s)?.as_matrix().norm();
    let tolerance = FIRST_ORDER_GATE * c.frobenius_norm();
    if grad_norm > tolerance {
        return Err(Error::NotFirstOrderCritical { grad_norm, tolerance });
    }
    let lambda = crate::certificate::build_lambda(c, s)?;
    let mut min_block_eig = f64::INFINITY;
    for l in &lambda {
        min_block_eig = min_block_eig.min(linops::symmetric_eigenvalues(l)?[0]);
    }
    let weight = match sampler {
        TangentSampler::Isotropic => None,
        TangentSampler::Weighted { pi } => Some(inverse_sqrt_spd(pi)?),
    };

    let (n, d, p) = (s.n(), s.d(), s.p());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, BlockStack)> = None;
    for _ in 0..trials {
        let blocks: Vec<DMatrix<f64>> = match &weight {
            None => (0..n)
                .map(|i| tangent_project(&s.block(i).clone_owned(), &gaussian_matrix(d, p, &mut rng)))
                .collect(),
            Some(w) => {
                let phi = gaussian_matrix(d, p, &mut rng);
                let lifted = w * phi;
                (0..n)
                    .map(|i| {
                        let si = s.block(i);
                        &lifted * (DMatrix::<f64>::identity(p, p) - si.transpose() * si)
                    })
                    .collect()
            }
        };
        let mut dot = BlockStack::from_blocks(&blocks)?;
        let norm = dot.as_matrix().norm();
        if norm == 0.0 {
            // trivial tangent space (p = d = 1) or an unlucky draw
            let value = 0.0;
            if best.as_ref().is_none_or(|(v, _)| value < *v) {
                best = Some((value, dot));
            }
            continue;
        }
        dot = BlockStack::from_matrix(dot.into_matrix() / norm, d)?;
        let value = second_order_form_with(c, &lambda, &dot);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, dot));
        }
    }
    let (residual, direction) = best.expect("trials >= 1");
    Ok(SecondOrderProbe { residual, direction, min_block_eig })
}

/// Largest ambient dimension `nd·p` accepted by [`hessian_min_eigenvalue`].
pub const DENSE_HESSIAN_LIMIT: usize = 2000;

/// Smallest eigenvalue of the second-order form restricted to the tangent
/// space, by dense assembly. Debug path for small problems.
pub fn hessian_min_eigenvalue(c: &GramMatrix, s: &StiefelStack) -> Result<f64> {
    let (n, d, p) = (s.n(), s.d(), s.p());
    let ambient = n * d * p;
    if ambient > DENSE_HESSIAN_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "dense Hessian limited to nd*p <= {DENSE_HESSIAN_LIMIT}, got {ambient}"
        )));
    }
    let l_minus_c = crate::certificate::lambda_minus_c(c, s)?;
    // row-major vec: index (r, k) -> r * p + k; form is (Λ − C) ⊗ I_p
    let mut h = DMatrix::zeros(ambient, ambient);
    for r in 0..n * d {
        for q in 0..n * d {
            let v = l_minus_c[(r, q)];
            if v != 0.0 {
                for k in 0..p {
                    h[(r * p + k, q * p + k)] = v;
                }
            }
        }
    }

    let dp = d * p;
    let mut basis_cols: Vec<Vec<(usize, f64)>> = Vec::new();
    for i in 0..n {
        let si = s.block(i).clone_owned();
        let mut proj = DMatrix::zeros(dp, dp);
        for e in 0..dp {
            let mut unit = DMatrix::zeros(d, p);
            unit[(e / p, e % p)] = 1.0;
            let t = tangent_project(&si, &unit);
            for a in 0..d {
                for k in 0..p {
                    proj[(a * p + k, e)] = t[(a, k)];
                }
            }
        }
        let sym = (&proj + proj.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        for (idx, val) in eig.eigenvalues.iter().enumerate() {
            if *val > 0.5 {
                let v = eig.eigenvectors.column(idx);
                basis_cols.push((0..dp).map(|e| (i * dp + e, v[e])).collect());
            }
        }
    }
    if basis_cols.is_empty() {
        return Ok(0.0);
    }
    let mut basis = DMatrix::zeros(ambient, basis_cols.len());
    for (j, col) in basis_cols.iter().enumerate() {
        for &(r, v) in col {
            basis[(r, j)] = v;
        }
    }
    let restricted = basis.transpose() * h * &basis;
    Ok(linops::symmetric_eigenvalues(&restricted)?[0])
}

fn inverse_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("weight matrix is not positive definite".into()));
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

/// Signal `Π = AAᵀ` and noise `Δ̃` of the lifted model `C_ij = Π + Δ̃_ij`,
/// in the frame where every planted transform is the identity.
#[derive(Debug, Clone)]
pub struct NoiseLift {
    pub pi: DMatrix<f64>,
    pub pi_inv: DMatrix<f64>,
    /// `Δ̃_ij = Δ_i Aᵀ + A Δ_jᵀ + Δ_i Δ_jᵀ`, `nd × nd`.
    pub delta_tilde: DMatrix<f64>,
    /// `blkdiag(Π⁻¹) Δ̃`.
    pub delta_tilde_pi: DMatrix<f64>,
    /// `[Tr(Π⁻¹ Δ̃_ij)]_{ij}`, `n × n`.
    pub partial_trace: DMatrix<f64>,
    /// `Δ_i` rotated into the identity frame.
    pub noise: Vec<DMatrix<f64>>,
}

pub fn noise_lift(instance: &SyntheticInstance) -> Result<NoiseLift> {
    let a = instance.truth.points();
    let d = a.nrows();
    let pi = a * a.transpose();
    let pi_inv = pi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("AAᵀ is singular; Π⁻¹ undefined".into()))?
        .inverse();
    let noise: Vec<DMatrix<f64>> = instance
        .noise_blocks()
        .iter()
        .zip(instance.rotations.blocks())
        .map(|(delta, o)| o.transpose() * delta)
        .collect();
    let n = noise.len();
    let mut delta_tilde = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..n {
            let block = &noise[i] * a.transpose() + a * noise[j].transpose() + &noise[i] * noise[j].transpose();
            delta_tilde.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    let mut delta_tilde_pi = delta_tilde.clone();
    for i in 0..n {
        let rows = delta_tilde.rows(i * d, d).clone_owned();
        delta_tilde_pi.rows_mut(i * d, d).copy_from(&(&pi_inv * rows));
    }
    let partial_trace = linops::partial_trace(&delta_tilde, &pi_inv)?;
    Ok(NoiseLift { pi, pi_inv, delta_tilde, delta_tilde_pi, partial_trace, noise })
}

/// Benign-landscape condition for `St(d, p)^n`, evaluated on a planted instance.
#[derive(Debug, Clone, Serialize)]
pub struct LandscapeReport {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub kappa: f64,
    pub sigma_min_a: f64,
    /// `‖Δ̃^Π‖`.
    pub noise_lift_norm: f64,
    /// `‖Tr_d(Δ̃^Π)‖`.
    pub partial_trace_norm: f64,
    /// `n(p − 2d) / (8κ(p + d)√d)`.
    pub bound_rhs: f64,
    pub max_block_noise: f64,
    /// `σ_min(A) / (12κ)`.
    pub block_noise_bound: f64,
    pub satisfied: bool,
    /// `max(‖Tr_d(Δ̃^Π)‖ / ‖Δ̃^Π‖, 1)`.
    pub gamma: f64,
    /// `(2 + √5)(p + d)γ / (p − 2d)`; infinite for `p ≤ 2d`.
    pub delta: f64,
    /// Proximity radius `δ √(d/n) ‖Δ̃^Π‖` for second-order critical points.
    pub proximity_bound: f64,
}

pub fn landscape_bounds(instance: &SyntheticInstance, p: usize) -> Result<LandscapeReport> {
    let a = instance.truth.points();
    let d = a.nrows();
    let n = instance.observed.n();
    if p < d {
        return Err(Error::InvalidArgument(format!("p={p} must be >= d={d}")));
    }
    let lift = noise_lift(instance)?;
    let sv = linops::singular_values(a)?;
    let sigma_min_a = sv[d - 1];
    let kappa = sv[0] / sigma_min_a;
    let noise_lift_norm = linops::spectral_norm(&lift.delta_tilde_pi)?;
    let partial_trace_norm = linops::spectral_norm(&lift.partial_trace)?;
    let mut max_block_noise: f64 = 0.0;
    for delta in &lift.noise {
        max_block_noise = max_block_noise.max(linops::spectral_norm(delta)?);
    }
    let (pf, df, nf) = (p as f64, d as f64, n as f64);
    let bound_rhs = nf * (pf - 2.0 * df) / (8.0 * kappa * (pf + df) * df.sqrt());
    let block_noise_bound = sigma_min_a / (12.0 * kappa);
    let satisfied = p > 2 * d
        && noise_lift_norm.max(partial_trace_norm) <= bound_rhs
        && max_block_noise <= block_noise_bound;
    let gamma = if noise_lift_norm > 0.0 { (partial_trace_norm / noise_lift_norm).max(1.0) } else { 1.0 };
    let delta = if p > 2 * d {
        (2.0 + 5f64.sqrt()) * (pf + df) * gamma / (pf - 2.0 * df)
    } else {
        f64::INFINITY
    };
    let proximity_bound = if noise_lift_norm == 0.0 { 0.0 } else { delta * (df / nf).sqrt() * noise_lift_norm };
    Ok(LandscapeReport {
        n,
        d,
        p,
        kappa,
        sigma_min_a,
        noise_lift_norm,
        partial_trace_norm,
        bound_rhs,
        max_block_noise,
        block_noise_bound,
        satisfied,
        gamma,
        delta,
        proximity_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_gram, PointCloud, PointCloudSet};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_gram(n: usize, d: usize, m: usize, seed: u64) -> GramMatrix {
        let mut r = rng(seed);
        let set = PointCloudSet::new((0..n).map(|_| PointCloud::new(gaussian_matrix(d, m, &mut r)).unwrap()).collect()).unwrap();
        build_gram(&set, false)
    }

    #[test]
    fn gradient_of_zero_and_identity() {
        let c = GramMatrix::new(DMatrix::zeros(6, 6), 2).unwrap();
        let s = StiefelStack::random(3, 2, 4, &mut rng(1));
        assert_eq!(euclidean_gradient(&c, &s).unwrap().as_matrix().amax(), 0.0);

        let c = GramMatrix::new(DMatrix::identity(3, 3), 3).unwrap();
        let s = StiefelStack::random(1, 3, 5, &mut rng(2));
        let g = euclidean_gradient(&c, &s).unwrap();
        assert!((g.as_matrix() - s.as_matrix() * 2.0).amax() < 1e-15);
    }

    #[test]
    fn projector_properties() {
        let mut r = rng(3);
        let s = StiefelStack::random(1, 3, 5, &mut r).block(0).clone_owned();
        let g = gaussian_matrix(3, 5, &mut r);
        let t = tangent_project(&s, &g);
        assert!((&t * s.transpose() + &s * t.transpose()).norm() <= 1e-10 * t.norm());
        assert!((tangent_project(&s, &t) - &t).amax() < 1e-12);
        assert!(tangent_project(&s, &s).amax() < 1e-12);
    }

    #[test]
    fn riemannian_gradient_is_half_projected_euclidean() {
        let c = random_gram(4, 3, 6, 4);
        let s = StiefelStack::random(4, 3, 7, &mut rng(5));
        let rg = riemannian_gradient(&c, &s).unwrap();
        let eg = euclidean_gradient(&c, &s).unwrap();
        let proj = project_stack(&s, &eg);
        assert!((rg.as_matrix() - proj.as_matrix() * 0.5).amax() <= 1e-12 * c.frobenius_norm());
    }

    #[test]
    fn padded_truth_is_critical() {
        let mut r = rng(6);
        let a = gaussian_matrix(3, 7, &mut r);
        let set = PointCloudSet::new((0..5).map(|_| PointCloud::new(a.clone()).unwrap()).collect()).unwrap();
        let c = build_gram(&set, false);
        let z = StiefelStack::padded_identity(5, 3, 7);
        assert!(riemannian_gradient(&c, &z).unwrap().as_matrix().amax() < 1e-12 * c.frobenius_norm());
    }

    #[test]
    fn zero_step_retraction_is_identity() {
        let mut r = rng(7);
        let s = StiefelStack::random(3, 2, 4, &mut r);
        let t = BlockStack::from_matrix(gaussian_matrix(6, 4, &mut r), 2).unwrap();
        let out = retract(&s, &t, 0.0).unwrap();
        assert_eq!(out.stack, s);
        assert!(retract(&s, &t, -1.0).is_err());
    }

    #[test]
    fn retraction_is_second_order() {
        let mut r = rng(8);
        let s = StiefelStack::random(3, 2, 5, &mut r);
        let raw = BlockStack::from_matrix(gaussian_matrix(6, 5, &mut r), 2).unwrap();
        let t = project_stack(&s, &raw);
        let err = |h: f64| (retract(&s, &t, h).unwrap().stack.as_matrix() - (s.as_matrix() + t.as_matrix() * h)).norm();
        let (e3, e4) = (err(1e-3), err(1e-4));
        // quadratic scaling: a 10x smaller step gives ~100x smaller error
        assert!(e3 / e4 > 50.0, "ratio {}", e3 / e4);
        assert!(e3 <= 10.0 * 1e-6 * t.as_matrix().norm_squared().max(1.0));
    }

    #[test]
    fn many_retractions_stay_orthonormal() {
        let mut r = rng(9);
        let mut s = StiefelStack::random(2, 3, 5, &mut r);
        for _ in 0..1000 {
            let t = BlockStack::from_matrix(gaussian_matrix(6, 5, &mut r), 3).unwrap();
            s = retract(&s, &t, 0.1).unwrap().stack;
        }
        assert!(s.orthonormality_defect() <= 1e-10);
    }

    #[test]
    fn square_truth_start_converges_immediately() {
        let mut r = rng(10);
        let a = gaussian_matrix(3, 7, &mut r);
        let set = PointCloudSet::new((0..4).map(|_| PointCloud::new(a.clone()).unwrap()).collect()).unwrap();
        let c = build_gram(&set, false);
        let z = StiefelStack::identity(4, 3);
        let cfg = BmConfig { p: Some(3), ..Default::default() };
        let rep = solve_bm(&c, &cfg, Some(&z)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert!(rep.grad_norm_history[0] <= 1e-12 * c.frobenius_norm());
    }

    #[test]
    fn lifted_sign_saddle_has_negative_curvature() {
        // C = J_3, s = (+, −, +) embedded in St(1, 2)
        let c = GramMatrix::new(DMatrix::from_element(3, 3, 1.0), 1).unwrap();
        let s = StiefelStack::from_blocks(&[
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        ])
        .unwrap();
        let probe = second_order_residual(&c, &s, 100, 11, &TangentSampler::Isotropic).unwrap();
        assert!(probe.residual < -0.1);
        assert!(second_order_form(&c, &s, &probe.direction).unwrap() < 0.0);
        assert!(hessian_min_eigenvalue(&c, &s).unwrap() < 0.0);
    }

    #[test]
    fn second_order_requires_criticality_and_is_monotone_in_trials() {
        let c = random_gram(4, 2, 5, 12);
        let s = StiefelStack::random(4, 2, 5, &mut rng(13));
        assert!(matches!(
            second_order_residual(&c, &s, 10, 0, &TangentSampler::Isotropic),
            Err(Error::NotFirstOrderCritical { .. })
        ));

        let mut r = rng(14);
        let a = gaussian_matrix(2, 5, &mut r);
        let set = PointCloudSet::new((0..4).map(|_| PointCloud::new(a.clone()).unwrap()).collect()).unwrap();
        let c = build_gram(&set, false);
        let z = StiefelStack::padded_identity(4, 2, 5);
        let one = second_order_residual(&c, &z, 1, 3, &TangentSampler::Isotropic).unwrap().residual;
        let many = second_order_residual(&c, &z, 100, 3, &TangentSampler::Isotropic).unwrap().residual;
        assert!(one >= many);
        assert!(many >= -1e-10 * c.frobenius_norm());
        let weighted = second_order_residual(&c, &z, 50, 3, &TangentSampler::Weighted { pi: &a * a.transpose() }).unwrap();
        assert!(weighted.residual >= -1e-10 * c.frobenius_norm());
        assert!(hessian_min_eigenvalue(&c, &z).unwrap() >= -1e-9 * c.frobenius_norm());
    }

    #[test]
    fn sampled_residual_bounded_by_dense_hessian() {
        let mut r = rng(15);
        let a = gaussian_matrix(2, 6, &mut r);
        let set = PointCloudSet::new((0..3).map(|_| PointCloud::new(a.clone()).unwrap()).collect()).unwrap();
        let c = build_gram(&set, false);
        let z = StiefelStack::padded_identity(3, 2, 5);
        let h = hessian_min_eigenvalue(&c, &z).unwrap();
        let probe = second_order_residual(&c, &z, 200, 1, &TangentSampler::Isotropic).unwrap();
        assert!(probe.residual >= h - 1e-9);
        let big = StiefelStack::padded_identity(200, 2, 6);
        let c_big = GramMatrix::new(DMatrix::identity(400, 400), 2).unwrap();
        assert!(hessian_min_eigenvalue(&c_big, &big).is_err());
    }
}
