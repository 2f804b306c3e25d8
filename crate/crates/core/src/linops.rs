//! Dense linear-algebra primitives shared by every solver.
//!
//! Block stacks are stored as a single `nd × p` matrix whose `i`-th `d × p`
//! row band is block `i`. The polar projection, the gauge-invariant distance
//! `d_F`, partial traces and extreme spectra all operate on that layout.

use std::ops::Deref;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Polar results with `σ_min < RANK_DEFICIENCY_RATIO · σ_max` are flagged non-unique.
pub const RANK_DEFICIENCY_RATIO: f64 = 1e-12;
/// Maximum `‖S_i S_iᵀ − I‖_F` accepted for a block of a Stiefel stack.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Relative gap `σ_d − σ_{d+1}` below which the top-`d` subspace is flagged non-unique.
pub const SINGULAR_GAP_TOL: f64 = 1e-12;

const SVD_MAX_ITER: usize = 10_000;
/// Deflation tolerance for the nalgebra path.
const SVD_EPS: f64 = 5.0 * f64::EPSILON;
/// Inputs whose shorter side is at most this use the Jacobi path.
const JACOBI_LIMIT: usize = 16;
const JACOBI_MAX_SWEEPS: usize = 100;

/// `n` blocks of size `d × p`, no orthonormality assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStack {
    n: usize,
    d: usize,
    data: DMatrix<f64>,
}

impl BlockStack {
    pub fn from_matrix(data: DMatrix<f64>, d: usize) -> Result<Self> {
        if d == 0 || data.nrows() % d != 0 || data.nrows() == 0 {
            return Err(Error::mismatch(
                "block stack rows",
                format!("positive multiple of d={d}"),
                data.nrows(),
            ));
        }
        if data.ncols() < d {
            return Err(Error::mismatch("block stack columns", format!(">= {d}"), data.ncols()));
        }
        Ok(Self { n: data.nrows() / d, d, data })
    }

    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty block list".into()))?;
        let (d, p) = first.shape();
        let mut data = DMatrix::zeros(blocks.len() * d, p);
        for (i, b) in blocks.iter().enumerate() {
            if b.shape() != (d, p) {
                return Err(Error::mismatch(
                    format!("block {i}"),
                    format!("{d}x{p}"),
                    format!("{}x{}", b.nrows(), b.ncols()),
                ));
            }
            data.rows_mut(i * d, d).copy_from(b);
        }
        Self::from_matrix(data, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn block(&self, i: usize) -> DMatrixView<'_, f64> {
        self.data.rows(i * self.d, self.d)
    }

    pub fn blocks(&self) -> impl Iterator<Item = DMatrixView<'_, f64>> + '_ {
        (0..self.n).map(move |i| self.block(i))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Right-multiplies every block by the same `p × p` matrix.
    pub fn right_mul(&self, q: &DMatrix<f64>) -> BlockStack {
        BlockStack { n: self.n, d: self.d, data: &self.data * q }
    }
}

/// `n` blocks in `St(d, p)`, i.e. `S_i S_iᵀ = I_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelStack(BlockStack);

/// A Stiefel stack with square blocks (`p = d`), i.e. an element of `O(d)^n`.
pub type RotationStack = StiefelStack;

impl StiefelStack {
    pub fn new(stack: BlockStack) -> Result<Self> {
        let eye = DMatrix::<f64>::identity(stack.d(), stack.d());
        for (i, b) in stack.blocks().enumerate() {
            let dev = (b * b.transpose() - &eye).norm();
            if !(dev <= ORTHONORMALITY_TOL) {
                return Err(Error::NotOrthonormal { index: i, deviation: dev });
            }
        }
        Ok(Self(stack))
    }

    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Result<Self> {
        Self::new(BlockStack::from_blocks(blocks)?)
    }

    pub(crate) fn from_unchecked(stack: BlockStack) -> Self {
        Self(stack)
    }

    /// The synchronized state `Z`: every block is `I_d`.
    pub fn identity(n: usize, d: usize) -> Self {
        Self::padded_identity(n, d, d)
    }

    /// Every block is `[I_d | 0]` in `St(d, p)`.
    pub fn padded_identity(n: usize, d: usize, p: usize) -> Self {
        assert!(n > 0 && d > 0 && p >= d);
        let mut data = DMatrix::zeros(n * d, p);
        for i in 0..n {
            for k in 0..d {
                data[(i * d + k, k)] = 1.0;
            }
        }
        Self(BlockStack { n, d, data })
    }

    /// Blockwise polar of i.i.d. standard normal `d × p` blocks.
    pub fn random<R: Rng + ?Sized>(n: usize, d: usize, p: usize, rng: &mut R) -> Self {
        let blocks: Vec<_> = (0..n).map(|_| gaussian_matrix(d, p, rng)).collect();
        let raw = BlockStack::from_blocks(&blocks).expect("consistent random blocks");
        // Gaussian blocks are full rank with probability one.
        polar_blockwise(&raw).expect("finite random blocks").stack
    }

    pub fn is_square(&self) -> bool {
        self.p() == self.d()
    }

    pub fn stack(&self) -> &BlockStack {
        &self.0
    }

    pub fn into_stack(self) -> BlockStack {
        self.0
    }

    /// Largest `‖S_i S_iᵀ − I_d‖_F` over blocks.
    pub fn orthonormality_defect(&self) -> f64 {
        let eye = DMatrix::<f64>::identity(self.d(), self.d());
        self.blocks()
            .map(|b| (b * b.transpose() - &eye).norm())
            .fold(0.0, f64::max)
    }

    /// Right-multiplication by an orthogonal `p × p` matrix stays on the manifold.
    pub fn rotate(&self, q: &DMatrix<f64>) -> StiefelStack {
        StiefelStack(self.0.right_mul(q))
    }
}

impl Deref for StiefelStack {
    type Target = BlockStack;

    fn deref(&self) -> &BlockStack {
        &self.0
    }
}

/// Row-major standard normal matrix.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_row_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Haar-distributed element of `O(d)`, the polar factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    polar(&gaussian_matrix(d, d, rng)).expect("finite gaussian").matrix
}

fn ensure_finite(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what}: non-finite entry")))
    }
}

/// Thin SVD `X = U diag(s) Vᵀ` with descending singular values.
///
/// Each singular pair is sign-normalized so that the largest-magnitude entry
/// of the left vector is positive (first index wins ties).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn svd(x: &DMatrix<f64>) -> Result<Svd> {
    ensure_finite(x, "svd")?;
    let (u, s, v_t) = if x.nrows().min(x.ncols()) <= JACOBI_LIMIT {
        jacobi_svd(x)?
    } else {
        let raw = x
            .clone()
            .try_svd(true, true, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::Numerical("svd did not converge".into()))?;
        (raw.u.expect("requested u"), raw.singular_values, raw.v_t.expect("requested v_t"))
    };

    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut su = DMatrix::zeros(u.nrows(), k);
    let mut svt = DMatrix::zeros(k, v_t.ncols());
    let mut ss = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = u.column(src).clone_owned();
        let mut row = v_t.row(src).clone_owned();
        let mut pivot = 0;
        for r in 1..col.len() {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
            row.neg_mut();
        }
        su.set_column(dst, &col);
        svt.set_row(dst, &row);
        ss[dst] = s[src];
    }
    // singular vectors of (numerically) zero singular values are unreliable;
    // replace them by an orthonormal completion
    let cutoff = RANK_DEFICIENCY_RATIO * ss.get(0).copied().unwrap_or(0.0);
    let good = ss.iter().take_while(|&&v| v > cutoff).count();
    if good < k {
        complete_columns(&mut su, good);
        let mut v = svt.transpose();
        complete_columns(&mut v, good);
        svt = v.transpose();
    }
    Ok(Svd { u: su, singular_values: ss, v_t: svt })
}

/// Overwrites columns `keep..` with unit vectors orthogonal to all earlier columns.
fn complete_columns(m: &mut DMatrix<f64>, keep: usize) {
    let rows = m.nrows();
    for j in keep..m.ncols() {
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = -1.0;
        for e in 0..rows {
            let mut cand = DVector::zeros(rows);
            cand[e] = 1.0;
            for _ in 0..2 {
                for q in 0..j {
                    let col = m.column(q);
                    let proj = col.dot(&cand);
                    cand.axpy(-proj, &col, 1.0);
                }
            }
            let norm = cand.norm();
            if norm > best_norm {
                best_norm = norm;
                best = Some(cand);
            }
            if norm > 0.5 {
                break;
            }
        }
        let v = best.expect("rows >= 1") / best_norm;
        m.set_column(j, &v);
    }
}

pub fn singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    ensure_finite(x, "singular values")?;
    let values = if x.nrows().min(x.ncols()) <= JACOBI_LIMIT {
        jacobi_svd(x)?.1
    } else {
        x.clone()
            .try_svd(false, false, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::Numerical("svd did not converge".into()))?
            .singular_values
    };
    let mut s: Vec<f64> = values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// One-sided (Hestenes) Jacobi: rotate column pairs of the tall orientation
/// until they are mutually orthogonal. Unsorted output.
fn jacobi_svd(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let tall = x.nrows() >= x.ncols();
    let mut a = if tall { x.clone() } else { x.transpose() };
    let k = a.ncols();
    let mut v = DMatrix::<f64>::identity(k, k);
    let tol = f64::EPSILON * (a.nrows() as f64).sqrt();
    // columns this small are numerically zero; their direction is irrelevant
    let negligible = (f64::EPSILON * a.norm()).powi(2);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha.min(beta) <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 { 1.0 } else { zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt()) };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for m in [&mut a, &mut v] {
                    for r in 0..m.nrows() {
                        let (mp, mq) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * mp - sn * mq;
                        m[(r, q)] = sn * mp + c * mq;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("jacobi svd did not converge".into()));
    }
    let s = DVector::from_iterator(k, (0..k).map(|j| a.column(j).norm()));
    for j in 0..k {
        if s[j] > 0.0 {
            let col = a.column(j) / s[j];
            a.set_column(j, &col);
        }
    }
    // left vectors of zero columns are filled in later by the completion step
    Ok(if tall { (a, s, v.transpose()) } else { (v, s, a.transpose()) })
}

/// Operator (spectral) norm.
pub fn spectral_norm(x: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(x)?.first().copied().unwrap_or(0.0))
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(x)?.iter().sum())
}

/// Nearest row-orthonormal matrix `U Vᵀ` to a `d × p` input.
#[derive(Debug, Clone)]
pub struct Polar {
    pub matrix: DMatrix<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// False when `X` is (numerically) rank deficient and the projection is not unique.
    pub unique: bool,
}

pub fn polar(x: &DMatrix<f64>) -> Result<Polar> {
    if x.nrows() == 0 || x.nrows() > x.ncols() {
        return Err(Error::mismatch(
            "polar input",
            "d x p with 1 <= d <= p",
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let f = svd(x)?;
    let sigma_max = f.singular_values[0];
    let sigma_min = f.singular_values[f.singular_values.len() - 1];
    let unique = sigma_max > 0.0 && sigma_min >= RANK_DEFICIENCY_RATIO * sigma_max;
    Ok(Polar { matrix: &f.u * &f.v_t, sigma_min, sigma_max, unique })
}

/// Result of the blockwise projection `𝒫_n`.
#[derive(Debug, Clone)]
pub struct BlockPolar {
    pub stack: StiefelStack,
    /// Indices of blocks whose polar factor was not unique.
    pub degenerate_blocks: Vec<usize>,
    /// Smallest singular value over all input blocks.
    pub min_singular_value: f64,
}

pub fn polar_blockwise(stack: &BlockStack) -> Result<BlockPolar> {
    let (d, p) = (stack.d(), stack.p());
    if p < d {
        return Err(Error::mismatch("polar_blockwise", format!("p >= {d}"), p));
    }
    let mut out = DMatrix::zeros(stack.n() * d, p);
    let mut degenerate_blocks = Vec::new();
    let mut min_sv = f64::INFINITY;
    for (i, b) in stack.blocks().enumerate() {
        let pol = polar(&b.clone_owned())?;
        if !pol.unique {
            degenerate_blocks.push(i);
        }
        min_sv = min_sv.min(pol.sigma_min);
        out.rows_mut(i * d, d).copy_from(&pol.matrix);
    }
    Ok(BlockPolar {
        stack: StiefelStack(BlockStack { n: stack.n(), d, data: out }),
        degenerate_blocks,
        min_singular_value: min_sv,
    })
}

/// `d_F(X, Y) = min_Q ‖X − YQ‖_F` together with its minimizer `Q = 𝒫(YᵀX)`.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub distance: f64,
    pub aligner: DMatrix<f64>,
}

pub fn align(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Alignment> {
    if x.shape() != y.shape() {
        return Err(Error::mismatch(
            "align",
            format!("{}x{}", x.nrows(), x.ncols()),
            format!("{}x{}", y.nrows(), y.ncols()),
        ));
    }
    let q = polar(&(y.transpose() * x))?.matrix;
    let distance = (x - y * &q).norm();
    Ok(Alignment { distance, aligner: q })
}

/// Gauge-invariant distance between two stacks.
pub fn distance(x: &BlockStack, y: &BlockStack) -> Result<f64> {
    Ok(align(x.as_matrix(), y.as_matrix())?.distance)
}

/// Both sides of `d_F²(X, Y) = 2nd − 2‖XᵀY‖_*` for Stiefel stacks.
pub fn df_squared_identity(x: &StiefelStack, y: &StiefelStack) -> Result<(f64, f64)> {
    if x.n() != y.n() || x.d() != y.d() || x.p() != y.p() {
        return Err(Error::mismatch(
            "df_squared_identity",
            format!("{}x{}x{}", x.n(), x.d(), x.p()),
            format!("{}x{}x{}", y.n(), y.d(), y.p()),
        ));
    }
    let direct = align(x.as_matrix(), y.as_matrix())?.distance.powi(2);
    let nd = (x.n() * x.d()) as f64;
    let via_nuclear = 2.0 * nd - 2.0 * nuclear_norm(&(x.as_matrix().transpose() * y.as_matrix()))?;
    Ok((direct, via_nuclear))
}

/// `‖XXᵀ − YYᵀ‖_F` evaluated through `p × p` products only.
///
/// With `E = X − Y`, `XXᵀ − YYᵀ = EXᵀ + YEᵀ`; every term of the expanded
/// square is second order in `E`, so small changes are resolved without
/// cancellation against `‖XXᵀ‖_F`.
pub fn gram_distance(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let e = x - y;
    let ete = e.transpose() * &e;
    let xtx = x.transpose() * x;
    let yty = y.transpose() * y;
    let ety = e.transpose() * y;
    let etx = e.transpose() * x;
    let sq = ete.dot(&xtx) + yty.dot(&ete) + 2.0 * (&ety * &etx).trace();
    sq.max(0.0).sqrt()
}

/// `[Tr(W M_ij)]_{ij}` for an `nd × nd` block matrix `M`.
pub fn partial_trace(m: &DMatrix<f64>, weight: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = weight.nrows();
    if d == 0 || weight.ncols() != d {
        return Err(Error::mismatch("partial_trace weight", "square", format!("{}x{}", d, weight.ncols())));
    }
    if m.nrows() != m.ncols() || m.nrows() % d != 0 {
        return Err(Error::mismatch(
            "partial_trace matrix",
            format!("square with side a multiple of {d}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let n = m.nrows() / d;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..d {
                for b in 0..d {
                    acc += weight[(a, b)] * m[(i * d + b, j * d + a)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Ascending eigenvalues of `(M + Mᵀ)/2`.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::mismatch("eigenvalues", "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    ensure_finite(m, "eigenvalues")?;
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// k-th smallest eigenvalue (1-based) of a symmetric matrix.
pub fn lambda_kth_smallest(m: &DMatrix<f64>, k: usize) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::mismatch("lambda_kth_smallest", "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if k == 0 || k > m.nrows() {
        return Err(Error::InvalidArgument(format!("k={k} out of range 1..={}", m.nrows())));
    }
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * m.norm().max(1.0) {
        return Err(Error::InvalidArgument(format!("matrix not symmetric (defect {asym:.3e})")));
    }
    Ok(symmetric_eigenvalues(m)?[k - 1])
}

/// Top-`d` left singular subspace of the stacked data matrix.
#[derive(Debug, Clone)]
pub struct LeftSingular {
    /// `nd × d` with orthonormal columns.
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `σ_d` and `σ_{d+1}` coincide, so the subspace is not unique.
    pub degenerate_gap: bool,
}

pub fn top_d_left_singular(data: &DMatrix<f64>, d: usize) -> Result<LeftSingular> {
    if d == 0 || data.nrows() < d || data.ncols() < d {
        return Err(Error::mismatch(
            "top_d_left_singular",
            format!("at least {d}x{d}"),
            format!("{}x{}", data.nrows(), data.ncols()),
        ));
    }
    let f = svd(data)?;
    let s: Vec<f64> = f.singular_values.iter().copied().collect();
    let next = s.get(d).copied().unwrap_or(0.0);
    let degenerate_gap = s[d - 1] - next <= SINGULAR_GAP_TOL * s[0].max(f64::MIN_POSITIVE);
    Ok(LeftSingular { u: f.u.columns(0, d).clone_owned(), singular_values: s, degenerate_gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_deficient_svd_has_orthonormal_factors() {
        let s = DMatrix::from_row_slice(3, 7, &[
            0.6, 0.0, 0.8, 0.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ]);
        let projector = DMatrix::<f64>::identity(7, 7) - s.transpose() * &s;
        for x in [projector, DMatrix::zeros(3, 3), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])] {
            let f = svd(&x).unwrap();
            let k = f.singular_values.len();
            assert!((f.u.transpose() * &f.u - DMatrix::<f64>::identity(k, k)).amax() < 1e-12);
            assert!((&f.v_t * f.v_t.transpose() - DMatrix::<f64>::identity(k, k)).amax() < 1e-12);
            let rebuilt = &f.u * DMatrix::from_diagonal(&f.singular_values) * &f.v_t;
            assert!((rebuilt - &x).amax() < 1e-12);
        }
        let p = polar(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(!p.unique);
        assert!((&p.matrix * p.matrix.transpose() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }
}
