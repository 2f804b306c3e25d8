//! Dual certificate for global optimality and deterministic SNR conditions.
//!
//! A candidate `S` is certified when the block-diagonal multiplier `Λ` with
//! `Λ_ii = sym(Σ_j C_ij S_j S_iᵀ)` satisfies `(Λ − C) S ≈ 0` and
//! `λ_{d+1}(Λ − C) > 0`; then `SSᵀ` is the unique maximizer of the SDP
//! relaxation and `S` the rank-`d` maximizer of the original program.

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linops::{self, BlockStack};
use crate::model::{GramMatrix, SyntheticInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedUniqueGlobal,
    StationaryNotCertified,
    NotStationary,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    /// Strict upper bound on `‖(Λ − C) S‖`.
    pub stat_tol: f64,
    /// `λ_{d+1}(Λ − C)` must exceed this.
    pub psd_tol: f64,
    /// Optional extra margin `relative_margin · ‖C‖_F` added to `psd_tol`.
    pub relative_margin: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { stat_tol: 1e-6, psd_tol: 0.0, relative_margin: None }
    }
}

impl CertifyOptions {
    /// Default thresholds plus the `1e-9 ‖C‖_F` near-tie guard.
    pub fn with_margin() -> Self {
        Self { relative_margin: Some(1e-9), ..Self::default() }
    }
}

/// Width factor of the band `[−k·stat_tol·‖C‖_F, k·stat_tol·‖C‖_F]` in which
/// the `d` null eigenvalues of `Λ − C` are counted.
pub const NULL_BAND_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    /// Symmetrized `Λ_ii`, row-major.
    #[serde(serialize_with = "row_major_blocks")]
    pub lambda_blocks: Vec<DMatrix<f64>>,
    /// Operator norm of `(Λ − C) S`.
    pub stationarity_residual: f64,
    pub stationarity_residual_frobenius: f64,
    /// `(d+1)`-th smallest eigenvalue of `Λ − C`.
    pub lambda_d_plus_1: f64,
    pub min_block_eig: f64,
    /// `max_i ‖Λ_ii − Λ_iiᵀ‖_F / ‖Λ_ii‖_F` before symmetrization.
    pub max_relative_asymmetry: f64,
    /// Eigenvalues of `Λ − C` inside the null band.
    pub null_eigenvalue_count: usize,
    /// Threshold actually applied to `λ_{d+1}`.
    pub psd_threshold: f64,
    pub stat_tol: f64,
    pub verdict: Verdict,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::CertifiedUniqueGlobal
    }
}

fn row_major_blocks<S: Serializer>(blocks: &[DMatrix<f64>], ser: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| (0..b.nrows()).flat_map(|r| b.row(r).iter().copied().collect::<Vec<_>>()).collect())
        .collect();
    rows.serialize(ser)
}

/// Raw multiplier blocks `Λ_ii = Σ_j C_ij S_j S_iᵀ = [CS]_i S_iᵀ` (not symmetrized).
pub fn build_lambda(c: &GramMatrix, s: &BlockStack) -> Result<Vec<DMatrix<f64>>> {
    let cs = c.apply(s)?;
    Ok((0..s.n()).map(|i| cs.block(i) * s.block(i).transpose()).collect())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `Λ − C` with the symmetrized multiplier.
pub fn lambda_minus_c(c: &GramMatrix, s: &BlockStack) -> Result<DMatrix<f64>> {
    let blocks = build_lambda(c, s)?;
    let d = c.d();
    let mut m = -c.as_matrix().clone();
    for (i, b) in blocks.iter().enumerate() {
        let mut view = m.view_mut((i * d, i * d), (d, d));
        view += symmetrize(b);
    }
    Ok(m)
}

pub(crate) fn min_lambda_block_eigenvalue(c: &GramMatrix, s: &BlockStack) -> Result<f64> {
    let mut min = f64::INFINITY;
    for b in build_lambda(c, s)? {
        min = min.min(linops::symmetric_eigenvalues(&b)?[0]);
    }
    Ok(min)
}

pub fn certify(c: &GramMatrix, s: &BlockStack, opts: &CertifyOptions) -> Result<Certificate> {
    let d = c.d();
    let raw = build_lambda(c, s)?;
    let mut max_relative_asymmetry: f64 = 0.0;
    let mut min_block_eig = f64::INFINITY;
    let lambda_blocks: Vec<DMatrix<f64>> = raw
        .iter()
        .map(|b| {
            let scale = b.norm();
            if scale > 0.0 {
                max_relative_asymmetry = max_relative_asymmetry.max((b - b.transpose()).norm() / scale);
            }
            symmetrize(b)
        })
        .collect();
    for b in &lambda_blocks {
        min_block_eig = min_block_eig.min(linops::symmetric_eigenvalues(b)?[0]);
    }

    let mut m = -c.as_matrix().clone();
    for (i, b) in lambda_blocks.iter().enumerate() {
        let mut view = m.view_mut((i * d, i * d), (d, d));
        view += b;
    }
    let r = &m * s.as_matrix();
    let stationarity_residual = linops::spectral_norm(&r)?;
    let stationarity_residual_frobenius = r.norm();

    let eig = linops::symmetric_eigenvalues(&m)?;
    let lambda_d_plus_1 = eig.get(d).copied().unwrap_or(f64::INFINITY);
    let c_norm = c.frobenius_norm();
    let band = NULL_BAND_FACTOR * opts.stat_tol * c_norm;
    let null_eigenvalue_count = eig.iter().filter(|v| v.abs() <= band).count();
    let psd_threshold = opts.psd_tol + opts.relative_margin.map_or(0.0, |k| k * c_norm);

    let verdict = if !(stationarity_residual < opts.stat_tol) {
        Verdict::NotStationary
    } else if lambda_d_plus_1 > psd_threshold {
        Verdict::CertifiedUniqueGlobal
    } else {
        Verdict::StationaryNotCertified
    };

    Ok(Certificate {
        lambda_blocks,
        stationarity_residual,
        stationarity_residual_frobenius,
        lambda_d_plus_1,
        min_block_eig,
        max_relative_asymmetry,
        null_eigenvalue_count,
        psd_threshold,
        stat_tol: opts.stat_tol,
        verdict,
    })
}

/// Evaluation of the deterministic noise conditions for tightness and for
/// convergence of the power method.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SnrCheck {
    /// `max_i ‖Δ_i‖` (operator norm).
    pub max_block_noise: f64,
    pub sigma_min_a: f64,
    pub sigma_max_a: f64,
    pub kappa: f64,
    /// `σ_min(A) / (192 κ³)`.
    pub threshold_main: f64,
    /// `σ_min(A) / (384 κ⁴ √d)`.
    pub threshold_gpm: f64,
    /// Contraction bound `4κ²(1/(8κ²) + 3 max‖Δ_i‖/‖A‖)` at the largest admissible ε.
    pub rho_bound: f64,
    pub satisfied_main: bool,
    pub satisfied_gpm: bool,
    /// Computed from an estimated consensus instead of the planted truth.
    pub heuristic: bool,
}

fn snr_from(a: &DMatrix<f64>, noise: &[DMatrix<f64>], heuristic: bool) -> Result<SnrCheck> {
    let d = a.nrows();
    let sv = linops::singular_values(a)?;
    let sigma_max_a = sv[0];
    let sigma_min_a = sv[d - 1];
    if !(sigma_min_a > 0.0) {
        return Err(Error::Numerical("latent cloud is rank deficient".into()));
    }
    let kappa = sigma_max_a / sigma_min_a;
    let mut max_block_noise: f64 = 0.0;
    for delta in noise {
        max_block_noise = max_block_noise.max(linops::spectral_norm(delta)?);
    }
    let threshold_main = sigma_min_a / (192.0 * kappa.powi(3));
    let threshold_gpm = sigma_min_a / (384.0 * kappa.powi(4) * (d as f64).sqrt());
    let rho_bound = 0.5 + 12.0 * kappa * kappa * max_block_noise / sigma_max_a;
    Ok(SnrCheck {
        max_block_noise,
        sigma_min_a,
        sigma_max_a,
        kappa,
        threshold_main,
        threshold_gpm,
        rho_bound,
        satisfied_main: max_block_noise <= threshold_main,
        satisfied_gpm: max_block_noise <= threshold_gpm,
        heuristic,
    })
}

/// Evaluates both noise conditions with the planted `A` and `Δ_i`.
pub fn snr_check(instance: &SyntheticInstance) -> Result<SnrCheck> {
    snr_from(instance.truth.points(), &instance.noise_blocks(), false)
}

/// Same conditions with `A` replaced by the consensus of the centered clouds
/// aligned by `rotations`, and `Δ_i = A_i − O_i Â`.
pub fn snr_estimate(
    clouds: &crate::model::PointCloudSet,
    rotations: &linops::RotationStack,
) -> Result<SnrCheck> {
    let a_hat = crate::model::consensus(clouds, rotations)?;
    let noise: Vec<DMatrix<f64>> = clouds
        .clouds()
        .iter()
        .zip(rotations.blocks())
        .map(|(c, o)| crate::model::center(c).into_points() - o * &a_hat)
        .collect();
    snr_from(&a_hat, &noise, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{gaussian_matrix, StiefelStack};
    use crate::model::{build_gram, PointCloud, PointCloudSet};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_gram(n: usize, a: &DMatrix<f64>) -> GramMatrix {
        let set = PointCloudSet::new((0..n).map(|_| PointCloud::new(a.clone()).unwrap()).collect()).unwrap();
        build_gram(&set, false)
    }

    #[test]
    fn lambda_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian_matrix(3, 6, &mut rng);
        let aat = &a * a.transpose();
        let c = noiseless_gram(4, &a);
        let z = StiefelStack::identity(4, 3);
        for b in build_lambda(&c, &z).unwrap() {
            assert!((b - &aat * 4.0).amax() < 1e-10);
        }
        let c1 = noiseless_gram(1, &a);
        let s = StiefelStack::random(1, 3, 3, &mut rng);
        let l = build_lambda(&c1, &s).unwrap();
        let expect = &aat * s.block(0) * s.block(0).transpose();
        assert!((&l[0] - expect).amax() < 1e-10);
        let l = build_lambda(&c1, &StiefelStack::identity(1, 3)).unwrap();
        assert!((&l[0] - &aat).amax() < 1e-12);
    }

    #[test]
    fn noiseless_truth_is_certified_with_kronecker_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian_matrix(3, 8, &mut rng);
        let n = 6;
        let c = noiseless_gram(n, &a);
        let cert = certify(&c, &StiefelStack::identity(n, 3), &CertifyOptions::default()).unwrap();
        assert_eq!(cert.verdict, Verdict::CertifiedUniqueGlobal);
        assert!(cert.stationarity_residual <= 1e-10 * c.frobenius_norm());
        // Λ − C = (nI − J) ⊗ AAᵀ has eigenvalues 0 (d times) and n·λ_k(AAᵀ).
        let smin = linops::singular_values(&a).unwrap()[2];
        let expect = n as f64 * smin * smin;
        assert!((cert.lambda_d_plus_1 - expect).abs() <= 1e-6 * expect);
        assert_eq!(cert.null_eigenvalue_count, 3);
    }

    #[test]
    fn random_stack_is_not_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian_matrix(3, 8, &mut rng);
        let c = noiseless_gram(5, &a);
        let s = StiefelStack::random(5, 3, 3, &mut rng);
        let cert = certify(&c, &s, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.verdict, Verdict::NotStationary);
    }

    #[test]
    fn margin_raises_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian_matrix(2, 5, &mut rng);
        let c = noiseless_gram(3, &a);
        let cert = certify(&c, &StiefelStack::identity(3, 2), &CertifyOptions::with_margin()).unwrap();
        assert!((cert.psd_threshold - 1e-9 * c.frobenius_norm()).abs() < 1e-18);
        assert!(cert.is_certified());
    }

    #[test]
    fn snr_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = PointCloud::new(gaussian_matrix(3, 10, &mut rng)).unwrap();
        let n = 4;
        let noise: Vec<DMatrix<f64>> = (0..n).map(|_| gaussian_matrix(3, 10, &mut rng)).collect();
        let shifts = vec![DVector::zeros(3); n];
        let quiet = SyntheticInstance::assemble(a.clone(), StiefelStack::identity(n, 3), shifts.clone(), 0.0, noise.clone(), 0).unwrap();
        let chk = snr_check(&quiet).unwrap();
        assert!(chk.kappa >= 1.0);
        assert!(chk.satisfied_main && chk.satisfied_gpm);
        assert_eq!(chk.max_block_noise, 0.0);
        let loud = SyntheticInstance::assemble(a, StiefelStack::identity(n, 3), shifts, 1e3, noise, 0).unwrap();
        let chk = snr_check(&loud).unwrap();
        assert!(!chk.satisfied_main && !chk.satisfied_gpm);
        assert!(chk.threshold_gpm < chk.threshold_main);
    }
}
