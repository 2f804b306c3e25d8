//! Observation model: point clouds, centering, shift estimation and the
//! stacked data / Gram matrices the solvers consume.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linops::{self, BlockStack, RotationStack};

/// `d × m` matrix whose columns are samples in `R^d`, with `m ≥ d + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: DMatrix<f64>,
}

impl PointCloud {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        let (d, m) = points.shape();
        if d == 0 {
            return Err(Error::InvalidArgument("point cloud needs d >= 1".into()));
        }
        if m < d + 1 {
            return Err(Error::InvalidArgument(format!(
                "point cloud needs m >= d + 1 samples (d={d}, m={m})"
            )));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("point cloud has non-finite entries".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn into_points(self) -> DMatrix<f64> {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    /// Mean of the columns.
    pub fn centroid(&self) -> DVector<f64> {
        self.points.column_mean()
    }
}

/// `n` clouds sharing the same `(d, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudSet {
    clouds: Vec<PointCloud>,
}

impl PointCloudSet {
    pub fn new(clouds: Vec<PointCloud>) -> Result<Self> {
        let first = clouds
            .first()
            .ok_or_else(|| Error::InvalidArgument("cloud set is empty".into()))?;
        let shape = first.points.shape();
        for (i, c) in clouds.iter().enumerate() {
            if c.points.shape() != shape {
                return Err(Error::BadCloud {
                    index: i,
                    reason: format!(
                        "shape {}x{} differs from {}x{}",
                        c.dim(),
                        c.len(),
                        shape.0,
                        shape.1
                    ),
                });
            }
        }
        Ok(Self { clouds })
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn n(&self) -> usize {
        self.clouds.len()
    }

    pub fn d(&self) -> usize {
        self.clouds[0].dim()
    }

    pub fn m(&self) -> usize {
        self.clouds[0].len()
    }

    fn check_rotations(&self, rotations: &RotationStack) -> Result<()> {
        if rotations.n() != self.n() {
            return Err(Error::mismatch("rotation count", self.n(), rotations.n()));
        }
        if rotations.d() != self.d() || rotations.p() != self.d() {
            return Err(Error::mismatch(
                "rotation block shape",
                format!("{0}x{0}", self.d()),
                format!("{}x{}", rotations.d(), rotations.p()),
            ));
        }
        Ok(())
    }
}

/// Removes each coordinate's mean, i.e. right-multiplies by `I − 11ᵀ/m`.
pub fn center(cloud: &PointCloud) -> PointCloud {
    let mean = cloud.centroid();
    let mut out = cloud.points.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    PointCloud { points: out }
}

/// Least-squares consensus `Â = (1/n) Σ_j O_jᵀ A_j (I − P)`.
///
/// `Â` has zero column mean, which fixes the global translation gauge.
pub fn consensus(clouds: &PointCloudSet, rotations: &RotationStack) -> Result<DMatrix<f64>> {
    clouds.check_rotations(rotations)?;
    let mut acc = DMatrix::zeros(clouds.d(), clouds.m());
    for (c, o) in clouds.clouds.iter().zip(rotations.blocks()) {
        acc += o.transpose() * center(c).points;
    }
    Ok(acc / clouds.n() as f64)
}

/// Optimal shifts `μ̂_i = (1/m)(Â − O_iᵀ A_i) 1` given the rotations.
pub fn estimate_shifts(clouds: &PointCloudSet, rotations: &RotationStack) -> Result<Vec<DVector<f64>>> {
    let a_hat = consensus(clouds, rotations)?;
    let a_hat_mean = a_hat.column_mean();
    Ok(clouds
        .clouds
        .iter()
        .zip(rotations.blocks())
        .map(|(c, o)| &a_hat_mean - o.transpose() * c.centroid())
        .collect())
}

/// Stacks `A_1, …, A_n` vertically into the `nd × m` matrix `D`.
pub fn build_data_matrix(clouds: &PointCloudSet) -> DMatrix<f64> {
    let d = clouds.d();
    let mut out = DMatrix::zeros(clouds.n() * d, clouds.m());
    for (i, c) in clouds.clouds.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(&c.points);
    }
    out
}

/// Symmetric `nd × nd` block matrix `C` with `d × d` blocks `C_ij = C_jiᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    d: usize,
    data: DMatrix<f64>,
}

impl GramMatrix {
    /// Validates block structure and symmetry, then mirrors the upper triangle
    /// so that symmetry holds exactly. Diagonal blocks must be PSD.
    pub fn new(data: DMatrix<f64>, d: usize) -> Result<Self> {
        let (r, c) = data.shape();
        if d == 0 || r != c || r == 0 || r % d != 0 {
            return Err(Error::mismatch(
                "gram matrix",
                format!("square with side a multiple of d={d}"),
                format!("{r}x{c}"),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("gram matrix has non-finite entries".into()));
        }
        let scale = data.norm().max(f64::MIN_POSITIVE);
        let asym = (&data - data.transpose()).norm();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidArgument(format!(
                "gram matrix is not symmetric (defect {asym:.3e})"
            )));
        }
        let mut data = data;
        for j in 0..r {
            for i in (j + 1)..r {
                data[(i, j)] = data[(j, i)];
            }
        }
        let n = r / d;
        for i in 0..n {
            let block = data.view((i * d, i * d), (d, d)).clone_owned();
            let min = linops::symmetric_eigenvalues(&block)?[0];
            if min < -1e-10 * block.norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "diagonal block {i} is not positive semidefinite (min eigenvalue {min:.3e})"
                )));
            }
        }
        Ok(Self { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.data.view((i * self.d, j * self.d), (self.d, self.d)).clone_owned()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn spectral_norm(&self) -> f64 {
        // symmetric: largest |eigenvalue|
        let ev = linops::symmetric_eigenvalues(&self.data).expect("validated finite");
        ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Block product `C S`, same shape as `S`.
    pub fn apply(&self, s: &BlockStack) -> Result<BlockStack> {
        self.check_stack(s)?;
        BlockStack::from_matrix(&self.data * s.as_matrix(), self.d)
    }

    /// Objective `⟨C, S Sᵀ⟩ = tr(Sᵀ C S)`.
    pub fn objective(&self, s: &BlockStack) -> Result<f64> {
        self.check_stack(s)?;
        let cs = &self.data * s.as_matrix();
        Ok(s.as_matrix().dot(&cs))
    }

    pub(crate) fn check_stack(&self, s: &BlockStack) -> Result<()> {
        if s.n() != self.n || s.d() != self.d {
            return Err(Error::mismatch(
                "stack vs gram",
                format!("n={} d={}", self.n, self.d),
                format!("n={} d={}", s.n(), s.d()),
            ));
        }
        Ok(())
    }
}

/// `C = D̃ D̃ᵀ` where `D̃` stacks the (optionally centered) clouds.
pub fn build_gram(clouds: &PointCloudSet, center_first: bool) -> GramMatrix {
    let d = clouds.d();
    let n = clouds.n();
    let prepared: Vec<DMatrix<f64>> = clouds
        .clouds
        .iter()
        .map(|c| if center_first { center(c).points } else { c.points.clone() })
        .collect();
    let mut data = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        for j in i..n {
            let block = &prepared[i] * prepared[j].transpose();
            data.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            if i != j {
                data.view_mut((j * d, i * d), (d, d)).copy_from(&block.transpose());
            }
        }
    }
    GramMatrix { n, d, data }
}

/// Planted instance with retained ground truth and noise draws.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    /// Latent cloud `A`.
    pub truth: PointCloud,
    /// Ground-truth transforms `O_i` (the stack `Z`).
    pub rotations: RotationStack,
    /// Shifts `μ_i`; all zero when the instance was generated without shifts.
    pub shifts: Vec<DVector<f64>>,
    pub sigma: f64,
    /// Unit-variance noise draws `W_i`, so that `Δ_i = σ W_i`.
    pub noise: Vec<DMatrix<f64>>,
    pub observed: PointCloudSet,
    pub seed: u64,
}

impl SyntheticInstance {
    /// Assembles `A_i = O_i (A − μ_i 1ᵀ) + σ W_i`.
    pub fn assemble(
        truth: PointCloud,
        rotations: RotationStack,
        shifts: Vec<DVector<f64>>,
        sigma: f64,
        noise: Vec<DMatrix<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let (d, m) = truth.points.shape();
        let n = rotations.n();
        if rotations.d() != d || rotations.p() != d {
            return Err(Error::mismatch("rotation blocks", format!("{d}x{d}"), format!("{}x{}", rotations.d(), rotations.p())));
        }
        if shifts.len() != n || noise.len() != n {
            return Err(Error::mismatch("shifts/noise count", n, format!("{}/{}", shifts.len(), noise.len())));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        let mut clouds = Vec::with_capacity(n);
        for i in 0..n {
            if shifts[i].len() != d || noise[i].shape() != (d, m) {
                return Err(Error::BadCloud { index: i, reason: "shift or noise has the wrong shape".into() });
            }
            let mut shifted = truth.points.clone();
            for mut col in shifted.column_iter_mut() {
                col -= &shifts[i];
            }
            let obs = rotations.block(i) * shifted + &noise[i] * sigma;
            clouds.push(PointCloud::new(obs).map_err(|e| Error::BadCloud { index: i, reason: e.to_string() })?);
        }
        Ok(Self { truth, rotations, shifts, sigma, noise, observed: PointCloudSet::new(clouds)?, seed })
    }

    pub fn has_shifts(&self) -> bool {
        self.shifts.iter().any(|s| s.iter().any(|v| *v != 0.0))
    }

    /// Noise blocks `Δ_i = A_i − O_i (A − μ_i 1ᵀ)` recomputed from the observations.
    pub fn noise_blocks(&self) -> Vec<DMatrix<f64>> {
        self.observed
            .clouds()
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut shifted = self.truth.points.clone();
                for mut col in shifted.column_iter_mut() {
                    col -= &self.shifts[i];
                }
                c.points() - self.rotations.block(i) * shifted
            })
            .collect()
    }

    pub fn gram(&self) -> GramMatrix {
        build_gram(&self.observed, self.has_shifts())
    }
}
