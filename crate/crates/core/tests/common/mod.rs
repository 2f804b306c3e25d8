//! Reference implementations used as test oracles.
//!
//! Nothing here calls the library's decompositions: eigenvalues come from
//! cyclic Jacobi rotations, polar factors from the Newton iteration
//! `X ← (X + X⁻ᵀ)/2`, and optima from exhaustive search.
#![allow(dead_code)]

use gopp::linops::{gaussian_matrix, random_orthogonal, BlockStack, StiefelStack};
use gopp::model::GramMatrix;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ascending eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * a.norm().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Descending singular values by one-sided Jacobi: columns are rotated
/// pairwise until mutually orthogonal, then their norms are read off.
pub fn singular_values_oracle(x: &DMatrix<f64>) -> Vec<f64> {
    let mut a = if x.nrows() >= x.ncols() { x.clone() } else { x.transpose() };
    let k = a.ncols();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma.abs() <= 1e-16 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..a.nrows() {
                    let (ap, aq) = (a[(r, p)], a[(r, q)]);
                    a[(r, p)] = c * ap - s * aq;
                    a[(r, q)] = s * ap + c * aq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `tr(P(X)ᵀX)` through the Newton polar factor when `X` is square and well
/// conditioned; otherwise the sum of one-sided Jacobi singular values.
pub fn nuclear_norm_oracle(x: &DMatrix<f64>) -> f64 {
    let sv = singular_values_oracle(x);
    if x.is_square() && *sv.last().unwrap() > 1e-6 * sv[0] {
        polar_newton(x).dot(x)
    } else {
        sv.iter().sum()
    }
}

pub fn spectral_norm_oracle(x: &DMatrix<f64>) -> f64 {
    singular_values_oracle(x)[0]
}

/// Orthogonal polar factor of an invertible square matrix by Newton iteration.
pub fn polar_newton(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = x.clone();
    for _ in 0..100 {
        let inv_t = y.clone().try_inverse().expect("invertible").transpose();
        let next = (&y + inv_t) * 0.5;
        let done = (&next - &y).norm() <= 1e-15 * next.norm();
        y = next;
        if done {
            break;
        }
    }
    y
}

/// `max ⟨C, ssᵀ⟩` over `s ∈ {±1}ⁿ` with `s_1 = +1`.
pub fn enumerate_sign_max(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let s: Vec<f64> = (0..n).map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += c[(i, j)] * s[i] * s[j];
            }
        }
        best = best.max(v);
    }
    best
}

/// `d_F` for `p = 2` by a grid over rotations and reflections, refined around the best angle.
pub fn df_angle_grid(x: &DMatrix<f64>, y: &DMatrix<f64>, points: usize) -> f64 {
    let eval = |theta: f64, reflect: bool| {
        let (c, s) = (theta.cos(), theta.sin());
        let q = if reflect {
            DMatrix::from_row_slice(2, 2, &[c, s, s, -c])
        } else {
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        };
        (x - y * q).norm()
    };
    let mut best = f64::INFINITY;
    for reflect in [false, true] {
        let step = std::f64::consts::TAU / points as f64;
        let mut best_theta = 0.0;
        let mut local = f64::INFINITY;
        for k in 0..points {
            let theta = k as f64 * step;
            let v = eval(theta, reflect);
            if v < local {
                local = v;
                best_theta = theta;
            }
        }
        // golden-section refinement inside the bracketing cell
        let (mut lo, mut hi) = (best_theta - step, best_theta + step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if eval(a, reflect) < eval(b, reflect) {
                hi = b;
            } else {
                lo = a;
            }
        }
        best = best.min(local).min(eval((lo + hi) / 2.0, reflect));
    }
    best
}

/// `[CS]_i = Σ_j C_ij S_j` by explicit loops.
pub fn naive_apply(c: &GramMatrix, s: &BlockStack) -> DMatrix<f64> {
    let (n, d, p) = (s.n(), s.d(), s.p());
    let cm = c.as_matrix();
    let sm = s.as_matrix();
    let mut out = DMatrix::zeros(n * d, p);
    for i in 0..n {
        for j in 0..n {
            for a in 0..d {
                for b in 0..d {
                    for k in 0..p {
                        out[(i * d + a, k)] += cm[(i * d + a, j * d + b)] * sm[(j * d + b, k)];
                    }
                }
            }
        }
    }
    out
}

pub fn naive_objective(c: &GramMatrix, s: &BlockStack) -> f64 {
    let cs = naive_apply(c, s);
    let sm = s.as_matrix();
    let mut v = 0.0;
    for r in 0..sm.nrows() {
        for k in 0..sm.ncols() {
            v += sm[(r, k)] * cs[(r, k)];
        }
    }
    v
}

pub fn random_rotation_stack(n: usize, d: usize, rng: &mut ChaCha8Rng) -> StiefelStack {
    let blocks: Vec<DMatrix<f64>> = (0..n).map(|_| random_orthogonal(d, rng)).collect();
    StiefelStack::from_blocks(&blocks).unwrap()
}

pub fn random_gram(n: usize, d: usize, m: usize, rng: &mut ChaCha8Rng) -> GramMatrix {
    let data = gaussian_matrix(n * d, m, rng);
    GramMatrix::new(&data * data.transpose(), d).unwrap()
}

/// Random invertible matrix with `σ_min` bounded below by `floor`.
pub fn random_invertible(d: usize, floor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let x = gaussian_matrix(d, d, rng);
        if *singular_values_oracle(&x).last().unwrap() > floor {
            return x;
        }
    }
}
