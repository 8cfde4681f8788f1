use crate::error::{Error, Result};

use super::Matrix;

/// Default spectral cutoff, relative to the largest eigenvalue magnitude.
pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-8;

/// Eigen-gaps smaller than this use the derivative instead of the divided
/// difference in spectral backward passes.
pub const EIGEN_GAP_FLOOR: f64 = 1e-6;

/// Symmetric eigendecomposition: ascending eigenvalues and the matching
/// orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigPair {
    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn compose(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut scaled = v.clone();
        for i in 0..n {
            for (j, &s) in fl.iter().enumerate() {
                scaled[(i, j)] *= s;
            }
        }
        scaled.matmul_t(v)
    }

    pub fn reconstruct(&self) -> Matrix {
        self.compose(|l| l)
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, l| m.max(l.abs()))
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(S + Sᵀ)/2` first. Eigenvector signs are
/// normalized so the first non-negligible component is positive.
pub fn sym_eig(s: &Matrix) -> Result<EigPair> {
    if !s.is_square() {
        return Err(Error::Contract(format!(
            "sym_eig needs a square matrix, got {:?}",
            s.shape()
        )));
    }
    if !s.is_finite() {
        return Err(Error::Input("sym_eig input has non-finite entries".into()));
    }
    let n = s.rows();
    let mut a = s.symmetrize().into_vec();
    let mut v = Matrix::identity(n).into_vec();
    let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * fro || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                if t == 0.0 {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let lead = (0..n)
            .map(|k| v[k * n + src])
            .find(|x| x.abs() > 1e-12)
            .unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vecs[(k, dst)] = sign * v[k * n + src];
        }
    }
    Ok(EigPair {
        eigenvalues,
        eigenvectors: vecs,
    })
}

/// Scalar maps applied to the spectrum of a symmetric PSD matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralFn {
    Sqrt,
    Pinv,
    PinvSqrt,
}

impl SpectralFn {
    /// Value at an eigenvalue; anything at or below `cutoff` maps to 0.
    pub fn value(self, lambda: f64, cutoff: f64) -> f64 {
        if lambda <= cutoff {
            return 0.0;
        }
        match self {
            SpectralFn::Sqrt => lambda.sqrt(),
            SpectralFn::Pinv => 1.0 / lambda,
            SpectralFn::PinvSqrt => 1.0 / lambda.sqrt(),
        }
    }

    /// Derivative, masked to 0 at or below `cutoff`.
    pub fn derivative(self, lambda: f64, cutoff: f64) -> f64 {
        if lambda <= cutoff {
            return 0.0;
        }
        match self {
            SpectralFn::Sqrt => 0.5 / lambda.sqrt(),
            SpectralFn::Pinv => -1.0 / (lambda * lambda),
            SpectralFn::PinvSqrt => -0.5 / (lambda * lambda.sqrt()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpectralFn::Sqrt => "sqrt",
            SpectralFn::Pinv => "pinv",
            SpectralFn::PinvSqrt => "pinv_sqrt",
        }
    }
}

/// Absolute cutoff for a relative tolerance.
pub fn spectral_cutoff(eig: &EigPair, tol: f64) -> f64 {
    tol * eig.max_abs_eigenvalue()
}

/// Applies `f` to the spectrum using an absolute cutoff.
///
/// `Sqrt` fails with a domain error when an eigenvalue lies below `-cutoff`.
pub fn apply_spectral(eig: &EigPair, f: SpectralFn, cutoff: f64) -> Result<Matrix> {
    if f == SpectralFn::Sqrt {
        if let Some(&l) = eig.eigenvalues.iter().find(|&&l| l < -cutoff) {
            return Err(Error::Domain(format!(
                "sqrt of matrix with negative eigenvalue {l:e} (cutoff {cutoff:e})"
            )));
        }
    }
    Ok(eig.compose(|l| f.value(l, cutoff)))
}

/// `V·f(clamp(λ))·Vᵀ` for a symmetric PSD matrix. Eigenvalues within
/// `tol · max|λ|` of zero are treated as exact zeros.
pub fn psd_function(s: &Matrix, f: SpectralFn, tol: f64) -> Result<Matrix> {
    let eig = sym_eig(s)?;
    let cutoff = spectral_cutoff(&eig, tol);
    apply_spectral(&eig, f, cutoff)
}

/// Pullback of `Y = V f(Λ) Vᵀ` (Daleckii–Krein): `S̄ = V (F ∘ Vᵀ Ȳ V) Vᵀ`
/// with `F` the matrix of first divided differences of `f`.
pub(crate) fn spectral_backward(
    eig: &EigPair,
    f: SpectralFn,
    cutoff: f64,
    upstream: &Matrix,
) -> Matrix {
    let n = eig.eigenvalues.len();
    let v = &eig.eigenvectors;
    let g = upstream.symmetrize();
    let mut inner = v.t_matmul(&g).matmul(v);
    let lam = &eig.eigenvalues;
    for i in 0..n {
        for j in 0..n {
            let (li, lj) = (lam[i], lam[j]);
            let dd = if (li - lj).abs() >= EIGEN_GAP_FLOOR {
                (f.value(li, cutoff) - f.value(lj, cutoff)) / (li - lj)
            } else {
                f.derivative(0.5 * (li + lj), cutoff)
            };
            inner[(i, j)] *= dd;
        }
    }
    v.matmul(&inner).matmul_t(v)
}

/// Pullback of the ascending eigenvalue vector: `S̄ = V diag(ḡ) Vᵀ`.
pub(crate) fn eigenvalues_backward(eig: &EigPair, upstream: &[f64]) -> Matrix {
    let mut idx = 0;
    eig.compose(|_| {
        let g = upstream[idx];
        idx += 1;
        g
    })
}
