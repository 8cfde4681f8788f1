//! Horizontal attribution alignment.
//!
//! Each embedding batch `Z` (N×D) is summarized by a zero-diagonal
//! self-expression matrix `B` with `Z ≈ Z·B`, regularized by a nuclear norm
//! that is handled through the reweighting `Tr(Bᵀ Φ B)` with
//! `Φ = (B Bᵀ + δI)^{-1/2}`. The symmetrized `|B|` is read as the adjacency
//! of a graph over attributions; the graph is mapped to the zero-mean
//! Gaussian whose covariance is the Laplacian pseudoinverse, and graphs are
//! compared with the squared Bures–Wasserstein distance.

use crate::error::{Error, Result};
use crate::ndmath::{psd_function, Graph, Matrix, SpectralFn, Var, DEFAULT_SPECTRAL_TOL};

pub const DEFAULT_DELTA: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 30;
/// Diagonal jitter added once when the regularized Gram matrix is singular.
pub const SINGULAR_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfExpressionConfig {
    pub nu: f64,
    pub delta: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl SelfExpressionConfig {
    pub fn new(nu: f64) -> Self {
        Self {
            nu,
            delta: DEFAULT_DELTA,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfExpression {
    /// Coefficients, exactly zero on the diagonal.
    pub coefficients: Matrix,
    /// `(ZᵀZ + νΞ)^{-1}`.
    pub theta: Matrix,
    /// The reweighting matrix that produced `coefficients`.
    pub phi: Matrix,
    /// `Φ + Φᵀ`.
    pub xi: Matrix,
    pub nu: f64,
    pub delta: f64,
    /// Multipliers of the diagonal constraint.
    pub gamma: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct AttributionGraph {
    pub adjacency: Matrix,
    pub degree: Matrix,
    pub laplacian: Matrix,
    pub laplacian_pinv: Matrix,
}

fn regularized_inverse(h: &Matrix) -> Result<Matrix> {
    match h.inverse() {
        Ok(t) => Ok(t),
        Err(_) => {
            let jittered = h.add(&Matrix::identity(h.rows()).scale(SINGULAR_JITTER));
            jittered.inverse().map_err(|e| {
                Error::Numerical(format!("self-expression system is singular: {e}"))
            })
        }
    }
}

/// Minimizer of `½‖Z − ZB‖² + ν Tr(BᵀΦB)` over zero-diagonal `B` for a fixed
/// `Φ`, given `Θ = (ZᵀZ + νΞ)^{-1}`:
/// `B = I − νΘΞ − Θ·diag(γ)` with `γ_j = (1 − ν(ΘΞ)_jj) / Θ_jj`.
///
/// When `Ξ` is a multiple of the identity this is `B_ij = −Θ_ij / Θ_jj`.
pub fn constrained_coefficients(theta: &Matrix, xi: &Matrix, nu: f64) -> (Matrix, Vec<f64>) {
    let d = theta.rows();
    let p = theta.matmul(xi);
    let gamma: Vec<f64> = (0..d)
        .map(|j| (1.0 - nu * p[(j, j)]) / theta[(j, j)])
        .collect();
    let coef = Matrix::from_fn(d, d, |i, j| {
        if i == j {
            0.0
        } else {
            -nu * p[(i, j)] - theta[(i, j)] * gamma[j]
        }
    });
    (coef, gamma)
}

fn validate(batch: &Matrix, cfg: &SelfExpressionConfig) -> Result<()> {
    if !(cfg.nu > 0.0) {
        return Err(Error::Contract(format!("nu must be positive, got {}", cfg.nu)));
    }
    if !(cfg.delta > 0.0) {
        return Err(Error::Contract(format!("delta must be positive, got {}", cfg.delta)));
    }
    if batch.rows() < 2 || batch.cols() < 2 {
        return Err(Error::Contract(format!(
            "self-expression needs N >= 2 and D >= 2, got {:?}",
            batch.shape()
        )));
    }
    if !batch.is_finite() {
        return Err(Error::Input("embedding batch has non-finite entries".into()));
    }
    Ok(())
}

/// Alternates the closed-form `B` update with `Φ = (BBᵀ + δI)^{-1/2}`,
/// starting from `Φ = I`, until `max|ΔB| < tol` or `max_iter`.
pub fn solve_self_expression(batch: &Matrix, cfg: &SelfExpressionConfig) -> Result<SelfExpression> {
    validate(batch, cfg)?;
    let d = batch.cols();
    let gram = batch.t_matmul(batch);
    let mut phi = Matrix::identity(d);
    let mut prev_coef: Option<Matrix> = None;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let xi = phi.add(&phi.transpose());
        let theta = regularized_inverse(&gram.add(&xi.scale(cfg.nu)))?;
        let (coef, gamma) = constrained_coefficients(&theta, &xi, cfg.nu);
        let change = prev_coef.as_ref().map(|p| p.max_abs_diff(&coef));
        let converged = change.is_some_and(|c| c < cfg.tol);
        if converged || iterations >= cfg.max_iter.max(1) {
            return Ok(SelfExpression {
                coefficients: coef,
                theta,
                phi,
                xi,
                nu: cfg.nu,
                delta: cfg.delta,
                gamma,
                iterations,
                converged,
            });
        }
        let bbt = coef.matmul_t(&coef).add(&Matrix::identity(d).scale(cfg.delta));
        phi = psd_function(&bbt, SpectralFn::PinvSqrt, DEFAULT_SPECTRAL_TOL)?;
        prev_coef = Some(coef);
    }
}

/// Frobenius norm of `ZᵀZ·B − ZᵀZ + νΞB + diagMat(γ)` with `γ` recovered
/// from the diagonal of the remaining terms.
pub fn stationarity_residual(batch: &Matrix, se: &SelfExpression) -> f64 {
    let gram = batch.t_matmul(batch);
    let mut r = gram
        .matmul(&se.coefficients)
        .sub(&gram)
        .add(&se.xi.matmul(&se.coefficients).scale(se.nu));
    for j in 0..r.rows() {
        r[(j, j)] = 0.0;
    }
    r.frobenius_norm()
}

/// Objective `½‖Z − ZB‖² + ν Tr(BᵀΦB)` at a fixed `Φ`.
pub fn reweighted_objective(batch: &Matrix, coef: &Matrix, phi: &Matrix, nu: f64) -> f64 {
    let resid = batch.sub(&batch.matmul(coef));
    0.5 * resid.as_slice().iter().map(|v| v * v).sum::<f64>()
        + nu * coef.t_matmul(&phi.matmul(coef)).trace()
}

/// `A = (|B| + |Bᵀ|)/2`, `L = Deg − A`, `L⁺` by spectral pseudoinverse.
pub fn build_attribution_graph(coef: &Matrix) -> Result<AttributionGraph> {
    if !coef.is_square() {
        return Err(Error::Contract("coefficient matrix must be square".into()));
    }
    if coef.diag().iter().any(|&v| v != 0.0) {
        return Err(Error::Contract("coefficient matrix must have a zero diagonal".into()));
    }
    let abs = coef.map(f64::abs);
    let adjacency = abs.add(&abs.transpose()).scale(0.5);
    let degree = Matrix::from_diag(&adjacency.row_sums());
    let laplacian = degree.sub(&adjacency);
    let laplacian_pinv = psd_function(&laplacian, SpectralFn::Pinv, DEFAULT_SPECTRAL_TOL)?;
    Ok(AttributionGraph {
        adjacency,
        degree,
        laplacian,
        laplacian_pinv,
    })
}

/// Squared Bures–Wasserstein distance
/// `Tr(Σ_S + Σ_T − 2 (Σ_S^{1/2} Σ_T Σ_S^{1/2})^{1/2})`, clamped at zero.
pub fn bures_distance(sigma_s: &Matrix, sigma_t: &Matrix) -> Result<f64> {
    if !sigma_s.is_square() || sigma_s.shape() != sigma_t.shape() {
        return Err(Error::Contract(format!(
            "covariances must be square and equal-sized, got {:?} and {:?}",
            sigma_s.shape(),
            sigma_t.shape()
        )));
    }
    let root_s = psd_function(sigma_s, SpectralFn::Sqrt, DEFAULT_SPECTRAL_TOL)?;
    // domain check on the second argument
    psd_function(sigma_t, SpectralFn::Sqrt, DEFAULT_SPECTRAL_TOL)?;
    let inner = root_s.matmul(sigma_t).matmul(&root_s);
    let cross = psd_function(&inner, SpectralFn::Sqrt, DEFAULT_SPECTRAL_TOL)?;
    Ok((sigma_s.trace() + sigma_t.trace() - 2.0 * cross.trace()).max(0.0))
}

/// Records `B` as a function of `z` for a fixed reweighting `Ξ`.
pub fn coefficients_node(g: &mut Graph, batch: Var, xi: &Matrix, nu: f64) -> Result<Var> {
    let d = g.value(batch).cols();
    let zt = g.transpose(batch);
    let gram = g.matmul(zt, batch);
    let reg = g.leaf(xi.scale(nu));
    let h = g.add(gram, reg);
    let theta = match g.inverse(h) {
        Ok(t) => t,
        Err(_) => {
            let jitter = g.leaf(Matrix::identity(d).scale(SINGULAR_JITTER));
            let hj = g.add(h, jitter);
            g.inverse(hj).map_err(|e| {
                Error::Numerical(format!("self-expression system is singular: {e}"))
            })?
        }
    };
    let xi_c = g.leaf(xi.clone());
    let p = g.matmul(theta, xi_c);
    let p_diag = g.diag(p);
    let theta_diag = g.diag(theta);
    let scaled = g.scale(p_diag, -nu);
    let num = g.offset(scaled, 1.0);
    let gamma = g.div(num, theta_diag);
    let theta_gamma = g.mul_row(theta, gamma);
    let eye = g.leaf(Matrix::identity(d));
    let nu_p = g.scale(p, nu);
    let b0 = g.sub(eye, nu_p);
    let b1 = g.sub(b0, theta_gamma);
    let off_diag = g.leaf(Matrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { 1.0 }));
    Ok(g.mul(b1, off_diag))
}

/// Records `L⁺` of the attribution graph of `b`.
pub fn laplacian_pinv_node(g: &mut Graph, coef: Var) -> Result<Var> {
    let abs = g.abs(coef);
    let abs_t = g.transpose(abs);
    let sum = g.add(abs, abs_t);
    let adjacency = g.scale(sum, 0.5);
    let degrees = g.row_sums(adjacency);
    let degree = g.diag_mat(degrees);
    let laplacian = g.sub(degree, adjacency);
    g.spectral(laplacian, SpectralFn::Pinv, DEFAULT_SPECTRAL_TOL)
}

/// Records the squared Bures–Wasserstein distance between two PSD nodes.
pub fn bures_node(g: &mut Graph, sigma_s: Var, sigma_t: Var) -> Result<Var> {
    let root_s = g.spectral(sigma_s, SpectralFn::Sqrt, DEFAULT_SPECTRAL_TOL)?;
    let left = g.matmul(root_s, sigma_t);
    let inner = g.matmul(left, root_s);
    let cross = g.spectral(inner, SpectralFn::Sqrt, DEFAULT_SPECTRAL_TOL)?;
    let ts = g.trace(sigma_s);
    let tt = g.trace(sigma_t);
    let tc = g.trace(cross);
    let both = g.add(ts, tt);
    let twice = g.scale(tc, 2.0);
    let value = g.sub(both, twice);
    Ok(g.clamp(value, 0.0, f64::INFINITY))
}

/// Records `d_W` between the attribution graphs of two embedding batches.
pub fn graph_distance_node(
    g: &mut Graph,
    z_s: Var,
    z_t: Var,
    cfg: &SelfExpressionConfig,
) -> Result<Var> {
    let mut pinvs = [z_s, z_t];
    for slot in pinvs.iter_mut() {
        let se = solve_self_expression(g.value(*slot), cfg)?;
        let coef = coefficients_node(g, *slot, &se.xi, cfg.nu)?;
        *slot = laplacian_pinv_node(g, coef)?;
    }
    bures_node(g, pinvs[0], pinvs[1])
}

/// Records `L_A = d_W(users) + d_W(items)`.
pub fn horizontal_loss_node(
    g: &mut Graph,
    users: (Var, Var),
    items: (Var, Var),
    cfg: &SelfExpressionConfig,
) -> Result<Var> {
    let d = g.value(users.0).cols();
    if [users.1, items.0, items.1]
        .iter()
        .any(|&v| g.value(v).cols() != d)
    {
        return Err(Error::Contract("embedding batches must share one width".into()));
    }
    let du = graph_distance_node(g, users.0, users.1, cfg)?;
    let di = graph_distance_node(g, items.0, items.1, cfg)?;
    Ok(g.add(du, di))
}

/// `L_A` on plain matrices.
pub fn horizontal_loss(
    u_s: &Matrix,
    u_t: &Matrix,
    v_s: &Matrix,
    v_t: &Matrix,
    cfg: &SelfExpressionConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = [u_s, u_t, v_s, v_t].map(|m| g.leaf(m.clone()));
    let l = horizontal_loss_node(&mut g, (vars[0], vars[1]), (vars[2], vars[3]), cfg)?;
    Ok(g.value(l).item())
}
