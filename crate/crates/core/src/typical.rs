//! Typical sample selection: an entropy-regularized soft clustering of each
//! embedding attribution (column) into `K` scalar proxies.
//!
//! For column `q` the solver minimizes
//! `ℓ_q = Σ_ij Ψ_ij (z_iq − m_jq)² + α Σ_ij Ψ_ij log Ψ_ij` subject to
//! row-stochastic `Ψ`, alternating the soft-min assignment update with the
//! weighted-mean proxy update. Each block update is exact, so `ℓ_q` never
//! increases.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ndmath::{ColumnMix, Graph, Matrix, Var};

/// Proxies whose assignment mass falls below this are left where they are.
pub const EMPTY_MASS: f64 = 1e-300;

/// Floor applied to assignment entries so they stay strictly positive.
const PSI_FLOOR: f64 = 1e-300;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Clone)]
pub struct SelectionProblem {
    /// `N×D` embedding batch.
    pub batch: Matrix,
    /// Proxies per attribution.
    pub proxies: usize,
    /// Entropy strength.
    pub alpha: f64,
    /// Relative objective change that stops the alternation.
    pub tol: f64,
    pub max_iter: usize,
}

impl SelectionProblem {
    pub fn new(batch: Matrix, proxies: usize, alpha: f64) -> Self {
        Self {
            batch,
            proxies,
            alpha,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.batch.rows();
        if self.proxies == 0 || self.proxies > n {
            return Err(Error::Contract(format!(
                "proxy count K={} must satisfy 1 <= K <= N={n}",
                self.proxies
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Contract(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !self.batch.is_finite() {
            return Err(Error::Input("embedding batch has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Solution for one attribution.
#[derive(Debug, Clone)]
pub struct AttributionSelection {
    pub proxies: Vec<f64>,
    /// `N×K` row-stochastic assignments.
    pub psi: Matrix,
    /// Objective after each alternation.
    pub objective_trace: Vec<f64>,
    /// Proxies that were left unchanged in the last proxy update.
    pub frozen: Vec<bool>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// `K×D` typical samples.
    pub proxies: Matrix,
    pub attributions: Vec<AttributionSelection>,
}

impl SelectionResult {
    pub fn psi(&self, q: usize) -> &Matrix {
        &self.attributions[q].psi
    }

    pub fn objective_trace(&self, q: usize) -> &[f64] {
        &self.attributions[q].objective_trace
    }

    /// Squared distances `ζ_ij = (z_iq − m_jq)²`, recomputed on demand.
    pub fn zeta(&self, batch: &Matrix, q: usize) -> Matrix {
        squared_distances(&batch.column(q), &self.attributions[q].proxies)
    }

    /// Frozen-assignment mixing weights: `M = Wᵀz` per column, with the
    /// assignments held constant.
    pub fn mixing(&self) -> ColumnMix {
        let count = self.proxies.rows();
        let d = self.proxies.cols();
        let mut offset = Matrix::zeros(count, d);
        let weights = self
            .attributions
            .iter()
            .enumerate()
            .map(|(q, sel)| {
                let psi = &sel.psi;
                let mut w = Matrix::zeros(psi.rows(), count);
                for j in 0..count {
                    if sel.frozen[j] {
                        offset[(j, q)] = sel.proxies[j];
                        continue;
                    }
                    let mass: f64 = (0..psi.rows()).map(|i| psi[(i, j)]).sum();
                    for i in 0..psi.rows() {
                        w[(i, j)] = psi[(i, j)] / mass;
                    }
                }
                w
            })
            .collect();
        ColumnMix { weights, offset }
    }
}

fn squared_distances(z_col: &[f64], proxies: &[f64]) -> Matrix {
    Matrix::from_fn(z_col.len(), proxies.len(), |i, j| {
        let d = z_col[i] - proxies[j];
        d * d
    })
}

/// Soft-min assignments `Ψ_ij ∝ exp(−ζ_ij/α)`, evaluated in log space.
pub fn update_assignments(z_col: &[f64], proxies: &[f64], alpha: f64) -> Result<Matrix> {
    assignments_with_entropy(z_col, proxies, alpha).map(|(psi, _)| psi)
}

/// Assignments together with `Σ Ψ ln Ψ`, reusing the log-domain values so
/// the entropy costs no extra logarithms.
fn assignments_with_entropy(z_col: &[f64], proxies: &[f64], alpha: f64) -> Result<(Matrix, f64)> {
    if proxies.is_empty() {
        return Err(Error::Contract("at least one proxy is required".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("alpha must be positive, got {alpha}")));
    }
    let count = proxies.len();
    let mut psi = Matrix::zeros(z_col.len(), count);
    let mut logits = vec![0.0; count];
    let mut entropy = 0.0;
    for (i, &batch) in z_col.iter().enumerate() {
        for (r, &m) in logits.iter_mut().zip(proxies) {
            *r = -(batch - m) * (batch - m) / alpha;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let row = psi.row_mut(i);
        let mut total = 0.0;
        for (r, &l) in row.iter_mut().zip(&logits) {
            *r = (l - max).exp();
            total += *r;
        }
        let log_total = total.ln();
        for (r, &l) in row.iter_mut().zip(&logits) {
            let p = *r / total;
            if p > 0.0 {
                entropy += p * (l - max - log_total);
            }
            *r = p.max(PSI_FLOOR);
        }
    }
    Ok((psi, entropy))
}

/// Weighted means `m_j = Σ_i Ψ_ij z_i / Σ_i Ψ_ij`. A proxy with no mass keeps
/// its current value and is flagged in the returned mask.
pub fn update_proxies(z_col: &[f64], psi: &Matrix, current: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let count = psi.cols();
    let mut mass = vec![0.0; count];
    let mut weighted = vec![0.0; count];
    for (i, &batch) in z_col.iter().enumerate() {
        for (j, &p) in psi.row(i).iter().enumerate() {
            mass[j] += p;
            weighted[j] += p * batch;
        }
    }
    let mut frozen = vec![false; count];
    let proxies = (0..count)
        .map(|j| {
            if mass[j] < EMPTY_MASS {
                frozen[j] = true;
                current[j]
            } else {
                weighted[j] / mass[j]
            }
        })
        .collect();
    (proxies, frozen)
}

/// `ℓ_q` including the entropy term.
pub fn objective(z_col: &[f64], proxies: &[f64], psi: &Matrix, alpha: f64) -> f64 {
    let mut entropy = 0.0;
    for p in psi.as_slice() {
        if *p > 0.0 {
            entropy += p * p.ln();
        }
    }
    distortion(z_col, proxies, psi) + alpha * entropy
}

fn distortion(z_col: &[f64], proxies: &[f64], psi: &Matrix) -> f64 {
    let mut total = 0.0;
    for (i, &batch) in z_col.iter().enumerate() {
        for (&p, &m) in psi.row(i).iter().zip(proxies) {
            total += p * (batch - m) * (batch - m);
        }
    }
    total
}

/// `K` evenly spaced order statistics of the column.
pub fn initial_proxies(z_col: &[f64], count: usize) -> Vec<f64> {
    let mut sorted = z_col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if count == 1 {
        return vec![sorted[(n - 1) / 2]];
    }
    (0..count)
        .map(|j| {
            let pos = (j as f64) * ((n - 1) as f64) / ((count - 1) as f64);
            sorted[pos.round() as usize]
        })
        .collect()
}

/// Runs the alternation on one attribution starting from `proxies`.
pub fn select_attribution_from(
    z_col: &[f64],
    mut proxies: Vec<f64>,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<AttributionSelection> {
    let count = proxies.len();
    let mut psi = Matrix::zeros(z_col.len(), count);
    let mut frozen = vec![false; count];
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let (assigned, entropy) = assignments_with_entropy(z_col, &proxies, alpha)?;
        psi = assigned;
        let (next, fr) = update_proxies(z_col, &psi, &proxies);
        proxies = next;
        frozen = fr;
        let obj = distortion(z_col, &proxies, &psi) + alpha * entropy;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (prev - obj).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE) {
                trace.push(obj);
                converged = true;
                break;
            }
        }
        trace.push(obj);
    }
    Ok(AttributionSelection {
        proxies,
        psi,
        objective_trace: trace,
        frozen,
        converged,
    })
}

pub fn select_attribution(
    z_col: &[f64],
    count: usize,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<AttributionSelection> {
    if count == 0 || count > z_col.len() {
        return Err(Error::Contract(format!(
            "proxy count K={count} must satisfy 1 <= K <= N={}",
            z_col.len()
        )));
    }
    select_attribution_from(z_col, initial_proxies(z_col, count), alpha, tol, max_iter)
}

/// Solves every attribution independently, in attribution order.
pub fn select_typical_samples(problem: &SelectionProblem) -> Result<SelectionResult> {
    problem.validate()?;
    let d = problem.batch.cols();
    let mut m = Matrix::zeros(problem.proxies, d);
    let mut attributions = Vec::with_capacity(d);
    for q in 0..d {
        let sel = select_attribution(
            &problem.batch.column(q),
            problem.proxies,
            problem.alpha,
            problem.tol,
            problem.max_iter,
        )?;
        m.set_column(q, &sel.proxies);
        attributions.push(sel);
    }
    Ok(SelectionResult { proxies: m, attributions })
}

/// Records the typical samples of `z` in the graph. Assignments are stopped
/// constants; the gradient reaches `z` through the weighted means.
pub fn typical_samples_node(g: &mut Graph, batch: Var, count: usize, alpha: f64) -> Result<(Var, SelectionResult)> {
    let problem = SelectionProblem::new(g.value(batch).clone(), count, alpha);
    let result = select_typical_samples(&problem)?;
    let node = g.column_mix(batch, Rc::new(result.mixing()));
    Ok((node, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_proxy_rows_are_unity() {
        let psi = update_assignments(&[0.3, -2.0, 5.0], &[1.0], 0.1).unwrap();
        assert!(psi.as_slice().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn midpoint_splits_evenly() {
        let psi = update_assignments(&[0.5], &[0.0, 1.0], 0.1).unwrap();
        assert_eq!(psi.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmin_example() {
        let psi = update_assignments(&[0.0], &[0.0, 1.0], 0.1).unwrap();
        let e = (-10f64).exp();
        assert!((psi[(0, 0)] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((psi[(0, 1)] - e / (1.0 + e)).abs() < 1e-15);
        assert!((psi[(0, 0)] - 0.9999546).abs() < 1e-7);
        assert!((psi[(0, 1)] - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn zero_proxies_is_a_contract_error() {
        assert!(matches!(
            update_assignments(&[1.0], &[], 0.1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn proxy_updates() {
        let ones = Matrix::filled(2, 1, 1.0);
        assert_eq!(update_proxies(&[0.0, 2.0], &ones, &[0.0]).0, vec![1.0]);

        let hard = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(update_proxies(&[0.0, 2.0], &hard, &[5.0, 5.0]).0, vec![0.0, 2.0]);

        let soft = Matrix::from_rows(&[vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
        assert_eq!(update_proxies(&[0.0, 4.0], &soft, &[0.0, 0.0]).0, vec![1.0, 3.0]);
    }

    #[test]
    fn empty_mass_proxy_is_frozen() {
        let psi = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let (p, frozen) = update_proxies(&[1.0, 3.0], &psi, &[0.0, 7.0]);
        assert_eq!(p, vec![2.0, 7.0]);
        assert_eq!(frozen, vec![false, true]);
    }

    #[test]
    fn quantile_initialization() {
        assert_eq!(initial_proxies(&[4.0, 1.0, 3.0, 2.0, 0.0], 3), vec![0.0, 2.0, 4.0]);
        assert_eq!(initial_proxies(&[4.0, 1.0, 3.0], 1), vec![3.0]);
    }

    #[test]
    fn invalid_problems() {
        let batch = Matrix::zeros(3, 2);
        assert!(select_typical_samples(&SelectionProblem::new(batch.clone(), 0, 0.1)).is_err());
        assert!(select_typical_samples(&SelectionProblem::new(batch.clone(), 4, 0.1)).is_err());
        assert!(select_typical_samples(&SelectionProblem::new(batch, 2, 0.0)).is_err());
    }
}
