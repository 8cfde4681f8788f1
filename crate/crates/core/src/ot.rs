//! Vertical attribution alignment: per-attribution entropy-regularized
//! optimal transport between source and target typical samples.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ndmath::{Graph, Matrix, Var};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
/// Default regularization as a fraction of the mean ground cost.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 0.05;

/// Scalings further than this from 1 are folded back into the log
/// potentials.
const ABSORB_LIMIT: f64 = 1e8;
/// Ratio between consecutive regularization strengths of the warm start.
const ANNEAL_FACTOR: f64 = 8.0;
/// Scaling iterations at the target `ε` before switching to Newton steps.
const FINAL_SCALING: usize = 30;

/// How the entropic regularization strength is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    /// Multiple of the mean of the cost matrix, computed per call.
    RelativeToMeanCost(f64),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::RelativeToMeanCost(DEFAULT_RELATIVE_EPSILON)
    }
}

impl Epsilon {
    fn resolve(self, cost: &Matrix) -> Result<f64> {
        let eps = match self {
            Epsilon::Absolute(e) => e,
            Epsilon::RelativeToMeanCost(r) => {
                if !(r > 0.0) {
                    return Err(Error::Contract(format!(
                        "epsilon factor must be positive, got {r}"
                    )));
                }
                // all-zero costs: any positive value yields the uniform plan
                (r * cost.sum() / cost.len() as f64).max(f64::MIN_POSITIVE)
            }
        };
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Contract(format!("epsilon must be positive, got {eps}")));
        }
        Ok(eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: Epsilon,
    /// Maximum row-marginal deviation accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::default(),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(epsilon: Epsilon) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

/// Transport plan between two sets of `K` scalar atoms with uniform mass.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub pi: Matrix,
    pub cost: Matrix,
    pub epsilon: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Largest deviation of a row or column sum from `1/K`.
    pub marginal_error: f64,
}

impl Coupling {
    /// `Σ_ij π_ij ℳ_ij`.
    pub fn transport_cost(&self) -> f64 {
        self.pi.hadamard(&self.cost).sum()
    }
}

pub fn cost_matrix(src: &[f64], tgt: &[f64]) -> Matrix {
    Matrix::from_fn(src.len(), tgt.len(), |i, j| {
        let d = src[i] - tgt[j];
        d * d
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Potentials<'a> {
    cost: &'a Matrix,
    eps: f64,
    log_mass: f64,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Potentials<'_> {
    /// One exact log-domain update of both potentials.
    fn log_step(&mut self) {
        let k = self.f.len();
        let (c, eps) = (self.cost, self.eps);
        for i in 0..k {
            let g = &self.g;
            self.f[i] = eps * self.log_mass
                - eps * log_sum_exp((0..k).map(|j| (g[j] - c[(i, j)]) / eps));
        }
        for j in 0..k {
            let f = &self.f;
            self.g[j] = eps * self.log_mass
                - eps * log_sum_exp((0..k).map(|i| (f[i] - c[(i, j)]) / eps));
        }
    }

    /// Dual objective `Σ(f+g)/K − ε Σ π`, concave in the potentials.
    fn dual(&self) -> f64 {
        let mass = self.log_mass.exp();
        let linear: f64 = self.f.iter().chain(&self.g).sum::<f64>() * mass;
        linear - self.eps * self.kernel().sum()
    }

    /// Damped Newton ascent on the dual, with the last target potential
    /// pinned to remove the constant shift. Returns false when no step
    /// improves the dual.
    fn newton_step(&mut self, pi: &Matrix) -> bool {
        let k = self.f.len();
        if k < 2 {
            return false;
        }
        let mass = self.log_mass.exp();
        let rows: Vec<f64> = pi.row_sums().iter().map(|r| r.max(f64::MIN_POSITIVE)).collect();
        let cols = t_matvec(pi, &vec![1.0; k]);
        let res_f: Vec<f64> = rows.iter().map(|r| self.eps * (mass - r)).collect();
        let res_g: Vec<f64> = cols.iter().map(|c| self.eps * (mass - c)).collect();
        // Schur complement on the target block, last coordinate dropped
        let m = k - 1;
        let scaled = Matrix::from_fn(k, k, |i, j| pi[(i, j)] / rows[i].sqrt());
        let cross = scaled.t_matmul(&scaled);
        let schur = Matrix::from_fn(m, m, |a, b| {
            if a == b {
                cols[a] - cross[(a, b)]
            } else {
                -cross[(a, b)]
            }
        });
        let weighted: Vec<f64> = (0..k).map(|i| res_f[i] / rows[i]).collect();
        let through = t_matvec(pi, &weighted);
        let rhs: Vec<f64> = (0..m).map(|j| res_g[j] - through[j]).collect();
        let Some(mut dg) = spd_solve(&schur, &rhs) else {
            return false;
        };
        dg.push(0.0);
        let spread = matvec(pi, &dg);
        let df: Vec<f64> = (0..k).map(|i| (res_f[i] - spread[i]) / rows[i]).collect();
        let start = (self.f.clone(), self.g.clone());
        let base = self.dual();
        let mut t = 1.0;
        for _ in 0..30 {
            for i in 0..k {
                self.f[i] = start.0[i] + t * df[i];
                self.g[i] = start.1[i] + t * dg[i];
            }
            let value = self.dual();
            if value.is_finite() && value > base {
                return true;
            }
            t *= 0.5;
        }
        self.f = start.0;
        self.g = start.1;
        false
    }

    /// Scaling iterations at the current `ε` until the row marginals are
    /// within `tol` or `budget` runs out. Leaves the best iterate (by row
    /// error) absorbed into the potentials and returns the iterations used.
    fn scale(&mut self, tol: f64, budget: usize) -> usize {
        let k = self.f.len();
        let mass = self.log_mass.exp();
        self.log_step();
        let mut kernel = self.kernel();
        let mut u = vec![1.0; k];
        let mut v = vec![1.0; k];
        let mut kv = matvec(&kernel, &v);
        let mut best = (f64::INFINITY, self.f.clone(), self.g.clone());
        let mut used = 1;
        while used < budget {
            used += 1;
            let ktu = if usable(&kv) {
                for i in 0..k {
                    u[i] = mass / kv[i];
                }
                t_matvec(&kernel, &u)
            } else {
                Vec::new()
            };
            if !usable(&ktu) {
                self.absorb(&u, &v);
                self.log_step();
                kernel = self.kernel();
                u.fill(1.0);
                v.fill(1.0);
                kv = matvec(&kernel, &v);
                continue;
            }
            for j in 0..k {
                v[j] = mass / ktu[j];
            }
            kv = matvec(&kernel, &v);
            // columns are exact after the v update; rows carry the error
            let err = (0..k).fold(0.0f64, |m, i| m.max((u[i] * kv[i] - mass).abs()));
            if err < best.0 {
                best.0 = err;
                best.1 = (0..k).map(|i| self.f[i] + self.eps * u[i].ln()).collect();
                best.2 = (0..k).map(|j| self.g[j] + self.eps * v[j].ln()).collect();
            }
            if err <= tol {
                break;
            }
            let extreme = u
                .iter()
                .chain(&v)
                .any(|&s| !(1.0 / ABSORB_LIMIT..=ABSORB_LIMIT).contains(&s));
            if extreme {
                self.absorb(&u, &v);
                kernel = self.kernel();
                u.fill(1.0);
                v.fill(1.0);
                kv = matvec(&kernel, &v);
            }
        }
        if best.0.is_finite() {
            self.f = best.1;
            self.g = best.2;
        } else {
            self.absorb(&u, &v);
        }
        used
    }

    fn kernel(&self) -> Matrix {
        let k = self.f.len();
        Matrix::from_fn(k, k, |i, j| {
            ((self.f[i] + self.g[j] - self.cost[(i, j)]) / self.eps).exp()
        })
    }

    fn absorb(&mut self, u: &[f64], v: &[f64]) {
        for (f, s) in self.f.iter_mut().zip(u) {
            *f += self.eps * s.ln();
        }
        for (g, s) in self.g.iter_mut().zip(v) {
            *g += self.eps * s.ln();
        }
    }
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn t_matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(m.row(i)) {
            *o += a * xi;
        }
    }
    out
}

/// Cholesky solve, falling back to an explicit inverse when the factor
/// breaks down numerically.
fn spd_solve(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = Matrix::zeros(n, n);
    let mut ok = true;
    'outer: for i in 0..n {
        for j in 0..=i {
            let dot: f64 = l.row(i)[..j].iter().zip(&l.row(j)[..j]).map(|(x, y)| x * y).sum();
            let v = a[(i, j)] - dot;
            if i == j {
                if !(v > 0.0) {
                    ok = false;
                    break 'outer;
                }
                l.row_mut(i)[i] = v.sqrt();
            } else {
                l.row_mut(i)[j] = v / l[(j, j)];
            }
        }
    }
    if !ok {
        return a.inverse().ok().map(|inv| matvec(&inv, b));
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let dot: f64 = l.row(i)[..i].iter().zip(&y).map(|(x, y)| x * y).sum();
        y[i] = (b[i] - dot) / l[(i, i)];
    }
    for i in (0..n).rev() {
        let dot: f64 = (i + 1..n).map(|j| l[(j, i)] * y[j]).sum();
        y[i] = (y[i] - dot) / l[(i, i)];
    }
    Some(y)
}

fn usable(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x > 0.0 && x.is_finite())
}

/// Largest deviation of any row or column sum of `pi` from `mass`.
pub fn marginal_error(pi: &Matrix, mass: f64) -> f64 {
    let rows = pi.row_sums();
    let cols = t_matvec(pi, &vec![1.0; pi.rows()]);
    rows.iter()
        .chain(&cols)
        .fold(0.0, |m: f64, s| m.max((s - mass).abs()))
}

/// Entropy-regularized coupling under uniform `1/K` marginals with squared
/// ground cost `ℳ_ij = (src_i − tgt_j)²`.
///
/// Potentials live in the log domain and are warm-started along a short
/// geometric schedule of decreasing `ε`. Within a stage the scaling vectors
/// are updated multiplicatively against a kernel that already contains the
/// potentials, so every exponent stays bounded; a scaling that underflows
/// falls back to an exact log-domain step. When scaling has not reached
/// `tol` after half the remaining budget, the rest goes to damped Newton
/// steps on the dual, which converge quickly where scaling stalls.
pub fn sinkhorn_coupling(src: &[f64], tgt: &[f64], config: &SinkhornConfig) -> Result<Coupling> {
    let k = src.len();
    if k == 0 || tgt.len() != k {
        return Err(Error::Contract(format!(
            "sinkhorn needs two non-empty atom sets of equal size, got {} and {}",
            k,
            tgt.len()
        )));
    }
    if src.iter().chain(tgt).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite transport atoms".into()));
    }
    let cost = cost_matrix(src, tgt);
    let eps = config.epsilon.resolve(&cost)?;
    let mass = 1.0 / k as f64;
    let max_iter = config.max_iter.max(1);

    let top = cost.max_abs();
    let mut schedule = vec![eps];
    while schedule.len() < 12 && *schedule.last().unwrap() * ANNEAL_FACTOR <= top {
        schedule.push(schedule.last().unwrap() * ANNEAL_FACTOR);
    }
    schedule.reverse();

    let mut pot = Potentials {
        cost: &cost,
        eps: schedule[0],
        log_mass: mass.ln(),
        f: vec![0.0; k],
        g: vec![0.0; k],
    };
    let mut iterations = 0;
    let warm_tol = (config.tol * 1e3).max(1e-3 * mass);
    for &stage_eps in &schedule[..schedule.len() - 1] {
        pot.eps = stage_eps;
        let budget = (max_iter / (4 * schedule.len())).max(1);
        iterations += pot.scale(warm_tol, budget);
    }
    pot.eps = eps;
    let remaining = max_iter.saturating_sub(iterations).max(1);
    iterations += pot.scale(config.tol, remaining.div_ceil(2).min(FINAL_SCALING));

    let mut pi = pot.kernel();
    let mut marginal_error = marginal_error(&pi, mass);
    let mut best = (marginal_error, pot.f.clone(), pot.g.clone());
    while marginal_error > config.tol && iterations < max_iter {
        iterations += 1;
        if !pot.newton_step(&pi) {
            break;
        }
        pi = pot.kernel();
        marginal_error = self::marginal_error(&pi, mass);
        if marginal_error < best.0 {
            best = (marginal_error, pot.f.clone(), pot.g.clone());
        }
    }
    if marginal_error > best.0 {
        pot.f = best.1;
        pot.g = best.2;
        pi = pot.kernel();
        marginal_error = best.0;
    }
    Ok(Coupling {
        pi,
        cost,
        epsilon: eps,
        iterations_used: iterations,
        converged: marginal_error <= config.tol,
        marginal_error,
    })
}

/// `d_O = (1/K²) Σ_ij π̂_ij (src_i − tgt_j)²`.
pub fn ot_distance(src: &[f64], tgt: &[f64], config: &SinkhornConfig) -> Result<f64> {
    let c = sinkhorn_coupling(src, tgt, config)?;
    let k = src.len() as f64;
    Ok(c.transport_cost() / (k * k))
}

/// Records `L_O = (1/D) Σ_q [d_O(user col q) + d_O(item col q)]`. Plans are
/// solved on the current values and enter the graph as constants.
pub fn vertical_loss_node(
    g: &mut Graph,
    users: (Var, Var),
    items: (Var, Var),
    config: &SinkhornConfig,
) -> Result<Var> {
    let shapes = [users.0, users.1, items.0, items.1].map(|v| g.value(v).shape());
    if shapes.iter().any(|&s| s != shapes[0]) {
        return Err(Error::Contract(format!(
            "typical sample matrices must share one shape, got {shapes:?}"
        )));
    }
    let d = shapes[0].1;
    let user_cost = per_attribution_cost(g, users.0, users.1, config)?;
    let item_cost = per_attribution_cost(g, items.0, items.1, config)?;
    let both = g.add(user_cost, item_cost);
    let total = g.sum(both);
    Ok(g.scale(total, 1.0 / d as f64))
}

fn per_attribution_cost(
    g: &mut Graph,
    src: Var,
    tgt: Var,
    config: &SinkhornConfig,
) -> Result<Var> {
    let d = g.value(src).cols();
    let mut plans = Vec::with_capacity(d);
    for q in 0..d {
        let c = sinkhorn_coupling(&g.value(src).column(q), &g.value(tgt).column(q), config)?;
        plans.push(c.pi);
    }
    Ok(g.transport_cost(src, tgt, Rc::from(plans)))
}

/// `L_O` on plain matrices.
pub fn vertical_loss(
    ms_user: &Matrix,
    mt_user: &Matrix,
    ms_item: &Matrix,
    mt_item: &Matrix,
    config: &SinkhornConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = [ms_user, mt_user, ms_item, mt_item].map(|m| g.leaf(m.clone()));
    let l = vertical_loss_node(&mut g, (vars[0], vars[1]), (vars[2], vars[3]), config)?;
    Ok(g.value(l).item())
}
