//! Helpers and reference oracles shared by the integration test targets.
#![allow(dead_code)]

use std::rc::Rc;

use cfaa::model::{DomainSize, EntityBatch, PairBatch, TowerDims};
use cfaa::ndmath::{
    grad_check, sym_eig, ColumnMix, Graph, Matrix, SparseRows, SpectralFn, Var,
};
use cfaa::ot::cost_matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = random(rng, n, n);
    sym_eig(&a.matmul_t(&a)).unwrap().eigenvectors
}

/// SPD matrix with eigenvalues spaced at least `gap` apart.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Matrix {
    let q = random_orthogonal(rng, n);
    let mut lam = 0.5;
    let diag: Vec<f64> = (0..n)
        .map(|_| {
            lam += gap + rng.gen_range(0.0..0.5);
            lam
        })
        .collect();
    q.matmul(&Matrix::from_diag(&diag)).matmul_t(&q).symmetrize()
}

/// Reduces `out` to a scalar with a fixed random weighting.
fn weighted_sum(g: &mut Graph, rng: &mut ChaCha8Rng, out: Var) -> Var {
    let (r, c) = g.value(out).shape();
    let w = g.leaf(random(rng, r, c));
    let prod = g.mul(out, w);
    g.sum(prod)
}

pub const GRAD_TOL: f64 = 1e-4;
const H: f64 = 1e-5;

type Build = Box<dyn Fn(&mut Graph, &mut ChaCha8Rng) -> (Var, Vec<Var>)>;

/// Worst relative gradient error over five seeds for every primitive.
pub fn primitive_gradient_errors() -> Vec<(String, f64)> {
    let mut cases: Vec<(String, Build)> = Vec::new();
    let mut check = |name: &str, build: Build| cases.push((name.to_string(), build));
    check("matmul", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 3, 4));
        let b = g.leaf(random(rng, 4, 2));
        let c = g.matmul(a, b);
        (weighted_sum(g, rng, c), vec![a, b])
    }));
    check("add/sub", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 3, 3));
        let b = g.leaf(random(rng, 3, 3));
        let c = g.add(a, b);
        let d = g.sub(c, b);
        let e = g.mul(d, c);
        (weighted_sum(g, rng, e), vec![a, b])
    }));
    check("elementwise product/quotient", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 3, 3));
        let b = g.leaf(random(rng, 3, 3).map(|x| 1.5 + x));
        let c = g.mul(a, b);
        let d = g.div(c, b);
        let e = g.div(a, b);
        let f = g.add(d, e);
        (weighted_sum(g, rng, f), vec![a, b])
    }));
    check("inverse", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 4, 4).add(&Matrix::identity(4).scale(3.0)));
        let inv = g.inverse(a).unwrap();
        (weighted_sum(g, rng, inv), vec![a])
    }));
    check("trace/transpose/scale", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 4, 4));
        let b = g.leaf(random(rng, 4, 4));
        let bt = g.transpose(b);
        let p = g.matmul(a, bt);
        let s = g.scale(p, 0.7);
        let o = g.offset(s, 0.1);
        let sq = g.square(o);
        (g.trace(sq), vec![a, b])
    }));
    check("row_softmax", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 4, 5).scale(3.0));
        let s = g.row_softmax(a);
        (weighted_sum(g, rng, s), vec![a])
    }));
    check("sigmoid/tanh", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 4, 3).scale(2.0));
        let s = g.sigmoid(a);
        let t = g.tanh(s);
        (weighted_sum(g, rng, t), vec![a])
    }));
    check("log", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 4, 3).map(|x| 1.2 + x));
        let l = g.log(a);
        (weighted_sum(g, rng, l), vec![a])
    }));
    check("abs/clamp", Box::new(|g, rng| {
        // keep entries away from the kinks
        let a = g.leaf(random(rng, 4, 3).map(|x| if x.abs() < 0.1 { x + 0.3 } else { x }));
        let ab = g.abs(a);
        let c = g.clamp(a, -2.0, 2.0);
        let s = g.add(ab, c);
        (weighted_sum(g, rng, s), vec![a])
    }));
    check("broadcast rows", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 5, 3));
        let r = g.leaf(random(rng, 1, 3));
        let b = g.add_row(a, r);
        let m = g.mul_row(b, r);
        (weighted_sum(g, rng, m), vec![a, r])
    }));
    check("diag/diag_mat/row_sums", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 4, 4));
        let d = g.diag(a);
        let dm = g.diag_mat(d);
        let rs = g.row_sums(a);
        let rsm = g.diag_mat(rs);
        let p = g.matmul(dm, a);
        let q = g.sub(p, rsm);
        (weighted_sum(g, rng, q), vec![a])
    }));
    check("concat/gather/sparse", Box::new(|g, rng| {
        let a = g.leaf(random(rng, 5, 2));
        let b = g.leaf(random(rng, 5, 3));
        let w = g.leaf(random(rng, 6, 2));
        let c = g.concat_cols(&[a, b]);
        let gathered = g.gather_rows(c, &[0, 3, 3, 1]);
        let sp = Rc::new(SparseRows::new(
            6,
            vec![vec![(0, 1.0), (4, 0.5)], vec![(2, -1.0)], vec![], vec![(5, 2.0), (0, 1.0)]],
        ));
        let s = g.sparse_matmul(sp, w);
        let prod = g.mul(gathered, gathered);
        let total = g.concat_cols(&[prod, s]);
        (weighted_sum(g, rng, total), vec![a, b, w])
    }));
    check("column_mix/transport_cost", Box::new(|g, rng| {
        let z = g.leaf(random(rng, 6, 2));
        let t = g.leaf(random(rng, 3, 2));
        let weights = (0..2).map(|_| random(rng, 6, 3).map(f64::abs)).collect();
        let mix = Rc::new(ColumnMix { weights, offset: random(rng, 3, 2) });
        let m = g.column_mix(z, mix);
        let plans: Vec<Matrix> = (0..2).map(|_| random(rng, 3, 3).map(f64::abs)).collect();
        let c = g.transport_cost(m, t, plans.into());
        (weighted_sum(g, rng, c), vec![z, t])
    }));
    check("sym_eig eigenvalues", Box::new(|g, rng| {
        let a = g.leaf(random_spd(rng, 5, 1e-3));
        let e = g.eigenvalues(a).unwrap();
        (weighted_sum(g, rng, e), vec![a])
    }));
    for f in [SpectralFn::Sqrt, SpectralFn::Pinv, SpectralFn::PinvSqrt] {
        check(f.name(), Box::new(move |g, rng| {
            let a = g.leaf(random_spd(rng, 5, 1e-3));
            let s = g.spectral(a, f, 1e-8).unwrap();
            (weighted_sum(g, rng, s), vec![a])
        }));
    }

    cases
        .iter()
        .map(|(name, build)| {
            let worst = (0..5)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut g = Graph::new();
                    let (root, params) = build(&mut g, &mut rng);
                    grad_check(&g, root, &params, H).unwrap()
                })
                .fold(0.0, f64::max);
            (name.clone(), worst)
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Uniform-marginal transport with equal atom counts is optimized at a
/// permutation (Birkhoff vertex), so enumeration is exact.
pub fn lp_transport_cost(src: &[f64], tgt: &[f64]) -> f64 {
    let k = src.len();
    let c = cost_matrix(src, tgt);
    permutations(k)
        .iter()
        .map(|p| (0..k).map(|i| c[(i, p[i])]).sum::<f64>() / k as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Projected gradient descent on the zero-diagonal subspace at the solver's
/// reweighting. The objective is a strongly convex quadratic there.
pub fn projected_gradient_oracle(z: &Matrix, phi: &Matrix, nu: f64, steps: usize) -> Matrix {
    let d = z.cols();
    let gram = z.t_matmul(z);
    let xi = phi.add(&phi.transpose());
    let hessian = gram.add(&xi.scale(nu));
    let lipschitz = cfaa::ndmath::sym_eig(&hessian)
        .unwrap()
        .max_abs_eigenvalue();
    let step = 1.0 / lipschitz;
    let mut b = Matrix::zeros(d, d);
    for _ in 0..steps {
        let grad = hessian.matmul(&b).sub(&gram);
        b = b.sub(&grad.scale(step));
        for j in 0..d {
            b.as_mut_slice()[j * d + j] = 0.0;
        }
    }
    b
}


pub const D_REV: usize = 3;

pub fn dims() -> TowerDims {
    TowerDims {
        d_id: 4,
        d_hist: 4,
        d_rev: D_REV,
        d_fuse: 4,
        d_out: 4,
    }
}

pub fn entity_batch(rng: &mut ChaCha8Rng, ids: Vec<usize>, history_width: usize) -> EntityBatch {
    let rows = ids
        .iter()
        .map(|_| {
            let picks: Vec<usize> = (0..history_width).filter(|_| rng.gen_bool(0.4)).collect();
            let w = 1.0 / picks.len().max(1) as f64;
            picks.into_iter().map(|c| (c, w)).collect()
        })
        .collect();
    let n = ids.len();
    EntityBatch {
        ids,
        history: Rc::new(SparseRows::new(history_width, rows)),
        reviews: Matrix::from_fn(n, D_REV, |_, _| rng.gen_range(-1.0..1.0)),
    }
}

pub fn pair_batch(rng: &mut ChaCha8Rng, size: DomainSize, n: usize, positives_only: bool) -> PairBatch {
    let users = (0..n).map(|_| rng.gen_range(0..size.users)).collect();
    let items = (0..n).map(|_| rng.gen_range(0..size.items)).collect();
    PairBatch {
        users: entity_batch(rng, users, size.items),
        items: entity_batch(rng, items, size.users),
        labels: (0..n)
            .map(|_| if positives_only || rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect(),
    }
}

pub const SOURCE: DomainSize = DomainSize { users: 7, items: 6 };
pub const TARGET: DomainSize = DomainSize { users: 6, items: 5 };
