//! Sampled-candidate ranking metrics and the proxy A-distance probe.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::ndmath::Matrix;

pub const DEFAULT_CUTOFF: usize = 10;
pub const DEFAULT_NEGATIVES: usize = 99;
pub const DEFAULT_FOLDS: usize = 5;

/// One held-out positive ranked against sampled candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCase {
    pub user: usize,
    pub positive: usize,
    /// Candidate items including `positive` exactly once.
    pub candidates: Vec<usize>,
    /// Scores aligned with `candidates`.
    pub scores: Vec<f64>,
}

impl RankedCase {
    fn validate(&self, k: usize) -> Result<()> {
        if self.scores.len() != self.candidates.len() {
            return Err(Error::Contract("scores and candidates differ in length".into()));
        }
        if self.candidates.len() < k {
            return Err(Error::Contract(format!(
                "case for user {} has {} candidates, fewer than k={k}",
                self.user,
                self.candidates.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(d) = self.candidates.iter().find(|c| !seen.insert(**c)) {
            return Err(Error::Contract(format!(
                "duplicate candidate {d} for user {}",
                self.user
            )));
        }
        if !seen.contains(&self.positive) {
            return Err(Error::Contract(format!(
                "positive {} missing from the candidates of user {}",
                self.positive, self.user
            )));
        }
        if self.scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Input("NaN score".into()));
        }
        Ok(())
    }

    /// 1-based rank of the positive; ties go to the lower item index.
    pub fn rank(&self) -> usize {
        let p = self.candidates.iter().position(|&c| c == self.positive).unwrap();
        let (ps, pi) = (self.scores[p], self.positive);
        1 + self
            .candidates
            .iter()
            .zip(&self.scores)
            .filter(|&(&c, &s)| s > ps || (s == ps && c < pi))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMetrics {
    pub hr: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Per user: HR is 1 when any of the user's cases hits the top `k`, Recall
/// is the fraction of cases that hit, and NDCG averages `1/log2(rank+1)`
/// over cases (each case has one relevant item, so the ideal gain is 1).
/// All three are then averaged over users.
pub fn rank_metrics(cases: &[RankedCase], cutoff: usize) -> Result<RankMetrics> {
    if cutoff == 0 {
        return Err(Error::Contract("cutoff must be positive".into()));
    }
    let mut per_user: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
    for case in cases {
        case.validate(cutoff)?;
        let rank = case.rank();
        let entry = per_user.entry(case.user).or_default();
        entry.0 += 1;
        if rank <= cutoff {
            entry.1 += 1;
            entry.2 += 1.0 / ((rank + 1) as f64).log2();
        }
    }
    let n = per_user.len();
    if n == 0 {
        return Ok(RankMetrics {
            hr: 0.0,
            recall: 0.0,
            ndcg: 0.0,
            users: 0,
        });
    }
    let (mut hr, mut recall, mut ndcg) = (0.0, 0.0, 0.0);
    for (cases, hits, gain) in per_user.values() {
        hr += if *hits > 0 { 1.0 } else { 0.0 };
        recall += *hits as f64 / *cases as f64;
        ndcg += gain / *cases as f64;
    }
    let n_f = n as f64;
    Ok(RankMetrics {
        hr: hr / n_f,
        recall: recall / n_f,
        ndcg: ndcg / n_f,
        users: n,
    })
}

/// Candidate lists for held-out positives: the positive plus up to
/// `negatives` items drawn without replacement from those the user has not
/// interacted with.
pub fn sample_candidates(
    held_out: &[(usize, usize)],
    observed: &[HashSet<usize>],
    n_items: usize,
    negatives: usize,
    seed: u64,
) -> Vec<(usize, usize, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xCA5E));
    held_out
        .iter()
        .map(|&(u, pos)| {
            let mut pool: Vec<usize> = (0..n_items).filter(|i| !observed[u].contains(i)).collect();
            pool.shuffle(&mut rng);
            pool.truncate(negatives);
            let mut cands = vec![pos];
            cands.extend(pool);
            (u, pos, cands)
        })
        .collect()
}

/// Result of a linear domain probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyReport {
    pub accuracy: f64,
    /// Held-out error `ε(h)`.
    pub error: f64,
    /// `2(1 − 2ε)`.
    pub d_a: f64,
    pub samples_per_side: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub folds: usize,
    pub iterations: usize,
    pub step: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            iterations: 300,
            step: 1.0,
            l2: 1e-4,
            seed: 0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Full-batch gradient descent on the L2-regularized logistic loss with
/// standardized features. Returns weights with the bias last.
fn fit_probe(x: &[&[f64]], y: &[f64], cfg: &ProbeConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        mean.iter_mut().zip(*row).for_each(|(m, v)| *m += v / n);
    }
    let mut sd = vec![0.0; d];
    for row in x {
        sd.iter_mut()
            .zip(*row)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    sd.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|row| row.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let mut w = vec![0.0; d + 1];
    let mut grad = vec![0.0; d + 1];
    for _ in 0..cfg.iterations {
        grad.fill(0.0);
        for (zi, &yi) in z.iter().zip(y) {
            let logit = w[d] + zi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let r = sigmoid(logit) - yi;
            grad.iter_mut().zip(zi).for_each(|(g, v)| *g += r * v);
            grad[d] += r;
        }
        for j in 0..=d {
            let reg = if j < d { cfg.l2 * w[j] } else { 0.0 };
            w[j] -= cfg.step * (grad[j] / n + reg);
        }
    }
    (w, mean, sd)
}

fn predict(w: &[f64], mean: &[f64], sd: &[f64], row: &[f64]) -> f64 {
    let d = mean.len();
    w[d] + row
        .iter()
        .zip(mean)
        .zip(sd)
        .zip(w)
        .map(|(((v, m), s), wj)| wj * (v - m) / s)
        .sum::<f64>()
}

/// Balanced subsample and fold labels for one side. Depends only on the
/// side's size, the common size and the seed, so swapping the two inputs
/// yields the same partition with flipped labels.
fn side_plan(n: usize, keep: usize, folds: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(keep);
    idx.into_iter().enumerate().map(|(r, i)| (i, r % folds)).collect()
}

/// Cross-validated linear probe separating `source` rows from `target` rows.
pub fn proxy_a_distance(source: &Matrix, target: &Matrix, cfg: &ProbeConfig) -> Result<DiscrepancyReport> {
    if source.cols() != target.cols() {
        return Err(Error::Contract(format!(
            "embedding widths differ: {} vs {}",
            source.cols(),
            target.cols()
        )));
    }
    if cfg.folds < 2 {
        return Err(Error::Contract("need at least two folds".into()));
    }
    let keep = source.rows().min(target.rows());
    if keep < cfg.folds {
        return Err(Error::Contract(format!(
            "each side needs at least {} rows, got {keep}",
            cfg.folds
        )));
    }
    let plan_s = side_plan(source.rows(), keep, cfg.folds, cfg.seed);
    let plan_t = side_plan(target.rows(), keep, cfg.folds, cfg.seed);
    let mut wrong = 0usize;
    for fold in 0..cfg.folds {
        let mut xs: Vec<&[f64]> = Vec::new();
        let mut ys = Vec::new();
        for (plan, m, label) in [(&plan_s, source, 0.0), (&plan_t, target, 1.0)] {
            for &(i, f) in plan.iter() {
                if f != fold {
                    xs.push(m.row(i));
                    ys.push(label);
                }
            }
        }
        let (w, mean, sd) = fit_probe(&xs, &ys, cfg);
        for (plan, m, is_target) in [(&plan_s, source, false), (&plan_t, target, true)] {
            for &(i, f) in plan.iter() {
                if f == fold {
                    let logit = predict(&w, &mean, &sd, m.row(i));
                    if (logit > 0.0) != is_target {
                        wrong += 1;
                    }
                }
            }
        }
    }
    let error = wrong as f64 / (2 * keep) as f64;
    Ok(DiscrepancyReport {
        accuracy: 1.0 - error,
        error,
        d_a: 2.0 * (1.0 - 2.0 * error),
        samples_per_side: keep,
    })
}
