use std::collections::HashSet;

use cfaa::eval::{proxy_a_distance, rank_metrics, sample_candidates, ProbeConfig, RankedCase};
use cfaa::ndmath::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A case where the positive (item 0) has the given 1-based rank.
fn case_at_rank(user: usize, rank: usize, n: usize) -> RankedCase {
    let candidates: Vec<usize> = (0..n).collect();
    let scores = (0..n)
        .map(|c| {
            if c == 0 {
                (n - rank) as f64
            } else if c < rank {
                (n - c + 1) as f64
            } else {
                (n - c - 1) as f64 - 0.5
            }
        })
        .collect();
    RankedCase {
        user,
        positive: 0,
        candidates,
        scores,
    }
}

#[test]
fn ndcg_at_rank_two() {
    let c = case_at_rank(0, 2, 100);
    assert_eq!(c.rank(), 2);
    let m = rank_metrics(&[c], 10).unwrap();
    assert!((m.ndcg - 0.63093).abs() <= 1e-4, "{}", m.ndcg);
    assert!((m.ndcg - 1.0 / 3f64.log2()).abs() <= 1e-15);
}

#[test]
fn hit_rate_boundaries() {
    let at_k = rank_metrics(&[case_at_rank(0, 10, 100)], 10).unwrap();
    assert_eq!((at_k.hr, at_k.recall), (1.0, 1.0));
    let past_k = rank_metrics(&[case_at_rank(0, 11, 100)], 10).unwrap();
    assert_eq!((past_k.hr, past_k.recall, past_k.ndcg), (0.0, 0.0, 0.0));
    let top = rank_metrics(&[case_at_rank(0, 1, 100)], 10).unwrap();
    assert_eq!((top.hr, top.recall, top.ndcg), (1.0, 1.0, 1.0));
    // one user, two held-out positives, one hit
    let mixed = rank_metrics(&[case_at_rank(3, 1, 100), case_at_rank(3, 50, 100)], 10).unwrap();
    assert_eq!((mixed.hr, mixed.recall, mixed.users), (1.0, 0.5, 1));
    let empty = rank_metrics(&[], 10).unwrap();
    assert_eq!(empty.users, 0);
}

#[test]
fn candidates_avoid_observed_items() {
    let observed: Vec<HashSet<usize>> = vec![(0..50).collect(), HashSet::from([3, 4])];
    let lists = sample_candidates(&[(0, 7), (1, 3)], &observed, 200, 99, 5);
    for (user, positive, candidates) in &lists {
        assert_eq!(candidates.len(), 100);
        assert_eq!(candidates.iter().filter(|&&c| c == *positive).count(), 1);
        let unique: HashSet<_> = candidates.iter().collect();
        assert_eq!(unique.len(), 100);
        for c in candidates {
            assert!(c == positive || !observed[*user].contains(c));
        }
    }
    assert_eq!(lists, sample_candidates(&[(0, 7), (1, 3)], &observed, 200, 99, 5));
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Matrix {
    Matrix::from_fn(n, d, |_, j| {
        let z: f64 = rng.sample(StandardNormal);
        z + if j == 0 { shift } else { 0.0 }
    })
}

#[test]
fn identical_distributions_give_zero_distance() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, 1000, 8, 0.0);
        let b = gaussian(&mut rng, 1000, 8, 0.0);
        let r = proxy_a_distance(&a, &b, &ProbeConfig { seed, ..ProbeConfig::default() }).unwrap();
        assert!(r.d_a.abs() <= 0.2, "seed {seed}: d_A {}", r.d_a);
    }
}

#[test]
fn separated_clusters_give_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = gaussian(&mut rng, 500, 8, 0.0);
    let b = gaussian(&mut rng, 500, 8, 12.0);
    let r = proxy_a_distance(&a, &b, &ProbeConfig::default()).unwrap();
    assert!((r.d_a - 2.0).abs() <= 0.05, "d_A {}", r.d_a);
}

#[test]
fn distance_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = gaussian(&mut rng, 400, 4, 0.0);
    let b = gaussian(&mut rng, 400, 4, 0.8);
    let cfg = ProbeConfig::default();
    let ab = proxy_a_distance(&a, &b, &cfg).unwrap();
    let ba = proxy_a_distance(&b, &a, &cfg).unwrap();
    assert!((ab.d_a - ba.d_a).abs() <= 1e-9, "{} vs {}", ab.d_a, ba.d_a);
    assert!(ab.d_a > 0.3);
}
