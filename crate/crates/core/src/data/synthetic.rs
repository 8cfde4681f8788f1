use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{dataset_from_rows, derive_seed, Domain, LoadOptions, RatingDataset, RatingRow, ReviewFeatures};
use crate::error::{Error, Result};
use crate::ndmath::Matrix;

/// Two non-overlapping domains sharing one preference structure. The
/// target's review vectors see the latents through a rotation and a
/// translation.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Users per domain.
    pub users: usize,
    /// Items per domain.
    pub items: usize,
    pub latent_dim: usize,
    pub d_rev: usize,
    /// Taste clusters shared by both domains.
    pub clusters: usize,
    /// Rotation applied to target latents, in radians.
    pub angle: f64,
    /// Norm of the translation applied to target latents.
    pub translation: f64,
    /// Fraction of rated pairs labeled positive. The positivity threshold
    /// is the matching quantile of the noisy scores.
    pub positive_rate: f64,
    /// Fraction of items each source user rates.
    pub density: f64,
    /// Fraction of items each target user rates.
    pub target_density: f64,
    /// Standard deviation of the noise added to scores before thresholding.
    pub label_noise: f64,
    /// Standard deviation of the noise added to review vectors.
    pub review_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 500,
            latent_dim: 8,
            d_rev: 16,
            clusters: 6,
            angle: std::f64::consts::FRAC_PI_3,
            translation: 1.0,
            positive_rate: 0.2,
            density: 0.08,
            target_density: 0.04,
            label_noise: 0.5,
            review_noise: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let counts = [self.users, self.items, self.latent_dim, self.d_rev, self.clusters];
        if counts.contains(&0) {
            return Err(Error::Contract("synthetic counts must be positive".into()));
        }
        if self.d_rev < self.latent_dim {
            return Err(Error::Contract("review width must be at least the latent width".into()));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.angle) {
            return Err(Error::Contract(format!("angle {} outside [0, π]", self.angle)));
        }
        for (name, v) in [("density", self.density), ("target_density", self.target_density)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Contract(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Contract("positive_rate must lie in (0, 1)".into()));
        }
        if self.translation < 0.0 || self.label_noise < 0.0 || self.review_noise < 0.0 {
            return Err(Error::Contract("noise and translation must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDomain {
    pub dataset: RatingDataset,
    pub user_reviews: ReviewFeatures,
    pub item_reviews: ReviewFeatures,
    /// Ground-truth preference latents, rows aligned with the dataset ids.
    pub user_latents: Matrix,
    pub item_latents: Matrix,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub source: SyntheticDomain,
    pub target: SyntheticDomain,
    /// `d_rev × latent_dim` orthonormal embedding of latents into review space.
    pub projection: Matrix,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Orthonormal columns by Gram–Schmidt on a Gaussian matrix.
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| normal(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_fn(rows, cols, |i, j| basis[j][i])
}

/// Rotation by `angle` in the coordinate planes (0,1), (2,3), ...
fn plane_rotation(dim: usize, angle: f64) -> Matrix {
    let (s, c) = angle.sin_cos();
    let mut r = Matrix::identity(dim);
    for p in (0..dim.saturating_sub(1)).step_by(2) {
        r.as_mut_slice()[p * dim + p] = c;
        r.as_mut_slice()[p * dim + p + 1] = -s;
        r.as_mut_slice()[(p + 1) * dim + p] = s;
        r.as_mut_slice()[(p + 1) * dim + p + 1] = c;
    }
    r
}

struct Population {
    centers: Matrix,
    scales: Vec<f64>,
}

impl Population {
    fn draw(&self, rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let dim = self.scales.len();
        let k = self.centers.rows();
        let mut out = Matrix::zeros(n, dim);
        for i in 0..n {
            let c = rng.gen_range(0..k);
            for j in 0..dim {
                out.as_mut_slice()[i * dim + j] = self.centers[(c, j)] + self.scales[j] * normal(rng);
            }
        }
        out
    }
}

fn reviews(
    rng: &mut ChaCha8Rng,
    latents: &Matrix,
    transform: &Matrix,
    shift: &[f64],
    projection: &Matrix,
    noise: f64,
    prefix: &str,
) -> ReviewFeatures {
    let moved = latents.matmul_t(transform);
    let d_rev = projection.rows();
    let mut vectors = Matrix::zeros(latents.rows(), d_rev);
    for i in 0..latents.rows() {
        let z: Vec<f64> = moved.row(i).iter().zip(shift).map(|(a, b)| a + b).collect();
        for r in 0..d_rev {
            let clean: f64 = projection.row(r).iter().zip(&z).map(|(p, x)| p * x).sum();
            vectors.as_mut_slice()[i * d_rev + r] = clean + noise * normal(rng);
        }
    }
    ReviewFeatures {
        ids: (0..latents.rows()).map(|i| format!("{prefix}{i}")).collect(),
        vectors,
    }
}

fn domain(
    spec: &SyntheticSpec,
    population: &Population,
    projection: &Matrix,
    kind: Domain,
    seed: u64,
) -> Result<SyntheticDomain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tag, density) = match kind {
        Domain::Source => ("s", spec.density),
        Domain::Target => ("t", spec.target_density),
    };
    let user_latents = population.draw(&mut rng, spec.users);
    let item_latents = population.draw(&mut rng, spec.items);
    let gain = 1.0 / (spec.latent_dim as f64).sqrt();
    let per_user = ((density * spec.items as f64).round() as usize).clamp(1, spec.items);
    let mut scored: Vec<(usize, usize, f64)> = Vec::with_capacity(spec.users * per_user);
    for u in 0..spec.users {
        let mut picked = sample(&mut rng, spec.items, per_user).into_vec();
        picked.sort_unstable();
        for i in picked {
            let dot: f64 = user_latents.row(u).iter().zip(item_latents.row(i)).map(|(a, b)| a * b).sum();
            scored.push((u, i, 2.0 * gain * dot + spec.label_noise * normal(&mut rng)));
        }
    }
    let mut sorted: Vec<f64> = scored.iter().map(|s| s.2).collect();
    sorted.sort_by(f64::total_cmp);
    let cut = ((1.0 - spec.positive_rate) * sorted.len() as f64) as usize;
    let threshold = sorted[cut.min(sorted.len() - 1)];
    let rows: Vec<RatingRow> = scored
        .into_iter()
        .map(|(u, i, score)| {
            let rating = if score >= threshold { 5.0 } else { 2.0 };
            (format!("{tag}u{u}"), format!("{tag}i{i}"), rating, None)
        })
        .collect();
    let (transform, shift) = match kind {
        Domain::Source => (Matrix::identity(spec.latent_dim), vec![0.0; spec.latent_dim]),
        Domain::Target => {
            let dir: Vec<f64> = (0..spec.latent_dim).map(|_| normal(&mut rng)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            (
                plane_rotation(spec.latent_dim, spec.angle),
                dir.iter().map(|x| spec.translation * x / norm).collect(),
            )
        }
    };
    let user_reviews = reviews(&mut rng, &user_latents, &transform, &shift, projection, spec.review_noise, &format!("{tag}u"));
    let item_reviews = reviews(&mut rng, &item_latents, &transform, &shift, projection, spec.review_noise, &format!("{tag}i"));
    let dataset = dataset_from_rows(rows, kind, &LoadOptions::default());
    // the filter may drop entities; keep latents and reviews aligned
    let keep_rows = |ids: &[String], prefix: &str, m: &Matrix| {
        Matrix::from_fn(ids.len(), m.cols(), |r, c| {
            let idx: usize = ids[r][prefix.len()..].parse().unwrap();
            m[(idx, c)]
        })
    };
    let user_prefix = format!("{tag}u");
    let item_prefix = format!("{tag}i");
    Ok(SyntheticDomain {
        user_latents: keep_rows(&dataset.users, &user_prefix, &user_latents),
        item_latents: keep_rows(&dataset.items, &item_prefix, &item_latents),
        user_reviews: ReviewFeatures {
            ids: dataset.users.clone(),
            vectors: keep_rows(&dataset.users, &user_prefix, &user_reviews.vectors),
        },
        item_reviews: ReviewFeatures {
            ids: dataset.items.clone(),
            vectors: keep_rows(&dataset.items, &item_prefix, &item_reviews.vectors),
        },
        dataset,
    })
}

/// Generates both domains deterministically from `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x5EED));
    let dim = spec.latent_dim;
    let scales: Vec<f64> = (0..dim)
        .map(|j| 0.9 * 0.6f64.powf(j as f64 / (dim.max(2) - 1) as f64))
        .collect();
    let centers = Matrix::from_fn(spec.clusters, dim, |_, _| 1.2 * normal(&mut rng));
    let population = Population { centers, scales };
    let projection = orthonormal_columns(&mut rng, spec.d_rev, dim);
    let source = domain(spec, &population, &projection, Domain::Source, derive_seed(spec.seed, 1))?;
    let target = domain(spec, &population, &projection, Domain::Target, derive_seed(spec.seed, 2))?;
    Ok(SyntheticData {
        source,
        target,
        projection,
    })
}
