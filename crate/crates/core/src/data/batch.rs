use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, RatingDataset, Split};
use crate::error::{Error, Result};
use crate::model::{EntityBatch, PairBatch};
use crate::ndmath::{Matrix, SparseRows};

/// Training positives per user and per item, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Histories {
    pub user_items: Vec<Vec<usize>>,
    pub item_users: Vec<Vec<usize>>,
}

impl Histories {
    pub fn from_train(ds: &RatingDataset) -> Self {
        let mut user_items = vec![Vec::new(); ds.n_users()];
        let mut item_users = vec![Vec::new(); ds.n_items()];
        for x in ds.in_split(Split::Train).filter(|x| x.label) {
            user_items[x.user].push(x.item);
            item_users[x.item].push(x.user);
        }
        for v in user_items.iter_mut().chain(item_users.iter_mut()) {
            v.sort_unstable();
        }
        Self {
            user_items,
            item_users,
        }
    }
}

/// Row-normalized multi-hot rows, optionally leaving one entry out per row.
fn history_rows(lists: &[Vec<usize>], width: usize, rows: &[usize], exclude: Option<&[usize]>) -> SparseRows {
    let out = rows
        .iter()
        .enumerate()
        .map(|(r, &e)| {
            let skip = exclude.map(|x| x[r]);
            let kept: Vec<usize> = lists[e].iter().copied().filter(|&c| Some(c) != skip).collect();
            let w = if kept.is_empty() { 0.0 } else { 1.0 / kept.len() as f64 };
            kept.into_iter().map(|c| (c, w)).collect()
        })
        .collect();
    SparseRows::new(width, out)
}

fn gather(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

/// A split dataset with review vectors aligned to its dense indices.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub dataset: RatingDataset,
    pub user_reviews: Matrix,
    pub item_reviews: Matrix,
    pub histories: Histories,
    /// Indices into `dataset.interactions` of the training split.
    pub train: Vec<usize>,
}

impl DomainData {
    pub fn new(dataset: RatingDataset, user_reviews: Matrix, item_reviews: Matrix) -> Result<Self> {
        if user_reviews.rows() != dataset.n_users() || item_reviews.rows() != dataset.n_items() {
            return Err(Error::Contract(format!(
                "review matrices {:?}/{:?} do not match {} users and {} items",
                user_reviews.shape(),
                item_reviews.shape(),
                dataset.n_users(),
                dataset.n_items()
            )));
        }
        if user_reviews.cols() != item_reviews.cols() {
            return Err(Error::Contract("user and item review widths differ".into()));
        }
        let histories = Histories::from_train(&dataset);
        let train = (0..dataset.interactions.len())
            .filter(|&i| dataset.interactions[i].split == Split::Train)
            .collect();
        Ok(Self {
            dataset,
            user_reviews,
            item_reviews,
            histories,
            train,
        })
    }

    pub fn d_rev(&self) -> usize {
        self.user_reviews.cols()
    }

    /// Users with full training histories, as used at evaluation time.
    pub fn user_batch(&self, users: &[usize]) -> EntityBatch {
        EntityBatch {
            ids: users.to_vec(),
            history: Rc::new(history_rows(&self.histories.user_items, self.dataset.n_items(), users, None)),
            reviews: gather(&self.user_reviews, users),
        }
    }

    pub fn item_batch(&self, items: &[usize]) -> EntityBatch {
        EntityBatch {
            ids: items.to_vec(),
            history: Rc::new(history_rows(&self.histories.item_users, self.dataset.n_users(), items, None)),
            reviews: gather(&self.item_reviews, items),
        }
    }

    /// Training pairs with each pair's own interaction left out of both
    /// history rows.
    pub fn pair_batch(&self, interactions: &[usize]) -> PairBatch {
        let xs: Vec<_> = interactions.iter().map(|&i| self.dataset.interactions[i]).collect();
        let users: Vec<usize> = xs.iter().map(|x| x.user).collect();
        let items: Vec<usize> = xs.iter().map(|x| x.item).collect();
        let u_hist = history_rows(&self.histories.user_items, self.dataset.n_items(), &users, Some(&items));
        let i_hist = history_rows(&self.histories.item_users, self.dataset.n_users(), &items, Some(&users));
        PairBatch {
            users: EntityBatch {
                history: Rc::new(u_hist),
                reviews: gather(&self.user_reviews, &users),
                ids: users,
            },
            items: EntityBatch {
                history: Rc::new(i_hist),
                reviews: gather(&self.item_reviews, &items),
                ids: items,
            },
            labels: xs.iter().map(|x| if x.label { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Training interactions for `step`: epochs are seeded permutations of the
/// training split cut into `⌊n / batch_size⌋` disjoint batches.
pub fn sample_indices(n_train: usize, batch_size: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
    if batch_size == 0 || batch_size > n_train {
        return Err(Error::Contract(format!(
            "batch size {batch_size} must lie in 1..={n_train}"
        )));
    }
    let per_epoch = (n_train / batch_size) as u64;
    let epoch = step / per_epoch;
    let offset = (step % per_epoch) as usize * batch_size;
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch.wrapping_add(0xE90C))));
    Ok(order[offset..offset + batch_size].to_vec())
}

/// Materializes the batch for `step`. Returns the interaction indices and
/// the tower inputs.
pub fn sample_batch(data: &DomainData, batch_size: usize, seed: u64, step: u64) -> Result<(Vec<usize>, PairBatch)> {
    let picks = sample_indices(data.train.len(), batch_size, seed, step)?;
    let interactions: Vec<usize> = picks.iter().map(|&p| data.train[p]).collect();
    let batch = data.pair_batch(&interactions);
    Ok((interactions, batch))
}
