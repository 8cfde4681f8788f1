//! Ratings ingestion, splitting, review features, batch sampling and the
//! synthetic two-domain generator.

mod batch;
mod features;
mod synthetic;

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndmath::Matrix;

pub use batch::{sample_batch, DomainData, Histories};
pub use features::{
    featurize_reviews, load_review_embeddings, read_review_embeddings, write_review_embeddings,
    Featurizer, ReviewFeatures, EMBEDDING_MAGIC, EMBEDDING_VERSION,
};
pub use synthetic::{gen_synthetic, SyntheticData, SyntheticDomain, SyntheticSpec};

pub const DEFAULT_THRESHOLD: f64 = 4.0;
pub const DEFAULT_MIN_RECORDS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub label: bool,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    pub domain: Domain,
    /// External id of each dense user index.
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub interactions: Vec<Interaction>,
    /// Target-domain negatives, kept only to describe what a user has seen.
    pub held_negatives: Vec<(usize, usize)>,
    /// Review texts per dense user and item index.
    pub user_texts: Vec<Vec<String>>,
    pub item_texts: Vec<Vec<String>>,
}

impl RatingDataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Interaction> {
        self.interactions.iter().filter(move |x| x.split == split)
    }

    /// Builds a dataset from labeled triples over external ids, applying the
    /// target positive-only rule. Later duplicates of a pair replace earlier
    /// ones.
    pub fn from_labeled(domain: Domain, triples: &[(String, String, bool)]) -> Self {
        let mut ds = Builder::new(domain);
        for (u, i, label) in triples {
            ds.push(u, i, *label, None);
        }
        ds.finish()
    }

    fn check(&self) -> Result<()> {
        if self.domain == Domain::Target && self.interactions.iter().any(|x| !x.label) {
            return Err(Error::Contract("target interactions must all be positive".into()));
        }
        Ok(())
    }
}

struct Builder {
    domain: Domain,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    users: Vec<String>,
    items: Vec<String>,
    pairs: HashMap<(usize, usize), usize>,
    records: Vec<(usize, usize, bool, Option<String>)>,
}

impl Builder {
    fn new(domain: Domain) -> Self {
        Self {
            domain,
            user_index: HashMap::new(),
            item_index: HashMap::new(),
            users: Vec::new(),
            items: Vec::new(),
            pairs: HashMap::new(),
            records: Vec::new(),
        }
    }

    fn intern(index: &mut HashMap<String, usize>, names: &mut Vec<String>, id: &str) -> usize {
        *index.entry(id.to_string()).or_insert_with(|| {
            names.push(id.to_string());
            names.len() - 1
        })
    }

    fn push(&mut self, user: &str, item: &str, label: bool, text: Option<String>) {
        let u = Self::intern(&mut self.user_index, &mut self.users, user);
        let i = Self::intern(&mut self.item_index, &mut self.items, item);
        let record = (u, i, label, text);
        match self.pairs.get(&(u, i)) {
            Some(&slot) => self.records[slot] = record,
            None => {
                self.pairs.insert((u, i), self.records.len());
                self.records.push(record);
            }
        }
    }

    fn finish(self) -> RatingDataset {
        let mut user_texts = vec![Vec::new(); self.users.len()];
        let mut item_texts = vec![Vec::new(); self.items.len()];
        let mut interactions = Vec::new();
        let mut held_negatives = Vec::new();
        for (u, i, label, text) in self.records {
            if let Some(t) = text.filter(|t| !t.trim().is_empty()) {
                user_texts[u].push(t.clone());
                item_texts[i].push(t);
            }
            if self.domain == Domain::Target && !label {
                held_negatives.push((u, i));
            } else {
                interactions.push(Interaction {
                    user: u,
                    item: i,
                    label,
                    split: Split::Train,
                });
            }
        }
        RatingDataset {
            domain: self.domain,
            users: self.users,
            items: self.items,
            interactions,
            held_negatives,
            user_texts,
            item_texts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Ratings at or above this are positive.
    pub threshold: f64,
    /// Source users and items with fewer records are removed until stable.
    pub min_records: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            min_records: DEFAULT_MIN_RECORDS,
        }
    }
}

/// One parsed TSV row: user, item, rating, optional review text.
pub type RatingRow = (String, String, f64, Option<String>);

/// Parses `user<TAB>item<TAB>rating[<TAB>review]` rows; blank lines and
/// lines starting with `#` are skipped.
pub fn parse_ratings(text: &str, file: &str) -> Result<Vec<RatingRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            file: file.to_string(),
            line: n + 1,
            message,
        };
        let mut fields = line.splitn(4, '\t');
        let user = fields.next().unwrap_or("");
        let item = fields.next().ok_or_else(|| err("missing item field".into()))?;
        let rating = fields.next().ok_or_else(|| err("missing rating field".into()))?;
        if user.is_empty() || item.is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let rating: f64 = rating
            .trim()
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| err(format!("rating {rating:?} is not a number")))?;
        rows.push((
            user.to_string(),
            item.to_string(),
            rating,
            fields.next().map(str::to_string),
        ));
    }
    Ok(rows)
}

/// Removes rows whose user or item has fewer than `min_records` rows,
/// repeating until no more rows drop.
pub fn filter_min_records(mut rows: Vec<RatingRow>, min_records: usize) -> Vec<RatingRow> {
    loop {
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for (u, i, _, _) in &rows {
            *user_count.entry(u).or_default() += 1;
            *item_count.entry(i).or_default() += 1;
        }
        let keep: Vec<bool> = rows
            .iter()
            .map(|(u, i, _, _)| user_count[u.as_str()] >= min_records && item_count[i.as_str()] >= min_records)
            .collect();
        if keep.iter().all(|&k| k) {
            return rows;
        }
        let mut flags = keep.into_iter();
        rows.retain(|_| flags.next().unwrap());
    }
}

/// Builds a dataset from parsed rows: binarizes at the threshold, filters
/// the source domain, and moves target negatives out of the interactions.
pub fn dataset_from_rows(rows: Vec<RatingRow>, domain: Domain, opts: &LoadOptions) -> RatingDataset {
    let rows = match domain {
        Domain::Source => filter_min_records(rows, opts.min_records),
        Domain::Target => rows,
    };
    let mut b = Builder::new(domain);
    for (u, i, r, text) in rows {
        b.push(&u, &i, r >= opts.threshold, text);
    }
    b.finish()
}

pub fn load_ratings(path: &Path, domain: Domain, opts: &LoadOptions) -> Result<RatingDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_ratings(&text, &path.display().to_string())?;
    Ok(dataset_from_rows(rows, domain, opts))
}

/// Writes interactions back as TSV with ratings 5 (positive) and 1.
pub fn write_ratings(path: &Path, ds: &RatingDataset) -> Result<()> {
    let mut out = String::from("# user\titem\trating\n");
    let rows = ds
        .interactions
        .iter()
        .map(|x| (x.user, x.item, x.label))
        .chain(ds.held_negatives.iter().map(|&(u, i)| (u, i, false)));
    for (u, i, label) in rows {
        let rating = if label { 5 } else { 1 };
        out.push_str(&format!("{}\t{}\t{rating}\n", ds.users[u], ds.items[i]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keeps each target interaction with probability `fraction`.
pub fn sparsify(ds: &mut RatingDataset, fraction: f64, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Contract(format!(
            "keep fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5A5A));
    ds.interactions.retain(|_| rand::Rng::gen_bool(&mut rng, fraction));
    Ok(())
}

/// Uniform random partition by `ratios` (train, valid, test). Counts are
/// `⌊n·r/Σr⌋` for train and valid; test takes the rest.
pub fn split_dataset(ds: &mut RatingDataset, ratios: (u32, u32, u32), seed: u64) -> Result<()> {
    ds.check()?;
    let n = ds.interactions.len();
    if n < 10 {
        return Err(Error::Contract(format!("need at least 10 interactions to split, got {n}")));
    }
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    if total == 0 {
        return Err(Error::Contract("split ratios must not all be zero".into()));
    }
    let n_train = n * ratios.0 as usize / total;
    let n_valid = n * ratios.1 as usize / total;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5711)));
    for (rank, &idx) in order.iter().enumerate() {
        ds.interactions[idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(())
}

/// Review vectors aligned with dense indices; entities absent from
/// `features` get zero vectors.
pub fn align_features(features: &ReviewFeatures, ids: &[String]) -> Result<Matrix> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let unknown: Vec<&str> = features
        .ids
        .iter()
        .filter(|id| !index.contains_key(id.as_str()))
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        let shown: Vec<&str> = unknown.iter().take(10).copied().collect();
        return Err(Error::Input(format!(
            "{} unknown entity ids in review embeddings: {}{}",
            unknown.len(),
            shown.join(", "),
            if unknown.len() > 10 { ", ..." } else { "" }
        )));
    }
    let d = features.vectors.cols();
    let mut out = Matrix::zeros(ids.len(), d);
    for (r, id) in features.ids.iter().enumerate() {
        out.row_mut(index[id.as_str()]).copy_from_slice(features.vectors.row(r));
    }
    Ok(out)
}
