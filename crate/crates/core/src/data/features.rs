use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndmath::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"CFAE";
pub const EMBEDDING_VERSION: u32 = 1;

/// Review vectors keyed by external entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewFeatures {
    pub ids: Vec<String>,
    /// One row per id.
    pub vectors: Matrix,
}

impl ReviewFeatures {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
}

fn tokens(sentence: &str) -> impl Iterator<Item = String> + '_ {
    sentence
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed TF-IDF sentence encoder with signed buckets.
#[derive(Debug, Clone)]
pub struct Featurizer {
    d_rev: usize,
    seed: u64,
    sentence_count: usize,
    doc_freq: HashMap<String, usize>,
}

impl Featurizer {
    /// Collects sentence-level document frequencies over `corpus`.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>, d_rev: usize, seed: u64) -> Result<Self> {
        if d_rev == 0 {
            return Err(Error::Contract("review width must be at least 1".into()));
        }
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut sentence_count = 0;
        for text in corpus {
            for s in sentences(text) {
                sentence_count += 1;
                let mut seen: Vec<String> = tokens(s).collect();
                seen.sort();
                seen.dedup();
                for t in seen {
                    *doc_freq.entry(t).or_default() += 1;
                }
            }
        }
        Ok(Self {
            d_rev,
            seed,
            sentence_count,
            doc_freq,
        })
    }

    fn idf(&self, token: &str) -> f64 {
        let df = self.doc_freq.get(token).copied().unwrap_or(0);
        ((1 + self.sentence_count) as f64 / (1 + df) as f64).ln() + 1.0
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        // FNV-1a over the seed and the token bytes
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.d_rev as u64) as usize, sign)
    }

    /// L2-normalized hashed TF-IDF vector of one sentence.
    pub fn sentence_vector(&self, sentence: &str) -> Vec<f64> {
        let mut counts: Vec<(String, usize)> = Vec::new();
        let mut toks: Vec<String> = tokens(sentence).collect();
        toks.sort();
        for t in toks {
            match counts.last_mut() {
                Some((last, c)) if *last == t => *c += 1,
                _ => counts.push((t, 1)),
            }
        }
        let mut v = vec![0.0; self.d_rev];
        for (t, c) in &counts {
            let (b, sign) = self.bucket(t);
            v[b] += sign * *c as f64 * self.idf(t);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Mean of the sentence vectors of all texts; zero without sentences.
    pub fn entity_vector(&self, texts: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.d_rev];
        let mut n = 0usize;
        for text in texts {
            for s in sentences(text) {
                for (a, x) in acc.iter_mut().zip(self.sentence_vector(s)) {
                    *a += x;
                }
                n += 1;
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }
}

/// Fits the encoder on all texts and encodes each entity.
pub fn featurize_reviews(
    ids: &[String],
    texts: &[Vec<String>],
    d_rev: usize,
    seed: u64,
) -> Result<ReviewFeatures> {
    if ids.len() != texts.len() {
        return Err(Error::Contract(format!(
            "{} ids for {} text lists",
            ids.len(),
            texts.len()
        )));
    }
    let featurizer = Featurizer::fit(texts.iter().flatten().map(String::as_str), d_rev, seed)?;
    let mut vectors = Matrix::zeros(ids.len(), d_rev);
    for (r, t) in texts.iter().enumerate() {
        vectors.row_mut(r).copy_from_slice(&featurizer.entity_vector(t));
    }
    Ok(ReviewFeatures {
        ids: ids.to_vec(),
        vectors,
    })
}

/// Encodes the container; values are narrowed to f32.
pub fn write_review_embeddings(path: &Path, features: &ReviewFeatures) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.len() as u32).to_le_bytes());
    out.extend_from_slice(&(features.dim() as u32).to_le_bytes());
    for (r, id) in features.ids.iter().enumerate() {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for &v in features.vectors.row(r) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Decodes a container. `expected_dim`, when given, must match the header.
pub fn read_review_embeddings(bytes: &[u8], expected_dim: Option<usize>) -> Result<ReviewFeatures> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        if end > bytes.len() {
            return Err(Error::Format(format!(
                "embedding container truncated at byte {pos} (wanted {n} more)"
            )));
        }
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    if take(4)? != EMBEDDING_MAGIC {
        return Err(Error::Format("not an embedding container (bad magic)".into()));
    }
    let version = u32_at(take(4)?);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!(
            "unsupported embedding container version {version}"
        )));
    }
    let count = u32_at(take(4)?) as usize;
    let dim = u32_at(take(4)?) as usize;
    if let Some(want) = expected_dim {
        if want != dim {
            return Err(Error::Format(format!(
                "embedding width {dim} does not match expected {want}"
            )));
        }
    }
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut data = Vec::with_capacity(count.saturating_mul(dim).min(1 << 24));
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let id = std::str::from_utf8(take(len)?)
            .map_err(|_| Error::Format("entity id is not UTF-8".into()))?
            .to_string();
        ids.push(id);
        for c in take(4 * dim)?.chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format("non-finite value in embedding container".into()));
            }
            data.push(v as f64);
        }
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes in embedding container",
            bytes.len() - pos
        )));
    }
    let vectors = Matrix::new(count, dim, data)?;
    Ok(ReviewFeatures { ids, vectors })
}

pub fn load_review_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<ReviewFeatures> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_review_embeddings(&bytes, expected_dim)
}
