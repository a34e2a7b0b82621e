//! Online keyword embeddings.
//!
//! Each tweet is one context window: every keyword is predicted from each of
//! the tweet's other keywords with a negative-sampling logistic objective.
//! A text's embedding is the multiplicity-weighted mean of its known keyword
//! vectors, so tweets and keywords share one space.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingParams {
    pub dimension: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    /// Steps over which the learning rate decays linearly to its floor.
    pub decay_steps: u64,
    /// Floor as a fraction of the initial learning rate.
    pub min_learning_rate_frac: f64,
    pub cache_size: usize,
    /// Cached tweets replayed per fresh tweet.
    pub replay_ratio: f64,
    /// Per-update gradient norm cap.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self {
            dimension: 50,
            negatives: 5,
            learning_rate: 0.025,
            decay_steps: 10_000,
            min_learning_rate_frac: 1e-4,
            cache_size: 50_000,
            replay_ratio: 0.1,
            clip_norm: 5.0,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    params: EmbeddingParams,
    vocab: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    /// Keyword vectors, row-major `vocab.len() x dimension`.
    input: Vec<f64>,
    /// Context vectors used by the objective only.
    output: Vec<f64>,
    steps: u64,
    cache: VecDeque<Vec<String>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clip(v: &mut [f64], max_norm: f64) {
    let norm = dot(v, v).sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

impl EmbeddingModel {
    pub fn new(params: EmbeddingParams) -> Self {
        assert!(params.dimension > 0, "embedding dimension must be positive");
        Self {
            params,
            vocab: Vec::new(),
            index: HashMap::new(),
            counts: Vec::new(),
            input: Vec::new(),
            output: Vec::new(),
            steps: 0,
            cache: VecDeque::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: Self = serde_json::from_str(text)?;
        let d = model.params.dimension;
        let m = model.vocab.len();
        if model.input.len() != m * d || model.output.len() != m * d || model.counts.len() != m {
            return Err(Error::Corrupt("embedding".into(), "table shape mismatch".into()));
        }
        model.index = model.vocab.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("embedding serialization cannot fail")
    }

    pub fn params(&self) -> &EmbeddingParams {
        &self.params
    }

    /// Overrides the learning rate for subsequent steps.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.params.learning_rate = lr;
    }

    pub fn dimension(&self) -> usize {
        self.params.dimension
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn cached_tweets(&self) -> usize {
        self.cache.len()
    }

    pub fn vector(&self, keyword: &str) -> Option<&[f64]> {
        let d = self.params.dimension;
        self.index.get(keyword).map(|&i| &self.input[i * d..(i + 1) * d])
    }

    fn intern(&mut self, keyword: &str) -> usize {
        if let Some(&i) = self.index.get(keyword) {
            return i;
        }
        let d = self.params.dimension;
        let mut hasher = Sha256::new();
        hasher.update(self.params.seed.to_le_bytes());
        hasher.update(keyword.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed));
        let half = 0.5 / d as f64;
        self.input.extend((0..d).map(|_| rng.gen_range(-half..half)));
        self.output.extend(std::iter::repeat_n(0.0, d));
        self.counts.push(0);
        let i = self.vocab.len();
        self.vocab.push(keyword.to_owned());
        self.index.insert(keyword.to_owned(), i);
        i
    }

    fn current_learning_rate(&self) -> f64 {
        let p = &self.params;
        let progress = self.steps as f64 / p.decay_steps.max(1) as f64;
        p.learning_rate * (1.0 - progress).max(p.min_learning_rate_frac)
    }

    fn negative_table(&self) -> Option<WeightedIndex<f64>> {
        WeightedIndex::new(self.counts.iter().map(|&c| (c as f64).powf(0.75))).ok()
    }

    /// One SGD pass over `batch` plus a replayed sample of cached tweets.
    pub fn train_step<S: AsRef<str>>(&mut self, batch: &[Vec<S>]) {
        let fresh: Vec<Vec<String>> = batch
            .iter()
            .map(|t| t.iter().map(|k| k.as_ref().to_owned()).collect())
            .collect();
        let mut step_rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ (self.steps + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut docs: Vec<Vec<usize>> = Vec::with_capacity(fresh.len());
        for tweet in &fresh {
            let ids: Vec<usize> = tweet.iter().map(|k| self.intern(k)).collect();
            for &i in &ids {
                self.counts[i] += 1;
            }
            docs.push(ids);
        }
        let replay = (self.params.replay_ratio * fresh.len() as f64).round() as usize;
        if !self.cache.is_empty() {
            for _ in 0..replay {
                let pick = step_rng.gen_range(0..self.cache.len());
                let ids = self.cache[pick].iter().map(|k| self.index[k]).collect();
                docs.push(ids);
            }
        }
        let lr = self.current_learning_rate();
        if lr > 0.0 {
            if let Some(table) = self.negative_table() {
                for doc in &docs {
                    self.train_doc(doc, lr, &table, &mut step_rng);
                }
            }
        }
        for tweet in fresh {
            self.cache.push_back(tweet);
        }
        while self.cache.len() > self.params.cache_size {
            self.cache.pop_front();
        }
        self.steps += 1;
    }

    fn train_doc(&mut self, doc: &[usize], lr: f64, table: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) {
        let d = self.params.dimension;
        let mut grad_in = vec![0.0; d];
        let mut step = vec![0.0; d];
        for (ti, &target) in doc.iter().enumerate() {
            for (ci, &context) in doc.iter().enumerate() {
                if ci == ti || context == target {
                    continue;
                }
                grad_in.iter_mut().for_each(|g| *g = 0.0);
                let h: Vec<f64> = self.input[context * d..(context + 1) * d].to_vec();
                for n in 0..=self.params.negatives {
                    let (o, label) = if n == 0 {
                        (target, 1.0)
                    } else {
                        let o = table.sample(rng);
                        if o == target {
                            continue;
                        }
                        (o, 0.0)
                    };
                    let out = &mut self.output[o * d..(o + 1) * d];
                    let g = lr * (label - sigmoid(dot(&h, out)));
                    for k in 0..d {
                        grad_in[k] += g * out[k];
                        step[k] = g * h[k];
                    }
                    clip(&mut step, self.params.clip_norm);
                    out.iter_mut().zip(&step).for_each(|(x, s)| *x += s);
                }
                clip(&mut grad_in, self.params.clip_norm);
                self.input[context * d..(context + 1) * d]
                    .iter_mut()
                    .zip(&grad_in)
                    .for_each(|(x, g)| *x += g);
            }
        }
    }

    /// Expected negative-sampling loss over `batch` under the current noise
    /// distribution. Unknown keywords are ignored.
    pub fn objective<S: AsRef<str>>(&self, batch: &[Vec<S>]) -> f64 {
        let d = self.params.dimension;
        let weights: Vec<f64> = self.counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        let k = self.params.negatives as f64;
        let mut loss = 0.0;
        for tweet in batch {
            let ids: Vec<usize> = tweet.iter().filter_map(|w| self.index.get(w.as_ref()).copied()).collect();
            for (ti, &target) in ids.iter().enumerate() {
                for (ci, &context) in ids.iter().enumerate() {
                    if ci == ti || context == target {
                        continue;
                    }
                    let h = &self.input[context * d..(context + 1) * d];
                    let pos = dot(h, &self.output[target * d..(target + 1) * d]);
                    loss -= sigmoid(pos).ln();
                    if total > 0.0 {
                        for (w, &pw) in weights.iter().enumerate() {
                            if w == target || pw == 0.0 {
                                continue;
                            }
                            let neg = dot(h, &self.output[w * d..(w + 1) * d]);
                            loss -= k * (pw / total) * sigmoid(-neg).ln();
                        }
                    }
                }
            }
        }
        loss
    }

    /// Multiplicity-weighted mean of the known keyword vectors, plus the
    /// number of unknown keyword occurrences skipped.
    pub fn embed_text<S: AsRef<str>>(&self, keywords: &[S]) -> Result<(Vec<f64>, usize)> {
        let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
        let mut unknown = 0;
        for k in keywords {
            let k = k.as_ref();
            if self.index.contains_key(k) {
                *counts.entry(k).or_insert(0.0) += 1.0;
            } else {
                unknown += 1;
            }
        }
        let v = self.weighted_mean(counts.iter().map(|(k, w)| (*k, *w)))?;
        Ok((v, unknown))
    }

    /// Weighted mean over keywords with real-valued multiplicities; unknown
    /// keywords and non-positive weights are skipped.
    pub fn embed_weighted(&self, weights: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        self.weighted_mean(weights.iter().map(|(k, w)| (k.as_str(), *w)))
    }

    fn weighted_mean<'a>(&self, items: impl Iterator<Item = (&'a str, f64)>) -> Result<Vec<f64>> {
        let d = self.params.dimension;
        let mut acc = vec![0.0; d];
        let mut total = 0.0;
        for (k, w) in items {
            if w <= 0.0 {
                continue;
            }
            if let Some(v) = self.vector(k) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += w * x);
                total += w;
            }
        }
        if total == 0.0 {
            return Err(Error::NoKnownKeywords);
        }
        acc.iter_mut().for_each(|a| *a /= total);
        Ok(acc)
    }
}
