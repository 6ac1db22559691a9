//! Skip-gram with negative sampling over (name, context) pairs, and name
//! prediction by summed dot products.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU32, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_traits::Float;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::UNK;

const MAGIC: &[u8; 4] = b"PWE1";
const MIN_LR_FRACTION: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgnsConfig {
    pub dim: usize,
    pub negative_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub unigram_smoothing: f64,
    /// Names seen fewer times become `<UNK>`; rarer contexts are dropped.
    pub min_count: u64,
    /// 1 trains deterministically; more threads update the shared matrices
    /// without locks.
    pub threads: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 128,
            negative_samples: 5,
            epochs: 15,
            learning_rate: 0.025,
            seed: 0,
            unigram_smoothing: 0.75,
            min_count: 1,
            threads: 1,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.dim < 1 {
            return bad("dim must be at least 1");
        }
        if self.negative_samples < 1 {
            return bad("negative_samples must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.threads < 1 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no training pairs")]
    EmptyCorpus,
    #[error("loss became non-finite in epoch {0}")]
    Diverged(usize),
    #[error("none of the query contexts is in the vocabulary")]
    NoEvidence,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn log_sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |s, (&x, &y)| s + x * y)
}

/// `-log σ(w·c) - Σ log σ(-w·c')`
pub fn pair_loss<F: Float>(w: &[F], c: &[F], negatives: &[&[F]]) -> F {
    let mut loss = -log_sigmoid(dot(w, c));
    for n in negatives {
        loss = loss - log_sigmoid(-dot(w, n));
    }
    loss
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient<F> {
    pub word: Vec<F>,
    pub context: Vec<F>,
    pub negatives: Vec<Vec<F>>,
}

/// Gradient of [`pair_loss`] with respect to every vector involved.
pub fn pair_gradient<F: Float>(w: &[F], c: &[F], negatives: &[&[F]]) -> PairGradient<F> {
    let g = sigmoid(dot(w, c)) - F::one();
    let mut word: Vec<F> = c.iter().map(|&x| g * x).collect();
    let context = w.iter().map(|&x| g * x).collect();
    let mut neg_grads = Vec::with_capacity(negatives.len());
    for n in negatives {
        let h = sigmoid(dot(w, n));
        for (acc, &x) in word.iter_mut().zip(n.iter()) {
            *acc = *acc + h * x;
        }
        neg_grads.push(w.iter().map(|&x| h * x).collect());
    }
    PairGradient {
        word,
        context,
        negatives: neg_grads,
    }
}

/// Row-major f32 matrix that threads may update concurrently without locks.
struct SharedMatrix {
    dim: usize,
    cells: Vec<AtomicU32>,
}

impl SharedMatrix {
    fn new(values: Vec<f32>, dim: usize) -> Self {
        SharedMatrix {
            dim,
            cells: values.into_iter().map(|v| AtomicU32::new(v.to_bits())).collect(),
        }
    }

    fn row(&self, i: usize) -> Vec<f32> {
        self.cells[i * self.dim..(i + 1) * self.dim]
            .iter()
            .map(|c| f32::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }

    fn add(&self, i: usize, delta: &[f32], scale: f32) {
        for (cell, &d) in self.cells[i * self.dim..(i + 1) * self.dim].iter().zip(delta) {
            let v = f32::from_bits(cell.load(Ordering::Relaxed)) + scale * d;
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_values(self) -> Vec<f32> {
        self.cells.into_iter().map(|c| f32::from_bits(c.into_inner())).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub dim: usize,
    pub min_count: u64,
    words: Vec<String>,
    contexts: Vec<String>,
    word_vectors: Vec<f32>,
    context_vectors: Vec<f32>,
    word_index: HashMap<String, usize>,
    context_index: HashMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    /// Mean per-pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub pairs: usize,
}

fn index_of(tokens: &[String]) -> HashMap<String, usize> {
    tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect()
}

/// Trains word (name) and context vectors on `pairs`.
pub fn train_sgns<S: AsRef<str>>(
    pairs: &[(S, S)],
    cfg: &SgnsConfig,
) -> Result<(EmbeddingModel, TrainStats), EmbedError> {
    cfg.validate()?;
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    let mut context_counts: HashMap<&str, u64> = HashMap::new();
    for (w, c) in pairs {
        *word_counts.entry(w.as_ref()).or_default() += 1;
        *context_counts.entry(c.as_ref()).or_default() += 1;
    }
    let mut words: Vec<String> = word_counts
        .iter()
        .filter(|&(&w, &n)| n >= cfg.min_count && w != UNK)
        .map(|(&w, _)| w.to_string())
        .collect();
    words.sort_unstable();
    words.insert(0, UNK.to_string());
    let mut contexts: Vec<String> = context_counts
        .iter()
        .filter(|&(_, &n)| n >= cfg.min_count)
        .map(|(&c, _)| c.to_string())
        .collect();
    contexts.sort_unstable();
    let word_index = index_of(&words);
    let context_index = index_of(&contexts);

    let encoded: Vec<(usize, usize)> = pairs
        .iter()
        .filter_map(|(w, c)| {
            let c = *context_index.get(c.as_ref())?;
            Some((word_index.get(w.as_ref()).copied().unwrap_or(0), c))
        })
        .collect();
    if encoded.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let mut freq = vec![0u64; contexts.len()];
    for &(_, c) in &encoded {
        freq[c] += 1;
    }
    let noise = WeightedIndex::new(freq.iter().map(|&n| (n as f64).powf(cfg.unigram_smoothing)))
        .map_err(|e| EmbedError::Config(e.to_string()))?;

    let dim = cfg.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = 0.5 / dim as f32;
    let word_init: Vec<f32> = (0..words.len() * dim).map(|_| init_rng.gen_range(-half..half)).collect();
    let wv = SharedMatrix::new(word_init, dim);
    let cv = SharedMatrix::new(vec![0.0; contexts.len() * dim], dim);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| EmbedError::Config(e.to_string()))?;
    let total_steps = (cfg.epochs * encoded.len()) as f64;
    let mut stats = TrainStats {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        pairs: encoded.len(),
    };
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let chunk = order.len().div_ceil(cfg.threads);
        let threads = cfg.threads;
        let run_chunk = |(k, part): (usize, &[usize])| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((1 + epoch) * threads + k) as u64 + (1 << 32));
            let mut loss = 0.0;
            for (i, &p) in part.iter().enumerate() {
                let step = (epoch * encoded.len() + i * threads) as f64;
                let lr = cfg.learning_rate * (1.0 - step / total_steps).max(MIN_LR_FRACTION);
                let (w, c) = encoded[p];
                let negs: Vec<usize> = (0..cfg.negative_samples)
                    .map(|_| noise.sample(&mut rng))
                    .filter(|&n| n != c)
                    .collect();
                loss += sgd_step(&wv, &cv, w, c, &negs, lr as f32);
            }
            loss
        };
        let loss: f64 = if threads == 1 {
            run_chunk((0, &order))
        } else {
            pool.install(|| order.par_chunks(chunk).enumerate().map(run_chunk).sum())
        };
        let mean = loss / encoded.len() as f64;
        if !mean.is_finite() {
            return Err(EmbedError::Diverged(epoch));
        }
        stats.epoch_losses.push(mean);
    }
    let model = EmbeddingModel {
        dim,
        min_count: cfg.min_count,
        word_index,
        context_index,
        words,
        contexts,
        word_vectors: wv.into_values(),
        context_vectors: cv.into_values(),
    };
    Ok((model, stats))
}

/// One gradient step on a pair; returns the loss before the step.
fn sgd_step(wv: &SharedMatrix, cv: &SharedMatrix, w: usize, c: usize, negs: &[usize], lr: f32) -> f64 {
    let word = wv.row(w);
    let context = cv.row(c);
    let neg_rows: Vec<Vec<f32>> = negs.iter().map(|&n| cv.row(n)).collect();
    let neg_refs: Vec<&[f32]> = neg_rows.iter().map(Vec::as_slice).collect();
    let loss = pair_loss(&word, &context, &neg_refs) as f64;
    let grad = pair_gradient(&word, &context, &neg_refs);
    cv.add(c, &grad.context, -lr);
    for (&n, g) in negs.iter().zip(&grad.negatives) {
        cv.add(n, g, -lr);
    }
    wv.add(w, &grad.word, -lr);
    loss
}

impl EmbeddingModel {
    /// Builds a model from explicit vectors; `<UNK>` is added when missing.
    pub fn from_vectors(
        dim: usize,
        words: Vec<(String, Vec<f32>)>,
        contexts: Vec<(String, Vec<f32>)>,
    ) -> Result<Self, EmbedError> {
        let mut words = words;
        if !words.iter().any(|(w, _)| w == UNK) {
            words.insert(0, (UNK.to_string(), vec![0.0; dim]));
        }
        if words.iter().chain(&contexts).any(|(_, v)| v.len() != dim) {
            return Err(EmbedError::Format("vector of the wrong dimension".into()));
        }
        let (words, wv): (Vec<String>, Vec<Vec<f32>>) = words.into_iter().unzip();
        let (contexts, cv): (Vec<String>, Vec<Vec<f32>>) = contexts.into_iter().unzip();
        Ok(EmbeddingModel {
            dim,
            min_count: 1,
            word_index: index_of(&words),
            context_index: index_of(&contexts),
            words,
            contexts,
            word_vectors: wv.concat(),
            context_vectors: cv.concat(),
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contexts(&self) -> &[String] {
        &self.contexts
    }

    pub fn word_vector(&self, word: &str) -> Option<&[f32]> {
        let i = *self.word_index.get(word)?;
        Some(&self.word_vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn context_vector(&self, context: &str) -> Option<&[f32]> {
        let i = *self.context_index.get(context)?;
        Some(&self.context_vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn has_word(&self, word: &str) -> bool {
        word != UNK && self.word_index.contains_key(word)
    }

    /// Multiplies every word vector by `factor`.
    pub fn scale_words(&mut self, factor: f32) {
        for x in &mut self.word_vectors {
            *x *= factor;
        }
    }

    pub fn save(&self, mut out: impl Write) -> Result<(), EmbedError> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(self.dim as u32)?;
        out.write_u32::<LittleEndian>(self.words.len() as u32)?;
        out.write_u32::<LittleEndian>(self.contexts.len() as u32)?;
        out.write_u64::<LittleEndian>(self.min_count)?;
        for token in self.words.iter().chain(&self.contexts) {
            out.write_u32::<LittleEndian>(token.len() as u32)?;
            out.write_all(token.as_bytes())?;
        }
        for &x in self.word_vectors.iter().chain(&self.context_vectors) {
            out.write_f32::<LittleEndian>(x)?;
        }
        Ok(())
    }

    pub fn load(mut input: impl Read) -> Result<Self, EmbedError> {
        let truncated = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => EmbedError::Format("truncated".into()),
            _ => EmbedError::Io(e),
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(EmbedError::Format("bad magic".into()));
        }
        let dim = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let n_words = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let n_contexts = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let min_count = input.read_u64::<LittleEndian>().map_err(truncated)?;
        if dim == 0 {
            return Err(EmbedError::Format("zero dimension".into()));
        }
        let mut tokens = Vec::new();
        for _ in 0..n_words + n_contexts {
            let len = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let mut buf = Vec::new();
            (&mut input).take(len as u64).read_to_end(&mut buf)?;
            if buf.len() != len {
                return Err(EmbedError::Format("truncated".into()));
            }
            tokens.push(String::from_utf8(buf).map_err(|_| EmbedError::Format("token is not UTF-8".into()))?);
        }
        let contexts = tokens.split_off(n_words);
        let words = tokens;
        if words.first().map(String::as_str) != Some(UNK) {
            return Err(EmbedError::Format("word vocabulary lacks <UNK>".into()));
        }
        let mut read_matrix = |rows: usize| -> Result<Vec<f32>, EmbedError> {
            let mut m = vec![0f32; rows * dim];
            input.read_f32_into::<LittleEndian>(&mut m).map_err(truncated)?;
            Ok(m)
        };
        let word_vectors = read_matrix(n_words)?;
        let context_vectors = read_matrix(n_contexts)?;
        if input.read(&mut [0u8; 1])? != 0 {
            return Err(EmbedError::Format("trailing bytes".into()));
        }
        Ok(EmbeddingModel {
            dim,
            min_count,
            word_index: index_of(&words),
            context_index: index_of(&contexts),
            words,
            contexts,
            word_vectors,
            context_vectors,
        })
    }
}

/// The `k` best names by Σ w·c over the in-vocabulary query contexts, never
/// `<UNK>`. Ties go to the lexicographically smaller name.
pub fn predict_name<S: AsRef<str>>(
    model: &EmbeddingModel,
    contexts: &[S],
    k: usize,
) -> Result<Vec<(String, f64)>, EmbedError> {
    if k == 0 {
        return Err(EmbedError::ZeroK);
    }
    let mut sum = vec![0f64; model.dim];
    let mut evidence = false;
    for c in contexts {
        if let Some(v) = model.context_vector(c.as_ref()) {
            evidence = true;
            for (s, &x) in sum.iter_mut().zip(v) {
                *s += x as f64;
            }
        }
    }
    if !evidence {
        return Err(EmbedError::NoEvidence);
    }
    let mut ranked: Vec<(String, f64)> = model
        .words
        .iter()
        .enumerate()
        .filter(|(_, w)| *w != UNK)
        .map(|(i, w)| {
            let v = &model.word_vectors[i * model.dim..(i + 1) * model.dim];
            let score = v.iter().zip(&sum).map(|(&a, &b)| a as f64 * b).sum();
            (w.clone(), score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}
