//! Desk-scale target model: an additive-smoothed n-gram LM trained on
//! sequences drawn from a random Markov chain.
//!
//! Token ids carry a case bit: id `2b` is the lowercase spelling of word `b`
//! and id `2b + 1` its capitalized spelling, so lowercasing rendered text is a
//! meaningful transformation of the token sequence. Contexts shorter than the
//! model order are padded with a sentinel equal to `vocab_size`.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trace::{Fidelity, Label, SampleTrace, TokenStep};
use crate::tsp::MAX_VOCAB;

/// Largest `contexts * vocab` table the synthetic chain may allocate.
const MAX_CHAIN_ENTRIES: usize = 1 << 24;

const STREAM_CHAIN: u64 = 0;
const STREAM_MEMBERS: u64 = 1;
const STREAM_NONMEMBERS: u64 = 2;
const STREAM_REFERENCE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapCap {
    pub n: usize,
    pub max_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub vocab_size: usize,
    /// n-gram order of the generating chain (context length `chain_order - 1`).
    pub chain_order: usize,
    pub n_members: usize,
    pub n_nonmembers: usize,
    /// Sequences for the reference model and frequency table. Never members.
    pub n_reference: usize,
    pub seq_len: usize,
    /// Probability that a non-member token is drawn uniformly instead of from the chain.
    pub shift_epsilon: f64,
    /// Symmetric Dirichlet concentration of each context's next-token distribution.
    pub dirichlet_concentration: f64,
    /// Reject non-members whose n-gram overlap with the members exceeds the cap.
    pub overlap_cap: Option<OverlapCap>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            vocab_size: 64,
            chain_order: 3,
            n_members: 400,
            n_nonmembers: 400,
            n_reference: 400,
            seq_len: 96,
            shift_epsilon: 0.1,
            dirichlet_concentration: 0.5,
            overlap_cap: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < 2 || self.vocab_size > MAX_VOCAB {
            return bad(format!(
                "vocab_size must be in [2, 2^20], got {}",
                self.vocab_size
            ));
        }
        if self.chain_order < 1 {
            return bad("chain_order must be at least 1".into());
        }
        if self.n_members < 1 || self.n_nonmembers < 1 || self.n_reference < 1 {
            return bad("member, non-member and reference counts must be at least 1".into());
        }
        if self.seq_len < self.chain_order.max(1) {
            return bad(format!(
                "seq_len {} shorter than chain_order {}",
                self.seq_len, self.chain_order
            ));
        }
        if !(0.0..1.0).contains(&self.shift_epsilon) {
            return bad(format!(
                "shift_epsilon must lie in [0, 1), got {}",
                self.shift_epsilon
            ));
        }
        if !(self.dirichlet_concentration > 0.0 && self.dirichlet_concentration.is_finite()) {
            return bad("dirichlet_concentration must be positive".into());
        }
        if let Some(cap) = self.overlap_cap {
            if cap.n == 0 || cap.n > self.seq_len || !(0.0..=1.0).contains(&cap.max_fraction) {
                return bad(format!(
                    "bad overlap cap n={} fraction={}",
                    cap.n, cap.max_fraction
                ));
            }
        }
        context_count(self.vocab_size, self.chain_order)
            .and_then(|c| c.checked_mul(self.vocab_size))
            .filter(|&e| e <= MAX_CHAIN_ENTRIES)
            .ok_or_else(|| {
                Error::InvalidConfig("chain table too large for vocab_size and chain_order".into())
            })?;
        Ok(())
    }
}

/// `(V + 1)^(order - 1)`: every context over the vocabulary plus the padding sentinel.
fn context_count(vocab_size: usize, order: usize) -> Option<usize> {
    (vocab_size + 1).checked_pow(order.checked_sub(1)? as u32)
}

fn context_index(context: &[usize], vocab_size: usize) -> usize {
    context.iter().fold(0, |acc, &t| acc * (vocab_size + 1) + t)
}

/// The generating process: one categorical distribution per padded context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub seed: u64,
    pub vocab_size: usize,
    pub order: usize,
    pub dirichlet_concentration: f64,
    /// Context padding sentinel (equals `vocab_size`).
    pub bos: usize,
    /// Indexed by the context read as a base-`(V + 1)` number, oldest token first.
    pub distributions: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn random(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_CHAIN);
        let gamma = Gamma::new(cfg.dirichlet_concentration, 1.0)
            .map_err(|e| Error::InvalidConfig(format!("dirichlet: {e}")))?;
        let contexts = context_count(cfg.vocab_size, cfg.chain_order).expect("validated");
        let distributions = (0..contexts)
            .map(|_| {
                let draws: Vec<f64> = (0..cfg.vocab_size)
                    .map(|_| gamma.sample(&mut rng))
                    .collect();
                let total: f64 = draws.iter().sum();
                if total > 0.0 {
                    draws.iter().map(|d| d / total).collect()
                } else {
                    vec![1.0 / cfg.vocab_size as f64; cfg.vocab_size]
                }
            })
            .collect();
        Ok(MarkovChain {
            seed: cfg.seed,
            vocab_size: cfg.vocab_size,
            order: cfg.chain_order,
            dirichlet_concentration: cfg.dirichlet_concentration,
            bos: cfg.vocab_size,
            distributions,
        })
    }

    pub fn distribution(&self, context: &[usize]) -> &[f64] {
        &self.distributions[context_index(context, self.vocab_size)]
    }

    /// Draws one sequence; each token is uniform with probability `epsilon`.
    pub fn sample<R: Rng>(&self, rng: &mut R, len: usize, epsilon: f64) -> Vec<usize> {
        let mut context = vec![self.bos; self.order - 1];
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let tok = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                rng.random_range(0..self.vocab_size)
            } else {
                sample_categorical(rng, self.distribution(&context))
            };
            out.push(tok);
            if !context.is_empty() {
                context.remove(0);
                context.push(tok);
            }
        }
        out
    }
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair below 1; fall back to the last supported token.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub members: Vec<Vec<usize>>,
    pub nonmembers: Vec<Vec<usize>>,
    pub reference: Vec<Vec<usize>>,
    pub chain: MarkovChain,
}

impl SynthCorpus {
    /// SHA-256 over member then non-member token ids (little-endian u32, one
    /// `0xFFFFFFFF` separator after each sequence).
    pub fn summary_hash(&self) -> String {
        let mut h = Sha256::new();
        for seq in self.members.iter().chain(&self.nonmembers) {
            for &t in seq {
                h.update((t as u32).to_le_bytes());
            }
            h.update(u32::MAX.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Token counts of the reference sequences.
    pub fn reference_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.chain.vocab_size];
        for &t in self.reference.iter().flatten() {
            counts[t] += 1;
        }
        counts
    }
}

/// Draws the chain, then member, non-member and reference sequences, each from
/// its own deterministic stream of the seed.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let chain = MarkovChain::random(cfg)?;
    let stream = |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s);
        rng
    };

    let mut rng = stream(STREAM_MEMBERS);
    let members: Vec<Vec<usize>> = (0..cfg.n_members)
        .map(|_| chain.sample(&mut rng, cfg.seq_len, 0.0))
        .collect();

    let mut rng = stream(STREAM_NONMEMBERS);
    let nonmembers = match cfg.overlap_cap {
        None => (0..cfg.n_nonmembers)
            .map(|_| chain.sample(&mut rng, cfg.seq_len, cfg.shift_epsilon))
            .collect(),
        Some(cap) => {
            let index = NgramIndex::new(&members, cap.n);
            let max_draws = cfg.n_nonmembers.saturating_mul(100);
            let mut kept = Vec::with_capacity(cfg.n_nonmembers);
            let mut draws = 0;
            while kept.len() < cfg.n_nonmembers {
                if draws == max_draws {
                    return Err(Error::InvalidConfig(format!(
                        "could not draw {} non-members under the {}-gram cap {} in {} attempts",
                        cfg.n_nonmembers, cap.n, cap.max_fraction, max_draws
                    )));
                }
                draws += 1;
                let cand = chain.sample(&mut rng, cfg.seq_len, cfg.shift_epsilon);
                if index.overlap(&cand)? <= cap.max_fraction {
                    kept.push(cand);
                }
            }
            kept
        }
    };

    let mut rng = stream(STREAM_REFERENCE);
    let reference = (0..cfg.n_reference)
        .map(|_| chain.sample(&mut rng, cfg.seq_len, 0.0))
        .collect();

    Ok(SynthCorpus {
        members,
        nonmembers,
        reference,
        chain,
    })
}

/// Additive-smoothed n-gram model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLmModel {
    pub order: usize,
    pub vocab_size: usize,
    pub smoothing_beta: f64,
    /// Context (padded, length `order - 1`) to next-token counts.
    pub counts: HashMap<Vec<usize>, Vec<u32>>,
}

/// Maximum-likelihood counts with `(count + beta) / (total + beta * V)` smoothing.
pub fn train_ngram(
    texts: &[Vec<usize>],
    order: usize,
    beta: f64,
    vocab_size: usize,
) -> Result<ToyLmModel> {
    if texts.is_empty() || texts.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if order < 1 {
        return Err(Error::InvalidConfig("order must be at least 1".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "smoothing beta must be positive, got {beta}"
        )));
    }
    if vocab_size < 2 {
        return Err(Error::VocabularyTooSmall(vocab_size));
    }
    let mut counts: HashMap<Vec<usize>, Vec<u32>> = HashMap::new();
    for text in texts {
        let mut context = vec![vocab_size; order - 1];
        for &tok in text {
            if tok >= vocab_size {
                return Err(Error::VocabMismatch {
                    token: tok,
                    vocab_size,
                });
            }
            counts
                .entry(context.clone())
                .or_insert_with(|| vec![0; vocab_size])[tok] += 1;
            if !context.is_empty() {
                context.remove(0);
                context.push(tok);
            }
        }
    }
    Ok(ToyLmModel {
        order,
        vocab_size,
        smoothing_beta: beta,
        counts,
    })
}

impl ToyLmModel {
    pub fn probabilities(&self, context: &[usize]) -> Result<Vec<f64>> {
        if context.len() != self.order - 1 {
            return Err(Error::BadContextLength {
                expected: self.order - 1,
                got: context.len(),
            });
        }
        if let Some(&t) = context.iter().find(|&&t| t > self.vocab_size) {
            return Err(Error::VocabMismatch {
                token: t,
                vocab_size: self.vocab_size,
            });
        }
        let beta = self.smoothing_beta;
        let v = self.vocab_size as f64;
        Ok(match self.counts.get(context) {
            None => vec![1.0 / v; self.vocab_size],
            Some(c) => {
                let total: f64 = c.iter().map(|&x| x as f64).sum();
                let denom = total + beta * v;
                c.iter().map(|&x| (x as f64 + beta) / denom).collect()
            }
        })
    }

    /// Natural-log next-token probabilities, usable directly as logits.
    pub fn next_token_logits(&self, context: &[usize]) -> Result<Vec<f64>> {
        Ok(self
            .probabilities(context)?
            .into_iter()
            .map(f64::ln)
            .collect())
    }

    fn walk<T>(&self, tokens: &[usize], mut f: impl FnMut(usize, Vec<f64>) -> T) -> Result<Vec<T>> {
        let mut context = vec![self.vocab_size; self.order - 1];
        let mut out = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            if tok >= self.vocab_size {
                return Err(Error::VocabMismatch {
                    token: tok,
                    vocab_size: self.vocab_size,
                });
            }
            out.push(f(tok, self.next_token_logits(&context)?));
            if !context.is_empty() {
                context.remove(0);
                context.push(tok);
            }
        }
        Ok(out)
    }
}

/// A tokenized text awaiting scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyText {
    pub id: String,
    pub tokens: Vec<usize>,
    pub label: Label,
}

/// FULL traces: every step carries the model's log-distribution.
pub fn emit_traces(m: &ToyLmModel, texts: &[ToyText]) -> Result<Vec<SampleTrace>> {
    texts
        .par_iter()
        .map(|t| {
            let steps = m.walk(&t.tokens, |tok, logits| {
                let lp = logits[tok];
                TokenStep {
                    token_id: tok,
                    logits: Some(logits),
                    chosen_logprob: Some(lp),
                }
            })?;
            Ok(SampleTrace {
                id: t.id.clone(),
                label: t.label,
                fidelity: Fidelity::Full,
                text: Some(render_text(&t.tokens)),
                steps,
                loss_grid: None,
            })
        })
        .collect()
}

/// CHOSEN traces: only the realized token's log-probability.
pub fn emit_chosen_traces(m: &ToyLmModel, texts: &[ToyText]) -> Result<Vec<SampleTrace>> {
    texts
        .par_iter()
        .map(|t| {
            let steps = m.walk(&t.tokens, |tok, logits| TokenStep::chosen(tok, logits[tok]))?;
            Ok(SampleTrace {
                id: t.id.clone(),
                label: t.label,
                fidelity: Fidelity::Chosen,
                text: Some(render_text(&t.tokens)),
                steps,
                loss_grid: None,
            })
        })
        .collect()
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Surface spelling of a token: a consonant-vowel word for `id / 2`,
/// capitalized when the case bit (`id & 1`) is set.
pub fn token_word(id: usize) -> String {
    let mut x = id / 2;
    let mut word = String::new();
    loop {
        word.push(CONSONANTS[x % CONSONANTS.len()] as char);
        x /= CONSONANTS.len();
        word.push(VOWELS[x % VOWELS.len()] as char);
        x /= VOWELS.len();
        if x == 0 {
            break;
        }
    }
    if id & 1 == 1 {
        word[..1].to_uppercase() + &word[1..]
    } else {
        word
    }
}

pub fn render_text(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&t| token_word(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps whitespace-separated words back to token ids.
pub fn tokenize(text: &str, vocab_size: usize) -> Result<Vec<usize>> {
    let lookup: HashMap<String, usize> = (0..vocab_size).map(|i| (token_word(i), i)).collect();
    text.split_whitespace()
        .map(|w| {
            lookup.get(w).copied().ok_or_else(|| {
                Error::InvalidConfig(format!("word {w:?} not in the toy vocabulary"))
            })
        })
        .collect()
}

/// Unicode-lowercases the rendered text and re-tokenizes it.
pub fn lowercase_tokens(tokens: &[usize], vocab_size: usize) -> Result<Vec<usize>> {
    tokenize(&render_text(tokens).to_lowercase(), vocab_size)
}

/// Set of every n-gram in a collection of sequences.
#[derive(Debug, Clone)]
pub struct NgramIndex {
    n: usize,
    grams: HashSet<Vec<usize>>,
}

impl NgramIndex {
    pub fn new(sequences: &[Vec<usize>], n: usize) -> Self {
        let grams = sequences
            .iter()
            .flat_map(|s| s.windows(n.max(1)).map(<[usize]>::to_vec))
            .collect();
        NgramIndex { n, grams }
    }

    /// Fraction of `x`'s n-grams present in the index.
    pub fn overlap(&self, x: &[usize]) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if x.len() < self.n {
            return Err(Error::SequenceTooShort {
                len: x.len(),
                n: self.n,
            });
        }
        let windows = x.len() - self.n + 1;
        let hits = x
            .windows(self.n)
            .filter(|w| self.grams.contains(*w))
            .count();
        Ok(hits as f64 / windows as f64)
    }
}

/// Fraction of `x`'s n-grams that appear verbatim in some member sequence.
pub fn ngram_overlap(x: &[usize], members: &[Vec<usize>], n: usize) -> Result<f64> {
    NgramIndex::new(members, n).overlap(x)
}
