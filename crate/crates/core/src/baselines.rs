//! Reference attacks, all oriented "higher means member".
//!
//! | attack    | orientation relative to the usual published form |
//! |-----------|---------------------------------------------------|
//! | Loss      | negated (members have low loss)                   |
//! | Min-K%    | negated (mean log-prob instead of mean NLL)       |
//! | Ref       | negated (`L_ref - L_target`)                      |
//! | Zlib      | negated (`-NLL / compressed bytes`)               |
//! | Lowercase | as written (`L_lower / L_orig`)                   |
//! | Min-K%++  | as written                                        |
//! | DC-PDD    | as written                                        |

use std::io::Write;
use std::path::Path;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{fos_positions, sample_loss, Fidelity, SampleTrace};
use crate::tsp::TspContext;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub k_percent: f64,
    pub dcpdd_bound_a: f64,
    pub compression_level: u32,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            k_percent: 20.0,
            dcpdd_bound_a: 3.0,
            compression_level: 6,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            return Err(Error::InvalidConfig(format!(
                "k_percent must lie in (0, 100], got {}",
                self.k_percent
            )));
        }
        if self.dcpdd_bound_a.is_nan() || self.dcpdd_bound_a < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "DC-PDD bound must be non-negative, got {}",
                self.dcpdd_bound_a
            )));
        }
        if self.compression_level > 9 {
            return Err(Error::InvalidConfig(format!(
                "compression level must be 0-9, got {}",
                self.compression_level
            )));
        }
        Ok(())
    }
}

/// Empirical token distribution of a reference corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub vocab_size: usize,
    pub freq: Vec<f64>,
    pub smoothing: f64,
}

impl FrequencyTable {
    /// `freq[i] = (count[i] + smoothing) / (total + smoothing * vocab_size)`.
    pub fn from_counts(counts: &[u64], vocab_size: usize, smoothing: f64) -> Result<Self> {
        if vocab_size == 0 || counts.len() > vocab_size {
            return Err(Error::VocabMismatch {
                token: counts.len().saturating_sub(1),
                vocab_size,
            });
        }
        if smoothing.is_nan() || smoothing <= 0.0 {
            return Err(Error::InvalidConfig("smoothing must be positive".into()));
        }
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + smoothing * vocab_size as f64;
        let freq = (0..vocab_size)
            .map(|i| (counts.get(i).copied().unwrap_or(0) as f64 + smoothing) / denom)
            .collect();
        Ok(FrequencyTable {
            vocab_size,
            freq,
            smoothing,
        })
    }

    /// Reads `token_id,count` rows and applies +1 smoothing. Without an
    /// explicit `vocab_size` the vocabulary ends at the largest listed id.
    pub fn load_csv(path: &Path, vocab_size: Option<usize>) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let mut counts: Vec<u64> = Vec::new();
        for row in reader.deserialize::<(usize, u64)>() {
            let (id, count) = row.map_err(csv_err)?;
            if counts.len() <= id {
                counts.resize(id + 1, 0);
            }
            counts[id] += count;
        }
        let vocab = vocab_size.unwrap_or(counts.len());
        Self::from_counts(&counts, vocab, 1.0)
    }

    pub fn get(&self, token: usize) -> Result<f64> {
        self.freq.get(token).copied().ok_or(Error::VocabMismatch {
            token,
            vocab_size: self.vocab_size,
        })
    }
}

/// Negated mean NLL over every token.
pub fn score_loss(t: &SampleTrace) -> Result<f64> {
    Ok(-sample_loss(t, false)?)
}

fn selection_size(k_percent: f64, steps: usize) -> usize {
    ((k_percent * steps as f64 / 100.0).ceil() as usize).clamp(1, steps)
}

/// Mean of the `ceil(k% * T)` smallest values, summed in step order.
fn mean_of_lowest(values: &[f64], k_percent: f64) -> f64 {
    let count = selection_size(k_percent, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    let total: f64 = picked.iter().map(|&i| values[i]).sum();
    total / count as f64
}

/// Mean log-probability of the least likely k% of tokens.
pub fn score_minkpct(t: &SampleTrace, p: &BaselineParams) -> Result<f64> {
    p.validate()?;
    let lps = t.chosen_logprobs()?;
    Ok(mean_of_lowest(&lps, p.k_percent))
}

/// Per-step z-scores of the realized token under the unscaled distribution.
pub fn minkpp_token_scores(t: &SampleTrace) -> Result<Vec<f64>> {
    t.require(Fidelity::Full)?;
    (0..t.steps.len())
        .map(|i| TspContext::new(t.logits_at(i)?, 1.0)?.z_score(t.steps[i].token_id))
        .collect()
}

/// Mean of the lowest k% per-step z-scores.
pub fn score_minkpp(t: &SampleTrace, p: &BaselineParams) -> Result<f64> {
    p.validate()?;
    let z = minkpp_token_scores(t)?;
    Ok(mean_of_lowest(&z, p.k_percent))
}

/// Byte length of `data` in zlib framing at the given level.
pub fn zlib_compressed_len(data: &[u8], level: u32) -> usize {
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(level));
    enc.write_all(data).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

/// `-(summed NLL in nats) / zlib bytes of the UTF-8 text`.
pub fn score_compression(t: &SampleTrace, p: &BaselineParams) -> Result<f64> {
    p.validate()?;
    let text = t
        .text
        .as_deref()
        .ok_or_else(|| Error::MissingText(t.id.clone()))?;
    if text.is_empty() {
        return Err(Error::EmptyCompression(t.id.clone()));
    }
    let total_nll = sample_loss(t, false)? * t.steps.len() as f64;
    let bytes = zlib_compressed_len(text.as_bytes(), p.compression_level);
    Ok(-total_nll / bytes as f64)
}

/// Ratio of the lowercased text's loss to the original loss.
pub fn score_lowercase(loss_original: f64, loss_lowercased: f64) -> Result<f64> {
    if loss_original.is_nan() || loss_original <= 0.0 {
        return Err(Error::ZeroOriginalLoss(loss_original));
    }
    Ok(loss_lowercased / loss_original)
}

/// Reference loss minus target loss.
pub fn score_ref(loss_target: f64, loss_reference: f64) -> f64 {
    loss_reference - loss_target
}

/// Clipped frequency-calibrated divergence over first occurrences.
pub fn score_dcpdd(t: &SampleTrace, ft: &FrequencyTable, p: &BaselineParams) -> Result<f64> {
    p.validate()?;
    let lps = t.chosen_logprobs()?;
    let fos = fos_positions(t);
    let mut total = 0.0;
    for &i in &fos {
        let prob = lps[i].exp();
        let f = ft.get(t.steps[i].token_id)?;
        total += (-prob * f.ln()).min(p.dcpdd_bound_a);
    }
    Ok(total / fos.len() as f64)
}
