//! ROC analysis, threshold verdicts and normalized score histograms.
//!
//! Thresholds sit only at observed score values and a threshold `l` admits
//! every sample with `score >= l`, so tied scores always cross together.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

/// Per-sample scores of one attack.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Self {
        ScoreSet { entries }
    }

    pub fn from_parts(ids: &[String], labels: &[Label], scores: &[f64]) -> Self {
        ScoreSet {
            entries: ids
                .iter()
                .zip(labels)
                .zip(scores)
                .map(|((id, &label), &score)| ScoreEntry {
                    id: id.clone(),
                    label,
                    score,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries carrying a member/non-member label.
    pub fn labeled(&self) -> ScoreSet {
        ScoreSet {
            entries: self
                .entries
                .iter()
                .filter(|e| e.label != Label::Unlabeled)
                .cloned()
                .collect(),
        }
    }

    pub fn count_unlabeled(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == Label::Unlabeled)
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !e.score.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "sample {} has non-finite score {}",
                    e.id, e.score
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(())
    }
}

/// Cumulative (true positives, false positives) after each distinct score,
/// scanning from the highest score down. Starts at (0, 0).
struct Sweep {
    positives: u64,
    negatives: u64,
    steps: Vec<(u64, u64)>,
}

fn sorted_desc(s: &ScoreSet) -> Vec<&ScoreEntry> {
    let mut v: Vec<&ScoreEntry> = s
        .entries
        .iter()
        .filter(|e| e.label != Label::Unlabeled)
        .collect();
    v.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    v
}

fn sweep(s: &ScoreSet) -> Result<Sweep> {
    let sorted = sorted_desc(s);
    let positives = sorted.iter().filter(|e| e.label == Label::Member).count() as u64;
    let negatives = sorted.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels {
            members: positives as usize,
            nonmembers: negatives as usize,
        });
    }
    let mut steps = vec![(0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            match sorted[i].label {
                Label::Member => tp += 1,
                _ => fp += 1,
            }
            i += 1;
        }
        steps.push((tp, fp));
    }
    Ok(Sweep {
        positives,
        negatives,
        steps,
    })
}

impl Sweep {
    /// Twice the Mann-Whitney count (wins count 2, ties count 1).
    fn doubled_pair_credit(&self) -> u64 {
        self.steps
            .windows(2)
            .map(|w| {
                let (tp0, fp0) = w[0];
                let (tp1, fp1) = w[1];
                // New positives beat every negative still below, tie with the group's negatives.
                (tp1 - tp0) * (2 * (self.negatives - fp1) + (fp1 - fp0))
            })
            .sum()
    }

    fn auroc(&self) -> f64 {
        self.doubled_pair_credit() as f64 / (2 * self.positives * self.negatives) as f64
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.steps
            .iter()
            .map(|&(tp, fp)| {
                (
                    fp as f64 / self.negatives as f64,
                    tp as f64 / self.positives as f64,
                )
            })
            .collect()
    }
}

/// Probability that a random member outscores a random non-member, ties at half credit.
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    Ok(sweep(s)?.auroc())
}

/// Highest TPR among thresholds whose FPR does not exceed `fpr_cap`.
pub fn tpr_at_fpr(s: &ScoreSet, fpr_cap: f64) -> Result<f64> {
    let sw = sweep(s)?;
    let best = sw
        .steps
        .iter()
        .filter(|&&(_, fp)| fp as f64 / sw.negatives as f64 <= fpr_cap)
        .map(|&(tp, _)| tp)
        .max()
        .unwrap_or(0);
    Ok(best as f64 / sw.positives as f64)
}

/// Lowest FPR among thresholds whose TPR reaches `tpr_floor`.
pub fn fpr_at_tpr(s: &ScoreSet, tpr_floor: f64) -> Result<f64> {
    let sw = sweep(s)?;
    let best = sw
        .steps
        .iter()
        .filter(|&&(tp, _)| tp as f64 / sw.positives as f64 >= tpr_floor)
        .map(|&(_, fp)| fp)
        .min()
        .unwrap_or(sw.negatives);
    Ok(best as f64 / sw.negatives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub auroc: f64,
    pub tpr_at_5fpr: f64,
    pub fpr_at_95tpr: f64,
    /// `(fpr, tpr)` pairs from the strictest threshold to the most permissive.
    pub points: Vec<(f64, f64)>,
}

pub fn roc_report(s: &ScoreSet) -> Result<RocReport> {
    let sw = sweep(s)?;
    Ok(RocReport {
        n_members: sw.positives as usize,
        n_nonmembers: sw.negatives as usize,
        auroc: sw.auroc(),
        tpr_at_5fpr: tpr_at_fpr(s, 0.05)?,
        fpr_at_95tpr: fpr_at_tpr(s, 0.95)?,
        points: sw.points(),
    })
}

/// Trapezoidal area under a list of `(fpr, tpr)` points.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Verdict {
    pub id: String,
    pub verdict: u8,
}

/// Member (1) iff `score >= lambda`.
pub fn decide(s: &ScoreSet, lambda: f64) -> Vec<Verdict> {
    s.entries
        .iter()
        .map(|e| Verdict {
            id: e.id.clone(),
            verdict: u8::from(e.score >= lambda),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Zscore,
    Minmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub density_member: f64,
    pub density_nonmember: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub normalization: Normalization,
    pub bins: Vec<DensityBin>,
    /// Member mean minus non-member mean, in normalized units.
    pub mean_gap: f64,
}

/// Per-label histograms of normalized scores. Each label's column is its
/// fraction of samples per bin, so a column sums to 1.
pub fn export_density(
    s: &ScoreSet,
    bins: usize,
    normalization: Normalization,
) -> Result<DensityTable> {
    if bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    let labeled: Vec<&ScoreEntry> = s
        .entries
        .iter()
        .filter(|e| e.label != Label::Unlabeled)
        .collect();
    let members = labeled.iter().filter(|e| e.label == Label::Member).count();
    let nonmembers = labeled.len() - members;
    if members == 0 || nonmembers == 0 {
        return Err(Error::DegenerateLabels {
            members,
            nonmembers,
        });
    }
    let raw: Vec<f64> = labeled.iter().map(|e| e.score).collect();
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || min.is_nan() || max <= min {
        return Err(Error::DegenerateScores);
    }

    let n = raw.len() as f64;
    let normalized: Vec<f64> = match normalization {
        Normalization::Minmax => raw.iter().map(|x| (x - min) / (max - min)).collect(),
        Normalization::Zscore => {
            let mean = raw.iter().sum::<f64>() / n;
            let sd = (raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            raw.iter().map(|x| (x - mean) / sd).collect()
        }
    };
    let lo = normalized.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;

    let mut counts = vec![(0usize, 0usize); bins];
    let (mut sum_m, mut sum_n) = (0.0, 0.0);
    for (e, &x) in labeled.iter().zip(&normalized) {
        let b = (((x - lo) / width).floor() as usize).min(bins - 1);
        if e.label == Label::Member {
            counts[b].0 += 1;
            sum_m += x;
        } else {
            counts[b].1 += 1;
            sum_n += x;
        }
    }

    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &(m, nm))| DensityBin {
            bin_left: lo + width * i as f64,
            bin_right: if i + 1 == bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            density_member: m as f64 / members as f64,
            density_nonmember: nm as f64 / nonmembers as f64,
        })
        .collect();

    Ok(DensityTable {
        normalization,
        bins,
        mean_gap: sum_m / members as f64 - sum_n / nonmembers as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(members: &[f64], nonmembers: &[f64]) -> ScoreSet {
        let mut entries = Vec::new();
        for (i, &s) in members.iter().enumerate() {
            entries.push(ScoreEntry {
                id: format!("m{i}"),
                label: Label::Member,
                score: s,
            });
        }
        for (i, &s) in nonmembers.iter().enumerate() {
            entries.push(ScoreEntry {
                id: format!("n{i}"),
                label: Label::Nonmember,
                score: s,
            });
        }
        ScoreSet::new(entries)
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&set(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[1.0, 1.0], &[1.0, 1.0, 1.0])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[1.0, 3.0], &[0.0, 2.0])).unwrap(), 0.75);
    }

    #[test]
    fn degenerate_labels() {
        assert!(matches!(
            auroc(&set(&[1.0], &[])),
            Err(Error::DegenerateLabels { .. })
        ));
        assert!(matches!(
            tpr_at_fpr(&set(&[], &[1.0]), 0.05),
            Err(Error::DegenerateLabels { .. })
        ));
        assert!(matches!(
            fpr_at_tpr(&set(&[], &[]), 0.95),
            Err(Error::DegenerateLabels { .. })
        ));
    }

    #[test]
    fn tpr_at_fpr_examples() {
        assert_eq!(
            tpr_at_fpr(&set(&[5.0, 6.0], &[1.0, 2.0]), 0.05).unwrap(),
            1.0
        );
        assert_eq!(
            tpr_at_fpr(&set(&[1.0, 1.0], &[1.0, 1.0]), 0.05).unwrap(),
            0.0
        );
        let nonmembers: Vec<f64> = [3.0, 2.0, 0.0]
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, 20))
            .collect();
        let t = tpr_at_fpr(&set(&[5.0, 4.0, 1.0], &nonmembers), 0.05).unwrap();
        assert_eq!(t, 2.0 / 3.0);
    }

    #[test]
    fn fpr_at_tpr_examples() {
        assert_eq!(
            fpr_at_tpr(&set(&[5.0, 6.0], &[1.0, 2.0]), 0.95).unwrap(),
            0.0
        );
        assert_eq!(fpr_at_tpr(&set(&[1.0; 4], &[1.0; 6]), 0.95).unwrap(), 1.0);
    }

    #[test]
    fn report_points_are_monotone_and_match_auroc() {
        let s = set(&[0.3, 0.9, 0.9, 0.1], &[0.9, 0.2, 0.05, 0.3]);
        let r = roc_report(&s).unwrap();
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        for w in r.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert!((trapezoid_area(&r.points) - r.auroc).abs() < 1e-12);
    }

    #[test]
    fn decide_boundary() {
        let s = set(&[1.0], &[1.0 - 1e-12]);
        let v = decide(&s, 1.0);
        assert_eq!(v[0].verdict, 1);
        assert_eq!(v[1].verdict, 0);
        assert!(decide(&ScoreSet::default(), 0.0).is_empty());
    }

    #[test]
    fn density_two_points_minmax() {
        let d = export_density(&set(&[1.0], &[0.0]), 2, Normalization::Minmax).unwrap();
        assert_eq!(d.bins.len(), 2);
        assert_eq!(d.bins[0].density_nonmember, 1.0);
        assert_eq!(d.bins[0].density_member, 0.0);
        assert_eq!(d.bins[1].density_member, 1.0);
        assert_eq!(d.mean_gap, 1.0);
    }

    #[test]
    fn density_zscore_keeps_gap_sign() {
        let s = set(&[-3.0, -1.0, 0.5], &[-4.0, -2.0, -2.5, 0.0]);
        let mm = export_density(&s, 5, Normalization::Minmax).unwrap();
        let z = export_density(&s, 5, Normalization::Zscore).unwrap();
        assert!(mm.mean_gap > 0.0 && z.mean_gap > 0.0);
        for d in [&mm, &z] {
            let m: f64 = d.bins.iter().map(|b| b.density_member).sum();
            let n: f64 = d.bins.iter().map(|b| b.density_nonmember).sum();
            assert!((m - 1.0).abs() < 1e-12 && (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn density_needs_distinct_scores() {
        assert!(matches!(
            export_density(&set(&[1.0], &[1.0]), 4, Normalization::Zscore),
            Err(Error::DegenerateScores)
        ));
    }
}
