#![allow(dead_code)]

use acmia::metrics::{ScoreEntry, ScoreSet};
use acmia::trace::{validate_trace, Fidelity, Label, SampleTrace, TokenStep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_logits<R: Rng>(rng: &mut R, v: usize, range: f64) -> Vec<f64> {
    (0..v).map(|_| rng.random_range(-range..=range)).collect()
}

/// FULL trace with `v` logits per step in [-range, range].
pub fn random_full_trace<R: Rng>(
    rng: &mut R,
    id: &str,
    label: Label,
    v: usize,
    steps: usize,
    range: f64,
) -> SampleTrace {
    let steps = (0..steps)
        .map(|_| TokenStep::full(rng.random_range(0..v), random_logits(rng, v, range)))
        .collect();
    validate_trace(SampleTrace {
        id: id.to_string(),
        label,
        fidelity: Fidelity::Full,
        text: None,
        steps,
        loss_grid: None,
    })
    .expect("random trace is valid")
}

pub fn any_full_trace<R: Rng>(rng: &mut R, id: &str) -> SampleTrace {
    let v = rng.random_range(2..=64);
    let t = rng.random_range(1..=40);
    let label = if rng.random_bool(0.5) {
        Label::Member
    } else {
        Label::Nonmember
    };
    random_full_trace(rng, id, label, v, t, 20.0)
}

pub fn score_set(members: &[f64], nonmembers: &[f64]) -> ScoreSet {
    let mut entries = Vec::new();
    for (i, &s) in members.iter().enumerate() {
        entries.push(ScoreEntry {
            id: format!("m{i:05}"),
            label: Label::Member,
            score: s,
        });
    }
    for (i, &s) in nonmembers.iter().enumerate() {
        entries.push(ScoreEntry {
            id: format!("n{i:05}"),
            label: Label::Nonmember,
            score: s,
        });
    }
    ScoreSet::new(entries)
}

/// Random labeled set with both classes present; `levels` > 0 forces heavy ties.
pub fn random_score_set<R: Rng>(rng: &mut R, n: usize, levels: u32) -> ScoreSet {
    let n = n.max(2);
    let mut entries: Vec<ScoreEntry> = (0..n)
        .map(|i| {
            let label = if i == 0 {
                Label::Member
            } else if i == 1 {
                Label::Nonmember
            } else if rng.random_bool(0.5) {
                Label::Member
            } else {
                Label::Nonmember
            };
            let score = if levels > 0 {
                rng.random_range(0..levels) as f64
            } else {
                rng.random_range(-5.0..5.0)
            };
            ScoreEntry {
                id: format!("s{i:05}"),
                label,
                score,
            }
        })
        .collect();
    // Interleave labels so the id order does not track the label.
    entries.sort_by_key(|e| e.id.chars().rev().collect::<String>());
    ScoreSet::new(entries)
}

fn split(s: &ScoreSet) -> (Vec<f64>, Vec<f64>) {
    let pos = s
        .entries
        .iter()
        .filter(|e| e.label == Label::Member)
        .map(|e| e.score)
        .collect();
    let neg = s
        .entries
        .iter()
        .filter(|e| e.label == Label::Nonmember)
        .map(|e| e.score)
        .collect();
    (pos, neg)
}

/// O(n^2) pair count.
pub fn brute_auroc(s: &ScoreSet) -> f64 {
    let (pos, neg) = split(s);
    let mut credit = 0u64;
    for &p in &pos {
        for &n in &neg {
            credit += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    credit as f64 / (2 * pos.len() * neg.len()) as f64
}

/// Every observed score as a threshold, plus one above all scores.
fn thresholds(s: &ScoreSet) -> Vec<(usize, usize)> {
    let (pos, neg) = split(s);
    let mut lams: Vec<f64> = s.entries.iter().map(|e| e.score).collect();
    lams.push(f64::INFINITY);
    lams.iter()
        .map(|&l| {
            (
                pos.iter().filter(|&&x| x >= l).count(),
                neg.iter().filter(|&&x| x >= l).count(),
            )
        })
        .collect()
}

pub fn brute_tpr_at_fpr(s: &ScoreSet, cap: f64) -> f64 {
    let (pos, neg) = split(s);
    thresholds(s)
        .into_iter()
        .filter(|&(_, fp)| fp as f64 / neg.len() as f64 <= cap)
        .map(|(tp, _)| tp as f64 / pos.len() as f64)
        .fold(0.0, f64::max)
}

pub fn brute_fpr_at_tpr(s: &ScoreSet, floor: f64) -> f64 {
    let (pos, neg) = split(s);
    thresholds(s)
        .into_iter()
        .filter(|&(tp, _)| tp as f64 / pos.len() as f64 >= floor)
        .map(|(_, fp)| fp as f64 / neg.len() as f64)
        .fold(1.0, f64::min)
}

/// Direct log-softmax of `z / tau` without any shifting tricks beyond the max.
pub fn naive_log_tsp(z: &[f64], tau: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|&x| ((x - m) / tau).exp()).sum();
    z.iter().map(|&x| (x - m) / tau - s.ln()).collect()
}

/// All fixed-length windows of `x` that occur in some member, by direct scan.
pub fn naive_overlap(x: &[usize], members: &[Vec<usize>], n: usize) -> f64 {
    let windows = x.len() - n + 1;
    let hits = (0..windows)
        .filter(|&i| {
            members
                .iter()
                .any(|m| m.windows(n).any(|w| w == &x[i..i + n]))
        })
        .count();
    hits as f64 / windows as f64
}
