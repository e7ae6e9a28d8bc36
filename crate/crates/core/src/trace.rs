//! Trace data model: per-token steps of one text sample, fidelity levels,
//! membership labels, and the per-sample loss.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsp::{self, MAX_VOCAB};

/// Tolerance for agreement between a stored `chosen_logprob` and its logits.
pub const LOGPROB_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStep {
    pub token_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_logprob: Option<f64>,
}

impl TokenStep {
    pub fn full(token_id: usize, logits: Vec<f64>) -> Self {
        TokenStep {
            token_id,
            logits: Some(logits),
            chosen_logprob: None,
        }
    }

    pub fn chosen(token_id: usize, chosen_logprob: f64) -> Self {
        TokenStep {
            token_id,
            logits: None,
            chosen_logprob: Some(chosen_logprob),
        }
    }

    pub fn bare(token_id: usize) -> Self {
        TokenStep {
            token_id,
            logits: None,
            chosen_logprob: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// Every step carries the full next-token logit vector.
    Full,
    /// Every step carries the log-probability of the realized token.
    Chosen,
    /// Only sample-level losses at a handful of temperatures.
    Lossgrid,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Full => "FULL",
            Fidelity::Chosen => "CHOSEN",
            Fidelity::Lossgrid => "LOSSGRID",
        })
    }
}

/// Membership ground truth. Serialized as `"member"`, `"nonmember"` or `null`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Label {
    Member,
    Nonmember,
    #[default]
    Unlabeled,
}

impl Label {
    pub fn is_member(self) -> Option<bool> {
        match self {
            Label::Member => Some(true),
            Label::Nonmember => Some(false),
            Label::Unlabeled => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Member => "member",
            Label::Nonmember => "nonmember",
            Label::Unlabeled => "",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "member" => Some(Label::Member),
            "nonmember" => Some(Label::Nonmember),
            "" | "null" | "unlabeled" => Some(Label::Unlabeled),
            _ => None,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Label::Unlabeled => s.serialize_none(),
            other => s.serialize_str(other.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        match raw.as_deref() {
            None => Ok(Label::Unlabeled),
            Some("member") => Ok(Label::Member),
            Some("nonmember") => Ok(Label::Nonmember),
            Some(other) => Err(de::Error::invalid_value(
                de::Unexpected::Str(other),
                &"\"member\", \"nonmember\" or null",
            )),
        }
    }
}

/// Mean NLL (nats) of a sample at a set of temperatures, sorted by temperature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossGrid {
    points: Vec<(f64, f64)>,
}

impl LossGrid {
    pub fn new(points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut points: Vec<(f64, f64)> = points.into_iter().collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points.dedup_by(|a, b| a.0 == b.0);
        LossGrid { points }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Loss at `tau`, matching stored temperatures to a relative 1e-9.
    pub fn get(&self, tau: f64) -> Option<f64> {
        let tol = 1e-9 * tau.abs().max(1.0);
        self.points
            .iter()
            .find(|(t, _)| (t - tau).abs() <= tol)
            .map(|&(_, loss)| loss)
    }
}

impl Serialize for LossGrid {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.points.len()))?;
        for (tau, loss) in &self.points {
            map.serialize_entry(&tau.to_string(), loss)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for LossGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct GridVisitor;

        impl<'de> Visitor<'de> for GridVisitor {
            type Value = LossGrid;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping decimal temperatures to losses")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<LossGrid, A::Error> {
                let mut points = Vec::new();
                while let Some((key, loss)) = map.next_entry::<String, f64>()? {
                    let tau: f64 = key.trim().parse().map_err(|_| {
                        de::Error::invalid_value(
                            de::Unexpected::Str(&key),
                            &"a decimal temperature",
                        )
                    })?;
                    points.push((tau, loss));
                }
                Ok(LossGrid::new(points))
            }
        }

        d.deserialize_map(GridVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub id: String,
    #[serde(default)]
    pub label: Label,
    pub fidelity: Fidelity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub steps: Vec<TokenStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_grid: Option<LossGrid>,
}

impl SampleTrace {
    pub fn token_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.token_id)
    }

    pub(crate) fn require(&self, fidelity: Fidelity) -> Result<()> {
        if self.fidelity == fidelity {
            Ok(())
        } else {
            Err(Error::WrongFidelity {
                id: self.id.clone(),
                required: match fidelity {
                    Fidelity::Full => "FULL",
                    Fidelity::Chosen => "CHOSEN",
                    Fidelity::Lossgrid => "LOSSGRID",
                },
                found: self.fidelity,
            })
        }
    }

    /// FULL or CHOSEN; both carry a per-token log-probability after validation.
    pub(crate) fn require_token_level(&self) -> Result<()> {
        match self.fidelity {
            Fidelity::Full | Fidelity::Chosen => Ok(()),
            Fidelity::Lossgrid => Err(Error::WrongFidelity {
                id: self.id.clone(),
                required: "CHOSEN or FULL",
                found: self.fidelity,
            }),
        }
    }

    /// Per-step log-probabilities of the realized tokens.
    pub fn chosen_logprobs(&self) -> Result<Vec<f64>> {
        self.require_token_level()?;
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.chosen_logprob.ok_or_else(|| Error::MissingLogprob {
                    id: self.id.clone(),
                    step: i,
                })
            })
            .collect()
    }

    pub(crate) fn logits_at(&self, step: usize) -> Result<&[f64]> {
        self.steps[step]
            .logits
            .as_deref()
            .ok_or_else(|| Error::FidelityMismatch {
                id: self.id.clone(),
                reason: format!("step {step} has no logits"),
            })
    }

    pub(crate) fn loss_at(&self, tau: f64) -> Result<f64> {
        self.require(Fidelity::Lossgrid)?;
        self.loss_grid
            .as_ref()
            .and_then(|g| g.get(tau))
            .ok_or_else(|| Error::MissingGridPoint {
                id: self.id.clone(),
                tau,
            })
    }
}

fn mismatch(t: &SampleTrace, reason: impl Into<String>) -> Error {
    Error::FidelityMismatch {
        id: t.id.clone(),
        reason: reason.into(),
    }
}

/// Checks every trace invariant and fills `chosen_logprob` from logits where absent.
pub fn validate_trace(mut t: SampleTrace) -> Result<SampleTrace> {
    if t.steps.is_empty() {
        return Err(Error::EmptyTrace(t.id));
    }

    for i in 0..t.steps.len() {
        let step = &t.steps[i];
        if let Some(logits) = &step.logits {
            if logits.len() < 2 {
                return Err(Error::VocabularyTooSmall(logits.len()));
            }
            if logits.len() > MAX_VOCAB {
                return Err(Error::VocabularyTooLarge(logits.len()));
            }
            if let Some(j) = logits.iter().position(|z| !z.is_finite()) {
                return Err(Error::NonFiniteLogit(j));
            }
            if step.token_id >= logits.len() {
                return Err(Error::IndexOutOfRange {
                    index: step.token_id,
                    size: logits.len(),
                });
            }
            let computed = logits[step.token_id] - tsp::logsumexp(logits);
            match step.chosen_logprob {
                Some(given) if (given - computed).abs() > LOGPROB_TOLERANCE || given.is_nan() => {
                    return Err(Error::InconsistentLogprob {
                        id: t.id.clone(),
                        step: i,
                        given,
                        computed,
                    });
                }
                Some(_) => {}
                None => t.steps[i].chosen_logprob = Some(computed.min(0.0)),
            }
        }

        let step = &t.steps[i];
        if let Some(lp) = step.chosen_logprob {
            if !lp.is_finite() || lp > LOGPROB_TOLERANCE {
                return Err(mismatch(
                    &t,
                    format!("step {i}: chosen_logprob {lp} is not a finite log-probability"),
                ));
            }
        }
        match t.fidelity {
            Fidelity::Full if step.logits.is_none() => {
                return Err(mismatch(&t, format!("step {i} has no logits")));
            }
            Fidelity::Chosen if step.chosen_logprob.is_none() => {
                return Err(mismatch(&t, format!("step {i} has no chosen_logprob")));
            }
            _ => {}
        }
    }

    match (t.fidelity, &t.loss_grid) {
        (Fidelity::Lossgrid, None) => return Err(mismatch(&t, "loss_grid missing")),
        (Fidelity::Lossgrid, Some(grid)) => {
            if grid.get(1.0).is_none() {
                return Err(mismatch(&t, "loss_grid has no entry for tau = 1"));
            }
            if !grid.points().iter().any(|&(tau, _)| tau != 1.0) {
                return Err(mismatch(&t, "loss_grid needs a temperature other than 1"));
            }
            for &(tau, loss) in grid.points() {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(Error::NonPositiveTemperature(tau));
                }
                if !(loss >= 0.0 && loss.is_finite()) {
                    return Err(mismatch(
                        &t,
                        format!("loss {loss} at tau = {tau} is not a valid NLL"),
                    ));
                }
            }
        }
        (_, Some(_)) => {
            return Err(mismatch(
                &t,
                "loss_grid only allowed with lossgrid fidelity",
            ))
        }
        (_, None) => {}
    }

    Ok(t)
}

/// Indices of the first occurrence of each distinct token id.
pub fn fos_positions(t: &SampleTrace) -> Vec<usize> {
    let mut seen = HashSet::new();
    t.steps
        .iter()
        .enumerate()
        .filter(|(_, s)| seen.insert(s.token_id))
        .map(|(i, _)| i)
        .collect()
}

/// Step indices to aggregate over: the first-occurrence set or every step.
pub(crate) fn positions(t: &SampleTrace, restrict_fos: bool) -> Vec<usize> {
    if restrict_fos {
        fos_positions(t)
    } else {
        (0..t.steps.len()).collect()
    }
}

/// Mean negative log-likelihood in nats.
///
/// LOSSGRID traces report their stored loss at tau = 1; `restrict_fos` has no
/// effect there since the upstream loss already covers every token.
pub fn sample_loss(t: &SampleTrace, restrict_fos: bool) -> Result<f64> {
    if t.fidelity == Fidelity::Lossgrid {
        return t.loss_at(1.0);
    }
    let idx = positions(t, restrict_fos);
    let mut total = 0.0;
    for &i in &idx {
        let lp = t.steps[i]
            .chosen_logprob
            .ok_or_else(|| Error::MissingLogprob {
                id: t.id.clone(),
                step: i,
            })?;
        total += -lp;
    }
    Ok((total / idx.len() as f64).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Evaluation,
}

/// Samples with a declared calibration/evaluation assignment.
#[derive(Debug, Clone, Default)]
pub struct LabeledCorpus {
    pub samples: Vec<SampleTrace>,
    pub split: BTreeMap<String, Split>,
}

impl LabeledCorpus {
    /// Joins two disjoint splits. Ids must be unique across both and every
    /// calibration sample must carry a label.
    pub fn from_splits(
        calibration: Vec<SampleTrace>,
        evaluation: Vec<SampleTrace>,
    ) -> Result<Self> {
        let mut corpus = LabeledCorpus::default();
        for (samples, which) in [
            (calibration, Split::Calibration),
            (evaluation, Split::Evaluation),
        ] {
            for s in samples {
                if which == Split::Calibration && s.label == Label::Unlabeled {
                    return Err(Error::InvalidConfig(format!(
                        "calibration sample {} is unlabeled",
                        s.id
                    )));
                }
                if let Some(prev) = corpus.split.insert(s.id.clone(), which) {
                    return Err(if prev != which {
                        Error::SplitOverlap(format!("sample {} appears in both splits", s.id))
                    } else {
                        Error::DuplicateId(s.id)
                    });
                }
                corpus.samples.push(s);
            }
        }
        Ok(corpus)
    }

    pub fn part(&self, which: Split) -> impl Iterator<Item = &SampleTrace> {
        self.samples
            .iter()
            .filter(move |s| self.split.get(&s.id) == Some(&which))
    }
}

/// Rejects duplicate ids within one list of traces.
pub fn check_unique_ids(samples: &[SampleTrace]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}
