//! One entry point for every attack: names, fidelity requirements, and
//! corpus-level scoring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acmia::{self, AcmiaParams};
use crate::baselines::{self, BaselineParams, FrequencyTable};
use crate::error::{Error, Result};
use crate::metrics::ScoreSet;
use crate::trace::{sample_loss, Fidelity, SampleTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attack {
    Ac,
    Derivac,
    Normac,
    AcLossgrid,
    DerivacLossgrid,
    Loss,
    Mink,
    Minkpp,
    Zlib,
    Lowercase,
    Ref,
    Dcpdd,
}

impl Attack {
    pub const ALL: [Attack; 12] = [
        Attack::Ac,
        Attack::Derivac,
        Attack::Normac,
        Attack::AcLossgrid,
        Attack::DerivacLossgrid,
        Attack::Loss,
        Attack::Mink,
        Attack::Minkpp,
        Attack::Zlib,
        Attack::Lowercase,
        Attack::Ref,
        Attack::Dcpdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attack::Ac => "ac",
            Attack::Derivac => "derivac",
            Attack::Normac => "normac",
            Attack::AcLossgrid => "ac-lossgrid",
            Attack::DerivacLossgrid => "derivac-lossgrid",
            Attack::Loss => "loss",
            Attack::Mink => "mink",
            Attack::Minkpp => "minkpp",
            Attack::Zlib => "zlib",
            Attack::Lowercase => "lowercase",
            Attack::Ref => "ref",
            Attack::Dcpdd => "dcpdd",
        }
    }

    /// Whether the attack has a temperature to tune.
    pub fn uses_temperature(self) -> bool {
        matches!(
            self,
            Attack::Ac
                | Attack::Derivac
                | Attack::Normac
                | Attack::AcLossgrid
                | Attack::DerivacLossgrid
        )
    }

    /// Checks the trace's fidelity against the attack's needs.
    ///
    /// FULL supersedes CHOSEN; LOSSGRID feeds only the loss-only attacks plus
    /// those needing nothing but the loss at tau = 1.
    pub fn check_fidelity(self, t: &SampleTrace) -> Result<()> {
        let ok = match self {
            Attack::Ac | Attack::Derivac | Attack::Normac | Attack::Minkpp => {
                t.fidelity == Fidelity::Full
            }
            Attack::AcLossgrid | Attack::DerivacLossgrid => t.fidelity == Fidelity::Lossgrid,
            Attack::Mink | Attack::Dcpdd => t.fidelity != Fidelity::Lossgrid,
            Attack::Loss | Attack::Zlib | Attack::Lowercase | Attack::Ref => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::WrongFidelity {
                id: t.id.clone(),
                required: match self {
                    Attack::Ac | Attack::Derivac | Attack::Normac | Attack::Minkpp => "FULL",
                    Attack::AcLossgrid | Attack::DerivacLossgrid => "LOSSGRID",
                    _ => "CHOSEN or FULL",
                },
                found: t.fidelity,
            })
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attack::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown attack {s:?}")))
    }
}

/// Attack plus every hyperparameter it may read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub attack: Attack,
    pub acmia: AcmiaParams,
    pub baseline: BaselineParams,
}

impl AttackConfig {
    pub fn new(attack: Attack) -> Self {
        AttackConfig {
            attack,
            acmia: AcmiaParams::default(),
            baseline: BaselineParams::default(),
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.acmia.tau = tau;
        self
    }
}

/// Side inputs for the attacks that compare against something other than the
/// target trace itself. Keyed by sample id.
#[derive(Debug, Clone, Default)]
pub struct Auxiliary {
    /// Loss of the same text under a reference model (Ref).
    pub reference_loss: HashMap<String, f64>,
    /// Loss of the lowercased text under the target model (Lowercase).
    pub lowercase_loss: HashMap<String, f64>,
    /// Reference-corpus token frequencies (DC-PDD).
    pub frequencies: Option<FrequencyTable>,
}

impl Auxiliary {
    pub fn with_reference(mut self, traces: &[SampleTrace]) -> Result<Self> {
        self.reference_loss = losses_by_id(traces)?;
        Ok(self)
    }

    pub fn with_lowercase(mut self, traces: &[SampleTrace]) -> Result<Self> {
        self.lowercase_loss = losses_by_id(traces)?;
        Ok(self)
    }
}

fn losses_by_id(traces: &[SampleTrace]) -> Result<HashMap<String, f64>> {
    traces
        .iter()
        .map(|t| Ok((t.id.clone(), sample_loss(t, false)?)))
        .collect()
}

fn side_loss(map: &HashMap<String, f64>, id: &str, what: &str) -> Result<f64> {
    map.get(id)
        .copied()
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} loss for sample {id}")))
}

/// Scores one trace.
pub fn score_sample(t: &SampleTrace, cfg: &AttackConfig, aux: &Auxiliary) -> Result<f64> {
    cfg.attack.check_fidelity(t)?;
    let a = &cfg.acmia;
    let b = &cfg.baseline;
    match cfg.attack {
        Attack::Ac => acmia::score_ac(t, a),
        Attack::Derivac => acmia::score_derivac(t, a),
        Attack::Normac => acmia::score_normac(t, a),
        Attack::AcLossgrid => acmia::score_ac_lossgrid(t, a.tau),
        Attack::DerivacLossgrid => acmia::score_derivac_lossgrid(t, a.tau, a.delta),
        Attack::Loss => baselines::score_loss(t),
        Attack::Mink => baselines::score_minkpct(t, b),
        Attack::Minkpp => baselines::score_minkpp(t, b),
        Attack::Zlib => baselines::score_compression(t, b),
        Attack::Lowercase => baselines::score_lowercase(
            sample_loss(t, false)?,
            side_loss(&aux.lowercase_loss, &t.id, "lowercased")?,
        ),
        Attack::Ref => Ok(baselines::score_ref(
            sample_loss(t, false)?,
            side_loss(&aux.reference_loss, &t.id, "reference")?,
        )),
        Attack::Dcpdd => {
            let ft = aux
                .frequencies
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("DC-PDD needs a frequency table".into()))?;
            baselines::score_dcpdd(t, ft, b)
        }
    }
}

/// Scores every trace in input order. Per-sample work runs on the current
/// rayon pool; the output order never depends on scheduling.
pub fn score_traces(
    traces: &[SampleTrace],
    cfg: &AttackConfig,
    aux: &Auxiliary,
) -> Result<ScoreSet> {
    // Fidelity problems are reported for the first offending sample in input order.
    for t in traces {
        cfg.attack.check_fidelity(t)?;
    }
    let scores: Vec<f64> = traces
        .par_iter()
        .map(|t| score_sample(t, cfg, aux))
        .collect::<Result<_>>()?;
    let ids: Vec<String> = traces.iter().map(|t| t.id.clone()).collect();
    let labels: Vec<_> = traces.iter().map(|t| t.label).collect();
    Ok(ScoreSet::from_parts(&ids, &labels, &scores))
}
