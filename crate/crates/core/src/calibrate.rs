//! Temperature search on a labeled calibration split.
//!
//! Temperatures are parameterized as `tau = exp(alpha)` and searched
//! exhaustively over an evenly spaced alpha grid, maximizing AUROC.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{score_traces, AttackConfig, Auxiliary};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::trace::{Label, SampleTrace};

/// Upper bound on the number of grid intervals.
pub const MAX_GRID_INTERVALS: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Auroc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_step: f64,
    pub objective: Objective,
}

impl Default for TuneGrid {
    /// `log2 tau` from -3 to 3 in steps of 0.1.
    fn default() -> Self {
        TuneGrid::from_log2(-3.0, 3.0, 0.1)
    }
}

impl TuneGrid {
    pub fn from_log2(min: f64, max: f64, step: f64) -> Self {
        TuneGrid {
            alpha_min: min * LN_2,
            alpha_max: max * LN_2,
            alpha_step: step * LN_2,
            objective: Objective::Auroc,
        }
    }

    /// A grid holding the single point `alpha`.
    pub fn single(alpha: f64) -> Self {
        TuneGrid {
            alpha_min: alpha,
            alpha_max: alpha,
            alpha_step: 1.0,
            objective: Objective::Auroc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite =
            self.alpha_min.is_finite() && self.alpha_max.is_finite() && self.alpha_step.is_finite();
        if !finite || self.alpha_step <= 0.0 || self.alpha_min > self.alpha_max {
            return Err(Error::InvalidConfig(format!(
                "bad grid: alpha in [{}, {}] step {}",
                self.alpha_min, self.alpha_max, self.alpha_step
            )));
        }
        if (self.alpha_max - self.alpha_min) / self.alpha_step > MAX_GRID_INTERVALS {
            return Err(Error::InvalidConfig(
                "grid has more than 10^4 intervals".into(),
            ));
        }
        Ok(())
    }

    /// Grid points `alpha_min + i * alpha_step` up to `alpha_max` (with a
    /// 1e-9 relative slack). Points within 1e-12 of zero snap to exactly 0.
    pub fn alphas(&self) -> Vec<f64> {
        let span = (self.alpha_max - self.alpha_min) / self.alpha_step;
        let n = (span + 1e-9 * span.abs().max(1.0)).floor() as usize;
        (0..=n)
            .map(|i| {
                let a = self.alpha_min + i as f64 * self.alpha_step;
                if a.abs() < 1e-12 {
                    0.0
                } else {
                    a
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub tau_star: f64,
    pub alpha_star: f64,
    pub log2_tau_star: f64,
    pub objective_value: f64,
    /// `(tau, objective)` for every grid point in ascending alpha.
    pub curve: Vec<(f64, f64)>,
}

fn check_two_classes(calibration: &[SampleTrace]) -> Result<()> {
    let members = calibration
        .iter()
        .filter(|t| t.label == Label::Member)
        .count();
    let nonmembers = calibration
        .iter()
        .filter(|t| t.label == Label::Nonmember)
        .count();
    if members == 0 || nonmembers == 0 {
        return Err(Error::DegenerateSplit);
    }
    Ok(())
}

/// Picks the best point: highest objective, then smallest `|alpha|`, then
/// smallest alpha.
fn better(cand: (f64, f64), best: (f64, f64)) -> bool {
    let (ca, co) = cand;
    let (ba, bo) = best;
    co > bo || (co == bo && (ca.abs() < ba.abs() || (ca.abs() == ba.abs() && ca < ba)))
}

/// Exhaustive AUROC search over `tau = exp(alpha)`.
pub fn tune_temperature(
    calibration: &[SampleTrace],
    attack: &AttackConfig,
    aux: &Auxiliary,
    grid: &TuneGrid,
) -> Result<TuneResult> {
    grid.validate()?;
    if !attack.attack.uses_temperature() {
        return Err(Error::InvalidConfig(format!(
            "attack {} has no temperature to tune",
            attack.attack
        )));
    }
    check_two_classes(calibration)?;
    for t in calibration {
        attack.attack.check_fidelity(t)?;
    }

    let alphas = grid.alphas();
    let objectives: Vec<f64> = alphas
        .par_iter()
        .map(|&alpha| {
            let cfg = attack.with_tau(alpha.exp());
            auroc(&score_traces(calibration, &cfg, aux)?)
        })
        .collect::<Result<_>>()?;

    let mut best = (alphas[0], objectives[0]);
    for (&a, &o) in alphas.iter().zip(&objectives) {
        if better((a, o), best) {
            best = (a, o);
        }
    }
    let (alpha_star, objective_value) = best;
    Ok(TuneResult {
        tau_star: alpha_star.exp(),
        alpha_star,
        log2_tau_star: alpha_star / LN_2,
        objective_value,
        curve: alphas.iter().map(|a| a.exp()).zip(objectives).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KTuneResult {
    pub k_star: f64,
    pub objective_value: f64,
    /// `(k_percent, objective)` in the order given.
    pub curve: Vec<(f64, f64)>,
}

/// AUROC search over Min-K% style `k_percent` values. Ties go to the smaller k.
pub fn tune_k_percent(
    calibration: &[SampleTrace],
    attack: &AttackConfig,
    aux: &Auxiliary,
    k_values: &[f64],
) -> Result<KTuneResult> {
    if k_values.is_empty() {
        return Err(Error::InvalidConfig("empty k grid".into()));
    }
    check_two_classes(calibration)?;
    let objectives: Vec<f64> = k_values
        .par_iter()
        .map(|&k| {
            let mut cfg = *attack;
            cfg.baseline.k_percent = k;
            auroc(&score_traces(calibration, &cfg, aux)?)
        })
        .collect::<Result<_>>()?;
    let mut best = (k_values[0], objectives[0]);
    for (&k, &o) in k_values.iter().zip(&objectives) {
        if o > best.1 || (o == best.1 && k < best.0) {
            best = (k, o);
        }
    }
    Ok(KTuneResult {
        k_star: best.0,
        objective_value: best.1,
        curve: k_values.iter().copied().zip(objectives).collect(),
    })
}
