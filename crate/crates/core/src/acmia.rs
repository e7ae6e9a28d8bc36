//! Temperature-calibrated membership scores: AC, DerivAC and NormAC over
//! FULL traces, plus the loss-only variants of AC and DerivAC.
//!
//! Every score is oriented so that a higher value means "more member-like".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{positions, Fidelity, LossGrid, SampleTrace, TokenStep};
use crate::tsp::{self, TspContext};

pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivMode {
    FiniteDifference,
    #[default]
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcmiaParams {
    pub tau: f64,
    pub delta: f64,
    pub deriv_mode: DerivMode,
    pub restrict_fos: bool,
}

impl Default for AcmiaParams {
    fn default() -> Self {
        AcmiaParams {
            tau: 1.0,
            delta: DEFAULT_DELTA,
            deriv_mode: DerivMode::Analytic,
            restrict_fos: true,
        }
    }
}

impl AcmiaParams {
    pub fn with_tau(tau: f64) -> Self {
        AcmiaParams {
            tau,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::NonPositiveTemperature(self.tau));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

fn sign_one_minus(tau: f64) -> f64 {
    if tau < 1.0 {
        1.0
    } else if tau > 1.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean of `per_step` over the selected positions of a FULL trace.
fn mean_over_steps(
    t: &SampleTrace,
    restrict_fos: bool,
    mut per_step: impl FnMut(&[f64], usize) -> Result<f64>,
) -> Result<f64> {
    t.require(Fidelity::Full)?;
    let idx = positions(t, restrict_fos);
    let mut total = 0.0;
    for &i in &idx {
        total += per_step(t.logits_at(i)?, t.steps[i].token_id)?;
    }
    Ok(total / idx.len() as f64)
}

/// `sgn(1 - tau)` times the mean gap between scaled and raw log-probabilities.
pub fn score_ac(t: &SampleTrace, p: &AcmiaParams) -> Result<f64> {
    p.validate()?;
    let sign = sign_one_minus(p.tau);
    let mean = mean_over_steps(t, p.restrict_fos, |logits, tok| {
        if sign == 0.0 {
            return Ok(0.0);
        }
        Ok(tsp::log_tsp_of(logits, tok, p.tau)? - tsp::log_tsp_of(logits, tok, 1.0)?)
    })?;
    Ok(sign * mean)
}

/// Temperature sensitivity of the scaled log-probability.
///
/// Finite-difference mode returns the raw forward difference over `delta`
/// (not divided by `delta`); analytic mode returns the exact derivative.
pub fn score_derivac(t: &SampleTrace, p: &AcmiaParams) -> Result<f64> {
    p.validate()?;
    mean_over_steps(t, p.restrict_fos, |logits, tok| match p.deriv_mode {
        DerivMode::FiniteDifference => {
            Ok(tsp::log_tsp_of(logits, tok, p.tau + p.delta)?
                - tsp::log_tsp_of(logits, tok, p.tau)?)
        }
        DerivMode::Analytic => tsp::dlogtsp_dtau(logits, tok, p.tau),
    })
}

/// Mean z-score of the realized token under the scaled distribution.
pub fn score_normac(t: &SampleTrace, p: &AcmiaParams) -> Result<f64> {
    p.validate()?;
    mean_over_steps(t, p.restrict_fos, |logits, tok| {
        TspContext::new(logits, p.tau)?.z_score(tok)
    })
}

/// Loss-only AC: `sgn(1 - tau) * (L(tau = 1) - L(tau))`.
pub fn score_ac_lossgrid(t: &SampleTrace, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let base = t.loss_at(1.0)?;
    let scaled = t.loss_at(tau)?;
    let sign = sign_one_minus(tau);
    if sign == 0.0 {
        return Ok(0.0);
    }
    Ok(sign * (base - scaled))
}

/// Loss-only DerivAC: `L(tau) - L(tau + delta)`.
pub fn score_derivac_lossgrid(t: &SampleTrace, tau: f64, delta: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(t.loss_at(tau)? - t.loss_at(tau + delta)?)
}

/// Reduces a FULL trace to the loss-only fidelity: mean NLL over every token at
/// each requested temperature (tau = 1 always included). Steps keep only
/// their token ids.
pub fn to_lossgrid(t: &SampleTrace, taus: &[f64]) -> Result<SampleTrace> {
    t.require(Fidelity::Full)?;
    let mut all: Vec<f64> = taus.to_vec();
    all.push(1.0);
    let mut points = Vec::with_capacity(all.len());
    for &tau in &all {
        let mut total = 0.0;
        for (i, step) in t.steps.iter().enumerate() {
            total += -tsp::log_tsp_of(t.logits_at(i)?, step.token_id, tau)?;
        }
        points.push((tau, (total / t.steps.len() as f64).max(0.0)));
    }
    Ok(SampleTrace {
        id: t.id.clone(),
        label: t.label,
        fidelity: Fidelity::Lossgrid,
        text: t.text.clone(),
        steps: t
            .steps
            .iter()
            .map(|s| TokenStep::bare(s.token_id))
            .collect(),
        loss_grid: Some(LossGrid::new(points)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{validate_trace, Label};

    fn full(steps: &[(&[f64], usize)]) -> SampleTrace {
        validate_trace(SampleTrace {
            id: "x".into(),
            label: Label::Member,
            fidelity: Fidelity::Full,
            text: None,
            steps: steps
                .iter()
                .map(|(l, t)| TokenStep::full(*t, l.to_vec()))
                .collect(),
            loss_grid: None,
        })
        .unwrap()
    }

    fn grid(points: &[(f64, f64)]) -> SampleTrace {
        validate_trace(SampleTrace {
            id: "g".into(),
            label: Label::Member,
            fidelity: Fidelity::Lossgrid,
            text: None,
            steps: vec![TokenStep::bare(0)],
            loss_grid: Some(LossGrid::new(points.iter().copied())),
        })
        .unwrap()
    }

    #[test]
    fn ac_is_zero_at_unit_temperature() {
        let t = full(&[(&[1.0, 0.0, -2.0], 0), (&[0.3, 0.1, 5.0], 1)]);
        assert_eq!(score_ac(&t, &AcmiaParams::with_tau(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn ac_is_zero_on_uniform_step() {
        let t = full(&[(&[0.0, 0.0], 1)]);
        for tau in [0.25, 0.9, 3.0] {
            assert!(score_ac(&t, &AcmiaParams::with_tau(tau)).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn ac_two_token_example() {
        let t = full(&[(&[1.0, 0.0], 0)]);
        let s = score_ac(&t, &AcmiaParams::with_tau(2.0)).unwrap();
        assert!((s - 0.160815).abs() < 1e-6, "{s}");
    }

    #[test]
    fn derivac_examples() {
        let flat = full(&[(&[0.5, 0.5, 0.5], 2), (&[1.0, 1.0], 0)]);
        for mode in [DerivMode::Analytic, DerivMode::FiniteDifference] {
            let p = AcmiaParams {
                deriv_mode: mode,
                ..AcmiaParams::with_tau(1.3)
            };
            assert!(score_derivac(&flat, &p).unwrap().abs() < 1e-15);
        }

        let t = full(&[(&[1.0, 0.0], 0)]);
        let analytic = score_derivac(&t, &AcmiaParams::with_tau(1.0)).unwrap();
        assert!((analytic + 0.268941).abs() < 1e-6);
        let fd = score_derivac(
            &t,
            &AcmiaParams {
                deriv_mode: DerivMode::FiniteDifference,
                ..AcmiaParams::with_tau(1.0)
            },
        )
        .unwrap();
        // Direct evaluation: (1/1.01 - ln(e^(1/1.01) + 1)) - (1 - ln(e + 1)).
        assert!((fd + 0.002_672_437_928_632).abs() < 1e-12, "{fd}");
    }

    #[test]
    fn normac_examples() {
        let p = AcmiaParams::with_tau(1.0);
        let s0 = score_normac(&full(&[(&[1.0, 0.0], 0)]), &p).unwrap();
        // Two logits one apart: z-scores are exp(-1/2) and -exp(1/2).
        assert!((s0 - (-0.5f64).exp()).abs() < 1e-12);
        let s1 = score_normac(&full(&[(&[1.0, 0.0], 1)]), &p).unwrap();
        assert!((s1 + 0.5f64.exp()).abs() < 1e-12, "{s1}");
        let u = score_normac(&full(&[(&[0.0; 4], 3)]), &p).unwrap();
        assert_eq!(u, 0.0);
    }

    #[test]
    fn scores_use_first_occurrences_by_default() {
        // Second step repeats token 0 and would change the mean if counted.
        let t = full(&[(&[1.0, 0.0], 0), (&[5.0, 0.0], 0)]);
        let p = AcmiaParams::with_tau(1.0);
        let fos = score_normac(&t, &p).unwrap();
        let all = score_normac(
            &t,
            &AcmiaParams {
                restrict_fos: false,
                ..p
            },
        )
        .unwrap();
        assert!((fos - 0.606531).abs() < 1e-6);
        assert!((fos - all).abs() > 1e-3);
    }

    #[test]
    fn lossgrid_examples() {
        assert!(
            (score_ac_lossgrid(&grid(&[(1.0, 2.0), (2.0, 2.4)]), 2.0).unwrap() - 0.4).abs() < 1e-12
        );
        assert!(
            (score_ac_lossgrid(&grid(&[(1.0, 2.0), (0.5, 1.1)]), 0.5).unwrap() - 0.9).abs() < 1e-12
        );
        let g = grid(&[(1.0, 2.0), (1.01, 2.1)]);
        assert!((score_derivac_lossgrid(&g, 1.0, 0.01).unwrap() + 0.1).abs() < 1e-12);
        let flat = grid(&[(1.0, 2.0), (1.5, 2.0), (1.51, 2.0)]);
        assert_eq!(score_derivac_lossgrid(&flat, 1.5, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn lossgrid_missing_point() {
        let g = grid(&[(1.0, 2.0), (2.0, 2.4)]);
        assert!(matches!(
            score_ac_lossgrid(&g, 3.0),
            Err(Error::MissingGridPoint { .. })
        ));
        assert!(matches!(
            score_derivac_lossgrid(&g, 2.0, 0.01),
            Err(Error::MissingGridPoint { .. })
        ));
    }

    #[test]
    fn full_only_scores_reject_other_fidelities() {
        let g = grid(&[(1.0, 2.0), (2.0, 2.4)]);
        let p = AcmiaParams::with_tau(2.0);
        assert!(matches!(score_ac(&g, &p), Err(Error::WrongFidelity { .. })));
        assert!(matches!(
            score_normac(&g, &p),
            Err(Error::WrongFidelity { .. })
        ));
        let t = full(&[(&[1.0, 0.0], 0)]);
        assert!(matches!(
            score_ac_lossgrid(&t, 2.0),
            Err(Error::WrongFidelity { .. })
        ));
    }
}
