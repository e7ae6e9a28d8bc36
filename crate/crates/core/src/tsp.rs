//! Temperature-scaled probabilities (TSP) over a next-token logit vector.
//!
//! For logits `z` and temperature `tau`, the scaled log-distribution is
//! `z_i / tau - logsumexp(z / tau)`. Inputs may be raw logits or
//! log-probabilities: the two differ by a constant per step and every quantity
//! here except `mu_z` is invariant to that constant.

use crate::error::{Error, Result};

/// Largest vocabulary accepted for a full-distribution step.
pub const MAX_VOCAB: usize = 1 << 20;

/// Lower clamp for `sigma` when it is used as a divisor.
pub const SIGMA_FLOOR: f64 = 1e-10;

/// Max-subtracted log-sum-exp. Returns `-inf` for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Natural-log softmax of `xs`.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|&x| x - lse).collect()
}

/// Scaled distribution and its moments for one token step.
#[derive(Debug, Clone, PartialEq)]
pub struct TspContext {
    pub tau: f64,
    pub log_tsp: Vec<f64>,
    /// Expectation of `log_tsp` under the scaled distribution.
    pub mu: f64,
    /// Standard deviation of `log_tsp` under the scaled distribution. Unclamped.
    pub sigma: f64,
    /// Probability-weighted mean of the input logits.
    pub mu_z: f64,
}

pub(crate) fn check_inputs(logits: &[f64], tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if logits.len() < 2 {
        return Err(Error::VocabularyTooSmall(logits.len()));
    }
    if logits.len() > MAX_VOCAB {
        return Err(Error::VocabularyTooLarge(logits.len()));
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFiniteLogit(i));
    }
    Ok(())
}

/// Scaled log-probability of a single token, without building the moments.
pub fn log_tsp_of(logits: &[f64], token_id: usize, tau: f64) -> Result<f64> {
    check_inputs(logits, tau)?;
    if token_id >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: token_id,
            size: logits.len(),
        });
    }
    Ok(log_tsp_unchecked(logits, token_id, tau))
}

pub(crate) fn log_tsp_unchecked(logits: &[f64], token_id: usize, tau: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| ((z - max) / tau).exp()).sum();
    ((logits[token_id] - max) / tau - sum.ln()).min(0.0)
}

impl TspContext {
    pub fn new(logits: &[f64], tau: f64) -> Result<Self> {
        check_inputs(logits, tau)?;
        Ok(Self::build(logits, tau))
    }

    fn build(logits: &[f64], tau: f64) -> Self {
        // Work on (z - max) / tau so that the largest scaled logit is 0.
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = logits.iter().map(|&z| (z - max) / tau).collect();
        let lse = scaled.iter().map(|s| s.exp()).sum::<f64>().ln();
        let log_tsp: Vec<f64> = scaled.iter().map(|&s| (s - lse).min(0.0)).collect();

        // Moments of log p are taken relative to the top token's log p, which
        // keeps a flat distribution at exactly zero spread.
        let top = -lse;
        let mut rel_mu = 0.0;
        let mut centered_mu_z = 0.0;
        for (&lp, &z) in log_tsp.iter().zip(logits) {
            let p = lp.exp();
            rel_mu += p * (lp - top);
            centered_mu_z += p * (z - max);
        }
        let var: f64 = log_tsp
            .iter()
            .map(|&lp| {
                let d = (lp - top) - rel_mu;
                lp.exp() * d * d
            })
            .sum();
        let mu = top + rel_mu;

        TspContext {
            tau,
            log_tsp,
            mu,
            sigma: var.max(0.0).sqrt(),
            mu_z: max + centered_mu_z,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.log_tsp.len()
    }

    pub fn log_tsp_at(&self, token_id: usize) -> Result<f64> {
        self.log_tsp
            .get(token_id)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                index: token_id,
                size: self.log_tsp.len(),
            })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_tsp.iter().map(|lp| lp.exp()).collect()
    }

    /// `(log_tsp[token] - mu) / max(sigma, SIGMA_FLOOR)`.
    pub fn z_score(&self, token_id: usize) -> Result<f64> {
        let lp = self.log_tsp_at(token_id)?;
        Ok((lp - self.mu) / self.sigma.max(SIGMA_FLOOR))
    }
}

/// Builds the scaled distribution and its moments for one step.
pub fn tsp_context(logits: &[f64], tau: f64) -> Result<TspContext> {
    TspContext::new(logits, tau)
}

/// `d/dtau log TSP(token | tau) = (mu_z - z_token) / tau^2`.
///
/// `mu_z - z_token` is accumulated as `sum_j p_j (z_j - z_token)` so the result
/// does not depend on the additive offset of the logits.
pub fn dlogtsp_dtau(logits: &[f64], token_id: usize, tau: f64) -> Result<f64> {
    check_inputs(logits, tau)?;
    if token_id >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: token_id,
            size: logits.len(),
        });
    }
    Ok(dlogtsp_dtau_unchecked(logits, token_id, tau))
}

pub(crate) fn dlogtsp_dtau_unchecked(logits: &[f64], token_id: usize, tau: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = logits[token_id];
    let mut norm = 0.0;
    let mut acc = 0.0;
    for &zj in logits {
        let w = ((zj - max) / tau).exp();
        norm += w;
        acc += w * (zj - z);
    }
    acc / norm / (tau * tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ratio_one_two_one() {
        let ctx = tsp_context(&[0.0, 2f64.ln(), 0.0], 1.0).unwrap();
        let p = ctx.probabilities();
        for (got, want) in p.iter().zip([0.25, 0.5, 0.25]) {
            assert!(close(*got, want, 1e-12));
        }
    }

    #[test]
    fn flattened_at_tau_two() {
        // exp(z/2) / sum exp(z_j/2) with z = [0, ln 2, 0]: weights [1, sqrt 2, 1].
        let ctx = tsp_context(&[0.0, 2f64.ln(), 0.0], 2.0).unwrap();
        let p = ctx.probabilities();
        let want = [0.292893, 0.414214, 0.292893];
        for (got, want) in p.iter().zip(want) {
            assert!(close(*got, want, 1e-6), "{got} vs {want}");
        }
    }

    #[test]
    fn equal_logits_are_uniform_with_zero_sigma() {
        for tau in [0.1, 1.0, 7.5] {
            let ctx = tsp_context(&[3.0; 5], tau).unwrap();
            for p in ctx.probabilities() {
                assert!(close(p, 0.2, 1e-12));
            }
            assert_eq!(ctx.sigma, 0.0);
            assert_eq!(ctx.z_score(2).unwrap(), 0.0);
        }
    }

    #[test]
    fn log_tsp_at_examples() {
        let uniform = tsp_context(&[0.0; 4], 3.0).unwrap();
        assert!(close(uniform.log_tsp_at(1).unwrap(), -(4f64.ln()), 1e-12));
        let t1 = tsp_context(&[1.0, 0.0], 1.0).unwrap();
        assert!(close(t1.log_tsp_at(0).unwrap(), -0.313262, 1e-6));
        let t2 = tsp_context(&[1.0, 0.0], 2.0).unwrap();
        assert!(close(t2.log_tsp_at(0).unwrap(), -0.474077, 1e-6));
        assert!(matches!(
            t2.log_tsp_at(2),
            Err(Error::IndexOutOfRange { index: 2, size: 2 })
        ));
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(dlogtsp_dtau(&[2.0, 2.0, 2.0], 1, 0.7).unwrap(), 0.0);
        assert!(close(
            dlogtsp_dtau(&[1.0, 0.0], 0, 1.0).unwrap(),
            -0.268941,
            1e-6
        ));
        assert!(close(
            dlogtsp_dtau(&[1.0, 0.0], 1, 1.0).unwrap(),
            0.731059,
            1e-6
        ));
    }

    #[test]
    fn moments_of_two_token_example() {
        let ctx = tsp_context(&[1.0, 0.0], 1.0).unwrap();
        assert!(close(ctx.mu, -0.582203, 1e-6));
        assert!(close(ctx.sigma, 0.443409, 1e-6));
        assert!(close(ctx.mu_z, 0.731059, 1e-6));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            tsp_context(&[0.0, 1.0], 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(matches!(
            tsp_context(&[0.0, 1.0], -1.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(matches!(
            tsp_context(&[0.0, f64::NAN], 1.0),
            Err(Error::NonFiniteLogit(1))
        ));
        assert!(matches!(
            tsp_context(&[0.0], 1.0),
            Err(Error::VocabularyTooSmall(1))
        ));
    }

    #[test]
    fn logsumexp_survives_large_logits() {
        let v = logsumexp(&[1e4, 1e4]);
        assert!(close(v, 1e4 + 2f64.ln(), 1e-9));
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }
}
