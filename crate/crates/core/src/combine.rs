//! Combination of independent one-sided P-values across case subtypes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{chi2_sf_even, normal_isf, normal_sf};

fn check_ps<T: Real>(ps: &[T]) -> Result<()> {
    if ps.is_empty() {
        return Err(Error::domain("no P-values to combine"));
    }
    if let Some(p) = ps.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(Error::domain(format!("P-value out of [0, 1]: {p}")));
    }
    Ok(())
}

fn check_weights<T: Real>(ps: &[T], weights: &[T]) -> Result<()> {
    if weights.len() != ps.len() {
        return Err(Error::domain(format!(
            "{} weights for {} P-values",
            weights.len(),
            ps.len()
        )));
    }
    if let Some(w) = weights
        .iter()
        .find(|w| !(**w > T::zero()) || w.is_infinite())
    {
        return Err(Error::domain(format!(
            "weights must be positive and finite, got {w}"
        )));
    }
    Ok(())
}

/// `min(1, L · min P_k)`.
pub fn bonferroni<T: Real>(ps: &[T]) -> Result<T> {
    check_ps(ps)?;
    let min = ps.iter().copied().fold(T::one(), T::min);
    Ok((T::lit(ps.len() as f64) * min).min(T::one()))
}

/// Fisher's `−2 Σ log P_k` referred to chi-square with `2L` degrees of freedom.
/// Any zero P-value gives a combined value of 0.
pub fn fisher<T: Real>(ps: &[T]) -> Result<T> {
    check_ps(ps)?;
    if ps.iter().any(|p| p.is_zero()) {
        return Ok(T::zero());
    }
    let stat = ps
        .iter()
        .fold(T::zero(), |acc, p| acc - T::lit(2.0) * p.ln());
    Ok(chi2_sf_even(stat, ps.len()))
}

/// Truncated product: `W = Π P_k^{1{P_k ≤ τ}}` calibrated by
///
/// ```text
/// P(W ≤ w) = Σ_{k=1}^{L} C(L,k) (1−τ)^{L−k} ·
///     [ w Σ_{s<k} (k ln τ − ln w)^s / s!   if w ≤ τ^k
///       τ^k                                 otherwise ]
/// ```
///
/// If no P-value falls at or below `trunc`, `W = 1` is the least extreme
/// value possible and the combined P-value is 1. With `trunc = 1` this is
/// Fisher's method.
pub fn truncated_product<T: Real>(ps: &[T], trunc: T) -> Result<T> {
    check_ps(ps)?;
    if !(trunc > T::zero() && trunc <= T::one()) {
        return Err(Error::domain(format!(
            "truncation point must lie in (0, 1], got {trunc}"
        )));
    }
    let kept: Vec<T> = ps.iter().copied().filter(|&p| p <= trunc).collect();
    if kept.is_empty() {
        return Ok(T::one());
    }
    let w = kept.iter().fold(T::one(), |acc, &p| acc * p);
    if w.is_zero() {
        return Ok(T::zero());
    }

    let l = ps.len();
    let ln_tau = trunc.ln();
    let ln_w = w.ln();
    let mut total = T::zero();
    let mut choose = T::one();
    for k in 1..=l {
        // C(L, k) built incrementally
        choose = choose * T::lit((l - k + 1) as f64) / T::lit(k as f64);
        let tau_k = trunc.powi(k as i32);
        let cond = if w <= tau_k {
            let x = T::lit(k as f64) * ln_tau - ln_w;
            let mut term = T::one();
            let mut sum = T::one();
            for s in 1..k {
                term = term * x / T::lit(s as f64);
                sum = sum + term;
            }
            w * sum
        } else {
            tau_k
        };
        total = total + choose * (T::one() - trunc).powi((l - k) as i32) * cond;
    }
    Ok(total.min(T::one()))
}

/// Stouffer's `Σ Φ⁻¹(1 − P_k) / √L`. P-values of exactly 0 or 1 have infinite
/// scores and are rejected.
pub fn stouffer<T: Real>(ps: &[T]) -> Result<T> {
    let weights = vec![T::one(); ps.len()];
    weighted_stouffer(ps, &weights)
}

/// Weighted Stouffer, `Σ w_k Z_k / sqrt(Σ w_k²)`; the usual choice is
/// `w_k = sqrt(|C_k|)`.
pub fn weighted_stouffer<T: Real>(ps: &[T], weights: &[T]) -> Result<T> {
    check_ps(ps)?;
    check_weights(ps, weights)?;
    if let Some(p) = ps.iter().find(|p| p.is_zero() || p.is_one()) {
        return Err(Error::domain(format!(
            "Stouffer's method needs P-values strictly inside (0, 1), got {p} (infinite quantile)"
        )));
    }
    let (num, den) = ps
        .iter()
        .zip(weights)
        .fold((T::zero(), T::zero()), |(n, d), (&p, &w)| {
            (n + w * normal_isf(p), d + w * w)
        });
    Ok(normal_sf(num / den.sqrt()))
}

/// P-value combination rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Bonferroni,
    Fisher,
    Truncated,
    Stouffer,
    WeightedStouffer,
}

impl Combiner {
    pub const ALL: [Combiner; 5] = [
        Combiner::Bonferroni,
        Combiner::Fisher,
        Combiner::Truncated,
        Combiner::Stouffer,
        Combiner::WeightedStouffer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Combiner::Bonferroni => "bonferroni",
            Combiner::Fisher => "fisher",
            Combiner::Truncated => "truncated",
            Combiner::Stouffer => "stouffer",
            Combiner::WeightedStouffer => "weighted_stouffer",
        }
    }

    /// Combines with the method's exact contract; `weights` is required for
    /// [`Combiner::WeightedStouffer`] and `trunc` for [`Combiner::Truncated`].
    pub fn combine<T: Real>(self, ps: &[T], weights: Option<&[T]>, trunc: T) -> Result<T> {
        match self {
            Combiner::Bonferroni => bonferroni(ps),
            Combiner::Fisher => fisher(ps),
            Combiner::Truncated => truncated_product(ps, trunc),
            Combiner::Stouffer => stouffer(ps),
            Combiner::WeightedStouffer => {
                let w = weights.ok_or_else(|| Error::domain("weighted Stouffer needs weights"))?;
                weighted_stouffer(ps, w)
            }
        }
    }

    /// Pipeline variant: P-values that underflowed to 0 or rounded to 1 are
    /// clamped to the nearest representable interior value, so Stouffer
    /// scores stay finite and a zero P-value still means perfect evidence.
    pub fn combine_clamped<T: Real>(self, ps: &[T], weights: Option<&[T]>, trunc: T) -> Result<T> {
        match self {
            Combiner::Stouffer | Combiner::WeightedStouffer => {
                let lo = T::min_positive_value();
                let hi = T::one() - T::epsilon();
                let clamped: Vec<T> = ps.iter().map(|&p| p.max(lo).min(hi)).collect();
                self.combine(&clamped, weights, trunc)
            }
            _ => self.combine(ps, weights, trunc),
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "bonferroni" => Ok(Combiner::Bonferroni),
            "fisher" => Ok(Combiner::Fisher),
            "truncated" | "truncated_product" => Ok(Combiner::Truncated),
            "stouffer" => Ok(Combiner::Stouffer),
            "weighted_stouffer" | "wstouffer" => Ok(Combiner::WeightedStouffer),
            other => Err(Error::Config(format!(
                "unknown combination method {other:?}"
            ))),
        }
    }
}
