//! Per-set sharp probability bounds under hidden bias (Γ) and selection bias
//! (Θ), and upper tails of sums of independent Bernoulli variables.
//!
//! For a set with `J` units of which `Z₊` are exposed, the probability that
//! the exposed units include the case lies between
//!
//! ```text
//! lower = Z₊ / (Z₊ + (J − Z₊)·Γ)
//! upper = ΓΘ·Z₊ / (ΓΘ·Z₊ + (J − Z₊))
//! ```
//!
//! The upper denominator uses `J − Z₊`. It reduces to the classical
//! hidden-bias bound at Θ = 1 for every `Z₊`; writing it with the number of
//! cases in the set would only agree when `Z₊ = 1`.

use crate::error::{Error, Result};
use crate::scalar::{Prob, Real};
use crate::special::normal_sf;

/// Sensitivity parameters: Γ bounds the odds ratio of exposure between two
/// matched units, Θ bounds the relative risk that exposure moves a case into
/// the analysed subtype.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensParams<T> {
    gamma: T,
    theta: T,
}

impl<T: Prob> SensParams<T> {
    pub fn new(gamma: T, theta: T) -> Result<Self> {
        let one = T::one();
        // `!(x >= 1)` also rejects NaN
        if !(gamma >= one) {
            return Err(Error::domain(format!("gamma must be >= 1, got {gamma:?}")));
        }
        if !(theta >= one) {
            return Err(Error::domain(format!("theta must be >= 1, got {theta:?}")));
        }
        Ok(Self { gamma, theta })
    }

    /// Hidden bias only (Θ = 1).
    pub fn hidden(gamma: T) -> Result<Self> {
        Self::new(gamma, T::one())
    }

    /// No bias at all, the randomization distribution.
    pub fn none() -> Self {
        Self {
            gamma: T::one(),
            theta: T::one(),
        }
    }

    pub fn gamma(&self) -> &T {
        &self.gamma
    }

    pub fn theta(&self) -> &T {
        &self.theta
    }

    /// ΓΘ, the odds multiplier applied to the upper bound.
    pub fn odds(&self) -> T {
        self.gamma.clone() * self.theta.clone()
    }
}

/// Lower and upper success probabilities of a bounded Bernoulli variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliBounds<T> {
    pub lower: T,
    pub upper: T,
}

fn check_set(exposed: u64, size: u64) -> Result<()> {
    if size < 2 {
        return Err(Error::domain(format!("set size must be >= 2, got {size}")));
    }
    if exposed > size {
        return Err(Error::domain(format!(
            "exposed count {exposed} exceeds set size {size}"
        )));
    }
    Ok(())
}

fn odds_lower<T: Prob>(m: u64, size: u64, gamma: &T) -> T {
    let m_t = T::from_count(m);
    let rest = T::from_count(size - m);
    m_t.clone() / (m_t + rest * gamma.clone())
}

fn odds_upper<T: Prob>(m: u64, size: u64, odds: T) -> T {
    let scaled = odds * T::from_count(m);
    let rest = T::from_count(size - m);
    scaled.clone() / (scaled + rest)
}

/// Bounds on P(case is exposed) under hidden bias Γ alone.
pub fn sign_score_bounds<T: Prob>(
    exposed: u64,
    size: u64,
    gamma: &T,
) -> Result<BernoulliBounds<T>> {
    let params = SensParams::hidden(gamma.clone())?;
    gamma_theta_bounds(exposed, size, &params)
}

/// Bounds on P(case is exposed) within one case subtype under (Γ, Θ).
/// The lower bound does not depend on Θ.
pub fn gamma_theta_bounds<T: Prob>(
    exposed: u64,
    size: u64,
    params: &SensParams<T>,
) -> Result<BernoulliBounds<T>> {
    check_set(exposed, size)?;
    Ok(BernoulliBounds {
        lower: odds_lower(exposed, size, &params.gamma),
        upper: odds_upper(exposed, size, params.odds()),
    })
}

/// Bounds on `B_i`, the indicator that an exposed unit of the set would have
/// been a case without exposure. `control_cases` is `r_{C,i+}` under the
/// hypothesized effect: 1 for a set whose case is kept, 0 for a set whose
/// exposed case is declared attributable.
///
/// The upper numerator is `ΓΘ·Z₊·r_{C,i+}`, so Θ = 1 recovers the
/// hidden-bias-only bound.
pub fn attributable_prob_bounds<T: Prob>(
    exposed: u64,
    control_cases: u64,
    size: u64,
    params: &SensParams<T>,
) -> Result<BernoulliBounds<T>> {
    check_set(exposed, size)?;
    if control_cases > 1 {
        return Err(Error::domain(format!(
            "a matched set has one case, so r_C+ is 0 or 1 (got {control_cases})"
        )));
    }
    let m = exposed * control_cases;
    Ok(BernoulliBounds {
        lower: odds_lower(m, size, &params.gamma),
        upper: odds_upper(m, size, params.odds()),
    })
}

/// Exact `P(Σ Bernoulli(p_i) ≥ k)` by dynamic programming over the count
/// distribution. Probabilities equal to 0 or 1 are folded in without
/// widening the table.
pub fn pb_tail_exact<T: Prob>(probs: &[T], k: i64) -> Result<T> {
    let (zero, one) = (T::zero(), T::one());
    let mut certain = 0i64;
    let mut random: Vec<&T> = Vec::with_capacity(probs.len());
    for p in probs {
        if !(*p >= zero && *p <= one) {
            return Err(Error::domain(format!("probability out of [0, 1]: {p:?}")));
        }
        if *p == one {
            certain += 1;
        } else if *p != zero {
            random.push(p);
        }
    }
    let k = k - certain;
    if k <= 0 {
        return Ok(one);
    }
    let k = k as usize;
    if k > random.len() {
        return Ok(zero);
    }

    // dist[j] = P(j successes among the processed variables)
    let mut dist = vec![zero.clone(); random.len() + 1];
    dist[0] = one.clone();
    for (n, p) in random.iter().enumerate() {
        let q = one.clone() - (*p).clone();
        for j in (1..=n + 1).rev() {
            dist[j] = dist[j].clone() * q.clone() + dist[j - 1].clone() * (*p).clone();
        }
        dist[0] = dist[0].clone() * q;
    }
    Ok(dist[k..].iter().cloned().fold(zero, |acc, x| acc + x))
}

/// Normal approximation to `P(Σ Bernoulli(p_i) ≥ observed − a0)`:
/// `1 − Φ((observed − a0 − Σp) / sqrt(Σp(1−p)))`, no continuity correction.
///
/// With zero variance the sum is deterministic and the result is 1 when
/// `observed − a0 ≤ Σp`, else 0.
pub fn tail_normal<T: Real>(observed: i64, a0: i64, probs: &[T]) -> T {
    let (mean, var) = probs.iter().fold((T::zero(), T::zero()), |(m, v), &p| {
        (m + p, v + p * (T::one() - p))
    });
    tail_normal_moments(T::lit((observed - a0) as f64), mean, var)
}

pub(crate) fn tail_normal_moments<T: Real>(threshold: T, mean: T, var: T) -> T {
    if var <= T::zero() {
        return if threshold <= mean {
            T::one()
        } else {
            T::zero()
        };
    }
    normal_sf((threshold - mean) / var.sqrt())
}

/// Upper bound on the one-sided P-value for `H₀: A = a_star` in a 1:1 matched
/// study with `b` exposed-case and `c` exposed-referent discordant pairs,
/// placing every attributable case among the `b` pairs.
pub fn paired_upper_pvalue<T: Real>(
    b: u64,
    c: u64,
    a_star: u64,
    params: &SensParams<T>,
) -> Result<T> {
    if a_star > b {
        return Err(Error::domain(format!(
            "more attributable cases than exposed discordant cases ({a_star} > {b})"
        )));
    }
    let odds = params.odds();
    let p = odds / (T::one() + odds);
    let n = T::lit((b + c - a_star) as f64);
    Ok(tail_normal_moments(
        T::lit((b - a_star) as f64),
        n * p,
        n * p * (T::one() - p),
    ))
}
