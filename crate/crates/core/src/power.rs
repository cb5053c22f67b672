//! Power of the sensitivity analysis and design sensitivity.
//!
//! Analytic power treats `T − a*` as distributed like the bounding null sum,
//! so a test at level `α` has power `1 − Φ(z_{1−α} − a*/√V)` with
//! `V = Σ π̄̄ᵢ(1 − π̄̄ᵢ)`. The `π̄̄ᵢ` are evaluated with every observed case kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{tail_normal_moments, SensParams};
use crate::error::{Error, Result};
use crate::inference::{test_afe_zero, AnalysisOptions, GroupProfile, Method, Side, Tail};
use crate::scalar::Real;
use crate::special::{normal_cdf, normal_isf};
use crate::study::PairCounts;

/// One subtype's contribution to a power calculation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerGroup<T> {
    /// Attributable effect `a*⁽ᵏ⁾` under the alternative.
    pub effect: T,
    /// `Σ_{i∈𝒞ₖ} π̄̄ᵢ(1 − π̄̄ᵢ)`.
    pub variance: T,
    /// Weighted-Stouffer weight, `√|𝒞ₖ|` by default.
    pub weight: T,
}

/// Inputs to the analytic power formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpec<T> {
    alpha: T,
    groups: Vec<PowerGroup<T>>,
}

impl<T: Real> PowerSpec<T> {
    pub fn new(alpha: T, groups: Vec<PowerGroup<T>>) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::domain(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if groups.is_empty() {
            return Err(Error::domain("power needs at least one group"));
        }
        for g in &groups {
            if !g.effect.is_finite() || !(g.variance >= T::zero()) || !(g.weight >= T::zero()) {
                return Err(Error::domain(format!(
                    "effects must be finite and variances and weights nonnegative, got {g:?}"
                )));
            }
        }
        Ok(Self { alpha, groups })
    }

    /// Builds a spec from observed subtype profiles, evaluating `π̄̄ᵢ` at
    /// `(Γ, Θ)` with no case declared attributable.
    pub fn from_profiles(
        profiles: &[GroupProfile],
        effects: &[T],
        params: &SensParams<T>,
        alpha: T,
    ) -> Result<Self> {
        if profiles.len() != effects.len() {
            return Err(Error::Config(format!(
                "{} effects given for {} groups",
                effects.len(),
                profiles.len()
            )));
        }
        let groups = profiles
            .iter()
            .zip(effects)
            .map(|(g, &effect)| {
                let variance = g
                    .bounding_probs(0, params, Side::Upper)?
                    .into_iter()
                    .fold(T::zero(), |v, (p, n)| {
                        v + T::lit(n as f64) * p * (T::one() - p)
                    });
                Ok(PowerGroup {
                    effect,
                    variance,
                    weight: T::lit(g.sets() as f64).sqrt(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(alpha, groups)
    }

    /// Spec for a fixed alternative: group `k` is expected to show
    /// `expected_cases[k]` exposed cases, and its effect is the excess over the
    /// bounding null mean `Σ π̄̄ᵢ` at `(Γ, Θ)`. Unlike a fixed `a*`, the
    /// resulting power cannot increase with `Γ` or `Θ`.
    pub fn from_expected_cases(
        profiles: &[GroupProfile],
        expected_cases: &[T],
        params: &SensParams<T>,
        alpha: T,
    ) -> Result<Self> {
        let mut spec = Self::from_profiles(profiles, expected_cases, params, alpha)?;
        for (g, p) in spec.groups.iter_mut().zip(profiles) {
            let mean = p
                .bounding_probs(0, params, Side::Upper)?
                .into_iter()
                .fold(T::zero(), |m, (q, n)| m + T::lit(n as f64) * q);
            g.effect = g.effect - mean;
        }
        Ok(spec)
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn groups(&self) -> &[PowerGroup<T>] {
        &self.groups
    }

    /// The same inputs with all groups pooled into one.
    pub fn pooled(&self) -> Self {
        let (effect, variance, sets) = self
            .groups
            .iter()
            .fold((T::zero(), T::zero(), T::zero()), |(a, v, s), g| {
                (a + g.effect, v + g.variance, s + g.weight * g.weight)
            });
        Self {
            alpha: self.alpha,
            groups: vec![PowerGroup {
                effect,
                variance,
                weight: sets.sqrt(),
            }],
        }
    }
}

fn power_from_shift<T: Real>(alpha: T, shift: T) -> T {
    T::one() - normal_cdf(normal_isf(alpha) - shift)
}

/// Per-group standardized effect `a / √V`; infinite for a positive effect
/// with no variance.
fn noncentrality<T: Real>(g: &PowerGroup<T>) -> T {
    if g.variance > T::zero() {
        g.effect / g.variance.sqrt()
    } else if g.effect > T::zero() {
        T::infinity()
    } else {
        T::zero()
    }
}

/// Power of the merged test, `1 − Φ(z_{1−α} − a*/√V)`, with groups pooled.
pub fn power_merged<T: Real>(spec: &PowerSpec<T>) -> T {
    let pooled = spec.pooled();
    power_from_shift(spec.alpha, noncentrality(&pooled.groups[0]))
}

/// Power of Stouffer's combination, `1 − Φ(z_{1−α} − Σₖ aₖ/√Vₖ / √L)`.
pub fn power_stouffer<T: Real>(spec: &PowerSpec<T>) -> T {
    let shift = spec
        .groups
        .iter()
        .fold(T::zero(), |s, g| s + noncentrality(g));
    let l = T::lit(spec.groups.len() as f64);
    power_from_shift(spec.alpha, shift / l.sqrt())
}

/// Power of the weighted Stouffer combination,
/// `1 − Φ(z_{1−α} − Σₖ wₖaₖ/√Vₖ / √Σwₖ²)`.
pub fn power_weighted_stouffer<T: Real>(spec: &PowerSpec<T>) -> Result<T> {
    let norm = spec
        .groups
        .iter()
        .fold(T::zero(), |s, g| s + g.weight * g.weight)
        .sqrt();
    if !(norm > T::zero()) {
        return Err(Error::domain(
            "weighted Stouffer power needs a positive weight",
        ));
    }
    let shift = spec.groups.iter().fold(T::zero(), |s, g| {
        if g.weight > T::zero() {
            s + g.weight * noncentrality(g)
        } else {
            s
        }
    });
    Ok(power_from_shift(spec.alpha, shift / norm))
}

/// Whether the Stouffer power of `combined` is at least the merged power of
/// `merged`, by direct evaluation.
pub fn power_dominance_check<T: Real>(merged: &PowerSpec<T>, combined: &PowerSpec<T>) -> bool {
    power_stouffer(combined) >= power_merged(merged)
}

/// A group for Monte Carlo power: Bernoulli classes of the bounding null
/// plus the attributable effect added to `T` under the alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct McGroup {
    pub classes: Vec<(f64, u64)>,
    pub effect: u64,
}

impl McGroup {
    /// Bounding classes of an observed profile at `(Γ, Θ)`.
    pub fn from_profile(g: &GroupProfile, params: &SensParams<f64>, effect: u64) -> Result<Self> {
        Ok(Self {
            classes: g.bounding_probs(0, params, Side::Upper)?,
            effect,
        })
    }

    fn sets(&self) -> u64 {
        self.classes.iter().map(|c| c.1).sum()
    }

    fn moments(&self) -> (f64, f64) {
        self.classes.iter().fold((0.0, 0.0), |(m, v), &(p, n)| {
            let n = n as f64;
            (m + n * p, v + n * p * (1.0 - p))
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Result<u64> {
        let mut t = self.effect;
        for &(p, n) in &self.classes {
            t += if p <= 0.0 {
                0
            } else if p >= 1.0 {
                n
            } else {
                Binomial::new(n, p)
                    .map_err(|e| Error::domain(e.to_string()))?
                    .sample(rng)
            };
        }
        Ok(t)
    }

    /// Spec counterpart for the analytic formulas.
    pub fn power_group(&self) -> PowerGroup<f64> {
        PowerGroup {
            effect: self.effect as f64,
            variance: self.moments().1,
            weight: (self.sets() as f64).sqrt(),
        }
    }
}

/// A rejection frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub power: f64,
    pub stderr: f64,
    pub reps: u64,
}

impl McEstimate {
    pub fn from_count(rejections: u64, reps: u64) -> Self {
        let power = rejections as f64 / reps as f64;
        Self {
            power,
            stderr: (power * (1.0 - power) / reps as f64).sqrt(),
            reps,
        }
    }
}

/// Replicate RNG: stream `rep` of the ChaCha8 generator keyed by `seed`, so
/// results do not depend on how replicates are scheduled.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Monte Carlo rejection frequency of `method` at level `alpha` when each
/// group's `T` is its effect plus a draw from the bounding null.
pub fn monte_carlo_power(
    groups: &[McGroup],
    method: Method,
    alpha: f64,
    trunc: f64,
    reps: u64,
    seed: u64,
) -> Result<McEstimate> {
    if groups.is_empty() || reps == 0 {
        return Err(Error::Config(
            "Monte Carlo power needs groups and replicates".into(),
        ));
    }
    let moments: Vec<(f64, f64)> = groups.iter().map(McGroup::moments).collect();
    let weights: Vec<f64> = groups.iter().map(|g| (g.sets() as f64).sqrt()).collect();
    let rejections = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let ts = groups
                .iter()
                .map(|g| g.draw(&mut rng))
                .collect::<Result<Vec<u64>>>()?;
            let p = match method {
                Method::Merged => {
                    let t: u64 = ts.iter().sum();
                    let (m, v) = moments
                        .iter()
                        .fold((0.0, 0.0), |(m, v), &(gm, gv)| (m + gm, v + gv));
                    tail_normal_moments(t as f64, m, v)
                }
                Method::Combined(c) => {
                    let ps: Vec<f64> = ts
                        .iter()
                        .zip(&moments)
                        .map(|(&t, &(m, v))| tail_normal_moments(t as f64, m, v))
                        .collect();
                    c.combine_clamped(&ps, Some(&weights), trunc)?
                }
            };
            Ok(u64::from(p <= alpha))
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(McEstimate::from_count(rejections, reps))
}

/// Source of simulated matched-pair datasets, one [`PairCounts`] per group.
pub trait PairGenerator: Sync {
    fn groups(&self) -> usize;

    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<Vec<PairCounts>>;
}

/// Pair-level DGP for one group: each of `sets` pairs is discordant with
/// probability `discordant_rate`, and a discordant pair has the exposed case
/// with probability `case_exposed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGroupDgp {
    pub sets: u64,
    pub discordant_rate: f64,
    pub case_exposed: f64,
}

impl PairGroupDgp {
    /// Limit of the merged test's design sensitivity:
    /// the `Γ` with `ΓΘ/(1 + ΓΘ) = case_exposed`, floored at 1.
    pub fn design_sensitivity(&self, theta: f64) -> f64 {
        let p = self.case_exposed;
        if p >= 1.0 {
            return f64::INFINITY;
        }
        (p / ((1.0 - p) * theta)).max(1.0)
    }
}

/// Independent pair-level DGPs, one per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDgp {
    pub groups: Vec<PairGroupDgp>,
}

impl PairDgp {
    pub fn new(groups: Vec<PairGroupDgp>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Config("pair DGP needs at least one group".into()));
        }
        for g in &groups {
            let unit = |x: f64| (0.0..=1.0).contains(&x);
            if !unit(g.discordant_rate) || !unit(g.case_exposed) {
                return Err(Error::Config(format!(
                    "pair DGP rates must lie in [0, 1], got {g:?}"
                )));
            }
        }
        Ok(Self { groups })
    }
}

impl PairGenerator for PairDgp {
    fn groups(&self) -> usize {
        self.groups.len()
    }

    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<Vec<PairCounts>> {
        let binom = |n: u64, p: f64, rng: &mut ChaCha8Rng| -> Result<u64> {
            Ok(Binomial::new(n, p)
                .map_err(|e| Error::Config(e.to_string()))?
                .sample(rng))
        };
        self.groups
            .iter()
            .map(|g| {
                let discordant = binom(g.sets, g.discordant_rate, rng)?;
                let b = binom(discordant, g.case_exposed, rng)?;
                // concordant pairs carry no information; they are all unexposed
                Ok(PairCounts::new(0, b, discordant - b, g.sets - discordant))
            })
            .collect()
    }
}

/// Settings for [`estimate_design_sensitivity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSensitivityConfig {
    pub theta: f64,
    pub method: Method,
    pub alpha: f64,
    pub trunc: f64,
    pub reps: u64,
    /// Final bisection bracket width.
    pub tol: f64,
    /// Upper end of the searched `Γ` range; the lower end is 1.
    pub gamma_max: f64,
    /// Points on the monotonicity-check grid over `[1, gamma_max]`.
    pub grid_points: usize,
    pub seed: u64,
}

/// Smallest total number of matched sets accepted for a design-sensitivity
/// estimate.
pub const MIN_DESIGN_SETS: u64 = 10_000;

/// One point of a Monte Carlo power curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub gamma: f64,
    pub theta: f64,
    pub method: Method,
    pub power: f64,
    pub mc_stderr: f64,
}

/// Result of [`estimate_design_sensitivity`].
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSensitivity {
    /// Midpoint of the final bracket where power crosses 0.5.
    pub gamma: f64,
    /// Half the bracket width plus the Monte Carlo uncertainty of the
    /// crossing (1.96 standard errors divided by the local slope).
    pub half_width: f64,
    pub bracket: (f64, f64),
    /// Every power evaluation, sorted by `Γ`.
    pub curve: Vec<PowerPoint>,
}

/// Monte Carlo power at fixed `(Γ, Θ)` over pre-generated datasets.
fn power_on(
    datasets: &[Vec<GroupProfile>],
    gamma: f64,
    cfg: &DesignSensitivityConfig,
) -> Result<PowerPoint> {
    let params = SensParams::new(gamma, cfg.theta)?;
    let opts = AnalysisOptions {
        alpha: cfg.alpha,
        tail: Tail::Normal,
        trunc: cfg.trunc,
    };
    let rejections: u64 = datasets
        .par_iter()
        .map(|groups| {
            Ok(u64::from(
                test_afe_zero(groups, cfg.method, &params, &opts)? <= cfg.alpha,
            ))
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    let est = McEstimate::from_count(rejections, datasets.len() as u64);
    Ok(PowerPoint {
        gamma,
        theta: cfg.theta,
        method: cfg.method,
        power: est.power,
        mc_stderr: est.stderr,
    })
}

/// Draws `reps` datasets, replicate `r` from [`replicate_rng`]`(seed, r)`.
pub fn simulate_datasets<G: PairGenerator>(
    generator: &G,
    reps: u64,
    seed: u64,
) -> Result<Vec<Vec<PairCounts>>> {
    (0..reps)
        .into_par_iter()
        .map(|rep| generator.generate(&mut replicate_rng(seed, rep)))
        .collect()
}

/// Locates the `Γ` at which Monte Carlo power of `cfg.method` falls through
/// 0.5 for datasets from `generator`.
///
/// The same datasets are reused at every `Γ`. Power is first evaluated on an
/// even grid over `[1, gamma_max]` and must be nonincreasing there; the
/// crossing is then bisected to width `tol`. A method with power below 0.5
/// already at `Γ = 1` has design sensitivity 1.
pub fn estimate_design_sensitivity<G: PairGenerator>(
    generator: &G,
    cfg: &DesignSensitivityConfig,
) -> Result<DesignSensitivity> {
    if !(cfg.tol > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {}",
            cfg.tol
        )));
    }
    if !(cfg.gamma_max > 1.0) || cfg.grid_points < 2 || cfg.reps == 0 {
        return Err(Error::Config(
            "design sensitivity needs gamma_max > 1, at least two grid points and one replicate"
                .into(),
        ));
    }
    let datasets: Vec<Vec<GroupProfile>> = simulate_datasets(generator, cfg.reps, cfg.seed)?
        .into_iter()
        .map(|pcs| pcs.iter().map(GroupProfile::from_pair_counts).collect())
        .collect();
    let total_sets: u64 = datasets[0].iter().map(GroupProfile::sets).sum();
    if total_sets < MIN_DESIGN_SETS {
        return Err(Error::Config(format!(
            "design sensitivity needs at least {MIN_DESIGN_SETS} matched sets, generator gives {total_sets}"
        )));
    }

    let last = (cfg.grid_points - 1) as f64;
    let mut curve = (0..cfg.grid_points)
        .map(|i| {
            // exact at both ends, no accumulated step error
            let i = i as f64;
            let gamma = ((last - i) + cfg.gamma_max * i) / last;
            power_on(&datasets, gamma, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(w) = curve.windows(2).find(|w| w[1].power > w[0].power) {
        return Err(Error::domain(format!(
            "power increases from {} at Γ = {} to {} at Γ = {}",
            w[0].power, w[0].gamma, w[1].power, w[1].gamma
        )));
    }
    if curve[0].power < 0.5 {
        return Ok(DesignSensitivity {
            gamma: 1.0,
            half_width: 0.0,
            bracket: (1.0, 1.0),
            curve,
        });
    }
    let last = curve[curve.len() - 1];
    if last.power >= 0.5 {
        return Err(Error::Config(format!(
            "power is still {} at Γ = {}; widen the Γ range",
            last.power, last.gamma
        )));
    }
    let i = curve
        .windows(2)
        .position(|w| w[0].power >= 0.5 && w[1].power < 0.5)
        .expect("curve starts at or above 0.5 and ends below it");
    let (mut lo, mut hi) = (curve[i], curve[i + 1]);
    while hi.gamma - lo.gamma > cfg.tol {
        let mid = power_on(&datasets, 0.5 * (lo.gamma + hi.gamma), cfg)?;
        curve.push(mid);
        if mid.power >= 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    curve.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));

    let width = hi.gamma - lo.gamma;
    let slope = (lo.power - hi.power) / width;
    let se_half = (0.25 / cfg.reps as f64).sqrt();
    Ok(DesignSensitivity {
        gamma: 0.5 * (lo.gamma + hi.gamma),
        half_width: 0.5 * width + 1.96 * se_half / slope,
        bracket: (lo.gamma, hi.gamma),
        curve,
    })
}

/// Writes power curve rows as `gamma,theta,method,power,mc_stderr`; an
/// analytic row has an empty `mc_stderr`.
pub fn write_power_curve<W: std::io::Write>(
    out: W,
    rows: impl IntoIterator<Item = (f64, f64, Method, f64, Option<f64>)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "theta", "method", "power", "mc_stderr"])?;
    for (gamma, theta, method, power, se) in rows {
        w.write_record([
            format!("{gamma:?}"),
            format!("{theta:?}"),
            method.name().to_string(),
            crate::fmt_sig(power),
            se.map(crate::fmt_sig).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
