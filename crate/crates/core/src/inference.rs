//! Tests of `H₀: AFₑ = 0` and one-sided confidence intervals for the
//! attributable effect, merged or combined across case subtypes.
//!
//! Matched sets enter only through their size, exposed count and whether the
//! case is exposed, so each subtype is held as a [`GroupProfile`]: a histogram
//! of exchangeable set classes. A hypothesis `A₀` nulls `A₀` exposed cases
//! (their `r_C+` becomes 0). Sets with the lowest exposed fraction are nulled
//! first, which for 1:1 matching places every attributable case among the
//! `b` discordant pairs before touching concordant exposed pairs.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{attributable_prob_bounds, pb_tail_exact, tail_normal_moments, SensParams};
use crate::combine::Combiner;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::study::{MatchedSet, PairCounts, Study};

/// Matched sets sharing (size, exposed count, case exposure).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SetClass {
    pub size: u64,
    pub exposed: u64,
    pub case_exposed: bool,
    pub count: u64,
}

impl SetClass {
    /// Orders by exposed fraction `exposed / size`, the order in which
    /// exposed cases are declared attributable.
    fn cmp_exposed_fraction(&self, other: &Self) -> Ordering {
        (self.exposed * other.size)
            .cmp(&(other.exposed * self.size))
            .then(self.size.cmp(&other.size))
    }
}

/// Histogram of the matched sets of one analysis group.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupProfile {
    classes: Vec<SetClass>,
}

impl GroupProfile {
    pub fn from_classes(classes: impl IntoIterator<Item = SetClass>) -> Self {
        let mut out = GroupProfile::default();
        for c in classes {
            out.add(c);
        }
        out
    }

    pub fn from_sets<'a>(sets: impl IntoIterator<Item = &'a MatchedSet>) -> Self {
        Self::from_classes(sets.into_iter().map(|s| SetClass {
            size: s.size() as u64,
            exposed: s.exposed_count() as u64,
            case_exposed: s.case_exposed(),
            count: 1,
        }))
    }

    pub fn from_pair_counts(pc: &PairCounts) -> Self {
        let pair = |exposed, case_exposed, count| SetClass {
            size: 2,
            exposed,
            case_exposed,
            count,
        };
        Self::from_classes([
            pair(2, true, pc.a),
            pair(1, true, pc.b),
            pair(1, false, pc.c),
            pair(0, false, pc.d),
        ])
    }

    /// Pools several groups into one.
    pub fn merge<'a>(groups: impl IntoIterator<Item = &'a GroupProfile>) -> Self {
        Self::from_classes(groups.into_iter().flat_map(|g| g.classes.iter().copied()))
    }

    fn add(&mut self, c: SetClass) {
        if c.count == 0 {
            return;
        }
        match self.classes.iter_mut().find(|x| {
            x.size == c.size && x.exposed == c.exposed && x.case_exposed == c.case_exposed
        }) {
            Some(x) => x.count += c.count,
            None => {
                self.classes.push(c);
                self.classes.sort_by(|a, b| {
                    a.cmp_exposed_fraction(b)
                        .then(a.case_exposed.cmp(&b.case_exposed))
                });
            }
        }
    }

    pub fn classes(&self) -> &[SetClass] {
        &self.classes
    }

    /// Number of matched sets, `|C_k|`.
    pub fn sets(&self) -> u64 {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// The sign-score statistic `T`: exposed cases.
    pub fn exposed_cases(&self) -> u64 {
        self.classes
            .iter()
            .filter(|c| c.case_exposed)
            .map(|c| c.count)
            .sum()
    }

    /// Success probabilities of the bounding Bernoulli variables for `B_i`
    /// under hypothesis `a0`, as (probability, multiplicity) pairs. Nulled
    /// sets contribute probability 0 and are omitted.
    pub fn bounding_probs<T: Real>(
        &self,
        a0: u64,
        params: &SensParams<T>,
        side: Side,
    ) -> Result<Vec<(T, u64)>> {
        let capacity = self.exposed_cases();
        if a0 > capacity {
            return Err(Error::domain(format!(
                "hypothesis of {a0} attributable cases exceeds the {capacity} exposed cases"
            )));
        }
        let mut remaining = a0;
        let mut out = Vec::with_capacity(self.classes.len());
        // classes are kept sorted by exposed fraction
        for c in &self.classes {
            let mut kept = c.count;
            if c.case_exposed {
                let nulled = remaining.min(c.count);
                remaining -= nulled;
                kept -= nulled;
            }
            if kept == 0 {
                continue;
            }
            let b = attributable_prob_bounds(c.exposed, 1, c.size, params)?;
            let p = match side {
                Side::Upper => b.upper,
                Side::Lower => b.lower,
            };
            out.push((p, kept));
        }
        Ok(out)
    }

    /// Bound on `P(Σ B_i ≥ T − a0)` under `(Γ, Θ)`.
    pub fn tail_bound<T: Real>(
        &self,
        a0: u64,
        params: &SensParams<T>,
        side: Side,
        tail: Tail,
    ) -> Result<T> {
        let probs = self.bounding_probs(a0, params, side)?;
        let threshold = self.exposed_cases() - a0;
        match tail {
            Tail::Normal => {
                let (mean, var) = probs
                    .iter()
                    .fold((T::zero(), T::zero()), |(m, v), &(p, n)| {
                        let n = T::lit(n as f64);
                        (m + n * p, v + n * p * (T::one() - p))
                    });
                Ok(tail_normal_moments(T::lit(threshold as f64), mean, var))
            }
            Tail::Exact => {
                let expanded: Vec<T> = probs
                    .iter()
                    .flat_map(|&(p, n)| std::iter::repeat_n(p, n as usize))
                    .collect();
                pb_tail_exact(&expanded, threshold as i64)
            }
        }
    }
}

/// Which bounding distribution: upper (for tests and minimum intervals) or
/// lower (for maximum intervals).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Upper,
    Lower,
}

/// Tail evaluation: normal approximation or exact Poisson-binomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    #[default]
    Normal,
    Exact,
}

/// Analysis method: pool all subtypes, or test each subtype and combine.
/// Serialized by name, e.g. `"merged"` or `"fisher"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Merged,
    Combined(Combiner),
}

impl Method {
    /// Merged followed by every combiner, in the usual reporting order.
    pub const ALL: [Method; 6] = [
        Method::Merged,
        Method::Combined(Combiner::Stouffer),
        Method::Combined(Combiner::WeightedStouffer),
        Method::Combined(Combiner::Fisher),
        Method::Combined(Combiner::Truncated),
        Method::Combined(Combiner::Bonferroni),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Merged => "merged",
            Method::Combined(c) => c.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("merged") {
            Ok(Method::Merged)
        } else {
            s.parse().map(Method::Combined)
        }
    }
}

/// Level, tail evaluation and truncation point shared by an analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions<T> {
    pub alpha: T,
    pub tail: Tail,
    pub trunc: T,
}

impl<T: Real> AnalysisOptions<T> {
    pub fn new(alpha: T, tail: Tail, trunc: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::lit(0.5)) {
            return Err(Error::domain(format!(
                "alpha must lie in (0, 0.5], got {alpha}"
            )));
        }
        if !(trunc > T::zero() && trunc <= T::one()) {
            return Err(Error::domain(format!(
                "truncation point must lie in (0, 1], got {trunc}"
            )));
        }
        Ok(Self { alpha, tail, trunc })
    }
}

impl<T: Real> Default for AnalysisOptions<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.05),
            tail: Tail::Normal,
            trunc: T::lit(0.10),
        }
    }
}

/// Splits a study into per-subtype profiles, or a single profile when the
/// study carries no subtype labels.
pub fn profiles_from_study(study: &Study) -> Result<Vec<GroupProfile>> {
    if study.subtype_labels().is_empty() {
        return Ok(vec![GroupProfile::from_sets(study.sets())]);
    }
    Ok(study
        .partition_by_subtype()?
        .into_iter()
        .map(|v| GroupProfile::from_sets(v.sets))
        .collect())
}

fn stouffer_weights<T: Real>(groups: &[GroupProfile]) -> Vec<T> {
    groups
        .iter()
        .map(|g| T::lit(g.sets() as f64).sqrt())
        .collect()
}

fn check_groups(groups: &[GroupProfile], method: Method) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::validation("no analysis groups"));
    }
    if let Method::Combined(_) = method {
        if let Some(k) = groups.iter().position(|g| g.sets() == 0) {
            return Err(Error::validation(format!(
                "subtype group {} has no matched sets",
                k + 1
            )));
        }
    }
    Ok(())
}

fn combine_groups<T: Real>(
    combiner: Combiner,
    ps: &[T],
    weights: &[T],
    opts: &AnalysisOptions<T>,
) -> Result<T> {
    combiner.combine_clamped(ps, Some(weights), opts.trunc)
}

/// Upper-bound P-value for `H₀: AFₑ = 0` (i.e. `A₀ = 0`) at `(Γ, Θ)`.
pub fn test_afe_zero<T: Real>(
    groups: &[GroupProfile],
    method: Method,
    params: &SensParams<T>,
    opts: &AnalysisOptions<T>,
) -> Result<T> {
    check_groups(groups, method)?;
    match method {
        Method::Merged => GroupProfile::merge(groups).tail_bound(0, params, Side::Upper, opts.tail),
        Method::Combined(c) => {
            let ps = groups
                .iter()
                .map(|g| g.tail_bound(0, params, Side::Upper, opts.tail))
                .collect::<Result<Vec<T>>>()?;
            combine_groups(c, &ps, &stouffer_weights(groups), opts)
        }
    }
}

/// Merged test of `H₀: AFₑ = 0` on a whole study.
pub fn test_afe_zero_merged<T: Real>(
    study: &Study,
    params: &SensParams<T>,
    exact: bool,
) -> Result<T> {
    let tail = if exact { Tail::Exact } else { Tail::Normal };
    GroupProfile::from_sets(study.sets()).tail_bound(0, params, Side::Upper, tail)
}

/// A one-sided interval endpoint for the attributable effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CiBound {
    /// `a*` for minimum intervals `{A ≥ a*}`, `â` for maximum intervals.
    pub a: u64,
    /// Exposed cases available to be attributable.
    pub capacity: u64,
    /// The scan reached `capacity` without the acceptance rule firing.
    pub saturated: bool,
}

impl CiBound {
    /// The bound as a fraction of exposed cases.
    pub fn afe(&self) -> f64 {
        if self.capacity == 0 {
            0.0
        } else {
            self.a as f64 / self.capacity as f64
        }
    }
}

fn upper_pvalues<T: Real>(g: &GroupProfile, params: &SensParams<T>, tail: Tail) -> Result<Vec<T>> {
    (0..=g.exposed_cases())
        .map(|a| g.tail_bound(a, params, Side::Upper, tail))
        .collect()
}

/// Largest combined P-value over all ways of writing `total` as
/// `a_1 + … + a_L` with `a_k ≤ capacity_k`.
fn max_over_allocations<T: Real>(
    table: &[Vec<T>],
    total: u64,
    combine: &dyn Fn(&[T]) -> Result<T>,
) -> Result<Option<T>> {
    fn rec<T: Real>(
        table: &[Vec<T>],
        k: usize,
        remaining: u64,
        suffix_cap: &[u64],
        current: &mut Vec<T>,
        best: &mut Option<T>,
        combine: &dyn Fn(&[T]) -> Result<T>,
    ) -> Result<()> {
        if k == table.len() {
            if remaining == 0 {
                let p = combine(current)?;
                if best.is_none_or(|b| p > b) {
                    *best = Some(p);
                }
            }
            return Ok(());
        }
        let cap_k = table[k].len() as u64 - 1;
        let rest = suffix_cap[k + 1];
        let lo = remaining.saturating_sub(rest);
        let hi = remaining.min(cap_k);
        for a in lo..=hi {
            if lo > hi {
                break;
            }
            current.push(table[k][a as usize]);
            rec(
                table,
                k + 1,
                remaining - a,
                suffix_cap,
                current,
                best,
                combine,
            )?;
            current.pop();
        }
        Ok(())
    }

    let mut suffix_cap = vec![0u64; table.len() + 1];
    for k in (0..table.len()).rev() {
        suffix_cap[k] = suffix_cap[k + 1] + table[k].len() as u64 - 1;
    }
    if total > suffix_cap[0] {
        return Ok(None);
    }
    let mut best = None;
    let mut current = Vec::with_capacity(table.len());
    rec(
        table,
        0,
        total,
        &suffix_cap,
        &mut current,
        &mut best,
        combine,
    )?;
    Ok(best)
}

/// One-sided `100(1−α)%` minimum confidence interval `{A ≥ a*}`.
///
/// `A₀` is increased from 0 while the upper-bound P-value is below `α`; the
/// first `A₀` that is not rejected is `a*`. For combined methods a total `A₀`
/// is rejected only if every compatible split across subtypes is rejected.
pub fn min_ci_attributable<T: Real>(
    groups: &[GroupProfile],
    method: Method,
    params: &SensParams<T>,
    opts: &AnalysisOptions<T>,
) -> Result<CiBound> {
    check_groups(groups, method)?;
    match method {
        Method::Merged => {
            let merged = GroupProfile::merge(groups);
            let capacity = merged.exposed_cases();
            for a in 0..=capacity {
                if merged.tail_bound(a, params, Side::Upper, opts.tail)? >= opts.alpha {
                    return Ok(CiBound {
                        a,
                        capacity,
                        saturated: false,
                    });
                }
            }
            Ok(CiBound {
                a: capacity,
                capacity,
                saturated: true,
            })
        }
        Method::Combined(c) => {
            let table = groups
                .iter()
                .map(|g| upper_pvalues(g, params, opts.tail))
                .collect::<Result<Vec<_>>>()?;
            let weights = stouffer_weights::<T>(groups);
            let combine = |ps: &[T]| combine_groups(c, ps, &weights, opts);
            let capacity: u64 = groups.iter().map(GroupProfile::exposed_cases).sum();
            for a in 0..=capacity {
                let best =
                    max_over_allocations(&table, a, &combine)?.expect("total within capacity");
                if best >= opts.alpha {
                    return Ok(CiBound {
                        a,
                        capacity,
                        saturated: false,
                    });
                }
            }
            Ok(CiBound {
                a: capacity,
                capacity,
                saturated: true,
            })
        }
    }
}

/// One-sided `100(1−α)%` maximum confidence interval `{A ≤ â}` for the
/// merged analysis, using the lower-bound probabilities: `A₀` is increased
/// from 0 while the lower-bound tail is below `1 − α`.
pub fn max_ci_attributable<T: Real>(
    groups: &[GroupProfile],
    params: &SensParams<T>,
    opts: &AnalysisOptions<T>,
) -> Result<CiBound> {
    check_groups(groups, Method::Merged)?;
    let merged = GroupProfile::merge(groups);
    let capacity = merged.exposed_cases();
    let level = T::one() - opts.alpha;
    for a in 0..=capacity {
        if merged.tail_bound(a, params, Side::Lower, opts.tail)? >= level {
            return Ok(CiBound {
                a,
                capacity,
                saturated: false,
            });
        }
    }
    Ok(CiBound {
        a: capacity,
        capacity,
        saturated: true,
    })
}

/// Where a grid row sits relative to the Γ at which `H₀: AFₑ = 0` stops
/// being rejected, per method and Θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Largest grid Γ still rejecting.
    LastReject,
    /// Smallest grid Γ no longer rejecting.
    FirstFail,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::LastReject => "last_reject",
            Boundary::FirstFail => "first_fail",
        }
    }
}

/// One cell of a sensitivity analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport<T> {
    pub method: Method,
    pub gamma: T,
    pub theta: T,
    pub alpha: T,
    /// Upper bound on the P-value for `H₀: AFₑ = 0`.
    pub p_value_afe0: T,
    pub min_ci: CiBound,
    /// Maximum interval, merged method only.
    pub max_ci: Option<CiBound>,
    pub boundary: Option<Boundary>,
}

impl<T: Real> AnalysisReport<T> {
    pub fn rejects_afe0(&self) -> bool {
        self.p_value_afe0 < self.alpha
    }

    pub fn a_star(&self) -> u64 {
        self.min_ci.a
    }

    /// Lower confidence bound on `AFₑ`.
    pub fn afe_lower(&self) -> f64 {
        self.min_ci.afe()
    }
}

/// Analyses every `(Γ, Θ, method)` cell. Rows are ordered by Γ, then Θ
/// (both ascending), then method in the order given. Cells run in parallel.
pub fn sensitivity_grid<T: Real>(
    groups: &[GroupProfile],
    gammas: &[T],
    thetas: &[T],
    methods: &[Method],
    opts: &AnalysisOptions<T>,
    with_max_ci: bool,
) -> Result<Vec<AnalysisReport<T>>> {
    if gammas.is_empty() || thetas.is_empty() || methods.is_empty() {
        return Err(Error::Config(
            "sensitivity grid needs at least one Γ, Θ and method".into(),
        ));
    }
    let sorted = |xs: &[T]| {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        v.dedup();
        v
    };
    let gammas = sorted(gammas);
    let thetas = sorted(thetas);

    let mut cells = Vec::new();
    for &g in &gammas {
        for &t in &thetas {
            for &m in methods {
                cells.push((g, t, m));
            }
        }
    }

    let mut reports = cells
        .into_par_iter()
        .map(|(gamma, theta, method)| {
            let params = SensParams::new(gamma, theta)?;
            let p_value_afe0 = test_afe_zero(groups, method, &params, opts)?;
            let min_ci = min_ci_attributable(groups, method, &params, opts)?;
            let max_ci = match (with_max_ci, method) {
                (true, Method::Merged) => Some(max_ci_attributable(groups, &params, opts)?),
                _ => None,
            };
            Ok(AnalysisReport {
                method,
                gamma,
                theta,
                alpha: opts.alpha,
                p_value_afe0,
                min_ci,
                max_ci,
                boundary: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    mark_boundaries(&mut reports, &thetas, methods);
    Ok(reports)
}

fn mark_boundaries<T: Real>(reports: &mut [AnalysisReport<T>], thetas: &[T], methods: &[Method]) {
    for &theta in thetas {
        for &method in methods {
            // indices in ascending Γ order
            let idx: Vec<usize> = (0..reports.len())
                .filter(|&i| reports[i].theta == theta && reports[i].method == method)
                .collect();
            if let Some(pos) = idx.iter().position(|&i| !reports[i].rejects_afe0()) {
                reports[idx[pos]].boundary = Some(Boundary::FirstFail);
                if pos > 0 {
                    reports[idx[pos - 1]].boundary = Some(Boundary::LastReject);
                }
            } else if let Some(&last) = idx.last() {
                reports[last].boundary = Some(Boundary::LastReject);
            }
        }
    }
}

/// Writes grid rows as
/// `gamma,theta,method,p_value_afe0,a_star,afe_lower,saturated,boundary_flag`.
pub fn write_grid<W: std::io::Write, T: Real>(out: W, reports: &[AnalysisReport<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "gamma",
        "theta",
        "method",
        "p_value_afe0",
        "a_star",
        "afe_lower",
        "saturated",
        "boundary_flag",
    ])?;
    for r in reports {
        w.write_record([
            format!("{:?}", r.gamma.to_f64_lossy()),
            format!("{:?}", r.theta.to_f64_lossy()),
            r.method.name().to_string(),
            crate::fmt_sig(r.p_value_afe0.to_f64_lossy()),
            r.a_star().to_string(),
            crate::fmt_sig(r.afe_lower()),
            r.min_ci.saturated.to_string(),
            r.boundary
                .map(Boundary::name)
                .unwrap_or_default()
                .to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
