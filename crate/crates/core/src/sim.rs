//! Power study of the combination methods on simulated two-subtype cohorts.
//!
//! Each replicate draws two cohorts of `n` units with binary potential
//! outcomes `r_T ~ Bern(p₂ + δ)`, `r_C ~ Bern(p₂)` and fair-coin exposure,
//! pairs every case with a distinct random non-case, and runs
//! [`test_afe_zero`] on the two resulting pair tables.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::SensParams;
use crate::combine::Combiner;
use crate::error::{Error, Result};
use crate::inference::{test_afe_zero, AnalysisOptions, GroupProfile, Method, Tail};
use crate::power::{replicate_rng, PairGenerator};
use crate::study::PairCounts;

/// Simulation settings. Field names double as the keys of the flat config
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DGPConfig {
    /// Units per cohort.
    pub n: u64,
    pub delta1: f64,
    pub delta2: f64,
    /// Control event probability `p₂`.
    pub baseline: f64,
    pub reps: u64,
    pub alpha: f64,
    /// Truncation point of the truncated product method.
    pub trunc: f64,
    pub seed: u64,
    pub gammas: Vec<f64>,
    pub thetas: Vec<f64>,
    pub methods: Vec<Method>,
}

impl Default for DGPConfig {
    fn default() -> Self {
        Self {
            n: 500,
            delta1: 0.2,
            delta2: 0.2,
            baseline: 0.2,
            reps: 200,
            alpha: 0.05,
            trunc: 0.05,
            seed: 0,
            gammas: vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
            thetas: vec![1.0, 1.1, 1.2],
            methods: vec![
                Method::Merged,
                Method::Combined(Combiner::Stouffer),
                Method::Combined(Combiner::Fisher),
                Method::Combined(Combiner::Truncated),
                Method::Combined(Combiner::Bonferroni),
            ],
        }
    }
}

impl DGPConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.baseline) {
            return bad(format!(
                "baseline must lie in [0, 1], got {}",
                self.baseline
            ));
        }
        for d in [self.delta1, self.delta2] {
            if !(self.baseline + d >= 0.0 && self.baseline + d <= 1.0) {
                return bad(format!(
                    "baseline + delta must lie in [0, 1], got {} + {d}",
                    self.baseline
                ));
            }
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.trunc > 0.0 && self.trunc <= 1.0) {
            return bad(format!("trunc must lie in (0, 1], got {}", self.trunc));
        }
        if self.gammas.is_empty() || self.thetas.is_empty() || self.methods.is_empty() {
            return bad("gammas, thetas and methods must be nonempty".into());
        }
        for &x in self.gammas.iter().chain(&self.thetas) {
            if !(x >= 1.0) {
                return bad(format!(
                    "sensitivity parameters must be at least 1, got {x}"
                ));
            }
        }
        Ok(())
    }
}

/// A simulated pair table and the number of cases left unpaired because
/// non-cases ran out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulatedPairs {
    pub counts: PairCounts,
    pub dropped_cases: u64,
}

/// Draws one cohort with treatment effect `delta` and forms case-referent
/// pairs.
pub fn generate_dataset<R: Rng>(
    n: u64,
    baseline: f64,
    delta: f64,
    rng: &mut R,
) -> Result<SimulatedPairs> {
    let p1 = baseline + delta;
    if !(0.0..=1.0).contains(&baseline) || !(0.0..=1.0).contains(&p1) {
        return Err(Error::Config(format!(
            "event probabilities out of range: p1 = {p1}, p2 = {baseline}"
        )));
    }
    let mut cases = Vec::new();
    let mut referents = Vec::new();
    for _ in 0..n {
        let r_t = rng.random_bool(p1);
        let r_c = rng.random_bool(baseline);
        let z = rng.random_bool(0.5);
        let r = if z { r_t } else { r_c };
        if r {
            cases.push(z);
        } else {
            referents.push(z);
        }
    }
    cases.shuffle(rng);
    referents.shuffle(rng);
    let mut counts = PairCounts::default();
    for (&case, &referent) in cases.iter().zip(&referents) {
        match (case, referent) {
            (true, true) => counts.a += 1,
            (true, false) => counts.b += 1,
            (false, true) => counts.c += 1,
            (false, false) => counts.d += 1,
        }
    }
    Ok(SimulatedPairs {
        counts,
        dropped_cases: cases.len().saturating_sub(referents.len()) as u64,
    })
}

impl PairGenerator for DGPConfig {
    fn groups(&self) -> usize {
        2
    }

    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<Vec<PairCounts>> {
        [self.delta1, self.delta2]
            .iter()
            .map(|&d| Ok(generate_dataset(self.n, self.baseline, d, rng)?.counts))
            .collect()
    }
}

/// Rejection frequency of one method at one `(Γ, Θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRow {
    pub delta1: f64,
    pub delta2: f64,
    pub gamma: f64,
    pub theta: f64,
    pub method: Method,
    pub power: f64,
    pub reps: u64,
    pub seed: u64,
}

impl PowerRow {
    /// Binomial standard error of `power`.
    pub fn stderr(&self) -> f64 {
        (self.power * (1.0 - self.power) / self.reps as f64).sqrt()
    }
}

/// Output of [`run_power_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTable {
    /// Ordered by `Γ`, then `Θ` ascending, then method in config order.
    pub rows: Vec<PowerRow>,
    /// Cases dropped for lack of non-cases, summed over replicates.
    pub dropped_cases: u64,
}

/// Runs every replicate and tabulates the fraction with upper-bound
/// P-value at most `α` for each `(Γ, Θ, method)`.
///
/// Replicate `r` draws both cohorts from [`replicate_rng`]`(seed, r)`, so the
/// table is identical for any number of worker threads.
pub fn run_power_study(config: &DGPConfig) -> Result<PowerTable> {
    config.validate()?;
    let mut gammas = config.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let mut thetas = config.thetas.clone();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();

    let mut cells = Vec::new();
    for &g in &gammas {
        for &t in &thetas {
            cells.push(SensParams::new(g, t)?);
        }
    }
    let opts = AnalysisOptions {
        alpha: config.alpha,
        tail: Tail::Normal,
        trunc: config.trunc,
    };
    let width = config.methods.len();

    let per_rep = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(config.seed, rep);
            let d1 = generate_dataset(config.n, config.baseline, config.delta1, &mut rng)?;
            let d2 = generate_dataset(config.n, config.baseline, config.delta2, &mut rng)?;
            let groups = [
                GroupProfile::from_pair_counts(&d1.counts),
                GroupProfile::from_pair_counts(&d2.counts),
            ];
            let mut hits = vec![false; cells.len() * width];
            for (ci, params) in cells.iter().enumerate() {
                for (mi, &method) in config.methods.iter().enumerate() {
                    let p = test_afe_zero(&groups, method, params, &opts)?;
                    hits[ci * width + mi] = p <= config.alpha;
                }
            }
            Ok((hits, d1.dropped_cases + d2.dropped_cases))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0u64; cells.len() * width];
    let mut dropped_cases = 0;
    for (hits, dropped) in &per_rep {
        dropped_cases += dropped;
        for (c, &h) in counts.iter_mut().zip(hits) {
            *c += u64::from(h);
        }
    }

    let rows = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, params)| {
            let counts = &counts;
            config
                .methods
                .iter()
                .enumerate()
                .map(move |(mi, &method)| PowerRow {
                    delta1: config.delta1,
                    delta2: config.delta2,
                    gamma: *params.gamma(),
                    theta: *params.theta(),
                    method,
                    power: counts[ci * width + mi] as f64 / config.reps as f64,
                    reps: config.reps,
                    seed: config.seed,
                })
        })
        .collect();
    Ok(PowerTable {
        rows,
        dropped_cases,
    })
}

/// Writes `delta1,delta2,gamma,theta,method,power,reps,seed`.
pub fn write_power_table<W: std::io::Write>(out: W, table: &PowerTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "delta1", "delta2", "gamma", "theta", "method", "power", "reps", "seed",
    ])?;
    for r in &table.rows {
        w.write_record([
            format!("{:?}", r.delta1),
            format!("{:?}", r.delta2),
            format!("{:?}", r.gamma),
            format!("{:?}", r.theta),
            r.method.name().to_string(),
            crate::fmt_sig(r.power),
            r.reps.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
