//! Sensitivity analysis for the attributable fraction among the exposed
//! (`AFₑ`) in matched case-referent studies with case subtypes.
//!
//! Numeric code is generic over the scalar type ([`Real`]); the aliases at the
//! crate root fix it to `f64`.

// `!(x > 0)` style checks are deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod combine;
pub mod error;
pub mod inference;
pub mod power;
pub mod scalar;
pub mod sim;
pub mod special;
pub mod study;

pub use bounds::{
    attributable_prob_bounds, gamma_theta_bounds, paired_upper_pvalue, pb_tail_exact,
    sign_score_bounds, tail_normal, BernoulliBounds, SensParams,
};
pub use combine::{bonferroni, fisher, stouffer, truncated_product, weighted_stouffer, Combiner};
pub use error::{Error, Result};
pub use inference::{
    max_ci_attributable, min_ci_attributable, profiles_from_study, sensitivity_grid, test_afe_zero,
    test_afe_zero_merged, write_grid, AnalysisOptions, AnalysisReport, Boundary, CiBound,
    GroupProfile, Method, SetClass, Side, Tail,
};
pub use power::{
    estimate_design_sensitivity, monte_carlo_power, power_dominance_check, power_merged,
    power_stouffer, power_weighted_stouffer, replicate_rng, write_power_curve, DesignSensitivity,
    DesignSensitivityConfig, McEstimate, McGroup, PairDgp, PairGenerator, PairGroupDgp, PowerGroup,
    PowerPoint, PowerSpec,
};
pub use scalar::{Prob, Real};
pub use sim::{
    generate_dataset, run_power_study, write_power_table, DGPConfig, PowerRow, PowerTable,
    SimulatedPairs,
};
pub use study::{
    odds_ratio, parse_study, parse_summary, write_study, write_summary, MatchedSet, OddsRatio,
    PairCounts, Study, SubtypeView, SummaryRow,
};

pub type SensParams64 = SensParams<f64>;
pub type SensParams32 = SensParams<f32>;
pub type Bounds64 = BernoulliBounds<f64>;
pub type AnalysisOptions64 = AnalysisOptions<f64>;
pub type AnalysisReport64 = AnalysisReport<f64>;
pub type PowerSpec64 = PowerSpec<f64>;

/// Formats like C's `%g` with six significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
