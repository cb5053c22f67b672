use afsens::{
    attributable_prob_bounds, gamma_theta_bounds, paired_upper_pvalue, pb_tail_exact,
    sign_score_bounds, tail_normal, SensParams,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `P(Σ Bern(pᵢ) ≥ k)` by summing over all 2^I outcomes.
fn enumerate_tail(probs: &[f64], k: i64) -> f64 {
    let n = probs.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        if (mask.count_ones() as i64) < k {
            continue;
        }
        let mut w = 1.0;
        for (i, &p) in probs.iter().enumerate() {
            w *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
        }
        total += w;
    }
    total
}

fn enumerate_tail_exact(probs: &[BigRational], k: i64) -> BigRational {
    let one = BigRational::from_integer(BigInt::from(1));
    let mut total = BigRational::from_integer(BigInt::from(0));
    for mask in 0u32..(1 << probs.len()) {
        if (mask.count_ones() as i64) < k {
            continue;
        }
        let mut w = one.clone();
        for (i, p) in probs.iter().enumerate() {
            w *= if mask >> i & 1 == 1 {
                p.clone()
            } else {
                &one - p
            };
        }
        total += w;
    }
    total
}

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

#[test]
fn exact_tail_matches_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..50 {
        let n = rng.random_range(1..=12);
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        for k in -1..=(n as i64 + 1) {
            let got = pb_tail_exact(&probs, k).unwrap();
            let want = enumerate_tail(&probs, k);
            assert!((got - want).abs() <= 1e-12, "k={k}: {got} vs {want}");
        }
    }
}

#[test]
fn exact_tail_is_exact_over_rationals() {
    let probs = vec![
        ratio(1, 3),
        ratio(138, 238),
        ratio(2, 7),
        ratio(1, 1),
        ratio(0, 1),
        ratio(5, 9),
    ];
    for k in 0..=7 {
        assert_eq!(
            pb_tail_exact(&probs, k).unwrap(),
            enumerate_tail_exact(&probs, k)
        );
    }
}

#[test]
fn rational_bounds_match_closed_form() {
    let params = SensParams::new(ratio(6, 5), ratio(11, 10)).unwrap();
    let b = gamma_theta_bounds(2, 5, &params).unwrap();
    // 2/(2 + 3Γ) and 2ΓΘ/(2ΓΘ + 3)
    assert_eq!(b.lower, ratio(2, 1) / (ratio(2, 1) + ratio(18, 5)));
    assert_eq!(b.upper, ratio(132, 50) / (ratio(132, 50) + ratio(3, 1)));
}

#[test]
fn normal_tail_tracks_exact_tail_on_large_instances() {
    // Without a continuity correction the error near the mean is about half
    // a lattice step times the density, 0.5·φ(z)/σ; in the tails it is small.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let probs: Vec<f64> = (0..500).map(|_| rng.random_range(0.3..0.7)).collect();
        let mean: f64 = probs.iter().sum();
        let sd = probs.iter().map(|p| p * (1.0 - p)).sum::<f64>().sqrt();
        for t in 0..=500i64 {
            let exact = pb_tail_exact(&probs, t).unwrap();
            let approx = tail_normal(t, 0, &probs);
            let z = (t as f64 - mean) / sd;
            let half_step = 0.5 * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() / sd;
            assert!(
                (exact - approx).abs() <= half_step + 0.005,
                "t={t}: {exact} vs {approx}"
            );
            if approx <= 0.1 {
                assert!((exact - approx).abs() < 0.01, "t={t}: {exact} vs {approx}");
            }
        }
    }
}

#[test]
fn f32_and_f64_bounds_agree() {
    let p64 = SensParams::new(1.3f64, 1.1).unwrap();
    let p32 = SensParams::new(1.3f32, 1.1).unwrap();
    for (z, j) in [(1, 2), (2, 5), (3, 4)] {
        let b64 = gamma_theta_bounds(z, j, &p64).unwrap();
        let b32 = gamma_theta_bounds(z, j, &p32).unwrap();
        assert!((b64.upper - b32.upper as f64).abs() < 1e-6);
        assert!((b64.lower - b32.lower as f64).abs() < 1e-6);
    }
}

#[test]
fn paired_pvalue_is_a_valid_upper_bound_under_gamma() {
    // pairs whose case-exposure probability sits exactly at the Γ bound
    let gamma = 1.3f64;
    let params = SensParams::hidden(gamma).unwrap();
    let pi = gamma / (1.0 + gamma);
    let discordant = 400;
    let reps = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut rejections = 0u32;
    for _ in 0..reps {
        let b = (0..discordant).filter(|_| rng.random_bool(pi)).count() as u64;
        let p: f64 = paired_upper_pvalue(b, discordant - b, 0, &params).unwrap();
        if p <= 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    let se = (0.05f64 * 0.95 / reps as f64).sqrt();
    assert!(rate <= 0.05 + 3.0 * se, "size {rate}");
}

proptest! {
    #[test]
    fn bounds_are_ordered_and_monotone(
        z in 0u64..6,
        extra in 0u64..6,
        g in 1.0f64..4.0,
        dg in 0.0f64..2.0,
        t in 1.0f64..2.0,
        dt in 0.0f64..1.0,
    ) {
        let j = (z + extra).max(2);
        let z = z.min(j);
        let lo = SensParams::new(g, t).unwrap();
        let hi = SensParams::new(g + dg, t + dt).unwrap();
        let a = gamma_theta_bounds(z, j, &lo).unwrap();
        let b = gamma_theta_bounds(z, j, &hi).unwrap();
        prop_assert!(a.lower <= a.upper + 1e-15);
        prop_assert!(b.upper >= a.upper - 1e-15);
        prop_assert!(b.lower <= a.lower + 1e-15);
        prop_assert!((0.0..=1.0).contains(&a.lower) && (0.0..=1.0).contains(&a.upper));
        // Θ does not move the lower bound
        let theta_only = SensParams::new(g, t + dt).unwrap();
        let c = gamma_theta_bounds(z, j, &theta_only).unwrap();
        prop_assert_eq!(c.lower, a.lower);
    }

    #[test]
    fn theta_one_reduces_to_hidden_bias(z in 0u64..5, j in 2u64..8, g in 1.0f64..5.0) {
        let z = z.min(j);
        let a = sign_score_bounds(z, j, &g).unwrap();
        let b = gamma_theta_bounds(z, j, &SensParams::hidden(g).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn nulled_sets_have_zero_probability(z in 0u64..5, j in 2u64..8, g in 1.0f64..5.0, t in 1.0f64..2.0) {
        let z = z.min(j);
        let b = attributable_prob_bounds(z, 0, j, &SensParams::new(g, t).unwrap()).unwrap();
        prop_assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn exact_tail_is_monotone_in_k(probs in prop::collection::vec(0.0f64..=1.0, 0..40), k in 0i64..40) {
        let a = pb_tail_exact(&probs, k).unwrap();
        let b = pb_tail_exact(&probs, k + 1).unwrap();
        prop_assert!(b <= a + 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn paired_pvalue_rises_with_bias(b in 0u64..200, c in 0u64..200, g in 1.0f64..3.0, dg in 0.0f64..1.0) {
        let lo: f64 = paired_upper_pvalue(b, c, 0, &SensParams::hidden(g).unwrap()).unwrap();
        let hi: f64 = paired_upper_pvalue(b, c, 0, &SensParams::hidden(g + dg).unwrap()).unwrap();
        prop_assert!(hi >= lo - 1e-12);
    }
}
