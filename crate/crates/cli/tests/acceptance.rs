//! End-to-end acceptance checks. Runs every criterion, prints one line per
//! criterion, and exits nonzero if any fails.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use afsens::{
    estimate_design_sensitivity, fisher, monte_carlo_power, odds_ratio, pb_tail_exact,
    power_merged, power_stouffer, replicate_rng, run_power_study, tail_normal, truncated_product,
    Combiner, DGPConfig, DesignSensitivityConfig, GroupProfile, McGroup, Method, PairCounts,
    PairDgp, PairGroupDgp, PowerSpec, SensParams, SetClass,
};
use rand::Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn table7() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/table7.csv")
}

fn afsens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afsens"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

/// Grid CSV rows keyed by `(gamma, theta, method)`.
struct Grid {
    rows: Vec<Vec<String>>,
}

impl Grid {
    fn run(args: &[&str]) -> Result<Grid, String> {
        let summary = table7();
        let mut full = vec!["analyze", "--summary", summary.to_str().unwrap()];
        full.extend_from_slice(args);
        let out = afsens(&full);
        if !out.status.success() {
            return Err(format!(
                "analyze failed: {}",
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "gamma,theta,method,p_value_afe0,a_star,afe_lower,saturated,boundary_flag" {
            return Err(format!("unexpected header {header:?}"));
        }
        Ok(Grid {
            rows: lines
                .map(|l| l.split(',').map(str::to_string).collect())
                .collect(),
        })
    }

    fn row(&self, gamma: f64, theta: f64, method: &str) -> Result<&Vec<String>, String> {
        self.rows
            .iter()
            .find(|r| {
                r[0].parse::<f64>() == Ok(gamma)
                    && r[1].parse::<f64>() == Ok(theta)
                    && r[2] == method
            })
            .ok_or_else(|| format!("no row for {method} at ({gamma}, {theta})"))
    }

    fn p(&self, gamma: f64, theta: f64, method: &str) -> Result<f64, String> {
        self.row(gamma, theta, method)?[3]
            .parse()
            .map_err(|e| format!("{e}"))
    }

    /// `(a*, AFₑ lower bound as a percentage rounded to 2 decimals)`.
    fn interval(&self, gamma: f64, theta: f64, method: &str) -> Result<(u64, String), String> {
        let r = self.row(gamma, theta, method)?;
        let a: u64 = r[4].parse().map_err(|e| format!("{e}"))?;
        let afe: f64 = r[5].parse().map_err(|e| format!("{e}"))?;
        Ok((a, format!("{:.2}", 100.0 * afe)))
    }
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let g = Grid::run(&["--gamma", "1.0", "--theta", "1.0", "--methods", "merged"])?;
    within(Duration::from_secs(1), t)?;
    let (a, pct) = g.interval(1.0, 1.0, "merged")?;
    check(
        a == 17 && pct == "16.50",
        format!("merged a* = {a}, AFe >= {pct}%"),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let g = Grid::run(&[
        "--gamma",
        "1.0",
        "--theta",
        "1.0",
        "--methods",
        "bonferroni",
    ])?;
    within(Duration::from_secs(1), t)?;
    let (a, pct) = g.interval(1.0, 1.0, "bonferroni")?;
    check(
        a == 23 && pct == "22.33",
        format!("bonferroni a* = {a}, AFe >= {pct}%"),
    )
}

fn criterion_3() -> Verdict {
    let g = Grid::run(&[
        "--gamma",
        "1.21,1.22,1.26,1.30,1.34,1.38,1.40",
        "--theta",
        "1.0",
        "--methods",
        "merged,bonferroni,fisher,truncated",
        "--trunc",
        "0.10",
    ])?;
    let mut notes = Vec::new();
    let mut ok = true;
    for (method, reject, fail) in [
        ("merged", 1.21, 1.22),
        ("bonferroni", 1.38, 1.40),
        ("fisher", 1.26, 1.30),
        ("truncated", 1.34, 1.38),
    ] {
        let (pr, pf) = (g.p(reject, 1.0, method)?, g.p(fail, 1.0, method)?);
        ok &= pr < 0.05 && pf >= 0.05;
        notes.push(format!("{method} p({reject}) = {pr}, p({fail}) = {pf}"));
    }
    let (a, pct) = g.interval(1.38, 1.0, "bonferroni")?;
    ok &= a == 1 && pct == "0.97";
    notes.push(format!("bonferroni at 1.38: a* = {a}, {pct}%"));
    check(ok, notes.join("; "))
}

fn criterion_4() -> Verdict {
    let g = Grid::run(&[
        "--gamma",
        "1.08,1.12",
        "--theta",
        "1.10",
        "--methods",
        "merged",
    ])?;
    let (a, pct) = g.interval(1.08, 1.10, "merged")?;
    let p = g.p(1.12, 1.10, "merged")?;
    check(
        a == 3 && pct == "2.91" && p >= 0.05,
        format!("(1.08, 1.10): a* = {a}, {pct}%; (1.12, 1.10): p = {p}"),
    )
}

fn criterion_5() -> Verdict {
    let cases = [
        (PairCounts::new(2, 101, 64, 3879), "1.58"),
        (PairCounts::new(1, 86, 43, 3024), "2.00"),
        (PairCounts::new(1, 15, 21, 855), "0.71"),
    ];
    let got: Vec<String> = cases
        .iter()
        .map(|(pc, _)| format!("{:.2}", odds_ratio(pc).unwrap().estimate))
        .collect();
    let ok = cases.iter().zip(&got).all(|((_, want), g)| g == want);
    check(ok, format!("odds ratios {}", got.join(", ")))
}

fn criterion_6() -> Verdict {
    let mut rng = replicate_rng(60, 0);
    let mut worst_exact = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=12usize);
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        for k in 0..=n as i64 {
            let mut brute = 0.0;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as i64 >= k {
                    brute += probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| if mask >> i & 1 == 1 { p } else { 1.0 - p })
                        .product::<f64>();
                }
            }
            worst_exact = worst_exact.max((pb_tail_exact(&probs, k).unwrap() - brute).abs());
        }
    }

    let mut worst_normal = 0.0f64;
    let mut worst_at = (0, 0.0);
    let mut worst_tail = 0.0f64;
    for _ in 0..20 {
        let probs: Vec<f64> = (0..500).map(|_| rng.random_range(0.3..=0.7)).collect();
        for k in 0..=500i64 {
            let exact = pb_tail_exact(&probs, k).unwrap();
            let d = (exact - tail_normal(k, 0, &probs)).abs();
            if d > worst_normal {
                worst_normal = d;
                worst_at = (k, exact);
            }
            if exact <= 0.1 {
                worst_tail = worst_tail.max(d);
            }
        }
    }
    check(
        worst_exact <= 1e-12 && worst_normal <= 0.01,
        format!(
            "exact vs enumeration max {worst_exact:.1e}; normal vs exact max {worst_normal:.4} \
             (k = {}, exact tail {:.3}); max where exact tail <= 0.1: {worst_tail:.4}",
            worst_at.0, worst_at.1
        ),
    )
}

fn criterion_7() -> Verdict {
    let mut rng = replicate_rng(70, 0);
    let draws: Vec<[f64; 2]> = (0..100_000)
        .map(|_| [rng.random_range(1e-300..1.0), rng.random_range(1e-300..1.0)])
        .collect();
    let weights = [2.0f64, 1.0];
    let mut ok = true;
    let mut notes = Vec::new();
    for c in Combiner::ALL {
        let hits = draws
            .iter()
            .filter(|ps| c.combine(&ps[..], Some(&weights[..]), 0.05).unwrap() <= 0.05)
            .count();
        let size = hits as f64 / draws.len() as f64;
        ok &= match c {
            Combiner::Bonferroni => size <= 0.055,
            _ => (size - 0.05).abs() <= 0.01,
        };
        notes.push(format!("{c} {size:.4}"));
    }
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let l = rng.random_range(1..=6usize);
        let ps: Vec<f64> = (0..l).map(|_| rng.random_range(1e-12..=1.0)).collect();
        worst = worst.max((truncated_product(&ps, 1.0).unwrap() - fisher(&ps).unwrap()).abs());
    }
    ok &= worst <= 1e-12;
    notes.push(format!("truncated(1) vs fisher max {worst:.1e}"));
    check(ok, notes.join(", "))
}

fn criterion_8() -> Verdict {
    let t = Instant::now();
    let reps = 10_000;
    let mut notes = Vec::new();
    let mut ok = true;

    // 20 000 discordant pairs at Γ = Θ = 1
    let a = vec![McGroup {
        classes: vec![(0.5, 20_000)],
        effect: 150,
    }];
    // mixed pairs and 1:2 sets at Γ = 1.2, Θ = 1.1
    let profile = GroupProfile::from_classes([
        SetClass {
            size: 2,
            exposed: 1,
            case_exposed: true,
            count: 6_000,
        },
        SetClass {
            size: 2,
            exposed: 1,
            case_exposed: false,
            count: 4_000,
        },
        SetClass {
            size: 3,
            exposed: 1,
            case_exposed: true,
            count: 3_000,
        },
        SetClass {
            size: 3,
            exposed: 2,
            case_exposed: false,
            count: 2_000,
        },
    ]);
    let b =
        vec![McGroup::from_profile(&profile, &SensParams::new(1.2, 1.1).unwrap(), 120).unwrap()];
    // two subtypes combined by Stouffer
    let c = vec![
        McGroup {
            classes: vec![(0.55, 12_000)],
            effect: 90,
        },
        McGroup {
            classes: vec![(0.5, 8_000)],
            effect: 40,
        },
    ];
    let stouffer = Method::Combined(Combiner::Stouffer);
    for (name, groups, method, seed) in [
        ("merged", &a, Method::Merged, 81),
        ("mixed", &b, Method::Merged, 82),
        ("stouffer", &c, stouffer, 83),
    ] {
        let spec = PowerSpec::new(0.05, groups.iter().map(McGroup::power_group).collect()).unwrap();
        let analytic = if method == Method::Merged {
            power_merged(&spec)
        } else {
            power_stouffer(&spec)
        };
        let mc = monte_carlo_power(groups, method, 0.05, 0.1, reps, seed).unwrap();
        let se = (analytic * (1.0 - analytic) / reps as f64).sqrt();
        ok &= (mc.power - analytic).abs() <= 3.0 * se;
        notes.push(format!(
            "{name}: analytic {analytic:.4}, MC {:.4} (3 SE {:.4})",
            mc.power,
            3.0 * se
        ));
    }
    within(Duration::from_secs(60), t)?;
    check(ok, notes.join("; "))
}

fn criterion_9() -> Verdict {
    let t = Instant::now();
    let base = DGPConfig {
        reps: 1000,
        seed: 90,
        thetas: vec![1.0, 1.2],
        methods: Method::ALL.to_vec(),
        ..DGPConfig::default()
    };
    let equal = run_power_study(&base).map_err(|e| e.to_string())?;
    let unequal = run_power_study(&DGPConfig {
        delta1: 0.6,
        delta2: 0.2,
        ..base.clone()
    })
    .map_err(|e| e.to_string())?;
    within(Duration::from_secs(300), t)?;

    let mut ok = true;
    let mut notes = Vec::new();
    let at1: Vec<f64> = equal
        .rows
        .iter()
        .filter(|r| r.gamma == 1.0 && r.theta == 1.0)
        .map(|r| r.power)
        .collect();
    ok &= at1.iter().all(|&p| p == 1.0);
    notes.push(format!(
        "(a) min power at Γ=1 {:.3}",
        at1.iter().cloned().fold(1.0, f64::min)
    ));

    let find = |t: &afsens::PowerTable, g: f64, th: f64, m: Method| {
        *t.rows
            .iter()
            .find(|r| r.gamma == g && r.theta == th && r.method == m)
            .unwrap()
    };
    let fisher = find(&unequal, 5.0, 1.0, Method::Combined(Combiner::Fisher)).power;
    let merged = find(&unequal, 5.0, 1.0, Method::Merged).power;
    ok &= fisher - merged > 0.1;
    notes.push(format!("(b) Γ=5 fisher {fisher:.3} vs merged {merged:.3}"));

    let mut rises = 0;
    let mut theta_rises = 0;
    for table in [&equal, &unequal] {
        for &m in &base.methods {
            for &th in &base.thetas {
                for w in base.gammas.windows(2) {
                    let (lo, hi) = (find(table, w[0], th, m), find(table, w[1], th, m));
                    if hi.power > lo.power + 2.0 * lo.stderr().hypot(hi.stderr()) {
                        rises += 1;
                    }
                }
            }
            for &g in &base.gammas {
                let (lo, hi) = (find(table, g, 1.0, m), find(table, g, 1.2, m));
                if hi.power > lo.power + 2.0 * lo.stderr().hypot(hi.stderr()) {
                    theta_rises += 1;
                }
            }
        }
    }
    ok &= rises == 0 && theta_rises == 0;
    notes.push(format!(
        "(c) Γ increases beyond 2 SE: {rises}; (d) Θ increases beyond 2 SE: {theta_rises}"
    ));
    check(ok, notes.join("; "))
}

fn criterion_10() -> Verdict {
    let t = Instant::now();
    let g1 = PairGroupDgp {
        sets: 1_000_000,
        discordant_rate: 0.2,
        case_exposed: 0.75,
    };
    let g2 = PairGroupDgp {
        sets: 1_000_000,
        discordant_rate: 0.2,
        case_exposed: 0.6,
    };
    let cfg = |method, seed| DesignSensitivityConfig {
        theta: 1.0,
        method,
        alpha: 0.05,
        trunc: 0.1,
        reps: 200,
        tol: 0.01,
        gamma_max: 4.0,
        grid_points: 13,
        seed,
    };
    let est = |groups: Vec<PairGroupDgp>, method, seed| {
        estimate_design_sensitivity(&PairDgp::new(groups).unwrap(), &cfg(method, seed))
            .map(|e| e.gamma)
            .map_err(|e| e.to_string())
    };
    let first = est(vec![g1], Method::Merged, 101)?;
    let second = est(vec![g2], Method::Merged, 102)?;
    let fisher = Method::Combined(Combiner::Fisher);
    let combined = est(vec![g1, g2], fisher, 103)?;
    within(Duration::from_secs(600), t)?;
    let larger = first.max(second);
    check(
        (combined - larger).abs() <= 0.05,
        format!("per-group {first:.3} and {second:.3}; fisher combined {combined:.3}"),
    )
}

fn criterion_11() -> Verdict {
    let run = |threads: &str, args: &[&str]| {
        let mut full = vec!["--threads", threads];
        full.extend_from_slice(args);
        let out = afsens(&full);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    let simulate = [
        "simulate", "--seed", "5", "--reps", "100", "--delta1", "0.6",
    ];
    let design = [
        "design-sensitivity",
        "--seed",
        "6",
        "--pair-group",
        "20000:0.2:0.7",
        "--pair-group",
        "20000:0.2:0.6",
        "--method",
        "fisher",
        "--reps",
        "50",
        "--tol",
        "0.05",
        "--gamma-max",
        "4",
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, args) in [
        ("simulate", &simulate[..]),
        ("design-sensitivity", &design[..]),
    ] {
        let one = run("1", args);
        let again = run("1", args);
        let four = run("4", args);
        let same = one == again && one == four && !one.is_empty();
        ok &= same;
        notes.push(format!(
            "{name} {} bytes, identical across runs and 1/4 threads: {same}",
            one.len()
        ));
    }
    check(ok, notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1 case study, merged", criterion_1),
        ("2 case study, bonferroni", criterion_2),
        ("3 bias boundaries", criterion_3),
        ("4 selection bias", criterion_4),
        ("5 odds ratios", criterion_5),
        ("6 tail oracles", criterion_6),
        ("7 combiner calibration", criterion_7),
        ("8 power vs monte carlo", criterion_8),
        ("9 simulation properties", criterion_9),
        ("10 design sensitivity", criterion_10),
        ("11 determinism", criterion_11),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let started = Instant::now();
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS criterion {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                println!("FAIL criterion {name} [{secs:.1}s]: {detail}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        println!(
            "{} of 11 criteria failed: {}",
            failed.len(),
            failed.join(", ")
        );
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
