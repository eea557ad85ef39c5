//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rsb_core::hopfield::{hop_p_closed_form, hop_pressure_krsb, hop_pressure_rs, hop_sce_krsb};
use rsb_core::oracle::{
    metropolis_run, pattern_count, substream, DisorderSample, HopfieldDisorderSample, InitPolicy,
};
use rsb_core::quadrature::{gauss_expect, log_cosh};
use rsb_core::sk::sk_pressure_krsb;
use rsb_core::solver::{solve_multistart, SolverOptions};
use rsb_core::verify::{run_suite, Suite, VerifyConfig};
use rsb_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn suite_outcome(suite: Suite, cfg: &VerifyConfig, limit: Duration) -> Outcome {
    let start = Instant::now();
    match run_suite(suite, cfg) {
        Ok(checks) => {
            let elapsed = start.elapsed();
            let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            Outcome {
                pass: failed.is_empty() && elapsed <= limit,
                detail: format!(
                    "{}/{} checks, {:.1}s (limit {}s){}",
                    checks.len() - failed.len(),
                    checks.len(),
                    elapsed.as_secs_f64(),
                    limit.as_secs(),
                    if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(" | ")) }
                ),
            }
        }
        Err(e) => Outcome { pass: false, detail: format!("suite error: {e}") },
    }
}

fn collapse() -> Outcome {
    suite_outcome(Suite::Collapse, &VerifyConfig::default(), Duration::from_secs(30))
}

// Closed forms written out level by level, with their own nested Gaussian integrals.

fn sk_1rsb_direct(p: &SkParams, m: f64, q: [f64; 2], th: f64, spec: &QuadratureSpec) -> f64 {
    let (b, j) = (p.beta, p.j);
    let c1 = b * j * q[0].sqrt();
    let c2 = b * j * (q[1] - q[0]).sqrt();
    let shift = b * m * p.j0;
    let outer = gauss_expect(
        |h1| {
            let inner = gauss_expect(|h2| (th * log_cosh(c1 * h1 + c2 * h2 + shift)).exp(), spec).unwrap();
            inner.ln() / th
        },
        spec,
    )
    .unwrap();
    std::f64::consts::LN_2 + outer + b * b / 4.0 * j * j - b * p.j0 / 2.0 * m * m
        + b * b / 4.0 * j * j * (th * q[0] * q[0] + (1.0 - th) * q[1] * q[1])
        - b * b / 2.0 * j * j * q[1]
}

fn sk_2rsb_direct(p: &SkParams, m: f64, q: [f64; 3], th: [f64; 2], spec: &QuadratureSpec) -> f64 {
    let (b, j) = (p.beta, p.j);
    let c1 = b * j * q[0].sqrt();
    let c2 = b * j * (q[1] - q[0]).sqrt();
    let c3 = b * j * (q[2] - q[1]).sqrt();
    let shift = b * p.j0 * m;
    let outer = gauss_expect(
        |h1| {
            let mid = gauss_expect(
                |h2| {
                    let inner = gauss_expect(
                        |h3| (th[1] * log_cosh(c1 * h1 + c2 * h2 + c3 * h3 + shift)).exp(),
                        spec,
                    )
                    .unwrap();
                    inner.powf(th[0] / th[1])
                },
                spec,
            )
            .unwrap();
            mid.ln() / th[0]
        },
        spec,
    )
    .unwrap();
    // overlap source with prefactor beta^2 J^2 / 4, the value that makes K = 2 collapse onto K = 1
    let bracket = (1.0 - q[2]).powi(2) - th[0] * (q[1] * q[1] - q[0] * q[0]) - th[1] * (q[2] * q[2] - q[1] * q[1]);
    std::f64::consts::LN_2 + outer + b * b / 4.0 * j * j * bracket - b * p.j0 / 2.0 * m * m
}

fn hop_1rsb_direct(p: &HopfieldParams, m: f64, q: [f64; 2], ps: [f64; 2], th: f64, spec: &QuadratureSpec) -> f64 {
    let (b, al) = (p.beta, p.alpha);
    let c1 = (al * b * ps[0]).sqrt();
    let c2 = (al * b * (ps[1] - ps[0])).sqrt();
    let outer = gauss_expect(
        |h1| gauss_expect(|h2| (th * log_cosh(b * m + c1 * h1 + c2 * h2)).exp(), spec).unwrap().ln() / th,
        spec,
    )
    .unwrap();
    let d = 1.0 - (1.0 - q[1]) * b - th * b * (q[1] - q[0]);
    outer + std::f64::consts::LN_2 + al / (2.0 * th) * (1.0 + b * th * (q[1] - q[0]) / d).ln()
        - al / 2.0 * (1.0 - b * (1.0 - q[1])).ln()
        + al * b / 2.0 * q[0] / d
        - b * m * m / 2.0
        - al * b / 2.0 * ps[1] * (1.0 - q[1])
        - al * b / 2.0 * th * (ps[1] * q[1] - ps[0] * q[0])
}

fn hop_2rsb_direct(p: &HopfieldParams, m: f64, q: [f64; 3], ps: [f64; 3], th: [f64; 2], spec: &QuadratureSpec) -> f64 {
    let (b, al) = (p.beta, p.alpha);
    let c1 = (al * b * ps[0]).sqrt();
    let c2 = (al * b * (ps[1] - ps[0])).sqrt();
    let c3 = (al * b * (ps[2] - ps[1])).sqrt();
    let outer = gauss_expect(
        |h1| {
            let mid = gauss_expect(
                |h2| {
                    gauss_expect(|h3| (th[1] * log_cosh(b * m + c1 * h1 + c2 * h2 + c3 * h3)).exp(), spec)
                        .unwrap()
                        .powf(th[0] / th[1])
                },
                spec,
            )
            .unwrap();
            mid.ln() / th[0]
        },
        spec,
    )
    .unwrap();
    // last-level overlap q3 in the (1 - q) terms and no leftover interpolation time
    let d2 = 1.0 - b * ((1.0 - q[2]) + th[1] * (q[2] - q[1]));
    let d1 = 1.0 - b * ((1.0 - q[2]) + th[0] * (q[1] - q[0]) + th[1] * (q[2] - q[1]));
    std::f64::consts::LN_2 + outer
        + al / (2.0 * th[1]) * (1.0 + b * th[1] * (q[2] - q[1]) / d2).ln()
        + al / (2.0 * th[0]) * (1.0 + b * th[0] * (q[1] - q[0]) / d1).ln()
        - al / 2.0 * (1.0 - b * (1.0 - q[2])).ln()
        + al * b / 2.0 * q[0] / d1
        - b / 2.0 * m * m
        - al * b / 2.0 * ps[2] * (1.0 - q[2])
        - al * b / 2.0 * th[1] * (ps[2] * q[2] - ps[1] * q[1])
        - al * b / 2.0 * th[0] * (ps[1] * q[1] - ps[0] * q[0])
}

fn sorted(rng: &mut impl Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn thetas(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    loop {
        let t = sorted(rng, 0.05, 0.95, k);
        if t.windows(2).all(|w| w[1] - w[0] > 0.02) {
            return t;
        }
    }
}

fn closed_forms() -> Outcome {
    let start = Instant::now();
    let spec = QuadratureSpec::with_nodes(40);
    let mut rng = substream(2024, 9);
    let mut worst = [0.0_f64; 4];
    for _ in 0..20 {
        let beta = 0.3 + 2.2 * rng.random::<f64>();
        let sk = SkParams::new(beta, 1.5 * rng.random::<f64>(), 0.5 + rng.random::<f64>()).unwrap();
        let m: f64 = rng.random();
        let q = sorted(&mut rng, 0.0, 1.0, 2);
        let th = thetas(&mut rng, 1);
        let a = RsbAnsatz::sk(m, q.clone(), th.clone());
        let got = sk_pressure_krsb(&sk, &a, &spec).unwrap().pressure;
        worst[0] = worst[0].max((got - sk_1rsb_direct(&sk, m, [q[0], q[1]], th[0], &spec)).abs());

        let q = sorted(&mut rng, 0.0, 1.0, 3);
        let th = thetas(&mut rng, 2);
        let a = RsbAnsatz::sk(m, q.clone(), th.clone());
        let got = sk_pressure_krsb(&sk, &a, &spec).unwrap().pressure;
        worst[1] = worst[1].max((got - sk_2rsb_direct(&sk, m, [q[0], q[1], q[2]], [th[0], th[1]], &spec)).abs());

        // Hopfield: every q >= 1 - 0.9 / beta keeps all denominators >= 0.1
        let hp = HopfieldParams::new(beta, 0.2 * rng.random::<f64>()).unwrap();
        let lo = (1.0 - 0.9 / beta).max(0.0);
        let q = sorted(&mut rng, lo, 1.0, 2);
        let th = thetas(&mut rng, 1);
        let ps = hop_p_closed_form(&hp, &RsbAnsatz::hopfield(m, q.clone(), vec![0.0; 2], th.clone())).unwrap();
        let a = RsbAnsatz::hopfield(m, q.clone(), ps.clone(), th.clone());
        let got = hop_pressure_krsb(&hp, &a, &spec).unwrap();
        worst[2] = worst[2].max((got - hop_1rsb_direct(&hp, m, [q[0], q[1]], [ps[0], ps[1]], th[0], &spec)).abs());

        let q = sorted(&mut rng, lo, 1.0, 3);
        let th = thetas(&mut rng, 2);
        let ps = hop_p_closed_form(&hp, &RsbAnsatz::hopfield(m, q.clone(), vec![0.0; 3], th.clone())).unwrap();
        let a = RsbAnsatz::hopfield(m, q.clone(), ps.clone(), th.clone());
        let got = hop_pressure_krsb(&hp, &a, &spec).unwrap();
        let direct = hop_2rsb_direct(&hp, m, [q[0], q[1], q[2]], [ps[0], ps[1], ps[2]], [th[0], th[1]], &spec);
        worst[3] = worst[3].max((got - direct).abs());
    }
    let elapsed = start.elapsed();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: max <= 1e-9 && elapsed <= Duration::from_secs(60),
        detail: format!(
            "max |diff| sk1 {:.2e} sk2 {:.2e} hop1 {:.2e} hop2 {:.2e} (bound 1e-9), {:.1}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed.as_secs_f64()
        ),
    }
}

fn stationarity() -> Outcome {
    suite_outcome(Suite::Stationarity, &VerifyConfig::default(), Duration::from_secs(300))
}

fn enumeration() -> Outcome {
    let cfg = VerifyConfig { n: Some(12), samples: Some(200), ..Default::default() };
    suite_outcome(Suite::Enumeration, &cfg, Duration::from_secs(120))
}

fn lemmas() -> Outcome {
    let cfg = VerifyConfig { n: Some(6), samples: Some(5000), ..Default::default() };
    suite_outcome(Suite::Lemmas, &cfg, Duration::from_secs(300))
}

fn has_retrieval(beta: f64) -> bool {
    let p = ModelParams::Hopfield(HopfieldParams::new(beta, 0.0).unwrap());
    let opts = SolverOptions { max_iter: 400_000, ..Default::default() };
    solve_multistart(&p, &[], &QuadratureSpec::default(), &opts)
        .into_iter()
        .flatten()
        .any(|r| r.converged && r.ansatz.m > 1e-4)
}

fn curie_weiss() -> Outcome {
    let spec = QuadratureSpec::default();
    let mut worst = 0.0_f64;
    for &beta in &[0.3, 0.9, 1.7, 3.1] {
        let hp = HopfieldParams::new(beta, 0.0).unwrap();
        for &m in &[0.0, 0.25, 0.8, 0.99] {
            // overlaps inside the Q > 0 domain, which is enforced even at alpha = 0
            for q in [1.0 - 0.9 / beta, 1.0 - 0.5 / beta].map(|q: f64| q.max(0.0)) {
                let got = hop_pressure_rs(&hp, m, q, 0.4, &spec).unwrap();
                let cw = std::f64::consts::LN_2 + log_cosh(beta * m) - beta * m * m / 2.0;
                worst = worst.max((got - cw).abs() / cw.abs().max(1.0));
            }
        }
    }
    let (mut lo, mut hi) = (0.5, 1.5);
    let bracket_ok = !has_retrieval(lo) && has_retrieval(hi);
    while hi - lo > 0.002 {
        let mid = 0.5 * (lo + hi);
        if has_retrieval(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let onset = 0.5 * (lo + hi);
    Outcome {
        pass: worst <= 4.0 * f64::EPSILON && bracket_ok && (onset - 1.0).abs() <= 0.01,
        detail: format!("identity rel err {worst:.1e}, onset beta {onset:.4} (target 1.00 +- 0.01)"),
    }
}

fn retrieval_monte_carlo() -> Outcome {
    let start = Instant::now();
    let (n, alpha, beta) = (2000, 0.05, 2.0);
    let hp = HopfieldParams::new(beta, alpha).unwrap();
    let theory = solve_multistart(&ModelParams::Hopfield(hp), &[], &QuadratureSpec::default(), &SolverOptions::default())
        .into_iter()
        .flatten()
        .filter(|r| r.converged)
        .map(|r| r.ansatz.m)
        .fold(f64::NAN, f64::max);
    let sample = HopfieldDisorderSample::generate(n, pattern_count(n, alpha), 7, 0, true);
    let mc = metropolis_run(&DisorderSample::Hopfield(sample), beta, 400, InitPolicy::Pattern, 7);
    let elapsed = start.elapsed();
    match mc {
        Ok(r) => {
            let diff = (r.overlap_mean - theory).abs();
            Outcome {
                pass: diff <= 0.05 && elapsed <= Duration::from_secs(120),
                detail: format!(
                    "MC m {:.4} +- {:.4} vs RS m {:.4}: |diff| {diff:.4} (bound 0.05), {:.1}s",
                    r.overlap_mean,
                    r.overlap_se,
                    theory,
                    elapsed.as_secs_f64()
                ),
            }
        }
        Err(e) => Outcome { pass: false, detail: format!("metropolis error: {e}") },
    }
}

fn q_denominators(beta: f64, q: &[f64], th: &[f64]) -> Vec<f64> {
    let k = th.len();
    let mut d = vec![0.0; k + 1];
    d[k] = 1.0 - beta * (1.0 - q[k]);
    for a in (0..k).rev() {
        d[a] = d[a + 1] - beta * th[a] * (q[a + 1] - q[a]);
    }
    d
}

fn rsb_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rsb"))
}

fn domain_guard() -> Outcome {
    let spec = QuadratureSpec::with_nodes(24);
    let mut rng = substream(99, 3);
    let (mut guarded, mut finite, mut bad) = (0, 0, 0);
    for i in 0..300 {
        let k = i % 3;
        let beta = 0.5 + 4.5 * rng.random::<f64>();
        let hp = HopfieldParams::new(beta, 0.2 * rng.random::<f64>()).unwrap();
        let q = sorted(&mut rng, 0.0, 1.0, k + 1);
        let th = thetas(&mut rng, k);
        let d = q_denominators(beta, &q, &th);
        let a = RsbAnsatz::hopfield(rng.random(), q, vec![0.5; k + 1], th);
        let pressure = hop_pressure_krsb(&hp, &a, &spec);
        let map = hop_sce_krsb(&hp, &a, &spec);
        if d.iter().any(|x| *x <= 0.0) {
            let both = matches!(pressure, Err(RsbError::SusceptibilityDivergence { .. }))
                && matches!(map, Err(RsbError::SusceptibilityDivergence { .. }));
            if both {
                guarded += 1;
            } else {
                bad += 1;
            }
        } else if pressure.as_ref().is_ok_and(|p| p.is_finite()) {
            finite += 1;
        } else {
            bad += 1;
        }
    }
    let out = rsb_bin()
        .args(["sweep", "--model", "hopfield", "--k", "0", "--alpha", "0.05", "--sweep", "beta=0.5:4:8"])
        .output();
    let (csv_ok, csv_note) = match out {
        Ok(o) if o.status.success() => {
            let text = String::from_utf8_lossy(&o.stdout);
            let false_rows = text.lines().skip(1).filter(|l| l.ends_with(",false")).count();
            let nan = text.to_ascii_lowercase().contains("nan");
            (false_rows > 0 && !nan, format!("sweep: {false_rows} converged=false rows, NaN present: {nan}"))
        }
        Ok(o) => (false, format!("sweep exited with {:?}", o.status.code())),
        Err(e) => (false, format!("sweep failed to start: {e}")),
    };
    Outcome {
        pass: bad == 0 && guarded > 0 && csv_ok,
        detail: format!("{guarded} divergent points raised, {finite} valid points finite, {bad} violations; {csv_note}"),
    }
}

fn determinism() -> Outcome {
    let runs: [&[&str]; 2] = [
        &["verify", "--suite", "enumeration", "--n", "8", "--samples", "20", "--seed", "7"],
        &["sweep", "--model", "sk", "--k", "1", "--theta", "0.5", "--j0", "0.4", "--nodes", "24", "--sweep", "beta=0.5:2:3", "--sweep", "j0=0:1:2", "--jobs", "2"],
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for args in runs {
        let a = rsb_bin().args(args).output();
        let b = rsb_bin().args(args).output();
        let same = match (&a, &b) {
            (Ok(a), Ok(b)) => a.status.success() && a.stdout == b.stdout && !a.stdout.is_empty(),
            _ => false,
        };
        pass &= same;
        notes.push(format!("{} {}", args[0], if same { "identical" } else { "DIFFERENT or failed" }));
    }
    Outcome { pass, detail: notes.join(", ") }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("collapse hierarchy", collapse),
        ("closed-form anchoring at K = 1, 2", closed_forms),
        ("fixed points are stationary", stationarity),
        ("finite-N enumeration vs RS", enumeration),
        ("interpolation derivative identities", lemmas),
        ("Curie-Weiss limit and onset", curie_weiss),
        ("Monte Carlo retrieval overlap", retrieval_monte_carlo),
        ("susceptibility domain guard", domain_guard),
        ("determinism of verify and sweep", determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failures += 1;
        }
        println!("criterion {}: {} - {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
