//! Named verification suites: structural identities, stationarity of solved fixed
//! points, and finite-size oracle comparisons. Each suite returns a list of checks.

use rand::Rng;
use serde::Serialize;

use crate::hopfield::{
    hop_pressure_krsb, hop_pressure_rs, hop_sce_krsb, hop_sce_rs,
    with_closed_form_ps,
};
use crate::oracle::{
    enumerate_hopfield_pressure, enumerate_sk_pressure, interpolation_derivative_check,
    metropolis_run, overlap_histogram, overlap_histogram_pooled, substream, Derivative,
    DisorderSample, InitPolicy, InterpolationPoint, LemmaModel, LemmaOptions, SkDisorderSample,
};
use crate::sk::{sk_pressure_krsb, sk_pressure_rs, sk_sce_krsb, sk_sce_rs};
use crate::solver::{default_initial_ansatze, solve_model, solve_multistart, SolverOptions};
use crate::types::{
    HopfieldParams, ModelParams, QuadratureSpec, Result, RsbAnsatz, RsbError, SkParams,
};

/// One line of a verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= bound` (NaN fails).
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, pass: value <= bound }
    }

    /// Passes when `value >= bound`.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, pass: value >= bound }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Collapse,
    Stationarity,
    Enumeration,
    Lemmas,
    Histogram,
}

impl std::str::FromStr for Suite {
    type Err = RsbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collapse" => Ok(Suite::Collapse),
            "stationarity" => Ok(Suite::Stationarity),
            "enumeration" => Ok(Suite::Enumeration),
            "lemmas" => Ok(Suite::Lemmas),
            "histogram" => Ok(Suite::Histogram),
            other => Err(RsbError::InvalidParameter(format!("unknown suite '{other}'"))),
        }
    }
}

/// Suite sizes; `None` picks the suite's own default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyConfig {
    pub n: Option<usize>,
    pub samples: Option<usize>,
    pub sweeps: Option<usize>,
    pub nodes: Option<usize>,
    pub seed: u64,
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Result<Vec<Check>> {
    match suite {
        Suite::Collapse => collapse_suite(cfg),
        Suite::Stationarity => stationarity_suite(cfg),
        Suite::Enumeration => enumeration_suite(cfg),
        Suite::Lemmas => lemmas_suite(cfg),
        Suite::Histogram => histogram_suite(cfg),
    }
}

/// Fixed-width table with a trailing summary line.
pub fn format_table(checks: &[Check]) -> String {
    let mut out = format!("{:<56} {:>15} {:>15}  result\n", "check", "measured", "bound");
    for c in checks {
        out.push_str(&format!(
            "{:<56} {:>15.6e} {:>15.6e}  {}\n",
            c.name,
            c.value,
            c.bound,
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    let passed = checks.iter().filter(|c| c.pass).count();
    out.push_str(&format!("{passed}/{} checks passed\n", checks.len()));
    out
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Thetas `t * i / k` for i = 1..=k.
fn theta_ladder(t: f64, k: usize) -> Vec<f64> {
    (1..=k).map(|i| t * i as f64 / k as f64).collect()
}

fn collapse_nodes(k: usize, cfg: &VerifyConfig) -> QuadratureSpec {
    let default = match k {
        1 => 40,
        2 => 24,
        _ => 14,
    };
    QuadratureSpec::with_nodes(cfg.nodes.unwrap_or(default))
}

fn sorted_uniform(rng: &mut impl Rng, lo: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| lo + (1.0 - lo) * rng.random::<f64>()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

fn merged(qs: &[f64], a: usize) -> Vec<f64> {
    let mut v = qs.to_vec();
    v[a] = v[a - 1];
    v
}

fn removed<T: Clone>(v: &[T], idx: usize) -> Vec<T> {
    let mut out = v.to_vec();
    out.remove(idx);
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Merging two adjacent levels must reproduce the level below, for the pressure and
/// for the self-consistency map; K = 1 with equal qs must reproduce the RS closed forms.
pub fn collapse_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let betas = grid(0.5, 2.5, 5);
    let ts = grid(0.2, 0.8, 5);
    let mut checks = Vec::new();
    for k in 1..=3usize {
        let spec = collapse_nodes(k, cfg);
        let mut sk_err = 0.0_f64;
        let mut hop_err = 0.0_f64;
        for (bi, &beta) in betas.iter().enumerate() {
            for (ti, &t) in ts.iter().enumerate() {
                let thetas = theta_ladder(t, k);
                let mut rng = substream(cfg.seed, (k * 100 + bi * 10 + ti) as u64);
                let sk = SkParams::new(beta, 0.7, 1.0)?;
                let m: f64 = rng.random();
                let base = sorted_uniform(&mut rng, 0.0, k + 1);
                let hp = HopfieldParams::new(beta, 0.05)?;
                // every q >= 1 - 0.9/beta keeps all Q_a >= 1 - beta (1 - q_1) >= 0.1,
                // merged ansatze included
                let hq = sorted_uniform(&mut rng, (1.0 - 0.9 / beta).max(0.0), k + 1);
                // retrieval-like magnetization keeps the mapped qs inside the domain too
                let hm = 0.8 + 0.2 * rng.random::<f64>();
                for a in 1..=k {
                    // SK
                    let full = RsbAnsatz::sk(m, merged(&base, a), thetas.clone());
                    let low = RsbAnsatz::sk(m, removed(&full.qs, a), removed(&thetas, a - 1));
                    let d = (sk_pressure_krsb(&sk, &full, &spec)?.pressure
                        - sk_pressure_krsb(&sk, &low, &spec)?.pressure)
                        .abs();
                    let fm = sk_sce_krsb(&sk, &full, &spec)?;
                    let lm = sk_sce_krsb(&sk, &low, &spec)?;
                    let dm = (fm.m - lm.m).abs().max(max_abs_diff(&removed(&fm.qs, a), &lm.qs));
                    let split = (fm.qs[a] - fm.qs[a - 1]).abs();
                    sk_err = sk_err.max(d).max(dm).max(split);
                    // Hopfield, ps from their closed form
                    let full = with_closed_form_ps(
                        &hp,
                        &RsbAnsatz::hopfield(hm, merged(&hq, a), vec![0.0; k + 1], thetas.clone()),
                    )?;
                    let low = with_closed_form_ps(
                        &hp,
                        &RsbAnsatz::hopfield(hm, removed(&full.qs, a), vec![0.0; k], removed(&thetas, a - 1)),
                    )?;
                    let d = (hop_pressure_krsb(&hp, &full, &spec)? - hop_pressure_krsb(&hp, &low, &spec)?).abs();
                    let fm = hop_sce_krsb(&hp, &full, &spec)?;
                    let lm = hop_sce_krsb(&hp, &low, &spec)?;
                    let dm = (fm.m - lm.m)
                        .abs()
                        .max(max_abs_diff(&removed(&fm.qs, a), &lm.qs))
                        .max(max_abs_diff(&removed(&fm.ps, a), &lm.ps));
                    hop_err = hop_err.max(d).max(dm);
                }
                if k == 1 {
                    // equal qs against the RS closed forms
                    let q = base[0];
                    let full = RsbAnsatz::sk(m, vec![q, q], thetas.clone());
                    let rs = sk_pressure_rs(&sk, m, q, &spec)?.pressure;
                    let (rm, rq) = sk_sce_rs(&sk, m, q, &spec)?;
                    let fm = sk_sce_krsb(&sk, &full, &spec)?;
                    let e = (sk_pressure_krsb(&sk, &full, &spec)?.pressure - rs)
                        .abs()
                        .max((fm.m - rm).abs())
                        .max(max_abs_diff(&fm.qs, &[rq, rq]));
                    sk_err = sk_err.max(e);
                    let q = hq[0];
                    let full = with_closed_form_ps(
                        &hp,
                        &RsbAnsatz::hopfield(hm, vec![q, q], vec![0.0; 2], thetas.clone()),
                    )?;
                    let pp = full.ps[0];
                    let rs = hop_pressure_rs(&hp, hm, q, pp, &spec)?;
                    let (rm, rq, _) = hop_sce_rs(&hp, hm, q, &spec)?;
                    // the K-level map reports p at its output q
                    let rp = beta * rq / (1.0 - beta * (1.0 - rq)).powi(2);
                    let fm = hop_sce_krsb(&hp, &full, &spec)?;
                    let e = (hop_pressure_krsb(&hp, &full, &spec)? - rs)
                        .abs()
                        .max((fm.m - rm).abs())
                        .max(max_abs_diff(&fm.qs, &[rq, rq]))
                        .max(max_abs_diff(&fm.ps, &[rp, rp]));
                    hop_err = hop_err.max(e);
                }
            }
        }
        checks.push(Check::at_most(format!("collapse sk k={k} (5x5 beta-theta grid)"), sk_err, 1e-10));
        checks.push(Check::at_most(format!("collapse hopfield k={k} (5x5 beta-theta grid)"), hop_err, 1e-10));
    }
    Ok(checks)
}

/// Parameter points for the stationarity suite.
pub fn stationarity_points() -> (Vec<SkParams>, Vec<HopfieldParams>) {
    let sk = [
        (0.5, 0.0),
        (0.8, 0.5),
        (1.2, 0.0),
        (1.2, 1.0),
        (1.5, 0.5),
        (1.5, 1.5),
        (2.0, 0.0),
        (2.0, 1.0),
        (2.5, 0.3),
        (3.0, 1.2),
    ]
    .iter()
    .map(|&(b, j0)| SkParams { beta: b, j0, j: 1.0 })
    .collect();
    let hop = [
        (0.5, 0.05),
        (1.5, 0.02),
        (1.5, 0.05),
        (2.0, 0.02),
        (2.0, 0.05),
        (2.0, 0.1),
        (2.5, 0.05),
        (3.0, 0.03),
        (3.0, 0.08),
        (4.0, 0.05),
    ]
    .iter()
    .map(|&(b, a)| HopfieldParams { beta: b, alpha: a })
    .collect();
    (sk, hop)
}

fn stationarity_thetas(k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![0.5],
        _ => theta_ladder(0.7, k).iter().map(|t| t * 0.9 + 0.05).collect(),
    }
}

/// Largest stationarity component over the converged branches of one solve, and the
/// number of converged branches.
///
/// Each default start is iterated undamped first, which is several times faster near
/// marginal points, and again at the default damping if that fails. Fixed points do
/// not depend on the damping.
pub fn max_stationarity(params: &ModelParams, thetas: &[f64], spec: &QuadratureSpec) -> (f64, usize) {
    let fast = SolverOptions { anderson: 5, ..SolverOptions::default() };
    let mut worst = 0.0_f64;
    let mut converged = 0;
    for init in default_initial_ansatze(params, thetas) {
        let report = match solve_model(params, &init, spec, &fast) {
            Ok(r) if r.converged => Ok(r),
            _ => solve_model(params, &init, spec, &SolverOptions::default()),
        };
        if let Ok(r) = report {
            if r.converged {
                converged += 1;
                let g = if r.stationarity.is_empty() {
                    f64::NAN
                } else {
                    r.stationarity.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
                };
                worst = if g.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(g) };
            }
        }
    }
    (if converged == 0 { f64::NAN } else { worst }, converged)
}

/// Every converged fixed point must be a stationary point of the implemented pressure.
pub fn stationarity_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let (sk, hop) = stationarity_points();
    let mut checks = Vec::new();
    for k in 0..=2usize {
        // 60 nodes per level keeps the K = 2 tensor grid affordable
        let spec = QuadratureSpec::with_nodes(cfg.nodes.unwrap_or(if k == 0 { 80 } else { 60 }));
        let thetas = stationarity_thetas(k);
        for p in &sk {
            let (g, c) = max_stationarity(&ModelParams::Sk(*p), &thetas, &spec);
            checks.push(Check::at_most(
                format!("stationarity sk k={k} beta={} j0={} ({c} branches)", p.beta, p.j0),
                g,
                1e-5,
            ));
        }
        for p in &hop {
            let (g, c) = max_stationarity(&ModelParams::Hopfield(*p), &thetas, &spec);
            checks.push(Check::at_most(
                format!("stationarity hopfield k={k} beta={} alpha={} ({c} branches)", p.beta, p.alpha),
                g,
                1e-5,
            ));
        }
    }
    Ok(checks)
}

/// Exact enumeration against the RS theory at high temperature.
pub fn enumeration_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let n = cfg.n.unwrap_or(12);
    let samples = cfg.samples.unwrap_or(200);
    let mut checks = Vec::new();
    let p = SkParams::new(0.3, 0.0, 1.0)?;
    let (mean, se) = enumerate_sk_pressure(n, &p, samples, cfg.seed)?;
    let theory = std::f64::consts::LN_2 + 0.3 * 0.3 / 4.0;
    checks.push(Check::at_most(
        format!("enumeration sk n={n} samples={samples} beta=0.3 vs log2+beta^2/4"),
        (mean - theory).abs(),
        3.0 * se + 0.02,
    ));
    let (one, _) = enumerate_sk_pressure(1, &p, 3, cfg.seed)?;
    checks.push(Check::at_most("enumeration sk n=1 equals log 2", (one - std::f64::consts::LN_2).abs(), 0.0));

    let hn = 14;
    let hp = HopfieldParams::new(0.5, 1.0 / hn as f64)?;
    let (hmean, hse) = enumerate_hopfield_pressure(hn, &hp, samples, cfg.seed)?;
    let spec = QuadratureSpec::with_nodes(cfg.nodes.unwrap_or(crate::types::DEFAULT_NODES));
    let best = solve_multistart(&ModelParams::Hopfield(hp), &[], &spec, &SolverOptions::default())
        .into_iter()
        .flatten()
        .filter(|r| r.converged)
        .map(|r| r.pressure)
        .fold(f64::NAN, f64::max);
    checks.push(Check::at_most(
        format!("enumeration hopfield n={hn} p=1 beta=0.5 vs RS solve"),
        (hmean - best).abs(),
        3.0 * hse + 0.03,
    ));
    let h0 = HopfieldParams::new(0.0, 0.2)?;
    let (z, _) = enumerate_hopfield_pressure(10, &h0, 3, cfg.seed)?;
    checks.push(Check::at_most("enumeration hopfield beta=0 equals log 2", (z - std::f64::consts::LN_2).abs(), 0.0));
    Ok(checks)
}

/// Interpolation derivative identities checked by common-random-number differences.
pub fn lemmas_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let n = cfg.n.unwrap_or(6);
    let samples = cfg.samples.unwrap_or(5000);
    let seed = cfg.seed;
    let opts = LemmaOptions::default();
    let mut checks = Vec::new();

    let p = SkParams::new(1.3, 0.8, 1.0)?;
    let analytic = InterpolationPoint::new(0.0, 0.4, vec![]);
    let r = interpolation_derivative_check(n, LemmaModel::Sk(p), &analytic, Derivative::W, 1, seed, &opts)?;
    let exact = 1.3 * 0.8 * (1.3_f64 * 0.8 * 0.4).tanh();
    checks.push(Check::at_most(
        "lemma sk t=0 w-derivative vs beta*J0*tanh(beta*J0*w)",
        (r.fd_lhs - exact).abs().max((r.bracket_rhs - exact).abs()),
        1e-10,
    ));

    let sk = LemmaModel::Sk(SkParams::new(1.0, 0.5, 1.0)?);
    let mut rs = InterpolationPoint::new(0.5, 0.3, vec![]);
    rs.x = vec![1.0];
    for (label, which) in [("t", Derivative::T), ("x1", Derivative::X(1)), ("w", Derivative::W)] {
        let r = interpolation_derivative_check(n, sk, &rs, which, samples, seed, &opts)?;
        checks.push(Check::at_most(format!("lemma sk rs d/d{label} relative difference"), r.rel_diff, 1e-2));
    }
    let mut k1 = InterpolationPoint::new(0.5, 0.3, vec![0.5]);
    k1.x = vec![0.6, 0.4];
    for (label, which) in
        [("t", Derivative::T), ("x1", Derivative::X(1)), ("x2", Derivative::X(2)), ("w", Derivative::W)]
    {
        let r = interpolation_derivative_check(n, sk, &k1, which, samples, seed, &opts)?;
        checks.push(Check::at_most(format!("lemma sk 1rsb d/d{label} relative difference"), r.rel_diff, 1e-2));
    }

    // Hopfield: statistical bound, three standard errors of the difference
    let hop = LemmaModel::Hopfield(HopfieldParams::new(1.0, 0.34)?);
    let mut hp = InterpolationPoint::new(0.5, 0.3, vec![0.5]);
    hp.x = vec![0.3, 0.4];
    hp.y = vec![0.2, 0.3];
    hp.z = 0.1;
    for (label, which) in [
        ("t", Derivative::T),
        ("x1", Derivative::X(1)),
        ("x2", Derivative::X(2)),
        ("y1", Derivative::Y(1)),
        ("y2", Derivative::Y(2)),
        ("z", Derivative::Z),
        ("w", Derivative::W),
    ] {
        let r = interpolation_derivative_check(n, hop, &hp, which, samples, seed, &opts)?;
        checks.push(Check::at_most(
            format!("lemma hopfield 1rsb d/d{label} |diff| vs 3 se"),
            r.abs_diff,
            3.0 * r.diff_se + 1e-9,
        ));
    }
    Ok(checks)
}

/// Two-replica overlap histograms and a Metropolis sanity check.
pub fn histogram_suite(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let seed = cfg.seed;
    let sweeps = cfg.sweeps.unwrap_or(1000);
    let mut checks = Vec::new();
    let sk = SkParams::new(1.0, 0.0, 1.0)?;

    let free = DisorderSample::Sk(SkDisorderSample::generate(400, &sk, seed, 0));
    let h = overlap_histogram(&free, 0.0, sweeps, 41, InitPolicy::Random, seed)?;
    let (_, sd) = h.moments();
    let clt = 1.0 / 400f64.sqrt();
    checks.push(Check::at_most("histogram beta=0 n=400 mode bin is the one at q=0", (h.mode_bin() as f64 - 20.0).abs(), 0.0));
    checks.push(Check::at_most("histogram beta=0 n=400 |std*sqrt(N) - 1|", (sd / clt - 1.0).abs(), 0.2));
    let r = metropolis_run(&free, 0.0, sweeps, InitPolicy::Random, seed)?;
    checks.push(Check::at_most("metropolis beta=0 |m| vs 3 se", r.overlap_mean.abs(), 3.0 * r.overlap_se));

    let ferro = DisorderSample::Sk(SkDisorderSample::uniform(200, 3.0));
    let h = overlap_histogram(&ferro, 2.0, sweeps.min(400), 40, InitPolicy::Pattern, seed)?;
    checks.push(Check::at_most("histogram ferromagnet mode in top bin", (39.0 - h.mode_bin() as f64).abs(), 0.0));

    let glass = DisorderSample::Sk(SkDisorderSample::generate(300, &SkParams::new(2.0, 0.0, 1.0)?, seed, 0));
    let h = overlap_histogram_pooled(&glass, 2.0, sweeps, 40, InitPolicy::Random, seed, 8)?;
    let (_, sd) = h.moments();
    checks.push(Check::at_least(
        "histogram sk beta=2 n=300 std / (beta=0 std)",
        sd * 300f64.sqrt(),
        3.0,
    ));
    Ok(checks)
}
