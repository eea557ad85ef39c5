//! Damped fixed-point iteration, finite-difference stationarity checks and
//! golden-section search over the Parisi parameters.

use serde::{Deserialize, Serialize};

use crate::hopfield::{hop_pressure_krsb, hop_sce_krsb, with_closed_form_ps};
use crate::sk::{sk_pressure_krsb, sk_sce_krsb};
use crate::types::{ModelParams, QuadratureSpec, Result, RsbAnsatz, RsbError, SolveReport};

pub const DEFAULT_DAMPING: f64 = 0.5;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;
/// Finite-difference step used for the stationarity gradient in reports.
pub const STATIONARITY_STEP: f64 = 1e-5;

/// Iteration controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub projection: bool,
    /// Anderson mixing depth; 0 keeps plain damped iteration.
    pub anderson: usize,
    /// Initial ansatze; empty means the two default starts.
    pub multistart: Vec<RsbAnsatz>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: DEFAULT_DAMPING,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            projection: true,
            anderson: 0,
            multistart: Vec::new(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(RsbError::InvalidParameter(format!(
                "damping {} outside (0, 1]",
                self.damping
            )));
        }
        if !(self.tol > 0.0) {
            return Err(RsbError::InvalidParameter(format!("tol {} must be positive", self.tol)));
        }
        Ok(())
    }
}

/// Least-squares non-decreasing fit (pool adjacent violators).
pub fn pava(v: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

/// Project onto the monotone box: isotonic fit, then clamp.
pub fn project(a: &RsbAnsatz) -> RsbAnsatz {
    let qs = pava(&a.qs).into_iter().map(|q| q.clamp(0.0, 1.0)).collect();
    let ps = pava(&a.ps).into_iter().map(|p| p.max(0.0)).collect();
    RsbAnsatz { m: a.m.clamp(-1.0, 1.0), qs, ps, ..a.clone() }
}

fn displacement(a: &RsbAnsatz, b: &RsbAnsatz) -> f64 {
    a.free_parameters()
        .iter()
        .zip(b.free_parameters())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn mix(x: &RsbAnsatz, fx: &RsbAnsatz, g: f64) -> RsbAnsatz {
    let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(u, v)| (1.0 - g) * u + g * v).collect()
    };
    RsbAnsatz {
        k: x.k,
        m: (1.0 - g) * x.m + g * fx.m,
        qs: lerp(&x.qs, &fx.qs),
        ps: if fx.ps.len() == x.ps.len() { lerp(&x.ps, &fx.ps) } else { fx.ps.clone() },
        thetas: x.thetas.clone(),
    }
}

/// Iterate `x <- (1-g) x + g map(x)` until the undamped displacement `|map(x) - x|`
/// falls below `tol`.
///
/// With `anderson > 0` the step is replaced by Anderson mixing over the last
/// `anderson` residuals of (m, q). An extrapolated iterate the map rejects is
/// replaced by the plain damped step and the history is cleared.
pub fn damped_fixed_point<F>(mut map: F, init: &RsbAnsatz, opts: &SolverOptions) -> Result<SolveReport>
where
    F: FnMut(&RsbAnsatz) -> Result<RsbAnsatz>,
{
    opts.validate()?;
    let tidy = |a: RsbAnsatz| if opts.projection { project(&a) } else { a };
    let mut x = tidy(init.clone());
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut mixer = Anderson::new(opts.anderson, opts.damping);
    // plain damped step to fall back on if an extrapolated iterate is rejected
    let mut safe: Option<RsbAnsatz> = None;
    let mut it = 0;
    while it < opts.max_iter {
        let fx = match map(&x) {
            Ok(v) => v,
            Err(e) => match safe.take() {
                Some(s) => {
                    mixer.clear();
                    x = s;
                    continue;
                }
                None => {
                    return Err(RsbError::DomainAtIterate { iterate: Box::new(x), source: Box::new(e) })
                }
            },
        };
        it += 1;
        residual = displacement(&x, &fx);
        history.push(residual);
        let plain = tidy(mix(&x, &fx, opts.damping));
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok(SolveReport {
                ansatz: plain,
                pressure: f64::NAN,
                residual,
                stationarity: vec![],
                iterations: it,
                converged: true,
                residual_history: history,
            });
        }
        x = match mixer.step(&x, &fx) {
            Some(v) => {
                let mut next = plain.clone();
                next.m = v[0];
                next.qs.copy_from_slice(&v[1..]);
                safe = Some(plain);
                tidy(next)
            }
            None => {
                safe = None;
                plain
            }
        };
    }
    Ok(SolveReport {
        ansatz: x,
        pressure: f64::NAN,
        residual,
        stationarity: vec![],
        iterations: history.len(),
        converged: false,
        residual_history: history,
    })
}

/// Type-II Anderson mixing on the free parameters.
struct Anderson {
    depth: usize,
    damping: f64,
    xs: Vec<Vec<f64>>,
    gs: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize, damping: f64) -> Self {
        Anderson { depth, damping, xs: Vec::new(), gs: Vec::new() }
    }

    fn clear(&mut self) {
        self.xs.clear();
        self.gs.clear();
    }

    /// Next iterate, or `None` while there is no history to extrapolate from.
    fn step(&mut self, x: &RsbAnsatz, fx: &RsbAnsatz) -> Option<Vec<f64>> {
        if self.depth == 0 {
            return None;
        }
        let xv = x.free_parameters();
        let g: Vec<f64> = fx.free_parameters().iter().zip(&xv).map(|(f, x)| f - x).collect();
        self.xs.push(xv.clone());
        self.gs.push(g.clone());
        if self.xs.len() > self.depth + 1 {
            self.xs.remove(0);
            self.gs.remove(0);
        }
        let cols = self.xs.len() - 1;
        if cols == 0 {
            return None;
        }
        let n = xv.len();
        let dg = nalgebra::DMatrix::from_fn(n, cols, |r, c| self.gs[c + 1][r] - self.gs[c][r]);
        let rhs = nalgebra::DVector::from_column_slice(&g);
        let gamma = dg.svd(true, true).solve(&rhs, 1e-14).ok()?;
        let b = self.damping;
        let next: Vec<f64> = (0..n)
            .map(|r| {
                let corr: f64 = (0..cols)
                    .map(|c| {
                        let dx = self.xs[c + 1][r] - self.xs[c][r];
                        let dgr = self.gs[c + 1][r] - self.gs[c][r];
                        gamma[c] * (dx + b * dgr)
                    })
                    .sum();
                xv[r] + b * g[r] - corr
            })
            .collect();
        if next.iter().all(|v| v.is_finite()) {
            Some(next)
        } else {
            self.clear();
            None
        }
    }
}

/// Central differences of `pressure` in m and each q, in serialization order.
///
/// If a stencil point is rejected (domain or ordering), the step is halved, up to
/// eight times. If that still fails, a second-order one-sided stencil is tried
/// before a `DomainError` is returned. A q tied to its neighbours (within 1e-8) whose
/// own stencils all fail reports the derivative along the whole tied block instead.
pub fn stationarity_check<F>(mut pressure: F, a: &RsbAnsatz, step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&RsbAnsatz) -> Result<f64>,
{
    let n = a.qs.len() + 1;
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let found = directional(&mut pressure, a, &[i], step).or_else(|| {
            // a tied block (a collapsed level, or qs pinned at 0) only moves as a whole
            let block = tied_block(a, i);
            (block.len() > 1).then(|| directional(&mut pressure, a, &block, step)).flatten()
        });
        match found {
            Some(g) => grad.push(g),
            None => {
                return Err(RsbError::DomainError(format!(
                    "stencil for parameter {i} leaves the pressure domain"
                )))
            }
        }
    }
    Ok(grad)
}

const TIE_TOL: f64 = 1e-8;

/// Free-parameter indices of the qs tied to parameter `i` (just `[i]` for m).
fn tied_block(a: &RsbAnsatz, i: usize) -> Vec<usize> {
    if i == 0 {
        return vec![0];
    }
    let q = &a.qs;
    let (mut lo, mut hi) = (i - 1, i - 1);
    while lo > 0 && (q[lo - 1] - q[lo]).abs() <= TIE_TOL {
        lo -= 1;
    }
    while hi + 1 < q.len() && (q[hi + 1] - q[hi]).abs() <= TIE_TOL {
        hi += 1;
    }
    (lo..=hi).map(|j| j + 1).collect()
}

fn shifted(a: &RsbAnsatz, idx: &[usize], delta: f64) -> RsbAnsatz {
    let mut b = a.clone();
    for &i in idx {
        if i == 0 {
            b.m += delta;
        } else {
            b.qs[i - 1] += delta;
        }
    }
    b
}

/// Derivative along the sum of the unit vectors in `idx`: central with step halving,
/// then a second-order one-sided stencil for parameters on a domain or ordering
/// boundary, where the pressure is still smooth.
fn directional<F>(pressure: &mut F, a: &RsbAnsatz, idx: &[usize], step: f64) -> Option<f64>
where
    F: FnMut(&RsbAnsatz) -> Result<f64>,
{
    let mut h = step;
    for _ in 0..=8 {
        if let (Ok(fp), Ok(fm)) = (pressure(&shifted(a, idx, h)), pressure(&shifted(a, idx, -h))) {
            return Some((fp - fm) / (2.0 * h));
        }
        h /= 2.0;
    }
    let f0 = pressure(a).ok()?;
    for dir in [1.0, -1.0] {
        let f1 = pressure(&shifted(a, idx, dir * step));
        let f2 = pressure(&shifted(a, idx, 2.0 * dir * step));
        if let (Ok(f1), Ok(f2)) = (f1, f2) {
            return Some(dir * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step));
        }
    }
    None
}

/// Result of a search over the Parisi parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaExtremum {
    pub thetas: Vec<f64>,
    pub value: f64,
    /// True if the objective was flat over some coordinate's bracket.
    pub degenerate: bool,
    /// Second differences at the optimum per coordinate: negative for a maximum,
    /// positive for a minimum.
    pub curvature: Vec<f64>,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn golden_section<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    maximize: bool,
) -> Result<f64> {
    let sgn = if maximize { 1.0 } else { -1.0 };
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = sgn * f(x1)?;
    let mut f2 = sgn * f(x2)?;
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = sgn * f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = sgn * f(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Coordinate-wise search for a stationary point of `objective` over the thetas.
///
/// Each coordinate is scanned on a coarse grid inside its bracket (narrowed to keep
/// the thetas strictly increasing); an interior maximum is refined by golden section
/// if one exists, otherwise an interior minimum. Coordinates are cycled until the
/// largest move is below `tol`.
pub fn extremize_theta<F>(mut objective: F, bracket: &[(f64, f64)], tol: f64) -> Result<ThetaExtremum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if bracket.is_empty() {
        return Err(RsbError::BracketViolation("no theta coordinates to search".into()));
    }
    for &(lo, hi) in bracket {
        if !(lo >= crate::types::THETA_MIN && hi <= 0.99 && lo < hi) {
            return Err(RsbError::BracketViolation(format!(
                "bracket ({lo}, {hi}) must satisfy 0.01 <= lo < hi <= 0.99"
            )));
        }
    }
    if bracket.windows(2).any(|w| w[0].0 >= w[1].0 || w[0].1 >= w[1].1) {
        return Err(RsbError::BracketViolation("brackets must be increasing".into()));
    }
    if !(tol > 0.0) {
        return Err(RsbError::InvalidParameter("tol must be positive".into()));
    }
    let n = bracket.len();
    let gap = 1e-3;
    let mut thetas: Vec<f64> = bracket.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    // keep the starting point strictly increasing
    for i in 1..n {
        if thetas[i] <= thetas[i - 1] {
            thetas[i] = (thetas[i - 1] + bracket[i].1) / 2.0;
        }
    }
    let mut degenerate = false;
    for _cycle in 0..50 {
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let lo = if i > 0 { bracket[i].0.max(thetas[i - 1] + gap) } else { bracket[i].0 };
            let hi = if i + 1 < n { bracket[i].1.min(thetas[i + 1] - gap) } else { bracket[i].1 };
            if lo >= hi {
                continue;
            }
            let mut eval = |x: f64| -> Result<f64> {
                let mut t = thetas.clone();
                t[i] = x;
                objective(&t)
            };
            let grid: Vec<f64> = (0..=10).map(|j| lo + (hi - lo) * j as f64 / 10.0).collect();
            let vals = grid.iter().map(|&x| eval(x)).collect::<Result<Vec<f64>>>()?;
            let (imax, vmax) = argbest(&vals, |a, b| a > b);
            let (imin, vmin) = argbest(&vals, |a, b| a < b);
            let scale = 1.0 + vmax.abs().max(vmin.abs());
            let new = if vmax - vmin <= 1e-13 * scale {
                degenerate = true;
                0.5 * (lo + hi)
            } else {
                let interior = |j: usize| j > 0 && j < grid.len() - 1;
                let (j, maximize) = if interior(imax) || !interior(imin) {
                    (imax, true)
                } else {
                    (imin, false)
                };
                let a = grid[j.saturating_sub(1)];
                let b = grid[(j + 1).min(grid.len() - 1)];
                golden_section(&mut eval, a, b, tol / 4.0, maximize)?
            };
            moved = moved.max((new - thetas[i]).abs());
            thetas[i] = new;
        }
        if moved <= tol {
            break;
        }
    }
    let value = objective(&thetas)?;
    let mut curvature = Vec::with_capacity(n);
    for i in 0..n {
        let h = (10.0 * tol).max(1e-3);
        let mut tp = thetas.clone();
        let mut tm = thetas.clone();
        tp[i] += h;
        tm[i] -= h;
        let (fp, fm) = (objective(&tp), objective(&tm));
        curvature.push(match (fp, fm) {
            (Ok(fp), Ok(fm)) => (fp - 2.0 * value + fm) / (h * h),
            _ => f64::NAN,
        });
    }
    Ok(ThetaExtremum { thetas, value, degenerate, curvature })
}

fn argbest(v: &[f64], better: impl Fn(f64, f64) -> bool) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if better(x, best.1) {
            best = (i, x);
        }
    }
    best
}

fn linspace(lo: f64, hi: f64, n: usize, single: f64) -> Vec<f64> {
    if n == 1 {
        return vec![single];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Default starts: high-overlap retrieval-like, low-overlap, and (for K >= 1) a
/// retrieval start with every q at 0.99.
///
/// For RS the high start takes q = 0.99 and the low start q = 0.01. The third start
/// matters for Hopfield, where a spread of qs at high m yields a large p_1 whose noise
/// destroys the retrieval state before the iteration can settle.
pub fn default_initial_ansatze(params: &ModelParams, thetas: &[f64]) -> Vec<RsbAnsatz> {
    let n = thetas.len() + 1;
    let mut starts =
        vec![(0.999, linspace(0.5, 0.99, n, 0.99)), (0.0, linspace(0.01, 0.3, n, 0.01))];
    if n > 1 {
        starts.push((0.999, vec![0.99; n]));
    }
    starts
        .into_iter()
        .map(|(m, qs)| match params {
            ModelParams::Sk(_) => RsbAnsatz::sk(m, qs, thetas.to_vec()),
            ModelParams::Hopfield(_) => {
                RsbAnsatz::hopfield(m, qs, vec![0.0; n], thetas.to_vec())
            }
        })
        .collect()
}

/// Pressure of `a`; for Hopfield the ps are first replaced by their closed form.
pub fn model_pressure(params: &ModelParams, a: &RsbAnsatz, spec: &QuadratureSpec) -> Result<f64> {
    match params {
        ModelParams::Sk(p) => Ok(sk_pressure_krsb(p, a, spec)?.pressure),
        ModelParams::Hopfield(p) => hop_pressure_krsb(p, &with_closed_form_ps(p, a)?, spec),
    }
}

/// One application of the model's self-consistency map.
pub fn model_map(params: &ModelParams, a: &RsbAnsatz, spec: &QuadratureSpec) -> Result<RsbAnsatz> {
    match params {
        ModelParams::Sk(p) => sk_sce_krsb(p, a, spec),
        ModelParams::Hopfield(p) => hop_sce_krsb(p, &with_closed_form_ps(p, a)?, spec),
    }
}

/// Solve from `init`, then attach pressure and stationarity gradient.
pub fn solve_model(
    params: &ModelParams,
    init: &RsbAnsatz,
    spec: &QuadratureSpec,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let start = match params {
        ModelParams::Hopfield(p) => with_closed_form_ps(p, init)?,
        ModelParams::Sk(_) => init.clone(),
    };
    let mut report = damped_fixed_point(|a| model_map(params, a, spec), &start, opts)?;
    if let ModelParams::Hopfield(p) = params {
        report.ansatz = with_closed_form_ps(p, &report.ansatz)?;
    }
    report.pressure = model_pressure(params, &report.ansatz, spec)?;
    if report.converged {
        report.stationarity = stationarity_check(
            |a| model_pressure(params, a, spec),
            &report.ansatz,
            STATIONARITY_STEP,
        )
        .unwrap_or_default();
    }
    Ok(report)
}

/// Solve from every start (the options' multistart list, or the defaults).
pub fn solve_multistart(
    params: &ModelParams,
    thetas: &[f64],
    spec: &QuadratureSpec,
    opts: &SolverOptions,
) -> Vec<Result<SolveReport>> {
    let starts = if opts.multistart.is_empty() {
        default_initial_ansatze(params, thetas)
    } else {
        opts.multistart.clone()
    };
    starts.iter().map(|s| solve_model(params, s, spec, opts)).collect()
}
