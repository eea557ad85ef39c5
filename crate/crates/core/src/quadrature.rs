//! Standard-normal expectations and the nested expectation family
//!
//! ```text
//! N_{K+1} = 2 cosh(g),   g = offset + sum_a c_a h_a
//! N_a     = E_{a+1}[ N_{a+1}^(theta_a / theta_{a+1}) ],   theta_{K+1} = 1
//! ```
//!
//! All cosh powers are handled in the log domain with level-wise max subtraction.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::types::{QuadratureRule, QuadratureSpec, Result, RsbError, THETA_MIN};

/// Discrete approximation of the standard normal law.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub h: Vec<f64>,
    pub w: Vec<f64>,
    pub log_w: Vec<f64>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    fn from_log_weights(h: Vec<f64>, log_w: Vec<f64>) -> Self {
        let mx = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + log_w.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        let log_w: Vec<f64> = log_w.iter().map(|l| l - lse).collect();
        let w = log_w.iter().map(|l| l.exp()).collect();
        NodeSet { h, w, log_w }
    }
}

/// `log(2 cosh x)` without overflow.
#[inline]
pub fn log_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// `log cosh x` as `|x| + log1p(exp(-2|x|)) - log 2`.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    log_2cosh(x) - std::f64::consts::LN_2
}

/// Gauss-Hermite rule for E over N(0,1), cached per node count.
pub fn gauss_hermite(n: usize) -> Arc<NodeSet> {
    cached(QuadratureRule::GaussHermite, n, || gauss_hermite_uncached(n))
}

/// Trapezoid rule on [-L, L] with Gaussian weights, cached per node count.
pub fn trapezoid(n: usize) -> Arc<NodeSet> {
    cached(QuadratureRule::Trapezoid, n, || trapezoid_uncached(n))
}

fn cached(rule: QuadratureRule, n: usize, make: impl FnOnce() -> NodeSet) -> Arc<NodeSet> {
    static CACHE: OnceLock<Mutex<HashMap<(QuadratureRule, usize), Arc<NodeSet>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(s) = cache.lock().unwrap().get(&(rule, n)) {
        return s.clone();
    }
    let s = Arc::new(make());
    cache.lock().unwrap().entry((rule, n)).or_insert(s).clone()
}

/// Orthonormal Hermite values for the probability weight exp(-x^2)/sqrt(pi).
///
/// Returns `(phi_n, phi_{n-1}, log sum_{k<n} phi_k^2)`, with the two values sharing
/// an unknown common scale (only their ratio is meaningful).
fn hermite_orthonormal(x: f64, n: usize) -> (f64, f64, f64) {
    let (mut prev, mut cur) = (0.0_f64, 1.0_f64);
    let mut sum = 1.0_f64;
    let mut log_scale = 0.0_f64;
    for k in 0..n - 1 {
        let bk = (k as f64 / 2.0).sqrt();
        let bk1 = ((k + 1) as f64 / 2.0).sqrt();
        let next = (x * cur - bk * prev) / bk1;
        prev = cur;
        cur = next;
        sum += cur * cur;
        if cur.abs() > 1e100 {
            prev *= 1e-100;
            cur *= 1e-100;
            sum *= 1e-200;
            log_scale += 100.0 * std::f64::consts::LN_10;
        }
    }
    let bn = (n as f64 / 2.0).sqrt();
    let bn1 = ((n - 1) as f64 / 2.0).sqrt();
    let phi_n = (x * cur - bn1 * prev) / bn;
    (phi_n, cur, sum.ln() + 2.0 * log_scale)
}

fn gauss_hermite_uncached(n: usize) -> NodeSet {
    // Golub-Welsch: eigenvalues of the Jacobi matrix are the nodes.
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let mut xs: Vec<f64> = jac.symmetric_eigenvalues().iter().cloned().collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Newton polish, then Christoffel weights in the log domain for full relative accuracy.
    let mut log_w = Vec::with_capacity(n);
    for x in xs.iter_mut() {
        for _ in 0..4 {
            let (pn, pn1, _) = hermite_orthonormal(*x, n);
            let dx = pn / ((2.0 * n as f64).sqrt() * pn1);
            *x -= dx;
            if dx.abs() < 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        log_w.push(-hermite_orthonormal(*x, n).2);
    }
    // Symmetrize to remove rounding asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (xs[j] - xs[i]);
        xs[i] = -x;
        xs[j] = x;
        let l = 0.5 * (log_w[i] + log_w[j]);
        log_w[i] = l;
        log_w[j] = l;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    let h = xs.iter().map(|x| std::f64::consts::SQRT_2 * x).collect();
    NodeSet::from_log_weights(h, log_w)
}

/// Half-width of the trapezoid support for `n` nodes.
///
/// Balances truncation of the Gaussian tail against the discretization error for
/// integrands with poles about 0.5 away from the real axis (coefficients near 3).
pub fn trapezoid_half_width(n: usize) -> f64 {
    (2.0 * (n as f64).ln() - 1.3).max(4.0)
}

fn trapezoid_uncached(n: usize) -> NodeSet {
    let half = trapezoid_half_width(n);
    let dx = 2.0 * half / (n - 1) as f64;
    let h: Vec<f64> = (0..n).map(|i| -half + i as f64 * dx).collect();
    let log_w = h.iter().map(|x| -0.5 * x * x).collect();
    NodeSet::from_log_weights(h, log_w)
}

/// Antithetic Monte Carlo sample of N(0,1) with equal weights.
pub fn monte_carlo_nodes(samples: usize, seed: u64, stream: u64) -> NodeSet {
    let pairs = samples.div_ceil(2).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut h = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let z: f64 = StandardNormal.sample(&mut rng);
        h.push(z);
        h.push(-z);
    }
    let lw = -(h.len() as f64).ln();
    let log_w = vec![lw; h.len()];
    NodeSet::from_log_weights(h, log_w)
}

/// Single-level node set for a spec.
pub fn base_nodes(spec: &QuadratureSpec) -> Result<Arc<NodeSet>> {
    spec.validate()?;
    Ok(match spec.rule {
        QuadratureRule::GaussHermite => gauss_hermite(spec.nodes_per_level),
        QuadratureRule::Trapezoid => trapezoid(spec.nodes_per_level),
    })
}

/// Node sets for `levels` nested levels, falling back to Monte Carlo above the budget.
pub fn level_nodes(spec: &QuadratureSpec, levels: usize) -> Result<Vec<Arc<NodeSet>>> {
    spec.validate()?;
    let points = (spec.nodes_per_level as f64).powi(levels as i32);
    if points <= spec.max_tensor_points as f64 {
        let base = base_nodes(spec)?;
        return Ok(vec![base; levels]);
    }
    if spec.mc_samples == 0 {
        return Err(RsbError::BudgetExceeded { points, budget: spec.max_tensor_points });
    }
    Ok((0..levels)
        .map(|a| Arc::new(monte_carlo_nodes(spec.mc_samples, spec.mc_seed, a as u64)))
        .collect())
}

/// E over h ~ N(0,1) of `f(h)`.
pub fn gauss_expect<F: Fn(f64) -> f64>(f: F, spec: &QuadratureSpec) -> Result<f64> {
    let nodes = base_nodes(spec)?;
    let mut acc = 0.0;
    for (&h, &w) in nodes.h.iter().zip(&nodes.w) {
        let v = f(h);
        if !v.is_finite() {
            return Err(RsbError::NonFiniteIntegrand(h));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Deterministic part plus per-level coefficients of the cosh argument.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldArgument {
    pub offset: f64,
    pub coeffs: Vec<f64>,
}

impl FieldArgument {
    pub fn new(offset: f64, coeffs: Vec<f64>) -> Self {
        FieldArgument { offset, coeffs }
    }

    fn validate(&self, thetas: &[f64]) -> Result<()> {
        if !self.offset.is_finite() {
            return Err(RsbError::RangeViolation(format!("offset {} not finite", self.offset)));
        }
        if self.coeffs.len() != thetas.len() + 1 {
            return Err(RsbError::ShapeMismatch(format!(
                "{} coefficients for {} thetas",
                self.coeffs.len(),
                thetas.len()
            )));
        }
        if let Some(c) = self.coeffs.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(RsbError::RangeViolation(format!("coefficient {c} must be finite and >= 0")));
        }
        check_thetas(thetas)
    }
}

pub(crate) fn check_thetas(thetas: &[f64]) -> Result<()> {
    for &t in thetas {
        if !t.is_finite() || t >= 1.0 {
            return Err(RsbError::RangeViolation(format!("theta = {t} outside (0, 1)")));
        }
        if t < THETA_MIN {
            return Err(RsbError::DomainError(format!(
                "theta = {t} below the supported minimum {THETA_MIN}"
            )));
        }
    }
    if thetas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RsbError::OrderingViolation("thetas must be strictly increasing".into()));
    }
    Ok(())
}

/// Power of tanh(g) in the innermost integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TanhPower {
    None,
    Tanh,
    Tanh2,
}

impl TanhPower {
    fn exponent(self) -> i32 {
        match self {
            TanhPower::None => 0,
            TanhPower::Tanh => 1,
            TanhPower::Tanh2 => 2,
        }
    }
}

/// One telescopic average: innermost power plus an optional squaring level.
///
/// `square_at = Some(a)` with `1 <= a <= K` squares the partial average once levels
/// `a+1..=K+1` have been integrated out (so `Some(a)` with `Tanh` yields `q_a`).
/// `Some(0)` squares after the outermost expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channel {
    pub power: TanhPower,
    pub square_at: Option<usize>,
}

struct Nested<'a> {
    coeffs: &'a [f64],
    ratios: Vec<f64>,
    nodes: Vec<Arc<NodeSet>>,
    channels: &'a [Channel],
    scratch: Vec<Vec<f64>>,
}

impl Nested<'_> {
    /// Fills `out` with the partial averages at level `a` (fields h_1..h_a fixed,
    /// cumulative argument `s`) and returns log N_a.
    fn level(&mut self, a: usize, s: f64, out: &mut [f64]) -> f64 {
        let levels = self.coeffs.len();
        if a == levels {
            // one exponential serves both log 2cosh and tanh
            let x = s.abs();
            let e = (-2.0 * x).exp();
            if !out.is_empty() {
                let t = ((1.0 - e) / (1.0 + e)).copysign(s);
                for (o, ch) in out.iter_mut().zip(self.channels) {
                    *o = match ch.power {
                        TanhPower::None => 1.0,
                        TanhPower::Tanh => t,
                        TanhPower::Tanh2 => t * t,
                    };
                }
            }
            return x + e.ln_1p();
        }
        let nodes = self.nodes[a].clone();
        let nch = self.channels.len();
        let stride = nch + 1;
        let c = self.coeffs[a];
        let r = self.ratios[a - 1];
        let mut buf = std::mem::take(&mut self.scratch[a]);
        buf.resize(nodes.len() * stride, 0.0);
        let mut mx = f64::NEG_INFINITY;
        for (i, &h) in nodes.h.iter().enumerate() {
            let row = &mut buf[i * stride..(i + 1) * stride];
            let (lw, vals) = row.split_first_mut().unwrap();
            let ln = self.level(a + 1, s + c * h, vals);
            *lw = nodes.log_w[i] + r * ln;
            mx = mx.max(*lw);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut norm = 0.0;
        for row in buf.chunks_exact(stride) {
            let u = (row[0] - mx).exp();
            norm += u;
            for (o, v) in out.iter_mut().zip(&row[1..]) {
                *o += u * v;
            }
        }
        for (o, ch) in out.iter_mut().zip(self.channels) {
            *o /= norm;
            if ch.square_at == Some(a) {
                *o *= *o;
            }
        }
        self.scratch[a] = buf;
        mx + norm.ln()
    }
}

/// Result of a nested evaluation: `(1/theta_1) E_1 log N_1` and the requested channels.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedResult {
    pub log_cosh: f64,
    pub channels: Vec<f64>,
}

/// Evaluate the nested log-cosh expectation and any telescopic averages in one pass.
pub fn nested_evaluate(
    arg: &FieldArgument,
    thetas: &[f64],
    channels: &[Channel],
    spec: &QuadratureSpec,
) -> Result<NestedResult> {
    arg.validate(thetas)?;
    let k = thetas.len();
    for ch in channels {
        if let Some(a) = ch.square_at {
            if a > k {
                return Err(RsbError::RangeViolation(format!(
                    "square_at_level {a} outside [0, {k}]"
                )));
            }
        }
    }
    let levels = k + 1;
    if arg.coeffs.iter().all(|&c| c == 0.0) {
        return Ok(deterministic(arg.offset, channels));
    }
    let nodes = level_nodes(spec, levels)?;
    let mut ratios = Vec::with_capacity(k);
    for a in 0..k {
        let next = if a + 1 < k { thetas[a + 1] } else { 1.0 };
        ratios.push(thetas[a] / next);
    }
    let mut nested = Nested {
        coeffs: &arg.coeffs,
        ratios,
        nodes: nodes.clone(),
        channels,
        scratch: vec![Vec::new(); levels + 1],
    };
    let nch = channels.len();
    let top = &nodes[0];
    let mut acc = vec![0.0; nch];
    let mut vals = vec![0.0; nch];
    let mut log_acc = 0.0;
    for (&h, &w) in top.h.iter().zip(&top.w) {
        let ln = nested.level(1, arg.offset + arg.coeffs[0] * h, &mut vals);
        if !ln.is_finite() || vals.iter().any(|v| !v.is_finite()) {
            return Err(RsbError::NonFiniteIntegrand(h));
        }
        log_acc += w * ln;
        for (a, v) in acc.iter_mut().zip(&vals) {
            *a += w * v;
        }
    }
    for (a, ch) in acc.iter_mut().zip(channels) {
        if ch.square_at == Some(0) {
            *a *= *a;
        }
    }
    let log_cosh = if k == 0 { log_acc } else { log_acc / thetas[0] };
    Ok(NestedResult { log_cosh, channels: acc })
}

/// Every level is a point mass, so all averages reduce to their integrands at `g`.
fn deterministic(g: f64, channels: &[Channel]) -> NestedResult {
    let t = g.tanh();
    let channels = channels
        .iter()
        .map(|ch| {
            let v = t.powi(ch.power.exponent());
            if ch.square_at.is_some() {
                v * v
            } else {
                v
            }
        })
        .collect();
    NestedResult { log_cosh: log_2cosh(g), channels }
}

/// `(1/theta_1) E_1 log N_1`; for K = 0 this is `E log 2cosh(offset + c_1 h)`.
pub fn nested_log_cosh_expect(
    arg: &FieldArgument,
    thetas: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64> {
    Ok(nested_evaluate(arg, thetas, &[], spec)?.log_cosh)
}

/// Telescopic weighted average of tanh^j(g) with optional squaring (see [`Channel`]).
pub fn nested_ratio_expect(
    arg: &FieldArgument,
    thetas: &[f64],
    inner: TanhPower,
    square_at_level: Option<usize>,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let ch = [Channel { power: inner, square_at: square_at_level }];
    Ok(nested_evaluate(arg, thetas, &ch, spec)?.channels[0])
}

/// Channels producing m followed by q_1..q_{K+1} for a level-K evaluation.
pub fn order_parameter_channels(k: usize) -> Vec<Channel> {
    let mut chs = vec![Channel { power: TanhPower::Tanh, square_at: None }];
    for a in 1..=k {
        chs.push(Channel { power: TanhPower::Tanh, square_at: Some(a) });
    }
    chs.push(Channel { power: TanhPower::Tanh2, square_at: None });
    chs
}
