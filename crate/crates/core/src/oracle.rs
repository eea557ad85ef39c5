//! Finite-size ground truth: exact enumeration, Metropolis dynamics, two-replica
//! overlap histograms and Monte Carlo checks of the interpolation derivative identities.
//!
//! All randomness comes from ChaCha8 substreams: `(seed, stream)` fully determines a
//! draw sequence, so sample `k` is reproducible on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::types::{HopfieldParams, Result, RsbError, SkParams};

const STREAM_DISORDER: u64 = 0;
const STREAM_CHAIN: u64 = 1 << 48;
const STREAM_LEMMA: u64 = 2 << 48;

/// Largest SK size accepted by the enumerator.
pub const MAX_SK_ENUM: usize = 20;
/// Largest Hopfield size accepted by the enumerator.
pub const MAX_HOP_ENUM: usize = 18;
/// Largest size accepted by the lemma checker.
pub const MAX_LEMMA_N: usize = 10;

/// Independent RNG for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn spin(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Numerically stable running log-sum-exp.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    fn new() -> Self {
        LogSumExp { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    #[inline]
    fn add(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One SK coupling realization, stored as a dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkDisorderSample {
    pub n: usize,
    /// Row-major N x N, symmetric, zero diagonal.
    pub couplings: Vec<f64>,
    pub seed: u64,
}

impl SkDisorderSample {
    /// Sample `index` of the disorder ensemble for `seed`.
    ///
    /// Each ordered pair gets `J0/N + J*sqrt(2)*z_ij/sqrt(N)`; the matrix is the
    /// symmetric part, so every pair carries `J0/N + J*z/sqrt(N)` with `z ~ N(0,1)`.
    pub fn generate(n: usize, p: &SkParams, seed: u64, index: u64) -> Self {
        let mut rng = substream(seed, STREAM_DISORDER + index);
        let nf = n as f64;
        let mut couplings = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let zij = normal(&mut rng);
                let zji = normal(&mut rng);
                let a = p.j0 / nf + p.j * std::f64::consts::SQRT_2 * zij / nf.sqrt();
                let b = p.j0 / nf + p.j * std::f64::consts::SQRT_2 * zji / nf.sqrt();
                let v = 0.5 * (a + b);
                couplings[i * n + j] = v;
                couplings[j * n + i] = v;
            }
        }
        SkDisorderSample { n, couplings, seed }
    }

    /// Ferromagnetic sample with every coupling equal to `j0 / N`.
    pub fn uniform(n: usize, j0: f64) -> Self {
        let mut couplings = vec![j0 / n as f64; n * n];
        for i in 0..n {
            couplings[i * n + i] = 0.0;
        }
        SkDisorderSample { n, couplings, seed: 0 }
    }

    /// `H = -sum_{i<j} J_ij s_i s_j`.
    pub fn energy(&self, s: &[f64]) -> f64 {
        let n = self.n;
        let mut e = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                e -= self.couplings[i * n + j] * s[i] * s[j];
            }
        }
        e
    }

    /// Exact `log Z` at inverse temperature `beta` by Gray-code enumeration.
    pub fn log_z(&self, beta: f64) -> Result<f64> {
        let n = self.n;
        if n > MAX_SK_ENUM {
            return Err(RsbError::BudgetExceeded { points: 2f64.powi(n as i32), budget: 1 << MAX_SK_ENUM });
        }
        if n == 0 {
            return Ok(0.0);
        }
        // the energy is even in s, so fix the last spin and double
        let mut s = vec![1.0; n];
        let mut field: Vec<f64> =
            (0..n).map(|i| (0..n).map(|j| self.couplings[i * n + j] * s[j]).sum()).collect();
        let mut e = self.energy(&s);
        let mut lse = LogSumExp::new();
        lse.add(-beta * e);
        let free = n - 1;
        for k in 1u64..(1u64 << free) {
            let b = k.trailing_zeros() as usize;
            let old = s[b];
            e += 2.0 * old * field[b];
            s[b] = -old;
            for (j, f) in field.iter_mut().enumerate() {
                *f -= 2.0 * old * self.couplings[j * n + b];
            }
            lse.add(-beta * e);
        }
        Ok(lse.value() + std::f64::consts::LN_2)
    }
}

/// One Hopfield pattern realization.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldDisorderSample {
    pub n: usize,
    /// Total pattern count, retrieved pattern included.
    pub p: usize,
    pub retrieved_pattern: Vec<f64>,
    /// Row-major (P-1) x N.
    pub noise_patterns: Vec<f64>,
    pub seed: u64,
}

/// Pattern count `max(1, ceil(alpha N))`.
pub fn pattern_count(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64 - 1e-9).ceil() as usize).max(1)
}

impl HopfieldDisorderSample {
    /// Sample `index`: a random +-1 retrieved pattern and Gaussian noise patterns
    /// (or +-1 ones when `boolean_noise` is set).
    pub fn generate(n: usize, p: usize, seed: u64, index: u64, boolean_noise: bool) -> Self {
        let mut rng = substream(seed, STREAM_DISORDER + index);
        let retrieved_pattern = (0..n).map(|_| spin(&mut rng)).collect();
        let noise_patterns = (0..(p - 1) * n)
            .map(|_| if boolean_noise { spin(&mut rng) } else { normal(&mut rng) })
            .collect();
        HopfieldDisorderSample { n, p, retrieved_pattern, noise_patterns, seed }
    }

    fn pattern(&self, mu: usize) -> &[f64] {
        if mu == 0 {
            &self.retrieved_pattern
        } else {
            &self.noise_patterns[(mu - 1) * self.n..mu * self.n]
        }
    }

    fn overlaps(&self, s: &[f64]) -> Vec<f64> {
        (0..self.p).map(|mu| self.pattern(mu).iter().zip(s).map(|(x, y)| x * y).sum()).collect()
    }

    /// `H = -(1/2N) sum_mu (sum_i xi_i^mu s_i)^2`, diagonal included.
    pub fn energy(&self, s: &[f64]) -> f64 {
        -self.overlaps(s).iter().map(|m| m * m).sum::<f64>() / (2.0 * self.n as f64)
    }

    /// Exact `log Z` by Gray-code enumeration.
    pub fn log_z(&self, beta: f64) -> Result<f64> {
        let n = self.n;
        if n > MAX_HOP_ENUM {
            return Err(RsbError::BudgetExceeded { points: 2f64.powi(n as i32), budget: 1 << MAX_HOP_ENUM });
        }
        if n == 0 {
            return Ok(0.0);
        }
        let mut s = vec![1.0; n];
        let mut ov = self.overlaps(&s);
        let c = beta / (2.0 * n as f64);
        let mut lse = LogSumExp::new();
        lse.add(c * ov.iter().map(|m| m * m).sum::<f64>());
        let patterns: Vec<&[f64]> = (0..self.p).map(|mu| self.pattern(mu)).collect();
        for k in 1u64..(1u64 << (n - 1)) {
            let b = k.trailing_zeros() as usize;
            let old = s[b];
            s[b] = -old;
            let mut sq = 0.0;
            for (m, xi) in ov.iter_mut().zip(&patterns) {
                *m -= 2.0 * old * xi[b];
                sq += *m * *m;
            }
            lse.add(c * sq);
        }
        Ok(lse.value() + std::f64::consts::LN_2)
    }
}

/// Disorder mean and standard error of `(1/N) log Z` for SK.
pub fn enumerate_sk_pressure(n: usize, p: &SkParams, samples: usize, seed: u64) -> Result<(f64, f64)> {
    p.validate()?;
    if n > MAX_SK_ENUM {
        return Err(RsbError::BudgetExceeded { points: 2f64.powi(n as i32), budget: 1 << MAX_SK_ENUM });
    }
    if samples == 0 || n == 0 {
        return Err(RsbError::InvalidParameter("need n >= 1 and samples >= 1".into()));
    }
    let vals = (0..samples as u64)
        .into_par_iter()
        .map(|k| SkDisorderSample::generate(n, p, seed, k).log_z(p.beta).map(|l| l / n as f64))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_se(&vals))
}

/// Disorder mean and standard error of `(1/N) log Z` for Hopfield with Gaussian noise patterns.
pub fn enumerate_hopfield_pressure(
    n: usize,
    p: &HopfieldParams,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    p.validate()?;
    if n > MAX_HOP_ENUM {
        return Err(RsbError::BudgetExceeded { points: 2f64.powi(n as i32), budget: 1 << MAX_HOP_ENUM });
    }
    if samples == 0 || n == 0 {
        return Err(RsbError::InvalidParameter("need n >= 1 and samples >= 1".into()));
    }
    let np = pattern_count(n, p.alpha);
    let vals = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            HopfieldDisorderSample::generate(n, np, seed, k, false)
                .log_z(p.beta)
                .map(|l| l / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_se(&vals))
}

/// Either kind of disorder sample, for the dynamics routines.
#[derive(Debug, Clone, PartialEq)]
pub enum DisorderSample {
    Sk(SkDisorderSample),
    Hopfield(HopfieldDisorderSample),
}

impl DisorderSample {
    fn n(&self) -> usize {
        match self {
            DisorderSample::Sk(s) => s.n,
            DisorderSample::Hopfield(s) => s.n,
        }
    }
}

/// Starting configuration for a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitPolicy {
    Random,
    /// The retrieved pattern (Hopfield) or all spins up (SK).
    Pattern,
}

/// Time averages from a Metropolis run, with batch-means standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetropolisResult {
    pub overlap_mean: f64,
    pub overlap_se: f64,
    /// Energy per spin.
    pub energy_mean: f64,
    pub energy_se: f64,
}

/// Single-spin-flip Metropolis chain with incrementally maintained local fields.
struct Chain<'a> {
    sample: &'a DisorderSample,
    s: Vec<f64>,
    /// SK: local fields `sum_j J_ij s_j`. Hopfield: pattern overlaps `M_mu`.
    aux: Vec<f64>,
    energy: f64,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    fn new(sample: &'a DisorderSample, init: InitPolicy, mut rng: ChaCha8Rng) -> Self {
        let n = sample.n();
        let s: Vec<f64> = match (init, sample) {
            (InitPolicy::Random, _) => (0..n).map(|_| spin(&mut rng)).collect(),
            (InitPolicy::Pattern, DisorderSample::Sk(_)) => vec![1.0; n],
            (InitPolicy::Pattern, DisorderSample::Hopfield(h)) => h.retrieved_pattern.clone(),
        };
        let (aux, energy) = match sample {
            DisorderSample::Sk(d) => {
                let f = (0..n).map(|i| (0..n).map(|j| d.couplings[i * n + j] * s[j]).sum()).collect();
                (f, d.energy(&s))
            }
            DisorderSample::Hopfield(h) => {
                let ov = h.overlaps(&s);
                let e = -ov.iter().map(|m| m * m).sum::<f64>() / (2.0 * n as f64);
                (ov, e)
            }
        };
        Chain { sample, s, aux, energy, rng }
    }

    fn sweep(&mut self, beta: f64) {
        let n = self.s.len();
        for _ in 0..n {
            let k = self.rng.random_range(0..n);
            let old = self.s[k];
            let de = match self.sample {
                DisorderSample::Sk(_) => 2.0 * old * self.aux[k],
                DisorderSample::Hopfield(h) => {
                    let mut acc = 0.0;
                    for (mu, m) in self.aux.iter().enumerate() {
                        let x = h.pattern(mu)[k];
                        acc += x * old * m - x * x;
                    }
                    2.0 * acc / n as f64
                }
            };
            let u: f64 = self.rng.random();
            if de <= 0.0 || u < (-beta * de).exp() {
                self.s[k] = -old;
                self.energy += de;
                match self.sample {
                    DisorderSample::Sk(d) => {
                        for (j, f) in self.aux.iter_mut().enumerate() {
                            *f -= 2.0 * old * d.couplings[j * n + k];
                        }
                    }
                    DisorderSample::Hopfield(h) => {
                        for (mu, m) in self.aux.iter_mut().enumerate() {
                            *m -= 2.0 * old * h.pattern(mu)[k];
                        }
                    }
                }
            }
        }
    }

    fn order_parameter(&self) -> f64 {
        let n = self.s.len() as f64;
        match self.sample {
            DisorderSample::Sk(_) => self.s.iter().sum::<f64>() / n,
            DisorderSample::Hopfield(_) => self.aux[0] / n,
        }
    }
}

fn batch_means(v: &[f64], batches: usize) -> (f64, f64) {
    let nb = batches.min(v.len()).max(1);
    let len = v.len() / nb;
    let means: Vec<f64> =
        (0..nb).map(|b| v[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64).collect();
    let (_, se) = mean_se(&means);
    (v.iter().sum::<f64>() / v.len() as f64, se)
}

/// Metropolis run; the first half of the sweeps is discarded as burn-in.
///
/// The recorded order parameter is the Mattis overlap with the retrieved pattern
/// (Hopfield) or the magnetization (SK), sampled once per sweep.
pub fn metropolis_run(
    sample: &DisorderSample,
    beta: f64,
    sweeps: usize,
    init: InitPolicy,
    seed: u64,
) -> Result<MetropolisResult> {
    if sweeps < 100 {
        return Err(RsbError::InvalidParameter("sweeps must be >= 100".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(RsbError::InvalidParameter(format!("beta = {beta}")));
    }
    let mut chain = Chain::new(sample, init, substream(seed, STREAM_CHAIN));
    let burn = sweeps / 2;
    let n = sample.n() as f64;
    let (mut ov, mut en) = (Vec::new(), Vec::new());
    for t in 0..sweeps {
        chain.sweep(beta);
        if t >= burn {
            ov.push(chain.order_parameter());
            en.push(chain.energy / n);
        }
    }
    let (overlap_mean, overlap_se) = batch_means(&ov, 20);
    let (energy_mean, energy_se) = batch_means(&en, 20);
    Ok(MetropolisResult { overlap_mean, overlap_se, energy_mean, energy_se })
}

/// Histogram of the two-replica overlap over [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl OverlapHistogram {
    pub fn new(bins: usize) -> Self {
        let bin_edges = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
        OverlapHistogram { bin_edges, counts: vec![0; bins], total: 0 }
    }

    pub fn add(&mut self, q: f64) {
        let bins = self.counts.len();
        let idx = (((q + 1.0) / 2.0 * bins as f64).floor() as isize).clamp(0, bins as isize - 1);
        self.counts[idx as usize] += 1;
        self.total += 1;
    }

    /// Add the counts of a histogram with identical bins.
    pub fn merge(&mut self, other: &OverlapHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    /// Index of the most populated bin.
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    /// Mean and standard deviation using bin centres.
    pub fn moments(&self) -> (f64, f64) {
        let t = self.total as f64;
        let centre = |i: usize| 0.5 * (self.bin_edges[i] + self.bin_edges[i + 1]);
        let mean = self.counts.iter().enumerate().map(|(i, &c)| c as f64 * centre(i)).sum::<f64>() / t;
        let var = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (centre(i) - mean).powi(2))
            .sum::<f64>()
            / t;
        (mean, var.sqrt())
    }

    /// CSV with header `bin_lo,bin_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                crate::cli::fmt_f64(self.bin_edges[i]),
                crate::cli::fmt_f64(self.bin_edges[i + 1]),
                c
            ));
        }
        out
    }
}

/// Two independent chains on the same disorder; `q12` is recorded every sweep after
/// burn-in (first half).
pub fn overlap_histogram(
    sample: &DisorderSample,
    beta: f64,
    sweeps: usize,
    bins: usize,
    init: InitPolicy,
    seed: u64,
) -> Result<OverlapHistogram> {
    overlap_histogram_pooled(sample, beta, sweeps, bins, init, seed, 1)
}

/// As [`overlap_histogram`], pooling `pairs` independent replica pairs on the same
/// disorder. A single pair stays trapped in one valley at low temperature; pooling
/// samples the overlap distribution across valleys.
pub fn overlap_histogram_pooled(
    sample: &DisorderSample,
    beta: f64,
    sweeps: usize,
    bins: usize,
    init: InitPolicy,
    seed: u64,
    pairs: usize,
) -> Result<OverlapHistogram> {
    if bins == 0 {
        return Err(RsbError::InvalidParameter("bins must be >= 1".into()));
    }
    if sweeps < 2 || pairs == 0 {
        return Err(RsbError::InvalidParameter("need sweeps >= 2 and pairs >= 1".into()));
    }
    let n = sample.n() as f64;
    let hists: Vec<OverlapHistogram> = (0..pairs as u64)
        .into_par_iter()
        .map(|k| {
            let mut a = Chain::new(sample, init, substream(seed, STREAM_CHAIN + 1 + 2 * k));
            let mut b = Chain::new(sample, init, substream(seed, STREAM_CHAIN + 2 + 2 * k));
            let mut hist = OverlapHistogram::new(bins);
            for t in 0..sweeps {
                a.sweep(beta);
                b.sweep(beta);
                if t >= sweeps / 2 {
                    hist.add(a.s.iter().zip(&b.s).map(|(x, y)| x * y).sum::<f64>() / n);
                }
            }
            hist
        })
        .collect();
    let mut total = OverlapHistogram::new(bins);
    for h in hists {
        total.merge(&h);
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Interpolation derivative identities
// ---------------------------------------------------------------------------

/// Model whose interpolating pressure is probed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LemmaModel {
    Sk(SkParams),
    /// Noise pattern count is `ceil(alpha N)`; the retrieved pattern is gauged to all ones.
    Hopfield(HopfieldParams),
}

/// Point of the interpolating structure.
///
/// SK:
/// `beta [ sqrt(t) J/sqrt(2N) sum_{i!=j} z_ij s_i s_j + t J0 N m^2/2 + w J0 N m + sum_a sqrt(x_a) sum_i h^a_i s_i ]`
/// with `z_ij` i.i.d. over ordered pairs.
///
/// Hopfield, with `tau_mu ~ N(0, 1/beta)` integrated exactly:
/// `beta [ t N m^2/2 + sqrt(t/N) sum xi^mu_i s_i tau_mu + sum_a sqrt(x_a) h^a.s
///        + sum_a sqrt(y_a) J^a.tau + z |tau|^2/2 + w N m ]`.
///
/// Levels `1..=K+1` are averaged telescopically with the Parisi parameters `thetas`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    pub w: f64,
    pub thetas: Vec<f64>,
}

impl InterpolationPoint {
    /// Point at level `thetas.len()` with zero fields.
    pub fn new(t: f64, w: f64, thetas: Vec<f64>) -> Self {
        let levels = thetas.len() + 1;
        InterpolationPoint { t, x: vec![0.0; levels], y: vec![0.0; levels], z: 0.0, w, thetas }
    }

    fn validate(&self) -> Result<()> {
        let levels = self.thetas.len() + 1;
        if self.x.len() != levels || self.y.len() != levels {
            return Err(RsbError::ShapeMismatch("x and y need one entry per level".into()));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(RsbError::RangeViolation(format!("t = {} outside [0, 1]", self.t)));
        }
        if self.x.iter().chain(&self.y).any(|v| !(*v >= 0.0)) {
            return Err(RsbError::RangeViolation("x and y must be >= 0".into()));
        }
        if !(self.z < 1.0) {
            return Err(RsbError::RangeViolation("z must be < 1".into()));
        }
        crate::quadrature::check_thetas(&self.thetas)
    }
}

/// Which partial derivative to check. Level indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    T,
    X(usize),
    Y(usize),
    Z,
    W,
}

/// Sampling and differencing controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaOptions {
    /// Monte Carlo draws per inner level (levels 2..=K+1).
    pub inner_samples: usize,
    /// Step relative to `max(|v|, 0.1)`.
    pub step_rel: f64,
    pub richardson: bool,
    /// Subtract fitted zero-mean Stein control variates from the finite difference.
    pub control_variates: bool,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        LemmaOptions { inner_samples: 32, step_rel: 1e-3, richardson: true, control_variates: true }
    }
}

/// Finite-difference estimate, bracket estimate, and their differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub fd_lhs: f64,
    pub bracket_rhs: f64,
    pub abs_diff: f64,
    pub rel_diff: f64,
    /// Standard error of `fd_lhs - bracket_rhs` (antithetic pairs pooled).
    pub diff_se: f64,
    /// Bracket with telescopic averages only, i.e. the infinite-inner-sample form.
    pub lemma_limit: f64,
    /// Exact finite-inner-sample term included in `bracket_rhs`.
    pub finite_sample_correction: f64,
}

/// Per-sample draws shared by every stencil point.
struct Draws {
    /// SK: N x N couplings noise; Hopfield: noise patterns (P x N).
    quenched: Vec<f64>,
    /// Field vectors per tree node, level by level: level 1 has one node, level a has
    /// `M^(a-1)` nodes. Each node holds N site fields followed by P pattern fields.
    fields: Vec<Vec<f64>>,
}

struct LemmaSystem {
    model: LemmaModel,
    n: usize,
    /// Noise pattern count (Hopfield only).
    np: usize,
    beta: f64,
    configs: Vec<Vec<f64>>,
}

/// Telescopic statistics accumulated during the evaluation at the central point.
#[derive(Debug, Clone)]
struct Stats {
    /// Vectors averaged so far: [m, m^2, tau2 mean, site (N), pair (N^2) or tau (P), site-tau (N P)]
    vecs: Vec<f64>,
    /// Squared scalars per level b = 1..=K+1 (index b-1): site, pair-or-tau, site-tau.
    sq: Vec<[f64; 3]>,
    /// Like `sq`, but with squared relative weights.
    sq2: Vec<[f64; 3]>,
    /// Finite-sample weight-derivative terms per target level.
    corr: Vec<[f64; 3]>,
}

impl Stats {
    fn empty(levels: usize) -> Self {
        Stats {
            vecs: vec![],
            sq: vec![[0.0; 3]; levels],
            sq2: vec![[0.0; 3]; levels],
            corr: vec![[0.0; 3]; levels],
        }
    }
}

impl LemmaSystem {
    fn new(n: usize, model: LemmaModel) -> Self {
        let configs = (0..1usize << n)
            .map(|c| (0..n).map(|i| if c >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        let (beta, np) = match model {
            LemmaModel::Sk(p) => (p.beta, 0),
            LemmaModel::Hopfield(p) => (p.beta, pattern_count(n, p.alpha)),
        };
        LemmaSystem { model, n, np, beta, configs }
    }

    fn field_len(&self) -> usize {
        self.n + self.np
    }

    fn quenched_len(&self) -> usize {
        match self.model {
            LemmaModel::Sk(_) => self.n * self.n,
            LemmaModel::Hopfield(_) => self.np * self.n,
        }
    }

    fn vec_len(&self) -> usize {
        let n = self.n;
        match self.model {
            LemmaModel::Sk(_) => 3 + n + n * n,
            LemmaModel::Hopfield(_) => 3 + n + self.np + n * self.np,
        }
    }

    fn draw(&self, seed: u64, sample: u64, levels: usize, inner: usize) -> Draws {
        // antithetic pairs: odd samples negate every Gaussian of their partner
        let mut rng = substream(seed, STREAM_LEMMA + sample / 2);
        let sign = if sample % 2 == 1 { -1.0 } else { 1.0 };
        let g = |rng: &mut ChaCha8Rng| sign * normal(rng);
        let quenched = (0..self.quenched_len()).map(|_| g(&mut rng)).collect();
        let mut fields = Vec::with_capacity(levels);
        let mut count = 1;
        for _ in 0..levels {
            fields.push((0..count * self.field_len()).map(|_| g(&mut rng)).collect());
            count *= inner;
        }
        Draws { quenched, fields }
    }

    /// Log-weights of all configurations that do not depend on the level fields,
    /// plus (Hopfield) the per-configuration pattern overlaps `M_mu(s)`.
    fn static_part(&self, d: &Draws, pt: &InterpolationPoint) -> (Vec<f64>, Vec<f64>) {
        let (n, b) = (self.n, self.beta);
        let nf = n as f64;
        match self.model {
            LemmaModel::Sk(p) => {
                let c = pt.t.sqrt() * p.j / (2.0 * nf).sqrt();
                let stat = self
                    .configs
                    .iter()
                    .map(|s| {
                        let mut pair = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                if i != j {
                                    pair += d.quenched[i * n + j] * s[i] * s[j];
                                }
                            }
                        }
                        let mag: f64 = s.iter().sum();
                        b * (c * pair + pt.t * p.j0 * mag * mag / (2.0 * nf) + pt.w * p.j0 * mag)
                    })
                    .collect();
                (stat, vec![])
            }
            LemmaModel::Hopfield(_) => {
                let np = self.np;
                let mut ovs = Vec::with_capacity(self.configs.len() * np);
                let stat = self
                    .configs
                    .iter()
                    .map(|s| {
                        for mu in 0..np {
                            let row = &d.quenched[mu * n..(mu + 1) * n];
                            ovs.push(row.iter().zip(s).map(|(x, y)| x * y).sum::<f64>());
                        }
                        let m1: f64 = s.iter().sum();
                        b * (pt.t * m1 * m1 / (2.0 * nf) + pt.w * m1)
                            - np as f64 / 2.0 * (1.0 - pt.z).ln()
                    })
                    .collect();
                (stat, ovs)
            }
        }
    }

    /// Leaf: log Z at fixed cumulative fields, optionally with Gibbs averages.
    fn leaf(
        &self,
        pt: &InterpolationPoint,
        stat: &[f64],
        ovs: &[f64],
        hsum: &[f64],
        want: bool,
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> f64 {
        let (n, np, b) = (self.n, self.np, self.beta);
        let nf = n as f64;
        let hop = matches!(self.model, LemmaModel::Hopfield(_));
        let one_z = 1.0 - pt.z;
        let st = pt.t.sqrt() / nf.sqrt();
        scratch.clear();
        let mut mx = f64::NEG_INFINITY;
        for (c, s) in self.configs.iter().enumerate() {
            let mut lw = stat[c];
            for i in 0..n {
                lw += b * hsum[i] * s[i];
            }
            if hop {
                for mu in 0..np {
                    let bm = st * ovs[c * np + mu] + hsum[n + mu];
                    lw += b * bm * bm / (2.0 * one_z);
                }
            }
            scratch.push(lw);
            mx = mx.max(lw);
        }
        let mut norm = 0.0;
        for v in scratch.iter_mut() {
            *v = (*v - mx).exp();
            norm += *v;
        }
        let log_z = mx + norm.ln();
        if !want {
            return log_z;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, s) in self.configs.iter().enumerate() {
            let u = scratch[c] / norm;
            let m: f64 = s.iter().sum::<f64>() / nf;
            out[0] += u * m;
            out[1] += u * m * m;
            let base = 3;
            for i in 0..n {
                out[base + i] += u * s[i];
            }
            if hop {
                let tau0 = base + n;
                let st0 = tau0 + np;
                let mut tau2 = 0.0;
                for mu in 0..np {
                    let bm = st * ovs[c * np + mu] + hsum[n + mu];
                    let tau = bm / one_z;
                    tau2 += tau * tau + 1.0 / (b * one_z);
                    out[tau0 + mu] += u * tau;
                    for i in 0..n {
                        out[st0 + i * np + mu] += u * s[i] * tau;
                    }
                }
                out[2] += u * tau2 / np.max(1) as f64;
            } else {
                let pair0 = base + n;
                for i in 0..n {
                    for j in 0..n {
                        out[pair0 + i * n + j] += u * s[i] * s[j];
                    }
                }
            }
        }
        log_z
    }

    fn squares(&self, v: &[f64]) -> [f64; 3] {
        let (n, np) = (self.n, self.np);
        let base = 3;
        let site = v[base..base + n].iter().map(|x| x * x).sum::<f64>() / n as f64;
        match self.model {
            LemmaModel::Sk(_) => {
                let pair = v[base + n..base + n + n * n].iter().map(|x| x * x).sum::<f64>()
                    / (n * n) as f64;
                [site, pair, 0.0]
            }
            LemmaModel::Hopfield(_) => {
                let d = np.max(1) as f64;
                let tau = v[base + n..base + n + np].iter().map(|x| x * x).sum::<f64>() / d;
                let st = v[base + n + np..base + n + np + n * np].iter().map(|x| x * x).sum::<f64>()
                    / (n as f64 * d);
                [site, tau, st]
            }
        }
    }

    /// Recursive telescopic evaluation. Returns log Z at this node; fills `stats`
    /// (vectors averaged over deeper levels, squares for levels >= this one) when given.
    #[allow(clippy::too_many_arguments)]
    fn node(
        &self,
        pt: &InterpolationPoint,
        d: &Draws,
        stat: &[f64],
        ovs: &[f64],
        level: usize,
        index: usize,
        hsum: &mut Vec<f64>,
        inner: usize,
        stats: Option<&mut Stats>,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        let levels = pt.thetas.len() + 1;
        let fl = self.field_len();
        // add this level's fields
        let f = &d.fields[level - 1][index * fl..(index + 1) * fl];
        let (sx, sy) = (pt.x[level - 1].sqrt(), pt.y[level - 1].sqrt());
        let prev = hsum.clone();
        for i in 0..self.n {
            hsum[i] += sx * f[i];
        }
        for mu in 0..self.np {
            hsum[self.n + mu] += sy * f[self.n + mu];
        }
        let result = if level == levels {
            let want = stats.is_some();
            let mut tmp = vec![0.0; if want { self.vec_len() } else { 0 }];
            let lz = self.leaf(pt, stat, ovs, hsum, want, &mut tmp, scratch);
            if let Some(s) = stats {
                s.sq[level - 1] = self.squares(&tmp);
                s.sq2[level - 1] = s.sq[level - 1];
                s.vecs = tmp;
            }
            lz
        } else {
            let theta = pt.thetas[level - 1];
            let mut lzs = Vec::with_capacity(inner);
            let mut child_stats = Vec::new();
            let want = stats.is_some();
            for c in 0..inner {
                let mut cs = Stats::empty(levels);
                let lz = self.node(
                    pt,
                    d,
                    stat,
                    ovs,
                    level + 1,
                    index * inner + c,
                    hsum,
                    inner,
                    if want { Some(&mut cs) } else { None },
                    scratch,
                );
                lzs.push(lz);
                if want {
                    child_stats.push(cs);
                }
            }
            let mx = lzs.iter().map(|l| theta * l).fold(f64::NEG_INFINITY, f64::max);
            let us: Vec<f64> = lzs.iter().map(|l| (theta * l - mx).exp()).collect();
            let norm: f64 = us.iter().sum();
            let lz = (mx + (norm / inner as f64).ln()) / theta;
            if let Some(s) = stats {
                let mut vecs = vec![0.0; self.vec_len()];
                let mut sq = vec![[0.0; 3]; levels];
                let mut sq2 = vec![[0.0; 3]; levels];
                let mut corr = vec![[0.0; 3]; levels];
                for (u, cs) in us.iter().zip(&child_stats) {
                    let wgt = u / norm;
                    for (a, v) in vecs.iter_mut().zip(&cs.vecs) {
                        *a += wgt * v;
                    }
                    for b in level..levels {
                        for k in 0..3 {
                            sq[b][k] += wgt * cs.sq[b][k];
                            sq2[b][k] += wgt * wgt * cs.sq2[b][k];
                            corr[b][k] +=
                                wgt * (cs.corr[b][k] + theta * (1.0 - wgt) * cs.sq2[b][k]);
                        }
                    }
                }
                sq[level - 1] = self.squares(&vecs);
                sq2[level - 1] = sq[level - 1];
                s.vecs = vecs;
                s.sq = sq;
                s.sq2 = sq2;
                s.corr = corr;
            }
            lz
        };
        *hsum = prev;
        result
    }

    /// Bracket in its infinite-inner-sample form, and the exact finite-sample
    /// correction for fields below the outermost level.
    fn bracket(&self, pt: &InterpolationPoint, which: Derivative, st: &Stats) -> Result<(f64, f64)> {
        let b = self.beta;
        let levels = pt.thetas.len() + 1;
        let (vecs, sq) = (&st.vecs, &st.sq);
        let theta = |i: usize| -> f64 {
            if i == 0 {
                0.0
            } else if i == levels {
                1.0
            } else {
                pt.thetas[i - 1]
            }
        };
        let tail = |from: usize, k: usize| -> f64 {
            (from..=levels).map(|lv| (theta(lv) - theta(lv - 1)) * sq[lv - 1][k]).sum()
        };
        // Gaussian integration by parts on a field below the root also differentiates
        // the sampled telescopic weights; these terms vanish as the inner sample grows.
        let correction = |a: usize, k: usize| -> f64 {
            if a <= 1 {
                0.0
            } else {
                -theta(a - 1) * sq[a - 1][k] + st.corr[a - 1][k]
            }
        };
        let check_level = |a: usize| -> Result<()> {
            if a == 0 || a > levels {
                return Err(RsbError::RangeViolation(format!("level {a} outside 1..={levels}")));
            }
            Ok(())
        };
        let al = self.np as f64 / self.n as f64;
        let (m, m2, p11) = (vecs[0], vecs[1], vecs[2]);
        match (self.model, which) {
            (LemmaModel::Sk(p), Derivative::T) => {
                Ok((b * b * p.j * p.j / 4.0 * (1.0 - tail(1, 1)) + b * p.j0 / 2.0 * m2, 0.0))
            }
            (LemmaModel::Sk(p), Derivative::W) => Ok((b * p.j0 * m, 0.0)),
            (_, Derivative::X(a)) => {
                check_level(a)?;
                let c = b * b / 2.0;
                Ok((c * (1.0 - tail(a, 0)), c * correction(a, 0)))
            }
            (LemmaModel::Sk(_), _) => {
                Err(RsbError::InvalidParameter("SK has no y or z interpolation fields".into()))
            }
            (LemmaModel::Hopfield(_), Derivative::T) => {
                Ok((b / 2.0 * m2 + al * b * b / 2.0 * (p11 - tail(1, 2)), 0.0))
            }
            (LemmaModel::Hopfield(_), Derivative::Y(a)) => {
                check_level(a)?;
                let c = al * b * b / 2.0;
                Ok((c * (p11 - tail(a, 1)), c * correction(a, 1)))
            }
            (LemmaModel::Hopfield(_), Derivative::Z) => Ok((al * b / 2.0 * p11, 0.0)),
            (LemmaModel::Hopfield(_), Derivative::W) => Ok((b * m, 0.0)),
        }
    }

    /// Zero-mean control variates `v g(v) - g'(v)` over the Gaussian variables that
    /// the selected derivative integrates by parts, for `g(v) = v` and `g(v) = tanh(k v)`.
    fn control_variates(&self, d: &Draws, pt: &InterpolationPoint, which: Derivative) -> Vec<f64> {
        let (n, np, b) = (self.n, self.np, self.beta);
        let fl = self.field_len();
        let stein = |vs: &mut dyn Iterator<Item = f64>, k: f64| -> Vec<f64> {
            let (mut y1, mut y2, mut cnt) = (0.0, 0.0, 0.0);
            for v in vs {
                let t = (k * v).tanh();
                y1 += v * v - 1.0;
                y2 += v * t - k * (1.0 - t * t);
                cnt += 1.0;
            }
            if cnt == 0.0 {
                return vec![];
            }
            vec![y1 / cnt, y2 / cnt]
        };
        match (self.model, which) {
            (_, Derivative::X(a)) => {
                let k = b * pt.x[a - 1].sqrt();
                let f = &d.fields[a - 1];
                stein(&mut f.chunks(fl).flat_map(|c| c[..n].iter().copied()), k)
            }
            (LemmaModel::Hopfield(_), Derivative::Y(a)) => {
                let k = b * pt.y[a - 1].sqrt();
                let f = &d.fields[a - 1];
                stein(&mut f.chunks(fl).flat_map(|c| c[n..n + np].iter().copied()), k)
            }
            (LemmaModel::Sk(p), Derivative::T) => {
                let k = b * p.j * (pt.t / n as f64).sqrt();
                let z = &d.quenched;
                let mut it = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| {
                    (z[i * n + j] + z[j * n + i]) / std::f64::consts::SQRT_2
                });
                stein(&mut it, k)
            }
            (LemmaModel::Hopfield(_), Derivative::T) => {
                let k = b * (pt.t / n as f64).sqrt();
                stein(&mut d.quenched.iter().copied(), k)
            }
            _ => vec![],
        }
    }
}

/// Least-squares coefficients of `y` on the columns of `x` (both centred).
fn regress(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = x.first().map_or(0, |r| r.len());
    if k == 0 || x.len() <= k + 1 {
        return vec![0.0; k];
    }
    let n = x.len() as f64;
    let xm: Vec<f64> = (0..k).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let ym = y.iter().sum::<f64>() / n;
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut rhs = nalgebra::DVector::<f64>::zeros(k);
    for (r, &yv) in x.iter().zip(y) {
        for i in 0..k {
            rhs[i] += (r[i] - xm[i]) * (yv - ym);
            for j in 0..k {
                a[(i, j)] += (r[i] - xm[i]) * (r[j] - xm[j]);
            }
        }
    }
    match a.clone().cholesky() {
        Some(c) => c.solve(&rhs).iter().copied().collect(),
        None => vec![0.0; k],
    }
}

fn get(pt: &InterpolationPoint, which: Derivative) -> f64 {
    match which {
        Derivative::T => pt.t,
        Derivative::X(a) => pt.x[a - 1],
        Derivative::Y(a) => pt.y[a - 1],
        Derivative::Z => pt.z,
        Derivative::W => pt.w,
    }
}

fn set(pt: &mut InterpolationPoint, which: Derivative, v: f64) {
    match which {
        Derivative::T => pt.t = v,
        Derivative::X(a) => pt.x[a - 1] = v,
        Derivative::Y(a) => pt.y[a - 1] = v,
        Derivative::Z => pt.z = v,
        Derivative::W => pt.w = v,
    }
}

/// Compare a common-random-number finite difference of the interpolating pressure
/// with the derivative identity evaluated from the same samples.
pub fn interpolation_derivative_check(
    n: usize,
    model: LemmaModel,
    point: &InterpolationPoint,
    which: Derivative,
    disorder_samples: usize,
    seed: u64,
    opts: &LemmaOptions,
) -> Result<LemmaCheck> {
    if n > MAX_LEMMA_N {
        return Err(RsbError::BudgetExceeded { points: 2f64.powi(n as i32), budget: 1 << MAX_LEMMA_N });
    }
    if n == 0 || disorder_samples == 0 {
        return Err(RsbError::InvalidParameter("need n >= 1 and samples >= 1".into()));
    }
    match model {
        LemmaModel::Sk(p) => p.validate()?,
        LemmaModel::Hopfield(p) => p.validate()?,
    }
    point.validate()?;
    let levels = point.thetas.len() + 1;
    if let Derivative::X(a) | Derivative::Y(a) = which {
        if a == 0 || a > levels {
            return Err(RsbError::RangeViolation(format!("level {a} outside 1..={levels}")));
        }
    }
    let sys = LemmaSystem::new(n, model);
    if matches!(model, LemmaModel::Sk(_)) && matches!(which, Derivative::Y(_) | Derivative::Z) {
        return Err(RsbError::InvalidParameter("SK has no y or z interpolation fields".into()));
    }
    let v0 = get(point, which);
    let h = opts.step_rel * v0.abs().max(0.1);
    let needs_positive = matches!(which, Derivative::T | Derivative::X(_) | Derivative::Y(_));
    if needs_positive && v0 - h < 0.0 {
        return Err(RsbError::DomainError(format!(
            "finite-difference stencil around {v0} leaves the non-negative domain"
        )));
    }
    if matches!(which, Derivative::Z) && v0 + h >= 1.0 {
        return Err(RsbError::DomainError("z stencil reaches 1".into()));
    }
    let offsets: Vec<f64> = if opts.richardson { vec![h, -h, h / 2.0, -h / 2.0] } else { vec![h, -h] };
    let stencil: Vec<InterpolationPoint> = offsets
        .iter()
        .map(|o| {
            let mut q = point.clone();
            set(&mut q, which, v0 + o);
            q
        })
        .collect();
    let inner = opts.inner_samples.max(1);
    let per_sample: Vec<Sampled> = (0..disorder_samples as u64)
        .into_par_iter()
        .map(|s| {
            let d = sys.draw(seed, s, levels, inner);
            let mut scratch = Vec::new();
            let mut hsum = vec![0.0; sys.field_len()];
            let vals: Vec<f64> = stencil
                .iter()
                .map(|q| {
                    let (stat, ovs) = sys.static_part(&d, q);
                    sys.node(q, &d, &stat, &ovs, 1, 0, &mut hsum, inner, None, &mut scratch)
                        / n as f64
                })
                .collect();
            let (stat, ovs) = sys.static_part(&d, point);
            let mut st = Stats::empty(levels);
            sys.node(point, &d, &stat, &ovs, 1, 0, &mut hsum, inner, Some(&mut st), &mut scratch);
            let (lemma, corr) = sys.bracket(point, which, &st).unwrap_or((f64::NAN, f64::NAN));
            let cv = if opts.control_variates { sys.control_variates(&d, point, which) } else { vec![] };
            Sampled { vals, lemma, corr, cv }
        })
        .collect();
    let fd_of = |v: &[f64]| {
        let d1 = (v[0] - v[1]) / (2.0 * h);
        if opts.richardson {
            (4.0 * (v[2] - v[3]) / h - d1) / 3.0
        } else {
            d1
        }
    };
    // antithetic partners are averaged before any variance estimate
    let pairs: Vec<(f64, f64, f64, Vec<f64>)> = per_sample
        .chunks(2)
        .map(|c| {
            let w = 1.0 / c.len() as f64;
            let fd = c.iter().map(|x| fd_of(&x.vals)).sum::<f64>() * w;
            let lemma = c.iter().map(|x| x.lemma).sum::<f64>() * w;
            let corr = c.iter().map(|x| x.corr).sum::<f64>() * w;
            let mut cv = vec![0.0; c[0].cv.len()];
            for x in c {
                for (a, v) in cv.iter_mut().zip(&x.cv) {
                    *a += v * w;
                }
            }
            (fd, lemma, corr, cv)
        })
        .collect();
    let np = pairs.len() as f64;
    let fd_raw = pairs.iter().map(|p| p.0).sum::<f64>() / np;
    let lemma_limit = pairs.iter().map(|p| p.1).sum::<f64>() / np;
    let correction = pairs.iter().map(|p| p.2).sum::<f64>() / np;
    let bracket = lemma_limit + correction;
    let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1 - p.2).collect();
    let cvs: Vec<Vec<f64>> = pairs.iter().map(|p| p.3.clone()).collect();
    let lambda = regress(&cvs, &diffs);
    let cv_mean: Vec<f64> = (0..lambda.len())
        .map(|j| cvs.iter().map(|r| r[j]).sum::<f64>() / np)
        .collect();
    let shift: f64 = lambda.iter().zip(&cv_mean).map(|(l, m)| l * m).sum();
    let resid: Vec<f64> = diffs
        .iter()
        .zip(&cvs)
        .map(|(dv, r)| dv - lambda.iter().zip(r).map(|(l, x)| l * x).sum::<f64>())
        .collect();
    let diff_se = mean_se(&resid).1;
    let fd = fd_raw - shift;
    let abs_diff = (fd - bracket).abs();
    let rel_diff = abs_diff / bracket.abs().max(1e-300);
    Ok(LemmaCheck {
        fd_lhs: fd,
        bracket_rhs: bracket,
        abs_diff,
        rel_diff,
        diff_se,
        lemma_limit,
        finite_sample_correction: correction,
    })
}

struct Sampled {
    vals: Vec<f64>,
    lemma: f64,
    corr: f64,
    cv: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn substreams_are_independent_of_order() {
        let a: f64 = substream(3, 5).random();
        let mut r = substream(3, 4);
        let _: f64 = r.random();
        let b: f64 = substream(3, 5).random();
        assert_eq!(a, b);
        let c: f64 = substream(3, 6).random();
        assert_ne!(a, c);
    }

    #[test]
    fn sk_enumeration_small_cases() {
        let p = SkParams::new(0.7, 1.3, 1.0).unwrap();
        let (m, se) = enumerate_sk_pressure(1, &p, 5, 1).unwrap();
        assert_eq!(m, LN_2);
        assert_eq!(se, 0.0);
        let p = SkParams::new(0.9, 1.4, 0.0).unwrap();
        let (m, _) = enumerate_sk_pressure(2, &p, 3, 1).unwrap();
        let exact = 0.5 * (4.0 * (0.9_f64 * 1.4 / 2.0).cosh()).ln();
        assert_abs_diff_eq!(m, exact, epsilon = 1e-14);
    }

    #[test]
    fn gray_code_matches_direct_sum() {
        let p = SkParams::new(1.1, 0.4, 1.0).unwrap();
        let d = SkDisorderSample::generate(7, &p, 11, 2);
        let mut direct = LogSumExp::new();
        for c in 0..(1 << 7) {
            let s: Vec<f64> = (0..7).map(|i| if c >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            direct.add(-1.1 * d.energy(&s));
        }
        assert_abs_diff_eq!(d.log_z(1.1).unwrap(), direct.value(), epsilon = 1e-11);
        let h = HopfieldDisorderSample::generate(7, 3, 5, 0, false);
        let mut direct = LogSumExp::new();
        for c in 0..(1 << 7) {
            let s: Vec<f64> = (0..7).map(|i| if c >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            direct.add(-0.8 * h.energy(&s));
        }
        assert_abs_diff_eq!(h.log_z(0.8).unwrap(), direct.value(), epsilon = 1e-11);
    }

    #[test]
    fn couplings_are_symmetric_with_zero_diagonal() {
        let p = SkParams::new(1.0, 0.5, 1.0).unwrap();
        let d = SkDisorderSample::generate(9, &p, 1, 0);
        for i in 0..9 {
            assert_eq!(d.couplings[i * 9 + i], 0.0);
            for j in 0..9 {
                assert_eq!(d.couplings[i * 9 + j], d.couplings[j * 9 + i]);
            }
        }
    }

    #[test]
    fn hopfield_enumeration_small_cases() {
        let p = HopfieldParams::new(0.8, 1.0).unwrap();
        let (m, _) = enumerate_hopfield_pressure(1, &p, 3, 0).unwrap();
        assert_abs_diff_eq!(m, LN_2 + 0.4, epsilon = 1e-14);
        let p = HopfieldParams::new(0.0, 0.3).unwrap();
        let (m, se) = enumerate_hopfield_pressure(8, &p, 4, 0).unwrap();
        assert_abs_diff_eq!(m, LN_2, epsilon = 1e-14);
        assert!(se < 1e-14);
    }

    #[test]
    fn budget_guards() {
        let p = SkParams::new(1.0, 0.0, 1.0).unwrap();
        assert!(matches!(enumerate_sk_pressure(21, &p, 1, 0), Err(RsbError::BudgetExceeded { .. })));
        let h = HopfieldParams::new(1.0, 0.1).unwrap();
        assert!(matches!(
            enumerate_hopfield_pressure(19, &h, 1, 0),
            Err(RsbError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn two_spin_metropolis_matches_boltzmann() {
        // H = -J s1 s2 with J = 1: P(s1 = s2) = e^b / (e^b + e^-b)
        let d = DisorderSample::Sk(SkDisorderSample {
            n: 2,
            couplings: vec![0.0, 1.0, 1.0, 0.0],
            seed: 0,
        });
        let beta = 0.7;
        let r = metropolis_run(&d, beta, 100_000, InitPolicy::Random, 3).unwrap();
        // mean energy per spin = -tanh(beta) / 2
        let exact = -(beta as f64).tanh() / 2.0;
        assert!((r.energy_mean - exact).abs() <= 3.0 * r.energy_se + 1e-3, "{r:?} vs {exact}");
    }

    #[test]
    fn analytic_w_derivative() {
        let p = SkParams::new(1.3, 0.8, 1.0).unwrap();
        let pt = InterpolationPoint::new(0.0, 0.4, vec![]);
        let r = interpolation_derivative_check(4, LemmaModel::Sk(p), &pt, Derivative::W, 1, 0, &LemmaOptions::default())
            .unwrap();
        let exact = 1.3 * 0.8 * (1.3_f64 * 0.8 * 0.4).tanh();
        assert_abs_diff_eq!(r.bracket_rhs, exact, epsilon = 1e-12);
        assert!(r.abs_diff <= 1e-10, "{r:?}");
    }

    #[test]
    fn histogram_counts_and_csv() {
        let mut h = OverlapHistogram::new(4);
        for q in [-1.0, -0.2, 0.0, 0.3, 1.0] {
            h.add(q);
        }
        assert_eq!(h.counts, vec![1, 1, 2, 1]);
        assert_eq!(h.total, 5);
        let csv = h.to_csv();
        assert!(csv.starts_with("bin_lo,bin_hi,count\n-1,-0.5,1\n"));
    }

    #[test]
    fn enumeration_is_deterministic_and_gauge_invariant() {
        let p = SkParams::new(1.2, 0.0, 1.0).unwrap();
        let a = enumerate_sk_pressure(9, &p, 6, 4).unwrap();
        assert_eq!(a, enumerate_sk_pressure(9, &p, 6, 4).unwrap());
        // gauge s_i -> g_i s_i with couplings J_ij g_i g_j leaves Z unchanged
        let d = SkDisorderSample::generate(9, &p, 4, 0);
        let g: Vec<f64> = (0..9).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let mut gd = d.clone();
        for i in 0..9 {
            for j in 0..9 {
                gd.couplings[i * 9 + j] *= g[i] * g[j];
            }
        }
        assert_abs_diff_eq!(d.log_z(1.2).unwrap(), gd.log_z(1.2).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn hopfield_pattern_gauge() {
        let h = HopfieldDisorderSample::generate(10, 3, 9, 1, false);
        let xi = h.retrieved_pattern.clone();
        let mut g = h.clone();
        g.retrieved_pattern = vec![1.0; 10];
        for mu in 0..2 {
            for i in 0..10 {
                g.noise_patterns[mu * 10 + i] *= xi[i];
            }
        }
        assert_abs_diff_eq!(h.log_z(1.3).unwrap(), g.log_z(1.3).unwrap(), epsilon = 1e-12);
        assert!(h.retrieved_pattern.iter().all(|&x| x == 1.0 || x == -1.0));
    }

    #[test]
    fn metropolis_infinite_temperature_and_curie_weiss() {
        let p = SkParams::new(1.0, 0.0, 1.0).unwrap();
        let d = DisorderSample::Sk(SkDisorderSample::generate(200, &p, 2, 0));
        let r = metropolis_run(&d, 0.0, 400, InitPolicy::Random, 5).unwrap();
        assert!(r.overlap_mean.abs() <= 3.0 * r.overlap_se + 1e-12, "{r:?}");
        let cw = DisorderSample::Hopfield(HopfieldDisorderSample {
            n: 500,
            p: 1,
            retrieved_pattern: vec![1.0; 500],
            noise_patterns: vec![],
            seed: 0,
        });
        let r = metropolis_run(&cw, 2.0, 400, InitPolicy::Pattern, 5).unwrap();
        // root of m = tanh(2m) by bisection
        let (mut lo, mut hi) = (0.5_f64, 1.0_f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (2.0 * mid).tanh() > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((r.overlap_mean - lo).abs() <= 0.02, "{r:?} vs {lo}");
        assert!(metropolis_run(&cw, 2.0, 50, InitPolicy::Pattern, 5).is_err());
    }

    #[test]
    fn histogram_infinite_temperature_and_ferromagnet() {
        let p = SkParams::new(1.0, 0.0, 1.0).unwrap();
        let d = DisorderSample::Sk(SkDisorderSample::generate(400, &p, 3, 0));
        let h = overlap_histogram(&d, 0.0, 2000, 41, InitPolicy::Random, 3).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), h.total);
        assert_eq!(h.mode_bin(), 20);
        let (_, sd) = h.moments();
        let clt = 1.0 / 400f64.sqrt();
        assert!(sd >= 0.8 * clt && sd <= 1.2 * clt, "{sd}");
        let f = DisorderSample::Sk(SkDisorderSample::uniform(200, 3.0));
        let h = overlap_histogram(&f, 2.0, 400, 40, InitPolicy::Pattern, 1).unwrap();
        assert_eq!(h.mode_bin(), 39);
    }

    #[test]
    fn central_difference_error_scales_with_step_squared() {
        let p = SkParams::new(1.3, 0.8, 1.0).unwrap();
        let pt = InterpolationPoint::new(0.0, 0.4, vec![]);
        let err = |step_rel: f64| {
            let o = LemmaOptions { step_rel, richardson: false, ..Default::default() };
            interpolation_derivative_check(3, LemmaModel::Sk(p), &pt, Derivative::W, 1, 0, &o)
                .unwrap()
                .abs_diff
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn finite_inner_sample_correction_restores_the_identity() {
        // with very few inner draws the infinite-sample bracket is visibly biased,
        // while the corrected bracket matches the finite difference
        let p = SkParams::new(1.5, 0.5, 1.0).unwrap();
        let mut pt = InterpolationPoint::new(0.5, 0.3, vec![0.5]);
        pt.x = vec![0.6, 0.4];
        let o = LemmaOptions { inner_samples: 4, ..Default::default() };
        let r = interpolation_derivative_check(4, LemmaModel::Sk(p), &pt, Derivative::X(2), 4000, 1, &o)
            .unwrap();
        assert!(r.abs_diff <= 4.0 * r.diff_se, "{r:?}");
        assert!((r.fd_lhs - r.lemma_limit).abs() > 4.0 * r.diff_se, "{r:?}");
    }

    #[test]
    fn lemma_argument_validation() {
        let p = SkParams::new(1.0, 0.0, 1.0).unwrap();
        let pt = InterpolationPoint::new(0.5, 0.0, vec![]);
        let o = LemmaOptions::default();
        assert!(matches!(
            interpolation_derivative_check(11, LemmaModel::Sk(p), &pt, Derivative::T, 1, 0, &o),
            Err(RsbError::BudgetExceeded { .. })
        ));
        assert!(interpolation_derivative_check(4, LemmaModel::Sk(p), &pt, Derivative::Z, 1, 0, &o).is_err());
        // x = 0 cannot be differenced through sqrt(x)
        assert!(matches!(
            interpolation_derivative_check(4, LemmaModel::Sk(p), &pt, Derivative::X(1), 1, 0, &o),
            Err(RsbError::DomainError(_))
        ));
        assert!(interpolation_derivative_check(4, LemmaModel::Sk(p), &pt, Derivative::X(2), 1, 0, &o).is_err());
    }
}
