//! Sherrington-Kirkpatrick model with a signal: pressures and self-consistency maps.
//!
//! With `g = beta*J0*m + beta*J*sum_a sqrt(q_a - q_{a-1}) h_a` the level-K pressure is
//!
//! ```text
//! A = (1/theta_1) E_1 log N_1
//!   + (beta J)^2/4 [1 - 2 q_{K+1} + sum_{a=0}^{K} (theta_{a+1} - theta_a) q_{a+1}^2]
//!   - beta J0 m^2 / 2
//! ```
//!
//! which reduces to `(beta J)^2/4 (1-q)^2` at K = 0.

use serde::{Deserialize, Serialize};

use crate::quadrature::{
    gauss_expect, log_2cosh, nested_evaluate, order_parameter_channels, FieldArgument,
};
use crate::types::{validate_ansatz, Model, QuadratureSpec, Result, RsbAnsatz, RsbError, SkParams};

/// Pressure with its additive pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkEvaluation {
    pub pressure: f64,
    /// Nested entropy integral, including the log 2.
    pub integral: f64,
    /// Terms quadratic in the overlaps.
    pub overlap_source: f64,
    /// The `-beta J0 m^2 / 2` term.
    pub signal_source: f64,
}

fn check_rs(m: f64, q: f64) -> Result<()> {
    if !m.is_finite() || !(-1.0..=1.0).contains(&m) {
        return Err(RsbError::RangeViolation(format!("m = {m} outside [-1, 1]")));
    }
    if !q.is_finite() || !(0.0..=1.0).contains(&q) {
        return Err(RsbError::RangeViolation(format!("q = {q} outside [0, 1]")));
    }
    Ok(())
}

/// Field argument for a validated ansatz.
pub fn sk_field(p: &SkParams, a: &RsbAnsatz) -> FieldArgument {
    let mut prev = 0.0;
    let coeffs = a
        .qs
        .iter()
        .map(|&q| {
            let c = p.beta * p.j * (q - prev).max(0.0).sqrt();
            prev = q;
            c
        })
        .collect();
    FieldArgument::new(p.beta * a.m * p.j0, coeffs)
}

/// Replica-symmetric pressure.
pub fn sk_pressure_rs(p: &SkParams, m: f64, q: f64, spec: &QuadratureSpec) -> Result<SkEvaluation> {
    p.validate()?;
    check_rs(m, q)?;
    let b = p.beta;
    let noise = b * p.j * q.sqrt();
    let shift = b * m * p.j0;
    let integral = if noise == 0.0 {
        log_2cosh(shift)
    } else {
        gauss_expect(|z| log_2cosh(noise * z + shift), spec)?
    };
    let overlap_source = b * b * p.j * p.j / 4.0 * (1.0 - q) * (1.0 - q);
    let signal_source = -b * p.j0 / 2.0 * m * m;
    Ok(SkEvaluation {
        pressure: integral + overlap_source + signal_source,
        integral,
        overlap_source,
        signal_source,
    })
}

/// Replica-symmetric self-consistency map `(m, q) -> (m', q')`.
pub fn sk_sce_rs(p: &SkParams, m: f64, q: f64, spec: &QuadratureSpec) -> Result<(f64, f64)> {
    p.validate()?;
    check_rs(m, q)?;
    let noise = p.beta * p.j * q.sqrt();
    let shift = p.beta * m * p.j0;
    if noise == 0.0 {
        let t = shift.tanh();
        return Ok((t, t * t));
    }
    let m1 = gauss_expect(|z| (noise * z + shift).tanh(), spec)?;
    let q1 = gauss_expect(|z| (noise * z + shift).tanh().powi(2), spec)?;
    Ok((m1, q1))
}

fn overlap_source(p: &SkParams, a: &RsbAnsatz) -> f64 {
    let k = a.k;
    let theta = |i: usize| -> f64 {
        match i {
            0 => 0.0,
            i if i == k + 1 => 1.0,
            i => a.thetas[i - 1],
        }
    };
    let mut bracket = 1.0 - 2.0 * a.qs[k];
    for i in 0..=k {
        bracket += (theta(i + 1) - theta(i)) * a.qs[i] * a.qs[i];
    }
    p.beta * p.beta * p.j * p.j / 4.0 * bracket
}

/// Level-K pressure for any K >= 0.
pub fn sk_pressure_krsb(p: &SkParams, a: &RsbAnsatz, spec: &QuadratureSpec) -> Result<SkEvaluation> {
    p.validate()?;
    let a = validate_ansatz(a.clone(), Model::Sk)?;
    let arg = sk_field(p, &a);
    let integral = nested_evaluate(&arg, &a.thetas, &[], spec)?.log_cosh;
    let overlap_source = overlap_source(p, &a);
    let signal_source = -p.beta * p.j0 / 2.0 * a.m * a.m;
    Ok(SkEvaluation {
        pressure: integral + overlap_source + signal_source,
        integral,
        overlap_source,
        signal_source,
    })
}

/// Level-K self-consistency map; thetas pass through unchanged.
pub fn sk_sce_krsb(p: &SkParams, a: &RsbAnsatz, spec: &QuadratureSpec) -> Result<RsbAnsatz> {
    p.validate()?;
    let a = validate_ansatz(a.clone(), Model::Sk)?;
    let arg = sk_field(p, &a);
    let chs = order_parameter_channels(a.k);
    let out = nested_evaluate(&arg, &a.thetas, &chs, spec)?.channels;
    Ok(RsbAnsatz::sk(out[0], out[1..].to_vec(), a.thetas.clone()))
}
