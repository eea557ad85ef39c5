//! Hopfield model: pressures, self-consistency maps, the Q recursion and the
//! closed-form conjugate overlaps.
//!
//! The field is `g = beta*m + sum_a sqrt(alpha*beta*(p_a - p_{a-1})) h_a`. The
//! denominators are
//!
//! ```text
//! Q_{K+1} = 1 - beta (1 - q_{K+1})
//! Q_a     = Q_{a+1} - beta theta_a (q_{a+1} - q_a)
//! ```
//!
//! and the pressure is
//!
//! ```text
//! A = (1/theta_1) E_1 log N_1
//!   + sum_{a=1}^{K} alpha/(2 theta_a) log(Q_{a+1}/Q_a) - alpha/2 log Q_{K+1}
//!   + alpha beta q_1 / (2 Q_1) - beta m^2 / 2
//!   - alpha beta/2 [p_{K+1}(1 - q_{K+1}) + sum_{a=1}^{K} theta_a (p_{a+1} q_{a+1} - p_a q_a)]
//! ```

use crate::quadrature::{
    gauss_expect, log_2cosh, nested_evaluate, order_parameter_channels, FieldArgument,
};
use crate::types::{
    validate_ansatz, HopfieldParams, Model, QuadratureSpec, Result, RsbAnsatz, RsbError,
};

/// The denominators Q_1..Q_{K+1}.
#[derive(Debug, Clone, PartialEq)]
pub struct QDenominators {
    pub values: Vec<f64>,
}

fn q_recursion(beta: f64, qs: &[f64], thetas: &[f64]) -> Result<Vec<f64>> {
    let k = thetas.len();
    let mut vals = vec![0.0; k + 1];
    vals[k] = 1.0 - beta * (1.0 - qs[k]);
    for a in (0..k).rev() {
        vals[a] = vals[a + 1] - beta * thetas[a] * (qs[a + 1] - qs[a]);
    }
    // report the outermost failing level first
    if let Some((i, &v)) = vals.iter().enumerate().rev().find(|(_, v)| !(**v > 0.0)) {
        return Err(RsbError::SusceptibilityDivergence { index: i + 1, value: v });
    }
    Ok(vals)
}

fn p_from_q(beta: f64, qs: &[f64], qd: &[f64]) -> Vec<f64> {
    let mut ps = Vec::with_capacity(qs.len());
    ps.push(beta * qs[0] / (qd[0] * qd[0]));
    for h in 1..qs.len() {
        let inc = beta * (qs[h] - qs[h - 1]) / (qd[h] * qd[h - 1]);
        ps.push(ps[h - 1] + inc);
    }
    ps
}

/// Q_1..Q_{K+1}; fails with `SusceptibilityDivergence` if any is non-positive.
pub fn hop_q_denominators(p: &HopfieldParams, a: &RsbAnsatz) -> Result<QDenominators> {
    p.validate()?;
    check_shape(a)?;
    Ok(QDenominators { values: q_recursion(p.beta, &a.qs, &a.thetas)? })
}

/// Conjugate overlaps p_1..p_{K+1} implied by the qs and thetas.
pub fn hop_p_closed_form(p: &HopfieldParams, a: &RsbAnsatz) -> Result<Vec<f64>> {
    let qd = hop_q_denominators(p, a)?;
    Ok(p_from_q(p.beta, &a.qs, &qd.values))
}

/// Copy of `a` with `ps` replaced by the closed form.
pub fn with_closed_form_ps(p: &HopfieldParams, a: &RsbAnsatz) -> Result<RsbAnsatz> {
    let ps = hop_p_closed_form(p, a)?;
    Ok(RsbAnsatz { ps, ..a.clone() })
}

fn check_shape(a: &RsbAnsatz) -> Result<()> {
    if a.qs.len() != a.k + 1 || a.thetas.len() != a.k {
        return Err(RsbError::ShapeMismatch(format!(
            "k = {} with {} qs and {} thetas",
            a.k,
            a.qs.len(),
            a.thetas.len()
        )));
    }
    Ok(())
}

/// Field argument built from the ansatz ps.
pub fn hop_field(p: &HopfieldParams, m: f64, ps: &[f64]) -> FieldArgument {
    let mut prev = 0.0;
    let coeffs = ps
        .iter()
        .map(|&pa| {
            let c = (p.alpha * p.beta * (pa - prev)).max(0.0).sqrt();
            prev = pa;
            c
        })
        .collect();
    FieldArgument::new(p.beta * m, coeffs)
}

/// Replica-symmetric pressure at `(m, q, p)`.
pub fn hop_pressure_rs(p: &HopfieldParams, m: f64, q: f64, pp: f64, spec: &QuadratureSpec) -> Result<f64> {
    p.validate()?;
    let (b, al) = (p.beta, p.alpha);
    let den = 1.0 - b * (1.0 - q);
    if !(den > 0.0) {
        return Err(RsbError::SusceptibilityDivergence { index: 1, value: den });
    }
    if !(pp >= 0.0) {
        return Err(RsbError::RangeViolation(format!("p = {pp} is negative")));
    }
    let noise = (al * b * pp).sqrt();
    let integral = if noise == 0.0 {
        log_2cosh(b * m)
    } else {
        gauss_expect(|z| log_2cosh(b * m + noise * z), spec)?
    };
    Ok(integral - b / 2.0 * (al * pp * (1.0 - q) + m * m) + al / 2.0 * b * q / den
        - al / 2.0 * den.ln())
}

/// Replica-symmetric map `(m, q) -> (m', q', p')` with `p' = beta q / (1 - beta(1-q))^2`.
pub fn hop_sce_rs(p: &HopfieldParams, m: f64, q: f64, spec: &QuadratureSpec) -> Result<(f64, f64, f64)> {
    p.validate()?;
    let b = p.beta;
    let den = 1.0 - b * (1.0 - q);
    if !(den > 0.0) {
        return Err(RsbError::SusceptibilityDivergence { index: 1, value: den });
    }
    let p1 = b * q / (den * den);
    let noise = (p.alpha * b * p1).sqrt();
    if noise == 0.0 {
        let t = (b * m).tanh();
        return Ok((t, t * t, p1));
    }
    let m1 = gauss_expect(|z| (b * m + noise * z).tanh(), spec)?;
    let q1 = gauss_expect(|z| (b * m + noise * z).tanh().powi(2), spec)?;
    Ok((m1, q1, p1))
}

/// Level-K pressure, using the ps stored in the ansatz.
pub fn hop_pressure_krsb(p: &HopfieldParams, a: &RsbAnsatz, spec: &QuadratureSpec) -> Result<f64> {
    p.validate()?;
    let a = validate_ansatz(a.clone(), Model::Hopfield)?;
    let qd = q_recursion(p.beta, &a.qs, &a.thetas)?;
    let (b, al, k) = (p.beta, p.alpha, a.k);
    let integral = nested_evaluate(&hop_field(p, a.m, &a.ps), &a.thetas, &[], spec)?.log_cosh;
    let mut logs = -al / 2.0 * qd[k].ln();
    for z in 0..k {
        logs += al / (2.0 * a.thetas[z]) * (qd[z + 1] / qd[z]).ln();
    }
    let mut sources = -b / 2.0 * a.m * a.m - al * b / 2.0 * a.ps[k] * (1.0 - a.qs[k]);
    for i in 0..k {
        sources -= al * b / 2.0 * a.thetas[i] * (a.ps[i + 1] * a.qs[i + 1] - a.ps[i] * a.qs[i]);
    }
    Ok(integral + logs + al * b / 2.0 * a.qs[0] / qd[0] + sources)
}

/// Level-K map. Fields use the ps implied by the current qs; the returned ps are the
/// closed form evaluated at the new qs.
pub fn hop_sce_krsb(p: &HopfieldParams, a: &RsbAnsatz, spec: &QuadratureSpec) -> Result<RsbAnsatz> {
    p.validate()?;
    let a = validate_ansatz(a.clone(), Model::Hopfield)?;
    let qd = q_recursion(p.beta, &a.qs, &a.thetas)?;
    let ps = p_from_q(p.beta, &a.qs, &qd);
    let arg = hop_field(p, a.m, &ps);
    let out = nested_evaluate(&arg, &a.thetas, &order_parameter_channels(a.k), spec)?.channels;
    let qs = out[1..].to_vec();
    let qd_new = q_recursion(p.beta, &qs, &a.thetas)?;
    let ps_new = p_from_q(p.beta, &qs, &qd_new);
    Ok(RsbAnsatz::hopfield(out[0], qs, ps_new, a.thetas.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn q_denominator_examples() {
        let p = HopfieldParams::new(1.0, 0.1).unwrap();
        let rs1 = RsbAnsatz::hopfield(0.0, vec![1.0], vec![0.0], vec![]);
        assert_eq!(hop_q_denominators(&p, &rs1).unwrap().values, vec![1.0]);
        let rs0 = RsbAnsatz::hopfield(0.0, vec![0.0], vec![0.0], vec![]);
        assert!(matches!(
            hop_q_denominators(&p, &rs0),
            Err(RsbError::SusceptibilityDivergence { .. })
        ));
        let p2 = HopfieldParams::new(2.0, 0.1).unwrap();
        let a = RsbAnsatz::hopfield(0.0, vec![0.5, 0.8], vec![0.0, 0.0], vec![0.5]);
        let v = hop_q_denominators(&p2, &a).unwrap().values;
        assert_abs_diff_eq!(v[1], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn p_closed_form_examples() {
        let p = HopfieldParams::new(1.5, 0.1).unwrap();
        let zero = RsbAnsatz::hopfield(0.0, vec![0.0, 0.0], vec![0.0, 0.0], vec![0.4]);
        let p15 = HopfieldParams::new(0.5, 0.1).unwrap();
        assert_eq!(hop_p_closed_form(&p15, &zero).unwrap(), vec![0.0, 0.0]);
        let eq = RsbAnsatz::hopfield(0.0, vec![0.6, 0.6], vec![0.0, 0.0], vec![0.4]);
        let ps = hop_p_closed_form(&p, &eq).unwrap();
        let rs = 1.5 * 0.6 / (1.0 - 1.5 * 0.4_f64).powi(2);
        assert_abs_diff_eq!(ps[0], rs, epsilon = 1e-14);
        assert_abs_diff_eq!(ps[1], rs, epsilon = 1e-14);
    }

    #[test]
    fn p_closed_form_k2_transcription() {
        let (b, q1, q2, q3, t1, t2) = (1.2, 0.1, 0.4, 0.7, 0.3, 0.6);
        let p = HopfieldParams::new(b, 0.1).unwrap();
        let a = RsbAnsatz::hopfield(0.0, vec![q1, q2, q3], vec![0.0; 3], vec![t1, t2]);
        let ps = hop_p_closed_form(&p, &a).unwrap();
        // denominators with the top level written in terms of q3
        let d3 = 1.0 - b * (1.0 - q3);
        let d2 = 1.0 - b * ((1.0 - q3) + t2 * (q3 - q2));
        let d1 = 1.0 - b * ((1.0 - q3) + t1 * (q2 - q1) + t2 * (q3 - q2));
        let p1 = b * q1 / (d1 * d1);
        let p2 = p1 + b * (q2 - q1) / (d1 * d2);
        let p3 = p2 + b * (q3 - q2) / (d3 * d2);
        assert_abs_diff_eq!(ps[0], p1, epsilon = 1e-12);
        assert_abs_diff_eq!(ps[1], p2, epsilon = 1e-12);
        assert_abs_diff_eq!(ps[2], p3, epsilon = 1e-12);
    }

    #[test]
    fn rs_trivial_values() {
        let s = spec();
        let p = HopfieldParams::new(1.7, 0.0).unwrap();
        assert_abs_diff_eq!(hop_pressure_rs(&p, 0.0, 0.8, 0.3, &s).unwrap(), LN_2, epsilon = 1e-15);
        let m: f64 = 0.6;
        let cw = LN_2 + (1.7 * m).cosh().ln() - 1.7 * m * m / 2.0;
        assert_abs_diff_eq!(hop_pressure_rs(&p, m, 0.8, 0.3, &s).unwrap(), cw, epsilon = 1e-14);
        let pa = HopfieldParams::new(1.5, 0.2).unwrap();
        let (m1, q1, p1) = hop_sce_rs(&pa, 0.4, 0.9, &s).unwrap();
        assert!(p1 > 0.0 && m1 > 0.0 && q1 > 0.0);
        let pz = HopfieldParams::new(0.5, 0.2).unwrap();
        let (m1, q1, p1) = hop_sce_rs(&pz, 0.4, 0.0, &s).unwrap();
        assert_eq!(p1, 0.0);
        assert_abs_diff_eq!(m1, 0.2_f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(q1, 0.2_f64.tanh().powi(2), epsilon = 1e-15);
        let p0 = HopfieldParams::new(0.0, 0.2).unwrap();
        assert_eq!(hop_sce_rs(&p0, 0.4, 0.3, &s).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn k1_collapse_equals_rs() {
        let s = spec();
        let p = HopfieldParams::new(1.8, 0.07).unwrap();
        let (q, pp) = (0.8, 0.9);
        let rs = hop_pressure_rs(&p, 0.5, q, pp, &s).unwrap();
        for theta in [0.2, 0.5, 0.8] {
            let a = RsbAnsatz::hopfield(0.5, vec![q, q], vec![pp, pp], vec![theta]);
            assert_abs_diff_eq!(hop_pressure_krsb(&p, &a, &s).unwrap(), rs, epsilon = 1e-10);
        }
        let a0 = RsbAnsatz::hopfield(0.5, vec![q], vec![pp], vec![]);
        assert_abs_diff_eq!(hop_pressure_krsb(&p, &a0, &s).unwrap(), rs, epsilon = 1e-12);
    }

    #[test]
    fn k1_matches_printed_closed_form() {
        let s = spec();
        let (al, b, q1, q2, th, m) = (0.1, 2.0, 0.4, 0.7, 0.5, 0.4);
        let p = HopfieldParams::new(b, al).unwrap();
        let a = with_closed_form_ps(&p, &RsbAnsatz::hopfield(m, vec![q1, q2], vec![0.0; 2], vec![th]))
            .unwrap();
        let (p1, p2) = (a.ps[0], a.ps[1]);
        let arg = FieldArgument::new(b * m, vec![(al * b * p1).sqrt(), (al * b * (p2 - p1)).sqrt()]);
        let integral = crate::quadrature::nested_log_cosh_expect(&arg, &[th], &s).unwrap();
        let d = 1.0 - (1.0 - q2) * b - th * b * (q2 - q1);
        let printed = integral + al / (2.0 * th) * (1.0 + b * th * (q2 - q1) / d).ln()
            - al / 2.0 * (1.0 - b * (1.0 - q2)).ln()
            + al * b / 2.0 * q1 / d
            - b * m * m / 2.0
            - al * b / 2.0 * p2 * (1.0 - q2)
            - al * b / 2.0 * th * (p2 * q2 - p1 * q1);
        assert_abs_diff_eq!(hop_pressure_krsb(&p, &a, &s).unwrap(), printed, epsilon = 1e-9);
    }

    #[test]
    fn domain_guard_never_returns_numbers() {
        let s = spec();
        let p = HopfieldParams::new(3.0, 0.1).unwrap();
        let a = RsbAnsatz::hopfield(0.0, vec![0.2, 0.3], vec![0.1, 0.2], vec![0.5]);
        assert!(matches!(hop_pressure_krsb(&p, &a, &s), Err(RsbError::SusceptibilityDivergence { .. })));
        assert!(matches!(hop_sce_krsb(&p, &a, &s), Err(RsbError::SusceptibilityDivergence { .. })));
        assert!(matches!(hop_pressure_rs(&p, 0.0, 0.2, 0.1, &s), Err(RsbError::SusceptibilityDivergence { .. })));
        assert!(matches!(hop_sce_rs(&p, 0.0, 0.2, &s), Err(RsbError::SusceptibilityDivergence { .. })));
    }

    #[test]
    fn beta_zero_map_is_zero() {
        let p = HopfieldParams::new(0.0, 0.1).unwrap();
        let a = RsbAnsatz::hopfield(0.3, vec![0.2, 0.5], vec![0.0, 0.0], vec![0.5]);
        let out = hop_sce_krsb(&p, &a, &spec()).unwrap();
        assert_eq!(out.m, 0.0);
        assert!(out.qs.iter().chain(&out.ps).all(|&v| v == 0.0));
    }
}
