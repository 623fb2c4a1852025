//! Log-gamma, regularized incomplete gamma and chi-squared tail functions.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Natural log of the gamma function for `z > 0` (Lanczos, g = 7).
pub fn log_gamma(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("log_gamma needs a finite z > 0, got {z}")));
    }
    Ok(ln_gamma_unchecked(z))
}

pub(crate) fn ln_gamma_unchecked(z: f64) -> f64 {
    use std::f64::consts::PI;
    if z == 1.0 || z == 2.0 {
        return 0.0;
    }
    if z < 0.5 {
        // reflection: Γ(z)Γ(1-z) = π / sin(πz)
        return (PI / (PI * z).sin()).ln() - ln_gamma_unchecked(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Lower regularized incomplete gamma by its power series; valid for `x < a + 1`.
fn lower_series(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma_a).exp()
}

/// Upper regularized incomplete gamma by modified Lentz continued fraction;
/// valid for `x >= a + 1`.
fn upper_fraction(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma_a).exp() * h
}

/// `Q(a, x) = Γ(a, x) / Γ(a)` for `a > 0`, `x >= 0`.
pub(crate) fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let lg = ln_gamma_unchecked(a);
    if x < a + 1.0 {
        (1.0 - lower_series(a, x, lg)).clamp(0.0, 1.0)
    } else {
        upper_fraction(a, x, lg).clamp(0.0, 1.0)
    }
}

fn check_df(d: usize) -> Result<()> {
    if d < 1 {
        return Err(Error::Domain("chi-squared degrees of freedom must be >= 1".into()));
    }
    Ok(())
}

/// Upper tail `P(χ²(d) >= x)`.
pub fn chisq_sf(d: usize, x: f64) -> Result<f64> {
    check_df(d)?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("chisq_sf needs x >= 0, got {x}")));
    }
    Ok(chisq_sf_unchecked(d, x))
}

#[inline]
pub(crate) fn chisq_sf_unchecked(d: usize, x: f64) -> f64 {
    if d == 2 {
        return (-0.5 * x).exp();
    }
    gamma_q(0.5 * d as f64, 0.5 * x)
}

/// Density of `χ²(d)` at `x`.
pub fn chisq_pdf(d: usize, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let k = 0.5 * d as f64;
    if x == 0.0 {
        return match d {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        };
    }
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma_unchecked(k)).exp()
}

/// Inverse upper tail: the `x` with `P(χ²(d) >= x) = p`.
///
/// Newton iterations on `ln sf(x) - ln p`, safeguarded by a bisection bracket.
pub fn chisq_isf(d: usize, p: f64) -> Result<f64> {
    check_df(d)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("chisq_isf needs p in (0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(0.0);
    }
    if d == 2 {
        return Ok(-2.0 * p.ln());
    }
    let target = p.ln();
    let mut lo = 0.0_f64;
    let mut hi = (d as f64).max(1.0);
    while chisq_sf_unchecked(d, hi) > p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..500 {
        let sf = chisq_sf_unchecked(d, x);
        if sf > p {
            lo = x;
        } else {
            hi = x;
        }
        let g = sf.ln() - target;
        let slope = -chisq_pdf(d, x) / sf;
        let mut next = x - g / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Two-sided standard normal p-value `P(|N(0,1)| >= |t|)`.
pub fn normal_two_sided_p(t: f64) -> f64 {
    chisq_sf_unchecked(1, t * t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    #[test]
    fn log_gamma_known_values() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-15);
        assert!(log_gamma(2.0).unwrap().abs() < 1e-15);
        assert!((log_gamma(0.5).unwrap() - 0.5 * PI.ln()).abs() < 1e-13);
        assert!((log_gamma(1.5).unwrap() - (PI.sqrt() / 2.0).ln()).abs() < 1e-13);
        assert!((log_gamma(1.5).unwrap() + 0.120_782).abs() < 1e-6);
        assert!((log_gamma(10.0).unwrap() - 362_880f64.ln()).abs() < 1e-12);
        assert!((log_gamma(0.1).unwrap() - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn log_gamma_recurrence() {
        for i in 1..200 {
            let z = 0.05 * i as f64;
            let lhs = log_gamma(z + 1.0).unwrap();
            let rhs = z.ln() + log_gamma(z).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "z = {z}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn log_gamma_domain() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn chisq_sf_closed_forms() {
        for d in 1..10 {
            assert_eq!(chisq_sf(d, 0.0).unwrap(), 1.0);
        }
        assert!((chisq_sf(2, 2.0 * LN_2).unwrap() - 0.5).abs() < 1e-15);
        // d = 1: erfc(sqrt(x/2)); d = 4: (1 + x/2) e^{-x/2}
        for &x in &[0.3f64, 1.0, 4.0, 9.0, 25.0, 60.0] {
            let q4 = (1.0 + x / 2.0) * (-x / 2.0).exp();
            assert!((chisq_sf(4, x).unwrap() - q4).abs() < 1e-14);
        }
        assert!((chisq_sf(1, 1.0).unwrap() - 0.317_310_507_862_914_1).abs() < 1e-13);
    }

    #[test]
    fn chisq_sf_domain() {
        assert!(chisq_sf(0, 1.0).is_err());
        assert!(chisq_sf(3, -0.1).is_err());
        assert_eq!(chisq_sf(3, f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn chisq_isf_examples() {
        assert_eq!(chisq_isf(5, 1.0).unwrap(), 0.0);
        assert!((chisq_isf(2, 0.05).unwrap() - 2.0 * 20f64.ln()).abs() < 1e-12);
        assert!((chisq_isf(3, 0.05).unwrap() - 7.814_728).abs() < 1e-5);
        assert!(chisq_isf(3, 0.0).is_err());
        assert!(chisq_isf(3, 1.5).is_err());
    }

    #[test]
    fn isf_inverts_sf() {
        for d in 1..=6 {
            for &p in &[0.5, 0.05, 1e-3, 1e-5] {
                let x = chisq_isf(d, p).unwrap();
                assert!((chisq_sf(d, x).unwrap() - p).abs() < 1e-9 * p.max(1e-3), "d={d} p={p}");
            }
        }
    }

    #[test]
    fn sf_monotone_in_x_and_d() {
        for d in 1..8 {
            let mut prev = 1.0;
            for i in 1..400 {
                let v = chisq_sf(d, 0.1 * i as f64).unwrap();
                assert!(v < prev, "d={d} i={i}");
                prev = v;
            }
        }
        for &x in &[0.5, 3.0, 12.0] {
            for d in 1..20 {
                assert!(chisq_sf(d + 1, x).unwrap() > chisq_sf(d, x).unwrap());
            }
        }
    }

    #[test]
    fn normal_two_sided() {
        assert_eq!(normal_two_sided_p(0.0), 1.0);
        assert!((normal_two_sided_p(1.959_963_984_540_054) - 0.05).abs() < 1e-12);
        assert_eq!(normal_two_sided_p(-1.5), normal_two_sided_p(1.5));
    }
}
