//! Stable log-domain helpers and the special functions behind p-values.

use super::Real;
use crate::error::{Error, Result};

const MAX_ITER: usize = 500;

/// `log Σ exp(v_i)` via max-shift. Entries may be `-inf`.
pub fn logsumexp<T: Real>(v: &[T]) -> Result<T> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("logsumexp of an empty vector".into()));
    }
    Ok(logsumexp_unchecked(v))
}

pub(crate) fn logsumexp_unchecked<T: Real>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax<T: Real>(v: &[T]) -> Result<Vec<T>> {
    let lse = logsumexp(v)?;
    Ok(v.iter().map(|&x| x - lse).collect())
}

/// Lanczos approximation (g = 7, 9 terms) of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma<T: Real>(x: T) -> T {
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::lit(0.5);
    if x < half {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        let pi = T::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::from_count(i));
    }
    let t = x + T::lit(G) + half;
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Regularized incomplete gamma pair `(P(a,x), Q(a,x))`, each computed
/// directly on its own stable branch so the small tail stays accurate.
pub fn incomplete_gamma_pair<T: Real>(a: T, x: T) -> Result<(T, T)> {
    if !(a > T::zero()) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!("incomplete gamma needs a > 0, got {a}")));
    }
    if !(x >= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "incomplete gamma needs x >= 0, got {x}"
        )));
    }
    if x == T::zero() {
        return Ok((T::zero(), T::one()));
    }
    if x.is_infinite() {
        return Ok((T::one(), T::zero()));
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    if x < a + T::one() {
        let p = lower_series(a, x, log_prefactor).min(T::one());
        Ok((p, T::one() - p))
    } else {
        let q = upper_continued_fraction(a, x, log_prefactor).min(T::one());
        Ok((T::one() - q, q))
    }
}

fn lower_series<T: Real>(a: T, x: T, log_prefactor: T) -> T {
    let eps = T::epsilon();
    let mut ap = a;
    let mut term = T::one() / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += T::one();
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * eps {
            break;
        }
    }
    sum * log_prefactor.exp()
}

/// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn upper_continued_fraction<T: Real>(a: T, x: T, log_prefactor: T) -> T {
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / eps;
    let two = T::lit(2.0);
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let fi = T::from_count(i);
        let an = -fi * (fi - a);
        b += two;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = d * c;
        h *= delta;
        if (delta - T::one()).abs() < eps {
            break;
        }
    }
    log_prefactor.exp() * h
}

/// Regularized lower incomplete gamma `P(a, x) = γ(a, x) / Γ(a)`.
pub fn reg_lower_incomplete_gamma<T: Real>(a: T, x: T) -> Result<T> {
    incomplete_gamma_pair(a, x).map(|(p, _)| p)
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn reg_upper_incomplete_gamma<T: Real>(a: T, x: T) -> Result<T> {
    incomplete_gamma_pair(a, x).map(|(_, q)| q)
}

/// Survival function of the chi-squared distribution.
pub fn chi_squared_sf<T: Real>(stat: T, df: usize) -> Result<T> {
    if df == 0 {
        return Err(Error::InvalidArgument("chi-squared needs df >= 1".into()));
    }
    let half = T::lit(0.5);
    reg_upper_incomplete_gamma(T::from_count(df) * half, stat.max(T::zero()) * half)
}

/// Φ(x), through `erf(z) = P(½, z²)`. The negative half is taken from the
/// upper tail directly so Φ(−x) = 1 − Φ(x) holds to rounding.
pub fn standard_normal_cdf<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let (_, q) = match incomplete_gamma_pair(half, x * x * half) {
        Ok(pair) => pair,
        Err(_) => return T::nan(),
    };
    if x >= T::zero() {
        T::one() - half * q
    } else {
        half * q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use crate::numerics::{draw_normal, RandomStream};

    #[test]
    fn logsumexp_cases() {
        let ln2 = std::f64::consts::LN_2;
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - ln2).abs() < 1e-15);
        assert!((logsumexp(&[1000.0, 1000.0]).unwrap() - (1000.0 + ln2)).abs() < 1e-12);
        assert!(logsumexp::<f64>(&[]).is_err());
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn logsumexp_matches_naive_summation() {
        let mut s = RandomStream::new(3, 0);
        let v: Vec<f64> = (0..10).map(|_| s.uniform::<f64>() * 10.0 - 5.0).collect();
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&v).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0f64; 4]).unwrap(), vec![0.25; 4]);
        for c in [-30.0, 0.0, 12.5, 700.0] {
            let p = softmax(&[c, c + 3f64.ln()]).unwrap();
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        }
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut s = RandomStream::new(4, 0);
        let v: Vec<f64> = draw_normal(&mut s, 5);
        let z: f64 = v.iter().map(|x| x.exp()).sum();
        for (p, x) in softmax(&v).unwrap().iter().zip(&v) {
            assert!((p - x.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0f64).abs() < 1e-14);
        assert!(ln_gamma(2.0f64).abs() < 1e-14);
        assert!((ln_gamma(0.5f64) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0f64) - 362_880f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.1f64) - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn incomplete_gamma_closed_forms() {
        let p = reg_lower_incomplete_gamma(1.0f64, 1.0).unwrap();
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        for a in [0.3, 1.0, 4.5, 30.0] {
            assert_eq!(reg_lower_incomplete_gamma(a, 0.0f64).unwrap(), 0.0);
        }
        // P(1, x) = 1 − e^−x on the continued-fraction branch as well.
        let q = reg_upper_incomplete_gamma(1.0f64, 25.0).unwrap();
        assert!((q / (-25.0f64).exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_gamma_rejects_bad_arguments() {
        assert!(reg_lower_incomplete_gamma(0.0f64, 1.0).is_err());
        assert!(reg_lower_incomplete_gamma(-1.0f64, 1.0).is_err());
        assert!(reg_lower_incomplete_gamma(1.0f64, -0.1).is_err());
        assert!(reg_lower_incomplete_gamma(1.0f64, f64::NAN).is_err());
    }

    /// Composite Simpson on erf(√x) = (2/√π) ∫₀^√x e^{-u²} du, which equals P(½, x).
    fn half_gamma_by_quadrature(x: f64) -> f64 {
        let upper = x.sqrt();
        let n = 20_000;
        let h = upper / n as f64;
        let f = |u: f64| (-u * u).exp();
        let mut acc = f(0.0) + f(upper);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn chi_squared_one_df_matches_quadrature() {
        let oracle = half_gamma_by_quadrature(1.928_55);
        assert!((oracle - 0.9505).abs() < 1e-4);
        let p = reg_lower_incomplete_gamma(0.5f64, 1.928_55).unwrap();
        assert!((p - oracle).abs() < 1e-10, "{p} vs {oracle}");
        for x in [0.01, 0.7, 1.4999, 1.5001, 3.0, 9.0] {
            let p = reg_lower_incomplete_gamma(0.5f64, x).unwrap();
            assert!((p - half_gamma_by_quadrature(x)).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(standard_normal_cdf(0.0f64), 0.5);
        // erf series oracle: Φ(x) = ½ + (1/√π) Σ (−1)^n z^{2n+1} / (n!(2n+1)), z = x/√2
        let erf_series = |z: f64| {
            let mut term = z;
            let mut sum = z;
            for n in 1..80 {
                term *= -z * z / n as f64;
                sum += term / (2 * n + 1) as f64;
            }
            sum * 2.0 / std::f64::consts::PI.sqrt()
        };
        for x in [0.3, 1.0, 1.96, 2.5] {
            let oracle = 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
            assert!((standard_normal_cdf(x) - oracle).abs() < 1e-13, "x={x}");
        }
        assert!((standard_normal_cdf(1.96f64) - 0.9750).abs() < 1e-4);
        let x = 1.96f64;
        assert!((standard_normal_cdf(-x) - (1.0 - standard_normal_cdf(x))).abs() < 1e-12);
        assert!(standard_normal_cdf(-10.0f64) > 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let p: Vec<f32> = softmax(&[1.0f32, 2.0, 3.0]).unwrap();
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((standard_normal_cdf(1.96f32) - 0.975).abs() < 1e-4);
        let q = reg_lower_incomplete_gamma(2.0f32, 3.0).unwrap();
        assert!((q - 0.800_851_7).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn logsumexp_shift_invariance(v in proptest::collection::vec(-50.0f64..50.0, 1..12), c in -500.0f64..500.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = logsumexp(&v).unwrap() + c;
            let b = logsumexp(&shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn softmax_normalized_and_shift_invariant(v in proptest::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            for (a, b) in p.iter().zip(softmax(&shifted).unwrap()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn incomplete_gamma_monotone_in_x(a in 0.05f64..40.0) {
            let mut prev = 0.0;
            for i in 0..200 {
                let x = i as f64 * 0.4;
                let p = reg_lower_incomplete_gamma(a, x).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!(p >= prev - 1e-14, "a={} x={} p={} prev={}", a, x, p, prev);
                prev = p;
            }
        }

        #[test]
        fn normal_cdf_reflection(x in -8.0f64..8.0) {
            let lhs = standard_normal_cdf(-x);
            let rhs = 1.0 - standard_normal_cdf(x);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
