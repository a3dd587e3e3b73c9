use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(s - s_noisy) / (s_ptn - s_noisy)`.
pub fn relative_improvement_rate(s: f64, s_noisy: f64, s_ptn: f64) -> Result<f64> {
    let den = s_ptn - s_noisy;
    if den == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok((s - s_noisy) / den)
}

/// Lanczos approximation (g = 7, n = 9) of `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const TOL: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t cumulative distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Aligned scores of two methods over the same groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedScores {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
    pub mean_difference: f64,
}

/// Dependent-samples t-test on `a - b`.
pub fn paired_t_test(p: &PairedScores) -> Result<TTest> {
    if p.a.len() != p.b.len() {
        return Err(Error::LengthMismatch(p.a.len(), p.b.len()));
    }
    let n = p.a.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let d: Vec<f64> = p.a.iter().zip(&p.b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let df = n - 1;
    let p_two_sided = incomplete_beta(df as f64 / 2.0, 0.5, df as f64 / (df as f64 + t * t));
    Ok(TTest {
        t,
        df,
        p_two_sided,
        mean_difference: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    use statrs::function::beta::beta_reg;

    #[test]
    fn improvement_rate_cases() {
        assert_eq!(relative_improvement_rate(0.9, 0.5, 0.9).unwrap(), 1.0);
        assert_eq!(relative_improvement_rate(0.5, 0.5, 0.9).unwrap(), 0.0);
        let r = relative_improvement_rate(0.8929, 0.8407, 0.8815).unwrap();
        assert!((r - 1.27941).abs() < 1e-4);
        assert!(matches!(
            relative_improvement_rate(1.0, 0.5, 0.5),
            Err(Error::ZeroDenominator)
        ));
    }

    proptest! {
        #[test]
        fn improvement_rate_affine_invariant(
            s in -10.0f64..10.0, n in -10.0f64..10.0, p in -10.0f64..10.0,
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -5.0f64..5.0,
        ) {
            prop_assume!((p - n).abs() > 1e-3);
            let r0 = relative_improvement_rate(s, n, p).unwrap();
            let r1 = relative_improvement_rate(a * s + b, a * n + b, a * p + b).unwrap();
            prop_assert!((r0 - r1).abs() <= 1e-9 * (1.0 + r0.abs()));
        }

        #[test]
        fn t_test_symmetric(seed in 0u64..200) {
            let mut r = seeded(seed);
            let a: Vec<f64> = (0..8).map(|_| r.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..8).map(|_| r.gen_range(0.0..1.0)).collect();
            let x = paired_t_test(&PairedScores { a: a.clone(), b: b.clone() }).unwrap();
            let y = paired_t_test(&PairedScores { a: b, b: a }).unwrap();
            prop_assert!((x.t + y.t).abs() < 1e-12);
            prop_assert!((x.p_two_sided - y.p_two_sided).abs() < 1e-12);
        }
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut f = 1.0f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - f.ln()).abs() < 1e-10, "{n}");
            f *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_matches_statrs() {
        let mut r = seeded(1);
        for _ in 0..500 {
            let a = r.gen_range(0.1..30.0);
            let b = r.gen_range(0.1..30.0);
            let x = r.gen_range(0.0..1.0);
            let ours = incomplete_beta(a, b, x);
            let theirs = beta_reg(a, b, x);
            assert!(
                (ours - theirs).abs() < 1e-10,
                "I_{x}({a},{b}) {ours} vs {theirs}"
            );
        }
    }

    #[test]
    fn t_cdf_matches_statrs() {
        for df in [1.0, 2.0, 5.0, 19.0, 63.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-6.0, -2.5, -0.3, 0.0, 0.7, 3.4641, 10.0] {
                assert!((student_t_cdf(t, df) - dist.cdf(t)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn t_test_cases() {
        let r = paired_t_test(&PairedScores {
            a: vec![1.0, 2.0, 3.0],
            b: vec![0.0; 3],
        })
        .unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 2);
        assert!((r.p_two_sided - 0.0742).abs() < 1e-4);

        let mut rng = seeded(9);
        let a: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 1e-9 } else { -1e-9 })
            .collect();
        let null = paired_t_test(&PairedScores { a, b }).unwrap();
        assert!(null.t.abs() < 1.0 && null.p_two_sided > 0.3);

        assert!(matches!(
            paired_t_test(&PairedScores {
                a: vec![2.0, 3.0, 4.0],
                b: vec![1.0, 2.0, 3.0]
            }),
            Err(Error::ZeroVariance)
        ));
        assert!(paired_t_test(&PairedScores {
            a: vec![1.0],
            b: vec![0.0]
        })
        .is_err());
    }
}
