//! Rank and linear correlation with significance.
//!
//! The density/importance comparisons all reduce to Spearman or Pearson
//! coefficients over a few dozen heads, so this module keeps the estimators
//! simple and exact: fractional average ranks for ties, Pearson over ranks
//! for Spearman, and two p-value modes — a t-approximation (the default) and
//! exact permutation enumeration for small n (the oracle the t-approximation
//! is tested against).

use crate::error::{Error, Result};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Largest `n` for which exact permutation enumeration is allowed (n! grows
/// fast; 10! = 3.6M coefficient evaluations is the practical ceiling).
pub const PERMUTATION_MAX_N: usize = 10;

/// Tolerance used when counting permutations at least as extreme as the
/// observed coefficient. Permutations that are mathematically tied with the
/// observed value (the identity permutation, symmetry images) can differ by
/// an ulp when recomputed through a different summation order; the slack
/// makes the count independent of that order. It is part of the documented
/// contract so independent implementations agree.
pub const PERMUTATION_TIE_EPS: f64 = 1e-9;

/// How to turn a coefficient into a p-value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PValueMethod {
    /// Two-sided t-approximation with n − 2 degrees of freedom.
    TApprox,
    /// Exact two-sided permutation enumeration (n ≤ [`PERMUTATION_MAX_N`]).
    Permutation,
}

/// A correlation estimate with its significance.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Correlation {
    pub coefficient: f64,
    pub p_value: f64,
    pub n: usize,
}

fn check_pair(x: &[f64], y: &[f64], what: &'static str) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::TooFewSamples {
            what,
            min: 3,
            got: x.len(),
        });
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::ZeroVariance { what });
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, "pearson")?;
    Ok(pearson_unchecked(x, y))
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    sxy / (sxx * syy).sqrt()
}

/// Fractional average ranks (1-based); tied values share the mean of the
/// ranks they span.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("NaN in rank input"));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) are tied: average of ranks i+1 ..= j+1.
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson over fractional ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, "spearman")?;
    Ok(pearson_unchecked(&ranks(x), &ranks(y)))
}

/// Two-sided p-value for a correlation coefficient via the t-statistic
/// `t = r·sqrt((n−2)/(1−r²))` with n − 2 degrees of freedom. `|r| = 1`
/// yields p = 0.
fn t_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// Exact two-sided permutation p-value: the fraction of permutations of `y`
/// whose coefficient is at least as extreme as the observed one (within
/// [`PERMUTATION_TIE_EPS`]).
fn permutation_p(x: &[f64], y: &[f64], coef: fn(&[f64], &[f64]) -> f64) -> Result<f64> {
    let n = x.len();
    if n > PERMUTATION_MAX_N {
        return Err(Error::PermutationTooLarge {
            max: PERMUTATION_MAX_N,
            got: n,
        });
    }
    let observed = coef(x, y).abs();
    let mut perm = y.to_vec();
    let mut count: u64 = 0;
    let mut total: u64 = 0;
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    let mut tally = |p: &[f64]| {
        total += 1;
        if coef(x, p).abs() >= observed - PERMUTATION_TIE_EPS {
            count += 1;
        }
    };
    tally(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            tally(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(count as f64 / total as f64)
}

/// Pearson correlation with significance.
pub fn pearson_test(x: &[f64], y: &[f64], method: PValueMethod) -> Result<Correlation> {
    let r = pearson(x, y)?;
    let p = match method {
        PValueMethod::TApprox => t_p_value(r, x.len()),
        PValueMethod::Permutation => permutation_p(x, y, pearson_unchecked)?,
    };
    Ok(Correlation {
        coefficient: r,
        p_value: p,
        n: x.len(),
    })
}

/// Spearman correlation with significance.
pub fn spearman_test(x: &[f64], y: &[f64], method: PValueMethod) -> Result<Correlation> {
    let rho = spearman(x, y)?;
    let p = match method {
        PValueMethod::TApprox => t_p_value(rho, x.len()),
        PValueMethod::Permutation => {
            let (rx, ry) = (ranks(x), ranks(y));
            permutation_p(&rx, &ry, pearson_unchecked)?
        }
    };
    Ok(Correlation {
        coefficient: rho,
        p_value: p,
        n: x.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spearman_one_swap_pair() {
        // Ranks are the values themselves; sum of squared rank differences
        // is 4, so the classical formula gives 1 - 6*4/(5*24) = 0.8.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        assert_relative_eq!(spearman(&x, &y).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn spearman_monotone_is_one_regardless_of_scale() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [10.0, 100.0, 1000.0, 10000.0];
        assert_relative_eq!(spearman(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        let y_rev: Vec<f64> = y.iter().rev().cloned().collect();
        assert_relative_eq!(spearman(&x, &y_rev).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_hand_value() {
        // cov = 3, var_x = 2, var_y = 42/9  =>  r = 9/sqrt(84).
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 2.0, 3.0];
        assert_relative_eq!(
            pearson(&x, &y).unwrap(),
            9.0 / 84.0_f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn classical_formula_matches_on_tie_free_input() {
        // 1 - 6*sum(d^2)/(n(n^2-1)) must agree with Pearson-over-ranks when
        // there are no ties.
        let x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.0, 6.0];
        let y = [2.0, 7.0, 1.0, 8.0, 2.5, 9.0, 4.0];
        let (rx, ry) = (ranks(&x), ranks(&y));
        let n = x.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let classical = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert_relative_eq!(spearman(&x, &y).unwrap(), classical, epsilon = 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn permutation_p_spearman_exact_count() {
        // For n = 5 the permutation distribution of sum(d^2) is known:
        // P(|rho| >= 0.8) = 16/120 (8 permutations on each tail).
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let c = spearman_test(&x, &y, PValueMethod::Permutation).unwrap();
        assert_relative_eq!(c.p_value, 16.0 / 120.0, epsilon = 1e-12);
    }

    #[test]
    fn t_approx_p_is_sane() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let c = spearman_test(&x, &y, PValueMethod::TApprox).unwrap();
        // t = 0.8*sqrt(3/0.36) ≈ 2.31 on 3 df => p ≈ 0.104.
        assert!(c.p_value > 0.08 && c.p_value < 0.13, "p = {}", c.p_value);
    }

    #[test]
    fn perfect_correlation_p_is_zero() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        let c = pearson_test(&x, &y, PValueMethod::TApprox).unwrap();
        assert_eq!(c.coefficient, 1.0);
        assert_eq!(c.p_value, 0.0);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let x = [1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(pearson(&x, &y), Err(Error::ZeroVariance { .. })));
        assert!(matches!(spearman(&y, &x), Err(Error::ZeroVariance { .. })));
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(matches!(
            pearson(&[1.0, 2.0], &[3.0, 4.0]),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn permutation_rejects_large_n() {
        let x: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..11).map(|i| (i * i) as f64).collect();
        assert!(matches!(
            pearson_test(&x, &y, PValueMethod::Permutation),
            Err(Error::PermutationTooLarge { .. })
        ));
    }
}
