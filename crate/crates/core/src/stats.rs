//! Kolmogorov–Smirnov normality check and two-group Kruskal–Wallis test,
//! and their application to uncertainty scores of correct vs. wrong predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::UncertaintyRecord;
use crate::numerics::{chi_squared_sf, standard_normal_cdf, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult<T> {
    pub statistic: T,
    pub p_value: T,
    /// Degrees of freedom of the chi-squared reference (Kruskal–Wallis only).
    pub df: Option<usize>,
    pub group_sizes: Vec<usize>,
}

/// Note attached to every KS result: the normal's parameters are estimated
/// from the sample, and the plain asymptotic p-value is used.
pub const KS_METHOD_NOTE: &str =
    "one-sample KS against N(sample mean, sample sd); asymptotic Kolmogorov p-value, no Lilliefors correction";

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    if lambda < 1.18 {
        // P(K ≤ λ) = √(2π)/λ Σ exp(−(2k−1)²π²/(8λ²))
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (-m * m * pi2 / (8.0 * lambda * lambda)).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf).clamp(0.0, 1.0)
    } else {
        let mut sf = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sf += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * sf).clamp(0.0, 1.0)
    }
}

/// `sup_x |F_n(x) − Φ((x − m̂)/ŝ)|` with `ŝ` the `n−1` sample deviation.
pub fn ks_statistic<T: Real>(sample: &[T]) -> Result<T> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "KS statistic needs >= 2 values, got {n}"
        )));
    }
    let nf = T::from_count(n);
    let mean = sample.iter().copied().sum::<T>() / nf;
    let var = sample.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / T::from_count(n - 1);
    let sd = var.sqrt();
    if !(sd > T::zero()) || !sd.is_finite() {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let mut d = T::zero();
    for (i, &x) in sorted.iter().enumerate() {
        let f = standard_normal_cdf((x - mean) / sd);
        let above = T::from_count(i + 1) / nf - f;
        let below = f - T::from_count(i) / nf;
        d = d.max(above).max(below);
    }
    Ok(d)
}

pub fn ks_normality<T: Real>(sample: &[T]) -> Result<TestResult<T>> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!(
            "KS normality test needs >= 8 values, got {n}"
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sample holds non-finite values".into()));
    }
    let d = ks_statistic(sample)?;
    let p = kolmogorov_sf((n as f64).sqrt() * d.to_f64_lossy());
    Ok(TestResult {
        statistic: d,
        p_value: T::lit(p),
        df: None,
        group_sizes: vec![n],
    })
}

/// Mid-ranks (1-based) of `values`; ties share the mean of their positions.
/// Also returns `Σ (t³ − t)` over tie groups.
fn mid_ranks<T: Real>(values: &[T]) -> (Vec<T>, T) {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![T::zero(); n];
    let mut ties = T::zero();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = T::from_count(start + 1 + end) / T::lit(2.0);
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        let t = T::from_count(end - start);
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

/// Two-group Kruskal–Wallis H with the classical tie correction; `p` from
/// the chi-squared distribution with one degree of freedom.
pub fn kruskal_wallis<T: Real>(group_a: &[T], group_b: &[T]) -> Result<TestResult<T>> {
    let (na, nb) = (group_a.len(), group_b.len());
    if na == 0 || nb == 0 {
        return Err(Error::InsufficientData(format!(
            "Kruskal–Wallis needs two non-empty groups, got sizes {na} and {nb}"
        )));
    }
    let n = na + nb;
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "Kruskal–Wallis needs >= 5 values, got {n}"
        )));
    }
    let all: Vec<T> = group_a.iter().chain(group_b).copied().collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("values must be finite".into()));
    }
    let (ranks, ties) = mid_ranks(&all);
    let nf = T::from_count(n);
    let correction = T::one() - ties / (nf * nf * nf - nf);
    if correction <= T::zero() {
        return Err(Error::Degenerate("all values are tied".into()));
    }
    let ra: T = ranks[..na].iter().copied().sum();
    let rb: T = ranks[na..].iter().copied().sum();
    let spread = ra * ra / T::from_count(na) + rb * rb / T::from_count(nb);
    let raw = T::lit(12.0) / (nf * (nf + T::one())) * spread - T::lit(3.0) * (nf + T::one());
    let h = (raw / correction).max(T::zero());
    let df = 1;
    Ok(TestResult {
        statistic: h,
        p_value: chi_squared_sf(h, df)?.clamp(T::zero(), T::one()),
        df: Some(df),
        group_sizes: vec![na, nb],
    })
}

pub fn median<T: Real>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / T::lit(2.0)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    Entropy,
    MutualInformation,
}

impl UncertaintyMeasure {
    pub const ALL: [UncertaintyMeasure; 2] = [UncertaintyMeasure::Entropy, UncertaintyMeasure::MutualInformation];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyMeasure::Entropy => "entropy",
            UncertaintyMeasure::MutualInformation => "mutual_information",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationResult<T> {
    pub measure: UncertaintyMeasure,
    pub n_correct: usize,
    pub n_wrong: usize,
    pub median_correct: T,
    pub median_wrong: T,
    /// Kruskal–Wallis on {wrong} vs {correct}.
    pub kruskal_wallis: TestResult<T>,
    /// Normality checks per group; `None` when a group is too small or constant.
    pub ks_correct: Option<TestResult<T>>,
    pub ks_wrong: Option<TestResult<T>>,
}

/// Compares an uncertainty score between wrongly and correctly classified samples.
pub fn uncertainty_separation<T: Real>(
    records: &[UncertaintyRecord<T>],
    measure: UncertaintyMeasure,
) -> Result<SeparationResult<T>> {
    let score = |r: &UncertaintyRecord<T>| match measure {
        UncertaintyMeasure::Entropy => r.entropy,
        UncertaintyMeasure::MutualInformation => r.mutual_information,
    };
    let correct: Vec<T> = records.iter().filter(|r| r.correct).map(score).collect();
    let wrong: Vec<T> = records.iter().filter(|r| !r.correct).map(score).collect();
    separation_from_groups(&correct, &wrong, measure)
}

pub(crate) fn separation_from_groups<T: Real>(
    correct: &[T],
    wrong: &[T],
    measure: UncertaintyMeasure,
) -> Result<SeparationResult<T>> {
    if correct.is_empty() {
        return Err(Error::InsufficientData("no correctly classified samples".into()));
    }
    if wrong.is_empty() {
        return Err(Error::InsufficientData("no wrongly classified samples".into()));
    }
    let kw = kruskal_wallis(wrong, correct)?;
    Ok(SeparationResult {
        measure,
        n_correct: correct.len(),
        n_wrong: wrong.len(),
        median_correct: median(correct).expect("non-empty"),
        median_wrong: median(wrong).expect("non-empty"),
        kruskal_wallis: kw,
        ks_correct: ks_normality(correct).ok(),
        ks_wrong: ks_normality(wrong).ok(),
    })
}
