//! Continual-learning metrics over the lower-triangular accuracy matrix.
//!
//! Task indices `k` and `j` count from 1, as in `a_{k,j}`: the accuracy on
//! task `j` after training sequentially through task `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Real> AccuracyMatrix<T> {
    pub fn new() -> Self {
        AccuracyMatrix { rows: Vec::new() }
    }

    /// Builds a matrix from its rows; row `k` must hold exactly `k` entries in [0, 1].
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends row `K + 1`.
    pub fn push_row(&mut self, row: Vec<T>) -> Result<()> {
        let k = self.rows.len() + 1;
        if row.len() != k {
            return Err(Error::Shape(format!("row {k} needs {k} entries, got {}", row.len())));
        }
        if let Some(v) = row.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::InvalidArgument(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of tasks trained so far.
    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, k: usize, j: usize) -> T {
        self.rows[k - 1][j - 1]
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.rows[k - 1]
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.rows.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.rows.len()
            )));
        }
        Ok(())
    }
}

/// `A_k = (1/k) Σ_{j≤k} a_{k,j}`.
pub fn average_accuracy<T: Real>(m: &AccuracyMatrix<T>, k: usize) -> Result<T> {
    m.check_k(k)?;
    Ok(m.row(k).iter().copied().sum::<T>() / T::from_count(k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forget<T> {
    /// `f_j^k` for `j = 1..k-1`.
    pub per_task: Vec<T>,
    /// `F_k = (1/k) Σ_{j<k} f_j^k`; zero at `k = 1`.
    pub average: T,
}

/// `f_j^k = max_{j ≤ l ≤ k−1} a_{l,j} − a_{k,j}` and `F_k` with divisor `k`.
pub fn forget<T: Real>(m: &AccuracyMatrix<T>, k: usize) -> Result<Forget<T>> {
    m.check_k(k)?;
    let per_task: Vec<T> = (1..k)
        .map(|j| {
            let best = (j..k).map(|l| m.get(l, j)).fold(T::neg_infinity(), T::max);
            best - m.get(k, j)
        })
        .collect();
    let average = per_task.iter().fold(T::zero(), |acc, &f| acc + f) / T::from_count(k);
    Ok(Forget { per_task, average })
}

/// `F = (1/K) Σ_k F_k`.
pub fn aggregate_forget<T: Real>(m: &AccuracyMatrix<T>) -> Result<T> {
    let big_k = m.num_tasks();
    if big_k == 0 {
        return Err(Error::InvalidArgument("empty accuracy matrix".into()));
    }
    let mut total = T::zero();
    for k in 1..=big_k {
        total += forget(m, k)?.average;
    }
    Ok(total / T::from_count(big_k))
}

/// `I_k = a*_k − a_{k,k}`; negative when earlier tasks helped.
pub fn intransigence<T: Real>(a_star: T, m: &AccuracyMatrix<T>, k: usize) -> Result<T> {
    m.check_k(k)?;
    Ok(a_star - m.get(k, k))
}

/// `(1 − A_k) + F_k + I_k`.
pub fn combined_metric<T: Real>(average_accuracy: T, forget: T, intransigence: T) -> T {
    (T::one() - average_accuracy) + forget + intransigence
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics<T> {
    pub k: usize,
    pub average_accuracy: T,
    pub forget: T,
    /// `None` when no reference accuracy is available for task `k`.
    pub intransigence: Option<T>,
    pub combined: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub steps: Vec<StepMetrics<T>>,
    pub aggregate_forget: T,
    pub reference_accuracies: Vec<T>,
}

impl<T: Real> MetricsReport<T> {
    /// Metrics for every `k`. `reference` may be empty (no intransigence) or
    /// hold one `a*_k` per task.
    pub fn compute(m: &AccuracyMatrix<T>, reference: &[T]) -> Result<Self> {
        if !reference.is_empty() && reference.len() < m.num_tasks() {
            return Err(Error::Shape(format!(
                "{} reference accuracies for {} tasks",
                reference.len(),
                m.num_tasks()
            )));
        }
        let mut steps = Vec::with_capacity(m.num_tasks());
        for k in 1..=m.num_tasks() {
            let a = average_accuracy(m, k)?;
            let f = forget(m, k)?.average;
            let i = match reference.get(k - 1) {
                Some(&star) => Some(intransigence(star, m, k)?),
                None => None,
            };
            steps.push(StepMetrics {
                k,
                average_accuracy: a,
                forget: f,
                intransigence: i,
                combined: i.map(|i| combined_metric(a, f, i)),
            });
        }
        Ok(MetricsReport {
            steps,
            aggregate_forget: aggregate_forget(m)?,
            reference_accuracies: reference.to_vec(),
        })
    }
}
