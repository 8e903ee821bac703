//! Monte Carlo predictive distribution, argmax classification and
//! per-sample uncertainty scores (predictive entropy, mutual information).
//! All entropies are in nats.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bnn::{forward_local_reparam, VariationalPosterior};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, Matrix, RandomStream, Real};

/// Rows evaluated per stochastic pass when scoring a dataset.
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution<T> {
    /// `S × C`, one softmax row per weight draw.
    pub per_sample_probs: Matrix<T>,
    pub mean_probs: Vec<T>,
}

impl<T: Real> PredictiveDistribution<T> {
    /// Builds the distribution from per-draw probability rows, each of which
    /// must sum to one within 1e-9.
    pub fn from_samples(per_sample_probs: Matrix<T>) -> Result<Self> {
        let (s, c) = (per_sample_probs.rows(), per_sample_probs.cols());
        if s == 0 || c == 0 {
            return Err(Error::InvalidArgument(
                "predictive distribution needs S >= 1 and C >= 1".into(),
            ));
        }
        let tol = T::lit(1e-9);
        for r in 0..s {
            let row = per_sample_probs.row(r);
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > tol || row.iter().any(|&p| p < T::zero()) {
                return Err(Error::InvalidArgument(format!("row {r} is not a probability vector")));
            }
        }
        let inv = T::one() / T::from_count(s);
        let mut mean_probs = vec![T::zero(); c];
        for r in 0..s {
            for (m, &p) in mean_probs.iter_mut().zip(per_sample_probs.row(r)) {
                *m += p;
            }
        }
        mean_probs.iter_mut().for_each(|m| *m *= inv);
        Ok(PredictiveDistribution {
            per_sample_probs,
            mean_probs,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.per_sample_probs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.mean_probs.len()
    }
}

/// Predictive distribution for a single input from `samples` weight draws.
pub fn predictive_posterior<T: Real>(
    post: &VariationalPosterior<T>,
    head: usize,
    x: &[T],
    samples: usize,
    noise: &mut RandomStream,
) -> Result<PredictiveDistribution<T>> {
    let batch = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(predictive_batch(post, head, &batch, samples, noise)?.remove(0))
}

/// Predictive distributions for every row of `x`. Each of the `samples`
/// passes draws fresh noise for every row.
pub fn predictive_batch<T: Real>(
    post: &VariationalPosterior<T>,
    head: usize,
    x: &Matrix<T>,
    samples: usize,
    noise: &mut RandomStream,
) -> Result<Vec<PredictiveDistribution<T>>> {
    post.check_head(head)?;
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "at least one Monte Carlo sample is required".into(),
        ));
    }
    if !post.is_trained(head) {
        warn!("head {head} is untrained; its posterior is still the prior");
    }
    let classes = post.architecture.head_sizes[head];
    let rows = x.rows();
    let mut probs = vec![vec![T::zero(); samples * classes]; rows];
    for s in 0..samples {
        let logits = forward_local_reparam(post, head, x, noise)?;
        for (r, p) in probs.iter_mut().enumerate() {
            let dst = &mut p[s * classes..(s + 1) * classes];
            dst.copy_from_slice(logits.row(r));
            softmax_in_place(dst);
        }
    }
    probs
        .into_iter()
        .map(|p| PredictiveDistribution::from_samples(Matrix::from_vec(samples, classes, p)?))
        .collect()
}

/// Argmax of the mean predictive; ties go to the lowest class index.
pub fn classify<T: Real>(pred: &PredictiveDistribution<T>) -> usize {
    let mut best = 0;
    for (c, &p) in pred.mean_probs.iter().enumerate() {
        if p > pred.mean_probs[best] {
            best = c;
        }
    }
    best
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy<T: Real>(probs: &[T]) -> T {
    probs.iter().filter(|&&p| p > T::zero()).map(|&p| -p * p.ln()).sum()
}

pub fn predictive_entropy<T: Real>(pred: &PredictiveDistribution<T>) -> T {
    entropy(&pred.mean_probs)
}

/// Entropy of the mean minus the mean per-draw entropy.
pub fn mutual_information<T: Real>(pred: &PredictiveDistribution<T>) -> T {
    let s = pred.num_samples();
    let expected: T = (0..s).map(|r| entropy(pred.per_sample_probs.row(r))).sum::<T>() / T::from_count(s);
    predictive_entropy(pred) - expected
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord<T> {
    pub sample_index: usize,
    pub true_label: usize,
    pub predicted: usize,
    pub correct: bool,
    pub entropy: T,
    pub mutual_information: T,
    /// False when the head was never trained and the scores come from the prior.
    pub head_trained: bool,
}

pub fn uncertainty_report<T: Real>(
    post: &VariationalPosterior<T>,
    head: usize,
    testset: &TaskDataset<T>,
    samples: usize,
    noise: &mut RandomStream,
) -> Result<Vec<UncertaintyRecord<T>>> {
    let trained = post.is_trained(head);
    let mut out = Vec::with_capacity(testset.len());
    let all: Vec<usize> = (0..testset.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = testset.features.select_rows(chunk);
        for (pred, &i) in predictive_batch(post, head, &x, samples, noise)?.iter().zip(chunk) {
            let predicted = classify(pred);
            let true_label = testset.labels[i];
            out.push(UncertaintyRecord {
                sample_index: i,
                true_label,
                predicted,
                correct: predicted == true_label,
                entropy: predictive_entropy(pred),
                mutual_information: mutual_information(pred),
                head_trained: trained,
            });
        }
    }
    Ok(out)
}

/// Fraction of `ds` classified correctly by the MC mean predictive.
pub fn accuracy<T: Real>(
    post: &VariationalPosterior<T>,
    head: usize,
    ds: &TaskDataset<T>,
    samples: usize,
    noise: &mut RandomStream,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cannot score empty dataset `{}`",
            ds.name
        )));
    }
    let mut hits = 0usize;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let x = ds.features.select_rows(chunk);
        for (pred, &i) in predictive_batch(post, head, &x, samples, noise)?.iter().zip(chunk) {
            hits += (classify(pred) == ds.labels[i]) as usize;
        }
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// One line of the uncertainty CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub sample_id: usize,
    pub task: String,
    pub k_trained: usize,
    pub true_label: usize,
    pub predicted: usize,
    pub correct: bool,
    pub entropy_nats: f64,
    pub mutual_information_nats: f64,
}

impl UncertaintyRow {
    pub fn from_record<T: Real>(rec: &UncertaintyRecord<T>, task: &str, k_trained: usize) -> Self {
        UncertaintyRow {
            sample_id: rec.sample_index,
            task: task.to_string(),
            k_trained,
            true_label: rec.true_label,
            predicted: rec.predicted,
            correct: rec.correct,
            entropy_nats: rec.entropy.to_f64_lossy(),
            mutual_information_nats: rec.mutual_information.to_f64_lossy(),
        }
    }
}

pub fn write_uncertainty_csv<W: std::io::Write>(rows: &[UncertaintyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::InvalidArgument(format!("cannot write uncertainty row: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<uncertainty csv>", e))
}

pub fn read_uncertainty_csv(path: impl AsRef<Path>) -> Result<Vec<UncertaintyRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                row: i + 1,
                column: "<record>".into(),
                message: e.to_string(),
            })
        })
        .collect()
}
