//! Sequential variational continual learning over a task order, single-task
//! reference models, and the learning-rate × β grid search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{init_prior, train_task, HyperParams, NetworkArchitecture, VariationalPosterior};
use crate::data::{SplitDataset, TaskSequence};
use crate::error::{Error, Result};
use crate::inference::accuracy;
use crate::metrics::{AccuracyMatrix, MetricsReport, StepMetrics};
use crate::numerics::{RandomStream, Real};

pub const DEFAULT_LEARNING_RATES: [f64; 5] = [0.0001, 0.0005, 0.001, 0.005, 0.01];
pub const DEFAULT_BETAS: [f64; 6] = [0.001, 0.01, 0.05, 0.1, 0.5, 1.0];

/// Stream tag for evaluation draws at step `k`.
const EVAL_TAG: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            betas: DEFAULT_BETAS.to_vec(),
        }
    }
}

impl GridSpec {
    pub fn singleton(hyper: &HyperParams) -> Self {
        GridSpec {
            learning_rates: vec![hyper.learning_rate],
            betas: vec![hyper.beta],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.betas.is_empty() {
            return Err(Error::Config(
                "grid needs at least one learning rate and one beta".into(),
            ));
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0) || !lr.is_finite()) {
            return Err(Error::Config("grid learning rates must be positive".into()));
        }
        if self.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("grid betas must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `(learning_rate, beta)` cells, learning-rate major. The position in
    /// this list is the cell index and the cell's stream id.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.betas.iter().map(move |&b| (lr, b)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything besides the data needed to run one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub hidden_sizes: Vec<usize>,
    pub hyper: HyperParams,
    /// Keep the posterior after every task, not just the final one.
    pub keep_checkpoints: bool,
}

/// Single-task reference accuracies `a*_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAccuracy {
    pub task: String,
    pub val: f64,
    pub test: f64,
    pub learning_rate: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct RunRecord<T> {
    pub order: String,
    pub task_names: Vec<String>,
    pub hyper: HyperParams,
    pub seed: u64,
    pub stream_id: u64,
    pub val_accuracy: AccuracyMatrix<f64>,
    pub test_accuracy: AccuracyMatrix<f64>,
    #[serde(default)]
    pub references: Vec<ReferenceAccuracy>,
    /// Posterior after task `k` at index `k − 1`, when requested.
    #[serde(skip)]
    pub checkpoints: Vec<VariationalPosterior<T>>,
    #[serde(skip)]
    pub final_posterior: Option<VariationalPosterior<T>>,
}

impl<T: Real> RunRecord<T> {
    pub fn val_metrics(&self) -> Result<MetricsReport<f64>> {
        let refs: Vec<f64> = self.references.iter().map(|r| r.val).collect();
        MetricsReport::compute(&self.val_accuracy, &refs)
    }

    pub fn test_metrics(&self) -> Result<MetricsReport<f64>> {
        let refs: Vec<f64> = self.references.iter().map(|r| r.test).collect();
        MetricsReport::compute(&self.test_accuracy, &refs)
    }

    pub fn with_references(mut self, references: Vec<ReferenceAccuracy>) -> Result<Self> {
        if references.len() != self.task_names.len() {
            return Err(Error::Shape(format!(
                "{} references for {} tasks",
                references.len(),
                self.task_names.len()
            )));
        }
        self.references = references;
        Ok(self)
    }
}

pub fn sequence_architecture<T: Real>(seq: &TaskSequence<T>, hidden_sizes: &[usize]) -> Result<NetworkArchitecture> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("task sequence is empty".into()));
    }
    NetworkArchitecture::new(seq.feature_dim(), hidden_sizes.to_vec(), seq.head_sizes())
}

/// Trains heads `1..=K` in sequence order, each anchored at the previous
/// posterior, and after each task scores the validation and test splits of
/// every task seen so far with `s_test` draws.
pub fn run_vcl<T: Real>(seq: &TaskSequence<T>, settings: &RunSettings, stream: &RandomStream) -> Result<RunRecord<T>> {
    let hyper = &settings.hyper;
    hyper.validate()?;
    let arch = sequence_architecture(seq, &settings.hidden_sizes)?;
    let mut post: VariationalPosterior<T> = init_prior(&arch, hyper.prior_sigma)?;
    let mut val_accuracy = AccuracyMatrix::new();
    let mut test_accuracy = AccuracyMatrix::new();
    let mut checkpoints = Vec::new();

    for (head, task) in seq.tasks.iter().enumerate() {
        let k = head + 1;
        post = train_task(&post, &task.train, head, hyper, stream.child_seed(k as u64))?;
        let mut eval = stream.derive(EVAL_TAG + k as u64);
        let mut val_row = Vec::with_capacity(k);
        let mut test_row = Vec::with_capacity(k);
        for (j, seen) in seq.tasks[..k].iter().enumerate() {
            val_row.push(accuracy(&post, j, &seen.val, hyper.s_test, &mut eval)?);
        }
        for (j, seen) in seq.tasks[..k].iter().enumerate() {
            test_row.push(accuracy(&post, j, &seen.test, hyper.s_test, &mut eval)?);
        }
        log::info!("{} k={k}: val {:?} test {:?}", seq.label, val_row, test_row);
        val_accuracy.push_row(val_row)?;
        test_accuracy.push_row(test_row)?;
        if settings.keep_checkpoints {
            checkpoints.push(post.clone());
        }
    }

    Ok(RunRecord {
        order: seq.label.clone(),
        task_names: seq.tasks.iter().map(|t| t.name().to_string()).collect(),
        hyper: hyper.clone(),
        seed: stream.seed(),
        stream_id: stream.stream_id(),
        val_accuracy,
        test_accuracy,
        references: Vec::new(),
        checkpoints,
        final_posterior: Some(post),
    })
}

/// FNV-1a, used to key reference-model seeds by task name so `a*_k` does
/// not depend on where the task sits in an order.
fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Index of the cell with the lowest score; ties go to the lower learning
/// rate, then the lower β. Candidates are `(learning_rate, beta, score)`.
pub fn select_cell(candidates: &[(f64, f64, f64)]) -> Option<usize> {
    (0..candidates.len()).min_by(|&a, &b| {
        let (la, ba, sa) = candidates[a];
        let (lb, bb, sb) = candidates[b];
        sa.total_cmp(&sb).then(la.total_cmp(&lb)).then(ba.total_cmp(&bb))
    })
}

/// Trains a fresh single-head model on `task` for every grid cell, picks the
/// cell with the best validation accuracy, and reports its accuracies.
pub fn train_reference<T: Real>(
    task: &SplitDataset<T>,
    hidden_sizes: &[usize],
    base: &HyperParams,
    grid: &GridSpec,
    seed: u64,
) -> Result<ReferenceAccuracy> {
    grid.validate()?;
    let arch = NetworkArchitecture::new(task.feature_dim(), hidden_sizes.to_vec(), vec![task.num_classes()])?;
    let root = RandomStream::new(seed, 0).derive(name_tag(task.name()));
    let results: Vec<(f64, f64, f64, f64)> = grid
        .cells()
        .into_par_iter()
        .enumerate()
        .map(|(cell, (lr, beta))| {
            let hyper = HyperParams {
                learning_rate: lr,
                beta,
                ..base.clone()
            };
            let stream = root.derive(cell as u64);
            let prior: VariationalPosterior<T> = init_prior(&arch, hyper.prior_sigma)?;
            let post = train_task(&prior, &task.train, 0, &hyper, stream.child_seed(0))?;
            let mut eval = stream.derive(EVAL_TAG);
            let val = accuracy(&post, 0, &task.val, hyper.s_test, &mut eval)?;
            let test = accuracy(&post, 0, &task.test, hyper.s_test, &mut eval)?;
            Ok((lr, beta, val, test))
        })
        .collect::<Result<_>>()?;
    // Best validation accuracy = lowest (1 − val).
    let scores: Vec<(f64, f64, f64)> = results.iter().map(|&(lr, b, v, _)| (lr, b, 1.0 - v)).collect();
    let best = select_cell(&scores).expect("grid validated non-empty");
    let (learning_rate, beta, val, test) = results[best];
    Ok(ReferenceAccuracy {
        task: task.name().to_string(),
        val,
        test,
        learning_rate,
        beta,
    })
}

/// Reference accuracies for every task of `seq`, in sequence order.
pub fn train_references<T: Real>(
    seq: &TaskSequence<T>,
    hidden_sizes: &[usize],
    base: &HyperParams,
    grid: &GridSpec,
    seed: u64,
) -> Result<Vec<ReferenceAccuracy>> {
    seq.tasks
        .par_iter()
        .map(|t| train_reference(t, hidden_sizes, base, grid, seed))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct CellResult<T> {
    pub cell: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub record: RunRecord<T>,
    pub val_metrics: MetricsReport<f64>,
    pub test_metrics: MetricsReport<f64>,
}

/// Winning cell at one `k`, selected on validation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub k: usize,
    pub cell: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub val: StepMetrics<f64>,
    pub test: StepMetrics<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct GridReport<T> {
    pub order: String,
    pub seed: u64,
    pub grid: GridSpec,
    pub references: Vec<ReferenceAccuracy>,
    pub cells: Vec<CellResult<T>>,
    pub best: Vec<BestRow>,
}

/// Runs the whole sequence once per `(lr, β)` cell and, for every `k`,
/// selects the cell minimizing `(1 − A_k) + F_k + I_k` on validation data.
/// Cell `i` draws from stream `(seed, i)`, so results do not depend on
/// how cells are scheduled across threads. Posteriors are dropped once a
/// cell is scored.
pub fn grid_search<T: Real>(
    seq: &TaskSequence<T>,
    settings: &RunSettings,
    grid: &GridSpec,
    seed: u64,
) -> Result<GridReport<T>> {
    grid.validate()?;
    let references = train_references(seq, &settings.hidden_sizes, &settings.hyper, grid, seed)?;
    let cells: Vec<CellResult<T>> = grid
        .cells()
        .into_par_iter()
        .enumerate()
        .map(|(cell, (lr, beta))| {
            let cell_settings = RunSettings {
                hyper: HyperParams {
                    learning_rate: lr,
                    beta,
                    ..settings.hyper.clone()
                },
                hidden_sizes: settings.hidden_sizes.clone(),
                keep_checkpoints: false,
            };
            let mut record = run_vcl(seq, &cell_settings, &RandomStream::new(seed, cell as u64))?
                .with_references(references.clone())?;
            record.final_posterior = None;
            Ok(CellResult {
                cell,
                learning_rate: lr,
                beta,
                val_metrics: record.val_metrics()?,
                test_metrics: record.test_metrics()?,
                record,
            })
        })
        .collect::<Result<_>>()?;

    let best = (1..=seq.len())
        .map(|k| {
            let candidates: Vec<(f64, f64, f64)> = cells
                .iter()
                .map(|c| {
                    let step = &c.val_metrics.steps[k - 1];
                    (c.learning_rate, c.beta, step.combined.unwrap_or(f64::INFINITY))
                })
                .collect();
            let winner = &cells[select_cell(&candidates).expect("non-empty grid")];
            BestRow {
                k,
                cell: winner.cell,
                learning_rate: winner.learning_rate,
                beta: winner.beta,
                val: winner.val_metrics.steps[k - 1].clone(),
                test: winner.test_metrics.steps[k - 1].clone(),
            }
        })
        .collect();

    Ok(GridReport {
        order: seq.label.clone(),
        seed,
        grid: grid.clone(),
        references,
        cells,
        best,
    })
}
