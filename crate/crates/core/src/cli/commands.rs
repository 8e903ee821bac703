use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::bnn::{load_checkpoint, save_checkpoint, PosteriorCheckpoint};
use crate::continual::{
    grid_search, run_vcl, train_references, GridReport, GridSpec, ReferenceAccuracy, RunRecord, RunSettings,
};
use crate::data::{gen_synthetic_task, make_sequence, write_dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::inference::{read_uncertainty_csv, uncertainty_report, write_uncertainty_csv, UncertaintyRow};
use crate::metrics::MetricsReport;
use crate::numerics::RandomStream;
use crate::stats::{separation_from_groups, UncertaintyMeasure, KS_METHOD_NOTE};

const UNCERTAINTY_TAG: u64 = 0x756e_6365_7274;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::NumericFailure(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn run_stem(order: &str, seed: u64) -> String {
    format!("{order}-seed{seed}")
}

/// Writes one CSV per synthetic task into the output directory.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    create_dir(&dir)?;
    let mut written = Vec::new();
    for t in &cfg.tasks {
        let Some(spec) = &t.synthetic else {
            log::info!("task `{}` is file-backed, nothing to generate", t.name);
            continue;
        };
        let ds = gen_synthetic_task::<f64>(spec, &t.name)?;
        let path = dir.join(format!("{}.csv", t.name));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_dataset(&ds, BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
        written.push(path);
    }
    Ok(written)
}

/// One tidy metrics row: a `(split, k)` step of one run or grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub order: String,
    pub seed: u64,
    pub cell: Option<usize>,
    pub learning_rate: f64,
    pub beta: f64,
    pub split: String,
    pub k: usize,
    pub average_accuracy: f64,
    pub forget: f64,
    pub intransigence: Option<f64>,
    pub combined: Option<f64>,
    pub reference_accuracy: Option<f64>,
}

fn step_rows(
    record: &RunRecord<f64>,
    cell: Option<usize>,
    val: &MetricsReport<f64>,
    test: &MetricsReport<f64>,
) -> Vec<StepRow> {
    let mut rows = Vec::new();
    for (split, report) in [("val", val), ("test", test)] {
        for s in &report.steps {
            rows.push(StepRow {
                order: record.order.clone(),
                seed: record.seed,
                cell,
                learning_rate: record.hyper.learning_rate,
                beta: record.hyper.beta,
                split: split.into(),
                k: s.k,
                average_accuracy: s.average_accuracy,
                forget: s.forget,
                intransigence: s.intransigence,
                combined: s.combined,
                reference_accuracy: report.reference_accuracies.get(s.k - 1).copied(),
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub record: RunRecord<f64>,
    pub val_metrics: MetricsReport<f64>,
    pub test_metrics: MetricsReport<f64>,
    /// Final posterior file, relative to the output directory.
    pub checkpoint: String,
    #[serde(default)]
    pub step_checkpoints: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub config: ExperimentConfig,
    pub runs: Vec<RunEntry>,
}

fn references_by_seed(
    cfg: &ExperimentConfig,
    datasets: &[SplitDataset<f64>],
    seed: u64,
) -> Result<Vec<ReferenceAccuracy>> {
    let all = make_sequence(datasets, &(0..datasets.len()).collect::<Vec<_>>())?;
    train_references(
        &all,
        &cfg.hidden_sizes,
        &cfg.hyper,
        &GridSpec::singleton(&cfg.hyper),
        seed,
    )
}

/// Runs every configured order × seed with the configured hyperparameters.
/// Writes `run.json`, `run.csv`, and a posterior checkpoint per run.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunDocument> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    create_dir(&dir)?;
    let datasets = cfg.load_tasks()?;
    let pool = cfg.thread_pool()?;
    let settings = RunSettings {
        hidden_sizes: cfg.hidden_sizes.clone(),
        hyper: cfg.hyper.clone(),
        keep_checkpoints: cfg.keep_checkpoints,
    };
    let jobs: Vec<(Vec<usize>, u64)> = cfg
        .effective_orders()
        .into_iter()
        .flat_map(|o| cfg.seeds.iter().map(move |&s| (o.clone(), s)))
        .collect();

    let records: Vec<RunRecord<f64>> = pool.install(|| {
        let references: BTreeMap<u64, Vec<ReferenceAccuracy>> = if cfg.reference {
            cfg.seeds
                .par_iter()
                .map(|&s| Ok((s, references_by_seed(cfg, &datasets, s)?)))
                .collect::<Result<_>>()?
        } else {
            BTreeMap::new()
        };
        jobs.par_iter()
            .map(|(order, seed)| {
                let seq = make_sequence(&datasets, order)?;
                log::info!("run {} seed {seed}", seq.label);
                let record = run_vcl(&seq, &settings, &RandomStream::new(*seed, 0))?;
                match references.get(seed) {
                    Some(refs) => record.with_references(order.iter().map(|&i| refs[i].clone()).collect()),
                    None => Ok(record),
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut runs = Vec::with_capacity(records.len());
    let mut rows = Vec::new();
    for mut record in records {
        let stem = run_stem(&record.order, record.seed);
        let posterior = record
            .final_posterior
            .take()
            .ok_or_else(|| Error::NumericFailure("run produced no posterior".into()))?;
        let checkpoint = format!("posterior-{stem}.json");
        save_checkpoint(
            &PosteriorCheckpoint::new(posterior, record.hyper.clone(), record.task_names.clone()),
            dir.join(&checkpoint),
        )?;
        let mut step_checkpoints = Vec::new();
        for (k, post) in std::mem::take(&mut record.checkpoints).into_iter().enumerate() {
            let name = format!("posterior-{stem}-k{}.json", k + 1);
            save_checkpoint(
                &PosteriorCheckpoint::new(post, record.hyper.clone(), record.task_names.clone()),
                dir.join(&name),
            )?;
            step_checkpoints.push(name);
        }
        let val_metrics = record.val_metrics()?;
        let test_metrics = record.test_metrics()?;
        rows.extend(step_rows(&record, None, &val_metrics, &test_metrics));
        runs.push(RunEntry {
            record,
            val_metrics,
            test_metrics,
            checkpoint,
            step_checkpoints,
        });
    }
    let doc = RunDocument {
        config: cfg.embedded(),
        runs,
    };
    write_json(&dir.join("run.json"), &doc)?;
    write_csv(&dir.join("run.csv"), &rows)?;
    Ok(doc)
}

/// Final-step summary of one grid cell, for β-sweep plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub order: String,
    pub seed: u64,
    pub cell: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub k: usize,
    pub val_average_accuracy: f64,
    pub val_forget: f64,
    pub val_intransigence: Option<f64>,
    pub val_combined: Option<f64>,
    pub test_average_accuracy: f64,
    pub test_forget: f64,
    pub test_intransigence: Option<f64>,
    pub test_combined: Option<f64>,
    pub test_aggregate_forget: f64,
}

/// Selected cell per `k`: validation score used for selection, test metrics reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCsvRow {
    pub order: String,
    pub seed: u64,
    pub k: usize,
    pub cell: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub val_combined: Option<f64>,
    pub average_accuracy: f64,
    pub forget: f64,
    pub intransigence: Option<f64>,
    pub combined: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDocument {
    pub config: ExperimentConfig,
    pub reports: Vec<GridReport<f64>>,
}

/// Grid search for every configured order × seed. Writes `grid.json`,
/// `grid-best.csv`, `grid-cells.csv` (one row per cell) and
/// `grid-steps.csv` (one row per cell, split and `k`).
pub fn cmd_grid(cfg: &ExperimentConfig) -> Result<GridDocument> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    create_dir(&dir)?;
    let datasets = cfg.load_tasks()?;
    let pool = cfg.thread_pool()?;
    let settings = RunSettings {
        hidden_sizes: cfg.hidden_sizes.clone(),
        hyper: cfg.hyper.clone(),
        keep_checkpoints: false,
    };
    let mut reports = Vec::new();
    for order in cfg.effective_orders() {
        let seq = make_sequence(&datasets, &order)?;
        for &seed in &cfg.seeds {
            log::info!("grid {} seed {seed}: {} cells", seq.label, cfg.grid.len());
            reports.push(pool.install(|| grid_search(&seq, &settings, &cfg.grid, seed))?);
        }
    }

    let mut best_rows = Vec::new();
    let mut cell_rows = Vec::new();
    let mut steps = Vec::new();
    for report in &reports {
        for b in &report.best {
            best_rows.push(BestCsvRow {
                order: report.order.clone(),
                seed: report.seed,
                k: b.k,
                cell: b.cell,
                learning_rate: b.learning_rate,
                beta: b.beta,
                val_combined: b.val.combined,
                average_accuracy: b.test.average_accuracy,
                forget: b.test.forget,
                intransigence: b.test.intransigence,
                combined: b.test.combined,
            });
        }
        for c in &report.cells {
            let v = c.val_metrics.steps.last().expect("non-empty sequence");
            let t = c.test_metrics.steps.last().expect("non-empty sequence");
            cell_rows.push(CellRow {
                order: report.order.clone(),
                seed: report.seed,
                cell: c.cell,
                learning_rate: c.learning_rate,
                beta: c.beta,
                k: t.k,
                val_average_accuracy: v.average_accuracy,
                val_forget: v.forget,
                val_intransigence: v.intransigence,
                val_combined: v.combined,
                test_average_accuracy: t.average_accuracy,
                test_forget: t.forget,
                test_intransigence: t.intransigence,
                test_combined: t.combined,
                test_aggregate_forget: c.test_metrics.aggregate_forget,
            });
            steps.extend(step_rows(&c.record, Some(c.cell), &c.val_metrics, &c.test_metrics));
        }
    }
    let doc = GridDocument {
        config: cfg.embedded(),
        reports,
    };
    write_json(&dir.join("grid.json"), &doc)?;
    write_csv(&dir.join("grid-best.csv"), &best_rows)?;
    write_csv(&dir.join("grid-cells.csv"), &cell_rows)?;
    write_csv(&dir.join("grid-steps.csv"), &steps)?;
    Ok(doc)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyOptions {
    /// Posterior checkpoint; defaults to the final posterior of the only
    /// configured run.
    pub checkpoint: Option<PathBuf>,
    /// Monte Carlo draws; defaults to `hyper.s_test`.
    pub samples: Option<usize>,
    /// Accept a prediction only when its entropy is strictly below this.
    pub entropy_threshold: Option<f64>,
    /// Accept a prediction only when its mutual information is strictly below this.
    pub mi_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub task: String,
    pub k_trained: usize,
    pub n: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub accuracy: f64,
    /// `None` when nothing was accepted.
    pub accuracy_accepted: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDocument {
    pub config: ExperimentConfig,
    pub checkpoint: String,
    pub samples: usize,
    pub entropy_threshold: Option<f64>,
    pub mi_threshold: Option<f64>,
    pub csv: String,
    pub summary: Vec<GateSummary>,
}

/// Applies the optional entropy / MI gates to per-sample rows of one task.
pub fn gate_summary(
    rows: &[UncertaintyRow],
    entropy_threshold: Option<f64>,
    mi_threshold: Option<f64>,
) -> Option<GateSummary> {
    let first = rows.first()?;
    let accept = |r: &UncertaintyRow| {
        entropy_threshold.is_none_or(|t| r.entropy_nats < t)
            && mi_threshold.is_none_or(|t| r.mutual_information_nats < t)
    };
    let accepted: Vec<&UncertaintyRow> = rows.iter().filter(|r| accept(r)).collect();
    let correct = rows.iter().filter(|r| r.correct).count();
    let accepted_correct = accepted.iter().filter(|r| r.correct).count();
    Some(GateSummary {
        task: first.task.clone(),
        k_trained: first.k_trained,
        n: rows.len(),
        accepted: accepted.len(),
        rejected: rows.len() - accepted.len(),
        accuracy: correct as f64 / rows.len() as f64,
        accuracy_accepted: (!accepted.is_empty()).then(|| accepted_correct as f64 / accepted.len() as f64),
    })
}

/// Per-sample entropy and mutual information for the test split of every
/// trained head of a checkpoint. Writes `uncertainty-<checkpoint>.csv` and
/// a JSON document with the gate summary.
pub fn cmd_uncertainty(cfg: &ExperimentConfig, opts: &UncertaintyOptions) -> Result<UncertaintyDocument> {
    cfg.validate()?;
    let dir = cfg.output_dir();
    let seed = cfg.seeds[0];
    let ckpt_path = match &opts.checkpoint {
        Some(p) => p.clone(),
        None => {
            let orders = cfg.effective_orders();
            if orders.len() != 1 || cfg.seeds.len() != 1 {
                return Err(Error::Config(
                    "several runs configured; pass --checkpoint to pick one".into(),
                ));
            }
            let label: Vec<&str> = orders[0].iter().map(|&i| cfg.tasks[i].name.as_str()).collect();
            dir.join(format!("posterior-{}.json", run_stem(&label.join("-"), seed)))
        }
    };
    if let Some(s) = opts.samples {
        if s == 0 {
            return Err(Error::Config("--samples must be >= 1".into()));
        }
    }
    let samples = opts.samples.unwrap_or(cfg.hyper.s_test);
    let ckpt: PosteriorCheckpoint<f64> = load_checkpoint(&ckpt_path)?;
    let post = &ckpt.posterior;
    let k_trained = post.trained_heads.len();
    let datasets = cfg.load_tasks()?;
    create_dir(&dir)?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &head in &post.trained_heads {
        let name = &ckpt.task_names[head];
        let task = datasets.iter().find(|d| d.name() == name).ok_or_else(|| {
            Error::Shape(format!(
                "checkpoint head {head} is task `{name}`, which the config does not list"
            ))
        })?;
        let fan_in = post.architecture.input_dim;
        if task.feature_dim() != fan_in || task.num_classes() != post.architecture.head_sizes[head] {
            return Err(Error::Shape(format!(
                "task `{name}` has {} features / {} classes; head {head} expects {fan_in} / {}",
                task.feature_dim(),
                task.num_classes(),
                post.architecture.head_sizes[head]
            )));
        }
        let mut noise = RandomStream::new(seed, 0).derive(UNCERTAINTY_TAG).derive(head as u64);
        let records = uncertainty_report(post, head, &task.test, samples, &mut noise)?;
        let task_rows: Vec<UncertaintyRow> = records
            .iter()
            .map(|r| UncertaintyRow::from_record(r, name, k_trained))
            .collect();
        summary.extend(gate_summary(&task_rows, opts.entropy_threshold, opts.mi_threshold));
        rows.extend(task_rows);
    }

    let stem = ckpt_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let csv_name = format!("uncertainty-{stem}.csv");
    let csv_path = dir.join(&csv_name);
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_uncertainty_csv(&rows, BufWriter::new(file))?;
    let doc = UncertaintyDocument {
        config: cfg.embedded(),
        checkpoint: ckpt_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        samples,
        entropy_threshold: opts.entropy_threshold,
        mi_threshold: opts.mi_threshold,
        csv: csv_name,
        summary,
    };
    write_json(&dir.join(format!("uncertainty-{stem}.json")), &doc)?;
    Ok(doc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub order: String,
    pub k: usize,
    pub task: String,
    pub measure: String,
    pub n_correct: usize,
    pub n_wrong: usize,
    pub median_correct: Option<f64>,
    pub median_wrong: Option<f64>,
    pub h: Option<f64>,
    pub p_value: Option<f64>,
    pub ks_p_correct: Option<f64>,
    pub ks_p_wrong: Option<f64>,
    /// `ok`, `insufficient-data` or `degenerate`.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub input: String,
    pub ks_method: String,
    pub rows: Vec<StatsRow>,
}

/// Separation tests for every `(k_trained, task, measure)` group of an
/// uncertainty CSV.
pub fn stats_rows(rows: &[UncertaintyRow], order: &str) -> Result<Vec<StatsRow>> {
    let mut groups: BTreeMap<(usize, &str), Vec<&UncertaintyRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.k_trained, r.task.as_str())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((k, task), group) in groups {
        for measure in UncertaintyMeasure::ALL {
            let score = |r: &&UncertaintyRow| match measure {
                UncertaintyMeasure::Entropy => r.entropy_nats,
                UncertaintyMeasure::MutualInformation => r.mutual_information_nats,
            };
            let correct: Vec<f64> = group.iter().filter(|r| r.correct).map(score).collect();
            let wrong: Vec<f64> = group.iter().filter(|r| !r.correct).map(score).collect();
            let mut row = StatsRow {
                order: order.to_string(),
                k,
                task: task.to_string(),
                measure: measure.name().into(),
                n_correct: correct.len(),
                n_wrong: wrong.len(),
                median_correct: None,
                median_wrong: None,
                h: None,
                p_value: None,
                ks_p_correct: None,
                ks_p_wrong: None,
                status: "ok".into(),
            };
            match separation_from_groups(&correct, &wrong, measure) {
                Ok(sep) => {
                    row.median_correct = Some(sep.median_correct);
                    row.median_wrong = Some(sep.median_wrong);
                    row.h = Some(sep.kruskal_wallis.statistic);
                    row.p_value = Some(sep.kruskal_wallis.p_value);
                    row.ks_p_correct = sep.ks_correct.map(|t| t.p_value);
                    row.ks_p_wrong = sep.ks_wrong.map(|t| t.p_value);
                }
                Err(Error::InsufficientData(msg)) => {
                    log::warn!("k={k} task {task} {}: {msg}", measure.name());
                    row.status = "insufficient-data".into();
                }
                Err(Error::Degenerate(msg)) => {
                    log::warn!("k={k} task {task} {}: {msg}", measure.name());
                    row.status = "degenerate".into();
                }
                Err(e) => return Err(e),
            }
            out.push(row);
        }
    }
    Ok(out)
}

/// Reads an uncertainty CSV and writes `stats-<input>.csv` and `.json`
/// into `out_dir`. `order` labels the rows; it defaults to the input stem.
pub fn cmd_stats(input: &Path, out_dir: &Path, order: Option<&str>) -> Result<StatsDocument> {
    let rows = read_uncertainty_csv(input)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "uncertainty".into());
    let table = stats_rows(&rows, order.unwrap_or(&stem))?;
    create_dir(out_dir)?;
    write_csv(&out_dir.join(format!("stats-{stem}.csv")), &table)?;
    let doc = StatsDocument {
        input: input
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        ks_method: KS_METHOD_NOTE.into(),
        rows: table,
    };
    write_json(&out_dir.join(format!("stats-{stem}.json")), &doc)?;
    Ok(doc)
}
