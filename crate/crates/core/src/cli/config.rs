use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bnn::HyperParams;
use crate::continual::GridSpec;
use crate::data::{
    gen_synthetic_task, load_dataset, split_dataset, SplitDataset, SyntheticTaskSpec, DEFAULT_SPLIT_RATIOS,
};
use crate::error::{Error, Result};

/// One task: either a CSV file or a synthetic spec, never both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSource {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticTaskSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskSource>,
    /// Task orders as permutations of `tasks` indices; empty means file order.
    pub orders: Vec<Vec<usize>>,
    pub hidden_sizes: Vec<usize>,
    pub hyper: HyperParams,
    pub grid: GridSpec,
    pub seeds: Vec<u64>,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    /// Standardize features with train-split statistics.
    pub standardize: bool,
    /// Train single-task reference models so intransigence can be reported.
    pub reference: bool,
    pub keep_checkpoints: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tasks: Vec::new(),
            orders: Vec::new(),
            hidden_sizes: vec![512, 512, 512],
            hyper: HyperParams::default(),
            grid: GridSpec::default(),
            seeds: vec![0],
            split_ratios: DEFAULT_SPLIT_RATIOS,
            split_seed: 0,
            standardize: true,
            reference: true,
            keep_checkpoints: false,
            output_dir: None,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative task paths are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for t in &mut cfg.tasks {
            if let Some(p) = &t.path {
                if p.is_relative() {
                    t.path = Some(base.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("`tasks` must list at least one task".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.name.is_empty() || t.name.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!(
                    "tasks[{i}].name `{}` is not a usable name",
                    t.name
                )));
            }
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Config(format!("duplicate task name `{}`", t.name)));
            }
            match (&t.path, &t.synthetic) {
                (Some(_), None) => {}
                (None, Some(spec)) => spec.validate()?,
                _ => {
                    return Err(Error::Config(format!(
                        "tasks[{i}] needs exactly one of `path` or `synthetic`"
                    )))
                }
            }
        }
        let n = self.tasks.len();
        for order in &self.orders {
            let mut seen = vec![false; n];
            let ok = order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
            if !ok {
                return Err(Error::Config(format!("order {order:?} is not a permutation of 0..{n}")));
            }
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("`hidden_sizes` entries must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("`threads` must be >= 1".into()));
        }
        self.hyper.validate()?;
        self.grid.validate()
    }

    pub fn effective_orders(&self) -> Vec<Vec<usize>> {
        if self.orders.is_empty() {
            vec![(0..self.tasks.len()).collect()]
        } else {
            self.orders.clone()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// The config as embedded in result documents: defaults filled in,
    /// scheduling and output location left out so they cannot change the bytes.
    pub fn embedded(&self) -> Self {
        ExperimentConfig {
            output_dir: None,
            threads: None,
            ..self.clone()
        }
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        let threads = self
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))
    }

    /// Loads or generates every task and splits it; standardizes when enabled.
    pub fn load_tasks(&self) -> Result<Vec<SplitDataset<f64>>> {
        self.tasks
            .iter()
            .map(|t| {
                let mut ds = match (&t.path, &t.synthetic) {
                    (Some(p), _) => load_dataset(p)?,
                    (None, Some(spec)) => gen_synthetic_task(spec, &t.name)?,
                    (None, None) => return Err(Error::Config(format!("task `{}` has no source", t.name))),
                };
                ds.name = t.name.clone();
                let split = split_dataset(&ds, self.split_ratios, self.split_seed)?;
                if self.standardize {
                    Ok(split.standardized()?.0)
                } else {
                    Ok(split)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg = ExperimentConfig::from_json(r#"{"tasks": [{"name": "a", "path": "a.csv"}]}"#).unwrap();
        assert_eq!(cfg.hidden_sizes, vec![512, 512, 512]);
        assert_eq!(cfg.hyper.epochs, 120);
        assert_eq!(cfg.hyper.s_train, 10);
        assert_eq!(cfg.hyper.s_test, 100);
        assert_eq!(cfg.hyper.batch_size, 128);
        assert_eq!(cfg.grid.len(), 30);
        cfg.validate().unwrap();
        assert_eq!(cfg.effective_orders(), vec![vec![0]]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"tasks": [], "epochs": 3}"#),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"hyper": {"lr": 0.1}}"#).is_err());
    }

    #[test]
    fn validation_names_the_problem() {
        let mut cfg = ExperimentConfig::from_json(
            r#"{"tasks": [{"name": "a", "synthetic": {"num_classes": 0, "samples_per_class": 5,
                "feature_dim": 2, "cluster_separation": 1.0, "cluster_scale": 1.0, "seed": 1}}]}"#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("num_classes"), "{err}");
        cfg.tasks[0].synthetic.as_mut().unwrap().num_classes = 2;
        cfg.validate().unwrap();
        cfg.orders = vec![vec![0, 0]];
        assert!(cfg.validate().is_err());
        cfg.orders.clear();
        cfg.tasks[0].path = Some("x.csv".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn embedded_config_round_trips() {
        let mut cfg =
            ExperimentConfig::from_json(r#"{"tasks": [{"name": "a", "path": "/d/a.csv"}], "threads": 4}"#).unwrap();
        cfg.output_dir = Some("somewhere".into());
        let text = serde_json::to_string(&cfg.embedded()).unwrap();
        assert!(!text.contains("threads") && !text.contains("output_dir"));
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg.embedded());
    }
}
