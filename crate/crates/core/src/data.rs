//! Task datasets: CSV ingestion, standardization, stratified splitting,
//! synthetic Gaussian-cluster tasks and ordered task sequences.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomStream, Real};

/// Name of the label column in task CSV files.
pub const LABEL_COLUMN: &str = "label";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset<T> {
    pub name: String,
    pub features: Matrix<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Real> TaskDataset<T> {
    pub fn new(name: impl Into<String>, features: Matrix<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("a task needs at least one sample".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(TaskDataset {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        TaskDataset {
            name: self.name.clone(),
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Reads a task from CSV: header line, a `label` column with non-negative
/// integers, every other column a real feature. Rows keep file order.
pub fn load_dataset<T: Real>(path: impl AsRef<Path>) -> Result<TaskDataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    read_dataset(file, name)
}

/// CSV parsing behind [`load_dataset`]. Row numbers in errors count data
/// rows from 1 (the header is row 0).
pub fn read_dataset<T: Real, R: std::io::Read>(reader: R, name: impl Into<String>) -> Result<TaskDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(0, "<header>", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_col = header
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| parse_err(0, LABEL_COLUMN, "no `label` column in header".into()))?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_col).collect();
    if feature_cols.is_empty() {
        return Err(parse_err(0, "<header>", "no feature columns".into()));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, "<record>", e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                row,
                "<record>",
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let raw_label = record[label_col].trim();
        let label: i64 = raw_label
            .parse()
            .map_err(|_| parse_err(row, LABEL_COLUMN, format!("`{raw_label}` is not an integer")))?;
        if label < 0 {
            return Err(parse_err(row, LABEL_COLUMN, format!("negative label {label}")));
        }
        labels.push(label as usize);
        for &c in &feature_cols {
            let cell = record[c].trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, &header[c], format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, &header[c], format!("non-finite value `{cell}`")));
            }
            data.push(T::lit(v));
        }
    }
    if labels.is_empty() {
        return Err(parse_err(0, "<file>", "no data rows".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::from_vec(labels.len(), feature_cols.len(), data)?;
    TaskDataset::new(name, features, labels, num_classes)
}

fn parse_err(row: usize, column: &str, message: String) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message,
    }
}

/// Writes a task in the format [`load_dataset`] reads. Feature columns are
/// named `x0..x{d-1}`.
pub fn write_dataset<T: Real, W: std::io::Write>(ds: &TaskDataset<T>, mut out: W) -> std::io::Result<()> {
    let d = ds.feature_dim();
    let header: Vec<String> = (0..d)
        .map(|j| format!("x{j}"))
        .chain([LABEL_COLUMN.to_string()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (r, &y) in ds.labels.iter().enumerate() {
        for v in ds.features.row(r) {
            write!(out, "{v},")?;
        }
        writeln!(out, "{y}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

/// Per-column mean and population standard deviation; constant columns get std 1.
pub fn fit_standardization<T: Real>(train: &TaskDataset<T>) -> Result<StandardizationParams<T>> {
    let n = train.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardization needs at least 2 samples, got {n}"
        )));
    }
    let d = train.feature_dim();
    let nf = T::from_count(n);
    let mut mean = vec![T::zero(); d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(train.features.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![T::zero(); d];
    for r in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(train.features.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .zip(&mean)
        .map(|(s, &m)| {
            let sd = (s / nf).sqrt();
            // Relative guard: a column equal to its mean up to rounding is constant.
            if sd <= T::epsilon() * T::lit(16.0) * (T::one() + m.abs()) {
                T::one()
            } else {
                sd
            }
        })
        .collect();
    Ok(StandardizationParams { mean, std })
}

pub fn apply_standardization<T: Real>(
    params: &StandardizationParams<T>,
    ds: &TaskDataset<T>,
) -> Result<TaskDataset<T>> {
    let d = ds.feature_dim();
    if params.mean.len() != d || params.std.len() != d {
        return Err(Error::Shape(format!(
            "standardization fitted on {} features, dataset has {d}",
            params.mean.len()
        )));
    }
    let mut out = ds.clone();
    for r in 0..out.len() {
        for ((v, &m), &s) in out.features.row_mut(r).iter_mut().zip(&params.mean).zip(&params.std) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset<T> {
    pub train: TaskDataset<T>,
    pub val: TaskDataset<T>,
    pub test: TaskDataset<T>,
    pub split_seed: u64,
}

impl<T: Real> SplitDataset<T> {
    pub fn name(&self) -> &str {
        &self.train.name
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.train.feature_dim()
    }

    /// Standardizes all three splits with statistics fitted on `train`.
    pub fn standardized(&self) -> Result<(SplitDataset<T>, StandardizationParams<T>)> {
        let params = fit_standardization(&self.train)?;
        Ok((
            SplitDataset {
                train: apply_standardization(&params, &self.train)?,
                val: apply_standardization(&params, &self.val)?,
                test: apply_standardization(&params, &self.test)?,
                split_seed: self.split_seed,
            },
            params,
        ))
    }
}

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Stratified random train/val/test partition.
///
/// Val and test totals are `round(N·ratio)`; each class receives the floor of
/// its proportional share plus one extra sample for the classes with the
/// largest remainders. Every class keeps at least one training sample.
pub fn split_dataset<T: Real>(ds: &TaskDataset<T>, ratios: [f64; 3], seed: u64) -> Result<SplitDataset<T>> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let n = ds.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "splitting needs at least 10 samples, got {n}"
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 3 {
            return Err(Error::Stratification {
                class,
                count: members.len(),
                needed: 3,
            });
        }
    }

    let mut val_counts = vec![0usize; ds.num_classes];
    let mut test_counts = vec![0usize; ds.num_classes];
    allocate(&by_class, ratios[1], n, &mut val_counts, &test_counts);
    allocate(&by_class, ratios[2], n, &mut test_counts, &val_counts);

    let mut stream = RandomStream::new(seed, 0);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, members) in by_class.iter().enumerate() {
        let mut idx = members.clone();
        stream.shuffle(&mut idx);
        let (v, rest) = idx.split_at(val_counts[class]);
        let (t, tr) = rest.split_at(test_counts[class]);
        val.extend_from_slice(v);
        test.extend_from_slice(t);
        train.extend_from_slice(tr);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitDataset {
        train: ds.subset(&train),
        val: ds.subset(&val),
        test: ds.subset(&test),
        split_seed: seed,
    })
}

/// Largest-remainder allocation of `round(n·ratio)` samples across classes,
/// never taking a class's last training sample.
fn allocate(by_class: &[Vec<usize>], ratio: f64, n: usize, counts: &mut [usize], taken: &[usize]) {
    let target = (n as f64 * ratio).round() as usize;
    let mut remainders = Vec::new();
    let mut assigned = 0;
    for (c, members) in by_class.iter().enumerate() {
        let share = members.len() as f64 * ratio;
        let cap = members.len().saturating_sub(taken[c] + 1);
        counts[c] = (share.floor() as usize).min(cap);
        assigned += counts[c];
        remainders.push((share - share.floor(), c));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut rounds = 0;
    while assigned < target && rounds < by_class.len() {
        rounds += 1;
        for &(_, c) in &remainders {
            if assigned >= target {
                break;
            }
            if counts[c] + taken[c] + 1 < by_class[c].len() {
                counts[c] += 1;
                assigned += 1;
            }
        }
    }
}

/// Gaussian-cluster task description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub cluster_separation: f64,
    pub cluster_scale: f64,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Config(format!("synthetic spec field `{name}` {msg}")));
        if self.num_classes < 1 {
            return field("num_classes", "must be >= 1");
        }
        if self.samples_per_class < 1 {
            return field("samples_per_class", "must be >= 1");
        }
        if self.feature_dim < 1 {
            return field("feature_dim", "must be >= 1");
        }
        if !(self.cluster_separation >= 0.0) || !self.cluster_separation.is_finite() {
            return field("cluster_separation", "must be finite and >= 0");
        }
        if !(self.cluster_scale > 0.0) || !self.cluster_scale.is_finite() {
            return field("cluster_scale", "must be finite and > 0");
        }
        Ok(())
    }
}

/// Draws a synthetic task. Class centers lie on a sphere of radius
/// `cluster_separation`: a fixed maximally spread frame (±axis pairs, or a
/// 1-d grid) rotated by a seeded random orthogonal matrix. Rows interleave
/// classes: row `i` has label `i % num_classes`.
pub fn gen_synthetic_task<T: Real>(spec: &SyntheticTaskSpec, name: impl Into<String>) -> Result<TaskDataset<T>> {
    spec.validate()?;
    let centers = class_centers(spec);
    let d = spec.feature_dim;
    let c = spec.num_classes;
    let n = c * spec.samples_per_class;
    let mut noise = RandomStream::new(spec.seed, 1);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % c;
        for &mu in &centers[y] {
            data.push(T::lit(mu + spec.cluster_scale * noise.normal::<f64>()));
        }
        labels.push(y);
    }
    TaskDataset::new(name, Matrix::from_vec(n, d, data)?, labels, c)
}

fn class_centers(spec: &SyntheticTaskSpec) -> Vec<Vec<f64>> {
    let d = spec.feature_dim;
    let c = spec.num_classes;
    let r = spec.cluster_separation;
    let mut stream = RandomStream::new(spec.seed, 0);
    if d == 1 {
        return (0..c)
            .map(|k| {
                if c == 1 {
                    vec![r]
                } else {
                    vec![-r + 2.0 * r * k as f64 / (c - 1) as f64]
                }
            })
            .collect();
    }
    let frame: Vec<Vec<f64>> = (0..c)
        .map(|k| {
            let mut v = vec![0.0; d];
            if k < 2 * d {
                v[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            } else {
                // More classes than axis directions: random unit directions.
                v.iter_mut().for_each(|x| *x = stream.normal());
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect();
    let rot = random_rotation(d, &mut stream);
    frame
        .iter()
        .map(|v| {
            (0..d)
                .map(|i| r * (0..d).map(|j| rot[i][j] * v[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Orthogonal matrix from Gram–Schmidt on a Gaussian matrix.
fn random_rotation(d: usize, stream: &mut RandomStream) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| stream.normal()).collect();
        for q in &cols {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    (0..d).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect()
}

/// Ordered list of tasks; position in the sequence is the head index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence<T> {
    pub tasks: Vec<SplitDataset<T>>,
    pub label: String,
}

impl<T: Real> TaskSequence<T> {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.feature_dim())
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.num_classes()).collect()
    }
}

/// Arranges `datasets` in `order`; the label joins task names with `-`.
pub fn make_sequence<T: Real>(datasets: &[SplitDataset<T>], order: &[usize]) -> Result<TaskSequence<T>> {
    if order.is_empty() {
        return Err(Error::InvalidArgument("task order is empty".into()));
    }
    let distinct: BTreeSet<usize> = order.iter().copied().collect();
    if order.len() != datasets.len() || distinct.len() != order.len() || order.iter().any(|&i| i >= datasets.len()) {
        return Err(Error::InvalidArgument(format!(
            "order {order:?} is not a permutation of 0..{}",
            datasets.len()
        )));
    }
    let d = datasets[order[0]].feature_dim();
    if let Some(&bad) = order.iter().find(|&&i| datasets[i].feature_dim() != d) {
        return Err(Error::Shape(format!(
            "task `{}` has {} features, expected {d}",
            datasets[bad].name(),
            datasets[bad].feature_dim()
        )));
    }
    let tasks: Vec<SplitDataset<T>> = order.iter().map(|&i| datasets[i].clone()).collect();
    let label = tasks.iter().map(|t| t.name().to_string()).collect::<Vec<_>>().join("-");
    Ok(TaskSequence { tasks, label })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<TaskDataset<f64>> {
        read_dataset(text.as_bytes(), "t")
    }

    #[test]
    fn reads_simple_csv() {
        let ds = parse("a,b,label\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n").unwrap();
        assert_eq!((ds.len(), ds.feature_dim(), ds.num_classes), (4, 2, 2));
        assert_eq!(ds.features.row(1), &[3.0, 4.0]);
        assert_eq!(ds.labels, vec![0, 1, 0, 1]);
    }

    #[test]
    fn label_column_anywhere_and_sparse_classes() {
        let ds = parse("label,x\n3,0.5\n0,1.5\n").unwrap();
        assert_eq!(ds.num_classes, 4);
        assert_eq!(ds.features.data(), &[0.5, 1.5]);
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        match parse("a,label\n1,0\nfoo,1\n") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "a")),
            other => panic!("{other:?}"),
        }
        match parse("a,label\n1,-1\n") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (1, "label")),
            other => panic!("{other:?}"),
        }
        match parse("a,b,label\n1,2,0\n1,0\n") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("a,b\n1,2\n"), Err(Error::Parse { row: 0, .. })));
        assert!(matches!(
            load_dataset::<f64>("/nonexistent/task.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let spec = SyntheticTaskSpec {
            num_classes: 3,
            samples_per_class: 4,
            feature_dim: 2,
            cluster_separation: 3.0,
            cluster_scale: 0.7,
            seed: 9,
        };
        let ds: TaskDataset<f64> = gen_synthetic_task(&spec, "t").unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset::<f64, _>(buf.as_slice(), "t").unwrap(), ds);
    }

    fn single_column(values: &[f64]) -> TaskDataset<f64> {
        let m = Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap();
        TaskDataset::new("c", m, vec![0; values.len()], 1).unwrap()
    }

    #[test]
    fn standardization_small_cases() {
        let p = fit_standardization(&single_column(&[1.0, 3.0])).unwrap();
        assert_eq!((p.mean[0], p.std[0]), (2.0, 1.0));
        let p = fit_standardization(&single_column(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!((p.mean[0], p.std[0]), (5.0, 1.0));
        assert!(fit_standardization(&single_column(&[1.0])).is_err());

        let ds = single_column(&[4.0]);
        let id = StandardizationParams {
            mean: vec![0.0],
            std: vec![1.0],
        };
        assert_eq!(apply_standardization(&id, &ds).unwrap(), ds);
        let p = StandardizationParams {
            mean: vec![2.0],
            std: vec![2.0],
        };
        assert_eq!(apply_standardization(&p, &ds).unwrap().features.data(), &[1.0]);
        let wide = StandardizationParams {
            mean: vec![0.0; 2],
            std: vec![1.0; 2],
        };
        assert!(apply_standardization(&wide, &ds).is_err());
    }

    #[test]
    fn standardized_train_has_zero_mean_unit_std() {
        let mut s = RandomStream::new(17, 0);
        let data: Vec<f64> = (0..400)
            .map(|i| s.normal::<f64>() * (1 + i % 4) as f64 + i as f64 % 7.0)
            .collect();
        let ds = TaskDataset::new("r", Matrix::from_vec(100, 4, data).unwrap(), vec![0; 100], 1).unwrap();
        let params = fit_standardization(&ds).unwrap();
        let z = apply_standardization(&params, &ds).unwrap();
        // Recompute statistics independently on the transformed columns.
        for c in 0..4 {
            let col = z.features.column(c);
            let m = col.iter().sum::<f64>() / 100.0;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 100.0).sqrt();
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10, "col {c}: {m} {sd}");
        }
        for r in 0..100 {
            for c in 0..4 {
                let back = z.features.get(r, c) * params.std[c] + params.mean[c];
                assert!((back - ds.features.get(r, c)).abs() < 1e-12);
            }
        }
    }

    fn balanced(n: usize, classes: usize) -> TaskDataset<f64> {
        let m = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        TaskDataset::new("b", m, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    #[test]
    fn split_balanced_exact() {
        let ds = balanced(100, 2);
        let s = split_dataset(&ds, DEFAULT_SPLIT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        for part in [&s.train, &s.val, &s.test] {
            let ones = part.labels.iter().filter(|&&y| y == 1).count() as i64;
            let zeros = part.len() as i64 - ones;
            assert!((ones - zeros).abs() <= 1);
        }
        assert_eq!(s, split_dataset(&ds, DEFAULT_SPLIT_RATIOS, 1).unwrap());
        assert_ne!(s, split_dataset(&ds, DEFAULT_SPLIT_RATIOS, 2).unwrap());
    }

    #[test]
    fn split_rejects_tiny_class() {
        let m = Matrix::from_vec(20, 1, vec![0.0; 20]).unwrap();
        let mut labels = vec![0; 20];
        labels[7] = 1;
        let ds = TaskDataset::new("x", m, labels, 2).unwrap();
        assert!(matches!(
            split_dataset(&ds, DEFAULT_SPLIT_RATIOS, 0),
            Err(Error::Stratification { class: 1, count: 1, .. })
        ));
        assert!(split_dataset(&balanced(100, 2), [0.5, 0.5, 0.1], 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 10usize..200, classes in 1usize..5, seed in 0u64..1000) {
            prop_assume!(n / classes >= 3);
            let ds = balanced(n, classes);
            let s = split_dataset(&ds, DEFAULT_SPLIT_RATIOS, seed).unwrap();
            // Features hold the original row index, so they identify samples.
            let mut seen: Vec<usize> = [&s.train, &s.val, &s.test]
                .iter()
                .flat_map(|p| p.features.data().iter().map(|&v| v as usize))
                .collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for (part, ratio) in [(&s.val, 0.1), (&s.test, 0.1), (&s.train, 0.8)] {
                let target = n as f64 * ratio;
                prop_assert!((part.len() as f64 - target).abs() <= 1.0 + 1e-9, "{} vs {}", part.len(), target);
            }
            for c in 0..classes {
                prop_assert!(s.train.labels.contains(&c));
            }
        }
    }

    fn nearest_centroid_accuracy(ds: &TaskDataset<f64>) -> f64 {
        let (c, d) = (ds.num_classes, ds.feature_dim());
        let half = ds.len() / 2;
        let mut centroids = vec![vec![0.0; d]; c];
        let mut counts = vec![0.0; c];
        for r in 0..half {
            let y = ds.labels[r];
            counts[y] += 1.0;
            for (a, v) in centroids[y].iter_mut().zip(ds.features.row(r)) {
                *a += v;
            }
        }
        for (cen, n) in centroids.iter_mut().zip(&counts) {
            cen.iter_mut().for_each(|a| *a /= n);
        }
        let mut hits = 0;
        for r in half..ds.len() {
            let x = ds.features.row(r);
            let pred = (0..c)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(x).map(|(u, v)| (u - v).powi(2)).sum();
                    let db: f64 = centroids[b].iter().zip(x).map(|(u, v)| (u - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            hits += (pred == ds.labels[r]) as usize;
        }
        hits as f64 / (ds.len() - half) as f64
    }

    #[test]
    fn synthetic_separable_and_noise() {
        let mut spec = SyntheticTaskSpec {
            num_classes: 2,
            samples_per_class: 500,
            feature_dim: 5,
            cluster_separation: 10.0,
            cluster_scale: 0.1,
            seed: 3,
        };
        let ds: TaskDataset<f64> = gen_synthetic_task(&spec, "s").unwrap();
        assert!(nearest_centroid_accuracy(&ds) > 0.99);
        assert_eq!(ds, gen_synthetic_task(&spec, "s").unwrap());

        spec.cluster_separation = 0.0;
        spec.num_classes = 4;
        let noise: TaskDataset<f64> = gen_synthetic_task(&spec, "n").unwrap();
        assert!((nearest_centroid_accuracy(&noise) - 0.25).abs() < 0.1);
    }

    #[test]
    fn synthetic_centers_on_sphere() {
        let spec = SyntheticTaskSpec {
            num_classes: 4,
            samples_per_class: 1,
            feature_dim: 3,
            cluster_separation: 2.5,
            cluster_scale: 1.0,
            seed: 8,
        };
        for center in class_centers(&spec) {
            let r = center.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((r - 2.5).abs() < 1e-12);
        }
        let mut bad = spec.clone();
        bad.num_classes = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(m)) if m.contains("num_classes")));
    }

    #[test]
    fn sequences() {
        let tasks: Vec<SplitDataset<f64>> = (0..4)
            .map(|i| {
                let mut ds = balanced(20, 2);
                ds.name = format!("T{i}");
                split_dataset(&ds, DEFAULT_SPLIT_RATIOS, 0).unwrap()
            })
            .collect();
        let seq = make_sequence(&tasks, &[0, 1, 2, 3]).unwrap();
        assert_eq!(seq.label, "T0-T1-T2-T3");
        let rev = make_sequence(&tasks, &[3, 2, 1, 0]).unwrap();
        assert_eq!(rev.tasks[0].name(), "T3");
        assert!(make_sequence(&tasks, &[0, 0, 1, 2]).is_err());
        assert!(make_sequence(&tasks, &[0, 1, 2]).is_err());
    }
}
