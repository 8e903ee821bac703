use bvcl::bnn::HyperParams;
use bvcl::continual::{grid_search, run_vcl, train_reference, GridSpec, RunSettings};
use bvcl::data::{
    gen_synthetic_task, make_sequence, split_dataset, SplitDataset, SyntheticTaskSpec, DEFAULT_SPLIT_RATIOS,
};
use bvcl::numerics::RandomStream;

fn task(name: &str, classes: usize, separation: f64, seed: u64) -> SplitDataset<f64> {
    let spec = SyntheticTaskSpec {
        num_classes: classes,
        samples_per_class: 100,
        feature_dim: 6,
        cluster_separation: separation,
        cluster_scale: 1.0,
        seed,
    };
    let ds = gen_synthetic_task::<f64>(&spec, name).unwrap();
    split_dataset(&ds, DEFAULT_SPLIT_RATIOS, seed)
        .unwrap()
        .standardized()
        .unwrap()
        .0
}

fn settings(epochs: usize) -> RunSettings {
    RunSettings {
        hidden_sizes: vec![16, 16],
        hyper: HyperParams {
            epochs,
            batch_size: 32,
            s_train: 4,
            s_test: 20,
            learning_rate: 0.005,
            ..Default::default()
        },
        keep_checkpoints: true,
    }
}

#[test]
fn single_task_run_is_one_by_one() {
    let t = task("solo", 2, 3.0, 1);
    let seq = make_sequence(&[t], &[0]).unwrap();
    let rec = run_vcl(&seq, &settings(5), &RandomStream::new(1, 0)).unwrap();
    assert_eq!(rec.val_accuracy.num_tasks(), 1);
    assert_eq!(rec.test_accuracy.row(1).len(), 1);
    let m = rec.test_metrics().unwrap();
    assert_eq!(m.steps[0].average_accuracy, rec.test_accuracy.get(1, 1));
    assert_eq!(m.steps[0].forget, 0.0);
    assert_eq!(rec.checkpoints.len(), 1);
}

#[test]
fn identical_tasks_do_not_forget() {
    let t = task("copy", 2, 3.0, 4);
    let mut twin = t.clone();
    twin.train.name = "twin".into();
    let seq = make_sequence(&[t, twin], &[0, 1]).unwrap();
    let rec = run_vcl(&seq, &settings(30), &RandomStream::new(4, 0)).unwrap();
    let m = &rec.test_accuracy;
    assert!(m.get(1, 1) > 0.9, "{:?}", m.rows());
    assert!((m.get(2, 1) - m.get(1, 1)).abs() <= 0.05, "{:?}", m.rows());
    assert_eq!(rec.checkpoints.len(), 2);
    assert!(rec.checkpoints[0].is_trained(0) && !rec.checkpoints[0].is_trained(1));
}

#[test]
fn run_is_reproducible() {
    let seq = make_sequence(&[task("a", 2, 2.0, 1), task("b", 3, 2.0, 2)], &[1, 0]).unwrap();
    let a = run_vcl(&seq, &settings(3), &RandomStream::new(9, 0)).unwrap();
    let b = run_vcl(&seq, &settings(3), &RandomStream::new(9, 0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.order, "b-a");
}

#[test]
fn reference_accuracy_bounds() {
    let hyper = HyperParams {
        epochs: 30,
        batch_size: 32,
        s_train: 4,
        s_test: 20,
        ..Default::default()
    };
    let grid = GridSpec {
        learning_rates: vec![0.005],
        betas: vec![0.1, 1.0],
    };
    let easy = train_reference(&task("easy", 2, 4.0, 3), &[16, 16], &hyper, &grid, 3).unwrap();
    assert!(easy.test > 0.95, "{easy:?}");
    let noise = train_reference(&task("noise", 2, 0.0, 5), &[16, 16], &hyper, &grid, 3).unwrap();
    assert!((0.35..=0.65).contains(&noise.test), "{noise:?}");
    let again = train_reference(&task("easy", 2, 4.0, 3), &[16, 16], &hyper, &grid, 3).unwrap();
    assert_eq!(easy, again);
}

#[test]
fn grid_selects_argmin_per_step() {
    let seq = make_sequence(&[task("a", 2, 2.0, 1), task("b", 2, 1.0, 2)], &[0, 1]).unwrap();
    let grid = GridSpec {
        learning_rates: vec![0.001, 0.01],
        betas: vec![0.01, 1.0],
    };
    let report = grid_search(&seq, &settings(3), &grid, 2).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert_eq!(report.best.len(), 2);
    for best in &report.best {
        let winner = best.val.combined.unwrap();
        for c in &report.cells {
            assert!(winner <= c.val_metrics.steps[best.k - 1].combined.unwrap());
        }
    }
    assert!(report.cells.iter().all(|c| c.record.final_posterior.is_none()));

    let single = GridSpec {
        learning_rates: vec![0.01],
        betas: vec![0.5],
    };
    let report = grid_search(&seq, &settings(2), &single, 2).unwrap();
    assert!(report
        .best
        .iter()
        .all(|b| b.cell == 0 && b.learning_rate == 0.01 && b.beta == 0.5));
}
