//! Whole experiments on small blob configs.

use alfamix_core::harness::{prepare_data, read_matrix_csv, read_results_csv, run_all, run_experiment, write_outputs};
use alfamix_core::{Error, ExperimentConfig, InitMode, Strategy};

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
        initial_labelled = 12
        rounds = 4
        budget = 6
        seeds = [0, 1, 2]
        strategies = ["random", "entropy", "alfamix"]
        {extra}

        [dataset]
        kind = "blobs"
        num_classes = 3
        per_class_train = 25
        per_class_test = 15
        dim = 4
        spread = 0.8
        center_scale = 2.5
        seed = 4

        [model]
        hidden_dims = [10]

        [train]
        learning_rate = 0.01
        max_epochs = 60
        "#
    ))
    .unwrap()
}

#[test]
fn rounds_grow_the_labelled_set_by_the_budget() {
    let c = config("");
    let data = prepare_data(&c.dataset, std::path::Path::new(".")).unwrap();
    let r = run_experiment(&c, &data, Strategy::AlfaMix, 1).unwrap();
    assert_eq!(r.records.len(), 4);
    for (i, rec) in r.records.iter().enumerate() {
        assert_eq!(rec.round, i);
        assert_eq!(rec.labelled_count, 12 + 6 * i);
        assert_eq!(rec.selected.len(), 6);
        assert!((0.0..=1.0).contains(&rec.test_accuracy));
        assert!(rec.acq_seconds.is_none());
    }
    let mut all: Vec<usize> = r.records.iter().flat_map(|x| x.selected.clone()).collect();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), 24);
}

#[test]
fn strategies_share_their_first_round() {
    let c = config("");
    let data = prepare_data(&c.dataset, std::path::Path::new(".")).unwrap();
    let a = run_experiment(&c, &data, Strategy::Random, 2).unwrap();
    let b = run_experiment(&c, &data, Strategy::Entropy, 2).unwrap();
    assert_eq!(a.records[0].test_accuracy, b.records[0].test_accuracy);
}

#[test]
fn thread_count_does_not_change_results() {
    let c = config("init_mode = \"continue\"");
    assert_eq!(c.init_mode, InitMode::Continue);
    let data = prepare_data(&c.dataset, std::path::Path::new(".")).unwrap();
    let one = run_all(&c, &data, &c.strategies, &c.seeds, 1).unwrap();
    let many = run_all(&c, &data, &c.strategies, &c.seeds, 4).unwrap();
    assert_eq!(one, many);
}

#[test]
fn outputs_round_trip_through_csv() {
    let c = config("");
    let data = prepare_data(&c.dataset, std::path::Path::new(".")).unwrap();
    let results = run_all(&c, &data, &c.strategies, &c.seeds, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_outputs(&results, dir.path()).unwrap().expect("three seeds give a matrix");
    assert_eq!(read_matrix_csv(&dir.path().join("matrix.csv")).unwrap(), matrix);
    let back = read_results_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(back.len(), results.len());
    for (x, y) in back.iter().zip(&results) {
        assert_eq!((x.strategy, x.seed), (y.strategy, y.seed));
        let accs = |r: &alfamix_core::RunResult| r.records.iter().map(|q| q.test_accuracy).collect::<Vec<_>>();
        assert_eq!(accs(x), accs(y));
    }
}

#[test]
fn oversized_schedule_is_rejected_before_training() {
    let mut c = config("");
    c.rounds = 20;
    let data = prepare_data(&c.dataset, std::path::Path::new(".")).unwrap();
    let err = run_experiment(&c, &data, Strategy::Random, 0).unwrap_err();
    // 75 rows, 12 labelled: rounds 0..=10 fit, round 10 finds 3 left
    assert!(matches!(err, Error::PoolExhausted { round: 10, budget: 6, remaining: 3 }), "{err}");
}
