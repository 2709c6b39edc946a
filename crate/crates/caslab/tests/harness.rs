use caslab::harness::{emit, metrics_csv, read_metrics, run_experiment, ExperimentConfig, Mode, METRICS_HEADER};

fn small(refinement: bool) -> ExperimentConfig {
    ExperimentConfig { trials: 2, episodes: 40, refinement, seed: 7, ..ExperimentConfig::default() }
}

#[test]
fn zero_episodes_gives_a_header_only_table() {
    let cfg = ExperimentConfig { episodes: 0, ..small(true) };
    let out = run_experiment(&cfg).unwrap();
    assert!(out.rows.is_empty());
    let csv = String::from_utf8(metrics_csv(&out.rows).unwrap()).unwrap();
    assert_eq!(csv, format!("{}\n", METRICS_HEADER.join(",")));
}

#[test]
fn one_row_per_trial_and_episode_in_order() {
    let cfg = small(true);
    let out = run_experiment(&cfg).unwrap();
    let keys: Vec<_> = out.rows.iter().map(|r| (r.trial, r.episode)).collect();
    let want: Vec<_> = (0..cfg.trials).flat_map(|t| (0..cfg.episodes).map(move |e| (t, e))).collect();
    assert_eq!(keys, want);
}

#[test]
fn standard_keeps_the_feature_space() {
    let out = run_experiment(&small(false)).unwrap();
    assert!(out.rows.iter().all(|r| r.active_feature_count == 2 && !r.refinement_event));
    assert!(out.events.is_empty());
}

#[test]
fn signals_accumulate() {
    let out = run_experiment(&small(true)).unwrap();
    for trial in out.rows.chunk_by(|a, b| a.trial == b.trial) {
        let mut total = 0;
        for r in trial {
            total += r.episode_signals;
            assert_eq!(r.cumulative_signals, total);
        }
    }
}

#[test]
fn feature_count_only_grows_at_refinements() {
    let out = run_experiment(&ExperimentConfig { episodes: 150, ..small(true) }).unwrap();
    for w in out.rows.windows(2).filter(|w| w[0].trial == w[1].trial) {
        assert!(w[1].active_feature_count >= w[0].active_feature_count);
        if w[1].active_feature_count > w[0].active_feature_count {
            assert!(w[1].refinement_event, "growth at episode {} without a refinement", w[1].episode);
        }
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for (i, mode) in [Mode::Random, Mode::Fixed].into_iter().enumerate() {
        let cfg = ExperimentConfig { mode, ..small(true) };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let (da, db) = (dir.path().join(format!("a{i}")), dir.path().join(format!("b{i}")));
        emit(&a.rows, &a.events, &da).unwrap();
        emit(&b.rows, &b.events, &db).unwrap();
        for file in ["metrics.csv", "aggregates.csv", "refinements.log"] {
            assert_eq!(std::fs::read(da.join(file)).unwrap(), std::fs::read(db.join(file)).unwrap(), "{file}");
        }
    }
}

#[test]
fn metrics_round_trip_through_csv() {
    let out = run_experiment(&small(true)).unwrap();
    let bytes = metrics_csv(&out.rows).unwrap();
    let back = read_metrics(&bytes[..]).unwrap();
    assert_eq!(metrics_csv(&back).unwrap(), bytes);
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        ExperimentConfig { trials: 0, ..ExperimentConfig::default() },
        ExperimentConfig { theta: 0.99, ..ExperimentConfig::default() },
        ExperimentConfig { mode: Mode::Fixed, goal: "archive".into(), ..ExperimentConfig::default() },
        ExperimentConfig { mode: Mode::Fixed, goal: "nowhere".into(), episodes: 1, ..ExperimentConfig::default() },
    ] {
        assert!(run_experiment(&cfg).is_err(), "{cfg:?}");
    }
}
