use ndarray::Array2;

use stepcount::dataset::PreparedSlice;
use stepcount::experiment::{
    load_group, render_report, run_on, train_full, write_report, ExperimentConfig, ExperimentReport,
    GridPoint, GroupDataset, Protocol, ReportFormat, TrainedModel,
};
use stepcount::ingest::{extract_usable_spans, WalkerGroup};
use stepcount::neural::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, TrainConfig, Trainer};
use stepcount::par::Execution;
use stepcount::synth::{generate_cohort, CohortSpec, ParticipantSpec, WalkLayout};

fn small_train() -> TrainConfig {
    TrainConfig {
        hidden_sizes: (6, 5),
        training_steps: 6,
        batch_size: 32,
        timesteps: 20,
        ..Default::default()
    }
}

fn small_cohort(participants: usize) -> GroupDataset {
    let spec = CohortSpec {
        duration_s: 12.0,
        paths_per_participant: 2,
        layout: WalkLayout {
            turn: true,
            feature: true,
        },
        ..CohortSpec::uniform(WalkerGroup::Sighted, participants, 3)
    };
    let mut spans = Vec::new();
    for (seq, walk) in spec.walks().unwrap() {
        spans.extend(extract_usable_spans(&walk, &seq).unwrap());
    }
    GroupDataset::from_spans(WalkerGroup::Sighted, &spans, 20).unwrap()
}

fn config(protocol: Protocol) -> ExperimentConfig {
    ExperimentConfig {
        protocol,
        train: small_train(),
        block_seconds: 2.0,
        ..Default::default()
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = small_cohort(2);
    let cfg = TrainConfig {
        training_steps: 8,
        ..small_train()
    };
    let slices = &data.slices;
    let src = stepcount::dataset::SliceWindows {
        slices,
        refs: (19..slices[0].times.len()).map(|e| (0, e)).collect(),
        timesteps: 20,
    };

    let mut straight = Trainer::new(cfg.new_model().unwrap(), cfg.clone()).unwrap();
    straight.run(&src).unwrap();

    let half = TrainConfig {
        training_steps: 4,
        ..cfg.clone()
    };
    let mut first = Trainer::new(cfg.new_model().unwrap(), half).unwrap();
    first.run(&src).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let ck = Checkpoint {
        model: first.model.clone(),
        adam: Some(first.adam.clone()),
        meta: CheckpointMeta {
            seed: cfg.seed,
            timesteps: 20,
            norm: None,
            config: Some(cfg.clone()),
        },
    };
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let mut second = Trainer::resume(back.model, back.adam.unwrap(), cfg).unwrap();
    second.run(&src).unwrap();

    assert_eq!(second.model.params, straight.model.params);
    let mut trace = first.loss_trace.clone();
    trace.extend(&second.loss_trace);
    assert_eq!(trace, straight.loss_trace);
}

#[test]
fn sequential_and_parallel_training_agree_bitwise() {
    let data = small_cohort(2);
    let run = |exec| {
        let cfg = TrainConfig {
            execution: exec,
            chunk_size: 8,
            ..small_train()
        };
        train_full(&data, &cfg).unwrap()
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.loss_trace, b.loss_trace);
}

#[test]
fn mixed_protocol_report_shape() {
    let data = small_cohort(3);
    let report = run_on(&data, &config(Protocol::Mixed { k: 3 })).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert_eq!(
        report.folds.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
        ["cv0", "cv1", "cv2"]
    );
    for f in &report.folds {
        assert!(f.error.is_none(), "{:?}", f.error);
        assert_eq!(f.loss_trace.len(), 6);
        let t = f.test.as_ref().unwrap();
        for m in 1..=3 {
            assert!(t.metric(3).undercount_rate <= t.metric(m).undercount_rate);
            assert!(t.metric(3).overcount_rate <= t.metric(m).overcount_rate);
        }
    }
    assert_eq!(report.mean_test.unwrap().folds, 3);

    let again = run_on(&data, &config(Protocol::Mixed { k: 3 })).unwrap();
    assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
    assert_eq!(ExperimentReport::from_json(&report.to_json().unwrap()).unwrap(), report);
}

#[test]
fn leave_one_out_with_model_selection() {
    let data = small_cohort(3);
    let mut cfg = config(Protocol::LeaveOneOut {
        test_participant: Some("2".into()),
        validation: true,
    });
    cfg.grid = vec![
        GridPoint {
            label: "tiny".into(),
            hidden_sizes: Some((3, 3)),
            ..Default::default()
        },
        GridPoint {
            label: "longer".into(),
            training_steps: Some(8),
            ..Default::default()
        },
    ];
    let report = run_on(&data, &cfg).unwrap();
    // test participant 2, validation rotates over 1 and 3
    assert_eq!(report.folds.len(), 2);
    for f in &report.folds {
        assert_eq!(f.test_participant.as_deref(), Some("2"));
        assert!(f.valid.is_some());
    }
    let sel = report.selection.as_ref().unwrap();
    assert_eq!(sel.candidates.len(), 2);
    let best = sel
        .candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(sel.chosen, best.0);
    assert_eq!(report.mean_valid.unwrap().metric3.combined(), best.1);

    let table = render_report(&report, ReportFormat::Table).unwrap().remove(0).1;
    assert!(table.contains("valid") && table.contains("test"));
    assert!(table.contains("metric3") && table.contains("undercount"));
}

#[test]
fn leave_one_out_participant_errors() {
    let data = small_cohort(2);
    let unknown = config(Protocol::LeaveOneOut {
        test_participant: Some("nobody".into()),
        validation: false,
    });
    assert!(matches!(
        run_on(&data, &unknown),
        Err(stepcount::Error::UnknownParticipant(_))
    ));
    let needs_three = config(Protocol::LeaveOneOut {
        test_participant: None,
        validation: true,
    });
    assert!(matches!(
        run_on(&data, &needs_three),
        Err(stepcount::Error::TooFewParticipants { needed: 3, got: 2 })
    ));
}

#[test]
fn failing_fold_does_not_stop_the_others() {
    let mut data = small_cohort(2);
    // A participant whose only slice has no strikes to score.
    data.slices.push(PreparedSlice {
        id: "still".into(),
        participant_id: "still".into(),
        times: (0..60).map(|i| i as f64 * 0.04).collect(),
        inputs: Array2::zeros((60, 6)),
        labels: vec![0.0; 60],
        scored_steps: Vec::new(),
    });
    let report = run_on(
        &data,
        &config(Protocol::LeaveOneOut {
            test_participant: None,
            validation: false,
        }),
    )
    .unwrap();
    assert_eq!(report.folds.len(), 3);
    let failed: Vec<_> = report.folds.iter().filter(|f| f.error.is_some()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].test_participant.as_deref(), Some("still"));
    assert_eq!(report.mean_test.unwrap().folds, 2);
}

#[test]
fn loads_only_the_requested_group_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = CohortSpec::uniform(WalkerGroup::Sighted, 2, 1);
    spec.duration_s = 8.0;
    spec.paths_per_participant = 1;
    spec.participants.push(ParticipantSpec {
        id: "9".into(),
        group: WalkerGroup::GuideDog,
        profile: None,
    });
    generate_cohort(&spec, dir.path()).unwrap();
    // A sensor file for another group that would not parse.
    let walk = spec.walks().unwrap().pop().unwrap().1;
    assert_eq!(walk.walker_group, WalkerGroup::GuideDog);
    std::fs::write(dir.path().join("9_T1.csv"), "garbage").unwrap();

    let cfg = ExperimentConfig {
        data_root: dir.path().to_path_buf(),
        train: small_train(),
        ..Default::default()
    };
    let data = load_group(&cfg).unwrap();
    assert_eq!(data.participants(), ["1", "2"]);

    let dog = ExperimentConfig {
        group: WalkerGroup::GuideDog,
        ..cfg
    };
    assert!(load_group(&dog).unwrap_err().is_data_error());
}

#[test]
fn checkpoint_carries_normalization_and_writes_reports() {
    let data = small_cohort(2);
    let cfg = small_train();
    let trained = train_full(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &trained.checkpoint(&cfg)).unwrap();
    let back = TrainedModel::from_checkpoint(load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(back.norm, trained.norm);
    assert_eq!(back.timesteps, 20);

    let ecfg = config(Protocol::Mixed { k: 2 });
    let a = stepcount::experiment::evaluate_full(&trained, &data, &ecfg).unwrap();
    let b = stepcount::experiment::evaluate_full(&back, &data, &ecfg).unwrap();
    assert_eq!(a.folds[0].test, b.folds[0].test);

    let written = write_report(&a, &dir.path().join("out")).unwrap();
    let names: Vec<_> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["report.json", "report.txt", "metrics.csv", "loss.csv"]);
}

#[test]
fn plot_data_has_one_loss_row_per_step() {
    let data = small_cohort(2);
    let report = run_on(&data, &config(Protocol::Mixed { k: 2 })).unwrap();
    let files = render_report(&report, ReportFormat::PlotData).unwrap();
    let loss = &files.iter().find(|(n, _)| n == "loss.csv").unwrap().1;
    assert_eq!(loss.lines().count(), 1 + 2 * 6);
    let metrics = &files.iter().find(|(n, _)| n == "metrics.csv").unwrap().1;
    assert_eq!(metrics.lines().count(), 1 + 2 * 3);
}

#[test]
fn published_protocol_shapes_on_a_multi_group_directory() {
    let dir = tempfile::tempdir().unwrap();
    let person = |id: &str, group| ParticipantSpec {
        id: id.into(),
        group,
        profile: None,
    };
    let mut participants: Vec<_> = ["1", "2", "3", "5", "6", "7", "8"]
        .iter()
        .map(|id| person(id, WalkerGroup::LongCane))
        .collect();
    participants.extend(["11", "12", "13"].iter().map(|id| person(id, WalkerGroup::GuideDog)));
    let spec = CohortSpec {
        duration_s: 10.0,
        paths_per_participant: 1,
        participants,
        ..CohortSpec::default()
    };
    generate_cohort(&spec, dir.path()).unwrap();

    let base = ExperimentConfig {
        data_root: dir.path().to_path_buf(),
        train: small_train(),
        ..Default::default()
    };
    let cane = ExperimentConfig {
        group: WalkerGroup::LongCane,
        protocol: Protocol::LeaveOneOut {
            test_participant: Some("8".into()),
            validation: true,
        },
        ..base.clone()
    };
    let report = stepcount::experiment::run_experiment(&cane).unwrap();
    assert_eq!(
        report.folds.iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
        ["cv0", "cv1", "cv2", "cv3", "cv4", "cv5"]
    );
    assert!(report.folds.iter().all(|f| f.test_participant.as_deref() == Some("8")));
    let table = stepcount::experiment::render_table(&report);
    assert!(table.lines().nth(1).unwrap().contains("cv5"));

    let dog = ExperimentConfig {
        group: WalkerGroup::GuideDog,
        protocol: Protocol::LeaveOneOut {
            test_participant: None,
            validation: false,
        },
        ..base
    };
    let report = stepcount::experiment::run_experiment(&dog).unwrap();
    assert_eq!(report.folds.len(), 3);
    let tested: Vec<_> = report.folds.iter().map(|f| f.test_participant.clone().unwrap()).collect();
    assert_eq!(tested, ["11", "12", "13"]);
}
