use std::fs;

use rddm_core::io::{
    load_checkpoint, read_recording, read_windows, save_checkpoint, sidecar_path, write_recording, write_windows,
    Checkpoint, Recording, ScheduleSpec, WindowSet,
};
use rddm_core::net::NetConfig;
use rddm_core::rddm::{Model, ModelKind, TrainConfig, Trainer, TrainingExample};
use rddm_core::synth::{make_dataset, DatasetRanges};
use rddm_core::Error;

const SPEC: ScheduleSpec = ScheduleSpec {
    steps: 10,
    beta_min: 1e-4,
    beta_max: 0.2,
};

fn window_set() -> WindowSet {
    let pairs: Vec<_> = make_dataset(3, &DatasetRanges::default(), 5)
        .unwrap()
        .into_iter()
        .flat_map(|p| p.windows)
        .collect();
    WindowSet::from_pairs(&pairs)
}

#[test]
fn window_sets_round_trip_in_both_encodings() {
    let dir = tempfile::tempdir().unwrap();
    let set = window_set();
    assert_eq!(set.n_windows(), 3);
    for name in ["w.csv", "w.bin"] {
        let path = dir.path().join(name);
        write_windows(&path, &set).unwrap();
        assert_eq!(read_windows(&path).unwrap(), set, "{name}");
    }
    let csv = fs::read_to_string(dir.path().join("w.csv")).unwrap();
    assert!(csv.starts_with("# rddm-schema: 1\n"));
    let side = fs::read_to_string(sidecar_path(&dir.path().join("w.bin"))).unwrap();
    assert!(side.contains("\"schema_version\": 1"));
}

#[test]
fn unknown_schema_versions_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let set = window_set();
    let csv = dir.path().join("w.csv");
    write_windows(&csv, &set).unwrap();
    let text = fs::read_to_string(&csv).unwrap().replacen("# rddm-schema: 1", "# rddm-schema: 2", 1);
    fs::write(&csv, text).unwrap();
    assert!(matches!(read_windows(&csv), Err(Error::Version(_))));

    let bin = dir.path().join("w.bin");
    write_windows(&bin, &set).unwrap();
    let side = sidecar_path(&bin);
    let text = fs::read_to_string(&side).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 7");
    fs::write(&side, text).unwrap();
    assert!(matches!(read_windows(&bin), Err(Error::Version(_))));

    let headless = dir.path().join("h.csv");
    fs::write(&headless, "window,i,ecg\n0,0,1\n").unwrap();
    assert!(matches!(read_windows(&headless), Err(Error::Format(_))));
}

#[test]
fn recordings_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rec = Recording {
        rate_hz: 256.0,
        ppg: (0..300).map(|i| (i as f64 * 0.1).sin()).collect(),
        ecg: (0..300).map(|i| (i as f64 * 0.37).cos() * 1e-3).collect(),
    };
    let path = dir.path().join("r.csv");
    write_recording(&path, &rec).unwrap();
    assert_eq!(read_recording(&path).unwrap(), rec);
}

fn examples() -> Vec<TrainingExample> {
    make_dataset(6, &DatasetRanges::default(), 2)
        .unwrap()
        .iter()
        .map(|p| TrainingExample::from_window(&p.windows[0], 32).unwrap())
        .collect()
}

fn tiny_trainer(kind: ModelKind) -> Trainer {
    let config = NetConfig {
        attention_stages: vec![1],
        ..NetConfig::tiny()
    };
    let model = Model::new(kind, config, SPEC.build().unwrap(), 32, 4).unwrap();
    Trainer::new(
        model,
        TrainConfig {
            lr: 1e-3,
            batch: 4,
            epochs: 3,
            seed: 6,
            ..TrainConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let data = examples();
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Rddm, ModelKind::Ddpm] {
        let mut straight = tiny_trainer(kind);
        for _ in 0..3 {
            straight.run_epoch(&data, &mut |_| {}).unwrap();
        }
        let mut first = tiny_trainer(kind);
        for _ in 0..2 {
            first.run_epoch(&data, &mut |_| {}).unwrap();
        }
        let path = dir.path().join(format!("{kind}.json"));
        save_checkpoint(&path, &Checkpoint::from_trainer(&first, SPEC)).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.schedule, SPEC);
        let mut resumed = loaded.into_trainer(first.config.clone()).unwrap();
        assert_eq!((resumed.epoch, resumed.step), (first.epoch, first.step));
        resumed.run_epoch(&data, &mut |_| {}).unwrap();
        for (a, b) in straight.model.nets().iter().zip(resumed.model.nets()) {
            assert_eq!(a.params(), b.params());
        }
    }
}

#[test]
fn checkpoints_without_training_state_load_for_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let t = tiny_trainer(ModelKind::Rddm);
    let path = dir.path().join("m.json");
    save_checkpoint(
        &path,
        &Checkpoint {
            model: t.model.clone(),
            schedule: SPEC,
            train: None,
        },
    )
    .unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert!(ck.train.is_none());
    assert_eq!(ck.model.kind(), ModelKind::Rddm);
    assert_eq!(ck.model.gamma(), Some(32));
    assert_eq!(ck.model.nets()[1].params(), t.model.nets()[1].params());

    let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 0");
    fs::write(&path, text).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Version(_))));
}
