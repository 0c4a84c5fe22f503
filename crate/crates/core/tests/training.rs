use std::sync::OnceLock;

use invsharp_core::mri_sim::{build_dataset, Dataset, DatasetConfig, PhantomSpec};
use invsharp_core::train::{train, GeometrySpec, Mode, TrainConfig};

/// Backward mode, two blocks, 500 steps on 20 samples, seed 0.
fn backward_log() -> &'static [(usize, f64)] {
    static LOG: OnceLock<Vec<(usize, f64)>> = OnceLock::new();
    LOG.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            n_train: 20,
            n_eval: 0,
            phantom: PhantomSpec { size: 32, ..PhantomSpec::default() },
            ..DatasetConfig::default()
        };
        build_dataset(&cfg, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        let tc = TrainConfig {
            mode: Mode::Backward,
            max_iterations: 500,
            seed: 0,
            geometry: GeometrySpec { blocks: 2, layers: 3, channels: 8 },
            ..TrainConfig::default()
        };
        let out = train(&tc, &ds.train, (32, 32)).unwrap();
        assert!(out.aborted.is_none());
        eprintln!("{:?}", out.log);
        out.log
    })
}

#[test]
fn backward_training_halves_the_loss() {
    let log = backward_log();
    let (first, last) = (log[0].1, log.last().unwrap().1);
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn backward_training_matches_the_recorded_trajectory() {
    let log = backward_log();
    let (first, last) = (log[0].1, log.last().unwrap().1);
    assert!((first - FIRST).abs() < 1e-9, "first loss {first}");
    assert!((last - LAST).abs() < 1e-9, "last loss {last}");
}

// Recorded from the first run of this configuration.
const FIRST: f64 = 0.08763946568180335;
const LAST: f64 = 0.07627967632164294;
