//! Results are identical across repeated runs and across worker counts.

use ssomvr::features::build_feature_field;
use ssomvr::pipeline::{apply_script, render_groups, train_lattice, TrainConfig};
use ssomvr::render::{encode_png, Camera};
use ssomvr::ssom::LatticeSnapshot;
use ssomvr::tfgen::GroupSelection;
use ssomvr::volume::{make_phantom, PhantomKind};
use ssomvr::{ChannelWeights, RenderSettings, ReplayScript, TfConfig, TrainingParams};

/// Snapshot JSON and PNG bytes of one full pipeline run.
fn run() -> (String, Vec<u8>) {
    let volume = make_phantom(
        &PhantomKind::TwoBlobs {
            first: 0.2,
            second: 0.9,
        },
        [20, 18, 16],
    )
    .unwrap()
    .volume;
    let field = build_feature_field(&volume, ChannelWeights::default()).unwrap();
    let config = TrainConfig {
        level: 2,
        lattice_seed: 11,
        params: TrainingParams {
            epochs: 5,
            seed: 11,
            ..Default::default()
        },
    };
    let trained = train_lattice(&field, &config).unwrap();
    let snapshot = LatticeSnapshot::capture(&trained.lattice, field.weights()).to_json();
    let script = ReplayScript(vec![
        GroupSelection {
            node_ids: (0..40).collect(),
        },
        GroupSelection {
            node_ids: (100..140).collect(),
        },
    ]);
    let tf = TfConfig::default();
    let groups = apply_script(&script, &trained.assignment, &volume, &tf).unwrap();
    let settings = RenderSettings {
        width: 64,
        height: 48,
        ..Default::default()
    };
    let camera = Camera::preset(volume.dims(), volume.meta().spacing);
    let (_, img) = render_groups(&groups, &volume, &field, &tf, &camera, &settings).unwrap();
    (snapshot, encode_png(&img).unwrap())
}

fn run_with_threads(n: usize) -> (String, Vec<u8>) {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(run)
}

#[test]
fn identical_across_runs_and_worker_counts() {
    let reference = run_with_threads(1);
    assert_eq!(run_with_threads(1), reference);
    for n in [2, 3, 8] {
        let other = run_with_threads(n);
        assert!(other.0 == reference.0, "snapshot differs with {n} workers");
        assert!(other.1 == reference.1, "image differs with {n} workers");
    }
}
