use std::fs;

use hfv_core::codes::Scheme;
use hfv_core::forward::VideoVolume;
use hfv_core::harness::io::{export_pgm, import_pgm_sequence, load_volume, save_volume};
use hfv_core::harness::{run_experiment, synth_scene, ExperimentConfig, SyntheticSceneSpec};
use hfv_core::solver::SolverConfig;

fn small(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        scene: SyntheticSceneSpec::moving_patch(4, 8, 8),
        cameras: vec![2, 4],
        runs: 3,
        solver: SolverConfig {
            max_iters: 300,
            ..Default::default()
        },
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn pgm_sequence_is_read_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    for (name, value) in [
        ("frame_b.pgm", 20.0),
        ("frame_c.pgm", 30.0),
        ("frame_a.pgm", 10.0),
        ("frame_10.pgm", 5.0),
    ] {
        export_pgm(&[value; 6], 3, 2, dir.path().join(name)).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let v = import_pgm_sequence(dir.path()).unwrap();
    assert_eq!(v.dims(), (4, 3, 2));
    let firsts: Vec<f64> = (0..4).map(|t| v.get(t, 0, 0)).collect();
    assert_eq!(firsts, vec![5.0, 10.0, 20.0, 30.0]);
}

#[test]
fn pgm_sequence_size_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    export_pgm(&[1.0; 6], 3, 2, dir.path().join("a.pgm")).unwrap();
    export_pgm(&[1.0; 4], 2, 2, dir.path().join("b.pgm")).unwrap();
    assert!(import_pgm_sequence(dir.path()).is_err());
}

#[test]
fn volume_file_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let v = synth_scene(&SyntheticSceneSpec::default()).unwrap();
    let path = dir.path().join("scene.hfvv");
    save_volume(&v, &path).unwrap();
    let back: VideoVolume = load_volume(&path).unwrap();
    assert_eq!(back, v);
}

#[test]
fn table_cells_are_means_of_runs() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_experiment(&small(dir.path())).unwrap();
    for cell in &rep.table {
        let means: Vec<f64> = rep.runs_of(cell.scheme, cell.cameras).map(|r| r.mean_psnr).collect();
        assert_eq!(means.len(), 3);
        let m = means.iter().sum::<f64>() / 3.0;
        assert!((cell.mean_psnr - m).abs() <= 1e-12);
    }
    assert_eq!(rep.table.len(), 6);
    let table = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "scene,scheme,K=2,K=4");
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn frame_rate_sweep_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        schemes: vec![Scheme::ColumnRow],
        cameras: vec![4],
        runs: 2,
        frame_rate_sweep: vec![2, 4, 8],
        ..small(dir.path())
    };
    let rep = run_experiment(&cfg).unwrap();
    assert_eq!(rep.sweep.len(), 3);
    let text = fs::read_to_string(dir.path().join("psnr_vs_frame_rate.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scheme,T,target_fps,K,mean_psnr,std_psnr,runs");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("colrow,8,480,4,"));
}

#[test]
fn experiment_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&small(a.path())).unwrap();
    run_experiment(&small(b.path())).unwrap();
    for f in &ra.files {
        let rel = f.strip_prefix(a.path()).unwrap();
        assert_eq!(
            fs::read(f).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{}",
            rel.display()
        );
    }
}

#[test]
fn psnr_rises_with_camera_count_for_every_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        runs: 20,
        snapshots: false,
        output_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let rep = run_experiment(&cfg).unwrap();
    for scheme in Scheme::ALL {
        let means: Vec<f64> = cfg
            .cameras
            .iter()
            .map(|&k| rep.cell(scheme, k).unwrap().mean_psnr)
            .collect();
        assert!(means.windows(2).all(|w| w[1] >= w[0] - 0.1), "{scheme}: {means:?}");
    }
}
