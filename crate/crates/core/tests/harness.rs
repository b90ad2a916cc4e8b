use std::fs;

use uscs::harness::{cmd_eval, final_eval, read_evals, read_metrics, report_row, run_sweep, train_run, RunManifest, SweepSpec};
use uscs::trainer::TrainConfig;

fn tiny() -> TrainConfig {
    TrainConfig {
        image_size: 16,
        min_radius: 2.0,
        max_radius: 5.0,
        num_scenes: 32,
        val_scenes: 8,
        labeled_ratio: 0.25,
        batch_size: 2,
        encoder_widths: vec![4, 4, 4],
        decoder_widths: vec![4, 4],
        max_iters: 4,
        eval_every: 2,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn run_directory_is_self_describing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let manifest = train_run(&tiny(), &dir, &mut |_| {}).unwrap();

    let metrics = read_metrics(&dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 4);
    assert!(metrics.iter().all(|m| m.mean_w.is_some() && m.non_overlap.is_some()));
    let evals = read_evals(&dir.join("evals.csv")).unwrap();
    assert_eq!(evals.iter().map(|e| e.iter).collect::<Vec<_>>(), [2, 4]);

    let loaded = RunManifest::load(&dir).unwrap();
    assert_eq!(loaded.final_miou, manifest.final_miou);
    assert_eq!(loaded.train_config().unwrap(), tiny());

    let row = report_row(&dir).unwrap();
    assert_eq!(row.miou, evals[1].miou);
    assert_eq!(row.final_total_loss, metrics[3].total);
    let recomputed = cmd_eval(&dir, None).unwrap();
    assert_eq!(recomputed.miou, manifest.final_miou);
    assert!(dir.join("checkpoints/iter_000002.json").is_file());
}

#[test]
fn failed_runs_leave_their_arm_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SweepSpec::parse("name = t\nseeds = 2\narm.sup = mode=supervised\narm.uscs = mode=uscs\n").unwrap();
    // a file where a run directory should go makes that run fail
    fs::create_dir_all(tmp.path().join("uscs")).unwrap();
    fs::write(tmp.path().join("uscs/seed1"), "").unwrap();
    let rows = run_sweep(&tiny(), &spec, tmp.path()).unwrap();
    assert_eq!((rows[0].runs, rows[0].complete), (2, true));
    assert_eq!((rows[1].runs, rows[1].complete), (1, false));
    assert!(final_eval(&tmp.path().join("uscs/seed0")).is_ok());
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn shipped_configs_and_sweeps_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let base = uscs::config::load(&root.join("experiment.cfg")).unwrap();
    uscs::config::load(&root.join("base.cfg")).unwrap();
    let mut sweeps = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "sweep") {
            let spec = SweepSpec::parse(&fs::read_to_string(&path).unwrap()).unwrap();
            for arm in &spec.arms {
                uscs::harness::arm_config(&base, arm, 0).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            }
            sweeps += 1;
        }
    }
    assert_eq!(sweeps, 5);
}
