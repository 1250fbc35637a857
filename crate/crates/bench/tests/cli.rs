use std::path::Path;
use std::process::Command;

use sncbf_bench::commands::{cmd_bench, cmd_train};
use sncbf_bench::config::ExperimentConfig;
use sncbf_bench::registry;
use sncbf_bench::sweep::TABLE_HEADER;
use sncbf_bench::CmdError;
use sncbf_core::container::StoredModel;
use sncbf_core::exec::Execution;

fn quiet() -> impl FnMut(String) {
    |_| {}
}

fn cfg(text: &str, out: &Path) -> ExperimentConfig {
    ExperimentConfig::parse(&format!("{text}\nout = {}\n", out.display())).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sncbf"))
}

const TINY_TRAIN: &str = "
dynamics = dubins
methods = sncbf
densities = 6
episodes = 2
seeds = 0
train.demonstrations = 16
train.iterations = 40
train.batch = 16
train.refine_rounds = 1
train.refine_iterations = 20
train.seed_pairs = 10
train.samples_per_seed = 5
train.dynamics_iterations = 100
";

#[test]
fn single_cell_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("methods = spfm\ndensities = 6\nepisodes = 10\nseeds = 0", dir.path());
    let rows = cmd_bench(&c, Execution::Parallel, &mut quiet()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].episodes, 10);
    assert!((0.0..=1.0).contains(&rows[0].collision_rate));
    let csv = std::fs::read_to_string(dir.path().join("bench_table.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(TABLE_HEADER));
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("collision_rate.svg").exists());
}

#[test]
fn two_seeds_give_two_independent_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("methods = gpfm\ndensities = 24\nepisodes = 6\nseeds = 3, 4", dir.path());
    let rows = cmd_bench(&c, Execution::Parallel, &mut quiet()).unwrap();
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![3, 4]);
    assert_ne!((rows[0].mean_steps, rows[0].collision_rate), (rows[1].mean_steps, rows[1].collision_rate));
}

#[test]
fn repeat_bench_is_byte_identical_across_thread_modes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = "methods = spfm, gpfm\ndensities = 6, 12\nepisodes = 4\nseeds = 0, 1";
    cmd_bench(&cfg(text, a.path()), Execution::Parallel, &mut quiet()).unwrap();
    cmd_bench(&cfg(text, b.path()), Execution::Sequential, &mut quiet()).unwrap();
    for f in ["bench_table.csv", "collision_rate.svg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_model_names_the_method() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("methods = spfm, sncbf\nepisodes = 1", dir.path());
    match cmd_bench(&c, Execution::Sequential, &mut quiet()) {
        Err(e @ CmdError::MissingModel { .. }) => {
            assert!(e.to_string().contains("sncbf"));
            assert_eq!(e.exit_code(), 4);
        }
        other => panic!("expected a missing-model error, got {other:?}"),
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "episodes = 3\nnot_a_key = 1\n").unwrap();
    let out = bin().args(["--config", bad.to_str().unwrap(), "bench"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("not_a_key"), "{err}");

    let unregistered = dir.path().join("m.cfg");
    std::fs::write(&unregistered, "methods = warp-drive\n").unwrap();
    let out = bin().args(["--config", unregistered.to_str().unwrap(), "bench"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["--config", dir.path().join("absent.cfg").to_str().unwrap(), "bench"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let needs_models = dir.path().join("n.cfg");
    std::fs::write(&needs_models, format!("methods = sncbf\nout = {}\n", dir.path().join("o").display())).unwrap();
    let out = bin().args(["--config", needs_models.to_str().unwrap(), "bench"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sncbf"));

    let out = bin().args(["replay", "--trajectory", "/nonexistent.csv", "--model", "/nonexistent.sncb"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn binary_bench_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.cfg");
    std::fs::write(&c, "methods = gpfm\ndensities = 6\nepisodes = 2\nseeds = 0\n").unwrap();
    let out = bin()
        .args(["--config", c.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--threads", "1", "--seed-offset", "5", "bench"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench_table.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("dubins,gpfm,6,5,2,"), "{csv}");
}

#[test]
fn train_is_reproducible_and_containers_round_trip() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (models, report) = cmd_train(&cfg(TINY_TRAIN, a.path()), Execution::Parallel, &mut quiet()).unwrap();
    cmd_train(&cfg(TINY_TRAIN, b.path()), Execution::Sequential, &mut quiet()).unwrap();
    assert_eq!(models.barriers.len(), 1);
    assert_eq!(report.members.len(), 1);

    let dir_a = a.path().join("models");
    let files: Vec<String> = std::fs::read_dir(&dir_a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    let barriers = files.iter().filter(|f| f.starts_with("barrier_")).count();
    assert_eq!(barriers, 1, "{files:?}");
    assert!(registry::dynamics_path(&dir_a).exists());
    for f in &files {
        let x = std::fs::read(dir_a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join("models").join(f)).unwrap(), "{f} differs between runs");
        // save -> load -> save
        let again = a.path().join("again.sncb");
        StoredModel::load(&dir_a.join(f)).unwrap().save(&again).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), x, "{f}");
    }
    for f in ["loss_phase1_0.csv", "loss_phase2_0.csv", "train_summary.csv", "loss_curves.svg"] {
        assert!(a.path().join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(a.path().join("loss_phase1_0.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("iteration,loss"));
    assert_eq!(curve.lines().count(), 41);
}

#[test]
fn ensemble_of_two_writes_two_barriers() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(&format!("{TINY_TRAIN}\ntrain.ensemble = 2"), dir.path());
    let (models, _) = cmd_train(&c, Execution::Parallel, &mut quiet()).unwrap();
    assert_eq!(models.barriers.len(), 2);
    let m = dir.path().join("models");
    assert!(registry::barrier_path(&m, 0).exists() && registry::barrier_path(&m, 1).exists());
    assert_ne!(std::fs::read(registry::barrier_path(&m, 0)).unwrap(), std::fs::read(registry::barrier_path(&m, 1)).unwrap());
    let text = TINY_TRAIN.replace("methods = sncbf", "methods = sncbf, sncbf-ensemble");
    let b = cfg(&format!("{text}\ntrain.ensemble = 2"), dir.path());
    let rows = cmd_bench(&b, Execution::Parallel, &mut quiet()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(dir.path().join("trajectories").join("sncbf-ensemble_6.csv").exists());
}
