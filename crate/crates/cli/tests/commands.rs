use std::fs;
use std::path::Path;
use std::process::Command;

use areasearch_cli::config::{PolicySource, RunConfig};
use areasearch_cli::replay::validate_replay;
use areasearch_cli::{cmd_eval, cmd_gen_map, cmd_replay, cmd_train};
use areasearch_core::{Checkpoint, ScenarioPreset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_areasearch"))
}

fn tiny_train_config(out: &Path, timesteps: u64) -> RunConfig {
    let text = format!(
        "[run]\nseed = 3\nout = {}\n[scenario]\npreset = desk\nn_robots = 2\nepisode_len = 12\n\
         [train]\nbatch_size = 48\nminibatch_size = 24\nepochs = 2\nhidden = 8,4\ntotal_timesteps = {timesteps}\n",
        out.display()
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn gen_map_defaults_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { out: dir.path().join("a"), seed: 5, ..Default::default() };
    let a = fs::read_to_string(cmd_gen_map(&cfg).unwrap()).unwrap();
    assert!(a.starts_with("25 25\n"));
    assert_eq!(a.matches('#').count(), 250);
    let cfg_b = RunConfig { out: dir.path().join("b"), ..cfg.clone() };
    assert_eq!(a, fs::read_to_string(cmd_gen_map(&cfg_b).unwrap()).unwrap());
}

#[test]
fn gen_map_without_obstacles() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["gen-map", "--obstacles", "0", "--seed", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    let map = fs::read_to_string(dir.path().join("map.txt")).unwrap();
    assert!(!map.contains('#'));
}

#[test]
fn exit_codes_for_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["eval", "--alpha", "0.3", "--beta", "0.3", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["eval", "--policy", "learned", "--checkpoint", "/no/such/file.bin", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["eval", "--preset", "nowhere"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exploding_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    let mut cfg = tiny_train_config(&dir.path().join("out"), 200);
    cfg.train.learning_rate = 1e308;
    cfg.train.max_grad_norm = None;
    fs::write(&cfg_path, cfg.serialize()).unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/diagnostic.txt").exists());
}

#[test]
fn eval_rows_and_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[run]\nseed = 11\nepisodes = 4\npolicy = random,greedy,scripted_cover\n[scenario]\npreset = hard,obs_easy\nepisode_len = 30\n";
    let mut cfg = RunConfig::parse(text).unwrap();
    cfg.out = dir.path().join("one");
    let reports = cmd_eval(&cfg).unwrap();
    assert_eq!(reports.len(), 6);
    let csv = fs::read(dir.path().join("one/metrics.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 7);
    cfg.out = dir.path().join("two");
    cmd_eval(&cfg).unwrap();
    assert_eq!(csv, fs::read(dir.path().join("two/metrics.csv")).unwrap());
}

#[test]
fn replay_validates_and_frames_match_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seed: 4,
        presets: vec![ScenarioPreset::Hard],
        policies: vec![PolicySource::Greedy],
        render: true,
        frame_scale: 1,
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    let out = cmd_replay(&cfg).unwrap();
    let text = fs::read_to_string(&out.replay).unwrap();
    assert_eq!(validate_replay(&text).unwrap(), out.steps + 1);
    assert_eq!(out.frames, out.steps + 1);
    assert_eq!(fs::read_dir(dir.path().join("frames")).unwrap().count(), out.steps + 1);
    let first = fs::read_to_string(dir.path().join("frames/frame_00000.ppm")).unwrap();
    assert!(first.starts_with("P3\n25 25\n255\n"));
}

#[test]
fn validator_rejects_tampered_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { seed: 2, policies: vec![PolicySource::Random], out: dir.path().to_path_buf(), ..Default::default() };
    let text = fs::read_to_string(cmd_replay(&cfg).unwrap().replay).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let dropped = [&lines[..2], &lines[3..]].concat().join("\n");
    assert!(validate_replay(&dropped).is_err());
    let bad_count = text.replacen("\"explored_free\":", "\"explored_free\":1", 1);
    assert!(validate_replay(&bad_count).is_err());
}

#[test]
fn train_writes_outputs_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let straight = tiny_train_config(&dir.path().join("straight"), 48);
    let full = cmd_train(&straight).unwrap();
    assert_eq!(full.rows.len(), 2);
    let log = fs::read_to_string(&full.log).unwrap();
    assert_eq!(log.lines().count(), 3);

    let half = tiny_train_config(&dir.path().join("resumed"), 24);
    cmd_train(&half).unwrap();
    let rest = tiny_train_config(&dir.path().join("resumed"), 48);
    let resumed = cmd_train(&rest).unwrap();
    assert_eq!(resumed.rows.len(), 1);
    let a = Checkpoint::load(&full.checkpoint).unwrap();
    let b = Checkpoint::load(&resumed.checkpoint).unwrap();
    assert_eq!(a, b);
    assert_eq!(log, fs::read_to_string(&resumed.log).unwrap());
}

#[test]
fn learned_policy_evaluates_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let train = tiny_train_config(&dir.path().join("t"), 24);
    let ck = cmd_train(&train).unwrap().checkpoint;
    let cfg = RunConfig {
        presets: vec![ScenarioPreset::Desk],
        policies: vec![PolicySource::Learned],
        checkpoint: Some(ck),
        episodes: 3,
        out: dir.path().join("e"),
        scenario: areasearch_cli::config::ScenarioOverrides { n_robots: Some(2), ..Default::default() },
        ..Default::default()
    };
    let r = cmd_eval(&cfg).unwrap();
    assert!(r[0].role_explore_fraction.is_some());
    let wrong = RunConfig { presets: vec![ScenarioPreset::Hard], ..cfg };
    assert!(cmd_eval(&wrong).is_err());
}
