//! The simulator subcommand: byte-reproducible reports, config file plus
//! flag overrides, mode dispatch, and the wall-time sidecar.

mod common;

use common::*;

#[test]
fn identical_seeds_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let out = run(gar().args([
            "train-toy",
            "--mode",
            "standard_rl",
            "--seed",
            "7",
            "--episodes",
            "40",
            "--out",
            path.to_str().unwrap(),
        ]));
        assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
        assert!(stderr_str(&out).contains("task accuracy"), "run summary lands on stderr");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let lines = read_lines(&a);
    let manifest = manifest_of(&lines[0], "train-toy");
    assert_eq!(manifest["manifest"]["seed"], 7);
    let report = parsed(&lines[1]);
    assert_eq!(report["config"]["mode"], "standard_rl");
    assert_eq!(report["config"]["weights"]["lambda2"], 0.0, "mode preset zeroes the slice term");
    assert_eq!(report["episodes"].as_array().unwrap().len(), 40);
}

#[test]
fn config_file_with_flag_overrides_and_timings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        serde_json::json!({
            "mode": "full",
            "seed": 1,
            "episodes": 30,
            "tasks_per_episode": 2,
            "group_size": 4,
            "disc_group_size": 8,
            "ref_chains_per_task": 4,
            "eval_tasks": 8,
            "eval_rollouts_per_task": 2,
            "disc_warmup_traces": 8,
            "disc_warmup_iters": 40,
        })
        .to_string(),
    )
    .unwrap();

    let report_path = dir.path().join("report.json");
    let timings_path = dir.path().join("timings.json");
    let out = run(gar().args([
        "train-toy",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "3",
        "--episodes",
        "20",
        "--lambda4",
        "0",
        "--out",
        report_path.to_str().unwrap(),
        "--timing-out",
        timings_path.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));

    let lines = read_lines(&report_path);
    let manifest = manifest_of(&lines[0], "train-toy");
    assert_eq!(manifest["manifest"]["seed"], 3, "flag overrides the file's seed");
    let report = parsed(&lines[1]);
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["config"]["episodes"], 20);
    assert_eq!(report["config"]["weights"]["lambda4"], 0.0);
    assert_eq!(report["config"]["weights"]["lambda1"], 1.0, "untouched weights keep defaults");
    let rows = report["episodes"].as_array().unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows[0].get("wall_time_s").is_none(), "timings stay out of the report");

    let tlines = read_lines(&timings_path);
    manifest_of(&tlines[0], "train-toy");
    let timings = parsed(&tlines[1]);
    assert_eq!(timings["episodes"], 20);
    let walls = timings["episode_wall_times_s"].as_array().unwrap();
    assert_eq!(walls.len(), 20);
    assert!(walls.iter().all(|w| w.as_f64().unwrap() >= 0.0));
    assert!(timings["mean_episode_wall_time_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn partial_trace_mode_uses_its_preset() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let out = run(gar().args([
        "train-toy",
        "--mode",
        "partial_trace",
        "--seed",
        "2",
        "--episodes",
        "15",
        "--out",
        report_path.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let lines = read_lines(&report_path);
    let report = parsed(&lines[1]);
    assert_eq!(report["config"]["mode"], "partial_trace");
    assert_eq!(report["config"]["max_slices"], 3);
    assert_eq!(report["config"]["weights"]["lambda1"], 0.0);
}

#[test]
fn distill_mode_reports_style_probe_aucs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        serde_json::json!({
            "episodes": 10,
            "distill_phase1_episodes": 5,
            "tasks_per_episode": 2,
            "group_size": 4,
            "disc_group_size": 8,
            "ref_chains_per_task": 4,
            "eval_tasks": 8,
            "eval_rollouts_per_task": 2,
            "disc_warmup_traces": 8,
            "disc_warmup_iters": 40,
        })
        .to_string(),
    )
    .unwrap();
    let report_path = dir.path().join("report.json");
    let timings_path = dir.path().join("timings.json");
    let out = run(gar().args([
        "train-toy",
        "--config",
        cfg_path.to_str().unwrap(),
        "--mode",
        "distill",
        "--seed",
        "4",
        "--out",
        report_path.to_str().unwrap(),
        "--timing-out",
        timings_path.to_str().unwrap(),
    ]));
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    assert!(stderr_str(&out).contains("style-probe AUC"));

    let lines = read_lines(&report_path);
    let report = parsed(&lines[1]);
    assert_eq!(report["config"]["mode"], "distill");
    assert_eq!(report["phase1"].as_array().unwrap().len(), 5);
    assert_eq!(report["phase2"].as_array().unwrap().len(), 10);
    let before = report["before_auc"].as_f64().unwrap();
    let after = report["after_auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&before));
    assert!((0.0..=1.0).contains(&after));

    // Sidecar covers both phases.
    let timings = parsed(&read_lines(&timings_path)[1]);
    assert_eq!(timings["episodes"], 15);
}

#[test]
fn stdout_carries_the_report_when_no_out_path() {
    let out = run(gar().args([
        "train-toy",
        "--mode",
        "standard_rl",
        "--seed",
        "9",
        "--episodes",
        "5",
    ]));
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let stdout = stdout_str(&out);
    let lines: Vec<&str> = stdout.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 2);
    manifest_of(lines[0], "train-toy");
    let report = parsed(lines[1]);
    assert_eq!(report["episodes"].as_array().unwrap().len(), 5);
}
