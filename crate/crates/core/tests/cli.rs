use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn segzero(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segzero"))
        .args(args)
        .env("SEGZERO_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        format!("[data]\nn_train = 8\nn_eval = 4\n\n[train]\nsteps = 3\nseed = 1\n{extra}"),
    )
    .unwrap();
    cfg
}

#[test]
fn prepare_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        let o = segzero(&["prepare-data", "--n-samples", "100", "--seed", "1", "--out", p(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("records 100 mean_mask_area "));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 100);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
}

#[test]
fn missing_out_is_a_usage_error() {
    let o = segzero(&["prepare-data", "--n-samples", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(segzero(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn import_converts_external_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    // 4x4 source with a 2x2 block in the middle
    fs::write(
        &ann,
        "{\"width\":4,\"height\":4,\"mask_rle\":\"5 2 2 2 5\",\"text\":\"the red circle\"}\n",
    )
    .unwrap();
    let out = dir.path().join("d.jsonl");
    let o = segzero(&["prepare-data", "--import", p(&ann), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(rec["bbox"], serde_json::json!([210.0, 210.0, 629.0, 629.0]));
    assert_eq!(rec["src_w"], 4);
}

#[test]
fn unreadable_import_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = segzero(&["prepare-data", "--import", "/nonexistent/a.jsonl", "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn zero_steps_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = segzero(&["train", "--config", p(&cfg), "--steps", "0", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("final.json").exists());
    assert!(out.join("config.toml").exists());
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert_eq!(
        log.trim(),
        "step,reward_total,reward_think,reward_format,reward_iou,reward_bbox_l1,reward_point_l1,len_mean,len_min,kl,loss"
    );
}

#[test]
fn training_is_reproducible_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "learning_rate = 0.5\n");
    let logs: Vec<String> = ["r1", "r2"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = segzero(&["train", "--config", p(&cfg), "--out", p(&out), "--learning-rate", "0.03"]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
            assert!(resolved.contains("learning_rate = 0.03"), "{resolved}");
            fs::read_to_string(out.join("train_log.csv")).unwrap()
        })
        .collect();
    assert_eq!(logs[0].lines().count(), 4);
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn format_modes_give_different_format_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    // a loose layout prior so that malformed answers are common
    let cfg = small_config(dir.path(), "\n[init]\nlayout_bonus = 1.0\n");
    let col = |mode: &str| -> Vec<String> {
        let out = dir.path().join(mode);
        let o = segzero(&["train", "--config", p(&cfg), "--out", p(&out), "--steps", "20", "--format-mode", mode]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut r = csv::Reader::from_path(out.join("train_log.csv")).unwrap();
        r.records().map(|rec| rec.unwrap()[3].to_string()).collect()
    };
    assert_ne!(col("strict"), col("soft"));
}

#[test]
fn eval_oracles_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ev");
    let o = segzero(&["eval", "--oracle", "ground-truth", "--n-samples", "20", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["giou"].as_f64().unwrap() >= 0.99);
    assert_eq!(fs::read_to_string(out.join("samples.csv")).unwrap().lines().count(), 21);
    assert!(String::from_utf8_lossy(&o.stdout).contains("gIoU"));

    let o = segzero(&["eval", "--oracle", "empty", "--n-samples", "5"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0.0000"));

    let cfg = small_config(dir.path(), "");
    let run = dir.path().join("run");
    assert!(segzero(&["train", "--config", p(&cfg), "--steps", "0", "--out", p(&run)]).status.success());
    let ck = run.join("final.json");
    let o = segzero(&["eval", "--checkpoint", p(&ck), "--n-samples", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_without_source_or_with_missing_checkpoint_fails() {
    assert_eq!(segzero(&["eval"]).status.code(), Some(2));
    assert_eq!(segzero(&["eval", "--checkpoint", "/nonexistent/c.json"]).status.code(), Some(3));
}

#[test]
fn unreachable_backend_exits_with_five() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/segment");
    let o = segzero(&[
        "eval", "--oracle", "ground-truth", "--n-samples", "2", "--backend", "remote", "--endpoint", &url, "--timeout-ms", "500",
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn remote_backend_without_endpoint_is_a_usage_error() {
    let o = segzero(&["eval", "--oracle", "empty", "--n-samples", "2", "--backend", "remote"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parse_check_prints_one_verdict_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("r.txt");
    fs::write(
        &f,
        "<think> x</think><answer>{\"bbox\":[1,2,3,4],\"points_1\":[1,2],\"points_2\":[2,3]}</answer>\nnothing\n",
    )
    .unwrap();
    let o = segzero(&["parse-check", p(&f)]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["seg_format"], 1.0);
    assert_eq!(lines[0]["prompt"], serde_json::json!([1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 2.0, 3.0]));
    assert_eq!(lines[1]["structure_valid"], false);
    assert!(lines[1]["prompt"].is_null());
}

#[test]
fn report_emits_two_tidy_csvs_with_matching_sums() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let run = dir.path().join("run");
    assert!(segzero(&["train", "--config", p(&cfg), "--out", p(&run)]).status.success());
    let out = dir.path().join("plots");
    let log = run.join("train_log.csv");
    let o = segzero(&["report", "--log", p(&log), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let sums = |path: &Path| -> std::collections::HashMap<String, f64> {
        let mut r = csv::Reader::from_path(path).unwrap();
        let h = r.headers().unwrap().clone();
        let mut m = std::collections::HashMap::new();
        for rec in r.records() {
            for (k, v) in h.iter().zip(rec.unwrap().iter()) {
                *m.entry(k.to_string()).or_insert(0.0) += v.parse::<f64>().unwrap();
            }
        }
        m
    };
    let src = sums(&log);
    for name in ["rewards.csv", "length.csv"] {
        let got = sums(&out.join(name));
        assert!(!got.is_empty());
        for (k, v) in got {
            assert_eq!(v, src[&k], "{name}:{k}");
        }
    }
    let rows = fs::read_to_string(out.join("length.csv")).unwrap().lines().count();
    assert_eq!(rows, 4);
}

#[test]
fn report_of_an_empty_log_has_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    fs::write(
        &log,
        "step,reward_total,reward_think,reward_format,reward_iou,reward_bbox_l1,reward_point_l1,len_mean,len_min,kl,loss\n",
    )
    .unwrap();
    let out = dir.path().join("plots");
    assert!(segzero(&["report", "--log", p(&log), "--out", p(&out)]).status.success());
    assert_eq!(fs::read_to_string(out.join("length.csv")).unwrap(), "step,len_mean,len_min\n");
    assert_eq!(fs::read_to_string(out.join("rewards.csv")).unwrap().lines().count(), 1);
    assert_eq!(segzero(&["report", "--log", "/nonexistent/l.csv", "--out", p(&out)]).status.code(), Some(3));
}
