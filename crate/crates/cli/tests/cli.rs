use std::path::Path;
use std::process::{Command, Output};

fn kinetok(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinetok"))
        .args(args)
        .env("KINETOK_DATA_DIR", dir)
        .output()
        .expect("failed to launch kinetok")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = kinetok(dir, args);
    assert!(
        out.status.success(),
        "kinetok {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn full_pipeline_on_tiny_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();

    ok(d, &["synth-data", "--kind", "robot", "--n", "60", "--seed", "1"]);
    ok(d, &["synth-data", "--kind", "human", "--n", "20", "--seed", "2"]);
    for f in ["robot.jsonl", "robot.jsonl.stats.json", "robot.jsonl.run.json", "human.jsonl"] {
        assert!(d.join(f).exists(), "missing {f}");
    }
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("robot.jsonl.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["samples"], 60);

    let tok_cfg = write(
        &d.join("tok.json"),
        r#"{"tokenizer": {"codebook_size": 16, "code_dim": 8, "hidden": 8}, "train": {"batch_size": 4}, "holdout": 5}"#,
    );
    ok(d, &["train-tokenizer", "--config", &tok_cfg, "--steps", "5"]);
    let tok_dir = d.join("tokenizer_robot");
    for f in ["tokenizer.json", "loss.csv", "summary.json", "run_config.json"] {
        assert!(tok_dir.join(f).exists(), "missing {f}");
    }
    let human_cfg = write(
        &d.join("htok.json"),
        r#"{"tokenizer": {"embodiment": "human:5", "codebook_size": 16, "code_dim": 8, "hidden": 8}, "train": {"batch_size": 4}, "holdout": 2}"#,
    );
    ok(d, &["train-tokenizer", "--config", &human_cfg, "--corpus", &p("human.jsonl"), "--steps", "3"]);

    let lm_cfg = write(
        &d.join("lm.json"),
        r#"{"lm": {"d_model": 16, "layers": 1, "heads": 2, "context": 160}, "train": {"batch_size": 4}, "mix": {"sequences": 40}}"#,
    );
    let lm_args = vec![
        "train-lm".to_string(),
        "--config".into(),
        lm_cfg,
        "--robot-corpus".into(),
        p("robot.jsonl"),
        "--robot-tokenizer".into(),
        p("tokenizer_robot"),
        "--human-corpus".into(),
        p("human.jsonl"),
        "--human-tokenizer".into(),
        p("tokenizer_human"),
        "--steps".into(),
        "3".into(),
    ];
    let lm_args: Vec<&str> = lm_args.iter().map(String::as_str).collect();
    ok(d, &lm_args);
    ok(d, &["generate", "--task", "t2hm", "--text", "wave", "--out", &p("human_gen.jsonl")]);
    for f in ["manifest.json", "loss.csv", "run_config.json"] {
        assert!(d.join("bundle").join(f).exists(), "missing {f}");
    }

    ok(d, &["generate", "--task", "t2rm", "--text", "walk forward", "--samples", "2", "--seed", "3"]);
    let generated = std::fs::read_to_string(d.join("generated.jsonl")).unwrap();
    assert_eq!(generated.lines().count(), 2);
    let first = ok(d, &["generate", "--task", "goal", "--goal", "14,14", "--greedy", "--out", &p("g1.jsonl")]);
    let second = ok(d, &["generate", "--task", "goal", "--goal", "14,14", "--greedy", "--out", &p("g2.jsonl")]);
    assert!(first.status.success() && second.status.success());
    assert_eq!(std::fs::read(d.join("g1.jsonl")).unwrap(), std::fs::read(d.join("g2.jsonl")).unwrap());

    let eval = ok(d, &["evaluate", "--suite", "goal", "--goals", "2", "--n-per-goal", "2"]);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("success_pct"));
    for f in ["goal.json", "goal.csv", "goal.run.json"] {
        assert!(d.join("eval").join(f).exists(), "missing {f}");
    }

    ok(d, &["export-traces", "--input", &p("generated.jsonl")]);
    let svg = std::fs::read_to_string(d.join("traces/traces.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    let csv = std::fs::read_to_string(d.join("traces/traces.csv")).unwrap();
    assert!(csv.starts_with("trajectory,step,x,z,heading"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let bad_cfg = write(&d.join("bad.json"), r#"{"no_such_field": 1}"#);
    assert_eq!(kinetok(d, &["synth-data", "--config", &bad_cfg]).status.code(), Some(2));

    let missing = kinetok(d, &["train-tokenizer", "--corpus", d.join("absent.jsonl").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));

    let zero = write(&d.join("zero.json"), r#"{"robot": {"n_samples": 0}}"#);
    assert_eq!(kinetok(d, &["synth-data", "--config", &zero]).status.code(), Some(2));

    ok(d, &["synth-data", "--kind", "human", "--n", "3"]);
    let human = d.join("human.jsonl");
    let traces = kinetok(d, &["export-traces", "--input", human.to_str().unwrap()]);
    assert_eq!(traces.status.code(), Some(2));

    assert_eq!(kinetok(d, &["no-such-command"]).status.code(), Some(2));
}
