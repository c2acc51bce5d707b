use std::path::Path;
use std::process::{Command, Output};

fn nacf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nacf"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SPEC: &str = "train = 16\nval = 3\ntest = 4\ncaptions_min = 2\ncaptions_max = 3\n";

const EXPERIMENT: &str = r#"
seed = 5
out_dir = "run"
[model]
d_model = 16
d_hidden = 32
heads = 2
dropout = 0.1
[training]
epochs = 1
batch_size = 8
[bench]
B = [1, 2]
T = [1, 3]
warmup = 1
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.toml"), SPEC).unwrap();
    std::fs::write(dir.path().join("exp.toml"), EXPERIMENT).unwrap();
    ok(&nacf(&["synth", "--spec", "spec.toml", "--out", "run/corpus", "--seed", "5"], dir.path()));
    dir
}

#[test]
fn synth_writes_corpus_files_deterministically() {
    let dir = setup();
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("run/corpus"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["captions.jsonl", "features.bin", "lexicon.tsv", "manifest.json"]);
    ok(&nacf(&["synth", "--spec", "spec.toml", "--out", "again", "--seed", "5"], dir.path()));
    for n in &names {
        assert_eq!(
            std::fs::read(dir.path().join("run/corpus").join(n)).unwrap(),
            std::fs::read(dir.path().join("again").join(n)).unwrap(),
            "{n}"
        );
    }
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = setup();
    let d = dir.path();
    let missing = nacf(&["synth", "--spec", "nope.toml", "--out", "x"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());

    let unknown = nacf(&["train", "--config", "exp.toml", "--set", "training.bogus=1"], d);
    assert_eq!(unknown.status.code(), Some(2));

    let bad_beta = nacf(&["train", "--config", "exp.toml", "--set", "training.beta_high=9"], d);
    assert_eq!(bad_beta.status.code(), Some(2));

    assert_eq!(nacf(&["frobnicate"], d).status.code(), Some(2));

    let runtime = nacf(&["decode", "--config", "exp.toml", "--checkpoint", "missing.ckpt", "--out", "c.jsonl"], d);
    assert_eq!(runtime.status.code(), Some(1));
}

#[test]
fn full_command_sequence() {
    let dir = setup();
    let d = dir.path();
    ok(&nacf(&["train", "--config", "exp.toml"], d));
    ok(&nacf(&["train", "--config", "exp.toml", "--variant", "ar-b"], d));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/ar-b.ckpt.json")).unwrap()).unwrap();
    assert_eq!(side["config"]["causal"], true);

    let no_teacher = nacf(
        &["decode", "--config", "exp.toml", "--checkpoint", "run/nacf.ckpt", "--out", "c.jsonl", "--rescore"],
        d,
    );
    assert_eq!(no_teacher.status.code(), Some(2));
    assert!(!d.join("c.jsonl").exists());

    ok(&nacf(
        &[
            "decode", "--config", "exp.toml", "--checkpoint", "run/nacf.ckpt", "--out", "caps.jsonl", "--algo", "mp",
            "--template", "on", "--T", "5", "--B", "6",
        ],
        d,
    ));
    let text = std::fs::read_to_string(d.join("caps.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["decoder"], "CT-MP(B=6,T=5)");
    assert_eq!(header["header"]["seed"], 5);
    assert_eq!(text.lines().count(), 1 + 4);

    let traced = nacf(
        &[
            "decode", "--config", "exp.toml", "--checkpoint", "run/nacf.ckpt", "--out", "traced.jsonl", "--trace",
            "--rescore", "--teacher", "run/ar-b.ckpt",
        ],
        d,
    );
    ok(&traced);
    let stdout = String::from_utf8_lossy(&traced.stdout);
    assert!(stdout.contains("t=0") && stdout.contains("final"));

    ok(&nacf(&["eval", "--config", "exp.toml", "--captions", "caps.jsonl", "--out", "eval"], d));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["report"]["bleu"].as_array().unwrap().len(), 4);
    assert_eq!(metrics["report"]["meteor"], "n/a");
    assert!(std::fs::read_to_string(d.join("eval/metrics.csv")).unwrap().starts_with("metric,value\n"));

    let refused = nacf(&["bench", "--config", "exp.toml", "--checkpoint", "run/nacf.ckpt", "--out", "b", "--trace"], d);
    assert_eq!(refused.status.code(), Some(2));
    ok(&nacf(
        &["bench", "--config", "exp.toml", "--checkpoint", "run/nacf.ckpt", "--reference", "run/ar-b.ckpt", "--out", "b"],
        d,
    ));
    let csv = std::fs::read_to_string(d.join("b/bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[cols.len() - 8], cols[cols.len() - 7], "pass law: {r}");
    }
    assert!(std::fs::read_to_string(d.join("b/bench.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn resume_continues_schedule() {
    let dir = setup();
    let d = dir.path();
    ok(&nacf(&["train", "--config", "exp.toml"], d));
    ok(&nacf(
        &["train", "--config", "exp.toml", "--resume", "run/nacf.ckpt", "--set", "training.epochs=2"],
        d,
    ));
    let log = std::fs::read_to_string(d.join("run/nacf.train.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["epoch"], 1);
    assert!((last["lr"].as_f64().unwrap() - 4.5e-4).abs() < 1e-12);
}
