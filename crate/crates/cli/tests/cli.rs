use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[synth]
clips = [2, 1, 1]
segments = 3
segment_frames = 24

[model]
model = "intercnn"
stream_depth = 1
interweave_depth = 2
base_width = 2
side_dims = [6, 6]
frames = 5
flows = 4
downsample_every = 2

[train]
lr = 0.01
max_epochs = 2

[windows]
length = 5
train_stride = 2
eval_stride = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intercnn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    cfg
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

/// Relative path -> bytes for every file below `root`.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_for_every_subcommand() {
    ok(&["--help"]);
    for sub in ["synth", "preprocess", "train", "eval", "bench", "export-acts"] {
        let out = ok(&[sub, "--help"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["nope"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--blocks", "resnet"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--iters", "0"]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nmodel = \"intercnn\"\nwat = 1\n").unwrap();
    assert_eq!(run(&["synth", "--config", p(&bad), "--out", p(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("missing");
    let out = run(&["eval", "--data", p(&missing), "--checkpoint", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["synth", "--config", p(&cfg), "--seed", "7", "--out", p(&a)]);
    ok(&["synth", "--config", p(&cfg), "--seed", "7", "--out", p(&b)]);
    ok(&["synth", "--config", p(&cfg), "--seed", "8", "--out", p(&c)]);
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    assert!(ta.iter().any(|(f, _)| f.ends_with("manifest.json")));
    assert_eq!(ta, tb);
    assert_ne!(ta, tc);
}

#[test]
fn bench_reports_smaller_mobilenet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = ok(&["bench", "--config", p(&cfg), "--iters", "2", "--blocks", "vanilla,mobilenet", "--out", p(dir.path())]);
    let rows = json(&out);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let field = |i: usize, k: &str| rows[i][k].as_u64().unwrap();
    assert_eq!(rows[0]["block"], "vanilla");
    assert!(field(1, "params") < field(0, "params"));
    assert!(field(1, "flops") < field(0, "flops"));
    assert!(dir.path().join("bench.json").exists());
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (raw, pre, ck) = (dir.path().join("raw"), dir.path().join("pre"), dir.path().join("ck"));
    ok(&["synth", "--config", p(&cfg), "--out", p(&raw)]);
    ok(&["preprocess", "--config", p(&cfg), "--data", p(&raw), "--out", p(&pre)]);
    ok(&["train", "--config", p(&cfg), "--data", p(&pre), "--out", p(&ck)]);
    let history = fs::read_to_string(ck.join("history.txt")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("step, split, loss, accuracy"));
    assert!(lines.any(|l| l.contains(", validation, ")));

    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--config", p(&cfg), "--data", p(&pre), "--checkpoint", p(&ck)];
        args.extend_from_slice(extra);
        json(&ok(&args))
    };
    let default = eval(&[]);
    let single = eval(&["--vote-n", "1"]);
    assert_eq!(default["accuracy_raw"], single["accuracy_raw"]);
    assert_eq!(single["accuracy_raw"], single["accuracy_voted"]);
    let agg = eval(&["--labels", "agg5"]);
    assert!(agg["accuracy_raw"].as_f64().unwrap() >= default["accuracy_raw"].as_f64().unwrap());
    let blocked = eval(&["--occlude", "--out", p(dir.path())]);
    assert_eq!(blocked["occlusion"], "block_front");
    assert!(dir.path().join("eval.json").exists());

    let tags = ok(&["export-acts", "--config", p(&cfg), "--data", p(&pre), "--checkpoint", p(&ck)]);
    let listed = String::from_utf8_lossy(&tags.stdout).to_string();
    let first = listed.lines().next().expect("a tag").trim().to_string();
    let acts = dir.path().join("acts.ictn");
    ok(&[
        "export-acts", "--config", p(&cfg), "--data", p(&pre), "--checkpoint", p(&ck), "--tags", &first, "--out", p(&acts),
    ]);
    assert!(fs::metadata(&acts).unwrap().len() > 0);

    let tuned = dir.path().join("tuned");
    ok(&["train", "--config", p(&cfg), "--data", p(&pre), "--init", p(&ck), "--dropout", "0.5", "--out", p(&tuned)]);
    assert_eq!(run(&["train", "--config", p(&cfg), "--data", p(&pre), "--dropout", "2", "--out", p(&tuned)]).status.code(), Some(2));
}
