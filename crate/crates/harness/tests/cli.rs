//! End-to-end runs of the `ltrack` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ltrack(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltrack"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const TINY: &str = "\
seed = 2
model.d = 16
model.heads = 2
model.ff = 32
model.n_detect = 6
model.adapter_hidden = 8
model.text.d = 16
model.text.heads = 2
model.text.ff = 32
train.epochs = 2
train.steps_per_epoch = 2
train.lr_drop_epoch = 1
train.clip_len_every = 1
tracker.tau_spawn = 0.02
tracker.tau_keep = 0.01
data.synth_train_sequences = 1
data.synth_eval_sequences = 1
data.synth_frames = 16
";

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ltrack(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(ltrack(&["eval", "--bogus"], d).status.code(), Some(2));
    assert_eq!(ltrack(&["eval", "--gt", "x.txt", "--out", "r.json"], d).status.code(), Some(2));
    assert_eq!(ltrack(&["--help"], d).status.code(), Some(0));
    let missing = ltrack(&["eval", "--gt", "nope.txt", "--res", "nope.txt", "--out", "r.json"], d);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.txt"));
    assert_eq!(ltrack(&["ablate", "--study", "tokens"], d).status.code(), Some(1));
    fs::write(d.join("bad.toml"), "model.dd = 3\n").unwrap();
    assert_eq!(ltrack(&["--config", "bad.toml", "config"], d).status.code(), Some(1));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["x", "y"] {
        let o = ltrack(&["synth", "--domain", "b", "--frames", "12", "--seed", "7", "--out", out], d);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["seqinfo.json", "gt/gt.txt", "gt/attributes.json", "img/000001.png", "img/000012.png"] {
        assert_eq!(fs::read(d.join("x/b01").join(f)).unwrap(), fs::read(d.join("y/b01").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_writes_six_metric_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("gt.txt"), "1,1,10,20,30,40,1.000000,-1,-1,-1\n2,1,12,20,30,40,1.000000,-1,-1,-1\n").unwrap();
    fs::write(d.join("res.txt"), "2,5,12,20,30,40,0.900000,-1,-1,-1\n1,5,10,20,30,40,0.900000,-1,-1,-1\n").unwrap();
    let o = ltrack(&["eval", "--gt", "gt.txt", "--res", "res.txt", "--out", "report.json"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    for k in ["HOTA", "AssA", "DetA", "MOTA", "IDF1"] {
        assert!((v[k].as_f64().unwrap() - 100.0).abs() < 1e-9, "{k}");
    }
    assert_eq!(v["IDS"].as_u64(), Some(0));
}

#[test]
fn train_track_eval_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let o = ltrack(args, d);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(&["synth", "--domain", "b", "--frames", "10", "--seed", "3", "--out", "data"]);
    ok(&["--config", "tiny.toml", "train", "--out", "run"]);
    for f in ["loss.jsonl", "last.ckpt", "epoch001.ckpt", "epoch002.ckpt", "config.toml"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    ok(&["track", "--checkpoint", "run/last.ckpt", "--seq", "data/b01", "--out", "res.txt"]);
    ok(&["eval", "--gt", "data/b01/gt/gt.txt", "--res", "res.txt", "--out", "report.json"]);

    fs::write(d.join("eval.toml"), format!("{TINY}data.eval = [\"data/b01\"]\n")).unwrap();
    ok(&["--config", "eval.toml", "eval", "--checkpoint", "run/last.ckpt", "--out", "ev"]);
    assert!(d.join("ev/report.json").exists());
    assert_eq!(fs::read(d.join("ev/results/b01.txt")).unwrap(), fs::read(d.join("res.txt")).unwrap());

    // Evaluation sequences must carry the configured evaluation tag.
    fs::write(d.join("wrong.toml"), format!("{TINY}data.eval = [\"data/b01\"]\ndata.eval_domain = \"C\"\n")).unwrap();
    let o = ltrack(&["--config", "wrong.toml", "eval", "--checkpoint", "run/last.ckpt", "--out", "ev2"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tagged domain"));

    ok(&["plot", "--kind", "loss", "--input", "run/loss.jsonl", "--out", "loss.svg"]);
    assert!(fs::read_to_string(d.join("loss.svg")).unwrap().starts_with("<svg"));

    // Resuming continues the step count and appends to the log.
    ok(&["--config", "tiny.toml", "train", "--out", "run", "--resume", "run/epoch001.ckpt"]);
    assert_eq!(fs::read_to_string(d.join("run/loss.jsonl")).unwrap().lines().count(), 6);
}

#[test]
fn ablate_toklen_emits_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY.replace("train.steps_per_epoch = 2", "train.steps_per_epoch = 1")).unwrap();
    let o = ltrack(&["--config", "tiny.toml", "ablate", "--study", "toklen", "--out", "abl"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("abl/toklen.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,HOTA,AssA,DetA,MOTA,IDF1,IDS");
    assert_eq!(lines.len(), 7);
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["11", "13", "15", "17", "19", "21"]);
    assert!(d.join("abl/toklen.svg").exists());
    let o = ltrack(&["plot", "--kind", "toklen", "--input", "abl/toklen.csv", "--out", "t.svg"], d);
    assert!(o.status.success());
}

#[test]
fn config_command_prints_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ltrack(&["--seed", "11", "config"], d);
    assert!(o.status.success());
    fs::write(d.join("desk.toml"), &o.stdout).unwrap();
    let o2 = ltrack(&["--config", "desk.toml", "config"], d);
    assert_eq!(o.stdout, o2.stdout);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 11"));
    let full = ltrack(&["--full-schedule", "config"], d);
    assert!(String::from_utf8(full.stdout).unwrap().contains("epochs = 200"));
}
