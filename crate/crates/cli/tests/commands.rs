use std::fs;
use std::path::Path;

use serde_json::Value;
use tweenforge_cli::run_cli;

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("tweenforge").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_exit_codes() {
    assert_eq!(run(&["train", "--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["train", "--bogus"]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&["infer"]), 2);
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let req = dir.path().join("req.json");
    fs::write(&req, r#"{"num_frames": 4, "keyposes": []}"#).unwrap();
    assert_eq!(run(&["infer", "--model", p(&missing), "--request", p(&req)]), 1);
    assert_eq!(run(&["gradcheck", "--config", "enormous"]), 1);
    assert_eq!(run(&["augment-schedule", "--schedule", p(&missing)]), 1);
}

#[test]
fn gradcheck_passes() {
    assert_eq!(run(&["gradcheck", "--config", "tiny", "--seeds", "2"]), 0);
}

#[test]
fn pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(&["--seed", "3", "synth-gen", "--out", p(&data), "--count", "6", "--frames", "40"]), 0);
    let curves = data.join("0000.json");
    assert!(curves.exists() && data.join("0005.schedule.json").exists());

    let extracted = dir.path().join("extracted");
    assert_eq!(run(&["extract-keyposes", "--input", p(&data), "--out", p(&extracted)]), 0);
    assert_eq!(fs::read_dir(&extracted).unwrap().count(), 6);
    let single = dir.path().join("single.schedule.json");
    assert_eq!(run(&["extract-keyposes", "--input", p(&curves), "--out", p(&single)]), 0);
    assert_eq!(read_json(&single), read_json(&extracted.join("0000.schedule.json")));

    let aug = dir.path().join("aug.schedule.json");
    assert_eq!(run(&["--seed", "1", "augment-schedule", "--schedule", p(&single), "--level", "2", "--out", p(&aug)]), 0);
    let a = read_json(&aug);
    let idx = a["indices"].as_array().unwrap();
    assert_eq!((idx[0].as_u64(), idx[idx.len() - 1].as_u64()), (Some(0), Some(39)));
    let aug2 = dir.path().join("aug2.schedule.json");
    assert_eq!(run(&["--seed", "1", "augment-schedule", "--schedule", p(&single), "--level", "2", "--out", p(&aug2)]), 0);
    assert_eq!(read_json(&aug2), a);

    let ckpt = dir.path().join("m.ckpt");
    let report = dir.path().join("train.json");
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, "hidden_size = 4\nbatch_size = 2\nwindow_length = 32\n").unwrap();
    let train = [
        "train", "--data", p(&data), "--out", p(&ckpt), "--config", p(&cfg), "--epochs", "2", "--head", "ais", "--report", p(&report),
    ];
    assert_eq!(run(&train), 0);
    let r = read_json(&report);
    assert_eq!(r["epoch_losses"].as_array().unwrap().len(), 2);

    // Same seed, same checkpoint bytes.
    let again = dir.path().join("again.ckpt");
    let mut train2 = train;
    train2[4] = p(&again);
    assert_eq!(run(&train2), 0);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());

    for mode in ["dba", "gt", "random_0.5"] {
        let out = dir.path().join(format!("eval-{mode}.json"));
        assert_eq!(run(&["eval", "--model", p(&ckpt), "--data", p(&data), "--schedule", mode, "--out", p(&out)]), 0);
        assert_eq!(read_json(&out)["sequences"], 6);
    }

    let pred = dir.path().join("pred.json");
    assert_eq!(
        run(&["infer", "--model", p(&ckpt), "--input", p(&curves), "--schedule", p(&data.join("0000.schedule.json")), "--return-gates", "--out", p(&pred)]),
        0
    );
    let resp = read_json(&pred);
    assert_eq!(resp["frames"].as_array().unwrap().len(), 40);
    assert!(resp["gates"]["alpha"].is_array());

    // Scoring a prediction file needs it in the curve format.
    let spec_doc = read_json(&curves);
    let mut pred_curves = spec_doc.clone();
    pred_curves["frames"] = resp["frames"].clone();
    let pred_file = dir.path().join("pred-curves.json");
    fs::write(&pred_file, serde_json::to_string(&pred_curves).unwrap()).unwrap();
    let metrics = dir.path().join("metrics.json");
    assert_eq!(
        run(&["eval", "--gt", p(&curves), "--pred", p(&pred_file), "--keyposes", p(&data.join("0000.schedule.json")), "--out", p(&metrics)]),
        0
    );
    let m = read_json(&metrics);
    assert!(m["stl1"].as_f64().unwrap() <= m["plain_l1"].as_f64().unwrap() + 1e-12, "{m}");

    let self_metrics = dir.path().join("self.json");
    assert_eq!(
        run(&["eval", "--gt", p(&curves), "--pred", p(&curves), "--keyposes", p(&single), "--out", p(&self_metrics)]),
        0
    );
    assert_eq!(read_json(&self_metrics)["stl1"].as_f64(), Some(0.0));

    // A model trained for another character is rejected.
    let other = dir.path().join("other.json");
    fs::write(&other, r#"{"character": {"controllers": [{"name": "x", "kind": "translate"}]}, "fps": 24, "frames": [[0,0,0],[1,1,1]]}"#).unwrap();
    assert_eq!(run(&["infer", "--model", p(&ckpt), "--input", p(&other)]), 1);
}
