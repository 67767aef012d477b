use std::path::Path;
use std::process::{Command, Output};

fn tagcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagcn"))
        .args(args)
        .env_remove("TAGCN_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Category of the JSON error line on stderr.
fn category(o: &Output) -> String {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().expect("stderr has an error line");
    let v: serde_json::Value = serde_json::from_str(line).expect("last stderr line is JSON");
    assert!(v["message"].is_string());
    v["category"].as_str().unwrap().to_string()
}

fn small_dataset(dir: &Path) {
    let out = tagcn(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--samples-per-class",
        "6",
        "--val-per-class",
        "2",
        "--seed",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn toy_config(dir: &Path) -> String {
    let out = tagcn(&["config", "--preset", "toy"]);
    assert!(out.status.success());
    let path = dir.join("run.toml");
    std::fs::write(&path, stdout(&out)).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_eval_inspect_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data);
    let cfg = toy_config(tmp.path());
    let ck = tmp.path().join("ck.bin");
    let log = tmp.path().join("log.jsonl");
    let out = tagcn(&[
        "train",
        "--config",
        &cfg,
        "--data",
        data.to_str().unwrap(),
        "--epochs",
        "2",
        "--out",
        ck.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("epoch   1"));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1]["val"]["top1"].is_number());

    let out = tagcn(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(e["samples"], 8);
    assert_eq!(e["top5"], 1.0);

    let seq = std::fs::read_dir(data.join("val"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let out = tagcn(&[
        "tam-inspect",
        "--config",
        &cfg,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--input",
        seq.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 16);
    let picked = rows.iter().filter(|r| r.ends_with("\t1")).count();
    assert_eq!(picked, 8);
    for r in rows {
        let s: f64 = r.split('\t').nth(1).unwrap().parse().unwrap();
        assert!(s > 0.0 && s < 1.0);
    }

    let out = tagcn(&[
        "tam-inspect",
        "--config",
        &cfg,
        "--input",
        seq.to_str().unwrap(),
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["selected"].as_array().unwrap().len(), 8);
    assert_eq!(v["frames"].as_array().unwrap().len(), 16);
}

#[test]
fn data_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = Command::new(env!("CARGO_BIN_EXE_tagcn"))
        .args(["synth", "--samples-per-class", "2", "--val-per-class", "0"])
        .env("TAGCN_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());

    let cfg = toy_config(tmp.path());
    let ck = tmp.path().join("ck.bin");
    let out = Command::new(env!("CARGO_BIN_EXE_tagcn"))
        .args([
            "train",
            "--config",
            &cfg,
            "--epochs",
            "1",
            "--out",
            ck.to_str().unwrap(),
        ])
        .env("TAGCN_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ck.exists());

    let out = tagcn(&["train", "--config", &cfg, "--out", ck.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(category(&out), "config");
}

#[test]
fn analyze_reports_and_ratios() {
    let out = tagcn(&[
        "analyze",
        "--model",
        "ta-gcn",
        "--model",
        "st-gcn",
        "--streams",
        "2,4",
        "--ratio-against",
        "st-gcn",
        "--json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let reports = v["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 6);
    let flops = |name: &str| {
        reports.iter().find(|r| r["name"] == name).unwrap()["total_flops"]
            .as_u64()
            .unwrap()
    };
    assert_eq!(flops("4s-ta-gcn"), 4 * flops("ta-gcn"));
    assert_eq!(flops("2s-st-gcn"), 2 * flops("st-gcn"));
    assert!(v["ratios"].is_object());

    let out = tagcn(&["analyze", "--t-prime", "100", "--published"]);
    let text = stdout(&out);
    assert!(out.status.success());
    assert!(text.contains("T'=100") && text.contains("MAC=2"), "{text}");
    assert!(text.contains("GCN-NAS"));

    let out = tagcn(&["analyze", "--ratio-against", "nope"]);
    assert_eq!(category(&out), "config");
}

#[test]
fn gradcheck_one_module() {
    let out = tagcn(&["gradcheck", "--module", "temporal", "--seeds", "3", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["max_rel_error"].as_f64().unwrap() < 1e-4));

    let out = tagcn(&["gradcheck", "--module", "conv3d"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(category(&out), "config");
}

#[test]
fn failures_map_to_categories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tagcn(&["eval", "--config", "/nonexistent/run.toml", "--checkpoint", "x"]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(category(&out), "io");

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[model\n").unwrap();
    let out = tagcn(&["train", "--config", bad.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(category(&out), "format");

    let cfg = toy_config(tmp.path());
    let junk = tmp.path().join("junk.seq");
    std::fs::write(&junk, b"not a sequence").unwrap();
    let out = tagcn(&["tam-inspect", "--config", &cfg, "--input", junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(category(&out), "format");

    let out = tagcn(&["train", "--config", &cfg, "--out", "x", "--lr=-1", "--data", "."]);
    assert_eq!(category(&out), "config");

    let out = tagcn(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(category(&out), "usage");

    let out = tagcn(&["--help"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("tam-inspect"));
}
