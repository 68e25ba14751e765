use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn casar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_casar"))
        .args(args)
        .env("CASAR_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = casar(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit code and the parsed one-line error.
fn err(args: &[&str]) -> (i32, Value) {
    let out = casar(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "stderr not one line: {stderr}");
    let parsed: Value = serde_json::from_str(stderr.trim_end()).expect("stderr is JSON");
    assert_eq!(parsed["code"].as_i64(), out.status.code().map(i64::from));
    (out.status.code().unwrap(), parsed)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_small(dir: &Path, seed: &str) {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--seed",
        seed,
        "--classes",
        "3",
        "--clips-per-class",
        "6",
        "--test-per-class",
        "2",
        "--min-frames",
        "4",
        "--max-frames",
        "8",
    ]);
}

fn train_small(data: &Path, out: &Path) -> (PathBuf, PathBuf) {
    let f = out.join("contact.ckpt");
    let g = out.join("action.ckpt");
    ok(&["train-contact", "--data", s(data), "--out", s(&f), "--hidden", "8", "--epochs", "2", "--lr", "1e-3"]);
    ok(&[
        "train-action",
        "--data",
        s(data),
        "--contact-ckpt",
        s(&f),
        "--out",
        s(&g),
        "--hidden",
        "8",
        "--epochs",
        "3",
        "--lr",
        "1e-3",
        "--head",
        "softmax-ce",
    ]);
    (f, g)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn full_command_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data, "7");
    for f in ["clips.jsonl", "contacts.jsonl", "config.json", "train.jsonl", "test.jsonl", "manifest.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    assert!(data.join("meshes").is_dir());

    let derived = tmp.path().join("derived.jsonl");
    ok(&[
        "derive-contact",
        "--clips",
        s(&data.join("clips.jsonl")),
        "--meshes",
        s(&data.join("meshes")),
        "--out",
        s(&derived),
    ]);
    assert_eq!(read(&derived), read(&data.join("contacts.jsonl")));
    assert!(tmp.path().join("derived.manifest.json").is_file());

    let (f, g) = train_small(&data, tmp.path());
    assert!(tmp.path().join("contact.meta.json").is_file());
    let meta: Value = serde_json::from_slice(&read(&tmp.path().join("action.meta.json"))).unwrap();
    assert_eq!(meta["input_dim"], 32 * 281);
    assert_eq!(meta["head"], "softmax_ce");
    assert_eq!(meta["epochs"], 3);

    let report = tmp.path().join("report");
    ok(&["eval", "--data", s(&data), "--contact-ckpt", s(&f), "--action-ckpt", s(&g), "--report", s(&report)]);
    let metrics: Value = serde_json::from_slice(&read(&report.join("metrics.json"))).unwrap();
    let top1 = metrics["top1_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert_eq!(metrics["clip_count"], 6);
    let confusion = String::from_utf8(read(&report.join("confusion.csv"))).unwrap();
    assert_eq!(confusion.lines().next().unwrap(), "label,0,1,2");
    assert_eq!(confusion.lines().count(), 4);
    let per_object = String::from_utf8(read(&report.join("per_object.csv"))).unwrap();
    assert!(per_object.starts_with("object_label,contact_acc,distant_acc,frames\n"));
    assert!(per_object.lines().last().unwrap().starts_with("average,"));
    assert!(report.join("manifest.json").is_file());

    let out = ok(&[
        "predict",
        "--clip",
        s(&data.join("test.jsonl")),
        "--contact-ckpt",
        s(&f),
        "--action-ckpt",
        s(&g),
    ]);
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    for line in &lines {
        assert!(line["clip_id"].is_string());
        assert!(line["predicted_class"].as_u64().unwrap() < 3);
        let probs = line["probabilities"].as_array().unwrap();
        assert_eq!(probs.len(), 3);
    }

    let ablation = tmp.path().join("ablation");
    let config = tmp.path().join("small.json");
    std::fs::write(
        &config,
        r#"{"contact":{"hidden_width":8,"epochs":2,"base_lr":1e-3},
            "action":{"hidden_width":8,"epochs":2,"base_lr":1e-3,"head":"softmax_ce"}}"#,
    )
    .unwrap();
    ok(&["ablation", "--data", s(&data), "--config", s(&config), "--report", s(&ablation)]);
    let csv = String::from_utf8(read(&ablation.join("ablation.csv"))).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["baseline", "contact_only", "distant_only", "contact_distant"]);
    let manifest: Value = serde_json::from_slice(&read(&ablation.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["contact"]["hidden_width"], 8);
    assert_eq!(manifest["config"]["action"]["lambda"], 0.0);
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if path.is_dir() {
            files.extend(listing(&path).into_iter().map(|(n, b)| (format!("{name}/{n}"), b)));
        } else if !name.ends_with("manifest.json") {
            files.push((name, read(&path)));
        }
    }
    files.sort();
    files
}

#[test]
fn commands_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth_small(&a, "11");
    synth_small(&b, "11");
    assert_eq!(listing(&a), listing(&b));

    let (ra, rb) = (tmp.path().join("ra"), tmp.path().join("rb"));
    std::fs::create_dir_all(&ra).unwrap();
    std::fs::create_dir_all(&rb).unwrap();
    let (fa, ga) = train_small(&a, &ra);
    let (fb, gb) = train_small(&a, &rb);
    assert_eq!(read(&fa), read(&fb));
    assert_eq!(read(&ga), read(&gb));
    for (f, g, r) in [(&fa, &ga, ra.join("eval")), (&fb, &gb, rb.join("eval"))] {
        ok(&["eval", "--data", s(&a), "--contact-ckpt", s(f), "--action-ckpt", s(g), "--report", s(&r)]);
    }
    assert_eq!(
        read(&ra.join("eval/confusion.csv")),
        read(&rb.join("eval/confusion.csv"))
    );
    assert_eq!(
        read(&ra.join("eval/per_object.csv")),
        read(&rb.join("eval/per_object.csv"))
    );
}

#[test]
fn validation_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, e) = err(&["synth", "--out", s(&tmp.path().join("x")), "--classes", "1"]);
    assert_eq!(code, 2);
    assert_eq!(e["error"], "validation");

    let data = tmp.path().join("data");
    synth_small(&data, "3");
    let (code, e) = err(&[
        "derive-contact",
        "--clips",
        s(&data.join("clips.jsonl")),
        "--meshes",
        s(&data.join("meshes")),
        "--out",
        s(&tmp.path().join("c.jsonl")),
        "--eta-c",
        "0.3",
        "--eta-d",
        "0.2",
    ]);
    assert_eq!(code, 2);
    assert!(e["message"].as_str().unwrap().contains("eta"), "{e}");

    let meshes = tmp.path().join("partial_meshes");
    std::fs::create_dir_all(&meshes).unwrap();
    let first_clip: Value =
        serde_json::from_str(std::str::from_utf8(&read(&data.join("clips.jsonl"))).unwrap().lines().next().unwrap())
            .unwrap();
    let mesh_id = first_clip["mesh_id"].as_str().unwrap().to_string();
    for entry in std::fs::read_dir(data.join("meshes")).unwrap() {
        let path = entry.unwrap().path();
        if path.file_stem().unwrap() != mesh_id.as_str() {
            std::fs::copy(&path, meshes.join(path.file_name().unwrap())).unwrap();
        }
    }
    let (code, e) = err(&[
        "derive-contact",
        "--clips",
        s(&data.join("clips.jsonl")),
        "--meshes",
        s(&meshes),
        "--out",
        s(&tmp.path().join("c.jsonl")),
    ]);
    assert_ne!(code, 0);
    assert!(e["message"].as_str().unwrap().contains(&mesh_id), "{e}");

    let f = tmp.path().join("f.ckpt");
    ok(&["train-contact", "--data", s(&data), "--out", s(&f), "--hidden", "4", "--epochs", "1"]);
    let (code, e) = err(&[
        "train-action",
        "--data",
        s(&data),
        "--contact-ckpt",
        s(&f),
        "--out",
        s(&tmp.path().join("g.ckpt")),
        "--lambda",
        "0.5",
    ]);
    assert_eq!(code, 2);
    assert!(e["message"].as_str().unwrap().contains("joint training"), "{e}");

    let g16 = tmp.path().join("g16.ckpt");
    ok(&[
        "train-action",
        "--data",
        s(&data),
        "--contact-ckpt",
        s(&f),
        "--out",
        s(&g16),
        "--hidden",
        "4",
        "--epochs",
        "1",
        "--frames-per-clip",
        "16",
    ]);
    let (code, e) = err(&[
        "eval",
        "--data",
        s(&data),
        "--contact-ckpt",
        s(&f),
        "--action-ckpt",
        s(&g16),
        "--report",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(code, 2);
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("4496") && msg.contains("8992"), "{msg}");

    let (code, e) = err(&["eval", "--data", s(&data), "--contact-ckpt", s(&tmp.path().join("missing.ckpt")),
        "--action-ckpt", s(&g16), "--report", s(&tmp.path().join("r"))]);
    assert_eq!(code, 3);
    assert_eq!(e["error"], "io");

    std::fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    std::fs::copy(tmp.path().join("f.meta.json"), tmp.path().join("junk.meta.json")).unwrap();
    let (code, e) = err(&["predict", "--clip", s(&data.join("clips.jsonl")), "--contact-ckpt",
        s(&tmp.path().join("junk.ckpt")), "--action-ckpt", s(&g16)]);
    assert_eq!(code, 2);
    assert!(e["message"].as_str().unwrap().contains("magic"), "{e}");

    let (code, e) = err(&["synth", "--bogus"]);
    assert_eq!(code, 2);
    assert_eq!(e["error"], "usage");
}

#[test]
fn help_lists_defaults() {
    let help = |cmd: &str| String::from_utf8(ok(&[cmd, "--help"]).stdout).unwrap();
    let contact = help("train-contact");
    for d in ["[default: 256]", "[default: 100]", "[default: 1e-4]", "[default: 0.7]", "[default: 20]", "[default: 0.5]", "[default: 4]"] {
        assert!(contact.contains(d), "train-contact help lacks {d}:\n{contact}");
    }
    let action = help("train-action");
    for d in ["[default: 5000]", "[default: 600]", "[default: 1e-5]", "[default: 200]", "[default: 32]", "[default: sigmoid-ce]"] {
        assert!(action.contains(d), "train-action help lacks {d}:\n{action}");
    }
    let derive = help("derive-contact");
    for d in ["[default: 0.02]", "[default: 0.20", "fpha"] {
        assert!(derive.contains(d), "derive-contact help lacks {d}:\n{derive}");
    }
    let synth = help("synth");
    for flag in ["--seed", "--classes", "--clips-per-class", "--noise"] {
        assert!(synth.contains(flag));
    }
}
