use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

use it2p::checkpoint::read_meta;
use it2p::grounding::T2PConfig;
use it2p::inquiry::QgnConfig;
use it2p::language::Vocab;
use it2p::{QgnModel, T2PModel};
use it2p_cli::{train_config, ModelKind, Overrides, Scale};

fn it2p(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_it2p")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(it2p(&[]).status.code(), Some(2));
    assert_eq!(it2p(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(it2p(&["train", "t2p"]).status.code(), Some(2));
    assert_eq!(it2p(&["gen-data", "--out", "x", "--scale", "huge"]).status.code(), Some(2));
    assert_eq!(it2p(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = it2p(&["eval", "grounding", "--data", path(&dir.path().join("missing")), "--report", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = ok(&it2p(&["gen-data", "--scenes", "6", "--seed", "1", "--out", path(&a)]));
    let second = ok(&it2p(&["gen-data", "--scenes", "6", "--seed", "1", "--out", path(&b)]));
    let hash = |s: &str| s.lines().find(|l| l.starts_with("manifest sha256")).unwrap().to_string();
    assert_eq!(hash(&first), hash(&second));
    for f in ["manifest.json", "t2p.jsonl", "vocab.txt", "images/00003.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = json(a.join("manifest.json"));
    let splits: Vec<&str> = m["scenes"].as_array().unwrap().iter().map(|s| s["split"].as_str().unwrap()).collect();
    assert_eq!(splits.len(), 6);
    assert!(splits.contains(&"train") && splits.contains(&"test"));
    assert_eq!(m["config"]["seed"], 1);

    let c = dir.path().join("c");
    let third = ok(&it2p(&["gen-data", "--scenes", "6", "--seed", "2", "--out", path(&c)]));
    assert_ne!(hash(&first), hash(&third));
}

#[test]
fn settings_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.json");
    std::fs::write(&file, r#"{ "epochs": 7, "lr": 0.5, "scale": "paper" }"#).unwrap();
    let flags = Overrides { epochs: Some(3), ..Default::default() };
    let o = flags.with_file(Some(&file)).unwrap();
    let tc = train_config(ModelKind::T2p, &o);
    assert_eq!((tc.epochs, tc.lr, tc.batch_size), (3, 0.5, 8));
    assert_eq!(o.scale(), Scale::Paper);
    assert_eq!(train_config(ModelKind::Qgn, &Overrides { scale: Some(Scale::Paper), ..Default::default() }).epochs, 1000);

    std::fs::write(&file, r#"{ "epoch": 7 }"#).unwrap();
    assert!(Overrides::default().with_file(Some(&file)).is_err());
}

#[test]
fn train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&it2p(&["gen-data", "--scenes", "4", "--seed", "3", "--out", path(&data)]));
    let t2p = d.join("t2p.ckpt");
    let stdout = ok(&it2p(&["train", "t2p", "--data", path(&data), "--out", path(&t2p), "--epochs", "1", "--seed", "5", "--dropout", "0.2"]));
    assert!(stdout.contains("final loss"));
    let log = json(d.join("t2p.ckpt.log.json"));
    assert!(log["final_loss"].as_f64().unwrap().is_finite());
    assert_eq!(log["train"]["epochs"], 1);
    assert_eq!(log["train"]["seed"], 5);
    assert_eq!(log["mirror"], true);
    assert_eq!(log["model"]["dropout"], 0.2);

    let qgn = d.join("qgn.ckpt");
    let out = it2p(&["train", "qgn", "--data", path(&data), "--out", path(&qgn)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible model"));
    ok(&it2p(&[
        "train", "qgn", "--data", path(&data), "--out", path(&qgn), "--t2p-ckpt", path(&t2p), "--epochs", "1",
        "--mc-samples", "2", "--qgn-ambiguous", "12", "--qgn-unambiguous", "4",
    ]));
    assert_eq!(json(d.join("qgn.ckpt.log.json"))["qgn_build"]["ambiguous"], 12);

    let base = d.join("base.ckpt");
    ok(&it2p(&["train", "baseline", "--data", path(&data), "--out", path(&base), "--epochs", "1"]));
    let meta = read_meta(&base).unwrap();
    assert_eq!(meta.kind, "baseline");
    assert_eq!(meta.training["loss"], "mse");

    let rep = d.join("stub");
    ok(&it2p(&["eval", "grounding", "--data", path(&data), "--perfect-stub", "--report", path(&rep)]));
    let r = json(rep.join("report.json"));
    let unamb = r["rows"].as_array().unwrap().iter().find(|row| row["class"] == "unambiguous").unwrap();
    assert_eq!(unamb["accuracy"], 1.0);
    assert!(rep.join("report.md").exists() && rep.join("chart.png").exists() && rep.join("config.json").exists());

    let inter = |name: &str| {
        let rep = d.join(name);
        ok(&it2p(&[
            "eval", "interactive", "--data", path(&data), "--t2p-ckpt", path(&t2p), "--qgn-ckpt", path(&qgn),
            "--mc-samples", "2", "--report", path(&rep),
        ]));
        rep
    };
    let (r1, r2) = (inter("i1"), inter("i2"));
    assert_eq!(std::fs::read(r1.join("report.json")).unwrap(), std::fs::read(r2.join("report.json")).unwrap());
    assert_eq!(std::fs::read(r1.join("transcripts.jsonl")).unwrap(), std::fs::read(r2.join("transcripts.jsonl")).unwrap());
    let r = json(r1.join("report.json"));
    assert!(r.as_object().unwrap().contains_key("improvement_ratio"));
    assert_eq!(json(r1.join("config.json"))["session"]["mc_samples"], 2);

    let rep = d.join("cmp");
    ok(&it2p(&[
        "eval", "baseline-compare", "--data", path(&data), "--t2p-ckpt", path(&t2p), "--baseline-ckpt", path(&base),
        "--report", path(&rep),
    ]));
    let variants: Vec<String> =
        json(rep.join("report.json"))["rows"].as_array().unwrap().iter().map(|r| r["variant"].as_str().unwrap().to_string()).collect();
    assert!(variants.contains(&"baseline".to_string()) && variants.contains(&"t2p".to_string()));

    let out = it2p(&["eval", "interactive", "--data", path(&data), "--t2p-ckpt", path(&t2p), "--report", path(&rep)]);
    assert_eq!(out.status.code(), Some(3));
}

/// Small untrained networks saved to `dir`; returns the checkpoint and vocabulary paths.
fn tiny_models(dir: &Path) -> [PathBuf; 3] {
    let vocab = Vocab::standard();
    let tc = T2PConfig { stem_channels: 4, channels: vec![4, 4, 4], embed_dim: 8, hidden: 8, lang_dim: 4, ..T2PConfig::desk(vocab.len()) };
    let qc = QgnConfig { conv_channels: [4, 4, 4], embed_dim: 8, hidden: 8, ..QgnConfig::desk(vocab.len()) };
    let paths = [dir.join("t2p.ckpt"), dir.join("qgn.ckpt"), dir.join("vocab.txt")];
    T2PModel::new(tc, 1).unwrap().save(&paths[0], &vocab, 1, None).unwrap();
    QgnModel::new(qc, 2).unwrap().save(&paths[1], &vocab, 2, None).unwrap();
    vocab.save(&paths[2]).unwrap();
    paths
}

fn demo(dir: &Path, script: &str) -> Output {
    let [t, q, v] = tiny_models(dir);
    let mut child = Command::new(env!("CARGO_BIN_EXE_it2p"))
        .args(["demo", "--scene-seed", "4", "--mc-samples", "4", "--seed", "9"])
        .env("IT2P_T2P_CKPT", &t)
        .env("IT2P_QGN_CKPT", &q)
        .env("IT2P_VOCAB", &v)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn demo_matches_golden_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&demo(dir.path(), "\npick up the glorp block\nyes\n"));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/demo.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &out).unwrap();
    }
    assert_eq!(out, std::fs::read_to_string(&golden).unwrap());
    assert!(out.contains("unknown words read as <unk>: glorp"));
    let asked = out.lines().find_map(|l| l.strip_prefix("robot asks: ")).unwrap();
    let q = asked.split('?').next().unwrap();
    assert!(out.contains(&format!("command is now: pick up the glorp block {q}\n")));
}

#[test]
fn demo_exits_cleanly_on_end_of_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&demo(dir.path(), "grab the red one\n"));
    assert!(out.contains("robot asks: "));
    assert!(!out.contains("final pick"));
    let out = ok(&demo(dir.path(), ""));
    assert!(out.contains("you want block"));
}
