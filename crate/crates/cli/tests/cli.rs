use std::path::Path;
use std::process::{Command, Output};

fn tbnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbnet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, seed: &str) -> Output {
    tbnet(&[
        "gen",
        "--out",
        dir.to_str().unwrap(),
        "--train",
        "16",
        "--test",
        "8",
        "--seed",
        seed,
    ])
}

fn small_train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "1",
        "--width-divisor",
        "16",
        "--blocks-per-stage",
        "1",
    ];
    args.extend_from_slice(extra);
    tbnet(&args)
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(tbnet(&["--help"]).status.code(), Some(0));
    assert_eq!(tbnet(&["train", "--help"]).status.code(), Some(0));
    let bad = tbnet(&["train", "--no-such-flag"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
    assert_eq!(tbnet(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tbnet(&["audit", "--arch", "c4d"]).status.code(), Some(2));
}

#[test]
fn gen_is_deterministic_and_balanced() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = gen(a.path(), "3");
    assert!(out.status.success());
    assert!(gen(b.path(), "3").status.success());
    for f in ["train.tbv", "test.tbv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let text = stdout(&out);
    for name in ["converging", "diverging", "a_leads_b", "b_leads_a"] {
        let row = text.lines().find(|l| l.contains(name)).unwrap();
        let counts: Vec<&str> = row.split_whitespace().skip(2).collect();
        assert_eq!(counts, ["4", "2"], "{row}");
    }
    let c = tempfile::tempdir().unwrap();
    assert!(gen(c.path(), "4").status.success());
    assert_ne!(
        std::fs::read(a.path().join("train.tbv")).unwrap(),
        std::fs::read(c.path().join("train.tbv")).unwrap()
    );
}

#[test]
fn gen_into_missing_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(&dir.path().join("absent"), "1");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn table1_audit_output() {
    let out = tbnet(&["audit", "--table1", "--C", "64", "--p", "20"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for v in ["36864", "110592", "81920", "29696", "11264", "(!)"] {
        assert!(text.contains(v), "missing {v} in\n{text}");
    }
}

#[test]
fn network_audit_lists_stages_and_blocks() {
    let out = tbnet(&["audit", "--arch", "c3d"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("4×28×28") && text.contains("1×7×7"), "{text}");
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("audit.json");
    let out = tbnet(&[
        "audit",
        "--arch",
        "wtbn",
        "--tb-stages",
        "res2,res3,res4",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(stdout(&out).contains("with 6 bilinear blocks"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!(doc["rows"].as_array().unwrap().iter().all(|r| r.get("discrepancy").is_some()));
}

#[test]
fn gradcheck_filter_and_fault() {
    let ok = tbnet(&[
        "gradcheck",
        "--ops",
        "temporal_shift,tb_forward",
        "--seeds",
        "3",
        "--oracle-configs",
        "5",
    ]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    let text = stdout(&ok);
    assert!(text.contains("temporal_shift") && text.contains("tb_forward") && !text.contains("conv3d"));
    let broken = tbnet(&[
        "gradcheck",
        "--ops",
        "temporal_shift",
        "--seeds",
        "3",
        "--fault",
        "shift_sign",
        "--oracle-configs",
        "0",
    ]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(stdout(&broken).contains("FAIL"));
    assert_eq!(tbnet(&["gradcheck", "--ops", "nonsense"]).status.code(), Some(2));
    assert_eq!(tbnet(&["gradcheck", "--fault", "nonsense"]).status.code(), Some(2));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    std::fs::create_dir(&data).unwrap();
    assert!(gen(&data, "1").status.success());
    let out = small_train(&data, &run, &["--arch", "wtbn", "--tb-stages", "res2,res3,res4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // one block per stage in three stages
    assert!(stdout(&out).contains("3 bilinear blocks"), "{}", stdout(&out));
    for f in ["run.toml", "log.jsonl", "checkpoint.ckpt", "metrics.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("log.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "lr", "train_loss", "train_acc", "eval_acc"] {
        assert!(rec.get(key).is_some(), "log lacks {key}");
    }
    let ev = tbnet(&["eval", "--checkpoint", run.to_str().unwrap(), "--clips", "2", "--crops", "1"]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    assert!(stdout(&ev).contains("top-1"));
}

#[test]
fn same_seed_gives_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    assert!(gen(&data, "2").status.success());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(small_train(&data, out, &["--arch", "dtbn", "--seed", "7"]).status.success());
    }
    for f in ["log.jsonl", "checkpoint.ckpt", "metrics.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nepochs = 1\nwarmup = 3\n").unwrap();
    let out = tbnet(&["train", "--config", cfg.to_str().unwrap(), "--data", ".", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));
}

#[test]
fn checkpoint_and_dataset_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let short = dir.path().join("short");
    let run = dir.path().join("run");
    std::fs::create_dir(&data).unwrap();
    std::fs::create_dir(&short).unwrap();
    assert!(gen(&data, "1").status.success());
    assert!(small_train(&data, &run, &["--arch", "c2d"]).status.success());
    // 8-frame videos cannot supply 8 frames at stride 4
    let g = tbnet(&[
        "gen",
        "--out",
        short.to_str().unwrap(),
        "--train",
        "4",
        "--test",
        "4",
        "--frames",
        "8",
    ]);
    assert!(g.status.success());
    let out = tbnet(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.ckpt").to_str().unwrap(),
        "--data",
        short.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let missing = tbnet(&[
        "eval",
        "--checkpoint",
        dir.path().join("nope.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}
