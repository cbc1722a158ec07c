//! End-to-end runs of the `nfpos` binary on tiny scenarios.

use std::path::Path;
use std::process::{Command, Output};

fn nfpos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfpos"))
        .args(args)
        .env_remove("NFPOS_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", s(dir), "--n-train", "8", "--n-test", "2", "--snapshots", "50"];
    args.extend_from_slice(extra);
    let o = nfpos(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--width", "4", "--batch-size", "4"];
    if !extra.contains(&"--epochs") {
        args.extend_from_slice(&["--epochs", "1"]);
    }
    args.extend_from_slice(extra);
    nfpos(&args)
}

#[test]
fn help_exits_zero() {
    let o = nfpos(&["--help"]);
    assert_eq!(code(&o), 0);
    for cmd in ["gen-data", "train", "eval", "compare", "fresnel"] {
        assert!(stdout(&o).contains(cmd));
    }
    assert_eq!(code(&nfpos(&["fresnel", "--help"])), 0);
}

#[test]
fn gen_data_requires_out() {
    let o = nfpos(&["gen-data", "--n-train", "8", "--n-test", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--out"), "{}", stderr(&o));
}

#[test]
fn gen_data_uses_data_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nfpos"))
        .args(["gen-data", "--n-train", "8", "--n-test", "2", "--snapshots", "50"])
        .env("NFPOS_DATA_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let made: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(made.len(), 1);
}

#[test]
fn gen_data_smoke_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, &[]);
    gen(&b, &[]);
    let manifest = std::fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert!(manifest.contains("train = 8"), "{manifest}");
    assert!(manifest.contains("test = 2"), "{manifest}");
    for f in ["manifest.toml", "features.bin", "labels.bin", "scales.bin", "seeds.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[scenario]\nsnr = 20\n").unwrap();
    let o = nfpos(&["gen-data", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("snr"), "{}", stderr(&o));

    std::fs::write(&cfg, "[scenario]\nrange_m = [10.0, 2.0]\n").unwrap();
    let o = nfpos(&["gen-data", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn config_file_drives_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    let out = tmp.path().join("d");
    std::fs::write(
        &cfg,
        format!(
            "out = \"{}\"\n[scenario]\nn_train = 6\nn_test = 3\nsnapshots = 50\nfeature = \"csi\"\nseed = 7\n",
            out.display()
        ),
    )
    .unwrap();
    let o = nfpos(&["gen-data", "--config", s(&cfg), "--n-test", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("train = 6") && manifest.contains("test = 4"), "{manifest}");
    assert!(manifest.contains("feature = \"csi\""), "{manifest}");
}

#[test]
fn train_eval_compare_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, &[]);
    let run = tmp.path().join("run");
    let o = train(&data, &run, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("best held-out loss"));
    let curve = std::fs::read_to_string(run.join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);
    assert!(run.join("checkpoint/params.bin").exists());

    let rep = tmp.path().join("rep");
    let o = nfpos(&["eval", "--checkpoint", s(&run.join("checkpoint")), "--data", s(&data), "--out", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let errors = std::fs::read_to_string(rep.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 3);
    for f in ["summary.csv", "cdf.csv"] {
        assert!(rep.join(f).exists());
    }

    let oracle = tmp.path().join("oracle");
    let o = nfpos(&["eval", "--oracle", "--data", s(&data), "--out", s(&oracle)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let errors = std::fs::read_to_string(oracle.join("errors.csv")).unwrap();
    assert!(errors.lines().skip(1).all(|l| l.parse::<f64>().unwrap() == 0.0));

    let table = tmp.path().join("cmp.csv");
    let o = nfpos(&["compare", s(&rep), s(&rep), "--out", s(&table)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].ends_with(",0.000,0.000"), "{csv}");

    let o = nfpos(&["compare", s(&rep)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_is_reproducible_and_switches_models() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, out, &["--epochs", "2", "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let curve = |d: &Path| std::fs::read_to_string(d.join("loss_curve.csv")).unwrap();
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(
        std::fs::read(a.join("checkpoint/params.bin")).unwrap(),
        std::fs::read(b.join("checkpoint/params.bin")).unwrap()
    );

    let mlp = tmp.path().join("mlp");
    let o = train(&data, &mlp, &["--model", "baseline-mlp", "--n-train", "6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = std::fs::read_to_string(mlp.join("checkpoint/manifest.toml")).unwrap();
    assert!(manifest.contains("kind = \"baseline-mlp\""));
}

#[test]
fn eval_error_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let cov = tmp.path().join("cov");
    let csi = tmp.path().join("csi");
    gen(&cov, &[]);
    gen(&csi, &["--feature", "csi"]);
    let run = tmp.path().join("run");
    assert_eq!(code(&train(&csi, &run, &[])), 0);

    let out = tmp.path().join("rep");
    let o = nfpos(&["eval", "--data", s(&cov), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = nfpos(&["eval", "--checkpoint", s(&tmp.path().join("nope")), "--data", s(&cov), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = nfpos(&["eval", "--checkpoint", s(&run.join("checkpoint")), "--data", s(&cov), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("2, 50, 64") && msg.contains("2, 64, 64"), "{msg}");
}

#[test]
fn train_shape_mismatch_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, &[]);
    let cfg = tmp.path().join("m.toml");
    std::fs::write(&cfg, "[model]\ninput = [32, 32]\n").unwrap();
    let o = train(&data, &tmp.path().join("r"), &["--config", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("[2, 64, 64]") && stderr(&o).contains("32"), "{}", stderr(&o));
}

#[test]
fn fresnel_reports() {
    let o = nfpos(&["fresnel"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("near field"));
    let o = nfpos(&["fresnel", "--ula", "--delta", "0.0428", "--n", "1000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("41.6/N"), "{text}");
    assert!(text.contains("taylor"), "{text}");
    assert_eq!(code(&nfpos(&["fresnel", "--n", "0"])), 2);
}

#[test]
fn shipped_config_parses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let o = nfpos(&["gen-data", "--config", s(&cfg), "--out", s(&tmp.path().join("d")), "--n-train", "2", "--n-test", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
