mod common;

use std::fs;
use std::path::Path;

use common::*;
use sha2::{Digest, Sha256};
use spoofnet_core::dataio::{Label, Manifest, Subset};

fn digest(p: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(p).unwrap()).to_vec()
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_counts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    spoofnet_ok(&[
        "synth",
        "--out",
        path_str(&out),
        "--counts",
        "10:10:10",
        "--seed",
        "7",
    ]);
    let m = Manifest::load(&out.join("manifest.csv")).unwrap();
    let train = m
        .records
        .iter()
        .filter(|r| r.subset == Subset::Train)
        .count();
    assert_eq!(train, 30);
    assert_eq!(m.count(Label::Live), 15);
    assert!(m.records.iter().all(|r| r.bbox.is_some()));
    let echo = fs::read_to_string(out.join("run_config.txt")).unwrap();
    assert!(echo.contains("counts = 10:10:10"));
    assert!(echo.contains("test-counts = 5:5:5"));
}

#[test]
fn missing_out_is_usage_error() {
    let out = spoofnet(&["synth", "--counts", "10:10:10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn pseudo_datasets_differ_but_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        spoofnet_ok(&[
            "synth",
            "--out",
            path_str(out),
            "--counts",
            "2:2:2",
            "--test-counts",
            "1:1:1",
            "--datasets",
            "4",
            "--seed",
            "5",
        ]);
    }
    let names: Vec<String> = (0..4).map(|i| format!("synth{i}")).collect();
    for n in &names {
        assert!(a.join(format!("manifest_{n}.csv")).exists());
    }
    let rel = "train/printed_00000.pgm";
    let hashes: Vec<Vec<u8>> = names.iter().map(|n| digest(&a.join(n).join(rel))).collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(hashes[i], hashes[j], "{} vs {}", names[i], names[j]);
        }
    }
    let m = Manifest::load(&a.join("manifest.csv")).unwrap();
    for r in &m.records {
        assert_eq!(
            digest(&a.join(&r.image_path)),
            digest(&b.join(&r.image_path))
        );
    }
}

/// Small end-to-end run: 16-pixel network, one epoch.
fn tiny_pipeline(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let train = root.join("train");
    let eval = root.join("eval");
    spoofnet_ok(&[
        "synth",
        "--out",
        path_str(&data),
        "--counts",
        "6:6:6",
        "--test-counts",
        "3:3:3",
        "--seed",
        "2",
    ]);
    let manifest = data.join("manifest.csv");
    spoofnet_ok(&[
        "train",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&train),
        "--epochs",
        "1",
        "--input-size",
        "16",
        "--seed",
        "2",
    ]);
    spoofnet_ok(&[
        "eval",
        "--manifest",
        path_str(&manifest),
        "--model",
        path_str(&train.join("model.spn")),
        "--out",
        path_str(&eval),
    ]);
    (data, root.to_path_buf())
}

#[test]
fn train_eval_sweep_round() {
    let dir = tempfile::tempdir().unwrap();
    let (data, root) = tiny_pipeline(dir.path());
    let eval = root.join("eval");
    let report = fs::read_to_string(eval.join("report.csv")).unwrap();
    let rows = report_rows(&report);
    let taus: Vec<f64> = rows.iter().map(|r| r.1).collect();
    assert_eq!(taus, vec![30.0, 40.0, 50.0, 70.0, 80.0, 90.0]);
    assert!(rows.iter().all(|r| r.0 == "synth0"));
    assert!(eval.join("report.json").exists());

    let history = fs::read_to_string(root.join("train/history_stage1.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,val_accuracy,seconds\n1,"));

    // sweeping the dump reproduces the evaluation report without rescoring
    let sweep = root.join("sweep");
    spoofnet_ok(&[
        "sweep",
        "--scores",
        path_str(&eval.join("scores.csv")),
        "--out",
        path_str(&sweep),
    ]);
    assert_eq!(
        fs::read_to_string(sweep.join("report.csv")).unwrap(),
        report
    );

    // rerunning eval is byte-identical and leaves the inputs untouched
    let manifest = data.join("manifest.csv");
    let model = root.join("train/model.spn");
    let before = (digest(&manifest), digest(&model));
    let again = root.join("eval2");
    spoofnet_ok(&[
        "eval",
        "--manifest",
        path_str(&manifest),
        "--model",
        path_str(&model),
        "--out",
        path_str(&again),
    ]);
    for f in ["report.csv", "report.json", "scores.csv"] {
        assert_eq!(digest(&eval.join(f)), digest(&again.join(f)), "{f}");
    }
    assert_eq!(before, (digest(&manifest), digest(&model)));
}

#[test]
fn sweep_of_single_sample_flips_at_its_score() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(
        &scores,
        "image_path,dataset,label,score,stage2_ran\na.pgm,d,live,42.5,true\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    spoofnet_ok(&[
        "sweep",
        "--scores",
        path_str(&scores),
        "--out",
        path_str(&out),
        "--thresholds",
        "42.5,42.6",
    ]);
    let rows = report_rows(&fs::read_to_string(out.join("report.csv")).unwrap());
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].2, rows[0].3), (None, Some(0.0)));
    assert_eq!((rows[1].2, rows[1].3), (None, Some(100.0)));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    spoofnet_ok(&[
        "synth",
        "--out",
        path_str(&data),
        "--counts",
        "4:4:4",
        "--seed",
        "1",
    ]);
    let cfg = dir.path().join("run.cfg");
    let train = dir.path().join("train");
    fs::write(
        &cfg,
        format!(
            "# training run\nmanifest = {}\nepochs = 3\ninput_size = 16\nlearning-rate = 0.001\n",
            path_str(&data.join("manifest.csv"))
        ),
    )
    .unwrap();
    spoofnet_ok(&[
        "train",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&train),
        "--epochs",
        "1",
    ]);
    let echo = fs::read_to_string(train.join("run_config.txt")).unwrap();
    assert!(echo.contains("epochs = 1\n"), "{echo}");
    assert!(echo.contains("learning-rate = 0.001\n"), "{echo}");
    assert!(echo.contains("input-size = 16\n"), "{echo}");
    let history = fs::read_to_string(train.join("history_stage1.csv")).unwrap();
    assert!(!history.contains("\n2,"));
}

#[test]
fn errors_are_one_line_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = spoofnet(&[
        "eval",
        "--manifest",
        "missing.csv",
        "--model",
        "missing.spn",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind="), "{err}");

    let out = spoofnet(&[
        "sweep",
        "--scores",
        "s.csv",
        "--out",
        path_str(dir.path()),
        "--thresholds",
        "50,40",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error kind=config"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = spoofnet(&[
        "synth",
        "--out",
        path_str(dir.path()),
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = spoofnet(&[
        "train",
        "--out",
        path_str(dir.path()),
        "--learning-rate=-1",
        "--manifest",
        "m.csv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = spoofnet_ok(&["verify", "--out", path_str(dir.path())]);
    let err = stderr(&out);
    assert!(err.contains("PASS grad_conv"));
    assert!(!err.contains("FAIL"));
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn every_command_has_help() {
    for cmd in ["synth", "train", "eval", "sweep", "cross", "verify"] {
        let out = spoofnet(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--"), "{cmd}");
    }
}
