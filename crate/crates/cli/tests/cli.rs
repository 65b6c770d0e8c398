use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaitmm::config::{Preset, RunConfig};
use tempfile::TempDir;

fn gaitmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitmm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn gaitmm")
}

fn ok(args: &[&str]) -> String {
    let out = gaitmm(args);
    assert!(out.status.success(), "gaitmm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sequence_dirs(root: &Path) -> usize {
    let mut n = 0;
    for subject in std::fs::read_dir(root).unwrap() {
        let subject = subject.unwrap().path();
        if !subject.is_dir() {
            continue;
        }
        for cond in std::fs::read_dir(subject).unwrap() {
            n += std::fs::read_dir(cond.unwrap().path()).unwrap().count();
        }
    }
    n
}

/// Parses the `params` table into `(module, standard, depthwise)` rows.
fn param_rows(stdout: &str) -> Vec<(String, usize, usize)> {
    stdout
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

fn row(rows: &[(String, usize, usize)], name: &str) -> (usize, usize) {
    let r = rows.iter().find(|r| r.0 == name).unwrap();
    (r.1, r.2)
}

#[test]
fn synth_data_writes_one_directory_per_sequence() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("corpus");
    let stdout = ok(&["synth-data", "--out", s(&out), "--subjects", "2", "--views", "3", "--seqs-per-cond", "2", "--frames", "4"]);
    assert!(stdout.contains("wrote 36 sequences"), "{stdout}");
    assert_eq!(sequence_dirs(&out), 2 * 3 * 3 * 2);
}

#[test]
fn synth_data_with_no_subjects_succeeds() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("corpus");
    let stdout = ok(&["synth-data", "--out", s(&out), "--subjects", "0"]);
    assert!(stdout.contains("wrote 0 sequences"), "{stdout}");
}

#[test]
fn desk_training_for_100_iterations_logs_every_step() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("corpus");
    let run = dir.path().join("run");
    ok(&["synth-data", "--out", s(&data), "--subjects", "4", "--views", "2", "--frames", "24", "--seqs-per-cond", "4"]);
    let stdout = ok(&["train", "--preset", "desk", "--data", s(&data), "--out", s(&run), "--iterations", "100"]);
    assert!(stdout.contains("trained 100 iterations"), "{stdout}");

    let csv = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 100);
    assert!(run.join("checkpoint.json").exists());

    // The manifest is itself a usable config.
    let manifest = std::fs::read_to_string(run.join("manifest.toml")).unwrap();
    let reparsed = RunConfig::from_toml(&manifest).unwrap();
    let mut expected = RunConfig::preset(Preset::Desk);
    expected.train.iterations = 100;
    expected.model.num_classes = 4;
    assert_eq!(reparsed, expected);
    let rows = param_rows(&ok(&["params", "--config", s(&run.join("manifest.toml"))]));
    let desk = param_rows(&ok(&["params", "--preset", "desk"]));
    assert_eq!(row(&rows, "bme"), row(&desk, "bme"));
    assert!(row(&rows, "classifier").0 < row(&desk, "classifier").0);
}

#[test]
fn indivisible_part_count_exits_with_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nk_parts = 7\n").unwrap();
    let out = gaitmm(&["train", "--config", s(&cfg), "--data", s(dir.path()), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k_parts") && err.contains("64"), "{err}");
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = gaitmm(&["params", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn untrained_checkpoint_evaluates_to_valid_accuracies() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("corpus");
    let run = dir.path().join("run");
    let eval = dir.path().join("eval");
    ok(&["synth-data", "--out", s(&data), "--subjects", "4", "--views", "3", "--frames", "16", "--seqs-per-cond", "2"]);
    ok(&["train", "--preset", "desk", "--data", s(&data), "--out", s(&run), "--iterations", "0"]);
    let stdout = ok(&["eval", "--checkpoint", s(&run.join("checkpoint.json")), "--data", s(&data), "--out", s(&eval)]);
    assert!(stdout.contains("NM") && stdout.contains("mean rank-1"), "{stdout}");
    for line in stdout.lines().filter(|l| l.contains('%')) {
        let pct: f64 = line.split_whitespace().rev().nth(0).unwrap().trim_end_matches('%').parse().unwrap();
        assert!((0.0..=100.0).contains(&pct), "{line}");
    }
    assert!(eval.join("manifest.toml").exists());
    assert!(eval.join("embeddings.jsonl").exists());
    assert!(std::fs::read_dir(&eval).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "csv")));
}

#[test]
fn missing_gallery_view_is_named() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train");
    let data = dir.path().join("corpus");
    let run = dir.path().join("run");
    ok(&["synth-data", "--out", s(&train), "--subjects", "4", "--views", "1", "--frames", "16", "--seqs-per-cond", "1"]);
    ok(&["train", "--preset", "desk", "--data", s(&train), "--out", s(&run), "--iterations", "0"]);
    // Test subjects of the large-sample split, filmed from 000..072 only.
    ok(&["synth-data", "--out", s(&data), "--subjects", "2", "--first-subject", "75", "--views", "5", "--frames", "16", "--seqs-per-cond", "1"]);
    let out = gaitmm(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.json")),
        "--data",
        s(&data),
        "--protocol",
        "casia-b-lt",
        "--out",
        s(&dir.path().join("eval")),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("090"));
}

#[test]
fn depthwise_pme_has_fewer_parameters() {
    let rows = param_rows(&ok(&["params"]));
    let (std_total, dw_total) = row(&rows, "total");
    assert!(dw_total < std_total);
    assert_eq!(std_total, 3_330_803);
    let (bme_s, bme_d) = row(&rows, "bme");
    assert_eq!(bme_s, bme_d);
}

#[test]
fn single_part_pme_matches_bme_count() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("k1.toml");
    std::fs::write(&cfg, "[model]\nk_parts = 1\n").unwrap();
    let rows = param_rows(&ok(&["params", "--config", s(&cfg)]));
    assert_eq!(row(&rows, "pme").0, row(&rows, "bme").0);
}

#[test]
fn doubling_embed_dim_only_changes_the_head() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("wide.toml");
    std::fs::write(&cfg, "[model]\nembed_dim = 512\n").unwrap();
    let base = param_rows(&ok(&["params"]));
    let wide = param_rows(&ok(&["params", "--config", s(&cfg)]));
    for m in ["bme", "pme", "msma", "gem"] {
        assert_eq!(row(&base, m), row(&wide, m), "{m}");
    }
    // Per strip, SeFC gains 128 weights and one bias per extra output and
    // the classifier gains 74 weights per extra input.
    assert_eq!(row(&wide, "sefc").0 - row(&base, "sefc").0, 16 * (128 * 256 + 256));
    assert_eq!(row(&wide, "classifier").0 - row(&base, "classifier").0, 16 * 256 * 74);
}

#[test]
fn shipped_configs_match_the_presets() {
    let paper = std::fs::read_to_string(configs_dir().join("paper.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&paper).unwrap(), RunConfig::preset(Preset::Paper));
    let desk = std::fs::read_to_string(configs_dir().join("desk.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&desk).unwrap(), RunConfig::preset(Preset::Desk));
}
