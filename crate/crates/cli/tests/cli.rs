use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ghostlite::checkpoint::Checkpoint;
use ghostlite::data::{Lesion, NormStats};
use ghostlite::flops::analyze;
use ghostlite::model::{build_model, ModelSpec};
use ghostlite::train::History;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_ghostlite");

fn smoke_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/smoke")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("GHOSTLITE_SEED").output().expect("binary runs")
}

fn run(args: &[&str]) -> Output {
    run_in(Path::new(env!("CARGO_MANIFEST_DIR")), args)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_smoke(out: &Path, extra: &[&str]) -> Output {
    let data = smoke_dir();
    let mut args = vec!["train", "--data-dir", s(&data), "--out", s(out)];
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "1"]);
    }
    args.extend_from_slice(extra);
    run(&args)
}

/// One checkpoint shared by the evaluation and prediction tests.
fn trained() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = train_smoke(dir.path(), &["--epochs", "3", "--seed", "3"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        dir
    })
    .path()
}

fn checkpoint() -> PathBuf {
    trained().join("checkpoint.glnw")
}

#[test]
fn every_command_has_side_effect_free_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train", "eval", "predict", "flops", "gradcheck", "smote-preview", "synth"] {
        let out = run_in(dir.path(), &[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
        assert!(stdout(&out).contains("Usage"), "{cmd}");
    }
    assert_eq!(code(&run_in(dir.path(), &["--help"])), 0);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn train_without_data_dir_is_a_usage_error() {
    let out = run(&["train", "--epochs", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn one_epoch_on_smoke_set_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_smoke(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut files: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    // nothing but the finished artifacts, no temporary leftovers
    assert_eq!(files, ["checkpoint.glnw", "history.json", "split.csv"]);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("history.json")).unwrap()).unwrap();
    let history: History = serde_json::from_value(json["history"].clone()).unwrap();
    assert_eq!(history.epochs.len(), 1);
    assert_eq!(json["run"]["train"]["epochs"], 1);
    assert_eq!(json["run"]["provenance"]["epochs"], "flag");
    assert_eq!(json["run"]["provenance"]["lr"], "default");
    assert!(json["run"]["train"]["early_stop_patience"].is_null());

    let ckpt = Checkpoint::load(dir.path().join("checkpoint.glnw")).unwrap();
    assert_eq!(ckpt.history, history);
    let split = std::fs::read_to_string(dir.path().join("split.csv")).unwrap();
    assert_eq!(split.lines().count(), 1 + 78);
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = train_smoke(d.path(), &["--seed", "7", "--epochs", "2"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for f in ["history.json", "checkpoint.glnw", "split.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_precedence_flag_over_env() {
    let data = smoke_dir();
    let dir = tempfile::tempdir().unwrap();
    let seed_of = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(BIN);
        cmd.args(["train", "--data-dir", s(&data), "--out", s(dir.path()), "--epochs", "1"]).args(args);
        match env {
            Some(v) => cmd.env("GHOSTLITE_SEED", v),
            None => cmd.env_remove("GHOSTLITE_SEED"),
        };
        let out = cmd.output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("history.json")).unwrap()).unwrap();
        (json["run"]["train"]["seed"].as_u64().unwrap(), json["run"]["provenance"]["seed"].as_str().unwrap().to_owned())
    };
    assert_eq!(seed_of(&[], None), (0, "default".into()));
    assert_eq!(seed_of(&[], Some("11")), (11, "env".into()));
    assert_eq!(seed_of(&["--seed", "4"], Some("11")), (4, "flag".into()));

    let out = Command::new(BIN)
        .args(["train", "--data-dir", s(&data), "--out", s(dir.path())])
        .env("GHOSTLITE_SEED", "eleven")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "flags": {"smote": false}, "batch_size": 16}"#).unwrap();
    let out = train_smoke(dir.path(), &["--config", s(&cfg), "--batch-size", "32"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("history.json")).unwrap()).unwrap();
    assert_eq!(json["run"]["train"]["batch_size"], 32);
    assert_eq!(json["run"]["provenance"]["batch_size"], "flag");
    assert_eq!(json["run"]["provenance"]["flags.smote"], "file");
    assert_eq!(json["history"]["synthetic_count"], 0);

    std::fs::write(&cfg, r#"{"epochs": 0}"#).unwrap();
    assert_eq!(code(&train_smoke(dir.path(), &["--config", s(&cfg), "--epochs", "0"])), 2);
    assert_eq!(code(&train_smoke(dir.path(), &["--lr", "-1"])), 2);
    assert_eq!(code(&train_smoke(dir.path(), &["--image-size", "1"])), 2);
    assert_eq!(code(&train_smoke(dir.path(), &["--model-config", "missing.json"])), 2);
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data-dir", s(&dir.path().join("nowhere")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 3);
}

#[test]
fn divergent_training_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_smoke(dir.path(), &["--lr", "1e36", "--epochs", "3"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("epoch"));
    assert!(!dir.path().join("checkpoint.glnw").exists());
}

#[test]
fn eval_csv_has_k_plus_two_rows() {
    let data = smoke_dir();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let out = run(&[
        "eval", "--checkpoint", s(&checkpoint()), "--data-dir", s(&data), "--split", "all", "--format", "csv",
        "--out", s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), Lesion::COUNT + 2);
    assert!(rows[Lesion::COUNT].starts_with("macro avg,"));
    assert!(rows[Lesion::COUNT + 1].ends_with(",78"));
}

#[test]
fn eval_is_repeatable_and_json_parses() {
    let (data, ckpt) = (smoke_dir(), checkpoint());
    let args = ["eval", "--checkpoint", s(&ckpt), "--data-dir", s(&data), "--format", "json"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let report = ghostlite::metrics::parse_json_report(&stdout(&a)).unwrap();
    let split = std::fs::read_to_string(trained().join("split.csv")).unwrap();
    assert_eq!(report.total as usize, split.lines().filter(|l| l.ends_with(",test")).count());
}

#[test]
fn eval_svg_is_well_formed_with_k_squared_cells() {
    let data = smoke_dir();
    let dir = tempfile::tempdir().unwrap();
    let (svg, cm) = (dir.path().join("cm.svg"), dir.path().join("cm.csv"));
    let out = run(&[
        "eval", "--checkpoint", s(&checkpoint()), "--data-dir", s(&data), "--split", "all", "--svg", s(&svg),
        "--confusion", s(&cm),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&svg).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let cells = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).count();
    assert_eq!(cells, Lesion::COUNT * Lesion::COUNT);

    let counts: u64 = std::fs::read_to_string(&cm)
        .unwrap()
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(counts, 78);
}

#[test]
fn eval_rejects_class_count_mismatch() {
    let data = smoke_dir();
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ModelSpec::desk();
    spec.num_classes = 5;
    let model = build_model::<f32>(&spec).unwrap();
    let names = (0..5).map(|i| format!("c{i}")).collect();
    let ckpt = Checkpoint::from_model(&model, names, NormStats::identity(), History::default(), None, String::new());
    let path = dir.path().join("five.glnw");
    ckpt.save(&path).unwrap();
    let out = run(&["eval", "--checkpoint", s(&path), "--data-dir", s(&data), "--split", "all"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("5 classes"), "{}", stderr(&out));

    // metadata outside the seven-class scheme
    let meta = dir.path().join("meta.csv");
    std::fs::write(&meta, "image_id,dx,dx_type\nsynth_00000,akiec,histo\nsynth_00001,psoriasis,histo\n").unwrap();
    let out = run(&[
        "eval", "--checkpoint", s(&checkpoint()), "--data-dir", s(&data), "--metadata", s(&meta), "--split", "all",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn eval_rejects_corrupt_checkpoint() {
    let data = smoke_dir();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = std::fs::read(checkpoint()).unwrap();
    bytes[40] ^= 0x20;
    let path = dir.path().join("bad.glnw");
    std::fs::write(&path, bytes).unwrap();
    let out = run(&["eval", "--checkpoint", s(&path), "--data-dir", s(&data)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("checksum"), "{}", stderr(&out));
}

#[test]
fn predict_prints_ranked_probabilities() {
    let image = smoke_dir().join("synth_00010.png");
    let out = run(&["predict", "--checkpoint", s(&checkpoint()), "--image", s(&image)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let probs = json["probabilities"].as_array().unwrap();
    assert_eq!(probs.len(), 7);
    let p: Vec<f64> = probs.iter().map(|e| e["probability"].as_f64().unwrap()).collect();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(p.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(json["predicted"], probs[0]["class"]);
}

#[test]
fn predict_on_unreadable_image_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.png");
    std::fs::write(&bogus, b"not an image").unwrap();
    let out = run(&["predict", "--checkpoint", s(&checkpoint()), "--image", s(&bogus)]);
    assert_eq!(code(&out), 3);
    let out = run(&["predict", "--checkpoint", s(&checkpoint()), "--image", s(&dir.path().join("absent.png"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn flops_matches_analyzer_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("desk.csv");
    let out = run(&["flops", "--model-config", "desk", "--input-size", "64", "--csv", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let expected = analyze(&ModelSpec::desk(), 64).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let total = text.lines().last().unwrap();
    assert_eq!(total, format!("total,,,{},{}", expected.totals.macs, expected.totals.params));
    assert_eq!(text.lines().count(), expected.layers.len() + 2);

    let spec_path = dir.path().join("desk.json");
    std::fs::write(&spec_path, ModelSpec::desk().to_json()).unwrap();
    let cmp = dir.path().join("cmp.csv");
    let out = run(&["flops", "--compare", s(&spec_path), "full", "--csv", s(&cmp)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = ghostlite::flops::comparison_from_csv(&std::fs::read_to_string(&cmp).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].macs, expected.totals.macs);
}

#[test]
fn flops_rejects_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut spec = ModelSpec::desk();
    spec.blocks[1].c_in = 13;
    std::fs::write(&bad, spec.to_json()).unwrap();
    assert_eq!(code(&run(&["flops", "--model-config", s(&bad)])), 2);
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&run(&["flops", "--model-config", s(&bad)])), 2);
    assert_eq!(code(&run(&["flops", "--input-size", "0"])), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let out = run(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 1 + ghostlite::gradcheck::CHECKS.len());
    assert!(!table.contains("FAIL"));

    let out = run(&["gradcheck", "--only", "conv2d"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 2);

    assert_eq!(code(&run(&["gradcheck", "--only", "conv2d", "--tolerance", "1e-12"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--only", "bogus"])), 2);
}

#[test]
fn smote_preview_writes_images_and_provenance() {
    let data = smoke_dir();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["smote-preview", "--data-dir", s(&data), "--class", "DF", "--count", "3", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pngs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 3);
    let mut reader = csv::Reader::from_path(dir.path().join("provenance.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let lambda: f64 = row[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&lambda));
        assert_ne!(&row[1], &row[2]);
        assert!(dir.path().join(&row[0]).is_file());
    }
}

#[test]
fn smote_preview_needs_two_samples() {
    let data = smoke_dir();
    let dir = tempfile::tempdir().unwrap();
    let meta = dir.path().join("meta.csv");
    // synth_00030 is the first DF image of the smoke set
    std::fs::write(&meta, "image_id,dx,dx_type\nsynth_00000,akiec,\nsynth_00030,df,histo\n").unwrap();
    let out = run(&["smote-preview", "--data-dir", s(&data), "--metadata", s(&meta), "--class", "df", "--out", s(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("DF"), "{}", stderr(&out));
}

#[test]
fn synth_reproduces_bundled_smoke_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--smoke", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bundled = smoke_dir();
    for name in ["metadata.csv", "synth_00000.png", "synth_00077.png"] {
        assert_eq!(std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(bundled.join(name)).unwrap(), "{name}");
    }
}
