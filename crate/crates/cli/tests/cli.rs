mod common;

use std::path::Path;
use std::process::Command;

use common::{small_config, write_daphnet, write_wisdm};
use deepact_cli::commands::{cmd_decode, cmd_eval, cmd_ingest, cmd_train, FEATURES_FILE, MODEL_FILE};
use deepact_cli::config::RunConfig;
use deepact_cli::features::FeatureTable;
use deepact_cli::manifest::Manifest;
use deepact_cli::{EXIT_CONFIG, EXIT_INPUT};

fn deepact(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_deepact")).args(args).output().unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml_string()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn ingest_summary_reports_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wisdm(dir.path(), 3, 4, 2, 1);
    let s = cmd_ingest(&small_config(&data), &dir.path().join("out")).unwrap();
    assert_eq!((s.n, s.feature_len, s.classes.len()), (200, 303, 6));
    assert_eq!(s.windows, 3 * 4 * 2);
    assert_eq!(s.recordings, 3);
    let total: usize = s.train_counts.iter().chain(&s.test_counts).sum();
    assert_eq!(total, s.windows);

    let mut cfg = small_config(&write_daphnet(dir.path(), 2, 120, 2));
    cfg.dataset.format = "daphnet".into();
    let s = cmd_ingest(&cfg, &dir.path().join("daph")).unwrap();
    assert_eq!((s.n, s.feature_len, s.classes.len()), (256, 387, 2));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = dir.path().join("o");
    let o = deepact(&["ingest", "--data", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));

    std::fs::write(dir.path().join("bad.toml"), "[window]\nseconds = 0.05\n").unwrap();
    let bad = dir.path().join("bad.toml");
    let o = deepact(&["--config", bad.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));

    let o = deepact(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn binary_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wisdm(dir.path(), 4, 6, 2, 3);
    let cfg_path = write_config(dir.path(), &small_config(&data));
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    for cmd in ["ingest", "train", "eval", "decode"] {
        let o = deepact(&["--config", &cfg_path, "--out", out_s, cmd]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let eval = std::fs::read_to_string(out.join("eval_report.tsv")).unwrap();
    assert!(eval.contains("hit_rate\t1.000000"), "{eval}");
    let inspect = deepact(&["inspect", out.join(MODEL_FILE).to_str().unwrap()]);
    let text = String::from_utf8_lossy(&inspect.stdout);
    assert!(text.contains("input_dim\t303") && text.contains("widths\t[24, 12]"), "{text}");
    let inspect = deepact(&["inspect", out.join("hmm.txt").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&inspect.stdout).contains("states\t6"));
    let o = deepact(&["--config", &cfg_path, "--out", out_s, "sweep", "--depths", "1", "--widths", "8,16"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = std::fs::read_to_string(out.join("sweep.tsv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
}

#[test]
fn manifest_records_training_arm_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wisdm(dir.path(), 3, 4, 2, 4);
    let mut cfg = small_config(&data);
    let out = dir.path().join("o");
    cmd_ingest(&cfg, &out).unwrap();
    cfg.pipeline.pretrain = false;
    let s = cmd_train(&cfg, &out.join(FEATURES_FILE), &out).unwrap();
    let m = Manifest::read(&s.manifest_path).unwrap();
    assert_eq!(m.run.pretrained, Some(false));
    assert!(m.run.seeds.contains_key("init") && !m.run.seeds.contains_key("pretrain"));
    assert_eq!(m.run.outputs.len(), 2);

    let defaults = RunConfig::default();
    let text = toml::to_string(&Manifest { run: m.run, config: defaults }).unwrap();
    for needle in [
        "learning_rate = 0.001",
        "epochs = 150",
        "learning_rate = 0.01",
        "epochs = 75",
        "learning_rate = 0.1",
        "epochs = 1000",
        "batch_size = 75",
    ] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
}

#[test]
fn eval_checks_dimensions_and_totals() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wisdm(dir.path(), 3, 4, 2, 5);
    let cfg = small_config(&data);
    let out = dir.path().join("o");
    cmd_ingest(&cfg, &out).unwrap();
    cmd_train(&cfg, &out.join(FEATURES_FILE), &out).unwrap();
    let e = cmd_eval(&cfg, &out.join(MODEL_FILE), &out.join(FEATURES_FILE), &out).unwrap();
    let table = FeatureTable::read(&out.join(FEATURES_FILE)).unwrap();
    let test_rows = table.rows.iter().filter(|r| r.split == deepact_cli::features::Split::Test).count();
    assert_eq!(e.confusion.total() as usize, test_rows);

    let mut other = cfg.clone();
    other.window.seconds = 5.0;
    let out2 = dir.path().join("o2");
    cmd_ingest(&other, &out2).unwrap();
    let err = cmd_eval(&cfg, &out.join(MODEL_FILE), &out2.join(FEATURES_FILE), &out2).unwrap_err();
    assert!(err.to_string().contains("303"), "{err}");
    assert_eq!(deepact_cli::exit_code(&err), EXIT_INPUT);
}

#[test]
fn decode_has_one_segment_per_test_recording() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_wisdm(dir.path(), 4, 5, 2, 6);
    let cfg = small_config(&data);
    let out = dir.path().join("o");
    cmd_ingest(&cfg, &out).unwrap();
    cmd_train(&cfg, &out.join(FEATURES_FILE), &out).unwrap();
    let d = cmd_decode(&cfg, &out.join(MODEL_FILE), &out.join(FEATURES_FILE), &out).unwrap();
    let table = FeatureTable::read(&out.join(FEATURES_FILE)).unwrap();
    let mut streams: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.split == deepact_cli::features::Split::Test)
        .map(|r| r.origin.stream)
        .collect();
    streams.sort();
    streams.dedup();
    assert_eq!(d.segments, streams.len());
    let records = std::fs::read_to_string(out.join("decode.tsv")).unwrap();
    assert_eq!(records.lines().count(), d.windows + 1);
}

#[test]
fn relative_paths_survive_manifest_replay() {
    let dir = tempfile::tempdir().unwrap();
    write_wisdm(dir.path(), 3, 4, 2, 6);
    let mut cfg = small_config(Path::new("wisdm.txt"));
    cfg.model.layers = vec![8];
    std::fs::write(dir.path().join("run.toml"), cfg.to_toml_string()).unwrap();
    let run = |cwd: &Path, args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_deepact")).current_dir(cwd).args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(dir.path(), &["--config", "run.toml", "--out", "a", "ingest"]);
    let elsewhere = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("a/ingest_manifest.toml");
    run(elsewhere.path(), &["--config", manifest.to_str().unwrap(), "--out", "b", "ingest"]);
    assert_eq!(
        std::fs::read(dir.path().join("a").join(FEATURES_FILE)).unwrap(),
        std::fs::read(elsewhere.path().join("b").join(FEATURES_FILE)).unwrap()
    );

    let o = Command::new(env!("CARGO_BIN_EXE_deepact"))
        .current_dir(elsewhere.path())
        .env("DEEPACT_DATA_DIR", dir.path())
        .args(["--data", "wisdm.txt", "--out", "c", "ingest"])
        .output()
        .unwrap();
    // --data is taken as given; only the config default resolves against the variable.
    assert_eq!(o.status.code(), Some(EXIT_INPUT));
    let o = Command::new(env!("CARGO_BIN_EXE_deepact"))
        .current_dir(elsewhere.path())
        .env("DEEPACT_DATA_DIR", dir.path())
        .args(["--out", "c", "ingest"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains(&dir.path().join("WISDM_ar_v1.1_raw.txt").display().to_string()));
}
