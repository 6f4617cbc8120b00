use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use siamattr::attribution::AttributionRecord;
use siamattr::encoder::load_model;
use siamattr::probes::{verify_report, AgreementRecord, LexicalParams, ProbeReport};
use siamattr::training::{init_model, load_pairs};
use tempfile::TempDir;

const SMALL: [&str; 8] = ["--layers", "1", "--dim", "8", "--heads", "2", "--ffn", "16"];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamattr"))
        .current_dir(dir)
        .env_remove("SIAMATTR_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Corpus in `data/` and a small model trained on it in `model/`.
fn setup(extra: &[&str]) -> TempDir {
    let tmp = TempDir::new().unwrap();
    ok(
        tmp.path(),
        &[
            "synth",
            "--size",
            "100",
            "--negations",
            "5",
            "--out",
            "data",
        ],
    );
    let mut args = vec![
        "train",
        "--data",
        "data/train.tsv",
        "--epochs",
        "1",
        "--out",
        "model",
    ];
    args.extend(SMALL);
    args.extend(extra);
    ok(tmp.path(), &args);
    tmp
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(file)).unwrap()
}

fn record(dir: &Path, file: &str) -> AttributionRecord {
    serde_json::from_slice(&read(dir, file)).unwrap()
}

fn report(dir: &Path, file: &str) -> ProbeReport {
    ProbeReport::from_json(&String::from_utf8(read(dir, file)).unwrap()).unwrap()
}

#[test]
fn train_is_deterministic() {
    let tmp = setup(&["--seed", "7"]);
    let mut args = vec![
        "train",
        "--data",
        "data/train.tsv",
        "--epochs",
        "1",
        "--seed",
        "7",
        "--out",
        "again",
    ];
    args.extend(SMALL);
    ok(tmp.path(), &args);
    for f in ["model.bin", "loss.csv", "metrics.json"] {
        assert_eq!(
            read(&tmp.path().join("model"), f),
            read(&tmp.path().join("again"), f),
            "{f}"
        );
    }
}

#[test]
fn zero_epochs_saves_initialization() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--size", "50", "--out", "data"]);
    let mut args = vec![
        "train",
        "--data",
        "data/train.tsv",
        "--epochs",
        "0",
        "--out",
        "m",
    ];
    args.extend(SMALL);
    ok(tmp.path(), &args);
    let saved = load_model(tmp.path().join("m/model.bin")).unwrap();
    let records = load_pairs(tmp.path().join("data/train.tsv"), false).unwrap();
    let fresh = init_model(
        saved.config().clone(),
        records.iter().flat_map(|r| [r.a.as_str(), r.b.as_str()]),
    )
    .unwrap();
    assert_eq!(saved.params(), fresh.params());
    assert_eq!(saved.vocab(), fresh.vocab());
}

#[test]
fn diverging_training_fails() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--size", "50", "--out", "data"]);
    let mut args = vec![
        "train",
        "--data",
        "data/train.tsv",
        "--lr",
        "1e300",
        "--out",
        "m",
    ];
    args.extend(SMALL);
    let out = run(tmp.path(), &args);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn unreadable_data_fails() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["train", "--data", "missing.tsv"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("missing.tsv"));
}

#[test]
fn exact_mode_needs_shift() {
    let shifted = setup(&["--shift", "reference"]);
    let args = [
        "attribute",
        "--model",
        "model",
        "--a",
        "a dog",
        "--b",
        "a cat",
        "--mode",
        "exact",
        "--steps",
        "3",
        "--out",
        "a",
    ];
    ok(shifted.path(), &args);
    let rec = record(&shifted.path().join("a"), "attribution.json");
    assert_eq!(
        (rec.ref_sim_a, rec.ref_sim_b, rec.ref_term),
        (0.0, 0.0, 0.0)
    );

    let plain = setup(&[]);
    let out = run(plain.path(), &args);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("exact mode"), "{}", stderr(&out));
}

#[test]
fn identical_sentences_score_one() {
    let tmp = setup(&[]);
    ok(
        tmp.path(),
        &[
            "attribute",
            "--model",
            "model",
            "--a",
            "the dog sat.",
            "--b",
            "the dog sat.",
            "--mode",
            "approximate",
            "--steps",
            "5",
            "--out",
            "a",
        ],
    );
    let rec = record(&tmp.path().join("a"), "attribution.json");
    assert!((rec.s - 1.0).abs() < 1e-6);
    assert!(rec.recompute_error() - rec.attribution_error < 1e-12);
}

#[test]
fn linear_model_is_exact_in_one_step() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["synth", "--size", "50", "--out", "data"]);
    ok(
        tmp.path(),
        &[
            "train",
            "--data",
            "data/train.tsv",
            "--layers",
            "0",
            "--dim",
            "8",
            "--heads",
            "1",
            "--shift",
            "reference",
            "--head",
            "dot",
            "--epochs",
            "1",
            "--out",
            "lin",
        ],
    );
    ok(
        tmp.path(),
        &[
            "attribute",
            "--model",
            "lin",
            "--pairs",
            "data/dev.tsv",
            "--steps",
            "1",
            "--layer",
            "pooled",
            "--out",
            "a",
        ],
    );
    let n = load_pairs(tmp.path().join("data/dev.tsv"), false)
        .unwrap()
        .len();
    for i in 0..n {
        let rec = record(&tmp.path().join("a"), &format!("pair-{i:03}.json"));
        assert!(
            rec.attribution_error < 1e-10,
            "pair {i}: {}",
            rec.attribution_error
        );
    }
}

#[test]
fn attribute_outputs_are_byte_identical() {
    let tmp = setup(&["--shift", "reference"]);
    for out in ["a", "b"] {
        ok(
            tmp.path(),
            &[
                "attribute",
                "--model",
                "model/model.bin",
                "--a",
                "the dog ran.",
                "--b",
                "a cat sat.",
                "--reduce",
                "word",
                "--steps",
                "4",
                "--out",
                out,
            ],
        );
    }
    for f in ["attribution.json", "attribution.csv", "attribution.svg"] {
        assert_eq!(
            read(&tmp.path().join("a"), f),
            read(&tmp.path().join("b"), f),
            "{f}"
        );
    }
    let svg = String::from_utf8(read(&tmp.path().join("a"), "attribution.svg")).unwrap();
    assert!(svg.contains("<svg"));
}

#[test]
fn output_directory_from_environment() {
    let tmp = setup(&[]);
    let out = Command::new(env!("CARGO_BIN_EXE_siamattr"))
        .current_dir(tmp.path())
        .env("SIAMATTR_OUT", "from-env")
        .args([
            "attribute",
            "--model",
            "model",
            "--a",
            "a",
            "--b",
            "b",
            "--steps",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("from-env/attribution.json").exists());
}

#[test]
fn adjectives_default_to_bundled_triplets() {
    let tmp = setup(&["--shift", "reference"]);
    ok(
        tmp.path(),
        &[
            "probe",
            "adjectives",
            "--model",
            "model/",
            "--steps",
            "3",
            "--out",
            "p",
        ],
    );
    let r = report(&tmp.path().join("p"), "adjectives.json");
    assert_eq!(r.records.len(), 23);
    verify_report(&r).unwrap();
    assert!(tmp.path().join("p/adjectives-synonym_cells.csv").exists());
}

#[test]
fn lexical_echoes_min_count() {
    let tmp = setup(&[]);
    ok(
        tmp.path(),
        &[
            "probe",
            "lexical",
            "--model",
            "model",
            "--data",
            "data/dev.tsv",
            "--min-count",
            "30",
            "--steps",
            "3",
            "--out",
            "p",
        ],
    );
    let r = report(&tmp.path().join("p"), "lexical.json");
    let params: LexicalParams = r.parameters_as().unwrap();
    assert_eq!(params.min_count, 30);
}

#[test]
fn self_agreement_is_all_ones() {
    let tmp = setup(&["--shift", "reference"]);
    ok(
        tmp.path(),
        &[
            "probe",
            "agreement",
            "--a",
            "model",
            "--b",
            "model",
            "--data",
            "data/dev.tsv",
            "--steps",
            "3",
            "--out",
            "p",
        ],
    );
    let r = report(&tmp.path().join("p"), "agreement.json");
    for rec in r.records_as::<AgreementRecord>().unwrap() {
        for l in rec.layers {
            if let Some(s) = l.spearman {
                assert_eq!(s, 1.0);
            }
            assert!(l.top_k.iter().all(|t| t.jaccard == 1.0));
        }
    }
}

#[test]
fn probes_rerun_byte_identically() {
    let tmp = setup(&["--shift", "reference"]);
    for out in ["p1", "p2"] {
        ok(
            tmp.path(),
            &[
                "probe",
                "negation",
                "--model",
                "model",
                "--sentences",
                "data/negation.txt",
                "--steps",
                "3",
                "--out",
                out,
            ],
        );
        ok(
            tmp.path(),
            &[
                "probe",
                "posneg",
                "--model",
                "model",
                "--data",
                "data/dev.tsv",
                "--steps",
                "3",
                "--out",
                out,
            ],
        );
        ok(
            tmp.path(),
            &[
                "probe",
                "reference",
                "--model",
                "model",
                "--data",
                "data/dev.tsv",
                "--out",
                out,
            ],
        );
    }
    for f in ["negation.json", "posneg.json", "reference.json"] {
        assert_eq!(
            read(&tmp.path().join("p1"), f),
            read(&tmp.path().join("p2"), f),
            "{f}"
        );
    }
}

#[test]
fn syntactic_requires_role_file() {
    let tmp = setup(&[]);
    let out = run(
        tmp.path(),
        &[
            "probe",
            "syntactic",
            "--model",
            "model",
            "--data",
            "data/dev.tsv",
        ],
    );
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--roles"));

    let roles: PathBuf = tmp.path().join("roles.txt");
    std::fs::write(&roles, "the|dog|sat|.\tdet|nsubj|root|punct\n").unwrap();
    std::fs::write(
        tmp.path().join("pairs.tsv"),
        "the dog sat.\tthe dog sat.\t1\n",
    )
    .unwrap();
    ok(
        tmp.path(),
        &[
            "probe",
            "syntactic",
            "--model",
            "model",
            "--data",
            "pairs.tsv",
            "--roles",
            "roles.txt",
            "--steps",
            "2",
            "--out",
            "p",
        ],
    );
    verify_report(&report(&tmp.path().join("p"), "syntactic.json")).unwrap();
}

#[test]
fn unknown_flags_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["synth", "--bogus"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--bogus"));
}
