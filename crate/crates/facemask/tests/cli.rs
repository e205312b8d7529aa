//! CLI contract tests: exit codes are exactly 0 (success, help, version),
//! 1 (usage errors), 2 (runtime errors); diagnostics land on the right
//! stream; every artifact the binary writes is re-readable by its loader.

use std::fs;
use std::process::{Command, Output};

use facemask::backbone::EmbeddingStore;
use facemask::dataset::{load_manifest, DatasetManifest, Label, ManifestRecord, Split};
use facemask::image::{decode_image, encode_image, ImageBuffer};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facemask"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no exit code")
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "usage text missing: {stderr}");
}

#[test]
fn help_and_version_exit_zero_on_stdout() {
    for args in [&["--help"][..], &["train", "--help"][..], &["--version"][..]] {
        let out = run(args);
        assert_eq!(code(&out), 0, "{args:?}");
        assert!(!out.stdout.is_empty(), "{args:?} wrote nothing to stdout");
        assert!(out.stderr.is_empty(), "{args:?} wrote to stderr");
    }
    let help = run(&["--help"]);
    let text = String::from_utf8_lossy(&help.stdout);
    for name in ["augment", "train", "eval", "infer", "export-embeddings-template"] {
        assert!(text.contains(name), "help does not list {name}");
    }
}

#[test]
fn bad_invocations_are_usage_errors() {
    let cases: &[&[&str]] = &[
        &["frobnicate"],
        &["train", "--manifest"],
        &["train", "--out-dir", "x"],
        &["eval", "--split", "bogus"],
        &["augment", "--no-such-flag"],
        &[
            "train",
            "--manifest",
            "m.csv",
            "--backbone",
            "embedding",
            "--out-dir",
            "x",
        ],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty(), "{args:?} left stderr empty");
    }
}

#[test]
fn runtime_failures_exit_two_with_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"not a checkpoint").unwrap();

    let cases: &[&[&str]] = &[
        &[
            "augment",
            "--manifest",
            missing.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        &[
            "train",
            "--manifest",
            missing.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        &[
            "eval",
            "--manifest",
            missing.to_str().unwrap(),
            "--checkpoint",
            garbage.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        &[
            "infer",
            "--boxes",
            missing.to_str().unwrap(),
            "--checkpoint",
            garbage.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.starts_with("error:"), "{args:?} stderr: {stderr}");
    }
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.ppm");
    encode_image(&ImageBuffer::filled(8, 8, 3, 120).unwrap(), &img).unwrap();
    let manifest = dir.path().join("manifest.csv");
    fs::write(
        &manifest,
        format!("path,label,split\n{},mask,test\n", img.to_str().unwrap()),
    )
    .unwrap();
    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"FMDHEADX????").unwrap();

    let out = run(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        garbage.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn augment_artifacts_are_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    for (i, split) in [(0, Split::Train), (1, Split::Test)] {
        let path = dir.path().join(format!("src_{i}.ppm"));
        encode_image(&ImageBuffer::filled(16, 12, 3, 90 + 40 * i).unwrap(), &path).unwrap();
        records.push(ManifestRecord {
            path: path.to_str().unwrap().to_string(),
            label: if i == 0 { Label::Mask } else { Label::NoMask },
            split,
        });
    }
    facemask::dataset::save_manifest(
        &DatasetManifest::new(records).unwrap(),
        dir.path().join("manifest.csv"),
    )
    .unwrap();

    let out_dir = dir.path().join("augmented");
    let cfg = dir.path().join("aug.json");
    fs::write(
        &cfg,
        r#"{
  "transforms": [
    {"kind": "flip_h", "range": [0.0, 0.0]},
    {"kind": "rotate", "range": [-10.0, 10.0]}
  ],
  "copies_per_image": 2,
  "seed": 0,
  "target_width": 32,
  "target_height": 32,
  "grayscale_output": false
}"#,
    )
    .unwrap();
    let out = run(&[
        "augment",
        "--manifest",
        dir.path().join("manifest.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = load_manifest(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.len(), 2 + 2);
    assert_eq!(manifest.count(Split::Train), 3);
    for rec in manifest.records() {
        let img = decode_image(&rec.path).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32), "{}", rec.path);
    }
}

#[test]
fn exported_template_is_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "export-embeddings-template",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let store = EmbeddingStore::load(dir.path().join("embeddings_template.bin")).unwrap();
    assert!(store.is_empty());
    assert_eq!(store.dims(), (5, 5, 2048));
    let notes = fs::read_to_string(dir.path().join("EMBEDDINGS_EXPORT.md")).unwrap();
    assert!(notes.contains("FMDEMB1"));
}
