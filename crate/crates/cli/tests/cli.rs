use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qprop"))
        .args(args)
        .output()
        .expect("run qprop")
}

fn sbc(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["sbc", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    qprop(&args)
}

const SMALL: [&str; 8] = [
    "--preset",
    "nonspatial-gaussian",
    "--k",
    "50",
    "--l",
    "20",
    "--method",
    "plugin",
];

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbc(dir.path(), &["--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn invalid_method_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbc(
        dir.path(),
        &["--preset", "gaussian-4-1", "--method", "magic"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sbc_writes_one_row_per_replicate_and_quantity() {
    let dir = tempfile::tempdir().unwrap();
    let o = sbc(dir.path(), &SMALL);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ranks = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    let mut lines = ranks.lines();
    assert_eq!(lines.next(), Some("replicate,quantity,rank,L,p"));
    assert_eq!(lines.count(), 100);
    for f in [
        "summary.json",
        "ecdf_band.csv",
        "manifest.json",
        "timing.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn reruns_and_manifest_replays_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(sbc(a.path(), &SMALL).status.success());
    let mut wide = SMALL.to_vec();
    wide.extend_from_slice(&["--width", "3"]);
    assert!(sbc(b.path(), &wide).status.success());
    let manifest = a.path().join("manifest.json");
    assert!(sbc(c.path(), &["--config", manifest.to_str().unwrap()])
        .status
        .success());
    let reference = outputs(a.path());
    assert_eq!(reference, outputs(b.path()));
    assert_eq!(reference, outputs(c.path()));
}

#[test]
fn illustrate_requires_an_illustration_truth() {
    let dir = tempfile::tempdir().unwrap();
    let o = qprop(&[
        "illustrate",
        "--preset",
        "gaussian-4-1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
