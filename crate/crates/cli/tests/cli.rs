use std::path::Path;
use std::process::{Command, Output};

fn noma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noma")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn graymap_prints_table() {
    let out = noma(&["graymap", "--order", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "bits,re,im");
    assert_eq!(lines.len(), 5);
}

#[test]
fn usage_and_input_errors_exit_with_one() {
    assert_eq!(noma(&["bogus"]).status.code(), Some(1));
    assert_eq!(noma(&["graymap", "--order", "8"]).status.code(), Some(1));
    assert_eq!(noma(&["--help"]).status.code(), Some(0));
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let labeled = dir.path().join("labeled.jsonl");
    let eval = dir.path().join("eval.csv");
    let ecdf = dir.path().join("ecdf.csv");

    let gen = noma(&["gen", "--nt", "2,3", "--count", "3", "--seed", "5", "--out", s(&data)]);
    assert_eq!(gen.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 6);

    let label = noma(&["label", "--data", s(&data), "--starts", "2", "--out", s(&labeled)]);
    assert_eq!(label.status.code(), Some(0), "{}", String::from_utf8_lossy(&label.stderr));

    let ev = noma(&[
        "eval", "--data", s(&labeled), "--techniques", "CO,ZFBF", "--out", s(&eval),
    ]);
    assert_eq!(ev.status.code(), Some(0), "{}", String::from_utf8_lossy(&ev.stderr));
    let csv = std::fs::read_to_string(&eval).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    assert!(csv.lines().skip(1).all(|l| l.contains("analytic")));

    assert_eq!(noma(&["ecdf", "--data", s(&eval), "--out", s(&ecdf)]).status.code(), Some(0));
    assert!(std::fs::read_to_string(&ecdf).unwrap().contains(",all,"));

    let nn = noma(&["eval", "--data", s(&labeled), "--techniques", "NN", "--out", s(&eval)]);
    assert_eq!(nn.status.code(), Some(1));
}

#[test]
fn validate_passes_on_small_run() {
    let out = noma(&["validate", "--count", "2", "--symbols", "50000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
