use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const CONFIG: &str = r#"{"vocab": {"salient": {"L": 2}}}"#;
const SPEC: &str = r#"{"length": 90, "loops": [[0, 45]], "revisit_span": 24, "label_min_gap": 20}"#;

fn hgi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hgi(args);
    assert!(
        out.status.success(),
        "hgi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a sequence, extracts features and trains both vocabularies.
fn prepare(root: &Path) {
    std::fs::write(root.join("spec.json"), SPEC).unwrap();
    std::fs::write(root.join("cfg.json"), CONFIG).unwrap();
    let seq = root.join("seq");
    ok(&["synth", "--spec", s(&root.join("spec.json")), "--out", s(&seq)]);
    ok(&[
        "extract", "--input", s(&seq), "--layout", "kitti_like", "--backend", "fallback", "--every-third", "--out",
        s(&root.join("feat")),
    ]);
    for (family, out) in [("salient", "s.hgiv"), ("geometric", "g.hgiv")] {
        ok(&[
            "train-vocab", "--features", s(&root.join("feat")), "--family", family, "--config",
            s(&root.join("cfg.json")), "--out", s(&root.join(out)),
        ]);
    }
}

fn detect_args(root: &Path) -> Vec<String> {
    [
        "detect",
        "--features",
        s(&root.join("feat")),
        "--vocab-s",
        s(&root.join("s.hgiv")),
        "--vocab-g",
        s(&root.join("g.hgiv")),
        "--config",
        s(&root.join("cfg.json")),
    ]
    .map(String::from)
    .to_vec()
}

fn rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepare(root);
    assert!(root.join("feat/heatmaps/000001.pgm").is_file());
    assert!(root.join("feat/000001.sal.hgif").is_file());

    let mut args = detect_args(root);
    args.extend(["--timings", "--out", s(&root.join("det.tsv"))].map(String::from));
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&argv);
    let text = std::fs::read_to_string(root.join("det.tsv")).unwrap();
    assert!(text.starts_with("# hgi detections\n"));
    assert!(text.contains("# timing quantize_ms_mean="));
    let pairs: Vec<(u64, u64)> = rows(&text)
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    assert!(!pairs.is_empty());
    for (q, c) in &pairs {
        assert!((45..69).contains(q) && *c < 24, "({q}, {c})");
    }

    let again = ok(&detect_args(root).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(rows(&again), rows(&text));

    let report = ok(&[
        "eval", "--detections", s(&root.join("det.tsv")), "--gt", s(&root.join("seq/poses.txt")), "--r", "0.1",
        "--min-gap", "20", "--tol", "10",
    ]);
    assert!(report.contains("precision=1\n"), "{report}");
    assert!(report.contains("tol=10\n"));

    ok(&["simhist", "--features", s(&root.join("feat")), "--out", s(&root.join("h.csv")), "--bins", "10"]);
    let csv = std::fs::read_to_string(root.join("h.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn detect_through_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepare(root);
    let local = ok(&detect_args(root).iter().map(String::as_str).collect::<Vec<_>>());

    let mut server = Command::new(env!("CARGO_BIN_EXE_hgi"))
        .args(["serve", "--addr", "127.0.0.1:0"])
        .env("RUST_LOG", "warn")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();

    let mut args = detect_args(root);
    args.extend(["--server".to_string(), url]);
    let remote = hgi(&args.iter().map(String::as_str).collect::<Vec<_>>());
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(remote.status.success(), "{}", String::from_utf8_lossy(&remote.stderr));
    assert_eq!(rows(&String::from_utf8(remote.stdout).unwrap()), rows(&local));
}

#[test]
fn empty_feature_directory_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    prepare(root);
    std::fs::create_dir(root.join("empty")).unwrap();
    let mut args = detect_args(root);
    args[2] = s(&root.join("empty")).to_string();
    let out = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.contains("# frames=0 stored=0"));
    assert!(rows(&out).is_empty());
}

#[test]
fn ate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let gt: String = (0..20).map(|i| format!("{i} {} {} 0\n", i as f64, (i as f64 * 0.3).sin())).collect();
    let pred: String = (0..20).map(|i| format!("{i} {} {} 0\n", i as f64 + 1.0, (i as f64 * 0.3).sin())).collect();
    std::fs::write(dir.path().join("gt.txt"), gt).unwrap();
    std::fs::write(dir.path().join("pred.txt"), pred).unwrap();
    let (p, g) = (dir.path().join("pred.txt"), dir.path().join("gt.txt"));
    let raw = ok(&["ate", "--pred", s(&p), "--gt", s(&g), "--align", "false"]);
    assert!(raw.contains("ate_rmse=1\n"), "{raw}");
    let aligned = ok(&["ate", "--pred", s(&p), "--gt", s(&g)]);
    let v: f64 = aligned.lines().find_map(|l| l.strip_prefix("ate_rmse=")).unwrap().parse().unwrap();
    assert!(v < 1e-9);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = hgi(&["extract", "--input", s(&dir.path().join("nope")), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    std::fs::write(dir.path().join("bad.json"), r#"{"fusion": {"s_th": 2}}"#).unwrap();
    let out = hgi(&["detect", "--features", "x", "--vocab-s", "a", "--vocab-g", "b", "--config", s(&dir.path().join("bad.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
