use std::path::Path;
use std::process::{Command, Output};

fn mpvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpvit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_lines<T: std::fmt::Display>(path: &Path, values: &[T]) {
    std::fs::write(path, values.iter().map(|v| format!("{v}\n")).collect::<String>()).unwrap();
}

const SMALL_MODEL: &str = "embed_dim=8\nnum_heads=2\nfusion_heads=2\ndepth=1\nepochs=2\nbatch_size=2\nlr=0.001\n";

fn synth_small(dir: &Path) {
    let o = mpvit(&["synth", "--seed", "3", "--out", s(dir), "--train", "6", "--val", "4", "--test", "4", "--ratio", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_rejects_single_class_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpvit(&["synth", "--out", s(dir.path()), "--train", "4", "--ratio", "0"]);
    assert_eq!(code(&o), 2);
    let o = mpvit(&["synth", "--out", s(dir.path()), "--drop-prob", "1.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_without_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let o = mpvit(&["train", "--manifest", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn base_variant_banner() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let o = mpvit(&["train", "--variant", "base", "--manifest", s(&missing), "--out", s(dir.path())]);
    assert!(stdout(&o).contains("(embed_dim, heads) = (768, 12)"), "{}", stdout(&o));
    let o = mpvit(&["train", "--variant", "huge"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_rejects_bad_checkpoint_magic() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"JUNKJUNKJUNK").unwrap();
    let manifest = dir.path().join("manifest.tsv");
    let o = mpvit(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_unknown_variant_and_impossible_tolerance() {
    assert_eq!(code(&mpvit(&["gradcheck", "--variant", "huge"])), 2);
    let o = mpvit(&["gradcheck", "--tolerance", "1e-12", "--per-tensor", "1"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn compare_fixture_and_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    // 5 cases only A gets right, 15 only B, 10 both right
    let labels = vec![1u8; 30];
    let mut a = vec![0.9; 5];
    a.extend(vec![0.1; 15]);
    a.extend(vec![0.9; 10]);
    let mut b = vec![0.1; 5];
    b.extend(vec![0.9; 15]);
    b.extend(vec![0.9; 10]);
    write_lines(&p("a.txt"), &a);
    write_lines(&p("b.txt"), &b);
    write_lines(&p("y.txt"), &labels);
    let o = mpvit(&["compare", "--preds-a", s(&p("a.txt")), "--preds-b", s(&p("b.txt")), "--labels", s(&p("y.txt")), "--out", s(&p("r.txt"))]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("b=5") && out.contains("c=15"), "{out}");
    let field = |k: &str| -> f64 {
        out.lines().find_map(|l| l.strip_prefix(&format!("{k}="))).unwrap().parse().unwrap()
    };
    assert!((field("statistic") - 4.05).abs() < 1e-12);
    assert!((field("p_value") - 0.0442).abs() < 5e-4);
    assert_eq!(std::fs::read_to_string(p("r.txt")).unwrap(), out);

    let o = mpvit(&["compare", "--preds-a", s(&p("a.txt")), "--preds-b", s(&p("a.txt")), "--labels", s(&p("y.txt"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("p_value=1\n"), "{}", stdout(&o));

    write_lines(&p("short.txt"), &[0.5, 0.5]);
    let o = mpvit(&["compare", "--preds-a", s(&p("short.txt")), "--preds-b", s(&p("a.txt")), "--labels", s(&p("y.txt"))]);
    assert_eq!(code(&o), 2);
    let o = mpvit(&["compare", "--preds-a", s(&p("a.txt")), "--preds-b", s(&p("b.txt")), "--labels", s(&p("y.txt")), "--method", "magic"]);
    assert_eq!(code(&o), 2);
}

fn pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let data = root.join("data");
    synth_small(&data);
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, format!("{SMALL_MODEL}manifest=data/manifest.tsv\nout=run\n")).unwrap();
    let o = mpvit(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = std::fs::read_dir(root.join("run"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "mpvt"))
        .expect("checkpoint written");
    let report = root.join("report.txt");
    let o = mpvit(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&data.join("manifest.tsv")),
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    ["data/manifest.tsv", "run/metrics.tsv", "report.txt"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(root.join(f)).unwrap()))
        .collect()
}

#[test]
fn seeded_workflow_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = pipeline(a.path());
    let rb = pipeline(b.path());
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        assert!(!x.is_empty(), "{name} empty");
        assert_eq!(x, y, "{name} differs");
    }
    let metrics = String::from_utf8(ra[1].1.clone()).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate=1\n").unwrap();
    assert_eq!(code(&mpvit(&["train", "--config", s(&cfg)])), 2);
}
