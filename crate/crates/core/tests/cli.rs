use std::path::Path;
use std::process::{Command, Output};

fn flowood(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowood"))
        .current_dir(dir)
        .env_remove("FLOWOOD_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = flowood(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const TINY: &[&str] = &[
    "--epochs", "1", "--batch-size", "4", "--image-size", "4", "--levels", "2", "--flows-per-level", "1",
    "--hidden-channels", "4",
];

fn trained(dir: &Path) {
    ok(dir, &["synth", "--kind", "smooth", "-n", "8", "--image-size", "4", "--out", "data"]);
    let mut args = vec!["train", "--data", "data", "--out", "m.ckpt"];
    args.extend(TINY);
    ok(dir, &args);
}

#[test]
fn roc_worked_example() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "in.csv", "id,split,nll_nats,bpd\na,in,-3,0\nb,in,-2,0\nc,in,-1,0\n");
    write(t.path(), "out.csv", "id,split,nll_nats,bpd\nd,ood,-2.5,0\ne,ood,-0.5,0\n");
    let stdout = ok(t.path(), &["roc", "--in", "in.csv", "--out", "out.csv", "--report", "roc.csv"]);
    assert_eq!(stdout.trim(), "auc 0.6667");
    let report = std::fs::read_to_string(t.path().join("roc.csv")).unwrap();
    assert!(report.contains("threshold,fpr,tpr"));
}

#[test]
fn malformed_scores_name_the_line() {
    let t = tempfile::tempdir().unwrap();
    write(t.path(), "in.csv", "id,split,nll_nats,bpd\na,in,1,0\nb,in,oops,0\n");
    write(t.path(), "out.csv", "id,split,nll_nats,bpd\nd,ood,2,0\n");
    let out = flowood(t.path(), &["roc", "--in", "in.csv", "--out", "out.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn missing_data_directory_exits_2() {
    let t = tempfile::tempdir().unwrap();
    let out = flowood(t.path(), &["train", "--data", "no_such_dir", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no_such_dir"), "{}", stderr(&out));
    assert!(!t.path().join("m.ckpt").exists());
}

#[test]
fn usage_errors_exit_2() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(flowood(t.path(), &["train"]).status.code(), Some(2));
    assert_eq!(flowood(t.path(), &["frobnicate"]).status.code(), Some(2));
    let out = flowood(t.path(), &["train", "--data", ".", "--out", "m", "--model", "glow", "--level", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_image_is_skipped_with_warning() {
    let t = tempfile::tempdir().unwrap();
    trained(t.path());
    write(&t.path().join("data"), "broken.png", "not a png");
    let out = flowood(t.path(), &["score", "--ckpt", "m.ckpt", "--data", "data", "--out", "s"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("broken.png"));
    let scores = std::fs::read_to_string(t.path().join("s/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 9);
    assert!(!scores.contains("broken"));
}

#[test]
fn zero_sigma_equals_no_noise() {
    let t = tempfile::tempdir().unwrap();
    trained(t.path());
    ok(t.path(), &["score", "--ckpt", "m.ckpt", "--data", "data", "--out", "plain"]);
    ok(t.path(), &["score", "--ckpt", "m.ckpt", "--data", "data", "--sigma", "0", "--out", "zero"]);
    ok(t.path(), &["score", "--ckpt", "m.ckpt", "--data", "data", "--sigma", "0.2", "--out", "noisy"]);
    let read = |d: &str| std::fs::read(t.path().join(d).join("scores.csv")).unwrap();
    assert_eq!(read("plain"), read("zero"));
    assert_ne!(read("plain"), read("noisy"));
}

#[test]
fn resume_continues_to_requested_epochs() {
    let t = tempfile::tempdir().unwrap();
    trained(t.path());
    ok(t.path(), &["train", "--data", "data", "--resume", "m.ckpt", "--epochs", "2", "--out", "m2.ckpt"]);
    let history = std::fs::read_to_string(t.path().join("m2.ckpt.history.csv")).unwrap();
    let epochs: Vec<&str> = history.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(epochs.contains(&"1") && epochs.contains(&"2"), "{history}");
}

#[test]
fn sample_writes_pngs() {
    let t = tempfile::tempdir().unwrap();
    trained(t.path());
    ok(t.path(), &["sample", "--ckpt", "m.ckpt", "-n", "2", "--out", "samples"]);
    for i in 0..2 {
        assert!(t.path().join(format!("samples/sample_{i:04}.png")).exists());
    }
}
