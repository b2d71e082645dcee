use std::fs;
use std::path::Path;
use std::process::{Command, Output};

#[rustfmt::skip]
const TINY: &[&str] = &[
    "--set", "data.train=8",
    "--set", "data.val=4",
    "--set", "data.size=16",
    "--set", "aug.crop=16",
    "--set", "train.epochs=2",
    "--set", "train.batch=4",
    "--set", "model.channels=4,8,8",
    "--set", "model.d_model=8",
    "--set", "model.decoder=8",
    "--set", "model.aux=4",
    "--set", "cvlr.d=8",
];

fn slrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slrnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--quiet", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    slrnet(&args)
}

#[test]
fn training_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |p: &Path| fs::read(p.join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(
        fs::read(a.join("checkpoints/final.bin")).unwrap(),
        fs::read(b.join("checkpoints/final.bin")).unwrap()
    );
    let csv = String::from_utf8(read(&a)).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn seeds_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train(&a, &["--seed", "1"]).status.success());
    assert!(train(&b, &["--seed", "2"]).status.success());
    assert_ne!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "mvmc.gamma=1.5",
        "train.lr=-1",
        "no.such_key=1",
        "cvlr.k=0",
        "missing-equals",
    ] {
        let o = train(dir.path(), &["--set", bad]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{bad}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let file = dir.path().join("bad.toml");
    fs::write(&file, "[train]\nlr = 0.1\nlr = 0.2\n").unwrap();
    let o = slrnet(&["train", "--config", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_three_and_keeps_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train(&out, &["--set", "train.lr=1e12", "--set", "train.grad_clip=0"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("divergence.txt").exists());
    assert!(out.join("checkpoints/diverged.bin").exists());
}

#[test]
fn config_file_and_resolved_config_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(train(&out, &[]).status.success());
    let resolved = out.join("config.resolved");
    let again = dir.path().join("again");
    let o = slrnet(&[
        "train",
        "--quiet",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(out.join("metrics.csv")).unwrap(),
        fs::read(again.join("metrics.csv")).unwrap()
    );
}

#[test]
fn eval_and_export_read_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(train(&out, &[]).status.success());
    let ckpt = out.join("checkpoints/final.bin");
    let mut args = vec!["eval", "--checkpoint", ckpt.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let o = slrnet(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("mIoU"));

    let masks = dir.path().join("masks");
    let mut args = vec![
        "export-masks",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        masks.to_str().unwrap(),
        "--count",
        "2",
    ];
    args.extend_from_slice(TINY);
    assert!(slrnet(&args).status.success());
    let bytes = fs::read(masks.join("masks/val-001-pred.png")).unwrap();
    let map = slrnet::maskio::decode_mask(&bytes).unwrap();
    assert_eq!((map.height(), map.width()), (16, 16));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(train(&out, &[]).status.success());
    let ckpt = out.join("checkpoints/final.bin");
    let o = slrnet(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn ablate_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "ablate",
        "--out",
        dir.path().to_str().unwrap(),
        "--grid",
        "cvlr.dictionary=shared,separate",
        "--grid",
        "seed=3,4",
    ];
    args.extend_from_slice(TINY);
    // Separate dictionaries need enough columns in the half-scale view.
    args.extend_from_slice(&["--set", "data.size=32", "--set", "aug.crop=32"]);
    let o = slrnet(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn selftest_passes() {
    let o = slrnet(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
