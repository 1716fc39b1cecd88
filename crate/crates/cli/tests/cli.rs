use std::path::Path;
use std::process::{Command, Output};

fn evdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evdepth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = evdepth(args);
    assert!(
        out.status.success(),
        "evdepth {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TOY_CONFIG: &str = r#"{
  "epochs": 1, "batch_size": 4, "lr_initial": 1e-4, "lr_final": 1e-5, "lr_drop_epoch": 0,
  "betas": [0.9, 0.999], "scales": 2, "d_min": 0.5, "d_max": 20.0, "profile": "none",
  "seed": 0, "ablation": "cross-modal", "width_divisor": 8
}"#;

#[test]
fn synth_train_infer_evaluate_plot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["--seed", "3", "synth", "--out", s(&data), "--frames", "16", "--test-frames", "8"]);
    assert!(data.join("train").is_dir() && data.join("test").is_dir());

    let cfg = dir.path().join("train.json");
    std::fs::write(&cfg, TOY_CONFIG).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--deterministic",
            "--seed",
            "9",
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--max-steps",
            "2",
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let log = |d: &Path| std::fs::read_to_string(d.join("train_log.jsonl")).unwrap();
    assert_eq!(log(&a), log(&b));
    assert_eq!(log(&a).lines().count(), 2);

    let ckpt = a.join("last.safetensors");

    let inf = dir.path().join("infer");
    let stdout = ok(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "--events",
        s(&data.join("test")),
        "--out",
        s(&inf),
        "--colormap",
    ]);
    assert!(stdout.starts_with("8 depth maps"), "{stdout}");
    assert!(inf.join("timing.json").is_file());

    let ev = dir.path().join("eval");
    let table = ok(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out",
        s(&ev),
        "--cutoffs",
        "10,20",
        "--samples",
        "2",
    ]);
    assert!(table.starts_with("alignment: median"), "{table}");
    assert!(ev.join("metrics.json").is_file() && ev.join("metrics.txt").is_file());

    let plots = dir.path().join("plots");
    let msg = ok(&["plot", s(&a), s(&ev), "--out", s(&plots)]);
    assert_eq!(msg.trim(), "3 images");
    assert!(plots.join("loss_curve.png").is_file());
}

#[test]
fn voxelize_writes_one_grid_per_window() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("seq");
    ok(&["synth", "--out", s(&data), "--frames", "6"]);
    let vox = dir.path().join("vox");
    let msg = ok(&[
        "voxelize",
        "--events",
        s(&data.join("events.bin")),
        "--timestamps",
        s(&data.join("timestamps.txt")),
        "--out",
        s(&vox),
        "--bins",
        "3",
    ]);
    assert!(msg.starts_with("6 windows"), "{msg}");
    for k in 0..6 {
        assert!(vox.join(format!("{k:06}.bin")).is_file());
    }
    assert!(!vox.join("000006.bin").exists());
}

#[test]
fn errors_print_a_category_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = evdepth(&[
        "evaluate",
        "--checkpoint",
        s(&dir.path().join("missing.safetensors")),
        "--data",
        s(dir.path()),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().last().unwrap();
    assert!(line.starts_with("error[io]: "), "{line}");
    assert!(line.contains("missing.safetensors"));

    let out = evdepth(&["evaluate", "--checkpoint", "x", "--data", "y", "--out", "z", "--cutoffs=-3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("error["));
}

#[test]
fn plot_with_no_inputs_does_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plots");
    assert_eq!(ok(&["plot", "--out", s(&out)]).trim(), "0 images");
    assert!(!out.exists());
}
