use std::fs;
use std::path::Path;

use graspp::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use graspp::data::{load_image, save_image};
use graspp::{Shape, Tensor};

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("graspp").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: &str, size: &str, seed: &str) {
    let code = cli(&[
        "synth-data",
        "--out-dir",
        p(dir),
        "--count",
        count,
        "--size",
        size,
        "--preset",
        "wide",
        "--seed",
        seed,
    ]);
    assert_eq!(code, EXIT_OK);
}

const SMALL: [&str; 10] = [
    "--width",
    "0.125",
    "--crop",
    "16",
    "--batch-size",
    "2",
    "--epochs",
    "1",
    "--seed",
    "3",
];

#[test]
fn help_version_and_usage_errors() {
    assert_eq!(cli(&["--help"]), EXIT_OK);
    assert_eq!(cli(&["--version"]), EXIT_OK);
    assert_eq!(cli(&["train", "--help"]), EXIT_OK);
    assert_eq!(cli(&[]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(
        cli(&[
            "synth-data",
            "--out-dir",
            "/nonexistent/x",
            "--preset",
            "drizzle"
        ]),
        EXIT_USAGE
    );
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        cli(&[
            "train",
            "--data",
            p(&dir.path().join("none")),
            "--out",
            p(&out)
        ]),
        EXIT_DATA
    );
    assert_eq!(
        cli(&["evaluate", "--data", p(dir.path()), "--report", p(&out)]),
        EXIT_DATA
    );
}

#[test]
fn config_file_and_overrides_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "train.epochs = 3\ntrain.bogus = 1\n").unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    assert_eq!(
        cli(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&out),
            "--config",
            p(&cfg)
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&out),
            "--set",
            "noequals"
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        cli(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&out),
            "--variant",
            "vgg"
        ]),
        EXIT_USAGE
    );
}

#[test]
fn synth_train_derain_evaluate_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "3", "24", "5");
    assert_eq!(fs::read_dir(data.join("rainy")).unwrap().count(), 3);
    assert_eq!(fs::read_dir(data.join("clean")).unwrap().count(), 3);

    let out = dir.path().join("run");
    let mut args = vec![
        "train",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--variant",
        "graspp-gan",
        "--warmup-epochs",
        "0",
    ];
    args.extend(SMALL);
    assert_eq!(cli(&args), EXIT_OK);
    for f in ["config.txt", "steps.log", "epoch-001.ckpt", "latest.ckpt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(out.join("steps.log")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.lines().all(|l| l.contains(" ld=")));

    let latest = out.join("latest.ckpt");
    let resume = [
        "train",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--resume",
        p(&latest),
        "--epochs",
        "2",
    ];
    assert_eq!(cli(&resume), EXIT_OK);
    assert!(out.join("epoch-002.ckpt").exists());
    assert_eq!(
        fs::read_to_string(out.join("steps.log"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    let odd = dir.path().join("odd.png");
    let img = Tensor::from_fn(Shape::new(1, 3, 19, 27), |_, c, y, x| {
        ((c + y + x) % 7) as f32 / 7.0
    });
    save_image(&img, &odd).unwrap();
    let derained = dir.path().join("odd_out.png");
    assert_eq!(
        cli(&[
            "derain",
            "--ckpt",
            p(&latest),
            "--in",
            p(&odd),
            "--out",
            p(&derained)
        ]),
        EXIT_OK
    );
    assert_eq!(load_image(&derained).unwrap().shape(), img.shape());

    let batch = dir.path().join("batch");
    assert_eq!(
        cli(&[
            "derain",
            "--ckpt",
            p(&latest),
            "--in",
            p(&data.join("rainy")),
            "--out",
            p(&batch)
        ]),
        EXIT_OK
    );
    assert_eq!(fs::read_dir(&batch).unwrap().count(), 3);

    let report = dir.path().join("report");
    assert_eq!(
        cli(&[
            "evaluate",
            "--ckpt",
            p(&latest),
            "--data",
            p(&data),
            "--report",
            p(&report)
        ]),
        EXIT_OK
    );
    let kv = fs::read_to_string(report.join("metrics.kv")).unwrap();
    assert_eq!(kv.lines().count(), 3);
    assert!(fs::read_to_string(report.join("metrics.txt"))
        .unwrap()
        .contains("mean"));

    fs::write(data.join("rainy/zz.png"), b"broken").unwrap();
    fs::write(data.join("clean/zz.png"), b"broken").unwrap();
    assert_eq!(
        cli(&["evaluate", "--data", p(&data), "--report", p(&report)]),
        EXIT_DATA
    );

    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"GRSPCKPT garbage").unwrap();
    assert_eq!(
        cli(&[
            "derain",
            "--ckpt",
            p(&bad),
            "--in",
            p(&odd),
            "--out",
            p(&derained)
        ]),
        EXIT_DATA
    );
}

#[test]
fn ablate_reports_three_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "2", "24", "6");
    let out = dir.path().join("ablate");
    let mut args = vec![
        "ablate",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--warmup-epochs",
        "0",
    ];
    args.extend(SMALL);
    assert_eq!(cli(&args), EXIT_OK);
    let table = fs::read_to_string(out.join("ablation.txt")).unwrap();
    let labels: Vec<&str> = table
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .filter(|w| w.starts_with("RASPP") || w.starts_with("GRASPP"))
        .collect();
    assert_eq!(labels, ["RASPP", "GRASPP", "GRASPP-GAN"], "{table}");
    for v in ["raspp", "graspp", "graspp-gan"] {
        assert!(out.join(format!("{v}.ckpt")).exists());
    }
}

#[test]
fn grad_check_passes_on_an_intact_build() {
    assert_eq!(cli(&["grad-check", "--network-coords", "2"]), EXIT_OK);
}
