use std::path::Path;
use std::process::Command;

use deepgrok::dataset::{
    encode_idx_images, encode_idx_labels, synthetic_digits, DATA_DIR_ENV, TEST_IMAGES, TEST_LABELS,
    TRAIN_IMAGES, TRAIN_LABELS,
};
use deepgrok::runner::{MetricsFile, METRICS_FILE};

fn write_fake_mnist(dir: &Path) {
    let data = synthetic_digits(300, 100, 9);
    for (set, images, labels) in [
        (&data.train, TRAIN_IMAGES, TRAIN_LABELS),
        (&data.test, TEST_IMAGES, TEST_LABELS),
    ] {
        std::fs::write(
            dir.join(images),
            encode_idx_images(set.inputs(), 28, 28).unwrap(),
        )
        .unwrap();
        std::fs::write(dir.join(labels), encode_idx_labels(set.labels())).unwrap();
    }
}

fn deepgrok() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepgrok"))
}

#[test]
fn run_analyze_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("mnist");
    std::fs::create_dir(&data).unwrap();
    write_fake_mnist(&data);
    let config = tmp.path().join("base.toml");
    std::fs::write(
        &config,
        "depth = 3\nwidth = 8\nn_train = 200\ntotal_steps = 500\n",
    )
    .unwrap();

    let out = tmp.path().join("run");
    let status = deepgrok()
        .args(["run", "--config"])
        .arg(&config)
        .args([
            "--width",
            "12",
            "--steps",
            "40",
            "--rank-batch",
            "50",
            "--out-dir",
        ])
        .arg(&out)
        .env(DATA_DIR_ENV, &data)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = out.join(METRICS_FILE);
    let file = MetricsFile::read(&metrics).unwrap();
    // file values kept, flags win
    assert_eq!(
        (
            file.config().depth,
            file.config().width,
            file.config().total_steps
        ),
        (3, 12, 40)
    );
    assert!(file.is_complete());

    let analyzed = deepgrok().arg("analyze").arg(&metrics).output().unwrap();
    assert!(analyzed.status.success());
    let table = String::from_utf8(analyzed.stdout).unwrap();
    assert!(table.starts_with("run\tdigest\tregime"));
    assert_eq!(table.lines().count(), 2);
    assert!(out.join("phase.json").exists());

    let plotted = deepgrok()
        .arg("plot")
        .args([&metrics, &metrics])
        .output()
        .unwrap();
    assert!(plotted.status.success());
    assert!(out.join("figure.svg").exists());
    assert!(out.join("norm-comparison.svg").exists());
}

#[test]
fn bad_invocations_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let no_data = deepgrok()
        .args(["run", "--steps", "10", "--out-dir"])
        .arg(tmp.path())
        .env_remove(DATA_DIR_ENV)
        .output()
        .unwrap();
    assert!(!no_data.status.success());
    let bad_preset = deepgrok()
        .args(["sweep", "nonsense", "--data-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!bad_preset.status.success());
    let bad_alpha = deepgrok().args(["run", "--alpha", "-1"]).output().unwrap();
    assert!(!bad_alpha.status.success());
}
