//! End-to-end checks of the `anonyvid` binary: exit codes, determinism of
//! dataset generation, sweep resumability, and the plot/record contracts.
//! Training itself is exercised by the core crate's test suite; these tests
//! stay on the fast paths that fail before any heavy work starts.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anonyvid"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const TINY_DATASET_TOML: &str = r#"
[dataset]
k_t = 2
k_b = 3
t = 2
h = 8
w = 8
c = 3
privacy_region_fraction = 0.25
correlation = 0.25
train_samples = 12
eval_samples = 6
mode = "identity"
"#;

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

#[test]
fn generate_is_deterministic_and_fingerprinted() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    write(&cfg, TINY_DATASET_TOML);
    let out_a = dir.path().join("a.avds");
    let out_b = dir.path().join("b.avds");
    for out in [&out_a, &out_b] {
        let r = bin()
            .args(["generate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(code(&r), 0, "stderr: {}", String::from_utf8_lossy(&r.stderr));
        let stdout = String::from_utf8_lossy(&r.stdout);
        assert!(stdout.contains("fingerprint"), "stdout: {stdout}");
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "same config + seed must produce identical bytes");
    assert_eq!(&a[..4], b"AVDS", "dataset container magic");
}

#[test]
fn missing_dataset_section_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("empty.toml");
    write(&cfg, "[train]\nseed = 1\n");
    let r = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x.avds"))
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("[dataset]"));
}

#[test]
fn malformed_config_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("broken.toml");
    write(&cfg, "[dataset\nk_t = ");
    let r = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x.avds"))
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
}

#[test]
fn train_mode_mismatch_fails_before_training() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    write(&cfg, TINY_DATASET_TOML);
    let ds = dir.path().join("tiny.avds");
    let r = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ds)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);

    // identity-labeled dataset, attribute-mode request: must exit 1 fast
    let r = bin()
        .args(["train", "--mode", "attributes", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&ds)
        .arg("--out-dir")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("identity-labeled"));

    // crossds without a companion dataset: also a usage error
    let r = bin()
        .args(["train", "--mode", "crossds", "--skip-calibration", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&ds)
        .arg("--out-dir")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("--dataset-b"));
}

#[test]
fn eval_without_manifest_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    write(&cfg, TINY_DATASET_TOML);
    let ds = dir.path().join("tiny.avds");
    let r = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ds)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    let r = bin()
        .args(["eval", "--checkpoint-dir"])
        .arg(dir.path().join("nonexistent"))
        .arg("--dataset")
        .arg(&ds)
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("manifest"));
}

fn record_line(method: &str, s: Option<u32>, seed: u64, a_t: f64, privacy: f64) -> String {
    let s = s.map(|v| v.to_string()).unwrap_or_else(|| "null".into());
    format!(
        r#"{{"method":"{method}","s":{s},"m":null,"restarting":null,"seed":{seed},"a_t":{a_t},"privacy_metric":{privacy},"metric_kind":"accuracy","chance_level":0.3333333333333333}}"#
    )
}

#[test]
fn plot_renders_png_from_records() {
    let dir = TempDir::new().unwrap();
    let records = dir.path().join("records.jsonl");
    let lines = [
        record_line("raw", None, 1, 0.99, 0.95),
        record_line("downsample", Some(2), 1, 0.95, 0.80),
        record_line("downsample", Some(4), 1, 0.85, 0.60),
    ]
    .join("\n");
    write(&records, &lines);
    let png = dir.path().join("tradeoff.png");
    let r = bin()
        .args(["plot", "--records"])
        .arg(&records)
        .arg("--out")
        .arg(&png)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0, "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n", "PNG signature");
}

#[test]
fn sweep_skips_configurations_already_recorded() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    write(
        &cfg,
        &format!(
            "{TINY_DATASET_TOML}\n[sweep]\nmethods = [\"raw\", \"downsample\"]\ns_values = [2]\nseeds = [5]\n"
        ),
    );
    let ds = dir.path().join("tiny.avds");
    let r = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ds)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);

    // pre-record every planned point: the sweep must skip all heavy work,
    // rebuild the table/plot, and exit 0
    let out_dir = dir.path().join("sweep");
    std::fs::create_dir_all(&out_dir).unwrap();
    let lines = [
        record_line("raw", None, 5, 0.99, 0.95),
        record_line("downsample", Some(2), 5, 0.95, 0.80),
    ]
    .join("\n");
    write(&out_dir.join("records.jsonl"), &lines);

    let r = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&ds)
        .arg("--out-dir")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0, "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out_dir.join("records.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,s,M,restarting,seed,A_T,privacy_metric,metric_kind,chance_level"
    );
    assert_eq!(lines.count(), 2, "exactly the pre-recorded points");
    assert!(out_dir.join("tradeoff.png").exists());
}

#[test]
fn unknown_sweep_method_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.toml");
    write(
        &cfg,
        &format!("{TINY_DATASET_TOML}\n[sweep]\nmethods = [\"telepathy\"]\n"),
    );
    let ds = dir.path().join("tiny.avds");
    let r = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ds)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    let r = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&ds)
        .arg("--out-dir")
        .arg(dir.path().join("sweep"))
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("telepathy"));
}
