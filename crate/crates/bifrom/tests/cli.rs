//! End-to-end exercises of the command-line interface: staging rules, exit
//! codes, and artifact determinism on a reduced-size configuration.

use std::path::Path;
use std::process::Command;

fn bifrom() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bifrom"))
}

const SMALL_CONFIG: &str = "\
n_interior=15
snap_n1=5
snap_n2=4
ref_n1=7
ref_n2=5
kmeans_k=3
ann_hidden1=16
ann_hidden2=8
ann_epochs_per_round=200
ann_max_rounds=3
";

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

fn run(dir: &Path, config: &Path, args: &[&str]) -> std::process::Output {
    bifrom()
        .arg("--workspace")
        .arg(dir.join("ws"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("BIFROM_SEED")
        .output()
        .expect("binary runs")
}

#[test]
fn staging_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    // Evaluate before anything is built: missing artifact.
    let out = run(dir.path(), &config, &["evaluate", "--method", "global"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // Build before snapshots: missing artifact.
    let out = run(dir.path(), &config, &["build", "--method", "global"]);
    assert_eq!(out.status.code(), Some(4));

    let out = run(dir.path(), &config, &["snapshots"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(dir.path(), &config, &["build", "--method", "global"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(dir.path(), &config, &["evaluate", "--method", "global"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ws/diagram.csv").exists());

    // Plot consumes the diagram.
    let out = run(dir.path(), &config, &["plot"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("ws/diagram.svg").exists());
    assert!(dir.path().join("ws/diagram.txt").exists());

    // Compare requires the reference set.
    let out = run(dir.path(), &config, &["compare"]);
    assert_eq!(out.status.code(), Some(4));
    let out = run(dir.path(), &config, &["reference"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(dir.path(), &config, &["compare"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let errors = std::fs::read_to_string(dir.path().join("ws/errors.csv")).unwrap();
    assert!(errors.starts_with("method,samples,mean_l2,mean_linf\n"));
    assert!(errors.contains("global,20,"));

    // Bad configuration inputs.
    let bad_config = dir.path().join("bad.cfg");
    std::fs::write(&bad_config, "nonsense_key=1\n").unwrap();
    let out = bifrom()
        .arg("--workspace")
        .arg(dir.path().join("ws2"))
        .arg("--config")
        .arg(&bad_config)
        .arg("snapshots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Config-hash mismatch against an existing workspace.
    let other = dir.path().join("other.cfg");
    std::fs::write(&other, format!("{SMALL_CONFIG}seed=5\n")).unwrap();
    let out = run(dir.path(), &other, &["snapshots"]);
    assert_eq!(out.status.code(), Some(2));

    // BIFROM_SEED overrides the seed and therefore the hash.
    let out = bifrom()
        .arg("--workspace")
        .arg(dir.path().join("ws"))
        .arg("--config")
        .arg(&config)
        .arg("snapshots")
        .env("BIFROM_SEED", "123")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "seed override must change the hash");
}

#[test]
fn full_pipeline_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let sequence: Vec<Vec<&str>> = vec![
        vec!["snapshots"],
        vec!["reference"],
        vec!["build", "--method", "global"],
        vec!["build", "--method", "local", "--criterion", "all"],
        vec!["build", "--method", "podnn"],
        vec!["evaluate", "--method", "local", "--criterion", "regression"],
        vec!["compare"],
        vec!["plot"],
    ];

    let mut digests = Vec::new();
    for round in 0..2 {
        let ws = dir.path().join(format!("run{round}"));
        for args in &sequence {
            let out = bifrom()
                .arg("--workspace")
                .arg(&ws)
                .arg("--config")
                .arg(&config)
                .args(args)
                .env_remove("BIFROM_SEED")
                .output()
                .unwrap();
            assert_eq!(
                out.status.code(),
                Some(0),
                "{:?}: {}",
                args,
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let mut names: Vec<String> = std::fs::read_dir(&ws)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != ".lock")
            .collect();
        names.sort();
        let digest: Vec<(String, Vec<u8>)> = names
            .iter()
            .map(|n| (n.clone(), std::fs::read(ws.join(n)).unwrap()))
            .collect();
        digests.push(digest);
    }
    assert_eq!(
        digests[0].len(),
        digests[1].len(),
        "run directories differ in artifact count"
    );
    for (a, b) in digests[0].iter().zip(&digests[1]) {
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1, "artifact {} differs between reruns", a.0);
    }
}

#[test]
fn grid_flags_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.cfg");
    std::fs::write(&config, "n_interior=15\n").unwrap();

    // The study-scale sampling: 8 points in mu1 by 9 in mu2 = 72 columns.
    let ws = dir.path().join("ws72");
    let out = bifrom()
        .arg("--workspace")
        .arg(&ws)
        .arg("--config")
        .arg(&config)
        .args(["snapshots", "--n1", "8", "--n2", "9"])
        .env_remove("BIFROM_SEED")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let matrix = bifrom::pipeline::load_matrix(&ws.join("snapshots.mat")).unwrap();
    assert_eq!(matrix.ncols(), 72);
    assert_eq!(matrix.nrows(), 30);

    // BIFROM_SEED lands in the manifest (fresh workspace, no hash clash).
    let ws_seeded = dir.path().join("ws_seeded");
    let out = bifrom()
        .arg("--workspace")
        .arg(&ws_seeded)
        .arg("--config")
        .arg(&config)
        .args(["snapshots", "--n1", "4", "--n2", "3"])
        .env("BIFROM_SEED", "123")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(ws_seeded.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=123"));
    assert!(manifest.contains("format_version=1"));
}

#[test]
fn help_and_bad_arguments() {
    let out = bifrom().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = bifrom().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bifrom()
        .args(["build", "--method", "quantum"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
