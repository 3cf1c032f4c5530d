//! End-to-end tests of the command-line surface.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-reuse"))
}

#[test]
fn presets_lists_all_seven() {
    let out = bin().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in latent_reuse_cli::PRESET_NAMES {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn schema_prints_the_published_contract() {
    let out = bin().arg("schema").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["title"], "Experiment configuration");
}

#[test]
fn config_output_round_trips_through_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("config.json");
    let out = bin().args(["config", "invariant-suite"]).output().unwrap();
    assert!(out.status.success());
    std::fs::write(&config_path, &out.stdout).unwrap();

    let out_dir = tmp.path().join("results");
    let run = bin()
        .args([
            "run",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("manifest.json").exists());
    assert!(out_dir.join("tables/invariants.csv").exists());

    // The emitted report re-parses; its config echo re-validates against
    // the schema and rebuilds the same fixture.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["preset"], "invariant-suite");
    assert_eq!(report["scalars"]["failures"]["value"], 0.0);
    let echoed = serde_json::to_string(&report["config"]).unwrap();
    let reparsed = latent_reuse_cli::parse_config(&echoed).unwrap();
    latent_reuse_cli::config::build_fixture(&reparsed).unwrap();
}

#[test]
fn invalid_config_exits_nonzero_with_schema_path() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("bad.json");
    std::fs::write(&config_path, r#"{"preset": "angle-sweep", "seed": -1}"#).unwrap();
    let out = bin()
        .args(["run", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("config.schema.json") || stderr.contains("seed"),
        "stderr: {stderr}"
    );
}

#[test]
fn unknown_preset_is_rejected() {
    let out = bin().args(["run", "--preset", "no-such"]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown preset"));
}

#[test]
fn seed_override_changes_monte_carlo_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: &str, dir: &str| {
        let out_dir = tmp.path().join(dir);
        let out = bin()
            .args([
                "run",
                "--preset",
                "noise-sweep",
                "--seed-override",
                seed,
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read_to_string(out_dir.join("report.json")).unwrap()
    };
    let a = run("1", "a");
    let b = run("2", "b");
    let a_val: serde_json::Value = serde_json::from_str(&a).unwrap();
    let b_val: serde_json::Value = serde_json::from_str(&b).unwrap();
    assert_eq!(a_val["config"]["seed"], 1);
    assert_eq!(b_val["config"]["seed"], 2);
}
