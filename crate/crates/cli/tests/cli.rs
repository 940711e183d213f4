use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use tipping::{resolve_config, Cli, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};

fn tipping(args: &[&str], dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tipping"));
    cmd.args(args).env_remove("TIPPING_OUTPUT_DIR");
    if let Some(d) = dir {
        cmd.arg("--output-dir").arg(d);
    }
    cmd.output().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(tipping(&["--help"], None).status.code(), Some(EXIT_OK));
    assert_eq!(tipping(&["--no-such-flag", "pulse"], None).status.code(), Some(EXIT_USAGE));
    assert_eq!(tipping(&["pulse", "--beta", "abc"], None).status.code(), Some(EXIT_USAGE));
    assert_eq!(tipping(&["pulse", "--set", "nonsense=1"], None).status.code(), Some(EXIT_USAGE));
    let out = tipping(&["critical-rate", "--r-lo", "2", "--r-hi", "1"], None);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("r_lo"));
}

#[test]
fn precedence_of_configuration_sources() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(&file, "# comment\nbeta = 0.2\na = 16\nrate = 0.5\n").unwrap();
    let path = file.to_str().unwrap();
    let cli = Cli::try_parse_from(["tipping", "--config", path, "--set", "a=17", "-r", "0.7", "pulse"]).unwrap();
    let c = resolve_config(&cli).unwrap();
    assert_eq!(c.params.beta, 0.2);
    // lambda_r follows beta unless set explicitly.
    assert!((c.params.lambda_r - 0.8).abs() < 1e-15);
    assert_eq!(c.params.a, 17.0);
    assert_eq!(c.params.rate, 0.7);
    assert_eq!(c.config_path.as_deref(), Some(file.as_path()));
    let cli = Cli::try_parse_from(["tipping", "--config", "/no/such/file", "pulse"]).unwrap();
    assert!(resolve_config(&cli).is_err());
}

#[test]
fn pulse_outputs_reproduce_from_the_written_config() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let out = tipping(&["pulse", "--beta", "0.15"], Some(first.path()));
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["pulse_stable.csv", "pulse_unstable.csv", "pulse.json", "pulse.conf", "pulse.manifest.json"] {
        assert!(first.path().join(f).is_file(), "missing {f}");
    }
    let conf = first.path().join("pulse.conf");
    let out = tipping(&["pulse", "--config", conf.to_str().unwrap()], Some(second.path()));
    assert_eq!(out.status.code(), Some(EXIT_OK));
    for f in ["pulse_stable.csv", "pulse_unstable.csv", "pulse.json"] {
        assert_eq!(fs::read(first.path().join(f)).unwrap(), fs::read(second.path().join(f)).unwrap(), "{f} differs");
    }
    let csv = fs::read_to_string(first.path().join("pulse_stable.csv")).unwrap();
    assert!(csv.starts_with("z,u,v\n"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(first.path().join("pulse.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pulse");
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("env-out");
    let out = Command::new(env!("CARGO_BIN_EXE_tipping"))
        .args(["pulse", "--kinds", "stable"])
        .env("TIPPING_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert!(target.join("pulse_stable.csv").is_file());
    assert!(!target.join("pulse_unstable.csv").exists());
}

#[test]
fn unwritable_output_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = tipping(&["pulse", "--kinds", "stable"], Some(&blocker.join("sub")));
    assert_eq!(out.status.code(), Some(EXIT_IO));
}

#[test]
fn bad_bracket_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = tipping(&["critical-rate", "--r-lo", "1.5", "--r-hi", "2"], Some(dir.path()));
    assert_eq!(out.status.code(), Some(EXIT_NUMERICAL), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_passes_every_hypothesis() {
    let dir = tempfile::tempdir().unwrap();
    let out = tipping(&["verify"], Some(dir.path()));
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let checks: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    let checks = checks.as_array().unwrap();
    assert_eq!(checks.len(), 5);
    assert!(checks.iter().all(|c| c["pass"] == true));
}
