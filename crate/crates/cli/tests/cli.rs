use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIXTURE: &str = include_str!("fixtures/small.toml");

fn sgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgl")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Writes the fixture with each `(section, "key = value")` edit applied.
fn config(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let key_of = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let mut lines: Vec<String> = FIXTURE.lines().map(String::from).collect();
    for (section, line) in edits {
        let header = lines.iter().position(|l| l == &format!("[{section}]")).expect("section exists");
        let end = lines[header + 1..]
            .iter()
            .position(|l| l.starts_with('['))
            .map_or(lines.len(), |e| header + 1 + e);
        let key = key_of(line);
        if let Some(i) = (header + 1..end).find(|&i| key_of(&lines[i]) == key) {
            lines[i] = line.to_string();
        } else {
            lines.insert(header + 1, line.to_string());
        }
    }
    let path = dir.join(name);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn check_passes_on_fresh_build() {
    let out = sgl(&["check"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 11);
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = sgl(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn dump_config_echoes_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    fs::write(&path, FIXTURE).unwrap();
    let out = sgl(&["dump-config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), FIXTURE);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = config(dir.path(), "bad.toml", &[("gl", "epsilon = -1.0")]);
    let out = sgl(&["run", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gl.epsilon"));
    let junk = dir.path().join("junk.toml");
    fs::write(&junk, "[grid]\nn_modes = 16\ncolour = 3\n").unwrap();
    let out = sgl(&["run", junk.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let out = sgl(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn zero_horizon_emits_initial_report_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "zero.toml", &[("stepper", "t_end = 0.0")]);
    let out = sgl(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["t"].as_f64().unwrap(), 0.0);
    assert_eq!(v["step"], 0);
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "fast.toml",
        &[("initial", "u0 = \"shear\""), ("initial", "u0_amplitude = 10000.0"), ("stepper", "dt = 0.01")],
    );
    let out = sgl(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CFL"));
}

#[test]
fn ndjson_stream_is_deterministic_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "det.toml", &[]);
    let a = sgl(&["run", cfg.to_str().unwrap()]);
    let b = sgl(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut keys: Option<Vec<String>> = None;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        if let Some(prev) = &keys {
            assert_eq!(prev, &k);
        }
        keys = Some(k);
    }
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let half_ck = d.join("half.bin");
    let full_ck = d.join("full.bin");
    let resumed_ck = d.join("resumed.bin");
    let q = |p: &Path| format!("\"{}\"", p.display());
    let half = config(
        d,
        "half.toml",
        &[("stepper", "t_end = 0.01"), ("output", &format!("checkpoint_path = {}", q(&half_ck)))],
    );
    let full = config(
        d,
        "full.toml",
        &[
            ("output", &format!("checkpoint_path = {}", q(&full_ck))),
            ("output", &format!("ndjson_path = {}", q(&d.join("full.ndjson")))),
        ],
    );
    let resumed = config(
        d,
        "resumed.toml",
        &[
            ("output", &format!("checkpoint_path = {}", q(&resumed_ck))),
            ("output", &format!("ndjson_path = {}", q(&d.join("resumed.ndjson")))),
        ],
    );
    assert_eq!(code(&sgl(&["run", half.to_str().unwrap()])), 0);
    assert_eq!(code(&sgl(&["run", full.to_str().unwrap()])), 0);
    let out = sgl(&["run", resumed.to_str().unwrap(), "--resume", half_ck.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&full_ck).unwrap(), fs::read(&resumed_ck).unwrap());
    let straight = fs::read_to_string(d.join("full.ndjson")).unwrap();
    let tail = fs::read_to_string(d.join("resumed.ndjson")).unwrap();
    let skip = straight.lines().count() - tail.lines().count();
    assert_eq!(skip, 10);
    for (a, b) in straight.lines().skip(skip).zip(tail.lines()) {
        assert_eq!(a, b);
    }

    let other = config(d, "other.toml", &[("noise", "seed = 99")]);
    let out = sgl(&["run", other.to_str().unwrap(), "--resume", half_ck.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    fs::write(d.join("broken.bin"), b"XXXXjunk").unwrap();
    let out = sgl(&["run", full.to_str().unwrap(), "--resume", d.join("broken.bin").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint format"));
}

#[test]
fn converge_and_ensemble_emit_documents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "harness.toml", &[("stepper", "t_end = 0.005")]);
    let out = sgl(&["converge", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["paths"].as_array().unwrap().len(), 2);
    assert_eq!(v["members"].as_array().unwrap().len(), 3);

    let path = dir.path().join("ens.json");
    let out = sgl(&["ensemble", cfg.to_str().unwrap(), "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["n_paths"], 2);
}
