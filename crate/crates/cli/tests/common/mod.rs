#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_ssomvr");

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn cli(args: &[&str]) -> Output {
    cli_with_env(args, &[])
}

pub fn cli_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("ssomvr binary runs")
}

/// Runs the CLI and panics with its stderr unless it exits 0.
pub fn cli_ok(args: &[&str]) -> Output {
    cli_ok_env(args, &[])
}

pub fn cli_ok_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let out = cli_with_env(args, env);
    assert!(
        out.status.success(),
        "ssomvr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The frozen two-blob fixture: 32³, 8-bit RAW plus sidecar.
pub fn two_blobs(dir: &Path, size: usize) -> PathBuf {
    let raw = dir.join(format!("two_blobs_{size}.raw"));
    cli_ok(&["phantom", "--kind", "two-blobs", "--size", &size.to_string(), "--out", s(&raw)]);
    raw
}

/// `train` at level 2 with default schedule and the given seed.
pub fn train(raw: &Path, out: &Path, seed: u64, env: &[(&str, &str)]) -> Output {
    cli_ok_env(
        &["train", "--volume", s(raw), "--level", "2", "--seed", &seed.to_string(), "--out", s(out)],
        env,
    )
}

pub fn replay(raw: &Path, snapshot: &Path, script: &Path, out: &Path, env: &[(&str, &str)]) -> Output {
    cli_ok_env(
        &[
            "replay",
            "--volume",
            s(raw),
            "--snapshot",
            s(snapshot),
            "--script",
            s(script),
            "--out",
            s(out),
        ],
        env,
    )
}
