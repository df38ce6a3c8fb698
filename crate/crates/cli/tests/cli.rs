//! End-to-end checks of the `trihom` binary: artifacts, exit codes, formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trihom_cli::output::{read_macro_dir, read_membrane_dir, read_tensors_csv};
use trihom_core::fieldio::FieldDump;

fn trihom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trihom")).args(args).output().unwrap()
}

fn shipped(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CHAIN_SMALL: &str = r#"
[geometry.meso]
resolution = [16, 16]
shape = { kind = "rounded_box", center = [0.5, 0.5], half_widths = [0.3, 0.5], corner_radius = 0.2 }

[conductivity]
mode = "bidomain"
sigma_i = 1.0
sigma_e = 1.0
allow_blocked = true

[ionic]
a = 0.001
b = 0.005
lambda = -1.0
theta = 0.15

[macro]
resolution = [16, 32]
dt = 0.02
t_end = 0.2
snapshot_every = 5

[[macro.stimulus]]
kind = "box"
center = [0.0, 0.0]
half_widths = [10.0, 0.25]
amplitude = 10.0
t_on = 0.0
t_off = 0.5

[micro]
epsilon = 0.5
cells = [1, 2]
snapshot_every = 5
"#;

#[test]
fn full_cell_tensors_equal_the_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("art");
    let o = trihom(&["pipeline", "--config", &shipped("full.toml"), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_tensors_csv(&out.join("tensors.csv")).unwrap();
    let get = |l: &str| rows.iter().find(|r| r.level == l).unwrap().entries.clone();
    assert_eq!(get("EXTRA_MESO"), vec![vec![2.0, 0.5], vec![0.5, 1.0]]);
    assert_eq!(get("INTRA_TWO_LEVEL"), vec![vec![3.0, 0.0], vec![0.0, 1.0]]);
    assert!(out.join("nondim.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn laminate_demo_matches_layer_means() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let o = trihom(&["tensors", "--config", &shipped("laminate.toml"), "--out", path(&csv)]);
    assert!(o.status.success());
    let rows = read_tensors_csv(&csv).unwrap();
    assert_eq!(rows.len(), 1);
    let m = &rows[0].entries;
    // harmonic mean of 1 and 4 across the layers, arithmetic mean along them
    let (h, a) = (1.0 / (0.5 / 1.0 + 0.5 / 4.0), 0.5 * (1.0 + 4.0));
    assert!((m[0][0] / h - 1.0).abs() < 0.01, "{m:?}");
    assert!((m[1][1] / a - 1.0).abs() < 0.01, "{m:?}");
    assert!(m[0][1].abs() < 1e-12);
}

#[test]
fn nonpositive_dt_is_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CHAIN_SMALL.replace("dt = 0.02", "dt = 0.0"));
    let out = dir.path().join("art");
    let o = trihom(&["pipeline", "--config", &cfg, "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));
    assert!(!out.exists(), "nothing may be written for a rejected config");
}

#[test]
fn unknown_keys_exit_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CHAIN_SMALL.replace("[micro]", "[micro]\nepsilonn = 1.0"));
    let o = trihom(&["tensors", "--config", &cfg, "--out", path(&dir.path().join("t.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(shipped("disk_holes.toml")).unwrap().replace("sigma = 1.0", "sigma = 1.0\nmax_iter = 1");
    let cfg = write_config(dir.path(), &text);
    let o = trihom(&["tensors", "--config", &cfg, "--out", path(&dir.path().join("t.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `correctors`"));
}

#[test]
fn cell_solve_dumps_correctors_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cs");
    let o = trihom(&["cell-solve", "--config", &shipped("disk_holes.toml"), "--tol", "1e-9", "--out", path(&out)]);
    assert!(o.status.success());
    let d = FieldDump::read(std::io::BufReader::new(fs::File::open(out.join("correctors/extra_meso_chi1.bin")).unwrap()))
        .unwrap();
    assert_eq!(d.shape, vec![64, 64]);
    assert_eq!(d.meta("direction"), Some("1"));
    assert_eq!(d.meta("tol"), Some("1e-9"));
    let residual: f64 = d.meta("residual").unwrap().parse().unwrap();
    assert!(residual <= 1e-9);
    // holes carry NaN, the matrix has zero mean
    assert!(d.values.iter().any(|v| v.is_nan()));
    let labels = fs::read(out.join("geometry/meso_labels.bin")).unwrap();
    let header_end = labels.iter().position(|&b| b == b'\n').unwrap();
    assert!(labels[..header_end].starts_with(b"TRIHOM-LABELS dim=2 resolution=64,64"));
    assert_eq!(labels.len() - header_end - 1, 64 * 64);
}

#[test]
fn pipeline_layout_manifest_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CHAIN_SMALL);
    let out = dir.path().join("art");
    let o = trihom(&["pipeline", "--config", &cfg, "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "geometry/meso_labels.bin",
        "correctors/extra_meso_chi0.bin",
        "tensors.csv",
        "macro/v_000010.bin",
        "macro/u_e_000000.bin",
        "macro/activation.bin",
        "macro/summary.csv",
        "macro/velocity.csv",
        "micro/membrane_000005.csv",
        "micro/u_i_final.bin",
        "validation/report.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let tol = manifest["tolerances"]["cell"].as_f64().unwrap();
    let stages = manifest["stages"].as_array().unwrap();
    let names: Vec<&str> = stages.iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["geometry", "tensors", "macro", "micro", "validation"]);
    for p in stages[1]["details"].as_array().unwrap() {
        assert!(p["max_residual"].as_f64().unwrap() <= tol);
    }
    let mac = &stages[2]["details"];
    assert!(mac["max_elliptic_residual"].as_f64().unwrap() <= manifest["tolerances"]["macro_elliptic"].as_f64().unwrap());
    assert!(mac["max_parabolic_residual"].as_f64().unwrap() <= manifest["tolerances"]["macro_parabolic"].as_f64().unwrap());
    assert!(stages.iter().all(|s| s["wall_seconds"].as_f64().unwrap() >= 0.0));

    // the standalone comparison reproduces the pipeline's report
    let report = dir.path().join("report.csv");
    let o = trihom(&[
        "validate",
        "--micro",
        path(&out.join("micro")),
        "--macro",
        path(&out.join("macro")),
        "--out",
        path(&report),
    ]);
    assert!(o.status.success());
    let last = |p: &PathBuf| fs::read_to_string(p).unwrap().lines().last().unwrap().rsplit(',').next().unwrap().to_string();
    assert_eq!(last(&report), last(&out.join("validation/report.csv")));

    let o = trihom(&[
        "validate",
        "--micro",
        path(&out.join("micro")),
        "--macro",
        path(&out.join("macro")),
        "--out",
        path(&report),
        "--max-error",
        "1e-300",
    ]);
    assert_eq!(o.status.code(), Some(4));

    let traj = read_membrane_dir(&out.join("micro")).unwrap();
    assert_eq!(traj.domain, [0.5, 1.0]);
    let (lengths, resolution, fields) = read_macro_dir(&out.join("macro")).unwrap();
    assert_eq!(lengths, vec![0.5, 1.0]);
    assert_eq!(resolution, vec![16, 32]);
    assert_eq!(fields.len(), 3);
    assert_eq!(fields[0].1.len(), 17 * 33);
}

#[test]
fn separate_stage_commands_write_their_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CHAIN_SMALL);
    let m = dir.path().join("m");
    assert!(trihom(&["macro-run", "--config", &cfg, "--out", path(&m)]).status.success());
    assert!(m.join("summary.csv").exists());
    let u = dir.path().join("u");
    assert!(trihom(&["micro-run", "--config", &cfg, "--out", path(&u)]).status.success());
    assert!(u.join("membrane_000010.csv").exists());
}

#[test]
fn nondim_prints_both_epsilons() {
    let o = trihom(&["nondim", "--params", &shipped("full.toml")]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("quantity,value\n"));
    assert!(text.contains("\nepsilon,") && text.contains("\nepsilon_alt,"));
}

#[test]
fn bad_threads_value_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_trihom"))
        .args(["nondim", "--params", &shipped("full.toml")])
        .env("THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
