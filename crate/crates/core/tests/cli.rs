use std::fs;
use std::path::Path;
use std::process::Command;

use coagfrag::cli::{main_with_args, EXIT_FAILURE, EXIT_INVALID, EXIT_OK, EXIT_STIFF};
use serde_json::{json, Value};

fn small_scenario() -> Value {
    json!({
        "domain": {"dim": 1, "lengths": [1.0], "cells": [8]},
        "truncation": {"n": 16, "mode": "conservative"},
        "kernels": {
            "coagulation": {"type": "power_law", "C_Q": 0.5, "alpha": 0.5, "beta": 0.5},
            "fragmentation": {"type": "power_law", "C_F": 0.5, "gamma": 2},
            "daughters": {"type": "power_law", "nu": 0}
        },
        "diffusion": {"type": "convergent", "params": {"d1": 1.0, "d_inf": 0.5}},
        "initial": {"type": "monodisperse", "density": "gaussian_bump", "params": {"amplitude": 1.0, "base": 0.1}},
        "time": {"T": 0.5},
        "outputs": {"moment_orders": [0, 2, 3, 1.5], "sample_every": 0.1, "snapshot_times": [0.25, 0.5], "dissipation_l": [2]}
    })
}

fn write_scenario(dir: &Path, v: &Value) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["coagfrag"];
    full.extend_from_slice(args);
    main_with_args(full)
}

#[test]
fn run_writes_moments_profiles_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &small_scenario());
    let out = dir.path().join("out");
    assert_eq!(
        cli(&["run", "--scenario", &scenario, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );

    let csv = fs::read_to_string(out.join("moments.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(
        header.starts_with("t,dt,total_mass,int_rho_1,int_rho_0,int_rho_2,int_rho_3,"),
        "{header}"
    );
    assert!(header.ends_with("clamped_mass_cum"));
    assert_eq!(lines.count(), 6);

    let profile = fs::read_to_string(out.join("profile_0.25.csv")).unwrap();
    assert_eq!(profile.lines().next(), Some("i,cell_index,x,value"));
    assert_eq!(profile.lines().count(), 1 + 16 * 8);
    assert!(out.join("profile_0.5.csv").exists());

    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["scenario"]["truncation"]["n"], 16);
    assert_eq!(meta["diffusion"]["a"], 0.5 + 0.5 / 16.0);
    assert!(meta["stats"]["accepted"].as_u64().unwrap() > 0);
}

#[test]
fn two_dimensional_profiles_have_y_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_scenario();
    v["domain"] = json!({"dim": 2, "lengths": [1.0, 2.0], "cells": [3, 4]});
    v["outputs"] = json!({"sample_every": 0.25});
    let scenario = write_scenario(dir.path(), &v);
    let out = dir.path().join("out");
    assert_eq!(
        cli(&["run", "--scenario", &scenario, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let profile = fs::read_to_string(out.join("profile_0.5.csv")).unwrap();
    assert_eq!(profile.lines().next(), Some("i,cell_index,x,y,value"));
    assert_eq!(profile.lines().count(), 1 + 16 * 12);
}

#[test]
fn invalid_scenarios_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let mut v = small_scenario();
    v["time"].as_object_mut().unwrap().remove("T");
    let scenario = write_scenario(dir.path(), &v);
    assert_eq!(cli(&["run", "--scenario", &scenario, "--out", out]), EXIT_INVALID);

    let mut v = small_scenario();
    v["truncation"]["n"] = json!(1);
    let scenario = write_scenario(dir.path(), &v);
    assert_eq!(cli(&["run", "--scenario", &scenario, "--out", out]), EXIT_INVALID);

    let mut v = small_scenario();
    v["kernels"]["coagulation"]["C_Q"] = json!(-1.0);
    let scenario = write_scenario(dir.path(), &v);
    assert_eq!(cli(&["run", "--scenario", &scenario, "--out", out]), EXIT_INVALID);

    let mut v = small_scenario();
    v["outputs"]["unknown_key"] = json!(1);
    let scenario = write_scenario(dir.path(), &v);
    assert_eq!(cli(&["run", "--scenario", &scenario, "--out", out]), EXIT_INVALID);

    let missing = dir.path().join("missing.json");
    assert_eq!(
        cli(&["run", "--scenario", missing.to_str().unwrap(), "--out", out]),
        EXIT_INVALID
    );
    assert_eq!(cli(&["duality", "--trials", "0", "--out", out]), EXIT_INVALID);
    assert_eq!(cli(&["frobnicate"]), EXIT_INVALID);
    assert!(!dir.path().join("out").join("moments.csv").exists());
}

#[test]
fn stiff_explicit_run_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let v = json!({
        "domain": {"dim": 1, "lengths": [1.0], "cells": [2]},
        "truncation": {"n": 128, "mode": "conservative"},
        "kernels": {
            "coagulation": {"type": "power_law", "C_Q": 0.5, "alpha": 0, "beta": 0},
            "fragmentation": {"type": "power_law", "C_F": 100, "gamma": 6},
            "daughters": {"type": "power_law", "nu": 0}
        },
        "diffusion": {"type": "constant", "params": {"d": 1.0}},
        "initial": {"type": "geometric"},
        "time": {"T": 1.0, "scheme": "explicit"}
    });
    let scenario = write_scenario(dir.path(), &v);
    let out = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_coagfrag"))
        .args(["run", "--scenario", &scenario, "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_STIFF));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("stiffness") && stderr.contains("cell"), "{stderr}");
}

#[test]
fn sweep_writes_per_level_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_scenario();
    v["truncation"]["mode"] = json!("full_loss");
    let scenario = write_scenario(dir.path(), &v);
    let out = dir.path().join("sweep");
    let code = cli(&[
        "sweep",
        "--scenario",
        &scenario,
        "--out",
        out.to_str().unwrap(),
        "--levels",
        "8,16,32",
    ]);
    assert_eq!(code, EXIT_OK);
    for n in [8, 16, 32] {
        assert!(out.join(format!("moments_n{n}.csv")).exists());
    }
    let gel: Value = serde_json::from_str(&fs::read_to_string(out.join("gel_report.json")).unwrap()).unwrap();
    assert_eq!(gel["levels"], json!([8, 16, 32]));
    assert_eq!(gel["mode"], "full_loss");
    assert!(gel["verdict"].is_string());

    let code = cli(&[
        "sweep",
        "--scenario",
        &scenario,
        "--out",
        out.to_str().unwrap(),
        "--levels",
        "8,16",
    ]);
    assert_eq!(code, EXIT_INVALID);
}

#[test]
fn sweep_reports_mass_stability_in_conservative_mode() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &small_scenario());
    let out = dir.path().join("sweep");
    assert_eq!(
        cli(&["sweep", "--scenario", &scenario, "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("stability.json")).unwrap()).unwrap();
    assert!(report["mass_lp_stability"].is_object(), "{report}");
    assert_eq!(report["refinement"].as_array().unwrap().len(), 2);
}

#[test]
fn audit_passes_on_a_scenario_and_on_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &small_scenario());
    let out = dir.path().join("audit");
    let code = cli(&[
        "audit",
        "--scenario",
        &scenario,
        "--out",
        out.to_str().unwrap(),
        "--samples",
        "2000",
    ]);
    assert_eq!(code, EXIT_OK);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("audit.json")).unwrap()).unwrap();
    let checks = report.as_array().unwrap();
    for name in [
        "superadditivity",
        "constant_kernel_closed_form",
        "elem1_bound_search",
        "moment_dissipation",
    ] {
        assert!(checks.iter().any(|c| c["check"] == name), "missing {name}");
    }
    assert!(checks.iter().all(|c| c["pass"] == true));

    let run_dir = dir.path().join("run");
    assert_eq!(
        cli(&["run", "--scenario", &scenario, "--out", run_dir.to_str().unwrap()]),
        EXIT_OK
    );
    let code = cli(&[
        "audit",
        "--scenario",
        run_dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--samples",
        "500",
    ]);
    assert_eq!(code, EXIT_OK);
}

#[test]
fn audit_fails_on_a_non_conservative_daughter_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_scenario();
    v["truncation"]["n"] = json!(3);
    v["kernels"]["daughters"] = json!({"type": "table", "values": [[1], [1, 1]]});
    v["outputs"] = json!({});
    let scenario = write_scenario(dir.path(), &v);
    let out = dir.path().join("audit");
    let code = cli(&[
        "audit",
        "--scenario",
        &scenario,
        "--out",
        out.to_str().unwrap(),
        "--samples",
        "100",
    ]);
    assert_eq!(code, EXIT_FAILURE);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("audit.json")).unwrap()).unwrap();
    assert!(report
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["check"] == "daughter_normalization" && c["pass"] == false));
}

#[test]
fn duality_writes_estimate_and_closeness() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dual");
    let o = out.to_str().unwrap();
    assert_eq!(
        cli(&["duality", "--trials", "5", "--cells", "32", "--seed", "3", "--out", o]),
        EXIT_OK
    );
    let kmq: Value = serde_json::from_str(&fs::read_to_string(out.join("kmq.json")).unwrap()).unwrap();
    assert_eq!(kmq["trials"], 5);
    assert_eq!(kmq["probes"].as_array().unwrap().len(), 5);
    assert!(kmq["estimate"].as_f64().unwrap() <= 1.0 + 1e-12);
    assert!(kmq["closeness"].is_null());

    let args = [
        "duality", "--trials", "4", "--cells", "8", "--dim", "2", "--a", "1", "--b", "1.5", "--p", "2", "--out", o,
    ];
    assert_eq!(cli(&args), EXIT_OK);
    let kmq: Value = serde_json::from_str(&fs::read_to_string(out.join("kmq.json")).unwrap()).unwrap();
    assert_eq!(kmq["closeness"]["pass"], true);
    assert_eq!(cli(&["duality", "--a", "1", "--out", o]), EXIT_INVALID);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_scenario();
    v["seed"] = json!(9);
    let scenario = write_scenario(dir.path(), &v);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        cli(&["run", "--scenario", &scenario, "--out", a.to_str().unwrap()]),
        EXIT_OK
    );
    assert_eq!(
        cli(&["run", "--scenario", &scenario, "--out", b.to_str().unwrap()]),
        EXIT_OK
    );
    for f in ["moments.csv", "profile_0.25.csv", "profile_0.5.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
