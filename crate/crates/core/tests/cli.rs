use std::fs;

use airan_market::cli::{run, EXIT_INPUT, EXIT_OK};

fn run_in(dir: &std::path::Path, args: &[&str]) -> i32 {
    let mut full = vec!["airan-market"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", dir.to_str().unwrap()]);
    run(full)
}

#[test]
fn solve_writes_five_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["solve"]), EXIT_OK);
    for name in ["menus.json", "matching.csv", "assignment.json", "trace.csv", "metrics.json"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(!text.is_empty(), "{name}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["converged"], true);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("k,temperature,matching_residual,menu_residual,omega_1"));
    // no temporary files left behind
    assert!(fs::read_dir(dir.path())
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn out_of_range_zeta_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["solve", "--set", "zeta=1.5"]), EXIT_INPUT);
    // the same through a scenario file
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[solver]\nzeta = 1.5\n").unwrap();
    let err = airan_market::scenario::ScenarioConfig::load(Some(&path), &[])
        .and_then(|c| c.build())
        .unwrap_err();
    assert!(err.to_string().contains("zeta"), "{err}");
    assert_eq!(
        run_in(dir.path(), &["solve", "--scenario", path.to_str().unwrap()]),
        EXIT_INPUT
    );
}

#[test]
fn unwritable_output_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    fs::write(&file, "").unwrap();
    assert_eq!(run_in(&file.join("sub"), &["solve"]), EXIT_INPUT);
}

#[test]
fn unknown_keys_and_axes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["solve", "--set", "solver.zetta=0.9"]), EXIT_INPUT);
    assert_eq!(run_in(dir.path(), &["sweep", "--sweep", "colour=1,2"]), EXIT_INPUT);
    assert_eq!(run_in(dir.path(), &["solve", "--set", "total_users=many"]), EXIT_INPUT);
}

#[test]
fn validate_reports_setup_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["validate", "--set", "total_users=20000"]), EXIT_INPUT);
}

#[test]
fn validate_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["validate", "--samples", "50000"]), EXIT_OK);
}

#[test]
fn sweep_writes_versioned_tables() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_in(
        dir.path(),
        &["sweep", "--sweep", "total_users=30,60", "--replicates", "2"],
    );
    assert_eq!(code, EXIT_OK);
    let rows = fs::read_to_string(dir.path().join("sweep_total_users.csv")).unwrap();
    assert!(rows.starts_with("# airan-market-sweep/v1"));
    // 2 values x 2 replicates x 4 methods
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 1 + 16);
    assert!(dir.path().join("sweep_total_users_summary.csv").exists());
    assert!(dir.path().join("sweep_total_users_timing.csv").exists());
}

#[test]
fn single_operator_bench_agrees_on_assignment() {
    // 80 users keep total demand under the single operator's capacity, so no
    // mechanism has to ration
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.toml");
    fs::write(
        &path,
        "[market]\ntotal_users = 80\n\n[[operators]]\nquality = 1.5\nexec_cost = 8e-6\nviolation_cost = 1.2e-3\nrefund = 1.2e-4\n\
         uplink = { servers = 48, throughput = 9.0 }\n\
         processing = { servers = 24, throughput = 3.6e13 }\n\
         downlink = { servers = 194, throughput = 5.4 }\n",
    )
    .unwrap();
    let code = run_in(dir.path(), &["bench", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let table = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    for line in table.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        // CT, MC and GSMC columns agree
        assert_eq!(cols[4], cols[5], "{line}");
        assert_eq!(cols[5], cols[6], "{line}");
    }
    let ours: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bench_ours.json")).unwrap()).unwrap();
    let ct: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bench_ct.json")).unwrap()).unwrap();
    assert_eq!(ours["assignment"], ct["assignment"]);
}

#[test]
fn emit_plots_writes_scripts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["emit-plots"]), EXIT_OK);
    assert!(dir.path().join("fig_convergence.py").exists());
    assert!(dir.path().join("fig_zeta.py").exists());
}
