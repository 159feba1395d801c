use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ionvp::ivpf::{load_field, save_field};
use ionvp::pbsolver::manufactured_fixture;
use ionvp::{ScalarField, TorusGrid};
use tempfile::tempdir;

fn ionvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ionvp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn constant_density_gives_log_potential() {
    let dir = tempdir().unwrap();
    let o = ionvp(&["pb-solve", "--init", "constant:2", "--dim", "1", "--nx", "32", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let phi = load_field(&dir.path().join("phi.ivpf")).unwrap();
    assert!(phi.values().iter().all(|v| (v - 2f64.ln()).abs() <= 1e-9));
    let exp_phi = load_field(&dir.path().join("exp_phi.ivpf")).unwrap();
    assert!(exp_phi.values().iter().all(|v| (v - 2.0).abs() <= 1e-9));
    assert!(dir.path().join("e_x.ivpf").exists());
    let diag = fs::read_to_string(dir.path().join("diagnostics.txt")).unwrap();
    assert_eq!(diag.trim(), stdout(&o).trim());
}

#[test]
fn manufactured_fixture_is_recovered() {
    let dir = tempdir().unwrap();
    let o = ionvp(&["pb-solve", "--init", "manufactured", "--nx", "64", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let phi = load_field(&dir.path().join("phi.ivpf")).unwrap();
    let (_, phi_star) = manufactured_fixture(TorusGrid::new(1, 64).unwrap());
    assert!(sup_diff(&phi, &phi_star) <= 1e-8);
}

#[test]
fn density_file_round_trips_through_pb_solve() {
    let dir = tempdir().unwrap();
    let grid = TorusGrid::new(2, 16).unwrap();
    let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * (x[0] + x[1])).sin());
    let file = dir.path().join("rho.ivpf");
    save_field(&file, &rho).unwrap();
    let out = dir.path().join("out");
    let init = format!("file:{}", path(&file));
    let o = ionvp(&["pb-solve", "--init", &init, "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let exp_phi = load_field(&out.join("exp_phi.ivpf")).unwrap();
    assert_eq!(exp_phi.grid(), &grid);
    assert!((exp_phi.integrate() - rho.integrate()).abs() <= 1e-8 * rho.integrate());
    assert!(out.join("e_y.ivpf").exists());

    let o = ionvp(&["pb-solve", "--init", &init, "--dim", "1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pb_solve_needs_out() {
    let o = ionvp(&["pb-solve", "--init", "constant:1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn bad_init_is_a_usage_error() {
    let dir = tempdir().unwrap();
    for init in ["constant:-1", "gaussian"] {
        let o = ionvp(&["pb-solve", "--init", init, "--out", path(dir.path())]);
        assert_eq!(o.status.code(), Some(1), "{init}");
    }
}

#[test]
fn newton_budget_exhaustion_is_numerical() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("pb.cfg");
    let grid = TorusGrid::new(1, 64).unwrap();
    let rho = ScalarField::from_fn(grid, |x| 0.05 + 20.0 * (-200.0 * (x[0] - 0.5).powi(2)).exp());
    let file = dir.path().join("rho.ivpf");
    save_field(&file, &rho).unwrap();
    fs::write(&cfg, format!("init = file:{}\nmax_newton_iters = 1\n", path(&file))).unwrap();
    let o = ionvp(&["pb-solve", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn vp_run_keeps_uniform_energy_and_writes_outputs() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("vp.cfg");
    fs::write(
        &cfg,
        "# uniform Maxwellian\ndim = 1\nnx = 16\nnv = 128\nv_extent = 8\ndt = 5e-3\nt_end = 0.1\n\
         n_reg = 2\nsample_every = 5\ninit = maxwellian\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = ionvp(&["vp-run", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("energy_ok=true"));

    let csv = fs::read_to_string(out.join("energy.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,kinetic,potential,entropy,total"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!((r[4] - 0.5).abs() <= 1e-6, "{r:?}");
    }
    assert!(out.join("ledger.txt").exists());
    assert!(out.join("snapshot_000000.ivpf").exists());
    assert!(out.join("snapshot_000020.ivpf").exists());
}

#[test]
fn vp_run_rejects_cfl_violation() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("vp.cfg");
    fs::write(&cfg, "nx = 64\nnv = 64\nv_extent = 6\ndt = 0.5\nt_end = 1\n").unwrap();
    let o = ionvp(&["vp-run", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CFL"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("vp.cfg");
    fs::write(&cfg, "nx = 16\nnvv = 32\n").unwrap();
    let o = ionvp(&["vp-run", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nvv"));
}

#[test]
fn thresholds_table_and_single_dimension() {
    let o = ionvp(&["thresholds"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "d,q_threshold\n2,1.3903882\n3,1.7007458\n4+,2.0000000\n");

    let o = ionvp(&["thresholds", "--dim", "3"]);
    assert_eq!(stdout(&o).trim(), "1.7007458");

    let o = ionvp(&["thresholds", "--dim", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_subset_writes_report() {
    let dir = tempdir().unwrap();
    let o = ionvp(&["verify", "--only", "neutrality", "--seed", "7", "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("check,instances,worst_margin,passed"));
    let rows: Vec<&str> = lines.collect();
    assert!(rows.iter().any(|r| r.starts_with("neutrality,100,")));
    assert!(rows.iter().any(|r| r.starts_with("control:neutrality,")));
    assert!(rows.iter().all(|r| r.ends_with(",true")));
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn verify_fails_under_broken_newton_budget() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("verify.cfg");
    fs::write(&cfg, "max_newton_iters = 1\ncontrols = false\ncount = 10\n").unwrap();
    let o = ionvp(&["verify", "--config", path(&cfg), "--only", "neutrality"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL]"));
}

#[test]
fn verify_rejects_unknown_check() {
    let o = ionvp(&["verify", "--only", "nonsense"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonsense"));
}
