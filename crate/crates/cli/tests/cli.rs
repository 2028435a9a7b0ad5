use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn beamsteer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamsteer"))
        .args(args)
        .arg("--output")
        .arg(dir)
        .env("BEAMSTEER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn with_config(dir: &Path, text: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, text).unwrap();
    let mut all = vec!["--config", cfg.to_str().unwrap()];
    all.extend_from_slice(args);
    beamsteer(dir, &all)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect()
}

#[test]
fn dumped_config_reparses_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = beamsteer(dir.path(), &["--preset", "desk", "--dump-config"]);
    assert_eq!(code(&first), 0);
    let text = String::from_utf8(first.stdout).unwrap();
    let second = with_config(dir.path(), &text, &["--dump-config"]);
    assert_eq!(code(&second), 0);
    assert_eq!(String::from_utf8(second.stdout).unwrap(), text);
    assert!(text.contains("nodes_per_axis = 9"));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = with_config(dir.path(), "[setup]\ntime_step = 3e-12\nend_time = 1e-11\n", &["simulate"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = with_config(dir.path(), "[setup]\nmesh = 3\n", &["simulate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn default_simulation_is_a_straight_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamsteer(dir.path(), &["simulate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = rows(&dir.path().join("trajectory.csv"));
    assert_eq!(traj.len(), 201);
    let (first, last) = (&traj[0], &traj[200]);
    let v = 5e5;
    for r in &traj {
        assert_eq!((r[3], r[4]), (0.0, 0.0));
        assert!((r[2] - (first[2] + v * r[0])).abs() < 1e-15);
        assert_eq!(&r[5..], &first[5..]);
    }
    assert!((last[0] - 2e-10).abs() < 1e-24);
    assert!(summary(dir.path())["min_margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn uniform_field_hook_follows_the_helix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[setup]\nnodes_per_axis = 5\nexternal_b = [0.0, 0.0, 0.02]\n\n\
               [[particles]]\nposition = [0.0, 0.0, 0.0]\nbeta = [1e-3, 0.0, 2e-4]\n";
    let o = with_config(dir.path(), cfg, &["simulate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (c, m0, q, b) = (2.9979e8_f64, 9.1093e-31_f64, 1.6021e-19_f64, 0.02);
    let (bx, bz) = (1e-3_f64, 2e-4_f64);
    let gamma = 1.0 / (1.0 - bx * bx - bz * bz).sqrt();
    let omega = q * b / (gamma * m0);
    let (vx, vz) = (bx * c, bz * c);
    let rho = vx / omega;
    for r in rows(&dir.path().join("trajectory.csv")) {
        let t = r[0];
        let exact = [rho * (omega * t).sin(), -rho * (1.0 - (omega * t).cos()), vz * t];
        let err = ((r[2] - exact[0]).powi(2) + (r[3] - exact[1]).powi(2) + (r[4] - exact[2]).powi(2)).sqrt();
        assert!(err < 1e-5 * rho, "t = {t:e}: error {err:e}, radius {rho:e}");
    }
}

#[test]
fn desk_optimization_converges_with_requested_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let o = with_config(dir.path(), "[optimize]\nsnapshots = [0, \"final\"]\n", &["--preset", "desk", "optimize"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path());
    assert_eq!(s["termination"], "converged");
    assert!(s["relative_error"].as_f64().unwrap() < 1e-3);
    let mut snaps: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("trajectory_"))
        .collect();
    snaps.sort();
    assert_eq!(snaps, ["trajectory_final.csv", "trajectory_iter_0000.csv"]);
    let log = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(log.starts_with("iter,f_value,grad_norm,step_type,step_length,barrier_mu,min_margin\n"));
    assert!(log.contains(",Grad,") && log.contains(",BFGS,"));
    let control = rows(&dir.path().join("control.csv"));
    assert_eq!(control.len(), 9 * 9 * 9 - 7 * 7 * 7);
}

#[test]
fn infeasible_start_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[[particles]]\nposition = [-5e-5, 0.0, 0.0]\nbeta = [1e-2, 0.0, 0.0]\n";
    let o = with_config(dir.path(), cfg, &["--preset", "desk", "optimize"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradient_check_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[check_gradient]\ncontrols = 1\ndirections = 4\n";
    let o = with_config(dir.path(), cfg, &["--preset", "desk", "check-gradient"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&dir.path().join("gradient_check.csv"));
    assert_eq!(table.len(), 4);
    assert!(table.iter().all(|r| r[3] < 1e-5));
    let o = with_config(dir.path(), cfg, &["--preset", "desk", "check-gradient", "--break-adjoint"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn convergence_study_reports_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamsteer(dir.path(), &["convergence-study"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fem = rows(&dir.path().join("fem_convergence.csv"));
    assert!((3.5..=4.5).contains(&fem[1][3]));
    let boris = rows(&dir.path().join("boris_convergence.csv"));
    assert!((3.5..=4.5).contains(&boris[1][2]));
}
