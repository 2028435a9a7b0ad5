mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use beamsteer::dynamics::{integrate, reference_target, ProblemSetup, SetupParams};
use beamsteer::io::{read_control, write_control, write_convergence, write_gradient_check, write_trajectory, GradientRow};
use beamsteer::kinematics::{lorentz_factor, velocity};
use beamsteer::linalg::Vec3;
use beamsteer::lw_fields::FieldSample;
use beamsteer::objective::{fd_directional, Objective, ObjectiveSpec};
use beamsteer::optimizer::{optimize_with, SteeringProblem, Termination};
use beamsteer::poisson::{assemble, build_mesh, l2_error, solve, ControlField};
use beamsteer::Error;
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use config::{RunConfig, Snapshot};

#[derive(Parser, Debug)]
#[command(name = "beamsteer", version, about = "Steer a charged particle with boundary data of a magnetic scalar potential")]
struct Cli {
    /// TOML configuration; defaults apply to absent keys.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Built-in defaults the configuration file is layered on.
    #[arg(long, value_enum, default_value_t = Preset::Full, global = true)]
    preset: Preset,
    /// Overrides `output_dir`.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (also read from BEAMSTEER_THREADS).
    #[arg(long, env = "BEAMSTEER_THREADS", global = true)]
    threads: Option<usize>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
    /// Perturb the adjoint gradient; the gradient check must then fail.
    #[arg(long, hide = true, global = true)]
    break_adjoint: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// 26³ mesh.
    Full,
    /// 9³ mesh.
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward run under a given control; writes the trajectory and a summary.
    Simulate,
    /// Optimize the boundary control; writes the convergence log, control and snapshots.
    Optimize,
    /// Compare adjoint directional derivatives with finite differences.
    CheckGradient,
    /// FEM and time-stepping order-of-convergence tables.
    ConvergenceStudy,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Solver(String),
    Infeasible(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Infeasible(_) => 4,
            Failure::Verification(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Infeasible(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::InvalidMesh(_) | Error::InvalidSetup(_) | Error::InvalidConfig(_) | Error::ControlLength { .. } => {
                Failure::Config(m)
            }
            Error::OutOfDomain { .. } | Error::SupportLeftDomain { .. } | Error::Infeasible { .. } => Failure::Infeasible(m),
            Error::SingularEvaluation { .. }
            | Error::SolverFailure { .. }
            | Error::NotDescent { .. }
            | Error::LineSearchFailure { .. } => Failure::Solver(m),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match cli.preset {
        Preset::Full => RunConfig::default(),
        Preset::Desk => RunConfig::desk(),
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let layered = merge(&cfg.to_toml(), &text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg = RunConfig::parse(&layered).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }
    if let Some(out) = &cli.output {
        cfg.output_dir = out.display().to_string();
    }
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    let Some(command) = cli.command else {
        return Err(Failure::Config("no subcommand given (see --help)".into()));
    };
    let out = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    match command {
        Command::Simulate => simulate(&cfg, &out),
        Command::Optimize => optimize(&cfg, &out),
        Command::CheckGradient => check_gradient(&cfg, &out, cli.break_adjoint),
        Command::ConvergenceStudy => convergence_study(&cfg, &out),
    }
}

/// Overlays the keys of `overlay` on `base`, table by table.
fn merge(base: &str, overlay: &str) -> Result<String, String> {
    fn rec(b: &mut toml::Table, o: toml::Table) {
        for (k, v) in o {
            match (b.get_mut(&k), v) {
                (Some(toml::Value::Table(bt)), toml::Value::Table(ot)) => rec(bt, ot),
                (_, v) => {
                    b.insert(k, v);
                }
            }
        }
    }
    let mut b: toml::Table = base.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let o: toml::Table = overlay.parse().map_err(|e: toml::de::Error| e.to_string())?;
    rec(&mut b, o);
    Ok(toml::to_string(&b).expect("table serializes"))
}

fn build_setup(params: SetupParams<f64>) -> Result<ProblemSetup<f64>, Failure> {
    params.build().map_err(Failure::from)
}

fn load_control(path: &str, setup: &ProblemSetup<f64>) -> Result<ControlField<f64>, Failure> {
    let p = Path::new(path);
    let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
    read_control(&text, setup.mesh()).map_err(|e| Failure::Config(format!("{path}: {e}")))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Outcome {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn simulate(cfg: &RunConfig, out: &Path) -> Outcome {
    let t0 = Instant::now();
    let setup = build_setup(cfg.setup_params().map_err(Failure::Config)?)?;
    let u = match &cfg.simulate.control {
        Some(path) => load_control(path, &setup)?,
        None => ControlField::zeros(setup.mesh()),
    };
    let traj = integrate(&setup, &u)?;
    write_file(&out.join("trajectory.csv"), |w| write_trajectory(w, &traj))?;
    let finals: Vec<[f64; 3]> = traj.final_states().iter().map(|s| s.r.0).collect();
    let summary = json!({
        "command": "simulate",
        "steps": setup.steps,
        "final_positions": finals,
        "min_margin": traj.min_margin(&setup),
        "wall_time_s": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("json serializes"));
    Ok(())
}

fn target(cfg: &RunConfig, setup: &ProblemSetup<f64>) -> Result<Vec3<f64>, Failure> {
    match cfg.objective.target {
        Some(t) => Ok(Vec3(t)),
        None => Ok(reference_target(setup, Vec3(cfg.objective.reference_field), cfg.objective.tracked)?),
    }
}

fn optimize(cfg: &RunConfig, out: &Path) -> Outcome {
    let t0 = Instant::now();
    let setup = build_setup(cfg.setup_params().map_err(Failure::Config)?)?;
    let opt = cfg.optimizer_config().map_err(Failure::Config)?;
    let r_d = target(cfg, &setup)?;
    let mut spec = ObjectiveSpec::new(r_d, cfg.objective.alpha, 0.0);
    spec.tracked = cfg.objective.tracked;
    spec.running = cfg.running_cost();
    let obj = Objective::new(&setup, spec)?;
    let scales = obj.scales;
    let u_init = match &cfg.optimize.initial_control {
        Some(path) => scales.control_from_si(&load_control(path, &setup)?),
        None => vec![0.0; obj.dimension()],
    };
    let mut problem = SteeringProblem::new(obj);
    let wanted: Vec<usize> = cfg
        .optimize
        .snapshots
        .iter()
        .filter_map(|s| match s {
            Snapshot::Iteration(i) => Some(*i),
            Snapshot::Final => None,
        })
        .collect();
    let mut saved: Vec<(usize, Vec<f64>)> = Vec::new();
    let state = optimize_with(&mut problem, &opt, u_init, |entry, u| {
        if wanted.contains(&entry.iter) {
            saved.push((entry.iter, u.to_vec()));
        }
    })?;

    let last_iter = state.iterations();
    if cfg.optimize.snapshots.contains(&Snapshot::Final) {
        saved.push((usize::MAX, state.u.clone()));
    }
    for (iter, u) in &saved {
        let name =
            if *iter == usize::MAX { "trajectory_final.csv".to_string() } else { format!("trajectory_iter_{iter:04}.csv") };
        let traj = integrate(&setup, &scales.control_to_si(u))?;
        write_file(&out.join(name), |w| write_trajectory(w, &traj))?;
    }
    write_file(&out.join("convergence.csv"), |w| write_convergence(w, &state.log))?;
    let u_si = scales.control_to_si(&state.u);
    write_file(&out.join("control.csv"), |w| write_control(w, setup.mesh(), &u_si))?;

    let final_pos = integrate(&setup, &u_si)?.final_states()[cfg.objective.tracked].r;
    let termination = match &state.termination {
        Termination::Converged => "converged".to_string(),
        Termination::IterationBudget => "iteration budget exhausted".to_string(),
        Termination::RoundBudget => "barrier round budget exhausted".to_string(),
        Termination::LineSearchFailure { backtracks } => format!("line search failed after {backtracks} backtracks"),
    };
    let summary = json!({
        "command": "optimize",
        "termination": termination,
        "iterations": last_iter,
        "relative_error": state.last.relative_error,
        "final_position": final_pos.0,
        "target": r_d.0,
        "f_initial": state.log.first().map(|e| e.f_value),
        "f_final": state.log.last().map(|e| e.f_value),
        "barrier_mu": state.barrier_mu,
        "min_margin": state.log.iter().map(|e| e.min_margin).fold(f64::INFINITY, f64::min),
        "wall_time_s": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("json serializes"));
    match state.termination {
        Termination::Converged => Ok(()),
        _ => Err(Failure::Solver(termination)),
    }
}

fn check_gradient(cfg: &RunConfig, out: &Path, broken: bool) -> Outcome {
    let cg = &cfg.check_gradient;
    let mut params = cfg.setup_params().map_err(Failure::Config)?;
    params.end_time = params.time_step * cg.steps as f64;
    params.cg_tolerance = cg.cg_tolerance;
    let setup = build_setup(params)?;
    let r_d = match cfg.objective.target {
        Some(t) => Vec3(t),
        None => reference_target(&setup, Vec3(cfg.objective.reference_field), cfg.objective.tracked)?,
    };
    let mut spec = ObjectiveSpec::new(r_d, cfg.objective.alpha, cg.barrier);
    spec.tracked = cfg.objective.tracked;
    spec.running = cfg.running_cost();
    let obj = Objective::new(&setup, spec)?;
    let n = obj.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for _ in 0..cg.controls {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-cg.amplitude..=cg.amplitude)).collect();
        let (rec, traj) = obj.eval_with_trajectory(&u)?;
        let traj = match traj {
            Some(t) if rec.feasible => t,
            _ => return Err(Failure::Infeasible("random control is infeasible; lower check_gradient.amplitude".into())),
        };
        let mut grad = obj.adjoint_gradient(&u, &traj)?;
        if broken {
            grad.iter_mut().for_each(|g| *g *= 1.001);
        }
        let scale = u.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-2);
        for _ in 0..cg.directions {
            let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v /= norm);
            let adjoint: f64 = grad.iter().zip(&d).map(|(g, v)| g * v).sum();
            let fd = fd_directional(|x| Ok(obj.eval(x)?.merit), &u, &d, scale)?.value;
            let rel_err = (adjoint - fd).abs() / fd.abs();
            rows.push(GradientRow { direction_id: rows.len(), adjoint, fd, rel_err });
        }
    }
    write_file(&out.join("gradient_check.csv"), |w| write_gradient_check(w, &rows))?;
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    println!("{}", json!({ "command": "check-gradient", "directions": rows.len(), "max_rel_err": worst }));
    if rows.iter().all(|r| r.rel_err < cg.tolerance) {
        Ok(())
    } else {
        Err(Failure::Verification(format!("max relative error {worst:e} exceeds {:e}", cg.tolerance)))
    }
}

fn convergence_study(cfg: &RunConfig, out: &Path) -> Outcome {
    let cs = &cfg.convergence_study;
    let [lo, hi] = cs.ratio_range;
    let mut ok = true;

    let harmonic = |x: Vec3<f64>| x[0] * x[0] - x[1] * x[1];
    let mut fem = Vec::new();
    for &n in &cs.fem_nodes {
        let sys = assemble(build_mesh::<f64>(n, 1.0)?)?;
        let sol = solve(&sys, &ControlField::from_fn(sys.mesh(), harmonic), 1e-13)?;
        fem.push((n, sys.mesh().spacing(), l2_error(&sol, sys.mesh(), harmonic)));
    }
    write_file(&out.join("fem_convergence.csv"), |w| {
        writeln!(w, "nodes_per_axis,h,l2_error,ratio")?;
        for (i, (n, h, e)) in fem.iter().enumerate() {
            let ratio = if i == 0 { String::new() } else { format!("{:.16e}", fem[i - 1].2 / e) };
            writeln!(w, "{n},{h:.16e},{e:.16e},{ratio}")?;
        }
        Ok(())
    })?;
    for w in fem.windows(2) {
        let r = w[0].2 / w[1].2;
        println!("FEM {}³ → {}³: L² error ratio {r:.4}", w[0].0, w[1].0);
        ok &= (lo..=hi).contains(&r);
    }

    let mut gyro = Vec::new();
    for &dt in &cs.gyro_time_steps {
        let steps = (cs.gyro_end_time / dt).round() as usize;
        let mut p = cfg.setup_params().map_err(Failure::Config)?;
        p.nodes_per_axis = 3;
        p.self_field = false;
        p.inner_edge = p.domain_edge * 0.8;
        p.time_step = dt;
        p.end_time = dt * steps as f64;
        p.initial.truncate(1);
        p.external = FieldSample { e: Vec3::zero(), b: Vec3::new(0.0, 0.0, cs.gyro_field) };
        let setup = build_setup(p)?;
        let traj = integrate(&setup, &ControlField::zeros(setup.mesh()))?;
        let err = (traj.final_states()[0].r - gyro_exact(&setup, setup.end_time)).norm();
        gyro.push((dt, err));
    }
    write_file(&out.join("boris_convergence.csv"), |w| {
        writeln!(w, "time_step,position_error,ratio")?;
        for (i, (dt, e)) in gyro.iter().enumerate() {
            let ratio = if i == 0 { String::new() } else { format!("{:.16e}", gyro[i - 1].1 / e) };
            writeln!(w, "{dt:.16e},{e:.16e},{ratio}")?;
        }
        Ok(())
    })?;
    for w in gyro.windows(2) {
        let r = w[0].1 / w[1].1;
        println!("Boris Δt {:e} → {:e}: position error ratio {r:.4}", w[0].0, w[1].0);
        ok &= (lo..=hi).contains(&r);
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Verification(format!("an error ratio lies outside [{lo}, {hi}]")))
    }
}

/// Exact circular orbit in `B = B_z e_z` for momentum perpendicular to `e_z`.
fn gyro_exact(setup: &ProblemSetup<f64>, t: f64) -> Vec3<f64> {
    let k = &setup.constants;
    let s0 = setup.initial[0];
    let omega = k.q * setup.external.b[2] / (k.m0 * lorentz_factor(s0.p, k));
    let v0 = velocity(s0.p, k);
    let (c, s) = ((omega * t).cos(), (omega * t).sin());
    s0.r + Vec3::new((v0[0] * s + v0[1] * (1.0 - c)) / omega, (v0[1] * s - v0[0] * (1.0 - c)) / omega, 0.0)
}
