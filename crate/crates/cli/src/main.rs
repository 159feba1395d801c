//! `ionvp`: Poisson–Boltzmann solves, mollified Vlasov runs, the estimate
//! suite and the weak-solution threshold table.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 numerical
//! failure (solver breakdown, CFL violation, failed energy inequality or
//! failed verification check).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ionvp::config::KeyValues;
use ionvp::functionals::{weak_solution_threshold, write_energy_csv};
use ionvp::ivpf::{load_field, load_phase_space, save_field, save_phase_space};
use ionvp::pbsolver::manufactured_fixture;
use ionvp::verify::{run_suite, SuiteConfig, CHECK_NAMES};
use ionvp::vlasov::{
    mollifier_kernel, perturbed_maxwellian, run_with, InitialCondition, PhaseSpaceField,
    VlasovConfig, XAdvection,
};
use ionvp::{solve_pb, PbConfig, ScalarField, TorusGrid};

#[derive(Parser, Debug)]
#[command(name = "ionvp", version, about = "Poisson–Boltzmann and ionic Vlasov–Poisson numerics")]
struct Cli {
    /// Flat `key = value` config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the verification families.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve −ΔΦ = ρ − e^Φ and write Φ, e^Φ and E.
    PbSolve {
        /// `constant:<m>`, `manufactured` or `file:<path>`.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        nx: Option<usize>,
    },
    /// Run the mollified Vlasov–Poisson system from a config file.
    VpRun,
    /// Run the estimate suite.
    Verify {
        /// Restrict to the named checks (repeatable).
        #[arg(long)]
        only: Vec<String>,
    },
    /// Print the weak-solution integrability thresholds.
    Thresholds {
        #[arg(long)]
        dim: Option<u32>,
    },
}

/// Error kinds the caller can distinguish by exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => 1,
                Failure::Numerical(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<ionvp::Error>() {
            use ionvp::Error::*;
            return match e {
                LinearSolveNotConverged { .. }
                | NewtonNotConverged { .. }
                | ExponentOverflow { .. }
                | Cfl { .. }
                | VelocityBoxTooSmall { .. }
                | NonFinite { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut kv = match &cli.config {
        Some(path) => KeyValues::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => KeyValues::default(),
    };
    match cli.command {
        Command::PbSolve { init, dim, nx } => {
            if let Some(v) = init {
                kv.set("init", v);
            }
            if let Some(v) = dim {
                kv.set("dim", v.to_string());
            }
            if let Some(v) = nx {
                kv.set("nx", v.to_string());
            }
            let out = require_out(cli.out.as_deref())?;
            pb_solve(&kv, out)
        }
        Command::VpRun => {
            let out = require_out(cli.out.as_deref())?;
            vp_run(&kv, out)
        }
        Command::Verify { only } => {
            if let Some(seed) = cli.seed {
                kv.set("seed", seed.to_string());
            }
            verify(&kv, &only, cli.out.as_deref())
        }
        Command::Thresholds { dim } => thresholds(dim),
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    let out = out.ok_or_else(|| usage("this command needs --out <dir>"))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

const PB_KEYS: [&str; 7] = [
    "init",
    "dim",
    "nx",
    "newton_tol",
    "max_newton_iters",
    "armijo_c",
    "backtrack_factor",
];

fn pb_config(kv: &KeyValues) -> Result<PbConfig> {
    let d = PbConfig::default();
    let cfg = PbConfig {
        newton_tol: kv.get_or("newton_tol", d.newton_tol)?,
        max_newton_iters: kv.get_or("max_newton_iters", d.max_newton_iters)?,
        armijo_c: kv.get_or("armijo_c", d.armijo_c)?,
        backtrack_factor: kv.get_or("backtrack_factor", d.backtrack_factor)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn pb_density(kv: &KeyValues) -> Result<ScalarField> {
    let init = kv.get("init").ok_or_else(|| usage("pb-solve needs --init (constant:<m>, manufactured or file:<path>)"))?;
    let dim: Option<usize> = kv.get("dim").map(|_| kv.get_or("dim", 1)).transpose()?;
    let nx: Option<usize> = kv.get("nx").map(|_| kv.get_or("nx", 64)).transpose()?;
    if let Some(path) = init.strip_prefix("file:") {
        let rho = load_field(Path::new(path)).with_context(|| format!("reading density {path}"))?;
        let g = rho.grid();
        if dim.is_some_and(|d| d != g.dim()) || nx.is_some_and(|n| n != g.n()) {
            return Err(usage(format!(
                "density file is {}-dimensional with n = {}, which conflicts with --dim/--nx",
                g.dim(),
                g.n()
            )));
        }
        return Ok(rho);
    }
    let grid = TorusGrid::new(dim.unwrap_or(1), nx.unwrap_or(64))?;
    if init == "manufactured" {
        return Ok(manufactured_fixture(grid).0);
    }
    if let Some(m) = init.strip_prefix("constant:") {
        let m: f64 = m.parse().map_err(|_| usage(format!("invalid constant `{m}`")))?;
        if !(m > 0.0 && m.is_finite()) {
            return Err(usage(format!("constant density must be positive, got {m}")));
        }
        return Ok(ScalarField::constant(grid, m));
    }
    Err(usage(format!("unknown init `{init}` (expected constant:<m>, manufactured or file:<path>)")))
}

fn pb_solve(kv: &KeyValues, out: &Path) -> Result<()> {
    kv.reject_unknown(&PB_KEYS)?;
    let cfg = pb_config(kv)?;
    let rho = pb_density(kv)?;
    let sol = solve_pb(&rho, &cfg).context("Poisson–Boltzmann solve failed")?;
    save_field(&out.join("phi.ivpf"), &sol.phi)?;
    save_field(&out.join("exp_phi.ivpf"), &sol.electron_density)?;
    for (axis, c) in sol.e_field.components().iter().enumerate() {
        save_field(&out.join(format!("e_{}.ivpf", ["x", "y", "z"][axis])), c)?;
    }
    let line = sol.diagnostics_line();
    fs::write(out.join("diagnostics.txt"), format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}

const VP_KEYS: [&str; 18] = [
    "dim",
    "nx",
    "nv",
    "v_extent",
    "dt",
    "t_end",
    "n_reg",
    "sample_every",
    "init",
    "cfl_safety",
    "energy_tol",
    "x_advection",
    "mollify_initial",
    "snapshots",
    "newton_tol",
    "max_newton_iters",
    "armijo_c",
    "backtrack_factor",
];

fn vp_run(kv: &KeyValues, out: &Path) -> Result<()> {
    kv.reject_unknown(&VP_KEYS)?;
    let pcfg = pb_config(kv)?;
    let d = VlasovConfig::default();
    let vcfg = VlasovConfig {
        dt: kv.get_or("dt", d.dt)?,
        t_end: kv.get_or("t_end", d.t_end)?,
        n_reg: kv.get_or("n_reg", d.n_reg)?,
        cfl_safety: kv.get_or("cfl_safety", d.cfl_safety)?,
        sample_every: kv.get_or("sample_every", d.sample_every)?,
        energy_tol: kv.get_or("energy_tol", d.energy_tol)?,
        x_advection: kv.get_or("x_advection", XAdvection::default())?,
    };
    vcfg.validate()?;
    let v_extent: f64 = kv.get_or("v_extent", 6.0)?;
    let init: InitialCondition = kv.get_or("init", InitialCondition::Maxwellian)?;
    let mut f0 = match init {
        InitialCondition::File(path) => {
            let dump = load_phase_space(&path).with_context(|| format!("reading {}", path.display()))?;
            PhaseSpaceField::from_dump(dump, v_extent)?
        }
        InitialCondition::Maxwellian | InitialCondition::PerturbedMaxwellian { .. } => {
            let (amplitude, mode) = match init {
                InitialCondition::PerturbedMaxwellian { amplitude, mode } => (amplitude, mode),
                _ => (0.0, 1),
            };
            let grid = TorusGrid::new(kv.get_or("dim", 1)?, kv.get_or("nx", 64)?)?;
            perturbed_maxwellian(grid, v_extent, kv.get_or("nv", 128)?, amplitude, mode)?
        }
    };
    if kv.get_or("mollify_initial", false)? {
        f0 = f0.mollify_space(&mollifier_kernel(*f0.spatial_grid(), vcfg.n_reg)?)?;
    }
    let keep_snapshots: bool = kv.get_or("snapshots", true)?;

    let output = run_with(&f0, &vcfg, &pcfg, keep_snapshots).context("Vlasov run failed")?;
    let mut csv = Vec::new();
    write_energy_csv(&mut csv, &output.csv_rows())?;
    fs::write(out.join("energy.csv"), csv)?;
    for (step, snap) in &output.snapshots {
        save_phase_space(&out.join(format!("snapshot_{step:06}.ivpf")), &snap.to_dump(*step))?;
    }
    let l = &output.ledger;
    let summary = format!(
        "steps={} max_drift={:.6e} energy_ok={} mass_defect={:.3e} outflow={:.3e} clipped={:.3e} \
         max_l2_ratio={:.12} min_value={:.3e}",
        vcfg.steps(),
        l.max_energy_drift,
        l.energy_ok,
        l.mass_defect(),
        l.outflow,
        l.clipped,
        l.max_l2_ratio,
        l.min_value
    );
    fs::write(out.join("ledger.txt"), format!("{summary}\n"))?;
    println!("{summary}");
    if !l.energy_ok {
        return Err(Failure::Numerical(format!(
            "energy grew by more than {} relative to its initial value",
            vcfg.energy_tol
        ))
        .into());
    }
    Ok(())
}

fn verify(kv: &KeyValues, only: &[String], out: Option<&Path>) -> Result<()> {
    let cfg = SuiteConfig::from_key_values(kv)?;
    if let Some(bad) = only.iter().find(|n| !CHECK_NAMES.contains(&n.as_str())) {
        return Err(usage(format!("unknown check `{bad}` (expected one of {})", CHECK_NAMES.join(", "))));
    }
    let only: Vec<&str> = only.iter().map(String::as_str).collect();
    let report = run_suite(&cfg, &only)?;
    let summary = report.summary();
    print!("{summary}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut csv = fs::File::create(dir.join("report.csv"))?;
        report.write_csv(&mut csv)?;
        csv.flush()?;
        fs::write(dir.join("summary.txt"), &summary)?;
    }
    if !report.passed() {
        return Err(Failure::Numerical("one or more checks failed".into()).into());
    }
    Ok(())
}

fn thresholds(dim: Option<u32>) -> Result<()> {
    match dim {
        Some(d) if d < 2 => Err(usage(format!("thresholds need dimension at least 2, got {d}"))),
        Some(d) => {
            println!("{:.7}", weak_solution_threshold(d)?);
            Ok(())
        }
        None => {
            println!("d,q_threshold");
            for (label, d) in [("2", 2), ("3", 3), ("4+", 4)] {
                println!("{label},{:.7}", weak_solution_threshold(d)?);
            }
            Ok(())
        }
    }
}
