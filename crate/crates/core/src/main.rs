//! Command-line front end: forward solves, reconstructions, gradient
//! checks, the benchmark table and the convergence studies.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 numerical failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coeffrec::config::RunConfig;
use coeffrec::error::Error;
use coeffrec::fem::{AnalyticField, AssemblyMode, CoefficientField, FeFunction};
use coeffrec::forward::{solve_elliptic, solve_parabolic, EllipticProblem, ParabolicProblem};
use coeffrec::harness::{
    fit_slope, gradient_check_suite, run_cell, run_table, study_fem_h, study_fem_tau,
    study_noise, study_quad_n, write_table_csv, write_table_markdown, Method,
};
use coeffrec::inverse::GradientMode;
use coeffrec::mesh::Point;
use coeffrec::neural::ProjectedNetwork;

#[derive(Parser)]
#[command(name = "coeffrec", about = "Diffusion coefficient reconstruction toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Seed override (falls back to COEFFREC_SEED, then the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker pool size for batch runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the forward PDE with the example's true coefficient.
    SolveForward {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full pipeline: synthesize data, train, report metrics.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured gradient mode (discrete | riesz).
        #[arg(long)]
        gradient_mode: Option<String>,
    },
    /// Finite-difference validation of the adjoint gradient.
    Gradcheck {
        /// Damage one gradient component (negative control).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Run the full benchmark table across all five examples.
    ReproduceTable1 {
        /// Directory holding the five example configs.
        #[arg(long, default_value = "configs")]
        configs: PathBuf,
    },
    /// Convergence and sensitivity studies.
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
        /// Base config for the reconstruction-driven studies.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    /// Elliptic L2 error under mesh refinement.
    FemH,
    /// Parabolic L2 error under time-step refinement.
    FemTau,
    /// Reconstruction error across quadrature levels.
    QuadN,
    /// Reconstruction error across noise levels.
    NoiseDelta,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config { .. } | Error::InvalidArgument { .. } | Error::Io { .. } => 2,
                Error::SolverFailure { .. } | Error::Divergence { .. } => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn resolve_seed(cli: &Cli, cfg_seed: u64) -> coeffrec::Result<u64> {
    if let Some(s) = cli.seed {
        return Ok(s);
    }
    match std::env::var("COEFFREC_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::config(format!("COEFFREC_SEED is not an integer: '{v}'"))),
        Err(_) => Ok(cfg_seed),
    }
}

fn info(cli: &Cli, msg: &str) {
    if !cli.quiet {
        println!("{msg}");
    }
}

fn run(cli: &Cli) -> coeffrec::Result<ExitCode> {
    std::fs::create_dir_all(&cli.out)?;
    match &cli.cmd {
        Cmd::SolveForward { config } => cmd_solve_forward(cli, config),
        Cmd::Reconstruct {
            config,
            gradient_mode,
        } => cmd_reconstruct(cli, config, gradient_mode.as_deref()),
        Cmd::Gradcheck { corrupt_gradient } => cmd_gradcheck(cli, *corrupt_gradient),
        Cmd::ReproduceTable1 { configs } => cmd_reproduce_table1(cli, configs),
        Cmd::Study { kind, config } => cmd_study(cli, *kind, config.as_deref()),
    }
}

fn cmd_solve_forward(cli: &Cli, config: &Path) -> coeffrec::Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let ex = cfg.example;
    let mesh = ex.mesh(cfg.mesh_m)?;
    let q = ex.q_true_field();
    let mode = match cfg.quad_level {
        None => AssemblyMode::Exact,
        Some(n) => AssemblyMode::Quadrature(n),
    };
    match ex.time {
        None => {
            let f = ex.f_static();
            let u = solve_elliptic(&EllipticProblem {
                mesh: &mesh,
                q: &q,
                f: &f,
                mode,
            })?;
            let path = cli.out.join("state.csv");
            u.export_csv(&mesh, &path)?;
            info(cli, &format!("wrote {}", path.display()));
        }
        Some((_, t_final)) => {
            let u0 = AnalyticField::new(|x: &Point<f64>| ex.u0_value(x));
            let src = move |t: f64, x: &Point<f64>| ex.f_time(t, x);
            let sol = solve_parabolic(&ParabolicProblem {
                mesh: &mesh,
                q: &q,
                f: &src,
                u0: &u0,
                t_final,
                n_steps: cfg.n_steps,
                mode,
            })?;
            let path = cli.out.join("states.csv");
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "time,node,x0,x1,u")?;
            let tau = t_final / cfg.n_steps as f64;
            for (n, state) in sol.states.iter().enumerate() {
                let t = tau * n as f64;
                for (i, &v) in state.iter().enumerate() {
                    let p = mesh.node(i);
                    writeln!(f, "{t:.8e},{i},{:.8e},{:.8e},{v:.12e}", p[0], p[1])?;
                }
            }
            info(cli, &format!("wrote {}", path.display()));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_reconstruct(
    cli: &Cli,
    config: &Path,
    gradient_mode: Option<&str>,
) -> coeffrec::Result<ExitCode> {
    let mut cfg = RunConfig::load(config)?;
    cfg.seed = resolve_seed(cli, cfg.seed)?;
    if let Some(gm) = gradient_mode {
        cfg.gradient_mode = match gm {
            "discrete" => GradientMode::DiscreteAdjoint,
            "riesz" => GradientMode::RieszSmoothed,
            other => return Err(Error::config(format!("unknown gradient mode '{other}'"))),
        };
    }
    let exp = cfg.experiment();
    let log_path = cli.out.join("training_log.csv");
    info(
        cli,
        &format!(
            "reconstructing {} with the {} method (seed {})",
            exp.example.name,
            exp.method.label(),
            exp.seed
        ),
    );
    let out = run_cell(&exp, Some(&log_path))?;

    let mesh = exp.example.mesh(exp.m)?;
    let coeff_path = cli.out.join("coefficient.csv");
    if let Some(net) = &out.result.network {
        net.save(&cli.out.join("checkpoint.txt"))?;
        let field = ProjectedNetwork {
            params: net,
            bounds: exp.example.box_bounds(),
        };
        let values: Vec<f64> = (0..mesh.node_count())
            .map(|i| field.value(0, &mesh.node(i)))
            .collect();
        FeFunction { values }.export_csv(&mesh, &coeff_path)?;
    } else if let Some(q) = &out.result.nodal {
        q.export_csv(&mesh, &coeff_path)?;
    }

    let metrics_path = cli.out.join("metrics.csv");
    let mut f = std::fs::File::create(&metrics_path)?;
    writeln!(f, "example,method,noise_rel,gamma,error,delta,iterations,final_loss")?;
    writeln!(
        f,
        "{},{},{:.3e},{:.3e},{:.8e},{:.8e},{},{:.12e}",
        exp.example.name,
        exp.method.label(),
        exp.noise_rel,
        exp.gamma,
        out.error,
        out.delta,
        out.iterations,
        out.loss_final
    )?;
    info(
        cli,
        &format!(
            "relative error {:.4e} after {} iterations ({:.1}s)",
            out.error, out.iterations, out.wall_secs
        ),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(_cli: &Cli, corrupt: bool) -> coeffrec::Result<ExitCode> {
    let report = gradient_check_suite(corrupt)?;
    println!(
        "gradient check: {} cases, max relative discrepancy {:.3e}",
        report.cases, report.max_rel
    );
    if report.max_rel <= 1e-4 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check FAILED (tolerance 1e-4)");
        Ok(ExitCode::from(1))
    }
}

fn cmd_reproduce_table1(cli: &Cli, configs: &Path) -> coeffrec::Result<ExitCode> {
    let names = [
        "sine1d",
        "sine2d",
        "sine1d-time",
        "sine2d-time",
        "bump1d-partial",
    ];
    let mut cells = Vec::new();
    for name in names {
        let mut cfg = RunConfig::load(&configs.join(format!("{name}.cfg")))?;
        cfg.seed = resolve_seed(cli, cfg.seed)?;
        cells.extend(cfg.table_cells()?);
    }
    info(
        cli,
        &format!("running {} cells with {} worker(s)", cells.len(), cli.jobs),
    );
    let rows = run_table(&cells, cli.jobs);
    let csv = cli.out.join("table1.csv");
    let md = cli.out.join("table1.md");
    write_table_csv(&rows, &csv)?;
    write_table_markdown(&rows, &md)?;
    info(cli, &format!("wrote {} and {}", csv.display(), md.display()));
    let failures = rows.iter().filter(|c| c.failure.is_some()).count();
    if failures > 0 {
        eprintln!("{failures} cell(s) failed; see the status column");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_study(cli: &Cli, kind: StudyKind, config: Option<&Path>) -> coeffrec::Result<ExitCode> {
    let load_base = |required_parabolic: Option<bool>| -> coeffrec::Result<RunConfig> {
        let path = config
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("configs/sine1d.cfg"));
        let mut cfg = RunConfig::load(&path)?;
        cfg.seed = resolve_seed(cli, cfg.seed)?;
        if let Some(par) = required_parabolic {
            if cfg.example.is_parabolic() != par {
                return Err(Error::config(format!(
                    "study needs a {} example config",
                    if par { "parabolic" } else { "static" }
                )));
            }
        }
        Ok(cfg)
    };
    match kind {
        StudyKind::FemH => {
            let rows = study_fem_h(&[8, 16, 32, 64])?;
            let slope = fit_slope(&rows);
            let path = cli.out.join("study_fem_h.csv");
            coeffrec::harness::write_study_csv("h,l2_error", &rows, Some(slope), &path)?;
            info(cli, &format!("slope {slope:.3}; wrote {}", path.display()));
        }
        StudyKind::FemTau => {
            let rows = study_fem_tau(128, &[8, 16, 32, 64])?;
            let slope = fit_slope(&rows);
            let path = cli.out.join("study_fem_tau.csv");
            coeffrec::harness::write_study_csv("tau,l2_error", &rows, Some(slope), &path)?;
            info(cli, &format!("slope {slope:.3}; wrote {}", path.display()));
        }
        StudyKind::QuadN => {
            let cfg = load_base(None)?;
            let mut exp = cfg.experiment();
            exp.method = Method::Hybrid;
            let rows = study_quad_n(&exp, &[0, 1, 2, 3, 4, 5])?;
            let path = cli.out.join("study_quad_n.csv");
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "level,error")?;
            for (n, e) in &rows {
                writeln!(f, "{n},{e:.8e}")?;
            }
            info(cli, &format!("wrote {}", path.display()));
        }
        StudyKind::NoiseDelta => {
            let cfg = load_base(None)?;
            if cfg.noise_levels.is_empty() || cfg.gamma_hybrid.len() != cfg.noise_levels.len() {
                return Err(Error::config(
                    "noise study needs noise_levels and gamma_hybrid schedules",
                ));
            }
            let schedule: Vec<(f64, f64)> = cfg
                .noise_levels
                .iter()
                .copied()
                .zip(cfg.gamma_hybrid.iter().copied())
                .collect();
            let mut exp = cfg.experiment();
            exp.method = Method::Hybrid;
            let rows = study_noise(&exp, &schedule)?;
            let path = cli.out.join("study_noise_delta.csv");
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "noise_rel,delta,error")?;
            for (eps, d, e) in &rows {
                writeln!(f, "{eps:.3e},{d:.8e},{e:.8e}")?;
            }
            info(cli, &format!("wrote {}", path.display()));
        }
    }
    Ok(ExitCode::SUCCESS)
}
