use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgAction, Parser, Subcommand};

use schfem::config::{apply_overrides, parse_unchecked, print_config};
use schfem::driver::{initial_condition, run_ensemble, run_path, RunConfig};
use schfem::fem::{FeFunction, Space};
use schfem::io::{read_snapshots, recompute_eta_adapt, write_outputs};
use schfem::mesh::{build_initial_mesh, MarkSet};
use schfem::spectral::{dense_principal_eigenvalue, principal_eigenvalue};
use schfem::{Error, Result};

#[derive(Parser)]
#[command(name = "schfem", version, about = "Adaptive FEM for the stochastic Cahn-Hilliard equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// INI-style configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set sigma=5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More output (repeatable)
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path and write its outputs
    Run {
        #[arg(long, default_value_t = 0)]
        path_index: u64,
        /// Also write legacy VTK files of the snapshots
        #[arg(long)]
        vtk: bool,
    },
    /// Simulate independent paths and aggregate closing times and bounds
    Ensemble {
        #[arg(long)]
        vtk: bool,
    },
    /// Compare the iterative principal eigenvalue with a dense solve
    EigAudit {
        /// Initial mesh resolution (keep the vertex count small)
        #[arg(long, default_value_t = 8)]
        resolution: usize,
    },
    /// Recompute indicators from the snapshots of a path directory
    Estimate {
        /// Directory holding `snapshots.csv`
        dir: PathBuf,
    },
    /// Audit the initial mesh and a few refine/coarsen cycles
    MeshAudit,
    /// Print the effective configuration
    Config,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    let mut cfg = parse_unchecked(&text)?;
    apply_overrides(&mut cfg, &cli.overrides)?;
    if let Some(p) = cli.paths {
        cfg.paths = p;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(cfg: &RunConfig, out: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    let p = out.join("config.ini");
    std::fs::write(&p, print_config(cfg)).map_err(|e| Error::Io { path: p, source: e })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Config => print!("{}", print_config(&cfg)),
        Command::Run { path_index, vtk } => {
            let r = run_path(&cfg, *path_index)?;
            if cli.verbose > 0 {
                for row in &r.series {
                    eprintln!(
                        "step {:5} t {:.6e} tau {:.3e} dofs {:6} newton {:2} lambda {:.4e} eta {:.4e}",
                        row.step, row.t, row.tau, row.dofs, row.newton_iterations, row.lambda, row.eta_adapt
                    );
                }
            }
            write_config(&cfg, &cli.out)?;
            let files = write_outputs(std::slice::from_ref(&r), None, &cli.out, *vtk)?;
            let last = r.series.last();
            println!("steps {}", r.series.len());
            println!("final dofs {}", last.map_or(0, |s| s.dofs));
            println!("closing (center sign) {:?}", r.closing.center_time);
            println!("closing (lambda peak) {:?}", r.closing.lambda_peak);
            println!("linear bound {:e}", r.report.linear.total);
            println!("nonlinear bound {:e} (condition holds: {})", r.report.nonlinear.r_hat, r.report.nonlinear.certified);
            println!("{} files in {}", files.len(), cli.out.display());
        }
        Command::Ensemble { vtk } => {
            let s = run_ensemble(&cfg)?;
            write_config(&cfg, &cli.out)?;
            write_outputs(&s.results, Some(&s), &cli.out, *vtk)?;
            println!("paths {} completed {} failed {}", s.paths, s.results.len(), s.failures.len());
            println!("closed {} mean closing time {:e}", s.closing_times.len(), s.mean_closing);
            println!("mean linear bound {:e}, eps_tilde {:e}", s.mean_r_tilde, s.eps_tilde);
            println!("total bound {:e} (certified fraction {})", s.total_bound, s.certified_fraction);
            if !s.failures.is_empty() {
                for (i, m) in &s.failures {
                    eprintln!("path {i}: {m}");
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::EigAudit { resolution } => {
            let space = Space::new(Arc::new(build_initial_mesh(cfg.domain(), *resolution)?));
            let mesh = space.mesh();
            let eps = cfg.eps;
            let states = [
                ("u=1", FeFunction::constant(mesh, 1.0)),
                ("u=0", FeFunction::constant(mesh, 0.0)),
                ("annulus", initial_condition(mesh, cfg.r1, cfg.r2, eps)?),
            ];
            println!("vertices {}", mesh.num_vertices());
            let mut worst = 0.0f64;
            for (name, u) in &states {
                let it = principal_eigenvalue(&space, u, eps, None, &cfg.eigen)?;
                let dense = dense_principal_eigenvalue(&space, u, eps)?;
                let rel = (it.lambda - dense).abs() / dense.abs().max(1e-300);
                worst = worst.max(rel);
                println!("{name:8} lobpcg {:.12e} dense {:.12e} rel {:.2e} iterations {}", it.lambda, dense, rel, it.iterations);
            }
            if worst > 1e-6 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Estimate { dir } => {
            let snaps = read_snapshots(dir, cfg.domain())?;
            println!("index,step,t,eta_adapt_stored,eta_adapt_recomputed,abs_diff");
            let mut worst = 0.0f64;
            for s in &snaps {
                let e = recompute_eta_adapt(s, cfg.eps)?;
                worst = worst.max((e - s.eta_adapt).abs());
                println!("{},{},{:?},{:?},{:?},{:e}", s.index, s.step, s.t, s.eta_adapt, e, (e - s.eta_adapt).abs());
            }
            if worst > 1e-12 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::MeshAudit => {
            let mesh = build_initial_mesh(cfg.domain(), cfg.resolution)?;
            let mut m = mesh;
            let mut ok = true;
            for round in 0..4 {
                let a = m.audit();
                ok &= a.ok();
                println!(
                    "round {round} vertices {} triangles {} conforming {} min angle {:.2} area {:.15}",
                    m.num_vertices(),
                    m.num_triangles(),
                    a.conforming,
                    a.min_angle_deg,
                    a.total_area
                );
                let marks = MarkSet::refine_only((0..m.num_triangles()).filter(|t| t % 7 == 0));
                m = m.refine(&marks)?;
            }
            let c = m.coarsen(&MarkSet::coarsen_only(0..m.num_triangles()))?;
            let a = c.mesh.audit();
            ok &= a.ok();
            println!("coarsened: merged {} skipped {} triangles {} conforming {}", c.merged, c.skipped, c.mesh.num_triangles(), a.conforming);
            if !ok {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
