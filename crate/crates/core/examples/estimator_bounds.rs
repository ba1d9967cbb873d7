//! Linear, nonlinear and total bounds from a short adaptive path.

use schfem::driver::{run_path, RunConfig};
use schfem::estimators::total_bound;

fn main() -> schfem::Result<()> {
    let mut cfg = RunConfig { eps: 1.0 / 8.0, resolution: 16, t_end: 1e-3, ..RunConfig::default() };
    cfg.adapt.tol = 1.0;
    let r = run_path(&cfg, 0)?;
    let rep = &r.report;
    println!("R~ = {:.4e} (noise {:.3e}, residual {:.3e}, differences {:.3e}, hoelder {:.3e})",
        rep.linear.total, rep.linear.noise, rep.linear.residual, rep.linear.differences, rep.linear.hoelder);
    let nl = &rep.nonlinear;
    println!("R^ = {:.4e}, prefactor {:.3e}, certified {}, dominant {}", nl.r_hat, nl.prefactor, nl.certified, nl.dominant);
    let tb = total_bound(rep.linear.total, nl.r_hat, &cfg.estimator);
    println!("total {:.4e} with eps~ {:.3e}", tb.total, tb.eps_tilde);
    Ok(())
}
