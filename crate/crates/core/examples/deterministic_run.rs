//! Adaptive deterministic run through the closing of the inner circle.

use schfem::driver::{run_path, RunConfig};

fn main() -> schfem::Result<()> {
    let mut cfg = RunConfig { eps: 1.0 / 16.0, resolution: 32, eig_every: 4, ..RunConfig::default() };
    cfg.noise.sigma = 0.0;
    cfg.adapt.tol = 0.5;
    let r = run_path(&cfg, 0)?;
    for row in r.series.iter().step_by(10) {
        println!("t {:.5}  dofs {:5}  Lambda {:+9.3}  u(0) {:+.3}", row.t, row.dofs, row.lambda, row.u_center);
    }
    println!("closing: {:?}", r.closing);
    Ok(())
}
