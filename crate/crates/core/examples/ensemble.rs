//! Small stochastic ensemble with a closing-time histogram written to disk.

use std::path::Path;

use schfem::driver::{run_ensemble, RunConfig};
use schfem::io::write_outputs;

fn main() -> schfem::Result<()> {
    let mut cfg = RunConfig {
        eps: 1.0 / 16.0,
        resolution: 32,
        eig_every: 0,
        noise_defects: false,
        paths: 4,
        ..RunConfig::default()
    };
    cfg.adapt.tol = 0.5;
    let s = run_ensemble(&cfg)?;
    println!("closing times {:?}, mean {:.5}", s.closing_times, s.mean_closing);
    for (lo, hi, c) in &s.histogram {
        println!("[{lo:.5}, {hi:.5}) {}", "#".repeat(*c));
    }
    let files = write_outputs(&s.results, Some(&s), Path::new("out/ensemble_example"), false)?;
    println!("wrote {} files", files.len());
    Ok(())
}
