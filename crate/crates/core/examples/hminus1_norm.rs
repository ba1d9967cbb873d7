//! Discrete H^{-1} norm of a cosine mode against its closed form.

use std::f64::consts::PI;
use std::sync::Arc;

use schfem::fem::{FeFunction, Space};
use schfem::mesh::{build_initial_mesh, Square};

fn main() -> schfem::Result<()> {
    let exact = 2f64.sqrt() / PI;
    for res in [8, 16, 32, 64] {
        let mesh = Arc::new(build_initial_mesh(Square::centered(1.0), res)?);
        let v = FeFunction::interpolate(&mesh, |x| (PI * (x[0] - 1.0)).cos());
        let space = Space::new(mesh);
        let mean = space.integral(&v.coeffs) / space.area();
        let v0: Vec<f64> = v.coeffs.iter().map(|c| c - mean).collect();
        let n = space.hminus1_norm_sq(&v0)?.sqrt();
        println!("res {res:3}: |v|_-1 = {n:.8}  error {:.3e}", (n - exact).abs());
    }
    Ok(())
}
