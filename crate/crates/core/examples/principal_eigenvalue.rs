//! Principal eigenvalue of the linearized operator for a circle of shrinking radius.

use std::sync::Arc;

use schfem::fem::{FeFunction, Space};
use schfem::mesh::{build_initial_mesh, Square};
use schfem::spectral::{principal_eigenvalue, EigenConfig};

fn main() -> schfem::Result<()> {
    let eps = 1.0 / 16.0;
    let mesh = Arc::new(build_initial_mesh(Square::centered(1.0), 48)?);
    let space = Space::new(mesh.clone());
    let mut warm: Option<FeFunction> = None;
    for r in [0.6, 0.4, 0.25, 0.15, 0.1] {
        let u = FeFunction::interpolate(&mesh, |x| ((x[0].hypot(x[1]) - r) / (2f64.sqrt() * eps)).tanh());
        let e = principal_eigenvalue(&space, &u, eps, warm.as_ref(), &EigenConfig::default())?;
        println!("radius {r:.2}: Lambda {:+10.4}  ({} iterations)", e.lambda, e.iterations);
        warm = Some(e.eigvec);
    }
    Ok(())
}
