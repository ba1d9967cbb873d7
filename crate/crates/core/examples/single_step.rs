//! One implicit step from the concentric circles, with Newton history and mass.

use std::sync::Arc;

use schfem::driver::initial_condition;
use schfem::fem::Space;
use schfem::mesh::{build_initial_mesh, Square};
use schfem::noise::{ModeLoads, NoiseModel, NoisePath};
use schfem::schemes::{advance, Discretization, NewtonConfig, StepInput, StepOutcome, TimeState};

fn main() -> schfem::Result<()> {
    let eps = 1.0 / 16.0;
    let mesh = Arc::new(build_initial_mesh(Square::centered(1.0), 32)?);
    let space = Arc::new(Space::new(mesh.clone()));
    let model = NoiseModel::reference(1.0);
    let state = TimeState::initial(&space, initial_condition(&mesh, 0.2, 0.55, eps)?, eps, model.r())?;
    let disc = Discretization::new(space.clone())?;
    let mut path = NoisePath::new(&model, 1, 0);
    let tau = 1e-5;
    let d = path.propose(tau)?;
    let load = ModeLoads::new(&model, &space).noise_load(&model, &d, 0.0);
    let input = StepInput {
        eps,
        noise_scale: model.scale(eps),
        noise_load: &load,
        coeff_increments: &d,
        tau,
        newton: NewtonConfig::default(),
    };
    match advance(&disc, &state, &input)? {
        StepOutcome::Accepted(next, rep) => {
            println!("Newton: {} iterations, residuals {:?}", rep.iterations, rep.history);
            let dm = space.integral(&next.u.coeffs) - space.integral(&state.u.coeffs);
            println!("mass change {dm:.2e}, splitting defect {:.2e}", next.splitting_defect());
        }
        StepOutcome::Rejected(rep) => println!("rejected after {} iterations", rep.iterations),
    }
    Ok(())
}
