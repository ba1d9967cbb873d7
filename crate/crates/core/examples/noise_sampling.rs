//! Brownian increments of the reference noise, with a rejected step resampled by the bridge.

use schfem::noise::{NoiseModel, NoisePath};

fn main() -> schfem::Result<()> {
    let model = NoiseModel::reference(1.0);
    let (s0, s1) = model.full_sums()?;
    println!("{} modes, mode sums {s0:.4} {s1:.4}", model.r());
    let mut path = NoisePath::new(&model, 2024, 0);
    let (mut t, tau) = (0.0, 1e-3);
    let d = path.propose(tau)?;
    println!("proposed over {tau:.0e}: first mode {:+.5}", d[0]);
    path.reject(tau, d);
    let half = path.propose(tau / 2.0)?;
    path.accept(t, t + tau / 2.0, half.clone());
    t += tau / 2.0;
    let rest = path.propose(tau / 2.0)?;
    println!("bridge halves: {:+.5} + {:+.5} = {:+.5}", half[0], rest[0], half[0] + rest[0]);
    path.accept(t, t + tau / 2.0, rest);
    Ok(())
}
