//! Time stepping: the coupled nonlinear scheme with Newton's method, the linear
//! SPDE and random PDE sub-schemes of the splitting, the transformed scheme and
//! the Newton-count step-size rule.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{nonlinear_load, FeFunction, Space};
use crate::linalg::{norm2, norm_inf, BlockLu, BlockSolver, SparseOperator};

/// `f(u) = u³ - u`
pub fn f(u: f64) -> f64 {
    u * u * u - u
}

/// `f'(u) = 3u² - 1`
pub fn f_prime(u: f64) -> f64 {
    3.0 * u * u - 1.0
}

/// `F(u) = (u² - 1)² / 4`
pub fn double_well(u: f64) -> f64 {
    0.25 * (u * u - 1.0).powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Extra update after convergence, not counted in the report.
    pub polish: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 5e-9,
            max_iter: 50,
            polish: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Residual before each update, then the final one.
    pub history: Vec<f64>,
}

/// Mesh-level data shared by all schemes: cached operators and the symbolic
/// factorization of the 2x2 block pattern.
pub struct Discretization {
    pub space: Arc<Space>,
    block: BlockSolver,
}

impl Discretization {
    pub fn new(space: Arc<Space>) -> Result<Self> {
        let block = BlockSolver::new(space.pattern().clone())?;
        Ok(Self { space, block })
    }

    pub fn generation(&self) -> u64 {
        self.space.mesh().generation()
    }

    /// Factorization of `[[M, τK], [-εK, M]]`, the matrix of every linear scheme.
    pub fn linear_system(&self, eps: f64, tau: f64) -> Result<LinearSystem> {
        let m = self.space.mass();
        let k = self.space.stiffness();
        let lu = self.block.factor(m, &k.scaled(tau), &k.scaled(-eps), m)?;
        Ok(LinearSystem { lu, tau })
    }
}

pub struct LinearSystem {
    lu: BlockLu,
    pub tau: f64,
}

impl LinearSystem {
    pub fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.lu.solve(r1, r2)
    }
}

/// All fields of one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeState {
    pub t: f64,
    pub tau: f64,
    pub u: FeFunction,
    pub w: FeFunction,
    pub u_tilde: FeFunction,
    pub w_tilde: FeFunction,
    pub u_hat: FeFunction,
    pub w_hat: FeFunction,
    pub y: FeFunction,
    pub y_w: FeFunction,
    /// Discrete accumulated noise `s_n = s_{n-1} + M⁻¹ (σ^{n-1} Δ_n W^r, φ)`.
    pub noise_sum: FeFunction,
    /// Discrete `g_h = -ε M⁻¹ K s_n`.
    pub g: FeFunction,
    /// Closed-form coefficients `Σ_j σ(t_{j-1}) Δ_j β_l`.
    pub noise_coeffs: Vec<f64>,
}

/// `w⁰` from `(w⁰, φ) = ε(∇u⁰, ∇φ) + ε⁻¹(f(u⁰), φ)`.
pub fn chemical_potential(space: &Space, u: &FeFunction, eps: f64) -> Result<FeFunction> {
    let mesh = space.mesh();
    let ku = space.stiffness().apply(&u.coeffs);
    let fu = nonlinear_load(mesh, u, f);
    let rhs: Vec<f64> = ku.iter().zip(&fu).map(|(a, b)| eps * a + b / eps).collect();
    FeFunction::new(mesh, space.solve_mass(&rhs)?)
}

impl TimeState {
    pub fn initial(space: &Space, u0: FeFunction, eps: f64, modes: usize) -> Result<Self> {
        let mesh = space.mesh();
        u0.check_on(mesh)?;
        let w0 = chemical_potential(space, &u0, eps)?;
        let z = FeFunction::zeros(mesh);
        Ok(Self {
            t: 0.0,
            tau: 0.0,
            u: u0.clone(),
            w: w0.clone(),
            u_tilde: z.clone(),
            w_tilde: z.clone(),
            u_hat: u0,
            w_hat: w0,
            y: z.clone(),
            y_w: z.clone(),
            noise_sum: z.clone(),
            g: z,
            noise_coeffs: vec![0.0; modes],
        })
    }

    pub fn fields(&self) -> [&FeFunction; 10] {
        [
            &self.u,
            &self.w,
            &self.u_tilde,
            &self.w_tilde,
            &self.u_hat,
            &self.w_hat,
            &self.y,
            &self.y_w,
            &self.noise_sum,
            &self.g,
        ]
    }

    /// Applies one linear field transfer to every field.
    pub fn map_fields(&self, mut tr: impl FnMut(&FeFunction) -> Result<FeFunction>) -> Result<TimeState> {
        Ok(TimeState {
            t: self.t,
            tau: self.tau,
            u: tr(&self.u)?,
            w: tr(&self.w)?,
            u_tilde: tr(&self.u_tilde)?,
            w_tilde: tr(&self.w_tilde)?,
            u_hat: tr(&self.u_hat)?,
            w_hat: tr(&self.w_hat)?,
            y: tr(&self.y)?,
            y_w: tr(&self.y_w)?,
            noise_sum: tr(&self.noise_sum)?,
            g: tr(&self.g)?,
            noise_coeffs: self.noise_coeffs.clone(),
        })
    }

    pub fn check_on(&self, space: &Space) -> Result<()> {
        for f in self.fields() {
            f.check_on(space.mesh())?;
        }
        Ok(())
    }

    /// `‖u - ũ - û‖_∞`
    pub fn splitting_defect(&self) -> f64 {
        self.u.sub(&self.u_tilde).sub(&self.u_hat).max_abs()
    }

    /// `(‖ũ - y - ε^γ s‖_∞, ‖w̃ - y_w + ε^γ g‖_∞)`
    pub fn transformation_defects(&self, noise_scale: f64) -> (f64, f64) {
        let a = self.u_tilde.sub(&self.y).lin_comb(1.0, &self.noise_sum, -noise_scale).max_abs();
        let b = self.w_tilde.sub(&self.y_w).lin_comb(1.0, &self.g, noise_scale).max_abs();
        (a, b)
    }
}

fn residual(
    space: &Space,
    eps: f64,
    tau: f64,
    u: &FeFunction,
    w: &FeFunction,
    mu_old: &[f64],
    noise: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let m = space.mass();
    let k = space.stiffness();
    let mu = m.apply(&u.coeffs);
    let kw = k.apply(&w.coeffs);
    let r1: Vec<f64> = (0..mu.len()).map(|i| mu[i] - mu_old[i] + tau * kw[i] - noise[i]).collect();
    let mw = m.apply(&w.coeffs);
    let ku = k.apply(&u.coeffs);
    let fu = nonlinear_load(space.mesh(), u, f);
    let r2: Vec<f64> = (0..mw.len()).map(|i| mw[i] - eps * ku[i] - fu[i] / eps).collect();
    (r1, r2)
}

fn block_norm(r1: &[f64], r2: &[f64]) -> f64 {
    norm2(r1).hypot(norm2(r2))
}

/// Newton's method for the coupled scheme
/// `(u - u_old, φ) + τ(∇w, ∇φ) = (noise, φ)`,
/// `(w, φ) = ε(∇u, ∇φ) + ε⁻¹(f(u), φ)`,
/// started from the previous level. `noise` is the load `ε^γ (σ Δ W^r, φ_i)`.
/// Residuals are the block 2-norm of the two equations tested with the basis.
pub fn step_coupled(
    disc: &Discretization,
    state: &TimeState,
    eps: f64,
    noise: &[f64],
    tau: f64,
    cfg: &NewtonConfig,
) -> Result<(FeFunction, FeFunction, NewtonReport)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    let space = &disc.space;
    state.u.check_on(space.mesh())?;
    let m = space.mass();
    let k = space.stiffness();
    let mu_old = m.apply(&state.u.coeffs);
    let tau_k = k.scaled(tau);
    let mut u = state.u.clone();
    let mut w = state.w.clone();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut extra = usize::from(cfg.polish);
    loop {
        let (r1, r2) = residual(space, eps, tau, &u, &w, &mu_old, noise);
        let res = block_norm(&r1, &r2);
        history.push(res);
        if !res.is_finite() {
            break;
        }
        let done = res <= cfg.tol;
        if done {
            if extra == 0 {
                break;
            }
            extra -= 1;
        } else if iterations >= cfg.max_iter {
            break;
        } else {
            iterations += 1;
        }
        let mf = space.weighted_mass(&u, f_prime);
        let c = SparseOperator::combine(&[(-eps, k), (-1.0 / eps, &mf)]);
        let lu = disc.block.factor(m, &tau_k, &c, m)?;
        let n1: Vec<f64> = r1.iter().map(|x| -x).collect();
        let n2: Vec<f64> = r2.iter().map(|x| -x).collect();
        let (du, dw) = lu.solve(&n1, &n2);
        u.coeffs.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        w.coeffs.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        if done {
            // polishing update: take the residual once more for the report
            let (r1, r2) = residual(space, eps, tau, &u, &w, &mu_old, noise);
            history.push(block_norm(&r1, &r2));
            break;
        }
    }
    let final_residual = *history.last().unwrap_or(&f64::NAN);
    let converged = final_residual.is_finite() && final_residual <= cfg.tol;
    Ok((
        u,
        w,
        NewtonReport {
            iterations,
            final_residual,
            converged,
            history,
        },
    ))
}

/// Linear SPDE step for `(ũ, w̃)`: `M(ũ - ũ_old) + τKw̃ = noise`, `Mw̃ - εKũ = 0`.
pub fn step_linear_spde(disc: &Discretization, sys: &LinearSystem, state: &TimeState, noise: &[f64]) -> Result<(FeFunction, FeFunction)> {
    let mesh = disc.space.mesh();
    let mut r1 = disc.space.mass().apply(&state.u_tilde.coeffs);
    r1.iter_mut().zip(noise).for_each(|(a, b)| *a += b);
    let (u, w) = sys.solve(&r1, &vec![0.0; r1.len()]);
    Ok((FeFunction::new(mesh, u)?, FeFunction::new(mesh, w)?))
}

/// Random PDE step for `(û, ŵ)` with `f` evaluated at the new coupled solution:
/// `M(û - û_old) + τKŵ = 0`, `Mŵ - εKû = ε⁻¹(f(u^n), φ)`.
pub fn step_nonlinear_rpde(
    disc: &Discretization,
    sys: &LinearSystem,
    state: &TimeState,
    eps: f64,
    u_coupled_new: &FeFunction,
) -> Result<(FeFunction, FeFunction)> {
    let mesh = disc.space.mesh();
    u_coupled_new.check_on(mesh)?;
    let r1 = disc.space.mass().apply(&state.u_hat.coeffs);
    let r2: Vec<f64> = nonlinear_load(mesh, u_coupled_new, f).iter().map(|x| x / eps).collect();
    let (u, w) = sys.solve(&r1, &r2);
    Ok((FeFunction::new(mesh, u)?, FeFunction::new(mesh, w)?))
}

/// Transformed step for `(y, y_w)`: `M(y - y_old) + τK y_w = τ ε^γ K g`, `M y_w - εK y = 0`.
pub fn step_transformed(
    disc: &Discretization,
    sys: &LinearSystem,
    state: &TimeState,
    noise_scale: f64,
    g_field: &FeFunction,
) -> Result<(FeFunction, FeFunction)> {
    let mesh = disc.space.mesh();
    g_field.check_on(mesh)?;
    let mut r1 = disc.space.mass().apply(&state.y.coeffs);
    let kg = disc.space.stiffness().apply(&g_field.coeffs);
    r1.iter_mut().zip(&kg).for_each(|(a, b)| *a += sys.tau * noise_scale * b);
    let (y, yw) = sys.solve(&r1, &vec![0.0; r1.len()]);
    Ok((FeFunction::new(mesh, y)?, FeFunction::new(mesh, yw)?))
}

/// Inputs of one full step.
pub struct StepInput<'a> {
    pub eps: f64,
    /// `ε^γ`
    pub noise_scale: f64,
    /// Unscaled load `(σ(t_{n-1}) Σ ν_l e_l Δβ_l, φ_i)`.
    pub noise_load: &'a [f64],
    /// `σ(t_{n-1}) Δβ_l`, added to the closed-form coefficients.
    pub coeff_increments: &'a [f64],
    pub tau: f64,
    pub newton: NewtonConfig,
}

pub enum StepOutcome {
    Accepted(Box<TimeState>, NewtonReport),
    Rejected(NewtonReport),
}

/// One full step: coupled Newton solve, then the three linear schemes on one
/// shared factorization. Returns `Rejected` if Newton does not converge.
pub fn advance(disc: &Discretization, state: &TimeState, input: &StepInput<'_>) -> Result<StepOutcome> {
    let space = &disc.space;
    let mesh = space.mesh();
    state.check_on(space)?;
    let eps = input.eps;
    let scaled: Vec<f64> = input.noise_load.iter().map(|b| input.noise_scale * b).collect();
    let (u, w, report) = step_coupled(disc, state, eps, &scaled, input.tau, &input.newton)?;
    if !report.converged {
        return Ok(StepOutcome::Rejected(report));
    }
    let sys = disc.linear_system(eps, input.tau)?;
    let (u_tilde, w_tilde) = step_linear_spde(disc, &sys, state, &scaled)?;
    let (u_hat, w_hat) = step_nonlinear_rpde(disc, &sys, state, eps, &u)?;
    let ds = space.solve_mass(input.noise_load)?;
    let noise_sum = state.noise_sum.add(&FeFunction::new(mesh, ds)?);
    let ks = space.stiffness().apply(&noise_sum.coeffs);
    let g = FeFunction::new(mesh, space.solve_mass(&ks)?)?.scale(-eps);
    let (y, y_w) = step_transformed(disc, &sys, state, input.noise_scale, &g)?;
    let mut noise_coeffs = state.noise_coeffs.clone();
    noise_coeffs.resize(input.coeff_increments.len().max(noise_coeffs.len()), 0.0);
    noise_coeffs.iter_mut().zip(input.coeff_increments).for_each(|(c, d)| *c += d);
    let next = TimeState {
        t: state.t + input.tau,
        tau: input.tau,
        u,
        w,
        u_tilde,
        w_tilde,
        u_hat,
        w_hat,
        y,
        y_w,
        noise_sum,
        g,
        noise_coeffs,
    };
    Ok(StepOutcome::Accepted(Box::new(next), report))
}

/// Step-size clamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauBounds {
    pub min: f64,
    pub max: f64,
}

/// Below 5 Newton iterations the step doubles, above 50 (or on failure) it
/// halves, otherwise it is kept; the result is clamped to `bounds`.
pub fn adapt_timestep(report: &NewtonReport, tau: f64, bounds: TauBounds) -> f64 {
    let next = if !report.converged || report.iterations > 50 {
        0.5 * tau
    } else if report.iterations < 5 {
        2.0 * tau
    } else {
        tau
    };
    next.clamp(bounds.min, bounds.max)
}

/// Discrete residuals of a linear block solve, `‖[[M, τK], [-εK, M]](x, x_w) - (r1, r2)‖_∞`.
pub fn linear_residual(space: &Space, eps: f64, tau: f64, x: &[f64], xw: &[f64], r1: &[f64], r2: &[f64]) -> f64 {
    let m = space.mass();
    let k = space.stiffness();
    let a = m.apply(x);
    let b = k.apply(xw);
    let c = k.apply(x);
    let d = m.apply(xw);
    let e1: Vec<f64> = (0..a.len()).map(|i| a[i] + tau * b[i] - r1[i]).collect();
    let e2: Vec<f64> = (0..a.len()).map(|i| d[i] - eps * c[i] - r2[i]).collect();
    norm_inf(&e1).max(norm_inf(&e2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::integral;
    use crate::mesh::{build_initial_mesh, Square};
    use crate::noise::{ModeLoads, NoiseModel, NoisePath};

    fn disc(n: usize) -> Discretization {
        let mesh = build_initial_mesh(Square::centered(1.0), n).unwrap();
        Discretization::new(Arc::new(Space::new(Arc::new(mesh)))).unwrap()
    }

    fn input<'a>(load: &'a [f64], incs: &'a [f64], tau: f64) -> StepInput<'a> {
        StepInput {
            eps: 0.125,
            noise_scale: 1.0,
            noise_load: load,
            coeff_increments: incs,
            tau,
            newton: NewtonConfig::default(),
        }
    }

    fn accept(o: StepOutcome) -> (TimeState, NewtonReport) {
        match o {
            StepOutcome::Accepted(s, r) => (*s, r),
            StepOutcome::Rejected(r) => panic!("rejected: {r:?}"),
        }
    }

    #[test]
    fn constant_wells_are_fixed_points() {
        let d = disc(4);
        let mesh = d.space.mesh();
        for c in [1.0, 0.0, -1.0] {
            let s0 = TimeState::initial(&d.space, FeFunction::constant(mesh, c), 0.125, 0).unwrap();
            let zero = vec![0.0; mesh.num_vertices()];
            let (s1, r) = accept(advance(&d, &s0, &input(&zero, &[], 1e-3)).unwrap());
            assert!(r.converged && r.iterations <= 1);
            assert!(s1.u.coeffs.iter().all(|v| (v - c).abs() < 1e-12));
            assert!(s1.w.max_abs() < 1e-12);
            assert!(s1.u_hat.sub(&s1.u).max_abs() < 1e-12);
            assert!(s1.u_tilde.max_abs() == 0.0 && s1.y.max_abs() == 0.0);
        }
    }

    #[test]
    fn stochastic_steps_keep_identities() {
        let d = disc(8);
        let mesh = d.space.mesh();
        let eps = 0.125;
        let model = NoiseModel::reference(1.0);
        let loads = ModeLoads::new(&model, &d.space);
        let u0 = FeFunction::interpolate(mesh, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos() * 0.8);
        let mut s = TimeState::initial(&d.space, u0, eps, 16).unwrap();
        let m0 = integral(mesh, &s.u);
        let mut path = NoisePath::new(&model, 11, 0);
        for _ in 0..5 {
            let tau = 1e-3;
            let incs = path.propose(tau).unwrap();
            let load = loads.noise_load(&model, &incs, s.t);
            let ci: Vec<f64> = incs.iter().map(|d| model.sigma_at(s.t) * d).collect();
            let (next, r) = accept(advance(&d, &s, &input(&load, &ci, tau)).unwrap());
            assert!(r.converged && r.iterations <= 50);
            path.accept(s.t, next.t, incs);
            s = next;
            assert!(s.splitting_defect() < 1e-8, "{}", s.splitting_defect());
            let (a, b) = s.transformation_defects(1.0);
            assert!(a < 1e-8 && b < 1e-8, "{a} {b}");
            assert!((integral(mesh, &s.u) - m0).abs() < 1e-9);
        }
        assert!(s.u_tilde.max_abs() > 1e-3);
    }

    #[test]
    fn linear_spde_is_linear_and_exact() {
        let d = disc(4);
        let mesh = d.space.mesh();
        let eps = 0.125;
        let model = NoiseModel::reference(1.0);
        let loads = ModeLoads::new(&model, &d.space);
        let s0 = TimeState::initial(&d.space, FeFunction::constant(mesh, 0.0), eps, 16).unwrap();
        let mut incs = vec![0.0; 16];
        incs[2] = 1.0;
        let b = loads.noise_load(&model, &incs, 0.0);
        let b2: Vec<f64> = b.iter().map(|x| 2.0 * x).collect();
        let sys = d.linear_system(eps, 1e-3).unwrap();
        let (u1, w1) = step_linear_spde(&d, &sys, &s0, &b).unwrap();
        let (u2, w2) = step_linear_spde(&d, &sys, &s0, &b2).unwrap();
        assert!(u2.lin_comb(1.0, &u1, -2.0).max_abs() < 1e-10);
        assert!(w2.lin_comb(1.0, &w1, -2.0).max_abs() < 1e-10);
        let zero = vec![0.0; b.len()];
        assert!(linear_residual(&d.space, eps, 1e-3, &u1.coeffs, &w1.coeffs, &b, &zero) < 1e-10);
        let (uz, _) = step_linear_spde(&d, &sys, &s0, &zero).unwrap();
        assert_eq!(uz.max_abs(), 0.0);
    }

    #[test]
    fn controller_rules() {
        let b = TauBounds { min: 1e-9, max: 1.0 };
        let rep = |it: usize| NewtonReport {
            iterations: it,
            final_residual: 0.0,
            converged: it <= 50,
            history: vec![],
        };
        assert_eq!(adapt_timestep(&rep(3), 1e-6, b), 2e-6);
        assert_eq!(adapt_timestep(&rep(60), 1e-6, b), 5e-7);
        assert_eq!(adapt_timestep(&rep(10), 1e-6, b), 1e-6);
        assert_eq!(adapt_timestep(&rep(3), 0.8, b), 1.0);
    }
}
