//! Single-path simulations, Monte-Carlo ensembles, closing-time detection and
//! estimator aggregation.

use std::sync::Arc;

use rayon::prelude::*;

use crate::adaptivity::{adapt_step, AdaptConfig, AdaptLog, Adapted};
use crate::error::{Error, Result};
use crate::estimators::{
    eps_tilde, linear_bound, mu_bounds, nonlinear_bound, space_indicator_3, space_indicators, time_indicators,
    total_bound, EstimatorConfig, HatStep, LinearBound, LinearStep, NoiseTerm, NonlinearBound,
};
use crate::fem::{integral, prolong, FeFunction, Space};
use crate::mesh::{build_initial_mesh, Mesh, Square};
use crate::noise::{noise_indicator_1, noise_indicators_2_3, ModeLoads, NoiseModel, NoisePath, ProjectionDefects, SigmaProcess};
use crate::quadrature::triangle_degree6;
use crate::schemes::{adapt_timestep, advance, double_well, Discretization, NewtonConfig, StepInput, StepOutcome, TauBounds, TimeState};
use crate::spectral::{principal_eigenvalue, EigenConfig};

/// Tensor-cosine noise on the computational square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub nu: f64,
    pub max_l: u32,
    /// Constant intensity `σ`; zero gives the deterministic problem.
    pub sigma: f64,
    pub gamma: f64,
}

impl NoiseSpec {
    pub fn model(&self, domain: Square) -> NoiseModel {
        let mut m = NoiseModel::tensor_cosine(domain, self.nu, self.max_l, SigmaProcess::Constant(self.sigma));
        m.gamma = self.gamma;
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub eps: f64,
    pub t_end: f64,
    pub r1: f64,
    pub r2: f64,
    pub noise: NoiseSpec,
    /// Half-width of the square `(-h, h)²`.
    pub half_width: f64,
    pub resolution: usize,
    pub tau0: f64,
    pub tau_min: f64,
    /// `None` means `T / 50`.
    pub tau_max: Option<f64>,
    pub newton: NewtonConfig,
    pub adapt: AdaptConfig,
    pub adaptive: bool,
    pub estimator: EstimatorConfig,
    pub eigen: EigenConfig,
    /// Principal eigenvalue every this many accepted steps; 0 disables it.
    pub eig_every: usize,
    /// Measure projection defects for the noise indicators on every mesh.
    pub noise_defects: bool,
    /// Snapshot times as fractions of `T`.
    pub snapshot_fractions: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    /// 0 means the rayon default.
    pub workers: usize,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            eps: 1.0 / 32.0,
            t_end: 0.012,
            r1: 0.2,
            r2: 0.55,
            noise: NoiseSpec {
                nu: 0.5,
                max_l: 4,
                sigma: 1.0,
                gamma: 0.0,
            },
            half_width: 1.0,
            resolution: 32,
            tau0: 1e-6,
            tau_min: 1e-9,
            tau_max: None,
            newton: NewtonConfig::default(),
            adapt: AdaptConfig::default(),
            adaptive: true,
            estimator: EstimatorConfig::default(),
            eigen: EigenConfig::default(),
            eig_every: 1,
            noise_defects: true,
            snapshot_fractions: vec![0.0, 0.25, 0.75, 1.0],
            paths: 1,
            seed: 0,
            workers: 0,
            histogram_bins: 20,
        }
    }
}

impl RunConfig {
    pub fn domain(&self) -> Square {
        Square::centered(self.half_width)
    }

    pub fn tau_bounds(&self) -> TauBounds {
        TauBounds {
            min: self.tau_min,
            max: self.tau_max.unwrap_or(self.t_end / 50.0),
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise.model(self.domain())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Constraint(m));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("epsilon = {} must be positive", self.eps));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be positive", self.t_end));
        }
        if !(0.0 < self.r1 && self.r1 < self.r2 && self.r2 < 1.0) {
            return bad(format!("need 0 < r1 < r2 < 1, got r1 = {}, r2 = {}", self.r1, self.r2));
        }
        if self.resolution == 0 || !(self.half_width > 0.0) {
            return bad("resolution and half_width must be positive".into());
        }
        let tb = self.tau_bounds();
        if !(0.0 < tb.min && tb.min <= self.tau0 && tb.min <= tb.max) {
            return bad(format!("need 0 < tau_min <= tau0 and tau_min <= tau_max, got {}, {}, {}", tb.min, self.tau0, tb.max));
        }
        if !(self.noise.nu >= 0.0 && self.noise.sigma.is_finite()) {
            return bad("noise amplitude must be finite and nonnegative".into());
        }
        if self.paths == 0 {
            return bad("paths must be at least 1".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be at least 1".into());
        }
        if self.snapshot_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("snapshot fractions must lie in [0, 1]".into());
        }
        self.adapt.validate()?;
        self.estimator.validate()
    }
}

/// `u₀(x) = -tanh(max{-(|x| - r₁), |x| - r₂} / (√2 ε))`
pub fn initial_value(x: [f64; 2], r1: f64, r2: f64, eps: f64) -> f64 {
    let r = x[0].hypot(x[1]);
    -((r1 - r).max(r - r2) / (std::f64::consts::SQRT_2 * eps)).tanh()
}

pub fn initial_condition(mesh: &Mesh, r1: f64, r2: f64, eps: f64) -> Result<FeFunction> {
    if !(0.0 < r1 && r1 < r2) {
        return Err(Error::InvalidArgument(format!("need 0 < r1 < r2, got {r1}, {r2}")));
    }
    Ok(FeFunction::interpolate(mesh, |x| initial_value(x, r1, r2, eps)))
}

/// Ginzburg-Landau energy `ε/2 ‖∇u‖² + ε⁻¹ ∫F(u)`.
pub fn energy(space: &Space, u: &FeFunction, eps: f64) -> f64 {
    let mesh = space.mesh();
    let grad = space.stiffness().quad_form(&u.coeffs);
    let rule = triangle_degree6();
    let mut pot = 0.0;
    for t in 0..mesh.num_triangles() {
        let a = mesh.area(t);
        for q in &rule {
            pot += q.weight * a * double_well(u.eval_bary(mesh, t, q.lambda));
        }
    }
    0.5 * eps * grad + pot / eps
}

/// One accepted step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesRow {
    pub step: usize,
    pub t: f64,
    pub tau: f64,
    pub dofs: usize,
    pub triangles: usize,
    pub newton_iterations: usize,
    pub newton_residual: f64,
    /// `Λ_CH`, NaN when not computed.
    pub lambda: f64,
    pub mass: f64,
    pub energy: f64,
    pub u_center: f64,
    pub max_abs_u: f64,
    pub splitting_defect: f64,
    pub transformation_defects: (f64, f64),
    /// `η_SPACE,3` of `u`, the adaptivity indicator.
    pub eta_adapt: f64,
    pub eta_space: [f64; 3],
    pub eta_time: [f64; 3],
    pub eta_space_hat: [f64; 3],
    pub eta_time_hat: [f64; 3],
    pub eta_noise: [f64; 3],
    pub mu: [f64; 3],
    pub mu_hat: [f64; 3],
    pub adapt: AdaptLog,
    pub rejections: usize,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub mesh: Arc<Mesh>,
    pub u: FeFunction,
    pub w: FeFunction,
    pub y: FeFunction,
    pub y_w: FeFunction,
    pub eta_adapt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Closing {
    /// Time of the first sign change `- → +` of `u` at the center.
    pub center_time: Option<f64>,
    /// Time and value of the largest `Λ_CH`.
    pub lambda_peak: Option<(f64, f64)>,
    pub gap: Option<f64>,
}

/// Center-sign detector with the `Λ_CH` argmax as secondary. Traces are
/// `(t, value)` on accepted steps; NaN eigenvalues are skipped.
pub fn detect_closing(lambda_trace: &[(f64, f64)], u_center_trace: &[(f64, f64)]) -> Closing {
    let center_time = u_center_trace
        .windows(2)
        .find(|w| w[0].1 < 0.0 && w[1].1 >= 0.0)
        .map(|w| {
            // linear interpolation of the crossing
            let (t0, a) = w[0];
            let (t1, b) = w[1];
            if b == a {
                t1
            } else {
                t0 + (t1 - t0) * (-a) / (b - a)
            }
        });
    let lambda_peak = lambda_trace
        .iter()
        .filter(|p| p.1.is_finite())
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1));
    let gap = match (center_time, lambda_peak) {
        (Some(c), Some((p, _))) => Some((c - p).abs()),
        _ => None,
    };
    Closing {
        center_time,
        lambda_peak,
        gap,
    }
}

/// Pathwise estimator data, kept so ensembles can evaluate `R̂` with a common `ε̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorReport {
    pub linear: LinearBound,
    pub hat_steps: Vec<HatStep>,
    pub e0_hm1_sq: f64,
    pub c_h_infty: f64,
    /// `R̂` evaluated with this path's own `R̃`.
    pub nonlinear: NonlinearBound,
}

#[derive(Clone, Debug)]
pub struct PathResult {
    pub path_index: u64,
    pub series: Vec<SeriesRow>,
    pub closing: Closing,
    pub snapshots: Vec<Snapshot>,
    pub report: IndicatorReport,
    pub initial_mass: f64,
    pub initial_dofs: usize,
}

impl PathResult {
    pub fn lambda_trace(&self) -> Vec<(f64, f64)> {
        self.series.iter().map(|r| (r.t, r.lambda)).collect()
    }

    pub fn center_trace(&self) -> Vec<(f64, f64)> {
        self.series.iter().map(|r| (r.t, r.u_center)).collect()
    }
}

/// State carried between steps, with the last eigenvector for warm starts.
#[derive(Clone, Debug)]
struct PathFields {
    state: TimeState,
    eig: Option<FeFunction>,
}

/// Per-mesh caches.
struct Level {
    disc: Discretization,
    loads: ModeLoads,
}

impl Level {
    fn new(space: Arc<Space>, model: &NoiseModel) -> Result<Self> {
        let loads = ModeLoads::new(model, &space);
        Ok(Self {
            disc: Discretization::new(space)?,
            loads,
        })
    }
}

fn adapt_indicators(space: &Space, u: &FeFunction, eps: f64) -> Result<Vec<f64>> {
    Ok(space_indicator_3(space, u, eps)?.2)
}

/// Refines the initial mesh until `u₀` meets the adaptivity tolerance.
fn initial_mesh(cfg: &RunConfig) -> Result<(Arc<Space>, AdaptLog)> {
    let space = Arc::new(Space::new(Arc::new(build_initial_mesh(cfg.domain(), cfg.resolution)?)));
    if !cfg.adaptive {
        return Ok((space, AdaptLog::default()));
    }
    let u0 = |s: &Arc<Space>| initial_condition(s.mesh(), cfg.r1, cfg.r2, cfg.eps);
    let u = u0(&space)?;
    let ind = adapt_indicators(&space, &u, cfg.eps)?;
    let acfg = AdaptConfig {
        coarsen_fraction: 0.0,
        max_adapt_rounds: 40,
        ..cfg.adapt
    };
    let out = adapt_step(space, &Vec::new(), vec![u], ind, &acfg, |s, _| {
        let u = u0(s)?;
        let ind = adapt_indicators(s, &u, cfg.eps)?;
        Ok((vec![u], ind))
    })?;
    Ok((out.solved_space, out.log))
}

/// `‖I_{h/2} u₀ - I_h u₀‖²_{H^{-1}}` on the uniformly refined mesh, of the
/// zero-mean part (interpolation does not preserve mass).
fn initial_error(space: &Space, cfg: &RunConfig) -> Result<f64> {
    let fine = Space::new(Arc::new(space.mesh().refine_uniform()?));
    let coarse = initial_condition(space.mesh(), cfg.r1, cfg.r2, cfg.eps)?;
    let exact = initial_condition(fine.mesh(), cfg.r1, cfg.r2, cfg.eps)?;
    let mut d = exact.sub(&prolong(&coarse, fine.mesh())?);
    let m = fine.integral(&d.coeffs) / fine.area();
    d.coeffs.iter_mut().for_each(|v| *v -= m);
    fine.hminus1_norm_sq(&d.coeffs)
}

fn is_newton_failure(e: &Error) -> bool {
    matches!(e, Error::Newton { .. })
}

fn newton_error(t: f64, reason: String) -> Error {
    Error::Newton { t, reason }
}

/// Simulates one path. Path `i` of seed `s` draws its increments from stream `i`.
pub fn run_path(cfg: &RunConfig, path_index: u64) -> Result<PathResult> {
    cfg.validate()?;
    let eps = cfg.eps;
    let model = cfg.noise_model();
    let noise_scale = model.scale(eps);
    let silent = model.is_silent();
    let bounds = cfg.tau_bounds();
    let t_end = cfg.t_end;
    let center = cfg.domain().center();

    let (mut space, _) = initial_mesh(cfg)?;
    let u0 = initial_condition(space.mesh(), cfg.r1, cfg.r2, eps)?;
    let initial_mass = integral(space.mesh(), &u0);
    let initial_dofs = space.mesh().num_vertices();
    let e0_hm1_sq = initial_error(&space, cfg)?;
    let mut fields = PathFields {
        state: TimeState::initial(&space, u0, eps, model.r())?,
        eig: None,
    };
    let mut level = Level::new(space.clone(), &model)?;
    let mut path = NoisePath::new(&model, cfg.seed, path_index);

    let mut stops: Vec<f64> = cfg.snapshot_fractions.iter().map(|f| f * t_end).filter(|&t| t > 0.0).collect();
    stops.push(t_end);
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    let mut snapshots = Vec::new();
    if cfg.snapshot_fractions.contains(&0.0) {
        let st = &fields.state;
        snapshots.push(Snapshot {
            t: 0.0,
            step: 0,
            mesh: space.mesh().clone(),
            u: st.u.clone(),
            w: st.w.clone(),
            y: st.y.clone(),
            y_w: st.y_w.clone(),
            eta_adapt: adapt_indicators(&space, &st.u, eps)?.iter().sum::<f64>().sqrt(),
        });
    }

    let mut series = Vec::new();
    let mut linear_steps = Vec::new();
    let mut hat_steps = Vec::new();
    let mut defects_per_step: Vec<Arc<ProjectionDefects>> = Vec::new();
    let mut defect_cache: Option<(Arc<Mesh>, Arc<ProjectionDefects>)> = None;
    let mut max_abs_u = fields.state.u.max_abs();
    let mut tau_ctrl = cfg.tau0;
    let mut rejections = 0usize;
    let mut t = 0.0;
    let time_tol = 1e-12 * t_end;

    while t < t_end - time_tol {
        let next_stop = *stops.iter().find(|&&s| s > t + time_tol).unwrap_or(&t_end);
        let tau = if t + tau_ctrl >= next_stop - time_tol { next_stop - t } else { tau_ctrl };
        let incs = path.propose(tau)?;
        let sig = model.sigma_at(t);
        let coeff_incs: Vec<f64> = incs.iter().map(|d| sig * d).collect();
        let take_step = |lvl: &Level, st: &TimeState| -> Result<(TimeState, crate::schemes::NewtonReport)> {
            let load = lvl.loads.noise_load(&model, &incs, t);
            let input = StepInput {
                eps,
                noise_scale,
                noise_load: &load,
                coeff_increments: &coeff_incs,
                tau,
                newton: cfg.newton,
            };
            match advance(&lvl.disc, st, &input)? {
                StepOutcome::Accepted(s, r) => Ok((*s, r)),
                StepOutcome::Rejected(r) => Err(newton_error(
                    t,
                    format!("no convergence with tau = {tau:e}: residual {:e} after {} iterations", r.final_residual, r.iterations),
                )),
            }
        };
        let attempt = take_step(&level, &fields.state).and_then(|(st, rep)| {
            let ind = adapt_indicators(&space, &st.u, eps)?;
            if !cfg.adaptive {
                return Ok((Adapted::unchanged(space.clone(), st, ind), rep));
            }
            let mut last_report = rep;
            let out = adapt_step(space.clone(), &fields.state, st, ind, &cfg.adapt, |s, p| {
                let lvl = Level::new(s.clone(), &model)?;
                let (st, rep) = take_step(&lvl, p)?;
                last_report = rep;
                let ind = adapt_indicators(s, &st.u, eps)?;
                Ok((st, ind))
            })?;
            Ok((out, last_report))
        });
        let (adapted, report) = match attempt {
            Ok(v) => v,
            Err(e) if is_newton_failure(&e) => {
                path.reject(tau, incs);
                rejections += 1;
                if tau_ctrl <= bounds.min * (1.0 + 1e-12) {
                    return Err(e);
                }
                tau_ctrl = (0.5 * tau_ctrl).max(bounds.min);
                continue;
            }
            Err(e) => return Err(e),
        };
        path.accept(t, t + tau, incs);
        t += tau;
        if (t - next_stop).abs() <= time_tol {
            t = next_stop;
        }
        let step = series.len() + 1;

        // indicators on the mesh the step was solved on
        let solved_space = adapted.solved_space.clone();
        let solved = &adapted.solved;
        let ind = &adapted.indicators_sq;
        let prev_eig = match &adapted.prev {
            None => fields.eig.clone(),
            Some(_) => fields.eig.as_ref().map(|v| prolong(v, solved_space.mesh())).transpose()?,
        };
        let ps = adapted.prev.as_ref().unwrap_or(&fields.state);
        let noise_term = NoiseTerm {
            model: &model,
            coeffs: &solved.noise_coeffs,
            eps,
        };
        let sp = space_indicators(&solved_space, &ps.y, &solved.y, &solved.y_w, tau, eps, (!silent).then_some(&noise_term))?;
        let tm = time_indicators(&solved_space, &ps.y, &solved.y, &ps.y_w, &solved.y_w, eps, None)?;
        let sp_hat = space_indicators(&solved_space, &ps.u_hat, &solved.u_hat, &solved.w_hat, tau, eps, None)?;
        let tm_hat = time_indicators(&solved_space, &ps.u_hat, &solved.u_hat, &ps.w_hat, &solved.w_hat, eps, Some((&ps.u, &solved.u)))?;
        let c_star = cfg.estimator.clement_constant;
        let mu = mu_bounds(sp.eta, tm, c_star);
        let mu_hat = mu_bounds(sp_hat.eta, tm_hat, c_star);
        let dut = ps.u_tilde.sub(&solved.u_tilde);
        let dy = ps.y.sub(&solved.y);
        linear_steps.push(LinearStep {
            tau,
            mu,
            eta_noise: [0.0; 3],
            ut_diff_hm1_sq: solved_space.hminus1_norm_sq(&dut.coeffs)?,
            y_diff_hm1_sq: solved_space.hminus1_norm_sq(&dy.coeffs)?,
            ut_diff_grad_sq: solved_space.stiffness().quad_form(&dut.coeffs),
            y_diff_grad_sq: solved_space.stiffness().quad_form(&dy.coeffs),
        });

        let eig_due = cfg.eig_every > 0 && step % cfg.eig_every == 0;
        let (lambda, eigvec) = if eig_due {
            let warm = prev_eig.as_ref();
            match principal_eigenvalue(&solved_space, &solved.u, eps, warm, &cfg.eigen) {
                Ok(r) => (r.lambda, Some(r.eigvec)),
                Err(Error::EigenStagnation { lambda, .. }) => (lambda, None),
                Err(e) => return Err(e),
            }
        } else {
            (f64::NAN, None)
        };
        hat_steps.push(HatStep {
            tau,
            mu_hat,
            lambda: if lambda.is_finite() { lambda } else { hat_steps.last().map_or(0.0, |h: &HatStep| h.lambda) },
        });

        if !silent && cfg.noise_defects {
            let d = match &defect_cache {
                Some((m, d)) if Arc::ptr_eq(m, solved_space.mesh()) => d.clone(),
                _ => Arc::new(ProjectionDefects::new(&model, &solved_space)?),
            };
            defect_cache = Some((solved_space.mesh().clone(), d.clone()));
            defects_per_step.push(d);
        }

        let u = &solved.u;
        max_abs_u = max_abs_u.max(u.max_abs());
        let row = SeriesRow {
            step,
            t,
            tau,
            dofs: solved_space.mesh().num_vertices(),
            triangles: solved_space.mesh().num_triangles(),
            newton_iterations: report.iterations,
            newton_residual: report.final_residual,
            lambda,
            mass: integral(solved_space.mesh(), u),
            energy: energy(&solved_space, u, eps),
            u_center: u.eval(solved_space.mesh(), center).unwrap_or(f64::NAN),
            max_abs_u: u.max_abs(),
            splitting_defect: solved.splitting_defect(),
            transformation_defects: solved.transformation_defects(noise_scale),
            eta_adapt: ind.iter().sum::<f64>().sqrt(),
            eta_space: sp.eta,
            eta_time: tm,
            eta_space_hat: sp_hat.eta,
            eta_time_hat: tm_hat,
            eta_noise: [0.0; 3],
            mu,
            mu_hat,
            adapt: adapted.log.clone(),
            rejections,
        };
        rejections = 0;
        if stops.iter().any(|&s| s == t) && cfg.snapshot_fractions.iter().any(|f| f * t_end == t || (*f == 1.0 && t == t_end)) {
            snapshots.push(Snapshot {
                t,
                step,
                mesh: solved_space.mesh().clone(),
                u: solved.u.clone(),
                w: solved.w.clone(),
                y: solved.y.clone(),
                y_w: solved.y_w.clone(),
                eta_adapt: row.eta_adapt,
            });
        }
        series.push(row);

        fields = PathFields {
            eig: eigvec.or(prev_eig).map(|v| adapted.carry(&v)).transpose()?,
            state: adapted.next,
        };
        if !Arc::ptr_eq(&adapted.space, &space) {
            space = adapted.space;
            level = Level::new(space.clone(), &model)?;
        }
        tau_ctrl = adapt_timestep(&report, tau_ctrl, bounds);
    }

    // noise indicators over the whole path
    let steps: Vec<(f64, f64)> = series.iter().map(|r| (r.t - r.tau, r.t)).collect();
    if !silent {
        let n1 = noise_indicator_1(&model, &steps)?;
        let zero = ProjectionDefects::zero(&model, 0);
        let defs: Vec<&ProjectionDefects> = if cfg.noise_defects {
            defects_per_step.iter().map(|d| d.as_ref()).collect()
        } else {
            vec![&zero; steps.len()]
        };
        let n23 = noise_indicators_2_3(&model, eps, &steps, &defs)?;
        for (i, row) in series.iter_mut().enumerate() {
            row.eta_noise = [n1[i], n23[i].0, n23[i].1];
            linear_steps[i].eta_noise = row.eta_noise;
        }
    }

    let a = cfg.estimator.hoelder_a;
    let hoelder = if silent { 0.0 } else { model.hoelder_sum(a, t_end)? };
    let linear = linear_bound(&linear_steps, &cfg.estimator, t_end, eps, model.gamma, hoelder)?;
    let c_h_infty = cfg.estimator.c_h_infty.unwrap_or(max_abs_u);
    let et = eps_tilde(&cfg.estimator, linear.total);
    let nonlinear = nonlinear_bound(&hat_steps, &cfg.estimator, eps, t_end, e0_hm1_sq, et, c_h_infty)?;
    let closing = {
        let rows = &series;
        let lt: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.lambda)).collect();
        let ct: Vec<(f64, f64)> = std::iter::once((0.0, initial_value(center, cfg.r1, cfg.r2, eps)))
            .chain(rows.iter().map(|r| (r.t, r.u_center)))
            .collect();
        detect_closing(&lt, &ct)
    };
    Ok(PathResult {
        path_index,
        series,
        closing,
        snapshots,
        report: IndicatorReport {
            linear,
            hat_steps,
            e0_hm1_sq,
            c_h_infty,
            nonlinear,
        },
        initial_mass,
        initial_dofs,
    })
}

/// Mean with a fixed summation order, so it does not depend on the order of `values`.
pub fn ensemble_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Equal-width histogram of `values` over `[lo, hi]`; the last bin is closed.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v >= lo && v <= hi {
            let b = (((v - lo) / w) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * w, lo + (i + 1) as f64 * w, c))
        .collect()
}

#[derive(Clone, Debug)]
pub struct EnsembleSummary {
    pub paths: usize,
    pub failures: Vec<(u64, String)>,
    /// Per successful path, ordered by path index.
    pub results: Vec<PathResult>,
    pub closing_times: Vec<f64>,
    pub histogram: Vec<(f64, f64, usize)>,
    pub mean_closing: f64,
    pub mean_r_tilde: f64,
    pub max_r_tilde: f64,
    pub eps_tilde: f64,
    /// Mean of `R̂` over paths, counted only where the Gronwall condition holds.
    pub mean_r_hat: f64,
    pub certified_fraction: f64,
    pub total_bound: f64,
    pub max_eta_adapt: f64,
}

/// Runs `cfg.paths` independent paths on `cfg.workers` threads.
pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleSummary> {
    cfg.validate()?;
    let run = || -> Vec<(u64, Result<PathResult>)> {
        (0..cfg.paths as u64).into_par_iter().map(|i| (i, run_path(cfg, i))).collect()
    };
    let outcomes = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in outcomes {
        match r {
            Ok(p) => results.push(p),
            Err(e @ (Error::Constraint(_) | Error::InvalidArgument(_))) => return Err(e),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    Ok(summarize(cfg, results, failures))
}

/// Aggregates path results; `R̂` is re-evaluated with the ensemble `ε̃`.
pub fn summarize(cfg: &RunConfig, mut results: Vec<PathResult>, failures: Vec<(u64, String)>) -> EnsembleSummary {
    results.sort_by_key(|r| r.path_index);
    let closing_times: Vec<f64> = results.iter().filter_map(|r| r.closing.center_time).collect();
    let r_tilde: Vec<f64> = results.iter().map(|r| r.report.linear.total).collect();
    let mean_r_tilde = ensemble_mean(&r_tilde);
    let et = eps_tilde(&cfg.estimator, mean_r_tilde.max(0.0));
    let mut r_hat = Vec::new();
    let mut certified = 0usize;
    for r in &results {
        let rep = &r.report;
        let v = nonlinear_bound(&rep.hat_steps, &cfg.estimator, cfg.eps, cfg.t_end, rep.e0_hm1_sq, et, rep.c_h_infty)
            .map(|b| if b.certified { Some(b.r_hat) } else { None })
            .unwrap_or(None);
        if let Some(v) = v {
            certified += 1;
            r_hat.push(v);
        } else {
            r_hat.push(0.0);
        }
    }
    let mean_r_hat = ensemble_mean(&r_hat);
    let total = if results.is_empty() {
        f64::NAN
    } else {
        total_bound(mean_r_tilde, mean_r_hat, &cfg.estimator).total
    };
    let max_eta_adapt = results
        .iter()
        .flat_map(|r| r.series.iter().map(|s| s.eta_adapt))
        .fold(0.0, f64::max);
    EnsembleSummary {
        paths: cfg.paths,
        histogram: histogram(&closing_times, 0.0, cfg.t_end, cfg.histogram_bins),
        mean_closing: ensemble_mean(&closing_times),
        max_r_tilde: r_tilde.iter().copied().fold(f64::NAN, f64::max),
        certified_fraction: if results.is_empty() { 0.0 } else { certified as f64 / results.len() as f64 },
        closing_times,
        failures,
        mean_r_tilde,
        eps_tilde: et,
        mean_r_hat,
        total_bound: total,
        max_eta_adapt,
        results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_condition_values() {
        let (r1, r2, eps) = (0.2, 0.55, 1.0 / 32.0);
        let mid = initial_value([0.375, 0.0], r1, r2, eps);
        assert!((mid + ((r1 - r2) / (2.0 * std::f64::consts::SQRT_2 * eps)).tanh()).abs() < 1e-15);
        assert!(mid > 0.999);
        assert!((initial_value([0.0, 0.0], r1, r2, eps) + (r1 / (std::f64::consts::SQRT_2 * eps)).tanh()).abs() < 1e-15);
        assert_eq!(initial_value([0.0, r2], r1, r2, eps), 0.0);
    }

    #[test]
    fn closing_detector() {
        let neg: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, -1.0)).collect();
        assert_eq!(detect_closing(&[], &neg).center_time, None);
        let tr = [(0.0, -1.0), (1.0, -0.5), (2.0, 0.5), (3.0, 1.0)];
        let lam = [(0.0, 1.0), (1.0, 5.0), (2.0, f64::NAN), (3.0, 2.0)];
        let c = detect_closing(&lam, &tr);
        assert_eq!(c.center_time, Some(1.5));
        assert_eq!(c.lambda_peak, Some((1.0, 5.0)));
        assert_eq!(c.gap, Some(0.5));
    }

    #[test]
    fn histogram_and_mean() {
        let h = histogram(&[0.0, 0.5, 1.0, 2.0], 0.0, 1.0, 2);
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(ensemble_mean(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn rejects_bad_radii_and_eps() {
        let cfg = RunConfig {
            r1: 0.6,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            eps: 0.0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
