//! Residual error indicators, the residual bounds built from them, the linear
//! and nonlinear a posteriori bounds with the generalized Gronwall condition,
//! and the combined bound.
//!
//! Every unnamed generic constant is the configurable `generic_constant`
//! (default 1), so the assembled bounds are uncertified scale factors.

use crate::error::{Error, Result};
use crate::fem::{edge_jumps, local_mass, FeFunction, Space};
use crate::noise::NoiseModel;
use crate::quadrature::triangle_degree6;
use crate::schemes::f;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Clément constant `C*`.
    pub clement_constant: f64,
    /// Interpolation constant `C_I`.
    pub interp_constant: f64,
    pub c_infty: f64,
    /// `C_{h,∞}`; when `None` the run measures `max |u_h|`.
    pub c_h_infty: Option<f64>,
    pub delta: f64,
    /// Fixed `ε̃`; when `None`, `ε̃ = max(mean(R̃)^{3/4}, eps_tilde_floor)`.
    pub eps_tilde: Option<f64>,
    pub eps_tilde_floor: f64,
    /// Exponent of the `L³` interpolation inequality: 1 in two dimensions.
    pub dimension_a: f64,
    pub generic_constant: f64,
    pub c_p: f64,
    pub hoelder_p: f64,
    pub hoelder_q: f64,
    pub hoelder_a: f64,
    pub c0_moment: f64,
    pub c0_hat_moment: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            clement_constant: 1.0,
            interp_constant: 1.0,
            c_infty: 1.0,
            c_h_infty: None,
            delta: 1.0 / 3.0,
            eps_tilde: None,
            eps_tilde_floor: 1e-12,
            dimension_a: 1.0,
            generic_constant: 1.0,
            c_p: 1.0,
            hoelder_p: 16.0,
            hoelder_q: 3.0 / 16.0,
            hoelder_a: 16.0,
            c0_moment: 1.0,
            c0_hat_moment: 1.0,
        }
    }
}

impl EstimatorConfig {
    /// `λ = q - 1/p`
    pub fn hoelder_lambda(&self) -> f64 {
        self.hoelder_q - 1.0 / self.hoelder_p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Constraint(m));
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad(format!("delta = {} must lie in (0, 1/2)", self.delta));
        }
        if self.dimension_a != 1.0 && self.dimension_a != 0.8 {
            return bad(format!("dimension_a = {} must be 1 or 4/5", self.dimension_a));
        }
        let (p, q, a) = (self.hoelder_p, self.hoelder_q, self.hoelder_a);
        if !(p > 2.0 && a > 2.0 && p.is_finite() && a.is_finite()) {
            return bad(format!("hoelder_p = {p} and hoelder_a = {a} must lie in (2, inf)"));
        }
        if a < p {
            return bad(format!("hoelder_a = {a} must be at least hoelder_p = {p}"));
        }
        if !(q > 1.0 / p) {
            return bad(format!("hoelder_q = {q} must exceed 1/hoelder_p = {}", 1.0 / p));
        }
        if !(1.0 / p + q < 0.5 - 1.0 / a) {
            return bad(format!("1/p + q = {} must be below 1/2 - 1/a = {}", 1.0 / p + q, 0.5 - 1.0 / a));
        }
        let named = [
            ("clement_constant", self.clement_constant),
            ("interp_constant", self.interp_constant),
            ("c_infty", self.c_infty),
            ("eps_tilde_floor", self.eps_tilde_floor),
            ("generic_constant", self.generic_constant),
            ("c_p", self.c_p),
            ("c0_moment", self.c0_moment),
            ("c0_hat_moment", self.c0_hat_moment),
        ];
        for (name, v) in named.into_iter().chain(self.c_h_infty.map(|v| ("c_h_infty", v))).chain(self.eps_tilde.map(|v| ("eps_tilde", v))) {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        Ok(())
    }
}

/// Space indicators with their local contributions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpaceIndicators {
    /// `η_SPACE,1..3`
    pub eta: [f64; 3],
    /// `h_T² ‖τ⁻¹(y^n - y^{n-1}) + ε^γ Δg‖²_{L²(T)}` per triangle.
    pub element_residual: Vec<f64>,
    /// `h_e ‖[∇y_w·n]‖²_{L²(e)}` per edge.
    pub edge_w_jump: Vec<f64>,
    /// `h_T² ‖y_w‖²_{L²(T)}` per triangle.
    pub element_s2: Vec<f64>,
    /// `ε h_e ‖[∇y·n]‖²_{L²(e)}` per edge.
    pub edge_s3: Vec<f64>,
    /// Edge contributions to `η_SPACE,3²` split evenly between the adjacent triangles.
    pub element_s3: Vec<f64>,
}

/// `ε Σ_e h_e ‖[∇v·n]‖²_{L²(e)}` per edge and per triangle, and the global root.
pub fn space_indicator_3(space: &Space, v: &FeFunction, eps: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mesh = space.mesh();
    v.check_on(mesh)?;
    let jumps = edge_jumps(mesh, v);
    let per_edge: Vec<f64> = jumps
        .iter()
        .enumerate()
        .map(|(e, j)| {
            let h = mesh.edge_length(e);
            eps * h * h * j * j
        })
        .collect();
    let mut per_tri = vec![0.0; mesh.num_triangles()];
    for (e, edge) in mesh.edges().iter().enumerate() {
        if let [Some(a), Some(b)] = edge.tris {
            per_tri[a] += 0.5 * per_edge[e];
            per_tri[b] += 0.5 * per_edge[e];
        }
    }
    let global = per_edge.iter().sum::<f64>().sqrt();
    Ok((global, per_edge, per_tri))
}

/// Noise data entering `η_SPACE,1` through `ε^γ Δg^{r,n}`, with `g` given by its
/// closed-form mode coefficients.
pub struct NoiseTerm<'a> {
    pub model: &'a NoiseModel,
    pub coeffs: &'a [f64],
    pub eps: f64,
}

impl NoiseTerm<'_> {
    /// `ε^γ Δg = ε^{γ+1} Σ_l ν_l c_l Δ²e_l`
    fn laplacian_g(&self, x: [f64; 2]) -> Result<f64> {
        let mut s = 0.0;
        for ((nu, e), c) in self.model.modes.iter().zip(self.coeffs) {
            if *c == 0.0 || *nu == 0.0 {
                continue;
            }
            let b = e
                .bilaplacian(x)
                .ok_or_else(|| Error::InvalidArgument("mode has no closed-form bilaplacian".into()))?;
            s += nu * c * b;
        }
        Ok(self.model.scale(self.eps) * self.eps * s)
    }
}

/// `η_SPACE,1..3` for the pair `(y, y_w)` at level `n` with `y_prev` at `n-1`
/// on the same mesh. Without a noise term this is the random PDE variant.
pub fn space_indicators(
    space: &Space,
    y_prev: &FeFunction,
    y: &FeFunction,
    y_w: &FeFunction,
    tau: f64,
    eps: f64,
    noise: Option<&NoiseTerm<'_>>,
) -> Result<SpaceIndicators> {
    let mesh = space.mesh();
    for v in [y_prev, y, y_w] {
        v.check_on(mesh)?;
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    let rule = triangle_degree6();
    let mut element_residual = Vec::with_capacity(mesh.num_triangles());
    let mut element_s2 = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let h = mesh.diameter(t);
        let a = mesh.area(t);
        let mut r = 0.0;
        for q in &rule {
            let dt = (y.eval_bary(mesh, t, q.lambda) - y_prev.eval_bary(mesh, t, q.lambda)) / tau;
            let lg = match noise {
                Some(n) => n.laplacian_g(mesh.point(t, q.lambda))?,
                None => 0.0,
            };
            r += q.weight * a * (dt + lg).powi(2);
        }
        element_residual.push(h * h * r);
        let tri = mesh.triangles()[t];
        let m = local_mass(mesh, t);
        let mut l2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                l2 += m[i][j] * y_w.coeffs[tri[i]] * y_w.coeffs[tri[j]];
            }
        }
        element_s2.push(h * h * l2);
    }
    let edge_w_jump: Vec<f64> = edge_jumps(mesh, y_w)
        .iter()
        .enumerate()
        .map(|(e, j)| {
            let h = mesh.edge_length(e);
            h * h * j * j
        })
        .collect();
    let (s3, edge_s3, element_s3) = space_indicator_3(space, y, eps)?;
    let s1 = element_residual.iter().sum::<f64>().sqrt() + edge_w_jump.iter().sum::<f64>().sqrt();
    let s2 = element_s2.iter().sum::<f64>().sqrt();
    Ok(SpaceIndicators {
        eta: [s1, s2, s3],
        element_residual,
        edge_w_jump,
        element_s2,
        edge_s3,
        element_s3,
    })
}

/// `‖f(a) - f(b)‖` with a degree-6 rule (exact for P1 arguments).
pub fn nonlinear_difference(space: &Space, a: &FeFunction, b: &FeFunction) -> Result<f64> {
    let mesh = space.mesh();
    a.check_on(mesh)?;
    b.check_on(mesh)?;
    let rule = triangle_degree6();
    let mut s = 0.0;
    for t in 0..mesh.num_triangles() {
        let ar = mesh.area(t);
        for q in &rule {
            let d = f(a.eval_bary(mesh, t, q.lambda)) - f(b.eval_bary(mesh, t, q.lambda));
            s += q.weight * ar * d * d;
        }
    }
    Ok(s.sqrt())
}

/// `η_TIME,1..3`. With `nonlinear = Some((u_prev, u))` the second indicator
/// includes `ε⁻¹‖f(u^n) - f(u^{n-1})‖`.
pub fn time_indicators(
    space: &Space,
    y_prev: &FeFunction,
    y: &FeFunction,
    yw_prev: &FeFunction,
    yw: &FeFunction,
    eps: f64,
    nonlinear: Option<(&FeFunction, &FeFunction)>,
) -> Result<[f64; 3]> {
    let mesh = space.mesh();
    for v in [y_prev, y, yw_prev, yw] {
        v.check_on(mesh)?;
    }
    let dw = yw_prev.sub(yw);
    let dy = y_prev.sub(y);
    let mut t2 = space.l2_norm(&dw.coeffs);
    if let Some((a, b)) = nonlinear {
        t2 += nonlinear_difference(space, b, a)? / eps;
    }
    Ok([space.energy_norm(&dw.coeffs), t2, eps * space.energy_norm(&dy.coeffs)])
}

/// `μ₋₁ = C*η_S1 + η_T1`, `μ₀ = η_T2`, `μ₁ = η_T3 + η_S2 + C*η_S3`.
pub fn mu_bounds(space: [f64; 3], time: [f64; 3], c_star: f64) -> [f64; 3] {
    [c_star * space[0] + time[0], time[1], time[2] + space[1] + c_star * space[2]]
}

/// Per-step inputs of the linear bound.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinearStep {
    pub tau: f64,
    pub mu: [f64; 3],
    pub eta_noise: [f64; 3],
    /// `‖ũ^{n-1} - ũ^n‖²_{H^{-1}}`
    pub ut_diff_hm1_sq: f64,
    /// `‖y^{n-1} - y^n‖²_{H^{-1}}`
    pub y_diff_hm1_sq: f64,
    /// `‖∇(ũ^{n-1} - ũ^n)‖²`
    pub ut_diff_grad_sq: f64,
    /// `‖∇(y^{n-1} - y^n)‖²`
    pub y_diff_grad_sq: f64,
}

/// Summands of the linear bound, before the generic constant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinearBound {
    pub noise: f64,
    pub residual: f64,
    pub differences: f64,
    pub hoelder: f64,
    pub total: f64,
}

/// Pathwise right-hand side `R̃` of the linear SPDE estimate; `hoelder_sum` is
/// `Σ ν_l² ∫_0^T ‖σ e_l‖^a_{H^{-1}}` with the configured `a`.
pub fn linear_bound(
    steps: &[LinearStep],
    cfg: &EstimatorConfig,
    t_end: f64,
    eps: f64,
    gamma: f64,
    hoelder_sum: f64,
) -> Result<LinearBound> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument("linear bound needs at least one step".into()));
    }
    let e2g = eps.powf(2.0 * gamma);
    let mut noise = 0.0;
    let mut max_n3 = 0.0f64;
    let mut residual = 0.0;
    let mut max_ut = 0.0f64;
    let mut max_y = 0.0f64;
    let mut grads = 0.0;
    let mut tau_max = 0.0f64;
    for s in steps {
        noise += e2g * eps * s.eta_noise[0] + e2g * s.eta_noise[1];
        max_n3 = max_n3.max(s.eta_noise[2]);
        residual += s.tau * (t_end * s.mu[0].powi(2) + (t_end / eps).sqrt() * s.mu[1].powi(2) + s.mu[2].powi(2) / eps);
        max_ut = max_ut.max(s.ut_diff_hm1_sq);
        max_y = max_y.max(s.y_diff_hm1_sq);
        grads += s.tau * (s.ut_diff_grad_sq + s.y_diff_grad_sq);
        tau_max = tau_max.max(s.tau);
    }
    noise += max_n3;
    let differences = max_ut + max_y + eps * grads;
    let hoelder = cfg.c_p * tau_max.powf(2.0 * cfg.hoelder_lambda()) * hoelder_sum.powf(2.0 / cfg.hoelder_a);
    let total = cfg.generic_constant * (noise + residual + differences + hoelder);
    Ok(LinearBound {
        noise,
        residual,
        differences,
        hoelder,
        total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallOutcome {
    /// `E = exp(∫α)`
    pub e: f64,
    /// `8AE`
    pub lhs: f64,
    /// `(8B(1+T)E)^{-1/β}`, infinite for `B = 0`
    pub rhs: f64,
    pub holds: bool,
    /// `8A exp(∫α)`
    pub bound: f64,
}

/// Generalized Gronwall condition `8AE ≤ (8B(1+T)E)^{-1/β}` with `E = exp(∫α)`
/// by the rectangle rule over `(τ_n, α_n)`.
pub fn gronwall_check(a: f64, b: f64, beta: f64, alpha: &[(f64, f64)], t_end: f64) -> Result<GronwallOutcome> {
    if a < 0.0 || b < 0.0 || !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("need A, B >= 0 and beta > 0, got {a}, {b}, {beta}")));
    }
    let e = alpha.iter().map(|(tau, v)| tau * v).sum::<f64>().exp();
    let lhs = 8.0 * a * e;
    let rhs = if b == 0.0 {
        f64::INFINITY
    } else {
        (8.0 * b * (1.0 + t_end) * e).powf(-1.0 / beta)
    };
    Ok(GronwallOutcome {
        e,
        lhs,
        rhs,
        holds: lhs <= rhs,
        bound: lhs,
    })
}

/// Per-step inputs of the nonlinear bound.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HatStep {
    pub tau: f64,
    pub mu_hat: [f64; 3],
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearBound {
    pub r_hat: f64,
    pub prefactor: f64,
    pub condition: GronwallOutcome,
    pub certified: bool,
    /// The `ε̃` summands of the bracket, by name.
    pub eps_tilde_terms: Vec<(&'static str, f64)>,
    pub dominant: &'static str,
}

/// `R̂` and the admissibility condition of the random PDE estimate.
pub fn nonlinear_bound(
    steps: &[HatStep],
    cfg: &EstimatorConfig,
    eps: f64,
    t_end: f64,
    e0_hm1_sq: f64,
    eps_tilde: f64,
    c_h_infty: f64,
) -> Result<NonlinearBound> {
    if eps_tilde < 0.0 {
        return Err(Error::InvalidArgument("eps_tilde must be nonnegative".into()));
    }
    let c = cfg.generic_constant;
    let a = cfg.dimension_a;
    let one_m = 1.0 - eps.powi(3);
    let mu_int: f64 = steps
        .iter()
        .map(|s| s.tau * (s.mu_hat[0].powi(2) + s.mu_hat[1].powi(2) / eps.powi(2) + s.mu_hat[2].powi(2) / eps.powi(4)))
        .sum();
    let lambda_pos: f64 = steps.iter().map(|s| s.tau * s.lambda.max(0.0)).sum();
    let se = eps_tilde.sqrt();
    let interp = c * cfg.interp_constant * c_h_infty * cfg.c_infty.powf(1.0 - a) / (eps * eps) * eps_tilde.powf(0.5 + a);
    let well = one_m + 8.0 * one_m * one_m / eps.powi(3);
    let tail = c / eps.powi(4) * eps_tilde.powf(0.5 - cfg.delta);
    // bound bracket
    let terms = vec![
        ("eps", 2.0 * se * 2.0 * eps * se),
        ("lambda", 2.0 * se * 2.0 * one_m * se * lambda_pos),
        ("well", 2.0 * se * well * se),
        ("interpolation", 2.0 * se * interp),
        ("moment", tail),
    ];
    let bracket = mu_int + e0_hm1_sq + terms.iter().map(|t| t.1).sum::<f64>();
    let exponent: f64 = steps.iter().map(|s| s.tau * (26.0 + 4.0 * one_m * s.lambda).max(0.0)).sum();
    let prefactor = exponent.exp();
    // condition left-hand side
    let cond_a = mu_int
        + e0_hm1_sq
        + se * (4.0 * eps * se + 4.0 * one_m * se * lambda_pos + 2.0 * well * se + interp)
        + tail;
    let b = cfg.interp_constant * c_h_infty * cfg.c_infty.powf(1.0 - a) / eps.powi(5);
    let alpha: Vec<(f64, f64)> = steps.iter().map(|s| (s.tau, (9.0 + 4.0 * one_m * s.lambda).max(0.0))).collect();
    let condition = gronwall_check(cond_a, b, 0.5 * a, &alpha, t_end)?;
    let dominant = terms
        .iter()
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .map_or("none", |t| if t.1 > 0.0 { t.0 } else { "none" });
    Ok(NonlinearBound {
        r_hat: prefactor * 8.0 * bracket,
        prefactor,
        certified: condition.holds,
        condition,
        eps_tilde_terms: terms,
        dominant,
    })
}

/// `ε̃` from the configuration or from the mean linear bound.
pub fn eps_tilde(cfg: &EstimatorConfig, mean_r_tilde: f64) -> f64 {
    cfg.eps_tilde
        .unwrap_or_else(|| mean_r_tilde.max(0.0).powf(0.75).max(cfg.eps_tilde_floor))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TotalBound {
    pub total: f64,
    pub eps_tilde: f64,
}

/// `C(E[R̃] + E[1 R̂] + Ĉ₀^{1/2} (ε̃⁻¹E[R̃] + ε̃^δ C₀)^{1/2})`
pub fn total_bound(mean_r_tilde: f64, mean_r_hat: f64, cfg: &EstimatorConfig) -> TotalBound {
    let et = eps_tilde(cfg, mean_r_tilde);
    let total = cfg.generic_constant
        * (mean_r_tilde + mean_r_hat + cfg.c0_hat_moment.sqrt() * (mean_r_tilde / et + et.powf(cfg.delta) * cfg.c0_moment).sqrt());
    TotalBound { total, eps_tilde: et }
}
