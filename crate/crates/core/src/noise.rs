//! Q-Wiener noise: spatial modes, the intensity process, reproducible
//! increment paths and the noise error indicators.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fem::{load_vector, FeFunction, Space};
use crate::mesh::{Mesh, Square};
use crate::quadrature::{integrate_1d, triangle_degree6};

/// A closed-form spatial eigenfunction of the covariance operator.
pub trait SpatialMode: Send + Sync + fmt::Debug {
    fn value(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
    /// Closed-form Laplacian, if known.
    fn laplacian(&self, x: [f64; 2]) -> Option<f64>;
    /// Closed-form `Δ²e`, if known.
    fn bilaplacian(&self, x: [f64; 2]) -> Option<f64>;
    fn l2_norm_sq(&self) -> f64;
    /// `‖∇e‖²`
    fn grad_norm_sq(&self) -> f64;
    /// `‖e‖²_{H^{-1}}`
    fn hm1_norm_sq(&self) -> f64;
}

/// `cos(k l₁ (x₁ - x₀)) cos(k l₂ (x₂ - y₀))` with `k = 2π / side`, a Neumann
/// eigenfunction of `-Δ` on the square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineMode {
    pub l: [u32; 2],
    pub domain: Square,
}

impl CosineMode {
    pub fn new(l: [u32; 2], domain: Square) -> Result<Self> {
        if l == [0, 0] {
            return Err(Error::InvalidArgument("the constant mode has nonzero mean".into()));
        }
        Ok(Self { l, domain })
    }

    fn k(&self) -> f64 {
        2.0 * PI / self.domain.side
    }

    /// Eigenvalue of `-Δ`.
    pub fn eigenvalue(&self) -> f64 {
        let k = self.k();
        k * k * f64::from(self.l[0] * self.l[0] + self.l[1] * self.l[1])
    }

    fn args(&self, x: [f64; 2]) -> (f64, f64, f64, f64) {
        let k = self.k();
        (
            k * f64::from(self.l[0]),
            k * f64::from(self.l[1]),
            k * f64::from(self.l[0]) * (x[0] - self.domain.x0),
            k * f64::from(self.l[1]) * (x[1] - self.domain.y0),
        )
    }
}

impl SpatialMode for CosineMode {
    fn value(&self, x: [f64; 2]) -> f64 {
        let (_, _, a, b) = self.args(x);
        a.cos() * b.cos()
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let (k1, k2, a, b) = self.args(x);
        [-k1 * a.sin() * b.cos(), -k2 * a.cos() * b.sin()]
    }

    fn laplacian(&self, x: [f64; 2]) -> Option<f64> {
        Some(-self.eigenvalue() * self.value(x))
    }

    fn bilaplacian(&self, x: [f64; 2]) -> Option<f64> {
        Some(self.eigenvalue().powi(2) * self.value(x))
    }

    fn l2_norm_sq(&self) -> f64 {
        let a = self.domain.area();
        if self.l[0] == 0 || self.l[1] == 0 {
            a / 2.0
        } else {
            a / 4.0
        }
    }

    fn grad_norm_sq(&self) -> f64 {
        self.eigenvalue() * self.l2_norm_sq()
    }

    fn hm1_norm_sq(&self) -> f64 {
        self.l2_norm_sq() / self.eigenvalue()
    }
}

type Field = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// A user-supplied closed form together with its norms.
#[derive(Clone)]
pub struct ClosedFormMode {
    pub value: Field,
    pub gradient: VectorField,
    pub laplacian: Option<Field>,
    pub bilaplacian: Option<Field>,
    pub l2_norm_sq: f64,
    pub grad_norm_sq: f64,
    pub hm1_norm_sq: f64,
}

impl fmt::Debug for ClosedFormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedFormMode")
            .field("l2_norm_sq", &self.l2_norm_sq)
            .field("grad_norm_sq", &self.grad_norm_sq)
            .field("hm1_norm_sq", &self.hm1_norm_sq)
            .finish_non_exhaustive()
    }
}

impl SpatialMode for ClosedFormMode {
    fn value(&self, x: [f64; 2]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        (self.gradient)(x)
    }
    fn laplacian(&self, x: [f64; 2]) -> Option<f64> {
        self.laplacian.as_ref().map(|l| l(x))
    }
    fn bilaplacian(&self, x: [f64; 2]) -> Option<f64> {
        self.bilaplacian.as_ref().map(|l| l(x))
    }
    fn l2_norm_sq(&self) -> f64 {
        self.l2_norm_sq
    }
    fn grad_norm_sq(&self) -> f64 {
        self.grad_norm_sq
    }
    fn hm1_norm_sq(&self) -> f64 {
        self.hm1_norm_sq
    }
}

/// Scalar, spatially constant intensity `σ(t)`.
#[derive(Clone)]
pub enum SigmaProcess {
    Constant(f64),
    /// `base + amplitude · sin(omega · t)`
    Sine { base: f64, amplitude: f64, omega: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for SigmaProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(s) => write!(f, "Constant({s})"),
            Self::Sine { base, amplitude, omega } => write!(f, "Sine({base} + {amplitude} sin({omega} t))"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl SigmaProcess {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(s) => *s,
            Self::Sine { base, amplitude, omega } => base + amplitude * (omega * t).sin(),
            Self::Custom(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::Sine { amplitude, omega, .. } => *amplitude == 0.0 || *omega == 0.0,
            Self::Custom(_) => false,
        }
    }
}

/// Law for the amplitudes beyond the listed modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecaySpec {
    /// No modes beyond the listed ones.
    FiniteSupport,
    /// `ν_l = c · l^{-s}` for `l` past the listed modes, with unit-norm modes whose
    /// eigenvalues follow the Weyl law `λ_l ≈ 4π l / |D|`. Tail sums are bounded
    /// above by the corresponding integrals.
    PowerLaw { c: f64, s: f64 },
}

#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub modes: Vec<(f64, Arc<dyn SpatialMode>)>,
    pub truncation_r: usize,
    pub gamma: f64,
    /// Raw multiplier folded into σ.
    pub amplitude: f64,
    pub sigma: SigmaProcess,
    pub decay: Option<DecaySpec>,
    pub domain: Square,
}

impl NoiseModel {
    /// `ν Σ cos(π l₁(x₁ - 1)) cos(π l₂(x₂ - 1))` over `l₁, l₂ ∈ 1..=max_l` on the
    /// square, ordered by eigenvalue.
    pub fn tensor_cosine(domain: Square, nu: f64, max_l: u32, sigma: SigmaProcess) -> Self {
        let mut ls: Vec<[u32; 2]> = (1..=max_l).flat_map(|a| (1..=max_l).map(move |b| [a, b])).collect();
        ls.sort_by_key(|l| (l[0] * l[0] + l[1] * l[1], l[0]));
        let modes: Vec<(f64, Arc<dyn SpatialMode>)> = ls
            .into_iter()
            .map(|l| (nu, Arc::new(CosineMode { l, domain }) as Arc<dyn SpatialMode>))
            .collect();
        let r = modes.len();
        Self {
            modes,
            truncation_r: r,
            gamma: 0.0,
            amplitude: 1.0,
            sigma,
            decay: Some(DecaySpec::FiniteSupport),
            domain,
        }
    }

    /// The finite-dimensional noise with amplitude 1/2 and 16 modes on `(-1,1)²`.
    pub fn reference(sigma: f64) -> Self {
        Self::tensor_cosine(Square::centered(1.0), 0.5, 4, SigmaProcess::Constant(sigma))
    }

    pub fn zero(domain: Square) -> Self {
        Self {
            modes: Vec::new(),
            truncation_r: 0,
            gamma: 0.0,
            amplitude: 0.0,
            sigma: SigmaProcess::Constant(0.0),
            decay: Some(DecaySpec::FiniteSupport),
            domain,
        }
    }

    pub fn r(&self) -> usize {
        self.truncation_r.min(self.modes.len())
    }

    /// Effective intensity `amplitude · σ(t)`.
    pub fn sigma_at(&self, t: f64) -> f64 {
        self.amplitude * self.sigma.at(t)
    }

    /// `ε^γ`
    pub fn scale(&self, eps: f64) -> f64 {
        eps.powf(self.gamma)
    }

    pub fn is_silent(&self) -> bool {
        self.r() == 0 || self.amplitude == 0.0 || self.modes[..self.r()].iter().all(|(nu, _)| *nu == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.iter().any(|(nu, _)| !(*nu >= 0.0) || !nu.is_finite()) {
            return Err(Error::InvalidArgument("mode amplitudes must be finite and nonnegative".into()));
        }
        if let Some(DecaySpec::PowerLaw { c, s }) = self.decay {
            if c < 0.0 || s <= 1.0 {
                return Err(Error::InvalidArgument(format!("power-law tail needs c >= 0 and s > 1, got c={c}, s={s}")));
            }
        }
        Ok(())
    }

    /// `(Σ_{l>r} ν_l² ‖∇e_l‖², Σ_{l>r} ν_l² ‖e_l‖²_{H^{-1}})`, listed modes exactly
    /// plus the decay-law tail.
    pub fn tail_sums(&self) -> Result<(f64, f64)> {
        let decay = self
            .decay
            .ok_or_else(|| Error::InvalidArgument("noise model has no decay law for tail sums".into()))?;
        let mut grad = 0.0;
        let mut hm1 = 0.0;
        for (nu, e) in &self.modes[self.r()..] {
            grad += nu * nu * e.grad_norm_sq();
            hm1 += nu * nu * e.hm1_norm_sq();
        }
        if let DecaySpec::PowerLaw { c, s } = decay {
            // Σ_{l>L} c² l^{-2s} (κ l)^{±1} ≤ c² κ^{±1} ∫_L^∞ x^{-2s±1} dx, κ = 4π/|D|
            let big_l = self.modes.len().max(1) as f64;
            let kappa = 4.0 * PI / self.domain.area();
            grad += c * c * kappa * big_l.powf(2.0 - 2.0 * s) / (2.0 * s - 2.0);
            hm1 += c * c / kappa * big_l.powf(-2.0 * s) / (2.0 * s);
        }
        Ok((grad, hm1))
    }

    /// `Σ_l ν_l² ‖e_l‖^a_{H^{-1}}` over all modes.
    pub fn hm1_power_sum(&self, a: f64) -> Result<f64> {
        let decay = self
            .decay
            .ok_or_else(|| Error::InvalidArgument("noise model has no decay law for tail sums".into()))?;
        let mut sum: f64 = self.modes.iter().map(|(nu, e)| nu * nu * e.hm1_norm_sq().powf(0.5 * a)).sum();
        if let DecaySpec::PowerLaw { c, s } = decay {
            let big_l = self.modes.len().max(1) as f64;
            let kappa = 4.0 * PI / self.domain.area();
            let p = 2.0 * s + 0.5 * a;
            sum += c * c * kappa.powf(-0.5 * a) * big_l.powf(1.0 - p) / (p - 1.0);
        }
        Ok(sum)
    }

    /// `Σ_l ν_l² ∫_0^T ‖σ(s) e_l‖^a_{H^{-1}} ds`
    pub fn hoelder_sum(&self, a: f64, t_end: f64) -> Result<f64> {
        let s = integrate_1d(0.0, t_end, 24, |t| self.sigma_at(t).abs().powf(a));
        Ok(self.hm1_power_sum(a)? * s)
    }

    /// `(Σ_l ν_l² ‖∇e_l‖², Σ_l ν_l² ‖e_l‖²_{H^{-1}})` over all modes.
    pub fn full_sums(&self) -> Result<(f64, f64)> {
        let (tg, th) = self.tail_sums()?;
        let (mut g, mut h) = (tg, th);
        for (nu, e) in &self.modes[..self.r()] {
            g += nu * nu * e.grad_norm_sq();
            h += nu * nu * e.hm1_norm_sq();
        }
        Ok((g, h))
    }
}

/// Independent generator for one path: ChaCha20 seeded by the master seed,
/// stream selected by the path index.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// `r` independent `N(0, τ)` draws.
pub fn sample_increments(model: &NoiseModel, rng: &mut ChaCha20Rng, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
    }
    let s = tau.sqrt();
    Ok((0..model.r()).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Brownian increments of one path, drawn on demand. A rejected proposal is kept
/// and refined by Brownian bridge sampling, so the path is consistent under
/// step halving.
#[derive(Clone, Debug)]
pub struct NoisePath {
    pub seed: u64,
    pub path_index: u64,
    rng: ChaCha20Rng,
    r: usize,
    /// accepted `(t_{n-1}, t_n, Δ_n β)`
    pub steps: Vec<(f64, f64, Vec<f64>)>,
    pending: Option<(f64, Vec<f64>)>,
}

impl NoisePath {
    pub fn new(model: &NoiseModel, seed: u64, path_index: u64) -> Self {
        Self {
            seed,
            path_index,
            rng: path_rng(seed, path_index),
            r: model.r(),
            steps: Vec::new(),
            pending: None,
        }
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Increments over the next interval of length `tau`.
    pub fn propose(&mut self, tau: f64) -> Result<Vec<f64>> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
        }
        match self.pending.take() {
            None => Ok((0..self.r).map(|_| tau.sqrt() * self.normal()).collect()),
            Some((tp, dp)) => {
                let rel = (tau - tp).abs() / tp;
                if rel <= 1e-12 {
                    Ok(dp)
                } else if tau < tp {
                    // bridge: β(τ) | β(τ_p) = Δ ~ N(Δ τ/τ_p, τ(τ_p - τ)/τ_p)
                    let sd = (tau * (tp - tau) / tp).sqrt();
                    let first: Vec<f64> = dp.iter().map(|d| d * tau / tp + sd * self.normal()).collect();
                    let rest: Vec<f64> = dp.iter().zip(&first).map(|(d, f)| d - f).collect();
                    self.pending = Some((tp - tau, rest));
                    Ok(first)
                } else {
                    let extra = (tau - tp).sqrt();
                    Ok(dp.iter().map(|d| d + extra * self.normal()).collect())
                }
            }
        }
    }

    /// Returns a proposal that was not used; it is reissued (possibly bridged) next.
    pub fn reject(&mut self, tau: f64, increments: Vec<f64>) {
        self.pending = Some(match self.pending.take() {
            None => (tau, increments),
            Some((tp, dp)) => (tau + tp, increments.iter().zip(&dp).map(|(a, b)| a + b).collect()),
        });
    }

    pub fn accept(&mut self, t_prev: f64, t_next: f64, increments: Vec<f64>) {
        self.steps.push((t_prev, t_next, increments));
    }
}

/// Nodal interpolation of `σ(t_{n-1}) Σ ν_l e_l Δβ_l`.
pub fn increment_field(model: &NoiseModel, increments: &[f64], mesh: &Mesh, t_prev: f64) -> Result<FeFunction> {
    if increments.len() != model.r() {
        return Err(Error::InvalidArgument(format!(
            "{} increments for {} modes",
            increments.len(),
            model.r()
        )));
    }
    let s = model.sigma_at(t_prev);
    let modes = &model.modes[..model.r()];
    Ok(FeFunction::interpolate(mesh, |x| {
        s * modes.iter().zip(increments).map(|((nu, e), d)| nu * e.value(x) * d).sum::<f64>()
    }))
}

/// Closed-form coefficients `c_l = Σ_{j≤n} σ(t_{j-1}) Δ_j β_l`.
pub fn mode_coefficients(model: &NoiseModel, path: &NoisePath, up_to_n: usize) -> Vec<f64> {
    let mut c = vec![0.0; model.r()];
    for (t0, _, d) in path.steps.iter().take(up_to_n) {
        let s = model.sigma_at(*t0);
        for (cl, dl) in c.iter_mut().zip(d) {
            *cl += s * dl;
        }
    }
    c
}

/// Nodal interpolation of `g^{r,n} = ε Σ_j Δ[σ^{j-1} Σ ν_l e_l Δ_j β_l]` from closed-form Laplacians.
pub fn accumulate_g(model: &NoiseModel, path: &NoisePath, mesh: &Mesh, eps: f64, up_to_n: usize) -> Result<FeFunction> {
    let c = mode_coefficients(model, path, up_to_n);
    g_from_coefficients(model, &c, mesh, eps)
}

pub fn g_from_coefficients(model: &NoiseModel, c: &[f64], mesh: &Mesh, eps: f64) -> Result<FeFunction> {
    let modes = &model.modes[..model.r()];
    let mut out = vec![0.0; mesh.num_vertices()];
    for ((nu, e), cl) in modes.iter().zip(c) {
        if *cl == 0.0 || *nu == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(mesh.vertices()) {
            let lap = e
                .laplacian(x)
                .ok_or_else(|| Error::InvalidArgument("mode has no closed-form Laplacian".into()))?;
            *o += eps * nu * cl * lap;
        }
    }
    FeFunction::new(mesh, out)
}

/// Per-mode load vectors `(e_l, φ_i)` on one mesh, shifted by a multiple of
/// `(1, φ_i)` so that each sums to zero exactly.
#[derive(Clone, Debug)]
pub struct ModeLoads {
    pub generation: u64,
    pub loads: Vec<Vec<f64>>,
}

impl ModeLoads {
    pub fn new(model: &NoiseModel, space: &Space) -> Self {
        let mesh = space.mesh();
        let m1 = space.mass_lumped();
        let area = space.area();
        let loads = model.modes[..model.r()]
            .iter()
            .map(|(_, e)| {
                let mut b = load_vector(mesh, |x| e.value(x));
                let c = b.iter().sum::<f64>() / area;
                b.iter_mut().zip(m1).for_each(|(b, m)| *b -= c * m);
                b
            })
            .collect();
        Self {
            generation: mesh.generation(),
            loads,
        }
    }

    /// `(σ(t_{n-1}) Σ ν_l e_l Δβ_l, φ_i)`
    pub fn noise_load(&self, model: &NoiseModel, increments: &[f64], t_prev: f64) -> Vec<f64> {
        let s = model.sigma_at(t_prev);
        let n = self.loads.first().map_or(0, Vec::len);
        let mut b = vec![0.0; n];
        for ((load, (nu, _)), d) in self.loads.iter().zip(&model.modes).zip(increments) {
            let a = s * nu * d;
            b.iter_mut().zip(load).for_each(|(b, l)| *b += a * l);
        }
        b
    }
}

/// Projection defects `‖P_h e_l - e_l‖²_{H^{-1}}` and `‖∇(P_h e_l - e_l)‖²` of the
/// modes on one mesh. The H^{-1} defect is measured by comparing with the
/// projection on the uniformly refined mesh.
#[derive(Clone, Debug)]
pub struct ProjectionDefects {
    pub generation: u64,
    pub hm1_sq: Vec<f64>,
    pub grad_sq: Vec<f64>,
}

impl ProjectionDefects {
    pub fn new(model: &NoiseModel, space: &Space) -> Result<Self> {
        let mesh = space.mesh();
        let fine_mesh = mesh.refine_uniform()?;
        let fine = Space::new(Arc::new(fine_mesh));
        let coarse_loads = ModeLoads::new(model, space);
        let fine_loads = ModeLoads::new(model, &fine);
        let rule = triangle_degree6();
        let mut hm1_sq = Vec::new();
        let mut grad_sq = Vec::new();
        for (l, (_, e)) in model.modes[..model.r()].iter().enumerate() {
            let pc = FeFunction::new(mesh, space.solve_mass(&coarse_loads.loads[l])?)?;
            let pf = fine.solve_mass(&fine_loads.loads[l])?;
            let pc_fine = crate::fem::prolong(&pc, fine.mesh())?;
            let diff: Vec<f64> = pf.iter().zip(&pc_fine.coeffs).map(|(a, b)| a - b).collect();
            hm1_sq.push(fine.hminus1_norm_sq(&diff)?);
            let mut g = 0.0;
            for t in 0..mesh.num_triangles() {
                let gp = pc.gradient(mesh, t);
                let a = mesh.area(t);
                for q in &rule {
                    let ge = e.gradient(mesh.point(t, q.lambda));
                    g += q.weight * a * ((gp[0] - ge[0]).powi(2) + (gp[1] - ge[1]).powi(2));
                }
            }
            grad_sq.push(g);
        }
        Ok(Self {
            generation: mesh.generation(),
            hm1_sq,
            grad_sq,
        })
    }

    pub fn zero(model: &NoiseModel, generation: u64) -> Self {
        Self {
            generation,
            hm1_sq: vec![0.0; model.r()],
            grad_sq: vec![0.0; model.r()],
        }
    }
}

const GL_POINTS: usize = 8;

fn time_integral(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    integrate_1d(a, b, GL_POINTS, f)
}

/// Per-step η_NOISE,1 over the step times `(t_{n-1}, t_n)`.
pub fn noise_indicator_1(model: &NoiseModel, steps: &[(f64, f64)]) -> Result<Vec<f64>> {
    let (tail_grad, _) = model.tail_sums()?;
    let (all_grad, _) = model.full_sums()?;
    let mut hist_tail = 0.0; // Σ_j τ_j σ_{j-1}²
    let mut hist_diff = 0.0; // Σ_j ∫ (σ(s) - σ_{j-1})² ds
    let mut out = Vec::with_capacity(steps.len());
    for &(t0, t1) in steps {
        let tau = t1 - t0;
        let s0 = model.sigma_at(t0);
        hist_tail += tau * s0 * s0;
        hist_diff += time_integral(t0, t1, |s| (model.sigma_at(s) - s0).powi(2));
        // ∫_{t0}^{t1} ∫_t^{t1} σ(s)² ds dt = ∫ (s - t0) σ(s)² ds
        let inner = time_integral(t0, t1, |s| (s - t0) * model.sigma_at(s).powi(2));
        out.push(tau * hist_tail * tail_grad + tau * hist_diff * all_grad + all_grad * inner);
    }
    Ok(out)
}

/// Per-step `(η_NOISE,2, η_NOISE,3)`; `defects[n]` are the projection defects on the step-`n` mesh.
pub fn noise_indicators_2_3(
    model: &NoiseModel,
    eps: f64,
    steps: &[(f64, f64)],
    defects: &[&ProjectionDefects],
) -> Result<Vec<(f64, f64)>> {
    if defects.len() != steps.len() {
        return Err(Error::InvalidArgument("one set of projection defects per step is required".into()));
    }
    let (_, tail_hm1) = model.tail_sums()?;
    let (_, all_hm1) = model.full_sums()?;
    let nu2: Vec<f64> = model.modes[..model.r()].iter().map(|(nu, _)| nu * nu).collect();
    let mut hist = 0.0; // Σ_j τ_j σ_{j-1}²
    let mut out = Vec::with_capacity(steps.len());
    for (&(t0, t1), d) in steps.iter().zip(defects) {
        let tau = t1 - t0;
        let s0 = model.sigma_at(t0);
        hist += tau * s0 * s0;
        let proj_hm1: f64 = nu2.iter().zip(&d.hm1_sq).map(|(a, b)| a * b).sum();
        let proj_grad: f64 = nu2.iter().zip(&d.grad_sq).map(|(a, b)| a * b).sum();
        let eta2 = tau * s0 * s0 * tail_hm1
            + all_hm1 * time_integral(t0, t1, |s| (model.sigma_at(s) - s0).powi(2))
            + tau * s0 * s0 * proj_hm1
            + eps * tau * hist * proj_grad;
        let eta3 = all_hm1 * time_integral(t0, t1, |s| model.sigma_at(s).powi(2));
        out.push((eta2, eta3));
    }
    Ok(out)
}
