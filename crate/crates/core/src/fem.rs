//! P1 finite elements: assembly, projections, discrete norms and transfers.

use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{dot, pcg, Pattern, SparseOperator, SpdFactor};
use crate::mesh::{Coarsening, Mesh};
use crate::quadrature::{triangle_degree5, triangle_degree6, BaryPoint};

/// Nodal coefficients of a continuous piecewise linear function.
#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    pub generation: u64,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: &Mesh, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for {} vertices",
                coeffs.len(),
                mesh.num_vertices()
            )));
        }
        Ok(Self {
            generation: mesh.generation(),
            coeffs,
        })
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        Self {
            generation: mesh.generation(),
            coeffs: vec![c; mesh.num_vertices()],
        }
    }

    /// Nodal interpolation.
    pub fn interpolate(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self {
            generation: mesh.generation(),
            coeffs: mesh.vertices().iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn check_on(&self, mesh: &Mesh) -> Result<()> {
        if self.generation != mesh.generation() {
            return Err(Error::GenerationMismatch {
                expected: mesh.generation(),
                found: self.generation,
            });
        }
        if self.coeffs.len() != mesh.num_vertices() {
            return Err(Error::InvalidArgument("coefficient count differs from vertex count".into()));
        }
        Ok(())
    }

    /// `a * self + b * other`
    pub fn lin_comb(&self, a: f64, other: &FeFunction, b: f64) -> FeFunction {
        assert_eq!(self.generation, other.generation, "fields on different generations");
        FeFunction {
            generation: self.generation,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn sub(&self, other: &FeFunction) -> FeFunction {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &FeFunction) -> FeFunction {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn scale(&self, a: f64) -> FeFunction {
        FeFunction {
            generation: self.generation,
            coeffs: self.coeffs.iter().map(|x| a * x).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::norm_inf(&self.coeffs)
    }

    /// Value at barycentric coordinates of triangle `t`.
    pub fn eval_bary(&self, mesh: &Mesh, t: usize, l: [f64; 3]) -> f64 {
        let tri = mesh.triangles()[t];
        l[0] * self.coeffs[tri[0]] + l[1] * self.coeffs[tri[1]] + l[2] * self.coeffs[tri[2]]
    }

    pub fn eval(&self, mesh: &Mesh, x: [f64; 2]) -> Option<f64> {
        mesh.locate(x).map(|(t, l)| self.eval_bary(mesh, t, l))
    }

    pub fn gradient(&self, mesh: &Mesh, t: usize) -> [f64; 2] {
        let g = mesh.basis_gradients(t);
        let tri = mesh.triangles()[t];
        let mut out = [0.0; 2];
        for k in 0..3 {
            out[0] += self.coeffs[tri[k]] * g[k][0];
            out[1] += self.coeffs[tri[k]] * g[k][1];
        }
        out
    }

    /// Plain-text dump: header `fefun <generation> <n>`, one coefficient per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("fefun {} {}\n", self.generation, self.coeffs.len());
        for c in &self.coeffs {
            let _ = writeln!(s, "{c:.16e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format {
            what: "fefun".into(),
            msg,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty input".into()))?.split_whitespace().collect();
        if header.len() != 3 || header[0] != "fefun" {
            return Err(bad(format!("bad header {header:?}")));
        }
        let generation = header[1].parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let n = header[2].parse::<usize>().map_err(|e| bad(e.to_string()))?;
        let coeffs: Vec<f64> = lines
            .map(|l| l.trim().parse::<f64>().map_err(|e| bad(format!("{l}: {e}"))))
            .collect::<Result<_>>()?;
        if coeffs.len() != n {
            return Err(bad(format!("expected {n} coefficients, found {}", coeffs.len())));
        }
        Ok(Self { generation, coeffs })
    }
}

pub fn mesh_pattern(mesh: &Mesh) -> Arc<Pattern> {
    Arc::new(Pattern::from_pairs(
        mesh.num_vertices(),
        mesh.edges().iter().map(|e| (e.v[0], e.v[1])),
    ))
}

fn assemble_with(mesh: &Mesh, pattern: Arc<Pattern>, local: impl Fn(usize) -> [[f64; 3]; 3]) -> SparseOperator {
    let mut op = SparseOperator::zeros(pattern);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let m = local(t);
        for i in 0..3 {
            for j in 0..3 {
                op.add(tri[i], tri[j], m[i][j]);
            }
        }
    }
    op
}

pub fn local_mass(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let a = mesh.area(t) / 12.0;
    let mut m = [[a; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 2.0 * a;
    }
    m
}

pub fn local_stiffness(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let g = mesh.basis_gradients(t);
    let a = mesh.area(t);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

pub fn assemble_mass(mesh: &Mesh) -> SparseOperator {
    assemble_with(mesh, mesh_pattern(mesh), |t| local_mass(mesh, t))
}

pub fn assemble_stiffness(mesh: &Mesh) -> SparseOperator {
    assemble_with(mesh, mesh_pattern(mesh), |t| local_stiffness(mesh, t))
}

/// Matrix of `∫ map(weight) φ_i φ_j` with a degree-5 rule.
pub fn assemble_weighted_mass(mesh: &Mesh, weight: &FeFunction, map: impl Fn(f64) -> f64) -> SparseOperator {
    weighted_mass_on(mesh, mesh_pattern(mesh), weight, &map)
}

fn weighted_mass_on(mesh: &Mesh, pattern: Arc<Pattern>, weight: &FeFunction, map: &dyn Fn(f64) -> f64) -> SparseOperator {
    let rule = triangle_degree5();
    assemble_with(mesh, pattern, |t| {
        let a = mesh.area(t);
        let tri = mesh.triangles()[t];
        let mut m = [[0.0; 3]; 3];
        for q in &rule {
            let s: f64 = (0..3).map(|k| q.lambda[k] * weight.coeffs[tri[k]]).sum();
            let w = q.weight * a * map(s);
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += w * q.lambda[i] * q.lambda[j];
                }
            }
        }
        m
    })
}

fn load_with(mesh: &Mesh, rule: &[BaryPoint], f: impl Fn(usize, &BaryPoint) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        for q in rule {
            let w = q.weight * a * f(t, q);
            for k in 0..3 {
                b[tri[k]] += w * q.lambda[k];
            }
        }
    }
    b
}

/// Load vector `∫ f φ_i` with a degree-6 rule.
pub fn load_vector(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    load_with(mesh, &triangle_degree6(), |t, q| f(mesh.point(t, q.lambda)))
}

/// Load vector `∫ g(v) φ_i` for a pointwise map of a P1 field (exact for cubic `g`).
pub fn nonlinear_load(mesh: &Mesh, v: &FeFunction, g: impl Fn(f64) -> f64) -> Vec<f64> {
    load_with(mesh, &triangle_degree5(), |t, q| g(v.eval_bary(mesh, t, q.lambda)))
}

/// Tolerance of the iterative solves.
pub const CG_TOL: f64 = 1e-12;

/// L2 projection onto the P1 space via a Jacobi-preconditioned CG mass solve.
pub fn l2_project(mesh: &Mesh, source: impl Fn([f64; 2]) -> f64) -> Result<FeFunction> {
    let m = assemble_mass(mesh);
    let b = load_vector(mesh, source);
    let d = m.diagonal();
    let mut x = vec![0.0; b.len()];
    pcg(
        |v, out| m.apply_into(v, out),
        |r, z| z.iter_mut().zip(r).zip(&d).for_each(|((z, r), d)| *z = r / d),
        &b,
        &mut x,
        CG_TOL,
        10 * b.len() + 100,
    )?;
    FeFunction::new(mesh, x)
}

/// `∫_D v`
pub fn integral(mesh: &Mesh, v: &FeFunction) -> f64 {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| mesh.area(t) / 3.0 * (v.coeffs[tri[0]] + v.coeffs[tri[1]] + v.coeffs[tri[2]]))
        .sum()
}

pub fn mean(mesh: &Mesh, v: &FeFunction) -> f64 {
    integral(mesh, v) / mesh.total_area()
}

/// Relative zero-mean tolerance accepted by the H^{-1} norm.
pub const ZERO_MEAN_TOL: f64 = 1e-10;

fn check_zero_mean(mesh: &Mesh, v: &FeFunction, mass: &SparseOperator) -> Result<()> {
    let l2 = mass.quad_form(&v.coeffs).max(0.0).sqrt();
    let m = integral(mesh, v);
    if m.abs() > ZERO_MEAN_TOL * l2 * mesh.total_area().sqrt() {
        return Err(Error::NotZeroMean {
            mean: m / mesh.total_area(),
        });
    }
    Ok(())
}

/// Discrete H^{-1} norm `‖∇ψ‖` where `ψ` solves the zero-mean Neumann problem
/// `(∇ψ, ∇φ) = (v, φ)`; the constraint is kept by projecting the
/// preconditioned residual onto zero-mean functions inside CG.
pub fn hminus1_norm(mesh: &Mesh, v: &FeFunction) -> Result<f64> {
    v.check_on(mesh)?;
    let m = assemble_mass(mesh);
    check_zero_mean(mesh, v, &m)?;
    let k = assemble_stiffness(mesh);
    let b = m.apply(&v.coeffs);
    let m1 = m.row_sums();
    let area: f64 = m1.iter().sum();
    let d = k.diagonal();
    let mut psi = vec![0.0; b.len()];
    pcg(
        |x, out| k.apply_into(x, out),
        |r, z| {
            z.iter_mut().zip(r).zip(&d).for_each(|((z, r), d)| *z = r / d);
            let c = dot(&m1, z) / area;
            z.iter_mut().for_each(|z| *z -= c);
        },
        &b,
        &mut psi,
        1e-10,
        20 * b.len() + 100,
    )?;
    Ok(k.quad_form(&psi).max(0.0).sqrt())
}

/// Gradient jump `[∇v·n]` across each interior edge, zero on the boundary.
pub fn edge_jumps(mesh: &Mesh, v: &FeFunction) -> Vec<f64> {
    mesh.edges()
        .iter()
        .map(|e| match e.tris {
            [Some(t1), Some(t2)] => {
                let (g1, g2) = (v.gradient(mesh, t1), v.gradient(mesh, t2));
                let (p, q) = (mesh.vertices()[e.v[0]], mesh.vertices()[e.v[1]]);
                let len = (q[0] - p[0]).hypot(q[1] - p[1]);
                let mut n = [(q[1] - p[1]) / len, -(q[0] - p[0]) / len];
                // orient n outward from t1: the vertex of t1 off the edge lies behind it
                let off = mesh.triangles()[t1].into_iter().find(|&w| w != e.v[0] && w != e.v[1]).unwrap();
                let r = mesh.vertices()[off];
                if (r[0] - p[0]) * n[0] + (r[1] - p[1]) * n[1] > 0.0 {
                    n = [-n[0], -n[1]];
                }
                (g1[0] - g2[0]) * n[0] + (g1[1] - g2[1]) * n[1]
            }
            _ => 0.0,
        })
        .collect()
}

/// Per-edge `h_e ‖[∇v·n]‖²_{L²(e)} = h_e² [∇v·n]²`; zero on boundary edges.
pub fn edge_jump_indicator(mesh: &Mesh, v: &FeFunction) -> Vec<f64> {
    edge_jumps(mesh, v)
        .iter()
        .enumerate()
        .map(|(e, j)| {
            let h = mesh.edge_length(e);
            h * h * j * j
        })
        .collect()
}

/// Piecewise linear time interpolant between two levels.
pub fn interpolant_eval(prev: &FeFunction, next: &FeFunction, t_prev: f64, t_next: f64, t: f64) -> Result<FeFunction> {
    if !(t_prev < t_next) || t < t_prev || t > t_next {
        return Err(Error::InvalidArgument(format!("t = {t} outside [{t_prev}, {t_next}]")));
    }
    if prev.generation != next.generation || prev.len() != next.len() {
        return Err(Error::GenerationMismatch {
            expected: next.generation,
            found: prev.generation,
        });
    }
    let s = (t - t_prev) / (t_next - t_prev);
    Ok(prev.lin_comb(1.0 - s, next, s))
}

/// Nodal injection onto a mesh obtained from `v`'s mesh by refinement only.
pub fn prolong(v: &FeFunction, fine: &Mesh) -> Result<FeFunction> {
    let mut c = v.coeffs.clone();
    c.reserve(fine.num_vertices() - c.len().min(fine.num_vertices()));
    for k in v.len()..fine.num_vertices() {
        let [a, b] = fine
            .vertex_origin(k)
            .ok_or_else(|| Error::Mesh(format!("vertex {k} has no bisection origin")))?;
        c.push(0.5 * (c[a] + c[b]));
    }
    FeFunction::new(fine, c)
}

/// Cached operators and factorizations of one mesh.
pub struct Space {
    mesh: Arc<Mesh>,
    pattern: Arc<Pattern>,
    mass: SparseOperator,
    stiffness: SparseOperator,
    mass_lumped: Vec<f64>,
    mass_factor: OnceLock<std::result::Result<SpdFactor, String>>,
    poisson: OnceLock<std::result::Result<SpdFactor, String>>,
}

impl Space {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let pattern = mesh_pattern(&mesh);
        let mass = assemble_with(&mesh, pattern.clone(), |t| local_mass(&mesh, t));
        let stiffness = assemble_with(&mesh, pattern.clone(), |t| local_stiffness(&mesh, t));
        let mass_lumped = mass.row_sums();
        Space {
            mesh,
            pattern,
            mass,
            stiffness,
            mass_lumped,
            mass_factor: OnceLock::new(),
            poisson: OnceLock::new(),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    /// `M 1`, the integrals of the basis functions.
    pub fn mass_lumped(&self) -> &[f64] {
        &self.mass_lumped
    }

    pub fn area(&self) -> f64 {
        self.mass_lumped.iter().sum()
    }

    pub fn weighted_mass(&self, weight: &FeFunction, map: impl Fn(f64) -> f64) -> SparseOperator {
        weighted_mass_on(&self.mesh, self.pattern.clone(), weight, &map)
    }

    fn mass_factor(&self) -> Result<&SpdFactor> {
        self.mass_factor
            .get_or_init(|| SpdFactor::new(&self.mass).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Factorization(e.clone()))
    }

    fn poisson_factor(&self) -> Result<&SpdFactor> {
        self.poisson
            .get_or_init(|| SpdFactor::new_pinned(&self.stiffness, 0).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Factorization(e.clone()))
    }

    /// `M^{-1} b`
    pub fn solve_mass(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mass_factor()?.solve(b))
    }

    /// Zero-mean solution of `K ψ = b` for a load with `Σ b_i = 0`.
    pub fn solve_poisson(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut psi = self.poisson_factor()?.solve(b);
        let c = dot(&self.mass_lumped, &psi) / self.area();
        psi.iter_mut().for_each(|x| *x -= c);
        Ok(psi)
    }

    pub fn integral(&self, v: &[f64]) -> f64 {
        dot(&self.mass_lumped, v)
    }

    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        self.mass.quad_form(v).max(0.0).sqrt()
    }

    pub fn energy_norm(&self, v: &[f64]) -> f64 {
        self.stiffness.quad_form(v).max(0.0).sqrt()
    }

    /// Squared discrete H^{-1} norm via the cached factorization.
    pub fn hminus1_norm_sq(&self, v: &[f64]) -> Result<f64> {
        let m = self.integral(v);
        let l2 = self.l2_norm(v);
        if m.abs() > ZERO_MEAN_TOL * l2 * self.area().sqrt() {
            return Err(Error::NotZeroMean { mean: m / self.area() });
        }
        let b = self.mass.apply(v);
        let psi = self.solve_poisson(&b)?;
        Ok(dot(&psi, &b).max(0.0))
    }

    /// L2 projection of a P1 field of the finer mesh onto this coarsened mesh.
    pub fn restrict_from(&self, fine: &Space, coarsening: &Coarsening, v: &[f64]) -> Result<Vec<f64>> {
        let mv = fine.mass.apply(v);
        let mut b = vec![0.0; self.mesh.num_vertices()];
        for (k, mk) in mv.iter().enumerate() {
            match coarsening.vertex_map[k] {
                Some(i) => b[i] += mk,
                None => {
                    let [a, c] = fine.mesh.vertex_origin(k).ok_or_else(|| Error::Mesh(format!("removed vertex {k} has no origin")))?;
                    for e in [a, c] {
                        let i = coarsening.vertex_map[e].ok_or_else(|| Error::Mesh("removed vertex parent also removed".into()))?;
                        b[i] += 0.5 * mk;
                    }
                }
            }
        }
        self.solve_mass(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, MarkSet, Square};
    use std::f64::consts::PI;

    fn unit(n: usize) -> Mesh {
        build_initial_mesh(Square::unit(), n).unwrap()
    }

    #[test]
    fn mass_sums_to_area_and_stiffness_kills_constants() {
        let mesh = unit(4);
        let m = assemble_mass(&mesh);
        let k = assemble_stiffness(&mesh);
        assert!((m.row_sums().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(k.row_sums().iter().all(|s| s.abs() < 1e-12));
        assert!(m.max_asymmetry() < 1e-15 && k.max_asymmetry() < 1e-15);
    }

    #[test]
    fn stiffness_is_exact_on_linears() {
        let mesh = unit(3);
        let v = FeFunction::interpolate(&mesh, |p| 2.0 * p[0] - p[1]);
        let k = assemble_stiffness(&mesh);
        assert!((k.quad_form(&v.coeffs) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_mass_with_unit_weight_is_mass() {
        let mesh = unit(3);
        let one = FeFunction::constant(&mesh, 1.0);
        let w = assemble_weighted_mass(&mesh, &one, |s| s * s);
        let m = assemble_mass(&mesh);
        let d = SparseOperator::combine(&[(1.0, &w)]);
        for i in 0..mesh.num_vertices() {
            for &j in m.pattern().row(i) {
                assert!((d.get(i, j) - m.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn l2_projection_reproduces_linears() {
        let mesh = unit(4);
        let p = l2_project(&mesh, |x| 1.0 + x[0] + 3.0 * x[1]).unwrap();
        let q = FeFunction::interpolate(&mesh, |x| 1.0 + x[0] + 3.0 * x[1]);
        assert!(p.sub(&q).max_abs() < 1e-10);
    }

    #[test]
    fn hminus1_norm_of_cosine() {
        // ‖cos(πx)‖ = 1/√2 and -Δ cos(πx) = π² cos(πx), so the H^{-1} norm is 1/(√2 π)
        let exact = 1.0 / (2f64.sqrt() * PI);
        let err = |n: usize| {
            let mesh = unit(n);
            let v = FeFunction::interpolate(&mesh, |x| (PI * x[0]).cos());
            let h = hminus1_norm(&mesh, &v).unwrap();
            let space = Space::new(Arc::new(mesh.clone()));
            let h2 = space.hminus1_norm_sq(&v.coeffs).unwrap().sqrt();
            assert!((h - h2).abs() < 1e-8 * h);
            (h - exact).abs() / exact
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e2 < 2e-3, "{e2}");
        assert!(e1 / e2 > 3.5, "rate {}", e1 / e2);
    }

    #[test]
    fn hminus1_rejects_nonzero_mean() {
        let mesh = unit(4);
        let v = FeFunction::constant(&mesh, 1.0);
        assert!(matches!(hminus1_norm(&mesh, &v), Err(Error::NotZeroMean { .. })));
    }

    #[test]
    fn jumps_vanish_for_linears_and_not_for_kinks() {
        let mesh = unit(4);
        let v = FeFunction::interpolate(&mesh, |x| x[0] - 2.0 * x[1]);
        assert!(edge_jump_indicator(&mesh, &v).iter().all(|j| *j < 1e-24));
        let w = FeFunction::interpolate(&mesh, |x| (x[0] - 0.5).abs());
        let s: f64 = edge_jump_indicator(&mesh, &w).iter().sum();
        // kink line x = 0.5 has 4 edges of length 1/4 with jump 2
        assert!((s - 4.0 * 0.0625 * 4.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn interpolant_hits_endpoints() {
        let mesh = unit(2);
        let a = FeFunction::constant(&mesh, 1.0);
        let b = FeFunction::constant(&mesh, 3.0);
        assert_eq!(interpolant_eval(&a, &b, 0.0, 1.0, 0.0).unwrap(), a);
        assert_eq!(interpolant_eval(&a, &b, 0.0, 1.0, 1.0).unwrap(), b);
        assert!((interpolant_eval(&a, &b, 0.0, 1.0, 0.25).unwrap().coeffs[0] - 1.5).abs() < 1e-15);
        assert!(interpolant_eval(&a, &b, 0.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn prolong_then_restrict_is_identity_and_conserves_mass() {
        let coarse = unit(4);
        let fine = coarse.refine(&MarkSet::refine_only([0, 5, 9])).unwrap();
        let v = FeFunction::interpolate(&coarse, |x| (3.0 * x[0]).sin() + x[1]);
        let pv = prolong(&v, &fine).unwrap();
        assert!((integral(&coarse, &v) - integral(&fine, &pv)).abs() < 1e-14);
        let all: Vec<usize> = (0..fine.num_triangles()).collect();
        let c = fine.coarsen(&MarkSet::coarsen_only(all)).unwrap();
        let fs = Space::new(Arc::new(fine.clone()));
        let cs = Space::new(Arc::new(c.mesh.clone()));
        let w = FeFunction::interpolate(&fine, |x| (5.0 * x[0] * x[1]).cos());
        let r = cs.restrict_from(&fs, &c, &w.coeffs).unwrap();
        assert!((cs.integral(&r) - fs.integral(&w.coeffs)).abs() < 1e-13);
        let back = cs.restrict_from(&fs, &c, &pv.coeffs).unwrap();
        let vc = FeFunction::interpolate(&c.mesh, |x| (3.0 * x[0]).sin() + x[1]);
        assert!(back.iter().zip(&vc.coeffs).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn dump_roundtrip() {
        let mesh = unit(2);
        let v = FeFunction::interpolate(&mesh, |x| x[0].exp() / 3.0);
        assert_eq!(FeFunction::from_text(&v.to_text()).unwrap(), v);
    }
}
