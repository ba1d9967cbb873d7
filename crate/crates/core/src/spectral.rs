//! Principal eigenvalue of the Cahn-Hilliard operator linearized at a discrete
//! state, measured against the discrete H^{-1} norm.
//!
//! With `A = εK + ε⁻¹M_{f'(u)}` and `B = M K₀⁺ M` on zero-mean vectors,
//! `-Λ = min ηᵀAη / ηᵀBη`. `A` may be indefinite; `B` is applied through
//! Poisson solves.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{FeFunction, Space};
use crate::linalg::{dot, norm2, SparseOperator, SpdFactor};
use crate::schemes::f_prime;

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub lambda: f64,
    pub eigvec: FeFunction,
    pub rayleigh_residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500 }
    }
}

/// The operators of the generalized problem on one mesh and state.
pub struct LinearizedOperator<'a> {
    space: &'a Space,
    a: SparseOperator,
    precond: SpdFactor,
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(space: &'a Space, u: &FeFunction, eps: f64) -> Result<Self> {
        u.check_on(space.mesh())?;
        let mf = space.weighted_mass(u, f_prime);
        let a = SparseOperator::combine(&[(eps, space.stiffness()), (1.0 / eps, &mf)]);
        let p = SparseOperator::combine(&[(eps, space.stiffness()), (1.0 / eps, space.mass())]);
        Ok(Self {
            space,
            a,
            precond: SpdFactor::new(&p)?,
        })
    }

    /// Removes the constant component: `x - (∫x / |D|) 1`.
    pub fn project(&self, x: &mut [f64]) {
        let c = self.space.integral(x) / self.space.area();
        x.iter_mut().for_each(|v| *v -= c);
    }

    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        self.a.apply(x)
    }

    /// `M K₀⁺ M x` for zero-mean `x`.
    pub fn apply_b(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mx = self.space.mass().apply(x);
        let psi = self.space.solve_poisson(&mx)?;
        Ok(self.space.mass().apply(&psi))
    }

    pub fn rayleigh_quotient(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(x, &self.apply_a(x)) / dot(x, &self.apply_b(x)?))
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let mut z = self.precond.solve(r);
        self.project(&mut z);
        z
    }
}

/// LOBPCG with block size one, optionally warm-started.
pub fn principal_eigenvalue(
    space: &Space,
    u: &FeFunction,
    eps: f64,
    warm_start: Option<&FeFunction>,
    cfg: &EigenConfig,
) -> Result<EigenResult> {
    let op = LinearizedOperator::new(space, u, eps)?;
    let n = u.len();
    let mut x: Vec<f64> = match warm_start {
        Some(v) if v.generation == u.generation && v.len() == n => v.coeffs.clone(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let r: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            op.precondition(&r)
        }
    };
    op.project(&mut x);
    if norm2(&x) == 0.0 {
        return Err(Error::InvalidArgument("start vector has no zero-mean component".into()));
    }
    let mut bx = op.apply_b(&x)?;
    let s = dot(&x, &bx).sqrt();
    x.iter_mut().for_each(|v| *v /= s);
    bx.iter_mut().for_each(|v| *v /= s);
    let mut ax = op.apply_a(&x);
    let mut theta = dot(&x, &ax);
    let mut p: Option<Vec<f64>> = None;
    let mut best = f64::INFINITY;
    for it in 0..=cfg.max_iter {
        let r: Vec<f64> = ax.iter().zip(&bx).map(|(a, b)| a - theta * b).collect();
        let res = norm2(&r) / (norm2(&ax) + theta.abs() * norm2(&bx)).max(f64::MIN_POSITIVE);
        best = best.min(res);
        if res <= cfg.tol {
            return Ok(EigenResult {
                lambda: -theta,
                eigvec: FeFunction::new(space.mesh(), x)?,
                rayleigh_residual: res,
                iterations: it,
            });
        }
        if it == cfg.max_iter {
            break;
        }
        let w = op.precondition(&r);
        // B-orthonormal basis of span{x, w, p}
        let mut basis: Vec<(Vec<f64>, Vec<f64>)> = vec![(x.clone(), bx.clone())];
        for v in std::iter::once(w).chain(p.take()) {
            let mut v = v;
            for _ in 0..2 {
                for (q, bq) in &basis {
                    let c = dot(bq, &v);
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            op.project(&mut v);
            let bv = op.apply_b(&v)?;
            let nv = dot(&v, &bv);
            if !(nv > 1e-28) {
                continue;
            }
            let s = nv.sqrt();
            basis.push((v.iter().map(|a| a / s).collect(), bv.iter().map(|a| a / s).collect()));
        }
        let k = basis.len();
        let abasis: Vec<Vec<f64>> = basis.iter().map(|(v, _)| op.apply_a(v)).collect();
        let mut ga = DMatrix::<f64>::zeros(k, k);
        let mut gb = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                ga[(i, j)] = 0.5 * (dot(&basis[i].0, &abasis[j]) + dot(&basis[j].0, &abasis[i]));
                gb[(i, j)] = 0.5 * (dot(&basis[i].0, &basis[j].1) + dot(&basis[j].0, &basis[i].1));
            }
        }
        let (theta_new, c) = small_generalized_min(&ga, &gb)?;
        let mut xn = vec![0.0; n];
        let mut bxn = vec![0.0; n];
        let mut axn = vec![0.0; n];
        let mut pn = vec![0.0; n];
        for i in 0..k {
            xn.iter_mut().zip(&basis[i].0).for_each(|(a, b)| *a += c[i] * b);
            bxn.iter_mut().zip(&basis[i].1).for_each(|(a, b)| *a += c[i] * b);
            axn.iter_mut().zip(&abasis[i]).for_each(|(a, b)| *a += c[i] * b);
            if i > 0 {
                pn.iter_mut().zip(&basis[i].0).for_each(|(a, b)| *a += c[i] * b);
            }
        }
        let s = dot(&xn, &bxn).sqrt();
        x = xn.iter().map(|a| a / s).collect();
        bx = bxn.iter().map(|a| a / s).collect();
        ax = axn.iter().map(|a| a / s).collect();
        theta = theta_new;
        p = Some(pn);
    }
    Err(Error::EigenStagnation {
        lambda: -theta,
        residual: best,
    })
}

/// Smallest eigenpair of the symmetric-definite pencil `(a, b)`.
fn small_generalized_min(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let l = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("Ritz Gram matrix is not positive definite".into()))?
        .l();
    let li = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Factorization("singular Ritz Gram factor".into()))?;
    let c = &li * a * li.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty pencil");
    let y = eig.eigenvectors.column(imin).clone_owned();
    let v = li.transpose() * y;
    Ok((eig.eigenvalues[imin], v.iter().copied().collect()))
}

/// Dense reference: reduces to the zero-mean subspace with the basis
/// `e_i - (m_i / m_0) e_0` and solves the pencil directly. For small meshes.
pub fn dense_principal_eigenvalue(space: &Space, u: &FeFunction, eps: f64) -> Result<f64> {
    let op = LinearizedOperator::new(space, u, eps)?;
    let n = u.len();
    let m1 = space.mass_lumped();
    let mut z = DMatrix::<f64>::zeros(n, n - 1);
    for i in 1..n {
        z[(i, i - 1)] = 1.0;
        z[(0, i - 1)] = -m1[i] / m1[0];
    }
    let mut az = DMatrix::<f64>::zeros(n, n - 1);
    let mut bz = DMatrix::<f64>::zeros(n, n - 1);
    for j in 0..n - 1 {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let a = op.apply_a(&col);
        let b = op.apply_b(&col)?;
        for i in 0..n {
            az[(i, j)] = a[i];
            bz[(i, j)] = b[i];
        }
    }
    let ga = z.transpose() * az;
    let gb = z.transpose() * bz;
    let ga = 0.5 * (&ga + ga.transpose());
    let gb = 0.5 * (&gb + gb.transpose());
    Ok(-small_generalized_min(&ga, &gb)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, Square};
    use std::sync::Arc;

    fn space(n: usize) -> Space {
        Space::new(Arc::new(build_initial_mesh(Square::centered(1.0), n).unwrap()))
    }

    #[test]
    fn matches_dense_reference() {
        let s = space(6);
        let mesh = s.mesh();
        let eps = 0.125;
        let states = [
            FeFunction::constant(mesh, 1.0),
            FeFunction::constant(mesh, 0.0),
            FeFunction::interpolate(mesh, |x| (((x[0] * x[0] + x[1] * x[1]).sqrt() - 0.5) / (2f64.sqrt() * eps)).tanh()),
        ];
        for u in &states {
            let it = principal_eigenvalue(&s, u, eps, None, &EigenConfig::default()).unwrap();
            let dense = dense_principal_eigenvalue(&s, u, eps).unwrap();
            assert!((it.lambda - dense).abs() <= 1e-6 * dense.abs(), "{} vs {dense}", it.lambda);
            assert!(s.integral(&it.eigvec.coeffs).abs() < 1e-10);
        }
    }

    #[test]
    fn stable_state_has_negative_lambda_and_warm_start_helps() {
        let s = space(8);
        let u = FeFunction::constant(s.mesh(), 1.0);
        let cold = principal_eigenvalue(&s, &u, 0.125, None, &EigenConfig::default()).unwrap();
        assert!(cold.lambda < 0.0);
        let warm = principal_eigenvalue(&s, &u, 0.125, Some(&cold.eigvec), &EigenConfig::default()).unwrap();
        assert!(warm.iterations <= 1);
        let op = LinearizedOperator::new(&s, &u, 0.125).unwrap();
        let q = op.rayleigh_quotient(&cold.eigvec.scale(-3.7).coeffs).unwrap();
        assert!((q + cold.lambda).abs() < 1e-8 * (1.0 + cold.lambda.abs()));
    }
}
