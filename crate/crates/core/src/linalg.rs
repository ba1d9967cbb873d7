//! Compressed-row sparse operators, preconditioned conjugate gradients and
//! thin wrappers over sparse direct factorizations.

use std::sync::Arc;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Side};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// y += a * x
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Symmetric sparsity structure in compressed-row layout.
#[derive(Debug)]
pub struct Pattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// position of entry (j, i) for the entry (i, j) stored at each slot
    transpose: Vec<usize>,
}

impl Pattern {
    /// Builds the symmetric closure of the given index pairs; diagonal entries are always present.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (i, j) in pairs {
            rows[i].push(j);
            rows[j].push(i);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let mut p = Pattern {
            n,
            row_ptr,
            col_idx,
            transpose: Vec::new(),
        };
        let mut transpose = vec![0; p.col_idx.len()];
        for i in 0..n {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                transpose[k] = p.find(j, i).expect("pattern is symmetric");
            }
        }
        p.transpose = transpose;
        p
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }
}

/// Real square matrix over a shared symmetric pattern.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    pattern: Arc<Pattern>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let pattern = Arc::new(Pattern::from_pairs(n, triplets.iter().map(|t| (t.0, t.1))));
        let mut op = Self::zeros(pattern);
        for &(i, j, v) in triplets {
            op.add(i, j, v);
        }
        op
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    /// Adds `v` to entry (i, j); panics if (i, j) lies outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.pattern.find(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate().take(p.n) {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// x^T A x
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply(x))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let p = &self.pattern;
        (0..p.n)
            .map(|i| self.values[p.row_ptr[i]..p.row_ptr[i + 1]].iter().sum())
            .collect()
    }

    /// Largest |a_ij - a_ji| relative to the largest |a_ij|.
    pub fn max_asymmetry(&self) -> f64 {
        let scale = norm_inf(&self.values).max(f64::MIN_POSITIVE);
        let asym = (0..self.values.len())
            .map(|k| (self.values[k] - self.values[self.pattern.transpose[k]]).abs())
            .fold(0.0, f64::max);
        asym / scale
    }

    /// Linear combination of operators on the same pattern.
    pub fn combine(terms: &[(f64, &SparseOperator)]) -> Self {
        let pattern = terms[0].1.pattern.clone();
        let mut values = vec![0.0; pattern.nnz()];
        for (a, op) in terms {
            assert!(Arc::ptr_eq(&pattern, &op.pattern), "operators on different patterns");
            axpy(*a, &op.values, &mut values);
        }
        Self { pattern, values }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::combine(&[(a, self)])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        let p = &self.pattern;
        for (i, row) in d.iter_mut().enumerate() {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                row[p.col_idx[k]] += self.values[k];
            }
        }
        d
    }

    /// Rows and columns in `keep` order, as compressed-column arrays (symmetric pattern).
    fn csc_subset(&self, keep: &[usize], index_of: &[Option<usize>]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let p = &self.pattern;
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut vals = Vec::new();
        for &j in keep {
            for k in p.row_ptr[j]..p.row_ptr[j + 1] {
                if let Some(i) = index_of[p.col_idx[k]] {
                    row_idx.push(i);
                    vals.push(self.values[p.transpose[k]]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        (col_ptr, row_idx, vals)
    }
}

pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradients; `x` holds the initial guess on entry.
/// Convergence is measured by the relative residual ||b - Ax|| / ||b||.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm2(&r) / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(CgOutcome {
                iterations: it,
                residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        res = norm2(&r) / bnorm;
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= tol {
        Ok(CgOutcome {
            iterations: max_iter,
            residual: res,
        })
    } else {
        Err(Error::LinearSolve { residual: res })
    }
}

fn factor_err(e: impl std::fmt::Debug) -> Error {
    Error::Factorization(format!("{e:?}"))
}

/// Sparse Cholesky factor of a symmetric positive definite operator, optionally
/// with one index pinned to zero (for operators with a one-dimensional kernel).
pub struct SpdFactor {
    llt: Llt<usize, f64>,
    n: usize,
    pinned: Option<usize>,
}

impl SpdFactor {
    pub fn new(op: &SparseOperator) -> Result<Self> {
        Self::build(op, None)
    }

    pub fn new_pinned(op: &SparseOperator, pin: usize) -> Result<Self> {
        Self::build(op, Some(pin))
    }

    fn build(op: &SparseOperator, pinned: Option<usize>) -> Result<Self> {
        let n = op.dim();
        let keep: Vec<usize> = (0..n).filter(|&i| Some(i) != pinned).collect();
        let mut index_of = vec![None; n];
        for (k, &i) in keep.iter().enumerate() {
            index_of[i] = Some(k);
        }
        let (col_ptr, row_idx, vals) = op.csc_subset(&keep, &index_of);
        let m = keep.len();
        let sym = SymbolicSparseColMatRef::new_checked(m, m, &col_ptr, None, &row_idx);
        let symbolic = SymbolicLlt::try_new(sym, Side::Lower).map_err(factor_err)?;
        let llt = Llt::try_new_with_symbolic(symbolic, SparseColMatRef::new(sym, &vals), Side::Lower)
            .map_err(factor_err)?;
        Ok(Self { llt, n, pinned })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs: Vec<f64> = (0..self.n)
            .filter(|&i| Some(i) != self.pinned)
            .map(|i| b[i])
            .collect();
        let m = rhs.len();
        self.llt
            .solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(&mut rhs, m, 1));
        match self.pinned {
            None => rhs,
            Some(p) => {
                let mut x = Vec::with_capacity(self.n);
                x.extend_from_slice(&rhs[..p]);
                x.push(0.0);
                x.extend_from_slice(&rhs[p..]);
                x
            }
        }
    }
}

/// Cached symbolic LU for 2x2 block systems whose blocks share one symmetric pattern.
pub struct BlockSolver {
    pattern: Arc<Pattern>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicLu<usize>,
}

impl BlockSolver {
    pub fn new(pattern: Arc<Pattern>) -> Result<Self> {
        let n = pattern.n;
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::with_capacity(4 * pattern.nnz());
        for _block_col in 0..2 {
            for j in 0..n {
                for &i in pattern.row(j) {
                    row_idx.push(i);
                }
                for &i in pattern.row(j) {
                    row_idx.push(n + i);
                }
                col_ptr.push(row_idx.len());
            }
        }
        let sym = SymbolicSparseColMatRef::new_checked(2 * n, 2 * n, &col_ptr, None, &row_idx);
        let symbolic = SymbolicLu::try_new(sym).map_err(factor_err)?;
        Ok(Self {
            pattern,
            col_ptr,
            row_idx,
            symbolic,
        })
    }

    pub fn pattern(&self) -> &Arc<Pattern> {
        &self.pattern
    }

    /// Factors [[a, b], [c, d]].
    pub fn factor(
        &self,
        a: &SparseOperator,
        b: &SparseOperator,
        c: &SparseOperator,
        d: &SparseOperator,
    ) -> Result<BlockLu> {
        let p = &self.pattern;
        for op in [a, b, c, d] {
            assert!(Arc::ptr_eq(p, &op.pattern), "block on foreign pattern");
        }
        let mut vals = Vec::with_capacity(self.row_idx.len());
        for (top, bottom) in [(a, c), (b, d)] {
            for j in 0..p.n {
                let range = p.row_ptr[j]..p.row_ptr[j + 1];
                vals.extend(range.clone().map(|k| top.values[p.transpose[k]]));
                vals.extend(range.map(|k| bottom.values[p.transpose[k]]));
            }
        }
        let n2 = 2 * p.n;
        let sym = SymbolicSparseColMatRef::new_checked(n2, n2, &self.col_ptr, None, &self.row_idx);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), SparseColMatRef::new(sym, &vals))
            .map_err(factor_err)?;
        Ok(BlockLu { lu, n: p.n })
    }
}

pub struct BlockLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl BlockLu {
    pub fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut rhs = Vec::with_capacity(2 * n);
        rhs.extend_from_slice(r1);
        rhs.extend_from_slice(r2);
        self.lu
            .solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(&mut rhs, 2 * n, 1));
        let x2 = rhs.split_off(n);
        (rhs, x2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> SparseOperator {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseOperator::from_triplets(n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SparseOperator::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (0, 1, 1.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.get(0, 1), 1.0);
        assert!(a.max_asymmetry() > 0.3);
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let a = laplace_1d(30);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; 30];
        let d = a.diagonal();
        pcg(
            |v, out| a.apply_into(v, out),
            |r, z| r.iter().zip(&d).zip(z.iter_mut()).for_each(|((r, d), z)| *z = r / d),
            &b,
            &mut x,
            1e-13,
            200,
        )
        .unwrap();
        let y = SpdFactor::new(&a).unwrap().solve(&b);
        for i in 0..30 {
            assert!((x[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn block_lu_solves_saddle_system() {
        let n = 12;
        let k = laplace_1d(n);
        let m = SparseOperator::combine(&[(0.0, &k)]);
        let mut eye = m.clone();
        for i in 0..n {
            eye.add(i, i, 1.0);
        }
        let neg = k.scaled(-0.5);
        let solver = BlockSolver::new(k.pattern().clone()).unwrap();
        let lu = solver.factor(&eye, &k, &neg, &eye).unwrap();
        let r1: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let r2: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let (x1, x2) = lu.solve(&r1, &r2);
        let c1: Vec<f64> = eye.apply(&x1).iter().zip(k.apply(&x2)).map(|(a, b)| a + b).collect();
        let c2: Vec<f64> = neg.apply(&x1).iter().zip(eye.apply(&x2)).map(|(a, b)| a + b).collect();
        for i in 0..n {
            assert!((c1[i] - r1[i]).abs() < 1e-10);
            assert!((c2[i] - r2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn pinned_factor_solves_singular_system() {
        let n = 10;
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.extend([(i, i, 1.0), (i + 1, i + 1, 1.0), (i, i + 1, -1.0), (i + 1, i, -1.0)]);
        }
        let k = SparseOperator::from_triplets(n, &t);
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 4.5).collect();
        let x = SpdFactor::new_pinned(&k, 0).unwrap().solve(&b);
        assert_eq!(x[0], 0.0);
        let r = k.apply(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-10);
        }
    }
}
