//! Mark-refine-coarsen loop of one time level, driven by the local
//! contributions of `η_SPACE,3`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{prolong, FeFunction, Space};
use crate::mesh::{Coarsening, MarkSet, Mesh};
use crate::schemes::TimeState;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    /// Target for the global `η_SPACE,3`.
    pub tol: f64,
    pub dorfler_theta: f64,
    /// Elements with `η_T ≤ coarsen_fraction · (tol / N)^{1/2}` are marked for coarsening.
    pub coarsen_fraction: f64,
    pub max_adapt_rounds: usize,
    pub h_min: f64,
    pub h_max: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            tol: 1e-2,
            dorfler_theta: 0.5,
            coarsen_fraction: 0.3,
            max_adapt_rounds: 3,
            h_min: 1e-3,
            h_max: 0.25,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dorfler_theta > 0.0 && self.dorfler_theta < 1.0) {
            return Err(Error::Constraint(format!("dorfler_theta = {} must lie in (0, 1)", self.dorfler_theta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Constraint(format!("tol = {} must be positive", self.tol)));
        }
        if !(self.coarsen_fraction >= 0.0 && self.coarsen_fraction < 1.0) {
            return Err(Error::Constraint(format!("coarsen_fraction = {} must lie in [0, 1)", self.coarsen_fraction)));
        }
        if !(self.h_min > 0.0 && self.h_min < self.h_max) {
            return Err(Error::Constraint(format!("need 0 < h_min < h_max, got {} and {}", self.h_min, self.h_max)));
        }
        Ok(())
    }
}

/// Smallest set of elements, taken by decreasing indicator, whose squared
/// indicators carry at least `theta` of the total. Ties keep index order.
pub fn dorfler_mark(indicators_sq: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = indicators_sq.iter().sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators_sq.len()).collect();
    order.sort_by(|&a, &b| indicators_sq[b].total_cmp(&indicators_sq[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut out = Vec::new();
    for t in order {
        if acc >= theta * total {
            break;
        }
        acc += indicators_sq[t];
        out.push(t);
    }
    out
}

/// Dörfler marks restricted to elements above `h_min`, plus every element above `h_max`.
pub fn refinement_marks(mesh: &Mesh, indicators_sq: &[f64], cfg: &AdaptConfig) -> MarkSet {
    let eligible: Vec<f64> = indicators_sq
        .iter()
        .enumerate()
        .map(|(t, v)| if mesh.diameter(t) > cfg.h_min { *v } else { 0.0 })
        .collect();
    let mut marks = MarkSet::refine_only(dorfler_mark(&eligible, cfg.dorfler_theta));
    marks.refine.extend((0..mesh.num_triangles()).filter(|&t| mesh.diameter(t) > cfg.h_max));
    marks
}

/// Elements whose indicator is below `coarsen_fraction · (tol / N)^{1/2}` and whose
/// parent would not exceed `h_max`.
pub fn coarsening_marks(mesh: &Mesh, indicators_sq: &[f64], cfg: &AdaptConfig) -> MarkSet {
    let n = mesh.num_triangles() as f64;
    let thr = cfg.coarsen_fraction.powi(2) * cfg.tol / n;
    MarkSet::coarsen_only(
        (0..mesh.num_triangles())
            .filter(|&t| indicators_sq[t] <= thr && mesh.level(t) > 0 && mesh.diameter(t) * std::f64::consts::SQRT_2 <= cfg.h_max),
    )
}

/// A collection of finite element fields that moves with the mesh.
pub trait FieldSet: Sized {
    fn transfer(&self, tr: &mut dyn FnMut(&FeFunction) -> Result<FeFunction>) -> Result<Self>;
}

impl FieldSet for Vec<FeFunction> {
    fn transfer(&self, tr: &mut dyn FnMut(&FeFunction) -> Result<FeFunction>) -> Result<Self> {
        self.iter().map(|v| tr(v)).collect()
    }
}

impl FieldSet for TimeState {
    fn transfer(&self, tr: &mut dyn FnMut(&FeFunction) -> Result<FeFunction>) -> Result<Self> {
        self.map_fields(tr)
    }
}

/// Refines and moves `fields` by nodal injection.
pub fn refine_fields<F: FieldSet>(space: &Space, fields: &F, marks: &MarkSet) -> Result<(Arc<Space>, F)> {
    let fine = Arc::new(Space::new(Arc::new(space.mesh().refine(marks)?)));
    let moved = fields.transfer(&mut |v| prolong(v, fine.mesh()))?;
    Ok((fine, moved))
}

/// Coarsens and moves `fields` by the mass-preserving L² projection.
/// Returns `None` when no pair could be merged.
pub fn coarsen_fields<F: FieldSet>(space: &Space, fields: &F, marks: &MarkSet) -> Result<Option<(Arc<Space>, F, Coarsening)>> {
    let c = space.mesh().coarsen(marks)?;
    if c.merged == 0 {
        return Ok(None);
    }
    let coarse = Arc::new(Space::new(Arc::new(c.mesh.clone())));
    let moved = fields.transfer(&mut |v| restrict(space, &coarse, &c, v))?;
    Ok(Some((coarse, moved, c)))
}

fn restrict(fine: &Space, coarse: &Space, c: &Coarsening, v: &FeFunction) -> Result<FeFunction> {
    v.check_on(fine.mesh())?;
    FeFunction::new(coarse.mesh(), coarse.restrict_from(fine, c, &v.coeffs)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptLog {
    pub rounds: usize,
    pub refine_marked: Vec<usize>,
    pub coarsen_marked: usize,
    pub merged: usize,
    pub dofs_before: usize,
    pub dofs_solved: usize,
    pub dofs_after: usize,
    pub eta_before: f64,
    /// Global indicator of the returned solution, before coarsening.
    pub eta_solved: f64,
    /// Set when the tolerance was not met within the allowed rounds.
    pub tol_missed: bool,
}

pub struct Adapted<P, N> {
    /// Mesh of the next time level (after coarsening).
    pub space: Arc<Space>,
    /// Mesh the returned solution was computed on.
    pub solved_space: Arc<Space>,
    /// Solution on `solved_space`.
    pub solved: N,
    /// Per-element squared indicators of `solved`.
    pub indicators_sq: Vec<f64>,
    /// `prev` moved to `solved_space`, `None` if no refinement happened.
    pub prev: Option<P>,
    /// Solution moved to `space`.
    pub next: N,
    pub coarsening: Option<Coarsening>,
    pub log: AdaptLog,
}

impl<P, N: Clone> Adapted<P, N> {
    /// No adaptation: the solution stays on `space`.
    pub fn unchanged(space: Arc<Space>, solved: N, indicators_sq: Vec<f64>) -> Self {
        let n = space.mesh().num_vertices();
        let eta = indicators_sq.iter().sum::<f64>().sqrt();
        Adapted {
            space: space.clone(),
            solved_space: space,
            next: solved.clone(),
            solved,
            indicators_sq,
            prev: None,
            coarsening: None,
            log: AdaptLog {
                dofs_before: n,
                dofs_solved: n,
                dofs_after: n,
                eta_before: eta,
                eta_solved: eta,
                ..AdaptLog::default()
            },
        }
    }

    /// Moves a further field from `solved_space` to `space` like the solution.
    pub fn carry(&self, v: &FeFunction) -> Result<FeFunction> {
        match &self.coarsening {
            Some(c) => restrict(&self.solved_space, &self.space, c, v),
            None => {
                v.check_on(self.space.mesh())?;
                Ok(v.clone())
            }
        }
    }
}

/// Adapts the mesh of one time level. `prev` lives on `space` and is what
/// `resolve` advances; `solved` is `resolve`'s result on `space` with
/// per-element squared indicators `indicators_sq`. While the global indicator
/// exceeds `tol`, marked elements are refined, `prev` is injected and the step
/// is recomputed. Afterwards small-indicator elements are coarsened and the
/// solution is projected onto the coarser mesh.
pub fn adapt_step<P: FieldSet, N: FieldSet>(
    space: Arc<Space>,
    prev: &P,
    solved: N,
    indicators_sq: Vec<f64>,
    cfg: &AdaptConfig,
    mut resolve: impl FnMut(&Arc<Space>, &P) -> Result<(N, Vec<f64>)>,
) -> Result<Adapted<P, N>> {
    if indicators_sq.len() != space.mesh().num_triangles() {
        return Err(Error::InvalidArgument("one indicator per triangle is required".into()));
    }
    let mut log = AdaptLog {
        dofs_before: space.mesh().num_vertices(),
        eta_before: indicators_sq.iter().sum::<f64>().sqrt(),
        ..AdaptLog::default()
    };
    let mut cur_space = space;
    let mut cur_prev: Option<P> = None;
    let mut cur = solved;
    let mut ind = indicators_sq;
    while ind.iter().sum::<f64>().sqrt() > cfg.tol && log.rounds < cfg.max_adapt_rounds {
        let marks = refinement_marks(cur_space.mesh(), &ind, cfg);
        if marks.refine.is_empty() {
            break;
        }
        log.refine_marked.push(marks.refine.len());
        let (fine, moved) = {
            let p = cur_prev.as_ref().unwrap_or(prev);
            refine_fields(&cur_space, p, &marks)?
        };
        let (s, i) = resolve(&fine, &moved)?;
        cur_space = fine;
        cur_prev = Some(moved);
        cur = s;
        ind = i;
        log.rounds += 1;
    }
    log.eta_solved = ind.iter().sum::<f64>().sqrt();
    log.tol_missed = log.eta_solved > cfg.tol;
    log.dofs_solved = cur_space.mesh().num_vertices();
    let marks = coarsening_marks(cur_space.mesh(), &ind, cfg);
    log.coarsen_marked = marks.coarsen.len();
    let coarse = if marks.coarsen.is_empty() {
        None
    } else {
        coarsen_fields(&cur_space, &cur, &marks)?
    };
    let (next_space, next, coarsening) = match coarse {
        Some((s, n, c)) => (s, n, Some(c)),
        None => (cur_space.clone(), cur.transfer(&mut |v| Ok(v.clone()))?, None),
    };
    log.merged = coarsening.as_ref().map_or(0, |c| c.merged);
    log.dofs_after = next_space.mesh().num_vertices();
    Ok(Adapted {
        space: next_space,
        solved_space: cur_space,
        solved: cur,
        indicators_sq: ind,
        prev: cur_prev,
        next,
        coarsening,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::space_indicator_3;
    use crate::fem::integral;
    use crate::mesh::{build_initial_mesh, Square};

    #[test]
    fn dorfler_picks_the_spike() {
        let mut v = vec![1e-6; 20];
        v[7] = 1.0;
        assert_eq!(dorfler_mark(&v, 0.5), vec![7]);
        assert!(dorfler_mark(&[0.0; 4], 0.5).is_empty());
        // equal indicators: half of them
        assert_eq!(dorfler_mark(&[1.0; 4], 0.5), vec![0, 1]);
    }

    #[test]
    fn below_tolerance_only_coarsens() {
        let space = Arc::new(Space::new(Arc::new(build_initial_mesh(Square::unit(), 4).unwrap())));
        let fine = Arc::new(Space::new(Arc::new(space.mesh().refine_uniform().unwrap())));
        let u = FeFunction::interpolate(fine.mesh(), |x| x[0] + x[1]);
        let ind = vec![0.0; fine.mesh().num_triangles()];
        let cfg = AdaptConfig {
            h_max: 1.0,
            ..AdaptConfig::default()
        };
        let mut calls = 0;
        let out = adapt_step(fine.clone(), &vec![u.clone()], vec![u.clone()], ind, &cfg, |_, _| {
            calls += 1;
            unreachable!()
        })
        .unwrap();
        assert_eq!(calls, 0);
        assert_eq!(out.log.rounds, 0);
        assert!(out.log.merged > 0);
        assert!(out.space.mesh().num_triangles() < fine.mesh().num_triangles());
        // linear fields survive the projection
        let back = &out.next[0];
        for (i, x) in out.space.mesh().vertices().iter().enumerate() {
            assert!((back.coeffs[i] - x[0] - x[1]).abs() < 1e-10);
        }
        assert!((integral(out.space.mesh(), back) - integral(fine.mesh(), &u)).abs() < 1e-12);
    }

    #[test]
    fn refinement_reduces_kink_indicator() {
        let space = Arc::new(Space::new(Arc::new(build_initial_mesh(Square::centered(1.0), 8).unwrap())));
        let eps = 0.1;
        let profile = |x: [f64; 2]| (((x[0] * x[0] + x[1] * x[1]).sqrt() - 0.5) / 0.1).tanh();
        let solve = |s: &Arc<Space>, _: &Vec<FeFunction>| -> Result<(Vec<FeFunction>, Vec<f64>)> {
            let u = FeFunction::interpolate(s.mesh(), profile);
            let (_, _, per) = space_indicator_3(s, &u, eps)?;
            Ok((vec![u], per))
        };
        let prev = vec![FeFunction::zeros(space.mesh())];
        let (u0, ind0) = solve(&space, &prev).unwrap();
        let eta0 = ind0.iter().sum::<f64>().sqrt();
        let cfg = AdaptConfig {
            tol: 0.5 * eta0,
            max_adapt_rounds: 20,
            coarsen_fraction: 0.0,
            h_max: 1.0,
            ..AdaptConfig::default()
        };
        let out = adapt_step(space.clone(), &prev, u0, ind0, &cfg, solve).unwrap();
        assert!(out.log.rounds >= 1);
        assert!(!out.log.tol_missed, "{:?}", out.log);
        assert!(out.log.eta_solved <= cfg.tol);
        assert!(out.log.dofs_solved > out.log.dofs_before);
        assert!(out.space.mesh().audit().ok());
    }

    #[test]
    fn refinement_transfer_keeps_old_nodes() {
        let space = Space::new(Arc::new(build_initial_mesh(Square::unit(), 3).unwrap()));
        let u = FeFunction::interpolate(space.mesh(), |x| (7.0 * x[0]).sin() * x[1]);
        let (fine, moved) = refine_fields(&space, &vec![u.clone()], &MarkSet::refine_only([0, 5, 11])).unwrap();
        assert!(fine.mesh().num_vertices() > space.mesh().num_vertices());
        assert_eq!(&moved[0].coeffs[..u.len()], &u.coeffs[..]);
    }
}
