//! Conforming triangulations of a square with newest-vertex bisection and
//! genealogy-based coarsening.
//!
//! Each triangle `[a, b, c]` is stored counter-clockwise with `a` its newest
//! vertex; the edge `b-c` is its refinement edge. Bisection inserts the
//! midpoint `m` of `b-c` and produces the children `[m, a, b]` and `[m, c, a]`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Axis-aligned square `[x0, x0 + side] x [y0, y0 + side]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Square {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

impl Square {
    pub fn unit() -> Self {
        Square {
            x0: 0.0,
            y0: 0.0,
            side: 1.0,
        }
    }

    /// `(-h, h)^2`
    pub fn centered(h: f64) -> Self {
        Square {
            x0: -h,
            y0: -h,
            side: 2.0 * h,
        }
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x0 + 0.5 * self.side, self.y0 + 0.5 * self.side]
    }

    fn on_boundary(&self, p: [f64; 2]) -> [bool; 4] {
        let tol = 1e-12 * self.side;
        [
            (p[0] - self.x0).abs() < tol,
            (p[0] - self.x0 - self.side).abs() < tol,
            (p[1] - self.y0).abs() < tol,
            (p[1] - self.y0 - self.side).abs() < tol,
        ]
    }
}

/// Genealogy record of a triangle; siblings share the same parent `Arc`.
#[derive(Debug)]
pub struct Lineage {
    parent: Option<Arc<Lineage>>,
    slot: u8,
    level: u32,
}

impl Lineage {
    fn root() -> Arc<Self> {
        Arc::new(Lineage {
            parent: None,
            slot: 0,
            level: 0,
        })
    }

    fn child(parent: &Arc<Lineage>, slot: u8) -> Arc<Self> {
        Arc::new(Lineage {
            parent: Some(parent.clone()),
            slot,
            level: parent.level + 1,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn slot(&self) -> u8 {
        self.slot
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    /// endpoints, sorted ascending
    pub v: [usize; 2],
    pub tris: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.tris[1].is_none()
    }
}

/// Triangles marked for refinement and for coarsening.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MarkSet {
    pub refine: BTreeSet<usize>,
    pub coarsen: BTreeSet<usize>,
}

impl MarkSet {
    pub fn refine_only(tris: impl IntoIterator<Item = usize>) -> Self {
        MarkSet {
            refine: tris.into_iter().collect(),
            coarsen: BTreeSet::new(),
        }
    }

    pub fn coarsen_only(tris: impl IntoIterator<Item = usize>) -> Self {
        MarkSet {
            refine: BTreeSet::new(),
            coarsen: tris.into_iter().collect(),
        }
    }

    pub fn validate(&self, num_triangles: usize) -> Result<()> {
        if let Some(t) = self.refine.intersection(&self.coarsen).next() {
            return Err(Error::Mesh(format!("triangle {t} marked for refinement and coarsening")));
        }
        if let Some(&t) = self.refine.iter().chain(&self.coarsen).find(|&&t| t >= num_triangles) {
            return Err(Error::Mesh(format!("mark {t} out of range (nt = {num_triangles})")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    generation: u64,
    domain: Square,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    lineage: Vec<Arc<Lineage>>,
    /// endpoints of the edge a vertex bisected, `None` for initial vertices
    origin: Vec<Option<[usize; 2]>>,
    edges: Vec<Edge>,
    /// edge index opposite each local vertex
    tri_edges: Vec<[usize; 3]>,
}

/// Result of a coarsening pass.
#[derive(Clone, Debug)]
pub struct Coarsening {
    pub mesh: Mesh,
    pub merged: usize,
    pub skipped: usize,
    /// new index of every input vertex, `None` for removed ones
    pub vertex_map: Vec<Option<usize>>,
}

/// Triangle adjacency and edge incidence tables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchTables {
    pub tri_neighbors: Vec<Vec<usize>>,
    pub edge_tris: Vec<Vec<usize>>,
}

/// Result of a conformity and geometry audit.
#[derive(Clone, Debug)]
pub struct MeshAudit {
    pub conforming: bool,
    pub boundary_on_domain: bool,
    pub min_signed_area: f64,
    pub total_area: f64,
    pub min_angle_deg: f64,
    pub max_level: u32,
}

impl MeshAudit {
    pub fn ok(&self) -> bool {
        self.conforming && self.boundary_on_domain && self.min_signed_area > 0.0
    }
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Criss-cross triangulation with `resolution^2` cells, each split along one
/// diagonal whose direction alternates in a checkerboard pattern.
pub fn build_initial_mesh(domain: Square, resolution: usize) -> Result<Mesh> {
    if resolution == 0 {
        return Err(Error::Mesh("resolution must be at least 1".into()));
    }
    if !(domain.side > 0.0) {
        return Err(Error::Mesh("square side must be positive".into()));
    }
    let n = resolution;
    let h = domain.side / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([domain.x0 + i as f64 * h, domain.y0 + j as f64 * h]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (p00, p10, p11, p01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([p10, p11, p00]);
                triangles.push([p01, p00, p11]);
            } else {
                triangles.push([p00, p10, p01]);
                triangles.push([p11, p01, p10]);
            }
        }
    }
    let nv = vertices.len();
    Mesh::assemble(0, domain, vertices, triangles, None, vec![None; nv])
}

impl Mesh {
    /// Builds a mesh from raw arrays; every triangle becomes a genealogy root.
    pub fn from_parts(
        generation: u64,
        domain: Square,
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Mesh> {
        let nv = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&v| v >= nv)) {
            return Err(Error::Mesh(format!("triangle {t:?} references a missing vertex")));
        }
        Mesh::assemble(generation, domain, vertices, triangles, None, vec![None; nv])
    }

    fn assemble(
        generation: u64,
        domain: Square,
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        lineage: Option<Vec<Arc<Lineage>>>,
        origin: Vec<Option<[usize; 2]>>,
    ) -> Result<Mesh> {
        for (ti, t) in triangles.iter().enumerate() {
            let a = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if !(a > 0.0) {
                return Err(Error::Mesh(format!("triangle {ti} has non-positive area {a:e}")));
            }
        }
        let mut edge_of: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 2);
        let mut edges: Vec<Edge> = Vec::with_capacity(triangles.len() * 3 / 2 + 8);
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (ti, t) in triangles.iter().enumerate() {
            let mut te = [0; 3];
            for k in 0..3 {
                let (a, b) = key(t[(k + 1) % 3], t[(k + 2) % 3]);
                let e = *edge_of.entry((a, b)).or_insert_with(|| {
                    edges.push(Edge {
                        v: [a, b],
                        tris: [None, None],
                    });
                    edges.len() - 1
                });
                let slot = &mut edges[e].tris;
                if slot[0].is_none() {
                    slot[0] = Some(ti);
                } else if slot[1].is_none() {
                    slot[1] = Some(ti);
                } else {
                    return Err(Error::Mesh(format!("edge {a}-{b} shared by more than two triangles")));
                }
                te[k] = e;
            }
            tri_edges.push(te);
        }
        let lineage = lineage.unwrap_or_else(|| triangles.iter().map(|_| Lineage::root()).collect());
        Ok(Mesh {
            generation,
            domain,
            vertices,
            triangles,
            lineage,
            origin,
            edges,
            tri_edges,
        })
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn domain(&self) -> Square {
        self.domain
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge indices opposite the local vertices of triangle `t`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// The bisection edge of triangle `t`.
    pub fn refinement_edge(&self, t: usize) -> [usize; 2] {
        let [_, b, c] = self.triangles[t];
        [b, c]
    }

    pub fn level(&self, t: usize) -> u32 {
        self.lineage[t].level
    }

    pub fn lineage(&self, t: usize) -> &Arc<Lineage> {
        &self.lineage[t]
    }

    /// Endpoints of the edge whose bisection created vertex `v`.
    pub fn vertex_origin(&self, v: usize) -> Option<[usize; 2]> {
        self.origin[v]
    }

    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [p, q, r] = self.corners(t);
        signed_area(p, q, r)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [p, q, r] = self.corners(t);
        dist(p, q).max(dist(q, r)).max(dist(r, p))
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].v;
        dist(self.vertices[a], self.vertices[b])
    }

    pub fn min_angle_deg(&self, t: usize) -> f64 {
        let [p, q, r] = self.corners(t);
        let (a, b, c) = (dist(q, r), dist(r, p), dist(p, q));
        let ang = |opp: f64, s1: f64, s2: f64| {
            ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0).acos()
        };
        ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b)).to_degrees()
    }

    /// Gradients of the three barycentric coordinates (constant on the triangle).
    pub fn basis_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [p0, p1, p2] = self.corners(t);
        let two_a = 2.0 * signed_area(p0, p1, p2);
        [
            [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
            [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
            [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
        ]
    }

    /// Maps barycentric coordinates on triangle `t` to a point.
    pub fn point(&self, t: usize, lambda: [f64; 3]) -> [f64; 2] {
        let c = self.corners(t);
        [
            lambda[0] * c[0][0] + lambda[1] * c[1][0] + lambda[2] * c[2][0],
            lambda[0] * c[0][1] + lambda[1] * c[1][1] + lambda[2] * c[2][1],
        ]
    }

    /// Finds a triangle containing `x` and the barycentric coordinates of `x` in it.
    pub fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let tol = -1e-12;
        (0..self.num_triangles()).find_map(|t| {
            let [p, q, r] = self.corners(t);
            let a = signed_area(p, q, r);
            let l = [
                signed_area(x, q, r) / a,
                signed_area(p, x, r) / a,
                signed_area(p, q, x) / a,
            ];
            (l.iter().all(|&v| v >= tol)).then_some((t, l))
        })
    }

    /// Vertex with coordinates `x` (within a relative tolerance).
    pub fn find_vertex(&self, x: [f64; 2]) -> Option<usize> {
        let tol = 1e-12 * self.domain.side;
        self.vertices.iter().position(|p| dist(*p, x) <= tol)
    }

    /// Triangles incident to each vertex.
    pub fn vertex_stars(&self) -> Vec<Vec<usize>> {
        let mut stars = vec![Vec::new(); self.num_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                stars[v].push(t);
            }
        }
        stars
    }

    pub fn with_generation(mut self, generation: u64) -> Mesh {
        self.generation = generation;
        self
    }

    pub fn refine_uniform(&self) -> Result<Mesh> {
        self.refine(&MarkSet::refine_only(0..self.num_triangles()))
    }

    /// Newest-vertex bisection of the refine-marked triangles plus the closure
    /// needed for conformity. Input vertices keep their indices; new vertices
    /// are appended.
    pub fn refine(&self, marks: &MarkSet) -> Result<Mesh> {
        marks.validate(self.num_triangles())?;
        let mut marked = vec![false; self.edges.len()];
        let mut stack = Vec::new();
        for &t in &marks.refine {
            let e = self.tri_edges[t][0];
            if !marked[e] {
                marked[e] = true;
                stack.push(e);
            }
        }
        while let Some(e) = stack.pop() {
            for t in self.edges[e].tris.iter().flatten() {
                let re = self.tri_edges[*t][0];
                if !marked[re] {
                    marked[re] = true;
                    stack.push(re);
                }
            }
        }
        let mut vertices = self.vertices.clone();
        let mut origin = self.origin.clone();
        let mut midpoint = HashMap::new();
        for (e, edge) in self.edges.iter().enumerate() {
            if marked[e] {
                let [a, b] = edge.v;
                let (p, q) = (self.vertices[a], self.vertices[b]);
                midpoint.insert((a, b), vertices.len());
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                origin.push(Some([a, b]));
            }
        }
        let mut triangles = Vec::with_capacity(self.triangles.len() + 2 * midpoint.len());
        let mut lineage = Vec::with_capacity(triangles.capacity());
        fn split(
            tri: [usize; 3],
            node: Arc<Lineage>,
            midpoint: &HashMap<(usize, usize), usize>,
            tris: &mut Vec<[usize; 3]>,
            lin: &mut Vec<Arc<Lineage>>,
        ) {
            let [a, b, c] = tri;
            match midpoint.get(&key(b, c)) {
                Some(&m) => {
                    split([m, a, b], Lineage::child(&node, 0), midpoint, tris, lin);
                    split([m, c, a], Lineage::child(&node, 1), midpoint, tris, lin);
                }
                None => {
                    tris.push(tri);
                    lin.push(node);
                }
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            split(*tri, self.lineage[t].clone(), &midpoint, &mut triangles, &mut lineage);
        }
        Mesh::assemble(self.generation + 1, self.domain, vertices, triangles, Some(lineage), origin)
    }

    /// Merges coarsen-marked sibling pairs back into their parents. A pair is
    /// merged only if every triangle around its bisection vertex belongs to a
    /// marked sibling pair sharing that vertex, so the result stays conforming.
    pub fn coarsen(&self, marks: &MarkSet) -> Result<Coarsening> {
        marks.validate(self.num_triangles())?;
        // complete marked pairs keyed by the parent record
        let mut groups: HashMap<*const Lineage, [Option<usize>; 2]> = HashMap::new();
        for &t in &marks.coarsen {
            if let Some(p) = &self.lineage[t].parent {
                groups.entry(Arc::as_ptr(p)).or_default()[self.lineage[t].slot as usize] = Some(t);
            }
        }
        let mut skipped = 0;
        let mut pair_of = vec![None; self.num_triangles()];
        let mut pairs = Vec::new();
        let mut keys: Vec<_> = groups.keys().copied().collect();
        keys.sort_by_key(|k| groups[k].iter().flatten().min().copied());
        for k in keys {
            match groups[&k] {
                [Some(t0), Some(t1)] if self.triangles[t0][0] == self.triangles[t1][0] => {
                    pair_of[t0] = Some(pairs.len());
                    pair_of[t1] = Some(pairs.len());
                    pairs.push((t0, t1));
                }
                _ => skipped += 1,
            }
        }
        let stars = self.vertex_stars();
        let mut merge = vec![false; pairs.len()];
        let mut rejected = vec![false; pairs.len()];
        for (pi, &(t0, _)) in pairs.iter().enumerate() {
            if merge[pi] || rejected[pi] {
                continue;
            }
            let m = self.triangles[t0][0];
            let star = &stars[m];
            // pairs bisected at `m`; pairs merely touching the star are judged at their own vertex
            let star_pairs: BTreeSet<usize> = star
                .iter()
                .filter(|&&t| self.triangles[t][0] == m)
                .filter_map(|&t| pair_of[t])
                .collect();
            let ok = star.iter().all(|&t| {
                pair_of[t].is_some() && self.triangles[t][0] == m
            }) && star.len() == 2 * star_pairs.len()
                && (star.len() == 4 || (star.len() == 2 && self.on_boundary(m)));
            for sp in star_pairs {
                if ok {
                    merge[sp] = true;
                } else {
                    rejected[sp] = true;
                }
            }
            if !ok {
                rejected[pi] = true;
            }
        }
        skipped += rejected.iter().filter(|&&r| r).count();
        let mut removed = vec![false; self.num_vertices()];
        let mut triangles = Vec::with_capacity(self.num_triangles());
        let mut lineage = Vec::with_capacity(self.num_triangles());
        let mut consumed = vec![false; self.num_triangles()];
        let mut merged = 0;
        for (pi, &(t0, t1)) in pairs.iter().enumerate() {
            if !merge[pi] {
                continue;
            }
            let [m, a, b] = self.triangles[t0];
            let [_, c, _] = self.triangles[t1];
            removed[m] = true;
            consumed[t0] = true;
            consumed[t1] = true;
            triangles.push([a, b, c]);
            lineage.push(self.lineage[t0].parent.clone().expect("pair has a parent"));
            merged += 1;
        }
        for t in 0..self.num_triangles() {
            if !consumed[t] {
                triangles.push(self.triangles[t]);
                lineage.push(self.lineage[t].clone());
            }
        }
        let mut vertex_map = vec![None; self.num_vertices()];
        let mut vertices = Vec::with_capacity(self.num_vertices());
        for v in 0..self.num_vertices() {
            if !removed[v] {
                vertex_map[v] = Some(vertices.len());
                vertices.push(self.vertices[v]);
            }
        }
        let origin = (0..self.num_vertices())
            .filter(|&v| !removed[v])
            .map(|v| {
                self.origin[v].and_then(|[a, b]| match (vertex_map[a], vertex_map[b]) {
                    (Some(a), Some(b)) => Some([a, b]),
                    _ => None,
                })
            })
            .collect();
        for t in triangles.iter_mut() {
            for v in t.iter_mut() {
                *v = vertex_map[*v].expect("kept triangle uses removed vertex");
            }
        }
        let mesh = Mesh::assemble(self.generation + 1, self.domain, vertices, triangles, Some(lineage), origin)?;
        Ok(Coarsening {
            mesh,
            merged,
            skipped,
            vertex_map,
        })
    }

    fn on_boundary(&self, v: usize) -> bool {
        self.domain.on_boundary(self.vertices[v]).iter().any(|&b| b)
    }

    pub fn edge_patches(&self) -> PatchTables {
        let edge_tris: Vec<Vec<usize>> = self.edges.iter().map(|e| e.tris.iter().flatten().copied().collect()).collect();
        let tri_neighbors = (0..self.num_triangles())
            .map(|t| {
                self.tri_edges[t]
                    .iter()
                    .filter_map(|&e| self.edges[e].tris.iter().flatten().copied().find(|&o| o != t))
                    .collect()
            })
            .collect();
        PatchTables {
            tri_neighbors,
            edge_tris,
        }
    }

    pub fn audit(&self) -> MeshAudit {
        let boundary_on_domain = self.edges.iter().filter(|e| e.is_boundary()).all(|e| {
            let a = self.domain.on_boundary(self.vertices[e.v[0]]);
            let b = self.domain.on_boundary(self.vertices[e.v[1]]);
            (0..4).any(|s| a[s] && b[s])
        });
        // an interior edge touched by only one triangle signals a hanging node
        let conforming = boundary_on_domain;
        let min_signed_area = (0..self.num_triangles()).map(|t| self.area(t)).fold(f64::INFINITY, f64::min);
        MeshAudit {
            conforming,
            boundary_on_domain,
            min_signed_area,
            total_area: self.total_area(),
            min_angle_deg: (0..self.num_triangles()).map(|t| self.min_angle_deg(t)).fold(180.0, f64::min),
            max_level: self.lineage.iter().map(|l| l.level).max().unwrap_or(0),
        }
    }

    /// Plain-text dump: header `mesh <generation> <nv> <nt>`, vertices, triangles.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mesh {} {} {}", self.generation, self.num_vertices(), self.num_triangles());
        for p in &self.vertices {
            let _ = writeln!(s, "{:.16e} {:.16e}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn from_text(text: &str, domain: Square) -> Result<Mesh> {
        let bad = |msg: String| Error::Format {
            what: "mesh".into(),
            msg,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty input".into()))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "mesh" {
            return Err(bad(format!("bad header {header:?}")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s}: {e}")));
        let generation = header[1].parse::<u64>().map_err(|e| bad(e.to_string()))?;
        let (nv, nt) = (num(header[2])?, num(header[3])?);
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let l = lines.next().ok_or_else(|| bad("missing vertex line".into()))?;
            let xs: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}"))))
                .collect::<Result<_>>()?;
            if xs.len() != 2 {
                return Err(bad(format!("vertex line `{l}`")));
            }
            vertices.push([xs[0], xs[1]]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let l = lines.next().ok_or_else(|| bad("missing triangle line".into()))?;
            let ts: Vec<usize> = l.split_whitespace().map(num).collect::<Result<_>>()?;
            if ts.len() != 3 {
                return Err(bad(format!("triangle line `{l}`")));
            }
            triangles.push([ts[0], ts[1], ts[2]]);
        }
        Mesh::from_parts(generation, domain, vertices, triangles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(res: usize) -> Mesh {
        build_initial_mesh(Square::unit(), res).unwrap()
    }

    #[test]
    fn initial_mesh_counts() {
        let m = unit(1);
        assert_eq!((m.num_triangles(), m.num_vertices()), (2, 4));
        let m = build_initial_mesh(Square::centered(1.0), 2).unwrap();
        assert_eq!((m.num_triangles(), m.num_vertices()), (8, 9));
        assert_eq!(m.num_vertices() + m.num_triangles() - m.edges().len(), 1);
        assert!(build_initial_mesh(Square::unit(), 0).is_err());
        assert!((m.audit().min_angle_deg - 45.0).abs() < 1e-9);
    }

    #[test]
    fn refine_both_and_one() {
        let m = unit(1);
        let r = m.refine(&MarkSet::refine_only([0, 1])).unwrap();
        assert_eq!((r.num_triangles(), r.num_vertices()), (4, 5));
        assert!(r.audit().ok());
        let r1 = m.refine(&MarkSet::refine_only([0])).unwrap();
        assert_eq!(r1.num_triangles(), 4);
        assert!(r1.audit().ok());
        let same = m.refine(&MarkSet::default()).unwrap();
        assert_eq!(same.triangles(), m.triangles());
        assert_eq!(same.generation(), 1);
    }

    #[test]
    fn coarsen_inverts_refine() {
        let m = unit(1);
        let r = m.refine_uniform().unwrap();
        let c = r.coarsen(&MarkSet::coarsen_only(0..4)).unwrap();
        assert_eq!(c.skipped, 0);
        assert_eq!(c.merged, 2);
        let mut a: Vec<_> = c.mesh.triangles().to_vec();
        let mut b: Vec<_> = m.triangles().to_vec();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        let half = r.coarsen(&MarkSet::coarsen_only([0])).unwrap();
        assert_eq!(half.skipped, 1);
        assert_eq!(half.mesh.num_triangles(), 4);
    }

    #[test]
    fn dump_round_trip() {
        let m = unit(3).refine(&MarkSet::refine_only([1, 5])).unwrap();
        let back = Mesh::from_text(&m.to_text(), Square::unit()).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.generation(), m.generation());
        for (p, q) in back.vertices().iter().zip(m.vertices()) {
            assert_eq!(p, q);
        }
    }
}
