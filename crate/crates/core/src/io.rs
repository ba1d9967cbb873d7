//! Output writers and snapshot readers. All numbers use Rust's
//! locale-independent formatting; floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::driver::{EnsembleSummary, PathResult, Snapshot};
use crate::error::{Error, Result};
use crate::estimators::space_indicator_3;
use crate::fem::{FeFunction, Space};
use crate::mesh::{Mesh, Square};

pub const SERIES_COLUMNS: &[(&str, &str)] = &[
    ("step", "accepted step index, starting at 1"),
    ("t", "time after the step"),
    ("tau", "step size"),
    ("dofs", "vertices of the mesh the step was solved on"),
    ("triangles", "triangles of that mesh"),
    ("newton_iterations", "Newton updates (polish excluded)"),
    ("newton_residual", "final Newton residual"),
    ("lambda", "principal eigenvalue of the linearized operator, NaN if skipped"),
    ("mass", "integral of u"),
    ("energy", "Ginzburg-Landau energy"),
    ("u_center", "u at the domain center"),
    ("max_abs_u", "max |u| over vertices"),
    ("splitting_defect", "max |u - u_tilde - u_hat|"),
    ("transformation_defect_u", "max |u_tilde - y - eps^gamma s|"),
    ("transformation_defect_w", "max |w_tilde - y_w + eps^gamma g|"),
    ("adapt_rounds", "refinement rounds of this step"),
    ("dofs_after", "vertices after coarsening"),
    ("rejections", "rejected attempts before this step"),
];

pub const INDICATOR_COLUMNS: &[(&str, &str)] = &[
    ("step", "accepted step index"),
    ("t", "time after the step"),
    ("eta_adapt", "space indicator 3 of u (drives adaptivity)"),
    ("eta_s1", "space indicator 1 of (y, y_w)"),
    ("eta_s2", "space indicator 2 of (y, y_w)"),
    ("eta_s3", "space indicator 3 of (y, y_w)"),
    ("eta_t1", "time indicator 1 of (y, y_w)"),
    ("eta_t2", "time indicator 2 of (y, y_w)"),
    ("eta_t3", "time indicator 3 of (y, y_w)"),
    ("eta_s1_hat", "space indicator 1 of (u_hat, w_hat)"),
    ("eta_s2_hat", "space indicator 2 of (u_hat, w_hat)"),
    ("eta_s3_hat", "space indicator 3 of (u_hat, w_hat)"),
    ("eta_t1_hat", "time indicator 1 of (u_hat, w_hat)"),
    ("eta_t2_hat", "time indicator 2 of (u_hat, w_hat), with the f difference"),
    ("eta_t3_hat", "time indicator 3 of (u_hat, w_hat)"),
    ("eta_n1", "noise indicator 1"),
    ("eta_n2", "noise indicator 2"),
    ("eta_n3", "noise indicator 3"),
    ("mu_m1", "residual bound mu_-1"),
    ("mu_0", "residual bound mu_0"),
    ("mu_1", "residual bound mu_1"),
    ("mu_hat_m1", "residual bound mu_hat_-1"),
    ("mu_hat_0", "residual bound mu_hat_0"),
    ("mu_hat_1", "residual bound mu_hat_1"),
];

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn header(cols: &[(&str, &str)]) -> String {
    cols.iter().map(|c| c.0).collect::<Vec<_>>().join(",") + "\n"
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

pub fn series_csv(r: &PathResult) -> String {
    let mut s = header(SERIES_COLUMNS);
    for row in &r.series {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{}",
            row.step,
            row.t,
            row.tau,
            row.dofs,
            row.triangles,
            row.newton_iterations,
            row.newton_residual,
            row.lambda,
            row.mass,
            row.energy,
            row.u_center,
            row.max_abs_u,
            row.splitting_defect,
            row.transformation_defects.0,
            row.transformation_defects.1,
            row.adapt.rounds,
            row.adapt.dofs_after,
            row.rejections
        );
    }
    s
}

pub fn indicators_csv(r: &PathResult) -> String {
    let mut s = header(INDICATOR_COLUMNS);
    for row in &r.series {
        let mut v = vec![row.eta_adapt];
        v.extend(row.eta_space);
        v.extend(row.eta_time);
        v.extend(row.eta_space_hat);
        v.extend(row.eta_time_hat);
        v.extend(row.eta_noise);
        v.extend(row.mu);
        v.extend(row.mu_hat);
        let _ = writeln!(s, "{},{:?},{}", row.step, row.t, join(&v));
    }
    s
}

/// Legacy VTK unstructured grid with `u` as point data.
pub fn vtk(mesh: &Mesh, u: &FeFunction) -> Result<String> {
    u.check_on(mesh)?;
    let mut s = String::from("# vtk DataFile Version 3.0\nschfem\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.num_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} 0", p[0], p[1]);
    }
    let nt = mesh.num_triangles();
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "POINT_DATA {}\nSCALARS u double 1\nLOOKUP_TABLE default", mesh.num_vertices());
    for c in &u.coeffs {
        let _ = writeln!(s, "{c:?}");
    }
    Ok(s)
}

fn snapshot_stem(k: usize) -> String {
    format!("snapshot_{k:02}")
}

/// Files written for one path, relative to `dir`.
fn write_path(r: &PathResult, dir: &Path, vtk_out: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut put = |name: String, text: &str| -> Result<()> {
        write_file(&dir.join(&name), text)?;
        files.push(PathBuf::from(name));
        Ok(())
    };
    put("series.csv".into(), &series_csv(r))?;
    put("indicators.csv".into(), &indicators_csv(r))?;
    let mut index = String::from("index,step,t,eta_adapt,mesh,u,w,y,y_w\n");
    for (k, snap) in r.snapshots.iter().enumerate() {
        let stem = snapshot_stem(k);
        put(format!("{stem}.mesh"), &snap.mesh.to_text())?;
        for (name, f) in [("u", &snap.u), ("w", &snap.w), ("y", &snap.y), ("y_w", &snap.y_w)] {
            put(format!("{stem}_{name}.fefun"), &f.to_text())?;
        }
        if vtk_out {
            put(format!("{stem}.vtk"), &vtk(&snap.mesh, &snap.u)?)?;
        }
        let _ = writeln!(
            index,
            "{k},{},{:?},{:?},{stem}.mesh,{stem}_u.fefun,{stem}_w.fefun,{stem}_y.fefun,{stem}_y_w.fefun",
            snap.step, snap.t, snap.eta_adapt
        );
    }
    put("snapshots.csv".into(), &index)?;
    let rep = &r.report;
    let mut bounds = String::from("quantity,value\n");
    for (k, v) in [
        ("r_tilde", rep.linear.total),
        ("r_tilde_noise", rep.linear.noise),
        ("r_tilde_residual", rep.linear.residual),
        ("r_tilde_differences", rep.linear.differences),
        ("r_tilde_hoelder", rep.linear.hoelder),
        ("r_hat", rep.nonlinear.r_hat),
        ("r_hat_prefactor", rep.nonlinear.prefactor),
        ("gronwall_lhs", rep.nonlinear.condition.lhs),
        ("gronwall_rhs", rep.nonlinear.condition.rhs),
        ("certified", if rep.nonlinear.certified { 1.0 } else { 0.0 }),
        ("e0_hm1_sq", rep.e0_hm1_sq),
        ("c_h_infty", rep.c_h_infty),
        ("closing_center", r.closing.center_time.unwrap_or(f64::NAN)),
        ("closing_lambda_peak", r.closing.lambda_peak.map_or(f64::NAN, |p| p.0)),
        ("closing_gap", r.closing.gap.unwrap_or(f64::NAN)),
    ] {
        let _ = writeln!(bounds, "{k},{v:?}");
    }
    let _ = writeln!(bounds, "eps_tilde_dominant,{}", rep.nonlinear.dominant);
    put("bounds.csv".into(), &bounds)?;
    Ok(files)
}

fn manifest(files: &[PathBuf], with_paths: bool) -> String {
    let mut m = String::from("# schfem output manifest\n\n");
    if with_paths {
        m.push_str("## series.csv (per path directory)\n");
        for (c, d) in SERIES_COLUMNS {
            let _ = writeln!(m, "{c}: {d}");
        }
        m.push_str("\n## indicators.csv (per path directory)\n");
        for (c, d) in INDICATOR_COLUMNS {
            let _ = writeln!(m, "{c}: {d}");
        }
        m.push_str(
            "\n## snapshots.csv\nindex, step, t, eta_adapt and the file names of one snapshot; meshes use the \
             `mesh <generation> <nv> <nt>` text format and fields the `fefun <generation> <n>` format\n",
        );
        m.push_str("\n## bounds.csv\nquantity,value pairs of the pathwise bounds and closing detectors\n");
        m.push_str("\n## histogram.csv\nbin_lo,bin_hi,count of center-sign closing times\n");
        m.push_str("\n## summary.csv\nquantity,value pairs of the ensemble aggregates\n");
    }
    m.push_str("\n## files\n");
    for f in files {
        let _ = writeln!(m, "{}", f.display());
    }
    m
}

pub fn path_dir_name(index: u64) -> String {
    format!("path_{index:04}")
}

/// Writes per-path outputs under `dir/path_NNNN/`, ensemble aggregates if
/// given, and a `MANIFEST` listing every file. Returns the file list relative
/// to `dir`, including `MANIFEST`.
pub fn write_outputs(results: &[PathResult], summary: Option<&EnsembleSummary>, dir: &Path, vtk_out: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for r in results {
        let sub = path_dir_name(r.path_index);
        for f in write_path(r, &dir.join(&sub), vtk_out)? {
            files.push(Path::new(&sub).join(f));
        }
    }
    if let Some(s) = summary {
        let mut h = String::from("bin_lo,bin_hi,count\n");
        for (lo, hi, c) in &s.histogram {
            let _ = writeln!(h, "{lo:?},{hi:?},{c}");
        }
        write_file(&dir.join("histogram.csv"), &h)?;
        files.push("histogram.csv".into());
        write_file(&dir.join("summary.csv"), &summary_csv(s))?;
        files.push("summary.csv".into());
    }
    files.push("MANIFEST".into());
    write_file(&dir.join("MANIFEST"), &manifest(&files, !results.is_empty() || summary.is_some()))?;
    Ok(files)
}

pub fn summary_csv(s: &EnsembleSummary) -> String {
    let mut out = String::from("quantity,value\n");
    let closed = s.closing_times.len() as f64;
    let sd = if s.closing_times.len() > 1 {
        let m = s.mean_closing;
        (s.closing_times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (closed - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    for (k, v) in [
        ("paths", s.paths as f64),
        ("completed", s.results.len() as f64),
        ("failed", s.failures.len() as f64),
        ("closed", closed),
        ("mean_closing", s.mean_closing),
        ("sd_closing", sd),
        ("mean_r_tilde", s.mean_r_tilde),
        ("max_r_tilde", s.max_r_tilde),
        ("eps_tilde", s.eps_tilde),
        ("mean_r_hat", s.mean_r_hat),
        ("certified_fraction", s.certified_fraction),
        ("total_bound", s.total_bound),
        ("max_eta_adapt", s.max_eta_adapt),
    ] {
        let _ = writeln!(out, "{k},{v:?}");
    }
    for (i, msg) in &s.failures {
        let _ = writeln!(out, "failure_{i},\"{}\"", msg.replace('"', "'"));
    }
    out
}

/// One snapshot read back from disk.
#[derive(Clone, Debug)]
pub struct StoredSnapshot {
    pub index: usize,
    pub step: usize,
    pub t: f64,
    pub eta_adapt: f64,
    pub mesh: Arc<Mesh>,
    pub u: FeFunction,
    pub w: FeFunction,
    pub y: FeFunction,
    pub y_w: FeFunction,
}

/// Reads every snapshot listed in `dir/snapshots.csv`.
pub fn read_snapshots(dir: &Path, domain: Square) -> Result<Vec<StoredSnapshot>> {
    let index = read_file(&dir.join("snapshots.csv"))?;
    let bad = |msg: String| Error::Format {
        what: "snapshots.csv".into(),
        msg,
    };
    let mut out = Vec::new();
    for line in index.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 9 {
            return Err(bad(format!("expected 9 columns in `{line}`")));
        }
        let p = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
        let mesh = Arc::new(Mesh::from_text(&read_file(&dir.join(c[4]))?, domain)?);
        let field = |name: &str| -> Result<FeFunction> {
            let f = FeFunction::from_text(&read_file(&dir.join(name))?)?;
            f.check_on(&mesh)?;
            Ok(f)
        };
        out.push(StoredSnapshot {
            index: c[0].parse().map_err(|e| bad(format!("{}: {e}", c[0])))?,
            step: c[1].parse().map_err(|e| bad(format!("{}: {e}", c[1])))?,
            t: p(c[2])?,
            eta_adapt: p(c[3])?,
            u: field(c[5])?,
            w: field(c[6])?,
            y: field(c[7])?,
            y_w: field(c[8])?,
            mesh,
        });
    }
    Ok(out)
}

/// `η_SPACE,3` of `u` recomputed on a stored snapshot.
pub fn recompute_eta_adapt(s: &StoredSnapshot, eps: f64) -> Result<f64> {
    let space = Space::new(s.mesh.clone());
    Ok(space_indicator_3(&space, &s.u, eps)?.0)
}

pub fn snapshot_from_result(s: &Snapshot, index: usize) -> StoredSnapshot {
    StoredSnapshot {
        index,
        step: s.step,
        t: s.t,
        eta_adapt: s.eta_adapt,
        mesh: s.mesh.clone(),
        u: s.u.clone(),
        w: s.w.clone(),
        y: s.y.clone(),
        y_w: s.y_w.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_initial_mesh;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("schfem-io-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn empty_results_write_manifest_only() {
        let d = tmp("empty");
        let files = write_outputs(&[], None, &d, false).unwrap();
        assert_eq!(files, vec![PathBuf::from("MANIFEST")]);
        let listed: Vec<_> = fs::read_dir(&d).unwrap().collect();
        assert_eq!(listed.len(), 1);
        fs::remove_dir_all(&d).unwrap();
    }

    #[test]
    fn vtk_counts() {
        let mesh = build_initial_mesh(Square::unit(), 2).unwrap();
        let u = FeFunction::constant(&mesh, 0.5);
        let v = vtk(&mesh, &u).unwrap();
        assert!(v.contains("POINTS 9 double"));
        assert!(v.contains("CELLS 8 32"));
        assert_eq!(v.lines().filter(|l| *l == "0.5").count(), 9);
    }
}
