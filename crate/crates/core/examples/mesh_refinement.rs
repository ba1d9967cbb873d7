//! Newest-vertex bisection around a circle, then coarsening back.

use schfem::mesh::{build_initial_mesh, MarkSet, Square};

fn main() -> schfem::Result<()> {
    let mut mesh = build_initial_mesh(Square::centered(1.0), 8)?;
    println!("initial: {} vertices, {} triangles", mesh.num_vertices(), mesh.num_triangles());
    for round in 0..6 {
        let near: Vec<usize> = (0..mesh.num_triangles())
            .filter(|&t| {
                mesh.corners(t).iter().any(|p| (p[0].hypot(p[1]) - 0.5).abs() < 2.0 * mesh.diameter(t))
            })
            .collect();
        mesh = mesh.refine(&MarkSet::refine_only(near))?;
        let a = mesh.audit();
        println!(
            "round {round}: {:5} triangles, max level {:2}, min angle {:.1} deg, conforming {}",
            mesh.num_triangles(),
            a.max_level,
            a.min_angle_deg,
            a.conforming
        );
    }
    loop {
        let all = MarkSet::coarsen_only(0..mesh.num_triangles());
        let c = mesh.coarsen(&all)?;
        if c.merged == 0 {
            break;
        }
        println!("coarsened: merged {} pairs -> {} triangles", c.merged, c.mesh.num_triangles());
        mesh = c.mesh;
    }
    Ok(())
}
