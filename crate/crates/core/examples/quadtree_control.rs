//! Grows and prunes a Gaussian quad tree on an icosahedron by steering parent
//! opacities, then prints the bookkeeping after each population-control event.
//!
//! cargo run --release --example quadtree_control

use tessgs::mesh::primitives::icosahedron;
use tessgs::quadtree::{child_opacity, logit, PopulationConfig, QuadTree};

fn main() {
    let mesh = icosahedron(1.0);
    let mut tree = QuadTree::new(&mesh, 8, 0.9, 4, 0.5);
    println!("start: {} faces, {} Gaussians", tree.num_active_faces(), tree.num_active_gaussians());
    for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("  parent opacity {a:.2} -> child opacity {:.4}", child_opacity(a, tree.beta));
    }
    let cfg = PopulationConfig::default();
    // event 1: faces 0-3 turn transparent, 10-19 turn opaque
    // event 2: children of face 0 turn transparent in turn
    let plans: [Vec<(usize, f64)>; 2] = [
        (0..4).map(|f| (f, 0.02)).chain((10..20).map(|f| (f, 0.97))).collect(),
        (20..24).map(|f| (f, 0.03)).collect(),
    ];
    for (i, plan) in plans.iter().enumerate() {
        for &(f, a) in plan {
            tree.opacity_logits[f] = logit(a);
        }
        for _ in 0..20 {
            tree.record_opacity_stats(cfg.deactivate_above);
        }
        let rep = tree.population_control(&cfg);
        println!(
            "event {}: subdivided {}, deactivated {} children -> {} faces, {} Gaussians",
            i + 1,
            rep.subdivided,
            rep.deactivated_children,
            tree.num_active_faces(),
            tree.num_active_gaussians()
        );
        tree.audit().map_err(|e| format!("inconsistent tree: {e}")).unwrap();
    }
}
