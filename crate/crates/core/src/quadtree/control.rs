use serde::{Deserialize, Serialize};

use super::{child_opacity, logit, QuadTree, TreeFace, CHILD_CORNERS, NODES_PER_FACE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub subdivide_below: f64,
    pub deactivate_above: f64,
    pub deactivate_fraction: f64,
    /// Disables child deactivation entirely.
    pub prune: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            subdivide_below: 0.1,
            deactivate_above: 0.9,
            deactivate_fraction: 0.9,
            prune: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlReport {
    pub subdivided: usize,
    pub deactivated_children: usize,
    pub skipped_at_max_depth: usize,
}

/// Whether a population-control event fires at `step`: on the cadence, but
/// never inside the first `head` or last `tail` steps.
pub fn is_control_step(step: usize, total: usize, cadence: usize, head: usize, tail: usize) -> bool {
    cadence > 0 && step > 0 && step % cadence == 0 && step >= head && step + tail < total
}

impl QuadTree {
    /// Counts, per active face, iterations with parent opacity above the threshold.
    pub fn record_opacity_stats(&mut self, threshold: f64) {
        for fi in 0..self.faces.len() {
            if self.faces[fi].active {
                let above = self.parent_opacity(fi) > threshold;
                let f = &mut self.faces[fi];
                f.tracked += 1;
                f.above += u32::from(above);
            }
        }
    }

    fn new_slot(&mut self, values: Option<&[f64]>) -> usize {
        let s = self.num_slots();
        match values {
            Some(v) => self.features.extend_from_slice(v),
            None => self.features.extend(std::iter::repeat_n(0.0, self.feature_dim)),
        }
        s
    }

    /// Replaces the parent Gaussian of `face` by four new parent faces built
    /// from its children. Returns the new face ids, or `None` at max depth.
    pub fn subdivide_parent(&mut self, face: usize) -> Option<[usize; 4]> {
        let f = self.faces[face].clone();
        assert!(f.active, "only active faces can be subdivided");
        if f.depth >= self.max_depth {
            log::warn!("face {face} is at max depth {}; not subdivided", self.max_depth);
            return None;
        }
        let e = self.edge_eval(face);
        let d = self.feature_dim;
        let edge_slots: Vec<usize> = (0..3)
            .map(|j| {
                let v = e.feat[j * d..(j + 1) * d].to_vec();
                self.new_slot(Some(&v))
            })
            .collect();
        let alpha = self.parent_opacity(face);
        let child_alpha = child_opacity(alpha, self.beta).clamp(1e-4, 1.0 - 1e-4);
        let mut ids = [0usize; 4];
        for (ch, pick) in CHILD_CORNERS.iter().enumerate() {
            let corner_bary = pick.map(|p| {
                let b = if p < 3 {
                    e.bary[p]
                } else {
                    let c = f.corner_bary[p - 3];
                    crate::mesh::Vec3::new(c[0], c[1], c[2])
                };
                [b[0], b[1], b[2]]
            });
            let corner_slots = pick.map(|p| if p < 3 { edge_slots[p] } else { f.corner_slots[p - 3] });
            let new_edges = [self.new_slot(None), self.new_slot(None), self.new_slot(None)];
            let id = self.faces.len();
            self.faces.push(TreeFace {
                root_face: f.root_face,
                depth: f.depth + 1,
                corner_bary,
                corner_slots,
                edge_slots: new_edges,
                active: true,
                deactivated: [false; 4],
                parent: Some((face, ch)),
                subfaces: None,
                above: 0,
                tracked: 0,
            });
            self.ratio_logits.extend([0.0; 3]);
            // the new parent Gaussian inherits the child's logits so it stays put
            let src = 3 * (NODES_PER_FACE * face + ch + 1);
            let r: Vec<f64> = self.r_logits[src..src + 3].to_vec();
            let c: Vec<f64> = self.c_logits[src..src + 3].to_vec();
            self.r_logits.extend(&r);
            self.c_logits.extend(&c);
            self.r_logits.extend([0.0; 12]);
            self.c_logits.extend([0.0; 12]);
            self.opacity_logits.push(logit(child_alpha));
            ids[ch] = id;
        }
        let old = &mut self.faces[face];
        old.active = false;
        old.subfaces = Some(ids);
        Some(ids)
    }

    /// One population-control event: subdivide transparent parents, then turn
    /// off the children of parents that stayed opaque, then reset the stats.
    pub fn population_control(&mut self, cfg: &PopulationConfig) -> ControlReport {
        let mut report = ControlReport::default();
        let candidates: Vec<usize> = (0..self.faces.len())
            .filter(|&fi| self.faces[fi].active && self.parent_opacity(fi) < cfg.subdivide_below)
            .collect();
        for fi in candidates {
            match self.subdivide_parent(fi) {
                Some(_) => report.subdivided += 1,
                None => report.skipped_at_max_depth += 1,
            }
        }
        if cfg.prune {
            for f in self.faces.iter_mut().filter(|f| f.active && f.tracked > 0) {
                if f64::from(f.above) >= cfg.deactivate_fraction * f64::from(f.tracked) {
                    report.deactivated_children += f.deactivated.iter().filter(|d| !**d).count();
                    f.deactivated = [true; 4];
                }
            }
        }
        for f in &mut self.faces {
            f.above = 0;
            f.tracked = 0;
        }
        report
    }
}
