//! Hierarchical Gaussian faces over mesh faces: learnable edge ratios,
//! shared corner features, competitive parent/child opacities.
//!
//! Every tree face owns five Gaussians: node 0 is the parent Gaussian and
//! nodes 1..=4 are the children. Child faces 0..3 are the corner children and
//! child face 3 is the center child. Edge `j` lies opposite corner `j`, and its
//! edge point sits at `corner[(j+2)%3] * (1 - s_j) + corner[(j+1)%3] * s_j`.

mod control;

use serde::{Deserialize, Serialize};

use crate::mesh::{Mesh, Vec3};
use crate::nn::sigmoid;

pub use control::{is_control_step, ControlReport, PopulationConfig};

pub const NODES_PER_FACE: usize = 5;

/// Corners of child face `i` as indices into `[E_0, E_1, E_2, c_0, c_1, c_2]`.
pub const CHILD_CORNERS: [[usize; 3]; 4] = [[2, 1, 3], [0, 2, 4], [1, 0, 5], [2, 0, 1]];

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softmax3(x: &[f64]) -> [f64; 3] {
    let m = x[0].max(x[1]).max(x[2]);
    let e = [(x[0] - m).exp(), (x[1] - m).exp(), (x[2] - m).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Gradient of `softmax3` pulled back to the logits.
pub fn softmax3_backward(p: &[f64; 3], g: &[f64; 3]) -> [f64; 3] {
    let dot = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
    [p[0] * (g[0] - dot), p[1] * (g[1] - dot), p[2] * (g[2] - dot)]
}

/// Competitive child opacity `(1 - α^β)^(1/β)`.
pub fn child_opacity(alpha_parent: f64, beta: f64) -> f64 {
    (1.0 - alpha_parent.powf(beta)).max(0.0).powf(1.0 / beta)
}

/// `d α_child / d logit` for `α_parent = sigmoid(logit)`, written so that it
/// stays finite at both ends.
pub fn child_opacity_dlogit(alpha_parent: f64, beta: f64) -> f64 {
    let ab = alpha_parent.powf(beta);
    let rest = (1.0 - ab).max(0.0);
    -ab * (1.0 - alpha_parent) * rest.powf((1.0 - beta) / beta)
}

/// Convex combination of three feature vectors with weights `softmax(c)`.
pub fn interpolate_features(c: &[f64], f: [&[f64]; 3]) -> Vec<f64> {
    let w = softmax3(c);
    (0..f[0].len())
        .map(|k| w[0] * f[0][k] + w[1] * f[1][k] + w[2] * f[2][k])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFace {
    pub root_face: usize,
    pub depth: usize,
    /// Barycentric coordinates of the three corners with respect to the root
    /// mesh face, fixed once the face exists.
    pub corner_bary: [[f64; 3]; 3],
    pub corner_slots: [usize; 3],
    pub edge_slots: [usize; 3],
    /// False once the face has been subdivided.
    pub active: bool,
    pub deactivated: [bool; 4],
    pub parent: Option<(usize, usize)>,
    pub subfaces: Option<[usize; 4]>,
    pub above: u32,
    pub tracked: u32,
}

/// Identifies one Gaussian: a tree face and a node (0 parent, 1..=4 children).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GaussianId {
    pub face: usize,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadTree {
    pub beta: f64,
    pub max_depth: usize,
    pub feature_dim: usize,
    /// Feature slots, `feature_dim` values each.
    pub features: Vec<f64>,
    pub faces: Vec<TreeFace>,
    /// Three edge-ratio logits per face.
    pub ratio_logits: Vec<f64>,
    /// Three position logits per node, `NODES_PER_FACE` nodes per face.
    pub r_logits: Vec<f64>,
    /// Three feature-weight logits per node.
    pub c_logits: Vec<f64>,
    /// One parent opacity logit per face.
    pub opacity_logits: Vec<f64>,
}

/// Per-Gaussian quantities the decoders consume.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInput {
    pub id: GaussianId,
    pub root_face: usize,
    pub depth: usize,
    /// Corners of the Gaussian face in root barycentric coordinates.
    pub corners: [Vec3; 3],
    /// Root barycentric coordinates of the Gaussian (softmax(r) over corners).
    pub bary: Vec3,
    /// Root barycentric weights for vertex colors (softmax(c) over corners).
    pub color_bary: Vec3,
    pub opacity: f64,
}

/// Forward evaluation of the tree for the current parameters.
#[derive(Debug, Clone)]
pub struct TreeEval {
    pub gaussians: Vec<GaussianInput>,
    /// Row-major `G x feature_dim` interpolated features.
    pub features: Vec<f64>,
    edge: Vec<Option<EdgeEval>>,
}

#[derive(Debug, Clone)]
struct EdgeEval {
    s: [f64; 3],
    bary: [Vec3; 3],
    feat: Vec<f64>,
}

/// Gradients on the per-Gaussian decoder inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub corners: [Vec3; 3],
    pub bary: Vec3,
    pub color_bary: Vec3,
    pub opacity: f64,
}

impl GaussianGrad {
    pub fn zeros() -> Self {
        GaussianGrad {
            corners: [Vec3::zeros(); 3],
            bary: Vec3::zeros(),
            color_bary: Vec3::zeros(),
            opacity: 0.0,
        }
    }
}

/// Gradients for every tree parameter buffer, same layout as the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGrad {
    pub features: Vec<f64>,
    pub ratio_logits: Vec<f64>,
    pub r_logits: Vec<f64>,
    pub c_logits: Vec<f64>,
    pub opacity_logits: Vec<f64>,
}

impl TreeGrad {
    pub fn zeros(tree: &QuadTree) -> Self {
        TreeGrad {
            features: vec![0.0; tree.features.len()],
            ratio_logits: vec![0.0; tree.ratio_logits.len()],
            r_logits: vec![0.0; tree.r_logits.len()],
            c_logits: vec![0.0; tree.c_logits.len()],
            opacity_logits: vec![0.0; tree.opacity_logits.len()],
        }
    }
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl QuadTree {
    /// One depth-0 face per mesh face; one feature slot per mesh vertex, shared
    /// by every face around it, plus three edge slots per face. Features start
    /// at zero, ratios at one half, position and feature weights uniform, and
    /// parent opacity at `initial_opacity`.
    pub fn new(mesh: &Mesh, feature_dim: usize, beta: f64, max_depth: usize, initial_opacity: f64) -> Self {
        let n = mesh.num_vertices();
        let mut faces = Vec::with_capacity(mesh.num_faces());
        let mut next_slot = n;
        for (fi, f) in mesh.faces().iter().enumerate() {
            faces.push(TreeFace {
                root_face: fi,
                depth: 0,
                corner_bary: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                corner_slots: *f,
                edge_slots: [next_slot, next_slot + 1, next_slot + 2],
                active: true,
                deactivated: [false; 4],
                parent: None,
                subfaces: None,
                above: 0,
                tracked: 0,
            });
            next_slot += 3;
        }
        let nf = faces.len();
        QuadTree {
            beta,
            max_depth,
            feature_dim,
            features: vec![0.0; next_slot * feature_dim],
            faces,
            ratio_logits: vec![0.0; 3 * nf],
            r_logits: vec![0.0; 3 * NODES_PER_FACE * nf],
            c_logits: vec![0.0; 3 * NODES_PER_FACE * nf],
            opacity_logits: vec![logit(initial_opacity); nf],
        }
    }

    pub fn num_slots(&self) -> usize {
        self.features.len() / self.feature_dim
    }

    pub fn slot(&self, s: usize) -> &[f64] {
        &self.features[s * self.feature_dim..(s + 1) * self.feature_dim]
    }

    pub fn slot_mut(&mut self, s: usize) -> &mut [f64] {
        let d = self.feature_dim;
        &mut self.features[s * d..(s + 1) * d]
    }

    pub fn parent_opacity(&self, face: usize) -> f64 {
        sigmoid(self.opacity_logits[face])
    }

    pub fn ratios(&self, face: usize) -> [f64; 3] {
        let r = &self.ratio_logits[3 * face..3 * face + 3];
        [sigmoid(r[0]), sigmoid(r[1]), sigmoid(r[2])]
    }

    pub fn r(&self, id: GaussianId) -> &[f64] {
        let o = 3 * (NODES_PER_FACE * id.face + id.node);
        &self.r_logits[o..o + 3]
    }

    pub fn c(&self, id: GaussianId) -> &[f64] {
        let o = 3 * (NODES_PER_FACE * id.face + id.node);
        &self.c_logits[o..o + 3]
    }

    pub fn opacity(&self, id: GaussianId) -> f64 {
        let a = self.parent_opacity(id.face);
        if id.node == 0 {
            a
        } else {
            child_opacity(a, self.beta)
        }
    }

    /// Rendered Gaussians in a fixed order: faces by id, parent then children.
    pub fn gaussian_ids(&self) -> Vec<GaussianId> {
        let mut out = Vec::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if !f.active {
                continue;
            }
            out.push(GaussianId { face: fi, node: 0 });
            for ch in 0..4 {
                if !f.deactivated[ch] {
                    out.push(GaussianId { face: fi, node: ch + 1 });
                }
            }
        }
        out
    }

    pub fn num_active_gaussians(&self) -> usize {
        self.faces
            .iter()
            .filter(|f| f.active)
            .map(|f| 1 + f.deactivated.iter().filter(|d| !**d).count())
            .sum()
    }

    pub fn num_active_faces(&self) -> usize {
        self.faces.iter().filter(|f| f.active).count()
    }

    fn edge_eval(&self, face: usize) -> EdgeEval {
        let f = &self.faces[face];
        let s = self.ratios(face);
        let cb = f.corner_bary.map(|b| v3(&b));
        let d = self.feature_dim;
        let mut feat = vec![0.0; 3 * d];
        let mut bary = [Vec3::zeros(); 3];
        for j in 0..3 {
            let (a, b) = ((j + 2) % 3, (j + 1) % 3);
            bary[j] = cb[a] * (1.0 - s[j]) + cb[b] * s[j];
            let fa = self.slot(f.corner_slots[a]);
            let fb = self.slot(f.corner_slots[b]);
            let fe = self.slot(f.edge_slots[j]);
            for k in 0..d {
                feat[j * d + k] = fa[k] * (1.0 - s[j]) + fb[k] * s[j] + fe[k];
            }
        }
        EdgeEval { s, bary, feat }
    }

    /// Corner features of child `which` (0..4) of `face`, in child corner order.
    pub fn child_vertex_features(&self, face: usize, which: usize) -> [Vec<f64>; 3] {
        let e = self.edge_eval(face);
        let d = self.feature_dim;
        CHILD_CORNERS[which].map(|p| {
            if p < 3 {
                e.feat[p * d..(p + 1) * d].to_vec()
            } else {
                self.slot(self.faces[face].corner_slots[p - 3]).to_vec()
            }
        })
    }

    /// Corner root-barycentrics of child `which` of `face`.
    pub fn child_corners(&self, face: usize, which: usize) -> [Vec3; 3] {
        let e = self.edge_eval(face);
        let cb = self.faces[face].corner_bary;
        CHILD_CORNERS[which].map(|p| if p < 3 { e.bary[p] } else { v3(&cb[p - 3]) })
    }

    pub fn evaluate(&self) -> TreeEval {
        let d = self.feature_dim;
        let ids = self.gaussian_ids();
        let mut edge: Vec<Option<EdgeEval>> = vec![None; self.faces.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            if f.active && f.deactivated.iter().any(|x| !x) {
                edge[fi] = Some(self.edge_eval(fi));
            }
        }
        let mut gaussians = Vec::with_capacity(ids.len());
        let mut features = vec![0.0; ids.len() * d];
        for (g, id) in ids.iter().enumerate() {
            let f = &self.faces[id.face];
            let (corners, feats): ([Vec3; 3], [&[f64]; 3]) = if id.node == 0 {
                (
                    f.corner_bary.map(|b| v3(&b)),
                    f.corner_slots.map(|s| self.slot(s)),
                )
            } else {
                let e = edge[id.face].as_ref().expect("edge eval for faces with live children");
                let pick = CHILD_CORNERS[id.node - 1];
                (
                    pick.map(|p| if p < 3 { e.bary[p] } else { v3(&f.corner_bary[p - 3]) }),
                    pick.map(|p| {
                        if p < 3 {
                            &e.feat[p * d..(p + 1) * d]
                        } else {
                            self.slot(f.corner_slots[p - 3])
                        }
                    }),
                )
            };
            let a = softmax3(self.r(*id));
            let b = softmax3(self.c(*id));
            let out = &mut features[g * d..(g + 1) * d];
            for k in 0..d {
                out[k] = b[0] * feats[0][k] + b[1] * feats[1][k] + b[2] * feats[2][k];
            }
            gaussians.push(GaussianInput {
                id: *id,
                root_face: f.root_face,
                depth: f.depth,
                corners,
                bary: corners[0] * a[0] + corners[1] * a[1] + corners[2] * a[2],
                color_bary: corners[0] * b[0] + corners[1] * b[1] + corners[2] * b[2],
                opacity: self.opacity(*id),
            });
        }
        TreeEval {
            gaussians,
            features,
            edge,
        }
    }

    /// Pulls per-Gaussian gradients (and gradients on the interpolated
    /// features, row-major like `TreeEval::features`) back to tree parameters.
    pub fn backward(&self, eval: &TreeEval, grads: &[GaussianGrad], grad_features: &[f64]) -> TreeGrad {
        let d = self.feature_dim;
        let mut out = TreeGrad::zeros(self);
        // per-face accumulators for edge points
        let mut g_edge_bary: Vec<[Vec3; 3]> = vec![[Vec3::zeros(); 3]; self.faces.len()];
        let mut g_edge_feat: Vec<Vec<f64>> = vec![Vec::new(); self.faces.len()];
        for (gi, (gin, gg)) in eval.gaussians.iter().zip(grads).enumerate() {
            let id = gin.id;
            let f = &self.faces[id.face];
            let a = softmax3(self.r(id));
            let b = softmax3(self.c(id));
            let gf = &grad_features[gi * d..(gi + 1) * d];
            let pick = if id.node == 0 { [3, 4, 5] } else { CHILD_CORNERS[id.node - 1] };
            let feat_of = |p: usize| -> &[f64] {
                if p < 3 {
                    let e = eval.edge[id.face].as_ref().expect("edge eval");
                    &e.feat[p * d..(p + 1) * d]
                } else {
                    self.slot(f.corner_slots[p - 3])
                }
            };
            // softmax weights
            let mut ga = [0.0; 3];
            let mut gb = [0.0; 3];
            for i in 0..3 {
                ga[i] = gg.bary.dot(&gin.corners[i]);
                let fi = feat_of(pick[i]);
                gb[i] = gg.color_bary.dot(&gin.corners[i]) + fi.iter().zip(gf).map(|(x, y)| x * y).sum::<f64>();
            }
            let gr = softmax3_backward(&a, &ga);
            let gc = softmax3_backward(&b, &gb);
            let o = 3 * (NODES_PER_FACE * id.face + id.node);
            for i in 0..3 {
                out.r_logits[o + i] += gr[i];
                out.c_logits[o + i] += gc[i];
            }
            // corners and corner features
            for i in 0..3 {
                let g_corner = gg.corners[i] + gg.bary * a[i] + gg.color_bary * b[i];
                let p = pick[i];
                if p < 3 {
                    g_edge_bary[id.face][p] += g_corner;
                    let acc = &mut g_edge_feat[id.face];
                    if acc.is_empty() {
                        acc.resize(3 * d, 0.0);
                    }
                    for k in 0..d {
                        acc[p * d + k] += b[i] * gf[k];
                    }
                } else {
                    // corner barycentrics of existing faces are fixed
                    let s = f.corner_slots[p - 3];
                    for k in 0..d {
                        out.features[s * d + k] += b[i] * gf[k];
                    }
                }
            }
            // opacity
            let x = self.opacity_logits[id.face];
            let alpha = sigmoid(x);
            out.opacity_logits[id.face] += gg.opacity
                * if id.node == 0 {
                    alpha * (1.0 - alpha)
                } else {
                    child_opacity_dlogit(alpha, self.beta)
                };
        }
        // edge points -> ratios, corner features, edge features
        for (fi, f) in self.faces.iter().enumerate() {
            let Some(e) = &eval.edge[fi] else { continue };
            let gfeat = &g_edge_feat[fi];
            let cb = f.corner_bary.map(|b| v3(&b));
            for j in 0..3 {
                let (ia, ib) = ((j + 2) % 3, (j + 1) % 3);
                let s = e.s[j];
                let mut gs = g_edge_bary[fi][j].dot(&(cb[ib] - cb[ia]));
                if !gfeat.is_empty() {
                    let (sa, sb, se) = (f.corner_slots[ia], f.corner_slots[ib], f.edge_slots[j]);
                    for k in 0..d {
                        let g = gfeat[j * d + k];
                        if g == 0.0 {
                            continue;
                        }
                        out.features[sa * d + k] += g * (1.0 - s);
                        out.features[sb * d + k] += g * s;
                        out.features[se * d + k] += g;
                        gs += g * (self.features[sb * d + k] - self.features[sa * d + k]);
                    }
                }
                out.ratio_logits[3 * fi + j] += gs * s * (1.0 - s);
            }
        }
        out
    }

    /// Structural consistency check; returns a description of the first problem.
    pub fn audit(&self) -> Result<(), String> {
        for (fi, f) in self.faces.iter().enumerate() {
            match (f.active, f.subfaces) {
                (true, Some(_)) => return Err(format!("face {fi} is active but subdivided")),
                (false, None) => return Err(format!("face {fi} is inactive without subfaces")),
                _ => {}
            }
            if let Some(subs) = f.subfaces {
                for (ch, &s) in subs.iter().enumerate() {
                    let sf = self.faces.get(s).ok_or(format!("face {fi} links missing {s}"))?;
                    if sf.parent != Some((fi, ch)) {
                        return Err(format!("face {s} does not link back to {fi}"));
                    }
                    if sf.depth != f.depth + 1 || sf.root_face != f.root_face {
                        return Err(format!("face {s} has inconsistent depth or root"));
                    }
                }
            }
            if let Some((p, ch)) = f.parent {
                let pf = &self.faces[p];
                if pf.subfaces.map(|s| s[ch]) != Some(fi) {
                    return Err(format!("face {fi} claims parent {p} which does not list it"));
                }
            } else if f.depth != 0 {
                return Err(format!("face {fi} at depth {} has no parent", f.depth));
            }
            for b in &f.corner_bary {
                if b.iter().any(|x| *x < -1e-12) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(format!("face {fi} has an invalid corner barycentric"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
