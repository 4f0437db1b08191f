use serde::{Deserialize, Serialize};

use crate::decode::{DecoderGrad, Decoders, Surfel, SurfaceInput};
use crate::deform::{DeformState, DeformationField, FieldGrad};
use crate::error::{Error, Result};
use crate::losses::{alpha_loss, alpha_mask, flow_loss, normal_loss, photometric_loss, stage2_total, Stage2Terms, Stage2Weights};
use crate::mesh::{edge_length_loss_grad, laplacian_loss_grad, Mesh, Vec3};
use crate::quadtree::{QuadTree, TreeGrad};
use crate::render::{rasterize, rasterize_backward, Camera, Image, ImageGrads, RenderOutput, RenderSettings};

/// Everything stage two optimizes, plus the fixed canonical mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub canonical: Mesh,
    pub field: DeformationField,
    pub tree: QuadTree,
    pub decoders: Decoders,
}

/// Flattened `C_k + c_{k,t}` for the pose embedding.
pub fn pose_points(state: &DeformState) -> Vec<f64> {
    state
        .control_positions
        .iter()
        .zip(&state.motions)
        .flat_map(|(c, m)| {
            let p = c + m;
            [p.x, p.y, p.z]
        })
        .collect()
}

impl Model {
    pub fn check(&self) -> Result<()> {
        let n = self.canonical.num_vertices();
        for l in &self.field.control.logits {
            if l.len() != n {
                return Err(Error::CheckpointMismatch(format!(
                    "deformation field expects {} vertices, canonical mesh has {n}",
                    l.len()
                )));
            }
        }
        if self.tree.faces.iter().any(|f| f.root_face >= self.canonical.num_faces()) {
            return Err(Error::CheckpointMismatch("quad tree references a missing mesh face".into()));
        }
        Ok(())
    }

    pub fn surfels(&self, t: f64, t_prev: f64) -> Result<Vec<Surfel>> {
        let v = self.canonical.vertices();
        let state = self.field.forward(v, t)?;
        let prev = self.field.deform(v, t_prev)?;
        let pose = pose_points(&state);
        let ev = self.tree.evaluate();
        let (surfels, _) = self.decoders.build_surfels(
            &ev,
            SurfaceInput {
                mesh: &self.canonical,
                positions: &state.positions,
                prev_positions: &prev,
                pose_points: &pose,
            },
        )?;
        Ok(surfels)
    }

    pub fn render(
        &self,
        camera: &Camera,
        prev_camera: &Camera,
        t: f64,
        t_prev: f64,
        settings: &RenderSettings,
    ) -> Result<RenderOutput> {
        rasterize(&self.surfels(t, t_prev)?, camera, prev_camera, settings)
    }
}

/// Supervision for one training step.
#[derive(Debug, Clone, Copy)]
pub struct StepTarget<'a> {
    pub camera: &'a Camera,
    pub prev_camera: &'a Camera,
    pub rgb: &'a Image,
    pub flow: Option<&'a Image>,
    pub normal: Option<&'a Image>,
}

/// Pins pixels to a reference render so their values stop depending on the
/// parameters, and fixes the flow/normal validity mask.
#[derive(Debug, Clone, Copy)]
pub struct Freeze<'a> {
    pub pixels: &'a [bool],
    pub reference: &'a RenderOutput,
    pub mask: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct SurfaceGrad {
    pub tree: TreeGrad,
    pub decoders: DecoderGrad,
    pub positions: Vec<Vec3>,
    pub prev_positions: Vec<Vec3>,
    pub pose_points: Vec<f64>,
}

pub struct SurfaceLoss {
    /// Image and opacity terms; `edge` and `lap` are left at zero.
    pub terms: Stage2Terms,
    pub render: RenderOutput,
    pub grad: Option<SurfaceGrad>,
}

fn copy_pixel(dst: &mut Image, src: &Image, p: usize) {
    let c = dst.channels;
    dst.data[p * c..(p + 1) * c].copy_from_slice(&src.data[p * c..(p + 1) * c]);
}

fn zero_pixel(img: &mut Image, p: usize) {
    let c = img.channels;
    img.data[p * c..(p + 1) * c].fill(0.0);
}

fn scaled(mut img: Image, s: f64) -> Image {
    img.data.iter_mut().for_each(|v| *v *= s);
    img
}

/// Image-space and opacity losses of the decoded surface at given vertex
/// positions, with gradients back to the tree, decoders and geometry.
#[allow(clippy::too_many_arguments)]
pub fn surface_loss(
    tree: &QuadTree,
    decoders: &Decoders,
    mesh: &Mesh,
    positions: &[Vec3],
    prev_positions: &[Vec3],
    pose: &[f64],
    target: &StepTarget,
    weights: &Stage2Weights,
    settings: &RenderSettings,
    mask_threshold: f64,
    freeze: Option<&Freeze>,
    with_grad: bool,
) -> Result<SurfaceLoss> {
    let ev = tree.evaluate();
    let (surfels, cache) = decoders.build_surfels(
        &ev,
        SurfaceInput {
            mesh,
            positions,
            prev_positions,
            pose_points: pose,
        },
    )?;
    let mut out = rasterize(&surfels, target.camera, target.prev_camera, settings)?;
    if let Some(fz) = freeze {
        let r = fz.reference;
        for (p, _) in fz.pixels.iter().enumerate().filter(|(_, f)| **f) {
            copy_pixel(&mut out.rgb, &r.rgb, p);
            copy_pixel(&mut out.alpha, &r.alpha, p);
            copy_pixel(&mut out.normal, &r.normal, p);
            copy_pixel(&mut out.flow, &r.flow, p);
            copy_pixel(&mut out.depth, &r.depth, p);
        }
    }
    let own_mask;
    let mask: &[bool] = match freeze {
        Some(fz) => fz.mask,
        None => {
            own_mask = alpha_mask(&out.alpha, mask_threshold);
            &own_mask
        }
    };
    let mut terms = Stage2Terms::default();
    let ((l1, ssim), g_rgb) = photometric_loss(&out.rgb, target.rgb, weights.l1, weights.ssim)?;
    terms.l1 = l1;
    terms.ssim = ssim;
    let (w, h) = (out.rgb.width, out.rgb.height);
    let mut grads = ImageGrads::zeros(w, h);
    grads.rgb = g_rgb;
    if let Some(f) = target.flow.filter(|_| weights.flow > 0.0) {
        let (v, g) = flow_loss(&out.flow, f, mask)?;
        terms.flow = v;
        grads.flow = scaled(g, weights.flow);
    }
    if let Some(n) = target.normal.filter(|_| weights.normal > 0.0) {
        let (v, g) = normal_loss(&out.normal, n, mask)?;
        terms.normal = v;
        grads.normal = scaled(g, weights.normal);
    }
    let (alpha, g_alpha) = alpha_loss(tree);
    terms.alpha = alpha;
    if !with_grad {
        return Ok(SurfaceLoss {
            terms,
            render: out,
            grad: None,
        });
    }
    if let Some(fz) = freeze {
        for (p, _) in fz.pixels.iter().enumerate().filter(|(_, f)| **f) {
            for img in [&mut grads.rgb, &mut grads.alpha, &mut grads.depth, &mut grads.normal, &mut grads.flow] {
                zero_pixel(img, p);
            }
        }
    }
    let sg = rasterize_backward(&surfels, target.camera, target.prev_camera, settings, &out, &grads)?;
    let back = decoders.backward(&ev, &cache, &sg)?;
    let mut tg = tree.backward(&ev, &back.gaussians, &back.features);
    for (g, a) in tg.opacity_logits.iter_mut().zip(&g_alpha) {
        *g += weights.alpha * a;
    }
    Ok(SurfaceLoss {
        terms,
        render: out,
        grad: Some(SurfaceGrad {
            tree: tg,
            decoders: back.params,
            positions: back.positions,
            prev_positions: back.prev_positions,
            pose_points: back.pose_points,
        }),
    })
}

#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub tree: TreeGrad,
    pub decoders: DecoderGrad,
    pub field: FieldGrad,
}

pub struct StepLoss {
    pub terms: Stage2Terms,
    pub total: f64,
    pub render: RenderOutput,
    pub grad: ModelGrad,
}

/// Full stage-two objective for one frame and its gradient for every group.
pub fn step_loss(
    model: &Model,
    t: f64,
    t_prev: f64,
    target: &StepTarget,
    weights: &Stage2Weights,
    settings: &RenderSettings,
    mask_threshold: f64,
) -> Result<StepLoss> {
    let v = model.canonical.vertices();
    let state = model.field.forward(v, t)?;
    let prev = model.field.forward(v, t_prev)?;
    let pose = pose_points(&state);
    let surf = surface_loss(
        &model.tree,
        &model.decoders,
        &model.canonical,
        &state.positions,
        &prev.positions,
        &pose,
        target,
        weights,
        settings,
        mask_threshold,
        None,
        true,
    )?;
    let sg = surf.grad.expect("gradient requested");
    let mut terms = surf.terms;
    let (edge, g_edge) = edge_length_loss_grad(&model.canonical, &state.positions)?;
    let (lap, g_lap) = laplacian_loss_grad(&state.positions, model.canonical.neighbors())?;
    terms.edge = edge;
    terms.lap = lap;
    let g_pos: Vec<Vec3> = (0..v.len())
        .map(|i| sg.positions[i] + g_edge[i] * weights.edge + g_lap[i] * weights.lap)
        .collect();
    let g_controls: Vec<Vec3> = sg
        .pose_points
        .chunks(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    let mut fg = model.field.backward(v, &state, &g_pos, Some(&g_controls))?;
    fg.add(&model.field.backward(v, &prev, &sg.prev_positions, None)?);
    Ok(StepLoss {
        total: stage2_total(&terms, weights),
        terms,
        render: surf.render,
        grad: ModelGrad {
            tree: sg.tree,
            decoders: sg.decoders,
            field: fg,
        },
    })
}
