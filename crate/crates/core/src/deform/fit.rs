use serde::{Deserialize, Serialize};

use super::{DeformationField, FieldGrad};
use crate::error::{Error, Result};
use crate::losses::robust_chamfer_grad;
use crate::mesh::{laplacian_loss_grad, normal_consistency_loss_grad, Mesh, Vec3};
use crate::nn::{Adam, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub steps: usize,
    pub w_rcd: f64,
    pub w_lap: f64,
    pub w_n: f64,
    /// Robust Chamfer truncation distance `d`.
    pub truncation: f64,
    pub mlp_lr_start: f64,
    pub mlp_lr_end: f64,
    pub logit_lr: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            steps: 20000,
            w_rcd: 1.0,
            w_lap: 0.5,
            w_n: 0.001,
            truncation: 0.05,
            mlp_lr_start: 1e-3,
            mlp_lr_end: 1e-5,
            logit_lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Record {
    pub step: usize,
    pub frame: usize,
    pub rcd: f64,
    pub lap: f64,
    pub normal: f64,
    pub total: f64,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Report {
    pub records: Vec<Stage1Record>,
    pub initial_rcd: f64,
    pub final_rcd: f64,
}

/// Optimizer state for every parameter group of a deformation field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldOptimizer {
    logits: Vec<Adam>,
    weight: Vec<Adam>,
    motion: Vec<Adam>,
}

impl FieldOptimizer {
    pub fn new(k: usize, mlp: LrSchedule, logit_lr: f64) -> Self {
        FieldOptimizer {
            logits: vec![Adam::new(LrSchedule::Constant(logit_lr)); k],
            weight: vec![Adam::new(mlp); k],
            motion: vec![Adam::new(mlp); k],
        }
    }

    pub fn step(&mut self, field: &mut DeformationField, grad: &FieldGrad, step: usize) {
        for k in 0..field.num_control_points() {
            self.logits[k].step(&mut field.control.logits[k], &grad.logits[k], step);
            self.weight[k].step(field.weight_mlps[k].params_mut(), &grad.weight[k], step);
            self.motion[k].step(field.motion_mlps[k].params_mut(), &grad.motion[k], step);
        }
    }
}

/// Stage-one objective on one frame: weighted Laplacian, normal consistency and
/// robust Chamfer, with the gradient on the deformed positions.
pub fn stage1_loss(
    canonical: &Mesh,
    positions: &[Vec3],
    target: &[Vec3],
    cfg: &Stage1Config,
) -> Result<(Stage1Record, Vec<Vec3>)> {
    let (rcd, g_rcd) = robust_chamfer_grad(positions, target, cfg.truncation)?;
    let (lap, g_lap) = laplacian_loss_grad(positions, canonical.neighbors())?;
    let (normal, g_n) = normal_consistency_loss_grad(positions, canonical);
    let grad = (0..positions.len())
        .map(|i| g_rcd[i] * cfg.w_rcd + g_lap[i] * cfg.w_lap + g_n[i] * cfg.w_n)
        .collect();
    let total = cfg.w_rcd * rcd.value + cfg.w_lap * lap + cfg.w_n * normal;
    Ok((
        Stage1Record {
            step: 0,
            frame: 0,
            rcd: rcd.value,
            lap,
            normal,
            total,
            truncated: rcd.truncated,
        },
        grad,
    ))
}

fn mean_rcd(field: &DeformationField, canonical: &Mesh, targets: &[(f64, Vec<Vec3>)], d: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (t, target) in targets {
        let pos = field.deform(canonical.vertices(), *t)?;
        acc += robust_chamfer_grad(&pos, target, d)?.0.value;
    }
    Ok(acc / targets.len() as f64)
}

/// Sequential fit: one optimizer step per frame, frames visited in temporal
/// order each epoch, until `cfg.steps` steps have been taken.
pub fn stage1_fit(
    field: &mut DeformationField,
    canonical: &Mesh,
    targets: &[(f64, Vec<Vec3>)],
    cfg: &Stage1Config,
) -> Result<Stage1Report> {
    if targets.is_empty() {
        return Err(Error::Empty("stage-one target sequence"));
    }
    let schedule = LrSchedule::Exponential {
        start: cfg.mlp_lr_start,
        end: cfg.mlp_lr_end,
        total: cfg.steps,
    };
    let mut opt = FieldOptimizer::new(field.num_control_points(), schedule, cfg.logit_lr);
    let initial_rcd = mean_rcd(field, canonical, targets, cfg.truncation)?;
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let frame = step % targets.len();
        let (t, target) = &targets[frame];
        let state = field.forward(canonical.vertices(), *t)?;
        let (mut rec, grad_pos) = stage1_loss(canonical, &state.positions, target, cfg)?;
        let grad = field.backward(canonical.vertices(), &state, &grad_pos, None)?;
        opt.step(field, &grad, step);
        rec.step = step;
        rec.frame = frame;
        if step % 500 == 0 {
            log::debug!("stage1 step {step}: rcd {:.3e} total {:.3e}", rec.rcd, rec.total);
        }
        records.push(rec);
    }
    let final_rcd = mean_rcd(field, canonical, targets, cfg.truncation)?;
    Ok(Stage1Report {
        records,
        initial_rcd,
        final_rcd,
    })
}
