use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::FrameDataset;
use super::io::{write_csv, write_json};
use super::model::{step_loss, Model, ModelGrad, StepTarget};
use super::stage1::Stage1Checkpoint;
use crate::decode::Decoders;
use crate::deform::FieldOptimizer;
use crate::error::{Error, Result};
use crate::losses::Stage2Weights;
use crate::nn::{Adam, LrSchedule};
use crate::quadtree::{is_control_step, QuadTree};
use crate::render::io::write_png;
use crate::render::{psnr, RenderSettings};

/// Per-step trace row. Loss columns are unweighted; `total` is the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Record {
    pub step: usize,
    pub frame: usize,
    pub l1: f64,
    pub ssim: f64,
    pub edge: f64,
    pub lap: f64,
    pub alpha: f64,
    pub normal: f64,
    pub flow: f64,
    pub total: f64,
    pub psnr: f64,
    pub gaussians: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    /// Mean PSNR over every training frame seen from its own camera.
    pub train_psnr: f64,
    pub gaussians: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub step: usize,
    pub subdivided: usize,
    pub deactivated_children: usize,
    pub skipped_at_max_depth: usize,
    pub gaussians_after: usize,
}

pub struct Stage2Outcome {
    pub model: Model,
    pub records: Vec<Stage2Record>,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<ControlEvent>,
}

/// Loss weights actually applied: normal supervision only for a static camera.
pub fn effective_weights(ds: &FrameDataset, cfg: &TrainConfig) -> Stage2Weights {
    let mut w = cfg.stage2.weights;
    if !ds.static_camera {
        w.normal = 0.0;
    }
    w
}

pub fn init_model(stage1: &Stage1Checkpoint, cfg: &TrainConfig) -> Result<Model> {
    let s = &cfg.stage2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let tree = QuadTree::new(&stage1.canonical, s.feature_dim, s.beta, s.max_depth, s.initial_opacity);
    let decoders = Decoders::new(s.feature_dim, stage1.field.num_control_points(), cfg.decoder.clone(), &mut rng);
    let model = Model {
        canonical: stage1.canonical.clone(),
        field: stage1.field.clone(),
        tree,
        decoders,
    };
    model.check()?;
    Ok(model)
}

struct Optimizers {
    features: Adam,
    ratios: Adam,
    r: Adam,
    c: Adam,
    opacity: Adam,
    qs: Adam,
    color: Adam,
    offset: Adam,
    pose: Adam,
    field: FieldOptimizer,
}

impl Optimizers {
    fn new(cfg: &TrainConfig, control_points: usize) -> Self {
        let s = &cfg.stage2;
        let mlp = LrSchedule::Exponential {
            start: s.mlp_lr_start,
            end: s.mlp_lr_end,
            total: s.steps,
        };
        let feat = Adam::new(LrSchedule::Constant(s.feature_lr));
        Optimizers {
            features: feat.clone(),
            ratios: feat.clone(),
            r: feat.clone(),
            c: feat,
            opacity: Adam::new(LrSchedule::Constant(s.opacity_lr)),
            qs: Adam::new(mlp),
            color: Adam::new(mlp),
            offset: Adam::new(mlp),
            pose: Adam::new(mlp),
            field: FieldOptimizer::new(control_points, mlp, s.control_logit_lr),
        }
    }

    fn step(&mut self, m: &mut Model, g: &ModelGrad, step: usize, deform: bool) {
        self.features.step(&mut m.tree.features, &g.tree.features, step);
        self.ratios.step(&mut m.tree.ratio_logits, &g.tree.ratio_logits, step);
        self.r.step(&mut m.tree.r_logits, &g.tree.r_logits, step);
        self.c.step(&mut m.tree.c_logits, &g.tree.c_logits, step);
        self.opacity.step(&mut m.tree.opacity_logits, &g.tree.opacity_logits, step);
        self.qs.step(m.decoders.qs.params_mut(), &g.decoders.qs, step);
        self.color.step(m.decoders.color.params_mut(), &g.decoders.color, step);
        self.offset.step(m.decoders.offset.params_mut(), &g.decoders.offset, step);
        self.pose.step(m.decoders.pose.mlp.params_mut(), &g.decoders.pose, step);
        if deform {
            self.field.step(&mut m.field, &g.field, step);
        }
    }
}

/// Mean PSNR over all training frames, each rendered from its own camera.
pub fn train_psnr(model: &Model, ds: &FrameDataset, settings: &RenderSettings) -> Result<f64> {
    let mut acc = 0.0;
    for (i, f) in ds.frames.iter().enumerate() {
        let j = i.saturating_sub(1);
        let out = model.render(&f.camera, &ds.frames[j].camera, f.time, ds.frames[j].time, settings)?;
        acc += psnr(&out.rgb, &f.rgb)?;
    }
    Ok(acc / ds.frames.len() as f64)
}

/// Joint appearance and motion optimization starting from a stage-one fit.
/// Snapshot renders of frame 0 go to `snapshot_dir` when given.
pub fn run_stage2(
    ds: &FrameDataset,
    stage1: &Stage1Checkpoint,
    cfg: &TrainConfig,
    snapshot_dir: Option<&Path>,
) -> Result<Stage2Outcome> {
    if stage1.times.len() != ds.num_frames() {
        return Err(Error::CheckpointMismatch(format!(
            "stage-one checkpoint covers {} frames, dataset has {}",
            stage1.times.len(),
            ds.num_frames()
        )));
    }
    let s = &cfg.stage2;
    let mut model = init_model(stage1, cfg)?;
    let weights = effective_weights(ds, cfg);
    let mut opt = Optimizers::new(cfg, model.field.num_control_points());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut records = Vec::with_capacity(s.steps);
    let mut snapshots = Vec::new();
    let mut events = Vec::new();
    if let Some(d) = snapshot_dir {
        std::fs::create_dir_all(d)?;
    }
    let snapshot = |model: &Model, step: usize, snaps: &mut Vec<Snapshot>| -> Result<()> {
        let p = train_psnr(model, ds, &cfg.render)?;
        log::info!("stage 2 step {step}: train PSNR {p:.2} dB, {} Gaussians", model.tree.num_active_gaussians());
        snaps.push(Snapshot {
            step,
            train_psnr: p,
            gaussians: model.tree.num_active_gaussians(),
        });
        if let Some(d) = snapshot_dir {
            let f = &ds.frames[0];
            let out = model.render(&f.camera, &f.camera, f.time, f.time, &cfg.render)?;
            write_png(&d.join(format!("snapshot_{step:06}.png")), &out.rgb)?;
        }
        Ok(())
    };
    for step in 0..s.steps {
        let i = rng.random_range(0..ds.num_frames());
        let j = i.saturating_sub(1);
        let (f, fp) = (&ds.frames[i], &ds.frames[j]);
        let target = StepTarget {
            camera: &f.camera,
            prev_camera: &fp.camera,
            rgb: &f.rgb,
            flow: f.flow.as_ref(),
            normal: f.normal.as_ref(),
        };
        let sl = step_loss(&model, f.time, fp.time, &target, &weights, &cfg.render, s.mask_threshold)?;
        if !sl.total.is_finite() {
            return Err(Error::Degenerate(format!("non-finite loss at step {step}")));
        }
        records.push(Stage2Record {
            step,
            frame: i,
            l1: sl.terms.l1,
            ssim: sl.terms.ssim,
            edge: sl.terms.edge,
            lap: sl.terms.lap,
            alpha: sl.terms.alpha,
            normal: sl.terms.normal,
            flow: sl.terms.flow,
            total: sl.total,
            psnr: psnr(&sl.render.rgb, &f.rgb)?,
            gaussians: model.tree.num_active_gaussians(),
        });
        opt.step(&mut model, &sl.grad, step, s.optimize_deformation);
        model.tree.record_opacity_stats(s.population.deactivate_above);
        let done = step + 1;
        if is_control_step(done, s.steps, s.cadence, s.head, s.tail) {
            let rep = model.tree.population_control(&s.population);
            let ev = ControlEvent {
                step: done,
                subdivided: rep.subdivided,
                deactivated_children: rep.deactivated_children,
                skipped_at_max_depth: rep.skipped_at_max_depth,
                gaussians_after: model.tree.num_active_gaussians(),
            };
            log::info!("population control at {done}: {ev:?}");
            events.push(ev);
        }
        if done % s.snapshot_every == 0 || done == s.steps {
            snapshot(&model, done, &mut snapshots)?;
        }
    }
    Ok(Stage2Outcome {
        model,
        records,
        snapshots,
        events,
    })
}

pub const STAGE2_CHECKPOINT: &str = "checkpoints/stage2.json";

pub fn write_stage2(run_dir: &Path, out: &Stage2Outcome) -> Result<()> {
    write_json(&run_dir.join(STAGE2_CHECKPOINT), &out.model)?;
    write_csv(&run_dir.join("losses.csv"), &out.records)?;
    write_csv(&run_dir.join("snapshots.csv"), &out.snapshots)?;
    write_csv(&run_dir.join("control.csv"), &out.events)?;
    Ok(())
}
