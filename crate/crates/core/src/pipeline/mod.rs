//! Dataset synthesis, both training stages, evaluation and the file layout
//! of a run directory.

pub mod ablate;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod stage1;
pub mod stage2;
pub mod synth;

use std::path::Path;

pub use ablate::{run_ablation, AblationFlag, AblationRow};
pub use config::{CameraMode, TrainConfig};
pub use dataset::{Frame, FrameDataset, TestView};
pub use eval::{evaluate, render_path, MetricRow, Split};
pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
pub use model::{step_loss, Model};
pub use stage1::{run_stage1, write_stage1, Stage1Checkpoint, Stage1Outcome, Stage1Summary, STAGE1_CHECKPOINT};
pub use stage2::{run_stage2, write_stage2, Snapshot, Stage2Outcome, Stage2Record, STAGE2_CHECKPOINT};
pub use synth::{synthesize, Scenario};

use crate::error::Result;

pub const METRICS: &str = "metrics.csv";
pub const RESOLVED_CONFIG: &str = "config.resolved";

pub fn write_resolved_config(run_dir: &Path, cfg: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    Ok(())
}

/// Loads the dataset in `data_dir`, synthesizing it first if absent.
pub fn ensure_dataset(data_dir: &Path, cfg: &TrainConfig) -> Result<FrameDataset> {
    if !data_dir.join(dataset::MANIFEST).exists() {
        synthesize(&cfg.synth, cfg.seed)?.save(data_dir)?;
    }
    FrameDataset::load(data_dir)
}

pub struct PipelineResult {
    pub stage1: Stage1Summary,
    pub snapshots: Vec<Snapshot>,
    pub metrics: Vec<MetricRow>,
    pub gaussians: usize,
}

/// Synthesis (if needed), both stages and train/test evaluation, writing
/// every artifact under `run_dir`.
pub fn run_pipeline(data_dir: &Path, run_dir: &Path, cfg: &TrainConfig) -> Result<PipelineResult> {
    write_resolved_config(run_dir, cfg)?;
    let ds = ensure_dataset(data_dir, cfg)?;
    let s1 = run_stage1(&ds, cfg)?;
    write_stage1(run_dir, &s1)?;
    let s2 = run_stage2(&ds, &s1.checkpoint, cfg, Some(&run_dir.join("renders")))?;
    write_stage2(run_dir, &s2)?;
    let mut metrics = evaluate(&s2.model, &ds, Split::Train, &cfg.render, Some(&run_dir.join("renders/eval_train.png")))?;
    if !ds.test_views.is_empty() {
        metrics.extend(evaluate(&s2.model, &ds, Split::Test, &cfg.render, Some(&run_dir.join("renders/eval_test.png")))?);
    }
    io::write_csv(&run_dir.join(METRICS), &metrics)?;
    Ok(PipelineResult {
        stage1: s1.summary,
        snapshots: s2.snapshots,
        metrics,
        gaussians: s2.model.tree.num_active_gaussians(),
    })
}
