use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::FrameDataset;
use super::io::{write_csv, write_json};
use crate::deform::{stage1_fit, DeformationField, Stage1Record};
use crate::error::{Error, Result};
use crate::losses::robust_chamfer;
use crate::mesh::{obj, resize_to_face_count, rigid_icp, taubin_smooth, Mesh, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Checkpoint {
    pub canonical: Mesh,
    pub field: DeformationField,
    pub times: Vec<f64>,
    pub truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub initial_rcd: f64,
    pub final_rcd: f64,
    pub truncated_terms: usize,
    /// Mean plain Chamfer of the fitted meshes to the clean meshes (if known).
    pub chamfer_to_clean: Option<f64>,
    /// Mean plain Chamfer of the fitted meshes to the raw priors.
    pub chamfer_to_prior: f64,
}

pub struct Stage1Outcome {
    pub checkpoint: Stage1Checkpoint,
    pub summary: Stage1Summary,
    pub records: Vec<Stage1Record>,
    /// Preprocessed per-frame targets the field was fit to.
    pub targets: Vec<Vec<Vec3>>,
}

fn preprocess(mesh: &Mesh, cfg: &TrainConfig) -> Mesh {
    let p = &cfg.preprocess;
    let smooth = taubin_smooth(mesh, p.taubin_lambda, p.taubin_mu, p.taubin_iterations);
    resize_to_face_count(&smooth, p.target_faces)
}

/// Smooths and decimates every prior mesh, rigidly aligns each to the
/// canonical one, and returns the canonical mesh and per-frame targets.
/// Alignment uses only points within the Chamfer truncation distance of the
/// canonical mesh.
pub fn prepare_targets(ds: &FrameDataset, cfg: &TrainConfig) -> Result<(Mesh, Vec<Vec<Vec3>>)> {
    if ds.prior_meshes.is_empty() {
        return Err(Error::Empty("prior mesh sequence"));
    }
    let canonical = preprocess(&ds.prior_meshes[ds.canonical_index], cfg).without_colors();
    let inlier_radius = cfg.stage1.truncation_fraction * canonical.bbox_diagonal();
    let targets = ds
        .prior_meshes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let m = preprocess(m, cfg);
            if !cfg.preprocess.icp || i == ds.canonical_index {
                return Ok(m.vertices().to_vec());
            }
            // floaters would drag a plain point-to-point fit
            let inliers: Vec<Vec3> = m
                .vertices()
                .iter()
                .filter(|p| canonical.vertices().iter().any(|q| (*p - q).norm() < inlier_radius))
                .copied()
                .collect();
            if inliers.len() < 3 {
                return Ok(m.vertices().to_vec());
            }
            let (xf, _) = rigid_icp(&inliers, canonical.vertices(), cfg.preprocess.icp_iterations, 1e-10)?;
            Ok(m.vertices().iter().map(|p| xf.apply(p)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((canonical, targets))
}

fn mean_chamfer(field: &DeformationField, canonical: &Mesh, times: &[f64], meshes: &[Mesh]) -> Result<f64> {
    let mut acc = 0.0;
    for (t, m) in times.iter().zip(meshes) {
        let pos = field.deform(canonical.vertices(), *t)?;
        acc += robust_chamfer(&pos, m.vertices(), f64::INFINITY)?;
    }
    Ok(acc / times.len() as f64)
}

pub fn run_stage1(ds: &FrameDataset, cfg: &TrainConfig) -> Result<Stage1Outcome> {
    let (canonical, targets) = prepare_targets(ds, cfg)?;
    let times = ds.times();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut field = DeformationField::new(&canonical, &cfg.deform.levels, cfg.deform.field, &mut rng)?;
    let s1 = cfg.stage1.resolve(canonical.bbox_diagonal());
    let paired: Vec<(f64, Vec<Vec3>)> = times.iter().copied().zip(targets.iter().cloned()).collect();
    let report = stage1_fit(&mut field, &canonical, &paired, &s1)?;
    let chamfer_to_clean = if ds.gt_meshes.is_empty() {
        None
    } else {
        Some(mean_chamfer(&field, &canonical, &times, &ds.gt_meshes)?)
    };
    let summary = Stage1Summary {
        initial_rcd: report.initial_rcd,
        final_rcd: report.final_rcd,
        truncated_terms: report.records.iter().map(|r| r.truncated).sum(),
        chamfer_to_clean,
        chamfer_to_prior: mean_chamfer(&field, &canonical, &times, &ds.prior_meshes)?,
    };
    log::info!(
        "stage 1: robust Chamfer {:.4e} -> {:.4e}",
        summary.initial_rcd,
        summary.final_rcd
    );
    Ok(Stage1Outcome {
        checkpoint: Stage1Checkpoint {
            canonical,
            field,
            times,
            truncation: s1.truncation,
        },
        summary,
        records: report.records,
        targets,
    })
}

pub const STAGE1_CHECKPOINT: &str = "checkpoints/stage1.json";

/// Checkpoint, summary, loss trace and one fitted mesh per frame.
pub fn write_stage1(run_dir: &Path, out: &Stage1Outcome) -> Result<()> {
    write_json(&run_dir.join(STAGE1_CHECKPOINT), &out.checkpoint)?;
    write_json(&run_dir.join("stage1_summary.json"), &out.summary)?;
    write_csv(&run_dir.join("losses_stage1.csv"), &out.records)?;
    let dir = run_dir.join("meshes");
    std::fs::create_dir_all(&dir)?;
    let ck = &out.checkpoint;
    for (i, t) in ck.times.iter().enumerate() {
        let m = ck.canonical.with_positions(ck.field.deform(ck.canonical.vertices(), *t)?)?;
        obj::write(dir.join(format!("stage1_{i:04}.obj")), &m)?;
    }
    Ok(())
}
