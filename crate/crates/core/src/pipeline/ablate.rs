use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::dataset::FrameDataset;
use super::eval::{evaluate, MetricRow, Split};
use super::stage1::Stage1Checkpoint;
use super::stage2::run_stage2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationFlag {
    /// Unconstrained normal offsets.
    Offset,
    /// Children are never deactivated.
    Pruning,
    /// Free scales not tied to the face size.
    Scale,
}

impl std::str::FromStr for AblationFlag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offset" => Ok(AblationFlag::Offset),
            "pruning" => Ok(AblationFlag::Pruning),
            "scale" => Ok(AblationFlag::Scale),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

impl AblationFlag {
    pub fn name(self) -> &'static str {
        match self {
            AblationFlag::Offset => "offset",
            AblationFlag::Pruning => "pruning",
            AblationFlag::Scale => "scale",
        }
    }

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        match self {
            AblationFlag::Offset => c.decoder.offset_constraint = false,
            AblationFlag::Pruning => c.stage2.population.prune = false,
            AblationFlag::Scale => c.decoder.scale_constraint = false,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub flag: String,
    pub variant: String,
    pub train_psnr: f64,
    /// Mean over held-out cameras.
    pub test_psnr: f64,
    pub chamfer_e3: f64,
    pub gaussians: usize,
}

fn row(flag: AblationFlag, variant: &str, train: &[MetricRow], test: &[MetricRow], gaussians: usize) -> AblationRow {
    AblationRow {
        flag: flag.name().into(),
        variant: variant.into(),
        train_psnr: train[0].psnr,
        test_psnr: test.iter().map(|r| r.psnr).sum::<f64>() / test.len().max(1) as f64,
        chamfer_e3: train[0].chamfer_e3,
        gaussians,
    }
}

/// Two stage-two runs from the same stage-one fit and seed, differing only
/// in `flag`. Returns the baseline row, then the ablated row.
pub fn run_ablation(
    ds: &FrameDataset,
    stage1: &Stage1Checkpoint,
    cfg: &TrainConfig,
    flag: AblationFlag,
) -> Result<[AblationRow; 2]> {
    let mut rows = Vec::with_capacity(2);
    for (variant, c) in [("baseline", cfg.clone()), ("ablated", flag.apply(cfg))] {
        let out = run_stage2(ds, stage1, &c, None)?;
        let train = evaluate(&out.model, ds, Split::Train, &c.render, None)?;
        let test = if ds.test_views.is_empty() {
            Vec::new()
        } else {
            evaluate(&out.model, ds, Split::Test, &c.render, None)?
        };
        rows.push(row(flag, variant, &train, &test, out.model.tree.num_active_gaussians()));
    }
    let ablated = rows.pop().expect("two runs");
    let baseline = rows.pop().expect("two runs");
    Ok([baseline, ablated])
}
