use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::FrameDataset;
use super::model::Model;
use crate::error::{Error, Result};
use crate::losses::robust_chamfer;
use crate::render::io::write_png;
use crate::render::{psnr, ssim, Camera, Image, RenderSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub split: String,
    pub camera: String,
    pub views: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean symmetric Chamfer to the clean meshes, times 1000.
    pub chamfer_e3: f64,
}

/// Plain symmetric Chamfer between fitted vertices and clean vertices at one frame.
pub fn frame_chamfer(model: &Model, ds: &FrameDataset, frame: usize) -> Result<f64> {
    let gt = ds.gt_meshes.get(frame).ok_or(Error::Empty("clean mesh sequence"))?;
    let pos = model.field.deform(model.canonical.vertices(), ds.frames[frame].time)?;
    robust_chamfer(&pos, gt.vertices(), f64::INFINITY)
}

struct View<'a> {
    frame: usize,
    camera: &'a Camera,
    target: &'a Image,
}

fn score(
    model: &Model,
    ds: &FrameDataset,
    views: &[View],
    settings: &RenderSettings,
    grid: &mut Vec<(Image, Image)>,
) -> Result<(f64, f64, f64)> {
    let (mut p, mut s, mut c) = (0.0, 0.0, 0.0);
    for v in views {
        let j = v.frame.saturating_sub(1);
        let f = &ds.frames[v.frame];
        let out = model.render(v.camera, &ds.frames[j].camera, f.time, ds.frames[j].time, settings)?;
        p += psnr(&out.rgb, v.target)?;
        s += ssim(&out.rgb, v.target)?;
        c += frame_chamfer(model, ds, v.frame)?;
        if grid.len() < 6 {
            grid.push((v.target.clone(), out.rgb));
        }
    }
    let n = views.len() as f64;
    Ok((p / n, s / n, 1e3 * c / n))
}

/// Two-row image: targets on top, renders below.
fn grid_image(pairs: &[(Image, Image)]) -> Option<Image> {
    let (w, h) = (pairs.first()?.0.width, pairs.first()?.0.height);
    let mut g = Image::new(w * pairs.len(), 2 * h, 3);
    for (k, (a, b)) in pairs.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                g.pixel_mut(k * w + x, y).copy_from_slice(a.pixel(x, y));
                g.pixel_mut(k * w + x, h + y).copy_from_slice(b.pixel(x, y));
            }
        }
    }
    Some(g)
}

/// Metrics for one split. The training split yields one row; the test split
/// yields one row per held-out camera name. A comparison grid is written to
/// `grid_path` when given.
pub fn evaluate(
    model: &Model,
    ds: &FrameDataset,
    split: Split,
    settings: &RenderSettings,
    grid_path: Option<&Path>,
) -> Result<Vec<MetricRow>> {
    model.check()?;
    let mut groups: BTreeMap<String, Vec<View>> = BTreeMap::new();
    match split {
        Split::Train => {
            groups.insert(
                "train".into(),
                ds.frames
                    .iter()
                    .enumerate()
                    .map(|(i, f)| View {
                        frame: i,
                        camera: &f.camera,
                        target: &f.rgb,
                    })
                    .collect(),
            );
        }
        Split::Test => {
            for v in &ds.test_views {
                groups.entry(v.name.clone()).or_default().push(View {
                    frame: v.frame,
                    camera: &v.camera,
                    target: &v.rgb,
                });
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::Empty("evaluation views"));
    }
    let mut rows = Vec::new();
    let mut grid = Vec::new();
    for (name, views) in &groups {
        let (p, s, c) = score(model, ds, views, settings, &mut grid)?;
        rows.push(MetricRow {
            split: format!("{split:?}").to_lowercase(),
            camera: name.clone(),
            views: views.len(),
            psnr: p,
            ssim: s,
            chamfer_e3: c,
        });
    }
    if let (Some(path), Some(img)) = (grid_path, grid_image(&grid)) {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d)?;
        }
        write_png(path, &img)?;
    }
    Ok(rows)
}

/// Renders every `(camera, t)` pair; frames are named by camera then time index.
pub fn render_path(
    model: &Model,
    cameras: &[Camera],
    times: &[f64],
    settings: &RenderSettings,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (ci, cam) in cameras.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            let out = model.render(cam, cam, t, t, settings)?;
            let path = out_dir.join(format!("view{ci:03}_t{ti:04}.png"));
            write_png(&path, &out.rgb)?;
            written.push(path);
        }
    }
    Ok(written)
}
