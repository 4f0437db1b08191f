use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{obj, Mesh, Vec3};
use crate::render::io::{read_float_map, read_png, write_float_map, write_png};
use crate::render::{Camera, Image};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub camera: Camera,
    pub rgb: Image,
    /// Pixel motion since the previous frame; absent on the first frame.
    pub flow: Option<Image>,
    /// Camera-space normals facing the viewer.
    pub normal: Option<Image>,
    /// Foreground coverage in [0, 1].
    pub mask: Option<Image>,
}

/// An extra camera observing one training timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TestView {
    pub name: String,
    pub frame: usize,
    pub camera: Camera,
    pub rgb: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub scenario: String,
    pub static_camera: bool,
    pub background: Vec3,
    pub frames: Vec<Frame>,
    pub test_views: Vec<TestView>,
    /// Per-frame coarse meshes standing in for reconstruction priors.
    pub prior_meshes: Vec<Mesh>,
    /// Clean per-frame meshes, used only for evaluation.
    pub gt_meshes: Vec<Mesh>,
    pub canonical_index: usize,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    time: f64,
    camera: Camera,
    rgb: PathBuf,
    flow: Option<PathBuf>,
    normal: Option<PathBuf>,
    mask: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct TestRecord {
    name: String,
    frame: usize,
    camera: Camera,
    rgb: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    scenario: String,
    static_camera: bool,
    background: Vec3,
    canonical_index: usize,
    frames: Vec<FrameRecord>,
    test_views: Vec<TestRecord>,
    prior_meshes: Vec<PathBuf>,
    gt_meshes: Vec<PathBuf>,
}

pub const MANIFEST: &str = "dataset.json";

fn save_opt(dir: &Path, rel: String, img: &Option<Image>) -> Result<Option<PathBuf>> {
    match img {
        Some(im) => {
            write_float_map(&dir.join(&rel), im)?;
            Ok(Some(rel.into()))
        }
        None => Ok(None),
    }
}

fn load_opt(dir: &Path, rel: &Option<PathBuf>) -> Result<Option<Image>> {
    rel.as_ref().map(|r| read_float_map(&dir.join(r))).transpose()
}

impl FrameDataset {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.frames[0].camera.width, self.frames[0].camera.height)
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or(Error::Empty("dataset frames"))?;
        let (w, h) = (first.rgb.width, first.rgb.height);
        for (i, f) in self.frames.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.time) {
                return Err(Error::Config(format!("frame {i} timestamp {} outside [0, 1]", f.time)));
            }
            if i > 0 && f.time <= self.frames[i - 1].time {
                return Err(Error::Config(format!("frame {i} timestamp is not increasing")));
            }
            let imgs = [Some(&f.rgb), f.flow.as_ref(), f.normal.as_ref(), f.mask.as_ref()];
            for im in imgs.into_iter().flatten() {
                if im.width != w || im.height != h || f.camera.width != w || f.camera.height != h {
                    return Err(Error::Config(format!("frame {i} resolution differs from frame 0")));
                }
            }
        }
        for v in &self.test_views {
            if v.frame >= self.frames.len() {
                return Err(Error::Config(format!("test view `{}` points past the last frame", v.name)));
            }
        }
        if !self.prior_meshes.is_empty() && self.prior_meshes.len() != self.frames.len() {
            return Err(Error::SizeMismatch {
                expected: self.frames.len(),
                actual: self.prior_meshes.len(),
            });
        }
        if !self.gt_meshes.is_empty() && self.gt_meshes.len() != self.frames.len() {
            return Err(Error::SizeMismatch {
                expected: self.frames.len(),
                actual: self.gt_meshes.len(),
            });
        }
        if self.canonical_index >= self.frames.len() {
            return Err(Error::Config("canonical index out of range".into()));
        }
        Ok(())
    }

    /// Writes images as PNG, auxiliary maps as float maps, meshes as OBJ and
    /// everything else into `dataset.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        for sub in ["rgb", "flow", "normal", "mask", "test", "prior", "gt"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let mut frames = Vec::new();
        for (i, f) in self.frames.iter().enumerate() {
            let rgb = PathBuf::from(format!("rgb/{i:04}.png"));
            write_png(&dir.join(&rgb), &f.rgb)?;
            frames.push(FrameRecord {
                time: f.time,
                camera: f.camera,
                rgb,
                flow: save_opt(dir, format!("flow/{i:04}.tgfm"), &f.flow)?,
                normal: save_opt(dir, format!("normal/{i:04}.tgfm"), &f.normal)?,
                mask: save_opt(dir, format!("mask/{i:04}.tgfm"), &f.mask)?,
            });
        }
        let mut test_views = Vec::new();
        for v in &self.test_views {
            let rgb = PathBuf::from(format!("test/{}_{:04}.png", v.name, v.frame));
            write_png(&dir.join(&rgb), &v.rgb)?;
            test_views.push(TestRecord {
                name: v.name.clone(),
                frame: v.frame,
                camera: v.camera,
                rgb,
            });
        }
        let write_meshes = |kind: &str, meshes: &[Mesh]| -> Result<Vec<PathBuf>> {
            meshes
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let rel = PathBuf::from(format!("{kind}/{i:04}.obj"));
                    obj::write(dir.join(&rel), m)?;
                    Ok(rel)
                })
                .collect()
        };
        let manifest = Manifest {
            scenario: self.scenario.clone(),
            static_camera: self.static_camera,
            background: self.background,
            canonical_index: self.canonical_index,
            frames,
            test_views,
            prior_meshes: write_meshes("prior", &self.prior_meshes)?,
            gt_meshes: write_meshes("gt", &self.gt_meshes)?,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        let frames = manifest
            .frames
            .iter()
            .map(|r| {
                Ok(Frame {
                    time: r.time,
                    camera: r.camera,
                    rgb: read_png(&dir.join(&r.rgb))?,
                    flow: load_opt(dir, &r.flow)?,
                    normal: load_opt(dir, &r.normal)?,
                    mask: load_opt(dir, &r.mask)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let test_views = manifest
            .test_views
            .iter()
            .map(|r| {
                Ok(TestView {
                    name: r.name.clone(),
                    frame: r.frame,
                    camera: r.camera,
                    rgb: read_png(&dir.join(&r.rgb))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let read_meshes =
            |paths: &[PathBuf]| -> Result<Vec<Mesh>> { paths.iter().map(|p| obj::read(dir.join(p))).collect() };
        let ds = FrameDataset {
            scenario: manifest.scenario,
            static_camera: manifest.static_camera,
            background: manifest.background,
            frames,
            test_views,
            prior_meshes: read_meshes(&manifest.prior_meshes)?,
            gt_meshes: read_meshes(&manifest.gt_meshes)?,
            canonical_index: manifest.canonical_index,
        };
        ds.validate()?;
        Ok(ds)
    }
}
