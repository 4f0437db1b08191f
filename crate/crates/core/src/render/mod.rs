//! Differentiable CPU splatting of planar Gaussians, image metrics and image IO.

mod camera;
mod image;
pub mod io;
pub mod metrics;
mod raster;

pub use self::image::Image;
pub use camera::Camera;
pub use metrics::{psnr, ssim, ssim_with_grad};
pub use raster::{
    rasterize, rasterize_backward, to_camera_space, CameraSurfel, Hit, ImageGrads, RenderOutput, RenderSettings,
    CUTOFF_RHO, GUARD_BAND,
};
