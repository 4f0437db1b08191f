mod chamfer;
mod stage2;

pub use chamfer::{robust_chamfer, robust_chamfer_grad, ChamferTerms};
pub use stage2::{
    alpha_loss, alpha_mask, flow_loss, l1_loss, normal_loss, photometric_loss, stage2_total, Stage2Terms,
    Stage2Weights,
};
