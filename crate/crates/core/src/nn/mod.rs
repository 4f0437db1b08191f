//! Small fully connected networks with hand-written backpropagation, sinusoidal
//! encodings and an Adam optimizer with per-group learning-rate schedules.

mod adam;
mod encoding;
mod mlp;

pub use adam::{Adam, LrSchedule};
pub use encoding::{encode, encode_backward, encoded_dim, PoseCache, PoseEmbedding};
pub use mlp::{sigmoid, Activation, Mlp, MlpCache};
