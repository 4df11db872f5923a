//! TextNet: end-to-end irregular scene-text reading on a small autodiff
//! engine. Detection of quadrangles, perspective RoI alignment and
//! attention-based recognition share one fused feature map.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod detection;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod infer;
pub mod model;
pub mod optim;
pub mod params;
pub mod recognition;
pub mod roi;
pub mod synth;
pub mod tensor;
pub mod train;

pub use config::{RunConfig, Stage};
pub use error::{Error, Result};
pub use eval::{edit_distance, end_to_end_score, match_detections, EvalReport};
pub use geometry::{nms_quads, polygon_iou, Point, Quad};
pub use infer::{infer, Detection};
pub use model::TextNet;
pub use roi::{perspective_sample, roi_width, solve_homography, Homography};
pub use tensor::{Scalar, Tape, Tensor, Var};
pub use train::{total_loss, Trainer};
