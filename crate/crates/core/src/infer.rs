//! Full-image inference: score and geometry maps, quad decoding, NMS,
//! rectification and greedy transcription.

use crate::config::{InferConfig, RunConfig};
use crate::detection::{decode_quads, MapValues};
use crate::error::Result;
use crate::geometry::{nms_quads, Quad};
use crate::model::{images_to_tensor, pad_to_multiple, TextNet};
use crate::params::{Ctx, ParamStore};
use crate::recognition::AttentionTrace;
use crate::roi::{roi_width, solve_homography, to_feature_coords};
use crate::synth::Image;
use crate::tensor::Tape;
use crate::detection::STRIDE;

/// One read word.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub quad: Quad,
    pub text: String,
    pub score: f64,
    pub trace: AttentionTrace,
}

/// Detects and reads every word of `image`, highest score first. The image
/// is mean-padded to a multiple of 32; quads are in its original pixels.
pub fn infer(net: &TextNet, store: &ParamStore<f32>, image: &Image, cfg: &InferConfig, nd: f64) -> Result<Vec<Detection>> {
    let padded = pad_to_multiple(image, 32);
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, store);
    let x = tape.constant(images_to_tensor(&[&padded])?);
    let fused = net.features(&ctx, x)?;
    let maps = net.detect(&ctx, fused.map)?;
    let values = MapValues::from_maps(&maps.score.value(), &maps.geometry.value(), 0)?;
    let mut kept = nms_quads(&decode_quads(&values, cfg.score_thresh, nd), cfg.nms_thresh);
    let h_t = net.config.h_t;
    kept.retain(|q| {
        let fq = to_feature_coords(q, STRIDE as f64);
        solve_homography(&fq, roi_width(&fq, h_t, net.config.w_max), h_t).is_ok()
    });
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    if kept.is_empty() {
        return Ok(Vec::new());
    }
    let pairs: Vec<_> = kept.iter().map(|q| (0, *q)).collect();
    let feats = net.roi_features(fused.map, &pairs)?;
    let enc = net.recognizer.encode(&ctx, &feats)?;
    let decoded = net.recognizer.greedy_decode(&ctx, &enc, cfg.max_steps)?;
    Ok(kept
        .into_iter()
        .zip(decoded)
        .map(|(quad, d)| Detection {
            quad,
            text: d.text,
            score: quad.score,
            trace: d.trace,
        })
        .collect())
}

/// [`infer`] with the settings of a run configuration.
pub fn infer_with(net: &TextNet, store: &ParamStore<f32>, image: &Image, cfg: &RunConfig) -> Result<Vec<Detection>> {
    infer(net, store, image, &cfg.infer, cfg.loss.nd)
}
