//! The full network: shared backbone, detection head and recognizer, plus
//! image-to-tensor conversion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, FusedFeatures};
use crate::config::ModelConfig;
use crate::detection::{DetectionHead, DetectionMaps, STRIDE};
use crate::error::Result;
use crate::geometry::Quad;
use crate::params::{Ctx, ParamStore};
use crate::recognition::{RecognizerConfig, Recognizer};
use crate::roi::roi_align;
use crate::synth::Image;
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Debug, Clone)]
pub struct TextNet {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub head: DetectionHead,
    pub recognizer: Recognizer,
}

impl TextNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        let backbone = Backbone::new(store, config.backbone.clone(), rng);
        let head = DetectionHead::new(store, config.backbone.fused, rng);
        let rec_cfg = RecognizerConfig {
            in_channels: config.backbone.fused,
            ..config.recognizer.clone()
        };
        let recognizer = Recognizer::new(store, rec_cfg, config.vocab.clone(), rng);
        TextNet {
            config: config.clone(),
            backbone,
            head,
            recognizer,
        }
    }

    /// Fresh model and parameters from a seed.
    pub fn build<T: Scalar>(config: &ModelConfig, seed: u64) -> (Self, ParamStore<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = TextNet::new(&mut store, config, &mut rng);
        (net, store)
    }

    pub fn features<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, images: Var<'t, T>) -> Result<FusedFeatures<'t, T>> {
        self.backbone.forward(ctx, images)
    }

    pub fn detect<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, fused: Var<'t, T>) -> Result<DetectionMaps<'t, T>> {
        self.head.predict_maps(ctx, fused)
    }

    /// Rectified RoI features for `(image index, quad)` pairs, quads in
    /// input pixels.
    pub fn roi_features<'t, T: Scalar>(&self, fused: Var<'t, T>, rois: &[(usize, Quad)]) -> Result<Vec<Var<'t, T>>> {
        rois.iter()
            .map(|(b, q)| {
                roi_align(fused, *b, q, STRIDE as f64, self.config.h_t, self.config.w_max).map(|(v, _)| v)
            })
            .collect()
    }
}

/// Stacks same-sized images into `[N, H, W, 3]`, centred on zero.
pub fn images_to_tensor<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.h, i.w));
    if images.iter().any(|i| i.h != h || i.w != w) {
        return Err(crate::Error::Invalid("images in a batch must share one size".into()));
    }
    let data = images
        .iter()
        .flat_map(|i| i.data.iter().map(|&v| T::from_f64(v as f64 - 0.5)))
        .collect();
    Tensor::new(vec![images.len(), h, w, 3], data)
}

/// Pads right and bottom to multiples of 32 with the image mean.
pub fn pad_to_multiple(img: &Image, multiple: usize) -> Image {
    let h = img.h.div_ceil(multiple) * multiple;
    let w = img.w.div_ceil(multiple) * multiple;
    if (h, w) == (img.h, img.w) {
        return img.clone();
    }
    let mut out = Image::filled(h, w, img.mean());
    for y in 0..img.h {
        for x in 0..img.w {
            out.set_pixel(x, y, img.pixel(x, y));
        }
    }
    out
}
