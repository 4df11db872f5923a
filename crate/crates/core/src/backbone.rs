//! Four-level convolutional pyramid and scale-attention fusion into the
//! shared stride-4 feature map.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Conv, ConvBnRelu, Ctx, ParamStore};
use crate::tensor::{concat, scale_fuse, softmax, upsample_bilinear, Scalar, Var};

/// Strides of the pyramid levels relative to the input image.
pub const LEVEL_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Channel width of each pyramid level.
    pub widths: [usize; 4],
    /// Hidden width of each 3×3 conv-block.
    pub block_mid: usize,
    /// Channels of the fused map.
    pub fused: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            widths: [32, 64, 96, 128],
            block_mid: 64,
            fused: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    stages: Vec<[ConvBnRelu; 2]>,
    blocks: Vec<[ConvBnRelu; 2]>,
    fuse: Conv,
}

/// Feature maps at strides 4, 8, 16 and 32.
#[derive(Debug, Clone, Copy)]
pub struct Pyramid<'t, T> {
    pub levels: [Var<'t, T>; 4],
}

/// Fused stride-4 map `[N, H/4, W/4, fused]` and the per-location scale
/// weights `[N, H/4, W/4, 4]`.
#[derive(Debug, Clone, Copy)]
pub struct FusedFeatures<'t, T> {
    pub map: Var<'t, T>,
    pub weights: Var<'t, T>,
}

impl Backbone {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: BackboneConfig, rng: &mut impl Rng) -> Self {
        let w = config.widths;
        let mut stages = Vec::with_capacity(4);
        stages.push([
            ConvBnRelu::new(store, "backbone.s0.a", 3, 3, w[0], 2, rng),
            ConvBnRelu::new(store, "backbone.s0.b", 3, w[0], w[0], 2, rng),
        ]);
        for s in 1..4 {
            stages.push([
                ConvBnRelu::new(store, &format!("backbone.s{s}.a"), 3, w[s - 1], w[s], 2, rng),
                ConvBnRelu::new(store, &format!("backbone.s{s}.b"), 3, w[s], w[s], 1, rng),
            ]);
        }
        let blocks = (0..4)
            .map(|s| {
                [
                    ConvBnRelu::new(store, &format!("fusion.block{s}.a"), 3, w[s], config.block_mid, 1, rng),
                    ConvBnRelu::new(store, &format!("fusion.block{s}.b"), 1, config.block_mid, config.fused, 1, rng),
                ]
            })
            .collect();
        let fuse = Conv::new(store, "fusion.fuse", 1, 4 * config.fused, 4, 1, true, rng);
        Backbone {
            config,
            stages,
            blocks,
            fuse,
        }
    }

    /// Runs the strided conv stages on `image [N,H,W,3]`; `H` and `W` must
    /// be multiples of 32.
    pub fn extract_pyramid<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, image: Var<'t, T>) -> Result<Pyramid<'t, T>> {
        let s = image.shape();
        if s.len() != 4 || s[3] != 3 {
            return Err(Error::shape("extract_pyramid", format!("image {s:?}")));
        }
        if s[1] % 32 != 0 || s[2] % 32 != 0 {
            return Err(Error::Invalid(format!(
                "image size {}x{} is not a multiple of 32",
                s[2], s[1]
            )));
        }
        let mut x = image;
        let mut levels = Vec::with_capacity(4);
        for [a, b] in &self.stages {
            x = b.forward(ctx, a.forward(ctx, x)?)?;
            levels.push(x);
        }
        Ok(Pyramid {
            levels: [levels[0], levels[1], levels[2], levels[3]],
        })
    }

    /// Conv-blocks each level, upsamples to stride 4, and mixes the four
    /// maps with per-location softmax weights predicted from their
    /// concatenation.
    pub fn fuse_scales<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, pyr: &Pyramid<'t, T>) -> Result<FusedFeatures<'t, T>> {
        let mut ups = Vec::with_capacity(4);
        for (s, [a, b]) in self.blocks.iter().enumerate() {
            let y = b.forward(ctx, a.forward(ctx, pyr.levels[s])?)?;
            ups.push(upsample_bilinear(y, 1 << s)?);
        }
        let logits = self.fuse.forward(ctx, concat(&ups, 3)?)?;
        let weights = softmax(logits, 3)?;
        Ok(FusedFeatures {
            map: scale_fuse(weights, &ups)?,
            weights,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, image: Var<'t, T>) -> Result<FusedFeatures<'t, T>> {
        let pyr = self.extract_pyramid(ctx, image)?;
        self.fuse_scales(ctx, &pyr)
    }
}
