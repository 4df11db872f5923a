//! Deterministic synthetic scene-text images: words in a built-in bitmap
//! font, drawn straight, rotated, perspective-warped or along an arc, with
//! quadrangle and transcription annotations.

mod augment;
pub mod font;
mod io;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, augment_with, CropSpec};
pub use io::{image_name, parse_index, read_dataset, read_index, read_ppm, write_dataset, write_ppm, INDEX_FILE};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, min_area_enclosing_quad, Point, Quad};
use crate::roi::{homography_from_corners, Homography};
use font::{glyph, ink_at, text_width_units, GLYPH_H, GLYPH_W};

/// RGB image with channel values in `[0, 1]`, row-major `[h, w, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Image {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Self {
        Image {
            h,
            w,
            data: (0..h * w).flat_map(|_| rgb).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let k = (y * self.w + x) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let k = (y * self.w + x) * 3;
        self.data[k..k + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean.
    pub fn mean(&self) -> [f32; 3] {
        let mut m = [0.0f64; 3];
        for px in self.data.chunks(3) {
            for c in 0..3 {
                m[c] += px[c] as f64;
            }
        }
        let n = (self.h * self.w).max(1) as f64;
        m.map(|v| (v / n) as f32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RenderMode {
    Straight,
    Rotated,
    Perspective,
    Curved,
}

impl RenderMode {
    pub const ALL: [RenderMode; 4] = [
        RenderMode::Straight,
        RenderMode::Rotated,
        RenderMode::Perspective,
        RenderMode::Curved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RenderMode::Straight => "straight",
            RenderMode::Rotated => "rotated",
            RenderMode::Perspective => "perspective",
            RenderMode::Curved => "curved",
        }
    }
}

/// How one word was drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStyle {
    pub mode: RenderMode,
    /// Degrees, counter-clockwise on screen, within ±60.
    pub rotation_deg: f64,
    /// Corner displacement bound as a fraction of the glyph height, ≤ 0.25.
    pub jitter: f64,
    /// Signed reciprocal radius in 1/px; positive bends the ends down.
    pub curvature: f64,
    pub glyph_height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub quad: Quad,
    pub text: String,
    pub ignore: bool,
    /// Known for freshly rendered instances only.
    pub style: Option<RenderStyle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextSample {
    pub image: Image,
    pub instances: Vec<Instance>,
    pub seed: u64,
}

impl TextSample {
    pub fn annotations(&self) -> Vec<(Quad, bool)> {
        self.instances.iter().map(|i| (i.quad, i.ignore)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub words_min: usize,
    pub words_max: usize,
    /// Relative frequencies of straight, rotated, perspective and curved.
    pub mix: [f64; 4],
    pub glyph_min: f64,
    pub glyph_max: f64,
    pub max_rotation_deg: f64,
    pub max_jitter: f64,
    /// Bounds on the arc sweep of curved words, degrees.
    pub sweep_min_deg: f64,
    pub sweep_max_deg: f64,
    pub words: Vec<String>,
    pub seed: u64,
}

pub const DEFAULT_WORDS: &[&str] = &[
    "text", "road", "open", "exit", "cafe", "shop", "hotel", "bank", "park", "stop", "east", "west",
    "north", "south", "sale", "food", "city", "bus", "taxi", "bar", "pub", "gate", "mall", "deli",
    "bread", "pizza", "wine", "beer", "books", "music", "art", "gift", "post", "fire", "zone", "one",
    "two", "three", "four", "five", "seven", "2024", "24h", "42", "7up", "route66", "a1", "b12",
];

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            words_min: 1,
            words_max: 4,
            mix: [1.0; 4],
            glyph_min: 14.0,
            glyph_max: 28.0,
            max_rotation_deg: 60.0,
            max_jitter: 0.25,
            sweep_min_deg: 30.0,
            sweep_max_deg: 120.0,
            words: DEFAULT_WORDS.iter().map(|w| w.to_string()).collect(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.words.is_empty() {
            return bad("word list is empty".into());
        }
        if let Some(w) = self.words.iter().find(|w| w.is_empty() || !w.chars().all(font::supports)) {
            return bad(format!("word {w:?} has characters outside the built-in font"));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if self.words_min > self.words_max {
            return bad("words_min exceeds words_max".into());
        }
        if self.mix.iter().any(|&m| !(m >= 0.0)) || self.mix.iter().sum::<f64>() <= 0.0 {
            return bad(format!("invalid style mix {:?}", self.mix));
        }
        if !(self.glyph_min > 0.0 && self.glyph_min <= self.glyph_max) {
            return bad("invalid glyph height range".into());
        }
        if !(0.0..=60.0).contains(&self.max_rotation_deg) {
            return bad("rotation bound must lie in [0, 60] degrees".into());
        }
        if !(0.0..=0.25).contains(&self.max_jitter) {
            return bad("perspective jitter must lie in [0, 0.25]".into());
        }
        if !(0.0 <= self.sweep_min_deg && self.sweep_min_deg <= self.sweep_max_deg && self.sweep_max_deg <= 120.0) {
            return bad("arc sweep bounds must satisfy 0 <= min <= max <= 120".into());
        }
        Ok(())
    }

    /// Seed of sample `index`.
    pub fn sample_seed(&self, index: u64) -> u64 {
        self.seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Draws a style for a word of `len` characters.
pub fn sample_style(cfg: &SynthConfig, len: usize, rng: &mut impl Rng) -> RenderStyle {
    let mode = RenderMode::ALL[WeightedIndex::new(cfg.mix).expect("validated mix").sample(rng)];
    let glyph_height = if cfg.glyph_max > cfg.glyph_min {
        rng.gen_range(cfg.glyph_min..=cfg.glyph_max)
    } else {
        cfg.glyph_min
    };
    let mut style = RenderStyle {
        mode,
        rotation_deg: 0.0,
        jitter: 0.0,
        curvature: 0.0,
        glyph_height,
    };
    match mode {
        RenderMode::Straight => {}
        RenderMode::Rotated => {
            let r = cfg.max_rotation_deg;
            style.rotation_deg = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        }
        RenderMode::Perspective => style.jitter = cfg.max_jitter,
        RenderMode::Curved => {
            let (lo, hi) = (cfg.sweep_min_deg, cfg.sweep_max_deg);
            let sweep = if hi > lo { rng.gen_range(lo..=hi) } else { hi };
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let width = word_extent(len, glyph_height)[0];
            style.curvature = sign * sweep.to_radians() / width;
        }
    }
    style
}

/// `[width, height]` in pixels of an undistorted word.
fn word_extent(len: usize, glyph_height: f64) -> [f64; 2] {
    let s = glyph_height / GLYPH_H as f64;
    [text_width_units(len) as f64 * s, glyph_height]
}

/// Map from word-local pixel coordinates `(u, v)` (origin at the text's
/// top-left, `u` along the reading direction) to image coordinates, before
/// translation.
enum Shape {
    /// Rotation about the word centre.
    Affine { cos: f64, sin: f64, half: Point },
    Projective { fwd: Homography, inv: Homography },
    /// Arc of radius `r` (middle line) bending down for `sign > 0`.
    Arc { r: f64, sign: f64, half: Point },
}

struct Warp {
    shape: Shape,
    offset: Point,
}

impl Shape {
    fn forward(&self, p: Point) -> Point {
        match *self {
            Shape::Affine { cos, sin, half } => {
                let (du, dv) = (p[0] - half[0], p[1] - half[1]);
                // counter-clockwise on screen with y pointing down
                [cos * du + sin * dv, -sin * du + cos * dv]
            }
            Shape::Projective { fwd, .. } => fwd.apply(p).unwrap_or([f64::NAN, f64::NAN]),
            Shape::Arc { r, sign, half } => {
                let phi = (p[0] - half[0]) / r;
                let rad = r + sign * (half[1] - p[1]);
                [rad * phi.sin(), sign * r - sign * rad * phi.cos()]
            }
        }
    }

    fn inverse(&self, q: Point) -> Option<Point> {
        match *self {
            Shape::Affine { cos, sin, half } => Some([
                cos * q[0] - sin * q[1] + half[0],
                sin * q[0] + cos * q[1] + half[1],
            ]),
            Shape::Projective { inv, .. } => inv.apply(q),
            Shape::Arc { r, sign, half } => {
                let (dx, dy) = (q[0], q[1] - sign * r);
                let phi = dx.atan2(-sign * dy);
                let rad = dx.hypot(dy);
                Some([half[0] + phi * r, half[1] + sign * (r - rad)])
            }
        }
    }
}

impl Warp {
    fn forward(&self, p: Point) -> Point {
        let q = self.shape.forward(p);
        [q[0] + self.offset[0], q[1] + self.offset[1]]
    }

    fn inverse(&self, q: Point) -> Option<Point> {
        self.shape.inverse([q[0] - self.offset[0], q[1] - self.offset[1]])
    }
}

fn build_shape(style: &RenderStyle, extent: [f64; 2], rng: &mut impl Rng) -> Result<Shape> {
    let [w, h] = extent;
    let half = [w / 2.0, h / 2.0];
    Ok(match style.mode {
        RenderMode::Straight | RenderMode::Rotated => {
            let a = style.rotation_deg.to_radians();
            Shape::Affine {
                cos: a.cos(),
                sin: a.sin(),
                half,
            }
        }
        RenderMode::Perspective => {
            let rect = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
            let j = style.jitter * h;
            let moved = rect.map(|p| {
                let dx = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
                let dy = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
                [p[0] - half[0] + dx, p[1] - half[1] + dy]
            });
            let fwd = homography_from_corners(&rect, &moved)?;
            Shape::Projective {
                fwd,
                inv: fwd.inverse()?,
            }
        }
        RenderMode::Curved if style.curvature.abs() < 1e-12 => Shape::Affine {
            cos: 1.0,
            sin: 0.0,
            half,
        },
        RenderMode::Curved => Shape::Arc {
            r: (1.0 / style.curvature.abs()).max(h),
            sign: style.curvature.signum(),
            half,
        },
    })
}

/// Word outline: glyph-box corners plus points along the top and bottom
/// edges, in word-local pixels.
fn outline_points(len: usize, extent: [f64; 2]) -> Vec<Point> {
    let [w, h] = extent;
    let steps = (len * 4).max(8);
    let mut pts = Vec::with_capacity(2 * steps + 2);
    for k in 0..=steps {
        let u = w * k as f64 / steps as f64;
        pts.push([u, 0.0]);
        pts.push([u, h]);
    }
    pts
}

/// Annotation quad of a warped word, in reading order.
fn annotate(warp: &Warp, len: usize, extent: [f64; 2]) -> Option<Quad> {
    let [w, h] = extent;
    let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]].map(|p| warp.forward(p));
    let quad = match warp.shape {
        Shape::Arc { .. } => {
            let pts: Vec<Point> = outline_points(len, extent)
                .into_iter()
                .map(|p| warp.forward(p))
                .collect();
            min_area_enclosing_quad(&pts)?.aligned_to(&corners)
        }
        _ => Quad::new(corners),
    };
    quad.is_valid().then_some(quad)
}

/// Pixel-space bounds of the warped word.
fn warped_bounds(warp: &Warp, len: usize, extent: [f64; 2]) -> (f64, f64, f64, f64) {
    let pts: Vec<Point> = outline_points(len, extent)
        .into_iter()
        .map(|p| warp.forward(p))
        .collect();
    let hull = convex_hull(&pts);
    hull.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p[0]), b.min(p[1]), c.max(p[0]), d.max(p[1])),
    )
}

fn background(cfg: &SynthConfig, rng: &mut impl Rng) -> Image {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let gx: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
    let gy: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.2..0.2));
    let amp = rng.gen_range(0.0..0.08);
    let (fx, fy) = (rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut img = Image::new(cfg.height, cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (nx, ny) = (x as f64 / cfg.width as f64, y as f64 / cfg.height as f64);
            let wave = amp * (std::f64::consts::TAU * (fx * nx + fy * ny) + phase).sin();
            let rgb = std::array::from_fn(|c| {
                (base[c] + gx[c] * (nx - 0.5) + gy[c] * (ny - 0.5) + wave).clamp(0.0, 1.0) as f32
            });
            img.set_pixel(x, y, rgb);
        }
    }
    img
}

const SUPERSAMPLE: usize = 3;

/// Composites the word's ink over `img`; returns the covered pixels with
/// their coverage.
fn draw_word(
    img: &mut Image,
    warp: &Warp,
    text: &str,
    glyph_height: f64,
    color: [f32; 3],
    bounds: (f64, f64, f64, f64),
) -> Vec<(usize, usize, f32)> {
    let glyphs: Vec<[[bool; GLYPH_W]; GLYPH_H]> = text.chars().filter_map(glyph).collect();
    let s = glyph_height / GLYPH_H as f64;
    let (x0, y0, x1, y1) = bounds;
    let xa = (x0.floor().max(0.0)) as usize;
    let ya = (y0.floor().max(0.0)) as usize;
    let xb = (x1.ceil().max(0.0) as usize).min(img.w);
    let yb = (y1.ceil().max(0.0) as usize).min(img.h);
    let mut inked = Vec::new();
    let n = SUPERSAMPLE;
    for y in ya..yb {
        for x in xa..xb {
            let mut hits = 0;
            for sy in 0..n {
                for sx in 0..n {
                    let p = [
                        x as f64 + (sx as f64 + 0.5) / n as f64,
                        y as f64 + (sy as f64 + 0.5) / n as f64,
                    ];
                    if let Some([u, v]) = warp.inverse(p) {
                        if ink_at(&glyphs, u / s, v / s) {
                            hits += 1;
                        }
                    }
                }
            }
            if hits > 0 {
                let a = hits as f32 / (n * n) as f32;
                inked.push((x, y, a));
                let old = img.pixel(x, y);
                img.set_pixel(x, y, std::array::from_fn(|c| old[c] * (1.0 - a) + color[c] * a));
            }
        }
    }
    inked
}

const PLACEMENT_TRIES: usize = 20;
const MARGIN: f64 = 2.0;
const GAP: f64 = 3.0;

fn overlaps(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 - GAP < b.2 && b.0 - GAP < a.2 && a.1 - GAP < b.3 && b.1 - GAP < a.3
}

/// Renders sample `index` of the configured stream.
pub fn render_sample(cfg: &SynthConfig, index: u64) -> Result<TextSample> {
    render_with_ink(cfg, index).map(|(s, _)| s)
}

/// Rendering plus the inked pixels of each instance.
fn render_with_ink(cfg: &SynthConfig, index: u64) -> Result<(TextSample, Vec<Vec<(usize, usize, f32)>>)> {
    cfg.validate()?;
    let mut ink = Vec::new();
    let seed = cfg.sample_seed(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = background(cfg, &mut rng);
    let n_words = rng.gen_range(cfg.words_min..=cfg.words_max);
    let mut instances = Vec::with_capacity(n_words);
    let mut taken: Vec<(f64, f64, f64, f64)> = Vec::new();
    for _ in 0..n_words {
        for _ in 0..PLACEMENT_TRIES {
            let text = cfg.words[rng.gen_range(0..cfg.words.len())].to_lowercase();
            let len = text.chars().count();
            let style = sample_style(cfg, len, &mut rng);
            let extent = word_extent(len, style.glyph_height);
            let shape = build_shape(&style, extent, &mut rng)?;
            let rel = Warp {
                shape,
                offset: [0.0, 0.0],
            };
            let (bx0, by0, bx1, by1) = warped_bounds(&rel, len, extent);
            let Some(rel_quad) = annotate(&rel, len, extent) else { continue };
            let (qx0, qy0, qx1, qy1) = rel_quad.bounds();
            let (lo_x, lo_y) = (bx0.min(qx0), by0.min(qy0));
            let (hi_x, hi_y) = (bx1.max(qx1), by1.max(qy1));
            let (tx_lo, tx_hi) = (MARGIN - lo_x, cfg.width as f64 - MARGIN - hi_x);
            let (ty_lo, ty_hi) = (MARGIN - lo_y, cfg.height as f64 - MARGIN - hi_y);
            if !(tx_lo <= tx_hi && ty_lo <= ty_hi) {
                continue;
            }
            let offset = [rng.gen_range(tx_lo..=tx_hi), rng.gen_range(ty_lo..=ty_hi)];
            let footprint = (lo_x + offset[0], lo_y + offset[1], hi_x + offset[0], hi_y + offset[1]);
            if taken.iter().any(|&t| overlaps(t, footprint)) {
                continue;
            }
            let warp = Warp {
                shape: rel.shape,
                offset,
            };
            let bg = image.mean();
            let lum = (bg[0] + bg[1] + bg[2]) / 3.0;
            let color: [f32; 3] = std::array::from_fn(|_| {
                if lum > 0.5 {
                    rng.gen_range(0.0..0.2)
                } else {
                    rng.gen_range(0.8..1.0)
                }
            });
            let bounds = (bx0 + offset[0], by0 + offset[1], bx1 + offset[0], by1 + offset[1]);
            ink.push(draw_word(&mut image, &warp, &text, style.glyph_height, color, bounds));
            taken.push(footprint);
            instances.push(Instance {
                quad: rel_quad.translate(offset[0], offset[1]),
                text,
                ignore: false,
                style: Some(style),
            });
            break;
        }
    }
    Ok((
        TextSample {
            image,
            instances,
            seed,
        },
        ink,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn cfg_with(mix: [f64; 4]) -> SynthConfig {
        SynthConfig {
            mix,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(render_sample(&cfg, 3).unwrap(), render_sample(&cfg, 3).unwrap());
        assert_ne!(render_sample(&cfg, 3).unwrap().image, render_sample(&cfg, 4).unwrap().image);
    }

    #[test]
    fn empty_word_list_is_config_error() {
        let cfg = SynthConfig {
            words: vec![],
            ..SynthConfig::default()
        };
        assert!(matches!(render_sample(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn straight_quads_are_axis_aligned() {
        let cfg = cfg_with([1.0, 0.0, 0.0, 0.0]);
        for i in 0..5 {
            for inst in render_sample(&cfg, i).unwrap().instances {
                let p = inst.quad.pts;
                assert_eq!(p[0][1], p[1][1]);
                assert_eq!(p[1][0], p[2][0]);
                assert_eq!(p[2][1], p[3][1]);
                assert_eq!(p[3][0], p[0][0]);
            }
        }
    }

    #[test]
    fn zero_curvature_matches_straight() {
        let style = RenderStyle {
            mode: RenderMode::Curved,
            rotation_deg: 0.0,
            jitter: 0.0,
            curvature: 0.0,
            glyph_height: 14.0,
        };
        let straight = RenderStyle {
            mode: RenderMode::Straight,
            ..style
        };
        let extent = word_extent(4, 14.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Warp {
            shape: build_shape(&style, extent, &mut rng).unwrap(),
            offset: [50.0, 60.0],
        };
        let b = Warp {
            shape: build_shape(&straight, extent, &mut rng).unwrap(),
            offset: [50.0, 60.0],
        };
        assert_eq!(annotate(&a, 4, extent), annotate(&b, 4, extent));
        let mut ia = Image::new(128, 128);
        let mut ib = Image::new(128, 128);
        let bounds = warped_bounds(&a, 4, extent);
        draw_word(&mut ia, &a, "abcd", 14.0, [1.0; 3], bounds);
        draw_word(&mut ib, &b, "abcd", 14.0, [1.0; 3], bounds);
        assert_eq!(ia, ib);
    }

    #[test]
    fn warps_invert() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let extent = word_extent(5, 20.0);
        for (mode, rot, curv) in [
            (RenderMode::Rotated, 35.0, 0.0),
            (RenderMode::Perspective, 0.0, 0.0),
            (RenderMode::Curved, 0.0, 0.02),
            (RenderMode::Curved, 0.0, -0.02),
        ] {
            let style = RenderStyle {
                mode,
                rotation_deg: rot,
                jitter: 0.25,
                curvature: curv,
                glyph_height: 20.0,
            };
            let shape = build_shape(&style, extent, &mut rng).unwrap();
            for p in [[0.0, 0.0], [30.0, 5.0], [extent[0], extent[1]]] {
                let q = shape.inverse(shape.forward(p)).unwrap();
                assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9, "{mode:?}");
            }
        }
    }

    #[test]
    fn frown_bends_ends_down() {
        let extent = word_extent(6, 20.0);
        let style = RenderStyle {
            mode: RenderMode::Curved,
            rotation_deg: 0.0,
            jitter: 0.0,
            curvature: 1.5 / extent[0],
            glyph_height: 20.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = build_shape(&style, extent, &mut rng).unwrap();
        let mid = shape.forward([extent[0] / 2.0, 0.0]);
        let end = shape.forward([extent[0], 0.0]);
        assert!(end[1] > mid[1] + 1.0);
    }

    #[test]
    fn quads_cover_rendered_ink() {
        let cfg = SynthConfig::default();
        let mut seen = HashMap::new();
        for i in 0..40 {
            let (s, ink) = render_with_ink(&cfg, i).unwrap();
            for (inst, px) in s.instances.iter().zip(&ink) {
                let q = inst.quad;
                assert!(q.is_valid(), "{q:?}");
                assert!(!inst.text.is_empty());
                let (x0, y0, x1, y1) = q.bounds();
                assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= cfg.width as f64 && y1 <= cfg.height as f64);
                let total: f32 = px.iter().map(|p| p.2).sum();
                let inside: f32 = px
                    .iter()
                    .filter(|p| q.contains([p.0 as f64 + 0.5, p.1 as f64 + 0.5]))
                    .map(|p| p.2)
                    .sum();
                assert!(inside >= 0.8 * total, "{:?}: {inside}/{total}", inst.style);
                *seen.entry(inst.style.unwrap().mode).or_insert(0) += 1;
            }
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn style_mix_frequencies_follow_config() {
        let cfg = cfg_with([1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts: HashMap<RenderMode, usize> = HashMap::new();
        for _ in 0..1000 {
            *counts.entry(sample_style(&cfg, 4, &mut rng).mode).or_default() += 1;
        }
        for (k, m) in RenderMode::ALL.iter().enumerate() {
            let f = counts[m] as f64 / 1000.0;
            assert!((f - cfg.mix[k] / 10.0).abs() < 0.05, "{m:?} {f}");
        }
    }

    #[test]
    fn styles_respect_bounds() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let len = rng.gen_range(1..9);
            let s = sample_style(&cfg, len, &mut rng);
            assert!(s.rotation_deg.abs() <= 60.0);
            assert!((0.0..=0.25).contains(&s.jitter));
            let sweep = s.curvature.abs() * word_extent(len, s.glyph_height)[0];
            assert!(sweep <= 120f64.to_radians() + 1e-9);
        }
    }
}
