//! Run configuration: a flat `key=value` file with namespaced keys.
//!
//! Blank lines and lines starting with `#` are skipped. Every key has a
//! default (see [`RunConfig::to_text`]); unknown or repeated keys are errors.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::recognition::{CharVocab, RecognizerConfig};
use crate::synth::SynthConfig;

/// What a training phase optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    DetOnly,
    RecogOnly,
    Joint,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::DetOnly => "det-only",
            Stage::RecogOnly => "recog-only",
            Stage::Joint => "joint",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "det-only" => Ok(Stage::DetOnly),
            "recog-only" => Ok(Stage::RecogOnly),
            "joint" => Ok(Stage::Joint),
            other => Err(Error::Config(format!(
                "unknown stage {other:?} (expected det-only, recog-only or joint)"
            ))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub recognizer: RecognizerConfig,
    /// RoI height in feature cells.
    pub h_t: usize,
    /// RoI width cap in feature cells.
    pub w_max: usize,
    pub vocab: CharVocab,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub nd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Floor of a cosine decay over the schedule; `None` keeps `lr`.
    pub lr_min: Option<f64>,
    pub batch: usize,
    pub rois: usize,
    /// Phases run in order.
    pub schedule: Vec<(Stage, usize)>,
    pub clip: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub augment: bool,
    pub image_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Dataset directory; when unset, `count` samples are rendered in memory.
    pub dir: Option<PathBuf>,
    pub count: usize,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferConfig {
    pub score_thresh: f64,
    pub nms_thresh: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub infer: InferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig {
                backbone: BackboneConfig::default(),
                recognizer: RecognizerConfig::default(),
                h_t: 8,
                w_max: 64,
                vocab: CharVocab::alphanumeric(),
            },
            loss: LossConfig {
                lambda: 1.0,
                beta: 1.0,
                nd: 128.0,
            },
            train: TrainConfig {
                lr: 1e-4,
                lr_min: None,
                batch: 4,
                rois: 32,
                schedule: vec![(Stage::DetOnly, 2000), (Stage::Joint, 18000)],
                clip: 5.0,
                checkpoint_every: 1000,
                seed: 0,
                augment: true,
                image_size: 256,
            },
            data: DataConfig {
                dir: None,
                count: 32,
                synth: SynthConfig::default(),
            },
            infer: InferConfig {
                score_thresh: 0.8,
                nms_thresh: 0.2,
                max_steps: 32,
            },
        }
    }
}

/// Every key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model.widths", "backbone stage widths, four comma-separated values"),
    ("model.block_mid", "inner width of the per-level blocks"),
    ("model.fused", "channels of the fused feature map"),
    ("model.h_t", "RoI height in feature cells"),
    ("model.w_max", "RoI width cap in feature cells"),
    ("model.rec_conv", "recognizer conv channels"),
    ("model.rec_conv_layers", "recognizer conv layers"),
    ("model.enc_hidden", "encoder GRU hidden size"),
    ("model.dec_hidden", "decoder GRU hidden size"),
    ("model.embedding", "character embedding size"),
    ("model.attention", "attention projection size"),
    ("model.bidirectional", "bidirectional encoder GRUs"),
    ("model.vocab", "recognized characters, written without separators"),
    ("loss.lambda", "classification weight inside the detection loss"),
    ("loss.beta", "recognition loss weight"),
    ("loss.nd", "geometry normalization in pixels"),
    ("train.lr", "initial Adam learning rate"),
    ("train.lr_min", "final learning rate of a cosine decay over the schedule; empty for a constant rate"),
    ("train.batch", "images per step"),
    ("train.rois", "cap on ground-truth RoIs per step"),
    ("train.schedule", "phases as stage:steps, comma-separated"),
    ("train.clip", "global gradient norm cap"),
    ("train.checkpoint_every", "steps between checkpoints"),
    ("train.seed", "seed for initialization, batching and augmentation"),
    ("train.augment", "random crop and rescale"),
    ("train.image_size", "square training input side, multiple of 32"),
    ("data.dir", "dataset directory; empty renders samples in memory"),
    ("data.count", "number of rendered samples"),
    ("data.width", "rendered image width"),
    ("data.height", "rendered image height"),
    ("data.words_min", "fewest words per image"),
    ("data.words_max", "most words per image"),
    ("data.mix", "straight, rotated, perspective and curved frequencies"),
    ("data.glyph_min", "smallest glyph height in pixels"),
    ("data.glyph_max", "largest glyph height in pixels"),
    ("data.max_rotation", "rotation bound in degrees"),
    ("data.max_jitter", "perspective corner jitter as a fraction of height"),
    ("data.sweep_min", "smallest arc sweep of curved words in degrees"),
    ("data.sweep_max", "largest arc sweep of curved words in degrees"),
    ("data.words", "word list, comma-separated; empty uses the built-in list"),
    ("data.seed", "generator seed"),
    ("infer.score_thresh", "score map threshold"),
    ("infer.nms_thresh", "IoU above which lower-scoring quads are suppressed"),
    ("infer.max_steps", "decoding step limit"),
];

fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<V: FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',').map(|p| num(key, p)).collect()
}

fn array<V: FromStr + Copy, const N: usize>(key: &str, v: &str) -> Result<[V; N]> {
    let items: Vec<V> = list(key, v)?;
    items
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} values in {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn join<V: fmt::Display>(xs: &[V]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses a configuration file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let s = &mut self.data.synth;
        match key {
            "model.widths" => m.backbone.widths = array(key, v)?,
            "model.block_mid" => m.backbone.block_mid = num(key, v)?,
            "model.fused" => m.backbone.fused = num(key, v)?,
            "model.h_t" => m.h_t = num(key, v)?,
            "model.w_max" => m.w_max = num(key, v)?,
            "model.rec_conv" => m.recognizer.conv_channels = num(key, v)?,
            "model.rec_conv_layers" => m.recognizer.conv_layers = num(key, v)?,
            "model.enc_hidden" => m.recognizer.encoder_hidden = num(key, v)?,
            "model.dec_hidden" => m.recognizer.decoder_hidden = num(key, v)?,
            "model.embedding" => m.recognizer.embedding = num(key, v)?,
            "model.attention" => m.recognizer.attention = num(key, v)?,
            "model.bidirectional" => m.recognizer.bidirectional = flag(key, v)?,
            "model.vocab" => m.vocab = CharVocab::new(v.chars())?,
            "loss.lambda" => self.loss.lambda = num(key, v)?,
            "loss.beta" => self.loss.beta = num(key, v)?,
            "loss.nd" => self.loss.nd = num(key, v)?,
            "train.lr" => self.train.lr = num(key, v)?,
            "train.lr_min" => self.train.lr_min = if v.is_empty() { None } else { Some(num(key, v)?) },
            "train.batch" => self.train.batch = num(key, v)?,
            "train.rois" => self.train.rois = num(key, v)?,
            "train.schedule" => {
                self.train.schedule = v
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        let (stage, steps) = p
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("{key}: expected stage:steps, got {p:?}")))?;
                        Ok((stage.parse()?, num(key, steps)?))
                    })
                    .collect::<Result<_>>()?
            }
            "train.clip" => self.train.clip = num(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(key, v)?,
            "train.seed" => self.train.seed = num(key, v)?,
            "train.augment" => self.train.augment = flag(key, v)?,
            "train.image_size" => self.train.image_size = num(key, v)?,
            "data.dir" => self.data.dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.count" => self.data.count = num(key, v)?,
            "data.width" => s.width = num(key, v)?,
            "data.height" => s.height = num(key, v)?,
            "data.words_min" => s.words_min = num(key, v)?,
            "data.words_max" => s.words_max = num(key, v)?,
            "data.mix" => s.mix = array(key, v)?,
            "data.glyph_min" => s.glyph_min = num(key, v)?,
            "data.glyph_max" => s.glyph_max = num(key, v)?,
            "data.max_rotation" => s.max_rotation_deg = num(key, v)?,
            "data.max_jitter" => s.max_jitter = num(key, v)?,
            "data.sweep_min" => s.sweep_min_deg = num(key, v)?,
            "data.sweep_max" => s.sweep_max_deg = num(key, v)?,
            "data.words" => {
                s.words = if v.is_empty() {
                    SynthConfig::default().words
                } else {
                    v.split(',').map(|w| w.trim().to_string()).collect()
                }
            }
            "data.seed" => s.seed = num(key, v)?,
            "infer.score_thresh" => self.infer.score_thresh = num(key, v)?,
            "infer.nms_thresh" => self.infer.nms_thresh = num(key, v)?,
            "infer.max_steps" => self.infer.max_steps = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Current value of every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let s = &self.data.synth;
        let values = [
            join(&m.backbone.widths),
            m.backbone.block_mid.to_string(),
            m.backbone.fused.to_string(),
            m.h_t.to_string(),
            m.w_max.to_string(),
            m.recognizer.conv_channels.to_string(),
            m.recognizer.conv_layers.to_string(),
            m.recognizer.encoder_hidden.to_string(),
            m.recognizer.decoder_hidden.to_string(),
            m.recognizer.embedding.to_string(),
            m.recognizer.attention.to_string(),
            m.recognizer.bidirectional.to_string(),
            m.vocab.chars().iter().collect(),
            self.loss.lambda.to_string(),
            self.loss.beta.to_string(),
            self.loss.nd.to_string(),
            self.train.lr.to_string(),
            self.train.lr_min.map(|v| v.to_string()).unwrap_or_default(),
            self.train.batch.to_string(),
            self.train.rois.to_string(),
            self.train
                .schedule
                .iter()
                .map(|(st, n)| format!("{st}:{n}"))
                .collect::<Vec<_>>()
                .join(","),
            self.train.clip.to_string(),
            self.train.checkpoint_every.to_string(),
            self.train.seed.to_string(),
            self.train.augment.to_string(),
            self.train.image_size.to_string(),
            self.data.dir.as_ref().map(|d| d.display().to_string()).unwrap_or_default(),
            self.data.count.to_string(),
            s.width.to_string(),
            s.height.to_string(),
            s.words_min.to_string(),
            s.words_max.to_string(),
            join(&s.mix),
            s.glyph_min.to_string(),
            s.glyph_max.to_string(),
            s.max_rotation_deg.to_string(),
            s.max_jitter.to_string(),
            s.sweep_min_deg.to_string(),
            s.sweep_max_deg.to_string(),
            s.words.join(","),
            s.seed.to_string(),
            self.infer.score_thresh.to_string(),
            self.infer.nms_thresh.to_string(),
            self.infer.max_steps.to_string(),
        ];
        KEYS.iter().map(|&(k, _)| k).zip(values).collect()
    }

    /// Full configuration with a comment line per key; parses back to
    /// `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((key, value), (_, doc)) in self.entries().into_iter().zip(KEYS) {
            out.push_str(&format!("# {doc}\n{key}={value}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        let m = &self.model;
        if m.backbone.widths.contains(&0) || m.backbone.block_mid == 0 || m.backbone.fused == 0 {
            return bad("backbone widths must be positive");
        }
        let r = &m.recognizer;
        if r.conv_channels == 0 || r.encoder_hidden == 0 || r.decoder_hidden == 0 || r.embedding == 0 || r.attention == 0 {
            return bad("recognizer sizes must be positive");
        }
        if m.h_t == 0 || m.w_max == 0 {
            return bad("RoI size must be positive");
        }
        if !(self.loss.lambda > 0.0 && self.loss.beta >= 0.0 && self.loss.nd > 0.0) {
            return bad("loss.lambda and loss.nd must be positive and loss.beta non-negative");
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad("train.lr must be positive");
        }
        if t.lr_min.is_some_and(|m| !(m > 0.0 && m <= t.lr)) {
            return bad("train.lr_min must be positive and at most train.lr");
        }
        if t.batch == 0 || t.rois == 0 || t.checkpoint_every == 0 {
            return bad("train.batch, train.rois and train.checkpoint_every must be positive");
        }
        if !(t.clip > 0.0) {
            return bad("train.clip must be positive");
        }
        if t.image_size == 0 || t.image_size % 32 != 0 {
            return bad("train.image_size must be a positive multiple of 32");
        }
        if !(0.0..1.0).contains(&self.infer.score_thresh) || !(0.0..=1.0).contains(&self.infer.nms_thresh) {
            return bad("infer thresholds must lie in [0, 1)");
        }
        if self.infer.max_steps == 0 {
            return bad("infer.max_steps must be positive");
        }
        if self.data.dir.is_none() && self.data.count == 0 {
            return bad("data.count must be positive when no dataset directory is given");
        }
        self.data.synth.validate()?;
        if let Some(w) = self.data.synth.words.iter().find(|w| !m.vocab.contains_all(w)) {
            return Err(Error::Config(format!("word {w:?} has characters outside model.vocab")));
        }
        Ok(())
    }

    /// Total scheduled steps.
    pub fn total_steps(&self) -> usize {
        self.train.schedule.iter().map(|&(_, n)| n).sum()
    }

    /// Learning rate at zero-based `step`: cosine from `lr` down to
    /// `lr_min` over the whole schedule.
    pub fn lr_at(&self, step: usize) -> f64 {
        let t = &self.train;
        let Some(floor) = t.lr_min else { return t.lr };
        let frac = (step as f64 / self.total_steps().max(1) as f64).min(1.0);
        floor + 0.5 * (t.lr - floor) * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// Stage active at zero-based `step`, if the schedule covers it.
    pub fn stage_at(&self, step: usize) -> Option<Stage> {
        let mut end = 0;
        for &(stage, n) in &self.train.schedule {
            end += n;
            if step < end {
                return Some(stage);
            }
        }
        None
    }
}
