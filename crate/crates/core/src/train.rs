//! Multi-task loss and the staged training loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{RunConfig, Stage};
use crate::detection::{detection_loss, make_targets, STRIDE};
use crate::error::{Error, Result};
use crate::geometry::Quad;
use crate::model::{images_to_tensor, TextNet};
use crate::optim::{clip_grad_norm, Adam};
use crate::params::{Ctx, ParamStore};
use crate::recognition::CharVocab;
use crate::roi::{solve_homography, roi_width, to_feature_coords};
use crate::synth::{augment, augment_with, read_dataset, render_sample, CropSpec, TextSample};
use crate::tensor::{add, scale, Scalar, Tape, Tensor, Var};
use crate::params::BN_MOMENTUM;

pub const CHECKPOINT_FILE: &str = "model.tntk";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_LOG_FILE: &str = "loss.log";
pub const FAILURE_FILE: &str = "nonfinite.txt";

/// Loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub det: f64,
    pub reg: f64,
    pub total: f64,
    pub rois: usize,
}

/// One row of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub stage: Stage,
    pub loss: LossValues,
    pub grad_norm: f64,
}

impl LogRow {
    pub fn format(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.step, self.loss.det, self.loss.reg, self.loss.total)
    }
}

pub fn loss_log_header() -> &'static str {
    "step\tL_det\tL_reg\tL"
}

/// Seed derived from a base seed and a path of counters.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Maps characters missing from the vocabulary to their lower case when
/// that is present.
pub fn fold_text(vocab: &CharVocab, text: &str) -> String {
    text.chars()
        .map(|c| {
            if vocab.index_of(c).is_none() {
                c.to_lowercase().next().filter(|l| vocab.index_of(*l).is_some()).unwrap_or(c)
            } else {
                c
            }
        })
        .collect()
}

/// A ground-truth RoI: image index in the batch, quad and folded text.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTarget {
    pub image: usize,
    pub quad: Quad,
    pub text: String,
}

/// Non-ignored, rectifiable, transcribed instances of the batch in
/// image-major order, subsampled to at most `cap` with a seeded draw.
pub fn select_rois(batch: &[TextSample], cfg: &RunConfig, cap: usize, seed: u64) -> Result<Vec<RoiTarget>> {
    let vocab = &cfg.model.vocab;
    let mut all = Vec::new();
    for (b, s) in batch.iter().enumerate() {
        for inst in &s.instances {
            if inst.ignore || inst.text.is_empty() || !inst.quad.is_valid() {
                continue;
            }
            let fq = to_feature_coords(&inst.quad, STRIDE as f64);
            let w_t = roi_width(&fq, cfg.model.h_t, cfg.model.w_max);
            if solve_homography(&fq, w_t, cfg.model.h_t).is_err() {
                continue;
            }
            let text = fold_text(vocab, &inst.text);
            if !vocab.contains_all(&text) {
                return Err(Error::Vocab(format!("transcription {:?} has characters outside the vocabulary", inst.text)));
            }
            all.push(RoiTarget {
                image: b,
                quad: inst.quad,
                text,
            });
        }
    }
    if all.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, all.len(), cap).into_vec();
        keep.sort_unstable();
        all = keep.into_iter().map(|i| all[i].clone()).collect();
    }
    Ok(all)
}

/// `L = L_det + β·L_reg` for `stage`. Det-only drops the recognition term,
/// recog-only the detection term; with no usable RoI `L_reg` is zero.
pub fn total_loss<'t, T: Scalar>(
    ctx: &Ctx<'t, T>,
    net: &TextNet,
    batch: &[TextSample],
    cfg: &RunConfig,
    stage: Stage,
    roi_seed: u64,
) -> Result<(Var<'t, T>, LossValues)> {
    let tape = ctx.tape;
    let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
    let x = tape.constant(images_to_tensor(&images)?);
    let fused = net.features(ctx, x)?;
    let mut values = LossValues {
        det: 0.0,
        reg: 0.0,
        total: 0.0,
        rois: 0,
    };
    let mut total: Option<Var<'t, T>> = None;
    if stage != Stage::RecogOnly {
        let maps = net.detect(ctx, fused.map)?;
        let targets: Vec<_> = batch
            .iter()
            .map(|s| make_targets(&s.annotations(), s.image.h, s.image.w, cfg.loss.nd))
            .collect();
        let (det, _) = detection_loss(&maps, &targets, cfg.loss.lambda)?;
        values.det = det.item().as_f64();
        total = Some(det);
    }
    if stage != Stage::DetOnly {
        let rois = select_rois(batch, cfg, cfg.train.rois, roi_seed)?;
        values.rois = rois.len();
        let reg = if rois.is_empty() {
            tape.constant(Tensor::scalar(T::zero()))
        } else {
            let pairs: Vec<_> = rois.iter().map(|r| (r.image, r.quad)).collect();
            let feats = net.roi_features(fused.map, &pairs)?;
            let enc = net.recognizer.encode(ctx, &feats)?;
            let texts: Vec<&str> = rois.iter().map(|r| r.text.as_str()).collect();
            net.recognizer.recognition_loss(ctx, &enc, &texts)?
        };
        values.reg = reg.item().as_f64();
        let weighted = scale(reg, T::from_f64(cfg.loss.beta));
        total = Some(match total {
            Some(det) => add(det, weighted)?,
            None => weighted,
        });
    }
    let total = total.expect("every stage has a term");
    values.total = total.item().as_f64();
    Ok((total, values))
}

/// Loads the configured dataset or renders it.
pub fn load_data(cfg: &RunConfig) -> Result<Vec<TextSample>> {
    match &cfg.data.dir {
        Some(dir) => {
            let data = read_dataset(dir)?;
            if data.is_empty() {
                return Err(Error::Data(format!("{}: dataset is empty", dir.display())));
            }
            Ok(data)
        }
        None => (0..cfg.data.count as u64)
            .map(|i| render_sample(&cfg.data.synth, i))
            .collect(),
    }
}

/// Resizes and pads a sample to the square training size without cropping.
pub fn fit_to_size(sample: &TextSample, size: usize) -> TextSample {
    if sample.image.w == size && sample.image.h == size {
        return sample.clone();
    }
    let crop = CropSpec {
        x: 0,
        y: 0,
        w: sample.image.w,
        h: sample.image.h,
    };
    augment_with(sample, crop, size)
}

/// Training state: model, parameters, optimizer moments and data.
pub struct Trainer {
    pub cfg: RunConfig,
    pub net: TextNet,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub data: Vec<TextSample>,
}

impl Trainer {
    pub fn new(cfg: RunConfig, data: Vec<TextSample>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Data("no training samples".into()));
        }
        let (net, store) = TextNet::build(&cfg.model, cfg.train.seed);
        let adam = Adam::new(&store, cfg.train.lr);
        Ok(Trainer {
            cfg,
            net,
            store,
            adam,
            data,
        })
    }

    pub fn from_config(cfg: RunConfig) -> Result<Self> {
        let data = load_data(&cfg)?;
        Trainer::new(cfg, data)
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> usize {
        self.adam.step as usize
    }

    pub fn is_done(&self) -> bool {
        self.step() >= self.cfg.total_steps()
    }

    /// Sample indices of `step`: consecutive slices of per-epoch seeded
    /// permutations.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.data.len();
        let b = self.cfg.train.batch;
        let mut cached: Option<(usize, Vec<usize>)> = None;
        (0..b)
            .map(|k| {
                let pos = step * b + k;
                let epoch = pos / n;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.train.seed, &[1, epoch as u64])));
                    cached = Some((epoch, perm));
                }
                cached.as_ref().unwrap().1[pos % n]
            })
            .collect()
    }

    /// Augmented (or resized) samples of `step`.
    pub fn batch(&self, step: usize) -> (Vec<usize>, Vec<TextSample>) {
        let ids = self.batch_indices(step);
        let size = self.cfg.train.image_size;
        let samples = ids
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                if self.cfg.train.augment {
                    augment(&self.data[i], mix_seed(self.cfg.train.seed, &[2, step as u64, k as u64]), size)
                } else {
                    fit_to_size(&self.data[i], size)
                }
            })
            .collect();
        (ids, samples)
    }

    /// One optimizer step. A non-finite loss or gradient leaves the state
    /// untouched and returns [`Error::NonFinite`] naming the batch.
    pub fn train_step(&mut self) -> Result<LogRow> {
        let step = self.step();
        let stage = self
            .cfg
            .stage_at(step)
            .ok_or_else(|| Error::Invalid(format!("step {step} is past the schedule")))?;
        let (ids, batch) = self.batch(step);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &self.store);
        let (loss, values) = total_loss(&ctx, &self.net, &batch, &self.cfg, stage, mix_seed(self.cfg.train.seed, &[3, step as u64]))?;
        let fail = |what: &str| Error::NonFinite(format!("{what} at step {step}, batch samples {ids:?}"));
        if !values.total.is_finite() {
            return Err(fail("loss"));
        }
        let grads = tape.backward(loss)?;
        let pass = ctx.finish();
        self.store.absorb_grads(&tape, &pass, &grads);
        let grad_norm = clip_grad_norm(&mut self.store, self.cfg.train.clip);
        if !grad_norm.is_finite() {
            self.store.zero_grads();
            return Err(fail("gradient"));
        }
        self.store.apply_updates(pass.updates, BN_MOMENTUM as f32);
        self.adam.lr = self.cfg.lr_at(step);
        self.adam.update(&mut self.store);
        self.store.zero_grads();
        Ok(LogRow {
            step,
            stage,
            loss: values,
            grad_norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store, &self.adam)
    }

    /// Restores parameters, moments and the step counter.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        checkpoint::load_into(path, &mut self.store, &mut self.adam)
    }

    /// Runs the remaining schedule. With an output directory, writes the
    /// configuration, the loss log, a checkpoint every
    /// `train.checkpoint_every` steps and at the end; on a non-finite step
    /// the last checkpoint is kept and the batch is recorded in
    /// [`FAILURE_FILE`].
    pub fn run(&mut self, out: Option<&Path>, mut on_step: impl FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        let mut log_file = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(CONFIG_FILE), self.cfg.to_text())?;
                let mut f = fs::File::create(dir.join(LOSS_LOG_FILE))?;
                writeln!(f, "{}", loss_log_header())?;
                Some(f)
            }
            None => None,
        };
        let ckpt: Option<PathBuf> = out.map(|d| d.join(CHECKPOINT_FILE));
        let mut rows = Vec::new();
        while !self.is_done() {
            let row = match self.train_step() {
                Ok(row) => row,
                Err(Error::NonFinite(msg)) => {
                    if let Some(dir) = out {
                        fs::write(dir.join(FAILURE_FILE), format!("{msg}\n"))?;
                    }
                    return Err(Error::NonFinite(msg));
                }
                Err(e) => return Err(e),
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", row.format())?;
            }
            on_step(&row);
            rows.push(row);
            let done = self.step();
            if let Some(path) = &ckpt {
                if done % self.cfg.train.checkpoint_every == 0 || self.is_done() {
                    self.save(path)?;
                }
            }
        }
        Ok(rows)
    }
}

/// Rebuilds a trained model from a checkpoint and the configuration saved
/// next to it.
pub fn load_model(checkpoint_path: &Path) -> Result<(RunConfig, TextNet, ParamStore<f32>)> {
    let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path)
        .map_err(|e| Error::Data(format!("{}: {e}", cfg_path.display())))?;
    let cfg = RunConfig::parse(&text)?;
    let (net, mut store) = TextNet::build::<f32>(&cfg.model, cfg.train.seed);
    let mut adam = Adam::new(&store, cfg.train.lr);
    checkpoint::load_into(checkpoint_path, &mut store, &mut adam)?;
    Ok((cfg, net, store))
}
