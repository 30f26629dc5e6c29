//! Multi-stage perceptual training.
//!
//! A stage is described by a [`StageConfig`]: patch and batch sizes, a
//! cosine learning-rate schedule, and a weighted set of named loss terms.
//! [`run_stage`] drives one stage over a synthesized pair set and writes
//! a per-iteration loss trace, periodic checkpoints and EMA weights.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archzoo::{ModelKind, SrModel};
use crate::checkpoint::{self, CheckpointManifest};
use crate::degrade::PairManifest;
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::nn::ParamStore;

pub mod disc;
pub mod losses;

pub use disc::{build_unet_discriminator, SnConv, UNetDiscriminator};
pub use losses::{
    loss_aesop, loss_fft_l1, loss_gan, loss_l1, loss_ldl, loss_mse, loss_perceptual, AutoencoderAdapter,
    FeatureExtractor, GanSide, IdentityAutoencoder, IdentityExtractor, RandomConvExtractor,
    RandomLinearAutoencoder,
};

/// Loss term names accepted in `loss_terms`. `lpips` is evaluated with the
/// perceptual feature extractor.
pub const LOSS_NAMES: [&str; 8] = ["l1", "mse", "fft_l1", "perceptual", "lpips", "ldl", "gan", "aesop"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

fn default_ema() -> f64 {
    0.999
}

fn default_true() -> bool {
    true
}

fn default_window() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    /// Side of the high-resolution training crop.
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub iterations: usize,
    pub loss_terms: BTreeMap<String, f64>,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_ema")]
    pub ema_decay: f64,
    /// Save a checkpoint every this many iterations (final only when unset).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default = "default_true")]
    pub flips: bool,
    /// Discriminator learning rate; the generator schedule when unset.
    #[serde(default)]
    pub disc_lr: Option<f64>,
    #[serde(default = "default_window")]
    pub ldl_window: usize,
}

fn terms(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl StageConfig {
    fn base(name: &str, patch: usize, batch: usize, lr: (f64, f64), iterations: usize, loss: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            patch_size: patch,
            batch_size: batch,
            lr_max: lr.0,
            lr_min: lr.1,
            iterations,
            loss_terms: terms(loss),
            optimizer: AdamConfig::default(),
            ema_decay: default_ema(),
            checkpoint_every: None,
            flips: true,
            disc_lr: None,
            ldl_window: default_window(),
        }
    }

    pub const PRESETS: [&'static str; 6] = [
        "vpeg_stage1",
        "vpeg_stage2",
        "vpeg_stage3",
        "mialgo_stage1",
        "mialgo_stage2",
        "ipiu",
    ];

    /// Full-scale stage recipes by name.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "vpeg_stage1" => Self::base(name, 192, 64, (3e-4, 1e-6), 300_000, &[("l1", 1.0), ("fft_l1", 0.05)]),
            "vpeg_stage2" => Self::base(
                name,
                192,
                36,
                (1e-4, 1e-6),
                300_000,
                &[("l1", 1.0), ("perceptual", 0.1), ("ldl", 1.0), ("gan", 0.1)],
            ),
            "vpeg_stage3" => Self::base(
                name,
                192,
                16,
                (1e-4, 1e-6),
                100_000,
                &[("aesop", 1.0), ("perceptual", 0.1), ("ldl", 1.0), ("gan", 0.1)],
            ),
            "mialgo_stage1" => Self::base(name, 128, 32, (3e-4, 1e-6), 500_000, &[("mse", 1.0), ("lpips", 1.0)]),
            "mialgo_stage2" => Self::base(
                name,
                512,
                32,
                (1e-4, 1e-4),
                250_000,
                &[("mse", 1.0), ("lpips", 1.0), ("gan", 0.1)],
            ),
            "ipiu" => Self::base(name, 256, 64, (1e-3, 1e-6), 100_000, &[("l1", 1.0)]),
            other => {
                return Err(Error::Config(format!(
                    "unknown stage preset `{other}` (known: {})",
                    Self::PRESETS.join(", ")
                )))
            }
        })
    }

    /// The stages of a team recipe: `vpeg`, `mialgo` or `ipiu`.
    pub fn recipe(team: &str) -> Result<Vec<Self>> {
        let names: &[&str] = match team {
            "vpeg" => &["vpeg_stage1", "vpeg_stage2", "vpeg_stage3"],
            "mialgo" => &["mialgo_stage1", "mialgo_stage2"],
            "ipiu" => &["ipiu"],
            other => return Err(Error::Config(format!("unknown recipe `{other}`"))),
        };
        names.iter().map(|n| Self::preset(n)).collect()
    }

    /// Desk scale: iterations divided by 1000 and batch by 4.
    pub fn desk(&self) -> Self {
        Self {
            iterations: (self.iterations / 1000).max(1),
            batch_size: (self.batch_size / 4).max(1),
            ..self.clone()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.loss_terms.get(term).copied().unwrap_or(0.0)
    }

    pub fn uses_gan(&self) -> bool {
        self.weight("gan") > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("stage `{}`: {m}", self.name)));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return bad("batch and patch sizes must be positive".into());
        }
        if !(self.lr_max.is_finite() && self.lr_min.is_finite()) || self.lr_min < 0.0 || self.lr_min > self.lr_max {
            return bad(format!("need 0 <= lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1]", self.ema_decay));
        }
        if self.loss_terms.is_empty() {
            return bad("no loss terms".into());
        }
        for (name, w) in &self.loss_terms {
            if !LOSS_NAMES.contains(&name.as_str()) {
                return bad(format!("unknown loss term `{name}` (known: {})", LOSS_NAMES.join(", ")));
            }
            if !w.is_finite() || *w < 0.0 {
                return bad(format!("loss weight {name} = {w} must be finite and nonnegative"));
            }
        }
        if self.ldl_window < 3 || self.ldl_window % 2 == 0 {
            return bad(format!("ldl_window {} must be odd and at least 3", self.ldl_window));
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive".into());
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(πt/T))`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs at least one iteration".into()));
    }
    if t > total {
        return Err(Error::Config(format!("iteration {t} is past the schedule length {total}")));
    }
    if t == 0 {
        return Ok(lr_max);
    }
    if t == total {
        return Ok(lr_min);
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t as f64 / total as f64).cos()))
}

/// Exponential moving average of every named tensor of a model.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub decay: f64,
    pub shadow: Vec<(String, Tensor)>,
}

impl EmaState {
    pub fn new(store: &ParamStore, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::Config(format!("EMA decay {decay} outside [0, 1]")));
        }
        let shadow = store
            .named_tensors()
            .into_iter()
            .map(|(n, t)| Ok((n, t.copy()?)))
            .collect::<Result<_>>()?;
        Ok(Self { decay, shadow })
    }

    /// `θ_ema ← decay·θ_ema + (1 − decay)·θ`, in shadow order.
    pub fn update(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.shadow.len() {
            return Err(Error::Shape(format!(
                "EMA holds {} tensors, got {}",
                self.shadow.len(),
                params.len()
            )));
        }
        for ((name, s), p) in self.shadow.iter_mut().zip(params) {
            if s.dims() != p.dims() {
                return Err(Error::Shape(format!("EMA `{name}`: {:?} vs {:?}", s.dims(), p.dims())));
            }
            *s = ((&*s * self.decay)? + (p.detach() * (1.0 - self.decay))?)?;
        }
        Ok(())
    }

    pub fn update_from(&mut self, store: &ParamStore) -> Result<()> {
        let params: Vec<Tensor> = store.named_tensors().into_iter().map(|(_, t)| t).collect();
        self.update(&params)
    }
}

/// Total loss plus the unweighted value of each term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

/// Adapters a stage may need beyond the model itself.
#[derive(Default)]
pub struct StageContext<'a> {
    pub discriminator: Option<&'a UNetDiscriminator>,
    pub extractor: Option<&'a dyn FeatureExtractor>,
    pub autoencoder: Option<&'a dyn AutoencoderAdapter>,
}

impl StageContext<'_> {
    fn check(&self, config: &StageConfig) -> Result<()> {
        config.validate()?;
        let need = |term: &str| config.weight(term) > 0.0;
        if config.uses_gan() && self.discriminator.is_none() {
            return Err(Error::Config(format!("stage `{}` uses a GAN loss but has no discriminator", config.name)));
        }
        if (need("perceptual") || need("lpips")) && self.extractor.is_none() {
            return Err(Error::Config(format!("stage `{}` needs a feature extractor", config.name)));
        }
        if need("aesop") && self.autoencoder.is_none() {
            return Err(Error::Config(format!("stage `{}` needs an autoencoder adapter", config.name)));
        }
        Ok(())
    }
}

/// Weighted generator loss. Returns the differentiable total and the
/// per-term values.
pub fn generator_loss(
    sr: &Tensor,
    hr: &Tensor,
    config: &StageConfig,
    ctx: &StageContext,
) -> Result<(Tensor, LossBundle)> {
    ctx.check(config)?;
    let mut total: Option<Tensor> = None;
    let mut components = BTreeMap::new();
    for (name, &w) in &config.loss_terms {
        if w == 0.0 {
            continue;
        }
        let value = match name.as_str() {
            "l1" => loss_l1(sr, hr)?,
            "mse" => loss_mse(sr, hr)?,
            "fft_l1" => loss_fft_l1(sr, hr)?,
            "perceptual" | "lpips" => loss_perceptual(sr, hr, ctx.extractor.expect("checked"))?,
            "ldl" => loss_ldl(sr, hr, config.ldl_window)?,
            "aesop" => loss_aesop(sr, hr, ctx.autoencoder.expect("checked"))?,
            "gan" => {
                let fake = ctx.discriminator.expect("checked").forward(sr)?;
                loss_gan(None, &fake, GanSide::Generator)?
            }
            other => unreachable!("validated loss name {other}"),
        };
        components.insert(name.clone(), f64::from(value.to_scalar::<f32>()?));
        let weighted = (value * w)?;
        total = Some(match total {
            Some(t) => (t + weighted)?,
            None => weighted,
        });
    }
    let total = total.ok_or_else(|| Error::Config(format!("stage `{}` has only zero-weight terms", config.name)))?;
    let value = f64::from(total.to_scalar::<f32>()?);
    Ok((total, LossBundle { total: value, components }))
}

/// Low/high resolution training pairs held in memory.
pub struct TrainData {
    pub pairs: Vec<(ImagePlane, ImagePlane)>,
    pub scale: usize,
}

impl TrainData {
    pub fn new(pairs: Vec<(ImagePlane, ImagePlane)>, scale: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (lr, hr) in &pairs {
            let (lh, lw) = lr.dims();
            let (hh, hw) = hr.dims();
            if hh < lh * scale || hw < lw * scale {
                return Err(Error::Shape(format!(
                    "high-resolution image {hh}×{hw} is smaller than {scale}× its low-resolution pair {lh}×{lw}"
                )));
            }
        }
        Ok(Self { pairs, scale })
    }

    /// Loads every pair listed in a `manifest.json`.
    pub fn from_manifest(path: &Path, scale: usize) -> Result<Self> {
        let manifest = PairManifest::load(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let pairs = manifest
            .pairs
            .iter()
            .map(|p| {
                Ok((
                    ImagePlane::load(PairManifest::resolve(dir, &p.lr_path))?,
                    ImagePlane::load(PairManifest::resolve(dir, &p.hr_path))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, scale)
    }

    /// Random aligned crops with optional flips, as `(lr, hr)` batches.
    pub fn sample(&self, rng: &mut ChaCha8Rng, batch: usize, patch: usize, flips: bool) -> Result<(Tensor, Tensor)> {
        let s = self.scale;
        if patch % s != 0 {
            return Err(Error::Config(format!("patch {patch} is not a multiple of the scale {s}")));
        }
        let lp = patch / s;
        let mut lr_buf = Vec::with_capacity(batch * 3 * lp * lp);
        let mut hr_buf = Vec::with_capacity(batch * 3 * patch * patch);
        for _ in 0..batch {
            let (lr, hr) = &self.pairs[rng.gen_range(0..self.pairs.len())];
            let (lh, lw) = lr.dims();
            if lh < lp || lw < lp {
                return Err(Error::Shape(format!("low-resolution image {lh}×{lw} is smaller than the {lp}-pixel crop")));
            }
            let y = rng.gen_range(0..=lh - lp);
            let x = rng.gen_range(0..=lw - lp);
            let (fh, fv) = if flips { (rng.gen_bool(0.5), rng.gen_bool(0.5)) } else { (false, false) };
            crop_into(&mut lr_buf, lr, y, x, lp, fh, fv);
            crop_into(&mut hr_buf, hr, y * s, x * s, patch, fh, fv);
        }
        let dev = Device::Cpu;
        Ok((
            Tensor::from_vec(lr_buf, (batch, 3, lp, lp), &dev)?,
            Tensor::from_vec(hr_buf, (batch, 3, patch, patch), &dev)?,
        ))
    }
}

fn crop_into(buf: &mut Vec<f32>, img: &ImagePlane, y0: usize, x0: usize, size: usize, flip_h: bool, flip_v: bool) {
    for c in 0..3 {
        for dy in 0..size {
            let y = y0 + if flip_v { size - 1 - dy } else { dy };
            for dx in 0..size {
                let x = x0 + if flip_h { size - 1 - dx } else { dx };
                buf.push(img.get(y, x, c));
            }
        }
    }
}

/// One line of the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    pub losses: LossBundle,
    pub disc_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub checkpoint: PathBuf,
    pub ema_checkpoint: PathBuf,
    pub trace_path: PathBuf,
    pub trace: Vec<TraceRow>,
}

fn write_trace(path: &Path, config: &StageConfig, trace: &[TraceRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let names: Vec<&String> = config.loss_terms.iter().filter(|(_, &w)| w > 0.0).map(|(n, _)| n).collect();
    let mut header = vec!["iteration".to_string(), "lr".into(), "total".into()];
    header.extend(names.iter().map(|n| n.to_string()));
    if config.uses_gan() {
        header.push("disc".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in trace {
        let mut rec = vec![row.iteration.to_string(), row.lr.to_string(), row.losses.total.to_string()];
        rec.extend(names.iter().map(|n| row.losses.components[*n].to_string()));
        if let Some(d) = row.disc_loss {
            rec.push(d.to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains `model` for one stage and writes `<name>.safetensors`,
/// `<name>_ema.safetensors` and `<name>_trace.csv` into `out_dir`.
///
/// A non-finite loss stops the run before the offending update is
/// applied; the error names the most recent periodic checkpoint.
pub fn run_stage(
    model: &dyn SrModel,
    kind: ModelKind,
    data: &TrainData,
    config: &StageConfig,
    ctx: &StageContext,
    seed: u64,
    out_dir: &Path,
) -> Result<StageOutcome> {
    ctx.check(config)?;
    if data.scale != model.spec().scale {
        return Err(Error::Config(format!(
            "data scale {} differs from model scale {}",
            data.scale,
            model.spec().scale
        )));
    }
    if config.uses_gan() && config.patch_size % 8 != 0 {
        return Err(Error::Config(format!("GAN stages need a patch size divisible by 8, got {}", config.patch_size)));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let adam = |vars, lr| {
        AdamW::new(
            vars,
            ParamsAdamW {
                lr,
                beta1: config.optimizer.beta1,
                beta2: config.optimizer.beta2,
                eps: config.optimizer.eps,
                weight_decay: 0.0,
            },
        )
    };
    let mut opt_g = adam(model.params().trainable_vars(), config.lr_max)?;
    let mut opt_d = match ctx.discriminator.filter(|_| config.uses_gan()) {
        Some(d) => Some(adam(d.params().trainable_vars(), config.disc_lr.unwrap_or(config.lr_max))?),
        None => None,
    };
    let mut ema = EmaState::new(model.params(), config.ema_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let manifest = CheckpointManifest::of(kind, model);
    let mut last_good: Option<PathBuf> = None;
    let mut trace = Vec::with_capacity(config.iterations);
    model.set_training(true);

    for t in 0..config.iterations {
        let lr = cosine_lr(t, config.iterations, config.lr_max, config.lr_min)?;
        let (lr_batch, hr_batch) = data.sample(&mut rng, config.batch_size, config.patch_size, config.flips)?;
        let sr = model.forward(&lr_batch)?;
        let (loss, bundle) = generator_loss(&sr, &hr_batch, config, ctx)?;
        if !bundle.total.is_finite() {
            model.set_training(false);
            return Err(Error::NonFiniteLoss { iteration: t, last_good });
        }
        opt_g.set_learning_rate(lr);
        opt_g.backward_step(&loss)?;

        let mut disc_loss = None;
        if let (Some(d), Some(opt)) = (ctx.discriminator, opt_d.as_mut()) {
            let real = d.forward(&hr_batch)?;
            let fake = d.forward(&sr.detach())?;
            let ld = loss_gan(Some(&real), &fake, GanSide::Discriminator)?;
            let value = f64::from(ld.to_scalar::<f32>()?);
            if !value.is_finite() {
                model.set_training(false);
                return Err(Error::NonFiniteLoss { iteration: t, last_good });
            }
            if config.disc_lr.is_none() {
                opt.set_learning_rate(lr);
            }
            opt.backward_step(&ld)?;
            disc_loss = Some(value);
        }
        ema.update_from(model.params())?;
        log::debug!("{} iter {t}: lr {lr:.3e} loss {:.6}", config.name, bundle.total);
        trace.push(TraceRow { iteration: t, lr, losses: bundle, disc_loss });

        if let Some(every) = config.checkpoint_every {
            if (t + 1) % every == 0 && t + 1 < config.iterations {
                let path = out_dir.join(format!("{}_iter{}.safetensors", config.name, t + 1));
                checkpoint::save(&path, kind, model)?;
                last_good = Some(path);
            }
        }
    }
    model.set_training(false);

    let checkpoint = out_dir.join(format!("{}.safetensors", config.name));
    checkpoint::save(&checkpoint, kind, model)?;
    let ema_checkpoint = out_dir.join(format!("{}_ema.safetensors", config.name));
    checkpoint::save_named(&ema_checkpoint, &manifest, &ema.shadow)?;
    let trace_path = out_dir.join(format!("{}_trace.csv", config.name));
    write_trace(&trace_path, config, &trace)?;
    Ok(StageOutcome { checkpoint, ema_checkpoint, trace_path, trace })
}
