//! Seeded second-order degradation pipeline (blur → resize → noise →
//! JPEG, twice, then a final resize with sinc/JPEG in either order) and
//! training-pair synthesis.
//!
//! Defaults follow the public Real-ESRGAN ranges. Every sampled value is
//! recorded in a [`DegradationTrace`].

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

pub mod kernel;
pub mod ops;

pub use kernel::{make_blur_kernel, BlurKind, BlurSpec, Kernel2d};
pub use ops::{filter2d, jpeg_roundtrip, resize, usm_sharpen, ResizeMode};

/// Weighted choice of a non-sinc blur family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedBlur {
    pub kind: BlurKind,
    pub weight: f64,
}

/// Sampling ranges for one blur step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurConfig {
    /// Probability that the step blurs at all.
    pub prob: f64,
    /// Probability of a sinc kernel instead of the weighted families.
    pub sinc_prob: f64,
    pub kinds: Vec<WeightedBlur>,
    /// Probability that generalized/plateau kernels are anisotropic.
    pub anisotropic_prob: f64,
    pub kernel_size_range: [usize; 2],
    pub sigma_range: [f64; 2],
    pub beta_gaussian_range: [f64; 2],
    pub beta_plateau_range: [f64; 2],
}

impl BlurConfig {
    pub fn none() -> Self {
        Self {
            prob: 0.0,
            ..Self::stage1()
        }
    }

    pub fn stage1() -> Self {
        Self {
            prob: 1.0,
            sinc_prob: 0.1,
            kinds: vec![
                WeightedBlur { kind: BlurKind::IsoGaussian, weight: 0.45 },
                WeightedBlur { kind: BlurKind::AnisoGaussian, weight: 0.25 },
                WeightedBlur { kind: BlurKind::GeneralizedGaussian, weight: 0.15 },
                WeightedBlur { kind: BlurKind::Plateau, weight: 0.15 },
            ],
            anisotropic_prob: 0.2,
            kernel_size_range: [7, 21],
            sigma_range: [0.2, 3.0],
            beta_gaussian_range: [0.5, 4.0],
            beta_plateau_range: [1.0, 2.0],
        }
    }

    pub fn stage2() -> Self {
        Self {
            prob: 0.8,
            sigma_range: [0.2, 1.5],
            ..Self::stage1()
        }
    }
}

/// What a stage's resize factor multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeReference {
    /// The current image size.
    #[default]
    Current,
    /// The final low-resolution size.
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeSpec {
    /// Probabilities of up-, down- and no scaling; must sum to 1.
    pub up_down_keep: [f64; 3],
    pub up_range: [f64; 2],
    pub down_range: [f64; 2],
    pub modes: Vec<ResizeMode>,
    #[serde(default)]
    pub reference: ResizeReference,
}

impl ResizeSpec {
    pub fn keep() -> Self {
        Self {
            up_down_keep: [0.0, 0.0, 1.0],
            up_range: [1.0, 1.0],
            down_range: [1.0, 1.0],
            modes: vec![ResizeMode::Area],
            reference: ResizeReference::Current,
        }
    }

    /// Always scales the current size by `factor` with `mode`.
    pub fn fixed(factor: f64, mode: ResizeMode) -> Self {
        Self {
            up_down_keep: [0.0, 1.0, 0.0],
            up_range: [1.0, 1.0],
            down_range: [factor, factor],
            modes: vec![mode],
            reference: ResizeReference::Current,
        }
    }

    pub fn stage1() -> Self {
        Self {
            up_down_keep: [0.2, 0.7, 0.1],
            up_range: [1.0, 1.5],
            down_range: [0.15, 1.0],
            modes: vec![ResizeMode::Area, ResizeMode::Bilinear, ResizeMode::Bicubic],
            reference: ResizeReference::Current,
        }
    }

    pub fn stage2() -> Self {
        Self {
            up_down_keep: [0.3, 0.4, 0.3],
            up_range: [1.0, 1.2],
            down_range: [0.3, 1.0],
            reference: ResizeReference::Target,
            ..Self::stage1()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability that the step adds noise at all.
    pub prob: f64,
    /// Probability of Gaussian (otherwise Poisson) noise.
    pub gaussian_prob: f64,
    /// Gaussian sigma range in 8-bit levels.
    pub gaussian_sigma_range: [f64; 2],
    pub poisson_scale_range: [f64; 2],
    pub gray_noise_prob: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            prob: 0.0,
            ..Self::stage1()
        }
    }

    pub fn stage1() -> Self {
        Self {
            prob: 1.0,
            gaussian_prob: 0.5,
            gaussian_sigma_range: [1.0, 30.0],
            poisson_scale_range: [0.05, 3.0],
            gray_noise_prob: 0.4,
        }
    }

    pub fn stage2() -> Self {
        Self {
            gaussian_sigma_range: [1.0, 25.0],
            poisson_scale_range: [0.05, 2.5],
            ..Self::stage1()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub blur: BlurConfig,
    pub resize: ResizeSpec,
    pub noise: NoiseSpec,
    /// Inclusive JPEG quality range; `None` skips compression.
    pub jpeg_quality_range: Option<[u8; 2]>,
}

impl StageSpec {
    pub fn identity() -> Self {
        Self {
            blur: BlurConfig::none(),
            resize: ResizeSpec::keep(),
            noise: NoiseSpec::none(),
            jpeg_quality_range: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalOrder {
    SincThenJpeg,
    JpegThenSinc,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsmSpec {
    pub radius: f64,
    pub weight: f64,
    pub threshold: f64,
}

impl Default for UsmSpec {
    fn default() -> Self {
        Self {
            radius: 51.0,
            weight: 0.5,
            threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationRecipe {
    pub seed: u64,
    pub stages: [StageSpec; 2],
    pub final_sinc_prob: f64,
    pub final_sinc_kernel_range: [usize; 2],
    pub final_sinc_cutoff_range: [f64; 2],
    pub final_order: FinalOrder,
    pub final_jpeg_quality_range: Option<[u8; 2]>,
    /// Modes for the exact-size correction resize.
    pub final_resize_modes: Vec<ResizeMode>,
    pub target_scale: usize,
    /// Ground-truth sharpening applied to the HR side of synthesized pairs.
    #[serde(default)]
    pub gt_usm: Option<UsmSpec>,
}

impl Default for DegradationRecipe {
    fn default() -> Self {
        Self {
            seed: 0,
            stages: [
                StageSpec {
                    blur: BlurConfig::stage1(),
                    resize: ResizeSpec::stage1(),
                    noise: NoiseSpec::stage1(),
                    jpeg_quality_range: Some([30, 95]),
                },
                StageSpec {
                    blur: BlurConfig::stage2(),
                    resize: ResizeSpec::stage2(),
                    noise: NoiseSpec::stage2(),
                    jpeg_quality_range: Some([30, 95]),
                },
            ],
            final_sinc_prob: 0.8,
            final_sinc_kernel_range: [7, 21],
            final_sinc_cutoff_range: [std::f64::consts::PI / 3.0, std::f64::consts::PI],
            final_order: FinalOrder::Random,
            final_jpeg_quality_range: Some([30, 95]),
            final_resize_modes: vec![ResizeMode::Area, ResizeMode::Bilinear, ResizeMode::Bicubic],
            target_scale: 4,
            gt_usm: None,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} is not a probability")))
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
    if r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} range {r:?} is reversed")))
    }
}

fn check_quality(name: &str, q: &Option<[u8; 2]>) -> Result<()> {
    if let Some(r) = q {
        check_range(name, r)?;
        if r[0] < 30 || r[1] > 95 {
            return Err(Error::Config(format!("{name} {r:?} must lie within [30, 95]")));
        }
    }
    Ok(())
}

fn check_kernel_sizes(name: &str, r: &[usize; 2]) -> Result<()> {
    check_range(name, r)?;
    if r[0] < 7 || r[1] > 21 || r[0] % 2 == 0 || r[1] % 2 == 0 {
        return Err(Error::Config(format!("{name} {r:?} must be odd sizes within [7, 21]")));
    }
    Ok(())
}

impl DegradationRecipe {
    /// Parses a TOML recipe file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let r: Self = toml::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_scale != 4 {
            return Err(Error::Config(format!("target_scale must be 4, got {}", self.target_scale)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let p = |f: &str| format!("stages[{i}].{f}");
            check_prob(&p("blur.prob"), s.blur.prob)?;
            check_prob(&p("blur.sinc_prob"), s.blur.sinc_prob)?;
            check_prob(&p("blur.anisotropic_prob"), s.blur.anisotropic_prob)?;
            check_kernel_sizes(&p("blur.kernel_size_range"), &s.blur.kernel_size_range)?;
            check_range(&p("blur.sigma_range"), &s.blur.sigma_range)?;
            check_range(&p("blur.beta_gaussian_range"), &s.blur.beta_gaussian_range)?;
            check_range(&p("blur.beta_plateau_range"), &s.blur.beta_plateau_range)?;
            if s.blur.sigma_range[0] <= 0.0 {
                return Err(Error::Config(format!("{} must be positive", p("blur.sigma_range"))));
            }
            if s.blur.prob > 0.0 && s.blur.sinc_prob < 1.0 {
                if s.blur.kinds.is_empty() || s.blur.kinds.iter().any(|k| k.weight < 0.0 || k.kind == BlurKind::Sinc) {
                    return Err(Error::Config(format!(
                        "{} needs nonnegative weights over non-sinc kinds",
                        p("blur.kinds")
                    )));
                }
            }
            for (j, &q) in s.resize.up_down_keep.iter().enumerate() {
                check_prob(&p(&format!("resize.up_down_keep[{j}]")), q)?;
            }
            if (s.resize.up_down_keep.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{} must sum to 1", p("resize.up_down_keep"))));
            }
            check_range(&p("resize.up_range"), &s.resize.up_range)?;
            check_range(&p("resize.down_range"), &s.resize.down_range)?;
            if s.resize.down_range[0] <= 0.0 || s.resize.modes.is_empty() {
                return Err(Error::Config(format!("{} needs positive factors and a mode", p("resize"))));
            }
            check_prob(&p("noise.prob"), s.noise.prob)?;
            check_prob(&p("noise.gaussian_prob"), s.noise.gaussian_prob)?;
            check_prob(&p("noise.gray_noise_prob"), s.noise.gray_noise_prob)?;
            check_range(&p("noise.gaussian_sigma_range"), &s.noise.gaussian_sigma_range)?;
            check_range(&p("noise.poisson_scale_range"), &s.noise.poisson_scale_range)?;
            if s.noise.gaussian_sigma_range[0] < 0.0 || s.noise.poisson_scale_range[0] < 0.0 {
                return Err(Error::Config(format!("{} strengths must be nonnegative", p("noise"))));
            }
            check_quality(&p("jpeg_quality_range"), &s.jpeg_quality_range)?;
        }
        check_prob("final_sinc_prob", self.final_sinc_prob)?;
        check_kernel_sizes("final_sinc_kernel_range", &self.final_sinc_kernel_range)?;
        check_range("final_sinc_cutoff_range", &self.final_sinc_cutoff_range)?;
        if self.final_sinc_cutoff_range[0] <= 0.0 {
            return Err(Error::Config("final_sinc_cutoff_range must be positive".into()));
        }
        check_quality("final_jpeg_quality_range", &self.final_jpeg_quality_range)?;
        if self.final_resize_modes.is_empty() {
            return Err(Error::Config("final_resize_modes is empty".into()));
        }
        if let Some(u) = &self.gt_usm {
            if u.weight < 0.0 {
                return Err(Error::Config("gt_usm.weight must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResizeTrace {
    pub mode: ResizeMode,
    pub factor: f64,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrace {
    pub kind: NoiseKind,
    /// Gaussian sigma in 8-bit levels, or the Poisson scale.
    pub strength: f64,
    pub gray: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub blur: Option<BlurSpec>,
    pub resize: Option<ResizeTrace>,
    pub noise: Option<NoiseTrace>,
    pub jpeg_quality: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalTrace {
    pub resize: Option<ResizeTrace>,
    pub sinc_first: bool,
    pub sinc: Option<BlurSpec>,
    pub jpeg_quality: Option<u8>,
}

/// Every value sampled while degrading one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationTrace {
    pub seed: u64,
    pub stages: Vec<StageTrace>,
    #[serde(rename = "final")]
    pub final_step: FinalTrace,
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn odd_size(rng: &mut impl Rng, r: [usize; 2]) -> usize {
    let choices: Vec<usize> = (r[0]..=r[1]).filter(|k| k % 2 == 1).collect();
    *choices.choose(rng).expect("validated range has an odd size")
}

fn quality(rng: &mut impl Rng, r: [u8; 2]) -> u8 {
    rng.gen_range(r[0]..=r[1])
}

fn sample_blur(cfg: &BlurConfig, rng: &mut impl Rng) -> BlurSpec {
    let kernel_size = odd_size(rng, cfg.kernel_size_range);
    if rng.gen::<f64>() < cfg.sinc_prob {
        // smaller kernels get a higher cutoff floor to limit ringing
        let lo = if kernel_size < 13 { std::f64::consts::PI / 3.0 } else { std::f64::consts::PI / 5.0 };
        return BlurSpec::sinc(kernel_size, rng.gen_range(lo..std::f64::consts::PI));
    }
    let total: f64 = cfg.kinds.iter().map(|k| k.weight).sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut kind = cfg.kinds[0].kind;
    for k in &cfg.kinds {
        if pick < k.weight {
            kind = k.kind;
            break;
        }
        pick -= k.weight;
    }
    let anisotropic = match kind {
        BlurKind::IsoGaussian => false,
        BlurKind::AnisoGaussian => true,
        _ => rng.gen::<f64>() < cfg.anisotropic_prob,
    };
    let sigma_x = uniform(rng, cfg.sigma_range);
    let (sigma_y, rotation) = if anisotropic {
        (uniform(rng, cfg.sigma_range), rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
    } else {
        (sigma_x, 0.0)
    };
    let beta = match kind {
        BlurKind::GeneralizedGaussian => uniform(rng, cfg.beta_gaussian_range),
        BlurKind::Plateau => uniform(rng, cfg.beta_plateau_range),
        _ => 1.0,
    };
    BlurSpec {
        kind,
        kernel_size,
        sigma_x,
        sigma_y,
        rotation,
        beta,
        cutoff: 0.0,
    }
}

fn apply_stage(
    img: ImagePlane,
    stage: &StageSpec,
    target: (usize, usize),
    rng: &mut impl Rng,
) -> Result<(ImagePlane, StageTrace)> {
    let mut trace = StageTrace::default();
    let mut img = img;
    if rng.gen::<f64>() < stage.blur.prob {
        let spec = sample_blur(&stage.blur, rng);
        img = filter2d(&img, &make_blur_kernel(&spec)?)?;
        trace.blur = Some(spec);
    }

    let r = &stage.resize;
    let u = rng.gen::<f64>();
    let factor = if u < r.up_down_keep[0] {
        uniform(rng, r.up_range)
    } else if u < r.up_down_keep[0] + r.up_down_keep[1] {
        uniform(rng, r.down_range)
    } else {
        1.0
    };
    let mode = *r.modes.choose(rng).expect("validated non-empty");
    let (bh, bw) = match r.reference {
        ResizeReference::Current => img.dims(),
        ResizeReference::Target => target,
    };
    let size = |n: usize| ((n as f64 * factor).round() as usize).max(1);
    let (nh, nw) = (size(bh), size(bw));
    if (nh, nw) != img.dims() {
        img = resize(&img, nh, nw, mode)?;
        trace.resize = Some(ResizeTrace { mode, factor, height: nh, width: nw });
    }

    if rng.gen::<f64>() < stage.noise.prob {
        let n = &stage.noise;
        let gaussian = rng.gen::<f64>() < n.gaussian_prob;
        let gray = rng.gen::<f64>() < n.gray_noise_prob;
        let (kind, strength) = if gaussian {
            let s = uniform(rng, n.gaussian_sigma_range);
            img = ops::add_gaussian_noise(&img, s / 255.0, gray, rng)?;
            (NoiseKind::Gaussian, s)
        } else {
            let s = uniform(rng, n.poisson_scale_range);
            img = ops::add_poisson_noise(&img, s, gray, rng)?;
            (NoiseKind::Poisson, s)
        };
        trace.noise = Some(NoiseTrace { kind, strength, gray });
    }

    if let Some(range) = stage.jpeg_quality_range {
        let q = quality(rng, range);
        img = jpeg_roundtrip(&img, q)?;
        trace.jpeg_quality = Some(q);
    }
    Ok((img, trace))
}

/// Degrades `hr` to `H/4 × W/4` with the recipe's own seed.
pub fn degrade(hr: &ImagePlane, recipe: &DegradationRecipe) -> Result<(ImagePlane, DegradationTrace)> {
    degrade_seeded(hr, recipe, recipe.seed)
}

/// Degrades with an explicit per-image seed.
pub fn degrade_seeded(hr: &ImagePlane, recipe: &DegradationRecipe, seed: u64) -> Result<(ImagePlane, DegradationTrace)> {
    recipe.validate()?;
    let s = recipe.target_scale;
    let (h, w) = hr.dims();
    if h % s != 0 || w % s != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not divisible by {s}")));
    }
    let target = (h / s, w / s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = DegradationTrace { seed, ..Default::default() };
    let mut img = hr.clone();
    for stage in &recipe.stages {
        let (next, t) = apply_stage(img, stage, target, &mut rng)?;
        img = next;
        trace.stages.push(t);
    }

    let fin = &mut trace.final_step;
    if img.dims() != target {
        let mode = *recipe.final_resize_modes.choose(&mut rng).expect("validated non-empty");
        let factor = target.0 as f64 / img.height() as f64;
        img = resize(&img, target.0, target.1, mode)?;
        fin.resize = Some(ResizeTrace { mode, factor, height: target.0, width: target.1 });
    }
    fin.sinc_first = match recipe.final_order {
        FinalOrder::SincThenJpeg => true,
        FinalOrder::JpegThenSinc => false,
        FinalOrder::Random => rng.gen::<bool>(),
    };
    let sinc = (rng.gen::<f64>() < recipe.final_sinc_prob).then(|| {
        BlurSpec::sinc(
            odd_size(&mut rng, recipe.final_sinc_kernel_range),
            uniform(&mut rng, recipe.final_sinc_cutoff_range),
        )
    });
    let q = recipe.final_jpeg_quality_range.map(|r| quality(&mut rng, r));
    let apply_sinc = |img: ImagePlane| -> Result<ImagePlane> {
        match &sinc {
            Some(spec) => filter2d(&img, &make_blur_kernel(spec)?),
            None => Ok(img),
        }
    };
    let apply_jpeg = |img: ImagePlane| -> Result<ImagePlane> {
        match q {
            Some(q) => jpeg_roundtrip(&img, q),
            None => Ok(img),
        }
    };
    img = if fin.sinc_first {
        apply_jpeg(apply_sinc(img)?)?
    } else {
        apply_sinc(apply_jpeg(img)?)?
    };
    fin.sinc = sinc;
    fin.jpeg_quality = q;
    Ok((img, trace))
}

/// Seed for the image at `index` of the sorted input list.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    /// Relative to the manifest directory.
    pub lr_path: PathBuf,
    /// Relative to the manifest directory when the HR was rewritten
    /// (sharpened); otherwise the source path.
    pub hr_path: PathBuf,
    pub seed: u64,
    pub trace: DegradationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub recipe: DegradationRecipe,
    pub pairs: Vec<PairRecord>,
    pub skipped: Vec<PathBuf>,
}

impl PairManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Resolves a manifest-relative path.
    pub fn resolve(manifest_dir: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }
}

/// Regular files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Degrades every image in `hr_dir` and writes `lr/*.png` (plus
/// sharpened `gt/*.png` when the recipe asks for it) and `manifest.json`
/// into `out_dir`. Undecodable files are logged and skipped.
pub fn synthesize_pairs(hr_dir: &Path, recipe: &DegradationRecipe, out_dir: &Path) -> Result<PairManifest> {
    recipe.validate()?;
    let files = list_images(hr_dir)?;
    let lr_dir = out_dir.join("lr");
    std::fs::create_dir_all(&lr_dir).map_err(|e| Error::io(&lr_dir, e))?;
    if recipe.gt_usm.is_some() {
        let gt = out_dir.join("gt");
        std::fs::create_dir_all(&gt).map_err(|e| Error::io(&gt, e))?;
    }
    let results: Vec<Result<Option<PairRecord>>> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let hr = match ImagePlane::load(path) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            let seed = derive_seed(recipe.seed, i as u64);
            let (lr, trace) = degrade_seeded(&hr, recipe, seed)?;
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let lr_rel = PathBuf::from("lr").join(format!("{stem}.png"));
            lr.save_png(out_dir.join(&lr_rel))?;
            let hr_path = match &recipe.gt_usm {
                Some(u) => {
                    let rel = PathBuf::from("gt").join(format!("{stem}.png"));
                    usm_sharpen(&hr, u.radius, u.weight, u.threshold)?.save_png(out_dir.join(&rel))?;
                    rel
                }
                None => std::fs::canonicalize(path).map_err(|e| Error::io(path, e))?,
            };
            Ok(Some(PairRecord { lr_path: lr_rel, hr_path, seed, trace }))
        })
        .collect();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (path, r) in files.iter().zip(results) {
        match r? {
            Some(p) => pairs.push(p),
            None => skipped.push(path.clone()),
        }
    }
    let manifest = PairManifest { recipe: recipe.clone(), pairs, skipped };
    let mpath = out_dir.join(PairManifest::FILE_NAME);
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}
