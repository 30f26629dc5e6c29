//! The `epsr` command line: audit, degrade, train, infer, evaluate and
//! report.
//!
//! Exit codes: 0 on success, 1 on a domain failure (budget exceeded,
//! non-finite loss, unreadable data), 2 on a usage error. Every run that
//! gets past argument parsing appends one [`RunManifest`] line to
//! `<out>/runs.jsonl`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archzoo::{infer, ModelKind, ModelSpec, SrModel, TilingPolicy};
use crate::checkpoint;
use crate::degrade::{list_images, synthesize_pairs, DegradationRecipe};
use crate::efficiency::{audit, BudgetReport};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::score::{
    cards_from_csv, evaluate_dataset, render_leaderboard, ClassReport, ClassTable, MetricProvider, ProviderConfig,
    ScoreCard, ScoreWeights, CLASSES,
};
use crate::train::{
    build_unet_discriminator, run_stage, AutoencoderAdapter, FeatureExtractor, IdentityAutoencoder, IdentityExtractor,
    RandomConvExtractor, RandomLinearAutoencoder, StageConfig, StageContext, TrainData,
};

/// Version accepted in the `version` key of every config file.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "epsr", version, about = "Efficient perceptual super-resolution toolkit")]
pub struct Cli {
    /// Master seed for model initialization, degradation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Command configuration file (recipe, train config or provider list).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse::<ModelKind>().map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count parameters and GMACs at 3×540×960 and check the budget.
    Audit {
        #[arg(value_parser = parse_kind)]
        model: ModelKind,
        /// Audit the architecture stored in this checkpoint instead.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Synthesize low-resolution pairs from a folder of HR images.
    Degrade {
        hr_dir: PathBuf,
        /// Recipe file; the built-in second-order recipe when omitted.
        #[arg(long)]
        recipe: Option<PathBuf>,
    },
    /// Run a multi-stage training recipe.
    Train {
        /// Pair manifest written by `degrade`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Team recipe: vpeg, mialgo or ipiu.
        #[arg(long)]
        preset: Option<String>,
        /// Divide iterations by 1000 and batch sizes by 4.
        #[arg(long)]
        desk: bool,
        #[arg(long, value_parser = parse_kind)]
        model: Option<ModelKind>,
        /// Initial weights.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Super-resolve every image in a folder.
    Infer {
        lr_dir: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        model: Option<ModelKind>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Tile side in input pixels; whole-image when omitted.
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long, default_value_t = 16)]
        overlap: usize,
    },
    /// Score a folder of SR outputs, or replay a table of aggregates.
    Evaluate {
        sr_dir: Option<PathBuf>,
        /// Provider list file.
        #[arg(long)]
        providers: Option<PathBuf>,
        /// Use the built-in mean-intensity stub providers.
        #[arg(long)]
        stub: bool,
        /// ScoreCard whose aggregates are the Score denominator.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Card name; the folder name when omitted.
        #[arg(long)]
        name: Option<String>,
        /// JSON object mapping image ids or stems to class names.
        #[arg(long)]
        class_map: Option<PathBuf>,
        /// CSV of `method,<metric>...` aggregates to score instead.
        #[arg(long, conflicts_with = "sr_dir")]
        replay: Option<PathBuf>,
        /// Row of the replay table used as the baseline.
        #[arg(long, default_value = "Real-ESRGAN")]
        baseline_row: String,
    },
    /// Render a leaderboard and per-class tables from ScoreCards.
    Report {
        cards: Vec<PathBuf>,
        /// Long-format `method,class,<metric>...` CSV to summarize.
        #[arg(long)]
        class_table: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Audit { .. } => "audit",
            Command::Degrade { .. } => "degrade",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
        }
    }
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub toolkit_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub elapsed_ms: f64,
    pub exit_code: i32,
    pub error: Option<String>,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "runs.jsonl";

    /// Reads every manifest line in `dir/runs.jsonl`.
    pub fn read_all(dir: &Path) -> Result<Vec<Self>> {
        let path = dir.join(Self::FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

/// Folder of images, either flat or split into the ten category folders.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    /// Category → images; empty for a flat folder.
    pub classes: BTreeMap<String, Vec<PathBuf>>,
    pub flat: Vec<PathBuf>,
}

impl DatasetLayout {
    pub fn scan(root: &Path) -> Result<Self> {
        let mut classes = BTreeMap::new();
        let mut dirs = Vec::new();
        for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let path = entry.map_err(|e| Error::io(root, e))?.path();
            if path.is_dir() {
                dirs.push(path);
            }
        }
        for dir in dirs {
            let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            if !CLASSES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "`{}` is not one of the categories {}",
                    dir.display(),
                    CLASSES.join(", ")
                )));
            }
            classes.insert(name, list_images(&dir)?.into_iter().filter(|p| crate::score::is_image(p)).collect());
        }
        let flat = list_images(root)?.into_iter().filter(|p| crate::score::is_image(p)).collect();
        Ok(Self { root: root.to_path_buf(), classes, flat })
    }

    pub fn image_count(&self) -> usize {
        self.flat.len() + self.classes.values().map(Vec::len).sum::<usize>()
    }
}

struct Ctx {
    seed: u64,
    explicit_seed: bool,
    out: PathBuf,
    quiet: bool,
    config_hash: Option<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn input(&mut self, p: &Path) -> Result<()> {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
        self.inputs.push(p.to_path_buf());
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Reads a config file, checks its `version` key and records its hash.
    fn versioned<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        self.input(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.config_hash = Some(hex::encode(Sha256::digest(text.as_bytes())));
        let mut table: toml::Table = toml::from_str(&text)?;
        match table.remove("version") {
            Some(toml::Value::Integer(v)) if v == i64::from(CONFIG_VERSION) => {}
            Some(other) => {
                return Err(Error::Config(format!(
                    "{}: unsupported version {other} (expected {CONFIG_VERSION})",
                    path.display()
                )))
            }
            None => return Err(Error::Config(format!("{}: missing `version` key", path.display()))),
        }
        Ok(toml::Value::Table(table).try_into()?)
    }
}

/// Exit status for an error: configuration problems are usage errors.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Toml(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();

    let started = Instant::now();
    let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let mut ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        explicit_seed: cli.seed.is_some(),
        out: cli.out.clone(),
        quiet: cli.quiet,
        config_hash: None,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    let result = std::fs::create_dir_all(&cli.out)
        .map_err(|e| Error::io(&cli.out, e))
        .and_then(|_| dispatch(&cli, &mut ctx));
    let (code, error) = match result {
        Ok(code) => (code, None),
        Err(e) => {
            eprintln!("error: {e}");
            (exit_code(&e), Some(e.to_string()))
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().into(),
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        config_hash: ctx.config_hash.clone(),
        seed: ctx.seed,
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        inputs: ctx.inputs.clone(),
        outputs: ctx.outputs.clone(),
        started_unix_ms,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        exit_code: code,
        error,
    };
    if let Err(e) = append_manifest(&cli.out, &manifest) {
        eprintln!("error: cannot record run manifest: {e}");
        return code.max(1);
    }
    code
}

fn append_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    let path = dir.join(RunManifest::FILE_NAME);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(&path, e))
}

fn dispatch(cli: &Cli, ctx: &mut Ctx) -> Result<i32> {
    match &cli.command {
        Command::Audit { model, checkpoint } => cmd_audit(ctx, *model, checkpoint.as_deref()),
        Command::Degrade { hr_dir, recipe } => cmd_degrade(ctx, hr_dir, recipe.as_deref().or(cli.config.as_deref())),
        Command::Train { data, preset, desk, model, checkpoint } => {
            let opts = TrainArgs {
                data: data.clone(),
                preset: preset.clone(),
                desk: *desk,
                model: *model,
                checkpoint: checkpoint.clone(),
            };
            cmd_train(ctx, cli.config.as_deref(), opts)
        }
        Command::Infer { lr_dir, model, checkpoint, tile, overlap } => {
            let tiling = match tile {
                Some(t) => TilingPolicy::tiled(*t, *overlap),
                None => TilingPolicy::whole(),
            };
            cmd_infer(ctx, lr_dir, *model, checkpoint.as_deref(), tiling)
        }
        Command::Evaluate { sr_dir, providers, stub, baseline, name, class_map, replay, baseline_row } => {
            if let Some(table) = replay {
                return cmd_replay(ctx, table, baseline_row);
            }
            let sr_dir = sr_dir
                .as_deref()
                .ok_or_else(|| Error::Config("evaluate needs an SR folder or --replay".into()))?;
            let providers = providers.as_deref().or(cli.config.as_deref());
            cmd_evaluate(ctx, sr_dir, providers, *stub, baseline.as_deref(), name.as_deref(), class_map.as_deref())
        }
        Command::Report { cards, class_table } => cmd_report(ctx, cards, class_table.as_deref()),
    }
}

fn file_stem(p: &Path) -> String {
    p.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn load_or_build(ctx: &mut Ctx, kind: Option<ModelKind>, ckpt: Option<&Path>) -> Result<(ModelKind, Box<dyn SrModel>)> {
    match ckpt {
        Some(path) => {
            ctx.input(path)?;
            let (manifest, model) = checkpoint::load_model(path)?;
            if let Some(k) = kind {
                let compatible = k == manifest.architecture
                    || (k == ModelKind::EfdnFused && manifest.architecture == ModelKind::Efdn && manifest.fused);
                if !compatible {
                    return Err(Error::Config(format!(
                        "checkpoint holds {} but --model asks for {k}",
                        manifest.architecture
                    )));
                }
            }
            Ok((manifest.architecture, model))
        }
        None => {
            let kind = kind.ok_or_else(|| Error::Config("give --model or --checkpoint".into()))?;
            Ok((kind, kind.build(ctx.seed)?))
        }
    }
}

fn cmd_audit(ctx: &mut Ctx, kind: ModelKind, ckpt: Option<&Path>) -> Result<i32> {
    let (_, model) = load_or_build(ctx, Some(kind), ckpt)?;
    let report: BudgetReport = audit(model.as_ref())?;
    ctx.say(format!(
        "{}: {} parameters, {:.4} GMACs at {}x{}x{} -> {}",
        report.model,
        report.params,
        report.gmacs,
        report.input_size.0,
        report.input_size.1,
        report.input_size.2,
        if report.passed { "PASS" } else { "FAIL" }
    ));
    ctx.write(&format!("audit_{}.json", kind.name()), &serde_json::to_string_pretty(&report)?)?;
    Ok(if report.passed { 0 } else { 1 })
}

fn cmd_degrade(ctx: &mut Ctx, hr_dir: &Path, recipe_path: Option<&Path>) -> Result<i32> {
    ctx.input(hr_dir)?;
    let mut recipe = match recipe_path {
        Some(p) => ctx.versioned::<DegradationRecipe>(p)?,
        None => DegradationRecipe::default(),
    };
    if ctx.explicit_seed {
        recipe.seed = ctx.seed;
    } else {
        ctx.seed = recipe.seed;
    }
    recipe.validate()?;
    let manifest = synthesize_pairs(hr_dir, &recipe, &ctx.out)?;
    for p in &manifest.pairs {
        ctx.outputs.push(ctx.out.join(&p.lr_path));
    }
    ctx.outputs.push(ctx.out.join(crate::degrade::PairManifest::FILE_NAME));
    ctx.say(format!(
        "degraded {} images ({} skipped) into {}",
        manifest.pairs.len(),
        manifest.skipped.len(),
        ctx.out.display()
    ));
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorChoice {
    Random,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoencoderChoice {
    RandomLinear,
    Identity,
}

fn default_disc() -> usize {
    64
}

fn default_extractor() -> ExtractorChoice {
    ExtractorChoice::Random
}

fn default_autoencoder() -> AutoencoderChoice {
    AutoencoderChoice::RandomLinear
}

/// Contents of a `train` config file (besides `version`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: Option<ModelKind>,
    /// Overrides the builder's default hyperparameters.
    pub model_spec: Option<ModelSpec>,
    pub data: Option<PathBuf>,
    /// Team recipe used when `stages` is empty.
    pub recipe: Option<String>,
    #[serde(default)]
    pub desk: bool,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_disc")]
    pub discriminator_channels: usize,
    #[serde(default = "default_extractor")]
    pub extractor: ExtractorChoice,
    #[serde(default = "default_extractor_width")]
    pub extractor_width: usize,
    #[serde(default = "default_autoencoder")]
    pub autoencoder: AutoencoderChoice,
}

fn default_extractor_width() -> usize {
    16
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: None,
            model_spec: None,
            data: None,
            recipe: None,
            desk: false,
            stages: Vec::new(),
            discriminator_channels: default_disc(),
            extractor: default_extractor(),
            extractor_width: default_extractor_width(),
            autoencoder: default_autoencoder(),
        }
    }
}

struct TrainArgs {
    data: Option<PathBuf>,
    preset: Option<String>,
    desk: bool,
    model: Option<ModelKind>,
    checkpoint: Option<PathBuf>,
}

fn cmd_train(ctx: &mut Ctx, config: Option<&Path>, args: TrainArgs) -> Result<i32> {
    let mut cfg = match config {
        Some(p) => ctx.versioned::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    let config_dir = config.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
    if let Some(d) = args.data {
        cfg.data = Some(d);
    } else if let Some(d) = cfg.data.take() {
        cfg.data = Some(if d.is_relative() { config_dir.join(d) } else { d });
    }
    if args.preset.is_some() {
        cfg.recipe = args.preset;
        cfg.stages.clear();
    }
    cfg.desk |= args.desk;
    if args.model.is_some() {
        cfg.model = args.model;
    }
    let data_path = cfg.data.clone().ok_or_else(|| Error::Config("train needs --data".into()))?;
    ctx.input(&data_path)?;
    let mut stages = if cfg.stages.is_empty() {
        let team = cfg.recipe.as_deref().ok_or_else(|| Error::Config("train needs --preset or [[stages]]".into()))?;
        StageConfig::recipe(team)?
    } else {
        cfg.stages.clone()
    };
    if cfg.desk {
        stages = stages.iter().map(StageConfig::desk).collect();
    }
    for s in &stages {
        s.validate()?;
    }

    let (kind, model) = match (&args.checkpoint, cfg.model) {
        (Some(_), _) => load_or_build(ctx, cfg.model, args.checkpoint.as_deref())?,
        (None, Some(kind)) => {
            let spec = cfg.model_spec.clone().unwrap_or_else(|| kind.default_spec());
            (kind, kind.build_with(spec, ctx.seed)?)
        }
        (None, None) => return Err(Error::Config("train needs --model or a model in the config".into())),
    };
    let data = TrainData::from_manifest(&data_path, model.spec().scale)?;
    ctx.say(format!("training {} on {} pairs", model.spec().name, data.pairs.len()));

    let dev = candle_core::Device::Cpu;
    let needs_gan = stages.iter().any(StageConfig::uses_gan);
    let disc = if needs_gan {
        Some(build_unet_discriminator(cfg.discriminator_channels, ctx.seed.wrapping_add(1), &dev)?)
    } else {
        None
    };
    let extractor: Box<dyn FeatureExtractor> = match cfg.extractor {
        ExtractorChoice::Random => Box::new(RandomConvExtractor::new(ctx.seed.wrapping_add(2), cfg.extractor_width, &dev)),
        ExtractorChoice::Identity => Box::new(IdentityExtractor),
    };
    let autoencoder: Box<dyn AutoencoderAdapter> = match cfg.autoencoder {
        AutoencoderChoice::RandomLinear => Box::new(RandomLinearAutoencoder::new(ctx.seed.wrapping_add(3), 8, &dev)),
        AutoencoderChoice::Identity => Box::new(IdentityAutoencoder),
    };
    let stage_ctx = StageContext {
        discriminator: disc.as_ref(),
        extractor: Some(extractor.as_ref()),
        autoencoder: Some(autoencoder.as_ref()),
    };
    for (i, stage) in stages.iter().enumerate() {
        let seed = crate::degrade::derive_seed(ctx.seed, i as u64);
        let outcome = match run_stage(model.as_ref(), kind, &data, stage, &stage_ctx, seed, &ctx.out) {
            Ok(o) => o,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                eprintln!("error: {e}");
                return Ok(1);
            }
            Err(e) => return Err(e),
        };
        let first = outcome.trace.first().map(|r| r.losses.total).unwrap_or(f64::NAN);
        let last = outcome.trace.last().map(|r| r.losses.total).unwrap_or(f64::NAN);
        ctx.say(format!(
            "{}: {} iterations, loss {first:.5} -> {last:.5}, checkpoint {}",
            stage.name,
            stage.iterations,
            outcome.checkpoint.display()
        ));
        ctx.outputs.extend([outcome.checkpoint, outcome.ema_checkpoint, outcome.trace_path]);
    }
    Ok(0)
}

fn cmd_infer(
    ctx: &mut Ctx,
    lr_dir: &Path,
    kind: Option<ModelKind>,
    ckpt: Option<&Path>,
    tiling: TilingPolicy,
) -> Result<i32> {
    ctx.input(lr_dir)?;
    let (_, model) = load_or_build(ctx, kind, ckpt)?;
    if ckpt.is_none() {
        log::warn!("no checkpoint given; using randomly initialized weights (seed {})", ctx.seed);
    }
    let files: Vec<PathBuf> = list_images(lr_dir)?.into_iter().filter(|p| crate::score::is_image(p)).collect();
    if files.is_empty() {
        log::warn!("{} holds no images", lr_dir.display());
        ctx.say("no images to process");
        return Ok(0);
    }
    for path in files {
        let lr = ImagePlane::load(&path)?;
        let sr = infer(model.as_ref(), &lr, tiling)?;
        let out = ctx.out.join(format!("{}.png", file_stem(&path)));
        sr.save_png(&out)?;
        ctx.say(format!(
            "{} {}x{} -> {}x{}",
            out.display(),
            lr.width(),
            lr.height(),
            sr.width(),
            sr.height()
        ));
        ctx.outputs.push(out);
    }
    Ok(0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvidersFile {
    providers: Vec<ProviderConfig>,
}

fn cmd_evaluate(
    ctx: &mut Ctx,
    sr_dir: &Path,
    providers_path: Option<&Path>,
    stub: bool,
    baseline: Option<&Path>,
    name: Option<&str>,
    class_map: Option<&Path>,
) -> Result<i32> {
    ctx.input(sr_dir)?;
    let configs = match (providers_path, stub) {
        (Some(_), true) => return Err(Error::Config("give either --providers or --stub".into())),
        (Some(p), false) => ctx.versioned::<ProvidersFile>(p)?.providers,
        (None, true) => ProviderConfig::stubs(),
        (None, false) => return Err(Error::Config("evaluate needs --providers or --stub".into())),
    };
    let providers = configs.iter().map(ProviderConfig::build).collect::<Result<Vec<Box<dyn MetricProvider>>>>()?;
    let map: Option<BTreeMap<String, String>> = match class_map {
        Some(p) => {
            ctx.input(p)?;
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };
    let layout = DatasetLayout::scan(sr_dir)?;
    if layout.image_count() == 0 {
        return Err(Error::EmptyInput);
    }
    let name = name.map(String::from).unwrap_or_else(|| file_stem(sr_dir));
    let mut card = evaluate_dataset(&name, sr_dir, &providers, map.as_ref())?;
    if let Some(b) = baseline {
        ctx.input(b)?;
        let base = ScoreCard::load(b)?;
        card = card.with_baseline(&base.aggregate, &ScoreWeights::challenge())?;
    }
    let path = ctx.out.join(format!("{}.scorecard.json", safe_name(&name)));
    card.save(&path)?;
    ctx.outputs.push(path.clone());
    let metrics: Vec<String> = card.aggregate.iter().map(|m| format!("{} {:.4}", m.name, m.value)).collect();
    ctx.say(format!(
        "{name}: {} images, {}{}, {} warnings -> {}",
        card.per_image.len(),
        metrics.join(", "),
        card.score.map(|s| format!(", Score {s:.4}")).unwrap_or_default(),
        card.warnings,
        path.display()
    ));
    Ok(0)
}

fn cmd_replay(ctx: &mut Ctx, table: &Path, baseline_row: &str) -> Result<i32> {
    ctx.input(table)?;
    let text = std::fs::read_to_string(table).map_err(|e| Error::io(table, e))?;
    let cards = cards_from_csv(&text, baseline_row, &ScoreWeights::challenge())?;
    for card in &cards {
        let path = ctx.out.join(format!("{}.scorecard.json", safe_name(&card.name)));
        card.save(&path)?;
        ctx.outputs.push(path);
        ctx.say(format!("{:<16} Score {:.4}", card.name, card.score.unwrap_or(f64::NAN)));
    }
    Ok(0)
}

fn cmd_report(ctx: &mut Ctx, card_paths: &[PathBuf], class_table: Option<&Path>) -> Result<i32> {
    if card_paths.is_empty() && class_table.is_none() {
        return Err(Error::Config("report needs ScoreCard files or --class-table".into()));
    }
    let mut cards = Vec::new();
    for p in card_paths {
        ctx.input(p)?;
        cards.push(ScoreCard::load(p)?);
    }
    if !cards.is_empty() {
        let board = render_leaderboard(&cards)?;
        ctx.write("leaderboard.csv", &board.to_csv()?)?;
        ctx.write("leaderboard.json", &board.to_json()?)?;
        let text = board.to_text();
        ctx.write("leaderboard.txt", &text)?;
        ctx.say(text);

        let mut any = false;
        for card in &cards {
            if let Some(report) = ClassReport::from_card(card)? {
                any = true;
                let base = format!("per_class_{}", safe_name(&card.name));
                ctx.write(&format!("{base}.csv"), &report.to_csv()?)?;
                let text = report.to_text();
                ctx.write(&format!("{base}.txt"), &text)?;
                ctx.say(text);
            }
        }
        if any {
            if let Some(stats) = ClassTable::from_cards(&cards)? {
                ctx.write("class_stats.csv", &stats.to_csv()?)?;
                ctx.write("class_stats.txt", &stats.to_text())?;
            }
        } else {
            ctx.say("no class labels in these cards; per-class section omitted");
        }
    }
    if let Some(path) = class_table {
        ctx.input(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stats = ClassTable::from_csv(&text)?;
        ctx.write("class_table_stats.csv", &stats.to_csv()?)?;
        let text = stats.to_text();
        ctx.write("class_table_stats.txt", &text)?;
        ctx.say(text);
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["epsr", "--out", out, "audit", "nosuchmodel"]), 2);
        assert_eq!(run(["epsr", "--out", out, "frobnicate"]), 2);
        let missing = dir.path().join("missing.toml");
        let code = run(["epsr", "--out", out, "degrade", out, "--recipe", missing.to_str().unwrap()]);
        assert_eq!(code, 2);
    }

    #[test]
    fn audit_gate_sets_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["epsr", "-q", "--out", out, "audit", "efdn_fused"]), 0);
        assert_eq!(run(["epsr", "-q", "--out", out, "audit", "realesrgan_baseline"]), 1);
        let report: BudgetReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit_efdn_fused.json")).unwrap()).unwrap();
        assert!(report.passed);
        let runs = RunManifest::read_all(dir.path()).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].exit_code, 1);
    }

    #[test]
    fn config_version_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = Ctx {
            seed: 0,
            explicit_seed: false,
            out: dir.path().into(),
            quiet: true,
            config_hash: None,
            inputs: vec![],
            outputs: vec![],
        };
        let p = dir.path().join("p.toml");
        std::fs::write(&p, "providers = []\n").unwrap();
        assert!(matches!(ctx.versioned::<ProvidersFile>(&p), Err(Error::Config(_))));
        std::fs::write(&p, "version = 1\nproviders = []\nextra = 2\n").unwrap();
        assert!(ctx.versioned::<ProvidersFile>(&p).is_err());
        std::fs::write(&p, "version = 1\nproviders = []\n").unwrap();
        assert!(ctx.versioned::<ProvidersFile>(&p).unwrap().providers.is_empty());
        assert_eq!(ctx.config_hash.as_ref().unwrap().len(), 64);
    }
}
