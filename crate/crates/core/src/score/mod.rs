//! Challenge scoring: metric records, the exponential relative Score,
//! per-class statistics, dataset evaluation through metric providers, and
//! leaderboard rendering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod leaderboard;
pub mod provider;

pub use leaderboard::{cards_from_csv, render_leaderboard, ClassReport, ClassTable, Leaderboard};
pub use provider::{MetricProvider, ProviderConfig};

/// The ten scene categories of the challenge test set.
pub const CLASSES: [&str; 10] = [
    "animals",
    "architecture",
    "art",
    "food",
    "nature",
    "objects",
    "portraits",
    "sports",
    "text",
    "urban",
];

pub const PI: &str = "PI";
pub const CLIPIQA: &str = "CLIPIQA";
pub const MANIQA: &str = "MANIQA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

impl Direction {
    /// The conventional direction of a known metric name.
    pub fn of(name: &str) -> Option<Self> {
        match name {
            PI | "NIQE" | "Score" => Some(Direction::LowerBetter),
            CLIPIQA | MANIQA | "Ma" => Some(Direction::HigherBetter),
            _ => None,
        }
    }

    /// `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::LowerBetter => a < b,
            Direction::HigherBetter => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub direction: Direction,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(name: &str, direction: Direction, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Scoring {
                metric: name.into(),
                reason: format!("value {value} is not finite"),
            });
        }
        if let Some(d) = Direction::of(name) {
            if d != direction {
                return Err(Error::Scoring {
                    metric: name.into(),
                    reason: format!("{name} is {d:?}"),
                });
            }
        }
        Ok(Self { name: name.into(), direction, value })
    }

    pub fn pi(value: f64) -> Result<Self> {
        Self::new(PI, Direction::LowerBetter, value)
    }

    pub fn clipiqa(value: f64) -> Result<Self> {
        Self::new(CLIPIQA, Direction::HigherBetter, value)
    }

    pub fn maniqa(value: f64) -> Result<Self> {
        Self::new(MANIQA, Direction::HigherBetter, value)
    }
}

/// The three challenge metrics in table order.
pub fn challenge_metrics(pi: f64, clipiqa: f64, maniqa: f64) -> Result<Vec<MetricRecord>> {
    Ok(vec![MetricRecord::pi(pi)?, MetricRecord::clipiqa(clipiqa)?, MetricRecord::maniqa(maniqa)?])
}

fn find<'a>(set: &'a [MetricRecord], name: &str) -> Option<&'a MetricRecord> {
    set.iter().find(|m| m.name == name)
}

/// Per-metric weights λ; must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub lambdas: BTreeMap<String, f64>,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self::challenge()
    }
}

impl ScoreWeights {
    /// λ_PI = 0.5, λ_CLIPIQA = 0.25, λ_MANIQA = 0.25.
    pub fn challenge() -> Self {
        Self {
            lambdas: [(PI, 0.5), (CLIPIQA, 0.25), (MANIQA, 0.25)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.lambdas.values().sum();
        if (sum - 1.0).abs() > 1e-9 || self.lambdas.values().any(|&l| l < 0.0) {
            return Err(Error::Config(format!("score weights must be nonnegative and sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Σ λ·exp(value/baseline) over lower-better metrics plus
/// Σ λ·exp(baseline/value) over higher-better ones. Lower is better; the
/// baseline scored against itself gives e.
pub fn aggregate_score(metrics: &[MetricRecord], baseline: &[MetricRecord], weights: &ScoreWeights) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    for (name, &lambda) in &weights.lambdas {
        let missing = |side: &str| Error::Scoring {
            metric: name.clone(),
            reason: format!("missing from {side}"),
        };
        let m = find(metrics, name).ok_or_else(|| missing("metrics"))?;
        let b = find(baseline, name).ok_or_else(|| missing("baseline"))?;
        if m.direction != b.direction {
            return Err(Error::Scoring {
                metric: name.clone(),
                reason: "direction differs between metrics and baseline".into(),
            });
        }
        let (num, den) = match m.direction {
            Direction::LowerBetter => (m.value, b.value),
            Direction::HigherBetter => (b.value, m.value),
        };
        if den == 0.0 {
            return Err(Error::Scoring {
                metric: name.clone(),
                reason: "zero denominator".into(),
            });
        }
        total += lambda * (num / den).exp();
    }
    Ok(total)
}

/// Perceptual Index from Ma's score and NIQE.
pub fn compute_pi(ma_score: f64, niqe: f64) -> f64 {
    0.5 * ((10.0 - ma_score) + niqe)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

/// Mean, median (midpoint for even counts) and sample standard deviation.
pub fn describe(values: &[f64]) -> Result<ClassStats> {
    if values.len() < 2 {
        return Err(Error::Statistics(format!(
            "standard deviation needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Statistics("non-finite value".into()));
    }
    let n = values.len() as f64;
    // offset from the first sample keeps constant inputs exact
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(ClassStats { mean, median, std: var.sqrt() })
}

pub fn class_stats(values: &BTreeMap<String, f64>) -> Result<ClassStats> {
    describe(&values.values().copied().collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Path relative to the evaluated directory.
    pub id: String,
    pub class: Option<String>,
    pub metrics: Vec<MetricRecord>,
    /// Providers that failed on this image.
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub name: String,
    pub per_image: Vec<ImageRecord>,
    pub aggregate: Vec<MetricRecord>,
    pub per_class: BTreeMap<String, Vec<MetricRecord>>,
    pub warnings: usize,
    pub score: Option<f64>,
    pub baseline_ref: Option<Vec<MetricRecord>>,
}

impl ScoreCard {
    /// A card holding only aggregates, as replayed from a results table.
    pub fn from_aggregate(name: &str, aggregate: Vec<MetricRecord>) -> Self {
        Self {
            name: name.into(),
            per_image: Vec::new(),
            aggregate,
            per_class: BTreeMap::new(),
            warnings: 0,
            score: None,
            baseline_ref: None,
        }
    }

    /// Fills the Score from the dataset-level means.
    pub fn with_baseline(mut self, baseline: &[MetricRecord], weights: &ScoreWeights) -> Result<Self> {
        self.score = Some(aggregate_score(&self.aggregate, baseline, weights)?);
        self.baseline_ref = Some(baseline.to_vec());
        Ok(self)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        find(&self.aggregate, name).map(|m| m.value)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp" | "tif" | "tiff" | "webp")
    )
}

fn collect_images(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_images(root, &path, out)?;
        } else if is_image(&path) {
            out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
        }
    }
    Ok(())
}

/// Class of an image: explicit map entry (by relative id or file stem),
/// else its parent directory when that names a known category.
fn class_of(rel: &Path, class_map: Option<&BTreeMap<String, String>>) -> Option<String> {
    let id = rel.to_string_lossy().replace('\\', "/");
    if let Some(map) = class_map {
        let stem = rel.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(c) = map.get(&id).or_else(|| map.get(&stem)) {
            return Some(c.clone());
        }
    }
    let parent = rel.parent()?.file_name()?.to_str()?;
    CLASSES.contains(&parent).then(|| parent.to_string())
}

fn mean_records(
    providers: &[Box<dyn MetricProvider>],
    records: &[&ImageRecord],
) -> Result<Vec<MetricRecord>> {
    providers
        .iter()
        .map(|p| {
            let vals: Vec<f64> = records
                .iter()
                .filter_map(|r| find(&r.metrics, p.name()).map(|m| m.value))
                .collect();
            if vals.is_empty() {
                return Err(Error::Scoring {
                    metric: p.name().into(),
                    reason: "no image was evaluated successfully".into(),
                });
            }
            MetricRecord::new(p.name(), p.direction(), vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Runs every provider on every image below `sr_dir`.
///
/// An image on which any provider fails is kept in `per_image` with the
/// failing metric listed as missing, counted in `warnings`, and left out
/// of every aggregate so all metrics average over the same images.
pub fn evaluate_dataset(
    name: &str,
    sr_dir: &Path,
    providers: &[Box<dyn MetricProvider>],
    class_map: Option<&BTreeMap<String, String>>,
) -> Result<ScoreCard> {
    if providers.is_empty() {
        return Err(Error::Config("no metric providers configured".into()));
    }
    let mut files = Vec::new();
    collect_images(sr_dir, sr_dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_image: Vec<ImageRecord> = files
        .par_iter()
        .map(|rel| {
            let full = sr_dir.join(rel);
            let mut metrics = Vec::new();
            let mut missing = Vec::new();
            for p in providers {
                match p.evaluate(&full).and_then(|v| MetricRecord::new(p.name(), p.direction(), v)) {
                    Ok(m) => metrics.push(m),
                    Err(e) => {
                        log::warn!("{} on {}: {e}", p.name(), full.display());
                        missing.push(p.name().to_string());
                    }
                }
            }
            ImageRecord {
                id: rel.to_string_lossy().replace('\\', "/"),
                class: class_of(rel, class_map),
                metrics,
                missing,
            }
        })
        .collect();
    let complete: Vec<&ImageRecord> = per_image.iter().filter(|r| r.missing.is_empty()).collect();
    let warnings = per_image.len() - complete.len();
    let aggregate = mean_records(providers, &complete)?;
    let mut per_class = BTreeMap::new();
    let mut classes: Vec<&str> = complete.iter().filter_map(|r| r.class.as_deref()).collect();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let members: Vec<&ImageRecord> = complete.iter().copied().filter(|r| r.class.as_deref() == Some(c)).collect();
        per_class.insert(c.to_string(), mean_records(providers, &members)?);
    }
    Ok(ScoreCard {
        name: name.into(),
        per_image,
        aggregate,
        per_class,
        warnings,
        score: None,
        baseline_ref: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::provider::ConstantProvider;

    fn baseline() -> Vec<MetricRecord> {
        challenge_metrics(4.1442, 0.5302, 0.3283).unwrap()
    }

    #[test]
    fn baseline_against_itself_is_e() {
        let s = aggregate_score(&baseline(), &baseline(), &ScoreWeights::challenge()).unwrap();
        assert!((s - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn table_rows_reproduce() {
        for (pi, c, m, expect) in [(3.1205, 0.6544, 0.3919, 2.2015), (6.0676, 0.3951, 0.2722, 3.9536)] {
            let s = aggregate_score(&challenge_metrics(pi, c, m).unwrap(), &baseline(), &ScoreWeights::challenge()).unwrap();
            assert!((s - expect).abs() < 5e-4, "{s} vs {expect}");
        }
    }

    #[test]
    fn missing_metric_and_zero_denominator_name_the_metric() {
        let partial = vec![MetricRecord::pi(3.0).unwrap(), MetricRecord::clipiqa(0.5).unwrap()];
        match aggregate_score(&partial, &baseline(), &ScoreWeights::challenge()) {
            Err(Error::Scoring { metric, .. }) => assert_eq!(metric, MANIQA),
            other => panic!("unexpected {other:?}"),
        }
        let zero = challenge_metrics(3.0, 0.0, 0.3).unwrap();
        match aggregate_score(&zero, &baseline(), &ScoreWeights::challenge()) {
            Err(Error::Scoring { metric, .. }) => assert_eq!(metric, CLIPIQA),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pi_composition() {
        assert_eq!(compute_pi(10.0, 0.0), 0.0);
        assert_eq!(compute_pi(0.0, 10.0), 10.0);
        assert_eq!(compute_pi(6.0, 4.0), 4.0);
    }

    #[test]
    fn stats_conventions() {
        let s = describe(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median, 2.5);
        let flat = describe(&[0.7; 10]).unwrap();
        assert_eq!((flat.mean, flat.median, flat.std), (0.7, 0.7, 0.0));
        assert!(matches!(describe(&[1.0]), Err(Error::Statistics(_))));
    }

    #[test]
    fn wrong_direction_for_known_metric_is_rejected() {
        assert!(MetricRecord::new(PI, Direction::HigherBetter, 1.0).is_err());
        assert!(MetricRecord::new("PI", Direction::LowerBetter, f64::NAN).is_err());
    }

    #[test]
    fn empty_directory_is_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let p: Vec<Box<dyn MetricProvider>> = vec![Box::new(ConstantProvider::new("X", Direction::LowerBetter, 1.0))];
        assert!(matches!(evaluate_dataset("m", dir.path(), &p, None), Err(Error::EmptyInput)));
    }
}
