//! Sweep configuration: a flat `key = value` document (with dotted
//! keys, `[a, b]` lists and `#` comment lines) that fully determines an
//! experiment. Unknown or duplicated keys and invalid values are
//! rejected with the offending line and key, so the config file can
//! serve as the reproducible experiment record.

use std::path::PathBuf;

use crate::embedding::EmbedConfig;
use crate::error::{Error, Result};
use crate::fedsim::FedAvgConfig;
use crate::readiness::CdiWeights;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        classes: usize,
        channels: usize,
        side: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl DatasetSpec {
    pub fn default_blobs() -> DatasetSpec {
        DatasetSpec::Blobs {
            classes: 3,
            channels: 3,
            side: 16,
            per_class: 200,
            test_per_class: 50,
            spread: 1.0,
        }
    }

    /// Short name used in the CSV `dataset` column.
    pub fn tag(&self) -> &'static str {
        match self {
            DatasetSpec::Blobs { .. } => "blobs",
            DatasetSpec::Idx { .. } => "idx",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub dataset: DatasetSpec,
    /// Client counts (K grid).
    pub clients: Vec<usize>,
    /// Heterogeneity grid.
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub min_per_client: usize,
    /// Pretrain the probe extractor on a pretext split before embedding.
    pub pretrain: bool,
    pub out: PathBuf,
    /// Per-cell seed fields of `fed` and `embed` are overwritten by the
    /// sweep; they are not part of the config grammar.
    pub fed: FedAvgConfig,
    pub embed: EmbedConfig,
    pub cdi: CdiWeights,
}

impl Default for SweepConfig {
    fn default() -> SweepConfig {
        SweepConfig {
            dataset: DatasetSpec::default_blobs(),
            clients: vec![10, 20],
            alphas: vec![0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 5.0],
            seeds: vec![1, 2, 3],
            min_per_client: 8,
            pretrain: true,
            out: PathBuf::from("results.csv"),
            fed: FedAvgConfig::default(),
            embed: EmbedConfig::default(),
            cdi: CdiWeights::default(),
        }
    }
}

impl SweepConfig {
    /// Cross-field checks that need the whole document.
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Domain("alpha grid must be non-empty".into()));
        }
        if self.alphas.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::Domain("alpha entries must be finite and > 0".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Domain("seeds must be non-empty".into()));
        }
        if self.clients.is_empty() {
            return Err(Error::Domain("clients must be non-empty".into()));
        }
        if let Some(&k) = self.clients.iter().find(|&&k| k < 2) {
            return Err(Error::Domain(format!("client counts must be >= 2, got {k}")));
        }
        if let DatasetSpec::Blobs { classes, channels, side, per_class, test_per_class, spread } =
            &self.dataset
        {
            if *classes < 2 || *channels == 0 || *side < 8 || *per_class == 0 || *test_per_class == 0
            {
                return Err(Error::Domain(
                    "blobs needs classes >= 2, channels >= 1, side >= 8 and nonzero sample counts"
                        .into(),
                ));
            }
            if !(spread.is_finite() && *spread >= 0.0) {
                return Err(Error::Domain(format!("blobs.spread must be >= 0, got {spread}")));
            }
            let pool = classes * per_class;
            if let Some(&k) = self.clients.iter().find(|&&k| k * self.min_per_client > pool) {
                return Err(Error::Domain(format!(
                    "K={k} with min_per_client={} needs more than the {pool} pooled samples",
                    self.min_per_client
                )));
            }
        }
        self.fed.validate()?;
        self.embed.validate()?;
        self.cdi.validate()?;
        Ok(())
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, raw: &str, kind: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| err(line, format!("key {key}: expected {kind}, got {raw:?}")))
}

fn parse_list(line: usize, key: &str, raw: &str) -> Result<Vec<String>> {
    let inner = raw
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| err(line, format!("key {key}: expected a [a, b, ...] list, got {raw:?}")))?;
    let inner = inner.trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    Ok(inner.split(',').map(|s| s.trim().to_string()).collect())
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(err(line, format!("key {key}: expected true or false, got {other:?}"))),
    }
}

fn parse_path(raw: &str) -> PathBuf {
    PathBuf::from(raw.trim_matches('"'))
}

#[derive(Default)]
struct IdxPaths {
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
}

/// Parses a config document into a fully-populated SweepConfig,
/// starting from the documented defaults.
pub fn parse_sweep_config(text: &str) -> Result<SweepConfig> {
    let mut cfg = SweepConfig::default();
    let mut seen: Vec<(String, usize)> = Vec::new();
    let mut dataset_choice: Option<(String, usize)> = None;
    let mut first_blobs_key: Option<(String, usize)> = None;
    let mut first_idx_key: Option<(String, usize)> = None;
    let mut idx = IdxPaths::default();
    // Blobs parameters are staged over the defaults.
    let (mut b_classes, mut b_channels, mut b_side, mut b_per_class, mut b_test, mut b_spread) =
        match DatasetSpec::default_blobs() {
            DatasetSpec::Blobs { classes, channels, side, per_class, test_per_class, spread } => {
                (classes, channels, side, per_class, test_per_class, spread)
            }
            DatasetSpec::Idx { .. } => unreachable!(),
        };

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got {trimmed:?}")))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(err(line, "empty key before `=`"));
        }
        if let Some((_, prev)) = seen.iter().find(|(k, _)| k == key) {
            return Err(err(line, format!("key {key} already set on line {prev}")));
        }
        seen.push((key.to_string(), line));
        if key.starts_with("blobs.") && first_blobs_key.is_none() {
            first_blobs_key = Some((key.to_string(), line));
        }
        if key.starts_with("idx.") && first_idx_key.is_none() {
            first_idx_key = Some((key.to_string(), line));
        }

        match key {
            "dataset" => match value {
                "blobs" | "idx" => dataset_choice = Some((value.to_string(), line)),
                other => {
                    return Err(err(line, format!("key dataset: expected blobs or idx, got {other:?}")))
                }
            },
            "blobs.classes" => b_classes = parse_num(line, key, value, "an integer")?,
            "blobs.channels" => b_channels = parse_num(line, key, value, "an integer")?,
            "blobs.side" => b_side = parse_num(line, key, value, "an integer")?,
            "blobs.per_class" => b_per_class = parse_num(line, key, value, "an integer")?,
            "blobs.test_per_class" => b_test = parse_num(line, key, value, "an integer")?,
            "blobs.spread" => b_spread = parse_num(line, key, value, "a number")?,
            "idx.images" => idx.images = Some(parse_path(value)),
            "idx.labels" => idx.labels = Some(parse_path(value)),
            "idx.test_images" => idx.test_images = Some(parse_path(value)),
            "idx.test_labels" => idx.test_labels = Some(parse_path(value)),
            "clients" => {
                cfg.clients = parse_list(line, key, value)?
                    .iter()
                    .map(|s| parse_num(line, key, s, "an integer"))
                    .collect::<Result<_>>()?;
                if cfg.clients.is_empty() {
                    return Err(err(line, "key clients: list must be non-empty"));
                }
                if let Some(&k) = cfg.clients.iter().find(|&&k| k < 2) {
                    return Err(err(line, format!("key clients: counts must be >= 2, got {k}")));
                }
            }
            "alpha" => {
                cfg.alphas = parse_list(line, key, value)?
                    .iter()
                    .map(|s| parse_num(line, key, s, "a number"))
                    .collect::<Result<_>>()?;
                if cfg.alphas.is_empty() {
                    return Err(err(line, "key alpha: list must be non-empty"));
                }
                if let Some(&a) = cfg.alphas.iter().find(|&&a: &&f64| !(a.is_finite() && a > 0.0)) {
                    return Err(err(line, format!("key alpha: entries must be > 0, got {a}")));
                }
            }
            "seeds" => {
                cfg.seeds = parse_list(line, key, value)?
                    .iter()
                    .map(|s| parse_num(line, key, s, "an integer"))
                    .collect::<Result<_>>()?;
                if cfg.seeds.is_empty() {
                    return Err(err(line, "key seeds: list must be non-empty"));
                }
            }
            "min_per_client" => cfg.min_per_client = parse_num(line, key, value, "an integer")?,
            "pretrain" => cfg.pretrain = parse_bool(line, key, value)?,
            "out" => cfg.out = parse_path(value),
            "fed.rounds" => cfg.fed.rounds = parse_num(line, key, value, "an integer")?,
            "fed.local_epochs" => cfg.fed.local_epochs = parse_num(line, key, value, "an integer")?,
            "fed.batch_size" => cfg.fed.batch_size = parse_num(line, key, value, "an integer")?,
            "fed.lr" => cfg.fed.lr = parse_num(line, key, value, "a number")?,
            "fed.momentum" => cfg.fed.momentum = parse_num(line, key, value, "a number")?,
            "fed.fraction_fit" => cfg.fed.fraction_fit = parse_num(line, key, value, "a number")?,
            "fed.fraction_evaluate" => {
                cfg.fed.fraction_evaluate = parse_num(line, key, value, "a number")?
            }
            "fed.metric" => {
                cfg.fed.final_metric = value
                    .parse()
                    .map_err(|e| err(line, format!("key fed.metric: {e}")))?
            }
            "embed.max_samples" => cfg.embed.max_samples = parse_num(line, key, value, "an integer")?,
            "embed.head_epochs" => cfg.embed.head_epochs = parse_num(line, key, value, "an integer")?,
            "embed.head_lr" => cfg.embed.head_lr = parse_num(line, key, value, "a number")?,
            "embed.fisher_passes" => {
                cfg.embed.fisher_passes = parse_num(line, key, value, "an integer")?
            }
            "embed.skip_filters" => {
                cfg.embed.skip_filters = parse_num(line, key, value, "an integer")?
            }
            "cdi.beta" => cfg.cdi.beta = parse_num(line, key, value, "a number")?,
            "cdi.gamma" => cfg.cdi.gamma = parse_num(line, key, value, "a number")?,
            other => return Err(err(line, format!("unknown key {other}"))),
        }
    }

    // Resolve the dataset section.
    let chosen = dataset_choice.as_ref().map(|(s, _)| s.as_str()).unwrap_or("blobs");
    match chosen {
        "blobs" => {
            if let Some((key, line)) = first_idx_key {
                return Err(err(line, format!("key {key} set but dataset is blobs")));
            }
            cfg.dataset = DatasetSpec::Blobs {
                classes: b_classes,
                channels: b_channels,
                side: b_side,
                per_class: b_per_class,
                test_per_class: b_test,
                spread: b_spread,
            };
        }
        "idx" => {
            if let Some((key, line)) = first_blobs_key {
                return Err(err(line, format!("key {key} set but dataset is idx")));
            }
            let line = dataset_choice.map(|(_, l)| l).unwrap_or(0);
            let require = |p: Option<PathBuf>, key: &str| {
                p.ok_or_else(|| err(line, format!("dataset idx requires key {key}")))
            };
            cfg.dataset = DatasetSpec::Idx {
                images: require(idx.images, "idx.images")?,
                labels: require(idx.labels, "idx.labels")?,
                test_images: require(idx.test_images, "idx.test_images")?,
                test_labels: require(idx.test_labels, "idx.test_labels")?,
            };
        }
        _ => unreachable!(),
    }

    cfg.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(cfg)
}

fn fmt_list<T: std::fmt::Display>(items: &[T]) -> String {
    let inner: Vec<String> = items.iter().map(|v| v.to_string()).collect();
    format!("[{}]", inner.join(", "))
}

/// Emits a document that parses back to an equal config.
pub fn serialize_sweep_config(cfg: &SweepConfig) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    push("dataset", cfg.dataset.tag().to_string());
    match &cfg.dataset {
        DatasetSpec::Blobs { classes, channels, side, per_class, test_per_class, spread } => {
            push("blobs.classes", classes.to_string());
            push("blobs.channels", channels.to_string());
            push("blobs.side", side.to_string());
            push("blobs.per_class", per_class.to_string());
            push("blobs.test_per_class", test_per_class.to_string());
            push("blobs.spread", spread.to_string());
        }
        DatasetSpec::Idx { images, labels, test_images, test_labels } => {
            push("idx.images", images.display().to_string());
            push("idx.labels", labels.display().to_string());
            push("idx.test_images", test_images.display().to_string());
            push("idx.test_labels", test_labels.display().to_string());
        }
    }
    push("clients", fmt_list(&cfg.clients));
    push("alpha", fmt_list(&cfg.alphas));
    push("seeds", fmt_list(&cfg.seeds));
    push("min_per_client", cfg.min_per_client.to_string());
    push("pretrain", cfg.pretrain.to_string());
    push("out", cfg.out.display().to_string());
    push("fed.rounds", cfg.fed.rounds.to_string());
    push("fed.local_epochs", cfg.fed.local_epochs.to_string());
    push("fed.batch_size", cfg.fed.batch_size.to_string());
    push("fed.lr", cfg.fed.lr.to_string());
    push("fed.momentum", cfg.fed.momentum.to_string());
    push("fed.fraction_fit", cfg.fed.fraction_fit.to_string());
    push("fed.fraction_evaluate", cfg.fed.fraction_evaluate.to_string());
    push("fed.metric", cfg.fed.final_metric.to_string());
    push("embed.max_samples", cfg.embed.max_samples.to_string());
    push("embed.head_epochs", cfg.embed.head_epochs.to_string());
    push("embed.head_lr", cfg.embed.head_lr.to_string());
    push("embed.fisher_passes", cfg.embed.fisher_passes.to_string());
    push("embed.skip_filters", cfg.embed.skip_filters.to_string());
    push("cdi.beta", cfg.cdi.beta.to_string());
    push("cdi.gamma", cfg.cdi.gamma.to_string());
    out
}
