//! TOML config file and the three-layer resolution: built-in defaults,
//! then the file, then CLI flags. The file is strict — unknown keys are
//! rejected so typos fail loudly instead of silently keeping defaults.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use graphfill::dataio::TemporalMode;
use graphfill::losses::LossKind;
use graphfill::metrics::EvalConfig;
use graphfill::model::HeadKind;
use graphfill::trainer::{LossScope, TrainConfig};
use graphfill::{Error, Result};

use crate::args::{DataArgs, EvalFlags, GraphArgs, TrainFlags};

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub data: DataSection,
    pub graph: GraphSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
    pub attribute: AttributeSection,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub targets: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub outlier_filter: Option<bool>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub adjacency: Option<String>,
    pub edges: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub infra: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub loss: Option<String>,
    pub head: Option<String>,
    pub entire_graph: Option<bool>,
    pub features: Option<bool>,
    pub indicators: Option<bool>,
    pub masked_only_loss: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub window: Option<usize>,
    pub hidden: Option<usize>,
    pub k_orders: Option<usize>,
    pub mask_ratio: Option<f64>,
    pub learning_rate: Option<f64>,
    pub lr_factor: Option<f64>,
    pub lr_patience: Option<usize>,
    pub min_lr: Option<f64>,
    pub max_reductions: Option<usize>,
    pub coverage: Option<f64>,
    pub temporal_mode: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub bins: Option<usize>,
    pub smoothing: Option<f64>,
    pub tau: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub variants: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributeSection {
    pub steps: Option<usize>,
    pub groups: Option<PathBuf>,
}

/// Load the config file if one was given; an absent flag is an empty
/// config, an unreadable or malformed file is an error.
pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn parse_temporal_mode(s: &str) -> Result<TemporalMode> {
    match s {
        "within_period" => Ok(TemporalMode::WithinPeriod),
        "future" => Ok(TemporalMode::Future),
        other => Err(Error::Config(format!(
            "unknown temporal mode `{other}` (expected within_period or future)"
        ))),
    }
}

/// Parse a head name. Accepts the head names themselves and, as a
/// convenience, a loss name standing in for the head it requires.
pub fn parse_head(s: &str) -> Result<HeadKind> {
    match s {
        "point" => Ok(HeadKind::Point),
        "gaussian" => Ok(HeadKind::Gnll),
        "negbin" => Ok(HeadKind::Nb),
        other => LossKind::parse(other).map(LossKind::head_kind).map_err(|_| {
            Error::Config(format!(
                "unknown head `{other}` (expected point, gaussian, negbin, zinb, or a loss name)"
            ))
        }),
    }
}

/// Merge defaults <- config file <- flags into a [`TrainConfig`], then
/// validate it (including the declared-head cross-check).
pub fn resolve_train(file: &TrainSection, flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();

    let loss_name = flags.loss.clone().or_else(|| file.loss.clone());
    if let Some(name) = &loss_name {
        cfg.loss = LossKind::parse(name)?;
    }
    let tri = |yes: bool, no: bool| if yes { Some(true) } else if no { Some(false) } else { None };
    if let Some(v) = tri(flags.entire_graph, flags.no_entire_graph).or(file.entire_graph) {
        cfg.entire_graph = v;
    }
    if let Some(v) = tri(flags.features, flags.no_features).or(file.features) {
        cfg.features = v;
    }
    if let Some(v) = tri(flags.indicators, flags.no_indicators).or(file.indicators) {
        cfg.indicators = v;
    }
    if let Some(v) = tri(flags.masked_only_loss, flags.no_masked_only_loss).or(file.masked_only_loss)
    {
        cfg.loss_scope = if v { LossScope::MaskedOnly } else { LossScope::AllValid };
    }
    if let Some(v) = flags.epochs.or(file.epochs) {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size.or(file.batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.window.or(file.window) {
        cfg.h = v;
    }
    if let Some(v) = flags.hidden.or(file.hidden) {
        cfg.z = v;
    }
    if let Some(v) = flags.k_orders.or(file.k_orders) {
        cfg.k_orders = v;
    }
    if let Some(v) = flags.mask_ratio.or(file.mask_ratio) {
        cfg.mask_ratio = v;
    }
    if let Some(v) = flags.learning_rate.or(file.learning_rate) {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.lr_factor.or(file.lr_factor) {
        cfg.schedule.factor = v;
    }
    if let Some(v) = flags.lr_patience.or(file.lr_patience) {
        cfg.schedule.patience = v;
    }
    if let Some(v) = flags.min_lr.or(file.min_lr) {
        cfg.schedule.min_lr = v;
    }
    if let Some(v) = flags.max_reductions.or(file.max_reductions) {
        cfg.max_reductions = v;
    }
    if let Some(v) = flags.coverage.or(file.coverage) {
        cfg.coverage = v;
    }
    if let Some(name) = flags.temporal_mode.as_deref().or(file.temporal_mode.as_deref()) {
        cfg.temporal_mode = parse_temporal_mode(name)?;
    }
    if let Some(v) = flags.seed.or(file.seed) {
        cfg.seed = v;
    }

    // A declared head must agree with what the loss requires.
    if let Some(name) = flags.head.as_deref().or(file.head.as_deref()) {
        let declared = parse_head(name)?;
        if declared != cfg.loss.head_kind() {
            return Err(Error::Config(format!(
                "loss `{}` requires the `{}` head, but `{}` was declared",
                cfg.loss.name(),
                cfg.loss.head_kind().name(),
                declared.name()
            )));
        }
    }

    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_eval(file: &EvalSection, flags: &EvalFlags) -> EvalConfig {
    let mut cfg = EvalConfig::default();
    if let Some(v) = flags.bins.or(file.bins) {
        cfg.bins = v;
    }
    if let Some(v) = flags.smoothing.or(file.smoothing) {
        cfg.smoothing = v;
    }
    if let Some(v) = flags.tau.or(file.tau) {
        cfg.tau = v;
    }
    cfg
}

/// Resolved data-file choices (paths + outlier toggle).
#[derive(Debug, Clone, Serialize)]
pub struct DataChoice {
    pub targets: PathBuf,
    pub features: Option<PathBuf>,
    pub outlier_filter: bool,
}

pub fn resolve_data(file: &DataSection, flags: &DataArgs) -> Result<DataChoice> {
    let targets = flags
        .targets
        .clone()
        .or_else(|| file.targets.clone())
        .ok_or_else(|| Error::Config("no targets file given (--targets or [data].targets)".into()))?;
    Ok(DataChoice {
        targets,
        features: flags.features_file.clone().or_else(|| file.features.clone()),
        outlier_filter: flags.outlier_filter || file.outlier_filter.unwrap_or(false),
    })
}

/// Resolved graph-construction choices.
#[derive(Debug, Clone, Serialize)]
pub struct GraphChoice {
    pub adjacency: String,
    pub edges: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub infra: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub sigma: Option<f64>,
}

pub fn resolve_graph(file: &GraphSection, flags: &GraphArgs) -> GraphChoice {
    GraphChoice {
        adjacency: flags
            .adjacency
            .clone()
            .or_else(|| file.adjacency.clone())
            .unwrap_or_else(|| "binary".to_string()),
        edges: flags.edges.clone().or_else(|| file.edges.clone()),
        coords: flags.coords.clone().or_else(|| file.coords.clone()),
        infra: flags.infra.clone().or_else(|| file.infra.clone()),
        graph: flags.graph.clone().or_else(|| file.graph.clone()),
        sigma: flags.sigma.or(file.sigma),
    }
}
