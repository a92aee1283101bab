//! Training: the masking-based epoch loop, Adam, the plateau LR
//! schedule, and versioned JSON checkpoints.
//!
//! One run is fully determined by a [`TrainConfig`]: the same config on
//! the same panel/graphs produces bitwise-identical parameter
//! trajectories and byte-identical checkpoint files. All randomness
//! (node roles per window, epoch shuffles) flows from a single seeded
//! generator consumed in a fixed order; batch gradients are averaged in
//! window order regardless of how many threads computed them.
//!
//! A batch step averages the per-sample losses — equivalently the
//! per-sample gradients, by linearity — before a single Adam update.
//! Validation re-poses the interpolation task each epoch: every
//! validation node is masked at once, training nodes stay observed, and
//! the configured loss is scored on the validation nodes' measured
//! entries only.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataio::{make_split, minmax_scale, Panel, ScaleRecord, SplitPlan, TemporalMode};
use crate::error::{Error, Result};
use crate::graph::{Graph, TransitionPair};
use crate::losses::{apply_loss, LossKind};
use crate::mat::Mat;
use crate::metrics::{interpolate, EvalConfig, MetricsReport, CSV_HEADER};
use crate::model::{
    assemble_input, forward, stage_transitions, ChannelSelection, ModelConfig, ModelParams,
};
use crate::par;
use crate::sampler::{self, assemble_sample, draw_sample, mask_counts, TrainingSample};

/// Bumped whenever the checkpoint layout changes incompatibly.
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Which entries of a training sample the loss scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Only masked-but-measured entries, `(1−M)∘N` — the interpolation
    /// objective itself.
    MaskedOnly,
    /// Every measured entry, `N` — reconstruction plus interpolation.
    AllValid,
}

impl LossScope {
    pub fn name(self) -> &'static str {
        match self {
            LossScope::MaskedOnly => "masked_only",
            LossScope::AllValid => "all_valid",
        }
    }
}

/// Reduce-on-plateau settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// LR multiplier applied on a plateau.
    pub factor: f64,
    /// Consecutive non-improving epochs before a reduction.
    pub patience: usize,
    /// LR never drops below this.
    pub min_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { factor: 0.5, patience: 5, min_lr: 1e-5 }
    }
}

/// Everything a training run needs beyond the data itself. Also the
/// config echoed into checkpoints, so evaluation can rebuild the exact
/// split, scaling, and model shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Training loss; fixes the output head.
    pub loss: LossKind,
    pub loss_scope: LossScope,
    /// Include sensor-free nodes (with `N = 0`) in every sample.
    pub entire_graph: bool,
    /// Feed the raw feature channels into H0.
    pub features: bool,
    /// Feed the mask/missing indicator channels (requires `features`).
    pub indicators: bool,
    pub epochs: usize,
    /// Samples averaged per optimizer step.
    pub batch_size: usize,
    /// Window length.
    pub h: usize,
    /// Hidden width.
    pub z: usize,
    /// Chebyshev expansion order.
    pub k_orders: usize,
    /// Fraction of eligible nodes masked per sample.
    pub mask_ratio: f64,
    pub learning_rate: f64,
    pub schedule: ScheduleConfig,
    /// Early stop after this many LR reductions without improvement.
    pub max_reductions: usize,
    /// Fraction of non-test nodes carrying sensors.
    pub coverage: f64,
    pub temporal_mode: TemporalMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Zinb,
            loss_scope: LossScope::MaskedOnly,
            entire_graph: true,
            features: true,
            indicators: true,
            epochs: 50,
            batch_size: 4,
            h: 24,
            z: 100,
            k_orders: 2,
            mask_ratio: 0.25,
            learning_rate: 1e-3,
            schedule: ScheduleConfig::default(),
            max_reductions: 3,
            coverage: 0.9,
            temporal_mode: TemporalMode::WithinPeriod,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn selection(&self) -> ChannelSelection {
        ChannelSelection { features: self.features, indicators: self.indicators }
    }

    pub fn validate(&self) -> Result<()> {
        self.selection().validate()?;
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!(
                "mask_ratio must be in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.schedule.factor > 0.0 && self.schedule.factor < 1.0) {
            return Err(Error::Config(format!(
                "schedule factor must be in (0, 1), got {}",
                self.schedule.factor
            )));
        }
        if self.schedule.patience == 0 || self.max_reductions == 0 {
            return Err(Error::Config(
                "schedule patience and max_reductions must be at least 1".into(),
            ));
        }
        if self.schedule.min_lr <= 0.0 {
            return Err(Error::Config(format!(
                "schedule min_lr must be positive, got {}",
                self.schedule.min_lr
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("h", self.h),
            ("z", self.z),
            ("k_orders", self.k_orders),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// The model shape this config trains on a panel with `k_raw` raw
    /// channels; `dual` when two adjacency stacks are supplied.
    pub fn model_config(&self, k_raw: usize, dual: bool) -> ModelConfig {
        ModelConfig {
            head: self.loss.head_kind(),
            h: self.h,
            k_in: self.selection().k_in(k_raw),
            z: self.z,
            k_orders: self.k_orders,
            dual,
        }
    }
}

/// Adam with the standard bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Adam {
        let zeros: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn for_params(lr: f64, params: &ModelParams) -> Adam {
        let shapes: Vec<(usize, usize)> = params.mats().iter().map(Mat::shape).collect();
        Adam::new(lr, &shapes)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One update in place. `grads` must align with `params.mats()`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Mat]) -> Result<()> {
        if grads.len() != self.m.len() || params.mats().len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                params.mats().len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != self.m[i].shape() {
                return Err(Error::Dimension {
                    op: "adam step",
                    left: self.m[i].shape_str(),
                    right: g.shape_str(),
                });
            }
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            let theta = params.mats_mut()[i].as_mut_slice();
            for (j, &gj) in g.as_slice().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                theta[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau state. Improvement means a strictly lower
/// validation loss than the best seen so far.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    factor: f64,
    patience: usize,
    min_lr: f64,
    lr: f64,
    best: Option<f64>,
    flat_epochs: usize,
    reductions_since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(config: &ScheduleConfig, initial_lr: f64) -> PlateauScheduler {
        PlateauScheduler {
            factor: config.factor,
            patience: config.patience,
            min_lr: config.min_lr,
            lr: initial_lr,
            best: None,
            flat_epochs: 0,
            reductions_since_improvement: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// LR reductions since the last improvement (the early-stop counter).
    pub fn reductions_since_improvement(&self) -> usize {
        self.reductions_since_improvement
    }

    /// Record one epoch's validation loss and return the LR to use from
    /// now on: after `patience` consecutive non-improving epochs the LR
    /// is multiplied by `factor` (floored at `min_lr`) and the patience
    /// window restarts.
    pub fn lr_step(&mut self, val_loss: f64) -> f64 {
        let improved = self.best.map_or(true, |b| val_loss < b);
        if improved {
            self.best = Some(val_loss);
            self.flat_epochs = 0;
            self.reductions_since_improvement = 0;
        } else {
            self.flat_epochs += 1;
            if self.flat_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.flat_epochs = 0;
                self.reductions_since_improvement += 1;
            }
        }
        self.lr
    }
}

/// One flat parameter array with its name and shape, as stored in a
/// checkpoint. Order follows `ModelConfig::param_shapes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// A versioned, self-describing snapshot of a trained model: the full
/// config echo (enough to rebuild the split, scaling, and model shape),
/// the scale record, and every parameter as a named flat array.
///
/// Contains no timestamps or absolute paths, so rewriting the same
/// state yields byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    pub scale: ScaleRecord,
    pub params: Vec<NamedParam>,
    /// Best validation loss recorded during training; absent when no
    /// epoch ran.
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl Checkpoint {
    pub fn from_params(
        train_config: &TrainConfig,
        params: &ModelParams,
        scale: &ScaleRecord,
        best_val_loss: Option<f64>,
        best_epoch: Option<usize>,
    ) -> Checkpoint {
        let shapes = params.config().param_shapes();
        let named = shapes
            .iter()
            .zip(params.mats())
            .map(|(s, m)| NamedParam {
                name: s.name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice().to_vec(),
            })
            .collect();
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            train_config: train_config.clone(),
            model_config: params.config().clone(),
            scale: scale.clone(),
            params: named,
            best_val_loss,
            best_epoch,
        }
    }

    /// Rebuild live parameters, checking names and shapes against the
    /// stored model config.
    pub fn to_params(&self) -> Result<ModelParams> {
        let shapes = self.model_config.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(Error::Schema(format!(
                "checkpoint stores {} parameters, model shape needs {}",
                self.params.len(),
                shapes.len()
            )));
        }
        let mut mats = Vec::with_capacity(shapes.len());
        for (shape, stored) in shapes.iter().zip(&self.params) {
            if shape.name != stored.name {
                return Err(Error::Schema(format!(
                    "parameter order mismatch: expected `{}`, found `{}`",
                    shape.name, stored.name
                )));
            }
            mats.push(Mat::from_vec(stored.rows, stored.cols, stored.data.clone())?);
        }
        ModelParams::from_mats(self.model_config.clone(), mats)
    }

    /// Serialize to JSON at `path`, writing a sibling temp file first
    /// and renaming, so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Contract(format!("checkpoint serialization failed: {e}")))?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| {
            Error::Schema(format!("cannot parse checkpoint {}: {e}", path.display()))
        })?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint schema version {} is not the supported {}",
                ckpt.schema_version, CHECKPOINT_SCHEMA_VERSION
            )));
        }
        Ok(ckpt)
    }
}

/// Write bytes to a sibling `.tmp` file, then rename over the target.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// One epoch's summary in a [`TrainReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's contributing samples.
    pub train_loss: f64,
    pub val_loss: f64,
    /// LR in force after this epoch's schedule step.
    pub lr: f64,
}

/// What a training run did: the loss trajectories, the selected epoch,
/// timing, and where the checkpoint went.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub wall_clock_seconds: f64,
    pub checkpoint_path: PathBuf,
}

/// Everything the per-sample objective needs besides the sample.
struct LossContext<'a> {
    graphs: &'a [Graph],
    channel_names: &'a [String],
    scale: &'a ScaleRecord,
    sel: ChannelSelection,
    loss: LossKind,
    scope: LossScope,
}

/// Slice `graph` down to the sample's node arrangement and normalize.
/// The sample's own sliced graph fixes the node order, so a second
/// adjacency is cut to exactly the same rows.
fn sliced_transitions(sample: &TrainingSample, graph: &Graph) -> Result<TransitionPair> {
    let rows: Vec<usize> = sample
        .w_s
        .node_ids()
        .iter()
        .map(|id| graph.index_of(id))
        .collect::<Result<_>>()?;
    Ok(graph.subgraph_by_index(&rows).transitions())
}

/// Forward one sample and score it. Returns the scalar loss and, when
/// requested, gradients aligned with `params.mats()`.
fn sample_objective(
    params: &ModelParams,
    ctx: &LossContext,
    sample: &TrainingSample,
    want_grads: bool,
) -> Result<(f64, Option<Vec<Mat>>)> {
    let tape = Tape::new();
    let staged = params.stage(&tape);
    let mut trans = Vec::with_capacity(ctx.graphs.len());
    for g in ctx.graphs {
        trans.push(stage_transitions(&tape, &sliced_transitions(sample, g)?));
    }
    let input = assemble_input(sample, ctx.channel_names, ctx.scale, ctx.sel)?;
    let h0 = tape.constant(input.h0);
    let out = forward(&staged, &trans, &h0)?;

    let weights = match ctx.scope {
        LossScope::MaskedOnly => sample.masked_weights(),
        LossScope::AllValid => sample.all_valid_weights(),
    };
    let target = if ctx.loss.uses_raw_counts() {
        sample.t_s.clone()
    } else {
        sample.t_s.map(|v| ctx.scale.scale_target(v))
    };
    let loss_t = apply_loss(ctx.loss, &out, &target, &weights)?;
    let loss_v = loss_t.value().get(0, 0);
    let grads = if want_grads {
        let g = tape.backward(&loss_t)?;
        Some(staged.tensors().iter().map(|t| g.wrt(t)).collect())
    } else {
        None
    };
    Ok((loss_v, grads))
}

/// Sensor-free extras for a sample: every panel node outside `covered`,
/// in ascending index order. Empty unless entire-graph mode is on.
fn entire_graph_extras(n: usize, covered: &[usize], enabled: bool) -> Vec<usize> {
    if !enabled {
        return Vec::new();
    }
    let mut in_covered = vec![false; n];
    for &i in covered {
        in_covered[i] = true;
    }
    (0..n).filter(|&i| !in_covered[i]).collect()
}

/// Validation loss in interpolation posture: all validation nodes
/// masked at once, training nodes observed, sensor-free nodes entering
/// as extras when entire-graph mode is on. The configured training loss
/// is scored on the validation nodes' measured entries (always
/// masked-only scope — validation asks how well held-out nodes are
/// reconstructed, whatever the training scope was), averaged over the
/// full windows tiling the validation time range.
///
/// Deterministic: no randomness, fixed window order.
pub fn validation_loss(
    panel: &Panel,
    graphs: &[Graph],
    split: &SplitPlan,
    cfg: &TrainConfig,
    scale: &ScaleRecord,
    params: &ModelParams,
) -> Result<f64> {
    let (t0, t1) = split.val_time_range(panel.p());
    if t1 < t0 + cfg.h {
        return Err(Error::Split(format!(
            "validation span [{t0}, {t1}) is shorter than one window of {}",
            cfg.h
        )));
    }
    let extras = entire_graph_extras(panel.n(), &split.train_ids, cfg.entire_graph);
    // Validation nodes are masked, so they must not also appear as extras.
    let extras: Vec<usize> = extras.into_iter().filter(|i| !split.val_ids.contains(i)).collect();
    let ctx = LossContext {
        graphs,
        channel_names: panel.channel_names(),
        scale,
        sel: cfg.selection(),
        loss: cfg.loss,
        scope: LossScope::MaskedOnly,
    };

    let mut windows = Vec::new();
    let mut start = t0;
    while start + cfg.h <= t1 {
        windows.push((start, start + cfg.h));
        start += cfg.h;
    }
    let results: Vec<Result<Option<f64>>> = par::map_indexed(windows.len(), |i| {
        let sample = assemble_sample(
            panel,
            &graphs[0],
            windows[i],
            &split.train_ids,
            &split.val_ids,
            &extras,
        )?;
        match sample_objective(params, &ctx, &sample, false) {
            Ok((loss, _)) => Ok(Some(loss)),
            // A window whose validation entries are all missing simply
            // does not contribute.
            Err(Error::Undefined { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });

    let mut sum = 0.0;
    let mut count = 0usize;
    for r in results {
        if let Some(loss) = r? {
            sum += loss;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Undefined { what: "validation loss" });
    }
    Ok(sum / count as f64)
}

/// Divergence record written next to the checkpoint when training hits
/// a non-finite loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DivergenceReport {
    epoch: usize,
    loss: f64,
    last_good_epoch: Option<usize>,
}

/// Train a model and write the best-by-validation checkpoint to
/// `checkpoint_path`.
///
/// * `graphs` carries one adjacency, or two for a dual-stack model.
/// * With `epochs = 0` the initialized parameters are checkpointed and
///   the trajectory is empty.
/// * A non-finite training or validation loss aborts with
///   [`Error::Diverged`]; the best checkpoint so far is retained on
///   disk next to a small JSON divergence report.
pub fn train(
    panel: &Panel,
    graphs: &[Graph],
    split: &SplitPlan,
    cfg: &TrainConfig,
    checkpoint_path: &Path,
) -> Result<TrainReport> {
    let started = Instant::now();
    cfg.validate()?;
    if graphs.is_empty() || graphs.len() > 2 {
        return Err(Error::Config(format!(
            "training takes one adjacency, or two for a dual stack; got {}",
            graphs.len()
        )));
    }
    for g in graphs {
        for id in panel.node_ids() {
            g.index_of(id)?;
        }
    }
    let dual = graphs.len() == 2;
    let scale = minmax_scale(panel, split);
    let model_cfg = cfg.model_config(panel.k_raw(), dual);
    let mut params = ModelParams::init(model_cfg, cfg.seed)?;

    let (n_o, n_m) = mask_counts(split.train_ids.len(), cfg.mask_ratio)?;
    let extras = entire_graph_extras(panel.n(), &split.train_ids, cfg.entire_graph);
    let ctx = LossContext {
        graphs,
        channel_names: panel.channel_names(),
        scale: &scale,
        sel: cfg.selection(),
        loss: cfg.loss,
        scope: cfg.loss_scope,
    };

    let mut adam = Adam::for_params(cfg.learning_rate, &params);
    let mut scheduler = PlateauScheduler::new(&cfg.schedule, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut records: Vec<EpochRecord> = Vec::new();

    let write_best = |best: &Option<(usize, f64, ModelParams)>, params: &ModelParams| {
        let (p, loss, epoch) = match best {
            Some((e, l, p)) => (p, Some(*l), Some(*e)),
            None => (params, None, None),
        };
        Checkpoint::from_params(cfg, p, &scale, loss, epoch).save(checkpoint_path)
    };
    let diverge = |best: &Option<(usize, f64, ModelParams)>,
                   params: &ModelParams,
                   epoch: usize,
                   loss: f64|
     -> Error {
        if let Err(e) = write_best(best, params) {
            return e;
        }
        let report = DivergenceReport {
            epoch,
            loss,
            last_good_epoch: best.as_ref().map(|(e, _, _)| *e),
        };
        let path = checkpoint_path.with_extension("divergence.json");
        if let Err(e) = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Contract(format!("divergence report: {e}")))
            .and_then(|json| write_atomic(&path, json.as_bytes()))
        {
            return e;
        }
        Error::Diverged { epoch, loss }
    };

    let (t0, t1) = split.train_time_range(panel.p());
    for epoch in 0..cfg.epochs {
        let shuffle_seed = rng.gen::<u64>();
        let sched = sampler::schedule(t1 - t0, cfg.h, cfg.batch_size, shuffle_seed)?;

        let mut epoch_loss_sum = 0.0;
        let mut epoch_contributors = 0usize;
        let starts: Vec<usize> = sched.starts().to_vec();
        for batch_starts in starts.chunks(cfg.batch_size) {
            // Draw sequentially so the RNG stream is independent of the
            // execution mode; gradients are then computed in parallel
            // and reduced in window order.
            let mut samples = Vec::with_capacity(batch_starts.len());
            for &s in batch_starts {
                let window = (t0 + s, t0 + s + cfg.h);
                samples.push(draw_sample(
                    panel,
                    &graphs[0],
                    window,
                    &split.train_ids,
                    n_o,
                    n_m,
                    &extras,
                    &mut rng,
                )?);
            }
            let results: Vec<Result<Option<(f64, Vec<Mat>)>>> =
                par::map_indexed(samples.len(), |i| {
                    match sample_objective(&params, &ctx, &samples[i], true) {
                        Ok((loss, grads)) => Ok(Some((loss, grads.expect("grads requested")))),
                        Err(Error::Undefined { .. }) => Ok(None),
                        Err(e) => Err(e),
                    }
                });

            let mut grad_sum: Option<Vec<Mat>> = None;
            let mut loss_sum = 0.0;
            let mut contributors = 0usize;
            for r in results {
                let Some((loss, grads)) = r? else { continue };
                if !loss.is_finite() {
                    return Err(diverge(&best, &params, epoch, loss));
                }
                loss_sum += loss;
                contributors += 1;
                match &mut grad_sum {
                    None => grad_sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (av, gv) in a.as_mut_slice().iter_mut().zip(g.as_slice()) {
                                *av += gv;
                            }
                        }
                    }
                }
            }
            let Some(mut grads) = grad_sum else { continue };
            let inv = 1.0 / contributors as f64;
            for g in &mut grads {
                for v in g.as_mut_slice() {
                    *v *= inv;
                }
            }
            adam.set_lr(scheduler.lr());
            adam.step(&mut params, &grads)?;
            if params.mats().iter().any(|m| m.as_slice().iter().any(|v| !v.is_finite())) {
                return Err(diverge(&best, &params, epoch, loss_sum * inv));
            }
            epoch_loss_sum += loss_sum;
            epoch_contributors += contributors;
        }
        if epoch_contributors == 0 {
            return Err(Error::Undefined { what: "training loss" });
        }
        let train_loss = epoch_loss_sum / epoch_contributors as f64;

        let val_loss = validation_loss(panel, graphs, split, cfg, &scale, &params)?;
        if !val_loss.is_finite() {
            return Err(diverge(&best, &params, epoch, val_loss));
        }
        if best.as_ref().map_or(true, |(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, params.clone()));
        }
        let lr = scheduler.lr_step(val_loss);
        records.push(EpochRecord { epoch, train_loss, val_loss, lr });
        if scheduler.reductions_since_improvement() >= cfg.max_reductions {
            break;
        }
    }

    write_best(&best, &params)?;
    Ok(TrainReport {
        epochs: records,
        best_epoch: best.as_ref().map(|(e, _, _)| *e),
        best_val_loss: best.as_ref().map(|(_, l, _)| *l),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        checkpoint_path: checkpoint_path.to_path_buf(),
    })
}

/// One cell of the ablation grid: which components stay on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub entire_graph: bool,
    pub features: bool,
    pub indicators: bool,
    pub loss_scope: LossScope,
    pub loss: LossKind,
}

impl AblationVariant {
    /// Overlay this variant on a base config, keeping the base's
    /// shapes, schedule, and seed.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            loss_scope: self.loss_scope,
            entire_graph: self.entire_graph,
            features: self.features,
            indicators: self.indicators,
            ..base.clone()
        }
    }
}

/// The standard five-variant grid: the full model, three single-component
/// ablations, and the no-feature all-node MSE baseline.
pub fn standard_variants() -> Vec<AblationVariant> {
    let full = AblationVariant {
        name: "full".into(),
        entire_graph: true,
        features: true,
        indicators: true,
        loss_scope: LossScope::MaskedOnly,
        loss: LossKind::Zinb,
    };
    vec![
        full.clone(),
        AblationVariant { name: "mae-loss".into(), loss: LossKind::Mae, ..full.clone() },
        AblationVariant {
            name: "no-features".into(),
            features: false,
            indicators: false,
            ..full.clone()
        },
        AblationVariant {
            name: "all-node-loss".into(),
            loss_scope: LossScope::AllValid,
            ..full.clone()
        },
        AblationVariant {
            name: "baseline".into(),
            entire_graph: false,
            features: false,
            indicators: false,
            loss_scope: LossScope::AllValid,
            loss: LossKind::Mse,
        },
    ]
}

/// One row of the ablation grid: a single seeded run, or the per-variant
/// median when `seed` is `None`. A failed run keeps its row with the
/// failure message; the grid never aborts early.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: Option<u64>,
    pub head: String,
    pub adjacency: String,
    pub coverage: f64,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub kl: Option<f64>,
    pub zero: Option<f64>,
    pub nll: Option<f64>,
    pub n_entries: Option<usize>,
    pub error: Option<String>,
}

impl AblationRow {
    fn from_report(variant: &str, seed: u64, r: &MetricsReport) -> AblationRow {
        AblationRow {
            variant: variant.to_string(),
            seed: Some(seed),
            head: r.head.clone(),
            adjacency: r.adjacency.clone(),
            coverage: r.coverage,
            mae: Some(r.mae),
            rmse: Some(r.rmse),
            kl: Some(r.kl),
            zero: r.zero,
            nll: r.nll,
            n_entries: Some(r.n_entries),
            error: None,
        }
    }
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are never NaN"));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Render the grid as CSV: the metrics columns plus `error`, with
/// `median` in the seed column of aggregate rows. An empty grid is just
/// the header.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push_str(",error\n");
    let fmt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let seed = r.seed.map(|s| s.to_string()).unwrap_or_else(|| "median".into());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.head,
            r.adjacency,
            r.coverage,
            fmt(&r.mae),
            fmt(&r.rmse),
            fmt(&r.kl),
            fmt(&r.zero),
            fmt(&r.nll),
            r.n_entries.map(|n| n.to_string()).unwrap_or_default(),
            seed,
            r.error.clone().unwrap_or_default()
        ));
    }
    out
}

/// Run the ablation grid: every variant × every seed, then one median
/// row per variant. Each seeded run plans its own split (the same seed
/// gives every variant the identical split, so comparisons are
/// within-seed fair), trains to a checkpoint under `out_dir`, and
/// evaluates on the held-out test nodes. Failures — config errors,
/// divergence — are recorded in their row and the grid moves on.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    panel: &Panel,
    graphs: &[Graph],
    base: &TrainConfig,
    variants: &[AblationVariant],
    seeds: &[u64],
    eval: &EvalConfig,
    adjacency_label: &str,
    out_dir: &Path,
) -> Vec<AblationRow>
{
    let mut rows = Vec::new();
    for variant in variants {
        let mut reports: Vec<MetricsReport> = Vec::new();
        let mut failures = 0usize;
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..variant.apply(base) };
            let ckpt_path = out_dir.join(format!("ckpt-{}-{seed}.json", variant.name));
            let outcome = (|| -> Result<MetricsReport> {
                cfg.validate()?;
                let split = make_split(panel, cfg.coverage, cfg.temporal_mode, seed)?;
                train(panel, graphs, &split, &cfg, &ckpt_path)?;
                let ckpt = Checkpoint::load(&ckpt_path)?;
                let bundle = interpolate(panel, graphs, &split, &ckpt)?;
                MetricsReport::compute(
                    &bundle,
                    eval,
                    &variant.name,
                    adjacency_label,
                    cfg.coverage,
                    seed,
                )
            })();
            match outcome {
                Ok(report) => {
                    rows.push(AblationRow::from_report(&variant.name, seed, &report));
                    reports.push(report);
                }
                Err(e) => {
                    failures += 1;
                    rows.push(AblationRow {
                        variant: variant.name.clone(),
                        seed: Some(seed),
                        head: cfg.loss.head_kind().name().to_string(),
                        adjacency: adjacency_label.to_string(),
                        coverage: cfg.coverage,
                        mae: None,
                        rmse: None,
                        kl: None,
                        zero: None,
                        nll: None,
                        n_entries: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        let collect = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            median(reports.iter().filter_map(f).collect())
        };
        rows.push(AblationRow {
            variant: variant.name.clone(),
            seed: None,
            head: variant.loss.head_kind().name().to_string(),
            adjacency: adjacency_label.to_string(),
            coverage: base.coverage,
            mae: collect(&|r| Some(r.mae)),
            rmse: collect(&|r| Some(r.rmse)),
            kl: collect(&|r| Some(r.kl)),
            zero: collect(&|r| r.zero),
            nll: collect(&|r| r.nll),
            n_entries: reports.first().map(|r| r.n_entries),
            error: if reports.is_empty() && failures > 0 {
                Some(format!("all {failures} seeded runs failed"))
            } else {
                None
            },
        });
    }
    rows
}
