//! Integrated-gradients attribution over the model input.
//!
//! The path integral runs from a "no signal" baseline straight to the
//! actual input: the scaled feature and target channels are zeroed —
//! zero in *scaled* space is each channel's minimum — while the
//! mask/missing indicator channels keep their true values. The
//! indicators describe the observation pattern, not the signal, and
//! holding them fixed keeps the layer-norm statistics anchored along
//! the path; zeroing them too would make every path point describe a
//! graph where nothing was ever measured, collapsing the path gradient
//! (the convolution layers are homogeneous, so layer norm makes the
//! network almost scale-invariant in a fully scaled input).
//!
//! The integral is discretized with the midpoint rule: step `s` of `S`
//! evaluates the gradient at `x̄ + (s − ½)/S · (x − x̄)`. Midpoints
//! converge one order faster than the left-endpoint sum for smooth
//! segments and never evaluate at the baseline itself, where the ReLU
//! kinks cluster. Attribution is `(x − x̄) ∘ mean(path gradients)`; for
//! a function that is linear on the path this is exact for any step
//! count, and the completeness identity `Σ attr ≈ f(x) − f(baseline)`
//! tightens as steps grow.
//!
//! Steps are evaluated in parallel (each on its own tape) and summed
//! in step order, so the result is identical in both execution modes.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::dataio::{Panel, SplitPlan};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::metrics; // shares the evaluation posture with interpolate
use crate::model::{assemble_input, forward, predict_expected, stage_transitions};
use crate::par;
use crate::sampler::{assemble_sample, TrainingSample};
use crate::trainer::Checkpoint;

/// Attribution of one scalar objective to one input matrix.
#[derive(Debug, Clone)]
pub struct Attribution {
    /// Same shape as the input; entry = that input entry's share.
    pub attr: Mat,
    pub f_input: f64,
    pub f_baseline: f64,
    pub steps: usize,
}

impl Attribution {
    /// `|Σ attr − (f(x) − f(baseline))|` — 0 in the limit.
    pub fn completeness_gap(&self) -> f64 {
        (self.attr.sum() - (self.f_input - self.f_baseline)).abs()
    }
}

/// Integrated gradients of a scalar-valued `f` with respect to `x`,
/// from a zero baseline. `f` receives a fresh tape and the staged input
/// leaf, and must return a 1×1 tensor on that tape.
pub fn integrated_gradients_fn<F>(x: &Mat, steps: usize, f: F) -> Result<Attribution>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor> + Sync,
{
    integrated_gradients_from(x, &Mat::zeros(x.rows(), x.cols()), steps, f)
}

/// Integrated gradients along the straight path from an explicit
/// baseline: `IG = (x − x̄) ∘ mean of ∂f/∂x over the path`. Entries
/// where `x` equals the baseline get attribution exactly 0.
pub fn integrated_gradients_from<F>(
    x: &Mat,
    baseline: &Mat,
    steps: usize,
    f: F,
) -> Result<Attribution>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor> + Sync,
{
    if steps == 0 {
        return Err(Error::Parameter { name: "steps", reason: "must be at least 1".into() });
    }
    if baseline.shape() != x.shape() {
        return Err(Error::Dimension {
            op: "integrated_gradients",
            left: format!("{}x{}", x.rows(), x.cols()),
            right: format!("{}x{}", baseline.rows(), baseline.cols()),
        });
    }
    let eval_scalar = |input: Mat| -> Result<f64> {
        let tape = Tape::new();
        let leaf = tape.constant(input);
        let out = f(&tape, &leaf)?;
        if out.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "attribution objective must be scalar, got {}x{}",
                out.shape().0,
                out.shape().1
            )));
        }
        Ok(out.value().get(0, 0))
    };
    let f_input = eval_scalar(x.clone())?;
    let f_baseline = eval_scalar(baseline.clone())?;

    let mut diff = x.clone();
    for (d, b) in diff.as_mut_slice().iter_mut().zip(baseline.as_slice()) {
        *d -= b;
    }

    let grads: Vec<Result<Mat>> = par::map_indexed(steps, |s| {
        let alpha = (s as f64 + 0.5) / steps as f64;
        let tape = Tape::new();
        let mut point = baseline.clone();
        for (p, d) in point.as_mut_slice().iter_mut().zip(diff.as_slice()) {
            *p += alpha * d;
        }
        let leaf = tape.leaf(point);
        let out = f(&tape, &leaf)?;
        Ok(tape.backward(&out)?.wrt(&leaf))
    });
    let mut mean = Mat::zeros(x.rows(), x.cols());
    for g in grads {
        let g = g?;
        for (m, v) in mean.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *m += v;
        }
    }
    let inv = 1.0 / steps as f64;
    let mut attr = diff;
    for (a, m) in attr.as_mut_slice().iter_mut().zip(mean.as_slice()) {
        *a *= m * inv;
    }
    Ok(Attribution { attr, f_input, f_baseline, steps })
}

/// Attribute one sample's interpolation output to its model input.
///
/// The objective is the sum of the masked nodes' expected-value
/// predictions over the whole window — "what the model reads off the
/// sensor-free nodes" — and the input is the scaled H0 matrix. Returns
/// the attribution plus the H0 channel names for aggregation.
pub fn attribute_sample(
    ckpt: &Checkpoint,
    graphs: &[Graph],
    sample: &TrainingSample,
    raw_channel_names: &[String],
    steps: usize,
) -> Result<(Attribution, Vec<String>)> {
    let params = ckpt.to_params()?;
    let sel = ckpt.train_config.selection();
    let input = assemble_input(sample, raw_channel_names, &ckpt.scale, sel)?;
    let mut trans_mats = Vec::with_capacity(graphs.len());
    for g in graphs {
        let rows: Vec<usize> = sample
            .w_s
            .node_ids()
            .iter()
            .map(|id| g.index_of(id))
            .collect::<Result<_>>()?;
        trans_mats.push(g.subgraph_by_index(&rows).transitions());
    }
    // Masked rows are the all-zero rows of M.
    let row_mask = {
        let mut m = Mat::zeros(sample.n_nodes(), input.h);
        for r in 0..sample.n_nodes() {
            if sample.m_s.row(r).iter().all(|&v| v == 0.0) {
                for t in 0..input.h {
                    m.set(r, t, 1.0);
                }
            }
        }
        m
    };

    let channel_names = input.channel_names.clone();
    let h0 = input.h0.clone();

    // "No signal" baseline: zero the scaled feature and target columns,
    // keep the indicator columns — see the module docs. H0 columns are
    // time-major, channel-minor; with indicators selected, channels
    // k_raw ("mask") and k_raw+1 ("missing") are the indicators.
    let baseline = {
        let block = input.k_in + 1;
        let mut b = Mat::zeros(h0.rows(), h0.cols());
        if sel.indicators {
            let k_raw = input.k_in - 2; // layout: [raw…, mask, missing | target]
            for r in 0..h0.rows() {
                for col in 0..h0.cols() {
                    let c = col % block;
                    if c == k_raw || c == k_raw + 1 {
                        b.set(r, col, h0.get(r, col));
                    }
                }
            }
        }
        b
    };

    let attribution = integrated_gradients_from(&h0, &baseline, steps, |tape, leaf| {
        let staged = params.stage(tape);
        let trans: Vec<(Tensor, Tensor)> =
            trans_mats.iter().map(|t| stage_transitions(tape, t)).collect();
        let out = forward(&staged, &trans, leaf)?;
        let expected = predict_expected(&out)?;
        Ok(expected.mul(&tape.constant(row_mask.clone()))?.sum())
    })?;
    Ok((attribution, channel_names))
}

/// One input channel's aggregate importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel: String,
    /// `Σ over nodes, time, and windows of |attribution|`.
    pub score: f64,
}

/// A merged group of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    /// Exact sum of the member channel scores.
    pub score: f64,
    /// `score / members`.
    pub mean: f64,
    pub members: usize,
}

/// Fold one window's attribution into per-channel totals. H0 columns
/// are time-major, channel-minor: column `t·(k+1) + c` belongs to
/// channel `c`.
fn accumulate_channel_scores(attr: &Mat, n_channels: usize, totals: &mut [f64]) {
    for i in 0..attr.rows() {
        for col in 0..attr.cols() {
            totals[col % n_channels] += attr.get(i, col).abs();
        }
    }
}

/// Attribute the whole test span: the same chunking and node posture as
/// evaluation, one IG run per window, channel scores summed across
/// windows. Returns the per-channel scores (H0 channel order) and the
/// per-window attributions for completeness diagnostics.
pub fn attribute_test_span(
    panel: &Panel,
    graphs: &[Graph],
    split: &SplitPlan,
    ckpt: &Checkpoint,
    steps: usize,
) -> Result<(Vec<ChannelScore>, Vec<Attribution>)> {
    let h = ckpt.train_config.h;
    let (t0, t1) = split.test_time_range(panel.p());
    if t1 <= t0 {
        return Err(Error::Split(format!("empty test time range [{t0}, {t1})")));
    }
    let mut observed: Vec<usize> = split.train_ids.iter().chain(&split.val_ids).copied().collect();
    observed.sort_unstable();
    let masked = split.test_ids.clone();
    let mut covered = vec![false; panel.n()];
    for &i in observed.iter().chain(&masked) {
        covered[i] = true;
    }
    let extras: Vec<usize> = (0..panel.n()).filter(|&i| !covered[i]).collect();

    let mut names: Option<Vec<String>> = None;
    let mut totals: Vec<f64> = Vec::new();
    let mut attributions = Vec::new();
    let mut start = t0;
    while start < t1 {
        let end = (start + h).min(t1);
        let sample = metrics::pad_sample(
            assemble_sample(panel, &graphs[0], (start, end), &observed, &masked, &extras)?,
            h,
        );
        let (attribution, channel_names) =
            attribute_sample(ckpt, graphs, &sample, panel.channel_names(), steps)?;
        let names = names.get_or_insert_with(|| {
            totals = vec![0.0; channel_names.len()];
            channel_names.clone()
        });
        debug_assert_eq!(*names, channel_names);
        accumulate_channel_scores(&attribution.attr, names.len(), &mut totals);
        attributions.push(attribution);
        start = end;
    }
    let names = names.expect("at least one window");
    let channels = names
        .into_iter()
        .zip(totals)
        .map(|(channel, score)| ChannelScore { channel, score })
        .collect();
    Ok((channels, attributions))
}

/// Parse a `channel_name,group_name` mapping, one pair per line.
/// Blank lines are skipped; anything else without exactly one comma is
/// a parse error.
pub fn parse_grouping(text: &str) -> Result<Vec<(String, String)>> {
    let mut mapping = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let channel = parts.next().unwrap_or("").trim();
        let group = parts.next().map(str::trim);
        match group {
            Some(g) if !channel.is_empty() && !g.is_empty() => {
                mapping.push((channel.to_string(), g.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    location: format!("grouping line {}", lineno + 1),
                    reason: format!("expected `channel_name,group_name`, got `{line}`"),
                });
            }
        }
    }
    Ok(mapping)
}

/// Merge channel scores into groups. Unmapped channels become singleton
/// groups named after the channel (so an empty mapping is exactly the
/// per-channel view); a channel mapped twice is a config error, as is a
/// mapping entry naming a channel that does not exist. Groups appear in
/// first-mention order, singletons after, in channel order.
pub fn group_scores(
    channels: &[ChannelScore],
    mapping: &[(String, String)],
) -> Result<Vec<GroupScore>> {
    let mut assigned: Vec<Option<&str>> = vec![None; channels.len()];
    let index_of = |name: &str| channels.iter().position(|c| c.channel == name);
    for (channel, group) in mapping {
        let Some(i) = index_of(channel) else {
            return Err(Error::Config(format!(
                "grouping names unknown channel `{channel}`"
            )));
        };
        if let Some(prev) = assigned[i] {
            return Err(Error::Config(format!(
                "channel `{channel}` appears in two groups: `{prev}` and `{group}`"
            )));
        }
        assigned[i] = Some(group);
    }

    let mut order: Vec<String> = Vec::new();
    for (_, group) in mapping {
        if !order.iter().any(|g| g == group) {
            order.push(group.clone());
        }
    }
    for (i, c) in channels.iter().enumerate() {
        if assigned[i].is_none() {
            order.push(c.channel.clone());
            assigned[i] = Some(&channels[i].channel);
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for group in &order {
        let members: Vec<&ChannelScore> = channels
            .iter()
            .enumerate()
            .filter(|(i, _)| assigned[*i] == Some(group.as_str()))
            .map(|(_, c)| c)
            .collect();
        let score: f64 = members.iter().map(|c| c.score).sum();
        out.push(GroupScore {
            group: group.clone(),
            score,
            mean: score / members.len() as f64,
            members: members.len(),
        });
    }
    Ok(out)
}

/// The full attribution result: per-channel scores with their group
/// assignment, group totals, and completeness diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    pub steps: usize,
    pub channels: Vec<ChannelScore>,
    /// Parallel to `channels`: which group each belongs to.
    pub channel_groups: Vec<String>,
    pub groups: Vec<GroupScore>,
    /// Per window: `f(x) − f(baseline)` and `Σ attr`.
    pub completeness: Vec<CompletenessRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessRecord {
    pub f_delta: f64,
    pub attr_sum: f64,
    pub gap: f64,
}

impl AttributionReport {
    pub fn build(
        channels: Vec<ChannelScore>,
        attributions: &[Attribution],
        mapping: &[(String, String)],
        steps: usize,
    ) -> Result<AttributionReport> {
        let groups = group_scores(&channels, mapping)?;
        let channel_groups = channels
            .iter()
            .map(|c| {
                mapping
                    .iter()
                    .find(|(ch, _)| ch == &c.channel)
                    .map(|(_, g)| g.clone())
                    .unwrap_or_else(|| c.channel.clone())
            })
            .collect();
        let completeness = attributions
            .iter()
            .map(|a| CompletenessRecord {
                f_delta: a.f_input - a.f_baseline,
                attr_sum: a.attr.sum(),
                gap: a.completeness_gap(),
            })
            .collect();
        Ok(AttributionReport { steps, channels, channel_groups, groups, completeness })
    }

    /// `channel,group,score` rows in channel order.
    pub fn csv(&self) -> String {
        let mut out = String::from("channel,group,score\n");
        for (c, g) in self.channels.iter().zip(&self.channel_groups) {
            out.push_str(&format!("{},{},{}\n", c.channel, g, c.score));
        }
        out
    }
}
