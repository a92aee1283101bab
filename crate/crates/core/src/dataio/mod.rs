//! Panel loading, cleaning, scaling, encoding, and split planning.
//!
//! A [`Panel`] is the dense node×time grid the whole engine works on:
//! per-node feature channels, a count target, and a missing mask. Targets
//! stay in raw units inside the panel; min-max scaling produces a
//! [`ScaleRecord`] that is applied lazily wherever scaled values are
//! needed, so zero counts remain exactly zero for the count likelihoods.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Dense node-time panel: features `X (n×P×k_raw)`, targets `T (n×P)`,
/// and the missing mask `N (n×P, 0 = missing)`.
#[derive(Debug, Clone)]
pub struct Panel {
    node_ids: Vec<String>,
    time_index: Vec<i64>,
    /// Feature values, indexed `((node·P)+time)·k_raw + channel`.
    x: Vec<f64>,
    k_raw: usize,
    channel_names: Vec<String>,
    t: Mat,
    n_mask: Mat,
}

impl Panel {
    /// Assemble a panel, validating the target/mask invariants.
    pub fn new(
        node_ids: Vec<String>,
        time_index: Vec<i64>,
        x: Vec<f64>,
        channel_names: Vec<String>,
        t: Mat,
        n_mask: Mat,
    ) -> Result<Panel> {
        let (n, p) = (node_ids.len(), time_index.len());
        let k_raw = channel_names.len();
        if x.len() != n * p * k_raw {
            return Err(Error::Dimension {
                op: "Panel::new",
                left: format!("{n}x{p}x{k_raw}"),
                right: format!("feature buffer of {}", x.len()),
            });
        }
        for (name, m) in [("targets", &t), ("missing mask", &n_mask)] {
            if m.shape() != (n, p) {
                return Err(Error::Dimension {
                    op: "Panel::new",
                    left: format!("{n}x{p}"),
                    right: format!("{name} {}", m.shape_str()),
                });
            }
        }
        for i in 0..n {
            for j in 0..p {
                let (tv, nv) = (t.get(i, j), n_mask.get(i, j));
                if nv != 0.0 && nv != 1.0 {
                    return Err(Error::Contract(format!(
                        "missing mask must be 0/1, got {nv} at ({i},{j})"
                    )));
                }
                if nv == 1.0 && !(tv.is_finite() && tv >= 0.0) {
                    return Err(Error::Contract(format!(
                        "observed target must be finite and >= 0, got {tv} at ({i},{j})"
                    )));
                }
                if nv == 0.0 && tv != 0.0 {
                    return Err(Error::Contract(format!(
                        "missing target must be stored as 0, got {tv} at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Panel { node_ids, time_index, x, k_raw, channel_names, t, n_mask })
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    /// Number of time steps (the paper's `p`, capitalized to avoid the NB
    /// parameter).
    pub fn p(&self) -> usize {
        self.time_index.len()
    }

    pub fn k_raw(&self) -> usize {
        self.k_raw
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn time_index(&self) -> &[i64] {
        &self.time_index
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    #[inline]
    pub fn x_at(&self, node: usize, time: usize, chan: usize) -> f64 {
        self.x[(node * self.p() + time) * self.k_raw + chan]
    }

    #[inline]
    pub fn target(&self, node: usize, time: usize) -> f64 {
        self.t.get(node, time)
    }

    /// 1.0 when the target is observed, 0.0 when missing.
    #[inline]
    pub fn observed(&self, node: usize, time: usize) -> f64 {
        self.n_mask.get(node, time)
    }

    pub fn targets(&self) -> &Mat {
        &self.t
    }

    pub fn missing_mask(&self) -> &Mat {
        &self.n_mask
    }

    /// Count of observed entries.
    pub fn observed_count(&self) -> usize {
        self.n_mask.as_slice().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Replace per-node outliers (|T − mean| > 3·std over the node's observed
/// entries) with missing entries. Never invents values; observed count is
/// non-increasing. Constant segments (std = 0) are untouched.
pub fn outlier_filter(panel: &Panel) -> Panel {
    let mut out = panel.clone();
    let (n, p) = (panel.n(), panel.p());
    for i in 0..n {
        let observed: Vec<f64> = (0..p)
            .filter(|&j| panel.observed(i, j) == 1.0)
            .map(|j| panel.target(i, j))
            .collect();
        if observed.is_empty() {
            continue;
        }
        let m = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / m;
        let std = (observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m).sqrt();
        if std == 0.0 {
            continue;
        }
        for j in 0..p {
            if panel.observed(i, j) == 1.0 && (panel.target(i, j) - mean).abs() > 3.0 * std {
                out.n_mask.set(i, j, 0.0);
                out.t.set(i, j, 0.0);
            }
        }
    }
    out
}

/// Node split with a fixed 10% test share and nested coverage subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_ids: Vec<usize>,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub coverage_fraction: f64,
    pub temporal_mode: TemporalMode,
    /// `(train_end, val_end)` time-step boundaries; present in future mode.
    pub time_boundaries: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Interpolate within the observed period (the default posture).
    WithinPeriod,
    /// Temporal generalization: 70/15/15 chronological train/val/test cut.
    Future,
}

impl SplitPlan {
    /// Time range training windows may use.
    pub fn train_time_range(&self, p: usize) -> (usize, usize) {
        match self.time_boundaries {
            Some((train_end, _)) => (0, train_end),
            None => (0, p),
        }
    }

    /// Time range validation is computed on.
    pub fn val_time_range(&self, p: usize) -> (usize, usize) {
        match self.time_boundaries {
            Some((train_end, val_end)) => (train_end, val_end),
            None => (0, p),
        }
    }

    /// Time range test metrics are computed on.
    pub fn test_time_range(&self, p: usize) -> (usize, usize) {
        match self.time_boundaries {
            Some((_, val_end)) => (val_end, p),
            None => (0, p),
        }
    }
}

/// Plan a split: `round(0.1·n)` test nodes fixed by the seed, then the
/// remaining nodes are shuffled once and train/val take nested prefixes
/// scaled by the coverage fraction (`⌈0.9·f·n⌉` / `⌈0.1·f·n⌉`).
pub fn make_split(
    panel: &Panel,
    coverage_fraction: f64,
    temporal_mode: TemporalMode,
    seed: u64,
) -> Result<SplitPlan> {
    if !(coverage_fraction > 0.0 && coverage_fraction <= 0.9) {
        return Err(Error::Parameter {
            name: "coverage_fraction",
            reason: format!("must be in (0, 0.9], got {coverage_fraction}"),
        });
    }
    // Ceiling that forgives float noise: 0.9 * 0.9 * 100 evaluates to
    // 81.000000000000014, which must count as 81, not 82.
    fn ceil_count(x: f64) -> usize {
        let r = x.round();
        if (x - r).abs() < 1e-9 { r as usize } else { x.ceil() as usize }
    }
    let n = panel.n();
    let test_count = (0.1 * n as f64).round() as usize;
    let nf = n as f64;
    let train_count = ceil_count(0.9 * coverage_fraction * nf);
    let val_count = ceil_count(0.1 * coverage_fraction * nf);
    if train_count == 0 || val_count == 0 {
        return Err(Error::Split(format!(
            "coverage {coverage_fraction} of {n} nodes leaves an empty train or validation set"
        )));
    }
    if test_count + train_count + val_count > n {
        return Err(Error::Split(format!(
            "{test_count} test + {train_count} train + {val_count} val exceeds {n} nodes"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let test_ids = order[..test_count].to_vec();
    let rest = &order[test_count..];
    let train_ids = rest[..train_count].to_vec();
    let val_ids = rest[train_count..train_count + val_count].to_vec();

    let time_boundaries = match temporal_mode {
        TemporalMode::WithinPeriod => None,
        TemporalMode::Future => {
            let p = panel.p();
            let train_end = (0.7 * p as f64).floor() as usize;
            let val_end = (0.85 * p as f64).floor() as usize;
            if train_end == 0 || val_end <= train_end || val_end >= p {
                return Err(Error::Split(format!(
                    "{p} time steps are too few for a 70/15/15 chronological cut"
                )));
            }
            Some((train_end, val_end))
        }
    };

    Ok(SplitPlan {
        test_ids,
        train_ids,
        val_ids,
        coverage_fraction,
        temporal_mode,
        time_boundaries,
    })
}

/// Per-channel min-max ranges computed on the training split, for mapping
/// features and the target input channel into [0,1] and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    /// One `(min, max)` per raw feature channel.
    pub feature_ranges: Vec<(f64, f64)>,
    /// `(min, max)` of observed training targets.
    pub target_range: (f64, f64),
}

fn scale_with(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn unscale_with(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        v * (hi - lo) + lo
    } else {
        lo
    }
}

impl ScaleRecord {
    pub fn scale_feature(&self, chan: usize, v: f64) -> f64 {
        scale_with(v, self.feature_ranges[chan])
    }

    pub fn scale_target(&self, v: f64) -> f64 {
        scale_with(v, self.target_range)
    }

    pub fn unscale_target(&self, v: f64) -> f64 {
        unscale_with(v, self.target_range)
    }
}

/// Compute min-max scaling statistics on the training split only:
/// training nodes, and in future mode training times. Values outside the
/// training range simply scale outside [0,1]; constant channels map to 0.
///
/// The panel itself is left in raw units — scaling is applied where model
/// inputs are assembled, and inverted for reporting — so count targets
/// keep exact zeros for the zero-inflated likelihoods.
pub fn minmax_scale(panel: &Panel, split: &SplitPlan) -> ScaleRecord {
    let (t0, t1) = split.train_time_range(panel.p());
    let mut feature_ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); panel.k_raw()];
    let mut target_range = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in &split.train_ids {
        for j in t0..t1 {
            for (c, range) in feature_ranges.iter_mut().enumerate() {
                let v = panel.x_at(i, j, c);
                range.0 = range.0.min(v);
                range.1 = range.1.max(v);
            }
            if panel.observed(i, j) == 1.0 {
                let v = panel.target(i, j);
                target_range.0 = target_range.0.min(v);
                target_range.1 = target_range.1.max(v);
            }
        }
    }
    // A split with no observed training targets still needs a usable
    // record; fall back to the degenerate constant range.
    if target_range.0 > target_range.1 {
        target_range = (0.0, 0.0);
    }
    for r in &mut feature_ranges {
        if r.0 > r.1 {
            *r = (0.0, 0.0);
        }
    }
    ScaleRecord { feature_ranges, target_range }
}

/// Learned one-hot encoding: which channels are categorical and the label
/// set (sorted for determinism) each expands to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotMap {
    /// `(channel index in the original panel, sorted labels)`.
    pub channels: Vec<(usize, Vec<f64>)>,
}

/// Learn label sets for the declared categorical channels and expand them
/// into indicator channels. Returns the encoded panel and the mapping for
/// applying the identical encoding to other panels.
pub fn one_hot(panel: &Panel, categorical_channels: &[usize]) -> Result<(Panel, OneHotMap)> {
    for &c in categorical_channels {
        if c >= panel.k_raw() {
            return Err(Error::Parameter {
                name: "categorical_channels",
                reason: format!("channel {c} out of range (k_raw = {})", panel.k_raw()),
            });
        }
    }
    let mut channels = Vec::new();
    for &c in categorical_channels {
        let mut labels = Vec::new();
        for i in 0..panel.n() {
            for j in 0..panel.p() {
                let v = panel.x_at(i, j, c);
                if !v.is_finite() {
                    return Err(Error::NumericDomain {
                        op: "one_hot",
                        index: (i * panel.p() + j) * panel.k_raw() + c,
                        value: v,
                    });
                }
                labels.push(v);
            }
        }
        labels.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
        labels.dedup();
        channels.push((c, labels));
    }
    let map = OneHotMap { channels };
    let encoded = apply_one_hot(panel, &map)?;
    Ok((encoded, map))
}

/// Apply a learned one-hot encoding. Labels unseen at learning time map
/// to an all-zero indicator vector, with a warning.
pub fn apply_one_hot(panel: &Panel, map: &OneHotMap) -> Result<Panel> {
    if map.channels.is_empty() {
        return Ok(panel.clone());
    }
    let by_channel: HashMap<usize, &Vec<f64>> =
        map.channels.iter().map(|(c, l)| (*c, l)).collect();
    let mut names = Vec::new();
    for (c, name) in panel.channel_names().iter().enumerate() {
        match by_channel.get(&c) {
            Some(labels) => {
                for l in *labels {
                    names.push(format!("{name}={l}"));
                }
            }
            None => names.push(name.clone()),
        }
    }
    let (n, p) = (panel.n(), panel.p());
    let k_new = names.len();
    let mut x = Vec::with_capacity(n * p * k_new);
    let mut warned = false;
    for i in 0..n {
        for j in 0..p {
            for c in 0..panel.k_raw() {
                let v = panel.x_at(i, j, c);
                match by_channel.get(&c) {
                    Some(labels) => {
                        let mut hit = false;
                        for &l in *labels {
                            let on = v == l;
                            hit |= on;
                            x.push(if on { 1.0 } else { 0.0 });
                        }
                        if !hit && !warned {
                            log::warn!(
                                "one-hot: unseen label {v} in channel `{}`; encoding as all zeros",
                                panel.channel_names()[c]
                            );
                            warned = true;
                        }
                    }
                    None => x.push(v),
                }
            }
        }
    }
    Panel::new(
        panel.node_ids().to_vec(),
        panel.time_index().to_vec(),
        x,
        names,
        panel.targets().clone(),
        panel.missing_mask().clone(),
    )
}

// ---------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------

/// Load a panel from a targets CSV (`node_id,time,value`, blank value =
/// missing) and an optional wide features CSV
/// (`node_id,time,feat_1,…,feat_k`). The node set and time index are the
/// sorted unions over both files; feature rows must cover the full grid.
pub fn load_panel(features_file: Option<&Path>, targets_file: &Path) -> Result<Panel> {
    let targets = read_keyed_rows(targets_file)?;
    let features = match features_file {
        Some(p) => Some(read_keyed_rows(p)?),
        None => None,
    };

    let mut nodes: BTreeSet<String> = targets.rows.keys().map(|(n, _)| n.clone()).collect();
    let mut times: BTreeSet<i64> = targets.rows.keys().map(|(_, t)| *t).collect();
    if let Some(f) = &features {
        nodes.extend(f.rows.keys().map(|(n, _)| n.clone()));
        times.extend(f.rows.keys().map(|(_, t)| *t));
    }
    let node_ids: Vec<String> = nodes.into_iter().collect();
    let time_index: Vec<i64> = times.into_iter().collect();
    let (n, p) = (node_ids.len(), time_index.len());

    let (k_raw, channel_names) = match &features {
        Some(f) => (f.value_columns.len(), f.value_columns.clone()),
        None => (0, Vec::new()),
    };

    // Features must exist for every (node, time) cell of the grid.
    if let Some(f) = &features {
        let mut offenders = Vec::new();
        'scan: for id in &node_ids {
            for t in &time_index {
                if !f.rows.contains_key(&(id.clone(), *t)) {
                    offenders.push(format!("({id}, {t})"));
                    if offenders.len() == 10 {
                        break 'scan;
                    }
                }
            }
        }
        if !offenders.is_empty() {
            return Err(Error::Ingestion(format!(
                "feature rows missing for grid keys (first {}): {}",
                offenders.len(),
                offenders.join(", ")
            )));
        }
    }

    let mut x = vec![0.0; n * p * k_raw];
    let mut t_mat = Mat::zeros(n, p);
    let mut n_mask = Mat::zeros(n, p);
    for (i, id) in node_ids.iter().enumerate() {
        for (j, tm) in time_index.iter().enumerate() {
            if let Some(f) = &features {
                let row = &f.rows[&(id.clone(), *tm)];
                let base = (i * p + j) * k_raw;
                for (c, v) in row.iter().enumerate() {
                    let v = v.ok_or_else(|| Error::Ingestion(format!(
                        "blank feature cell for ({id}, {tm}) column {}",
                        channel_names[c]
                    )))?;
                    x[base + c] = v;
                }
            }
            match targets.rows.get(&(id.clone(), *tm)) {
                Some(row) => match row[0] {
                    Some(v) => {
                        t_mat.set(i, j, v);
                        n_mask.set(i, j, 1.0);
                    }
                    None => {} // blank target cell: missing
                },
                None => {} // absent target row: missing
            }
        }
    }
    Panel::new(node_ids, time_index, x, channel_names, t_mat, n_mask)
}

struct KeyedRows {
    /// `(node_id, time)` → values in column order; `None` marks a blank
    /// cell.
    rows: BTreeMap<(String, i64), Vec<Option<f64>>>,
    value_columns: Vec<String>,
}

/// Read a CSV keyed by `node_id,time`. Blank value cells come back as
/// `None`; whether a blank is legal is the caller's call (targets yes,
/// features no — checked at grid assembly for a precise message).
fn read_keyed_rows(path: &Path) -> Result<KeyedRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 {
        return Err(Error::Ingestion(format!(
            "{}: expected at least `node_id,time,value` columns, got {}",
            path.display(),
            headers.len()
        )));
    }
    let value_columns: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut rows = BTreeMap::new();
    for (recno, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        let location = format!("{}:{}", path.display(), recno + 2); // +1 header, +1 1-based
        let node = record
            .get(0)
            .ok_or_else(|| Error::Parse { location: location.clone(), reason: "missing node_id".into() })?
            .to_string();
        let time_str = record.get(1).unwrap_or("");
        let time: i64 = time_str.parse().map_err(|_| Error::Parse {
            location: location.clone(),
            reason: format!("non-integer time `{time_str}`"),
        })?;
        let mut values = Vec::with_capacity(value_columns.len());
        for (c, name) in value_columns.iter().enumerate() {
            let cell = record.get(c + 2).unwrap_or("");
            if cell.is_empty() {
                values.push(None);
            } else {
                values.push(Some(cell.parse::<f64>().map_err(|_| Error::Parse {
                    location: format!("{location} column {name}"),
                    reason: format!("non-numeric cell `{cell}`"),
                })?));
            }
        }
        if rows.insert((node.clone(), time), values).is_some() {
            return Err(Error::Ingestion(format!(
                "duplicate row for ({node}, {time}) at {location}"
            )));
        }
    }
    Ok(KeyedRows { rows, value_columns })
}

/// Write a panel back to the two-file CSV layout (used by the synthetic
/// data command). Returns nothing; files land at the given paths.
pub fn write_panel(panel: &Panel, features_file: &Path, targets_file: &Path) -> Result<()> {
    let mut t_out = String::from("node_id,time,value\n");
    for (i, id) in panel.node_ids().iter().enumerate() {
        for (j, tm) in panel.time_index().iter().enumerate() {
            if panel.observed(i, j) == 1.0 {
                t_out.push_str(&format!("{id},{tm},{}\n", panel.target(i, j)));
            } else {
                t_out.push_str(&format!("{id},{tm},\n"));
            }
        }
    }
    std::fs::write(targets_file, t_out)
        .map_err(|e| Error::io(targets_file.display().to_string(), e))?;

    let mut f_out = String::from("node_id,time");
    for name in panel.channel_names() {
        f_out.push(',');
        f_out.push_str(name);
    }
    f_out.push('\n');
    for (i, id) in panel.node_ids().iter().enumerate() {
        for (j, tm) in panel.time_index().iter().enumerate() {
            f_out.push_str(&format!("{id},{tm}"));
            for c in 0..panel.k_raw() {
                f_out.push_str(&format!(",{}", panel.x_at(i, j, c)));
            }
            f_out.push('\n');
        }
    }
    std::fs::write(features_file, f_out)
        .map_err(|e| Error::io(features_file.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_panel() -> Panel {
        // 2 nodes × 3 times, k_raw = 1.
        Panel::new(
            vec!["a".into(), "b".into()],
            vec![0, 1, 2],
            vec![0.0, 5.0, 10.0, 1.0, 1.0, 1.0],
            vec!["f0".into()],
            Mat::from_rows(&[vec![0.0, 2.0, 4.0], vec![1.0, 0.0, 3.0]]).unwrap(),
            Mat::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn panel_invariants_enforced() {
        // Missing entry with nonzero stored target is rejected.
        let err = Panel::new(
            vec!["a".into()],
            vec![0],
            vec![],
            vec![],
            Mat::from_rows(&[vec![3.0]]).unwrap(),
            Mat::from_rows(&[vec![0.0]]).unwrap(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("stored as 0"));
    }

    #[test]
    fn outlier_filter_flags_only_beyond_three_sigma() {
        // 19 ones and a single 100: mean 5.95, population std ≈ 21.58,
        // 3σ ≈ 64.7 < |100 − 5.95|, so the spike is flipped to missing.
        let p = 20;
        let mut t = vec![1.0; p];
        t[7] = 100.0;
        let panel = Panel::new(
            vec!["a".into()],
            (0..p as i64).collect(),
            vec![],
            vec![],
            Mat::from_vec(1, p, t).unwrap(),
            Mat::full(1, p, 1.0),
        )
        .unwrap();
        let filtered = outlier_filter(&panel);
        assert_eq!(filtered.observed(0, 7), 0.0);
        assert_eq!(filtered.target(0, 7), 0.0);
        assert_eq!(filtered.observed_count(), p - 1);
    }

    #[test]
    fn outlier_filter_keeps_constant_segments() {
        let panel = Panel::new(
            vec!["a".into()],
            vec![0, 1, 2],
            vec![],
            vec![],
            Mat::from_rows(&[vec![4.0, 4.0, 4.0]]).unwrap(),
            Mat::full(1, 3, 1.0),
        )
        .unwrap();
        let filtered = outlier_filter(&panel);
        assert_eq!(filtered.observed_count(), 3);
    }

    #[test]
    fn outlier_filter_ignores_all_missing_segments() {
        let panel = Panel::new(
            vec!["a".into()],
            vec![0, 1],
            vec![],
            vec![],
            Mat::zeros(1, 2),
            Mat::zeros(1, 2),
        )
        .unwrap();
        let filtered = outlier_filter(&panel);
        assert_eq!(filtered.observed_count(), 0);
    }

    fn panel_of_size(n: usize) -> Panel {
        Panel::new(
            (0..n).map(|i| format!("n{i}")).collect(),
            vec![0, 1],
            vec![],
            vec![],
            Mat::zeros(n, 2),
            Mat::full(n, 2, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn split_counts_follow_the_nine_to_one_rule() {
        let panel = panel_of_size(100);
        let s = make_split(&panel, 0.9, TemporalMode::WithinPeriod, 7).unwrap();
        assert_eq!(s.test_ids.len(), 10);
        assert_eq!(s.train_ids.len(), 81);
        assert_eq!(s.val_ids.len(), 9);
        assert!(s.time_boundaries.is_none());
    }

    #[test]
    fn split_sets_are_disjoint_and_deterministic() {
        let panel = panel_of_size(64);
        let a = make_split(&panel, 0.5, TemporalMode::WithinPeriod, 3).unwrap();
        let b = make_split(&panel, 0.5, TemporalMode::WithinPeriod, 3).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a
            .test_ids
            .iter()
            .chain(&a.train_ids)
            .chain(&a.val_ids)
            .copied()
            .collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total, "overlapping split sets");
    }

    #[test]
    fn split_trains_nest_across_coverage_fractions() {
        let panel = panel_of_size(64);
        let mut prev: Vec<usize> = Vec::new();
        for f in [0.05, 0.2, 0.5, 0.9] {
            let s = make_split(&panel, f, TemporalMode::WithinPeriod, 11).unwrap();
            assert!(
                prev.iter().all(|id| s.train_ids.contains(id)),
                "train set at lower coverage must be a subset"
            );
            assert_eq!(s.train_ids[..prev.len()], prev[..]);
            prev = s.train_ids;
        }
    }

    #[test]
    fn split_test_set_fixed_across_coverages() {
        let panel = panel_of_size(64);
        let a = make_split(&panel, 0.2, TemporalMode::WithinPeriod, 11).unwrap();
        let b = make_split(&panel, 0.9, TemporalMode::WithinPeriod, 11).unwrap();
        assert_eq!(a.test_ids, b.test_ids);
    }

    #[test]
    fn split_future_mode_cuts_time_70_15_15() {
        let mut panel = panel_of_size(64);
        panel.time_index = (0..100).collect();
        panel.t = Mat::zeros(64, 100);
        panel.n_mask = Mat::full(64, 100, 1.0);
        let s = make_split(&panel, 0.9, TemporalMode::Future, 1).unwrap();
        assert_eq!(s.time_boundaries, Some((70, 85)));
        assert_eq!(s.train_time_range(100), (0, 70));
        assert_eq!(s.val_time_range(100), (70, 85));
        assert_eq!(s.test_time_range(100), (85, 100));
    }

    #[test]
    fn split_rejects_out_of_range_coverage() {
        let panel = panel_of_size(64);
        assert!(make_split(&panel, 0.0, TemporalMode::WithinPeriod, 1).is_err());
        assert!(make_split(&panel, 0.95, TemporalMode::WithinPeriod, 1).is_err());
    }

    #[test]
    fn scale_record_maps_train_range_to_unit_interval() {
        let panel = small_panel();
        let split = SplitPlan {
            test_ids: vec![],
            train_ids: vec![0],
            val_ids: vec![1],
            coverage_fraction: 0.9,
            temporal_mode: TemporalMode::WithinPeriod,
            time_boundaries: None,
        };
        let rec = minmax_scale(&panel, &split);
        // Node 0 features are [0,5,10] → range (0,10).
        assert_eq!(rec.feature_ranges[0], (0.0, 10.0));
        assert_abs_diff_eq!(rec.scale_feature(0, 5.0), 0.5);
        // Node 0 targets are [0,2,4] all observed.
        assert_eq!(rec.target_range, (0.0, 4.0));
        assert_abs_diff_eq!(rec.scale_target(2.0), 0.5);
        // Values outside the train range scale outside [0,1] without error.
        assert_abs_diff_eq!(rec.scale_target(8.0), 2.0);
    }

    #[test]
    fn scale_round_trip_within_1e12() {
        let panel = small_panel();
        let split = SplitPlan {
            test_ids: vec![],
            train_ids: vec![0, 1],
            val_ids: vec![],
            coverage_fraction: 0.9,
            temporal_mode: TemporalMode::WithinPeriod,
            time_boundaries: None,
        };
        let rec = minmax_scale(&panel, &split);
        for v in [0.0, 0.7, 2.3, 4.0, 9.5] {
            assert_abs_diff_eq!(rec.unscale_target(rec.scale_target(v)), v, epsilon = 1e-12);
        }
    }

    #[test]
    fn scale_constant_channel_maps_to_zero() {
        let rec = ScaleRecord { feature_ranges: vec![(3.0, 3.0)], target_range: (5.0, 5.0) };
        assert_eq!(rec.scale_feature(0, 3.0), 0.0);
        assert_eq!(rec.scale_target(5.0), 0.0);
        assert_eq!(rec.unscale_target(0.0), 5.0);
    }

    #[test]
    fn one_hot_expands_sorted_labels() {
        let panel = Panel::new(
            vec!["a".into(), "b".into()],
            vec![0],
            vec![2.0, 1.0],
            vec!["cat".into()],
            Mat::zeros(2, 1),
            Mat::full(2, 1, 1.0),
        )
        .unwrap();
        let (enc, map) = one_hot(&panel, &[0]).unwrap();
        assert_eq!(enc.k_raw(), 2);
        assert_eq!(enc.channel_names(), &["cat=1".to_string(), "cat=2".to_string()]);
        assert_eq!(enc.x_at(0, 0, 0), 0.0); // a has label 2
        assert_eq!(enc.x_at(0, 0, 1), 1.0);
        assert_eq!(enc.x_at(1, 0, 0), 1.0); // b has label 1
        assert_eq!(map.channels[0].1, vec![1.0, 2.0]);
    }

    #[test]
    fn one_hot_unseen_label_is_all_zeros() {
        let map = OneHotMap { channels: vec![(0, vec![1.0, 2.0])] };
        let panel = Panel::new(
            vec!["a".into()],
            vec![0],
            vec![9.0],
            vec!["cat".into()],
            Mat::zeros(1, 1),
            Mat::full(1, 1, 1.0),
        )
        .unwrap();
        let enc = apply_one_hot(&panel, &map).unwrap();
        assert_eq!(enc.x_at(0, 0, 0), 0.0);
        assert_eq!(enc.x_at(0, 0, 1), 0.0);
    }

    #[test]
    fn one_hot_empty_declaration_is_identity() {
        let panel = small_panel();
        let (enc, map) = one_hot(&panel, &[]).unwrap();
        assert_eq!(enc.k_raw(), panel.k_raw());
        assert!(map.channels.is_empty());
    }

    #[test]
    fn load_panel_round_trips_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("features.csv");
        let t = dir.path().join("targets.csv");
        let panel = small_panel();
        write_panel(&panel, &f, &t).unwrap();
        let loaded = load_panel(Some(&f), &t).unwrap();
        assert_eq!(loaded.node_ids(), panel.node_ids());
        assert_eq!(loaded.time_index(), panel.time_index());
        assert_eq!(loaded.targets(), panel.targets());
        assert_eq!(loaded.missing_mask(), panel.missing_mask());
        assert_eq!(loaded.x_at(0, 1, 0), 5.0);
    }

    #[test]
    fn load_panel_blank_target_becomes_missing() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("targets.csv");
        std::fs::write(&t, "node_id,time,value\na,0,1.5\na,1,\nb,0,2\nb,1,0\n").unwrap();
        let p = load_panel(None, &t).unwrap();
        assert_eq!(p.k_raw(), 0);
        assert_eq!(p.observed(0, 1), 0.0);
        assert_eq!(p.observed_count(), 3);
    }

    #[test]
    fn load_panel_duplicate_key_errors() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("targets.csv");
        std::fs::write(&t, "node_id,time,value\na,0,1\na,0,2\n").unwrap();
        let err = load_panel(None, &t).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)), "{err}");
    }

    #[test]
    fn load_panel_non_numeric_cell_names_location() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("targets.csv");
        std::fs::write(&t, "node_id,time,value\na,0,xyz\n").unwrap();
        let err = load_panel(None, &t).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert!(location.contains(":2"), "{location}"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_panel_missing_feature_rows_lists_offenders() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("features.csv");
        let t = dir.path().join("targets.csv");
        std::fs::write(&t, "node_id,time,value\na,0,1\na,1,2\n").unwrap();
        std::fs::write(&f, "node_id,time,f0\na,0,0.5\n").unwrap();
        let err = load_panel(Some(&f), &t).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(a, 1)"), "{msg}");
    }
}
