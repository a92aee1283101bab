//! Evaluation: interpolate the test span from a checkpoint, then score
//! the held-out nodes.
//!
//! [`interpolate`] tiles the test time range with non-overlapping
//! windows of the trained length `h` — a trailing partial window is
//! zero-padded and its padding excluded via `N` — so every test
//! `(node, time)` entry is predicted exactly once. Every metric then
//! reads only the entries with evaluation weight `(1−M)∘N = 1`: the
//! measured entries of sensor-free test nodes. Metrics over zero such
//! entries are an error, not a silent 0.
//!
//! Point and Gaussian heads predict in min-max scaled space and are
//! unscaled before entering the bundle; the count heads are already in
//! raw units. `metric_nll` is the one metric that stays in each head's
//! own space (scaled for the Gaussian head), since it scores the head's
//! distribution, not the reconstruction.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataio::{Panel, ScaleRecord, SplitPlan};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{gnll_scalar, nb_log_pmf_scalar, zinb_log_pmf_scalar};
use crate::mat::Mat;
use crate::model::{
    assemble_input, forward, predict_expected, stage_transitions, HeadKind, HeadOutput,
};
use crate::sampler::{assemble_sample, TrainingSample};
use crate::trainer::Checkpoint;

/// Metric knobs, echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Equal-width histogram bins for the KL metric.
    pub bins: usize,
    /// Additive smoothing added to every bin before normalization.
    pub smoothing: f64,
    /// A prediction counts as "zero" when its magnitude is below this.
    pub tau: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { bins: 50, smoothing: 1e-9, tau: 0.99 }
    }
}

/// Per-entry distribution parameters retained for `metric_nll`.
#[derive(Debug, Clone)]
pub enum PredDist {
    /// The point head carries no distribution.
    Point,
    /// Scaled-space mean and variance.
    Gaussian { mean: Mat, var: Mat },
    NegBin { n: Mat, p: Mat },
    Zinb { n: Mat, p: Mat, pi: Mat },
}

/// Everything evaluation reads, aligned over the full node set and the
/// test time range: raw targets, unscaled expected-value predictions,
/// the seen/unseen mask `M` (0 on test nodes), and the measurement mask
/// `N` (0 where the panel has no value or the column is padding).
#[derive(Debug, Clone)]
pub struct EvalBundle {
    pub node_ids: Vec<String>,
    pub t: Mat,
    pub pred: Mat,
    pub m: Mat,
    pub n: Mat,
    /// Window length predictions were produced with.
    pub h: usize,
    pub dist: PredDist,
    /// Scale used at training time; `metric_nll` needs it for the
    /// Gaussian head.
    pub scale: ScaleRecord,
}

impl EvalBundle {
    /// `(1−M)∘N`: 1 exactly on the entries metrics may read.
    pub fn weights(&self) -> Mat {
        let mut w = Mat::zeros(self.t.rows(), self.t.cols());
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                w.set(i, j, (1.0 - self.m.get(i, j)) * self.n.get(i, j));
            }
        }
        w
    }

    /// Number of evaluated entries.
    pub fn n_entries(&self) -> usize {
        self.weights().as_slice().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Zero-pad a sample's time axis out to `h` columns: targets stay 0,
/// `N = 0` marks the padding as missing (so the missing indicator is 1
/// there), `M` keeps each row's role, and raw features pad with zeros.
pub(crate) fn pad_sample(sample: TrainingSample, h: usize) -> TrainingSample {
    let h_real = sample.h();
    if h_real == h {
        return sample;
    }
    let n = sample.n_nodes();
    let k = sample.k();
    let mut t_s = Mat::zeros(n, h);
    let mut t_s_masked = Mat::zeros(n, h);
    let mut m_s = Mat::zeros(n, h);
    let mut n_s = Mat::zeros(n, h);
    let mut x_s = vec![0.0; n * h * k];
    for r in 0..n {
        let role_m = sample.m_s.get(r, 0);
        for t in 0..h {
            if t < h_real {
                t_s.set(r, t, sample.t_s.get(r, t));
                t_s_masked.set(r, t, sample.t_s_masked.get(r, t));
                m_s.set(r, t, sample.m_s.get(r, t));
                n_s.set(r, t, sample.n_s.get(r, t));
                let src = (r * h_real + t) * k;
                let dst = (r * h + t) * k;
                x_s[dst..dst + k].copy_from_slice(&sample.x_s[src..src + k]);
            } else {
                m_s.set(r, t, role_m);
                // Padded positions are missing measurements: raw
                // channels 0, mask indicator = role, missing = 1.
                let dst = (r * h + t) * k;
                x_s[dst + k - 2] = role_m;
                x_s[dst + k - 1] = 1.0;
            }
        }
    }
    TrainingSample {
        node_index: sample.node_index,
        // The window reports the padded extent — h() derives from it —
        // even though the panel ends inside it.
        window: (sample.window.0, sample.window.0 + h),
        x_s,
        t_s,
        t_s_masked,
        m_s,
        n_s,
        w_s: sample.w_s,
    }
}

/// Check a checkpoint against the panel and graphs it is being applied
/// to: channel counts, window length, and stack count must reproduce
/// the recorded model shape exactly.
fn check_compatibility(ckpt: &Checkpoint, panel: &Panel, graphs: &[Graph]) -> Result<()> {
    if graphs.is_empty() || graphs.len() > 2 {
        return Err(Error::Config(format!(
            "evaluation takes one adjacency, or two for a dual stack; got {}",
            graphs.len()
        )));
    }
    let dual = graphs.len() == 2;
    let expect = ckpt.train_config.model_config(panel.k_raw(), dual);
    if expect != ckpt.model_config {
        return Err(Error::Schema(format!(
            "checkpoint model shape {:?} does not match this panel/graph combination {:?}",
            ckpt.model_config, expect
        )));
    }
    if ckpt.train_config.features && ckpt.scale.feature_ranges.len() != panel.k_raw() {
        return Err(Error::Schema(format!(
            "checkpoint scaled {} feature channels, panel has {}",
            ckpt.scale.feature_ranges.len(),
            panel.k_raw()
        )));
    }
    for g in graphs {
        for id in panel.node_ids() {
            g.index_of(id)?;
        }
    }
    Ok(())
}

/// Predict the full test span from a checkpoint.
///
/// The posture is fixed for every variant so comparisons are fair:
/// training and validation nodes feed the model as observed, test nodes
/// are masked, and any remaining sensor-free nodes enter as
/// forced-missing extras.
pub fn interpolate(
    panel: &Panel,
    graphs: &[Graph],
    split: &SplitPlan,
    ckpt: &Checkpoint,
) -> Result<EvalBundle> {
    check_compatibility(ckpt, panel, graphs)?;
    let params = ckpt.to_params()?;
    let cfg = &ckpt.train_config;
    let h = cfg.h;
    let (t0, t1) = split.test_time_range(panel.p());
    if t1 <= t0 {
        return Err(Error::Split(format!("empty test time range [{t0}, {t1})")));
    }
    let span = t1 - t0;

    let mut observed: Vec<usize> = split.train_ids.iter().chain(&split.val_ids).copied().collect();
    observed.sort_unstable();
    let masked = split.test_ids.clone();
    let mut covered = vec![false; panel.n()];
    for &i in observed.iter().chain(&masked) {
        covered[i] = true;
    }
    let extras: Vec<usize> = (0..panel.n()).filter(|&i| !covered[i]).collect();

    let mut t = Mat::zeros(panel.n(), span);
    let mut n_mat = Mat::zeros(panel.n(), span);
    let mut m = Mat::full(panel.n(), span, 1.0);
    for &i in &masked {
        for j in 0..span {
            m.set(i, j, 0.0);
        }
    }
    for i in 0..panel.n() {
        for j in 0..span {
            t.set(i, j, panel.target(i, t0 + j));
            n_mat.set(i, j, panel.observed(i, t0 + j));
        }
    }

    let mut pred = Mat::zeros(panel.n(), span);
    let head = ckpt.model_config.head;
    let mut dist_mats: Vec<Mat> = match head {
        HeadKind::Point => vec![],
        HeadKind::Gnll | HeadKind::Nb => vec![Mat::zeros(panel.n(), span); 2],
        HeadKind::Zinb => vec![Mat::zeros(panel.n(), span); 3],
    };

    let mut start = t0;
    while start < t1 {
        let end = (start + h).min(t1);
        let sample = pad_sample(
            assemble_sample(panel, &graphs[0], (start, end), &observed, &masked, &extras)?,
            h,
        );
        let tape = Tape::new();
        let staged = params.stage(&tape);
        let mut trans = Vec::with_capacity(graphs.len());
        for g in graphs {
            let rows: Vec<usize> = sample
                .w_s
                .node_ids()
                .iter()
                .map(|id| g.index_of(id))
                .collect::<Result<_>>()?;
            trans.push(stage_transitions(&tape, &g.subgraph_by_index(&rows).transitions()));
        }
        let input = assemble_input(&sample, panel.channel_names(), &ckpt.scale, cfg.selection())?;
        let h0 = tape.constant(input.h0);
        let out = forward(&staged, &trans, &h0)?;
        let expected = predict_expected(&out)?.value();

        let col0 = start - t0;
        let cols = end - start;
        let raw_head = cfg.loss.uses_raw_counts();
        for (r, &i) in sample.node_index.iter().enumerate() {
            for c in 0..cols {
                let e = expected.get(r, c);
                pred.set(i, col0 + c, if raw_head { e } else { ckpt.scale.unscale_target(e) });
            }
        }
        let parts: Vec<Mat> = match &out {
            HeadOutput::Point { .. } => vec![],
            HeadOutput::Gaussian { mean, var } => vec![mean.value(), var.value()],
            HeadOutput::NegBin { n, p } => vec![n.value(), p.value()],
            HeadOutput::Zinb { n, p, pi } => vec![n.value(), p.value(), pi.value()],
        };
        for (dm, part) in dist_mats.iter_mut().zip(&parts) {
            for (r, &i) in sample.node_index.iter().enumerate() {
                for c in 0..cols {
                    dm.set(i, col0 + c, part.get(r, c));
                }
            }
        }
        start = end;
    }

    let dist = match head {
        HeadKind::Point => PredDist::Point,
        HeadKind::Gnll => {
            let var = dist_mats.pop().expect("var");
            let mean = dist_mats.pop().expect("mean");
            PredDist::Gaussian { mean, var }
        }
        HeadKind::Nb => {
            let p = dist_mats.pop().expect("p");
            let n = dist_mats.pop().expect("n");
            PredDist::NegBin { n, p }
        }
        HeadKind::Zinb => {
            let pi = dist_mats.pop().expect("pi");
            let p = dist_mats.pop().expect("p");
            let n = dist_mats.pop().expect("n");
            PredDist::Zinb { n, p, pi }
        }
    };

    Ok(EvalBundle {
        node_ids: panel.node_ids().to_vec(),
        t,
        pred,
        m,
        n: n_mat,
        h,
        dist,
        scale: ckpt.scale.clone(),
    })
}

/// Collect the `(true, pred)` pairs of every evaluated entry.
fn evaluated_pairs(bundle: &EvalBundle) -> Vec<(f64, f64)> {
    let w = bundle.weights();
    let mut pairs = Vec::new();
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if w.get(i, j) == 1.0 {
                pairs.push((bundle.t.get(i, j), bundle.pred.get(i, j)));
            }
        }
    }
    pairs
}

fn require_entries(pairs: &[(f64, f64)], what: &'static str) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Undefined { what });
    }
    Ok(())
}

/// Mask-weighted mean absolute error in raw units.
pub fn metric_mae(bundle: &EvalBundle) -> Result<f64> {
    let pairs = evaluated_pairs(bundle);
    require_entries(&pairs, "MAE")?;
    Ok(pairs.iter().map(|(t, p)| (t - p).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Mask-weighted root mean squared error in raw units.
pub fn metric_rmse(bundle: &EvalBundle) -> Result<f64> {
    let pairs = evaluated_pairs(bundle);
    require_entries(&pairs, "RMSE")?;
    Ok((pairs.iter().map(|(t, p)| (t - p) * (t - p)).sum::<f64>() / pairs.len() as f64).sqrt())
}

/// KL(true ‖ predicted) between histograms of the evaluated entries:
/// `bins` equal-width bins over the union range of both value sets,
/// `smoothing` added to every bin before normalization. Identical
/// degenerate distributions give 0; a truly empty predicted bin with
/// `smoothing = 0` gives `+∞`.
pub fn metric_kl(bundle: &EvalBundle, bins: usize, smoothing: f64) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Parameter { name: "bins", reason: "must be at least 1".into() });
    }
    if !(smoothing >= 0.0) {
        return Err(Error::Parameter {
            name: "smoothing",
            reason: format!("must be non-negative, got {smoothing}"),
        });
    }
    let pairs = evaluated_pairs(bundle);
    require_entries(&pairs, "KL divergence")?;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(t, p) in &pairs {
        lo = lo.min(t).min(p);
        hi = hi.max(t).max(p);
    }
    if hi <= lo {
        return Ok(0.0);
    }
    let width = (hi - lo) / bins as f64;
    let mut count_t = vec![0usize; bins];
    let mut count_p = vec![0usize; bins];
    for &(t, p) in &pairs {
        let bt = (((t - lo) / width) as usize).min(bins - 1);
        let bp = (((p - lo) / width) as usize).min(bins - 1);
        count_t[bt] += 1;
        count_p[bp] += 1;
    }
    let total = pairs.len() as f64 + bins as f64 * smoothing;
    let mut kl = 0.0;
    for b in 0..bins {
        let qt = (count_t[b] as f64 + smoothing) / total;
        let qp = (count_p[b] as f64 + smoothing) / total;
        if qt > 0.0 {
            kl += qt * (qt / qp).ln();
        }
    }
    Ok(kl)
}

/// Fraction of truly-zero evaluated entries predicted below `tau` in
/// magnitude. `None` when the test span holds no true zeros — absent,
/// not zero.
pub fn true_zero_rate(bundle: &EvalBundle, tau: f64) -> Result<Option<f64>> {
    let pairs = evaluated_pairs(bundle);
    require_entries(&pairs, "true-zero rate")?;
    let zeros: Vec<f64> = pairs.iter().filter(|(t, _)| *t == 0.0).map(|(_, p)| *p).collect();
    if zeros.is_empty() {
        return Ok(None);
    }
    let hits = zeros.iter().filter(|p| p.abs() < tau).count();
    Ok(Some(hits as f64 / zeros.len() as f64))
}

/// Mask-weighted mean negative log-likelihood of the head's own
/// distribution on the evaluated entries; `None` for the point head.
/// The Gaussian head is scored in scaled space (its training space) and
/// keeps the same formula as its loss — no `½ln 2π` constant.
pub fn metric_nll(bundle: &EvalBundle) -> Result<Option<f64>> {
    if matches!(bundle.dist, PredDist::Point) {
        return Ok(None);
    }
    let w = bundle.weights();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            if w.get(i, j) != 1.0 {
                continue;
            }
            let t = bundle.t.get(i, j);
            let nll = match &bundle.dist {
                PredDist::Point => unreachable!("handled above"),
                PredDist::Gaussian { mean, var } => {
                    gnll_scalar(bundle.scale.scale_target(t), mean.get(i, j), var.get(i, j))
                }
                PredDist::NegBin { n, p } => -nb_log_pmf_scalar(t, n.get(i, j), p.get(i, j)),
                PredDist::Zinb { n, p, pi } => {
                    -zinb_log_pmf_scalar(t, n.get(i, j), p.get(i, j), pi.get(i, j))
                }
            };
            sum += nll;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Undefined { what: "NLL" });
    }
    Ok(Some(sum / count as f64))
}

/// One evaluation's results plus the exact metric configuration that
/// produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub head: String,
    pub adjacency: String,
    pub coverage: f64,
    pub mae: f64,
    pub rmse: f64,
    pub kl: f64,
    /// Absent when the test span holds no true zeros.
    pub zero: Option<f64>,
    /// Absent for the point head.
    pub nll: Option<f64>,
    pub n_entries: usize,
    pub seed: u64,
    pub kl_bins: usize,
    pub kl_smoothing: f64,
    pub tau: f64,
    /// Direction reminder: KL(true ‖ predicted).
    pub kl_direction: String,
}

/// Fixed column order shared by every consumer of the CSV output.
pub const CSV_HEADER: &str = "variant,head,adjacency,coverage,mae,rmse,kl,zero,nll,n_entries,seed";

impl MetricsReport {
    /// Score a bundle. `variant`, `adjacency`, `coverage`, and `seed`
    /// label the row; they do not influence the numbers.
    pub fn compute(
        bundle: &EvalBundle,
        eval: &EvalConfig,
        variant: &str,
        adjacency: &str,
        coverage: f64,
        seed: u64,
    ) -> Result<MetricsReport> {
        let head = match &bundle.dist {
            PredDist::Point => HeadKind::Point,
            PredDist::Gaussian { .. } => HeadKind::Gnll,
            PredDist::NegBin { .. } => HeadKind::Nb,
            PredDist::Zinb { .. } => HeadKind::Zinb,
        };
        Ok(MetricsReport {
            variant: variant.to_string(),
            head: head.name().to_string(),
            adjacency: adjacency.to_string(),
            coverage,
            mae: metric_mae(bundle)?,
            rmse: metric_rmse(bundle)?,
            kl: metric_kl(bundle, eval.bins, eval.smoothing)?,
            zero: true_zero_rate(bundle, eval.tau)?,
            nll: metric_nll(bundle)?,
            n_entries: bundle.n_entries(),
            seed,
            kl_bins: eval.bins,
            kl_smoothing: eval.smoothing,
            tau: eval.tau,
            kl_direction: "true||pred".to_string(),
        })
    }

    /// One CSV row under [`CSV_HEADER`]; absent metrics are empty cells.
    pub fn csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.head,
            self.adjacency,
            self.coverage,
            self.mae,
            self.rmse,
            self.kl,
            opt(&self.zero),
            opt(&self.nll),
            self.n_entries,
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate, SynthConfig};
    use crate::dataio::{make_split, TemporalMode};
    use crate::losses::LossKind;
    use crate::trainer::{train, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    /// Point-head bundle over one row; `n` marks every entry measured.
    fn bundle_from(t: Vec<f64>, pred: Vec<f64>) -> EvalBundle {
        let cols = t.len();
        EvalBundle {
            node_ids: vec!["a".into()],
            t: Mat::from_vec(1, cols, t).unwrap(),
            pred: Mat::from_vec(1, cols, pred).unwrap(),
            m: Mat::zeros(1, cols),
            n: Mat::full(1, cols, 1.0),
            h: cols,
            dist: PredDist::Point,
            scale: ScaleRecord { feature_ranges: vec![], target_range: (0.0, 1.0) },
        }
    }

    #[test]
    fn mae_and_rmse_match_hand_values_exactly() {
        // Residuals 3 and −4.
        let b = bundle_from(vec![4.0, 1.0], vec![1.0, 5.0]);
        assert_eq!(metric_mae(&b).unwrap(), 3.5);
        assert_eq!(metric_rmse(&b).unwrap(), 12.5f64.sqrt());
    }

    #[test]
    fn metrics_ignore_entries_with_zero_weight() {
        let base = bundle_from(vec![4.0, 1.0], vec![1.0, 5.0]);
        // Same evaluated entries plus one masked-out column (m = 1) and
        // one unmeasured column (n = 0) carrying wild values.
        let mut b = bundle_from(vec![4.0, 1.0, 9e9, 7e7], vec![1.0, 5.0, -3e3, 2e2]);
        b.m.set(0, 2, 1.0);
        b.n.set(0, 3, 0.0);
        assert_eq!(metric_mae(&b).unwrap().to_bits(), metric_mae(&base).unwrap().to_bits());
        assert_eq!(metric_rmse(&b).unwrap().to_bits(), metric_rmse(&base).unwrap().to_bits());
        assert_eq!(
            metric_kl(&b, 2, 0.0).unwrap().to_bits(),
            metric_kl(&base, 2, 0.0).unwrap().to_bits()
        );
        assert_eq!(b.n_entries(), 2);
    }

    #[test]
    fn all_entries_excluded_is_an_error() {
        let mut b = bundle_from(vec![1.0], vec![1.0]);
        b.m.set(0, 0, 1.0);
        assert!(matches!(metric_mae(&b).unwrap_err(), Error::Undefined { .. }));
        assert!(matches!(metric_rmse(&b).unwrap_err(), Error::Undefined { .. }));
        assert!(matches!(metric_kl(&b, 50, 1e-9).unwrap_err(), Error::Undefined { .. }));
        assert!(matches!(true_zero_rate(&b, 0.99).unwrap_err(), Error::Undefined { .. }));
    }

    #[test]
    fn kl_matches_hand_histogram() {
        // With two bins and no smoothing the histograms are [1/2, 1/2]
        // against [1/4, 3/4]: KL = ½ln2 + ½ln(2/3).
        let b = bundle_from(vec![0.2, 0.2, 0.7, 0.7], vec![0.2, 0.7, 0.7, 0.7]);
        let expect = 0.5 * 2.0f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((metric_kl(&b, 2, 0.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn kl_is_zero_for_identical_values_and_degenerate_ranges() {
        let b = bundle_from(vec![3.0, 3.0], vec![3.0, 3.0]);
        assert_eq!(metric_kl(&b, 50, 1e-9).unwrap(), 0.0);
        let same = bundle_from(vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 1.0]);
        // Same multiset → same histogram → exactly 0.
        assert_eq!(metric_kl(&same, 3, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn kl_is_nonnegative_on_random_histogram_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let len = rng.gen_range(2..40);
            let t: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..30.0)).collect();
            let p: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..35.0)).collect();
            let b = bundle_from(t, p);
            let kl = metric_kl(&b, 13, 1e-9).unwrap();
            assert!(kl >= -1e-12, "negative KL {kl}");
        }
    }

    #[test]
    fn true_zero_rate_counts_only_true_zeros() {
        let b = bundle_from(vec![0.0, 0.0, 5.0], vec![0.5, 2.0, 0.0]);
        // Two true zeros; |0.5| < 0.99 counts, |2.0| does not. The
        // near-zero prediction of the nonzero target is irrelevant.
        assert_eq!(true_zero_rate(&b, 0.99).unwrap(), Some(0.5));
    }

    #[test]
    fn true_zero_rate_is_absent_without_true_zeros() {
        let b = bundle_from(vec![1.0, 2.0], vec![0.0, 0.0]);
        assert_eq!(true_zero_rate(&b, 0.99).unwrap(), None);
    }

    #[test]
    fn true_zero_rate_is_monotone_in_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let p: Vec<f64> = (0..60).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b = bundle_from(t, p);
        let mut last = 0.0;
        for tau in [0.01, 0.1, 0.5, 0.99, 2.0, 3.5] {
            let rate = true_zero_rate(&b, tau).unwrap().unwrap();
            assert!(rate >= last, "rate dropped from {last} to {rate} at tau {tau}");
            last = rate;
        }
    }

    #[test]
    fn nll_is_absent_for_the_point_head() {
        let b = bundle_from(vec![1.0], vec![1.0]);
        assert_eq!(metric_nll(&b).unwrap(), None);
    }

    #[test]
    fn gaussian_nll_is_zero_for_perfect_mean_and_unit_variance() {
        let mut b = bundle_from(vec![3.0, 0.5], vec![3.0, 0.5]);
        // Identity scale: the Gaussian head is scored in scaled space.
        b.dist = PredDist::Gaussian {
            mean: Mat::from_vec(1, 2, vec![3.0, 0.5]).unwrap(),
            var: Mat::full(1, 2, 1.0),
        };
        assert_eq!(metric_nll(&b).unwrap(), Some(0.0));
    }

    #[test]
    fn zinb_nll_matches_hand_value_on_a_zero_target() {
        let mut b = bundle_from(vec![0.0], vec![0.5]);
        b.dist = PredDist::Zinb {
            n: Mat::full(1, 1, 1.0),
            p: Mat::full(1, 1, 0.5),
            pi: Mat::full(1, 1, 0.5),
        };
        // −ln(π + (1−π)·p^n) = −ln(0.75).
        let got = metric_nll(&b).unwrap().unwrap();
        assert!((got - 0.75f64.ln().abs()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn csv_row_has_fixed_columns_and_empty_absent_cells() {
        let b = bundle_from(vec![1.0, 2.0], vec![1.5, 2.5]);
        let report =
            MetricsReport::compute(&b, &EvalConfig::default(), "full", "binary", 0.9, 7).unwrap();
        assert_eq!(CSV_HEADER.split(',').count(), 11);
        let row = report.csv_row();
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 11);
        assert_eq!(cells[0], "full");
        assert_eq!(cells[1], "point");
        assert_eq!(cells[7], "", "no true zeros → empty cell");
        assert_eq!(cells[8], "", "point head → empty nll cell");
        assert_eq!(cells[9], "2");
    }

    fn fixture() -> (Panel, Graph, SplitPlan) {
        let out = generate(&SynthConfig {
            n_nodes: 16,
            steps: 48,
            zero_inflation: 0.4,
            dispersion: 2.0,
            missing_rate: 0.05,
            seed: 11,
        })
        .unwrap();
        let split = make_split(&out.panel, 0.8, TemporalMode::WithinPeriod, 5).unwrap();
        (out.panel, out.graph, split)
    }

    fn quick_checkpoint(
        panel: &Panel,
        graph: &Graph,
        split: &SplitPlan,
        loss: LossKind,
        h: usize,
    ) -> Checkpoint {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let cfg = TrainConfig {
            loss,
            epochs: 0,
            h,
            z: 6,
            coverage: 0.8,
            seed: 3,
            ..TrainConfig::default()
        };
        train(panel, std::slice::from_ref(graph), split, &cfg, &path).unwrap();
        Checkpoint::load(&path).unwrap()
    }

    #[test]
    fn interpolation_covers_every_test_entry_exactly_once() {
        let (panel, graph, split) = fixture();
        // h = 10 over a 48-step span: four full chunks and a padded
        // trailing chunk of 8.
        let ckpt = quick_checkpoint(&panel, &graph, &split, LossKind::Zinb, 10);
        let graphs = [graph];
        let b = interpolate(&panel, &graphs, &split, &ckpt).unwrap();
        assert_eq!(b.t.shape(), (16, 48));
        let w = b.weights();
        let mut evaluated = 0usize;
        for &i in &split.test_ids {
            for j in 0..48 {
                assert_eq!(w.get(i, j), panel.observed(i, j), "weight mismatch at ({i},{j})");
                if w.get(i, j) == 1.0 {
                    evaluated += 1;
                    assert!(b.pred.get(i, j).is_finite());
                }
            }
        }
        assert_eq!(b.n_entries(), evaluated);
        // Non-test rows never carry weight.
        for i in 0..16 {
            if !split.test_ids.contains(&i) {
                for j in 0..48 {
                    assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
        // ZINB head predicts in raw space and keeps its parameters.
        assert!(matches!(b.dist, PredDist::Zinb { .. }));
        let report =
            MetricsReport::compute(&b, &EvalConfig::default(), "full", "binary", 0.8, 3).unwrap();
        assert!(report.nll.is_some());
        assert!(report.mae.is_finite());
    }

    #[test]
    fn interpolation_is_deterministic() {
        let (panel, graph, split) = fixture();
        let ckpt = quick_checkpoint(&panel, &graph, &split, LossKind::Mae, 12);
        let graphs = [graph];
        let a = interpolate(&panel, &graphs, &split, &ckpt).unwrap();
        let b = interpolate(&panel, &graphs, &split, &ckpt).unwrap();
        assert_eq!(a.pred.as_slice(), b.pred.as_slice());
    }

    #[test]
    fn checkpoint_panel_mismatch_is_a_schema_error() {
        let (panel, graph, split) = fixture();
        let ckpt = quick_checkpoint(&panel, &graph, &split, LossKind::Mae, 12);
        // A panel with fewer channels cannot feed this checkpoint.
        let thin = generate(&SynthConfig { n_nodes: 16, steps: 48, ..Default::default() })
            .map(|o| o.panel)
            .unwrap();
        let mut x = Vec::new();
        for i in 0..thin.n() {
            for t in 0..thin.p() {
                x.push(thin.x_at(i, t, 0));
            }
        }
        let reduced = Panel::new(
            thin.node_ids().to_vec(),
            thin.time_index().to_vec(),
            x,
            vec![thin.channel_names()[0].clone()],
            thin.targets().clone(),
            thin.missing_mask().clone(),
        )
        .unwrap();
        let graphs = [graph];
        let err = interpolate(&reduced, &graphs, &split, &ckpt).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "got {err}");
    }

    #[test]
    fn gaussian_and_nb_heads_fill_their_distributions() {
        let (panel, graph, split) = fixture();
        let graphs = [graph];
        let ckpt = quick_checkpoint(&panel, &graphs[0], &split, LossKind::Gnll, 12);
        let b = interpolate(&panel, &graphs, &split, &ckpt).unwrap();
        assert!(matches!(b.dist, PredDist::Gaussian { .. }));
        assert!(metric_nll(&b).unwrap().is_some());
        let ckpt = quick_checkpoint(&panel, &graphs[0], &split, LossKind::Nb, 12);
        let b = interpolate(&panel, &graphs, &split, &ckpt).unwrap();
        assert!(matches!(b.dist, PredDist::NegBin { .. }));
        let nll = metric_nll(&b).unwrap().unwrap();
        assert!(nll.is_finite());
    }
}
