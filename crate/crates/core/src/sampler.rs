//! Masked training-sample construction.
//!
//! Training simulates interpolation: each sample takes one time window,
//! draws a set of nodes, pretends a subset of them has no sensor (the
//! *masked* nodes), and asks the model to reconstruct their counts from
//! the surrounding *observed* nodes. The same assembly runs at
//! validation and test time, with the node roles fixed instead of drawn.
//!
//! Two binary masks flow through everything downstream:
//!
//! * `M` — the simulation mask, `0` on masked nodes (whole rows);
//! * `N` — the genuine missing-data mask from the panel, `0` where no
//!   measurement exists.
//!
//! Their pointwise product decides what the model may see as input
//! (`T ∘ M ∘ N`) and what the masked-only loss may score (`(1−M) ∘ N`).

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Panel;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;

/// One training (or evaluation) sample over a single time window.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// Panel row index of every node in the sample, in sample order.
    pub node_index: Vec<usize>,
    /// Half-open window `[start, start + h)` into the panel's time axis.
    pub window: (usize, usize),
    /// Features with the two indicator channels appended: flat
    /// `(node, time, channel)` with `k = k_raw + 2`, channel order
    /// `[raw…, mask, missing]`. Raw units; scaling happens at model
    /// input assembly.
    pub x_s: Vec<f64>,
    /// Raw targets, `n_s×h`. Rows of nodes forced into missing state
    /// (entire-graph extras) are zeroed — their labels are never read.
    pub t_s: Mat,
    /// `t_s ∘ m_s ∘ n_s`, exactly.
    pub t_s_masked: Mat,
    /// Simulation mask, `0` = masked. Masked rows are all-zero.
    pub m_s: Mat,
    /// Missing mask, `0` = no measurement.
    pub n_s: Mat,
    /// Adjacency sliced to the sampled nodes, in sample order.
    pub w_s: Graph,
}

impl TrainingSample {
    /// Number of nodes in the sample.
    pub fn n_nodes(&self) -> usize {
        self.node_index.len()
    }

    /// Window length.
    pub fn h(&self) -> usize {
        self.window.1 - self.window.0
    }

    /// Number of feature channels including the two indicators.
    pub fn k(&self) -> usize {
        if self.n_nodes() == 0 {
            0
        } else {
            self.x_s.len() / (self.n_nodes() * self.h())
        }
    }

    /// Loss weights for masked-only scope: `(1 − M) ∘ N`.
    pub fn masked_weights(&self) -> Mat {
        let mut w = self.m_s.clone();
        for (wv, nv) in w.as_mut_slice().iter_mut().zip(self.n_s.as_slice()) {
            *wv = (1.0 - *wv) * nv;
        }
        w
    }

    /// Loss weights for all-valid scope: every non-missing entry, which
    /// includes the observed nodes the model saw as input.
    pub fn all_valid_weights(&self) -> Mat {
        self.n_s.clone()
    }
}

/// The non-overlapping window plan for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSchedule {
    h: usize,
    batch_size: usize,
    /// Batches per epoch, `⌊P / (h · batch_size)⌋`.
    s: usize,
    /// All `⌊P/h⌋` window starts, in epoch (shuffled) order.
    starts: Vec<usize>,
}

impl WindowSchedule {
    pub fn h(&self) -> usize {
        self.h
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Batches per epoch from the coverage formula.
    pub fn batches_per_epoch(&self) -> usize {
        self.s
    }

    /// Window starts in epoch order.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// Windows as half-open ranges, in epoch order.
    pub fn windows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.starts.iter().map(move |&t| (t, t + self.h))
    }
}

/// Plan the non-overlapping windows `{0, h, 2h, …}` over `p` steps,
/// dropping the trailing partial window, shuffled by `shuffle_seed`.
/// Rebuild with a fresh seed each epoch to reorder the same window set.
pub fn schedule(p: usize, h: usize, batch_size: usize, shuffle_seed: u64) -> Result<WindowSchedule> {
    if h == 0 {
        return Err(Error::Parameter { name: "h", reason: "window length must be at least 1".into() });
    }
    if h > p {
        return Err(Error::Parameter {
            name: "h",
            reason: format!("window length {h} exceeds the {p} available time steps"),
        });
    }
    if batch_size == 0 {
        return Err(Error::Parameter {
            name: "batch_size",
            reason: "batch size must be at least 1".into(),
        });
    }
    let count = p / h;
    let mut starts: Vec<usize> = (0..count).map(|w| w * h).collect();
    let mut rng = rand::SeedableRng::seed_from_u64(shuffle_seed);
    starts.shuffle::<ChaCha8Rng>(&mut rng);
    Ok(WindowSchedule { h, batch_size, s: p / (h * batch_size), starts })
}

/// Split an eligible-node count into `(n_o, n_m)` at the given masked
/// ratio: at least one node masked, at least one observed.
pub fn mask_counts(n_eligible: usize, mask_ratio: f64) -> Result<(usize, usize)> {
    if n_eligible < 2 {
        return Err(Error::Sampling(format!(
            "need at least 2 eligible nodes to mask any, got {n_eligible}"
        )));
    }
    if !(0.0..1.0).contains(&mask_ratio) || mask_ratio <= 0.0 {
        return Err(Error::Parameter {
            name: "mask_ratio",
            reason: format!("must be in (0, 1), got {mask_ratio}"),
        });
    }
    let n_m = ((mask_ratio * n_eligible as f64).round() as usize).clamp(1, n_eligible - 1);
    Ok((n_eligible - n_m, n_m))
}

/// Append the two indicator channels to a raw feature slice: output
/// channel order is `[raw…, mask, missing]`, `k = k_raw + 2`.
pub fn augment_features(x_raw_slice: &[f64], m_s: &Mat, n_s: &Mat) -> Result<Vec<f64>> {
    let (nodes, h) = (m_s.rows(), m_s.cols());
    if n_s.rows() != nodes || n_s.cols() != h {
        return Err(Error::Dimension {
            op: "augment_features",
            left: m_s.shape_str(),
            right: n_s.shape_str(),
        });
    }
    if nodes * h == 0 || x_raw_slice.len() % (nodes * h) != 0 {
        return Err(Error::Dimension {
            op: "augment_features",
            left: format!("feature buffer of {}", x_raw_slice.len()),
            right: format!("{nodes} nodes x {h} steps"),
        });
    }
    let k_raw = x_raw_slice.len() / (nodes * h);
    let k = k_raw + 2;
    let mut out = vec![0.0; nodes * h * k];
    for i in 0..nodes {
        for t in 0..h {
            let src = (i * h + t) * k_raw;
            let dst = (i * h + t) * k;
            out[dst..dst + k_raw].copy_from_slice(&x_raw_slice[src..src + k_raw]);
            out[dst + k_raw] = m_s.get(i, t);
            out[dst + k_raw + 1] = n_s.get(i, t);
        }
    }
    Ok(out)
}

/// Assemble a sample for a fixed node arrangement: `observed` nodes keep
/// their panel data, `masked` nodes get all-zero `M` rows, and
/// `forced_missing` nodes (entire-graph extras / unseen nodes) enter
/// with `N = 0` everywhere and their targets zeroed — the model never
/// sees their labels and no loss ever weights them.
///
/// This is the single assembly path: training draws node roles at
/// random and calls here; validation and interpolation call here
/// directly with fixed roles.
pub fn assemble_sample(
    panel: &Panel,
    graph: &Graph,
    window: (usize, usize),
    observed: &[usize],
    masked: &[usize],
    forced_missing: &[usize],
) -> Result<TrainingSample> {
    let (t0, t1) = window;
    if t1 <= t0 || t1 > panel.p() {
        return Err(Error::Parameter {
            name: "window",
            reason: format!("[{t0}, {t1}) is not a valid window over {} steps", panel.p()),
        });
    }
    let h = t1 - t0;
    let node_index: Vec<usize> =
        observed.iter().chain(masked).chain(forced_missing).copied().collect();
    {
        let mut seen = node_index.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != node_index.len() {
            return Err(Error::Sampling("node appears twice in one sample".into()));
        }
        if let Some(&bad) = seen.iter().find(|&&i| i >= panel.n()) {
            return Err(Error::Sampling(format!(
                "node index {bad} out of range for {} panel nodes",
                panel.n()
            )));
        }
    }
    let n_s_nodes = node_index.len();
    let n_obs = observed.len();
    let n_mask = masked.len();

    let mut m_s = Mat::full(n_s_nodes, h, 1.0);
    for r in n_obs..n_obs + n_mask {
        for t in 0..h {
            m_s.set(r, t, 0.0);
        }
    }
    let mut n_mat = Mat::zeros(n_s_nodes, h);
    let mut t_s = Mat::zeros(n_s_nodes, h);
    for (r, &i) in node_index.iter().enumerate() {
        let forced = r >= n_obs + n_mask;
        for t in 0..h {
            if forced {
                // Entire-graph extras stay missing with zeroed targets:
                // their labels must never be readable from the sample.
                continue;
            }
            n_mat.set(r, t, panel.observed(i, t0 + t));
            t_s.set(r, t, panel.target(i, t0 + t));
        }
    }

    let mut t_s_masked = t_s.clone();
    for r in 0..n_s_nodes {
        for t in 0..h {
            let v = t_s_masked.get(r, t) * m_s.get(r, t) * n_mat.get(r, t);
            t_s_masked.set(r, t, v);
        }
    }

    let k_raw = panel.k_raw();
    let mut x_raw = vec![0.0; n_s_nodes * h * k_raw];
    for (r, &i) in node_index.iter().enumerate() {
        for t in 0..h {
            for c in 0..k_raw {
                x_raw[(r * h + t) * k_raw + c] = panel.x_at(i, t0 + t, c);
            }
        }
    }
    let x_s = augment_features(&x_raw, &m_s, &n_mat)?;

    let graph_rows: Vec<usize> = node_index
        .iter()
        .map(|&i| graph.index_of(&panel.node_ids()[i]))
        .collect::<Result<_>>()?;
    let w_s = graph.subgraph_by_index(&graph_rows);

    Ok(TrainingSample { node_index, window, x_s, t_s, t_s_masked, m_s, n_s: n_mat, w_s })
}

/// Draw one training sample: `n_o` observed and `n_m` masked nodes
/// chosen without replacement from `eligible`, plus `forced_missing`
/// extras when entire-graph mode is on.
pub fn draw_sample(
    panel: &Panel,
    graph: &Graph,
    window: (usize, usize),
    eligible: &[usize],
    n_o: usize,
    n_m: usize,
    forced_missing: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSample> {
    if n_m == 0 {
        return Err(Error::Sampling("a training sample needs at least one masked node".into()));
    }
    if n_o + n_m > eligible.len() {
        return Err(Error::Sampling(format!(
            "asked for {n_o} observed + {n_m} masked from {} eligible nodes",
            eligible.len()
        )));
    }
    let mut pool = eligible.to_vec();
    pool.shuffle(rng);
    let observed = &pool[..n_o];
    let masked = &pool[n_o..n_o + n_m];
    assemble_sample(panel, graph, window, observed, masked, forced_missing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate, SynthConfig};
    use rand::SeedableRng;

    fn fixture() -> (Panel, Graph) {
        let out = generate(&SynthConfig {
            n_nodes: 16,
            steps: 40,
            zero_inflation: 0.4,
            dispersion: 2.0,
            missing_rate: 0.05,
            seed: 42,
        })
        .unwrap();
        (out.panel, out.graph)
    }

    #[test]
    fn schedule_counts_match_coverage_formula() {
        let s = schedule(100, 5, 2, 1).unwrap();
        assert_eq!(s.batches_per_epoch(), 10);
        assert_eq!(s.starts().len(), 20);
        let mut sorted = s.starts().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).map(|w| w * 5).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_single_window_when_h_equals_p() {
        let s = schedule(10, 10, 1, 0).unwrap();
        assert_eq!(s.starts(), &[0]);
        assert_eq!(s.batches_per_epoch(), 1);
    }

    #[test]
    fn schedule_drops_trailing_partial_window() {
        let s = schedule(103, 10, 1, 5).unwrap();
        assert_eq!(s.starts().len(), 10);
        assert!(s.windows().all(|(a, b)| b - a == 10 && b <= 100));
    }

    #[test]
    fn schedule_same_windows_different_order_across_seeds() {
        let a = schedule(120, 6, 2, 1).unwrap();
        let b = schedule(120, 6, 2, 2).unwrap();
        assert_ne!(a.starts(), b.starts());
        let mut sa = a.starts().to_vec();
        let mut sb = b.starts().to_vec();
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
    }

    #[test]
    fn schedule_rejects_oversized_window() {
        assert!(matches!(schedule(5, 6, 1, 0), Err(Error::Parameter { name: "h", .. })));
        assert!(schedule(5, 0, 1, 0).is_err());
        assert!(schedule(5, 5, 0, 0).is_err());
    }

    #[test]
    fn mask_counts_respects_ratio_and_bounds() {
        assert_eq!(mask_counts(16, 0.25).unwrap(), (12, 4));
        assert_eq!(mask_counts(100, 0.25).unwrap(), (75, 25));
        // Rounding to zero still masks one node.
        assert_eq!(mask_counts(10, 0.01).unwrap(), (9, 1));
        // Rounding to everything still observes one node.
        assert_eq!(mask_counts(4, 0.99).unwrap(), (1, 3));
        assert!(mask_counts(1, 0.25).is_err());
        assert!(mask_counts(10, 0.0).is_err());
        assert!(mask_counts(10, 1.0).is_err());
    }

    #[test]
    fn augment_appends_indicator_channels_in_order() {
        let m = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let n = Mat::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let raw = vec![10.0, 20.0, 30.0, 40.0]; // k_raw = 1, 2 nodes x 2 steps
        let x = augment_features(&raw, &m, &n).unwrap();
        assert_eq!(x.len(), 2 * 2 * 3);
        // node 0, t 0: [10, m=1, n=1]
        assert_eq!(&x[0..3], &[10.0, 1.0, 1.0]);
        // node 1, t 0: [30, m=0, n=0]
        assert_eq!(&x[6..9], &[30.0, 0.0, 0.0]);
    }

    #[test]
    fn augment_with_no_raw_channels_yields_two() {
        let m = Mat::full(3, 2, 1.0);
        let n = Mat::full(3, 2, 1.0);
        let x = augment_features(&[], &m, &n).unwrap();
        assert_eq!(x.len(), 3 * 2 * 2);
        assert!(x.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn augment_rejects_shape_mismatch() {
        let m = Mat::full(2, 2, 1.0);
        let n = Mat::full(3, 2, 1.0);
        assert!(augment_features(&[], &m, &n).is_err());
        let n = Mat::full(2, 2, 1.0);
        assert!(augment_features(&[0.0; 7], &m, &n).is_err());
    }

    #[test]
    fn sample_masks_whole_rows_and_products_hold() {
        let (panel, graph) = fixture();
        let eligible: Vec<usize> = (0..16).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = draw_sample(&panel, &graph, (8, 16), &eligible, 12, 4, &[], &mut rng).unwrap();
        assert_eq!(s.n_nodes(), 16);
        assert_eq!(s.h(), 8);
        assert_eq!(s.k(), panel.k_raw() + 2);
        // Masked rows are all-zero across the window.
        for r in 12..16 {
            for t in 0..8 {
                assert_eq!(s.m_s.get(r, t), 0.0);
            }
        }
        // T_s_masked is exactly the three-way product.
        for r in 0..16 {
            for t in 0..8 {
                let expect = s.t_s.get(r, t) * s.m_s.get(r, t) * s.n_s.get(r, t);
                assert_eq!(s.t_s_masked.get(r, t), expect);
            }
        }
        // Indicator channels in X_s mirror the mask matrices.
        let k = s.k();
        for r in 0..16 {
            for t in 0..8 {
                let base = (r * 8 + t) * k;
                assert_eq!(s.x_s[base + k - 2], s.m_s.get(r, t));
                assert_eq!(s.x_s[base + k - 1], s.n_s.get(r, t));
            }
        }
        // Sliced adjacency follows sample order.
        assert_eq!(s.w_s.n(), 16);
        for (row, &i) in s.node_index.iter().enumerate() {
            assert_eq!(s.w_s.node_ids()[row], panel.node_ids()[i]);
        }
    }

    #[test]
    fn all_masked_sample_has_all_zero_masked_targets() {
        let (panel, graph) = fixture();
        let eligible: Vec<usize> = (0..6).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = draw_sample(&panel, &graph, (0, 8), &eligible, 0, 6, &[], &mut rng).unwrap();
        assert!(s.t_s_masked.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.masked_weights().as_slice().iter().zip(s.n_s.as_slice()).all(|(w, n)| w == n));
    }

    #[test]
    fn identical_rng_state_reproduces_the_sample() {
        let (panel, graph) = fixture();
        let eligible: Vec<usize> = (0..16).collect();
        let mut a = ChaCha8Rng::seed_from_u64(77);
        let mut b = ChaCha8Rng::seed_from_u64(77);
        let sa = draw_sample(&panel, &graph, (16, 24), &eligible, 10, 6, &[], &mut a).unwrap();
        let sb = draw_sample(&panel, &graph, (16, 24), &eligible, 10, 6, &[], &mut b).unwrap();
        assert_eq!(sa.node_index, sb.node_index);
        assert_eq!(sa.x_s, sb.x_s);
        assert_eq!(sa.t_s_masked, sb.t_s_masked);
    }

    #[test]
    fn forced_missing_nodes_never_expose_labels() {
        let (panel, graph) = fixture();
        let eligible: Vec<usize> = (0..12).collect();
        let extras: Vec<usize> = vec![12, 13, 14, 15];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = draw_sample(&panel, &graph, (0, 8), &eligible, 9, 3, &extras, &mut rng).unwrap();
        assert_eq!(s.n_nodes(), 16);
        let weights = s.masked_weights();
        for r in 12..16 {
            for t in 0..8 {
                assert_eq!(s.n_s.get(r, t), 0.0, "extras must be missing");
                assert_eq!(s.m_s.get(r, t), 1.0, "extras are missing, not masked");
                assert_eq!(s.t_s.get(r, t), 0.0, "extra labels must be zeroed");
                assert_eq!(weights.get(r, t), 0.0);
                assert_eq!(s.all_valid_weights().get(r, t), 0.0);
            }
        }
    }

    #[test]
    fn sample_rejects_duplicates_and_shortfalls() {
        let (panel, graph) = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eligible: Vec<usize> = (0..4).collect();
        assert!(matches!(
            draw_sample(&panel, &graph, (0, 8), &eligible, 4, 1, &[], &mut rng),
            Err(Error::Sampling(_))
        ));
        assert!(matches!(
            draw_sample(&panel, &graph, (0, 8), &eligible, 3, 0, &[], &mut rng),
            Err(Error::Sampling(_))
        ));
        // Node in both eligible draw and forced extras.
        assert!(assemble_sample(&panel, &graph, (0, 8), &[0, 1], &[2], &[2]).is_err());
        // Window past the end of the panel.
        assert!(assemble_sample(&panel, &graph, (36, 44), &[0, 1], &[2], &[]).is_err());
    }

    #[test]
    fn fully_observed_sample_mask_channel_all_ones() {
        let (panel, graph) = fixture();
        // No masked nodes via assemble_sample directly (draw_sample
        // requires n_m >= 1; evaluation postures do not).
        let s = assemble_sample(&panel, &graph, (0, 8), &[0, 1, 2, 3], &[], &[]).unwrap();
        let k = s.k();
        for r in 0..4 {
            for t in 0..8 {
                assert_eq!(s.x_s[(r * 8 + t) * k + k - 2], 1.0);
            }
        }
    }
}
