//! Synthetic street-network panel generator.
//!
//! Produces a grid street network and a zero-inflated negative-binomial
//! count panel over it, with enough spatial and temporal structure that
//! interpolation from neighbours is actually possible: per-node
//! intensities follow a smooth spatial field (smoothed towards
//! neighbours so adjacent nodes carry signal about each other), a daily
//! seasonal profile modulates every node, and the node features expose
//! part — but not all — of that structure.
//!
//! The generator returns the latent truth ([`SynthTruth`]) alongside
//! the panel so tests can check the drawn counts against the exact
//! distribution they were sampled from.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mat::Mat;

use super::Panel;

/// Knobs for the synthetic panel. `Default` gives the mid-size panel
/// used throughout the docs: 64 nodes, 400 steps, 50% zero inflation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    /// Number of nodes; rounded down to the nearest full grid if it is
    /// not a product of two near-square factors.
    pub n_nodes: usize,
    /// Number of time steps in the panel.
    pub steps: usize,
    /// Probability that any observation is forced to zero regardless
    /// of the underlying count process. In `[0, 1)`.
    pub zero_inflation: f64,
    /// Negative-binomial dispersion (number of failures); smaller is
    /// more overdispersed. Must be positive.
    pub dispersion: f64,
    /// Fraction of entries marked missing (sensor dropout), in `[0, 1)`.
    pub missing_rate: f64,
    /// RNG seed; equal seeds give bitwise-equal panels.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_nodes: 64,
            steps: 400,
            zero_inflation: 0.5,
            dispersion: 2.0,
            missing_rate: 0.01,
            seed: 7,
        }
    }
}

/// The latent process the counts were drawn from, kept so tests can
/// compare observed statistics against exact values.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// Negative-binomial mean per `(node, time)` before zero inflation.
    pub mean: Mat,
    /// Dispersion used for every entry.
    pub dispersion: f64,
    /// Node-average structural-zero probability (the config knob).
    pub zero_inflation: f64,
    /// Per-node structural-zero probability actually used.
    pub node_zero_probs: Vec<f64>,
}

/// Generated panel plus its street network and latent truth.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub panel: Panel,
    pub graph: Graph,
    pub truth: SynthTruth,
}

/// Pick grid dimensions `(rows, cols)` with `rows * cols == n` and the
/// factors as close to square as possible. Prime `n` degenerates to
/// `1 × n`, which is still a valid (path) street network.
fn grid_dims(n: usize) -> (usize, usize) {
    let mut best = (1, n);
    let mut r = 1;
    while r * r <= n {
        if n % r == 0 {
            best = (r, n / r);
        }
        r += 1;
    }
    best
}

/// Generate a synthetic panel, street network, and latent truth.
///
/// The process per node `i` at time `t`:
///
/// 1. base intensity `lambda_i = c0 * beta_i * exp(0.8 gx - 0.5 gy)`
///    where `beta_i = 0.35 exp(1.25 Z)` is log-normal (right-skewed,
///    like real street volumes) and `(gx, gy)` are grid coordinates
///    normalised to `[0, 1]`;
/// 2. two rounds of neighbour smoothing
///    `lambda <- 0.6 lambda + 0.4 mean(neighbour lambdas)`;
/// 3. seasonal mean `mu_it = max(lambda_i * (1 + 0.6 sin(2 pi t / 24)), 0.05)`;
/// 4. each node gets a structural-zero probability `pi_i` from a
///    logistic curve in `ln lambda_i` — quiet streets are the hard
///    zeros, busy corridors almost never are — with the curve midpoint
///    calibrated so `mean(pi_i) == zero_inflation`;
/// 5. the count is `0` with probability `pi_i`, otherwise a
///    negative-binomial draw with mean `mu_it` and the configured
///    dispersion, realised as Poisson(Gamma) mixing.
///
/// Entries are then knocked out (marked missing) independently at
/// `missing_rate`.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    if config.n_nodes == 0 || config.steps == 0 {
        return Err(Error::Parameter {
            name: "n_nodes/steps",
            reason: "synthetic panel needs at least one node and one step".into(),
        });
    }
    if !(0.0..1.0).contains(&config.zero_inflation) {
        return Err(Error::Parameter {
            name: "zero_inflation",
            reason: format!("must be in [0, 1), got {}", config.zero_inflation),
        });
    }
    if !(config.dispersion > 0.0) {
        return Err(Error::Parameter {
            name: "dispersion",
            reason: format!("must be positive, got {}", config.dispersion),
        });
    }
    if !(0.0..1.0).contains(&config.missing_rate) {
        return Err(Error::Parameter {
            name: "missing_rate",
            reason: format!("must be in [0, 1), got {}", config.missing_rate),
        });
    }

    let n = config.n_nodes;
    let p = config.steps;
    let (rows, cols) = grid_dims(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Street network: 4-neighbour grid.
    let node_ids: Vec<String> = (0..n).map(|i| format!("n{i:03}")).collect();
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((node_ids[i].clone(), node_ids[i + 1].clone()));
            }
            if r + 1 < rows {
                edges.push((node_ids[i].clone(), node_ids[i + cols].clone()));
            }
        }
    }
    let graph = Graph::build_binary(node_ids.clone(), &edges)?;

    // Static node features. Channel order matters downstream only by
    // name; grid coordinates leak spatial position, the log node rate
    // leaks intensity (logged so min-max scaling keeps quiet streets
    // resolvable instead of crushing them under the corridor maximum),
    // noise carries nothing.
    let channel_names = vec![
        "log_rate".to_string(),
        "grid_x".to_string(),
        "grid_y".to_string(),
        "noise".to_string(),
    ];
    let k_raw = channel_names.len();
    // Log-normal node effects: street counts are right-skewed — most
    // segments are quiet, a few corridors carry most of the volume.
    // The skew also matters for evaluation: point metrics only reward
    // conditional-mean calibration when the intensity distribution has
    // a long right tail (on a symmetric field, predicting the global
    // median is unbeatable on MAE and extra sensors cannot help).
    let beta: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            0.35 * (1.25 * z).exp()
        })
        .collect();
    let noise: Vec<f64> = (0..n)
        .map(|_| rand_distr::StandardNormal.sample(&mut rng))
        .collect();
    let gx: Vec<f64> = (0..n)
        .map(|i| {
            let c = i % cols;
            if cols > 1 { c as f64 / (cols - 1) as f64 } else { 0.5 }
        })
        .collect();
    let gy: Vec<f64> = (0..n)
        .map(|i| {
            let r = i / cols;
            if rows > 1 { r as f64 / (rows - 1) as f64 } else { 0.5 }
        })
        .collect();

    // Spatial intensity field, smoothed towards neighbours so that the
    // value at a node is predictable from the nodes around it.
    let c0 = 10.0;
    let mut lambda: Vec<f64> = (0..n)
        .map(|i| c0 * beta[i] * (0.8 * gx[i] - 0.5 * gy[i]).exp())
        .collect();
    let w = graph.weights();
    for _ in 0..2 {
        let mut next = lambda.clone();
        for i in 0..n {
            let mut acc = 0.0;
            let mut deg = 0.0;
            for j in 0..n {
                if w.get(i, j) > 0.0 && i != j {
                    acc += lambda[j];
                    deg += 1.0;
                }
            }
            if deg > 0.0 {
                next[i] = 0.6 * lambda[i] + 0.4 * acc / deg;
            }
        }
        lambda = next;
    }

    // Structural zeros are spatial, not i.i.d. coin flips: quiet
    // streets are disproportionately the hard zeros (paths nobody
    // rides), busy corridors almost never are. A logistic curve in
    // log-intensity assigns each node its structural-zero probability;
    // the curve midpoint is found by bisection so the node average
    // equals the configured rate. Spreading zeros this way keeps the
    // zero-inflated panel interpolable: a model that recovers the
    // intensity field also recovers where the zeros live.
    let pi: Vec<f64> = if config.zero_inflation == 0.0 {
        vec![0.0; n]
    } else {
        let loglam: Vec<f64> = lambda.iter().map(|l| l.ln()).collect();
        let mean_pi = |b: f64| {
            loglam.iter().map(|&ll| 1.0 / (1.0 + (2.0 * (ll - b)).exp())).sum::<f64>()
                / n as f64
        };
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mean_pi(mid) < config.zero_inflation {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b = 0.5 * (lo + hi);
        loglam.iter().map(|&ll| 1.0 / (1.0 + (2.0 * (ll - b)).exp())).collect()
    };

    // Panel draws.
    let time_index: Vec<i64> = (0..p as i64).collect();
    let mut x = vec![0.0; n * p * k_raw];
    let mut t = Mat::zeros(n, p);
    let mut n_mask = Mat::full(n, p, 1.0);
    let mut mean = Mat::zeros(n, p);
    let disp = config.dispersion;
    for i in 0..n {
        for j in 0..p {
            let base = (i * p + j) * k_raw;
            x[base] = beta[i].ln();
            x[base + 1] = gx[i];
            x[base + 2] = gy[i];
            x[base + 3] = noise[i];

            let season = 1.0 + 0.6 * (2.0 * std::f64::consts::PI * j as f64 / 24.0).sin();
            let mu = (lambda[i] * season).max(0.05);
            mean.set(i, j, mu);

            let count = if rng.gen::<f64>() < pi[i] {
                0.0
            } else {
                // NB(mean mu, dispersion r) == Poisson(Gamma(shape r,
                // scale mu / r)): the Gamma has mean mu and the mixing
                // spreads it with variance mu + mu^2 / r.
                let gamma = Gamma::new(disp, mu / disp).map_err(|e| Error::Parameter {
                    name: "dispersion",
                    reason: format!("invalid Gamma mixing parameters: {e}"),
                })?;
                let rate: f64 = gamma.sample(&mut rng);
                if rate <= 0.0 {
                    0.0
                } else {
                    let pois = Poisson::new(rate).map_err(|e| Error::Parameter {
                        name: "dispersion",
                        reason: format!("invalid Poisson rate {rate}: {e}"),
                    })?;
                    pois.sample(&mut rng)
                }
            };
            if rng.gen::<f64>() < config.missing_rate {
                n_mask.set(i, j, 0.0);
            } else {
                t.set(i, j, count);
            }
        }
    }

    let panel = Panel::new(node_ids, time_index, x, channel_names, t, n_mask)?;
    Ok(SynthOutput {
        panel,
        graph,
        truth: SynthTruth {
            mean,
            dispersion: disp,
            zero_inflation: config.zero_inflation,
            node_zero_probs: pi,
        },
    })
}
