//! The diffusion graph convolutional network.
//!
//! Three graph-convolution layers with a residual connection and layer
//! normalization, followed by a loss-specific output head:
//!
//! ```text
//! H1 = LN(ReLU(conv(H0)))
//! H2 = LN(ReLU(conv(H1)) + H1)
//! H3 = LN(conv(H2))                    (linear activation)
//! ```
//!
//! where `conv(H) = Σ_{k=1..K} T_k(W̄_f)·H·Θ_f^k + T_k(W̄_b)·H·Θ_b^k`
//! runs Chebyshev polynomials of the forward and backward transition
//! matrices. The input `H0` is one node row per sample node: the
//! feature channels plus the masked target channel, flattened
//! time-major, channel-minor to width `h·(k+1)`.
//!
//! Heads map `H3` to distribution parameters; every positivity or
//! interval constraint is enforced by the activation (plus a clamp for
//! probabilities so downstream likelihoods never see exactly 0 or 1).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::dataio::ScaleRecord;
use crate::error::{Error, Result};
use crate::graph::{chebyshev_apply, TransitionPair};
use crate::mat::Mat;
use crate::sampler::TrainingSample;

/// Layer-norm stabiliser inside the square root.
pub const LN_EPS: f64 = 1e-5;
/// Floor added to the Gaussian head's softplus variance.
pub const VAR_FLOOR: f64 = 1e-6;
/// Floor added to the negative-binomial dispersion `n` so that
/// `ln Γ(n)` stays defined.
pub const N_FLOOR: f64 = 1e-6;
/// Probabilities (`p`, `π`) are clamped into `[P_CLAMP, 1 − P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-6;

/// Which output head (and matching loss) the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Point prediction trained with MAE or MSE; `T̂ = H3`.
    Point,
    /// Gaussian mean and variance (GNLL loss).
    Gnll,
    /// Negative-binomial `n`, `p`.
    Nb,
    /// Zero-inflated negative binomial: `n`, `p`, and zero mass `π`.
    Zinb,
}

impl HeadKind {
    /// Width of the third layer: the point head *is* the prediction, so
    /// it must come out at `h`; the distribution heads keep the hidden
    /// width and project per parameter.
    pub fn layer3_width(self, h: usize, z: usize) -> usize {
        match self {
            HeadKind::Point => h,
            _ => z,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Point => "point",
            HeadKind::Gnll => "gnll",
            HeadKind::Nb => "nb",
            HeadKind::Zinb => "zinb",
        }
    }
}

/// Everything that fixes the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub head: HeadKind,
    /// Window length; also the per-node output width.
    pub h: usize,
    /// Input feature channels entering H0, *excluding* the target
    /// channel (so H0 width is `h·(k_in + 1)`).
    pub k_in: usize,
    /// Hidden width of layers 1–2.
    pub z: usize,
    /// Chebyshev expansion order K.
    pub k_orders: usize,
    /// Two adjacency stacks concatenated before the head.
    pub dual: bool,
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        self.h * (self.k_in + 1)
    }

    fn n_stacks(&self) -> usize {
        if self.dual {
            2
        } else {
            1
        }
    }

    /// Width of the representation the head consumes.
    pub fn head_input_width(&self) -> usize {
        self.n_stacks() * self.head.layer3_width(self.h, self.z)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("h", self.h), ("z", self.z), ("k_orders", self.k_orders)] {
            if v == 0 {
                return Err(Error::Parameter { name: "model config", reason: format!("{name} must be at least 1") });
            }
        }
        Ok(())
    }

    /// Layer input/output widths for one stack, layer index 0-based.
    fn layer_widths(&self, layer: usize) -> (usize, usize) {
        let l3 = self.head.layer3_width(self.h, self.z);
        match layer {
            0 => (self.input_width(), self.z),
            1 => (self.z, self.z),
            _ => (self.z, l3),
        }
    }

    /// The full ordered parameter list: names and shapes. Everything
    /// that walks parameters — initialisation, staging, the optimizer,
    /// checkpoints — follows this one order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let mut shapes = Vec::new();
        for s in 0..self.n_stacks() {
            for l in 0..3 {
                let (w_in, w_out) = self.layer_widths(l);
                for k in 0..self.k_orders {
                    shapes.push(ParamShape::new(
                        format!("stack{s}.layer{}.theta_f.k{}", l + 1, k + 1),
                        w_in,
                        w_out,
                    ));
                    shapes.push(ParamShape::new(
                        format!("stack{s}.layer{}.theta_b.k{}", l + 1, k + 1),
                        w_in,
                        w_out,
                    ));
                }
                shapes.push(ParamShape::new(format!("stack{s}.layer{}.ln_gain", l + 1), 1, w_out));
                shapes.push(ParamShape::new(format!("stack{s}.layer{}.ln_bias", l + 1), 1, w_out));
            }
        }
        let hw = self.head_input_width();
        let h = self.h;
        let linear = |name: &str, shapes: &mut Vec<ParamShape>| {
            shapes.push(ParamShape::new(format!("head.{name}_w"), hw, h));
            shapes.push(ParamShape::new(format!("head.{name}_b"), 1, h));
        };
        match self.head {
            HeadKind::Point => {
                // Single-stack point head is the identity on H3; with
                // two stacks the concatenation must be projected back
                // to width h.
                if self.dual {
                    linear("project", &mut shapes);
                }
            }
            HeadKind::Gnll => {
                linear("mean", &mut shapes);
                linear("var", &mut shapes);
            }
            HeadKind::Nb => {
                linear("n", &mut shapes);
                linear("p", &mut shapes);
            }
            HeadKind::Zinb => {
                linear("n", &mut shapes);
                linear("p", &mut shapes);
                linear("pi", &mut shapes);
            }
        }
        shapes
    }

    // Index helpers into the `param_shapes` order. Per stack:
    // 3 layers × (2K thetas + gain + bias) = 6K + 6 entries.
    fn per_stack(&self) -> usize {
        6 * self.k_orders + 6
    }

    fn theta_f_idx(&self, stack: usize, layer: usize, k: usize) -> usize {
        stack * self.per_stack() + layer * (2 * self.k_orders + 2) + 2 * k
    }

    fn theta_b_idx(&self, stack: usize, layer: usize, k: usize) -> usize {
        self.theta_f_idx(stack, layer, k) + 1
    }

    fn ln_gain_idx(&self, stack: usize, layer: usize) -> usize {
        stack * self.per_stack() + layer * (2 * self.k_orders + 2) + 2 * self.k_orders
    }

    fn ln_bias_idx(&self, stack: usize, layer: usize) -> usize {
        self.ln_gain_idx(stack, layer) + 1
    }

    fn head_base(&self) -> usize {
        self.n_stacks() * self.per_stack()
    }
}

/// Name and shape of one parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ParamShape {
    fn new(name: String, rows: usize, cols: usize) -> Self {
        ParamShape { name, rows, cols }
    }
}

/// All learned parameters, stored flat in `param_shapes` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    mats: Vec<Mat>,
}

impl ModelParams {
    /// Deterministic initialisation: Glorot-uniform weights, unit
    /// layer-norm gains, zero biases. Equal seeds give equal params.
    pub fn init(config: ModelConfig, seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mats = config
            .param_shapes()
            .iter()
            .map(|s| {
                if s.name.ends_with("ln_gain") {
                    Mat::full(s.rows, s.cols, 1.0)
                } else if s.name.ends_with("_b") || s.name.ends_with("ln_bias") {
                    Mat::zeros(s.rows, s.cols)
                } else {
                    let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    let mut m = Mat::zeros(s.rows, s.cols);
                    for v in m.as_mut_slice() {
                        *v = rng.gen_range(-a..a);
                    }
                    m
                }
            })
            .collect();
        Ok(ModelParams { config, mats })
    }

    /// Rebuild from externally supplied matrices (checkpoint load).
    pub fn from_mats(config: ModelConfig, mats: Vec<Mat>) -> Result<ModelParams> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != mats.len() {
            return Err(Error::Schema(format!(
                "expected {} parameter matrices, got {}",
                shapes.len(),
                mats.len()
            )));
        }
        for (s, m) in shapes.iter().zip(&mats) {
            if (m.rows(), m.cols()) != (s.rows, s.cols) {
                return Err(Error::Schema(format!(
                    "parameter {} expected {}x{}, got {}",
                    s.name,
                    s.rows,
                    s.cols,
                    m.shape_str()
                )));
            }
        }
        Ok(ModelParams { config, mats })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter matrices in `param_shapes` order.
    pub fn mats(&self) -> &[Mat] {
        &self.mats
    }

    pub fn mats_mut(&mut self) -> &mut [Mat] {
        &mut self.mats
    }

    /// Put every parameter on a tape as a gradient-tracked leaf, in
    /// `param_shapes` order.
    pub fn stage(&self, tape: &Tape) -> StagedParams {
        let tensors = self.mats.iter().map(|m| tape.leaf(m.clone())).collect();
        StagedParams { config: self.config.clone(), tensors }
    }
}

/// The parameters of one model staged on a tape, plus the config that
/// decodes the flat order. Built by [`ModelParams::stage`] or, for
/// gradient checking, [`StagedParams::from_tensors`].
#[derive(Debug, Clone)]
pub struct StagedParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl StagedParams {
    /// Adopt pre-built tensors (e.g. the inputs handed to a gradient
    /// checker) as the parameter set. Order must match `param_shapes`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<StagedParams> {
        let shapes = config.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} staged parameters, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (s, t) in shapes.iter().zip(&tensors) {
            if t.shape() != (s.rows, s.cols) {
                return Err(Error::Contract(format!(
                    "staged parameter {} has shape {}x{}, expected {}x{}",
                    s.name,
                    t.shape().0,
                    t.shape().1,
                    s.rows,
                    s.cols
                )));
            }
        }
        Ok(StagedParams { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Staged tensors in `param_shapes` order (for gradient readout).
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    fn at(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    fn head_linear(&self, offset: usize, repr: &Tensor) -> Result<Tensor> {
        let base = self.config.head_base();
        let w = self.at(base + 2 * offset);
        let b = self.at(base + 2 * offset + 1);
        repr.matmul(w)?.add_row_vec(b)
    }
}

/// Distribution (or point) parameters produced by the head, all
/// `n×h` tensors on the forward tape.
#[derive(Debug, Clone)]
pub enum HeadOutput {
    Point { mean: Tensor },
    Gaussian { mean: Tensor, var: Tensor },
    NegBin { n: Tensor, p: Tensor },
    Zinb { n: Tensor, p: Tensor, pi: Tensor },
}

impl HeadOutput {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadOutput::Point { .. } => HeadKind::Point,
            HeadOutput::Gaussian { .. } => HeadKind::Gnll,
            HeadOutput::NegBin { .. } => HeadKind::Nb,
            HeadOutput::Zinb { .. } => HeadKind::Zinb,
        }
    }
}

/// Put a transition pair on the tape as constants.
pub fn stage_transitions(tape: &Tape, trans: &TransitionPair) -> (Tensor, Tensor) {
    (tape.constant(trans.wf.clone()), tape.constant(trans.wb.clone()))
}

/// One diffusion-convolution layer, pre-activation:
/// `Σ_{k=1..K} T_k(W̄_f)·H·Θ_f^k + T_k(W̄_b)·H·Θ_b^k`.
pub fn dgcn_conv(
    params: &StagedParams,
    stack: usize,
    layer: usize,
    wf: &Tensor,
    wb: &Tensor,
    h: &Tensor,
) -> Result<Tensor> {
    let korders = params.config.k_orders;
    let tf = chebyshev_apply(wf, h, korders)?;
    let tb = chebyshev_apply(wb, h, korders)?;
    let mut acc: Option<Tensor> = None;
    for k in 0..korders {
        let f = tf[k].matmul(params.at(params.config.theta_f_idx(stack, layer, k)))?;
        let b = tb[k].matmul(params.at(params.config.theta_b_idx(stack, layer, k)))?;
        let term = f.add(&b)?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc.expect("k_orders >= 1 is validated"))
}

fn layer_norm_at(params: &StagedParams, stack: usize, layer: usize, x: &Tensor) -> Result<Tensor> {
    let g = params.at(params.config.ln_gain_idx(stack, layer));
    let b = params.at(params.config.ln_bias_idx(stack, layer));
    x.layer_norm(g, b, LN_EPS)
}

/// Run one 3-layer stack to its H3 representation.
fn forward_stack(
    params: &StagedParams,
    stack: usize,
    wf: &Tensor,
    wb: &Tensor,
    h0: &Tensor,
) -> Result<Tensor> {
    let h1 = layer_norm_at(params, stack, 0, &dgcn_conv(params, stack, 0, wf, wb, h0)?.relu())?;
    let pre2 = dgcn_conv(params, stack, 1, wf, wb, &h1)?.relu().add(&h1)?;
    let h2 = layer_norm_at(params, stack, 1, &pre2)?;
    layer_norm_at(params, stack, 2, &dgcn_conv(params, stack, 2, wf, wb, &h2)?)
}

/// The representation the head consumes: H3 of the single stack, or
/// the column-concatenation of both stacks' H3 in dual mode. `trans`
/// carries one `(forward, backward)` transition pair per stack.
pub fn forward_repr(
    params: &StagedParams,
    trans: &[(Tensor, Tensor)],
    h0: &Tensor,
) -> Result<Tensor> {
    let stacks = params.config.n_stacks();
    if trans.len() != stacks {
        return Err(Error::Contract(format!(
            "model has {stacks} adjacency stacks but {} transition pairs were supplied",
            trans.len()
        )));
    }
    let (n, w) = h0.shape();
    if w != params.config.input_width() {
        return Err(Error::Dimension {
            op: "forward",
            left: format!("{n}x{w}"),
            right: format!("H0 width h(k+1) = {}", params.config.input_width()),
        });
    }
    let mut repr = forward_stack(params, 0, &trans[0].0, &trans[0].1, h0)?;
    if stacks == 2 {
        let other = forward_stack(params, 1, &trans[1].0, &trans[1].1, h0)?;
        repr = repr.concat_cols(&other)?;
    }
    Ok(repr)
}

/// Map the representation through the head's activations.
pub fn apply_head(params: &StagedParams, repr: &Tensor) -> Result<HeadOutput> {
    let expected = params.config.head_input_width();
    if repr.shape().1 != expected {
        return Err(Error::Dimension {
            op: "head",
            left: format!("{}x{}", repr.shape().0, repr.shape().1),
            right: format!("head input width {expected}"),
        });
    }
    Ok(match params.config.head {
        HeadKind::Point => {
            let mean = if params.config.dual {
                params.head_linear(0, repr)?
            } else {
                repr.clone()
            };
            HeadOutput::Point { mean }
        }
        HeadKind::Gnll => HeadOutput::Gaussian {
            mean: params.head_linear(0, repr)?,
            var: params.head_linear(1, repr)?.softplus().add_scalar(VAR_FLOOR),
        },
        HeadKind::Nb => HeadOutput::NegBin {
            n: params.head_linear(0, repr)?.softplus().add_scalar(N_FLOOR),
            p: params.head_linear(1, repr)?.sigmoid().clamp(P_CLAMP, 1.0 - P_CLAMP),
        },
        HeadKind::Zinb => HeadOutput::Zinb {
            n: params.head_linear(0, repr)?.softplus().add_scalar(N_FLOOR),
            p: params.head_linear(1, repr)?.sigmoid().clamp(P_CLAMP, 1.0 - P_CLAMP),
            pi: params.head_linear(2, repr)?.sigmoid().clamp(P_CLAMP, 1.0 - P_CLAMP),
        },
    })
}

/// Full forward pass: representation, then head.
pub fn forward(
    params: &StagedParams,
    trans: &[(Tensor, Tensor)],
    h0: &Tensor,
) -> Result<HeadOutput> {
    let repr = forward_repr(params, trans, h0)?;
    apply_head(params, &repr)
}

/// Per-entry expected value of the head's distribution, on the tape
/// (differentiable): identity for point/Gaussian means,
/// `n(1−p)/p` for NB, `(1−π)·n(1−p)/p` for ZINB. `p` is re-clamped
/// here so a hand-built output with `p = 0` divides safely.
pub fn predict_expected(out: &HeadOutput) -> Result<Tensor> {
    match out {
        HeadOutput::Point { mean } | HeadOutput::Gaussian { mean, .. } => Ok(mean.clone()),
        HeadOutput::NegBin { n, p } => {
            let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            n.mul(&p.one_minus())?.div(&p)
        }
        HeadOutput::Zinb { n, p, pi } => {
            let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            pi.one_minus().mul(&n.mul(&p.one_minus())?.div(&p)?)
        }
    }
}

/// Which feature channels of a sample feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSelection {
    /// Include the raw node-feature channels.
    pub features: bool,
    /// Include the mask/missing indicator channels. Requires
    /// `features` — the indicators extend the feature tensor.
    pub indicators: bool,
}

impl ChannelSelection {
    pub fn validate(&self) -> Result<()> {
        if self.indicators && !self.features {
            return Err(Error::Config(
                "indicator channels require node features (indicators extend the feature tensor); \
                 enable features or drop indicators"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Channel count entering H0, excluding the target channel.
    pub fn k_in(&self, k_raw: usize) -> usize {
        match (self.features, self.indicators) {
            (false, _) => 0,
            (true, false) => k_raw,
            (true, true) => k_raw + 2,
        }
    }
}

/// A model-ready input matrix plus the channel names, in the column
/// order H0 uses — attribution maps H0 columns back through this list.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// `n × h·(k_in+1)`.
    pub h0: Mat,
    /// One name per channel, `[selected raw…, mask, missing, target]`
    /// (indicators present only when selected; target always last).
    pub channel_names: Vec<String>,
    pub k_in: usize,
    pub h: usize,
}

/// Flatten features + masked target channel into the H0 layout:
/// row = node, column = `t·(k+1) + c` (time-major, channel-minor),
/// target channel last at `c = k`.
pub fn build_h0(x: &[f64], k: usize, target: &Mat) -> Result<Mat> {
    let (n, h) = (target.rows(), target.cols());
    if x.len() != n * h * k {
        return Err(Error::Dimension {
            op: "build_h0",
            left: format!("feature buffer of {}", x.len()),
            right: format!("{n} nodes x {h} steps x {k} channels"),
        });
    }
    let mut out = Mat::zeros(n, h * (k + 1));
    for i in 0..n {
        for t in 0..h {
            for c in 0..k {
                out.set(i, t * (k + 1) + c, x[(i * h + t) * k + c]);
            }
            out.set(i, t * (k + 1) + k, target.get(i, t));
        }
    }
    Ok(out)
}

/// Assemble the scaled model input for one sample: selected raw
/// channels min-max scaled, indicators passed through untouched, and
/// the target channel scaled *then* masked (`scale(T) ∘ M ∘ N`), so a
/// hidden entry contributes exactly 0 no matter its raw value.
pub fn assemble_input(
    sample: &TrainingSample,
    raw_channel_names: &[String],
    scale: &ScaleRecord,
    sel: ChannelSelection,
) -> Result<ModelInput> {
    sel.validate()?;
    let k = sample.k();
    if k < 2 {
        return Err(Error::Contract(format!(
            "sample carries {k} channels; the two indicator channels are always required"
        )));
    }
    let k_raw = k - 2;
    if raw_channel_names.len() != k_raw {
        return Err(Error::Contract(format!(
            "{} channel names for {k_raw} raw channels",
            raw_channel_names.len()
        )));
    }
    if sel.features && scale.feature_ranges.len() != k_raw {
        return Err(Error::Contract(format!(
            "scale record covers {} channels, sample has {k_raw}",
            scale.feature_ranges.len()
        )));
    }
    let (n, h) = (sample.n_nodes(), sample.h());
    let k_in = sel.k_in(k_raw);

    let mut x = vec![0.0; n * h * k_in];
    let mut channel_names = Vec::with_capacity(k_in + 1);
    if sel.features {
        channel_names.extend(raw_channel_names.iter().cloned());
        if sel.indicators {
            channel_names.push("mask".to_string());
            channel_names.push("missing".to_string());
        }
        for i in 0..n {
            for t in 0..h {
                let src = (i * h + t) * k;
                let dst = (i * h + t) * k_in;
                for c in 0..k_raw {
                    x[dst + c] = scale.scale_feature(c, sample.x_s[src + c]);
                }
                if sel.indicators {
                    x[dst + k_raw] = sample.x_s[src + k_raw];
                    x[dst + k_raw + 1] = sample.x_s[src + k_raw + 1];
                }
            }
        }
    }
    channel_names.push("target".to_string());

    let mut target = Mat::zeros(n, h);
    for i in 0..n {
        for t in 0..h {
            let visible = sample.m_s.get(i, t) * sample.n_s.get(i, t);
            target.set(i, t, scale.scale_target(sample.t_s.get(i, t)) * visible);
        }
    }

    Ok(ModelInput { h0: build_h0(&x, k_in, &target)?, channel_names, k_in, h })
}
