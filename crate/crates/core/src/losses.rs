//! Masked loss functions.
//!
//! Every loss is a weighted mean over the entries of an `n×h` target
//! block. The weight matrix decides the scope: `(1−M)∘N` scores only
//! the masked-but-measured entries (the interpolation objective), `N`
//! scores every measured entry. A zero weight removes an entry from
//! the loss *and* from every gradient, exactly — multiplying by the
//! weight is the last elementwise step before summation.
//!
//! The point losses (MAE/MSE) and the Gaussian NLL operate on min-max
//! scaled values; the count likelihoods (NB/ZINB) consume raw counts,
//! since `T = 0` is a meaningful category for them.
//!
//! The scalar `*_scalar` twins replicate the tape formulas in plain
//! `f64` for the evaluation metrics (per-entry NLL, pmf sums).

use serde::{Deserialize, Serialize};

use crate::autodiff::special::ln_gamma;
use crate::autodiff::{log_add_exp, Tape, Tensor};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{HeadKind, HeadOutput};

/// Variance floor inside the Gaussian NLL: `max(σ², GNLL_VAR_EPS)`.
pub const GNLL_VAR_EPS: f64 = 1e-6;

/// Which training loss to optimise. `Mae`/`Mse` pair with the point
/// head; the rest pair with their matching distribution head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
    Gnll,
    Nb,
    Zinb,
}

impl LossKind {
    pub fn head_kind(self) -> HeadKind {
        match self {
            LossKind::Mae | LossKind::Mse => HeadKind::Point,
            LossKind::Gnll => HeadKind::Gnll,
            LossKind::Nb => HeadKind::Nb,
            LossKind::Zinb => HeadKind::Zinb,
        }
    }

    /// Count likelihoods consume raw counts; the others scaled values.
    pub fn uses_raw_counts(self) -> bool {
        matches!(self, LossKind::Nb | LossKind::Zinb)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
            LossKind::Gnll => "gnll",
            LossKind::Nb => "nb",
            LossKind::Zinb => "zinb",
        }
    }

    pub fn parse(s: &str) -> Result<LossKind> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            "gnll" => Ok(LossKind::Gnll),
            "nb" => Ok(LossKind::Nb),
            "zinb" => Ok(LossKind::Zinb),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (expected mae, mse, gnll, nb, or zinb)"
            ))),
        }
    }
}

/// Shape-check a loss's target/weight pair against the prediction and
/// return the tape plus the positive weight sum.
fn weight_sum(pred: &Tensor, target: &Mat, weights: &Mat, what: &'static str) -> Result<f64> {
    let (r, c) = pred.shape();
    if (target.rows(), target.cols()) != (r, c) || (weights.rows(), weights.cols()) != (r, c) {
        return Err(Error::Dimension {
            op: "loss",
            left: format!("{r}x{c}"),
            right: format!("target {} / weights {}", target.shape_str(), weights.shape_str()),
        });
    }
    let sw: f64 = weights.as_slice().iter().sum();
    if sw == 0.0 {
        return Err(Error::Undefined { what });
    }
    Ok(sw)
}

/// Weighted mean of a per-entry tensor: `Σ(x ∘ w) / Σw`.
fn weighted_mean(x: &Tensor, weights: &Mat, sw: f64) -> Result<Tensor> {
    let tape = x.tape();
    let w = tape.constant(weights.clone());
    Ok(x.mul(&w)?.sum().mul_scalar(1.0 / sw))
}

/// Mean absolute error over weighted entries: `Σ(|T̂−T| ∘ w) / Σw`.
pub fn loss_mae(pred: &Tensor, target: &Mat, weights: &Mat) -> Result<Tensor> {
    let sw = weight_sum(pred, target, weights, "MAE over zero total weight")?;
    let t = pred.tape().constant(target.clone());
    weighted_mean(&pred.sub(&t)?.abs(), weights, sw)
}

/// Mean squared error over weighted entries.
pub fn loss_mse(pred: &Tensor, target: &Mat, weights: &Mat) -> Result<Tensor> {
    let sw = weight_sum(pred, target, weights, "MSE over zero total weight")?;
    let t = pred.tape().constant(target.clone());
    let d = pred.sub(&t)?;
    weighted_mean(&d.mul(&d)?, weights, sw)
}

/// Gaussian negative log-likelihood (up to the constant `½ln 2π`,
/// which the training objective drops):
/// weighted mean of `½[(T−μ)²/max(σ²,ε) + ln max(σ²,ε)]`.
pub fn loss_gnll(mean: &Tensor, var: &Tensor, target: &Mat, weights: &Mat) -> Result<Tensor> {
    let sw = weight_sum(mean, target, weights, "Gaussian NLL over zero total weight")?;
    let t = mean.tape().constant(target.clone());
    let d = t.sub(mean)?;
    let v = var.clamp(GNLL_VAR_EPS, f64::INFINITY);
    let per_entry = d.mul(&d)?.div(&v)?.add(&v.log()?)?.mul_scalar(0.5);
    weighted_mean(&per_entry, weights, sw)
}

/// Log-pmf of the negative binomial on the tape:
/// `lnΓ(T+n) − lnΓ(T+1) − lnΓ(n) + n·ln p + T·ln(1−p)`,
/// differentiable in `n` and `p` (`T` is data).
fn nb_log_pmf(tape: &Tape, n: &Tensor, p: &Tensor, target: &Mat) -> Result<Tensor> {
    let t = tape.constant(target.clone());
    let t_plus_1 = tape.constant(target.map(|v| v + 1.0));
    let a = t.add(n)?.ln_gamma()?;
    let b = t_plus_1.ln_gamma()?;
    let c = n.ln_gamma()?;
    let d = n.mul(&p.log()?)?;
    let e = t.mul(&p.one_minus().log()?)?;
    a.sub(&b)?.sub(&c)?.add(&d)?.add(&e)
}

/// Negative-binomial NLL: weighted mean of `−nb_log_pmf`.
pub fn loss_nb(n: &Tensor, p: &Tensor, target: &Mat, weights: &Mat) -> Result<Tensor> {
    let sw = weight_sum(n, target, weights, "NB NLL over zero total weight")?;
    let ll = nb_log_pmf(n.tape(), n, p, target)?;
    weighted_mean(&ll.mul_scalar(-1.0), weights, sw)
}

/// Zero-inflated negative-binomial NLL. Per entry:
///
/// * `T = 0`: `−log(π + (1−π)·pⁿ)`, evaluated by the fused
///   log-sum-exp op (exact `n·ln p` when `π = 0`);
/// * `T > 0`: `−[log(1−π) + nb_log_pmf(T, n, p)]`.
///
/// The branches are combined with 0/1 indicator constants, so each
/// entry's gradient flows only through its own branch.
pub fn loss_zinb(
    n: &Tensor,
    p: &Tensor,
    pi: &Tensor,
    target: &Mat,
    weights: &Mat,
) -> Result<Tensor> {
    let sw = weight_sum(n, target, weights, "ZINB NLL over zero total weight")?;
    let tape = n.tape();
    let zero_ind = tape.constant(target.map(|v| if v == 0.0 { 1.0 } else { 0.0 }));
    let pos_ind = tape.constant(target.map(|v| if v == 0.0 { 0.0 } else { 1.0 }));
    let zero_branch = pi.zinb_zero_mass(n, p)?;
    let pos_branch = pi.one_minus().log()?.add(&nb_log_pmf(tape, n, p, target)?)?;
    let ll = zero_ind.mul(&zero_branch)?.add(&pos_ind.mul(&pos_branch)?)?;
    weighted_mean(&ll.mul_scalar(-1.0), weights, sw)
}

/// Dispatch a loss kind onto the matching head output. The model head
/// is derived from the loss kind, so a mismatch here is a caller bug.
pub fn apply_loss(
    kind: LossKind,
    out: &HeadOutput,
    target: &Mat,
    weights: &Mat,
) -> Result<Tensor> {
    match (kind, out) {
        (LossKind::Mae, HeadOutput::Point { mean }) => loss_mae(mean, target, weights),
        (LossKind::Mse, HeadOutput::Point { mean }) => loss_mse(mean, target, weights),
        (LossKind::Gnll, HeadOutput::Gaussian { mean, var }) => {
            loss_gnll(mean, var, target, weights)
        }
        (LossKind::Nb, HeadOutput::NegBin { n, p }) => loss_nb(n, p, target, weights),
        (LossKind::Zinb, HeadOutput::Zinb { n, p, pi }) => loss_zinb(n, p, pi, target, weights),
        (kind, out) => Err(Error::Contract(format!(
            "loss {} cannot consume a {} head output",
            kind.name(),
            out.kind().name()
        ))),
    }
}

/// Scalar twin of the tape NB log-pmf.
pub fn nb_log_pmf_scalar(t: f64, n: f64, p: f64) -> f64 {
    ln_gamma(t + n) - ln_gamma(t + 1.0) - ln_gamma(n) + n * p.ln() + t * (1.0 - p).ln()
}

/// Scalar ZINB log-pmf, matching the tape branches.
pub fn zinb_log_pmf_scalar(t: f64, n: f64, p: f64, pi: f64) -> f64 {
    if t == 0.0 {
        if pi <= 0.0 {
            n * p.ln()
        } else {
            log_add_exp(pi.ln(), (1.0 - pi).ln() + n * p.ln())
        }
    } else {
        (1.0 - pi).ln() + nb_log_pmf_scalar(t, n, p)
    }
}

/// Scalar Gaussian NLL twin of `loss_gnll` (same ε clamp, still
/// without the `½ln 2π` constant).
pub fn gnll_scalar(t: f64, mean: f64, var: f64) -> f64 {
    let v = var.max(GNLL_VAR_EPS);
    0.5 * ((t - mean).powi(2) / v + v.ln())
}

/// NB pmf by exponentiating the log-pmf.
pub fn nb_pmf(t: f64, n: f64, p: f64) -> f64 {
    nb_log_pmf_scalar(t, n, p).exp()
}

/// ZINB pmf.
pub fn zinb_pmf(t: f64, n: f64, p: f64, pi: f64) -> f64 {
    zinb_log_pmf_scalar(t, n, p, pi).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf(tape: &Tape, rows: usize, cols: usize, vals: &[f64]) -> Tensor {
        tape.leaf(Mat::from_vec(rows, cols, vals.to_vec()).unwrap())
    }

    #[test]
    fn mae_and_mse_hand_values() {
        let tape = Tape::new();
        let pred = leaf(&tape, 1, 2, &[1.0, 3.0]);
        let target = Mat::from_vec(1, 2, vec![2.0, 1.0]).unwrap();
        let w = Mat::full(1, 2, 1.0);
        assert_eq!(loss_mae(&pred, &target, &w).unwrap().scalar_value().unwrap(), 1.5);
        assert_eq!(loss_mse(&pred, &target, &w).unwrap().scalar_value().unwrap(), 2.5);
    }

    #[test]
    fn gnll_hand_values() {
        let tape = Tape::new();
        // T = mean, σ² = 1 → 0 exactly.
        let mean = leaf(&tape, 1, 1, &[4.0]);
        let var = leaf(&tape, 1, 1, &[1.0]);
        let t = Mat::full(1, 1, 4.0);
        let w = Mat::full(1, 1, 1.0);
        assert_eq!(loss_gnll(&mean, &var, &t, &w).unwrap().scalar_value().unwrap(), 0.0);
        // |T − mean| = 1, σ² = 1 → ½.
        let t = Mat::full(1, 1, 5.0);
        assert_eq!(loss_gnll(&mean, &var, &t, &w).unwrap().scalar_value().unwrap(), 0.5);
    }

    #[test]
    fn gnll_variance_floor_applies() {
        let tape = Tape::new();
        let mean = leaf(&tape, 1, 1, &[0.0]);
        let var = leaf(&tape, 1, 1, &[1e-12]);
        let t = Mat::zeros(1, 1);
        let w = Mat::full(1, 1, 1.0);
        let got = loss_gnll(&mean, &var, &t, &w).unwrap().scalar_value().unwrap();
        assert_eq!(got, 0.5 * GNLL_VAR_EPS.ln());
    }

    #[test]
    fn nb_reduces_to_geometric_at_n_one() {
        // NB(n=1, p) is geometric: P(T=k) = p(1−p)^k.
        for k in 0..6 {
            for &p in &[0.2, 0.5, 0.8] {
                let got = nb_pmf(k as f64, 1.0, p);
                let expect = p * (1.0 - p).powi(k);
                assert!((got - expect).abs() < 1e-12, "k={k} p={p}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn nb_loss_matches_scalar_twin() {
        let tape = Tape::new();
        let n = leaf(&tape, 1, 3, &[0.5, 2.0, 7.0]);
        let p = leaf(&tape, 1, 3, &[0.3, 0.6, 0.9]);
        let target = Mat::from_vec(1, 3, vec![0.0, 4.0, 1.0]).unwrap();
        let w = Mat::full(1, 3, 1.0);
        let got = loss_nb(&n, &p, &target, &w).unwrap().scalar_value().unwrap();
        let expect = -(nb_log_pmf_scalar(0.0, 0.5, 0.3)
            + nb_log_pmf_scalar(4.0, 2.0, 0.6)
            + nb_log_pmf_scalar(1.0, 7.0, 0.9))
            / 3.0;
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn zinb_zero_entry_hand_value() {
        let tape = Tape::new();
        let n = leaf(&tape, 1, 1, &[2.0]);
        let p = leaf(&tape, 1, 1, &[0.5]);
        let pi = leaf(&tape, 1, 1, &[0.3]);
        let t = Mat::zeros(1, 1);
        let w = Mat::full(1, 1, 1.0);
        let got = loss_zinb(&n, &p, &pi, &t, &w).unwrap().scalar_value().unwrap();
        // −log(π + (1−π)p^n) = −log(0.3 + 0.7·0.25)
        let expect = -(0.3f64 + 0.7 * 0.25).ln();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn zinb_with_zero_pi_equals_nb() {
        let tape = Tape::new();
        let vals_n = [0.5, 2.0, 10.0, 1.3];
        let vals_p = [0.1, 0.5, 0.9, 0.42];
        let targets = Mat::from_vec(2, 2, vec![0.0, 3.0, 0.0, 12.0]).unwrap();
        let n = leaf(&tape, 2, 2, &vals_n);
        let p = leaf(&tape, 2, 2, &vals_p);
        let pi = tape.leaf(Mat::zeros(2, 2));
        let w = Mat::full(2, 2, 1.0);
        let z = loss_zinb(&n, &p, &pi, &targets, &w).unwrap().scalar_value().unwrap();
        let b = loss_nb(&n, &p, &targets, &w).unwrap().scalar_value().unwrap();
        assert!((z - b).abs() < 1e-12, "zinb {z} vs nb {b}");
    }

    #[test]
    fn weight_scaling_leaves_losses_unchanged() {
        let tape = Tape::new();
        let pred = leaf(&tape, 1, 3, &[1.0, 2.0, 3.0]);
        let target = Mat::from_vec(1, 3, vec![0.5, 2.5, 2.0]).unwrap();
        let w1 = Mat::from_vec(1, 3, vec![1.0, 0.0, 2.0]).unwrap();
        let w2 = w1.map(|v| v * 7.0);
        let a = loss_mae(&pred, &target, &w1).unwrap().scalar_value().unwrap();
        let b = loss_mae(&pred, &target, &w2).unwrap().scalar_value().unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn all_zero_weights_are_undefined() {
        let tape = Tape::new();
        let pred = leaf(&tape, 1, 2, &[1.0, 2.0]);
        let target = Mat::zeros(1, 2);
        let w = Mat::zeros(1, 2);
        assert!(matches!(
            loss_mae(&pred, &target, &w),
            Err(Error::Undefined { .. })
        ));
        let n = leaf(&tape, 1, 2, &[1.0, 1.0]);
        let p = leaf(&tape, 1, 2, &[0.5, 0.5]);
        let pi = leaf(&tape, 1, 2, &[0.5, 0.5]);
        assert!(matches!(loss_nb(&n, &p, &target, &w), Err(Error::Undefined { .. })));
        assert!(matches!(
            loss_zinb(&n, &p, &pi, &target, &w),
            Err(Error::Undefined { .. })
        ));
    }

    #[test]
    fn zero_weight_entries_cannot_move_loss_or_gradients() {
        // Perturb a weight-0 target entry: identical loss, identical
        // gradients, and the entry's own gradient is exactly zero.
        let w = Mat::from_vec(1, 3, vec![1.0, 0.0, 1.0]).unwrap();
        let run = |hidden: f64| {
            let tape = Tape::new();
            let n = leaf(&tape, 1, 3, &[2.0, 3.0, 1.5]);
            let p = leaf(&tape, 1, 3, &[0.4, 0.6, 0.7]);
            let pi = leaf(&tape, 1, 3, &[0.2, 0.3, 0.4]);
            let target = Mat::from_vec(1, 3, vec![1.0, hidden, 0.0]).unwrap();
            let loss = loss_zinb(&n, &p, &pi, &target, &w).unwrap();
            let grads = tape.backward(&loss).unwrap();
            (
                loss.scalar_value().unwrap(),
                grads.wrt(&n),
                grads.wrt(&p),
                grads.wrt(&pi),
            )
        };
        let (l1, gn1, gp1, gpi1) = run(5.0);
        let (l2, gn2, gp2, gpi2) = run(999.0);
        assert_eq!(l1, l2);
        assert_eq!(gn1, gn2);
        assert_eq!(gp1, gp2);
        assert_eq!(gpi1, gpi2);
        assert_eq!(gn1.get(0, 1), 0.0);
        assert_eq!(gp1.get(0, 1), 0.0);
        assert_eq!(gpi1.get(0, 1), 0.0);
    }

    #[test]
    fn loss_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = 2;
        let cols = 4;
        let mut rand_mat = |lo: f64, hi: f64| {
            let mut m = Mat::zeros(rows, cols);
            for v in m.as_mut_slice() {
                *v = rng.gen_range(lo..hi);
            }
            m
        };
        let target = rand_mat(0.0, 6.0).map(|v| v.round());
        let weights = Mat::from_vec(2, 4, vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();

        // MAE needs pred − target away from the |·| kink.
        let pred0 = target.map(|v| v + 0.37);
        let t1 = target.clone();
        let w1 = weights.clone();
        let err = grad_check(
            move |_, xs| loss_mae(&xs[0], &t1, &w1),
            std::slice::from_ref(&pred0),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "mae {err}");

        let t2 = target.clone();
        let w2 = weights.clone();
        let err = grad_check(
            move |_, xs| loss_mse(&xs[0], &t2, &w2),
            std::slice::from_ref(&pred0),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "mse {err}");

        let mean0 = rand_mat(-1.0, 1.0);
        let var0 = rand_mat(0.5, 2.0);
        let t3 = target.clone();
        let w3 = weights.clone();
        let err = grad_check(
            move |_, xs| loss_gnll(&xs[0], &xs[1], &t3, &w3),
            &[mean0, var0],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "gnll {err}");

        let n0 = rand_mat(0.5, 3.0);
        let p0 = rand_mat(0.2, 0.8);
        let pi0 = rand_mat(0.1, 0.9);
        let t4 = target.clone();
        let w4 = weights.clone();
        let err = grad_check(
            move |_, xs| loss_nb(&xs[0], &xs[1], &t4, &w4),
            &[n0.clone(), p0.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "nb {err}");

        let t5 = target.clone();
        let w5 = weights.clone();
        let err = grad_check(
            move |_, xs| loss_zinb(&xs[0], &xs[1], &xs[2], &t5, &w5),
            &[n0, p0, pi0],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "zinb {err}");
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let tape = Tape::new();
        let pred = leaf(&tape, 1, 2, &[1.0, 2.0]);
        let target = Mat::zeros(1, 3);
        let w = Mat::full(1, 3, 1.0);
        assert!(matches!(
            loss_mae(&pred, &target, &w),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn loss_kind_maps_to_heads_and_parses() {
        assert_eq!(LossKind::Mae.head_kind(), HeadKind::Point);
        assert_eq!(LossKind::Mse.head_kind(), HeadKind::Point);
        assert_eq!(LossKind::Gnll.head_kind(), HeadKind::Gnll);
        assert_eq!(LossKind::Zinb.head_kind(), HeadKind::Zinb);
        assert!(LossKind::Zinb.uses_raw_counts());
        assert!(!LossKind::Gnll.uses_raw_counts());
        assert_eq!(LossKind::parse("zinb").unwrap(), LossKind::Zinb);
        assert!(LossKind::parse("huber").is_err());
    }
}
