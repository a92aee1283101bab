//! Finite-difference gradient verification.
//!
//! `grad_check` rebuilds the computation from scratch at perturbed inputs,
//! so it exercises exactly the same code path training uses. Each
//! perturbation runs on its own throwaway tape, which also makes the
//! (embarrassingly parallel) sweep safe to distribute.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::par;

use super::{Tape, Tensor};

/// Compare analytic gradients of `build` (a scalar-valued function of the
/// given inputs) against central finite differences with the given step.
///
/// Returns the maximum relative error over every element of every input,
/// with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(build: F, inputs: &[Mat], step: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor> + Sync,
{
    if step <= 0.0 {
        return Err(Error::Parameter {
            name: "step",
            reason: "must be positive".into(),
        });
    }
    let eval = |mats: &[Mat]| -> Result<f64> {
        let tape = Tape::new();
        let ts: Vec<Tensor> = mats.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&tape, &ts)?;
        let v = out.scalar_value()?;
        if !v.is_finite() {
            return Err(Error::NumericDomain {
                op: "grad_check",
                index: 0,
                value: v,
            });
        }
        Ok(v)
    };

    // Analytic pass.
    let tape = Tape::new();
    let ts: Vec<Tensor> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&tape, &ts)?;
    let grads = tape.backward(&out)?;
    let analytic: Vec<Mat> = ts.iter().map(|t| grads.wrt(t)).collect();

    // One flat job per perturbed element.
    let mut jobs = Vec::new();
    for (i, m) in inputs.iter().enumerate() {
        for e in 0..m.as_slice().len() {
            jobs.push((i, e));
        }
    }
    let numeric: Vec<Result<f64>> = par::map_indexed(jobs.len(), |j| {
        let (i, e) = jobs[j];
        let mut plus = inputs.to_vec();
        plus[i].as_mut_slice()[e] += step;
        let mut minus = inputs.to_vec();
        minus[i].as_mut_slice()[e] -= step;
        Ok((eval(&plus)? - eval(&minus)?) / (2.0 * step))
    });

    let mut max_rel = 0.0_f64;
    for (j, num) in numeric.into_iter().enumerate() {
        let (i, e) = jobs[j];
        let n = num?;
        let a = analytic[i].as_slice()[e];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
