use crate::autodiff::{ParamStore, Tape};
use crate::data::Image;
use crate::error::Result;
use crate::lie::warp_image;
use crate::losses::{dice, inv_consistency_error, jacobian_stats, landmark_mtre, mse, MetricsReport};
use crate::nets::RegistrationModel;

use super::objective::{loss, Objective};

/// Metrics of `model[A,B]` on one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairEvaluation {
    pub similarity: f64,
    pub regularizer: f64,
    pub loss: f64,
    pub pct_neg_jacobian: f64,
    /// `model[A,B]∘model[B,A]` against the identity, in pixels.
    pub inv_consistency_err: f64,
    /// Warped moving mask against the fixed mask, when both have masks.
    pub dice: Option<f64>,
    /// When both images carry the same number of landmarks.
    pub mtre: Option<f64>,
    /// Mean squared intensity difference before warping.
    pub mse_before: f64,
    pub mse_after: f64,
}

impl PairEvaluation {
    pub fn report(&self, run_id: &str, step: usize) -> MetricsReport {
        MetricsReport {
            run_id: run_id.to_string(),
            step,
            similarity: self.similarity,
            regularizer: self.regularizer,
            loss: self.loss,
            pct_neg_jacobian: self.pct_neg_jacobian,
            inv_consistency_err: self.inv_consistency_err,
            dice: self.dice,
            mtre: self.mtre,
        }
    }
}

pub fn evaluate_pair(model: &RegistrationModel, params: &ParamStore, a: &Image, b: &Image, obj: Objective) -> Result<PairEvaluation> {
    let (h, w) = (a.height(), a.width());
    let tape = Tape::new();
    let p = params.bind(&tape);
    let (va, vb) = (tape.constant(a.pixels.clone()), tape.constant(b.pixels.clone()));
    let terms = loss(model, &p, &va, &vb, obj)?;
    let values = terms.values();
    let t_ab = &terms.output.transform;
    let t_ba = model.forward(&p, &vb, &va)?.transform;
    let warped = warp_image(&va, t_ab)?;

    let dice = match (&a.mask, &b.mask) {
        (Some(ma), Some(mb)) => {
            let soft = tape.constant(crate::autodiff::Tensor::new(&[h, w], ma.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())?);
            let moved: Vec<bool> = warp_image(&soft, t_ab)?.data().iter().map(|&v| v >= 0.5).collect();
            Some(dice(&moved, mb)?)
        }
        _ => None,
    };
    let mtre = if !a.landmarks.is_empty() && a.landmarks.len() == b.landmarks.len() {
        let flat: Vec<f64> = b.landmarks.iter().flatten().copied().collect();
        let pts = tape.constant(crate::autodiff::Tensor::new(&[b.landmarks.len(), 2], flat)?);
        let mapped: Vec<[f64; 2]> = t_ab.apply_points(&pts)?.data().chunks(2).map(|c| [c[0], c[1]]).collect();
        Some(landmark_mtre(&mapped, &a.landmarks, h, w)?)
    } else {
        None
    };

    Ok(PairEvaluation {
        similarity: values.similarity,
        regularizer: values.regularizer,
        loss: values.total,
        pct_neg_jacobian: jacobian_stats(&tape, t_ab, h, w)?.pct_neg,
        inv_consistency_err: inv_consistency_error(&tape, t_ab, &t_ba, h, w)?,
        dice,
        mtre,
        mse_before: mse(&a.pixels, &b.pixels)?,
        mse_after: mse(warped.value(), &b.pixels)?,
    })
}
