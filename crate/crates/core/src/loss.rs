//! Dice plus binary cross-entropy objective.

use lfinet_tensor::{Element, Tensor};

use crate::error::{invalid, Result};

pub const DICE_SMOOTH: f64 = 1.0;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug)]
pub struct LossBreakdown<T: Element> {
    pub total: Tensor<T>,
    pub dice: Tensor<T>,
    pub bce: Tensor<T>,
}

impl<T: Element> LossBreakdown<T> {
    pub fn values(&self) -> (f64, f64, f64) {
        let f = |t: &Tensor<T>| t.item().to_f64().unwrap_or(f64::NAN);
        (f(&self.total), f(&self.dice), f(&self.bce))
    }
}

/// `dice = 1 − (2Σpy + ε)/(Σp + Σy + ε)`, `bce` the mean clamped binary
/// cross-entropy; sums run over the whole batch.
pub fn dice_bce_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossBreakdown<T>> {
    if pred.shape() != target.shape() {
        return Err(invalid(format!("prediction {:?} and target {:?} differ in shape", pred.shape(), target.shape())));
    }
    if let Some(v) = target.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(invalid(format!("target must be binary, found {v}")));
    }
    let inter = pred.mul(target)?.sum();
    let denom = pred.sum().add(&target.sum())?.add_scalar(DICE_SMOOTH);
    let dice = inter.scale(2.0).add_scalar(DICE_SMOOTH).div(&denom)?.rsub_scalar(1.0);

    let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let pos = target.mul(&p.ln())?;
    let neg = target.rsub_scalar(1.0).mul(&p.rsub_scalar(1.0).ln())?;
    let bce = pos.add(&neg)?.mean().scale(-1.0);

    Ok(LossBreakdown { total: dice.add(&bce)?, dice, bce })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(v.to_vec(), &[1, 1, 1, v.len()]).unwrap()
    }

    #[test]
    fn hand_evaluated_dice() {
        let l = dice_bce_loss(&t(&[1.0, 1.0, 0.0, 0.0]), &t(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!((l.dice.item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn half_everywhere_is_ln2() {
        let l = dice_bce_loss(&t(&[0.5; 6]), &t(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])).unwrap();
        assert!((l.bce.item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let y = t(&[1.0, 0.0, 0.0, 1.0, 1.0]);
        let (total, dice, bce) = dice_bce_loss(&y, &y).unwrap().values();
        assert!(dice.abs() < 1e-15);
        assert!(bce <= 1e-6);
        assert!(total < 1e-3);
        let yf = Tensor::<f32>::new(vec![1.0, 0.0, 1.0, 0.0], &[1, 1, 2, 2]).unwrap();
        assert!(dice_bce_loss(&yf, &yf).unwrap().values().0 < 1e-3);
    }

    #[test]
    fn total_is_sum_of_parts() {
        let l = dice_bce_loss(&t(&[0.2, 0.9, 0.6]), &t(&[0.0, 1.0, 1.0])).unwrap();
        let (total, dice, bce) = l.values();
        assert_eq!(total, dice + bce);
        assert!((0.0..=1.0).contains(&dice) && bce >= 0.0);
    }

    #[test]
    fn non_binary_target_rejected() {
        let err = dice_bce_loss(&t(&[0.2, 0.9]), &t(&[0.0, 0.5])).unwrap_err();
        assert!(err.to_string().contains("binary"));
    }
}
