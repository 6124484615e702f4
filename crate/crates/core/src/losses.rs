//! Training objective: binary cross-entropy plus a soft IoU term.

use candle_core::Tensor;

use crate::error::{Error, Result};

/// Smoothing constant added to numerator and denominator of the soft IoU.
pub const IOU_SMOOTH: f64 = 1.0;

/// Scalar loss parts as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub bce_part: f64,
    pub iou_part: f64,
}

impl LossValue {
    pub fn from_parts(bce_part: f64, iou_part: f64, lambda: f64) -> Self {
        Self {
            total: bce_part + lambda * iou_part,
            bce_part,
            iou_part,
        }
    }
}

/// Differentiable loss tensors (each a scalar).
#[derive(Debug, Clone)]
pub struct LossTensors {
    pub total: Tensor,
    pub bce: Tensor,
    pub iou: Tensor,
}

impl LossTensors {
    pub fn value(&self, lambda: f64) -> Result<LossValue> {
        let bce = self.bce.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        let iou = self.iou.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        Ok(LossValue::from_parts(bce, iou, lambda))
    }
}

fn check_shapes(logits: &Tensor, target: &Tensor) -> Result<()> {
    if logits.dims() != target.dims() {
        return Err(Error::dim(
            "target",
            format!(
                "logits {:?} and target {:?} differ",
                logits.dims(),
                target.dims()
            ),
        ));
    }
    Ok(())
}

/// Mean per-pixel binary cross-entropy, `max(x,0) - x*g + ln(1 + e^-|x|)`.
pub fn bce_loss(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_shapes(logits, target)?;
    let target = target.to_dtype(logits.dtype())?;
    let softplus_neg_abs = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let per_pixel = ((logits.relu()? - (logits * &target)?)? + softplus_neg_abs)?;
    Ok(per_pixel.mean_all()?)
}

/// Logistic sigmoid as `(tanh(x/2) + 1) / 2`, which saturates without
/// overflow in either direction.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x * 0.5)?.tanh()?.affine(0.5, 0.5)?)
}

/// `1 - (sum p*g + eps) / (sum (p + g - p*g) + eps)` per sample, averaged over
/// the batch (axis 0). `p = sigmoid(logits)`.
pub fn soft_iou_loss(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_shapes(logits, target)?;
    let target = target.to_dtype(logits.dtype())?;
    let b = logits.dims().first().copied().unwrap_or(1).max(1);
    let p = sigmoid(logits)?.reshape((b, ()))?;
    let g = target.reshape((b, ()))?;
    let inter = (&p * &g)?.sum(1)?;
    let union = ((&p + &g)?.sum(1)? - &inter)?;
    let ratio = ((inter + IOU_SMOOTH)? / (union + IOU_SMOOTH)?)?;
    Ok(ratio.neg()?.affine(1.0, 1.0)?.mean_all()?)
}

/// `bce + lambda * soft_iou`, keeping both parts.
pub fn combined_loss(logits: &Tensor, target: &Tensor, lambda: f64) -> Result<LossTensors> {
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("loss lambda must be positive, got {lambda}")));
    }
    let bce = bce_loss(logits, target)?;
    let iou = soft_iou_loss(logits, target)?;
    let total = (&bce + (&iou * lambda)?)?;
    Ok(LossTensors { total, bce, iou })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, DType};

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar().unwrap()
    }

    fn pair(logits: Vec<f64>, target: Vec<f64>) -> (Tensor, Tensor) {
        let n = logits.len();
        (
            Tensor::from_vec(logits, (1, 1, 1, n), &Device::Cpu).unwrap(),
            Tensor::from_vec(target, (1, 1, 1, n), &Device::Cpu).unwrap(),
        )
    }

    #[test]
    fn saturated_correct_prediction() {
        let g = vec![1.0, 0.0, 1.0, 0.0, 0.0];
        let l: Vec<f64> = g.iter().map(|v| if *v > 0.5 { 50.0 } else { -50.0 }).collect();
        let (l, g) = pair(l, g);
        assert!(scalar(&bce_loss(&l, &g).unwrap()) < 1e-8);
        assert!(scalar(&soft_iou_loss(&l, &g).unwrap()) < 1e-6);
        assert!(scalar(&combined_loss(&l, &g, 1.0).unwrap().total) < 1e-6);
    }

    #[test]
    fn zero_logits_give_ln2() {
        for g in [vec![0.0; 6], vec![1.0; 6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]] {
            let (l, g) = pair(vec![0.0; 6], g);
            assert!((scalar(&bce_loss(&l, &g).unwrap()) - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_saturated_prediction_is_stable() {
        let (l, g) = pair(vec![-50.0; 4], vec![1.0; 4]);
        assert!((scalar(&bce_loss(&l, &g).unwrap()) - 50.0).abs() < 1e-9);
        let (l, g) = pair(vec![-100.0, 100.0], vec![1.0, 0.0]);
        let v = scalar(&bce_loss(&l, &g).unwrap());
        assert!(v.is_finite() && (v - 100.0).abs() < 1e-9);
    }

    #[test]
    fn soft_iou_all_ones_half_probability() {
        let n = 10;
        let (l, g) = pair(vec![0.0; n], vec![1.0; n]);
        let expect = 1.0 - (0.5 * n as f64 + 1.0) / (n as f64 + 1.0);
        assert!((scalar(&soft_iou_loss(&l, &g).unwrap()) - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_target_empty_prediction() {
        let (l, g) = pair(vec![-50.0; 8], vec![0.0; 8]);
        assert!(scalar(&soft_iou_loss(&l, &g).unwrap()) < 1e-12);
    }

    #[test]
    fn combined_parts_add_up() {
        assert_eq!(LossValue::from_parts(0.5, 0.2, 1.0).total, 0.7);
        assert!((LossValue::from_parts(0.5, 0.2, 2.0).total - 0.9).abs() < 1e-15);
        let (l, g) = pair(vec![0.3, -1.0, 2.0], vec![1.0, 0.0, 0.0]);
        let parts = combined_loss(&l, &g, 2.0).unwrap();
        let v = parts.value(2.0).unwrap();
        assert!((scalar(&parts.total) - v.total).abs() < 1e-12);
        assert!((v.total - (v.bce_part + 2.0 * v.iou_part)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_and_bad_lambda() {
        let a = Tensor::zeros((1, 1, 2, 2), DType::F64, &Device::Cpu).unwrap();
        let b = Tensor::zeros((1, 1, 2, 3), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(bce_loss(&a, &b), Err(Error::Dimension { .. })));
        assert!(matches!(soft_iou_loss(&a, &b), Err(Error::Dimension { .. })));
        assert!(matches!(combined_loss(&a, &a, 0.0), Err(Error::Parameter(_))));
    }
}
