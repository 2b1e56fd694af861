use hifreq_core::Tensor;

use crate::gemm::Real;
use crate::UnetError;

#[derive(Debug, Clone)]
pub struct LossValue<T: Real> {
    pub value: f64,
    /// d value / d pred.
    pub grad: Tensor<T>,
}

/// Mean of `(pred - target)^2` over pixels with `mask == 1`.
pub fn masked_mse<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<LossValue<T>, UnetError> {
    for t in [target, mask] {
        if t.shape() != pred.shape() {
            return Err(UnetError::ShapeMismatch {
                expected: pred.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
    }
    let n = mask.data().iter().filter(|&&m| m == T::one()).count();
    if n == 0 {
        return Err(UnetError::EmptyMask);
    }
    let mut sum = 0.0f64;
    let scale = T::from(2.0 / n as f64).expect("finite");
    let mut grad = Tensor::zeros(pred.shape())?;
    for (((g, &p), &y), &m) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
        .zip(mask.data())
    {
        if m == T::one() {
            let d = p - y;
            sum += d.to_f64().expect("finite").powi(2);
            *g = scale * d;
        }
    }
    Ok(LossValue {
        value: sum / n as f64,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_and_gradient() {
        let p = Tensor::from_vec(&[1, 1, 1, 3], vec![1.0, 2.0, 5.0]).unwrap();
        let y = Tensor::from_vec(&[1, 1, 1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let m = Tensor::from_vec(&[1, 1, 1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        let l = masked_mse(&p, &y, &m).unwrap();
        assert_eq!(l.value, 2.5);
        assert_eq!(l.grad.data(), &[1.0, 2.0, 0.0]);
        let z = Tensor::zeros(&[1, 1, 1, 3]).unwrap();
        assert!(matches!(masked_mse(&p, &y, &z), Err(UnetError::EmptyMask)));
    }
}
