use super::record::{Gradients, OpRecord};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct BceRecord<T: Real> {
    pub(crate) pred: Tensor<T>,
    pub(crate) target: Tensor<T>,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

/// Mean binary cross-entropy of `pred` against a {0,1} `target`.
pub fn bce_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, OpRecord<T>)> {
    pred.expect_same_shape(target)?;
    let mut sum = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let t = t.to_f64();
        if t != 0.0 && t != 1.0 {
            return Err(Error::InvalidTarget(t));
        }
        let p = clamp_prob(p.to_f64());
        sum -= if t == 1.0 { p.ln() } else { (1.0 - p).ln() };
    }
    let loss = sum / pred.len() as f64;
    let record = OpRecord::Bce(BceRecord {
        pred: pred.clone(),
        target: target.clone(),
    });
    Ok((loss, record))
}

/// Gradient of the mean BCE with respect to the predictions, scaled by the
/// scalar `upstream[0]`. The clamp is treated as the identity, so saturated
/// predictions still receive the gradient of the clamped value.
pub(crate) fn bce_backward<T: Real>(
    rec: BceRecord<T>,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    if upstream.len() != 1 {
        return Err(Error::shape(format!(
            "loss upstream must be a scalar, got {:?}",
            upstream.shape()
        )));
    }
    let scale = upstream.data()[0].to_f64() / rec.pred.len() as f64;
    let data = rec
        .pred
        .data()
        .iter()
        .zip(rec.target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p.to_f64());
            T::from_f64(scale * (p - t.to_f64()) / (p * (1.0 - p)))
        })
        .collect();
    Ok(Gradients {
        input: Tensor::from_vec(rec.pred.shape(), data)?,
        params: Vec::new(),
    })
}
