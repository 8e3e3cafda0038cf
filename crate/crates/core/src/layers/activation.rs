use super::record::{Gradients, OpRecord};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub struct ActivationRecord<T: Real> {
    pub(crate) kind: Activation,
    pub(crate) input: Tensor<T>,
}

pub fn activation_forward<T: Real>(
    input: &Tensor<T>,
    kind: Activation,
) -> Result<(Tensor<T>, OpRecord<T>)> {
    let out = input.map(|v| T::from_f64(kind.apply(v.to_f64())));
    let record = OpRecord::Activation(ActivationRecord {
        kind,
        input: input.clone(),
    });
    Ok((out, record))
}

pub(crate) fn activation_backward<T: Real>(
    rec: ActivationRecord<T>,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    upstream.expect_same_shape(&rec.input)?;
    let data = rec
        .input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| T::from_f64(rec.kind.derivative(x.to_f64()) * g.to_f64()))
        .collect();
    Ok(Gradients {
        input: Tensor::from_vec(rec.input.shape(), data)?,
        params: Vec::new(),
    })
}
