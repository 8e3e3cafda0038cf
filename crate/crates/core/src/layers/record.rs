use super::activation::{activation_backward, ActivationRecord};
use super::conv::{conv2d_backward, ConvRecord};
use super::dense::{dense_backward, DenseRecord};
use super::loss::{bce_backward, BceRecord};
use super::pool::{maxpool_backward, PoolRecord};
use super::tconv::{crop_backward, tconv_backward, CropRecord, TConvRecord};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// What a forward call cached for its backward pass.
#[derive(Clone, Debug)]
pub enum OpRecord<T: Real> {
    Conv(ConvRecord<T>),
    Pool(PoolRecord),
    Activation(ActivationRecord<T>),
    Dense(DenseRecord<T>),
    TConv(TConvRecord<T>),
    Crop(CropRecord),
    Bce(BceRecord<T>),
}

impl<T: Real> OpRecord<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            OpRecord::Conv(_) => "conv2d",
            OpRecord::Pool(_) => "maxpool2x2",
            OpRecord::Activation(a) => a.kind.name(),
            OpRecord::Dense(_) => "dense",
            OpRecord::TConv(_) => "tconv",
            OpRecord::Crop(_) => "crop",
            OpRecord::Bce(_) => "bce",
        }
    }
}

/// Gradient with respect to the op's input, and with respect to each of its
/// parameters in declaration order (weights, then bias).
#[derive(Clone, Debug)]
pub struct Gradients<T: Real> {
    pub input: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

/// Propagates `upstream` (shaped like the recorded output) through one op.
pub fn backward<T: Real>(record: OpRecord<T>, upstream: &Tensor<T>) -> Result<Gradients<T>> {
    match record {
        OpRecord::Conv(r) => conv2d_backward(r, upstream),
        OpRecord::Pool(r) => maxpool_backward(r, upstream),
        OpRecord::Activation(r) => activation_backward(r, upstream),
        OpRecord::Dense(r) => dense_backward(r, upstream),
        OpRecord::TConv(r) => tconv_backward(r, upstream),
        OpRecord::Crop(r) => crop_backward(r, upstream),
        OpRecord::Bce(r) => bce_backward(r, upstream),
    }
}
