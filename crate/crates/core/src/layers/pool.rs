//! 2×2 max pooling with stride 2.

use super::record::{Gradients, OpRecord};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct PoolRecord {
    pub(crate) input_shape: Vec<usize>,
    /// Flat input index that produced each output element.
    pub(crate) argmax: Vec<u32>,
}

impl PoolRecord {
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

pub fn maxpool2x2_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, OpRecord<T>)> {
    let (h, w, c) = input.hwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "max pooling needs even spatial dims, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                // window cells in row-major order; strict `>` keeps the first maximum
                let mut best = (2 * oy * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out.push(src[best]);
                argmax.push(best as u32);
            }
        }
    }
    let output = Tensor::from_vec(&[oh, ow, c], out)?;
    let record = OpRecord::Pool(PoolRecord {
        input_shape: input.shape().to_vec(),
        argmax,
    });
    Ok((output, record))
}

pub(crate) fn maxpool_backward<T: Real>(
    rec: PoolRecord,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    if upstream.len() != rec.argmax.len() {
        return Err(Error::shape(format!(
            "pool upstream has {} elements, expected {}",
            upstream.len(),
            rec.argmax.len()
        )));
    }
    let (h, w, c) = (rec.input_shape[0], rec.input_shape[1], rec.input_shape[2]);
    upstream.expect_shape(&[h / 2, w / 2, c])?;
    let mut dx = Tensor::<T>::zeros(&rec.input_shape)?;
    let grad = dx.data_mut();
    for (&idx, &g) in rec.argmax.iter().zip(upstream.data()) {
        grad[idx as usize] = g;
    }
    Ok(Gradients {
        input: dx,
        params: Vec::new(),
    })
}
