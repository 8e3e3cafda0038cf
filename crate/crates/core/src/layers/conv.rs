//! 2-D cross-correlation via im2col + GEMM.

use super::gemm::{gemm, Mat};
use super::record::{Gradients, OpRecord};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (height, width)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding,
        }
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let (kh, kw) = self.kernel;
        let span_h = h + 2 * self.padding;
        let span_w = w + 2 * self.padding;
        if kh == 0 || kw == 0 || span_h < kh || span_w < kw {
            return Err(Error::shape(format!(
                "kernel {kh}×{kw} does not fit {h}×{w} input with padding {}",
                self.padding
            )));
        }
        Ok((
            (span_h - kh) / self.stride + 1,
            (span_w - kw) / self.stride + 1,
        ))
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.kernel.0,
            self.kernel.1,
            self.in_channels,
            self.out_channels,
        ]
    }

    fn patch_len(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.in_channels
    }
}

#[derive(Clone, Debug)]
pub struct ConvRecord<T: Real> {
    pub(crate) spec: ConvSpec,
    pub(crate) input: Tensor<T>,
    pub(crate) weights: Tensor<T>,
    pub(crate) out_dims: (usize, usize),
}

/// Unrolls every receptive field into one row of a `(oh·ow) × (kh·kw·c)`
/// matrix; out-of-bounds taps read as zero.
fn im2col<T: Real>(input: &Tensor<T>, spec: &ConvSpec, (oh, ow): (usize, usize)) -> Vec<f64> {
    let (h, w, c) = input.hwc().expect("validated by caller");
    let (kh, kw) = spec.kernel;
    let k = spec.patch_len();
    let src = input.data();
    let mut cols = vec![0.0; oh * ow * k];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * k..][..k];
            for ky in 0..kh {
                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = (iy as usize * w + ix as usize) * c;
                    let d = (ky * kw + kx) * c;
                    for ch in 0..c {
                        row[d + ch] = src[s + ch].to_f64();
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column rows back onto the input grid.
fn col2im(
    cols: &[f64],
    spec: &ConvSpec,
    (h, w, c): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let (kh, kw) = spec.kernel;
    let k = spec.patch_len();
    let mut out = vec![0.0; h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * k..][..k];
            for ky in 0..kh {
                let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let d = (iy as usize * w + ix as usize) * c;
                    let s = (ky * kw + kx) * c;
                    for ch in 0..c {
                        out[d + ch] += row[s + ch];
                    }
                }
            }
        }
    }
    out
}

fn check_shapes<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    let (h, w, c) = input.hwc()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    weights.expect_shape(&spec.weight_shape())?;
    bias.expect_shape(&[spec.out_channels])?;
    spec.output_dims(h, w)
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: ConvSpec,
) -> Result<(Tensor<T>, OpRecord<T>)> {
    let (oh, ow) = check_shapes(input, weights, bias, &spec)?;
    let cols = im2col(input, &spec, (oh, ow));
    let co = spec.out_channels;
    let mut out = Vec::with_capacity(oh * ow * co);
    for _ in 0..oh * ow {
        out.extend(bias.data().iter().map(|b| b.to_f64()));
    }
    let w = weights.to_f64_vec();
    gemm(
        Mat::new(&cols, oh * ow, spec.patch_len()),
        Mat::new(&w, spec.patch_len(), co),
        1.0,
        &mut out,
    );
    let output = Tensor::from_f64_vec(&[oh, ow, co], out)?;
    let record = OpRecord::Conv(ConvRecord {
        spec,
        input: input.clone(),
        weights: weights.clone(),
        out_dims: (oh, ow),
    });
    Ok((output, record))
}

pub(crate) fn conv2d_backward<T: Real>(
    rec: ConvRecord<T>,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    let ConvRecord {
        spec,
        input,
        weights,
        out_dims: (oh, ow),
    } = rec;
    let co = spec.out_channels;
    upstream.expect_shape(&[oh, ow, co])?;
    let k = spec.patch_len();
    let dy = upstream.to_f64_vec();
    let cols = im2col(&input, &spec, (oh, ow));

    let mut dw = vec![0.0; k * co];
    gemm(
        Mat::new(&cols, oh * ow, k).t(),
        Mat::new(&dy, oh * ow, co),
        0.0,
        &mut dw,
    );

    let mut db = vec![0.0; co];
    for cell in dy.chunks_exact(co) {
        for (acc, g) in db.iter_mut().zip(cell) {
            *acc += g;
        }
    }

    let w = weights.to_f64_vec();
    let mut dcols = vec![0.0; oh * ow * k];
    gemm(
        Mat::new(&dy, oh * ow, co),
        Mat::new(&w, k, co).t(),
        0.0,
        &mut dcols,
    );
    let dx = col2im(&dcols, &spec, input.hwc()?, (oh, ow));

    Ok(Gradients {
        input: Tensor::from_f64_vec(input.shape(), dx)?,
        params: vec![
            Tensor::from_f64_vec(&spec.weight_shape(), dw)?,
            Tensor::from_f64_vec(&[co], db)?,
        ],
    })
}
