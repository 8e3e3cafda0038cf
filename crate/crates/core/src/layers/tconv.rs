//! Fractionally strided (transposed) convolution expressed as a product with
//! an explicit sparse matrix whose nonzeros are kernel elements.
//!
//! For an input of `in_h × in_w × c_in` and a `k × k × c_in × c_out` kernel
//! with stride `s`, the output is `out_h × out_w × c_out` with
//! `out = (in − 1)·s + k` per axis. Row `r` of the matrix indexes a flattened
//! output cell, column `q` a flattened input cell, and entry `(r, q)` is the
//! kernel weight through which input `q` reaches output `r`.

use std::sync::Arc;

use super::record::{Gradients, OpRecord};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Compressed-row sparse matrix. Entries are ordered by `(row, col)` with no
/// duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T = f32> {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_index: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    /// Builds a matrix from `(row, col, value)` triples sorted by `(row, col)`.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_index = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::shape(format!(
                    "entry ({r}, {c}) outside {rows}×{cols}"
                )));
            }
            if last.is_some_and(|prev| prev >= (r, c)) {
                return Err(Error::InvalidArgument(
                    "sparse entries must be strictly sorted by (row, col)".into(),
                ));
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_index.push(c as u32);
            values.push(v);
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_index,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(row, col, value)` in `(row, col)` order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_offsets[r]..self.row_offsets[r + 1])
                .map(move |e| (r, self.col_index[e] as usize, self.values[e]))
        })
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.entries() {
            d[r * self.cols + c] = v.to_f64();
        }
        d
    }

    /// `self · x`, accumulated in `f64`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let span = self.row_offsets[r]..self.row_offsets[r + 1];
                self.col_index[span.clone()]
                    .iter()
                    .zip(&self.values[span])
                    .map(|(&c, v)| v.to_f64() * x[c as usize])
                    .sum()
            })
            .collect()
    }

    /// `selfᵀ · y`.
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &g) in y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let span = self.row_offsets[r]..self.row_offsets[r + 1];
            for (&c, v) in self.col_index[span.clone()].iter().zip(&self.values[span]) {
                out[c as usize] += v.to_f64() * g;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl TConvGeometry {
    pub fn out_dims(&self) -> (usize, usize) {
        (
            (self.in_h - 1) * self.stride + self.kernel,
            (self.in_w - 1) * self.stride + self.kernel,
        )
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let (h, w) = self.out_dims();
        [h, w, self.out_channels]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_h, self.in_w, self.in_channels]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.kernel,
            self.kernel,
            self.in_channels,
            self.out_channels,
        ]
    }
}

/// The scatter matrix of one transposed convolution, plus its geometry.
#[derive(Clone, Debug)]
pub struct TConvMatrix<T = f32> {
    pub geometry: TConvGeometry,
    pub matrix: SparseMatrix<T>,
}

/// Input rows/cols `i` with `o = i·stride + tap`, `0 ≤ tap < kernel`.
fn sources(o: usize, kernel: usize, stride: usize, extent: usize) -> std::ops::Range<usize> {
    let lo = if o + 1 > kernel {
        (o + 1 - kernel).div_ceil(stride)
    } else {
        0
    };
    let hi = (o / stride + 1).min(extent);
    lo..hi.max(lo)
}

/// Builds the sparse matrix of a transposed convolution with the given
/// `k × k × c_in × c_out` kernel over an `in_h × in_w` input.
pub fn tconv_sparse_matrix<T: Real>(
    weights: &Tensor<T>,
    (in_h, in_w): (usize, usize),
    stride: usize,
) -> Result<TConvMatrix<T>> {
    let [k, k2, c_in, c_out] = weights.shape() else {
        return Err(Error::shape(format!(
            "transposed-conv kernel must be k×k×c_in×c_out, got {:?}",
            weights.shape()
        )));
    };
    let (k, c_in, c_out) = (*k, *c_in, *c_out);
    if k != *k2 {
        return Err(Error::shape("transposed-conv kernel must be square"));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if in_h == 0 || in_w == 0 {
        return Err(Error::shape("transposed-conv input must be non-empty"));
    }
    let geometry = TConvGeometry {
        in_h,
        in_w,
        in_channels: c_in,
        out_channels: c_out,
        kernel: k,
        stride,
    };
    let (out_h, out_w) = geometry.out_dims();
    let rows = out_h * out_w * c_out;
    let cols = in_h * in_w * c_in;
    if u32::try_from(cols).is_err() {
        return Err(Error::shape("transposed-conv input too large"));
    }

    let w = weights.data();
    let nnz = k * k * in_h * in_w * c_in * c_out;
    let mut row_offsets = Vec::with_capacity(rows + 1);
    let mut col_index = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_offsets.push(0);
    for oy in 0..out_h {
        let ys = sources(oy, k, stride, in_h);
        for ox in 0..out_w {
            let xs = sources(ox, k, stride, in_w);
            for co in 0..c_out {
                for iy in ys.clone() {
                    let ky = oy - iy * stride;
                    for ix in xs.clone() {
                        let kx = ox - ix * stride;
                        let col = (iy * in_w + ix) * c_in;
                        let tap = (ky * k + kx) * c_in;
                        for ci in 0..c_in {
                            col_index.push((col + ci) as u32);
                            values.push(w[(tap + ci) * c_out + co]);
                        }
                    }
                }
                row_offsets.push(col_index.len());
            }
        }
    }
    debug_assert_eq!(values.len(), nnz);
    Ok(TConvMatrix {
        geometry,
        matrix: SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_index,
            values,
        },
    })
}

#[derive(Clone, Debug)]
pub struct TConvRecord<T: Real> {
    pub(crate) input: Tensor<T>,
    pub(crate) matrix: Arc<TConvMatrix<T>>,
}

/// `reshape(matrix · flatten(input)) + bias`.
pub fn tconv_forward<T: Real>(
    input: &Tensor<T>,
    matrix: &Arc<TConvMatrix<T>>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, OpRecord<T>)> {
    let g = matrix.geometry;
    input.expect_shape(&g.input_shape())?;
    bias.expect_shape(&[g.out_channels])?;
    if matrix.matrix.cols() != input.len() {
        return Err(Error::shape("sparse matrix columns do not match the input"));
    }
    let mut out = matrix.matrix.mul_vec(&input.to_f64_vec());
    for cell in out.chunks_exact_mut(g.out_channels) {
        for (v, b) in cell.iter_mut().zip(bias.data()) {
            *v += b.to_f64();
        }
    }
    let output = Tensor::from_f64_vec(&g.output_shape(), out)?;
    let record = OpRecord::TConv(TConvRecord {
        input: input.clone(),
        matrix: Arc::clone(matrix),
    });
    Ok((output, record))
}

pub(crate) fn tconv_backward<T: Real>(
    rec: TConvRecord<T>,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    let g = rec.matrix.geometry;
    upstream.expect_shape(&g.output_shape())?;
    let dy = upstream.to_f64_vec();
    let dx = rec.matrix.matrix.transpose_mul_vec(&dy);

    let (k, s, c_in, c_out) = (g.kernel, g.stride, g.in_channels, g.out_channels);
    let (_, out_w) = g.out_dims();
    let x = rec.input.to_f64_vec();
    let mut dw = vec![0.0; k * k * c_in * c_out];
    for iy in 0..g.in_h {
        for ix in 0..g.in_w {
            let xin = &x[(iy * g.in_w + ix) * c_in..][..c_in];
            for ky in 0..k {
                for kx in 0..k {
                    let o = ((iy * s + ky) * out_w + ix * s + kx) * c_out;
                    let gout = &dy[o..o + c_out];
                    let tap = (ky * k + kx) * c_in;
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let row = &mut dw[(tap + ci) * c_out..][..c_out];
                        for (acc, gv) in row.iter_mut().zip(gout) {
                            *acc += xv * gv;
                        }
                    }
                }
            }
        }
    }
    let mut db = vec![0.0; c_out];
    for cell in dy.chunks_exact(c_out) {
        for (acc, v) in db.iter_mut().zip(cell) {
            *acc += v;
        }
    }
    Ok(Gradients {
        input: Tensor::from_f64_vec(&g.input_shape(), dx)?,
        params: vec![
            Tensor::from_f64_vec(&g.weight_shape(), dw)?,
            Tensor::from_f64_vec(&[c_out], db)?,
        ],
    })
}

#[derive(Clone, Debug)]
pub struct CropRecord {
    pub(crate) input_shape: [usize; 3],
    pub(crate) border: usize,
}

/// Removes `border` cells from each side of an h×w×c map.
pub fn crop_forward<T: Real>(input: &Tensor<T>, border: usize) -> Result<(Tensor<T>, OpRecord<T>)> {
    let (h, w, c) = input.hwc()?;
    if 2 * border >= h || 2 * border >= w {
        return Err(Error::shape(format!("cannot crop {border} from {h}×{w}")));
    }
    let (oh, ow) = (h - 2 * border, w - 2 * border);
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in border..h - border {
        let start = (y * w + border) * c;
        out.extend_from_slice(&input.data()[start..start + ow * c]);
    }
    let record = OpRecord::Crop(CropRecord {
        input_shape: [h, w, c],
        border,
    });
    Ok((Tensor::from_vec(&[oh, ow, c], out)?, record))
}

pub(crate) fn crop_backward<T: Real>(
    rec: CropRecord,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    let [h, w, c] = rec.input_shape;
    let b = rec.border;
    let ow = w - 2 * b;
    upstream.expect_shape(&[h - 2 * b, ow, c])?;
    let mut dx = Tensor::<T>::zeros(&rec.input_shape)?;
    for (row, src) in upstream.data().chunks_exact(ow * c).enumerate() {
        let start = ((row + b) * w + b) * c;
        dx.data_mut()[start..start + ow * c].copy_from_slice(src);
    }
    Ok(Gradients {
        input: dx,
        params: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::record::backward;
    use crate::rng::RngState;

    /// Dense scatter-accumulate transposed convolution.
    pub(crate) fn scatter_tconv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        bias: &[f64],
        stride: usize,
    ) -> Tensor<f64> {
        let (h, wd, ci) = x.hwc().unwrap();
        let (k, co) = (w.shape()[0], w.shape()[3]);
        let (oh, ow) = ((h - 1) * stride + k, (wd - 1) * stride + k);
        let mut out = vec![0.0; oh * ow * co];
        for cell in out.chunks_mut(co) {
            cell.copy_from_slice(bias);
        }
        for iy in 0..h {
            for ix in 0..wd {
                for c in 0..ci {
                    let v = x.data()[(iy * wd + ix) * ci + c];
                    for ky in 0..k {
                        for kx in 0..k {
                            for o in 0..co {
                                out[((iy * stride + ky) * ow + ix * stride + kx) * co + o] +=
                                    v * w.data()[((ky * k + kx) * ci + c) * co + o];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[oh, ow, co], out).unwrap()
    }

    fn random(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn two_by_two_stride_two_matrix() {
        let mut rng = RngState::new(1).unwrap();
        let w = random(&[2, 2, 1, 1], &mut rng);
        let m = tconv_sparse_matrix(&w, (2, 2), 2).unwrap().matrix;
        assert_eq!((m.rows(), m.cols()), (16, 4));
        let mut per_col = [0usize; 4];
        for (_, c, _) in m.entries() {
            per_col[c] += 1;
        }
        assert_eq!(per_col, [4; 4]);

        // same matrix from a scatter of unit inputs
        let dense = m.to_dense();
        for q in 0..4 {
            let mut e = vec![0.0; 4];
            e[q] = 1.0;
            let col = scatter_tconv(&Tensor::from_vec(&[2, 2, 1], e).unwrap(), &w, &[0.0], 2);
            for r in 0..16 {
                assert_eq!(dense[r * 4 + q], col.data()[r]);
            }
        }
    }

    #[test]
    fn single_cell_input_is_flattened_kernel() {
        let mut rng = RngState::new(2).unwrap();
        let w = random(&[3, 3, 1, 2], &mut rng);
        let m = tconv_sparse_matrix(&w, (1, 1), 2).unwrap().matrix;
        assert_eq!((m.rows(), m.cols()), (18, 1));
        let column: Vec<f64> = m.entries().map(|(_, _, v)| v).collect();
        assert_eq!(column, w.data());
    }

    #[test]
    fn zero_kernel_gives_zero_product() {
        let w = Tensor::<f64>::zeros(&[4, 4, 2, 3]).unwrap();
        let tm = Arc::new(tconv_sparse_matrix(&w, (3, 2), 2).unwrap());
        let mut rng = RngState::new(3).unwrap();
        let x = random(&[3, 2, 2], &mut rng);
        let (y, _) = tconv_forward(&x, &tm, &Tensor::zeros(&[3]).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_site_scatter() {
        let w = Tensor::<f32>::from_vec(&[2, 2, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tm = Arc::new(tconv_sparse_matrix(&w, (1, 1), 2).unwrap());
        let x = Tensor::from_vec(&[1, 1, 1], vec![2.5]).unwrap();
        let (y, _) = tconv_forward(&x, &tm, &Tensor::zeros(&[1]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn non_overlapping_blocks() {
        let mut rng = RngState::new(4).unwrap();
        let w = random(&[2, 2, 1, 1], &mut rng);
        let x = random(&[3, 3, 1], &mut rng);
        let tm = Arc::new(tconv_sparse_matrix(&w, (3, 3), 2).unwrap());
        let (y, _) = tconv_forward(&x, &tm, &Tensor::zeros(&[1]).unwrap()).unwrap();
        for iy in 0..3 {
            for ix in 0..3 {
                for ky in 0..2 {
                    for kx in 0..2 {
                        let got = y.data()[(2 * iy + ky) * 6 + 2 * ix + kx];
                        let want = x.data()[iy * 3 + ix] * w.data()[ky * 2 + kx];
                        assert!((got - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = RngState::new(5).unwrap();
        let w = random(&[4, 4, 2, 3], &mut rng);
        let tm = Arc::new(tconv_sparse_matrix(&w, (2, 2), 2).unwrap());
        let b = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let (y, _) = tconv_forward(&Tensor::zeros(&[2, 2, 2]).unwrap(), &tm, &b).unwrap();
        for cell in y.data().chunks(3) {
            assert_eq!(cell, b.data());
        }
    }

    #[test]
    fn matches_scatter_oracle_randomized() {
        let mut rng = RngState::new(6).unwrap();
        for _ in 0..100 {
            let k = 1 + rng.below(4);
            let stride = 1 + rng.below(3);
            let (h, w) = (1 + rng.below(5), 1 + rng.below(5));
            let (ci, co) = (1 + rng.below(3), 1 + rng.below(3));
            let wt = random(&[k, k, ci, co], &mut rng);
            let x = random(&[h, w, ci], &mut rng);
            let b = random(&[co], &mut rng);
            let tm = Arc::new(tconv_sparse_matrix(&wt, (h, w), stride).unwrap());
            assert_eq!(tm.matrix.nnz(), k * k * h * w * ci * co);
            let (y, _) = tconv_forward(&x, &tm, &b).unwrap();
            let expected = scatter_tconv(&x, &wt, b.data(), stride);
            assert_eq!(y.shape(), expected.shape());
            assert!(y.max_abs_diff(&expected) < 1e-6);
        }
    }

    #[test]
    fn entries_are_strictly_sorted() {
        let mut rng = RngState::new(7).unwrap();
        let w = random(&[4, 4, 2, 2], &mut rng);
        let m = tconv_sparse_matrix(&w, (3, 3), 2).unwrap().matrix;
        let keys: Vec<(usize, usize)> = m.entries().map(|(r, c, _)| (r, c)).collect();
        assert!(keys.windows(2).all(|p| p[0] < p[1]));
        let triplets: Vec<_> = m.entries().collect();
        assert_eq!(
            SparseMatrix::from_triplets(m.rows(), m.cols(), &triplets).unwrap(),
            m
        );
    }

    #[test]
    fn input_mismatch_rejected() {
        let w = Tensor::<f32>::zeros(&[2, 2, 1, 1]).unwrap();
        let tm = Arc::new(tconv_sparse_matrix(&w, (2, 2), 2).unwrap());
        let x = Tensor::zeros(&[3, 2, 1]).unwrap();
        assert!(tconv_forward(&x, &tm, &Tensor::zeros(&[1]).unwrap()).is_err());
    }

    #[test]
    fn crop_then_pad() {
        let x = Tensor::<f32>::from_vec(&[4, 4, 1], (0..16).map(|v| v as f32).collect()).unwrap();
        let (y, rec) = crop_forward(&x, 1).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 9.0, 10.0]);
        let g = backward(rec, &Tensor::full(&[2, 2, 1], 1.0).unwrap()).unwrap();
        let ones: Vec<usize> = (0..16).filter(|&i| g.input.data()[i] == 1.0).collect();
        assert_eq!(ones, vec![5, 6, 9, 10]);
    }
}
