use super::record::{Gradients, OpRecord};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct DenseRecord<T: Real> {
    pub(crate) input: Tensor<T>,
    pub(crate) weights: Tensor<T>,
}

fn check_dense<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize)> {
    let [p, q] = weights.shape() else {
        return Err(Error::shape(format!(
            "dense weights must be p×q, got {:?}",
            weights.shape()
        )));
    };
    if input.shape() != [*p] || bias.shape() != [*q] {
        return Err(Error::shape(format!(
            "dense {p}→{q} got input {:?} and bias {:?}",
            input.shape(),
            bias.shape()
        )));
    }
    Ok((*p, *q))
}

/// `inputᵀ · weights + bias`.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, OpRecord<T>)> {
    let (p, q) = check_dense(input, weights, bias)?;
    let w = weights.data();
    let mut out: Vec<f64> = bias.data().iter().map(|b| b.to_f64()).collect();
    for (i, x) in input.data().iter().enumerate() {
        let x = x.to_f64();
        for (acc, wij) in out.iter_mut().zip(&w[i * q..(i + 1) * q]) {
            *acc += x * wij.to_f64();
        }
    }
    debug_assert_eq!(input.len(), p);
    let record = OpRecord::Dense(DenseRecord {
        input: input.clone(),
        weights: weights.clone(),
    });
    Ok((Tensor::from_f64_vec(&[q], out)?, record))
}

pub(crate) fn dense_backward<T: Real>(
    rec: DenseRecord<T>,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    let (p, q) = (rec.weights.shape()[0], rec.weights.shape()[1]);
    upstream.expect_shape(&[q])?;
    let g = upstream.to_f64_vec();
    let x = rec.input.to_f64_vec();
    let w = rec.weights.data();

    let dx: Vec<f64> = (0..p)
        .map(|i| {
            w[i * q..(i + 1) * q]
                .iter()
                .zip(&g)
                .map(|(wij, gj)| wij.to_f64() * gj)
                .sum()
        })
        .collect();
    let mut dw = Vec::with_capacity(p * q);
    for xi in &x {
        dw.extend(g.iter().map(|gj| xi * gj));
    }
    Ok(Gradients {
        input: Tensor::from_f64_vec(&[p], dx)?,
        params: vec![
            Tensor::from_f64_vec(&[p, q], dw)?,
            Tensor::from_f64_vec(&[q], g)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::record::backward;
    use crate::rng::RngState;

    fn identity(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[n, n]).unwrap();
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn identity_weights_pass_through() {
        let x = Tensor::from_vec(&[3], vec![0.5, -2.0, 7.0]).unwrap();
        let (y, rec) = dense_forward(&x, &identity(3), &Tensor::zeros(&[3]).unwrap()).unwrap();
        assert_eq!(y, x);
        let up = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(backward(rec, &up).unwrap().input, up);
    }

    #[test]
    fn zero_input_gives_bias() {
        let b = Tensor::from_vec(&[2], vec![0.25, -4.0]).unwrap();
        let w = Tensor::full(&[4, 2], 3.0).unwrap();
        let (y, _) = dense_forward(&Tensor::zeros(&[4]).unwrap(), &w, &b).unwrap();
        assert_eq!(y, b);
    }

    #[test]
    fn random_five_to_three_matches_loop() {
        let mut rng = RngState::new(21).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..15).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (y, _) = dense_forward(
            &Tensor::<f32>::from_f64_vec(&[5], x.clone()).unwrap(),
            &Tensor::from_f64_vec(&[5, 3], w.clone()).unwrap(),
            &Tensor::from_f64_vec(&[3], b.clone()).unwrap(),
        )
        .unwrap();
        for j in 0..3 {
            let mut acc = b[j] as f32;
            for i in 0..5 {
                acc += x[i] as f32 * w[i * 3 + j] as f32;
            }
            assert!((y.data()[j] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn length_mismatch() {
        let w = Tensor::<f32>::zeros(&[4, 2]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(
            dense_forward(&Tensor::zeros(&[3]).unwrap(), &w, &b),
            Err(Error::Shape(_))
        ));
    }
}
