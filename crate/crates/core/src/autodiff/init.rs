//! Weight initialization schemes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernels::dot;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) — the default for linear layers.
    FanInUniform,
    /// Orthonormal rows via modified Gram-Schmidt; square matrices only.
    /// Used for recurrent weights.
    Orthogonal,
    Zeros,
}

pub(crate) fn init_matrix(rng: &mut ChaCha8Rng, out: usize, inn: usize, init: WeightInit) -> Tensor {
    match init {
        WeightInit::Zeros => Tensor::zeros(&[out, inn]),
        WeightInit::FanInUniform => {
            let bound = 1.0 / (inn as f64).sqrt();
            let data = (0..out * inn).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(out, inn, data).expect("sized")
        }
        WeightInit::Orthogonal => {
            assert_eq!(out, inn, "orthogonal init needs a square matrix");
            let n = out;
            let mut rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            for i in 0..n {
                for j in 0..i {
                    let prev = rows[j].clone();
                    let proj = dot(&prev, &rows[i]);
                    for (v, p) in rows[i].iter_mut().zip(&prev) {
                        *v -= proj * p;
                    }
                }
                let norm = dot(&rows[i], &rows[i]).sqrt();
                assert!(norm > 1e-10, "degenerate draw in orthogonal init");
                for v in rows[i].iter_mut() {
                    *v /= norm;
                }
            }
            Tensor::matrix(n, n, rows.into_iter().flatten().collect()).expect("sized")
        }
    }
}
