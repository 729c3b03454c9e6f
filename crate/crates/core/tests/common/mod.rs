#![allow(dead_code)]

use mcbound::chain::{center_and_norms, FiniteChain, MatrixFunctionTable};
use mcbound::matrix::{CMatrix, HermitianMatrix, RectMatrix, C64};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense random kernel mixed with a cyclic shift, so it is irreducible and aperiodic.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> FiniteChain {
    let laziness: f64 = rng.random_range(0.2..0.8);
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = w.iter().sum();
        for j in 0..n {
            q[(i, j)] = (1.0 - laziness) * w[j] / s;
        }
        q[(i, (i + 1) % n)] += laziness;
    }
    FiniteChain::new(q).unwrap()
}

pub fn random_complex(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> HermitianMatrix {
    let a = random_complex(rng, d, d);
    HermitianMatrix::new((&a + a.adjoint()) * C64::new(0.5, 0.0)).unwrap()
}

pub fn random_rect(rng: &mut ChaCha8Rng, r: usize, c: usize) -> RectMatrix {
    RectMatrix::new(random_complex(rng, r, c)).unwrap()
}

pub fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> HermitianMatrix {
    let a = random_complex(rng, d, d);
    HermitianMatrix::new(&a * a.adjoint()).unwrap()
}

/// Random table centred under the chain's stationary law.
pub fn random_centered_table(rng: &mut ChaCha8Rng, chain: &FiniteChain, d: usize) -> MatrixFunctionTable {
    let raw = MatrixFunctionTable::new((0..chain.n_states()).map(|_| random_hermitian(rng, d)).collect()).unwrap();
    center_and_norms(&raw, chain, &[]).unwrap()
}

pub fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}
