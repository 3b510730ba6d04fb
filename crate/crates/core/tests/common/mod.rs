#![allow(dead_code)]

use cvbell::model::{DensityMatrix, Mat2};
use num_complex::Complex64;
use rand::Rng;

/// Random single-mode state on `span{|0>, |1>}`.
pub fn random_qubit<R: Rng>(rng: &mut R) -> Mat2 {
    let a: f64 = rng.gen();
    let radius = (a * (1.0 - a)).sqrt() * rng.gen::<f64>();
    let phase = rng.gen::<f64>() * std::f64::consts::TAU;
    let c = Complex64::from_polar(radius, phase);
    [[Complex64::new(a, 0.0), c], [c.conj(), Complex64::new(1.0 - a, 0.0)]]
}

/// Convex mixture of `terms` random product states on `n` modes.
pub fn random_separable<R: Rng>(rng: &mut R, n: usize, terms: usize) -> DensityMatrix {
    let mut weights: Vec<f64> = (0..terms).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let parts: Vec<(f64, DensityMatrix)> = weights
        .into_iter()
        .map(|w| {
            let sites: Vec<Mat2> = (0..n).map(|_| random_qubit(rng)).collect();
            (w, DensityMatrix::product(&sites).unwrap())
        })
        .collect();
    DensityMatrix::mixture(&parts).unwrap()
}

/// Random angles per mode.
pub fn random_angles<R: Rng>(rng: &mut R, n: usize) -> cvbell::model::AngleConfig {
    let tau = std::f64::consts::TAU;
    let theta = (0..n).map(|_| rng.gen::<f64>() * tau).collect();
    let theta_prime = (0..n).map(|_| rng.gen::<f64>() * tau).collect();
    cvbell::model::AngleConfig::new(theta, theta_prime).unwrap()
}
