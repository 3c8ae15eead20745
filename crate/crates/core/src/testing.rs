use nalgebra::DMatrix;
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::htensor::dense_unfold;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dense_norm(x: &ArrayD<f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn unfolding_singular_values(x: &ArrayD<f64>, rows: &[usize]) -> Vec<f64> {
    let cols: Vec<usize> = (0..x.ndim()).filter(|m| !rows.contains(m)).collect();
    let m: DMatrix<f64> = dense_unfold(x, rows, &cols);
    crate::linalg::singular_values(&m)
}
