#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nodewise::rng::{rng_from_seed, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> Rng {
    rng_from_seed(seed)
}

pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `AA'/p + I·floor`, well conditioned for moderate p.
pub fn random_spd(rng: &mut Rng, p: usize, floor: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, p, p);
    let m = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * floor;
    (&m + m.transpose()) * 0.5
}

/// Inverse by Gauss-Jordan elimination with partial pivoting; independent of
/// the library's Cholesky path.
pub fn naive_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::identity(p, p);
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let d = a[(col, col)];
        for j in 0..p {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..p {
            if i != col {
                let f = a[(i, col)];
                if f != 0.0 {
                    for j in 0..p {
                        a[(i, j)] -= f * a[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
