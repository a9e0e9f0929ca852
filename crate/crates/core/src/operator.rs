//! Matrix-free linear maps with explicit adjoints.

use nalgebra::DMatrix;

use crate::rng;
use rand_distr::{Distribution, StandardNormal};

/// A real linear map `R^n -> R^m` together with its transpose.
pub trait LinearOperator: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    /// `out = A x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = A^T y`
    fn adjoint(&self, y: &[f64], out: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        self.apply(x, &mut out);
        out
    }

    fn adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_len()];
        self.adjoint(y, &mut out);
        out
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn input_len(&self) -> usize {
        (**self).input_len()
    }
    fn output_len(&self) -> usize {
        (**self).output_len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        (**self).adjoint(y, out)
    }
}

/// Dense matrix wrapper.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }
}

impl LinearOperator for DenseOperator {
    fn input_len(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_len(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.matrix.column(j).iter()) {
                *o += a * xj;
            }
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.matrix.column(j).iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }
}

/// Materialises an operator column by column. Small instances only.
pub fn to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let (m, n) = (op.output_len(), op.input_len());
    let mut mat = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        mat.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    mat
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest singular value by power iteration on `A^T A`.
pub fn operator_norm(op: &dyn LinearOperator, iters: usize, seed: u64) -> f64 {
    let n = op.input_len();
    if n == 0 || op.output_len() == 0 {
        return 0.0;
    }
    let mut r = rng::stream(seed);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut ax = vec![0.0; op.output_len()];
    let mut estimate = 0.0;
    for _ in 0..iters {
        let nx = norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        op.apply(&x, &mut ax);
        op.adjoint(&ax, &mut x);
        let next = norm2(&x).sqrt();
        if (next - estimate).abs() <= 1e-9 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}

/// Adjoint mismatch `|<Ax, y> - <x, A^T y>| / (|x| |y|)` for one random
/// Gaussian pair.
pub fn dot_test(op: &dyn LinearOperator, seed: u64) -> f64 {
    let mut r = rng::stream(seed);
    let x: Vec<f64> = (0..op.input_len()).map(|_| StandardNormal.sample(&mut r)).collect();
    let y: Vec<f64> = (0..op.output_len()).map(|_| StandardNormal.sample(&mut r)).collect();
    let ax = op.apply_vec(&x);
    let aty = op.adjoint_vec(&y);
    let lhs = dot(&ax, &y);
    let rhs = dot(&x, &aty);
    let scale = norm2(&x) * norm2(&y);
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_operator_matches_matrix() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let op = DenseOperator::new(m.clone());
        assert_eq!(op.apply_vec(&[1.0, 0.0, 2.0]), vec![7.0, 7.0]);
        assert_eq!(op.adjoint_vec(&[1.0, 1.0]), vec![0.0, 2.5, 7.0]);
        assert_eq!(to_dense(&op), m);
        assert!(dot_test(&op, 1) < 1e-14);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.5]));
        let n = operator_norm(&DenseOperator::new(m), 200, 4);
        assert!((n - 3.0).abs() < 1e-6);
    }
}
