#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    // Box-Muller keeps the oracle side free of the library's samplers
    DMatrix::from_fn(m, n, |_, _| {
        let (u1, u2): (f64, f64) = (r.random_range(1e-12..1.0), r.random());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() / (m as f64).sqrt()
    })
}

pub fn sparse_vector(n: usize, s: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut x = vec![0.0; n];
    let mut placed = 0;
    while placed < s {
        let i = r.random_range(0..n);
        if x[i] == 0.0 {
            let mag = r.random_range(0.5..2.0);
            x[i] = if r.random::<bool>() { mag } else { -mag };
            placed += 1;
        }
    }
    x
}

/// Dense tableau simplex with Bland's rule.
/// Solves `min c.z  s.t.  A z = b, z >= 0` with `b >= 0`; returns `None`
/// when infeasible.
pub fn simplex(a: &DMatrix<f64>, b: &[f64], c: &[f64]) -> Option<Vec<f64>> {
    let (m, n) = a.shape();
    const EPS: f64 = 1e-11;
    // phase one: artificials n..n+m
    let cols = n + m;
    let mut t = DMatrix::<f64>::zeros(m + 1, cols + 1);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, cols)] = b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut cost = vec![0.0; cols];
    cost[n..].iter_mut().for_each(|v| *v = 1.0);
    run_phase(&mut t, &mut basis, &cost, cols, EPS);
    let phase1: f64 = basis.iter().enumerate().map(|(i, &j)| cost[j] * t[(i, cols)]).sum();
    if phase1 > 1e-8 * (1.0 + b.iter().map(|v| v.abs()).sum::<f64>()) {
        return None;
    }
    // drive remaining artificials out of the basis where possible
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[(i, j)].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    // phase two: forbid artificials
    let mut cost2 = vec![0.0; cols];
    cost2[..n].copy_from_slice(c);
    for j in n..cols {
        if !basis.contains(&j) {
            for i in 0..=m {
                t[(i, j)] = 0.0;
            }
        }
    }
    run_phase(&mut t, &mut basis, &cost2, n, EPS);
    let mut z = vec![0.0; n];
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            z[j] = t[(i, cols)];
        }
    }
    Some(z)
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
    let (rows, cols) = t.shape();
    let p = t[(row, col)];
    for j in 0..cols {
        t[(row, j)] /= p;
    }
    for i in 0..rows {
        if i != row {
            let f = t[(i, col)];
            if f != 0.0 {
                for j in 0..cols {
                    let v = t[(row, j)];
                    t[(i, j)] -= f * v;
                }
            }
        }
    }
    basis[row] = col;
}

/// Minimises `cost` over the first `enter_limit` columns from the current basis.
fn run_phase(t: &mut DMatrix<f64>, basis: &mut [usize], cost: &[f64], enter_limit: usize, eps: f64) {
    let m = basis.len();
    let rhs = t.ncols() - 1;
    for _ in 0..100_000 {
        // reduced costs
        let entering = (0..enter_limit).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = (0..m).map(|i| cost[basis[i]] * t[(i, j)]).sum();
            cost[j] - z < -eps
        });
        let Some(j) = entering else { return };
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..m {
            let a = t[(i, j)];
            if a > eps {
                let ratio = t[(i, rhs)] / a;
                let better = match best {
                    None => true,
                    Some((r, _, bj)) => ratio < r - 1e-12 || (ratio <= r + 1e-12 && basis[i] < bj),
                };
                if better {
                    best = Some((ratio, i, basis[i]));
                }
            }
        }
        let Some((_, row, _)) = best else {
            panic!("unbounded linear program");
        };
        pivot(t, basis, row, j);
    }
    panic!("simplex did not terminate");
}

/// `min ||x||_1  s.t.  A x = y`, via `x = p - q` with `p, q >= 0`.
pub fn basis_pursuit(a: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut big = DMatrix::<f64>::zeros(m, 2 * n);
    let mut b = y.to_vec();
    for i in 0..m {
        let s = if y[i] < 0.0 { -1.0 } else { 1.0 };
        b[i] *= s;
        for j in 0..n {
            big[(i, j)] = s * a[(i, j)];
            big[(i, n + j)] = -s * a[(i, j)];
        }
    }
    let z = simplex(&big, &b, &vec![1.0; 2 * n]).expect("basis pursuit is feasible");
    (0..n).map(|j| z[j] - z[n + j]).collect()
}

pub fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
