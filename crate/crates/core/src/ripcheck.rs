//! Empirical isometry constants of measurement matrices.
//!
//! Sampled estimates draw random `S`-sparse vectors and track the extremes
//! of `||A v||^2 / ||v||^2`; they can only miss extremes, so a sampled
//! `delta_hat` is a lower bound on the true constant. Exhaustive evaluation
//! takes the extreme eigenvalues of every `S x S` Gram submatrix and is exact
//! up to floating point.
//!
//! Code-derived matrices always use the signed `{-1, +1} / sqrt(K')` form:
//! a `{0, 1}` matrix has nonzero mean and cannot satisfy a symmetric
//! two-sided bound.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codes::{to_signed, ExposureCodeSet, Scheme};
use crate::error::{Error, Result};
use crate::forward::DENSE_COLUMN_CAP;
use crate::operator::LinearOperator;
use crate::rng::{derive_seed, stream};
use crate::transforms::{AnalysisOperator, Dft3};

/// Default cap on the number of supports visited by [`exhaustive_isometry`].
pub const SUPPORT_CAP: u128 = 1_000_000;

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsometryMode {
    Canonical,
    Basis,
    Generalized,
}

impl IsometryMode {
    pub fn name(self) -> &'static str {
        match self {
            IsometryMode::Canonical => "canonical",
            IsometryMode::Basis => "basis",
            IsometryMode::Generalized => "generalized",
        }
    }
}

/// Sparsity basis for [`estimate_isometry`] and [`exhaustive_isometry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    Canonical,
    /// Unitary 3D DFT over a `frames x width x height` volume.
    Dft3 {
        frames: usize,
        width: usize,
        height: usize,
    },
}

impl Basis {
    fn mode(self) -> IsometryMode {
        match self {
            Basis::Canonical => IsometryMode::Canonical,
            Basis::Dft3 { .. } => IsometryMode::Basis,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub mode: IsometryMode,
    pub order: usize,
    /// Rows `M` and columns `N` of the matrix.
    pub rows: usize,
    pub cols: usize,
    /// Trials evaluated (sampled) or supports visited (exhaustive).
    pub trials: usize,
    /// Samples dropped because the normalising quantity vanished.
    pub skipped: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub delta_hat: f64,
    pub exhaustive: bool,
}

fn delta_of(min: f64, max: f64) -> f64 {
    (1.0 - min).max(max - 1.0).max(0.0)
}

#[derive(Clone, Copy)]
struct Acc {
    min: f64,
    max: f64,
    sum: f64,
    n: usize,
    skipped: usize,
}

impl Acc {
    fn new() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            sum: 0.0,
            n: 0,
            skipped: 0,
        }
    }
    fn push(&mut self, r: f64) {
        self.min = self.min.min(r);
        self.max = self.max.max(r);
        self.sum += r;
        self.n += 1;
    }
    fn merge(mut self, o: Acc) -> Acc {
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
        self.sum += o.sum;
        self.n += o.n;
        self.skipped += o.skipped;
        self
    }
    fn report(self, mode: IsometryMode, order: usize, rows: usize, cols: usize, exhaustive: bool) -> IsometryReport {
        let (min, max) = if self.n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (self.min, self.max)
        };
        IsometryReport {
            mode,
            order,
            rows,
            cols,
            trials: self.n,
            skipped: self.skipped,
            min_ratio: min,
            max_ratio: max,
            mean_ratio: if self.n == 0 {
                f64::NAN
            } else {
                self.sum / self.n as f64
            },
            delta_hat: if self.n == 0 { f64::NAN } else { delta_of(min, max) },
            exhaustive,
        }
    }
}

/// Runs `trials` independent samples in fixed-size chunks, each chunk with
/// its own derived seed, so the result does not depend on thread count.
fn sample_chunks(trials: usize, seed: u64, f: impl Fn(&mut rand_chacha::ChaCha8Rng, &mut Acc) + Sync) -> Acc {
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = stream(derive_seed(seed, &[c as u64]));
            let mut acc = Acc::new();
            let n = CHUNK.min(trials - c * CHUNK);
            for _ in 0..n {
                f(&mut r, &mut acc);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::new(), Acc::merge)
}

/// Dense `+-1/sqrt(M)` matrix.
pub fn rademacher_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut bits = crate::rng::BitStream::new(seed);
    let s = 1.0 / (m as f64).sqrt();
    DMatrix::from_fn(m, n, |_, _| if bits.next_bit() == 1 { s } else { -s })
}

/// Dense signed measurement matrix, rows `((v Nx + u) K' + k)`, columns
/// `((v Nx + u) T + t)`.
pub fn signed_dense(codes: &ExposureCodeSet, include_dc: bool) -> Result<DMatrix<f64>> {
    let s = to_signed(codes, include_dc);
    let (kp, t_n, nx, ny) = (s.rows(), s.frames(), s.width(), s.height());
    let cols = t_n * nx * ny;
    if cols > DENSE_COLUMN_CAP {
        return Err(Error::SizeCap {
            what: "dense matrix columns",
            needed: cols as u128,
            cap: DENSE_COLUMN_CAP as u128,
        });
    }
    let mut m = DMatrix::zeros(kp * nx * ny, cols);
    for v in 0..ny {
        for u in 0..nx {
            let p = v * nx + u;
            for k in 0..kp {
                for (t, &x) in s.row(k, u, v).iter().enumerate() {
                    m[(p * kp + k, p * t_n + t)] = x;
                }
            }
        }
    }
    Ok(m)
}

fn check_order(s: usize, n: usize) -> Result<()> {
    if s == 0 || s > n {
        return Err(Error::InvalidConfig(format!("sparsity order {s} must lie in 1..={n}")));
    }
    Ok(())
}

/// Columns of `A Psi^*` for the given basis, as complex vectors.
fn basis_columns(a: &DMatrix<f64>, basis: Basis) -> Result<Vec<Vec<Complex64>>> {
    let n = a.ncols();
    match basis {
        Basis::Canonical => Ok((0..n)
            .map(|j| a.column(j).iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect()),
        Basis::Dft3 { frames, width, height } => {
            let dft = Dft3::new(frames, width, height);
            if dft.len() != n {
                return Err(Error::Dimension(format!(
                    "basis has {} elements, matrix has {n} columns",
                    dft.len()
                )));
            }
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            Ok((0..n)
                .map(|j| {
                    e.fill(Complex64::new(0.0, 0.0));
                    e[j] = Complex64::new(1.0, 0.0);
                    dft.inverse_in_place(&mut e);
                    (0..a.nrows())
                        .map(|i| a.row(i).iter().zip(&e).map(|(&x, z)| z * x).sum())
                        .collect()
                })
                .collect())
        }
    }
}

/// Sampled isometry extremes of `A` on `S`-sparse vectors in `basis`.
///
/// Coefficients are i.i.d. Gaussian (complex Gaussian in the DFT basis) on
/// a uniformly random support.
pub fn estimate_isometry(a: &DMatrix<f64>, basis: Basis, s: usize, trials: usize, seed: u64) -> Result<IsometryReport> {
    let n = a.ncols();
    check_order(s, n)?;
    let cols = basis_columns(a, basis)?;
    let complex = matches!(basis, Basis::Dft3 { .. });
    let m = a.nrows();
    let acc = sample_chunks(trials, seed, |r, acc| {
        let support = sample(r, n, s).into_vec();
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        let mut norm = 0.0;
        for &j in &support {
            let re: f64 = StandardNormal.sample(r);
            let im: f64 = if complex { StandardNormal.sample(r) } else { 0.0 };
            let c = Complex64::new(re, im);
            norm += c.norm_sqr();
            for (yi, aij) in y.iter_mut().zip(&cols[j]) {
                *yi += aij * c;
            }
        }
        if norm == 0.0 {
            acc.skipped += 1;
            return;
        }
        acc.push(y.iter().map(|z| z.norm_sqr()).sum::<f64>() / norm);
    });
    Ok(acc.report(basis.mode(), s, m, n, false))
}

/// Signed-code version of [`estimate_isometry`].
pub fn estimate_isometry_codes(
    codes: &ExposureCodeSet,
    include_dc: bool,
    basis: Basis,
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<IsometryReport> {
    estimate_isometry(&signed_dense(codes, include_dc)?, basis, s, trials, seed)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    c
}

/// Advances `idx` to the next `k`-combination of `0..n` in lexicographic
/// order; false once exhausted.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn gram_extremes(cols: &[Vec<Complex64>], support: &[usize], complex: bool) -> (f64, f64) {
    let s = support.len();
    if complex {
        let g = DMatrix::from_fn(s, s, |i, j| {
            cols[support[i]]
                .iter()
                .zip(&cols[support[j]])
                .map(|(a, b)| a.conj() * b)
                .sum::<Complex64>()
        });
        let ev = SymmetricEigen::new(g).eigenvalues;
        (ev.min(), ev.max())
    } else {
        let g = DMatrix::from_fn(s, s, |i, j| {
            cols[support[i]]
                .iter()
                .zip(&cols[support[j]])
                .map(|(a, b)| a.re * b.re)
                .sum::<f64>()
        });
        let ev = SymmetricEigen::new(g).eigenvalues;
        (ev.min(), ev.max())
    }
}

/// Exact `delta_S` by enumerating every support of size `S`.
pub fn exhaustive_isometry(a: &DMatrix<f64>, basis: Basis, s: usize) -> Result<IsometryReport> {
    exhaustive_isometry_capped(a, basis, s, SUPPORT_CAP)
}

pub fn exhaustive_isometry_capped(a: &DMatrix<f64>, basis: Basis, s: usize, cap: u128) -> Result<IsometryReport> {
    let n = a.ncols();
    check_order(s, n)?;
    let count = binomial(n, s);
    if count > cap {
        return Err(Error::SizeCap {
            what: "supports",
            needed: count,
            cap,
        });
    }
    let cols = basis_columns(a, basis)?;
    let complex = matches!(basis, Basis::Dft3 { .. });
    // split the enumeration by leading index
    let acc = (0..=n - s)
        .into_par_iter()
        .map(|first| {
            let mut acc = Acc::new();
            let mut rest: Vec<usize> = (first + 1..first + s).collect();
            let mut support = vec![0; s];
            loop {
                support[0] = first;
                support[1..].copy_from_slice(&rest);
                let (lo, hi) = gram_extremes(&cols, &support, complex);
                acc.min = acc.min.min(lo);
                acc.max = acc.max.max(hi);
                acc.n += 1;
                if rest.is_empty() || !next_rest(&mut rest, first + 1, n) {
                    break;
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::new(), Acc::merge);
    let mut rep = acc.report(basis.mode(), s, a.nrows(), n, true);
    rep.mean_ratio = f64::NAN;
    Ok(rep)
}

/// Next combination of `rest.len()` indices from `lo..n`.
fn next_rest(rest: &mut [usize], lo: usize, n: usize) -> bool {
    let mut shifted: Vec<usize> = rest.iter().map(|&i| i - lo).collect();
    let more = next_combination(&mut shifted, n - lo);
    if more {
        for (r, s) in rest.iter_mut().zip(shifted) {
            *r = s + lo;
        }
    }
    more
}

/// Ratio `||A f||^2 / ||Theta f||^2` over volumes built from a random
/// linear ramp plus `S` single-sample bumps. Always non-exhaustive.
///
/// `S = 0` leaves only ramps and constants, most of which `Theta`
/// annihilates; such samples are skipped and counted.
pub fn estimate_generalized_isometry(
    a: &DMatrix<f64>,
    dims: (usize, usize, usize),
    s: usize,
    trials: usize,
    seed: u64,
) -> Result<IsometryReport> {
    let (t_n, nx, ny) = dims;
    let n = t_n * nx * ny;
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "matrix has {} columns, volume has {n} samples",
            a.ncols()
        )));
    }
    if n > DENSE_COLUMN_CAP {
        return Err(Error::SizeCap {
            what: "generalized isometry samples",
            needed: n as u128,
            cap: DENSE_COLUMN_CAP as u128,
        });
    }
    if s > n {
        return Err(Error::InvalidConfig(format!("order {s} exceeds {n} samples")));
    }
    let theta = AnalysisOperator::stack(t_n, nx, ny);
    let acc = sample_chunks(trials, seed, |r, acc| {
        let (ga, gb, c): (f64, f64, f64) = (r.random(), r.random(), StandardNormal.sample(r));
        // ramps appear in half of the samples
        let ramp = r.random_bool(0.5);
        let mut f = vec![c; n];
        if ramp {
            for v in 0..ny {
                for u in 0..nx {
                    for t in 0..t_n {
                        f[(v * nx + u) * t_n + t] += ga * u as f64 + gb * v as f64;
                    }
                }
            }
        }
        for j in sample(r, n, s).into_vec() {
            let w: f64 = StandardNormal.sample(r);
            f[j] += w;
        }
        let tf = theta.apply_vec(&f);
        let den: f64 = tf.iter().map(|x| x * x).sum();
        if den <= 1e-24 * f.iter().map(|x| x * x).sum::<f64>() {
            acc.skipped += 1;
            return;
        }
        let af = a * nalgebra::DVector::from_vec(f);
        acc.push(af.norm_squared() / den);
    });
    Ok(acc.report(IsometryMode::Generalized, s, a.nrows(), n, false))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyRow {
    pub scheme: Scheme,
    pub cameras: usize,
    pub report: IsometryReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyConfig {
    pub order: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub cameras: Vec<usize>,
    /// Code draws per `(scheme, K)`; their trials are pooled.
    pub code_draws: usize,
    pub trials: usize,
    pub seed: u64,
}

/// `delta_hat_S` in the DFT basis against `M = K Nx Ny`, one row per `(scheme, K)`.
pub fn measurement_sufficiency_curve(schemes: &[Scheme], cfg: &SufficiencyConfig) -> Result<Vec<SufficiencyRow>> {
    let basis = Basis::Dft3 {
        frames: cfg.frames,
        width: cfg.width,
        height: cfg.height,
    };
    let mut rows = Vec::new();
    for &scheme in schemes {
        for &k in &cfg.cameras {
            let mut pooled: Option<IsometryReport> = None;
            for d in 0..cfg.code_draws.max(1) {
                let code_seed = derive_seed(cfg.seed, &[u64::from(scheme.tag()), k as u64, d as u64]);
                let codes = ExposureCodeSet::generate(scheme, k, cfg.frames, cfg.width, cfg.height, code_seed)?;
                let trial_seed = derive_seed(code_seed, &[0x7121]);
                let rep = estimate_isometry_codes(&codes, false, basis, cfg.order, cfg.trials, trial_seed)?;
                pooled = Some(match pooled {
                    None => rep,
                    Some(p) => pool(p, rep),
                });
            }
            rows.push(SufficiencyRow {
                scheme,
                cameras: k,
                report: pooled.expect("at least one draw"),
            });
        }
    }
    Ok(rows)
}

fn pool(a: IsometryReport, b: IsometryReport) -> IsometryReport {
    let n = a.trials + b.trials;
    let min = a.min_ratio.min(b.min_ratio);
    let max = a.max_ratio.max(b.max_ratio);
    IsometryReport {
        trials: n,
        skipped: a.skipped + b.skipped,
        min_ratio: min,
        max_ratio: max,
        mean_ratio: (a.mean_ratio * a.trials as f64 + b.mean_ratio * b.trials as f64) / n as f64,
        delta_hat: delta_of(min, max),
        ..a
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "scheme",
    "mode",
    "S",
    "M",
    "N",
    "trials",
    "min_ratio",
    "max_ratio",
    "delta_hat",
    "exhaustive",
];

/// Writes one CSV row per report; `label` fills the scheme column.
pub fn write_isometry_csv<W: Write>(rows: &[(String, IsometryReport)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for (label, r) in rows {
        out.write_record([
            label.clone(),
            r.mode.name().to_string(),
            r.order.to_string(),
            r.rows.to_string(),
            r.cols.to_string(),
            r.trials.to_string(),
            r.min_ratio.to_string(),
            r.max_ratio.to_string(),
            r.delta_hat.to_string(),
            r.exhaustive.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn sufficiency_csv<W: Write>(rows: &[SufficiencyRow], w: W) -> Result<()> {
    let labelled: Vec<(String, IsometryReport)> = rows
        .iter()
        .map(|r| (r.scheme.name().to_string(), r.report.clone()))
        .collect();
    write_isometry_csv(&labelled, w)
}
