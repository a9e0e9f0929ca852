//! Camera point spread function with per-camera sub-pixel displacement.
//!
//! Camera `k` sees `g^k_t(x, y) = sum_{a,b} h(a, b) F_t(x + dx_k - a, y + dy_k - b)`
//! where `F_t` is the bilinear interpolant of frame `t` with half-sample
//! mirror extension. The fractional part of the displacement is folded into
//! the kernel, so each camera reduces to a list of integer taps.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{add_noise, check_volume_matches, reflect, CodedOperator, MeasurementTensor, VideoVolume};
use crate::codes::ExposureCodeSet;
use crate::error::{dim_err, Error, Result};
use crate::operator::LinearOperator;

/// Normalised 2D blur window with odd width and height.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Weights in row-major order, row `b + height/2`, column `a + width/2`.
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "kernel support {width}x{height} must be odd"
            )));
        }
        if weights.len() != width * height {
            return dim_err("kernel weight count does not match its support");
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("kernel weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("kernel weights sum to {sum}, not 1")));
        }
        Ok(Self { width, height, weights })
    }

    pub fn delta() -> Self {
        Self {
            width: 1,
            height: 1,
            weights: vec![1.0],
        }
    }

    pub fn boxed(size: usize) -> Result<Self> {
        let n = size * size;
        Self::new(size, size, vec![1.0 / n as f64; n])
    }

    pub fn gaussian(size: usize, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::InvalidConfig("gaussian std must be > 0".into()));
        }
        let r = (size / 2) as f64;
        let mut w: Vec<f64> = (0..size * size)
            .map(|i| {
                let (a, b) = ((i % size) as f64 - r, (i / size) as f64 - r);
                (-(a * a + b * b) / (2.0 * std * std)).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Self::new(size, size, w)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `h(a, b)` for `a` in `-width/2..=width/2`, `b` likewise.
    pub fn weight(&self, a: isize, b: isize) -> f64 {
        let (rw, rh) = ((self.width / 2) as isize, (self.height / 2) as isize);
        if a.abs() > rw || b.abs() > rh {
            return 0.0;
        }
        self.weights[((b + rh) as usize) * self.width + (a + rw) as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsfModel {
    pub kernel: Kernel,
    /// `(dx_k, dy_k)` in pixels, one per camera.
    pub displacements: Vec<(f64, f64)>,
}

impl PsfModel {
    pub fn new(kernel: Kernel, displacements: Vec<(f64, f64)>) -> Result<Self> {
        if displacements.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidConfig("displacements must be finite".into()));
        }
        Ok(Self { kernel, displacements })
    }

    /// Delta kernel with zero displacement for `cameras` cameras.
    pub fn identity(cameras: usize) -> Self {
        Self {
            kernel: Kernel::delta(),
            displacements: vec![(0.0, 0.0); cameras],
        }
    }

    /// Integer taps `(ox, oy, w)` with `g(x, y) = sum w f(x + ox, y + oy)`.
    pub fn taps(&self, camera: usize) -> Result<Vec<(isize, isize, f64)>> {
        let &(dx, dy) = self.displacements.get(camera).ok_or(Error::IndexOutOfRange {
            what: "camera",
            index: camera,
            limit: self.displacements.len(),
        })?;
        let (ix, fx) = (dx.floor() as isize, dx - dx.floor());
        let (iy, fy) = (dy.floor() as isize, dy - dy.floor());
        let (rw, rh) = ((self.kernel.width / 2) as isize, (self.kernel.height / 2) as isize);
        let mut acc: BTreeMap<(isize, isize), f64> = BTreeMap::new();
        for b in -rh..=rh {
            for a in -rw..=rw {
                let h = self.kernel.weight(a, b);
                if h == 0.0 {
                    continue;
                }
                for (sx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    for (sy, wy) in [(0, 1.0 - fy), (1, fy)] {
                        let w = h * wx * wy;
                        if w != 0.0 {
                            *acc.entry((ix - a + sx, iy - b + sy)).or_insert(0.0) += w;
                        }
                    }
                }
            }
        }
        Ok(acc.into_iter().map(|((ox, oy), w)| (ox, oy, w)).collect())
    }
}

/// `y = B H f`: per-camera blur then coded temporal integration.
#[derive(Clone, Debug)]
pub struct PsfOperator {
    coded: CodedOperator,
    width: usize,
    height: usize,
    taps: Vec<Vec<(isize, isize, f64)>>,
}

impl PsfOperator {
    pub fn new(codes: &ExposureCodeSet, psf: &PsfModel) -> Result<Self> {
        if psf.displacements.len() != codes.cameras() {
            return dim_err(format!(
                "PSF has {} displacements for {} cameras",
                psf.displacements.len(),
                codes.cameras()
            ));
        }
        let taps = (0..codes.cameras()).map(|k| psf.taps(k)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            coded: CodedOperator::new(codes),
            width: codes.width(),
            height: codes.height(),
            taps,
        })
    }

    #[inline]
    fn source(&self, x: usize, y: usize, ox: isize, oy: isize) -> usize {
        let u = reflect(x as isize + ox, self.width);
        let v = reflect(y as isize + oy, self.height);
        v * self.width + u
    }
}

impl LinearOperator for PsfOperator {
    fn input_len(&self) -> usize {
        self.coded.input_len()
    }
    fn output_len(&self) -> usize {
        self.coded.output_len()
    }
    fn apply(&self, f: &[f64], out: &mut [f64]) {
        let (k_n, t_n) = (self.coded.cameras(), self.coded.frames());
        let mut g = vec![0.0; t_n];
        for y in 0..self.height {
            for x in 0..self.width {
                let j = y * self.width + x;
                let block = self.coded.block(j);
                for k in 0..k_n {
                    g.fill(0.0);
                    for &(ox, oy, w) in &self.taps[k] {
                        let src = self.source(x, y, ox, oy) * t_n;
                        for (gt, ft) in g.iter_mut().zip(&f[src..src + t_n]) {
                            *gt += w * ft;
                        }
                    }
                    out[j * k_n + k] = block[k * t_n..(k + 1) * t_n].iter().zip(&g).map(|(b, gt)| b * gt).sum();
                }
            }
        }
    }
    fn adjoint(&self, yv: &[f64], out: &mut [f64]) {
        let (k_n, t_n) = (self.coded.cameras(), self.coded.frames());
        out.fill(0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let j = y * self.width + x;
                let block = self.coded.block(j);
                for k in 0..k_n {
                    let yk = yv[j * k_n + k];
                    if yk == 0.0 {
                        continue;
                    }
                    let row = &block[k * t_n..(k + 1) * t_n];
                    for &(ox, oy, w) in &self.taps[k] {
                        let dst = self.source(x, y, ox, oy) * t_n;
                        for (o, b) in out[dst..dst + t_n].iter_mut().zip(row) {
                            *o += w * yk * b;
                        }
                    }
                }
            }
        }
    }
}

/// Blurred and displaced volume `g^k` seen by camera `k`.
pub fn apply_psf_forward(video: &VideoVolume, psf: &PsfModel, camera: usize) -> Result<VideoVolume> {
    let taps = psf.taps(camera)?;
    let (t_n, nx, ny) = video.dims();
    let mut out = VideoVolume::zeros(t_n, nx, ny);
    for y in 0..ny {
        for x in 0..nx {
            for &(ox, oy, w) in &taps {
                let u = reflect(x as isize + ox, nx);
                let v = reflect(y as isize + oy, ny);
                for t in 0..t_n {
                    let i = out.index(t, x, y);
                    out.as_mut_slice()[i] += w * video.get(t, u, v);
                }
            }
        }
    }
    Ok(out)
}

pub fn acquire_with_psf(
    video: &VideoVolume,
    codes: &ExposureCodeSet,
    psf: &PsfModel,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<MeasurementTensor> {
    check_volume_matches(video, codes)?;
    let op = PsfOperator::new(codes, psf)?;
    let mut values = op.apply_vec(video.as_slice());
    add_noise(&mut values, noise_sigma, noise_seed)?;
    MeasurementTensor::new(codes.cameras(), codes.width(), codes.height(), values, noise_sigma)
}

/// `H^T B^T y`.
pub fn apply_a_psf_adjoint(codes: &ExposureCodeSet, psf: &PsfModel, y: &[f64]) -> Result<Vec<f64>> {
    let op = PsfOperator::new(codes, psf)?;
    if y.len() != op.output_len() {
        return dim_err(format!(
            "measurement vector has length {}, expected {}",
            y.len(),
            op.output_len()
        ));
    }
    Ok(op.adjoint_vec(y))
}

/// Dense `B * H` built from explicit convolution and coding matrices.
///
/// `g` is stacked per camera: index `((k * P + j) * T + t)`.
pub fn build_dense_a_psf(codes: &ExposureCodeSet, psf: &PsfModel) -> Result<DMatrix<f64>> {
    let (k_n, t_n, nx, ny) = (codes.cameras(), codes.frames(), codes.width(), codes.height());
    let p = nx * ny;
    let cols = t_n * p;
    if cols > super::DENSE_COLUMN_CAP {
        return Err(Error::SizeCap {
            what: "dense matrix columns",
            needed: cols as u128,
            cap: super::DENSE_COLUMN_CAP as u128,
        });
    }
    if psf.displacements.len() != k_n {
        return dim_err("PSF camera count does not match codes");
    }
    let mut h = DMatrix::zeros(k_n * t_n * p, cols);
    for k in 0..k_n {
        for &(ox, oy, w) in &psf.taps(k)? {
            for y in 0..ny {
                for x in 0..nx {
                    let src = reflect(y as isize + oy, ny) * nx + reflect(x as isize + ox, nx);
                    for t in 0..t_n {
                        h[((k * p + y * nx + x) * t_n + t, src * t_n + t)] += w;
                    }
                }
            }
        }
    }
    let mut b = DMatrix::zeros(k_n * p, k_n * t_n * p);
    for y in 0..ny {
        for x in 0..nx {
            let j = y * nx + x;
            for k in 0..k_n {
                for (t, &bit) in codes.code_at(k, x, y)?.iter().enumerate() {
                    b[(j * k_n + k, (k * p + j) * t_n + t)] = f64::from(bit);
                }
            }
        }
    }
    Ok(b * h)
}
