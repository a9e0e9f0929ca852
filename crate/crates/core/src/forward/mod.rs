//! The acquisition model `y = A f + n` and its adjoint.
//!
//! A video volume is a super-vector with each pixel's time series
//! contiguous: sample `(t, u, v)` lives at `((v * Nx + u) * T + t)`.
//! Measurements use the same idea with cameras innermost:
//! `((v * Nx + u) * K + k)`. With this ordering `A` is block diagonal with
//! one `K x T` block per pixel.

mod psf;

pub use psf::{
    acquire_with_psf, apply_a_psf_adjoint, apply_psf_forward, build_dense_a_psf, Kernel, PsfModel, PsfOperator,
};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::codes::{ExposureCodeSet, Scheme};
use crate::error::{dim_err, Error, Result};
use crate::operator::LinearOperator;
use crate::rng;

/// Column cap for dense matrix construction.
pub const DENSE_COLUMN_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoVolume {
    frames: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl VideoVolume {
    pub fn new(frames: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || width == 0 || height == 0 {
            return dim_err(format!(
                "volume dimensions must be positive ({frames}x{width}x{height})"
            ));
        }
        if data.len() != frames * width * height {
            return dim_err(format!(
                "volume data has {} samples, expected {}",
                data.len(),
                frames * width * height
            ));
        }
        Ok(Self {
            frames,
            width,
            height,
            data,
        })
    }

    pub fn zeros(frames: usize, width: usize, height: usize) -> Self {
        Self {
            frames,
            width,
            height,
            data: vec![0.0; frames * width * height],
        }
    }

    /// Builds a volume from `f(t, u, v)`.
    pub fn from_fn(frames: usize, width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(frames * width * height);
        for v in 0..height {
            for u in 0..width {
                for t in 0..frames {
                    data.push(f(t, u, v));
                }
            }
        }
        Self {
            frames,
            width,
            height,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.width, self.height)
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, t: usize, u: usize, v: usize) -> usize {
        (v * self.width + u) * self.frames + t
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, v: usize) -> f64 {
        self.data[self.index(t, u, v)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, u: usize, v: usize, value: f64) {
        let i = self.index(t, u, v);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Time series `f_{u,v}`.
    pub fn series(&self, u: usize, v: usize) -> &[f64] {
        let start = (v * self.width + u) * self.frames;
        &self.data[start..start + self.frames]
    }

    /// Frame `t` in row-major order (`v * width + u`).
    pub fn frame(&self, t: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for v in 0..self.height {
            for u in 0..self.width {
                out.push(self.get(t, u, v));
            }
        }
        out
    }

    /// Copies a `w x h` window with top-left pixel `(u0, v0)`.
    pub fn crop(&self, u0: usize, v0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || u0 + w > self.width || v0 + h > self.height {
            return dim_err("crop window outside volume");
        }
        Ok(Self::from_fn(self.frames, w, h, |t, u, v| self.get(t, u0 + u, v0 + v)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementTensor {
    cameras: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
    noise_sigma: f64,
}

impl MeasurementTensor {
    pub fn new(cameras: usize, width: usize, height: usize, values: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        if cameras == 0 || width == 0 || height == 0 {
            return dim_err("measurement dimensions must be positive");
        }
        if values.len() != cameras * width * height {
            return dim_err(format!(
                "measurement has {} values, expected {}",
                values.len(),
                cameras * width * height
            ));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise sigma {noise_sigma} must be >= 0")));
        }
        Ok(Self {
            cameras,
            width,
            height,
            values,
            noise_sigma,
        })
    }

    pub fn cameras(&self) -> usize {
        self.cameras
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, k: usize, u: usize, v: usize) -> usize {
        (v * self.width + u) * self.cameras + k
    }

    pub fn get(&self, k: usize, u: usize, v: usize) -> f64 {
        self.values[self.index(k, u, v)]
    }

    /// Measurements of the `w x h` window with top-left pixel `(u0, v0)`.
    pub fn crop(&self, u0: usize, v0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || u0 + w > self.width || v0 + h > self.height {
            return dim_err("crop window outside measurement");
        }
        let mut values = Vec::with_capacity(self.cameras * w * h);
        for v in v0..v0 + h {
            for u in u0..u0 + w {
                let start = self.index(0, u, v);
                values.extend_from_slice(&self.values[start..start + self.cameras]);
            }
        }
        Self::new(self.cameras, w, h, values, self.noise_sigma)
    }
}

/// Half-sample symmetric reflection of an index into `0..n`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Matrix-free block-diagonal measurement operator built from a code set.
#[derive(Clone, Debug)]
pub struct CodedOperator {
    cameras: usize,
    frames: usize,
    pixels: usize,
    shared: bool,
    blocks: Vec<f64>,
}

impl CodedOperator {
    pub fn new(codes: &ExposureCodeSet) -> Self {
        let (k, t) = (codes.cameras(), codes.frames());
        let shared = codes.scheme() == Scheme::FrameWise;
        let blocks = if shared {
            codes.pixel_block(0, 0)
        } else {
            let mut b = Vec::with_capacity(k * t * codes.pixels());
            for v in 0..codes.height() {
                for u in 0..codes.width() {
                    b.extend(codes.pixel_block(u, v));
                }
            }
            b
        };
        Self {
            cameras: k,
            frames: t,
            pixels: codes.pixels(),
            shared,
            blocks,
        }
    }

    pub fn cameras(&self) -> usize {
        self.cameras
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn pixels(&self) -> usize {
        self.pixels
    }

    /// Row-major `K x T` block of pixel `j`.
    #[inline]
    pub fn block(&self, j: usize) -> &[f64] {
        let size = self.cameras * self.frames;
        let start = if self.shared { 0 } else { j * size };
        &self.blocks[start..start + size]
    }
}

impl LinearOperator for CodedOperator {
    fn input_len(&self) -> usize {
        self.frames * self.pixels
    }
    fn output_len(&self) -> usize {
        self.cameras * self.pixels
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (k, t) = (self.cameras, self.frames);
        for j in 0..self.pixels {
            let b = self.block(j);
            let f = &x[j * t..(j + 1) * t];
            for (row, o) in out[j * k..(j + 1) * k].iter_mut().enumerate() {
                *o = b[row * t..(row + 1) * t].iter().zip(f).map(|(a, c)| a * c).sum();
            }
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        let (k, t) = (self.cameras, self.frames);
        for j in 0..self.pixels {
            let b = self.block(j);
            let o = &mut out[j * t..(j + 1) * t];
            o.fill(0.0);
            for (row, &yk) in y[j * k..(j + 1) * k].iter().enumerate() {
                if yk == 0.0 {
                    continue;
                }
                for (oi, bi) in o.iter_mut().zip(&b[row * t..(row + 1) * t]) {
                    *oi += bi * yk;
                }
            }
        }
    }
}

fn check_volume_len(codes: &ExposureCodeSet, len: usize) -> Result<()> {
    let n = codes.frames() * codes.pixels();
    if len != n {
        return dim_err(format!("volume vector has length {len}, codes expect {n}"));
    }
    Ok(())
}

fn check_measurement_len(codes: &ExposureCodeSet, len: usize) -> Result<()> {
    let m = codes.cameras() * codes.pixels();
    if len != m {
        return dim_err(format!("measurement vector has length {len}, codes expect {m}"));
    }
    Ok(())
}

pub(crate) fn check_volume_matches(video: &VideoVolume, codes: &ExposureCodeSet) -> Result<()> {
    if video.dims() != (codes.frames(), codes.width(), codes.height()) {
        return dim_err(format!(
            "video is {:?} (T, Nx, Ny) but codes are {:?}",
            video.dims(),
            (codes.frames(), codes.width(), codes.height())
        ));
    }
    Ok(())
}

/// Draws i.i.d. `N(0, sigma^2)` samples and adds them in place.
pub(crate) fn add_noise(values: &mut [f64], sigma: f64, seed: u64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "noise sigma {sigma} must be finite and >= 0"
        )));
    }
    if sigma > 0.0 {
        let mut r = rng::stream(seed);
        for v in values.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *v += sigma * z;
        }
    }
    Ok(())
}

/// Coded acquisition `y_k(u, v) = <b_k^{u,v}, f_{u,v}> + n`.
pub fn acquire(
    video: &VideoVolume,
    codes: &ExposureCodeSet,
    noise_sigma: f64,
    noise_seed: u64,
) -> Result<MeasurementTensor> {
    check_volume_matches(video, codes)?;
    let mut values = CodedOperator::new(codes).apply_vec(video.as_slice());
    add_noise(&mut values, noise_sigma, noise_seed)?;
    MeasurementTensor::new(codes.cameras(), codes.width(), codes.height(), values, noise_sigma)
}

/// Noise-free `A x`.
pub fn apply_a(codes: &ExposureCodeSet, x: &[f64]) -> Result<Vec<f64>> {
    check_volume_len(codes, x.len())?;
    Ok(CodedOperator::new(codes).apply_vec(x))
}

/// `A^T y`: `(A^T y)_{u,v} = sum_k y_k(u, v) b_k^{u,v}`.
pub fn apply_a_adjoint(codes: &ExposureCodeSet, y: &[f64]) -> Result<Vec<f64>> {
    check_measurement_len(codes, y.len())?;
    Ok(CodedOperator::new(codes).adjoint_vec(y))
}

/// Dense `(K Nx Ny) x (T Nx Ny)` measurement matrix.
pub fn build_dense_a(codes: &ExposureCodeSet) -> Result<DMatrix<f64>> {
    build_dense_a_capped(codes, DENSE_COLUMN_CAP)
}

pub fn build_dense_a_capped(codes: &ExposureCodeSet, column_cap: usize) -> Result<DMatrix<f64>> {
    let (k, t, nx, ny) = (codes.cameras(), codes.frames(), codes.width(), codes.height());
    let cols = t * nx * ny;
    if cols > column_cap {
        return Err(Error::SizeCap {
            what: "dense matrix columns",
            needed: cols as u128,
            cap: column_cap as u128,
        });
    }
    let mut a = DMatrix::zeros(k * nx * ny, cols);
    for v in 0..ny {
        for u in 0..nx {
            let j = v * nx + u;
            for kk in 0..k {
                let code = codes.code_at(kk, u, v)?;
                for (tt, &b) in code.iter().enumerate() {
                    a[(j * k + kk, j * t + tt)] = f64::from(b);
                }
            }
        }
    }
    Ok(a)
}
