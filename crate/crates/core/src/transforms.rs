//! Sparsifying transforms: the unitary 3D DFT and the analysis operator
//! `Theta = [Theta1; Theta2]`.
//!
//! `Theta1` is the per-frame 5-point Laplacian. `Theta2` takes the forward
//! temporal difference `d_t = f_{t+1} - f_t` (with `d_{T-1} = 0`) and sums its
//! two spatial forward differences into one plane. All spatial stencils use
//! half-sample mirror extension, so a forward difference at the last
//! row or column is zero.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{dim_err, Result};
use crate::forward::{reflect, VideoVolume};
use crate::operator::LinearOperator;

/// Complex samples on a `T x Nx x Ny` grid, same index order as [`VideoVolume`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn zeros(frames: usize, width: usize, height: usize) -> Self {
        Self {
            frames,
            width,
            height,
            data: vec![Complex64::new(0.0, 0.0); frames * width * height],
        }
    }

    #[inline]
    pub fn index(&self, t: usize, u: usize, v: usize) -> usize {
        (v * self.width + u) * self.frames + t
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real parts as a volume; also returns the largest `|imag|`.
    pub fn real_part(&self) -> (VideoVolume, f64) {
        let max_imag = self.data.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        let data = self.data.iter().map(|c| c.re).collect();
        let vol = VideoVolume::new(self.frames, self.width, self.height, data).expect("dimensions are consistent");
        (vol, max_imag)
    }
}

impl From<&VideoVolume> for ComplexVolume {
    fn from(v: &VideoVolume) -> Self {
        let (frames, width, height) = v.dims();
        Self {
            frames,
            width,
            height,
            data: v.as_slice().iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }
}

/// Cached plans for the unitary 3D DFT over `(t, u, v)`.
pub struct Dft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
    scale: f64,
}

impl Dft3 {
    pub fn new(frames: usize, width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        let dims = [frames, width, height];
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Self {
            dims,
            forward,
            inverse,
            scale: 1.0 / ((frames * width * height) as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [t_n, nx, _] = self.dims;
        let strides = [1, t_n, t_n * nx];
        let total = self.len();
        for axis in 0..3 {
            let (n, stride) = (self.dims[axis], strides[axis]);
            if n == 1 {
                continue;
            }
            let plan = &plans[axis];
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for start in 0..total {
                // first element of each line along `axis`
                if (start / stride) % n != 0 {
                    continue;
                }
                for (i, l) in line.iter_mut().enumerate() {
                    *l = data[start + i * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (i, l) in line.iter().enumerate() {
                    data[start + i * stride] = *l;
                }
            }
        }
        data.iter_mut().for_each(|c| *c *= self.scale);
    }

    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len());
        self.run(data, &self.forward);
    }

    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len());
        self.run(data, &self.inverse);
    }
}

/// Unitary 3D DFT `x = Psi f`.
pub fn dft3_forward(volume: &VideoVolume) -> ComplexVolume {
    let (t, nx, ny) = volume.dims();
    let mut c = ComplexVolume::from(volume);
    Dft3::new(t, nx, ny).forward_in_place(&mut c.data);
    c
}

/// `f = Psi^* x`.
pub fn dft3_inverse(coefficients: &ComplexVolume) -> ComplexVolume {
    let mut c = coefficients.clone();
    Dft3::new(c.frames, c.width, c.height).inverse_in_place(&mut c.data);
    c
}

/// Which rows of `Theta` an [`AnalysisOperator`] applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaPart {
    Laplacian,
    TemporalGradient,
    Stack,
}

/// Matrix-free `Theta1`, `Theta2` or the stacked `Theta`.
#[derive(Clone, Copy, Debug)]
pub struct AnalysisOperator {
    frames: usize,
    width: usize,
    height: usize,
    part: ThetaPart,
}

impl AnalysisOperator {
    pub fn new(frames: usize, width: usize, height: usize, part: ThetaPart) -> Self {
        Self {
            frames,
            width,
            height,
            part,
        }
    }

    pub fn stack(frames: usize, width: usize, height: usize) -> Self {
        Self::new(frames, width, height, ThetaPart::Stack)
    }

    fn n(&self) -> usize {
        self.frames * self.width * self.height
    }

    #[inline]
    fn idx(&self, t: usize, u: usize, v: usize) -> usize {
        (v * self.width + u) * self.frames + t
    }

    #[inline]
    fn neighbours(&self, u: usize, v: usize) -> [(usize, usize); 4] {
        let (ui, vi) = (u as isize, v as isize);
        [
            (reflect(ui + 1, self.width), v),
            (reflect(ui - 1, self.width), v),
            (u, reflect(vi + 1, self.height)),
            (u, reflect(vi - 1, self.height)),
        ]
    }

    fn laplacian(&self, f: &[f64], out: &mut [f64]) {
        for v in 0..self.height {
            for u in 0..self.width {
                let nb = self.neighbours(u, v);
                for t in 0..self.frames {
                    let mut s = -4.0 * f[self.idx(t, u, v)];
                    for &(a, b) in &nb {
                        s += f[self.idx(t, a, b)];
                    }
                    out[self.idx(t, u, v)] = s;
                }
            }
        }
    }

    fn laplacian_adjoint(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for v in 0..self.height {
            for u in 0..self.width {
                let nb = self.neighbours(u, v);
                for t in 0..self.frames {
                    let zi = z[self.idx(t, u, v)];
                    out[self.idx(t, u, v)] -= 4.0 * zi;
                    for &(a, b) in &nb {
                        out[self.idx(t, a, b)] += zi;
                    }
                }
            }
        }
    }

    fn temporal_gradient(&self, f: &[f64], out: &mut [f64]) {
        let t_n = self.frames;
        let mut d = vec![0.0; f.len()];
        for p in 0..self.width * self.height {
            for t in 0..t_n.saturating_sub(1) {
                d[p * t_n + t] = f[p * t_n + t + 1] - f[p * t_n + t];
            }
        }
        for v in 0..self.height {
            for u in 0..self.width {
                let ur = reflect(u as isize + 1, self.width);
                let vr = reflect(v as isize + 1, self.height);
                for t in 0..t_n {
                    out[self.idx(t, u, v)] = d[self.idx(t, ur, v)] + d[self.idx(t, u, vr)] - 2.0 * d[self.idx(t, u, v)];
                }
            }
        }
    }

    fn temporal_gradient_adjoint(&self, z: &[f64], out: &mut [f64]) {
        let t_n = self.frames;
        let mut dt = vec![0.0; z.len()];
        for v in 0..self.height {
            for u in 0..self.width {
                let ur = reflect(u as isize + 1, self.width);
                let vr = reflect(v as isize + 1, self.height);
                for t in 0..t_n {
                    let zi = z[self.idx(t, u, v)];
                    dt[self.idx(t, ur, v)] += zi;
                    dt[self.idx(t, u, vr)] += zi;
                    dt[self.idx(t, u, v)] -= 2.0 * zi;
                }
            }
        }
        for p in 0..self.width * self.height {
            let s = &dt[p * t_n..(p + 1) * t_n];
            let o = &mut out[p * t_n..(p + 1) * t_n];
            for t in 0..t_n {
                let mut acc = 0.0;
                if t >= 1 {
                    acc += s[t - 1];
                }
                if t + 1 < t_n {
                    acc -= s[t];
                }
                o[t] = acc;
            }
        }
    }
}

impl LinearOperator for AnalysisOperator {
    fn input_len(&self) -> usize {
        self.n()
    }
    fn output_len(&self) -> usize {
        match self.part {
            ThetaPart::Stack => 2 * self.n(),
            _ => self.n(),
        }
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self.part {
            ThetaPart::Laplacian => self.laplacian(x, out),
            ThetaPart::TemporalGradient => self.temporal_gradient(x, out),
            ThetaPart::Stack => {
                let (a, b) = out.split_at_mut(self.n());
                self.laplacian(x, a);
                self.temporal_gradient(x, b);
            }
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        match self.part {
            ThetaPart::Laplacian => self.laplacian_adjoint(y, out),
            ThetaPart::TemporalGradient => self.temporal_gradient_adjoint(y, out),
            ThetaPart::Stack => {
                let n = self.n();
                let mut tmp = vec![0.0; n];
                self.laplacian_adjoint(&y[..n], out);
                self.temporal_gradient_adjoint(&y[n..], &mut tmp);
                out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
            }
        }
    }
}

/// `Theta f`: plane 1 is `Theta1 f`, plane 2 is `Theta2 f`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisStack {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl AnalysisStack {
    pub fn laplacian_plane(&self) -> &[f64] {
        &self.data[..self.data.len() / 2]
    }
    pub fn temporal_plane(&self) -> &[f64] {
        &self.data[self.data.len() / 2..]
    }
    /// Entries with magnitude above `eps`.
    pub fn count_nonzero(&self, eps: f64) -> usize {
        self.data.iter().filter(|x| x.abs() > eps).count()
    }
}

fn apply_part(volume: &VideoVolume, part: ThetaPart) -> Vec<f64> {
    let (t, nx, ny) = volume.dims();
    AnalysisOperator::new(t, nx, ny, part).apply_vec(volume.as_slice())
}

pub fn theta1_apply(volume: &VideoVolume) -> VideoVolume {
    let (t, nx, ny) = volume.dims();
    VideoVolume::new(t, nx, ny, apply_part(volume, ThetaPart::Laplacian)).expect("same dims")
}

pub fn theta2_apply(volume: &VideoVolume) -> VideoVolume {
    let (t, nx, ny) = volume.dims();
    VideoVolume::new(t, nx, ny, apply_part(volume, ThetaPart::TemporalGradient)).expect("same dims")
}

pub fn theta_apply(volume: &VideoVolume) -> AnalysisStack {
    let (frames, width, height) = volume.dims();
    AnalysisStack {
        frames,
        width,
        height,
        data: apply_part(volume, ThetaPart::Stack),
    }
}

pub fn theta_adjoint(stack: &AnalysisStack) -> Result<VideoVolume> {
    let n = stack.frames * stack.width * stack.height;
    if stack.data.len() != 2 * n {
        return dim_err(format!(
            "analysis stack has {} entries, expected {}",
            stack.data.len(),
            2 * n
        ));
    }
    let op = AnalysisOperator::stack(stack.frames, stack.width, stack.height);
    VideoVolume::new(stack.frames, stack.width, stack.height, op.adjoint_vec(&stack.data))
}
