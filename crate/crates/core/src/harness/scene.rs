//! Scripted test scenes.

use rand::seq::index::sample;
use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::VideoVolume;
use crate::rng;
use crate::transforms::{dft3_inverse, ComplexVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneKind {
    /// The whole frame is the linear field `a u + b v + c`, constant in time.
    StaticLinearPatch,
    /// A linear-intensity rectangle translating over a flat background.
    MovingLinearPatch,
    /// Two rectangles moving in opposite horizontal directions; the second
    /// occludes the first.
    TwoObjectOcclusion,
    /// Real volume with exactly `sparsity` conjugate pairs of nonzero 3D DFT
    /// coefficients. Not clipped.
    FourierSparse { sparsity: usize },
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::StaticLinearPatch => "static_linear_patch",
            SceneKind::MovingLinearPatch => "moving_linear_patch",
            SceneKind::TwoObjectOcclusion => "two_object_occlusion",
            SceneKind::FourierSparse { .. } => "fourier_sparse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    #[serde(flatten)]
    pub kind: SceneKind,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Per-frame translation `(du, dv)` in pixels.
    pub motion: (f64, f64),
    /// Intensity slope along `u`.
    pub slope_u: f64,
    /// Intensity slope along `v`.
    pub slope_v: f64,
    pub offset: f64,
    pub background: f64,
    /// Patch origin and size at `t = 0`, in pixels.
    pub patch: (usize, usize, usize, usize),
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self::moving_patch(8, 16, 16)
    }
}

impl SyntheticSceneSpec {
    /// The scripted desk-scale scene.
    pub fn moving_patch(frames: usize, width: usize, height: usize) -> Self {
        Self {
            kind: SceneKind::MovingLinearPatch,
            frames,
            width,
            height,
            motion: (0.75, 0.5),
            slope_u: 6.0,
            slope_v: 4.0,
            offset: 150.0,
            background: 40.0,
            patch: (
                width * 3 / 16,
                height * 3 / 16,
                (width * 7 / 16).max(1),
                (height * 7 / 16).max(1),
            ),
            seed: 0,
        }
    }

    pub fn with_kind(mut self, kind: SceneKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("scene dimensions must be positive".into()));
        }
        let (du, dv) = self.motion;
        if !(du.abs() <= 2.0 && dv.abs() <= 2.0) {
            return Err(Error::InvalidConfig(format!(
                "motion ({du}, {dv}) exceeds 2 pixels per frame"
            )));
        }
        if let SceneKind::FourierSparse { sparsity } = self.kind {
            let pairs = conjugate_pairs(self.frames, self.width, self.height).len();
            if sparsity > pairs {
                return Err(Error::InvalidConfig(format!(
                    "sparsity {sparsity} exceeds the {pairs} available coefficient pairs"
                )));
            }
        }
        let (_, _, w, h) = self.patch;
        if w == 0 || h == 0 {
            return Err(Error::InvalidConfig("patch must be non-empty".into()));
        }
        Ok(())
    }
}

fn clip(x: f64) -> f64 {
    x.clamp(0.0, 255.0)
}

/// Samples an integer-grid image at a real position with bilinear weights.
/// Outside the grid the image takes `outside`.
fn bilinear(img: impl Fn(isize, isize) -> Option<f64>, x: f64, y: f64, outside: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |a, b| img(a, b).unwrap_or(outside);
    let mut s = 0.0;
    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            let w = wx * wy;
            if w != 0.0 {
                s += w * at(x0 + dx, y0 + dy);
            }
        }
    }
    s
}

struct Patch {
    u0: isize,
    v0: isize,
    w: isize,
    h: isize,
    a: f64,
    b: f64,
    c: f64,
}

impl Patch {
    fn texture(&self, u: isize, v: isize) -> Option<f64> {
        let (du, dv) = (u - self.u0, v - self.v0);
        (du >= 0 && dv >= 0 && du < self.w && dv < self.h).then_some(self.a * du as f64 + self.b * dv as f64 + self.c)
    }

    fn alpha(&self, u: isize, v: isize) -> Option<f64> {
        self.texture(u, v).map(|_| 1.0)
    }
}

pub fn synth_scene(spec: &SyntheticSceneSpec) -> Result<VideoVolume> {
    spec.validate()?;
    let (t_n, nx, ny) = (spec.frames, spec.width, spec.height);
    let (pu, pv, pw, ph) = spec.patch;
    let main = Patch {
        u0: pu as isize,
        v0: pv as isize,
        w: pw as isize,
        h: ph as isize,
        a: spec.slope_u,
        b: spec.slope_v,
        c: spec.offset,
    };
    let (du, dv) = spec.motion;
    let bg = spec.background;
    Ok(match spec.kind {
        SceneKind::StaticLinearPatch => VideoVolume::from_fn(t_n, nx, ny, |_, u, v| {
            clip(spec.slope_u * u as f64 + spec.slope_v * v as f64 + spec.offset)
        }),
        SceneKind::MovingLinearPatch => VideoVolume::from_fn(t_n, nx, ny, |t, u, v| {
            let (x, y) = (u as f64 - t as f64 * du, v as f64 - t as f64 * dv);
            clip(bilinear(|a, b| main.texture(a, b), x, y, bg))
        }),
        SceneKind::TwoObjectOcclusion => {
            // front object: half-size, darker, travels the other way
            let front = Patch {
                u0: (nx as isize - pw as isize / 2 - pu as isize).max(0),
                v0: pv as isize + ph as isize / 4,
                w: (pw as isize / 2).max(1),
                h: (ph as isize / 2).max(1),
                a: -spec.slope_u / 2.0,
                b: spec.slope_v / 2.0,
                c: spec.offset * 0.5,
            };
            VideoVolume::from_fn(t_n, nx, ny, |t, u, v| {
                let (x, y) = (u as f64 - t as f64 * du, v as f64 - t as f64 * dv);
                let back = bilinear(|a, b| main.texture(a, b), x, y, bg);
                let xf = u as f64 + t as f64 * du;
                let alpha = bilinear(|a, b| front.alpha(a, b), xf, y, 0.0);
                let tex = bilinear(|a, b| front.texture(a, b), xf, y, 0.0);
                // premultiplied texture, so divide out coverage before blending
                let fg = if alpha > 0.0 { tex / alpha } else { 0.0 };
                clip(alpha * fg + (1.0 - alpha) * back)
            })
        }
        SceneKind::FourierSparse { sparsity } => fourier_sparse(t_n, nx, ny, sparsity, spec.seed),
    })
}

/// Linear indices `k` with a distinct conjugate partner `-k`, one per pair.
fn conjugate_pairs(t_n: usize, nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for v in 0..ny {
        for u in 0..nx {
            for t in 0..t_n {
                let k = (v * nx + u) * t_n + t;
                let (mt, mu, mv) = ((t_n - t) % t_n, (nx - u) % nx, (ny - v) % ny);
                let mk = (mv * nx + mu) * t_n + mt;
                if k < mk {
                    out.push((k, mk));
                }
            }
        }
    }
    out
}

fn fourier_sparse(t_n: usize, nx: usize, ny: usize, sparsity: usize, seed: u64) -> VideoVolume {
    let pairs = conjugate_pairs(t_n, nx, ny);
    let mut r = rng::stream(seed);
    let n = (t_n * nx * ny) as f64;
    let mut c = ComplexVolume::zeros(t_n, nx, ny);
    for i in sample(&mut r, pairs.len(), sparsity).into_vec() {
        let (k, mk) = pairs[i];
        let mag = 10.0 * n.sqrt() * r.random_range(0.5..1.0);
        let phase = r.random_range(0.0..std::f64::consts::TAU);
        let z = Complex64::from_polar(mag, phase);
        c.data[k] = z;
        c.data[mk] = z.conj();
    }
    dft3_inverse(&c).real_part().0
}
