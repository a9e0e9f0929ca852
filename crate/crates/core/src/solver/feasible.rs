//! Exact Euclidean projection onto `{f : ||A f - y||_2 <= r}` for block
//! diagonal `A`.
//!
//! With `A = diag(B_p)` and thin SVDs `B_p = U_p S_p V_p^T`, the projection
//! of `v` is `f(lambda) = argmin ||f - v||^2 + lambda ||A f - y||^2`, which
//! acts per singular direction:
//! `fhat_i = (vhat_i + lambda s_i yhat_i) / (1 + lambda s_i^2)`.
//! The single multiplier `lambda` solves the scalar secular equation
//! `||A f(lambda) - y|| = r`. When no `lambda` reaches the ball (the data has
//! a component outside the range of `A` at least as large as `r`) the limit
//! `lambda -> inf`, the least-squares fit nearest to `v`, is returned.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::codes::{ExposureCodeSet, Scheme};
use crate::error::{dim_err, Result};
use crate::transforms::Dft3;

/// A closed convex set with an exact projection.
pub trait FeasibleSet: Sync {
    fn len(&self) -> usize;
    fn project(&self, v: &[f64], out: &mut [f64]);
    /// `||A x - y||_2` for the underlying data term.
    fn residual(&self, x: &[f64]) -> f64;
    fn radius(&self) -> f64;
    /// Smallest attainable residual (the least-squares misfit).
    fn floor(&self) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct BlockSvd {
    /// `K x r`, column-major
    u: Vec<f64>,
    s: Vec<f64>,
    /// `T x r`, column-major (columns of `V`)
    v: Vec<f64>,
    k: usize,
    t: usize,
    /// the full block, row-major `K x T`, for residuals
    b: Vec<f64>,
}

impl BlockSvd {
    fn new(b: Vec<f64>, k: usize, t: usize) -> Self {
        let m = DMatrix::from_row_slice(k, t, &b);
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1e-12 * smax.max(f64::MIN_POSITIVE))
            .collect();
        let mut uu = Vec::with_capacity(k * keep.len());
        let mut vv = Vec::with_capacity(t * keep.len());
        let mut s = Vec::with_capacity(keep.len());
        for &i in &keep {
            s.push(svd.singular_values[i]);
            uu.extend(u.column(i).iter());
            vv.extend(vt.row(i).iter());
        }
        Self {
            u: uu,
            s,
            v: vv,
            k,
            t,
            b,
        }
    }

    fn rank(&self) -> usize {
        self.s.len()
    }
}

/// Projection for block-diagonal `A` with one `K x T` block per pixel.
pub struct BlockBall {
    blocks: Vec<BlockSvd>,
    /// block used by each pixel
    assign: Vec<usize>,
    t: usize,
    k: usize,
    y: Vec<f64>,
    /// `U^T y` per pixel, `rank` entries each, at `offsets[p]`
    yhat: Vec<f64>,
    offsets: Vec<usize>,
    /// squared norm of `y` outside the range of `A`
    perp2: f64,
    radius: f64,
    lambda_hint: AtomicU64,
}

impl BlockBall {
    fn build(blocks: Vec<BlockSvd>, assign: Vec<usize>, t: usize, k: usize, y: &[f64], radius: f64) -> Result<Self> {
        if y.len() != assign.len() * k {
            return dim_err(format!(
                "measurement vector has length {}, expected {}",
                y.len(),
                assign.len() * k
            ));
        }
        let mut yhat = Vec::new();
        let mut offsets = Vec::with_capacity(assign.len());
        let mut perp2 = 0.0;
        for (p, &bi) in assign.iter().enumerate() {
            let b = &blocks[bi];
            let yp = &y[p * k..(p + 1) * k];
            offsets.push(yhat.len());
            let mut rest = yp.to_vec();
            for i in 0..b.rank() {
                let ui = &b.u[i * k..(i + 1) * k];
                let c: f64 = ui.iter().zip(yp).map(|(a, b)| a * b).sum();
                rest.iter_mut().zip(ui).for_each(|(r, u)| *r -= c * u);
                yhat.push(c);
            }
            perp2 += rest.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(Self {
            blocks,
            assign,
            t,
            k,
            y: y.to_vec(),
            yhat,
            offsets,
            perp2,
            radius,
            lambda_hint: AtomicU64::new(1f64.to_bits()),
        })
    }

    /// Feasible set of the coded operator of `codes`.
    pub fn from_codes(codes: &ExposureCodeSet, y: &[f64], radius: f64) -> Result<Self> {
        let (k, t) = (codes.cameras(), codes.frames());
        let (nx, ny) = (codes.width(), codes.height());
        match codes.scheme() {
            Scheme::FrameWise => {
                let b = BlockSvd::new(codes.pixel_block(0, 0), k, t);
                Self::build(vec![b], vec![0; nx * ny], t, k, y, radius)
            }
            _ => {
                let mut blocks = Vec::with_capacity(nx * ny);
                for v in 0..ny {
                    for u in 0..nx {
                        blocks.push(BlockSvd::new(codes.pixel_block(u, v), k, t));
                    }
                }
                Self::build(blocks, (0..nx * ny).collect(), t, k, y, radius)
            }
        }
    }

    /// Feasible set of a dense matrix, treated as a single block.
    pub fn from_dense(a: &DMatrix<f64>, y: &[f64], radius: f64) -> Result<Self> {
        let (k, t) = a.shape();
        let rows: Vec<f64> = (0..k)
            .flat_map(|i| a.row(i).iter().cloned().collect::<Vec<_>>())
            .collect();
        Self::build(vec![BlockSvd::new(rows, k, t)], vec![0], t, k, y, radius)
    }

    /// `phi(lambda) = ||A f(lambda) - y||^2` and its derivative.
    fn phi(&self, c: &[(f64, f64)], lambda: f64) -> (f64, f64) {
        let mut f = self.perp2;
        let mut df = 0.0;
        for &(ci, si2) in c {
            let d = 1.0 + lambda * si2;
            let q = ci * ci / (d * d);
            f += q;
            df -= 2.0 * q * si2 / d;
        }
        (f, df)
    }

    fn solve_lambda(&self, c: &[(f64, f64)]) -> f64 {
        let r2 = self.radius * self.radius;
        if self.phi(c, 0.0).0 <= r2 {
            return 0.0;
        }
        if self.radius == 0.0 || self.perp2 >= r2 {
            return f64::INFINITY;
        }
        // bracket [lo, hi] with phi(lo) > r2 >= phi(hi)
        let mut lo = 0.0;
        let mut hi = f64::from_bits(self.lambda_hint.load(Ordering::Relaxed)).max(1e-12);
        while self.phi(c, hi).0 > r2 {
            lo = hi;
            hi *= 4.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        // Newton on 1/sqrt(phi) = 1/r, safeguarded by bisection
        let target = 1.0 / self.radius;
        let mut x = hi;
        for _ in 0..200 {
            let (f, df) = self.phi(c, x);
            if f > r2 {
                lo = x;
            } else {
                hi = x;
                if f >= r2 * (1.0 - 1e-12) {
                    break;
                }
            }
            let g = 1.0 / f.sqrt() - target;
            let dg = -0.5 * df / (f * f.sqrt());
            let mut next = x - g / dg;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = if lo == 0.0 { hi / 2.0 } else { (lo * hi).sqrt() };
            }
            if (hi - lo) <= 1e-15 * hi {
                break;
            }
            x = next;
        }
        self.lambda_hint.store(hi.to_bits(), Ordering::Relaxed);
        hi
    }
}

impl FeasibleSet for BlockBall {
    fn len(&self) -> usize {
        self.assign.len() * self.t
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn floor(&self) -> f64 {
        self.perp2.sqrt()
    }

    fn project(&self, v: &[f64], out: &mut [f64]) {
        let t = self.t;
        // coordinates of v in each block's right singular basis
        let mut vhat = vec![0.0; self.yhat.len()];
        let mut c = Vec::with_capacity(self.yhat.len());
        for (p, &bi) in self.assign.iter().enumerate() {
            let b = &self.blocks[bi];
            let vp = &v[p * t..(p + 1) * t];
            let off = self.offsets[p];
            for i in 0..b.rank() {
                let x: f64 = b.v[i * t..(i + 1) * t].iter().zip(vp).map(|(a, b)| a * b).sum();
                vhat[off + i] = x;
                c.push((b.s[i] * x - self.yhat[off + i], b.s[i] * b.s[i]));
            }
        }
        let lambda = self.solve_lambda(&c);
        out.copy_from_slice(v);
        if lambda == 0.0 {
            return;
        }
        for (p, &bi) in self.assign.iter().enumerate() {
            let b = &self.blocks[bi];
            let off = self.offsets[p];
            let op = &mut out[p * t..(p + 1) * t];
            for i in 0..b.rank() {
                let (vh, yh, s) = (vhat[off + i], self.yhat[off + i], b.s[i]);
                let fh = if lambda.is_infinite() {
                    yh / s
                } else {
                    (vh + lambda * s * yh) / (1.0 + lambda * s * s)
                };
                let delta = fh - vh;
                for (o, vi) in op.iter_mut().zip(&b.v[i * t..(i + 1) * t]) {
                    *o += delta * vi;
                }
            }
        }
    }

    fn residual(&self, x: &[f64]) -> f64 {
        let (t, k) = (self.t, self.k);
        let mut r2 = 0.0;
        for (p, &bi) in self.assign.iter().enumerate() {
            let b = &self.blocks[bi];
            let xp = &x[p * t..(p + 1) * t];
            for row in 0..k {
                let ax: f64 = b.b[row * b.t..(row + 1) * b.t].iter().zip(xp).map(|(a, b)| a * b).sum();
                r2 += (ax - self.y[p * k + row]).powi(2);
            }
        }
        debug_assert!(self.blocks.iter().all(|b| b.k == k));
        r2.sqrt()
    }
}

/// The preimage of a real feasible set under `x -> Re(Psi^* x)`, for
/// coefficients stored as interleaved `(re, im)` pairs. As `Psi` is unitary
/// the projection maps to the signal domain, projects the real part and maps
/// back.
pub struct FourierBall<'a> {
    inner: &'a dyn FeasibleSet,
    dft: Dft3,
}

impl<'a> FourierBall<'a> {
    pub fn new(inner: &'a dyn FeasibleSet, frames: usize, width: usize, height: usize) -> Result<Self> {
        let dft = Dft3::new(frames, width, height);
        if dft.len() != inner.len() {
            return dim_err("feasible set and transform sizes differ");
        }
        Ok(Self { inner, dft })
    }

    fn to_signal(&self, x: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = x.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        self.dft.inverse_in_place(&mut c);
        c
    }
}

impl FeasibleSet for FourierBall<'_> {
    fn len(&self) -> usize {
        2 * self.inner.len()
    }

    fn radius(&self) -> f64 {
        self.inner.radius()
    }

    fn floor(&self) -> f64 {
        self.inner.floor()
    }

    fn project(&self, v: &[f64], out: &mut [f64]) {
        let mut c = self.to_signal(v);
        let re: Vec<f64> = c.iter().map(|z| z.re).collect();
        let mut pr = vec![0.0; re.len()];
        self.inner.project(&re, &mut pr);
        for (z, p) in c.iter_mut().zip(&pr) {
            z.re = *p;
        }
        self.dft.forward_in_place(&mut c);
        for (pair, z) in out.chunks_mut(2).zip(&c) {
            pair[0] = z.re;
            pair[1] = z.im;
        }
    }

    fn residual(&self, x: &[f64]) -> f64 {
        let re: Vec<f64> = self.to_signal(x).iter().map(|z| z.re).collect();
        self.inner.residual(&re)
    }
}
