//! Binary exposure codes for the three acquisition schemes.
//!
//! Storage order of the payload, which is also the on-disk order of the
//! `HFVC` container:
//!
//! * frame-wise: `k` outer, then `t`;
//! * pixel-wise: `k`, then `t`, then pixel `j = v * width + u`;
//! * column-row: `k`, then `t`, then the `width` bits of the row generator
//!   (indexed by `u`) followed by the `height` bits of the column generator
//!   (indexed by `v`).
//!
//! Column-row pixel codes are never stored; `b(k, u, v, t) = r[k,t](u) ^ c[k,t](v)`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::rng::{BitStream, PRNG_ID};

pub const HFVC_MAGIC: &[u8; 4] = b"HFVC";
pub const HFVC_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[serde(rename = "frame")]
    FrameWise,
    #[serde(rename = "pixel")]
    PixelWise,
    #[serde(rename = "colrow")]
    ColumnRow,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::FrameWise, Scheme::PixelWise, Scheme::ColumnRow];

    pub fn tag(self) -> u8 {
        match self {
            Scheme::FrameWise => 0,
            Scheme::PixelWise => 1,
            Scheme::ColumnRow => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Scheme::FrameWise),
            1 => Ok(Scheme::PixelWise),
            2 => Ok(Scheme::ColumnRow),
            _ => Err(Error::Format(format!("unknown scheme tag {tag}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::FrameWise => "frame",
            Scheme::PixelWise => "pixel",
            Scheme::ColumnRow => "colrow",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" | "frame-wise" => Ok(Scheme::FrameWise),
            "pixel" | "pixel-wise" => Ok(Scheme::PixelWise),
            "colrow" | "column-row" => Ok(Scheme::ColumnRow),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Per-camera binary shutter codes for one shot of `frames` target frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExposureCodeSet {
    scheme: Scheme,
    cameras: usize,
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
    bits: Vec<u8>,
}

fn check_dims(cameras: usize, frames: usize, width: usize, height: usize) -> Result<()> {
    if cameras == 0 || frames == 0 || width == 0 || height == 0 {
        return dim_err(format!(
            "code dimensions must be positive (K={cameras}, T={frames}, Nx={width}, Ny={height})"
        ));
    }
    Ok(())
}

fn payload_len(scheme: Scheme, k: usize, t: usize, nx: usize, ny: usize) -> usize {
    match scheme {
        Scheme::FrameWise => k * t,
        Scheme::PixelWise => k * t * nx * ny,
        Scheme::ColumnRow => k * t * (nx + ny),
    }
}

/// Frame-wise codes: one i.i.d. fair sequence per camera, shared by all pixels.
pub fn gen_frame_wise(
    cameras: usize,
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<ExposureCodeSet> {
    ExposureCodeSet::generate(Scheme::FrameWise, cameras, frames, width, height, seed)
}

/// Pixel-wise codes: an independent sequence per camera and pixel.
pub fn gen_pixel_wise(
    cameras: usize,
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<ExposureCodeSet> {
    ExposureCodeSet::generate(Scheme::PixelWise, cameras, frames, width, height, seed)
}

/// Column-row codes: per `(k, t)` row and column generators, combined by XOR.
pub fn gen_column_row(
    cameras: usize,
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<ExposureCodeSet> {
    ExposureCodeSet::generate(Scheme::ColumnRow, cameras, frames, width, height, seed)
}

impl ExposureCodeSet {
    pub fn generate(
        scheme: Scheme,
        cameras: usize,
        frames: usize,
        width: usize,
        height: usize,
        seed: u64,
    ) -> Result<Self> {
        check_dims(cameras, frames, width, height)?;
        let n = payload_len(scheme, cameras, frames, width, height);
        let bits = BitStream::new(seed).fill(n);
        Ok(Self {
            scheme,
            cameras,
            frames,
            width,
            height,
            seed,
            bits,
        })
    }

    /// Builds a code set from an explicit payload in storage order.
    pub fn from_payload(
        scheme: Scheme,
        cameras: usize,
        frames: usize,
        width: usize,
        height: usize,
        seed: u64,
        bits: Vec<u8>,
    ) -> Result<Self> {
        check_dims(cameras, frames, width, height)?;
        let n = payload_len(scheme, cameras, frames, width, height);
        if bits.len() != n {
            return dim_err(format!("payload has {} bits, expected {n}", bits.len()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidConfig(format!("payload bit {b} is not 0 or 1")));
        }
        Ok(Self {
            scheme,
            cameras,
            frames,
            width,
            height,
            seed,
            bits,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
    pub fn cameras(&self) -> usize {
        self.cameras
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
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
    /// Raw payload in storage order.
    pub fn payload(&self) -> &[u8] {
        &self.bits
    }

    /// Row generator `r[k,t]`, indexed by `u`. Column-row scheme only.
    pub fn row_generator(&self, k: usize, t: usize) -> Option<&[u8]> {
        if self.scheme != Scheme::ColumnRow || k >= self.cameras || t >= self.frames {
            return None;
        }
        let base = (k * self.frames + t) * (self.width + self.height);
        Some(&self.bits[base..base + self.width])
    }

    /// Column generator `c[k,t]`, indexed by `v`. Column-row scheme only.
    pub fn column_generator(&self, k: usize, t: usize) -> Option<&[u8]> {
        if self.scheme != Scheme::ColumnRow || k >= self.cameras || t >= self.frames {
            return None;
        }
        let base = (k * self.frames + t) * (self.width + self.height) + self.width;
        Some(&self.bits[base..base + self.height])
    }

    /// Shutter state of camera `k` at pixel `(u, v)` and frame `t`, unchecked.
    #[inline]
    pub fn bit(&self, k: usize, u: usize, v: usize, t: usize) -> u8 {
        match self.scheme {
            Scheme::FrameWise => self.bits[k * self.frames + t],
            Scheme::PixelWise => self.bits[(k * self.frames + t) * self.pixels() + v * self.width + u],
            Scheme::ColumnRow => {
                let base = (k * self.frames + t) * (self.width + self.height);
                self.bits[base + u] ^ self.bits[base + self.width + v]
            }
        }
    }

    /// The length-`T` code of camera `k` at pixel `(u, v)`.
    pub fn code_at(&self, k: usize, u: usize, v: usize) -> Result<Vec<u8>> {
        if k >= self.cameras {
            return Err(Error::IndexOutOfRange {
                what: "camera",
                index: k,
                limit: self.cameras,
            });
        }
        if u >= self.width {
            return Err(Error::IndexOutOfRange {
                what: "u",
                index: u,
                limit: self.width,
            });
        }
        if v >= self.height {
            return Err(Error::IndexOutOfRange {
                what: "v",
                index: v,
                limit: self.height,
            });
        }
        Ok((0..self.frames).map(|t| self.bit(k, u, v, t)).collect())
    }

    /// Dense `K x T` block of pixel `(u, v)`, row-major, as reals.
    pub fn pixel_block(&self, u: usize, v: usize) -> Vec<f64> {
        let mut block = Vec::with_capacity(self.cameras * self.frames);
        for k in 0..self.cameras {
            for t in 0..self.frames {
                block.push(f64::from(self.bit(k, u, v, t)));
            }
        }
        block
    }

    /// Mean of all expanded bits `b(k, u, v, t)`.
    pub fn expanded_bit_mean(&self) -> f64 {
        let mut ones = 0usize;
        for v in 0..self.height {
            for u in 0..self.width {
                for k in 0..self.cameras {
                    for t in 0..self.frames {
                        ones += usize::from(self.bit(k, u, v, t));
                    }
                }
            }
        }
        ones as f64 / (self.cameras * self.frames * self.pixels()) as f64
    }

    /// Number of `(camera, pixel)` pairs whose shutter never opens.
    pub fn closed_sequences(&self) -> usize {
        let mut n = 0;
        for v in 0..self.height {
            for u in 0..self.width {
                for k in 0..self.cameras {
                    if (0..self.frames).all(|t| self.bit(k, u, v, t) == 0) {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    /// Total open-shutter samples per camera over the whole frame.
    pub fn exposures_per_camera(&self) -> Vec<usize> {
        (0..self.cameras)
            .map(|k| {
                let mut n = 0;
                for v in 0..self.height {
                    for u in 0..self.width {
                        for t in 0..self.frames {
                            n += usize::from(self.bit(k, u, v, t));
                        }
                    }
                }
                n
            })
            .collect()
    }

    /// Codes of the `w x h` window with top-left pixel `(u0, v0)`.
    ///
    /// Column-row windows keep their generator form.
    pub fn restrict(&self, u0: usize, v0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || u0 + w > self.width || v0 + h > self.height {
            return dim_err(format!(
                "window {w}x{h}+({u0},{v0}) outside {}x{}",
                self.width, self.height
            ));
        }
        let bits = match self.scheme {
            Scheme::FrameWise => self.bits.clone(),
            Scheme::PixelWise => {
                let mut out = Vec::with_capacity(self.cameras * self.frames * w * h);
                for kt in 0..self.cameras * self.frames {
                    let base = kt * self.pixels();
                    for v in v0..v0 + h {
                        let row = base + v * self.width;
                        out.extend_from_slice(&self.bits[row + u0..row + u0 + w]);
                    }
                }
                out
            }
            Scheme::ColumnRow => {
                let stride = self.width + self.height;
                let mut out = Vec::with_capacity(self.cameras * self.frames * (w + h));
                for kt in 0..self.cameras * self.frames {
                    let base = kt * stride;
                    out.extend_from_slice(&self.bits[base + u0..base + u0 + w]);
                    let cbase = base + self.width;
                    out.extend_from_slice(&self.bits[cbase + v0..cbase + v0 + h]);
                }
                out
            }
        };
        Ok(Self {
            scheme: self.scheme,
            cameras: self.cameras,
            frames: self.frames,
            width: w,
            height: h,
            seed: self.seed,
            bits,
        })
    }

    /// Writes the `HFVC` container.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(HFVC_MAGIC)?;
        w.write_all(&HFVC_VERSION.to_le_bytes())?;
        w.write_all(&[self.scheme.tag()])?;
        for d in [self.cameras, self.frames, self.width, self.height] {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        let id = PRNG_ID.as_bytes();
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&pack_bits(&self.bits))?;
        Ok(())
    }

    /// Reads an `HFVC` container. Returns the code set and the PRNG identifier
    /// recorded in the header.
    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, String)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HFVC_MAGIC {
            return Err(Error::Format("missing HFVC magic".into()));
        }
        let version = read_u16(&mut r)?;
        if version != HFVC_VERSION {
            return Err(Error::Format(format!("unsupported HFVC version {version}")));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let scheme = Scheme::from_tag(tag[0])?;
        let cameras = read_u32(&mut r)? as usize;
        let frames = read_u32(&mut r)? as usize;
        let width = read_u32(&mut r)? as usize;
        let height = read_u32(&mut r)? as usize;
        check_dims(cameras, frames, width, height).map_err(|e| Error::Format(e.to_string()))?;
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)?;
        let seed = u64::from_le_bytes(seed);
        let id_len = read_u16(&mut r)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| Error::Format("PRNG id is not UTF-8".into()))?;
        let n = payload_len(scheme, cameras, frames, width, height);
        let mut packed = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut packed)?;
        let bits = unpack_bits(&packed, n);
        let set = Self::from_payload(scheme, cameras, frames, width, height, seed, bits)?;
        Ok((set, id))
    }
}

/// Packs bits 8 per byte, least significant bit first.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (i % 8);
    }
    out
}

pub fn unpack_bits(packed: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect()
}

pub(crate) fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Codes mapped to `{-1, +1} / sqrt(K')`, optionally with an always-open
/// DC camera appended as the last row.
///
/// Frame-wise sets store one `K' x T` block; the other schemes store one
/// block per pixel, pixel `j = v * width + u` outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedCodeSet {
    scheme: Scheme,
    rows: usize,
    frames: usize,
    width: usize,
    height: usize,
    dc_row_present: bool,
    values: Vec<f64>,
}

pub fn to_signed(codes: &ExposureCodeSet, include_dc: bool) -> SignedCodeSet {
    let rows = codes.cameras + usize::from(include_dc);
    let scale = 1.0 / (rows as f64).sqrt();
    let t_len = codes.frames;
    let push_block = |values: &mut Vec<f64>, u: usize, v: usize| {
        for k in 0..codes.cameras {
            for t in 0..t_len {
                let b = f64::from(codes.bit(k, u, v, t));
                values.push((2.0 * b - 1.0) * scale);
            }
        }
        if include_dc {
            values.extend(std::iter::repeat_n(scale, t_len));
        }
    };
    let mut values = Vec::new();
    match codes.scheme {
        Scheme::FrameWise => push_block(&mut values, 0, 0),
        _ => {
            for v in 0..codes.height {
                for u in 0..codes.width {
                    push_block(&mut values, u, v);
                }
            }
        }
    }
    SignedCodeSet {
        scheme: codes.scheme,
        rows,
        frames: codes.frames,
        width: codes.width,
        height: codes.height,
        dc_row_present: include_dc,
        values,
    }
}

impl SignedCodeSet {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
    /// `K'`: cameras plus the DC row when present.
    pub fn rows(&self) -> usize {
        self.rows
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
    pub fn dc_row_present(&self) -> bool {
        self.dc_row_present
    }
    pub fn scale(&self) -> f64 {
        1.0 / (self.rows as f64).sqrt()
    }

    /// Signed sequence of row `k` at pixel `(u, v)`; the DC row is `k = K`.
    pub fn row(&self, k: usize, u: usize, v: usize) -> &[f64] {
        let block = self.rows * self.frames;
        let base = match self.scheme {
            Scheme::FrameWise => 0,
            _ => (v * self.width + u) * block,
        };
        let start = base + k * self.frames;
        &self.values[start..start + self.frames]
    }

    /// Inverts the signed map on a camera row: `b = (s * sqrt(K') + 1) / 2`.
    pub fn binary_row(&self, k: usize, u: usize, v: usize) -> Vec<u8> {
        let root = (self.rows as f64).sqrt();
        self.row(k, u, v)
            .iter()
            .map(|&s| ((s * root + 1.0) / 2.0).round() as u8)
            .collect()
    }
}
