//! Binary containers and PGM frames.
//!
//! `HFVV` (volume): magic, `u16` version, `u32` T, Nx, Ny, `u8` sample type
//! (0 real, 1 complex), then little-endian `f64` samples in super-vector
//! order (complex samples as `re, im`).
//!
//! `HFVM` (measurements): magic, `u16` version, `u32` K, Nx, Ny, `f64` noise
//! sigma, `u8` sample type (always 0), then samples in measurement order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;

use crate::codes::{read_u16, read_u32, ExposureCodeSet};
use crate::error::{Error, Result};
use crate::forward::{MeasurementTensor, VideoVolume};
use crate::transforms::ComplexVolume;

const HFVV_MAGIC: &[u8; 4] = b"HFVV";
const HFVM_MAGIC: &[u8; 4] = b"HFVM";
const VERSION: u16 = 1;
const REAL: u8 = 0;
const COMPLEX: u8 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn expect_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_samples<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let out = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after samples".into()));
    }
    Ok(out)
}

fn dims_ok(a: usize, b: usize, c: usize) -> Result<()> {
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }
    a.checked_mul(b)
        .and_then(|x| x.checked_mul(c))
        .filter(|&n| n <= (1 << 31))
        .map(|_| ())
        .ok_or_else(|| Error::Format("header dimensions too large".into()))
}

fn write_volume_header<W: Write>(w: &mut W, dims: (usize, usize, usize), kind: u8) -> Result<()> {
    w.write_all(HFVV_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_u32(w, dims.0)?;
    put_u32(w, dims.1)?;
    put_u32(w, dims.2)?;
    w.write_all(&[kind])?;
    Ok(())
}

pub fn write_volume<W: Write>(volume: &VideoVolume, mut w: W) -> Result<()> {
    write_volume_header(&mut w, volume.dims(), REAL)?;
    for x in volume.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_volume_header<R: Read>(r: &mut R) -> Result<(usize, usize, usize, u8)> {
    expect_header(r, HFVV_MAGIC)?;
    let t = read_u32(r)? as usize;
    let nx = read_u32(r)? as usize;
    let ny = read_u32(r)? as usize;
    dims_ok(t, nx, ny)?;
    let kind = read_u8(r)?;
    if kind > COMPLEX {
        return Err(Error::Format(format!("unknown sample type {kind}")));
    }
    Ok((t, nx, ny, kind))
}

pub fn read_volume<R: Read>(mut r: R) -> Result<VideoVolume> {
    let (t, nx, ny, kind) = read_volume_header(&mut r)?;
    if kind != REAL {
        return Err(Error::Format("volume holds complex samples".into()));
    }
    let data = read_samples(&mut r, t * nx * ny)?;
    VideoVolume::new(t, nx, ny, data)
}

pub fn write_complex_volume<W: Write>(volume: &ComplexVolume, mut w: W) -> Result<()> {
    write_volume_header(&mut w, (volume.frames, volume.width, volume.height), COMPLEX)?;
    for z in &volume.data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_complex_volume<R: Read>(mut r: R) -> Result<ComplexVolume> {
    let (t, nx, ny, kind) = read_volume_header(&mut r)?;
    if kind != COMPLEX {
        return Err(Error::Format("volume holds real samples".into()));
    }
    let raw = read_samples(&mut r, 2 * t * nx * ny)?;
    Ok(ComplexVolume {
        frames: t,
        width: nx,
        height: ny,
        data: raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
    })
}

pub fn write_measurements<W: Write>(m: &MeasurementTensor, mut w: W) -> Result<()> {
    w.write_all(HFVM_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_u32(&mut w, m.cameras())?;
    put_u32(&mut w, m.width())?;
    put_u32(&mut w, m.height())?;
    w.write_all(&m.noise_sigma().to_le_bytes())?;
    w.write_all(&[REAL])?;
    for x in m.values() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measurements<R: Read>(mut r: R) -> Result<MeasurementTensor> {
    expect_header(&mut r, HFVM_MAGIC)?;
    let k = read_u32(&mut r)? as usize;
    let nx = read_u32(&mut r)? as usize;
    let ny = read_u32(&mut r)? as usize;
    dims_ok(k, nx, ny)?;
    let sigma = read_f64(&mut r)?;
    if read_u8(&mut r)? != REAL {
        return Err(Error::Format("measurements must hold real samples".into()));
    }
    let values = read_samples(&mut r, k * nx * ny)?;
    MeasurementTensor::new(k, nx, ny, values, sigma)
}

pub fn save_volume(volume: &VideoVolume, path: impl AsRef<Path>) -> Result<()> {
    write_volume(volume, BufWriter::new(File::create(path)?))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<VideoVolume> {
    read_volume(BufReader::new(File::open(path)?))
}

pub fn save_measurements(m: &MeasurementTensor, path: impl AsRef<Path>) -> Result<()> {
    write_measurements(m, BufWriter::new(File::create(path)?))
}

pub fn load_measurements(path: impl AsRef<Path>) -> Result<MeasurementTensor> {
    read_measurements(BufReader::new(File::open(path)?))
}

pub fn save_codes(codes: &ExposureCodeSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    codes.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads an `HFVC` file; the second value is the recorded PRNG identifier.
pub fn load_codes(path: impl AsRef<Path>) -> Result<(ExposureCodeSet, String)> {
    ExposureCodeSet::read_from(BufReader::new(File::open(path)?))
}

/// Rounds half away from zero, then clips to `0..=255`.
pub fn quantize(x: f64) -> u8 {
    if x.is_nan() {
        return 0;
    }
    x.round().clamp(0.0, 255.0) as u8
}

/// Binary PGM (P5, maxval 255) of a row-major `width x height` frame.
pub fn write_pgm<W: Write>(frame: &[f64], width: usize, height: usize, mut w: W) -> Result<()> {
    if frame.len() != width * height {
        return Err(Error::Dimension(format!(
            "frame has {} samples, expected {width}x{height}",
            frame.len()
        )));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = frame.iter().map(|&x| quantize(x)).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn export_pgm(frame: &[f64], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(frame, width, height, BufWriter::new(File::create(path)?))
}

/// Writes frame `t` of `volume`.
pub fn export_frame(volume: &VideoVolume, t: usize, path: impl AsRef<Path>) -> Result<()> {
    if t >= volume.frames() {
        return Err(Error::IndexOutOfRange {
            what: "frame",
            index: t,
            limit: volume.frames(),
        });
    }
    export_pgm(&volume.frame(t), volume.width(), volume.height(), path)
}

/// Reads P5 (8 or 16 bit) or P2. Samples are rescaled so `maxval` maps to 255.
pub fn read_pgm<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&buf[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad PGM header field '{s}'")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format("invalid PGM dimensions or maxval".into()));
    }
    let n = width * height;
    let scale = 255.0 / maxval as f64;
    let samples: Vec<f64> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates header and raster
            let start = pos + 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            let raster = buf
                .get(start..start + n * bpp)
                .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
            if bpp == 1 {
                raster.iter().map(|&b| f64::from(b) * scale).collect()
            } else {
                raster
                    .chunks_exact(2)
                    .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) * scale)
                    .collect()
            }
        }
        "P2" => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(num(token()?)? as f64 * scale);
            }
            out
        }
        other => return Err(Error::Format(format!("unsupported PGM magic '{other}'"))),
    };
    Ok((width, height, samples))
}

/// Stacks every `.pgm` file in `dir`, in lexicographic file-name order, as
/// the frames of one volume.
pub fn import_pgm_sequence(dir: impl AsRef<Path>) -> Result<VideoVolume> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format("no .pgm files found".into()));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut size = None;
    for p in &paths {
        let (w, h, data) = read_pgm(BufReader::new(File::open(p)?))?;
        match size {
            None => size = Some((w, h)),
            Some(s) if s != (w, h) => {
                return Err(Error::Dimension(format!(
                    "{} is {w}x{h}, earlier frames are {}x{}",
                    p.display(),
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        frames.push(data);
    }
    let (w, h) = size.expect("at least one frame");
    Ok(VideoVolume::from_fn(frames.len(), w, h, |t, u, v| frames[t][v * w + u]))
}
