//! Binary containers and image ingestion.
//!
//! Two little-endian container formats, both round-tripping bit for
//! bit:
//!
//! `MRT0` dense tensor file: magic, version byte, dtype byte (0 = f64),
//! order byte, one u64 per mode size, then the row-major payload.
//!
//! `MRTC` multiresolution archive: magic, version byte, base-format
//! byte (0 = TT, 1 = CP), batch size, level count, order, base shape as
//! u64s, then one block per level: a presence flag, the rank
//! descriptor (TT chain or CP rank), and the payload scalars (TT cores
//! in order, or CP weights then factor matrices).
//!
//! Grayscale images enter through binary PGM (P5), scaled to [0, 1].
//! File writes go through a temp file in the same directory followed
//! by a rename.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::cp::CpTensor;
use crate::dense::{DenseTensor, GridSpec};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::ms::{BaseFormat, MsTensor, Payload};
use crate::tt::{Core, TtTensor};

const TENSOR_MAGIC: [u8; 4] = *b"MRT0";
const ARCHIVE_MAGIC: [u8; 4] = *b"MRTC";
const FORMAT_VERSION: u8 = 1;
const DTYPE_F64_LE: u8 = 0;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64_vec(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(count * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a dense tensor into the MRT0 layout.
pub fn encode_tensor(t: &DenseTensor) -> Result<Vec<u8>> {
    if t.order() > u8::MAX as usize {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "order exceeds container limit".into(),
        });
    }
    let mut out = Vec::with_capacity(16 + t.order() * 8 + t.len() * 8);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(DTYPE_F64_LE);
    out.push(t.order() as u8);
    for &n in t.shape() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    push_f64s(&mut out, t.data());
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<DenseTensor> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            expected: TENSOR_MAGIC,
            found: magic.try_into().unwrap_or([0; 4]),
        });
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F64_LE {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let order = r.u8("order")? as usize;
    if order == 0 {
        return Err(Error::MalformedHeader("order must be at least 1".into()));
    }
    let mut shape = Vec::with_capacity(order);
    for _ in 0..order {
        shape.push(r.u64("mode size")? as usize);
    }
    let len: usize = shape.iter().product();
    let data = r.f64_vec(len, "payload")?;
    r.finish()?;
    DenseTensor::new(shape, data)
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    atomic_write(path, &encode_tensor(t)?)
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    decode_tensor(&fs::read(path)?)
}

/// Serialize a multiresolution tensor into the MRTC layout.
pub fn encode_archive(ms: &MsTensor) -> Result<Vec<u8>> {
    let grid = ms.grid();
    if grid.batch_size() > u8::MAX as usize
        || grid.levels() > u8::MAX as usize
        || grid.order() > u8::MAX as usize
    {
        return Err(Error::MalformedHeader(
            "grid parameters exceed container limits".into(),
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&ARCHIVE_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(match ms.format() {
        BaseFormat::Tt => 0,
        BaseFormat::Cp => 1,
    });
    out.push(grid.batch_size() as u8);
    out.push(grid.levels() as u8);
    out.push(grid.order() as u8);
    for &n in grid.base_shape() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for payload in ms.levels() {
        if payload.is_zero() {
            out.push(0);
            continue;
        }
        out.push(1);
        match payload {
            Payload::Tt(t) => {
                let chain: Vec<usize> = t.cores[..t.cores.len() - 1]
                    .iter()
                    .map(|c| c.right)
                    .collect();
                for r in &chain {
                    out.extend_from_slice(&(*r as u64).to_le_bytes());
                }
                for core in &t.cores {
                    push_f64s(&mut out, &core.a);
                }
            }
            Payload::Cp(c) => {
                out.extend_from_slice(&(c.rank() as u64).to_le_bytes());
                push_f64s(&mut out, c.weights());
                for j0 in 0..c.order() {
                    push_f64s(&mut out, &c.factor(j0).a);
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<MsTensor> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != ARCHIVE_MAGIC {
        return Err(Error::BadMagic {
            expected: ARCHIVE_MAGIC,
            found: magic.try_into().unwrap_or([0; 4]),
        });
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let format = match r.u8("base format")? {
        0 => BaseFormat::Tt,
        1 => BaseFormat::Cp,
        other => return Err(Error::UnsupportedDtype(other)),
    };
    let bs = r.u8("batch size")? as usize;
    let levels = r.u8("level count")? as usize;
    let order = r.u8("order")? as usize;
    if order == 0 {
        return Err(Error::MalformedHeader("order must be at least 1".into()));
    }
    let mut base_shape = Vec::with_capacity(order);
    for _ in 0..order {
        base_shape.push(r.u64("mode size")? as usize);
    }
    let grid = GridSpec::new(bs, levels, base_shape)?;

    let mut payloads = Vec::with_capacity(levels + 1);
    for k in 0..=levels {
        let shape = grid.scale_shape(k);
        let present = r.u8("presence flag")?;
        match (present, format) {
            (0, _) => payloads.push(Payload::zero(format, shape)),
            (1, BaseFormat::Tt) => {
                let mut chain = Vec::with_capacity(order - 1);
                for _ in 0..order - 1 {
                    let e = r.u64("rank chain")? as usize;
                    if e == 0 {
                        return Err(Error::RankExtentMismatch(format!(
                            "level {k} declares a zero rank in a present payload"
                        )));
                    }
                    chain.push(e);
                }
                let mut cores = Vec::with_capacity(order);
                let mut left = 1usize;
                for (m, &n) in shape.iter().enumerate() {
                    let right = if m + 1 == order { 1 } else { chain[m] };
                    let a = r.f64_vec(left * n * right, "core payload")?;
                    cores.push(Core {
                        left,
                        n,
                        right,
                        a,
                    });
                    left = right;
                }
                let t = TtTensor::from_cores(shape, cores)
                    .map_err(|e| Error::RankExtentMismatch(format!("level {k}: {e}")))?;
                payloads.push(Payload::Tt(t));
            }
            (1, BaseFormat::Cp) => {
                let rank = r.u64("cp rank")? as usize;
                if rank == 0 {
                    return Err(Error::RankExtentMismatch(format!(
                        "level {k} declares rank 0 in a present payload"
                    )));
                }
                let weights = r.f64_vec(rank, "cp weights")?;
                let mut factors = Vec::with_capacity(order);
                for &n in &shape {
                    let a = r.f64_vec(n * rank, "cp factor")?;
                    factors.push(Mat::from_vec(n, rank, a)?);
                }
                let c = CpTensor::from_normalized_parts(shape, weights, factors)
                    .map_err(|e| Error::RankExtentMismatch(format!("level {k}: {e}")))?;
                payloads.push(Payload::Cp(c));
            }
            (flag, _) => {
                return Err(Error::MalformedHeader(format!(
                    "level {k} has invalid presence flag {flag}"
                )))
            }
        }
    }
    r.finish()?;
    MsTensor::new(grid, format, payloads)
}

pub fn write_archive(path: &Path, ms: &MsTensor) -> Result<()> {
    atomic_write(path, &encode_archive(ms)?)
}

pub fn read_archive(path: &Path) -> Result<MsTensor> {
    decode_archive(&fs::read(path)?)
}

/// Write via a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io(e)
    })
}

/// Parse a binary PGM (P5) image into a height x width tensor with
/// values scaled to [0, 1]. Supports 8-bit and 16-bit samples
/// (big-endian per the format).
pub fn decode_pgm(bytes: &[u8]) -> Result<DenseTensor> {
    let mut pos = 0usize;
    let header_token = |pos: &mut usize| -> Result<Vec<u8>> {
        // Skip whitespace and '#' comments.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::MalformedHeader("unexpected end of PGM header".into()));
        }
        Ok(bytes[start..*pos].to_vec())
    };

    let magic = header_token(&mut pos)?;
    if magic != b"P5" {
        return Err(Error::MalformedHeader(format!(
            "not a binary PGM (P5) file, starts with {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let parse_num = |tok: Vec<u8>, what: &str| -> Result<u32> {
        String::from_utf8_lossy(&tok)
            .parse::<u32>()
            .map_err(|_| Error::MalformedHeader(format!("bad {what}")))
    };
    let width = parse_num(header_token(&mut pos)?, "width")? as usize;
    let height = parse_num(header_token(&mut pos)?, "height")? as usize;
    let maxval = parse_num(header_token(&mut pos)?, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader(
            "missing whitespace before raster".into(),
        ));
    }
    pos += 1;

    let count = width * height;
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if maxval < 256 {
        let raster = bytes
            .get(pos..pos + count)
            .ok_or_else(|| Error::Truncated("PGM raster".into()))?;
        raster.iter().map(|&b| b as f64 * scale).collect()
    } else {
        let raster = bytes
            .get(pos..pos + 2 * count)
            .ok_or_else(|| Error::Truncated("PGM raster".into()))?;
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    DenseTensor::new(vec![height, width], data)
}

pub fn ingest_pgm(path: &Path) -> Result<DenseTensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

/// Largest centered sub-tensor whose modes are divisible by bs^levels.
pub fn center_crop_divisible(t: &DenseTensor, bs: usize, levels: usize) -> Result<DenseTensor> {
    let f = bs
        .checked_pow(levels as u32)
        .ok_or_else(|| Error::InvalidConfig(format!("bs^L overflows: {bs}^{levels}")))?;
    let target: Vec<usize> = t.shape().iter().map(|&n| (n / f) * f).collect();
    if target.contains(&0) {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: format!("too small to crop to a multiple of {f}"),
        });
    }
    if target == t.shape() {
        return Ok(t.clone());
    }
    let offsets: Vec<usize> = t
        .shape()
        .iter()
        .zip(&target)
        .map(|(&n, &m)| (n - m) / 2)
        .collect();
    let mut out = vec![0.0f64; target.iter().product()];
    let d = t.order();
    let mut idx = vec![0usize; d];
    for slot in out.iter_mut() {
        let mut src = 0usize;
        for m in 0..d {
            src = src * t.shape()[m] + idx[m] + offsets[m];
        }
        *slot = t.data()[src];
        for m in (0..d).rev() {
            idx[m] += 1;
            if idx[m] < target[m] {
                break;
            }
            idx[m] = 0;
        }
    }
    DenseTensor::new(target, out)
}

/// Zero-pad around the center so every mode is divisible by bs^levels.
pub fn center_pad_divisible(t: &DenseTensor, bs: usize, levels: usize) -> Result<DenseTensor> {
    let f = bs
        .checked_pow(levels as u32)
        .ok_or_else(|| Error::InvalidConfig(format!("bs^L overflows: {bs}^{levels}")))?;
    let target: Vec<usize> = t.shape().iter().map(|&n| n.div_ceil(f) * f).collect();
    if target == t.shape() {
        return Ok(t.clone());
    }
    let offsets: Vec<usize> = t
        .shape()
        .iter()
        .zip(&target)
        .map(|(&n, &m)| (m - n) / 2)
        .collect();
    let mut out = vec![0.0f64; target.iter().product()];
    let d = t.order();
    let mut idx = vec![0usize; d];
    for _ in 0..t.len() {
        let mut dst = 0usize;
        for m in 0..d {
            dst = dst * target[m] + idx[m] + offsets[m];
        }
        let mut src = 0usize;
        for (&n, &i) in t.shape().iter().zip(&idx) {
            src = src * n + i;
        }
        out[dst] = t.data()[src];
        for m in (0..d).rev() {
            idx[m] += 1;
            if idx[m] < t.shape()[m] {
                break;
            }
            idx[m] = 0;
        }
    }
    DenseTensor::new(target, out)
}
