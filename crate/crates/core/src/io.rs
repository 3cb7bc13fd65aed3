//! Image and k-space files.
//!
//! Images are written as 16-bit binary PGM, min-max scaled with the scale in a
//! header comment, next to a `.f64` sidecar holding the exact values as raw
//! little-endian doubles in row-major order. Label maps are 8-bit PGM with
//! `maxval = classes - 1`.
//!
//! k-space files (`KSP1`) are little-endian: magic, `u32 n1`, `u32 n2`,
//! `u32 m`, `f64 sigma`, then `m` records of `(u32 bin, f64 re, f64 im)`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{Grid, HardSegmentation, KSpaceData, RealImage, SamplingMask};

const KSP_MAGIC: &[u8; 4] = b"KSP1";
const KSP_HEADER: usize = 4 + 4 + 4 + 4 + 8;
const KSP_RECORD: usize = 4 + 8 + 8;

/// Min-max scale used to map an image onto `0..=65535`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmScale {
    pub min: f64,
    pub max: f64,
}

impl PgmScale {
    fn of(img: &RealImage) -> Self {
        PgmScale {
            min: img.min(),
            max: img.max(),
        }
    }

    fn encode(&self, x: f64) -> u16 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0;
        }
        ((x - self.min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
    }

    fn decode(&self, level: u16) -> f64 {
        match level {
            0 => self.min,
            u16::MAX => self.max,
            _ => self.min + (self.max - self.min) * f64::from(level) / 65535.0,
        }
    }
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("f64")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `path` (16-bit PGM) and its `.f64` sidecar; returns the scale.
pub fn write_image(path: &Path, img: &RealImage) -> Result<PgmScale> {
    let grid = img.grid();
    let scale = PgmScale::of(img);
    let mut out = format!(
        "P5\n# scale min={:e} max={:e}\n{} {}\n65535\n",
        scale.min,
        scale.max,
        grid.n2(),
        grid.n1()
    )
    .into_bytes();
    for &x in img.values() {
        out.extend_from_slice(&scale.encode(x).to_be_bytes());
    }
    write_file(path, &out)?;
    let raw: Vec<u8> = img.values().iter().flat_map(|x| x.to_le_bytes()).collect();
    write_file(&sidecar_path(path), &raw)?;
    Ok(scale)
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    scale: Option<PgmScale>,
    data_offset: usize,
}

fn parse_scale_comment(comment: &str) -> Option<PgmScale> {
    let rest = comment.trim().strip_prefix("scale")?;
    let mut min = None;
    let mut max = None;
    for part in rest.split_whitespace() {
        if let Some(v) = part.strip_prefix("min=") {
            min = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("max=") {
            max = v.parse().ok();
        }
    }
    Some(PgmScale { min: min?, max: max? })
}

fn parse_pgm_header(path: &Path, bytes: &[u8]) -> Result<PgmHeader> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::parse(path, 0, "not a binary PGM (expected magic P5)"));
    }
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    let mut scale = None;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::parse(path, pos as u64, "truncated PGM header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(bytes.len(), |e| pos + e);
            let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
            if let Some(s) = parse_scale_comment(&comment) {
                scale = Some(s);
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, pos as u64, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        let value: u32 = text
            .parse()
            .map_err(|_| Error::parse(path, start as u64, format!("header field {text} out of range")))?;
        fields.push(value);
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(path, pos as u64, "missing separator after maxval"));
    }
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(path, pos as u64, format!("invalid maxval {maxval}")));
    }
    Ok(PgmHeader {
        width,
        height,
        maxval,
        scale,
        data_offset: pos + 1,
    })
}

fn pgm_levels(path: &Path, bytes: &[u8], header: &PgmHeader) -> Result<Vec<u16>> {
    let wide = header.maxval > 255;
    let per = if wide { 2 } else { 1 };
    let count = header.width * header.height;
    let raster = &bytes[header.data_offset..];
    if raster.len() < count * per {
        let pixel = raster.len() / per;
        return Err(Error::parse(
            path,
            (header.data_offset + pixel * per) as u64,
            format!("raster truncated at pixel {pixel} of {count}"),
        ));
    }
    Ok(if wide {
        raster[..2 * count]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        raster[..count].iter().map(|&b| u16::from(b)).collect()
    })
}

/// Reads an image written by [`write_image`]. The sidecar gives exact values
/// when present; otherwise the scale comment is inverted.
pub fn read_image(path: &Path) -> Result<RealImage> {
    let bytes = read_file(path)?;
    let header = parse_pgm_header(path, &bytes)?;
    let grid = Grid::new(header.height, header.width)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let raw = read_file(&sidecar)?;
        if raw.len() != 8 * grid.n() {
            let value = raw.len() / 8;
            return Err(Error::parse(
                &sidecar,
                (value * 8) as u64,
                format!("sidecar holds {value} values, expected {}", grid.n()),
            ));
        }
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        return RealImage::new(grid, values);
    }
    let levels = pgm_levels(path, &bytes, &header)?;
    let values = match header.scale {
        Some(scale) if header.maxval == 65535 => levels.iter().map(|&l| scale.decode(l)).collect(),
        _ => levels
            .iter()
            .map(|&l| f64::from(l) / f64::from(header.maxval))
            .collect(),
    };
    RealImage::new(grid, values)
}

/// 8-bit label map with `maxval = classes - 1`.
pub fn write_labels(path: &Path, seg: &HardSegmentation) -> Result<()> {
    let grid = seg.grid();
    if seg.classes() > 256 {
        return Err(Error::InvalidArgument(format!(
            "{} classes do not fit an 8-bit label map",
            seg.classes()
        )));
    }
    let mut out = format!("P5\n{} {}\n{}\n", grid.n2(), grid.n1(), seg.classes() - 1).into_bytes();
    out.extend(seg.labels().iter().map(|&l| l as u8));
    write_file(path, &out)
}

pub fn read_labels(path: &Path) -> Result<HardSegmentation> {
    let bytes = read_file(path)?;
    let header = parse_pgm_header(path, &bytes)?;
    if header.maxval > 255 {
        return Err(Error::parse(path, 0, "label maps must be 8-bit"));
    }
    let grid = Grid::new(header.height, header.width)?;
    let levels = pgm_levels(path, &bytes, &header)?;
    HardSegmentation::new(
        grid,
        header.maxval as usize + 1,
        levels.into_iter().map(usize::from).collect(),
    )
}

/// Binary mask as an 8-bit PGM (`1` = sampled).
pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    let grid = mask.grid();
    let mut out = format!("P5\n{} {}\n1\n", grid.n2(), grid.n1()).into_bytes();
    out.extend(mask.selected().iter().map(|&s| u8::from(s)));
    write_file(path, &out)
}

pub fn encode_kspace(data: &KSpaceData) -> Vec<u8> {
    let grid = data.grid();
    let m = data.mask().m();
    let mut out = Vec::with_capacity(KSP_HEADER + m * KSP_RECORD);
    out.extend_from_slice(KSP_MAGIC);
    out.extend_from_slice(&(grid.n1() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.n2() as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&data.noise_sigma().to_le_bytes());
    for (&bin, z) in data.mask().indices().iter().zip(data.samples()) {
        out.extend_from_slice(&(bin as u32).to_le_bytes());
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

/// Parses a `KSP1` byte stream; `path` is only used in error messages.
pub fn decode_kspace(path: &Path, bytes: &[u8]) -> Result<KSpaceData> {
    if bytes.len() < 4 || &bytes[..4] != KSP_MAGIC {
        return Err(Error::parse(path, 0, "bad magic, expected KSP1"));
    }
    if bytes.len() < KSP_HEADER {
        return Err(Error::parse(path, bytes.len() as u64, "truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let (n1, n2, m) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12) as usize);
    let sigma = f64_at(16);
    let grid = Grid::new(n1, n2).map_err(|e| Error::parse(path, 4, e.to_string()))?;
    let mut bins = Vec::with_capacity(m);
    let mut samples = Vec::with_capacity(m);
    for r in 0..m {
        let o = KSP_HEADER + r * KSP_RECORD;
        if bytes.len() < o + KSP_RECORD {
            return Err(Error::parse(
                path,
                bytes.len() as u64,
                format!("truncated: record {r} of {m} is missing"),
            ));
        }
        let bin = u32_at(o) as usize;
        if bin >= grid.n() {
            return Err(Error::parse(path, o as u64, format!("record {r}: bin {bin} outside the grid")));
        }
        if bins.last().is_some_and(|&prev| prev >= bin) {
            return Err(Error::parse(path, o as u64, format!("record {r}: bins must be strictly increasing")));
        }
        bins.push(bin);
        samples.push(Complex64::new(f64_at(o + 4), f64_at(o + 12)));
    }
    let end = KSP_HEADER + m * KSP_RECORD;
    if bytes.len() > end {
        return Err(Error::parse(path, end as u64, "trailing bytes after the last record"));
    }
    let mask = SamplingMask::from_indices(grid, &bins).map_err(|e| Error::parse(path, KSP_HEADER as u64, e.to_string()))?;
    KSpaceData::new(mask, samples, sigma).map_err(|e| Error::parse(path, 16, e.to_string()))
}

pub fn write_kspace(path: &Path, data: &KSpaceData) -> Result<()> {
    write_file(path, &encode_kspace(data))
}

pub fn read_kspace(path: &Path) -> Result<KSpaceData> {
    decode_kspace(path, &read_file(path)?)
}
