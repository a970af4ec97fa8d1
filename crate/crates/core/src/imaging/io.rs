//! Plain raster formats: PPM (P6/P3) for colour, PGM (P5/P2) for masks and
//! grey images, PFM for floating-point rasters.
//!
//! PFM is written little-endian (scale `-1.0`) with scanlines stored bottom
//! to top, as the format prescribes. Values are stored as `f32`, so a
//! write/read/write cycle is byte-identical.

use std::fs;
use std::path::Path;

use super::{BinaryMask, DepthMap, Image};
use crate::error::{Error, Result};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::Contract("PPM needs a 3-channel image".into()));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn encode_pgm(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 1 {
        return Err(Error::Contract("PGM needs a 1-channel image".into()));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Masks are stored as 0 / 255.
pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn encode_pfm(img: &Image) -> Result<Vec<u8>> {
    let tag = match img.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Contract(format!("PFM cannot store {c} channels"))),
    };
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * c * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&(img.get(x, y, ch) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Header<'a> {
    tokens: Vec<String>,
    body: &'a [u8],
}

/// Reads `count` whitespace-separated header tokens, skipping `#` comments.
/// The body starts after the single whitespace byte that ends the last token.
fn read_header(bytes: &[u8], count: usize) -> Result<Header<'_>> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() && count > 0 {
        return Ok(Header { tokens, body: &[] });
    }
    Ok(Header {
        tokens,
        body: &bytes[i + 1..],
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("invalid {what}: {s:?}")))
}

/// Decodes P2/P3/P5/P6 into an image normalized to `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let header = read_header(bytes, 4)?;
    let magic = header.tokens[0].as_str();
    let (channels, ascii) = match magic {
        "P2" => (1, true),
        "P5" => (1, false),
        "P3" => (3, true),
        "P6" => (3, false),
        m => return Err(Error::Format(format!("unsupported magic {m:?}"))),
    };
    let w: usize = parse_num(&header.tokens[1], "width")?;
    let h: usize = parse_num(&header.tokens[2], "height")?;
    let maxval: u32 = parse_num(&header.tokens[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid maxval {maxval}")));
    }
    let n = w * h * channels;
    let raw: Vec<u32> = if ascii {
        let text = std::str::from_utf8(header.body)
            .map_err(|_| Error::Format("non-UTF8 ASCII raster".into()))?;
        let vals: Vec<u32> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| parse_num(t, "sample"))
            .collect::<Result<_>>()?;
        vals
    } else if maxval < 256 {
        header.body.iter().take(n).map(|&b| b as u32).collect()
    } else {
        header
            .body
            .chunks_exact(2)
            .take(n)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
            .collect()
    };
    if raw.len() != n {
        return Err(Error::Format(format!("expected {n} samples, found {}", raw.len())));
    }
    if raw.iter().any(|&v| v > maxval) {
        return Err(Error::Format("sample exceeds maxval".into()));
    }
    let scale = maxval as f64;
    Image::from_vec(w, h, channels, raw.into_iter().map(|v| v as f64 / scale).collect())
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let img = decode_pnm(bytes)?;
    if img.channels() != 1 {
        return Err(Error::Format("mask must be a PGM".into()));
    }
    BinaryMask::from_vec(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| v > 0.0).collect(),
    )
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let header = read_header(bytes, 4)?;
    let channels = match header.tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(Error::Format(format!("unsupported PFM magic {m:?}"))),
    };
    let w: usize = parse_num(&header.tokens[1], "width")?;
    let h: usize = parse_num(&header.tokens[2], "height")?;
    let scale: f64 = parse_num(&header.tokens[3], "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let n = w * h * channels;
    if header.body.len() < n * 4 {
        return Err(Error::Format("truncated PFM data".into()));
    }
    let mut img = Image::zeros(w, h, channels);
    let mut words = header.body.chunks_exact(4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..channels {
                let b = words.next().expect("length checked");
                let b = [b[0], b[1], b[2], b[3]];
                let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
                if !v.is_finite() {
                    return Err(Error::Format("non-finite PFM sample".into()));
                }
                img.set(x, y, c, v as f64);
            }
        }
    }
    Ok(img)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    Ok(fs::write(path, encode_ppm(img)?)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    Ok(fs::write(path, encode_mask(mask))?)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    Ok(fs::write(path, encode_pfm(img)?)?)
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_pfm(path, &depth.to_image())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pnm(&fs::read(path)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask(&fs::read(path)?)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pfm(&fs::read(path)?)
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    DepthMap::from_image(&read_pfm(path)?)
}
