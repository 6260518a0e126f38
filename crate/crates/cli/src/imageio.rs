//! Netpbm images and raw latent files.
//!
//! Images are 16-bit binary graymaps (P5) and pixmaps (P6) with an affine
//! map from `[lo, hi]` onto `0..=65535`; values outside the range clip.
//! Binary masks are P4 bitmaps. Latents are additionally stored as `.lat`
//! files: the magic `LAT1`, height, width and channels as little-endian
//! `u32`, then the data as little-endian `f64`, so they round-trip exactly.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};

use itoedit::LatentImage;

const MAXVAL: f64 = 65535.0;
const LAT_MAGIC: &[u8; 4] = b"LAT1";

/// Affine map between latent intensities and 16-bit samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityMap {
    pub lo: f64,
    pub hi: f64,
}

impl IntensityMap {
    pub fn new(range: [f64; 2]) -> Result<Self> {
        ensure!(
            range[0].is_finite() && range[1].is_finite() && range[0] < range[1],
            "intensity range must be increasing, got {range:?}"
        );
        Ok(Self {
            lo: range[0],
            hi: range[1],
        })
    }

    pub fn encode(&self, v: f64) -> u16 {
        let s = (v - self.lo) / (self.hi - self.lo) * MAXVAL;
        s.round().clamp(0.0, MAXVAL) as u16
    }

    pub fn decode(&self, s: u16, maxval: u16) -> f64 {
        self.lo + (s as f64 / maxval as f64) * (self.hi - self.lo)
    }
}

fn header(magic: &str, w: usize, h: usize, maxval: Option<u16>) -> Vec<u8> {
    match maxval {
        Some(m) => format!("{magic}\n{w} {h}\n{m}\n").into_bytes(),
        None => format!("{magic}\n{w} {h}\n").into_bytes(),
    }
}

/// Encodes a 1- or 3-channel latent as P5 or P6.
pub fn encode_pnm(img: &LatentImage, map: &IntensityMap) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => bail!("images need 1 or 3 channels, latent has {c}"),
    };
    let mut out = header(magic, img.width(), img.height(), Some(u16::MAX));
    for &v in img.as_slice() {
        out.extend_from_slice(&map.encode(v).to_be_bytes());
    }
    Ok(out)
}

/// Encodes an `h x w` map of values in `[0, 1]` as a 16-bit P5.
pub fn encode_pgm_unit(values: &[f64], h: usize, w: usize) -> Result<Vec<u8>> {
    ensure!(values.len() == h * w, "map size does not match {h}x{w}");
    let map = IntensityMap { lo: 0.0, hi: 1.0 };
    let mut out = header("P5", w, h, Some(u16::MAX));
    for &v in values {
        out.extend_from_slice(&map.encode(v).to_be_bytes());
    }
    Ok(out)
}

/// Encodes a boolean map as P4 (set bits are black, i.e. `true`).
pub fn encode_pbm(bits: &[bool], h: usize, w: usize) -> Result<Vec<u8>> {
    ensure!(bits.len() == h * w, "mask size does not match {h}x{w}");
    let mut out = header("P4", w, h, None);
    for row in bits.chunks(w) {
        for byte in row.chunks(8) {
            let mut b = 0u8;
            for (i, &bit) in byte.iter().enumerate() {
                if bit {
                    b |= 0x80 >> i;
                }
            }
            out.push(b);
        }
    }
    Ok(out)
}

struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.data.get(self.pos) == Some(&b'#') {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        ensure!(start < self.pos, "truncated netpbm header");
        std::str::from_utf8(&self.data[start..self.pos]).context("non-ascii netpbm header")
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.next()?;
        tok.parse()
            .map_err(|_| anyhow!("bad number '{tok}' in netpbm header"))
    }
}

/// Decodes a binary P5 or P6 image (8- or 16-bit) into a latent.
pub fn decode_pnm(bytes: &[u8], map: &IntensityMap) -> Result<LatentImage> {
    let mut tok = Tokens {
        data: bytes,
        pos: 0,
    };
    let channels = match tok.next()? {
        "P5" => 1,
        "P6" => 3,
        other => bail!("unsupported image type '{other}', expected P5 or P6"),
    };
    let w = tok.number()?;
    let h = tok.number()?;
    let maxval = tok.number()?;
    ensure!((1..=65535).contains(&maxval), "bad maxval {maxval}");
    let start = tok.pos + 1;
    let wide = maxval > 255;
    let n = h * w * channels;
    let need = n * if wide { 2 } else { 1 };
    ensure!(
        bytes.len() >= start + need,
        "image data truncated: need {need} bytes"
    );
    let body = &bytes[start..start + need];
    let data = (0..n)
        .map(|i| {
            let s = if wide {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]])
            } else {
                body[i] as u16
            };
            map.decode(s, maxval as u16)
        })
        .collect();
    Ok(LatentImage::from_vec(h, w, channels, data)?)
}

/// Decodes a P4 bitmap.
pub fn decode_pbm(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let mut tok = Tokens {
        data: bytes,
        pos: 0,
    };
    ensure!(tok.next()? == "P4", "expected a P4 bitmap");
    let w = tok.number()?;
    let h = tok.number()?;
    let start = tok.pos + 1;
    let row_bytes = w.div_ceil(8);
    ensure!(
        bytes.len() >= start + row_bytes * h,
        "bitmap data truncated"
    );
    let mut bits = Vec::with_capacity(h * w);
    for r in 0..h {
        let row = &bytes[start + r * row_bytes..start + (r + 1) * row_bytes];
        for c in 0..w {
            bits.push(row[c / 8] & (0x80 >> (c % 8)) != 0);
        }
    }
    Ok((h, w, bits))
}

pub fn encode_lat(img: &LatentImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * img.len());
    out.extend_from_slice(LAT_MAGIC);
    for d in [img.height(), img.width(), img.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in img.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_lat(bytes: &[u8]) -> Result<LatentImage> {
    ensure!(
        bytes.len() >= 16 && &bytes[..4] == LAT_MAGIC,
        "not a latent file"
    );
    let dim =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h * w * c;
    ensure!(
        bytes.len() == 16 + 8 * n,
        "latent file size does not match {h}x{w}x{c}"
    );
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(LatentImage::from_vec(h, w, c, data)?)
}

/// Loads a latent from `.lat`, or from a P5/P6 image through `map`.
pub fn read_latent(path: &Path, map: &IntensityMap) -> Result<LatentImage> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    if bytes.starts_with(LAT_MAGIC) {
        decode_lat(&bytes)
    } else {
        decode_pnm(&bytes, map)
    }
    .with_context(|| format!("cannot decode {}", path.display()))
}

/// Nearest-neighbour upscaling by an integer factor.
pub fn upscale(img: &LatentImage, factor: usize) -> LatentImage {
    let (h, w, c) = img.shape();
    let mut out = LatentImage::zeros(h * factor, w * factor, c);
    for r in 0..h * factor {
        for col in 0..w * factor {
            for ch in 0..c {
                out.set(r, col, ch, img.get(r / factor, col / factor, ch));
            }
        }
    }
    out
}

/// Tiles equally-shaped images into a grid with `gap`-pixel separators
/// filled with `fill`. Missing tiles are left as `fill`.
pub fn contact_sheet(
    tiles: &[Vec<Option<LatentImage>>],
    tile_shape: (usize, usize, usize),
    gap: usize,
    fill: f64,
) -> LatentImage {
    let (th, tw, c) = tile_shape;
    let rows = tiles.len();
    let cols = tiles.iter().map(Vec::len).max().unwrap_or(0);
    let h = rows * th + (rows + 1) * gap;
    let w = cols * tw + (cols + 1) * gap;
    let mut out = LatentImage::filled(h.max(1), w.max(1), c, fill);
    for (i, row) in tiles.iter().enumerate() {
        for (j, tile) in row.iter().enumerate() {
            let Some(tile) = tile else { continue };
            let (r0, c0) = (gap + i * (th + gap), gap + j * (tw + gap));
            for r in 0..th {
                for col in 0..tw {
                    for ch in 0..c {
                        out.set(r0 + r, c0 + col, ch, tile.get(r, col, ch));
                    }
                }
            }
        }
    }
    out
}
