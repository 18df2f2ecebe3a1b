use std::fs;
use std::path::Path;

use crate::error::{FreaError, Result};

/// Magic prefix of the raw float image format.
pub const RAW_MAGIC: &[u8; 5] = b"FREA1";

/// Interleaved (`H×W×C`) pixel buffer with its maximal representable
/// intensity `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFile {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub q: f64,
    pub pixels: Vec<f64>,
}

impl ImageFile {
    pub fn new(height: usize, width: usize, channels: usize, q: f64, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(FreaError::shape(
                "ImageFile",
                format!(
                    "{height}x{width}x{channels} needs {} pixels, got {}",
                    height * width * channels,
                    pixels.len()
                ),
            ));
        }
        if !(q > 0.0) {
            return Err(FreaError::InvalidArgument(format!("Q must be positive, got {q}")));
        }
        Ok(ImageFile {
            height,
            width,
            channels,
            q,
            pixels,
        })
    }

    pub fn max_value(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Centre crop to `size × size`. Offsets are `(h - size) / 2`, `(w - size) / 2`.
    pub fn center_crop(&self, size: usize) -> Result<ImageFile> {
        if self.height < size || self.width < size {
            return Err(FreaError::shape(
                "center_crop",
                format!("{}x{} is smaller than {size}", self.height, self.width),
            ));
        }
        let (oy, ox) = ((self.height - size) / 2, (self.width - size) / 2);
        let c = self.channels;
        let mut pixels = Vec::with_capacity(size * size * c);
        for y in oy..oy + size {
            let start = (y * self.width + ox) * c;
            pixels.extend_from_slice(&self.pixels[start..start + size * c]);
        }
        ImageFile::new(size, size, c, self.q, pixels)
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FreaError::io(path, e))?;
    if bytes.starts_with(RAW_MAGIC) {
        decode_raw(&bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        Err(FreaError::UnsupportedFormat(path.to_path_buf()))
    }
}

/// Writes PGM for a `.pgm` extension and the raw float format otherwise.
pub fn write_image(path: impl AsRef<Path>, img: &ImageFile) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        write_pgm(path, img)
    } else {
        write_raw(path, img)
    }
}

pub fn write_raw(path: impl AsRef<Path>, img: &ImageFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw(img)?).map_err(|e| FreaError::io(path, e))
}

pub fn write_pgm(path: impl AsRef<Path>, img: &ImageFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)?).map_err(|e| FreaError::io(path, e))
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| FreaError::format("FREA1", format!("{what} {v} exceeds u32")))
}

pub(crate) fn encode_raw(img: &ImageFile) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(5 + 16 + img.pixels.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&dim_u32(img.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(img.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(img.channels, "channels")?.to_le_bytes());
    out.extend_from_slice(&(img.q as f32).to_le_bytes());
    for &p in &img.pixels {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn decode_raw(bytes: &[u8]) -> Result<ImageFile> {
    let fail = |d: &str| FreaError::format("FREA1", d.to_string());
    if bytes.len() < 21 || &bytes[..5] != RAW_MAGIC {
        return Err(fail("truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (u32_at(5), u32_at(9), u32_at(13));
    let q = f32::from_le_bytes(bytes[17..21].try_into().unwrap()) as f64;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| fail("dimensions overflow"))?;
    let payload = &bytes[21..];
    if payload.len() != n * 4 {
        return Err(fail(&format!(
            "expected {} payload bytes for {h}x{w}x{c}, found {}",
            n * 4,
            payload.len()
        )));
    }
    if !(q > 0.0) {
        return Err(fail(&format!("non-positive Q {q}")));
    }
    let pixels = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    ImageFile::new(h, w, c, q, pixels)
}

pub(crate) fn encode_pgm(img: &ImageFile) -> Result<Vec<u8>> {
    if img.channels != 1 {
        return Err(FreaError::format("PGM", "only single-channel images"));
    }
    let maxval = img.q.round();
    if !(1.0..=65535.0).contains(&maxval) {
        return Err(FreaError::format("PGM", format!("Q {} outside 1..=65535", img.q)));
    }
    let maxval = maxval as u32;
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    for &p in &img.pixels {
        let v = p.round().clamp(0.0, maxval as f64) as u16;
        if maxval < 256 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode_pgm(bytes: &[u8]) -> Result<ImageFile> {
    let fail = |d: String| FreaError::format("PGM", d);
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(fail("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(fail(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| fail(format!("bad header number: {e}")))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(fail("missing whitespace after maxval".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(fail(format!("maxval {maxval} outside 1..=65535")));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    if payload.len() < w * h * bps {
        return Err(fail(format!(
            "truncated payload: need {} bytes, found {}",
            w * h * bps,
            payload.len()
        )));
    }
    let pixels = if bps == 1 {
        payload[..w * h].iter().map(|&b| b as f64).collect()
    } else {
        payload[..w * h * 2]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64)
            .collect()
    };
    ImageFile::new(h, w, 1, maxval as f64, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_header_layout() {
        let img = ImageFile::new(1, 2, 1, 255.0, vec![1.0, 2.5]).unwrap();
        let bytes = encode_raw(&img).unwrap();
        assert_eq!(&bytes[..5], b"FREA1");
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &1u32.to_le_bytes());
        assert_eq!(&bytes[17..21], &255f32.to_le_bytes());
        assert_eq!(&bytes[25..29], &2.5f32.to_le_bytes());
        assert_eq!(decode_raw(&bytes).unwrap(), img);
    }

    #[test]
    fn raw_rejects_truncation() {
        let img = ImageFile::new(2, 2, 1, 1.0, vec![0.0; 4]).unwrap();
        let bytes = encode_raw(&img).unwrap();
        assert!(decode_raw(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_raw(&bytes[..10]).is_err());
    }

    #[test]
    fn pgm_8bit_maxval_is_q() {
        let bytes = b"P5\n2 2\n255\n\x00\x10\x80\xff";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.q, 255.0);
        assert_eq!((img.height, img.width), (2, 2));
        assert_eq!(img.pixels, vec![0.0, 16.0, 128.0, 255.0]);
    }

    #[test]
    fn pgm_16bit_is_big_endian() {
        // 0x0102 = 258, 0xff00 = 65280, 0x0001 = 1
        let bytes = b"P5 # comment\n3 1\n65535\n\x01\x02\xff\x00\x00\x01";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.pixels, vec![258.0, 65280.0, 1.0]);
        assert_eq!(img.q, 65535.0);
        let enc = encode_pgm(&img).unwrap();
        assert_eq!(enc[enc.len() - 6..], bytes[bytes.len() - 6..]);
    }

    #[test]
    fn pgm_malformed_headers() {
        assert!(decode_pgm(b"P5\n2 x\n255\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n2 2\n0\n\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn center_crop_offsets() {
        let w = 5;
        let img = ImageFile::new(5, w, 1, 100.0, (0..25).map(|v| v as f64).collect()).unwrap();
        let c = img.center_crop(3).unwrap();
        assert_eq!(c.pixels, vec![6.0, 7.0, 8.0, 11.0, 12.0, 13.0, 16.0, 17.0, 18.0]);
        assert!(img.center_crop(6).is_err());
    }
}
