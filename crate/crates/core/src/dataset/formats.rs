//! On-disk encodings of the label layers.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::raster::Landmark;

use super::write_atomic;

const DEPTH_MAGIC: &[u8; 4] = b"FSDP";
const PLANE_MAGIC: &[u8; 4] = b"FSFP";
const LAYER_VERSION: u32 = 1;

fn png_bytes(write: impl FnOnce(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    write(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn write_rgb_png(path: &Path, width: u32, height: u32, pixels: &[[u8; 3]]) -> Result<()> {
    let raw = pixels.iter().flatten().copied().collect();
    let img = RgbImage::from_raw(width, height, raw).ok_or_else(|| Error::format(path, "pixel count does not match dimensions"))?;
    write_atomic(path, &png_bytes(|b| img.write_to(b, ImageFormat::Png), path)?)
}

pub fn write_gray_png(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(width, height, pixels.to_vec())
        .ok_or_else(|| Error::format(path, "pixel count does not match dimensions"))?;
    write_atomic(path, &png_bytes(|b| img.write_to(b, ImageFormat::Png), path)?)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_rgb_png(path: &Path) -> Result<(u32, u32, Vec<[u8; 3]>)> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.pixels().map(|p| p.0).collect()))
}

pub fn read_gray_png(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = open_image(path)?;
    if img.color() != image::ColorType::L8 {
        return Err(Error::format(path, "expected an 8-bit single-channel image"));
    }
    let img = img.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw()))
}

/// Quantization step of the 16-bit depth encoding for a depth layer.
pub fn depth_scale(depth: &[f32]) -> (f64, f64) {
    let finite = depth.iter().filter(|d| d.is_finite()).map(|&d| f64::from(d));
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d), b.max(d)));
    if !lo.is_finite() {
        return (1.0, 0.0);
    }
    let scale = if hi > lo { (hi - lo) / 65534.0 } else { 1.0 };
    (scale, lo)
}

/// Depth as 16-bit codes after a header of magic, version, dimensions,
/// scale and offset. Code 0 is background; code `c > 0` decodes to
/// `offset + (c - 1) * scale`.
pub fn encode_depth(width: u32, height: u32, depth: &[f32]) -> Vec<u8> {
    let (scale, offset) = depth_scale(depth);
    let mut out = Vec::with_capacity(32 + 2 * depth.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&LAYER_VERSION.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&scale.to_le_bytes());
    out.extend_from_slice(&offset.to_le_bytes());
    for &d in depth {
        let code: u16 = if d.is_finite() {
            (1.0 + ((f64::from(d) - offset) / scale).round()).clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&code.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        let slice = self.bytes.get(self.at..end).ok_or_else(|| Error::format(self.path, "truncated file"))?;
        self.at = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(u32, u32)> {
        if self.take(4)? != magic {
            return Err(Error::format(self.path, "bad magic"));
        }
        let version = self.u32()?;
        if version != LAYER_VERSION {
            return Err(Error::format(self.path, format!("unsupported layer version {version}")));
        }
        let (w, h) = (self.u32()?, self.u32()?);
        if w == 0 || h == 0 || (w as usize).saturating_mul(h as usize) > 1 << 28 {
            return Err(Error::format(self.path, "implausible dimensions"));
        }
        Ok((w, h))
    }

    fn finish(&self) -> Result<()> {
        if self.at == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::format(self.path, "trailing bytes"))
        }
    }
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let mut r = Reader { bytes, at: 0, path };
    let (w, h) = r.header(DEPTH_MAGIC)?;
    let (scale, offset) = (r.f64()?, r.f64()?);
    if !(scale.is_finite() && scale > 0.0 && offset.is_finite()) {
        return Err(Error::format(path, "invalid depth scale or offset"));
    }
    let codes = r.take(2 * (w * h) as usize)?;
    r.finish()?;
    let depth = codes
        .chunks_exact(2)
        .map(|c| match u16::from_le_bytes([c[0], c[1]]) {
            0 => f32::INFINITY,
            code => (offset + f64::from(code - 1) * scale) as f32,
        })
        .collect();
    Ok((w, h, depth))
}

fn tag_bytes(tag: &str) -> [u8; 8] {
    let mut out = [0u8; 8];
    for (o, b) in out.iter_mut().zip(tag.bytes()) {
        *o = b;
    }
    out
}

/// Float plane: magic, version, dimensions, channel count, an 8-byte layer
/// tag, then little-endian f32 samples.
pub fn encode_plane(tag: &str, width: u32, height: u32, channels: u32, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 4 * data.len());
    out.extend_from_slice(PLANE_MAGIC);
    out.extend_from_slice(&LAYER_VERSION.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&tag_bytes(tag));
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_plane(bytes: &[u8], tag: &str, channels: u32, path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let mut r = Reader { bytes, at: 0, path };
    let (w, h) = r.header(PLANE_MAGIC)?;
    if r.u32()? != channels {
        return Err(Error::format(path, format!("expected {channels} channels")));
    }
    if r.take(8)? != tag_bytes(tag) {
        return Err(Error::format(path, format!("expected layer tag {tag}")));
    }
    let raw = r.take(4 * (w * h * channels) as usize)?;
    r.finish()?;
    Ok((w, h, raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
}

/// One line per landmark: `index x y visible depth`.
pub fn encode_landmarks(landmarks: &[Landmark]) -> String {
    let mut out = String::from("# index x y visible depth\n");
    for (i, l) in landmarks.iter().enumerate() {
        out.push_str(&format!("{i} {} {} {} {}\n", l.x, l.y, u8::from(l.visible), l.depth));
    }
    out
}

pub fn decode_landmarks(text: &str, path: &Path) -> Result<Vec<Landmark>> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: expected `index x y visible depth`", line_no + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 || fields[0].parse::<usize>().map_err(|_| bad())? != out.len() {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let visible = match fields[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        out.push(Landmark { x: num(fields[1])?, y: num(fields[2])?, depth: num(fields[4])?, visible });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_round_trip_within_quantization() {
        let depth: Vec<f32> = (0..64).map(|i| if i % 7 == 0 { f32::INFINITY } else { 0.4 + 0.013 * i as f32 }).collect();
        let bytes = encode_depth(8, 8, &depth);
        let (w, h, back) = decode_depth(&bytes, Path::new("d")).unwrap();
        assert_eq!((w, h), (8, 8));
        let (scale, _) = depth_scale(&depth);
        for (a, b) in depth.iter().zip(&back) {
            if a.is_finite() {
                assert!((f64::from(*a) - f64::from(*b)).abs() <= 0.5 * scale + 1e-7);
            } else {
                assert!(b.is_infinite());
            }
        }
        assert!(decode_depth(&bytes[..bytes.len() - 1], Path::new("d")).is_err());
    }

    #[test]
    fn constant_and_empty_depth() {
        for depth in [vec![0.7f32; 4], vec![f32::INFINITY; 4]] {
            let (_, _, back) = decode_depth(&encode_depth(2, 2, &depth), Path::new("d")).unwrap();
            assert_eq!(back, depth);
        }
    }

    #[test]
    fn plane_round_trip_and_tag_check() {
        let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        let bytes = encode_plane("uvs", 3, 2, 2, &data);
        assert_eq!(decode_plane(&bytes, "uvs", 2, Path::new("p")).unwrap(), (3, 2, data));
        assert!(decode_plane(&bytes, "normals", 2, Path::new("p")).is_err());
        assert!(decode_plane(&bytes, "uvs", 3, Path::new("p")).is_err());
    }

    #[test]
    fn landmark_text_round_trip() {
        let lms = vec![
            Landmark { x: 1.0 / 3.0, y: 64.125, depth: 0.61, visible: true },
            Landmark { x: -5.5, y: 1e-9, depth: -0.2, visible: false },
        ];
        let text = encode_landmarks(&lms);
        assert_eq!(decode_landmarks(&text, Path::new("l")).unwrap(), lms);
        assert!(decode_landmarks("0 1 2 3\n", Path::new("l")).is_err());
        assert!(decode_landmarks("1 1 2 1 3\n", Path::new("l")).is_err());
    }
}
