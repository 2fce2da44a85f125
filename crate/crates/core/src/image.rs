//! Dense per-pixel maps and linear images with their on-disk formats.
//!
//! Raw files start with a one-line JSON header `{"h":..,"w":..,"channels":..}`
//! followed by little-endian float32 samples in planar channel order. Byte
//! planes (coverage masks) add `"dtype":"u8"` and store one byte per sample.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An H×W×C map of `f64` samples stored pixel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Map {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} map needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Map {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Map {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Map {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let idx = (i * self.width + j) * self.channels + c;
        self.data[idx] = v;
    }

    /// All channels of pixel `p` (row-major pixel index).
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[p * c..(p + 1) * c]
    }

    pub fn same_shape(&self, other: &Map) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Map, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Map {
        Map {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Extracts channel `c` as a single-channel map.
    pub fn channel(&self, c: usize) -> Map {
        Map {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Values rounded through `f32`, i.e. exactly what a raw file stores.
    pub fn quantize_f32(&self) -> Map {
        self.map(|v| v as f32 as f64)
    }
}

/// Linear-radiance RGB image: nonnegative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage(Map);

impl LinearImage {
    pub fn new(map: Map) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::Shape(format!(
                "linear image needs 3 channels, got {}",
                map.channels()
            )));
        }
        if let Some((idx, v)) = map
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Numeric(format!(
                "linear image sample {idx} is {v}; radiance must be finite and nonnegative"
            )));
        }
        Ok(LinearImage(map))
    }

    pub fn black(height: usize, width: usize) -> Self {
        LinearImage(Map::zeros(height, width, 3))
    }

    pub fn map(&self) -> &Map {
        &self.0
    }

    pub fn into_map(self) -> Map {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn rgb(&self, p: usize) -> [f64; 3] {
        let px = self.0.pixel(p);
        [px[0], px[1], px[2]]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    h: usize,
    w: usize,
    channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dtype: Option<String>,
}

/// Serializes a map as header line plus planar little-endian f32.
pub fn write_raw_f32(map: &Map) -> Vec<u8> {
    let header = RawHeader {
        h: map.height(),
        w: map.width(),
        channels: map.channels(),
        dtype: None,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(map.data().len() * 4);
    for c in 0..map.channels() {
        for p in 0..map.pixels() {
            out.extend_from_slice(&(map.pixel(p)[c] as f32).to_le_bytes());
        }
    }
    out
}

fn split_header(bytes: &[u8]) -> Result<(RawHeader, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("raw file has no header line".into()))?;
    let header: RawHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Format(format!("bad raw header: {e}")))?;
    Ok((header, &bytes[nl + 1..]))
}

pub fn read_raw_f32(bytes: &[u8]) -> Result<Map> {
    let (header, body) = split_header(bytes)?;
    if header.dtype.as_deref().is_some_and(|d| d != "f32") {
        return Err(Error::Format(format!("expected f32 raw, found {:?}", header.dtype)));
    }
    let n = header.h * header.w;
    if body.len() != n * header.channels * 4 {
        return Err(Error::Format(format!(
            "raw body has {} bytes, header implies {}",
            body.len(),
            n * header.channels * 4
        )));
    }
    let mut data = vec![0.0; n * header.channels];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let c = k / n;
        let p = k % n;
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        data[p * header.channels + c] = v as f64;
    }
    Map::new(header.h, header.w, header.channels, data)
}

/// Serializes a binary plane (values 0/1) as bytes after the header.
pub fn write_raw_u8(mask: &Map) -> Vec<u8> {
    let header = RawHeader {
        h: mask.height(),
        w: mask.width(),
        channels: mask.channels(),
        dtype: Some("u8".into()),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for c in 0..mask.channels() {
        for p in 0..mask.pixels() {
            out.push(u8::from(mask.pixel(p)[c] > 0.5));
        }
    }
    out
}

pub fn read_raw_u8(bytes: &[u8]) -> Result<Map> {
    let (header, body) = split_header(bytes)?;
    if header.dtype.as_deref() != Some("u8") {
        return Err(Error::Format(format!("expected u8 raw, found {:?}", header.dtype)));
    }
    let n = header.h * header.w;
    if body.len() != n * header.channels {
        return Err(Error::Format("u8 raw body length mismatch".into()));
    }
    let mut data = vec![0.0; n * header.channels];
    for (k, &b) in body.iter().enumerate() {
        data[(k % n) * header.channels + k / n] = f64::from(b);
    }
    Map::new(header.h, header.w, header.channels, data)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_raw(path: &Path, map: &Map) -> Result<()> {
    write_file(path, &write_raw_f32(map))
}

pub fn load_raw(path: &Path) -> Result<Map> {
    read_raw_f32(&read_file(path)?)
}

pub fn load_image(path: &Path) -> Result<LinearImage> {
    LinearImage::new(load_raw(path)?)
}

/// sRGB opto-electronic transfer function on a value already clamped to [0,1].
pub fn srgb_encode(linear: f64) -> f64 {
    let v = linear.clamp(0.0, 1.0);
    if v == 1.0 {
        // The power branch evaluates to 1 − 1 ulp here.
        1.0
    } else if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(encoded: f64) -> f64 {
    let v = encoded.clamp(0.0, 1.0);
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear value → 8-bit sRGB after exposure scaling and clamping.
pub fn srgb_byte(linear: f64, exposure: f64) -> u8 {
    (srgb_encode(linear * exposure) * 255.0).round() as u8
}

/// Encodes an 8-bit sRGB PNG preview.
pub fn encode_srgb_png(img: &LinearImage, exposure: f64) -> Result<Vec<u8>> {
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(Error::Domain(format!("exposure must be > 0, got {exposure}")));
    }
    let bytes: Vec<u8> = img.map().data().iter().map(|&v| srgb_byte(v, exposure)).collect();
    encode_png_rgb8(img.width(), img.height(), &bytes)
}

/// Grayscale heat preview of a single-channel map in [0,1].
pub fn encode_gray_png(map: &Map) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = (0..map.pixels())
        .map(|p| (map.pixel(p)[0].clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, map.width() as u32, map.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        w.write_image_data(&bytes)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

fn encode_png_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        w.write_image_data(rgb)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG into raw bytes plus dimensions.
pub fn decode_png_rgb8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png decode: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png decode: {e}")))?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_endpoints_and_midpoint() {
        assert_eq!(srgb_byte(0.0, 1.0), 0);
        assert_eq!(srgb_byte(1.0, 1.0), 255);
        assert_eq!(srgb_byte(7.5, 1.0), 255);
        // 1.055 * 0.5^(1/2.4) - 0.055 = 0.735357..., x255 = 187.52
        assert_eq!(srgb_byte(0.5, 1.0), 188);
        assert_eq!(srgb_byte(0.25, 2.0), 188);
    }

    #[test]
    fn srgb_decode_inverts_encode() {
        for i in 0..=100 {
            let v = i as f64 / 100.0;
            assert!((srgb_decode(srgb_encode(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let map = Map::from_fn(3, 5, 3, |i, j, c| ((i * 7 + j * 3 + c) as f32 * 0.37) as f64);
        let bytes = write_raw_f32(&map);
        let back = read_raw_f32(&bytes).unwrap();
        assert_eq!(back, map);
        assert_eq!(write_raw_f32(&back), bytes);
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&bytes[..header_end], br#"{"h":3,"w":5,"channels":3}"#);
        // Planar layout: the first plane holds channel 0 of every pixel.
        let first = f32::from_le_bytes(bytes[header_end + 1..header_end + 5].try_into().unwrap());
        assert_eq!(first as f64, map.get(0, 0, 0));
        let second = f32::from_le_bytes(bytes[header_end + 5..header_end + 9].try_into().unwrap());
        assert_eq!(second as f64, map.get(0, 1, 0));
    }

    #[test]
    fn u8_plane_round_trip() {
        let mask = Map::from_fn(4, 4, 1, |i, j, _| ((i + j) % 2) as f64);
        assert_eq!(read_raw_u8(&write_raw_u8(&mask)).unwrap(), mask);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let map = Map::zeros(2, 2, 3);
        let mut bytes = write_raw_f32(&map);
        bytes.pop();
        assert!(matches!(read_raw_f32(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn png_round_trip_preserves_bytes() {
        let img = LinearImage::new(Map::from_fn(4, 6, 3, |i, j, c| (i + j + c) as f64 / 12.0)).unwrap();
        let png = encode_srgb_png(&img, 1.0).unwrap();
        let (w, h, bytes) = decode_png_rgb8(&png).unwrap();
        assert_eq!((w, h), (6, 4));
        let expected: Vec<u8> = img.map().data().iter().map(|&v| srgb_byte(v, 1.0)).collect();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn negative_radiance_rejected() {
        let m = Map::new(1, 1, 3, vec![0.0, -1.0, 0.0]).unwrap();
        assert!(LinearImage::new(m).is_err());
    }
}
