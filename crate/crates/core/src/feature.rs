//! Dense `H×W×C` feature grids and the PGM dump format.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `H×W×C` grid of real features; channel is the fastest axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::config(format!(
                "feature buffer of length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
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

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = (row * self.width + col) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One channel as a row-major `H×W` plane.
    pub fn channel_plane(&self, channel: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels.max(1))
            .copied()
            .collect()
    }
}

/// Min-max normalize to `[0, 255]`. A constant input maps to all zeros.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if !(span > 0.0) {
                0
            } else {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

/// Clamp `[0, 1]` intensities straight to bytes without rescaling.
pub fn unit_to_u8(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Encode a binary (P5) 8-bit PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pgm pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let bytes = encode_pgm(width, height, pixels);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Decode a P5 PGM produced by [`encode_pgm`]; returns `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Domain("malformed PGM".into());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let body = &bytes[pos + 1..];
    if body.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, body.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_channel_fastest() {
        let fm = FeatureMap::from_vec(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(fm.at(1, 0), &[4.0, 5.0]);
        assert_eq!(fm.channel_plane(1), vec![1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(FeatureMap::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn constant_normalizes_to_uniform() {
        assert!(normalize_to_u8(&[3.0; 5]).iter().all(|&b| b == 0));
        assert_eq!(normalize_to_u8(&[0.0, 1.0]), vec![0, 255]);
    }

    #[test]
    fn pgm_round_trip() {
        let px: Vec<u8> = (0..12).collect();
        let enc = encode_pgm(4, 3, &px);
        assert!(enc.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(decode_pgm(&enc).unwrap(), (4, 3, px));
    }
}
