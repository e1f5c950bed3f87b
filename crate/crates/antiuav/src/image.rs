//! Lossless raster frames: binary PGM (grayscale) and PPM (RGB).
//!
//! Frames are stored one file per frame as 8-bit binary netpbm images —
//! self-describing, lossless, and byte-deterministic, which keeps rerun
//! comparisons trivial. Pixel data is row-major, interleaved by channel
//! (HWC).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BadBufferSize { got: usize, expected: usize },
    #[error("malformed netpbm header: {0}")]
    BadHeader(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),
}

/// An 8-bit raster frame, 1 channel (infrared) or 3 channels (visible).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    /// Row-major, interleaved (HWC) pixel bytes.
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannels(channels));
        }
        let expected = height * width * channels;
        if pixels.len() != expected {
            return Err(ImageError::BadBufferSize {
                got: pixels.len(),
                expected,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("filled buffer has the right size")
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

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// File extension of the netpbm flavor for this channel count.
    pub fn extension(&self) -> &'static str {
        if self.channels == 1 {
            "pgm"
        } else {
            "ppm"
        }
    }

    /// Writes the frame as binary PGM (1 channel) or PPM (3 channels).
    pub fn write_netpbm(&self, w: &mut impl Write) -> Result<(), ImageError> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(w, "{}\n{} {}\n255\n", magic, self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    /// Reads a binary PGM/PPM frame.
    pub fn read_netpbm(r: &mut impl Read) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let (channels, mut pos) = match bytes.get(0..2) {
            Some(b"P5") => (1usize, 2usize),
            Some(b"P6") => (3usize, 2usize),
            _ => return Err(ImageError::BadHeader("missing P5/P6 magic".to_string())),
        };
        // Three whitespace-separated header fields follow: width, height,
        // maxval. Comments are not emitted by this crate and are rejected.
        let mut fields = [0usize; 3];
        for field in fields.iter_mut() {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::BadHeader("missing numeric field".to_string()));
            }
            let text = std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| ImageError::BadHeader("non-utf8 header".to_string()))?;
            *field = text
                .parse()
                .map_err(|_| ImageError::BadHeader(format!("bad field {text:?}")))?;
        }
        if fields[2] != 255 {
            return Err(ImageError::BadHeader(format!(
                "unsupported maxval {} (expected 255)",
                fields[2]
            )));
        }
        // Exactly one whitespace byte separates the header from pixel data.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(ImageError::BadHeader("missing header terminator".to_string()));
        }
        pos += 1;
        let (width, height) = (fields[0], fields[1]);
        let expected = width * height * channels;
        let data = bytes[pos..].to_vec();
        if data.len() != expected {
            return Err(ImageError::BadBufferSize {
                got: data.len(),
                expected,
            });
        }
        Self::new(height, width, channels, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let mut buf = Vec::new();
        self.write_netpbm(&mut buf)?;
        std::fs::write(path, buf).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_netpbm(&mut bytes.as_slice())
    }

    /// Converts to a planar (CHW) `f64` array with values in `[0, 1]`.
    pub fn to_chw_f64(&self) -> crate::tape::Arr {
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut data = vec![0.0f64; c * h * w];
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(ci * h + y) * w + x] = self.get(y, x, ci) as f64 / 255.0;
                }
            }
        }
        crate::tape::Arr::from_vec(vec![c, h, w], data)
    }
}

/// File name of frame `t` for the given channel count (`frame_%06d.pgm` or
/// `.ppm`).
pub fn frame_file_name(t: usize, channels: usize) -> String {
    let ext = if channels == 1 { "pgm" } else { "ppm" };
    format!("frame_{t:06}.{ext}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn netpbm_round_trip_grayscale() {
        let mut img = RasterImage::filled(3, 5, 1, 0);
        for y in 0..3 {
            for x in 0..5 {
                img.set(y, x, 0, (y * 40 + x * 7) as u8);
            }
        }
        let mut bytes = Vec::new();
        img.write_netpbm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        let back = RasterImage::read_netpbm(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn netpbm_round_trip_rgb() {
        let mut img = RasterImage::filled(2, 2, 3, 0);
        let mut v = 0u8;
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    img.set(y, x, c, v);
                    v = v.wrapping_add(37);
                }
            }
        }
        let mut bytes = Vec::new();
        img.write_netpbm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"P6\n2 2\n255\n"));
        let back = RasterImage::read_netpbm(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn writes_are_byte_deterministic() {
        let img = RasterImage::filled(4, 4, 1, 128);
        let mut a = Vec::new();
        let mut b = Vec::new();
        img.write_netpbm(&mut a).unwrap();
        img.write_netpbm(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(RasterImage::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(RasterImage::new(2, 2, 1, vec![0; 3]).is_err());
        assert!(RasterImage::read_netpbm(&mut b"P4\n1 1\n255\n\0".as_slice()).is_err());
        // Truncated pixel payload.
        assert!(RasterImage::read_netpbm(&mut b"P5\n2 2\n255\n\0\0".as_slice()).is_err());
    }

    #[test]
    fn chw_conversion_is_planar_and_scaled() {
        let mut img = RasterImage::filled(1, 2, 3, 0);
        img.set(0, 0, 0, 255); // R of pixel 0
        img.set(0, 1, 2, 51); // B of pixel 1
        let arr = img.to_chw_f64();
        assert_eq!(arr.shape(), &[3, 1, 2]);
        assert_eq!(arr.data()[0], 1.0); // channel 0, pixel 0
        assert_eq!(arr.data()[5], 0.2); // channel 2, pixel 1
    }

    #[test]
    fn frame_names_are_zero_padded() {
        assert_eq!(frame_file_name(7, 1), "frame_000007.pgm");
        assert_eq!(frame_file_name(123456, 3), "frame_123456.ppm");
    }
}
