//! Float images as PFM, previews as 8-bit PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad PFM: {0}")]
    BadPfm(String),
    #[error("PNG: {0}")]
    Png(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Grayscale PFM bytes: `Pf`, `W H`, scale `-1.0` (little endian), rows bottom to top.
pub fn encode_pfm(img: &Tensor) -> Result<Vec<u8>, IoError> {
    if img.rank() != 2 {
        return Err(IoError::BadPfm(format!("need rank 2, got {:?}", img.shape())));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for r in (0..h).rev() {
        for &v in &img.data()[r * w..(r + 1) * w] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor, IoError> {
    let bad = |m: &str| IoError::BadPfm(m.to_string());
    let mut pos = 0;
    let mut token = || -> Result<String, IoError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(t)
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(bad(&format!("unsupported magic {magic:?}")));
    }
    let w: usize = token()?.parse().map_err(|_| bad("width"))?;
    let h: usize = token()?.parse().map_err(|_| bad("height"))?;
    let scale: f64 = token()?.parse().map_err(|_| bad("scale"))?;
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let need = w * h * 4;
    if bytes.len() < pos + need {
        return Err(bad("truncated data"));
    }
    let data = &bytes[pos..pos + need];
    let read = |i: usize| {
        let b = [data[4 * i], data[4 * i + 1], data[4 * i + 2], data[4 * i + 3]];
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        let src = (h - 1 - r) * w;
        for c in 0..w {
            out[r * w + c] = read(src + c) as f64;
        }
    }
    Ok(Tensor::from_vec(&[h, w], out)?)
}

pub fn write_pfm(path: &Path, img: &Tensor) -> Result<(), IoError> {
    let bytes = encode_pfm(img)?;
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f.write_all(&bytes).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<Tensor, IoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err(path))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    decode_pfm(&bytes)
}

/// 8-bit PNG with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image8 {
    /// Linear map of `lo..=hi` to `0..=255`, clamped.
    pub fn gray_from(img: &Tensor, lo: f64, hi: f64) -> Self {
        let span = if hi > lo { hi - lo } else { 1.0 };
        Self {
            width: img.shape()[1],
            height: img.shape()[0],
            channels: 1,
            data: img
                .data()
                .iter()
                .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    /// Gray preview spanning the range of values under `mask`.
    pub fn gray_auto(img: &Tensor, mask: Option<&Tensor>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, &v) in img.data().iter().enumerate() {
            if mask.is_none_or(|m| m.data()[i] == 1.0) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let mut out = Self::gray_from(img, lo, hi);
        if let Some(m) = mask {
            for (p, &mm) in out.data.iter_mut().zip(m.data()) {
                if mm != 1.0 {
                    *p = 0;
                }
            }
        }
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>, IoError> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(match self.channels {
                1 => png::ColorType::Grayscale,
                3 => png::ColorType::Rgb,
                n => return Err(IoError::Png(format!("unsupported channel count {n}"))),
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| IoError::Png(e.to_string()))?;
            w.write_image_data(&self.data)
                .map_err(|e| IoError::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IoError> {
        let png_err = |e: png::DecodingError| IoError::Png(e.to_string());
        let mut reader = png::Decoder::new(std::io::Cursor::new(bytes))
            .read_info()
            .map_err(png_err)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| IoError::Png("image too large".into()))?;
        let mut data = vec![0; size];
        let info = reader.next_frame(&mut data).map_err(png_err)?;
        let channels = match (info.color_type, info.bit_depth) {
            (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
            (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
            other => return Err(IoError::Png(format!("unsupported format {other:?}"))),
        };
        data.truncate(info.buffer_size());
        Ok(Self {
            width: info.width as usize,
            height: info.height as usize,
            channels,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.encode()?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::decode(&std::fs::read(path).map_err(io_err(path))?)
    }
}
