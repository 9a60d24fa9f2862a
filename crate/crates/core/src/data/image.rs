//! Binary PGM/PPM (P5/P6, maxval 255) and area resampling.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit image with interleaved channels (1 = gray, 3 = RGB).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Config(format!(
                "images have 1 or 3 channels, not {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Config(format!(
                "{} bytes for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Planar `[0, 1]` values, channel-major: `data[c][y * w + x]`.
    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels)
            .map(|c| {
                self.data
                    .iter()
                    .skip(c)
                    .step_by(self.channels)
                    .map(|&v| f64::from(v) / 255.0)
                    .collect()
            })
            .collect()
    }

    /// Channel mean as `[0, 1]` values.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| {
                px.iter().map(|&v| f64::from(v)).sum::<f64>() / (255.0 * self.channels as f64)
            })
            .collect()
    }
}

fn header_token<R: BufRead>(r: &mut R) -> std::io::Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            b => tok.push(b),
        }
    }
    Ok(String::from_utf8_lossy(&tok).into_owned())
}

/// Parse a P5 or P6 stream.
pub fn read_pnm_from<R: Read>(reader: R) -> std::result::Result<Image, String> {
    let mut r = BufReader::new(reader);
    let mut next = || header_token(&mut r).map_err(|e| e.to_string());
    let magic = next()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(format!(
                "unsupported magic {other:?}; only binary P5/P6 are read"
            ))
        }
    };
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = next()?;
        t.parse().map_err(|_| format!("bad {what} {t:?}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} is not supported (only 255)"));
    }
    let mut data = vec![0u8; width * height * channels];
    r.read_exact(&mut data)
        .map_err(|e| format!("truncated pixel data: {e}"))?;
    Image::new(width, height, channels, data).map_err(|e| e.to_string())
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_pnm_from(f).map_err(|detail| Error::format(path, detail))
}

pub fn write_pnm_to<W: Write>(img: &Image, mut w: W) -> std::io::Result<()> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    w.flush()
}

pub fn write_pnm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_pnm_to(img, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// Overlap of source cell `i` (width `1`) with target cell `j` of width
/// `scale` in source units.
fn overlaps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let lo = j as f64 * scale;
            let hi = lo + scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Area (box) resampling of a row-major `h x w` plane to `oh x ow`. Each
/// output pixel is the mean of the input area it covers.
pub fn area_resample(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    assert_eq!(plane.len(), h * w, "plane size");
    if (h, w) == (oh, ow) {
        return plane.to_vec();
    }
    let ys = overlaps(h, oh);
    let xs = overlaps(w, ow);
    let mut out = Vec::with_capacity(oh * ow);
    for wy in &ys {
        for wx in &xs {
            let mut acc = 0.0;
            for &(y, a) in wy {
                for &(x, b) in wx {
                    acc += a * b * plane[y * w + x];
                }
            }
            out.push(acc);
        }
    }
    out
}
