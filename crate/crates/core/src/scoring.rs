//! Per-frame anomaly scores: patch reconstruction error, normalized flow NLL
//! and their weighted sum.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor5;

/// Patch size and stride used by [`recon_score`].
pub const DEFAULT_PATCH: usize = 16;
pub const DEFAULT_PATCH_STRIDE: usize = 4;

/// The fusion-weight grid swept by the CLI.
pub const LAMBDA_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

/// Window starts along one axis: every `stride`, plus the last position
/// so the far border is always covered.
pub fn patch_starts(len: usize, n: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=len - n).step_by(stride).collect();
    if v.last() != Some(&(len - n)) {
        v.push(len - n);
    }
    v
}

/// Maximum mean of an `n x n` window over a row-major `h x w` error map.
pub fn max_patch_mean(err: &[f64], h: usize, w: usize, n: usize, stride: usize) -> f64 {
    // summed-area table with a zero border
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += err[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let at = |y: usize, x: usize| sat[y * (w + 1) + x];
    let area = (n * n) as f64;
    let xs = patch_starts(w, n, stride);
    let mut best = f64::NEG_INFINITY;
    for y in patch_starts(h, n, stride) {
        for &x in &xs {
            let s = at(y + n, x + n) - at(y, x + n) - at(y + n, x) + at(y, x);
            best = best.max(s / area);
        }
    }
    best
}

/// Per-frame `R_t` of one clip: the largest `n x n` patch mean of the
/// channel-mean absolute error.
pub fn recon_score(input: &Tensor5, output: &Tensor5, n: usize, stride: usize) -> Result<Vec<f64>> {
    if input.shape() != output.shape() {
        return Err(Error::Shape {
            op: "recon_score",
            lhs: input.shape(),
            rhs: output.shape(),
        });
    }
    let [b, c, t, h, w] = input.dims();
    if b != 1 {
        return Err(Error::Config(format!(
            "recon_score takes one clip, got batch {b}"
        )));
    }
    if n == 0 || stride == 0 || n > h.min(w) {
        return Err(Error::Config(format!(
            "patch size {n} (stride {stride}) does not fit {h}x{w} frames"
        )));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(t);
    for tt in 0..t {
        let mut err = vec![0.0; hw];
        for ch in 0..c {
            let base = input.shape().offset([0, ch, tt, 0, 0]);
            let a = &input.data()[base..base + hw];
            let o = &output.data()[base..base + hw];
            for ((e, x), y) in err.iter_mut().zip(a).zip(o) {
                *e += (x - y).abs();
            }
        }
        err.iter_mut().for_each(|e| *e /= c as f64);
        out.push(max_patch_mean(&err, h, w, n, stride));
    }
    Ok(out)
}

/// Averages values reported for the same frame by overlapping clips.
#[derive(Clone, Debug, Default)]
pub struct FrameAccumulator {
    acc: BTreeMap<usize, (f64, usize)>,
}

impl FrameAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, frame: usize, value: f64) {
        let e = self.acc.entry(frame).or_insert((0.0, 0));
        e.0 += value;
        e.1 += 1;
    }

    pub fn extend(&mut self, frames: &[usize], values: &[f64]) {
        for (&f, &v) in frames.iter().zip(values) {
            self.add(f, v);
        }
    }

    pub fn frames(&self) -> Vec<usize> {
        self.acc.keys().copied().collect()
    }

    /// Mean value per frame in frame order.
    pub fn means(&self) -> Vec<f64> {
        self.acc.values().map(|(s, n)| s / *n as f64).collect()
    }

    pub fn get(&self, frame: usize) -> Option<f64> {
        self.acc.get(&frame).map(|(s, n)| s / *n as f64)
    }
}

/// `(v - min) / (max - min)`; a constant (or single-value) series maps to
/// zeros.
pub fn minmax_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.len() < 2 || hi <= lo {
        if v.len() == 1 {
            log::warn!("normalizing a single-frame series; mapped to 0");
        }
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Repeat each static-slot value over its `tau` frames.
pub fn hold_static(slots: &[f64], tau: usize) -> Vec<f64> {
    slots
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, tau))
        .collect()
}

/// `L_t = minmax(nll_static_t + nll_dynamic_t)` over one video. Either
/// series may be absent for a one-path configuration.
pub fn nll_score(nll_static: Option<&[f64]>, nll_dynamic: Option<&[f64]>) -> Result<Vec<f64>> {
    let sum: Vec<f64> = match (nll_static, nll_dynamic) {
        (Some(s), Some(d)) => {
            if s.len() != d.len() {
                return Err(Error::Contract(format!(
                    "static nll has {} frames, dynamic nll has {}",
                    s.len(),
                    d.len()
                )));
            }
            s.iter().zip(d).map(|(a, b)| a + b).collect()
        }
        (Some(s), None) => s.to_vec(),
        (None, Some(d)) => d.to_vec(),
        (None, None) => return Err(Error::Contract("no nll series to score".into())),
    };
    Ok(minmax_normalize(&sum))
}

/// `S_t = R_t + lambda L_t`.
pub fn fuse(r: &[f64], l: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if r.len() != l.len() {
        return Err(Error::Contract(format!(
            "recon series has {} frames, nll series has {}",
            r.len(),
            l.len()
        )));
    }
    Ok(r.iter().zip(l).map(|(r, l)| r + lambda * l).collect())
}

/// One row of the score CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub frame_index: usize,
    pub recon: f64,
    pub nll_static: Option<f64>,
    pub nll_dynamic: Option<f64>,
    pub fused: f64,
    pub label: Option<u8>,
}

/// Per-frame scores of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub frame_index: Vec<usize>,
    /// Raw patch error `R_t`.
    pub recon: Vec<f64>,
    pub nll_static: Option<Vec<f64>>,
    pub nll_dynamic: Option<Vec<f64>>,
    pub lambda: f64,
    pub labels: Option<Vec<u8>>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.frame_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_index.is_empty()
    }

    /// Normalized NLL term `L_t` (zeros when no flow was used).
    pub fn nll_term(&self) -> Result<Vec<f64>> {
        match (&self.nll_static, &self.nll_dynamic) {
            (None, None) => Ok(vec![0.0; self.len()]),
            (s, d) => nll_score(s.as_deref(), d.as_deref()),
        }
    }

    /// `S_t` with both components min-max normalized over the video.
    pub fn fused_with(&self, lambda: f64) -> Result<Vec<f64>> {
        fuse(&minmax_normalize(&self.recon), &self.nll_term()?, lambda)
    }

    pub fn fused(&self) -> Result<Vec<f64>> {
        self.fused_with(self.lambda)
    }

    pub fn rows(&self) -> Result<Vec<ScoreRow>> {
        let fused = self.fused()?;
        Ok((0..self.len())
            .map(|i| ScoreRow {
                frame_index: self.frame_index[i],
                recon: self.recon[i],
                nll_static: self.nll_static.as_ref().map(|v| v[i]),
                nll_dynamic: self.nll_dynamic.as_ref().map(|v| v[i]),
                fused: fused[i],
                label: self.labels.as_ref().map(|v| v[i]),
            })
            .collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.rows()? {
            out.serialize(row)
                .map_err(|e| Error::Contract(format!("csv write: {e}")))?;
        }
        out.flush().map_err(|e| Error::io("<score csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parse a score CSV; `lambda` is not stored in the file.
    pub fn read_csv<R: Read>(r: R, lambda: f64) -> std::result::Result<Self, String> {
        let mut rd = csv::Reader::from_reader(r);
        let rows: Vec<ScoreRow> = rd
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let column =
            |f: fn(&ScoreRow) -> Option<f64>| -> std::result::Result<Option<Vec<f64>>, String> {
                let vals: Vec<Option<f64>> = rows.iter().map(f).collect();
                match (
                    vals.iter().all(Option::is_some),
                    vals.iter().all(Option::is_none),
                ) {
                    (true, _) => Ok(Some(vals.into_iter().flatten().collect())),
                    (_, true) => Ok(None),
                    _ => Err("nll column is only partly filled".into()),
                }
            };
        let labels: Vec<Option<u8>> = rows.iter().map(|r| r.label).collect();
        let labels = if labels.iter().all(Option::is_some) && !labels.is_empty() {
            Some(labels.into_iter().flatten().collect())
        } else {
            None
        };
        Ok(ScoreSeries {
            frame_index: rows.iter().map(|r| r.frame_index).collect(),
            recon: rows.iter().map(|r| r.recon).collect(),
            nll_static: column(|r| r.nll_static)?,
            nll_dynamic: column(|r| r.nll_dynamic)?,
            lambda,
            labels,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>, lambda: f64) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, lambda).map_err(|d| Error::format(path, d))
    }
}
