//! Dense rank-5 tensors in `(batch, channel, time, height, width)` order.
//!
//! Storage is row-major `f64`. A [`Tensor5`] is a plain value; gradient
//! bookkeeping lives on the [`Tape`](crate::autodiff::Tape).

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Magic bytes of the packed tensor file format.
pub const MAGIC: &[u8; 4] = b"T5v1";

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape5(pub [usize; 5]);

impl Shape5 {
    pub const fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Shape5([n, c, t, h, w])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn batch(&self) -> usize {
        self.0[0]
    }

    pub fn channels(&self) -> usize {
        self.0[1]
    }

    pub fn time(&self) -> usize {
        self.0[2]
    }

    pub fn height(&self) -> usize {
        self.0[3]
    }

    pub fn width(&self) -> usize {
        self.0[4]
    }

    /// Row-major strides.
    pub fn strides(&self) -> [usize; 5] {
        let d = self.0;
        [
            d[1] * d[2] * d[3] * d[4],
            d[2] * d[3] * d[4],
            d[3] * d[4],
            d[4],
            1,
        ]
    }

    pub fn offset(&self, idx: [usize; 5]) -> usize {
        let s = self.strides();
        idx.iter().zip(s.iter()).map(|(i, s)| i * s).sum()
    }

    pub fn with(mut self, axis: usize, len: usize) -> Self {
        self.0[axis] = len;
        self
    }

    /// Elements per batch entry.
    pub fn per_sample(&self) -> usize {
        self.0[1..].iter().product()
    }
}

impl fmt::Debug for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, t, h, w] = self.0;
        write!(f, "{n}x{c}x{t}x{h}x{w}")
    }
}

impl From<[usize; 5]> for Shape5 {
    fn from(d: [usize; 5]) -> Self {
        Shape5(d)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor5 {
    shape: Shape5,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor5")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor5 {
    pub fn from_vec(shape: impl Into<Shape5>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                detail: format!("{} elements for shape {shape}", data.len()),
            });
        }
        Ok(Tensor5 { shape, data })
    }

    pub fn full(shape: impl Into<Shape5>, value: f64) -> Self {
        let shape = shape.into();
        Tensor5 {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn zeros(shape: impl Into<Shape5>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape5>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_fn(shape: impl Into<Shape5>, mut f: impl FnMut([usize; 5]) -> f64) -> Self {
        let shape = shape.into();
        let [n, c, t, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for a in 0..n {
            for b in 0..c {
                for d in 0..t {
                    for e in 0..h {
                        for g in 0..w {
                            data.push(f([a, b, d, e, g]));
                        }
                    }
                }
            }
        }
        Tensor5 { shape, data }
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape5>, std: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor5 { shape, data }
    }

    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Shape5>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Tensor5 { shape, data }
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn dims(&self) -> [usize; 5] {
        self.shape.0
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn get(&self, idx: [usize; 5]) -> f64 {
        self.data[self.shape.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 5], v: f64) {
        let o = self.shape.offset(idx);
        self.data[o] = v;
    }

    pub fn reshape(self, shape: impl Into<Shape5>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Tensor5 {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor5, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape, "zip_map")?;
        Ok(Tensor5 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor5) -> Result<()> {
        self.expect_shape(other.shape, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn dot(&self, other: &Tensor5) -> Result<f64> {
        self.expect_shape(other.shape, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor5) -> Result<f64> {
        self.expect_shape(other.shape, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Validity check: errors when any element is NaN or infinite.
    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub(crate) fn expect_shape(&self, other: Shape5, op: &'static str) -> Result<()> {
        if self.shape != other {
            return Err(Error::Shape {
                op,
                lhs: self.shape,
                rhs: other,
            });
        }
        Ok(())
    }

    /// Copy of the half-open range `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let d = self.dims();
        if axis >= 5 || start + len > d[axis] {
            return Err(Error::InvalidShape {
                op: "narrow",
                detail: format!(
                    "range {start}..{} on axis {axis} of {}",
                    start + len,
                    self.shape
                ),
            });
        }
        let outer: usize = d[..axis].iter().product();
        let inner: usize = d[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * d[axis] * inner + start * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Ok(Tensor5 {
            shape: self.shape.with(axis, len),
            data: out,
        })
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn cat(parts: &[&Tensor5], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            op: "cat",
            detail: "no inputs".into(),
        })?;
        let mut total = 0;
        for p in parts {
            for ax in 0..5 {
                if ax != axis && p.dims()[ax] != first.dims()[ax] {
                    return Err(Error::Shape {
                        op: "cat",
                        lhs: first.shape,
                        rhs: p.shape,
                    });
                }
            }
            total += p.dims()[axis];
        }
        let d = first.dims();
        let outer: usize = d[..axis].iter().product();
        let inner: usize = d[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.dims()[axis] * inner;
                out.extend_from_slice(&p.data[o * len..(o + 1) * len]);
            }
        }
        Ok(Tensor5 {
            shape: first.shape.with(axis, total),
            data: out,
        })
    }

    /// Write in the packed `T5v1` format.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for d in self.dims() {
            let d = u32::try_from(d).map_err(|_| {
                std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
            })?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> std::io::Result<Self> {
        let invalid = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(invalid("bad magic, expected T5v1"));
        }
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let shape = Shape5(dims);
        let mut bytes = vec![0u8; shape.numel() * 8];
        r.read_exact(&mut bytes)?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(invalid("trailing bytes after payload"));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Tensor5 { shape, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|e| {
            if e.kind() == std::io::ErrorKind::InvalidData
                || e.kind() == std::io::ErrorKind::UnexpectedEof
            {
                Error::format(path, e.to_string())
            } else {
                Error::io(path, e)
            }
        })
    }
}
