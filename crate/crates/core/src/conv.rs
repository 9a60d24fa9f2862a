//! Raw 3-D convolution kernels (im2col + GEMM) shared by the forward and
//! backward rules of both `conv3d` and `conv_transpose3d`.
//!
//! Weights are laid out `(out_ch, in_ch, kt, kh, kw)`. The transposed
//! convolution reuses the same tensor, so `conv_transpose3d(y, w)` is the
//! adjoint of `conv3d(x, w)`.

use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor5};

/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 1 << 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    pub const fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        ConvSpec { stride, padding }
    }

    /// Stride one, no padding.
    pub const fn unit() -> Self {
        ConvSpec {
            stride: [1, 1, 1],
            padding: [0, 0, 0],
        }
    }
}

/// `floor((d + 2p - k) / s) + 1`, or `None` when the padded extent is
/// smaller than the kernel.
pub fn conv_out_len(d: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || d + 2 * p < k {
        None
    } else {
        Some((d + 2 * p - k) / s + 1)
    }
}

/// `(d - 1) s - 2p + k + output_padding`.
pub fn conv_transpose_out_len(d: usize, k: usize, s: usize, p: usize, op: usize) -> Option<usize> {
    if d == 0 || s == 0 || op >= s {
        return None;
    }
    ((d - 1) * s + k + op).checked_sub(2 * p)
}

pub fn conv3d_out_shape(x: Shape5, w: Shape5, spec: ConvSpec) -> Result<Shape5> {
    let [n, c, t, h, wd] = x.0;
    let [co, ci, kt, kh, kw] = w.0;
    if ci != c {
        return Err(Error::Shape {
            op: "conv3d",
            lhs: x,
            rhs: w,
        });
    }
    let dims = [(t, kt, 0), (h, kh, 1), (wd, kw, 2)];
    let mut out = [0usize; 3];
    for (o, (d, k, ax)) in out.iter_mut().zip(dims) {
        *o = conv_out_len(d, k, spec.stride[ax], spec.padding[ax]).ok_or(Error::Shape {
            op: "conv3d",
            lhs: x,
            rhs: w,
        })?;
    }
    Ok(Shape5::new(n, co, out[0], out[1], out[2]))
}

pub fn conv_transpose3d_out_shape(
    x: Shape5,
    w: Shape5,
    spec: ConvSpec,
    output_padding: [usize; 3],
) -> Result<Shape5> {
    let [n, c, t, h, wd] = x.0;
    let [ci, co, kt, kh, kw] = w.0;
    if ci != c {
        return Err(Error::Shape {
            op: "conv_transpose3d",
            lhs: x,
            rhs: w,
        });
    }
    let dims = [(t, kt, 0), (h, kh, 1), (wd, kw, 2)];
    let mut out = [0usize; 3];
    for (o, (d, k, ax)) in out.iter_mut().zip(dims) {
        *o = conv_transpose_out_len(d, k, spec.stride[ax], spec.padding[ax], output_padding[ax])
            .filter(|&len| len > 0)
            .ok_or(Error::Shape {
                op: "conv_transpose3d",
                lhs: x,
                rhs: w,
            })?;
    }
    let out = Shape5::new(n, co, out[0], out[1], out[2]);
    // the forward conv of the result must land back on the input grid
    let back = conv3d_out_shape(out.with(1, ci), Shape5::new(ci, ci, kt, kh, kw), spec)?;
    if back.0[2..] != x.0[2..] {
        return Err(Error::Shape {
            op: "conv_transpose3d",
            lhs: x,
            rhs: w,
        });
    }
    Ok(out)
}

/// Geometry of one (sample-independent) convolution.
struct Geometry {
    in_c: usize,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    kernel: [usize; 3],
    spec: ConvSpec,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.in_c * self.kernel.iter().product::<usize>()
    }

    fn out_positions(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn in_positions(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn chunk(&self) -> usize {
        (COL_BUDGET / self.rows().max(1)).clamp(1, self.out_positions().max(1))
    }

    /// For each output position in `p0..p1`, the input coordinate of the
    /// kernel origin (may be negative because of padding).
    fn origins(&self, p0: usize, p1: usize) -> Vec<[isize; 3]> {
        let [_, oh, ow] = self.out_dims;
        (p0..p1)
            .map(|p| {
                let to = p / (oh * ow);
                let ho = (p / ow) % oh;
                let wo = p % ow;
                [
                    (to * self.spec.stride[0]) as isize - self.spec.padding[0] as isize,
                    (ho * self.spec.stride[1]) as isize - self.spec.padding[1] as isize,
                    (wo * self.spec.stride[2]) as isize - self.spec.padding[2] as isize,
                ]
            })
            .collect()
    }

    /// Visit every (row, column, input offset) triple of the im2col matrix
    /// for one chunk. Padding taps are skipped.
    fn for_each_tap(&self, origins: &[[isize; 3]], mut f: impl FnMut(usize, usize, usize)) {
        let [kt, kh, kw] = self.kernel;
        let [it, ih, iw] = self.in_dims;
        let mut row = 0;
        for c in 0..self.in_c {
            let cbase = c * it * ih * iw;
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        for (j, o) in origins.iter().enumerate() {
                            let t = o[0] + dt as isize;
                            let h = o[1] + dh as isize;
                            let w = o[2] + dw as isize;
                            if t >= 0
                                && h >= 0
                                && w >= 0
                                && (t as usize) < it
                                && (h as usize) < ih
                                && (w as usize) < iw
                            {
                                let off = cbase + (t as usize * ih + h as usize) * iw + w as usize;
                                f(row, j, off);
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], origins: &[[isize; 3]], cols: &mut [f64]) {
        let np = origins.len();
        cols[..self.rows() * np].fill(0.0);
        self.for_each_tap(origins, |r, j, off| cols[r * np + j] = x[off]);
    }

    fn col2im(&self, cols: &[f64], origins: &[[isize; 3]], dx: &mut [f64]) {
        let np = origins.len();
        self.for_each_tap(origins, |r, j, off| dx[off] += cols[r * np + j]);
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: isize, cs: isize, r: usize, cc: usize| {
        (r.saturating_sub(1)) as isize * rs + (cc.saturating_sub(1)) as isize * cs
    };
    assert!(k == 0 || (last(rsa, csa, m, k) as usize) < a.len());
    assert!(k == 0 || (last(rsb, csb, k, n) as usize) < b.len());
    assert!((last(rsc, csc, m, n) as usize) < c.len());
    // SAFETY: the asserts above bound every index the kernel touches for
    // non-negative strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn geometry(x: Shape5, w: Shape5, y: Shape5, spec: ConvSpec) -> Geometry {
    Geometry {
        in_c: x.channels(),
        in_dims: [x.time(), x.height(), x.width()],
        out_dims: [y.time(), y.height(), y.width()],
        kernel: [w.0[2], w.0[3], w.0[4]],
        spec,
    }
}

pub fn conv3d_forward(x: &Tensor5, w: &Tensor5, spec: ConvSpec) -> Result<Tensor5> {
    let ys = conv3d_out_shape(x.shape(), w.shape(), spec)?;
    let g = geometry(x.shape(), w.shape(), ys, spec);
    let (k, co, p) = (g.rows(), ys.channels(), g.out_positions());
    let chunk = g.chunk();
    let mut y = vec![0.0; ys.numel()];
    let mut cols = vec![0.0; k * chunk];
    let xs = x.shape().per_sample();
    for n in 0..ys.batch() {
        let xn = &x.data()[n * xs..(n + 1) * xs];
        let yn = &mut y[n * co * p..(n + 1) * co * p];
        for p0 in (0..p).step_by(chunk) {
            let p1 = (p0 + chunk).min(p);
            let np = p1 - p0;
            let origins = g.origins(p0, p1);
            g.im2col(xn, &origins, &mut cols);
            gemm(
                co,
                k,
                np,
                w.data(),
                (k as isize, 1),
                &cols,
                (np as isize, 1),
                0.0,
                &mut yn[p0..],
                (p as isize, 1),
            );
        }
    }
    Tensor5::from_vec(ys, y)
}

/// Gradient of `conv3d` with respect to its input, given the upstream
/// gradient `dy` (also the forward rule of the transposed convolution).
pub fn conv3d_input_grad(
    dy: &Tensor5,
    w: &Tensor5,
    x_shape: Shape5,
    spec: ConvSpec,
) -> Result<Tensor5> {
    let expect = conv3d_out_shape(x_shape, w.shape(), spec)?;
    dy.expect_shape(expect.with(0, dy.shape().batch()), "conv3d_input_grad")?;
    let xs = x_shape.with(0, dy.shape().batch());
    let g = geometry(xs, w.shape(), expect, spec);
    let (k, co, p) = (g.rows(), expect.channels(), g.out_positions());
    let chunk = g.chunk();
    let mut dx = vec![0.0; xs.numel()];
    let mut cols = vec![0.0; k * chunk];
    let per = xs.per_sample();
    for n in 0..xs.batch() {
        let dyn_ = &dy.data()[n * co * p..(n + 1) * co * p];
        let dxn = &mut dx[n * per..(n + 1) * per];
        for p0 in (0..p).step_by(chunk) {
            let p1 = (p0 + chunk).min(p);
            let np = p1 - p0;
            let origins = g.origins(p0, p1);
            gemm(
                k,
                co,
                np,
                w.data(),
                (1, k as isize),
                &dyn_[p0..],
                (p as isize, 1),
                0.0,
                &mut cols,
                (np as isize, 1),
            );
            g.col2im(&cols, &origins, dxn);
        }
    }
    Tensor5::from_vec(xs, dx)
}

/// Gradient of `conv3d` with respect to its weight.
pub fn conv3d_weight_grad(
    dy: &Tensor5,
    x: &Tensor5,
    w_shape: Shape5,
    spec: ConvSpec,
) -> Result<Tensor5> {
    let ys = conv3d_out_shape(x.shape(), w_shape, spec)?;
    dy.expect_shape(ys, "conv3d_weight_grad")?;
    let g = geometry(x.shape(), w_shape, ys, spec);
    let (k, co, p) = (g.rows(), ys.channels(), g.out_positions());
    let chunk = g.chunk();
    let mut dw = vec![0.0; w_shape.numel()];
    let mut cols = vec![0.0; k * chunk];
    let xs = x.shape().per_sample();
    for n in 0..ys.batch() {
        let xn = &x.data()[n * xs..(n + 1) * xs];
        let dyn_ = &dy.data()[n * co * p..(n + 1) * co * p];
        for p0 in (0..p).step_by(chunk) {
            let p1 = (p0 + chunk).min(p);
            let np = p1 - p0;
            let origins = g.origins(p0, p1);
            g.im2col(xn, &origins, &mut cols);
            gemm(
                co,
                np,
                k,
                &dyn_[p0..],
                (p as isize, 1),
                &cols,
                (1, np as isize),
                1.0,
                &mut dw,
                (k as isize, 1),
            );
        }
    }
    debug_assert!(g.in_positions() > 0);
    Tensor5::from_vec(w_shape, dw)
}
