//! Reconstruction objective: L2 + (1 - MS-SSIM) + gradient-difference loss,
//! equally weighted.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::autodiff::{Tape, Var};
use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor5;

/// Standard five-scale MS-SSIM exponents.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const CS_FLOOR: f64 = 1e-8;

static WARNED_SMALL: AtomicBool = AtomicBool::new(false);

/// Scale count and window size that fit a `h x w` frame.
pub fn msssim_scales(h: usize, w: usize) -> (usize, usize) {
    let side = h.min(w);
    let scales = (1..=5)
        .rev()
        .find(|&s| side >= WINDOW << (s - 1))
        .unwrap_or(1);
    let window = if side >= WINDOW {
        WINDOW
    } else if side % 2 == 1 {
        side
    } else {
        side.saturating_sub(1).max(1)
    };
    (scales, window)
}

fn gaussian_taps(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

struct Filters<'t> {
    rows: Var<'t>,
    cols: Var<'t>,
    pool: Var<'t>,
}

impl<'t> Filters<'t> {
    fn new(tape: &'t Tape, window: usize) -> Result<Self> {
        let taps = gaussian_taps(window);
        Ok(Filters {
            rows: tape.constant(Tensor5::from_vec([1, 1, 1, window, 1], taps.clone())?),
            cols: tape.constant(Tensor5::from_vec([1, 1, 1, 1, window], taps)?),
            pool: tape.constant(Tensor5::full([1, 1, 1, 2, 2], 0.25)),
        })
    }

    fn blur(&self, x: &Var<'t>) -> Result<Var<'t>> {
        x.conv3d(&self.rows, ConvSpec::unit())?
            .conv3d(&self.cols, ConvSpec::unit())
    }

    fn downsample(&self, x: &Var<'t>) -> Result<Var<'t>> {
        x.conv3d(&self.pool, ConvSpec::new([1, 2, 2], [0, 0, 0]))
    }
}

/// Channel mean: `(N, C, T, H, W)` to `(N, 1, T, H, W)`.
fn luminance<'t>(x: &Var<'t>) -> Var<'t> {
    if x.shape().channels() == 1 {
        x.clone()
    } else {
        x.mean_axes([false, true, false, false, false])
    }
}

/// Per-frame MS-SSIM on the luminance channel, averaged over batch and
/// frames. Returns a scalar variable.
pub fn ms_ssim<'t>(x: &Var<'t>, y: &Var<'t>) -> Result<Var<'t>> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            op: "ms_ssim",
            lhs: x.shape(),
            rhs: y.shape(),
        });
    }
    let tape = x.tape();
    let (h, w) = (x.shape().height(), x.shape().width());
    let (scales, window) = msssim_scales(h, w);
    if (scales < 5 || window < WINDOW) && !WARNED_SMALL.swap(true, Ordering::Relaxed) {
        log::warn!(
            "frame {h}x{w} is below the 5-scale MS-SSIM minimum ({}); using {scales} scale(s), window {window}",
            WINDOW << 4
        );
    }
    let total: f64 = MSSSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MSSSIM_WEIGHTS[..scales].iter().map(|w| w / total).collect();
    let f = Filters::new(tape, window)?;
    let frame_mean = [false, false, false, true, true];

    let mut a = luminance(x);
    let mut b = luminance(y);
    let mut score: Option<Var<'t>> = None;
    for (j, &wj) in weights.iter().enumerate() {
        let mu_a = f.blur(&a)?;
        let mu_b = f.blur(&b)?;
        let mu_aa = mu_a.square();
        let mu_bb = mu_b.square();
        let mu_ab = mu_a.mul(&mu_b)?;
        let s_aa = f.blur(&a.square())?.sub(&mu_aa)?;
        let s_bb = f.blur(&b.square())?.sub(&mu_bb)?;
        let s_ab = f.blur(&a.mul(&b)?)?.sub(&mu_ab)?;
        let cs_map = s_ab
            .mul_scalar(2.0)
            .add_scalar(C2)
            .div(&s_aa.add(&s_bb)?.add_scalar(C2))?;
        let value = if j + 1 == scales {
            let l_map = mu_ab
                .mul_scalar(2.0)
                .add_scalar(C1)
                .div(&mu_aa.add(&mu_bb)?.add_scalar(C1))?;
            l_map.mul(&cs_map)?.mean_axes(frame_mean)
        } else {
            cs_map.mean_axes(frame_mean)
        };
        let term = value.clamp_min(CS_FLOOR).powf(wj)?;
        score = Some(match score {
            None => term,
            Some(s) => s.mul(&term)?,
        });
        if j + 1 < scales {
            a = f.downsample(&a)?;
            b = f.downsample(&b)?;
        }
    }
    Ok(score.expect("at least one scale").mean())
}

/// Mean absolute difference between the horizontal and vertical pixel
/// gradients of two clips (sum of both directions).
fn gradient_loss<'t>(x: &Var<'t>, y: &Var<'t>) -> Result<Var<'t>> {
    let mut total: Option<Var<'t>> = None;
    for axis in [3, 4] {
        let len = x.shape().0[axis];
        if len < 2 {
            continue;
        }
        let dx = x
            .narrow(axis, 1, len - 1)?
            .sub(&x.narrow(axis, 0, len - 1)?)?;
        let dy = y
            .narrow(axis, 1, len - 1)?
            .sub(&y.narrow(axis, 0, len - 1)?)?;
        let term = dx.sub(&dy)?.abs().mean();
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    Ok(total.unwrap_or_else(|| x.tape().constant(Tensor5::zeros([1, 1, 1, 1, 1]))))
}

/// Differentiable loss terms.
pub struct ReconLoss<'t> {
    pub l2: Var<'t>,
    /// `1 - MS-SSIM`.
    pub ms_ssim: Var<'t>,
    pub grad: Var<'t>,
    pub total: Var<'t>,
}

impl ReconLoss<'_> {
    pub fn report(&self) -> ReconLossReport {
        ReconLossReport {
            l2: self.l2.item(),
            ms_ssim: self.ms_ssim.item(),
            grad: self.grad.item(),
            total: self.total.item(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconLossReport {
    pub l2: f64,
    pub ms_ssim: f64,
    pub grad: f64,
    pub total: f64,
}

pub fn recon_loss_var<'t>(input: &Var<'t>, output: &Var<'t>) -> Result<ReconLoss<'t>> {
    if input.shape() != output.shape() {
        return Err(Error::Shape {
            op: "recon_loss",
            lhs: input.shape(),
            rhs: output.shape(),
        });
    }
    let l2 = input.sub(output)?.square().mean();
    let ms = ms_ssim(input, output)?.neg().add_scalar(1.0);
    let grad = gradient_loss(input, output)?;
    let total = l2.add(&ms)?.add(&grad)?;
    Ok(ReconLoss {
        l2,
        ms_ssim: ms,
        grad,
        total,
    })
}

/// Loss values for a clip tensor and its reconstruction.
pub fn recon_loss(input: &Tensor5, output: &Tensor5) -> Result<ReconLossReport> {
    let tape = Tape::no_grad();
    let a = tape.constant(input.clone());
    let b = tape.constant(output.clone());
    Ok(recon_loss_var(&a, &b)?.report())
}
