//! Frozen encoder features to flow samples.
//!
//! Each temporal slice of a latent becomes one flow sample `(1, C, 1, h, w)`:
//! channel-axis max and mean maps, plus (static side) the resized intensity of
//! the frame the static path saw.

use std::path::Path;

use crate::autodiff::Tape;
use crate::data::image::area_resample;
use crate::error::{Error, Result};
use crate::itae::{ItaeModel, VideoClip};
use crate::tensor::{Shape5, Tensor5};

/// Encoder outputs of one clip. Either side is absent for a one-path model.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFeatures {
    /// `(1, C_s, T / tau, h, w)`.
    pub x_static: Option<Tensor5>,
    /// `(1, C_d, T, h, w)`.
    pub x_dynamic: Option<Tensor5>,
}

impl LatentFeatures {
    /// Run the (frozen) encoders on a clip. Nothing is recorded for
    /// differentiation.
    pub fn extract(model: &ItaeModel, clip: &VideoClip) -> Result<Self> {
        let tape = Tape::no_grad();
        let (s, d) = model.encode(&tape, clip)?;
        Ok(LatentFeatures {
            x_static: s.map(|v| v.value().clone()),
            x_dynamic: d.map(|v| v.value().clone()),
        })
    }
}

/// Flow samples for one clip, one batch entry per temporal slice.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowInput {
    /// `(T / tau, 3, 1, h, w)`: max, mean, intensity.
    pub static_in: Option<Tensor5>,
    /// `(T, 2, 1, h, w)`: max, mean.
    pub dynamic_in: Option<Tensor5>,
}

impl FlowInput {
    pub fn from_clip(model: &ItaeModel, clip: &VideoClip) -> Result<Self> {
        let latent = LatentFeatures::extract(model, clip)?;
        let static_in = match &latent.x_static {
            Some(s) => Some(append_intensity(&pool_features(s)?, clip)?),
            None => None,
        };
        let dynamic_in = latent.x_dynamic.as_ref().map(pool_features).transpose()?;
        Ok(FlowInput {
            static_in,
            dynamic_in,
        })
    }

    /// Write the present parts as `static.t5` / `dynamic.t5` under `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(s) = &self.static_in {
            s.save(dir.join("static.t5"))?;
        }
        if let Some(d) = &self.dynamic_in {
            d.save(dir.join("dynamic.t5"))?;
        }
        Ok(())
    }
}

/// Channel-axis max and mean of a latent `(N, C, T, h, w)`, returned as
/// `(N * T, 2, 1, h, w)` with sample index `n * T + t`.
pub fn pool_features(latent: &Tensor5) -> Result<Tensor5> {
    let [n, c, t, h, w] = latent.dims();
    if c == 0 {
        return Err(Error::InvalidShape {
            op: "pool_features",
            detail: format!("latent {} has no channels", latent.shape()),
        });
    }
    let hw = h * w;
    let src = latent.data();
    let mut out = Vec::with_capacity(n * t * 2 * hw);
    for b in 0..n {
        for tt in 0..t {
            let mut mx = vec![f64::NEG_INFINITY; hw];
            let mut sum = vec![0.0; hw];
            for ch in 0..c {
                let base = latent.shape().offset([b, ch, tt, 0, 0]);
                for (i, &v) in src[base..base + hw].iter().enumerate() {
                    mx[i] = mx[i].max(v);
                    sum[i] += v;
                }
            }
            out.extend(mx);
            out.extend(sum.into_iter().map(|s| s / c as f64));
        }
    }
    Tensor5::from_vec(Shape5::new(n * t, 2, 1, h, w), out)
}

/// Channel-mean intensity of clip frame `t`, area-resampled to `h x w`.
pub fn resized_intensity(clip: &VideoClip, t: usize, h: usize, w: usize) -> Vec<f64> {
    let [_, c, _, ih, iw] = clip.frames.dims();
    let mut gray = vec![0.0; ih * iw];
    for ch in 0..c {
        let base = clip.frames.shape().offset([0, ch, t, 0, 0]);
        for (g, v) in gray
            .iter_mut()
            .zip(&clip.frames.data()[base..base + ih * iw])
        {
            *g += v;
        }
    }
    gray.iter_mut().for_each(|g| *g /= c as f64);
    area_resample(&gray, ih, iw, h, w)
}

/// Append the intensity of frame `t * tau` as a third channel to pooled
/// static maps `(T / tau, 2, 1, h, w)`.
pub fn append_intensity(maps: &Tensor5, clip: &VideoClip) -> Result<Tensor5> {
    let [s, c, one, h, w] = maps.dims();
    let expected = clip.len() / clip.tau;
    if c != 2 || one != 1 || s != expected {
        return Err(Error::InvalidShape {
            op: "append_intensity",
            detail: format!(
                "expected {expected} pooled static maps of shape 2x1xhxw, got {}",
                maps.shape()
            ),
        });
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(s * 3 * hw);
    for (i, chunk) in maps.data().chunks_exact(2 * hw).enumerate() {
        out.extend_from_slice(chunk);
        out.extend(resized_intensity(clip, i * clip.tau, h, w));
    }
    Tensor5::from_vec(Shape5::new(s, 3, 1, h, w), out)
}
