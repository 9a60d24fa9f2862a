use crate::error::{Error, Result};
use crate::tensor::Tensor5;

/// `T` consecutive frames with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    /// `(1, C, T, H, W)`.
    pub frames: Tensor5,
    /// Static sampling rate.
    pub tau: usize,
    pub source_id: String,
    /// Absolute index of each frame in its source video.
    pub frame_indices: Vec<usize>,
}

impl VideoClip {
    pub fn new(
        frames: Tensor5,
        tau: usize,
        source_id: impl Into<String>,
        frame_indices: Vec<usize>,
    ) -> Result<Self> {
        let [n, _, t, _, _] = frames.dims();
        if n != 1 {
            return Err(Error::Config(format!(
                "clip tensor must have batch 1, got {}",
                frames.shape()
            )));
        }
        if tau == 0 || t % tau != 0 {
            return Err(Error::Config(format!(
                "clip length {t} is not divisible by tau {tau}"
            )));
        }
        if frame_indices.len() != t {
            return Err(Error::Config(format!(
                "{} frame indices for a clip of length {t}",
                frame_indices.len()
            )));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(VideoClip {
            frames,
            tau,
            source_id: source_id.into(),
            frame_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.dims()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.dims()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.dims()[3]
    }

    pub fn width(&self) -> usize {
        self.frames.dims()[4]
    }

    /// Temporal positions inside the clip seen by the static path.
    pub fn static_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).step_by(self.tau)
    }
}
