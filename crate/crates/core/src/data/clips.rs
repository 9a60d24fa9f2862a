use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;

use crate::error::{Error, Result};
use crate::itae::VideoClip;
use crate::tensor::{Shape5, Tensor5};

use super::image::{area_resample, read_pnm, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorMode {
    Gray,
    Rgb,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Gray => 1,
            ColorMode::Rgb => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColorMode::Gray => "gray",
            ColorMode::Rgb => "rgb",
        }
    }
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(ColorMode::Gray),
            "rgb" => Ok(ColorMode::Rgb),
            other => Err(Error::Config(format!(
                "unknown color mode {other:?} (gray or rgb)"
            ))),
        }
    }
}

/// What to do with a frame file that cannot be read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BadFramePolicy {
    Skip,
    Abort,
}

impl BadFramePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            BadFramePolicy::Skip => "skip",
            BadFramePolicy::Abort => "abort",
        }
    }
}

impl std::str::FromStr for BadFramePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(BadFramePolicy::Skip),
            "abort" => Ok(BadFramePolicy::Abort),
            other => Err(Error::Config(format!(
                "unknown bad-frame policy {other:?} (skip or abort)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    /// A directory of PGM/PPM frames or a packed `(1, C, F, H, W)` tensor file.
    pub source: PathBuf,
    pub clip_len: usize,
    pub tau: usize,
    /// Distance between consecutive clip starts.
    pub stride: usize,
    /// Target `(height, width)`.
    pub resize: (usize, usize),
    pub color: ColorMode,
    pub on_bad_frame: BadFramePolicy,
}

impl ClipSpec {
    pub fn new(
        source: impl Into<PathBuf>,
        clip_len: usize,
        tau: usize,
        resize: (usize, usize),
    ) -> Self {
        ClipSpec {
            source: source.into(),
            clip_len,
            tau,
            stride: 1,
            resize,
            color: ColorMode::Gray,
            on_bad_frame: BadFramePolicy::Abort,
        }
    }

    /// Check the clip and frame arithmetic; `flow_levels` adds the
    /// divisibility needed by a squeezing flow on the quarter-size features.
    pub fn validate(&self, flow_levels: Option<usize>) -> Result<()> {
        let mut errs = Vec::new();
        if self.tau == 0 || self.clip_len == 0 || !self.clip_len.is_multiple_of(self.tau) {
            errs.push(format!(
                "clip length {} must be a positive multiple of tau {}",
                self.clip_len, self.tau
            ));
        }
        if self.stride == 0 {
            errs.push("clip stride must be positive".into());
        }
        let (h, w) = self.resize;
        let m = 4 << flow_levels.unwrap_or(0);
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            errs.push(format!("resize {h}x{w} must be a positive multiple of {m}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

/// A whole video resampled to the clip spec.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    /// `(1, C, F, H, W)` with values in `[0, 1]`.
    pub frames: Tensor5,
    /// Source index of every kept frame.
    pub frame_indices: Vec<usize>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.dims()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frame files of a directory in lexicographic order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|s| s.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "ppm" | "pnm")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn convert(img: &Image, color: ColorMode) -> Vec<Vec<f64>> {
    match (color, img.channels) {
        (ColorMode::Gray, 1) | (ColorMode::Rgb, 3) => img.planes(),
        (ColorMode::Gray, _) => vec![img.luminance()],
        (ColorMode::Rgb, _) => {
            let g = img.planes().remove(0);
            vec![g.clone(), g.clone(), g]
        }
    }
}

fn resize_planes(planes: Vec<Vec<f64>>, h: usize, w: usize, to: (usize, usize)) -> Vec<f64> {
    planes
        .into_iter()
        .flat_map(|p| area_resample(&p, h, w, to.0, to.1))
        .collect()
}

/// `(C, F, H, W)` frame-major planes to a `(1, C, F, H, W)` tensor.
fn stack(frames: &[Vec<f64>], c: usize, (h, w): (usize, usize)) -> Result<Tensor5> {
    let f = frames.len();
    let hw = h * w;
    let mut data = vec![0.0; c * f * hw];
    for (t, frame) in frames.iter().enumerate() {
        for ch in 0..c {
            let dst = (ch * f + t) * hw;
            data[dst..dst + hw].copy_from_slice(&frame[ch * hw..(ch + 1) * hw]);
        }
    }
    Tensor5::from_vec(Shape5::new(1, c, f, h, w), data)
}

fn load_folder(spec: &ClipSpec) -> Result<Video> {
    let files = frame_files(&spec.source)?;
    let c = spec.color.channels();
    let mut frames = Vec::with_capacity(files.len());
    let mut indices = Vec::with_capacity(files.len());
    for (i, path) in files.iter().enumerate() {
        match read_pnm(path) {
            Ok(img) => {
                frames.push(resize_planes(
                    convert(&img, spec.color),
                    img.height,
                    img.width,
                    spec.resize,
                ));
                indices.push(i);
            }
            Err(e) if spec.on_bad_frame == BadFramePolicy::Skip => {
                log::warn!("skipping unreadable frame {}: {e}", path.display());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Video {
        id: spec.source.display().to_string(),
        frames: stack(&frames, c, spec.resize)?,
        frame_indices: indices,
    })
}

fn load_packed(spec: &ClipSpec) -> Result<Video> {
    let t = Tensor5::load(&spec.source)?;
    let [n, c, f, h, w] = t.dims();
    if n != 1 {
        return Err(Error::format(
            &spec.source,
            format!("packed video must have batch 1, got {}", t.shape()),
        ));
    }
    if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::format(&spec.source, "pixel values outside [0, 1]"));
    }
    let want = spec.color.channels();
    let mut frames = Vec::with_capacity(f);
    for tt in 0..f {
        let planes: Vec<Vec<f64>> = (0..c)
            .map(|ch| {
                let base = t.shape().offset([0, ch, tt, 0, 0]);
                t.data()[base..base + h * w].to_vec()
            })
            .collect();
        let planes = match (c, want) {
            (a, b) if a == b => planes,
            (_, 1) => {
                let mut g = vec![0.0; h * w];
                for p in &planes {
                    g.iter_mut().zip(p).for_each(|(g, v)| *g += v / c as f64);
                }
                vec![g]
            }
            (1, 3) => vec![planes[0].clone(), planes[0].clone(), planes[0].clone()],
            _ => {
                return Err(Error::format(
                    &spec.source,
                    format!("cannot convert {c} channels to {want}"),
                ))
            }
        };
        frames.push(resize_planes(planes, h, w, spec.resize));
    }
    Ok(Video {
        id: spec.source.display().to_string(),
        frames: stack(&frames, want, spec.resize)?,
        frame_indices: (0..f).collect(),
    })
}

/// Read every frame of the source, resized and color-converted.
pub fn load_video(spec: &ClipSpec) -> Result<Video> {
    spec.validate(None)?;
    if spec.source.is_dir() {
        load_folder(spec)
    } else if spec.source.is_file() {
        load_packed(spec)
    } else {
        Err(Error::Config(format!(
            "dataset path {} does not exist",
            spec.source.display()
        )))
    }
}

/// Cut a video into clips of `clip_len` frames starting every `stride`.
pub fn clips_from_video(video: &Video, spec: &ClipSpec) -> Result<Vec<VideoClip>> {
    let f = video.len();
    let t = spec.clip_len;
    if f < t {
        return Ok(Vec::new());
    }
    (0..=f - t)
        .step_by(spec.stride)
        .map(|s| {
            let frames = video.frames.narrow(2, s, t)?;
            VideoClip::new(
                frames,
                spec.tau,
                video.id.clone(),
                video.frame_indices[s..s + t].to_vec(),
            )
        })
        .collect()
}

pub fn load_clips(spec: &ClipSpec) -> Result<Vec<VideoClip>> {
    clips_from_video(&load_video(spec)?, spec)
}

/// Clips produced on a background thread; at most `capacity` wait in the
/// queue. Order matches [`load_clips`].
pub fn clip_stream(spec: ClipSpec, capacity: usize) -> Receiver<Result<VideoClip>> {
    let (tx, rx) = sync_channel(capacity.max(1));
    thread::spawn(move || {
        let video = match load_video(&spec) {
            Ok(v) => v,
            Err(e) => {
                let _ = tx.send(Err(e));
                return;
            }
        };
        let f = video.len();
        let t = spec.clip_len;
        if f < t {
            return;
        }
        for s in (0..=f - t).step_by(spec.stride) {
            let clip = video.frames.narrow(2, s, t).and_then(|fr| {
                VideoClip::new(
                    fr,
                    spec.tau,
                    video.id.clone(),
                    video.frame_indices[s..s + t].to_vec(),
                )
            });
            if tx.send(clip).is_err() {
                return;
            }
        }
    });
    rx
}
