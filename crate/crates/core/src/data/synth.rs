//! Synthetic surveillance scenes: objects sliding along horizontal lanes
//! at constant velocity, with labeled anomaly spans.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::image::{write_pnm, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectShape {
    /// 6 x 6.
    Square,
    /// 12 wide, 6 tall. Same rows as the square, so at normal speeds a
    /// moving bar changes as many pixels per frame as a moving square.
    Bar,
}

impl ObjectShape {
    /// `(width, height)` in pixels.
    pub fn size(self) -> (usize, usize) {
        match self {
            ObjectShape::Square => (6, 6),
            ObjectShape::Bar => (12, 6),
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            ObjectShape::Square => ObjectShape::Bar,
            ObjectShape::Bar => ObjectShape::Square,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AnomalyMode {
    /// Every object moves twice as fast.
    SpeedDouble,
    /// Every object takes the other shape.
    ShapeSwap,
    /// Every object moves backwards.
    Reverse,
}

impl AnomalyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyMode::SpeedDouble => "speed",
            AnomalyMode::ShapeSwap => "shape-swap",
            AnomalyMode::Reverse => "reverse",
        }
    }
}

impl std::str::FromStr for AnomalyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speed" => Ok(AnomalyMode::SpeedDouble),
            "shape-swap" => Ok(AnomalyMode::ShapeSwap),
            "reverse" => Ok(AnomalyMode::Reverse),
            other => Err(Error::Config(format!("unknown anomaly mode {other:?}"))),
        }
    }
}

/// Frames `start..end` follow `mode`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnomalySpan {
    pub start: usize,
    pub end: usize,
    pub mode: AnomalyMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSceneConfig {
    /// Square canvas side.
    pub canvas: usize,
    pub objects: usize,
    /// Shapes drawn in normal frames, assigned to objects in turn.
    pub shapes: Vec<ObjectShape>,
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    pub noise_sigma: f64,
    pub background: u8,
    pub foreground: u8,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        SyntheticSceneConfig {
            canvas: 64,
            objects: 3,
            shapes: vec![ObjectShape::Square],
            speed: (1.0, 2.0),
            noise_sigma: 2.0,
            background: 40,
            foreground: 200,
            seed: 0,
        }
    }
}

/// Frames plus one 0/1 label per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub frames: Vec<Image>,
    pub labels: Vec<u8>,
}

struct Object {
    x: f64,
    lane_y: usize,
    velocity: f64,
    shape: ObjectShape,
}

fn validate(config: &SyntheticSceneConfig, n_frames: usize, spans: &[AnomalySpan]) -> Result<()> {
    let mut errs = Vec::new();
    if config.objects == 0 || config.shapes.is_empty() {
        errs.push("need at least one object and one shape".to_string());
    } else {
        let lane = config.canvas / config.objects;
        if lane < 14 {
            errs.push(format!(
                "{} objects do not fit a {} canvas (each lane needs 14 rows)",
                config.objects, config.canvas
            ));
        }
    }
    let (lo, hi) = config.speed;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        errs.push(format!("invalid speed range {lo}..{hi}"));
    }
    if config.noise_sigma.is_nan() || config.noise_sigma < 0.0 {
        errs.push("noise sigma must be non-negative".into());
    }
    for s in spans {
        if s.start >= s.end || s.end > n_frames {
            errs.push(format!(
                "anomaly span {}..{} is outside 0..{n_frames}",
                s.start, s.end
            ));
        }
    }
    for (i, a) in spans.iter().enumerate() {
        for b in &spans[i + 1..] {
            if a.start < b.end && b.start < a.end && a.mode != b.mode {
                errs.push(format!(
                    "anomaly spans {}..{} ({}) and {}..{} ({}) overlap with different modes",
                    a.start,
                    a.end,
                    a.mode.as_str(),
                    b.start,
                    b.end,
                    b.mode.as_str()
                ));
            }
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs.join("; ")))
    }
}

/// Render `n_frames` frames. Identical inputs give identical bytes.
pub fn generate_synthetic(
    config: &SyntheticSceneConfig,
    n_frames: usize,
    spans: &[AnomalySpan],
) -> Result<SyntheticVideo> {
    validate(config, n_frames, spans)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let side = config.canvas;
    let lane = side / config.objects;
    let mut objects: Vec<Object> = (0..config.objects)
        .map(|i| {
            let speed = rng.random_range(config.speed.0..=config.speed.1);
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Object {
                x: rng.random_range(0.0..side as f64),
                lane_y: i * lane + (lane - 12) / 2,
                velocity: speed * dir,
                shape: config.shapes[i % config.shapes.len()],
            }
        })
        .collect();
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("normal");
    let mode_at = |t: usize| {
        spans
            .iter()
            .find(|s| (s.start..s.end).contains(&t))
            .map(|s| s.mode)
    };
    let mut frames = Vec::with_capacity(n_frames);
    let mut labels = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let mode = mode_at(t);
        labels.push(u8::from(mode.is_some()));
        let mut canvas = vec![f64::from(config.background); side * side];
        for o in &objects {
            let shape = if mode == Some(AnomalyMode::ShapeSwap) {
                o.shape.swapped()
            } else {
                o.shape
            };
            let (w, h) = shape.size();
            let x0 = o.x.round() as i64;
            // centered vertically in the 12-row band of the lane
            let y0 = o.lane_y + (12 - h) / 2;
            for dy in 0..h {
                for dx in 0..w {
                    let x = (x0 + dx as i64).rem_euclid(side as i64) as usize;
                    canvas[(y0 + dy) * side + x] = f64::from(config.foreground);
                }
            }
        }
        let data = canvas
            .into_iter()
            .map(|v| {
                let n = if config.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                (v + n).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        frames.push(Image::new(side, side, 1, data)?);
        let factor = match mode {
            Some(AnomalyMode::SpeedDouble) => 2.0,
            Some(AnomalyMode::Reverse) => -1.0,
            _ => 1.0,
        };
        for o in &mut objects {
            o.x = (o.x + factor * o.velocity).rem_euclid(side as f64);
        }
    }
    Ok(SyntheticVideo { frames, labels })
}

/// Write `frame_NNNNNN.pgm` files and `labels.txt` into `dir`.
pub fn write_synthetic(video: &SyntheticVideo, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in video.frames.iter().enumerate() {
        write_pnm(f, dir.join(format!("frame_{i:06}.pgm")))?;
    }
    write_labels(&video.labels, dir.join("labels.txt"))
}

pub fn write_labels(labels: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for l in labels {
        writeln!(f, "{l}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// One `0` or `1` per line.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::format(
                path,
                format!("line {}: expected 0 or 1, got {other:?}", i + 1),
            )),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_spans() {
        let spans = [AnomalySpan {
            start: 5,
            end: 9,
            mode: AnomalyMode::SpeedDouble,
        }];
        let v = generate_synthetic(&SyntheticSceneConfig::default(), 12, &spans).unwrap();
        let expect: Vec<u8> = (0..12).map(|t| u8::from((5..9).contains(&t))).collect();
        assert_eq!(v.labels, expect);
    }

    #[test]
    fn contradictory_overlap_is_rejected() {
        let spans = [
            AnomalySpan {
                start: 0,
                end: 5,
                mode: AnomalyMode::SpeedDouble,
            },
            AnomalySpan {
                start: 4,
                end: 8,
                mode: AnomalyMode::ShapeSwap,
            },
        ];
        assert!(generate_synthetic(&SyntheticSceneConfig::default(), 10, &spans).is_err());
    }

    #[test]
    fn swapped_shape_keeps_height() {
        let (_, h) = ObjectShape::Square.size();
        let (bw, bh) = ObjectShape::Bar.size();
        assert_eq!(h, bh);
        assert!(
            bw >= 2,
            "a normal step of up to 2 px must not clear the bar"
        );
        assert_ne!(ObjectShape::Square.size(), ObjectShape::Bar.size());
    }
}
