//! Flat `key = value` run configuration with presets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{BadFramePolicy, ClipSpec, ColorMode};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowTrainConfig};
use crate::itae::{EncoderMode, ItaeConfig, ItaeTrainConfig};

/// Layer widths of the autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ItaeWidth {
    /// Full widths (static 96/128/256/256, dynamic 12/16/32/32).
    Full,
    /// Narrow widths for CPU runs.
    Desk,
}

impl ItaeWidth {
    pub fn as_str(self) -> &'static str {
        match self {
            ItaeWidth::Full => "full",
            ItaeWidth::Desk => "desk",
        }
    }
}

impl FromStr for ItaeWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ItaeWidth::Full),
            "desk" => Ok(ItaeWidth::Desk),
            other => Err(Error::Config(format!(
                "unknown itae width {other:?} (full or desk)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    /// Frame labels of the test video; defaults to `<test_dir>/labels.txt`.
    pub labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub clip_len: usize,
    pub tau: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub resize_h: usize,
    pub resize_w: usize,
    pub color: ColorMode,
    pub on_bad_frame: BadFramePolicy,
    pub itae_width: ItaeWidth,
    pub itae_mode: EncoderMode,
    pub itae_laterals: bool,
    pub itae_lr: f64,
    pub itae_batch: usize,
    pub itae_epochs: usize,
    pub nf_k: usize,
    pub nf_l: usize,
    pub nf_hidden: usize,
    pub nf_lr: f64,
    pub nf_batch: usize,
    pub nf_epochs: usize,
    pub nf_static: bool,
    pub nf_dynamic: bool,
    pub patch: usize,
    pub patch_stride: usize,
    pub lambda: f64,
    pub seed: u64,
}

pub const PRESETS: [&str; 4] = ["desk", "ucsd", "cuhk", "st"];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// 64x64 gray frames, `T = 8`, narrow widths: the synthetic-scene setup.
    pub fn desk() -> Self {
        RunConfig {
            train_dir: None,
            test_dir: None,
            labels: None,
            out_dir: PathBuf::from("run"),
            clip_len: 8,
            tau: 4,
            train_stride: 1,
            eval_stride: 1,
            resize_h: 64,
            resize_w: 64,
            color: ColorMode::Gray,
            on_bad_frame: BadFramePolicy::Abort,
            itae_width: ItaeWidth::Desk,
            itae_mode: EncoderMode::TwoPath,
            itae_laterals: true,
            itae_lr: 1e-2,
            itae_batch: 8,
            itae_epochs: 5,
            nf_k: 4,
            nf_l: 2,
            nf_hidden: 64,
            nf_lr: 1e-3,
            nf_batch: 32,
            nf_epochs: 5,
            nf_static: true,
            nf_dynamic: true,
            patch: 16,
            patch_stride: 4,
            lambda: 0.5,
            seed: 0,
        }
    }

    fn benchmark(step1: (usize, f64), step2: (usize, f64), lambda: f64, nf_l: usize) -> Self {
        RunConfig {
            clip_len: 16,
            resize_h: 256,
            resize_w: 256,
            color: ColorMode::Rgb,
            itae_width: ItaeWidth::Full,
            itae_batch: step1.0,
            itae_lr: step1.1,
            nf_batch: step2.0,
            nf_lr: step2.1,
            nf_k: 32,
            nf_l,
            nf_hidden: 64,
            lambda,
            ..RunConfig::desk()
        }
    }

    /// Named preset: `desk`, or the hyperparameters reported for the UCSD,
    /// CUHK and ShanghaiTech benchmarks.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "ucsd" => Ok(RunConfig {
                resize_h: 240,
                resize_w: 360,
                color: ColorMode::Gray,
                ..RunConfig::benchmark((2, 1e-3), (8, 5e-4), 0.3, 1)
            }),
            "cuhk" => Ok(RunConfig::benchmark((2, 1e-2), (5, 5e-4), 0.1, 3)),
            "st" => Ok(RunConfig::benchmark((8, 1e-2), (8, 1e-4), 0.7, 3)),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Every key in a fixed order.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        vec![
            ("train_dir", path(&self.train_dir)),
            ("test_dir", path(&self.test_dir)),
            ("labels", path(&self.labels)),
            ("out_dir", self.out_dir.display().to_string()),
            ("clip_len", self.clip_len.to_string()),
            ("tau", self.tau.to_string()),
            ("train_stride", self.train_stride.to_string()),
            ("eval_stride", self.eval_stride.to_string()),
            ("resize_h", self.resize_h.to_string()),
            ("resize_w", self.resize_w.to_string()),
            ("color", self.color.as_str().into()),
            ("on_bad_frame", self.on_bad_frame.as_str().into()),
            ("itae_width", self.itae_width.as_str().into()),
            ("itae_mode", self.itae_mode.as_str().into()),
            ("itae_laterals", self.itae_laterals.to_string()),
            ("itae_lr", self.itae_lr.to_string()),
            ("itae_batch", self.itae_batch.to_string()),
            ("itae_epochs", self.itae_epochs.to_string()),
            ("nf_k", self.nf_k.to_string()),
            ("nf_l", self.nf_l.to_string()),
            ("nf_hidden", self.nf_hidden.to_string()),
            ("nf_lr", self.nf_lr.to_string()),
            ("nf_batch", self.nf_batch.to_string()),
            ("nf_epochs", self.nf_epochs.to_string()),
            ("nf_static", self.nf_static.to_string()),
            ("nf_dynamic", self.nf_dynamic.to_string()),
            ("patch", self.patch.to_string()),
            ("patch_stride", self.patch_stride.to_string()),
            ("lambda", self.lambda.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        RunConfig::desk()
            .to_kv()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_kv() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        match key {
            "train_dir" => self.train_dir = path(value),
            "test_dir" => self.test_dir = path(value),
            "labels" => self.labels = path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "clip_len" => self.clip_len = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "train_stride" => self.train_stride = num(key, value)?,
            "eval_stride" => self.eval_stride = num(key, value)?,
            "resize_h" => self.resize_h = num(key, value)?,
            "resize_w" => self.resize_w = num(key, value)?,
            "color" => self.color = value.parse()?,
            "on_bad_frame" => self.on_bad_frame = value.parse()?,
            "itae_width" => self.itae_width = value.parse()?,
            "itae_mode" => self.itae_mode = value.parse()?,
            "itae_laterals" => self.itae_laterals = num(key, value)?,
            "itae_lr" => self.itae_lr = num(key, value)?,
            "itae_batch" => self.itae_batch = num(key, value)?,
            "itae_epochs" => self.itae_epochs = num(key, value)?,
            "nf_k" => self.nf_k = num(key, value)?,
            "nf_l" => self.nf_l = num(key, value)?,
            "nf_hidden" => self.nf_hidden = num(key, value)?,
            "nf_lr" => self.nf_lr = num(key, value)?,
            "nf_batch" => self.nf_batch = num(key, value)?,
            "nf_epochs" => self.nf_epochs = num(key, value)?,
            "nf_static" => self.nf_static = num(key, value)?,
            "nf_dynamic" => self.nf_dynamic = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "patch_stride" => self.patch_stride = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; every bad line is reported together.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut errs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v.trim()) {
                        errs.push(format!("line {}: {}", n + 1, strip(e)));
                    }
                }
                None => errs.push(format!(
                    "line {}: expected key = value, got {line:?}",
                    n + 1
                )),
            }
        }
        join(errs)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::desk();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.serialize()).map_err(|e| Error::io(path, e))
    }

    pub fn itae_config(&self) -> ItaeConfig {
        let c = self.color.channels();
        let base = match self.itae_width {
            ItaeWidth::Full => ItaeConfig::full(c),
            ItaeWidth::Desk => ItaeConfig::desk(c),
        };
        ItaeConfig {
            tau: self.tau,
            mode: self.itae_mode,
            laterals: self.itae_laterals,
            seed: self.seed,
            ..base
        }
    }

    pub fn itae_train_config(&self) -> ItaeTrainConfig {
        ItaeTrainConfig {
            lr: self.itae_lr,
            batch_size: self.itae_batch,
            epochs: self.itae_epochs,
            seed: self.seed,
        }
    }

    /// Flow over pooled features: 3 channels on the static side, 2 on the
    /// dynamic side.
    pub fn flow_config(&self, static_side: bool) -> FlowConfig {
        FlowConfig {
            hidden: self.nf_hidden,
            seed: self.seed.wrapping_add(if static_side { 1 } else { 2 }),
            ..FlowConfig::new(if static_side { 3 } else { 2 }, self.nf_k, self.nf_l)
        }
    }

    pub fn flow_train_config(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            lr: self.nf_lr,
            batch_size: self.nf_batch,
            epochs: self.nf_epochs,
            seed: self.seed,
        }
    }

    fn clip_spec(&self, source: &Path, stride: usize) -> ClipSpec {
        ClipSpec {
            stride,
            color: self.color,
            on_bad_frame: self.on_bad_frame,
            ..ClipSpec::new(
                source,
                self.clip_len,
                self.tau,
                (self.resize_h, self.resize_w),
            )
        }
    }

    pub fn train_spec(&self) -> Result<ClipSpec> {
        let dir = self
            .train_dir
            .as_ref()
            .ok_or_else(|| Error::Config("train_dir is not set".into()))?;
        Ok(self.clip_spec(dir, self.train_stride))
    }

    pub fn test_spec(&self) -> Result<ClipSpec> {
        let dir = self
            .test_dir
            .as_ref()
            .ok_or_else(|| Error::Config("test_dir is not set".into()))?;
        Ok(self.clip_spec(dir, self.eval_stride))
    }

    pub fn labels_path(&self) -> Option<PathBuf> {
        self.labels
            .clone()
            .or_else(|| self.test_dir.as_ref().map(|d| d.join("labels.txt")))
    }

    pub fn uses_flows(&self) -> bool {
        self.nf_static || self.nf_dynamic
    }

    /// Check value ranges, and that the dataset paths `need` exist.
    pub fn validate(&self, need: Need) -> Result<()> {
        let mut errs = Vec::new();
        let mut positive = |name: &str, v: usize| {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        };
        positive("clip_len", self.clip_len);
        positive("tau", self.tau);
        positive("train_stride", self.train_stride);
        positive("eval_stride", self.eval_stride);
        positive("itae_batch", self.itae_batch);
        positive("itae_epochs", self.itae_epochs);
        positive("nf_k", self.nf_k);
        positive("nf_l", self.nf_l);
        positive("nf_hidden", self.nf_hidden);
        positive("nf_batch", self.nf_batch);
        positive("nf_epochs", self.nf_epochs);
        positive("patch", self.patch);
        positive("patch_stride", self.patch_stride);
        if self.tau > 0 && !self.clip_len.is_multiple_of(self.tau) {
            errs.push(format!(
                "clip_len {} is not divisible by tau {}",
                self.clip_len, self.tau
            ));
        }
        let m = 4 << self.nf_l.min(16);
        if !self.resize_h.is_multiple_of(m)
            || !self.resize_w.is_multiple_of(m)
            || self.resize_h == 0
            || self.resize_w == 0
        {
            errs.push(format!(
                "resize {}x{} must be a positive multiple of {m} (4 for the encoder, 2^nf_l for the flow)",
                self.resize_h, self.resize_w
            ));
        }
        if self.patch > self.resize_h.min(self.resize_w) {
            errs.push(format!("patch {} exceeds the frame size", self.patch));
        }
        for (name, lr) in [("itae_lr", self.itae_lr), ("nf_lr", self.nf_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                errs.push(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            errs.push("lambda must be a finite non-negative number".into());
        }
        if self.nf_static && !self.itae_mode.uses_static() {
            errs.push(format!(
                "nf_static needs the static encoder (itae_mode is {})",
                self.itae_mode.as_str()
            ));
        }
        if self.nf_dynamic && !self.itae_mode.uses_dynamic() {
            errs.push(format!(
                "nf_dynamic needs the dynamic encoder (itae_mode is {})",
                self.itae_mode.as_str()
            ));
        }
        let mut dir = |name: &str, p: &Option<PathBuf>| match p {
            None => errs.push(format!("{name} is not set")),
            Some(p) if !p.exists() => errs.push(format!("{name} {} does not exist", p.display())),
            Some(_) => {}
        };
        if need.train {
            dir("train_dir", &self.train_dir);
        }
        if need.test {
            dir("test_dir", &self.test_dir);
        }
        join(errs)
    }

    /// Key/value pairs that pin down the autoencoder and its input geometry.
    pub fn model_kv(&self) -> Vec<(String, String)> {
        let mut kv = self.itae_config().to_kv();
        kv.push(("clip_len".into(), self.clip_len.to_string()));
        kv.push(("resize_h".into(), self.resize_h.to_string()));
        kv.push(("resize_w".into(), self.resize_w.to_string()));
        kv
    }
}

/// Which dataset paths a command requires.
#[derive(Clone, Copy, Debug, Default)]
pub struct Need {
    pub train: bool,
    pub test: bool,
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn join(errs: Vec<String>) -> Result<()> {
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs.join("; ")))
    }
}
