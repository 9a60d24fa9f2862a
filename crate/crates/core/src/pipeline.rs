//! The two training steps, scoring and evaluation, in memory and as
//! file-based commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::bridge::FlowInput;
use crate::checkpoint::{
    fingerprint, flow_checkpoint, flow_from_checkpoint, hash_dir, itae_checkpoint,
    itae_from_checkpoint, Checkpoint,
};
use crate::config::{Need, RunConfig};
use crate::data::{clips_from_video, load_clips, load_video, read_labels, Video};
use crate::error::{Error, Result};
use crate::flow::{train_flow, FlowStack, FlowTrainReport};
use crate::itae::{train_itae, ItaeModel, ItaeTrainReport, ReconLossReport, VideoClip};
use crate::metrics::Metrics;
use crate::scoring::{recon_score, FrameAccumulator, ScoreSeries};
use crate::tensor::Tensor5;

/// Trained static and dynamic flows; either may be absent.
#[derive(Clone, Debug, Default)]
pub struct Flows {
    pub static_flow: Option<FlowStack>,
    pub dynamic_flow: Option<FlowStack>,
}

#[derive(Clone, Debug, Default)]
pub struct FlowLogs {
    pub static_log: Option<FlowTrainReport>,
    pub dynamic_log: Option<FlowTrainReport>,
}

fn log_itae_step(step: usize, l: &ReconLossReport) {
    if step.is_multiple_of(25) {
        log::info!(
            "itae step {step}: total {:.5} (l2 {:.5}, ms-ssim {:.5}, grad {:.5})",
            l.total,
            l.l2,
            l.ms_ssim,
            l.grad
        );
    }
}

/// Step one: fit the autoencoder to normal clips.
pub fn fit_itae(cfg: &RunConfig, clips: &[VideoClip]) -> Result<(ItaeModel, ItaeTrainReport)> {
    let mut model = ItaeModel::new(cfg.itae_config())?;
    let report = train_itae(&mut model, clips, &cfg.itae_train_config(), log_itae_step)?;
    Ok((model, report))
}

/// Flow samples of every clip, stacked along the batch axis.
pub fn flow_samples(
    model: &ItaeModel,
    clips: &[VideoClip],
) -> Result<(Option<Tensor5>, Option<Tensor5>)> {
    let mut st = Vec::new();
    let mut dy = Vec::new();
    for c in clips {
        let f = FlowInput::from_clip(model, c)?;
        st.extend(f.static_in);
        dy.extend(f.dynamic_in);
    }
    let cat = |v: Vec<Tensor5>| -> Result<Option<Tensor5>> {
        if v.is_empty() {
            return Ok(None);
        }
        Tensor5::cat(&v.iter().collect::<Vec<_>>(), 0).map(Some)
    };
    Ok((cat(st)?, cat(dy)?))
}

/// Step two: fit the enabled flows to features of the frozen autoencoder.
/// The model is only borrowed immutably, so it cannot change here.
pub fn fit_flows(
    cfg: &RunConfig,
    model: &ItaeModel,
    clips: &[VideoClip],
) -> Result<(Flows, FlowLogs)> {
    let (st, dy) = flow_samples(model, clips)?;
    let mut flows = Flows::default();
    let mut logs = FlowLogs::default();
    let tc = cfg.flow_train_config();
    let fit =
        |samples: Option<Tensor5>, static_side: bool| -> Result<(FlowStack, FlowTrainReport)> {
            let name = if static_side { "static" } else { "dynamic" };
            let samples =
                samples.ok_or_else(|| Error::Config(format!("the {name} encoder is disabled")))?;
            let mut stack = FlowStack::new(cfg.flow_config(static_side))?;
            let log = train_flow(&mut stack, &samples, &tc, |step, nll| {
                if step % 50 == 0 {
                    log::info!("{name} flow step {step}: nll {nll:.4}");
                }
            })?;
            Ok((stack, log))
        };
    if cfg.nf_static {
        let (s, l) = fit(st, true)?;
        flows.static_flow = Some(s);
        logs.static_log = Some(l);
    }
    if cfg.nf_dynamic {
        let (s, l) = fit(dy, false)?;
        flows.dynamic_flow = Some(s);
        logs.dynamic_log = Some(l);
    }
    Ok((flows, logs))
}

/// Per-frame scores of a video: clips every `eval_stride` frames, values of
/// frames shared by several clips averaged.
pub fn score_video(
    cfg: &RunConfig,
    model: &ItaeModel,
    flows: &Flows,
    video: &Video,
    labels: Option<&[u8]>,
) -> Result<ScoreSeries> {
    let spec = cfg.test_spec().unwrap_or_else(|_| {
        let mut c = cfg.clone();
        c.test_dir = Some(PathBuf::from(&video.id));
        c.test_spec().expect("test dir set")
    });
    let clips = clips_from_video(video, &spec)?;
    if clips.is_empty() {
        return Err(Error::Config(format!(
            "video {} has {} frames, fewer than clip_len {}",
            video.id,
            video.len(),
            cfg.clip_len
        )));
    }
    let tau = cfg.tau;
    let mut recon = FrameAccumulator::new();
    let mut nll_s = FrameAccumulator::new();
    let mut nll_d = FrameAccumulator::new();
    for clip in &clips {
        let tape = Tape::no_grad();
        let out = model.forward(&tape, clip)?;
        let r = recon_score(
            &clip.frames,
            out.output.value(),
            cfg.patch,
            cfg.patch_stride,
        )?;
        recon.extend(&clip.frame_indices, &r);
        if flows.static_flow.is_none() && flows.dynamic_flow.is_none() {
            continue;
        }
        let input = FlowInput::from_clip(model, clip)?;
        if let (Some(flow), Some(x)) = (&flows.static_flow, &input.static_in) {
            let nll = flow.forward_nll(x)?.nll;
            for (slot, v) in nll.iter().enumerate() {
                for &f in &clip.frame_indices[slot * tau..(slot + 1) * tau] {
                    nll_s.add(f, *v);
                }
            }
        }
        if let (Some(flow), Some(x)) = (&flows.dynamic_flow, &input.dynamic_in) {
            nll_d.extend(&clip.frame_indices, &flow.forward_nll(x)?.nll);
        }
    }
    let frames = recon.frames();
    let labels = match labels {
        Some(l) => Some(labels_for(&frames, l)?),
        None => None,
    };
    Ok(ScoreSeries {
        recon: recon.means(),
        nll_static: flows.static_flow.as_ref().map(|_| nll_s.means()),
        nll_dynamic: flows.dynamic_flow.as_ref().map(|_| nll_d.means()),
        frame_index: frames,
        lambda: cfg.lambda,
        labels,
    })
}

/// Labels of the scored frames; the label list must cover every frame.
pub fn labels_for(frames: &[usize], labels: &[u8]) -> Result<Vec<u8>> {
    let needed = frames.iter().max().map_or(0, |m| m + 1);
    if labels.len() != needed {
        return Err(Error::Config(format!(
            "label file has {} entries but the video has {needed} frames",
            labels.len()
        )));
    }
    Ok(frames.iter().map(|&f| labels[f]).collect())
}

/// AUC/EER of a score series at fusion weight `lambda`.
pub fn evaluate(series: &ScoreSeries, lambda: f64) -> Result<Metrics> {
    let labels = series
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("score series has no labels".into()))?;
    let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    Metrics::from_scores(&series.fused_with(lambda)?, &truth)
}

/// Metrics at each fusion weight of `grid`.
pub fn sweep_lambda(series: &ScoreSeries, grid: &[f64]) -> Result<Vec<(f64, Metrics)>> {
    grid.iter()
        .map(|&l| Ok((l, evaluate(series, l)?)))
        .collect()
}

pub fn sweep_table(rows: &[(f64, Metrics)]) -> String {
    let mut s = String::from("lambda,auc,eer,n_frames\n");
    for (l, m) in rows {
        let _ = writeln!(s, "{l},{},{},{}", m.auc, m.eer, m.n_frames);
    }
    s
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Where commands keep their outputs under `out_dir`.
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(cfg: &RunConfig) -> Self {
        RunLayout {
            root: cfg.out_dir.clone(),
        }
    }

    pub fn itae(&self) -> PathBuf {
        self.root.join("itae")
    }

    pub fn nf_static(&self) -> PathBuf {
        self.root.join("nf_static")
    }

    pub fn nf_dynamic(&self) -> PathBuf {
        self.root.join("nf_dynamic")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    /// Resolved configuration written by `command`.
    pub fn config(&self, command: &str) -> PathBuf {
        self.root.join(format!("{command}.config.txt"))
    }
}

/// `train-itae`: train on `train_dir`, write the checkpoint, a per-step
/// loss CSV and the resolved config.
pub fn cmd_train_itae(cfg: &RunConfig) -> Result<ItaeTrainReport> {
    cfg.validate(Need {
        train: true,
        test: false,
    })?;
    let layout = RunLayout::new(cfg);
    ensure_dir(&layout.root)?;
    cfg.save(layout.config("train-itae"))?;
    let clips = load_clips(&cfg.train_spec()?)?;
    log::info!("training the autoencoder on {} clips", clips.len());
    let mut model = ItaeModel::new(cfg.itae_config())?;
    let fp = fingerprint(&cfg.model_kv());
    let report = match train_itae(&mut model, &clips, &cfg.itae_train_config(), log_itae_step) {
        Ok(r) => r,
        Err(e @ (Error::Numeric(_) | Error::NonFinite(_))) => {
            // the failing step was never applied, so the model is the last good state
            itae_checkpoint(&model, &fp).save(layout.root.join("itae_last_good"))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    itae_checkpoint(&model, &fp).save(layout.itae())?;
    let mut csv = String::from("step,l2,ms_ssim,grad,total\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{}", l.l2, l.ms_ssim, l.grad, l.total);
    }
    write(&layout.root.join("itae_loss.csv"), &csv)?;
    Ok(report)
}

/// Load the step-one checkpoint and check it was made with this config.
pub fn load_frozen_itae(cfg: &RunConfig) -> Result<ItaeModel> {
    let dir = RunLayout::new(cfg).itae();
    let ck = Checkpoint::load(&dir)?;
    let expected = fingerprint(&cfg.model_kv());
    if ck.fingerprint != expected {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different model configuration (fingerprint {} vs {expected})",
            dir.display(),
            ck.fingerprint
        )));
    }
    itae_from_checkpoint(&ck)
}

/// Outcome of `train-nf`.
#[derive(Clone, Debug)]
pub struct TrainNfOutcome {
    pub logs: FlowLogs,
    pub itae_hash_before: String,
    pub itae_hash_after: String,
}

/// `train-nf`: fit the flows on features of the frozen step-one model.
pub fn cmd_train_nf(cfg: &RunConfig) -> Result<TrainNfOutcome> {
    cfg.validate(Need {
        train: true,
        test: false,
    })?;
    if !cfg.uses_flows() {
        return Err(Error::Config(
            "both nf_static and nf_dynamic are off; nothing to train".into(),
        ));
    }
    let layout = RunLayout::new(cfg);
    let before = hash_dir(layout.itae())?;
    let model = load_frozen_itae(cfg)?;
    cfg.save(layout.config("train-nf"))?;
    let clips = load_clips(&cfg.train_spec()?)?;
    let (flows, logs) = fit_flows(cfg, &model, &clips)?;
    let fp = fingerprint(&cfg.model_kv());
    let mut csv = String::from("flow,step,nll\n");
    for (name, stack, log, dir) in [
        (
            "static",
            &flows.static_flow,
            &logs.static_log,
            layout.nf_static(),
        ),
        (
            "dynamic",
            &flows.dynamic_flow,
            &logs.dynamic_log,
            layout.nf_dynamic(),
        ),
    ] {
        if let (Some(stack), Some(log)) = (stack, log) {
            flow_checkpoint(stack, &fp).save(dir)?;
            for (i, v) in log.nll.iter().enumerate() {
                let _ = writeln!(csv, "{name},{i},{v}");
            }
        }
    }
    write(&layout.root.join("nf_loss.csv"), &csv)?;
    let after = hash_dir(layout.itae())?;
    if before != after {
        return Err(Error::Contract(
            "autoencoder checkpoint changed during flow training".into(),
        ));
    }
    Ok(TrainNfOutcome {
        logs,
        itae_hash_before: before,
        itae_hash_after: after,
    })
}

fn load_flow(dir: &Path, fp: &str) -> Result<FlowStack> {
    let ck = Checkpoint::load(dir)?;
    if ck.fingerprint != fp {
        return Err(Error::Config(format!(
            "flow checkpoint {} belongs to a different autoencoder configuration",
            dir.display()
        )));
    }
    flow_from_checkpoint(&ck)
}

/// `score`: per-frame scores of `test_dir`, written to `scores.csv`.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreSeries> {
    cfg.validate(Need {
        train: false,
        test: true,
    })?;
    let layout = RunLayout::new(cfg);
    let model = load_frozen_itae(cfg)?;
    let fp = fingerprint(&cfg.model_kv());
    let flows = Flows {
        static_flow: cfg
            .nf_static
            .then(|| load_flow(&layout.nf_static(), &fp))
            .transpose()?,
        dynamic_flow: cfg
            .nf_dynamic
            .then(|| load_flow(&layout.nf_dynamic(), &fp))
            .transpose()?,
    };
    cfg.save(layout.config("score"))?;
    let video = load_video(&cfg.test_spec()?)?;
    let labels = match cfg.labels_path() {
        Some(p) if p.exists() => Some(read_labels(&p)?),
        Some(p) if cfg.labels.is_some() => {
            return Err(Error::Config(format!(
                "label file {} does not exist",
                p.display()
            )));
        }
        _ => None,
    };
    let series = score_video(cfg, &model, &flows, &video, labels.as_deref())?;
    series.save_csv(layout.scores())?;
    Ok(series)
}

/// Read a score CSV, replacing its labels when a label file is given.
pub fn load_scored(scores: &Path, labels: Option<&Path>, lambda: f64) -> Result<ScoreSeries> {
    let mut series = ScoreSeries::load_csv(scores, lambda)?;
    if let Some(p) = labels {
        series.labels = Some(labels_for(&series.frame_index, &read_labels(p)?)?);
    }
    Ok(series)
}

/// `eval`: metrics of a score CSV.
pub fn cmd_eval(scores: &Path, labels: Option<&Path>, lambda: f64) -> Result<Metrics> {
    evaluate(&load_scored(scores, labels, lambda)?, lambda)
}

/// `sweep-lambda`: metrics for every weight of `grid`.
pub fn cmd_sweep(
    scores: &Path,
    labels: Option<&Path>,
    grid: &[f64],
) -> Result<Vec<(f64, Metrics)>> {
    sweep_lambda(&load_scored(scores, labels, 0.0)?, grid)
}
