use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::tensor::Tensor5;

use super::{recon_loss_var, ItaeModel, ReconLossReport, VideoClip};

#[derive(Clone, Debug, PartialEq)]
pub struct ItaeTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Shuffle seed.
    pub seed: u64,
}

impl Default for ItaeTrainConfig {
    fn default() -> Self {
        ItaeTrainConfig {
            lr: 1e-2,
            batch_size: 8,
            epochs: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ItaeTrainReport {
    /// One entry per optimizer step.
    pub losses: Vec<ReconLossReport>,
}

impl ItaeTrainReport {
    pub fn totals(&self) -> Vec<f64> {
        self.losses.iter().map(|l| l.total).collect()
    }
}

fn stack(clips: &[&VideoClip]) -> Result<Tensor5> {
    let frames: Vec<&Tensor5> = clips.iter().map(|c| &c.frames).collect();
    Tensor5::cat(&frames, 0)
}

/// Minimize the reconstruction loss over normal clips with Adam and a
/// cosine-annealed step size.
///
/// A non-finite loss or gradient aborts with [`Error::Numeric`] before the
/// update is applied, so `model` keeps its last good parameters.
pub fn train_itae(
    model: &mut ItaeModel,
    clips: &[VideoClip],
    config: &ItaeTrainConfig,
    mut on_step: impl FnMut(usize, &ReconLossReport),
) -> Result<ItaeTrainReport> {
    if clips.is_empty() {
        return Err(Error::Config("no training clips".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let per_epoch = clips.len().div_ceil(config.batch_size);
    let mut opt = Adam::new(AdamConfig::new(config.lr, per_epoch * config.epochs));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut report = ItaeTrainReport::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let picked: Vec<&VideoClip> = batch.iter().map(|&i| &clips[i]).collect();
            let x = stack(&picked)?;
            let tape = Tape::new();
            let input = tape.constant(x);
            let fwd = model.forward_batch(&tape, &input)?;
            let loss = recon_loss_var(&input, &fwd.output)?;
            let values = loss.report();
            let step = report.losses.len();
            if !values.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite reconstruction loss at step {step}"
                )));
            }
            let grads = tape.backward(&loss.total)?;
            for p in model.params() {
                if grads.param(p.id()).is_some_and(|g| !g.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {} at step {step}",
                        p.name
                    )));
                }
            }
            opt.step(model.params_mut(), &grads);
            on_step(step, &values);
            report.losses.push(values);
        }
    }
    Ok(report)
}
