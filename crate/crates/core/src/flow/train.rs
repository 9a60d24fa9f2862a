use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::tensor::Tensor5;

use super::FlowStack;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            lr: 1e-3,
            batch_size: 8,
            epochs: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FlowTrainReport {
    /// Mean NLL of each step's batch, before its update.
    pub nll: Vec<f64>,
}

/// Gather samples `idx` of a batch tensor into a new batch.
pub fn gather(samples: &Tensor5, idx: &[usize]) -> Result<Tensor5> {
    let s = samples.shape();
    let per = s.per_sample();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        if i >= s.batch() {
            return Err(Error::InvalidShape {
                op: "gather",
                detail: format!("sample {i} out of range for {s}"),
            });
        }
        data.extend_from_slice(&samples.data()[i * per..(i + 1) * per]);
    }
    Tensor5::from_vec(s.with(0, idx.len()), data)
}

/// Fit the stack to `samples` (one flow sample per batch entry) by
/// minimizing mean NLL.
///
/// Actnorm layers are initialized from the first batch. Training aborts with
/// [`Error::Numeric`] when the batch NLL stops being finite or climbs past
/// ten times its first value (measured as `first + 9 |first|`).
pub fn train_flow(
    stack: &mut FlowStack,
    samples: &Tensor5,
    config: &FlowTrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<FlowTrainReport> {
    let n = samples.shape().batch();
    if n == 0 {
        return Err(Error::Config("no flow training samples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    stack.check_input(samples.shape())?;
    let per_epoch = n.div_ceil(config.batch_size);
    let mut opt = Adam::new(AdamConfig::new(config.lr, per_epoch * config.epochs));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = FlowTrainReport::default();
    let mut limit = f64::INFINITY;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size) {
            let x = gather(samples, idx)?;
            if !stack.is_initialized() {
                stack.data_init(&x)?;
            }
            let tape = Tape::new();
            let f = stack.forward(&tape, &tape.constant(x))?;
            let loss = f.mean_nll();
            let value = loss.item();
            let step = report.nll.len();
            if step == 0 {
                limit = value + 9.0 * value.abs();
            }
            if !value.is_finite() || value > limit {
                return Err(Error::Numeric(format!(
                    "flow nll diverged at step {step}: {value}"
                )));
            }
            let grads = tape.backward(&loss)?;
            for p in stack.params() {
                if grads.param(p.id()).is_some_and(|g| !g.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {} at step {step}",
                        p.name
                    )));
                }
            }
            opt.step(stack.params_mut(), &grads);
            on_step(step, value);
            report.nll.push(value);
        }
    }
    Ok(report)
}
