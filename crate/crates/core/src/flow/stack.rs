use std::f64::consts::{LN_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Param, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor5};

use super::layers::FlowStep;

/// Isotropic unit Gaussian over `d` dimensions.
#[derive(Clone, Copy, Debug, Default)]
pub struct GaussianPrior;

impl GaussianPrior {
    /// `log p(z) = -d/2 ln 2pi - |z|^2 / 2` for each sample of a batch of
    /// latent parts, shape `(N, 1, 1, 1, 1)`.
    pub fn log_density<'t>(&self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("no latent parts".into()))?;
        let d: usize = parts.iter().map(|z| z.shape().per_sample()).sum();
        let mut sq = first.square().sum_per_sample();
        for z in &parts[1..] {
            sq = sq.add(&z.square().sum_per_sample())?;
        }
        Ok(sq
            .mul_scalar(-0.5)
            .add_scalar(-0.5 * d as f64 * (2.0 * PI).ln()))
    }

    /// Log density of a single flattened point.
    pub fn log_density_point(&self, z: &[f64]) -> f64 {
        -0.5 * z.len() as f64 * (2.0 * PI).ln() - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub in_channels: usize,
    /// Steps per level (K).
    pub steps: usize,
    /// Levels (L).
    pub levels: usize,
    /// Coupling conditioner width.
    pub hidden: usize,
    /// Apply the 2x2 space-to-depth squeeze at the start of every level.
    pub squeeze: bool,
    pub seed: u64,
}

impl FlowConfig {
    pub fn new(in_channels: usize, steps: usize, levels: usize) -> Self {
        FlowConfig {
            in_channels,
            steps,
            levels,
            hidden: 64,
            squeeze: true,
            seed: 0,
        }
    }

    /// Channel count entering each level (after its squeeze).
    pub fn level_channels(&self) -> Vec<usize> {
        let mut c = self.in_channels;
        let mut out = Vec::with_capacity(self.levels);
        for l in 0..self.levels {
            if self.squeeze {
                c *= 4;
            }
            out.push(c);
            if l + 1 < self.levels {
                c /= 2;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.in_channels == 0 {
            errs.push("flow input channels must be positive".to_string());
        }
        if self.steps == 0 {
            errs.push("flow steps per level (K) must be positive".to_string());
        }
        if self.levels == 0 {
            errs.push("flow levels (L) must be positive".to_string());
        }
        if self.hidden == 0 {
            errs.push("flow hidden width must be positive".to_string());
        }
        if errs.is_empty() {
            if let Some(c) = self.level_channels().into_iter().find(|&c| c < 2) {
                errs.push(format!(
                    "a flow level has {c} channel(s); coupling needs at least 2"
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowLevel {
    pub steps: Vec<FlowStep>,
}

/// Multi-scale Glow stack with a unit Gaussian prior.
#[derive(Clone, Debug)]
pub struct FlowStack {
    pub config: FlowConfig,
    pub levels: Vec<FlowLevel>,
}

/// Differentiable result of a forward pass.
pub struct FlowForward<'t> {
    /// Factored latents in the order they leave the stack; the last entry is
    /// the output of the final level.
    pub z: Vec<Var<'t>>,
    /// Per-sample total log-determinant, `(N, 1, 1, 1, 1)`.
    pub logdet: Var<'t>,
    /// Per-sample prior log density.
    pub log_prior: Var<'t>,
    /// Per-sample negative log-likelihood.
    pub nll: Var<'t>,
    /// Dimensions per sample.
    pub dims: usize,
}

impl<'t> FlowForward<'t> {
    /// Mean negative log-likelihood over the batch.
    pub fn mean_nll(&self) -> Var<'t> {
        self.nll.mean()
    }
}

/// Plain-value result of [`FlowStack::forward_nll`].
#[derive(Clone, Debug)]
pub struct NllReport {
    pub nll: Vec<f64>,
    pub logdet: Vec<f64>,
    pub z: Vec<Tensor5>,
    pub dims: usize,
}

impl NllReport {
    pub fn bits_per_dim(&self) -> Vec<f64> {
        self.nll
            .iter()
            .map(|v| bits_per_dim(*v, self.dims))
            .collect()
    }
}

pub fn bits_per_dim(nll: f64, dims: usize) -> f64 {
    nll / (dims as f64 * LN_2)
}

/// Per-layer log-determinant record from [`FlowStack::trace`].
#[derive(Clone, Debug)]
pub struct LayerLogdet {
    pub name: String,
    /// One value per sample.
    pub logdet: Vec<f64>,
}

fn per_sample(v: &Var<'_>, n: usize) -> Vec<f64> {
    let d = v.value().data();
    if d.len() == 1 {
        vec![d[0]; n]
    } else {
        d.to_vec()
    }
}

impl FlowStack {
    pub fn new(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let levels = config
            .level_channels()
            .into_iter()
            .enumerate()
            .map(|(l, c)| FlowLevel {
                steps: (0..config.steps)
                    .map(|k| {
                        FlowStep::new(&format!("level{l}.step{k}"), c, config.hidden, &mut rng)
                    })
                    .collect(),
            })
            .collect();
        Ok(FlowStack { config, levels })
    }

    /// Total number of invertible functions (squeezes and splits included).
    pub fn function_count(&self) -> usize {
        let per_level = 3 * self.config.steps + usize::from(self.config.squeeze);
        per_level * self.config.levels + self.config.levels - 1
    }

    pub fn check_input(&self, s: Shape5) -> Result<()> {
        if s.channels() != self.config.in_channels {
            return Err(Error::Config(format!(
                "flow expects {} input channels, got {s}",
                self.config.in_channels
            )));
        }
        if self.config.squeeze {
            let m = 1 << self.config.levels;
            if !s.height().is_multiple_of(m) || !s.width().is_multiple_of(m) {
                return Err(Error::Config(format!(
                    "spatial dims of {s} must be divisible by {m} for {} squeeze levels",
                    self.config.levels
                )));
            }
        }
        Ok(())
    }

    /// Shapes of the latent parts produced for an input of shape `s`.
    pub fn topology(&self, s: Shape5) -> Result<Vec<Shape5>> {
        self.check_input(s)?;
        let [n, mut c, t, mut h, mut w] = s.0;
        let mut out = Vec::new();
        for l in 0..self.config.levels {
            if self.config.squeeze {
                c *= 4;
                h /= 2;
                w /= 2;
            }
            if l + 1 < self.config.levels {
                let keep = c / 2;
                out.push(Shape5::new(n, c - keep, t, h, w));
                c = keep;
            }
        }
        out.push(Shape5::new(n, c, t, h, w));
        Ok(out)
    }

    fn run<'t>(
        &self,
        tape: &'t Tape,
        x: &Var<'t>,
        mut trace: Option<&mut Vec<LayerLogdet>>,
    ) -> Result<FlowForward<'t>> {
        self.check_input(x.shape())?;
        let n = x.shape().batch();
        let dims = x.shape().per_sample();
        let mut h = x.clone();
        let mut z = Vec::new();
        let mut logdet = tape.constant(Tensor5::zeros([n, 1, 1, 1, 1]));
        for (l, level) in self.levels.iter().enumerate() {
            if self.config.squeeze {
                h = h.squeeze2x2()?;
            }
            for (k, step) in level.steps.iter().enumerate() {
                let (out, lds) = step.forward(tape, &h)?;
                for (name, ld) in ["actnorm", "inv", "coupling"].iter().zip(&lds) {
                    logdet = logdet.add(ld)?;
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.push(LayerLogdet {
                            name: format!("level{l}.step{k}.{name}"),
                            logdet: per_sample(ld, n),
                        });
                    }
                }
                h = out;
            }
            if l + 1 < self.levels.len() {
                let c = h.shape().channels();
                let keep = c / 2;
                z.push(h.narrow(1, keep, c - keep)?);
                h = h.narrow(1, 0, keep)?;
            }
        }
        z.push(h);
        let log_prior = GaussianPrior.log_density(&z)?;
        let nll = log_prior.add(&logdet)?.neg();
        Ok(FlowForward {
            z,
            logdet,
            log_prior,
            nll,
            dims,
        })
    }

    /// Differentiable forward pass for a batch `(N, C, T, H, W)`; every
    /// sample is scored independently.
    pub fn forward<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<FlowForward<'t>> {
        self.run(tape, x, None)
    }

    /// Exact negative log-likelihood of each sample.
    pub fn forward_nll(&self, x: &Tensor5) -> Result<NllReport> {
        let tape = Tape::no_grad();
        let f = self.forward(&tape, &tape.constant(x.clone()))?;
        let report = NllReport {
            nll: f.nll.value().data().to_vec(),
            logdet: f.logdet.value().data().to_vec(),
            z: f.z.iter().map(|v| v.value().clone()).collect(),
            dims: f.dims,
        };
        if report.nll.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow nll"));
        }
        Ok(report)
    }

    /// Per-layer log-determinants and the prior term of a forward pass.
    pub fn trace(&self, x: &Tensor5) -> Result<(Vec<LayerLogdet>, Vec<f64>)> {
        let tape = Tape::no_grad();
        let mut layers = Vec::new();
        let f = self.run(&tape, &tape.constant(x.clone()), Some(&mut layers))?;
        Ok((layers, f.log_prior.value().data().to_vec()))
    }

    fn input_shape_for(&self, z: &[Tensor5]) -> Result<Shape5> {
        let last = z
            .last()
            .ok_or_else(|| Error::Contract("no latent parts".into()))?
            .shape();
        let [n, mut c, t, mut h, mut w] = last.0;
        for l in (0..self.config.levels).rev() {
            if l + 1 < self.config.levels {
                c += z.get(l).map(|p| p.shape().channels()).unwrap_or(0);
            }
            if self.config.squeeze {
                c /= 4;
                h *= 2;
                w *= 2;
            }
        }
        Ok(Shape5::new(n, c, t, h, w))
    }

    /// Map latent parts back to data space. Also returns the per-sample
    /// log-determinant of the inverse map.
    pub fn inverse(&self, z: &[Tensor5]) -> Result<(Tensor5, Vec<f64>)> {
        let shapes: Vec<Shape5> = z.iter().map(Tensor5::shape).collect();
        let mismatch = || {
            let expected = self
                .input_shape_for(z)
                .and_then(|s| self.topology(s))
                .map(|t| {
                    t.iter()
                        .map(|s| s.to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                })
                .unwrap_or_else(|_| format!("{} part(s)", self.config.levels));
            Error::InvalidShape {
                op: "flow inverse",
                detail: format!(
                    "latent parts [{}] do not match the stack topology [{expected}]",
                    shapes
                        .iter()
                        .map(|s| s.to_string())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            }
        };
        if z.len() != self.config.levels {
            return Err(mismatch());
        }
        let input = self.input_shape_for(z)?;
        match self.topology(input) {
            Ok(t) if t == shapes => {}
            _ => return Err(mismatch()),
        }
        let n = input.batch();
        let tape = Tape::no_grad();
        let mut logdet = tape.constant(Tensor5::zeros([n, 1, 1, 1, 1]));
        let mut h = tape.constant(z[z.len() - 1].clone());
        for (l, level) in self.levels.iter().enumerate().rev() {
            if l + 1 < self.levels.len() {
                let part = tape.constant(z[l].clone());
                h = Var::cat(&[&h, &part], 1)?;
            }
            for step in level.steps.iter().rev() {
                let (x, ld) = step.inverse(&tape, &h)?;
                logdet = logdet.add(&ld)?;
                h = x;
            }
            if self.config.squeeze {
                h = h.unsqueeze2x2()?;
            }
        }
        Ok((h.value().clone(), logdet.value().data().to_vec()))
    }

    /// Data-dependent actnorm initialization from one batch; layers that are
    /// already initialized are left alone.
    pub fn data_init(&mut self, x: &Tensor5) -> Result<()> {
        self.check_input(x.shape())?;
        let tape = Tape::no_grad();
        let squeeze = self.config.squeeze;
        let n_levels = self.levels.len();
        let mut h = tape.constant(x.clone());
        for (l, level) in self.levels.iter_mut().enumerate() {
            if squeeze {
                h = h.squeeze2x2()?;
            }
            for step in level.steps.iter_mut() {
                if !step.actnorm.initialized {
                    step.actnorm.initialize(h.value())?;
                }
                h = step.forward(&tape, &h)?.0;
            }
            if l + 1 < n_levels {
                let keep = h.shape().channels() / 2;
                h = h.narrow(1, 0, keep)?;
            }
        }
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.steps().all(|s| s.actnorm.initialized)
    }

    /// Mark every actnorm layer initialized, e.g. after loading weights.
    pub fn mark_initialized(&mut self) {
        for level in &mut self.levels {
            for s in &mut level.steps {
                s.actnorm.initialized = true;
            }
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = &FlowStep> {
        self.levels.iter().flat_map(|l| l.steps.iter())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.steps().flat_map(FlowStep::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.levels
            .iter_mut()
            .flat_map(|l| l.steps.iter_mut())
            .flat_map(FlowStep::params_mut)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Every named tensor needed to restore the stack: parameters plus the
    /// fixed permutation and sign buffers of the 1x1 convolutions.
    pub fn state(&self) -> Vec<(String, &Tensor5)> {
        let mut out: Vec<(String, &Tensor5)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        for s in self.steps() {
            let base = s.inv.log_s.name.trim_end_matches(".log_s");
            out.push((format!("{base}.perm"), &s.inv.perm));
            out.push((format!("{base}.sign"), &s.inv.sign));
        }
        out
    }

    /// Overwrite the tensor called `name`.
    pub fn set_state(&mut self, name: &str, value: Tensor5) -> Result<()> {
        for level in &mut self.levels {
            for s in &mut level.steps {
                let base = s.inv.log_s.name.trim_end_matches(".log_s").to_string();
                let slot = if name == format!("{base}.perm") {
                    Some(&mut s.inv.perm)
                } else if name == format!("{base}.sign") {
                    Some(&mut s.inv.sign)
                } else {
                    s.params_mut()
                        .into_iter()
                        .find(|p| p.name == name)
                        .map(|p| &mut p.value)
                };
                if let Some(slot) = slot {
                    if slot.shape() != value.shape() {
                        return Err(Error::Shape {
                            op: "flow state",
                            lhs: slot.shape(),
                            rhs: value.shape(),
                        });
                    }
                    *slot = value;
                    return Ok(());
                }
            }
        }
        Err(Error::Contract(format!("unknown flow tensor {name}")))
    }
}
