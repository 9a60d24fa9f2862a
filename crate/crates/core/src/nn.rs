//! Convolution layers and the Adam optimizer with cosine annealing.

use rand::Rng;

use crate::autodiff::{Gradients, Param, Tape, Var};
use crate::conv::ConvSpec;
use crate::error::Result;
use crate::tensor::{Shape5, Tensor5};

/// 3-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Param,
    pub spec: ConvSpec,
}

impl Conv3d {
    /// He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel.iter().product::<usize>()) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let shape = Shape5::new(out_ch, in_ch, kernel[0], kernel[1], kernel[2]);
        Conv3d {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor5::uniform(shape, -bound, bound, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor5::zeros([1, out_ch, 1, 1, 1])),
            spec,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        spec: ConvSpec,
    ) -> Self {
        let shape = Shape5::new(out_ch, in_ch, kernel[0], kernel[1], kernel[2]);
        Conv3d {
            weight: Param::new(format!("{name}.weight"), Tensor5::zeros(shape)),
            bias: Param::new(format!("{name}.bias"), Tensor5::zeros([1, out_ch, 1, 1, 1])),
            spec,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dims()[0]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let d = self.weight.value.dims();
        [d[2], d[3], d[4]]
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<Var<'t>> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        x.conv3d(&w, self.spec)?.add_channel(&b)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed 3-D convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvTranspose3d {
    pub weight: Param,
    pub bias: Param,
    pub spec: ConvSpec,
    pub output_padding: [usize; 3],
}

impl ConvTranspose3d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        spec: ConvSpec,
        output_padding: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel.iter().product::<usize>()) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let shape = Shape5::new(in_ch, out_ch, kernel[0], kernel[1], kernel[2]);
        ConvTranspose3d {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor5::uniform(shape, -bound, bound, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor5::zeros([1, out_ch, 1, 1, 1])),
            spec,
            output_padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dims()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let d = self.weight.value.dims();
        [d[2], d[3], d[4]]
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<Var<'t>> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        x.conv_transpose3d(&w, self.spec, self.output_padding)?
            .add_channel(&b)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Total steps of the cosine schedule; the rate decays from `lr` to
    /// `lr * min_lr_ratio`.
    pub total_steps: usize,
    pub min_lr_ratio: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, total_steps: usize) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps,
            min_lr_ratio: 0.0,
        }
    }

    /// Cosine-annealed step size at step `t` (zero-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr;
        }
        let progress = (t.min(self.total_steps - 1)) as f64 / (self.total_steps - 1) as f64;
        let floor = self.lr * self.min_lr_ratio;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam optimizer state, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: usize,
    moments: std::collections::HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Default::default(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Apply one update to every parameter that received a gradient.
    pub fn step(&mut self, params: Vec<&mut Param>, grads: &Gradients) {
        let lr = self.config.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for p in params {
            let Some(g) = grads.param(p.id()) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            if lr == 0.0 {
                continue;
            }
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.config.eps);
            }
        }
    }
}
