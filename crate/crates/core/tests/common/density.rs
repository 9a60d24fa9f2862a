// Two-dimensional density checks: grid quadrature and a Gaussian-mixture
// entropy oracle.

use itae::flow::{train_flow, FlowConfig, FlowStack, FlowTrainConfig};
use itae::{Shape5, Tensor5};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::rng;

/// Equal-weight isotropic mixture in the plane.
pub struct Mixture {
    pub means: Vec<[f64; 2]>,
    pub std: f64,
}

impl Mixture {
    pub fn standard() -> Self {
        Mixture {
            means: vec![[-1.5, -0.5], [1.5, 0.5], [0.0, 1.8]],
            std: 0.6,
        }
    }

    pub fn log_pdf(&self, x: [f64; 2]) -> f64 {
        let k = self.means.len() as f64;
        let var = self.std * self.std;
        let terms: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let d2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                -d2 / (2.0 * var) - (2.0 * std::f64::consts::PI * var).ln() - k.ln()
            })
            .collect();
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let m = self.means[r.random_range(0..self.means.len())];
                let a: f64 = StandardNormal.sample(&mut r);
                let b: f64 = StandardNormal.sample(&mut r);
                [m[0] + self.std * a, m[1] + self.std * b]
            })
            .collect()
    }

    /// Differential entropy in nats, by Monte Carlo on the exact density.
    pub fn entropy(&self, n: usize, seed: u64) -> f64 {
        let s = self.sample(n, seed);
        -s.iter().map(|&x| self.log_pdf(x)).sum::<f64>() / n as f64
    }
}

pub fn to_tensor(points: &[[f64; 2]]) -> Tensor5 {
    let data = points.iter().flat_map(|p| [p[0], p[1]]).collect();
    Tensor5::from_vec(Shape5::new(points.len(), 2, 1, 1, 1), data).unwrap()
}

/// Flow over points of the plane: two channels, no squeeze, one level.
pub fn planar_flow(steps: usize, seed: u64) -> FlowStack {
    let mut cfg = FlowConfig::new(2, steps, 1);
    cfg.squeeze = false;
    cfg.hidden = 32;
    cfg.seed = seed;
    FlowStack::new(cfg).unwrap()
}

pub fn fit(stack: &mut FlowStack, points: &[[f64; 2]], epochs: usize, seed: u64) -> Vec<f64> {
    let cfg = FlowTrainConfig {
        lr: 5e-3,
        batch_size: 128,
        epochs,
        seed,
    };
    train_flow(stack, &to_tensor(points), &cfg, |_, _| {})
        .unwrap()
        .nll
}

/// Midpoint-rule integral of `exp(-nll)` over `[-half, half]^2`.
pub fn grid_mass(stack: &FlowStack, half: f64, step: f64) -> f64 {
    let n = (2.0 * half / step).round() as usize;
    let centers: Vec<f64> = (0..n).map(|i| -half + (i as f64 + 0.5) * step).collect();
    let mut total = 0.0;
    for &a in &centers {
        let row: Vec<[f64; 2]> = centers.iter().map(|&b| [a, b]).collect();
        let nll = stack.forward_nll(&to_tensor(&row)).unwrap().nll;
        total += nll.iter().map(|v| (-v).exp()).sum::<f64>();
    }
    total * step * step
}
