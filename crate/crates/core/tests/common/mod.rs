// shared by several test targets; not every target uses every helper
#![allow(dead_code)]

pub mod density;
pub mod flowcheck;
pub mod gradsuite;
pub mod roc;

use itae::data::{generate_synthetic, AnomalySpan, SyntheticSceneConfig, SyntheticVideo, Video};
use itae::{Param, ParamId, Result, Shape5, Tape, Tensor5, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Entries perturbed per tensor; larger tensors are subsampled.
pub const FD_MAX_ENTRIES: usize = 48;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn picked(n: usize, seed: u64) -> Vec<usize> {
    if n <= FD_MAX_ENTRIES {
        (0..n).collect()
    } else {
        let mut v = sample(&mut rng(seed ^ 0x5eed), n, FD_MAX_ENTRIES).into_vec();
        v.sort_unstable();
        v
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Worst relative error between tape gradients and central differences
/// for every input of `f`.
pub fn check_inputs<F>(inputs: &[Tensor5], seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&tape, &vars).expect("forward");
    assert_eq!(loss.shape().numel(), 1, "loss must be scalar");
    let grads = tape.backward(&loss).expect("backward");
    let analytic: Vec<Tensor5> = vars
        .iter()
        .map(|v| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor5::zeros(v.shape()))
        })
        .collect();
    let eval = |xs: &[Tensor5]| {
        let t = Tape::no_grad();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        f(&t, &vs).expect("forward").item()
    };
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let idx = picked(input.numel(), seed + i as u64);
        let mut num = Vec::with_capacity(idx.len());
        let mut ana = Vec::with_capacity(idx.len());
        for &j in &idx {
            let mut xs = inputs.to_vec();
            let x0 = input.data()[j];
            xs[i].data_mut()[j] = x0 + FD_STEP;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x0 - FD_STEP;
            let down = eval(&xs);
            num.push((up - down) / (2.0 * FD_STEP));
            ana.push(analytic[i].data()[j]);
        }
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

/// Same check against the parameters of a module.
pub fn check_params<M, F>(
    module: &mut M,
    params_mut: fn(&mut M) -> Vec<&mut Param>,
    seed: u64,
    loss: F,
) -> f64
where
    F: for<'t> Fn(&M, &'t Tape) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let l = loss(module, &tape).expect("forward");
    let grads = tape.backward(&l).expect("backward");
    let ids: Vec<(ParamId, Shape5)> = params_mut(module)
        .iter()
        .map(|p| (p.id(), p.value.shape()))
        .collect();
    let mut worst: f64 = 0.0;
    for (k, (id, shape)) in ids.iter().enumerate() {
        let analytic = grads
            .param(*id)
            .cloned()
            .unwrap_or_else(|| Tensor5::zeros(*shape));
        let idx = picked(shape.numel(), seed + k as u64);
        let mut num = Vec::with_capacity(idx.len());
        let mut ana = Vec::with_capacity(idx.len());
        for &j in &idx {
            let x0 = params_mut(module)[k].value.data()[j];
            let mut at = |v: f64| {
                params_mut(module)[k].value.data_mut()[j] = v;
                let t = Tape::no_grad();
                loss(module, &t).expect("forward").item()
            };
            let up = at(x0 + FD_STEP);
            let down = at(x0 - FD_STEP);
            at(x0);
            num.push((up - down) / (2.0 * FD_STEP));
            ana.push(analytic.data()[j]);
        }
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

/// `sum(y * r)` for a fixed random `r`, so every output entry gets a
/// distinct upstream gradient.
pub fn project<'t>(y: &Var<'t>, seed: u64) -> Result<Var<'t>> {
    let r = y
        .tape()
        .constant(Tensor5::randn(y.shape(), 1.0, &mut rng(seed)));
    Ok(y.mul(&r)?.sum())
}

/// Synthetic frames as a `(1, 1, F, H, W)` video in `[0, 1]`.
pub fn video_of(sv: &SyntheticVideo, id: &str) -> Video {
    let n = sv.frames.len();
    let (h, w) = (sv.frames[0].height, sv.frames[0].width);
    let mut data = Vec::with_capacity(n * h * w);
    for f in &sv.frames {
        data.extend(f.data.iter().map(|&b| f64::from(b) / 255.0));
    }
    Video {
        id: id.into(),
        frames: Tensor5::from_vec(Shape5::new(1, 1, n, h, w), data).unwrap(),
        frame_indices: (0..n).collect(),
    }
}

pub fn synth(seed: u64, frames: usize, spans: &[AnomalySpan]) -> SyntheticVideo {
    let cfg = SyntheticSceneConfig {
        seed,
        ..Default::default()
    };
    generate_synthetic(&cfg, frames, spans).unwrap()
}

/// Output sizes of the full layout for 256x256, T = 16, tau = 4.
pub const FULL_LAYOUT_ROWS: [(&str, [usize; 4]); 12] = [
    ("static.conv1", [96, 4, 128, 128]),
    ("dynamic.conv1", [12, 16, 128, 128]),
    ("static.conv2", [128, 4, 64, 64]),
    ("dynamic.conv2", [16, 16, 64, 64]),
    ("static.conv3", [256, 4, 64, 64]),
    ("dynamic.conv3", [32, 16, 64, 64]),
    ("static.conv4", [256, 4, 64, 64]),
    ("dynamic.conv4", [32, 16, 64, 64]),
    ("decoder.deconv1", [256, 4, 64, 64]),
    ("decoder.deconv2", [128, 8, 128, 128]),
    ("decoder.deconv3", [96, 16, 256, 256]),
    ("decoder.deconv4", [3, 16, 256, 256]),
];
