// Finite-difference cases for every differentiable op, the flow layers and
// both training objectives.

use itae::conv::ConvSpec;
use itae::flow::{ActNorm, AffineCoupling, FlowConfig, FlowStack, InvConv1x1};
use itae::itae::{ms_ssim, recon_loss_var};
use itae::nn::{Conv3d, ConvTranspose3d};
use itae::{Tensor5, Var};

use super::{check_inputs, check_params, project, rng};

pub const FD_TOLERANCE: f64 = 1e-4;

fn randn(shape: [usize; 5], seed: u64) -> Tensor5 {
    Tensor5::randn(shape, 1.0, &mut rng(seed))
}

/// Values with `|x| >= 0.1`, away from the kinks of relu, abs and friends.
fn off_kink(shape: [usize; 5], seed: u64) -> Tensor5 {
    randn(shape, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

fn positive(shape: [usize; 5], seed: u64) -> Tensor5 {
    randn(shape, seed).map(|v| v.abs() + 0.5)
}

/// Pixel-like clip in `(0.05, 0.95)`.
fn pixels(shape: [usize; 5], seed: u64) -> Tensor5 {
    Tensor5::uniform(shape, 0.05, 0.95, &mut rng(seed))
}

type Case = (&'static str, f64);

fn unary(
    name: &'static str,
    x: Tensor5,
    seed: u64,
    op: for<'t> fn(&Var<'t>) -> itae::Result<Var<'t>>,
) -> Case {
    (
        name,
        check_inputs(&[x], seed, |_, v| project(&op(&v[0])?, seed + 100)),
    )
}

fn binary(
    name: &'static str,
    a: Tensor5,
    b: Tensor5,
    seed: u64,
    op: for<'t> fn(&Var<'t>, &Var<'t>) -> itae::Result<Var<'t>>,
) -> Case {
    (
        name,
        check_inputs(&[a, b], seed, |_, v| {
            project(&op(&v[0], &v[1])?, seed + 100)
        }),
    )
}

/// Every tape operation.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let s = [2, 3, 2, 3, 2];
    let one = [1, 3, 2, 3, 2];
    let ch = [1, 3, 1, 1, 1];
    let s0 = seed * 1000;
    vec![
        binary("add", randn(s, s0), randn(s, s0 + 1), seed, |a, b| a.add(b)),
        binary(
            "add_broadcast",
            randn(s, s0),
            randn(one, s0 + 1),
            seed,
            |a, b| a.add(b),
        ),
        binary("sub", randn(s, s0), randn(s, s0 + 1), seed, |a, b| a.sub(b)),
        binary("mul", randn(s, s0), randn(s, s0 + 1), seed, |a, b| a.mul(b)),
        binary(
            "mul_broadcast",
            randn(one, s0),
            randn(s, s0 + 1),
            seed,
            |a, b| a.mul(b),
        ),
        binary("div", randn(s, s0), positive(s, s0 + 1), seed, |a, b| {
            a.div(b)
        }),
        unary("add_scalar", randn(s, s0), seed, |x| Ok(x.add_scalar(0.7))),
        unary("mul_scalar", randn(s, s0), seed, |x| Ok(x.mul_scalar(-1.3))),
        unary("neg", randn(s, s0), seed, |x| Ok(x.neg())),
        unary("exp", randn(s, s0), seed, |x| x.exp()),
        unary("ln", positive(s, s0), seed, |x| x.ln()),
        unary("tanh", randn(s, s0), seed, |x| Ok(x.tanh())),
        unary("sigmoid", randn(s, s0), seed, |x| Ok(x.sigmoid())),
        unary("relu", off_kink(s, s0), seed, |x| Ok(x.relu())),
        unary("leaky_relu", off_kink(s, s0), seed, |x| {
            Ok(x.leaky_relu(0.2))
        }),
        unary("abs", off_kink(s, s0), seed, |x| Ok(x.abs())),
        unary("square", randn(s, s0), seed, |x| Ok(x.square())),
        unary("powf", positive(s, s0), seed, |x| x.powf(0.37)),
        unary("clamp_min", off_kink(s, s0), seed, |x| Ok(x.clamp_min(0.0))),
        binary(
            "add_channel",
            randn(s, s0),
            randn(ch, s0 + 1),
            seed,
            |a, b| a.add_channel(b),
        ),
        binary(
            "mul_channel",
            randn(s, s0),
            randn(ch, s0 + 1),
            seed,
            |a, b| a.mul_channel(b),
        ),
        unary("narrow", randn(s, s0), seed, |x| x.narrow(3, 1, 2)),
        binary(
            "cat",
            randn(s, s0),
            randn([2, 1, 2, 3, 2], s0 + 1),
            seed,
            |a, b| Var::cat(&[a, b], 1),
        ),
        unary("sum", randn(s, s0), seed, |x| Ok(x.sum())),
        unary("mean", randn(s, s0), seed, |x| Ok(x.mean())),
        unary("sum_axes", randn(s, s0), seed, |x| {
            Ok(x.sum_axes([false, true, false, true, false]))
        }),
        unary("mean_axes", randn(s, s0), seed, |x| {
            Ok(x.mean_axes([true, false, true, false, true]))
        }),
        unary("sum_per_sample", randn(s, s0), seed, |x| {
            Ok(x.sum_per_sample())
        }),
        unary("max_axis", randn(s, s0), seed, |x| Ok(x.max_axis(1))),
        binary(
            "conv3d",
            randn([2, 2, 4, 5, 5], s0),
            randn([3, 2, 2, 3, 3], s0 + 1),
            seed,
            |x, w| x.conv3d(w, ConvSpec::new([1, 2, 2], [1, 1, 1])),
        ),
        binary(
            "conv_transpose3d",
            randn([2, 3, 2, 3, 3], s0),
            randn([3, 2, 2, 3, 3], s0 + 1),
            seed,
            |x, w| x.conv_transpose3d(w, ConvSpec::new([2, 2, 2], [0, 1, 1]), [0, 1, 1]),
        ),
        unary("squeeze2x2", randn([2, 2, 1, 4, 6], s0), seed, |x| {
            x.squeeze2x2()
        }),
        unary("unsqueeze2x2", randn([2, 8, 1, 2, 3], s0), seed, |x| {
            x.unsqueeze2x2()
        }),
    ]
}

/// Layer parameters (conv layers, flow layers).
pub fn layer_cases(seed: u64) -> Vec<Case> {
    let s0 = seed * 1000 + 500;
    let mut out = Vec::new();

    let x = randn([2, 2, 4, 6, 6], s0);
    let mut conv = Conv3d::new(
        "c",
        2,
        3,
        [3, 3, 3],
        ConvSpec::new([1, 2, 2], [1, 1, 1]),
        &mut rng(s0 + 1),
    );
    out.push((
        "conv3d layer params",
        check_params(&mut conv, Conv3d::params_mut, seed, |m, t| {
            project(&m.forward(t, &t.constant(x.clone()))?, s0 + 2)
        }),
    ));
    let mut deconv = ConvTranspose3d::new(
        "d",
        3,
        2,
        [3, 3, 3],
        ConvSpec::new([2, 2, 2], [1, 1, 1]),
        [1, 1, 1],
        &mut rng(s0 + 3),
    );
    let xd = randn([2, 3, 2, 3, 3], s0 + 4);
    out.push((
        "conv_transpose3d layer params",
        check_params(&mut deconv, ConvTranspose3d::params_mut, seed, |m, t| {
            project(&m.forward(t, &t.constant(xd.clone()))?, s0 + 5)
        }),
    ));

    let xf = randn([3, 4, 1, 3, 3], s0 + 6);
    let mut an = ActNorm::new("an", 4);
    an.initialize(&xf).unwrap();
    // move off the data-init point so the gradients are generic
    an.logs.value = an.logs.value.map(|v| v + 0.1);
    out.push((
        "actnorm params",
        check_params(&mut an, ActNorm::params_mut, seed, |m, t| {
            let (y, ld) = m.forward(t, &t.constant(xf.clone()))?;
            project(&y, s0 + 7)?.add(&ld)
        }),
    ));
    out.push((
        "actnorm input",
        check_inputs(std::slice::from_ref(&xf), seed, |t, v| {
            let (y, ld) = an.forward(t, &v[0])?;
            project(&y, s0 + 7)?.add(&ld)
        }),
    ));

    let mut inv = InvConv1x1::new("inv", 4, &mut rng(s0 + 8));
    out.push((
        "invconv params",
        check_params(&mut inv, InvConv1x1::params_mut, seed, |m, t| {
            let (y, ld) = m.forward(t, &t.constant(xf.clone()))?;
            project(&y, s0 + 9)?.add(&ld.mul_scalar(0.5))
        }),
    ));

    let mut cp = AffineCoupling::new("cp", 4, 6, &mut rng(s0 + 10));
    // the last conditioner conv starts at zero; give it a random value
    for p in cp.params_mut() {
        p.value = Tensor5::randn(p.value.shape(), 0.3, &mut rng(s0 + 11));
    }
    out.push((
        "coupling params",
        check_params(&mut cp, AffineCoupling::params_mut, seed, |m, t| {
            let (y, ld) = m.forward(t, &t.constant(xf.clone()))?;
            project(&y, s0 + 12)?.add(&ld.sum())
        }),
    ));
    out.push((
        "coupling input",
        check_inputs(std::slice::from_ref(&xf), seed, |t, v| {
            let (y, ld) = cp.forward(t, &v[0])?;
            project(&y, s0 + 12)?.add(&ld.sum())
        }),
    ));
    out
}

/// The two objectives: reconstruction loss and flow negative log-likelihood.
pub fn loss_cases(seed: u64) -> Vec<Case> {
    let s0 = seed * 1000 + 900;
    let mut out = Vec::new();
    let shape = [2, 2, 2, 24, 24];
    let x = pixels(shape, s0);
    // a plausible reconstruction: the input plus small noise
    let noise = Tensor5::randn(shape, 0.05, &mut rng(s0 + 1));
    let y = x.zip_map(&noise, |a, b| (a + b).clamp(0.01, 0.99)).unwrap();
    out.push((
        "ms_ssim",
        check_inputs(&[x.clone(), y.clone()], seed, |_, v| ms_ssim(&v[0], &v[1])),
    ));
    out.push((
        "reconstruction loss",
        check_inputs(
            &[x, y],
            seed,
            |_, v| Ok(recon_loss_var(&v[0], &v[1])?.total),
        ),
    ));

    let mut cfg = FlowConfig::new(2, 2, 2);
    cfg.hidden = 4;
    cfg.seed = seed;
    let mut stack = FlowStack::new(cfg).unwrap();
    let xf = randn([3, 2, 1, 4, 4], s0 + 2);
    stack.data_init(&xf).unwrap();
    for p in stack.params_mut() {
        let jitter = Tensor5::randn(p.value.shape(), 0.05, &mut rng(s0 + 3));
        p.value.add_assign(&jitter).unwrap();
    }
    out.push((
        "flow nll params",
        check_params(&mut stack, FlowStack::params_mut, seed, |m, t| {
            Ok(m.forward(t, &t.constant(xf.clone()))?.mean_nll())
        }),
    ));
    out.push((
        "flow nll input",
        check_inputs(&[xf], seed, |t, v| Ok(stack.forward(t, &v[0])?.mean_nll())),
    ));
    out
}

pub fn all_cases(seed: u64) -> Vec<Case> {
    let mut v = op_cases(seed);
    v.extend(layer_cases(seed));
    v.extend(loss_cases(seed));
    v
}
