// Invertibility and numerical-Jacobian checks for flow layers and stacks.

use itae::flow::{ActNorm, AffineCoupling, FlowConfig, FlowStack, FlowStep, InvConv1x1};
use itae::{Shape5, Tape, Tensor5, Var};
use nalgebra::DMatrix;

use super::rng;

const JAC_STEP: f64 = 1e-4;

fn central(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], col: usize, h: f64) -> Vec<f64> {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[col] += h;
    down[col] -= h;
    let (fu, fd) = (f(&up), f(&down));
    assert_eq!(fu.len(), x.len(), "map must be square");
    fu.iter()
        .zip(&fd)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect()
}

/// `log |det J|` of `f` at `x`; central differences at `h` and `h / 2`
/// combined by Richardson extrapolation.
pub fn numeric_logdet(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut j = DMatrix::zeros(d, d);
    for col in 0..d {
        let coarse = central(f, x, col, JAC_STEP);
        let fine = central(f, x, col, JAC_STEP / 2.0);
        for row in 0..d {
            j[(row, col)] = (4.0 * fine[row] - coarse[row]) / 3.0;
        }
    }
    j.lu().determinant().abs().ln()
}

/// Outcome of one layer check.
#[derive(Debug)]
pub struct LayerCheck {
    pub name: String,
    /// Max elementwise `|inverse(forward(x)) - x|`.
    pub roundtrip: f64,
    /// `|analytic - numeric|` log-determinant.
    pub logdet_gap: f64,
    /// `|forward logdet + inverse logdet|`.
    pub antisymmetry: f64,
}

impl LayerCheck {
    pub fn ok(&self, tol: f64) -> bool {
        self.roundtrip < tol && self.logdet_gap < tol && self.antisymmetry < tol
    }
}

type Fwd<'a> = dyn for<'t> Fn(&'t Tape, &Var<'t>) -> itae::Result<(Var<'t>, f64)> + 'a;

fn check_bijection(
    name: &str,
    shape: Shape5,
    x: &Tensor5,
    fwd: &Fwd<'_>,
    inv: &Fwd<'_>,
) -> LayerCheck {
    let tape = Tape::no_grad();
    let (y, ld) = fwd(&tape, &tape.constant(x.clone())).unwrap();
    let (back, ld_inv) = inv(&tape, &y).unwrap();
    let roundtrip = back.value().max_abs_diff(x).unwrap();
    let map = |v: &[f64]| {
        let t = Tape::no_grad();
        let (y, _) = fwd(
            &t,
            &t.constant(Tensor5::from_vec(shape, v.to_vec()).unwrap()),
        )
        .unwrap();
        y.value().data().to_vec()
    };
    let numeric = numeric_logdet(&map, x.data());
    LayerCheck {
        name: name.into(),
        roundtrip,
        logdet_gap: (numeric - ld).abs(),
        antisymmetry: (ld + ld_inv).abs(),
    }
}

fn jitter(t: &mut Tensor5, std: f64, seed: u64) {
    t.add_assign(&Tensor5::randn(t.shape(), std, &mut rng(seed)))
        .unwrap();
}

/// Every layer type with random parameters on an 8-dim input
/// `(1, 4, 1, 1, 2)`, plus squeeze on `(1, 2, 1, 2, 2)`.
pub fn layer_checks(seed: u64) -> Vec<LayerCheck> {
    let shape = Shape5::new(1, 4, 1, 1, 2);
    let x = Tensor5::randn(shape, 1.0, &mut rng(seed));
    let mut out = Vec::new();

    let mut an = ActNorm::new("an", 4);
    jitter(&mut an.logs.value, 0.5, seed + 1);
    jitter(&mut an.bias.value, 0.5, seed + 2);
    out.push(check_bijection(
        "actnorm",
        shape,
        &x,
        &|t, v| {
            let (y, ld) = an.forward(t, v)?;
            Ok((y, ld.item()))
        },
        &|t, v| {
            let (y, ld) = an.inverse(t, v)?;
            Ok((y, ld.item()))
        },
    ));

    let mut inv = InvConv1x1::new("inv", 4, &mut rng(seed + 3));
    jitter(&mut inv.lower.value, 0.3, seed + 4);
    jitter(&mut inv.upper.value, 0.3, seed + 5);
    jitter(&mut inv.log_s.value, 0.3, seed + 6);
    out.push(check_bijection(
        "invconv1x1",
        shape,
        &x,
        &|t, v| {
            let (y, ld) = inv.forward(t, v)?;
            Ok((y, ld.item()))
        },
        &|t, v| {
            let (y, ld) = inv.inverse(t, v)?;
            Ok((y, ld.item()))
        },
    ));

    let mut cp = AffineCoupling::new("cp", 4, 8, &mut rng(seed + 7));
    for (k, p) in cp.params_mut().into_iter().enumerate() {
        jitter(&mut p.value, 0.3, seed + 8 + k as u64);
    }
    out.push(check_bijection(
        "affine coupling",
        shape,
        &x,
        &|t, v| {
            let (y, ld) = cp.forward(t, v)?;
            Ok((y, ld.sum().item()))
        },
        &|t, v| {
            let (y, ld) = cp.inverse(t, v)?;
            Ok((y, ld.sum().item()))
        },
    ));

    let mut step = FlowStep::new("step", 4, 8, &mut rng(seed + 20));
    for (k, p) in step.params_mut().into_iter().enumerate() {
        jitter(&mut p.value, 0.2, seed + 21 + k as u64);
    }
    out.push(check_bijection(
        "flow step",
        shape,
        &x,
        &|t, v| {
            let (y, lds) = step.forward(t, v)?;
            Ok((y, lds.iter().map(|l| l.sum().item()).sum()))
        },
        &|t, v| {
            let (y, ld) = step.inverse(t, v)?;
            Ok((y, ld.sum().item()))
        },
    ));

    let sq_shape = Shape5::new(1, 2, 1, 2, 2);
    let xs = Tensor5::randn(sq_shape, 1.0, &mut rng(seed + 40));
    out.push(check_bijection(
        "squeeze2x2",
        sq_shape,
        &xs,
        &|_, v| Ok((v.squeeze2x2()?, 0.0)),
        &|_, v| Ok((v.unsqueeze2x2()?, 0.0)),
    ));
    out
}

/// A trained-looking stack: data init on random input, then random
/// parameter offsets.
pub fn random_stack(cfg: FlowConfig, input: Shape5, seed: u64) -> FlowStack {
    let mut stack = FlowStack::new(cfg).unwrap();
    let batch = Tensor5::randn(input.with(0, 16), 1.0, &mut rng(seed + 1));
    stack.data_init(&batch).unwrap();
    for (k, p) in stack.params_mut().into_iter().enumerate() {
        jitter(&mut p.value, 0.05, seed + 100 + k as u64);
    }
    stack
}

/// Round trip, logdet against the numeric Jacobian of the whole stack
/// (latent parts concatenated), and forward/inverse antisymmetry.
pub fn stack_check(name: &str, stack: &FlowStack, shape: Shape5, seed: u64) -> LayerCheck {
    let x = Tensor5::randn(shape, 1.0, &mut rng(seed + 7));
    let r = stack.forward_nll(&x).unwrap();
    let (back, inv_ld) = stack.inverse(&r.z).unwrap();
    let map = |v: &[f64]| {
        let r = stack
            .forward_nll(&Tensor5::from_vec(shape, v.to_vec()).unwrap())
            .unwrap();
        r.z.iter()
            .flat_map(|z| z.data().to_vec())
            .collect::<Vec<_>>()
    };
    let numeric = numeric_logdet(&map, x.data());
    LayerCheck {
        name: name.into(),
        roundtrip: back.max_abs_diff(&x).unwrap(),
        logdet_gap: (numeric - r.logdet[0]).abs(),
        antisymmetry: (r.logdet[0] + inv_ld[0]).abs(),
    }
}

/// The composed `K = 4, L = 2` stack on `(1, 8, 1, 1, 1)` (squeeze off so it
/// fits 8 dims) and a squeezed one-level stack on `(1, 2, 1, 2, 2)`.
pub fn composed_checks(seed: u64) -> Vec<LayerCheck> {
    let mut a = FlowConfig::new(8, 4, 2);
    a.squeeze = false;
    a.hidden = 8;
    a.seed = seed;
    let sa = Shape5::new(1, 8, 1, 1, 1);
    let mut b = FlowConfig::new(2, 4, 1);
    b.hidden = 8;
    b.seed = seed + 1;
    let sb = Shape5::new(1, 2, 1, 2, 2);
    vec![
        stack_check("stack K=4 L=2", &random_stack(a, sa, seed), sa, seed),
        stack_check(
            "squeezed stack K=4 L=1",
            &random_stack(b, sb, seed + 1),
            sb,
            seed + 1,
        ),
    ]
}
