use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Param, Tape, Var};
use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::nn::Conv3d;
use crate::tensor::{Shape5, Tensor5};

/// Cells per channel of one sample: `T * H * W`.
fn cells(s: Shape5) -> f64 {
    (s.time() * s.height() * s.width()) as f64
}

fn scalar<'t>(tape: &'t Tape, v: f64) -> Var<'t> {
    tape.constant(Tensor5::full([1, 1, 1, 1, 1], v))
}

/// Per-channel affine map `y = (x + b) * exp(logs)`.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub logs: Param,
    pub bias: Param,
    /// Set once the data-dependent initialization has run.
    pub initialized: bool,
}

impl ActNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        ActNorm {
            logs: Param::new(
                format!("{name}.logs"),
                Tensor5::zeros([1, channels, 1, 1, 1]),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor5::zeros([1, channels, 1, 1, 1]),
            ),
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.logs.value.shape().channels()
    }

    /// Pick bias and scale so the output of `x` has zero mean and unit
    /// variance per channel.
    pub fn initialize(&mut self, x: &Tensor5) -> Result<()> {
        let s = x.shape();
        let c = self.channels();
        if s.channels() != c {
            return Err(Error::Shape {
                op: "actnorm init",
                lhs: s,
                rhs: self.logs.value.shape(),
            });
        }
        let inner = s.time() * s.height() * s.width();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (i, v) in x.data().iter().enumerate() {
            let ch = (i / inner) % c;
            sum[ch] += v;
            sq[ch] += v * v;
        }
        let count = (s.batch() * inner) as f64;
        for ch in 0..c {
            let mean = sum[ch] / count;
            let var = (sq[ch] / count - mean * mean).max(0.0);
            self.bias.value.data_mut()[ch] = -mean;
            self.logs.value.data_mut()[ch] = -(var.sqrt() + 1e-6).ln();
        }
        self.initialized = true;
        Ok(())
    }

    /// Output and the (sample-independent) log-determinant as a scalar.
    pub fn forward<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let logs = tape.param(&self.logs);
        let b = tape.param(&self.bias);
        let y = x.add_channel(&b)?.mul_channel(&logs.exp()?)?;
        let logdet = logs.sum().mul_scalar(cells(x.shape()));
        Ok((y, logdet))
    }

    pub fn inverse<'t>(&self, tape: &'t Tape, y: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let logs = tape.param(&self.logs);
        let b = tape.param(&self.bias);
        let x = y.mul_channel(&logs.neg().exp()?)?.add_channel(&b.neg())?;
        let logdet = logs.sum().mul_scalar(-cells(y.shape()));
        Ok((x, logdet))
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.logs, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.logs, &mut self.bias]
    }
}

fn matrix(t: &Tensor5, c: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(c, c, t.data())
}

fn to_tensor(m: &DMatrix<f64>, shape: impl Into<Shape5>) -> Tensor5 {
    let (r, c) = m.shape();
    let data = (0..r)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    Tensor5::from_vec(shape, data).expect("matrix shape")
}

/// Invertible channel mixing `y = W x` with `W = P L (U + diag(sign * exp(log_s)))`.
///
/// `P` and `sign` are fixed at construction; `L` is unit lower triangular and
/// `U` strictly upper triangular (entries outside the triangles are ignored).
#[derive(Clone, Debug)]
pub struct InvConv1x1 {
    pub lower: Param,
    pub upper: Param,
    pub log_s: Param,
    /// Permutation matrix, `(1, 1, 1, C, C)`.
    pub perm: Tensor5,
    /// Signs of the diagonal of `U`, `(1, C, 1, 1, 1)`.
    pub sign: Tensor5,
}

impl InvConv1x1 {
    /// LU factors of a random orthogonal matrix.
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Self {
        let c = channels;
        let g = DMatrix::<f64>::from_fn(c, c, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let lu = q.clone().lu();
        let (p, l, u) = lu.unpack();
        // p * q = l * u, so q = p^T l u
        let mut pm = DMatrix::<f64>::identity(c, c);
        p.inv_permute_rows(&mut pm);
        let mut strict_l = l;
        strict_l.fill_diagonal(0.0);
        let diag = u.diagonal();
        let mut strict_u = u.clone();
        strict_u.fill_diagonal(0.0);
        let sign = diag
            .iter()
            .map(|d| if *d < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let log_s = diag.iter().map(|d| d.abs().ln()).collect();
        InvConv1x1 {
            lower: Param::new(
                format!("{name}.lower"),
                to_tensor(&strict_l, [1, 1, 1, c, c]),
            ),
            upper: Param::new(
                format!("{name}.upper"),
                to_tensor(&strict_u, [1, 1, 1, c, c]),
            ),
            log_s: Param::new(
                format!("{name}.log_s"),
                Tensor5::from_vec([1, c, 1, 1, 1], log_s).expect("log_s"),
            ),
            perm: to_tensor(&pm, [1, 1, 1, c, c]),
            sign: Tensor5::from_vec([1, c, 1, 1, 1], sign).expect("sign"),
        }
    }

    pub fn channels(&self) -> usize {
        self.sign.numel()
    }

    fn factors(
        &self,
        lower: &Tensor5,
        upper: &Tensor5,
        log_s: &Tensor5,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let c = self.channels();
        let p = matrix(&self.perm, c);
        let mut l = matrix(lower, c).lower_triangle();
        l.fill_diagonal(1.0);
        let mut u = matrix(upper, c).upper_triangle();
        for i in 0..c {
            u[(i, i)] = self.sign.data()[i] * log_s.data()[i].exp();
        }
        (p, l, u)
    }

    /// The assembled mixing matrix.
    pub fn weight(&self) -> DMatrix<f64> {
        let (p, l, u) = self.factors(&self.lower.value, &self.upper.value, &self.log_s.value);
        p * l * u
    }

    fn check_diagonal(&self) -> Result<()> {
        match self
            .log_s
            .value
            .data()
            .iter()
            .find(|v| !v.is_finite() || v.exp() == 0.0 || v.exp().is_infinite())
        {
            Some(v) => Err(Error::Numeric(format!(
                "1x1 convolution has a singular diagonal entry (log {v})"
            ))),
            None => Ok(()),
        }
    }

    /// `W` as a `(C, C, 1, 1, 1)` convolution kernel on the tape.
    fn weight_var<'t>(&self, tape: &'t Tape) -> Var<'t> {
        let lower = tape.param(&self.lower);
        let upper = tape.param(&self.upper);
        let log_s = tape.param(&self.log_s);
        let c = self.channels();
        let (p, l, u) = self.factors(lower.value(), upper.value(), log_s.value());
        let w = to_tensor(&(&p * &l * &u), [c, c, 1, 1, 1]);
        let diag: Vec<f64> = (0..c).map(|i| u[(i, i)]).collect();
        tape.record(w, &[&lower, &upper, &log_s], move |g, needs| {
            let gw = matrix(g, c);
            // W = P L U: dL = P^T G U^T, dU = L^T P^T G
            let pg = p.transpose() * &gw;
            let dl = pg.clone() * u.transpose();
            let du = l.transpose() * &pg;
            let strict = |m: &DMatrix<f64>, keep: fn(usize, usize) -> bool| {
                let m = DMatrix::from_fn(c, c, |i, j| if keep(i, j) { m[(i, j)] } else { 0.0 });
                to_tensor(&m, [1, 1, 1, c, c])
            };
            let dls = needs[2].then(|| {
                let d = (0..c).map(|i| du[(i, i)] * diag[i]).collect();
                Tensor5::from_vec([1, c, 1, 1, 1], d).expect("log_s grad")
            });
            vec![
                needs[0].then(|| strict(&dl, |i, j| i > j)),
                needs[1].then(|| strict(&du, |i, j| i < j)),
                dls,
            ]
        })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check_diagonal()?;
        let w = self.weight_var(tape);
        let y = x.conv3d(&w, ConvSpec::unit())?;
        let logdet = tape.param(&self.log_s).sum().mul_scalar(cells(x.shape()));
        Ok((y, logdet))
    }

    pub fn inverse<'t>(&self, tape: &'t Tape, y: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check_diagonal()?;
        let c = self.channels();
        let inv = self
            .weight()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("1x1 convolution matrix is singular".into()))?;
        let w = tape.constant(to_tensor(&inv, [c, c, 1, 1, 1]));
        let x = y.conv3d(&w, ConvSpec::unit())?;
        let logdet = scalar(tape, -self.log_s.value.sum() * cells(y.shape()));
        Ok((x, logdet))
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.lower, &self.upper, &self.log_s]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.lower, &mut self.upper, &mut self.log_s]
    }
}

/// Affine coupling: the first `split` channels pass through and condition a
/// scale and shift applied to the rest.
#[derive(Clone, Debug)]
pub struct AffineCoupling {
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    /// Zero-initialized, so a fresh layer is the identity.
    pub conv3: Conv3d,
    pub split: usize,
}

impl AffineCoupling {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, hidden: usize, rng: &mut R) -> Self {
        let split = channels / 2;
        let rest = channels - split;
        let same = ConvSpec::new([1, 1, 1], [0, 1, 1]);
        AffineCoupling {
            conv1: Conv3d::new(
                &format!("{name}.conv1"),
                split,
                hidden,
                [1, 3, 3],
                same,
                rng,
            ),
            conv2: Conv3d::new(
                &format!("{name}.conv2"),
                hidden,
                hidden,
                [1, 1, 1],
                ConvSpec::unit(),
                rng,
            ),
            conv3: Conv3d::zeros(&format!("{name}.conv3"), hidden, 2 * rest, [1, 3, 3], same),
            split,
        }
    }

    pub fn channels(&self) -> usize {
        self.split + self.conv3.out_channels() / 2
    }

    /// Log-scale and shift for the transformed half.
    fn conditioner<'t>(&self, tape: &'t Tape, xa: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.conv1.forward(tape, xa)?.relu();
        let h = self.conv2.forward(tape, &h)?.relu();
        let raw = self.conv3.forward(tape, &h)?;
        let rest = self.channels() - self.split;
        let log_s = raw.narrow(1, 0, rest)?.tanh().mul_scalar(2.0);
        let shift = raw.narrow(1, rest, rest)?;
        Ok((log_s, shift))
    }

    fn halves<'t>(&self, x: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let c = x.shape().channels();
        if c != self.channels() {
            return Err(Error::InvalidShape {
                op: "coupling",
                detail: format!("expected {} channels, got {}", self.channels(), x.shape()),
            });
        }
        Ok((
            x.narrow(1, 0, self.split)?,
            x.narrow(1, self.split, c - self.split)?,
        ))
    }

    /// Output and the per-sample log-determinant, shape `(N, 1, 1, 1, 1)`.
    pub fn forward<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (xa, xb) = self.halves(x)?;
        let (log_s, shift) = self.conditioner(tape, &xa)?;
        let yb = xb.mul(&log_s.exp()?)?.add(&shift)?;
        Ok((Var::cat(&[&xa, &yb], 1)?, log_s.sum_per_sample()))
    }

    pub fn inverse<'t>(&self, tape: &'t Tape, y: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (ya, yb) = self.halves(y)?;
        let (log_s, shift) = self.conditioner(tape, &ya)?;
        let xb = yb.sub(&shift)?.mul(&log_s.neg().exp()?)?;
        Ok((Var::cat(&[&ya, &xb], 1)?, log_s.sum_per_sample().neg()))
    }

    pub fn params(&self) -> Vec<&Param> {
        [&self.conv1, &self.conv2, &self.conv3]
            .into_iter()
            .flat_map(|c| c.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.conv1.params_mut();
        out.extend(self.conv2.params_mut());
        out.extend(self.conv3.params_mut());
        out
    }
}

/// One flow step: actnorm, 1x1 convolution, affine coupling.
#[derive(Clone, Debug)]
pub struct FlowStep {
    pub actnorm: ActNorm,
    pub inv: InvConv1x1,
    pub coupling: AffineCoupling,
}

impl FlowStep {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, hidden: usize, rng: &mut R) -> Self {
        FlowStep {
            actnorm: ActNorm::new(&format!("{name}.actnorm"), channels),
            inv: InvConv1x1::new(&format!("{name}.inv"), channels, rng),
            coupling: AffineCoupling::new(&format!("{name}.coupling"), channels, hidden, rng),
        }
    }

    /// Output plus the log-determinant of each sub-layer in order.
    pub fn forward<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<(Var<'t>, [Var<'t>; 3])> {
        let (h, a) = self.actnorm.forward(tape, x)?;
        let (h, b) = self.inv.forward(tape, &h)?;
        let (h, c) = self.coupling.forward(tape, &h)?;
        Ok((h, [a, b, c]))
    }

    pub fn inverse<'t>(&self, tape: &'t Tape, y: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (h, c) = self.coupling.inverse(tape, y)?;
        let (h, b) = self.inv.inverse(tape, &h)?;
        let (x, a) = self.actnorm.inverse(tape, &h)?;
        // per-sample term first so the sum keeps the batch axis
        Ok((x, c.add(&b)?.add(&a)?))
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.actnorm.params();
        out.extend(self.inv.params());
        out.extend(self.coupling.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.actnorm.params_mut();
        out.extend(self.inv.params_mut());
        out.extend(self.coupling.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lu_init_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inv = InvConv1x1::new("inv", 6, &mut rng);
        let w = inv.weight();
        let eye = DMatrix::<f64>::identity(6, 6);
        assert!((w.transpose() * &w - eye).abs().max() < 1e-12);
        assert!(inv.log_s.value.sum().abs() < 1e-12);
    }

    #[test]
    fn fresh_coupling_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = AffineCoupling::new("c", 4, 8, &mut rng);
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor5::randn([2, 4, 1, 4, 4], 1.0, &mut rng));
        let (y, ld) = c.forward(&tape, &x).unwrap();
        assert_eq!(y.value(), x.value());
        assert!(ld.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn actnorm_init_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor5::randn([16, 3, 1, 4, 4], 3.0, &mut rng).map(|v| v + 2.0);
        let mut a = ActNorm::new("a", 3);
        a.initialize(&x).unwrap();
        let tape = Tape::no_grad();
        let (y, _) = a.forward(&tape, &tape.constant(x)).unwrap();
        let m = y.value().clone();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..16)
                .flat_map(|n| (0..16).map(move |k| (n, k)))
                .map(|(n, k)| m.get([n, ch, 0, k / 4, k % 4]))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(
                mean.abs() < 1e-3 && (var - 1.0).abs() < 1e-3,
                "{mean} {var}"
            );
        }
    }
}
