use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Param, Tape, Var};
use crate::conv::{self, ConvSpec};
use crate::error::{Error, Result};
use crate::nn::{Conv3d, ConvTranspose3d};
use crate::tensor::Shape5;

use super::VideoClip;

/// Which encoders are active. `StaticOnly` and `DynamicOnly` are the
/// one-path ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderMode {
    TwoPath,
    StaticOnly,
    DynamicOnly,
}

impl EncoderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderMode::TwoPath => "two-path",
            EncoderMode::StaticOnly => "static-only",
            EncoderMode::DynamicOnly => "dynamic-only",
        }
    }

    pub fn uses_static(self) -> bool {
        self != EncoderMode::DynamicOnly
    }

    pub fn uses_dynamic(self) -> bool {
        self != EncoderMode::StaticOnly
    }
}

impl std::str::FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-path" => Ok(EncoderMode::TwoPath),
            "static-only" => Ok(EncoderMode::StaticOnly),
            "dynamic-only" => Ok(EncoderMode::DynamicOnly),
            other => Err(Error::Config(format!("unknown encoder mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItaeConfig {
    pub in_channels: usize,
    pub tau: usize,
    pub static_channels: [usize; 4],
    pub dynamic_channels: [usize; 4],
    /// Widths of DeConv1..DeConv3; DeConv4 restores `in_channels`.
    pub decoder_channels: [usize; 3],
    pub leaky_slope: f64,
    pub mode: EncoderMode,
    /// Lateral connections after encoder stages 1-3.
    pub laterals: bool,
    pub seed: u64,
}

impl ItaeConfig {
    /// Full-width layout: static 96/128/256/256, dynamic 12/16/32/32,
    /// decoder 256/128/96.
    pub fn full(in_channels: usize) -> Self {
        ItaeConfig {
            in_channels,
            tau: 4,
            static_channels: [96, 128, 256, 256],
            dynamic_channels: [12, 16, 32, 32],
            decoder_channels: [256, 128, 96],
            leaky_slope: 0.2,
            mode: EncoderMode::TwoPath,
            laterals: true,
            seed: 0,
        }
    }

    /// Narrow layout for CPU-scale experiments; same topology and strides.
    pub fn desk(in_channels: usize) -> Self {
        ItaeConfig {
            in_channels,
            tau: 4,
            static_channels: [12, 16, 24, 24],
            dynamic_channels: [4, 6, 8, 8],
            decoder_channels: [24, 16, 8],
            leaky_slope: 0.2,
            mode: EncoderMode::TwoPath,
            laterals: true,
            seed: 0,
        }
    }

    pub fn fused_width(&self) -> usize {
        self.decoder_channels[0]
    }

    /// Temporal strides of DeConv2 and DeConv3; their product is `tau`.
    pub fn decoder_time_strides(&self) -> [usize; 2] {
        let a = if self.tau.is_multiple_of(2) { 2 } else { 1 };
        [a, self.tau / a]
    }

    fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.in_channels == 0 {
            return Err(Error::Config("tau and in_channels must be positive".into()));
        }
        let all = self
            .static_channels
            .iter()
            .chain(&self.dynamic_channels)
            .chain(&self.decoder_channels);
        if all.clone().any(|&c| c == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Stable `key=value` rendering, used for checkpoint manifests and
    /// fingerprints.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| {
            v.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("in_channels".into(), self.in_channels.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("static_channels".into(), list(&self.static_channels)),
            ("dynamic_channels".into(), list(&self.dynamic_channels)),
            ("decoder_channels".into(), list(&self.decoder_channels)),
            ("leaky_slope".into(), format!("{:?}", self.leaky_slope)),
            ("mode".into(), self.mode.as_str().into()),
            ("laterals".into(), self.laterals.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_kv(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("missing itae key {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
        }
        fn list<const N: usize>(k: &str, v: &str) -> Result<[usize; N]> {
            let items: Vec<usize> = v.split(',').map(|s| num(k, s)).collect::<Result<_>>()?;
            items
                .try_into()
                .map_err(|_| Error::Config(format!("{k} needs {N} entries")))
        }
        Ok(ItaeConfig {
            in_channels: num("in_channels", get("in_channels")?)?,
            tau: num("tau", get("tau")?)?,
            static_channels: list("static_channels", get("static_channels")?)?,
            dynamic_channels: list("dynamic_channels", get("dynamic_channels")?)?,
            decoder_channels: list("decoder_channels", get("decoder_channels")?)?,
            leaky_slope: num("leaky_slope", get("leaky_slope")?)?,
            mode: get("mode")?.parse()?,
            laterals: num("laterals", get("laterals")?)?,
            seed: num("seed", get("seed")?)?,
        })
    }
}

/// Output shape of one named layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: String,
    pub shape: Shape5,
}

/// Result of one forward pass.
pub struct ItaeForward<'t> {
    pub x_static: Option<Var<'t>>,
    pub x_dynamic: Option<Var<'t>>,
    pub output: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct ItaeModel {
    pub config: ItaeConfig,
    static_convs: Vec<Conv3d>,
    dynamic_convs: Vec<Conv3d>,
    /// Laterals after stages 1-3, then the one feeding the decoder.
    laterals: Vec<Conv3d>,
    fuse: Conv3d,
    deconvs: Vec<ConvTranspose3d>,
}

const K3: [usize; 3] = [3, 3, 3];

impl ItaeModel {
    pub fn new(config: ItaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let (sc, dc) = (c.static_channels, c.dynamic_channels);
        let spatial2 = |kt: usize| ConvSpec::new([1, 2, 2], [kt / 2, 1, 1]);
        let same = ConvSpec::new([1, 1, 1], [1, 1, 1]);
        let lateral_spec = ConvSpec::new([c.tau, 1, 1], [2, 0, 0]);
        let use_lat = c.mode == EncoderMode::TwoPath && c.laterals;

        let mut static_convs = Vec::new();
        let mut dynamic_convs = Vec::new();
        let mut laterals = Vec::new();
        if c.mode.uses_dynamic() {
            let kernels = [[5, 3, 3], K3, K3, K3];
            let specs = [spatial2(5), spatial2(3), same, same];
            let mut inc = c.in_channels;
            for i in 0..4 {
                let name = format!("dynamic.conv{}", i + 1);
                dynamic_convs.push(Conv3d::new(
                    &name, inc, dc[i], kernels[i], specs[i], &mut rng,
                ));
                inc = dc[i];
            }
            let stages: &[usize] = if use_lat { &[0, 1, 2, 3] } else { &[3] };
            for &i in stages {
                let name = if i == 3 {
                    "lateral.fuse".to_string()
                } else {
                    format!("lateral{}", i + 1)
                };
                laterals.push(Conv3d::new(
                    &name,
                    dc[i],
                    dc[i],
                    [5, 1, 1],
                    lateral_spec,
                    &mut rng,
                ));
            }
        }
        if c.mode.uses_static() {
            let kernels = [[1, 3, 3], [1, 3, 3], K3, K3];
            let specs = [spatial2(1), spatial2(1), same, same];
            let mut inc = c.in_channels;
            for i in 0..4 {
                let name = format!("static.conv{}", i + 1);
                static_convs.push(Conv3d::new(
                    &name, inc, sc[i], kernels[i], specs[i], &mut rng,
                ));
                inc = sc[i] + if use_lat && i < 3 { dc[i] } else { 0 };
            }
        }
        let fuse_in = match c.mode {
            EncoderMode::TwoPath => sc[3] + dc[3],
            EncoderMode::StaticOnly => sc[3],
            EncoderMode::DynamicOnly => dc[3],
        };
        let fuse = Conv3d::new(
            "fuse",
            fuse_in,
            c.fused_width(),
            [1, 1, 1],
            ConvSpec::unit(),
            &mut rng,
        );

        let [ta, tb] = c.decoder_time_strides();
        let dec = c.decoder_channels;
        let deconvs = vec![
            ConvTranspose3d::new(
                "decoder.deconv1",
                dec[0],
                dec[0],
                K3,
                same,
                [0, 0, 0],
                &mut rng,
            ),
            ConvTranspose3d::new(
                "decoder.deconv2",
                dec[0],
                dec[1],
                K3,
                ConvSpec::new([ta, 2, 2], [1, 1, 1]),
                [ta - 1, 1, 1],
                &mut rng,
            ),
            ConvTranspose3d::new(
                "decoder.deconv3",
                dec[1],
                dec[2],
                K3,
                ConvSpec::new([tb, 2, 2], [1, 1, 1]),
                [tb - 1, 1, 1],
                &mut rng,
            ),
            ConvTranspose3d::new(
                "decoder.deconv4",
                dec[2],
                c.in_channels,
                K3,
                same,
                [0, 0, 0],
                &mut rng,
            ),
        ];
        Ok(ItaeModel {
            config,
            static_convs,
            dynamic_convs,
            laterals,
            fuse,
            deconvs,
        })
    }

    fn lateral_after(&self, stage: usize) -> Option<&Conv3d> {
        if self.config.mode != EncoderMode::TwoPath || !self.config.laterals {
            return None;
        }
        (stage < 3).then(|| &self.laterals[stage])
    }

    fn fusion_lateral(&self) -> Option<&Conv3d> {
        self.laterals
            .last()
            .filter(|_| self.config.mode.uses_dynamic())
    }

    pub fn check_input(&self, shape: Shape5) -> Result<()> {
        let [_, c, t, h, w] = shape.0;
        let tau = self.config.tau;
        if c != self.config.in_channels {
            return Err(Error::Config(format!(
                "model expects {} channels, clip has {c}",
                self.config.in_channels
            )));
        }
        if t % tau != 0 {
            return Err(Error::Config(format!(
                "clip length {t} is not divisible by tau {tau}"
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "frame size {h}x{w} must be a positive multiple of 4"
            )));
        }
        Ok(())
    }

    /// Frames `0, tau, 2 tau, ...` of a `(N, C, T, H, W)` batch.
    fn static_frames<'t>(&self, x: &Var<'t>) -> Result<Var<'t>> {
        let tau = self.config.tau;
        if tau == 1 {
            return Ok(x.clone());
        }
        let slices = (0..x.shape().time())
            .step_by(tau)
            .map(|t| x.narrow(2, t, 1))
            .collect::<Result<Vec<_>>>()?;
        Var::cat(&slices.iter().collect::<Vec<_>>(), 2)
    }

    /// Encoder features for a batch of clips `(N, C, T, H, W)`.
    pub fn encode_batch<'t>(
        &self,
        tape: &'t Tape,
        x: &Var<'t>,
    ) -> Result<(Option<Var<'t>>, Option<Var<'t>>)> {
        self.check_input(x.shape())?;
        let slope = self.config.leaky_slope;
        let mut dynamic = Vec::new();
        if self.config.mode.uses_dynamic() {
            let mut h = x.clone();
            for conv in &self.dynamic_convs {
                h = conv.forward(tape, &h)?.leaky_relu(slope);
                dynamic.push(h.clone());
            }
        }
        let x_static = if self.config.mode.uses_static() {
            let mut h = self.static_frames(x)?;
            for (i, conv) in self.static_convs.iter().enumerate() {
                h = conv.forward(tape, &h)?.leaky_relu(slope);
                if let Some(lat) = self.lateral_after(i) {
                    let side = lat.forward(tape, &dynamic[i])?.leaky_relu(slope);
                    if side.shape().time() != h.shape().time() {
                        return Err(Error::Contract(format!(
                            "lateral {} maps to {} time steps, static path has {}",
                            i + 1,
                            side.shape().time(),
                            h.shape().time()
                        )));
                    }
                    h = Var::cat(&[&h, &side], 1)?;
                }
            }
            Some(h)
        } else {
            None
        };
        Ok((x_static, dynamic.pop()))
    }

    /// Decoder over the encoder features.
    pub fn decode_batch<'t>(
        &self,
        tape: &'t Tape,
        x_static: Option<&Var<'t>>,
        x_dynamic: Option<&Var<'t>>,
    ) -> Result<Var<'t>> {
        let slope = self.config.leaky_slope;
        let mut parts = Vec::new();
        if let Some(s) = x_static {
            parts.push(s.clone());
        }
        if let (Some(d), Some(lat)) = (x_dynamic, self.fusion_lateral()) {
            let aligned = lat.forward(tape, d)?.leaky_relu(slope);
            if let Some(s) = x_static {
                if aligned.shape().time() != s.shape().time() {
                    return Err(Error::Contract(format!(
                        "fusion lateral maps to {} time steps, static latent has {}",
                        aligned.shape().time(),
                        s.shape().time()
                    )));
                }
            }
            parts.push(aligned);
        }
        if parts.is_empty() {
            return Err(Error::Contract("decoder needs at least one latent".into()));
        }
        let fused = Var::cat(&parts.iter().collect::<Vec<_>>(), 1)?;
        let mut h = self.fuse.forward(tape, &fused)?.leaky_relu(slope);
        let last = self.deconvs.len() - 1;
        for (i, deconv) in self.deconvs.iter().enumerate() {
            h = deconv.forward(tape, &h)?;
            h = if i == last {
                h.sigmoid()
            } else {
                h.leaky_relu(slope)
            };
        }
        Ok(h)
    }

    pub fn forward_batch<'t>(&self, tape: &'t Tape, x: &Var<'t>) -> Result<ItaeForward<'t>> {
        let (s, d) = self.encode_batch(tape, x)?;
        let output = self.decode_batch(tape, s.as_ref(), d.as_ref())?;
        if output.shape() != x.shape() {
            return Err(Error::Contract(format!(
                "reconstruction shape {} differs from input {}",
                output.shape(),
                x.shape()
            )));
        }
        Ok(ItaeForward {
            x_static: s,
            x_dynamic: d,
            output,
        })
    }

    /// Encoder features of one clip.
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        clip: &VideoClip,
    ) -> Result<(Option<Var<'t>>, Option<Var<'t>>)> {
        self.check_clip(clip)?;
        self.encode_batch(tape, &tape.constant(clip.frames.clone()))
    }

    pub fn forward<'t>(&self, tape: &'t Tape, clip: &VideoClip) -> Result<ItaeForward<'t>> {
        self.check_clip(clip)?;
        self.forward_batch(tape, &tape.constant(clip.frames.clone()))
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        if clip.tau != self.config.tau {
            return Err(Error::Config(format!(
                "clip sampled with tau {} but model uses {}",
                clip.tau, self.config.tau
            )));
        }
        Ok(())
    }

    /// Per-layer output shapes for an input shape, from the convolution
    /// arithmetic alone (nothing is evaluated).
    pub fn trace_shapes(&self, input: Shape5) -> Result<Vec<LayerShape>> {
        self.check_input(input)?;
        let mut out = Vec::new();
        let mut push = |layer: &str, shape: Shape5| {
            out.push(LayerShape {
                layer: layer.to_string(),
                shape,
            })
        };
        let conv_shape =
            |x: Shape5, c: &Conv3d| conv::conv3d_out_shape(x, c.weight.value.shape(), c.spec);
        let mut dynamic = Vec::new();
        let mut h = input;
        for (i, c) in self.dynamic_convs.iter().enumerate() {
            h = conv_shape(h, c)?;
            push(&format!("dynamic.conv{}", i + 1), h);
            dynamic.push(h);
        }
        let mut s_shape = None;
        if self.config.mode.uses_static() {
            let mut h = input.with(2, input.time().div_ceil(self.config.tau));
            for (i, c) in self.static_convs.iter().enumerate() {
                h = conv_shape(h, c)?;
                push(&format!("static.conv{}", i + 1), h);
                if let Some(lat) = self.lateral_after(i) {
                    let side = conv_shape(dynamic[i], lat)?;
                    push(&format!("lateral{}", i + 1), side);
                    h = h.with(1, h.channels() + side.channels());
                }
            }
            s_shape = Some(h);
        }
        let mut fused = s_shape;
        if let (Some(&d), Some(lat)) = (dynamic.last(), self.fusion_lateral()) {
            let side = conv_shape(d, lat)?;
            push("lateral.fuse", side);
            fused = Some(match fused {
                Some(s) => s.with(1, s.channels() + side.channels()),
                None => side,
            });
        }
        let fused = fused.ok_or_else(|| Error::Contract("no latent".into()))?;
        push("fuse.concat", fused);
        let mut h = conv_shape(fused, &self.fuse)?;
        push("fuse", h);
        for (i, d) in self.deconvs.iter().enumerate() {
            h = conv::conv_transpose3d_out_shape(
                h,
                d.weight.value.shape(),
                d.spec,
                d.output_padding,
            )?;
            push(&format!("decoder.deconv{}", i + 1), h);
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for c in self
            .static_convs
            .iter()
            .chain(&self.dynamic_convs)
            .chain(&self.laterals)
        {
            v.extend(c.params());
        }
        v.extend(self.fuse.params());
        for d in &self.deconvs {
            v.extend(d.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for c in self
            .static_convs
            .iter_mut()
            .chain(self.dynamic_convs.iter_mut())
            .chain(self.laterals.iter_mut())
        {
            v.extend(c.params_mut());
        }
        v.extend(self.fuse.params_mut());
        for d in &mut self.deconvs {
            v.extend(d.params_mut());
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}
