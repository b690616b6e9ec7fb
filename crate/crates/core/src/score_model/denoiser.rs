//! Compact conditional encoder-decoder that predicts the diffusion noise.
//!
//! Input channels are `[x̃(t), μ]`. Each encoder level applies two 3×3
//! convolutions with SiLU, the first one shifted per channel by a learned
//! projection of the sinusoidal step embedding, then average-pools by 2. A
//! bottleneck convolution (also time-conditioned) is followed by decoder
//! levels that upsample, concatenate the matching encoder skip and convolve.
//! A final zero-initialized convolution produces one channel.
//!
//! With the default [`Head::Residual`] the first input channel is replaced
//! by the linear estimate `u = c_t·(x̃ − μ)` of `x₀ − μ`, with
//! `c_t = e^{−θ̄_t}·s² / (e^{−2θ̄_t}·s² + v_t)` for a prior deviation
//! variance `s²` of [`RESIDUAL_PRIOR_VAR`], and the output channel is read
//! as the clean deviation `d ≈ x₀ − μ`, converted to noise through
//! `ε̃ = (x̃ − μ − e^{−θ̄_t}·d) / √v_t`. A fresh model therefore returns `μ`
//! unchanged. [`Head::Noise`] feeds `x̃` and reads the channel as `ε̃`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::time_embedding;
use super::layers::{
    add_assign, add_channel_bias, avg_pool2, avg_pool2_backward, channel_sums, concat, silu, silu_backward, split,
    upsample2, upsample2_backward, Conv, Linear, Tensor,
};
use super::ScoreModel;
use crate::error::{Error, Result};
use crate::sde::NoiseSchedule;

pub(crate) const IN_CHANNELS: usize = 2;

pub const RESIDUAL_PRIOR_VAR: f64 = 0.0625;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserArch {
    /// Channel width per resolution level; the level count is the depth.
    pub widths: Vec<usize>,
    pub temb_dim: usize,
    pub head: Head,
}

/// How the output channel is turned into a noise estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Noise,
    #[default]
    Residual,
}

impl Head {
    pub(crate) fn code(self) -> u32 {
        match self {
            Head::Noise => 0,
            Head::Residual => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Head::Noise),
            1 => Some(Head::Residual),
            _ => None,
        }
    }
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            widths: vec![16, 32],
            temb_dim: 16,
            head: Head::Residual,
        }
    }
}

impl DenoiserArch {
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("denoiser widths must be nonempty and positive"));
        }
        if self.temb_dim == 0 || !self.temb_dim.is_multiple_of(2) {
            return Err(Error::invalid("time embedding dimension must be even and positive"));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLevel {
    conv_a: Conv,
    proj: Linear,
    conv_b: Conv,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoder: Vec<EncoderLevel>,
    mid_proj: Linear,
    mid_conv: Conv,
    /// Indexed by level, applied from the deepest level up.
    decoder: Vec<Conv>,
    out: Conv,
    total: usize,
}

impl Layout {
    fn new(arch: &DenoiserArch) -> Self {
        let mut offset = 0;
        let mut conv = |in_c, out_c| {
            let c = Conv { in_c, out_c, offset };
            offset += c.len();
            c
        };
        let d = arch.depth();
        let mut encoder = Vec::with_capacity(d);
        let mut linears = Vec::new();
        for l in 0..d {
            let in_c = if l == 0 { IN_CHANNELS } else { arch.widths[l - 1] };
            let conv_a = conv(in_c, arch.widths[l]);
            let conv_b = conv(arch.widths[l], arch.widths[l]);
            encoder.push((conv_a, conv_b));
        }
        let deepest = arch.widths[d - 1];
        let mid_conv = conv(deepest, deepest);
        let mut decoder = vec![Conv { in_c: 0, out_c: 0, offset: 0 }; d];
        for l in (0..d).rev() {
            let up_c = if l == d - 1 { deepest } else { arch.widths[l + 1] };
            decoder[l] = conv(up_c + arch.widths[l], arch.widths[l]);
        }
        let out = conv(arch.widths[0], 1);
        for l in 0..=d {
            let width = if l < d { arch.widths[l] } else { deepest };
            let lin = Linear {
                in_dim: arch.temb_dim,
                out_dim: width,
                offset,
            };
            offset += lin.len();
            linears.push(lin);
        }
        let mid_proj = linears.pop().unwrap();
        let encoder = encoder
            .into_iter()
            .zip(linears)
            .map(|((conv_a, conv_b), proj)| EncoderLevel { conv_a, proj, conv_b })
            .collect();
        Self {
            encoder,
            mid_proj,
            mid_conv,
            decoder,
            out,
            total: offset,
        }
    }
}

/// Intermediate activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    param_count: usize,
    dims: (usize, usize),
    emb: Vec<f64>,
    encoder: Vec<EncoderTape>,
    mid_in: Tensor,
    mid_pre: Tensor,
    /// In processing order: deepest level first.
    decoder: Vec<(Tensor, Tensor)>,
    last: Tensor,
    /// `dε̃/d(raw output)`.
    out_scale: f64,
}

#[derive(Debug, Clone)]
struct EncoderTape {
    input: Tensor,
    a_pre: Tensor,
    a: Tensor,
    b_pre: Tensor,
}

/// Per-step coefficients of the residual head.
#[derive(Debug, Clone, Copy, PartialEq)]
struct StepCoeffs {
    decay: f64,
    inv_sd: f64,
    gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadCoeffs {
    steps: Vec<StepCoeffs>,
}

/// Trainable noise predictor with a flat `f64` parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    arch: DenoiserArch,
    layout: Layout,
    params: Vec<f64>,
    coeffs: Option<HeadCoeffs>,
}

impl DenoiserModel {
    /// Uniform `±√(1/fan_in)` initialization with a zeroed output layer.
    pub fn new(arch: DenoiserArch, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |params: &mut [f64], range: std::ops::Range<usize>, fan_in: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..=bound);
            }
        };
        let layout = model.layout.clone();
        let convs = layout
            .encoder
            .iter()
            .flat_map(|e| [e.conv_a, e.conv_b])
            .chain([layout.mid_conv])
            .chain(layout.decoder.iter().rev().copied());
        for c in convs {
            fill(&mut model.params, c.offset..c.offset + c.len(), c.fan_in());
        }
        for lin in layout.encoder.iter().map(|e| e.proj).chain([layout.mid_proj]) {
            fill(&mut model.params, lin.offset..lin.offset + lin.len(), lin.in_dim);
        }
        Ok(model)
    }

    pub fn zeros(arch: DenoiserArch) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let params = vec![0.0; layout.total];
        Ok(Self {
            arch,
            layout,
            params,
            coeffs: None,
        })
    }

    /// Attaches the schedule the residual head converts with. A no-op for
    /// [`Head::Noise`].
    pub fn bind_schedule(&mut self, sched: &NoiseSchedule) {
        if self.arch.head == Head::Residual {
            let steps = (0..=sched.steps())
                .map(|t| {
                    let (v, decay) = (sched.variance(t), sched.decay(t));
                    StepCoeffs {
                        decay,
                        inv_sd: if v > 0.0 { 1.0 / v.sqrt() } else { f64::INFINITY },
                        gain: decay * RESIDUAL_PRIOR_VAR / (decay * decay * RESIDUAL_PRIOR_VAR + v),
                    }
                })
                .collect();
            self.coeffs = Some(HeadCoeffs { steps });
        }
    }

    pub fn with_schedule(mut self, sched: &NoiseSchedule) -> Self {
        self.bind_schedule(sched);
        self
    }

    /// Whether [`predict`](ScoreModel::predict) can run.
    pub fn is_ready(&self) -> bool {
        self.arch.head == Head::Noise || self.coeffs.is_some()
    }

    fn head_coeffs(&self, t: usize) -> Result<Option<StepCoeffs>> {
        if self.arch.head == Head::Noise {
            return Ok(None);
        }
        let coeffs = self
            .coeffs
            .as_ref()
            .ok_or_else(|| Error::invalid("residual head needs a bound noise schedule"))?;
        match coeffs.steps.get(t) {
            Some(c) if c.inv_sd.is_infinite() => Err(Error::DegenerateVariance(0.0)),
            Some(&c) => Ok(Some(c)),
            None => Err(Error::invalid(format!("step {t} outside the bound schedule"))),
        }
    }

    pub fn from_params(arch: DenoiserArch, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        if params.len() != model.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "architecture needs {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x_t: &Array2<f64>, mu: &Array2<f64>) -> Result<()> {
        if x_t.dim() != mu.dim() {
            return Err(Error::ShapeMismatch {
                expected: x_t.dim(),
                actual: mu.dim(),
            });
        }
        let (h, w) = x_t.dim();
        let m = self.arch.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::invalid(format!("input {h}×{w} is not a nonzero multiple of {m}")));
        }
        Ok(())
    }

    /// Forward pass that also records the activations needed by
    /// [`backward`](Self::backward).
    pub fn forward(&self, x_t: &Array2<f64>, mu: &Array2<f64>, t: usize) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x_t, mu)?;
        let head = self.head_coeffs(t)?;
        let (h, w) = x_t.dim();
        let p = &self.params;
        let lay = &self.layout;
        let emb = time_embedding(t, self.arch.temb_dim);

        let mut data = Vec::with_capacity(2 * h * w);
        match head {
            Some(c) => data.extend(x_t.iter().zip(mu).map(|(x, m)| c.gain * (x - m))),
            None => data.extend(x_t.iter()),
        }
        data.extend(mu.iter());
        let mut cur = Tensor { c: IN_CHANNELS, h, w, data };

        let mut enc_tape = Vec::with_capacity(lay.encoder.len());
        let mut skips = Vec::with_capacity(lay.encoder.len());
        for level in &lay.encoder {
            let mut a_pre = level.conv_a.forward(p, &cur);
            add_channel_bias(&mut a_pre, &level.proj.forward(p, &emb));
            let a = silu(&a_pre);
            let b_pre = level.conv_b.forward(p, &a);
            let skip = silu(&b_pre);
            let pooled = avg_pool2(&skip);
            enc_tape.push(EncoderTape {
                input: cur,
                a_pre,
                a,
                b_pre,
            });
            skips.push(skip);
            cur = pooled;
        }

        let mut mid_pre = lay.mid_conv.forward(p, &cur);
        add_channel_bias(&mut mid_pre, &lay.mid_proj.forward(p, &emb));
        let mid_in = cur;
        cur = silu(&mid_pre);

        let mut dec_tape = Vec::with_capacity(lay.decoder.len());
        for l in (0..lay.decoder.len()).rev() {
            let cat = concat(&upsample2(&cur), &skips[l]);
            let d_pre = lay.decoder[l].forward(p, &cat);
            cur = silu(&d_pre);
            dec_tape.push((cat, d_pre));
        }

        let out = lay.out.forward(p, &cur);
        let mut out = Array2::from_shape_vec((h, w), out.data).expect("output shape");
        let mut out_scale = 1.0;
        if let Some(StepCoeffs { decay, inv_sd, .. }) = head {
            out_scale = -decay * inv_sd;
            ndarray::Zip::from(&mut out)
                .and(x_t)
                .and(mu)
                .for_each(|o, &x, &m| *o = (x - m) * inv_sd + out_scale * *o);
        }
        let tape = Tape {
            param_count: p.len(),
            dims: (h, w),
            emb,
            encoder: enc_tape,
            mid_in,
            mid_pre,
            decoder: dec_tape,
            last: cur,
            out_scale,
        };
        Ok((out, tape))
    }

    /// Gradient of a scalar loss with respect to every parameter, given
    /// `upstream = dL/d(output)` for the forward pass recorded in `tape`.
    pub fn backward(&self, tape: &Tape, upstream: &Array2<f64>) -> Result<Vec<f64>> {
        if tape.param_count != self.params.len()
            || tape.encoder.len() != self.layout.encoder.len()
            || upstream.dim() != tape.dims
        {
            return Err(Error::MissingForwardContext);
        }
        let p = &self.params;
        let lay = &self.layout;
        let (h, w) = tape.dims;
        let mut grad = vec![0.0; p.len()];

        let d_out = Tensor {
            c: 1,
            h,
            w,
            data: upstream.iter().map(|u| u * tape.out_scale).collect(),
        };
        let mut d_cur = lay.out.backward(p, &tape.last, &d_out, &mut grad);

        let depth = lay.decoder.len();
        let mut d_skips: Vec<Option<Tensor>> = vec![None; depth];
        for (k, (cat, d_pre)) in tape.decoder.iter().enumerate().rev() {
            let l = depth - 1 - k;
            let d_pre_grad = silu_backward(d_pre, &d_cur);
            let d_cat = lay.decoder[l].backward(p, cat, &d_pre_grad, &mut grad);
            let up_c = cat.c - self.arch.widths[l];
            let (d_up, d_skip) = split(&d_cat, up_c);
            d_skips[l] = Some(d_skip);
            d_cur = upsample2_backward(&d_up);
        }

        let d_mid = silu_backward(&tape.mid_pre, &d_cur);
        lay.mid_proj.backward(&tape.emb, &channel_sums(&d_mid), &mut grad);
        d_cur = lay.mid_conv.backward(p, &tape.mid_in, &d_mid, &mut grad);

        for (l, level) in lay.encoder.iter().enumerate().rev() {
            let et = &tape.encoder[l];
            let mut d_skip = avg_pool2_backward(&d_cur, et.b_pre.h, et.b_pre.w);
            add_assign(&mut d_skip, d_skips[l].as_ref().expect("decoder visited every level"));
            let d_b = silu_backward(&et.b_pre, &d_skip);
            let d_a = level.conv_b.backward(p, &et.a, &d_b, &mut grad);
            let d_a_pre = silu_backward(&et.a_pre, &d_a);
            level.proj.backward(&tape.emb, &channel_sums(&d_a_pre), &mut grad);
            d_cur = level.conv_a.backward(p, &et.input, &d_a_pre, &mut grad);
        }
        Ok(grad)
    }
}

impl ScoreModel for DenoiserModel {
    fn predict(&self, x_t: &Array2<f64>, mu: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        self.forward(x_t, mu, t).map(|(out, _)| out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score_model::oracle_predict;
    use crate::sde::{standard_normal, ScheduleConfig};

    fn sched() -> NoiseSchedule {
        ScheduleConfig::default().build().unwrap()
    }

    fn noise_head() -> DenoiserArch {
        DenoiserArch {
            head: Head::Noise,
            ..Default::default()
        }
    }

    fn randomized(arch: DenoiserArch, seed: u64) -> DenoiserModel {
        let mut m = DenoiserModel::new(arch, seed).unwrap().with_schedule(&sched());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        // Give the zero-initialized output layer weights too.
        let out = m.layout.out;
        for v in &mut m.params[out.offset..out.offset + out.len()] {
            *v = rng.random_range(-0.2..0.2);
        }
        m
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let m = DenoiserModel::zeros(noise_head()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = standard_normal((8, 8), &mut rng);
        let out = m.predict(&x, &x, 3).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_model_predicts_zero_noise() {
        let m = DenoiserModel::new(noise_head(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = standard_normal((8, 8), &mut rng);
        assert!(m.predict(&x, &x, 3).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_residual_model_is_the_oracle_for_the_radar_image() {
        let s = sched();
        let m = DenoiserModel::new(DenoiserArch::default(), 3).unwrap().with_schedule(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = standard_normal((8, 8), &mut rng);
        let mu = standard_normal((8, 8), &mut rng);
        for t in [1, 40, 100] {
            let got = m.predict(&x, &mu, t).unwrap();
            let want = oracle_predict(&mu, &x, &mu, &s, t).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_head_needs_a_schedule() {
        let m = DenoiserModel::new(DenoiserArch::default(), 3).unwrap();
        assert!(!m.is_ready());
        let x = Array2::zeros((8, 8));
        assert!(m.predict(&x, &x, 1).is_err());
        let m = m.with_schedule(&sched());
        assert!(m.is_ready());
        assert!(matches!(m.predict(&x, &x, 0), Err(Error::DegenerateVariance(_))));
        assert!(m.predict(&x, &x, 101).is_err());
    }

    #[test]
    fn forward_is_pure_and_shape_preserving() {
        let m = randomized(DenoiserArch::default(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(4, 4), (8, 12), (16, 16)] {
            let x = standard_normal((h, w), &mut rng);
            let mu = standard_normal((h, w), &mut rng);
            let a = m.predict(&x, &mu, 7).unwrap();
            assert_eq!(a.dim(), (h, w));
            assert_eq!(a, m.predict(&x, &mu, 7).unwrap());
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let m = DenoiserModel::new(DenoiserArch::default(), 0).unwrap();
        let a = Array2::zeros((6, 8));
        assert!(m.predict(&a, &a, 1).is_err());
        let b = Array2::zeros((8, 8));
        let c = Array2::zeros((8, 4));
        assert!(matches!(m.predict(&b, &c, 1), Err(Error::ShapeMismatch { .. })));
        assert!(DenoiserModel::new(DenoiserArch { widths: vec![], temb_dim: 4, ..Default::default() }, 0).is_err());
        assert!(DenoiserModel::new(DenoiserArch { widths: vec![4], temb_dim: 3, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = randomized(DenoiserArch::default(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = standard_normal((8, 8), &mut rng);
        let (_, tape) = m.forward(&x, &x, 2).unwrap();
        let g = m.backward(&tape, &Array2::zeros((8, 8))).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let m = randomized(DenoiserArch { widths: vec![3, 4], temb_dim: 4, ..Default::default() }, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = standard_normal((8, 8), &mut rng);
        let mu = standard_normal((8, 8), &mut rng);
        let (_, tape) = m.forward(&x, &mu, 9).unwrap();
        let u1 = standard_normal((8, 8), &mut rng);
        let u2 = standard_normal((8, 8), &mut rng);
        let g1 = m.backward(&tape, &u1).unwrap();
        let g2 = m.backward(&tape, &u2).unwrap();
        let g12 = m.backward(&tape, &(&u1 + &u2)).unwrap();
        for ((a, b), c) in g1.iter().zip(&g2).zip(&g12) {
            assert!((a + b - c).abs() <= 1e-10 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let small = randomized(DenoiserArch { widths: vec![2], temb_dim: 2, ..Default::default() }, 0);
        let big = randomized(DenoiserArch::default(), 0);
        let x = Array2::zeros((4, 4));
        let (_, tape) = small.forward(&x, &x, 1).unwrap();
        assert!(matches!(big.backward(&tape, &x), Err(Error::MissingForwardContext)));
        assert!(matches!(
            small.backward(&tape, &Array2::zeros((8, 8))),
            Err(Error::MissingForwardContext)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences_small_net() {
        for head in [Head::Noise, Head::Residual] {
            check_small_net_gradient(head);
        }
    }

    fn check_small_net_gradient(head: Head) {
        let arch = DenoiserArch { widths: vec![3, 4], temb_dim: 4, head };
        let m = randomized(arch, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = standard_normal((8, 8), &mut rng);
        let mu = standard_normal((8, 8), &mut rng);
        let weights = standard_normal((8, 8), &mut rng);
        let loss = |model: &DenoiserModel| -> f64 {
            let out = model.predict(&x, &mu, 5).unwrap();
            out.iter().zip(weights.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = m.forward(&x, &mu, 5).unwrap();
        let grad = m.backward(&tape, &weights).unwrap();
        let h = 1e-4;
        for i in 0..m.param_count() {
            let mut plus = m.clone();
            plus.params[i] += h;
            let mut minus = m.clone();
            minus.params[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            // The residual head adds a parameter-free term of order 10 to the
            // loss, so allow round-off at that scale.
            let tol = 1e-4 * grad[i].abs().max(fd.abs()) + 1e-9;
            assert!((grad[i] - fd).abs() < tol, "param {i}: {} vs {fd}", grad[i]);
        }
    }
}
