//! The range-conditional convolutional encoder-decoder.
//!
//! The encoder is a stack of `conv -> batchnorm -> leaky ReLU -> 2x2 max pool`
//! stages followed by a dense map to the latent vector. The decoder mirrors it:
//! a dense map back to the coarsest feature grid, then
//! `upsample -> transposed conv -> batchnorm -> leaky ReLU` stages, and a final
//! one-channel convolution. Inputs are replicate-padded to a multiple of
//! `2^stages` and outputs cropped back.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::TLField;
use crate::error::{Error, Result};
use crate::scenario::{denormalize, MaskGrid, NormStats};
use crate::tensor::*;
use crate::tlf::{Container, Record, RecordKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Unpadded (n_range, n_depth) of the input mask.
    pub input_shape: [usize; 2],
    /// Output channels of each encoder stage; the decoder runs them backwards.
    pub encoder_channels: Vec<usize>,
    pub latent_dim: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_shape: [176, 256],
            encoder_channels: vec![16, 32, 64, 128],
            latent_dim: 128,
            kernel: 3,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Padded spatial dims must be divisible by this.
    pub fn pad_multiple(&self) -> usize {
        1 << self.stages()
    }

    pub fn padded_shape(&self) -> [usize; 2] {
        let m = self.pad_multiple();
        self.input_shape.map(|n| n.div_ceil(m) * m)
    }

    /// Spatial dims after the last pooling stage.
    pub fn latent_grid(&self) -> [usize; 2] {
        let m = self.pad_multiple();
        self.padded_shape().map(|n| n / m)
    }

    fn bottleneck_len(&self) -> usize {
        let [h, w] = self.latent_grid();
        self.encoder_channels[self.stages() - 1] * h * w
    }

    /// Output channels of each decoder stage.
    fn decoder_channels(&self) -> Vec<usize> {
        let c = &self.encoder_channels;
        (0..c.len()).map(|i| if i + 1 < c.len() { c[c.len() - 2 - i] } else { c[0] }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return bad(format!("encoder channels must be non-empty and positive, got {:?}", self.encoder_channels));
        }
        if self.stages() > 8 {
            return bad(format!("at most 8 stages are supported, got {}", self.stages()));
        }
        if self.latent_dim == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("latent_dim must be positive and kernel odd, got {} and {}", self.latent_dim, self.kernel));
        }
        let m = self.pad_multiple();
        if self.input_shape.iter().any(|&n| n < m) {
            return bad(format!("input {:?} is too small for {} halvings (min dim {m})", self.input_shape, self.stages()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) || !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("leaky slope, batchnorm momentum or eps out of range".into());
        }
        Ok(())
    }

    fn bn(&self) -> BnConfig {
        BnConfig {
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        }
    }
}

/// Convolution (or transposed convolution) followed by batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running: BnRunning<T>,
}

impl<T: Scalar> ConvBlock<T> {
    fn params(&self) -> [&Param<T>; 4] {
        [&self.weight, &self.bias, &self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        [&mut self.weight, &mut self.bias, &mut self.gamma, &mut self.beta]
    }
}

fn vector<T: Scalar>(name: String, v: Vec<T>) -> Param<T> {
    let n = v.len();
    Param::new(name, Tensor4 { shape: [1, n, 1, 1], data: v })
}

fn uniform<T: Scalar>(name: String, shape: [usize; 4], fan_in: usize, rng: &mut ChaCha8Rng) -> Param<T> {
    let a = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of_f64(rng.random_range(-a..a))).collect();
    Param::new(name, Tensor4 { shape, data })
}

fn block<T: Scalar>(name: &str, w_shape: [usize; 4], fan_in: usize, out: usize, rng: &mut ChaCha8Rng) -> ConvBlock<T> {
    let weight = uniform(format!("{name}.weight"), w_shape, fan_in, rng);
    let bias = uniform(format!("{name}.bias"), [1, out, 1, 1], fan_in, rng);
    ConvBlock {
        weight,
        bias,
        gamma: vector(format!("{name}.gamma"), vec![T::one(); out]),
        beta: vector(format!("{name}.beta"), vec![T::zero(); out]),
        running: BnRunning::new(out),
    }
}

struct EncCache<T> {
    input: Tensor4<T>,
    bn: BnCache<T>,
    pre_act: Tensor4<T>,
    pool_shape: [usize; 4],
    argmax: Vec<u32>,
}

struct DecCache<T> {
    input: Tensor4<T>,
    bn: BnCache<T>,
    pre_act: Tensor4<T>,
}

/// Intermediate activations of the encoder, kept for the backward pass.
pub struct EncodeTrace<T> {
    stages: Vec<EncCache<T>>,
    pooled: Tensor4<T>,
}

pub struct DecodeTrace<T> {
    latent: Tensor4<T>,
    stages: Vec<DecCache<T>>,
    head_input: Tensor4<T>,
    padded_shape: [usize; 4],
}

pub struct Trace<T> {
    pub encode: EncodeTrace<T>,
    pub decode: DecodeTrace<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcCan<T> {
    pub config: ModelConfig,
    pub encoder: Vec<ConvBlock<T>>,
    pub enc_dense_w: Param<T>,
    pub enc_dense_b: Param<T>,
    pub dec_dense_w: Param<T>,
    pub dec_dense_b: Param<T>,
    pub decoder: Vec<ConvBlock<T>>,
    pub head_w: Param<T>,
    pub head_b: Param<T>,
}

impl<T: Scalar> RcCan<T> {
    /// Weights and biases uniform in `±sqrt(1 / fan_in)`, seeded by
    /// `config.init_seed`; batchnorm starts at the identity.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let k = config.kernel;
        let mut encoder = Vec::new();
        let mut ic = 1;
        for (i, &oc) in config.encoder_channels.iter().enumerate() {
            encoder.push(block(&format!("encoder.{i}"), [oc, ic, k, k], ic * k * k, oc, &mut rng));
            ic = oc;
        }
        let flat = config.bottleneck_len();
        let latent = config.latent_dim;
        let enc_dense_w = uniform("enc_dense.weight".into(), [latent, flat, 1, 1], flat, &mut rng);
        let enc_dense_b = uniform("enc_dense.bias".into(), [1, latent, 1, 1], flat, &mut rng);
        let dec_dense_w = uniform("dec_dense.weight".into(), [flat, latent, 1, 1], latent, &mut rng);
        let dec_dense_b = uniform("dec_dense.bias".into(), [1, flat, 1, 1], latent, &mut rng);
        let mut decoder = Vec::new();
        for (i, oc) in config.decoder_channels().into_iter().enumerate() {
            decoder.push(block(&format!("decoder.{i}"), [ic, oc, k, k], ic * k * k, oc, &mut rng));
            ic = oc;
        }
        let head_w = uniform("head.weight".into(), [1, ic, k, k], ic * k * k, &mut rng);
        let head_b = uniform("head.bias".into(), [1, 1, 1, 1], ic * k * k, &mut rng);
        Ok(RcCan {
            config,
            encoder,
            enc_dense_w,
            enc_dense_b,
            dec_dense_w,
            dec_dense_b,
            decoder,
            head_w,
            head_b,
        })
    }

    /// Every trainable tensor in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.encoder.iter().flat_map(|b| b.params()).collect();
        out.extend([&self.enc_dense_w, &self.enc_dense_b, &self.dec_dense_w, &self.dec_dense_b]);
        out.extend(self.decoder.iter().flat_map(|b| b.params()));
        out.extend([&self.head_w, &self.head_b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.encoder.iter_mut().flat_map(|b| b.params_mut()).collect();
        out.extend([&mut self.enc_dense_w, &mut self.enc_dense_b, &mut self.dec_dense_w, &mut self.dec_dense_b]);
        out.extend(self.decoder.iter_mut().flat_map(|b| b.params_mut()));
        out.extend([&mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn running_stats(&self) -> Vec<(String, &BnRunning<T>)> {
        let enc = self.encoder.iter().enumerate().map(|(i, b)| (format!("encoder.{i}"), &b.running));
        let dec = self.decoder.iter().enumerate().map(|(i, b)| (format!("decoder.{i}"), &b.running));
        enc.chain(dec).collect()
    }

    fn running_stats_mut(&mut self) -> impl Iterator<Item = &mut BnRunning<T>> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut()).map(|b| &mut b.running)
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Converts every tensor, e.g. to f64 for gradient checks.
    pub fn cast<U: Scalar>(&self) -> RcCan<U> {
        let p = |p: &Param<T>| Param {
            name: p.name.clone(),
            value: p.value.cast(),
            grad: p.grad.cast(),
        };
        let b = |b: &ConvBlock<T>| ConvBlock {
            weight: p(&b.weight),
            bias: p(&b.bias),
            gamma: p(&b.gamma),
            beta: p(&b.beta),
            running: BnRunning {
                mean: b.running.mean.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                var: b.running.var.iter().map(|v| U::of_f64(v.as_f64())).collect(),
            },
        };
        RcCan {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(b).collect(),
            enc_dense_w: p(&self.enc_dense_w),
            enc_dense_b: p(&self.enc_dense_b),
            dec_dense_w: p(&self.dec_dense_w),
            dec_dense_b: p(&self.dec_dense_b),
            decoder: self.decoder.iter().map(b).collect(),
            head_w: p(&self.head_w),
            head_b: p(&self.head_b),
        }
    }

    fn pad(&self) -> usize {
        self.config.kernel / 2
    }

    fn slope(&self) -> T {
        T::of_f64(self.config.leaky_slope)
    }

    /// Maps a padded mask batch `[b, 1, H, W]` to latent vectors
    /// `[b, latent, 1, 1]`. Running statistics are only read; train-mode
    /// updates are returned for the caller to commit.
    pub fn encode(&self, x: &Tensor4<T>, mode: BnMode) -> Result<(Tensor4<T>, EncodeTrace<T>, Vec<BnRunning<T>>)> {
        let [_, c, h, w] = x.shape;
        if c != 1 || [h, w] != self.config.padded_shape() {
            return Err(Error::shape("encoder input (padded)", &x.shape, &[1, 1, self.config.padded_shape()[0], self.config.padded_shape()[1]]));
        }
        let geom = ConvGeom::new(self.config.kernel, 1, self.pad());
        let bn = self.config.bn();
        let mut stages = Vec::with_capacity(self.encoder.len());
        let mut running = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        for blk in &self.encoder {
            let z = conv2d_forward(&cur, &blk.weight.value, &blk.bias.value.data, &geom)?;
            let mut r = blk.running.clone();
            let (pre_act, bn_cache) = batchnorm_forward(&z, &blk.gamma.value.data, &blk.beta.value.data, &mut r, mode, &bn)?;
            let act = leaky_relu_forward(&pre_act, self.slope());
            let (pooled, argmax) = maxpool2_forward(&act)?;
            stages.push(EncCache {
                input: cur,
                bn: bn_cache,
                pre_act,
                pool_shape: act.shape,
                argmax,
            });
            running.push(r);
            cur = pooled;
        }
        let latent = dense_forward(&cur, &self.enc_dense_w.value, &self.enc_dense_b.value.data)?;
        Ok((latent, EncodeTrace { stages, pooled: cur }, running))
    }

    /// Maps latents to normalized fields cropped to the unpadded input shape.
    pub fn decode(&self, latent: &Tensor4<T>, mode: BnMode) -> Result<(Tensor4<T>, DecodeTrace<T>, Vec<BnRunning<T>>)> {
        if latent.item_len() != self.config.latent_dim {
            return Err(Error::shape("decoder latent", &latent.shape, &[latent.batch(), self.config.latent_dim, 1, 1]));
        }
        let b = latent.batch();
        let [gh, gw] = self.config.latent_grid();
        let c_last = self.config.encoder_channels[self.config.stages() - 1];
        let geom = ConvGeom::new(self.config.kernel, 1, self.pad());
        let bn = self.config.bn();
        let mut cur = dense_forward(latent, &self.dec_dense_w.value, &self.dec_dense_b.value.data)?.reshape([b, c_last, gh, gw])?;
        let mut stages = Vec::with_capacity(self.decoder.len());
        let mut running = Vec::with_capacity(self.decoder.len());
        for blk in &self.decoder {
            let up = upsample2_forward(&cur);
            let z = conv2d_transpose_forward(&up, &blk.weight.value, &blk.bias.value.data, &geom)?;
            let mut r = blk.running.clone();
            let (pre_act, bn_cache) = batchnorm_forward(&z, &blk.gamma.value.data, &blk.beta.value.data, &mut r, mode, &bn)?;
            cur = leaky_relu_forward(&pre_act, self.slope());
            stages.push(DecCache {
                input: up,
                bn: bn_cache,
                pre_act,
            });
            running.push(r);
        }
        let full = conv2d_forward(&cur, &self.head_w.value, &self.head_b.value.data, &geom)?;
        let [h, w] = self.config.input_shape;
        let out = crop(&full, h, w)?;
        let trace = DecodeTrace {
            latent: latent.clone(),
            stages,
            head_input: cur,
            padded_shape: full.shape,
        };
        Ok((out, trace, running))
    }

    /// Replicate-pads an unpadded `[b, 1, h, w]` batch to the model's padded shape.
    pub fn pad_input(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let [h, w] = self.config.input_shape;
        if x.channels() != 1 || [x.shape[2], x.shape[3]] != [h, w] {
            return Err(Error::shape("model input", &x.shape, &[x.batch(), 1, h, w]));
        }
        let [ph, pw] = self.config.padded_shape();
        pad_replicate(x, ph, pw)
    }

    fn run(&self, x: &Tensor4<T>, mode: BnMode) -> Result<(Tensor4<T>, Trace<T>, Vec<BnRunning<T>>)> {
        let padded = self.pad_input(x)?;
        let (latent, encode, mut running) = self.encode(&padded, mode)?;
        let (y, decode, dec_running) = self.decode(&latent, mode)?;
        running.extend(dec_running);
        Ok((y, Trace { encode, decode }, running))
    }

    /// Eval-mode prediction of normalized fields for unpadded masks `[b, 1, h, w]`.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.run(x, BnMode::Eval)?.0)
    }

    /// Train-mode forward pass; updates batchnorm running statistics and
    /// returns what [`RcCan::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        let (y, trace, running) = self.run(x, BnMode::Train)?;
        for (dst, src) in self.running_stats_mut().zip(running) {
            *dst = src;
        }
        Ok((y, trace))
    }

    /// Adds the parameter gradients of `sum(dy * y)` to every `grad` buffer.
    pub fn backward(&mut self, trace: &Trace<T>, dy: &Tensor4<T>) -> Result<()> {
        let slope = self.slope();
        let geom = ConvGeom::new(self.config.kernel, 1, self.pad());
        let dec = &trace.decode;
        let mut g = crop_backward(dy, dec.padded_shape)?;
        let head = conv2d_backward(&dec.head_input, &self.head_w.value, &g, &geom)?;
        accumulate(&mut self.head_w, &mut self.head_b, &head)?;
        g = head.dx;
        for (blk, cache) in self.decoder.iter_mut().zip(&dec.stages).rev() {
            let d = leaky_relu_backward(&cache.pre_act, &g, slope)?;
            let (d, dgamma, dbeta) = batchnorm_backward(&d, &blk.gamma.value.data, &cache.bn)?;
            add_vec(&mut blk.gamma, &dgamma);
            add_vec(&mut blk.beta, &dbeta);
            let lg = conv2d_transpose_backward(&cache.input, &blk.weight.value, &d, &geom)?;
            accumulate(&mut blk.weight, &mut blk.bias, &lg)?;
            g = upsample2_backward(&lg.dx)?;
        }
        let b = g.batch();
        let flat = g.item_len();
        let g_flat = g.reshape([b, flat, 1, 1])?;
        let dd = dense_backward(&dec.latent, &self.dec_dense_w.value, &g_flat)?;
        accumulate(&mut self.dec_dense_w, &mut self.dec_dense_b, &dd)?;
        let enc = &trace.encode;
        let ed = dense_backward(&enc.pooled, &self.enc_dense_w.value, &dd.dx)?;
        accumulate(&mut self.enc_dense_w, &mut self.enc_dense_b, &ed)?;
        g = ed.dx;
        for (blk, cache) in self.encoder.iter_mut().zip(&enc.stages).rev() {
            let d = maxpool2_backward(cache.pool_shape, &cache.argmax, &g)?;
            let d = leaky_relu_backward(&cache.pre_act, &d, slope)?;
            let (d, dgamma, dbeta) = batchnorm_backward(&d, &blk.gamma.value.data, &cache.bn)?;
            add_vec(&mut blk.gamma, &dgamma);
            add_vec(&mut blk.beta, &dbeta);
            let lg = conv2d_backward(&cache.input, &blk.weight.value, &d, &geom)?;
            accumulate(&mut blk.weight, &mut blk.bias, &lg)?;
            g = lg.dx;
        }
        Ok(())
    }

    /// One train-mode forward/backward on a batch; returns the loss.
    pub fn loss_and_grad(&mut self, x: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
        let (y, trace) = self.forward_train(x)?;
        let (loss, dy) = mse_loss(&y, target)?;
        self.backward(&trace, &dy)?;
        Ok(loss)
    }
}

fn add_vec<T: Scalar>(p: &mut Param<T>, g: &[T]) {
    for (a, &b) in p.grad.data.iter_mut().zip(g) {
        *a = *a + b;
    }
}

fn accumulate<T: Scalar>(w: &mut Param<T>, b: &mut Param<T>, g: &LayerGrads<T>) -> Result<()> {
    w.grad.add_assign(&g.dw)?;
    add_vec(b, &g.db);
    Ok(())
}

/// Stacks masks into a `[b, 1, n_range, n_depth]` batch of 0/1 values.
pub fn masks_to_tensor<T: Scalar>(masks: &[&MaskGrid]) -> Result<Tensor4<T>> {
    let Some(first) = masks.first() else {
        return Err(Error::Config("empty mask batch".into()));
    };
    let [r, d] = first.grid.shape();
    let mut data = Vec::with_capacity(masks.len() * r * d);
    for m in masks {
        if m.grid.shape() != [r, d] {
            return Err(Error::shape("mask batch", &m.grid.shape(), &[r, d]));
        }
        data.extend(m.values.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }));
    }
    Tensor4::from_vec([masks.len(), 1, r, d], data)
}

/// A trained model with everything needed to resume or predict.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub model: RcCan<f32>,
    /// Normalization statistics per task id.
    pub norm_stats: BTreeMap<usize, NormStats>,
    pub step: u64,
    pub seed: u64,
    pub optimizer: Option<AdamW<f32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    config: ModelConfig,
    norm_stats: BTreeMap<usize, NormStats>,
    step: u64,
    seed: u64,
    optimizer: Option<(AdamWConfig, u64)>,
}

const META: &str = "meta.json";

impl ModelState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(ModelState {
            model: RcCan::new(config)?,
            norm_stats: BTreeMap::new(),
            step: 0,
            seed,
            optimizer: None,
        })
    }

    pub fn stats(&self, task_id: usize) -> Result<&NormStats> {
        self.norm_stats
            .get(&task_id)
            .ok_or_else(|| Error::Config(format!("no normalization statistics for task {task_id}")))
    }

    /// Single-shot field prediction in dB, clipped at `clip_db` with every
    /// sea-floor cell set to `clip_db`.
    pub fn predict_tl(&self, mask: &MaskGrid, task_id: usize, clip_db: f64) -> Result<TLField> {
        Ok(self.predict_batch(&[mask], task_id, clip_db)?.remove(0))
    }

    pub fn predict_batch(&self, masks: &[&MaskGrid], task_id: usize, clip_db: f64) -> Result<Vec<TLField>> {
        let stats = *self.stats(task_id)?;
        let x = masks_to_tensor::<f32>(masks)?;
        let y = self.model.forward(&x)?;
        if !y.all_finite() {
            return Err(Error::Numeric("model produced non-finite values".into()));
        }
        masks
            .iter()
            .enumerate()
            .map(|(i, mask)| {
                let values: Vec<f64> = y.item(i).iter().map(|&v| v as f64).collect();
                let mut field = denormalize(&values, &mask.grid, &stats, clip_db)?;
                let clip = clip_db as f32;
                field.values.iter_mut().for_each(|v| *v = v.min(clip));
                mask.apply_to(&mut field)?;
                Ok(field)
            })
            .collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = CheckpointMeta {
            config: self.model.config.clone(),
            norm_stats: self.norm_stats.clone(),
            step: self.step,
            seed: self.seed,
            optimizer: self.optimizer.as_ref().map(|o| (o.config, o.step)),
        };
        let mut c = Container::new();
        c.push(Record::bytes(META, &serde_json::to_vec(&meta)?));
        for p in self.model.params() {
            c.push(tensor_record(&p.name, &p.value)?);
        }
        for (name, r) in self.model.running_stats() {
            c.push(Record::new(RecordKind::Tensor, format!("{name}.running_mean"), vec![r.mean.len() as u32], r.mean.clone())?);
            c.push(Record::new(RecordKind::Tensor, format!("{name}.running_var"), vec![r.var.len() as u32], r.var.clone())?);
        }
        if let Some(opt) = &self.optimizer {
            for ((p, m), v) in self.model.params().into_iter().zip(&opt.m).zip(&opt.v) {
                c.push(Record::new(RecordKind::Tensor, format!("adamw.m.{}", p.name), vec![m.len() as u32], m.clone())?);
                c.push(Record::new(RecordKind::Tensor, format!("adamw.v.{}", p.name), vec![v.len() as u32], v.clone())?);
            }
        }
        Ok(c)
    }

    /// `path` is only used in error messages.
    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_slice(&c.require(META, path)?.to_bytes()?)?;
        let mut model = RcCan::<f32>::new(meta.config)?;
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        for p in model.params_mut() {
            let r = c.require(&p.name, path)?;
            if r.dims_usize() != p.value.shape {
                return Err(fmt(format!("{} has dims {:?}, expected {:?}", p.name, r.dims, p.value.shape)));
            }
            p.value.data.copy_from_slice(&r.data);
        }
        let names: Vec<String> = model.running_stats().into_iter().map(|(n, _)| n).collect();
        for (name, r) in names.iter().zip(model.running_stats_mut()) {
            for (suffix, dst) in [("running_mean", &mut r.mean), ("running_var", &mut r.var)] {
                let rec = c.require(&format!("{name}.{suffix}"), path)?;
                if rec.data.len() != dst.len() {
                    return Err(fmt(format!("{name}.{suffix} has {} values, expected {}", rec.data.len(), dst.len())));
                }
                dst.copy_from_slice(&rec.data);
            }
        }
        let optimizer = match meta.optimizer {
            None => None,
            Some((cfg, step)) => {
                let params = model.params();
                let mut opt = AdamW::new(cfg, &params)?;
                opt.step = step;
                for ((p, m), v) in params.iter().zip(&mut opt.m).zip(&mut opt.v) {
                    for (prefix, dst) in [("adamw.m", &mut *m), ("adamw.v", &mut *v)] {
                        let rec = c.require(&format!("{prefix}.{}", p.name), path)?;
                        if rec.data.len() != dst.len() {
                            return Err(fmt(format!("{prefix}.{} has the wrong length", p.name)));
                        }
                        dst.copy_from_slice(&rec.data);
                    }
                }
                Some(opt)
            }
        };
        Ok(ModelState {
            model,
            norm_stats: meta.norm_stats,
            step: meta.step,
            seed: meta.seed,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?, path)
    }
}

fn tensor_record(name: &str, t: &Tensor4<f32>) -> Result<Record> {
    Record::new(RecordKind::Tensor, name, t.shape.iter().map(|&d| d as u32).collect(), t.data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_shape: [10, 13],
            encoder_channels: vec![4, 8],
            latent_dim: 6,
            ..Default::default()
        }
    }

    #[test]
    fn desk_shapes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.padded_shape(), [176, 256]);
        assert_eq!(cfg.latent_grid(), [11, 16]);
        assert_eq!(cfg.decoder_channels(), vec![64, 32, 16, 16]);
        let odd = ModelConfig {
            input_shape: [1408, 2049],
            ..Default::default()
        };
        assert_eq!(odd.padded_shape(), [1408, 2064]);
        let small = ModelConfig {
            input_shape: [15, 256],
            ..Default::default()
        };
        assert!(small.validate().is_err());
    }

    #[test]
    fn round_trip_shapes_and_order() {
        let model = RcCan::<f32>::new(tiny()).unwrap();
        let x = Tensor4::from_vec([3, 1, 10, 13], (0..390).map(|i| (i % 7 == 0) as u8 as f32).collect()).unwrap();
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape, [3, 1, 10, 13]);
        // batch order preserved: each item alone gives the same output
        for b in 0..3 {
            let xi = Tensor4::from_vec([1, 1, 10, 13], x.item(b).to_vec()).unwrap();
            let yi = model.forward(&xi).unwrap();
            assert_eq!(yi.data, y.item(b));
        }
        assert_eq!(model.forward(&x).unwrap(), y);
        let (latent, _, _) = model.encode(&model.pad_input(&x).unwrap(), BnMode::Eval).unwrap();
        assert_eq!(latent.shape, [3, 6, 1, 1]);
        assert!(model.encode(&x, BnMode::Eval).is_err());
    }

    #[test]
    fn composition_matches_forward() {
        let model = RcCan::<f32>::new(tiny()).unwrap();
        let x = Tensor4::full([2, 1, 10, 13], 1.0f32);
        let (latent, _, _) = model.encode(&model.pad_input(&x).unwrap(), BnMode::Eval).unwrap();
        let (y, _, _) = model.decode(&latent, BnMode::Eval).unwrap();
        assert_eq!(y, model.forward(&x).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let mut state = ModelState::new(tiny(), 9).unwrap();
        state.norm_stats.insert(1, NormStats { mean: 90.0, std: 30.0 });
        let x = Tensor4::full([2, 1, 10, 13], 0.0f32);
        state.model.forward_train(&x).unwrap();
        let params = state.model.params();
        state.optimizer = Some(AdamW::new(AdamWConfig::default(), &params).unwrap());
        let c = state.to_container().unwrap();
        let back = ModelState::from_container(&Container::decode(&c.encode(), Path::new("m")).unwrap(), Path::new("m")).unwrap();
        assert_eq!(back, state);
        assert_eq!(back.model.forward(&x).unwrap(), state.model.forward(&x).unwrap());
    }
}
