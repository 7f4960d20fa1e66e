//! Progressive-growing adversarial autoencoder.
//!
//! The encoder and decoder grow by one resolution block per stage while the latent size stays
//! fixed. A freshly added block is faded in: the encoder blends a downsampled old input path with
//! the new block, the decoder blends upsampled old RGB logits with the new RGB logits, both
//! weighted by `alpha`. At `alpha = 0` a grown model reproduces the previous stage exactly.
//!
//! The discriminator scores latent codes. Its hidden layers double in width per stage; new units
//! start with zero outgoing weights so widening does not change its output. It uses minibatch
//! discrimination and is trained on mixed batches of prior samples and codes. A single code is
//! scored inside a fixed reference batch with the same mix, so its score does not depend on
//! whatever else is being scored.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::metrics::{diversity_score, per_class_rmse, RmseReport};
use super::report::{EpochRecord, StageRecord, TrainReport};
use super::schedule::GrowthSchedule;
use crate::autodiff::{sigmoid, Graph, GraphBuilder, ParamStore, ValueId};
use crate::dataset::{augment, Dataset, LabeledImage};
use crate::error::{LxlError, Result};
use crate::image::{Image, CHANNELS};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::parallel;
use crate::tensor::Tensor;

pub const AAE_KIND: &str = "aae";
const EVAL_CHUNK: usize = 64;
const LEAK: f64 = 0.2;
/// Prior samples decoded for the diversity score.
pub const DIVERSITY_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaeConfig {
    pub latent_dim: usize,
    /// Feature channels per stage, lowest resolution first.
    pub channels: Vec<usize>,
    pub batch_size: usize,
    /// Std of the additive Gaussian corruption in the reconstruction phase.
    pub noise_std: f64,
    pub augment: bool,
    /// Learning-rate multiplier reached at the end of each stage.
    pub final_lr_scale: f64,
    /// Discriminator-only epochs at the end of each stage, encoder frozen, so the final critic
    /// matches the final code distribution.
    pub calibration_epochs: usize,
    /// Weight of a penalty pulling the per-dimension batch mean and variance of the codes toward
    /// 0 and 1, applied in the encoder's adversarial step.
    pub moment_weight: f64,
    pub mbd_kernels: usize,
    pub mbd_kernel_dim: usize,
    pub autoencoder_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub generator_adam: AdamConfig,
}

impl Default for AaeConfig {
    fn default() -> Self {
        AaeConfig {
            latent_dim: 32,
            channels: vec![48, 24, 12],
            batch_size: 32,
            noise_std: 0.1,
            augment: true,
            final_lr_scale: 0.1,
            calibration_epochs: 2,
            moment_weight: 1.0,
            mbd_kernels: 8,
            mbd_kernel_dim: 4,
            autoencoder_adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            discriminator_adam: AdamConfig {
                lr: 1e-4,
                beta1: 0.5,
                ..AdamConfig::default()
            },
            generator_adam: AdamConfig {
                lr: 2e-3,
                beta1: 0.5,
                ..AdamConfig::default()
            },
        }
    }
}

impl AaeConfig {
    pub fn validate(&self, schedule: &GrowthSchedule) -> Result<()> {
        schedule.validate()?;
        if self.latent_dim == 0 || self.batch_size < 2 {
            return Err(LxlError::Config("aae latent_dim must be positive and batch_size at least 2".into()));
        }
        if self.channels.len() < schedule.len() || self.channels.contains(&0) {
            return Err(LxlError::Config(format!(
                "aae channels needs {} positive entries, one per stage",
                schedule.len()
            )));
        }
        if self.mbd_kernels == 0 || self.mbd_kernel_dim == 0 {
            return Err(LxlError::Config("aae minibatch discrimination sizes must be positive".into()));
        }
        if !(self.final_lr_scale > 0.0 && self.final_lr_scale <= 1.0) {
            return Err(LxlError::Config("aae final_lr_scale must be in (0, 1]".into()));
        }
        if !(self.moment_weight >= 0.0) {
            return Err(LxlError::Config("aae moment_weight must be non-negative".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(LxlError::Config("aae noise_std must be non-negative".into()));
        }
        for (name, a) in [
            ("autoencoder_adam", &self.autoencoder_adam),
            ("discriminator_adam", &self.discriminator_adam),
            ("generator_adam", &self.generator_adam),
        ] {
            if !(a.lr > 0.0) {
                return Err(LxlError::Config(format!("aae {name}.lr must be positive")));
            }
        }
        Ok(())
    }
}

/// Whether a stage graph includes the fade-in blend.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Path {
    Faded,
    NewOnly,
}

fn enc_block(g: &mut GraphBuilder<f32>, t: usize, h: ValueId, ch: &[usize]) -> ValueId {
    if t == 0 {
        let h = g.conv2d("enc.block0", h, ch[0], ch[0], 3, 1, 1);
        return g.silu(h);
    }
    let h = g.conv2d(&format!("enc.block{t}"), h, ch[t], ch[t - 1], 3, 1, 1);
    let h = g.silu(h);
    g.avgpool2(h)
}

fn encoder_graph(stage: usize, base: usize, k: usize, ch: &[usize], path: Path) -> GraphBuilder<f32> {
    let mut g = GraphBuilder::new();
    let extent = base << stage;
    let x = g.input("x", &[CHANNELS, extent, extent]);
    let alpha = g.scalar_input("alpha");
    let h = g.conv2d(&format!("enc.from_rgb{stage}"), x, CHANNELS, ch[stage], 1, 1, 0);
    let mut h = g.silu(h);
    if stage > 0 {
        h = enc_block(&mut g, stage, h, ch);
        if path == Path::Faded {
            let old = g.avgpool2(x);
            let old = g.conv2d(&format!("enc.from_rgb{}", stage - 1), old, CHANNELS, ch[stage - 1], 1, 1, 0);
            let old = g.silu(old);
            h = g.blend(old, h, alpha);
        }
        for t in (1..stage).rev() {
            h = enc_block(&mut g, t, h, ch);
        }
    }
    let h = enc_block(&mut g, 0, h, ch);
    let h = g.flatten(h);
    let z = g.dense("enc.out", h, ch[0] * base * base, k);
    g.output("z", z);
    g
}

fn decoder_graph(stage: usize, base: usize, k: usize, ch: &[usize], path: Path) -> GraphBuilder<f32> {
    let mut g = GraphBuilder::new();
    let z = g.input("z", &[k]);
    let alpha = g.scalar_input("alpha");
    let h = g.dense("dec.in", z, k, ch[0] * base * base);
    let h = g.reshape(h, &[ch[0], base, base]);
    let h = g.silu(h);
    let h = g.conv2d("dec.block0", h, ch[0], ch[0], 3, 1, 1);
    let mut h = g.silu(h);
    let mut prev = h;
    for t in 1..=stage {
        prev = h;
        let u = g.upsample2(h);
        let u = g.conv2d(&format!("dec.block{t}"), u, ch[t - 1], ch[t], 3, 1, 1);
        h = g.silu(u);
    }
    let mut logits = g.conv2d(&format!("dec.to_rgb{stage}"), h, ch[stage], CHANNELS, 1, 1, 0);
    if stage > 0 && path == Path::Faded {
        let old = g.conv2d(&format!("dec.to_rgb{}", stage - 1), prev, ch[stage - 1], CHANNELS, 1, 1, 0);
        let old = g.upsample2(old);
        logits = g.blend(old, logits, alpha);
    }
    let out = g.sigmoid(logits);
    g.output("x", out);
    g
}

fn discriminator_graph(width: usize, k: usize, kernels: usize, kernel_dim: usize) -> GraphBuilder<f32> {
    let mut g = GraphBuilder::new();
    let z = g.input("z", &[k]);
    let h = g.dense("disc.fc1", z, k, width);
    let h = g.leaky_relu(h, LEAK);
    let h = g.minibatch_disc("disc.mbd", h, width, kernels, kernel_dim);
    let h = g.dense("disc.fc2", h, width + kernels, width);
    let h = g.leaky_relu(h, LEAK);
    let logit = g.dense("disc.out", h, width, 1);
    let prob = g.sigmoid(logit);
    g.output("logit", logit);
    g.output("prob", prob);
    g
}

/// Copies `old` (`[r, c]`) into a zero `[rows, cols]` matrix, mapping old row `i` to `row_map(i)`.
fn embed(old: &Tensor<f32>, rows: usize, cols: usize, row_map: impl Fn(usize) -> usize) -> Tensor<f32> {
    let (r, c) = (old.shape()[0], old.shape()[1]);
    let mut out = Tensor::zeros(&[rows, cols]);
    for i in 0..r {
        let dst = row_map(i) * cols;
        out.data_mut()[dst..dst + c].copy_from_slice(&old.data()[i * c..(i + 1) * c]);
    }
    out
}

fn he_fill<R: Rng>(t: &mut Tensor<f32>, cols: std::ops::Range<usize>, fan_in: usize, rng: &mut R) {
    let std = (2.0 / fan_in as f64).sqrt();
    let width = t.shape()[1];
    let rows = t.shape()[0];
    for i in 0..rows {
        for j in cols.clone() {
            let v: f64 = StandardNormal.sample(rng);
            t.data_mut()[i * width + j] = (v * std) as f32;
        }
    }
}

fn grow_vec(old: &Tensor<f32>, len: usize) -> Tensor<f32> {
    let mut out = Tensor::zeros(&[len]);
    out.data_mut()[..old.len()].copy_from_slice(old.data());
    out
}

pub fn sample_prior<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| (0..k).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>().into_iter().map(|v| v as f32).collect())
        .collect()
}

fn latents_tensor(zs: &[&[f32]], k: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(zs.len() * k);
    for z in zs {
        if z.len() != k {
            return Err(LxlError::shape("latent vector", k, z.len()));
        }
        data.extend_from_slice(z);
    }
    Tensor::new(vec![zs.len(), k], data)
}

/// Encoder, decoder and discriminator at the current growth stage.
#[derive(Debug, Clone)]
pub struct Aae {
    config: AaeConfig,
    schedule: GrowthSchedule,
    stage: usize,
    alpha: f32,
    encoder: Graph<f32>,
    decoder: Graph<f32>,
    discriminator: Graph<f32>,
    /// `batch_size` prior samples then `batch_size - 1` codes; completes a single code to a
    /// training-shaped discriminator batch.
    reference: Tensor<f32>,
}

impl Aae {
    /// Untrained stage-0 model.
    pub fn new(config: AaeConfig, schedule: GrowthSchedule, seed: u64) -> Result<Aae> {
        config.validate(&schedule)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.latent_dim;
        let base = schedule.stages[0].extent;
        let encoder = encoder_graph(0, base, k, &config.channels, Path::Faded).build_init(ParamStore::new(), &mut rng)?;
        let decoder = decoder_graph(0, base, k, &config.channels, Path::Faded).build_init(ParamStore::new(), &mut rng)?;
        let discriminator = discriminator_graph(schedule.stages[0].discriminator_width, k, config.mbd_kernels, config.mbd_kernel_dim)
            .build_init(ParamStore::new(), &mut rng)?;
        // Until codes exist the whole reference comes from the prior.
        let refs = sample_prior(2 * config.batch_size - 1, k, &mut rng);
        let reference = latents_tensor(&refs.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), k)?;
        Ok(Aae {
            config,
            schedule,
            stage: 0,
            alpha: 1.0,
            encoder,
            decoder,
            discriminator,
            reference,
        })
    }

    pub fn config(&self) -> &AaeConfig {
        &self.config
    }

    pub fn schedule(&self) -> &GrowthSchedule {
        &self.schedule
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Image extent of the current stage.
    pub fn extent(&self) -> usize {
        self.schedule.stages[self.stage].extent
    }

    pub fn discriminator_width(&self) -> usize {
        self.schedule.stages[self.stage].discriminator_width
    }

    pub fn is_final_stage(&self) -> bool {
        self.stage + 1 == self.schedule.len()
    }

    fn base(&self) -> usize {
        self.schedule.stages[0].extent
    }

    /// Fade weight for the newest block; clamped to `[0,1]`.
    pub fn set_alpha(&mut self, alpha: f32) {
        self.alpha = alpha.clamp(0.0, 1.0);
    }

    /// Adds the next stage's blocks with fresh weights and sets `alpha = 0`.
    pub fn grow(&mut self, seed: u64) -> Result<()> {
        if self.is_final_stage() {
            return Err(LxlError::State("autoencoder is already at its final stage".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, base, next) = (self.config.latent_dim, self.base(), self.stage + 1);
        let ch = self.config.channels.clone();
        self.encoder = encoder_graph(next, base, k, &ch, Path::Faded).build_init(self.encoder.params().clone(), &mut rng)?;
        self.decoder = decoder_graph(next, base, k, &ch, Path::Faded).build_init(self.decoder.params().clone(), &mut rng)?;
        let old_w = self.discriminator_width();
        let new_w = self.schedule.stages[next].discriminator_width;
        if new_w != old_w {
            let params = self.widened_discriminator(old_w, new_w, &mut rng)?;
            self.discriminator = discriminator_graph(new_w, k, self.config.mbd_kernels, self.config.mbd_kernel_dim).build(params)?;
        }
        self.stage = next;
        self.alpha = 0.0;
        Ok(())
    }

    fn widened_discriminator<R: Rng>(&self, old_w: usize, new_w: usize, rng: &mut R) -> Result<ParamStore<f32>> {
        let p = self.discriminator.params();
        let get = |n: &str| p.get(n).ok_or_else(|| LxlError::State(format!("discriminator lacks {n}")));
        let (k, kb) = (self.config.latent_dim, self.config.mbd_kernels);
        let mut out = ParamStore::new();

        let mut fc1 = embed(get("disc.fc1.w")?, k, new_w, |i| i);
        he_fill(&mut fc1, old_w..new_w, k, rng);
        out.insert("disc.fc1.w", fc1);
        out.insert("disc.fc1.b", grow_vec(get("disc.fc1.b")?, new_w));

        let t = get("disc.mbd.t")?;
        out.insert("disc.mbd.t", embed(t, new_w, t.shape()[1], |i| i));

        let fc2 = get("disc.fc2.w")?;
        let mut w2 = embed(fc2, new_w + kb, new_w, |i| if i < old_w { i } else { i - old_w + new_w });
        // New units read everything; old units ignore the new rows, which start at zero.
        he_fill(&mut w2, old_w..new_w, new_w + kb, rng);
        for i in old_w..new_w {
            w2.data_mut()[i * new_w..i * new_w + old_w].iter_mut().for_each(|v| *v = 0.0);
        }
        out.insert("disc.fc2.w", w2);
        out.insert("disc.fc2.b", grow_vec(get("disc.fc2.b")?, new_w));

        out.insert("disc.out.w", embed(get("disc.out.w")?, new_w, 1, |i| i));
        out.insert("disc.out.b", get("disc.out.b")?.clone());
        Ok(out)
    }

    /// The current stage without the fade-in blend: only the newest path.
    pub fn without_fade(&self) -> Result<Aae> {
        let (k, base) = (self.config.latent_dim, self.base());
        let ch = &self.config.channels;
        let mut enc_params = self.encoder.params().clone();
        let mut dec_params = self.decoder.params().clone();
        if self.stage > 0 {
            for (params, prefix) in [
                (&mut enc_params, format!("enc.from_rgb{}.", self.stage - 1)),
                (&mut dec_params, format!("dec.to_rgb{}.", self.stage - 1)),
            ] {
                let stale: Vec<String> = params.names().filter(|n| n.starts_with(&prefix)).cloned().collect();
                for n in stale {
                    params.remove(&n);
                }
            }
        }
        let mut out = self.clone();
        out.encoder = encoder_graph(self.stage, base, k, ch, Path::NewOnly).build(enc_params)?;
        out.decoder = decoder_graph(self.stage, base, k, ch, Path::NewOnly).build(dec_params)?;
        Ok(out)
    }

    fn alpha_input(&self) -> Tensor<f32> {
        Tensor::scalar(self.alpha)
    }

    pub fn encode(&self, image: &Image) -> Result<Vec<f32>> {
        Ok(self.encode_batch(&[image])?.remove(0))
    }

    pub fn encode_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let k = self.config.latent_dim;
        let parts = parallel::map_chunks(images.len(), EVAL_CHUNK, |r| -> Result<Vec<Vec<f32>>> {
            let x = Image::batch_to_tensor(&images[r])?;
            let out = self.encoder.evaluate([("x", x), ("alpha", self.alpha_input())])?;
            Ok(out["z"].data().chunks(k).map(|c| c.to_vec()).collect())
        });
        collect_parts(parts)
    }

    pub fn decode(&self, z: &[f32]) -> Result<Image> {
        Ok(self.decode_batch(&[z])?.remove(0))
    }

    pub fn decode_batch(&self, zs: &[&[f32]]) -> Result<Vec<Image>> {
        let k = self.config.latent_dim;
        let parts = parallel::map_chunks(zs.len(), EVAL_CHUNK, |r| -> Result<Vec<Image>> {
            let n = r.len();
            let z = latents_tensor(&zs[r], k)?;
            let out = self.decoder.evaluate([("z", z), ("alpha", self.alpha_input())])?;
            (0..n).map(|i| Image::from_tensor(&out["x"], i)).collect()
        });
        collect_parts(parts)
    }

    pub fn reconstruct_batch(&self, images: &[&Image]) -> Result<Vec<Image>> {
        let zs = self.encode_batch(images)?;
        self.decode_batch(&zs.iter().map(|z| z.as_slice()).collect::<Vec<_>>())
    }

    /// Probability that `z` comes from the prior.
    pub fn discriminate(&self, z: &[f32]) -> Result<f32> {
        Ok(self.discriminate_batch(&[z])?[0])
    }

    /// Scores each code independently inside the reference batch.
    pub fn discriminate_batch(&self, zs: &[&[f32]]) -> Result<Vec<f32>> {
        let k = self.config.latent_dim;
        let scores = parallel::map(zs, |z| -> Result<f32> {
            let row = latents_tensor(&[z], k)?;
            let batch = Tensor::stack_rows(&[row, self.reference.clone()])?;
            let out = self.discriminator.evaluate([("z", batch)])?;
            Ok(out["prob"].data()[0])
        });
        scores.into_iter().collect()
    }

    /// Rebuilds the reference batch from fresh prior samples and the codes of `images`.
    /// Training calls this at the end of every stage.
    pub fn refresh_reference(&mut self, images: &[&Image], seed: u64) -> Result<()> {
        let b = self.config.batch_size;
        if images.is_empty() {
            return Err(LxlError::Empty("reference images".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<&Image> = images.to_vec();
        order.shuffle(&mut rng);
        // Small sets are cycled.
        let picks: Vec<&Image> = (0..b - 1).map(|i| order[i % order.len()]).collect();
        let mut rows = sample_prior(b, self.config.latent_dim, &mut rng);
        rows.extend(self.encode_batch(&picks)?);
        self.reference = latents_tensor(&rows.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), self.config.latent_dim)?;
        Ok(())
    }

    /// Scores codes jointly as one minibatch, as during training. Needs at least two codes.
    pub fn discriminate_jointly(&self, zs: &[&[f32]]) -> Result<Vec<f32>> {
        let z = latents_tensor(zs, self.config.latent_dim)?;
        let out = self.discriminator.evaluate([("z", z)])?;
        Ok(out["prob"].data().to_vec())
    }

    pub fn reconstruction_rmse(&self, items: &[&LabeledImage]) -> Result<RmseReport> {
        per_class_rmse(items, |imgs| self.reconstruct_batch(imgs))
    }

    /// Mean pairwise L2 between decoded prior samples.
    pub fn diversity(&self, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zs = sample_prior(DIVERSITY_SAMPLES, self.config.latent_dim, &mut rng);
        let imgs = self.decode_batch(&zs.iter().map(|z| z.as_slice()).collect::<Vec<_>>())?;
        diversity_score(&imgs)
    }

    pub fn encoder_params(&self) -> &ParamStore<f32> {
        self.encoder.params()
    }

    pub fn decoder_params(&self) -> &ParamStore<f32> {
        self.decoder.params()
    }

    pub fn discriminator_params(&self) -> &ParamStore<f32> {
        self.discriminator.params()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::json!({
            "stage": self.stage,
            "alpha": self.alpha,
            "config": self.config,
            "schedule": self.schedule,
        });
        let mut all = ParamStore::new();
        for store in [self.encoder.params(), self.decoder.params(), self.discriminator.params()] {
            for (n, t) in store.iter() {
                all.insert(n.clone(), t.clone());
            }
        }
        save_checkpoint(w, AAE_KIND, meta, &all, &[("disc_reference", &self.reference)])
    }

    pub fn load<R: Read>(r: R) -> Result<Aae> {
        let (meta, params, extra) = load_checkpoint(r, AAE_KIND)?;
        let config: AaeConfig = serde_json::from_value(meta["config"].clone())?;
        let schedule: GrowthSchedule = serde_json::from_value(meta["schedule"].clone())?;
        config.validate(&schedule)?;
        let stage = meta["stage"].as_u64().ok_or_else(|| LxlError::Format("aae checkpoint lacks stage".into()))? as usize;
        if stage >= schedule.len() {
            return Err(LxlError::Format(format!("aae checkpoint stage {stage} beyond schedule")));
        }
        let alpha = meta["alpha"].as_f64().unwrap_or(1.0) as f32;
        let split = |prefix: &str| -> ParamStore<f32> {
            params.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(n, t)| (n.clone(), t.clone())).collect()
        };
        let (k, base) = (config.latent_dim, schedule.stages[0].extent);
        let ch = &config.channels;
        let encoder = encoder_graph(stage, base, k, ch, Path::Faded).build(split("enc."))?;
        let decoder = decoder_graph(stage, base, k, ch, Path::Faded).build(split("dec."))?;
        let discriminator = discriminator_graph(schedule.stages[stage].discriminator_width, k, config.mbd_kernels, config.mbd_kernel_dim)
            .build(split("disc."))?;
        let reference = extra
            .into_iter()
            .find(|(n, _)| n == "disc_reference")
            .map(|(_, t)| t)
            .ok_or_else(|| LxlError::Format("aae checkpoint lacks the discriminator reference batch".into()))?;
        if reference.shape().len() != 2 || reference.shape()[1] != k {
            return Err(LxlError::shape("disc_reference", [2 * config.batch_size - 1, k], reference.shape()));
        }
        Ok(Aae {
            config,
            schedule,
            stage,
            alpha,
            encoder,
            decoder,
            discriminator,
            reference,
        })
    }
}

fn collect_parts<T>(parts: Vec<Result<Vec<T>>>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Binary cross-entropy with logits, averaged over rows whose target is `Some`; other rows get
/// zero gradient.
fn bce_logits(logits: &Tensor<f32>, targets: &[Option<f64>]) -> (f64, Tensor<f32>) {
    let n = targets.iter().flatten().count().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &l), t) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets) {
        if let Some(t) = *t {
            let l = l as f64;
            loss += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
            *g = ((sigmoid(l) - t) / n) as f32;
        }
    }
    (loss / n, grad)
}

/// `weight · mean_j(m_j² + (v_j − 1)²)` over latent dimensions j, with m and v the batch mean and
/// (biased) variance of `z` `[n, k]`. Adds its gradient into `grad`.
fn moment_penalty(z: &Tensor<f32>, weight: f64, grad: &mut Tensor<f32>) -> f64 {
    let (n, k) = (z.shape()[0], z.shape()[1]);
    if weight == 0.0 || n < 2 {
        return 0.0;
    }
    let (zd, gd) = (z.data(), grad.data_mut());
    let mut loss = 0.0;
    for j in 0..k {
        let m = (0..n).map(|i| zd[i * k + j] as f64).sum::<f64>() / n as f64;
        let v = (0..n).map(|i| (zd[i * k + j] as f64 - m).powi(2)).sum::<f64>() / n as f64;
        loss += m * m + (v - 1.0).powi(2);
        for i in 0..n {
            let c = zd[i * k + j] as f64 - m;
            gd[i * k + j] += (weight / k as f64 * (2.0 * m / n as f64 + 4.0 * (v - 1.0) * c / n as f64)) as f32;
        }
    }
    weight * loss / k as f64
}

fn merge(into: &mut BTreeMap<String, Tensor<f32>>, from: BTreeMap<String, Tensor<f32>>) {
    for (k, v) in from {
        match into.get_mut(&k) {
            Some(t) => t.add_assign(&v),
            None => {
                into.insert(k, v);
            }
        }
    }
}

struct Trainer {
    aae: Aae,
    ae_state: AdamState,
    disc_state: AdamState,
    gen_state: AdamState,
}

#[derive(Default)]
struct BatchLosses {
    reconstruction: f64,
    adversarial: f64,
    generator: f64,
}

impl Trainer {
    fn step<R: Rng>(&mut self, x: &Tensor<f32>, lr_scale: f64, rng: &mut R) -> Result<BatchLosses> {
        let mut cfg = self.aae.config.clone();
        for a in [&mut cfg.autoencoder_adam, &mut cfg.discriminator_adam, &mut cfg.generator_adam] {
            a.lr *= lr_scale;
        }
        let n = x.shape()[0];
        let alpha = self.aae.alpha_input();

        // Denoising reconstruction.
        let mut noisy = x.clone();
        for v in noisy.data_mut() {
            let e: f64 = StandardNormal.sample(&mut *rng);
            *v = (*v as f64 + cfg.noise_std * e).clamp(0.0, 1.0) as f32;
        }
        let z = self.aae.encoder.forward([("x", noisy), ("alpha", alpha.clone())])?.remove("z").expect("output");
        let xr = self.aae.decoder.forward([("z", z), ("alpha", alpha.clone())])?.remove("x").expect("output");
        let numel = xr.len() as f64;
        let mut rec = 0.0;
        let mut dx = Tensor::zeros(xr.shape());
        for ((d, &r), &t) in dx.data_mut().iter_mut().zip(xr.data()).zip(x.data()) {
            let diff = (r - t) as f64;
            rec += diff * diff;
            *d = (2.0 * diff / numel) as f32;
        }
        let dg = self.aae.decoder.backward(&dx)?;
        let eg = self.aae.encoder.backward(&dg.inputs["z"])?;
        let mut grads = dg.params;
        merge(&mut grads, eg.params);
        adam_step(self.aae.decoder.params_mut(), &split_grads(&grads, "dec."), &mut self.ae_state, &cfg.autoencoder_adam)?;
        adam_step(self.aae.encoder.params_mut(), &split_grads(&grads, "enc."), &mut self.ae_state, &cfg.autoencoder_adam)?;

        let (l_disc, mixed) = self.discriminator_step(x, &cfg, rng)?;

        // Encoder tries to make its codes pass as prior samples in the same batch.
        let gen_targets: Vec<Option<f64>> = (0..2 * n).map(|i| (i >= n).then_some(1.0)).collect();
        let out = self.aae.discriminator.forward([("z", mixed.clone())])?;
        let (l_gen, d_gen) = bce_logits(&out["logit"], &gen_targets);
        let dz_all = self.aae.discriminator.backward_from(&[("logit", &d_gen)])?.inputs.remove("z").expect("input grad");
        let mut dz = dz_all.slice_rows(n, 2 * n);
        let l_mom = moment_penalty(&mixed.slice_rows(n, 2 * n), cfg.moment_weight, &mut dz);
        let eg = self.aae.encoder.backward(&dz)?;
        adam_step(self.aae.encoder.params_mut(), &eg.params, &mut self.gen_state, &cfg.generator_adam)?;

        Ok(BatchLosses {
            reconstruction: rec / numel,
            adversarial: l_disc,
            generator: l_gen + l_mom,
        })
    }
}

impl Trainer {
    /// One discriminator update on a mixed batch: prior samples are real, codes are fake.
    /// Returns the loss and the mixed batch.
    fn discriminator_step<R: Rng>(&mut self, x: &Tensor<f32>, cfg: &AaeConfig, rng: &mut R) -> Result<(f64, Tensor<f32>)> {
        let (n, k) = (x.shape()[0], cfg.latent_dim);
        let alpha = self.aae.alpha_input();
        let fake = self.aae.encoder.forward([("x", x.clone()), ("alpha", alpha)])?.remove("z").expect("output");
        let prior = sample_prior(n, k, rng);
        let real = latents_tensor(&prior.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), k)?;
        let mixed = Tensor::stack_rows(&[real, fake])?;
        let targets: Vec<Option<f64>> = (0..2 * n).map(|i| Some(if i < n { 1.0 } else { 0.0 })).collect();
        let out = self.aae.discriminator.forward([("z", mixed.clone())])?;
        let (loss, d_logit) = bce_logits(&out["logit"], &targets);
        let grads = self.aae.discriminator.backward_from(&[("logit", &d_logit)])?.params;
        adam_step(self.aae.discriminator.params_mut(), &grads, &mut self.disc_state, &cfg.discriminator_adam)?;
        Ok((loss, mixed))
    }
}

/// Full learning rate while a block fades in, then linear decay to `floor` by the stage end.
fn lr_scale(step: usize, fade_steps: f64, total_steps: f64, floor: f64) -> f64 {
    let span = total_steps - fade_steps;
    if span <= 0.0 || (step as f64) < fade_steps {
        return 1.0;
    }
    let t = ((step as f64 - fade_steps) / span).min(1.0);
    1.0 + (floor - 1.0) * t
}

fn split_grads(grads: &BTreeMap<String, Tensor<f32>>, prefix: &str) -> BTreeMap<String, Tensor<f32>> {
    grads.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Trains through every stage of `schedule`. Per minibatch: a denoising reconstruction step on
/// encoder and decoder, a discriminator step on prior samples versus codes, and an encoder step
/// against the updated discriminator.
///
/// `validation`, when given, is used for the per-stage RMSE in the report.
pub fn train_pgaae(
    train: &Dataset,
    validation: Option<&Dataset>,
    schedule: &GrowthSchedule,
    config: &AaeConfig,
    seed: u64,
) -> Result<(Aae, TrainReport)> {
    config.validate(schedule)?;
    let extent = train
        .extent()
        .ok_or_else(|| LxlError::Config("training images must share one square extent".into()))?;
    schedule.check_dataset(extent)?;
    if train.len() < 2 {
        return Err(LxlError::Config("autoencoder training needs at least 2 images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aae = Aae::new(config.clone(), schedule.clone(), rng.gen())?;
    let mut trainer = Trainer {
        aae,
        ae_state: AdamState::new(),
        disc_state: AdamState::new(),
        gen_state: AdamState::new(),
    };
    let eval_items: Vec<&LabeledImage> = validation.unwrap_or(train).items().iter().collect();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches_per_epoch = train.len().div_ceil(config.batch_size);

    for (s, spec) in schedule.stages.iter().enumerate() {
        if s > 0 {
            trainer.aae.grow(rng.gen())?;
            trainer.disc_state.retain_matching(trainer.aae.discriminator.params());
        }
        if trainer.aae.latent_dim() != config.latent_dim {
            return Err(LxlError::State("latent dimension changed across stages".into()));
        }
        let fade_steps = if s == 0 {
            0.0
        } else {
            spec.fade_fraction * (spec.epochs * batches_per_epoch) as f64
        };
        let total_steps = (spec.epochs * batches_per_epoch) as f64;
        let mut step = 0usize;
        for epoch in 1..=spec.epochs {
            order.shuffle(&mut rng);
            let mut sums = BatchLosses::default();
            let mut batches = 0usize;
            for batch in order.chunks(config.batch_size) {
                let alpha = if fade_steps > 0.0 { (step as f64 / fade_steps).min(1.0) } else { 1.0 };
                trainer.aae.set_alpha(alpha as f32);
                step += 1;
                if batch.len() < 2 {
                    continue;
                }
                let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
                let imgs = parallel::map_range(batch.len(), |i| {
                    let img = &train.items()[batch[i]].image;
                    let img = if config.augment {
                        augment(img, &mut ChaCha8Rng::seed_from_u64(seeds[i]))
                    } else {
                        img.clone()
                    };
                    img.downsample_to(spec.extent)
                });
                let imgs = imgs.into_iter().collect::<Result<Vec<_>>>()?;
                let x = Image::batch_to_tensor(&imgs.iter().collect::<Vec<_>>())?;
                let l = trainer.step(&x, lr_scale(step - 1, fade_steps, total_steps, config.final_lr_scale), &mut rng)?;
                sums.reconstruction += l.reconstruction;
                sums.adversarial += l.adversarial;
                sums.generator += l.generator;
                batches += 1;
            }
            let b = batches.max(1) as f64;
            let mut rec = EpochRecord::new(epoch);
            rec.stage = Some(s);
            rec.reconstruction_loss = Some(sums.reconstruction / b);
            rec.adversarial_loss = Some(sums.adversarial / b);
            rec.generator_loss = Some(sums.generator / b);
            rec.fade_alpha = Some(trainer.aae.alpha() as f64);
            log::info!(
                "aae stage {s} epoch {epoch}: rec {:.5} disc {:.4} gen {:.4} alpha {:.2}",
                sums.reconstruction / b,
                sums.adversarial / b,
                sums.generator / b,
                trainer.aae.alpha()
            );
            report.epochs.push(rec);
        }
        trainer.aae.set_alpha(1.0);
        for _ in 0..config.calibration_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size).filter(|b| b.len() >= 2) {
                let imgs = batch
                    .iter()
                    .map(|&i| train.items()[i].image.downsample_to(spec.extent))
                    .collect::<Result<Vec<_>>>()?;
                let x = Image::batch_to_tensor(&imgs.iter().collect::<Vec<_>>())?;
                trainer.discriminator_step(&x, config, &mut rng)?;
            }
        }
        let stage_imgs: Vec<Image> = train.items().iter().map(|it| it.image.downsample_to(spec.extent)).collect::<Result<_>>()?;
        trainer.aae.refresh_reference(&stage_imgs.iter().collect::<Vec<_>>(), rng.gen())?;
        let stage_items: Vec<LabeledImage> = eval_items
            .iter()
            .map(|it| {
                Ok(LabeledImage {
                    id: it.id.clone(),
                    image: it.image.downsample_to(spec.extent)?,
                    label: it.label,
                })
            })
            .collect::<Result<_>>()?;
        let rmse = trainer.aae.reconstruction_rmse(&stage_items.iter().collect::<Vec<_>>())?;
        report.warnings.extend(rmse.warnings.iter().map(|w| format!("stage {s}: {w}")));
        report.stages.push(StageRecord {
            stage: s,
            extent: spec.extent,
            epochs: spec.epochs,
            latent_dim: trainer.aae.latent_dim(),
            discriminator_width: trainer.aae.discriminator_width(),
            per_class_rmse: rmse.rmse,
            diversity: trainer.aae.diversity(seed ^ 0xD1CE)?,
        });
    }
    report.validate()?;
    Ok((trainer.aae, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, k) = (5, 3);
        let data: Vec<f32> = (0..n * k).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let z = Tensor::new(vec![n, k], data).unwrap();
        let mut grad = Tensor::zeros(&[n, k]);
        let loss = moment_penalty(&z, 0.7, &mut grad);
        assert!(loss > 0.0);
        let h = 1e-3f32;
        for i in 0..n * k {
            let mut plus = z.clone();
            plus.data_mut()[i] += h;
            let mut minus = z.clone();
            minus.data_mut()[i] -= h;
            let mut scratch = Tensor::zeros(&[n, k]);
            let fd = (moment_penalty(&plus, 0.7, &mut scratch) - moment_penalty(&minus, 0.7, &mut scratch)) / (2.0 * h as f64);
            assert!((fd - grad.data()[i] as f64).abs() < 1e-3 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad.data()[i]);
        }
    }

    #[test]
    fn moment_penalty_vanishes_on_standardized_batch() {
        let z = Tensor::new(vec![2, 1], vec![-1.0, 1.0]).unwrap();
        let mut grad = Tensor::zeros(&[2, 1]);
        assert_eq!(moment_penalty(&z, 1.0, &mut grad), 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }
}
