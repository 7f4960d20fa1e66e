//! Residual CNN black box with per-class sigmoid outputs, trained on the sum of one-vs-rest
//! binary cross-entropies.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::metrics::{argmax, balanced_accuracy};
use super::report::{EpochRecord, TrainReport};
use crate::autodiff::{sigmoid, Graph, GraphBuilder, ParamStore, ValueId};
use crate::dataset::{augment, Dataset, LabeledImage, CLASS_NAMES, NUM_CLASSES};
use crate::error::{LxlError, Result};
use crate::image::{Image, CHANNELS};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::parallel;
use crate::tensor::Tensor;

pub const CLASSIFIER_KIND: &str = "classifier";

/// Samples per gradient shard. Shards run in parallel and are summed in order, so results do
/// not depend on the thread count.
const SHARD: usize = 16;
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Channels of the first residual stage; the second stage doubles it.
    pub width: usize,
    pub augment: bool,
    pub adam: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 20,
            batch_size: 32,
            width: 16,
            augment: true,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.width == 0 {
            return Err(LxlError::Config("classifier epochs, batch_size and width must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(LxlError::Config("classifier adam.lr must be positive".into()));
        }
        Ok(())
    }
}

fn residual(g: &mut GraphBuilder<f32>, name: &str, x: ValueId, in_ch: usize, out_ch: usize, stride: usize) -> ValueId {
    let h = g.conv2d(&format!("{name}.conv1"), x, in_ch, out_ch, 3, stride, 1);
    let h = g.relu(h);
    let h = g.conv2d(&format!("{name}.conv2"), h, out_ch, out_ch, 3, 1, 1);
    let skip = if stride != 1 || in_ch != out_ch {
        g.conv2d(&format!("{name}.proj"), x, in_ch, out_ch, 1, stride, 0)
    } else {
        x
    };
    let s = g.add(h, skip);
    g.relu(s)
}

fn classifier_graph(extent: usize, width: usize) -> GraphBuilder<f32> {
    let mut g = GraphBuilder::new();
    let x = g.input("x", &[CHANNELS, extent, extent]);
    let h = g.conv2d("stem", x, CHANNELS, width, 3, 2, 1);
    let h = g.relu(h);
    let h = residual(&mut g, "block1", h, width, width, 1);
    let h = residual(&mut g, "block2", h, width, 2 * width, 2);
    let h = residual(&mut g, "block3", h, 2 * width, 2 * width, 1);
    let h = g.global_avg_pool(h);
    let logits = g.dense("head", h, 2 * width, NUM_CLASSES);
    g.output("logits", logits);
    g
}

/// The classifier under explanation. Immutable once trained; evaluation borrows it shared.
#[derive(Debug, Clone)]
pub struct BlackBox {
    graph: Graph<f32>,
    config: ClassifierConfig,
    extent: usize,
}

impl BlackBox {
    /// Untrained model with seeded initial weights.
    pub fn new(extent: usize, config: ClassifierConfig, seed: u64) -> Result<BlackBox> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = classifier_graph(extent, config.width).build_init(ParamStore::new(), &mut rng)?;
        Ok(BlackBox { graph, config, extent })
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        self.graph.params()
    }

    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    /// Per-class sigmoid scores for one image.
    pub fn classify(&self, image: &Image) -> Result<Vec<f32>> {
        Ok(self.classify_batch(&[image])?.remove(0))
    }

    pub fn classify_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let logits = self.logits_batch(images)?;
        Ok(logits
            .into_iter()
            .map(|row| row.into_iter().map(sigmoid).collect())
            .collect())
    }

    pub fn predict(&self, images: &[&Image]) -> Result<Vec<usize>> {
        Ok(self.classify_batch(images)?.iter().map(|s| argmax(s)).collect())
    }

    pub fn logits_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let chunks = parallel::map_chunks(images.len(), EVAL_CHUNK, |r| -> Result<Vec<Vec<f32>>> {
            let x = Image::batch_to_tensor(&images[r])?;
            let out = self.graph.evaluate([("x", x)])?;
            Ok(out["logits"].data().chunks(NUM_CLASSES).map(|c| c.to_vec()).collect())
        });
        let mut rows = Vec::with_capacity(images.len());
        for c in chunks {
            rows.extend(c?);
        }
        Ok(rows)
    }

    pub fn balanced_accuracy_on(&self, items: &[&LabeledImage]) -> Result<f64> {
        let imgs: Vec<&Image> = items.iter().map(|it| &it.image).collect();
        let labels: Vec<usize> = items.iter().map(|it| it.label).collect();
        balanced_accuracy(&self.predict(&imgs)?, &labels)
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let meta = serde_json::json!({
            "extent": self.extent,
            "classes": CLASS_NAMES,
            "config": self.config,
        });
        save_checkpoint(w, CLASSIFIER_KIND, meta, self.graph.params(), &[])
    }

    pub fn load<R: Read>(r: R) -> Result<BlackBox> {
        let (meta, params, _) = load_checkpoint(r, CLASSIFIER_KIND)?;
        let extent = meta["extent"]
            .as_u64()
            .ok_or_else(|| LxlError::Format("classifier checkpoint lacks extent".into()))? as usize;
        let config: ClassifierConfig = serde_json::from_value(meta["config"].clone())?;
        let graph = classifier_graph(extent, config.width).build(params)?;
        Ok(BlackBox { graph, config, extent })
    }
}

/// Sum over classes of binary cross-entropy with logits, averaged over the batch; returns the
/// loss and its gradient with respect to the logits.
pub fn one_vs_rest_bce(logits: &Tensor<f32>, labels: &[usize]) -> (f64, Tensor<f32>) {
    let n = labels.len();
    let c = logits.len() / n.max(1);
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..c {
            let l = logits.data()[i * c + j] as f64;
            let y = if j == label { 1.0 } else { 0.0 };
            loss += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
            grad.data_mut()[i * c + j] = ((sigmoid(l) - y) / n as f64) as f32;
        }
    }
    (loss / n as f64, grad)
}

fn shard_gradients(graph: &Graph<f32>, x: &Tensor<f32>, labels: &[usize]) -> Result<(f64, std::collections::BTreeMap<String, Tensor<f32>>)> {
    let n = labels.len();
    let parts = parallel::map_chunks(n, SHARD, |r| -> Result<_> {
        let mut g = graph.clone();
        let out = g.forward([("x", x.slice_rows(r.start, r.end))])?;
        let (loss, mut dl) = one_vs_rest_bce(&out["logits"], &labels[r.clone()]);
        // Rescale from shard mean to batch mean.
        let scale = (r.len() as f32) / n as f32;
        dl.data_mut().iter_mut().for_each(|v| *v *= scale);
        let grads = g.backward(&dl)?;
        Ok((loss * r.len() as f64, grads.params))
    });
    let mut total = 0.0;
    let mut acc: Option<std::collections::BTreeMap<String, Tensor<f32>>> = None;
    for p in parts {
        let (l, gr) = p?;
        total += l;
        match acc.as_mut() {
            None => acc = Some(gr),
            Some(a) => {
                for (k, v) in gr {
                    a.get_mut(&k).expect("same parameter set").add_assign(&v);
                }
            }
        }
    }
    Ok((total / n as f64, acc.unwrap_or_default()))
}

/// Trains the black box. The validation split, when given, is scored every epoch.
pub fn train_classifier(
    train: &Dataset,
    validation: Option<&Dataset>,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(BlackBox, TrainReport)> {
    config.validate()?;
    let counts = train.class_counts();
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(LxlError::Config(format!("class {} is absent from the training split", CLASS_NAMES[missing])));
    }
    let h = train
        .extent()
        .ok_or_else(|| LxlError::Config("training images must share one square extent".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = BlackBox::new(h, config.clone(), rng.gen())?;
    let mut state = AdamState::new();
    let mut report = TrainReport::default();
    let val_items: Option<Vec<&LabeledImage>> = validation.map(|v| v.items().iter().collect());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let imgs: Vec<Image> = parallel::map_range(batch.len(), |i| {
                let img = &train.items()[batch[i]].image;
                if config.augment {
                    augment(img, &mut ChaCha8Rng::seed_from_u64(seeds[i]))
                } else {
                    img.clone()
                }
            });
            let refs: Vec<&Image> = imgs.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.items()[i].label).collect();
            let x = Image::batch_to_tensor(&refs)?;
            let (loss, grads) = shard_gradients(&model.graph, &x, &labels)?;
            adam_step(model.graph.params_mut(), &grads, &mut state, &config.adam)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let mut rec = EpochRecord::new(epoch);
        rec.classifier_loss = Some(loss_sum / seen as f64);
        if let Some(v) = &val_items {
            rec.balanced_accuracy = Some(model.balanced_accuracy_on(v)?);
        }
        log::info!("classifier epoch {epoch}: loss {:.4} bacc {:?}", rec.classifier_loss.unwrap_or(0.0), rec.balanced_accuracy);
        report.epochs.push(rec);
    }
    report.validate()?;
    Ok((model, report))
}
