//! CIFAR-10 ingestion, augmentation, SGD and the training loop.

mod augment;
mod cifar;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, augment_with, AUG_PAD};
pub use cifar::{
    load_cifar10, load_cifar10_subset, read_batch_file, write_batch_file, Dataset, Split,
    IMAGE_BYTES, NUM_CLASSES, RECORD_BYTES, TEST_FILE, TRAIN_FILES,
};

use crate::error::{Error, Result};
use crate::network::{save_checkpoint, Network};
use crate::ops::softmax_cross_entropy;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `epochs` at which the rate drops tenfold.
    pub lr_drop_points: Vec<f64>,
    pub seed: u64,
    /// `None` uses the whole split.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub augment: bool,
    /// Write wall-clock seconds to the history; off keeps runs bitwise repeatable.
    pub record_time: bool,
}

impl Default for TrainConfig {
    /// Desk-scale run: 4,000/1,000 images for 30 epochs.
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 100,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_drop_points: vec![0.5, 0.75],
            seed: 0,
            train_subset: Some(4000),
            test_subset: Some(1000),
            augment: true,
            record_time: false,
        }
    }
}

impl TrainConfig {
    /// Full protocol: all 50,000/10,000 images for 300 epochs.
    pub fn full() -> Self {
        Self {
            epochs: 300,
            train_subset: None,
            test_subset: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self
            .lr_drop_points
            .iter()
            .any(|d| !(0.0..=1.0).contains(d))
        {
            return Err(Error::Config("lr_drop_points must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: `lr0` divided by ten for every drop point at
/// or before it.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let drops = cfg
        .lr_drop_points
        .iter()
        .filter(|&&d| epoch as f64 >= d * cfg.epochs as f64)
        .count();
    cfg.lr0 * 0.1f64.powi(drops as i32)
}

/// Generator for parameter initialization, independent of the data stream.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Momentum SGD with L2 decay on conv and linear weights.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub velocity: Vec<Vec<f64>>,
}

impl Sgd {
    /// `v ← m·v + (g + wd·p)`, `p ← p − lr·v`. Non-finite gradients or
    /// updates abort with a divergence error carrying `(epoch, step)`.
    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &[Vec<f64>],
        lr: f64,
        cfg: &TrainConfig,
        at: (usize, usize),
    ) -> Result<()> {
        let params = net.params_mut();
        if params.len() != grads.len() {
            return Err(Error::shape(&[params.len()], &[grads.len()], "gradient list"));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let diverged = |detail: String| Error::Divergence {
            epoch: at.0,
            step: at.1,
            detail,
        };
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.values.len() != g.len() || v.len() != g.len() {
                return Err(Error::shape(&[p.values.len()], &[g.len()], p.name));
            }
            let wd = if p.decay { cfg.weight_decay } else { 0.0 };
            for ((w, &gi), vi) in p.values.iter_mut().zip(g).zip(v.iter_mut()) {
                if !gi.is_finite() {
                    return Err(diverged(format!("non-finite gradient in {}", p.name)));
                }
                *vi = cfg.momentum * *vi + (gi + wd * *w);
                *w -= lr * *vi;
                if !w.is_finite() {
                    return Err(diverged(format!("non-finite parameter in {}", p.name)));
                }
            }
        }
        Ok(())
    }
}

/// Stacks images `indices` of `data`, optionally augmenting each one.
pub fn make_batch(
    data: &Dataset,
    indices: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor4, Vec<usize>)> {
    let [_, c, h, w] = data.images.shape();
    let mut pixels = Vec::with_capacity(indices.len() * c * h * w);
    let mut labels = Vec::with_capacity(indices.len());
    match rng {
        Some(rng) => {
            for &i in indices {
                pixels.extend(augment(data.image(i), h, w, rng));
                labels.push(data.labels[i]);
            }
        }
        None => {
            for &i in indices {
                pixels.extend_from_slice(data.image(i));
                labels.push(data.labels[i]);
            }
        }
    }
    Ok((Tensor4::from_vec([indices.len(), c, h, w], pixels)?, labels))
}

/// Fraction of `data` classified correctly, BN in eval mode.
pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Statistics("cannot evaluate on an empty dataset".into()));
    }
    let mut scratch = net.clone();
    let order: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, labels) = make_batch(data, chunk, None)?;
        let logits = scratch.predict(&x)?;
        let k = logits.channels();
        for (row, &label) in logits.data().chunks_exact(k).zip(&labels) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            correct += usize::from(best == label);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const HEADER: &'static str = "epoch,train_loss,test_acc,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.epochs {
            s += &format!(
                "{},{:?},{:?},{:?},{:.3}\n",
                r.epoch, r.train_loss, r.test_acc, r.lr, r.seconds
            );
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Checkpoint written when the rate drops before `epoch`.
pub fn drop_checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch{epoch}.bin")
}
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.bin";
pub const HISTORY_FILE: &str = "history.csv";

/// Trains `net` in place. When `out_dir` is given, the history CSV is
/// rewritten after every epoch and checkpoints are saved at every rate drop
/// and at the end.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Statistics("empty training set".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let out = |name: &str| -> Option<PathBuf> { out_dir.map(|d| d.join(name)) };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        if epoch > 0 && lr < lr_at(epoch - 1, cfg) {
            if let Some(path) = out(&drop_checkpoint_name(epoch)) {
                save_checkpoint(net, &path)?;
            }
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = make_batch(train_set, chunk, cfg.augment.then_some(&mut rng))?;
            let (logits, trace) = net.forward(&x, true)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("loss is {loss}"),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = net.backward(&trace, &grad)?;
            sgd.step(net, &grads, lr, cfg, (epoch, step))?;
        }
        let test_acc = evaluate(net, test_set, cfg.batch_size)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test_acc,
            lr,
            seconds: if cfg.record_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        if let Some(path) = out(HISTORY_FILE) {
            fs::write(path, history.to_csv())?;
        }
    }
    if let Some(path) = out(FINAL_CHECKPOINT) {
        save_checkpoint(net, &path)?;
    }
    Ok(history)
}
