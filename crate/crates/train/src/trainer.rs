use std::path::{Path, PathBuf};

use hifreq_core::Rng;
use hifreq_unet::{load_checkpoint, masked_mse, save_checkpoint, Adam, UNet, UnetError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::patches::{extract_patches, stack_patches, Patch};
use crate::sample::{make_input, Sample};
use crate::TrainError;

const INIT_STREAM: u64 = 0x1417;
const EPOCH_STREAM: u64 = 0xE90C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the lowest validation loss, first on ties.
    pub best_epoch: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainRecord {
    pub fn best_val_loss(&self) -> Option<f64> {
        let e = self.best_epoch?;
        Some(self.epochs[e - 1].val_loss)
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn to_csv(&self) -> Result<String, TrainError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e).map_err(|e| TrainError::Csv(e.to_string()))?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "train_loss", "val_loss"])
                .map_err(|e| TrainError::Csv(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| TrainError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_csv()?).map_err(TrainError::io(path))
    }
}

/// He-initialized network of the configured width, seeded from `cfg.seed`.
pub fn init_model(cfg: &TrainConfig) -> UNet<f32> {
    UNet::new(cfg.width, &mut Rng::new(cfg.seed).fork(INIT_STREAM))
}

/// Inputs and patches for every sample, in sample order.
pub fn prepare_patches(samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<Patch>, TrainError> {
    let per: Vec<Result<Vec<Patch>, TrainError>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let input = make_input(s, cfg.shading_norm, cfg.residual_scale)?;
            extract_patches(&input, cfg.patch, i)
        })
        .collect();
    let mut out = Vec::new();
    for p in per {
        out.extend(p?);
    }
    Ok(out)
}

/// Masked MSE pooled over all pixels of `patches`.
pub fn validation_loss(model: &UNet<f32>, patches: &[Patch], batch: usize) -> Result<f64, TrainError> {
    if patches.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (mut sum, mut count) = (0.0f64, 0usize);
    for chunk in patches.chunks(batch.max(1)) {
        let refs: Vec<&Patch> = chunk.iter().collect();
        let b = stack_patches(&refs, None);
        let out = model.forward(&b.x)?;
        for ((&p, &y), &m) in out.data().iter().zip(b.y.data()).zip(b.mask.data()) {
            if m == 1.0 {
                sum += ((p - y) as f64).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(TrainError::EmptyDataset);
    }
    Ok(sum / count as f64)
}

/// Adam over shuffled mini-batches. Returns the weights of the epoch with
/// the lowest validation loss (the initial weights when `cfg.epochs == 0`),
/// saving them to `checkpoint` when given. An empty `val` set validates on
/// the training patches.
pub fn train(
    mut model: UNet<f32>,
    train_set: &[Patch],
    val_set: &[Patch],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(UNet<f32>, TrainRecord), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let val_set = if val_set.is_empty() { train_set } else { val_set };
    let mut opt = Adam::new(&model, cfg.adam());
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut record = TrainRecord {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        checkpoint: checkpoint.map(Path::to_path_buf),
    };
    let seeds = Rng::new(cfg.seed).fork(EPOCH_STREAM);
    let augment = cfg.lum_aug != [1.0, 1.0];

    for epoch in 1..=cfg.epochs {
        let mut rng = seeds.fork(epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng.shuffle(&mut order);
        let mut losses = Vec::new();
        for idx in order.chunks(cfg.batch) {
            let refs: Vec<&Patch> = idx.iter().map(|&i| &train_set[i]).collect();
            let scales: Vec<f32> = idx
                .iter()
                .map(|_| {
                    if augment {
                        rng.uniform(cfg.lum_aug[0], cfg.lum_aug[1]) as f32
                    } else {
                        1.0
                    }
                })
                .collect();
            let b = stack_patches(&refs, Some(&scales));
            let (out, trace) = model.forward_train(&b.x)?;
            let loss = match masked_mse(&out, &b.y, &b.mask) {
                Ok(l) => l,
                Err(UnetError::EmptyMask) => continue,
                Err(e) => return Err(e.into()),
            };
            let grads = model.backward(&trace, &loss.grad)?;
            opt.step(&mut model, &grads);
            losses.push(loss.value);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let val_loss = validation_loss(&model, val_set, cfg.batch)?;
        log::info!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        record.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best = model.clone();
            record.best_epoch = Some(epoch);
        }
    }
    if let Some(path) = checkpoint {
        save_checkpoint(path, &best)?;
    }
    Ok((best, record))
}

/// Continues training from a saved model; every layer is updated.
pub fn finetune(
    from: &Path,
    train_set: &[Patch],
    val_set: &[Patch],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(UNet<f32>, TrainRecord), TrainError> {
    let model: UNet<f32> = load_checkpoint(from)?;
    if model.width != cfg.width {
        return Err(UnetError::ArchMismatch(format!(
            "checkpoint width {}, configured width {}",
            model.width, cfg.width
        ))
        .into());
    }
    train(model, train_set, val_set, cfg, checkpoint)
}
