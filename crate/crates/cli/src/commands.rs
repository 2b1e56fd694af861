use std::fs;
use std::path::{Path, PathBuf};

use hifreq_core::eval::{error_map, error_map_rgb};
use hifreq_core::io::{write_pfm, Image8};
use hifreq_train::dataset::{depth_to_image, generate_dataset, generate_sample, Dataset, Split};
use hifreq_train::report::{compare, write_report, Predictor};
use hifreq_train::{finetune, infer, init_model, prepare_patches, train, Sample, TrainConfig, TrainRecord};
use hifreq_unet::{load_checkpoint, UNet};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::plot::loss_curve;
use crate::{Cli, CliError, Command, Common};

pub const CONFIG_NAME: &str = "config.toml";
pub const MODEL_NAME: &str = "model.unw";
pub const RECORD_NAME: &str = "train_record.csv";
pub const LOSS_PLOT_NAME: &str = "loss.png";
pub const REPORT_NAME: &str = "report.csv";
pub const SUMMARY_NAME: &str = "summary.csv";
const MAX_SKIPPED: f64 = 0.01;

fn resolve(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(common.preset.unwrap_or_default()),
    };
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, sub: &str) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.out_dir.join(sub));
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    Ok(dir)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = resolve(&cli.common)?;
    match &cli.command {
        Command::Train { epochs: Some(n), .. } => cfg.train.epochs = *n,
        Command::Finetune { epochs: Some(n), .. } => cfg.finetune.epochs = *n,
        _ => {}
    }
    cfg.validate()?;
    let common = &cli.common;
    match &cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Gen { count } => cmd_gen(&cfg, &out_dir(common, &cfg, "data")?, count.unwrap_or(cfg.dataset.count)),
        Command::Train { data, .. } => cmd_train(&cfg, data, None, &out_dir(common, &cfg, "train")?),
        Command::Finetune { data, checkpoint, .. } => {
            cmd_train(&cfg, data, Some(checkpoint), &out_dir(common, &cfg, "finetune")?)
        }
        Command::Infer { data, checkpoint, split } => {
            cmd_infer(&cfg, data, checkpoint, split.split(), &out_dir(common, &cfg, "infer")?)
        }
        Command::Eval { data, checkpoint, oracle, split } => {
            cmd_eval(&cfg, data, checkpoint, *oracle, split.split(), &out_dir(common, &cfg, "eval")?)
        }
        Command::RenderPreview { index } => cmd_preview(&cfg, *index, &out_dir(common, &cfg, "preview")?),
    }
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path, count: usize) -> Result<(), CliError> {
    let summary = generate_dataset(out, &cfg.gen_config(), count, cfg.seed, cfg.train.val_fraction)?;
    cfg.save(&out.join(CONFIG_NAME))?;
    let val = summary.entries.iter().filter(|e| e.split == Split::Val).count();
    log::info!(
        "{} scenes ({} train, {val} val), {} skipped",
        summary.entries.len(),
        summary.entries.len() - val,
        summary.skipped.len()
    );
    if summary.skipped_fraction() > MAX_SKIPPED {
        return Err(CliError::Data(format!(
            "{} of {count} scenes failed, first: {} ({})",
            summary.skipped.len(),
            summary.skipped[0].0,
            summary.skipped[0].1
        )));
    }
    Ok(())
}

/// Trains from scratch, or fine-tunes when `from` is given.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, from: Option<&PathBuf>, out: &Path) -> Result<(), CliError> {
    let tcfg: &TrainConfig = if from.is_some() { &cfg.finetune } else { &cfg.train };
    let ds = Dataset::open(data)?;
    let train_patches = prepare_patches(&ds.load(Some(Split::Train))?, tcfg)?;
    let val_patches = prepare_patches(&ds.load(Some(Split::Val))?, tcfg)?;
    log::info!("{} training and {} validation patches", train_patches.len(), val_patches.len());
    let ckpt = out.join(MODEL_NAME);
    let (_, record) = match from {
        Some(p) => finetune(p, &train_patches, &val_patches, tcfg, Some(&ckpt))?,
        None => train(init_model(tcfg), &train_patches, &val_patches, tcfg, Some(&ckpt))?,
    };
    write_record(&record, out)?;
    cfg.save(&out.join(CONFIG_NAME))
}

fn write_record(record: &TrainRecord, out: &Path) -> Result<(), CliError> {
    record.write_csv(&out.join(RECORD_NAME))?;
    loss_curve(record, 640, 360).save(&out.join(LOSS_PLOT_NAME))?;
    if let (Some(e), Some(v)) = (record.best_epoch, record.best_val_loss()) {
        log::info!("best epoch {e}, validation loss {v:.6e}");
    }
    Ok(())
}

pub fn cmd_infer(
    cfg: &ExperimentConfig,
    data: &Path,
    checkpoint: &Path,
    split: Option<Split>,
    out: &Path,
) -> Result<(), CliError> {
    let model: UNet<f32> = load_checkpoint(checkpoint)?;
    let samples = Dataset::open(data)?.load(split)?;
    samples.par_iter().try_for_each(|s| -> Result<(), CliError> {
        let pred = infer(&model, s, &cfg.train)?;
        write_pfm(&out.join(format!("{}_depth.pfm", s.scene_id)), &depth_to_image(&pred))?;
        save_error_map(cfg, &pred, s, &out.join(format!("{}_error.png", s.scene_id)))
    })?;
    log::info!("wrote {} depth maps to {}", samples.len(), out.display());
    Ok(())
}

fn save_error_map(cfg: &ExperimentConfig, pred: &hifreq_core::DepthMap, s: &Sample, path: &Path) -> Result<(), CliError> {
    let err = error_map(pred, &s.gt).map_err(hifreq_train::TrainError::from)?;
    let img = Image8 {
        width: err.width(),
        height: err.height(),
        channels: 3,
        data: error_map_rgb(&err, cfg.eval.error_max_mm),
    };
    Ok(img.save(path)?)
}

/// Splits `name=path`; a bare path is named after its parent directory.
pub fn parse_model_arg(arg: &str) -> (String, PathBuf) {
    if let Some((name, path)) = arg.split_once('=') {
        if !name.is_empty() {
            return (name.to_string(), PathBuf::from(path));
        }
    }
    let path = PathBuf::from(arg);
    let name = path
        .parent()
        .and_then(Path::file_name)
        .or_else(|| path.file_stem())
        .map_or_else(|| "model".to_string(), |n| n.to_string_lossy().into_owned());
    (name, path)
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    data: &Path,
    checkpoints: &[String],
    oracle: bool,
    split: Option<Split>,
    out: &Path,
) -> Result<(), CliError> {
    let mut models = Vec::new();
    for arg in checkpoints {
        let (name, path) = parse_model_arg(arg);
        if models.iter().any(|(n, _): &(String, UNet<f32>)| *n == name) {
            return Err(CliError::Usage(format!("model name {name:?} given twice")));
        }
        models.push((name, load_checkpoint::<f32>(&path)?));
    }
    let mut preds: Vec<(&str, Predictor)> = models
        .iter()
        .map(|(n, m)| (n.as_str(), Predictor::Model(m, &cfg.train)))
        .collect();
    if oracle {
        preds.push((hifreq_train::report::ORACLE_NAME, Predictor::Oracle));
    }
    let samples = Dataset::open(data)?.load(split)?;
    let report = compare(&preds, &samples, cfg.eval.patch)?;
    write_report(&report, &out.join(REPORT_NAME), &out.join(SUMMARY_NAME))?;
    for name in report.model_names() {
        if let Some(a) = report.aggregate(&name) {
            println!("{name}: rmse_norm {:.6} rmse_raw {:.6} mm over {} scenes", a.rmse_norm, a.rmse_raw, a.count);
        }
    }
    Ok(())
}

pub fn cmd_preview(cfg: &ExperimentConfig, index: usize, out: &Path) -> Result<(), CliError> {
    let s = generate_sample(&cfg.gen_config(), cfg.seed, index)?;
    let mask = s.gt.mask();
    let mut residual = s.gt.depth().clone();
    for (r, &l) in residual.data_mut().iter_mut().zip(s.lowfreq.depth().data()) {
        *r -= l;
    }
    let images = [
        ("shading", Image8::gray_from(&s.shading, 0.0, 1.0)),
        ("pattern", Image8::gray_from(&s.pattern, 0.0, 1.0)),
        ("gt", Image8::gray_auto(s.gt.depth(), Some(mask))),
        ("lowfreq", Image8::gray_auto(s.lowfreq.depth(), Some(s.lowfreq.mask()))),
        ("residual", Image8::gray_auto(&residual, Some(mask))),
    ];
    for (name, img) in images {
        img.save(&out.join(format!("{}_{name}.png", s.scene_id)))?;
    }
    save_error_map(cfg, &s.lowfreq, &s, &out.join(format!("{}_lowfreq_error.png", s.scene_id)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_args() {
        assert_eq!(parse_model_arg("a=x/y.unw"), ("a".into(), PathBuf::from("x/y.unw")));
        assert_eq!(parse_model_arg("runs/train/model.unw"), ("train".into(), PathBuf::from("runs/train/model.unw")));
        assert_eq!(parse_model_arg("model.unw").0, "model");
        assert_eq!(parse_model_arg("=m.unw").1, PathBuf::from("=m.unw"));
    }
}
