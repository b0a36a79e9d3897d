//! Per-plane training with cosine warm restarts and best-checkpoint selection.

use std::io::Write;
use std::path::{Path, PathBuf};

use latentseg::labels::LabelTable;
use latentseg::metrics::dsc;
use latentseg::network::{checkpoint, Network};
use latentseg::phantom::Split;
use latentseg::rng::derive_seed;
use latentseg::volume::Plane;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{
    collate, epoch_batches, load_split, plane_table, prepare_sample, slice_refs, Subject,
};
use crate::error::{HarnessError, Result};
use crate::infer::plane_probabilities;
use crate::optim::AdamW;
use crate::schedule::learning_rate;

pub const TRAIN_METRICS_HEADER: &str = "# latentseg-train-metrics v1";

/// One row of the per-epoch metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub logistic: f64,
    pub dice: f64,
    pub val_dsc: f64,
}

#[derive(Debug, Clone)]
pub struct PlaneRun {
    pub plane: Plane,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub history: Vec<EpochRecord>,
}

pub fn checkpoint_path(dir: &Path, plane: Plane) -> PathBuf {
    dir.join(format!("{}.ckpt", plane.name()))
}

pub fn metrics_path(dir: &Path, plane: Plane) -> PathBuf {
    dir.join(format!("{}_metrics.tsv", plane.name()))
}

/// Mean DSC over the foreground structures of the plane's label scheme.
pub fn validation_dsc(
    net: &Network<f32>,
    subjects: &[Subject],
    table: &LabelTable,
    context: usize,
) -> Result<f64> {
    let plane = net.config.plane;
    let ptable = plane_table(table, plane);
    let scores = subjects
        .par_iter()
        .map(|s| {
            let pred = plane_probabilities(net, &s.image, context)?.argmax();
            let mut reference = s.labels.clone();
            if plane == Plane::Sagittal {
                for l in reference.data.iter_mut() {
                    *l = table.sagittal(*l)?;
                }
            }
            let mut total = 0.0;
            for id in 1..ptable.len() as u16 {
                total += dsc(&pred, &reference, id)?;
            }
            Ok(total / (ptable.len() - 1) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn write_metrics(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{TRAIN_METRICS_HEADER}")?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(f);
    w.write_record(["epoch", "lr", "loss", "logistic", "dice", "val_dsc"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.loss.to_string(),
            r.logistic.to_string(),
            r.dice.to_string(),
            r.val_dsc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains the network of one plane and writes its best checkpoint and
/// metrics file into `out`.
pub fn train_plane(
    cfg: &RunConfig,
    plane: Plane,
    train: &[Subject],
    val: &[Subject],
    table: &LabelTable,
    out: &Path,
) -> Result<PlaneRun> {
    let ptable = plane_table(table, plane);
    let net_cfg = cfg.network_config(plane, ptable.len());
    let mut net = Network::<f32>::new(net_cfg, derive_seed(cfg.seed, &[0x11e7, plane as u64]))?;
    let mut opt = AdamW::new(cfg.optimizer.clone(), &net);
    let refs = slice_refs(train, plane, cfg.training.drop_empty);
    if refs.is_empty() {
        return Err(HarnessError::Data(format!("no {plane} training slices")));
    }
    // Per-plane stream so planes trained in separate processes agree.
    let plane_seed = derive_seed(cfg.seed, &[plane as u64]);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Network<f32>)> = None;
    for epoch in 0..cfg.training.epochs {
        let lr = learning_rate(cfg.optimizer.lr, &cfg.schedule, epoch);
        let (mut loss, mut logistic, mut dice, mut count) = (0.0, 0.0, 0.0, 0usize);
        for batch in epoch_batches(
            &refs,
            train,
            plane,
            cfg.training.batch_size,
            plane_seed,
            epoch as u64,
        ) {
            let samples = batch
                .par_iter()
                .map(|&i| {
                    let r = refs[i];
                    prepare_sample(
                        cfg,
                        plane_seed,
                        &train[r.subject],
                        plane,
                        r,
                        table,
                        epoch as u64,
                        i as u64,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let (x, labels, weights, augs) = collate(&samples)?;
            let lv = net
                .loss_and_gradients(&x, &labels, &weights, &augs)
                .map_err(|e| HarnessError::NonFinite(format!("{plane} epoch {epoch}: {e}")))?;
            if net
                .params()
                .iter()
                .any(|p| p.grad.iter().any(|g| !g.is_finite()))
            {
                return Err(HarnessError::NonFinite(format!(
                    "{plane} epoch {epoch}: non-finite gradient"
                )));
            }
            opt.step(&mut net, lr);
            let n = samples.len();
            loss += lv.total * n as f64;
            logistic += lv.logistic_term * n as f64;
            dice += lv.dice_term * n as f64;
            count += n;
        }
        let val_dsc = validation_dsc(&net, val, table, cfg.network.context)?;
        let c = count as f64;
        history.push(EpochRecord {
            epoch,
            lr,
            loss: loss / c,
            logistic: logistic / c,
            dice: dice / c,
            val_dsc,
        });
        if best.as_ref().is_none_or(|b| val_dsc > b.1) {
            best = Some((epoch, val_dsc, net.clone()));
        }
    }
    let (best_epoch, best_val_dsc, best_net) = best.expect("at least one epoch");
    std::fs::create_dir_all(out)?;
    let ckpt = checkpoint_path(out, plane);
    checkpoint::save(&best_net, &ckpt)?;
    let metrics = metrics_path(out, plane);
    write_metrics(&metrics, &history)?;
    Ok(PlaneRun {
        plane,
        checkpoint: ckpt,
        metrics,
        best_epoch,
        best_val_dsc,
        history,
    })
}

/// Trains every configured plane on the manifest's train split.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<PlaneRun>> {
    cfg.validate()?;
    if !cfg.manifest.exists() {
        return Err(HarnessError::Data(format!(
            "manifest {} does not exist",
            cfg.manifest.display()
        )));
    }
    let train = load_split(&cfg.manifest, Split::Train)?;
    let val = load_split(&cfg.manifest, Split::Val)?;
    let table = LabelTable::phantom_default();
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    cfg.planes
        .iter()
        .map(|&p| train_plane(cfg, p, &train, &val, &table, out))
        .collect()
}
