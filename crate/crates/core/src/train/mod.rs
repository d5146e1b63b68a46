//! Maximum-likelihood training of the image models.

pub mod checkpoint;
pub mod config;
pub mod optim;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use config::{Preset, TrainConfig};
pub use optim::Adam;

use crate::data::Dataset;
use crate::dist::{bits_per_dims, dequantize_per_sample};
use crate::error::{Error, Result};
use crate::model::FlowModel;
use crate::rng::{derive_seed, permutation, rng_for};

const EVAL_STREAM: u64 = 0xe7a1;
const SPLIT_STREAM: u64 = 0x5917;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub scope: String,
    pub epoch: usize,
    pub split: String,
    pub mean_bpd: f64,
    pub mean_nll: f64,
}

/// Everything besides the parameters needed to continue a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub adam: Adam,
    pub step: u64,
    pub epochs_done: BTreeMap<String, usize>,
    pub history: Vec<HistoryRow>,
}

impl TrainState {
    pub fn new() -> Self {
        TrainState::default()
    }

    pub fn epochs_done(&self, level: Option<usize>) -> usize {
        self.epochs_done.get(&scope_name(level)).copied().unwrap_or(0)
    }
}

/// `"all"` for the whole model, `"level<i>"` for one wavelet level.
pub fn scope_name(level: Option<usize>) -> String {
    match level {
        None => "all".to_string(),
        Some(l) => format!("level{l}"),
    }
}

fn scope_stream(level: Option<usize>) -> u64 {
    level.map_or(0, |l| l as u64 + 1)
}

/// Seed of the per-image dequantization noise used for evaluation.
pub fn eval_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[EVAL_STREAM, index as u64])
}

/// Seeded `(train, held_out)` split used by [`train`].
pub fn split_indices(data: &Dataset, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    data.holdout_split(cfg.holdout_fraction, derive_seed(cfg.seed, &[SPLIT_STREAM]))
}

/// Mean BPD and mean NLL (nats per image) of a scope over `indices`, with
/// deterministic per-image dequantization.
pub fn evaluate(
    model: &dyn FlowModel,
    data: &Dataset,
    indices: &[usize],
    seed: u64,
    level: Option<usize>,
    chunk: usize,
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let chunks: Vec<&[usize]> = indices.chunks(chunk.max(1)).collect();
    let run = |idx: &&[usize]| -> Result<(Vec<f64>, usize)> {
        let seeds: Vec<u64> = idx.iter().map(|&i| eval_seed(seed, i)).collect();
        let (x, _) = dequantize_per_sample(&data.batch(idx), &seeds)?;
        let (ll, dims) = model.scope_log_likelihood(&x, level)?;
        Ok((ll.to_vec(), dims))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<(Vec<f64>, usize)>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<(Vec<f64>, usize)>> = chunks.iter().map(run).collect();

    let mut total = 0.0;
    let mut dims = 1;
    for part in parts {
        let (ll, d) = part?;
        dims = d;
        total += ll.iter().sum::<f64>();
    }
    let mean_ll = total / indices.len() as f64;
    Ok((bits_per_dims(mean_ll, dims), -mean_ll))
}

/// Trains the whole model (`level = None`) or one wavelet level until the
/// scope has completed `cfg.epochs` epochs, resuming from `state`.
///
/// Each epoch visits the training split in a seed-determined order, then
/// records mean BPD on the training and held-out splits. `on_epoch` runs
/// after every epoch with the updated state.
pub fn train(
    model: &mut dyn FlowModel,
    state: &mut TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    level: Option<usize>,
    on_epoch: &mut dyn FnMut(&dyn FlowModel, &TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if data.shape() != model.image_shape() {
        return Err(Error::InvalidShape(format!(
            "dataset images are {:?}, model expects {:?}",
            data.shape(),
            model.image_shape()
        )));
    }
    let scope = scope_name(level);
    let stream = scope_stream(level);
    let prefix = model.scope_prefix(level)?;
    let select = |name: &str| prefix.as_deref().is_none_or(|p| name.starts_with(p));
    let (train_idx, held_idx) = split_indices(data, cfg);

    let start = state.epochs_done(level);
    for epoch in start..cfg.epochs {
        let mut rng = rng_for(cfg.seed, &[stream, epoch as u64]);
        let order: Vec<usize> = permutation(&mut rng, train_idx.len())
            .into_iter()
            .map(|i| train_idx[i])
            .collect();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let seed = derive_seed(cfg.seed, &[stream, epoch as u64, b as u64]);
            let (x, _) = crate::dist::dequantize(&data.batch(idx), seed)?;
            if epoch == 0 && b == 0 {
                model.initialize_scope(&x, level)?;
            }
            let loss = model.scope_loss(&x, level)?;
            if !loss.item().is_finite() {
                let layer = model.first_non_finite(&x).unwrap_or_else(|| "loss".into());
                return Err(Error::NonFinite { layer });
            }
            loss.backward()?;
            let norm = Adam::grad_norm(model, &select);
            if !norm.is_finite() {
                return Err(Error::NonFinite { layer: "gradient".into() });
            }
            let scale = if norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };
            state
                .adam
                .step(model, &select, cfg.learning_rate, cfg.weight_decay, scale);
            state.step += 1;
        }

        let chunk = cfg.batch_size.max(16);
        let mut record = |split: &str, idx: &[usize]| -> Result<()> {
            let (mean_bpd, mean_nll) = evaluate(model, data, idx, cfg.seed, level, chunk)?;
            state.history.push(HistoryRow {
                scope: scope.clone(),
                epoch: epoch + 1,
                split: split.to_string(),
                mean_bpd,
                mean_nll,
            });
            Ok(())
        };
        record("train", &train_idx)?;
        if !held_idx.is_empty() {
            record("heldout", &held_idx)?;
        }
        state.epochs_done.insert(scope.clone(), epoch + 1);
        on_epoch(model, state)?;
    }
    Ok(())
}

/// Writes `epoch,split,mean_bpd,mean_nll` rows.
pub fn write_history_csv<'a>(path: &Path, rows: impl IntoIterator<Item = &'a HistoryRow>) -> Result<()> {
    let mut out = String::from("epoch,split,mean_bpd,mean_nll\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.9},{:.9}\n", r.epoch, r.split, r.mean_bpd, r.mean_nll));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{texture_dataset, Texture};
    use crate::model::ModelKind;
    use crate::module::checksum;

    fn tiny(model: ModelKind) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.model = model;
        cfg.image_size = 4;
        cfg.channels = 1;
        cfg.levels = 2;
        cfg.flows_per_level = 1;
        cfg.base_flows = 1;
        cfg.hidden_channels = 4;
        cfg.batch_size = 4;
        cfg.epochs = 2;
        cfg.learning_rate = 1e-3;
        cfg
    }

    #[test]
    fn runs_and_records_history() {
        let cfg = tiny(ModelKind::Glow);
        let data = texture_dataset(Texture::Smooth, 10, 4, 1, 3);
        let mut model = cfg.build_model().unwrap();
        let mut state = TrainState::new();
        let mut calls = 0;
        train(model.as_mut(), &mut state, &data, &cfg, None, &mut |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 2);
        assert_eq!(state.history.len(), 4);
        assert_eq!(state.epochs_done(None), 2);
        assert!(state.history.iter().all(|r| r.mean_bpd.is_finite()));
    }

    #[test]
    fn level_training_leaves_other_levels() {
        let cfg = tiny(ModelKind::WaveletFlow);
        let data = texture_dataset(Texture::Smooth, 8, 4, 1, 5);
        let mut model = cfg.build_model().unwrap();
        let other = crate::module::checksum_prefix(model.as_ref(), "level0.");
        let before = checksum(model.as_ref());
        let mut state = TrainState::new();
        train(model.as_mut(), &mut state, &data, &cfg, Some(1), &mut |_, _| Ok(())).unwrap();
        assert_ne!(checksum(model.as_ref()), before);
        assert_eq!(crate::module::checksum_prefix(model.as_ref(), "level0."), other);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = tiny(ModelKind::Glow);
        let data = texture_dataset(Texture::Smooth, 4, 8, 1, 5);
        let mut model = cfg.build_model().unwrap();
        let err = train(model.as_mut(), &mut TrainState::new(), &data, &cfg, None, &mut |_, _| Ok(()));
        assert!(err.is_err());
    }
}
