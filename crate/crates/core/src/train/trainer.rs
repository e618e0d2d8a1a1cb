use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{adamw_step, head_cross_entropy, AdamConfig, OptimizerState, Precision, TrainConfig};
use crate::data::{DatasetManifest, Split, VolumeSample, WeightedSampler};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::model::{checkpoint, forward_graph, predict_input, ModelConfig, ModelInput, ParameterSet};
use crate::tensor::{Element, Graph, Tensor};

pub const METRICS_HEADER: &str = "epoch\ttrain_loss\tval_auc";

/// Offset between the initialization seed and the sampler seed.
const SAMPLER_SEED_OFFSET: u64 = 0x5A3B_1F0D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.epoch, self.train_loss, self.val_auc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation AUC (the initial ones if no
    /// epoch ran).
    pub best: ParameterSet<f64>,
    /// 0 for the initial parameters.
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
    pub last: ParameterSet<f64>,
    pub history: Vec<EpochMetrics>,
    pub checkpoint: Option<PathBuf>,
}

fn build_pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

fn to_inputs<T: Element>(samples: &[VolumeSample], model: &ModelConfig) -> Result<Vec<ModelInput<T>>> {
    samples.iter().map(|s| ModelInput::from_sample(s, model)).collect()
}

/// Positive-class probability (mean of heads) for every input, in order.
pub fn predict_all<T: Element>(
    params: &ParameterSet<T>,
    model: &ModelConfig,
    inputs: &[ModelInput<T>],
    threads: usize,
) -> Result<Vec<f64>> {
    let one = |x: &ModelInput<T>| predict_input(params, model, x).map(|p| p.prob);
    match build_pool(threads)? {
        Some(pool) => pool.install(|| inputs.par_iter().map(one).collect()),
        None => inputs.iter().map(one).collect(),
    }
}

/// Forward, loss and scaled gradients for one sample. Returns the unscaled
/// loss and the gradient of `scale · loss` per parameter slot.
fn sample_gradient<T: Element>(
    params: &ParameterSet<T>,
    model: &ModelConfig,
    input: &ModelInput<T>,
    label: u8,
    scale: T,
) -> Result<(f64, BTreeMap<usize, Tensor<T>>)> {
    let mut g = Graph::new();
    let heads = forward_graph(&mut g, params, model, input)?;
    let loss = head_cross_entropy(&mut g, &heads, label)?;
    let mut grads = BTreeMap::new();
    g.backward_with(loss, scale, &mut |slot, t| {
        grads.insert(slot, t);
    })?;
    Ok((g.item(loss).to_f64_lossy(), grads))
}

/// Step-level training state over an in-memory training set.
pub struct Trainer<T: Element> {
    model: ModelConfig,
    adam: AdamConfig,
    batch_size: usize,
    params: ParameterSet<T>,
    state: OptimizerState<T>,
    inputs: Vec<ModelInput<T>>,
    labels: Vec<u8>,
    sampler: WeightedSampler,
    pool: Option<rayon::ThreadPool>,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: &ModelConfig, cfg: &TrainConfig, train: &[VolumeSample]) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
        let sampler = WeightedSampler::new(&labels, cfg.seed.wrapping_add(SAMPLER_SEED_OFFSET))?;
        let inputs = to_inputs(train, model)?;
        let params = ParameterSet::<T>::init(model, cfg.seed)?;
        Ok(Trainer {
            model: model.clone(),
            adam: cfg.adam(),
            batch_size: cfg.batch_size,
            state: OptimizerState::new(&params),
            params,
            inputs,
            labels,
            sampler,
            pool: build_pool(cfg.threads)?,
        })
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    /// Draws one batch from the weighted sampler and takes an optimizer
    /// step. Returns the batch's mean loss before the update.
    pub fn step(&mut self) -> Result<f64> {
        let batch: Vec<usize> = self.sampler.by_ref().take(self.batch_size).collect();
        self.step_on(&batch)
    }

    /// One optimizer step on the given training indices.
    pub fn step_on(&mut self, batch: &[usize]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= self.inputs.len()) {
            return Err(Error::invalid(format!("sample index {i} out of range")));
        }
        let scale = T::of(1.0 / batch.len() as f64);
        let (params, model, inputs, labels) = (&self.params, &self.model, &self.inputs, &self.labels);
        let one = |&i: &usize| sample_gradient(params, model, &inputs[i], labels[i], scale);

        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        let mut add = |(l, g): (f64, BTreeMap<usize, Tensor<T>>)| {
            loss += l;
            for (slot, t) in g {
                let acc = &mut grads.tensors_mut()[slot];
                acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, &b)| *a = *a + b);
            }
        };
        // gradients are summed in batch order whatever the thread count
        match &self.pool {
            Some(pool) => {
                let per_sample: Vec<_> = pool.install(|| batch.par_iter().map(one).collect::<Result<_>>())?;
                per_sample.into_iter().for_each(&mut add);
            }
            None => {
                for i in batch {
                    add(one(i)?);
                }
            }
        }
        adamw_step(&mut self.params, &grads, &mut self.state, &self.adam)?;
        if !self.params.all_finite() {
            return Err(Error::NonFinite("parameter update"));
        }
        Ok(loss / batch.len() as f64)
    }

    /// Mean loss over every training sample with the current parameters.
    pub fn training_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (input, &label) in self.inputs.iter().zip(&self.labels) {
            let mut g = Graph::new();
            let heads = forward_graph(&mut g, &self.params, &self.model, input)?;
            let loss = head_cross_entropy(&mut g, &heads, label)?;
            total += g.item(loss).to_f64_lossy();
        }
        Ok(total / self.inputs.len() as f64)
    }

    pub fn predict(&self, inputs: &[ModelInput<T>]) -> Result<Vec<f64>> {
        let one = |x: &ModelInput<T>| predict_input(&self.params, &self.model, x).map(|p| p.prob);
        match &self.pool {
            Some(pool) => pool.install(|| inputs.par_iter().map(one).collect()),
            None => inputs.iter().map(one).collect(),
        }
    }
}

/// Files written by a training run in `out_dir`.
struct RunFiles {
    checkpoint: PathBuf,
    metrics: std::fs::File,
    metrics_path: PathBuf,
}

impl RunFiles {
    fn create(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let metrics_path = out_dir.join("metrics.tsv");
        let mut metrics = std::fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
        Ok(RunFiles {
            checkpoint: out_dir.join("checkpoint.mpvt"),
            metrics,
            metrics_path,
        })
    }

    fn log(&mut self, m: &EpochMetrics) -> Result<()> {
        writeln!(self.metrics, "{m}")
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(&self.metrics_path, e))
    }
}

/// Trains on in-memory splits. With `out_dir`, writes `checkpoint.mpvt`
/// (plus its `.cfg`) whenever validation AUC strictly improves, and one
/// `metrics.tsv` line per epoch.
pub fn fit(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train: &[VolumeSample],
    val: &[VolumeSample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    match cfg.precision {
        Precision::F32 => fit_typed::<f32>(model, cfg, train, val, out_dir),
        Precision::F64 => fit_typed::<f64>(model, cfg, train, val, out_dir),
    }
}

fn fit_typed<T: Element>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train: &[VolumeSample],
    val: &[VolumeSample],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let val_labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    if !(val_labels.contains(&0) && val_labels.contains(&1)) {
        return Err(Error::Dataset("validation split needs both classes".into()));
    }
    let mut trainer = Trainer::<T>::new(model, cfg, train)?;
    let val_inputs = to_inputs::<T>(val, model)?;
    let mut files = out_dir.map(RunFiles::create).transpose()?;

    let mut best = trainer.params().cast::<f64>();
    let mut best_epoch = 0;
    let mut best_val_auc: Option<f64> = None;
    if let Some(f) = &files {
        checkpoint::save_with_config(&best, model, &f.checkpoint)?;
    }

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut loss = 0.0;
        for _ in 0..steps_per_epoch {
            loss += trainer.step()?;
        }
        let scores = trainer.predict(&val_inputs)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss / steps_per_epoch as f64,
            val_auc: auc(&scores, &val_labels)?,
        };
        log::info!("epoch {epoch}: train_loss={:.5} val_auc={:.4}", m.train_loss, m.val_auc);
        if best_val_auc.is_none_or(|b| m.val_auc > b) {
            best = trainer.params().cast::<f64>();
            best_epoch = epoch;
            best_val_auc = Some(m.val_auc);
            if let Some(f) = &files {
                checkpoint::save_with_config(&best, model, &f.checkpoint)?;
            }
        }
        if let Some(f) = files.as_mut() {
            f.log(&m)?;
        }
        history.push(m);
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_auc,
        last: trainer.params().cast::<f64>(),
        history,
        checkpoint: files.map(|f| f.checkpoint),
    })
}

/// Loads the train and val splits from `manifest` and runs [`fit`] with the
/// configuration's model, writing outputs under `out_dir`.
pub fn train(manifest: &DatasetManifest, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = cfg.model_config();
    model.validate()?;
    manifest.check_files()?;
    let train = manifest.load_split(Split::Train, model.sagittal_grid)?;
    let val = manifest.load_split(Split::Val, model.sagittal_grid)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset("manifest needs non-empty train and val splits".into()));
    }
    fit(&model, cfg, &train, &val, Some(out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_samples, SynthSpec};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            axial_grid: [8, 8, 4],
            sagittal_grid: [8, 4, 8],
            patch: 4,
            embed_dim: 8,
            num_heads: 2,
            fusion_heads: 2,
            depth: 1,
            ..ModelConfig::desk_tiny()
        }
    }

    fn tiny_data() -> (Vec<VolumeSample>, Vec<VolumeSample>) {
        let spec = SynthSpec {
            train: 8,
            val: 4,
            test: 2,
            negatives_per_positive: 1.0,
            source_size: 16,
            semi_axis_min: 1.5,
            semi_axis_max: 3.0,
            axial_grid: [8, 8, 4],
            sagittal_grid: [8, 4, 8],
            ..SynthSpec::default()
        };
        let all = generate_samples(2, &spec).unwrap();
        let pick = |s: Split| all.iter().filter(|(x, _)| *x == s).map(|(_, v)| v.clone()).collect();
        (pick(Split::Train), pick(Split::Val))
    }

    #[test]
    fn zero_epochs_save_initial_checkpoint() {
        let (train, val) = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = fit(&tiny_model(), &cfg, &train, &val, Some(dir.path())).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, 0);
        let log = std::fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
        assert_eq!(log, format!("{METRICS_HEADER}\n"));
        let (cfg_back, params) = checkpoint::load_with_config(&out.checkpoint.unwrap()).unwrap();
        assert_eq!(cfg_back, tiny_model());
        assert_eq!(params, ParameterSet::<f32>::init(&tiny_model(), 0).unwrap().cast());
    }

    #[test]
    fn best_checkpoint_tracks_running_max() {
        let (train, val) = tiny_data();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let out = fit(&tiny_model(), &cfg, &train, &val, None).unwrap();
        let max = out.history.iter().map(|m| m.val_auc).fold(f64::MIN, f64::max);
        assert_eq!(out.best_val_auc, Some(max));
        let first_max = out.history.iter().position(|m| m.val_auc == max).unwrap() + 1;
        assert_eq!(out.best_epoch, first_max);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (train, val) = tiny_data();
        let run = |threads| {
            let cfg = TrainConfig {
                epochs: 1,
                batch_size: 4,
                threads,
                ..TrainConfig::default()
            };
            fit(&tiny_model(), &cfg, &train, &val, None).unwrap()
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.history, b.history);
        assert_eq!(a.last, b.last);
    }

    #[test]
    fn single_class_validation_rejected_up_front() {
        let (train, val) = tiny_data();
        let only_neg: Vec<_> = val.into_iter().filter(|s| s.label == 0).collect();
        assert!(fit(&tiny_model(), &TrainConfig::default(), &train, &only_neg, None).is_err());
    }
}
