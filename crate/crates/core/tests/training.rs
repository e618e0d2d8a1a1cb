mod common;

use common::{toy, toy_set};
use mpvit_core::model::{checkpoint, ModelInput};
use mpvit_core::train::{fit, TrainConfig, Trainer, METRICS_HEADER};

fn toy_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 4,
        epochs: 3,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn full_batch_loss_drops_tenfold_in_fifty_steps() {
    let train = toy_set(1, 16);
    let cfg = TrainConfig { batch_size: 16, ..toy_cfg(0) };
    let mut t = Trainer::<f64>::new(&toy(), &cfg, &train).unwrap();
    let initial = t.training_loss().unwrap();
    let all: Vec<usize> = (0..16).collect();
    for _ in 0..50 {
        t.step_on(&all).unwrap();
    }
    let last = t.training_loss().unwrap();
    assert!(last < 0.1 * initial, "loss {initial} -> {last}");
}

#[test]
fn seeded_steps_give_identical_parameter_bytes() {
    let train = toy_set(2, 12);
    let run = |seed| {
        let mut t = Trainer::<f32>::new(&toy(), &toy_cfg(seed), &train).unwrap();
        for _ in 0..5 {
            t.step().unwrap();
        }
        checkpoint::to_bytes(t.params())
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn fit_keeps_running_maximum_checkpoint() {
    let train = toy_set(3, 16);
    let val = toy_set(4, 8);
    let dir = tempfile::tempdir().unwrap();
    let model = toy();
    let out = fit(&model, &toy_cfg(1), &train, &val, Some(dir.path())).unwrap();
    assert_eq!(out.history.len(), 3);
    let best = out.history.iter().map(|m| m.val_auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_auc, Some(best));
    let first_best = out.history.iter().position(|m| m.val_auc == best).unwrap() + 1;
    assert_eq!(out.best_epoch, first_best);

    let log = std::fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 4);

    // the saved parameters reproduce the best validation AUC
    let (cfg, params) = checkpoint::load_with_config(out.checkpoint.as_ref().unwrap()).unwrap();
    let inputs: Vec<ModelInput<f64>> = val.iter().map(|s| ModelInput::from_sample(s, &cfg).unwrap()).collect();
    let scores = mpvit_core::train::predict_all(&params, &cfg, &inputs, 1).unwrap();
    let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    let auc = mpvit_core::metrics::auc(&scores, &labels).unwrap();
    assert!((auc - best).abs() < 1e-6, "{auc} vs {best}");
}

#[test]
fn zero_epochs_saves_initial_parameters() {
    let train = toy_set(5, 8);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 0, ..toy_cfg(2) };
    let out = fit(&toy(), &cfg, &train, &toy_set(6, 4), Some(dir.path())).unwrap();
    assert!(out.history.is_empty());
    let log = std::fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    assert_eq!(log, format!("{METRICS_HEADER}\n"));
    let saved = checkpoint::load(out.checkpoint.as_ref().unwrap()).unwrap();
    let init = mpvit_core::model::ParameterSet::<f32>::init(&toy(), 2).unwrap();
    assert_eq!(saved, init.cast::<f64>());
}
