use std::path::{Path, PathBuf};
use std::process::ExitCode;

use mpvit_core::data::{synth_generate, DatasetManifest, LesionVisibility, Split, SynthSpec, VolumeSample};
use mpvit_core::metrics::{mcnemar, EvalReport, McNemarMethod};
use mpvit_core::model::{checkpoint, ModelConfig, ModelInput, Plane};
use mpvit_core::train::{fit, gradcheck_model, predict_all, GradcheckOptions};

use super::run_config::RunConfig;
use super::{CliError, CompareArgs, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

type CmdResult = Result<ExitCode, CliError>;

fn usage(e: mpvit_core::Error) -> CliError {
    CliError::Usage(e)
}

fn runtime(e: mpvit_core::Error) -> CliError {
    CliError::Runtime(e)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(mpvit_core::Error::io(dir, e)))?;
    }
    std::fs::write(path, text).map_err(|e| runtime(mpvit_core::Error::io(path, e)))
}

fn required(flag: Option<PathBuf>, rc: &RunConfig, key: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| rc.path(key))
        .ok_or_else(|| CliError::usage(format!("--{key} is required (flag or config key `{key}`)")))
}

fn read_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("manifest {} not found", path.display())));
    }
    let m = DatasetManifest::read(path).map_err(usage)?;
    m.check_files().map_err(usage)?;
    Ok(m)
}

fn check_grids(samples: &[VolumeSample], model: &ModelConfig) -> Result<(), CliError> {
    if let Some(s) = samples.first() {
        ModelInput::<f32>::from_sample(s, model).map_err(|e| {
            CliError::usage(format!(
                "data grids do not match the model (axial {:?}, sagittal {:?}): {e}",
                model.branch_grid(Plane::Axial),
                model.branch_grid(Plane::Sagittal)
            ))
        })?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let rc = RunConfig::load(a.config.as_deref())?;
    let seed = a.seed.map_or_else(|| rc.parsed("seed"), |s| Ok(Some(s)))?.unwrap_or(0);
    let out = required(a.out, &rc, "out")?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        train: a.train.map_or_else(|| rc.parsed("n_train"), |v| Ok(Some(v)))?.unwrap_or(d.train),
        val: a.val.map_or_else(|| rc.parsed("n_val"), |v| Ok(Some(v)))?.unwrap_or(d.val),
        test: a.test.map_or_else(|| rc.parsed("n_test"), |v| Ok(Some(v)))?.unwrap_or(d.test),
        negatives_per_positive: a.ratio.map_or_else(|| rc.parsed("ratio"), |v| Ok(Some(v)))?.unwrap_or(d.negatives_per_positive),
        drop_prob: a.drop_prob.map_or_else(|| rc.parsed("drop_prob"), |v| Ok(Some(v)))?.unwrap_or(d.drop_prob),
        visibility: if a.sagittal_only {
            LesionVisibility::SagittalOnly
        } else {
            LesionVisibility::AllChannels
        },
        ..d
    };
    spec.validate().map_err(usage)?;
    let manifest = synth_generate(seed, &spec, &out).map_err(runtime)?;
    for split in Split::ALL {
        let labels = manifest.labels(split);
        let pos = labels.iter().filter(|&&l| l == 1).count();
        println!("{split}: {} samples, {pos} positive", labels.len());
    }
    println!("manifest: {}", out.join("manifest.tsv").display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs) -> CmdResult {
    let rc = RunConfig::load(a.config.as_deref())?;
    let mut tc = rc.train_config()?;
    if let Some(v) = a.variant {
        tc.variant = v;
    }
    if a.no_modality_vector {
        tc.modality_vector = false;
    }
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.seed = a.seed.unwrap_or(tc.seed);
    tc.lr = a.lr.unwrap_or(tc.lr);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.threads = a.threads.unwrap_or(tc.threads);
    let mut model = tc.model_config();
    rc.apply_model(&mut model)?;
    if a.no_modality_vector {
        model.modality_vector = false;
    }
    println!(
        "mpvit train: variant {} (embed_dim, heads) = ({}, {}), depth {}, patch {}, modality vector {}",
        tc.variant,
        model.embed_dim,
        model.num_heads,
        model.depth,
        model.patch,
        if model.modality_vector { "on" } else { "off" }
    );
    tc.validate().map_err(usage)?;
    model.validate().map_err(usage)?;
    let manifest_path = required(a.manifest, &rc, "manifest")?;
    let out = required(a.out, &rc, "out")?;
    let manifest = read_manifest(&manifest_path)?;
    let train = manifest.load_split(Split::Train, model.sagittal_grid).map_err(usage)?;
    let val = manifest.load_split(Split::Val, model.sagittal_grid).map_err(usage)?;
    if train.is_empty() || val.is_empty() {
        return Err(CliError::usage("manifest needs non-empty train and val splits"));
    }
    check_grids(&train, &model)?;

    let outcome = fit(&model, &tc, &train, &val, Some(&out)).map_err(runtime)?;
    match outcome.best_val_auc {
        Some(auc) => println!("best val AUC {auc:.4} at epoch {}", outcome.best_epoch),
        None => println!("no epochs run; saved initial parameters"),
    }
    if let Some(ckpt) = outcome.checkpoint {
        println!("checkpoint: {}", ckpt.display());
    }
    println!("metrics: {}", out.join("metrics.tsv").display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let rc = RunConfig::load(a.config.as_deref())?;
    let ckpt = required(a.checkpoint, &rc, "checkpoint")?;
    let (model, params) = checkpoint::load_with_config(&ckpt).map_err(usage)?;
    let manifest = read_manifest(&required(a.manifest, &rc, "manifest")?)?;
    let split: Split = match a.split.or_else(|| rc.get("split").map(str::to_string)) {
        Some(s) => s.parse().map_err(usage)?,
        None => Split::Test,
    };
    let threshold = a.threshold.map_or_else(|| rc.parsed("threshold"), |v| Ok(Some(v)))?.unwrap_or(0.5);
    let samples = manifest.load_split(split, model.sagittal_grid).map_err(usage)?;
    check_grids(&samples, &model)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let inputs = samples
        .iter()
        .map(|s| ModelInput::<f64>::from_sample(s, &model))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    drop(samples);

    let scores = predict_all(&params, &model, &inputs, a.threads).map_err(runtime)?;
    let report = EvalReport::compute(&scores, &labels, threshold).map_err(usage)?;
    let out = a.out.or_else(|| rc.path("out"));
    if let Some(path) = &out {
        write_text(path, &report.to_string())?;
    }
    if let Some(path) = &a.preds_out {
        write_text(path, &scores.iter().map(|s| format!("{s}\n")).collect::<String>())?;
    }
    if let Some(path) = &a.labels_out {
        write_text(path, &labels.iter().map(|l| format!("{l}\n")).collect::<String>())?;
    }
    println!(
        "{split}: auc={:.4} sensitivity={:.4} specificity={:.4} threshold={} n_pos={} n_neg={}",
        report.auc, report.sensitivity, report.specificity, report.threshold, report.n_pos, report.n_neg
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    if !(a.tolerance > 0.0) || !(a.step > 0.0) || a.per_tensor == 0 {
        return Err(CliError::usage("tolerance, step and per-tensor must be positive"));
    }
    let config = a.variant.config();
    let opts = GradcheckOptions {
        step: a.step,
        tolerance: a.tolerance,
        per_tensor: a.per_tensor,
        seed: a.seed,
        ..GradcheckOptions::default()
    };
    println!("gradcheck {} (h={}, tolerance={})", a.variant, a.step, a.tolerance);
    let reports = gradcheck_model(&config, &opts).map_err(runtime)?;
    println!("{:<24} {:>6} {:>12}  status  worst", "group", "coords", "max_rel_err");
    for r in &reports {
        println!(
            "{:<24} {:>6} {:>12.3e}  {:<6}  {}",
            r.group,
            r.coords,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" },
            r.worst
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} groups PASS", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} groups FAIL", reports.len());
        Ok(ExitCode::from(1))
    }
}

fn read_column<V: std::str::FromStr>(path: &Path, what: &str) -> Result<Vec<V>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {what} {}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse()
                .map_err(|_| CliError::usage(format!("{}: line {}: bad {what} `{l}`", path.display(), i + 1)))
        })
        .collect()
}

pub fn compare(a: CompareArgs) -> CmdResult {
    let method: McNemarMethod = a.method.parse().map_err(usage)?;
    let pa: Vec<f64> = read_column(&a.preds_a, "score")?;
    let pb: Vec<f64> = read_column(&a.preds_b, "score")?;
    let labels: Vec<u8> = read_column(&a.labels, "label")?;
    let result = mcnemar(&pa, &pb, &labels, a.threshold, method).map_err(usage)?;
    print!("{result}");
    if let Some(out) = &a.out {
        write_text(out, &result.to_string())?;
    }
    Ok(ExitCode::SUCCESS)
}
