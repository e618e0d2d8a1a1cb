#![allow(dead_code)]

use mpvit_core::data::VolumeSample;
use mpvit_core::model::ModelConfig;
use mpvit_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small dual-branch model that runs in microseconds.
pub fn toy() -> ModelConfig {
    ModelConfig {
        axial_grid: [4, 4, 2],
        sagittal_grid: [4, 2, 4],
        patch: 2,
        embed_dim: 8,
        num_heads: 2,
        fusion_heads: 2,
        depth: 1,
        ..ModelConfig::desk_tiny()
    }
}

fn field(rng: &mut ChaCha8Rng, grid: [usize; 3], shift: f64) -> Tensor<f64> {
    let n = grid.iter().product();
    let data = (0..n).map(|_| (rng.random::<f64>() * 0.5 + shift).clamp(0.0, 1.0)).collect();
    Tensor::new(grid.to_vec(), data).unwrap()
}

/// Random sample on the toy grids. Positives are brighter in FLAIR, so the
/// class is learnable. `missing` lists axial channels (3..6) to drop.
pub fn toy_sample(seed: u64, label: u8, missing: &[usize]) -> VolumeSample {
    let cfg = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axial: Vec<Option<Tensor<f64>>> = (0..6)
        .map(|c| {
            let shift = if c == 0 && label == 1 { 0.5 } else { 0.1 };
            let t = field(&mut rng, cfg.axial_grid, shift);
            (!missing.contains(&c)).then_some(t)
        })
        .collect();
    let sagittal = vec![Some(field(&mut rng, cfg.sagittal_grid, 0.2))];
    VolumeSample::from_channels(format!("toy-{seed}"), label, &axial, &sagittal, Some(cfg.sagittal_grid)).unwrap()
}

/// `n` samples with alternating labels.
pub fn toy_set(seed: u64, n: usize) -> Vec<VolumeSample> {
    (0..n).map(|i| toy_sample(seed * 1000 + i as u64, (i % 2) as u8, &[])).collect()
}
