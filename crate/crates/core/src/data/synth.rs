//! Deterministic synthetic stand-in for a multi-contrast, two-orientation
//! MRI dataset.
//!
//! Each subject starts on an isotropic cube: a smoothed Gaussian background
//! field, plus an axis-aligned ellipsoidal lesion for positives. Seven
//! channels are derived from it with per-contrast multipliers, optional
//! contrasts are dropped at random, and the result is resampled onto the
//! anisotropic axial and sagittal grids and normalized to `[0, 1]`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{
    normalize, resample, write_volume, DatasetManifest, ManifestRecord, Split, VolumeSample,
    AXIAL_CHANNELS, SAGITTAL_CHANNELS,
};
use crate::error::{Error, Result};
use crate::model::{AXIAL_MODALITIES, REQUIRED_AXIAL};
use crate::tensor::Tensor;

/// Background contrast multiplier per channel (axial first, then T1w).
const BACKGROUND_GAIN: [f64; 7] = [1.0, 0.8, 0.9, 1.1, 0.9, 1.0, 0.7];
/// Lesion contrast per channel; negative means the lesion appears dark.
const LESION_GAIN: [f64; 7] = [1.0, -0.6, 0.8, 0.9, -1.3, -1.5, 0.9];

/// Grid axis of the isotropic source cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Height (anterior-posterior)
    X,
    /// Width (left-right)
    Y,
    /// Depth (superior-inferior)
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Which channels carry the lesion signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LesionVisibility {
    AllChannels,
    /// Only the sagittal contrast shows the lesion; axial channels are
    /// indistinguishable between classes.
    SagittalOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Negatives per positive; each split gets `floor(n / (1 + ratio))`
    /// positives.
    pub negatives_per_positive: f64,
    /// Probability that each optional contrast is absent.
    pub drop_prob: f64,
    /// Side of the isotropic source cube in voxels.
    pub source_size: usize,
    pub background_mean: f64,
    pub background_std: f64,
    /// Gaussian smoothing width (voxels) of the background field.
    pub smoothing: f64,
    /// Range of lesion semi-axes in source voxels.
    pub semi_axis_min: f64,
    pub semi_axis_max: f64,
    pub lesion_intensity: f64,
    /// Direction of the lesion's longest semi-axis.
    pub lesion_axis: Axis,
    pub visibility: LesionVisibility,
    pub axial_grid: [usize; 3],
    pub sagittal_grid: [usize; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train: 512,
            val: 128,
            test: 128,
            negatives_per_positive: 13.0,
            drop_prob: 0.3,
            source_size: 64,
            background_mean: 0.5,
            background_std: 0.1,
            smoothing: 2.0,
            semi_axis_min: 3.0,
            semi_axis_max: 8.0,
            lesion_intensity: 0.3,
            lesion_axis: Axis::Z,
            visibility: LesionVisibility::AllChannels,
            axial_grid: [32, 32, 16],
            sagittal_grid: [32, 16, 32],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return bad("train, val and test counts must be positive".into());
        }
        if !(self.negatives_per_positive > 0.0 && self.negatives_per_positive.is_finite()) {
            return bad(format!("class ratio must be positive, got {}", self.negatives_per_positive));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad(format!("drop probability {} outside [0, 1]", self.drop_prob));
        }
        if !(self.semi_axis_min > 0.0 && self.semi_axis_min <= self.semi_axis_max) {
            return bad(format!(
                "semi-axis range [{}, {}] invalid",
                self.semi_axis_min, self.semi_axis_max
            ));
        }
        if self.semi_axis_max >= self.source_size as f64 / 4.0 {
            return bad("lesion semi-axes must stay below a quarter of the source cube".into());
        }
        if self.source_size < 4 {
            return bad("source cube too small".into());
        }
        if !(self.background_std >= 0.0 && self.smoothing >= 0.0 && self.lesion_intensity.is_finite()) {
            return bad("background std, smoothing must be >= 0 and intensity finite".into());
        }
        if self.axial_grid.contains(&0) || self.sagittal_grid.contains(&0) {
            return bad("target grids must be non-empty".into());
        }
        for split in Split::ALL {
            let n = self.count(split);
            let p = self.positives(split);
            if p == 0 || p == n {
                return bad(format!(
                    "{split} split of {n} at 1:{} would contain a single class",
                    self.negatives_per_positive
                ));
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// Exact positive count of a split.
    pub fn positives(&self, split: Split) -> usize {
        (self.count(split) as f64 / (1.0 + self.negatives_per_positive)).floor() as usize
    }
}

/// Per-channel source volumes of one subject, before stacking.
struct Channels {
    axial: Vec<Option<Tensor<f64>>>,
    sagittal: Vec<Option<Tensor<f64>>>,
}

struct Plan {
    split: Split,
    local: usize,
    global: usize,
    label: u8,
}

impl Plan {
    fn id(&self) -> String {
        format!("{}-{:05}", self.split, self.local)
    }
}

fn plan(seed: u64, spec: &SynthSpec) -> Vec<Plan> {
    let mut plans = Vec::new();
    let mut global = 0;
    for (s, split) in Split::ALL.into_iter().enumerate() {
        let n = spec.count(split);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 << 32 | s as u64);
        let positives: std::collections::HashSet<usize> =
            rand::seq::index::sample(&mut rng, n, spec.positives(split)).into_iter().collect();
        for local in 0..n {
            plans.push(Plan {
                split,
                local,
                global,
                label: positives.contains(&local) as u8,
            });
            global += 1;
        }
    }
    plans
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Separable smoothing of an `n³` cube with clamped borders.
fn smooth(field: &[f64], n: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut cur = field.to_vec();
    for stride in [n * n, n, 1] {
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = (idx / stride) % n;
            let base = idx - pos * stride;
            *out = kernel
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    let p = (pos as isize + k as isize - r).clamp(0, n as isize - 1) as usize;
                    w * cur[base + p * stride]
                })
                .sum();
        }
        cur = next;
    }
    cur
}

fn background(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<f64> {
    let n = spec.source_size;
    let noise: Vec<f64> = (0..n * n * n).map(|_| rng.sample(StandardNormal)).collect();
    let field = smooth(&noise, n, &gaussian_kernel(spec.smoothing));
    let len = field.len() as f64;
    let mean = field.iter().sum::<f64>() / len;
    let std = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len).sqrt();
    let scale = if std > 0.0 { spec.background_std / std } else { 0.0 };
    field
        .iter()
        .map(|v| (spec.background_mean + (v - mean) * scale).clamp(0.0, 1.0))
        .collect()
}

fn lesion_mask(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<f64> {
    let n = spec.source_size;
    let lo = n as f64 / 4.0;
    let hi = 3.0 * n as f64 / 4.0;
    let center: [f64; 3] = std::array::from_fn(|_| rng.random_range(lo..hi));
    let mut axes: Vec<f64> = (0..3)
        .map(|_| rng.random_range(spec.semi_axis_min..=spec.semi_axis_max))
        .collect();
    axes.sort_by(|a, b| b.total_cmp(a));
    let long = spec.lesion_axis.index();
    let mut others: Vec<usize> = (0..3).filter(|&a| a != long).collect();
    if rng.random_bool(0.5) {
        others.swap(0, 1);
    }
    let mut semi = [0.0; 3];
    semi[long] = axes[0];
    semi[others[0]] = axes[1];
    semi[others[1]] = axes[2];

    let mut mask = vec![0.0; n * n * n];
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let p = [x, y, z];
                let r: f64 = (0..3)
                    .map(|a| ((p[a] as f64 + 0.5 - center[a]) / semi[a]).powi(2))
                    .sum();
                if r <= 1.0 {
                    mask[(x * n + y) * n + z] = 1.0;
                }
            }
        }
    }
    mask
}

fn generate_channels(seed: u64, spec: &SynthSpec, p: &Plan) -> Result<Channels> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(p.global as u64);
    let n = spec.source_size;
    let bg = background(&mut rng, spec);
    let lesion = if p.label == 1 {
        Some(lesion_mask(&mut rng, spec))
    } else {
        None
    };
    // drop decisions for the optional contrasts, in channel order
    let total = AXIAL_MODALITIES + SAGITTAL_CHANNELS.len();
    let present: Vec<bool> = (0..total)
        .map(|c| c < REQUIRED_AXIAL || !rng.random_bool(spec.drop_prob))
        .collect();

    let channel = |c: usize, grid: [usize; 3], visible: bool| -> Result<Option<Tensor<f64>>> {
        if !present[c] {
            return Ok(None);
        }
        let gain = spec.lesion_intensity * LESION_GAIN[c];
        let data = bg
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let l = match (&lesion, visible) {
                    (Some(m), true) => gain * m[i],
                    _ => 0.0,
                };
                (0.5 + BACKGROUND_GAIN[c] * (b - 0.5) + l).clamp(0.0, 1.0)
            })
            .collect();
        let source = Tensor::new(vec![n, n, n], data)?;
        Ok(Some(normalize(&resample(&source, grid)?)))
    };
    let axial_visible = spec.visibility == LesionVisibility::AllChannels;
    let axial = (0..AXIAL_MODALITIES)
        .map(|c| channel(c, spec.axial_grid, axial_visible))
        .collect::<Result<_>>()?;
    let sagittal = (0..SAGITTAL_CHANNELS.len())
        .map(|c| channel(AXIAL_MODALITIES + c, spec.sagittal_grid, true))
        .collect::<Result<_>>()?;
    Ok(Channels { axial, sagittal })
}

/// Generates the dataset in memory, in manifest order.
pub fn generate_samples(seed: u64, spec: &SynthSpec) -> Result<Vec<(Split, VolumeSample)>> {
    spec.validate()?;
    plan(seed, spec)
        .par_iter()
        .map(|p| {
            let ch = generate_channels(seed, spec, p)?;
            let sample =
                VolumeSample::from_channels(p.id(), p.label, &ch.axial, &ch.sagittal, Some(spec.sagittal_grid))?;
            Ok((p.split, sample))
        })
        .collect()
}

/// Generates the dataset under `out_dir`: one `MPVV` file per present
/// channel in `volumes/`, plus `manifest.tsv`. Identical seeds give
/// byte-identical trees.
pub fn synth_generate(seed: u64, spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let vol_dir = out_dir.join("volumes");
    std::fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let names: Vec<&str> = AXIAL_CHANNELS.iter().chain(SAGITTAL_CHANNELS.iter()).copied().collect();
    let records = plan(seed, spec)
        .par_iter()
        .map(|p| {
            let ch = generate_channels(seed, spec, p)?;
            let id = p.id();
            let mut channels = Vec::with_capacity(names.len());
            for (vol, name) in ch.axial.iter().chain(&ch.sagittal).zip(&names) {
                channels.push(match vol {
                    Some(v) => {
                        let rel = PathBuf::from("volumes").join(format!("{id}_{name}.mpvv"));
                        write_volume(&out_dir.join(&rel), name, v)?;
                        Some(rel)
                    }
                    None => None,
                });
            }
            Ok(ManifestRecord {
                id,
                label: p.label,
                split: p.split,
                channels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(records, out_dir)?;
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Plane;

    fn small() -> SynthSpec {
        SynthSpec {
            train: 6,
            val: 4,
            test: 4,
            negatives_per_positive: 1.0,
            source_size: 32,
            semi_axis_min: 2.0,
            semi_axis_max: 4.0,
            axial_grid: [16, 16, 8],
            sagittal_grid: [16, 8, 16],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn positive_counts_use_floor() {
        let spec = SynthSpec {
            train: 1400,
            ..SynthSpec::default()
        };
        assert_eq!(spec.positives(Split::Train), 100);
        let d = SynthSpec::default();
        assert_eq!(d.positives(Split::Train), 36);
        assert_eq!(d.positives(Split::Val), 9);
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        let bad = [
            SynthSpec { negatives_per_positive: 0.0, ..small() },
            SynthSpec { drop_prob: 1.5, ..small() },
            SynthSpec { semi_axis_min: 5.0, semi_axis_max: 3.0, ..small() },
            SynthSpec { val: 0, ..small() },
            SynthSpec { train: 3, negatives_per_positive: 13.0, ..small() },
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
    }

    #[test]
    fn samples_satisfy_invariants_and_class_counts() {
        let spec = small();
        let samples = generate_samples(3, &spec).unwrap();
        assert_eq!(samples.len(), 14);
        for split in Split::ALL {
            let pos = samples.iter().filter(|(s, v)| *s == split && v.label == 1).count();
            assert_eq!(pos, spec.positives(split));
        }
        for (_, s) in &samples {
            s.validate().unwrap();
            assert_eq!(s.axial.shape(), &[16, 16, 8, 6]);
            assert_eq!(s.sagittal.shape(), &[16, 8, 16, 1]);
        }
    }

    #[test]
    fn zero_drop_keeps_every_channel() {
        let spec = SynthSpec { drop_prob: 0.0, ..small() };
        for (_, s) in generate_samples(1, &spec).unwrap() {
            assert!(s.indicator.bits().all(|b| b == 1));
        }
        let spec = SynthSpec { drop_prob: 1.0, ..small() };
        for (_, s) in generate_samples(1, &spec).unwrap() {
            assert_eq!(s.indicator.bits().collect::<Vec<_>>(), vec![1, 1, 1, 0, 0, 0, 0]);
        }
    }

    #[test]
    fn lesion_brightens_flair_region() {
        // with the same seed stream, a positive and a negative share nothing,
        // so compare the max FLAIR deviation from background statistics instead
        let spec = SynthSpec {
            drop_prob: 0.0,
            lesion_intensity: 0.6,
            ..small()
        };
        let samples = generate_samples(5, &spec).unwrap();
        let contrast = |s: &VolumeSample| {
            let flair: Vec<f32> = s.axial.data().iter().step_by(6).copied().collect();
            let mean = flair.iter().sum::<f32>() / flair.len() as f32;
            let max = flair.iter().fold(0f32, |m, &x| m.max(x));
            max - mean
        };
        let pos: f32 = samples.iter().filter(|(_, s)| s.label == 1).map(|(_, s)| contrast(s)).sum();
        let neg: f32 = samples.iter().filter(|(_, s)| s.label == 0).map(|(_, s)| contrast(s)).sum();
        assert!(pos > neg, "{pos} vs {neg}");
    }

    #[test]
    fn sagittal_only_visibility_hides_axial_signal() {
        let spec = SynthSpec {
            visibility: LesionVisibility::SagittalOnly,
            drop_prob: 0.0,
            ..small()
        };
        let vis = generate_samples(8, &spec).unwrap();
        let all = generate_samples(8, &SynthSpec { drop_prob: 0.0, ..small() }).unwrap();
        for ((_, a), (_, b)) in vis.iter().zip(&all) {
            assert_eq!(a.sagittal, b.sagittal);
            if a.label == 0 {
                assert_eq!(a.axial, b.axial);
            } else {
                assert_ne!(a.axial, b.axial);
            }
        }
    }

    #[test]
    fn files_match_memory_and_are_deterministic() {
        let spec = small();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = synth_generate(4, &spec, d1.path()).unwrap();
        let m2 = synth_generate(4, &spec, d2.path()).unwrap();
        assert_eq!(m1.to_string(), m2.to_string());
        for r in &m1.records {
            for p in r.channels.iter().flatten() {
                assert_eq!(
                    std::fs::read(d1.path().join(p)).unwrap(),
                    std::fs::read(d2.path().join(p)).unwrap()
                );
            }
        }
        let reread = DatasetManifest::read(&d1.path().join("manifest.tsv")).unwrap();
        assert_eq!(reread.records, m1.records);
        let mem = generate_samples(4, &spec).unwrap();
        let loaded = reread.load_split(Split::Val, spec.sagittal_grid).unwrap();
        let mem_val: Vec<_> = mem.into_iter().filter(|(s, _)| *s == Split::Val).map(|(_, v)| v).collect();
        assert_eq!(loaded, mem_val);
        assert_eq!(loaded[0].indicator.mask(Plane::Axial).len(), 6);
    }
}
