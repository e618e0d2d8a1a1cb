//! Volumes, preprocessing, the synthetic dataset, and class-balanced sampling.

mod manifest;
mod resample;
mod sampler;
pub mod synth;
mod volume_io;

pub use manifest::{DatasetManifest, ManifestRecord, Split};
pub use resample::{normalize, resample};
pub use sampler::WeightedSampler;
pub use synth::{generate_samples, synth_generate, Axis, LesionVisibility, SynthSpec};
pub use volume_io::{read_volume, write_volume};

use crate::error::{Error, Result};
use crate::model::{ModalityIndicator, AXIAL_MODALITIES, SAGITTAL_MODALITIES};
use crate::tensor::Tensor;

/// Channel names in input order; indicator bits follow the same order.
pub const AXIAL_CHANNELS: [&str; AXIAL_MODALITIES] = ["FLAIR", "ADC", "Trace", "T2w", "GRE", "SWI"];
pub const SAGITTAL_CHANNELS: [&str; SAGITTAL_MODALITIES] = ["T1w"];

/// Every channel, axial first.
pub fn channel_names() -> impl Iterator<Item = &'static str> {
    AXIAL_CHANNELS.iter().chain(SAGITTAL_CHANNELS.iter()).copied()
}

pub const NUM_CHANNELS: usize = AXIAL_MODALITIES + SAGITTAL_MODALITIES;

/// One subject: both plane stacks with channels last, the modality
/// indicator, and the binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub id: String,
    /// `[H, W, D, 6]`
    pub axial: Tensor<f32>,
    /// `[H, W, D, 1]`
    pub sagittal: Tensor<f32>,
    pub indicator: ModalityIndicator,
    pub label: u8,
}

/// Interleaves single-channel `[H, W, D]` volumes into `[H, W, D, C]`;
/// absent channels are zero-filled.
fn stack(channels: &[Option<Tensor<f64>>], grid: Option<[usize; 3]>) -> Result<Tensor<f32>> {
    let grid = channels
        .iter()
        .flatten()
        .map(|t| t.shape().to_vec())
        .next()
        .or(grid.map(|g| g.to_vec()))
        .ok_or_else(|| Error::Dataset("cannot infer grid: every channel is missing".into()))?;
    for t in channels.iter().flatten() {
        if t.shape() != grid.as_slice() {
            return Err(Error::Dimension {
                op: "channel stack",
                lhs: grid.clone(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let voxels: usize = grid.iter().product();
    let c = channels.len();
    let mut data = vec![0f32; voxels * c];
    for (ch, t) in channels.iter().enumerate() {
        if let Some(t) = t {
            for (v, &x) in t.data().iter().enumerate() {
                data[v * c + ch] = x as f32;
            }
        }
    }
    let mut shape = grid;
    shape.push(c);
    Tensor::new(shape, data)
}

impl VolumeSample {
    /// Builds a sample from per-channel volumes in channel order. The
    /// indicator is derived from which channels are present.
    pub fn from_channels(
        id: impl Into<String>,
        label: u8,
        axial: &[Option<Tensor<f64>>],
        sagittal: &[Option<Tensor<f64>>],
        sagittal_grid: Option<[usize; 3]>,
    ) -> Result<Self> {
        let present = |chs: &[Option<Tensor<f64>>]| chs.iter().map(|c| c.is_some() as u8).collect();
        let indicator = ModalityIndicator::new(present(axial), present(sagittal))?;
        let sample = VolumeSample {
            id: id.into(),
            axial: stack(axial, None)?,
            sagittal: stack(sagittal, sagittal_grid)?,
            indicator,
            label,
        };
        Ok(sample)
    }

    /// Checks intensities lie in `[0, 1]`, channels flagged absent are all
    /// zero, the required contrasts are present, and the label is binary.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Dataset(format!("sample {}: {msg}", self.id)));
        if self.label > 1 {
            return fail(format!("label {} is not binary", self.label));
        }
        self.indicator
            .validate_clinical()
            .map_err(|e| Error::Dataset(format!("sample {}: {e}", self.id)))?;
        for (vol, mask) in [
            (&self.axial, self.indicator.mask(crate::model::Plane::Axial)),
            (&self.sagittal, self.indicator.mask(crate::model::Plane::Sagittal)),
        ] {
            let c = *vol.shape().last().unwrap();
            if c != mask.len() {
                return fail(format!("{c} channels but {} indicator bits", mask.len()));
            }
            for (i, &x) in vol.data().iter().enumerate() {
                if !(0.0..=1.0).contains(&x) {
                    return fail(format!("intensity {x} outside [0, 1]"));
                }
                if mask[i % c] == 0 && x != 0.0 {
                    return fail(format!("channel {} flagged absent but non-zero", i % c));
                }
            }
        }
        Ok(())
    }
}
