//! The MP-ViT network.

pub mod checkpoint;
mod config;
mod network;
mod params;

pub use config::{Branches, ModelConfig, Plane, Variant, AXIAL_MODALITIES, SAGITTAL_MODALITIES};
pub use network::{
    cross_attention_fuse, embed_tokens, encoder_forward, forward, forward_graph, mean_of_heads,
    modality_cross_attention, multi_head_attention, patchify, predict_input, AttentionWeights,
    BlockWeights, BoundParams, ModalityWeights, ModelInput, Prediction,
};
pub use params::ParameterSet;

use crate::error::{Error, Result};

/// Axial contrasts that every sample must have.
pub const REQUIRED_AXIAL: usize = 3;

/// Presence (1) or absence (0) of each contrast, per branch, in channel
/// order: axial [FLAIR, ADC, Trace, T2w, GRE, SWI], sagittal [T1w].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModalityIndicator {
    axial: Vec<u8>,
    sagittal: Vec<u8>,
}

impl ModalityIndicator {
    pub fn new(axial: Vec<u8>, sagittal: Vec<u8>) -> Result<Self> {
        if let Some(bad) = axial.iter().chain(&sagittal).find(|&&b| b > 1) {
            return Err(Error::invalid(format!("indicator entry {bad} is not 0 or 1")));
        }
        Ok(ModalityIndicator { axial, sagittal })
    }

    pub fn all_present(axial: usize, sagittal: usize) -> Self {
        ModalityIndicator {
            axial: vec![1; axial],
            sagittal: vec![1; sagittal],
        }
    }

    /// Checks the clinical layout: 6 axial and 1 sagittal slot with the
    /// required axial contrasts present.
    pub fn validate_clinical(&self) -> Result<()> {
        if self.axial.len() != AXIAL_MODALITIES || self.sagittal.len() != SAGITTAL_MODALITIES {
            return Err(Error::invalid(format!(
                "indicator lengths {}/{} (expected {AXIAL_MODALITIES}/{SAGITTAL_MODALITIES})",
                self.axial.len(),
                self.sagittal.len()
            )));
        }
        if self.axial[..REQUIRED_AXIAL].iter().any(|&b| b != 1) {
            return Err(Error::invalid("required axial contrast (FLAIR, ADC, Trace) missing"));
        }
        Ok(())
    }

    pub fn mask(&self, plane: Plane) -> &[u8] {
        match plane {
            Plane::Axial => &self.axial,
            Plane::Sagittal => &self.sagittal,
        }
    }

    pub fn mask_mut(&mut self, plane: Plane) -> &mut Vec<u8> {
        match plane {
            Plane::Axial => &mut self.axial,
            Plane::Sagittal => &mut self.sagittal,
        }
    }

    /// All bits in channel order, axial first.
    pub fn bits(&self) -> impl Iterator<Item = u8> + '_ {
        self.axial.iter().chain(&self.sagittal).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_validation() {
        assert!(ModalityIndicator::new(vec![1, 2], vec![0]).is_err());
        let ok = ModalityIndicator::new(vec![1, 1, 1, 0, 1, 0], vec![0]).unwrap();
        ok.validate_clinical().unwrap();
        let missing_flair = ModalityIndicator::new(vec![0, 1, 1, 1, 1, 1], vec![1]).unwrap();
        assert!(missing_flair.validate_clinical().is_err());
        assert_eq!(ok.bits().collect::<Vec<_>>(), vec![1, 1, 1, 0, 1, 0, 0]);
    }
}
