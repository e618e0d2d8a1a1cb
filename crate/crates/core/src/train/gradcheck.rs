//! Whole-model gradient verification against central finite differences.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::head_cross_entropy;
use crate::data::VolumeSample;
use crate::error::{Error, Result};
use crate::model::{forward_graph, ModelConfig, ModelInput, ParameterSet};
use crate::tensor::{relative_error, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error per group.
    pub tolerance: f64,
    /// Coordinates probed in every parameter tensor.
    pub per_tensor: usize,
    /// Denominator floor for the relative error. Some gradients are exactly
    /// zero (key biases cancel inside softmax), where both sides are pure
    /// rounding noise of order 1e-11.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            per_tensor: 2,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: String,
    pub coords: usize,
    pub max_rel_error: f64,
    /// `path[flat index]` of the worst coordinate.
    pub worst: String,
    pub passed: bool,
}

/// A deterministic input with one optional contrast missing, so the
/// indicator path sees both bit values.
fn probe_input(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ModelInput<f64>> {
    let mut volume = |grid: [usize; 3]| {
        let n = grid.iter().product();
        Tensor::new(grid.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect())
    };
    let axial = (0..config.axial_channels)
        .map(|c| if c == 3 { Ok(None) } else { volume(config.axial_grid).map(Some) })
        .collect::<Result<Vec<_>>>()?;
    let sagittal = (0..config.sagittal_channels)
        .map(|_| volume(config.sagittal_grid).map(Some))
        .collect::<Result<Vec<_>>>()?;
    let sample = VolumeSample::from_channels("probe", 1, &axial, &sagittal, Some(config.sagittal_grid))?;
    ModelInput::from_sample(&sample, config)
}

fn loss(params: &ParameterSet<f64>, config: &ModelConfig, input: &ModelInput<f64>, label: u8) -> Result<f64> {
    let mut g = Graph::new();
    let heads = forward_graph(&mut g, params, config, input)?;
    let l = head_cross_entropy(&mut g, &heads, label)?;
    Ok(g.item(l))
}

/// Compares backpropagated gradients of the training loss with central
/// differences at a randomly perturbed parameter point, one report per
/// parameter group.
pub fn gradcheck_model(config: &ModelConfig, opts: &GradcheckOptions) -> Result<Vec<GroupReport>> {
    config.validate()?;
    if !(opts.step > 0.0) || opts.per_tensor == 0 {
        return Err(Error::invalid("gradcheck needs a positive step and at least one coordinate"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = ParameterSet::<f64>::init(config, opts.seed)?;
    // move off the special initial point (unit gains, zero biases)
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.02..0.02));
    }
    let input = probe_input(config, &mut rng)?;
    let label = 1;

    let analytic = {
        let mut g = Graph::new();
        let heads = forward_graph(&mut g, &params, config, &input)?;
        let l = head_cross_entropy(&mut g, &heads, label)?;
        g.backward(l)?.into_params()
    };

    let mut reports = Vec::new();
    for (group, slots) in params.groups() {
        let mut worst = (0.0f64, String::new());
        let mut coords = 0;
        for slot in slots {
            let numel = params.tensors()[slot].numel();
            let picks = sample(&mut rng, numel, opts.per_tensor.min(numel)).into_vec();
            for i in picks {
                let orig = params.tensors()[slot].data()[i];
                params.tensors_mut()[slot].data_mut()[i] = orig + opts.step;
                let plus = loss(&params, config, &input, label)?;
                params.tensors_mut()[slot].data_mut()[i] = orig - opts.step;
                let minus = loss(&params, config, &input, label)?;
                params.tensors_mut()[slot].data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * opts.step);
                let exact = analytic.get(&slot).map_or(0.0, |t| t.data()[i]);
                let err = relative_error(exact, numeric, opts.floor);
                log::debug!("{}[{i}] analytic={exact:e} numeric={numeric:e} rel={err:e}", params.name(slot));
                coords += 1;
                if err >= worst.0 || worst.1.is_empty() {
                    worst = (err, format!("{}[{i}]", params.name(slot)));
                }
            }
        }
        reports.push(GroupReport {
            group,
            coords,
            max_rel_error: worst.0,
            worst: worst.1,
            passed: worst.0 < opts.tolerance,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Plane;

    fn toy() -> ModelConfig {
        ModelConfig {
            axial_grid: [4, 4, 2],
            sagittal_grid: [4, 2, 4],
            patch: 2,
            embed_dim: 6,
            num_heads: 2,
            fusion_heads: 3,
            depth: 2,
            ..ModelConfig::desk_tiny()
        }
    }

    #[test]
    fn toy_model_passes_and_covers_every_group() {
        let reports = gradcheck_model(&toy(), &GradcheckOptions::default()).unwrap();
        let p = ParameterSet::<f64>::init(&toy(), 0).unwrap();
        assert_eq!(reports.len(), p.groups().len());
        for r in &reports {
            assert!(r.passed, "{r:?}");
        }
        assert!(reports.iter().any(|r| r.group == "fusion.sagittal"));
        assert!(reports.iter().any(|r| r.group == "sagittal.blocks.1"));
    }

    #[test]
    fn impossible_tolerance_fails() {
        let opts = GradcheckOptions {
            tolerance: 1e-15,
            ..GradcheckOptions::default()
        };
        let reports = gradcheck_model(&toy(), &opts).unwrap();
        assert!(reports.iter().any(|r| !r.passed));
    }

    #[test]
    fn axial_only_model() {
        let cfg = ModelConfig {
            branches: crate::model::Branches::AxialOnly,
            modality_vector: false,
            ..toy()
        };
        let reports = gradcheck_model(&cfg, &GradcheckOptions::default()).unwrap();
        assert!(reports.iter().all(|r| r.passed && !r.group.starts_with(Plane::Sagittal.name())));
    }
}
