use super::gradient::{sksd_vstat_gradient, VstatGradient};
use super::{BandwidthPolicy, SliceConfig, SliceVariant};
use crate::error::Result;
use crate::math::{project_rows_to_sphere, AdamConfig, AdamState, Matrix};
use crate::targets::Score;

/// Gradient ascent on the sliced V-statistic over the unit sphere.
#[derive(Clone, Debug)]
pub struct SliceTrainer {
    slices: SliceConfig,
    adam_g: AdamState,
    adam_r: Option<AdamState>,
    policy: BandwidthPolicy,
}

impl SliceTrainer {
    pub fn new(slices: SliceConfig, adam: AdamConfig, policy: BandwidthPolicy) -> Self {
        let len = slices.len() * slices.dim();
        let adam_r = (slices.variant() == SliceVariant::Rg).then(|| AdamState::new(len, adam));
        SliceTrainer { adam_g: AdamState::new(len, adam), adam_r, slices, policy }
    }

    pub fn slices(&self) -> &SliceConfig {
        &self.slices
    }

    pub fn into_slices(self) -> SliceConfig {
        self.slices
    }

    pub fn policy(&self) -> &BandwidthPolicy {
        &self.policy
    }

    pub fn steps(&self) -> u64 {
        self.adam_g.steps()
    }

    /// One ascent step on `x`; returns the V-statistic before the step.
    pub fn step(&mut self, model: &impl Score, x: &Matrix) -> Result<f64> {
        self.step_from_scores(x, &model.score_matrix(x))
    }

    pub fn step_from_scores(&mut self, x: &Matrix, s: &Matrix) -> Result<f64> {
        let grad = sksd_vstat_gradient(x, s, &self.slices, &self.policy, false)?;
        self.apply(&grad)?;
        Ok(grad.value)
    }

    /// Ascend along a gradient computed elsewhere, then reproject rows.
    pub fn apply(&mut self, grad: &VstatGradient) -> Result<()> {
        ascend(&mut self.adam_g, self.slices.directions_mut(), &grad.directions)?;
        if let (Some(adam), Some(dr)) = (self.adam_r.as_mut(), grad.basis.as_ref()) {
            ascend(adam, self.slices.basis_mut(), dr)?;
        }
        Ok(())
    }
}

fn ascend(adam: &mut AdamState, target: &mut Matrix, grad: &Matrix) -> Result<()> {
    let neg: Vec<f64> = grad.as_slice().iter().map(|g| -g).collect();
    let delta = adam.step(&neg)?;
    let mut next = target.clone();
    for (p, d) in next.as_mut_slice().iter_mut().zip(delta) {
        *p += d;
    }
    project_rows_to_sphere(&mut next)?;
    *target = next;
    Ok(())
}

/// Run `steps` ascent steps from `initial` on `x` and return the result.
pub fn optimize_directions(
    model: &impl Score,
    x: &Matrix,
    initial: SliceConfig,
    steps: usize,
    adam: AdamConfig,
    policy: &BandwidthPolicy,
) -> Result<SliceConfig> {
    let s = model.score_matrix(x);
    let mut trainer = SliceTrainer::new(initial, adam, *policy);
    for _ in 0..steps {
        trainer.step_from_scores(x, &s)?;
    }
    Ok(trainer.into_slices())
}
