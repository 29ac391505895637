use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::first_stage::{FirstStageModel, FIXED_EFFECTS};
use super::model::{Family, SecondStageModel};
use super::TwoStageError;
use crate::spde::{sample_field, MaternParams};

/// Generating values for one two-stage data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    #[serde(default)]
    pub gamma_extra: Vec<f64>,
    pub sigma_e1: f64,
    pub sigma_e2: f64,
    /// Field parameters; `None` sets the field to zero.
    pub field: Option<MaternParams>,
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    /// True first-stage latent `(β0, β1, ω)`.
    pub x1: Vec<f64>,
    /// True exposure at the second-stage evaluation points.
    pub h: Vec<f64>,
}

/// Draws the field, the first-stage observations and the second-stage
/// observations for `truth`.
pub fn simulate_two_stage<R: Rng + ?Sized>(
    first: &FirstStageModel,
    second: &SecondStageModel,
    truth: &Truth,
    rng: &mut R,
) -> Result<SimulatedData, TwoStageError> {
    let layout = first.layout();
    if second.map().cols() != layout.dim() {
        return Err(TwoStageError::Invalid(
            "second-stage map does not match the first-stage latent".into(),
        ));
    }
    if truth.gamma_extra.len() != second.n_extra() {
        return Err(TwoStageError::Invalid(
            "extra coefficients do not match the extra covariates".into(),
        ));
    }
    if !(truth.sigma_e1 >= 0.0) || !(truth.sigma_e2 >= 0.0) {
        return Err(TwoStageError::Invalid(
            "noise standard deviations must be non-negative".into(),
        ));
    }
    let mut x1 = vec![0.0; layout.dim()];
    x1[..FIXED_EFFECTS].copy_from_slice(&truth.beta);
    if let Some(p) = truth.field.filter(|_| layout.is_spatial()) {
        let q = layout
            .field_precision(&p)
            .expect("spatial layout has operators");
        let omega = sample_field(&q, rng)?;
        x1[FIXED_EFFECTS..].copy_from_slice(&omega);
    }
    let mut w = first.design().mul_vec(&x1)?;
    for v in w.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += truth.sigma_e1 * e;
    }
    let h = second.map().mul_vec(&x1)?;
    let eta = second.linear_predictor(&h, truth.gamma, &truth.gamma_extra);
    let y = match second.family {
        Family::GaussianPoint => eta
            .iter()
            .map(|m| {
                let e: f64 = rng.sample(StandardNormal);
                m + truth.sigma_e2 * e
            })
            .collect(),
        Family::PoissonClassical | Family::PoissonNewSpec => eta
            .iter()
            .map(|e| {
                let lambda = e.exp();
                Poisson::new(lambda).map(|d| d.sample(rng)).map_err(|_| {
                    TwoStageError::Invalid(format!("Poisson mean {lambda} cannot be sampled"))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?,
    };
    Ok(SimulatedData { w, y, x1, h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, Rect};
    use crate::spde::PcPrior;
    use crate::twostage::{FirstStagePriors, GammaPriors, LatentLayout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn deterministic_limit_returns_regression_surface() {
        let mesh = build_structured_mesh(Rect::unit(), 0.25, 0.5).unwrap();
        let z: Vec<f64> = mesh.nodes().iter().map(|p| 2.0 * p[0]).collect();
        let layout = Arc::new(LatentLayout::spatial(mesh, z).unwrap());
        let sites = [[0.1, 0.2], [0.5, 0.5], [0.8, 0.3]];
        let first =
            FirstStageModel::new(Arc::clone(&layout), &sites, FirstStagePriors::default()).unwrap();
        let second = SecondStageModel::gaussian_point(
            &layout,
            &sites,
            GammaPriors::gaussian(),
            PcPrior::default(),
        )
        .unwrap();
        let truth = Truth {
            beta: [10.0, 3.0],
            gamma: [1.0, 2.0],
            gamma_extra: vec![],
            sigma_e1: 0.0,
            sigma_e2: 0.0,
            field: None,
        };
        let d =
            simulate_two_stage(&first, &second, &truth, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (w, s) in d.w.iter().zip(&sites) {
            assert!((w - (10.0 + 3.0 * 2.0 * s[0])).abs() < 1e-12);
        }
        for (y, w) in d.y.iter().zip(&d.w) {
            assert!((y - (1.0 + 2.0 * w)).abs() < 1e-12);
        }
    }
}
