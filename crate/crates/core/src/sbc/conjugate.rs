use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::harness::{QuantityDraws, ReplicateModel};
use super::SbcError;

/// Which hyperparameters are held fixed when generating data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    /// Every hyperparameter is drawn from its prior.
    #[default]
    Alg2,
    /// Latent-field hyperparameters fixed, data hyperparameters drawn.
    Alg3,
    /// All first-stage hyperparameters fixed.
    Thm32,
}

/// Normal–gamma model with an exact posterior sampler:
/// `τ ~ Gamma(a, b)`, `x | τ ~ N(m0, 1/(κ0 τ))`, `y_i | x, τ ~ N(x, 1/τ)`.
/// The prior scale `κ0` plays the latent-field hyperparameter and is
/// known; the noise precision `τ` is the data hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateNormalModel {
    pub n_obs: usize,
    pub m0: f64,
    pub kappa0: f64,
    pub shape: f64,
    pub rate: f64,
    pub mode: ConditioningMode,
    /// Noise precision used when `mode` is [`ConditioningMode::Thm32`].
    pub tau_fixed: f64,
}

impl Default for ConjugateNormalModel {
    fn default() -> Self {
        Self {
            n_obs: 8,
            m0: 0.0,
            kappa0: 0.5,
            shape: 3.0,
            rate: 2.0,
            mode: ConditioningMode::Alg2,
            tau_fixed: 1.5,
        }
    }
}

impl ConjugateNormalModel {
    pub fn with_mode(mode: ConditioningMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SbcError> {
        let ok = self.n_obs >= 1
            && [self.m0, self.kappa0, self.shape, self.rate, self.tau_fixed]
                .iter()
                .all(|v| v.is_finite())
            && self.kappa0 > 0.0
            && self.shape > 0.0
            && self.rate > 0.0
            && self.tau_fixed > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SbcError::Invalid(format!(
                "invalid conjugate model {self:?}"
            )))
        }
    }

    fn gamma(shape: f64, rate: f64) -> Gamma<f64> {
        Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters")
    }
}

impl ReplicateModel for ConjugateNormalModel {
    fn quantity_ids(&self) -> Vec<String> {
        vec!["x".into(), "tau".into()]
    }

    fn replicate(&self, rng: &mut ChaCha8Rng, l: usize) -> Result<Vec<QuantityDraws>, String> {
        self.validate().map_err(|e| e.to_string())?;
        let tau = match self.mode {
            ConditioningMode::Thm32 => self.tau_fixed,
            _ => Self::gamma(self.shape, self.rate).sample(rng),
        };
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let x = self.m0 + normal(rng) / (self.kappa0 * tau).sqrt();
        let y: Vec<f64> = (0..self.n_obs)
            .map(|_| x + normal(rng) / tau.sqrt())
            .collect();

        let n = self.n_obs as f64;
        let ybar = y.iter().sum::<f64>() / n;
        let ss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let kappa_n = self.kappa0 + n;
        let m_n = (self.kappa0 * self.m0 + n * ybar) / kappa_n;
        let shape_n = self.shape + 0.5 * n;
        let rate_n =
            self.rate + 0.5 * ss + 0.5 * self.kappa0 * n * (ybar - self.m0).powi(2) / kappa_n;

        let mut xs = Vec::with_capacity(l);
        let mut taus = Vec::with_capacity(l);
        for _ in 0..l {
            let t = match self.mode {
                ConditioningMode::Thm32 => self.tau_fixed,
                _ => Self::gamma(shape_n, rate_n).sample(rng),
            };
            taus.push(t);
            xs.push(m_n + normal(rng) / (kappa_n * t).sqrt());
        }
        Ok(vec![
            QuantityDraws {
                truth: x,
                draws: xs,
            },
            QuantityDraws {
                truth: tau,
                draws: taus,
            },
        ])
    }
}
