use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::harness::{QuantityDraws, ReplicateModel};
use super::SbcError;
use crate::lgm::{hyper_curvature, sample_latent};
use crate::sparse::{factorize, SymSparseMatrix};
use crate::spde::MaternParams;
use crate::twostage::{
    fit_method, simulate_two_stage, Family, FirstStageFit, FirstStageModel, PropagationMethod,
    SecondStageModel, Truth, TwoStageError, FIXED_EFFECTS, GAMMA0, GAMMA1,
};

/// Hyperparameters held fixed while generating replicates. Inference
/// always treats them as unknown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Conditioning {
    /// Every hyperparameter is drawn from its prior.
    None,
    /// Field parameters fixed; the first-stage noise is drawn.
    FixLatentHyper { field: MaternParams },
    /// All first-stage hyperparameters fixed.
    FixAllHyper { sigma_e1: f64, field: MaternParams },
}

impl Conditioning {
    /// Default conditioning values: field standard deviation 0.6 and
    /// range 1, first-stage noise standard deviation 1.
    pub fn default_field() -> MaternParams {
        MaternParams::from_interpretable(0.6, 1.0).expect("positive defaults")
    }

    pub fn validate(&self) -> Result<(), SbcError> {
        let finite = |p: &MaternParams| p.log_tau.is_finite() && p.log_kappa.is_finite();
        let ok = match self {
            Conditioning::None => true,
            Conditioning::FixLatentHyper { field } => finite(field),
            Conditioning::FixAllHyper { sigma_e1, field } => {
                finite(field) && *sigma_e1 > 0.0 && sigma_e1.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SbcError::Invalid(format!(
                "conditioning values must be finite and positive: {self:?}"
            )))
        }
    }
}

/// Scalar test quantity of a two-stage replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quantity {
    Gamma0,
    Gamma1,
    Beta(usize),
    SigmaE1,
    FieldSigma,
    FieldRange,
    /// Field weight at a mesh node.
    Node(usize),
}

impl Quantity {
    pub fn defaults() -> Vec<Quantity> {
        vec![Quantity::Gamma0, Quantity::Gamma1]
    }

    fn needs_gamma(&self) -> bool {
        matches!(self, Quantity::Gamma0 | Quantity::Gamma1)
    }

    fn needs_latent(&self) -> bool {
        matches!(self, Quantity::Beta(_) | Quantity::Node(_))
    }

    fn needs_hyper(&self) -> bool {
        matches!(
            self,
            Quantity::SigmaE1 | Quantity::FieldSigma | Quantity::FieldRange
        )
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Gamma0 => write!(f, "gamma0"),
            Quantity::Gamma1 => write!(f, "gamma1"),
            Quantity::Beta(i) => write!(f, "beta{i}"),
            Quantity::SigmaE1 => write!(f, "sigma_e1"),
            Quantity::FieldSigma => write!(f, "field_sigma"),
            Quantity::FieldRange => write!(f, "field_range"),
            Quantity::Node(k) => write!(f, "node{k}"),
        }
    }
}

impl FromStr for Quantity {
    type Err = SbcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SbcError::Invalid(format!("unknown quantity {s:?}"));
        Ok(match s {
            "gamma0" => Quantity::Gamma0,
            "gamma1" => Quantity::Gamma1,
            "sigma_e1" => Quantity::SigmaE1,
            "field_sigma" => Quantity::FieldSigma,
            "field_range" => Quantity::FieldRange,
            _ => {
                if let Some(i) = s.strip_prefix("beta") {
                    Quantity::Beta(i.parse().map_err(|_| bad())?)
                } else if let Some(k) = s.strip_prefix("node") {
                    Quantity::Node(k.parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl Serialize for Quantity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Two-stage generative model paired with a propagation method.
#[derive(Clone, Debug)]
pub struct TwoStageSbc {
    pub first: FirstStageModel,
    pub second: SecondStageModel,
    pub method: PropagationMethod,
    pub conditioning: Conditioning,
    pub quantities: Vec<Quantity>,
}

/// Finite-difference step for the hyperparameter curvature.
const HYPER_STEP: f64 = 0.05;

impl TwoStageSbc {
    pub fn validate(&self) -> Result<(), SbcError> {
        self.conditioning.validate()?;
        if self.quantities.is_empty() {
            return Err(SbcError::Invalid("no test quantities".into()));
        }
        let spatial = self.first.layout().is_spatial();
        for q in &self.quantities {
            let ok = match q {
                Quantity::Beta(i) => *i < FIXED_EFFECTS,
                Quantity::Node(k) => *k < self.first.layout().field_dim(),
                Quantity::FieldSigma | Quantity::FieldRange => spatial,
                _ => true,
            };
            if !ok {
                return Err(SbcError::Invalid(format!(
                    "quantity {q} does not apply to this model"
                )));
            }
        }
        Ok(())
    }

    /// Draws the generating values according to the conditioning mode.
    pub fn draw_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> Truth {
        let p1 = self.first.priors();
        let sigma_e1 = match self.conditioning {
            Conditioning::FixAllHyper { sigma_e1, .. } => sigma_e1,
            _ => p1.noise.sample(rng),
        };
        let field = match self.conditioning {
            Conditioning::None => p1.matern.sample(rng),
            Conditioning::FixLatentHyper { field } | Conditioning::FixAllHyper { field, .. } => {
                field
            }
        };
        let mut normal = |m: f64, s: f64| -> f64 { m + s * rng.sample::<f64, _>(StandardNormal) };
        let beta = [normal(0.0, p1.beta_sd[0]), normal(0.0, p1.beta_sd[1])];
        let g = self.second.priors;
        let gamma = [normal(g.mean[0], g.sd[0]), normal(g.mean[1], g.sd[1])];
        let gamma_extra = match self.second.extra() {
            Some(x) => (0..self.second.n_extra())
                .map(|_| normal(0.0, x.prior_sd))
                .collect(),
            None => Vec::new(),
        };
        let sigma_e2 = match self.second.family {
            Family::GaussianPoint => self.second.noise.sample(rng),
            _ => 0.0,
        };
        Truth {
            beta,
            gamma,
            gamma_extra,
            sigma_e1,
            sigma_e2,
            field: self.first.layout().is_spatial().then_some(field),
        }
    }

    fn hyper_draws(
        &self,
        f1: &FirstStageFit,
        w: &[f64],
        l: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>, TwoStageError> {
        let mode = f1.theta();
        let h = hyper_curvature(&self.first.spec(), w, mode, HYPER_STEP)?;
        let q = SymSparseMatrix::from_dense(&h)?;
        let factor = factorize(&q)?;
        (0..l)
            .map(|_| Ok(factor.sample_gaussian(mode, rng)?))
            .collect()
    }

    fn run(&self, rng: &mut ChaCha8Rng, l: usize) -> Result<Vec<QuantityDraws>, TwoStageError> {
        let truth = self.draw_truth(rng);
        let data = simulate_two_stage(&self.first, &self.second, &truth, rng)?;
        let f1 = self.first.fit(&data.w)?;

        let gammas = if self.quantities.iter().any(Quantity::needs_gamma) {
            let fit = fit_method(&f1, &self.second, &data.y, &self.method, rng)?;
            fit.draw_gammas(l, rng)
        } else {
            Vec::new()
        };
        let latents = if self.quantities.iter().any(Quantity::needs_latent) {
            sample_latent(&f1.approx, l, rng)
        } else {
            Vec::new()
        };
        let hypers = if self.quantities.iter().any(Quantity::needs_hyper) {
            self.hyper_draws(&f1, &data.w, l, rng)?
        } else {
            Vec::new()
        };
        let field_of = |t: &[f64]| {
            MaternParams {
                log_tau: t[1],
                log_kappa: t[2],
            }
            .to_interpretable()
        };
        let true_field = truth.field.map(|p| p.to_interpretable());

        Ok(self
            .quantities
            .iter()
            .map(|q| match *q {
                Quantity::Gamma0 => QuantityDraws {
                    truth: truth.gamma[0],
                    draws: gammas.iter().map(|g| g[GAMMA0]).collect(),
                },
                Quantity::Gamma1 => QuantityDraws {
                    truth: truth.gamma[1],
                    draws: gammas.iter().map(|g| g[GAMMA1]).collect(),
                },
                Quantity::Beta(i) => QuantityDraws {
                    truth: data.x1[i],
                    draws: latents.iter().map(|x| x[i]).collect(),
                },
                Quantity::Node(k) => QuantityDraws {
                    truth: data.x1[FIXED_EFFECTS + k],
                    draws: latents.iter().map(|x| x[FIXED_EFFECTS + k]).collect(),
                },
                Quantity::SigmaE1 => QuantityDraws {
                    truth: truth.sigma_e1,
                    draws: hypers.iter().map(|t| (-0.5 * t[0]).exp()).collect(),
                },
                Quantity::FieldSigma => QuantityDraws {
                    truth: true_field.map_or(f64::NAN, |f| f.0),
                    draws: hypers.iter().map(|t| field_of(t).0).collect(),
                },
                Quantity::FieldRange => QuantityDraws {
                    truth: true_field.map_or(f64::NAN, |f| f.1),
                    draws: hypers.iter().map(|t| field_of(t).1).collect(),
                },
            })
            .collect())
    }
}

impl ReplicateModel for TwoStageSbc {
    fn quantity_ids(&self) -> Vec<String> {
        self.quantities.iter().map(Quantity::to_string).collect()
    }

    fn replicate(&self, rng: &mut ChaCha8Rng, l: usize) -> Result<Vec<QuantityDraws>, String> {
        self.run(rng, l).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantity_ids_round_trip() {
        for q in [
            Quantity::Gamma0,
            Quantity::Gamma1,
            Quantity::Beta(1),
            Quantity::SigmaE1,
            Quantity::FieldSigma,
            Quantity::FieldRange,
            Quantity::Node(42),
        ] {
            assert_eq!(q.to_string().parse::<Quantity>().unwrap(), q);
        }
        assert!("delta".parse::<Quantity>().is_err());
        assert!("nodex".parse::<Quantity>().is_err());
    }

    #[test]
    fn conditioning_validation() {
        let field = Conditioning::default_field();
        assert!(Conditioning::FixAllHyper {
            sigma_e1: 1.0,
            field
        }
        .validate()
        .is_ok());
        assert!(Conditioning::FixAllHyper {
            sigma_e1: 0.0,
            field
        }
        .validate()
        .is_err());
        let (s, r) = field.to_interpretable();
        assert!((s - 0.6).abs() < 1e-12 && (r - 1.0).abs() < 1e-12);
    }
}
