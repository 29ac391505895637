use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::sbc::Quantity;
use crate::spde::{MaternParams, MaternPrior};
use crate::twostage::Truth;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PresetId {
    Gaussian41,
    PoissonClassical421,
    PoissonNew422,
    NonspatialGaussian,
    NonspatialPoisson,
    Illustration411,
    Illustration423,
}

impl PresetId {
    pub const ALL: [PresetId; 7] = [
        PresetId::Gaussian41,
        PresetId::PoissonClassical421,
        PresetId::PoissonNew422,
        PresetId::NonspatialGaussian,
        PresetId::NonspatialPoisson,
        PresetId::Illustration411,
        PresetId::Illustration423,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            PresetId::Gaussian41 => "gaussian-4-1",
            PresetId::PoissonClassical421 => "poisson-classical-4-2-1",
            PresetId::PoissonNew422 => "poisson-new-4-2-2",
            PresetId::NonspatialGaussian => "nonspatial-gaussian",
            PresetId::NonspatialPoisson => "nonspatial-poisson",
            PresetId::Illustration411 => "illustration-4-1-1",
            PresetId::Illustration423 => "illustration-4-2-3",
        }
    }

    pub fn is_illustration(&self) -> bool {
        matches!(self, PresetId::Illustration411 | PresetId::Illustration423)
    }

    pub fn is_spatial(&self) -> bool {
        !matches!(
            self,
            PresetId::NonspatialGaussian | PresetId::NonspatialPoisson
        )
    }

    /// Generating values of the illustration presets.
    pub fn illustration_truth(&self) -> Option<Truth> {
        let field = |sigma: f64, rho: f64| {
            Some(MaternParams::from_interpretable(sigma, rho).expect("positive"))
        };
        match self {
            PresetId::Illustration411 => Some(Truth {
                beta: [10.0, 3.0],
                gamma: [10.0, 1.5],
                gamma_extra: vec![],
                sigma_e1: 1.0,
                sigma_e2: 1.0,
                field: field(4.0, 0.6),
            }),
            PresetId::Illustration423 => Some(Truth {
                beta: [10.0, 3.0],
                gamma: [-3.0, 0.15],
                gamma_extra: vec![],
                sigma_e1: 1.0,
                sigma_e2: 0.0,
                field: field(0.6, 4.0),
            }),
            _ => None,
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PresetId {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| ExperimentError::UnknownPreset(s.to_string()))
    }
}

impl Serialize for PresetId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for PresetId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Mesh resolution: `scaled` for desk runs, `full` for the published
/// edge lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Scaled,
    Full,
}

/// Inner and outer edge lengths of one mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub edge_inner: f64,
    pub edge_outer: f64,
}

impl Scale {
    pub fn fine(&self) -> MeshSpec {
        match self {
            Scale::Scaled => MeshSpec {
                edge_inner: 0.1,
                edge_outer: 0.25,
            },
            Scale::Full => MeshSpec {
                edge_inner: 0.04,
                edge_outer: 0.1,
            },
        }
    }

    pub fn coarse_a(&self) -> MeshSpec {
        match self {
            Scale::Scaled => MeshSpec {
                edge_inner: 0.2,
                edge_outer: 0.25,
            },
            Scale::Full => MeshSpec {
                edge_inner: 0.05,
                edge_outer: 0.2,
            },
        }
    }

    pub fn coarse_b(&self) -> MeshSpec {
        match self {
            Scale::Scaled => MeshSpec {
                edge_inner: 0.25,
                edge_outer: 0.25,
            },
            Scale::Full => MeshSpec {
                edge_inner: 0.1,
                edge_outer: 0.25,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MethodChoice {
    PlugIn,
    Resampling,
    FullQ,
    LowRankA,
    LowRankB,
}

impl MethodChoice {
    pub const ALL: [MethodChoice; 5] = [
        MethodChoice::PlugIn,
        MethodChoice::Resampling,
        MethodChoice::FullQ,
        MethodChoice::LowRankA,
        MethodChoice::LowRankB,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            MethodChoice::PlugIn => "plugin",
            MethodChoice::Resampling => "resampling",
            MethodChoice::FullQ => "full-q",
            MethodChoice::LowRankA => "lowrank-q:a",
            MethodChoice::LowRankB => "lowrank-q:b",
        }
    }

    /// Identifier safe for file names.
    pub fn file_stem(&self) -> String {
        self.id().replace(':', "-")
    }
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodChoice {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown method {s:?}")))
    }
}

impl Serialize for MethodChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for MethodChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// All hyperparameters drawn from the prior.
    #[default]
    Alg2,
    /// Field parameters fixed.
    Alg3,
    /// All first-stage hyperparameters fixed.
    Thm32,
}

impl FromStr for Algorithm {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alg2" => Ok(Algorithm::Alg2),
            "alg3" => Ok(Algorithm::Alg3),
            "thm32" => Ok(Algorithm::Thm32),
            _ => Err(ExperimentError::Config(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// How the two dispersion entries of the displayed Matérn prior are read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaternPriorReading {
    /// As precisions; reproduces the stated plausible parameter ranges.
    #[default]
    Precision,
    /// As variances, verbatim.
    Variance,
}

impl MaternPriorReading {
    pub fn prior(&self) -> MaternPrior {
        match self {
            MaternPriorReading::Precision => MaternPrior::precision_reading(),
            MaternPriorReading::Variance => MaternPrior::default(),
        }
    }
}

/// Values held fixed by the conditional algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedHypers {
    pub field_sigma: f64,
    pub field_range: f64,
    pub sigma_e1: f64,
}

impl Default for FixedHypers {
    fn default() -> Self {
        Self {
            field_sigma: 0.6,
            field_range: 1.0,
            sigma_e1: 1.0,
        }
    }
}

/// Complete description of a run. Every field has a default, so a JSON
/// document may name only the fields it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: PresetId,
    pub scale: Scale,
    pub k: usize,
    pub l: usize,
    pub method: MethodChoice,
    pub algorithm: Algorithm,
    pub tau_eps: f64,
    pub j: usize,
    pub seed: u64,
    /// Seed of the observation sites.
    pub design_seed: u64,
    /// Seed of the covariate surface.
    pub covariate_seed: u64,
    pub n_w: usize,
    pub n_y: usize,
    pub quantities: Vec<Quantity>,
    pub fixed: FixedHypers,
    pub matern_prior: MaternPriorReading,
    /// Generating values for illustrations; defaults to the preset's.
    pub truth: Option<Truth>,
    /// Error precision scales for `sweep-tau`.
    pub tau_values: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: PresetId::Gaussian41,
            scale: Scale::Scaled,
            k: 200,
            l: 100,
            method: MethodChoice::PlugIn,
            algorithm: Algorithm::Alg2,
            tau_eps: 1.0,
            j: 30,
            seed: 1,
            design_seed: 101,
            covariate_seed: 202,
            n_w: 80,
            n_y: 80,
            quantities: Quantity::defaults(),
            fixed: FixedHypers::default(),
            matern_prior: MaternPriorReading::Precision,
            truth: None,
            tau_values: vec![1.0, 1e2, 1e4, 1e8],
        }
    }
}

impl ExperimentConfig {
    pub fn for_preset(preset: PresetId) -> Self {
        Self {
            preset,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.k == 0 || self.l == 0 {
            return bad(format!(
                "K = {} and L = {} must be positive",
                self.k, self.l
            ));
        }
        if self.j == 0 {
            return bad("J must be positive".into());
        }
        if !(self.tau_eps > 0.0 && self.tau_eps.is_finite()) {
            return bad(format!("tau_eps must be positive, got {}", self.tau_eps));
        }
        if self.tau_values.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("tau values must be positive".into());
        }
        if self.n_w < 3 || self.n_y < 1 {
            return bad(format!(
                "need n_w ≥ 3 and n_y ≥ 1, got {} and {}",
                self.n_w, self.n_y
            ));
        }
        let f = &self.fixed;
        if [f.field_sigma, f.field_range, f.sigma_e1]
            .iter()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return bad("fixed hyperparameters must be positive".into());
        }
        if !self.preset.is_spatial()
            && matches!(self.method, MethodChoice::LowRankA | MethodChoice::LowRankB)
        {
            return bad(format!("{} needs a spatial preset", self.method));
        }
        if self.quantities.is_empty() {
            return bad("no test quantities".into());
        }
        Ok(())
    }

    /// Truth for illustrations: the override or the preset's values.
    pub fn illustration_truth(&self) -> Option<Truth> {
        self.truth
            .clone()
            .or_else(|| self.preset.illustration_truth())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for p in PresetId::ALL {
            assert_eq!(p.id().parse::<PresetId>().unwrap(), p);
        }
        for m in MethodChoice::ALL {
            assert_eq!(m.id().parse::<MethodChoice>().unwrap(), m);
        }
        assert!(matches!(
            "gaussian-9".parse::<PresetId>(),
            Err(ExperimentError::UnknownPreset(_))
        ));
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"preset": "nonspatial-gaussian", "k": 50, "method": "lowrank-q:b"}"#,
        );
        assert!(c.is_err());
        let c = ExperimentConfig::from_json(
            r#"{"preset": "nonspatial-gaussian", "k": 50, "quantities": ["gamma1"]}"#,
        )
        .unwrap();
        assert_eq!(c.k, 50);
        assert_eq!(c.l, 100);
        assert_eq!(c.quantities, vec![Quantity::Gamma1]);
        let round = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
        assert!(ExperimentConfig::from_json(r#"{"kk": 3}"#).is_err());
    }

    #[test]
    fn illustration_truths_match_presets() {
        let t = PresetId::Illustration411.illustration_truth().unwrap();
        assert_eq!((t.beta, t.gamma), ([10.0, 3.0], [10.0, 1.5]));
        let (s, r) = t.field.unwrap().to_interpretable();
        assert!((s - 4.0).abs() < 1e-12 && (r - 0.6).abs() < 1e-12);
        let t = PresetId::Illustration423.illustration_truth().unwrap();
        assert_eq!(t.gamma, [-3.0, 0.15]);
        assert!(PresetId::Gaussian41.illustration_truth().is_none());
    }
}
