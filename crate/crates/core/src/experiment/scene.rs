use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, MeshSpec, MethodChoice, PresetId};
use super::ExperimentError;
use crate::mesh::{build_structured_mesh, fem_matrices, BlockPartition, Point, Rect, TriMesh};
use crate::spde::{matern_precision, sample_field, MaternParams, PcPrior};
use crate::twostage::{
    CoarseBasis, Family, FirstStageModel, FirstStagePriors, GammaPriors, LatentLayout,
    PropagationMethod, SecondStageModel,
};

/// Covariate surface: zero-mean Matérn field with range 0.6 and standard
/// deviation 2.
pub const COVARIATE_SIGMA: f64 = 2.0;
pub const COVARIATE_RANGE: f64 = 0.6;
/// Poisson blocks per side, quadrature points per block side, and the
/// expected count of every block.
pub const BLOCKS_PER_SIDE: usize = 8;
pub const QUAD_PER_SIDE: usize = 7;
pub const BLOCK_EXPECTED: f64 = 100.0;

/// Fixed design of one preset: mesh, covariate, sites, blocks and the two
/// stage models. Shared by every replicate.
#[derive(Clone, Debug)]
pub struct Scene {
    pub preset: PresetId,
    pub layout: Arc<LatentLayout>,
    pub w_sites: Vec<Point>,
    pub y_sites: Vec<Point>,
    pub partition: BlockPartition,
    pub first: FirstStageModel,
    coarse: [MeshSpec; 2],
}

fn mesh(spec: MeshSpec) -> Result<TriMesh, ExperimentError> {
    Ok(build_structured_mesh(
        Rect::unit(),
        spec.edge_inner,
        spec.edge_outer,
    )?)
}

/// `n` points uniform on the unit square.
pub fn uniform_sites<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| [rng.random(), rng.random()]).collect()
}

impl Scene {
    pub fn build(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let fine = mesh(config.scale.fine())?;
        let cov = MaternParams::from_interpretable(COVARIATE_SIGMA, COVARIATE_RANGE)?;
        let q = matern_precision(&fem_matrices(&fine), &cov);
        let z = sample_field(&q, &mut ChaCha8Rng::seed_from_u64(config.covariate_seed))?;
        let layout = Arc::new(if config.preset.is_spatial() {
            LatentLayout::spatial(fine, z)?
        } else {
            LatentLayout::non_spatial(fine, z)?
        });
        let mut design = ChaCha8Rng::seed_from_u64(config.design_seed);
        let w_sites = uniform_sites(config.n_w, &mut design);
        let y_sites = uniform_sites(config.n_y, &mut design);
        let partition = BlockPartition::regular(
            Rect::unit(),
            BLOCKS_PER_SIDE,
            BLOCKS_PER_SIDE,
            QUAD_PER_SIDE,
        )?;
        let first = FirstStageModel::new(
            Arc::clone(&layout),
            &w_sites,
            FirstStagePriors {
                matern: config.matern_prior.prior(),
                ..FirstStagePriors::default()
            },
        )?;
        Ok(Self {
            preset: config.preset,
            layout,
            w_sites,
            y_sites,
            partition,
            first,
            coarse: [config.scale.coarse_a(), config.scale.coarse_b()],
        })
    }

    /// Family of the preset's second stage.
    pub fn family(&self) -> Family {
        match self.preset {
            PresetId::Gaussian41 | PresetId::NonspatialGaussian | PresetId::Illustration411 => {
                Family::GaussianPoint
            }
            PresetId::PoissonClassical421
            | PresetId::NonspatialPoisson
            | PresetId::Illustration423 => Family::PoissonClassical,
            PresetId::PoissonNew422 => Family::PoissonNewSpec,
        }
    }

    /// Families fitted by the preset: both Poisson specifications for the
    /// Poisson illustration, the preset family otherwise.
    pub fn families(&self) -> Vec<Family> {
        match self.preset {
            PresetId::Illustration423 => vec![Family::PoissonClassical, Family::PoissonNewSpec],
            _ => vec![self.family()],
        }
    }

    pub fn second_stage(&self, family: Family) -> Result<SecondStageModel, ExperimentError> {
        let exposure = vec![BLOCK_EXPECTED; self.partition.len()];
        Ok(match family {
            Family::GaussianPoint => SecondStageModel::gaussian_point(
                &self.layout,
                &self.y_sites,
                GammaPriors::gaussian(),
                PcPrior::default(),
            )?,
            Family::PoissonClassical => SecondStageModel::poisson_classical(
                &self.layout,
                &self.partition,
                &exposure,
                GammaPriors::poisson(),
            )?,
            Family::PoissonNewSpec => SecondStageModel::poisson_new_spec(
                &self.layout,
                &self.partition,
                &exposure,
                GammaPriors::poisson(),
            )?,
        })
    }

    pub fn coarse_basis(&self, which: usize) -> Result<CoarseBasis, ExperimentError> {
        Ok(self.layout.coarse_basis(&mesh(self.coarse[which])?)?)
    }

    pub fn method(
        &self,
        choice: MethodChoice,
        tau_eps: f64,
        j: usize,
    ) -> Result<PropagationMethod, ExperimentError> {
        Ok(match choice {
            MethodChoice::PlugIn => PropagationMethod::PlugIn,
            MethodChoice::Resampling => PropagationMethod::Resampling { j },
            MethodChoice::FullQ => PropagationMethod::FullQ { tau_eps },
            MethodChoice::LowRankA => PropagationMethod::LowRankQ {
                basis: Arc::new(self.coarse_basis(0)?),
                tau_eps,
            },
            MethodChoice::LowRankB => PropagationMethod::LowRankQ {
                basis: Arc::new(self.coarse_basis(1)?),
                tau_eps,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic() {
        let c = ExperimentConfig::default();
        let a = Scene::build(&c).unwrap();
        let b = Scene::build(&c).unwrap();
        assert_eq!(a.w_sites, b.w_sites);
        assert_eq!(a.layout.covariate(), b.layout.covariate());
        assert_eq!(a.w_sites.len(), 80);
        assert_eq!(a.layout.mesh().num_nodes(), 225);
        assert_eq!(a.partition.len(), 64);
    }

    #[test]
    fn coarse_meshes_have_documented_sizes() {
        let s = Scene::build(&ExperimentConfig::default()).unwrap();
        assert_eq!(mesh(s.coarse[0]).unwrap().num_nodes(), 100);
        assert_eq!(mesh(s.coarse[1]).unwrap().num_nodes(), 81);
        let full = ExperimentConfig {
            scale: crate::experiment::Scale::Full,
            ..ExperimentConfig::default()
        };
        let sizes: Vec<usize> = [
            full.scale.fine(),
            full.scale.coarse_a(),
            full.scale.coarse_b(),
        ]
        .map(|m| mesh(m).unwrap().num_nodes())
        .into();
        assert_eq!(sizes, vec![900, 625, 225]);
    }
}
