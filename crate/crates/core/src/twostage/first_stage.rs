use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::TwoStageError;
use crate::lgm::{
    empirical_bayes, gaussian_approx, log_hyper_posterior_from, GaussianApprox, HyperFit, LgmSpec,
    Likelihood, NoisePrecision, Predictor,
};
use crate::mesh::{projection_matrix, BlockPartition, Point, TriMesh};
use crate::sparse::{CsrMatrix, Ordering, SymSparseMatrix};
use crate::spde::{MaternParams, MaternPrior, PcPrior, SpdeOperators};

/// Intercept and covariate slope precede the field weights.
pub const FIXED_EFFECTS: usize = 2;

/// Latent coordinates `(β0, β1, ω)` of the surface `μ(s) = β0 + β1 z(s) + ξ(s)`,
/// with the covariate `z` stored at the mesh nodes and interpolated linearly.
#[derive(Clone, Debug)]
pub struct LatentLayout {
    mesh: TriMesh,
    spde: Option<SpdeOperators>,
    covariate: Vec<f64>,
}

impl LatentLayout {
    pub fn spatial(mesh: TriMesh, covariate: Vec<f64>) -> Result<Self, TwoStageError> {
        Self::check(&mesh, &covariate)?;
        let spde = SpdeOperators::new(&crate::mesh::fem_matrices(&mesh));
        Ok(Self {
            mesh,
            spde: Some(spde),
            covariate,
        })
    }

    /// Regression on the covariate only; the mesh is used for interpolation.
    pub fn non_spatial(mesh: TriMesh, covariate: Vec<f64>) -> Result<Self, TwoStageError> {
        Self::check(&mesh, &covariate)?;
        Ok(Self {
            mesh,
            spde: None,
            covariate,
        })
    }

    fn check(mesh: &TriMesh, covariate: &[f64]) -> Result<(), TwoStageError> {
        if covariate.len() != mesh.num_nodes() {
            return Err(TwoStageError::Invalid(format!(
                "covariate has {} values for {} mesh nodes",
                covariate.len(),
                mesh.num_nodes()
            )));
        }
        Ok(())
    }

    pub fn is_spatial(&self) -> bool {
        self.spde.is_some()
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn covariate(&self) -> &[f64] {
        &self.covariate
    }

    pub fn field_dim(&self) -> usize {
        if self.is_spatial() {
            self.mesh.num_nodes()
        } else {
            0
        }
    }

    pub fn dim(&self) -> usize {
        FIXED_EFFECTS + self.field_dim()
    }

    pub fn field_precision(&self, p: &MaternParams) -> Option<SymSparseMatrix> {
        self.spde.as_ref().map(|s| s.precision(p))
    }

    /// Rows `[1, z(s), A(s)]` mapping the latent vector to `μ(s)`.
    pub fn rows(&self, points: &[Point]) -> Result<CsrMatrix, TwoStageError> {
        Ok(CsrMatrix::from_rows(self.dim(), &self.row_lists(points)?)?)
    }

    /// Rows averaging `μ` over each block's quadrature points.
    pub fn block_rows(&self, partition: &BlockPartition) -> Result<CsrMatrix, TwoStageError> {
        let mut rows = Vec::with_capacity(partition.len());
        for b in 0..partition.len() {
            let pts = partition.quad_points(b);
            let inv = 1.0 / pts.len() as f64;
            rows.push(
                self.row_lists(pts)?
                    .into_iter()
                    .flatten()
                    .map(|(c, v)| (c, v * inv))
                    .collect(),
            );
        }
        Ok(CsrMatrix::from_rows(self.dim(), &rows)?)
    }

    fn row_lists(&self, points: &[Point]) -> Result<Vec<Vec<(usize, f64)>>, TwoStageError> {
        let a = projection_matrix(&self.mesh, points)?.into_matrix();
        let z = a.mul_vec(&self.covariate)?;
        Ok((0..points.len())
            .map(|r| {
                let mut row = vec![(0, 1.0), (1, z[r])];
                if self.is_spatial() {
                    let (cols, vals) = a.row(r);
                    row.extend(cols.iter().zip(vals).map(|(&c, &v)| (FIXED_EFFECTS + c, v)));
                }
                row
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStagePriors {
    /// Prior standard deviations of `β0` and `β1` (zero-mean normals).
    pub beta_sd: [f64; 2],
    /// Prior on the observation noise standard deviation.
    pub noise: PcPrior,
    pub matern: MaternPrior,
}

impl Default for FirstStagePriors {
    fn default() -> Self {
        Self {
            beta_sd: [10.0, 5.0],
            noise: PcPrior::default(),
            matern: MaternPrior::default(),
        }
    }
}

/// Observations `w(s_i) = μ(s_i) + e1(s_i)` at fixed sites. The
/// hyperparameters are `(log τ_e1, log τ, log κ)` for spatial layouts and
/// `(log τ_e1)` otherwise, with `τ_e1` the noise precision.
#[derive(Clone, Debug)]
pub struct FirstStageModel {
    layout: Arc<LatentLayout>,
    design: CsrMatrix,
    priors: FirstStagePriors,
}

impl FirstStageModel {
    pub fn new(
        layout: Arc<LatentLayout>,
        sites: &[Point],
        priors: FirstStagePriors,
    ) -> Result<Self, TwoStageError> {
        if sites.len() < 3 {
            return Err(TwoStageError::Invalid(format!(
                "{} first-stage sites; at least 3 are needed",
                sites.len()
            )));
        }
        let design = layout.rows(sites)?;
        Ok(Self {
            layout,
            design,
            priors,
        })
    }

    pub fn layout(&self) -> &Arc<LatentLayout> {
        &self.layout
    }

    pub fn design(&self) -> &CsrMatrix {
        &self.design
    }

    pub fn priors(&self) -> &FirstStagePriors {
        &self.priors
    }

    pub fn n_obs(&self) -> usize {
        self.design.rows()
    }

    pub fn hyper_dim(&self) -> usize {
        if self.layout.is_spatial() {
            3
        } else {
            1
        }
    }

    /// Hyperparameter vector for a noise standard deviation and field parameters.
    pub fn theta_from(&self, sigma_e1: f64, field: Option<MaternParams>) -> Vec<f64> {
        let mut t = vec![-2.0 * sigma_e1.ln()];
        if self.layout.is_spatial() {
            let p = field.unwrap_or_else(|| self.priors.matern.mean());
            t.extend([p.log_tau, p.log_kappa]);
        }
        t
    }

    /// Optimizer start: unit noise and the Matérn prior mean.
    pub fn theta_init(&self) -> Vec<f64> {
        self.theta_from(1.0, None)
    }

    pub fn spec(&self) -> LgmSpec {
        let layout = Arc::clone(&self.layout);
        let beta_prec: Vec<f64> = self.priors.beta_sd.iter().map(|s| 1.0 / (s * s)).collect();
        let priors = self.priors;
        let spatial = layout.is_spatial();
        LgmSpec {
            dim: layout.dim(),
            hyper_dim: self.hyper_dim(),
            prior_precision: Arc::new(move |theta: &[f64]| {
                let fixed = SymSparseMatrix::diagonal(&beta_prec);
                if !spatial {
                    return Ok(fixed);
                }
                let p = MaternParams {
                    log_tau: theta[1],
                    log_kappa: theta[2],
                };
                let q = layout
                    .field_precision(&p)
                    .expect("spatial layout has operators");
                Ok(SymSparseMatrix::block_diag(&[&fixed, &q]))
            }),
            prior_mean: vec![0.0; self.layout.dim()],
            predictor: Predictor::Linear {
                design: self.design.clone(),
                offset: vec![0.0; self.n_obs()],
            },
            likelihood: Likelihood::Gaussian(NoisePrecision::Hyper(0)),
            hyperprior: Arc::new(move |theta: &[f64]| {
                let mut lp = priors.noise.logpdf_log_precision(theta[0]);
                if spatial {
                    lp += priors.matern.logpdf(&MaternParams {
                        log_tau: theta[1],
                        log_kappa: theta[2],
                    });
                }
                lp
            }),
            ordering: Ordering::Rcm,
        }
    }

    /// Empirical-Bayes hyperparameters and the latent approximation there.
    pub fn fit(&self, w: &[f64]) -> Result<FirstStageFit, TwoStageError> {
        let spec = self.spec();
        let hyper = empirical_bayes(&spec, w, &self.theta_init())?;
        let approx = gaussian_approx(&spec, &hyper.theta_mode, w)?;
        Ok(FirstStageFit {
            hyper,
            approx,
            spatial: self.layout.is_spatial(),
        })
    }

    /// Latent approximation at fixed hyperparameters.
    pub fn fit_at(&self, w: &[f64], theta: &[f64]) -> Result<FirstStageFit, TwoStageError> {
        let spec = self.spec();
        let approx = gaussian_approx(&spec, theta, w)?;
        let v = log_hyper_posterior_from(&spec, theta, &approx);
        let hyper = HyperFit {
            theta_mode: theta.to_vec(),
            log_post_at_mode: v,
            trace: vec![(theta.to_vec(), v)],
        };
        Ok(FirstStageFit {
            hyper,
            approx,
            spatial: self.layout.is_spatial(),
        })
    }
}

/// First-stage posterior: hyperparameter mode and `N(x̂, Q_x1⁻¹)` at it.
#[derive(Clone, Debug)]
pub struct FirstStageFit {
    pub hyper: HyperFit,
    pub approx: GaussianApprox,
    spatial: bool,
}

impl FirstStageFit {
    pub fn theta(&self) -> &[f64] {
        &self.hyper.theta_mode
    }

    pub fn sigma_e1(&self) -> f64 {
        (-0.5 * self.hyper.theta_mode[0]).exp()
    }

    pub fn matern(&self) -> Option<MaternParams> {
        self.spatial.then(|| MaternParams {
            log_tau: self.hyper.theta_mode[1],
            log_kappa: self.hyper.theta_mode[2],
        })
    }

    /// Posterior mean and standard deviation of each row functional `r·x1`.
    pub fn functional_moments(&self, rows: &CsrMatrix) -> Result<Vec<(f64, f64)>, TwoStageError> {
        let n = self.approx.dim();
        (0..rows.rows())
            .map(|r| {
                let (cols, vals) = rows.row(r);
                let mut e = vec![0.0; n];
                cols.iter().zip(vals).for_each(|(&c, &v)| e[c] = v);
                let s = self.approx.factor.solve(&e)?;
                let var: f64 = e.iter().zip(&s).map(|(a, b)| a * b).sum();
                Ok((rows.row_dot(r, &self.approx.mode), var.max(0.0).sqrt()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, Rect};

    fn layout() -> Arc<LatentLayout> {
        let mesh = build_structured_mesh(Rect::unit(), 0.25, 0.5).unwrap();
        let z: Vec<f64> = mesh.nodes().iter().map(|p| p[0] - p[1]).collect();
        Arc::new(LatentLayout::spatial(mesh, z).unwrap())
    }

    #[test]
    fn rows_reproduce_covariate_and_basis() {
        let l = layout();
        let pts = [[0.3, 0.6], [0.9, 0.1]];
        let rows = l.rows(&pts).unwrap();
        let mut x = vec![0.0; l.dim()];
        x[1] = 1.0;
        let z = rows.mul_vec(&x).unwrap();
        assert!((z[0] + 0.3).abs() < 1e-12 && (z[1] - 0.8).abs() < 1e-12);
        let mut ones = vec![1.0; l.dim()];
        ones[1] = 0.0;
        assert!(rows
            .mul_vec(&ones)
            .unwrap()
            .iter()
            .all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn too_few_sites_are_rejected() {
        assert!(
            FirstStageModel::new(layout(), &[[0.5, 0.5]], FirstStagePriors::default()).is_err()
        );
    }

    #[test]
    fn empty_data_is_an_error() {
        let m = FirstStageModel::new(
            layout(),
            &[[0.1, 0.1], [0.5, 0.5], [0.9, 0.2]],
            FirstStagePriors::default(),
        )
        .unwrap();
        assert!(m.fit(&[]).is_err());
    }
}
