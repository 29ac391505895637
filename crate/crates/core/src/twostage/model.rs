use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::first_stage::LatentLayout;
use super::fit::GammaLaw;
use super::TwoStageError;
use crate::lgm::{
    empirical_bayes_from, gaussian_approx_from, GaussianApprox, LgmSpec, Likelihood,
    NelderMeadOptions, NoisePrecision, NonlinearPredictor, Predictor,
};
use crate::mesh::{BlockPartition, Point};
use crate::sparse::{CsrMatrix, Ordering, SymSparseMatrix};
use crate::spde::PcPrior;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Gaussian observations of `γ0 + γ1 μ(s_j)` at point sites.
    GaussianPoint,
    /// Block counts with log rate `γ0 + γ1 · mean_B μ`.
    PoissonClassical,
    /// Block counts with rate `mean_B exp(γ0 + γ1 μ)`.
    PoissonNewSpec,
}

/// Independent normal priors on `γ0` and `γ1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPriors {
    pub mean: [f64; 2],
    pub sd: [f64; 2],
}

impl GammaPriors {
    pub fn gaussian() -> Self {
        Self {
            mean: [0.0, 0.0],
            sd: [10.0, 3.0],
        }
    }

    pub fn poisson() -> Self {
        Self {
            mean: [-2.0, 0.0],
            sd: [1.5, 0.1],
        }
    }
}

/// Additional observation-level covariates with coefficients `γ2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtraCovariates {
    /// One row of covariate values per observation.
    pub values: Vec<Vec<f64>>,
    /// Prior standard deviation of every `γ2` coefficient (zero mean).
    pub prior_sd: f64,
}

/// Second-stage model. `map` sends the first-stage latent vector to the
/// exposure at each evaluation point: the observation sites, block
/// averages, or quadrature points grouped by block.
#[derive(Clone, Debug)]
pub struct SecondStageModel {
    pub family: Family,
    map: CsrMatrix,
    groups: Vec<Range<usize>>,
    offsets: Vec<f64>,
    pub priors: GammaPriors,
    pub noise: PcPrior,
    extra: Option<ExtraCovariates>,
}

impl SecondStageModel {
    pub fn gaussian_point(
        layout: &LatentLayout,
        sites: &[Point],
        priors: GammaPriors,
        noise: PcPrior,
    ) -> Result<Self, TwoStageError> {
        let map = layout.rows(sites)?;
        let n = map.rows();
        Self::from_parts(
            Family::GaussianPoint,
            map,
            Vec::new(),
            vec![0.0; n],
            priors,
            noise,
        )
    }

    pub fn poisson_classical(
        layout: &LatentLayout,
        partition: &BlockPartition,
        exposure: &[f64],
        priors: GammaPriors,
    ) -> Result<Self, TwoStageError> {
        let map = layout.block_rows(partition)?;
        Self::from_parts(
            Family::PoissonClassical,
            map,
            Vec::new(),
            log_offsets(exposure)?,
            priors,
            PcPrior::default(),
        )
    }

    pub fn poisson_new_spec(
        layout: &LatentLayout,
        partition: &BlockPartition,
        exposure: &[f64],
        priors: GammaPriors,
    ) -> Result<Self, TwoStageError> {
        let map = layout.rows(&partition.all_quad_points())?;
        let mut groups = Vec::with_capacity(partition.len());
        let mut start = 0;
        for b in 0..partition.len() {
            let n = partition.quad_points(b).len();
            groups.push(start..start + n);
            start += n;
        }
        Self::from_parts(
            Family::PoissonNewSpec,
            map,
            groups,
            log_offsets(exposure)?,
            priors,
            PcPrior::default(),
        )
    }

    /// Validating constructor. `groups` partitions the map rows into
    /// observations for the aggregated family and is empty otherwise.
    pub fn from_parts(
        family: Family,
        map: CsrMatrix,
        groups: Vec<Range<usize>>,
        offsets: Vec<f64>,
        priors: GammaPriors,
        noise: PcPrior,
    ) -> Result<Self, TwoStageError> {
        let n_obs = if family == Family::PoissonNewSpec {
            let mut next = 0;
            for g in &groups {
                if g.start != next || g.is_empty() {
                    return Err(TwoStageError::Invalid(
                        "aggregation groups must tile the map rows".into(),
                    ));
                }
                next = g.end;
            }
            if next != map.rows() {
                return Err(TwoStageError::Invalid(
                    "aggregation groups must tile the map rows".into(),
                ));
            }
            groups.len()
        } else {
            if !groups.is_empty() {
                return Err(TwoStageError::Invalid(
                    "only the aggregated family takes groups".into(),
                ));
            }
            map.rows()
        };
        if offsets.len() != n_obs {
            return Err(TwoStageError::Invalid(format!(
                "{} offsets for {n_obs} observations",
                offsets.len()
            )));
        }
        if priors.sd.iter().any(|s| !(*s > 0.0)) {
            return Err(TwoStageError::Invalid(
                "prior standard deviations must be positive".into(),
            ));
        }
        Ok(Self {
            family,
            map,
            groups,
            offsets,
            priors,
            noise,
            extra: None,
        })
    }

    pub fn with_extra(mut self, extra: ExtraCovariates) -> Result<Self, TwoStageError> {
        let p = extra.values.first().map_or(0, Vec::len);
        if extra.values.len() != self.n_obs() || extra.values.iter().any(|r| r.len() != p) || p == 0
        {
            return Err(TwoStageError::Invalid(
                "extra covariates need one equal-length row per observation".into(),
            ));
        }
        if !(extra.prior_sd > 0.0) {
            return Err(TwoStageError::Invalid(
                "extra covariate prior sd must be positive".into(),
            ));
        }
        self.extra = Some(extra);
        Ok(self)
    }

    pub fn map(&self) -> &CsrMatrix {
        &self.map
    }

    /// Copy with a different exposure map of the same shape.
    pub fn with_map(&self, map: CsrMatrix) -> Result<Self, TwoStageError> {
        if map.rows() != self.map.rows() {
            return Err(TwoStageError::Invalid(
                "replacement map changes the number of evaluation points".into(),
            ));
        }
        Ok(Self {
            map,
            ..self.clone()
        })
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn n_obs(&self) -> usize {
        if self.family == Family::PoissonNewSpec {
            self.groups.len()
        } else {
            self.map.rows()
        }
    }

    pub fn n_eval(&self) -> usize {
        self.map.rows()
    }

    pub fn n_extra(&self) -> usize {
        self.extra.as_ref().map_or(0, |e| e.values[0].len())
    }

    pub fn extra(&self) -> Option<&ExtraCovariates> {
        self.extra.as_ref()
    }

    /// `(log τ_e2)` for the Gaussian family, empty for Poisson.
    pub fn hyper_dim(&self) -> usize {
        usize::from(self.family == Family::GaussianPoint)
    }

    /// Linear predictor per observation given exposures at the evaluation
    /// points, `γ = (γ0, γ1)` and extra coefficients.
    pub fn linear_predictor(&self, h: &[f64], gamma: [f64; 2], gamma_extra: &[f64]) -> Vec<f64> {
        let eta_q: Vec<f64> = h.iter().map(|v| gamma[0] + gamma[1] * v).collect();
        let mut eta: Vec<f64> = if self.family == Family::PoissonNewSpec {
            self.groups
                .iter()
                .map(|g| log_mean_exp(&eta_q[g.clone()]))
                .collect()
        } else {
            eta_q
        };
        for (i, e) in eta.iter_mut().enumerate() {
            *e += self.offsets[i];
            if let Some(x) = &self.extra {
                *e += x.values[i]
                    .iter()
                    .zip(gamma_extra)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        eta
    }
}

fn log_offsets(exposure: &[f64]) -> Result<Vec<f64>, TwoStageError> {
    if exposure.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(TwoStageError::Invalid(
            "expected counts must be positive".into(),
        ));
    }
    Ok(exposure.iter().map(|e| e.ln()).collect())
}

fn log_mean_exp(v: &[f64]) -> f64 {
    crate::util::log_sum_exp(v) - (v.len() as f64).ln()
}

/// Error component added to the exposure: `v = h0 + E ε` with
/// `ε ~ N(0, Q_ε⁻¹)`.
#[derive(Clone, Debug)]
pub(crate) struct ErrorComponent {
    pub map: CsrMatrix,
    pub precision: SymSparseMatrix,
}

/// Predictor over `u = (γ0, γ1, γ2, ε)`.
struct PropagatedPredictor {
    h0: Vec<f64>,
    err: Option<CsrMatrix>,
    groups: Vec<Range<usize>>,
    offsets: Vec<f64>,
    extra: Option<Vec<Vec<f64>>>,
    n_extra: usize,
    dim: usize,
}

impl NonlinearPredictor for PropagatedPredictor {
    fn n_obs(&self) -> usize {
        self.offsets.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &[f64]) -> (Vec<f64>, CsrMatrix) {
        let (g0, g1) = (u[0], u[1]);
        let base = 2 + self.n_extra;
        let mut v = self.h0.clone();
        if let Some(e) = &self.err {
            let shift = e.mul_vec(&u[base..]).expect("error map matches latent");
            v.iter_mut().zip(&shift).for_each(|(a, b)| *a += b);
        }
        let eta_q: Vec<f64> = v.iter().map(|x| g0 + g1 * x).collect();
        let row_q = |q: usize, scale: f64, row: &mut Vec<(usize, f64)>| {
            row.push((0, scale));
            row.push((1, scale * v[q]));
            if let Some(e) = &self.err {
                let (cols, vals) = e.row(q);
                row.extend(
                    cols.iter()
                        .zip(vals)
                        .map(|(&c, &a)| (base + c, scale * g1 * a)),
                );
            }
        };
        let (mut eta, mut rows): (Vec<f64>, Vec<Vec<(usize, f64)>>) = if self.groups.is_empty() {
            let rows = (0..eta_q.len())
                .map(|q| {
                    let mut r = Vec::new();
                    row_q(q, 1.0, &mut r);
                    r
                })
                .collect();
            (eta_q.clone(), rows)
        } else {
            self.groups
                .iter()
                .map(|g| {
                    let m = eta_q[g.clone()]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = eta_q[g.clone()].iter().map(|e| (e - m).exp()).collect();
                    let s: f64 = w.iter().sum();
                    let mut r = Vec::new();
                    for (q, wq) in g.clone().zip(&w) {
                        row_q(q, wq / s, &mut r);
                    }
                    (m + (s / g.len() as f64).ln(), r)
                })
                .unzip()
        };
        for (i, (e, r)) in eta.iter_mut().zip(rows.iter_mut()).enumerate() {
            *e += self.offsets[i];
            if let Some(x) = &self.extra {
                for (k, &z) in x[i].iter().enumerate() {
                    *e += z * u[2 + k];
                    r.push((2 + k, z));
                }
            }
        }
        (
            eta,
            CsrMatrix::from_rows(self.dim, &rows).expect("indices lie within the latent"),
        )
    }
}

/// Latent model over `u = (γ0, γ1, γ2, ε)` given exposures `h0` at the
/// evaluation points and an optional error component.
pub(crate) fn second_stage_spec(
    model: &SecondStageModel,
    h0: &[f64],
    err: Option<&ErrorComponent>,
) -> LgmSpec {
    let p = model.n_extra();
    let d_err = err.map_or(0, |e| e.map.cols());
    let dim = 2 + p + d_err;
    let mut prec: Vec<f64> = model.priors.sd.iter().map(|s| 1.0 / (s * s)).collect();
    if let Some(x) = &model.extra {
        prec.extend(std::iter::repeat_n(1.0 / (x.prior_sd * x.prior_sd), p));
    }
    let fixed = SymSparseMatrix::diagonal(&prec);
    let q = Arc::new(match err {
        Some(e) => SymSparseMatrix::block_diag(&[&fixed, &e.precision]),
        None => fixed,
    });
    let mut prior_mean = vec![0.0; dim];
    prior_mean[..2].copy_from_slice(&model.priors.mean);

    let extra = model.extra.as_ref().map(|x| x.values.clone());
    let predictor = if err.is_none() && model.family != Family::PoissonNewSpec {
        let rows: Vec<Vec<(usize, f64)>> = h0
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let mut r = vec![(0, 1.0), (1, h)];
                if let Some(x) = &extra {
                    r.extend(x[i].iter().enumerate().map(|(k, &z)| (2 + k, z)));
                }
                r
            })
            .collect();
        Predictor::Linear {
            design: CsrMatrix::from_rows(dim, &rows).expect("indices lie within the latent"),
            offset: model.offsets.clone(),
        }
    } else {
        Predictor::Nonlinear(Arc::new(PropagatedPredictor {
            h0: h0.to_vec(),
            err: err.map(|e| e.map.clone()),
            groups: model.groups.clone(),
            offsets: model.offsets.clone(),
            extra,
            n_extra: p,
            dim,
        }))
    };
    let (likelihood, hyperprior): (Likelihood, crate::lgm::HyperPrior) = match model.family {
        Family::GaussianPoint => {
            let noise = model.noise;
            (
                Likelihood::Gaussian(NoisePrecision::Hyper(0)),
                Arc::new(move |t: &[f64]| noise.logpdf_log_precision(t[0])),
            )
        }
        _ => (Likelihood::Poisson, Arc::new(|_: &[f64]| 0.0)),
    };
    LgmSpec {
        dim,
        hyper_dim: model.hyper_dim(),
        prior_precision: Arc::new(move |_: &[f64]| Ok((*q).clone())),
        prior_mean,
        predictor,
        likelihood,
        hyperprior,
        ordering: Ordering::Rcm,
    }
}

/// One conditional second-stage fit.
pub(crate) struct ComponentFit {
    pub theta: Vec<f64>,
    pub approx: GaussianApprox,
    pub law: GammaLaw,
}

/// Empirical-Bayes fit of the second-stage hyperparameters followed by the
/// latent approximation at the mode.
pub(crate) fn fit_component(
    model: &SecondStageModel,
    h0: &[f64],
    err: Option<&ErrorComponent>,
    y: &[f64],
    latent_init: Option<&[f64]>,
    theta_init: Option<&[f64]>,
) -> Result<ComponentFit, TwoStageError> {
    if h0.len() != model.n_eval() {
        return Err(TwoStageError::Invalid(format!(
            "{} exposures for {} evaluation points",
            h0.len(),
            model.n_eval()
        )));
    }
    let spec = second_stage_spec(model, h0, err);
    let theta_init = theta_init.map_or_else(|| vec![0.0; model.hyper_dim()], <[f64]>::to_vec);
    let hyper = empirical_bayes_from(
        &spec,
        y,
        &theta_init,
        latent_init,
        &NelderMeadOptions::default(),
    )?;
    let approx = gaussian_approx_from(&spec, &hyper.theta_mode, y, latent_init)?;
    let law = joint_law(&approx)?;
    Ok(ComponentFit {
        theta: hyper.theta_mode,
        approx,
        law,
    })
}

pub(crate) fn joint_law(approx: &GaussianApprox) -> Result<GammaLaw, TwoStageError> {
    let c = approx.covariance_block(&[0, 1])?;
    Ok(GammaLaw::Joint {
        mean: [approx.mode[0], approx.mode[1]],
        cov: [[c[0][0], c[0][1]], [c[1][0], c[1][1]]],
    })
}
