//! Latent Gaussian models: Gaussian approximation of the latent posterior,
//! approximate hyperparameter posterior and empirical-Bayes fitting.

mod linearize;
mod nelder_mead;

pub use linearize::{linearized_fit, LinearizedFit};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::sparse::{
    factorize_with, CholeskyFactor, CsrMatrix, Ordering, SparseError, SymSparseMatrix,
};

#[derive(Debug, Error, Clone)]
pub enum LgmError {
    #[error("Newton iteration failed to increase the log posterior")]
    NewtonDiverged,
    #[error("iterative linearization oscillated after {iterations} iterations")]
    LinearizationDiverged { iterations: usize },
    #[error("hyperparameter optimizer stalled after {evaluations} evaluations")]
    OptimizerStalled { evaluations: usize },
    #[error("no observations supplied")]
    EmptyData,
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("hyperparameter vector is not finite")]
    NonFiniteHyper,
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

pub type PrecisionBuilder = Arc<dyn Fn(&[f64]) -> Result<SymSparseMatrix, LgmError> + Send + Sync>;
pub type HyperPrior = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Predictor `η(u)` with its Jacobian, for models that are not linear in the
/// latent vector.
pub trait NonlinearPredictor: Send + Sync {
    fn n_obs(&self) -> usize;
    fn dim(&self) -> usize;
    /// Returns `η(u)` and `∂η/∂u`.
    fn eval(&self, u: &[f64]) -> (Vec<f64>, CsrMatrix);
}

#[derive(Clone)]
pub enum Predictor {
    /// `η = A x + offset`.
    Linear {
        design: CsrMatrix,
        offset: Vec<f64>,
    },
    Nonlinear(Arc<dyn NonlinearPredictor>),
}

impl Predictor {
    pub fn n_obs(&self) -> usize {
        match self {
            Predictor::Linear { design, .. } => design.rows(),
            Predictor::Nonlinear(p) => p.n_obs(),
        }
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Predictor::Linear { design, offset } => {
                let mut eta = design.mul_vec(u).expect("latent length checked");
                eta.iter_mut().zip(offset).for_each(|(e, o)| *e += o);
                eta
            }
            Predictor::Nonlinear(p) => p.eval(u).0,
        }
    }
}

/// Observation noise precision of a Gaussian likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoisePrecision {
    Fixed(f64),
    /// `θ[idx]` holds the log precision.
    Hyper(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Likelihood {
    Gaussian(NoisePrecision),
    /// Counts with mean `exp(η)`; exposures enter through the predictor offset.
    Poisson,
}

impl Likelihood {
    fn noise_precision(&self, theta: &[f64]) -> f64 {
        match self {
            Likelihood::Gaussian(NoisePrecision::Fixed(p)) => *p,
            Likelihood::Gaussian(NoisePrecision::Hyper(i)) => theta[*i].exp(),
            Likelihood::Poisson => f64::NAN,
        }
    }

    /// Log likelihood summed over observations.
    fn log_lik(&self, theta: &[f64], eta: &[f64], y: &[f64]) -> f64 {
        match self {
            Likelihood::Gaussian(_) => {
                let p = self.noise_precision(theta);
                let n = y.len() as f64;
                let rss: f64 = eta.iter().zip(y).map(|(e, v)| (v - e).powi(2)).sum();
                0.5 * n * (p.ln() - (2.0 * PI).ln()) - 0.5 * p * rss
            }
            Likelihood::Poisson => eta
                .iter()
                .zip(y)
                .map(|(&e, &v)| v * e - e.exp() - ln_gamma(v + 1.0))
                .sum(),
        }
    }

    /// Score and negative curvature with respect to each `η_i`.
    fn score_curvature(&self, theta: &[f64], eta: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Likelihood::Gaussian(_) => {
                let p = self.noise_precision(theta);
                (
                    eta.iter().zip(y).map(|(e, v)| p * (v - e)).collect(),
                    vec![p; y.len()],
                )
            }
            Likelihood::Poisson => {
                let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
                (mu.iter().zip(y).map(|(m, v)| v - m).collect(), mu)
            }
        }
    }
}

/// A latent Gaussian model with hyperparameters `θ`.
#[derive(Clone)]
pub struct LgmSpec {
    pub dim: usize,
    pub hyper_dim: usize,
    pub prior_precision: PrecisionBuilder,
    pub prior_mean: Vec<f64>,
    pub predictor: Predictor,
    pub likelihood: Likelihood,
    pub hyperprior: HyperPrior,
    pub ordering: Ordering,
}

impl LgmSpec {
    pub(crate) fn check(&self, theta: &[f64], y: &[f64]) -> Result<(), LgmError> {
        if y.is_empty() {
            return Err(LgmError::EmptyData);
        }
        let n = self.predictor.n_obs();
        if y.len() != n {
            return Err(LgmError::DimensionMismatch {
                what: "observations",
                expected: n,
                found: y.len(),
            });
        }
        if theta.len() != self.hyper_dim {
            return Err(LgmError::DimensionMismatch {
                what: "hyperparameters",
                expected: self.hyper_dim,
                found: theta.len(),
            });
        }
        if self.prior_mean.len() != self.dim {
            return Err(LgmError::DimensionMismatch {
                what: "prior mean",
                expected: self.dim,
                found: self.prior_mean.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(LgmError::NonFiniteHyper);
        }
        Ok(())
    }

    /// Normalized log prior density of the latent vector.
    fn log_prior(&self, q: &SymSparseMatrix, prior_factor: &CholeskyFactor, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.prior_mean).map(|(a, m)| a - m).collect();
        0.5 * prior_factor.log_det()
            - 0.5 * self.dim as f64 * (2.0 * PI).ln()
            - 0.5 * q.quad_form(&d).unwrap()
    }

    /// Unnormalized log joint `log π(x, y | θ)` excluding the hyperprior.
    pub fn log_joint(&self, theta: &[f64], x: &[f64], y: &[f64]) -> Result<f64, LgmError> {
        let q = (self.prior_precision)(theta)?;
        let pf = factorize_with(&q, self.ordering)?;
        Ok(self.log_prior(&q, &pf, x) + self.likelihood.log_lik(theta, &self.predictor.eval(x), y))
    }
}

/// Gaussian approximation `N(mode, precision⁻¹)` of `π(x | θ, y)`.
#[derive(Clone, Debug)]
pub struct GaussianApprox {
    pub mode: Vec<f64>,
    pub precision: SymSparseMatrix,
    pub factor: CholeskyFactor,
    /// `log π(x̂, y | θ)` without the hyperprior.
    pub log_h_at_mode: f64,
    /// Newton steps or linearization updates taken.
    pub iterations: usize,
}

impl GaussianApprox {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    /// Marginal standard deviations of every latent component.
    pub fn marginal_sds(&self) -> Vec<f64> {
        self.factor
            .inverse_diagonal()
            .into_iter()
            .map(f64::sqrt)
            .collect()
    }

    /// Covariance matrix of the listed components.
    pub fn covariance_block(&self, idx: &[usize]) -> Result<Vec<Vec<f64>>, LgmError> {
        let mut out = vec![vec![0.0; idx.len()]; idx.len()];
        for (b, &j) in idx.iter().enumerate() {
            let col = self.factor.inverse_column(j)?;
            for (a, &i) in idx.iter().enumerate() {
                out[a][b] = col[i];
            }
        }
        Ok(out)
    }
}

/// Inputs to a Gaussian approximation of a model with a linear predictor.
pub(crate) struct LinearProblem<'a> {
    pub q_prior: &'a SymSparseMatrix,
    pub prior_mean: &'a [f64],
    pub design: &'a CsrMatrix,
    pub offset: &'a [f64],
    pub likelihood: Likelihood,
    pub ordering: Ordering,
}

impl LinearProblem<'_> {
    fn eta(&self, x: &[f64]) -> Vec<f64> {
        let mut eta = self.design.mul_vec(x).unwrap();
        eta.iter_mut().zip(self.offset).for_each(|(e, o)| *e += o);
        eta
    }

    fn objective(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(self.prior_mean).map(|(a, m)| a - m).collect();
        -0.5 * self.q_prior.quad_form(&d).unwrap() + self.likelihood.log_lik(theta, &self.eta(x), y)
    }

    /// Mode, posterior precision and its factor. Gaussian likelihoods are
    /// solved in one step; Poisson uses damped Newton from `init`.
    pub fn solve(
        &self,
        theta: &[f64],
        y: &[f64],
        init: &[f64],
    ) -> Result<(Vec<f64>, SymSparseMatrix, CholeskyFactor, usize), LgmError> {
        let mut x = init.to_vec();
        let mut iterations = 0;
        let max_iter = match self.likelihood {
            Likelihood::Gaussian(_) => 1,
            Likelihood::Poisson => 50,
        };
        let mut converged = false;
        while iterations < max_iter {
            iterations += 1;
            let eta = self.eta(&x);
            let (score, w) = self.likelihood.score_curvature(theta, &eta, y);
            let h = self.q_prior.add(&self.design.at_w_a(&w)?)?;
            let f = factorize_with(&h, self.ordering)?;
            let d: Vec<f64> = x.iter().zip(self.prior_mean).map(|(a, m)| a - m).collect();
            let qd = self.q_prior.mul_vec(&d)?;
            let mut g = self.design.tr_mul_vec(&score)?;
            g.iter_mut().zip(&qd).for_each(|(gi, q)| *gi -= q);
            let step = f.solve(&g)?;
            if let Likelihood::Gaussian(_) = self.likelihood {
                x.iter_mut().zip(&step).for_each(|(a, s)| *a += s);
                return Ok((x, h, f, iterations));
            }
            let f0 = self.objective(theta, &x, y);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=30 {
                let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                let fc = self.objective(theta, &cand, y);
                if fc.is_finite() && fc >= f0 - 1e-12 * f0.abs().max(1.0) {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            let cand = accepted.ok_or(LgmError::NewtonDiverged)?;
            let change = inf_norm_diff(&cand, &x) / (1.0 + inf_norm(&x));
            x = cand;
            if change < 1e-10 {
                converged = true;
                break;
            }
        }
        let eta = self.eta(&x);
        let (score, w) = self.likelihood.score_curvature(theta, &eta, y);
        let h = self.q_prior.add(&self.design.at_w_a(&w)?)?;
        let f = factorize_with(&h, self.ordering)?;
        if !converged {
            let d: Vec<f64> = x.iter().zip(self.prior_mean).map(|(a, m)| a - m).collect();
            let qd = self.q_prior.mul_vec(&d)?;
            let mut g = self.design.tr_mul_vec(&score)?;
            g.iter_mut().zip(&qd).for_each(|(gi, q)| *gi -= q);
            if inf_norm(&g) > 1e-6 * (1.0 + inf_norm(&x)) {
                return Err(LgmError::NewtonDiverged);
            }
        }
        Ok((x, h, f, iterations))
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

pub(crate) fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Gaussian approximation at `theta`, starting Newton or linearization from
/// the prior mean.
pub fn gaussian_approx(
    spec: &LgmSpec,
    theta: &[f64],
    y: &[f64],
) -> Result<GaussianApprox, LgmError> {
    gaussian_approx_from(spec, theta, y, None)
}

/// As [`gaussian_approx`] with an optional starting point.
pub fn gaussian_approx_from(
    spec: &LgmSpec,
    theta: &[f64],
    y: &[f64],
    init: Option<&[f64]>,
) -> Result<GaussianApprox, LgmError> {
    spec.check(theta, y)?;
    let start = init.unwrap_or(&spec.prior_mean);
    if start.len() != spec.dim {
        return Err(LgmError::DimensionMismatch {
            what: "initial latent",
            expected: spec.dim,
            found: start.len(),
        });
    }
    let q = (spec.prior_precision)(theta)?;
    let prior_factor = factorize_with(&q, spec.ordering)?;
    match &spec.predictor {
        Predictor::Linear { design, offset } => {
            let problem = LinearProblem {
                q_prior: &q,
                prior_mean: &spec.prior_mean,
                design,
                offset,
                likelihood: spec.likelihood,
                ordering: spec.ordering,
            };
            let (mode, precision, factor, iterations) = problem.solve(theta, y, start)?;
            let log_h_at_mode = spec.log_prior(&q, &prior_factor, &mode)
                + spec.likelihood.log_lik(theta, &problem.eta(&mode), y);
            Ok(GaussianApprox {
                mode,
                precision,
                factor,
                log_h_at_mode,
                iterations,
            })
        }
        Predictor::Nonlinear(p) => {
            Ok(linearize::run(spec, p.as_ref(), &q, &prior_factor, theta, y, start)?.approx)
        }
    }
}

/// `log π̂(θ | y)` up to a θ-independent constant, from an existing
/// approximation at `theta`.
pub fn log_hyper_posterior_from(spec: &LgmSpec, theta: &[f64], ga: &GaussianApprox) -> f64 {
    ga.log_h_at_mode - 0.5 * ga.factor.log_det()
        + 0.5 * spec.dim as f64 * (2.0 * PI).ln()
        + (spec.hyperprior)(theta)
}

pub fn approx_log_hyper_posterior(
    spec: &LgmSpec,
    theta: &[f64],
    y: &[f64],
) -> Result<f64, LgmError> {
    let ga = gaussian_approx(spec, theta, y)?;
    Ok(log_hyper_posterior_from(spec, theta, &ga))
}

/// Result of empirical-Bayes hyperparameter fitting.
#[derive(Clone, Debug)]
pub struct HyperFit {
    pub theta_mode: Vec<f64>,
    pub log_post_at_mode: f64,
    /// Evaluated points and log posterior values, in evaluation order.
    pub trace: Vec<(Vec<f64>, f64)>,
}

/// Maximizes the approximate hyperparameter posterior with Nelder–Mead.
/// Evaluations warm-start from the previous mode, which matters for
/// nonlinear predictors.
pub fn empirical_bayes(spec: &LgmSpec, y: &[f64], init: &[f64]) -> Result<HyperFit, LgmError> {
    empirical_bayes_with(spec, y, init, &NelderMeadOptions::default())
}

pub fn empirical_bayes_with(
    spec: &LgmSpec,
    y: &[f64],
    init: &[f64],
    options: &NelderMeadOptions,
) -> Result<HyperFit, LgmError> {
    empirical_bayes_from(spec, y, init, None, options)
}

/// As [`empirical_bayes_with`], with the first latent fit started from
/// `latent_init`.
pub fn empirical_bayes_from(
    spec: &LgmSpec,
    y: &[f64],
    init: &[f64],
    latent_init: Option<&[f64]>,
    options: &NelderMeadOptions,
) -> Result<HyperFit, LgmError> {
    spec.check(init, y)?;
    if spec.hyper_dim == 0 {
        let ga = gaussian_approx_from(spec, init, y, latent_init)?;
        let v = log_hyper_posterior_from(spec, init, &ga);
        return Ok(HyperFit {
            theta_mode: init.to_vec(),
            log_post_at_mode: v,
            trace: vec![(init.to_vec(), v)],
        });
    }
    let mut warm: Option<Vec<f64>> = latent_init.map(<[f64]>::to_vec);
    let mut trace = Vec::new();
    let nonlinear = matches!(spec.predictor, Predictor::Nonlinear(_));
    let mut objective = |theta: &[f64]| -> f64 {
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 50.0) {
            return f64::NEG_INFINITY;
        }
        let start = if nonlinear { warm.as_deref() } else { None };
        let v = match gaussian_approx_from(spec, theta, y, start) {
            Ok(ga) => {
                let v = log_hyper_posterior_from(spec, theta, &ga);
                if nonlinear {
                    warm = Some(ga.mode);
                }
                v
            }
            Err(_) => f64::NEG_INFINITY,
        };
        let v = if v.is_finite() { v } else { f64::NEG_INFINITY };
        trace.push((theta.to_vec(), v));
        v
    };
    let res = nelder_mead(&mut objective, init, options);
    let res = match res {
        Ok(r) => r,
        Err(evaluations) => return Err(LgmError::OptimizerStalled { evaluations }),
    };
    if !res.value.is_finite() {
        return Err(LgmError::OptimizerStalled {
            evaluations: res.evaluations,
        });
    }
    Ok(HyperFit {
        theta_mode: res.point,
        log_post_at_mode: res.value,
        trace,
    })
}

/// Empirical-Bayes mode together with the Gaussian approximation there.
pub fn fit_lgm(
    spec: &LgmSpec,
    y: &[f64],
    init: &[f64],
) -> Result<(HyperFit, GaussianApprox), LgmError> {
    let hyper = empirical_bayes(spec, y, init)?;
    let ga = gaussian_approx(spec, &hyper.theta_mode, y)?;
    Ok((hyper, ga))
}

/// Independent draws from `N(mode, Q⁻¹)`.
pub fn sample_latent<R: Rng + ?Sized>(ga: &GaussianApprox, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            ga.factor
                .sample_gaussian(&ga.mode, rng)
                .expect("mode matches factor")
        })
        .collect()
}

/// Negative Hessian of the approximate hyperparameter log posterior at
/// `theta` by central differences, as a dense matrix.
pub fn hyper_curvature(
    spec: &LgmSpec,
    y: &[f64],
    theta: &[f64],
    step: f64,
) -> Result<Vec<Vec<f64>>, LgmError> {
    let d = theta.len();
    let mut warm: Option<Vec<f64>> = None;
    let mut eval = |t: &[f64]| -> Result<f64, LgmError> {
        let ga = gaussian_approx_from(spec, t, y, warm.as_deref())?;
        let v = log_hyper_posterior_from(spec, t, &ga);
        warm = Some(ga.mode);
        Ok(v)
    };
    let f0 = eval(theta)?;
    let mut h = vec![vec![0.0; d]; d];
    let shifted = |i: usize, si: f64, j: usize, sj: f64| {
        let mut t = theta.to_vec();
        t[i] += si;
        t[j] += sj;
        t
    };
    for i in 0..d {
        let fp = eval(&shifted(i, step, i, 0.0))?;
        let fm = eval(&shifted(i, -step, i, 0.0))?;
        h[i][i] = -(fp - 2.0 * f0 + fm) / (step * step);
        for j in 0..i {
            let fpp = eval(&shifted(i, step, j, step))?;
            let fpm = eval(&shifted(i, step, j, -step))?;
            let fmp = eval(&shifted(i, -step, j, step))?;
            let fmm = eval(&shifted(i, -step, j, -step))?;
            let v = -(fpp - fpm - fmp + fmm) / (4.0 * step * step);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    Ok(h)
}
