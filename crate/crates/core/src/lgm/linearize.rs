use super::{
    gaussian_approx_from, inf_norm, inf_norm_diff, GaussianApprox, LgmError, LgmSpec,
    LinearProblem, NonlinearPredictor, Predictor,
};
use crate::sparse::{factorize_with, CholeskyFactor, SymSparseMatrix};

const TOL: f64 = 1e-6;
const MAX_ITER: usize = 30;

/// Converged Gaussian approximation of a model with a nonlinear predictor.
#[derive(Clone, Debug)]
pub struct LinearizedFit {
    pub approx: GaussianApprox,
    /// Expansion points visited, starting with the initial point.
    pub trajectory: Vec<Vec<f64>>,
    /// Number of updates that moved the mode by more than the tolerance
    /// (at least one).
    pub iterations: usize,
    pub converged: bool,
}

/// Repeatedly expands the predictor to first order around the current mode
/// and refits the induced latent Gaussian model. Linear predictors return
/// after a single fit.
pub fn linearized_fit(
    spec: &LgmSpec,
    theta: &[f64],
    y: &[f64],
    init: Option<&[f64]>,
) -> Result<LinearizedFit, LgmError> {
    match &spec.predictor {
        Predictor::Linear { .. } => {
            let approx = gaussian_approx_from(spec, theta, y, init)?;
            let start = init
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| spec.prior_mean.clone());
            Ok(LinearizedFit {
                trajectory: vec![start, approx.mode.clone()],
                approx,
                iterations: 1,
                converged: true,
            })
        }
        Predictor::Nonlinear(p) => {
            spec.check(theta, y)?;
            let q = (spec.prior_precision)(theta)?;
            let prior_factor = factorize_with(&q, spec.ordering)?;
            run(
                spec,
                p.as_ref(),
                &q,
                &prior_factor,
                theta,
                y,
                init.unwrap_or(&spec.prior_mean),
            )
        }
    }
}

pub(super) fn run(
    spec: &LgmSpec,
    p: &dyn NonlinearPredictor,
    q: &SymSparseMatrix,
    prior_factor: &CholeskyFactor,
    theta: &[f64],
    y: &[f64],
    start: &[f64],
) -> Result<LinearizedFit, LgmError> {
    let objective = |u: &[f64]| -> f64 {
        let d: Vec<f64> = u.iter().zip(&spec.prior_mean).map(|(a, m)| a - m).collect();
        -0.5 * q.quad_form(&d).unwrap() + spec.likelihood.log_lik(theta, &p.eval(u).0, y)
    };
    let mut u0 = start.to_vec();
    let mut t0 = objective(&u0);
    let mut trajectory = vec![u0.clone()];
    let mut prev_crit = f64::INFINITY;
    let mut increases = 0;
    let mut moved = 0;
    let mut last = None;
    let mut converged = false;

    for it in 1..=MAX_ITER {
        let (eta0, jac) = p.eval(&u0);
        let ju0 = jac.mul_vec(&u0)?;
        let offset: Vec<f64> = eta0.iter().zip(&ju0).map(|(e, j)| e - j).collect();
        let problem = LinearProblem {
            q_prior: q,
            prior_mean: &spec.prior_mean,
            design: &jac,
            offset: &offset,
            likelihood: spec.likelihood,
            ordering: spec.ordering,
        };
        let (u1, h, f, _) = problem.solve(theta, y, &u0)?;
        let step: Vec<f64> = u1.iter().zip(&u0).map(|(a, b)| a - b).collect();
        let mut s = 1.0;
        let mut cand = u1.clone();
        let mut tc = objective(&cand);
        for _ in 0..12 {
            if tc.is_finite() && tc >= t0 - 1e-12 * t0.abs().max(1.0) {
                break;
            }
            s *= 0.5;
            cand = u0.iter().zip(&step).map(|(a, d)| a + s * d).collect();
            tc = objective(&cand);
        }
        let full_step = s == 1.0;
        let crit = inf_norm_diff(&cand, &u0) / (1.0 + inf_norm(&u0));
        if crit >= TOL {
            moved += 1;
        }
        if crit > prev_crit {
            increases += 1;
            if increases >= 3 {
                return Err(LgmError::LinearizationDiverged { iterations: it });
            }
        } else {
            increases = 0;
        }
        prev_crit = crit;
        u0 = cand;
        t0 = tc;
        trajectory.push(u0.clone());
        last = Some((u1, h, f));
        if crit < TOL && full_step {
            converged = true;
            break;
        }
    }
    let (mode, precision, factor) = last.expect("at least one iteration runs");
    let log_h_at_mode = spec.log_prior(q, prior_factor, &mode)
        + spec.likelihood.log_lik(theta, &p.eval(&mode).0, y);
    let approx = GaussianApprox {
        mode,
        precision,
        factor,
        log_h_at_mode,
        iterations: moved.max(1),
    };
    Ok(LinearizedFit {
        approx,
        trajectory,
        iterations: moved.max(1),
        converged,
    })
}
