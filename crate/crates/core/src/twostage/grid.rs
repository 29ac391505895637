use std::sync::Arc;

use super::first_stage::FirstStageFit;
use super::fit::{GammaLaw, MixtureComponent, SecondStageFit};
use super::model::{Family, SecondStageModel};
use super::TwoStageError;
use crate::lgm::{
    gaussian_approx, log_hyper_posterior_from, LgmSpec, Likelihood, NoisePrecision, Predictor,
};
use crate::par::map_indexed;
use crate::sparse::{CsrMatrix, Ordering, SymSparseMatrix};
use crate::util::{log_sum_exp, normal_logpdf};

/// Strictly increasing grid of `γ1` values. Each value owns the cell
/// between the midpoints to its neighbours; end cells are symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct Gamma1Grid {
    values: Vec<f64>,
}

impl Gamma1Grid {
    pub fn new(values: Vec<f64>) -> Result<Self, TwoStageError> {
        if values.is_empty()
            || values.iter().any(|v| !v.is_finite())
            || values.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(TwoStageError::Invalid(
                "grid must be finite, non-empty and strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `n` equally spaced values on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self, TwoStageError> {
        if n == 1 {
            return Self::new(vec![0.5 * (lo + hi)]);
        }
        Self::new(
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cell bounds; a single value has a degenerate cell.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let v = &self.values;
        let n = v.len();
        if n == 1 {
            return vec![(v[0], v[0])];
        }
        (0..n)
            .map(|k| {
                let lo = if k == 0 {
                    v[0] - 0.5 * (v[1] - v[0])
                } else {
                    0.5 * (v[k - 1] + v[k])
                };
                let hi = if k == n - 1 {
                    v[n - 1] + 0.5 * (v[n - 1] - v[n - 2])
                } else {
                    0.5 * (v[k] + v[k + 1])
                };
                (lo, hi)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct GridFit {
    pub fit: SecondStageFit,
    /// Normalized weight of each grid value.
    pub weights: Vec<f64>,
    /// `log π(y | γ1 = c)` up to a common constant.
    pub log_marginals: Vec<f64>,
}

/// Reference posterior for the Gaussian family with full-Q error: for each
/// grid value `c` the model is linear in `(γ0, γ2, ε)` and its marginal
/// likelihood is exact. Weights are `π(y | c) π(c) Δc`, normalized.
pub fn gamma1_grid_fit(
    f1: &FirstStageFit,
    m2: &SecondStageModel,
    y: &[f64],
    tau_eps: f64,
    log_noise_precision: f64,
    grid: &Gamma1Grid,
) -> Result<GridFit, TwoStageError> {
    if m2.family != Family::GaussianPoint {
        return Err(TwoStageError::Invalid(
            "the γ1 grid reference applies to the Gaussian family only".into(),
        ));
    }
    if m2.map().cols() != f1.approx.dim() || y.len() != m2.n_obs() {
        return Err(TwoStageError::Invalid(
            "first- and second-stage shapes disagree".into(),
        ));
    }
    if !(tau_eps > 0.0) {
        return Err(TwoStageError::Invalid(
            "error precision scale must be positive".into(),
        ));
    }
    let p = m2.n_extra();
    let d_err = m2.map().cols();
    let dim = 1 + p + d_err;
    let mut prec = vec![1.0 / (m2.priors.sd[0] * m2.priors.sd[0])];
    if let Some(x) = m2.extra() {
        prec.extend(std::iter::repeat_n(1.0 / (x.prior_sd * x.prior_sd), p));
    }
    let q = Arc::new(SymSparseMatrix::block_diag(&[
        &SymSparseMatrix::diagonal(&prec),
        &f1.approx.precision.scaled(tau_eps),
    ]));
    let mut prior_mean = vec![0.0; dim];
    prior_mean[0] = m2.priors.mean[0];
    let h0 = m2.map().mul_vec(&f1.approx.mode)?;

    let conditional = |c: f64| -> Result<(f64, f64, f64), TwoStageError> {
        let rows: Vec<Vec<(usize, f64)>> = (0..m2.n_obs())
            .map(|i| {
                let mut r = vec![(0, 1.0)];
                if let Some(x) = m2.extra() {
                    r.extend(x.values[i].iter().enumerate().map(|(k, &z)| (1 + k, z)));
                }
                let (cols, vals) = m2.map().row(i);
                r.extend(cols.iter().zip(vals).map(|(&j, &a)| (1 + p + j, c * a)));
                r
            })
            .collect();
        let offset: Vec<f64> = h0
            .iter()
            .zip(m2.offsets())
            .map(|(h, o)| c * h + o)
            .collect();
        let qc = Arc::clone(&q);
        let spec = LgmSpec {
            dim,
            hyper_dim: 0,
            prior_precision: Arc::new(move |_: &[f64]| Ok((*qc).clone())),
            prior_mean: prior_mean.clone(),
            predictor: Predictor::Linear {
                design: CsrMatrix::from_rows(dim, &rows)?,
                offset,
            },
            likelihood: Likelihood::Gaussian(NoisePrecision::Fixed(log_noise_precision.exp())),
            hyperprior: Arc::new(|_: &[f64]| 0.0),
            ordering: Ordering::Rcm,
        };
        let ga = gaussian_approx(&spec, &[], y)?;
        let sd0 = ga.covariance_block(&[0])?[0][0].sqrt();
        Ok((log_hyper_posterior_from(&spec, &[], &ga), ga.mode[0], sd0))
    };

    let cells = grid.cells();
    let results = map_indexed(grid.values().len(), |k| conditional(grid.values()[k]));
    let mut log_marginals = Vec::with_capacity(cells.len());
    let mut laws = Vec::with_capacity(cells.len());
    for (r, &(lo, hi)) in results.into_iter().zip(&cells) {
        let (lm, m0, s0) = r?;
        log_marginals.push(lm);
        laws.push(GammaLaw::GridCell {
            gamma0_mean: m0,
            gamma0_sd: s0,
            gamma1_lo: lo,
            gamma1_hi: hi,
        });
    }
    let log_w: Vec<f64> = grid
        .values()
        .iter()
        .zip(&cells)
        .zip(&log_marginals)
        .map(|((&c, &(lo, hi)), &lm)| {
            let width = if hi > lo { (hi - lo).ln() } else { 0.0 };
            lm + normal_logpdf(c, m2.priors.mean[1], m2.priors.sd[1].powi(2)) + width
        })
        .collect();
    let norm = log_sum_exp(&log_w);
    let weights: Vec<f64> = log_w.iter().map(|w| (w - norm).exp()).collect();
    let components = laws
        .into_iter()
        .zip(&weights)
        .map(|(law, &weight)| MixtureComponent { weight, law })
        .collect();
    let fit = SecondStageFit::new(
        "gamma1-grid",
        components,
        vec![vec![log_noise_precision]],
        1,
    );
    Ok(GridFit {
        fit,
        weights,
        log_marginals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_tile_the_grid() {
        let g = Gamma1Grid::new(vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(g.cells(), vec![(-0.5, 0.5), (0.5, 2.0), (2.0, 4.0)]);
        assert_eq!(
            Gamma1Grid::new(vec![2.0]).unwrap().cells(),
            vec![(2.0, 2.0)]
        );
        assert!(Gamma1Grid::new(vec![1.0, 1.0]).is_err());
    }
}
