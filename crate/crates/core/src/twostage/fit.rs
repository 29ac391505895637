use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

/// Index of the second-stage intercept.
pub const GAMMA0: usize = 0;
/// Index of the second-stage exposure coefficient.
pub const GAMMA1: usize = 1;
/// Points per marginal CDF grid.
pub const CDF_POINTS: usize = 512;

const SPAN_SDS: f64 = 8.0;

fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

/// Law of `(γ0, γ1)` within one mixture component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaLaw {
    /// Bivariate normal.
    Joint { mean: [f64; 2], cov: [[f64; 2]; 2] },
    /// `γ1` uniform on a grid cell and `γ0` normal given the cell.
    GridCell {
        gamma0_mean: f64,
        gamma0_sd: f64,
        gamma1_lo: f64,
        gamma1_hi: f64,
    },
}

impl GammaLaw {
    pub fn mean(&self, q: usize) -> f64 {
        match *self {
            GammaLaw::Joint { mean, .. } => mean[q],
            GammaLaw::GridCell {
                gamma0_mean,
                gamma1_lo,
                gamma1_hi,
                ..
            } => {
                if q == GAMMA0 {
                    gamma0_mean
                } else {
                    0.5 * (gamma1_lo + gamma1_hi)
                }
            }
        }
    }

    pub fn variance(&self, q: usize) -> f64 {
        match *self {
            GammaLaw::Joint { cov, .. } => cov[q][q],
            GammaLaw::GridCell {
                gamma0_sd,
                gamma1_lo,
                gamma1_hi,
                ..
            } => {
                if q == GAMMA0 {
                    gamma0_sd * gamma0_sd
                } else {
                    (gamma1_hi - gamma1_lo).powi(2) / 12.0
                }
            }
        }
    }

    pub fn cdf(&self, q: usize, x: f64) -> f64 {
        match *self {
            GammaLaw::GridCell {
                gamma1_lo,
                gamma1_hi,
                ..
            } if q == GAMMA1 => {
                if gamma1_hi <= gamma1_lo {
                    return if x >= gamma1_lo { 1.0 } else { 0.0 };
                }
                ((x - gamma1_lo) / (gamma1_hi - gamma1_lo)).clamp(0.0, 1.0)
            }
            _ => normal_cdf(x, self.mean(q), self.variance(q).max(0.0).sqrt()),
        }
    }

    fn support(&self, q: usize) -> (f64, f64) {
        match *self {
            GammaLaw::GridCell {
                gamma1_lo,
                gamma1_hi,
                ..
            } if q == GAMMA1 => (gamma1_lo, gamma1_hi),
            _ => {
                let (m, s) = (self.mean(q), self.variance(q).max(0.0).sqrt());
                (m - SPAN_SDS * s, m + SPAN_SDS * s)
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z0: f64 = rng.sample(StandardNormal);
        match *self {
            GammaLaw::Joint { mean, cov } => {
                let s0 = cov[0][0].max(0.0).sqrt();
                let z1: f64 = rng.sample(StandardNormal);
                let (slope, resid) = if s0 > 0.0 {
                    let b = cov[0][1] / cov[0][0];
                    (b, (cov[1][1] - b * cov[0][1]).max(0.0).sqrt())
                } else {
                    (0.0, cov[1][1].max(0.0).sqrt())
                };
                let g0 = mean[0] + s0 * z0;
                [g0, mean[1] + slope * (g0 - mean[0]) + resid * z1]
            }
            GammaLaw::GridCell {
                gamma0_mean,
                gamma0_sd,
                gamma1_lo,
                gamma1_hi,
            } => {
                let u: f64 = rng.random();
                [
                    gamma0_mean + gamma0_sd * z0,
                    gamma1_lo + u * (gamma1_hi - gamma1_lo),
                ]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub law: GammaLaw,
}

/// Tabulated marginal CDF.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalCdf {
    pub values: Vec<f64>,
    pub cdf: Vec<f64>,
}

/// Posterior of `(γ0, γ1)` as a finite mixture, with tabulated marginals.
#[derive(Clone, Debug)]
pub struct SecondStageFit {
    pub label: String,
    pub components: Vec<MixtureComponent>,
    pub marginals: [MarginalCdf; 2],
    /// Second-stage hyperparameter modes, one per component.
    pub hyper_modes: Vec<Vec<f64>>,
    /// Largest linearization update count over components.
    pub iterations: usize,
}

impl SecondStageFit {
    /// Normalizes the weights and tabulates both marginals.
    pub fn new(
        label: &str,
        mut components: Vec<MixtureComponent>,
        hyper_modes: Vec<Vec<f64>>,
        iterations: usize,
    ) -> Self {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        components.iter_mut().for_each(|c| c.weight /= total);
        let marginals = [0, 1].map(|q| tabulate(&components, q));
        Self {
            label: label.to_string(),
            components,
            marginals,
            hyper_modes,
            iterations,
        }
    }

    pub fn cdf_at(&self, q: usize, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.law.cdf(q, x))
            .sum()
    }

    pub fn mean(&self, q: usize) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.law.mean(q))
            .sum()
    }

    /// Mixture variance by the law of total variance.
    pub fn variance(&self, q: usize) -> f64 {
        let m = self.mean(q);
        self.components
            .iter()
            .map(|c| c.weight * (c.law.variance(q) + (c.law.mean(q) - m).powi(2)))
            .sum()
    }

    pub fn sd(&self, q: usize) -> f64 {
        self.variance(q).sqrt()
    }

    /// One draw: a component chosen by weight, then a draw within it.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let comp = if self.components.len() == 1 {
            &self.components[0]
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            self.components
                .iter()
                .find(|c| {
                    acc += c.weight;
                    u < acc
                })
                .unwrap_or_else(|| self.components.last().expect("fit has components"))
        };
        comp.law.draw(rng)
    }

    pub fn draw_gammas<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<[f64; 2]> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

fn tabulate(components: &[MixtureComponent], q: usize) -> MarginalCdf {
    let (lo, hi) = components
        .iter()
        .map(|c| c.law.support(q))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (l, h)| {
            (a.min(l), b.max(h))
        });
    let values: Vec<f64> = (0..CDF_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (CDF_POINTS - 1) as f64)
        .collect();
    let mut cdf: Vec<f64> = values
        .iter()
        .map(|&x| {
            components
                .iter()
                .map(|c| c.weight * c.law.cdf(q, x))
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect();
    for i in 1..cdf.len() {
        cdf[i] = cdf[i].max(cdf[i - 1]);
    }
    MarginalCdf { values, cdf }
}
