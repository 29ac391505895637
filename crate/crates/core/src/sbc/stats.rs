use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use super::SbcError;

/// Number of posterior draws strictly below the reference value.
pub fn rank_statistic(samples: &[f64], reference: f64) -> Result<usize, SbcError> {
    if samples.is_empty() {
        return Err(SbcError::Invalid(
            "rank statistic needs at least one draw".into(),
        ));
    }
    if !reference.is_finite() || samples.iter().any(|s| !s.is_finite()) {
        return Err(SbcError::NonFiniteInput);
    }
    Ok(samples.iter().filter(|&&s| s < reference).count())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Smallest sample accepted by [`ks_uniformity_test`].
pub const KS_MIN_SAMPLES: usize = 5;

/// One-sample Kolmogorov–Smirnov test against Uniform(0, 1) with the
/// asymptotic p-value.
pub fn ks_uniformity_test(p: &[f64]) -> Result<KsResult, SbcError> {
    if p.len() < KS_MIN_SAMPLES {
        return Err(SbcError::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            got: p.len(),
        });
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(SbcError::NonFiniteInput);
    }
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        d,
        p_value: kolmogorov_sf(n, d),
    })
}

/// `P(D_n > d)` from the Kolmogorov series with the small-sample
/// correction `λ = (√n + 0.12 + 0.11/√n) d`.
pub fn kolmogorov_sf(n: f64, d: f64) -> f64 {
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub stat: f64,
    pub p_value: f64,
    pub bins: usize,
}

/// Smallest expected count per bin accepted by [`chi_square_uniformity`].
pub const CHI2_MIN_EXPECTED: f64 = 5.0;

/// Pearson test of ranks on `{0, …, L}` against the discrete uniform law.
/// Rank `r` falls in bin `⌊r · bins / (L + 1)⌋`; expected counts follow the
/// number of rank values per bin, so they are equal whenever `bins`
/// divides `L + 1`.
pub fn chi_square_uniformity(
    ranks: &[usize],
    l: usize,
    bins: usize,
) -> Result<ChiSquareResult, SbcError> {
    if bins < 2 || bins > l + 1 {
        return Err(SbcError::Invalid(format!("{bins} bins for ranks 0..={l}")));
    }
    if let Some(&r) = ranks.iter().find(|&&r| r > l) {
        return Err(SbcError::Invalid(format!("rank {r} exceeds L = {l}")));
    }
    let bin_of = |r: usize| r * bins / (l + 1);
    let mut width = vec![0usize; bins];
    for r in 0..=l {
        width[bin_of(r)] += 1;
    }
    let k = ranks.len() as f64;
    let expected: Vec<f64> = width
        .iter()
        .map(|&w| k * w as f64 / (l + 1) as f64)
        .collect();
    let min_expected = expected.iter().copied().fold(f64::INFINITY, f64::min);
    if min_expected < CHI2_MIN_EXPECTED {
        let needed = (CHI2_MIN_EXPECTED * k / min_expected.max(f64::MIN_POSITIVE)).ceil() as usize;
        return Err(SbcError::TooFewSamples {
            needed,
            got: ranks.len(),
        });
    }
    let mut observed = vec![0usize; bins];
    for &r in ranks {
        observed[bin_of(r)] += 1;
    }
    let stat: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((bins - 1) as f64).expect("positive degrees of freedom");
    Ok(ChiSquareResult {
        stat,
        p_value: dist.sf(stat),
        bins,
    })
}

/// Simultaneous band for `ECDF(t) − t` with the observed curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfBand {
    pub t: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub ecdf_diff: Vec<f64>,
    /// Pointwise level used for the binomial envelope.
    pub adjusted_alpha: f64,
    /// Monte Carlo simultaneous coverage at `adjusted_alpha`.
    pub coverage: f64,
}

impl EcdfBand {
    pub fn exceeded(&self) -> bool {
        self.ecdf_diff
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .any(|(d, (lo, hi))| *d < lo - 1e-12 || *d > hi + 1e-12)
    }
}

pub const BAND_MIN_SAMPLES: usize = 10;
pub const BAND_DATASETS: usize = 2000;

/// Evaluation grid for ranks on `{0, …, L}`: the cell edges `j / (L + 1)`
/// when there are at most 101 of them, otherwise 101 equispaced points.
pub fn band_grid(l: usize) -> Vec<f64> {
    unit_grid(if l < 100 { l + 1 } else { 100 })
}

fn unit_grid(cells: usize) -> Vec<f64> {
    (0..=cells).map(|j| j as f64 / cells as f64).collect()
}

/// Maps rank `r` to the midpoint of its cell `[r, r + 1] / (L + 1)`, so the
/// ECDF at each cell edge has exactly the uniform law.
pub fn rank_to_unit(r: usize, l: usize) -> f64 {
    (r as f64 + 0.5) / (l as f64 + 1.0)
}

/// Pointwise binomial envelope for `K` uniforms on `grid`, calibrated by
/// bisection on the pointwise level so that the fraction of
/// [`BAND_DATASETS`] simulated uniform samples lying fully inside is as
/// close as possible to `level`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandEnvelope {
    pub grid: Vec<f64>,
    pub k: usize,
    /// Inclusive count bounds at each grid point.
    pub lo_count: Vec<u64>,
    pub hi_count: Vec<u64>,
    pub adjusted_alpha: f64,
    pub coverage: f64,
}

impl BandEnvelope {
    pub fn calibrate(k: usize, grid: Vec<f64>, level: f64, seed: u64) -> Result<Self, SbcError> {
        if k < BAND_MIN_SAMPLES {
            return Err(SbcError::TooFewSamples {
                needed: BAND_MIN_SAMPLES,
                got: k,
            });
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(SbcError::Invalid(format!(
                "band level {level} outside (0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<Vec<u64>> = (0..BAND_DATASETS)
            .map(|_| grid_counts(&uniform_sample(k, &mut rng), &grid))
            .collect();
        let dists: Vec<Binomial> = grid
            .iter()
            .map(|&t| Binomial::new(t.clamp(0.0, 1.0), k as u64).expect("valid binomial"))
            .collect();
        let bounds = |alpha: f64| -> (Vec<u64>, Vec<u64>) {
            dists
                .iter()
                .map(|d| (d.inverse_cdf(0.5 * alpha), d.inverse_cdf(1.0 - 0.5 * alpha)))
                .unzip()
        };
        let coverage_of = |lo: &[u64], hi: &[u64]| -> f64 {
            let inside = counts
                .iter()
                .filter(|c| {
                    c.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(x, (a, b))| a <= x && x <= b)
                })
                .count();
            inside as f64 / BAND_DATASETS as f64
        };
        // Coverage is non-increasing in the pointwise level.
        let (mut a_lo, mut a_hi) = (1e-8, 1.0 - level);
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..40 {
            let mid = 0.5 * (a_lo + a_hi);
            let (lo, hi) = bounds(mid);
            let cov = coverage_of(&lo, &hi);
            if best.is_none_or(|(_, c)| (cov - level).abs() < (c - level).abs()) {
                best = Some((mid, cov));
            }
            if (cov - level).abs() <= 0.0025 {
                break;
            }
            if cov > level {
                a_lo = mid;
            } else {
                a_hi = mid;
            }
        }
        let (adjusted_alpha, coverage) = best.expect("at least one bisection step");
        let (lo_count, hi_count) = bounds(adjusted_alpha);
        Ok(Self {
            grid,
            k,
            lo_count,
            hi_count,
            adjusted_alpha,
            coverage,
        })
    }

    /// Fraction of `n` fresh uniform samples lying fully inside the band.
    pub fn coverage_on_fresh<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> f64 {
        let inside = (0..n)
            .filter(|_| self.contains(&grid_counts(&uniform_sample(self.k, rng), &self.grid)))
            .count();
        inside as f64 / n as f64
    }

    fn contains(&self, counts: &[u64]) -> bool {
        counts
            .iter()
            .zip(self.lo_count.iter().zip(&self.hi_count))
            .all(|(x, (a, b))| a <= x && x <= b)
    }

    /// Band and observed `ECDF(t) − t` for values in `[0, 1]`.
    pub fn apply(&self, u: &[f64]) -> Result<EcdfBand, SbcError> {
        if u.len() != self.k {
            return Err(SbcError::Invalid(format!(
                "band calibrated for {} values, got {}",
                self.k,
                u.len()
            )));
        }
        let counts = grid_counts(u, &self.grid);
        let k = self.k as f64;
        let diff = |c: u64, t: f64| c as f64 / k - t;
        Ok(EcdfBand {
            t: self.grid.clone(),
            lower: self
                .lo_count
                .iter()
                .zip(&self.grid)
                .map(|(&c, &t)| diff(c, t))
                .collect(),
            upper: self
                .hi_count
                .iter()
                .zip(&self.grid)
                .map(|(&c, &t)| diff(c, t))
                .collect(),
            ecdf_diff: counts
                .iter()
                .zip(&self.grid)
                .map(|(&c, &t)| diff(c, t))
                .collect(),
            adjusted_alpha: self.adjusted_alpha,
            coverage: self.coverage,
        })
    }
}

fn uniform_sample<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k).map(|_| rng.random::<f64>()).collect()
}

/// `#{u_i ≤ t_j}` for each grid point.
fn grid_counts(u: &[f64], grid: &[f64]) -> Vec<u64> {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    grid.iter()
        .map(|&t| s.partition_point(|&x| x <= t) as u64)
        .collect()
}

/// ECDF-difference band for normalized values `p ∈ [0, 1]` on a grid of
/// 101 points.
pub fn ecdf_difference_band(p: &[f64], level: f64, seed: u64) -> Result<EcdfBand, SbcError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(SbcError::NonFiniteInput);
    }
    BandEnvelope::calibrate(p.len(), unit_grid(100), level, seed)?.apply(p)
}

/// ECDF-difference band for ranks on `{0, …, L}`.
pub fn ecdf_difference_band_for_ranks(
    ranks: &[usize],
    l: usize,
    level: f64,
    seed: u64,
) -> Result<EcdfBand, SbcError> {
    let u: Vec<f64> = ranks.iter().map(|&r| rank_to_unit(r, l)).collect();
    BandEnvelope::calibrate(u.len(), band_grid(l), level, seed)?.apply(&u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub failing: Vec<usize>,
    pub failure_fraction: f64,
    pub p_values: Vec<f64>,
}

/// Per-node KS tests; nodes with `p < alpha` fail.
pub fn batch_node_tests(per_node: &[Vec<f64>], alpha: f64) -> Result<BatchResult, SbcError> {
    if per_node.is_empty() {
        return Err(SbcError::Invalid("no nodes to test".into()));
    }
    let p_values = per_node
        .iter()
        .map(|p| ks_uniformity_test(p).map(|r| r.p_value))
        .collect::<Result<Vec<_>, _>>()?;
    let failing: Vec<usize> = p_values
        .iter()
        .enumerate()
        .filter(|(_, &p)| p < alpha)
        .map(|(i, _)| i)
        .collect();
    Ok(BatchResult {
        failure_fraction: failing.len() as f64 / per_node.len() as f64,
        failing,
        p_values,
    })
}
