use std::f64::consts::PI;
use std::sync::Arc;

use qprop_core::lgm::{
    approx_log_hyper_posterior, empirical_bayes, gaussian_approx, linearized_fit, sample_latent,
    LgmSpec, Likelihood, NoisePrecision, NonlinearPredictor, Predictor,
};
use qprop_core::sparse::{CsrMatrix, Ordering, SymSparseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poisson_toy() -> (LgmSpec, Vec<f64>) {
    let design = CsrMatrix::from_rows(
        2,
        &[
            vec![(0, 1.0), (1, 0.5)],
            vec![(0, 1.0), (1, -1.0)],
            vec![(0, 1.0), (1, 2.0)],
            vec![(0, 1.0)],
        ],
    )
    .unwrap();
    let spec = LgmSpec {
        dim: 2,
        hyper_dim: 0,
        prior_precision: Arc::new(|_| {
            Ok(SymSparseMatrix::from_dense(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap())
        }),
        prior_mean: vec![0.2, -0.1],
        predictor: Predictor::Linear {
            design,
            offset: vec![0.1, 0.0, -0.3, 0.5],
        },
        likelihood: Likelihood::Poisson,
        hyperprior: Arc::new(|_| 0.0),
        ordering: Ordering::Natural,
    };
    (spec, vec![3.0, 0.0, 5.0, 2.0])
}

fn log_post_2d(spec: &LgmSpec, y: &[f64], x: &[f64]) -> f64 {
    spec.log_joint(&[], x, y).unwrap()
}

#[test]
fn poisson_mode_matches_brute_force() {
    let (spec, y) = poisson_toy();
    let ga = gaussian_approx(&spec, &[], &y).unwrap();

    // Coordinate-wise golden-section refinement as an independent optimizer.
    let mut x = vec![0.0, 0.0];
    for _ in 0..200 {
        for k in 0..2 {
            let (mut lo, mut hi) = (x[k] - 2.0, x[k] + 2.0);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..100 {
                let a = hi - g * (hi - lo);
                let b = lo + g * (hi - lo);
                let mut xa = x.clone();
                xa[k] = a;
                let mut xb = x.clone();
                xb[k] = b;
                if log_post_2d(&spec, &y, &xa) > log_post_2d(&spec, &y, &xb) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            x[k] = 0.5 * (lo + hi);
        }
    }
    for k in 0..2 {
        assert!(
            (ga.mode[k] - x[k]).abs() < 1e-6,
            "mode {k}: {} vs {}",
            ga.mode[k],
            x[k]
        );
    }
    let h = 1e-4;
    for i in 0..2 {
        for j in 0..2 {
            let f = |di: f64, dj: f64| {
                let mut p = ga.mode.clone();
                p[i] += di;
                p[j] += dj;
                log_post_2d(&spec, &y, &p)
            };
            let fd = -(f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
            assert!(
                (ga.precision.get(i, j) - fd).abs() < 1e-5,
                "precision ({i},{j})"
            );
        }
    }
}

/// `y_i = x + e_i`, `x ~ N(0, 1)`, noise log precision `θ`.
fn conjugate_spec(n: usize) -> LgmSpec {
    let design = CsrMatrix::from_rows(1, &vec![vec![(0, 1.0)]; n]).unwrap();
    LgmSpec {
        dim: 1,
        hyper_dim: 1,
        prior_precision: Arc::new(|_| Ok(SymSparseMatrix::identity(1))),
        prior_mean: vec![0.0],
        predictor: Predictor::Linear {
            design,
            offset: vec![0.0; n],
        },
        likelihood: Likelihood::Gaussian(NoisePrecision::Hyper(0)),
        hyperprior: Arc::new(|t| -0.5 * t[0] * t[0] / 4.0),
        ordering: Ordering::Natural,
    }
}

/// Closed-form `log N(y; 0, 11ᵀ + e^{-θ} I)` plus the hyperprior.
fn conjugate_marginal(y: &[f64], theta: f64) -> f64 {
    let n = y.len() as f64;
    let s2 = (-theta).exp();
    let sum: f64 = y.iter().sum();
    let ss: f64 = y.iter().map(|v| v * v).sum();
    // (s2 I + 11ᵀ)⁻¹ = (I - 11ᵀ/(s2 + n)) / s2, det = s2^(n-1) (s2 + n).
    let quad = (ss - sum * sum / (s2 + n)) / s2;
    let log_det = (n - 1.0) * s2.ln() + (s2 + n).ln();
    -0.5 * n * (2.0 * PI).ln() - 0.5 * log_det - 0.5 * quad - 0.5 * theta * theta / 4.0
}

#[test]
fn hyper_posterior_differences_are_exact() {
    let y = [0.3, 1.2, -0.4, 0.9, 0.1];
    let spec = conjugate_spec(y.len());
    let a = approx_log_hyper_posterior(&spec, &[0.2], &y).unwrap();
    let b = approx_log_hyper_posterior(&spec, &[1.7], &y).unwrap();
    let expect = conjugate_marginal(&y, 0.2) - conjugate_marginal(&y, 1.7);
    assert!((a - b - expect).abs() < 1e-8);
    assert!((a - conjugate_marginal(&y, 0.2)).abs() < 1e-8);
}

#[test]
fn empirical_bayes_matches_grid_search() {
    let y = [0.3, 1.2, -0.4, 0.9, 0.1, 2.0, -1.0, 0.5];
    let spec = conjugate_spec(y.len());
    let fit = empirical_bayes(&spec, &y, &[0.0]).unwrap();
    let (mut best, mut best_v) = (0.0, f64::NEG_INFINITY);
    for i in 0..2000 {
        let t = -5.0 + 10.0 * i as f64 / 1999.0;
        let v = conjugate_marginal(&y, t);
        if v > best_v {
            best = t;
            best_v = v;
        }
    }
    // Refine around the grid optimum with a finer local grid.
    for i in 0..2001 {
        let t = best - 0.005 + 0.01 * i as f64 / 2000.0;
        let v = conjugate_marginal(&y, t);
        if v > best_v {
            best = t;
            best_v = v;
        }
    }
    assert!(
        (fit.theta_mode[0] - best).abs() < 1e-3,
        "{} vs {best}",
        fit.theta_mode[0]
    );
    assert!(fit
        .trace
        .iter()
        .all(|(_, v)| *v <= fit.log_post_at_mode + 1e-12));
}

#[test]
fn empirical_bayes_multistart_agrees() {
    let y = [0.3, 1.2, -0.4, 0.9, 0.1, 2.0, -1.0, 0.5];
    let spec = conjugate_spec(y.len());
    let a = empirical_bayes(&spec, &y, &[-3.0]).unwrap();
    let b = empirical_bayes(&spec, &y, &[3.0]).unwrap();
    assert!((a.log_post_at_mode - b.log_post_at_mode).abs() < 1e-4);
}

#[test]
fn latent_draws_match_moments() {
    let (spec, y) = poisson_toy();
    let ga = gaussian_approx(&spec, &[], &y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let draws = sample_latent(&ga, n, &mut rng);
    let cov = ga.covariance_block(&[0, 1]).unwrap();
    for k in 0..2 {
        let m = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
        assert!((m - ga.mode[k]).abs() < 5.0 * (cov[k][k] / n as f64).sqrt());
    }
    let v = [1.0, -2.0];
    let vals: Vec<f64> = draws.iter().map(|d| v[0] * d[0] + v[1] * d[1]).collect();
    let m = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let expect: f64 = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| v[i] * cov[i][j] * v[j])
        .sum();
    // Relative standard error of a sample variance is sqrt(2/n).
    assert!((var / expect - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt());
}

#[test]
fn poisson_curvature_matches_finite_differences() {
    let (spec, y) = poisson_toy();
    let ga = gaussian_approx(&spec, &[], &y).unwrap();
    let Predictor::Linear { design, offset } = &spec.predictor else {
        unreachable!()
    };
    let eta = design.mul_vec(&ga.mode).unwrap();
    for (i, (&e, &o)) in eta.iter().zip(offset).enumerate() {
        let ll = |t: f64| y[i] * t - t.exp();
        let h = 1e-4;
        let fd = -(ll(e + o + h) - 2.0 * ll(e + o) + ll(e + o - h)) / (h * h);
        assert!(((e + o).exp() - fd).abs() < 1e-5);
    }
}

/// `η_i = g (c_i + e)` with latent `(g, e)`.
struct Bilinear {
    c: Vec<f64>,
}

impl NonlinearPredictor for Bilinear {
    fn n_obs(&self) -> usize {
        self.c.len()
    }
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, u: &[f64]) -> (Vec<f64>, CsrMatrix) {
        let eta = self.c.iter().map(|c| u[0] * (c + u[1])).collect();
        let rows: Vec<Vec<(usize, f64)>> = self
            .c
            .iter()
            .map(|c| vec![(0, c + u[1]), (1, u[0])])
            .collect();
        (eta, CsrMatrix::from_rows(2, &rows).unwrap())
    }
}

#[test]
fn nonlinear_toy_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..2.0)).collect();
    let (g_true, e_true) = (1.3, 0.2);
    let y: Vec<f64> = c
        .iter()
        .map(|ci| g_true * (ci + e_true) + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let spec = LgmSpec {
        dim: 2,
        hyper_dim: 0,
        prior_precision: Arc::new(|_| Ok(SymSparseMatrix::diagonal(&[1.0 / 0.25, 1.0 / 0.09]))),
        prior_mean: vec![1.0, 0.0],
        predictor: Predictor::Nonlinear(Arc::new(Bilinear { c: c.clone() })),
        likelihood: Likelihood::Gaussian(NoisePrecision::Fixed(4.0)),
        hyperprior: Arc::new(|_| 0.0),
        ordering: Ordering::Natural,
    };
    let fit = linearized_fit(&spec, &[], &y, None).unwrap();
    assert!(fit.converged);

    // Exact posterior on a dense 2-D grid.
    let n = 600;
    let (g0, g1, e0, e1) = (0.5, 2.1, -0.8, 1.2);
    let mut logp = vec![0.0; n * n];
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..n {
        for j in 0..n {
            let g = g0 + (g1 - g0) * i as f64 / (n - 1) as f64;
            let e = e0 + (e1 - e0) * j as f64 / (n - 1) as f64;
            let v = spec.log_joint(&[], &[g, e], &y).unwrap();
            logp[i * n + j] = v;
            if v > best.1 {
                best = (i * n + j, v);
            }
        }
    }
    let w: Vec<f64> = logp.iter().map(|v| (v - best.1).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut mean = [0.0; 2];
    let mut sq = [0.0; 2];
    for i in 0..n {
        for j in 0..n {
            let g = g0 + (g1 - g0) * i as f64 / (n - 1) as f64;
            let e = e0 + (e1 - e0) * j as f64 / (n - 1) as f64;
            let p = w[i * n + j] / z;
            mean[0] += p * g;
            mean[1] += p * e;
            sq[0] += p * g * g;
            sq[1] += p * e * e;
        }
    }
    let sd = [
        (sq[0] - mean[0].powi(2)).sqrt(),
        (sq[1] - mean[1].powi(2)).sqrt(),
    ];
    let grid_mode = [
        g0 + (g1 - g0) * (best.0 / n) as f64 / (n - 1) as f64,
        e0 + (e1 - e0) * (best.0 % n) as f64 / (n - 1) as f64,
    ];
    let approx_sd = fit.approx.marginal_sds();
    for k in 0..2 {
        let step = [(g1 - g0), (e1 - e0)][k] / (n - 1) as f64;
        assert!(
            (fit.approx.mode[k] - grid_mode[k]).abs() < 0.03 * sd[k] + step,
            "mode {k}: {} vs {}",
            fit.approx.mode[k],
            grid_mode[k]
        );
        assert!(
            (approx_sd[k] / sd[k] - 1.0).abs() < 0.03,
            "sd {k}: {} vs {}",
            approx_sd[k],
            sd[k]
        );
    }
}
