/// Settings for [`nelder_mead`].
#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    /// Initial simplex edge along each coordinate.
    pub step: f64,
    /// Stop once the spread of objective values over the simplex is below this.
    pub tol: f64,
    /// Also stop once every vertex lies within this distance of the best one.
    pub x_tol: f64,
    /// Total evaluation budget across the main run and the restart.
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            tol: 1e-5,
            x_tol: 1e-7,
            max_evals: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Maximizes `f` from `init`, restarting once from the best point to guard
/// against a collapsed simplex. Returns the evaluation count on budget
/// exhaustion.
pub fn nelder_mead<F>(
    f: &mut F,
    init: &[f64],
    options: &NelderMeadOptions,
) -> Result<NelderMeadResult, usize>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut evals = 0;
    let first = run(f, init, options, &mut evals)?;
    let second = run(f, &first.0, options, &mut evals)?;
    let (point, value) = if second.1 >= first.1 { second } else { first };
    Ok(NelderMeadResult {
        point,
        value,
        evaluations: evals,
    })
}

fn run<F>(
    f: &mut F,
    init: &[f64],
    o: &NelderMeadOptions,
    evals: &mut usize,
) -> Result<(Vec<f64>, f64), usize>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = init.len();
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64, usize> {
        if *evals >= o.max_evals {
            return Err(*evals);
        }
        *evals += 1;
        Ok(f(x))
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((init.to_vec(), eval(init, evals)?));
    for i in 0..n {
        let mut x = init.to_vec();
        x[i] += o.step;
        let v = eval(&x, evals)?;
        simplex.push((x, v));
    }
    loop {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if best.is_finite() && worst.is_finite() && best - worst < o.tol {
            return Ok(simplex.swap_remove(0));
        }
        let x0 = &simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(x0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if best.is_finite() && diameter < o.x_tol {
            return Ok(simplex.swap_remove(0));
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr, evals)?;
        if fr > best {
            let xe = along(2.0);
            let fe = eval(&xe, evals)?;
            simplex[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr > simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let outside = fr > worst;
        let xc = along(if outside { 0.5 } else { -0.5 });
        let fc = eval(&xc, evals)?;
        if (outside && fc >= fr) || (!outside && fc > worst) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0.clone();
        for k in 1..=n {
            let xs: Vec<f64> = x0
                .iter()
                .zip(&simplex[k].0)
                .map(|(a, b)| a + 0.5 * (b - a))
                .collect();
            let v = eval(&xs, evals)?;
            simplex[k] = (xs, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_maximum() {
        let mut f = |x: &[f64]| -((x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2));
        let r = nelder_mead(
            &mut f,
            &[0.0, 0.0],
            &NelderMeadOptions {
                tol: 1e-12,
                x_tol: 1e-9,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.point[0] - 1.0).abs() < 1e-4);
        assert!((r.point[1] + 2.0).abs() < 1e-4);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let mut f = |x: &[f64]| x[0];
        let r = nelder_mead(
            &mut f,
            &[0.0],
            &NelderMeadOptions {
                max_evals: 20,
                ..Default::default()
            },
        );
        assert_eq!(r.unwrap_err(), 20);
    }

    #[test]
    fn noisy_plateau_stops_on_simplex_size() {
        let mut k = 0u32;
        let mut f = |x: &[f64]| {
            k = k.wrapping_mul(1_103_515_245).wrapping_add(12_345);
            -(x[0] - 0.2).powi(2) + 1e-3 * (k >> 16) as f64 / 65_536.0
        };
        let r = nelder_mead(&mut f, &[1.0], &NelderMeadOptions::default()).unwrap();
        assert!(r.evaluations < 500);
    }

    #[test]
    fn handles_infeasible_regions() {
        let mut f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NEG_INFINITY
            } else {
                -(x[0] - 0.3).powi(2)
            }
        };
        let r = nelder_mead(&mut f, &[1.0], &NelderMeadOptions::default()).unwrap();
        assert!((r.point[0] - 0.3).abs() < 1e-2);
    }
}
