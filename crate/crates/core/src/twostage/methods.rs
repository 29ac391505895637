use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::first_stage::{FirstStageFit, LatentLayout, FIXED_EFFECTS};
use super::fit::{MixtureComponent, SecondStageFit};
use super::model::{fit_component, ErrorComponent, SecondStageModel};
use super::TwoStageError;
use crate::mesh::{coarse_to_fine_matrix, TriMesh};
use crate::par::map_indexed;
use crate::sparse::{factorize, CsrMatrix, SymSparseMatrix};

/// Coarse-mesh basis evaluated at the fine-mesh nodes, restricted to the
/// coarse nodes whose basis functions touch at least one fine node.
#[derive(Clone, Debug)]
pub struct CoarseBasis {
    b: CsrMatrix,
    kept: Vec<usize>,
}

impl CoarseBasis {
    pub fn new(coarse: &TriMesh, fine: &TriMesh) -> Result<Self, TwoStageError> {
        let full = coarse_to_fine_matrix(coarse, fine)?.into_matrix();
        let mut used = vec![false; full.cols()];
        full.iter()
            .filter(|&(_, _, v)| v != 0.0)
            .for_each(|(_, c, _)| used[c] = true);
        let kept: Vec<usize> = (0..full.cols()).filter(|&c| used[c]).collect();
        let mut new_index = vec![usize::MAX; full.cols()];
        kept.iter().enumerate().for_each(|(n, &o)| new_index[o] = n);
        let b = CsrMatrix::from_triplets(
            full.rows(),
            kept.len(),
            full.iter()
                .filter(|&(_, _, v)| v != 0.0)
                .map(|(r, c, v)| (r, new_index[c], v)),
        )?;
        Ok(Self { b, kept })
    }

    /// Fine nodes × kept coarse nodes.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.b
    }

    /// Original coarse-node indices of the kept columns.
    pub fn kept_nodes(&self) -> &[usize] {
        &self.kept
    }

    /// `blockdiag(I, B)` acting on `(ε_β, ε_ω*)`.
    fn expansion(&self) -> CsrMatrix {
        let t = (0..FIXED_EFFECTS).map(|i| (i, i, 1.0)).chain(
            self.b
                .iter()
                .map(|(r, c, v)| (r + FIXED_EFFECTS, c + FIXED_EFFECTS, v)),
        );
        CsrMatrix::from_triplets(
            FIXED_EFFECTS + self.b.rows(),
            FIXED_EFFECTS + self.b.cols(),
            t,
        )
        .expect("indices in range")
    }
}

/// Precision `Bᵀ Q B` of the coarse weights implied by fine weights with
/// precision `Q`.
pub fn coarse_precision(
    q: &SymSparseMatrix,
    b: &CsrMatrix,
) -> Result<SymSparseMatrix, TwoStageError> {
    Ok(q.congruence(b)?)
}

/// Generalized least-squares coarse weights `(BᵀQB)⁻¹ BᵀQ ω̂`.
pub fn coarse_gls_mean(
    q: &SymSparseMatrix,
    b: &CsrMatrix,
    omega_hat: &[f64],
) -> Result<Vec<f64>, TwoStageError> {
    let qb = coarse_precision(q, b)?;
    let rhs = b.tr_mul_vec(&q.mul_vec(omega_hat)?)?;
    Ok(factorize(&qb)?.solve(&rhs)?)
}

#[derive(Clone, Debug)]
pub enum PropagationMethod {
    PlugIn,
    Resampling {
        j: usize,
    },
    FullQ {
        tau_eps: f64,
    },
    LowRankQ {
        basis: Arc<CoarseBasis>,
        tau_eps: f64,
    },
}

impl PropagationMethod {
    pub fn label(&self) -> &'static str {
        match self {
            PropagationMethod::PlugIn => "plugin",
            PropagationMethod::Resampling { .. } => "resampling",
            PropagationMethod::FullQ { .. } => "full-q",
            PropagationMethod::LowRankQ { .. } => "lowrank-q",
        }
    }
}

fn check_shapes(f1: &FirstStageFit, m2: &SecondStageModel, y: &[f64]) -> Result<(), TwoStageError> {
    if m2.map().cols() != f1.approx.dim() {
        return Err(TwoStageError::Invalid(format!(
            "second-stage map has {} columns for a first-stage latent of size {}",
            m2.map().cols(),
            f1.approx.dim()
        )));
    }
    if y.len() != m2.n_obs() {
        return Err(TwoStageError::Invalid(format!(
            "{} observations for {} model rows",
            y.len(),
            m2.n_obs()
        )));
    }
    Ok(())
}

fn single(label: &str, c: super::model::ComponentFit) -> SecondStageFit {
    SecondStageFit::new(
        label,
        vec![MixtureComponent {
            weight: 1.0,
            law: c.law,
        }],
        vec![c.theta],
        c.approx.iterations,
    )
}

/// Second-stage fit with the first-stage posterior mean as a fixed exposure.
pub fn fit_plugin(
    f1: &FirstStageFit,
    m2: &SecondStageModel,
    y: &[f64],
) -> Result<SecondStageFit, TwoStageError> {
    check_shapes(f1, m2, y)?;
    let h0 = m2.map().mul_vec(&f1.approx.mode)?;
    Ok(single(
        "plugin",
        fit_component(m2, &h0, None, y, None, None)?,
    ))
}

/// Equal-weight mixture of plug-in fits, one per first-stage latent draw.
pub fn fit_resampling_with_draws(
    f1: &FirstStageFit,
    m2: &SecondStageModel,
    y: &[f64],
    draws: &[Vec<f64>],
) -> Result<SecondStageFit, TwoStageError> {
    check_shapes(f1, m2, y)?;
    if draws.is_empty() {
        return Err(TwoStageError::Invalid(
            "resampling needs at least one draw".into(),
        ));
    }
    let fits = map_indexed(draws.len(), |j| {
        let h = m2.map().mul_vec(&draws[j])?;
        fit_component(m2, &h, None, y, None, None)
    });
    let mut components = Vec::with_capacity(draws.len());
    let mut modes = Vec::with_capacity(draws.len());
    let mut iterations = 0;
    for f in fits {
        let f = f?;
        components.push(MixtureComponent {
            weight: 1.0,
            law: f.law,
        });
        modes.push(f.theta);
        iterations = iterations.max(f.approx.iterations);
    }
    Ok(SecondStageFit::new(
        "resampling",
        components,
        modes,
        iterations,
    ))
}

/// Resampling with `j` draws from `N(x̂, Q_x1⁻¹)`. Draw `k` uses its own
/// stream derived from one seed taken from `rng`.
pub fn fit_resampling<R: Rng + ?Sized>(
    f1: &FirstStageFit,
    m2: &SecondStageModel,
    y: &[f64],
    j: usize,
    rng: &mut R,
) -> Result<SecondStageFit, TwoStageError> {
    if j == 0 {
        return Err(TwoStageError::Invalid(
            "resampling needs at least one draw".into(),
        ));
    }
    let seed: u64 = rng.random();
    let draws = (0..j)
        .map(|k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k as u64);
            f1.approx.factor.sample_gaussian(&f1.approx.mode, &mut r)
        })
        .collect::<Result<Vec<_>, _>>()?;
    fit_resampling_with_draws(f1, m2, y, &draws)
}

fn fit_with_error(
    label: &str,
    f1: &FirstStageFit,
    m2: &SecondStageModel,
    y: &[f64],
    err: ErrorComponent,
) -> Result<SecondStageFit, TwoStageError> {
    let h0 = m2.map().mul_vec(&f1.approx.mode)?;
    let plug = fit_component(m2, &h0, None, y, None, None)?;
    let mut init = plug.approx.mode.clone();
    init.extend(std::iter::repeat_n(0.0, err.map.cols()));
    Ok(single(
        label,
        fit_component(m2, &h0, Some(&err), y, Some(&init), Some(&plug.theta))?,
    ))
}

fn check_tau(tau_eps: f64) -> Result<(), TwoStageError> {
    if !(tau_eps > 0.0) || !tau_eps.is_finite() {
        return Err(TwoStageError::Invalid(format!(
            "error precision scale must be positive, got {tau_eps}"
        )));
    }
    Ok(())
}

/// Adds `ε ~ N(0, (τ_ε Q_x1)⁻¹)` to the first-stage latent inside the
/// exposure map and fits the augmented model by iterative linearization.
pub fn fit_full_q(
    f1: &FirstStageFit,
    m2: &SecondStageModel,
    y: &[f64],
    tau_eps: f64,
) -> Result<SecondStageFit, TwoStageError> {
    check_shapes(f1, m2, y)?;
    check_tau(tau_eps)?;
    let err = ErrorComponent {
        map: m2.map().clone(),
        precision: f1.approx.precision.scaled(tau_eps),
    };
    fit_with_error("full-q", f1, m2, y, err)
}

/// As [`fit_full_q`] with the field part of the error restricted to the
/// span of a coarse basis: `ε = T ε*` with `T = blockdiag(I, B)` and prior
/// precision `τ_ε Tᵀ Q_x1 T`.
pub fn fit_lowrank_q(
    f1: &FirstStageFit,
    basis: &CoarseBasis,
    m2: &SecondStageModel,
    y: &[f64],
    tau_eps: f64,
) -> Result<SecondStageFit, TwoStageError> {
    check_shapes(f1, m2, y)?;
    check_tau(tau_eps)?;
    if basis.matrix().rows() + FIXED_EFFECTS != f1.approx.dim() {
        return Err(TwoStageError::Invalid(format!(
            "coarse basis has {} fine rows for {} field weights",
            basis.matrix().rows(),
            f1.approx.dim() - FIXED_EFFECTS
        )));
    }
    let t = basis.expansion();
    let err = ErrorComponent {
        map: m2.map().matmul(&t)?,
        precision: coarse_precision(&f1.approx.precision, &t)?.scaled(tau_eps),
    };
    fit_with_error("lowrank-q", f1, m2, y, err)
}

pub fn fit_method<R: Rng + ?Sized>(
    f1: &FirstStageFit,
    m2: &SecondStageModel,
    y: &[f64],
    method: &PropagationMethod,
    rng: &mut R,
) -> Result<SecondStageFit, TwoStageError> {
    match method {
        PropagationMethod::PlugIn => fit_plugin(f1, m2, y),
        PropagationMethod::Resampling { j } => fit_resampling(f1, m2, y, *j, rng),
        PropagationMethod::FullQ { tau_eps } => fit_full_q(f1, m2, y, *tau_eps),
        PropagationMethod::LowRankQ { basis, tau_eps } => fit_lowrank_q(f1, basis, m2, y, *tau_eps),
    }
}

impl LatentLayout {
    /// Coarse basis for low-rank propagation onto this layout's mesh.
    pub fn coarse_basis(&self, coarse: &TriMesh) -> Result<CoarseBasis, TwoStageError> {
        if !self.is_spatial() {
            return Err(TwoStageError::Invalid(
                "low-rank propagation needs a spatial first stage".into(),
            ));
        }
        CoarseBasis::new(coarse, self.mesh())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, Rect};

    #[test]
    fn gls_mean_with_identity_basis_returns_input() {
        let q = SymSparseMatrix::from_dense(&[
            vec![2.0, -0.5, 0.0],
            vec![-0.5, 3.0, 0.4],
            vec![0.0, 0.4, 1.5],
        ])
        .unwrap();
        let omega = [0.3, -1.2, 2.5];
        let m = coarse_gls_mean(&q, &CsrMatrix::identity(3), &omega).unwrap();
        for (a, b) in m.iter().zip(&omega) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_basis_on_identical_mesh_is_identity() {
        let mesh = build_structured_mesh(Rect::unit(), 0.25, 0.5).unwrap();
        let basis = CoarseBasis::new(&mesh, &mesh).unwrap();
        assert_eq!(basis.kept_nodes().len(), mesh.num_nodes());
        for (r, c, v) in basis.matrix().iter() {
            assert_eq!(r, c);
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_basis_rows_are_partitions_of_unity() {
        let fine = build_structured_mesh(Rect::unit(), 0.1, 0.25).unwrap();
        let coarse = build_structured_mesh(Rect::unit(), 0.25, 0.25).unwrap();
        let basis = CoarseBasis::new(&coarse, &fine).unwrap();
        let ones = vec![1.0; basis.matrix().cols()];
        assert!(basis
            .matrix()
            .mul_vec(&ones)
            .unwrap()
            .iter()
            .all(|s| (s - 1.0).abs() < 1e-12));
    }
}
