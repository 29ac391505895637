use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stats::{
    band_grid, chi_square_uniformity, ks_uniformity_test, rank_statistic, rank_to_unit,
    BandEnvelope, ChiSquareResult, EcdfBand, KsResult, BAND_MIN_SAMPLES,
};
use super::SbcError;
use crate::par::map_indexed_with_width;

/// True value of one quantity and its posterior draws for one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantityDraws {
    pub truth: f64,
    pub draws: Vec<f64>,
}

/// A generative model with an inference procedure. Each replicate draws
/// its truth and data from `rng`, fits, and returns `l` posterior draws of
/// every quantity in [`ReplicateModel::quantity_ids`] order.
pub trait ReplicateModel: Sync {
    fn quantity_ids(&self) -> Vec<String>;
    fn replicate(&self, rng: &mut ChaCha8Rng, l: usize) -> Result<Vec<QuantityDraws>, String>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcSettings {
    pub k: usize,
    pub l: usize,
    pub root_seed: u64,
    #[serde(default = "default_band_level")]
    pub band_level: f64,
    /// Largest tolerated fraction of failed replicates.
    #[serde(default = "default_failure_budget")]
    pub failure_budget: f64,
}

fn default_band_level() -> f64 {
    0.95
}

fn default_failure_budget() -> f64 {
    0.02
}

impl SbcSettings {
    pub fn new(k: usize, l: usize, root_seed: u64) -> Self {
        Self {
            k,
            l,
            root_seed,
            band_level: default_band_level(),
            failure_budget: default_failure_budget(),
        }
    }
}

/// Random stream of replicate `k`: the root seed selects the key and `k`
/// the stream, so replicates are independent of execution order.
pub fn replicate_rng(root_seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(k as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub replicate: usize,
    pub quantity: String,
    pub rank: usize,
    pub l: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub cause: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityDiagnostics {
    pub quantity: String,
    pub k: usize,
    pub l: usize,
    pub ks: Option<KsResult>,
    pub chi2: Option<ChiSquareResult>,
    pub band_exceeded: Option<bool>,
    /// Sample variance of the normalized ranks; `1/12` under uniformity.
    pub p_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub settings: SbcSettings,
    pub quantities: Vec<String>,
    /// Sorted by replicate, then quantity order.
    pub records: Vec<RankRecord>,
    pub diagnostics: Vec<QuantityDiagnostics>,
    pub bands: Vec<Option<EcdfBand>>,
    pub failures: Vec<ReplicateFailure>,
}

impl SbcReport {
    pub fn ranks(&self, quantity: &str) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.quantity == quantity)
            .map(|r| r.rank)
            .collect()
    }

    pub fn normalized(&self, quantity: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.quantity == quantity)
            .map(|r| r.p)
            .collect()
    }

    pub fn diagnostics_for(&self, quantity: &str) -> Option<&QuantityDiagnostics> {
        self.diagnostics.iter().find(|d| d.quantity == quantity)
    }

    pub fn band_for(&self, quantity: &str) -> Option<&EcdfBand> {
        let i = self.quantities.iter().position(|q| q == quantity)?;
        self.bands[i].as_ref()
    }
}

/// Runs `settings.k` replicates of `model` on `width` threads and tests
/// the ranks of every quantity for uniformity. Failed replicates are
/// recorded and excluded; more than `failure_budget · k` failures abort.
pub fn run_sbc(
    settings: &SbcSettings,
    model: &dyn ReplicateModel,
    width: usize,
) -> Result<SbcReport, SbcError> {
    if settings.k == 0 || settings.l == 0 {
        return Err(SbcError::Invalid(format!(
            "K = {} and L = {} must both be positive",
            settings.k, settings.l
        )));
    }
    let quantities = model.quantity_ids();
    if quantities.is_empty() {
        return Err(SbcError::Invalid("no test quantities".into()));
    }
    let l = settings.l;
    let outcomes = map_indexed_with_width(settings.k, width, |k| -> Result<Vec<usize>, String> {
        let mut rng = replicate_rng(settings.root_seed, k);
        let draws = model.replicate(&mut rng, l)?;
        if draws.len() != quantities.len() {
            return Err(format!(
                "{} quantities returned, {} expected",
                draws.len(),
                quantities.len()
            ));
        }
        draws
            .iter()
            .map(|q| {
                if q.draws.len() != l {
                    return Err(format!("{} draws returned, {l} expected", q.draws.len()));
                }
                rank_statistic(&q.draws, q.truth).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut records = Vec::with_capacity(settings.k * quantities.len());
    let mut failures = Vec::new();
    for (k, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(ranks) => {
                records.extend(
                    ranks
                        .into_iter()
                        .zip(&quantities)
                        .map(|(rank, q)| RankRecord {
                            replicate: k,
                            quantity: q.clone(),
                            rank,
                            l,
                            p: rank as f64 / l as f64,
                        }),
                )
            }
            Err(cause) => failures.push(ReplicateFailure {
                replicate: k,
                cause,
            }),
        }
    }
    if failures.len() as f64 > settings.failure_budget * settings.k as f64 {
        return Err(SbcError::FailureBudgetExceeded {
            failed: failures.len(),
            total: settings.k,
            first_cause: failures[0].cause.clone(),
        });
    }

    let k_ok = settings.k - failures.len();
    let envelope = if k_ok >= BAND_MIN_SAMPLES {
        Some(BandEnvelope::calibrate(
            k_ok,
            band_grid(l),
            settings.band_level,
            band_seed(settings.root_seed),
        )?)
    } else {
        None
    };
    let mut diagnostics = Vec::with_capacity(quantities.len());
    let mut bands = Vec::with_capacity(quantities.len());
    for q in &quantities {
        let ranks: Vec<usize> = records
            .iter()
            .filter(|r| &r.quantity == q)
            .map(|r| r.rank)
            .collect();
        let p: Vec<f64> = ranks.iter().map(|&r| r as f64 / l as f64).collect();
        let band = match &envelope {
            Some(env) => Some(
                env.apply(
                    &ranks
                        .iter()
                        .map(|&r| rank_to_unit(r, l))
                        .collect::<Vec<_>>(),
                )?,
            ),
            None => None,
        };
        diagnostics.push(QuantityDiagnostics {
            quantity: q.clone(),
            k: ranks.len(),
            l,
            ks: ks_uniformity_test(&p).ok(),
            chi2: chi_square_auto(&ranks, l),
            band_exceeded: band.as_ref().map(EcdfBand::exceeded),
            p_variance: if p.len() > 1 {
                crate::util::variance(&p)
            } else {
                f64::NAN
            },
        });
        bands.push(band);
    }
    Ok(SbcReport {
        settings: *settings,
        quantities,
        records,
        diagnostics,
        bands,
        failures,
    })
}

/// Key for the band calibration stream, distinct from the replicate key.
fn band_seed(root_seed: u64) -> u64 {
    root_seed ^ 0x9E37_79B9_7F4A_7C15
}

/// χ² test with the most bins (at most 10) whose expected counts allow it.
fn chi_square_auto(ranks: &[usize], l: usize) -> Option<ChiSquareResult> {
    (2..=(l + 1).min(10))
        .rev()
        .find_map(|b| chi_square_uniformity(ranks, l, b).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Truth and draws from the same law: ranks are exactly uniform.
    struct Exchangeable;

    impl ReplicateModel for Exchangeable {
        fn quantity_ids(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }

        fn replicate(&self, rng: &mut ChaCha8Rng, l: usize) -> Result<Vec<QuantityDraws>, String> {
            Ok((0..2)
                .map(|_| QuantityDraws {
                    truth: rng.random(),
                    draws: (0..l).map(|_| rng.random()).collect(),
                })
                .collect())
        }
    }

    /// Fails on every replicate index divisible by `every`.
    struct Flaky {
        every: usize,
    }

    impl ReplicateModel for Flaky {
        fn quantity_ids(&self) -> Vec<String> {
            vec!["a".into()]
        }

        fn replicate(&self, rng: &mut ChaCha8Rng, l: usize) -> Result<Vec<QuantityDraws>, String> {
            let x: f64 = rng.random();
            if (rng.get_stream() as usize).is_multiple_of(self.every) {
                return Err("flaky".into());
            }
            Ok(vec![QuantityDraws {
                truth: x,
                draws: vec![0.5; l],
            }])
        }
    }

    #[test]
    fn records_are_complete_and_normalized() {
        let s = SbcSettings::new(60, 9, 4);
        let rep = run_sbc(&s, &Exchangeable, 1).unwrap();
        assert_eq!(rep.records.len(), 120);
        assert!(rep
            .records
            .iter()
            .all(|r| r.p == r.rank as f64 / 9.0 && r.rank <= 9));
        assert_eq!(rep.records[1].replicate, 0);
        assert_eq!(rep.records[1].quantity, "b");
        assert!(rep
            .diagnostics
            .iter()
            .all(|d| d.ks.is_some() && d.chi2.is_some()));
    }

    #[test]
    fn width_does_not_change_report() {
        let s = SbcSettings::new(40, 20, 99);
        assert_eq!(
            run_sbc(&s, &Exchangeable, 1).unwrap(),
            run_sbc(&s, &Exchangeable, 8).unwrap()
        );
    }

    #[test]
    fn zero_replicates_is_an_error() {
        assert!(run_sbc(&SbcSettings::new(0, 9, 1), &Exchangeable, 1).is_err());
        assert!(run_sbc(&SbcSettings::new(5, 0, 1), &Exchangeable, 1).is_err());
    }

    #[test]
    fn failures_are_recorded_within_budget() {
        let rep = run_sbc(&SbcSettings::new(100, 5, 1), &Flaky { every: 50 }, 1).unwrap();
        assert_eq!(
            rep.failures.iter().map(|f| f.replicate).collect::<Vec<_>>(),
            vec![0, 50]
        );
        assert_eq!(rep.records.len(), 98);
        let err = run_sbc(&SbcSettings::new(100, 5, 1), &Flaky { every: 20 }, 1).unwrap_err();
        assert!(matches!(
            err,
            SbcError::FailureBudgetExceeded {
                failed: 5,
                total: 100,
                ..
            }
        ));
    }

    #[test]
    fn streams_differ_by_replicate() {
        let a: u64 = replicate_rng(1, 0).random();
        let b: u64 = replicate_rng(1, 1).random();
        assert_ne!(a, b);
        assert_eq!(a, replicate_rng(1, 0).random::<u64>());
    }
}
