use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Algorithm, ExperimentConfig, MethodChoice};
use super::scene::Scene;
use super::ExperimentError;
use crate::mesh::Point;
use crate::sbc::{
    replicate_rng, run_sbc, Conditioning, ReplicateFailure, SbcReport, SbcSettings, TwoStageSbc,
};
use crate::spde::MaternParams;
use crate::twostage::{
    fit_method, simulate_two_stage, Family, SecondStageFit, SimulatedData, Truth, GAMMA0, GAMMA1,
};

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stream of the illustration data; methods draw from the next stream.
const DATA_STREAM: usize = 0;
const METHOD_STREAM: usize = 1;

/// Everything needed to rerun a command byte-identically. Wall-clock
/// times live in `timing.json` and are excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub preset: String,
    pub root_seed: u64,
    pub software_version: String,
    pub fine_mesh_nodes: usize,
    pub config: ExperimentConfig,
    pub failures: Vec<ReplicateFailure>,
}

impl Manifest {
    fn new(
        command: &str,
        config: &ExperimentConfig,
        scene: &Scene,
        failures: Vec<ReplicateFailure>,
    ) -> Self {
        Self {
            command: command.to_string(),
            preset: config.preset.to_string(),
            root_seed: config.seed,
            software_version: SOFTWARE_VERSION.to_string(),
            fine_mesh_nodes: scene.layout.mesh().num_nodes(),
            config: config.clone(),
            failures,
        }
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn conditioning(config: &ExperimentConfig) -> Result<Conditioning, ExperimentError> {
    let f = config.fixed;
    let field = MaternParams::from_interpretable(f.field_sigma, f.field_range)?;
    Ok(match config.algorithm {
        Algorithm::Alg2 => Conditioning::None,
        Algorithm::Alg3 => Conditioning::FixLatentHyper { field },
        Algorithm::Thm32 => Conditioning::FixAllHyper {
            sigma_e1: f.sigma_e1,
            field,
        },
    })
}

/// SBC model of the configured preset, method and algorithm.
pub fn sbc_model(config: &ExperimentConfig, scene: &Scene) -> Result<TwoStageSbc, ExperimentError> {
    let model = TwoStageSbc {
        first: scene.first.clone(),
        second: scene.second_stage(scene.family())?,
        method: scene.method(config.method, config.tau_eps, config.j)?,
        conditioning: conditioning(config)?,
        quantities: config.quantities.clone(),
    };
    model.validate()?;
    Ok(model)
}

/// Runs SBC for the configured preset and writes `ranks.csv`,
/// `summary.json`, `ecdf_band.csv`, `manifest.json` and `timing.json`.
/// Nothing is written unless every replicate has finished.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: &Path,
    width: usize,
) -> Result<SbcReport, ExperimentError> {
    config.validate()?;
    let start = Instant::now();
    let scene = Scene::build(config)?;
    let model = sbc_model(config, &scene)?;
    let report = run_sbc(
        &SbcSettings::new(config.k, config.l, config.seed),
        &model,
        width,
    )?;
    let seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(out)?;
    let mut ranks = String::from("replicate,quantity,rank,L,p\n");
    for r in &report.records {
        writeln!(
            ranks,
            "{},{},{},{},{}",
            r.replicate,
            r.quantity,
            r.rank,
            r.l,
            fmt17(r.p)
        )
        .expect("string write");
    }
    fs::write(out.join("ranks.csv"), ranks)?;

    let summary: Vec<_> = report
        .diagnostics
        .iter()
        .map(|d| {
            json!({
                "quantity": d.quantity,
                "K": d.k,
                "L": d.l,
                "ks_D": d.ks.map(|k| k.d),
                "ks_p": d.ks.map(|k| k.p_value),
                "chi2_stat": d.chi2.map(|c| c.stat),
                "chi2_p": d.chi2.map(|c| c.p_value),
                "chi2_bins": d.chi2.map(|c| c.bins),
                "band_exceeded": d.band_exceeded,
                "p_variance": d.p_variance,
            })
        })
        .collect();
    write_json(
        &out.join("summary.json"),
        &json!({ "quantities": summary, "failed_replicates": report.failures.len() }),
    )?;

    let mut band = String::from("quantity,t,lower,upper,ecdf_diff\n");
    for (q, b) in report.quantities.iter().zip(&report.bands) {
        if let Some(b) = b {
            for i in 0..b.t.len() {
                writeln!(
                    band,
                    "{q},{},{},{},{}",
                    fmt17(b.t[i]),
                    fmt17(b.lower[i]),
                    fmt17(b.upper[i]),
                    fmt17(b.ecdf_diff[i])
                )
                .expect("string write");
            }
        }
    }
    fs::write(out.join("ecdf_band.csv"), band)?;

    write_json(
        &out.join("manifest.json"),
        &Manifest::new("sbc", config, &scene, report.failures.clone()),
    )?;
    write_json(
        &out.join("timing.json"),
        &json!({ "wall_clock_seconds": seconds, "per_replicate_seconds": seconds / config.k as f64, "width": width }),
    )?;
    Ok(report)
}

/// Posterior summary of one illustration fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub family: Family,
    pub method: String,
    pub gamma_mean: [f64; 2],
    pub gamma_sd: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct Illustration {
    pub truth: Truth,
    /// One entry per family and method, in fitting order.
    pub fits: Vec<(Family, MethodChoice, SecondStageFit)>,
    /// Wall-clock seconds per fit, aligned with `fits`.
    pub seconds: Vec<f64>,
}

impl Illustration {
    pub fn fit(&self, family: Family, method: MethodChoice) -> Option<&SecondStageFit> {
        self.fits
            .iter()
            .find(|(f, m, _)| *f == family && *m == method)
            .map(|(_, _, fit)| fit)
    }
}

fn illustration_truth(config: &ExperimentConfig) -> Result<Truth, ExperimentError> {
    config.illustration_truth().ok_or_else(|| {
        ExperimentError::Config(format!(
            "{} has no illustration truth; supply \"truth\" in the config",
            config.preset
        ))
    })
}

fn family_id(f: Family) -> &'static str {
    match f {
        Family::GaussianPoint => "gaussian",
        Family::PoissonClassical => "poisson-classical",
        Family::PoissonNewSpec => "poisson-new",
    }
}

fn simulate(
    scene: &Scene,
    family: Family,
    truth: &Truth,
    seed: u64,
) -> Result<SimulatedData, ExperimentError> {
    let second = scene.second_stage(family)?;
    Ok(simulate_two_stage(
        &scene.first,
        &second,
        truth,
        &mut replicate_rng(seed, DATA_STREAM),
    )?)
}

/// Writes the marginal CDF tables of `fits` as `family,method,quantity,value,cdf`.
pub fn write_cdf_csv(
    path: &Path,
    fits: &[(Family, String, &SecondStageFit)],
) -> Result<(), ExperimentError> {
    let mut text = String::from("family,method,quantity,value,cdf\n");
    for (family, method, fit) in fits {
        for (q, name) in [(GAMMA0, "gamma0"), (GAMMA1, "gamma1")] {
            let m = &fit.marginals[q];
            for (v, c) in m.values.iter().zip(&m.cdf) {
                writeln!(
                    text,
                    "{},{method},{name},{},{}",
                    family_id(*family),
                    fmt17(*v),
                    fmt17(*c)
                )
                .expect("string write");
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Fits every applicable method to one simulated data set per family and
/// writes `cdf_<method>.csv`, `posterior_summary.json`,
/// `field_summary.csv`, `manifest.json` and `timing.json`.
pub fn illustrate(config: &ExperimentConfig, out: &Path) -> Result<Illustration, ExperimentError> {
    config.validate()?;
    let truth = illustration_truth(config)?;
    let scene = Scene::build(config)?;
    let methods: Vec<MethodChoice> = MethodChoice::ALL
        .into_iter()
        .filter(|m| {
            scene.layout.is_spatial()
                || !matches!(m, MethodChoice::LowRankA | MethodChoice::LowRankB)
        })
        .collect();

    let mut fits = Vec::new();
    let mut seconds = Vec::new();
    let mut field_rows = String::from("family,unit,id,x,y,mean,sd\n");
    for family in scene.families() {
        let data = simulate(&scene, family, &truth, config.seed)?;
        let second = scene.second_stage(family)?;
        let f1 = scene.first.fit(&data.w)?;
        for &choice in &methods {
            let method = scene.method(choice, config.tau_eps, config.j)?;
            let start = Instant::now();
            let fit = fit_method(
                &f1,
                &second,
                &data.y,
                &method,
                &mut replicate_rng(config.seed, METHOD_STREAM),
            )?;
            seconds.push(start.elapsed().as_secs_f64());
            fits.push((family, choice, fit));
        }
        let (unit, points, rows) = match family {
            Family::GaussianPoint => {
                let mesh = scene.layout.mesh();
                let inner = mesh.inner_rect();
                let pts: Vec<Point> = mesh
                    .nodes()
                    .iter()
                    .copied()
                    .filter(|p| inner.contains(*p))
                    .collect();
                ("node", pts.clone(), scene.layout.rows(&pts)?)
            }
            _ => {
                let pts = scene
                    .partition
                    .blocks()
                    .iter()
                    .map(|b| [0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1)])
                    .collect();
                ("block", pts, scene.layout.block_rows(&scene.partition)?)
            }
        };
        for (i, ((m, s), p)) in f1
            .functional_moments(&rows)?
            .into_iter()
            .zip(&points)
            .enumerate()
        {
            writeln!(
                field_rows,
                "{},{unit},{i},{},{},{},{}",
                family_id(family),
                fmt17(p[0]),
                fmt17(p[1]),
                fmt17(m),
                fmt17(s)
            )
            .expect("string write");
        }
    }

    fs::create_dir_all(out)?;
    for &choice in &methods {
        let rows: Vec<_> = fits
            .iter()
            .filter(|(_, m, _)| *m == choice)
            .map(|(f, m, fit)| (*f, m.to_string(), fit))
            .collect();
        write_cdf_csv(&out.join(format!("cdf_{}.csv", choice.file_stem())), &rows)?;
    }
    let summaries: Vec<FitSummary> = fits
        .iter()
        .map(|(f, m, fit)| FitSummary {
            family: *f,
            method: m.to_string(),
            gamma_mean: [fit.mean(GAMMA0), fit.mean(GAMMA1)],
            gamma_sd: [fit.sd(GAMMA0), fit.sd(GAMMA1)],
        })
        .collect();
    write_json(
        &out.join("posterior_summary.json"),
        &json!({ "truth": truth, "fits": summaries }),
    )?;
    fs::write(out.join("field_summary.csv"), field_rows)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest::new("illustrate", config, &scene, Vec::new()),
    )?;
    let timing: Vec<_> = fits
        .iter()
        .zip(&seconds)
        .map(|((f, m, _), s)| json!({ "family": f, "method": m.to_string(), "seconds": s }))
        .collect();
    write_json(&out.join("timing.json"), &json!({ "fits": timing }))?;
    Ok(Illustration {
        truth,
        fits,
        seconds,
    })
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub family: Family,
    pub plugin: SecondStageFit,
    /// Full-Q fits, one per error precision scale.
    pub fits: Vec<(f64, SecondStageFit)>,
}

/// Full-Q fits over `config.tau_values` on the illustration data, written
/// as `cdf_tau_<value>.csv` next to the plug-in reference `cdf_plugin.csv`.
pub fn sweep_tau(config: &ExperimentConfig, out: &Path) -> Result<SweepResult, ExperimentError> {
    config.validate()?;
    if config.tau_values.is_empty() {
        return Err(ExperimentError::Config("no tau values to sweep".into()));
    }
    let truth = illustration_truth(config)?;
    let scene = Scene::build(config)?;
    let family = scene.family();
    let data = simulate(&scene, family, &truth, config.seed)?;
    let second = scene.second_stage(family)?;
    let f1 = scene.first.fit(&data.w)?;
    let mut rng = replicate_rng(config.seed, METHOD_STREAM);
    let plugin = fit_method(
        &f1,
        &second,
        &data.y,
        &scene.method(MethodChoice::PlugIn, 1.0, 1)?,
        &mut rng,
    )?;
    let fits = config
        .tau_values
        .iter()
        .map(|&tau| {
            let method = scene.method(MethodChoice::FullQ, tau, config.j)?;
            Ok((
                tau,
                fit_method(
                    &f1,
                    &second,
                    &data.y,
                    &method,
                    &mut replicate_rng(config.seed, METHOD_STREAM),
                )?,
            ))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    fs::create_dir_all(out)?;
    write_cdf_csv(
        &out.join("cdf_plugin.csv"),
        &[(family, MethodChoice::PlugIn.to_string(), &plugin)],
    )?;
    for (tau, fit) in &fits {
        write_cdf_csv(
            &out.join(format!("cdf_tau_{tau:e}.csv")),
            &[(family, MethodChoice::FullQ.to_string(), fit)],
        )?;
    }
    write_json(
        &out.join("manifest.json"),
        &Manifest::new("sweep-tau", config, &scene, Vec::new()),
    )?;
    Ok(SweepResult {
        family,
        plugin,
        fits,
    })
}
