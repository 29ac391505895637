use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qprop_core::experiment::{
    illustrate, run_experiment, sweep_tau, Algorithm, ExperimentConfig, ExperimentError,
    MethodChoice, PresetId, Scale,
};
use qprop_core::sbc::Quantity;

#[derive(Parser)]
#[command(
    name = "qprop",
    version,
    about = "Two-stage uncertainty propagation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulation-based calibration of one propagation method.
    Sbc(Common),
    /// Fit every method to one simulated data set of an illustration preset.
    Illustrate(Common),
    /// Full-Q fits over a range of error precision scales.
    SweepTau {
        #[command(flatten)]
        common: Common,
        /// Comma-separated error precision scales.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config or a manifest from an earlier run. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    tau_eps: Option<f64>,
    /// Mesh resolution: scaled or full.
    #[arg(long)]
    scale: Option<String>,
    /// Comma-separated test quantities, e.g. gamma0,gamma1,node12.
    #[arg(long, value_delimiter = ',')]
    quantities: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Parallel width; defaults to the available cores. Never changes outputs.
    #[arg(long)]
    width: Option<usize>,
}

fn config_error(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(config_error)?;
    let inner = match value.get("config") {
        Some(c) if value.get("software_version").is_some() => c.clone(),
        _ => value,
    };
    ExperimentConfig::from_json(&inner.to_string())
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, ExperimentError> {
        let preset = self
            .preset
            .as_deref()
            .map(str::parse::<PresetId>)
            .transpose()?;
        let mut c = match (&self.config, preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(p)) => ExperimentConfig::for_preset(p),
            (None, None) => return Err(config_error("either --preset or --config is required")),
        };
        if let Some(p) = preset {
            c.preset = p;
        }
        if let Some(k) = self.k {
            c.k = k;
        }
        if let Some(l) = self.l {
            c.l = l;
        }
        if let Some(m) = &self.method {
            c.method = m.parse::<MethodChoice>()?;
        }
        if let Some(a) = &self.algorithm {
            c.algorithm = a.parse::<Algorithm>()?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(j) = self.j {
            c.j = j;
        }
        if let Some(t) = self.tau_eps {
            c.tau_eps = t;
        }
        if let Some(s) = &self.scale {
            c.scale = match s.as_str() {
                "scaled" => Scale::Scaled,
                "full" => Scale::Full,
                _ => return Err(config_error(format!("unknown scale {s:?}"))),
            };
        }
        if let Some(q) = &self.quantities {
            c.quantities = q
                .iter()
                .map(|s| s.parse::<Quantity>())
                .collect::<Result<_, _>>()
                .map_err(config_error)?;
        }
        c.validate()?;
        Ok(c)
    }

    fn width(&self) -> usize {
        self.width
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Sbc(common) => {
            let config = common.resolve()?;
            let report = run_experiment(&config, &common.out, common.width())?;
            for d in &report.diagnostics {
                let ks = d.ks.map_or(f64::NAN, |k| k.p_value);
                let band = d
                    .band_exceeded
                    .map_or("n/a", |b| if b { "exceeded" } else { "inside" });
                println!(
                    "{}: K={} ks_p={ks:.4} p_var={:.5} band={band}",
                    d.quantity, d.k, d.p_variance
                );
            }
            if !report.failures.is_empty() {
                println!(
                    "{} replicate(s) failed; see manifest.json",
                    report.failures.len()
                );
            }
        }
        Command::Illustrate(common) => {
            let config = common.resolve()?;
            let ill = illustrate(&config, &common.out)?;
            for (family, method, fit) in &ill.fits {
                println!(
                    "{family:?} {method}: gamma0 {:.4} ({:.4}) gamma1 {:.4} ({:.4})",
                    fit.mean(0),
                    fit.sd(0),
                    fit.mean(1),
                    fit.sd(1)
                );
            }
        }
        Command::SweepTau { common, values } => {
            let mut config = common.resolve()?;
            if let Some(v) = values {
                config.tau_values = v;
                config.validate()?;
            }
            let sweep = sweep_tau(&config, &common.out)?;
            for (tau, fit) in &sweep.fits {
                println!(
                    "tau_eps {tau:e}: gamma1 {:.4} ({:.4})",
                    fit.mean(1),
                    fit.sd(1)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                ExperimentError::UnknownPreset(_) | ExperimentError::Config(_) => 2,
                ExperimentError::BudgetExceeded { .. } => 3,
                _ => 1,
            })
        }
    }
}
