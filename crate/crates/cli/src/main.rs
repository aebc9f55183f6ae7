use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cepra_cli::aggregate::{box_plot_csv, collect_measures, histogram_csv, measure_histogram};
use cepra_cli::experiment::{sha256_hex, CellStatus};
use cepra_cli::{sweep, ExperimentConfig};
use cepra_core::cep::run_cep;
use cepra_core::forward::{
    ball_source_space, build_leadfield, preset_configuration, simulate_measurement, ElectrodeLayout, NoiseSpec,
    ShellModel, SOURCE_MARGIN_MM,
};
use cepra_core::hyperprior::{expectation_ratio, solve_kappa_match, theta_from_noise};
use cepra_core::io::{self, TruthRecord};
use cepra_core::metrics::{evaluate, MetricsReport};
use cepra_core::model::{scale_measurement, Dipole, DipoleConfig, HyperParams, PriorDegree};
use cepra_core::ramus::{run_ramus, RamusConfig, ScalingMode};
use cepra_core::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "cepra", version, about = "Hierarchical Bayesian EEG source localization in a three-shell sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an average-referenced leadfield for a random ball source space.
    MakeLeadfield {
        #[arg(long, default_value_t = 1000)]
        sources: usize,
        #[arg(long, default_value_t = 128)]
        electrodes: usize,
        /// Polar extent of the electrode cap in degrees.
        #[arg(long, default_value_t = 120.0)]
        cap_extent_deg: f64,
        /// Source ball radius in mm [default: innermost radius minus margin].
        #[arg(long)]
        source_radius: Option<f64>,
        #[arg(long, default_value_t = 1)]
        source_seed: u64,
        #[arg(long, default_value_t = ShellModel::DEFAULT_SERIES_TERMS)]
        series_terms: usize,
        /// Output binary leadfield; the sidecar goes to `<out>.toml`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a noisy measurement of a preset or explicit dipole set.
    Simulate {
        #[arg(long)]
        leadfield: PathBuf,
        /// Preset configuration `I` or `II`.
        #[arg(long, conflicts_with = "dipoles")]
        preset: Option<String>,
        /// JSON list of dipoles (position mm, unit moment, amplitude A·m).
        #[arg(long)]
        dipoles: Option<PathBuf>,
        /// Noise standard deviation relative to the peak channel.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_measurement: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
    },
    /// Single CEP reconstruction.
    Solve {
        #[command(flatten)]
        inputs: SolveInputs,
        #[arg(long)]
        out_trace: Option<PathBuf>,
    },
    /// Reconstruction averaged over random multiresolution decompositions.
    Ramus {
        #[command(flatten)]
        inputs: SolveInputs,
        #[arg(long, default_value_t = 100)]
        decompositions: usize,
        #[arg(long, default_value_t = 10.0)]
        sparsity: f64,
        #[arg(long, default_value_t = 10)]
        coarsest: usize,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, value_enum, default_value_t = Scaling::DataFit)]
        scaling: Scaling,
        /// Defaults to the config file's `seed`, then 0.
        #[arg(long)]
        master_seed: Option<u64>,
        /// JSON archive of per-decomposition solver traces.
        #[arg(long)]
        out_traces: Option<PathBuf>,
    },
    /// Hyperprior shape matching and scale selection, printed as JSON.
    Params {
        #[arg(long, default_value_t = 1)]
        q: u8,
        #[arg(long, default_value_t = 0.03)]
        rel_noise: f64,
        /// Dipole amplitude in A·m.
        #[arg(long, default_value_t = 1e-8)]
        amplitude: f64,
        /// Shape used for theta [default: the matched shape].
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Accuracy and focality of one estimate.
    Metrics {
        /// Leadfield whose sidecar defines the source space.
        #[arg(long)]
        leadfield: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool metric reports into box-plot and histogram CSVs.
    Report {
        /// Report files or directories searched for `*.metrics.json`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run an experiment configuration over all noise levels and methods.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// 10000 sources, 100 decompositions, 100 realizations.
        #[arg(long)]
        paper_scale: bool,
    },
}

#[derive(clap::Args)]
struct SolveInputs {
    #[arg(long)]
    leadfield: PathBuf,
    #[arg(long)]
    measurement: PathBuf,
    /// TOML with q, kappa, theta, sigma, updater and optional iteration counts
    /// and seed.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_estimate: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    DataFit,
    Literal,
}

#[derive(Deserialize)]
struct SolveConfig {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(flatten)]
    params: HyperParams,
}

fn load_solve(inputs: &SolveInputs) -> Result<(cepra_core::model::LeadField, DVector<f64>, f64, SolveConfig)> {
    let (lf, _) = io::read_leadfield(&inputs.leadfield)?;
    let raw = io::read_measurement_csv(&inputs.measurement)?;
    let y = scale_measurement(&raw)?;
    let text = fs::read_to_string(&inputs.config)?;
    let cfg: SolveConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.params.validate()?;
    Ok((lf, y.values, y.scale_to_unit, cfg))
}

fn find_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            find_reports(&e, out)?;
        }
    } else if path.to_string_lossy().ends_with(".metrics.json") {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    io::write_atomic(path, bytes)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::MakeLeadfield { sources, electrodes, cap_extent_deg, source_radius, source_seed, series_terms, out } => {
            let mut model = ShellModel::ary();
            model.series_terms = series_terms;
            model.validate()?;
            let radius = source_radius.unwrap_or(model.radii[0] - SOURCE_MARGIN_MM);
            let space = ball_source_space(sources, radius, source_seed)?;
            let layout = ElectrodeLayout::fibonacci_cap(electrodes, model.outer_radius(), cap_extent_deg.to_radians())?;
            let lf = build_leadfield(&model, &space, &layout)?;
            ensure_parent(&out)?;
            io::write_leadfield(&out, &lf, &space)?;
            println!("leadfield {}x{} ({} sources) -> {}", lf.channels(), lf.cols(), space.len(), out.display());
        }
        Command::Simulate { leadfield, preset, dipoles, noise, seed, out_measurement, out_truth } => {
            let (lf, space) = io::read_leadfield(&leadfield)?;
            let config = match (preset, dipoles) {
                (Some(p), None) => preset_configuration(&p, &space)?,
                (None, Some(path)) => DipoleConfig::new(io::read_json::<Vec<Dipole>>(&path)?, "custom")?,
                _ => return Err(Error::Config("give exactly one of --preset or --dipoles".into())),
            };
            let sim = simulate_measurement(&lf, &space, &config, &NoiseSpec::new(noise, seed)?)?;
            let raw = &sim.clean + &sim.noise;
            ensure_parent(&out_measurement)?;
            io::write_measurement_csv(&out_measurement, raw.as_slice())?;
            let record = TruthRecord {
                label: config.label.clone(),
                seed,
                rel_noise: noise,
                dipoles: config.dipoles.clone(),
                snapped_indices: sim.snapped.clone(),
                snap_distances_mm: sim.snap_distances.clone(),
                snap_warning: sim.snap_warning,
            };
            write_file(&out_truth, &io::to_json_bytes(&record)?)?;
            if sim.snap_warning {
                eprintln!("warning: a dipole moved more than 5 mm when snapped to the source grid");
            }
        }
        Command::Solve { inputs, out_trace } => {
            let (lf, y, scale, cfg) = load_solve(&inputs)?;
            let out = run_cep(&lf, &y, &cfg.params, None)?;
            write_file(&inputs.out_estimate, &io::encode_estimate_csv(&out.estimate.scaled(1.0 / scale))?)?;
            if let Some(p) = out_trace {
                write_file(&p, &io::encode_trace_csv(&out.trace)?)?;
            }
        }
        Command::Ramus { inputs, decompositions, sparsity, coarsest, levels, scaling, master_seed, out_traces } => {
            let (lf, y, scale, cfg) = load_solve(&inputs)?;
            let (_, space) = io::read_leadfield(&inputs.leadfield)?;
            let rc = RamusConfig {
                levels,
                sparsity,
                decompositions,
                coarsest_count: coarsest,
                scaling: match scaling {
                    Scaling::DataFit => ScalingMode::DataFit,
                    Scaling::Literal => ScalingMode::LiteralGeometricSum,
                },
            };
            let seed = master_seed.or(cfg.seed).unwrap_or(0);
            let out = run_ramus(&lf, &y, &cfg.params, &space, &rc, seed)?;
            write_file(&inputs.out_estimate, &io::encode_estimate_csv(&out.estimate.scaled(1.0 / scale))?)?;
            if let Some(p) = out_traces {
                write_file(&p, &io::to_json_bytes(&out.traces)?)?;
            }
        }
        Command::Params { q, rel_noise, amplitude, kappa } => {
            let q = PriorDegree::try_from(q).map_err(Error::Config)?;
            let matched = solve_kappa_match()?;
            let kappa = kappa.unwrap_or(matched.kappa);
            let value = serde_json::json!({
                "kappa_star": matched.kappa,
                "ratio_star": matched.ratio,
                "residual": matched.residual,
                "q": u8::from(q),
                "kappa": kappa,
                "ratio": expectation_ratio(q, kappa)?,
                "theta": theta_from_noise(rel_noise, amplitude, kappa, q)?,
            });
            println!("{}", serde_json::to_string_pretty(&value).map_err(|e| Error::Format(e.to_string()))?);
        }
        Command::Metrics { leadfield, estimate, truth, out } => {
            let (_, space) = io::read_leadfield(&leadfield)?;
            let x = io::read_estimate_csv(&estimate)?;
            let record: TruthRecord = io::read_json(&truth)?;
            let report = evaluate(&x, &space, &record.config()?, record.seed)?;
            write_file(&out, &io::to_json_bytes(&report)?)?;
        }
        Command::Report { inputs, out_dir } => {
            let mut paths = Vec::new();
            for input in &inputs {
                if input.is_file() {
                    paths.push(input.clone());
                } else {
                    find_reports(input, &mut paths)?;
                }
            }
            if paths.is_empty() {
                return Err(Error::Config("no metric reports found".into()));
            }
            let reports: Vec<MetricsReport> = paths.iter().map(|p| io::read_json(p)).collect::<Result<_>>()?;
            let samples = collect_measures(&reports)?;
            fs::create_dir_all(out_dir.join("histogram"))?;
            io::write_atomic(&out_dir.join("boxplot.csv"), &box_plot_csv(&samples)?)?;
            for (measure, values) in &samples {
                let h = measure_histogram(measure, values)?;
                io::write_atomic(&out_dir.join("histogram").join(format!("{measure}.csv")), &histogram_csv(&h)?)?;
            }
            println!("pooled {} reports into {}", reports.len(), out_dir.display());
        }
        Command::Sweep { config, paper_scale } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            let outcome = sweep(&cfg)?;
            for t in outcome.tables.iter().filter(|t| t.measure.starts_with("position_error") || t.measure == "emd") {
                for r in &t.rows {
                    println!(
                        "{:<10} noise {:<5} {:<22} n={:<4} median {:.3}",
                        t.method, r.level, t.measure, r.row.count, r.row.quantiles[2]
                    );
                }
            }
            let m = &outcome.manifest;
            println!("manifest {} ({} cells, {} failed)", sha256_hex(&io::to_json_bytes(m)?), m.cells.len(), m.failed_cells);
            for c in m.cells.iter().filter(|c| c.status == CellStatus::Failed) {
                eprintln!(
                    "failed: {} noise {} realization {}: {}",
                    c.method,
                    c.level,
                    c.realization,
                    c.error.as_deref().unwrap_or("")
                );
            }
            if m.failed_cells > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
