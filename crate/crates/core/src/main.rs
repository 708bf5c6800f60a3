use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use relaxmcr::analysis::{distribution_maps, export_maps, write_kinetics_csv, write_radial_csv, MapFormat};
use relaxmcr::ilt::{write_spectrum, IltParams};
use relaxmcr::mcr::AlsStatus;
use relaxmcr::numkit::write_scree_csv;
use relaxmcr::phantom::{generate, write_phantom, PhantomSpec};
use relaxmcr::pipeline::{self, MaskConfig, RunConfig};
use relaxmcr::results::read_result_dir;
use relaxmcr::{Error, Result};

#[derive(Parser)]
#[command(name = "relaxmcr", version, about = "Multivariate curve resolution of multi-echo T2 image series")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Singular-value scan of the augmented matrix.
    Rank {
        /// Manifest of the series (defaults to the configured one).
        manifest: Option<PathBuf>,
        /// Mask method: otsu, fixed:<fraction> or external:<path>.
        #[arg(long)]
        mask: Option<String>,
    },
    /// SIMPLISMA initialization and constrained ALS; writes a result directory.
    Decompose,
    /// Relaxation-time distributions of resolved spectra.
    Ilt {
        result_dir: PathBuf,
        /// Components to invert, e.g. 0,2 (default: all process components).
        #[arg(long, value_delimiter = ',')]
        components: Vec<usize>,
    },
    /// Kinetic and radial concentration profiles.
    Profiles {
        result_dir: PathBuf,
        /// Radial distances in mm, e.g. 0,1.72,2.31,3.15.
        #[arg(long, value_delimiter = ',')]
        distances: Vec<f64>,
        /// Sample one pixel per distance instead of an annulus mean.
        #[arg(long)]
        single_pixel: bool,
        #[arg(long)]
        annulus_width: Option<f64>,
    },
    /// Generate a synthetic swelling-cylinder series with ground truth.
    Phantom {
        /// Phantom spec JSON; omitted fields take their defaults.
        spec: Option<PathBuf>,
    },
    /// Write concentration maps as images or CSV.
    ExportMaps {
        result_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Pgm16)]
        format: FormatArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Pgm16,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_target(false).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.als.parallel = cli.threads != 1;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Rank { manifest, mask } => {
            let mut cfg = load_config(cli)?;
            if let Some(m) = manifest {
                cfg.manifest = m.clone();
            }
            if let Some(m) = mask {
                cfg.mask = MaskConfig::parse(m)?;
            }
            let series = pipeline::load_series(&cfg.manifest, &cfg.mask, cfg.mask_mode)?;
            let scan = pipeline::rank_scan(&series)?;
            let dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
            ensure_dir(&dir)?;
            let csv = dir.join("scree.csv");
            write_scree_csv(&scan, &csv)?;
            for (i, s) in scan.singular_values.iter().take(10).enumerate() {
                println!("sigma_{:<2} {s:.6e}", i + 1);
            }
            println!("noise floor {:.6e}", scan.noise_floor);
            println!("suggested rank: {}", scan.suggested_rank);
            println!("note: this is a heuristic; models with different numbers of components should be tested");
            println!("scree: {}", csv.display());
        }
        Command::Decompose => {
            let cfg = load_config(cli)?;
            cfg.validate()?;
            let series = pipeline::load_series(&cfg.manifest, &cfg.mask, cfg.mask_mode)?;
            let out = pipeline::decompose(&cfg, &series)?;
            let d = out.result.diagnostics;
            println!("explained variance: {:.4} %", d.explained_variance_pct);
            println!("lack of fit: {:.4} %", d.lack_of_fit_pct);
            println!(
                "status: {:?} after {} iterations (best {})",
                out.result.status,
                out.result.lof_trace.len(),
                out.result.best_iteration
            );
            println!("results: {}", cfg.output_dir.display());
            if out.result.status == AlsStatus::Diverged {
                return Err(Error::Convergence("alternating least squares diverged".into()));
            }
        }
        Command::Ilt { result_dir, components } => {
            let params = match &cli.config {
                Some(p) => RunConfig::load(p)?.ilt,
                None => IltParams::default(),
            };
            let bundle = read_result_dir(result_dir)?;
            let spectra = pipeline::relaxation_spectra(&bundle, &params, components)?;
            let dir = cli.out.clone().unwrap_or_else(|| result_dir.clone());
            ensure_dir(&dir)?;
            for cs in &spectra {
                let q = cs.component;
                write_spectrum(
                    &cs.spectrum,
                    &dir.join(format!("ilt_component_{q}.csv")),
                    &dir.join(format!("ilt_component_{q}.json")),
                )?;
                println!("component {q}: lambda {:.3e}", cs.spectrum.lambda_used);
                for p in &cs.peaks {
                    println!("  peak T2 {:.2} ms, amplitude {:.4e}, fraction {:.3}", p.t2_ms, p.amplitude, p.fraction_of_total);
                }
            }
        }
        Command::Profiles { result_dir, distances, single_pixel, annulus_width } => {
            let mut analysis = match &cli.config {
                Some(p) => RunConfig::load(p)?.analysis,
                None => Default::default(),
            };
            if !distances.is_empty() {
                analysis.radial_distances_mm = distances.clone();
            }
            analysis.single_pixel |= *single_pixel;
            if let Some(w) = annulus_width {
                analysis.annulus_width_px = *w;
            }
            let bundle = read_result_dir(result_dir)?;
            let prof = pipeline::profiles(&bundle, &analysis)?;
            let dir = cli.out.clone().unwrap_or_else(|| result_dir.clone());
            ensure_dir(&dir)?;
            write_kinetics_csv(&prof.kinetics, &dir.join("kinetics.csv"))?;
            for series in &prof.radial {
                let d = series.first().map_or(0.0, |s| s.distance_mm);
                write_radial_csv(series, &dir.join(format!("radial_{d}mm.csv")))?;
            }
            println!("center: ({:.2}, {:.2}) px", prof.center.0, prof.center.1);
            println!("profiles: {}", dir.display());
        }
        Command::Phantom { spec } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<PhantomSpec>(&text)
                        .map_err(|e| Error::format("phantom spec", format!("{}: {e}", p.display())))?
                }
                None => PhantomSpec::default(),
            };
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("phantom"));
            let (frames, truth) = generate(&spec)?;
            let manifest = write_phantom(&frames, &truth, &dir)?;
            println!("{}", manifest.display());
        }
        Command::ExportMaps { result_dir, format } => {
            let bundle = read_result_dir(result_dir)?;
            let maps = distribution_maps(&bundle.result, &bundle.layout)?;
            let dir = cli.out.clone().unwrap_or_else(|| result_dir.join("maps"));
            let format = match format {
                FormatArg::Pgm16 => MapFormat::Pgm16,
                FormatArg::Csv => MapFormat::Csv,
            };
            let written = export_maps(&maps, &dir, format)?;
            println!("{} maps written to {}", written.len(), dir.display());
        }
    }
    Ok(())
}
