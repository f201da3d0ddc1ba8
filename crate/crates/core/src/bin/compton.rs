use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use compton_imager::pipeline::{execute, replay, Command, KindSource, Manifest, PipelineConfig};
use compton_imager::simulate::SourceSpec;
use compton_imager::{Error, Result};

/// Compton imager pipeline: simulate, classify, localize, evaluate.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Overrides {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,

    /// Detector preset name or layout JSON file.
    #[arg(long, global = true)]
    detector: Option<String>,

    /// Attenuation table CSV.
    #[arg(long, global = true)]
    attenuation: Option<PathBuf>,

    /// Source energy assumed by localization and back-projection, MeV.
    #[arg(long = "e0", global = true)]
    e0: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate noisy events with truth records.
    Simulate {
        #[arg(long, short)]
        n_events: Option<usize>,
        /// Source as LON,LAT[,INTENSITY] in degrees; repeatable.
        #[arg(long = "source")]
        sources: Vec<String>,
        #[arg(long)]
        outlier_fraction: Option<f64>,
        /// Record the true interactions without measurement noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Estimate E0, the energy resolution and the event kinds.
    Em {
        #[arg(long)]
        events: PathBuf,
    },
    /// Sample source directions.
    Localize {
        #[arg(long)]
        events: PathBuf,
        /// EM output providing the event kinds.
        #[arg(long, conflicts_with = "truth_kinds", required_unless_present = "truth_kinds")]
        em: Option<PathBuf>,
        /// Use the kinds recorded in the simulated truth.
        #[arg(long)]
        truth_kinds: bool,
        /// Number of sources.
        #[arg(short, long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Back-project the event cones onto the source sphere.
    Backproject {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        pixels: Option<usize>,
    },
    /// Compare Gibbs and back-projection errors across runs.
    Evaluate {
        /// Run summaries written by `localize`.
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// JSON list, per summary, of true source unit vectors.
        #[arg(long)]
        truths: Option<PathBuf>,
    },
    /// Direction-prior lookup table.
    Lut {
        #[command(subcommand)]
        action: LutCmd,
    },
    /// Re-run a manifest and check the outputs are byte-identical.
    Replay { manifest: PathBuf },
}

#[derive(Subcommand)]
enum LutCmd {
    /// Build the table for the configured energy into the cache directory.
    Build {
        /// Cache directory (overrides COMPTON_LUT_DIR).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn parse_source(text: &str, energy: f64, default_intensity: f64) -> Result<SourceSpec> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad --source {text:?}: {e}")))?;
    match parts[..] {
        [lon, lat] => Ok(SourceSpec::from_lon_lat(lon, lat, energy, default_intensity)),
        [lon, lat, w] => Ok(SourceSpec::from_lon_lat(lon, lat, energy, w)),
        _ => Err(Error::Config(format!("--source expects LON,LAT[,INTENSITY], got {text:?}"))),
    }
}

fn load_config(path: Option<&Path>, o: &Overrides) -> Result<PipelineConfig> {
    let mut c = match path {
        Some(p) => PipelineConfig::from_path(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = o.seed {
        c.seed = Some(s);
    }
    if let Some(d) = &o.out {
        c.output_dir = d.clone();
    }
    if let Some(d) = &o.detector {
        if Path::new(d).is_file() {
            c.detector_file = Some(d.into());
        } else {
            c.detector = d.clone();
            c.detector_file = None;
        }
    }
    if let Some(a) = &o.attenuation {
        c.attenuation_file = Some(a.clone());
    }
    if let Some(e) = o.e0 {
        c.e0 = Some(e);
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<Manifest> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    if let Cmd::Replay { manifest } = &cli.command {
        return replay(manifest, cli.overrides.out.as_deref());
    }
    let mut config = load_config(cli.config.as_deref(), &cli.overrides)?;
    let command = match cli.command {
        Cmd::Simulate { n_events, sources, outlier_fraction, noiseless } => {
            if let Some(n) = n_events {
                config.n_events = n;
            }
            if let Some(f) = outlier_fraction {
                config.outlier_fraction = f;
            }
            if !sources.is_empty() {
                let energy = config.energy();
                let share = (1.0 - config.outlier_fraction) / sources.len() as f64;
                config.sources = sources
                    .iter()
                    .map(|s| parse_source(s, energy, share))
                    .collect::<Result<_>>()?;
            }
            if noiseless {
                config.noise = None;
            }
            Command::Simulate
        }
        Cmd::Em { events } => Command::Em { events },
        Cmd::Localize { events, em, truth_kinds, k, iterations, burn_in } => {
            if let Some(t) = iterations {
                config.gibbs.iterations = t;
            }
            if let Some(b) = burn_in {
                config.gibbs.burn_in = b;
            }
            let kinds = match em {
                Some(p) if !truth_kinds => KindSource::Em(p),
                _ => KindSource::Truth,
            };
            Command::Localize { events, kinds, k }
        }
        Cmd::Backproject { events, pixels } => {
            if let Some(p) = pixels {
                config.gibbs.bp_pixels = p;
            }
            Command::Backproject { events }
        }
        Cmd::Evaluate { summaries, truths } => Command::Evaluate { summaries, truths },
        Cmd::Lut { action: LutCmd::Build { dir } } => {
            if dir.is_some() {
                config.lut_dir = dir;
            }
            Command::LutBuild
        }
        Cmd::Replay { .. } => unreachable!("handled above"),
    };
    execute(&command, &config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(m) => {
            for o in &m.outputs {
                println!("{}  {}", o.sha256, o.path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
