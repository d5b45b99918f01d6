use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use dfrc_beamsim::study::{run_study, write_outputs, RangeMode, StudyConfig, StudyId};

#[derive(Debug, Clone, Copy, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum Study {
    Pattern,
    Study1,
    Study2,
    Study3a,
    Study3b,
    Study4,
}

impl From<Study> for StudyId {
    fn from(s: Study) -> Self {
        match s {
            Study::Pattern => StudyId::Pattern,
            Study::Study1 => StudyId::Study1,
            Study::Study2 => StudyId::Study2,
            Study::Study3a => StudyId::Study3a,
            Study::Study3b => StudyId::Study3b,
            Study::Study4 => StudyId::Study4,
        }
    }
}

/// Multistage windowed beamforming studies for a DFRC base station.
#[derive(Debug, Parser)]
#[command(name = "dfrc-beamsim", version)]
struct Args {
    study: Study,

    /// JSON study configuration; omitted fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Full-scale trial counts and sweep steps.
    #[arg(long)]
    full: bool,

    /// Trial count override.
    #[arg(long)]
    trials: Option<usize>,

    /// Pick range bins from the cube energy instead of the known target bins.
    #[arg(long)]
    energy_range: bool,

    /// Poisson mean of the sensing RF chain allocation (study4).
    #[arg(long)]
    lambda: Option<f64>,

    /// Dump the first trial's accumulated cube per configuration (study1).
    #[arg(long)]
    dump_cube: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut cfg = match &args.config {
        Some(path) => {
            StudyConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => StudyConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.full {
        cfg.full = true;
    }
    if args.trials.is_some() {
        cfg.trials = args.trials;
    }
    if args.energy_range {
        cfg.range_mode = RangeMode::EnergyPeak;
    }
    if let Some(lambda) = args.lambda {
        cfg.study4.lambda = lambda;
    }
    if args.dump_cube {
        cfg.study1.dump_cube = true;
    }
    cfg.validate().context("invalid configuration")?;

    let id = StudyId::from(args.study);
    let result = run_study(id, &cfg).with_context(|| format!("running {id}"))?;
    let written = write_outputs(id, &result, &cfg, &args.out)
        .with_context(|| format!("writing outputs to {}", args.out.display()))?;
    for path in written {
        println!("{}", path.display());
    }
    eprintln!("{id}: {:.2} s", result.wall_seconds);
    Ok(())
}
