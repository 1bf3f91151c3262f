//! `citypulse`: population estimates from call detail records.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error.

mod config;
mod figures;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use citypulse::geomap::CommuneId;
use citypulse::ingest::load_survey;
use citypulse::ldm::CountSides;
use citypulse::pipeline::{self, AntennaSource, PipelineInputs, PipelineOptions};
use citypulse::synth::{MobilityKernel, Scenario, ScenarioConfig};
use citypulse::timegrid::{DayGroup, TimeSlot};
use citypulse::validation;

#[derive(Parser)]
#[command(name = "citypulse", version, about, args_override_self = true)]
struct Cli {
    /// Plain `key = value` file; each key is read as the `--key` flag of the
    /// chosen subcommand. Flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write reports to an output directory.
    Pipeline(PipelineArgs),
    /// Bar chart of people per hour group (thousands), from `ep.csv`.
    Profile(ProfileArgs),
    /// City pulse heatmap for one slot, from `cpm/<slot>.json`.
    Heatmap(HeatmapArgs),
    /// Map of where the people present in a commune live.
    Choropleth(ChoroplethArgs),
    /// Compare working-day estimates with a survey table.
    Validate(ValidateArgs),
    /// Generate a synthetic scenario with planted ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("antenna_input").required(true).args(["antennas", "antenna_map"])))]
struct PipelineArgs {
    /// CDR CSV: caller,callee,timestamp,duration,antenna (optionally .gz).
    #[arg(long)]
    cdr: PathBuf,
    /// Antenna registry CSV: antenna_id,lon,lat. Requires --geometry.
    #[arg(long, requires = "geometry")]
    antennas: Option<PathBuf>,
    /// Precomputed antenna map CSV: antenna_id,commune_id.
    #[arg(long)]
    antenna_map: Option<PathBuf>,
    /// Commune GeoJSON FeatureCollection with an integer "commune" property.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Census CSV: commune_id,population.
    #[arg(long)]
    census: PathBuf,
    /// Optional survey CSV: commune_id,hour_group,people.
    #[arg(long)]
    survey: Option<PathBuf>,
    /// Minimum calls required in every one of the 16 slots.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    tau: u32,
    /// Seed for random tie-breaking in home detection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Shift applied to every timestamp, in minutes.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_minutes: i64,
    /// Also count the callee side of each call at the same antenna.
    #[arg(long)]
    count_callee: bool,
    /// Render heatmaps for every slot and profiles for every day group.
    #[arg(long)]
    figures: bool,
    /// Write per-user counts to tensors.csv.
    #[arg(long)]
    dump_tensors: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    /// Pipeline output directory.
    #[arg(long)]
    out: PathBuf,
    /// Day group for the all-communes view.
    #[arg(long, default_value = "MonThu")]
    day_group: DayGroup,
    /// Show one commune across all four day groups instead.
    #[arg(long)]
    commune: Option<CommuneId>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    out: PathBuf,
    /// Slot as <day>_<hour>, e.g. MonThu_Noon.
    #[arg(long, default_value = "MonThu_Noon")]
    slot: TimeSlot,
}

#[derive(Args)]
struct ChoroplethArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long, default_value = "MonThu_Noon")]
    slot: TimeSlot,
    /// Commune whose present population is mapped by home; repeat to
    /// render several maps on one shared scale.
    #[arg(long, required = true)]
    target: Vec<CommuneId>,
    /// Upper end of the color scale in thousands (default: largest value).
    #[arg(long)]
    scale_max: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Pipeline output directory; reads ep.csv and writes validation files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    survey: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Full scenario as JSON; overrides the shape flags below.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    communes: usize,
    #[arg(long, default_value_t = 200)]
    users_per_commune: usize,
    /// Mean calls per user and slot.
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    /// stay-home | home-biased:<p> | random:<min home mass>
    #[arg(long, default_value = "home-biased:0.7")]
    kernel: String,
    /// Allow slots without calls (users may then fail the filter).
    #[arg(long)]
    no_guarantee: bool,
    #[arg(long, default_value_t = 50)]
    census_factor: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let argv = match config::expand_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = e
                .downcast_ref::<citypulse::Error>()
                .is_some_and(|e| !e.is_input_error());
            ExitCode::from(if internal { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Profile(a) => {
            let written = figures::profile(&a.out, a.day_group, a.commune)?;
            report_written(&written);
            Ok(())
        }
        Command::Heatmap(a) => {
            let written = figures::heatmap(&a.out, a.slot)?;
            report_written(&written);
            Ok(())
        }
        Command::Choropleth(a) => {
            let written = figures::choropleth(&a.out, &a.geometry, a.slot, &a.target, a.scale_max)?;
            report_written(&written);
            Ok(())
        }
        Command::Validate(a) => cmd_validate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let antennas = match (a.antennas, a.antenna_map) {
        (Some(p), None) => AntennaSource::Registry(p),
        (None, Some(p)) => AntennaSource::Map(p),
        _ => bail!("give exactly one of --antennas or --antenna-map"),
    };
    let inputs = PipelineInputs {
        cdr: a.cdr,
        antennas,
        geometry: a.geometry,
        census: a.census,
        survey: a.survey,
    };
    let opts = PipelineOptions {
        tau: a.tau,
        seed: a.seed,
        threads: a.threads,
        sides: if a.count_callee {
            CountSides::CallerAndCallee
        } else {
            CountSides::CallerOnly
        },
        utc_offset_seconds: a.utc_offset_minutes * 60,
    };
    let out = pipeline::run(&inputs, &opts)?;
    out.write(&a.out, &opts)?;
    if a.dump_tensors {
        pipeline::write_tensor_dump(&out, &a.out.join("tensors.csv"))?;
    }
    let stats = out.stats(&opts);
    println!(
        "lines {} parsed {} dropped(parse) {} dropped(unmapped) {}",
        stats.ingest.total_lines,
        stats.ingest.parsed,
        stats.ingest.dropped_parse,
        stats.ingest.dropped_unmapped_antenna
    );
    println!(
        "users {} kept {} (tau {}) ties {}",
        stats.users_observed, stats.users_filtered, stats.tau, stats.tie_count
    );
    if let (Some(lo), Some(hi)) = (&stats.scaling_factor_min, &stats.scaling_factor_max) {
        println!(
            "scaling factors {:.2} (commune {}) to {:.2} (commune {})",
            lo.factor, lo.commune, hi.factor, hi.commune
        );
    }
    if let Some(v) = &out.validation {
        println!("survey average relative difference {:.4}", v.average_rel_diff);
    }
    if a.figures {
        for slot in citypulse::timegrid::all_slots() {
            figures::heatmap(&a.out, slot)?;
        }
        for day in DayGroup::ALL {
            figures::profile(&a.out, day, None)?;
        }
    }
    println!("reports in {}", a.out.display());
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let table = pipeline::read_ep_csv(&a.out.join("ep.csv"))?;
    let survey = load_survey(&a.survey)?;
    let report = validation::compare(&table, &survey)?;
    write(&a.out.join("validation.csv"), report.to_csv().as_bytes())?;
    write(
        &a.out.join("validation.json"),
        &serde_json_pretty(&report)?,
    )?;
    println!(
        "cells {} average_rel_diff {:.6} skipped_zero {}",
        report.cells.len(),
        report.average_rel_diff,
        report.skipped_zero
    );
    if let Some((c, h, d)) = report.max_cell {
        println!("largest difference: commune {c}, {h}: {d:.6}");
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let config = match &a.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("scenario: {}", path.display()))?;
            serde_json::from_str::<ScenarioConfig>(&text).context("scenario")?
        }
        None => {
            let kernel = parse_kernel(&a.kernel, a.communes, a.seed)?;
            let mut c = ScenarioConfig::new(a.communes, a.users_per_commune, a.lambda, kernel, a.seed);
            c.guarantee_min_calls = !a.no_guarantee;
            c.census_factor = a.census_factor;
            c
        }
    };
    let scenario = Scenario::new(config)?;
    let (files, truth) = scenario.write(&a.out)?;
    write(&a.out.join("scenario.json"), &serde_json_pretty(scenario.config())?)?;
    println!(
        "{} users in {} communes, census total {}",
        scenario.n_users(),
        scenario.config().n_communes,
        truth.census.total()
    );
    println!("cdr: {}", files.cdr.display());
    Ok(())
}

fn parse_kernel(text: &str, n: usize, seed: u64) -> Result<MobilityKernel> {
    let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
    let num = |default: f64| -> Result<f64> {
        if arg.is_empty() {
            Ok(default)
        } else {
            arg.parse().with_context(|| format!("kernel parameter {arg:?}"))
        }
    };
    Ok(match kind {
        "stay-home" => MobilityKernel::stay_home(n),
        "home-biased" => MobilityKernel::home_biased(n, num(0.7)?),
        "random" => MobilityKernel::random(n, num(0.5)?, seed),
        other => bail!("unknown kernel {other:?} (stay-home, home-biased:<p>, random:<p>)"),
    })
}

fn serde_json_pretty<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("{}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("{}", path.display()))
}
