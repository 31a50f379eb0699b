mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use primseg::formats::{self, FileKind};
use primseg::inference::{best_chain, run_chains, viterbi, Checkpoint, GibbsChain, Sampler};
use primseg::ingest::{self, detect_step_events, drop_inactive_channels, TrafficSequence};
use primseg::primitives::{self, DEFAULT_TOLERANCE_S};
use primseg::simulate::{self, GroundTruth};
use primseg::{Observations, StateSequence};

use config::TrainSettings;

#[derive(Parser)]
#[command(
    name = "primseg",
    version,
    about = "Segment driving logs into traffic primitives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Gibbs sampler on a data CSV and write a checkpoint.
    Train(TrainArgs),
    /// Segment a data CSV with a trained checkpoint.
    Segment(SegmentArgs),
    /// Primitive statistics of a segments CSV.
    Stats(StatsArgs),
    /// Compare segment boundaries with the step events in a data CSV.
    Validate(ValidateArgs),
    /// Generate a synthetic scenario.
    Simulate(SimulateArgs),
    /// Check that files follow the documented formats.
    CheckFormat(CheckFormatArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Data CSV (time_s, ax, vx, then dx/dv/dy per channel).
    data: PathBuf,
    /// Remove channels that are zero over the whole sequence.
    #[arg(long)]
    drop_inactive: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with hyperparameters and run schedule.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    truncation: Option<usize>,
    /// Independent chains run concurrently; the best MAP sample is kept.
    #[arg(long)]
    chains: Option<usize>,
    /// Continue the chain stored in this checkpoint up to --sweeps total.
    #[arg(long, conflicts_with_all = ["config", "seed", "burn_in", "thin", "truncation", "chains"])]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Identifier written to the report.
    #[arg(long)]
    vehicle_id: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    segments: PathBuf,
    /// Also write the JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    data: DataArgs,
    segments: PathBuf,
    /// Matching tolerance in seconds.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_S)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    /// Three zero-mean states in two dimensions.
    Recovery,
    /// Five channels with ten cut-in/cut-out events.
    Binary,
}

#[derive(Args)]
struct SimulateArgs {
    /// Sample from the MAP model of this checkpoint.
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// Number of frames (the binary fixture is always 1000).
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ingest::DEFAULT_SAMPLE_RATE_HZ)]
    rate: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckFormatArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// data, segments, loglik, stats, report, checkpoint, truth or validation;
    /// guessed from the contents when omitted.
    #[arg(long)]
    kind: Option<String>,
}

fn load_data(args: &DataArgs) -> Result<TrafficSequence> {
    let seq = ingest::load_csv(&args.data, None)
        .with_context(|| format!("loading {}", args.data.display()))?;
    Ok(if args.drop_inactive {
        let kept = drop_inactive_channels(&seq);
        info!(
            "dropped {} inactive channels, d = {}",
            seq.num_channels() - kept.num_channels(),
            kept.dim()
        );
        kept
    } else {
        seq
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_loglik(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sweep", "loglik"])?;
    for (i, ll) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), ll.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn save_run(out: &Path, sampler: &Sampler<'_>, chain: &GibbsChain) -> Result<()> {
    create_dir(out)?;
    Checkpoint::capture(sampler, chain).save(out.join("checkpoint.json"))?;
    write_loglik(&out.join("loglik.csv"), &chain.loglik_trace)?;
    let map = chain
        .map_sample()
        .ok_or_else(|| anyhow!("no samples were retained"))?;
    println!(
        "{} sweeps; MAP log-likelihood {:.3} at sweep {}; wrote {}",
        chain.sweep_count,
        map.loglik,
        map.sweep,
        out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let seq = load_data(&args.data)?;
    let obs = seq.observations();
    if let Some(path) = &args.resume {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let (mut sampler, mut chain) = ck.resume(&obs)?;
        let target = args.sweeps.unwrap_or(chain.sweep_count);
        if target < chain.sweep_count {
            bail!(
                "--sweeps {target} is below the {} sweeps already in the checkpoint",
                chain.sweep_count
            );
        }
        chain.advance(&mut sampler, target - chain.sweep_count)?;
        return save_run(&args.out, &sampler, &chain);
    }

    let mut settings = match &args.config {
        Some(path) => TrainSettings::load(path)?,
        None => TrainSettings::default(),
    };
    if let Some(v) = args.seed {
        settings.run.seed = v;
    }
    if let Some(v) = args.sweeps {
        settings.run.sweeps = v;
    }
    if let Some(v) = args.burn_in {
        settings.run.burn_in = v;
    }
    if let Some(v) = args.thin {
        settings.run.thin = v;
    }
    if let Some(v) = args.truncation {
        settings.hyper.truncation = v;
    }
    if let Some(v) = args.chains {
        settings.chains = v;
    }
    settings.validate(obs.dim())?;
    info!(
        "training on T={} frames, d={}, {} chain(s) from seed {}",
        obs.len(),
        obs.dim(),
        settings.chains,
        settings.run.seed
    );
    let runs = run_chains(&obs, &settings.hyper, &settings.run, settings.chains)?;
    for (i, (_, chain)) in runs.iter().enumerate() {
        if let Some(map) = chain.map_sample() {
            info!(
                "chain {i} (seed {}): MAP log-likelihood {:.3}",
                chain.seed, map.loglik
            );
        }
    }
    let best = best_chain(runs.iter().map(|(_, c)| c))
        .ok_or_else(|| anyhow!("no chain retained a sample"))?;
    let (sampler, chain) = &runs[best];
    save_run(&args.out, sampler, chain)
}

fn map_states(ck: &Checkpoint, obs: &Observations) -> Result<StateSequence> {
    let map = ck
        .map_sample
        .as_ref()
        .ok_or_else(|| anyhow!("checkpoint holds no retained sample"))?;
    if ck.matches(obs) {
        Ok(map.states.clone())
    } else {
        info!("data differ from the training data; decoding with Viterbi under the MAP model");
        Ok(viterbi(obs, &map.model)?)
    }
}

fn segment(args: SegmentArgs) -> Result<()> {
    let seq = load_data(&args.data)?;
    let obs = seq.observations();
    let ck = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    if ck.dim != obs.dim() {
        bail!(
            "dimension mismatch: checkpoint {} was trained on d={} data but {} has d={}",
            args.checkpoint.display(),
            ck.dim,
            args.data.data.display(),
            obs.dim()
        );
    }
    let states = map_states(&ck, &obs)?;
    let segments = primitives::states_to_segments(&states, seq.timestamps())?;
    let stats = primitives::primitive_stats(&segments)?;
    let report = primitives::report_from_segments(&segments, &seq, args.vehicle_id)?;
    create_dir(&args.out)?;
    let file = fs::File::create(args.out.join("segments.csv"))?;
    primitives::write_segments_csv(&segments, file)?;
    write_json(&args.out.join("stats.json"), &stats)?;
    write_json(&args.out.join("report.json"), &report)?;
    println!(
        "{} primitives in {} sets; wrote {}",
        stats.total,
        stats.sets,
        args.out.display()
    );
    Ok(())
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    writeln!(
        io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(value)?
    )?;
    if let Some(path) = out {
        write_json(path, value)?;
    }
    Ok(())
}

fn stats(args: StatsArgs) -> Result<()> {
    let records = primitives::read_segments_csv(&args.segments)?;
    let stats = primitives::stats_from_labels(records.iter().map(|r| r.label))?;
    print_json(&stats, args.out.as_deref())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let seq = load_data(&args.data)?;
    let records = primitives::read_segments_csv(&args.segments)?;
    let segments =
        primitives::segments_from_records(&records, seq.timestamps()).with_context(|| {
            format!(
                "{} does not fit {}",
                args.segments.display(),
                args.data.data.display()
            )
        })?;
    let events = detect_step_events(&seq);
    let agreement = primitives::boundary_agreement(&segments, &events, args.tol)?;
    print_json(&agreement, args.out.as_deref())
}

fn change_frames(states: &StateSequence) -> Vec<usize> {
    let labels = states.labels();
    (1..labels.len())
        .filter(|&t| labels[t] != labels[t - 1])
        .collect()
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (seq, truth) = match (args.fixture, &args.checkpoint) {
        (Some(Fixture::Binary), _) => {
            if args.frames.is_some_and(|t| t != 1000) {
                bail!("the binary fixture has a fixed length of 1000 frames");
            }
            let spec = simulate::default_binary_spec(&mut rng);
            let sc = simulate::make_binary_scenario(&spec, &mut rng)?;
            let truth = GroundTruth::new(None, sc.events, sc.change_frames);
            (sc.sequence, truth)
        }
        (fixture, checkpoint) => {
            let frames = args.frames.ok_or_else(|| anyhow!("--frames is required"))?;
            if frames == 0 {
                bail!("--frames must be positive");
            }
            let model = match (fixture, checkpoint) {
                (Some(Fixture::Recovery), _) => simulate::recovery_fixture(),
                (None, Some(path)) => {
                    let ck = Checkpoint::load(path)
                        .with_context(|| format!("loading {}", path.display()))?;
                    ck.map_sample
                        .ok_or_else(|| anyhow!("checkpoint holds no retained sample"))?
                        .model
                }
                _ => bail!("give --checkpoint or --fixture"),
            };
            let (obs, states) = simulate::sample_hmm(&model, frames, &mut rng)?;
            let timestamps = TrafficSequence::uniform_timestamps(frames, args.rate);
            let seq = TrafficSequence::from_observations(&obs, timestamps, args.rate)?;
            let events = detect_step_events(&seq);
            let truth = GroundTruth::new(
                Some(states.labels().to_vec()),
                events,
                change_frames(&states),
            );
            (seq, truth)
        }
    };
    create_dir(&args.out)?;
    seq.save_csv(args.out.join("data.csv"))?;
    write_json(&args.out.join("truth.json"), &truth)?;
    println!(
        "{} frames, d={}; wrote {}",
        seq.len(),
        seq.dim(),
        args.out.display()
    );
    Ok(())
}

fn check_format(args: CheckFormatArgs) -> Result<()> {
    let forced = match &args.kind {
        Some(name) => Some(FileKind::parse(name).ok_or_else(|| anyhow!("unknown kind {name:?}"))?),
        None => None,
    };
    let mut failures = 0;
    for path in &args.files {
        let result = match forced {
            Some(kind) => Ok(kind),
            None => formats::detect_kind(path),
        }
        .and_then(|kind| formats::check_file(path, kind));
        match result {
            Ok(summary) => println!("ok   {}: {summary}", path.display()),
            Err(e) => {
                println!("FAIL {}: {e}", path.display());
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!(
            "{failures} of {} files failed the format check",
            args.files.len()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRIMSEG_LOG", "warn")).init();
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Segment(a) => segment(a),
        Command::Stats(a) => stats(a),
        Command::Validate(a) => validate(a),
        Command::Simulate(a) => simulate(a),
        Command::CheckFormat(a) => check_format(a),
    }
}
