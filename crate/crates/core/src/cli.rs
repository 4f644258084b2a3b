//! Command-line front end.
//!
//! Every subcommand prints JSON or CSV. Exit status is 0 on success, 1 on a
//! usage error and 2 when the command itself fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{count_ops_for, run_bench, BenchConfig, OpCounts};
use crate::error::{Error, Result};
use crate::geometry::{azimuth_elevation_deg, DoaGrid, MicArray, PairSet, TdoaTable};
use crate::localize::Method;
use crate::pipeline::{Pipeline, PipelineConfig, DEFAULT_FS, DEFAULT_SPEED_OF_SOUND};
use crate::plan::{MergePlan, DEFAULT_EPSILON};
use crate::room::{run_campaign, CampaignConfig, SimReport, DEFAULT_MAX_ORDER};
use crate::wav::{read_wav, write_wav};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "smpphat",
    version,
    about = "SRP-PHAT and SMP-PHAT direction-of-arrival estimation",
    args_override_self = true,
    arg_required_else_help = true,
    after_help = "Any subcommand accepts --config <file>: a JSON object whose keys are flag names."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the pair-merging plan of an array (one-based pair indices).
    Plan(PlanArgs),
    /// Print the search grid, optionally dumping the TDoA table.
    Grid(GridArgs),
    /// Localize every block of a multichannel WAV file.
    Locate(LocateArgs),
    /// Run a simulated-room accuracy campaign.
    Simulate(SimulateArgs),
    /// Time SRP-PHAT against SMP-PHAT on one block.
    Bench(BenchArgs),
    /// Print the analytic operation counts of both methods.
    Count(CountArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Emit JSON.
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit CSV.
    #[arg(long)]
    csv: bool,
}

impl OutputArgs {
    fn format(&self, default: Format) -> Format {
        if self.json {
            Format::Json
        } else if self.csv {
            Format::Csv
        } else {
            default
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Srp,
    Smp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Srp => Method::Srp,
            MethodArg::Smp => Method::Smp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodsArg {
    Srp,
    Smp,
    Both,
}

impl MethodsArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodsArg::Srp => vec![Method::Srp],
            MethodsArg::Smp => vec![Method::Smp],
            MethodsArg::Both => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Preset name, geometry JSON file, or name of a file in $SMPPHAT_ARRAY_DIR.
    #[arg(long)]
    array: String,
    /// Tolerance for the parallel and equal-length tests, in meters.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Subdivision level of the icosphere.
    #[arg(long, default_value_t = 4)]
    grid_level: u32,
    /// Keep the whole sphere instead of the upper hemisphere.
    #[arg(long)]
    full: bool,
    /// Array used for --dump-tdoa.
    #[arg(long)]
    array: Option<String>,
    /// Write the TDoA table; JSON when the name ends in .json, raw binary otherwise.
    #[arg(long, requires = "array")]
    dump_tdoa: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FS)]
    fs: f64,
    #[arg(long, default_value_t = DEFAULT_SPEED_OF_SOUND)]
    c: f64,
    #[arg(long, default_value_t = 4)]
    k: u32,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = DEFAULT_FS)]
    fs: f64,
    #[arg(long, default_value_t = DEFAULT_SPEED_OF_SOUND)]
    c: f64,
    /// STFT frame size.
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// STFT hop; half the frame size when omitted.
    #[arg(long)]
    hop: Option<usize>,
    /// Interpolation factor of the inverse transform.
    #[arg(long, default_value_t = 4)]
    k: u32,
    /// Frames accumulated per localization.
    #[arg(long, default_value_t = 8)]
    block: usize,
    #[arg(long, default_value_t = 4)]
    grid_level: u32,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            fs: self.fs,
            c: self.c,
            n: self.n,
            hop: self.hop.unwrap_or(self.n / 2),
            k: self.k,
            block: self.block,
            grid_level: self.grid_level,
            epsilon: self.epsilon,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct LocateArgs {
    #[arg(long)]
    array: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Smp)]
    method: MethodArg,
    /// Multichannel WAV file, one channel per microphone.
    #[arg(long)]
    wav: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Workers for the direction scan.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    array: String,
    #[arg(long, value_enum, default_value_t = MethodsArg::Both)]
    method: MethodsArg,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write each trial's microphone signals as WAV files into this directory.
    #[arg(long)]
    dump_wav: Option<PathBuf>,
    /// Seconds of noise per trial.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.2)]
    rt60_min: f64,
    #[arg(long, default_value_t = 0.5)]
    rt60_max: f64,
    /// Reflections per axis kept by the image method.
    #[arg(long, default_value_t = DEFAULT_MAX_ORDER)]
    max_order: u32,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    array: String,
    #[arg(long, value_enum, default_value_t = MethodsArg::Both)]
    method: MethodsArg,
    /// Timed repetitions per method.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    k: u32,
    #[arg(long, default_value_t = 4)]
    grid_level: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Workers for the direction scan; timings with more than one are not comparable.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CountArgs {
    #[arg(long)]
    array: String,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    grid_level: u32,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    output: OutputArgs,
}

/// Parses `args` (program name first) and runs the subcommand, printing to
/// the process's standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(args) => args,
        Err(ConfigError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
        Err(ConfigError::Failed(e)) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_FAILURE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

enum ConfigError {
    Usage(String),
    Failed(Error),
}

/// Replaces `--config <file>` with the flags it describes. The flags go right
/// after the subcommand name, so anything given on the command line wins.
fn expand_config(mut args: Vec<OsString>) -> std::result::Result<Vec<OsString>, ConfigError> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config=")) else {
        return Ok(args);
    };
    let flag = args.remove(pos).to_string_lossy().into_owned();
    let path = match flag.strip_prefix("--config=") {
        Some(p) => PathBuf::from(p),
        None if pos < args.len() => PathBuf::from(args.remove(pos)),
        None => return Err(ConfigError::Usage("--config needs a file name".into())),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Failed(e.into()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError::Failed(e.into()))?;
    let serde_json::Value::Object(map) = value else {
        return Err(ConfigError::Usage(format!("{} must hold a JSON object", path.display())));
    };
    let mut tokens = Vec::new();
    for (key, value) in map {
        let name = format!("--{}", key.replace('_', "-"));
        match value {
            serde_json::Value::Bool(true) => tokens.push(OsString::from(name)),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => tokens.extend([OsString::from(name), s.into()]),
            serde_json::Value::Number(n) => tokens.extend([OsString::from(name), n.to_string().into()]),
            _ => return Err(ConfigError::Usage(format!("config key {key:?} must be a string, number or boolean"))),
        }
    }
    let at = if args.get(1).is_some_and(|a| !a.to_string_lossy().starts_with('-')) { 2 } else { pos.min(args.len()) };
    args.splice(at..at, tokens);
    Ok(args)
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Plan(a) => plan(a, out),
        Command::Grid(a) => grid(a, out),
        Command::Locate(a) => locate(a, out),
        Command::Simulate(a) => simulate(a, out, err),
        Command::Bench(a) => bench(a, out),
        Command::Count(a) => count(a, out),
    }
}

fn write_json<T: Serialize + ?Sized>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn plan(args: PlanArgs, out: &mut dyn Write) -> Result<()> {
    let array = MicArray::load(&args.array)?;
    let plan = MergePlan::build(&PairSet::enumerate(&array), args.epsilon)?;
    let groups = plan.to_json_groups();
    match args.output.format(Format::Json) {
        Format::Json => write_json(out, &groups),
        Format::Csv => {
            writeln!(out, "group,ref,pair,sign")?;
            for (q, g) in groups.iter().enumerate() {
                for &(p, s) in &g.members {
                    writeln!(out, "{},{},{},{}", q + 1, g.reference, p, s)?;
                }
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct GridOutput<'a> {
    level: u32,
    hemisphere: bool,
    directions: &'a [[f64; 3]],
}

fn grid(args: GridArgs, out: &mut dyn Write) -> Result<()> {
    let grid = DoaGrid::icosphere(args.grid_level, !args.full)?;
    if let (Some(path), Some(array)) = (&args.dump_tdoa, &args.array) {
        let array = MicArray::load(array)?;
        let table = TdoaTable::build(&PairSet::enumerate(&array), &grid, args.fs, args.c, args.k)?;
        dump_table(&table, path)?;
    }
    match args.output.format(Format::Json) {
        Format::Json => {
            write_json(out, &GridOutput { level: args.grid_level, hemisphere: !args.full, directions: grid.directions() })
        }
        Format::Csv => {
            writeln!(out, "index,x,y,z,azimuth_deg,elevation_deg")?;
            for (i, u) in grid.directions().iter().enumerate() {
                let (az, el) = azimuth_elevation_deg(u);
                writeln!(out, "{i},{},{},{},{az},{el}", u[0], u[1], u[2])?;
            }
            Ok(())
        }
    }
}

fn dump_table(table: &TdoaTable, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        std::fs::write(path, serde_json::to_vec(table)?)?;
    } else {
        std::fs::write(path, table.to_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BlockRow {
    block_index: usize,
    x: f64,
    y: f64,
    z: f64,
    energy: f64,
    azimuth_deg: f64,
    elevation_deg: f64,
    grid_index: usize,
}

fn locate(args: LocateArgs, out: &mut dyn Write) -> Result<()> {
    let array = MicArray::load(&args.array)?;
    let audio = read_wav(&args.wav)?;
    if audio.channels.len() != array.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} channels, array {} has {} microphones",
            args.wav.display(),
            audio.channels.len(),
            array.name(),
            array.len()
        )));
    }
    if (f64::from(audio.sample_rate) - args.pipeline.fs).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "{} is sampled at {} Hz but --fs is {}",
            args.wav.display(),
            audio.sample_rate,
            args.pipeline.fs
        )));
    }
    let mut pipeline = Pipeline::new(&array, args.pipeline.config())?;
    pipeline.set_threads(args.threads)?;
    let method = Method::from(args.method);
    let results = pipeline.locate(&audio.channels, &[method])?;
    let rows: Vec<BlockRow> = results[0]
        .iter()
        .enumerate()
        .map(|(b, r)| {
            let (azimuth_deg, elevation_deg) = azimuth_elevation_deg(&r.direction);
            BlockRow {
                block_index: b,
                x: r.direction[0],
                y: r.direction[1],
                z: r.direction[2],
                energy: r.energy,
                azimuth_deg,
                elevation_deg,
                grid_index: r.index,
            }
        })
        .collect();
    match args.output.format(Format::Csv) {
        Format::Json => write_json(out, &rows),
        Format::Csv => {
            writeln!(out, "block_index,x,y,z,energy,azimuth_deg,elevation_deg")?;
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.block_index, r.x, r.y, r.z, r.energy, r.azimuth_deg, r.elevation_deg
                )?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MethodSummary {
    method: Method,
    mae_deg: f64,
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    array: &'a str,
    trials: usize,
    seed: u64,
    config: &'a CampaignConfig,
    summary: Vec<MethodSummary>,
    reports: &'a [SimReport],
}

fn simulate(args: SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let array = MicArray::load(&args.array)?;
    let config = CampaignConfig {
        rt60_range: (args.rt60_min, args.rt60_max),
        max_order: args.max_order,
        duration: args.duration,
        pipeline: args.pipeline.config(),
        ..CampaignConfig::default()
    };
    let reports = run_campaign(&config, &array, &args.method.methods(), args.trials, args.seed)?;
    if let Some(dir) = &args.dump_wav {
        std::fs::create_dir_all(dir)?;
        for index in 0..args.trials {
            let draw = config.draw(args.seed, index)?;
            let signals = config.signals(&array, &draw)?;
            write_wav(dir.join(format!("trial_{index:04}.wav")), config.pipeline.fs as u32, &signals)?;
        }
    }

    let summary: Vec<MethodSummary> = reports.iter().map(|r| MethodSummary { method: r.method, mae_deg: r.mae_deg }).collect();
    let format = args.output.format(Format::Json);
    let mut body = Vec::new();
    match format {
        Format::Json => write_json(
            &mut body,
            &SimulationOutput {
                array: array.name(),
                trials: args.trials,
                seed: args.seed,
                config: &config,
                summary,
                reports: &reports,
            },
        )?,
        Format::Csv => {
            writeln!(body, "method,trial,rt60,truth_x,truth_y,truth_z,pred_x,pred_y,pred_z,grid_index,energy,error_deg")?;
            for report in &reports {
                for t in &report.trials {
                    writeln!(
                        body,
                        "{},{},{},{},{},{},{},{},{},{},{},{}",
                        report.method,
                        t.index,
                        t.rt60,
                        t.truth[0],
                        t.truth[1],
                        t.truth[2],
                        t.predicted[0],
                        t.predicted[1],
                        t.predicted[2],
                        t.grid_index,
                        t.energy,
                        t.error_deg
                    )?;
                }
            }
        }
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, body)?;
            for r in &reports {
                writeln!(err, "{}: MAE {:.2} deg over {} trials", r.method, r.mae_deg, r.trials.len())?;
            }
        }
        None => out.write_all(&body)?,
    }
    Ok(())
}

fn bench(args: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let array = MicArray::load(&args.array)?;
    let config = BenchConfig {
        n: args.n,
        k: args.k,
        grid_level: args.grid_level,
        repetitions: args.reps,
        seed: args.seed,
        threads: args.threads,
        ..BenchConfig::default()
    };
    let report = run_bench(&array, &args.method.methods(), &config)?;
    match args.output.format(Format::Json) {
        Format::Json => write_json(out, &report),
        Format::Csv => {
            writeln!(out, "array,method,mean_ms,std_ms,reps,iffts,lookups,additions,counts_match")?;
            for t in &report.timings {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    report.array,
                    t.method,
                    t.mean_ms,
                    t.std_ms,
                    t.repetitions,
                    t.counted.iffts,
                    t.counted.lookups,
                    t.counted.additions,
                    t.counts_match
                )?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct CountOutput<'a> {
    array: &'a str,
    #[serde(flatten)]
    counts: OpCounts,
}

fn count(args: CountArgs, out: &mut dyn Write) -> Result<()> {
    let array = MicArray::load(&args.array)?;
    let counts = count_ops_for(&array, args.n, args.grid_level, args.epsilon)?;
    match args.output.format(Format::Json) {
        Format::Json => write_json(out, &CountOutput { array: array.name(), counts }),
        Format::Csv => {
            let r = counts.reduction;
            writeln!(out, "metric,srp,smp,change_pct")?;
            writeln!(out, "iffts,{},{},{:.1}", counts.srp.iffts, counts.smp.iffts, -100.0 * r.iffts)?;
            writeln!(out, "lookups,{},{},{:.1}", counts.srp.lookups, counts.smp.lookups, -100.0 * r.lookups)?;
            writeln!(out, "additions,{},{},{:.1}", counts.srp.additions, counts.smp.additions, -100.0 * r.additions)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("smpphat").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_capture(&[]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["count", "--array", "respeaker-usb", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["count", "--array", "no-such-array"]).0, EXIT_FAILURE);
        let (code, out, _) = run_capture(&["plan", "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("--epsilon"));
    }

    #[test]
    fn plan_csv_lists_every_pair() {
        let (code, out, _) = run_capture(&["plan", "--array", "respeaker-usb", "--csv"]);
        assert_eq!(code, EXIT_OK);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "group,ref,pair,sign");
        assert_eq!(lines.len(), 7);
        assert!(lines.contains(&"1,1,6,-1"));
    }

    #[test]
    fn config_file_supplies_flags_and_command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"array": "matrix-creator", "grid_level": 1, "csv": true}"#).unwrap();
        let p = path.to_str().unwrap();
        let (code, out, _) = run_capture(&["count", "--config", p]);
        assert_eq!(code, EXIT_OK, "{out}");
        assert!(out.starts_with("metric,srp,smp"));
        // Level 1 hemisphere has 26 directions; 28 pairs.
        assert!(out.contains("lookups,728,"));
        let (_, out, _) = run_capture(&["count", "--config", p, "--grid-level", "0"]);
        assert!(out.contains("lookups,168,"), "{out}");
        std::fs::write(&path, "[1, 2]").unwrap();
        assert_eq!(run_capture(&["count", "--config", p]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["count", "--config"]).0, EXIT_USAGE);
    }
}
