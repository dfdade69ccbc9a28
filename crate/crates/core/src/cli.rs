//! Command-line front end. `main` parses, dispatches and maps errors to exit
//! codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::covariance::{run_suite, Suite};
use crate::events::dataset::{make_dataset, DatasetSpec, Family, MANIFEST_FORMAT};
use crate::events::{read_events, EVENT_MAGIC};
use crate::net::{forward, init_parameters, read_checkpoint, write_checkpoint, Activation, InitScheme, NetworkConfig, CHECKPOINT_FORMAT};
use crate::spatial::{bank_svg, build_bank, write_bank, BankParams, BANK_FORMAT};
use crate::stats::{load_runs, random_baseline, write_report, EffectRow};
use crate::train::{evaluate_per_scale, train_run, write_run, RunStats, TrainConfig, TrainData};
use crate::{Result, StrfError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub fn version_string() -> String {
    format!(
        "{} (events {} / {}, kernel bank {}, checkpoint {})",
        env!("CARGO_PKG_VERSION"),
        String::from_utf8_lossy(EVENT_MAGIC),
        MANIFEST_FORMAT,
        BANK_FORMAT,
        CHECKPOINT_FORMAT
    )
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "strf", about = "Covariant spatio-temporal receptive fields for event-based vision")]
pub struct Cli {
    /// Seed override for the subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Print format versions and exit.
    #[arg(long)]
    pub version: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Build a spatial kernel bank.
    Kernels(KernelsArgs),
    /// Generate an event dataset.
    Simulate(SimulateArgs),
    /// Run the numerical covariance checks.
    Covariance(CovarianceArgs),
    /// Initialise a network or run it on one event file.
    #[command(subcommand)]
    Net(NetCommand),
    /// Train networks on a dataset.
    Train(TrainArgs),
    /// Per-bin validation loss of a checkpoint.
    Eval(EvalArgs),
    /// Effect sizes and figures from training runs.
    Report(ReportArgs),
    /// Simulate, train every variant and report, at desk scale.
    Repro(ReproArgs),
}

fn comma_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',').map(|x| x.trim().parse::<T>().map_err(|_| format!("bad list entry {x:?}"))).collect()
}

#[derive(Debug, Args, Serialize)]
pub struct KernelsArgs {
    #[arg(long, default_value_t = 4)]
    pub orientations: usize,
    #[arg(long, default_value = "1,2,4,8", value_parser = comma_list::<f64>)]
    pub scales: Vec<f64>,
    #[arg(long, default_value = "1,0.5,0.25", value_parser = comma_list::<f64>)]
    pub skews: Vec<f64>,
    /// Kernel grid side.
    #[arg(long, default_value_t = 9)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub supersample: usize,
    /// Add the mixed second-order derivative family.
    #[arg(long)]
    pub mixed: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
pub enum Preset {
    Paper,
    Desk,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    /// Base settings that the other flags override.
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    /// Square sensor side in pixels.
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub supersample: Option<usize>,
    /// Also write a CSV copy of every event file.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: StrfError| e.to_string())
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    s.parse().map_err(|e: StrfError| e.to_string())
}

fn parse_init(s: &str) -> std::result::Result<InitScheme, String> {
    s.parse().map_err(|e: StrfError| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct CovarianceArgs {
    /// temporal, lif, affine, joint or all.
    #[arg(long, default_value = "all", value_parser = |s: &str| s.parse::<Suite>().map_err(|e| e.to_string()))]
    pub suite: Suite,
    /// Rungs of the refinement ladders.
    #[arg(long, default_value_t = 3)]
    pub refine: usize,
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum NetCommand {
    /// Write freshly initialised parameters.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_init)]
        init: Option<InitScheme>,
        #[arg(long, value_parser = parse_activation)]
        activation: Option<Activation>,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Predict coordinates for one event file; writes CSV.
    Forward {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Network configuration JSON (defaults apply to missing fields).
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Training configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_init)]
    pub init: Option<InitScheme>,
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
    #[arg(long, value_parser = comma_list::<u64>)]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub burn_in: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReproArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Sequences per dataset family.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value = "1,2,3", value_parser = comma_list::<u64>)]
    pub seeds: Vec<u64>,
    /// Restrict to these activations (default: all four).
    #[arg(long, value_parser = parse_activation, value_delimiter = ',')]
    pub activations: Vec<Activation>,
}

/// Parse `argv`, run, and return the exit code. Errors go to stderr as one line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("strf: error[usage]: {line}");
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if cli.version {
        println!("strf {}", version_string());
        return EXIT_OK;
    }
    let Some(command) = &cli.command else {
        eprintln!("strf: error[usage]: no subcommand given (try --help)");
        return EXIT_USAGE;
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("strf: error[usage]: --threads must be positive");
            return EXIT_USAGE;
        }
        // Fails only when a pool already exists (repeated calls in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(&cli, command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (kind, code) = match &e {
                StrfError::Config(_) => ("config", EXIT_USAGE),
                StrfError::Domain(_) => ("domain", EXIT_FAILURE),
                StrfError::NonFinite { .. } => ("non-finite", EXIT_FAILURE),
                StrfError::Format { .. } => ("format", EXIT_FAILURE),
                StrfError::Io { .. } => ("io", EXIT_FAILURE),
                StrfError::Json(_) => ("json", EXIT_FAILURE),
            };
            eprintln!("strf: error[{kind}]: {}", e.to_string().replace('\n', " "));
            code
        }
    }
}

#[derive(Serialize)]
struct ResolvedConfig<'a, T: Serialize> {
    version: String,
    argv: &'a Cli,
    resolved: T,
}

/// Record the parsed command line plus the resolved settings next to the outputs.
fn log_config<T: Serialize>(cli: &Cli, out_dir: &Path, file: &str, resolved: T) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| StrfError::io(out_dir, e))?;
    let path = out_dir.join(file);
    let doc = ResolvedConfig { version: version_string(), argv: cli, resolved };
    let text = serde_json::to_string_pretty(&doc)?;
    log::info!("resolved config: {}", serde_json::to_string(&doc.resolved)?);
    fs::write(&path, text).map_err(|e| StrfError::io(&path, e))
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn file_config_name(p: &Path) -> String {
    format!("{}.config.json", p.file_name().map_or("output".into(), |f| f.to_string_lossy().into_owned()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| StrfError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| StrfError::config(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli, command: &Command) -> Result<()> {
    match command {
        Command::Kernels(a) => kernels(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Covariance(a) => covariance(cli, a),
        Command::Net(a) => net(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Report(a) => report(cli, a),
        Command::Repro(a) => repro(cli, a),
    }
}

fn kernels(cli: &Cli, a: &KernelsArgs) -> Result<()> {
    let mut params = BankParams {
        n_orientations: a.orientations,
        scales: a.scales.clone(),
        skews: a.skews.clone(),
        grid: a.size,
        supersample: a.supersample,
        ..BankParams::default()
    };
    if a.mixed {
        params = params.with_mixed_second_order();
    }
    log_config(cli, &parent_dir(&a.out), &file_config_name(&a.out), &params)?;
    let bank = build_bank(&params)?;
    write_bank(&bank, &a.out)?;
    if let Some(svg) = &a.svg {
        fs::write(svg, bank_svg(&bank)).map_err(|e| StrfError::io(svg, e))?;
    }
    log::info!("wrote {} kernels to {}", bank.len(), a.out.display());
    Ok(())
}

pub fn simulate_spec(cli_seed: Option<u64>, a: &SimulateArgs) -> DatasetSpec {
    let mut spec = match a.preset {
        Preset::Paper => DatasetSpec::paper(a.family),
        Preset::Desk => DatasetSpec::desk(a.family),
    };
    if let Some(r) = a.res {
        spec.height = r;
        spec.width = r;
    }
    if let Some(v) = a.frames {
        spec.n_frames = v;
    }
    if let Some(v) = a.n {
        spec.n_sequences = v;
    }
    if let Some(v) = a.noise {
        spec.noise_rate = v;
    }
    if let Some(v) = a.threshold {
        spec.threshold = v;
    }
    if let Some(v) = a.supersample {
        spec.supersample = v;
    }
    if let Some(s) = cli_seed {
        spec.seed = s;
    }
    spec
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let spec = simulate_spec(cli.seed, a);
    spec.validate()?;
    log_config(cli, &a.out, "simulate.config.json", &spec)?;
    let t = Instant::now();
    let manifest = make_dataset(&spec, &a.out, a.csv)?;
    log::info!("{} sequences in {:.1}s", manifest.sequences.len(), t.elapsed().as_secs_f64());
    Ok(())
}

fn covariance(cli: &Cli, a: &CovarianceArgs) -> Result<()> {
    log_config(cli, &parent_dir(&a.out), &file_config_name(&a.out), (a.suite, a.refine))?;
    let reports = run_suite(a.suite, a.refine)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| StrfError::format(&a.out, e.to_string()))?;
    for r in &reports {
        w.serialize(r).map_err(|e| StrfError::format(&a.out, e.to_string()))?;
        log::info!("{:<40} {:>12.4e} <= {:<8} {}", r.test, r.error, r.tolerance, if r.passed { "pass" } else { "FAIL" });
    }
    w.flush().map_err(|e| StrfError::io(&a.out, e))?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(StrfError::domain(format!("{failed} of {} covariance checks failed", reports.len())));
    }
    Ok(())
}

fn load_net_config(path: Option<&Path>) -> Result<NetworkConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(NetworkConfig::default()),
    }
}

fn net(cli: &Cli, a: &NetCommand) -> Result<()> {
    match a {
        NetCommand::Init { config, init, activation, ckpt } => {
            let mut cfg = load_net_config(config.as_deref())?;
            if let Some(i) = init {
                cfg.init = *i;
            }
            if let Some(act) = activation {
                cfg.activation = *act;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            log_config(cli, &parent_dir(ckpt), &file_config_name(ckpt), &cfg)?;
            let p = init_parameters(&cfg)?;
            write_checkpoint(ckpt, &cfg, &p)?;
            log::info!("{} parameters written to {}", p.len(), ckpt.display());
        }
        NetCommand::Forward { ckpt, events, out } => {
            let (cfg, params) = read_checkpoint(ckpt)?;
            log_config(cli, &parent_dir(out), &file_config_name(out), &cfg)?;
            let ev = read_events(events)?;
            let pred = forward(&params, &cfg, &ev.rasterize())?;
            let mut w = csv::Writer::from_path(out).map_err(|e| StrfError::format(out, e.to_string()))?;
            let err = |e: csv::Error| StrfError::format(out, e.to_string());
            w.write_record(["t", "class", "x", "y"]).map_err(err)?;
            for (t, c) in pred.iter().enumerate() {
                for (k, [x, y]) in c.iter().enumerate() {
                    w.write_record([t.to_string(), k.to_string(), x.to_string(), y.to_string()]).map_err(err)?;
                }
            }
            w.flush().map_err(|e| StrfError::io(out, e))?;
        }
    }
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = &a.seeds {
        cfg.seeds = v.clone();
    } else if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    let mut net = load_net_config(a.net.as_deref())?;
    if let Some(i) = a.init {
        net.init = i;
    }
    if let Some(act) = a.activation {
        net.activation = act;
    }
    net.validate()?;
    log_config(cli, &a.out, "train.config.json", (&cfg, &net))?;
    let data = TrainData::load(&a.data)?;
    data.check(&net)?;
    for &seed in &cfg.seeds {
        let (stats, _) = train_run(&net, &cfg, &data, seed, Some(&a.out))?;
        write_run(&a.out, &stats)?;
        log::info!("{}: final val loss {:.3} ({:.0}s)", stats.name(), stats.final_val_loss, stats.wall_time_s);
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    if !(a.validation_fraction > 0.0 && a.validation_fraction < 1.0) {
        return Err(StrfError::config("validation fraction must lie in (0, 1)"));
    }
    let (cfg, params) = read_checkpoint(&a.ckpt)?;
    log_config(cli, &parent_dir(&a.out), &file_config_name(&a.out), &cfg)?;
    let data = TrainData::load(&a.data)?;
    data.check(&cfg)?;
    let (_, val) = data.split(a.validation_fraction);
    let bins = evaluate_per_scale(&params, &cfg, &data, &val, a.burn_in)?;
    let mut w = csv::Writer::from_path(&a.out).map_err(|e| StrfError::format(&a.out, e.to_string()))?;
    for b in &bins {
        w.serialize(b).map_err(|e| StrfError::format(&a.out, e.to_string()))?;
        log::info!("[{:.3}, {:.3}) n={} loss={:?}", b.lo, b.hi, b.n, b.loss);
    }
    w.flush().map_err(|e| StrfError::io(&a.out, e))
}

fn log_effects(rows: &[EffectRow]) {
    for r in rows {
        log::info!(
            "{:?} {}: rf {:.3} vs uniform {:.3}, d = {}",
            r.family,
            r.activation.name(),
            r.mean_rf,
            r.mean_uniform,
            r.cohens_d.map_or("undefined".into(), |d| format!("{d:.2}"))
        );
    }
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    log_config(cli, &a.out, "report.config.json", &a.runs)?;
    let runs = load_runs(&a.runs)?;
    if runs.is_empty() {
        return Err(StrfError::config(format!("no run summaries in {}", a.runs.display())));
    }
    let rows = write_report(&runs, &a.out)?;
    log_effects(&rows);
    Ok(())
}

/// Settings of the desk-scale experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub n_sequences: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub activations: Vec<Activation>,
    pub families: Vec<Family>,
    pub data_seed: u64,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            n_sequences: 200,
            epochs: 15,
            seeds: vec![1, 2, 3],
            activations: Activation::ALL.to_vec(),
            families: vec![Family::SpatialScale, Family::TemporalVelocity],
            data_seed: 7,
        }
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunStats>,
    pub effects: Vec<EffectRow>,
    /// Mean distance between two uniform points on the desk sensor.
    pub random_baseline: f64,
    pub wall_time_s: f64,
}

/// Generate both desk datasets, train every (activation, init, seed) and
/// write runs and the report under `out` when given.
pub fn run_experiment(exp: &Experiment, out: Option<&Path>) -> Result<ExperimentResult> {
    let start = Instant::now();
    let net_base = NetworkConfig::default();
    let cfg = TrainConfig { epochs: exp.epochs, seeds: exp.seeds.clone(), ..TrainConfig::default() };
    cfg.validate()?;
    let mut runs = Vec::new();
    for &family in &exp.families {
        let spec = DatasetSpec { n_sequences: exp.n_sequences, seed: exp.data_seed, ..DatasetSpec::desk(family) };
        let data = match out {
            Some(dir) => {
                let d = dir.join("data").join(family_dir(family));
                make_dataset(&spec, &d, false)?;
                TrainData::load(&d)?
            }
            None => TrainData::generate(&spec)?,
        };
        for &activation in &exp.activations {
            for init in [InitScheme::Rf, InitScheme::Uniform] {
                let net = NetworkConfig { activation, init, ..net_base.clone() };
                for &seed in &exp.seeds {
                    let run_dir = out.map(|d| d.join("runs"));
                    let (stats, _) = train_run(&net, &cfg, &data, seed, run_dir.as_deref())?;
                    log::info!("{}: final val loss {:.3} ({:.0}s)", stats.name(), stats.final_val_loss, stats.wall_time_s);
                    if let Some(d) = &run_dir {
                        write_run(d, &stats)?;
                    }
                    runs.push(stats);
                }
            }
        }
    }
    let effects = match out {
        Some(dir) => write_report(&runs, &dir.join("report"))?,
        None => crate::stats::effect_sizes(&runs),
    };
    log_effects(&effects);
    let side = net_base.width.min(net_base.height) as f64;
    Ok(ExperimentResult {
        runs,
        effects,
        random_baseline: random_baseline(side, false, 1_000_000, exp.data_seed)?,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn family_dir(f: Family) -> &'static str {
    match f {
        Family::SpatialScale => "spatial",
        Family::TemporalVelocity => "velocity",
    }
}

fn repro(cli: &Cli, a: &ReproArgs) -> Result<()> {
    let exp = Experiment {
        n_sequences: a.n,
        epochs: a.epochs,
        seeds: a.seeds.clone(),
        activations: if a.activations.is_empty() { Activation::ALL.to_vec() } else { a.activations.clone() },
        data_seed: cli.seed.unwrap_or(7),
        ..Experiment::default()
    };
    log_config(cli, &a.out, "repro.config.json", &exp)?;
    let res = run_experiment(&exp, Some(&a.out))?;
    log::info!(
        "{} runs in {:.0}s; random baseline {:.2} px",
        res.runs.len(),
        res.wall_time_s,
        res.random_baseline
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("strf").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_args(&["frobnicate"]), EXIT_USAGE);
        assert_eq!(run_args(&["simulate", "--family", "spatial"]), EXIT_USAGE);
        assert_eq!(run_args(&["simulate", "--family", "diagonal", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run_args(&["kernels", "--out", "x", "--bogus"]), EXIT_USAGE);
        assert_eq!(run_args(&[]), EXIT_USAGE);
    }

    #[test]
    fn negative_learning_rate_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("runs");
        let data = dir.path().join("data");
        assert_eq!(
            run_args(&["train", "--lr", "-1", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]),
            EXIT_USAGE
        );
    }

    #[test]
    fn version_and_help_exit_0() {
        assert_eq!(run_args(&["--version"]), EXIT_OK);
        assert_eq!(run_args(&["--help"]), EXIT_OK);
        assert!(version_string().contains(CHECKPOINT_FORMAT));
    }

    #[test]
    fn empty_simulation_writes_an_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        assert_eq!(run_args(&["simulate", "--family", "velocity", "--n", "0", "--out", out.to_str().unwrap()]), EXIT_OK);
        let m = crate::events::dataset::Manifest::load(&out).unwrap();
        assert!(m.sequences.is_empty());
        assert!(out.join("simulate.config.json").exists());
    }

    #[test]
    fn missing_input_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r");
        assert_eq!(
            run_args(&["report", "--runs", dir.path().join("nope").to_str().unwrap(), "--out", out.to_str().unwrap()]),
            EXIT_FAILURE
        );
    }

    #[test]
    fn simulate_flags_override_preset() {
        let a = SimulateArgs {
            family: Family::SpatialScale,
            preset: Preset::Desk,
            res: Some(32),
            frames: Some(5),
            n: Some(3),
            noise: Some(0.0),
            threshold: None,
            supersample: None,
            csv: false,
            out: PathBuf::from("x"),
        };
        let s = simulate_spec(Some(11), &a);
        assert_eq!((s.height, s.width, s.n_frames, s.n_sequences, s.noise_rate, s.seed), (32, 32, 5, 3, 0.0, 11));
        assert_eq!(s.threshold, DatasetSpec::desk(Family::SpatialScale).threshold);
    }
}
