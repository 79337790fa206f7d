//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowtrace_core::detection::{DetectorKind, DetectorSpec, ThresholdPolicy};
use flowtrace_core::engine::{calibrate_watermark, run_experiment, ExperimentOptions, ExperimentSummary};
use flowtrace_core::estimation::{design_lqg, steady_state_filter};
use flowtrace_core::linalg::{Matrix, Vector};
use flowtrace_core::model::{validate_scenario, AttackSpec};
use flowtrace_core::stealth::{pencil_rank_test, synthesize_zero_flow_attack, DEFAULT_RANK_RTOL};

use crate::modelfile::{load_model_file, ModelFile, ModelFileError};
use crate::output::{fmt_sig, ifcurve_csv, ifcurve_svg, roc_csv, write_atomic};
use crate::runner::{default_jobs, ParallelExecutor};

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "flowtrace", version, about = "Information-flow analysis of attacks on LTI stochastic control systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scenario exactly as described in the model file.
    Simulate(RunArgs),
    /// Check whether the attacker channels admit a zero-information attack.
    StealthAudit(AuditArgs),
    /// Run a false-data-injection scenario.
    Fdi(FdiArgs),
    /// Run a replay scenario (record length T+1).
    Replay(RunArgs),
    /// Calibrate the watermark covariance to a relative LQG cost increase.
    WatermarkDesign(WatermarkArgs),
    /// Estimate false-alarm and detection rates over time.
    Roc(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorArg {
    Chi2,
    Np,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Model file (JSON).
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Output directory; must exist.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Master seed (overrides the model file).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Trials per ensemble (overrides the model file).
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Horizon T (overrides the model file).
    #[arg(long, value_name = "T")]
    horizon: Option<usize>,
    /// Worker threads; 1 is the reproducibility reference.
    #[arg(long, value_name = "N", env = "FLOWTRACE_JOBS")]
    jobs: Option<usize>,
    /// Scale the watermark so that (J - J*)/J* equals RATIO.
    #[arg(long = "watermark-deltaJ", value_name = "RATIO")]
    watermark_delta_j: Option<f64>,
    /// Detector (overrides the model file).
    #[arg(long, value_enum)]
    detector: Option<DetectorArg>,
    /// Miss-rate target: thresholds keep the detection rate at 1 - DELTA.
    #[arg(long, value_name = "FLOAT")]
    delta: Option<f64>,
    /// Chi-squared window length.
    #[arg(long, value_name = "N")]
    window: Option<usize>,
    /// Output files.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct FdiArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Constant actuator injection, comma separated (length p').
    #[arg(long, value_name = "LIST", value_delimiter = ',', allow_hyphen_values = true)]
    ua: Option<Vec<f64>>,
    /// Constant sensor injection, comma separated (length m').
    #[arg(long, value_name = "LIST", value_delimiter = ',', allow_hyphen_values = true)]
    da: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Model file (JSON).
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Write witness.csv here when a witness exists.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Horizon for witness synthesis (default: the model file's).
    #[arg(long, value_name = "T")]
    horizon: Option<usize>,
    /// Relative singular-value tolerance for rank decisions.
    #[arg(long, value_name = "FLOAT", default_value_t = DEFAULT_RANK_RTOL)]
    rtol: f64,
}

#[derive(Debug, Args)]
struct WatermarkArgs {
    /// Model file (JSON).
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Write watermark.csv (the covariance) here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Target relative cost increase (J - J*)/J*.
    #[arg(long = "watermark-deltaJ", value_name = "RATIO", default_value_t = 0.40)]
    watermark_delta_j: f64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error(transparent)]
    Core(#[from] flowtrace_core::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        use flowtrace_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Write { .. } => EXIT_USAGE,
            CliError::ModelFile(ModelFileError::Io { .. }) => EXIT_USAGE,
            CliError::ModelFile(ModelFileError::Parse { .. }) => EXIT_INVALID,
            CliError::ModelFile(ModelFileError::Invalid(e)) | CliError::Core(e) => match e {
                E::InnovationNotPd
                | E::NoConvergence { .. }
                | E::Unstable { .. }
                | E::SingularCovariance
                | E::DimensionTooLarge { .. } => EXIT_NUMERIC,
                _ => EXIT_INVALID,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_run(&a, None, Outputs::Both),
        Command::Fdi(a) => fdi_attack(&a).and_then(|spec| cmd_run(&a.run, Some(spec), Outputs::Both)),
        Command::Replay(a) => cmd_run(&a, Some(Override::Replay), Outputs::Both),
        Command::Roc(a) => cmd_run(&a, None, Outputs::RocOnly),
        Command::StealthAudit(a) => cmd_audit(&a),
        Command::WatermarkDesign(a) => cmd_watermark(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

enum Override {
    Attack(AttackSpec),
    Replay,
}

#[derive(PartialEq)]
enum Outputs {
    Both,
    RocOnly,
}

fn fdi_attack(a: &FdiArgs) -> CliResult<Override> {
    let file = load_model_file(&a.run.model)?;
    let (ua0, da0) = match &file.scenario.attack {
        AttackSpec::Fdi { ua, da } => (ua.clone(), da.clone()),
        _ => (
            Vector::zeros(file.channels.p_attack()),
            Vector::zeros(file.channels.m_attack()),
        ),
    };
    if a.ua.is_none() && a.da.is_none() && !matches!(file.scenario.attack, AttackSpec::Fdi { .. }) {
        return Err(CliError::Usage(
            "fdi needs --ua/--da or an fdi attack_kind in the model file".into(),
        ));
    }
    Ok(Override::Attack(AttackSpec::Fdi {
        ua: a.ua.clone().map(Vector::from_vec).unwrap_or(ua0),
        da: a.da.clone().map(Vector::from_vec).unwrap_or(da0),
    }))
}

fn scenario_id(model: &Path, attack: &str) -> String {
    let stem = model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}-{attack}")
}

fn apply_overrides(file: &mut ModelFile, a: &RunArgs, attack: Option<Override>) -> CliResult<()> {
    let sc = &mut file.scenario;
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    if let Some(trials) = a.trials {
        sc.trials = trials;
    }
    if let Some(horizon) = a.horizon {
        sc.horizon = horizon;
    }
    match attack {
        Some(Override::Attack(spec)) => sc.attack = spec,
        Some(Override::Replay) => {
            sc.attack = AttackSpec::Replay {
                record_len: sc.horizon + 1,
            }
        }
        None => {
            // keep a file-specified replay consistent with an overridden horizon
            if let AttackSpec::Replay { record_len } = &mut sc.attack {
                *record_len = (*record_len).max(sc.horizon + 1);
            }
        }
    }
    let delta = a.delta.or(match sc.detector.threshold {
        ThresholdPolicy::BetaTarget { delta } => Some(delta),
        ThresholdPolicy::Fixed(_) => None,
    });
    let kind = match a.detector {
        Some(DetectorArg::Chi2) => DetectorKind::ChiSquared,
        Some(DetectorArg::Np) => DetectorKind::NeymanPearson,
        None => sc.detector.kind,
    };
    sc.detector = DetectorSpec {
        kind,
        window: a.window.unwrap_or(sc.detector.window),
        threshold: match delta {
            Some(delta) => ThresholdPolicy::BetaTarget { delta },
            None => sc.detector.threshold,
        },
    };
    *sc = validate_scenario(sc.clone(), &file.model, &file.channels)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, bytes).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

fn cmd_run(a: &RunArgs, attack: Option<Override>, outputs: Outputs) -> CliResult<()> {
    if !a.out.is_dir() {
        return Err(CliError::Usage(format!("output directory {} does not exist", a.out.display())));
    }
    let jobs = a.jobs.unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let mut file = load_model_file(&a.model)?;
    apply_overrides(&mut file, a, attack)?;
    let sc = &file.scenario;
    let options = ExperimentOptions {
        scenario_id: scenario_id(&a.model, sc.attack.kind_name()),
        delta_j_target: a.watermark_delta_j,
        ..ExperimentOptions::default()
    };
    let executor = ParallelExecutor::new(jobs).map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = run_experiment(sc, &file.model, &file.channels, &options, &executor)?;

    let mut written = vec![write_file(
        &a.out,
        "roc.csv",
        &roc_csv(&summary.roc, sc.detector.kind.name(), &summary.scenario_id, summary.seed),
    )?];
    if outputs == Outputs::Both {
        written.push(write_file(&a.out, "ifcurve.csv", &ifcurve_csv(&summary))?);
        if a.format == Format::CsvSvg {
            written.push(write_file(&a.out, "ifcurve.svg", ifcurve_svg(&summary).as_bytes())?);
        }
    }
    print_summary(&summary, sc.detector.kind.name());
    for p in written {
        out!("wrote {}", p.display());
    }
    Ok(())
}

fn print_summary(s: &ExperimentSummary, detector: &str) {
    let t = s.horizon;
    out!("scenario            {}", s.scenario_id);
    out!("attack              {}", s.attack);
    out!("horizon / trials    {} / {}", t, s.trials);
    out!("seed                {}", s.seed);
    if let Some(c) = &s.costs {
        out!("J*                  {}", fmt_sig(c.j_star));
        out!("J                   {}", fmt_sig(c.j));
        out!("dJ/J*               {}", fmt_sig(c.ratio));
    }
    out!("mean per-step KL[T] {}", fmt_sig(s.mean_perstep_kl[t]));
    out!("IF lower bound[T]   {}", fmt_sig(s.cum_if_lower_bound[t]));
    if let Some(e) = &s.exact_if {
        out!("IF exact[T]         {}", fmt_sig(e[t]));
    }
    if let Some(eps) = s.epsilon {
        out!("epsilon             {}", fmt_sig(eps));
    }
    out!("detector            {detector}");
    out!("alpha[T] / beta[T]  {} / {}", fmt_sig(s.roc[t].alpha), fmt_sig(s.roc[t].beta));
    match s.decay_rate {
        Some(r) => out!("alpha decay rate    {}", fmt_sig(r)),
        None => out!("alpha decay rate    n/a"),
    }
    if s.diverged_trials > 0 {
        out!("diverged trials     {}", s.diverged_trials);
    }
}

fn fmt_complex(z: flowtrace_core::stealth::Complex64) -> String {
    if z.im == 0.0 {
        fmt_sig(z.re)
    } else {
        format!("{}{}{}i", fmt_sig(z.re), if z.im < 0.0 { "-" } else { "+" }, fmt_sig(z.im.abs()))
    }
}

fn cmd_audit(a: &AuditArgs) -> CliResult<()> {
    let file = load_model_file(&a.model)?;
    let (model, channels) = (&file.model, &file.channels);
    let report = pencil_rank_test(model, channels, a.rtol)?;
    out!("pencil rank test (rtol {})", fmt_sig(report.tolerance));
    out!("  attacker channels   p'={} m'={}", channels.p_attack(), channels.m_attack());
    out!("  full column rank    {}", report.full_rank);
    out!("  normal rank         {}", report.normal_rank);
    out!("  stealthy attack     {}", if report.stealthy_exists { "exists" } else { "none" });
    let zeros: Vec<String> = report.invariant_zeros.iter().map(|z| fmt_complex(*z)).collect();
    out!("  invariant zeros     {}", if zeros.is_empty() { "-".into() } else { zeros.join(", ") });
    out!("  {:<28} rank", "probe");
    for (lambda, rank) in &report.rank_profile {
        out!("  {:<28} {}", fmt_complex(*lambda), rank);
    }

    let horizon = a.horizon.unwrap_or(file.scenario.horizon);
    out!("finite-horizon synthesis (T = {horizon})");
    let witness = synthesize_zero_flow_attack(model, channels, horizon, a.rtol)?;
    match &witness {
        None => out!("  witness             none"),
        Some(w) => {
            out!("  witness             found");
            out!("  max |dy|            {}", fmt_sig(w.max_output_deviation));
            if let Some(dir) = &a.out {
                let mut text = String::from("k");
                for i in 0..channels.p_attack() {
                    text.push_str(&format!(",ua_{}", i + 1));
                }
                for i in 0..channels.m_attack() {
                    text.push_str(&format!(",da_{}", i + 1));
                }
                text.push('\n');
                for (k, da) in w.da_seq.iter().enumerate() {
                    text.push_str(&k.to_string());
                    for i in 0..channels.p_attack() {
                        text.push(',');
                        if let Some(ua) = w.ua_seq.get(k) {
                            text.push_str(&fmt_sig(ua[i]));
                        }
                    }
                    for v in da.iter() {
                        text.push(',');
                        text.push_str(&fmt_sig(*v));
                    }
                    text.push('\n');
                }
                let p = write_file(dir, "witness.csv", text.as_bytes())?;
                out!("wrote {}", p.display());
            }
        }
    }
    if report.stealthy_exists != witness.is_some() {
        out!("note: pencil and finite-horizon verdicts differ at this horizon");
    }
    Ok(())
}

fn cmd_watermark(a: &WatermarkArgs) -> CliResult<()> {
    let file = load_model_file(&a.model)?;
    let model = &file.model;
    let ssf = steady_state_filter(model)?;
    let law = design_lqg(model)?;
    let shape = file
        .scenario
        .watermark_cov
        .clone()
        .unwrap_or_else(|| Matrix::identity(model.p(), model.p()));
    let d = calibrate_watermark(model, &ssf, &law, &shape, a.watermark_delta_j)?;
    out!("scale               {}", fmt_sig(d.scale));
    out!("J*                  {}", fmt_sig(d.j_star));
    out!("J                   {}", fmt_sig(d.j));
    out!("dJ/J*               {}", fmt_sig(d.ratio));
    out!("epsilon             {}", fmt_sig(d.epsilon));
    out!("watermark covariance");
    for row in d.cov.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| fmt_sig(*v)).collect();
        out!("  {}", cells.join("  "));
    }
    if let Some(dir) = &a.out {
        let mut text = String::new();
        for row in d.cov.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| fmt_sig(*v)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        let p = write_file(dir, "watermark.csv", text.as_bytes())?;
        out!("wrote {}", p.display());
    }
    Ok(())
}
