//! Command-line experiment driver.

pub mod commands;
pub mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

/// Environment variable naming the directory that holds run outputs.
pub const OUTPUT_ROOT_ENV: &str = "LEAPREC_OUTPUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<leaprec_core::Error> for CliError {
    fn from(e: leaprec_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else if e.is_data() {
            CliError::Data(e.to_string())
        } else {
            match e {
                leaprec_core::Error::Meta(leaprec_core::MetaError::InvalidConfig(m)) => {
                    CliError::Usage(m)
                }
                leaprec_core::Error::Model(leaprec_core::ModelError::DimMismatch { .. }) => {
                    CliError::Data(e.to_string())
                }
                other => CliError::Other(other.to_string()),
            }
        }
    }
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                leaprec_core::Error::from(e).into()
            }
        }
    )*};
}
via_core!(
    leaprec_core::DataError,
    leaprec_core::ModelError,
    leaprec_core::MetaError,
    leaprec_core::EvalError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "leaprec",
    version,
    about = "Meta-learned temporal recommendation experiments"
)]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic interaction log with popularity drift.
    Generate(commands::generate::GenerateArgs),
    /// Train both branches and write checkpoints, loss and path-length curves.
    Train(TrainArgs),
    /// Score a checkpoint on the test window.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Representation-shift and popularity diagnostics of a recorded run.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Sweep branch dimensions, inner steps and slice granularity.
    Ablate(commands::ablate::AblateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory (relative paths resolve under the output root).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Options shared by every command that reads a dataset.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat key=value configuration file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interaction file: user, item, unix seconds per line.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Cut time (YYYY-MM, YYYY-MM-DD or unix seconds).
    #[arg(long)]
    pub cut: Option<String>,
    #[arg(long)]
    pub val_months: Option<u32>,
    #[arg(long)]
    pub granularity: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Inner steps per slice.
    #[arg(long = "k")]
    pub inner_steps: Option<usize>,
    /// Inner learning rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// GTL meta learning rate.
    #[arg(long)]
    pub beta: Option<f64>,
    /// OTL meta learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub gtl_dim: Option<usize>,
    #[arg(long)]
    pub otl_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `leap` or `fomaml`.
    #[arg(long)]
    pub meta_mode: Option<String>,
    /// `sgd` or `adam`.
    #[arg(long)]
    pub meta_optimizer: Option<String>,
    /// Use `-sigmoid` instead of `-ln sigmoid` in the ranking loss.
    #[arg(long)]
    pub literal_bpr: bool,
    /// Normalize attention logits by their sum instead of softmax.
    #[arg(long)]
    pub literal_attn: bool,
    /// Divide the OTL meta-gradient by the slice count as well.
    #[arg(long)]
    pub normalize_otl_meta: bool,
    /// Let validation interactions join the graph and histories at test time.
    #[arg(long)]
    pub extend_history_through_val: bool,
    /// Keep every slice's final parameters (needed by `analyze`).
    #[arg(long)]
    pub record_slice_params: bool,
    /// Any config key, as key=value; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    /// Config file (if any), then flags.
    pub fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => base.unwrap_or_default(),
        };
        let mut set = |k: &str, v: Option<String>| -> Result<(), CliError> {
            match v {
                Some(v) => c.set(k, &v),
                None => Ok(()),
            }
        };
        set("data", self.data.as_ref().map(|p| p.display().to_string()))?;
        set("cut", self.cut.clone())?;
        set("val_months", self.val_months.map(|v| v.to_string()))?;
        set(
            "granularity_months",
            self.granularity.map(|v| v.to_string()),
        )?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("inner_steps", self.inner_steps.map(|v| v.to_string()))?;
        set("inner_lr", self.alpha.map(|v| v.to_string()))?;
        set("gtl_meta_lr", self.beta.map(|v| v.to_string()))?;
        set("otl_meta_lr", self.eta.map(|v| v.to_string()))?;
        set("gtl_dim", self.gtl_dim.map(|v| v.to_string()))?;
        set("otl_dim", self.otl_dim.map(|v| v.to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("meta_mode", self.meta_mode.clone())?;
        set("meta_optimizer", self.meta_optimizer.clone())?;
        for (flag, key) in [
            (self.literal_bpr, "literal_bpr"),
            (self.literal_attn, "literal_attn"),
            (self.normalize_otl_meta, "normalize_otl_meta"),
            (
                self.extend_history_through_val,
                "extend_history_through_val",
            ),
            (self.record_slice_params, "record_slice_params"),
        ] {
            if flag {
                set(key, Some("true".into()))?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            c.set(k, v)?;
        }
        Ok(c)
    }
}

/// Resolves an output directory: `explicit` if absolute, otherwise under the
/// output root (`$LEAPREC_OUTPUT_ROOT`, default `runs`); without `explicit`
/// the directory is `<root>/<command>-<hash>`.
pub fn output_dir(explicit: Option<&std::path::Path>, command: &str, hash: &str) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    match explicit {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) if std::env::var_os(OUTPUT_ROOT_ENV).is_some() => root.join(p),
        Some(p) => p.to_path_buf(),
        None => root.join(format!("{command}-{hash}")),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let result = match cli.command {
        Command::Generate(a) => commands::generate::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Analyze(a) => commands::analyze::run(&a),
        Command::Ablate(a) => commands::ablate::run(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
