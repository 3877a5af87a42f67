//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a JSON object whose keys are the
//! long flag names with `-` replaced by `_`. Values given on the command line
//! (or through the environment) take precedence over the file.

mod aggregate;
mod bench;
mod generate;
mod se;
mod simulate;

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use aggregate::AggregateArgs;
pub use bench::BenchArgs;
pub use generate::GenerateArgs;
pub use se::SeArgs;
pub use simulate::{Figure, SimulateArgs};

#[derive(Debug, Parser)]
#[command(name = "uagg", version, about = "Unsupervised aggregation of model predictions")]
pub struct Cli {
    /// Worker threads for replicates, sweep cells and CV folds.
    #[arg(long, global = true, env = "UAGG_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate a prediction matrix into consensus scores and model weights.
    Aggregate(AggregateArgs),
    /// Run the synthetic benchmark grid for all methods.
    Simulate(SimulateArgs),
    /// Iterate the state-evolution recursion over a lambda x alpha sweep.
    Se(SeArgs),
    /// Compare all methods on a matrix with known consensus values.
    Bench(BenchArgs),
    /// Draw one synthetic prediction matrix with its ground truth.
    Generate(GenerateArgs),
}

/// Overlays the JSON object in `path` onto `args`, skipping every field that
/// was set explicitly on the command line or through the environment.
fn merge_config<T: Serialize + DeserializeOwned>(args: T, matches: &ArgMatches, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let file: serde_json::Value = serde_json::from_str(&text)?;
    let serde_json::Value::Object(file) = file else {
        return Err(Error::InvalidConfig(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(args)?;
    let fields = merged.as_object_mut().expect("argument structs serialize to objects");
    for (key, value) in file {
        if key == "config" || !fields.contains_key(&key) {
            return Err(Error::InvalidConfig(format!("{}: unknown key `{key}`", path.display())));
        }
        let explicit = matches!(
            matches.value_source(&key),
            Some(ValueSource::CommandLine) | Some(ValueSource::EnvVariable)
        );
        if !explicit {
            fields.insert(key, value);
        }
    }
    serde_json::from_value(merged)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn with_config<T: Serialize + DeserializeOwned>(args: T, config: Option<PathBuf>, matches: &ArgMatches) -> Result<T> {
    match config {
        Some(path) => merge_config(args, matches, &path),
        None => Ok(args),
    }
}

pub(crate) fn create_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub(crate) fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut out = create_file(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    std::io::Write::write_all(&mut out, b"\n")?;
    std::io::Write::flush(&mut out)?;
    Ok(())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn run(cli: Cli, matches: &ArgMatches) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::InvalidConfig("--workers must be at least 1".into()));
        }
        // a second call in the same process (tests) keeps the existing pool
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match cli.command {
        Command::Aggregate(a) => {
            let config = a.config.clone();
            aggregate::run(with_config(a, config, sub)?)
        }
        Command::Simulate(a) => {
            let config = a.config.clone();
            simulate::run(with_config(a, config, sub)?)
        }
        Command::Se(a) => {
            let config = a.config.clone();
            se::run(with_config(a, config, sub)?)
        }
        Command::Bench(a) => {
            let config = a.config.clone();
            bench::run(with_config(a, config, sub)?)
        }
        Command::Generate(a) => {
            let config = a.config.clone();
            generate::run(with_config(a, config, sub)?)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 for pipeline failures, 2 for invalid input.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match run(cli, &matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

pub(crate) fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| Error::InvalidConfig(format!("bad {what} value `{x}`"))))
        .collect()
}
