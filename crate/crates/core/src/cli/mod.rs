//! Command-line front end: simulate, train, predict, evaluate, features.

mod commands;
mod evaluate;
mod simulate;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use scalemix::nu_select::{log_grid, NuSearchConfig};
use scalemix::vb::VbConfig;
use scalemix::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_NOT_CONVERGED: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "scalemix",
    version,
    about = "Student-t mixture classifiers trained by variational Bayes"
)]
pub struct Cli {
    /// `key = value` file supplying flags not given on the command line.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 uses every core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the two-Gaussian simulation, fit three ν settings and write
    /// decision-boundary grids.
    Simulate(simulate::SimulateArgs),
    /// Fit a classifier to a feature CSV and save it as JSON.
    Train(commands::TrainArgs),
    /// Classify a feature CSV with a saved model.
    Predict(commands::PredictArgs),
    /// Trial-combination evaluation per participant.
    Evaluate(evaluate::EvaluateArgs),
    /// Turn a raw-signal CSV into a feature CSV.
    Features(commands::FeaturesArgs),
}

/// Prior and ν settings shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Shared degrees of freedom (ignored with --select-nu).
    #[arg(long, default_value_t = 5.0)]
    pub nu: f64,

    /// Choose ν by cross-validated conditional entropy.
    #[arg(long)]
    pub select_nu: bool,

    /// ν used for the fold models during --select-nu.
    #[arg(long, default_value_t = 200.0)]
    pub nu_pre: f64,

    /// Candidate ν values: `lo:hi:n` (log-spaced) or a comma list.
    #[arg(long, default_value = "0.001:200:40")]
    pub nu_grid: String,

    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    /// Initial components per class.
    #[arg(long, default_value_t = 1)]
    pub k_init: usize,

    /// Dirichlet concentration of the mixture weights.
    #[arg(long, default_value_t = 0.001)]
    pub alpha0: f64,

    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
}

impl ModelArgs {
    pub fn search(&self, seed: u64) -> Result<NuSearchConfig, Error> {
        let cfg = NuSearchConfig {
            folds: self.folds,
            nu_pre: self.nu_pre,
            grid: parse_grid(&self.nu_grid)?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vb(&self, seed: u64) -> VbConfig {
        VbConfig {
            max_iters: self.max_iters,
            seed,
            ..VbConfig::default()
        }
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::InvalidArgument(format!("cannot read nu grid {text:?}"));
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let n: usize = parts[2].parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi > lo) || n == 0 {
            return Err(bad());
        }
        return Ok(log_grid(lo, hi, n));
    }
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

/// Failure of a command, already mapped to its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_numeric() => EXIT_NUMERIC,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        }
    }
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Done,
    /// Outputs were written but some fit hit the iteration cap.
    NotConverged,
}

pub type CmdResult = Result<Outcome, Failure>;

/// Appends `--key value` for each config-file entry whose flag is absent
/// from `args`. Flags given on the command line win.
fn inject_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let strings: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(pos) = strings
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(args);
    };
    let path = match strings[pos].strip_prefix("--config=") {
        Some(p) => PathBuf::from(p),
        None => match strings.get(pos + 1) {
            Some(p) => PathBuf::from(p),
            None => return Ok(args),
        },
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;

    let root = Cli::command();
    let sub = strings
        .iter()
        .find_map(|a| root.get_subcommands().find(|s| s.get_name() == a))
        .cloned();
    let find = |key: &str| {
        sub.iter()
            .flat_map(|s| s.get_arguments())
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key))
            .cloned()
    };
    let given = |key: &str| {
        let flag = format!("--{key}");
        strings
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };

    let mut out = args;
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let arg = find(key)
            .filter(|_| key != "config")
            .ok_or_else(|| Failure::usage(format!("{}:{}: unknown key {key:?}", path.display(), n + 1)))?;
        if given(key) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" | "yes" | "1" => out.push(format!("--{key}").into()),
                "false" | "no" | "0" => {}
                _ => {
                    return Err(Failure::usage(format!(
                        "{}:{}: {key} expects true or false",
                        path.display(),
                        n + 1
                    )))
                }
            }
        } else {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    Ok(out)
}

pub fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args = match inject_config(args.into_iter().collect()) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} threads: {e}", cli.threads);
            return EXIT_USAGE;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate::run(a, cli.seed),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => evaluate::run(a, cli.seed),
        Command::Features(a) => commands::features(a),
    });
    match result {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: training stopped at the iteration cap before converging");
            EXIT_NOT_CONVERGED
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Creates `dir` (and parents) if needed.
fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, Failure> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Failure::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0.1,1,10").unwrap(), vec![0.1, 1.0, 10.0]);
        let g = parse_grid("0.001:200:40").unwrap();
        assert_eq!((g.len(), g[0], g[39]), (40, 0.001, 200.0));
        assert!(parse_grid("1:0.5:3").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn config_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nnu = 2.5\nk-init = 4  # trailing\nselect-nu = true\nseed = 9\n",
        )
        .unwrap();
        let args = os(&[
            "scalemix",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--nu",
            "7",
            "--data",
            "x.csv",
        ]);
        let out = inject_config(args).unwrap();
        let cli = Cli::try_parse_from(out).unwrap();
        assert_eq!(cli.seed, 9);
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.model.nu, 7.0);
        assert_eq!(t.model.k_init, 4);
        assert!(t.model.select_nu);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "colour = blue\n").unwrap();
        let args = os(&["scalemix", "train", "--config", path.to_str().unwrap()]);
        assert_eq!(inject_config(args).unwrap_err().code, EXIT_USAGE);
    }
}
