use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "gcec", version, about = "Pixel-grid graph convolutional image classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset container and write a checkpoint and metrics log
    #[command(args_override_self = true)]
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset container
    #[command(args_override_self = true)]
    Eval(RunArgs),
    /// Print the per-layer parameter count
    #[command(args_override_self = true)]
    Params(RunArgs),
    /// Print embedding statistics and edge weights for one image
    #[command(args_override_self = true)]
    Inspect(RunArgs),
}

impl Command {
    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Train(a) | Command::Eval(a) | Command::Params(a) | Command::Inspect(a) => a,
        }
    }
}

fn parse_choice(values: [&'static str; 2]) -> impl clap::builder::TypedValueParser<Value = usize> {
    PossibleValuesParser::new(values).map(|s| s.parse::<usize>().expect("choices are numeric"))
}

/// Every option of every subcommand. Config-file keys are the long flag
/// names without the leading dashes.
#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// key=value file supplying defaults for any other flag
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset container directory
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Checkpoint to evaluate or inspect
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Where train writes the checkpoint (plus a .json sidecar)
    #[arg(long, value_name = "FILE")]
    pub out_model: Option<PathBuf>,
    /// Where train writes line-delimited JSON metrics
    #[arg(long, value_name = "FILE")]
    pub out_metrics: Option<PathBuf>,
    /// Seed for initialization, splits and shuffling [default: 0]
    #[arg(long, env = "GCEC_SEED")]
    pub seed: Option<u64>,
    /// Training epochs [default: 4]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Samples per optimizer step [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 penalty added to the gradient [default: 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Grid connectivity [default: 4]
    #[arg(long, value_parser = parse_choice(["4", "8"]))]
    pub connectivity: Option<usize>,
    /// Edge-convolution neighborhood radius [default: 2]
    #[arg(long, value_parser = parse_choice(["1", "2"]))]
    pub hops: Option<usize>,
    /// Treat learned edge weights as constants in backward [default: true]
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub detach_edge_weights: Option<bool>,
    /// Edge-convolution aggregation [default: max]
    #[arg(long, value_parser = ["max", "mean"])]
    pub aggregation: Option<String>,
    /// Number of classes [default: from the container, else 10]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Hidden width of the edge-convolution mlp [default: 32]
    #[arg(long)]
    pub edge_hidden: Option<usize>,
    /// Output width of edge convolution [default: 16]
    #[arg(long)]
    pub edge_out: Option<usize>,
    /// Hidden width of the edge-weight mlp [default: 16]
    #[arg(long)]
    pub weight_hidden: Option<usize>,
    /// Output widths of the three graph convolutions [default: 16,16,8]
    #[arg(long, value_name = "D1,D2,D3")]
    pub gcn_dims: Option<String>,
    /// Image height when no container is given [default: 28]
    #[arg(long)]
    pub height: Option<usize>,
    /// Image width when no container is given [default: 28]
    #[arg(long)]
    pub width: Option<usize>,
    /// Worker threads [default: logical cores]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Record elapsed milliseconds in metrics instead of 0 [default: false]
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub wall_clock: Option<bool>,
    /// Container index of the image to inspect [default: 0]
    #[arg(long)]
    pub sample: Option<usize>,
    /// Inspect a constant image with this byte value instead of a sample
    #[arg(long, value_name = "BYTE")]
    pub constant_image: Option<u8>,
}

/// Long flag names accepted in config files.
pub fn config_keys() -> BTreeSet<String> {
    let cmd = Cli::command();
    let sub = cmd.find_subcommand("train").expect("train subcommand");
    sub.get_arguments()
        .filter_map(|a| a.get_long())
        .filter(|&l| l != "config" && l != "help")
        .map(str::to_string)
        .collect()
}

fn find_config(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let known = config_keys();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key=value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        if !known.contains(&key) {
            return Err(CliError::Config(format!("{origin}:{}: unknown config key `{key}`", n + 1)));
        }
        if !seen.insert(key.clone()) {
            return Err(CliError::Config(format!("{origin}:{}: duplicate config key `{key}`", n + 1)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Parses the command line, splicing config-file entries in ahead of the
/// user's flags so that flags win.
pub fn parse(argv: Vec<String>) -> Result<Cli, CliError> {
    let mut full = argv.clone();
    if let Some(path) = find_config(&argv[1.min(argv.len())..]) {
        let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        let entries = parse_config_file(&text, &path)?;
        let sub = argv.iter().skip(1).position(|a| !a.starts_with('-')).map(|p| p + 1);
        if let Some(at) = sub {
            let injected = entries.into_iter().map(|(k, v)| format!("--{k}={v}"));
            full = argv[..=at].iter().cloned().chain(injected).chain(argv[at + 1..].iter().cloned()).collect();
        }
    }
    Cli::try_parse_from(full).map_err(CliError::Clap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_valid() {
        Cli::command().debug_assert();
    }

    #[test]
    fn keys_cover_documented_flags() {
        let keys = config_keys();
        for k in [
            "data",
            "out-model",
            "out-metrics",
            "seed",
            "epochs",
            "batch-size",
            "lr",
            "weight-decay",
            "connectivity",
            "hops",
            "detach-edge-weights",
            "classes",
            "threads",
        ] {
            assert!(keys.contains(k), "{k}");
        }
    }

    #[test]
    fn file_values_lose_to_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs = 9\n# comment\nlr=0.5\n").unwrap();
        let argv = ["gcec", "params", "--config", path.to_str().unwrap(), "--epochs", "2"];
        let cli = parse(argv.iter().map(|s| s.to_string()).collect()).unwrap();
        let a = cli.command.args();
        assert_eq!(a.epochs, Some(2));
        assert_eq!(a.lr, Some(0.5));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_config_file("learning_rate = 1", "f").unwrap_err();
        assert!(err.to_string().contains("learning-rate"));
    }
}
