use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gcec::checkpoint::{config_diff, Checkpoint};
use gcec::dataset::{load_container, DatasetContainer};
use gcec::diagnostics::inspect;
use gcec::graph::image_to_features;
use gcec::layers::{parameter_breakdown, Aggregation, GraphContext, ModelConfig, ModelParams};
use gcec::training::{check_dataset, evaluate, train, TrainConfig};
use gcec::{Connectivity, GridCache};
use serde::Serialize;

use crate::args::{Command, RunArgs};
use crate::CliError;

// Output goes to pipes such as `head`; a closed reader is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

const HISTOGRAM_BINS: usize = 10;
const PROBE_LAYERS: usize = 8;

pub fn run(command: Command) -> Result<(), CliError> {
    let args = command.args().clone();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Params(a) => cmd_params(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    })
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

fn parse_gcn_dims(s: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("--gcn-dims expects three comma-separated integers, got `{s}`")))?;
    parts
        .try_into()
        .map_err(|_| CliError::Config(format!("--gcn-dims expects three values, got `{s}`")))
}

/// Applies the model flags that were given on top of `base`.
fn overlay_model(args: &RunArgs, mut c: ModelConfig) -> Result<ModelConfig, CliError> {
    if let Some(n) = args.connectivity {
        c.connectivity = Connectivity::from_count(n).map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(h) = args.hops {
        c.edge_conv_hops = h;
    }
    if let Some(d) = args.detach_edge_weights {
        c.detach_edge_weights = d;
    }
    if let Some(a) = &args.aggregation {
        c.aggregation = if a == "mean" { Aggregation::Mean } else { Aggregation::Max };
    }
    if let Some(n) = args.classes {
        c.n_classes = n;
    }
    if let Some(v) = args.edge_hidden {
        c.dims.edge_hidden = v;
    }
    if let Some(v) = args.edge_out {
        c.dims.edge_out = v;
    }
    if let Some(v) = args.weight_hidden {
        c.dims.weight_hidden = v;
    }
    if let Some(s) = &args.gcn_dims {
        c.dims.gcn = parse_gcn_dims(s)?;
    }
    if let Some(h) = args.height {
        c.height = h;
    }
    if let Some(w) = args.width {
        c.width = w;
    }
    c.validate()?;
    Ok(c)
}

/// Model config from defaults, the container's image shape and classes,
/// then explicit flags.
fn model_config(args: &RunArgs, data: Option<&DatasetContainer>) -> Result<ModelConfig, CliError> {
    let mut base = ModelConfig::default();
    if let Some(d) = data {
        if args.height.is_some_and(|h| h != d.height()) || args.width.is_some_and(|w| w != d.width()) {
            return Err(CliError::Config(format!(
                "--height/--width disagree with the container's {}x{} images",
                d.height(),
                d.width()
            )));
        }
        base.height = d.height();
        base.width = d.width();
        base.channels = d.channels();
        base.n_classes = d.n_classes();
    }
    overlay_model(args, base)
}

fn train_config(args: &RunArgs) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: args.lr.unwrap_or(d.learning_rate),
        weight_decay: args.weight_decay.unwrap_or(d.weight_decay),
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch_size.unwrap_or(d.batch_size),
        seed: args.seed.unwrap_or(d.seed),
        wall_clock: args.wall_clock.unwrap_or(d.wall_clock),
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_checked(args: &RunArgs) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(require(&args.model, "model")?)?;
    let requested = overlay_model(args, ck.config.clone())?;
    let diff = config_diff(&ck.config, &requested);
    if !diff.is_empty() {
        return Err(CliError::Config(format!(
            "checkpoint/config mismatch (checkpoint vs flags): {}",
            diff.join("; ")
        )));
    }
    Ok(ck)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn cmd_train(args: &RunArgs) -> Result<(), CliError> {
    let data = load_container(require(&args.data, "data")?)?;
    let model = model_config(args, Some(&data))?;
    let cfg = train_config(args)?;
    let mut metrics = args.out_metrics.as_deref().map(create).transpose()?;
    let mut sink = |m: &gcec::training::EpochMetrics| -> std::io::Result<()> {
        if let Some(w) = metrics.as_mut() {
            writeln!(w, "{}", m.to_json_line())?;
        }
        Ok(())
    };
    let out = train(&data, &model, &cfg, &mut sink)?;
    if let (Some(w), Some(path)) = (metrics.as_mut(), &args.out_metrics) {
        w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    let ck = Checkpoint::new(model.clone(), out.params)?;
    if let Some(path) = &args.out_model {
        ck.save(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    }

    let s = &out.splits;
    say!(
        "trained {} epochs on {} samples ({} val, {} test), {} parameters",
        cfg.epochs,
        s.train.len(),
        s.val.len(),
        s.test.len(),
        ck.sidecar().count_parameters
    );
    match &out.test {
        None => say!("no test evaluation (no epochs run or empty test split)"),
        Some(t) => {
            say!("test  loss {:.4}  acc {:.4}  auc_macro {}", t.loss, t.acc, fmt_opt(t.auc.macro_avg));
            say!("{:<24} {:>8} {:>8}", "class", "auc", "recall");
            let recall = t.per_class_recall(model.n_classes);
            for (c, name) in data.manifest().classes.iter().enumerate() {
                say!("{name:<24} {:>8} {:>8}", fmt_opt(t.auc.per_class[c]), fmt_opt(recall[c]));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    acc: f64,
    auc_per_class: Vec<Option<f64>>,
    auc_macro: Option<f64>,
    per_class_recall: Vec<Option<f64>>,
    confusion_matrix: Vec<Vec<u64>>,
}

fn cmd_eval(args: &RunArgs) -> Result<(), CliError> {
    let ck = load_checked(args)?;
    let data = load_container(require(&args.data, "data")?)?;
    check_dataset(&data, &ck.config)?;
    let ctx = GraphContext::for_config(&ck.config, &GridCache::new())?;
    let all: Vec<usize> = (0..data.len()).collect();
    let report = evaluate(&ctx, &ck.config, &ck.params, &data, &all)?;
    let out = EvalOutput {
        acc: report.acc,
        auc_per_class: report.auc.per_class.clone(),
        auc_macro: report.auc.macro_avg,
        per_class_recall: report.per_class_recall(ck.config.n_classes),
        confusion_matrix: report.confusion_matrix(ck.config.n_classes),
    };
    say!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    Ok(())
}

fn cmd_params(args: &RunArgs) -> Result<(), CliError> {
    let config = match &args.model {
        Some(_) => load_checked(args)?.config,
        None => {
            let data = args.data.as_deref().map(load_container).transpose()?;
            model_config(args, data.as_ref())?
        }
    };
    let layers = parameter_breakdown(&config);
    say!("{:<24} {:>12} {:>10}", "layer", "shape", "params");
    for l in &layers {
        say!("{:<24} {:>12} {:>10}", l.name, format!("{}x{}", l.inputs, l.outputs), l.count);
    }
    say!("{:<24} {:>12} {:>10}", "total", "", layers.iter().map(|l| l.count).sum::<usize>());
    Ok(())
}

fn cmd_inspect(args: &RunArgs) -> Result<(), CliError> {
    let data = args.data.as_deref().map(load_container).transpose()?;
    let (config, params) = match &args.model {
        Some(_) => {
            let ck = load_checked(args)?;
            (ck.config, ck.params)
        }
        None => {
            let config = model_config(args, data.as_ref())?;
            let params = ModelParams::init(&config, args.seed.unwrap_or(0))?;
            (config, params)
        }
    };
    let n_bytes = config.height * config.width * config.channels;
    let pixels: Vec<u8> = match (args.constant_image, &data) {
        (Some(v), _) => vec![v; n_bytes],
        (None, Some(d)) => {
            let i = args.sample.unwrap_or(0);
            if i >= d.len() {
                return Err(CliError::Config(format!("--sample {i} out of range for {} images", d.len())));
            }
            d.image(i).to_vec()
        }
        (None, None) => return Err(CliError::Config("inspect needs --data or --constant-image".into())),
    };
    let x = image_to_features::<f64>(&pixels, config.height, config.width, config.channels)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let ctx = GraphContext::for_config(&config, &GridCache::new())?;
    let report = inspect(&ctx, &config, &params, &x, HISTOGRAM_BINS, PROBE_LAYERS)?;
    say!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    Ok(())
}
