use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tagcn::export::{export_attention, export_graphs};
use tagcn::model::{count_parameters, Model};
use tagcn::skeleton::{
    build_topology, dataset_read, dataset_write, derive_stream, parse_ntu_skeleton, recenter, synth_generate,
    Dataset, SkeletonSequence, StreamKind, SynthSpec, TopologySpec,
};
use tagcn::train::{
    checkpoint_load, ensemble_fuse, evaluate_topk, grad_check_suite, run_training, EvalOptions, RunOptions,
    ScoreSet, CHECKPOINT_PREFIX, GRADCHECK_EPS,
};

use crate::config::CliConfig;

#[derive(Debug, Parser)]
#[command(name = "tagcn", version, about = "Skeleton action recognition with adaptive graphs and attention")]
struct Cli {
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration; flags override it and it overrides defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic chain-skeleton dataset.
    Synth(SynthArgs),
    /// Convert NTU `.skeleton` files (or a dataset) and write derived streams.
    Preprocess(PreprocessArgs),
    /// Train one stream.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Combine per-stream score files.
    Fuse(FuseArgs),
    /// Compare every layer's backward pass with central differences.
    Gradcheck(GradcheckArgs),
    /// Write learned graphs or attention maps as CSV.
    Export(ExportArgs),
    /// Print the parameter count of the configured model.
    Params,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    per_class: usize,
    #[arg(long, default_value_t = 11)]
    joints: usize,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    bodies: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Directory of `.skeleton` files, or a dataset directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Streams to write under `<out>/streams/`.
    #[arg(long, value_delimiter = ',')]
    streams: Option<Vec<StreamKind>>,
    /// Subtract the first body's center joint per frame.
    #[arg(long)]
    recenter: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Held-out dataset evaluated after each epoch.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    stream: Option<StreamKind>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from `<out>/model`.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint prefix, e.g. `run1/model`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    stream: Option<StreamKind>,
    #[arg(long, value_delimiter = ',')]
    topk: Option<Vec<usize>>,
    #[arg(long)]
    scores_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    scores: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    topk: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Number of random layer configurations.
    #[arg(long, default_value_t = 20)]
    configs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportWhat {
    Graphs,
    Attention,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum)]
    what: ExportWhat,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    sample: Option<String>,
    #[arg(long)]
    stream: Option<StreamKind>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}

/// The error chain joined with `: `, skipping causes already spelled out.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

/// 2 for unreadable or malformed data, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<tagcn::Error>() {
            return if err.is_data_error() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    match cli.command {
        Command::Synth(a) => synth(&cfg, a),
        Command::Preprocess(a) => preprocess(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Fuse(a) => fuse(&cfg, a),
        Command::Gradcheck(a) => gradcheck(&cfg, a),
        Command::Export(a) => export(cfg, a),
        Command::Params => params(&cfg),
    }
}

fn synth(cfg: &CliConfig, a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_classes: a.classes,
        per_class: a.per_class,
        joints: a.joints,
        frames: a.frames,
        bodies: a.bodies,
        noise_std: a.noise,
    };
    let ds = synth_generate(&spec, cfg.train.seed)?;
    dataset_write(&ds, &a.out)?;
    eprintln!("wrote {} samples to {}", ds.samples.len(), a.out.display());
    Ok(())
}

/// NTU action code `A###` in a file name, as a zero-based label.
fn ntu_label(stem: &str) -> Option<usize> {
    let i = stem.rfind('A')?;
    let digits = stem.get(i + 1..i + 4)?;
    digits.parse::<usize>().ok().filter(|&a| a >= 1).map(|a| a - 1)
}

fn read_ntu_dir(dir: &Path) -> Result<Dataset> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("cannot list {}", dir.display()))?;
    files.retain(|p| p.extension().is_some_and(|e| e == "skeleton"));
    files.sort();
    if files.is_empty() {
        return Err(tagcn::Error::Argument(format!("no .skeleton files in {}", dir.display())).into());
    }
    let mut samples: Vec<SkeletonSequence> = Vec::with_capacity(files.len());
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut seq = parse_ntu_skeleton(&text, &stem).with_context(|| path.display().to_string())?;
        seq.label = ntu_label(&stem);
        samples.push(seq);
    }
    let classes = samples.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1);
    Ok(Dataset {
        samples,
        topology: build_topology(&TopologySpec::Ntu25)?,
        class_names: (1..=classes).map(|a| format!("A{a:03}")).collect(),
    })
}

fn preprocess(mut cfg: CliConfig, a: PreprocessArgs) -> Result<()> {
    if let Some(s) = a.streams {
        cfg.streams = s;
    }
    cfg.data.recenter |= a.recenter;
    let mut ds = if a.input.join(tagcn::skeleton::MANIFEST_FILE).is_file() {
        dataset_read(&a.input)?
    } else {
        read_ntu_dir(&a.input)?
    };
    if cfg.data.recenter {
        for s in &mut ds.samples {
            *s = recenter(s, &ds.topology)?;
            s.quantize_f32();
        }
    }
    dataset_write(&ds, &a.out)?;
    for &stream in &cfg.streams {
        let derived = Dataset {
            samples: ds
                .samples
                .iter()
                .map(|s| {
                    let mut d = derive_stream(s, &ds.topology, stream)?;
                    d.quantize_f32();
                    Ok(d)
                })
                .collect::<tagcn::Result<_>>()?,
            topology: ds.topology.clone(),
            class_names: ds.class_names.clone(),
        };
        dataset_write(&derived, &a.out.join("streams").join(stream.name()))?;
    }
    cfg.data.train = Some(a.out.clone());
    cfg.write_effective(&a.out)?;
    eprintln!(
        "wrote {} samples and {} stream(s) to {}",
        ds.samples.len(),
        cfg.streams.len(),
        a.out.display()
    );
    Ok(())
}

fn require_topology(cfg: &CliConfig, ds: &Dataset) -> Result<()> {
    if cfg.model.topology != ds.topology.name {
        bail!(tagcn::Error::Config(format!(
            "model.topology is `{}` but the dataset uses `{}`",
            cfg.model.topology, ds.topology.name
        )));
    }
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn train(mut cfg: CliConfig, a: TrainArgs) -> Result<()> {
    if let Some(d) = a.data {
        cfg.data.train = Some(d);
    }
    if let Some(d) = a.eval_data {
        cfg.data.eval = Some(d);
    }
    if let Some(s) = a.stream {
        cfg.stream = s;
    }
    cfg.validate()?;
    let Some(train_dir) = cfg.data.train.clone() else {
        bail!(tagcn::Error::Config("no training data: pass --data or set data.train".into()));
    };
    let train_ds = dataset_read(&train_dir)?;
    require_topology(&cfg, &train_ds)?;
    let eval_ds = cfg.data.eval.as_deref().map(dataset_read).transpose()?;

    let (mut model, start_epoch) = if a.resume {
        let ckpt = checkpoint_load(&a.out.join(CHECKPOINT_PREFIX))?;
        if ckpt.model.config != cfg.model {
            bail!(tagcn::Error::Config(
                "the checkpoint was trained with a different model config".into()
            ));
        }
        if ckpt.meta.stream.is_some_and(|s| s != cfg.stream) {
            bail!(tagcn::Error::Config(format!(
                "the checkpoint was trained on a different stream than `{}`",
                cfg.stream
            )));
        }
        (ckpt.model, ckpt.meta.epoch)
    } else {
        (Model::new(cfg.model.clone(), train_ds.topology.clone(), cfg.train.seed)?, 0)
    };
    cfg.write_effective(&a.out)?;
    let opts = RunOptions {
        out_dir: Some(&a.out),
        start_epoch,
        eval: EvalOptions {
            batch_size: cfg.eval.batch_size,
            threads: cfg.threads,
        },
    };
    let mut failure = None;
    run_training(&mut model, &train_ds, eval_ds.as_ref(), cfg.stream, &cfg.train, opts, |r| {
        if let Err(e) = print_json(r) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    eprintln!("checkpoint: {}", a.out.join(CHECKPOINT_PREFIX).display());
    Ok(())
}

fn topk_summary(stream: &str, samples: usize, topk: &[(usize, f64)]) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    obj.insert("stream".into(), stream.into());
    obj.insert("samples".into(), samples.into());
    for (k, acc) in topk {
        obj.insert(format!("top{k}"), (*acc).into());
    }
    obj.into()
}

fn eval(mut cfg: CliConfig, a: EvalArgs) -> Result<()> {
    if let Some(k) = a.topk {
        cfg.eval.topk = k;
    }
    let ckpt = checkpoint_load(&a.ckpt)?;
    let stream = a.stream.or(ckpt.meta.stream).unwrap_or(cfg.stream);
    let Some(dir) = a.data.or(cfg.data.eval.clone()) else {
        bail!(tagcn::Error::Config("no evaluation data: pass --data or set data.eval".into()));
    };
    cfg.model = ckpt.model.config.clone();
    cfg.stream = stream;
    cfg.data.eval = Some(dir.clone());
    cfg.validate()?;
    let ds = dataset_read(&dir)?;
    let opts = EvalOptions {
        batch_size: cfg.eval.batch_size,
        threads: cfg.threads,
    };
    let result = evaluate_topk(&ckpt.model, &ds, stream, &cfg.eval.topk, opts)?;
    if let Some(path) = &a.scores_out {
        result.scores.save(path)?;
        if let Some(parent) = path.parent() {
            cfg.write_effective(if parent.as_os_str().is_empty() { Path::new(".") } else { parent })?;
        }
    }
    print_json(&topk_summary(stream.name(), ds.samples.len(), &result.topk))
}

fn fuse(cfg: &CliConfig, a: FuseArgs) -> Result<()> {
    let sets = a.scores.iter().map(|p| ScoreSet::load(p)).collect::<tagcn::Result<Vec<_>>>()?;
    let fused = ensemble_fuse(&sets, a.weights.as_deref())?;
    if let Some(path) = &a.out {
        fused.save(path)?;
    }
    let ks = a.topk.unwrap_or_else(|| cfg.eval.topk.clone());
    let topk = if fused.labels.is_empty() {
        Vec::new()
    } else {
        ks.iter().map(|&k| Ok((k, fused.accuracy(k)?))).collect::<tagcn::Result<_>>()?
    };
    print_json(&topk_summary(&fused.stream, fused.scores.len(), &topk))
}

fn gradcheck(cfg: &CliConfig, a: GradcheckArgs) -> Result<()> {
    let suite = grad_check_suite(cfg.train.seed, a.configs, GRADCHECK_EPS, a.tol)?;
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut failures = 0;
    for (i, (dims, report)) in suite.iter().enumerate() {
        for e in &report.entries {
            let component = e.name.split('/').next().unwrap_or(&e.name).to_string();
            match worst.iter_mut().find(|(c, _)| *c == component) {
                Some(w) => w.1 = w.1.max(e.max_rel_error),
                None => worst.push((component, e.max_rel_error)),
            }
        }
        for e in report.failures() {
            failures += 1;
            eprintln!("config {i} {dims:?}: {} relative error {:.3e}", e.name, e.max_rel_error);
        }
    }
    for (component, err) in &worst {
        println!("{component}\t{err:.3e}\t{}", if *err <= a.tol { "ok" } else { "FAIL" });
    }
    if failures > 0 {
        bail!(tagcn::Error::Argument(format!(
            "{failures} parameter tensor(s) exceed the tolerance {:e}",
            a.tol
        )));
    }
    Ok(())
}

fn export(mut cfg: CliConfig, a: ExportArgs) -> Result<()> {
    let ckpt = checkpoint_load(&a.ckpt)?;
    cfg.model = ckpt.model.config.clone();
    let files = match a.what {
        ExportWhat::Graphs => export_graphs(&ckpt.model, &a.out)?,
        ExportWhat::Attention => {
            let Some(sample) = a.sample else {
                bail!(tagcn::Error::Argument("--what attention needs --sample".into()));
            };
            let Some(dir) = a.data.or(cfg.data.eval.clone()).or(cfg.data.train.clone()) else {
                bail!(tagcn::Error::Argument("--what attention needs --data".into()));
            };
            let stream = a.stream.or(ckpt.meta.stream).unwrap_or(cfg.stream);
            cfg.stream = stream;
            cfg.data.eval = Some(dir.clone());
            let ds = dataset_read(&dir)?;
            export_attention(&ckpt.model, &ds, stream, &sample, &a.out)?
        }
    };
    cfg.write_effective(&a.out)?;
    eprintln!("wrote {} file(s) to {}", files.len(), a.out.display());
    Ok(())
}

fn params(cfg: &CliConfig) -> Result<()> {
    cfg.model.validate()?;
    let topology = build_topology(&TopologySpec::from_name(&cfg.model.topology)?)?;
    let model = Model::new(cfg.model.clone(), topology, cfg.train.seed)?;
    let count = count_parameters(&model.store);
    let width = count.modules.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max(6);
    for (module, n) in &count.modules {
        println!("{module:<width$}  {n:>10}");
    }
    println!("{:<width$}  {:>10}", "total", count.total);
    Ok(())
}
