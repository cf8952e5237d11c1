//! Command-line entry point. `run` parses arguments, dispatches to a
//! subcommand and maps failures to exit codes: 1 for invalid input or
//! configuration, 2 for filesystem errors.

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{
    generate_synthetic, load_dataset, make_splits, write_dataset, Dataset, SplitFile, SplitIndices, SynthSpec,
};
use crate::error::{Error, Result};
use crate::experiment::{build_report, write_per_seed_csv, Comparison, GridSpace, Harness, DEFAULT_ALPHA, DEFAULT_SEEDS};
use crate::metrics::AlignmentSummary;
use crate::nn::{predict, save_checkpoint};
use crate::targets::{curate_stratified, entropy_bin, soft_target, CurationSpec};
use crate::trainer::{train, EpochRecord, LabelMode, Scheduler, TrainConfig, TrainResult};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const TRAIN_RESULT_FILE: &str = "train_result.json";
pub const SWEEPS_FILE: &str = "comparison.json";

const GRID_KEYS: [&str; 5] = ["learning_rates", "batch_sizes", "epoch_caps", "weight_decays", "schedulers"];

#[derive(Parser, Debug)]
#[command(name = "epialign", version, about = "Soft- vs hard-label training on frozen embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with controllable annotator disagreement.
    Synth(SynthArgs),
    /// Subsample a dataset uniformly across annotation-entropy bins.
    Curate(CurateArgs),
    /// Write a stratified train/val/test split file.
    Split(SplitArgs),
    /// Train one classifier head.
    Train(TrainArgs),
    /// Grid-search hyperparameters for one label mode.
    Gridsearch(GridArgs),
    /// Full soft-vs-hard comparison: grid search per mode, then a seed sweep.
    Compare(CompareArgs),
    /// Turn train or compare outputs into histogram and curve CSVs.
    ExportPlots(ExportArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON file with SynthSpec fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    annotations: Option<u32>,
    #[arg(long)]
    ambiguity: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 200)]
    cap: usize,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, value_parser = parse_ratios)]
    ratios: Option<[f64; 3]>,
}

/// Flags that override TrainConfig fields from `--config`.
#[derive(Args, Debug, Default)]
struct TrainOverrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    label_mode: Option<LabelMode>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    scheduler: Option<Scheduler>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    early_stopping: Option<bool>,
    #[arg(long, value_parser = parse_ratios)]
    split_ratios: Option<[f64; 3]>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Split file; drawn from `split_ratios` and the seed when absent.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    cfg: TrainOverrides,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    cfg: TrainOverrides,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// One or more datasets; each gets its own rows in the report.
    #[arg(long, required = true, num_args = 1..)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[command(flatten)]
    cfg: TrainOverrides,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Output directories of `train` or `compare` runs.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    run_manifest: PathBuf,
}

fn parse_ratios(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|v| format!("expected three ratios, got {}", v.len()))
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub duration_secs: f64,
}

/// `TrainResult` without the parameters, which go to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: String,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub test_ids: Vec<String>,
    pub test: Option<AlignmentSummary>,
}

impl TrainReport {
    pub fn new(dataset: &Dataset, result: &TrainResult) -> Self {
        Self {
            dataset: dataset.name().to_string(),
            config: result.config.clone(),
            best_epoch: result.best_epoch,
            best_val_loss: result.best_val_loss,
            stopped_epoch: result.stopped_epoch,
            epochs: result.epochs.clone(),
            test_ids: result.test_indices.iter().map(|&i| dataset.samples()[i].id.clone()).collect(),
            test: result.test.clone(),
        }
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: p.clone(), source: e })?;
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(BufWriter<fs::File>) -> Result<()>) -> Result<()> {
        let p = self.path(name);
        let f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        write(BufWriter::new(f))
    }

    fn finish(mut self, command: &str, argv: Vec<String>, config: Value, inputs: Vec<PathBuf>, start: Instant) -> Result<()> {
        let manifest_path = self.dir.join(RUN_MANIFEST_FILE);
        let manifest = RunManifest {
            command: command.to_string(),
            argv,
            config,
            inputs,
            outputs: std::mem::take(&mut self.files),
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: start.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("run manifest always serializes");
        fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configuration types always serialize")
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_config(path: Option<&Path>) -> Result<Map<String, Value>> {
    match path {
        None => Ok(Map::new()),
        Some(p) => match read_json::<Value>(p)? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::invalid(format!("{}: config must be a JSON object", p.display()))),
        },
    }
}

/// Deserializes `base` with the keys of `patch` replaced.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Map<String, Value>, origin: &str) -> Result<T> {
    let Value::Object(mut merged) = to_value(base) else {
        unreachable!("configuration types serialize to objects")
    };
    merged.extend(patch);
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::invalid(format!("{origin}: {e}")))
}

fn set<T: Serialize>(patch: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        patch.insert(key.to_string(), to_value(&v));
    }
}

impl TrainOverrides {
    /// Config file keys first, then flags. Keys in `extra` are split off and
    /// returned instead of being treated as TrainConfig fields.
    fn resolve(&self, extra: &[&str]) -> Result<(TrainConfig, Map<String, Value>)> {
        let mut file = read_config(self.config.as_deref())?;
        let mut rest = Map::new();
        for k in extra {
            if let Some(v) = file.remove(*k) {
                rest.insert(k.to_string(), v);
            }
        }
        set(&mut file, "seed", self.seed);
        set(&mut file, "label_mode", self.label_mode);
        set(&mut file, "learning_rate", self.learning_rate);
        set(&mut file, "batch_size", self.batch_size);
        set(&mut file, "max_epochs", self.max_epochs);
        set(&mut file, "weight_decay", self.weight_decay);
        set(&mut file, "scheduler", self.scheduler);
        set(&mut file, "hidden_width", self.hidden_width);
        set(&mut file, "dropout_rate", self.dropout);
        set(&mut file, "early_stopping", self.early_stopping);
        set(&mut file, "split_ratios", self.split_ratios);
        let cfg: TrainConfig = overlay(&TrainConfig::default(), file, "train config")?;
        cfg.validate()?;
        Ok((cfg, rest))
    }
}

fn resolve_splits(ds: &Dataset, split: Option<&Path>, cfg: &TrainConfig) -> Result<SplitIndices> {
    match split {
        Some(p) => read_json::<SplitFile>(p)?.resolve(ds),
        None => make_splits(ds, cfg.split_ratios, cfg.seed),
    }
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    match command {
        Command::Synth(a) => cmd_synth(a, argv, start),
        Command::Curate(a) => cmd_curate(a, argv, start),
        Command::Split(a) => cmd_split(a, argv, start),
        Command::Train(a) => cmd_train(a, argv, start),
        Command::Gridsearch(a) => cmd_gridsearch(a, argv, start),
        Command::Compare(a) => cmd_compare(a, argv, start),
        Command::ExportPlots(a) => cmd_export(a, argv, start),
        Command::Replay(a) => {
            let m: RunManifest = read_json(&a.run_manifest)?;
            let cli = Cli::try_parse_from(std::iter::once("epialign".to_string()).chain(m.argv.iter().cloned()))
                .map_err(|e| Error::invalid(format!("recorded arguments no longer parse: {e}")))?;
            if matches!(cli.command, Command::Replay(_)) {
                return Err(Error::invalid("a replay manifest cannot point at another replay"));
            }
            dispatch(cli.command, m.argv)
        }
    }
}

fn cmd_synth(a: SynthArgs, argv: Vec<String>, start: Instant) -> Result<()> {
    let mut patch = read_config(a.config.as_deref())?;
    set(&mut patch, "seed", a.seed);
    set(&mut patch, "num_samples", a.samples);
    set(&mut patch, "num_classes", a.classes);
    set(&mut patch, "embedding_dim", a.dim);
    set(&mut patch, "annotations_per_sample", a.annotations);
    set(&mut patch, "ambiguity", a.ambiguity);
    set(&mut patch, "noise_scale", a.noise);
    let spec: SynthSpec = overlay(&SynthSpec::default(), patch, "synth config")?;
    spec.validate()?;
    let ds = generate_synthetic(&spec)?;
    let mut out = Outputs::new(&a.out_dir)?;
    let manifest = write_dataset(&ds, &a.out_dir)?;
    out.files.extend([manifest, a.out_dir.join("embeddings.bin"), a.out_dir.join("annotations.jsonl")]);
    out.finish("synth", argv, to_value(&spec), a.config.into_iter().collect(), start)
}

fn cmd_curate(a: CurateArgs, argv: Vec<String>, start: Instant) -> Result<()> {
    let ds = load_dataset(&a.manifest)?;
    let spec = CurationSpec {
        num_bins: a.bins,
        cap_per_bin: a.cap,
        seed: a.seed,
    };
    let cur = curate_stratified(&ds, &spec)?;
    let mut out = Outputs::new(&a.out_dir)?;
    let manifest = write_dataset(&cur.dataset, &a.out_dir)?;
    out.files.extend([manifest, a.out_dir.join("embeddings.bin"), a.out_dir.join("annotations.jsonl")]);
    out.csv("curation_report.csv", |w| cur.write_report_csv(w))?;
    out.finish("curate", argv, to_value(&spec), vec![a.manifest], start)
}

fn cmd_split(a: SplitArgs, argv: Vec<String>, start: Instant) -> Result<()> {
    let ds = load_dataset(&a.manifest)?;
    let ratios = a.ratios.unwrap_or(crate::data::DEFAULT_SPLIT_RATIOS);
    let splits = make_splits(&ds, ratios, a.seed)?;
    let mut out = Outputs::new(&a.out_dir)?;
    out.json("splits.json", &splits.to_file(&ds))?;
    let config = serde_json::json!({ "ratios": ratios, "seed": a.seed });
    out.finish("split", argv, config, vec![a.manifest], start)
}

fn cmd_train(a: TrainArgs, argv: Vec<String>, start: Instant) -> Result<()> {
    let (cfg, _) = a.cfg.resolve(&[])?;
    let ds = load_dataset(&a.manifest)?;
    let splits = resolve_splits(&ds, a.split.as_deref(), &cfg)?;
    let result = train(&ds, &splits, &cfg)?;

    let mut out = Outputs::new(&a.out_dir)?;
    out.json(TRAIN_RESULT_FILE, &TrainReport::new(&ds, &result))?;
    out.csv("epochs.csv", |w| result.write_epochs_csv(w))?;
    out.csv("test_samples.csv", |w| write_sample_csv(&ds, &result, w))?;
    out.csv("test_distributions.csv", |w| write_distributions_csv(&ds, &result, w))?;
    let bin = out.path("checkpoint.bin");
    let meta = out.path("checkpoint.json");
    save_checkpoint(&result.best_params, &bin, &meta)?;

    let mut inputs = vec![a.manifest];
    inputs.extend(a.split);
    inputs.extend(a.cfg.config);
    out.finish("train", argv, to_value(&cfg), inputs, start)
}

fn write_sample_csv<W: std::io::Write>(ds: &Dataset, r: &TrainResult, w: W) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        id: &'a str,
        annot_entropy: f64,
        pred_entropy: f64,
        kl: f64,
        correct: bool,
    }
    let mut out = csv::Writer::from_writer(w);
    if let Some(t) = &r.test {
        for (k, &i) in r.test_indices.iter().enumerate() {
            out.serialize(Row {
                id: &ds.samples()[i].id,
                annot_entropy: t.per_sample_annot_entropy[k],
                pred_entropy: t.per_sample_pred_entropy[k],
                kl: t.per_sample_kl[k],
                correct: t.per_sample_correct[k],
            })?;
        }
    }
    out.flush().map_err(|e| Error::io("<sample csv>", e))?;
    Ok(())
}

fn write_distributions_csv<W: std::io::Write>(ds: &Dataset, r: &TrainResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend(ds.class_names().iter().map(|c| format!("annot_{c}")));
    header.extend(ds.class_names().iter().map(|c| format!("pred_{c}")));
    out.write_record(&header)?;
    for &i in &r.test_indices {
        let s = &ds.samples()[i];
        let x: Vec<f64> = s.embedding.iter().map(|&v| f64::from(v)).collect();
        let q = predict(&r.best_params, &x)?;
        let p = soft_target(&s.counts)?;
        let mut rec = vec![s.id.clone()];
        rec.extend(p.probs().iter().chain(q.probs()).map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<distribution csv>", e))?;
    Ok(())
}

fn cmd_gridsearch(a: GridArgs, argv: Vec<String>, start: Instant) -> Result<()> {
    let (cfg, rest) = a.cfg.resolve(&GRID_KEYS)?;
    let space: GridSpace = overlay(&GridSpace::default(), rest, "grid space")?;
    space.validate()?;
    let ds = load_dataset(&a.manifest)?;
    let splits = resolve_splits(&ds, a.split.as_deref(), &cfg)?;
    let harness = Harness::new(&ds, splits, cfg.clone())?.with_jobs(a.jobs);
    let result = harness.grid_search(&space, cfg.label_mode)?;

    let mut out = Outputs::new(&a.out_dir)?;
    out.csv("grid_ledger.csv", |w| result.write_ledger_csv(w))?;
    out.json("grid_result.json", &result)?;
    out.json("best_config.json", result.best_config())?;
    let config = serde_json::json!({ "base": cfg, "space": space, "jobs": a.jobs });
    let mut inputs = vec![a.manifest];
    inputs.extend(a.split);
    inputs.extend(a.cfg.config);
    out.finish("gridsearch", argv, config, inputs, start)
}

fn cmd_compare(a: CompareArgs, argv: Vec<String>, start: Instant) -> Result<()> {
    let (cfg, mut rest) = a.cfg.resolve(&[&GRID_KEYS[..], &["n_seeds"]].concat())?;
    let file_seeds = rest.remove("n_seeds").map(serde_json::from_value::<usize>).transpose();
    let file_seeds = file_seeds.map_err(|e| Error::invalid(format!("n_seeds: {e}")))?;
    let n_seeds = a.n_seeds.or(file_seeds).unwrap_or(DEFAULT_SEEDS);
    let space: GridSpace = overlay(&GridSpace::default(), rest, "grid space")?;
    space.validate()?;

    let mut comparisons: Vec<Comparison> = Vec::with_capacity(a.manifest.len());
    for m in &a.manifest {
        let ds = load_dataset(m)?;
        let splits = make_splits(&ds, cfg.split_ratios, cfg.seed)?;
        let harness = Harness::new(&ds, splits, cfg.clone())?.with_jobs(a.jobs);
        comparisons.push(harness.compare(&space, n_seeds, cfg.seed)?);
    }
    let sweeps: Vec<_> = comparisons.iter().map(|c| c.sweep.clone()).collect();
    let report = build_report(&sweeps, DEFAULT_ALPHA)?;

    let mut out = Outputs::new(&a.out_dir)?;
    out.json("report.json", &report)?;
    out.text("report.txt", &report.render_text())?;
    out.csv("per_seed.csv", |w| write_per_seed_csv(&sweeps, w))?;
    for (k, c) in comparisons.iter().enumerate() {
        out.csv(&format!("grid_ledger_{k}_soft.csv"), |w| c.grid_soft.write_ledger_csv(w))?;
        out.csv(&format!("grid_ledger_{k}_hard.csv"), |w| c.grid_hard.write_ledger_csv(w))?;
    }
    out.json(SWEEPS_FILE, &comparisons)?;
    let config = serde_json::json!({ "base": cfg, "space": space, "n_seeds": n_seeds, "jobs": a.jobs });
    let mut inputs = a.manifest.clone();
    inputs.extend(a.cfg.config);
    out.finish("compare", argv, config, inputs, start)
}

fn cmd_export(a: ExportArgs, argv: Vec<String>, start: Instant) -> Result<()> {
    if a.bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    #[derive(Serialize)]
    struct HistRow<'a> {
        run: &'a str,
        label_mode: LabelMode,
        source: &'a str,
        bin: usize,
        lower: f64,
        upper: f64,
        count: usize,
    }
    #[derive(Serialize)]
    struct CurveRow<'a> {
        run: &'a str,
        dataset: &'a str,
        label_mode: LabelMode,
        seed: u64,
        epoch: usize,
        train_loss: Option<f64>,
        val_loss: f64,
        learning_rate: Option<f64>,
    }

    let mut hist = Vec::new();
    let mut curves = Vec::new();
    let mut inputs = Vec::new();
    for dir in &a.input {
        let run = dir.display().to_string();
        let train_path = dir.join(TRAIN_RESULT_FILE);
        let sweep_path = dir.join(SWEEPS_FILE);
        if train_path.is_file() {
            let r: TrainReport = read_json(&train_path)?;
            let mode = r.config.label_mode;
            if let Some(t) = &r.test {
                for (source, values) in [("annotator", &t.per_sample_annot_entropy), ("model", &t.per_sample_pred_entropy)] {
                    let mut counts = vec![0usize; a.bins];
                    for &h in values {
                        counts[entropy_bin(h, a.bins)] += 1;
                    }
                    for (bin, &count) in counts.iter().enumerate() {
                        hist.push((run.clone(), mode, source, bin, count));
                    }
                }
            }
            for e in &r.epochs {
                curves.push((run.clone(), r.dataset.clone(), mode, r.config.seed, e.epoch, Some(e.train.loss), e.val.loss, Some(e.learning_rate)));
            }
            inputs.push(train_path);
        } else if sweep_path.is_file() {
            let comps: Vec<Comparison> = read_json(&sweep_path)?;
            for c in &comps {
                for (mode, runs) in [(LabelMode::Soft, &c.sweep.soft), (LabelMode::Hard, &c.sweep.hard)] {
                    for (seed, curve) in runs.seeds.iter().zip(&runs.val_loss_curves) {
                        for (k, &v) in curve.iter().enumerate() {
                            curves.push((run.clone(), c.sweep.dataset.clone(), mode, *seed, k + 1, None, v, None));
                        }
                    }
                }
            }
            inputs.push(sweep_path);
        } else {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, format!("neither {TRAIN_RESULT_FILE} nor {SWEEPS_FILE} found")),
            ));
        }
    }

    let mut out = Outputs::new(&a.out_dir)?;
    let nb = a.bins as f64;
    out.csv("entropy_histogram.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        for (run, label_mode, source, bin, count) in &hist {
            csv.serialize(HistRow {
                run,
                label_mode: *label_mode,
                source,
                bin: *bin,
                lower: *bin as f64 / nb,
                upper: (*bin + 1) as f64 / nb,
                count: *count,
            })?;
        }
        csv.flush().map_err(|e| Error::io("entropy_histogram.csv", e))
    })?;
    out.csv("validation_curve.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        for (run, dataset, label_mode, seed, epoch, train_loss, val_loss, learning_rate) in &curves {
            csv.serialize(CurveRow {
                run,
                dataset,
                label_mode: *label_mode,
                seed: *seed,
                epoch: *epoch,
                train_loss: *train_loss,
                val_loss: *val_loss,
                learning_rate: *learning_rate,
            })?;
        }
        csv.flush().map_err(|e| Error::io("validation_curve.csv", e))
    })?;
    let config = serde_json::json!({ "bins": a.bins });
    out.finish("export-plots", argv, config, inputs, start)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratios("0.6, 0.2,0.2").unwrap(), [0.6, 0.2, 0.2]);
        assert!(parse_ratios("0.5,0.5").is_err());
        assert!(parse_ratios("a,b,c").is_err());
    }

    #[test]
    fn overlay_rejects_unknown_keys_and_keeps_defaults() {
        let mut m = Map::new();
        m.insert("batch_size".into(), Value::from(8));
        let cfg: TrainConfig = overlay(&TrainConfig::default(), m, "t").unwrap();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.max_epochs, 20);
        let mut bad = Map::new();
        bad.insert("batchsize".into(), Value::from(8));
        assert!(overlay(&TrainConfig::default(), bad, "t").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        fs::write(&p, r#"{"learning_rate": 0.01, "batch_size": 8, "learning_rates": [0.1]}"#).unwrap();
        let o = TrainOverrides {
            config: Some(p),
            batch_size: Some(16),
            ..TrainOverrides::default()
        };
        let (cfg, rest) = o.resolve(&GRID_KEYS).unwrap();
        assert_eq!((cfg.learning_rate, cfg.batch_size), (0.01, 16));
        assert_eq!(rest.len(), 1);
        assert!(o.resolve(&[]).is_err());
    }
}
