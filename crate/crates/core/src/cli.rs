//! Command-line front end: `generate`, `split`, `train` and `report`.
//!
//! Experiment definitions live in TOML files; flags only name paths. Progress
//! goes to standard error, results go to files. Exit codes: 0 success,
//! 1 invalid invocation or configuration, 2 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RunManifest, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::harness::{run_sequence_with, task_data, Event, TrainConfig};
use crate::metrics::{export_report, load_report, report_csv};
use crate::ratt::MaskUsage;
use crate::splitter::{
    generate_synthetic, partition, split, vocab_stats, Dataset, PartitionConfig, Procedure, SplitResult, SyntheticSpec,
    TaskDef,
};

#[derive(Debug, Parser)]
#[command(name = "contcap", version, about = "Continual learning of LSTM caption decoders")]
struct Cli {
    /// Suppress progress output.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Worker threads for batch gradients and evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic captioning dataset.
    Generate {
        /// Synthetic dataset parameters (TOML); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into tasks and partition each task.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        /// Task definitions (TOML).
        #[arg(long)]
        tasks: PathBuf,
        /// Overrides the procedure of the task file.
        #[arg(long, value_enum)]
        procedure: Option<ProcedureArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a method over a task sequence into a run directory.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the score table of a run directory.
    Report {
        dir: PathBuf,
        /// Re-evaluate every checkpoint and check it against the stored report.
        #[arg(long)]
        reevaluate: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProcedureArg {
    Disjoint,
    Incremental,
}

impl From<ProcedureArg> for Procedure {
    fn from(p: ProcedureArg) -> Self {
        match p {
            ProcedureArg::Disjoint => Procedure::Disjoint,
            ProcedureArg::Incremental => Procedure::Incremental,
        }
    }
}

/// Task definitions for `split`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksFile {
    pub procedure: Option<Procedure>,
    #[serde(default)]
    pub partition: PartitionConfig,
    pub task: Vec<TaskDef>,
}

/// Where a run's images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset file, relative to the configuration file.
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

/// How a run's tasks are formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Partitioned split file, relative to the configuration file.
    pub manifest: Option<PathBuf>,
    pub procedure: Option<Procedure>,
    pub partition: Option<PartitionConfig>,
    #[serde(default)]
    pub task: Vec<TaskDef>,
}

/// Schema of `train --config`. Every seed of the run is the top-level one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: u64,
    /// Run directory, relative to the configuration file.
    pub output: Option<PathBuf>,
    pub data: DataSection,
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainConfig,
}

const DERIVED_SEEDS: [&[&str]; 3] = [&["train", "seed"], &["data", "synthetic", "seed"], &["split", "partition", "seed"]];

impl RunConfigFile {
    /// Parses and validates; the seed is propagated to every section.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for path in DERIVED_SEEDS {
            let mut node = Some(&raw);
            for key in &path[..path.len() - 1] {
                node = node.and_then(|t| t.get(*key)).and_then(toml::Value::as_table);
            }
            if node.is_some_and(|t| t.contains_key(path[path.len() - 1])) {
                return Err(Error::Config(format!(
                    "`{}` is not allowed: all seeds derive from the top-level `seed`",
                    path.join(".")
                )));
            }
        }
        let mut cfg: RunConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        if let Some(s) = cfg.data.synthetic.as_mut() {
            s.seed = cfg.seed;
        }
        if let Some(p) = cfg.split.partition.as_mut() {
            p.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.dataset, &self.data.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => s.validate()?,
            _ => return Err(Error::Config("[data] needs exactly one of `dataset` or `synthetic`".into())),
        }
        let inline = self.split.procedure.is_some() || self.split.partition.is_some() || !self.split.task.is_empty();
        match (&self.split.manifest, inline) {
            (Some(_), false) => {}
            (None, true) => {
                if self.split.procedure.is_none() || self.split.task.is_empty() {
                    return Err(Error::Config("an inline [split] needs `procedure` and at least one [[split.task]]".into()));
                }
                if let Some(p) = &self.split.partition {
                    p.validate()?;
                }
            }
            _ => return Err(Error::Config("[split] needs either `manifest` or inline task definitions".into())),
        }
        self.train.validate()
    }
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

fn config<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be >= 1");
            return 1;
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Generate { spec, out } => cmd_generate(spec.as_deref(), &out),
        Command::Split {
            dataset,
            tasks,
            procedure,
            out,
        } => cmd_split(&dataset, &tasks, procedure.map(Into::into), &out),
        Command::Train { config, out } => cmd_train(&config, out.as_deref(), cli.quiet),
        Command::Report { dir, reevaluate } => cmd_report(&dir, reevaluate),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_generate(spec: Option<&Path>, out: &Path) -> std::result::Result<(), Failure> {
    let spec: SyntheticSpec = match spec {
        Some(p) => config(parse_toml(p))?,
        None => SyntheticSpec::default(),
    };
    config(spec.validate())?;
    let data = runtime(generate_synthetic(&spec))?;
    runtime(data.save(out))?;
    eprintln!("wrote {} images to {}", data.images.len(), out.display());
    Ok(())
}

fn make_split(data: &Dataset, tasks: &[TaskDef], procedure: Procedure, part: &PartitionConfig) -> std::result::Result<SplitResult, Failure> {
    config(part.validate())?;
    // task definitions that contradict the dataset are configuration errors
    let s = config(split(data, tasks, procedure))?;
    runtime(partition(s, part))
}

fn cmd_split(dataset: &Path, tasks: &Path, procedure: Option<Procedure>, out: &Path) -> std::result::Result<(), Failure> {
    let file: TasksFile = config(parse_toml(tasks))?;
    let procedure = procedure
        .or(file.procedure)
        .ok_or_else(|| Failure::Config(Error::Config("no split procedure given".into())))?;
    let data = runtime(Dataset::load(dataset))?;
    let result = make_split(&data, &file.task, procedure, &file.partition)?;
    runtime(result.save(out))?;
    print!("{}", vocab_stats(&result).table());
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mask_usage_csv(usage: &[MaskUsage]) -> String {
    let mut out = String::from(
        "task,embed_used,embed_total,hidden_used,hidden_total,cumulative_embed_used,cumulative_hidden_used,vocab_words\n",
    );
    for u in usage {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            u.task,
            u.embed_used,
            u.embed_total,
            u.hidden_used,
            u.hidden_total,
            u.cumulative_embed_used,
            u.cumulative_hidden_used,
            u.vocab_words
        )
        .unwrap();
    }
    out
}

fn progress(event: &Event) {
    let mut err = std::io::stderr().lock();
    let _ = match event {
        Event::TaskStart {
            task,
            name,
            new_words,
            vocab_size,
        } => writeln!(err, "task {task} ({name}): {new_words} new words, vocabulary {vocab_size}"),
        Event::Epoch { task, record } => writeln!(
            err,
            "  task {task} epoch {:>3}: train loss {:.4}, valid BLEU-4 {:.4}",
            record.epoch, record.train_loss, record.valid_bleu
        ),
        Event::Evaluated { session, task, bleu } => writeln!(err, "  after task {session}: task {task} test BLEU-4 {bleu:.4}"),
    };
}

fn cmd_train(config_path: &Path, out: Option<&Path>, quiet: bool) -> std::result::Result<(), Failure> {
    let text = config(read_text(config_path))?;
    let cfg = config(RunConfigFile::parse(&text))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let dir = match (out, &cfg.output) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => resolve(base, o),
        (None, None) => return Err(Failure::Config(Error::Config("no output directory: set `output` or pass --out".into()))),
    };

    let data = match (&cfg.data.dataset, &cfg.data.synthetic) {
        (Some(p), _) => runtime(Dataset::load(&resolve(base, p)))?,
        (None, Some(spec)) => runtime(generate_synthetic(spec))?,
        (None, None) => unreachable!("validated"),
    };
    let split_result = match &cfg.split.manifest {
        Some(p) => runtime(SplitResult::load(&resolve(base, p)))?,
        None => {
            let part = cfg.split.partition.clone().unwrap_or(PartitionConfig {
                seed: cfg.seed,
                ..PartitionConfig::default()
            });
            make_split(&data, &cfg.split.task, cfg.split.procedure.expect("validated"), &part)?
        }
    };
    let tasks = config(task_data(&data, &split_result))?;

    let ck_dir = dir.join("checkpoints");
    runtime(std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e)))?;
    runtime(write_file(&dir.join("config.toml"), &text))?;
    runtime(data.save(&dir.join("dataset.json")))?;
    runtime(split_result.save(&dir.join("split.json")))?;

    let mut on_event = |e: &Event| {
        if !quiet {
            progress(e)
        }
    };
    let outcome = runtime(run_sequence_with(&tasks, &cfg.train, &mut on_event))?;

    let mut checkpoints = Vec::with_capacity(outcome.checkpoints.len());
    for (t, ck) in outcome.checkpoints.iter().enumerate() {
        let rel = format!("checkpoints/task_{t}.json");
        runtime(ck.save(&dir.join(&rel)))?;
        checkpoints.push(rel);
    }
    let files = runtime(export_report(&outcome.report, &dir))?;
    let mask_usage_csv_path = if outcome.report.mask_usage.is_empty() {
        None
    } else {
        runtime(write_file(&dir.join("masks.csv"), &mask_usage_csv(&outcome.report.mask_usage)))?;
        Some("masks.csv".to_string())
    };
    let name = |p: &Path| p.file_name().expect("report file").to_string_lossy().into_owned();
    let manifest = RunManifest {
        version: CHECKPOINT_VERSION,
        method: cfg.train.method,
        seed: cfg.seed,
        tasks: outcome.report.task_names.clone(),
        config: "config.toml".into(),
        dataset: "dataset.json".into(),
        split: "split.json".into(),
        checkpoints,
        report_csv: name(&files.csv),
        report_json: name(&files.json),
        mask_usage_csv: mask_usage_csv_path,
    };
    runtime(manifest.save(&dir))?;
    if !quiet {
        eprintln!("run written to {}", dir.display());
    }
    Ok(())
}

/// Aligned score table with full-precision cells.
pub fn report_table(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = width[c]) } else { format!("{s:>w$}", w = width[c]) })
            .collect();
        out += cells.join("  ").trim_end();
        out.push('\n');
    }
    out
}

fn cmd_report(dir: &Path, reevaluate: bool) -> std::result::Result<(), Failure> {
    let manifest = runtime(RunManifest::load(dir))?;
    let report = runtime(load_report(&dir.join(&manifest.report_json)))?;
    print!("{}", report_table(&report_csv(&report)));
    match report.mean_forgetting() {
        Some(f) => println!("mean forgetting: {f}"),
        None => println!("mean forgetting: N/A"),
    }
    println!("heatmap csv: {}", dir.join(&manifest.report_csv).display());
    println!("report json: {}", dir.join(&manifest.report_json).display());
    if let Some(m) = &manifest.mask_usage_csv {
        println!("mask usage csv: {}", dir.join(m).display());
    }
    if reevaluate {
        let data = runtime(Dataset::load(&dir.join(&manifest.dataset)))?;
        let split_result = runtime(SplitResult::load(&dir.join(&manifest.split)))?;
        let tasks = runtime(task_data(&data, &split_result))?;
        for (i, rel) in manifest.checkpoints.iter().enumerate() {
            let ck = runtime(Checkpoint::load(&dir.join(rel)))?;
            for (j, task) in tasks.iter().enumerate().take(i + 1) {
                let score = runtime(ck.evaluate(j, &task.test))?;
                let stored = report.bleu.get(i).and_then(|r| r.get(j).copied().flatten());
                if stored.map(f64::to_bits) != Some(score.to_bits()) {
                    return Err(Failure::Runtime(Error::format(
                        dir.join(rel),
                        format!("re-evaluated task {j} scores {score}, report has {stored:?}"),
                    )));
                }
            }
        }
        println!("re-evaluation matches the report");
    }
    Ok(())
}
