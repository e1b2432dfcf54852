//! Command-line workflows.
//!
//! Exit codes: 0 on success, 1 when the operation fails (including any
//! record that could not be converted or checked), 2 on usage errors.
//! Commands that take `--out-dir` write only there and leave a
//! [`Manifest`] next to their artifacts. `--config` reads a JSON
//! [`RunConfig`]; explicit flags override its values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser as ClapParser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use x2parser_core::corpus::{generate_synthetic, Dataset, Example, GeneratorConfig, Split, Vocabs};
use x2parser_core::decomposer::{decompose, reconstruct};
use x2parser_core::harness::{
    evaluate_predictions, run_few_shot_protocol, train, AnyParser, EvalReport, FewShotConfig, ModelConfig,
    ParserLearner, TrainConfig,
};
use x2parser_core::model::{ModelFamily, Parser};
use x2parser_core::neural::Module;
use x2parser_core::treebank::serialize;

use crate::checkpoint;
use crate::io::{self, ColumnMap, FrameRecord, RecordError};
use crate::latency::{latency_benchmark, match_parameters, param_count, LatencyConfig};
use crate::manifest::{Manifest, MANIFEST_FILE};

/// Configuration file contents. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub finetune: Option<TrainConfig>,
    pub generator: Option<GeneratorConfig>,
    pub latency: Option<LatencyConfig>,
    pub fewshot: Option<FewShotConfig>,
    pub columns: Option<ColumnMap>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }
}

#[derive(Debug, ClapParser)]
#[command(name = "x2parser", version, about = "Decomposed non-autoregressive semantic parsing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    /// JSONL trees to a frames file.
    Tree2flat,
    /// Frames file to JSONL trees.
    Flat2tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Jsonl,
    Frames,
}

fn family_parser() -> impl TypedValueParser<Value = ModelFamily> {
    PossibleValuesParser::new(ModelFamily::ALL.map(ModelFamily::name))
        .map(|s| s.parse::<ModelFamily>().expect("restricted to known names"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert between JSONL trees and flattened frames.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long)]
        output: PathBuf,
        /// Per-record error report; defaults to `<output>.errors.jsonl`.
        #[arg(long)]
        errors: Option<PathBuf>,
    },
    /// Check that flattening and reconstruction are inverse on a corpus.
    RoundtripCheck {
        #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
        input: Option<PathBuf>,
        /// Defaults to `frames` for `.frames` files and `jsonl` otherwise.
        #[arg(long, value_enum)]
        format: Option<InputFormat>,
        /// Generator configuration (JSON) to check instead of a file.
        #[arg(long)]
        generate: Option<PathBuf>,
    },
    /// Generate a synthetic corpus.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        domains: Option<Vec<String>>,
        #[arg(long)]
        examples_per_domain: Option<usize>,
        /// Also write train.jsonl and test.jsonl, holding out every n-th
        /// example (in id order) for testing.
        #[arg(long)]
        test_every: Option<usize>,
    },
    /// Read an MTOP-style TSV file into JSONL.
    ImportTsv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a model from scratch. `--epochs 0` writes the initial model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long, value_parser = family_parser(), default_value = "x2parser")]
        family: ModelFamily,
        #[arg(long)]
        train: PathBuf,
        /// Evaluation set for per-epoch EM and best-epoch selection.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Continue training a checkpoint on new data.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Score a checkpoint and dump its predictions.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write reconstructed trees.
        #[arg(long)]
        trees: bool,
    },
    /// Time freshly initialized models per output-length bucket.
    BenchLatency {
        #[command(flatten)]
        common: Common,
        /// Corpus to draw examples from; generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = family_parser(), value_delimiter = ',')]
        families: Option<Vec<ModelFamily>>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Keep each family's own size instead of matching the
        /// sequence-to-sequence parameter count.
        #[arg(long)]
        no_match_params: bool,
    },
    /// Source-domain training, target fine-tuning and testing per fraction.
    Fewshot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_parser = family_parser(), value_delimiter = ',')]
        families: Option<Vec<ModelFamily>>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        pretrain_epochs: Option<usize>,
        #[arg(long)]
        finetune_epochs: Option<usize>,
    },
    /// Rerun the command recorded in a manifest into a new directory.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct Training {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl Training {
    fn overlay(&self, mut config: TrainConfig) -> TrainConfig {
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Some(b) = self.batch_size {
            config.batch_size = b;
        }
        if let Some(lr) = self.lr {
            config.learning_rate = lr;
        }
        if self.patience.is_some() {
            config.patience = self.patience;
        }
        config
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, recorded) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// `Ok(false)` means the command ran but found failing records.
fn execute(command: Command, args: Vec<String>) -> Result<bool> {
    match command {
        Command::Convert { input, direction, output, errors } => convert(&input, direction, &output, errors),
        Command::RoundtripCheck { input, format, generate } => roundtrip_check(input, format, generate),
        Command::GenerateData { common, domains, examples_per_domain, test_every } => {
            generate_data(&common, args, domains, examples_per_domain, test_every)
        }
        Command::ImportTsv { common, input } => import_tsv(&common, args, &input),
        Command::Train { common, training, family, train, eval } => {
            cmd_train(&common, args, &training, Some(family), None, &train, eval.as_deref())
        }
        Command::Finetune { common, training, checkpoint, train, eval } => {
            cmd_train(&common, args, &training, None, Some(&checkpoint), &train, eval.as_deref())
        }
        Command::Eval { common, checkpoint, data, trees } => cmd_eval(&common, args, &checkpoint, &data, trees),
        Command::BenchLatency { common, data, families, samples, repetitions, warmup, no_match_params } => {
            bench_latency(&common, args, data.as_deref(), families, samples, repetitions, warmup, !no_match_params)
        }
        Command::Fewshot { common, data, target, families, fractions, seeds, pretrain_epochs, finetune_epochs } => {
            fewshot(&common, args, &data, &target, families, fractions, seeds, pretrain_epochs, finetune_epochs)
        }
        Command::Replay { manifest, out_dir } => {
            let m = Manifest::read(&manifest)?;
            let out = out_dir.to_string_lossy().into_owned();
            let args = m.args_with_out_dir(&out);
            let code = run(std::iter::once("x2parser".to_string()).chain(args));
            if code == 2 {
                bail!("the manifest's arguments are not a valid command line");
            }
            Ok(code == 0)
        }
    }
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(dir: &Path, name: &str, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(name.into());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, outputs: &mut Vec<String>) -> Result<()> {
    write_text(dir, name, &(serde_json::to_string_pretty(value)? + "\n"), outputs)
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Ok(io::read_jsonl(path, true)?.records)
}

fn write_errors(path: &Path, errors: &[RecordError]) -> Result<()> {
    let mut w = io::create(path)?;
    for e in errors {
        writeln!(w, "{}", serde_json::to_string(e)?)?;
    }
    w.flush()?;
    Ok(())
}

fn convert(input: &Path, direction: Direction, output: &Path, errors: Option<PathBuf>) -> Result<bool> {
    let sidecar = errors.unwrap_or_else(|| {
        let mut name = output.as_os_str().to_owned();
        name.push(".errors.jsonl");
        PathBuf::from(name)
    });
    let failures = match direction {
        Direction::Tree2flat => {
            let report = io::read_jsonl(input, false)?;
            let records: Vec<FrameRecord> = report.records.iter().map(FrameRecord::from_example).collect();
            io::write_frames(output, &records)?;
            report.errors
        }
        Direction::Flat2tree => {
            let report = io::read_frames(input)?;
            let mut errors = report.errors;
            let mut examples = Vec::new();
            for r in report.records {
                let built = reconstruct(&r.frame, &r.tokens)
                    .map_err(|e| e.to_string())
                    .and_then(|tree| Example::new(r.id.clone(), r.locale, r.domain, tree).map_err(|e| e.to_string()));
                match built {
                    Ok(e) => examples.push(e.with_split(r.split)),
                    Err(message) => errors.push(RecordError { line: 0, id: Some(r.id), message }),
                }
            }
            io::write_jsonl(output, &Dataset::new(examples))?;
            errors
        }
    };
    write_errors(&sidecar, &failures)?;
    for e in &failures {
        eprintln!("{e}");
    }
    Ok(failures.is_empty())
}

fn roundtrip_check(input: Option<PathBuf>, format: Option<InputFormat>, generate: Option<PathBuf>) -> Result<bool> {
    let mut failed: Vec<String> = Vec::new();
    let mut passed = 0usize;
    let mut check = |example: &Example| {
        let ok = decompose(example.tree())
            .and_then(|frame| reconstruct(&frame, &example.tokens()))
            .is_ok_and(|back| &back == example.tree());
        if ok {
            passed += 1;
        } else {
            failed.push(example.id.clone());
        }
    };
    if let Some(path) = generate {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let config: GeneratorConfig = serde_json::from_str(&text)?;
        generate_synthetic(&config)?.iter().for_each(&mut check);
    } else if let Some(path) = input {
        let format = format.unwrap_or(if path.extension().is_some_and(|e| e == "frames") {
            InputFormat::Frames
        } else {
            InputFormat::Jsonl
        });
        match format {
            InputFormat::Jsonl => {
                let report = io::read_jsonl(&path, false)?;
                report.records.iter().for_each(&mut check);
                failed.extend(report.errors.into_iter().map(|e| e.id.unwrap_or_else(|| format!("line {}", e.line))));
            }
            InputFormat::Frames => {
                let report = io::read_frames(&path)?;
                for r in report.records {
                    let ok = reconstruct(&r.frame, &r.tokens)
                        .and_then(|tree| decompose(&tree))
                        .is_ok_and(|frame| frame == r.frame);
                    if ok {
                        passed += 1;
                    } else {
                        failed.push(r.id);
                    }
                }
                failed.extend(report.errors.into_iter().map(|e| e.id.unwrap_or_else(|| format!("line {}", e.line))));
            }
        }
    }
    println!("passed {passed} failed {}", failed.len());
    for id in &failed {
        println!("FAILED {id}");
    }
    Ok(failed.is_empty())
}

fn generate_data(
    common: &Common,
    args: Vec<String>,
    domains: Option<Vec<String>>,
    per_domain: Option<usize>,
    test_every: Option<usize>,
) -> Result<bool> {
    let run = RunConfig::load(common.config.as_deref())?;
    let mut config = run.generator.unwrap_or_default();
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(d) = domains {
        config.domains = d;
    }
    if let Some(n) = per_domain {
        config.examples_per_domain = n;
    }
    if test_every == Some(0) {
        bail!("--test-every must be positive");
    }
    let data = generate_synthetic(&config)?;
    let dir = &common.out_dir;
    prepare(dir)?;
    let mut manifest = Manifest::new(
        "generate-data",
        args,
        Some(config.seed),
        serde_json::json!({ "generator": config, "test_every": test_every }),
    );
    io::write_jsonl(&dir.join("data.jsonl"), &data)?;
    manifest.outputs.push("data.jsonl".into());
    if let Some(k) = test_every {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, e) in data.iter().enumerate() {
            if (i + 1) % k == 0 {
                test.push(e.clone().with_split(Some(Split::Test)));
            } else {
                train.push(e.clone().with_split(Some(Split::Train)));
            }
        }
        io::write_jsonl(&dir.join("train.jsonl"), &Dataset::new(train))?;
        io::write_jsonl(&dir.join("test.jsonl"), &Dataset::new(test))?;
        manifest.outputs.extend(["train.jsonl".into(), "test.jsonl".into()]);
    }
    manifest.write(dir)?;
    println!("wrote {} examples to {}", data.len(), dir.display());
    Ok(true)
}

fn import_tsv(common: &Common, args: Vec<String>, input: &Path) -> Result<bool> {
    let run = RunConfig::load(common.config.as_deref())?;
    let columns = run.columns.unwrap_or_default();
    let report = io::read_mtop_tsv(input, &columns)?;
    let dir = &common.out_dir;
    prepare(dir)?;
    let mut manifest = Manifest::new("import-tsv", args, None, serde_json::json!({ "columns": columns }));
    io::write_jsonl(&dir.join("data.jsonl"), &report.records)?;
    write_errors(&dir.join("errors.jsonl"), &report.errors)?;
    manifest.outputs.extend(["data.jsonl".into(), "errors.jsonl".into()]);
    manifest.write(dir)?;
    println!("imported {} examples, skipped {}", report.records.len(), report.errors.len());
    Ok(true)
}

fn cmd_train(
    common: &Common,
    args: Vec<String>,
    training: &Training,
    family: Option<ModelFamily>,
    from: Option<&Path>,
    train_path: &Path,
    eval_path: Option<&Path>,
) -> Result<bool> {
    let run = RunConfig::load(common.config.as_deref())?;
    let data = read_dataset(train_path)?;
    let eval = eval_path.map(read_dataset).transpose()?;
    let seed = common.seed.unwrap_or(0);
    let (mut model, base, name): (AnyParser<f32>, TrainConfig, &str) = match from {
        Some(path) => {
            let model = checkpoint::load(path)?;
            (model, run.finetune.or(run.train).unwrap_or_else(TrainConfig::desk), "finetune")
        }
        None => {
            let family = family.expect("train always names a family");
            let mut config = match run.model {
                Some(c) if c.family() == family => c,
                Some(c) => bail!("--family {family} conflicts with the configured {} model", c.family()),
                None => ModelConfig::desk(family),
            };
            config.fit_lengths(&data);
            if let Some(e) = &eval {
                config.fit_lengths(e);
            }
            config.encoder_mut().seed = seed;
            let vocabs = Vocabs::build(&data);
            (config.build(vocabs)?, run.train.unwrap_or_else(TrainConfig::desk), "train")
        }
    };
    let config = training.overlay(base);
    let dir = &common.out_dir;
    prepare(dir)?;
    let mut manifest = Manifest::new(
        name,
        args,
        Some(seed),
        serde_json::json!({ "model": model.config(), "train": config }),
    );
    let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
    metrics.write_record(["seed", "epoch", "loss", "eval_em"])?;
    let mut rows = Vec::new();
    let report = train(&mut model, &data, eval.as_ref(), &config, seed, |log| {
        let em = log.eval_em.map_or(String::new(), |e| format!("{e:.6}"));
        eprintln!("epoch {} loss {:.6} em {}", log.epoch, log.loss, if em.is_empty() { "-" } else { &em });
        rows.push([seed.to_string(), log.epoch.to_string(), format!("{:.6}", log.loss), em]);
    })?;
    for row in rows {
        metrics.write_record(&row)?;
    }
    metrics.flush()?;
    manifest.outputs.push("metrics.csv".into());
    checkpoint::save(&model, &dir.join("checkpoint.json"))?;
    manifest.outputs.push("checkpoint.json".into());
    write_json(dir, "train_report.json", &report, &mut manifest.outputs)?;
    manifest.write(dir)?;
    println!(
        "{} parameters, kept epoch {}{}",
        model.param_count(),
        report.best_epoch,
        report.best_em.map_or(String::new(), |e| format!(", eval EM {e:.4}"))
    );
    Ok(true)
}

fn render_eval(report: &EvalReport) -> String {
    let mut out = format!(
        "examples {}\nexact match {:.4}\nnested {:.4} ({} examples)\nnon-nested {:.4} ({} examples)\nfertility accuracy {:.4}\nfailures {}\n",
        report.total,
        report.exact_match,
        report.nested.exact_match,
        report.nested.count,
        report.non_nested.exact_match,
        report.non_nested.count,
        report.fertility_accuracy,
        report.failures
    );
    let width = report.per_domain.keys().map(String::len).max().unwrap_or(6).max(6);
    out.push_str(&format!("{:<width$} {:>7} {:>7}\n", "domain", "count", "EM"));
    for (d, s) in &report.per_domain {
        out.push_str(&format!("{d:<width$} {:>7} {:>7.4}\n", s.count, s.exact_match));
    }
    out
}

fn cmd_eval(common: &Common, args: Vec<String>, checkpoint_path: &Path, data_path: &Path, trees: bool) -> Result<bool> {
    let model: AnyParser<f32> = checkpoint::load(checkpoint_path)?;
    let data = read_dataset(data_path)?;
    let predictions: Vec<_> = data.iter().map(|e| (e, model.predict(&e.tokens(), None))).collect();
    let report = evaluate_predictions(&data, predictions.iter().map(|(_, p)| p.frame.clone()));
    let dir = &common.out_dir;
    prepare(dir)?;
    let mut manifest = Manifest::new("eval", args, None, serde_json::json!({ "model": model.config() }));
    let records: Vec<FrameRecord> = predictions
        .iter()
        .filter_map(|(e, p)| {
            p.frame.clone().map(|frame| FrameRecord { frame, ..FrameRecord::from_example(e) })
        })
        .collect();
    io::write_frames(&dir.join("predictions.frames"), &records)?;
    manifest.outputs.push("predictions.frames".into());
    if trees {
        let mut lines = String::new();
        for (e, p) in &predictions {
            let tree = p
                .tree
                .clone()
                .or_else(|| p.frame.as_ref().and_then(|f| reconstruct(f, &e.tokens()).ok()))
                .map(|t| serialize(&t));
            let row = serde_json::json!({ "id": e.id, "tree": tree, "failure": p.failure });
            lines.push_str(&row.to_string());
            lines.push('\n');
        }
        write_text(dir, "predictions.jsonl", &lines, &mut manifest.outputs)?;
    }
    write_json(dir, "eval_report.json", &report, &mut manifest.outputs)?;
    let text = render_eval(&report);
    write_text(dir, "eval_report.txt", &text, &mut manifest.outputs)?;
    manifest.write(dir)?;
    print!("{text}");
    Ok(true)
}

/// Corpus with outputs long enough to fill the default latency buckets.
pub fn latency_corpus_config(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        domains: vec!["event".into()],
        examples_per_domain: 3000,
        max_slots_per_template: 6,
        max_tokens: 30,
        ..GeneratorConfig::default()
    }
}

#[allow(clippy::too_many_arguments)]
fn bench_latency(
    common: &Common,
    args: Vec<String>,
    data_path: Option<&Path>,
    families: Option<Vec<ModelFamily>>,
    samples: Option<usize>,
    repetitions: Option<usize>,
    warmup: Option<usize>,
    match_params: bool,
) -> Result<bool> {
    let run = RunConfig::load(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(0);
    let data = match data_path {
        Some(p) => read_dataset(p)?,
        None => generate_synthetic(&run.generator.clone().unwrap_or_else(|| latency_corpus_config(seed)))?,
    };
    let mut config = run.latency.unwrap_or_default();
    if let Some(s) = samples {
        config.samples_per_bucket = s;
    }
    if let Some(r) = repetitions {
        config.repetitions = r;
    }
    if let Some(w) = warmup {
        config.warmup = w;
    }
    let families = families.unwrap_or_else(|| ModelFamily::ALL.to_vec());
    let vocabs = Vocabs::build(&data);
    let mut configs: Vec<ModelConfig> = families
        .iter()
        .map(|&f| {
            let mut c = ModelConfig::desk(f);
            c.fit_lengths(&data);
            c.encoder_mut().seed = seed;
            c
        })
        .collect();
    if match_params {
        let mut reference = ModelConfig::desk(ModelFamily::Seq2Seq);
        reference.fit_lengths(&data);
        let target = param_count(&reference, &vocabs)?;
        for c in configs.iter_mut().filter(|c| c.family() != ModelFamily::Seq2Seq) {
            *c = match_parameters(c, target, &vocabs)?;
        }
    }
    let models: Vec<(String, AnyParser<f32>)> = configs
        .iter()
        .map(|c| Ok((c.family().to_string(), c.build(vocabs.clone())?)))
        .collect::<Result<_>>()?;
    let report = latency_benchmark(&models, &data, &config);
    let dir = &common.out_dir;
    prepare(dir)?;
    let mut manifest = Manifest::new(
        "bench-latency",
        args,
        Some(seed),
        serde_json::json!({ "models": configs, "latency": config }),
    );
    write_json(dir, "latency.json", &report, &mut manifest.outputs)?;
    let text = report.render_table();
    write_text(dir, "latency.txt", &text, &mut manifest.outputs)?;
    manifest.write(dir)?;
    print!("{text}");
    for m in &report.models {
        for b in m.buckets.iter().filter(|b| b.insufficient) {
            eprintln!("warning: {} bucket {} has only {} examples", m.name, b.bucket, b.samples);
        }
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn fewshot(
    common: &Common,
    args: Vec<String>,
    data_path: &Path,
    target: &str,
    families: Option<Vec<ModelFamily>>,
    fractions: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    pretrain_epochs: Option<usize>,
    finetune_epochs: Option<usize>,
) -> Result<bool> {
    let run = RunConfig::load(common.config.as_deref())?;
    let data = read_dataset(data_path)?;
    let mut config = run.fewshot.unwrap_or_default();
    if let Some(f) = fractions {
        config.fractions = f;
    }
    if let Some(s) = seeds {
        config.seeds = s;
    } else if let Some(s) = common.seed {
        config.seeds = vec![s];
    }
    let mut pretrain = run.train.unwrap_or_else(TrainConfig::desk);
    let mut finetune = run.finetune.unwrap_or_else(|| pretrain.clone());
    if let Some(e) = pretrain_epochs {
        pretrain.epochs = e;
    }
    if let Some(e) = finetune_epochs {
        finetune.epochs = e;
    }
    let families = families.unwrap_or_else(|| ModelFamily::ALL.to_vec());
    let learners: Vec<ParserLearner<f32>> = families
        .iter()
        .map(|&f| {
            let model = match &run.model {
                Some(c) if c.family() == f => c.clone(),
                _ => ModelConfig::desk(f),
            };
            ParserLearner::new(model, pretrain.clone(), finetune.clone(), data.clone())
        })
        .collect();
    let report = run_few_shot_protocol(&data, target, &learners, &config, |msg| eprintln!("{msg}"))?;
    let dir = &common.out_dir;
    prepare(dir)?;
    let mut manifest = Manifest::new(
        "fewshot",
        args,
        config.seeds.first().copied(),
        serde_json::json!({
            "models": learners.iter().map(|l| &l.model).collect::<Vec<_>>(),
            "pretrain": pretrain,
            "finetune": finetune,
            "fewshot": config,
            "target": target,
        }),
    );
    write_json(dir, "fewshot.json", &report, &mut manifest.outputs)?;
    let text = report.render_table();
    write_text(dir, "fewshot.txt", &text, &mut manifest.outputs)?;
    let mut csv = csv::Writer::from_path(dir.join("fewshot.csv"))?;
    let mut header = vec!["model".to_string()];
    header.extend(report.fractions.iter().map(|f| format!("{}%", f * 100.0)));
    csv.write_record(&header)?;
    for row in &report.rows {
        let mut record = vec![row.model.clone()];
        record.extend(row.exact_match.iter().map(|e| format!("{e:.6}")));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    manifest.outputs.push("fewshot.csv".into());
    manifest.write(dir)?;
    print!("{text}");
    let split_ok = report.split_checks.iter().all(|c| c.passed());
    if !split_ok {
        eprintln!("split checks failed");
    }
    Ok(split_ok && report.is_complete())
}

/// Path of the manifest a command wrote into `out_dir`.
pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join(MANIFEST_FILE)
}
