//! Command-line driver: synthetic data, training, single attributions and
//! the probe suite. Every output is a deterministic function of the flags.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use siamattr::attribution::{
    attribute_texts, heatmap_svg, write_matrix_csv, AttributionError, AttributionRecord,
    AttributionRequest, Mode, Reduce,
};
use siamattr::encoder::{
    load_model, save_model, EncoderConfig, EncoderError, Head, ShiftMode, SiameseEncoder,
};
use siamattr::probes::{
    self, plot_csv, plot_svg, verify_report, AdjectiveParams, AgreementParams, AttributionSettings,
    LexicalParams, NegationParams, PosNegParams, ProbeError, ProbeReport, ReferenceParams,
    SyntacticParams,
};
use siamattr::training::{
    evaluate_spearman, generate_synthetic_corpus, init_model, load_pairs, mean_squared_error,
    negation_sentences, save_pairs, train, PairRecord, TrainConfig, TrainError,
};

const MODEL_FILE: &str = "model.bin";

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: written output failed validation: {detail}")]
    Validation { path: PathBuf, detail: String },
}

#[derive(Debug, Parser)]
#[command(
    name = "siamattr",
    version,
    about = "Integrated-Jacobian attributions for Siamese text encoders"
)]
struct Cli {
    /// Worker threads for per-pair and per-example work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (train/dev/test TSV) and negation sentences.
    Synth(SynthArgs),
    /// Train an encoder on a TSV of `sentence_a<TAB>sentence_b<TAB>label`.
    Train(TrainArgs),
    /// Attribute one pair, or every pair of a TSV file.
    Attribute(AttributeArgs),
    /// Run one probe and write its report and plot series.
    Probe {
        #[command(subcommand)]
        probe: ProbeCommand,
    },
    /// Spearman correlation and MSE of a model on a TSV file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "SIAMATTR_OUT", default_value = "siamattr-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    negations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShiftFlag {
    None,
    Reference,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HeadFlag {
    Dot,
    Cosine,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Held-out pairs for the reported Spearman correlation.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    shift: ShiftFlag,
    #[arg(long, value_enum, default_value = "cosine")]
    head: HeadFlag,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn: Option<usize>,
    #[arg(long)]
    projection: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeFlag {
    Exact,
    Approximate,
}

impl From<ModeFlag> for Mode {
    fn from(m: ModeFlag) -> Self {
        match m {
            ModeFlag::Exact => Mode::Exact,
            ModeFlag::Approximate => Mode::Approximate,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReduceFlag {
    Feature,
    Token,
    Word,
}

impl From<ReduceFlag> for Reduce {
    fn from(r: ReduceFlag) -> Self {
        match r {
            ReduceFlag::Feature => Reduce::Feature,
            ReduceFlag::Token => Reduce::Token,
            ReduceFlag::Word => Reduce::Word,
        }
    }
}

/// `N` or `pooled` (the last block's output, just before pooling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerFlag {
    Index(usize),
    Pooled,
}

fn parse_layer(s: &str) -> Result<LayerFlag, String> {
    if s == "pooled" {
        return Ok(LayerFlag::Pooled);
    }
    s.parse()
        .map(LayerFlag::Index)
        .map_err(|_| format!("expected a layer index or `pooled`, got {s:?}"))
}

#[derive(Debug, Args)]
struct AttributionFlags {
    /// Layer index (0 = embeddings) or `pooled`; defaults to the
    /// second-to-last block.
    #[arg(long, value_parser = parse_layer)]
    layer: Option<LayerFlag>,
    #[arg(long)]
    steps: Option<usize>,
    /// Defaults to exact for shifted models, approximate otherwise.
    #[arg(long, value_enum)]
    mode: Option<ModeFlag>,
}

impl AttributionFlags {
    fn settings(&self, model: &SiameseEncoder) -> AttributionSettings {
        let mut s = AttributionSettings::for_model(model);
        match self.layer {
            Some(LayerFlag::Index(l)) => s.layer = l,
            Some(LayerFlag::Pooled) => s.layer = model.config().num_layers,
            None => {}
        }
        if let Some(n) = self.steps {
            s.steps = n;
        }
        if let Some(m) = self.mode {
            s.mode = m.into();
        }
        s
    }
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, requires = "b", conflicts_with = "pairs")]
    a: Option<String>,
    #[arg(long, requires = "a")]
    b: Option<String>,
    /// TSV of pairs to attribute; outputs are numbered `pair-NNN`.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "token")]
    reduce: ReduceFlag,
    #[command(flatten)]
    attribution: AttributionFlags,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ProbeCommand {
    /// Distributions of the reference similarities and reference term.
    Reference {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        band: f64,
        #[arg(long, default_value_t = 0.9)]
        ceiling: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Agreement between an exact (shifted) and a tuned model's matrices.
    Agreement {
        /// The shifted model, attributed in exact mode.
        #[arg(long)]
        a: PathBuf,
        /// The model compared against it.
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Layers to tap; defaults to every block output.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        #[arg(long, default_value_t = AttributionRequest::DEFAULT_STEPS)]
        steps: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [3, 10])]
        top_k: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        score_threshold: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Positive and negative attribution mass per pair.
    Posneg {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        attribution: AttributionFlags,
        #[command(flatten)]
        out: OutArg,
    },
    /// Attribution to `not` against the sentence without it.
    Negation {
        #[arg(long)]
        model: PathBuf,
        /// One sentence per line.
        #[arg(long)]
        sentences: PathBuf,
        #[command(flatten)]
        attribution: AttributionFlags,
        #[command(flatten)]
        out: OutArg,
    },
    /// Synonym against opposite adjective attributions.
    Adjectives {
        #[arg(long)]
        model: PathBuf,
        /// TSV of `anchor<TAB>synonym<TAB>opposite`; defaults to the
        /// bundled 23 triplets.
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        noun: Option<String>,
        #[command(flatten)]
        attribution: AttributionFlags,
        #[command(flatten)]
        out: OutArg,
    },
    /// Same-token attributions ranked per token; give `--model` twice to
    /// compare two models.
    Lexical {
        #[arg(long, required = true, num_args = 1)]
        model: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = LexicalParams::DEFAULT_MIN_COUNT)]
        min_count: usize,
        #[command(flatten)]
        attribution: AttributionFlags,
        #[command(flatten)]
        out: OutArg,
    },
    /// Role pairs of the strongest word-word attributions.
    Syntactic {
        #[arg(long, required = true, num_args = 1)]
        model: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Role annotations, `word|word<TAB>role|role` per line.
        #[arg(long)]
        roles: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_percent: usize,
        #[command(flatten)]
        attribution: AttributionFlags,
        #[command(flatten)]
        out: OutArg,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// A model file, or a directory holding one.
fn model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL_FILE)
    } else {
        path.to_path_buf()
    }
}

fn open_model(path: &Path) -> Result<SiameseEncoder, CliError> {
    Ok(load_model(model_path(path))?)
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let dir = &args.out.out;
    create_dir(dir)?;
    let ds = generate_synthetic_corpus(args.seed, args.size);
    save_pairs(&ds.train, dir.join("train.tsv"))?;
    save_pairs(&ds.dev, dir.join("dev.tsv"))?;
    save_pairs(&ds.test, dir.join("test.tsv"))?;
    let mut lines = negation_sentences(args.seed, args.negations).join("\n");
    lines.push('\n');
    write_file(&dir.join("negation.txt"), lines.as_bytes())?;
    println!(
        "wrote {} train, {} dev, {} test pairs to {}",
        ds.train.len(),
        ds.dev.len(),
        ds.test.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let records = load_pairs(&args.data, false)?;
    let dev = args
        .dev
        .as_ref()
        .map(|p| load_pairs(p, false))
        .transpose()?;
    let defaults = EncoderConfig::default();
    let config = EncoderConfig {
        num_layers: args.layers.unwrap_or(defaults.num_layers),
        model_dim: args.dim.unwrap_or(defaults.model_dim),
        num_heads: args.heads.unwrap_or(defaults.num_heads),
        ffn_dim: args.ffn.unwrap_or(defaults.ffn_dim),
        projection: args.projection,
        head: match args.head {
            HeadFlag::Dot => Head::Dot,
            HeadFlag::Cosine => Head::Cosine,
        },
        shift_mode: match args.shift {
            ShiftFlag::None => ShiftMode::None,
            ShiftFlag::Reference => ShiftMode::ReferenceShift,
        },
        seed: args.seed,
        ..defaults
    };
    let tc_defaults = TrainConfig::default();
    let train_config = TrainConfig {
        epochs: args.epochs.unwrap_or(tc_defaults.epochs),
        batch_size: args.batch_size.unwrap_or(tc_defaults.batch_size),
        learning_rate: args.lr.unwrap_or(tc_defaults.learning_rate),
        seed: args.seed,
        ..tc_defaults
    };
    train_config.validate()?;
    let initial = init_model(
        config,
        records.iter().flat_map(|r| [r.a.as_str(), r.b.as_str()]),
    )?;
    let outcome = train(&initial, &records, &train_config)?;
    let model = outcome.model;

    let dir = &args.out.out;
    create_dir(dir)?;
    let path = dir.join(MODEL_FILE);
    save_model(&model, &path)?;
    if load_model(&path)?.params() != model.params() {
        return Err(CliError::Validation {
            path,
            detail: "reloaded parameters differ".into(),
        });
    }
    let mut curve = String::from("epoch,mean_loss\n");
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i + 1, l));
    }
    write_file(&dir.join("loss.csv"), curve.as_bytes())?;
    let dev_spearman = dev
        .as_ref()
        .map(|d| evaluate_spearman(&model, d))
        .transpose()?;
    let metrics = json!({
        "encoder": model.config(),
        "training": train_config,
        "steps": outcome.steps,
        "epoch_losses": outcome.epoch_losses,
        "train_mse_initial": mean_squared_error(&initial, &records)?,
        "train_mse_final": mean_squared_error(&model, &records)?,
        "dev_spearman": dev_spearman,
    });
    write_file(&dir.join("metrics.json"), pretty(&metrics).as_bytes())?;
    match dev_spearman {
        Some(s) => println!("trained {} steps; dev spearman {s:.4}", outcome.steps),
        None => println!("trained {} steps", outcome.steps),
    }
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes") + "\n"
}

fn cmd_attribute(args: &AttributeArgs) -> Result<(), CliError> {
    let model = open_model(&args.model)?;
    let request = args
        .attribution
        .settings(&model)
        .request(args.reduce.into());
    request.validate(&model)?;
    let (pairs, numbered) = match (&args.a, &args.b, &args.pairs) {
        (Some(a), Some(b), None) => (vec![PairRecord::new(a.as_str(), b.as_str(), 0.0)], false),
        (None, None, Some(p)) => (load_pairs(p, false)?, true),
        _ => {
            return Err(CliError::Usage(
                "give either --a and --b, or --pairs".into(),
            ))
        }
    };
    let dir = &args.out.out;
    create_dir(dir)?;
    for (i, p) in pairs.iter().enumerate() {
        let result = attribute_texts(&model, &p.a, &p.b, &request)?;
        let stem = if numbered {
            format!("pair-{i:03}")
        } else {
            "attribution".to_string()
        };
        let record = AttributionRecord::from(&result);
        let json_path = dir.join(format!("{stem}.json"));
        write_file(&json_path, record.to_json().as_bytes())?;
        let back: AttributionRecord =
            serde_json::from_str(&read_file(&json_path)?).map_err(|e| CliError::Validation {
                path: json_path.clone(),
                detail: e.to_string(),
            })?;
        if back != record {
            return Err(CliError::Validation {
                path: json_path,
                detail: "record does not round-trip".into(),
            });
        }
        let mut csv = Vec::new();
        write_matrix_csv(&result, &mut csv).map_err(|e| CliError::Validation {
            path: dir.join(format!("{stem}.csv")),
            detail: e.to_string(),
        })?;
        write_file(&dir.join(format!("{stem}.csv")), &csv)?;
        write_file(
            &dir.join(format!("{stem}.svg")),
            heatmap_svg(&result).as_bytes(),
        )?;
        println!(
            "{stem}: s = {:.6}, attribution sum = {:.6}, attribution error = {:.3e}",
            result.score,
            result.total(),
            result.attribution_error
        );
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let model = open_model(&args.model)?;
    let records = load_pairs(&args.data, false)?;
    let metrics = json!({
        "pairs": records.len(),
        "spearman": evaluate_spearman(&model, &records)?,
        "mse": mean_squared_error(&model, &records)?,
    });
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(pretty(&metrics).as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

/// Writes `<probe>.json` plus one CSV and SVG per plot series, then
/// re-reads and verifies the report.
fn write_report(dir: &Path, report: &ProbeReport) -> Result<(), CliError> {
    create_dir(dir)?;
    let path = dir.join(format!("{}.json", report.probe));
    write_file(&path, report.to_json()?.as_bytes())?;
    let back = ProbeReport::from_json(&read_file(&path)?)?;
    verify_report(&back).map_err(|e| CliError::Validation {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    for plot in &report.plot_data {
        let stem = format!("{}-{}", report.probe, plot.name);
        let csv = plot_csv(plot).map_err(|e| CliError::Validation {
            path: dir.join(format!("{stem}.csv")),
            detail: e.to_string(),
        })?;
        write_file(&dir.join(format!("{stem}.csv")), csv.as_bytes())?;
        write_file(&dir.join(format!("{stem}.svg")), plot_svg(plot).as_bytes())?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} records written to {}",
        report.probe,
        report.records.len(),
        path.display()
    );
    Ok(())
}

fn model_id(path: &Path) -> String {
    path.display().to_string()
}

fn read_triplets(path: &Path) -> Result<Vec<(String, String, String)>, CliError> {
    read_file(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.split('\t').collect::<Vec<_>>()[..] {
            [a, s, o] => Ok((
                a.trim().to_string(),
                s.trim().to_string(),
                o.trim().to_string(),
            )),
            _ => Err(CliError::Usage(format!(
                "{} line {}: expected anchor, synonym and opposite separated by tabs",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

fn cmd_probe(probe: &ProbeCommand) -> Result<(), CliError> {
    let (report, out) = match probe {
        ProbeCommand::Reference {
            model,
            data,
            band,
            ceiling,
            out,
        } => {
            let m = open_model(model)?;
            let params = ReferenceParams {
                band: *band,
                ceiling: *ceiling,
                ..ReferenceParams::new(model_id(model))
            };
            (
                probes::reference_probe(&m, &load_pairs(data, false)?, &params)?,
                out,
            )
        }
        ProbeCommand::Agreement {
            a,
            b,
            data,
            layers,
            steps,
            top_k,
            score_threshold,
            out,
        } => {
            let ma = open_model(a)?;
            let mb = open_model(b)?;
            let mut params = AgreementParams::new(model_id(a), model_id(b), ma.config().num_layers);
            if !layers.is_empty() {
                params.layers = layers.clone();
            }
            params.steps = *steps;
            params.top_k = top_k.clone();
            params.score_threshold = *score_threshold;
            (
                probes::agreement_probe(&ma, &mb, &load_pairs(data, false)?, &params)?,
                out,
            )
        }
        ProbeCommand::Posneg {
            model,
            data,
            attribution,
            out,
        } => {
            let m = open_model(model)?;
            let params = PosNegParams {
                model: model_id(model),
                attribution: attribution.settings(&m),
            };
            (
                probes::pos_neg_probe(&m, &load_pairs(data, false)?, &params)?,
                out,
            )
        }
        ProbeCommand::Negation {
            model,
            sentences,
            attribution,
            out,
        } => {
            let m = open_model(model)?;
            let lines: Vec<String> = read_file(sentences)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect();
            let params = NegationParams::new(model_id(model), attribution.settings(&m));
            (probes::negation_probe(&m, &lines, &params)?, out)
        }
        ProbeCommand::Adjectives {
            model,
            triplets,
            noun,
            attribution,
            out,
        } => {
            let m = open_model(model)?;
            let mut params = AdjectiveParams::new(model_id(model), attribution.settings(&m));
            if let Some(path) = triplets {
                params.triplets = read_triplets(path)?;
            }
            if let Some(noun) = noun {
                params.noun = noun.clone();
            }
            (probes::adjective_probe(&m, &params)?, out)
        }
        ProbeCommand::Lexical {
            model,
            data,
            min_count,
            attribution,
            out,
        } => {
            let models = model
                .iter()
                .map(|p| open_model(p))
                .collect::<Result<Vec<_>, _>>()?;
            let params = LexicalParams {
                models: model.iter().map(|p| model_id(p)).collect(),
                attribution: models.iter().map(|m| attribution.settings(m)).collect(),
                min_count: *min_count,
            };
            let refs: Vec<&SiameseEncoder> = models.iter().collect();
            (
                probes::lexical_probe(&refs, &load_pairs(data, false)?, &params)?,
                out,
            )
        }
        ProbeCommand::Syntactic {
            model,
            data,
            roles,
            top_percent,
            attribution,
            out,
        } => {
            let models = model
                .iter()
                .map(|p| open_model(p))
                .collect::<Result<Vec<_>, _>>()?;
            let annotations = probes::read_roles(roles)?;
            let params = SyntacticParams {
                models: model.iter().map(|p| model_id(p)).collect(),
                attribution: models.iter().map(|m| attribution.settings(m)).collect(),
                top_percent: *top_percent,
            };
            let refs: Vec<&SiameseEncoder> = models.iter().collect();
            (
                probes::syntactic_probe(&refs, &load_pairs(data, false)?, &annotations, &params)?,
                out,
            )
        }
    };
    write_report(&out.out, &report)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Attribute(args) => cmd_attribute(args),
        Command::Probe { probe } => cmd_probe(probe),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
