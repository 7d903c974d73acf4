use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use onetox::dataset::load_counts_dir;
use onetox::evaluation::{render_table, run_experiment, write_reports, DEFAULT_K};
use onetox::pca::export_prediction;
use onetox::projection::DEFAULT_RIDGE;
use onetox::synthetic::{generate, SyntheticConfig};
use onetox::{
    compute_stats, frequency_filter, load_model, load_relations, run_recall_at_k, Algorithm, EmbeddingModel,
    EvalOptions, ExperimentReport, Mode, RelationModel, Token, TrainingSet, Year, YearlyRelationSet,
};

mod config;

use config::{parse_model_arg, FileConfig};

const DEFAULT_MIN_COUNT: u64 = 25;
const DEFAULT_K_VALUES: [usize; 3] = [1, 5, 10];

#[derive(Parser)]
#[command(name = "onetox", version, about = "Learn and evaluate one-to-X relations in word embeddings")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on each period and score predictions against the gold relations.
    Evaluate(EvaluateArgs),
    /// Diachronic recall@k over conflict locations only.
    Recall(EvaluateArgs),
    /// Dataset statistics as JSON.
    Stats(StatsArgs),
    /// 2-D PCA coordinates of a query, its projection and its candidates.
    ExportPca(ExportPcaArgs),
    /// Generate synthetic models and relations with a planted map.
    Synth(SynthArgs),
    /// Fit a relation model on one period and write it to disk.
    Train(TrainArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Diachronic,
    Synchronic,
    #[value(name = "recall_at_k", alias = "recall-at-k")]
    RecallAtK,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Baseline,
    Threshold,
    Both,
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> Result<T> {
    T::from_str(value, true).map_err(|_| anyhow::anyhow!("config: invalid {key} '{value}'"))
}

#[derive(Args)]
struct DataArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Embedding model for one period, as YEAR=PATH. Repeatable.
    #[arg(long = "model", value_name = "YEAR=PATH", value_parser = parse_model_arg)]
    models: Vec<(Year, PathBuf)>,
    /// Gold relations (JSON lines of {year, location, groups}).
    #[arg(long)]
    relations: Option<PathBuf>,
    /// Directory of per-year frequency files named by year (2014.tsv).
    #[arg(long)]
    counts_dir: Option<PathBuf>,
    /// Drop entities seen fewer times than this in a year [default: 25].
    #[arg(long)]
    min_count: Option<u64>,
    /// Keep model tokens as they are instead of normalizing them.
    #[arg(long)]
    raw_vocab: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Nearest neighbors per query [default: 2].
    #[arg(long)]
    k: Option<usize>,
    /// Cutoffs for recall@k [default: 1,5,10].
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    /// Ridge term of the least-squares fit [default: 1e-8].
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    /// Report file (JSON array of experiment reports).
    #[arg(long)]
    output: Option<PathBuf>,
    /// File with one token per line that may never be predicted.
    #[arg(long)]
    stoplist: Option<PathBuf>,
    /// Never predict a gold location as a related entity.
    #[arg(long)]
    exclude_locations: bool,
    /// Align each test model onto its training model before testing.
    #[arg(long)]
    align: bool,
    /// Row label in the printed table [default: relations file stem].
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExportPcaArgs {
    /// Embedding model the query is looked up in.
    #[arg(long)]
    model: PathBuf,
    /// Relation model written by `train`.
    #[arg(long)]
    relation_model: PathBuf,
    #[arg(long)]
    query: String,
    /// Candidates to include [default: the relation model's k].
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    raw_vocab: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the models, relations, planted matrices and config.toml.
    #[arg(long)]
    output_dir: PathBuf,
    /// TOML file; only `seed` is read.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 40)]
    locations: usize,
    #[arg(long, default_value_t = 60)]
    groups: usize,
    /// Unrelated vocabulary [default: 100 x (locations + groups)].
    #[arg(long)]
    distractors: Option<usize>,
    /// Relative weights of 0, 1, 2, ... groups per location.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.3,0.2")]
    weights: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    years: usize,
    #[arg(long, default_value_t = 2010)]
    first_year: Year,
    /// Norm of the noise added to each group vector.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Per-row norm of the yearly change of the planted map.
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Period whose pairs and model are used.
    #[arg(long)]
    year: Year,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Data flags merged with the config file.
struct DataSource {
    file: FileConfig,
    models: BTreeMap<Year, PathBuf>,
    relations: Option<PathBuf>,
    counts_dir: Option<PathBuf>,
    min_count: u64,
    raw_vocab: bool,
}

impl DataSource {
    fn resolve(args: &DataArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let mut models = file.model_paths()?;
        models.extend(args.models.iter().cloned());
        Ok(DataSource {
            models,
            relations: args.relations.clone().or_else(|| file.relations.clone()),
            counts_dir: args.counts_dir.clone().or_else(|| file.counts_dir.clone()),
            min_count: args.min_count.or(file.min_count).unwrap_or(DEFAULT_MIN_COUNT),
            raw_vocab: args.raw_vocab || file.raw_vocab.unwrap_or(false),
            file,
        })
    }

    fn relations_path(&self) -> Result<&Path> {
        self.relations
            .as_deref()
            .context("no relations file given (use --relations or `relations` in the config)")
    }

    fn gold(&self) -> Result<Vec<YearlyRelationSet>> {
        let path = self.relations_path()?;
        let gold = load_relations(path).with_context(|| format!("loading relations {}", path.display()))?;
        let Some(dir) = &self.counts_dir else {
            return Ok(gold);
        };
        let counts = load_counts_dir(dir).with_context(|| format!("loading counts from {}", dir.display()))?;
        log::info!("frequency filter: min count {}", self.min_count);
        Ok(frequency_filter(&gold, &counts, self.min_count))
    }

    fn load_one(&self, year: Year) -> Result<EmbeddingModel> {
        let path = self
            .models
            .get(&year)
            .with_context(|| format!("no embedding model for period {year} (pass --model {year}=PATH)"))?;
        let model = load_model(path, year.to_string())
            .with_context(|| format!("loading model for period {year} from {}", path.display()))?;
        Ok(if self.raw_vocab {
            model
        } else {
            model.normalize_vocabulary()
        })
    }

    /// Models for every gold period; a missing one is an error.
    fn models_for(&self, gold: &[YearlyRelationSet]) -> Result<BTreeMap<Year, EmbeddingModel>> {
        gold.iter()
            .map(|set| Ok((set.period(), self.load_one(set.period())?)))
            .collect()
    }
}

fn read_stoplist(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading stoplist {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(Token::normalize(l)?.into_string()))
        .collect()
}

fn write_or_print(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_evaluate(args: &EvaluateArgs, forced_mode: Option<ModeArg>) -> Result<()> {
    let src = DataSource::resolve(&args.data)?;
    let file = &src.file;
    let mode = match (forced_mode, args.mode, &file.mode) {
        (Some(m), _, _) | (None, Some(m), _) => m,
        (None, None, Some(s)) => parse_enum("mode", s)?,
        (None, None, None) => ModeArg::Diachronic,
    };
    let algorithm = match (args.algorithm, &file.algorithm) {
        (Some(a), _) => a,
        (None, Some(s)) => parse_enum("algorithm", s)?,
        (None, None) => AlgorithmArg::Both,
    };

    let gold = src.gold()?;
    let models = src.models_for(&gold)?;

    let mut stoplist = match args.stoplist.as_ref().or(file.stoplist.as_ref()) {
        Some(path) => read_stoplist(path)?,
        None => BTreeSet::new(),
    };
    if args.exclude_locations || file.exclude_locations.unwrap_or(false) {
        for set in &gold {
            stoplist.extend(set.location_universe().map(|t| t.to_string()));
        }
    }
    let opts = EvalOptions {
        k: args.k.or(file.k).unwrap_or(DEFAULT_K),
        ridge: args.ridge.or(file.ridge).unwrap_or(DEFAULT_RIDGE),
        stoplist,
        align: args.align || file.align.unwrap_or(false),
    };
    if opts.k == 0 {
        bail!("k must be at least 1");
    }

    let reports: Vec<ExperimentReport> = match mode {
        ModeArg::RecallAtK => {
            let k_values = args
                .k_values
                .clone()
                .or_else(|| file.k_values.clone())
                .unwrap_or_else(|| DEFAULT_K_VALUES.to_vec());
            vec![run_recall_at_k(&models, &gold, &k_values, &opts)?]
        }
        ModeArg::Diachronic | ModeArg::Synchronic => {
            let mode = if mode == ModeArg::Diachronic {
                Mode::Diachronic
            } else {
                Mode::Synchronic
            };
            let algorithms: &[Algorithm] = match algorithm {
                AlgorithmArg::Baseline => &[Algorithm::Baseline],
                AlgorithmArg::Threshold => &[Algorithm::Threshold],
                AlgorithmArg::Both => &[Algorithm::Baseline, Algorithm::Threshold],
            };
            let mut reports = run_experiment(mode, &models, &gold, algorithms, &opts)?;
            if let [baseline, threshold] = reports.as_mut_slice() {
                threshold.significance = threshold.compare(baseline);
                if threshold.significance.is_none() {
                    log::warn!("significance needs at least two evaluated periods");
                }
            }
            reports
        }
    };

    let dataset = args
        .dataset
        .clone()
        .or_else(|| file.dataset.clone())
        .or_else(|| {
            src.relations
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "data".into());
    std::io::stdout()
        .lock()
        .write_all(render_table(&reports, &dataset).as_bytes())?;

    if let Some(path) = args.output.as_ref().or(file.output.as_ref()) {
        write_reports(&reports, path).with_context(|| format!("writing report {}", path.display()))?;
        log::info!("report written to {}", path.display());
    }
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let src = DataSource::resolve(&args.data)?;
    let stats = compute_stats(&src.gold()?)?;
    let json = serde_json::to_string_pretty(&stats)? + "\n";
    write_or_print(args.output.as_deref().or(src.file.output.as_deref()), &json)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let src = DataSource::resolve(&args.data)?;
    let gold = src.gold()?;
    let set = gold
        .iter()
        .find(|s| s.period() == args.year)
        .with_context(|| format!("no relations for period {}", args.year))?;
    let model = src.load_one(args.year)?;
    let train = TrainingSet::from_pairs(&model, &set.pairs())?;
    if train.is_empty() {
        bail!("period {}: no training pair has both tokens in the model", args.year);
    }
    let k = args.k.or(src.file.k).unwrap_or(DEFAULT_K);
    let ridge = args.ridge.or(src.file.ridge).unwrap_or(DEFAULT_RIDGE);
    let relation = RelationModel::train(&train, ridge, k, args.year.to_string())?;
    log::info!(
        "period {}: {} pairs, radius {:.6}",
        args.year,
        train.len(),
        relation.radius()
    );
    write_or_print(args.output.as_deref().or(src.file.output.as_deref()), &relation.to_text())
}

fn cmd_export_pca(args: &ExportPcaArgs) -> Result<()> {
    let model = load_model(&args.model, "export").with_context(|| format!("loading model {}", args.model.display()))?;
    let model = if args.raw_vocab {
        model
    } else {
        model.normalize_vocabulary()
    };
    let relation = RelationModel::load(&args.relation_model)
        .with_context(|| format!("loading relation model {}", args.relation_model.display()))?;
    let query = if args.raw_vocab {
        args.query.clone()
    } else {
        Token::normalize(&args.query)?.into_string()
    };
    let export = export_prediction(&relation, &model, &query, args.k.unwrap_or(relation.k()))?;
    export
        .save(&args.output)
        .with_context(|| format!("writing {}", args.output.display()))
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let config = SyntheticConfig {
        dim: args.dim,
        n_locations: args.locations,
        n_groups: args.groups,
        n_distractors: args.distractors,
        groups_per_location: args.weights.clone(),
        years: args.years,
        first_year: args.first_year,
        relation_matrix: None,
        noise_sigma: args.noise,
        drift_sigma: args.drift,
        seed,
    };
    let data = generate(&config)?;
    let paths = data.write_to_dir(&args.output_dir)?;

    let relative = |p: &Path| p.file_name().map(PathBuf::from).unwrap_or_else(|| p.to_path_buf());
    let run = FileConfig {
        models: paths
            .models
            .iter()
            .map(|(y, p)| (y.to_string(), relative(p)))
            .collect(),
        relations: Some(relative(&paths.relations)),
        seed: Some(seed),
        ..FileConfig::default()
    };
    let run_path = args.output_dir.join("config.toml");
    std::fs::write(&run_path, run.to_toml()?).with_context(|| format!("writing {}", run_path.display()))?;
    log::info!("wrote {} periods to {}", data.models.len(), args.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Evaluate(args) => cmd_evaluate(args, None),
        Command::Recall(args) => cmd_evaluate(args, Some(ModeArg::RecallAtK)),
        Command::Stats(args) => cmd_stats(args),
        Command::ExportPca(args) => cmd_export_pca(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
