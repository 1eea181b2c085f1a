use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use convoprobe::config::{load_questionnaire, ServerConfig};
use convoprobe::metrics::report::{build_report, ReportInputs};
use convoprobe::metrics::{ingest_quality_labels, majority_labels, read_coder_votes, write_coder_votes};
use convoprobe::questionnaire::{Format, Questionnaire};
use convoprobe::server::{self, AppState};
use convoprobe::simulate::{run_experiment, ExperimentConfig, PopulationConfig};
use convoprobe::stats::{
    adjust_families, session_dataset, treatment_effect, write_effects_csv, write_tidy_csv, EffectSpec,
};
use convoprobe::store::{read_path, Durability, Store};
use convoprobe::{builtin_study, Condition, ReferenceBackend, Transcript};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "convoprobe", version, about = "Conversational survey engine and evaluation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP interview server.
    Serve {
        /// JSON config file; `CONVOPROBE_*` variables override it.
        #[arg(long, env = "CONVOPROBE_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Simulate a three-arm experiment and write its store and ground truth.
    Simulate(SimulateArgs),
    /// Estimate treatment effects from a store.
    Analyze(AnalyzeArgs),
    /// Print the metric report for a store.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Respondents per condition.
    #[arg(long, default_value_t = 601)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Population config (JSON); defaults when omitted.
    #[arg(long)]
    population: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<Condition>>,
    #[arg(long)]
    questionnaire: Option<PathBuf>,
    /// Store file to write (must not exist).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar; defaults to `<out>.truth.jsonl`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write ground truth as a coder-label CSV.
    #[arg(long)]
    truth_labels: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    questionnaire: Option<PathBuf>,
    /// Outcomes to model; every word-count, diversity and entropy outcome of
    /// open-ended questions plus completion and duration when omitted.
    #[arg(long = "outcome")]
    outcomes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "t1,t2")]
    treated: Vec<Condition>,
    #[arg(long, default_value = "control")]
    baseline: Condition,
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    /// HC1 heteroskedasticity-robust standard errors.
    #[arg(long)]
    robust: bool,
    /// False discovery rate for the per-outcome BH families.
    #[arg(long, default_value_t = 0.05)]
    fdr: f64,
    /// Effects CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the tidy per-session dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    questionnaire: Option<PathBuf>,
    /// Coder labels CSV (session_id, question_id, coder_id, category).
    #[arg(long)]
    coder_labels: Option<PathBuf>,
    /// Quality labels CSV.
    #[arg(long)]
    quality_labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
}

fn questionnaire(path: Option<&Path>) -> Result<Questionnaire> {
    Ok(match path {
        Some(p) => load_questionnaire(p)?,
        None => builtin_study(),
    })
}

fn load_transcripts(path: &Path) -> Result<Vec<Transcript>> {
    let report = read_path(path)?;
    for c in &report.corrupt {
        tracing::warn!(line = c.line, reason = %c.reason, "skipping corrupt store line");
    }
    Ok(Transcript::from_records(&report.records))
}

fn serve(config: Option<PathBuf>, bind: Option<String>) -> Result<()> {
    let mut config = ServerConfig::load(config.as_deref())?;
    if let Some(b) = bind {
        config.bind = b;
    }
    let mut questionnaires = config.load_questionnaires()?.into_iter();
    let durability = if config.fsync { Durability::Sync } else { Durability::Flush };
    let store = match &config.store_path {
        Some(p) => Store::open(p, durability)?,
        None => {
            tracing::warn!("no store path configured; transcripts are kept in memory only");
            Store::in_memory()
        }
    };
    let mut builder =
        AppState::builder(questionnaires.next().expect("built-in study"), config.backend.build()?, Arc::new(store))
            .timeout(config.timeout())
            .typing_delay_ms(config.typing_delay_ms);
    for q in questionnaires {
        builder = builder.questionnaire(q);
    }
    let state = builder.build();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(state, &config.bind, std::time::Duration::from_secs(config.sweep_interval_secs)))?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let q = questionnaire(args.questionnaire.as_deref())?;
    let mut config = ExperimentConfig::new(args.seed, args.n);
    if let Some(p) = &args.population {
        let population: PopulationConfig = serde_json::from_reader(File::open(p)?)?;
        config.population = population;
    }
    if let Some(c) = args.conditions {
        config.conditions = c;
    }
    if args.out.exists() {
        return Err(format!("{} already exists", args.out.display()).into());
    }
    let run = run_experiment(&q, &config, &ReferenceBackend::default())?;
    run.write_store(&Store::open(&args.out, Durability::Flush)?)?;
    let truth = args.truth.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".truth.jsonl");
        p.into()
    });
    std::fs::write(&truth, run.truth_jsonl()?)?;
    if let Some(p) = &args.truth_labels {
        write_coder_votes(&run.truth_votes(), BufWriter::new(File::create(p)?))?;
    }
    eprintln!(
        "wrote {} sessions ({} records) to {}, ground truth to {}",
        run.transcripts.len(),
        run.records.len(),
        args.out.display(),
        truth.display()
    );
    Ok(())
}

fn default_outcomes(q: &Questionnaire) -> Vec<String> {
    let mut out = vec!["completed".to_string(), "duration_min".to_string()];
    for spec in &q.questions {
        if q.conditions.iter().any(|c| matches!(spec.format(*c), Format::OpenEnded { .. })) {
            let id = spec.id.to_lowercase();
            for m in ["words_seed", "words_combined", "diversity_combined", "entropy_combined"] {
                out.push(format!("{id}_{m}"));
            }
        }
    }
    out
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let q = questionnaire(args.questionnaire.as_deref())?;
    let rows = session_dataset(&q, &load_transcripts(&args.store)?);
    if let Some(p) = &args.dataset {
        write_tidy_csv(&rows, BufWriter::new(File::create(p)?))?;
    }
    // Dataset columns are keyed by lowercased question id.
    let outcomes: Vec<String> = if args.outcomes.is_empty() {
        default_outcomes(&q)
    } else {
        args.outcomes.iter().map(|o| o.to_lowercase()).collect()
    };
    let covariates: Vec<String> = args.covariates.iter().map(|c| c.to_lowercase()).collect();
    let mut effects = Vec::new();
    for outcome in &outcomes {
        for &treated in &args.treated {
            let mut spec = EffectSpec::new(outcome.clone(), treated, args.baseline);
            spec.covariates = covariates.clone();
            spec.robust = args.robust;
            spec.family = Some(outcome.clone());
            match treatment_effect(&rows, &spec) {
                Ok(e) => effects.push(e),
                Err(e) => tracing::warn!(%outcome, %treated, error = %e, "effect not estimable"),
            }
        }
    }
    adjust_families(&mut effects, args.fdr)?;
    match &args.out {
        Some(p) => write_effects_csv(&effects, BufWriter::new(File::create(p)?))?,
        None => write_effects_csv(&effects, std::io::stdout().lock())?,
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let q = questionnaire(args.questionnaire.as_deref())?;
    let transcripts = load_transcripts(&args.store)?;
    let labels = match &args.coder_labels {
        Some(p) => Some(majority_labels(&read_coder_votes(File::open(p)?)?)),
        None => None,
    };
    let quality = match &args.quality_labels {
        Some(p) => Some(ingest_quality_labels(File::open(p)?)?),
        None => None,
    };
    let inputs = ReportInputs { coder_labels: labels.as_ref(), quality_labels: quality.as_deref() };
    let report = build_report(&q, &transcripts, &inputs)?;
    let text = match args.format {
        ReportFormat::Text => report.render_text(),
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Csv => report.render_csv()?,
    };
    std::io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve { config, bind } => serve(config, bind),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
