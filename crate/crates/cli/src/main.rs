//! stqa: zero-shot multiple-choice QA scoring with LM cross-entropy and
//! generated or retrieved clarifications.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stqa_core::knowledge::{default_relation_templates, ConceptGraph, NgramTable};
use stqa_core::report::{build_report, load_run_records, BEST_SETUP_CSV, IMPROVEMENT_CSV, REPORT_TXT};
use stqa_core::runner::{
    run_analyze, run_eval, run_score, run_selftalk, AnalyzeOptions, KnowledgeSourceKind,
    RunConfig, RunError,
};
use stqa_core::scorer::ClarificationPlacement;
use stqa_core::TaskId;

#[derive(Parser)]
#[command(name = "stqa", version, about = "Score multiple-choice questions with an LM, with optional clarifications")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Task id: copa|commonsenseqa|mctaco|socialiqa|piqa|winogrande|custom
    #[arg(long)]
    task: Option<TaskId>,

    /// Task spec file (required for custom tasks)
    #[arg(long)]
    task_spec: Option<PathBuf>,

    /// JSON-lines dataset, one instance per line
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// Dataset split label recorded in outputs
    #[arg(long)]
    split: Option<String>,

    /// Scoring backend: toy:<model file> or remote:<model>[@<url>]
    #[arg(long)]
    scorer_backend: Option<String>,

    /// Generator backend for self-talk and generative knowledge
    #[arg(long)]
    generator_backend: Option<String>,

    /// Knowledge sources: selftalk|conceptnet|ngrams|generative|static|all,
    /// comma-separated; omit for the zero-shot baseline
    #[arg(long)]
    knowledge: Option<String>,

    /// Concept-graph index built by `stqa kb ingest-graph`
    #[arg(long)]
    graph_index: Option<PathBuf>,

    /// N-gram index built by `stqa kb ingest-ngrams`
    #[arg(long)]
    ngram_index: Option<PathBuf>,

    /// Pre-generated clarifications JSONL for the static source
    #[arg(long)]
    clarifications: Option<PathBuf>,

    /// Relation route table JSON for the generative source
    #[arg(long)]
    routes: Option<PathBuf>,

    /// Root seed; every sampled byte derives from it
    #[arg(long)]
    seed: Option<u64>,

    /// Response cache directory
    #[arg(long)]
    cache_dir: Option<PathBuf>,

    /// Output directory for this run
    #[arg(long)]
    out: Option<PathBuf>,

    /// Config file with the same fields as the flags (flags win)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Swap the COPA cause/effect templates
    #[arg(long)]
    copa_swap_templates: bool,

    /// Clarification placement: after_context|appended
    #[arg(long)]
    placement: Option<String>,

    /// Score clarification-augmented texts only, without the bare option
    #[arg(long)]
    no_bare_option: bool,
}

#[derive(Subcommand)]
enum Commands {
    /// Score a dataset (baseline, or clarified when --knowledge is given)
    Score(RunArgs),
    /// Generate self-talk clarifications without scoring
    Selftalk(RunArgs),
    /// Ingest and query knowledge dumps
    Kb {
        #[command(subcommand)]
        command: KbCommands,
    },
    /// Evaluate a completed run directory
    Eval {
        /// Run directory containing manifest.json and predictions.jsonl
        #[arg(long)]
        run: PathBuf,
    },
    /// Extract useful/harmful flips, check flip accounting, emit annotation
    /// files and the error-taxonomy worksheet
    Analyze {
        #[arg(long)]
        baseline_run: PathBuf,
        #[arg(long)]
        clarified_run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cap on sampled useful clarifications per (task, source) cell
        #[arg(long, default_value_t = 50)]
        useful_cap: usize,
        /// Cap on sampled harmful clarifications per (task, source) cell
        #[arg(long, default_value_t = 25)]
        harmful_cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Re-ingest a labeled taxonomy worksheet and print the
        /// distribution instead of analyzing runs
        #[arg(long)]
        ingest_taxonomy: Option<PathBuf>,
    },
    /// Emit best-setup and improvement tables from evaluated runs
    Report {
        /// Evaluated run directories
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum KbCommands {
    /// Build a concept-graph index from a relation<TAB>head<TAB>tail<TAB>weight dump
    IngestGraph {
        dump: PathBuf,
        /// Relation template JSON (relation -> sentence with [head]/[tail]);
        /// defaults to the built-in table
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an n-gram index from a `token sequence<TAB>count` dump
    IngestNgrams {
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the clarifications a graph index yields for a term pair
    QueryGraph {
        index: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Print the fragments an n-gram index yields for a term pair
    QueryNgrams {
        index: PathBuf,
        #[arg(long)]
        term_a: String,
        #[arg(long)]
        term_b: String,
        #[arg(long, default_value_t = 100)]
        min_freq: u64,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
}

/// Flag > config file > environment > default.
fn merge_config(args: &RunArgs) -> Result<RunConfig, RunError> {
    let mut config: RunConfig = match &args.config {
        Some(path) => {
            let raw = std::fs::read(path).map_err(|source| RunError::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_slice(&raw)?
        }
        None => RunConfig::default(),
    };
    if let Some(task) = args.task {
        config.task = task;
    }
    if let Some(v) = &args.task_spec {
        config.task_spec_file = Some(v.clone());
    }
    if let Some(v) = &args.dataset {
        config.dataset = v.clone();
    }
    if let Some(v) = &args.split {
        config.split = v.clone();
    }
    if let Some(v) = &args.scorer_backend {
        config.scorer_backend = v.clone();
    }
    if let Some(v) = &args.generator_backend {
        config.generator_backend = Some(v.clone());
    }
    if let Some(spec) = &args.knowledge {
        let mut kinds = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if part == "all" {
                kinds.extend([
                    KnowledgeSourceKind::Selftalk,
                    KnowledgeSourceKind::Conceptnet,
                    KnowledgeSourceKind::Ngrams,
                    KnowledgeSourceKind::Generative,
                ]);
            } else {
                kinds.push(part.parse().map_err(RunError::Config)?);
            }
        }
        kinds.sort();
        kinds.dedup();
        config.knowledge = kinds;
    }
    if let Some(v) = &args.graph_index {
        config.graph_index = Some(v.clone());
    }
    if let Some(v) = &args.ngram_index {
        config.ngram_index = Some(v.clone());
    }
    if let Some(v) = &args.clarifications {
        config.clarifications_file = Some(v.clone());
    }
    if let Some(v) = &args.routes {
        config.routes_file = Some(v.clone());
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.cache_dir {
        config.cache_dir = Some(v.clone());
    }
    if let Some(v) = &args.out {
        config.out_dir = v.clone();
    }
    if args.copa_swap_templates {
        config.copa_swap_templates = true;
    }
    if let Some(placement) = &args.placement {
        config.scoring.clarification_placement = match placement.as_str() {
            "after_context" => ClarificationPlacement::AfterContext,
            "appended" | "appended_after_option" => ClarificationPlacement::AppendedAfterOption,
            other => {
                return Err(RunError::Config(format!(
                    "unknown placement {other:?}: use after_context or appended"
                )))
            }
        };
    }
    if args.no_bare_option {
        config.scoring.include_bare_option = false;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Commands::Score(args) => {
            let config = merge_config(&args)?;
            let summary = run_score(&config)?;
            println!(
                "scored {} instances -> {} (lm_calls={}, cache_hits={})",
                summary.counts.instances,
                summary.out_dir.display(),
                summary.counts.lm_calls,
                summary.counts.cache_hits
            );
        }
        Commands::Selftalk(args) => {
            let config = merge_config(&args)?;
            let path = run_selftalk(&config)?;
            println!("clarifications -> {}", path.display());
        }
        Commands::Kb { command } => run_kb(command)?,
        Commands::Eval { run } => {
            let result = run_eval(&run)?;
            println!(
                "{} {} [{}] accuracy {:.2}% (majority {:.2}%) over {} instances",
                result.task_id,
                result.split,
                result.knowledge_source,
                result.accuracy,
                result.majority_accuracy,
                result.n_instances
            );
        }
        Commands::Analyze {
            baseline_run,
            clarified_run,
            out,
            useful_cap,
            harmful_cap,
            seed,
            ingest_taxonomy,
        } => {
            if let Some(path) = ingest_taxonomy {
                let raw = std::fs::read_to_string(&path).map_err(|source| RunError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                for (label, pct) in stqa_core::eval::ingest_error_taxonomy(&raw)? {
                    println!("{label}\t{pct:.1}");
                }
                return Ok(());
            }
            let options = AnalyzeOptions {
                useful_cap,
                harmful_cap,
                seed,
            };
            let summary = run_analyze(&baseline_run, &clarified_run, &out, &options)?;
            println!(
                "baseline {:.2}% -> clarified {:.2}% (useful {}, harmful {}, identity {})",
                summary.baseline_accuracy,
                summary.clarified_accuracy,
                summary.useful,
                summary.harmful,
                if summary.flip_identity_holds { "ok" } else { "VIOLATED" }
            );
        }
        Commands::Report { runs, out } => {
            let dirs: Vec<&std::path::Path> = runs.iter().map(|p| p.as_path()).collect();
            let records = load_run_records(&dirs)?;
            let report = build_report(&records);
            std::fs::create_dir_all(&out).map_err(|source| RunError::Io {
                path: out.display().to_string(),
                source,
            })?;
            for (name, contents) in [
                (BEST_SETUP_CSV, &report.best_setup_csv),
                (IMPROVEMENT_CSV, &report.improvement_csv),
                (REPORT_TXT, &report.report_txt),
            ] {
                let path = out.join(name);
                std::fs::write(&path, contents).map_err(|source| RunError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            print!("{}", report.report_txt);
        }
    }
    Ok(())
}

fn run_kb(command: KbCommands) -> Result<(), RunError> {
    match command {
        KbCommands::IngestGraph { dump, templates, out } => {
            let templates = match templates {
                Some(path) => {
                    let raw = std::fs::read(&path).map_err(|source| RunError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                    serde_json::from_slice(&raw)?
                }
                None => default_relation_templates(),
            };
            let graph = ConceptGraph::from_dump(&dump, templates)?;
            graph.save_index(&out)?;
            println!("{} edges -> {}", graph.edges().len(), out.display());
        }
        KbCommands::IngestNgrams { dump, out } => {
            let table = NgramTable::from_dump(&dump)?;
            table.save_index(&out)?;
            println!("{} fragments -> {}", table.len(), out.display());
        }
        KbCommands::QueryGraph { index, from, to } => {
            let graph = ConceptGraph::load_index(&index)?;
            let inst = pair_instance(&from, &to);
            for cl in graph.clarifications(&inst, 2) {
                println!("{}", cl.text);
            }
        }
        KbCommands::QueryNgrams {
            index,
            term_a,
            term_b,
            min_freq,
            top_k,
        } => {
            let table = NgramTable::load_index(&index)?;
            for (fragment, count) in table.pair_fragments(&term_a, &term_b, min_freq, top_k) {
                println!("{count}\t{fragment}");
            }
        }
    }
    Ok(())
}

/// Synthetic two-term instance for ad hoc kb queries.
fn pair_instance(from: &str, to: &str) -> stqa_core::Instance {
    stqa_core::Instance {
        id: "query".into(),
        context: Some(from.to_string()),
        question: None,
        question_kind: None,
        choices: vec![to.to_string()],
        gold: None,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
