use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use corpusforge::augment::{AugmentKind, AugmentationRequest, InferenceClient, JudgeGate};
use corpusforge::corpus::{self, Category, Stage};
use corpusforge::filter::FilterConfig;
use corpusforge::mix::MixConstraints;
use corpusforge::pack::{PackMethod, SeparatorPolicy};
use corpusforge::pipeline::{
    self, execute_step, AugmentAction, AugmentParams, Artifacts, EmbeddingRefs, FilterParams, FormatParams,
    IngestParams, MixParams, PackParams, ReportParams, Resolver, RunOptions, ScoreParams, SelectParams,
    StepContext, StepParams,
};
use corpusforge::select::{QuotaRules, SelectConfig};

#[derive(Parser)]
#[command(name = "corpusforge", version, about = "Curate, mix and pack multimodal training corpora")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Where outputs go when no explicit path is given (default
    /// `workspace`; for `pipeline`, the config's own workspace).
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Turn constraint warnings into errors.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write its canonical form plus statistics.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        embeddings: EmbeddingFlags,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Similarity of a new source against the pool, with dedup.
    Score {
        /// Manifest of the new source(s).
        #[arg(long)]
        new: PathBuf,
        /// Manifest of the existing pool.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        category: Category,
        #[arg(long, default_value_t = corpusforge::similarity::DEFAULT_DEDUP_THRESHOLD)]
        dedup_threshold: f64,
        #[arg(long, default_value_t = corpusforge::similarity::DEFAULT_SOURCE_THRESHOLD)]
        source_threshold: f64,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Kept new-source samples.
        #[arg(long)]
        kept: Option<PathBuf>,
    },
    /// Drop samples that trip quality rules.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        embeddings: EmbeddingFlags,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Pick a quota-sized subset, clustered on image embeddings where apt.
    Select {
        #[arg(long = "in")]
        input: PathBuf,
        /// Image embedding store.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Full selection config (rules, cluster size, boosts).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        quota: Option<u64>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Normalize answer formatting.
    Format {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prompt-templated augmentation.
    Augment {
        #[command(subcommand)]
        action: AugmentCmd,
    },
    /// Compose a training stage from manifests.
    Mix {
        #[arg(long)]
        manifests: PathBuf,
        #[arg(long)]
        stage: Stage,
        #[arg(long)]
        text_only_floor: Option<f64>,
        /// Constraint JSON; flags override it.
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Pack samples into fixed-capacity sequences.
    Pack {
        #[arg(long = "in")]
        input: PathBuf,
        /// Max packed length; defaults to the stage preset.
        #[arg(long = "L")]
        capacity: Option<u64>,
        #[arg(long)]
        stage: Option<Stage>,
        #[arg(long, default_value_t = corpusforge::pack::DEFAULT_DELTA)]
        delta: usize,
        #[arg(long, default_value = "balanced")]
        method: PackMethod,
        #[arg(long)]
        chunk: Option<usize>,
        /// Put all members into one conversation, each preceded by this
        /// marker (`{id}` is replaced with the sample id).
        #[arg(long)]
        inline_marker: Option<String>,
        #[arg(long)]
        skip_oversize: bool,
        /// Packed records (JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Category distribution and pool statistics.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a multi-step config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct EmbeddingFlags {
    #[arg(long)]
    image_embeddings: Option<PathBuf>,
    #[arg(long)]
    text_embeddings: Option<PathBuf>,
}

impl EmbeddingFlags {
    fn refs(&self) -> EmbeddingRefs {
        EmbeddingRefs {
            image: self.image_embeddings.as_ref().map(|p| path_str(p)),
            text: self.text_embeddings.as_ref().map(|p| path_str(p)),
        }
    }
}

#[derive(Subcommand)]
enum AugmentCmd {
    /// Write CoT or Expand requests.
    Emit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: AugmentKind,
        /// Only samples of these categories.
        #[arg(long = "category")]
        categories: Vec<Category>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write judge requests for generated answers.
    Judge {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fold responses (and judge verdicts) back into the corpus.
    Apply {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// Apply CoT rewrites without a judge verdict.
        #[arg(long)]
        no_cot_gate: bool,
        /// Require a judge verdict for expansions too.
        #[arg(long)]
        gate_expand: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Send requests to the inference endpoint from the environment.
    Run {
        #[arg(long)]
        requests: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[arg(long)]
        model: Option<String>,
    },
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(corpus::read_json(p)?),
        None => Ok(T::default()),
    }
}

struct Runner<'a> {
    cli: &'a Cli,
    resolver: Resolver,
}

impl Runner<'_> {
    /// Run one step; artifacts go to the given paths or, failing that,
    /// to `<workspace>/<step>/`.
    fn run(&self, step: &str, params: StepParams, targets: &[(&str, Option<&PathBuf>)]) -> Result<Artifacts> {
        let ctx = StepContext {
            name: step,
            seed: self.cli.seed,
            strict: self.cli.strict,
            resolver: &self.resolver,
        };
        for (param, reference) in params.inputs() {
            let path = self.resolver.resolve(reference);
            if !path.exists() {
                return Err(corpusforge::Error::InvalidArgument(format!("{param}: no such file {}", path.display())).into());
            }
        }
        let artifacts = execute_step(&params, &ctx)?;
        let default_dir = self.resolver.workspace.join(step);
        for (name, bytes) in &artifacts.0 {
            let target = targets
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, p)| p.cloned())
                .unwrap_or_else(|| default_dir.join(name));
            if let Some(dir) = target.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(&target, bytes).with_context(|| format!("writing {}", target.display()))?;
            log::info!("wrote {}", target.display());
        }
        Ok(artifacts)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let runner = Runner {
        cli,
        resolver: Resolver {
            base: PathBuf::new(),
            workspace: cli.workspace.clone().unwrap_or_else(|| PathBuf::from("workspace")),
        },
    };
    match &cli.command {
        Command::Ingest {
            input,
            embeddings,
            out,
            stats,
        } => {
            let params = StepParams::Ingest(IngestParams {
                corpus: path_str(input),
                embeddings: embeddings.refs(),
            });
            runner.run("ingest", params, &[("corpus.jsonl", out.as_ref()), ("stats.json", stats.as_ref())])?;
        }
        Command::Score {
            new,
            pool,
            category,
            dedup_threshold,
            source_threshold,
            out,
            kept,
        } => {
            let params = StepParams::Score(ScoreParams {
                new: path_str(new),
                pool: path_str(pool),
                category: *category,
                dedup_threshold: *dedup_threshold,
                source_threshold: *source_threshold,
            });
            let artifacts = runner.run("score", params, &[("report.json", out.as_ref()), ("corpus.jsonl", kept.as_ref())])?;
            if out.is_none() {
                print!("{}", String::from_utf8_lossy(artifacts.get("report.json").unwrap_or_default()));
            }
        }
        Command::Filter {
            input,
            config,
            embeddings,
            out,
            report,
            verdicts,
        } => {
            let config: FilterConfig = read_config(config.as_deref())?;
            let params = StepParams::Filter(FilterParams {
                input: path_str(input),
                config,
                embeddings: embeddings.refs(),
            });
            runner.run(
                "filter",
                params,
                &[
                    ("corpus.jsonl", out.as_ref()),
                    ("summary.json", report.as_ref()),
                    ("verdicts.jsonl", verdicts.as_ref()),
                ],
            )?;
        }
        Command::Select {
            input,
            embeddings,
            rules,
            config,
            quota,
            name,
            out,
            plan,
        } => {
            let mut config: SelectConfig = read_config(config.as_deref())?;
            if let Some(r) = rules {
                config.rules = read_config::<QuotaRules>(Some(r))?;
            }
            let params = StepParams::Select(SelectParams {
                input: path_str(input),
                source_name: name.clone(),
                image_embeddings: embeddings.as_deref().map(path_str),
                quota_override: *quota,
                config,
                seed: Some(cli.seed),
            });
            runner.run("select", params, &[("corpus.jsonl", out.as_ref()), ("plan.json", plan.as_ref())])?;
        }
        Command::Format { input, policy, out } => {
            let policy = match policy {
                Some(p) => corpus::read_json(p)?,
                None => serde_json::Value::Null,
            };
            let params = StepParams::Format(FormatParams {
                input: path_str(input),
                policy,
            });
            runner.run("format", params, &[("corpus.jsonl", out.as_ref())])?;
        }
        Command::Augment { action } => run_augment(&runner, action)?,
        Command::Mix {
            manifests,
            stage,
            text_only_floor,
            constraints,
            out,
            report,
        } => {
            let mut constraints: MixConstraints = read_config(constraints.as_deref())?;
            if let Some(f) = text_only_floor {
                constraints.text_only_floor = *f;
            }
            let params = StepParams::Mix(MixParams {
                manifests: path_str(manifests),
                stage: *stage,
                constraints,
            });
            let artifacts = runner.run("mix", params, &[("corpus.jsonl", out.as_ref()), ("report.json", report.as_ref())])?;
            eprint!("{}", String::from_utf8_lossy(artifacts.get("report.txt").unwrap_or_default()));
        }
        Command::Pack {
            input,
            capacity,
            stage,
            delta,
            method,
            chunk,
            inline_marker,
            skip_oversize,
            out,
            stats,
            plan,
        } => {
            let separator = match inline_marker {
                Some(marker) => SeparatorPolicy::Inline { marker: marker.clone() },
                None => SeparatorPolicy::Segments,
            };
            let params = PackParams {
                input: path_str(input),
                capacity: *capacity,
                stage: *stage,
                method: *method,
                delta: *delta,
                chunk: *chunk,
                separator,
                materialize: true,
                skip_oversize: *skip_oversize,
            };
            params.capacity()?;
            runner.run(
                "pack",
                StepParams::Pack(params),
                &[
                    ("packs.jsonl", out.as_ref()),
                    ("stats.json", stats.as_ref()),
                    ("plan.json", plan.as_ref()),
                ],
            )?;
        }
        Command::Report { input, out } => {
            let params = StepParams::Report(ReportParams { input: path_str(input) });
            let artifacts = runner.run("report", params, &[("report.json", out.as_ref())])?;
            print!("{}", String::from_utf8_lossy(artifacts.get("report.txt").unwrap_or_default()));
        }
        Command::Pipeline { config } => {
            let cfg = pipeline::load_config(config)?;
            let base_dir = config
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map_or_else(PathBuf::new, Path::to_path_buf);
            let workspace = match &cli.workspace {
                Some(w) => Some(std::env::current_dir()?.join(w)),
                None => None,
            };
            let opts = RunOptions {
                base_dir,
                workspace,
                seed: Some(cli.seed),
                strict: cli.strict,
            };
            let manifest = pipeline::run_pipeline(&cfg, &opts)?;
            for step in &manifest.steps {
                eprintln!("{:<16} {:<8} {} output(s)", step.name, step.op, step.outputs.len());
            }
        }
    }
    Ok(())
}

fn run_augment(runner: &Runner<'_>, action: &AugmentCmd) -> Result<()> {
    let params = |input: &Path, action: AugmentAction| AugmentParams {
        input: path_str(input),
        action,
        kind: None,
        categories: Vec::new(),
        responses: None,
        verdicts: None,
        gate: JudgeGate::default(),
    };
    match action {
        AugmentCmd::Emit {
            input,
            kind,
            categories,
            out,
        } => {
            let mut p = params(input, AugmentAction::Emit);
            p.kind = Some(*kind);
            p.categories = categories.clone();
            runner.run("augment", StepParams::Augment(p), &[("requests.jsonl", out.as_ref())])?;
        }
        AugmentCmd::Judge { input, responses, out } => {
            let mut p = params(input, AugmentAction::EmitJudge);
            p.responses = Some(path_str(responses));
            runner.run("augment", StepParams::Augment(p), &[("requests.jsonl", out.as_ref())])?;
        }
        AugmentCmd::Apply {
            input,
            responses,
            verdicts,
            no_cot_gate,
            gate_expand,
            out,
            stats,
        } => {
            let mut p = params(input, AugmentAction::Apply);
            p.responses = Some(path_str(responses));
            p.verdicts = verdicts.as_deref().map(path_str);
            p.gate = JudgeGate {
                cot: !no_cot_gate,
                expand: *gate_expand,
            };
            runner.run(
                "augment",
                StepParams::Augment(p),
                &[("corpus.jsonl", out.as_ref()), ("stats.json", stats.as_ref())],
            )?;
        }
        AugmentCmd::Run {
            requests,
            out,
            parallelism,
            model,
        } => {
            let mut client = InferenceClient::from_env()?;
            client.model = model.clone();
            let reqs: Vec<AugmentationRequest> = corpus::read_jsonl(requests)?;
            let responses = corpusforge::augment::run_online(&client, &reqs, *parallelism)?;
            corpus::write_jsonl(&responses, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Library errors already spell out their causes.
            let lib = err.downcast_ref::<corpusforge::Error>();
            match lib {
                Some(e) => eprintln!("error: {e}"),
                None => eprintln!("error: {err:#}"),
            }
            let validation = lib.is_some_and(corpusforge::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 3 })
        }
    }
}
