//! Declarative multi-step runs.
//!
//! Every step is a pure file transform: it reads its inputs, builds a set of
//! named artifacts in memory, and the runner writes them under
//! `workspace/<step>/`. A later step refers to an earlier step's output as
//! `@step` (its `corpus.jsonl`) or `@step/<file>`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::augment::{self, AugmentKind, AugmentationResponse, JudgeGate};
use crate::corpus::{self, load_corpus, load_manifests, pool_stats, Category, Embeddings, EmbeddingStore, Sample, Stage};
use crate::error::{Error, Result};
use crate::filter::{run_filters, FilterConfig};
use crate::format::{apply_policy, FormatPolicy};
use crate::mix::{check_constraints, compose_stage, distribution_report, MixConstraints};
use crate::pack::{self, CharTokenizer, PackMethod, SeparatorPolicy};
use crate::select::{quota_for_source, select_subset, SelectConfig};
use crate::similarity::{self, Admission};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub name: String,
    pub op: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workspace")]
    pub workspace: PathBuf,
    pub steps: Vec<StepSpec>,
}

fn default_workspace() -> PathBuf {
    PathBuf::from("workspace")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRefs {
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestParams {
    pub corpus: String,
    #[serde(default)]
    pub embeddings: EmbeddingRefs,
}

fn default_dedup() -> f64 {
    similarity::DEFAULT_DEDUP_THRESHOLD
}

fn default_source_threshold() -> f64 {
    similarity::DEFAULT_SOURCE_THRESHOLD
}

/// `new` and `pool` are manifest files; vectors come from their
/// embedding paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreParams {
    pub new: String,
    pub pool: String,
    pub category: Category,
    #[serde(default = "default_dedup")]
    pub dedup_threshold: f64,
    #[serde(default = "default_source_threshold")]
    pub source_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterParams {
    pub input: String,
    #[serde(default)]
    pub config: FilterConfig,
    #[serde(default)]
    pub embeddings: EmbeddingRefs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectParams {
    pub input: String,
    /// Defaults to the step name.
    #[serde(default)]
    pub source_name: Option<String>,
    #[serde(default)]
    pub image_embeddings: Option<String>,
    #[serde(default)]
    pub quota_override: Option<u64>,
    #[serde(default)]
    pub config: SelectConfig,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatParams {
    pub input: String,
    /// A policy without an explicit `seed` uses the run seed.
    #[serde(default)]
    pub policy: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentAction {
    Emit,
    EmitJudge,
    Apply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    pub input: String,
    pub action: AugmentAction,
    #[serde(default)]
    pub kind: Option<AugmentKind>,
    /// Restrict emission to these categories; empty means all.
    #[serde(default)]
    pub categories: Vec<Category>,
    #[serde(default)]
    pub responses: Option<String>,
    #[serde(default)]
    pub verdicts: Option<String>,
    #[serde(default)]
    pub gate: JudgeGate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixParams {
    pub manifests: String,
    pub stage: Stage,
    #[serde(default)]
    pub constraints: MixConstraints,
}

fn default_delta() -> usize {
    pack::DEFAULT_DELTA
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackParams {
    pub input: String,
    /// Max length; falls back to the stage preset.
    #[serde(default)]
    pub capacity: Option<u64>,
    #[serde(default)]
    pub stage: Option<Stage>,
    #[serde(default)]
    pub method: PackMethod,
    #[serde(default = "default_delta")]
    pub delta: usize,
    /// Pack consecutive chunks of this many items independently.
    #[serde(default)]
    pub chunk: Option<usize>,
    #[serde(default)]
    pub separator: SeparatorPolicy,
    #[serde(default = "default_true")]
    pub materialize: bool,
    /// Leave samples longer than the capacity out instead of failing.
    #[serde(default)]
    pub skip_oversize: bool,
}

impl PackParams {
    pub fn capacity(&self) -> Result<u64> {
        self.capacity
            .or(self.stage.map(Stage::max_length))
            .ok_or_else(|| Error::invalid("pack needs a capacity or a stage"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportParams {
    pub input: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepParams {
    Ingest(IngestParams),
    Score(ScoreParams),
    Filter(FilterParams),
    Select(SelectParams),
    Format(FormatParams),
    Augment(AugmentParams),
    Mix(MixParams),
    Pack(PackParams),
    Report(ReportParams),
}

pub const OPS: [&str; 9] = ["ingest", "score", "filter", "select", "format", "augment", "mix", "pack", "report"];

impl StepParams {
    pub fn parse(op: &str, params: &Value) -> Result<Self> {
        let params = if params.is_null() { Value::Object(Default::default()) } else { params.clone() };
        let bad = |e: serde_json::Error| Error::invalid(format!("{op} params: {e}"));
        let parsed = match op {
            "ingest" => StepParams::Ingest(serde_json::from_value(params).map_err(bad)?),
            "score" => StepParams::Score(serde_json::from_value(params).map_err(bad)?),
            "filter" => StepParams::Filter(serde_json::from_value(params).map_err(bad)?),
            "select" => StepParams::Select(serde_json::from_value(params).map_err(bad)?),
            "format" => StepParams::Format(serde_json::from_value(params).map_err(bad)?),
            "augment" => StepParams::Augment(serde_json::from_value(params).map_err(bad)?),
            "mix" => StepParams::Mix(serde_json::from_value(params).map_err(bad)?),
            "pack" => StepParams::Pack(serde_json::from_value(params).map_err(bad)?),
            "report" => StepParams::Report(serde_json::from_value(params).map_err(bad)?),
            _ => return Err(Error::invalid(format!("unknown step op {op:?}"))),
        };
        parsed.check()?;
        Ok(parsed)
    }

    /// Semantic checks that need no file access.
    fn check(&self) -> Result<()> {
        match self {
            StepParams::Filter(p) => p.config.validate(),
            StepParams::Format(p) => format_policy(&p.policy, 0).map(|_| ()),
            StepParams::Select(p) => p.config.rules.validate(),
            StepParams::Mix(p) => p.constraints.validate(),
            StepParams::Pack(p) => {
                p.capacity()?;
                if p.chunk == Some(0) {
                    return Err(Error::invalid("chunk must be at least 1"));
                }
                Ok(())
            }
            StepParams::Score(p) => {
                if !(p.dedup_threshold > 0.0 && p.dedup_threshold <= 1.0) {
                    return Err(Error::invalid("dedup_threshold must be in (0, 1]"));
                }
                Ok(())
            }
            StepParams::Augment(p) => match p.action {
                AugmentAction::Emit => match p.kind {
                    Some(AugmentKind::Cot | AugmentKind::Expand) => Ok(()),
                    _ => Err(Error::invalid("augment emit needs kind cot or expand")),
                },
                AugmentAction::EmitJudge if p.responses.is_none() => {
                    Err(Error::invalid("augment emit_judge needs responses"))
                }
                AugmentAction::Apply if p.responses.is_none() => Err(Error::invalid("augment apply needs responses")),
                _ => Ok(()),
            },
            StepParams::Ingest(_) | StepParams::Report(_) => Ok(()),
        }
    }

    /// Every file reference, labelled by parameter name.
    pub fn inputs(&self) -> Vec<(&'static str, &str)> {
        let mut v: Vec<(&'static str, &str)> = Vec::new();
        fn emb<'a>(v: &mut Vec<(&'static str, &'a str)>, e: &'a EmbeddingRefs) {
            if let Some(p) = &e.image {
                v.push(("embeddings.image", p));
            }
            if let Some(p) = &e.text {
                v.push(("embeddings.text", p));
            }
        }
        match self {
            StepParams::Ingest(p) => {
                v.push(("corpus", &p.corpus));
                emb(&mut v, &p.embeddings);
            }
            StepParams::Score(p) => {
                v.push(("new", &p.new));
                v.push(("pool", &p.pool));
            }
            StepParams::Filter(p) => {
                v.push(("input", &p.input));
                emb(&mut v, &p.embeddings);
            }
            StepParams::Select(p) => {
                v.push(("input", &p.input));
                if let Some(e) = &p.image_embeddings {
                    v.push(("image_embeddings", e));
                }
            }
            StepParams::Format(p) => v.push(("input", &p.input)),
            StepParams::Augment(p) => {
                v.push(("input", &p.input));
                if let Some(r) = &p.responses {
                    v.push(("responses", r));
                }
                if let Some(r) = &p.verdicts {
                    v.push(("verdicts", r));
                }
            }
            StepParams::Mix(p) => v.push(("manifests", &p.manifests)),
            StepParams::Pack(p) => v.push(("input", &p.input)),
            StepParams::Report(p) => v.push(("input", &p.input)),
        }
        v
    }
}

fn format_policy(value: &Value, seed: u64) -> Result<FormatPolicy> {
    let mut value = if value.is_null() { Value::Object(Default::default()) } else { value.clone() };
    if let Value::Object(map) = &mut value {
        map.entry("seed").or_insert(Value::from(seed));
    }
    let policy: FormatPolicy =
        serde_json::from_value(value).map_err(|e| Error::invalid(format!("format policy: {e}")))?;
    policy.validate()?;
    Ok(policy)
}

/// Named output files of one step, in a fixed order.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Artifacts(pub BTreeMap<String, Vec<u8>>);

impl Artifacts {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.0.insert(name.to_string(), text.into_bytes());
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        self.0.insert(name.to_string(), out.into_bytes());
        Ok(())
    }

    fn corpus(&mut self, pool: &[Sample]) {
        self.0
            .insert("corpus.jsonl".to_string(), corpus::serialize_corpus(pool).into_bytes());
    }

    fn text(&mut self, name: &str, text: String) {
        self.0.insert(name.to_string(), text.into_bytes());
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.0.get(name).map(Vec::as_slice)
    }

    /// Write every artifact into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.0 {
            corpus::write_bytes(&dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Turns parameter strings into paths.
pub struct Resolver {
    pub base: PathBuf,
    pub workspace: PathBuf,
}

impl Resolver {
    pub fn resolve(&self, reference: &str) -> PathBuf {
        if let Some(step) = reference.strip_prefix('@') {
            return match step.split_once('/') {
                Some((name, file)) => self.workspace.join(name).join(file),
                None => self.workspace.join(step).join("corpus.jsonl"),
            };
        }
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub struct StepContext<'a> {
    pub name: &'a str,
    pub seed: u64,
    pub strict: bool,
    pub resolver: &'a Resolver,
}

fn load_embeddings(ctx: &StepContext<'_>, refs: &EmbeddingRefs) -> Result<Option<Embeddings>> {
    if refs.image.is_none() && refs.text.is_none() {
        return Ok(None);
    }
    let image = refs.image.as_deref().map(|p| ctx.resolver.resolve(p));
    let text = refs.text.as_deref().map(|p| ctx.resolver.resolve(p));
    Embeddings::load(image.as_deref(), text.as_deref()).map(Some)
}

#[derive(Serialize)]
struct Coverage {
    dim: usize,
    vectors: usize,
    samples_missing: usize,
}

fn coverage(store: &Option<EmbeddingStore>, pool: &[Sample]) -> Option<Coverage> {
    store.as_ref().map(|s| Coverage {
        dim: s.dim(),
        vectors: s.len(),
        samples_missing: pool.iter().filter(|x| s.get(&x.id).is_none()).count(),
    })
}

fn load_sources(ctx: &StepContext<'_>, manifest: &str) -> Result<(Vec<Sample>, Embeddings)> {
    let manifests = load_manifests(ctx.resolver.resolve(manifest))?;
    let mut pool = Vec::new();
    let mut merged = Embeddings::default();
    for m in &manifests {
        pool.extend(load_corpus(&m.corpus_path)?);
        let e = m.load_embeddings()?;
        for (slot, part) in [(&mut merged.image, e.image), (&mut merged.text, e.text)] {
            let Some(part) = part else { continue };
            match slot {
                Some(acc) => {
                    for (id, v) in part.iter() {
                        acc.insert(id, v)?;
                    }
                }
                None => *slot = Some(part),
            }
        }
    }
    corpus::check_unique_ids(&pool)?;
    Ok((pool, merged))
}

/// Run one step and return its artifacts without touching the workspace.
pub fn execute_step(params: &StepParams, ctx: &StepContext<'_>) -> Result<Artifacts> {
    let r = ctx.resolver;
    let mut out = Artifacts::default();
    match params {
        StepParams::Ingest(p) => {
            let pool = load_corpus(r.resolve(&p.corpus))?;
            let emb = load_embeddings(ctx, &p.embeddings)?.unwrap_or_default();
            #[derive(Serialize)]
            struct IngestReport {
                stats: corpus::PoolStats,
                #[serde(skip_serializing_if = "Option::is_none")]
                image_embeddings: Option<Coverage>,
                #[serde(skip_serializing_if = "Option::is_none")]
                text_embeddings: Option<Coverage>,
            }
            out.json(
                "stats.json",
                &IngestReport {
                    stats: pool_stats(&pool),
                    image_embeddings: coverage(&emb.image, &pool),
                    text_embeddings: coverage(&emb.text, &pool),
                },
            )?;
            out.corpus(&pool);
        }
        StepParams::Score(p) => {
            let (new, new_emb) = load_sources(ctx, &p.new)?;
            let (pool, pool_emb) = load_sources(ctx, &p.pool)?;
            let new_in = similarity::gather_inputs(&new, &new_emb, p.category)?;
            let pool_in = similarity::gather_inputs(&pool, &pool_emb, p.category)?;
            let name = Path::new(&p.new)
                .file_stem()
                .map_or_else(|| p.new.clone(), |s| s.to_string_lossy().into_owned());
            let result = similarity::dedup(&name, p.category, &new_in, &pool_in, p.dedup_threshold)?;
            let admission = similarity::source_admission(&result.report, p.source_threshold);
            let removed: HashSet<&str> = result.removed.iter().map(String::as_str).collect();
            let kept: Vec<Sample> = new.iter().filter(|s| !removed.contains(s.id.as_str())).cloned().collect();
            #[derive(Serialize)]
            struct Decision<'a> {
                admission: Admission,
                source_threshold: f64,
                kept: &'a [String],
                removed: &'a [String],
            }
            out.json("report.json", &result.report)?;
            out.json(
                "dedup.json",
                &Decision {
                    admission,
                    source_threshold: p.source_threshold,
                    kept: &result.kept,
                    removed: &result.removed,
                },
            )?;
            out.corpus(&kept);
        }
        StepParams::Filter(p) => {
            let pool = load_corpus(r.resolve(&p.input))?;
            let emb = load_embeddings(ctx, &p.embeddings)?;
            let outcome = run_filters(&pool, emb.as_ref(), &p.config);
            out.corpus(&outcome.kept);
            out.jsonl("verdicts.jsonl", &outcome.verdicts)?;
            out.json("summary.json", &outcome.summary)?;
        }
        StepParams::Select(p) => {
            let pool = load_corpus(r.resolve(&p.input))?;
            let store = p
                .image_embeddings
                .as_deref()
                .map(|e| EmbeddingStore::load(r.resolve(e)))
                .transpose()?;
            let quota = quota_for_source(pool.len() as u64, &p.config.rules, p.quota_override)?;
            let name = p.source_name.as_deref().unwrap_or(ctx.name);
            let seed = p.seed.unwrap_or(ctx.seed);
            let plan = select_subset(name, &pool, store.as_ref(), quota as usize, &p.config, seed)?;
            let chosen: HashSet<&str> = plan.selected.iter().map(String::as_str).collect();
            let subset: Vec<Sample> = pool.iter().filter(|s| chosen.contains(s.id.as_str())).cloned().collect();
            out.corpus(&subset);
            out.json("plan.json", &plan)?;
        }
        StepParams::Format(p) => {
            let pool = load_corpus(r.resolve(&p.input))?;
            let policy = format_policy(&p.policy, ctx.seed)?;
            out.corpus(&apply_policy(&pool, &policy));
        }
        StepParams::Augment(p) => {
            let pool = load_corpus(r.resolve(&p.input))?;
            let responses: Vec<AugmentationResponse> = match &p.responses {
                Some(f) => corpus::read_jsonl(r.resolve(f))?,
                None => Vec::new(),
            };
            match p.action {
                AugmentAction::Emit => {
                    let kind = p.kind.ok_or_else(|| Error::invalid("augment emit needs a kind"))?;
                    let cats: HashSet<Category> = p.categories.iter().copied().collect();
                    let reqs = augment::emit_requests(&pool, kind, |s| cats.is_empty() || cats.contains(&s.category))?;
                    out.jsonl("requests.jsonl", &reqs)?;
                }
                AugmentAction::EmitJudge => {
                    let reqs = augment::emit_judge_requests(&pool, &responses)?;
                    out.jsonl("requests.jsonl", &reqs)?;
                }
                AugmentAction::Apply => {
                    let verdicts: Vec<AugmentationResponse> = match &p.verdicts {
                        Some(f) => corpus::read_jsonl(r.resolve(f))?,
                        None => Vec::new(),
                    };
                    let (pool, stats) = augment::apply_responses(&pool, &responses, &verdicts, p.gate)?;
                    out.corpus(&pool);
                    out.json("stats.json", &stats)?;
                }
            }
        }
        StepParams::Mix(p) => {
            let manifests = load_manifests(r.resolve(&p.manifests))?;
            let mut constraints = p.constraints.clone();
            constraints.strict |= ctx.strict;
            let (pool, report) = compose_stage(&manifests, p.stage, &constraints, ctx.seed)?;
            out.corpus(&pool);
            out.text("report.txt", report.render_table());
            out.json("report.json", &report)?;
        }
        StepParams::Pack(p) => {
            let pool = load_corpus(r.resolve(&p.input))?;
            let capacity = p.capacity()?;
            let mut items = pack::expand_pool(&pool, &CharTokenizer);
            let mut oversize: Vec<String> = Vec::new();
            if p.skip_oversize {
                items.retain(|i| {
                    let fits = i.length <= capacity;
                    if !fits && oversize.last() != Some(&i.id) {
                        oversize.push(i.id.clone());
                    }
                    fits
                });
            }
            let plan = match p.chunk {
                Some(c) => pack::chunked_pack(&items, p.method, capacity, p.delta, c)?,
                None => {
                    let mut plan = pack::pack_items(&items, p.method, capacity, p.delta)?;
                    plan.stats = pack::pack_stats(&plan).ok();
                    plan
                }
            };
            #[derive(Serialize)]
            struct PackSummary<'a> {
                method: PackMethod,
                capacity: u64,
                delta: usize,
                items: usize,
                knapsacks: usize,
                dropped_empty: usize,
                stats: &'a Option<pack::PackStats>,
                oversize: &'a [String],
            }
            out.json(
                "stats.json",
                &PackSummary {
                    method: plan.method,
                    capacity,
                    delta: plan.delta,
                    items: items.len(),
                    knapsacks: plan.knapsacks.len(),
                    dropped_empty: plan.dropped_empty,
                    stats: &plan.stats,
                    oversize: &oversize,
                },
            )?;
            if p.materialize {
                let records = pack::materialize_packs(&pool, &plan, &p.separator, &CharTokenizer)?;
                out.jsonl("packs.jsonl", &records)?;
            }
            out.json("plan.json", &plan)?;
        }
        StepParams::Report(p) => {
            let pool = load_corpus(r.resolve(&p.input))?;
            let mut report = distribution_report(&pool)?;
            check_constraints(
                &mut report,
                &MixConstraints {
                    strict: false,
                    ..Default::default()
                },
            )?;
            #[derive(Serialize)]
            struct Full<'a> {
                distribution: &'a crate::mix::MixReport,
                stats: corpus::PoolStats,
            }
            out.json(
                "report.json",
                &Full {
                    distribution: &report,
                    stats: pool_stats(&pool),
                },
            )?;
            out.text("report.txt", report.render_table());
        }
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub param: String,
    pub reference: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    pub op: String,
    pub params: Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
}

/// Enough to rerun every step: parameters, seeds, tool version and content
/// hashes of all inputs and outputs. Paths are kept as written in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub strict: bool,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory that relative paths in the config resolve against.
    pub base_dir: PathBuf,
    pub workspace: Option<PathBuf>,
    pub seed: Option<u64>,
    pub strict: bool,
}

/// Parse and check every step before anything runs.
pub fn validate(config: &PipelineConfig, resolver: &Resolver) -> Result<Vec<StepParams>> {
    if config.steps.is_empty() {
        return Err(Error::invalid("pipeline has no steps"));
    }
    let mut earlier: HashSet<&str> = HashSet::new();
    let mut parsed = Vec::with_capacity(config.steps.len());
    for step in &config.steps {
        let wrap = |e: Error| match e {
            Error::InvalidArgument(m) => Error::invalid(format!("step {}: {m}", step.name)),
            other => Error::invalid(format!("step {}: {other}", step.name)),
        };
        let bad_name = step.name.is_empty()
            || step.name.starts_with('.')
            || step.name.contains(['/', '\\', '@']);
        if bad_name {
            return Err(wrap(Error::invalid(format!("invalid step name {:?}", step.name))));
        }
        if earlier.contains(step.name.as_str()) {
            return Err(wrap(Error::invalid(format!("duplicate step name {:?}", step.name))));
        }
        let params = StepParams::parse(&step.op, &step.params).map_err(wrap)?;
        for (param, reference) in params.inputs() {
            if let Some(target) = reference.strip_prefix('@') {
                let target = target.split('/').next().unwrap_or_default();
                if !earlier.contains(target) {
                    return Err(wrap(Error::invalid(format!(
                        "{param} refers to {reference:?}, which is not an earlier step"
                    ))));
                }
            } else if !resolver.resolve(reference).exists() {
                return Err(wrap(Error::invalid(format!("{param}: no such file {reference:?}"))));
            }
        }
        earlier.insert(&step.name);
        parsed.push(params);
    }
    Ok(parsed)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    corpus::read_json(path).map_err(|e| match e {
        Error::Json(j) => Error::invalid(format!("{}: {j}", path.display())),
        other => other,
    })
}

/// Run all steps in order. A failing step aborts the run; artifacts of
/// finished steps stay in the workspace.
pub fn run_pipeline(config: &PipelineConfig, opts: &RunOptions) -> Result<RunManifest> {
    let workspace = opts.workspace.clone().unwrap_or_else(|| config.workspace.clone());
    let workspace = if workspace.is_absolute() { workspace } else { opts.base_dir.join(workspace) };
    let resolver = Resolver {
        base: opts.base_dir.clone(),
        workspace: workspace.clone(),
    };
    let seed = opts.seed.unwrap_or(config.seed);
    let steps = validate(config, &resolver)?;

    let mut manifest = RunManifest {
        tool: "corpusforge".into(),
        version: crate::VERSION.into(),
        seed,
        strict: opts.strict,
        steps: Vec::new(),
    };
    for (spec, params) in config.steps.iter().zip(&steps) {
        let wrap = |e: Error| Error::Step {
            step: spec.name.clone(),
            source: Box::new(e),
        };
        log::info!("step {} ({})", spec.name, spec.op);
        let mut inputs = Vec::new();
        for (param, reference) in params.inputs() {
            let sha256 = hash_file(&resolver.resolve(reference)).map_err(wrap)?;
            inputs.push(InputRecord {
                param: param.into(),
                reference: reference.into(),
                sha256,
            });
        }
        let ctx = StepContext {
            name: &spec.name,
            seed,
            strict: opts.strict,
            resolver: &resolver,
        };
        let artifacts = execute_step(params, &ctx).map_err(wrap)?;
        let dir = workspace.join(&spec.name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
        }
        artifacts.write_all(&dir).map_err(wrap)?;
        manifest.steps.push(StepRecord {
            name: spec.name.clone(),
            op: spec.op.clone(),
            params: spec.params.clone(),
            inputs,
            outputs: artifacts
                .0
                .iter()
                .map(|(file, bytes)| OutputRecord {
                    file: file.clone(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
        });
    }
    corpus::write_json(&workspace.join(RUN_MANIFEST), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use serde_json::json;

    fn config(steps: Value) -> PipelineConfig {
        serde_json::from_value(json!({"seed": 1, "workspace": "ws", "steps": steps})).unwrap()
    }

    #[test]
    fn unknown_op_fails_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(json!([{"name": "a", "op": "frobnicate"}]));
        let opts = RunOptions {
            base_dir: dir.path().into(),
            ..Default::default()
        };
        let err = run_pipeline(&cfg, &opts).unwrap_err();
        assert!(err.to_string().contains("unknown step op"));
        assert!(err.is_validation());
        assert!(!dir.path().join("ws").exists());
    }

    #[test]
    fn forward_reference_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(json!([{"name": "r", "op": "report", "params": {"input": "@later"}}]));
        let opts = RunOptions {
            base_dir: dir.path().into(),
            ..Default::default()
        };
        assert!(run_pipeline(&cfg, &opts).is_err());
    }

    #[test]
    fn report_only() {
        let dir = tempfile::tempdir().unwrap();
        let pool = vec![text_sample("a", "q", "x"), text_sample("b", "q", "y")];
        corpus::write_corpus(&pool, dir.path().join("in.jsonl")).unwrap();
        let cfg = config(json!([{"name": "report", "op": "report", "params": {"input": "in.jsonl"}}]));
        let opts = RunOptions {
            base_dir: dir.path().into(),
            ..Default::default()
        };
        let m = run_pipeline(&cfg, &opts).unwrap();
        assert_eq!(m.steps.len(), 1);
        assert!(dir.path().join("ws/report/report.json").exists());
        assert!(dir.path().join("ws").join(RUN_MANIFEST).exists());
    }

    #[test]
    fn step_failure_names_step() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.jsonl"), "{not json}\n").unwrap();
        let cfg = config(json!([{"name": "load", "op": "ingest", "params": {"corpus": "bad.jsonl"}}]));
        let opts = RunOptions {
            base_dir: dir.path().into(),
            ..Default::default()
        };
        let err = run_pipeline(&cfg, &opts).unwrap_err();
        assert!(matches!(err, Error::Step { ref step, .. } if step == "load"));
    }

    #[test]
    fn unknown_param_rejected() {
        assert!(StepParams::parse("report", &json!({"input": "x", "bogus": 1})).is_err());
        assert!(StepParams::parse("pack", &json!({"input": "x"})).is_err());
        assert!(StepParams::parse("pack", &json!({"input": "x", "stage": "stage2"})).is_ok());
    }
}
