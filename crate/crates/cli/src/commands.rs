use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use trafficdist::cluster::DbscanParams;
use trafficdist::corpus::{load_corpus, load_embeddings};
use trafficdist::harness::{
    self, calibrate_tie_threshold, verdict, Format, HarnessConfig, Report, TieThreshold, Verdict,
};
use trafficdist::lm::DEFAULT_DISCOUNT;
use trafficdist::manipulate::{load_lexicon, Lexicon, PlanFile};
use trafficdist::metric::{parse_metric_list, Metric, MetricConfig};
use trafficdist::{Corpus, EmbeddingTable, Error};

/// Share of failed tasks above which `validate` exits with code 3.
const MAX_FAILED_SHARE: f64 = 0.10;

#[derive(Parser, Debug)]
#[command(name = "trafficdist", version, about = "Bag-to-bag metrics for synthetic traffic and their validation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score generated bags against reference bags.
    Score(ScoreArgs),
    /// Build noisy rankings from the references and measure how well each metric recovers them.
    Validate(ValidateArgs),
    /// Decide per context which of two generated corpora is closer to the references.
    Compare(CompareArgs),
    /// Re-render a JSON validation report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct MetricArgs {
    /// Comma-separated metric names.
    #[arg(long, default_value = "cos_tf,cos_tfidf,inv_kl,pair_bleu3,align_bleu3")]
    metrics: String,
    /// Embedding JSONL, required by pair_sbert and align_sbert.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_bag_size: usize,
    #[arg(long, default_value_t = 0.4)]
    dbscan_eps: f64,
    #[arg(long, default_value_t = 2)]
    dbscan_min_pts: usize,
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    kn_discount: f64,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json, csv or md.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    references: PathBuf,
    /// Manipulation plan (JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Candidates per ranking; overrides the plan.
    #[arg(long)]
    levels: Option<usize>,
    /// Synonym lexicon (JSONL) for EDA replacements.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Corpus whose sentences form the NTI distractor pool; defaults to
    /// the other contexts of the references.
    #[arg(long)]
    distractors: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    references: PathBuf,
    /// Generated corpus A.
    #[arg(long)]
    generated: PathBuf,
    /// Generated corpus B.
    #[arg(long)]
    generated_b: PathBuf,
    /// Fixed tie threshold.
    #[arg(long, conflicts_with = "tie_rate")]
    tie_threshold: Option<f64>,
    /// Target tie rate; the threshold is calibrated per metric.
    #[arg(long)]
    tie_rate: Option<f64>,
    /// Calibration score differences (JSON array); defaults to this run's |A - B| differences.
    #[arg(long, requires = "tie_rate")]
    tie_diffs: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSON report written by `validate`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    PartialFailure { failed: usize, total: usize },
    Lib(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::PartialFailure { failed, total } => {
                write!(f, "{failed} of {total} tasks failed (more than {:.0}%)", MAX_FAILED_SHARE * 100.0)
            }
            CliError::Lib(e) => write!(f, "{}: {e}", e.kind_name()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

pub fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Format { .. }
        | Error::Span { .. }
        | Error::Dimension { .. }
        | Error::Value { .. }
        | Error::MissingEmbedding(_)
        | Error::EmptyText
        | Error::EmptyBag => 2,
        Error::Io { source, .. } if source.kind != std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

type CliResult<T> = Result<T, CliError>;

/// Caps the worker pool when `TRAFFICDIST_THREADS` is set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("TRAFFICDIST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("TRAFFICDIST_THREADS must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn require_file(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{flag}: no such file {}", path.display())))
    }
}

fn parse_format(s: &str) -> CliResult<Format> {
    s.parse::<Format>().map_err(CliError::from)
}

struct Prepared {
    metrics: Vec<Metric>,
    embeddings: Option<EmbeddingTable>,
}

/// Checks everything that can be checked before loading corpora.
fn prepare(m: &MetricArgs) -> CliResult<Prepared> {
    let metrics = parse_metric_list(&m.metrics)?;
    if let Some(p) = &m.embeddings {
        require_file(p, "--embeddings")?;
    }
    if m.max_bag_size == 0 {
        return Err(CliError::Usage("--max-bag-size must be at least 1".into()));
    }
    let probe = MetricConfig {
        dbscan: DbscanParams {
            eps: m.dbscan_eps,
            min_pts: m.dbscan_min_pts,
        },
        kn_discount: m.kn_discount,
        seed: m.seed,
        embeddings: None,
    };
    let needs_embeddings = metrics.iter().any(Metric::needs_embeddings);
    if needs_embeddings && m.embeddings.is_none() {
        let name = metrics.iter().find(|x| x.needs_embeddings()).expect("checked");
        return Err(CliError::Usage(format!("metric {name} requires --embeddings")));
    }
    let no_sbert: Vec<Metric> = metrics.iter().copied().filter(|x| !x.needs_embeddings()).collect();
    probe.check(&no_sbert)?;
    Ok(Prepared { metrics, embeddings: None })
}

fn load_prepared_embeddings(p: &mut Prepared, m: &MetricArgs) -> CliResult<()> {
    if let Some(path) = &m.embeddings {
        let table = load_embeddings(path)?;
        if table.duplicate_ids > 0 {
            eprintln!("warning: {} duplicate embedding ids (last occurrence kept)", table.duplicate_ids);
        }
        p.embeddings = Some(table);
    }
    Ok(())
}

fn metric_config<'a>(m: &MetricArgs, embeddings: Option<&'a EmbeddingTable>) -> MetricConfig<'a> {
    MetricConfig {
        dbscan: DbscanParams {
            eps: m.dbscan_eps,
            min_pts: m.dbscan_min_pts,
        },
        kn_discount: m.kn_discount,
        seed: m.seed,
        embeddings,
    }
}

fn write_output(out: &OutputArgs, body: &str) -> CliResult<()> {
    match &out.out {
        Some(path) => fs::write(path, body).map_err(|e| CliError::Lib(Error::io(path, e))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Data(format!("writing stdout: {e}")))
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ScoreRow {
    context_id: String,
    metric: String,
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ScoreOutput {
    scores: Vec<ScoreRow>,
    skipped: Vec<String>,
}

/// Contexts present in every corpus, and the ones missing from at least one.
fn shared_contexts(corpora: &[&Corpus]) -> (Vec<String>, Vec<String>) {
    let mut all: BTreeMap<&str, usize> = BTreeMap::new();
    for c in corpora {
        for k in c.contexts.keys() {
            *all.entry(k.as_str()).or_insert(0) += 1;
        }
    }
    let (shared, skipped): (Vec<_>, Vec<_>) = all.into_iter().partition(|(_, n)| *n == corpora.len());
    (
        shared.into_iter().map(|(k, _)| k.to_string()).collect(),
        skipped.into_iter().map(|(k, _)| k.to_string()).collect(),
    )
}

/// Scores that abort the run rather than being reported per row.
fn is_fatal(e: &Error) -> bool {
    matches!(e, Error::MissingEmbedding(_) | Error::Usage(_))
}

fn cmd_score(a: ScoreArgs) -> CliResult<()> {
    let format = parse_format(&a.output.format)?;
    require_file(&a.references, "--references")?;
    require_file(&a.generated, "--generated")?;
    let mut prep = prepare(&a.metric)?;
    load_prepared_embeddings(&mut prep, &a.metric)?;
    let references = load_corpus(&a.references)?;
    let generated = load_corpus(&a.generated)?;
    let (shared, skipped) = shared_contexts(&[&references, &generated]);
    if shared.is_empty() {
        return Err(CliError::Usage("references and generated corpora share no context_id".into()));
    }
    let cfg = metric_config(&a.metric, prep.embeddings.as_ref());
    let hcfg = HarnessConfig {
        max_bag_size: a.metric.max_bag_size,
        seed: a.metric.seed,
        ..Default::default()
    };

    let mut rows = Vec::new();
    for ctx in &shared {
        let (r, g) = capped_pair(&references, &generated, ctx, &hcfg);
        for m in &prep.metrics {
            match m.score(&g, &r, &cfg) {
                Ok(s) => rows.push(ScoreRow {
                    context_id: ctx.clone(),
                    metric: m.name().into(),
                    score: Some(s),
                    error: None,
                }),
                Err(e) if is_fatal(&e) => return Err(e.into()),
                Err(e) => rows.push(ScoreRow {
                    context_id: ctx.clone(),
                    metric: m.name().into(),
                    score: None,
                    error: Some(e.kind_name().into()),
                }),
            }
        }
    }

    let body = match format {
        Format::Json => json(&ScoreOutput { scores: rows, skipped }),
        Format::Csv => {
            let mut s = String::from("context_id,metric,score,status\n");
            for r in &rows {
                let score = r.score.map(|x| x.to_string()).unwrap_or_default();
                let status = r.error.clone().unwrap_or_else(|| "ok".into());
                s.push_str(&format!("{},{},{score},{status}\n", csv_field(&r.context_id), r.metric));
            }
            for k in &skipped {
                s.push_str(&format!("{},,,skipped\n", csv_field(k)));
            }
            s
        }
        Format::Markdown => {
            let mut s = String::from("| context_id | metric | score |\n|---|---|---:|\n");
            for r in &rows {
                let score = match (&r.score, &r.error) {
                    (Some(x), _) => format!("{x:.4}"),
                    (None, Some(e)) => e.clone(),
                    _ => String::new(),
                };
                s.push_str(&format!("| {} | {} | {score} |\n", r.context_id, r.metric));
            }
            if !skipped.is_empty() {
                s.push_str(&format!("\nSkipped contexts: {}\n", skipped.join(", ")));
            }
            s
        }
    };
    write_output(&a.output, &body)
}

/// Reference and generated bags for `ctx`, both capped at the bag limit.
fn capped_pair(
    references: &Corpus,
    generated: &Corpus,
    ctx: &str,
    hcfg: &HarnessConfig,
) -> (trafficdist::Bag, trafficdist::Bag) {
    use trafficdist::corpus::downsample_bag;
    use trafficdist::rng::derive_seed;
    let seed = derive_seed(hcfg.seed, ctx);
    (
        downsample_bag(&references.contexts[ctx], hcfg.max_bag_size, derive_seed(seed, "reference")),
        downsample_bag(&generated.contexts[ctx], hcfg.max_bag_size, derive_seed(seed, "generated")),
    )
}

fn cmd_validate(a: ValidateArgs) -> CliResult<()> {
    let format = parse_format(&a.output.format)?;
    require_file(&a.references, "--references")?;
    require_file(&a.plan, "--plan")?;
    for (p, flag) in [(&a.lexicon, "--lexicon"), (&a.distractors, "--distractors")] {
        if let Some(p) = p {
            require_file(p, flag)?;
        }
    }
    let mut prep = prepare(&a.metric)?;
    let plans = PlanFile::load(&a.plan)?.plans(a.levels)?;
    let lexicon = match &a.lexicon {
        Some(p) => load_lexicon(p)?,
        None => Lexicon::new(),
    };
    load_prepared_embeddings(&mut prep, &a.metric)?;
    let mut corpus = load_corpus(&a.references)?;
    if let Some(p) = &a.distractors {
        let pool = load_corpus(p)?;
        corpus.distractors = pool.contexts.into_values().flat_map(|b| b.items).collect();
    }

    let cfg = metric_config(&a.metric, prep.embeddings.as_ref());
    let hcfg = HarnessConfig {
        max_bag_size: a.metric.max_bag_size,
        seed: a.metric.seed,
        ..Default::default()
    };
    let results = harness::validate(&corpus, &plans, &prep.metrics, &cfg, &hcfg, &lexicon)?;
    write_output(&a.output, &harness::report(&results, format)?)?;

    let total: usize = results.iter().map(|r| r.n_tasks + r.n_failed).sum();
    let failed: usize = results.iter().map(|r| r.n_failed).sum();
    if failed > 0 {
        let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &results {
            for (k, n) in &r.errors {
                *kinds.entry(k.as_str()).or_insert(0) += n;
            }
        }
        let summary: Vec<String> = kinds.iter().map(|(k, n)| format!("{k} x{n}")).collect();
        eprintln!("failed tasks: {failed} of {total} ({})", summary.join(", "));
    }
    if total > 0 && failed as f64 > MAX_FAILED_SHARE * total as f64 {
        return Err(CliError::PartialFailure { failed, total });
    }
    Ok(())
}

#[derive(Serialize)]
struct VerdictRow {
    context_id: String,
    score_a: f64,
    score_b: f64,
    verdict: Verdict,
}

#[derive(Serialize)]
struct MetricVerdicts {
    metric: String,
    tie_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tie_rate: Option<f64>,
    counts: BTreeMap<String, usize>,
    verdicts: Vec<VerdictRow>,
    errors: Vec<ScoreRow>,
}

#[derive(Serialize)]
struct CompareOutput {
    metrics: Vec<MetricVerdicts>,
    skipped: Vec<String>,
}

fn read_diffs(path: &Path) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<Vec<f64>>(&text).map_err(|e| {
        CliError::Lib(Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    })
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let format = parse_format(&a.output.format)?;
    require_file(&a.references, "--references")?;
    require_file(&a.generated, "--generated")?;
    require_file(&a.generated_b, "--generated-b")?;
    if let Some(p) = &a.tie_diffs {
        require_file(p, "--tie-diffs")?;
    }
    if let Some(t) = a.tie_threshold {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CliError::Usage(format!("--tie-threshold must be a nonnegative number, got {t}")));
        }
    }
    if let Some(r) = a.tie_rate {
        if !(0.0..=1.0).contains(&r) {
            return Err(CliError::Usage(format!("--tie-rate must lie in [0, 1], got {r}")));
        }
    }
    let mut prep = prepare(&a.metric)?;
    let supplied_diffs = a.tie_diffs.as_deref().map(read_diffs).transpose()?;
    load_prepared_embeddings(&mut prep, &a.metric)?;
    let references = load_corpus(&a.references)?;
    let gen_a = load_corpus(&a.generated)?;
    let gen_b = load_corpus(&a.generated_b)?;
    let (shared, skipped) = shared_contexts(&[&references, &gen_a, &gen_b]);
    if shared.is_empty() {
        return Err(CliError::Usage("the three corpora share no context_id".into()));
    }
    let cfg = metric_config(&a.metric, prep.embeddings.as_ref());
    let hcfg = HarnessConfig {
        max_bag_size: a.metric.max_bag_size,
        seed: a.metric.seed,
        ..Default::default()
    };

    let mut out = Vec::new();
    for m in &prep.metrics {
        let mut scored = Vec::new();
        let mut errors = Vec::new();
        for ctx in &shared {
            let (r, ga) = capped_pair(&references, &gen_a, ctx, &hcfg);
            let (_, gb) = capped_pair(&references, &gen_b, ctx, &hcfg);
            match m.score(&ga, &r, &cfg).and_then(|sa| Ok((sa, m.score(&gb, &r, &cfg)?))) {
                Ok((sa, sb)) => scored.push((ctx.clone(), sa, sb)),
                Err(e) if is_fatal(&e) => return Err(e.into()),
                Err(e) => errors.push(ScoreRow {
                    context_id: ctx.clone(),
                    metric: m.name().into(),
                    score: None,
                    error: Some(e.kind_name().into()),
                }),
            }
        }
        let tie = match (a.tie_threshold, a.tie_rate) {
            (Some(t), _) => TieThreshold {
                threshold: t,
                target_rate: f64::NAN,
            },
            (None, Some(rate)) => {
                let diffs: Vec<f64> = match &supplied_diffs {
                    Some(d) => d.clone(),
                    None => scored.iter().map(|(_, sa, sb)| (sa - sb).abs()).collect(),
                };
                if diffs.is_empty() {
                    TieThreshold {
                        threshold: 0.0,
                        target_rate: rate,
                    }
                } else {
                    calibrate_tie_threshold(&diffs, rate)?
                }
            }
            (None, None) => TieThreshold {
                threshold: 0.0,
                target_rate: f64::NAN,
            },
        };
        let verdicts: Vec<VerdictRow> = scored
            .into_iter()
            .map(|(context_id, score_a, score_b)| VerdictRow {
                context_id,
                score_a,
                score_b,
                verdict: verdict(score_a, score_b, tie.threshold),
            })
            .collect();
        let mut counts: BTreeMap<String, usize> = ["A", "B", "TIE"].iter().map(|k| (k.to_string(), 0)).collect();
        for v in &verdicts {
            let key = match v.verdict {
                Verdict::A => "A",
                Verdict::B => "B",
                Verdict::Tie => "TIE",
            };
            *counts.get_mut(key).expect("preset key") += 1;
        }
        out.push(MetricVerdicts {
            metric: m.name().into(),
            tie_threshold: tie.threshold,
            tie_rate: a.tie_rate,
            counts,
            verdicts,
            errors,
        });
    }

    let body = match format {
        Format::Json => json(&CompareOutput { metrics: out, skipped }),
        Format::Csv => {
            let mut s = String::from("metric,context_id,score_a,score_b,verdict,tie_threshold\n");
            for m in &out {
                for v in &m.verdicts {
                    s.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        m.metric,
                        csv_field(&v.context_id),
                        v.score_a,
                        v.score_b,
                        verdict_name(v.verdict),
                        m.tie_threshold
                    ));
                }
            }
            s
        }
        Format::Markdown => {
            let mut s = String::from("| metric | tie threshold | A | B | TIE |\n|---|---:|---:|---:|---:|\n");
            for m in &out {
                s.push_str(&format!(
                    "| {} | {:.4} | {} | {} | {} |\n",
                    m.metric, m.tie_threshold, m.counts["A"], m.counts["B"], m.counts["TIE"]
                ));
            }
            s
        }
    };
    write_output(&a.output, &body)
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::A => "A",
        Verdict::B => "B",
        Verdict::Tie => "TIE",
    }
}

fn cmd_report(a: ReportArgs) -> CliResult<()> {
    let format = parse_format(&a.output.format)?;
    require_file(&a.input, "--input")?;
    let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let report = Report::parse_json(&text).map_err(|e| {
        CliError::Lib(Error::Format {
            path: a.input.clone(),
            line: e.line(),
            message: format!("column {}: {e}", e.column()),
        })
    })?;
    write_output(&a.output, &report.render(format))
}
