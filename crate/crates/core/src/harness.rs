//! Metric validation: score ranking tasks, correlate with the true noise
//! order, aggregate, and calibrate tie thresholds for two-bag comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{downsample_bag, Bag, Corpus};
use crate::error::{Error, Result};
use crate::manipulate::{build_ranking, carrier_pool, popular_attributes, Lexicon, RankingPlan, RankingTask, Resources};
use crate::metric::{Metric, MetricConfig};
use crate::par;
use crate::rng::{derive_index, derive_seed};

/// Rank correlation result. `degenerate` is set when one side is constant,
/// in which case `rho` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    pub degenerate: bool,
}

/// 1-based average ranks. With `descending`, the largest value gets rank 1.
pub fn average_ranks(values: &[f64], descending: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        if descending {
            c.reverse()
        } else {
            c
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman ρ between metric scores (higher = better = rank 1) and true
/// ranks (1 = least noisy).
pub fn spearman(predicted_scores: &[f64], true_ranks: &[usize]) -> Result<Spearman> {
    if predicted_scores.len() != true_ranks.len() || predicted_scores.len() < 2 {
        return Err(Error::Usage(format!(
            "spearman needs two equal-length sequences of length >= 2, got {} and {}",
            predicted_scores.len(),
            true_ranks.len()
        )));
    }
    if let Some(bad) = predicted_scores.iter().find(|x| !x.is_finite()) {
        return Err(Error::Usage(format!("non-finite score {bad}")));
    }
    let p = average_ranks(predicted_scores, true);
    let t: Vec<f64> = true_ranks.iter().map(|&r| r as f64).collect();
    let t = average_ranks(&t, false);
    let n = p.len() as f64;
    let (mp, mt) = (p.iter().sum::<f64>() / n, t.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    for (a, b) in p.iter().zip(&t) {
        cov += (a - mp) * (b - mt);
        vp += (a - mp) * (a - mp);
        vt += (b - mt) * (b - mt);
    }
    if vp == 0.0 || vt == 0.0 {
        return Ok(Spearman { rho: 0.0, degenerate: true });
    }
    Ok(Spearman {
        rho: (cov / (vp * vt).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| compensated_sum(values.iter().copied()) / values.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Inclusive reference-size range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct BucketEdge {
    pub lo: usize,
    pub hi: usize,
}

impl BucketEdge {
    pub fn label(&self) -> String {
        if self.hi == usize::MAX {
            format!(">{}", self.lo - 1)
        } else {
            format!("{}-{}", self.lo, self.hi)
        }
    }
}

pub fn default_buckets() -> Vec<BucketEdge> {
    [(1, 2), (3, 5), (6, 10), (11, 25), (26, 50), (51, 100)]
        .into_iter()
        .map(|(lo, hi)| BucketEdge { lo, hi })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    /// Bags are downsampled to this many occurrences before scoring.
    pub max_bag_size: usize,
    pub buckets: Vec<BucketEdge>,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            max_bag_size: 100,
            buckets: default_buckets(),
            seed: 0,
        }
    }
}

/// Outcome of scoring one ranking task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub context_id: String,
    pub manipulation: String,
    pub reference_size: usize,
    pub scores: Vec<f64>,
    pub rho: Option<f64>,
    pub degenerate: bool,
    /// Error kind name when the task failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketStat {
    pub edge: BucketEdge,
    pub mean_rho: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult {
    pub metric: String,
    pub manipulation: String,
    /// Sorted by context id; failed tasks included with `rho == None`.
    pub tasks: Vec<TaskOutcome>,
    pub mean_rho: Option<f64>,
    pub median_rho: Option<f64>,
    /// Tasks that produced a correlation.
    pub n_tasks: usize,
    pub n_failed: usize,
    pub n_degenerate: usize,
    pub buckets: Vec<BucketStat>,
    /// Failure counts per error kind.
    pub errors: BTreeMap<String, usize>,
}

impl MetricResult {
    pub fn rhos(&self) -> Vec<f64> {
        self.tasks.iter().filter_map(|t| t.rho).collect()
    }
}

fn score_task<F>(task: &RankingTask, score: &F, cfg: &HarnessConfig) -> TaskOutcome
where
    F: Fn(&Bag, &Bag) -> Result<f64>,
{
    let base = derive_seed(derive_seed(cfg.seed, &task.context_id), &task.manipulation);
    let reference = downsample_bag(&task.reference, cfg.max_bag_size, derive_index(base, 0));
    let mut outcome = TaskOutcome {
        context_id: task.context_id.clone(),
        manipulation: task.manipulation.clone(),
        reference_size: reference.len(),
        scores: Vec::new(),
        rho: None,
        degenerate: false,
        error: None,
    };
    let scored: Result<Vec<f64>> = task
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let c = downsample_bag(c, cfg.max_bag_size, derive_index(base, i as u64 + 1));
            let s = score(&c, &reference)?;
            if s.is_finite() {
                Ok(s)
            } else {
                Err(Error::Value { id: task.context_id.clone() })
            }
        })
        .collect();
    match scored.and_then(|s| spearman(&s, &task.true_ranks).map(|rho| (s, rho))) {
        Ok((s, rho)) => {
            outcome.scores = s;
            outcome.rho = Some(rho.rho);
            outcome.degenerate = rho.degenerate;
        }
        Err(e) => outcome.error = Some(e.kind_name().to_string()),
    }
    outcome
}

/// Scores every task with `score(candidate, reference)` and correlates the
/// scores with the true ranks. Tasks run in parallel; the result does not
/// depend on task order or thread count.
pub fn evaluate_metric<F>(
    metric: &str,
    manipulation: &str,
    tasks: &[RankingTask],
    score: F,
    cfg: &HarnessConfig,
) -> Result<MetricResult>
where
    F: Fn(&Bag, &Bag) -> Result<f64> + Sync,
{
    if tasks.is_empty() {
        return Err(Error::Usage("no ranking tasks to evaluate".into()));
    }
    let mut outcomes = par::map(tasks, |t| score_task(t, &score, cfg));
    outcomes.sort_by(|a, b| {
        (&a.context_id, &a.manipulation, a.reference_size)
            .cmp(&(&b.context_id, &b.manipulation, b.reference_size))
            .then_with(|| {
                let ka: Vec<u64> = a.scores.iter().map(|x| x.to_bits()).collect();
                let kb: Vec<u64> = b.scores.iter().map(|x| x.to_bits()).collect();
                ka.cmp(&kb)
            })
            .then_with(|| a.error.cmp(&b.error))
    });
    Ok(aggregate(metric, manipulation, outcomes, &cfg.buckets))
}

/// Builds aggregates from already sorted task outcomes.
pub fn aggregate(metric: &str, manipulation: &str, tasks: Vec<TaskOutcome>, edges: &[BucketEdge]) -> MetricResult {
    let rhos: Vec<f64> = tasks.iter().filter_map(|t| t.rho).collect();
    let mut errors: BTreeMap<String, usize> = BTreeMap::new();
    for e in tasks.iter().filter_map(|t| t.error.as_ref()) {
        *errors.entry(e.clone()).or_insert(0) += 1;
    }
    let mut edges = edges.to_vec();
    let top = edges.iter().map(|e| e.hi).max().unwrap_or(0);
    if tasks.iter().any(|t| t.rho.is_some() && t.reference_size > top) {
        edges.push(BucketEdge { lo: top + 1, hi: usize::MAX });
    }
    let buckets = edges
        .iter()
        .map(|edge| {
            let inside: Vec<f64> = tasks
                .iter()
                .filter(|t| (edge.lo..=edge.hi).contains(&t.reference_size))
                .filter_map(|t| t.rho)
                .collect();
            BucketStat {
                edge: *edge,
                mean_rho: mean(&inside),
                n: inside.len(),
            }
        })
        .collect();
    MetricResult {
        metric: metric.to_string(),
        manipulation: manipulation.to_string(),
        mean_rho: mean(&rhos),
        median_rho: median(&rhos),
        n_tasks: rhos.len(),
        n_failed: tasks.iter().filter(|t| t.error.is_some()).count(),
        n_degenerate: tasks.iter().filter(|t| t.degenerate).count(),
        buckets,
        errors,
        tasks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TieThreshold {
    pub threshold: f64,
    pub target_rate: f64,
}

/// Picks the threshold so that a `target_rate` share of `score_diffs`
/// counts as ties: with `k = round(rate · n)`, the k-th smallest
/// difference. For `k = 0` the threshold sits just below the smallest
/// difference (never below 0).
pub fn calibrate_tie_threshold(score_diffs: &[f64], target_rate: f64) -> Result<TieThreshold> {
    if score_diffs.is_empty() {
        return Err(Error::Usage("tie calibration needs at least one score difference".into()));
    }
    if !(0.0..=1.0).contains(&target_rate) {
        return Err(Error::Usage(format!("tie rate must lie in [0, 1], got {target_rate}")));
    }
    let mut diffs: Vec<f64> = score_diffs.iter().map(|d| d.abs()).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Usage("score differences must be finite".into()));
    }
    diffs.sort_by(f64::total_cmp);
    let k = (target_rate * diffs.len() as f64).round() as usize;
    let threshold = if k == 0 {
        let min = diffs[0];
        if min > 0.0 {
            // largest representable value strictly below min
            f64::from_bits(min.to_bits() - 1)
        } else {
            0.0
        }
    } else {
        diffs[k - 1]
    };
    Ok(TieThreshold { threshold, target_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    #[serde(rename = "TIE")]
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub score_a: f64,
    pub score_b: f64,
    pub verdict: Verdict,
}

/// Verdict for two scores: a tie when they differ by at most `threshold`.
pub fn verdict(score_a: f64, score_b: f64, threshold: f64) -> Verdict {
    if (score_a - score_b).abs() <= threshold {
        Verdict::Tie
    } else if score_a > score_b {
        Verdict::A
    } else {
        Verdict::B
    }
}

pub fn compare_bags<F>(score: F, reference: &Bag, a: &Bag, b: &Bag, tie: &TieThreshold) -> Result<Comparison>
where
    F: Fn(&Bag, &Bag) -> Result<f64>,
{
    let score_a = score(a, reference)?;
    let score_b = score(b, reference)?;
    Ok(Comparison {
        score_a,
        score_b,
        verdict: verdict(score_a, score_b, tie.threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Markdown),
            other => Err(Error::Usage(format!("unknown format {other:?}; expected json, csv or md"))),
        }
    }
}

fn round4(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub range: String,
    pub mean_rho: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub metric: String,
    pub manipulation: String,
    pub mean_rho: Option<f64>,
    pub median_rho: Option<f64>,
    pub n_tasks: usize,
    pub n_failed: usize,
    pub n_degenerate: usize,
    pub buckets: Vec<BucketRow>,
    #[serde(default)]
    pub errors: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean_rho: Option<f64>,
    pub n_tasks: usize,
    pub n_failed: usize,
}

/// Serializable report: one breakdown row per (metric, manipulation) and
/// one summary row per metric. All numbers are rounded to 4 decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub results: Vec<ResultRow>,
    pub metrics: Vec<MetricSummary>,
}

impl Report {
    pub fn from_results(results: &[MetricResult]) -> Result<Report> {
        if results.is_empty() {
            return Err(Error::Usage("nothing to report".into()));
        }
        let mut rows: Vec<ResultRow> = results
            .iter()
            .map(|r| ResultRow {
                metric: r.metric.clone(),
                manipulation: r.manipulation.clone(),
                mean_rho: r.mean_rho.map(round4),
                median_rho: r.median_rho.map(round4),
                n_tasks: r.n_tasks,
                n_failed: r.n_failed,
                n_degenerate: r.n_degenerate,
                buckets: r
                    .buckets
                    .iter()
                    .map(|b| BucketRow {
                        range: b.edge.label(),
                        mean_rho: b.mean_rho.map(round4),
                        n: b.n,
                    })
                    .collect(),
                errors: r.errors.clone(),
            })
            .collect();
        rows.sort_by(|a, b| (&a.metric, &a.manipulation).cmp(&(&b.metric, &b.manipulation)));

        let mut per_metric: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for r in results {
            let e = per_metric.entry(r.metric.as_str()).or_default();
            e.0.extend(r.rhos());
            e.1 += r.n_failed;
        }
        let metrics = per_metric
            .into_iter()
            .map(|(m, (mut rhos, failed))| {
                rhos.sort_by(f64::total_cmp);
                MetricSummary {
                    metric: m.to_string(),
                    mean_rho: mean(&rhos).map(round4),
                    n_tasks: rhos.len(),
                    n_failed: failed,
                }
            })
            .collect();
        Ok(Report { results: rows, metrics })
    }

    pub fn parse_json(text: &str) -> std::result::Result<Report, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Csv => self.render_csv(),
            Format::Markdown => self.render_markdown(),
        }
    }

    fn render_csv(&self) -> String {
        let mut out = String::from("metric,manipulation,mean_rho,n_tasks,n_failed,buckets\n");
        for r in &self.results {
            let buckets: Vec<String> = r
                .buckets
                .iter()
                .map(|b| format!("{}:{}:{}", b.range, fmt_num(b.mean_rho), b.n))
                .collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&r.metric),
                csv_field(&r.manipulation),
                fmt_num(r.mean_rho),
                r.n_tasks,
                r.n_failed,
                csv_field(&buckets.join(";"))
            );
        }
        out
    }

    fn render_markdown(&self) -> String {
        let mut out = String::from("# Metric validation report\n\n## Mean correlation per metric\n\n");
        out.push_str("| metric | mean_rho | n_tasks | n_failed |\n|---|---:|---:|---:|\n");
        for m in &self.metrics {
            let _ = writeln!(out, "| {} | {} | {} | {} |", m.metric, fmt_num(m.mean_rho), m.n_tasks, m.n_failed);
        }
        out.push_str("\n## Breakdown by manipulation\n\n");
        out.push_str("| metric | manipulation | mean_rho | median_rho | n_tasks | n_failed | n_degenerate |\n");
        out.push_str("|---|---|---:|---:|---:|---:|---:|\n");
        for r in &self.results {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.metric,
                r.manipulation,
                fmt_num(r.mean_rho),
                fmt_num(r.median_rho),
                r.n_tasks,
                r.n_failed,
                r.n_degenerate
            );
        }
        let ranges: Vec<&str> = self
            .results
            .first()
            .map(|r| r.buckets.iter().map(|b| b.range.as_str()).collect())
            .unwrap_or_default();
        out.push_str("\n## Mean correlation by reference bag size\n\n| metric | manipulation |");
        for r in &ranges {
            let _ = write!(out, " {r} |");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---:|".repeat(ranges.len()));
        out.push('\n');
        for r in &self.results {
            let _ = write!(out, "| {} | {} |", r.metric, r.manipulation);
            for b in &r.buckets {
                let _ = write!(out, " {} ({}) |", fmt_num(b.mean_rho), b.n);
            }
            out.push('\n');
        }
        let failures: Vec<String> = self
            .results
            .iter()
            .flat_map(|r| r.errors.iter().map(move |(k, n)| format!("- {} / {}: {n} × {k}", r.metric, r.manipulation)))
            .collect();
        if !failures.is_empty() {
            out.push_str("\n## Failed tasks\n\n");
            for f in failures {
                out.push_str(&f);
                out.push('\n');
            }
        }
        out
    }
}

fn fmt_num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders results in the requested format.
pub fn report(results: &[MetricResult], format: Format) -> Result<String> {
    Ok(Report::from_results(results)?.render(format))
}

/// Ranking tasks for every context of `corpus` under `plan`. References
/// are capped at `cfg.max_bag_size` first. Contexts whose task cannot be
/// built come back as failed outcomes.
pub fn build_tasks(
    corpus: &Corpus,
    plan: &RankingPlan,
    lexicon: &Lexicon,
    cfg: &HarnessConfig,
) -> (Vec<RankingTask>, Vec<TaskOutcome>) {
    let shared = Resources {
        carrier_pool: carrier_pool(corpus),
        vocabulary: corpus.vocabulary(),
        lexicon: lexicon.clone(),
        ..Default::default()
    };
    let label = plan.label();
    let bags: Vec<&Bag> = corpus.contexts.values().collect();
    let built = par::map(&bags, |bag| {
        let ctx_seed = derive_seed(derive_seed(cfg.seed, "task"), &bag.context_id);
        let reference = downsample_bag(bag, cfg.max_bag_size, derive_index(ctx_seed, 0));
        let res = Resources {
            distractors: corpus.distractors_for(&bag.context_id),
            attribute_source: popular_attributes(&reference),
            ..shared.clone()
        };
        build_ranking(&reference, plan, &res, derive_index(ctx_seed, 1)).map_err(|e| (reference.len(), e.kind_name()))
    });
    let mut tasks = Vec::new();
    let mut failed = Vec::new();
    for (bag, b) in bags.iter().zip(built) {
        match b {
            Ok(t) => tasks.push(t),
            Err((reference_size, kind)) => failed.push(TaskOutcome {
                context_id: bag.context_id.clone(),
                manipulation: label.clone(),
                reference_size,
                scores: Vec::new(),
                rho: None,
                degenerate: false,
                error: Some(kind.to_string()),
            }),
        }
    }
    (tasks, failed)
}

/// End-to-end validation: one result per (metric, plan).
pub fn validate(
    corpus: &Corpus,
    plans: &[RankingPlan],
    metrics: &[Metric],
    mcfg: &MetricConfig,
    hcfg: &HarnessConfig,
    lexicon: &Lexicon,
) -> Result<Vec<MetricResult>> {
    if corpus.is_empty() {
        return Err(Error::Usage("corpus has no contexts".into()));
    }
    mcfg.check(metrics)?;
    let mut out = Vec::new();
    for plan in plans {
        let (tasks, failed) = build_tasks(corpus, plan, lexicon, hcfg);
        let label = plan.label();
        for m in metrics {
            let mut outcomes = if tasks.is_empty() {
                Vec::new()
            } else {
                evaluate_metric(m.name(), &label, &tasks, |g, r| m.score(g, r, mcfg), hcfg)?.tasks
            };
            outcomes.extend(failed.iter().cloned());
            outcomes.sort_by(|a, b| a.context_id.cmp(&b.context_id));
            out.push(aggregate(m.name(), &label, outcomes, &hcfg.buckets));
        }
    }
    Ok(out)
}
