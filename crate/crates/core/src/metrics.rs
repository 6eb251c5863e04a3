//! Retrieval metrics, paired significance tests, and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::RelevanceJudgments;
use crate::retrieval::{Hit, RankedHits};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cutoff k must be at least 1")]
    ZeroK,
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("a paired test needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("datasets do not align: {0}")]
    Misaligned(String),
    #[error("no datasets to report")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

type Judged = BTreeMap<String, u32>;

fn gain(grade: u32) -> f64 {
    2f64.powi(grade.min(60) as i32) - 1.0
}

fn discount(pos: usize) -> f64 {
    1.0 / ((pos + 1) as f64).log2()
}

/// nDCG@k with gain `2^grade - 1`. `None` when the query has no positive
/// judgment.
pub fn ndcg_at_k(hits: &RankedHits, judged: &Judged, k: usize) -> Result<Option<f64>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return Ok(None);
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain(g) * discount(i + 1)).sum();
    let dcg: f64 = hits
        .hits()
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, h)| judged.get(&h.doc_id).map_or(0.0, |&g| gain(g)) * discount(i + 1))
        .sum();
    Ok(Some(dcg / idcg))
}

/// Fraction of positively judged documents in the top `k`.
pub fn recall_at_k(hits: &RankedHits, judged: &Judged, k: usize) -> Result<Option<f64>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let relevant = judged.values().filter(|&&g| g > 0).count();
    if relevant == 0 {
        return Ok(None);
    }
    let found = hits
        .hits()
        .iter()
        .take(k)
        .filter(|h| judged.get(&h.doc_id).is_some_and(|&g| g > 0))
        .count();
    Ok(Some(found as f64 / relevant as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", content = "k", rename_all = "snake_case")]
pub enum Metric {
    Ndcg(usize),
    Recall(usize),
}

impl Metric {
    pub fn compute(self, hits: &RankedHits, judged: &Judged) -> Result<Option<f64>, MetricsError> {
        match self {
            Metric::Ndcg(k) => ndcg_at_k(hits, judged, k),
            Metric::Recall(k) => recall_at_k(hits, judged, k),
        }
    }

    pub fn label(self) -> String {
        match self {
            Metric::Ndcg(k) => format!("nDCG@{k}"),
            Metric::Recall(k) => format!("Recall@{k}"),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let (name, k) = lower.split_once('@').ok_or_else(|| format!("expected NAME@K, got `{s}`"))?;
        let k: usize = k.parse().map_err(|_| format!("bad cutoff in `{s}`"))?;
        match name {
            "ndcg" => Ok(Metric::Ndcg(k)),
            "recall" => Ok(Metric::Recall(k)),
            _ => Err(format!("unknown metric `{name}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Two-sided paired t-test. All-zero differences give `t = 0, p = 1`;
/// zero variance with a nonzero mean difference gives `t = ±inf, p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, n });
    }
    if var == 0.0 {
        return Ok(TTest {
            t: f64::INFINITY.copysign(mean),
            p: 0.0,
            n,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, n })
}

/// Per-query values for one dataset, plus the queries that had no positive
/// judgment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryScores {
    pub values: BTreeMap<String, f64>,
    pub skipped: Vec<String>,
}

impl QueryScores {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.values().sum::<f64>() / self.values.len() as f64
    }
}

/// Scores every judged query. Judged queries without a run entry score as
/// an empty ranking.
pub fn evaluate_run(
    run: &BTreeMap<String, RankedHits>,
    qrels: &RelevanceJudgments,
    metric: Metric,
) -> Result<QueryScores, MetricsError> {
    let empty = RankedHits::default();
    let mut out = QueryScores::default();
    for (qid, judged) in qrels.entries() {
        let hits = run.get(qid).unwrap_or(&empty);
        match metric.compute(hits, judged)? {
            Some(v) => {
                out.values.insert(qid.clone(), v);
            }
            None => out.skipped.push(qid.clone()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    PerQuery,
    PerRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub pairing: Pairing,
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub mean: f64,
    pub queries: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_query: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<Significance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub metric: String,
    pub datasets: Vec<DatasetReport>,
    /// Unweighted mean of the dataset means.
    pub average: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_average: Option<f64>,
    /// Relative change of the averages, not the mean of per-dataset changes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_improvement_pct: Option<f64>,
}

/// `(sys - base) / base * 100`.
pub fn relative_improvement(sys: f64, base: f64) -> f64 {
    (sys - base) / base * 100.0
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    xs.sum::<f64>() / n as f64
}

/// Named system scores for a report, keeping dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRun<'a> {
    pub name: &'a str,
    pub datasets: &'a [(String, QueryScores)],
}

pub fn build_report(
    metric: Metric,
    system: SystemRun<'_>,
    baseline: Option<SystemRun<'_>>,
) -> Result<EvalReport, MetricsError> {
    if system.datasets.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(base) = &baseline {
        let a: Vec<&str> = system.datasets.iter().map(|(n, _)| n.as_str()).collect();
        let b: Vec<&str> = base.datasets.iter().map(|(n, _)| n.as_str()).collect();
        if a != b {
            return Err(MetricsError::Misaligned(format!("{a:?} vs {b:?}")));
        }
    }
    let mut datasets = Vec::with_capacity(system.datasets.len());
    for (i, (name, scores)) in system.datasets.iter().enumerate() {
        let m = scores.mean();
        let mut row = DatasetReport {
            name: name.clone(),
            mean: m,
            queries: scores.values.len(),
            skipped: scores.skipped.len(),
            per_query: scores.values.clone(),
            baseline_mean: None,
            improvement_pct: None,
            significance: None,
        };
        if let Some(base) = &baseline {
            let b = &base.datasets[i].1;
            let bm = b.mean();
            row.baseline_mean = Some(bm);
            row.improvement_pct = Some(relative_improvement(m, bm));
            let shared: Vec<(f64, f64)> = scores
                .values
                .iter()
                .filter_map(|(q, v)| b.values.get(q).map(|w| (*v, *w)))
                .collect();
            if shared.len() >= 2 {
                let (x, y): (Vec<f64>, Vec<f64>) = shared.into_iter().unzip();
                let t = paired_t_test(&x, &y)?;
                row.significance = Some(Significance {
                    pairing: Pairing::PerQuery,
                    t: t.t,
                    p: t.p,
                    n: t.n,
                });
            }
        }
        datasets.push(row);
    }
    let average = mean(datasets.iter().map(|d| d.mean));
    let baseline_average = baseline
        .as_ref()
        .map(|_| mean(datasets.iter().map(|d| d.baseline_mean.unwrap_or(0.0))));
    Ok(EvalReport {
        system: system.name.to_string(),
        baseline: baseline.map(|b| b.name.to_string()),
        metric: metric.label(),
        average,
        average_improvement_pct: baseline_average.map(|b| relative_improvement(average, b)),
        baseline_average,
        datasets,
    })
}

/// Report from published per-dataset means, with no per-query detail.
pub fn report_from_means(
    metric: Metric,
    system: (&str, &[(&str, f64)]),
    baseline: Option<(&str, &[(&str, f64)])>,
) -> Result<EvalReport, MetricsError> {
    let lift = |rows: &[(&str, f64)]| -> Vec<(String, QueryScores)> {
        rows.iter()
            .map(|(n, v)| {
                (
                    n.to_string(),
                    QueryScores {
                        values: BTreeMap::from([(String::new(), *v)]),
                        skipped: Vec::new(),
                    },
                )
            })
            .collect()
    };
    let sys = lift(system.1);
    let base = baseline.map(|(_, rows)| lift(rows));
    let mut report = build_report(
        metric,
        SystemRun {
            name: system.0,
            datasets: &sys,
        },
        baseline.zip(base.as_ref()).map(|((name, _), d)| SystemRun { name, datasets: d }),
    )?;
    for d in &mut report.datasets {
        d.per_query.clear();
        d.queries = 0;
        d.significance = None;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Multiplier applied to metric values, e.g. 100 for percentages.
    pub scale: f64,
    pub decimals: usize,
    /// Mark system values whose p-value is below this.
    pub alpha: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            scale: 100.0,
            decimals: 2,
            alpha: 0.05,
        }
    }
}

/// Plain-text table: one column per dataset plus the average; baseline,
/// system and relative-improvement rows. `*` marks p < alpha.
pub fn render_table(report: &EvalReport, opts: &RenderOptions) -> String {
    let prec = opts.decimals;
    let mut header = vec!["Model".to_string()];
    header.extend(report.datasets.iter().map(|d| d.name.clone()));
    header.push("Average".into());
    let mut rows: Vec<Vec<String>> = Vec::new();
    if let (Some(name), Some(avg)) = (&report.baseline, report.baseline_average) {
        let mut r = vec![name.clone()];
        r.extend(
            report
                .datasets
                .iter()
                .map(|d| format!("{:.prec$}", d.baseline_mean.unwrap_or(0.0) * opts.scale)),
        );
        r.push(format!("{:.prec$}", avg * opts.scale));
        rows.push(r);
    }
    let mut r = vec![report.system.clone()];
    r.extend(report.datasets.iter().map(|d| {
        let star = d.significance.as_ref().is_some_and(|s| s.p < opts.alpha);
        format!("{:.prec$}{}", d.mean * opts.scale, if star { "*" } else { "" })
    }));
    r.push(format!("{:.prec$}", report.average * opts.scale));
    rows.push(r);
    if let Some(avg) = report.average_improvement_pct {
        let mut r = vec!["Improve.".to_string()];
        r.extend(
            report
                .datasets
                .iter()
                .map(|d| format!("{:+.2}%", d.improvement_pct.unwrap_or(0.0))),
        );
        r.push(format!("{avg:+.2}%"));
        rows.push(r);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&rows)
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{}", report.metric);
    for r in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation over runs; 0 for a single run.
    pub std: f64,
    pub runs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<Significance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub system: String,
    pub metric: String,
    pub datasets: Vec<Spread>,
    pub average: Spread,
}

fn spread(name: &str, runs: Vec<f64>) -> Spread {
    let n = runs.len();
    let m = mean(runs.iter().copied());
    let std = if n > 1 {
        (runs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Spread {
        name: name.to_string(),
        mean: m,
        std,
        runs,
        significance: None,
    }
}

/// Averages dataset-level results over repeated runs. With baseline runs
/// of equal count, each dataset also gets a per-run paired t-test.
pub fn aggregate_repeats(runs: &[EvalReport], baseline_runs: Option<&[EvalReport]>) -> Result<RepeatSummary, MetricsError> {
    let first = runs.first().ok_or(MetricsError::Empty)?;
    let names: Vec<&str> = first.datasets.iter().map(|d| d.name.as_str()).collect();
    for r in runs.iter().chain(baseline_runs.unwrap_or(&[])) {
        let these: Vec<&str> = r.datasets.iter().map(|d| d.name.as_str()).collect();
        if these != names {
            return Err(MetricsError::Misaligned(format!("{these:?} vs {names:?}")));
        }
    }
    let mut datasets = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let mut s = spread(name, runs.iter().map(|r| r.datasets[i].mean).collect());
        if let Some(base) = baseline_runs {
            let b: Vec<f64> = base.iter().map(|r| r.datasets[i].mean).collect();
            if b.len() == s.runs.len() && b.len() >= 2 {
                let t = paired_t_test(&s.runs, &b)?;
                s.significance = Some(Significance {
                    pairing: Pairing::PerRun,
                    t: t.t,
                    p: t.p,
                    n: t.n,
                });
            }
        }
        datasets.push(s);
    }
    Ok(RepeatSummary {
        system: first.system.clone(),
        metric: first.metric.clone(),
        average: spread("Average", runs.iter().map(|r| r.average).collect()),
        datasets,
    })
}

pub fn render_repeats(summary: &RepeatSummary, opts: &RenderOptions) -> String {
    let prec = opts.decimals;
    let mut out = format!("{} over {} runs ({})\n", summary.metric, summary.average.runs.len(), summary.system);
    for s in summary.datasets.iter().chain(std::iter::once(&summary.average)) {
        let _ = write!(
            out,
            "{:<14} {:.prec$} ± {:.prec$}",
            s.name,
            s.mean * opts.scale,
            s.std * opts.scale
        );
        if let Some(sig) = &s.significance {
            let _ = write!(out, "  (p = {:.4}, per run)", sig.p);
        }
        out.push('\n');
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `qid Q0 docid rank score tag` lines, queries in id order.
pub fn write_trec_run(path: impl AsRef<Path>, run: &BTreeMap<String, RankedHits>, tag: &str) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    for (qid, hits) in run {
        for (i, h) in hits.hits().iter().enumerate() {
            writeln!(w, "{qid} Q0 {} {} {} {tag}", h.doc_id, i + 1, h.score).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads a six-column trec run; per query, hits are reordered by score
/// with the usual id tie-break.
pub fn read_trec_run(path: impl AsRef<Path>) -> Result<BTreeMap<String, RankedHits>, MetricsError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut raw: BTreeMap<String, Vec<Hit>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let bad = |message: String| MetricsError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 columns, found {}", cols.len())));
        }
        let score: f64 = cols[4].parse().map_err(|_| bad(format!("bad score `{}`", cols[4])))?;
        raw.entry(cols[0].to_string()).or_default().push(Hit {
            doc_id: cols[2].to_string(),
            score,
        });
    }
    Ok(raw.into_iter().map(|(q, h)| (q, RankedHits::from_unsorted(h))).collect())
}
