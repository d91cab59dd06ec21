//! Table and figure-series rendering from serialized run artifacts. Nothing
//! here recomputes per-prediction metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStats;
use crate::curation::{CurationReport, FailureKind};
use crate::eval::{EvalRun, SweepReport};
use crate::metrics::{correlation, CorrelationMethod, PermutationConfig};
use crate::prompting::PromptMode;

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub error_type: String,
    /// Percent of all samples exhibiting the error.
    pub any_percent: f64,
    /// Percent of rejected samples whose first failure is this error.
    pub first_failure_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2 {
    pub rows: Vec<Table2Row>,
    pub total_in: usize,
    pub total_kept: usize,
    pub no_citation_samples: usize,
}

pub fn table2(report: &CurationReport) -> Table2 {
    Table2 {
        rows: FailureKind::ORDER
            .iter()
            .map(|k| Table2Row {
                error_type: k.label().to_string(),
                any_percent: 100.0 * report.incidence_any.get(k).copied().unwrap_or(0.0),
                first_failure_percent: 100.0 * report.incidence_among_rejected.get(k).copied().unwrap_or(0.0),
            })
            .collect(),
        total_in: report.total_in,
        total_kept: report.total_kept,
        no_citation_samples: report.no_citation_samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub entry: String,
    pub value: Option<f64>,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3 {
    pub rows: Vec<Table3Row>,
    pub word_count_basis: String,
}

pub const TABLE3_ENTRIES: [&str; 8] = [
    "#Max Words per Sample",
    "#Mean Words per Sample",
    "#Averaged Words per CoT Step",
    "#Averaged Words per Quote",
    "#Total Samples",
    "2-Hop Samples [%]",
    "3-Hop Samples [%]",
    "4-Hop Samples [%]",
];

pub fn table3(stats: &CorpusStats) -> Table3 {
    let hop = |h: u8| 100.0 * stats.hop_distribution.get(&h).copied().unwrap_or(0.0);
    let values = [
        (Some(stats.max_words_per_sample as f64), stats.max_words_per_sample.to_string()),
        (Some(stats.mean_words_per_sample), format!("{:.2}", stats.mean_words_per_sample)),
        (stats.mean_words_per_step, opt2(stats.mean_words_per_step)),
        (stats.mean_words_per_quote, opt2(stats.mean_words_per_quote)),
        (Some(stats.total_samples as f64), stats.total_samples.to_string()),
        (Some(hop(2)), format!("{:.2}%", hop(2))),
        (Some(hop(3)), format!("{:.2}%", hop(3))),
        (Some(hop(4)), format!("{:.2}%", hop(4))),
    ];
    Table3 {
        rows: TABLE3_ENTRIES
            .iter()
            .zip(values)
            .map(|(entry, (value, display))| Table3Row {
                entry: entry.to_string(),
                value,
                display,
            })
            .collect(),
        word_count_basis: stats.word_count_basis.clone(),
    }
}

fn opt2(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table9Cell {
    pub method: CorrelationMethod,
    pub coefficient: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    /// Why the cell is empty, when it is.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table9Row {
    pub entry: String,
    pub cells: Vec<Table9Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table9Block {
    pub dataset: String,
    pub points: usize,
    pub rows: Vec<Table9Row>,
}

/// Citation precision/recall against EM across runs of each dataset. Runs
/// without citation scores are skipped.
pub fn table9(runs: &[EvalRun], config: &PermutationConfig) -> Vec<Table9Block> {
    let mut by_dataset: BTreeMap<&str, Vec<&EvalRun>> = BTreeMap::new();
    for r in runs {
        if r.report.mean_citation_precision.is_some() && r.report.mean_citation_recall.is_some() {
            by_dataset.entry(&r.dataset).or_default().push(r);
        }
    }
    by_dataset
        .into_iter()
        .map(|(dataset, runs)| {
            let em: Vec<f64> = runs.iter().map(|r| r.report.mean_em).collect();
            let p: Vec<f64> = runs.iter().map(|r| r.report.mean_citation_precision.unwrap_or(0.0)).collect();
            let rc: Vec<f64> = runs.iter().map(|r| r.report.mean_citation_recall.unwrap_or(0.0)).collect();
            let row = |entry: &str, ys: &[f64]| Table9Row {
                entry: entry.to_string(),
                cells: CorrelationMethod::ALL
                    .iter()
                    .map(|&method| match correlation(&em, ys, method, config) {
                        Ok(c) => Table9Cell {
                            method,
                            coefficient: Some(c.coefficient),
                            p_value: Some(c.p_value),
                            significant: c.p_value < SIGNIFICANCE,
                            note: None,
                        },
                        Err(e) => Table9Cell {
                            method,
                            coefficient: None,
                            p_value: None,
                            significant: false,
                            note: Some(e.to_string()),
                        },
                    })
                    .collect(),
            };
            Table9Block {
                dataset: dataset.to_string(),
                points: runs.len(),
                rows: vec![row("EM vs. P", &p), row("EM vs. R", &rc)],
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table10Cell {
    pub dataset: String,
    /// Ranges in EM points (0-100).
    pub cot: Option<f64>,
    pub coc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table10Row {
    pub model: String,
    pub cells: Vec<Table10Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table10 {
    pub datasets: Vec<String>,
    pub rows: Vec<Table10Row>,
}

/// Performance range per model, dataset and mode (CoT and CoC only).
pub fn table10(sweeps: &[SweepReport]) -> Table10 {
    let datasets: BTreeSet<&str> = sweeps.iter().map(|s| s.dataset.as_str()).collect();
    let models: BTreeSet<&str> = sweeps.iter().map(|s| s.model.as_str()).collect();
    let range = |model: &str, dataset: &str, mode: PromptMode| {
        sweeps
            .iter().rfind(|s| s.model == model && s.dataset == dataset && s.mode == mode)
            .and_then(|s| s.performance_range)
            .map(|r| 100.0 * r)
    };
    Table10 {
        datasets: datasets.iter().map(|d| d.to_string()).collect(),
        rows: models
            .iter()
            .map(|&model| Table10Row {
                model: model.to_string(),
                cells: datasets
                    .iter()
                    .map(|&dataset| Table10Cell {
                        dataset: dataset.to_string(),
                        cot: range(model, dataset, PromptMode::Cot),
                        coc: range(model, dataset, PromptMode::Coc),
                    })
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure2Row {
    pub dataset: String,
    pub model: String,
    pub mode: PromptMode,
    pub em: f64,
    pub citation_precision: f64,
    pub citation_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure3Row {
    pub dataset: String,
    pub model: String,
    pub mode: PromptMode,
    pub noise_ratio: u32,
    pub em: f64,
    pub mean_context_documents: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub table2: Option<Table2>,
    pub table3: Option<Table3>,
    pub table9: Vec<Table9Block>,
    pub table10: Table10,
    pub figure2: Vec<Figure2Row>,
    pub figure3: Vec<Figure3Row>,
}

pub fn build_report(
    curation: Option<&CurationReport>,
    stats: Option<&CorpusStats>,
    runs: &[EvalRun],
    sweeps: &[SweepReport],
    permutation: &PermutationConfig,
) -> Report {
    let figure2 = runs
        .iter()
        .filter_map(|r| {
            Some(Figure2Row {
                dataset: r.dataset.clone(),
                model: r.model.clone(),
                mode: r.mode,
                em: r.report.mean_em,
                citation_precision: r.report.mean_citation_precision?,
                citation_recall: r.report.mean_citation_recall?,
            })
        })
        .collect();
    let figure3 = sweeps
        .iter()
        .flat_map(|s| {
            s.points.iter().map(|p| Figure3Row {
                dataset: s.dataset.clone(),
                model: s.model.clone(),
                mode: s.mode,
                noise_ratio: p.noise_ratio,
                em: p.report.mean_em,
                mean_context_documents: p.mean_context_documents,
            })
        })
        .collect();
    Report {
        table2: curation.map(table2),
        table3: stats.map(table3),
        table9: table9(runs, permutation),
        table10: table10(sweeps),
        figure2,
        figure3,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.1}"))
}

pub fn render_markdown(report: &Report) -> String {
    let mut out = String::new();
    if let Some(t) = &report.table2 {
        out.push_str("## Error incidence\n\n");
        out.push_str("| Error Type | Any [%] | First failure among rejected [%] |\n|---|---:|---:|\n");
        for r in &t.rows {
            let _ = writeln!(out, "| {} | {:.2}% | {:.2}% |", r.error_type, r.any_percent, r.first_failure_percent);
        }
        let _ = writeln!(
            out,
            "\n{} samples in, {} kept, {} without citations.\n",
            t.total_in, t.total_kept, t.no_citation_samples
        );
    }
    if let Some(t) = &report.table3 {
        out.push_str("## Dataset statistics\n\n| Entry | Value |\n|---|---:|\n");
        for r in &t.rows {
            let _ = writeln!(out, "| {} | {} |", r.entry, r.display);
        }
        let _ = writeln!(out, "\nWord counts: {}.\n", t.word_count_basis);
    }
    if !report.table9.is_empty() {
        out.push_str("## Citation quality vs. EM\n\n| Entry | Pearson | Spearman | Kendall |\n|---|---:|---:|---:|\n");
        for block in &report.table9 {
            let _ = writeln!(out, "| *{}* ({} runs) | | | |", block.dataset, block.points);
            for row in &block.rows {
                let cells: Vec<String> = row
                    .cells
                    .iter()
                    .map(|c| match c.coefficient {
                        Some(v) => format!("{v:.3}{}", if c.significant { "*" } else { "" }),
                        None => "n/a".to_string(),
                    })
                    .collect();
                let _ = writeln!(out, "| {} | {} |", row.entry, cells.join(" | "));
            }
        }
        let _ = writeln!(out, "\n\\* p < {SIGNIFICANCE} (permutation test).\n");
    }
    if !report.table10.rows.is_empty() {
        out.push_str("## Performance range under noise\n\n| Model |");
        for d in &report.table10.datasets {
            let _ = write!(out, " {d} CoT | {d} CoC |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(2 * report.table10.datasets.len()));
        out.push('\n');
        for row in &report.table10.rows {
            let _ = write!(out, "| {} |", row.model);
            for c in &row.cells {
                let (cot, coc) = (cell(c.cot), cell(c.coc));
                let (cot, coc) = match (c.cot, c.coc) {
                    (Some(a), Some(b)) if a < b => (format!("**{cot}**"), coc),
                    (Some(_), Some(_)) => (cot, format!("**{coc}**")),
                    _ => (cot, coc),
                };
                let _ = write!(out, " {cot} | {coc} |");
            }
            out.push('\n');
        }
        out.push_str("\nSmaller range (more robust) in bold.\n");
    }
    out
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in rows {
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// File name to content for every emitted artifact.
pub fn render_files(report: &Report) -> Result<BTreeMap<String, String>, csv::Error> {
    let mut files = BTreeMap::new();
    files.insert("tables.md".to_string(), render_markdown(report));
    files.insert(
        "report.json".to_string(),
        serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    );
    if let Some(t) = &report.table2 {
        files.insert("table2.csv".to_string(), to_csv(&t.rows)?);
    }
    if let Some(t) = &report.table3 {
        #[derive(Serialize)]
        struct Row<'a> {
            entry: &'a str,
            value: &'a str,
        }
        let rows: Vec<Row> = t.rows.iter().map(|r| Row { entry: &r.entry, value: &r.display }).collect();
        files.insert("table3.csv".to_string(), to_csv(&rows)?);
    }
    #[derive(Serialize)]
    struct CorrRow<'a> {
        dataset: &'a str,
        entry: &'a str,
        method: CorrelationMethod,
        coefficient: Option<f64>,
        p_value: Option<f64>,
        significant: bool,
    }
    let corr: Vec<CorrRow> = report
        .table9
        .iter()
        .flat_map(|b| {
            b.rows.iter().flat_map(move |r| {
                r.cells.iter().map(move |c| CorrRow {
                    dataset: &b.dataset,
                    entry: &r.entry,
                    method: c.method,
                    coefficient: c.coefficient,
                    p_value: c.p_value,
                    significant: c.significant,
                })
            })
        })
        .collect();
    files.insert("table9.csv".to_string(), to_csv(&corr)?);
    #[derive(Serialize)]
    struct RangeRow<'a> {
        model: &'a str,
        dataset: &'a str,
        cot: Option<f64>,
        coc: Option<f64>,
    }
    let ranges: Vec<RangeRow> = report
        .table10
        .rows
        .iter()
        .flat_map(|r| {
            r.cells.iter().map(move |c| RangeRow {
                model: &r.model,
                dataset: &c.dataset,
                cot: c.cot,
                coc: c.coc,
            })
        })
        .collect();
    files.insert("table10.csv".to_string(), to_csv(&ranges)?);
    files.insert("figure2.csv".to_string(), to_csv(&report.figure2)?);
    files.insert("figure3.csv".to_string(), to_csv(&report.figure3)?);
    Ok(files)
}
