//! Report emission: correlation tables, convergence series, UoA
//! comparison, and per-case aggregates as delimiter-separated files
//! plus a structured summary. Output is byte-stable: fixed float
//! formatting and sorted orderings throughout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::EvaluationDataset;
use crate::scoring::{aggregate, AggregateScore, ScoreRecord};
use crate::stats::{
    self, Grouping, GroupedCorrelations, StatsError, UoaComparison,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no aggregates available: run `score` first ({0})")]
    NothingToReport(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("write error for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn write_file(path: &Path, content: &str) -> Result<(), ReportError> {
    std::fs::write(path, content).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn correlation_table(out: &GroupedCorrelations) -> String {
    let mut s = String::from("group,r,n,ci_low,ci_high,level\n");
    for r in &out.results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.group_label,
            fmt_f(r.r),
            r.n,
            fmt_f(r.ci_low),
            fmt_f(r.ci_high),
            r.level
        );
    }
    for (label, reason) in &out.skipped {
        let _ = writeln!(s, "{label},skipped ({reason}),,,,");
    }
    s
}

pub struct ReportOutputs {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

pub struct RunDescription {
    pub strategy: String,
    pub variant: String,
    pub model_id: String,
    pub temperature: Option<f64>,
}

/// Writes the full report set for one run into `run_dir/report/`.
pub fn write_report(
    run_dir: &Path,
    records: &[ScoreRecord],
    dataset: &EvaluationDataset,
    desc: &RunDescription,
    level: f64,
) -> Result<ReportOutputs, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NothingToReport("archive is empty".into()));
    }
    let mut aggregates: Vec<AggregateScore> = Vec::new();
    let mut unaggregatable: Vec<String> = Vec::new();
    {
        let mut by_case: std::collections::BTreeMap<&str, Vec<ScoreRecord>> = Default::default();
        for r in records {
            by_case.entry(&r.case_id).or_default().push(r.clone());
        }
        for (case_id, recs) in by_case {
            match aggregate(&recs) {
                Ok(a) => aggregates.push(a),
                Err(_) => unaggregatable.push(case_id.to_string()),
            }
        }
    }
    if aggregates.is_empty() {
        return Err(ReportError::NothingToReport(
            "no case has any parsed score".into(),
        ));
    }
    // Only aggregates whose case has a profile enter the correlations.
    let covered: Vec<AggregateScore> = aggregates
        .iter()
        .filter(|a| {
            dataset
                .cases
                .iter()
                .find(|c| c.case_id == a.case_id)
                .map(|c| dataset.profile_for(c).is_some())
                .unwrap_or(false)
        })
        .cloned()
        .collect();

    let dir = run_dir.join("report");
    std::fs::create_dir_all(&dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files = Vec::new();

    // Per-case aggregates.
    let mut agg_csv = String::from("case_id,n,mean,std,n_unparsed\n");
    for a in &aggregates {
        let _ = writeln!(
            agg_csv,
            "{},{},{},{},{}",
            a.case_id,
            a.n_parsed,
            fmt_f(a.mean_score),
            fmt_f(a.std_dev),
            a.n_unparsed
        );
    }
    let path = dir.join("aggregates.csv");
    write_file(&path, &agg_csv)?;
    files.push(path);

    // Case-level correlations: overall then per UoA.
    let mut case_level = stats::case_level_correlations(&covered, dataset, Grouping::Overall, level)?;
    let per_uoa = stats::case_level_correlations(&covered, dataset, Grouping::PerUoa, level)?;
    case_level.results.extend(per_uoa.results);
    case_level.skipped.extend(per_uoa.skipped);
    let path = dir.join("case_correlations.csv");
    write_file(&path, &correlation_table(&case_level))?;
    files.push(path);

    // Department-level correlations per UoA.
    let dept_level = stats::department_level_correlations(&covered, dataset, level)?;
    let path = dir.join("department_correlations.csv");
    write_file(&path, &correlation_table(&dept_level))?;
    files.push(path);

    // Convergence series over the longest prefix every case supports.
    let min_parsed = covered.iter().map(|a| a.n_parsed).min().unwrap_or(0);
    let mut convergence_note = String::new();
    if min_parsed >= 1 && covered.len() >= 2 {
        match stats::convergence_curve(
            &records
                .iter()
                .filter(|r| covered.iter().any(|a| a.case_id == r.case_id))
                .cloned()
                .collect::<Vec<_>>(),
            dataset,
            min_parsed,
        ) {
            Ok(curve) => {
                let mut s = String::from("k,r\n");
                for (k, r) in curve {
                    let _ = writeln!(s, "{k},{}", fmt_f(r));
                }
                let path = dir.join("convergence.csv");
                write_file(&path, &s)?;
                files.push(path);
            }
            Err(e) => convergence_note = format!("convergence unavailable: {e}"),
        }
    } else {
        convergence_note = "convergence unavailable: too few cases or iterations".into();
    }

    // UoA comparison.
    let comparisons = stats::uoa_score_comparison(&covered, dataset)?;
    let mut s = String::from("uoa,mean_llm_score,mean_ref_score_per_ics,n_ics\n");
    for c in &comparisons {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            c.uoa,
            fmt_f(c.mean_llm_score),
            fmt_f(c.mean_ref_score_per_ics),
            c.n_ics
        );
    }
    let path = dir.join("uoa_comparison.csv");
    write_file(&path, &s)?;
    files.push(path);

    // Summary document.
    let summary = render_summary(
        desc,
        &aggregates,
        &covered,
        &unaggregatable,
        &case_level,
        &dept_level,
        &comparisons,
        &convergence_note,
    );
    let path = dir.join("summary.txt");
    write_file(&path, &summary)?;
    files.push(path);

    Ok(ReportOutputs { dir, files })
}

#[allow(clippy::too_many_arguments)]
fn render_summary(
    desc: &RunDescription,
    aggregates: &[AggregateScore],
    covered: &[AggregateScore],
    unaggregatable: &[String],
    case_level: &GroupedCorrelations,
    dept_level: &GroupedCorrelations,
    comparisons: &[UoaComparison],
    convergence_note: &str,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Run summary");
    let _ = writeln!(s, "===========");
    let _ = writeln!(s, "strategy: {}", desc.strategy);
    let _ = writeln!(s, "variant: {}", desc.variant);
    let _ = writeln!(s, "model: {}", desc.model_id);
    let _ = writeln!(
        s,
        "temperature: {}",
        desc.temperature
            .map(|t| t.to_string())
            .unwrap_or_else(|| "endpoint-default".into())
    );
    let mean_llm =
        aggregates.iter().map(|a| a.mean_score).sum::<f64>() / aggregates.len() as f64;
    let _ = writeln!(s, "cases aggregated: {}", aggregates.len());
    let _ = writeln!(s, "cases with profile coverage: {}", covered.len());
    let _ = writeln!(s, "cases without any parsed score: {}", unaggregatable.len());
    let _ = writeln!(s, "average LLM score: {}", fmt_f(mean_llm));
    let _ = writeln!(s);
    let _ = writeln!(s, "Correlation with departmental score profiles");
    let _ = writeln!(s, "--------------------------------------------");
    for r in &case_level.results {
        let _ = writeln!(
            s,
            "case-level [{}]: r = {} (n = {}, {}% CI {} .. {})",
            r.group_label,
            fmt_f(r.r),
            r.n,
            (r.level * 100.0) as u32,
            fmt_f(r.ci_low),
            fmt_f(r.ci_high)
        );
    }
    for (label, reason) in &case_level.skipped {
        let _ = writeln!(s, "case-level [{label}]: skipped ({reason})");
    }
    for r in &dept_level.results {
        let _ = writeln!(
            s,
            "department-level [{}]: r = {} (n = {}, {}% CI {} .. {})",
            r.group_label,
            fmt_f(r.r),
            r.n,
            (r.level * 100.0) as u32,
            fmt_f(r.ci_low),
            fmt_f(r.ci_high)
        );
    }
    for (label, reason) in &dept_level.skipped {
        let _ = writeln!(s, "department-level [{label}]: skipped ({reason})");
    }
    if !convergence_note.is_empty() {
        let _ = writeln!(s, "{convergence_note}");
    }
    if let Ok(r) = stats::uoa_means_correlation(comparisons) {
        let _ = writeln!(
            s,
            "correlation of per-UoA means (LLM vs REF): {} (n = {})",
            fmt_f(r),
            comparisons.len()
        );
    }
    s
}
