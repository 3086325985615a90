//! Score extraction from report text, per-case iteration orchestration,
//! aggregation, the manual-review queue, and the on-disk score archive.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::LazyLock;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ImpactCaseStudy;
use crate::llm::{Client, CompletionRequest, LlmError};
use crate::prompts::{build_user_prompt, system_prompt, InputVariant, PromptStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Parsed,
    Unparsed,
    Manual,
}

/// One scoring iteration: the raw report plus the extracted star score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub case_id: String,
    pub iteration_index: u32,
    pub report_text: String,
    pub parsed_score: Option<f64>,
    pub parse_status: ParseStatus,
    pub strategy: PromptStrategy,
    pub variant: InputVariant,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-case mean and population spread over parsed iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub case_id: String,
    pub n_parsed: usize,
    pub mean_score: f64,
    pub std_dev: f64,
    pub n_unparsed: usize,
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("no parsed scores for case {0}")]
    AggregationImpossible(String),
    #[error("manual score {0} is off the 0.5 grid in [1,4]")]
    InvalidManualScore(f64),
    #[error(transparent)]
    Client(#[from] LlmError),
    #[error("archive error: {0}")]
    Archive(String),
}

// ---------------------------------------------------------------------------
// Score extraction

/// Explicit score statements. X is 1-4 optionally followed by .5; each
/// pattern's first capture group is the number.
static CANDIDATE_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    const X: &str = r"([1-3](?:\.5)?|4)";
    [
        format!(r"(?i)score of (?:a )?{X}\*?"),
        format!(r"(?i){X}\*\s+rating"),
        format!(r"(?i)awarded\s+(?:a\s+)?{X}\*?"),
        // Bare number adjacent to score/rating/overall, either side.
        format!(r"(?i)\b(?:score|rating|overall)\b[:\s]+(?:of\s+|is\s+|was\s+)?{X}\*?"),
        format!(r"(?i){X}\*?\s*\b(?:score|rating|overall)\b"),
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});

/// Spans that must not contribute candidates: rubric echoes (a star
/// level restating its official descriptor) and scale ranges like
/// "1* to 4*".
static EXCLUSION_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        r"(?i)[1-4](?:\.5)?\*?\s*:\s*(?:outstanding|very considerable|considerable|recognised but modest|world leading|internationally excellent|internationally recognised|nationally recognised)",
        r"(?i)[1-4]\*?\s*(?:to|-|–)\s*[1-4]\*",
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});

/// Rejects matches that are fragments of larger numbers, e.g. the "4"
/// in "4.75" or "13".
fn is_standalone_number(text: &str, start: usize, end: usize) -> bool {
    let bytes = text.as_bytes();
    let prev = start.checked_sub(1).map(|i| bytes[i] as char);
    if let Some(c) = prev {
        if c.is_ascii_digit() || c == '.' {
            return false;
        }
    }
    let mut after = text[end..].chars();
    match after.next() {
        Some(c) if c.is_ascii_digit() => false,
        Some('.') => !matches!(after.next(), Some(d) if d.is_ascii_digit()),
        _ => true,
    }
}

/// Extracts a star score from a report. Last surviving candidate wins
/// (final verdicts conclude reports); rubric echoes and scale ranges
/// are excluded. Never returns a value outside [1,4].
pub fn parse_score(report_text: &str) -> Option<f64> {
    let exclusions: Vec<(usize, usize)> = EXCLUSION_PATTERNS
        .iter()
        .flat_map(|re| re.find_iter(report_text).map(|m| (m.start(), m.end())))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for re in CANDIDATE_PATTERNS.iter() {
        for caps in re.captures_iter(report_text) {
            let m = caps.get(1).unwrap();
            if !is_standalone_number(report_text, m.start(), m.end()) {
                continue;
            }
            if exclusions
                .iter()
                .any(|&(s, e)| m.start() >= s && m.end() <= e)
            {
                continue;
            }
            let value: f64 = m.as_str().parse().ok()?;
            if !on_half_grid(value) {
                continue;
            }
            if best.map_or(true, |(pos, _)| m.start() >= pos) {
                best = Some((m.start(), value));
            }
        }
    }
    best.map(|(_, v)| v)
}

fn on_half_grid(score: f64) -> bool {
    (1.0..=4.0).contains(&score) && (score * 2.0).fract() == 0.0
}

// ---------------------------------------------------------------------------
// Orchestration

/// Runs `n_iterations` scoring iterations for one case. Unparsed and
/// failed iterations are retained, never discarded; only fatal client
/// errors propagate.
pub fn score_case(
    ics: &ImpactCaseStudy,
    variant: InputVariant,
    strategy: PromptStrategy,
    n_iterations: u32,
    model_id: &str,
    sampling_temperature: Option<f64>,
    client: &Client,
) -> Result<Vec<ScoreRecord>, ScoringError> {
    assert!(n_iterations >= 1);
    let system_text = system_prompt(strategy).to_string();
    let user_text = build_user_prompt(ics, variant);
    let mut records = Vec::with_capacity(n_iterations as usize);
    for iteration_index in 0..n_iterations {
        let req = CompletionRequest {
            model_id: model_id.to_string(),
            system_text: system_text.clone(),
            user_text: user_text.clone(),
            iteration_index,
            sampling_temperature,
        };
        records.push(score_iteration(ics, &req, variant, strategy, client)?);
    }
    Ok(records)
}

/// One iteration: submit, store the raw report, parse immediately.
pub fn score_iteration(
    ics: &ImpactCaseStudy,
    req: &CompletionRequest,
    variant: InputVariant,
    strategy: PromptStrategy,
    client: &Client,
) -> Result<ScoreRecord, ScoringError> {
    match client.complete(req) {
        Ok(resp) => {
            let parsed = parse_score(&resp.report_text);
            Ok(ScoreRecord {
                case_id: ics.case_id.clone(),
                iteration_index: req.iteration_index,
                report_text: resp.report_text,
                parsed_score: parsed,
                parse_status: if parsed.is_some() {
                    ParseStatus::Parsed
                } else {
                    ParseStatus::Unparsed
                },
                strategy,
                variant,
                model_id: req.model_id.clone(),
                error: None,
            })
        }
        Err(e @ LlmError::Fatal(_)) | Err(e @ LlmError::Cache(_)) => Err(e.into()),
        // Retriable exhaustion and empty responses mark the iteration
        // unparsed with a note rather than aborting the batch.
        Err(e) => Ok(ScoreRecord {
            case_id: ics.case_id.clone(),
            iteration_index: req.iteration_index,
            report_text: String::new(),
            parsed_score: None,
            parse_status: ParseStatus::Unparsed,
            strategy,
            variant,
            model_id: req.model_id.clone(),
            error: Some(e.to_string()),
        }),
    }
}

/// Arithmetic mean and population standard deviation over the parsed
/// (including manually scored) records of one case.
pub fn aggregate(records: &[ScoreRecord]) -> Result<AggregateScore, ScoringError> {
    let case_id = records
        .first()
        .map(|r| r.case_id.clone())
        .unwrap_or_default();
    let scores: Vec<f64> = records.iter().filter_map(|r| r.parsed_score).collect();
    if scores.is_empty() {
        return Err(ScoringError::AggregationImpossible(case_id));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(AggregateScore {
        case_id,
        n_parsed: scores.len(),
        mean_score: mean,
        std_dev: var.sqrt(),
        n_unparsed: records.len() - scores.len(),
    })
}

/// Per-case aggregates over a whole archive, sorted by case id.
pub fn aggregate_all(records: &[ScoreRecord]) -> Vec<Result<AggregateScore, ScoringError>> {
    let mut by_case: std::collections::BTreeMap<&str, Vec<&ScoreRecord>> = Default::default();
    for r in records {
        by_case.entry(&r.case_id).or_default().push(r);
    }
    by_case
        .values()
        .map(|recs| {
            let owned: Vec<ScoreRecord> = recs.iter().map(|r| (*r).clone()).collect();
            aggregate(&owned)
        })
        .collect()
}

/// All unparsed records, ordered by case id then iteration, for human
/// score entry.
pub fn review_queue(records: &[ScoreRecord]) -> Vec<(String, u32, String)> {
    let mut queue: Vec<_> = records
        .iter()
        .filter(|r| r.parse_status == ParseStatus::Unparsed)
        .map(|r| (r.case_id.clone(), r.iteration_index, r.report_text.clone()))
        .collect();
    queue.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    queue
}

/// Records a human-read score for an unparsed record.
pub fn apply_manual_score(record: &mut ScoreRecord, score: f64) -> Result<(), ScoringError> {
    if !on_half_grid(score) {
        return Err(ScoringError::InvalidManualScore(score));
    }
    record.parsed_score = Some(score);
    record.parse_status = ParseStatus::Manual;
    Ok(())
}

/// Uniform sample of k report texts without replacement, reproducible
/// from the seed.
pub fn sample_reports(records: &[ScoreRecord], k: usize, seed: u64) -> Vec<String> {
    assert!(k <= records.len(), "k exceeds record count");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, records.len(), k)
        .into_iter()
        .map(|i| records[i].report_text.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Archive: line-delimited records under a run directory

pub fn archive_path(run_dir: &Path) -> std::path::PathBuf {
    run_dir.join("records.jsonl")
}

pub fn append_record(file: &mut std::fs::File, record: &ScoreRecord) -> Result<(), ScoringError> {
    let line = serde_json::to_string(record).map_err(|e| ScoringError::Archive(e.to_string()))?;
    writeln!(file, "{line}").map_err(|e| ScoringError::Archive(e.to_string()))?;
    file.flush().map_err(|e| ScoringError::Archive(e.to_string()))
}

pub fn read_archive(run_dir: &Path) -> Result<Vec<ScoreRecord>, ScoringError> {
    let path = archive_path(run_dir);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = std::fs::File::open(&path).map_err(|e| ScoringError::Archive(e.to_string()))?;
    let mut records = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| ScoringError::Archive(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| ScoringError::Archive(e.to_string()))?,
        );
    }
    Ok(records)
}

/// Atomically replaces the archive (used after manual review edits).
pub fn rewrite_archive(run_dir: &Path, records: &[ScoreRecord]) -> Result<(), ScoringError> {
    let path = archive_path(run_dir);
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f =
            std::fs::File::create(&tmp).map_err(|e| ScoringError::Archive(e.to_string()))?;
        for r in records {
            append_record(&mut f, r)?;
        }
    }
    std::fs::rename(&tmp, &path).map_err(|e| ScoringError::Archive(e.to_string()))
}
