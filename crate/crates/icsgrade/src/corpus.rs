//! Ingestion of impact case studies and published score profiles from
//! delimiter-separated files, joined into a keyed evaluation dataset.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identity of a submitting unit: institution + UoA + optional
/// multiple-submission letter. Equality is exact on all three fields;
/// an absent letter never equals a present one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DepartmentKey {
    pub institution: String,
    pub uoa: u8,
    pub letter: Option<char>,
}

impl fmt::Display for DepartmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.letter {
            Some(l) => write!(f, "{} / UoA {} / {}", self.institution, self.uoa, l),
            None => write!(f, "{} / UoA {}", self.institution, self.uoa),
        }
    }
}

/// One impact case study: identity, department key fields, and the five
/// narrative sections. Sections may be empty (redacted cases) but are
/// never absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactCaseStudy {
    pub case_id: String,
    pub title: String,
    pub institution: String,
    pub uoa: u8,
    pub submission_letter: Option<char>,
    pub summary: String,
    pub underpinning_research: String,
    pub references_to_research: String,
    pub details_of_impact: String,
    pub corroborating_sources: String,
}

impl ImpactCaseStudy {
    pub fn department(&self) -> DepartmentKey {
        DepartmentKey {
            institution: self.institution.clone(),
            uoa: self.uoa,
            letter: self.submission_letter,
        }
    }
}

/// A department's published percentage distribution of ICS scores over
/// Unclassified/1*/2*/3*/4*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreProfile {
    pub department: DepartmentKey,
    pub pct_unclassified: f64,
    pub pct_1: f64,
    pub pct_2: f64,
    pub pct_3: f64,
    pub pct_4: f64,
    pub ics_count: Option<u32>,
}

impl ScoreProfile {
    pub fn percentages(&self) -> [f64; 5] {
        [
            self.pct_unclassified,
            self.pct_1,
            self.pct_2,
            self.pct_3,
            self.pct_4,
        ]
    }
}

/// Cases joined with their department profiles. Cases without a profile
/// are listed in `unmatched_cases`, never silently dropped.
#[derive(Debug, Clone)]
pub struct EvaluationDataset {
    pub cases: Vec<ImpactCaseStudy>,
    pub profiles: HashMap<DepartmentKey, ScoreProfile>,
    pub unmatched_cases: Vec<String>,
}

impl EvaluationDataset {
    /// The profile for a case, if its department is covered.
    pub fn profile_for(&self, case: &ImpactCaseStudy) -> Option<&ScoreProfile> {
        self.profiles.get(&case.department())
    }

    pub fn matched_count(&self) -> usize {
        self.cases.len() - self.unmatched_cases.len()
    }
}

/// Header names for the corpus file. The official spreadsheet's headers
/// are not fixed, so the mapping is external configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusColumns {
    /// Optional; when absent, ids are synthesized as `row-N`.
    pub case_id: Option<String>,
    pub title: String,
    pub institution: String,
    pub uoa: String,
    /// Optional multiple-submission letter column.
    pub letter: Option<String>,
    pub summary: String,
    pub underpinning_research: String,
    pub references_to_research: String,
    pub details_of_impact: String,
    pub corroborating_sources: String,
}

/// Header names for the results file carrying score profiles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileColumns {
    pub institution: String,
    pub uoa: String,
    pub letter: Option<String>,
    /// Column whose value selects profile rows (kept when it equals
    /// "impact", case-insensitively).
    pub profile_type: String,
    pub pct_unclassified: String,
    pub pct_1: String,
    pub pct_2: String,
    pub pct_3: String,
    pub pct_4: String,
    pub ics_count: Option<String>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing mandatory column '{0}'")]
    MissingColumn(String),
    #[error("duplicate department key: {0}")]
    DuplicateDepartment(DepartmentKey),
    #[error("file has no data rows")]
    Empty,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// A per-row problem: the row was skipped and the reason kept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based data row number (excluding the header).
    pub row: usize,
    pub case_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub cases_loaded: usize,
    pub case_rows_skipped: usize,
    pub case_errors: Vec<RowError>,
    pub profiles_loaded: usize,
    pub profile_rows_skipped: usize,
    pub profile_errors: Vec<RowError>,
    pub matched: usize,
    pub unmatched: usize,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "cases: {} loaded, {} rows skipped",
            self.cases_loaded, self.case_rows_skipped
        )?;
        for e in &self.case_errors {
            writeln!(
                f,
                "  row {}{}: {}",
                e.row,
                e.case_id
                    .as_deref()
                    .map(|id| format!(" (case {id})"))
                    .unwrap_or_default(),
                e.message
            )?;
        }
        writeln!(
            f,
            "profiles: {} loaded, {} rows skipped",
            self.profiles_loaded, self.profile_rows_skipped
        )?;
        for e in &self.profile_errors {
            writeln!(f, "  row {}: {}", e.row, e.message)?;
        }
        write!(f, "join: {} matched, {} unmatched", self.matched, self.unmatched)
    }
}

fn reader(path: &Path, delimiter: u8) -> Result<csv::Reader<std::fs::File>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(file))
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

/// Trailing-newline trim only; section text is otherwise preserved
/// byte-exactly.
fn trim_trailing_newlines(s: &str) -> &str {
    s.trim_end_matches(['\n', '\r'])
}

fn parse_letter(raw: Option<&str>) -> Result<Option<char>, String> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => {
            let mut chars = s.chars();
            let c = chars.next().unwrap();
            if chars.next().is_some() || !c.is_ascii_alphabetic() {
                Err(format!("malformed submission letter '{s}'"))
            } else {
                Ok(Some(c.to_ascii_uppercase()))
            }
        }
    }
}

fn parse_uoa(raw: &str) -> Result<u8, String> {
    let uoa: u8 = raw
        .trim()
        .parse()
        .map_err(|_| format!("malformed UoA '{raw}'"))?;
    if (1..=34).contains(&uoa) {
        Ok(uoa)
    } else {
        Err(format!("UoA {uoa} outside 1..34"))
    }
}

/// Loads the case-study corpus. Per-row problems skip the row and are
/// collected; structural problems (missing columns, unreadable file) fail.
pub fn load_corpus(
    path: &Path,
    columns: &CorpusColumns,
    delimiter: u8,
) -> Result<(Vec<ImpactCaseStudy>, Vec<RowError>), IngestError> {
    let mut rdr = reader(path, delimiter)?;
    let headers = rdr.headers()?.clone();

    let idx_case_id = columns
        .case_id
        .as_deref()
        .map(|c| header_index(&headers, c))
        .transpose()?;
    let idx_title = header_index(&headers, &columns.title)?;
    let idx_institution = header_index(&headers, &columns.institution)?;
    let idx_uoa = header_index(&headers, &columns.uoa)?;
    let idx_letter = columns
        .letter
        .as_deref()
        .map(|c| header_index(&headers, c))
        .transpose()?;
    let idx_summary = header_index(&headers, &columns.summary)?;
    let idx_underpinning = header_index(&headers, &columns.underpinning_research)?;
    let idx_references = header_index(&headers, &columns.references_to_research)?;
    let idx_details = header_index(&headers, &columns.details_of_impact)?;
    let idx_corroborating = header_index(&headers, &columns.corroborating_sources)?;

    let mut cases = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    row,
                    case_id: None,
                    message: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let case_id = match idx_case_id {
            Some(idx) => field(idx).trim().to_string(),
            None => format!("row-{row}"),
        };
        let fail = |msg: String, errors: &mut Vec<RowError>| {
            errors.push(RowError {
                row,
                case_id: Some(case_id.clone()),
                message: msg,
            });
        };
        if case_id.is_empty() {
            fail("empty case id".into(), &mut errors);
            continue;
        }
        if !seen_ids.insert(case_id.clone()) {
            fail(format!("duplicate case id '{case_id}'"), &mut errors);
            continue;
        }
        let title = trim_trailing_newlines(field(idx_title)).to_string();
        if title.trim().is_empty() {
            fail("missing title".into(), &mut errors);
            continue;
        }
        let uoa = match parse_uoa(field(idx_uoa)) {
            Ok(u) => u,
            Err(msg) => {
                fail(msg, &mut errors);
                continue;
            }
        };
        let letter = match parse_letter(idx_letter.map(field)) {
            Ok(l) => l,
            Err(msg) => {
                fail(msg, &mut errors);
                continue;
            }
        };
        cases.push(ImpactCaseStudy {
            case_id,
            title,
            institution: field(idx_institution).trim().to_string(),
            uoa,
            submission_letter: letter,
            summary: trim_trailing_newlines(field(idx_summary)).to_string(),
            underpinning_research: trim_trailing_newlines(field(idx_underpinning)).to_string(),
            references_to_research: trim_trailing_newlines(field(idx_references)).to_string(),
            details_of_impact: trim_trailing_newlines(field(idx_details)).to_string(),
            corroborating_sources: trim_trailing_newlines(field(idx_corroborating)).to_string(),
        });
    }
    Ok((cases, errors))
}

/// Writes cases back out in the given column mapping. Round-tripping
/// through `load_corpus` is a fixed point on case content.
pub fn write_corpus(
    path: &Path,
    cases: &[ImpactCaseStudy],
    columns: &CorpusColumns,
    delimiter: u8,
) -> Result<(), IngestError> {
    let file = std::fs::File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(file);
    let mut header = Vec::new();
    if let Some(c) = &columns.case_id {
        header.push(c.as_str());
    }
    header.extend([
        columns.title.as_str(),
        columns.institution.as_str(),
        columns.uoa.as_str(),
    ]);
    if let Some(c) = &columns.letter {
        header.push(c.as_str());
    }
    header.extend([
        columns.summary.as_str(),
        columns.underpinning_research.as_str(),
        columns.references_to_research.as_str(),
        columns.details_of_impact.as_str(),
        columns.corroborating_sources.as_str(),
    ]);
    wtr.write_record(&header)?;
    for c in cases {
        let uoa = c.uoa.to_string();
        let letter = c.submission_letter.map(String::from).unwrap_or_default();
        let mut row = Vec::new();
        if columns.case_id.is_some() {
            row.push(c.case_id.as_str());
        }
        row.extend([c.title.as_str(), c.institution.as_str(), uoa.as_str()]);
        if columns.letter.is_some() {
            row.push(letter.as_str());
        }
        row.extend([
            c.summary.as_str(),
            c.underpinning_research.as_str(),
            c.references_to_research.as_str(),
            c.details_of_impact.as_str(),
            c.corroborating_sources.as_str(),
        ]);
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Loads score profiles, keeping only rows whose profile-type label is
/// "impact" (case-insensitive). Duplicate department keys are fatal.
pub fn load_profiles(
    path: &Path,
    columns: &ProfileColumns,
    delimiter: u8,
) -> Result<(HashMap<DepartmentKey, ScoreProfile>, Vec<RowError>), IngestError> {
    let mut rdr = reader(path, delimiter)?;
    let headers = rdr.headers()?.clone();

    let idx_institution = header_index(&headers, &columns.institution)?;
    let idx_uoa = header_index(&headers, &columns.uoa)?;
    let idx_letter = columns
        .letter
        .as_deref()
        .map(|c| header_index(&headers, c))
        .transpose()?;
    let idx_type = header_index(&headers, &columns.profile_type)?;
    let idx_pcts = [
        header_index(&headers, &columns.pct_unclassified)?,
        header_index(&headers, &columns.pct_1)?,
        header_index(&headers, &columns.pct_2)?,
        header_index(&headers, &columns.pct_3)?,
        header_index(&headers, &columns.pct_4)?,
    ];
    let idx_count = columns
        .ics_count
        .as_deref()
        .map(|c| header_index(&headers, c))
        .transpose()?;

    let mut profiles = HashMap::new();
    let mut errors = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    row,
                    case_id: None,
                    message: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let field = |idx: usize| record.get(idx).unwrap_or("");
        if !field(idx_type).trim().eq_ignore_ascii_case("impact") {
            continue;
        }
        let fail = |msg: String, errors: &mut Vec<RowError>| {
            errors.push(RowError {
                row,
                case_id: None,
                message: msg,
            });
        };
        let uoa = match parse_uoa(field(idx_uoa)) {
            Ok(u) => u,
            Err(msg) => {
                fail(msg, &mut errors);
                continue;
            }
        };
        let letter = match parse_letter(idx_letter.map(field)) {
            Ok(l) => l,
            Err(msg) => {
                fail(msg, &mut errors);
                continue;
            }
        };
        let mut pcts = [0.0f64; 5];
        let mut bad = None;
        for (slot, idx) in pcts.iter_mut().zip(idx_pcts) {
            match field(idx).trim().parse::<f64>() {
                Ok(v) if (0.0..=100.0).contains(&v) => *slot = v,
                Ok(v) => {
                    bad = Some(format!("percentage {v} outside [0,100]"));
                    break;
                }
                Err(_) => {
                    bad = Some(format!("malformed percentage '{}'", field(idx)));
                    break;
                }
            }
        }
        if let Some(msg) = bad {
            fail(msg, &mut errors);
            continue;
        }
        let sum: f64 = pcts.iter().sum();
        // 100 ± 0.5 tolerance absorbs published rounding.
        if (sum - 100.0).abs() > 0.5 {
            fail(format!("percentages sum to {sum}, outside 100 ± 0.5"), &mut errors);
            continue;
        }
        let ics_count = match idx_count.map(field).map(str::trim) {
            None | Some("") => None,
            Some(s) => match s.parse::<u32>() {
                Ok(n) if n > 0 => Some(n),
                _ => {
                    fail(format!("malformed ICS count '{s}'"), &mut errors);
                    continue;
                }
            },
        };
        let key = DepartmentKey {
            institution: field(idx_institution).trim().to_string(),
            uoa,
            letter,
        };
        if profiles.contains_key(&key) {
            return Err(IngestError::DuplicateDepartment(key));
        }
        profiles.insert(
            key.clone(),
            ScoreProfile {
                department: key,
                pct_unclassified: pcts[0],
                pct_1: pcts[1],
                pct_2: pcts[2],
                pct_3: pcts[3],
                pct_4: pcts[4],
                ics_count,
            },
        );
    }
    Ok((profiles, errors))
}

/// Matches cases to profiles by department key. Unmatched cases are a
/// reported state, not an error.
pub fn join_dataset(
    cases: Vec<ImpactCaseStudy>,
    profiles: HashMap<DepartmentKey, ScoreProfile>,
) -> EvaluationDataset {
    let unmatched_cases = cases
        .iter()
        .filter(|c| !profiles.contains_key(&c.department()))
        .map(|c| c.case_id.clone())
        .collect();
    EvaluationDataset {
        cases,
        profiles,
        unmatched_cases,
    }
}
