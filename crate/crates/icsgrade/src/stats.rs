//! Ground-truth GPAs from score profiles, Pearson correlations with
//! Fisher z confidence intervals, departmental aggregation, convergence
//! curves, and per-UoA comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::corpus::{DepartmentKey, EvaluationDataset, ScoreProfile};
use crate::scoring::{AggregateScore, ScoreRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    /// UoA number as text, or "overall" for the pooled result.
    pub group_label: String,
    pub r: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UoaComparison {
    pub uoa: u8,
    pub mean_llm_score: f64,
    /// Mean ground-truth score per ICS: each case carries its department
    /// GPA, then cases are averaged, weighting departments by case count.
    pub mean_ref_score_per_ics: f64,
    pub n_ics: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grouping {
    PerUoa,
    Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SkipReason {
    TooFewPairs(usize),
    ConstantCoordinate,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::TooFewPairs(n) => write!(f, "only {n} usable pairs"),
            SkipReason::ConstantCoordinate => write!(f, "constant coordinate"),
        }
    }
}

/// Correlations per group, with groups that could not be correlated
/// reported rather than dropped.
#[derive(Debug, Clone, Default)]
pub struct GroupedCorrelations {
    pub results: Vec<CorrelationResult>,
    pub skipped: Vec<(String, SkipReason)>,
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("degenerate score profile for {0}: all percentages zero")]
    DegenerateProfile(DepartmentKey),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(SkipReason),
    #[error("confidence interval undefined for n = {0} (need n >= 4)")]
    IntervalUndefined(usize),
    #[error("cases with fewer than {required} parsed iterations: {deficient:?}")]
    InsufficientIterations {
        required: usize,
        deficient: Vec<String>,
    },
    #[error("case {0} has no profile in the dataset")]
    MissingProfile(String),
}

/// Star-weighted mean of a profile (Unclassified weighs 0). Normalizing
/// by the actual sum absorbs published rounding.
pub fn weighted_gpa(profile: &ScoreProfile) -> Result<f64, StatsError> {
    let pcts = profile.percentages();
    let sum: f64 = pcts.iter().sum();
    if sum <= 0.0 {
        return Err(StatsError::DegenerateProfile(profile.department.clone()));
    }
    let weighted: f64 = pcts
        .iter()
        .enumerate()
        .map(|(stars, pct)| stars as f64 * pct)
        .sum();
    Ok(weighted / sum)
}

/// Product-moment correlation. The denominator is sqrt of the product
/// of sums of squares, so identical coordinates give exactly 1.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64, StatsError> {
    if pairs.len() < 2 {
        return Err(StatsError::UndefinedCorrelation(SkipReason::TooFewPairs(
            pairs.len(),
        )));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for &(x, y) in pairs {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::UndefinedCorrelation(
            SkipReason::ConstantCoordinate,
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fisher z interval: z = atanh(r), half-width z_crit/sqrt(n-3),
/// mapped back through tanh.
pub fn correlation_ci(r: f64, n: usize, level: f64) -> Result<(f64, f64), StatsError> {
    if n < 4 {
        return Err(StatsError::IntervalUndefined(n));
    }
    assert!(level > 0.0 && level < 1.0, "confidence level must be in (0,1)");
    assert!(r.abs() < 1.0, "interval undefined at |r| = 1");
    let z = r.atanh();
    let z_crit = Normal::new(0.0, 1.0)
        .unwrap()
        .inverse_cdf(0.5 + level / 2.0);
    let hw = z_crit / ((n - 3) as f64).sqrt();
    Ok(((z - hw).tanh(), (z + hw).tanh()))
}

fn correlation_with_ci(
    label: &str,
    pairs: &[(f64, f64)],
    level: f64,
) -> Result<CorrelationResult, SkipReason> {
    let r = pearson(pairs).map_err(|e| match e {
        StatsError::UndefinedCorrelation(reason) => reason,
        _ => unreachable!(),
    })?;
    let (ci_low, ci_high) = if pairs.len() >= 4 && r.abs() < 1.0 {
        correlation_ci(r, pairs.len(), level).expect("checked preconditions")
    } else {
        // Degenerate interval when the Fisher transform is unavailable.
        (r, r)
    };
    Ok(CorrelationResult {
        group_label: label.to_string(),
        r,
        n: pairs.len(),
        ci_low: ci_low.min(r),
        ci_high: ci_high.max(r),
        level,
    })
}

fn gpa_for_case(
    dataset: &EvaluationDataset,
    case_id: &str,
) -> Result<(u8, f64), StatsError> {
    let case = dataset
        .cases
        .iter()
        .find(|c| c.case_id == case_id)
        .ok_or_else(|| StatsError::MissingProfile(case_id.to_string()))?;
    let profile = dataset
        .profile_for(case)
        .ok_or_else(|| StatsError::MissingProfile(case_id.to_string()))?;
    Ok((case.uoa, weighted_gpa(profile)?))
}

/// Pairs of (case mean LLM score, department GPA) per group.
fn case_pairs(
    aggregates: &[AggregateScore],
    dataset: &EvaluationDataset,
) -> Result<BTreeMap<u8, Vec<(f64, f64)>>, StatsError> {
    let mut by_uoa: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
    for agg in aggregates {
        let (uoa, gpa) = gpa_for_case(dataset, &agg.case_id)?;
        by_uoa.entry(uoa).or_default().push((agg.mean_score, gpa));
    }
    Ok(by_uoa)
}

fn grouped(
    by_uoa: BTreeMap<u8, Vec<(f64, f64)>>,
    grouping: Grouping,
    level: f64,
) -> GroupedCorrelations {
    let mut out = GroupedCorrelations::default();
    match grouping {
        Grouping::Overall => {
            let pooled: Vec<_> = by_uoa.into_values().flatten().collect();
            match correlation_with_ci("overall", &pooled, level) {
                Ok(res) => out.results.push(res),
                Err(reason) => out.skipped.push(("overall".into(), reason)),
            }
        }
        Grouping::PerUoa => {
            for (uoa, pairs) in by_uoa {
                let label = uoa.to_string();
                match correlation_with_ci(&label, &pairs, level) {
                    Ok(res) => out.results.push(res),
                    Err(reason) => out.skipped.push((label, reason)),
                }
            }
        }
    }
    out
}

/// Correlates each case's mean LLM score with its department's weighted
/// GPA, per UoA or pooled.
pub fn case_level_correlations(
    aggregates: &[AggregateScore],
    dataset: &EvaluationDataset,
    grouping: Grouping,
    level: f64,
) -> Result<GroupedCorrelations, StatsError> {
    Ok(grouped(case_pairs(aggregates, dataset)?, grouping, level))
}

/// Within each UoA, first averages case means per department, then
/// correlates the department LLM mean against the department GPA.
pub fn department_level_correlations(
    aggregates: &[AggregateScore],
    dataset: &EvaluationDataset,
    level: f64,
) -> Result<GroupedCorrelations, StatsError> {
    let mut per_dept: BTreeMap<DepartmentKey, Vec<f64>> = BTreeMap::new();
    for agg in aggregates {
        let case = dataset
            .cases
            .iter()
            .find(|c| c.case_id == agg.case_id)
            .ok_or_else(|| StatsError::MissingProfile(agg.case_id.clone()))?;
        per_dept
            .entry(case.department())
            .or_default()
            .push(agg.mean_score);
    }
    let mut by_uoa: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
    for (dept, means) in per_dept {
        let profile = dataset
            .profiles
            .get(&dept)
            .ok_or_else(|| StatsError::MissingProfile(dept.to_string()))?;
        let llm_mean = means.iter().sum::<f64>() / means.len() as f64;
        by_uoa
            .entry(dept.uoa)
            .or_default()
            .push((llm_mean, weighted_gpa(profile)?));
    }
    Ok(grouped(by_uoa, Grouping::PerUoa, level))
}

/// Pooled correlation against department GPA using only each case's
/// first k parsed iterations, for k = 1..=max_n. Requires every case to
/// carry at least max_n parsed records.
pub fn convergence_curve(
    records: &[ScoreRecord],
    dataset: &EvaluationDataset,
    max_n: usize,
) -> Result<Vec<(usize, f64)>, StatsError> {
    assert!(max_n >= 1);
    let mut by_case: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for r in records {
        if let Some(score) = r.parsed_score {
            by_case
                .entry(&r.case_id)
                .or_default()
                .push((r.iteration_index, score));
        }
    }
    let deficient: Vec<String> = by_case
        .iter()
        .filter(|(_, scores)| scores.len() < max_n)
        .map(|(id, _)| id.to_string())
        .collect();
    if !deficient.is_empty() {
        return Err(StatsError::InsufficientIterations {
            required: max_n,
            deficient,
        });
    }
    // Prefix scores per case by iteration index. Cases are ordered by
    // (UoA, case id) so the k = max_n point reproduces the pooled
    // case-level correlation bit for bit.
    let mut cases: Vec<(u8, String, Vec<f64>, f64)> = Vec::new();
    for (case_id, mut scores) in by_case {
        scores.sort_by_key(|(i, _)| *i);
        let (uoa, gpa) = gpa_for_case(dataset, case_id)?;
        cases.push((
            uoa,
            case_id.to_string(),
            scores.into_iter().map(|(_, s)| s).collect(),
            gpa,
        ));
    }
    cases.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    let mut curve = Vec::with_capacity(max_n);
    for k in 1..=max_n {
        let pairs: Vec<(f64, f64)> = cases
            .iter()
            .map(|(_, _, scores, gpa)| {
                let mean = scores[..k].iter().sum::<f64>() / k as f64;
                (mean, *gpa)
            })
            .collect();
        let r = pearson(&pairs)?;
        curve.push((k, r));
    }
    Ok(curve)
}

/// Per-UoA mean LLM score and mean ground-truth score per ICS. UoAs
/// without cases are omitted; coverage is carried in `n_ics`.
pub fn uoa_score_comparison(
    aggregates: &[AggregateScore],
    dataset: &EvaluationDataset,
) -> Result<Vec<UoaComparison>, StatsError> {
    let mut by_uoa: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
    for agg in aggregates {
        let (uoa, gpa) = gpa_for_case(dataset, &agg.case_id)?;
        by_uoa.entry(uoa).or_default().push((agg.mean_score, gpa));
    }
    Ok(by_uoa
        .into_iter()
        .map(|(uoa, pairs)| {
            let n = pairs.len() as f64;
            UoaComparison {
                uoa,
                mean_llm_score: pairs.iter().map(|p| p.0).sum::<f64>() / n,
                mean_ref_score_per_ics: pairs.iter().map(|p| p.1).sum::<f64>() / n,
                n_ics: pairs.len(),
            }
        })
        .collect())
}

/// Correlation between per-UoA mean pairs (LLM vs ground truth).
pub fn uoa_means_correlation(comparisons: &[UoaComparison]) -> Result<f64, StatsError> {
    let pairs: Vec<(f64, f64)> = comparisons
        .iter()
        .map(|c| (c.mean_llm_score, c.mean_ref_score_per_ics))
        .collect();
    pearson(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{join_dataset, ImpactCaseStudy};
    use std::collections::HashMap;

    fn profile(inst: &str, uoa: u8, pcts: [f64; 5]) -> (DepartmentKey, ScoreProfile) {
        let key = DepartmentKey {
            institution: inst.into(),
            uoa,
            letter: None,
        };
        (
            key.clone(),
            ScoreProfile {
                department: key,
                pct_unclassified: pcts[0],
                pct_1: pcts[1],
                pct_2: pcts[2],
                pct_3: pcts[3],
                pct_4: pcts[4],
                ics_count: None,
            },
        )
    }

    fn case(id: &str, inst: &str, uoa: u8) -> ImpactCaseStudy {
        ImpactCaseStudy {
            case_id: id.into(),
            title: id.into(),
            institution: inst.into(),
            uoa,
            submission_letter: None,
            summary: String::new(),
            underpinning_research: String::new(),
            references_to_research: String::new(),
            details_of_impact: String::new(),
            corroborating_sources: String::new(),
        }
    }

    fn agg(id: &str, mean: f64) -> AggregateScore {
        AggregateScore {
            case_id: id.into(),
            n_parsed: 5,
            mean_score: mean,
            std_dev: 0.0,
            n_unparsed: 0,
        }
    }

    #[test]
    fn gpa_examples() {
        let (_, p) = profile("A", 1, [0.0, 0.0, 0.0, 0.0, 100.0]);
        assert_eq!(weighted_gpa(&p).unwrap(), 4.0);
        let (_, p) = profile("A", 1, [0.0, 0.0, 0.0, 50.0, 50.0]);
        assert_eq!(weighted_gpa(&p).unwrap(), 3.5);
        let (_, p) = profile("A", 1, [0.0, 0.0, 12.5, 25.0, 62.5]);
        assert!((weighted_gpa(&p).unwrap() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn gpa_degenerate_profile() {
        let (_, p) = profile("A", 1, [0.0; 5]);
        assert!(matches!(
            weighted_gpa(&p),
            Err(StatsError::DegenerateProfile(_))
        ));
    }

    #[test]
    fn pearson_exact_cases() {
        assert_eq!(
            pearson(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap(),
            1.0
        );
        assert_eq!(
            pearson(&[(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)]).unwrap(),
            -1.0
        );
    }

    #[test]
    fn pearson_constant_coordinate_undefined() {
        assert!(matches!(
            pearson(&[(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)]),
            Err(StatsError::UndefinedCorrelation(
                SkipReason::ConstantCoordinate
            ))
        ));
    }

    #[test]
    fn ci_symmetric_about_zero() {
        let (lo, hi) = correlation_ci(0.0, 103, 0.95).unwrap();
        assert!((lo + hi).abs() < 1e-12);
        let expected = (1.959963984540054_f64 / 10.0).tanh();
        assert!((hi - expected).abs() < 1e-9, "{hi} vs {expected}");
    }

    #[test]
    fn ci_reproduces_published_interval() {
        let (lo, hi) = correlation_ci(0.349, 6220, 0.95).unwrap();
        assert!((lo - 0.327).abs() < 0.002, "{lo}");
        assert!((hi - 0.371).abs() < 0.002, "{hi}");
    }

    #[test]
    fn ci_width_shrinks_with_n() {
        let mut last = f64::INFINITY;
        for n in [10, 50, 200, 1000] {
            let (lo, hi) = correlation_ci(0.4, n, 0.95).unwrap();
            assert!(hi - lo < last);
            last = hi - lo;
        }
    }

    #[test]
    fn ci_undefined_below_four() {
        assert!(matches!(
            correlation_ci(0.5, 3, 0.95),
            Err(StatsError::IntervalUndefined(3))
        ));
    }

    fn two_dept_dataset() -> EvaluationDataset {
        let profiles: HashMap<_, _> = [
            profile("A", 1, [0.0, 0.0, 100.0, 0.0, 0.0]),
            profile("B", 1, [0.0, 0.0, 0.0, 0.0, 100.0]),
        ]
        .into_iter()
        .collect();
        join_dataset(
            vec![case("a1", "A", 1), case("a2", "A", 1), case("b1", "B", 1), case("b2", "B", 1)],
            profiles,
        )
    }

    #[test]
    fn planted_scores_give_perfect_case_level_correlation() {
        let ds = two_dept_dataset();
        let aggs = vec![agg("a1", 2.0), agg("a2", 2.0), agg("b1", 4.0), agg("b2", 4.0)];
        let out = case_level_correlations(&aggs, &ds, Grouping::Overall, 0.95).unwrap();
        assert_eq!(out.results[0].r, 1.0);
    }

    #[test]
    fn single_department_group_is_skipped_as_constant() {
        let profiles: HashMap<_, _> = [profile("A", 1, [0.0, 0.0, 0.0, 50.0, 50.0])]
            .into_iter()
            .collect();
        let ds = join_dataset(vec![case("a1", "A", 1), case("a2", "A", 1)], profiles);
        let aggs = vec![agg("a1", 3.0), agg("a2", 4.0)];
        let out = case_level_correlations(&aggs, &ds, Grouping::PerUoa, 0.95).unwrap();
        assert!(out.results.is_empty());
        assert_eq!(
            out.skipped,
            vec![("1".to_string(), SkipReason::ConstantCoordinate)]
        );
    }

    #[test]
    fn department_averaging_example() {
        let ds = {
            let profiles: HashMap<_, _> = [
                profile("A", 1, [0.0, 0.0, 0.0, 50.0, 50.0]),
                profile("B", 1, [0.0, 0.0, 100.0, 0.0, 0.0]),
            ]
            .into_iter()
            .collect();
            join_dataset(
                vec![case("a1", "A", 1), case("a2", "A", 1), case("b1", "B", 1), case("b2", "B", 1)],
                profiles,
            )
        };
        // Department A cases mean to 3.5, department B to 2.0, matching
        // the GPAs exactly.
        let aggs = vec![agg("a1", 3.0), agg("a2", 4.0), agg("b1", 2.0), agg("b2", 2.0)];
        let out = department_level_correlations(&aggs, &ds, 0.95).unwrap();
        assert_eq!(out.results.len(), 1);
        assert_eq!(out.results[0].r, 1.0);
        assert_eq!(out.results[0].n, 2);
    }

    #[test]
    fn one_case_per_department_matches_case_level() {
        let profiles: HashMap<_, _> = [
            profile("A", 1, [0.0, 0.0, 50.0, 50.0, 0.0]),
            profile("B", 1, [0.0, 0.0, 0.0, 50.0, 50.0]),
            profile("C", 1, [0.0, 10.0, 20.0, 30.0, 40.0]),
        ]
        .into_iter()
        .collect();
        let ds = join_dataset(
            vec![case("a1", "A", 1), case("b1", "B", 1), case("c1", "C", 1)],
            profiles,
        );
        let aggs = vec![agg("a1", 2.1), agg("b1", 3.9), agg("c1", 3.2)];
        let case_out = case_level_correlations(&aggs, &ds, Grouping::PerUoa, 0.95).unwrap();
        let dept_out = department_level_correlations(&aggs, &ds, 0.95).unwrap();
        assert_eq!(case_out.results[0].r, dept_out.results[0].r);
    }

    #[test]
    fn uoa_comparison_weighted_by_case_count() {
        let profiles: HashMap<_, _> = [
            profile("A", 7, [0.0, 0.0, 0.0, 100.0, 0.0]),
            profile("B", 7, [0.0, 0.0, 0.0, 0.0, 100.0]),
        ]
        .into_iter()
        .collect();
        let ds = join_dataset(
            vec![
                case("a1", "A", 7),
                case("b1", "B", 7),
                case("b2", "B", 7),
                case("b3", "B", 7),
            ],
            profiles,
        );
        let aggs = vec![agg("a1", 3.0), agg("b1", 4.0), agg("b2", 4.0), agg("b3", 4.0)];
        let cmp = uoa_score_comparison(&aggs, &ds).unwrap();
        assert_eq!(cmp.len(), 1);
        assert_eq!(cmp[0].n_ics, 4);
        // GPAs 3 and 4 with 1 and 3 cases: per-ICS mean 3.75.
        assert!((cmp[0].mean_ref_score_per_ics - 3.75).abs() < 1e-12);
        assert!((cmp[0].mean_llm_score - 3.75).abs() < 1e-12);
    }

    #[test]
    fn single_department_gpa_flows_to_comparison() {
        let profiles: HashMap<_, _> = [profile("A", 3, [0.0, 0.0, 20.0, 40.0, 40.0])]
            .into_iter()
            .collect();
        let ds = join_dataset(
            vec![case("a1", "A", 3), case("a2", "A", 3), case("a3", "A", 3)],
            profiles,
        );
        let aggs = vec![agg("a1", 3.0), agg("a2", 3.5), agg("a3", 4.0)];
        let cmp = uoa_score_comparison(&aggs, &ds).unwrap();
        assert!((cmp[0].mean_ref_score_per_ics - 3.2).abs() < 1e-12);
    }
}
