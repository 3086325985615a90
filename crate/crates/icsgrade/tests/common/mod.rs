//! Shared fixtures for integration tests: synthetic datasets with
//! planted department GPAs and mock backends targeting them.

#![allow(dead_code)]

use std::collections::HashMap;

use icsgrade::corpus::{join_dataset, DepartmentKey, ScoreProfile};
use icsgrade::llm::{MockBackend, MockConfig, MockTarget, ResponseCache, RetryPolicy};
use icsgrade::{Client, EvaluationDataset, ImpactCaseStudy};

/// Builds a profile whose weighted GPA equals `gpa` exactly by splitting
/// mass between the two adjacent star levels.
pub fn profile_with_gpa(key: DepartmentKey, gpa: f64) -> ScoreProfile {
    assert!((1.0..=4.0).contains(&gpa));
    let lo = (gpa.floor() as usize).min(3);
    let hi_share = (gpa - lo as f64) * 100.0;
    let mut pcts = [0.0f64; 5];
    pcts[lo] = 100.0 - hi_share;
    pcts[lo + 1] = hi_share;
    ScoreProfile {
        department: key,
        pct_unclassified: pcts[0],
        pct_1: pcts[1],
        pct_2: pcts[2],
        pct_3: pcts[3],
        pct_4: pcts[4],
        ics_count: None,
    }
}

pub fn case(id: &str, title: &str, inst: &str, uoa: u8) -> ImpactCaseStudy {
    ImpactCaseStudy {
        case_id: id.into(),
        title: title.into(),
        institution: inst.into(),
        uoa,
        submission_letter: None,
        summary: format!("Summary of {title}."),
        underpinning_research: "Underpinning research.".into(),
        references_to_research: "R1.".into(),
        details_of_impact: "Details of the impact.".into(),
        corroborating_sources: "E1.".into(),
    }
}

/// Synthetic dataset: `uoas` x `depts_per_uoa` departments with
/// `cases_per_dept` cases each, department GPAs supplied by `gpa_of`.
pub struct Synthetic {
    pub dataset: EvaluationDataset,
    /// case title -> department GPA, ready for mock targeting.
    pub gpa_by_title: HashMap<String, f64>,
}

pub fn synthetic_dataset(
    uoas: u8,
    depts_per_uoa: usize,
    cases_per_dept: usize,
    gpa_of: impl Fn(u8, usize) -> f64,
) -> Synthetic {
    let mut cases = Vec::new();
    let mut profiles = HashMap::new();
    let mut gpa_by_title = HashMap::new();
    for uoa in 1..=uoas {
        for d in 0..depts_per_uoa {
            let inst = format!("University {uoa}-{d}");
            let key = DepartmentKey {
                institution: inst.clone(),
                uoa,
                letter: None,
            };
            let gpa = gpa_of(uoa, d);
            profiles.insert(key.clone(), profile_with_gpa(key, gpa));
            for c in 0..cases_per_dept {
                let id = format!("u{uoa}-d{d}-c{c}");
                let title = format!("Case {id}");
                gpa_by_title.insert(title.clone(), gpa);
                cases.push(case(&id, &title, &inst, uoa));
            }
        }
    }
    Synthetic {
        dataset: join_dataset(cases, profiles),
        gpa_by_title,
    }
}

/// Mock client planting each case's department GPA plus noise.
pub fn planted_mock_client(
    synthetic: &Synthetic,
    seed: u64,
    spread: f64,
    half_grid: bool,
    cache_dir: &std::path::Path,
) -> Client {
    let per_title = synthetic
        .gpa_by_title
        .iter()
        .map(|(title, &gpa)| (title.clone(), MockTarget { mean: gpa, spread }))
        .collect();
    let config = MockConfig {
        seed,
        default_mean: 3.0,
        default_spread: spread,
        half_grid,
        per_title,
    };
    Client::new(
        Box::new(MockBackend::new(config)),
        ResponseCache::open(cache_dir).unwrap(),
        RetryPolicy {
            max_attempts: 5,
            base_delay: std::time::Duration::from_millis(1),
        },
        8,
        None,
    )
}
