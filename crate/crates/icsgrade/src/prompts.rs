//! The five system-prompt strategies and five user-prompt input variants.
//!
//! System prompt texts live in `prompts/*.txt` so they can be audited
//! without reading code; this module only selects and assembles.

use serde::{Deserialize, Serialize};

use crate::corpus::ImpactCaseStudy;

/// System-prompt strategy, from the default assessor rubric through the
/// strictest score-only variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStrategy {
    Default,
    Strict,
    VeryStrict,
    VeryStrictHalf,
    VeryStrictHalfScoreOnly,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 5] = [
        PromptStrategy::Default,
        PromptStrategy::Strict,
        PromptStrategy::VeryStrict,
        PromptStrategy::VeryStrictHalf,
        PromptStrategy::VeryStrictHalfScoreOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PromptStrategy::Default => "default",
            PromptStrategy::Strict => "strict",
            PromptStrategy::VeryStrict => "very-strict",
            PromptStrategy::VeryStrictHalf => "very-strict-half",
            PromptStrategy::VeryStrictHalfScoreOnly => "very-strict-half-score-only",
        }
    }
}

impl std::str::FromStr for PromptStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptStrategy::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown strategy '{s}'"))
    }
}

/// Which case-study sections go into the user prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputVariant {
    TitleOnly,
    TitleSummary,
    TitleSummaryDetails,
    TitleSummaryUnderpinningDetails,
    FullIcs,
}

impl InputVariant {
    pub const ALL: [InputVariant; 5] = [
        InputVariant::TitleOnly,
        InputVariant::TitleSummary,
        InputVariant::TitleSummaryDetails,
        InputVariant::TitleSummaryUnderpinningDetails,
        InputVariant::FullIcs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InputVariant::TitleOnly => "title-only",
            InputVariant::TitleSummary => "title-summary",
            InputVariant::TitleSummaryDetails => "title-summary-details",
            InputVariant::TitleSummaryUnderpinningDetails => "title-summary-underpinning-details",
            InputVariant::FullIcs => "full-ics",
        }
    }

    /// Included sections, always in template order.
    fn sections(&self) -> &'static [Section] {
        use Section::*;
        match self {
            InputVariant::TitleOnly => &[],
            InputVariant::TitleSummary => &[Summary],
            InputVariant::TitleSummaryDetails => &[Summary, Details],
            InputVariant::TitleSummaryUnderpinningDetails => &[Summary, Underpinning, Details],
            InputVariant::FullIcs => &[Summary, Underpinning, References, Details, Sources],
        }
    }
}

impl std::str::FromStr for InputVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InputVariant::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown input variant '{s}'"))
    }
}

#[derive(Debug, Clone, Copy)]
enum Section {
    Summary,
    Underpinning,
    References,
    Details,
    Sources,
}

impl Section {
    fn heading(&self) -> &'static str {
        match self {
            Section::Summary => "1. Summary of the impact",
            Section::Underpinning => "2. Underpinning research",
            Section::References => "3. References to the research",
            Section::Details => "4. Details of the impact",
            Section::Sources => "5. Sources to corroborate the impact",
        }
    }

    fn content<'a>(&self, ics: &'a ImpactCaseStudy) -> &'a str {
        match self {
            Section::Summary => &ics.summary,
            Section::Underpinning => &ics.underpinning_research,
            Section::References => &ics.references_to_research,
            Section::Details => &ics.details_of_impact,
            Section::Sources => &ics.corroborating_sources,
        }
    }
}

const DEFAULT_PROMPT: &str = include_str!("../prompts/default.txt");
const STRICT_PROMPT: &str = include_str!("../prompts/strict.txt");
const VERY_STRICT_PROMPT: &str = include_str!("../prompts/very_strict.txt");
const VERY_STRICT_HALF_PROMPT: &str = include_str!("../prompts/very_strict_half.txt");
const VERY_STRICT_HALF_SCORE_ONLY_PROMPT: &str =
    include_str!("../prompts/very_strict_half_score_only.txt");

/// The system prompt for a strategy, byte-identical across calls.
pub fn system_prompt(strategy: PromptStrategy) -> &'static str {
    match strategy {
        PromptStrategy::Default => DEFAULT_PROMPT,
        PromptStrategy::Strict => STRICT_PROMPT,
        PromptStrategy::VeryStrict => VERY_STRICT_PROMPT,
        PromptStrategy::VeryStrictHalf => VERY_STRICT_HALF_PROMPT,
        PromptStrategy::VeryStrictHalfScoreOnly => VERY_STRICT_HALF_SCORE_ONLY_PROMPT,
    }
}

/// Assembles the user prompt: the fixed request phrase and title, then
/// each included section as heading, newline, content, newline.
pub fn build_user_prompt(ics: &ImpactCaseStudy, variant: InputVariant) -> String {
    let mut out = format!("Score the following impact case study: {}\n", ics.title);
    for section in variant.sections() {
        out.push_str(section.heading());
        out.push('\n');
        out.push_str(section.content(ics));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> ImpactCaseStudy {
        ImpactCaseStudy {
            case_id: "c1".into(),
            title: "Safer bridges".into(),
            institution: "Uni".into(),
            uoa: 12,
            submission_letter: None,
            summary: "summary text".into(),
            underpinning_research: "underpinning text".into(),
            references_to_research: "references text".into(),
            details_of_impact: "details text".into(),
            corroborating_sources: "sources text".into(),
        }
    }

    #[test]
    fn default_prompt_opening() {
        assert!(system_prompt(PromptStrategy::Default)
            .starts_with("You are an academic expert, assessing impact case studies"));
    }

    #[test]
    fn strict_swaps_all_four_descriptors() {
        let s = system_prompt(PromptStrategy::Strict);
        assert!(s.contains("4*: World leading impacts"));
        assert!(s.contains("3*: Internationally excellent impacts"));
        assert!(s.contains("2*: Internationally recognised impacts"));
        assert!(s.contains("1* Nationally recognised impacts"));
        for strategy in [
            PromptStrategy::Strict,
            PromptStrategy::VeryStrict,
            PromptStrategy::VeryStrictHalf,
            PromptStrategy::VeryStrictHalfScoreOnly,
        ] {
            let t = system_prompt(strategy);
            for replaced in [
                "Outstanding impacts",
                "Very considerable impacts",
                "Considerable impacts",
                "Recognised but modest",
            ] {
                assert!(!t.contains(replaced), "{strategy:?} still contains '{replaced}'");
            }
        }
    }

    #[test]
    fn strict_equals_default_with_descriptor_substitution() {
        let derived = system_prompt(PromptStrategy::Default)
            .replace("Outstanding", "World leading")
            .replace("Very considerable", "Internationally excellent")
            .replace("Considerable", "Internationally recognised")
            .replace("Recognised but modest", "Nationally recognised");
        assert_eq!(derived, system_prompt(PromptStrategy::Strict));
    }

    #[test]
    fn very_strict_only_changes_opening() {
        let vs = system_prompt(PromptStrategy::VeryStrict);
        assert!(vs.starts_with("You are a very strict academic expert,"));
        let derived = system_prompt(PromptStrategy::Strict)
            .replace("You are an academic expert", "You are a very strict academic expert");
        assert_eq!(derived, vs);
    }

    #[test]
    fn half_points_sentence_appears_once_after_score_descriptions() {
        let t = system_prompt(PromptStrategy::VeryStrictHalf);
        let sentence = "Use half points if a case study is between two scores.";
        assert_eq!(t.matches(sentence).count(), 1);
        let pos = t.find(sentence).unwrap();
        assert!(pos > t.find("1* Nationally recognised").unwrap());
        assert!(pos < t.find("You will understand reach").unwrap());
        // Everything else is unchanged from the very strict prompt.
        let stripped = t.replace(&format!("\n{sentence}\n"), "");
        assert_eq!(stripped, system_prompt(PromptStrategy::VeryStrict));
    }

    #[test]
    fn score_only_replaces_justification_sentence() {
        let t = system_prompt(PromptStrategy::VeryStrictHalfScoreOnly);
        assert!(t.contains("You will provide a score of 1* to 4* without any explanation."));
        assert!(!t.contains("alongside a detailed justification"));
        let derived = system_prompt(PromptStrategy::VeryStrictHalf).replace(
            "You will provide a score of 1* to 4* alongside a detailed justification.",
            "You will provide a score of 1* to 4* without any explanation.",
        );
        assert_eq!(derived, t);
    }

    #[test]
    fn title_only_is_exactly_the_request_line() {
        let mut ics = fixture();
        ics.title = "T".into();
        assert_eq!(
            build_user_prompt(&ics, InputVariant::TitleOnly),
            "Score the following impact case study: T\n"
        );
    }

    #[test]
    fn title_summary_has_only_the_summary_heading() {
        let p = build_user_prompt(&fixture(), InputVariant::TitleSummary);
        assert!(p.contains("1. Summary of the impact\nsummary text\n"));
        for h in [
            "2. Underpinning research",
            "3. References to the research",
            "4. Details of the impact",
            "5. Sources to corroborate the impact",
        ] {
            assert!(!p.contains(h));
        }
    }

    #[test]
    fn full_ics_has_all_headings_in_order_once() {
        let p = build_user_prompt(&fixture(), InputVariant::FullIcs);
        let headings = [
            "1. Summary of the impact",
            "2. Underpinning research",
            "3. References to the research",
            "4. Details of the impact",
            "5. Sources to corroborate the impact",
        ];
        let mut last = 0;
        for h in headings {
            assert_eq!(p.matches(h).count(), 1, "{h}");
            let pos = p.find(h).unwrap();
            assert!(pos > last || last == 0);
            last = pos;
        }
    }

    #[test]
    fn variant_order_skips_underpinning_for_title_summary_details() {
        let p = build_user_prompt(&fixture(), InputVariant::TitleSummaryDetails);
        assert!(p.contains("1. Summary of the impact"));
        assert!(p.contains("4. Details of the impact"));
        assert!(!p.contains("2. Underpinning research"));
        assert!(p.find("1. Summary").unwrap() < p.find("4. Details").unwrap());
    }

    #[test]
    fn prompt_lengths_monotone_over_variants() {
        let ics = fixture();
        let lens: Vec<usize> = InputVariant::ALL
            .iter()
            .map(|v| build_user_prompt(&ics, *v).len())
            .collect();
        assert!(lens.windows(2).all(|w| w[0] <= w[1]), "{lens:?}");
    }
}
