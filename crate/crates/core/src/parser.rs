//! Turns raw MLLM text into ratings and drops responses that carry none.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::{PromptId, TrialRecord};

/// Why a response yielded no rating. `BackendError` marks trials whose
/// inference call itself failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    NoMatch,
    Ambiguous,
    OutOfRange,
    BackendError,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rejection::NoMatch => "no_match",
            Rejection::Ambiguous => "ambiguous",
            Rejection::OutOfRange => "out_of_range",
            Rejection::BackendError => "backend_error",
        })
    }
}

/// Exactly one of a rating in `[1, 5]` or a rejection reason.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParsedResponse {
    Value(f64),
    Rejected(Rejection),
}

impl ParsedResponse {
    pub fn value(&self) -> Option<f64> {
        match self {
            ParsedResponse::Value(v) => Some(*v),
            ParsedResponse::Rejected(_) => None,
        }
    }

    pub fn rejection(&self) -> Option<Rejection> {
        match self {
            ParsedResponse::Value(_) => None,
            ParsedResponse::Rejected(r) => Some(*r),
        }
    }
}

/// Quality levels in ascending order; index + 1 is the rating.
pub const LEVELS: [&str; 5] = ["low", "medium low", "medium", "medium high", "high"];

pub fn level_phrase(level: u8) -> Option<&'static str> {
    LEVELS.get(usize::from(level).checked_sub(1)?).copied()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Finds level phrases on word boundaries, two-word phrases first, so
/// "medium high" is never read as "medium" or "high".
pub fn parse_level_response(text: &str) -> ParsedResponse {
    let words = words(text);
    let mut found = [false; 5];
    let mut i = 0;
    while i < words.len() {
        let next = words.get(i + 1).map(String::as_str);
        match (words[i].as_str(), next) {
            ("medium", Some("low")) => {
                found[1] = true;
                i += 2;
                continue;
            }
            ("medium", Some("high")) => {
                found[3] = true;
                i += 2;
                continue;
            }
            ("low", _) => found[0] = true,
            ("medium", _) => found[2] = true,
            ("high", _) => found[4] = true,
            _ => {}
        }
        i += 1;
    }
    let mut levels = found.iter().enumerate().filter(|(_, f)| **f);
    match (levels.next(), levels.next()) {
        (None, _) => ParsedResponse::Rejected(Rejection::NoMatch),
        (Some((idx, _)), None) => ParsedResponse::Value(idx as f64 + 1.0),
        (Some(_), Some(_)) => ParsedResponse::Rejected(Rejection::Ambiguous),
    }
}

/// Reads the first standalone number. An integer in `[1, 5]` is the rating;
/// any other number (including decimals and negatives) is out of range.
/// Digits glued to letters ("1080p", "4k") are not standalone.
pub fn parse_score_response(text: &str) -> ParsedResponse {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let mut end = i;
        let mut fractional = false;
        if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
            fractional = true;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            end = i;
        }
        let glued_before = start > 0 && (chars[start - 1].is_alphabetic() || chars[start - 1] == '_');
        let glued_after = end < chars.len() && (chars[end].is_alphanumeric() || chars[end] == '_');
        if glued_before || glued_after {
            continue;
        }
        let negative = start > 0 && chars[start - 1] == '-' && (start < 2 || !chars[start - 2].is_alphanumeric());
        if fractional || negative {
            return ParsedResponse::Rejected(Rejection::OutOfRange);
        }
        let digits: String = chars[start..end].iter().collect();
        return match digits.parse::<u64>() {
            Ok(n) if (1..=5).contains(&n) => ParsedResponse::Value(n as f64),
            _ => ParsedResponse::Rejected(Rejection::OutOfRange),
        };
    }
    ParsedResponse::Rejected(Rejection::NoMatch)
}

pub fn parse_response(prompt: PromptId, text: &str) -> ParsedResponse {
    match prompt {
        PromptId::LevelRelated => parse_level_response(text),
        PromptId::ScoreRelated => parse_score_response(text),
    }
}

/// Records that carry a rating, plus rejection counts per reason.
#[derive(Debug, Clone, Default)]
pub struct Filtered<'a> {
    pub kept: Vec<&'a TrialRecord>,
    pub rejected: BTreeMap<Rejection, usize>,
}

impl Filtered<'_> {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

pub fn filter_valid<'a, I>(records: I) -> Filtered<'a>
where
    I: IntoIterator<Item = &'a TrialRecord>,
{
    let mut out = Filtered::default();
    for r in records {
        match r.parsed {
            ParsedResponse::Value(_) => out.kept.push(r),
            ParsedResponse::Rejected(reason) => *out.rejected.entry(reason).or_default() += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{SamplerConfig, TrialKey};
    use proptest::prelude::*;

    #[test]
    fn level_examples() {
        assert_eq!(
            parse_level_response("The image is of medium high quality."),
            ParsedResponse::Value(4.0)
        );
        assert_eq!(
            parse_level_response("A cat sitting on a mat."),
            ParsedResponse::Rejected(Rejection::NoMatch)
        );
        assert_eq!(
            parse_level_response("It could be low or high quality."),
            ParsedResponse::Rejected(Rejection::Ambiguous)
        );
    }

    #[test]
    fn level_words_need_boundaries() {
        assert_eq!(
            parse_level_response("Slowly panning, highlights blown, below par."),
            ParsedResponse::Rejected(Rejection::NoMatch)
        );
        assert_eq!(parse_level_response("MEDIUM-LOW"), ParsedResponse::Value(2.0));
    }

    #[test]
    fn repeated_level_is_not_ambiguous() {
        assert_eq!(
            parse_level_response("High quality. Definitely high."),
            ParsedResponse::Value(5.0)
        );
    }

    #[test]
    fn score_examples() {
        assert_eq!(parse_score_response("I would rate it 3 out of 5."), ParsedResponse::Value(3.0));
        assert_eq!(
            parse_score_response("Quality: 7"),
            ParsedResponse::Rejected(Rejection::OutOfRange)
        );
        assert_eq!(
            parse_score_response("Excellent photo!"),
            ParsedResponse::Rejected(Rejection::NoMatch)
        );
    }

    #[test]
    fn score_edge_tokens() {
        assert_eq!(parse_score_response("A 1080p clip, rated 4."), ParsedResponse::Value(4.0));
        assert_eq!(
            parse_score_response("Rating: 3.5"),
            ParsedResponse::Rejected(Rejection::OutOfRange)
        );
        assert_eq!(
            parse_score_response("Rating: -2"),
            ParsedResponse::Rejected(Rejection::OutOfRange)
        );
        assert_eq!(parse_score_response("1-5 scale: 2"), ParsedResponse::Value(1.0));
        assert_eq!(
            parse_score_response("99999999999999999999999"),
            ParsedResponse::Rejected(Rejection::OutOfRange)
        );
        assert_eq!(parse_score_response("Score: 5."), ParsedResponse::Value(5.0));
    }

    #[test]
    fn level_mapping_is_ordered_bijection() {
        for (i, phrase) in LEVELS.iter().enumerate() {
            let text = format!("It is of {phrase} quality.");
            assert_eq!(parse_level_response(&text), ParsedResponse::Value(i as f64 + 1.0));
            assert_eq!(level_phrase(i as u8 + 1), Some(*phrase));
        }
        assert_eq!(level_phrase(0), None);
        assert_eq!(level_phrase(6), None);
    }

    fn record(trial: usize, parsed: ParsedResponse) -> TrialRecord {
        TrialRecord::new(
            TrialKey {
                video_id: "v".into(),
                frame_index: 0,
                crop_index: None,
                trial_index: trial,
                prompt_id: PromptId::LevelRelated,
                sampler: SamplerConfig::nucleus(0.5),
            },
            String::new(),
            parsed,
        )
    }

    #[test]
    fn filter_counts() {
        let mut records: Vec<_> = (0..8).map(|i| record(i, ParsedResponse::Value(3.0))).collect();
        records.push(record(8, ParsedResponse::Rejected(Rejection::NoMatch)));
        records.push(record(9, ParsedResponse::Rejected(Rejection::NoMatch)));
        let f = filter_valid(&records);
        assert_eq!(f.kept.len(), 8);
        assert_eq!(f.rejected, BTreeMap::from([(Rejection::NoMatch, 2)]));

        let all_bad: Vec<_> = (0..3)
            .map(|i| record(i, ParsedResponse::Rejected(Rejection::Ambiguous)))
            .collect();
        assert!(filter_valid(&all_bad).kept.is_empty());

        let mixed = [
            record(0, ParsedResponse::Rejected(Rejection::NoMatch)),
            record(1, ParsedResponse::Rejected(Rejection::OutOfRange)),
            record(2, ParsedResponse::Rejected(Rejection::BackendError)),
            record(3, ParsedResponse::Value(1.0)),
        ];
        let f = filter_valid(&mixed);
        assert_eq!(f.rejected_total(), 3);
        assert_eq!(f.kept.len() + f.rejected_total(), mixed.len());
    }

    proptest! {
        #[test]
        fn parsers_are_total(s in "\\PC*") {
            for p in [parse_level_response(&s), parse_score_response(&s)] {
                match p {
                    ParsedResponse::Value(v) => prop_assert!((1.0..=5.0).contains(&v) && v.fract() == 0.0),
                    ParsedResponse::Rejected(r) => prop_assert!(r != Rejection::BackendError),
                }
            }
        }

        #[test]
        fn medium_high_longest_match(prefix in "[a-z ,.]{0,30}", suffix in "[a-z ,.]{0,30}") {
            let text = format!("{prefix} medium high {suffix}");
            let others = parse_level_response(&format!("{prefix} {suffix}"));
            // only meaningful when the padding itself carries no level phrase
            prop_assume!(others == ParsedResponse::Rejected(Rejection::NoMatch));
            prop_assert_eq!(parse_level_response(&text), ParsedResponse::Value(4.0));
        }
    }
}
