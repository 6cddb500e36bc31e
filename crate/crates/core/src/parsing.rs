//! Turning raw model text into task answers.
//!
//! Parsing never fails outright: an output that cannot be read as an answer
//! becomes a [`ParsedAnswer`] with `parse_failed` set, so a run keeps going
//! whatever the model says.

use serde::{Deserialize, Serialize};

use crate::prompts::{ProbeTask, PromptContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Answer {
    ItemText(String),
    Keyword(String),
    Dimension(String),
    ScoreList(Vec<i64>),
    /// 1-based option rank.
    OptionChoice(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub answer: Option<Answer>,
    pub parse_failed: bool,
    pub failure_reason: Option<String>,
}

impl ParsedAnswer {
    pub fn ok(answer: Answer) -> Self {
        ParsedAnswer {
            answer: Some(answer),
            parse_failed: false,
            failure_reason: None,
        }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        ParsedAnswer {
            answer: None,
            parse_failed: true,
            failure_reason: Some(reason.into()),
        }
    }

    pub fn item_text(&self) -> Option<&str> {
        match &self.answer {
            Some(Answer::ItemText(t)) => Some(t),
            _ => None,
        }
    }

    pub fn keyword(&self) -> Option<&str> {
        match &self.answer {
            Some(Answer::Keyword(k)) => Some(k),
            _ => None,
        }
    }

    pub fn dimension(&self) -> Option<&str> {
        match &self.answer {
            Some(Answer::Dimension(d)) => Some(d),
            _ => None,
        }
    }

    pub fn score_list(&self) -> Option<&[i64]> {
        match &self.answer {
            Some(Answer::ScoreList(s)) => Some(s),
            _ => None,
        }
    }

    pub fn option_choice(&self) -> Option<usize> {
        match self.answer {
            Some(Answer::OptionChoice(r)) => Some(r),
            _ => None,
        }
    }
}

pub fn parse(task: ProbeTask, raw: &str, ctx: &PromptContext) -> ParsedAnswer {
    match task {
        ProbeTask::VerbatimMemorization => ParsedAnswer::ok(Answer::ItemText(parse_item_text(raw))),
        ProbeTask::KeywordMemorization => parse_keyword(raw),
        ProbeTask::ItemDimensionMapping => parse_dimension(raw, ctx.dimensions.as_deref().unwrap_or_default()),
        ProbeTask::OptionScoreMapping => {
            let expected = ctx.options.as_ref().map_or(0, Vec::len);
            parse_score_list(raw, expected)
        }
        ProbeTask::TargetScoreMatching => parse_option_choice(raw, ctx.options.as_deref().unwrap_or_default()),
    }
}

const QUOTE_PAIRS: [(char, char); 4] = [
    ('"', '"'),
    ('\'', '\''),
    ('\u{201c}', '\u{201d}'),
    ('\u{2018}', '\u{2019}'),
];

/// Trim, then remove one layer of matching wrapping quotes.
pub fn parse_item_text(raw: &str) -> String {
    let trimmed = raw.trim();
    for (open, close) in QUOTE_PAIRS {
        if let Some(inner) = trimmed.strip_prefix(open).and_then(|s| s.strip_suffix(close)) {
            return inner.to_string();
        }
    }
    trimmed.to_string()
}

/// Strips leading and trailing characters that are neither letters nor digits.
pub fn strip_surrounding_punctuation(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Form used when comparing predicted and gold keywords.
pub fn normalize_keyword(s: &str) -> String {
    strip_surrounding_punctuation(s.trim()).to_lowercase()
}

fn parse_keyword(raw: &str) -> ParsedAnswer {
    let token = raw
        .split_whitespace()
        .map(strip_surrounding_punctuation)
        .find(|t| !t.is_empty());
    match token {
        Some(t) => ParsedAnswer::ok(Answer::Keyword(t.to_string())),
        None => ParsedAnswer::failed("empty keyword"),
    }
}

fn parse_dimension(raw: &str, dimensions: &[String]) -> ParsedAnswer {
    let wanted = raw.trim().to_lowercase();
    match dimensions.iter().find(|d| d.to_lowercase() == wanted) {
        Some(d) => ParsedAnswer::ok(Answer::Dimension(d.clone())),
        None => ParsedAnswer::failed(format!("{:?} is not one of the inventory dimensions", raw.trim())),
    }
}

fn parse_score_list(raw: &str, expected: usize) -> ParsedAnswer {
    let tokens: Vec<&str> = raw
        .split(|c: char| c == ',' || c.is_whitespace())
        .map(|t| t.trim_matches(|c: char| matches!(c, '.' | ';' | '[' | ']' | '(' | ')')))
        .filter(|t| !t.is_empty())
        .collect();
    let parsed: Result<Vec<i64>, _> = tokens.iter().map(|t| t.parse::<i64>()).collect();
    match parsed {
        Ok(scores) if scores.len() == expected && expected > 0 => ParsedAnswer::ok(Answer::ScoreList(scores)),
        Ok(scores) => ParsedAnswer::failed(format!("expected {expected} integers, found {}", scores.len())),
        Err(_) => ParsedAnswer::failed(format!("expected {expected} integers, found non-numeric output")),
    }
}

/// Exact (case-insensitive) label match first; otherwise the labels that
/// occur inside the output, keeping only those not contained in another
/// occurring label, must reduce to exactly one.
fn parse_option_choice(raw: &str, options: &[String]) -> ParsedAnswer {
    let cleaned = parse_item_text(raw);
    let cleaned = cleaned.trim_end_matches(['.', '!', ';', ',']).trim();
    let lowered = cleaned.to_lowercase();
    let labels: Vec<String> = options.iter().map(|o| o.to_lowercase()).collect();

    if let Some(pos) = labels.iter().position(|l| *l == lowered) {
        return ParsedAnswer::ok(Answer::OptionChoice(pos + 1));
    }

    let occurring: Vec<usize> = (0..labels.len())
        .filter(|&i| !labels[i].is_empty() && lowered.contains(labels[i].as_str()))
        .collect();
    let maximal: Vec<usize> = occurring
        .iter()
        .copied()
        .filter(|&i| {
            !occurring
                .iter()
                .any(|&j| j != i && labels[j].len() > labels[i].len() && labels[j].contains(labels[i].as_str()))
        })
        .collect();
    match maximal.as_slice() {
        [only] => ParsedAnswer::ok(Answer::OptionChoice(only + 1)),
        [] => ParsedAnswer::failed("output matches no response option"),
        many => ParsedAnswer::failed(format!("output matches {} response options", many.len())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agree5() -> Vec<String> {
        ["Strongly disagree", "Disagree", "Neutral", "Agree", "Strongly agree"]
            .map(String::from)
            .to_vec()
    }

    fn ctx() -> PromptContext {
        PromptContext {
            dimensions: Some(vec!["Extraversion".into(), "Neuroticism".into()]),
            options: Some(agree5()),
            ..Default::default()
        }
    }

    #[test]
    fn item_text_trims_and_unquotes_once() {
        let c = ctx();
        let p = parse(ProbeTask::VerbatimMemorization, "  \"I am \"quiet\"\"\n", &c);
        assert_eq!(p.item_text(), Some("I am \"quiet\""));
        assert!(!p.parse_failed);
        assert_eq!(parse_item_text("\u{201c}Hi.\u{201d}"), "Hi.");
        // Casing and inner punctuation survive.
        assert_eq!(parse_item_text("  Keep CASE, please. "), "Keep CASE, please.");
        // Empty output is still an answer for edit distance.
        assert_eq!(parse(ProbeTask::VerbatimMemorization, "", &c).item_text(), Some(""));
    }

    #[test]
    fn keyword_strips_punctuation() {
        let p = parse(ProbeTask::KeywordMemorization, "reserved.", &ctx());
        assert_eq!(p.keyword(), Some("reserved"));
        let p = parse(ProbeTask::KeywordMemorization, "  \"Talkative\" is the word", &ctx());
        assert_eq!(p.keyword(), Some("Talkative"));
        let p = parse(ProbeTask::KeywordMemorization, " ... ", &ctx());
        assert!(p.parse_failed);
        assert_eq!(p.failure_reason.as_deref(), Some("empty keyword"));
    }

    #[test]
    fn keyword_normalization() {
        assert_eq!(normalize_keyword(" Reserved. "), "reserved");
        assert_eq!(normalize_keyword("well-being"), "well-being");
    }

    #[test]
    fn dimension_case_fold() {
        let p = parse(ProbeTask::ItemDimensionMapping, "extraversion\n", &ctx());
        assert_eq!(p.dimension(), Some("Extraversion"));
        let p = parse(ProbeTask::ItemDimensionMapping, "Openness", &ctx());
        assert!(p.parse_failed);
        assert!(p.answer.is_none());
    }

    #[test]
    fn score_lists() {
        let c = ctx();
        let p = parse(ProbeTask::OptionScoreMapping, "1, 2, 3, 4, 5", &c);
        assert_eq!(p.score_list(), Some(&[1, 2, 3, 4, 5][..]));
        let p = parse(ProbeTask::OptionScoreMapping, "5 4 3 2 1.", &c);
        assert_eq!(p.score_list(), Some(&[5, 4, 3, 2, 1][..]));
        let p = parse(ProbeTask::OptionScoreMapping, "1, 2, 3", &c);
        assert_eq!(p.failure_reason.as_deref(), Some("expected 5 integers, found 3"));
        let p = parse(ProbeTask::OptionScoreMapping, "As an AI, I can't...", &c);
        assert!(p.parse_failed);
        assert!(p.failure_reason.unwrap().starts_with("expected 5 integers"));
    }

    #[test]
    fn option_choice_exact_and_substring() {
        let c = ctx();
        let choose = |raw: &str| parse(ProbeTask::TargetScoreMatching, raw, &c);
        assert_eq!(choose("Strongly agree").option_choice(), Some(5));
        assert_eq!(choose("strongly agree.").option_choice(), Some(5));
        assert_eq!(choose("Disagree").option_choice(), Some(2));
        // "Agree" also occurs but is contained in the longer match.
        assert_eq!(choose("My answer: Strongly agree").option_choice(), Some(5));
        assert_eq!(choose("I would say neutral").option_choice(), Some(3));
        assert!(choose("Agree or Neutral").parse_failed);
        assert!(choose("I can't reproduce that content.").parse_failed);
    }

    #[test]
    fn serde_shape() {
        let p = ParsedAnswer::ok(Answer::ScoreList(vec![1, 2]));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(
            json,
            r#"{"answer":{"kind":"score_list","value":[1,2]},"parse_failed":false,"failure_reason":null}"#
        );
        assert_eq!(serde_json::from_str::<ParsedAnswer>(&json).unwrap(), p);
    }
}
