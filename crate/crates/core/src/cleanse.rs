//! Tweet normalization.
//!
//! Nine ordered steps turn a raw tweet into lowercase alphanumeric words.
//! Every step is idempotent on its own, and the default pipeline as a whole
//! is idempotent.
//!
//! Stopword and abbreviation lookups operate on *words*, defined as maximal
//! runs of ASCII letters and digits. These are exactly the units that remain
//! after special characters are replaced by spaces, so a second pass over
//! cleansed text finds nothing left to remove.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.tsv");
const DEFAULT_EMOJI_RANGES: &str = include_str!("../data/emoji_ranges.txt");

#[derive(Debug, Error)]
pub enum CleanseError {
    #[error("unknown cleansing step `{0}`")]
    UnknownStep(String),
    #[error("cleansing step `{0}` listed twice")]
    DuplicateStep(CleansingStep),
    #[error("abbreviation key `{0}` must be a lowercase alphanumeric word")]
    BadAbbreviationKey(String),
    #[error("line {line}: {message}")]
    BadDataLine { line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CleanseError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleansingStep {
    CaseNormalization,
    RemoveEmails,
    RemoveUrls,
    RemoveHtml,
    RemoveEmojis,
    ReplaceAbbreviations,
    RemoveStopwords,
    RemoveSpecialChars,
    RemoveRepeated,
}

impl CleansingStep {
    /// The nine steps in their default order.
    pub const ALL: [CleansingStep; 9] = [
        CleansingStep::CaseNormalization,
        CleansingStep::RemoveEmails,
        CleansingStep::RemoveUrls,
        CleansingStep::RemoveHtml,
        CleansingStep::RemoveEmojis,
        CleansingStep::ReplaceAbbreviations,
        CleansingStep::RemoveStopwords,
        CleansingStep::RemoveSpecialChars,
        CleansingStep::RemoveRepeated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CleansingStep::CaseNormalization => "case_normalization",
            CleansingStep::RemoveEmails => "remove_emails",
            CleansingStep::RemoveUrls => "remove_urls",
            CleansingStep::RemoveHtml => "remove_html",
            CleansingStep::RemoveEmojis => "remove_emojis",
            CleansingStep::ReplaceAbbreviations => "replace_abbreviations",
            CleansingStep::RemoveStopwords => "remove_stopwords",
            CleansingStep::RemoveSpecialChars => "remove_special_chars",
            CleansingStep::RemoveRepeated => "remove_repeated",
        }
    }
}

impl fmt::Display for CleansingStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CleansingStep {
    type Err = CleanseError;

    fn from_str(s: &str) -> Result<Self> {
        CleansingStep::ALL
            .into_iter()
            .find(|step| step.name() == s)
            .ok_or_else(|| CleanseError::UnknownStep(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleansingConfig {
    steps: Vec<CleansingStep>,
    abbreviations: HashMap<String, String>,
    stopwords: HashSet<String>,
    emoji_ranges: Vec<RangeInclusive<u32>>,
}

impl Default for CleansingConfig {
    fn default() -> Self {
        Self {
            steps: CleansingStep::ALL.to_vec(),
            abbreviations: parse_abbreviations(DEFAULT_ABBREVIATIONS)
                .expect("shipped abbreviation file is valid"),
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
            emoji_ranges: parse_emoji_ranges(DEFAULT_EMOJI_RANGES)
                .expect("shipped emoji range file is valid"),
        }
    }
}

impl CleansingConfig {
    pub fn new(
        steps: Vec<CleansingStep>,
        abbreviations: HashMap<String, String>,
        stopwords: HashSet<String>,
        emoji_ranges: Vec<RangeInclusive<u32>>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for &step in &steps {
            if !seen.insert(step) {
                return Err(CleanseError::DuplicateStep(step));
            }
        }
        for key in abbreviations.keys() {
            validate_abbreviation_key(key)?;
        }
        Ok(Self {
            steps,
            abbreviations,
            stopwords: stopwords.into_iter().map(|w| w.to_lowercase()).collect(),
            emoji_ranges,
        })
    }

    pub fn with_steps(mut self, steps: Vec<CleansingStep>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &step in &steps {
            if !seen.insert(step) {
                return Err(CleanseError::DuplicateStep(step));
            }
        }
        self.steps = steps;
        Ok(self)
    }

    /// Replaces the stopword set with the contents of a one-word-per-line file.
    pub fn with_stopwords_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        self.stopwords = parse_stopwords(&read_data_file(path.as_ref())?);
        Ok(self)
    }

    /// Merges a `key<TAB>value` file into the abbreviation map; later entries win.
    pub fn with_abbreviations_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let extra = parse_abbreviations(&read_data_file(path.as_ref())?)?;
        self.abbreviations.extend(extra);
        Ok(self)
    }

    pub fn with_emoji_ranges_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        self.emoji_ranges = parse_emoji_ranges(&read_data_file(path.as_ref())?)?;
        Ok(self)
    }

    pub fn steps(&self) -> &[CleansingStep] {
        &self.steps
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn abbreviations(&self) -> &HashMap<String, String> {
        &self.abbreviations
    }

    pub fn emoji_ranges(&self) -> &[RangeInclusive<u32>] {
        &self.emoji_ranges
    }

    pub fn has_step(&self, step: CleansingStep) -> bool {
        self.steps.contains(&step)
    }

    /// Applies a single step.
    pub fn apply_step(&self, step: CleansingStep, text: &str) -> String {
        match step {
            CleansingStep::CaseNormalization => text.to_lowercase(),
            CleansingStep::RemoveEmails => replace_until_stable(email_re(), text, ""),
            CleansingStep::RemoveUrls => replace_until_stable(url_re(), text, ""),
            CleansingStep::RemoveHtml => replace_until_stable(html_re(), text, " "),
            CleansingStep::RemoveEmojis => self.remove_emojis(text),
            CleansingStep::ReplaceAbbreviations => map_words(text, |w| {
                self.abbreviations.get(&w.to_ascii_lowercase()).cloned()
            }),
            CleansingStep::RemoveStopwords => map_words(text, |w| {
                self.stopwords
                    .contains(&w.to_ascii_lowercase())
                    .then(String::new)
            }),
            CleansingStep::RemoveSpecialChars => text
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c.is_whitespace() {
                        c
                    } else {
                        ' '
                    }
                })
                .collect(),
            CleansingStep::RemoveRepeated => collapse_repeated_words(&collapse_punct_runs(text)),
        }
    }

    /// Runs the configured steps in order, then lowercases, collapses
    /// whitespace runs to single spaces and trims.
    pub fn cleanse(&self, raw: &str) -> String {
        let mut text = raw.to_string();
        for &step in &self.steps {
            text = self.apply_step(step, &text);
        }
        text.to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn remove_emojis(&self, text: &str) -> String {
        text.chars()
            .map(|c| {
                let cp = c as u32;
                if self.emoji_ranges.iter().any(|r| r.contains(&cp)) {
                    ' '
                } else {
                    c
                }
            })
            .collect()
    }
}

/// Applies one step by name.
pub fn cleanse_step(step: &str, text: &str, config: &CleansingConfig) -> Result<String> {
    Ok(config.apply_step(step.parse()?, text))
}

pub fn cleanse_text(raw: &str, config: &CleansingConfig) -> String {
    config.cleanse(raw)
}

/// Ordered tokens of a cleansed document. Tokens never contain whitespace
/// and are never empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens
            .iter()
            .all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        Self(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl From<&[&str]> for TokenSequence {
    fn from(tokens: &[&str]) -> Self {
        Self::new(tokens.iter().map(|t| t.to_string()).collect())
    }
}

pub fn tokenize(clean: &str) -> TokenSequence {
    TokenSequence(clean.split_whitespace().map(str::to_string).collect())
}

fn email_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)[a-z0-9._%+\-]+@[a-z0-9\-]+(?:\.[a-z0-9\-]+)+").expect("valid regex")
    })
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)https?://\S*|www\.\S*").expect("valid regex"))
}

fn html_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?[A-Za-z][^<>]*>|<!--.*?-->|&(?:[a-zA-Z]+|#[0-9]+|#x[0-9a-fA-F]+);").expect("valid regex"))
}

fn replace_until_stable(re: &Regex, text: &str, with: &str) -> String {
    let mut current = text.to_string();
    loop {
        let next = re.replace_all(&current, with);
        if next == current {
            return current;
        }
        current = next.into_owned();
    }
}

/// Rewrites every word (maximal ASCII alphanumeric run) for which `f`
/// returns a replacement, leaving all other characters in place.
fn map_words(text: &str, f: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(|c: char| c.is_ascii_alphanumeric()) {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let end = tail
            .find(|c: char| !c.is_ascii_alphanumeric())
            .unwrap_or(tail.len());
        let word = &tail[..end];
        match f(word) {
            Some(replacement) => out.push_str(&replacement),
            None => out.push_str(word),
        }
        rest = &tail[end..];
    }
    out.push_str(rest);
    out
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

fn collapse_punct_runs(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    for c in text.chars() {
        if is_punct(c) && prev == Some(c) {
            continue;
        }
        out.push(c);
        prev = Some(c);
    }
    out
}

/// Drops a whitespace-separated token (with the whitespace before it) when it
/// equals the previously kept token.
fn collapse_repeated_words(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_token: Option<&str> = None;
    let mut rest = text;
    loop {
        let ws_end = rest
            .find(|c: char| !c.is_whitespace())
            .unwrap_or(rest.len());
        let (ws, after) = rest.split_at(ws_end);
        if after.is_empty() {
            out.push_str(ws);
            break;
        }
        let tok_end = after.find(char::is_whitespace).unwrap_or(after.len());
        let (token, remaining) = after.split_at(tok_end);
        if last_token != Some(token) {
            out.push_str(ws);
            out.push_str(token);
            last_token = Some(token);
        }
        rest = remaining;
    }
    out
}

fn read_data_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CleanseError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    data_lines(text).map(|(_, l)| l.trim().to_lowercase()).collect()
}

fn validate_abbreviation_key(key: &str) -> Result<()> {
    if key.is_empty() || !key.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()) {
        return Err(CleanseError::BadAbbreviationKey(key.to_string()));
    }
    Ok(())
}

fn parse_abbreviations(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (line, content) in data_lines(text) {
        let (key, value) = content.split_once('\t').ok_or_else(|| CleanseError::BadDataLine {
            line,
            message: "expected key<TAB>value".into(),
        })?;
        let key = key.trim();
        validate_abbreviation_key(key)?;
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_emoji_ranges(text: &str) -> Result<Vec<RangeInclusive<u32>>> {
    let parse_hex = |line: usize, s: &str| {
        u32::from_str_radix(s.trim(), 16).map_err(|e| CleanseError::BadDataLine {
            line,
            message: format!("`{s}`: {e}"),
        })
    };
    data_lines(text)
        .map(|(line, content)| {
            let (lo, hi) = content.split_once('-').unwrap_or((content, content));
            Ok(parse_hex(line, lo)?..=parse_hex(line, hi)?)
        })
        .collect()
}
