//! Rule-based extraction of medication concepts from tablet prescription
//! sentences.
//!
//! The grammar is a fixed-order pattern scan over lowercase tokens: a drug
//! name from the lexicon, a strength (number immediately followed by a unit),
//! the first dosage-form word, a dose count, a sig frequency and a route.
//! Optional fields fall back to fixed defaults and the fallback is reported
//! through [`Defaulted`] warnings.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrengthUnit {
    Mg,
    Mcg,
    G,
    Ml,
    Unit,
    #[serde(rename = "%")]
    Percent,
}

impl StrengthUnit {
    pub fn from_token(tok: &str) -> Option<Self> {
        Some(match tok {
            "mg" | "milligram" | "milligrams" => StrengthUnit::Mg,
            "mcg" | "ug" | "microgram" | "micrograms" => StrengthUnit::Mcg,
            "g" | "gm" | "gram" | "grams" => StrengthUnit::G,
            "ml" | "milliliter" | "milliliters" => StrengthUnit::Ml,
            "unit" | "units" | "iu" => StrengthUnit::Unit,
            "%" => StrengthUnit::Percent,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrengthUnit::Mg => "mg",
            StrengthUnit::Mcg => "mcg",
            StrengthUnit::G => "g",
            StrengthUnit::Ml => "ml",
            StrengthUnit::Unit => "unit",
            StrengthUnit::Percent => "%",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DosageForm {
    Tablet,
    Capsule,
    Solution,
    Cream,
    Spray,
    Other,
}

impl DosageForm {
    pub fn from_token(tok: &str) -> Option<Self> {
        Some(match tok {
            "tablet" | "tablets" | "tab" | "tabs" => DosageForm::Tablet,
            "capsule" | "capsules" | "cap" | "caps" => DosageForm::Capsule,
            "solution" | "suspension" | "syrup" | "liquid" | "elixir" => DosageForm::Solution,
            "cream" | "ointment" | "gel" | "lotion" => DosageForm::Cream,
            "spray" | "sprays" => DosageForm::Spray,
            "patch" | "patches" | "suppository" | "suppositories" | "lozenge" | "lozenges" | "packet" | "packets" => {
                DosageForm::Other
            }
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DosageForm::Tablet => "tablet",
            DosageForm::Capsule => "capsule",
            DosageForm::Solution => "solution",
            DosageForm::Cream => "cream",
            DosageForm::Spray => "spray",
            DosageForm::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Oral,
    Topical,
    Nasal,
    Injection,
    Other,
    Unknown,
}

/// Structured concepts of one prescription sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionConcepts {
    /// First lexicon drug in the sentence.
    pub drug_name: String,
    /// Every lexicon drug in order of appearance, without repeats.
    pub drugs: Vec<String>,
    pub strength_value: f64,
    pub strength_unit: StrengthUnit,
    pub form: DosageForm,
    pub dose_amount: f64,
    pub frequency_per_day: f64,
    pub route: Route,
}

/// Optional field that was filled with its default value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Defaulted {
    Form,
    Dose,
    Frequency,
    Route,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parsed {
    pub concepts: PrescriptionConcepts,
    pub defaulted: Vec<Defaulted>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseFailure {
    NoDrug,
    NoStrength,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseFailure::NoDrug => f.write_str("no lexicon drug name found"),
            ParseFailure::NoStrength => f.write_str("no strength (number followed by unit) found"),
        }
    }
}

impl std::error::Error for ParseFailure {}

/// Known drug names, each stored as its token sequence.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashSet<Vec<String>>,
    max_len: usize,
}

impl Lexicon {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Lexicon::default();
        for name in names {
            lex.insert(name.as_ref());
        }
        lex
    }

    pub fn insert(&mut self, name: &str) {
        let toks = tokenize(name);
        if toks.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(toks.len());
        self.entries.insert(toks);
    }

    /// One lowercase name per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Lexicon::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Lexicon::parse(&text))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains(&tokenize(name))
    }

    /// Sorted drug names.
    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.iter().map(|t| t.join(" ")).collect();
        v.sort();
        v
    }

    /// Longest lexicon span starting at `start`, as its length in tokens.
    fn match_at(&self, tokens: &[String], start: usize) -> Option<usize> {
        let longest = self.max_len.min(tokens.len() - start);
        (1..=longest)
            .rev()
            .find(|&len| self.entries.contains(&tokens[start..start + len]))
    }

    /// Non-overlapping drug mentions scanning left to right; at each start
    /// the longest span wins.
    pub fn find_drugs(&self, tokens: &[String]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.match_at(tokens, i) {
                Some(len) => {
                    out.push((i, len));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
enum CharClass {
    Alpha,
    Digit,
}

/// Lowercase tokens. Splits on whitespace and punctuation, keeps decimal
/// points inside numbers, separates digits from letters (`10mg` becomes
/// `10`, `mg`) and emits `/` and `%` as tokens of their own.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let chars: Vec<char> = sentence.chars().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut class: Option<CharClass> = None;

    let flush = |cur: &mut String, class: &mut Option<CharClass>, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
        *class = None;
    };

    for (i, &c) in chars.iter().enumerate() {
        let cls = if c.is_ascii_digit() {
            Some(CharClass::Digit)
        } else if c.is_alphabetic() {
            Some(CharClass::Alpha)
        } else {
            None
        };
        match cls {
            Some(k) => {
                if class != Some(k) {
                    flush(&mut cur, &mut class, &mut tokens);
                }
                cur.push(c);
                class = Some(k);
            }
            None => {
                let decimal_point = c == '.'
                    && class == Some(CharClass::Digit)
                    && !cur.contains('.')
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                if decimal_point {
                    cur.push(c);
                    continue;
                }
                flush(&mut cur, &mut class, &mut tokens);
                if c == '/' || c == '%' {
                    tokens.push(c.to_string());
                }
            }
        }
    }
    flush(&mut cur, &mut class, &mut tokens);
    tokens
}

fn numeric_token(tok: &str) -> Option<f64> {
    if tok.is_empty() || !tok.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    tok.parse().ok()
}

fn number_word(tok: &str) -> Option<f64> {
    Some(match tok {
        "half" => 0.5,
        "one" => 1.0,
        "two" => 2.0,
        "three" => 3.0,
        "four" => 4.0,
        "five" => 5.0,
        "six" => 6.0,
        "seven" => 7.0,
        "eight" => 8.0,
        "nine" => 9.0,
        "ten" => 10.0,
        "twelve" => 12.0,
        _ => return None,
    })
}

fn any_number(tok: &str) -> Option<f64> {
    numeric_token(tok).or_else(|| number_word(tok))
}

/// Result of scanning a sig for its frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frequency {
    pub per_day: f64,
    /// No frequency phrase matched and the default of 1/day was used.
    pub defaulted: bool,
}

fn period_days(tokens: &[String], at: usize) -> Option<(f64, usize)> {
    let t = |k: usize| tokens.get(at + k).map(String::as_str);
    let unit = |w: Option<&str>| match w {
        Some("day" | "days" | "daily") => Some(1.0),
        Some("week" | "weeks" | "weekly") => Some(7.0),
        _ => None,
    };
    match t(0) {
        Some("daily") => Some((1.0, 1)),
        Some("weekly") => Some((7.0, 1)),
        Some("a" | "per" | "each" | "every" | "/") => unit(t(1)).map(|d| (d, 2)),
        w => unit(w).map(|d| (d, 1)),
    }
}

fn every_phrase(tokens: &[String], at: usize) -> Option<f64> {
    let t = |k: usize| tokens.get(at + k).map(String::as_str);
    if !matches!(t(0), Some("every" | "q")) {
        return None;
    }
    match t(1) {
        Some("day") => return Some(1.0),
        Some("week") => return Some(1.0 / 7.0),
        Some("hour") => return Some(24.0),
        Some("morning" | "evening" | "night") => return Some(1.0),
        Some("other") if t(2) == Some("day") => return Some(0.5),
        _ => {}
    }
    let n = numeric_token(t(1)?).or_else(|| number_word(t(1)?))?;
    if n <= 0.0 {
        return None;
    }
    // "every 4 to 6 hours": the first bound is the tightest interval
    let unit_at = if matches!(t(2), Some("to" | "or")) && t(3).and_then(any_number).is_some() {
        4
    } else {
        2
    };
    match t(unit_at) {
        Some("hours" | "hour" | "hrs" | "hr" | "h") => Some(24.0 / n),
        Some("days" | "day") => Some(1.0 / n),
        Some("weeks" | "week") => Some(1.0 / (7.0 * n)),
        _ => None,
    }
}

fn count_phrase(tokens: &[String], at: usize) -> Option<(f64, usize)> {
    let t = |k: usize| tokens.get(at + k).map(String::as_str);
    match t(0)? {
        "once" => Some((1.0, 1)),
        "twice" => Some((2.0, 1)),
        "thrice" => Some((3.0, 1)),
        w => {
            let n = any_number(w)?;
            matches!(t(1), Some("time" | "times" | "x")).then_some((n, 2))
        }
    }
}

fn frequency_at(tokens: &[String], at: usize) -> Option<f64> {
    if let Some(f) = every_phrase(tokens, at) {
        return Some(f);
    }
    if let Some((count, used)) = count_phrase(tokens, at) {
        let days = period_days(tokens, at + used).map_or(1.0, |(d, _)| d);
        return Some(count / days);
    }
    let t = |k: usize| tokens.get(at + k).map(String::as_str);
    Some(match t(0)? {
        "daily" | "nightly" | "qd" | "qhs" | "qam" | "qpm" => 1.0,
        "weekly" => 1.0 / 7.0,
        "hourly" => 24.0,
        "bid" => 2.0,
        "tid" => 3.0,
        "qid" => 4.0,
        "at" if t(1) == Some("bedtime") => 1.0,
        _ => return None,
    })
}

/// Administrations per day from sig phrases; the first phrase found scanning
/// left to right wins. "as needed" alone counts as once a day; no phrase at
/// all falls back to 1 with `defaulted` set.
pub fn normalize_frequency(tokens: &[String]) -> Frequency {
    if let Some(per_day) = (0..tokens.len()).find_map(|i| frequency_at(tokens, i)) {
        return Frequency {
            per_day,
            defaulted: false,
        };
    }
    let as_needed = tokens.iter().any(|t| t == "prn") || tokens.windows(2).any(|w| w[0] == "as" && w[1] == "needed");
    Frequency {
        per_day: 1.0,
        defaulted: !as_needed,
    }
}

const ROUTE_PHRASES: &[(&[&str], Route)] = &[
    (&["by", "mouth"], Route::Oral),
    (&["orally"], Route::Oral),
    (&["oral"], Route::Oral),
    (&["po"], Route::Oral),
    (&["topically"], Route::Topical),
    (&["topical"], Route::Topical),
    (&["to", "affected", "area"], Route::Topical),
    (&["nasally"], Route::Nasal),
    (&["intranasally"], Route::Nasal),
    (&["nasal"], Route::Nasal),
    (&["each", "nostril"], Route::Nasal),
    (&["subcutaneously"], Route::Injection),
    (&["intramuscularly"], Route::Injection),
    (&["intravenously"], Route::Injection),
    (&["inject"], Route::Injection),
    (&["injection"], Route::Injection),
    (&["rectally"], Route::Other),
    (&["vaginally"], Route::Other),
    (&["sublingually"], Route::Other),
    (&["under", "the", "tongue"], Route::Other),
    (&["inhale"], Route::Other),
    (&["each", "eye"], Route::Other),
];

fn find_route(tokens: &[String]) -> Option<Route> {
    (0..tokens.len()).find_map(|i| {
        ROUTE_PHRASES.iter().find_map(|(phrase, route)| {
            let end = i + phrase.len();
            (end <= tokens.len() && tokens[i..end].iter().zip(phrase.iter()).all(|(a, b)| a == b)).then_some(*route)
        })
    })
}

fn find_strength(tokens: &[String]) -> Option<(f64, StrengthUnit)> {
    tokens.windows(2).find_map(|w| {
        let value = numeric_token(&w[0])?;
        let unit = StrengthUnit::from_token(&w[1])?;
        (value > 0.0).then_some((value, unit))
    })
}

fn is_frequency_word(tok: &str) -> bool {
    matches!(
        tok,
        "time" | "times" | "x" | "hours" | "hour" | "hrs" | "hr" | "h" | "days" | "day"
    )
}

/// First count after the anchor (the first form word or "take").
fn find_dose(tokens: &[String]) -> Option<f64> {
    let anchor = tokens
        .iter()
        .position(|t| t == "take" || DosageForm::from_token(t).is_some())?;
    let next = |k: usize| tokens.get(k).map(String::as_str);
    for k in anchor + 1..tokens.len() {
        let tok = tokens[k].as_str();
        let followed_by_form = next(k + 1).is_some_and(|n| DosageForm::from_token(n).is_some());
        let value = match numeric_token(tok) {
            Some(v) => v,
            None => match number_word(tok) {
                Some(v) if followed_by_form || k == anchor + 1 && tokens[anchor] == "take" => v,
                _ => continue,
            },
        };
        if next(k + 1).is_some_and(|n| is_frequency_word(n) || StrengthUnit::from_token(n).is_some())
            || (k > 0 && matches!(tokens[k - 1].as_str(), "every" | "q" | "to" | "or"))
        {
            continue;
        }
        // 1/2 tablet
        if next(k + 1) == Some("/") {
            if let Some(den) = next(k + 2).and_then(numeric_token) {
                if den > 0.0 {
                    return Some(value / den);
                }
            }
        }
        return Some(value);
    }
    None
}

/// Extracts the concepts of one sentence.
///
/// Fails when no lexicon drug or no positive strength with a unit is found.
pub fn extract_concepts(sentence: &str, lexicon: &Lexicon) -> std::result::Result<Parsed, ParseFailure> {
    let tokens = tokenize(sentence);
    let mut drugs: Vec<String> = Vec::new();
    for (start, len) in lexicon.find_drugs(&tokens) {
        let name = tokens[start..start + len].join(" ");
        if !drugs.contains(&name) {
            drugs.push(name);
        }
    }
    let drug_name = drugs.first().cloned().ok_or(ParseFailure::NoDrug)?;
    let (strength_value, strength_unit) = find_strength(&tokens).ok_or(ParseFailure::NoStrength)?;

    let mut defaulted = Vec::new();
    let form = tokens
        .iter()
        .find_map(|t| DosageForm::from_token(t))
        .unwrap_or_else(|| {
            defaulted.push(Defaulted::Form);
            DosageForm::Other
        });
    let dose_amount = find_dose(&tokens).unwrap_or_else(|| {
        defaulted.push(Defaulted::Dose);
        1.0
    });
    let freq = normalize_frequency(&tokens);
    if freq.defaulted {
        defaulted.push(Defaulted::Frequency);
    }
    let route = find_route(&tokens).unwrap_or_else(|| {
        defaulted.push(Defaulted::Route);
        Route::Unknown
    });

    Ok(Parsed {
        concepts: PrescriptionConcepts {
            drug_name,
            drugs,
            strength_value,
            strength_unit,
            form,
            dose_amount,
            frequency_per_day: freq.per_day,
            route,
        },
        defaulted,
    })
}
