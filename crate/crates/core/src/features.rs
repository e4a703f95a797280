//! Word features: truecasing, entity annotation, the 23-dim one-hot encoding
//! and the two-layer PReLU feature network that embeds it.
//!
//! The statistical truecaser and NER models are stood in for by a canonical
//! casing lexicon, a phrase gazetteer and a handful of pattern rules. The
//! label interface is the same, so either side can be swapped.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use ndarray::{Array1, ArrayView1, ArrayView2};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENTITY_CLASSES: usize = 19;
pub const CASE_CLASSES: usize = 4;
pub const FEATURE_DIM: usize = ENTITY_CLASSES + CASE_CLASSES;
pub const FEATURE_HIDDEN: usize = 32;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseClass {
    Upper,
    Lower,
    InitUpper,
    /// Mixed case, e.g. `McVey`, and tokens without letters.
    Other,
}

impl CaseClass {
    pub const ALL: [CaseClass; CASE_CLASSES] = [
        CaseClass::Upper,
        CaseClass::Lower,
        CaseClass::InitUpper,
        CaseClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseClass::Upper => "UPPER",
            CaseClass::Lower => "LOWER",
            CaseClass::InitUpper => "INIT_UPPER",
            CaseClass::Other => "O",
        }
    }

    /// Classifies an already-cased form by its letters.
    pub fn of(form: &str) -> Self {
        let letters: Vec<char> = form.chars().filter(|c| c.is_alphabetic()).collect();
        let Some((first, rest)) = letters.split_first() else {
            return CaseClass::Other;
        };
        if letters.iter().all(|c| c.is_uppercase()) {
            CaseClass::Upper
        } else if letters.iter().all(|c| c.is_lowercase()) {
            CaseClass::Lower
        } else if first.is_uppercase() && rest.iter().all(|c| c.is_lowercase()) {
            CaseClass::InitUpper
        } else {
            CaseClass::Other
        }
    }
}

impl fmt::Display for CaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The fixed 19-class entity inventory. Order is part of the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityClass {
    Person,
    Location,
    Organization,
    Misc,
    City,
    StateOrProvince,
    Country,
    Nationality,
    Religion,
    Date,
    Time,
    Duration,
    Money,
    Number,
    Ordinal,
    Percent,
    Other,
    AirportCode,
    None,
}

impl EntityClass {
    pub const ALL: [EntityClass; ENTITY_CLASSES] = [
        EntityClass::Person,
        EntityClass::Location,
        EntityClass::Organization,
        EntityClass::Misc,
        EntityClass::City,
        EntityClass::StateOrProvince,
        EntityClass::Country,
        EntityClass::Nationality,
        EntityClass::Religion,
        EntityClass::Date,
        EntityClass::Time,
        EntityClass::Duration,
        EntityClass::Money,
        EntityClass::Number,
        EntityClass::Ordinal,
        EntityClass::Percent,
        EntityClass::Other,
        EntityClass::AirportCode,
        EntityClass::None,
    ];

    /// Raw annotator labels folded into `OTHER`.
    pub const MERGED_INTO_OTHER: [&'static str; 4] =
        ["TITLE", "IDEOLOGY", "CRIMINAL_CHARGE", "CAUSE_OF_DEATH"];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Person => "PERSON",
            EntityClass::Location => "LOCATION",
            EntityClass::Organization => "ORGANIZATION",
            EntityClass::Misc => "MISC",
            EntityClass::City => "CITY",
            EntityClass::StateOrProvince => "STATE_OR_PROVINCE",
            EntityClass::Country => "COUNTRY",
            EntityClass::Nationality => "NATIONALITY",
            EntityClass::Religion => "RELIGION",
            EntityClass::Date => "DATE",
            EntityClass::Time => "TIME",
            EntityClass::Duration => "DURATION",
            EntityClass::Money => "MONEY",
            EntityClass::Number => "NUMBER",
            EntityClass::Ordinal => "ORDINAL",
            EntityClass::Percent => "PERCENT",
            EntityClass::Other => "OTHER",
            EntityClass::AirportCode => "AIRPORT_CODE",
            EntityClass::None => "NONE",
        }
    }

    /// Maps a raw annotator label onto the inventory, folding the merged
    /// categories into `OTHER`.
    pub fn from_raw(raw: &str) -> Option<Self> {
        if Self::MERGED_INTO_OTHER.contains(&raw) {
            return Some(EntityClass::Other);
        }
        Self::ALL.iter().copied().find(|c| c.name() == raw)
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_raw(s).ok_or_else(|| Error::Validation(format!("unknown entity label `{s}`")))
    }
}

/// `[entity one-hot (19); case one-hot (4)]`, or all zeros for special tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordFeatureVector([f64; FEATURE_DIM]);

impl WordFeatureVector {
    pub fn zero() -> Self {
        WordFeatureVector([0.0; FEATURE_DIM])
    }

    pub fn encode(entity: EntityClass, case: CaseClass) -> Self {
        let mut v = [0.0; FEATURE_DIM];
        v[entity.index()] = 1.0;
        v[ENTITY_CLASSES + case.index()] = 1.0;
        WordFeatureVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

/// Canonical casing lookup keyed by lowercase form.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    canonical: HashMap<String, String>,
}

impl Lexicon {
    /// One canonical cased form per line; the first form of a word wins.
    pub fn parse(text: &str) -> Self {
        let mut canonical = HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            canonical
                .entry(line.to_lowercase())
                .or_insert_with(|| line.to_string());
        }
        Lexicon { canonical }
    }

    pub fn restore<'a>(&'a self, word: &'a str) -> &'a str {
        self.canonical
            .get(&word.to_lowercase())
            .map(String::as_str)
            .unwrap_or(word)
    }
}

pub fn truecase(word: &str, lexicon: &Lexicon) -> CaseClass {
    CaseClass::of(lexicon.restore(word))
}

/// Phrase gazetteer with case-insensitive longest-match lookup.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    phrases: HashMap<Vec<String>, EntityClass>,
    longest: usize,
}

impl Gazetteer {
    /// Tab-separated `phrase<TAB>RAW_LABEL` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut gazetteer = Gazetteer::default();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let (phrase, raw) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(format!("expected phrase<TAB>LABEL, found `{line}`")))?;
            let class = EntityClass::from_raw(raw.trim())
                .ok_or_else(|| parse_err(format!("unknown entity label `{}`", raw.trim())))?;
            if class == EntityClass::None {
                return Err(parse_err("NONE is not a gazetteer label".into()));
            }
            gazetteer.insert(phrase, class);
        }
        Ok(gazetteer)
    }

    pub fn insert(&mut self, phrase: &str, class: EntityClass) {
        let key: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        if key.is_empty() {
            return;
        }
        self.longest = self.longest.max(key.len());
        self.phrases.entry(key).or_insert(class);
    }
}

static AIRPORT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z]{3}$").unwrap());
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(19|20)[0-9]{2}$").unwrap());
static DIGITS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[0-9]+$").unwrap());
static ORDINAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[0-9]+(st|nd|rd|th)$").unwrap());
static MONEY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\$[0-9]+(\.[0-9]+)?$").unwrap());
static PERCENT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[0-9]+(\.[0-9]+)?%$").unwrap());
static CLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([0-9]{1,2}(:[0-9]{2})?(am|pm)|[0-9]{1,2}:[0-9]{2})$").unwrap());

fn rule_class(word: &str, dictionary: &HashSet<String>) -> EntityClass {
    if YEAR.is_match(word) {
        EntityClass::Date
    } else if DIGITS.is_match(word) {
        EntityClass::Number
    } else if ORDINAL.is_match(word) {
        EntityClass::Ordinal
    } else if MONEY.is_match(word) {
        EntityClass::Money
    } else if PERCENT.is_match(word) {
        EntityClass::Percent
    } else if CLOCK.is_match(&word.to_lowercase()) {
        EntityClass::Time
    } else if AIRPORT.is_match(word) {
        if dictionary.contains(&word.to_lowercase()) {
            EntityClass::None
        } else {
            EntityClass::AirportCode
        }
    } else {
        EntityClass::None
    }
}

/// Labels each (already truecased) word. Gazetteer phrases win, matched
/// left to right by longest span; remaining words go through the numeric
/// and airport-code rules.
pub fn annotate_entities<S: AsRef<str>>(
    words: &[S],
    gazetteer: &Gazetteer,
    dictionary: &HashSet<String>,
) -> Vec<EntityClass> {
    let lowered: Vec<String> = words.iter().map(|w| w.as_ref().to_lowercase()).collect();
    let mut out = vec![EntityClass::None; words.len()];
    let mut i = 0;
    while i < words.len() {
        let max_span = gazetteer.longest.min(words.len() - i);
        let hit = (1..=max_span).rev().find_map(|span| {
            gazetteer
                .phrases
                .get(&lowered[i..i + span])
                .map(|&class| (span, class))
        });
        match hit {
            Some((span, class)) => {
                out[i..i + span].fill(class);
                i += span;
            }
            None => {
                out[i] = rule_class(words[i].as_ref(), dictionary);
                i += 1;
            }
        }
    }
    out
}

pub fn encode_features(entity: EntityClass, case: CaseClass) -> WordFeatureVector {
    WordFeatureVector::encode(entity, case)
}

/// Raw text of the three annotation resources, kept verbatim so they can
/// travel inside a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceText {
    pub lexicon: String,
    pub gazetteer: String,
    pub dictionary: String,
}

impl ResourceText {
    pub fn load(lexicon: &Path, gazetteer: &Path, dictionary: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Ok(ResourceText {
            lexicon: read(lexicon)?,
            gazetteer: read(gazetteer)?,
            dictionary: read(dictionary)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordAnnotation {
    pub word: String,
    pub cased: String,
    pub case: CaseClass,
    pub entity: EntityClass,
}

/// Compiled annotation resources.
#[derive(Debug, Clone, Default)]
pub struct Annotator {
    lexicon: Lexicon,
    gazetteer: Gazetteer,
    dictionary: HashSet<String>,
}

impl Annotator {
    pub fn new(resources: &ResourceText) -> Result<Self> {
        Ok(Annotator {
            lexicon: Lexicon::parse(&resources.lexicon),
            gazetteer: Gazetteer::parse(&resources.gazetteer)?,
            dictionary: resources
                .dictionary
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        })
    }

    pub fn annotate<S: AsRef<str>>(&self, words: &[S]) -> Vec<WordAnnotation> {
        let cased: Vec<String> = words
            .iter()
            .map(|w| self.lexicon.restore(w.as_ref()).to_string())
            .collect();
        let entities = annotate_entities(&cased, &self.gazetteer, &self.dictionary);
        words
            .iter()
            .zip(cased)
            .zip(entities)
            .map(|((word, cased), entity)| WordAnnotation {
                word: word.as_ref().to_string(),
                case: CaseClass::of(&cased),
                cased,
                entity,
            })
            .collect()
    }

    pub fn features<S: AsRef<str>>(&self, words: &[S]) -> Vec<WordFeatureVector> {
        self.annotate(words)
            .iter()
            .map(|a| encode_features(a.entity, a.case))
            .collect()
    }
}

/// Borrowed parameters of the feature network. `w_w` is 23x32 and
/// `w_proj` 32x32, both applied input-dimension first.
#[derive(Debug, Clone, Copy)]
pub struct FeatureNetView<'a> {
    pub w_w: ArrayView2<'a, f64>,
    pub b_w: ArrayView1<'a, f64>,
    pub a_prelu: f64,
    pub w_proj: ArrayView2<'a, f64>,
    pub b_proj: ArrayView1<'a, f64>,
}

pub fn prelu(s: f64, slope: f64) -> f64 {
    s.max(0.0) + slope * s.min(0.0)
}

/// `f_words = PReLU(x W_w + b_w) W_proj + b_proj`.
pub fn feature_forward(x: ArrayView1<f64>, params: &FeatureNetView) -> Result<Array1<f64>> {
    if x.len() != params.w_w.nrows() {
        return Err(Error::Shape(format!(
            "feature vector has {} entries, W_w expects {}",
            x.len(),
            params.w_w.nrows()
        )));
    }
    if params.w_proj.nrows() != params.w_w.ncols() {
        return Err(Error::Shape("W_proj does not consume the W_w output".into()));
    }
    let s = x.dot(&params.w_w) + params.b_w;
    let h = s.mapv(|v| prelu(v, params.a_prelu));
    Ok(h.dot(&params.w_proj) + params.b_proj)
}
