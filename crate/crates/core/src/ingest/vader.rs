//! Rule-based VADER sentiment scoring, following vaderSentiment 3.3.2
//! including its tokenisation and rule-ordering quirks.
//!
//! The bundled lexicons are the ones distributed with that release (MIT
//! licensed, see `data/VADER_LICENSE.txt`).

use std::collections::HashMap;
use std::path::Path;

use super::{IngestError, Result};

const B_INCR: f64 = 0.293;
const B_DECR: f64 = -0.293;
const C_INCR: f64 = 0.733;
const N_SCALAR: f64 = -0.74;
/// Normalisation constant in `x / sqrt(x² + α)`.
pub const ALPHA: f64 = 15.0;

const NEGATE: &[&str] = &[
    "aint", "arent", "cannot", "cant", "couldnt", "darent", "didnt", "doesnt", "ain't", "aren't",
    "can't", "couldn't", "daren't", "didn't", "doesn't", "dont", "hadnt", "hasnt", "havent",
    "isnt", "mightnt", "mustnt", "neither", "don't", "hadn't", "hasn't", "haven't", "isn't",
    "mightn't", "mustn't", "neednt", "needn't", "never", "none", "nope", "nor", "not", "nothing",
    "nowhere", "oughtnt", "shant", "shouldnt", "uhuh", "wasnt", "werent", "oughtn't", "shan't",
    "shouldn't", "uh-uh", "wasn't", "weren't", "without", "wont", "wouldnt", "won't", "wouldn't",
    "rarely", "seldom", "despite",
];

const BOOSTERS_UP: &[&str] = &[
    "absolutely", "amazingly", "awfully", "completely", "considerable", "considerably",
    "decidedly", "deeply", "effing", "enormous", "enormously", "entirely", "especially",
    "exceptional", "exceptionally", "extreme", "extremely", "fabulously", "flipping", "flippin",
    "frackin", "fracking", "fricking", "frickin", "frigging", "friggin", "fully", "fuckin",
    "fucking", "fuggin", "fugging", "greatly", "hella", "highly", "hugely", "incredible",
    "incredibly", "intensely", "major", "majorly", "more", "most", "particularly", "purely",
    "quite", "really", "remarkably", "so", "substantially", "thoroughly", "total", "totally",
    "tremendous", "tremendously", "uber", "unbelievably", "unusually", "utter", "utterly", "very",
];

const BOOSTERS_DOWN: &[&str] = &[
    "almost", "barely", "hardly", "just enough", "kind of", "kinda", "kindof", "kind-of", "less",
    "little", "marginal", "marginally", "occasional", "occasionally", "partly", "scarce",
    "scarcely", "slight", "slightly", "somewhat", "sort of", "sorta", "sortof", "sort-of",
];

const SPECIAL_CASES: &[(&str, f64)] = &[
    ("the shit", 3.0),
    ("the bomb", 3.0),
    ("bad ass", 1.5),
    ("badass", 1.5),
    ("bus stop", 0.0),
    ("yeah right", -2.0),
    ("kiss of death", -1.5),
    ("to die for", 3.0),
    ("beating heart", 3.5),
];

const ASCII_PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

const BUNDLED_LEXICON: &str = include_str!("../../data/vader_lexicon.txt");
const BUNDLED_EMOJI: &str = include_str!("../../data/emoji_utf8_lexicon.txt");

/// Proportions of positive, neutral and negative content plus the
/// normalised compound score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentimentScores {
    pub positive: f64,
    pub neutral: f64,
    pub negative: f64,
    pub compound: f64,
}

/// Token valences, emoji descriptions and the fixed booster/negation tables.
#[derive(Debug, Clone)]
pub struct VaderLexicon {
    valence: HashMap<String, f64>,
    emoji: HashMap<char, String>,
    boosters: HashMap<&'static str, f64>,
    special: HashMap<&'static str, f64>,
}

impl VaderLexicon {
    /// The lexicons shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_strs(BUNDLED_LEXICON, BUNDLED_EMOJI).expect("bundled lexicon parses")
    }

    /// Loads a tab-separated `token<TAB>valence[...]` file; emoji
    /// descriptions come from the bundled table.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_strs(&text, BUNDLED_EMOJI)
    }

    pub fn from_strs(lexicon: &str, emoji: &str) -> Result<Self> {
        let mut valence = HashMap::new();
        for (n, line) in lexicon.trim_end_matches('\n').split('\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.trim().split('\t');
            let (Some(word), Some(measure)) = (parts.next(), parts.next()) else {
                return Err(IngestError::Lexicon(format!("line {}: expected token and valence", n + 1)));
            };
            let v: f64 = measure
                .trim()
                .parse()
                .map_err(|_| IngestError::Lexicon(format!("line {}: bad valence {measure:?}", n + 1)))?;
            if !v.is_finite() {
                return Err(IngestError::Lexicon(format!("line {}: non-finite valence", n + 1)));
            }
            valence.insert(word.to_string(), v);
        }
        if valence.is_empty() {
            return Err(IngestError::Lexicon("lexicon is empty".into()));
        }
        let mut emoji_map = HashMap::new();
        for line in emoji.trim_end_matches('\n').split('\n') {
            let mut parts = line.trim().split('\t');
            if let (Some(key), Some(desc)) = (parts.next(), parts.next()) {
                let mut chars = key.chars();
                // Text is scanned one code point at a time, so only
                // single-code-point keys can ever match.
                if let (Some(c), None) = (chars.next(), chars.next()) {
                    emoji_map.insert(c, desc.to_string());
                }
            }
        }
        let boosters = BOOSTERS_UP
            .iter()
            .map(|w| (*w, B_INCR))
            .chain(BOOSTERS_DOWN.iter().map(|w| (*w, B_DECR)))
            .collect();
        Ok(VaderLexicon {
            valence,
            emoji: emoji_map,
            boosters,
            special: SPECIAL_CASES.iter().copied().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valence.get(token).copied()
    }

    fn in_lexicon(&self, lower: &str) -> bool {
        self.valence.contains_key(lower)
    }

    /// Scores a text. An empty token list yields compound 0 and neutral 1.
    pub fn polarity_scores(&self, text: &str) -> SentimentScores {
        let mut replaced = String::with_capacity(text.len());
        let mut prev_space = true;
        for c in text.chars() {
            if let Some(desc) = self.emoji.get(&c) {
                if !prev_space {
                    replaced.push(' ');
                }
                replaced.push_str(desc);
                prev_space = false;
            } else {
                replaced.push(c);
                prev_space = c == ' ';
            }
        }
        let text = replaced.trim_matches(py_isspace);

        let words: Vec<&str> = text
            .split(py_isspace)
            .filter(|w| !w.is_empty())
            .map(strip_punc_if_word)
            .collect();
        let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let cap_diff = allcap_differential(&words);

        let mut sentiments: Vec<f64> = Vec::with_capacity(words.len());
        for i in 0..words.len() {
            if self.boosters.contains_key(lower[i].as_str()) {
                sentiments.push(0.0);
                continue;
            }
            if i + 1 < words.len() && lower[i] == "kind" && lower[i + 1] == "of" {
                sentiments.push(0.0);
                continue;
            }
            sentiments.push(self.sentiment_valence(&words, &lower, i, cap_diff));
        }
        but_check(&lower, &mut sentiments);
        self.score_valence(&sentiments, text)
    }

    fn scalar_inc_dec(&self, word: &str, lower: &str, valence: f64, cap_diff: bool) -> f64 {
        let Some(&b) = self.boosters.get(lower) else { return 0.0 };
        let mut scalar = b;
        if valence < 0.0 {
            scalar *= -1.0;
        }
        if py_isupper(word) && cap_diff {
            if valence > 0.0 {
                scalar += C_INCR;
            } else {
                scalar -= C_INCR;
            }
        }
        scalar
    }

    fn sentiment_valence(&self, words: &[&str], lower: &[String], i: usize, cap_diff: bool) -> f64 {
        let item = words[i];
        let item_lower = lower[i].as_str();
        let Some(base) = self.valence(item_lower) else { return 0.0 };
        let mut valence = base;
        let n = words.len();
        if item_lower == "no" && i != n - 1 && self.in_lexicon(&lower[i + 1]) {
            valence = 0.0;
        }
        if (i > 0 && lower[i - 1] == "no")
            || (i > 1 && lower[i - 2] == "no")
            || (i > 2 && lower[i - 3] == "no" && (lower[i - 1] == "or" || lower[i - 1] == "nor"))
        {
            valence = base * N_SCALAR;
        }
        if py_isupper(item) && cap_diff {
            if valence > 0.0 {
                valence += C_INCR;
            } else {
                valence -= C_INCR;
            }
        }
        for start_i in 0..3 {
            if i > start_i && !self.in_lexicon(&lower[i - (start_i + 1)]) {
                let j = i - (start_i + 1);
                let mut s = self.scalar_inc_dec(words[j], &lower[j], valence, cap_diff);
                if start_i == 1 && s != 0.0 {
                    s *= 0.95;
                }
                if start_i == 2 && s != 0.0 {
                    s *= 0.9;
                }
                valence += s;
                valence = negation_check(valence, lower, start_i, i);
                if start_i == 2 {
                    valence = self.special_idioms_check(valence, lower, i);
                }
            }
        }
        self.least_check(valence, lower, i)
    }

    fn least_check(&self, valence: f64, lower: &[String], i: usize) -> f64 {
        if i > 1 && !self.in_lexicon(&lower[i - 1]) && lower[i - 1] == "least" {
            if lower[i - 2] != "at" && lower[i - 2] != "very" {
                return valence * N_SCALAR;
            }
        } else if i > 0 && !self.in_lexicon(&lower[i - 1]) && lower[i - 1] == "least" {
            return valence * N_SCALAR;
        }
        valence
    }

    fn special_idioms_check(&self, mut valence: f64, w: &[String], i: usize) -> f64 {
        let onezero = format!("{} {}", w[i - 1], w[i]);
        let twoonezero = format!("{} {} {}", w[i - 2], w[i - 1], w[i]);
        let twoone = format!("{} {}", w[i - 2], w[i - 1]);
        let threetwoone = format!("{} {} {}", w[i - 3], w[i - 2], w[i - 1]);
        let threetwo = format!("{} {}", w[i - 3], w[i - 2]);
        for seq in [&onezero, &twoonezero, &twoone, &threetwoone, &threetwo] {
            if let Some(&v) = self.special.get(seq.as_str()) {
                valence = v;
                break;
            }
        }
        if w.len() - 1 > i {
            let zeroone = format!("{} {}", w[i], w[i + 1]);
            if let Some(&v) = self.special.get(zeroone.as_str()) {
                valence = v;
            }
        }
        if w.len() - 1 > i + 1 {
            let zeroonetwo = format!("{} {} {}", w[i], w[i + 1], w[i + 2]);
            if let Some(&v) = self.special.get(zeroonetwo.as_str()) {
                valence = v;
            }
        }
        for gram in [&threetwoone, &threetwo, &twoone] {
            if let Some(&b) = self.boosters.get(gram.as_str()) {
                valence += b;
            }
        }
        valence
    }

    fn score_valence(&self, sentiments: &[f64], text: &str) -> SentimentScores {
        if sentiments.is_empty() {
            return SentimentScores {
                positive: 0.0,
                neutral: 1.0,
                negative: 0.0,
                compound: 0.0,
            };
        }
        let mut sum_s = sentiments.iter().fold(0.0, |a, b| a + b);
        let amplifier = punctuation_emphasis(text);
        if sum_s > 0.0 {
            sum_s += amplifier;
        } else if sum_s < 0.0 {
            sum_s -= amplifier;
        }
        let compound = normalize(sum_s);

        let (mut pos_sum, mut neg_sum, mut neu_count) = (0.0, 0.0, 0usize);
        for &s in sentiments {
            if s > 0.0 {
                pos_sum += s + 1.0;
            }
            if s < 0.0 {
                neg_sum += s - 1.0;
            }
            if s == 0.0 {
                neu_count += 1;
            }
        }
        if pos_sum > neg_sum.abs() {
            pos_sum += amplifier;
        } else if pos_sum < neg_sum.abs() {
            neg_sum -= amplifier;
        }
        let total = pos_sum + neg_sum.abs() + neu_count as f64;
        SentimentScores {
            positive: (pos_sum / total).abs(),
            neutral: (neu_count as f64 / total).abs(),
            negative: (neg_sum / total).abs(),
            compound,
        }
    }
}

/// `x / sqrt(x² + α)`, clamped to `[−1, 1]`.
pub fn normalize(score: f64) -> f64 {
    (score / (score * score + ALPHA).sqrt()).clamp(-1.0, 1.0)
}

fn negated(word: &str) -> bool {
    NEGATE.contains(&word) || word.contains("n't")
}

fn negation_check(valence: f64, w: &[String], start_i: usize, i: usize) -> f64 {
    match start_i {
        0 => {
            if negated(&w[i - 1]) {
                return valence * N_SCALAR;
            }
        }
        1 => {
            if w[i - 2] == "never" && (w[i - 1] == "so" || w[i - 1] == "this") {
                return valence * 1.25;
            } else if w[i - 2] == "without" && w[i - 1] == "doubt" {
                return valence;
            } else if negated(&w[i - 2]) {
                return valence * N_SCALAR;
            }
        }
        _ => {
            if (w[i - 3] == "never" && (w[i - 2] == "so" || w[i - 2] == "this"))
                || (w[i - 1] == "so" || w[i - 1] == "this")
            {
                return valence * 1.25;
            } else if w[i - 3] == "without" && (w[i - 2] == "doubt" || w[i - 1] == "doubt") {
                return valence;
            } else if negated(&w[i - 3]) {
                return valence * N_SCALAR;
            }
        }
    }
    valence
}

/// Reweights around the first "but". Each pass looks up the *first*
/// position holding the current value, so repeated values are rescaled at
/// that earlier position, exactly as the reference implementation does.
fn but_check(lower: &[String], sentiments: &mut [f64]) {
    let Some(bi) = lower.iter().position(|w| w == "but") else { return };
    for k in 0..sentiments.len() {
        let s = sentiments[k];
        let si = sentiments.iter().position(|&x| x == s).expect("value present");
        if si < bi {
            sentiments[si] = s * 0.5;
        } else if si > bi {
            sentiments[si] = s * 1.5;
        }
    }
}

fn punctuation_emphasis(text: &str) -> f64 {
    let ep = text.matches('!').count().min(4) as f64 * 0.292;
    let qm_count = text.matches('?').count();
    let qm = if qm_count > 1 {
        if qm_count <= 3 {
            qm_count as f64 * 0.18
        } else {
            0.96
        }
    } else {
        0.0
    };
    ep + qm
}

/// Whitespace as Python's `str.isspace` defines it.
fn py_isspace(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

/// Python's `str.isupper`: at least one cased character and no lowercase or
/// titlecase ones.
fn py_isupper(s: &str) -> bool {
    let mut cased = false;
    for c in s.chars() {
        if c.is_lowercase() || is_titlecase(c) {
            return false;
        }
        if c.is_uppercase() {
            cased = true;
        }
    }
    cased
}

fn is_titlecase(c: char) -> bool {
    !c.is_uppercase() && !c.is_lowercase() && c.to_lowercase().ne(std::iter::once(c))
}

fn strip_punc_if_word(token: &str) -> &str {
    let stripped = token.trim_matches(|c| ASCII_PUNCTUATION.contains(c));
    if stripped.chars().count() <= 2 {
        token
    } else {
        stripped
    }
}

fn allcap_differential(words: &[&str]) -> bool {
    let allcap = words.iter().filter(|w| py_isupper(w)).count();
    let diff = words.len() - allcap;
    0 < diff && diff < words.len()
}
