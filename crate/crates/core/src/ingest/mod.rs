//! Offline tweet pipeline: relevance filter, flattening to the pruned schema,
//! sentiment scoring, and a timestamp-sorted CSV store.

pub mod vader;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use vader::{SentimentScores, VaderLexicon};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed tweet: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("lexicon: {0}")]
    Lexicon(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One tweet reduced to the pruned schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
    pub gif_count: u64,
    pub photo_count: u64,
    pub video_count: u64,
    pub is_quote_status: bool,
    pub possibly_sensitive: bool,
    pub tweet_text: String,
    pub favourites_count: u64,
    pub followers_count: u64,
    pub friends_count: u64,
    pub listed_count: u64,
    pub verified: bool,
    pub default_profile: bool,
    pub default_profile_image: bool,
}

/// Field names of [`TweetRecord`], in storage order.
pub const RECORD_FIELDS: [&str; 14] = [
    "created_at",
    "gif_count",
    "photo_count",
    "video_count",
    "is_quote_status",
    "possibly_sensitive",
    "tweet_text",
    "favourites_count",
    "followers_count",
    "friends_count",
    "listed_count",
    "verified",
    "default_profile",
    "default_profile_image",
];

/// A stored row: the record plus its VADER compound score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTweet {
    #[serde(flatten)]
    pub record: TweetRecord,
    pub vader_compound: f64,
}

mod rfc3339 {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_timestamp(&s).map_err(serde::de::Error::custom)
    }
}

/// `2021-03-01T12:00:00Z`, with fractional seconds only when present.
pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Accepts RFC 3339, the Twitter `created_at` form (`Wed Oct 10 20:19:24 +0000 2018`),
/// and integer Unix seconds.
pub fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(t) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(secs) = s.parse::<i64>() {
        if let Some(t) = Utc.timestamp_opt(secs, 0).single() {
            return Ok(t);
        }
    }
    Err(format!("unrecognised timestamp {s:?}"))
}

/// Matching rules for the relevance filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceRules {
    /// Matched as written.
    pub exact: Vec<String>,
    /// Matched ignoring ASCII case.
    pub caseless: Vec<String>,
}

impl Default for RelevanceRules {
    fn default() -> Self {
        RelevanceRules {
            exact: vec!["BTC".into(), "$BTC".into()],
            caseless: vec!["bitcoin".into()],
        }
    }
}

impl RelevanceRules {
    pub fn matches(&self, text: &str) -> bool {
        if self.exact.iter().any(|k| text.contains(k.as_str())) {
            return true;
        }
        let lower = text.to_lowercase();
        self.caseless
            .iter()
            .any(|k| lower.contains(&k.to_lowercase()))
    }
}

/// True when the text mentions `BTC`, `$BTC` or `Bitcoin` under the default rules.
pub fn filter_relevant(text: &str) -> bool {
    RelevanceRules::default().matches(text)
}

/// Flattens one JSON tweet. Accepts the raw API shape (any of general,
/// quote, retweet, reply) or an already-flat record.
///
/// Returns the record and the names of fields that were missing and defaulted.
pub fn refactor_prune(line: &str) -> Result<(TweetRecord, Vec<&'static str>)> {
    let v: Value = serde_json::from_str(line).map_err(|e| IngestError::Malformed(e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| IngestError::Malformed("not a JSON object".into()))?;
    if obj.contains_key("tweet_text") {
        flat_record(&v)
    } else {
        raw_record(&v)
    }
}

struct Defaults {
    missing: Vec<&'static str>,
}

impl Defaults {
    fn count(&mut self, v: Option<&Value>, name: &'static str) -> Result<u64> {
        match v {
            None | Some(Value::Null) => {
                self.missing.push(name);
                Ok(0)
            }
            Some(x) => x
                .as_u64()
                .or_else(|| x.as_f64().filter(|f| *f >= 0.0 && f.fract() == 0.0).map(|f| f as u64))
                .ok_or_else(|| IngestError::Malformed(format!("{name} is not a non-negative integer: {x}"))),
        }
    }

    fn flag(&mut self, v: Option<&Value>, name: &'static str) -> Result<bool> {
        match v {
            None | Some(Value::Null) => {
                self.missing.push(name);
                Ok(false)
            }
            Some(Value::Bool(b)) => Ok(*b),
            Some(x) => Err(IngestError::Malformed(format!("{name} is not a boolean: {x}"))),
        }
    }
}

fn timestamp_of(v: &Value) -> Result<DateTime<Utc>> {
    match v.get("created_at") {
        Some(Value::String(s)) => parse_timestamp(s).map_err(IngestError::Malformed),
        Some(Value::Number(n)) => n
            .as_i64()
            .and_then(|s| Utc.timestamp_opt(s, 0).single())
            .ok_or_else(|| IngestError::Malformed(format!("bad created_at {n}"))),
        _ => match v.get("timestamp_ms").and_then(|t| match t {
            Value::String(s) => s.parse::<i64>().ok(),
            other => other.as_i64(),
        }) {
            Some(ms) => Utc
                .timestamp_millis_opt(ms)
                .single()
                .ok_or_else(|| IngestError::Malformed(format!("bad timestamp_ms {ms}"))),
            None => Err(IngestError::Malformed("missing created_at".into())),
        },
    }
}

fn flat_record(v: &Value) -> Result<(TweetRecord, Vec<&'static str>)> {
    let mut d = Defaults { missing: Vec::new() };
    let record = TweetRecord {
        created_at: timestamp_of(v)?,
        gif_count: d.count(v.get("gif_count"), "gif_count")?,
        photo_count: d.count(v.get("photo_count"), "photo_count")?,
        video_count: d.count(v.get("video_count"), "video_count")?,
        is_quote_status: d.flag(v.get("is_quote_status"), "is_quote_status")?,
        possibly_sensitive: d.flag(v.get("possibly_sensitive"), "possibly_sensitive")?,
        tweet_text: v
            .get("tweet_text")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        favourites_count: d.count(v.get("favourites_count"), "favourites_count")?,
        followers_count: d.count(v.get("followers_count"), "followers_count")?,
        friends_count: d.count(v.get("friends_count"), "friends_count")?,
        listed_count: d.count(v.get("listed_count"), "listed_count")?,
        verified: d.flag(v.get("verified"), "verified")?,
        default_profile: d.flag(v.get("default_profile"), "default_profile")?,
        default_profile_image: d.flag(v.get("default_profile_image"), "default_profile_image")?,
    };
    Ok((record, d.missing))
}

fn media_counts(v: &Value) -> (u64, u64, u64) {
    let media = v
        .pointer("/extended_entities/media")
        .or_else(|| v.pointer("/entities/media"))
        .and_then(Value::as_array);
    let (mut gif, mut photo, mut video) = (0, 0, 0);
    for m in media.into_iter().flatten() {
        match m.get("type").and_then(Value::as_str) {
            Some("animated_gif") => gif += 1,
            Some("photo") => photo += 1,
            Some("video") => video += 1,
            _ => {}
        }
    }
    (gif, photo, video)
}

fn tweet_text(v: &Value) -> Option<&str> {
    v.pointer("/extended_tweet/full_text")
        .or_else(|| v.get("full_text"))
        .or_else(|| v.get("text"))
        .and_then(Value::as_str)
}

fn raw_record(v: &Value) -> Result<(TweetRecord, Vec<&'static str>)> {
    let mut d = Defaults { missing: Vec::new() };
    let created_at = timestamp_of(v)?;
    let (gif_count, photo_count, video_count) = media_counts(v);
    let present = |key: &str| v.get(key).is_some_and(|x| !x.is_null());
    let is_quote_status = v.get("is_quote_status").and_then(Value::as_bool).unwrap_or(false)
        || present("quoted_status")
        || present("retweeted_status")
        || present("in_reply_to_status_id")
        || present("in_reply_to_status_id_str");
    let text = match tweet_text(v) {
        Some(t) => t.to_string(),
        None => {
            d.missing.push("tweet_text");
            String::new()
        }
    };
    let possibly_sensitive = d.flag(v.get("possibly_sensitive"), "possibly_sensitive")?;
    let user = v.get("user").filter(|u| u.is_object());
    if user.is_none() {
        d.missing.push("user");
    }
    let uf = |k: &str| user.and_then(|u| u.get(k));
    let record = TweetRecord {
        created_at,
        gif_count,
        photo_count,
        video_count,
        is_quote_status,
        possibly_sensitive,
        tweet_text: text,
        favourites_count: d.count(uf("favourites_count"), "favourites_count")?,
        followers_count: d.count(uf("followers_count"), "followers_count")?,
        friends_count: d.count(uf("friends_count"), "friends_count")?,
        listed_count: d.count(uf("listed_count"), "listed_count")?,
        verified: d.flag(uf("verified"), "verified")?,
        default_profile: d.flag(uf("default_profile"), "default_profile")?,
        default_profile_image: d.flag(uf("default_profile_image"), "default_profile_image")?,
    };
    Ok((record, d.missing))
}

/// Counters reported at the end of an ingest run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub lines: usize,
    pub accepted: usize,
    pub rejects: usize,
    pub irrelevant: usize,
    pub blank: usize,
    /// Field name to number of records where it was missing and defaulted.
    pub defaulted: BTreeMap<&'static str, usize>,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.lines += other.lines;
        self.accepted += other.accepted;
        self.rejects += other.rejects;
        self.irrelevant += other.irrelevant;
        self.blank += other.blank;
        for (k, v) in &other.defaulted {
            *self.defaulted.entry(k).or_default() += v;
        }
    }
}

impl std::fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "lines={} accepted={} rejects={} irrelevant={} blank={}",
            self.lines, self.accepted, self.rejects, self.irrelevant, self.blank
        )?;
        for (k, v) in &self.defaulted {
            write!(f, " defaulted.{k}={v}")?;
        }
        Ok(())
    }
}

/// Options for [`ingest_lines`].
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Drop records whose text fails the relevance rules.
    pub relevance: Option<RelevanceRules>,
}

/// Parses, filters and scores every line of a JSON Lines stream.
pub fn ingest_lines(
    reader: impl BufRead,
    lexicon: &VaderLexicon,
    options: &IngestOptions,
) -> Result<(Vec<StoredTweet>, Diagnostics)> {
    let mut out = Vec::new();
    let mut diag = Diagnostics::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        diag.lines += 1;
        if line.trim().is_empty() {
            diag.blank += 1;
            continue;
        }
        match refactor_prune(&line) {
            Ok((record, missing)) => {
                if let Some(rules) = &options.relevance {
                    if !rules.matches(&record.tweet_text) {
                        diag.irrelevant += 1;
                        continue;
                    }
                }
                for m in missing {
                    *diag.defaulted.entry(m).or_default() += 1;
                }
                let vader_compound = lexicon.polarity_scores(&record.tweet_text).compound;
                out.push(StoredTweet {
                    record,
                    vader_compound,
                });
                diag.accepted += 1;
            }
            Err(e) => {
                log::warn!("line {}: {e}", n + 1);
                diag.rejects += 1;
            }
        }
    }
    for (field, count) in &diag.defaulted {
        log::info!("{count} records missing {field}; defaulted");
    }
    Ok((out, diag))
}

pub fn ingest_file(
    path: &Path,
    lexicon: &VaderLexicon,
    options: &IngestOptions,
) -> Result<(Vec<StoredTweet>, Diagnostics)> {
    let f = std::fs::File::open(path)?;
    ingest_lines(BufReader::new(f), lexicon, options)
}

/// Stable sort by creation time, then write as CSV.
pub fn write_sorted(mut rows: Vec<StoredTweet>, path: &Path) -> Result<()> {
    rows.sort_by_key(|r| r.record.created_at);
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        let mut header: Vec<&str> = RECORD_FIELDS.to_vec();
        header.push("vader_compound");
        w.write_record(&header)?;
    }
    for r in rows {
        w.serialize(FlatRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stored(path: &Path) -> Result<Vec<StoredTweet>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<FlatRow>() {
        out.push(row?.into());
    }
    Ok(out)
}

// The csv crate cannot serialize `#[serde(flatten)]`, so storage goes
// through this flat mirror of `StoredTweet`.
#[derive(Serialize, Deserialize)]
struct FlatRow {
    #[serde(with = "rfc3339")]
    created_at: DateTime<Utc>,
    gif_count: u64,
    photo_count: u64,
    video_count: u64,
    is_quote_status: bool,
    possibly_sensitive: bool,
    tweet_text: String,
    favourites_count: u64,
    followers_count: u64,
    friends_count: u64,
    listed_count: u64,
    verified: bool,
    default_profile: bool,
    default_profile_image: bool,
    vader_compound: f64,
}

impl From<StoredTweet> for FlatRow {
    fn from(s: StoredTweet) -> Self {
        let r = s.record;
        FlatRow {
            created_at: r.created_at,
            gif_count: r.gif_count,
            photo_count: r.photo_count,
            video_count: r.video_count,
            is_quote_status: r.is_quote_status,
            possibly_sensitive: r.possibly_sensitive,
            tweet_text: r.tweet_text,
            favourites_count: r.favourites_count,
            followers_count: r.followers_count,
            friends_count: r.friends_count,
            listed_count: r.listed_count,
            verified: r.verified,
            default_profile: r.default_profile,
            default_profile_image: r.default_profile_image,
            vader_compound: s.vader_compound,
        }
    }
}

impl From<FlatRow> for StoredTweet {
    fn from(f: FlatRow) -> Self {
        StoredTweet {
            record: TweetRecord {
                created_at: f.created_at,
                gif_count: f.gif_count,
                photo_count: f.photo_count,
                video_count: f.video_count,
                is_quote_status: f.is_quote_status,
                possibly_sensitive: f.possibly_sensitive,
                tweet_text: f.tweet_text,
                favourites_count: f.favourites_count,
                followers_count: f.followers_count,
                friends_count: f.friends_count,
                listed_count: f.listed_count,
                verified: f.verified,
                default_profile: f.default_profile,
                default_profile_image: f.default_profile_image,
            },
            vader_compound: f.vader_compound,
        }
    }
}
