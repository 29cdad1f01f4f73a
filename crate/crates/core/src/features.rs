//! Price-side and tweet-side feature engineering: returns, realized
//! volatility, fifteen-minute tweet bins, feature-set selection, scaling and
//! day windows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{format_timestamp, parse_timestamp, StoredTweet};
use crate::models::DayWindow;
use crate::tensor::Tensor;
use crate::BINS_PER_DAY;

/// Seconds in one bin.
pub const BIN_SECONDS: i64 = 900;
const DAY_SECONDS: i64 = BIN_SECONDS * BINS_PER_DAY as i64;
/// Forward-filled candles tolerated per day before the day is dropped.
pub const MAX_GAP_BINS: usize = 4;
/// Width of the full tweet feature row.
pub const FEATURE_COLUMNS: usize = 14;
/// Names of the full tweet feature row, in column order.
pub const FEATURE_NAMES: [&str; FEATURE_COLUMNS] = [
    "count",
    "vader_compound",
    "gif_count",
    "photo_count",
    "video_count",
    "is_quote_status",
    "possibly_sensitive",
    "favourites_count",
    "followers_count",
    "friends_count",
    "listed_count",
    "verified",
    "default_profile",
    "default_profile_image",
];
/// Half-width of the band training data is scaled into.
pub const SCALE_HALF_WIDTH: f64 = 0.25;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least two prices, got {0}")]
    TooShort(usize),
    #[error("non-positive price {price} at index {index}")]
    NonPositivePrice { index: usize, price: f64 },
    #[error("expected {BINS_PER_DAY} returns for one day, got {0}")]
    BinCount(usize),
    #[error("timestamp {0} is not on the 15-minute grid")]
    OffGrid(i64),
    #[error("timestamps must be strictly increasing (at {0})")]
    Unordered(i64),
    #[error("feature set must not be empty")]
    EmptySelector,
    #[error("unknown feature group {0:?}")]
    UnknownGroup(String),
    #[error("not enough days: need {need}, have {have}")]
    NotEnoughDays { need: usize, have: usize },
    #[error("feature rows must have {FEATURE_COLUMNS} columns")]
    FeatureWidth,
    #[error("{0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// `log P_t − log P_{t−1}` for consecutive prices.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(FeatureError::TooShort(prices.len()));
    }
    if let Some((index, &price)) = prices.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(FeatureError::NonPositivePrice { index, price });
    }
    Ok(prices.windows(2).map(|w| w[1].ln() - w[0].ln()).collect())
}

/// Square root of the day's summed squared returns.
pub fn realized_volatility(day: &[f64]) -> Result<f64> {
    if day.len() != BINS_PER_DAY {
        return Err(FeatureError::BinCount(day.len()));
    }
    Ok(day.iter().map(|r| r * r).sum::<f64>().sqrt())
}

/// Closing prices on an exact 15-minute UTC grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    timestamps: Vec<i64>,
    closes: Vec<f64>,
}

impl PriceSeries {
    pub fn new(timestamps: Vec<i64>, closes: Vec<f64>) -> Result<Self> {
        if timestamps.len() != closes.len() {
            return Err(FeatureError::Parse("timestamp and price counts differ".into()));
        }
        for (i, &t) in timestamps.iter().enumerate() {
            if t.rem_euclid(BIN_SECONDS) != 0 {
                return Err(FeatureError::OffGrid(t));
            }
            if i > 0 && t <= timestamps[i - 1] {
                return Err(FeatureError::Unordered(t));
            }
        }
        if let Some((index, &price)) = closes.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
            return Err(FeatureError::NonPositivePrice { index, price });
        }
        Ok(PriceSeries { timestamps, closes })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }
}

/// Reads a `timestamp,close` CSV. Timestamps may be RFC 3339 or unix
/// seconds; rows need not be sorted.
pub fn read_candles(path: &Path) -> Result<Vec<(i64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let (Some(ts), Some(close)) = (row.get(0), row.get(1)) else {
            return Err(FeatureError::Parse(format!("candle row {}: expected timestamp,close", n + 2)));
        };
        let t = parse_timestamp(ts).map_err(|e| FeatureError::Parse(format!("candle row {}: {e}", n + 2)))?;
        let c: f64 = close
            .parse()
            .map_err(|_| FeatureError::Parse(format!("candle row {}: bad close {close:?}", n + 2)))?;
        out.push((t.timestamp(), c));
    }
    Ok(out)
}

pub fn write_candles(path: &Path, candles: &[(i64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "close"])?;
    for &(t, c) in candles {
        w.write_record([format_timestamp(&epoch(t)), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn epoch(t: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(t, 0).expect("timestamp in range")
}

fn day_of(t: i64) -> NaiveDate {
    epoch(t).date_naive()
}

fn midnight(day: NaiveDate) -> i64 {
    day.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp()
}

/// One UTC day of 96 log-returns. Bin `i` holds the log change from the
/// previous bar's close to the close of the bar opened at `start + 15i min`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnDay {
    pub date: NaiveDate,
    pub returns: Vec<f64>,
    /// Candles that had to be forward-filled for this day.
    pub filled: usize,
}

/// Result of turning raw candles into complete return days.
#[derive(Debug, Clone, Default)]
pub struct PriceDays {
    pub days: Vec<ReturnDay>,
    pub dropped: Vec<NaiveDate>,
}

/// Builds complete UTC days of returns from candles stamped with their bar's
/// open time. Missing bars are forward-filled (zero return); days needing
/// more than [`MAX_GAP_BINS`] fills, or lacking the previous day's last
/// close, are dropped with a warning.
pub fn daily_returns(candles: &[(i64, f64)]) -> Result<PriceDays> {
    let mut sorted: BTreeMap<i64, f64> = BTreeMap::new();
    for &(t, c) in candles {
        if t.rem_euclid(BIN_SECONDS) != 0 {
            return Err(FeatureError::OffGrid(t));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(FeatureError::NonPositivePrice { index: sorted.len(), price: c });
        }
        if sorted.insert(t, c).is_some() {
            return Err(FeatureError::Unordered(t));
        }
    }
    let (Some((&first, _)), Some((&last, _))) = (sorted.first_key_value(), sorted.last_key_value()) else {
        return Ok(PriceDays::default());
    };
    let n = ((last - first) / BIN_SECONDS) as usize + 1;
    let mut closes = Vec::with_capacity(n);
    let mut filled_flags = Vec::with_capacity(n);
    let mut prev = f64::NAN;
    for k in 0..n {
        let t = first + k as i64 * BIN_SECONDS;
        match sorted.get(&t) {
            Some(&c) => {
                closes.push(c);
                filled_flags.push(false);
                prev = c;
            }
            None => {
                closes.push(prev);
                filled_flags.push(true);
            }
        }
    }
    let mut per_day: BTreeMap<NaiveDate, (Vec<f64>, usize)> = BTreeMap::new();
    for k in 1..n {
        let start = first + k as i64 * BIN_SECONDS;
        let entry = per_day.entry(day_of(start)).or_insert_with(|| (Vec::new(), 0));
        entry.0.push(closes[k].ln() - closes[k - 1].ln());
        if filled_flags[k] {
            entry.1 += 1;
        }
    }
    let mut out = PriceDays::default();
    for (date, (returns, filled)) in per_day {
        if returns.len() != BINS_PER_DAY {
            warn!("dropping partial day {date} ({} of {BINS_PER_DAY} bins)", returns.len());
            out.dropped.push(date);
        } else if filled > MAX_GAP_BINS {
            warn!("dropping {date}: {filled} missing candles exceed the cap of {MAX_GAP_BINS}");
            out.dropped.push(date);
        } else {
            out.days.push(ReturnDay { date, returns, filled });
        }
    }
    Ok(out)
}

/// Tweet aggregates over one 15-minute interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBin {
    pub start: i64,
    pub count: u64,
    pub gif_count: f64,
    pub photo_count: f64,
    pub video_count: f64,
    pub is_quote_status: f64,
    pub possibly_sensitive: f64,
    pub favourites_count: f64,
    pub followers_count: f64,
    pub friends_count: f64,
    pub listed_count: f64,
    pub verified: f64,
    pub default_profile: f64,
    pub default_profile_image: f64,
    pub vader_compound: f64,
}

impl FeatureBin {
    pub fn empty(start: i64) -> Self {
        FeatureBin {
            start,
            count: 0,
            gif_count: 0.0,
            photo_count: 0.0,
            video_count: 0.0,
            is_quote_status: 0.0,
            possibly_sensitive: 0.0,
            favourites_count: 0.0,
            followers_count: 0.0,
            friends_count: 0.0,
            listed_count: 0.0,
            verified: 0.0,
            default_profile: 0.0,
            default_profile_image: 0.0,
            vader_compound: 0.0,
        }
    }

    /// The full feature row in [`FEATURE_NAMES`] order.
    pub fn columns(&self) -> [f64; FEATURE_COLUMNS] {
        [
            self.count as f64,
            self.vader_compound,
            self.gif_count,
            self.photo_count,
            self.video_count,
            self.is_quote_status,
            self.possibly_sensitive,
            self.favourites_count,
            self.followers_count,
            self.friends_count,
            self.listed_count,
            self.verified,
            self.default_profile,
            self.default_profile_image,
        ]
    }
}

fn tweet_values(t: &StoredTweet) -> [f64; 13] {
    let r = &t.record;
    let b = |x: bool| if x { 1.0 } else { 0.0 };
    [
        r.gif_count as f64,
        r.photo_count as f64,
        r.video_count as f64,
        b(r.is_quote_status),
        b(r.possibly_sensitive),
        r.favourites_count as f64,
        r.followers_count as f64,
        r.friends_count as f64,
        r.listed_count as f64,
        b(r.verified),
        b(r.default_profile),
        b(r.default_profile_image),
        t.vader_compound,
    ]
}

/// Aggregates tweets into `bins` consecutive half-open 15-minute intervals
/// starting at `grid_start`. Tweets outside the grid are ignored; empty
/// intervals get count 0 and all-zero means.
pub fn bin_tweets(records: &[StoredTweet], grid_start: i64, bins: usize) -> Vec<FeatureBin> {
    let mut sums = vec![[0.0f64; 13]; bins];
    let mut counts = vec![0u64; bins];
    let end = grid_start + bins as i64 * BIN_SECONDS;
    for t in records {
        let ts = t.record.created_at.timestamp();
        if ts < grid_start || ts >= end {
            continue;
        }
        let k = ((ts - grid_start) / BIN_SECONDS) as usize;
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(tweet_values(t)) {
            *s += v;
        }
    }
    (0..bins)
        .map(|k| {
            let start = grid_start + k as i64 * BIN_SECONDS;
            if counts[k] == 0 {
                return FeatureBin::empty(start);
            }
            let n = counts[k] as f64;
            let m = sums[k].map(|s| s / n);
            FeatureBin {
                start,
                count: counts[k],
                gif_count: m[0],
                photo_count: m[1],
                video_count: m[2],
                is_quote_status: m[3],
                possibly_sensitive: m[4],
                favourites_count: m[5],
                followers_count: m[6],
                friends_count: m[7],
                listed_count: m[8],
                verified: m[9],
                default_profile: m[10],
                default_profile_image: m[11],
                vader_compound: m[12],
            }
        })
        .collect()
}

/// A tweet feature group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureGroup {
    Count,
    Vader,
    Tweet,
    User,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 4] = [FeatureGroup::Count, FeatureGroup::Vader, FeatureGroup::Tweet, FeatureGroup::User];

    /// Column indices in the full feature row.
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            FeatureGroup::Count => 0..1,
            FeatureGroup::Vader => 1..2,
            FeatureGroup::Tweet => 2..7,
            FeatureGroup::User => 7..14,
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureGroup::Count => "Count",
            FeatureGroup::Vader => "VADER",
            FeatureGroup::Tweet => "Tweet",
            FeatureGroup::User => "User",
        })
    }
}

impl FromStr for FeatureGroup {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "count" => Ok(FeatureGroup::Count),
            "vader" => Ok(FeatureGroup::Vader),
            "tweet" => Ok(FeatureGroup::Tweet),
            "user" => Ok(FeatureGroup::User),
            _ => Err(FeatureError::UnknownGroup(s.trim().to_string())),
        }
    }
}

/// A non-empty subset of feature groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSet(u8);

impl FeatureSet {
    pub fn new(groups: &[FeatureGroup]) -> Result<Self> {
        let bits = groups.iter().fold(0u8, |b, g| b | g.bit());
        if bits == 0 {
            return Err(FeatureError::EmptySelector);
        }
        Ok(FeatureSet(bits))
    }

    pub fn all() -> Self {
        FeatureSet(0b1111)
    }

    pub fn contains(&self, g: FeatureGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn groups(&self) -> Vec<FeatureGroup> {
        FeatureGroup::ALL.into_iter().filter(|g| self.contains(*g)).collect()
    }

    /// Selected column indices, always in Count, VADER, Tweet, User order.
    pub fn columns(&self) -> Vec<usize> {
        self.groups().into_iter().flat_map(|g| g.columns()).collect()
    }

    pub fn width(&self) -> usize {
        self.columns().len()
    }

    /// Row label suffix, e.g. `Count, Tweet, User`.
    pub fn label(&self) -> String {
        self.groups().iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ")
    }

    /// The fifteen non-empty subsets in ablation-table order.
    pub fn all_subsets() -> Vec<FeatureSet> {
        use FeatureGroup::*;
        let rows: [&[FeatureGroup]; 15] = [
            &[User],
            &[Tweet],
            &[Vader],
            &[Count],
            &[Vader, Tweet, User],
            &[Vader, Tweet],
            &[Vader, User],
            &[Tweet, User],
            &[Count, Tweet, User],
            &[Count, Tweet],
            &[Count, User],
            &[Count, Vader, Tweet, User],
            &[Count, Vader, Tweet],
            &[Count, Vader, User],
            &[Count, Vader],
        ];
        rows.iter().map(|r| FeatureSet::new(r).expect("non-empty")).collect()
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for FeatureSet {
    type Err = FeatureError;

    /// Accepts comma- or plus-separated group names, case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let groups = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(FeatureGroup::from_str)
            .collect::<Result<Vec<_>>>()?;
        FeatureSet::new(&groups)
    }
}

/// Stacks the selected columns of 96 bins into a `[96 × F]` matrix.
pub fn select_features(bins: &[[f64; FEATURE_COLUMNS]], set: FeatureSet) -> Tensor {
    let cols = set.columns();
    let data = bins.iter().flat_map(|row| cols.iter().map(|&c| row[c])).collect();
    Tensor::matrix(bins.len(), cols.len(), data).expect("consistent shape")
}

/// Affine map of one column into the training band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnScale {
    pub min: f64,
    pub range: f64,
}

impl ColumnScale {
    /// Learns min and range; a zero range is replaced by 1 with a warning.
    pub fn fit(values: &[f64], name: &str) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            warn!("column {name}: no training values, using identity range");
            return ColumnScale { min: 0.0, range: 1.0 };
        }
        let range = max - min;
        if range > 0.0 {
            ColumnScale { min, range }
        } else {
            warn!("column {name} is constant on the training set; scaling by 1");
            ColumnScale { min, range: 1.0 }
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        -SCALE_HALF_WIDTH + 2.0 * SCALE_HALF_WIDTH * (x - self.min) / self.range
    }

    pub fn invert(&self, s: f64) -> f64 {
        (s + SCALE_HALF_WIDTH) / (2.0 * SCALE_HALF_WIDTH) * self.range + self.min
    }
}

/// Per-column min-range scaling learned from training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub columns: Vec<ColumnScale>,
}

impl Scaler {
    pub fn fit(rows: &[&[f64]], names: &[&str]) -> Self {
        let width = names.len();
        let columns = (0..width)
            .map(|c| {
                let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
                ColumnScale::fit(&col, names[c])
            })
            .collect();
        Scaler { columns }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.columns).map(|(&x, c)| c.apply(x)).collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.columns).map(|(&s, c)| c.invert(s)).collect()
    }
}

/// One complete UTC day: returns and the full tweet feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DayData {
    pub date: NaiveDate,
    pub returns: Vec<f64>,
    pub features: Vec<[f64; FEATURE_COLUMNS]>,
}

impl DayData {
    pub fn start(&self) -> i64 {
        midnight(self.date)
    }

    pub fn rv(&self) -> f64 {
        self.returns.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

/// Joins return days with tweet bins over the same grid.
pub fn assemble_days(price: &PriceDays, tweets: &[StoredTweet]) -> Vec<DayData> {
    price
        .days
        .par_iter()
        .map(|d| {
            let start = midnight(d.date);
            let lo = tweets.partition_point(|t| t.record.created_at.timestamp() < start);
            let hi = tweets.partition_point(|t| t.record.created_at.timestamp() < start + DAY_SECONDS);
            let features = bin_tweets(&tweets[lo..hi], start, BINS_PER_DAY)
                .iter()
                .map(FeatureBin::columns)
                .collect();
            DayData { date: d.date, returns: d.returns.clone(), features }
        })
        .collect()
}

/// Groups flat 15-minute rows into UTC days, dropping incomplete days with a
/// warning. `timestamps` must be strictly increasing grid points.
pub fn group_days(timestamps: &[i64], returns: &[f64], features: &[[f64; FEATURE_COLUMNS]]) -> Result<Vec<DayData>> {
    if timestamps.len() != returns.len() || timestamps.len() != features.len() {
        return Err(FeatureError::Parse("column lengths differ".into()));
    }
    let mut days: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, &t) in timestamps.iter().enumerate() {
        if t.rem_euclid(BIN_SECONDS) != 0 {
            return Err(FeatureError::OffGrid(t));
        }
        if i > 0 && t <= timestamps[i - 1] {
            return Err(FeatureError::Unordered(t));
        }
        days.entry(day_of(t)).or_default().push(i);
    }
    let mut out = Vec::new();
    for (date, idx) in days {
        if idx.len() != BINS_PER_DAY {
            warn!("discarding partial day {date} ({} of {BINS_PER_DAY} bins)", idx.len());
            continue;
        }
        out.push(DayData {
            date,
            returns: idx.iter().map(|&i| returns[i]).collect(),
            features: idx.iter().map(|&i| features[i]).collect(),
        });
    }
    Ok(out)
}

/// Scalers learned from a training horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub returns: ColumnScale,
    pub features: Scaler,
}

impl Scaling {
    pub fn fit(train: &[DayData]) -> Self {
        let all: Vec<f64> = train.iter().flat_map(|d| d.returns.iter().copied()).collect();
        let rows: Vec<&[f64]> = train.iter().flat_map(|d| d.features.iter().map(|r| &r[..])).collect();
        Scaling {
            returns: ColumnScale::fit(&all, "log_return"),
            features: Scaler::fit(&rows, &FEATURE_NAMES),
        }
    }
}

/// Pairs each day with the next calendar day. Pairs separated by a dropped
/// day are skipped, so inputs always end before targets begin.
pub fn make_day_windows(days: &[DayData], scaling: &Scaling, set: Option<FeatureSet>) -> Vec<DayWindow> {
    days.windows(2)
        .filter_map(|p| {
            let (input, target) = (&p[0], &p[1]);
            if target.date != input.date.succ_opt()? {
                warn!("no window from {} to {}: days are not consecutive", input.date, target.date);
                return None;
            }
            Some(window(input, target, scaling, set))
        })
        .collect()
}

fn window(input: &DayData, target: &DayData, scaling: &Scaling, set: Option<FeatureSet>) -> DayWindow {
    let features = set.map(|s| {
        let scaled: Vec<[f64; FEATURE_COLUMNS]> = input
            .features
            .iter()
            .map(|r| scaling.features.apply(r).try_into().expect("full row"))
            .collect();
        select_features(&scaled, s)
    });
    DayWindow {
        input_day: input.date,
        target_day: target.date,
        inputs: input.returns.iter().map(|&r| scaling.returns.apply(r)).collect(),
        features,
        target: target.returns.iter().map(|&r| scaling.returns.apply(r)).collect(),
        target_raw: target.returns.clone(),
    }
}

/// A chronological train/test split with scalers fitted on the training
/// horizon only.
#[derive(Debug, Clone)]
pub struct Split {
    /// Every day of both horizons, training days first.
    pub days: Vec<DayData>,
    pub train_days: usize,
    pub scaling: Scaling,
    /// Windows whose target lies in the training horizon.
    pub train: Vec<DayWindow>,
    /// Windows whose target lies in the test horizon; the first takes the
    /// last training day as input.
    pub test: Vec<DayWindow>,
}

impl Split {
    /// Uses the first `train_days + test_days` days.
    pub fn new(days: &[DayData], train_days: usize, test_days: usize, set: Option<FeatureSet>) -> Result<Self> {
        let need = train_days + test_days;
        if days.len() < need || train_days < 2 || test_days == 0 {
            return Err(FeatureError::NotEnoughDays { need: need.max(3), have: days.len() });
        }
        let days = days[..need].to_vec();
        let scaling = Scaling::fit(&days[..train_days]);
        let train = make_day_windows(&days[..train_days], &scaling, set);
        let test = make_day_windows(&days[train_days - 1..], &scaling, set);
        Ok(Split { days, train_days, scaling, train, test })
    }

    pub fn train_part(&self) -> &[DayData] {
        &self.days[..self.train_days]
    }

    pub fn test_part(&self) -> &[DayData] {
        &self.days[self.train_days..]
    }
}

/// Writes the 15-minute feature table: `interval_start`, `log_return`, then
/// [`FEATURE_NAMES`].
pub fn write_feature_csv(path: &Path, days: &[DayData]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "interval_start,log_return")?;
    for n in FEATURE_NAMES {
        write!(out, ",{n}")?;
    }
    writeln!(out)?;
    for d in days {
        let start = d.start();
        for (i, (r, row)) in d.returns.iter().zip(&d.features).enumerate() {
            write!(out, "{},{}", format_timestamp(&epoch(start + i as i64 * BIN_SECONDS)), r)?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<DayData>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<&str> = ["interval_start", "log_return"].into_iter().chain(FEATURE_NAMES).collect();
    if header != expected {
        return Err(FeatureError::Parse(format!("unexpected feature header {header:?}")));
    }
    let mut ts = Vec::new();
    let mut rets = Vec::new();
    let mut feats = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row?;
        let t = parse_timestamp(&row[0]).map_err(|e| FeatureError::Parse(format!("row {}: {e}", n + 2)))?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|_| FeatureError::Parse(format!("row {}: bad number {:?}", n + 2, &row[i])))
        };
        ts.push(t.timestamp());
        rets.push(num(1)?);
        let mut f = [0.0; FEATURE_COLUMNS];
        for (c, v) in f.iter_mut().enumerate() {
            *v = num(c + 2)?;
        }
        feats.push(f);
    }
    group_days(&ts, &rets, &feats)
}
