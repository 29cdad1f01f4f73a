//! Synthetic market and tweet generator.
//!
//! Log-volatility follows a per-bin Ornstein–Uhlenbeck process with an
//! optional leverage link to the previous return shock. Returns carry a
//! deterministic intraday volatility cycle and a volatility-scaled intraday
//! return pattern. Tweets arrive as a Poisson stream whose count, sentiment,
//! media and user fields can each be coupled to the *next* day's volatility
//! level.

use chrono::{DateTime, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::features::{assemble_days, daily_returns, DayData, FeatureError, BIN_SECONDS};
use crate::ingest::{format_timestamp, StoredTweet, TweetRecord, VaderLexicon};
use crate::BINS_PER_DAY;

/// Strength of the link between each tweet group and next-day volatility.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coupling {
    pub count: f64,
    pub vader: f64,
    pub tweet: f64,
    pub user: f64,
}

impl Coupling {
    pub fn none() -> Self {
        Coupling::default()
    }

    pub fn user_only(strength: f64) -> Self {
        Coupling { user: strength, ..Coupling::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub days: usize,
    pub start: NaiveDate,
    pub initial_price: f64,
    /// Per-bin return standard deviation at the median volatility level.
    pub base_volatility: f64,
    /// Stationary standard deviation of log-volatility.
    pub vol_of_vol: f64,
    /// Mean-reversion time of log-volatility, in days.
    pub vol_half_life_days: f64,
    /// Correlation between a return shock and the next volatility shock.
    pub leverage: f64,
    /// Relative amplitude of the intraday volatility cycle, in `[0, 1)`.
    pub cycle_amplitude: f64,
    /// Amplitude of the deterministic intraday return pattern, in units of
    /// the local volatility.
    pub pattern_strength: f64,
    pub tweets_per_bin: f64,
    pub coupling: Coupling,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 144,
            start: NaiveDate::from_ymd_opt(2021, 2, 5).expect("valid date"),
            initial_price: 40_000.0,
            base_volatility: 0.003,
            vol_of_vol: 0.5,
            vol_half_life_days: 1.0,
            leverage: -0.3,
            cycle_amplitude: 0.5,
            pattern_strength: 3.0,
            tweets_per_bin: 4.0,
            coupling: Coupling::none(),
            seed: 0,
        }
    }
}

/// Generated candles and tweets, plus the latent daily volatility.
#[derive(Debug, Clone)]
pub struct SynthData {
    /// `(open time, close)`; the first entry is the close just before the
    /// first day starts.
    pub candles: Vec<(i64, f64)>,
    /// Sorted by creation time.
    pub tweets: Vec<StoredTweet>,
    /// Mean log-volatility per day.
    pub daily_log_vol: Vec<f64>,
}

struct Template {
    text: &'static str,
    compound: f64,
}

const POSITIVE: &[&str] = &[
    "Bitcoin looking great today, love this rally",
    "$BTC breakout, very bullish and happy",
    "bitcoin wins again, amazing strength",
    "Good news for BTC holders, excellent week",
    "I am so glad I bought bitcoin",
];
const NEGATIVE: &[&str] = &[
    "Bitcoin crash is terrible, panic everywhere",
    "$BTC dump, awful day and bad fear",
    "bitcoin scam fears, worried and sad",
    "BTC losses hurt, horrible market",
    "I hate this bitcoin volatility",
];
const NEUTRAL: &[&str] = &[
    "Bitcoin price update",
    "$BTC volume report for the hour",
    "bitcoin on chain data thread",
    "BTC futures open interest",
    "new bitcoin block mined",
];

fn templates(lex: &VaderLexicon, texts: &[&'static str]) -> Vec<Template> {
    texts
        .iter()
        .map(|t| Template { text: t, compound: lex.polarity_scores(t).compound })
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unit-RMS, zero-mean intraday return pattern.
pub fn intraday_pattern(i: usize) -> f64 {
    let x = 2.0 * std::f64::consts::PI * i as f64 / BINS_PER_DAY as f64;
    (3.0 * x).sin() + (5.0 * x + 1.0).sin()
}

/// Intraday volatility multipliers with unit mean square.
pub fn volatility_cycle(amplitude: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..BINS_PER_DAY)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * (i as f64 - 56.0) / BINS_PER_DAY as f64;
            1.0 + amplitude * x.cos()
        })
        .collect();
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len() as f64).sqrt();
    raw.into_iter().map(|v| v / rms).collect()
}

impl SynthConfig {
    pub fn generate(&self) -> SynthData {
        let lex = VaderLexicon::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_days = self.days + 1;
        let n = n_days * BINS_PER_DAY;
        let phi = (-(2f64.ln()) / (self.vol_half_life_days * BINS_PER_DAY as f64)).exp();
        let innov = (1.0 - phi * phi).sqrt() * self.vol_of_vol;
        let lev = self.leverage.clamp(-1.0, 1.0);
        let cycle = volatility_cycle(self.cycle_amplitude);
        let pattern_rms = (1.0 + self.pattern_strength.powi(2)).sqrt();

        let mut h = self.vol_of_vol * rng.sample::<f64, _>(StandardNormal);
        let mut prev_z = 0.0;
        let mut log_vol = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        for t in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            h = phi * h + innov * (lev * prev_z + (1.0 - lev * lev).sqrt() * xi);
            let z: f64 = rng.sample(StandardNormal);
            let i = t % BINS_PER_DAY;
            let sigma = self.base_volatility * h.exp() * cycle[i];
            returns.push(sigma * (self.pattern_strength * intraday_pattern(i) + z) / pattern_rms);
            log_vol.push(h);
            prev_z = z;
        }
        let daily_log_vol: Vec<f64> = log_vol
            .chunks(BINS_PER_DAY)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();

        let t0 = self.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
        let mut candles = Vec::with_capacity(self.days * BINS_PER_DAY + 1);
        let mut log_p = self.initial_price.ln();
        candles.push((t0 - BIN_SECONDS, log_p.exp()));
        for (k, r) in returns.iter().take(self.days * BINS_PER_DAY).enumerate() {
            log_p += r;
            candles.push((t0 + k as i64 * BIN_SECONDS, log_p.exp()));
        }

        let pos = templates(&lex, POSITIVE);
        let neg = templates(&lex, NEGATIVE);
        let neu = templates(&lex, NEUTRAL);
        let mut tweet_rng = ChaCha8Rng::seed_from_u64(self.seed);
        tweet_rng.set_stream(7);
        let c = self.coupling;
        let mut tweets = Vec::new();
        for d in 0..self.days {
            // Standardised next-day volatility level drives the coupling.
            let signal = daily_log_vol[d + 1] / self.vol_of_vol.max(1e-12);
            let rate = self.tweets_per_bin * (0.5 * c.count * signal).exp();
            let poisson = Poisson::new(rate.max(1e-9)).expect("positive rate");
            for i in 0..BINS_PER_DAY {
                let start = t0 + (d * BINS_PER_DAY + i) as i64 * BIN_SECONDS;
                let k = poisson.sample(&mut tweet_rng) as usize;
                let mut times: Vec<i64> = (0..k).map(|_| start + tweet_rng.random_range(0..BIN_SECONDS)).collect();
                times.sort_unstable();
                for ts in times {
                    tweets.push(self.tweet(&mut tweet_rng, ts, signal, &pos, &neg, &neu));
                }
            }
        }
        SynthData { candles, tweets, daily_log_vol: daily_log_vol[..self.days].to_vec() }
    }

    fn tweet(
        &self,
        rng: &mut ChaCha8Rng,
        ts: i64,
        signal: f64,
        pos: &[Template],
        neg: &[Template],
        neu: &[Template],
    ) -> StoredTweet {
        let c = self.coupling;
        let u: f64 = rng.random();
        let p_neg = logistic(-1.0 + c.vader * signal);
        let pool = if u < 0.4 {
            neu
        } else if rng.random::<f64>() < p_neg {
            neg
        } else {
            pos
        };
        let tpl = &pool[rng.random_range(0..pool.len())];
        let media = |rng: &mut ChaCha8Rng, base: f64| -> u64 {
            let p = logistic(base + c.tweet * signal);
            u64::from(rng.random::<f64>() < p)
        };
        let bern = |rng: &mut ChaCha8Rng, base: f64, coupled: f64| rng.random::<f64>() < logistic(base + coupled * signal);
        let lognormal = |rng: &mut ChaCha8Rng, mu: f64| -> u64 {
            let z: f64 = rng.sample(StandardNormal);
            (mu + 0.4 * c.user * signal + 0.5 * z).exp().round() as u64
        };
        let record = TweetRecord {
            created_at: DateTime::<Utc>::from_timestamp(ts, 0).expect("in range"),
            gif_count: media(rng, -3.0),
            photo_count: media(rng, -1.5),
            video_count: media(rng, -2.5),
            is_quote_status: bern(rng, -1.0, c.tweet),
            possibly_sensitive: bern(rng, -3.0, c.tweet),
            tweet_text: tpl.text.to_string(),
            favourites_count: lognormal(rng, 6.0),
            followers_count: lognormal(rng, 7.0),
            friends_count: lognormal(rng, 5.5),
            listed_count: lognormal(rng, 2.0),
            verified: bern(rng, -2.0, c.user),
            default_profile: bern(rng, 0.0, -c.user),
            default_profile_image: bern(rng, -2.5, -c.user),
        };
        StoredTweet { record, vader_compound: tpl.compound }
    }
}

impl SynthData {
    /// Complete days with binned tweet features, ready for splitting.
    pub fn days(&self) -> Result<Vec<DayData>, FeatureError> {
        let price = daily_returns(&self.candles)?;
        Ok(assemble_days(&price, &self.tweets))
    }

    /// Raw tweets as flat JSON lines accepted by the ingest pipeline.
    pub fn tweet_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tweets.iter().enumerate() {
            let r = &t.record;
            let v = json!({
                "id": i,
                "created_at": format_timestamp(&r.created_at),
                "tweet_text": r.tweet_text,
                "gif_count": r.gif_count,
                "photo_count": r.photo_count,
                "video_count": r.video_count,
                "is_quote_status": r.is_quote_status,
                "possibly_sensitive": r.possibly_sensitive,
                "favourites_count": r.favourites_count,
                "followers_count": r.followers_count,
                "friends_count": r.friends_count,
                "listed_count": r.listed_count,
                "verified": r.verified,
                "default_profile": r.default_profile,
                "default_profile_image": r.default_profile_image,
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}
