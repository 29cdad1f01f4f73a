"""Builds the 50-tweet pipeline fixture and its expected outputs.

The expected tweet table and feature CSV are computed here, independently
of the Rust code, with the reference vaderSentiment package (rounding of
the compound score disabled). Run once; the outputs are committed.

    python3 make_fixture.py
"""

import json
import math
import random
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from pathlib import Path

import vaderSentiment.vaderSentiment as vs

vs.round = lambda x, n=None: x  # keep full precision
ANALYZER = vs.SentimentIntensityAnalyzer()

HERE = Path(__file__).parent
UTC = timezone.utc
GRID_START = datetime(2021, 3, 1, tzinfo=UTC)
DAYS = 2
BIN = 900
MISSING_CANDLE = datetime(2021, 3, 2, 10, 0, tzinfo=UTC)

TEXTS = [
    "Bitcoin is going to the moon!!! Love it",
    "$BTC looks terrible today, not good at all",
    "BTC price is flat. Nothing happening.",
    "I am VERY happy with my bitcoin gains :)",
    "Bitcoin crashed but I am still hopeful",
    "Selling all my BTC, this is a disaster",
    "bitcoin adoption keeps growing, great news",
    "Is $BTC a scam? I don't think so",
    "BTC breaks resistance, extremely bullish",
    "Not sure about bitcoin anymore... kinda sad",
    "Bitcoin fees are insanely high, hate it",
    "$BTC dip = opportunity. Buying more!",
    "BTC and ETH both green today",
    "Bitcoin halving explained in a short thread",
    "The BTC chart is ugly, worst week ever",
]


def twitter_time(t):
    return t.strftime("%a %b %d %H:%M:%S +0000 %Y")


def make_raw(rng):
    times = []
    for day in range(DAYS):
        base = GRID_START + timedelta(days=day)
        for _ in range(22):
            times.append(base + timedelta(seconds=rng.randrange(0, 86400)))
    # Bin edges, a cluster inside one bin, and two tweets before the grid.
    times += [
        GRID_START + timedelta(minutes=15),
        GRID_START + timedelta(minutes=15, seconds=1),
        GRID_START + timedelta(minutes=29, seconds=59),
        GRID_START + timedelta(hours=5, minutes=3),
        GRID_START - timedelta(minutes=10),
        GRID_START - timedelta(seconds=1),
    ]
    assert len(times) == 50
    rng.shuffle(times)
    raw = []
    for i, t in enumerate(times):
        kind = ["general", "quote", "retweet", "reply"][i % 4]
        text = TEXTS[i % len(TEXTS)]
        tw = {"id": 1000 + i, "id_str": str(1000 + i), "lang": "en", "source": "web", "retweet_count": rng.randrange(50)}
        if i % 7 == 3:
            tw["timestamp_ms"] = str(int(t.timestamp() * 1000) + rng.randrange(1000))
        else:
            tw["created_at"] = twitter_time(t)
        if i % 5 == 0:
            tw["extended_tweet"] = {"full_text": text, "display_text_range": [0, len(text)]}
            tw["text"] = text[:20] + "…"
            tw["truncated"] = True
        elif i % 5 == 1:
            tw["full_text"] = text
        else:
            tw["text"] = text
        media = []
        for _ in range(rng.choice([0, 0, 0, 1, 2])):
            media.append({"type": rng.choice(["photo", "photo", "video", "animated_gif"]), "media_url": "http://x"})
        if media:
            if i % 3 == 0:
                tw["entities"] = {"media": [m for m in media], "hashtags": []}
            else:
                tw["entities"] = {"media": [media[0]], "hashtags": []}
                tw["extended_entities"] = {"media": media}
        else:
            tw["entities"] = {"hashtags": [], "urls": []}
        if i % 6 != 5:
            tw["possibly_sensitive"] = rng.random() < 0.2
        tw["is_quote_status"] = kind == "quote"
        if kind == "quote":
            tw["quoted_status"] = {"id": 1, "text": "Bitcoin original", "user": {"followers_count": 5}}
        elif kind == "retweet":
            tw["retweeted_status"] = {"id": 2, "text": text, "user": {"followers_count": 99}}
        elif kind == "reply":
            tw["in_reply_to_status_id"] = 77 + i
            tw["in_reply_to_status_id_str"] = str(77 + i)
        else:
            tw["in_reply_to_status_id"] = None
        user = {
            "id": 50 + i,
            "screen_name": f"user{i}",
            "favourites_count": rng.randrange(0, 20000),
            "followers_count": rng.randrange(0, 100000),
            "friends_count": rng.randrange(0, 3000),
            "listed_count": rng.randrange(0, 200),
            "verified": rng.random() < 0.15,
            "default_profile": rng.random() < 0.5,
            "default_profile_image": rng.random() < 0.1,
            "location": "somewhere",
        }
        if i % 11 == 4:
            del user["listed_count"]
            del user["verified"]
        tw["user"] = user
        raw.append(tw)
    return raw


def flatten(tw):
    """The documented prune/refactor rules."""
    if "created_at" in tw:
        t = datetime.strptime(tw["created_at"], "%a %b %d %H:%M:%S %z %Y")
        secs, ms = int(t.timestamp()), None
    else:
        ms = int(tw["timestamp_ms"])
        secs = ms // 1000
    media = (tw.get("extended_entities") or {}).get("media")
    if media is None:
        media = (tw.get("entities") or {}).get("media") or []
    kinds = [m.get("type") for m in media]
    text = (tw.get("extended_tweet") or {}).get("full_text") or tw.get("full_text") or tw.get("text") or ""
    nested = any(tw.get(k) is not None for k in ["quoted_status", "retweeted_status", "in_reply_to_status_id", "in_reply_to_status_id_str"])
    user = tw.get("user") or {}
    return {
        "secs": secs,
        "ms": ms,
        "gif_count": kinds.count("animated_gif"),
        "photo_count": kinds.count("photo"),
        "video_count": kinds.count("video"),
        "is_quote_status": bool(tw.get("is_quote_status")) or nested,
        "possibly_sensitive": bool(tw.get("possibly_sensitive", False)),
        "tweet_text": text,
        "favourites_count": user.get("favourites_count", 0),
        "followers_count": user.get("followers_count", 0),
        "friends_count": user.get("friends_count", 0),
        "listed_count": user.get("listed_count", 0),
        "verified": bool(user.get("verified", False)),
        "default_profile": bool(user.get("default_profile", False)),
        "default_profile_image": bool(user.get("default_profile_image", False)),
        "vader_compound": ANALYZER.polarity_scores(text)["compound"],
    }


def rust_float(x):
    """Formats like Rust's `{}` for f64: shortest round-trip digits, no exponent."""
    if x == 0:
        return "-0" if math.copysign(1.0, x) < 0 else "0"
    s = format(Decimal(repr(x)), "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return s


def rfc3339(secs):
    return datetime.fromtimestamp(secs, UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


def main():
    rng = random.Random(20210301)
    raw = make_raw(rng)
    with open(HERE / "tweets_50.jsonl", "w") as f:
        for tw in raw:
            f.write(json.dumps(tw, ensure_ascii=False) + "\n")

    # Candles keyed by bar open time, from the bar before the grid to the last bar.
    price = 48000.0
    candles = []
    t = GRID_START - timedelta(seconds=BIN)
    end = GRID_START + timedelta(days=DAYS)
    while t < end:
        price = price * math.exp(rng.gauss(0, 0.002))
        if t != MISSING_CANDLE:
            candles.append((t, round(price, 2)))
        t += timedelta(seconds=BIN)
    with open(HERE / "candles_50.csv", "w") as f:
        f.write("timestamp,close\n")
        for t, c in candles:
            f.write(f"{t.strftime('%Y-%m-%dT%H:%M:%SZ')},{c!r}\n")

    records = [flatten(tw) for tw in raw]
    expected = sorted(records, key=lambda r: r["secs"] * 1000 + (r["ms"] % 1000 if r["ms"] is not None else 0))
    with open(HERE / "tweets_50_expected.json", "w") as f:
        json.dump(expected, f, indent=1, ensure_ascii=False)
        f.write("\n")

    # Forward-filled closes on the full grid, then per-bin log returns.
    closes = {int(t.timestamp()): c for t, c in candles}
    first = int((GRID_START - timedelta(seconds=BIN)).timestamp())
    grid = [first + k * BIN for k in range(DAYS * 96 + 1)]
    filled = []
    prev = None
    for g in grid:
        prev = closes.get(g, prev)
        filled.append(prev)
    columns = [
        "gif_count", "photo_count", "video_count", "is_quote_status", "possibly_sensitive",
        "favourites_count", "followers_count", "friends_count", "listed_count",
        "verified", "default_profile", "default_profile_image", "vader_compound",
    ]
    out = ["interval_start,log_return,count,vader_compound,gif_count,photo_count,video_count,is_quote_status,"
           "possibly_sensitive,favourites_count,followers_count,friends_count,listed_count,verified,"
           "default_profile,default_profile_image"]
    for k in range(1, len(grid)):
        start = grid[k]
        ret = math.log(filled[k]) - math.log(filled[k - 1])
        inside = [r for r in expected if start <= r["secs"] < start + BIN]
        n = len(inside)
        means = {}
        for c in columns:
            s = 0.0
            for r in inside:
                s += float(r[c])
            means[c] = s / n if n else 0.0
        row = [rfc3339(start), rust_float(ret), str(n), rust_float(means["vader_compound"])]
        row += [rust_float(means[c]) for c in columns[:-1]]
        out.append(",".join(row))
    with open(HERE / "features_50_golden.csv", "w") as f:
        f.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
