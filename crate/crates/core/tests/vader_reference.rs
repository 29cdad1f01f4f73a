//! Scores from vaderSentiment 3.3.2 (with output rounding disabled) on a
//! fixed set of crypto-flavoured texts.

use serde::Deserialize;
use volcast::ingest::VaderLexicon;

#[derive(Deserialize)]
struct Case {
    text: String,
    neg: f64,
    neu: f64,
    pos: f64,
    compound: f64,
}

#[test]
fn matches_reference_scores() {
    let cases: Vec<Case> = serde_json::from_str(include_str!("fixtures/vader_reference.json")).unwrap();
    assert!(cases.len() >= 20);
    let lex = VaderLexicon::builtin();
    for c in &cases {
        let s = lex.polarity_scores(&c.text);
        assert!((s.compound - c.compound).abs() < 1e-12, "{:?}: compound {} vs {}", c.text, s.compound, c.compound);
        assert!((s.positive - c.pos).abs() < 1e-12, "{:?}: pos", c.text);
        assert!((s.negative - c.neg).abs() < 1e-12, "{:?}: neg", c.text);
        if c.text.is_empty() {
            // The reference reports an all-zero split for empty input; here
            // empty text counts as fully neutral.
            assert_eq!(s.neutral, 1.0);
        } else {
            assert!((s.neutral - c.neu).abs() < 1e-12, "{:?}: neu", c.text);
        }
    }
}
