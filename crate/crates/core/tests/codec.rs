mod common;

use std::path::Path;

use common::synth;
use inpaint_core::codec::{
    beat_offsets, decode_score, encode_measure, encode_score, parse_token_text, write_token_text, Beats, NoteEvent, Pitch,
    TickGrid, Vocabulary, SIXTEENTH_GRID_TOKENS_PER_MEASURE, TOKENS_PER_MEASURE,
};
use inpaint_core::corpus::{ingest, load_corpus, IngestOptions};
use inpaint_core::nn::RngStream;
use proptest::prelude::*;

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/abc"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_scores_round_trip(seed in any::<u64>(), measures in 0usize..24) {
        let g = TickGrid::standard();
        let score = synth::random_score(measures, &mut RngStream::new(seed));
        let tokens = encode_score(&score, &g).unwrap();
        prop_assert_eq!(tokens.len(), TOKENS_PER_MEASURE * measures);
        prop_assert_eq!(decode_score(&tokens, &g).unwrap(), score);
    }

    #[test]
    fn vocabulary_is_a_dense_bijection(tokens in proptest::collection::vec("[A-G][#b]?[2-6]", 0..40)) {
        let v = Vocabulary::build(tokens.iter());
        prop_assert_eq!(v.token(0), Some("__"));
        prop_assert_eq!(v.token(1), Some("rest"));
        for (i, t) in v.tokens().iter().enumerate() {
            prop_assert_eq!(v.id(t), Some(i));
        }
        for t in &tokens {
            prop_assert!(v.id(t).is_some());
        }
        let again = Vocabulary::from_text(&v.to_text()).unwrap();
        prop_assert_eq!(again, v);
    }

    #[test]
    fn token_text_round_trips(seed in any::<u64>(), measures in 1usize..10) {
        let g = TickGrid::standard();
        let score = synth::random_score(measures, &mut RngStream::new(seed));
        let tokens = encode_score(&score, &g).unwrap();
        let grid: Vec<Vec<String>> = tokens.chunks(TOKENS_PER_MEASURE).map(<[String]>::to_vec).collect();
        prop_assert_eq!(parse_token_text(&write_token_text(&grid)).unwrap(), grid);
    }
}

#[test]
fn every_tick_aligned_span_round_trips() {
    let g = TickGrid::standard();
    let per = g.ticks_per_measure();
    let pos = |t: usize| if t == per { g.measure_length() } else { g.tick_position(t) };
    for start in 0..per {
        for end in start + 1..=per {
            let mut events = Vec::new();
            if start > 0 {
                events.push(NoteEvent::new(Pitch::Rest, Beats::from_integer(0), pos(start)));
            }
            events.push(NoteEvent::new(Pitch::note('D', 0, 5), pos(start), pos(end) - pos(start)));
            if end < per {
                events.push(NoteEvent::new(Pitch::Rest, pos(end), g.measure_length() - pos(end)));
            }
            let toks = encode_measure(&events, &g).unwrap();
            assert_eq!(decode_score(&toks, &g).unwrap(), vec![events], "span {start}..{end}");
        }
    }
}

#[test]
fn sixteenth_and_triplet_eighth_both_round_trip() {
    let g = TickGrid::standard();
    let b = |n, d| Beats::new(n, d);
    let events = vec![
        NoteEvent::new(Pitch::note('C', 0, 4), b(0, 1), b(1, 4)),
        NoteEvent::new(Pitch::Rest, b(1, 4), b(3, 4)),
        NoteEvent::new(Pitch::note('A', 1, 4), b(1, 1), b(1, 3)),
        NoteEvent::new(Pitch::note('B', -1, 4), b(4, 3), b(1, 3)),
        NoteEvent::new(Pitch::note('C', 0, 5), b(5, 3), b(7, 3)),
    ];
    let toks = encode_measure(&events, &g).unwrap();
    assert_eq!(decode_score(&toks, &g).unwrap(), vec![events]);
    assert_ne!(toks[8], toks[10], "A#4 and Bb4 keep separate tokens");
}

#[test]
fn grid_constants() {
    assert_eq!(beat_offsets().len(), 6);
    assert_eq!(TOKENS_PER_MEASURE, 24);
    assert_eq!(16 * TOKENS_PER_MEASURE, 384);
    assert_eq!(2 * TOKENS_PER_MEASURE, 3 * SIXTEENTH_GRID_TOKENS_PER_MEASURE);
}

#[test]
fn ingested_fixture_windows_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = ingest(fixtures(), dir.path(), IngestOptions::default()).unwrap();
    assert!(manifest.accepted >= 10);
    let corpus = load_corpus(dir.path()).unwrap();
    let g = TickGrid::standard();
    for w in corpus.train.iter().chain(&corpus.valid).chain(&corpus.test) {
        let tokens = corpus.vocab.decode(&w.iter().flatten().copied().collect::<Vec<_>>()).unwrap();
        if tokens[0] == "__" {
            continue;
        }
        let score = decode_score(&tokens, &g).unwrap();
        assert_eq!(encode_score(&score, &g).unwrap(), tokens);
    }
}
