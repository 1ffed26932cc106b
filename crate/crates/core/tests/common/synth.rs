//! Synthetic scores and corpora for property and acceptance tests.

use inpaint_core::codec::{encode_measure, Beats, NoteEvent, Pitch, TickGrid, Vocabulary};
use inpaint_core::nn::RngStream;

const LETTERS: [char; 7] = ['C', 'D', 'E', 'F', 'G', 'A', 'B'];

pub fn random_pitch(rng: &mut RngStream) -> Pitch {
    if rng.below(6) == 0 {
        return Pitch::Rest;
    }
    let alter = [0, 0, 0, 1, -1][rng.below(5)];
    Pitch::note(LETTERS[rng.below(7)], alter, 3 + rng.below(3) as i8)
}

/// Random on-grid score of `measures` measures covering the whole span.
/// Notes may run across one or more barlines; onsets mix sixteenth and
/// triplet positions.
pub fn random_score(measures: usize, rng: &mut RngStream) -> Vec<Vec<NoteEvent>> {
    let grid = TickGrid::standard();
    let ticks_per_measure = grid.ticks_per_measure();
    let total_ticks = measures * ticks_per_measure;
    let abs = |tick: usize| grid.measure_length() * (tick / ticks_per_measure) as i64 + grid.tick_position(tick % ticks_per_measure);
    let mut score: Vec<Vec<NoteEvent>> = vec![Vec::new(); measures];
    let mut tick = 0;
    while tick < total_ticks {
        let span = match rng.below(10) {
            0 => 1 + rng.below(2 * ticks_per_measure),
            _ => 1 + rng.below(6),
        };
        let end = (tick + span).min(total_ticks);
        let m = tick / ticks_per_measure;
        let onset = grid.tick_position(tick % ticks_per_measure);
        let duration = if end == total_ticks {
            grid.measure_length() * measures as i64 - abs(tick)
        } else {
            abs(end) - abs(tick)
        };
        score[m].push(NoteEvent::new(random_pitch(rng), onset, duration));
        tick = end;
    }
    score
}

fn b(n: i64, d: i64) -> Beats {
    Beats::new(n, d)
}

/// One beat of a folk-like rhythm, as durations in beats.
fn beat_rhythm(rng: &mut RngStream) -> Vec<Beats> {
    match rng.below(7) {
        0 | 1 => vec![b(1, 1)],
        2 | 3 => vec![b(1, 2), b(1, 2)],
        4 => vec![b(1, 4); 4],
        5 => vec![b(1, 3); 3],
        _ => vec![b(3, 4), b(1, 4)],
    }
}

/// A measure of stepwise melody around a scale, encoded to tokens.
pub fn melodic_measure(rng: &mut RngStream) -> Vec<String> {
    let grid = TickGrid::standard();
    let mut events = Vec::new();
    let mut pos = Beats::from_integer(0);
    let mut degree = rng.below(7) as i64 + 7;
    for _ in 0..4 {
        for d in beat_rhythm(rng) {
            degree = (degree + [-2, -1, -1, 0, 1, 1, 2][rng.below(7)]).clamp(3, 13);
            let pitch = if rng.below(12) == 0 {
                Pitch::Rest
            } else {
                Pitch::note(LETTERS[(degree % 7) as usize], 0, 3 + (degree / 7) as i8)
            };
            events.push(NoteEvent::new(pitch, pos, d));
            pos += d;
        }
    }
    encode_measure(&events, &grid).expect("generated measure is on the grid")
}

pub fn melodic_measures(count: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = RngStream::new(seed);
    let mut out: Vec<Vec<String>> = Vec::with_capacity(count);
    while out.len() < count {
        let m = melodic_measure(&mut rng);
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

pub fn encode_all(vocab: &Vocabulary, measures: &[Vec<String>]) -> Vec<Vec<usize>> {
    measures.iter().map(|m| vocab.encode(m).unwrap()).collect()
}

/// Windows of 16 measures: the first half repeats theme `A`, the second
/// half repeats theme `B ≠ A`, both drawn from a pool of `pool` measures.
/// A gap can only be filled exactly when both halves are visible.
pub struct TwoThemeCorpus {
    pub vocab: Vocabulary,
    pub pool: Vec<Vec<usize>>,
    pub train: Vec<Vec<Vec<usize>>>,
    pub test: Vec<Vec<Vec<usize>>>,
}

pub fn two_theme_corpus(pool: usize, train: usize, test: usize, seed: u64) -> TwoThemeCorpus {
    let themes = melodic_measures(pool, seed);
    let vocab = Vocabulary::build(themes.iter().flatten());
    let ids = encode_all(&vocab, &themes);
    let mut rng = RngStream::new(seed).fork(1);
    let window = |rng: &mut RngStream| {
        let a = rng.below(pool);
        let mut c = rng.below(pool - 1);
        if c >= a {
            c += 1;
        }
        let mut w = vec![ids[a].clone(); 8];
        w.extend(vec![ids[c].clone(); 8]);
        w
    };
    let train_w = (0..train).map(|_| window(&mut rng)).collect();
    let test_w = (0..test).map(|_| window(&mut rng)).collect();
    TwoThemeCorpus {
        vocab,
        pool: ids,
        train: train_w,
        test: test_w,
    }
}

/// Windows of `len` measures from a random walk on the ring `0..pool.len()`:
/// each next measure is the ring successor with probability `follow`,
/// otherwise uniform over the pool. Predictability decays with distance
/// from the nearest observed measure.
pub fn ring_walk_windows(pool: &[Vec<usize>], count: usize, len: usize, follow: f64, rng: &mut RngStream) -> Vec<Vec<Vec<usize>>> {
    (0..count)
        .map(|_| {
            let mut at = rng.below(pool.len());
            (0..len)
                .map(|_| {
                    let m = pool[at].clone();
                    at = if rng.uniform::<f64>(0.0, 1.0) < follow { (at + 1) % pool.len() } else { rng.below(pool.len()) };
                    m
                })
                .collect()
        })
        .collect()
}
