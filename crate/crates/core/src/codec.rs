//! Fixed-grid token encoding of monophonic 4/4 melodies.
//!
//! Every beat is split into six uneven ticks placed at the union of the
//! sixteenth-note grid `{0, 1/4, 1/2, 3/4}` and the eighth-triplet grid
//! `{0, 1/3, 2/3}`. A measure therefore becomes exactly 24 tokens: a tick
//! where a note (or rest) starts carries that note's spelled name, every
//! other tick carries the continuation token `__`.
//!
//! The figure this grid comes from draws the tick layout without listing
//! the offsets; `{0, 1/4, 1/3, 1/2, 2/3, 3/4}` is the only six-point set
//! that contains both sub-grids.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{One, Zero};
use thiserror::Error;

/// Position or length measured in quarter-note beats.
pub type Beats = Rational64;

pub const CONTINUATION: &str = "__";
pub const REST: &str = "rest";

pub const TICKS_PER_BEAT: usize = 6;
pub const BEATS_PER_MEASURE: usize = 4;
pub const TOKENS_PER_MEASURE: usize = TICKS_PER_BEAT * BEATS_PER_MEASURE;
/// Tokens per measure on a plain sixteenth-note grid, for comparison.
pub const SIXTEENTH_GRID_TOKENS_PER_MEASURE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("onset {0} does not fall on a grid tick")]
    OffGridOnset(Beats),
    #[error("note ending at {0} does not end on a grid tick")]
    OffGridEnd(Beats),
    #[error("event at {onset} overlaps the preceding event")]
    OverlappingEvents { onset: Beats },
    #[error("span {from}..{to} is not covered by any note or rest")]
    Gap { from: Beats, to: Beats },
    #[error("onset {0} lies outside the measure")]
    OnsetOutOfMeasure(Beats),
    #[error("non-positive duration {0}")]
    NonPositiveDuration(Beats),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("expected {expected} tokens, got {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("sequence starts with a continuation but nothing is held")]
    DanglingContinuation,
    #[error("measure {measure}: {source}")]
    InMeasure {
        measure: usize,
        #[source]
        source: Box<CodecError>,
    },
    #[error("line {line}: {message}")]
    TokenText { line: usize, message: String },
}

impl CodecError {
    fn in_measure(self, measure: usize) -> Self {
        CodecError::InMeasure {
            measure,
            source: Box::new(self),
        }
    }
}

/// The six within-beat tick offsets, in increasing order.
pub fn beat_offsets() -> [Beats; TICKS_PER_BEAT] {
    [
        Beats::zero(),
        Beats::new(1, 4),
        Beats::new(1, 3),
        Beats::new(1, 2),
        Beats::new(2, 3),
        Beats::new(3, 4),
    ]
}

/// Layout of ticks within a measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickGrid {
    ticks_per_beat: usize,
    beats_per_measure: usize,
    beat_offsets: [Beats; TICKS_PER_BEAT],
}

impl Default for TickGrid {
    fn default() -> Self {
        Self::standard()
    }
}

impl TickGrid {
    pub fn standard() -> Self {
        Self {
            ticks_per_beat: TICKS_PER_BEAT,
            beats_per_measure: BEATS_PER_MEASURE,
            beat_offsets: beat_offsets(),
        }
    }

    pub fn ticks_per_beat(&self) -> usize {
        self.ticks_per_beat
    }

    pub fn beats_per_measure(&self) -> usize {
        self.beats_per_measure
    }

    pub fn ticks_per_measure(&self) -> usize {
        self.ticks_per_beat * self.beats_per_measure
    }

    pub fn beat_offsets(&self) -> &[Beats] {
        &self.beat_offsets
    }

    pub fn measure_length(&self) -> Beats {
        Beats::from_integer(self.beats_per_measure as i64)
    }

    /// Position of `tick` measured from the start of the measure.
    pub fn tick_position(&self, tick: usize) -> Beats {
        let beat = (tick / self.ticks_per_beat) as i64;
        Beats::from_integer(beat) + self.beat_offsets[tick % self.ticks_per_beat]
    }

    /// Length of `tick`: distance to the next offset, the last one running
    /// to the next beat.
    pub fn tick_duration(&self, tick: usize) -> Beats {
        let k = tick % self.ticks_per_beat;
        let next = if k + 1 < self.ticks_per_beat {
            self.beat_offsets[k + 1]
        } else {
            Beats::one()
        };
        next - self.beat_offsets[k]
    }

    /// Inverse of [`tick_position`](Self::tick_position) for positions in `[0, measure_length)`.
    pub fn tick_at(&self, position: Beats) -> Option<usize> {
        if position < Beats::zero() || position >= self.measure_length() {
            return None;
        }
        let beat = position.floor();
        let within = position - beat;
        let k = self.beat_offsets.iter().position(|o| *o == within)?;
        Some(beat.to_integer() as usize * self.ticks_per_beat + k)
    }

    /// Whether an absolute position (any number of measures in) lands on a tick.
    pub fn is_on_grid(&self, position: Beats) -> bool {
        let within = position - position.floor();
        self.beat_offsets.contains(&within)
    }
}

/// A pitch spelled with letter, alteration and octave, e.g. `A#4` or `Bb4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpelledPitch {
    pub letter: char,
    /// Semitone alteration: positive sharps, negative flats.
    pub alter: i8,
    pub octave: i8,
}

impl SpelledPitch {
    pub fn new(letter: char, alter: i8, octave: i8) -> Self {
        Self {
            letter,
            alter,
            octave,
        }
    }

    /// MIDI-style key number (C4 = 60).
    pub fn midi(&self) -> i32 {
        let base = match self.letter {
            'C' => 0,
            'D' => 2,
            'E' => 4,
            'F' => 5,
            'G' => 7,
            'A' => 9,
            _ => 11,
        };
        (self.octave as i32 + 1) * 12 + base + self.alter as i32
    }
}

impl fmt::Display for SpelledPitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter)?;
        let mark = if self.alter >= 0 { "#" } else { "b" };
        for _ in 0..self.alter.unsigned_abs() {
            f.write_str(mark)?;
        }
        write!(f, "{}", self.octave)
    }
}

/// Sounding content of an event: a spelled pitch or a rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pitch {
    Rest,
    Note(SpelledPitch),
}

impl Pitch {
    pub fn note(letter: char, alter: i8, octave: i8) -> Self {
        Pitch::Note(SpelledPitch::new(letter, alter, octave))
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pitch::Rest => f.write_str(REST),
            Pitch::Note(p) => p.fmt(f),
        }
    }
}

impl FromStr for Pitch {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || CodecError::UnknownToken(s.to_string());
        if s == REST {
            return Ok(Pitch::Rest);
        }
        let mut chars = s.chars().peekable();
        let letter = chars.next().filter(|c| ('A'..='G').contains(c)).ok_or_else(unknown)?;
        let mut alter: i8 = 0;
        while let Some(&c) = chars.peek() {
            match c {
                '#' if alter >= 0 => alter += 1,
                'b' if alter <= 0 => alter -= 1,
                _ => break,
            }
            chars.next();
            if alter.abs() > 2 {
                return Err(unknown());
            }
        }
        let rest: String = chars.collect();
        let octave: i8 = rest.parse().map_err(|_| unknown())?;
        Ok(Pitch::note(letter, alter, octave))
    }
}

/// One note or rest inside a measure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteEvent {
    pub pitch: Pitch,
    /// Onset within the measure, in beats.
    pub onset: Beats,
    /// Length in beats; may run past the end of the measure.
    pub duration: Beats,
}

impl NoteEvent {
    pub fn new(pitch: Pitch, onset: Beats, duration: Beats) -> Self {
        Self {
            pitch,
            onset,
            duration,
        }
    }

    pub fn end(&self) -> Beats {
        self.onset + self.duration
    }
}

/// Tokens for one measure. Ticks before the first onset are emitted as
/// continuations, which is how a note held over the barline is written.
pub fn encode_measure(events: &[NoteEvent], grid: &TickGrid) -> Result<Vec<String>, CodecError> {
    let mut tokens = vec![CONTINUATION.to_string(); grid.ticks_per_measure()];
    let mut cursor: Option<Beats> = None;
    for ev in events {
        if ev.duration <= Beats::zero() {
            return Err(CodecError::NonPositiveDuration(ev.duration));
        }
        if ev.onset < Beats::zero() || ev.onset >= grid.measure_length() {
            return Err(CodecError::OnsetOutOfMeasure(ev.onset));
        }
        let tick = grid.tick_at(ev.onset).ok_or(CodecError::OffGridOnset(ev.onset))?;
        if !grid.is_on_grid(ev.end()) {
            return Err(CodecError::OffGridEnd(ev.end()));
        }
        if let Some(prev_end) = cursor {
            if ev.onset < prev_end {
                return Err(CodecError::OverlappingEvents { onset: ev.onset });
            }
            if ev.onset > prev_end {
                return Err(CodecError::Gap {
                    from: prev_end,
                    to: ev.onset,
                });
            }
        }
        tokens[tick] = ev.pitch.to_string();
        cursor = Some(ev.end());
    }
    if let Some(end) = cursor {
        if end < grid.measure_length() {
            return Err(CodecError::Gap {
                from: end,
                to: grid.measure_length(),
            });
        }
    }
    Ok(tokens)
}

/// Result of decoding a single measure in isolation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedMeasure {
    /// Length of the leading continuation run, i.e. how long a note from a
    /// previous measure keeps sounding here.
    pub carry_in: Beats,
    pub events: Vec<NoteEvent>,
}

pub fn decode_measure<S: AsRef<str>>(tokens: &[S], grid: &TickGrid) -> Result<DecodedMeasure, CodecError> {
    let expected = grid.ticks_per_measure();
    if tokens.len() != expected {
        return Err(CodecError::WrongLength {
            expected,
            found: tokens.len(),
        });
    }
    let mut carry_in = Beats::zero();
    let mut events: Vec<NoteEvent> = Vec::new();
    for (tick, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        let len = grid.tick_duration(tick);
        if tok == CONTINUATION {
            match events.last_mut() {
                Some(ev) => ev.duration += len,
                None => carry_in += len,
            }
        } else {
            let pitch: Pitch = tok.parse()?;
            events.push(NoteEvent::new(pitch, grid.tick_position(tick), len));
        }
    }
    Ok(DecodedMeasure { carry_in, events })
}

/// Concatenate per-measure encodings, checking that notes held across
/// barlines line up with the following measure's first onset.
pub fn encode_score(score: &[Vec<NoteEvent>], grid: &TickGrid) -> Result<Vec<String>, CodecError> {
    let mlen = grid.measure_length();
    let mut out = Vec::with_capacity(score.len() * grid.ticks_per_measure());
    // Portion of the current measure still covered by a note from earlier.
    let mut held = Beats::zero();
    for (m, events) in score.iter().enumerate() {
        let first_onset = events.first().map(|e| e.onset).unwrap_or(mlen);
        if held > Beats::zero() && first_onset < held.min(mlen) {
            return Err(CodecError::OverlappingEvents { onset: first_onset }.in_measure(m));
        }
        if first_onset > held && (held < mlen) {
            let to = first_onset.min(mlen);
            return Err(CodecError::Gap { from: held, to }.in_measure(m));
        }
        let tokens = encode_measure(events, grid).map_err(|e| e.in_measure(m))?;
        out.extend(tokens);
        held = match events.last() {
            Some(ev) => ev.end() - mlen,
            None => held - mlen,
        };
    }
    Ok(out)
}

/// Inverse of [`encode_score`]. Leading continuations of a measure extend
/// the last event of the previous measures.
pub fn decode_score<S: AsRef<str>>(tokens: &[S], grid: &TickGrid) -> Result<Vec<Vec<NoteEvent>>, CodecError> {
    let per = grid.ticks_per_measure();
    if !tokens.len().is_multiple_of(per) {
        return Err(CodecError::WrongLength {
            expected: (tokens.len() / per + 1) * per,
            found: tokens.len(),
        });
    }
    let mut score: Vec<Vec<NoteEvent>> = Vec::with_capacity(tokens.len() / per);
    let mut last: Option<(usize, usize)> = None;
    for (m, chunk) in tokens.chunks(per).enumerate() {
        let decoded = decode_measure(chunk, grid).map_err(|e| e.in_measure(m))?;
        if decoded.carry_in > Beats::zero() {
            let (lm, li) = last.ok_or_else(|| CodecError::DanglingContinuation.in_measure(m))?;
            score[lm][li].duration += decoded.carry_in;
        }
        if !decoded.events.is_empty() {
            last = Some((m, decoded.events.len() - 1));
        }
        score.push(decoded.events);
    }
    Ok(score)
}

/// Bidirectional token-string <-> index map. `__` is index 0, `rest` index 1,
/// every other token follows in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const CONTINUATION_ID: usize = 0;
    pub const REST_ID: usize = 1;

    pub fn build<I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen: Vec<String> = corpus
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| s != CONTINUATION && s != REST)
            .collect();
        seen.sort();
        seen.dedup();
        let mut tokens = vec![CONTINUATION.to_string(), REST.to_string()];
        tokens.extend(seen);
        Self::from_tokens_unchecked(tokens)
    }

    fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Load from an ordered token list (as stored in a vocabulary file).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, CodecError> {
        if tokens.first().map(String::as_str) != Some(CONTINUATION) || tokens.get(1).map(String::as_str) != Some(REST) {
            return Err(CodecError::TokenText {
                line: 1,
                message: format!("vocabulary must start with {CONTINUATION:?} and {REST:?}"),
            });
        }
        let vocab = Self::from_tokens_unchecked(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(CodecError::TokenText {
                line: 0,
                message: "duplicate token in vocabulary".into(),
            });
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>, CodecError> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).ok_or_else(|| CodecError::UnknownToken(t.as_ref().to_string())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>, CodecError> {
        ids.iter()
            .map(|&i| {
                self.token(i)
                    .map(str::to_string)
                    .ok_or_else(|| CodecError::UnknownToken(format!("#{i}")))
            })
            .collect()
    }

    /// One token per line; line number is the index.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        Self::from_tokens(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
    }
}

/// Measures of music as token indices, 24 per measure.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Result<Self, CodecError> {
        if !tokens.len().is_multiple_of(TOKENS_PER_MEASURE) {
            return Err(CodecError::WrongLength {
                expected: tokens.len().div_ceil(TOKENS_PER_MEASURE) * TOKENS_PER_MEASURE,
                found: tokens.len(),
            });
        }
        Ok(Self { tokens })
    }

    pub fn from_strings<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Result<Self, CodecError> {
        Self::new(vocab.encode(tokens)?)
    }

    pub fn from_measures(measures: &[Vec<usize>]) -> Result<Self, CodecError> {
        for (m, meas) in measures.iter().enumerate() {
            if meas.len() != TOKENS_PER_MEASURE {
                return Err(CodecError::WrongLength {
                    expected: TOKENS_PER_MEASURE,
                    found: meas.len(),
                }
                .in_measure(m));
            }
        }
        Ok(Self {
            tokens: measures.concat(),
        })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn measures(&self) -> usize {
        self.tokens.len() / TOKENS_PER_MEASURE
    }

    pub fn measure(&self, m: usize) -> &[usize] {
        &self.tokens[m * TOKENS_PER_MEASURE..(m + 1) * TOKENS_PER_MEASURE]
    }

    pub fn iter_measures(&self) -> impl Iterator<Item = &[usize]> {
        self.tokens.chunks(TOKENS_PER_MEASURE)
    }

    /// Measures `start..start + count` as a new sequence.
    pub fn slice(&self, start: usize, count: usize) -> TokenSequence {
        TokenSequence {
            tokens: self.tokens[start * TOKENS_PER_MEASURE..(start + count) * TOKENS_PER_MEASURE].to_vec(),
        }
    }

    pub fn to_strings(&self, vocab: &Vocabulary) -> Result<Vec<String>, CodecError> {
        vocab.decode(&self.tokens)
    }
}

/// Parse the token text format: one measure per line, 24 whitespace
/// separated tokens, `#` lines are comments.
pub fn parse_token_text(text: &str) -> Result<Vec<Vec<String>>, CodecError> {
    let mut measures = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if toks.len() != TOKENS_PER_MEASURE {
            return Err(CodecError::TokenText {
                line: n + 1,
                message: format!("expected {TOKENS_PER_MEASURE} tokens, found {}", toks.len()),
            });
        }
        measures.push(toks);
    }
    Ok(measures)
}

pub fn write_token_text<S: AsRef<str>>(measures: &[Vec<S>]) -> String {
    let mut out = String::new();
    for m in measures {
        let line: Vec<&str> = m.iter().map(AsRef::as_ref).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
