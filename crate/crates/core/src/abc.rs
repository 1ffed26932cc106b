//! Parser for the subset of ABC notation used to build training corpora.
//!
//! Supported: header fields `X T M L K` (other header fields are skipped),
//! notes `A-G a-g` with octave marks `,` `'`, accidentals `^ ^^ _ __ =`,
//! length multipliers and divisors (`A2`, `A/2`, `A3/2`, `A//`), rests `z`,
//! barlines, `(3` triplets, same-pitch ties `-`, and `|: :|` repeats which are
//! unrolled once. Any other construct rejects the whole tune rather than
//! being approximated.

use std::collections::HashMap;
use std::fmt;

use num_rational::Rational64;
use num_traits::Zero;
use serde::Serialize;

use crate::codec::{Beats, NoteEvent, Pitch, SpelledPitch, TickGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Meter {
    pub numerator: i64,
    pub denominator: i64,
}

impl Meter {
    pub fn common() -> Self {
        Self {
            numerator: 4,
            denominator: 4,
        }
    }

    pub fn as_ratio(&self) -> Rational64 {
        Rational64::new(self.numerator, self.denominator)
    }

    /// Measure length in quarter-note beats.
    pub fn measure_beats(&self) -> Beats {
        self.as_ratio() * 4
    }
}

impl fmt::Display for Meter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbcTune {
    pub reference: Option<u32>,
    pub title: String,
    pub meter: Meter,
    /// Default note length as a fraction of a whole note.
    pub unit_length: Rational64,
    pub key: String,
    /// Fully resolved events per measure, onsets relative to the measure.
    pub measures: Vec<Vec<NoteEvent>>,
}

impl AbcTune {
    pub fn events(&self) -> impl Iterator<Item = &NoteEvent> {
        self.measures.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    UnsupportedConstruct,
    SyntaxError,
    IrregularMeasure,
}

/// Structured parse rejection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{code:?} at {line}:{column}: {message}")]
pub struct AbcRejection {
    pub code: RejectCode,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Meter,
    Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVerdict {
    Accept,
    Reject(FilterReason),
}

/// Keep only 4/4 tunes whose every onset and note end lands on the tick grid
/// (sixteenths or eighth-note triplets and their multiples).
pub fn filter_melody(tune: &AbcTune, grid: &TickGrid) -> FilterVerdict {
    if tune.meter != Meter::common() {
        return FilterVerdict::Reject(FilterReason::Meter);
    }
    let mlen = grid.measure_length();
    for (m, events) in tune.measures.iter().enumerate() {
        let base = mlen * m as i64;
        for ev in events {
            if !grid.is_on_grid(base + ev.onset) || !grid.is_on_grid(base + ev.end()) {
                return FilterVerdict::Reject(FilterReason::Duration);
            }
        }
    }
    FilterVerdict::Accept
}

/// Split a multi-tune file at `X:` lines.
pub fn split_tunes(text: &str) -> Vec<String> {
    let mut tunes = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("X:") {
            if let Some(t) = current.take() {
                tunes.push(t);
            }
            current = Some(String::new());
        }
        if let Some(t) = current.as_mut() {
            t.push_str(line);
            t.push('\n');
        }
    }
    if let Some(t) = current {
        tunes.push(t);
    }
    if tunes.is_empty() && !text.trim().is_empty() {
        tunes.push(text.to_string());
    }
    tunes
}

pub fn parse_abc(text: &str) -> Result<AbcTune, AbcRejection> {
    Parser::new(text).parse()
}

fn reject(code: RejectCode, line: usize, column: usize, message: impl Into<String>) -> AbcRejection {
    AbcRejection {
        code,
        line,
        column,
        message: message.into(),
    }
}

/// Sharps (positive) or flats (negative) in a key signature field.
fn key_signature(field: &str) -> Option<i32> {
    let s: String = field.split('%').next()?.split_whitespace().collect::<Vec<_>>().join("");
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Some(0);
    }
    let mut chars = s.chars();
    let tonic = chars.next()?.to_ascii_uppercase();
    let mut rest: String = chars.collect();
    let mut alter = 0;
    if rest.starts_with('#') {
        alter = 1;
        rest.remove(0);
    } else if rest.starts_with('b') {
        alter = -1;
        rest.remove(0);
    }
    let major_sharps = match (tonic, alter) {
        ('C', 0) => 0,
        ('G', 0) => 1,
        ('D', 0) => 2,
        ('A', 0) => 3,
        ('E', 0) => 4,
        ('B', 0) => 5,
        ('F', 1) => 6,
        ('C', 1) => 7,
        ('F', 0) => -1,
        ('B', -1) => -2,
        ('E', -1) => -3,
        ('A', -1) => -4,
        ('D', -1) => -5,
        ('G', -1) => -6,
        ('C', -1) => -7,
        ('G', 1) => 8,
        ('D', 1) => 9,
        ('A', 1) => 10,
        ('E', 1) => 11,
        ('B', 1) => 12,
        ('F', -1) => -8,
        _ => return None,
    };
    let mode = rest.to_ascii_lowercase();
    let shift = match mode.get(..3).unwrap_or(mode.as_str()) {
        "" | "maj" | "ion" => 0,
        "m" | "min" | "aeo" => -3,
        "mix" => -1,
        "dor" => -2,
        "phr" => -4,
        "lyd" => 1,
        "loc" => -5,
        _ => return None,
    };
    let n = major_sharps + shift;
    (-7..=7).contains(&n).then_some(n)
}

fn key_alterations(sharps: i32) -> HashMap<char, i8> {
    const SHARP_ORDER: [char; 7] = ['F', 'C', 'G', 'D', 'A', 'E', 'B'];
    let mut map = HashMap::new();
    if sharps > 0 {
        for &l in SHARP_ORDER.iter().take(sharps as usize) {
            map.insert(l, 1);
        }
    } else {
        for &l in SHARP_ORDER.iter().rev().take((-sharps) as usize) {
            map.insert(l, -1);
        }
    }
    map
}

fn parse_fraction(s: &str) -> Option<Rational64> {
    let (n, d) = s.trim().split_once('/')?;
    let n: i64 = n.trim().parse().ok()?;
    let d: i64 = d.trim().parse().ok()?;
    (1..=64).contains(&n).then_some(())?;
    (1..=64).contains(&d).then(|| Rational64::new(n, d))
}

#[derive(Debug, Clone)]
struct RawNote {
    pitch: Pitch,
    /// Length in whole notes.
    length: Rational64,
    tie_next: bool,
    line: usize,
    column: usize,
}

#[derive(Debug, Default, Clone)]
struct Bar {
    notes: Vec<RawNote>,
}

impl Bar {
    fn length(&self) -> Rational64 {
        self.notes.iter().map(|n| n.length).sum()
    }
}

struct Parser<'a> {
    text: &'a str,
    reference: Option<u32>,
    title: Option<String>,
    meter: Option<Meter>,
    unit_length: Option<Rational64>,
    key: Option<String>,
    key_sig: HashMap<char, i8>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            reference: None,
            title: None,
            meter: None,
            unit_length: None,
            key: None,
            key_sig: HashMap::new(),
        }
    }

    fn parse(mut self) -> Result<AbcTune, AbcRejection> {
        let lines: Vec<&str> = self.text.lines().collect();
        let mut i = 0;
        // Header: field lines up to and including K:.
        while i < lines.len() {
            let raw = lines[i];
            let line = raw.split('%').next().unwrap_or("").trim();
            i += 1;
            if line.is_empty() {
                continue;
            }
            let Some((field, value)) = header_field(line) else {
                return Err(reject(RejectCode::SyntaxError, i, 1, "body before K: header field"));
            };
            let value = value.trim();
            match field {
                'X' => self.reference = value.parse().ok(),
                'T' => {
                    if self.title.is_none() {
                        self.title = Some(value.to_string());
                    }
                }
                'M' => {
                    self.meter = Some(match value {
                        "C" => Meter::common(),
                        "C|" => Meter {
                            numerator: 2,
                            denominator: 2,
                        },
                        _ => {
                            let (n, d) = value
                                .split_once('/')
                                .and_then(|(n, d)| Some((n.trim().parse().ok()?, d.trim().parse().ok()?)))
                                .filter(|&(n, d): &(i64, i64)| (1..=64).contains(&n) && (1..=64).contains(&d))
                                .ok_or_else(|| reject(RejectCode::UnsupportedConstruct, i, 1, format!("meter {value:?}")))?;
                            Meter {
                                numerator: n,
                                denominator: d,
                            }
                        }
                    })
                }
                'L' => {
                    self.unit_length = Some(
                        parse_fraction(value)
                            .ok_or_else(|| reject(RejectCode::SyntaxError, i, 1, format!("unit length {value:?}")))?,
                    )
                }
                'K' => {
                    let sharps = key_signature(value)
                        .ok_or_else(|| reject(RejectCode::UnsupportedConstruct, i, 1, format!("key {value:?}")))?;
                    self.key_sig = key_alterations(sharps);
                    self.key = Some(value.to_string());
                    break;
                }
                _ => {}
            }
        }
        if self.key.is_none() {
            return Err(reject(RejectCode::SyntaxError, lines.len().max(1), 1, "missing K: field"));
        }
        let meter = self.meter.unwrap_or(Meter::common());
        if self.unit_length.is_none() {
            let l = if meter.as_ratio() < Rational64::new(3, 4) { 16 } else { 8 };
            self.unit_length = Some(Rational64::new(1, l));
        }

        let bars = self.parse_body(&lines, i)?;
        let measures = assemble_measures(bars, meter)?;
        Ok(AbcTune {
            reference: self.reference,
            title: self.title.unwrap_or_default(),
            meter,
            unit_length: self.unit_length.unwrap_or(Rational64::new(1, 8)),
            key: self.key.unwrap_or_default(),
            measures,
        })
    }

    fn parse_body(&mut self, lines: &[&str], start: usize) -> Result<Vec<Bar>, AbcRejection> {
        let mut bars: Vec<Bar> = Vec::new();
        let mut current = Bar::default();
        let mut repeat_start = 0usize;
        let mut accidentals: HashMap<(char, i8), i8> = HashMap::new();
        let mut triplet_left = 0usize;

        for (offset, raw) in lines[start..].iter().enumerate() {
            let ln = start + offset + 1;
            let line = raw.split('%').next().unwrap_or("");
            if line.trim().is_empty() {
                if !bars.is_empty() || !current.notes.is_empty() {
                    break;
                }
                continue;
            }
            if let Some((field, value)) = header_field(line.trim()) {
                match field {
                    'L' => {
                        self.unit_length = Some(
                            parse_fraction(value)
                                .ok_or_else(|| reject(RejectCode::SyntaxError, ln, 1, "unit length"))?,
                        );
                    }
                    'M' | 'K' | 'V' | 'P' => {
                        return Err(reject(
                            RejectCode::UnsupportedConstruct,
                            ln,
                            1,
                            format!("{field}: field inside the tune body"),
                        ))
                    }
                    _ => {}
                }
                continue;
            }
            let chars: Vec<char> = line.chars().collect();
            let mut j = 0;
            while j < chars.len() {
                let col = j + 1;
                let c = chars[j];
                let unsupported = |what: &str| reject(RejectCode::UnsupportedConstruct, ln, col, what.to_string());
                match c {
                    ' ' | '\t' | '\\' => j += 1,
                    '|' | ':' | '[' if is_bar_start(&chars, j) => {
                        let (token, next) = read_bar(&chars, j);
                        if chars.get(next).is_some_and(|c| c.is_ascii_digit()) {
                            return Err(unsupported("alternate ending"));
                        }
                        j = next;
                        if triplet_left > 0 {
                            return Err(reject(RejectCode::SyntaxError, ln, col, "triplet interrupted by barline"));
                        }
                        if !current.notes.is_empty() {
                            bars.push(std::mem::take(&mut current));
                        }
                        accidentals.clear();
                        let ends = token.starts_with(':');
                        let starts = token.ends_with(':');
                        if ends {
                            let repeated: Vec<Bar> = bars[repeat_start..].to_vec();
                            bars.extend(repeated);
                            repeat_start = bars.len();
                        }
                        if starts || token.contains("||") || token.contains(']') {
                            repeat_start = bars.len();
                        }
                    }
                    '[' => {
                        return Err(unsupported(match chars.get(j + 1) {
                            Some(c) if c.is_ascii_digit() => "alternate ending",
                            Some(c) if c.is_ascii_alphabetic() && chars.get(j + 2) == Some(&':') => "inline field",
                            _ => "chord",
                        }))
                    }
                    '(' => match chars.get(j + 1) {
                        Some('3') if !chars.get(j + 2).is_some_and(|c| *c == ':') => {
                            if triplet_left > 0 {
                                return Err(unsupported("nested tuplet"));
                            }
                            triplet_left = 3;
                            j += 2;
                        }
                        Some(d) if d.is_ascii_digit() => return Err(unsupported("tuplet other than (3")),
                        _ => return Err(unsupported("slur")),
                    },
                    '-' => {
                        let last = current
                            .notes
                            .last_mut()
                            .or_else(|| bars.last_mut().and_then(|b| b.notes.last_mut()))
                            .ok_or_else(|| reject(RejectCode::SyntaxError, ln, col, "tie without a note"))?;
                        if last.pitch == Pitch::Rest {
                            return Err(unsupported("tie on a rest"));
                        }
                        last.tie_next = true;
                        j += 1;
                    }
                    '^' | '_' | '=' | 'A'..='G' | 'a'..='g' | 'z' => {
                        let (pitch, mut length, next) =
                            self.read_note(&chars, j, &mut accidentals).map_err(|m| reject(RejectCode::SyntaxError, ln, col, m))?;
                        j = next;
                        if triplet_left > 0 {
                            length *= Rational64::new(2, 3);
                            triplet_left -= 1;
                        }
                        current.notes.push(RawNote {
                            pitch,
                            length,
                            tie_next: false,
                            line: ln,
                            column: col,
                        });
                    }
                    '"' => return Err(unsupported("annotation or chord symbol")),
                    '{' => return Err(unsupported("grace notes")),
                    '!' | '+' | '~' | '.' | 'H'..='W' | 'h'..='w' => return Err(unsupported("decoration")),
                    '>' | '<' => return Err(unsupported("broken rhythm")),
                    '&' => return Err(unsupported("voice overlay")),
                    'x' | 'Z' | 'X' | 'y' => return Err(unsupported("spacer or multi-measure rest")),
                    ')' => return Err(unsupported("slur")),
                    _ => {
                        return Err(reject(RejectCode::SyntaxError, ln, col, format!("unexpected character {c:?}")));
                    }
                }
            }
        }
        if triplet_left > 0 {
            return Err(reject(RejectCode::SyntaxError, lines.len(), 1, "unterminated triplet"));
        }
        if !current.notes.is_empty() {
            bars.push(current);
        }
        Ok(bars)
    }

    fn read_note(
        &self,
        chars: &[char],
        mut j: usize,
        accidentals: &mut HashMap<(char, i8), i8>,
    ) -> Result<(Pitch, Rational64, usize), String> {
        let mut explicit: Option<i8> = None;
        while let Some(&c) = chars.get(j) {
            let step = match c {
                '^' => 1,
                '_' => -1,
                '=' => 0,
                _ => break,
            };
            explicit = Some(match explicit {
                None => step,
                Some(a) if step != 0 && a.signum() == step && a.abs() < 2 => a + step,
                _ => return Err("malformed accidental".into()),
            });
            j += 1;
        }
        let letter = *chars.get(j).ok_or("accidental without a note")?;
        j += 1;
        let pitch = if letter == 'z' {
            if explicit.is_some() {
                return Err("accidental on a rest".into());
            }
            Pitch::Rest
        } else if letter.is_ascii_alphabetic() && "ABCDEFGabcdefg".contains(letter) {
            let mut octave: i8 = if letter.is_ascii_uppercase() { 4 } else { 5 };
            while let Some(&c) = chars.get(j) {
                match c {
                    ',' => octave -= 1,
                    '\'' => octave += 1,
                    _ => break,
                }
                j += 1;
            }
            let upper = letter.to_ascii_uppercase();
            let alter = match explicit {
                Some(a) => {
                    accidentals.insert((upper, octave), a);
                    a
                }
                None => accidentals
                    .get(&(upper, octave))
                    .copied()
                    .unwrap_or_else(|| self.key_sig.get(&upper).copied().unwrap_or(0)),
            };
            Pitch::Note(SpelledPitch::new(upper, alter, octave))
        } else {
            return Err(format!("expected a note letter, found {letter:?}"));
        };

        // Length: [digits] ('/' [digits])*
        let read_int = |j: &mut usize| -> Result<Option<i64>, String> {
            let start = *j;
            while chars.get(*j).is_some_and(|c| c.is_ascii_digit()) {
                *j += 1;
            }
            if start == *j {
                return Ok(None);
            }
            let digits: String = chars[start..*j].iter().collect();
            digits.parse::<i64>().map(Some).map_err(|_| "note length out of range".to_string())
        };
        let mut factor = Rational64::from_integer(read_int(&mut j)?.unwrap_or(1));
        while chars.get(j) == Some(&'/') {
            j += 1;
            let d = read_int(&mut j)?.unwrap_or(2);
            if d == 0 {
                return Err("zero length divisor".into());
            }
            factor /= d;
        }
        if factor <= Rational64::zero() || *factor.numer() > 64 || *factor.denom() > 64 {
            return Err("invalid note length".into());
        }
        let unit = self.unit_length.unwrap_or(Rational64::new(1, 8));
        Ok((pitch, unit * factor, j))
    }
}

fn header_field(line: &str) -> Option<(char, &str)> {
    let mut chars = line.chars();
    let f = chars.next()?;
    (f.is_ascii_alphabetic() && chars.next() == Some(':')).then(|| (f, &line[2..]))
}

fn is_bar_start(chars: &[char], j: usize) -> bool {
    match chars[j] {
        '|' => true,
        ':' => matches!(chars.get(j + 1), Some('|') | Some(':')),
        '[' => chars.get(j + 1) == Some(&'|'),
        _ => false,
    }
}

fn read_bar(chars: &[char], mut j: usize) -> (String, usize) {
    let mut token = String::new();
    if chars[j] == '[' {
        token.push('[');
        j += 1;
    }
    while let Some(&c) = chars.get(j) {
        if matches!(c, '|' | ':' | ']') {
            token.push(c);
            j += 1;
        } else {
            break;
        }
    }
    (token, j)
}

/// Merge ties, pad pickup and closing bars with rests, and slice the
/// resulting timeline into measures of the meter's length.
fn assemble_measures(bars: Vec<Bar>, meter: Meter) -> Result<Vec<Vec<NoteEvent>>, AbcRejection> {
    if bars.is_empty() {
        return Err(reject(RejectCode::SyntaxError, 1, 1, "tune has no notes"));
    }
    let mlen_whole = meter.as_ratio();
    let last = bars.len() - 1;
    let mut timeline: Vec<RawNote> = Vec::new();
    for (b, mut bar) in bars.into_iter().enumerate() {
        let len = bar.length();
        let first = bar.notes.first().map(|n| (n.line, n.column)).unwrap_or((1, 1));
        if len > mlen_whole || (len < mlen_whole && b != 0 && b != last) {
            return Err(reject(
                RejectCode::IrregularMeasure,
                first.0,
                first.1,
                format!("bar {} lasts {} of a whole note, meter needs {}", b + 1, len, mlen_whole),
            ));
        }
        if len < mlen_whole {
            let pad = RawNote {
                pitch: Pitch::Rest,
                length: mlen_whole - len,
                tie_next: false,
                line: first.0,
                column: first.1,
            };
            if b == 0 && last > 0 {
                // Pickup: pad with a leading rest.
                bar.notes.insert(0, pad);
            } else {
                if bar.notes.last().is_some_and(|n| n.tie_next) {
                    return Err(reject(RejectCode::UnsupportedConstruct, first.0, first.1, "tie into padding"));
                }
                bar.notes.push(pad);
            }
        }
        timeline.extend(bar.notes);
    }

    let mut merged: Vec<RawNote> = Vec::new();
    for note in timeline {
        match merged.last_mut() {
            Some(prev) if prev.tie_next => {
                if prev.pitch != note.pitch {
                    return Err(reject(
                        RejectCode::UnsupportedConstruct,
                        note.line,
                        note.column,
                        "tie between different pitches",
                    ));
                }
                prev.length += note.length;
                prev.tie_next = note.tie_next;
            }
            _ => merged.push(note),
        }
    }
    if let Some(n) = merged.last().filter(|n| n.tie_next) {
        return Err(reject(RejectCode::UnsupportedConstruct, n.line, n.column, "dangling tie"));
    }

    let mlen = meter.measure_beats();
    let total: Beats = merged.iter().map(|n| n.length * 4).sum();
    let count = (total / mlen).to_integer() as usize;
    let mut measures: Vec<Vec<NoteEvent>> = vec![Vec::new(); count];
    let mut t = Beats::zero();
    for n in merged {
        let idx = (t / mlen).floor().to_integer() as usize;
        let onset = t - mlen * idx as i64;
        let duration = n.length * 4;
        measures[idx].push(NoteEvent::new(n.pitch, onset, duration));
        t += duration;
    }
    Ok(measures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(n: i64, d: i64) -> Beats {
        Beats::new(n, d)
    }

    fn tune(body: &str, meter: &str, unit: &str, key: &str) -> String {
        format!("X:1\nT:Test\nM:{meter}\nL:{unit}\nK:{key}\n{body}\n")
    }

    #[test]
    fn quarter_notes() {
        let t = parse_abc(&tune("C D E F |", "4/4", "1/4", "C")).unwrap();
        assert_eq!(t.measures.len(), 1);
        let evs = &t.measures[0];
        let names: Vec<String> = evs.iter().map(|e| e.pitch.to_string()).collect();
        assert_eq!(names, ["C4", "D4", "E4", "F4"]);
        for (i, e) in evs.iter().enumerate() {
            assert_eq!(e.onset, b(i as i64, 1));
            assert_eq!(e.duration, b(1, 1));
        }
    }

    #[test]
    fn eighth_triplet() {
        let t = parse_abc(&tune("(3ABA c6 |", "4/4", "1/8", "C")).unwrap();
        let evs = &t.measures[0];
        assert_eq!(evs[0].pitch.to_string(), "A4");
        assert_eq!(evs[1].pitch.to_string(), "B4");
        assert_eq!(evs[2].pitch.to_string(), "A4");
        assert_eq!(evs[1].onset, b(1, 3));
        assert_eq!(evs[2].onset, b(2, 3));
        assert_eq!(evs[2].duration, b(1, 3));
        assert_eq!(evs[3].onset, b(1, 1));
    }

    #[test]
    fn rejects_chords_and_decorations() {
        let e = parse_abc(&tune("[CE] D E F |", "4/4", "1/4", "C")).unwrap_err();
        assert_eq!(e.code, RejectCode::UnsupportedConstruct);
        assert_eq!((e.line, e.column), (6, 1));
        let e = parse_abc(&tune("~C D E F |", "4/4", "1/4", "C")).unwrap_err();
        assert_eq!(e.code, RejectCode::UnsupportedConstruct);
        let e = parse_abc(&tune("\"Am\"C D E F |", "4/4", "1/4", "C")).unwrap_err();
        assert_eq!(e.code, RejectCode::UnsupportedConstruct);
        let e = parse_abc(&tune("{g}C D E F |", "4/4", "1/4", "C")).unwrap_err();
        assert_eq!(e.code, RejectCode::UnsupportedConstruct);
        let e = parse_abc(&tune("(5CDEFG |", "4/4", "1/4", "C")).unwrap_err();
        assert_eq!(e.code, RejectCode::UnsupportedConstruct);
    }

    #[test]
    fn key_signature_and_bar_accidentals() {
        // G major: F is sharp; =F cancels until the barline.
        let t = parse_abc(&tune("F =F F G | F G A B |", "4/4", "1/4", "G")).unwrap();
        let names: Vec<String> = t.events().map(|e| e.pitch.to_string()).collect();
        assert_eq!(names, ["F#4", "F4", "F4", "G4", "F#4", "G4", "A4", "B4"]);
        // Spelling is preserved: ^A and _B stay distinct.
        let t = parse_abc(&tune("^A _B A B |", "4/4", "1/4", "C")).unwrap();
        let names: Vec<String> = t.events().map(|e| e.pitch.to_string()).collect();
        assert_eq!(names, ["A#4", "Bb4", "A#4", "Bb4"]);
        assert_eq!(key_signature("Ador"), Some(-2 + 3));
        assert_eq!(key_signature("Bb"), Some(-2));
        assert_eq!(key_signature("F#m"), Some(3));
        assert_eq!(key_signature("Dmix"), Some(1));
        assert_eq!(key_signature("Hxx"), None);
    }

    #[test]
    fn octaves_lengths_and_rests() {
        let t = parse_abc(&tune("C, c c' z/ C/ D3/2 E/2 F2 |", "4/4", "1/8", "C")).unwrap();
        let evs: Vec<(String, Beats)> = t.events().map(|e| (e.pitch.to_string(), e.duration)).collect();
        assert_eq!(
            evs,
            vec![
                ("C3".to_string(), b(1, 2)),
                ("C5".to_string(), b(1, 2)),
                ("C6".to_string(), b(1, 2)),
                ("rest".to_string(), b(1, 4)),
                ("C4".to_string(), b(1, 4)),
                ("D4".to_string(), b(3, 4)),
                ("E4".to_string(), b(1, 4)),
                ("F4".to_string(), b(1, 1)),
            ]
        );
    }

    #[test]
    fn ties_merge_across_barlines() {
        let t = parse_abc(&tune("C2 D2 E2 F2- | F2 G2 A4 |", "4/4", "1/8", "C")).unwrap();
        assert_eq!(t.measures.len(), 2);
        let f = t.measures[0].last().unwrap();
        assert_eq!(f.pitch.to_string(), "F4");
        assert_eq!(f.duration, b(2, 1));
        assert_eq!(t.measures[1][0].onset, b(1, 1));
        let e = parse_abc(&tune("C2 D2 E2 F2- | G2 G2 A4 |", "4/4", "1/8", "C")).unwrap_err();
        assert_eq!(e.code, RejectCode::UnsupportedConstruct);
    }

    #[test]
    fn repeats_unroll_once() {
        let t = parse_abc(&tune("|: C4 D4 | E4 F4 :| G8 |]", "4/4", "1/8", "C")).unwrap();
        let names: Vec<String> = t.events().map(|e| e.pitch.to_string()).collect();
        assert_eq!(names, ["C4", "D4", "E4", "F4", "C4", "D4", "E4", "F4", "G4"]);
        assert_eq!(t.measures.len(), 5);
    }

    #[test]
    fn pickup_is_padded_with_rest() {
        let t = parse_abc(&tune("G | C2 D2 E2 F2 | G8 |", "4/4", "1/8", "C")).unwrap();
        assert_eq!(t.measures.len(), 3);
        assert_eq!(t.measures[0][0].pitch, Pitch::Rest);
        assert_eq!(t.measures[0][0].duration, b(7, 2));
        assert_eq!(t.measures[0][1].onset, b(7, 2));
    }

    #[test]
    fn irregular_bar_in_the_middle() {
        let e = parse_abc(&tune("C8 | C4 | C8 |", "4/4", "1/8", "C")).unwrap_err();
        assert_eq!(e.code, RejectCode::IrregularMeasure);
    }

    #[test]
    fn filter_verdicts() {
        let grid = TickGrid::standard();
        let t = parse_abc(&tune("A3 B3 | c6 |", "6/8", "1/8", "D")).unwrap();
        assert_eq!(filter_melody(&t, &grid), FilterVerdict::Reject(FilterReason::Meter));
        let t = parse_abc(&tune("C/4 D/4 E/2 F7 |", "4/4", "1/8", "C")).unwrap();
        assert_eq!(filter_melody(&t, &grid), FilterVerdict::Reject(FilterReason::Duration));
        let t = parse_abc(&tune("C D E F | G A B c |", "4/4", "1/4", "C")).unwrap();
        assert_eq!(filter_melody(&t, &grid), FilterVerdict::Accept);
        let t = parse_abc("X:1\nM:C\nL:1/4\nK:C\nC D E F|\n").unwrap();
        assert_eq!(filter_melody(&t, &grid), FilterVerdict::Accept);
    }

    #[test]
    fn missing_key_and_garbage() {
        assert_eq!(parse_abc("X:1\nT:x\n").unwrap_err().code, RejectCode::SyntaxError);
        assert!(parse_abc("").is_err());
        assert!(parse_abc("X:1\nK:C\n\u{0}\u{1}").is_err());
    }

    #[test]
    fn splits_files_at_reference_numbers() {
        let text = "%comment\nX:1\nK:C\nCDEF|\n\nX:2\nK:G\nGABc|\n";
        let tunes = split_tunes(text);
        assert_eq!(tunes.len(), 2);
        assert!(tunes[1].starts_with("X:2"));
    }
}
