//! MIDI side of the pipeline: note onsets, simultaneous-event grouping and
//! projection of every event onto all staff positions it could be written at.

use std::collections::BTreeSet;

use crate::smf::{EventKind, Format, Smf, Timing, TrackEvent};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{diatonic_index, global_row, BootlegScore, ColumnWord, Hand, Letter};

const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteOnset {
    pub time: f64,
    pub pitch: u8,
    pub track: usize,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoteEvent {
    pub time: f64,
    /// Sorted; duplicates are kept so pitch counts are conserved.
    pub pitches: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionOptions {
    /// Also place every note one octave up and down.
    pub octave_interps: bool,
    /// Also place every note as if each staff used the other hand's clef.
    pub clef_interps: bool,
}

/// Piecewise-constant tempo map from ticks to seconds.
#[derive(Debug, Clone)]
struct TempoMap {
    /// (start tick, start seconds, seconds per tick)
    segments: Vec<(u64, f64, f64)>,
}

impl TempoMap {
    fn new(timing: Timing, mut changes: Vec<(u64, u32)>) -> Self {
        match timing {
            Timing::Metrical(ppq) => {
                let ppq = f64::from(ppq.max(1));
                changes.sort_by_key(|&(tick, _)| tick);
                let mut segments = vec![(0u64, 0.0, f64::from(DEFAULT_TEMPO_US) * 1e-6 / ppq)];
                for (tick, tempo) in changes {
                    let &(start, secs, per_tick) = segments.last().unwrap();
                    let at = secs + (tick - start) as f64 * per_tick;
                    let per_tick = f64::from(tempo) * 1e-6 / ppq;
                    if tick == start {
                        *segments.last_mut().unwrap() = (start, secs, per_tick);
                    } else {
                        segments.push((tick, at, per_tick));
                    }
                }
                TempoMap { segments }
            }
            Timing::Timecode(fps, subframe) => {
                let per_tick = 1.0 / (f64::from(fps.max(1)) * f64::from(subframe.max(1)));
                TempoMap {
                    segments: vec![(0, 0.0, per_tick)],
                }
            }
        }
    }

    fn seconds(&self, tick: u64) -> f64 {
        let idx = self.segments.partition_point(|&(start, _, _)| start <= tick) - 1;
        let (start, secs, per_tick) = self.segments[idx];
        secs + (tick - start) as f64 * per_tick
    }
}

/// Parses a Standard MIDI File (format 0 or 1) into time-sorted note onsets.
pub fn parse_midi(bytes: &[u8]) -> Result<Vec<NoteOnset>> {
    let smf = Smf::parse(bytes).map_err(|e| Error::MidiParse(e.to_string()))?;
    if smf.format == Format::Sequential {
        return Err(Error::MidiParse("format 2 files are not supported".into()));
    }

    let mut tempo_changes = Vec::new();
    let mut raw = Vec::new();
    for (track_idx, track) in smf.tracks.iter().enumerate() {
        let mut tick = 0u64;
        for event in track {
            tick += u64::from(event.delta);
            match event.kind {
                EventKind::Tempo(t) => tempo_changes.push((tick, t)),
                EventKind::NoteOn { channel, key, vel } if vel > 0 => raw.push((tick, key, track_idx, channel)),
                _ => {}
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyPiece);
    }

    let tempo = TempoMap::new(smf.timing, tempo_changes);
    let mut onsets: Vec<NoteOnset> = raw
        .into_iter()
        .map(|(tick, pitch, track, channel)| NoteOnset {
            time: tempo.seconds(tick),
            pitch,
            track,
            channel,
        })
        .collect();
    onsets.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.pitch.cmp(&b.pitch)));
    Ok(onsets)
}

/// Greedy left-to-right grouping: an onset joins the open event while it is
/// within `tolerance_sec` of that event's first onset.
pub fn group_onsets(onsets: &[NoteOnset], tolerance_sec: f64) -> Vec<NoteEvent> {
    let mut events: Vec<NoteEvent> = Vec::new();
    for onset in onsets {
        match events.last_mut() {
            Some(ev) if onset.time - ev.time <= tolerance_sec => ev.pitches.push(onset.pitch),
            _ => events.push(NoteEvent {
                time: onset.time,
                pitches: vec![onset.pitch],
            }),
        }
    }
    for ev in &mut events {
        ev.pitches.sort_unstable();
    }
    events
}

fn natural_rows(pitch: i32, rows: &mut BTreeSet<usize>) {
    let pitch_class = pitch.rem_euclid(12);
    for letter in Letter::ALL {
        for accidental in [-1, 0, 1] {
            if (letter.natural_pitch_class() + accidental).rem_euclid(12) != pitch_class {
                continue;
            }
            let natural = pitch - accidental;
            let octave = natural.div_euclid(12) - 1;
            let d = diatonic_index(letter, octave);
            for hand in [Hand::Left, Hand::Right] {
                if let Some(row) = global_row(hand, d) {
                    rows.insert(row);
                }
            }
        }
    }
}

/// Every global row at which `pitch` could be notated with at most a single
/// sharp or flat, on either staff.
pub fn staff_positions(pitch: u8, options: ProjectionOptions) -> BTreeSet<usize> {
    let pitch = i32::from(pitch);
    let mut rows = BTreeSet::new();
    natural_rows(pitch, &mut rows);
    if options.octave_interps {
        natural_rows(pitch - 12, &mut rows);
        natural_rows(pitch + 12, &mut rows);
    }
    if options.clef_interps {
        // Treble and bass bottom lines sit 22 rows apart in the global layout,
        // so reading a staff in the other clef is a fixed row shift.
        let shift = (Hand::Right.bottom_line_row() - Hand::Left.bottom_line_row()) as usize;
        let base: Vec<usize> = rows.iter().copied().collect();
        for row in base {
            if Hand::Left.row_range().contains(&row) && Hand::Right.row_range().contains(&(row + shift)) {
                rows.insert(row + shift);
            }
            if Hand::Right.row_range().contains(&row) && row >= shift && Hand::Left.row_range().contains(&(row - shift)) {
                rows.insert(row - shift);
            }
        }
    }
    rows
}

pub fn staff_mask(pitch: u8, options: ProjectionOptions) -> ColumnWord {
    ColumnWord::from_rows(staff_positions(pitch, options))
}

/// MIDI bootleg score plus the bookkeeping needed to map columns back to time.
#[derive(Debug, Clone, PartialEq)]
pub struct MidiBootleg {
    pub score: BootlegScore,
    pub event_times: Vec<f64>,
    /// Event index for every column of `score`.
    pub column_events: Vec<usize>,
}

impl MidiBootleg {
    pub fn num_events(&self) -> usize {
        self.event_times.len()
    }
}

pub fn events_to_bootleg(
    events: &[NoteEvent],
    options: ProjectionOptions,
    filler_repetition: bool,
) -> Result<MidiBootleg> {
    if events.is_empty() {
        return Err(Error::EmptyPiece);
    }
    let columns: Vec<ColumnWord> = events
        .iter()
        .map(|ev| {
            ev.pitches
                .iter()
                .fold(ColumnWord::EMPTY, |acc, &p| acc.union(staff_mask(p, options)))
        })
        .collect();
    let score = BootlegScore::from_events(&columns, filler_repetition);
    let column_events = score.provenance().iter().map(|p| p.index()).collect();
    Ok(MidiBootleg {
        score,
        event_times: events.iter().map(|e| e.time).collect(),
        column_events,
    })
}

/// Settings for turning a MIDI file into its bootleg score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MidiBootlegParams {
    pub grouping_tolerance: f64,
    pub projection: ProjectionOptions,
    pub filler_repetition: bool,
}

impl Default for MidiBootlegParams {
    fn default() -> Self {
        MidiBootlegParams {
            grouping_tolerance: 0.05,
            projection: ProjectionOptions::default(),
            filler_repetition: true,
        }
    }
}

pub fn midi_to_bootleg(bytes: &[u8], params: &MidiBootlegParams) -> Result<MidiBootleg> {
    let onsets = parse_midi(bytes)?;
    let events = group_onsets(&onsets, params.grouping_tolerance);
    events_to_bootleg(&events, params.projection, params.filler_repetition)
}

/// A sounding note used when writing MIDI files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteSpan {
    pub start: f64,
    pub end: f64,
    pub pitch: u8,
}

/// Writes a single-track format-0 file at a constant tempo.
pub fn write_midi(notes: &[NoteSpan], ticks_per_quarter: u16, tempo_us: u32) -> Vec<u8> {
    let to_tick = |sec: f64| (sec * 1e6 / f64::from(tempo_us) * f64::from(ticks_per_quarter)).round() as u64;
    // (tick, is_on, pitch); offs sort before ons at the same tick
    let mut marks: Vec<(u64, bool, u8)> = notes
        .iter()
        .flat_map(|n| [(to_tick(n.start), true, n.pitch), (to_tick(n.end), false, n.pitch)])
        .collect();
    marks.sort();

    let mut track = vec![TrackEvent {
        delta: 0,
        kind: EventKind::Tempo(tempo_us),
    }];
    let mut last = 0u64;
    for (tick, on, key) in marks {
        let kind = if on {
            EventKind::NoteOn { channel: 0, key, vel: 80 }
        } else {
            EventKind::NoteOff { channel: 0, key, vel: 0 }
        };
        track.push(TrackEvent {
            delta: (tick - last) as u32,
            kind,
        });
        last = tick;
    }
    track.push(TrackEvent {
        delta: 0,
        kind: EventKind::EndOfTrack,
    });
    Smf {
        format: Format::SingleTrack,
        timing: Timing::Metrical(ticks_per_quarter),
        tracks: vec![track],
    }
    .write()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn on(delta: u32, key: u8, vel: u8) -> TrackEvent {
        TrackEvent {
            delta,
            kind: EventKind::NoteOn { channel: 0, key, vel },
        }
    }

    fn tempo(delta: u32, us: u32) -> TrackEvent {
        TrackEvent {
            delta,
            kind: EventKind::Tempo(us),
        }
    }

    fn file(format: Format, ppq: u16, tracks: Vec<Vec<TrackEvent>>) -> Vec<u8> {
        Smf {
            format,
            timing: Timing::Metrical(ppq),
            tracks,
        }
        .write()
    }

    #[test]
    fn single_onset_at_origin() {
        let bytes = file(Format::SingleTrack, 480, vec![vec![tempo(0, 500_000), on(0, 60, 90)]]);
        let onsets = parse_midi(&bytes).unwrap();
        assert_eq!(onsets.len(), 1);
        assert_eq!(onsets[0].time, 0.0);
        assert_eq!(onsets[0].pitch, 60);
    }

    #[test]
    fn onset_after_one_quarter() {
        let bytes = file(Format::SingleTrack, 480, vec![vec![tempo(0, 500_000), on(480, 64, 90)]]);
        assert!((parse_midi(&bytes).unwrap()[0].time - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mid_track_tempo_change() {
        let bytes = file(
            Format::SingleTrack,
            480,
            vec![vec![tempo(0, 500_000), tempo(480, 250_000), on(480, 67, 90)]],
        );
        assert!((parse_midi(&bytes).unwrap()[0].time - 0.75).abs() < 1e-12);
    }

    #[test]
    fn tempo_track_applies_to_other_tracks() {
        let bytes = file(
            Format::Parallel,
            480,
            vec![
                vec![tempo(0, 1_000_000)],
                vec![on(960, 60, 90), on(0, 64, 0)],
            ],
        );
        let onsets = parse_midi(&bytes).unwrap();
        // velocity-0 note-on is a note-off
        assert_eq!(onsets.len(), 1);
        assert!((onsets[0].time - 2.0).abs() < 1e-12);
        assert_eq!(onsets[0].track, 1);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_midi(b"not a midi file"), Err(Error::MidiParse(_))));
        let bytes = file(Format::SingleTrack, 480, vec![vec![tempo(0, 500_000)]]);
        assert!(matches!(parse_midi(&bytes), Err(Error::EmptyPiece)));
    }

    fn onsets_at(times: &[f64]) -> Vec<NoteOnset> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| NoteOnset {
                time: t,
                pitch: 60 + i as u8,
                track: 0,
                channel: 0,
            })
            .collect()
    }

    #[test]
    fn grouping_examples() {
        let ev = group_onsets(&onsets_at(&[0.0, 0.01, 0.02]), 0.05);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].pitches.len(), 3);

        assert_eq!(group_onsets(&onsets_at(&[0.0, 0.10]), 0.05).len(), 2);

        let ev = group_onsets(&onsets_at(&[0.0, 0.04, 0.08]), 0.05);
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].pitches, vec![60, 61]);
        assert_eq!(ev[1].time, 0.08);
    }

    #[test]
    fn staff_position_examples() {
        let off = ProjectionOptions::default();
        assert_eq!(staff_positions(60, off), BTreeSet::from([22, 23, 32, 33]));
        assert_eq!(staff_positions(62, off), BTreeSet::from([24, 34]));
        assert_eq!(staff_positions(21, off), BTreeSet::from([0]));
        // C8 and B#7
        assert_eq!(staff_positions(108, off), BTreeSet::from([60, 61]));
    }

    #[test]
    fn interpretation_flags_only_add_rows() {
        for pitch in 21..=108u8 {
            let base = staff_positions(pitch, ProjectionOptions::default());
            for (octave_interps, clef_interps) in [(true, false), (false, true), (true, true)] {
                let extra = staff_positions(pitch, ProjectionOptions { octave_interps, clef_interps });
                assert!(extra.is_superset(&base));
            }
        }
        // E4 on the treble bottom line (row 35) read in bass clef is G2's slot, row 13.
        let clef = staff_positions(64, ProjectionOptions { octave_interps: false, clef_interps: true });
        assert!(clef.contains(&35) && clef.contains(&13));
        let oct = staff_positions(62, ProjectionOptions { octave_interps: true, clef_interps: false });
        // D3 (left row 17) and D5 (right row 41) join D4's rows.
        assert_eq!(oct, BTreeSet::from([17, 24, 34, 41]));
    }

    #[test]
    fn bootleg_examples() {
        let events = [NoteEvent {
            time: 0.0,
            pitches: vec![60],
        }];
        let mb = events_to_bootleg(&events, ProjectionOptions::default(), true).unwrap();
        assert_eq!(mb.score.len(), 3);
        let expected = ColumnWord::from_rows([22, 23, 32, 33]);
        assert_eq!(mb.score.columns()[0], expected);
        assert_eq!(mb.score.columns()[1], expected);
        assert!(mb.score.columns()[2].is_empty());
        assert_eq!(mb.column_events, vec![0, 0, 0]);

        let chord = [NoteEvent {
            time: 0.0,
            pitches: vec![60, 64],
        }];
        let mb = events_to_bootleg(&chord, ProjectionOptions::default(), true).unwrap();
        let union = staff_mask(60, ProjectionOptions::default()).union(staff_mask(64, ProjectionOptions::default()));
        assert_eq!(mb.score.columns()[0], union);

        assert!(matches!(
            events_to_bootleg(&[], ProjectionOptions::default(), true),
            Err(Error::EmptyPiece)
        ));
    }

    #[test]
    fn write_then_parse() {
        let notes = [
            NoteSpan { start: 0.0, end: 0.4, pitch: 60 },
            NoteSpan { start: 0.5, end: 0.9, pitch: 64 },
            NoteSpan { start: 0.5, end: 0.9, pitch: 67 },
        ];
        let onsets = parse_midi(&write_midi(&notes, 480, 500_000)).unwrap();
        let times: Vec<f64> = onsets.iter().map(|o| o.time).collect();
        assert_eq!(times, vec![0.0, 0.5, 0.5]);
    }

    /// Accumulates seconds one tick at a time.
    fn brute_force_seconds(ppq: u16, changes: &[(u64, u32)], tick: u64) -> f64 {
        let mut tempo = DEFAULT_TEMPO_US;
        let mut secs = 0.0;
        for t in 0..tick {
            for &(at, us) in changes {
                if at == t {
                    tempo = us;
                }
            }
            secs += f64::from(tempo) / 1e6 / f64::from(ppq);
        }
        secs
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn tempo_integration_matches_brute_force(
            gaps in proptest::collection::vec((1u32..400, 200_000u32..1_200_000), 0..10),
            tail in 0u32..600,
        ) {
            let ppq = 96u16;
            let mut track = vec![];
            let mut changes = vec![];
            let mut tick = 0u64;
            for &(gap, us) in &gaps {
                tick += u64::from(gap);
                changes.push((tick, us));
                track.push(tempo(gap, us));
            }
            track.push(on(tail, 72, 100));
            let onsets = parse_midi(&file(Format::SingleTrack, ppq, vec![track])).unwrap();
            let expected = brute_force_seconds(ppq, &changes, tick + u64::from(tail));
            prop_assert!((onsets[0].time - expected).abs() < 1e-9);
        }

        #[test]
        fn grouping_conserves_pitches(mut times in proptest::collection::vec(0.0f64..5.0, 1..80), tol in 0.001f64..0.2) {
            times.sort_by(f64::total_cmp);
            let events = group_onsets(&onsets_at(&times), tol);
            prop_assert_eq!(events.iter().map(|e| e.pitches.len()).sum::<usize>(), times.len());
            prop_assert!(events.windows(2).all(|w| w[0].time < w[1].time));
        }

        #[test]
        fn bootleg_width_is_three_per_event(n in 1usize..50) {
            let events: Vec<NoteEvent> = (0..n).map(|i| NoteEvent { time: i as f64, pitches: vec![40 + (i % 40) as u8] }).collect();
            let mb = events_to_bootleg(&events, ProjectionOptions::default(), true).unwrap();
            prop_assert_eq!(mb.score.len(), 3 * n);
            for k in 0..n {
                prop_assert_eq!(mb.score.columns()[3 * k], mb.score.columns()[3 * k + 1]);
                prop_assert!(mb.score.columns()[3 * k + 2].is_empty());
            }
        }
    }
}
