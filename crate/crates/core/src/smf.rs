//! Minimal Standard MIDI File reader/writer covering what the pipeline needs:
//! note on/off, tempo meta events and end of track. Everything else is parsed
//! for framing and kept as [`EventKind::Other`].

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmfError {
    #[error("missing MThd header")]
    NoHeader,
    #[error("unexpected end of data at byte {0}")]
    Eof(usize),
    #[error("unsupported format {0}")]
    Format(u16),
    #[error("expected MTrk chunk at byte {0}")]
    NoTrack(usize),
    #[error("running status with no previous status at byte {0}")]
    NoStatus(usize),
    #[error("variable-length quantity too long at byte {0}")]
    Vlq(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    SingleTrack,
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Ticks per quarter note.
    Metrical(u16),
    /// Frames per second and ticks per frame.
    Timecode(u8, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    NoteOn { channel: u8, key: u8, vel: u8 },
    NoteOff { channel: u8, key: u8, vel: u8 },
    /// Microseconds per quarter note.
    Tempo(u32),
    EndOfTrack,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackEvent {
    pub delta: u32,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Smf {
    pub format: Format,
    pub timing: Timing,
    pub tracks: Vec<Vec<TrackEvent>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SmfError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(SmfError::Eof(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, SmfError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, SmfError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, SmfError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, SmfError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(SmfError::Vlq(start))
    }
}

impl Smf {
    pub fn parse(bytes: &[u8]) -> Result<Smf, SmfError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| SmfError::NoHeader)? != b"MThd" {
            return Err(SmfError::NoHeader);
        }
        let header_len = r.u32()? as usize;
        let header_start = r.pos;
        let format = match r.u16()? {
            0 => Format::SingleTrack,
            1 => Format::Parallel,
            2 => Format::Sequential,
            f => return Err(SmfError::Format(f)),
        };
        let ntracks = r.u16()?;
        let division = r.u16()?;
        let timing = if division & 0x8000 == 0 {
            Timing::Metrical(division)
        } else {
            let fps = (-((division >> 8) as u8 as i8)) as u8;
            Timing::Timecode(fps, division as u8)
        };
        r.pos = header_start + header_len.max(6);

        let mut tracks = Vec::with_capacity(usize::from(ntracks));
        while tracks.len() < usize::from(ntracks) {
            let chunk_at = r.pos;
            let id = r.take(4).map_err(|_| SmfError::NoTrack(chunk_at))?;
            let len = r.u32()? as usize;
            let body = r.take(len)?;
            if id != b"MTrk" {
                continue;
            }
            tracks.push(parse_track(body, r.pos - len)?);
        }
        Ok(Smf { format, timing, tracks })
    }

    pub fn write(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"MThd");
        out.extend_from_slice(&6u32.to_be_bytes());
        let format: u16 = match self.format {
            Format::SingleTrack => 0,
            Format::Parallel => 1,
            Format::Sequential => 2,
        };
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(self.tracks.len() as u16).to_be_bytes());
        let division = match self.timing {
            Timing::Metrical(ppq) => ppq & 0x7fff,
            Timing::Timecode(fps, sub) => (u16::from((-(fps as i8)) as u8) << 8) | u16::from(sub),
        };
        out.extend_from_slice(&division.to_be_bytes());
        for track in &self.tracks {
            let mut body = Vec::new();
            for ev in track {
                write_vlq(&mut body, ev.delta);
                match ev.kind {
                    EventKind::NoteOn { channel, key, vel } => body.extend_from_slice(&[0x90 | (channel & 0xf), key & 0x7f, vel & 0x7f]),
                    EventKind::NoteOff { channel, key, vel } => body.extend_from_slice(&[0x80 | (channel & 0xf), key & 0x7f, vel & 0x7f]),
                    EventKind::Tempo(us) => {
                        let b = us.to_be_bytes();
                        body.extend_from_slice(&[0xff, 0x51, 0x03, b[1], b[2], b[3]]);
                    }
                    EventKind::EndOfTrack => body.extend_from_slice(&[0xff, 0x2f, 0x00]),
                    // Written as an empty text event to keep the delta.
                    EventKind::Other => body.extend_from_slice(&[0xff, 0x01, 0x00]),
                }
            }
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
        out
    }
}

fn write_vlq(out: &mut Vec<u8>, value: u32) {
    let value = value & 0x0fff_ffff;
    let mut groups = [0u8; 4];
    let mut n = 0;
    let mut v = value;
    loop {
        groups[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(groups[i] | if i > 0 { 0x80 } else { 0 });
    }
}

fn parse_track(body: &[u8], offset: usize) -> Result<Vec<TrackEvent>, SmfError> {
    let mut r = Reader { bytes: body, pos: 0 };
    let mut events = Vec::new();
    let mut running: Option<u8> = None;
    while r.pos < body.len() {
        let delta = r.vlq().map_err(|e| shift(e, offset))?;
        let at = r.pos;
        let first = r.u8().map_err(|e| shift(e, offset))?;
        let kind = match first {
            0xff => {
                let meta = r.u8().map_err(|e| shift(e, offset))?;
                let len = r.vlq().map_err(|e| shift(e, offset))? as usize;
                let data = r.take(len).map_err(|e| shift(e, offset))?;
                match (meta, data) {
                    (0x51, [a, b, c]) => EventKind::Tempo(u32::from_be_bytes([0, *a, *b, *c])),
                    (0x2f, _) => EventKind::EndOfTrack,
                    _ => EventKind::Other,
                }
            }
            0xf0 | 0xf7 => {
                let len = r.vlq().map_err(|e| shift(e, offset))? as usize;
                r.take(len).map_err(|e| shift(e, offset))?;
                running = None;
                EventKind::Other
            }
            _ => {
                let (status, data0) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, r.u8().map_err(|e| shift(e, offset))?)
                } else {
                    (running.ok_or(SmfError::NoStatus(offset + at))?, first)
                };
                let channel = status & 0x0f;
                match status & 0xf0 {
                    0xc0 | 0xd0 => EventKind::Other,
                    high => {
                        let data1 = r.u8().map_err(|e| shift(e, offset))?;
                        match high {
                            0x90 => EventKind::NoteOn { channel, key: data0 & 0x7f, vel: data1 & 0x7f },
                            0x80 => EventKind::NoteOff { channel, key: data0 & 0x7f, vel: data1 & 0x7f },
                            _ => EventKind::Other,
                        }
                    }
                }
            }
        };
        let end = kind == EventKind::EndOfTrack;
        events.push(TrackEvent { delta, kind });
        if end {
            break;
        }
    }
    Ok(events)
}

fn shift(e: SmfError, offset: usize) -> SmfError {
    match e {
        SmfError::Eof(p) => SmfError::Eof(p + offset),
        SmfError::Vlq(p) => SmfError::Vlq(p + offset),
        other => other,
    }
}
