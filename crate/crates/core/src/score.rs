//! Bootleg score data model.
//!
//! A bootleg score is a binary matrix with [`NUM_ROWS`] rows. Rows 0..=27
//! hold the left-hand (bass) staff positions A0..G4 and rows 28..=61 hold
//! the right-hand (treble) staff positions E3..C8, one row per line or
//! space. Each column is packed into a [`ColumnWord`] with row `i` stored
//! at bit `i`.
//!
//! The on-disk / on-wire "BSCR" layout is:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BSCR"
//! 4       1     format version (1)
//! 5       3     reserved, zero
//! 8       4     column count, u32 little-endian
//! 12      8*n   one u64 little-endian column word per column
//! ```

use std::fmt;

use thiserror::Error;

/// Height of every bootleg score column.
pub const NUM_ROWS: usize = 62;
/// Rows belonging to the left-hand (bass) staff.
pub const LEFT_ROWS: usize = 28;
/// Rows belonging to the right-hand (treble) staff.
pub const RIGHT_ROWS: usize = 34;

pub const MAGIC: [u8; 4] = *b"BSCR";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;

const LEFT_DIATONIC: (i32, i32) = (5, 32);
const RIGHT_DIATONIC: (i32, i32) = (23, 56);
const VALID_MASK: u64 = (1u64 << NUM_ROWS) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("column has {0} entries, expected 62")]
    ColumnLength(usize),
    #[error("column entry {value} at row {row} is not 0 or 1")]
    NonBinary { row: usize, value: u8 },
    #[error("column word {word:#x} has bits above row 61 set")]
    HighBits { word: u64 },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: header declares {declared} columns, found {found}")]
    Truncated { declared: usize, found: usize },
    #[error("payload shorter than the 12-byte header ({0} bytes)")]
    ShortHeader(usize),
    #[error("{0} trailing bytes after the last column")]
    TrailingBytes(usize),
}

/// Which staff of the grand staff a position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    /// Global row of the staff's bottom line (G2 for the bass clef, E4 for the treble clef).
    pub fn bottom_line_row(self) -> i32 {
        match self {
            Hand::Left => 13,
            Hand::Right => 35,
        }
    }

    pub fn row_range(self) -> std::ops::RangeInclusive<usize> {
        match self {
            Hand::Left => 0..=LEFT_ROWS - 1,
            Hand::Right => LEFT_ROWS..=NUM_ROWS - 1,
        }
    }

    /// Diatonic index of the staff's bottom line.
    pub fn bottom_line_diatonic(self) -> i32 {
        match self {
            Hand::Left => 18,
            Hand::Right => 30,
        }
    }
}

/// Note letter names in diatonic order starting from C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Letter {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Letter {
    pub const ALL: [Letter; 7] = [
        Letter::C,
        Letter::D,
        Letter::E,
        Letter::F,
        Letter::G,
        Letter::A,
        Letter::B,
    ];

    pub fn offset(self) -> i32 {
        self as i32
    }

    /// Pitch class of the natural note (C = 0).
    pub fn natural_pitch_class(self) -> i32 {
        [0, 2, 4, 5, 7, 9, 11][self as usize]
    }
}

/// Diatonic index: seven steps per octave, C0 = 0.
pub fn diatonic_index(letter: Letter, octave: i32) -> i32 {
    7 * octave + letter.offset()
}

/// Maps a diatonic index on the given hand's staff to a global row, if it is in range.
pub fn global_row(hand: Hand, diatonic: i32) -> Option<usize> {
    let ((lo, hi), base) = match hand {
        Hand::Left => (LEFT_DIATONIC, 0),
        Hand::Right => (RIGHT_DIATONIC, LEFT_ROWS as i32),
    };
    (lo..=hi)
        .contains(&diatonic)
        .then(|| (base + diatonic - lo) as usize)
}

/// Inverse of [`global_row`].
pub fn row_to_diatonic(row: usize) -> Option<(Hand, i32)> {
    if row < LEFT_ROWS {
        Some((Hand::Left, row as i32 + LEFT_DIATONIC.0))
    } else if row < NUM_ROWS {
        Some((Hand::Right, (row - LEFT_ROWS) as i32 + RIGHT_DIATONIC.0))
    } else {
        None
    }
}

/// One packed bootleg column; bit `i` holds row `i`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ColumnWord(u64);

impl ColumnWord {
    pub const EMPTY: ColumnWord = ColumnWord(0);

    pub fn new(word: u64) -> Result<Self, FormatError> {
        if word & !VALID_MASK != 0 {
            return Err(FormatError::HighBits { word });
        }
        Ok(ColumnWord(word))
    }

    pub fn from_rows<I: IntoIterator<Item = usize>>(rows: I) -> Self {
        let mut word = 0u64;
        for row in rows {
            assert!(row < NUM_ROWS, "row {row} out of range");
            word |= 1 << row;
        }
        ColumnWord(word)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, row: usize) -> bool {
        row < NUM_ROWS && self.0 >> row & 1 == 1
    }

    pub fn union(self, other: ColumnWord) -> ColumnWord {
        ColumnWord(self.0 | other.0)
    }

    pub fn intersection(self, other: ColumnWord) -> ColumnWord {
        ColumnWord(self.0 & other.0)
    }

    pub fn rows(self) -> impl Iterator<Item = usize> {
        (0..NUM_ROWS).filter(move |&r| self.0 >> r & 1 == 1)
    }
}

impl fmt::Debug for ColumnWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.rows()).finish()
    }
}

pub fn encode_column(col: &[u8]) -> Result<ColumnWord, FormatError> {
    if col.len() != NUM_ROWS {
        return Err(FormatError::ColumnLength(col.len()));
    }
    let mut word = 0u64;
    for (row, &value) in col.iter().enumerate() {
        match value {
            0 => {}
            1 => word |= 1 << row,
            _ => return Err(FormatError::NonBinary { row, value }),
        }
    }
    Ok(ColumnWord(word))
}

pub fn decode_column(word: u64) -> Result<[u8; NUM_ROWS], FormatError> {
    let word = ColumnWord::new(word)?;
    let mut col = [0u8; NUM_ROWS];
    for (row, slot) in col.iter_mut().enumerate() {
        *slot = (word.0 >> row & 1) as u8;
    }
    Ok(col)
}

/// Where a bootleg column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Provenance {
    /// Content column for event (or notehead group) `index`; `slot` counts repetitions.
    Event { index: usize, slot: u8 },
    /// All-zero spacer inserted after event `after`.
    Filler { after: usize },
}

impl Provenance {
    pub fn index(self) -> usize {
        match self {
            Provenance::Event { index, .. } => index,
            Provenance::Filler { after } => after,
        }
    }
}

/// A bootleg score. `provenance` is either empty (e.g. after deserializing)
/// or has one entry per column.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BootlegScore {
    columns: Vec<ColumnWord>,
    provenance: Vec<Provenance>,
}

impl BootlegScore {
    pub fn from_columns(columns: Vec<ColumnWord>) -> Self {
        BootlegScore {
            columns,
            provenance: Vec::new(),
        }
    }

    /// Panics if the provenance list does not match the column count.
    pub fn with_provenance(columns: Vec<ColumnWord>, provenance: Vec<Provenance>) -> Self {
        assert_eq!(columns.len(), provenance.len());
        BootlegScore {
            columns,
            provenance,
        }
    }

    /// Builds a score from one column per event, optionally repeating each
    /// column twice and following it with an empty filler column.
    pub fn from_events(event_columns: &[ColumnWord], expand: bool) -> Self {
        let mut columns = Vec::with_capacity(event_columns.len() * if expand { 3 } else { 1 });
        let mut provenance = Vec::with_capacity(columns.capacity());
        for (index, &col) in event_columns.iter().enumerate() {
            if expand {
                columns.extend([col, col, ColumnWord::EMPTY]);
                provenance.extend([
                    Provenance::Event { index, slot: 0 },
                    Provenance::Event { index, slot: 1 },
                    Provenance::Filler { after: index },
                ]);
            } else {
                columns.push(col);
                provenance.push(Provenance::Event { index, slot: 0 });
            }
        }
        BootlegScore {
            columns,
            provenance,
        }
    }

    pub fn columns(&self) -> &[ColumnWord] {
        &self.columns
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn height(&self) -> usize {
        NUM_ROWS
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + 8 * self.columns.len()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&[0; 3]);
        let count = u32::try_from(self.columns.len()).expect("column count exceeds u32");
        out.extend_from_slice(&count.to_le_bytes());
        for col in &self.columns {
            out.extend_from_slice(&col.0.to_le_bytes());
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(FormatError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(FormatError::ShortHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(bytes[4]));
        }
        let declared = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        let found = payload.len() / 8;
        if found < declared {
            return Err(FormatError::Truncated { declared, found });
        }
        if payload.len() > declared * 8 {
            return Err(FormatError::TrailingBytes(payload.len() - declared * 8));
        }
        let columns = payload
            .chunks_exact(8)
            .map(|chunk| ColumnWord::new(u64::from_le_bytes(chunk.try_into().unwrap())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BootlegScore::from_columns(columns))
    }

    /// Total number of set bixels.
    pub fn count_ones(&self) -> usize {
        self.columns.iter().map(|c| c.count() as usize).sum()
    }
}
