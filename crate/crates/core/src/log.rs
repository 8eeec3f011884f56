//! Record log schema and its binary encoding.
//!
//! The log holds one entry per channel event keyed by `(thread, event_id)`.
//! Payload values are never stored, only who sent them.
//!
//! File layout (little-endian):
//!
//! ```text
//! header  : "LWRR" | version u32 | record count u32
//! record  : thread dti | event_id u64 | event_type u8 | flavor u8
//!           | data_type (u16 len + utf8) | status | channels
//! dti     : u16 path length (0xFFFF = NONE) then u32 per element
//! status  : tag u8, then sender dti for Success, index u32 + sender dti
//!           for SelectedIndex
//! channels: u16 count, then per channel creator dti + seq u64
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::id::{DetChannelId, DetThreadId};

pub const MAGIC: [u8; 4] = *b"LWRR";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

const UNMANAGED_LEN: u16 = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventType {
    Send,
    Recv,
    TryRecv,
    TimeoutRecv,
    Select,
}

impl EventType {
    pub const ALL: [EventType; 5] = [
        EventType::Send,
        EventType::Recv,
        EventType::TryRecv,
        EventType::TimeoutRecv,
        EventType::Select,
    ];

    fn tag(self) -> u8 {
        match self {
            EventType::Send => 0,
            EventType::Recv => 1,
            EventType::TryRecv => 2,
            EventType::TimeoutRecv => 3,
            EventType::Select => 4,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventType::Send => "Send",
            EventType::Recv => "Recv",
            EventType::TryRecv => "TryRecv",
            EventType::TimeoutRecv => "TimeoutRecv",
            EventType::Select => "Select",
        })
    }
}

/// Channel variant an event happened on. Only `LocalUnbounded` channels
/// exist; the other tags keep the format open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ChannelFlavor {
    #[default]
    LocalUnbounded,
    ReservedIpc,
    ReservedBounded,
}

impl ChannelFlavor {
    pub const ALL: [ChannelFlavor; 3] = [
        ChannelFlavor::LocalUnbounded,
        ChannelFlavor::ReservedIpc,
        ChannelFlavor::ReservedBounded,
    ];

    fn tag(self) -> u8 {
        match self {
            ChannelFlavor::LocalUnbounded => 0,
            ChannelFlavor::ReservedIpc => 1,
            ChannelFlavor::ReservedBounded => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for ChannelFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelFlavor::LocalUnbounded => "LOCAL_UNBOUNDED",
            ChannelFlavor::ReservedIpc => "RESERVED_IPC",
            ChannelFlavor::ReservedBounded => "RESERVED_BOUNDED",
        })
    }
}

/// How a channel operation returned.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventStatus {
    SendOk,
    Success(DetThreadId),
    Empty,
    Timeout,
    /// The other side is gone. Used for failed sends as well as receives.
    RecvError,
    SelectedIndex {
        index: u32,
        sender: DetThreadId,
    },
}

impl EventStatus {
    fn tag(&self) -> u8 {
        match self {
            EventStatus::SendOk => 0,
            EventStatus::Success(_) => 1,
            EventStatus::Empty => 2,
            EventStatus::Timeout => 3,
            EventStatus::RecvError => 4,
            EventStatus::SelectedIndex { .. } => 5,
        }
    }

    /// Whether an operation of `event_type` can return this status.
    pub fn allowed_for(&self, event_type: EventType) -> bool {
        use EventStatus as S;
        use EventType as E;
        matches!(
            (event_type, self),
            (E::Send, S::SendOk | S::RecvError)
                | (E::Recv, S::Success(_) | S::RecvError)
                | (E::TryRecv, S::Success(_) | S::Empty | S::RecvError)
                | (E::TimeoutRecv, S::Success(_) | S::Timeout | S::RecvError)
                | (E::Select, S::SelectedIndex { .. } | S::RecvError)
        )
    }

    /// Sender of the delivered message, if a message was delivered.
    pub fn sender(&self) -> Option<&DetThreadId> {
        match self {
            EventStatus::Success(s) | EventStatus::SelectedIndex { sender: s, .. } => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for EventStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventStatus::SendOk => f.write_str("SendOk"),
            EventStatus::Success(s) => write!(f, "Success({s})"),
            EventStatus::Empty => f.write_str("Empty"),
            EventStatus::Timeout => f.write_str("Timeout"),
            EventStatus::RecvError => f.write_str("RecvError"),
            EventStatus::SelectedIndex { index, sender } => {
                write!(f, "SelectedIndex({index},{sender})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LogEntry {
    pub thread: DetThreadId,
    /// Per-thread logical time, starting at 0.
    pub event_id: u64,
    pub event_type: EventType,
    pub flavor: ChannelFlavor,
    pub data_type: String,
    pub status: EventStatus,
    /// The channel involved; for selects, every channel in the set in
    /// insertion order.
    pub channels: Vec<DetChannelId>,
}

impl LogEntry {
    pub fn key(&self) -> (DetThreadId, u64) {
        (self.thread.clone(), self.event_id)
    }

    /// Status fits the event type and a select index points into the set.
    pub fn is_consistent(&self) -> bool {
        if !self.status.allowed_for(self.event_type) {
            return false;
        }
        match &self.status {
            EventStatus::SelectedIndex { index, .. } => (*index as usize) < self.channels.len(),
            _ => self.event_type == EventType::Select || self.channels.len() == 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log is shorter than its {HEADER_LEN}-byte header")]
    TruncatedHeader,
    #[error("bad magic {found:?}, expected \"LWRR\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported log format version {0}")]
    UnsupportedVersion(u32),
    #[error("record {index} is truncated")]
    TruncatedRecord { index: u32 },
    #[error("record {index}: invalid {field} tag {tag}")]
    InvalidTag {
        index: u32,
        field: &'static str,
        tag: u8,
    },
    #[error("record {index}: data type is not valid UTF-8")]
    InvalidUtf8 { index: u32 },
    #[error("duplicate entry for thread {thread} event {event_id}")]
    DuplicateEntry { thread: DetThreadId, event_id: u64 },
    #[error("{count} trailing bytes after the last record")]
    TrailingBytes { count: usize },
    #[error("log too large to encode: {0}")]
    TooLarge(&'static str),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Stream(#[from] io::Error),
}

/// All recorded events of one execution.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordLog {
    entries: BTreeMap<(DetThreadId, u64), LogEntry>,
}

impl RecordLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry, rejecting a second entry for the same key.
    pub fn insert(&mut self, entry: LogEntry) -> Result<(), LogError> {
        use std::collections::btree_map::Entry;
        match self.entries.entry(entry.key()) {
            Entry::Occupied(_) => Err(LogError::DuplicateEntry {
                thread: entry.thread,
                event_id: entry.event_id,
            }),
            Entry::Vacant(v) => {
                v.insert(entry);
                Ok(())
            }
        }
    }

    pub fn get(&self, thread: &DetThreadId, event_id: u64) -> Option<&LogEntry> {
        self.entries.get(&(thread.clone(), event_id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries ordered by thread path, then event id.
    pub fn iter(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.values()
    }

    pub fn threads(&self) -> Vec<DetThreadId> {
        let mut threads: Vec<_> = self.entries.keys().map(|(t, _)| t.clone()).collect();
        threads.dedup();
        threads
    }

    pub fn entries_for<'a>(
        &'a self,
        thread: &'a DetThreadId,
    ) -> impl Iterator<Item = &'a LogEntry> + 'a {
        self.entries
            .range((thread.clone(), 0)..=(thread.clone(), u64::MAX))
            .map(|(_, e)| e)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, LogError> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * 48);
        encode(self, &mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LogError> {
        decode(bytes)
    }

    /// Writes the log to `path`, returning the number of bytes written.
    pub fn save(&self, path: &Path) -> Result<u64, LogError> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        let bytes = fs::read(path).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        decode(&bytes)
    }
}

impl FromIterator<LogEntry> for RecordLog {
    /// Later duplicates replace earlier ones.
    fn from_iter<I: IntoIterator<Item = LogEntry>>(iter: I) -> Self {
        RecordLog {
            entries: iter.into_iter().map(|e| (e.key(), e)).collect(),
        }
    }
}

/// Writes `log` to `dest` and returns the byte count.
pub fn serialize_log<W: Write>(log: &RecordLog, dest: &mut W) -> Result<u64, LogError> {
    let bytes = log.to_bytes()?;
    dest.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

pub fn deserialize_log<R: Read>(source: &mut R) -> Result<RecordLog, LogError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn encode(log: &RecordLog, out: &mut Vec<u8>) -> Result<(), LogError> {
    let count = u32::try_from(log.len()).map_err(|_| LogError::TooLarge("record count"))?;
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for e in log.iter() {
        put_dti(out, &e.thread)?;
        out.extend_from_slice(&e.event_id.to_le_bytes());
        out.push(e.event_type.tag());
        out.push(e.flavor.tag());
        let name = e.data_type.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| LogError::TooLarge("data type"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.status.tag());
        match &e.status {
            EventStatus::Success(sender) => put_dti(out, sender)?,
            EventStatus::SelectedIndex { index, sender } => {
                out.extend_from_slice(&index.to_le_bytes());
                put_dti(out, sender)?;
            }
            _ => {}
        }
        let n = u16::try_from(e.channels.len()).map_err(|_| LogError::TooLarge("channels"))?;
        out.extend_from_slice(&n.to_le_bytes());
        for ch in &e.channels {
            put_dti(out, &ch.creator)?;
            out.extend_from_slice(&ch.seq.to_le_bytes());
        }
    }
    Ok(())
}

fn put_dti(out: &mut Vec<u8>, dti: &DetThreadId) -> Result<(), LogError> {
    match dti.path() {
        None => out.extend_from_slice(&UNMANAGED_LEN.to_le_bytes()),
        Some(path) => {
            let len = u16::try_from(path.len())
                .ok()
                .filter(|l| *l != UNMANAGED_LEN)
                .ok_or(LogError::TooLarge("thread path"))?;
            out.extend_from_slice(&len.to_le_bytes());
            for idx in path {
                out.extend_from_slice(&idx.to_le_bytes());
            }
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    index: u32,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LogError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.buf.len())
            .ok_or(LogError::TruncatedRecord { index: self.index })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, LogError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, LogError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, LogError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LogError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dti(&mut self) -> Result<DetThreadId, LogError> {
        let len = self.u16()?;
        if len == UNMANAGED_LEN {
            return Ok(DetThreadId::Unmanaged);
        }
        let raw = self.take(len as usize * 4)?;
        let path: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DetThreadId::Path(path.into()))
    }

    fn tag_error(&self, field: &'static str, tag: u8) -> LogError {
        LogError::InvalidTag {
            index: self.index,
            field,
            tag,
        }
    }
}

fn decode(bytes: &[u8]) -> Result<RecordLog, LogError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(LogError::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(LogError::TruncatedHeader);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(LogError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(LogError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());

    let mut cur = Cursor {
        buf: bytes,
        pos: HEADER_LEN,
        index: 0,
    };
    let mut log = RecordLog::new();
    for index in 0..count {
        cur.index = index;
        let thread = cur.dti()?;
        let event_id = cur.u64()?;
        let tag = cur.u8()?;
        let event_type =
            EventType::from_tag(tag).ok_or_else(|| cur.tag_error("event type", tag))?;
        let tag = cur.u8()?;
        let flavor = ChannelFlavor::from_tag(tag).ok_or_else(|| cur.tag_error("flavor", tag))?;
        let len = cur.u16()? as usize;
        let data_type = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| LogError::InvalidUtf8 { index })?
            .to_string();
        let status = match cur.u8()? {
            0 => EventStatus::SendOk,
            1 => EventStatus::Success(cur.dti()?),
            2 => EventStatus::Empty,
            3 => EventStatus::Timeout,
            4 => EventStatus::RecvError,
            5 => {
                let index = cur.u32()?;
                EventStatus::SelectedIndex {
                    index,
                    sender: cur.dti()?,
                }
            }
            tag => return Err(cur.tag_error("status", tag)),
        };
        let n = cur.u16()? as usize;
        let mut channels = Vec::with_capacity(n);
        for _ in 0..n {
            let creator = cur.dti()?;
            channels.push(DetChannelId::new(creator, cur.u64()?));
        }
        log.insert(LogEntry {
            thread,
            event_id,
            event_type,
            flavor,
            data_type,
            status,
            channels,
        })?;
    }
    if cur.pos != bytes.len() {
        return Err(LogError::TrailingBytes {
            count: bytes.len() - cur.pos,
        });
    }
    Ok(log)
}
