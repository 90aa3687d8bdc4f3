//! Photon time tags and their on-disk formats.
//!
//! Two encodings carry the same stream:
//!
//! * CSV: header `channel,timestamp_ps`, one tag per line, channel `0` (A)
//!   or `1` (B), timestamps ascending.
//! * TTG1: the 4-byte magic `TTG1`, a version byte (`1`), then 9-byte
//!   records of one channel byte and a little-endian `u64` timestamp in
//!   picoseconds.

use std::io::{self, BufRead, BufWriter, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TTG1_MAGIC: &[u8; 4] = b"TTG1";
pub const TTG1_VERSION: u8 = 1;
pub const CSV_HEADER: &str = "channel,timestamp_ps";

#[derive(Debug, Error)]
pub enum TagError {
    #[error("tags out of order at index {index}: {previous} ps then {current} ps")]
    Unsorted { index: usize, previous: u64, current: u64 },
    #[error("unknown channel {0}")]
    BadChannel(u8),
    #[error("malformed tag file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
}

impl Channel {
    pub fn index(self) -> u8 {
        match self {
            Channel::A => 0,
            Channel::B => 1,
        }
    }

    pub fn from_index(i: u8) -> Result<Self, TagError> {
        match i {
            0 => Ok(Channel::A),
            1 => Ok(Channel::B),
            other => Err(TagError::BadChannel(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tag {
    pub timestamp_ps: u64,
    pub channel: Channel,
}

/// Time-ordered two-channel photon record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagStream {
    tags: Vec<Tag>,
}

impl TagStream {
    /// Builds a stream from tags already in ascending time order.
    pub fn from_sorted(tags: Vec<Tag>) -> Result<Self, TagError> {
        check_sorted(tags.iter().map(|t| t.timestamp_ps))?;
        Ok(Self { tags })
    }

    /// Sorts by timestamp (channel A before B on ties).
    pub fn from_unsorted(mut tags: Vec<Tag>) -> Self {
        tags.sort_unstable();
        Self { tags }
    }

    /// Merges two single-channel timestamp lists.
    pub fn from_channels(a: &[u64], b: &[u64]) -> Result<Self, TagError> {
        check_sorted(a.iter().copied())?;
        check_sorted(b.iter().copied())?;
        let mut tags = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i] <= b[j]) {
                tags.push(Tag { timestamp_ps: a[i], channel: Channel::A });
                i += 1;
            } else {
                tags.push(Tag { timestamp_ps: b[j], channel: Channel::B });
                j += 1;
            }
        }
        Ok(Self { tags })
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn channel(&self, channel: Channel) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.timestamp_ps)
            .collect()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    /// First and last timestamp, if any.
    pub fn bounds(&self) -> Option<(u64, u64)> {
        Some((self.tags.first()?.timestamp_ps, self.tags.last()?.timestamp_ps))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TagError> {
        let mut w = BufWriter::new(out);
        writeln!(w, "{CSV_HEADER}")?;
        for t in &self.tags {
            writeln!(w, "{},{}", t.channel.index(), t.timestamp_ps)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, TagError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| TagError::Malformed("empty file".into()))??;
        if header.trim() != CSV_HEADER {
            return Err(TagError::Malformed(format!("expected header `{CSV_HEADER}`, found `{header}`")));
        }
        let mut tags = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (ch, ts) = line
                .split_once(',')
                .ok_or_else(|| TagError::Malformed(format!("line {}: `{line}`", lineno + 2)))?;
            let ch: u8 = ch
                .trim()
                .parse()
                .map_err(|_| TagError::Malformed(format!("line {}: bad channel `{ch}`", lineno + 2)))?;
            let ts: u64 = ts
                .trim()
                .parse()
                .map_err(|_| TagError::Malformed(format!("line {}: bad timestamp `{ts}`", lineno + 2)))?;
            tags.push(Tag {
                timestamp_ps: ts,
                channel: Channel::from_index(ch)?,
            });
        }
        Self::from_sorted(tags)
    }

    pub fn write_ttg1<W: Write>(&self, out: W) -> Result<(), TagError> {
        let mut w = BufWriter::new(out);
        w.write_all(TTG1_MAGIC)?;
        w.write_all(&[TTG1_VERSION])?;
        for t in &self.tags {
            w.write_all(&[t.channel.index()])?;
            w.write_all(&t.timestamp_ps.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ttg1<R: Read>(mut input: R) -> Result<Self, TagError> {
        let mut head = [0u8; 5];
        input
            .read_exact(&mut head)
            .map_err(|_| TagError::Malformed("truncated TTG1 header".into()))?;
        if &head[..4] != TTG1_MAGIC {
            return Err(TagError::Malformed("missing TTG1 magic".into()));
        }
        if head[4] != TTG1_VERSION {
            return Err(TagError::Malformed(format!("unsupported TTG1 version {}", head[4])));
        }
        let mut body = Vec::new();
        input.read_to_end(&mut body)?;
        if body.len() % 9 != 0 {
            return Err(TagError::Malformed(format!(
                "TTG1 body of {} bytes is not a whole number of 9-byte records",
                body.len()
            )));
        }
        let tags = body
            .chunks_exact(9)
            .map(|rec| {
                let mut ts = [0u8; 8];
                ts.copy_from_slice(&rec[1..]);
                Ok(Tag {
                    channel: Channel::from_index(rec[0])?,
                    timestamp_ps: u64::from_le_bytes(ts),
                })
            })
            .collect::<Result<Vec<_>, TagError>>()?;
        Self::from_sorted(tags)
    }

    /// Reads either encoding, sniffing the TTG1 magic.
    pub fn read_any<R: BufRead>(mut input: R) -> Result<Self, TagError> {
        let is_binary = input.fill_buf()?.starts_with(TTG1_MAGIC);
        if is_binary {
            Self::read_ttg1(input)
        } else {
            Self::read_csv(input)
        }
    }
}

pub(crate) fn check_sorted(ts: impl Iterator<Item = u64>) -> Result<(), TagError> {
    let mut prev: Option<u64> = None;
    for (index, t) in ts.enumerate() {
        if let Some(p) = prev {
            if t < p {
                return Err(TagError::Unsorted {
                    index,
                    previous: p,
                    current: t,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}
