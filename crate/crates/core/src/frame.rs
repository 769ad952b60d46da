//! Torn-write-safe record framing shared by the broker journal and the
//! results log.
//!
//! Each record on disk is:
//!
//! ```text
//! [len: u32 BE][payload: len bytes][crc32(payload): u32 BE]
//! ```
//!
//! A reader stops at the first record whose header, body or checksum is
//! incomplete or wrong; everything after that point is treated as a torn
//! tail and may be truncated away.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Upper bound on a single record's payload.
pub const MAX_RECORD_BYTES: usize = 64 * 1024 * 1024;

const HEADER: usize = 4;
const TRAILER: usize = 4;

pub fn encode(payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + payload.len() + TRAILER);
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    buf.extend_from_slice(&crc32fast::hash(payload).to_be_bytes());
    buf
}

/// Result of scanning a framed byte stream.
#[derive(Debug, Default)]
pub struct Scan {
    pub records: Vec<Vec<u8>>,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
    /// True when bytes past `valid_len` were ignored.
    pub torn: bool,
}

/// Decodes every complete, checksum-valid record from the front of `bytes`.
pub fn scan(bytes: &[u8]) -> Scan {
    let mut out = Scan::default();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let Some(len_bytes) = bytes.get(pos..pos + HEADER) else {
            break;
        };
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        if len > MAX_RECORD_BYTES {
            break;
        }
        let body_start = pos + HEADER;
        let Some(body) = bytes.get(body_start..body_start + len) else {
            break;
        };
        let Some(crc_bytes) = bytes.get(body_start + len..body_start + len + TRAILER) else {
            break;
        };
        if u32::from_be_bytes(crc_bytes.try_into().unwrap()) != crc32fast::hash(body) {
            break;
        }
        out.records.push(body.to_vec());
        pos = body_start + len + TRAILER;
    }
    out.valid_len = pos as u64;
    out.torn = pos < bytes.len();
    out
}

/// Append-only writer over a framed file.
#[derive(Debug)]
pub struct FramedLog {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl FramedLog {
    /// Opens (creating if needed) the file at `path`, drops any torn tail and
    /// returns the log together with the records already present.
    pub fn open(path: impl AsRef<Path>) -> io::Result<(Self, Scan)> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let scan = scan(&bytes);
        if scan.torn {
            tracing::warn!(
                path = %path.display(),
                valid = scan.valid_len,
                total = bytes.len(),
                "truncating torn tail"
            );
            file.set_len(scan.valid_len)?;
            file.sync_all()?;
        }
        Ok((
            Self {
                path,
                writer: BufWriter::new(file),
            },
            scan,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and flushes it to the OS. Call [`FramedLog::sync`]
    /// for durability.
    pub fn append(&mut self, payload: &[u8]) -> io::Result<()> {
        if payload.len() > MAX_RECORD_BYTES {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("record of {} bytes exceeds limit", payload.len()),
            ));
        }
        self.writer.write_all(&encode(payload))?;
        self.writer.flush()
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.writer.flush()?;
        self.writer.get_ref().sync_data()
    }

    /// Atomically replaces the file's contents with `records`.
    pub fn rewrite<'a>(&mut self, records: impl IntoIterator<Item = &'a [u8]>) -> io::Result<()> {
        let tmp = self.path.with_extension("compact");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for r in records {
                out.write_all(&encode(r))?;
            }
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        let file = OpenOptions::new().append(true).open(&self.path)?;
        self.writer = BufWriter::new(file);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_scan_round_trip(records in proptest::collection::vec(
            proptest::collection::vec(any::<u8>(), 0..64), 0..16)
        ) {
            let bytes: Vec<u8> = records.iter().flat_map(|r| encode(r)).collect();
            let s = scan(&bytes);
            prop_assert!(!s.torn);
            prop_assert_eq!(s.valid_len as usize, bytes.len());
            prop_assert_eq!(s.records, records);
        }

        #[test]
        fn any_truncation_keeps_a_prefix(
            records in proptest::collection::vec(
                proptest::collection::vec(any::<u8>(), 0..32), 1..8),
            cut in any::<prop::sample::Index>(),
        ) {
            let bytes: Vec<u8> = records.iter().flat_map(|r| encode(r)).collect();
            let cut = cut.index(bytes.len());
            let s = scan(&bytes[..cut]);
            prop_assert!(s.records.len() <= records.len());
            prop_assert_eq!(&s.records[..], &records[..s.records.len()]);
        }
    }

    #[test]
    fn corrupt_crc_stops_scan() {
        let mut bytes = encode(b"first");
        let mut second = encode(b"second");
        let last = second.len() - 1;
        second[last] ^= 0xff;
        bytes.extend(second);
        let s = scan(&bytes);
        assert_eq!(s.records, vec![b"first".to_vec()]);
        assert!(s.torn);
    }

    #[test]
    fn open_truncates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        {
            let (mut log, scan) = FramedLog::open(&path).unwrap();
            assert!(scan.records.is_empty());
            log.append(b"one").unwrap();
            log.append(b"two").unwrap();
            log.sync().unwrap();
        }
        let mut raw = std::fs::read(&path).unwrap();
        raw.extend_from_slice(&[0, 0, 0, 9, b'x']);
        std::fs::write(&path, &raw).unwrap();

        let (mut log, scan) = FramedLog::open(&path).unwrap();
        assert!(scan.torn);
        assert_eq!(scan.records.len(), 2);
        log.append(b"three").unwrap();
        drop(log);
        let (_, scan) = FramedLog::open(&path).unwrap();
        assert!(!scan.torn);
        assert_eq!(scan.records.last().unwrap(), b"three");
    }

    #[test]
    fn rewrite_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        let (mut log, _) = FramedLog::open(&path).unwrap();
        for r in [b"a", b"b", b"c"] {
            log.append(r).unwrap();
        }
        log.rewrite([b"z".as_slice()]).unwrap();
        log.append(b"y").unwrap();
        drop(log);
        let (_, scan) = FramedLog::open(&path).unwrap();
        assert_eq!(scan.records, vec![b"z".to_vec(), b"y".to_vec()]);
    }
}
