//! Append-only file of length-prefixed records.
//!
//! Each record is a 4-byte big-endian length followed by that many bytes. On
//! open, a torn tail (an incomplete final record left by a crash mid-append)
//! is truncated away; every record whose append returned is kept.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const MAX_RECORD_LEN: usize = 64 * 1024 * 1024;

/// Splits `bytes` into complete records. Returns the records and the length
/// of the valid prefix; anything after it is a torn tail.
pub fn scan_records(bytes: &[u8]) -> (Vec<&[u8]>, usize) {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while bytes.len() - pos >= 4 {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        if len > MAX_RECORD_LEN || bytes.len() - pos - 4 < len {
            break;
        }
        out.push(&bytes[pos + 4..pos + 4 + len]);
        pos += 4 + len;
    }
    (out, pos)
}

#[derive(Debug)]
pub struct RecordLog {
    file: File,
    path: PathBuf,
    len: u64,
    sync: bool,
}

impl RecordLog {
    /// Opens (creating if needed) the log at `path` and returns every complete
    /// record in append order. `sync` makes each append fsync before returning.
    pub fn open(path: impl AsRef<Path>, sync: bool) -> io::Result<(Self, Vec<Vec<u8>>)> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (records, valid) = scan_records(&bytes);
        let records: Vec<Vec<u8>> = records.into_iter().map(<[u8]>::to_vec).collect();
        if valid < bytes.len() {
            tracing::warn!(
                path = %path.display(),
                dropped = bytes.len() - valid,
                "truncating torn tail"
            );
            file.set_len(valid as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(valid as u64))?;
        Ok((
            Self {
                file,
                path,
                len: valid as u64,
                sync,
            },
            records,
        ))
    }

    pub fn append(&mut self, record: &[u8]) -> io::Result<()> {
        if record.len() > MAX_RECORD_LEN {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "record too large",
            ));
        }
        let mut buf = Vec::with_capacity(4 + record.len());
        buf.extend_from_slice(&(record.len() as u32).to_be_bytes());
        buf.extend_from_slice(record);
        if let Err(e) = self.file.write_all(&buf) {
            // Leave no partial record behind for the next append to follow.
            let _ = self.file.set_len(self.len);
            let _ = self.file.seek(SeekFrom::Start(self.len));
            return Err(e);
        }
        if self.sync {
            self.file.sync_data()?;
        }
        self.len += buf.len() as u64;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn byte_len(&self) -> u64 {
        self.len
    }
}

/// Replaces `path` with `contents` via write-to-temp-then-rename.
pub fn write_atomic(path: &Path, contents: &[u8], sync: bool) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        if sync {
            f.sync_all()?;
        }
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/log");
        {
            let (mut log, recs) = RecordLog::open(&path, false).unwrap();
            assert!(recs.is_empty());
            log.append(b"one").unwrap();
            log.append(b"").unwrap();
            log.append(b"three").unwrap();
        }
        let (_, recs) = RecordLog::open(&path, true).unwrap();
        assert_eq!(recs, vec![b"one".to_vec(), vec![], b"three".to_vec()]);
    }

    #[test]
    fn torn_tail_is_truncated_and_appends_continue() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        {
            let (mut log, _) = RecordLog::open(&path, false).unwrap();
            log.append(b"keep").unwrap();
        }
        // half a header, then half a record
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0, 9, b'x', b'y']).unwrap();
        drop(f);
        {
            let (mut log, recs) = RecordLog::open(&path, false).unwrap();
            assert_eq!(recs, vec![b"keep".to_vec()]);
            assert_eq!(log.byte_len(), 8);
            log.append(b"next").unwrap();
        }
        let (_, recs) = RecordLog::open(&path, false).unwrap();
        assert_eq!(recs, vec![b"keep".to_vec(), b"next".to_vec()]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g/x.offset");
        write_atomic(&p, b"1", false).unwrap();
        write_atomic(&p, b"22", true).unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"22");
    }

    proptest! {
        #[test]
        fn scan_never_overruns(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let (recs, valid) = scan_records(&bytes);
            prop_assert!(valid <= bytes.len());
            let total: usize = recs.iter().map(|r| r.len() + 4).sum();
            prop_assert_eq!(total, valid);
        }
    }
}
