//! Binary dataset files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "STTDATA\0"
//! version  u32
//! length   u64      byte length of the payload that follows
//! payload:
//!   schema      4 x u32   max_width, max_height, max_doors, key_colors
//!   gamma       f64
//!   task table  u32 count, then per task: u16 id, u32 byte length, utf-8 text form
//!   episodes    u64 count, then per episode: u32 record length and the record
//!     record: u32 task_id, u32 n_steps,
//!             n_steps x (n_components x u16 state, u8 action, f64 reward),
//!             n_components x u16 final state
//! crc32    u32      over every preceding byte
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, EncodingSchema, StateEncoding, Step, Trajectory};
use crate::error::{Error, Result};
use crate::gridworld::{ActionId, TaskSpec};

pub const DATASET_MAGIC: &[u8; 8] = b"STTDATA\0";
pub const DATASET_VERSION: u32 = 1;

const WHAT: &str = "dataset";
const HEADER_LEN: usize = 8 + 4 + 8;

fn encode_payload(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [d.schema.max_width, d.schema.max_height, d.schema.max_doors, d.schema.key_colors] {
        out.extend((v as u32).to_le_bytes());
    }
    out.extend(d.gamma.to_le_bytes());
    out.extend((d.tasks.len() as u32).to_le_bytes());
    for t in &d.tasks {
        let text = t.to_string();
        out.extend(t.task_id.to_le_bytes());
        out.extend((text.len() as u32).to_le_bytes());
        out.extend(text.as_bytes());
    }
    out.extend((d.episodes.len() as u64).to_le_bytes());
    let mut record = Vec::new();
    for e in &d.episodes {
        record.clear();
        record.extend((e.task_id as u32).to_le_bytes());
        record.extend((e.steps.len() as u32).to_le_bytes());
        for s in &e.steps {
            for &c in &s.state.0 {
                record.extend(c.to_le_bytes());
            }
            record.push(s.action.index() as u8);
            record.extend(s.reward.to_le_bytes());
        }
        for &c in &e.final_state.0 {
            record.extend(c.to_le_bytes());
        }
        out.extend((record.len() as u32).to_le_bytes());
        out.extend(&record);
    }
    out
}

/// Serializes `dataset` into `w`.
pub fn write_to(dataset: &Dataset, mut w: impl Write) -> std::io::Result<()> {
    let payload = encode_payload(dataset);
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    bytes.extend(DATASET_MAGIC);
    bytes.extend(DATASET_VERSION.to_le_bytes());
    bytes.extend((payload.len() as u64).to_le_bytes());
    bytes.extend(payload);
    let crc = crc32fast::hash(&bytes);
    bytes.extend(crc.to_le_bytes());
    w.write_all(&bytes)
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_to(dataset, &mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a dataset from `r` (to end of stream).
pub fn read_from(mut r: impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<reader>", e))?;
    decode(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| malformed("record runs past the payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Malformed { what: WHAT, detail: detail.into() }
}

fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < DATASET_MAGIC.len() {
        return Err(Error::Truncated { what: WHAT });
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(Error::BadMagic { what: WHAT, expected: "STTDATA" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { what: WHAT });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch { what: WHAT, found: version, expected: DATASET_VERSION });
    }
    let payload_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let total = (HEADER_LEN as u64).saturating_add(payload_len).saturating_add(4);
    if (bytes.len() as u64) < total {
        return Err(Error::Truncated { what: WHAT });
    }
    if bytes.len() as u64 > total {
        return Err(malformed("trailing bytes after checksum"));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Checksum { what: WHAT, stored, computed });
    }

    let mut c = Cursor { buf: &bytes[HEADER_LEN..body_end], pos: 0 };
    let mut dims = [0u8; 4];
    for d in &mut dims {
        *d = u8::try_from(c.u32()?).map_err(|_| malformed("schema dimension exceeds 255"))?;
    }
    let schema = EncodingSchema { max_width: dims[0], max_height: dims[1], max_doors: dims[2], key_colors: dims[3] };
    let gamma = c.f64()?;
    let n_tasks = c.u32()? as usize;
    let mut tasks = Vec::with_capacity(n_tasks.min(1024));
    for _ in 0..n_tasks {
        let id = c.u16()?;
        let len = c.u32()? as usize;
        let text = std::str::from_utf8(c.take(len)?).map_err(|_| malformed("task spec is not utf-8"))?;
        let spec: TaskSpec = text.parse()?;
        tasks.push(spec.with_task_id(id));
    }
    let n_episodes = c.u64()?;
    let n_comp = schema.n_components();
    let mut episodes = Vec::with_capacity((n_episodes as usize).min(1 << 16));
    for _ in 0..n_episodes {
        let record_len = c.u32()? as usize;
        let mut r = Cursor { buf: c.take(record_len)?, pos: 0 };
        let task_id = u16::try_from(r.u32()?).map_err(|_| malformed("task id exceeds u16"))?;
        let n_steps = r.u32()? as usize;
        let read_state = |r: &mut Cursor| -> Result<StateEncoding> {
            (0..n_comp).map(|_| r.u16()).collect::<Result<Vec<_>>>().map(StateEncoding)
        };
        let mut steps = Vec::with_capacity(n_steps.min(1 << 16));
        for _ in 0..n_steps {
            let state = read_state(&mut r)?;
            let a = r.u8()? as usize;
            let action = ActionId::from_index(a).ok_or_else(|| malformed(format!("action id {a} out of range")))?;
            let reward = r.f64()?;
            steps.push(Step { state, action, reward });
        }
        let final_state = read_state(&mut r)?;
        if r.pos != record_len {
            return Err(malformed("episode record length disagrees with its contents"));
        }
        episodes.push(Trajectory::new(task_id, steps, final_state, gamma));
    }
    if c.pos != c.buf.len() {
        return Err(malformed("unread bytes after the last episode"));
    }
    Ok(Dataset { schema, tasks, gamma, episodes })
}
