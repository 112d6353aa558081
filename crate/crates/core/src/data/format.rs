//! Binary transition file.
//!
//! ```text
//! ODABUF1\n
//! schema_version=1\n obs_dim=9\n act_dim=3\n transition_count=N\n
//! task_ids=0,1,...\n sources=demo*20,scripted-noise*4000,...\n
//! \n
//! N records: task_id u64 LE | 25 f64 LE (s, a, r, s', a') | done u8 | a_next_valid u8
//! FNV-1a 64 of the record bytes, u64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Buffer, DataError, Source, Transition};
use crate::seeding::{fnv1a, FNV_OFFSET};
use crate::sim::{ACT_DIM, OBS_DIM};

pub const MAGIC: &[u8; 8] = b"ODABUF1\n";
pub const SCHEMA_VERSION: u32 = 1;
const FLOATS: usize = OBS_DIM + ACT_DIM + 1 + OBS_DIM + ACT_DIM;
const RECORD_LEN: usize = 8 + FLOATS * 8 + 2;


fn encode(t: &Transition, out: &mut Vec<u8>) {
    out.extend_from_slice(&t.task_id.to_le_bytes());
    let floats = t.s.iter().chain(&t.a).chain(std::iter::once(&t.r)).chain(&t.s_next).chain(&t.a_next);
    for v in floats {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(t.done as u8);
    out.push(t.a_next_valid as u8);
}

fn decode(rec: &[u8], source: Source) -> Result<Transition, DataError> {
    let f = |i: usize| f64::from_le_bytes(rec[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    let task_id = u64::from_le_bytes(rec[..8].try_into().unwrap());
    let mut s = [0.0; OBS_DIM];
    let mut a = [0.0; ACT_DIM];
    let mut s_next = [0.0; OBS_DIM];
    let mut a_next = [0.0; ACT_DIM];
    let mut i = 0;
    for v in s.iter_mut() {
        *v = f(i);
        i += 1;
    }
    for v in a.iter_mut() {
        *v = f(i);
        i += 1;
    }
    let r = f(i);
    i += 1;
    for v in s_next.iter_mut() {
        *v = f(i);
        i += 1;
    }
    for v in a_next.iter_mut() {
        *v = f(i);
        i += 1;
    }
    let flag = |b: u8| match b {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(DataError::Header(format!("invalid flag byte {other}"))),
    };
    Ok(Transition {
        s,
        a,
        r,
        s_next,
        a_next,
        done: flag(rec[RECORD_LEN - 2])?,
        a_next_valid: flag(rec[RECORD_LEN - 1])?,
        task_id,
        source,
    })
}

/// Run-length encoding of the per-transition sources.
fn sources_line(buf: &Buffer) -> String {
    let mut runs: Vec<(Source, usize)> = Vec::new();
    for t in buf.transitions() {
        match runs.last_mut() {
            Some((s, n)) if *s == t.source => *n += 1,
            _ => runs.push((t.source, 1)),
        }
    }
    runs.iter().map(|(s, n)| format!("{s}*{n}")).collect::<Vec<_>>().join(",")
}

pub fn write_buffer(buf: &Buffer, w: &mut impl Write) -> Result<(), DataError> {
    let ids = buf.task_ids().iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let mut header = Vec::new();
    header.extend_from_slice(MAGIC);
    let text = format!(
        "schema_version={SCHEMA_VERSION}\nobs_dim={OBS_DIM}\nact_dim={ACT_DIM}\ntransition_count={}\ntask_ids={ids}\nsources={}\n\n",
        buf.len(),
        sources_line(buf)
    );
    header.extend_from_slice(text.as_bytes());
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(buf.len() * RECORD_LEN);
    for t in buf.transitions() {
        encode(t, &mut payload);
    }
    w.write_all(&payload)?;
    w.write_all(&fnv1a(FNV_OFFSET, &payload).to_le_bytes())?;
    Ok(())
}

pub fn save_buffer(buf: &Buffer, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_buffer(buf, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_buffer(path: impl AsRef<Path>) -> Result<Buffer, DataError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_buffer(&bytes)
}

pub fn read_buffer(bytes: &[u8]) -> Result<Buffer, DataError> {
    if bytes.len() < MAGIC.len() {
        return Err(DataError::Truncated("shorter than the magic string".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(DataError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let end = rest
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| DataError::Truncated("header terminator not found".into()))?;
    let header = std::str::from_utf8(&rest[..end]).map_err(|_| DataError::Header("header is not UTF-8".into()))?;
    let payload_all = &rest[end + 2..];

    let mut version = None;
    let mut count = None;
    let mut task_ids: Option<Vec<u64>> = None;
    let mut sources: Option<Vec<(Source, usize)>> = None;
    for line in header.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| DataError::Header(format!("bad line {line:?}")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|e| DataError::Header(format!("{k}: {e}")));
        match k {
            "schema_version" => version = Some(v.parse::<u32>().map_err(|e| DataError::Header(format!("{k}: {e}")))?),
            "obs_dim" if num(v)? != OBS_DIM => return Err(DataError::Header(format!("obs_dim {v} != {OBS_DIM}"))),
            "act_dim" if num(v)? != ACT_DIM => return Err(DataError::Header(format!("act_dim {v} != {ACT_DIM}"))),
            "obs_dim" | "act_dim" => {}
            "transition_count" => count = Some(num(v)?),
            "task_ids" => {
                task_ids = Some(if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|x| x.parse::<u64>().map_err(|e| DataError::Header(format!("task_ids: {e}"))))
                        .collect::<Result<_, _>>()?
                })
            }
            "sources" => {
                let mut runs = Vec::new();
                for run in v.split(',').filter(|r| !r.is_empty()) {
                    let (s, n) = run.split_once('*').ok_or_else(|| DataError::Header(format!("bad source run {run:?}")))?;
                    runs.push((s.parse::<Source>()?, num(n)?));
                }
                sources = Some(runs);
            }
            other => return Err(DataError::Header(format!("unknown key {other:?}"))),
        }
    }
    let version = version.ok_or_else(|| DataError::Header("missing schema_version".into()))?;
    if version != SCHEMA_VERSION {
        return Err(DataError::VersionMismatch { found: version, expected: SCHEMA_VERSION });
    }
    let count = count.ok_or_else(|| DataError::Header("missing transition_count".into()))?;
    let task_ids = task_ids.ok_or_else(|| DataError::Header("missing task_ids".into()))?;
    let sources = sources.ok_or_else(|| DataError::Header("missing sources".into()))?;
    if sources.iter().map(|r| r.1).sum::<usize>() != count {
        return Err(DataError::Header("source runs do not cover transition_count".into()));
    }

    let need = count * RECORD_LEN + 8;
    if payload_all.len() < need {
        return Err(DataError::Truncated(format!("expected {need} payload bytes, found {}", payload_all.len())));
    }
    if payload_all.len() > need {
        return Err(DataError::Header(format!("{} trailing bytes after checksum", payload_all.len() - need)));
    }
    let payload = &payload_all[..count * RECORD_LEN];
    let stored = u64::from_le_bytes(payload_all[count * RECORD_LEN..].try_into().unwrap());
    let computed = fnv1a(FNV_OFFSET, payload);
    if stored != computed {
        return Err(DataError::Checksum { stored, computed });
    }

    let mut buf = Buffer::new();
    let mut recs = payload.chunks_exact(RECORD_LEN);
    for (source, n) in sources {
        for rec in recs.by_ref().take(n) {
            buf.push(decode(rec, source)?);
        }
    }
    if buf.task_ids() != task_ids {
        return Err(DataError::Header("task_ids do not match the records".into()));
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;

    fn sample_buffer() -> Buffer {
        let mut b = Buffer::new();
        for k in 0..5 {
            b.push(toy(1, k, Source::Demo, k == 4));
        }
        for k in 0..7 {
            let mut t = toy(3, k, Source::ScriptedNoise, k == 6);
            t.s[4] = -0.1 * k as f64;
            t.s_next[8] = f64::MIN_POSITIVE;
            t.r = if k == 6 { 1.0 } else { 0.0 };
            b.push(t);
        }
        b.push(toy(1, 9, Source::Rl, true));
        b
    }

    fn bytes_of(b: &Buffer) -> Vec<u8> {
        let mut v = Vec::new();
        write_buffer(b, &mut v).unwrap();
        v
    }

    #[test]
    fn round_trip() {
        let b = sample_buffer();
        assert_eq!(read_buffer(&bytes_of(&b)).unwrap(), b);
    }

    #[test]
    fn empty_round_trip() {
        let b = Buffer::new();
        assert_eq!(read_buffer(&bytes_of(&b)).unwrap(), b);
    }

    #[test]
    fn header_layout() {
        let bytes = bytes_of(&sample_buffer());
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.starts_with("ODABUF1\nschema_version=1\nobs_dim=9\nact_dim=3\ntransition_count=13\ntask_ids=1,3\n"));
        assert!(text.contains("sources=demo*5,scripted-noise*7,rl*1\n\n"));
    }

    #[test]
    fn every_payload_byte_flip_is_caught() {
        let b = sample_buffer();
        let bytes = bytes_of(&b);
        let start = bytes.windows(2).position(|w| w == b"\n\n").unwrap() + 2;
        for i in start..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            assert!(matches!(read_buffer(&bad), Err(DataError::Checksum { .. })), "byte {i}");
        }
    }

    #[test]
    fn distinct_errors() {
        let bytes = bytes_of(&sample_buffer());
        assert!(matches!(read_buffer(&bytes[..bytes.len() - 3]), Err(DataError::Truncated(_))));
        let mut v2 = bytes.clone();
        let pos = v2.windows(16).position(|w| w == b"schema_version=1").unwrap();
        v2[pos + 15] = b'2';
        assert!(matches!(read_buffer(&v2), Err(DataError::VersionMismatch { found: 2, .. })));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_buffer(&bad_magic), Err(DataError::BadMagic)));
        assert!(matches!(read_buffer(b"ODA"), Err(DataError::Truncated(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.odabuf");
        let b = sample_buffer();
        save_buffer(&b, &path).unwrap();
        assert_eq!(load_buffer(&path).unwrap(), b);
    }
}
