//! `ORLD` binary dataset files and the CSV inspection mirror.
//!
//! Layout (little-endian):
//!
//! ```text
//! header : b"ORLD" | version u32 | state_dim u32 | n_actions u32 | n_records u64
//! record : episode_id u64 | step_index u64 | state f64 x state_dim | action u32
//!          | reward_rev f64 | reward_eng f64 | next_state f64 x state_dim
//!          | done u8 | time_bucket u32
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{OfflineDataset, Transition};
use crate::{Error, Result};

pub const ORLD_MAGIC: &[u8; 4] = b"ORLD";
pub const ORLD_VERSION: u32 = 1;

pub fn write_orld<W: Write>(ds: &OfflineDataset, mut w: W) -> Result<()> {
    w.write_all(ORLD_MAGIC)?;
    w.write_u32::<LE>(ORLD_VERSION)?;
    w.write_u32::<LE>(ds.state_dim() as u32)?;
    w.write_u32::<LE>(ds.n_actions() as u32)?;
    w.write_u64::<LE>(ds.len() as u64)?;
    for t in ds.transitions() {
        w.write_u64::<LE>(t.episode_id)?;
        w.write_u64::<LE>(t.step_index)?;
        for v in &t.state {
            w.write_f64::<LE>(*v)?;
        }
        w.write_u32::<LE>(t.action)?;
        w.write_f64::<LE>(t.reward_rev)?;
        w.write_f64::<LE>(t.reward_eng)?;
        for v in &t.next_state {
            w.write_f64::<LE>(*v)?;
        }
        w.write_u8(u8::from(t.done))?;
        w.write_u32::<LE>(t.time_bucket)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_orld<R: Read>(mut r: R) -> Result<OfflineDataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ORLD_MAGIC {
        return Err(Error::Format("missing ORLD magic".into()));
    }
    let version = r.read_u32::<LE>()?;
    if version != ORLD_VERSION {
        return Err(Error::Format(format!("unsupported ORLD version {version}")));
    }
    let state_dim = r.read_u32::<LE>()? as usize;
    let n_actions = r.read_u32::<LE>()? as usize;
    let n_records = r.read_u64::<LE>()? as usize;
    let read_vec = |r: &mut R| -> Result<Vec<f64>> {
        (0..state_dim).map(|_| Ok(r.read_f64::<LE>()?)).collect()
    };
    let mut ts = Vec::with_capacity(n_records.min(1 << 24));
    for _ in 0..n_records {
        let episode_id = r.read_u64::<LE>()?;
        let step_index = r.read_u64::<LE>()?;
        let state = read_vec(&mut r)?;
        let action = r.read_u32::<LE>()?;
        let reward_rev = r.read_f64::<LE>()?;
        let reward_eng = r.read_f64::<LE>()?;
        let next_state = read_vec(&mut r)?;
        let done = match r.read_u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("invalid done byte {b}"))),
        };
        let time_bucket = r.read_u32::<LE>()?;
        ts.push(Transition {
            episode_id,
            step_index,
            state,
            action,
            reward_rev,
            reward_eng,
            next_state,
            done,
            time_bucket,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    OfflineDataset::new(ts, state_dim, n_actions)
}

/// One row per transition; state columns `s0..s{d-1}`, next-state columns
/// `ns0..ns{d-1}`.
pub fn write_csv<W: Write>(ds: &OfflineDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = ds.state_dim();
    let mut header: Vec<String> = vec!["episode_id".into(), "step_index".into()];
    header.extend((0..d).map(|j| format!("s{j}")));
    header.extend(["action", "reward_rev", "reward_eng"].map(String::from));
    header.extend((0..d).map(|j| format!("ns{j}")));
    header.extend(["done", "time_bucket"].map(String::from));
    out.write_record(&header)?;
    for t in ds.transitions() {
        let mut row: Vec<String> = vec![t.episode_id.to_string(), t.step_index.to_string()];
        row.extend(t.state.iter().map(f64::to_string));
        row.push(t.action.to_string());
        row.push(t.reward_rev.to_string());
        row.push(t.reward_eng.to_string());
        row.extend(t.next_state.iter().map(f64::to_string));
        row.push(u8::from(t.done).to_string());
        row.push(t.time_bucket.to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
