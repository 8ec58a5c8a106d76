//! Binary parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      "ORLW"
//! version    u32
//! head       u32            0 = plain, 1 = dueling
//! n_actions  u32
//! n_widths   u32
//! widths     u32 x n_widths  input width then hidden widths
//! params     f64 ...         per layer: W row-major (fan_in x fan_out), then b;
//!                            trunk layers first, then the head
//!                            (plain: output; dueling: value then advantage)
//! has_norm   u8
//! mean, std  f64 x input     only when has_norm = 1
//! meta_len   u32
//! meta       utf-8 bytes     free-form metadata (JSON for trained agents)
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::network::{HeadKind, QNetwork};
use crate::dataset::Normalization;
use crate::{Error, Result};

pub const ORLW_MAGIC: &[u8; 4] = b"ORLW";
pub const ORLW_VERSION: u32 = 1;

pub fn write_orlw<W: Write>(
    mut w: W,
    net: &QNetwork,
    norm: Option<&Normalization>,
    meta: &str,
) -> Result<()> {
    w.write_all(ORLW_MAGIC)?;
    w.write_u32::<LittleEndian>(ORLW_VERSION)?;
    w.write_u32::<LittleEndian>(match net.head() {
        HeadKind::Plain => 0,
        HeadKind::Dueling => 1,
    })?;
    w.write_u32::<LittleEndian>(net.n_actions() as u32)?;
    let widths = net.widths();
    w.write_u32::<LittleEndian>(widths.len() as u32)?;
    for width in &widths {
        w.write_u32::<LittleEndian>(*width as u32)?;
    }
    for p in net.params_flat() {
        w.write_f64::<LittleEndian>(p)?;
    }
    match norm {
        Some(n) => {
            if n.dim() != net.input_dim() {
                return Err(Error::Dimension {
                    expected: net.input_dim(),
                    got: n.dim(),
                });
            }
            w.write_u8(1)?;
            for v in n.mean.iter().chain(n.std.iter()) {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        None => w.write_u8(0)?,
    }
    w.write_u32::<LittleEndian>(meta.len() as u32)?;
    w.write_all(meta.as_bytes())?;
    Ok(())
}

pub fn read_orlw<R: Read>(mut r: R) -> Result<(QNetwork, Option<Normalization>, String)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ORLW_MAGIC {
        return Err(Error::Format("not an ORLW checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != ORLW_VERSION {
        return Err(Error::Format(format!("unsupported ORLW version {version}")));
    }
    let head = match r.read_u32::<LittleEndian>()? {
        0 => HeadKind::Plain,
        1 => HeadKind::Dueling,
        other => return Err(Error::Format(format!("unknown head kind {other}"))),
    };
    let n_actions = r.read_u32::<LittleEndian>()? as usize;
    let n_widths = r.read_u32::<LittleEndian>()? as usize;
    if n_widths == 0 || n_widths > 64 {
        return Err(Error::Format(format!("implausible layer count {n_widths}")));
    }
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let mut net =
        QNetwork::zeros(&widths, n_actions, head).map_err(|e| Error::Format(e.to_string()))?;
    let mut params = vec![0.0; net.param_count()];
    r.read_f64_into::<LittleEndian>(&mut params)?;
    net.set_params_flat(&params)?;
    let norm = match r.read_u8()? {
        0 => None,
        1 => {
            let d = widths[0];
            let mut mean = vec![0.0; d];
            let mut std = vec![0.0; d];
            r.read_f64_into::<LittleEndian>(&mut mean)?;
            r.read_f64_into::<LittleEndian>(&mut std)?;
            Some(Normalization { mean, std })
        }
        other => return Err(Error::Format(format!("invalid normalization flag {other}"))),
    };
    let meta_len = r.read_u32::<LittleEndian>()? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let meta = String::from_utf8(meta).map_err(|e| Error::Format(e.to_string()))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            rest.len()
        )));
    }
    Ok((net, norm, meta))
}
