//! Binary dataset cache.
//!
//! Layout (little-endian): magic `EPFLDS1`, u32 steps, u32 features,
//! u32 client count, then per client: u16-prefixed id, u64 train count,
//! u64 test count, followed by the train windows and the test windows. Each
//! window is a u16-prefixed sequence name, u64 start, u8 synthetic flag,
//! u8 label and `steps·features` f64 values.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::split::{ClientData, DatasetSplit};
use super::types::{Origin, SequenceWindow};
use crate::error::{Error, Result};
use crate::params::{read_u32, read_u64};

pub const DATASET_MAGIC: &[u8; 7] = b"EPFLDS1";

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    let b = s.as_bytes();
    let len = u16::try_from(b.len())
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "name too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(b)
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn write_window(w: &mut impl Write, win: &SequenceWindow) -> std::io::Result<()> {
    write_str(w, &win.origin.sequence)?;
    w.write_all(&(win.origin.start as u64).to_le_bytes())?;
    w.write_all(&[u8::from(win.origin.synthetic), win.label])?;
    for v in &win.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_dataset(w: &mut impl Write, split: &DatasetSplit) -> std::io::Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(split.steps as u32).to_le_bytes())?;
    w.write_all(&(split.features as u32).to_le_bytes())?;
    w.write_all(&(split.clients.len() as u32).to_le_bytes())?;
    for (id, c) in &split.clients {
        write_str(w, id)?;
        w.write_all(&(c.train.len() as u64).to_le_bytes())?;
        w.write_all(&(c.test.len() as u64).to_le_bytes())?;
        for win in c.train.iter().chain(&c.test) {
            write_window(w, win)?;
        }
    }
    Ok(())
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

pub fn read_dataset(r: &mut impl Read) -> Result<DatasetSplit> {
    let fmt = |e: std::io::Error| Error::format("dataset cache", e.to_string());
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(fmt)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("dataset cache", "bad magic"));
    }
    let steps = read_u32(r).map_err(fmt)? as usize;
    let features = read_u32(r).map_err(fmt)? as usize;
    let n_clients = read_u32(r).map_err(fmt)?;
    let width = steps
        .checked_mul(features)
        .ok_or_else(|| Error::format("dataset cache", "window shape overflows"))?;
    let mut split = DatasetSplit {
        steps,
        features,
        ..Default::default()
    };
    let mut buf = [0u8; 8];
    for _ in 0..n_clients {
        let id = read_str(r).map_err(fmt)?;
        let n_train = read_u64(r).map_err(fmt)?;
        let n_test = read_u64(r).map_err(fmt)?;
        let mut data = ClientData::default();
        for k in 0..n_train + n_test {
            let sequence = read_str(r).map_err(fmt)?;
            let start = read_u64(r).map_err(fmt)? as usize;
            let mut flags = [0u8; 2];
            r.read_exact(&mut flags).map_err(fmt)?;
            if flags[0] > 1 || flags[1] > 1 {
                return Err(Error::format("dataset cache", "flag byte out of range"));
            }
            let mut values = Vec::with_capacity(width);
            for _ in 0..width {
                r.read_exact(&mut buf).map_err(fmt)?;
                values.push(f64::from_le_bytes(buf));
            }
            let train = k < n_train;
            if train {
                push_unique(&mut data.train_sequences, &sequence);
            } else {
                push_unique(&mut data.test_sequences, &sequence);
            }
            let win = SequenceWindow::new(
                steps,
                features,
                values,
                flags[1],
                Origin {
                    individual: id.clone(),
                    sequence,
                    start,
                    synthetic: flags[0] == 1,
                },
            );
            if train {
                data.train.push(win);
            } else {
                data.test.push(win);
            }
        }
        split.clients.insert(id, data);
    }
    Ok(split)
}

pub fn save_dataset(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, split).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&mut bytes.as_slice())
}

/// Plain-text summary: window counts per label and per individual.
pub fn dataset_summary(split: &DatasetSplit) -> String {
    let mut out = String::new();
    let count = |ws: &[SequenceWindow]| {
        let falls = ws.iter().filter(|w| w.is_fall()).count();
        (ws.len() - falls, falls)
    };
    let _ = writeln!(out, "window shape: {} x {}", split.steps, split.features);
    let _ = writeln!(out, "individual  split  sequences  non-fall  fall  fall%");
    let mut totals = [(0usize, 0usize); 2];
    for (id, c) in &split.clients {
        for (i, (name, ws, seqs)) in [
            ("train", &c.train, &c.train_sequences),
            ("test", &c.test, &c.test_sequences),
        ]
        .into_iter()
        .enumerate()
        {
            let (neg, pos) = count(ws);
            totals[i].0 += neg;
            totals[i].1 += pos;
            let _ = writeln!(
                out,
                "{id:<11} {name:<6} {:<10} {neg:>8} {pos:>5} {:>6.2}",
                seqs.join(","),
                100.0 * pos as f64 / (neg + pos).max(1) as f64
            );
        }
    }
    for (name, (neg, pos)) in ["train", "test"].iter().zip(totals) {
        let _ = writeln!(
            out,
            "{:<11} {name:<6} {:<10} {neg:>8} {pos:>5} {:>6.2}",
            "all",
            "",
            100.0 * pos as f64 / (neg + pos).max(1) as f64
        );
    }
    out
}
