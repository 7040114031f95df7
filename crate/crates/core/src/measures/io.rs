//! CSV and framed binary encodings of ensembles and flows.
//!
//! CSV rows are `t, x_1..x_n, u_1..u_q, w`. The binary format is a sequence
//! of frames, each prefixed by its payload length in bytes (u64); a payload
//! is `n: u32, q: u32, count: u64, t: f64` followed by `count` atoms of
//! `n + q + 1` f64 values. Everything is little-endian.

use std::io::{BufRead, Read, Write};

use super::{Ensemble, MeasureFlow};
use crate::error::{domain, Error, Result};
use crate::model::TimeGrid;

fn header(n: usize, q: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x_{i}")));
    cols.extend((1..=q).map(|i| format!("u_{i}")));
    cols.push("w".into());
    cols.join(",")
}

fn write_rows<W: Write>(out: &mut W, e: &Ensemble) -> Result<()> {
    for i in 0..e.len() {
        let mut row = format!("{}", e.time());
        for d in 0..e.n() {
            row.push_str(&format!(",{}", e.state_coord(i, d)));
        }
        for u in e.control(i) {
            row.push_str(&format!(",{u}"));
        }
        row.push_str(&format!(",{}", e.weight(i)));
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub fn write_ensemble_csv<W: Write>(out: &mut W, e: &Ensemble) -> Result<()> {
    writeln!(out, "{}", header(e.n(), e.q()))?;
    write_rows(out, e)
}

/// All frames of a flow in one table, ordered by time.
pub fn write_flow_csv<W: Write>(out: &mut W, flow: &MeasureFlow) -> Result<()> {
    writeln!(out, "{}", header(flow.n(), flow.q()))?;
    for f in flow.frames() {
        write_rows(out, f)?;
    }
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let cols: Vec<&str> = line.trim().split(',').collect();
    if cols.first() != Some(&"t") || cols.last() != Some(&"w") {
        return Err(domain("CSV header must start with t and end with w"));
    }
    let n = cols.iter().filter(|c| c.starts_with("x_")).count();
    let q = cols.iter().filter(|c| c.starts_with("u_")).count();
    if n + q + 2 != cols.len() {
        return Err(domain("unrecognised CSV columns"));
    }
    Ok((n, q))
}

/// Reads CSV rows grouped by consecutive equal time stamps.
pub fn read_frames_csv<R: BufRead>(input: R) -> Result<Vec<Ensemble>> {
    let mut lines = input.lines();
    let head = lines.next().ok_or_else(|| domain("empty CSV"))??;
    let (n, q) = parse_header(&head)?;
    let mut frames = Vec::new();
    let mut cur: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| domain(format!("line {}: {e}", lineno + 2)))?;
        if vals.len() != n + q + 2 {
            return Err(domain(format!(
                "line {}: expected {} fields",
                lineno + 2,
                n + q + 2
            )));
        }
        let t = vals[0];
        if cur.as_ref().is_some_and(|c| c.0 != t) {
            let (t0, xs, us, ws) = cur.take().unwrap();
            frames.push(Ensemble::new(t0, n, q, xs, us, ws)?);
        }
        let c = cur.get_or_insert_with(|| (t, Vec::new(), Vec::new(), Vec::new()));
        c.1.extend_from_slice(&vals[1..1 + n]);
        c.2.extend_from_slice(&vals[1 + n..1 + n + q]);
        c.3.push(vals[n + q + 1]);
    }
    if let Some((t0, xs, us, ws)) = cur {
        frames.push(Ensemble::new(t0, n, q, xs, us, ws)?);
    }
    Ok(frames)
}

pub fn read_flow_csv<R: BufRead>(input: R, grid: TimeGrid) -> Result<MeasureFlow> {
    MeasureFlow::new(grid, read_frames_csv(input)?)
}

pub fn write_ensemble_binary<W: Write>(out: &mut W, e: &Ensemble) -> Result<()> {
    let (n, q) = (e.n(), e.q());
    let mut buf = Vec::with_capacity(24 + e.len() * (n + q + 1) * 8);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(q as u32).to_le_bytes());
    buf.extend_from_slice(&(e.len() as u64).to_le_bytes());
    buf.extend_from_slice(&e.time().to_le_bytes());
    for i in 0..e.len() {
        for d in 0..n {
            buf.extend_from_slice(&e.state_coord(i, d).to_le_bytes());
        }
        for u in e.control(i) {
            buf.extend_from_slice(&u.to_le_bytes());
        }
        buf.extend_from_slice(&e.weight(i).to_le_bytes());
    }
    out.write_all(&(buf.len() as u64).to_le_bytes())?;
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_flow_binary<W: Write>(out: &mut W, flow: &MeasureFlow) -> Result<()> {
    flow.frames()
        .iter()
        .try_for_each(|f| write_ensemble_binary(out, f))
}

fn take<const K: usize>(buf: &[u8], at: &mut usize) -> Result<[u8; K]> {
    let s = buf
        .get(*at..*at + K)
        .ok_or_else(|| domain("truncated binary frame"))?;
    *at += K;
    Ok(s.try_into().unwrap())
}

/// Reads one frame; `Ok(None)` at a clean end of input.
pub fn read_ensemble_binary<R: Read>(input: &mut R) -> Result<Option<Ensemble>> {
    let mut len = [0u8; 8];
    match input.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::from(e)),
    }
    let len = u64::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    let mut at = 0;
    let n = u32::from_le_bytes(take(&buf, &mut at)?) as usize;
    let q = u32::from_le_bytes(take(&buf, &mut at)?) as usize;
    let count = u64::from_le_bytes(take(&buf, &mut at)?) as usize;
    let t = f64::from_le_bytes(take(&buf, &mut at)?);
    if len != 24 + count * (n + q + 1) * 8 {
        return Err(domain("binary frame length does not match its header"));
    }
    let (mut xs, mut us, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..count {
        for _ in 0..n {
            xs.push(f64::from_le_bytes(take(&buf, &mut at)?));
        }
        for _ in 0..q {
            us.push(f64::from_le_bytes(take(&buf, &mut at)?));
        }
        ws.push(f64::from_le_bytes(take(&buf, &mut at)?));
    }
    Ensemble::new(t, n, q, xs, us, ws).map(Some)
}

pub fn read_flow_binary<R: Read>(input: &mut R, grid: TimeGrid) -> Result<MeasureFlow> {
    let mut frames = Vec::new();
    while let Some(f) = read_ensemble_binary(input)? {
        frames.push(f);
    }
    MeasureFlow::new(grid, frames)
}
