//! Plain-text data files: observations, their nodal companions, and nodal
//! grids.
//!
//! Observation file:
//! ```text
//! coeffid-obs v1, n=<n>, delta=<δ>, seed=<s>
//! <tri_index> <gx> <gy>
//! ```
//! Nodal companion (`<obs>.nodal`):
//! ```text
//! coeffid-nodal v1, n=<n>
//! <node_index> <u_clean> <q_true>
//! ```
//! Grid file: a line with `n`, then `n + 1` lines of `n + 1` values; line
//! `j` holds the nodes with y = j·h, x increasing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFile {
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub grads: Vec<Vec2>,
}

fn fmt_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}:{}: {msg}", path.display(), line))
}

fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    header
        .split(',')
        .map(str::trim)
        .find_map(|part| part.strip_prefix(key)?.strip_prefix('='))
}

pub fn write_observation(path: &Path, obs: &ObservationFile) -> Result<()> {
    let mut out = format!(
        "coeffid-obs v1, n={}, delta={}, seed={}\n",
        obs.n, obs.delta, obs.seed
    );
    for (t, g) in obs.grads.iter().enumerate() {
        writeln!(out, "{t} {} {}", g[0], g[1]).expect("writing to a string");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_observation(path: &Path) -> Result<ObservationFile> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fmt_err(path, 1, "empty file"))?;
    if !header.starts_with("coeffid-obs v1") {
        return Err(fmt_err(path, 1, "missing `coeffid-obs v1` header"));
    }
    let parse_field = |key: &str| {
        header_field(header, key).ok_or_else(|| fmt_err(path, 1, format!("header lacks {key}=")))
    };
    let n: usize = parse_field("n")?
        .parse()
        .map_err(|e| fmt_err(path, 1, format!("bad n: {e}")))?;
    let delta: f64 = parse_field("delta")?
        .parse()
        .map_err(|e| fmt_err(path, 1, format!("bad delta: {e}")))?;
    let seed: u64 = parse_field("seed")?
        .parse()
        .map_err(|e| fmt_err(path, 1, format!("bad seed: {e}")))?;
    let expected = 2 * n * n;
    let mut grads = vec![[f64::NAN; 2]; expected];
    let mut seen = vec![false; expected];
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 3 {
            return Err(fmt_err(path, lineno, "expected `tri_index gx gy`"));
        }
        let t: usize = cols[0].parse().map_err(|e| fmt_err(path, lineno, e))?;
        if t >= expected || seen[t] {
            return Err(fmt_err(
                path,
                lineno,
                format!("triangle index {t} out of range or repeated"),
            ));
        }
        let gx: f64 = cols[1].parse().map_err(|e| fmt_err(path, lineno, e))?;
        let gy: f64 = cols[2].parse().map_err(|e| fmt_err(path, lineno, e))?;
        grads[t] = [gx, gy];
        seen[t] = true;
    }
    if let Some(t) = seen.iter().position(|s| !s) {
        return Err(fmt_err(path, 0, format!("no entry for triangle {t}")));
    }
    Ok(ObservationFile {
        n,
        delta,
        seed,
        grads,
    })
}

/// Path of the nodal companion of an observation file.
pub fn nodal_path(obs_path: &Path) -> PathBuf {
    let mut s = obs_path.as_os_str().to_owned();
    s.push(".nodal");
    PathBuf::from(s)
}

/// `u_clean` and `q_true` over all nodes.
pub fn write_nodal(path: &Path, n: usize, u_clean: &[f64], q_true: &[f64]) -> Result<()> {
    let nodes = (n + 1) * (n + 1);
    if u_clean.len() != nodes || q_true.len() != nodes {
        return Err(Error::invalid(
            "nodal companion vectors must cover all nodes",
        ));
    }
    let mut out = format!("coeffid-nodal v1, n={n}\n");
    for k in 0..nodes {
        writeln!(out, "{k} {} {}", u_clean[k], q_true[k]).expect("writing to a string");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_nodal(path: &Path) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fmt_err(path, 1, "empty file"))?;
    if !header.starts_with("coeffid-nodal v1") {
        return Err(fmt_err(path, 1, "missing `coeffid-nodal v1` header"));
    }
    let n: usize = header_field(header, "n")
        .ok_or_else(|| fmt_err(path, 1, "header lacks n="))?
        .parse()
        .map_err(|e| fmt_err(path, 1, format!("bad n: {e}")))?;
    let nodes = (n + 1) * (n + 1);
    let mut u = vec![0.0; nodes];
    let mut q = vec![0.0; nodes];
    let mut count = 0;
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 3 {
            return Err(fmt_err(path, lineno, "expected `node u_clean q_true`"));
        }
        let i: usize = cols[0].parse().map_err(|e| fmt_err(path, lineno, e))?;
        if i >= nodes {
            return Err(fmt_err(path, lineno, format!("node {i} out of range")));
        }
        u[i] = cols[1].parse().map_err(|e| fmt_err(path, lineno, e))?;
        q[i] = cols[2].parse().map_err(|e| fmt_err(path, lineno, e))?;
        count += 1;
    }
    if count != nodes {
        return Err(fmt_err(
            path,
            0,
            format!("expected {nodes} node lines, found {count}"),
        ));
    }
    Ok((n, u, q))
}

pub fn grid_to_string(n: usize, values: &[f64]) -> Result<String> {
    let side = n + 1;
    if values.len() != side * side {
        return Err(Error::invalid("grid values must cover all nodes"));
    }
    let mut out = format!("{n}\n");
    for row in values.chunks(side) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_grid(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    fs::write(path, grid_to_string(n, values)?)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<(usize, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let n: usize = lines
        .next()
        .ok_or_else(|| fmt_err(path, 1, "empty file"))?
        .trim()
        .parse()
        .map_err(|e| fmt_err(path, 1, format!("bad n: {e}")))?;
    let mut values = Vec::with_capacity((n + 1) * (n + 1));
    for (k, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt_err(path, k + 2, e))?;
        if row.len() != n + 1 {
            return Err(fmt_err(path, k + 2, format!("expected {} values", n + 1)));
        }
        values.extend(row);
    }
    if values.len() != (n + 1) * (n + 1) {
        return Err(fmt_err(path, 0, format!("expected {} rows", n + 1)));
    }
    Ok((n, values))
}
