//! Client side of the external denoiser protocol.
//!
//! Request: `PDEN0001`, u32 rows, u32 cols, u32 reserved (0), f64 sigma,
//! rows·cols f32 pixels. Response: `PDEN0001`, u32 rows, u32 cols, then the
//! pixels. A `PDENERR1` frame followed by a u32 code reports a failure. All
//! integers and floats are little-endian; pixels are row-major.

use std::io::{Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use crate::error::{Error, Result};
use crate::psolver::Image;

pub const MAGIC: &[u8; 8] = b"PDEN0001";
pub const ERROR_MAGIC: &[u8; 8] = b"PDENERR1";
pub const BRIDGE_ENV: &str = "COEFFID_BRIDGE_CMD";

pub fn encode_request(w: &mut impl Write, img: &Image, sigma: f64) -> Result<()> {
    let rows = u32::try_from(img.rows).map_err(|_| Error::invalid("image too large"))?;
    let cols = u32::try_from(img.cols).map_err(|_| Error::invalid("image too large"))?;
    let mut buf = Vec::with_capacity(32 + 4 * img.pixels.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&sigma.to_le_bytes());
    for &v in &img.pixels {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Bridge(format!("truncated {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_pixels(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut raw = vec![0u8; 4 * count];
    read_exact(r, &mut raw, "pixel block")?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Parses a request frame; the counterpart of `encode_request`.
pub fn decode_request(r: &mut impl Read) -> Result<(Image, f64)> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "request magic")?;
    if &magic != MAGIC {
        return Err(Error::Bridge(format!("bad request magic {magic:?}")));
    }
    let rows = read_u32(r, "rows")? as usize;
    let cols = read_u32(r, "cols")? as usize;
    let reserved = read_u32(r, "reserved")?;
    if reserved != 0 {
        return Err(Error::Bridge(format!(
            "reserved field is {reserved}, expected 0"
        )));
    }
    let mut s = [0u8; 8];
    read_exact(r, &mut s, "sigma")?;
    let pixels = read_pixels(r, rows * cols)?;
    Ok((Image::new(rows, cols, pixels)?, f64::from_le_bytes(s)))
}

pub fn encode_response(w: &mut impl Write, img: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * img.pixels.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(img.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(img.cols as u32).to_le_bytes());
    for &v in &img.pixels {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Parses a response and checks it against the requested shape.
pub fn decode_response(r: &mut impl Read, rows: usize, cols: usize) -> Result<Image> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, "response magic")?;
    if &magic == ERROR_MAGIC {
        let code = read_u32(r, "error code").unwrap_or(u32::MAX);
        return Err(Error::Bridge(format!(
            "denoiser reported error code {code}"
        )));
    }
    if &magic != MAGIC {
        return Err(Error::Bridge(format!("bad response magic {magic:?}")));
    }
    let got_rows = read_u32(r, "rows")? as usize;
    let got_cols = read_u32(r, "cols")? as usize;
    if got_rows != rows || got_cols != cols {
        return Err(Error::Bridge(format!(
            "reply is {got_rows}x{got_cols}, request was {rows}x{cols}"
        )));
    }
    let pixels = read_pixels(r, rows * cols)?;
    Image::new(rows, cols, pixels)
}

/// Resolves the launch command: the environment variable overrides the
/// configured one.
pub fn bridge_command(configured: Option<&str>) -> Option<String> {
    match std::env::var(BRIDGE_ENV) {
        Ok(cmd) if !cmd.trim().is_empty() => Some(cmd),
        _ => configured.map(str::to_owned),
    }
}

/// A running denoiser process, one request in flight at a time.
pub struct BridgeClient {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: ChildStdout,
    command: String,
}

impl BridgeClient {
    pub fn spawn(configured: Option<&str>) -> Result<Self> {
        let command = bridge_command(configured).ok_or_else(|| {
            Error::Bridge(format!(
                "no denoiser command configured and {BRIDGE_ENV} is unset"
            ))
        })?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot launch `{command}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(Self {
            child,
            stdin,
            stdout,
            command,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn denoise(&mut self, img: &Image, sigma: f64) -> Result<Image> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| Error::Bridge("bridge input already closed".into()))?;
        encode_request(stdin, img, sigma).map_err(|e| match e {
            Error::Io(io) => Error::Bridge(format!("writing request to `{}`: {io}", self.command)),
            other => other,
        })?;
        decode_response(&mut self.stdout, img.rows, img.cols).map_err(|e| match e {
            Error::Bridge(msg) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| format!(" (process exited: {s})"))
                    .unwrap_or_default();
                Error::Bridge(format!("{msg}{status}"))
            }
            other => other,
        })
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        drop(self.stdin.take());
        if matches!(self.child.try_wait(), Ok(None)) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}
