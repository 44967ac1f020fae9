//! Per-cell stain profiles from an instance label mask and a channel stack.
//!
//! Images are binary PGM (`P5`) files. Masks and channels use 16-bit
//! big-endian samples (maxval 65535); 8-bit files are accepted on read.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::Cell;
use crate::error::{Error, Result};

/// Row-major grid of 16-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image16 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
}

impl Image16 {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: u16) {
        self.pixels[row * self.width + col] = v;
    }
}

/// Cell instance mask: 0 is background, positive values are instance ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask(pub Image16);

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    pub channel_names: Vec<String>,
    pub images: Vec<Image16>,
}

impl ChannelStack {
    pub fn new(channel_names: Vec<String>, images: Vec<Image16>) -> Result<Self> {
        if channel_names.len() != images.len() {
            return Err(Error::InvalidInput(format!(
                "{} channel names for {} images",
                channel_names.len(),
                images.len()
            )));
        }
        Ok(Self { channel_names, images })
    }
}

#[derive(Default)]
struct Accumulator {
    count: u64,
    sum_col: u64,
    sum_row: u64,
    sums: Vec<u64>,
}

/// One row per distinct positive label, ordered by label id. Features are the
/// mean channel intensity over the instance's pixels; the centroid is the mean
/// (column, row) pixel index. Labels are set to 0; ground truth is attached
/// separately. `cell_id` is the mask label.
pub fn extract_profiles(mask: &LabelMask, stack: &ChannelStack, sample_id: &str) -> Result<Vec<Cell>> {
    let m = &mask.0;
    if stack.images.is_empty() {
        return Err(Error::InvalidInput("channel stack is empty".into()));
    }
    for (name, img) in stack.channel_names.iter().zip(&stack.images) {
        if img.width != m.width || img.height != m.height {
            return Err(Error::DimensionMismatch(format!(
                "channel `{name}` is {}x{}, mask is {}x{}",
                img.width, img.height, m.width, m.height
            )));
        }
    }
    let n_ch = stack.images.len();
    let mut acc: BTreeMap<u16, Accumulator> = BTreeMap::new();
    for row in 0..m.height {
        for col in 0..m.width {
            let idx = row * m.width + col;
            let label = m.pixels[idx];
            if label == 0 {
                continue;
            }
            let a = acc.entry(label).or_insert_with(|| Accumulator {
                sums: vec![0; n_ch],
                ..Default::default()
            });
            a.count += 1;
            a.sum_col += col as u64;
            a.sum_row += row as u64;
            for (s, img) in a.sums.iter_mut().zip(&stack.images) {
                *s += u64::from(img.pixels[idx]);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(label, a)| {
            let n = a.count as f64;
            Cell {
                cell_id: u64::from(label),
                sample_id: sample_id.to_string(),
                x: a.sum_col as f64 / n,
                y: a.sum_row as f64 / n,
                label: 0,
                features: a.sums.iter().map(|s| *s as f64 / n).collect(),
            }
        })
        .collect())
}

fn skip_ws_and_comments(data: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_header_int(data: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    *pos = skip_ws_and_comments(data, *pos);
    let start = *pos;
    while *pos < data.len() && data[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, 1, "malformed PGM header"))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image16> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(Error::parse(path, 1, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let width = read_header_int(&data, &mut pos, path)?;
    let height = read_header_int(&data, &mut pos, path)?;
    let maxval = read_header_int(&data, &mut pos, path)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(path, 1, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let needed = width * height * bytes_per;
    if data.len() < pos + needed {
        return Err(Error::parse(path, 1, "truncated PGM raster"));
    }
    let raster = &data[pos..pos + needed];
    let pixels = if bytes_per == 1 {
        raster.iter().map(|&b| u16::from(b)).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Image16::new(width, height, pixels)
}

pub fn write_pgm(image: &Image16, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(32 + image.pixels.len() * 2);
    write!(out, "P5\n{} {}\n65535\n", image.width, image.height).expect("write to vec");
    for p in &image.pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-sample descriptor: which mask and channel images make up a sample.
///
/// Text format, one directive per line, `#` starts a comment:
///
/// ```text
/// sample_id S03
/// mask mask.pgm
/// channel CD43 ch000.pgm
/// channel CD63 ch001.pgm
/// ```
///
/// Relative paths resolve against the descriptor's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDescriptor {
    pub sample_id: String,
    pub mask: PathBuf,
    pub channels: Vec<(String, PathBuf)>,
}

impl SampleDescriptor {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut sample_id = None;
        let mut mask = None;
        let mut channels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["sample_id", id] => sample_id = Some(id.to_string()),
                ["mask", p] => mask = Some(base.join(p)),
                ["channel", name, p] => channels.push((name.to_string(), base.join(p))),
                _ => return Err(Error::parse(path, i + 1, format!("unrecognized line `{line}`"))),
            }
        }
        Ok(Self {
            sample_id: sample_id.ok_or_else(|| Error::parse(path, 0, "missing sample_id"))?,
            mask: mask.ok_or_else(|| Error::parse(path, 0, "missing mask"))?,
            channels,
        })
    }

    /// Writes the descriptor with paths relative to `dir`, which must be the
    /// directory the descriptor file is written into.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut text = format!("sample_id {}\nmask {}\n", self.sample_id, rel(&self.mask));
        for (name, p) in &self.channels {
            text.push_str(&format!("channel {name} {}\n", rel(p)));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_images(&self) -> Result<(LabelMask, ChannelStack)> {
        let mask = LabelMask(read_pgm(&self.mask)?);
        let mut names = Vec::with_capacity(self.channels.len());
        let mut images = Vec::with_capacity(self.channels.len());
        for (name, p) in &self.channels {
            names.push(name.clone());
            images.push(read_pgm(p)?);
        }
        Ok((mask, ChannelStack::new(names, images)?))
    }
}
