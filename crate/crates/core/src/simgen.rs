//! Synthetic multiplex tissue samples with planted disk-shaped tumors.
//!
//! Each sample is a square field of uniformly scattered cells. Every channel
//! has an integer baseline intensity shared by the whole dataset. Melanoma
//! samples get one tumor disk; cells inside it are labelled 1 and a
//! dataset-wide subset of "marker" channels is shifted upward for them. On top
//! sits a spatially smooth per-sample nuisance field and independent
//! Gaussian noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, CellTable, Diagnosis, SampleInfo, SampleManifest};
use crate::error::{Error, Result};
use crate::ingest::{write_pgm, Image16, SampleDescriptor};
use crate::rng::{derive_seed, seeded};

/// Share of channels that respond to the tumor.
pub const MARKER_CHANNEL_FRACTION: f64 = 0.25;
/// Channel baselines are drawn uniformly from this intensity range.
pub const BASELINE_RANGE: (u32, u32) = (500, 3000);
/// Radius of the disk each cell occupies in emitted masks.
pub const EMITTED_CELL_RADIUS_PX: f64 = 3.0;
/// Nuisance field standard deviation as a fraction of `noise_sd`.
pub const FIELD_SD_FRACTION: f64 = 0.3;
const FOURIER_TERMS: usize = 16;
const PIXEL_SIZE_UM: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_samples: usize,
    pub fraction_melanoma: f64,
    pub cells_per_sample: usize,
    pub n_channels: usize,
    pub field_size_px: usize,
    pub tumor_radius_px: f64,
    /// Upward shift of marker channels inside the tumor, in intensity units.
    pub class_mean_shift: f64,
    pub noise_sd: f64,
    /// Correlation length (px) of the nuisance field; 0 disables it. The
    /// field's standard deviation is `FIELD_SD_FRACTION * noise_sd`.
    pub spatial_smoothing: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_samples: 12,
            fraction_melanoma: 0.75,
            cells_per_sample: 500,
            n_channels: 40,
            field_size_px: 512,
            tumor_radius_px: 160.0,
            class_mean_shift: 60.0,
            noise_sd: 100.0,
            spatial_smoothing: 120.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        if self.cells_per_sample == 0 {
            return bad("cells_per_sample must be positive");
        }
        if self.n_channels == 0 {
            return bad("n_channels must be positive");
        }
        if self.field_size_px == 0 {
            return bad("field_size_px must be positive");
        }
        if !(0.0..=1.0).contains(&self.fraction_melanoma) {
            return bad("fraction_melanoma must lie in [0, 1]");
        }
        for (name, v) in [
            ("tumor_radius_px", self.tumor_radius_px),
            ("class_mean_shift", self.class_mean_shift),
            ("noise_sd", self.noise_sd),
            ("spatial_smoothing", self.spatial_smoothing),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SimConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_melanoma(&self) -> usize {
        (self.fraction_melanoma * self.n_samples as f64).round() as usize
    }

    pub fn n_marker_channels(&self) -> usize {
        ((MARKER_CHANNEL_FRACTION * self.n_channels as f64).round() as usize).clamp(1, self.n_channels)
    }
}

/// Dataset-wide draws shared by every sample.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub baselines: Vec<f64>,
    /// Marker channel indices, ascending.
    pub markers: Vec<usize>,
}

fn channel_model(config: &SimConfig, rng: &mut impl Rng) -> ChannelModel {
    let baselines = (0..config.n_channels)
        .map(|_| f64::from(rng.random_range(BASELINE_RANGE.0..=BASELINE_RANGE.1)))
        .collect();
    let all: Vec<usize> = (0..config.n_channels).collect();
    let mut markers: Vec<usize> = all
        .choose_multiple(rng, config.n_marker_channels())
        .copied()
        .collect();
    markers.sort_unstable();
    ChannelModel { baselines, markers }
}

/// Stationary Gaussian field with squared-exponential covariance, approximated
/// by random Fourier features.
struct SmoothField {
    freqs: Vec<(f64, f64)>,
    phases: Vec<f64>,
    scale: f64,
}

impl SmoothField {
    fn new(length: f64, sd: f64, rng: &mut impl Rng) -> Self {
        let mut freqs = Vec::with_capacity(FOURIER_TERMS);
        let mut phases = Vec::with_capacity(FOURIER_TERMS);
        for _ in 0..FOURIER_TERMS {
            let wx: f64 = rng.sample(StandardNormal);
            let wy: f64 = rng.sample(StandardNormal);
            freqs.push((wx / length, wy / length));
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        Self {
            freqs,
            phases,
            scale: sd * (2.0 / FOURIER_TERMS as f64).sqrt(),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.phases)
            .map(|((wx, wy), p)| (wx * x + wy * y + p).cos())
            .sum::<f64>()
            * self.scale
    }
}

fn generate_sample(
    config: &SimConfig,
    model: &ChannelModel,
    melanoma: bool,
    seed: u64,
) -> Vec<(f64, f64, u8, Vec<f64>)> {
    let mut rng = seeded(seed);
    let size = config.field_size_px as f64;
    let positions: Vec<(f64, f64)> = (0..config.cells_per_sample)
        .map(|_| (rng.random_range(0.0..size), rng.random_range(0.0..size)))
        .collect();

    let tumor = melanoma.then(|| {
        let r = config.tumor_radius_px.min(size / 2.0);
        (rng.random_range(r..=size - r), rng.random_range(r..=size - r))
    });

    let fields: Vec<SmoothField> = if config.spatial_smoothing > 0.0 && config.noise_sd > 0.0 {
        (0..config.n_channels)
            .map(|_| SmoothField::new(config.spatial_smoothing, FIELD_SD_FRACTION * config.noise_sd, &mut rng))
            .collect()
    } else {
        Vec::new()
    };
    let noise = Normal::new(0.0, config.noise_sd).expect("noise_sd validated");

    let mut is_marker = vec![false; config.n_channels];
    for &m in &model.markers {
        is_marker[m] = true;
    }

    positions
        .into_iter()
        .map(|(x, y)| {
            let inside = tumor.is_some_and(|(cx, cy)| {
                (x - cx).powi(2) + (y - cy).powi(2) <= config.tumor_radius_px.powi(2)
            });
            let features = (0..config.n_channels)
                .map(|c| {
                    let mut v = model.baselines[c];
                    if inside && is_marker[c] {
                        v += config.class_mean_shift;
                    }
                    if let Some(f) = fields.get(c) {
                        v += f.at(x, y);
                    }
                    if config.noise_sd > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    v.clamp(0.0, f64::from(u16::MAX))
                })
                .collect();
            (x, y, u8::from(inside), features)
        })
        .collect()
}

/// Generates a labelled cell table and its manifest. Output depends only on
/// `config` and `seed`, not on the number of worker threads.
pub fn generate_dataset(config: &SimConfig, seed: u64) -> Result<(CellTable, SampleManifest)> {
    let (table, manifest, _) = generate_with_model(config, seed)?;
    Ok((table, manifest))
}

pub fn generate_with_model(
    config: &SimConfig,
    seed: u64,
) -> Result<(CellTable, SampleManifest, ChannelModel)> {
    config.validate()?;
    let mut rng = seeded(derive_seed(seed, 0));
    let model = channel_model(config, &mut rng);
    let mut order: Vec<usize> = (0..config.n_samples).collect();
    order.shuffle(&mut rng);
    let mut melanoma = vec![false; config.n_samples];
    for &s in order.iter().take(config.n_melanoma()) {
        melanoma[s] = true;
    }

    let samples: Vec<_> = (0..config.n_samples)
        .into_par_iter()
        .map(|s| generate_sample(config, &model, melanoma[s], derive_seed(seed, s as u64 + 1)))
        .collect();

    let mut cells = Vec::with_capacity(config.n_samples * config.cells_per_sample);
    let mut infos = Vec::with_capacity(config.n_samples);
    for (s, rows) in samples.into_iter().enumerate() {
        let sample_id = format!("S{s:02}");
        for (x, y, label, features) in rows {
            cells.push(Cell {
                cell_id: cells.len() as u64,
                sample_id: sample_id.clone(),
                x,
                y,
                label,
                features,
            });
        }
        infos.push(SampleInfo {
            sample_id,
            diagnosis: if melanoma[s] { Diagnosis::Melanoma } else { Diagnosis::Healthy },
            n_channels: config.n_channels,
            pixel_size_um: PIXEL_SIZE_UM,
        });
    }
    Ok((
        CellTable::new(config.n_channels, cells)?,
        SampleManifest { samples: infos },
        model,
    ))
}

/// Writes one directory per sample under `out_dir` holding a label mask,
/// one PGM per channel and a `sample.txt` descriptor. Cells are drawn as
/// disks of radius 3 px; on overlap the later cell wins. Mask label `i + 1`
/// is the sample's `i`-th cell in table order. Returns the descriptor paths.
pub fn emit_images(config: &SimConfig, table: &CellTable, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    config.validate()?;
    if table.n_features() != config.n_channels {
        return Err(Error::DimensionMismatch(format!(
            "table has {} features, config {} channels",
            table.n_features(),
            config.n_channels
        )));
    }
    let out_dir = out_dir.as_ref();
    let size = config.field_size_px;
    let r = EMITTED_CELL_RADIUS_PX;
    let mut descriptors = Vec::new();
    for (sample_id, rows) in table.rows_by_sample() {
        if rows.len() > usize::from(u16::MAX) {
            return Err(Error::InvalidInput(format!(
                "sample `{sample_id}` has {} cells; label ids overflow 16 bits",
                rows.len()
            )));
        }
        let mut owner: Vec<Option<usize>> = vec![None; size * size];
        for &row in &rows {
            let c = &table.cells()[row];
            let (lo_c, hi_c) = ((c.x - r).floor().max(0.0) as usize, ((c.x + r).ceil() as usize).min(size - 1));
            let (lo_r, hi_r) = ((c.y - r).floor().max(0.0) as usize, ((c.y + r).ceil() as usize).min(size - 1));
            for py in lo_r..=hi_r {
                for px in lo_c..=hi_c {
                    if (px as f64 - c.x).powi(2) + (py as f64 - c.y).powi(2) <= r * r {
                        owner[py * size + px] = Some(row);
                    }
                }
            }
        }
        let ordinal: std::collections::HashMap<usize, u16> =
            rows.iter().enumerate().map(|(i, &row)| (row, (i + 1) as u16)).collect();

        let dir = out_dir.join(&sample_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mask = Image16 {
            width: size,
            height: size,
            pixels: owner.iter().map(|o| o.map_or(0, |row| ordinal[&row])).collect(),
        };
        let mask_path = dir.join("mask.pgm");
        write_pgm(&mask, &mask_path)?;
        let mut channels = Vec::with_capacity(config.n_channels);
        for ch in 0..config.n_channels {
            let image = Image16 {
                width: size,
                height: size,
                pixels: owner
                    .iter()
                    .map(|o| {
                        o.map_or(0, |row| {
                            table.cells()[row].features[ch].round().clamp(0.0, 65535.0) as u16
                        })
                    })
                    .collect(),
            };
            let p = dir.join(format!("ch{ch:03}.pgm"));
            write_pgm(&image, &p)?;
            channels.push((format!("marker{ch:03}"), p));
        }
        let descriptor = SampleDescriptor {
            sample_id: sample_id.clone(),
            mask: mask_path,
            channels,
        };
        let dpath = dir.join("sample.txt");
        descriptor.save(&dpath)?;
        descriptors.push(dpath);
    }
    Ok(descriptors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_samples: 3,
            fraction_melanoma: 0.67,
            cells_per_sample: 60,
            n_channels: 8,
            field_size_px: 96,
            tumor_radius_px: 30.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn no_melanoma_means_no_positive_labels() {
        let cfg = SimConfig { fraction_melanoma: 0.0, ..small() };
        let (t, m) = generate_dataset(&cfg, 1).unwrap();
        assert!(t.cells().iter().all(|c| c.label == 0));
        assert!(m.samples.iter().all(|s| s.diagnosis == Diagnosis::Healthy));
    }

    #[test]
    fn noiseless_shift_is_exact() {
        let cfg = SimConfig {
            noise_sd: 0.0,
            spatial_smoothing: 0.0,
            class_mean_shift: 10.0,
            fraction_melanoma: 1.0,
            ..small()
        };
        let (t, _, model) = generate_with_model(&cfg, 5).unwrap();
        let mut tumor_cells = 0;
        for c in t.cells() {
            for (ch, v) in c.features.iter().enumerate() {
                if c.label == 1 && model.markers.contains(&ch) {
                    assert_eq!(*v - model.baselines[ch], 10.0);
                } else {
                    assert_eq!(*v, model.baselines[ch]);
                }
            }
            tumor_cells += usize::from(c.label);
        }
        assert!(tumor_cells > 0);
    }

    #[test]
    fn counts_match_config() {
        let cfg = SimConfig {
            n_samples: 12,
            fraction_melanoma: 0.75,
            cells_per_sample: 500,
            n_channels: 40,
            ..SimConfig::default()
        };
        let (t, m) = generate_dataset(&cfg, 2).unwrap();
        assert_eq!(t.len(), 6000);
        assert_eq!(m.samples.len(), 12);
        let mel = m.samples.iter().filter(|s| s.diagnosis == Diagnosis::Melanoma).count();
        assert_eq!(mel, 9);
    }

    #[test]
    fn positives_only_in_melanoma_samples() {
        let (t, m) = generate_dataset(&small(), 9).unwrap();
        for c in t.cells().iter().filter(|c| c.label == 1) {
            let s = m.samples.iter().find(|s| s.sample_id == c.sample_id).unwrap();
            assert_eq!(s.diagnosis, Diagnosis::Melanoma);
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate_dataset(&small(), 4).unwrap(), generate_dataset(&small(), 4).unwrap());
        assert_ne!(generate_dataset(&small(), 4).unwrap().0, generate_dataset(&small(), 5).unwrap().0);
    }

    #[test]
    fn zero_channels_rejected() {
        let cfg = SimConfig { n_channels: 0, ..small() };
        assert!(matches!(generate_dataset(&cfg, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn single_cell_mask_has_one_region() {
        let cfg = SimConfig {
            n_samples: 1,
            cells_per_sample: 1,
            n_channels: 2,
            field_size_px: 32,
            ..SimConfig::default()
        };
        let (t, _) = generate_dataset(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let desc = emit_images(&cfg, &t, dir.path()).unwrap();
        let (mask, _) = SampleDescriptor::load(&desc[0]).unwrap().read_images().unwrap();
        let labels: std::collections::BTreeSet<u16> = mask.0.pixels.iter().copied().filter(|&p| p > 0).collect();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![1]);
    }
}
