//! Cell tables, sample manifests and sample-level data splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One segmented cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub cell_id: u64,
    pub sample_id: String,
    pub x: f64,
    pub y: f64,
    /// 0 = healthy, 1 = melanoma.
    pub label: u8,
    pub features: Vec<f64>,
}

/// Per-cell stain-reactivity profiles with centroids and labels.
///
/// Every cell carries the same number of features; cell ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    n_features: usize,
    cells: Vec<Cell>,
}

impl CellTable {
    pub fn new(n_features: usize, cells: Vec<Cell>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidInput("cell table needs at least one feature".into()));
        }
        let mut ids = HashSet::with_capacity(cells.len());
        for (row, cell) in cells.iter().enumerate() {
            if cell.features.len() != n_features {
                return Err(Error::DimensionMismatch(format!(
                    "row {row}: {} features, expected {n_features}",
                    cell.features.len()
                )));
            }
            if cell.label > 1 {
                return Err(Error::InvalidInput(format!(
                    "row {row}: label {} is not 0 or 1",
                    cell.label
                )));
            }
            if !ids.insert(cell.cell_id) {
                return Err(Error::InvalidInput(format!(
                    "row {row}: duplicate cell_id {}",
                    cell.cell_id
                )));
            }
        }
        Ok(Self { n_features, cells })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn into_cells(self) -> Vec<Cell> {
        self.cells
    }

    pub fn labels(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.label).collect()
    }

    pub fn sample_ids(&self) -> Vec<&str> {
        self.cells.iter().map(|c| c.sample_id.as_str()).collect()
    }

    /// Row-major n × d feature matrix in table order.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.cells.len(), self.n_features));
        for (mut row, cell) in m.rows_mut().into_iter().zip(&self.cells) {
            for (dst, src) in row.iter_mut().zip(&cell.features) {
                *dst = *src;
            }
        }
        m
    }

    /// Same cells with the feature columns replaced by `features` (one row per cell).
    pub fn with_features(&self, features: &Array2<f64>) -> Result<Self> {
        if features.nrows() != self.cells.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {} cells",
                features.nrows(),
                self.cells.len()
            )));
        }
        let cells = self
            .cells
            .iter()
            .zip(features.rows())
            .map(|(c, row)| Cell {
                features: row.to_vec(),
                ..c.clone()
            })
            .collect();
        CellTable::new(features.ncols(), cells)
    }

    /// Row indices grouped by sample, in order of first appearance.
    pub fn rows_by_sample(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, c) in self.cells.iter().enumerate() {
            let entry = groups.entry(c.sample_id.as_str()).or_default();
            if entry.is_empty() {
                order.push(c.sample_id.clone());
            }
            entry.push(i);
        }
        order
            .into_iter()
            .map(|s| {
                let rows = groups.remove(s.as_str()).unwrap_or_default();
                (s, rows)
            })
            .collect()
    }
}

const FIXED_COLUMNS: [&str; 5] = ["cell_id", "sample_id", "x", "y", "label"];

/// Writes a float so that parsing it back yields the identical value.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v}")
}

pub fn load_cell_table(path: impl AsRef<Path>) -> Result<CellTable> {
    load_table_with_prefix(path.as_ref(), 'f')
}

pub fn save_cell_table(table: &CellTable, path: impl AsRef<Path>) -> Result<()> {
    save_table_with_prefix(table, path.as_ref(), 'f')
}

/// Loads a cell-table-shaped file whose feature columns are named
/// `{prefix}0..{prefix}{d-1}`. Columns may appear in any order.
pub(crate) fn load_table_with_prefix(path: &Path, prefix: char) -> Result<CellTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "empty file, expected header")),
    };

    let mut index: HashMap<&str, usize> = HashMap::new();
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    for (i, name) in names.iter().enumerate() {
        if index.insert(name, i).is_some() {
            return Err(Error::parse(path, 1, format!("duplicate column `{name}`")));
        }
    }
    for col in FIXED_COLUMNS {
        if !index.contains_key(col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }
    let mut feature_cols = Vec::new();
    for (i, name) in names.iter().enumerate() {
        if FIXED_COLUMNS.contains(name) {
            continue;
        }
        let idx = name
            .strip_prefix(prefix)
            .and_then(|rest| rest.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(path, 1, format!("unexpected column `{name}`")))?;
        feature_cols.push((idx, i));
    }
    feature_cols.sort_unstable();
    for (expected, (idx, _)) in feature_cols.iter().enumerate() {
        if *idx != expected {
            return Err(Error::MissingColumn(format!("{prefix}{expected}")));
        }
    }
    let d = feature_cols.len();
    if d == 0 {
        return Err(Error::MissingColumn(format!("{prefix}0")));
    }

    let col = |name: &str| index[name];
    let (c_id, c_sample, c_x, c_y, c_label) =
        (col("cell_id"), col("sample_id"), col("x"), col("y"), col("label"));

    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::parse(
                path,
                lineno,
                format!("{} fields, header has {}", fields.len(), names.len()),
            ));
        }
        let float = |i: usize, what: &str| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric {what} `{}`", fields[i])))
        };
        let cell_id = fields[c_id]
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::parse(path, lineno, format!("bad cell_id `{}`", fields[c_id])))?;
        if !seen.insert(cell_id) {
            return Err(Error::parse(path, lineno, format!("duplicate cell_id {cell_id}")));
        }
        let label = match fields[c_label].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::parse(path, lineno, format!("unknown label `{other}`")));
            }
        };
        let mut features = Vec::with_capacity(d);
        for (j, (_, i)) in feature_cols.iter().enumerate() {
            features.push(float(*i, &format!("feature {prefix}{j}"))?);
        }
        cells.push(Cell {
            cell_id,
            sample_id: fields[c_sample].trim().to_string(),
            x: float(c_x, "x")?,
            y: float(c_y, "y")?,
            label,
            features,
        });
    }
    CellTable::new(d, cells)
}

pub(crate) fn save_table_with_prefix(table: &CellTable, path: &Path, prefix: char) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        write!(w, "cell_id,sample_id,x,y,label")?;
        for j in 0..table.n_features() {
            write!(w, ",{prefix}{j}")?;
        }
        writeln!(w)?;
        for c in table.cells() {
            write!(
                w,
                "{},{},{},{},{}",
                c.cell_id,
                c.sample_id,
                fmt_float(c.x),
                fmt_float(c.y),
                c.label
            )?;
            for v in &c.features {
                write!(w, ",{}", fmt_float(*v))?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagnosis {
    Healthy,
    Melanoma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub sample_id: String,
    pub diagnosis: Diagnosis,
    pub n_channels: usize,
    pub pixel_size_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub samples: Vec<SampleInfo>,
}

impl SampleManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate sample_id `{}`", s.sample_id)));
            }
        }
        if let Some(first) = self.samples.first() {
            if let Some(bad) = self.samples.iter().find(|s| s.n_channels != first.n_channels) {
                return Err(Error::InvalidInput(format!(
                    "sample `{}` has {} channels, expected {}",
                    bad.sample_id, bad.n_channels, first.n_channels
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SampleManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Checks that every cell's sample appears in the manifest.
    pub fn check_table(&self, table: &CellTable) -> Result<()> {
        let ids: HashSet<&str> = self.samples.iter().map(|s| s.sample_id.as_str()).collect();
        match table.cells().iter().find(|c| !ids.contains(c.sample_id.as_str())) {
            Some(c) => Err(Error::InvalidInput(format!(
                "cell {} references unknown sample `{}`",
                c.cell_id, c.sample_id
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Train,
    Val,
    Test,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Train, Bucket::Val, Bucket::Test];

    fn index(self) -> usize {
        match self {
            Bucket::Train => 0,
            Bucket::Val => 1,
            Bucket::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub assignment: BTreeMap<String, Bucket>,
    pub ratios: (f64, f64, f64),
}

impl Split {
    pub fn bucket_of(&self, sample_id: &str) -> Option<Bucket> {
        self.assignment.get(sample_id).copied()
    }

    pub fn samples_in(&self, bucket: Bucket) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, b)| **b == bucket)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Per-row bucket of `table` (None for cells whose sample is unassigned).
    pub fn row_buckets(&self, table: &CellTable) -> Vec<Option<Bucket>> {
        table.cells().iter().map(|c| self.bucket_of(&c.sample_id)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`.
/// Equal remainders go to the earlier bucket.
pub fn bucket_sizes(n: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let r = [ratios.0, ratios.1, ratios.2];
    let quotas: Vec<f64> = r.iter().map(|x| x * n as f64).collect();
    // Absorb representation error such as 0.7 * 30 = 20.999999999999996.
    let mut sizes: [usize; 3] = [0; 3];
    for (s, q) in sizes.iter_mut().zip(&quotas) {
        *s = (q + 1e-9).floor() as usize;
    }
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    // Remainders compared on a 1e-9 grid so 0.4 and 0.4000000000000004 tie.
    let rem = |i: usize| ((quotas[i] - sizes[i] as f64).max(0.0) * 1e9).round() as u64;
    order.sort_by(|&a, &b| rem(b).cmp(&rem(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Assigns whole samples to train/val/test.
///
/// Buckets get largest-remainder sizes; samples are shuffled by `seed`.
/// Every bucket of two or more samples must hold both diagnoses, and a
/// single-sample bucket must hold a melanoma sample (whose cells carry both
/// labels). Violations are repaired by swapping the lowest-index eligible
/// samples in from a bucket with a surplus.
pub fn make_split(manifest: &SampleManifest, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    manifest.validate()?;
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::InvalidParameter(format!("split ratios must be positive, got {ratios:?}")));
    }
    if ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    let n = manifest.samples.len();
    let sizes = bucket_sizes(n, ratios);

    let diagnosis: Vec<Diagnosis> = manifest.samples.iter().map(|s| s.diagnosis).collect();
    let n_mel = diagnosis.iter().filter(|d| **d == Diagnosis::Melanoma).count();
    let n_healthy = n - n_mel;
    let need_cover = n_mel > 0 && n_healthy > 0;
    if need_cover {
        let need_mel: usize = sizes.iter().map(|&s| required(s, Diagnosis::Melanoma)).sum();
        let need_healthy: usize = sizes.iter().map(|&s| required(s, Diagnosis::Healthy)).sum();
        if n_mel < need_mel || n_healthy < need_healthy {
            return Err(Error::InfeasibleSplit(format!(
                "buckets need {need_healthy} healthy and {need_mel} melanoma samples but only {n_healthy} and {n_mel} exist"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut buckets: [Vec<usize>; 3] = Default::default();
    let mut cursor = 0;
    for (b, size) in sizes.iter().enumerate() {
        buckets[b] = order[cursor..cursor + size].to_vec();
        buckets[b].sort_unstable();
        cursor += size;
    }

    if need_cover {
        repair_coverage(&mut buckets, &diagnosis);
    }

    let mut assignment = BTreeMap::new();
    for bucket in Bucket::ALL {
        for &i in &buckets[bucket.index()] {
            assignment.insert(manifest.samples[i].sample_id.clone(), bucket);
        }
    }
    Ok(Split { assignment, ratios })
}

/// Samples of diagnosis `d` a bucket of `size` must contain.
fn required(size: usize, d: Diagnosis) -> usize {
    match size {
        0 => 0,
        1 => usize::from(d == Diagnosis::Melanoma),
        _ => 1,
    }
}

fn repair_coverage(buckets: &mut [Vec<usize>; 3], diagnosis: &[Diagnosis]) {
    let count = |b: &Vec<usize>, d: Diagnosis| b.iter().filter(|&&i| diagnosis[i] == d).count();
    loop {
        let mut needy = None;
        'search: for (b, members) in buckets.iter().enumerate() {
            for d in [Diagnosis::Healthy, Diagnosis::Melanoma] {
                if count(members, d) < required(members.len(), d) {
                    needy = Some((b, d));
                    break 'search;
                }
            }
        }
        let Some((target, missing)) = needy else {
            return;
        };
        // Donor: first bucket holding more of `missing` than it must keep.
        let donor = (0..3)
            .find(|&b| {
                b != target && count(&buckets[b], missing) > required(buckets[b].len(), missing)
            })
            .expect("feasibility checked before repair");
        let give = *buckets[donor]
            .iter()
            .find(|&&i| diagnosis[i] == missing)
            .expect("donor has a surplus sample");
        let take = *buckets[target]
            .iter()
            .find(|&&i| diagnosis[i] != missing)
            .expect("target bucket is non-empty");
        buckets[donor].retain(|&i| i != give);
        buckets[target].retain(|&i| i != take);
        buckets[donor].push(take);
        buckets[target].push(give);
        buckets[donor].sort_unstable();
        buckets[target].sort_unstable();
    }
}
