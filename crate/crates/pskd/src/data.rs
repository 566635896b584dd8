//! Synthetic dataset generators and simple file loaders.
//!
//! Generators are bit-deterministic per seed. Example ids are the dense row
//! indices `0..n-1` and never change once a dataset is built, so they can key
//! prediction caches and per-example history across epochs.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RealMatrix;
use crate::util::seeded_rng;

/// Angular sweep, in radians, of each spiral arm over the radius range.
const SPIRAL_SWEEP: f64 = 4.0;
/// Half-width of the box that blob centers are drawn from.
const BLOB_CENTER_RANGE: f64 = 4.0;

/// A labelled classification dataset with dense stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    pub features: RealMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        name: String,
        seed: u64,
        features: RealMatrix,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if n_classes < 2 {
            return Err(Error::Input("datasets need at least 2 classes".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            name,
            seed,
            features,
            labels,
            n_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// All example ids, `0..n-1`.
    pub fn ids(&self) -> Vec<u64> {
        (0..self.n() as u64).collect()
    }

    /// Gather rows by id into a batch matrix plus their labels.
    pub fn gather(&self, ids: &[u64]) -> Result<(RealMatrix, Vec<usize>)> {
        let d = self.dim();
        let mut values = Vec::with_capacity(ids.len() * d);
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            let idx = id as usize;
            if idx >= self.n() {
                return Err(Error::Input(format!("example id {id} out of range")));
            }
            values.extend_from_slice(self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        Ok((RealMatrix::new(ids.len(), d, values)?, labels))
    }
}

/// Per-dimension affine transform `(x - mean) / std`, fit on the training
/// split only and reused verbatim at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Identity transform (used when standardization is disabled).
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit mean and population standard deviation on the rows named by
    /// `ids`. Dimensions with (near-)zero variance keep std 1 so they pass
    /// through centered but unscaled.
    pub fn fit(features: &RealMatrix, ids: &[u64]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Input("cannot fit a standardizer on no rows".into()));
        }
        let d = features.cols();
        let n = ids.len() as f64;
        let mut mean = vec![0.0; d];
        for &id in ids {
            for (m, v) in mean.iter_mut().zip(features.row(id as usize)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for &id in ids {
            for ((s, v), m) in var.iter_mut().zip(features.row(id as usize)).zip(&mean) {
                let dlt = v - m;
                *s += dlt * dlt;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    /// Transform every row of a matrix in place.
    pub fn apply(&self, features: &mut RealMatrix) -> Result<()> {
        if features.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer for {} dims applied to {} columns",
                self.mean.len(),
                features.cols()
            )));
        }
        let d = self.mean.len();
        for r in 0..features.rows() {
            for c in 0..d {
                let v = (features.get(r, c) - self.mean[c]) / self.std[c];
                features.set(r, c, v);
            }
        }
        Ok(())
    }
}

/// K Gaussian clusters at seeded random centers. Examples are ordered
/// class-major: ids `c * n_per_class .. (c+1) * n_per_class` carry label c.
pub fn gen_blobs(
    seed: u64,
    k: usize,
    n_per_class: usize,
    dim: usize,
    spread: f64,
) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Parameter(format!("blobs need k >= 2, got {k}")));
    }
    if n_per_class < 1 {
        return Err(Error::Parameter("n_per_class must be >= 1".into()));
    }
    if dim < 1 {
        return Err(Error::Parameter("dim must be >= 1".into()));
    }
    if spread <= 0.0 || spread.is_nan() {
        return Err(Error::Parameter(format!("spread must be > 0, got {spread}")));
    }
    let mut center_rng = seeded_rng(seed, 0);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..dim)
                .map(|_| center_rng.gen_range(-BLOB_CENTER_RANGE..BLOB_CENTER_RANGE))
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, spread).expect("spread validated");
    let mut point_rng = seeded_rng(seed, 1);
    let mut values = Vec::with_capacity(k * n_per_class * dim);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &cc in center {
                values.push(cc + noise.sample(&mut point_rng));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        format!("blobs-k{k}-n{n_per_class}-d{dim}"),
        seed,
        RealMatrix::new(k * n_per_class, dim, values)?,
        labels,
        k,
    )
}

/// Radius and angle of spiral point `i` of arm `c`: the radius grows
/// linearly over `(0, 1]` and the angle is the arm offset plus
/// `radius * SPIRAL_SWEEP`.
pub fn spiral_arm_point(class: usize, k: usize, i: usize, n_per_class: usize) -> (f64, f64) {
    let r = (i + 1) as f64 / n_per_class as f64;
    let theta = 2.0 * std::f64::consts::PI * class as f64 / k as f64 + r * SPIRAL_SWEEP;
    (r, theta)
}

/// K interleaved 2-D spiral arms with Gaussian coordinate noise. Points near
/// the origin sit where all arms meet, which is what makes some examples
/// persistently hard to classify.
pub fn gen_spirals(seed: u64, k: usize, n_per_class: usize, noise: f64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Parameter(format!("spirals need k >= 2, got {k}")));
    }
    if n_per_class < 1 {
        return Err(Error::Parameter("n_per_class must be >= 1".into()));
    }
    if noise < 0.0 {
        return Err(Error::Parameter(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = seeded_rng(seed, 1);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Vec::with_capacity(k * n_per_class * 2);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for c in 0..k {
        for i in 0..n_per_class {
            let (r, theta) = spiral_arm_point(c, k, i, n_per_class);
            values.push(r * theta.cos() + noise * gauss.sample(&mut rng));
            values.push(r * theta.sin() + noise * gauss.sample(&mut rng));
            labels.push(c);
        }
    }
    Dataset::new(
        format!("spirals-k{k}-n{n_per_class}"),
        seed,
        RealMatrix::new(k * n_per_class, 2, values)?,
        labels,
        k,
    )
}

/// Load a dataset from CSV with header `label,f0,f1,...`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::CsvFormat {
            line: 1,
            message: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"label") {
        return Err(Error::CsvFormat {
            line: 1,
            message: format!("header must start with 'label', got {:?}", cols.first()),
        });
    }
    for (i, c) in cols.iter().enumerate().skip(1) {
        if *c != format!("f{}", i - 1) {
            return Err(Error::CsvFormat {
                line: 1,
                message: format!("expected column 'f{}', got '{c}'", i - 1),
            });
        }
    }
    let d = cols.len() - 1;
    if d == 0 {
        return Err(Error::CsvFormat {
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::CsvFormat {
                line: line_no,
                message: format!("expected {} fields, got {}", d + 1, fields.len()),
            });
        }
        let label: usize = fields[0].parse().map_err(|_| Error::CsvFormat {
            line: line_no,
            message: format!("invalid label '{}'", fields[0]),
        })?;
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| Error::CsvFormat {
                line: line_no,
                message: format!("invalid number '{f}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvFormat {
                    line: line_no,
                    message: format!("non-finite feature '{f}'"),
                });
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::CsvFormat {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let n = labels.len();
    Dataset::new(
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv".into()),
        0,
        RealMatrix::new(n, d, values)?,
        labels,
        n_classes.max(2),
    )
}

/// Write a dataset as CSV. Floats use the shortest representation that
/// parses back to the identical value, so `load_csv(save_csv(d)) == d`.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("label");
    for i in 0..dataset.dim() {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for r in 0..dataset.n() {
        out.push_str(&dataset.labels[r].to_string());
        for v in dataset.features.row(r) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("file truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Load an IDX image/label pair (the MNIST container format). Pixels are
/// unsigned bytes scaled by 1/255 so 255 maps to exactly 1.0.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = fs::read(images_path)?;
    let lab = fs::read(labels_path)?;

    let magic = read_be_u32(&img, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_be_u32(&img, 4, "image count")? as usize;
    let rows = read_be_u32(&img, 8, "image rows")? as usize;
    let cols = read_be_u32(&img, 12, "image cols")? as usize;
    let expected = 16 + n * rows * cols;
    if img.len() != expected {
        return Err(Error::Format {
            offset: img.len().min(expected) as u64,
            message: format!(
                "image payload is {} bytes, expected {} for {n} images of {rows}x{cols}",
                img.len() - 16.min(img.len()),
                n * rows * cols
            ),
        });
    }

    let magic = read_be_u32(&lab, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_lab = read_be_u32(&lab, 4, "label count")? as usize;
    if lab.len() != 8 + n_lab {
        return Err(Error::Format {
            offset: lab.len().min(8 + n_lab) as u64,
            message: format!(
                "label payload is {} bytes, expected {n_lab}",
                lab.len() - 8.min(lab.len())
            ),
        });
    }
    if n != n_lab {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {n_lab} labels"),
        });
    }
    if n == 0 {
        return Err(Error::Format {
            offset: 4,
            message: "empty IDX dataset".into(),
        });
    }

    let d = rows * cols;
    let values: Vec<f64> = img[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().unwrap() + 1;
    Dataset::new(
        images_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
        0,
        RealMatrix::new(n, d, values)?,
        labels,
        n_classes.max(2),
    )
}
