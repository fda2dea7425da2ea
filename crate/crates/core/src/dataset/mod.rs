//! Manifests, splits, normalization and the synthetic desk-scale corpus.

mod splits;
mod synth;

pub use splits::{make_splits, Role, SplitAssignment, SplitConfig};
pub use synth::{generate_synthetic, synth_image, SynthSpec};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Default class vocabulary.
pub const DEFAULT_CLASSES: [&str; 3] = ["normal", "pneumonia", "covid19"];

/// One manifest row. `label` is absent for records that can only ever fill
/// the unlabeled role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub label: Option<usize>,
    pub subject_id: String,
}

/// A validated collection of samples with its class vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>, class_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(r.sample_id.clone()));
            }
            if let Some(label) = r.label {
                if label >= class_names.len() {
                    return Err(Error::UnknownClass(
                        label.to_string(),
                        class_names.join(","),
                    ));
                }
            }
        }
        Ok(Self {
            records,
            class_names,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }
}

/// Reads the CSV manifest `sample_id,image_path,label,subject_id`.
///
/// The label column may hold a class index, a class name from the default
/// vocabulary, or be empty (unlabeled). Relative image paths are resolved
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let class_names: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::ManifestParse {
            line: 0,
            message: e.to_string(),
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));

    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let row = row.map_err(|e| Error::ManifestParse {
            line,
            message: e.to_string(),
        })?;
        if row.len() < 4 {
            return Err(Error::ManifestParse {
                line,
                message: format!("expected 4 columns, got {}", row.len()),
            });
        }
        let label = parse_label(&row[2], &class_names)?;
        let raw_path = Path::new(&row[1]);
        let image_path = if raw_path.is_absolute() {
            raw_path.to_path_buf()
        } else {
            base.join(raw_path)
        };
        records.push(SampleRecord {
            sample_id: row[0].to_string(),
            image_path,
            label,
            subject_id: row[3].to_string(),
        });
    }
    DatasetManifest::new(records, class_names)
}

fn parse_label(field: &str, class_names: &[String]) -> Result<Option<usize>> {
    if field.is_empty() {
        return Ok(None);
    }
    if let Ok(idx) = field.parse::<usize>() {
        if idx < class_names.len() {
            return Ok(Some(idx));
        }
        return Err(Error::UnknownClass(field.to_string(), class_names.join(",")));
    }
    class_names
        .iter()
        .position(|c| c == field)
        .map(Some)
        .ok_or_else(|| Error::UnknownClass(field.to_string(), class_names.join(",")))
}

/// Writes a manifest back out in the same CSV schema.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::ManifestParse {
        line: 0,
        message: e.to_string(),
    })?;
    writer
        .write_record(["sample_id", "image_path", "label", "subject_id"])
        .map_err(|e| Error::ManifestParse {
            line: 0,
            message: e.to_string(),
        })?;
    for r in &manifest.records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        writer
            .write_record([
                r.sample_id.as_str(),
                &r.image_path.to_string_lossy(),
                &label,
                r.subject_id.as_str(),
            ])
            .map_err(|e| Error::ManifestParse {
                line: 0,
                message: e.to_string(),
            })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Zero-mean, unit population-variance rescaling. Constant images map to
/// all-zeros.
pub fn normalize_image(img: &GrayImage) -> GrayImage {
    let n = img.pixels().len() as f64;
    let mean = img.pixels().iter().sum::<f64>() / n;
    let var = img
        .pixels()
        .iter()
        .map(|p| (p - mean) * (p - mean))
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    let pixels = if sd == 0.0 {
        vec![0.0; img.pixels().len()]
    } else {
        img.pixels().iter().map(|p| (p - mean) / sd).collect()
    };
    GrayImage::from_pixels(img.width(), img.height(), pixels).expect("finite by construction")
}

/// Bilinear resize with center-aligned sampling. Identity when the target
/// matches the source dims.
pub fn resize_image(img: &GrayImage, target: (usize, usize)) -> Result<GrayImage> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::InvalidConfig("degenerate resize target".into()));
    }
    if (tw, th) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let (sw, sh) = (img.width(), img.height());
    let sx = sw as f64 / tw as f64;
    let sy = sh as f64 / th as f64;
    let mut pixels = Vec::with_capacity(tw * th);
    for y in 0..th {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for x in 0..tw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let top = img.get(x0, y0) * (1.0 - wx) + img.get(x1, y0) * wx;
            let bottom = img.get(x0, y1) * (1.0 - wx) + img.get(x1, y1) * wx;
            pixels.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    GrayImage::from_pixels(tw, th, pixels)
}
