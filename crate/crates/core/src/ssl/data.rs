//! Prepared in-memory samples and role-typed views over a split.
//!
//! Unlabeled views expose no label field at all, so downstream stages
//! cannot read true labels of unlabeled samples even by accident.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::{resize_image, normalize_image, DatasetManifest, Role, SplitAssignment};
use crate::enhance::{enhance_image, EnhanceConfig};
use crate::error::{Error, Result};
use crate::image::{GrayImage, MultiFeatureImage};

/// A sample with its network inputs ready: grayscale resized + normalized,
/// multi-feature channels resized to the same dims.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample_id: String,
    pub cxr: GrayImage,
    pub mf: MultiFeatureImage,
    pub label: Option<usize>,
}

/// All prepared samples of a manifest, keyed by sample id.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub samples: BTreeMap<String, PreparedSample>,
    pub num_classes: usize,
    pub input_dims: (usize, usize),
}

/// Where multi-feature inputs come from during preparation.
pub enum MfSource<'a> {
    /// Read `<stem>.mfi` sidecars from this directory.
    SidecarDir(&'a Path),
    /// Read `<stem>.mfi` sidecars next to each image.
    Alongside,
    /// Compute them on the fly at the image's native resolution.
    Enhance(&'a EnhanceConfig),
}

fn load_sidecar_checked(path: &Path, sample_id: &str) -> Result<MultiFeatureImage> {
    if !path.exists() {
        return Err(Error::MissingImage {
            sample_id: sample_id.to_string(),
            path: path.to_path_buf(),
        });
    }
    MultiFeatureImage::load_sidecar(path)
}

fn resize_mf(mf: &MultiFeatureImage, dims: (usize, usize)) -> Result<MultiFeatureImage> {
    if (mf.width(), mf.height()) == dims {
        return Ok(mf.clone());
    }
    let planes = mf.clone().into_planes();
    let mut resized: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (slot, plane) in resized.iter_mut().zip(planes) {
        let img = GrayImage::from_pixels(mf.width(), mf.height(), plane)?;
        let out = resize_image(&img, dims)?;
        *slot = out
            .into_pixels()
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
    }
    MultiFeatureImage::from_planes(dims.0, dims.1, resized)
}

impl PreparedDataset {
    /// Loads and prepares every record of the manifest.
    pub fn prepare(
        manifest: &DatasetManifest,
        mf_source: &MfSource,
        input_dims: (usize, usize),
    ) -> Result<Self> {
        Self::prepare_filtered(manifest, mf_source, input_dims, None)
    }

    /// Loads and prepares only the named samples (e.g. one evaluation role).
    pub fn prepare_subset(
        manifest: &DatasetManifest,
        mf_source: &MfSource,
        input_dims: (usize, usize),
        sample_ids: &[String],
    ) -> Result<Self> {
        let wanted: std::collections::BTreeSet<&str> =
            sample_ids.iter().map(|s| s.as_str()).collect();
        Self::prepare_filtered(manifest, mf_source, input_dims, Some(&wanted))
    }

    fn prepare_filtered(
        manifest: &DatasetManifest,
        mf_source: &MfSource,
        input_dims: (usize, usize),
        only: Option<&std::collections::BTreeSet<&str>>,
    ) -> Result<Self> {
        let mut samples = BTreeMap::new();
        for record in &manifest.records {
            if let Some(wanted) = only {
                if !wanted.contains(record.sample_id.as_str()) {
                    continue;
                }
            }
            let gray = GrayImage::load(&record.image_path).map_err(|_| Error::MissingImage {
                sample_id: record.sample_id.clone(),
                path: record.image_path.clone(),
            })?;
            let stem = record
                .image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| record.sample_id.clone());
            let mf = match mf_source {
                MfSource::SidecarDir(dir) => {
                    load_sidecar_checked(&dir.join(format!("{stem}.mfi")), &record.sample_id)?
                }
                MfSource::Alongside => {
                    let sidecar = record.image_path.with_file_name(format!("{stem}.mfi"));
                    load_sidecar_checked(&sidecar, &record.sample_id)?
                }
                MfSource::Enhance(cfg) => {
                    enhance_image(&gray, &cfg.filterbank, &cfg.regularizer)?
                }
            };
            let cxr = normalize_image(&resize_image(&gray, input_dims)?);
            let mf = resize_mf(&mf, input_dims)?;
            samples.insert(
                record.sample_id.clone(),
                PreparedSample {
                    sample_id: record.sample_id.clone(),
                    cxr,
                    mf,
                    label: record.label,
                },
            );
        }
        Ok(Self {
            samples,
            num_classes: manifest.num_classes(),
            input_dims,
        })
    }

    /// Builds a prepared dataset directly from in-memory samples (tests).
    pub fn from_samples(
        samples: Vec<PreparedSample>,
        num_classes: usize,
        input_dims: (usize, usize),
    ) -> Self {
        Self {
            samples: samples
                .into_iter()
                .map(|s| (s.sample_id.clone(), s))
                .collect(),
            num_classes,
            input_dims,
        }
    }

    fn get(&self, sample_id: &str) -> Result<&PreparedSample> {
        self.samples
            .get(sample_id)
            .ok_or_else(|| Error::MissingImage {
                sample_id: sample_id.to_string(),
                path: "<not prepared>".into(),
            })
    }

    /// Label-bearing view of one role. Errors if a sample in that role has
    /// no label.
    pub fn labeled_view(
        &self,
        split: &SplitAssignment,
        role: Role,
    ) -> Result<Vec<LabeledExample<'_>>> {
        let mut out = Vec::new();
        for id in split.ids(role) {
            let s = self.get(id)?;
            let label = s.label.ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "sample `{id}` in role `{}` has no label",
                    role.name()
                ))
            })?;
            out.push(LabeledExample {
                sample_id: &s.sample_id,
                cxr: &s.cxr,
                mf: &s.mf,
                label,
            });
        }
        Ok(out)
    }

    /// Label-free view of the unlabeled role.
    pub fn unlabeled_view(&self, split: &SplitAssignment) -> Result<Vec<UnlabeledExample<'_>>> {
        let mut out = Vec::new();
        for id in split.ids(Role::Unlabeled) {
            let s = self.get(id)?;
            out.push(UnlabeledExample {
                sample_id: &s.sample_id,
                cxr: &s.cxr,
                mf: &s.mf,
            });
        }
        Ok(out)
    }
}

/// A sample with its ground-truth label visible.
#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub sample_id: &'a str,
    pub cxr: &'a GrayImage,
    pub mf: &'a MultiFeatureImage,
    pub label: usize,
}

/// A sample whose label, if any exists, is type-erased away.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledExample<'a> {
    pub sample_id: &'a str,
    pub cxr: &'a GrayImage,
    pub mf: &'a MultiFeatureImage,
}
