//! Dataset manifests: lists of (ground truth, prediction, masklets) records.
//!
//! ```json
//! {"taxonomy": "taxonomy.json",
//!  "records": [{"id": "scene_0000", "groundtruth": "scene_0000/gt.json",
//!               "prediction": "scene_0000/pred.pgm", "masklets": "scene_0000/masklets.json"}]}
//! ```
//!
//! Relative paths resolve against the directory holding the manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::raster::{read_groundtruth_with, read_labelmap, read_masklets, GroundTruth, LabelMap};
use crate::raster::{Masklet, UnknownModel};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub groundtruth: PathBuf,
    pub prediction: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masklets: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    taxonomy: Option<PathBuf>,
    records: Vec<Record>,
}

/// A parsed manifest. Records are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    base_dir: PathBuf,
    taxonomy: Option<PathBuf>,
    records: Vec<Record>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, taxonomy: Option<PathBuf>, records: Vec<Record>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for r in &records {
            if r.id.is_empty() {
                return Err(Error::Manifest("record with empty id".into()));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate record id {:?}", r.id)));
            }
        }
        let mut records = records;
        records.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Manifest {
            base_dir: base_dir.into(),
            taxonomy,
            records,
        })
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| Error::json("manifest", e))?;
        Manifest::new(base_dir, doc.taxonomy, doc.records)
    }

    /// Reads a manifest and checks that every file it references exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Manifest::parse(&text, base)?;
        m.check_files()?;
        Ok(m)
    }

    fn check_files(&self) -> Result<()> {
        let referenced = self.taxonomy.iter().chain(self.records.iter().flat_map(|r| {
            [Some(&r.groundtruth), Some(&r.prediction), r.masklets.as_ref()]
                .into_iter()
                .flatten()
        }));
        for p in referenced {
            let full = self.resolve(p);
            if let Err(e) = std::fs::metadata(&full) {
                return Err(Error::io(full, e));
            }
        }
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Path of the taxonomy named by the manifest, resolved.
    pub fn taxonomy_path(&self) -> Option<PathBuf> {
        self.taxonomy.as_ref().map(|p| self.resolve(p))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Ground truth and prediction of one record, checked for matching size
    /// and class range.
    pub fn load_pair(&self, r: &Record, t: &Taxonomy, unknown: UnknownModel) -> Result<(GroundTruth, LabelMap)> {
        let gt = read_groundtruth_with(self.resolve(&r.groundtruth), t, unknown)?;
        let pred = read_labelmap(self.resolve(&r.prediction), Some(t))?;
        check_dims(gt.dims(), pred.dims())?;
        Ok((gt, pred))
    }

    /// Masklets of one record; an error if the record has none.
    pub fn load_masklets(&self, r: &Record, dims: (usize, usize)) -> Result<Vec<Masklet>> {
        let p = r
            .masklets
            .as_ref()
            .ok_or_else(|| Error::Manifest(format!("record {:?} has no masklets", r.id)))?;
        let f = read_masklets(self.resolve(p))?;
        check_dims(dims, (f.width, f.height))?;
        Ok(f.masklets)
    }

    pub fn to_json(&self) -> String {
        let doc = ManifestDoc {
            taxonomy: self.taxonomy.clone(),
            records: self.records.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        s.push('\n');
        s
    }
}
