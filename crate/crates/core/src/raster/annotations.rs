//! JSON exchange formats for masklets and instance ground truth.
//!
//! Both carry `"size": [H, W]` and per-region RLE `counts`.

use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::Taxonomy;

use super::{decode_rle, encode_rle, GroundTruth, Instance, Masklet, RleCounts};

#[derive(Debug, Serialize, Deserialize)]
struct MaskletsDoc {
    size: [usize; 2],
    masklets: Vec<MaskletDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskletDoc {
    id: u32,
    score: f64,
    counts: Vec<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthDoc {
    size: [usize; 2],
    instances: Vec<InstanceDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    id: u32,
    class: String,
    model: String,
    counts: Vec<i64>,
}

/// Decoded masklet file: the image size plus masklets in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskletFile {
    pub width: usize,
    pub height: usize,
    pub masklets: Vec<Masklet>,
}

/// How to treat ground-truth model ids missing from the taxonomy registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownModel {
    /// Log a warning and keep the instance; no per-model merge override
    /// will match it.
    #[default]
    Warn,
    Error,
    Ignore,
}

fn size_of(size: [usize; 2], what: &str) -> Result<(usize, usize)> {
    let [h, w] = size;
    if w == 0 || h == 0 {
        return Err(Error::Config(format!("{what}: empty size [{h},{w}]")));
    }
    Ok((w, h))
}

pub fn parse_masklets(text: &str) -> Result<MaskletFile> {
    let doc: MaskletsDoc = serde_json::from_str(text).map_err(|e| Error::json("masklets", e))?;
    let (width, height) = size_of(doc.size, "masklets")?;
    let mut seen = BTreeSet::new();
    let mut masklets = Vec::with_capacity(doc.masklets.len());
    for m in doc.masklets {
        if !seen.insert(m.id) {
            return Err(Error::Masklet(format!("duplicate masklet id {}", m.id)));
        }
        let counts = RleCounts::from_signed(&m.counts)?;
        let mask = decode_rle(&counts, width, height)
            .map_err(|e| Error::Masklet(format!("masklet {}: {e}", m.id)))?;
        masklets.push(Masklet::new(m.id, m.score, mask)?);
    }
    Ok(MaskletFile {
        width,
        height,
        masklets,
    })
}

pub fn read_masklets(path: impl AsRef<Path>) -> Result<MaskletFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_masklets(&text)
}

pub fn masklets_to_json(width: usize, height: usize, masklets: &[Masklet]) -> String {
    let doc = MaskletsDoc {
        size: [height, width],
        masklets: masklets
            .iter()
            .map(|m| MaskletDoc {
                id: m.id,
                score: m.score,
                counts: encode_rle(&m.mask).0.into_iter().map(|c| c as i64).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("masklets serialize")
}

pub fn write_masklets(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    masklets: &[Masklet],
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, masklets_to_json(width, height, masklets)).map_err(|e| Error::io(path, e))
}

pub fn parse_groundtruth(text: &str, t: &Taxonomy, unknown: UnknownModel) -> Result<GroundTruth> {
    let doc: GroundTruthDoc =
        serde_json::from_str(text).map_err(|e| Error::json("ground truth", e))?;
    let (width, height) = size_of(doc.size, "ground truth")?;
    let mut parts = Vec::with_capacity(doc.instances.len());
    for inst in doc.instances {
        let class = t.class_by_name(&inst.class)?;
        match t.model_class(&inst.model) {
            Some(c) if c == class => {}
            registered => {
                let msg = match registered {
                    Some(c) => format!(
                        "instance {}: model {:?} is registered to {}, not {}",
                        inst.id,
                        inst.model,
                        t.name(c),
                        inst.class
                    ),
                    None => format!("instance {}: model {:?} is not registered", inst.id, inst.model),
                };
                match unknown {
                    UnknownModel::Warn => warn!("{msg}"),
                    UnknownModel::Error => return Err(Error::UnknownModel(inst.model)),
                    UnknownModel::Ignore => {}
                }
            }
        }
        let counts = RleCounts::from_signed(&inst.counts)?;
        let mask = decode_rle(&counts, width, height)
            .map_err(|e| Error::GroundTruth(format!("instance {}: {e}", inst.id)))?;
        parts.push((
            inst.id,
            Instance {
                class,
                model: inst.model,
            },
            mask,
        ));
    }
    GroundTruth::from_instances(width, height, parts, t)
}

pub fn read_groundtruth(path: impl AsRef<Path>, t: &Taxonomy) -> Result<GroundTruth> {
    read_groundtruth_with(path, t, UnknownModel::default())
}

pub fn read_groundtruth_with(
    path: impl AsRef<Path>,
    t: &Taxonomy,
    unknown: UnknownModel,
) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_groundtruth(&text, t, unknown)
}

pub fn groundtruth_to_json(gt: &GroundTruth, t: &Taxonomy) -> String {
    let doc = GroundTruthDoc {
        size: [gt.height(), gt.width()],
        instances: gt
            .instances()
            .iter()
            .map(|(&id, inst)| InstanceDoc {
                id,
                class: t.name(inst.class).to_owned(),
                model: inst.model.clone(),
                counts: encode_rle(&gt.instance_mask(id))
                    .0
                    .into_iter()
                    .map(|c| c as i64)
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("ground truth serializes")
}

pub fn write_groundtruth(path: impl AsRef<Path>, gt: &GroundTruth, t: &Taxonomy) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, groundtruth_to_json(gt, t)).map_err(|e| Error::io(path, e))
}
