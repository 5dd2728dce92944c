//! Masklet fusion.
//!
//! Every masklet is tested against the semantic label map: if more than
//! `glass_fraction_min` of its pixels carry one single glass category, the
//! masklet is taken to be a glass and all its pixels receive the majority
//! glass category. Otherwise it is treated as a background false positive.
//!
//! Classification always reads the input map. Writes happen in ascending
//! `(score, id)` order, so where masklets overlap the higher-scored one wins.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{check_dims, Error, Result};
use crate::raster::{LabelMap, Masklet};
use crate::taxonomy::{ClassId, Taxonomy};

/// What happens to the pixels of a rejected masklet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RejectMode {
    /// Overwrite with background.
    #[default]
    Background,
    /// Leave the semantic labels untouched.
    Keep,
}

impl std::str::FromStr for RejectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(RejectMode::Background),
            "keep" => Ok(RejectMode::Keep),
            other => Err(Error::Config(format!(
                "reject mode {other:?}, expected background or keep"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// A masklet is accepted only if its largest single-category glass
    /// fraction is strictly greater than this.
    pub glass_fraction_min: f64,
    /// Masklets scoring below this are dropped before classification.
    pub quality_min: f64,
    pub reject_mode: RejectMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            glass_fraction_min: 0.10,
            quality_min: 0.0,
            reject_mode: RejectMode::Background,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("glass fraction", self.glass_fraction_min),
            ("quality minimum", self.quality_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Rejected,
    Assigned(ClassId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskletDecision {
    pub masklet_id: u32,
    pub score: f64,
    pub verdict: Verdict,
    /// Pixels of the masklet per class id, background included. Sums to
    /// the masklet area.
    pub counts: Vec<u64>,
    /// Largest single glass category count divided by the area.
    pub max_fraction: f64,
}

impl MaskletDecision {
    pub fn area(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn assigned_class(&self) -> Option<ClassId> {
        match self.verdict {
            Verdict::Assigned(c) => Some(c),
            Verdict::Rejected => None,
        }
    }

    pub fn fraction(&self, c: ClassId) -> f64 {
        self.counts[c.index()] as f64 / self.area() as f64
    }
}

pub fn classify_masklet(
    m: &Masklet,
    s: &LabelMap,
    t: &Taxonomy,
    cfg: &FusionConfig,
) -> Result<MaskletDecision> {
    check_dims(s.dims(), m.mask.dims())?;
    let labels = s.as_slice();
    let mut counts = vec![0u64; t.len()];
    for i in m.mask.iter_ones() {
        let c = labels[i].index();
        if c >= counts.len() {
            return Err(Error::ClassOutOfRange {
                id: c,
                classes: t.len(),
            });
        }
        counts[c] += 1;
    }
    let area: u64 = counts.iter().sum();

    // strict '>' keeps the lowest id on ties
    let mut best: Option<(ClassId, u64)> = None;
    for c in t.glass_classes() {
        let n = counts[c.index()];
        if n > 0 && best.is_none_or(|(_, b)| n > b) {
            best = Some((c, n));
        }
    }

    let max_count = best.map_or(0, |(_, n)| n);
    let max_fraction = if area == 0 {
        0.0
    } else {
        max_count as f64 / area as f64
    };
    let verdict = match best {
        Some((c, _)) if max_fraction > cfg.glass_fraction_min => Verdict::Assigned(c),
        _ => Verdict::Rejected,
    };
    Ok(MaskletDecision {
        masklet_id: m.id,
        score: m.score,
        verdict,
        counts,
        max_fraction,
    })
}

/// Refines `s` with `masklets`. Returns the fused map and one decision per
/// masklet that passed the quality filter, in input order.
pub fn fuse(
    s: &LabelMap,
    masklets: &[Masklet],
    t: &Taxonomy,
    cfg: &FusionConfig,
) -> Result<(LabelMap, Vec<MaskletDecision>)> {
    cfg.validate()?;
    for m in masklets {
        check_dims(s.dims(), m.mask.dims())?;
    }
    let kept: Vec<&Masklet> = masklets
        .iter()
        .filter(|m| m.score >= cfg.quality_min)
        .collect();
    let decisions = kept
        .iter()
        .map(|m| classify_masklet(m, s, t, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&a, &b| write_order(kept[a], kept[b]));

    let mut out = s.clone();
    let bg = t.background();
    let pixels = out.as_mut_slice();
    for i in order {
        let label = match (decisions[i].verdict, cfg.reject_mode) {
            (Verdict::Assigned(c), _) => c,
            (Verdict::Rejected, RejectMode::Background) => bg,
            (Verdict::Rejected, RejectMode::Keep) => continue,
        };
        for p in kept[i].mask.iter_ones() {
            pixels[p] = label;
        }
    }
    Ok((out, decisions))
}

fn write_order(a: &Masklet, b: &Masklet) -> Ordering {
    a.score.total_cmp(&b.score).then(a.id.cmp(&b.id))
}

#[derive(Serialize)]
struct DecisionsDoc<'a> {
    schema_version: u32,
    decisions: Vec<DecisionDoc<'a>>,
}

#[derive(Serialize)]
struct DecisionDoc<'a> {
    id: u32,
    score: f64,
    verdict: &'static str,
    class: Option<&'a str>,
    area: u64,
    max_fraction: f64,
    counts: std::collections::BTreeMap<&'a str, u64>,
}

/// Decisions as a JSON report. Per-class counts list only non-zero classes.
pub fn decisions_to_json(decisions: &[MaskletDecision], t: &Taxonomy) -> String {
    let doc = DecisionsDoc {
        schema_version: crate::SCHEMA_VERSION,
        decisions: decisions
            .iter()
            .map(|d| DecisionDoc {
                id: d.masklet_id,
                score: d.score,
                verdict: match d.verdict {
                    Verdict::Assigned(_) => "assigned",
                    Verdict::Rejected => "rejected",
                },
                class: d.assigned_class().map(|c| t.name(c)),
                area: d.area(),
                max_fraction: d.max_fraction,
                counts: t
                    .ids()
                    .filter(|c| d.counts[c.index()] > 0)
                    .map(|c| (t.name(c), d.counts[c.index()]))
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("decisions serialize")
}
