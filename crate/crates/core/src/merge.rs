//! Confusion matrices and the class-merge policy derived from them.
//!
//! Two glass classes are similar when, in the row-normalized confusion
//! matrix, either one is predicted for the other on more than
//! `similarity_min` of its pixels. Similar classes accept each other's
//! labels, without transitive closure.
//!
//! Water glass is special: its category spans many visually different
//! models. For a similar pair `{X, water_glass}` objects of `X` may be
//! labeled water glass, but a water-glass object may be labeled `X` only if
//! its model is on a hand-picked allowlist for `X`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::raster::{GroundTruth, LabelMap};
use crate::taxonomy::{ClassId, ClassSet, Taxonomy};

/// Pixel counts, rows = ground-truth class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Config("confusion matrix is not square".into()));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, gt: ClassId, pred: ClassId) -> u64 {
        self.counts[gt.index() * self.classes + pred.index()]
    }

    pub fn row(&self, gt: ClassId) -> &[u64] {
        let k = self.classes;
        &self.counts[gt.index() * k..(gt.index() + 1) * k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image's pixels. Every pixel increments
    /// `(class of its ground truth, predicted class)`.
    pub fn accumulate(&mut self, gt: &GroundTruth, pred: &LabelMap, t: &Taxonomy) -> Result<()> {
        check_dims(gt.dims(), pred.dims())?;
        if self.classes != t.len() {
            return Err(Error::Config(format!(
                "confusion matrix has {} classes, taxonomy {}",
                self.classes,
                t.len()
            )));
        }
        let bg = t.background();
        let mut class_of = BTreeMap::new();
        class_of.insert(0u32, bg);
        for (&id, inst) in gt.instances() {
            class_of.insert(id, inst.class);
        }
        let k = self.classes;
        let mut last = (u32::MAX, bg);
        for (&inst, &p) in gt.instance_map().iter().zip(pred.as_slice()) {
            if p.index() >= k {
                return Err(Error::ClassOutOfRange {
                    id: p.index(),
                    classes: k,
                });
            }
            if inst != last.0 {
                last = (inst, class_of[&inst]);
            }
            self.counts[last.1.index() * k + p.index()] += 1;
        }
        Ok(())
    }

    /// Componentwise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::Config(format!(
                "cannot add {0}x{0} and {1}x{1} confusion matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn row_normalize(&self) -> Fractions {
        let k = self.classes;
        let mut values = vec![0.0; k * k];
        for r in 0..k {
            let row = &self.counts[r * k..(r + 1) * k];
            let sum: u64 = row.iter().sum();
            if sum > 0 {
                for (v, &c) in values[r * k..(r + 1) * k].iter_mut().zip(row) {
                    *v = c as f64 / sum as f64;
                }
            }
        }
        Fractions { classes: k, values }
    }

    pub fn to_json(&self, t: &Taxonomy) -> String {
        let doc = ConfusionDoc {
            schema_version: crate::SCHEMA_VERSION,
            classes: t.classes().iter().map(|c| c.name.clone()).collect(),
            counts: self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("confusion matrix serializes")
    }

    /// CSV with one row per ground-truth class and one column per
    /// predicted class.
    pub fn to_csv(&self, t: &Taxonomy) -> String {
        let mut out = String::from("gt\\pred");
        for c in t.classes() {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push('\n');
        for c in t.ids() {
            out.push_str(t.name(c));
            for v in self.row(c) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`ConfusionMatrix::to_json`] output. Class names must match
    /// `t` in order.
    pub fn parse_json(text: &str, t: &Taxonomy) -> Result<Self> {
        let doc: ConfusionDoc =
            serde_json::from_str(text).map_err(|e| Error::json("confusion matrix", e))?;
        let names: Vec<&str> = t.classes().iter().map(|c| c.name.as_str()).collect();
        if doc.classes != names {
            return Err(Error::Config(
                "confusion matrix classes do not match the taxonomy".into(),
            ));
        }
        Self::from_rows(doc.counts)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfusionDoc {
    #[serde(default)]
    schema_version: u32,
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

/// Builds or extends a confusion matrix with one (ground truth, prediction)
/// pair.
pub fn accumulate_confusion(
    gt: &GroundTruth,
    pred: &LabelMap,
    t: &Taxonomy,
    mut acc: ConfusionMatrix,
) -> Result<ConfusionMatrix> {
    acc.accumulate(gt, pred, t)?;
    Ok(acc)
}

/// Row-normalized confusion: entry `(g, p)` is the share of ground-truth
/// `g` pixels predicted as `p`. Empty rows are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Fractions {
    classes: usize,
    values: Vec<f64>,
}

impl Fractions {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Config("fraction matrix is not square".into()));
        }
        Ok(Fractions {
            classes: k,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, gt: ClassId, pred: ClassId) -> f64 {
        self.values[gt.index() * self.classes + pred.index()]
    }

    pub fn row(&self, gt: ClassId) -> &[f64] {
        let k = self.classes;
        &self.values[gt.index() * k..(gt.index() + 1) * k]
    }
}

pub fn row_normalize(m: &ConfusionMatrix) -> Fractions {
    m.row_normalize()
}

/// Unordered pair of distinct classes, stored low id first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassPair(ClassId, ClassId);

impl ClassPair {
    pub fn new(a: ClassId, b: ClassId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(ClassPair(a, b)),
            std::cmp::Ordering::Greater => Some(ClassPair(b, a)),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn low(&self) -> ClassId {
        self.0
    }

    pub fn high(&self) -> ClassId {
        self.1
    }

    pub fn contains(&self, c: ClassId) -> bool {
        self.0 == c || self.1 == c
    }

    /// The member that is not `c`, if `c` is a member.
    pub fn other(&self, c: ClassId) -> Option<ClassId> {
        if self.0 == c {
            Some(self.1)
        } else if self.1 == c {
            Some(self.0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeDerivationConfig {
    /// A pair is similar when a confusion fraction is strictly above this.
    pub similarity_min: f64,
    /// Classes that never merge (typically the unseen class).
    pub excluded: BTreeSet<ClassId>,
}

impl Default for MergeDerivationConfig {
    fn default() -> Self {
        MergeDerivationConfig {
            similarity_min: 0.05,
            excluded: BTreeSet::new(),
        }
    }
}

pub fn derive_similar_pairs(
    fractions: &Fractions,
    cfg: &MergeDerivationConfig,
    t: &Taxonomy,
) -> Result<BTreeSet<ClassPair>> {
    if !(0.0..=1.0).contains(&cfg.similarity_min) {
        return Err(Error::Config(format!(
            "similarity threshold {} outside [0,1]",
            cfg.similarity_min
        )));
    }
    if fractions.classes() != t.len() {
        return Err(Error::Config(format!(
            "fraction matrix has {} classes, taxonomy {}",
            fractions.classes(),
            t.len()
        )));
    }
    if let Some(c) = cfg.excluded.iter().find(|c| !t.is_glass(**c)) {
        return Err(Error::Config(format!("excluded class {c} is not a glass class")));
    }
    let candidates: Vec<ClassId> = t
        .glass_classes()
        .filter(|c| !cfg.excluded.contains(c))
        .collect();
    let mut pairs = BTreeSet::new();
    for (i, &a) in candidates.iter().enumerate() {
        for &b in &candidates[i + 1..] {
            if fractions.get(a, b) > cfg.similarity_min || fractions.get(b, a) > cfg.similarity_min {
                pairs.insert(ClassPair::new(a, b).expect("distinct classes"));
            }
        }
    }
    Ok(pairs)
}

/// Manually chosen water-glass models that may carry a partner's label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaterGlassOverride {
    pub partner: ClassId,
    pub models: BTreeSet<String>,
}

/// Input to [`build_merge_policy`]: which class is water glass, and the
/// per-partner model allowlists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverrideSpec {
    pub water_glass: ClassId,
    pub overrides: Vec<WaterGlassOverride>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideSpecDoc {
    water_glass: String,
    #[serde(default)]
    overrides: Vec<OverrideDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideDoc {
    class: String,
    models: Vec<String>,
}

impl OverrideSpec {
    /// Parses `{"water_glass": "...", "overrides": [{"class": "...", "models": [...]}]}`.
    pub fn parse(text: &str, t: &Taxonomy) -> Result<Self> {
        let doc: OverrideSpecDoc =
            serde_json::from_str(text).map_err(|e| Error::json("overrides", e))?;
        let water_glass = t.class_by_name(&doc.water_glass)?;
        let overrides = doc
            .overrides
            .into_iter()
            .map(|o| {
                Ok(WaterGlassOverride {
                    partner: t.class_by_name(&o.class)?,
                    models: o.models.into_iter().collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(OverrideSpec {
            water_glass,
            overrides,
        })
    }
}

/// Which predicted labels count as correct for each ground-truth class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePolicy {
    allowed: Vec<ClassSet>,
    water_glass: Option<ClassId>,
    overrides: Vec<WaterGlassOverride>,
}

impl MergePolicy {
    /// Every class accepts only itself.
    pub fn identity(t: &Taxonomy) -> Self {
        MergePolicy {
            allowed: t.ids().map(ClassSet::single).collect(),
            water_glass: None,
            overrides: Vec::new(),
        }
    }

    /// Builds a policy from raw parts, checking its invariants.
    pub fn from_parts(
        allowed: Vec<ClassSet>,
        water_glass: Option<ClassId>,
        overrides: Vec<WaterGlassOverride>,
        t: &Taxonomy,
    ) -> Result<Self> {
        let p = MergePolicy {
            allowed,
            water_glass,
            overrides,
        };
        p.validate(t)?;
        Ok(p)
    }

    pub fn validate(&self, t: &Taxonomy) -> Result<()> {
        if self.allowed.len() != t.len() {
            return Err(Error::Policy(format!(
                "policy covers {} classes, taxonomy has {}",
                self.allowed.len(),
                t.len()
            )));
        }
        for c in t.ids() {
            let set = &self.allowed[c.index()];
            if !set.contains(c) {
                return Err(Error::Policy(format!("{} does not allow itself", t.name(c))));
            }
            if set.iter().any(|d| !t.contains(d)) {
                return Err(Error::Policy(format!("{} allows an unknown class", t.name(c))));
            }
        }
        let bg = t.background();
        if self.allowed[bg.index()] != ClassSet::single(bg) {
            return Err(Error::Policy("background must only allow background".into()));
        }
        if t.ids().any(|c| c != bg && self.allowed[c.index()].contains(bg)) {
            return Err(Error::Policy("glass classes may not allow background".into()));
        }
        if !self.overrides.is_empty() {
            let wg = self
                .water_glass
                .ok_or_else(|| Error::Policy("overrides without a water-glass class".into()))?;
            if !t.is_glass(wg) {
                return Err(Error::Policy("water-glass class must be a glass class".into()));
            }
            for o in &self.overrides {
                if !t.is_glass(o.partner) || o.partner == wg {
                    return Err(Error::Policy(format!(
                        "override partner {} is not a glass class distinct from water glass",
                        o.partner
                    )));
                }
                for m in &o.models {
                    if t.model_class(m) != Some(wg) {
                        return Err(Error::UnknownModel(m.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Class-level allowed labels for ground-truth class `c`.
    pub fn allowed(&self, c: ClassId) -> &ClassSet {
        &self.allowed[c.index()]
    }

    pub fn water_glass(&self) -> Option<ClassId> {
        self.water_glass
    }

    pub fn overrides(&self) -> &[WaterGlassOverride] {
        &self.overrides
    }

    pub fn classes(&self) -> usize {
        self.allowed.len()
    }

    /// Allowed labels for a glass object of `class` and `model`: the
    /// class-level set plus any override partner whose allowlist names the
    /// model.
    pub fn allowed_for_instance(&self, class: ClassId, model: &str) -> ClassSet {
        let mut set = self.allowed[class.index()];
        if Some(class) == self.water_glass {
            for o in &self.overrides {
                if o.models.contains(model) {
                    set.insert(o.partner);
                }
            }
        }
        set
    }

    pub fn to_json(&self, t: &Taxonomy) -> String {
        let doc = PolicyDoc {
            schema_version: crate::SCHEMA_VERSION,
            allowed: t
                .ids()
                .map(|c| {
                    (
                        t.name(c).to_owned(),
                        self.allowed[c.index()].iter().map(|d| t.name(d).to_owned()).collect(),
                    )
                })
                .collect(),
            water_glass: self.water_glass.map(|c| t.name(c).to_owned()),
            water_glass_overrides: self
                .overrides
                .iter()
                .map(|o| OverrideDoc {
                    class: t.name(o.partner).to_owned(),
                    models: o.models.iter().cloned().collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("policy serializes")
    }

    /// Parses a policy file. Classes missing from `allowed` accept only
    /// themselves, and every class implicitly allows itself.
    pub fn parse_json(text: &str, t: &Taxonomy) -> Result<Self> {
        let doc: PolicyDoc = serde_json::from_str(text).map_err(|e| Error::json("policy", e))?;
        let mut allowed: Vec<ClassSet> = t.ids().map(ClassSet::single).collect();
        for (name, labels) in &doc.allowed {
            let c = t.class_by_name(name)?;
            for l in labels {
                allowed[c.index()].insert(t.class_by_name(l)?);
            }
        }
        let water_glass = match &doc.water_glass {
            Some(name) => Some(t.class_by_name(name)?),
            None if !doc.water_glass_overrides.is_empty() => Some(t.class_by_name("water_glass")?),
            None => None,
        };
        let mut overrides: Vec<WaterGlassOverride> = Vec::new();
        for o in doc.water_glass_overrides {
            let partner = t.class_by_name(&o.class)?;
            match overrides.iter_mut().find(|x| x.partner == partner) {
                Some(existing) => existing.models.extend(o.models),
                None => overrides.push(WaterGlassOverride {
                    partner,
                    models: o.models.into_iter().collect(),
                }),
            }
        }
        Self::from_parts(allowed, water_glass, overrides, t)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    #[serde(default)]
    schema_version: u32,
    allowed: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    water_glass: Option<String>,
    #[serde(default)]
    water_glass_overrides: Vec<OverrideDoc>,
}

/// Turns similar pairs into a policy. Ordinary pairs are symmetric. With
/// overrides, pairs involving the water-glass class grant only the forward
/// direction (partner may be labeled water glass); the reverse is granted
/// per model through the override allowlists.
pub fn build_merge_policy(
    pairs: &BTreeSet<ClassPair>,
    spec: Option<&OverrideSpec>,
    t: &Taxonomy,
) -> Result<MergePolicy> {
    let mut allowed: Vec<ClassSet> = t.ids().map(ClassSet::single).collect();
    let water_glass = spec.map(|s| s.water_glass);
    for pair in pairs {
        for c in [pair.low(), pair.high()] {
            if !t.is_glass(c) {
                return Err(Error::Policy(format!("pair member {c} is not a glass class")));
            }
        }
        match water_glass.and_then(|wg| pair.other(wg)) {
            Some(partner) => {
                allowed[partner.index()].insert(water_glass.unwrap());
            }
            None => {
                allowed[pair.low().index()].insert(pair.high());
                allowed[pair.high().index()].insert(pair.low());
            }
        }
    }

    let mut overrides: Vec<WaterGlassOverride> = Vec::new();
    if let Some(spec) = spec {
        for o in &spec.overrides {
            let merged = ClassPair::new(o.partner, spec.water_glass)
                .is_some_and(|p| pairs.contains(&p));
            if !merged {
                return Err(Error::Policy(format!(
                    "override for {} references a pair that was not derived",
                    t.name(o.partner)
                )));
            }
            for m in &o.models {
                if t.model_class(m) != Some(spec.water_glass) {
                    return Err(Error::UnknownModel(m.clone()));
                }
            }
            match overrides.iter_mut().find(|x| x.partner == o.partner) {
                Some(existing) => existing.models.extend(o.models.iter().cloned()),
                None => overrides.push(o.clone()),
            }
        }
    }
    overrides.sort_by_key(|o| o.partner);
    MergePolicy::from_parts(allowed, water_glass, overrides, t)
}
