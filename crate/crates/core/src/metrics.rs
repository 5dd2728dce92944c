//! Merge-aware IoU and pixel accuracy.
//!
//! A pixel of ground-truth class `g` is a true positive for `g` when its
//! predicted label is in the pixel's allowed set. Otherwise it is a false
//! negative for `g` and a false positive for the predicted class. With the
//! identity policy this is the ordinary confusion-matrix IoU.
//!
//! Dataset metrics are computed from summed counts, never by averaging
//! per-image values. Classes with an undefined value (zero denominator) are
//! left out of the means.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{check_dims, Error, Result};
use crate::merge::MergePolicy;
use crate::raster::{GroundTruth, LabelMap};
use crate::taxonomy::{ClassId, ClassSet, Taxonomy};

/// Ground truth of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelTruth<'a> {
    Background(ClassId),
    Glass { class: ClassId, model: &'a str },
}

pub fn allowed_labels(pixel: PixelTruth<'_>, policy: &MergePolicy) -> ClassSet {
    match pixel {
        PixelTruth::Background(bg) => ClassSet::single(bg),
        PixelTruth::Glass { class, model } => policy.allowed_for_instance(class, model),
    }
}

/// Per-class true positive, false positive and false negative pixel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl Tally {
    pub fn new(classes: usize) -> Self {
        Tally {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    pub fn merge(&mut self, other: &Tally) -> Result<()> {
        if self.classes() != other.classes() {
            return Err(Error::Config(format!(
                "cannot merge tallies over {} and {} classes",
                self.classes(),
                other.classes()
            )));
        }
        for (dst, src) in [
            (&mut self.tp, &other.tp),
            (&mut self.fp, &other.fp),
            (&mut self.fn_, &other.fn_),
        ] {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Σ (TP + FN): every pixel has exactly one ground-truth class.
    pub fn pixels(&self) -> u64 {
        self.tp.iter().sum::<u64>() + self.fn_.iter().sum::<u64>()
    }
}

pub fn tally_image(
    gt: &GroundTruth,
    pred: &LabelMap,
    policy: &MergePolicy,
    t: &Taxonomy,
) -> Result<Tally> {
    check_dims(gt.dims(), pred.dims())?;
    let k = t.len();
    if policy.classes() != k {
        return Err(Error::Policy(format!(
            "policy covers {} classes, taxonomy has {k}",
            policy.classes()
        )));
    }
    let bg = t.background();
    let mut truth: BTreeMap<u32, (ClassId, ClassSet)> = BTreeMap::new();
    truth.insert(0, (bg, allowed_labels(PixelTruth::Background(bg), policy)));
    for (&id, inst) in gt.instances() {
        let pixel = PixelTruth::Glass {
            class: inst.class,
            model: &inst.model,
        };
        truth.insert(id, (inst.class, allowed_labels(pixel, policy)));
    }

    let mut tally = Tally::new(k);
    let mut current = (u32::MAX, bg, ClassSet::empty());
    for (&inst, &p) in gt.instance_map().iter().zip(pred.as_slice()) {
        if p.index() >= k {
            return Err(Error::ClassOutOfRange {
                id: p.index(),
                classes: k,
            });
        }
        if inst != current.0 {
            let (g, allowed) = truth[&inst];
            current = (inst, g, allowed);
        }
        let (_, g, allowed) = current;
        if allowed.contains(p) {
            tally.tp[g.index()] += 1;
        } else {
            tally.fn_[g.index()] += 1;
            tally.fp[p.index()] += 1;
        }
    }
    Ok(tally)
}

/// Componentwise sum. An empty input is an error because the class count
/// is unknown.
pub fn merge_tallies<'a>(tallies: impl IntoIterator<Item = &'a Tally>) -> Result<Tally> {
    let mut iter = tallies.into_iter();
    let mut acc = iter
        .next()
        .ok_or_else(|| Error::Config("no tallies to merge".into()))?
        .clone();
    for t in iter {
        acc.merge(t)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou: Option<f64>,
    pub acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub miou: Option<f64>,
    pub macc: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn compute_metrics(tally: &Tally, t: &Taxonomy) -> MetricsReport {
    let per_class: Vec<ClassMetrics> = t
        .ids()
        .map(|c| {
            let i = c.index();
            let (tp, fp, fn_) = (tally.tp[i], tally.fp[i], tally.fn_[i]);
            ClassMetrics {
                class: c,
                tp,
                fp,
                fn_,
                iou: ratio(tp, tp + fp + fn_),
                acc: ratio(tp, tp + fn_),
            }
        })
        .collect();
    MetricsReport {
        miou: mean(per_class.iter().map(|m| m.iou)),
        macc: mean(per_class.iter().map(|m| m.acc)),
        per_class,
    }
}

impl MetricsReport {
    pub fn class(&self, c: ClassId) -> &ClassMetrics {
        &self.per_class[c.index()]
    }

    pub fn iou(&self, c: ClassId) -> Option<f64> {
        self.per_class[c.index()].iou
    }

    pub fn acc(&self, c: ClassId) -> Option<f64> {
        self.per_class[c.index()].acc
    }

    /// JSON report with per-class rows, the means, and the IoU of each
    /// highlighted class (e.g. an unseen class).
    pub fn to_json(&self, t: &Taxonomy, highlight: &[ClassId], images: usize) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            class: &'a str,
            tp: u64,
            fp: u64,
            #[serde(rename = "fn")]
            fn_: u64,
            iou: Option<f64>,
            acc: Option<f64>,
        }
        #[derive(Serialize)]
        struct Highlight<'a> {
            class: &'a str,
            iou: Option<f64>,
            acc: Option<f64>,
        }
        #[derive(Serialize)]
        struct Mean {
            miou: Option<f64>,
            macc: Option<f64>,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            images: usize,
            classes: Vec<Row<'a>>,
            mean: Mean,
            highlight: Vec<Highlight<'a>>,
        }
        let doc = Doc {
            schema_version: crate::SCHEMA_VERSION,
            images,
            classes: self
                .per_class
                .iter()
                .map(|m| Row {
                    class: t.name(m.class),
                    tp: m.tp,
                    fp: m.fp,
                    fn_: m.fn_,
                    iou: m.iou,
                    acc: m.acc,
                })
                .collect(),
            mean: Mean {
                miou: self.miou,
                macc: self.macc,
            },
            highlight: highlight
                .iter()
                .map(|&c| Highlight {
                    class: t.name(c),
                    iou: self.iou(c),
                    acc: self.acc(c),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }

    /// CSV columns `class,TP,FP,FN,IoU,Acc`; undefined values are empty.
    /// The final `mean` row carries summed counts with mIoU and mAcc.
    pub fn to_csv(&self, t: &Taxonomy) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("class,TP,FP,FN,IoU,Acc\n");
        for m in &self.per_class {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                t.name(m.class),
                m.tp,
                m.fp,
                m.fn_,
                fmt(m.iou),
                fmt(m.acc)
            )
            .unwrap();
        }
        let sum = |f: fn(&ClassMetrics) -> u64| self.per_class.iter().map(f).sum::<u64>();
        writeln!(
            out,
            "mean,{},{},{},{},{}",
            sum(|m| m.tp),
            sum(|m| m.fp),
            sum(|m| m.fn_),
            fmt(self.miou),
            fmt(self.macc)
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::{build_merge_policy, ClassPair, OverrideSpec, WaterGlassOverride};
    use crate::raster::{BitMask, Instance};
    use std::collections::BTreeSet;

    /// Taxonomy {bg, A, B}.
    fn abc() -> Taxonomy {
        crate::taxonomy::load_taxonomy(
            r#"{"classes":[{"name":"bg","kind":"background"},{"name":"A","kind":"glass"},{"name":"B","kind":"glass"}],
                "models":{"a1":"A","b1":"B"}}"#,
        )
        .unwrap()
    }

    /// 1x4 image, gt [bg, A, A, B], pred [bg, A, B, B].
    fn worked_example(t: &Taxonomy) -> (GroundTruth, LabelMap) {
        let (a, b) = (ClassId(1), ClassId(2));
        let gt = GroundTruth::from_instances(
            4,
            1,
            [
                (1, Instance { class: a, model: "a1".into() }, BitMask::from_fn(4, 1, |x, _| x == 1 || x == 2)),
                (2, Instance { class: b, model: "b1".into() }, BitMask::from_fn(4, 1, |x, _| x == 3)),
            ],
            t,
        )
        .unwrap();
        let pred = LabelMap::from_data(4, 1, vec![ClassId(0), a, b, b]).unwrap();
        (gt, pred)
    }

    #[test]
    fn identity_policy_hand_counts() {
        let t = abc();
        let (gt, pred) = worked_example(&t);
        let tally = tally_image(&gt, &pred, &MergePolicy::identity(&t), &t).unwrap();
        assert_eq!(tally.tp, vec![1, 1, 1]);
        assert_eq!(tally.fn_, vec![0, 1, 0]);
        assert_eq!(tally.fp, vec![0, 0, 1]);
        assert_eq!(tally.pixels(), 4);

        let r = compute_metrics(&tally, &t);
        assert_eq!(r.iou(ClassId(0)), Some(1.0));
        assert_eq!(r.iou(ClassId(1)), Some(0.5));
        assert_eq!(r.iou(ClassId(2)), Some(0.5));
        assert_eq!(r.acc(ClassId(1)), Some(0.5));
        assert_eq!(r.acc(ClassId(2)), Some(1.0));
        assert!((r.miou.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macc.unwrap() - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn merged_policy_hand_counts() {
        let t = abc();
        let (gt, pred) = worked_example(&t);
        let mut allowed: Vec<ClassSet> = t.ids().map(ClassSet::single).collect();
        allowed[1].insert(ClassId(2));
        let policy = MergePolicy::from_parts(allowed, None, vec![], &t).unwrap();
        let tally = tally_image(&gt, &pred, &policy, &t).unwrap();
        assert_eq!(tally.tp, vec![1, 2, 1]);
        assert_eq!(tally.fn_, vec![0, 0, 0]);
        assert_eq!(tally.fp, vec![0, 0, 0]);
        let r = compute_metrics(&tally, &t);
        assert_eq!(r.miou, Some(1.0));
    }

    #[test]
    fn all_background_image() {
        let t = abc();
        let gt = GroundTruth::empty(3, 3);
        let pred = gt.project_labels(&t);
        let r = compute_metrics(&tally_image(&gt, &pred, &MergePolicy::identity(&t), &t).unwrap(), &t);
        assert_eq!(r.iou(ClassId(0)), Some(1.0));
        assert_eq!(r.iou(ClassId(1)), None);
        assert_eq!(r.acc(ClassId(2)), None);
        assert_eq!(r.miou, Some(1.0));
        assert_eq!(r.macc, Some(1.0));
    }

    #[test]
    fn allowed_labels_per_pixel() {
        let t = Taxonomy::default_config();
        let id = |n| t.class_by_name(n).unwrap();
        let bg = t.background();
        let policy = MergePolicy::identity(&t);
        assert_eq!(allowed_labels(PixelTruth::Background(bg), &policy), ClassSet::single(bg));

        let (pint, wg) = (id("pint_glass"), id("water_glass"));
        let pairs = BTreeSet::from([ClassPair::new(pint, wg).unwrap()]);
        let spec = OverrideSpec {
            water_glass: wg,
            overrides: vec![WaterGlassOverride {
                partner: pint,
                models: BTreeSet::from(["POKAL".to_owned()]),
            }],
        };
        let policy = build_merge_policy(&pairs, Some(&spec), &t).unwrap();
        let pokal = allowed_labels(PixelTruth::Glass { class: wg, model: "POKAL" }, &policy);
        assert!(pokal.contains(pint) && pokal.contains(wg));
        let other = allowed_labels(PixelTruth::Glass { class: wg, model: "GODIS" }, &policy);
        assert_eq!(other, ClassSet::single(wg));
        assert_eq!(
            allowed_labels(PixelTruth::Background(bg), &policy),
            ClassSet::single(bg)
        );
    }

    #[test]
    fn tallies_add_up() {
        let t = abc();
        let (gt, pred) = worked_example(&t);
        let one = tally_image(&gt, &pred, &MergePolicy::identity(&t), &t).unwrap();
        assert_eq!(merge_tallies([&one]).unwrap(), one);
        let two = merge_tallies([&one, &one]).unwrap();
        assert_eq!(two.tp, vec![2, 2, 2]);
        let (r1, r2) = (compute_metrics(&one, &t), compute_metrics(&two, &t));
        assert_eq!(r1.miou, r2.miou);
        assert_eq!(r1.macc, r2.macc);
        for c in t.ids() {
            assert_eq!(r1.iou(c), r2.iou(c));
            assert_eq!(r1.acc(c), r2.acc(c));
        }
        assert!(merge_tallies(std::iter::empty()).is_err());
        assert!(merge_tallies([&one, &Tally::new(5)]).is_err());
    }

    #[test]
    fn errors() {
        let t = abc();
        let (gt, _) = worked_example(&t);
        let policy = MergePolicy::identity(&t);
        assert!(tally_image(&gt, &LabelMap::new(2, 2, ClassId(0)), &policy, &t).is_err());
        let bad = LabelMap::from_data(4, 1, vec![ClassId(0), ClassId(7), ClassId(0), ClassId(0)]).unwrap();
        assert!(matches!(
            tally_image(&gt, &bad, &policy, &t),
            Err(Error::ClassOutOfRange { id: 7, .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let t = abc();
        let (gt, pred) = worked_example(&t);
        let r = compute_metrics(&tally_image(&gt, &pred, &MergePolicy::identity(&t), &t).unwrap(), &t);
        let csv = r.to_csv(&t);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,TP,FP,FN,IoU,Acc");
        assert_eq!(lines[1], "bg,1,0,0,1,1");
        assert_eq!(lines[2], "A,1,0,1,0.5,0.5");
        assert_eq!(lines[3], "B,1,1,0,0.5,1");
        assert!(lines[4].starts_with("mean,3,1,1,0.6666666666666666,0.8333333333333"));
    }
}
