//! Deterministic desk-scale scenes: simple geometric "glasses" with
//! instance and model labels, perturbed predictions, and masklets with
//! jitter and background false positives.
//!
//! Every generator is a pure function of its parameters and seed; see
//! [`rng`] for the exact random stream.

pub mod rng;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::raster::{BitMask, GroundTruth, Instance, LabelMap, Masklet};
use crate::taxonomy::{ClassId, Taxonomy};

pub use rng::{derive_seed, SplitMix64};

/// Placement retries per object at each box scale. After that many misses
/// the box size range is halved, down to `PLACEMENT_SCALES` halvings.
const PLACEMENT_ATTEMPTS: usize = 50;
const PLACEMENT_SCALES: u32 = 4;
const SPURIOUS_ATTEMPTS: usize = 100;

/// Axis-aligned box, `x..x+w` by `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    /// True if the boxes touch or overlap once `self` is grown by `gap`.
    fn near(&self, other: &Rect, gap: usize) -> bool {
        self.x < other.x + other.w + gap
            && other.x < self.x + self.w + gap
            && self.y < other.y + other.h + gap
            && other.y < self.y + self.h + gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Ellipse,
    /// Elliptic bowl on a one-column stem with a flat foot.
    StemAndBowl,
}

impl Shape {
    fn contains(self, r: &Rect, x: usize, y: usize) -> bool {
        let (lx, ly) = ((x - r.x) as f64 + 0.5, (y - r.y) as f64 + 0.5);
        let in_ellipse = |cx: f64, cy: f64, rx: f64, ry: f64| {
            let (dx, dy) = ((lx - cx) / rx, (ly - cy) / ry);
            dx * dx + dy * dy <= 1.0
        };
        let (w, h) = (r.w as f64, r.h as f64);
        match self {
            Shape::Rect => true,
            Shape::Ellipse => in_ellipse(w / 2.0, h / 2.0, w / 2.0, h / 2.0),
            Shape::StemAndBowl => {
                let bowl_h = (r.h * 11 / 20).max(2);
                let foot_h = (r.h / 10).max(1);
                let ry = y - r.y;
                if ry < bowl_h {
                    in_ellipse(w / 2.0, bowl_h as f64 / 2.0, w / 2.0, bowl_h as f64 / 2.0)
                } else if ry >= r.h - foot_h {
                    let foot_w = (r.w * 7 / 10).max(1);
                    let left = (r.w - foot_w) / 2;
                    (left..left + foot_w).contains(&(x - r.x))
                } else {
                    let stem_w = (r.w / 6).max(1);
                    let left = (r.w - stem_w) / 2;
                    (left..left + stem_w).contains(&(x - r.x))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Classes to draw from, each with its model pool.
    pub pool: Vec<(ClassId, Vec<String>)>,
    /// Chance, per extra slot, of placing an opaque non-class object. These
    /// stay background in the ground truth.
    pub distractor_prob: f64,
}

impl SceneParams {
    /// Scenes of 3 to 4 glasses drawn from every glass class that has at
    /// least one registered model.
    pub fn from_taxonomy(t: &Taxonomy, width: usize, height: usize) -> Result<Self> {
        let pool: Vec<(ClassId, Vec<String>)> = t
            .glass_classes()
            .map(|c| (c, t.models_of(c).map(str::to_owned).collect::<Vec<_>>()))
            .filter(|(_, models)| !models.is_empty())
            .collect();
        let p = SceneParams {
            width,
            height,
            min_objects: 3,
            max_objects: 4,
            pool,
            distractor_prob: 0.3,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Fixture(format!(
                "scene {}x{} is smaller than 16x16",
                self.width, self.height
            )));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Fixture(format!(
                "object count range {}..={} is invalid",
                self.min_objects, self.max_objects
            )));
        }
        if self.pool.is_empty() || self.pool.iter().any(|(_, m)| m.is_empty()) {
            return Err(Error::Fixture("class and model pools must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return Err(Error::Fixture("distractor probability outside [0,1]".into()));
        }
        Ok(())
    }
}

/// A generated scene. `labels` is the ground truth projected to classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub groundtruth: GroundTruth,
    pub labels: LabelMap,
    pub distractors: Vec<Rect>,
}

fn random_box(rng: &mut SplitMix64, width: usize, height: usize, scale: u32) -> Rect {
    let size = |lo: usize, hi: usize| ((lo >> scale).max(3), (hi >> scale).max(3));
    let (w_lo, w_hi) = size((width / 8).max(4), (width / 3).max(4));
    let (h_lo, h_hi) = size((height / 6).max(6), (height * 2 / 5).max(6));
    let w = rng.range(w_lo, w_hi);
    let h = rng.range(h_lo, h_hi);
    Rect {
        x: rng.range(0, width - w),
        y: rng.range(0, height - h),
        w,
        h,
    }
}

fn place(rng: &mut SplitMix64, params: &SceneParams, taken: &[Rect]) -> Option<Rect> {
    (0..PLACEMENT_SCALES)
        .flat_map(|scale| std::iter::repeat_n(scale, PLACEMENT_ATTEMPTS))
        .map(|scale| random_box(rng, params.width, params.height, scale))
        .find(|r| taken.iter().all(|t| !r.near(t, 1)))
}

/// Places non-overlapping shapes as instances with (class, model) drawn
/// from the pools. Instance ids are 1, 2, ... in placement order.
pub fn gen_scene(seed: u64, params: &SceneParams, t: &Taxonomy) -> Result<Scene> {
    params.validate()?;
    let mut rng = SplitMix64::new(seed);
    let count = rng.range(params.min_objects, params.max_objects);
    let (w, h) = (params.width, params.height);
    let mut boxes = Vec::with_capacity(count);
    let mut parts = Vec::with_capacity(count);
    for id in 1..=count as u32 {
        let rect = place(&mut rng, params, &boxes).ok_or_else(|| {
            Error::Fixture(format!("could not place object {id} of {count} in {w}x{h}"))
        })?;
        let shape = match rng.below(3) {
            0 => Shape::Rect,
            1 => Shape::Ellipse,
            _ => Shape::StemAndBowl,
        };
        let (class, models) = &params.pool[rng.below(params.pool.len() as u64) as usize];
        let model = models[rng.below(models.len() as u64) as usize].clone();
        let mask = BitMask::from_fn(w, h, |x, y| {
            x >= rect.x && x < rect.x + rect.w && y >= rect.y && y < rect.y + rect.h
                && shape.contains(&rect, x, y)
        });
        boxes.push(rect);
        parts.push((id, Instance { class: *class, model }, mask));
    }
    let mut distractors = Vec::new();
    for _ in 0..2 {
        if rng.chance(params.distractor_prob) {
            if let Some(r) = place(&mut rng, params, &boxes) {
                boxes.push(r);
                distractors.push(r);
            }
        }
    }
    let groundtruth = GroundTruth::from_instances(w, h, parts, t)?;
    let labels = groundtruth.project_labels(t);
    Ok(Scene {
        groundtruth,
        labels,
        distractors,
    })
}

/// Corruptions applied to a clean label map to imitate a segmentation
/// network's failure modes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerturbParams {
    /// Glass pixel relabeled as a uniformly chosen other glass class.
    pub flip_rate: f64,
    /// `(from, to, probability)`: targeted confusion between two classes.
    pub bias: Vec<(ClassId, ClassId, f64)>,
    /// Background pixel relabeled as a random glass class.
    pub speckle_rate: f64,
    /// Glass pixel on an object border relabeled as background.
    pub erosion_rate: f64,
    /// Glass pixel relabeled as background.
    pub hole_rate: f64,
    /// Leave border pixels and background untouched.
    pub interior_only: bool,
}

impl PerturbParams {
    /// Mixed perturbation used for generated fixture sets.
    pub fn typical(t: &Taxonomy) -> Self {
        let mut bias = Vec::new();
        let mut add = |from: &str, to: &str, p: f64| {
            if let (Ok(a), Ok(b)) = (t.class_by_name(from), t.class_by_name(to)) {
                bias.push((a, b, p));
            }
        };
        add("red_wine_glass", "white_wine_glass", 0.15);
        add("white_wine_glass", "red_wine_glass", 0.10);
        add("tulip_beer_glass", "white_wine_glass", 0.10);
        add("pint_glass", "water_glass", 0.10);
        PerturbParams {
            flip_rate: 0.05,
            bias,
            speckle_rate: 0.01,
            erosion_rate: 0.3,
            hole_rate: 0.1,
            interior_only: false,
        }
    }

    /// Holes and label flips confined to object interiors.
    pub fn interior_patchiness() -> Self {
        PerturbParams {
            flip_rate: 0.15,
            hole_rate: 0.2,
            interior_only: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.flip_rate, self.speckle_rate, self.erosion_rate, self.hole_rate];
        if rates
            .iter()
            .chain(self.bias.iter().map(|(_, _, p)| p))
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::Fixture("perturbation rates must lie in [0,1]".into()));
        }
        Ok(())
    }
}

fn on_border(map: &LabelMap, x: usize, y: usize) -> bool {
    let c = map.get(x, y);
    (x > 0 && map.get(x - 1, y) != c)
        || (x + 1 < map.width() && map.get(x + 1, y) != c)
        || (y > 0 && map.get(x, y - 1) != c)
        || (y + 1 < map.height() && map.get(x, y + 1) != c)
}

/// Applies the perturbation pixel by pixel in row-major order. Each glass
/// pixel goes through erosion (border only), bias, flip and hole in that
/// order, stopping at the first that fires; each background pixel may
/// receive speckle. Every stage consumes one random draw when reached.
pub fn perturb_labels(
    map: &LabelMap,
    t: &Taxonomy,
    params: &PerturbParams,
    seed: u64,
) -> Result<LabelMap> {
    params.validate()?;
    map.validate(t)?;
    let mut rng = SplitMix64::new(seed);
    let bg = t.background();
    let glass: Vec<ClassId> = t.glass_classes().collect();
    let bias: BTreeMap<ClassId, (ClassId, f64)> =
        params.bias.iter().map(|&(a, b, p)| (a, (b, p))).collect();
    let mut out = map.clone();

    let other_glass = |rng: &mut SplitMix64, c: ClassId| -> Option<ClassId> {
        let choices: Vec<ClassId> = glass.iter().copied().filter(|&g| g != c).collect();
        if choices.is_empty() {
            None
        } else {
            Some(choices[rng.below(choices.len() as u64) as usize])
        }
    };

    for y in 0..map.height() {
        for x in 0..map.width() {
            let c = map.get(x, y);
            if c == bg {
                if !params.interior_only && rng.chance(params.speckle_rate) {
                    if let Some(g) = other_glass(&mut rng, bg) {
                        out.set(x, y, g);
                    }
                }
                continue;
            }
            let border = on_border(map, x, y);
            if border {
                if params.interior_only {
                    continue;
                }
                if rng.chance(params.erosion_rate) {
                    out.set(x, y, bg);
                    continue;
                }
            }
            if let Some(&(to, p)) = bias.get(&c) {
                if rng.chance(p) {
                    out.set(x, y, to);
                    continue;
                }
            }
            if rng.chance(params.flip_rate) {
                if let Some(g) = other_glass(&mut rng, c) {
                    out.set(x, y, g);
                }
                continue;
            }
            if rng.chance(params.hole_rate) {
                out.set(x, y, bg);
            }
        }
    }
    Ok(out)
}

fn morph(mask: &BitMask, dilate: bool) -> BitMask {
    let (w, h) = mask.dims();
    BitMask::from_fn(w, h, |x, y| {
        let n = [
            x.checked_sub(1).map(|x| mask.get(x, y)),
            (x + 1 < w).then(|| mask.get(x + 1, y)),
            y.checked_sub(1).map(|y| mask.get(x, y)),
            (y + 1 < h).then(|| mask.get(x, y + 1)),
        ];
        if dilate {
            mask.get(x, y) || n.contains(&Some(true))
        } else {
            mask.get(x, y) && n.iter().all(|v| *v == Some(true))
        }
    })
}

/// One masklet per instance, grown or shrunk by up to `jitter` pixels
/// (4-neighborhood), followed by `spurious` masklets lying entirely on
/// background. Instance masklets score in `[0.5, 1)`, spurious ones in
/// `[0, 0.5)`. Ids are 1, 2, ... in that order.
pub fn gen_masklets(gt: &GroundTruth, jitter: usize, spurious: usize, seed: u64) -> Vec<Masklet> {
    let mut rng = SplitMix64::new(seed);
    let (w, h) = gt.dims();
    let mut out = Vec::new();
    let mut next_id = 1u32;
    for &inst in gt.instances().keys() {
        let base = gt.instance_mask(inst);
        let mut mask = base.clone();
        if jitter > 0 {
            let step = rng.below(2 * jitter as u64 + 1) as i64 - jitter as i64;
            for _ in 0..step.unsigned_abs() {
                mask = morph(&mask, step > 0);
            }
            if mask.area() == 0 {
                mask = base.clone();
            }
        }
        let score = 0.5 + 0.5 * rng.next_f64();
        if mask.area() > 0 {
            out.push(Masklet::new(next_id, score, mask).expect("valid masklet"));
            next_id += 1;
        }
    }

    let free = BitMask::from_fn(w, h, |x, y| gt.instance_at(x, y) == 0);
    let free_area = free.area();
    if free_area == 0 {
        return out;
    }
    for _ in 0..spurious {
        let mut mask = None;
        for _ in 0..SPURIOUS_ATTEMPTS {
            let rw = rng.range(2, (w / 4).max(2));
            let rh = rng.range(2, (h / 4).max(2));
            let (x0, y0) = (rng.range(0, w - rw), rng.range(0, h - rh));
            let m = BitMask::from_fn(w, h, |x, y| {
                x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh && free.get(x, y)
            });
            if m.area() > 0 {
                mask = Some(m);
                break;
            }
        }
        let mask = mask.unwrap_or_else(|| {
            let pick = free.iter_ones().nth(rng.below(free_area as u64) as usize).unwrap();
            let mut m = BitMask::new(w, h);
            m.set_index(pick, true);
            m
        });
        let score = 0.5 * rng.next_f64();
        out.push(Masklet::new(next_id, score, mask).expect("valid masklet"));
        next_id += 1;
    }
    out
}

/// Everything generated for one scene of a fixture set.
#[derive(Debug, Clone)]
pub struct FixtureScene {
    pub id: String,
    pub scene: Scene,
    pub prediction: LabelMap,
    pub masklets: Vec<Masklet>,
}

/// Options for [`gen_fixture_set`].
#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub width: usize,
    pub height: usize,
    pub perturb: PerturbParams,
    pub jitter: usize,
    pub spurious: usize,
}

impl FixtureOptions {
    pub fn typical(t: &Taxonomy, width: usize, height: usize) -> Self {
        FixtureOptions {
            width,
            height,
            perturb: PerturbParams::typical(t),
            jitter: 1,
            spurious: 2,
        }
    }
}

/// `count` scenes. Scene `i` uses sub-seeds derived from `(seed, i)`, so a
/// scene does not depend on how many others are generated.
pub fn gen_fixture_set(
    seed: u64,
    count: usize,
    t: &Taxonomy,
    opts: &FixtureOptions,
) -> Result<Vec<FixtureScene>> {
    let params = SceneParams::from_taxonomy(t, opts.width, opts.height)?;
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let scene = gen_scene(derive_seed(s, 0), &params, t)?;
            let prediction = perturb_labels(&scene.labels, t, &opts.perturb, derive_seed(s, 1))?;
            let masklets =
                gen_masklets(&scene.groundtruth, opts.jitter, opts.spurious, derive_seed(s, 2));
            Ok(FixtureScene {
                id: format!("scene_{i:04}"),
                scene,
                prediction,
                masklets,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse, FusionConfig};

    fn params(t: &Taxonomy) -> SceneParams {
        SceneParams::from_taxonomy(t, 64, 64).unwrap()
    }

    #[test]
    fn same_seed_same_scene() {
        let t = Taxonomy::default_config();
        let a = gen_scene(42, &params(&t), &t).unwrap();
        let b = gen_scene(42, &params(&t), &t).unwrap();
        assert_eq!(a, b);
        let c = gen_scene(43, &params(&t), &t).unwrap();
        assert_ne!(a.groundtruth, c.groundtruth);
    }

    #[test]
    fn three_or_four_instances() {
        let t = Taxonomy::default_config();
        for seed in 0..50 {
            let s = gen_scene(seed, &params(&t), &t).unwrap();
            let n = s.groundtruth.instances().len();
            assert!(n == 3 || n == 4, "seed {seed}: {n} instances");
            let glass = s.labels.as_slice().iter().filter(|&&c| c != t.background()).count();
            let areas: usize = s.groundtruth.instances().keys().map(|&i| s.groundtruth.instance_area(i)).sum();
            assert_eq!(glass, areas);
            for &i in s.groundtruth.instances().keys() {
                assert!(s.groundtruth.instance_area(i) > 0);
            }
        }
    }

    #[test]
    fn small_scenes_still_fit() {
        let t = Taxonomy::default_config();
        for (w, h) in [(16, 16), (18, 16), (16, 24), (24, 17)] {
            let p = SceneParams::from_taxonomy(&t, w, h).unwrap();
            for seed in 0..1000 {
                let s = gen_scene(seed, &p, &t).unwrap();
                assert!(s.groundtruth.instances().len() >= 3);
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let t = Taxonomy::default_config();
        assert!(SceneParams::from_taxonomy(&t, 8, 64).is_err());
        let mut p = params(&t);
        p.pool.clear();
        assert!(gen_scene(0, &p, &t).is_err());
        let mut p = params(&t);
        p.min_objects = 300;
        p.max_objects = 300;
        assert!(matches!(gen_scene(0, &p, &t), Err(Error::Fixture(_))));
    }

    #[test]
    fn zero_rates_are_identity() {
        let t = Taxonomy::default_config();
        let s = gen_scene(5, &params(&t), &t).unwrap();
        let out = perturb_labels(&s.labels, &t, &PerturbParams::default(), 9).unwrap();
        assert_eq!(out, s.labels);
    }

    #[test]
    fn full_bias_relabels_every_pixel() {
        let t = Taxonomy::default_config();
        let red = t.class_by_name("red_wine_glass").unwrap();
        let white = t.class_by_name("white_wine_glass").unwrap();
        let mut map = LabelMap::new(16, 16, t.background());
        for y in 2..10 {
            for x in 3..12 {
                map.set(x, y, red);
            }
        }
        let p = PerturbParams {
            bias: vec![(red, white, 1.0)],
            ..Default::default()
        };
        let out = perturb_labels(&map, &t, &p, 1).unwrap();
        for (a, b) in map.as_slice().iter().zip(out.as_slice()) {
            assert_eq!(*b, if *a == red { white } else { *a });
        }
    }

    #[test]
    fn flip_rate_is_respected() {
        let t = Taxonomy::default_config();
        let g = t.class_by_name("carafe").unwrap();
        let map = LabelMap::new(64, 64, g);
        let p = PerturbParams {
            flip_rate: 0.1,
            ..Default::default()
        };
        let out = perturb_labels(&map, &t, &p, 2024).unwrap();
        let flipped = out.as_slice().iter().filter(|&&c| c != g).count();
        let frac = flipped as f64 / map.len() as f64;
        assert!((0.05..=0.15).contains(&frac), "{frac}");
        assert!(out.as_slice().iter().all(|&c| c != t.background()));
    }

    #[test]
    fn interior_only_leaves_borders() {
        let t = Taxonomy::default_config();
        let s = gen_scene(11, &params(&t), &t).unwrap();
        let p = PerturbParams {
            flip_rate: 0.5,
            hole_rate: 0.5,
            speckle_rate: 1.0,
            erosion_rate: 1.0,
            interior_only: true,
            ..Default::default()
        };
        let out = perturb_labels(&s.labels, &t, &p, 3).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if s.labels.get(x, y) == t.background() || on_border(&s.labels, x, y) {
                    assert_eq!(out.get(x, y), s.labels.get(x, y));
                }
            }
        }
        assert_ne!(out, s.labels);
    }

    #[test]
    fn exact_masklets_without_jitter() {
        let t = Taxonomy::default_config();
        let s = gen_scene(8, &params(&t), &t).unwrap();
        let ms = gen_masklets(&s.groundtruth, 0, 0, 1);
        assert_eq!(ms.len(), s.groundtruth.instances().len());
        for (m, &id) in ms.iter().zip(s.groundtruth.instances().keys()) {
            assert_eq!(m.mask, s.groundtruth.instance_mask(id));
        }
    }

    #[test]
    fn spurious_masklets_avoid_instances() {
        let t = Taxonomy::default_config();
        let s = gen_scene(8, &params(&t), &t).unwrap();
        let n = s.groundtruth.instances().len();
        let ms = gen_masklets(&s.groundtruth, 0, 2, 1);
        assert_eq!(ms.len(), n + 2);
        for m in &ms[n..] {
            assert!(m.mask.iter_ones().all(|i| s.groundtruth.instance_map()[i] == 0));
        }
    }

    #[test]
    fn jitter_stays_within_bounds() {
        let t = Taxonomy::default_config();
        let s = gen_scene(9, &params(&t), &t).unwrap();
        let ms = gen_masklets(&s.groundtruth, 2, 0, 4);
        for (m, &id) in ms.iter().zip(s.groundtruth.instances().keys()) {
            let base = s.groundtruth.instance_mask(id);
            let mut grown = base.clone();
            for _ in 0..2 {
                grown = morph(&grown, true);
            }
            let mut shrunk = base.clone();
            for _ in 0..2 {
                shrunk = morph(&shrunk, false);
            }
            assert!(m.mask.iter_ones().all(|i| grown.get_index(i)));
            if shrunk.area() > 0 {
                assert!(shrunk.iter_ones().all(|i| m.mask.get_index(i)));
            }
        }
    }

    #[test]
    fn clean_map_is_a_fusion_fixed_point() {
        let t = Taxonomy::default_config();
        for seed in 0..20 {
            let s = gen_scene(seed, &params(&t), &t).unwrap();
            let ms = gen_masklets(&s.groundtruth, 0, 2, seed);
            let (out, _) = fuse(&s.labels, &ms, &t, &FusionConfig::default()).unwrap();
            assert_eq!(out, s.labels);
        }
    }

    #[test]
    fn fixture_sets_are_prefix_stable() {
        let t = Taxonomy::default_config();
        let opts = FixtureOptions::typical(&t, 32, 32);
        let a = gen_fixture_set(3, 2, &t, &opts).unwrap();
        let b = gen_fixture_set(3, 4, &t, &opts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scene, y.scene);
            assert_eq!(x.prediction, y.prediction);
            assert_eq!(x.masklets, y.masklets);
        }
    }
}
