//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use glassseg::fixtures::{gen_masklets, gen_scene, perturb_labels, PerturbParams, SceneParams, SplitMix64};
use glassseg::{
    BitMask, ClassId, FusionConfig, GroundTruth, LabelMap, Masklet, RejectMode, Taxonomy,
};

/// Background, the eleven named categories and four placeholder glass
/// classes: sixteen in all.
pub fn taxonomy16() -> Taxonomy {
    let mut doc: serde_json::Value = serde_json::from_str(Taxonomy::default_config_text()).unwrap();
    for i in 12..16 {
        let name = format!("glass_{i}");
        doc["classes"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!({"name": name, "kind": "glass"}));
        doc["models"][format!("{name}-model")] = serde_json::Value::String(name.clone());
    }
    let t = glassseg::load_taxonomy(&doc.to_string()).unwrap();
    assert_eq!(t.len(), 16);
    t
}

/// Straight-line fusion: per-masklet counts by scanning every pixel, then
/// for every pixel the covering masklet with the largest (score, id) that
/// writes anything decides the label.
pub fn reference_fuse(s: &LabelMap, masklets: &[Masklet], t: &Taxonomy, cfg: &FusionConfig) -> LabelMap {
    let (w, h) = s.dims();
    let k = t.len();
    let bg = t.background().0 as usize;

    // None = write nothing; Some(label) = overwrite with label.
    let mut writes: Vec<(f64, u32, &BitMask, Option<u8>)> = Vec::new();
    for m in masklets {
        if m.score < cfg.quality_min {
            continue;
        }
        let mut counts = vec![0u64; k];
        let mut area = 0u64;
        for y in 0..h {
            for x in 0..w {
                if m.mask.get(x, y) {
                    counts[s.get(x, y).0 as usize] += 1;
                    area += 1;
                }
            }
        }
        let mut best: Option<usize> = None;
        for c in 0..k {
            if c == bg {
                continue;
            }
            match best {
                None => best = Some(c),
                Some(b) if counts[c] > counts[b] => best = Some(c),
                _ => {}
            }
        }
        let best = best.unwrap();
        let accepted = counts[best] as f64 / area as f64 > cfg.glass_fraction_min;
        let label = if accepted {
            Some(best as u8)
        } else if cfg.reject_mode == RejectMode::Background {
            Some(bg as u8)
        } else {
            None
        };
        writes.push((m.score, m.id, &m.mask, label));
    }

    let mut out = s.clone();
    for y in 0..h {
        for x in 0..w {
            let mut winner: Option<(f64, u32, u8)> = None;
            for &(score, id, mask, label) in &writes {
                let Some(label) = label else { continue };
                if !mask.get(x, y) {
                    continue;
                }
                let better = match winner {
                    None => true,
                    Some((ws, wid, _)) => score > ws || (score == ws && id > wid),
                };
                if better {
                    winner = Some((score, id, label));
                }
            }
            if let Some((_, _, label)) = winner {
                out.set(x, y, ClassId(label));
            }
        }
    }
    out
}

/// A random rectangle masklet anywhere in the frame.
pub fn random_rect_masklet(rng: &mut SplitMix64, id: u32, w: usize, h: usize) -> Masklet {
    let rw = rng.range(1, w);
    let rh = rng.range(1, h);
    let (x0, y0) = (rng.range(0, w - rw), rng.range(0, h - rh));
    let mask = BitMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh);
    // Quantized scores make equal-score ties common.
    let score = rng.below(11) as f64 / 10.0;
    Masklet::new(id, score, mask).unwrap()
}

pub struct FusionCase {
    pub groundtruth: GroundTruth,
    pub labels: LabelMap,
    pub masklets: Vec<Masklet>,
    pub config: FusionConfig,
}

/// Perturbed scene of at most 64x64 with at most 8 masklets: jittered
/// instance masklets, background-only masklets and free rectangles that
/// overlap anything.
pub fn fusion_case(seed: u64, t: &Taxonomy) -> FusionCase {
    let mut rng = SplitMix64::new(seed);
    let (w, h) = (rng.range(16, 64), rng.range(16, 64));
    let params = SceneParams::from_taxonomy(t, w, h).unwrap();
    let scene = gen_scene(rng.next_u64(), &params, t).unwrap();
    let perturb = PerturbParams {
        flip_rate: 0.2,
        speckle_rate: 0.05,
        erosion_rate: 0.3,
        hole_rate: 0.2,
        ..Default::default()
    };
    let labels = perturb_labels(&scene.labels, t, &perturb, rng.next_u64()).unwrap();
    let spurious = rng.range(0, 2);
    let mut masklets = gen_masklets(&scene.groundtruth, rng.range(0, 2), spurious, rng.next_u64());
    let extra = rng.range(0, 8 - masklets.len());
    for _ in 0..extra {
        let id = masklets.len() as u32 + 1;
        masklets.push(random_rect_masklet(&mut rng, id, w, h));
    }
    let config = FusionConfig {
        glass_fraction_min: [0.10, 0.0, 0.25, 0.5][rng.below(4) as usize],
        quality_min: [0.0, 0.0, 0.3][rng.below(3) as usize],
        reject_mode: if rng.chance(0.5) { RejectMode::Background } else { RejectMode::Keep },
    };
    FusionCase {
        groundtruth: scene.groundtruth,
        labels,
        masklets,
        config,
    }
}

/// Drops every masklet that overlaps one kept before it.
pub fn disjoint(masklets: Vec<Masklet>) -> Vec<Masklet> {
    let mut kept: Vec<Masklet> = Vec::new();
    for m in masklets {
        if kept.iter().all(|k| !k.mask.intersects(&m.mask)) {
            kept.push(m);
        }
    }
    kept
}
