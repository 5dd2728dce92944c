mod common;

use proptest::prelude::*;

use glassseg::fixtures::SplitMix64;
use glassseg::{
    compute_metrics, decode_rle, derive_similar_pairs, encode_rle, fuse, tally_image, BitMask,
    ClassId, Fractions, FusionConfig, LabelMap, Masklet, MergeDerivationConfig, MergePolicy,
    RejectMode, RleCounts, Taxonomy,
};

use common::{fusion_case, random_rect_masklet, reference_fuse, taxonomy16};

fn mask_strategy() -> impl Strategy<Value = BitMask> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<bool>(), w * h).prop_map(move |bits| BitMask::from_bools(w, h, &bits))
    })
}

proptest! {
    #[test]
    fn rle_round_trip(mask in mask_strategy()) {
        let counts = encode_rle(&mask);
        prop_assert!(counts.is_canonical());
        prop_assert_eq!(counts.total() as usize, mask.len());
        prop_assert_eq!(decode_rle(&counts, mask.width(), mask.height()).unwrap(), mask);
    }

    #[test]
    fn canonical_counts_round_trip(runs in prop::collection::vec(1u64..6, 0..12), lead in 0u64..4, h in 1usize..5) {
        let mut counts = vec![lead];
        counts.extend(runs);
        let total: u64 = counts.iter().sum();
        // Pad to a whole number of columns with a trailing run of the right kind.
        let rem = (h as u64 - total % h as u64) % h as u64;
        if rem > 0 {
            if counts.len() % 2 == 1 {
                counts.push(rem);
            } else {
                *counts.last_mut().unwrap() += rem;
            }
        }
        let total: u64 = counts.iter().sum();
        prop_assume!(total > 0);
        let w = (total / h as u64) as usize;
        let counts = RleCounts(counts);
        let mask = decode_rle(&counts, w, h).unwrap();
        prop_assert_eq!(encode_rle(&mask), counts);
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let data = (0..w * h).map(|_| ClassId(rng.below(256) as u8)).collect();
        let map = LabelMap::from_data(w, h, data).unwrap();
        let bytes = glassseg::raster::encode_pgm(&map);
        prop_assert_eq!(glassseg::raster::decode_pgm(&bytes).unwrap(), map);
    }

    #[test]
    fn fuse_matches_reference(seed in any::<u64>()) {
        let t = taxonomy16();
        let case = fusion_case(seed, &t);
        let (fast, decisions) = fuse(&case.labels, &case.masklets, &t, &case.config).unwrap();
        prop_assert_eq!(&fast, &reference_fuse(&case.labels, &case.masklets, &t, &case.config));
        let kept = case.masklets.iter().filter(|m| m.score >= case.config.quality_min).count();
        prop_assert_eq!(decisions.len(), kept);
    }

    #[test]
    fn pixels_outside_masklets_are_untouched(seed in any::<u64>(), keep in any::<bool>()) {
        let t = taxonomy16();
        let mut case = fusion_case(seed, &t);
        case.config.reject_mode = if keep { RejectMode::Keep } else { RejectMode::Background };
        let (out, _) = fuse(&case.labels, &case.masklets, &t, &case.config).unwrap();
        for i in 0..out.len() {
            if !case.masklets.iter().any(|m| m.mask.get_index(i)) {
                prop_assert_eq!(out.as_slice()[i], case.labels.as_slice()[i]);
            }
        }
    }

    #[test]
    fn masklet_order_does_not_matter(seed in any::<u64>()) {
        let t = taxonomy16();
        let case = fusion_case(seed, &t);
        let mut reversed = case.masklets.clone();
        reversed.reverse();
        let (a, _) = fuse(&case.labels, &case.masklets, &t, &case.config).unwrap();
        let (b, _) = fuse(&case.labels, &reversed, &t, &case.config).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fewer_pairs_at_higher_thresholds(seed in any::<u64>(), lo in 0.0f64..0.5, step in 0.0f64..0.5) {
        let t = Taxonomy::default_config();
        let k = t.len();
        let mut rng = SplitMix64::new(seed);
        let rows = (0..k)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.next_f64().powi(3)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let f = Fractions::from_rows(rows).unwrap();
        let at = |th: f64| {
            let cfg = MergeDerivationConfig { similarity_min: th, ..Default::default() };
            derive_similar_pairs(&f, &cfg, &t).unwrap()
        };
        let (low, high) = (at(lo), at(lo + step));
        prop_assert!(high.is_subset(&low));
    }

    #[test]
    fn tallies_cover_every_pixel(seed in any::<u64>()) {
        let t = taxonomy16();
        let case = fusion_case(seed, &t);
        let policy = MergePolicy::identity(&t);
        let tally = tally_image(&case.groundtruth, &case.labels, &policy, &t).unwrap();
        let n = case.labels.len() as u64;
        prop_assert_eq!(tally.tp.iter().sum::<u64>() + tally.fn_.iter().sum::<u64>(), n);
        prop_assert_eq!(tally.tp.iter().sum::<u64>() + tally.fp.iter().sum::<u64>(), n);
        let r = compute_metrics(&tally, &t);
        for m in &r.per_class {
            if let Some(v) = m.iou {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn equal_scores_break_ties_by_id() {
    let t = taxonomy16();
    let mut rng = SplitMix64::new(4);
    let s = LabelMap::new(20, 20, t.class_by_name("carafe").unwrap());
    let mut ms: Vec<Masklet> = (1..=6).map(|id| random_rect_masklet(&mut rng, id, 20, 20)).collect();
    for m in &mut ms {
        m.score = 0.5;
    }
    let cfg = FusionConfig::default();
    let (a, _) = fuse(&s, &ms, &t, &cfg).unwrap();
    assert_eq!(a, reference_fuse(&s, &ms, &t, &cfg));
}
