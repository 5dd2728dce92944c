//! Post-processing and evaluation for semantic segmentation of transparent
//! drinking glasses.
//!
//! * [`fusion`] overwrites a label map region by region with the majority
//!   glass label of each class-agnostic masklet.
//! * [`merge`] turns a confusion matrix into a class-merging policy.
//! * [`metrics`] computes per-class IoU and accuracy under such a policy.
//!
//! [`taxonomy`] and [`raster`] provide the class registry and file formats,
//! [`fixtures`] generates deterministic synthetic scenes, and [`cli`] wires
//! everything into the `glassseg` executable.
//!
//! ```
//! use glassseg::{fuse, FusionConfig, LabelMap, Masklet, BitMask, Taxonomy};
//!
//! let t = Taxonomy::default_config();
//! let bg = t.background();
//! let flute = t.class_by_name("champagne_flute")?;
//!
//! // A 4x4 map with two glass pixels inside a 2x2 masklet.
//! let mut map = LabelMap::new(4, 4, bg);
//! map.set(1, 1, flute);
//! map.set(2, 2, flute);
//! let mask = BitMask::from_fn(4, 4, |x, y| (1..3).contains(&x) && (1..3).contains(&y));
//! let m = Masklet::new(1, 0.9, mask)?;
//!
//! let (fused, decisions) = fuse(&map, &[m], &t, &FusionConfig::default())?;
//! assert_eq!(decisions[0].assigned_class(), Some(flute));
//! assert_eq!(fused.get(2, 1), flute);
//! # Ok::<(), glassseg::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod manifest;
pub mod merge;
pub mod metrics;
pub mod raster;
pub mod taxonomy;

/// Version stamped into every JSON report this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

pub use error::{Error, Result};
pub use fusion::{classify_masklet, fuse, FusionConfig, MaskletDecision, RejectMode, Verdict};
pub use manifest::{Manifest, Record};
pub use merge::{
    build_merge_policy, derive_similar_pairs, row_normalize, ClassPair, ConfusionMatrix,
    Fractions, MergeDerivationConfig, MergePolicy, OverrideSpec, WaterGlassOverride,
};
pub use metrics::{
    allowed_labels, compute_metrics, merge_tallies, tally_image, ClassMetrics, MetricsReport,
    PixelTruth, Tally,
};
pub use raster::{decode_rle, encode_rle, BitMask, GroundTruth, Instance, LabelMap, Masklet, RleCounts};
pub use taxonomy::{load_taxonomy, ClassId, ClassKind, ClassSet, Taxonomy};

/// Compiles and runs the guide's code samples as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/taxonomy.md")]
    mod taxonomy {}
    #[doc = include_str!("../../../book/src/raster.md")]
    mod raster {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/merging.md")]
    mod merging {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/fixtures.md")]
    mod fixtures {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
