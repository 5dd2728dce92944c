//! Uncompressed COCO-style run-length encoding.
//!
//! Runs alternate zeros and ones, starting with zeros, over pixels taken in
//! column-major order (column 0 top to bottom, then column 1, ...).

use crate::error::{Error, Result};

use super::BitMask;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RleCounts(pub Vec<u64>);

impl RleCounts {
    /// Accepts counts as parsed from JSON, rejecting negative runs.
    pub fn from_signed(counts: &[i64]) -> Result<Self> {
        counts
            .iter()
            .map(|&c| {
                u64::try_from(c).map_err(|_| Error::Rle(format!("negative run length {c}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(RleCounts)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().fold(0u64, |acc, &c| acc.saturating_add(c))
    }

    /// No zero-length runs except possibly the first.
    pub fn is_canonical(&self) -> bool {
        self.0.iter().skip(1).all(|&c| c > 0)
    }
}

pub fn decode_rle(counts: &RleCounts, width: usize, height: usize) -> Result<BitMask> {
    let total = counts.total();
    if total != (width * height) as u64 {
        return Err(Error::Rle(format!(
            "run lengths sum to {total}, expected {} for {width}x{height}",
            width * height
        )));
    }
    let mut mask = BitMask::new(width, height);
    let mut k = 0usize;
    for (run, &len) in counts.0.iter().enumerate() {
        let len = len as usize;
        if run % 2 == 1 {
            for p in k..k + len {
                let (x, y) = (p / height, p % height);
                mask.set_index(y * width + x, true);
            }
        }
        k += len;
    }
    Ok(mask)
}

pub fn encode_rle(mask: &BitMask) -> RleCounts {
    let (w, h) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get_index(y * w + x);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleCounts(counts)
}
