//! Rasters: label maps, binary masks, masklets and instance ground truth,
//! plus their on-disk codecs.

mod annotations;
mod pgm;
mod rle;

use std::collections::BTreeMap;

pub use annotations::{
    groundtruth_to_json, masklets_to_json, parse_groundtruth, parse_masklets, read_groundtruth,
    read_groundtruth_with, read_masklets, write_groundtruth, write_masklets, MaskletFile,
    UnknownModel,
};
pub use pgm::{decode_pgm, encode_pgm, read_labelmap, write_labelmap};
pub use rle::{decode_rle, encode_rle, RleCounts};

use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, Taxonomy};

/// Per-pixel class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<ClassId>,
}

impl LabelMap {
    /// # Panics
    /// If either dimension is zero.
    pub fn new(width: usize, height: usize, fill: ClassId) -> Self {
        assert!(width >= 1 && height >= 1, "label map dimensions must be positive");
        LabelMap {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<ClassId>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("empty label map {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "label map data has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    pub fn from_raw(width: usize, height: usize, raw: &[u8]) -> Result<Self> {
        Self::from_data(width, height, raw.iter().map(|&v| ClassId(v)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: ClassId) {
        self.data[y * self.width + x] = c;
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [ClassId] {
        &mut self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|c| c.0).collect()
    }

    /// Errors on the first value that is not a class of `t`.
    pub fn validate(&self, t: &Taxonomy) -> Result<()> {
        match self.data.iter().find(|c| !t.contains(**c)) {
            Some(c) => Err(Error::ClassOutOfRange {
                id: c.index(),
                classes: t.len(),
            }),
            None => Ok(()),
        }
    }

    /// Pixel count per class id (length = `classes`).
    pub fn histogram(&self, classes: usize) -> Vec<u64> {
        let mut h = vec![0u64; classes.max(1)];
        for c in &self.data {
            h[c.index()] += 1;
        }
        h
    }
}

/// One bit per pixel, row-major, packed into 64-bit words. Bits past the
/// last pixel are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        BitMask {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        }
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width * height, "bit count must equal width*height");
        let mut m = Self::new(width, height);
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            m.set_index(i, true);
        }
        m
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set_index(y * width + x, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.words[i >> 6] & (1 << (i & 63)) != 0
    }

    #[inline]
    pub fn set_index(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len());
        if v {
            self.words[i >> 6] |= 1 << (i & 63);
        } else {
            self.words[i >> 6] &= !(1 << (i & 63));
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.get_index(y * self.width + x)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.set_index(y * self.width + x, v)
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Row-major indices of set pixels, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some((wi << 6) | bit)
            })
        })
    }

    pub fn intersects(&self, other: &BitMask) -> bool {
        self.words
            .iter()
            .zip(other.words.iter())
            .any(|(a, b)| a & b != 0)
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get_index(i)).collect()
    }
}

/// A class-agnostic region with its predicted quality.
#[derive(Debug, Clone, PartialEq)]
pub struct Masklet {
    pub id: u32,
    pub score: f64,
    pub mask: BitMask,
}

impl Masklet {
    pub fn new(id: u32, score: f64, mask: BitMask) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Masklet(format!(
                "masklet {id}: score {score} outside [0,1]"
            )));
        }
        if mask.area() == 0 {
            return Err(Error::Masklet(format!("masklet {id}: zero-area mask")));
        }
        Ok(Masklet { id, score, mask })
    }

    pub fn area(&self) -> usize {
        self.mask.area()
    }
}

/// Class and 3D model of one annotated object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub class: ClassId,
    pub model: String,
}

/// Instance-labeled ground truth. Instance id 0 is background; every other
/// id in the map has an [`Instance`] entry with a glass class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    width: usize,
    height: usize,
    instance_map: Vec<u32>,
    instances: BTreeMap<u32, Instance>,
}

impl GroundTruth {
    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "ground truth dimensions must be positive");
        GroundTruth {
            width,
            height,
            instance_map: vec![0; width * height],
            instances: BTreeMap::new(),
        }
    }

    /// Composes per-instance masks into one instance map. Overlap between
    /// two instances is an error naming the first shared pixel.
    pub fn from_instances(
        width: usize,
        height: usize,
        parts: impl IntoIterator<Item = (u32, Instance, BitMask)>,
        t: &Taxonomy,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::GroundTruth(format!("empty image {width}x{height}")));
        }
        let mut gt = GroundTruth::empty(width, height);
        for (id, inst, mask) in parts {
            if id == 0 {
                return Err(Error::GroundTruth("instance id 0 is reserved for background".into()));
            }
            if gt.instances.contains_key(&id) {
                return Err(Error::GroundTruth(format!("duplicate instance id {id}")));
            }
            if !t.is_glass(inst.class) {
                return Err(Error::GroundTruth(format!(
                    "instance {id} has non-glass class {}",
                    inst.class
                )));
            }
            crate::error::check_dims((width, height), mask.dims())?;
            for i in mask.iter_ones() {
                if gt.instance_map[i] != 0 {
                    return Err(Error::InstanceOverlap {
                        x: i % width,
                        y: i / width,
                    });
                }
                gt.instance_map[i] = id;
            }
            gt.instances.insert(id, inst);
        }
        Ok(gt)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn instance_map(&self) -> &[u32] {
        &self.instance_map
    }

    pub fn instances(&self) -> &BTreeMap<u32, Instance> {
        &self.instances
    }

    pub fn instance(&self, id: u32) -> Option<&Instance> {
        self.instances.get(&id)
    }

    pub fn instance_at(&self, x: usize, y: usize) -> u32 {
        self.instance_map[y * self.width + x]
    }

    pub fn instance_mask(&self, id: u32) -> BitMask {
        let mut m = BitMask::new(self.width, self.height);
        for (i, _) in self.instance_map.iter().enumerate().filter(|(_, v)| **v == id) {
            m.set_index(i, true);
        }
        m
    }

    pub fn instance_area(&self, id: u32) -> usize {
        self.instance_map.iter().filter(|v| **v == id).count()
    }

    /// Class of each pixel: background outside instances, otherwise the
    /// instance's class.
    pub fn project_labels(&self, t: &Taxonomy) -> LabelMap {
        let bg = t.background();
        let data = self
            .instance_map
            .iter()
            .map(|&id| if id == 0 { bg } else { self.instances[&id].class })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            data,
        }
    }
}
