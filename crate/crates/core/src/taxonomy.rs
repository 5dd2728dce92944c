//! Class universe and 3D-model registry.
//!
//! A taxonomy is loaded from a JSON document of the form
//!
//! ```json
//! {"classes": [{"name": "background", "kind": "background"},
//!              {"name": "goblet", "kind": "glass"}],
//!  "models": {"SVALKA-goblet": "goblet"},
//!  "unseen": ["goblet"]}
//! ```
//!
//! Class ids are assigned by declaration order starting at 0. Names are
//! matched case-sensitively. At most 256 classes are allowed so that a class
//! id always fits in one byte of a label map.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of classes a taxonomy may declare.
pub const MAX_CLASSES: usize = 256;

/// Position of a class in its taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(transparent)]
pub struct ClassId(pub u8);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Background,
    Glass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub kind: ClassKind,
}

/// A fixed-size set of class ids, one bit per possible class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClassSet([u64; 4]);

impl ClassSet {
    pub const fn empty() -> Self {
        ClassSet([0; 4])
    }

    pub fn single(c: ClassId) -> Self {
        let mut s = Self::empty();
        s.insert(c);
        s
    }

    #[inline]
    pub fn insert(&mut self, c: ClassId) {
        self.0[(c.0 >> 6) as usize] |= 1 << (c.0 & 63);
    }

    #[inline]
    pub fn contains(&self, c: ClassId) -> bool {
        self.0[(c.0 >> 6) as usize] & (1 << (c.0 & 63)) != 0
    }

    pub fn union(&self, other: &ClassSet) -> ClassSet {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0.iter()) {
            *a |= *b;
        }
        out
    }

    pub fn is_superset(&self, other: &ClassSet) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| b & !a == 0)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    /// Members in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..MAX_CLASSES)
            .filter(move |&i| self.0[i >> 6] & (1 << (i & 63)) != 0)
            .map(|i| ClassId(i as u8))
    }
}

impl FromIterator<ClassId> for ClassSet {
    fn from_iter<I: IntoIterator<Item = ClassId>>(iter: I) -> Self {
        let mut s = ClassSet::empty();
        for c in iter {
            s.insert(c);
        }
        s
    }
}

/// Validated class registry. Immutable after load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    classes: Vec<ClassInfo>,
    background: ClassId,
    models: BTreeMap<String, ClassId>,
    unseen: BTreeSet<ClassId>,
    by_name: HashMap<String, ClassId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDoc {
    classes: Vec<ClassDoc>,
    #[serde(default)]
    models: BTreeMap<String, String>,
    #[serde(default)]
    unseen: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassDoc {
    name: String,
    kind: ClassKind,
}

const DEFAULT_CONFIG: &str = include_str!("../data/default_taxonomy.json");

/// Parses and validates a taxonomy document.
pub fn load_taxonomy(config_text: &str) -> Result<Taxonomy> {
    let doc: TaxonomyDoc =
        serde_json::from_str(config_text).map_err(|e| Error::json("taxonomy", e))?;
    Taxonomy::from_doc(doc)
}

impl Taxonomy {
    /// The bundled configuration: background plus the eleven named glass
    /// categories, with a small model registry.
    pub fn default_config() -> Taxonomy {
        load_taxonomy(DEFAULT_CONFIG).expect("bundled taxonomy is valid")
    }

    pub fn default_config_text() -> &'static str {
        DEFAULT_CONFIG
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Taxonomy> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        load_taxonomy(&text)
    }

    fn from_doc(doc: TaxonomyDoc) -> Result<Taxonomy> {
        if doc.classes.len() > MAX_CLASSES {
            return Err(Error::Taxonomy(format!(
                "{} classes declared, at most {MAX_CLASSES} allowed",
                doc.classes.len()
            )));
        }
        let mut by_name = HashMap::with_capacity(doc.classes.len());
        let mut background = None;
        let mut classes = Vec::with_capacity(doc.classes.len());
        for (i, c) in doc.classes.into_iter().enumerate() {
            let id = ClassId(i as u8);
            if c.name.is_empty() {
                return Err(Error::Taxonomy(format!("class {i} has an empty name")));
            }
            if by_name.insert(c.name.clone(), id).is_some() {
                return Err(Error::Taxonomy(format!("duplicate class name {:?}", c.name)));
            }
            if c.kind == ClassKind::Background {
                if background.is_some() {
                    return Err(Error::Taxonomy("multiple background classes".into()));
                }
                background = Some(id);
            }
            classes.push(ClassInfo {
                name: c.name,
                kind: c.kind,
            });
        }
        let background =
            background.ok_or_else(|| Error::Taxonomy("no background class".into()))?;

        let mut models = BTreeMap::new();
        for (model, class) in doc.models {
            let id = *by_name.get(&class).ok_or_else(|| {
                Error::Taxonomy(format!("model {model:?} references unknown class {class:?}"))
            })?;
            if id == background {
                return Err(Error::Taxonomy(format!(
                    "model {model:?} references the background class"
                )));
            }
            models.insert(model, id);
        }

        let mut unseen = BTreeSet::new();
        for class in doc.unseen {
            let id = *by_name
                .get(&class)
                .ok_or_else(|| Error::Taxonomy(format!("unseen class {class:?} is unknown")))?;
            if id == background {
                return Err(Error::Taxonomy("unseen references the background class".into()));
            }
            unseen.insert(id);
        }

        Ok(Taxonomy {
            classes,
            background,
            models,
            unseen,
            by_name,
        })
    }

    /// Serializes back into the configuration format. Reloading the output
    /// yields an equal taxonomy.
    pub fn to_json(&self) -> String {
        let doc = TaxonomyDoc {
            classes: self
                .classes
                .iter()
                .map(|c| ClassDoc {
                    name: c.name.clone(),
                    kind: c.kind,
                })
                .collect(),
            models: self
                .models
                .iter()
                .map(|(m, c)| (m.clone(), self.name(*c).to_owned()))
                .collect(),
            unseen: self.unseen.iter().map(|c| self.name(*c).to_owned()).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("taxonomy serializes")
    }

    /// Exact, case-sensitive name lookup.
    pub fn class_by_name(&self, name: &str) -> Result<ClassId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_owned()))
    }

    /// Number of classes, K.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.classes.len()).map(|i| ClassId(i as u8))
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.classes[id.index()].name
    }

    pub fn background(&self) -> ClassId {
        self.background
    }

    pub fn contains(&self, id: ClassId) -> bool {
        id.index() < self.classes.len()
    }

    pub fn is_glass(&self, id: ClassId) -> bool {
        self.contains(id) && id != self.background
    }

    pub fn glass_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.ids().filter(move |&c| c != self.background)
    }

    pub fn models(&self) -> &BTreeMap<String, ClassId> {
        &self.models
    }

    pub fn model_class(&self, model: &str) -> Option<ClassId> {
        self.models.get(model).copied()
    }

    /// Registered models of one class, in lexicographic order.
    pub fn models_of(&self, class: ClassId) -> impl Iterator<Item = &str> {
        self.models
            .iter()
            .filter(move |(_, c)| **c == class)
            .map(|(m, _)| m.as_str())
    }

    pub fn unseen(&self) -> &BTreeSet<ClassId> {
        &self.unseen
    }

    /// Checks a raw label value against K.
    pub fn check_id(&self, raw: usize) -> Result<ClassId> {
        if raw < self.classes.len() {
            Ok(ClassId(raw as u8))
        } else {
            Err(Error::ClassOutOfRange {
                id: raw,
                classes: self.classes.len(),
            })
        }
    }
}
