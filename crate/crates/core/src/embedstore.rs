//! Embedding sets and the EMBD on-disk directory format.
//!
//! An EMBD directory holds a `manifest.json` and a headerless blob of
//! little-endian `f32` values laid out class by class, clip by clip, in
//! manifest order. Vectors are kept as `f32` in memory so a load/save round
//! trip is bit-exact; all arithmetic widens to `f64` at the point of use.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";
pub const DTYPE: &str = "f32le";

pub type ClassId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Text => f.write_str("text"),
            Modality::Audio => f.write_str("audio"),
        }
    }
}

/// A single problem found while checking a set. Display strings carry enough
/// context (class name, clip index, byte counts) to locate the fault.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Manifest(String),
    UnsupportedVersion(u32),
    UnsupportedDtype(String),
    ZeroDim,
    EmptyRegistry,
    IdOutOfOrder {
        position: usize,
        id: usize,
    },
    EmptyName {
        position: usize,
    },
    DuplicateName(String),
    VectorCount {
        class: String,
        n_vectors: usize,
        modality: Modality,
    },
    BlobSize {
        expected: u64,
        actual: u64,
        dim: usize,
        total_vectors: usize,
    },
    NonFinite {
        class: String,
        clip: usize,
        coord: usize,
        value: f32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Manifest(msg) => write!(f, "manifest: {msg}"),
            Violation::UnsupportedVersion(v) => {
                write!(f, "unsupported format_version {v} (expected {FORMAT_VERSION})")
            }
            Violation::UnsupportedDtype(d) => write!(f, "unsupported dtype {d:?} (expected {DTYPE:?})"),
            Violation::ZeroDim => f.write_str("dim must be > 0"),
            Violation::EmptyRegistry => f.write_str("class list is empty"),
            Violation::IdOutOfOrder { position, id } => {
                write!(f, "class at position {position} has id {id}; ids must equal list position")
            }
            Violation::EmptyName { position } => write!(f, "class at position {position} has an empty name"),
            Violation::DuplicateName(name) => write!(f, "duplicate class name {name:?}"),
            Violation::VectorCount { class, n_vectors, modality } => write!(
                f,
                "class {class:?} has {n_vectors} vectors; {modality} sets need {}",
                match modality {
                    Modality::Text => "exactly 1",
                    Modality::Audio => "at least 1",
                }
            ),
            Violation::BlobSize { expected, actual, dim, total_vectors } => write!(
                f,
                "blob is {actual} bytes, expected {expected} = 4 x dim {dim} x {total_vectors} vectors"
            ),
            Violation::NonFinite { class, clip, coord, value } => {
                write!(f, "non-finite value {value} in class {class:?} clip {clip} coordinate {coord}")
            }
        }
    }
}

/// Ordered class names; a class id is its position in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRegistry {
    names: Vec<String>,
}

impl ClassRegistry {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut violations = Vec::new();
        check_names(&names, &mut violations);
        if violations.is_empty() {
            Ok(Self { names })
        } else {
            Err(Error::Invariant(violations))
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn check_id(&self, id: ClassId) -> Result<()> {
        if id < self.names.len() {
            Ok(())
        } else {
            Err(Error::UnknownClass {
                id,
                n_classes: self.names.len(),
            })
        }
    }

    /// Builds a name → id lookup.
    pub fn index(&self) -> HashMap<&str, ClassId> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect()
    }
}

impl Serialize for ClassRegistry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry<'a> {
            id: usize,
            name: &'a str,
        }
        s.collect_seq(
            self.names
                .iter()
                .enumerate()
                .map(|(id, name)| Entry { id, name }),
        )
    }
}

impl<'de> Deserialize<'de> for ClassRegistry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Entry {
            id: usize,
            name: String,
        }
        let entries = Vec::<Entry>::deserialize(d)?;
        for (pos, e) in entries.iter().enumerate() {
            if e.id != pos {
                return Err(serde::de::Error::custom(format!(
                    "class at position {pos} has id {}",
                    e.id
                )));
            }
        }
        ClassRegistry::new(entries.into_iter().map(|e| e.name).collect())
            .map_err(serde::de::Error::custom)
    }
}

fn check_names(names: &[String], out: &mut Vec<Violation>) {
    if names.is_empty() {
        out.push(Violation::EmptyRegistry);
    }
    let mut seen = HashSet::new();
    for (position, name) in names.iter().enumerate() {
        if name.is_empty() {
            out.push(Violation::EmptyName { position });
        } else if !seen.insert(name.as_str()) {
            out.push(Violation::DuplicateName(name.clone()));
        }
    }
}

/// Modality-tagged vectors grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    modality: Modality,
    dim: usize,
    registry: ClassRegistry,
    /// `offsets[c]..offsets[c + 1]` are the vector rows of class `c`.
    offsets: Vec<usize>,
    data: Vec<f32>,
    source: String,
}

impl EmbeddingSet {
    /// Builds a set from per-class lists of vectors, checking every invariant.
    pub fn new(
        modality: Modality,
        dim: usize,
        registry: ClassRegistry,
        vectors: Vec<Vec<Vec<f32>>>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if vectors.len() != registry.len() {
            return Err(Error::DimensionMismatch {
                context: "vector groups vs registry",
                expected: registry.len(),
                actual: vectors.len(),
            });
        }
        let mut offsets = Vec::with_capacity(vectors.len() + 1);
        offsets.push(0);
        let mut data = Vec::new();
        for (class, clips) in vectors.iter().enumerate() {
            for clip in clips {
                if clip.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "vector length",
                        expected: dim,
                        actual: clip.len(),
                    });
                }
                data.extend_from_slice(clip);
            }
            offsets.push(offsets[class] + clips.len());
        }
        Self::from_flat(modality, dim, registry, offsets, data, source.into())
    }

    fn from_flat(
        modality: Modality,
        dim: usize,
        registry: ClassRegistry,
        offsets: Vec<usize>,
        data: Vec<f32>,
        source: String,
    ) -> Result<Self> {
        let set = Self {
            modality,
            dim,
            registry,
            offsets,
            data,
            source,
        };
        let violations = set.violations();
        if violations.is_empty() {
            Ok(set)
        } else {
            Err(Error::Invariant(violations))
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push(Violation::ZeroDim);
        }
        check_names(self.registry.names(), &mut out);
        for class in 0..self.registry.len() {
            let n = self.n_clips(class);
            let ok = match self.modality {
                Modality::Text => n == 1,
                Modality::Audio => n >= 1,
            };
            if !ok {
                out.push(Violation::VectorCount {
                    class: self.registry.name(class).to_owned(),
                    n_vectors: n,
                    modality: self.modality,
                });
            }
        }
        if self.dim > 0 {
            scan_non_finite(
                &self.registry,
                &self.offsets,
                &self.data,
                self.dim,
                &mut out,
            );
        }
        out
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn n_classes(&self) -> usize {
        self.registry.len()
    }

    pub fn n_clips(&self, class: ClassId) -> usize {
        self.offsets[class + 1] - self.offsets[class]
    }

    pub fn total_vectors(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn clip(&self, class: ClassId, clip: usize) -> &[f32] {
        let row = self.offsets[class] + clip;
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn clips(&self, class: ClassId) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.n_clips(class)).map(move |i| self.clip(class, i))
    }

    /// Widened copy of one vector.
    pub fn clip_f64(&self, class: ClassId, clip: usize) -> Vec<f64> {
        self.clip(class, clip)
            .iter()
            .map(|&x| f64::from(x))
            .collect()
    }

    /// Stacks the given `(class, clip)` rows into an `n × dim` matrix.
    pub fn rows_matrix(&self, rows: &[(ClassId, usize)]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.dim, |r, c| {
            let (class, clip) = rows[r];
            f64::from(self.clip(class, clip)[c])
        })
    }

    /// First vector of every class as a `n_classes × dim` matrix. For text sets
    /// this is the whole set.
    pub fn first_vectors_matrix(&self) -> DMatrix<f64> {
        let rows: Vec<_> = (0..self.n_classes()).map(|c| (c, 0)).collect();
        self.rows_matrix(&rows)
    }

    /// Reassigns vectors between classes: class `i` of the result receives the
    /// vectors that class `permutation[i]` holds here. Names stay in place.
    pub fn permute_vectors(&self, permutation: &[ClassId]) -> Result<Self> {
        check_permutation(permutation, self.n_classes())?;
        let groups = permutation
            .iter()
            .map(|&src| self.clips(src).map(<[f32]>::to_vec).collect())
            .collect();
        Self::new(
            self.modality,
            self.dim,
            self.registry.clone(),
            groups,
            format!("{} (permuted)", self.source),
        )
    }

    /// Reorders classes by name to match `target`, returning an error that
    /// lists every name present on only one side.
    pub fn align_to(&self, target: &ClassRegistry) -> Result<Self> {
        if &self.registry == target {
            return Ok(self.clone());
        }
        let mine = self.registry.index();
        let theirs = target.index();
        let mut unmatched: Vec<String> = target
            .names()
            .iter()
            .filter(|n| !mine.contains_key(n.as_str()))
            .cloned()
            .collect();
        unmatched.extend(
            self.registry
                .names()
                .iter()
                .filter(|n| !theirs.contains_key(n.as_str()))
                .cloned(),
        );
        if !unmatched.is_empty() {
            return Err(Error::RegistryMismatch { unmatched });
        }
        let ids: Vec<ClassId> = target.names().iter().map(|n| mine[n.as_str()]).collect();
        subset(self, &ids)
    }
}

pub(crate) fn check_permutation(permutation: &[usize], n: usize) -> Result<()> {
    if permutation.len() != n {
        return Err(Error::DimensionMismatch {
            context: "permutation length",
            expected: n,
            actual: permutation.len(),
        });
    }
    let mut seen = vec![false; n];
    for &p in permutation {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid(format!("not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

fn scan_non_finite(
    registry: &ClassRegistry,
    offsets: &[usize],
    data: &[f32],
    dim: usize,
    out: &mut Vec<Violation>,
) {
    for class in 0..registry.len() {
        for row in offsets[class]..offsets[class + 1] {
            for (coord, &value) in data[row * dim..(row + 1) * dim].iter().enumerate() {
                if !value.is_finite() {
                    out.push(Violation::NonFinite {
                        class: registry.name(class).to_owned(),
                        clip: row - offsets[class],
                        coord,
                        value,
                    });
                }
            }
        }
    }
}

/// Object-level representation: one `f64` vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeanSet {
    modality: Modality,
    dim: usize,
    registry: ClassRegistry,
    means: DMatrix<f64>,
    clip_counts: Vec<usize>,
}

impl ClassMeanSet {
    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn clip_counts(&self) -> &[usize] {
        &self.clip_counts
    }

    /// Row `c` is the mean of class `c`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn mean(&self, class: ClassId) -> Vec<f64> {
        self.means.row(class).iter().copied().collect()
    }
}

/// Per-class arithmetic mean in `f64`, summing clips in manifest order.
pub fn class_means(set: &EmbeddingSet) -> Result<ClassMeanSet> {
    if set.modality() != Modality::Audio {
        return Err(Error::invalid("class_means expects an audio set"));
    }
    let n = set.n_classes();
    let dim = set.dim();
    let mut means = DMatrix::zeros(n, dim);
    let mut acc = vec![0.0f64; dim];
    for class in 0..n {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for clip in set.clips(class) {
            for (a, &x) in acc.iter_mut().zip(clip) {
                *a += f64::from(x);
            }
        }
        let count = set.n_clips(class) as f64;
        for (j, a) in acc.iter().enumerate() {
            means[(class, j)] = a / count;
        }
    }
    Ok(ClassMeanSet {
        modality: set.modality(),
        dim,
        registry: set.registry().clone(),
        means,
        clip_counts: (0..n).map(|c| set.n_clips(c)).collect(),
    })
}

/// Selects `ids` in the given order and re-indexes them `0..ids.len()`.
pub fn subset(set: &EmbeddingSet, ids: &[ClassId]) -> Result<EmbeddingSet> {
    if ids.is_empty() {
        return Err(Error::invalid("subset needs at least one class id"));
    }
    let mut names = Vec::with_capacity(ids.len());
    let mut offsets = vec![0];
    let mut data = Vec::new();
    for &id in ids {
        set.registry().check_id(id)?;
        names.push(set.registry().name(id).to_owned());
        let rows = set.offsets[id]..set.offsets[id + 1];
        data.extend_from_slice(&set.data[rows.start * set.dim..rows.end * set.dim]);
        offsets.push(offsets.last().unwrap() + rows.len());
    }
    EmbeddingSet::from_flat(
        set.modality,
        set.dim,
        ClassRegistry::new(names)?,
        offsets,
        data,
        set.source.clone(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    modality: Modality,
    dim: usize,
    dtype: String,
    vector_file: String,
    source: String,
    classes: Vec<ManifestClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestClass {
    id: usize,
    name: String,
    n_vectors: usize,
}

/// Outcome of checking an EMBD directory without failing fast.
#[derive(Debug, Clone)]
pub struct Inspection {
    pub violations: Vec<Violation>,
    /// Present whenever the manifest parsed.
    pub modality: Option<Modality>,
    pub dim: usize,
    pub n_classes: usize,
    pub total_vectors: usize,
}

impl Inspection {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Parsed {
    inspection: Inspection,
    set: Option<(Manifest, Vec<usize>, Vec<f32>)>,
}

fn parse_dir(dir: &Path) -> Result<Parsed> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut inspection = Inspection {
        violations: Vec::new(),
        modality: None,
        dim: 0,
        n_classes: 0,
        total_vectors: 0,
    };
    let manifest: Manifest = match serde_json::from_slice(&raw) {
        Ok(m) => m,
        Err(e) => {
            inspection
                .violations
                .push(Violation::Manifest(e.to_string()));
            return Ok(Parsed {
                inspection,
                set: None,
            });
        }
    };
    let v = &mut inspection.violations;
    inspection.modality = Some(manifest.modality);
    inspection.dim = manifest.dim;
    inspection.n_classes = manifest.classes.len();
    if manifest.format_version != FORMAT_VERSION {
        v.push(Violation::UnsupportedVersion(manifest.format_version));
    }
    if manifest.dtype != DTYPE {
        v.push(Violation::UnsupportedDtype(manifest.dtype.clone()));
    }
    if manifest.dim == 0 {
        v.push(Violation::ZeroDim);
    }
    let vector_file = Path::new(&manifest.vector_file);
    if vector_file.components().count() != 1 || vector_file.is_absolute() {
        v.push(Violation::Manifest(format!(
            "vector_file {:?} must be a plain file name",
            manifest.vector_file
        )));
        return Ok(Parsed {
            inspection,
            set: None,
        });
    }
    for (position, class) in manifest.classes.iter().enumerate() {
        if class.id != position {
            v.push(Violation::IdOutOfOrder {
                position,
                id: class.id,
            });
        }
        let ok = match manifest.modality {
            Modality::Text => class.n_vectors == 1,
            Modality::Audio => class.n_vectors >= 1,
        };
        if !ok {
            v.push(Violation::VectorCount {
                class: class.name.clone(),
                n_vectors: class.n_vectors,
                modality: manifest.modality,
            });
        }
    }
    let names: Vec<String> = manifest.classes.iter().map(|c| c.name.clone()).collect();
    check_names(&names, v);

    let total_vectors: usize = manifest.classes.iter().map(|c| c.n_vectors).sum();
    inspection.total_vectors = total_vectors;
    let blob_path = dir.join(&manifest.vector_file);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let expected = 4 * manifest.dim as u64 * total_vectors as u64;
    if blob.len() as u64 != expected {
        v.push(Violation::BlobSize {
            expected,
            actual: blob.len() as u64,
            dim: manifest.dim,
            total_vectors,
        });
        return Ok(Parsed {
            inspection,
            set: None,
        });
    }
    let data: Vec<f32> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut offsets = vec![0];
    for class in &manifest.classes {
        offsets.push(offsets.last().unwrap() + class.n_vectors);
    }
    if manifest.dim > 0 {
        // Scanning needs names by position even if the registry itself is invalid.
        let registry = ClassRegistry {
            names: names.clone(),
        };
        scan_non_finite(&registry, &offsets, &data, manifest.dim, v);
    }
    Ok(Parsed {
        inspection,
        set: Some((manifest, offsets, data)),
    })
}

/// Checks an EMBD directory and reports every violation found. Only I/O
/// failures (missing manifest or blob) are returned as errors.
pub fn inspect(dir: impl AsRef<Path>) -> Result<Inspection> {
    Ok(parse_dir(dir.as_ref())?.inspection)
}

pub fn load_set(dir: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let dir = dir.as_ref();
    let parsed = parse_dir(dir)?;
    if !parsed.inspection.is_valid() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            violations: parsed.inspection.violations,
        });
    }
    let (manifest, offsets, data) = parsed.set.expect("valid inspection carries data");
    let registry = ClassRegistry::new(manifest.classes.into_iter().map(|c| c.name).collect())?;
    EmbeddingSet::from_flat(
        manifest.modality,
        manifest.dim,
        registry,
        offsets,
        data,
        manifest.source,
    )
}

/// Writes `manifest.json` and `data.bin` into `dir`, creating it if needed.
/// Output bytes are a pure function of the set.
pub fn save_set(set: &EmbeddingSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let violations = set.violations();
    if !violations.is_empty() {
        return Err(Error::Invariant(violations));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        modality: set.modality,
        dim: set.dim,
        dtype: DTYPE.to_owned(),
        vector_file: DATA_FILE.to_owned(),
        source: set.source.clone(),
        classes: (0..set.n_classes())
            .map(|id| ManifestClass {
                id,
                name: set.registry.name(id).to_owned(),
                n_vectors: set.n_clips(id),
            })
            .collect(),
    };
    let manifest_path: PathBuf = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    text.push(b'\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;

    let mut blob = Vec::with_capacity(set.data.len() * 4);
    for x in &set.data {
        blob.extend_from_slice(&x.to_le_bytes());
    }
    let blob_path = dir.join(DATA_FILE);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))
}
