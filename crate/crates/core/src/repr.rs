//! Labeled representation sets and their binary dump format.
//!
//! A dump is a little-endian file `REPR | version:u32 | d:u32 | n:u64 |
//! n·d f32` with a JSON sidecar at `<path>.json` carrying the labels.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::NumberLabel;
use crate::error::{Error, Result};

pub const REPR_MAGIC: &[u8; 4] = b"REPR";
pub const REPR_VERSION: u32 = 1;

/// Which token a representation is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// The cue noun in the unmasked sentence.
    Noun,
    /// The target verb in the unmasked sentence.
    Verb,
    /// The target position after it has been replaced by `[MASK]`.
    MaskedVerb,
    /// Nouns and verbs pooled in equal numbers.
    Mixed,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Noun, Category::Verb, Category::MaskedVerb, Category::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Noun => "noun",
            Category::Verb => "verb",
            Category::MaskedVerb => "masked_verb",
            Category::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noun" | "nouns" => Ok(Category::Noun),
            "verb" | "verbs" => Ok(Category::Verb),
            "masked_verb" | "masked-verb" | "masked_verbs" => Ok(Category::MaskedVerb),
            "mixed" => Ok(Category::Mixed),
            other => Err(Error::Config(format!("unknown category {other:?}"))),
        }
    }
}

/// Per-token hidden vectors of one category at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    /// `n × d`.
    pub matrix: Array2<f32>,
    pub labels: Vec<NumberLabel>,
    pub category: Category,
    pub layer: usize,
    /// Token position of each row within its sentence.
    pub positions: Vec<usize>,
    /// Surface word of each row (empty when unknown).
    pub words: Vec<String>,
}

impl RepresentationSet {
    pub fn new(matrix: Array2<f32>, labels: Vec<NumberLabel>, category: Category, layer: usize) -> Result<Self> {
        let n = matrix.nrows();
        let set = Self {
            matrix,
            labels,
            category,
            layer,
            positions: vec![0; n],
            words: Vec::new(),
        };
        set.check_shape()?;
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.n();
        if self.labels.len() != n || self.positions.len() != n {
            return Err(Error::Shape(format!(
                "{n} rows but {} labels and {} positions",
                self.labels.len(),
                self.positions.len()
            )));
        }
        if !self.words.is_empty() && self.words.len() != n {
            return Err(Error::Shape(format!("{n} rows but {} words", self.words.len())));
        }
        Ok(())
    }

    /// Shape, finiteness and minimum-size checks.
    pub fn validate(&self) -> Result<()> {
        self.check_shape()?;
        if self.n() < 2 {
            return Err(Error::DegenerateData(format!("only {} representation(s)", self.n())));
        }
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite representation value".into()));
        }
        Ok(())
    }

    pub fn has_both_labels(&self) -> bool {
        let sg = self.labels.iter().filter(|&&l| l == NumberLabel::Singular).count();
        sg > 0 && sg < self.labels.len()
    }

    /// Fraction of rows carrying the more frequent label.
    pub fn majority_rate(&self) -> f64 {
        majority_rate(&self.labels)
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.matrix.mapv(f64::from)
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            category: self.category,
            layer: self.layer,
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            words: if self.words.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.words[i].clone()).collect()
            },
        }
    }

    /// Same metadata with a replacement matrix.
    pub fn with_matrix(&self, matrix: Array2<f32>) -> Result<Self> {
        if matrix.nrows() != self.n() {
            return Err(Error::Shape(format!(
                "replacement has {} rows, expected {}",
                matrix.nrows(),
                self.n()
            )));
        }
        Ok(Self {
            matrix,
            labels: self.labels.clone(),
            category: self.category,
            layer: self.layer,
            positions: self.positions.clone(),
            words: self.words.clone(),
        })
    }
}

pub(crate) fn majority_rate(labels: &[NumberLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let sg = labels.iter().filter(|&&l| l == NumberLabel::Singular).count();
    sg.max(labels.len() - sg) as f64 / labels.len() as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    layer: usize,
    category: Category,
    labels: Vec<NumberLabel>,
    positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    words: Vec<String>,
}

/// Path of the JSON sidecar belonging to a dump.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_representations(path: impl AsRef<Path>, set: &RepresentationSet) -> Result<()> {
    let path = path.as_ref();
    set.check_shape()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let d = u32::try_from(set.d()).map_err(|_| Error::Shape("dimension exceeds u32".into()))?;
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(REPR_MAGIC)?;
    write(&REPR_VERSION.to_le_bytes())?;
    write(&d.to_le_bytes())?;
    write(&(set.n() as u64).to_le_bytes())?;
    for v in set.matrix.iter() {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let manifest = Manifest {
        layer: set.layer,
        category: set.category,
        labels: set.labels.clone(),
        positions: set.positions.clone(),
        words: set.words.clone(),
    };
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

pub fn read_representations(path: impl AsRef<Path>) -> Result<RepresentationSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(path, &bytes);
    if r.take(4)? != REPR_MAGIC {
        return Err(Error::format(path, "missing REPR magic"));
    }
    let version = r.u32()?;
    if version != REPR_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let d = r.u32()? as usize;
    let n = usize::try_from(r.u64()?).map_err(|_| Error::format(path, "row count overflows"))?;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::format(path, "size overflows"))?;
    if r.remaining() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} payload bytes for {n}×{d}, found {}", r.remaining()),
        ));
    }
    let data: Vec<f32> = r.f32s(n * d)?;
    let matrix = Array2::from_shape_vec((n, d), data).expect("length checked");

    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    let set = RepresentationSet {
        matrix,
        labels: m.labels,
        category: m.category,
        layer: m.layer,
        positions: m.positions,
        words: m.words,
    };
    set.check_shape()
        .map_err(|e| Error::format(&mpath, e.to_string()))?;
    Ok(set)
}

/// Little-endian cursor over a byte buffer that reports truncation as a
/// format error.
pub(crate) struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflows"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }
}
