//! Labelled embedding collections and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * CSV with header `id,label,f0,f1,...,f{m-1}`, one row per embedding.
//!   Values are parsed as full-precision decimals.
//! * Packed binary: magic `RDCE`, `u32` version (1), `u32` n, `u32` m, then
//!   n records of (`u32` id length, id bytes, `i64` label, m × `f32`), all
//!   little-endian.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PACKED_MAGIC: &[u8; 4] = b"RDCE";
pub const PACKED_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Packed,
}

impl Format {
    /// Guess the format from a file extension: `.csv` is CSV, anything else packed.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Packed,
        }
    }
}

/// Immutable, validated set of labelled feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T: Scalar> {
    vectors: Array2<T>,
    labels: Vec<i64>,
    ids: Vec<String>,
    class_index: BTreeMap<i64, Vec<usize>>,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(vectors: Array2<T>, labels: Vec<i64>, ids: Vec<String>) -> Result<Self> {
        Self::with_declared_classes(vectors, labels, ids, &[])
    }

    /// Like [`EmbeddingSet::new`], but every class in `declared` must own at
    /// least one row.
    pub fn with_declared_classes(
        vectors: Array2<T>,
        labels: Vec<i64>,
        ids: Vec<String>,
        declared: &[i64],
    ) -> Result<Self> {
        let n = vectors.nrows();
        if labels.len() != n || ids.len() != n {
            return Err(Error::MalformedHeader(format!(
                "{} vectors, {} labels, {} ids",
                n,
                labels.len(),
                ids.len()
            )));
        }
        if vectors.ncols() == 0 {
            return Err(Error::MalformedHeader("feature dimension is zero".into()));
        }
        for (row, v) in vectors.axis_iter(Axis(0)).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteValue { row });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut class_index: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (row, &label) in labels.iter().enumerate() {
            if label < 0 {
                return Err(Error::InvalidLabel { row, label });
            }
            class_index.entry(label).or_default().push(row);
        }
        if let Some(&missing) = declared.iter().find(|c| !class_index.contains_key(c)) {
            return Err(Error::EmptyClass(missing));
        }
        Ok(Self {
            vectors,
            labels,
            ids,
            class_index,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<T> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.vectors.row(i)
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Class id to row indices, in ascending class order.
    pub fn class_index(&self) -> &BTreeMap<i64, Vec<usize>> {
        &self.class_index
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    /// Same set with every row scaled to unit Euclidean norm.
    pub fn l2_normalize(&self) -> Result<Self> {
        let mut vectors = self.vectors.clone();
        l2_normalize_rows(&mut vectors)?;
        Ok(Self {
            vectors,
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            class_index: self.class_index.clone(),
        })
    }
}

/// Scale each row of `m` to unit norm in place.
pub fn l2_normalize_rows<T: Scalar>(m: &mut Array2<T>) -> Result<()> {
    for (row, mut v) in m.axis_iter_mut(Axis(0)).enumerate() {
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteValue { row });
        }
        if norm <= T::zero() {
            return Err(Error::ZeroVector { row });
        }
        v.mapv_inplace(|x| x / norm);
    }
    Ok(())
}

pub fn load_embeddings<T: Scalar>(path: &Path, format: Format) -> Result<EmbeddingSet<T>> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        Format::Csv => parse_csv(&bytes),
        Format::Packed => parse_packed(&bytes),
    }
}

pub fn save_embeddings<T: Scalar>(
    set: &EmbeddingSet<T>,
    path: &Path,
    format: Format,
) -> Result<()> {
    let bytes = match format {
        Format::Csv => encode_csv(set),
        Format::Packed => encode_packed(set),
    };
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_csv<T: Scalar>(bytes: &[u8]) -> Result<EmbeddingSet<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::MalformedHeader(
            "expected `id,label,f0,...` header".into(),
        ));
    }
    let m = header.len() - 2;
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::MalformedHeader(format!(
                "feature column {j} is named {name:?}"
            )));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (row, record) in reader.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != m + 2 {
            return Err(Error::MalformedHeader(format!(
                "header declares {m} features but line {line} has {}",
                record.len().saturating_sub(2)
            )));
        }
        ids.push(record[0].to_string());
        let label: i64 = record[1].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad label {:?}", &record[1]),
        })?;
        labels.push(label);
        for field in record.iter().skip(2) {
            let x: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number {field:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::NonFiniteValue { row });
            }
            data.push(T::of(x));
        }
    }
    let vectors = Array2::from_shape_vec((labels.len(), m), data)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    EmbeddingSet::new(vectors, labels, ids)
}

fn encode_csv<T: Scalar>(set: &EmbeddingSet<T>) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..set.dim()).map(|j| format!("f{j}")));
    // Writing into a Vec cannot fail.
    writer.write_record(&header).expect("in-memory write");
    for i in 0..set.len() {
        let mut rec = Vec::with_capacity(set.dim() + 2);
        rec.push(set.ids[i].clone());
        rec.push(set.labels[i].to_string());
        rec.extend(set.row(i).iter().map(|x| format!("{}", x.as_f64())));
        writer.write_record(&rec).expect("in-memory write");
    }
    writer.into_inner().expect("in-memory flush")
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "payload truncated at byte {} (wanted {len} more)",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn parse_packed<T: Scalar>(bytes: &[u8]) -> Result<EmbeddingSet<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != PACKED_MAGIC {
        return Err(Error::MalformedHeader("missing RDCE magic".into()));
    }
    let version = cur.u32()?;
    if version != PACKED_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let n = cur.u32()? as usize;
    let m = cur.u32()? as usize;
    let mut data = Vec::with_capacity(n.saturating_mul(m).min(1 << 24));
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    for row in 0..n {
        let id_len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|e| Error::MalformedHeader(format!("id of row {row} is not utf-8: {e}")))?;
        ids.push(id.to_string());
        labels.push(cur.i64()?);
        for _ in 0..m {
            let x = cur.f32()?;
            if !x.is_finite() {
                return Err(Error::NonFiniteValue { row });
            }
            data.push(T::of(x as f64));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after {n} records",
            bytes.len() - cur.pos
        )));
    }
    let vectors =
        Array2::from_shape_vec((n, m), data).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    EmbeddingSet::new(vectors, labels, ids)
}

fn encode_packed<T: Scalar>(set: &EmbeddingSet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.len() * (16 + 4 * set.dim()));
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&PACKED_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    for i in 0..set.len() {
        let id = set.ids[i].as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&set.labels[i].to_le_bytes());
        for x in set.row(i) {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    out
}
