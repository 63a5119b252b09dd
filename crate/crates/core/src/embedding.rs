//! Embedding matrices, their binary container, and JSON metadata sidecars.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMAP"
//! 4       4     format version (u32) = 1
//! 8       8     n_rows (u64)
//! 16      8     n_cols (u64)
//! 24      1     dtype (u8) = 1, float32
//! 25      7     reserved, zero
//! 32      4*n   float32 payload, row-major
//! ```
//!
//! The sidecar lives next to the binary at `<path>.meta.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMAP";
pub const EMBEDDING_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 32;

const NORM_TOLERANCE: f64 = 1e-6;

/// N×d matrix of sentence embeddings produced by one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T: Scalar> {
    encoder_id: String,
    values: DMatrix<T>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Builds a matrix from row-major values, checking shape and finiteness.
    pub fn from_row_major(
        encoder_id: impl Into<String>,
        n_rows: usize,
        n_cols: usize,
        values: &[T],
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Validation(format!(
                "embedding matrix must be non-empty, got {n_rows}x{n_cols}"
            )));
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::Shape(format!(
                "expected {} values for {n_rows}x{n_cols}, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        Self::new(encoder_id, DMatrix::from_row_slice(n_rows, n_cols, values))
    }

    pub fn from_rows(encoder_id: impl Into<String>, rows: &[Vec<T>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        Self::from_row_major(encoder_id, rows.len(), n_cols, &flat)
    }

    pub fn new(encoder_id: impl Into<String>, values: DMatrix<T>) -> Result<Self> {
        let m = EmbeddingMatrix {
            encoder_id: encoder_id.into(),
            values,
            normalized: false,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.values.nrows() == 0 || self.values.ncols() == 0 {
            return Err(Error::Validation(format!(
                "embedding matrix must be non-empty, got {}x{}",
                self.values.nrows(),
                self.values.ncols()
            )));
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            // column-major position
            let (r, c) = (pos % self.values.nrows(), pos / self.values.nrows());
            return Err(Error::Validation(format!(
                "non-finite value at row {r}, column {c} of {}",
                self.encoder_id
            )));
        }
        if self.normalized {
            let tol = T::lit(NORM_TOLERANCE);
            for (i, row) in self.values.row_iter().enumerate() {
                if (row.norm() - T::one()).abs() > tol {
                    return Err(Error::Validation(format!(
                        "row {i} of {} is flagged normalized but has norm {}",
                        self.encoder_id,
                        row.norm()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn set_encoder_id(&mut self, id: impl Into<String>) {
        self.encoder_id = id.into();
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[(row, col)]
    }

    pub fn to_row_major(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.values.len());
        for row in self.values.row_iter() {
            out.extend(row.iter().copied());
        }
        out
    }

    /// Returns a copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.encoder_id.clone(), &self.values * factor)
    }

    /// Right-multiplies by a d×d matrix, e.g. an orthogonal rotation of the
    /// encoder's output space.
    pub fn transformed(&self, rhs: &DMatrix<T>) -> Result<Self> {
        if rhs.nrows() != self.n_cols() {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_rows(),
                self.n_cols(),
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        Self::new(self.encoder_id.clone(), &self.values * rhs)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            encoder_id: self.encoder_id.clone(),
            values: self.values.map(|v| U::lit(v.as_f64())),
            normalized: self.normalized,
        }
    }
}

/// Scales every row to unit Euclidean norm. Zero rows are rejected.
pub fn l2_normalize_rows<T: Scalar>(matrix: &EmbeddingMatrix<T>) -> Result<EmbeddingMatrix<T>> {
    let mut values = matrix.values.clone();
    for (i, mut row) in values.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == T::zero() {
            return Err(Error::DegenerateInput(format!(
                "row {i} of {} is all zeros",
                matrix.encoder_id
            )));
        }
        row /= norm;
    }
    Ok(EmbeddingMatrix {
        encoder_id: matrix.encoder_id.clone(),
        values,
        normalized: true,
    })
}

pub fn encode_embedding_matrix<T: Scalar>(matrix: &EmbeddingMatrix<T>) -> Result<Vec<u8>> {
    let (n, d) = (matrix.n_rows(), matrix.n_cols());
    let mut buf = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * n * d);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&[0u8; 7]);
    for (i, row) in matrix.values.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let narrowed = v.as_f64() as f32;
            if !narrowed.is_finite() {
                return Err(Error::Validation(format!(
                    "value at ({i}, {j}) overflows float32"
                )));
            }
            buf.extend_from_slice(&narrowed.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_embedding_matrix<T: Scalar>(
    encoder_id: impl Into<String>,
    bytes: &[u8],
) -> Result<EmbeddingMatrix<T>> {
    if bytes.len() < 8 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("missing EMAP magic header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported EMAP version {version}")));
    }
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(Error::Corruption(format!(
            "header truncated at {} bytes",
            bytes.len()
        )));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let dtype = bytes[24];
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    if bytes[25..32].iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(EMBEDDING_HEADER_LEN as u64));
    match expected {
        Some(len) if len == bytes.len() as u64 => {}
        _ => {
            return Err(Error::Corruption(format!(
                "header declares {n}x{d} float32 values but file holds {} payload bytes",
                bytes.len() - EMBEDDING_HEADER_LEN
            )))
        }
    }
    let (n, d) = (n as usize, d as usize);
    let values: Vec<T> = bytes[EMBEDDING_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    EmbeddingMatrix::from_row_major(encoder_id, n, d, &values)
}

/// Reads an `EMAP` file. The encoder id is taken from the file stem; callers
/// holding a sidecar should use [`read_embedding_with_sidecar`].
pub fn read_embedding_matrix<T: Scalar>(path: &Path) -> Result<EmbeddingMatrix<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding_matrix(file_stem(path), &bytes)
}

pub fn write_embedding_matrix<T: Scalar>(matrix: &EmbeddingMatrix<T>, path: &Path) -> Result<()> {
    let bytes = encode_embedding_matrix(matrix)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Metadata describing one encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderRecord {
    pub encoder_id: String,
    #[serde(default)]
    pub encoder_type: Option<String>,
    #[serde(default)]
    pub param_count: Option<u64>,
    #[serde(default)]
    pub dimensionality: Option<u64>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub languages: Vec<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub tasks: Vec<String>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub datasets: Vec<String>,
}

fn null_as_empty<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<String>, D::Error> {
    Ok(Option::<Vec<String>>::deserialize(de)?.unwrap_or_default())
}

impl EncoderRecord {
    pub fn new(encoder_id: impl Into<String>) -> Self {
        EncoderRecord {
            encoder_id: encoder_id.into(),
            encoder_type: None,
            param_count: None,
            dimensionality: None,
            languages: Vec::new(),
            tasks: Vec::new(),
            datasets: Vec::new(),
        }
    }

    /// Names accepted by [`EncoderRecord::attribute`].
    pub const ATTRIBUTES: [&'static str; 7] = [
        "encoder_id",
        "encoder_type",
        "param_count",
        "dimensionality",
        "languages",
        "tasks",
        "datasets",
    ];

    /// String value of a named attribute, `None` when the field is unset.
    /// List attributes are joined with `;`.
    pub fn attribute(&self, name: &str) -> Result<Option<String>> {
        let join = |v: &Vec<String>| (!v.is_empty()).then(|| v.join(";"));
        Ok(match name {
            "encoder_id" => Some(self.encoder_id.clone()),
            "encoder_type" => self.encoder_type.clone(),
            "param_count" => self.param_count.map(|p| p.to_string()),
            "dimensionality" => self.dimensionality.map(|d| d.to_string()),
            "languages" => join(&self.languages),
            "tasks" => join(&self.tasks),
            "datasets" => join(&self.datasets),
            other => {
                return Err(Error::Parameter(format!(
                    "unknown encoder attribute {other:?}; expected one of {:?}",
                    Self::ATTRIBUTES
                )))
            }
        })
    }
}

/// Metadata document stored next to every binary artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(flatten)]
    pub record: EncoderRecord,
    #[serde(default)]
    pub normalized: bool,
    /// Provenance and any fields this crate does not interpret.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Sidecar {
    pub fn new(record: EncoderRecord) -> Self {
        Sidecar {
            record,
            normalized: false,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.extra.get(key).and_then(Value::as_f64)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("bad sidecar: {e}")))
    }

    /// Canonical serialization: keys sorted, two-space indent, trailing newline.
    pub fn to_canonical_string(&self) -> String {
        // serde_json::Map is ordered by key unless `preserve_order` is enabled
        let value = serde_json::to_value(self).expect("sidecar serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let meta = sidecar_path(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    Sidecar::parse(&text)
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let meta = sidecar_path(path);
    fs::write(&meta, sidecar.to_canonical_string()).map_err(|e| Error::io(&meta, e))
}

/// Reads an embedding file and its sidecar, if one exists. The sidecar supplies
/// the encoder id and normalization flag; dimensionality must match `n_cols`.
pub fn read_embedding_with_sidecar<T: Scalar>(
    path: &Path,
) -> Result<(EmbeddingMatrix<T>, Option<Sidecar>)> {
    let mut matrix = read_embedding_matrix::<T>(path)?;
    if !sidecar_path(path).exists() {
        return Ok((matrix, None));
    }
    let sidecar = read_sidecar(path)?;
    if let Some(dim) = sidecar.record.dimensionality {
        if dim as usize != matrix.n_cols() {
            return Err(Error::Validation(format!(
                "sidecar dimensionality {dim} disagrees with {} columns in {}",
                matrix.n_cols(),
                path.display()
            )));
        }
    }
    matrix.encoder_id = sidecar.record.encoder_id.clone();
    if sidecar.normalized {
        matrix.normalized = true;
        matrix.validate()?;
    }
    Ok((matrix, Some(sidecar)))
}
