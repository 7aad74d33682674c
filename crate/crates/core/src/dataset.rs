//! Grid-based spatiotemporal datasets and their on-disk format.
//!
//! A dataset is stored as a file pair: `<name>.json` holds axes, field
//! layout, boundary kinds and free-form metadata; `<name>.bin` holds every
//! field back to back as little-endian `f64` in row-major order with the
//! time index varying fastest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Minimum number of points along any axis.
pub const MIN_AXIS_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub origin: f64,
    pub spacing: f64,
    pub count: usize,
}

impl UniformAxis {
    pub fn new(origin: f64, spacing: f64, count: usize) -> Self {
        Self { origin, spacing, count }
    }

    /// `count` points covering `[start, end]` including both ends.
    pub fn closed(start: f64, end: f64, count: usize) -> Self {
        Self::new(start, (end - start) / (count as f64 - 1.0), count)
    }

    /// `count` points covering the periodic interval `[start, end)`.
    pub fn periodic(start: f64, end: f64, count: usize) -> Self {
        Self::new(start, (end - start) / count as f64, count)
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.origin + self.spacing * i as f64
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.coord(i)).collect()
    }

    /// Length of the periodic cell spanned by the axis.
    pub fn period(&self) -> f64 {
        self.spacing * self.count as f64
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::InvalidDataset(format!(
                "{what} spacing must be finite and positive, got {}",
                self.spacing
            )));
        }
        if !self.origin.is_finite() {
            return Err(Error::InvalidDataset(format!("{what} origin is not finite")));
        }
        if self.count < MIN_AXIS_COUNT {
            return Err(Error::InvalidDataset(format!(
                "{what} has {} points, at least {MIN_AXIS_COUNT} required",
                self.count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    Periodic,
    DirichletHomogeneous,
}

impl BoundaryKind {
    pub fn is_periodic(self) -> bool {
        matches!(self, BoundaryKind::Periodic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub boundary: BoundaryKind,
    /// Row-major over `(space..., time)`.
    pub values: Vec<f64>,
}

/// Spatiotemporal samples of one or more real fields on a uniform grid.
///
/// Immutable once built; every constructor validates shapes, spacings and
/// finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    space: Vec<UniformAxis>,
    time: UniformAxis,
    fields: Vec<Field>,
    metadata: BTreeMap<String, Value>,
}

impl Dataset {
    pub fn new(
        space: Vec<UniformAxis>,
        time: UniformAxis,
        fields: Vec<Field>,
        metadata: BTreeMap<String, Value>,
    ) -> Result<Self> {
        let ds = Self {
            space,
            time,
            fields,
            metadata,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.space.is_empty() || self.space.len() > 2 {
            return Err(Error::InvalidDataset(format!(
                "expected 1 or 2 space axes, got {}",
                self.space.len()
            )));
        }
        for (d, axis) in self.space.iter().enumerate() {
            axis.validate(&format!("space axis {}", axis_name(d)))?;
        }
        self.time.validate("time axis")?;
        if self.fields.is_empty() {
            return Err(Error::InvalidDataset("dataset has no fields".into()));
        }
        let len = self.len();
        for (i, f) in self.fields.iter().enumerate() {
            if self.fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidDataset(format!("duplicate field `{}`", f.name)));
            }
            if f.values.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "field `{}` has {} values, grid {:?} needs {len}",
                    f.name,
                    f.values.len(),
                    self.shape()
                )));
            }
            if let Some(pos) = f.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("field `{}` at flat index {pos}", f.name)));
            }
        }
        Ok(())
    }

    pub fn space_axes(&self) -> &[UniformAxis] {
        &self.space
    }

    pub fn space_axis(&self, d: usize) -> &UniformAxis {
        &self.space[d]
    }

    pub fn time_axis(&self) -> &UniformAxis {
        &self.time
    }

    pub fn space_dims(&self) -> usize {
        self.space.len()
    }

    pub fn nt(&self) -> usize {
        self.time.count
    }

    /// Number of spatial grid points.
    pub fn n_space(&self) -> usize {
        self.space.iter().map(|a| a.count).product()
    }

    /// Total number of spatiotemporal points.
    pub fn len(&self) -> usize {
        self.n_space() * self.nt()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Array shape `[space..., time]`.
    pub fn shape(&self) -> Vec<usize> {
        self.space
            .iter()
            .map(|a| a.count)
            .chain(std::iter::once(self.time.count))
            .collect()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    pub fn field_index(&self, name: &str) -> Result<usize> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownField(name.to_string()))
    }

    pub fn field(&self, name: &str) -> Result<&Field> {
        Ok(&self.fields[self.field_index(name)?])
    }

    pub fn metadata(&self) -> &BTreeMap<String, Value> {
        &self.metadata
    }

    /// Copy with one field's values replaced (shape and finiteness re-checked).
    pub fn with_field_values(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        let idx = self.field_index(name)?;
        let mut out = self.clone();
        out.fields[idx].values = values;
        out.validate()?;
        Ok(out)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: Value) -> Self {
        self.metadata.insert(key.into(), value);
        self
    }

    /// Flat index of `(spatial point, time slice)`.
    pub fn flat_index(&self, space_index: usize, t: usize) -> usize {
        space_index * self.nt() + t
    }

    /// Split a flat index into `(spatial point, time slice)`.
    pub fn split_index(&self, flat: usize) -> (usize, usize) {
        (flat / self.nt(), flat % self.nt())
    }

    /// Multi-index `[i_x, (i_y,) t]` of a flat index.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let (mut s, t) = self.split_index(flat);
        let mut idx = vec![0; self.space.len() + 1];
        for d in (0..self.space.len()).rev() {
            idx[d] = s % self.space[d].count;
            s /= self.space[d].count;
        }
        idx[self.space.len()] = t;
        idx
    }

    /// One spatial snapshot of a field, row-major over the space axes.
    pub fn time_slice(&self, field: usize, t: usize) -> Vec<f64> {
        let nt = self.nt();
        self.fields[field].values.iter().skip(t).step_by(nt).copied().collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_dataset(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_dataset(path)
    }
}

pub fn axis_name(d: usize) -> &'static str {
    match d {
        0 => "x",
        1 => "y",
        _ => "z",
    }
}

/// Header and payload paths for a dataset name or either file of the pair.
pub fn dataset_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let p = path.as_ref();
    let base = match p.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => p.with_extension(""),
        _ => p.to_path_buf(),
    };
    let mut header = base.clone().into_os_string();
    header.push(".json");
    let mut payload = base.into_os_string();
    payload.push(".bin");
    (header.into(), payload.into())
}

#[derive(Serialize, Deserialize)]
struct HeaderAxes {
    space: Vec<NamedAxis>,
    time: UniformAxis,
}

#[derive(Serialize, Deserialize)]
struct NamedAxis {
    name: String,
    #[serde(flatten)]
    axis: UniformAxis,
}

#[derive(Serialize, Deserialize)]
struct HeaderField {
    name: String,
    shape: Vec<usize>,
    /// Offset of the first value, in `f64` units, into the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    order: String,
    payload: String,
    axes: HeaderAxes,
    fields: Vec<HeaderField>,
    boundary: BTreeMap<String, BoundaryKind>,
    metadata: BTreeMap<String, Value>,
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let (header_path, payload_path) = dataset_paths(path);
    if let Some(dir) = header_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let shape = dataset.shape();
    let len = dataset.len();
    let header = Header {
        dtype: "f64le".into(),
        order: "row-major".into(),
        payload: payload_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        axes: HeaderAxes {
            space: dataset
                .space
                .iter()
                .enumerate()
                .map(|(d, a)| NamedAxis {
                    name: axis_name(d).into(),
                    axis: *a,
                })
                .collect(),
            time: dataset.time,
        },
        fields: dataset
            .fields
            .iter()
            .enumerate()
            .map(|(i, f)| HeaderField {
                name: f.name.clone(),
                shape: shape.clone(),
                offset: i * len,
            })
            .collect(),
        boundary: dataset.fields.iter().map(|f| (f.name.clone(), f.boundary)).collect(),
        metadata: dataset.metadata.clone(),
    };
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(&header_path, text)?;

    let mut out = BufWriter::new(fs::File::create(&payload_path)?);
    for f in &dataset.fields {
        for v in &f.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let (header_path, payload_path) = dataset_paths(path);
    let text = fs::read_to_string(&header_path)?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader(format!("{}: {e}", header_path.display())))?;
    if header.dtype != "f64le" {
        return Err(Error::MalformedHeader(format!("unsupported dtype `{}`", header.dtype)));
    }
    if header.order != "row-major" {
        return Err(Error::MalformedHeader(format!("unsupported order `{}`", header.order)));
    }
    let space: Vec<UniformAxis> = header.axes.space.iter().map(|a| a.axis).collect();
    let time = header.axes.time;
    let shape: Vec<usize> = space
        .iter()
        .map(|a| a.count)
        .chain(std::iter::once(time.count))
        .collect();
    let len: usize = shape.iter().product();

    let bytes = fs::read(&payload_path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "payload {} is {} bytes, not a multiple of 8",
            payload_path.display(),
            bytes.len()
        )));
    }
    let available = bytes.len() / 8;
    let mut fields = Vec::with_capacity(header.fields.len());
    for hf in &header.fields {
        if hf.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "field `{}` declares shape {:?}, axes give {shape:?}",
                hf.name, hf.shape
            )));
        }
        if hf.offset + len > available {
            return Err(Error::ShapeMismatch(format!(
                "field `{}` needs values [{}, {}) but payload holds {available}",
                hf.name,
                hf.offset,
                hf.offset + len
            )));
        }
        let values = bytes[hf.offset * 8..(hf.offset + len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let boundary = *header
            .boundary
            .get(&hf.name)
            .ok_or_else(|| Error::MalformedHeader(format!("no boundary kind for field `{}`", hf.name)))?;
        fields.push(Field {
            name: hf.name.clone(),
            boundary,
            values,
        });
    }
    let expected = header.fields.len() * len;
    if available != expected {
        return Err(Error::ShapeMismatch(format!(
            "payload holds {available} values, header describes {expected}"
        )));
    }
    Dataset::new(space, time, fields, header.metadata)
}
