//! Sample/label data model, CSV ingestion and synthetic generators.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Error, Result};

/// `N` samples of `D`-dimensional points with optional dense class labels.
///
/// Points are stored row-major. Labels, when present, are dense integers
/// `0..C` assigned in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    n: usize,
    dim: usize,
    labels: Option<Vec<usize>>,
    ids: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking shape and finiteness. When `ids` is `None`
    /// the row index is used as identifier.
    pub fn new(
        points: Vec<f64>,
        dim: usize,
        labels: Option<Vec<usize>>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dataset dimension must be at least 1"));
        }
        if points.len() % dim != 0 {
            return Err(invalid(format!(
                "{} coordinates do not form rows of width {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if n < 1 {
            return Err(invalid("dataset must contain at least one sample"));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite coordinate at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(invalid(format!("{} labels for {n} samples", l.len())));
            }
        }
        let ids = match ids {
            Some(ids) if ids.len() != n => {
                return Err(invalid(format!("{} ids for {n} samples", ids.len())))
            }
            Some(ids) => ids,
            None => (0..n).map(|i| i.to_string()).collect(),
        };
        Ok(Self {
            points,
            n,
            dim,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
            .unwrap_or(0)
    }

    /// Ensures the dataset can drive a supervised loss: labels exist and at
    /// least two distinct classes are present.
    pub fn require_supervision(&self) -> Result<&[usize]> {
        let labels = self
            .labels()
            .ok_or_else(|| Error::Config("supervised loss requires labels".into()))?;
        let first = labels[0];
        if labels.iter().all(|&l| l == first) {
            return Err(Error::Config(
                "supervised loss requires at least two distinct labels".into(),
            ));
        }
        Ok(labels)
    }

    /// Per-feature zero mean, unit variance. Constant features are only centered.
    pub fn standardized(&self) -> Dataset {
        let n = self.n as f64;
        let mut out = self.points.clone();
        for c in 0..self.dim {
            let mean = (0..self.n).map(|i| self.points[i * self.dim + c]).sum::<f64>() / n;
            let var = (0..self.n)
                .map(|i| (self.points[i * self.dim + c] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.n {
                out[i * self.dim + c] = (self.points[i * self.dim + c] - mean) / sd;
            }
        }
        Dataset {
            points: out,
            ..self.clone()
        }
    }

    /// Writes `id,x1..xD[,label]` with lossless 17-significant-digit reals.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.dim).map(|c| format!("x{c}")));
        if self.labels.is_some() {
            header.push("label".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n {
            let mut line = self.ids[i].clone();
            for v in self.point(i) {
                line.push(',');
                line.push_str(&format_real(*v));
            }
            if let Some(l) = &self.labels {
                line.push(',');
                line.push_str(&l[i].to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(File::create(path)?);
        self.write_csv(f)
    }
}

/// Formats a real with 17 significant digits, which round-trips any `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Which CSV column carries class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Column name; requires a header row.
    Name(String),
    /// Zero-based column index.
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&LabelColumn>) -> Result<Dataset> {
    read_csv(File::open(path)?, label_column)
}

/// Parses comma-separated data. A header row is detected when the first row
/// has a non-numeric cell outside the label column; a column named `id` in
/// the header supplies sample identifiers.
pub fn read_csv<R: Read>(reader: R, label_column: Option<&LabelColumn>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(invalid("csv file is empty"));
    }
    let width = rows[0].len();

    let forced_header = matches!(label_column, Some(LabelColumn::Name(_)));
    let index_label = match label_column {
        Some(LabelColumn::Index(i)) => Some(*i),
        _ => None,
    };
    let first_is_header = forced_header
        || rows[0]
            .iter()
            .enumerate()
            .any(|(c, cell)| Some(c) != index_label && cell.parse::<f64>().is_err());

    let (header, body): (Option<&csv::StringRecord>, &[csv::StringRecord]) = if first_is_header {
        (Some(&rows[0]), &rows[1..])
    } else {
        (None, &rows[..])
    };

    let label_idx = match label_column {
        None => None,
        Some(LabelColumn::Index(i)) => {
            if *i >= width {
                return Err(invalid(format!("label column {i} out of range (width {width})")));
            }
            Some(*i)
        }
        Some(LabelColumn::Name(name)) => {
            let h = header.ok_or_else(|| invalid("label column by name requires a header"))?;
            Some(
                h.iter()
                    .position(|c| c == name)
                    .ok_or_else(|| invalid(format!("no column named {name:?}")))?,
            )
        }
    };
    let id_idx = header
        .and_then(|h| h.iter().position(|c| c == "id"))
        .filter(|&i| Some(i) != label_idx);

    let numeric: Vec<usize> = (0..width)
        .filter(|c| Some(*c) != label_idx && Some(*c) != id_idx)
        .collect();
    if numeric.is_empty() {
        return Err(invalid("csv has no numeric columns"));
    }

    let row_offset = usize::from(first_is_header);
    let mut points = Vec::with_capacity(body.len() * numeric.len());
    let mut raw_labels = Vec::new();
    let mut ids = Vec::new();
    for (r, rec) in body.iter().enumerate() {
        let row = r + row_offset;
        if rec.len() != width {
            return Err(Error::Ragged {
                row,
                expected: width,
                found: rec.len(),
            });
        }
        for &c in &numeric {
            let cell = &rec[c];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c,
                message: format!("cannot parse {cell:?} as a real"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            points.push(v);
        }
        if let Some(l) = label_idx {
            raw_labels.push(rec[l].to_string());
        }
        match id_idx {
            Some(i) => ids.push(rec[i].to_string()),
            None => ids.push(r.to_string()),
        }
    }
    if body.len() < 2 {
        return Err(invalid(format!("need at least 2 samples, found {}", body.len())));
    }
    let labels = label_idx.map(|_| densify_labels(&raw_labels));
    Dataset::new(points, numeric.len(), labels, Some(ids))
}

/// Maps arbitrary label strings to `0..C` in first-appearance order.
pub fn densify_labels<S: AsRef<str>>(raw: &[S]) -> Vec<usize> {
    let mut map: HashMap<&str, usize> = HashMap::new();
    raw.iter()
        .map(|s| {
            let next = map.len();
            *map.entry(s.as_ref()).or_insert(next)
        })
        .collect()
}

/// Isotropic unit-variance Gaussian clusters, one per class.
///
/// Centers sit on scaled coordinate axes (pairwise distance exactly
/// `separation`) while `n_classes <= dim`; beyond that, extra centers are
/// placed by seeded rejection sampling.
pub fn make_blobs(
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || n_classes == 0 || dim == 0 {
        return Err(invalid("make_blobs counts must be >= 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(invalid("make_blobs separation must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = blob_centers(n_classes, dim, separation, &mut rng);
    let mut points = Vec::with_capacity(n_per_class * n_classes * dim);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &x in center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                points.push(x + noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(points, dim, Some(labels), None)
}

/// Class centers used by [`make_blobs`] for the given arguments.
pub fn blob_centers(
    n_classes: usize,
    dim: usize,
    separation: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let axis = separation / std::f64::consts::SQRT_2;
    let mut centers: Vec<Vec<f64>> = (0..n_classes.min(dim))
        .map(|c| {
            let mut v = vec![0.0; dim];
            v[c] = axis;
            v
        })
        .collect();
    let mut scale = separation * (n_classes as f64).sqrt();
    let mut attempts = 0usize;
    while centers.len() < n_classes {
        let cand: Vec<f64> = (0..dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                g * scale
            })
            .collect();
        let ok = centers.iter().all(|c| {
            c.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                >= separation * separation
        });
        if ok {
            centers.push(cand);
        } else {
            attempts += 1;
            if attempts % 100 == 0 {
                scale *= 1.5;
            }
        }
    }
    centers
}

/// Two interleaving half-circles in 2-D; class 0 is the upper unit half-circle.
pub fn make_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(invalid("make_moons needs n >= 2"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid("make_moons noise must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let angle = |k: usize, count: usize| {
        if count <= 1 {
            0.0
        } else {
            std::f64::consts::PI * k as f64 / (count - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n_outer {
        let t = angle(k, n_outer);
        points.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for k in 0..n_inner {
        let t = angle(k, n_inner);
        points.extend([1.0 - t.cos(), 1.0 - t.sin() - 0.5]);
        labels.push(1);
    }
    if noise > 0.0 {
        let dist = Normal::new(0.0, noise).map_err(|e| invalid(e.to_string()))?;
        for p in points.iter_mut() {
            *p += dist.sample(&mut rng);
        }
    }
    Dataset::new(points, 2, Some(labels), None)
}

/// `N × d` embedding coordinates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    coords: Vec<f64>,
    n: usize,
    dim: usize,
}

impl Embedding {
    pub fn new(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("embedding dimension must be at least 1"));
        }
        if coords.len() % dim != 0 {
            return Err(invalid("embedding coordinates do not form whole rows"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(invalid("embedding coordinates must be finite"));
        }
        Ok(Self {
            n: coords.len() / dim,
            coords,
            dim,
        })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            coords: vec![0.0; n * dim],
            n,
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|v| v.is_finite())
    }

    /// Writes `id,z1..zd[,label]`.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        ids: &[String],
        labels: Option<&[usize]>,
    ) -> Result<()> {
        if ids.len() != self.n {
            return Err(invalid("id count does not match embedding rows"));
        }
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.dim).map(|c| format!("z{c}")));
        if labels.is_some() {
            header.push("label".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n {
            let mut line = ids[i].clone();
            for v in self.row(i) {
                line.push(',');
                line.push_str(&format_real(*v));
            }
            if let Some(l) = labels {
                line.push(',');
                line.push_str(&l[i].to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}
