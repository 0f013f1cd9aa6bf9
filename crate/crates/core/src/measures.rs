//! Discrete probability measures `Σ wᵢ δ_{zᵢ}` on `R^p`.
//!
//! Posterior draws from a subset enter the pipeline as an [`EmpiricalMeasure`].
//! Measures are immutable once built. Zero-weight atoms are kept so that atom
//! indices stay stable through mixing; [`EmpiricalMeasure::pruned`] drops them
//! on request.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of weights that are supposed to be normalized.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Weighted atoms in `R^p`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from atoms and optional unnormalized weights.
    ///
    /// Without weights every atom gets mass `1/N`.
    pub fn new(atoms: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> Result<Self> {
        let dim = atoms.first().ok_or(Error::EmptyMeasure)?.len();
        if dim == 0 {
            return Err(Error::invalid("atoms must have dimension at least 1"));
        }
        let mut coords = Vec::with_capacity(atoms.len() * dim);
        for atom in &atoms {
            if atom.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: atom.len() });
            }
            if let Some(v) = atom.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("atom coordinate {v}")));
            }
            coords.extend_from_slice(atom);
        }
        Self::from_flat(dim, coords, weights)
    }

    /// Uniformly weighted measure on `atoms`.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(atoms, None)
    }

    /// Point mass at `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(vec![x.to_vec()], None)
    }

    /// Builds a measure from a row-major coordinate buffer of `N·dim` values.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("atoms must have dimension at least 1"));
        }
        if coords.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => normalize_weights(w, n)?,
        };
        Ok(Self { dim, coords, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms, including zero-weight ones.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Row-major coordinates of all atoms.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `(atom, weight)` pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.atoms().zip(self.weights.iter().copied())
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (atom, w) in self.iter() {
            for (o, x) in out.iter_mut().zip(atom) {
                *o += w * x;
            }
        }
        out
    }

    /// Same atoms with the weights renormalized to sum to one.
    pub fn renormalized(&self) -> Result<Self> {
        Self::from_flat(self.dim, self.coords.clone(), Some(self.weights.clone()))
    }

    /// Copy without the zero-weight atoms.
    pub fn pruned(&self) -> Self {
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (atom, w) in self.iter() {
            if w > 0.0 {
                coords.extend_from_slice(atom);
                weights.push(w);
            }
        }
        // A valid measure always has positive total mass, so something survives.
        Self { dim: self.dim, coords, weights }
    }

    /// Projection onto coordinate `k`, as a one-dimensional measure with the
    /// same weights.
    pub fn marginal(&self, k: usize) -> Result<Self> {
        if k >= self.dim {
            return Err(Error::invalid(format!("coordinate {k} out of range for dimension {}", self.dim)));
        }
        let coords = self.atoms().map(|a| a[k]).collect();
        Ok(Self { dim: 1, coords, weights: self.weights.clone() })
    }

    /// Left-continuous inverse of the weighted CDF of a one-dimensional
    /// measure: the smallest atom whose cumulative weight reaches `q`.
    pub fn weighted_quantile(&self, q: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: self.dim });
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.coords[a].total_cmp(&self.coords[b]));
        Ok(quantile_sorted(&order, &self.coords, &self.weights, q))
    }

    /// Several quantiles of a one-dimensional measure with a single sort.
    pub fn weighted_quantiles(&self, levels: &[f64]) -> Result<Vec<f64>> {
        if self.dim != 1 {
            return Err(Error::DimensionMismatch { expected: 1, found: self.dim });
        }
        if let Some(q) = levels.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.coords[a].total_cmp(&self.coords[b]));
        Ok(levels.iter().map(|&q| quantile_sorted(&order, &self.coords, &self.weights, q)).collect())
    }

    /// Reads a draw file: CSV with header `w,x1,..,xp`, or JSON
    /// `{"atoms": [[..]], "weights": [..]}` when the extension is `.json`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            let file = std::fs::File::open(path)?;
            let raw: DrawFile = serde_json::from_reader(std::io::BufReader::new(file))?;
            return raw.try_into();
        }
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn read_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "w" {
            return Err(Error::invalid("draw CSV header must be `w,x1,..,xp`"));
        }
        let dim = headers.len() - 1;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != dim + 1 {
                return Err(Error::DimensionMismatch { expected: dim + 1, found: record.len() });
            }
            let mut values = record.iter().map(|f| {
                f.parse::<f64>().map_err(|e| Error::invalid(format!("bad number `{f}`: {e}")))
            });
            weights.push(values.next().unwrap()?);
            for v in values {
                let v = v?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("atom coordinate {v}")));
                }
                coords.push(v);
            }
        }
        Self::from_flat(dim, coords, Some(weights))
    }

    /// Writes the measure to `path`, as JSON for a `.json` extension and CSV otherwise.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            let file = std::fs::File::create(path)?;
            serde_json::to_writer(std::io::BufWriter::new(file), &DrawFile::from(self))?;
            return Ok(());
        }
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<String> =
            std::iter::once("w".to_string()).chain((1..=self.dim).map(|k| format!("x{k}"))).collect();
        wtr.write_record(&header)?;
        for (atom, w) in self.iter() {
            let row: Vec<String> = std::iter::once(w).chain(atom.iter().copied()).map(|v| v.to_string()).collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn quantile_sorted(order: &[usize], coords: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut cum = 0.0;
    for &i in order {
        cum += weights[i];
        // Zero-weight atoms never become a quantile on their own; the
        // tolerance absorbs roundoff in the running sum.
        if weights[i] > 0.0 && cum >= q - MASS_TOLERANCE {
            return coords[i];
        }
    }
    // q = 1 with roundoff short of one: the largest atom carrying mass.
    let last = order.iter().rev().find(|&&i| weights[i] > 0.0).copied().unwrap_or(order[order.len() - 1]);
    coords[last]
}

fn normalize_weights(w: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::invalid(format!("{} weights for {n} atoms", w.len())));
    }
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidWeight { index, value });
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Mixture `Σⱼ αⱼ Qⱼ`: atoms concatenated in input order, each weight scaled
/// by the mixing weight of its source measure. Zero mixing weights keep
/// their atoms with zero mass.
pub fn mixture(measures: &[EmpiricalMeasure], mix_weights: &[f64]) -> Result<EmpiricalMeasure> {
    let first = measures.first().ok_or(Error::EmptyMeasure)?;
    if measures.len() != mix_weights.len() {
        return Err(Error::invalid(format!(
            "{} mixing weights for {} measures",
            mix_weights.len(),
            measures.len()
        )));
    }
    validate_simplex(mix_weights, 1e-9)?;
    let dim = first.dim;
    let total: usize = measures.iter().map(EmpiricalMeasure::len).sum();
    let mut coords = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    for (q, &alpha) in measures.iter().zip(mix_weights) {
        if q.dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: q.dim });
        }
        coords.extend_from_slice(&q.coords);
        weights.extend(q.weights.iter().map(|w| alpha * w));
    }
    // Absorb the (≤ 1e-9) slack of the mixing weights.
    let mass: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= mass);
    Ok(EmpiricalMeasure { dim, coords, weights })
}

/// Checks that `w` is a probability vector up to `tol` on its total mass.
pub fn validate_simplex(w: &[f64], tol: f64) -> Result<()> {
    if w.is_empty() {
        return Err(Error::invalid("empty weight vector"));
    }
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidWeight { index, value });
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::invalid(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DrawFile {
    atoms: Vec<Vec<f64>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

impl From<&EmpiricalMeasure> for DrawFile {
    fn from(m: &EmpiricalMeasure) -> Self {
        DrawFile { atoms: m.atoms().map(<[f64]>::to_vec).collect(), weights: Some(m.weights.clone()) }
    }
}

impl TryFrom<DrawFile> for EmpiricalMeasure {
    type Error = Error;

    fn try_from(raw: DrawFile) -> Result<Self> {
        EmpiricalMeasure::new(raw.atoms, raw.weights)
    }
}
