//! Snippet graphs: feature-similarity and temporal-consistency adjacencies and
//! the self-loop renormalization applied before every graph layer.
//!
//! All matrices are dense; a video has at most a few thousand snippets.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument;

/// Snippet features of one video, one row per snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::validation(format!(
                "feature matrix must be at least 1x1, got {n}x{d}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self(data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::validation("ragged feature rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat).map_err(|e| Error::validation(e.to_string()))?;
        Self::new(data)
    }

    pub fn n_snippets(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyKind {
    FeatureSimilarity,
    TemporalConsistency,
    Constant,
    /// Caller-supplied matrix.
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    data: Array2<f64>,
    kind: AdjacencyKind,
}

impl Adjacency {
    /// Wraps an arbitrary square, finite, non-negative matrix.
    pub fn from_matrix(data: Array2<f64>) -> Result<Self> {
        check_square_nonnegative(&data)?;
        Ok(Self {
            data,
            kind: AdjacencyKind::Custom,
        })
    }

    pub fn kind(&self) -> AdjacencyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..i).all(|j| self.data[[i, j]] == self.data[[j, i]]))
    }

    /// Average with the transpose. The result keeps the original kind.
    pub fn symmetrized(&self) -> Self {
        let data = (&self.data + &self.data.t()) * 0.5;
        Self { data, kind: self.kind }
    }
}

/// `D^(-1/2) (A + I) D^(-1/2)` with `D` the row sums of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormalizedAdjacency(Array2<f64>);

impl RenormalizedAdjacency {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn identity(n: usize) -> Self {
        Self(Array2::eye(n))
    }
}

/// `A(i,j) = exp(x_i . x_j - max_k x_i . x_k)`.
///
/// Every row attains exactly 1 at its arg-max column. Entries whose exponent
/// underflows are floored at the smallest positive normal double so the
/// matrix stays strictly positive.
pub fn build_feature_similarity(x: &FeatureMatrix) -> Adjacency {
    instrument::record_graph_build();
    let gram = x.0.dot(&x.0.t());
    let mut data = gram;
    for mut row in data.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp().max(f64::MIN_POSITIVE));
    }
    Adjacency {
        data,
        kind: AdjacencyKind::FeatureSimilarity,
    }
}

/// Laplacian kernel on snippet positions: `A(i,j) = exp(-|i - j|)`.
pub fn build_temporal_consistency(n: usize) -> Result<Adjacency> {
    if n == 0 {
        return Err(Error::validation("temporal graph needs at least one snippet"));
    }
    instrument::record_graph_build();
    let kernel: Vec<f64> = (0..n).map(|k| (-(k as f64)).exp().max(f64::MIN_POSITIVE)).collect();
    let data = Array2::from_shape_fn((n, n), |(i, j)| kernel[i.abs_diff(j)]);
    Ok(Adjacency {
        data,
        kind: AdjacencyKind::TemporalConsistency,
    })
}

/// Graph with every edge set to `value`; used to remove graph structure in
/// ablations (0.5 is the midpoint of the kernels' range).
pub fn build_constant(n: usize, value: f64) -> Result<Adjacency> {
    if n == 0 {
        return Err(Error::validation("constant graph needs at least one snippet"));
    }
    if !(value > 0.0 && value <= 1.0) {
        return Err(Error::validation(format!(
            "constant adjacency value must lie in (0, 1], got {value}"
        )));
    }
    instrument::record_graph_build();
    Ok(Adjacency {
        data: Array2::from_elem((n, n), value),
        kind: AdjacencyKind::Constant,
    })
}

pub fn renormalize(a: &Adjacency) -> Result<RenormalizedAdjacency> {
    check_square_nonnegative(&a.data)?;
    let n = a.len();
    let mut tilde = a.data.clone();
    for i in 0..n {
        tilde[[i, i]] += 1.0;
    }
    let degree: Array1<f64> = tilde.sum_axis(Axis(1));
    for ((i, j), v) in tilde.indexed_iter_mut() {
        *v /= (degree[i] * degree[j]).sqrt();
    }
    if tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("renormalized adjacency is not finite"));
    }
    Ok(RenormalizedAdjacency(tilde))
}

fn check_square_nonnegative(data: &Array2<f64>) -> Result<()> {
    let (r, c) = data.dim();
    if r != c {
        return Err(Error::shape("adjacency", format!("{r}x{r}"), format!("{r}x{c}")));
    }
    if r == 0 {
        return Err(Error::validation("adjacency must be non-empty"));
    }
    for ((i, j), &v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::validation(format!("non-finite adjacency entry ({i},{j})")));
        }
        if v < 0.0 {
            return Err(Error::validation(format!("negative adjacency entry {v} at ({i},{j})")));
        }
    }
    Ok(())
}

/// Largest absolute eigenvalue estimate by power iteration.
pub fn spectral_radius(m: &Array2<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64) * 1e-3);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = m.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm / v.dot(&v).sqrt();
        v = w / norm;
    }
    estimate
}
