//! Discretized type spaces and outcome spaces.

use crate::error::{Error, Result};

/// Tolerance on the total probability mass of a type space.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One axis of a regular grid: `nodes` equally spaced points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Invalid("an axis needs at least one node".into()));
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Invalid(format!("axis bounds must be finite, got [{lo}, {hi}]")));
        }
        if nodes > 1 && lo >= hi {
            return Err(Error::Invalid(format!("axis bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, nodes })
    }

    pub fn spacing(&self) -> f64 {
        if self.nodes > 1 {
            (self.hi - self.lo) / (self.nodes - 1) as f64
        } else {
            0.0
        }
    }

    pub fn coord(&self, k: usize) -> f64 {
        if k + 1 == self.nodes && self.nodes > 1 {
            self.hi
        } else {
            self.lo + k as f64 * self.spacing()
        }
    }
}

/// A finite type space `V ⊂ R^d` with probability weights.
///
/// Points are stored row-major (the last axis varies fastest) when the space
/// is a regular grid. Arbitrary point clouds are supported for analyses that
/// do not need grid structure (the oracle and the characterizer).
#[derive(Debug, Clone, PartialEq)]
pub struct TypeSpace {
    dim: usize,
    axes: Option<Vec<Axis>>,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TypeSpace {
    /// Regular grid with uniform weights.
    pub fn regular(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Invalid("type space dimension must be at least 1".into()));
        }
        let dim = axes.len();
        let n: usize = axes.iter().map(|a| a.nodes).product();
        let mut points = Vec::with_capacity(n * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..n {
            points.extend(idx.iter().zip(&axes).map(|(&k, a)| a.coord(k)));
            for axis in (0..dim).rev() {
                idx[axis] += 1;
                if idx[axis] < axes[axis].nodes {
                    break;
                }
                idx[axis] = 0;
            }
        }
        let weights = vec![1.0 / n as f64; n];
        Ok(Self {
            dim,
            axes: Some(axes),
            points,
            weights,
        })
    }

    /// Convenience: a 1-D grid of `nodes` points on `[lo, hi]`.
    pub fn line(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        Self::regular(vec![Axis::new(lo, hi, nodes)?])
    }

    /// An unstructured point cloud. `points` holds one vector per type.
    pub fn from_points(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Invalid("type space needs at least one point of dimension >= 1".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "type point",
                expected: dim,
                found: p.len(),
            });
        }
        let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("type points must be distinct".into()));
        }
        let n = sorted.len();
        let space = Self {
            dim,
            axes: None,
            points: points.into_iter().flatten().collect(),
            weights: vec![0.0; n],
        };
        space.with_weights(weights)
    }

    /// Replaces the weights, checking non-negativity and unit mass.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "type weights",
                expected: self.len(),
                found: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Invalid(format!("weights must be non-negative, found {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Invalid(format!(
                "weights must sum to 1 within {WEIGHT_SUM_TOL:e} (got {total})"
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Weights proportional to a density sampled at the nodes.
    pub fn with_density(self, density: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let raw: Vec<f64> = (0..self.len()).map(|i| density(self.point(i))).collect();
        if let Some(w) = raw.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Invalid(format!("density must be non-negative and finite, found {w}")));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid("density integrates to zero on the grid".into()));
        }
        let weights = raw.iter().map(|w| w / total).collect();
        self.with_weights(weights)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn axes(&self) -> Option<&[Axis]> {
        self.axes.as_deref()
    }

    pub fn is_regular(&self) -> bool {
        self.axes.is_some()
    }

    /// Per-axis `[lo, hi]` bounds (the bounding box for point clouds).
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match &self.axes {
            Some(axes) => axes.iter().map(|a| (a.lo, a.hi)).collect(),
            None => (0..self.dim)
                .map(|k| {
                    self.points().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        (lo.min(p[k]), hi.max(p[k]))
                    })
                })
                .collect(),
        }
    }

    pub fn spacing(&self) -> Option<Vec<f64>> {
        self.axes.as_ref().map(|axes| axes.iter().map(Axis::spacing).collect())
    }

    pub fn shape(&self) -> Option<Vec<usize>> {
        self.axes.as_ref().map(|axes| axes.iter().map(|a| a.nodes).collect())
    }

    fn strides(axes: &[Axis]) -> Vec<usize> {
        let mut strides = vec![1usize; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].nodes;
        }
        strides
    }

    /// Grid multi-index of node `i` (regular grids only).
    pub fn multi_index(&self, i: usize) -> Option<Vec<usize>> {
        let axes = self.axes.as_ref()?;
        let strides = Self::strides(axes);
        Some(strides.iter().zip(axes).map(|(s, a)| (i / s) % a.nodes).collect())
    }

    pub fn flat_index(&self, idx: &[usize]) -> Option<usize> {
        let axes = self.axes.as_ref()?;
        if idx.len() != axes.len() || idx.iter().zip(axes).any(|(&k, a)| k >= a.nodes) {
            return None;
        }
        Some(idx.iter().zip(Self::strides(axes)).map(|(k, s)| k * s).sum())
    }

    /// Neighbor of node `i` shifted by `delta` along `axis`, if it exists.
    pub fn neighbor(&self, i: usize, axis: usize, delta: isize) -> Option<usize> {
        let mut idx = self.multi_index(i)?;
        let k = idx[axis] as isize + delta;
        if k < 0 {
            return None;
        }
        idx[axis] = k as usize;
        self.flat_index(&idx)
    }

    /// Interior nodes have both neighbors along every axis with more than one node.
    pub fn is_interior(&self, i: usize) -> bool {
        match (self.multi_index(i), &self.axes) {
            (Some(idx), Some(axes)) => idx
                .iter()
                .zip(axes)
                .all(|(&k, a)| a.nodes > 1 && k > 0 && k + 1 < a.nodes),
            _ => false,
        }
    }

    pub fn interior(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_interior(i)).collect()
    }

    /// Index of the node equal to `v` (within `tol` in sup-norm).
    pub fn find(&self, v: &[f64], tol: f64) -> Option<usize> {
        self.points()
            .position(|p| p.iter().zip(v).all(|(a, b)| (a - b).abs() <= tol))
    }

    /// Multilinear interpolation stencil for an arbitrary point on a regular grid:
    /// a list of `(node, weight)` pairs. Points outside the box are clamped.
    pub fn stencil(&self, v: &[f64]) -> Option<Vec<(usize, f64)>> {
        let axes = self.axes.as_ref()?;
        let mut lower = Vec::with_capacity(axes.len());
        let mut frac = Vec::with_capacity(axes.len());
        for (a, &x) in axes.iter().zip(v) {
            if a.nodes == 1 {
                lower.push(0usize);
                frac.push(0.0);
                continue;
            }
            let t = ((x - a.lo) / a.spacing()).clamp(0.0, (a.nodes - 1) as f64);
            let k = (t.floor() as usize).min(a.nodes - 2);
            lower.push(k);
            frac.push(t - k as f64);
        }
        let mut out = Vec::with_capacity(1 << axes.len());
        for corner in 0..(1usize << axes.len()) {
            let mut idx = lower.clone();
            let mut w = 1.0;
            for k in 0..axes.len() {
                let up = corner >> k & 1 == 1;
                if up {
                    if axes[k].nodes == 1 {
                        w = 0.0;
                        break;
                    }
                    idx[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                out.push((self.flat_index(&idx)?, w));
            }
        }
        Some(out)
    }

    /// The same types reordered so that new node `k` is old node `perm[k]`.
    /// The result is an unstructured point cloud.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "permutation",
                expected: self.len(),
                found: perm.len(),
            });
        }
        let points = perm.iter().map(|&i| self.point(i).to_vec()).collect();
        let weights = perm.iter().map(|&i| self.weights[i]).collect();
        Self::from_points(points, weights)
    }
}

/// The outcome space `Q ⊂ R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeSpace {
    pub dim: usize,
    pub description: String,
    pub bounds: Vec<(f64, f64)>,
}

impl OutcomeSpace {
    pub fn new(description: impl Into<String>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Invalid("outcome dimension must be at least 1".into()));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Invalid(format!("outcome bounds must satisfy lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Self {
            dim: bounds.len(),
            description: description.into(),
            bounds,
        })
    }

    /// Allocation probabilities for `dim` items.
    pub fn unit_cube(dim: usize) -> Result<Self> {
        Self::new("allocation probabilities", vec![(0.0, 1.0); dim])
    }

    pub fn contains(&self, q: &[f64], tol: f64) -> bool {
        q.len() == self.dim
            && q.iter()
                .zip(&self.bounds)
                .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol)
    }
}
