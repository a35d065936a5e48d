//! Finite element spaces with optional metrics.
//!
//! A [`Space`] is an ordered finite set of elements addressed by index
//! `0..len()`. Depending on its kind it may carry a metric (possibly with
//! infinite values) and structured coordinates used by correspondences,
//! group actions, and weight extraction. Spaces are immutable after
//! construction and always handled through [`SpaceRef`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type SpaceRef = Arc<Space>;

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceKind {
    /// Abstract finite set X(n); no metric.
    Set { n: usize },
    /// Integer interval [start, start+len); metric |a-b|.
    Line { start: i64, len: usize },
    /// Integer grid, row-major element order, L-infinity metric.
    /// `wrap` makes both axes cyclic (used for quotient models where a
    /// translation action is total).
    Grid {
        width: usize,
        height: usize,
        origin: (i64, i64),
        wrap: bool,
    },
    /// n-th roots of unity under the chordal metric; optionally extended
    /// by a base point `+` at distance xi_n = 2 sin(pi/n) from every root.
    Circle { n: usize, pointed: bool },
    /// Ordered-pair product, left factor major; metric is the max of the
    /// factor metrics when both are present.
    Product { left: SpaceRef, right: SpaceRef },
    /// Subset of a parent space (strictly ascending indices), inheriting
    /// labels and metric.
    Subset { parent: SpaceRef, keep: Vec<u32> },
    /// Explicit symmetric distance table, row-major n x n.
    Table { n: usize, dists: Arc<Vec<f64>> },
}

#[derive(Debug, PartialEq)]
pub struct Space {
    kind: SpaceKind,
    len: usize,
}

/// Structured identity of a single element, used by group actions and
/// feature extraction. Product elements decompose into factor elements.
#[derive(Debug, Clone, PartialEq)]
pub enum Elem {
    Point(usize),
    Int(i64),
    Cell { x: i64, y: i64 },
    Root(usize),
    BasePoint,
}

impl Space {
    fn new(kind: SpaceKind) -> Space {
        let len = match &kind {
            SpaceKind::Set { n } => *n,
            SpaceKind::Line { len, .. } => *len,
            SpaceKind::Grid { width, height, .. } => width * height,
            SpaceKind::Circle { n, pointed } => n + usize::from(*pointed),
            SpaceKind::Product { left, right } => left.len() * right.len(),
            SpaceKind::Subset { keep, .. } => keep.len(),
            SpaceKind::Table { n, .. } => *n,
        };
        Space { kind, len }
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn has_metric(&self) -> bool {
        match &self.kind {
            SpaceKind::Set { .. } => false,
            SpaceKind::Line { .. }
            | SpaceKind::Grid { .. }
            | SpaceKind::Circle { .. }
            | SpaceKind::Table { .. } => true,
            SpaceKind::Product { left, right } => left.has_metric() && right.has_metric(),
            SpaceKind::Subset { parent, .. } => parent.has_metric(),
        }
    }

    /// Distance between elements `i` and `j`, or `None` when the space has
    /// no metric. Infinite values are permitted.
    pub fn dist(&self, i: usize, j: usize) -> Option<f64> {
        debug_assert!(i < self.len && j < self.len);
        match &self.kind {
            SpaceKind::Set { .. } => None,
            SpaceKind::Line { .. } => Some((i as i64 - j as i64).abs() as f64),
            SpaceKind::Grid {
                width,
                height,
                wrap,
                ..
            } => {
                let (ri, ci) = ((i / width) as i64, (i % width) as i64);
                let (rj, cj) = ((j / width) as i64, (j % width) as i64);
                let dr = axis_dist(ri, rj, *height as i64, *wrap);
                let dc = axis_dist(ci, cj, *width as i64, *wrap);
                Some(dr.max(dc) as f64)
            }
            SpaceKind::Circle { n, pointed } => Some(circle_dist(*n, *pointed, i, j)),
            SpaceKind::Product { left, right } => {
                let r = right.len();
                let a = left.dist(i / r, j / r)?;
                let b = right.dist(i % r, j % r)?;
                Some(a.max(b))
            }
            SpaceKind::Subset { parent, keep } => {
                parent.dist(keep[i] as usize, keep[j] as usize)
            }
            SpaceKind::Table { n, dists } => Some(dists[i * n + j]),
        }
    }

    /// Human-readable label of element `i`.
    pub fn label(&self, i: usize) -> String {
        match &self.kind {
            SpaceKind::Set { .. } => format!("{i}"),
            SpaceKind::Line { start, .. } => format!("{}", start + i as i64),
            SpaceKind::Grid { width, origin, .. } => {
                let (row, col) = (i / width, i % width);
                format!("({},{})", origin.0 + col as i64, origin.1 + row as i64)
            }
            SpaceKind::Circle { n, .. } => {
                if i == *n {
                    "+".to_string()
                } else {
                    format!("z{i}")
                }
            }
            SpaceKind::Product { left, right } => {
                let r = right.len();
                format!("({},{})", left.label(i / r), right.label(i % r))
            }
            SpaceKind::Subset { parent, keep } => parent.label(keep[i] as usize),
            SpaceKind::Table { .. } => format!("p{i}"),
        }
    }

    /// Structured element identity for atomic (non-product) spaces.
    pub fn elem(&self, i: usize) -> Elem {
        match &self.kind {
            SpaceKind::Set { .. } | SpaceKind::Table { .. } => Elem::Point(i),
            SpaceKind::Line { start, .. } => Elem::Int(start + i as i64),
            SpaceKind::Grid { width, origin, .. } => Elem::Cell {
                x: origin.0 + (i % width) as i64,
                y: origin.1 + (i / width) as i64,
            },
            SpaceKind::Circle { n, .. } => {
                if i == *n {
                    Elem::BasePoint
                } else {
                    Elem::Root(i)
                }
            }
            SpaceKind::Product { .. } | SpaceKind::Subset { .. } => Elem::Point(i),
        }
    }

    /// Grid coordinates (x, y) of element `i` when this is a grid.
    pub fn grid_coords(&self, i: usize) -> Option<(i64, i64)> {
        match &self.kind {
            SpaceKind::Grid { width, origin, .. } => Some((
                origin.0 + (i % width) as i64,
                origin.1 + (i / width) as i64,
            )),
            _ => None,
        }
    }

    /// Index of the grid element at (x, y), if inside the window.
    pub fn grid_index(&self, x: i64, y: i64) -> Option<usize> {
        match &self.kind {
            SpaceKind::Grid {
                width,
                height,
                origin,
                wrap,
            } => {
                let (mut cx, mut cy) = (x - origin.0, y - origin.1);
                if *wrap {
                    cx = cx.rem_euclid(*width as i64);
                    cy = cy.rem_euclid(*height as i64);
                }
                if cx < 0 || cy < 0 || cx >= *width as i64 || cy >= *height as i64 {
                    None
                } else {
                    Some(cy as usize * width + cx as usize)
                }
            }
            _ => None,
        }
    }

    pub fn line_value(&self, i: usize) -> Option<i64> {
        match &self.kind {
            SpaceKind::Line { start, .. } => Some(start + i as i64),
            _ => None,
        }
    }

    pub fn line_index(&self, v: i64) -> Option<usize> {
        match &self.kind {
            SpaceKind::Line { start, len } => {
                let off = v - start;
                if off >= 0 && (off as usize) < *len {
                    Some(off as usize)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// (order, pointed) when this is a circle space.
    pub fn circle_order(&self) -> Option<(usize, bool)> {
        match &self.kind {
            SpaceKind::Circle { n, pointed } => Some((*n, *pointed)),
            _ => None,
        }
    }

    /// Flattened list of atomic factors (products expanded, left major).
    /// Atomic spaces return a single-element list.
    pub fn factors(self: &SpaceRef) -> Vec<SpaceRef> {
        match &self.kind {
            SpaceKind::Product { left, right } => {
                let mut f = left.factors();
                f.extend(right.factors());
                f
            }
            _ => vec![self.clone()],
        }
    }

    /// Decompose an element index into per-factor digits (mixed radix,
    /// first factor major), matching the order of [`Space::factors`].
    pub fn split_index(&self, mut i: usize, sizes: &[usize]) -> Vec<usize> {
        let mut digits = vec![0usize; sizes.len()];
        for (d, &s) in digits.iter_mut().zip(sizes).rev() {
            *d = i % s;
            i /= s;
        }
        digits
    }

    /// Recombine per-factor digits into an element index.
    pub fn join_index(digits: &[usize], sizes: &[usize]) -> usize {
        digits
            .iter()
            .zip(sizes)
            .fold(0usize, |acc, (&d, &s)| acc * s + d)
    }

    /// Original-space indices when this is a subset; `None` otherwise.
    pub fn subset_keep(&self) -> Option<&[u32]> {
        match &self.kind {
            SpaceKind::Subset { keep, .. } => Some(keep),
            _ => None,
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SpaceKind::Set { n } => write!(f, "X({n})"),
            SpaceKind::Line { start, len } => {
                write!(f, "[{},{}]", start, start + *len as i64 - 1)
            }
            SpaceKind::Grid {
                width,
                height,
                wrap,
                ..
            } => {
                if *wrap {
                    write!(f, "T({width}x{height})")
                } else {
                    write!(f, "G({width}x{height})")
                }
            }
            SpaceKind::Circle { n, pointed } => {
                if *pointed {
                    write!(f, "mu({n})+")
                } else {
                    write!(f, "mu({n})")
                }
            }
            SpaceKind::Product { left, right } => write!(f, "{left}x{right}"),
            SpaceKind::Subset { parent, keep } => {
                write!(f, "{parent}|{}", keep.len())
            }
            SpaceKind::Table { n, .. } => write!(f, "M({n})"),
        }
    }
}

fn axis_dist(a: i64, b: i64, n: i64, wrap: bool) -> i64 {
    let d = (a - b).abs();
    if wrap {
        d.min(n - d)
    } else {
        d
    }
}

fn circle_dist(n: usize, pointed: bool, i: usize, j: usize) -> f64 {
    let xi = 2.0 * (std::f64::consts::PI / n as f64).sin();
    let base = n; // index of `+` when pointed
    if pointed && (i == base || j == base) {
        if i == j {
            return 0.0;
        }
        return xi;
    }
    let chord = {
        // normalize to the shorter way around so equal-step pairs get
        // bit-identical distances
        let k = (i as i64 - j as i64).unsigned_abs().min((n as u64) - (i as i64 - j as i64).unsigned_abs());
        2.0 * (std::f64::consts::PI * k as f64 / n as f64).sin()
    };
    if pointed {
        // The base point forces d(a,b) <= d(a,+) + d(+,b) = 2 xi; the
        // truncated chordal metric keeps all metric axioms.
        chord.min(2.0 * xi)
    } else {
        chord
    }
}

/// Abstract finite set X(n).
pub fn make_set(n: usize) -> Result<SpaceRef> {
    if n == 0 {
        return Err(Error::InvalidSpace("set must have at least 1 element".into()));
    }
    Ok(Arc::new(Space::new(SpaceKind::Set { n })))
}

/// Integer interval [start, start+len).
pub fn make_line(start: i64, len: usize) -> Result<SpaceRef> {
    if len == 0 {
        return Err(Error::InvalidSpace("interval must be nonempty".into()));
    }
    Ok(Arc::new(Space::new(SpaceKind::Line { start, len })))
}

/// width x height grid at origin (0,0) with the L-infinity metric.
pub fn make_grid(width: usize, height: usize) -> Result<SpaceRef> {
    make_grid_at(width, height, (0, 0))
}

/// Grid window with an explicit origin offset.
pub fn make_grid_at(width: usize, height: usize, origin: (i64, i64)) -> Result<SpaceRef> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidSpace(format!(
            "grid dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(Arc::new(Space::new(SpaceKind::Grid {
        width,
        height,
        origin,
        wrap: false,
    })))
}

/// Grid with cyclic axes. Integer translations act totally and freely on
/// it, so it serves as a finite stand-in for the full-plane model.
pub fn make_torus(width: usize, height: usize) -> Result<SpaceRef> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidSpace(format!(
            "torus dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(Arc::new(Space::new(SpaceKind::Grid {
        width,
        height,
        origin: (0, 0),
        wrap: true,
    })))
}

/// n-th roots of unity, optionally with the extra base point `+`.
pub fn make_circle(n: usize, pointed: bool) -> Result<SpaceRef> {
    if n < 2 {
        return Err(Error::InvalidSpace(format!(
            "circle order must be at least 2, got {n}"
        )));
    }
    Ok(Arc::new(Space::new(SpaceKind::Circle { n, pointed })))
}

/// Ordered-pair product; metric is the max of coordinate distances when
/// both factors carry one.
pub fn product_space(a: &SpaceRef, b: &SpaceRef) -> SpaceRef {
    Arc::new(Space::new(SpaceKind::Product {
        left: a.clone(),
        right: b.clone(),
    }))
}

/// Subset of `parent` given by strictly ascending element indices.
pub fn subset_space(parent: &SpaceRef, keep: Vec<u32>) -> Result<SpaceRef> {
    if keep.is_empty() {
        return Err(Error::InvalidSpace("subset must be nonempty".into()));
    }
    for w in keep.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidSpace(
                "subset indices must be strictly ascending".into(),
            ));
        }
    }
    if *keep.last().unwrap() as usize >= parent.len() {
        return Err(Error::InvalidSpace("subset index out of range".into()));
    }
    Ok(Arc::new(Space::new(SpaceKind::Subset {
        parent: parent.clone(),
        keep,
    })))
}

/// Metric space from an explicit symmetric distance table (row-major).
pub fn table_space(n: usize, dists: Vec<f64>) -> Result<SpaceRef> {
    if n == 0 {
        return Err(Error::InvalidSpace("table space must be nonempty".into()));
    }
    if dists.len() != n * n {
        return Err(Error::InvalidSpace(format!(
            "distance table must have {} entries, got {}",
            n * n,
            dists.len()
        )));
    }
    Ok(Arc::new(Space::new(SpaceKind::Table {
        n,
        dists: Arc::new(dists),
    })))
}

/// Metric space of points under the Euclidean distance.
pub fn space_from_points(points: &[Vec<f64>]) -> Result<SpaceRef> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    let dim = points[0].len();
    let mut dists = vec![0.0; n * n];
    for i in 0..n {
        if points[i].len() != dim {
            return Err(Error::InvalidSpace("points must share a dimension".into()));
        }
        for j in (i + 1)..n {
            let d = euclidean(&points[i], &points[j]);
            dists[i * n + j] = d;
            dists[j * n + i] = d;
        }
    }
    table_space(n, dists)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
