//! Correspondences: relations between finite spaces.
//!
//! A correspondence from X to Y is a subset of X x Y. Relations are stored
//! explicitly with both forward and inverse adjacency so that C(x) and
//! C^{-1}(y) are O(1) slices. The construction kind is kept as metadata so
//! realized layers can be classified structurally.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::space::{product_space, SpaceRef};

/// How a correspondence was built; drives layer classification and is
/// preserved through products.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrKind {
    Complete,
    Functional,
    Identity,
    Metric { r: f64 },
    /// 1-D pooling: (y, x) related iff y in [stride*x + m, stride*x + n].
    Pooling { m: i64, n: i64, stride: i64 },
    /// Grid pooling, the same interval rule applied to both axes.
    Pooling2 { m: i64, n: i64, stride: i64 },
    /// Circle pooling mu_{m*n} -> mu_n by exponent division.
    AngularPooling { m: usize },
    Graph,
    Product(Box<CorrKind>, Box<CorrKind>),
    Composite,
    Custom,
}

#[derive(Debug, Clone)]
pub struct Correspondence {
    source: SpaceRef,
    target: SpaceRef,
    // forward adjacency: targets of each source, ascending
    fwd_off: Vec<u32>,
    fwd_dst: Vec<u32>,
    // inverse adjacency: sources of each target, ascending
    inv_off: Vec<u32>,
    inv_src: Vec<u32>,
    kind: CorrKind,
}

impl Correspondence {
    /// Builds from an explicit pair list (duplicates removed).
    pub fn from_pairs(
        source: &SpaceRef,
        target: &SpaceRef,
        mut pairs: Vec<(u32, u32)>,
        kind: CorrKind,
    ) -> Correspondence {
        pairs.sort_unstable();
        pairs.dedup();
        debug_assert!(pairs
            .iter()
            .all(|&(x, y)| (x as usize) < source.len() && (y as usize) < target.len()));

        let ns = source.len();
        let nt = target.len();
        let mut fwd_off = vec![0u32; ns + 1];
        for &(x, _) in &pairs {
            fwd_off[x as usize + 1] += 1;
        }
        for i in 0..ns {
            fwd_off[i + 1] += fwd_off[i];
        }
        let fwd_dst: Vec<u32> = pairs.iter().map(|&(_, y)| y).collect();

        let mut inv_off = vec![0u32; nt + 1];
        for &(_, y) in &pairs {
            inv_off[y as usize + 1] += 1;
        }
        for i in 0..nt {
            inv_off[i + 1] += inv_off[i];
        }
        let mut cursor = inv_off.clone();
        let mut inv_src = vec![0u32; pairs.len()];
        for &(x, y) in &pairs {
            let c = &mut cursor[y as usize];
            inv_src[*c as usize] = x;
            *c += 1;
        }

        Correspondence {
            source: source.clone(),
            target: target.clone(),
            fwd_off,
            fwd_dst,
            inv_off,
            inv_src,
            kind,
        }
    }

    pub fn source(&self) -> &SpaceRef {
        &self.source
    }

    pub fn target(&self) -> &SpaceRef {
        &self.target
    }

    pub fn kind(&self) -> &CorrKind {
        &self.kind
    }

    /// Number of related pairs.
    pub fn size(&self) -> usize {
        self.fwd_dst.len()
    }

    /// C(x): targets related to source `x`, ascending.
    pub fn image(&self, x: usize) -> &[u32] {
        &self.fwd_dst[self.fwd_off[x] as usize..self.fwd_off[x + 1] as usize]
    }

    /// C^{-1}(y): sources related to target `y`, ascending.
    pub fn preimage(&self, y: usize) -> &[u32] {
        &self.inv_src[self.inv_off[y] as usize..self.inv_off[y + 1] as usize]
    }

    pub(crate) fn inv_offsets(&self) -> &[u32] {
        &self.inv_off
    }

    pub(crate) fn inv_sources(&self) -> &[u32] {
        &self.inv_src
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.image(x).binary_search(&(y as u32)).is_ok()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.source.len()).flat_map(move |x| {
            self.image(x).iter().map(move |&y| (x as u32, y))
        })
    }

    /// Every target has a nonempty preimage.
    pub fn is_surjective(&self) -> bool {
        (0..self.target.len()).all(|y| !self.preimage(y).is_empty())
    }

    /// Every source relates to exactly one target.
    pub fn is_functional(&self) -> bool {
        (0..self.source.len()).all(|x| self.image(x).len() == 1)
    }

    /// Line-based text serialization: one `source target` pair per line,
    /// sorted; used for golden-file comparisons.
    pub fn write_pairs<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (x, y) in self.pairs() {
            writeln!(w, "{x} {y}")?;
        }
        Ok(())
    }
}

/// The complete correspondence X x Y.
pub fn complete(x: &SpaceRef, y: &SpaceRef) -> Correspondence {
    let pairs = (0..x.len() as u32)
        .flat_map(|i| (0..y.len() as u32).map(move |j| (i, j)))
        .collect();
    Correspondence::from_pairs(x, y, pairs, CorrKind::Complete)
}

/// The graph of a total map X -> Y; errors if `f` is undefined somewhere.
pub fn functional(
    x: &SpaceRef,
    y: &SpaceRef,
    f: impl Fn(usize) -> Option<usize>,
) -> Result<Correspondence> {
    let mut pairs = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        match f(i) {
            Some(j) if j < y.len() => pairs.push((i as u32, j as u32)),
            Some(j) => {
                return Err(Error::InvalidCorrespondence(format!(
                    "map sends element {i} to out-of-range index {j}"
                )))
            }
            None => {
                return Err(Error::PartialMap {
                    index: i,
                    label: x.label(i),
                })
            }
        }
    }
    Ok(Correspondence::from_pairs(x, y, pairs, CorrKind::Functional))
}

/// The identity correspondence on X.
pub fn identity(x: &SpaceRef) -> Correspondence {
    let pairs = (0..x.len() as u32).map(|i| (i, i)).collect();
    Correspondence::from_pairs(x, x, pairs, CorrKind::Identity)
}

/// Metric correspondence with threshold `r`: C(x) = { x' | d(x,x') <= r }.
pub fn metric_corr(x: &SpaceRef, r: f64) -> Result<Correspondence> {
    if !x.has_metric() {
        return Err(Error::MissingMetric);
    }
    if r < 0.0 {
        return Err(Error::InvalidCorrespondence(format!(
            "metric threshold must be nonnegative, got {r}"
        )));
    }
    let n = x.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if x.dist(i, j).unwrap() <= r {
                pairs.push((i as u32, j as u32));
            }
        }
    }
    Ok(Correspondence::from_pairs(x, x, pairs, CorrKind::Metric { r }))
}

/// Graphical correspondence of an undirected graph on the elements of `v`:
/// (a, b) related iff {a, b} is an edge.
pub fn graph_corr(v: &SpaceRef, edges: &[(usize, usize)]) -> Result<Correspondence> {
    let mut pairs = Vec::with_capacity(edges.len() * 2);
    for &(a, b) in edges {
        if a >= v.len() || b >= v.len() {
            return Err(Error::InvalidCorrespondence(format!(
                "edge ({a},{b}) out of range for {} vertices",
                v.len()
            )));
        }
        pairs.push((a as u32, b as u32));
        pairs.push((b as u32, a as u32));
    }
    Ok(Correspondence::from_pairs(v, v, pairs, CorrKind::Graph))
}

/// 1-D pooling correspondence pi(m,n,N) onto the coarse window
/// [coarse_lo, coarse_hi]. The fine window is [N*coarse_lo + m,
/// N*coarse_hi + n], which makes the correspondence surjective onto the
/// coarse window. Direction: fine -> coarse.
pub fn pooling_corr(m: i64, n: i64, stride: i64, coarse: (i64, i64)) -> Result<Correspondence> {
    check_pooling_params(m, n, stride)?;
    let (a, b) = coarse;
    if a > b {
        return Err(Error::InvalidCorrespondence(format!(
            "empty coarse window [{a},{b}]"
        )));
    }
    let fine = crate::space::make_line(stride * a + m, (stride * (b - a) + n - m + 1) as usize)?;
    let coarse_space = crate::space::make_line(a, (b - a + 1) as usize)?;
    pooling_between(&fine, &coarse_space, m, n, stride)
}

/// 1-D pooling between explicitly given line windows; boundary cells of
/// the coarse window may have truncated preimages.
pub fn pooling_between(
    fine: &SpaceRef,
    coarse: &SpaceRef,
    m: i64,
    n: i64,
    stride: i64,
) -> Result<Correspondence> {
    check_pooling_params(m, n, stride)?;
    let mut pairs = Vec::new();
    for xi in 0..coarse.len() {
        let x = coarse
            .line_value(xi)
            .ok_or_else(|| Error::SpaceMismatch("pooling requires line windows".into()))?;
        for y in (stride * x + m)..=(stride * x + n) {
            if let Some(yi) = fine.line_index(y) {
                pairs.push((yi as u32, xi as u32));
            }
        }
    }
    Ok(Correspondence::from_pairs(
        fine,
        coarse,
        pairs,
        CorrKind::Pooling { m, n, stride },
    ))
}

/// Grid pooling pi^2(m,n,N) between explicitly given grid windows; the
/// interval rule applies to both axes independently.
pub fn pooling2_between(
    fine: &SpaceRef,
    coarse: &SpaceRef,
    m: i64,
    n: i64,
    stride: i64,
) -> Result<Correspondence> {
    check_pooling_params(m, n, stride)?;
    let mut pairs = Vec::new();
    for xi in 0..coarse.len() {
        let (cx, cy) = coarse
            .grid_coords(xi)
            .ok_or_else(|| Error::SpaceMismatch("grid pooling requires grid windows".into()))?;
        for y in (stride * cy + m)..=(stride * cy + n) {
            for x in (stride * cx + m)..=(stride * cx + n) {
                if let Some(yi) = fine.grid_index(x, y) {
                    pairs.push((yi as u32, xi as u32));
                }
            }
        }
    }
    Ok(Correspondence::from_pairs(
        fine,
        coarse,
        pairs,
        CorrKind::Pooling2 { m, n, stride },
    ))
}

fn check_pooling_params(m: i64, n: i64, stride: i64) -> Result<()> {
    if m > n {
        return Err(Error::InvalidCorrespondence(format!(
            "pooling requires m <= n, got m={m}, n={n}"
        )));
    }
    if stride < 1 {
        return Err(Error::InvalidCorrespondence(format!(
            "pooling stride must be positive, got {stride}"
        )));
    }
    Ok(())
}

/// Angular pooling mu_{m*n} -> mu_n sending exponent x to floor(x/m); the
/// pointed variant carries `+` to `+`.
pub fn angular_pooling(m: usize, n: usize, pointed: bool) -> Result<Correspondence> {
    if m < 1 || n < 1 || m * n < 2 || n < 2 {
        return Err(Error::InvalidCorrespondence(format!(
            "angular pooling requires m >= 1 and n >= 2, got m={m}, n={n}"
        )));
    }
    let src = crate::space::make_circle(m * n, pointed)?;
    let tgt = crate::space::make_circle(n, pointed)?;
    let mn = m * n;
    let mut pairs: Vec<(u32, u32)> = (0..mn).map(|x| (x as u32, (x / m) as u32)).collect();
    if pointed {
        pairs.push((mn as u32, n as u32));
    }
    let mut c = Correspondence::from_pairs(&src, &tgt, pairs, CorrKind::AngularPooling { m });
    c.kind = CorrKind::AngularPooling { m };
    Ok(c)
}

/// Composition D o C of C: X -> Y and D: Y -> Z.
pub fn compose(c: &Correspondence, d: &Correspondence) -> Result<Correspondence> {
    if c.target != d.source {
        return Err(Error::SpaceMismatch(format!(
            "cannot compose: target {} differs from source {}",
            c.target, d.source
        )));
    }
    let mut pairs = Vec::new();
    for x in 0..c.source.len() {
        let mut out: Vec<u32> = Vec::new();
        for &y in c.image(x) {
            out.extend_from_slice(d.image(y as usize));
        }
        out.sort_unstable();
        out.dedup();
        pairs.extend(out.into_iter().map(|z| (x as u32, z)));
    }
    Ok(Correspondence::from_pairs(
        &c.source,
        &d.target,
        pairs,
        CorrKind::Composite,
    ))
}

/// Product correspondence C x D over the product spaces.
pub fn product_corr(c: &Correspondence, d: &Correspondence) -> Correspondence {
    let src = product_space(&c.source, &d.source);
    let tgt = product_space(&c.target, &d.target);
    let dsn = d.source.len();
    let dtn = d.target.len();
    let mut pairs = Vec::with_capacity(c.size() * d.size());
    for (cx, cy) in c.pairs() {
        for (dx, dy) in d.pairs() {
            pairs.push((
                cx * dsn as u32 + dx,
                cy * dtn as u32 + dy,
            ));
        }
    }
    Correspondence::from_pairs(
        &src,
        &tgt,
        pairs,
        CorrKind::Product(Box::new(c.kind.clone()), Box::new(d.kind.clone())),
    )
}

/// Leaves of the product-kind tree, left to right.
pub fn kind_leaves(kind: &CorrKind) -> Vec<&CorrKind> {
    match kind {
        CorrKind::Product(a, b) => {
            let mut v = kind_leaves(a);
            v.extend(kind_leaves(b));
            v
        }
        other => vec![other],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{make_circle, make_grid, make_line, make_set};

    #[test]
    fn complete_sizes() {
        let x3 = make_set(3).unwrap();
        let x2 = make_set(2).unwrap();
        assert_eq!(complete(&x3, &x2).size(), 6);
        let x1 = make_set(1).unwrap();
        let x10 = make_set(10).unwrap();
        let c = complete(&x1, &x10);
        assert_eq!(c.image(0).len(), 10);
        assert_eq!(complete(&x1, &x1).size(), 1);
        assert!(c.is_surjective());
    }

    #[test]
    fn functional_cases() {
        let x5 = make_set(5).unwrap();
        let id = functional(&x5, &x5, |i| Some(i)).unwrap();
        assert_eq!(id.size(), 5);
        assert!(id.contains(3, 3) && !id.contains(3, 2));

        let konst = functional(&x5, &x5, |_| Some(2)).unwrap();
        assert_eq!(konst.size(), 5);
        assert_eq!(konst.preimage(2).len(), 5);

        let partial = functional(&x5, &x5, |i| if i == 4 { None } else { Some(i) });
        assert!(matches!(partial, Err(Error::PartialMap { index: 4, .. })));
    }

    #[test]
    fn floor_div_matches_pooling() {
        // pi(0,1,2) restricted to [0,9] equals x -> floor(x/2)
        let fine = make_line(0, 10).unwrap();
        let coarse = make_line(0, 5).unwrap();
        let pool = pooling_between(&fine, &coarse, 0, 1, 2).unwrap();
        let floor_half = functional(&fine, &coarse, |i| Some(i / 2)).unwrap();
        let a: Vec<_> = pool.pairs().collect();
        let b: Vec<_> = floor_half.pairs().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn metric_corr_balls() {
        let g = make_grid(28, 28).unwrap();
        let c = metric_corr(&g, 1.0).unwrap();
        let interior = g.grid_index(10, 10).unwrap();
        assert_eq!(c.image(interior).len(), 9);

        let c0 = metric_corr(&g, 0.0).unwrap();
        assert_eq!(c0.size(), g.len());
        assert!((0..g.len()).all(|i| c0.contains(i, i)));

        let mu16 = make_circle(16, false).unwrap();
        let xi = mu16.dist(0, 1).unwrap();
        let cm = metric_corr(&mu16, xi).unwrap();
        for i in 0..16 {
            assert_eq!(cm.image(i).len(), 3, "node {i}");
        }

        assert!(metric_corr(&make_set(3).unwrap(), 1.0).is_err());
    }

    #[test]
    fn metric_corr_is_symmetric() {
        let g = make_grid(5, 4).unwrap();
        let c = metric_corr(&g, 2.0).unwrap();
        for (x, y) in c.pairs() {
            assert!(c.contains(y as usize, x as usize));
        }
    }

    #[test]
    fn graph_corr_cases() {
        let v = make_set(3).unwrap();
        // path a-b-c
        let c = graph_corr(&v, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(c.image(1), &[0, 2]);

        let empty = graph_corr(&v, &[]).unwrap();
        assert_eq!(empty.size(), 0);

        // complete graph K_4 = complete correspondence minus diagonal
        let v4 = make_set(4).unwrap();
        let mut edges = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                edges.push((i, j));
            }
        }
        let k4 = graph_corr(&v4, &edges).unwrap();
        assert_eq!(k4.size(), 12);
        assert!((0..4).all(|i| !k4.contains(i, i)));
    }

    #[test]
    fn pooling_examples() {
        // pi(0,1,2): 5 -> {2}, 4 -> {2}, 7 -> {3}
        let p = pooling_corr(0, 1, 2, (0, 10)).unwrap();
        let fi = |v: i64| p.source().line_index(v).unwrap();
        let ci = |v: i64| p.target().line_index(v).unwrap() as u32;
        assert_eq!(p.image(fi(5)), &[ci(2)]);
        assert_eq!(p.image(fi(4)), &[ci(2)]);
        assert_eq!(p.image(fi(7)), &[ci(3)]);

        // pi(0,2,2): 4 -> {1,2}
        let p322 = pooling_corr(0, 2, 2, (0, 10)).unwrap();
        let fi = |v: i64| p322.source().line_index(v).unwrap();
        let ci = |v: i64| p322.target().line_index(v).unwrap() as u32;
        assert_eq!(p322.image(fi(4)), &[ci(1), ci(2)]);

        // pi(0,0,1) = identity
        let pid = pooling_corr(0, 0, 1, (0, 7)).unwrap();
        assert!(pid.is_functional());
        assert_eq!(pid.size(), 8);
        for (x, y) in pid.pairs() {
            assert_eq!(x, y);
        }

        assert!(pooling_corr(3, 1, 2, (0, 4)).is_err());
        assert!(pooling_corr(0, 1, 0, (0, 4)).is_err());
    }

    #[test]
    fn pooling_width_equals_stride_is_functional() {
        for (m, n, stride) in [(0i64, 1i64, 2i64), (0, 2, 3), (1, 2, 2)] {
            let p = pooling_corr(m, n, stride, (0, 9)).unwrap();
            assert!(p.is_functional(), "pi({m},{n},{stride}) not functional");
            assert!(p.is_surjective());
            // away from the window boundary every coarse cell has exactly
            // `stride` preimages
            for x in 1..9 {
                let xi = p.target().line_index(x).unwrap();
                assert_eq!(p.preimage(xi).len() as i64, stride);
            }
        }
    }

    #[test]
    fn angular_pooling_examples() {
        // pi_{2,4}: zeta_8^5 -> zeta_4^2, zeta_8^0 -> zeta_4^0
        let p = angular_pooling(2, 4, false).unwrap();
        assert_eq!(p.image(5), &[2]);
        assert_eq!(p.image(0), &[0]);
        assert!(p.is_functional() && p.is_surjective());

        // pi_{1,n} = identity on mu_n
        let pid = angular_pooling(1, 6, false).unwrap();
        for (x, y) in pid.pairs() {
            assert_eq!(x, y);
        }

        // pointed variant carries + to +
        let pp = angular_pooling(2, 4, true).unwrap();
        assert_eq!(pp.image(8), &[4]);
        assert!(pp.is_surjective());
    }

    #[test]
    fn compose_cases() {
        let x = make_set(4).unwrap();
        let c = graph_corr(&x, &[(0, 1), (2, 3)]).unwrap();
        let id = identity(&x);
        let c2 = compose(&id, &c).unwrap();
        assert_eq!(c.pairs().collect::<Vec<_>>(), c2.pairs().collect::<Vec<_>>());

        // functional compose = composite function
        let f = functional(&x, &x, |i| Some((i + 1) % 4)).unwrap();
        let g = functional(&x, &x, |i| Some((i + 2) % 4)).unwrap();
        let fg = compose(&f, &g).unwrap();
        let direct = functional(&x, &x, |i| Some((i + 3) % 4)).unwrap();
        assert_eq!(fg.pairs().collect::<Vec<_>>(), direct.pairs().collect::<Vec<_>>());

        let y = make_set(3).unwrap();
        let bad = compose(&c, &complete(&y, &y));
        assert!(bad.is_err());
    }

    #[test]
    fn compose_metric_balls_contained() {
        let g = make_grid(9, 9).unwrap();
        let c1 = metric_corr(&g, 1.0).unwrap();
        let c2 = metric_corr(&g, 2.0).unwrap();
        let cc = compose(&c1, &c1).unwrap();
        for (x, y) in cc.pairs() {
            assert!(c2.contains(x as usize, y as usize));
        }
        // equality away from the boundary
        for x in 0..g.len() {
            let (cx, cy) = g.grid_coords(x).unwrap();
            if cx >= 2 && cx <= 6 && cy >= 2 && cy <= 6 {
                assert_eq!(cc.image(x).len(), c2.image(x).len(), "at ({cx},{cy})");
            }
        }
    }

    #[test]
    fn product_cases() {
        let x = make_set(3).unwrap();
        let y = make_set(2).unwrap();
        let idx = identity(&x);
        let idy = identity(&y);
        let p = product_corr(&idx, &idy);
        assert_eq!(p.size(), 6);
        for (a, b) in p.pairs() {
            assert_eq!(a, b);
        }

        let c = complete(&x, &y);
        let d = graph_corr(&y, &[(0, 1)]).unwrap();
        let pd = product_corr(&c, &d);
        assert_eq!(pd.size(), c.size() * d.size());
    }

    #[test]
    fn surjectivity_cases() {
        let x = make_set(3).unwrap();
        let y = make_set(2).unwrap();
        assert!(complete(&x, &y).is_surjective());
        let empty = Correspondence::from_pairs(&x, &y, vec![], CorrKind::Custom);
        assert!(!empty.is_surjective());
        let p = pooling_corr(0, 1, 2, (-3, 3)).unwrap();
        assert!(p.is_surjective());
    }

    #[test]
    fn pairs_serialization() {
        let x = make_set(2).unwrap();
        let c = complete(&x, &x);
        let mut buf = Vec::new();
        c.write_pairs(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0 0\n0 1\n1 0\n1 1\n");
    }
}
