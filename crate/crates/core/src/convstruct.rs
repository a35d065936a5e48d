//! Convolutional structures: equivalence classes on a layer together with
//! transporter bijections between in-neighborhoods, and the parameter tie
//! maps they induce.
//!
//! Transporters are stored in base-vertex factorization: each vertex keeps
//! the bijection onto its class representative, and psi_{(v,w)} is derived
//! as the composite through the base. Structures built from validated group
//! actions therefore satisfy the cocycle identities by construction.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::generator::FeedForwardSystem;
use crate::space::{Space, SpaceKind, SpaceRef};

/// Group action given by coordinate shifts on the structured factors of a
/// layer: integer translation of the grid factor and/or rotation of the
/// circle factor. All other factors are fixed pointwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShiftAction {
    pub translate_grid: bool,
    pub rotate_circle: bool,
}

impl ShiftAction {
    pub fn grid() -> ShiftAction {
        ShiftAction {
            translate_grid: true,
            rotate_circle: false,
        }
    }

    pub fn grid_and_circle() -> ShiftAction {
        ShiftAction {
            translate_grid: true,
            rotate_circle: true,
        }
    }

    pub fn trivial() -> ShiftAction {
        ShiftAction::default()
    }
}

#[derive(Debug, Clone)]
pub struct ConvClass {
    pub base: u32,
    pub members: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct ConvStructure {
    layer: usize,
    class_of: Vec<u32>,
    classes: Vec<ConvClass>,
    /// For vertex v and position p in its in-neighbor list, the position of
    /// psi_{(v, base)}(u_p) in the base vertex's in-neighbor list.
    to_base: Vec<Vec<u32>>,
}

impl ConvStructure {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, v: usize) -> usize {
        self.class_of[v] as usize
    }

    pub fn classes(&self) -> &[ConvClass] {
        &self.classes
    }

    /// psi_{(v,w)} as a map of in-neighbor positions; v and w must be
    /// equivalent.
    pub fn transporter(&self, v: usize, w: usize) -> Option<Vec<u32>> {
        if self.class_of[v] != self.class_of[w] {
            return None;
        }
        let inv_w = invert_positions(&self.to_base[w]);
        Some(self.to_base[v].iter().map(|&q| inv_w[q as usize]).collect())
    }

    /// Re-checks bijectivity and the cocycle identities from the stored
    /// transporters. Pairs are checked exhaustively on classes up to 1000
    /// vertices; triples exhaustively while the triple count stays small
    /// and on a deterministic sample beyond that.
    pub fn validate(&self, sys: &FeedForwardSystem) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (ci, class) in self.classes.iter().enumerate() {
            let k = class.members.len();
            let base_deg = sys.in_neighbors(self.layer, class.base as usize).len();
            for &v in &class.members {
                let tb = &self.to_base[v as usize];
                let deg = sys.in_neighbors(self.layer, v as usize).len();
                if tb.len() != deg || deg != base_deg {
                    report.violations.push(format!(
                        "class {ci}: vertex {v} has in-degree {deg}, base degree {base_deg}"
                    ));
                    continue;
                }
                let mut seen = vec![false; base_deg];
                for &q in tb {
                    if (q as usize) >= base_deg || seen[q as usize] {
                        report.violations.push(format!(
                            "class {ci}: transporter of vertex {v} is not a bijection"
                        ));
                        break;
                    }
                    seen[q as usize] = true;
                }
            }
            if k > 1000 {
                continue;
            }
            // psi_{(v,w)} = psi_{(w,v)}^{-1}
            for &v in &class.members {
                for &w in &class.members {
                    let vw = self.transporter(v as usize, w as usize).unwrap();
                    let wv = self.transporter(w as usize, v as usize).unwrap();
                    for (p, &q) in vw.iter().enumerate() {
                        if wv[q as usize] as usize != p {
                            report.violations.push(format!(
                                "class {ci}: psi({v},{w}) is not inverse to psi({w},{v}) at position {p}"
                            ));
                        }
                    }
                }
            }
            // psi_{(u,w)} = psi_{(v,w)} o psi_{(u,v)} on triples
            let triples: Vec<(u32, u32, u32)> = if k * k * k <= 200_000 {
                let mut t = Vec::new();
                for &u in &class.members {
                    for &v in &class.members {
                        for &w in &class.members {
                            t.push((u, v, w));
                        }
                    }
                }
                t
            } else {
                // deterministic stride sample
                let mut t = Vec::new();
                let step = (k * k * k / 100_000).max(1);
                let mut idx = 0usize;
                while t.len() < 100_000 && idx < k * k * k {
                    let (a, rem) = (idx / (k * k), idx % (k * k));
                    t.push((class.members[a], class.members[rem / k], class.members[rem % k]));
                    idx += step;
                }
                t
            };
            for (u, v, w) in triples {
                let uv = self.transporter(u as usize, v as usize).unwrap();
                let vw = self.transporter(v as usize, w as usize).unwrap();
                let uw = self.transporter(u as usize, w as usize).unwrap();
                for p in 0..uv.len() {
                    if vw[uv[p] as usize] != uw[p] {
                        report.violations.push(format!(
                            "class {ci}: cocycle fails on triple ({u},{v},{w}) at position {p}"
                        ));
                        break;
                    }
                }
            }
        }
        report
    }
}

fn invert_positions(perm: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; perm.len()];
    for (p, &q) in perm.iter().enumerate() {
        inv[q as usize] = p as u32;
    }
    inv
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Hand-buildable structure description: classes plus explicit transporter
/// maps. `psi[(v, w)]` lists, for each in-neighbor of `v` in ascending
/// order, the vertex it is carried to in the in-neighborhood of `w`.
#[derive(Debug, Default)]
pub struct StructureSpec {
    pub classes: Vec<Vec<u32>>,
    pub psi: HashMap<(u32, u32), Vec<u32>>,
}

impl StructureSpec {
    /// Checks bijectivity and both cocycle identities on the raw maps;
    /// violations carry a concrete counterexample.
    pub fn validate(&self, sys: &FeedForwardSystem, layer: usize) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (ci, class) in self.classes.iter().enumerate() {
            for &v in class {
                for &w in class {
                    let Some(map) = self.psi.get(&(v, w)) else {
                        if v != w {
                            report
                                .violations
                                .push(format!("class {ci}: psi({v},{w}) missing"));
                        }
                        continue;
                    };
                    let from = sys.in_neighbors(layer, v as usize);
                    let to = sys.in_neighbors(layer, w as usize);
                    if map.len() != from.len() {
                        report.violations.push(format!(
                            "psi({v},{w}) has {} entries for {} in-neighbors",
                            map.len(),
                            from.len()
                        ));
                        continue;
                    }
                    let mut seen = vec![false; to.len()];
                    for &img in map {
                        match to.binary_search(&img) {
                            Ok(p) if !seen[p] => seen[p] = true,
                            _ => {
                                report.violations.push(format!(
                                    "psi({v},{w}) is not a bijection onto the in-neighborhood of {w} (image {img})"
                                ));
                                break;
                            }
                        }
                    }
                }
            }
            // inverse identity
            for &v in class {
                for &w in class {
                    let (Some(vw), Some(wv)) = (self.psi.get(&(v, w)), self.psi.get(&(w, v)))
                    else {
                        continue;
                    };
                    let from = sys.in_neighbors(layer, v as usize);
                    let to = sys.in_neighbors(layer, w as usize);
                    if vw.len() != from.len() || wv.len() != to.len() {
                        continue;
                    }
                    for (p, &img) in vw.iter().enumerate() {
                        if let Ok(q) = to.binary_search(&img) {
                            if wv[q] != from[p] {
                                report.violations.push(format!(
                                    "psi({v},{w}) violates psi({v},{w}) = psi({w},{v})^-1: \
                                     {} -> {img} but {img} -> {}",
                                    from[p], wv[q]
                                ));
                            }
                        }
                    }
                }
            }
            // cocycle on triples
            for &u in class {
                for &v in class {
                    for &w in class {
                        let (Some(uv), Some(vw), Some(uw)) = (
                            self.psi.get(&(u, v)),
                            self.psi.get(&(v, w)),
                            self.psi.get(&(u, w)),
                        ) else {
                            continue;
                        };
                        let from = sys.in_neighbors(layer, u as usize);
                        let mid = sys.in_neighbors(layer, v as usize);
                        if uv.len() != from.len() || uw.len() != from.len() {
                            continue;
                        }
                        for p in 0..from.len() {
                            let via = mid
                                .binary_search(&uv[p])
                                .ok()
                                .map(|q| vw[q]);
                            if via != Some(uw[p]) {
                                report.violations.push(format!(
                                    "cocycle psi({u},{w}) != psi({v},{w}) o psi({u},{v}) at in-neighbor {}",
                                    from[p]
                                ));
                            }
                        }
                    }
                }
            }
        }
        report
    }

    /// Validates and converts to the base-factorized representation.
    pub fn build(self, sys: &FeedForwardSystem, layer: usize) -> Result<ConvStructure> {
        let report = self.validate(sys, layer);
        if !report.is_valid() {
            return Err(Error::InvalidStructure(report.violations.join("; ")));
        }
        let n = sys.layer_size(layer);
        let mut class_of = vec![u32::MAX; n];
        let mut classes = Vec::new();
        let mut to_base: Vec<Vec<u32>> = vec![Vec::new(); n];
        for members in self.classes {
            let mut members = members;
            members.sort_unstable();
            let base = members[0];
            let base_nbrs = sys.in_neighbors(layer, base as usize);
            for &v in &members {
                if class_of[v as usize] != u32::MAX {
                    return Err(Error::InvalidStructure(format!(
                        "vertex {v} appears in two classes"
                    )));
                }
                class_of[v as usize] = classes.len() as u32;
                let map = if v == base {
                    (0..base_nbrs.len() as u32).collect()
                } else {
                    let psi = self.psi.get(&(v, base)).ok_or_else(|| {
                        Error::InvalidStructure(format!("psi({v},{base}) missing"))
                    })?;
                    psi.iter()
                        .map(|img| base_nbrs.binary_search(img).unwrap() as u32)
                        .collect()
                };
                to_base[v as usize] = map;
            }
            classes.push(ConvClass { base, members });
        }
        // vertices not listed become singleton classes
        for v in 0..n {
            if class_of[v] == u32::MAX {
                class_of[v] = classes.len() as u32;
                to_base[v] = (0..sys.in_neighbors(layer, v).len() as u32).collect();
                classes.push(ConvClass {
                    base: v as u32,
                    members: vec![v as u32],
                });
            }
        }
        Ok(ConvStructure {
            layer,
            class_of,
            classes,
            to_base,
        })
    }
}

/// Per-factor shift of a group element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Delta {
    Fixed(usize),
    Grid(i64, i64),
    Circle(usize),
}

struct LayerView {
    factors: Vec<SpaceRef>,
    sizes: Vec<usize>,
    grid_pos: Option<usize>,
    circle_pos: Option<usize>,
}

impl LayerView {
    fn new(space: &SpaceRef, action: &ShiftAction) -> Result<LayerView> {
        let factors = space.factors();
        let sizes: Vec<usize> = factors.iter().map(|f| f.len()).collect();
        let grids: Vec<usize> = factors
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.kind(), SpaceKind::Grid { .. }))
            .map(|(i, _)| i)
            .collect();
        let circles: Vec<usize> = factors
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.kind(), SpaceKind::Circle { .. }))
            .map(|(i, _)| i)
            .collect();
        let grid_pos = if action.translate_grid {
            match grids.as_slice() {
                [g] => Some(*g),
                [] => {
                    return Err(Error::InvalidStructure(
                        "translation action needs a grid factor in both layers".into(),
                    ))
                }
                _ => {
                    return Err(Error::InvalidStructure(
                        "translation action is ambiguous: multiple grid factors".into(),
                    ))
                }
            }
        } else {
            None
        };
        let circle_pos = if action.rotate_circle {
            match circles.as_slice() {
                [c] => {
                    let (_, pointed) = factors[*c].circle_order().unwrap();
                    if pointed {
                        return Err(Error::NonFreeAction {
                            witness: "base point + of the pointed circle".into(),
                        });
                    }
                    Some(*c)
                }
                [] => {
                    return Err(Error::InvalidStructure(
                        "rotation action needs a circle factor in both layers".into(),
                    ))
                }
                _ => {
                    return Err(Error::InvalidStructure(
                        "rotation action is ambiguous: multiple circle factors".into(),
                    ))
                }
            }
        } else {
            None
        };
        Ok(LayerView {
            factors,
            sizes,
            grid_pos,
            circle_pos,
        })
    }

    fn digits(&self, space: &Space, i: usize) -> Vec<usize> {
        space.split_index(i, &self.sizes)
    }

    /// Key identifying the non-acted part of an element.
    fn fixed_key(&self, digits: &[usize]) -> Vec<usize> {
        digits
            .iter()
            .enumerate()
            .filter(|(p, _)| Some(*p) != self.grid_pos && Some(*p) != self.circle_pos)
            .map(|(_, &d)| d)
            .collect()
    }

    /// Shift of the acted coordinates carrying digits `from` to digits
    /// `to`; `None` when the fixed parts differ.
    fn delta_between(&self, from: &[usize], to: &[usize]) -> Option<(i64, i64, i64)> {
        if self.fixed_key(from) != self.fixed_key(to) {
            return None;
        }
        let (mut dx, mut dy, mut dk) = (0i64, 0i64, 0i64);
        if let Some(gp) = self.grid_pos {
            let f = &self.factors[gp];
            let (x0, y0) = f.grid_coords(from[gp]).unwrap();
            let (x1, y1) = f.grid_coords(to[gp]).unwrap();
            dx = x1 - x0;
            dy = y1 - y0;
        }
        if let Some(cp) = self.circle_pos {
            let (n, _) = self.factors[cp].circle_order().unwrap();
            dk = (to[cp] as i64 - from[cp] as i64).rem_euclid(n as i64);
        }
        Some((dx, dy, dk))
    }

    /// Applies a shift to element `i`; `None` if the translate leaves the
    /// grid window.
    fn apply(&self, space: &Space, i: usize, shift: (i64, i64, i64)) -> Option<usize> {
        let mut digits = self.digits(space, i);
        if let Some(gp) = self.grid_pos {
            let f = &self.factors[gp];
            let (x, y) = f.grid_coords(digits[gp]).unwrap();
            digits[gp] = f.grid_index(x + shift.0, y + shift.1)?;
        }
        if let Some(cp) = self.circle_pos {
            let (n, _) = self.factors[cp].circle_order().unwrap();
            digits[cp] = (digits[cp] + shift.2 as usize) % n;
        }
        Some(Space::join_index(&digits, &self.sizes))
    }

    /// Relative position of an in-neighbor with respect to a layer vertex;
    /// acted coordinates become offsets, fixed coordinates stay absolute.
    fn relative_key(
        &self,
        u_digits: &[usize],
        anchor: (i64, i64, i64),
    ) -> Vec<Delta> {
        u_digits
            .iter()
            .enumerate()
            .map(|(p, &d)| {
                if Some(p) == self.grid_pos {
                    let (x, y) = self.factors[p].grid_coords(d).unwrap();
                    Delta::Grid(x - anchor.0, y - anchor.1)
                } else if Some(p) == self.circle_pos {
                    let (n, _) = self.factors[p].circle_order().unwrap();
                    Delta::Circle((d as i64 - anchor.2).rem_euclid(n as i64) as usize)
                } else {
                    Delta::Fixed(d)
                }
            })
            .collect()
    }

    /// Acted-coordinate anchor of a vertex (grid coords and circle
    /// exponent; zeros when the factor is not acted).
    fn anchor(&self, digits: &[usize]) -> (i64, i64, i64) {
        let (mut x, mut y, mut k) = (0i64, 0i64, 0i64);
        if let Some(gp) = self.grid_pos {
            let (gx, gy) = self.factors[gp].grid_coords(digits[gp]).unwrap();
            x = gx;
            y = gy;
        }
        if let Some(cp) = self.circle_pos {
            k = digits[cp] as i64;
        }
        (x, y, k)
    }

    fn grid_is_wrapped(&self) -> Option<bool> {
        self.grid_pos.map(|gp| {
            matches!(
                self.factors[gp].kind(),
                SpaceKind::Grid { wrap: true, .. }
            )
        })
    }
}

/// Cayley structure of a free, total, edge-preserving shift action: orbits
/// become classes and the transporters are the group shifts. Fails with a
/// witness when the action is partial, not free, or breaks an edge.
pub fn cayley_structure(
    sys: &FeedForwardSystem,
    layer: usize,
    action: &ShiftAction,
) -> Result<ConvStructure> {
    check_layer(sys, layer)?;
    let prev = LayerView::new(sys.layer_space(layer - 1), action)?;
    let cur = LayerView::new(sys.layer_space(layer), action)?;

    // totality: translations must wrap
    if action.translate_grid {
        for (view, l) in [(&prev, layer - 1), (&cur, layer)] {
            if view.grid_is_wrapped() != Some(true) {
                return Err(Error::PartialAction {
                    layer: l,
                    witness: "translation leaves a non-cyclic grid window".into(),
                });
            }
        }
    }
    // edge preservation, checked on the group generators
    let gens = generator_shifts(action, &cur);
    let arrow = sys.arrow(layer);
    for shift in &gens {
        for (u, v) in arrow.pairs() {
            let gu = prev.apply(sys.layer_space(layer - 1), u as usize, *shift);
            let gv = cur.apply(sys.layer_space(layer), v as usize, *shift);
            match (gu, gv) {
                (Some(gu), Some(gv)) => {
                    if !arrow.contains(gu, gv) {
                        return Err(Error::EdgeBreakingAction {
                            witness: format!(
                                "edge ({},{}) maps to non-edge ({},{}) under shift {:?}",
                                sys.vertex_label(layer - 1, u as usize),
                                sys.vertex_label(layer, v as usize),
                                sys.vertex_label(layer - 1, gu),
                                sys.vertex_label(layer, gv),
                                shift
                            ),
                        });
                    }
                }
                _ => {
                    return Err(Error::PartialAction {
                        layer,
                        witness: format!("shift {shift:?} undefined on an edge endpoint"),
                    })
                }
            }
        }
    }
    build_shift_structure(sys, layer, action)
}

fn generator_shifts(action: &ShiftAction, _cur: &LayerView) -> Vec<(i64, i64, i64)> {
    let mut gens = Vec::new();
    if action.translate_grid {
        gens.push((1, 0, 0));
        gens.push((0, 1, 0));
    }
    if action.rotate_circle {
        gens.push((0, 0, 1));
    }
    gens
}

/// Structure induced on a finite window by the shift action of the ambient
/// (unbounded or cyclic) model: vertices are equivalent when a shift
/// carries one to the other and restricts to a bijection of their
/// window-clipped in-neighborhoods. On total actions this reduces to the
/// plain Cayley structure.
pub fn restricted_cayley(
    sys: &FeedForwardSystem,
    layer: usize,
    action: &ShiftAction,
) -> Result<ConvStructure> {
    check_layer(sys, layer)?;
    build_shift_structure(sys, layer, action)
}

fn check_layer(sys: &FeedForwardSystem, layer: usize) -> Result<()> {
    if layer == 0 || layer > sys.depth() {
        return Err(Error::InvalidStructure(format!(
            "layer {layer} has no in-arrow (depth {})",
            sys.depth()
        )));
    }
    Ok(())
}

fn build_shift_structure(
    sys: &FeedForwardSystem,
    layer: usize,
    action: &ShiftAction,
) -> Result<ConvStructure> {
    let prev_space = sys.layer_space(layer - 1);
    let cur_space = sys.layer_space(layer);
    let prev = LayerView::new(prev_space, action)?;
    let cur = LayerView::new(cur_space, action)?;

    let n = cur_space.len();
    // signature: fixed part of v plus the relative positions of its
    // in-neighborhood
    let mut groups: HashMap<(Vec<usize>, Vec<Vec<Delta>>), Vec<u32>> = HashMap::new();
    let mut order: Vec<(Vec<usize>, Vec<Vec<Delta>>)> = Vec::new();
    for v in 0..n {
        let v_digits = cur.digits(cur_space, v);
        let anchor = cur.anchor(&v_digits);
        let mut sig: Vec<Vec<Delta>> = sys
            .in_neighbors(layer, v)
            .iter()
            .map(|&u| {
                let u_digits = prev.digits(prev_space, u as usize);
                prev.relative_key(&u_digits, anchor)
            })
            .collect();
        sig.sort();
        let key = (cur.fixed_key(&v_digits), sig);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        entry.push(v as u32);
    }

    let mut class_of = vec![0u32; n];
    let mut classes = Vec::with_capacity(order.len());
    let mut to_base: Vec<Vec<u32>> = vec![Vec::new(); n];
    // deterministic class order: by smallest member
    let mut member_lists: Vec<Vec<u32>> = order.into_iter().map(|k| groups.remove(&k).unwrap()).collect();
    member_lists.sort_by_key(|m| m[0]);

    for members in member_lists {
        let ci = classes.len() as u32;
        let base = members[0];
        let base_digits = cur.digits(cur_space, base as usize);
        let base_nbrs = sys.in_neighbors(layer, base as usize);
        for &v in &members {
            class_of[v as usize] = ci;
            let v_digits = cur.digits(cur_space, v as usize);
            let shift = cur
                .delta_between(&v_digits, &base_digits)
                .expect("class members share their fixed part");
            let map: Vec<u32> = sys
                .in_neighbors(layer, v as usize)
                .iter()
                .map(|&u| {
                    let img = prev
                        .apply(prev_space, u as usize, shift)
                        .expect("signature equality keeps shifted in-neighbors in the window");
                    base_nbrs
                        .binary_search(&(img as u32))
                        .expect("shifted in-neighbor lies in the base in-neighborhood")
                        as u32
                })
                .collect();
            to_base[v as usize] = map;
        }
        classes.push(ConvClass { base, members });
    }
    Ok(ConvStructure {
        layer,
        class_of,
        classes,
        to_base,
    })
}

/// Restriction of a convolutional structure to a sub-system produced by
/// [`FeedForwardSystem::restrict`]: kept vertices stay equivalent when the
/// transporter restricts to a bijection of the kept in-neighborhoods.
pub fn restrict_structure(
    structure: &ConvStructure,
    full: &FeedForwardSystem,
    sub: &FeedForwardSystem,
) -> Result<ConvStructure> {
    let layer = structure.layer;
    let keep_cur = sub
        .layer_space(layer)
        .subset_keep()
        .ok_or_else(|| Error::InvalidStructure("sub-system layer is not a restriction".into()))?
        .to_vec();
    let keep_prev = sub
        .layer_space(layer - 1)
        .subset_keep()
        .ok_or_else(|| Error::InvalidStructure("sub-system layer is not a restriction".into()))?
        .to_vec();

    // base-position profile of the kept in-neighborhood decides refined
    // equivalence: the transporter through the base restricts to a
    // bijection exactly when the profiles agree
    let mut groups: HashMap<(u32, Vec<u32>), Vec<u32>> = HashMap::new();
    for (new_v, &old_v) in keep_cur.iter().enumerate() {
        let old_nbrs = full.in_neighbors(layer, old_v as usize);
        let tb = &structure.to_base[old_v as usize];
        let mut profile: Vec<u32> = old_nbrs
            .iter()
            .zip(tb)
            .filter(|(u, _)| keep_prev.binary_search(u).is_ok())
            .map(|(_, &q)| q)
            .collect();
        profile.sort_unstable();
        groups
            .entry((structure.class_of[old_v as usize], profile))
            .or_default()
            .push(new_v as u32);
    }

    let n = keep_cur.len();
    let mut member_lists: Vec<Vec<u32>> = groups.into_values().collect();
    member_lists.sort_by_key(|m| m[0]);

    let mut class_of = vec![0u32; n];
    let mut classes = Vec::with_capacity(member_lists.len());
    let mut to_base: Vec<Vec<u32>> = vec![Vec::new(); n];
    for members in member_lists {
        let ci = classes.len() as u32;
        let base = members[0];
        let old_base = keep_cur[base as usize] as usize;
        // positions in the old base in-list of the new base's kept in-list
        let base_nbrs_new = sub.in_neighbors(layer, base as usize);
        let old_base_nbrs = full.in_neighbors(layer, old_base);
        let tb_base = &structure.to_base[old_base];
        // map: base-position (old, via structure base) -> new position in sub CSR
        let mut basepos_to_new: HashMap<u32, u32> = HashMap::new();
        for (new_p, &u_new) in base_nbrs_new.iter().enumerate() {
            let u_old = keep_prev[u_new as usize];
            let p_old = old_base_nbrs.binary_search(&u_old).unwrap();
            basepos_to_new.insert(tb_base[p_old], new_p as u32);
        }
        for &v in &members {
            class_of[v as usize] = ci;
            let old_v = keep_cur[v as usize] as usize;
            let old_nbrs = full.in_neighbors(layer, old_v);
            let tb = &structure.to_base[old_v];
            let map: Vec<u32> = sub
                .in_neighbors(layer, v as usize)
                .iter()
                .map(|&u_new| {
                    let u_old = keep_prev[u_new as usize];
                    let p_old = old_nbrs.binary_search(&u_old).unwrap();
                    basepos_to_new[&tb[p_old]]
                })
                .collect();
            to_base[v as usize] = map;
        }
        classes.push(ConvClass { base, members });
    }
    Ok(ConvStructure {
        layer,
        class_of,
        classes,
        to_base,
    })
}

/// Parameter slots for the edges into one layer: tied edges share a slot.
#[derive(Debug, Clone)]
pub struct TieMap {
    layer: usize,
    /// Slot of each in-edge, in the layer's CSR-by-target edge order.
    slot_of_edge: Vec<u32>,
    n_slots: usize,
    /// Per-class slot ranges `[offset, offset + indeg(base))`.
    class_offsets: Vec<u32>,
    structure: Option<Arc<ConvStructure>>,
}

impl TieMap {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn slot_count(&self) -> usize {
        self.n_slots
    }

    pub fn slots(&self) -> &[u32] {
        &self.slot_of_edge
    }

    pub fn structure(&self) -> Option<&Arc<ConvStructure>> {
        self.structure.as_ref()
    }

    pub fn class_slot_range(&self, class: usize) -> std::ops::Range<usize> {
        let start = self.class_offsets[class] as usize;
        let end = self
            .class_offsets
            .get(class + 1)
            .map(|&o| o as usize)
            .unwrap_or(self.n_slots);
        start..end
    }

    /// Fully independent parameters: one slot per edge.
    pub fn untied(layer: usize, n_edges: usize) -> TieMap {
        TieMap {
            layer,
            slot_of_edge: (0..n_edges as u32).collect(),
            n_slots: n_edges,
            class_offsets: vec![0],
            structure: None,
        }
    }
}

/// Slot assignment induced by a convolutional structure: the slot of an
/// edge (u, v) is the base-neighborhood position of u transported through
/// the class base, offset per class.
pub fn tie_parameters(sys: &FeedForwardSystem, structure: &ConvStructure) -> TieMap {
    let layer = structure.layer;
    let mut class_offsets = Vec::with_capacity(structure.classes.len() + 1);
    let mut total = 0u32;
    for class in &structure.classes {
        class_offsets.push(total);
        total += sys.in_neighbors(layer, class.base as usize).len() as u32;
    }

    let n = sys.layer_size(layer);
    let mut slot_of_edge = Vec::with_capacity(sys.arrow(layer).size());
    for v in 0..n {
        let offset = class_offsets[structure.class_of[v] as usize];
        for &q in &structure.to_base[v] {
            slot_of_edge.push(offset + q);
        }
    }
    TieMap {
        layer,
        slot_of_edge,
        n_slots: total as usize,
        class_offsets,
        structure: Some(Arc::new(structure.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::{complete, metric_corr, product_corr};
    use crate::generator::Generator;
    use crate::space::{make_circle, make_grid, make_set, make_torus, product_space};

    fn torus_conv_system(w: usize, h: usize) -> FeedForwardSystem {
        let t = make_torus(w, h).unwrap();
        let arrow = metric_corr(&t, 1.0).unwrap();
        Generator::new(vec![t.clone(), t], vec![arrow])
            .unwrap()
            .realize()
    }

    #[test]
    fn torus_cayley_single_class_nine_slots() {
        let sys = torus_conv_system(8, 8);
        let s = cayley_structure(&sys, 1, &ShiftAction::grid()).unwrap();
        assert_eq!(s.class_count(), 1);
        let tie = tie_parameters(&sys, &s);
        assert_eq!(tie.slot_count(), 9);
        assert!(s.validate(&sys).is_valid());
    }

    #[test]
    fn trivial_action_gives_singletons() {
        let sys = torus_conv_system(4, 4);
        let s = cayley_structure(&sys, 1, &ShiftAction::trivial()).unwrap();
        assert_eq!(s.class_count(), 16);
        let tie = tie_parameters(&sys, &s);
        assert_eq!(tie.slot_count(), sys.arrow(1).size());
    }

    #[test]
    fn circle_rotation_cayley() {
        let mu = make_circle(16, false).unwrap();
        let xi = mu.dist(0, 1).unwrap();
        let arrow = metric_corr(&mu, xi).unwrap();
        let sys = Generator::new(vec![mu.clone(), mu], vec![arrow])
            .unwrap()
            .realize();
        let action = ShiftAction {
            translate_grid: false,
            rotate_circle: true,
        };
        let s = cayley_structure(&sys, 1, &action).unwrap();
        assert_eq!(s.class_count(), 1);
        assert_eq!(tie_parameters(&sys, &s).slot_count(), 3);
    }

    #[test]
    fn pointed_circle_rotation_is_not_free() {
        let mu = make_circle(8, true).unwrap();
        let xi = 2.0 * (std::f64::consts::PI / 8.0).sin();
        let arrow = metric_corr(&mu, xi + 1e-9).unwrap();
        let sys = Generator::new(vec![mu.clone(), mu], vec![arrow])
            .unwrap()
            .realize();
        let action = ShiftAction {
            translate_grid: false,
            rotate_circle: true,
        };
        assert!(matches!(
            cayley_structure(&sys, 1, &action),
            Err(Error::NonFreeAction { .. })
        ));
    }

    #[test]
    fn plain_grid_cayley_is_partial() {
        let g = make_grid(6, 6).unwrap();
        let arrow = metric_corr(&g, 1.0).unwrap();
        let sys = Generator::new(vec![g.clone(), g], vec![arrow])
            .unwrap()
            .realize();
        assert!(matches!(
            cayley_structure(&sys, 1, &ShiftAction::grid()),
            Err(Error::PartialAction { .. })
        ));
    }

    #[test]
    fn edge_breaking_action_reports_witness() {
        // an asymmetric relation on the circle is not rotation invariant
        let mu = make_circle(6, false).unwrap();
        let arrow = crate::corr::graph_corr(&mu, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 2)])
            .unwrap();
        let sys = Generator::new(vec![mu.clone(), mu], vec![arrow])
            .unwrap()
            .realize();
        let action = ShiftAction {
            translate_grid: false,
            rotate_circle: true,
        };
        assert!(matches!(
            cayley_structure(&sys, 1, &action),
            Err(Error::EdgeBreakingAction { .. })
        ));
    }

    #[test]
    fn window_structure_has_nine_boundary_classes() {
        let g = make_grid(28, 28).unwrap();
        let arrow = metric_corr(&g, 1.0).unwrap();
        let sys = Generator::new(vec![g.clone(), g], vec![arrow])
            .unwrap()
            .realize();
        let s = restricted_cayley(&sys, 1, &ShiftAction::grid()).unwrap();
        assert_eq!(s.class_count(), 9);
        let mut sizes: Vec<usize> = s.classes().iter().map(|c| c.members.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 1, 26, 26, 26, 26, 676]);
        let tie = tie_parameters(&sys, &s);
        assert_eq!(tie.slot_count(), 9 + 4 * 6 + 4 * 4);
        assert!(s.validate(&sys).is_valid());
    }

    #[test]
    fn torus_restriction_matches_window_structure() {
        // restricting the one-class structure on a 30x30 torus to an
        // interior 28x28 window gives the same refinement as building on
        // the window directly
        let sys = torus_conv_system(30, 30);
        let full = cayley_structure(&sys, 1, &ShiftAction::grid()).unwrap();
        let t = sys.layer_space(0);
        let keep: Vec<u32> = (0..t.len() as u32)
            .filter(|&i| {
                let (x, y) = t.grid_coords(i as usize).unwrap();
                (1..=28).contains(&x) && (1..=28).contains(&y)
            })
            .collect();
        let sub = sys.restrict(&[keep.clone(), keep]).unwrap();
        let restricted = restrict_structure(&full, &sys, &sub).unwrap();
        assert_eq!(restricted.class_count(), 9);
        let tie = tie_parameters(&sub, &restricted);
        assert_eq!(tie.slot_count(), 49);
    }

    #[test]
    fn restriction_to_full_system_is_identity() {
        let sys = torus_conv_system(6, 6);
        let s = cayley_structure(&sys, 1, &ShiftAction::grid()).unwrap();
        let all: Vec<u32> = (0..36).collect();
        let sub = sys.restrict(&[all.clone(), all]).unwrap();
        let r = restrict_structure(&s, &sys, &sub).unwrap();
        assert_eq!(r.class_count(), s.class_count());
        for v in 0..36 {
            assert_eq!(r.class_of(v), s.class_of(v));
        }
    }

    #[test]
    fn tie_counts_with_channels() {
        // 1 -> 64 channels over a single-class torus layer: 9 * 64 slots
        let t = make_torus(8, 8).unwrap();
        let c1 = make_set(1).unwrap();
        let c64 = make_set(64).unwrap();
        let arrow = product_corr(&complete(&c1, &c64), &metric_corr(&t, 1.0).unwrap());
        let sys = Generator::new(
            vec![product_space(&c1, &t), product_space(&c64, &t)],
            vec![arrow],
        )
        .unwrap()
        .realize();
        let s = restricted_cayley(&sys, 1, &ShiftAction::grid()).unwrap();
        assert_eq!(s.class_count(), 64);
        let tie = tie_parameters(&sys, &s);
        assert_eq!(tie.slot_count(), 9 * 64);
    }

    #[test]
    fn window_tie_counts_with_channels() {
        let g = make_grid(28, 28).unwrap();
        let c1 = make_set(1).unwrap();
        let c64 = make_set(64).unwrap();
        let arrow = product_corr(&complete(&c1, &c64), &metric_corr(&g, 1.0).unwrap());
        let sys = Generator::new(
            vec![product_space(&c1, &g), product_space(&c64, &g)],
            vec![arrow],
        )
        .unwrap()
        .realize();
        let s = restricted_cayley(&sys, 1, &ShiftAction::grid()).unwrap();
        assert_eq!(s.class_count(), 9 * 64);
        let tie = tie_parameters(&sys, &s);
        assert_eq!(tie.slot_count(), 49 * 64);
    }

    #[test]
    fn hand_built_violation_is_reported() {
        let x = make_set(2).unwrap();
        let y = make_set(2).unwrap();
        let arrow = complete(&x, &y);
        let sys = Generator::new(vec![x, y], vec![arrow]).unwrap().realize();
        // swap on one direction, identity on the other: not inverse
        let mut spec = StructureSpec::default();
        spec.classes.push(vec![0, 1]);
        spec.psi.insert((0, 1), vec![1, 0]);
        spec.psi.insert((1, 0), vec![0, 1]);
        spec.psi.insert((0, 0), vec![0, 1]);
        spec.psi.insert((1, 1), vec![0, 1]);
        let report = spec.validate(&sys, 1);
        assert!(!report.is_valid());
        assert!(report.violations.iter().any(|v| v.contains("inverse")));
    }

    #[test]
    fn singleton_classes_are_vacuously_valid() {
        let sys = torus_conv_system(3, 3);
        let spec = StructureSpec::default();
        let s = spec.build(&sys, 1).unwrap();
        assert_eq!(s.class_count(), 9);
        assert!(s.validate(&sys).is_valid());
    }

    #[test]
    fn slot_sharing_equals_adapted_coefficient_closure() {
        // brute-force closure of the relation "identified by some
        // transporter" on a small window
        let g = make_grid(5, 4).unwrap();
        let arrow = metric_corr(&g, 1.0).unwrap();
        let sys = Generator::new(vec![g.clone(), g], vec![arrow])
            .unwrap()
            .realize();
        let s = restricted_cayley(&sys, 1, &ShiftAction::grid()).unwrap();
        let tie = tie_parameters(&sys, &s);

        let n_edges = sys.arrow(1).size();
        assert!(n_edges <= 500);
        // edge id lookup
        let mut edge_id = HashMap::new();
        let mut id = 0u32;
        for v in 0..sys.layer_size(1) {
            for &u in sys.in_neighbors(1, v) {
                edge_id.insert((u, v as u32), id);
                id += 1;
            }
        }
        let mut parent: Vec<u32> = (0..n_edges as u32).collect();
        fn find(p: &mut Vec<u32>, i: u32) -> u32 {
            if p[i as usize] != i {
                let r = find(p, p[i as usize]);
                p[i as usize] = r;
                r
            } else {
                i
            }
        }
        for class in s.classes() {
            for &v in &class.members {
                for &w in &class.members {
                    let psi = s.transporter(v as usize, w as usize).unwrap();
                    let from = sys.in_neighbors(1, v as usize);
                    let to = sys.in_neighbors(1, w as usize);
                    for (p, &q) in psi.iter().enumerate() {
                        let a = edge_id[&(from[p], v)];
                        let b = edge_id[&(to[q as usize], w)];
                        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                        parent[ra as usize] = rb;
                    }
                }
            }
        }
        // compare partitions
        let mut closure_rep: HashMap<u32, u32> = HashMap::new();
        for e in 0..n_edges as u32 {
            let r = find(&mut parent, e);
            closure_rep.entry(r).or_insert(e);
        }
        let mut slot_to_rep: HashMap<u32, u32> = HashMap::new();
        for e in 0..n_edges {
            let slot = tie.slots()[e];
            let rep = find(&mut parent, e as u32);
            match slot_to_rep.get(&slot) {
                Some(&r) => assert_eq!(r, rep, "slot {slot} spans two closure classes"),
                None => {
                    slot_to_rep.insert(slot, rep);
                }
            }
        }
        assert_eq!(slot_to_rep.len(), tie.slot_count());
    }
}
