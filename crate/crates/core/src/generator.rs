//! Generators and their realization into layered feed-forward systems.
//!
//! A generator assigns a space to each of the levels 0..=r and a surjective
//! correspondence to each step; realizing it produces the layered DAG whose
//! vertices are the space elements and whose edges are the related pairs.

use std::sync::Arc;

use crate::corr::{self, CorrKind, Correspondence};
use crate::error::{Error, Result};
use crate::space::{subset_space, SpaceKind, SpaceRef};

#[derive(Debug, Clone)]
pub struct Generator {
    layers: Vec<SpaceRef>,
    arrows: Vec<Arc<Correspondence>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    FullyConnected,
    GridConvolutional,
    Pooling,
    Other,
}

impl Generator {
    /// Validates adjacency and surjectivity of every arrow.
    pub fn new(layers: Vec<SpaceRef>, arrows: Vec<Correspondence>) -> Result<Generator> {
        if layers.is_empty() {
            return Err(Error::InvalidGenerator("no layers".into()));
        }
        if arrows.len() + 1 != layers.len() {
            return Err(Error::InvalidGenerator(format!(
                "{} layers need {} arrows, got {}",
                layers.len(),
                layers.len() - 1,
                arrows.len()
            )));
        }
        for (i, arrow) in arrows.iter().enumerate() {
            if **arrow.source() != *layers[i] || **arrow.target() != *layers[i + 1] {
                return Err(Error::InvalidGenerator(format!(
                    "arrow {} endpoints {} -> {} do not match layers {} -> {}",
                    i + 1,
                    arrow.source(),
                    arrow.target(),
                    layers[i],
                    layers[i + 1]
                )));
            }
            for y in 0..arrow.target().len() {
                if arrow.preimage(y).is_empty() {
                    return Err(Error::NonSurjectiveArrow {
                        arrow: i + 1,
                        target: y,
                        label: arrow.target().label(y),
                    });
                }
            }
        }
        Ok(Generator {
            layers,
            arrows: arrows.into_iter().map(Arc::new).collect(),
        })
    }

    /// Complete generator of the given type: all arrows are complete
    /// correspondences between abstract sets of the stated cardinalities.
    pub fn complete(type_: &[usize]) -> Result<Generator> {
        if type_.len() < 2 {
            return Err(Error::InvalidGenerator(
                "complete generator type needs at least 2 entries".into(),
            ));
        }
        let mut layers = Vec::with_capacity(type_.len());
        for &k in type_ {
            layers.push(crate::space::make_set(k)?);
        }
        let arrows = layers
            .windows(2)
            .map(|w| corr::complete(&w[0], &w[1]))
            .collect();
        Generator::new(layers, arrows)
    }

    /// Layer-wise and arrow-wise product of two generators of equal depth.
    pub fn product(f: &Generator, g: &Generator) -> Result<Generator> {
        if f.depth() != g.depth() {
            return Err(Error::InvalidGenerator(format!(
                "depth mismatch: {} vs {}",
                f.depth(),
                g.depth()
            )));
        }
        let layers = f
            .layers
            .iter()
            .zip(&g.layers)
            .map(|(a, b)| crate::space::product_space(a, b))
            .collect();
        let arrows = f
            .arrows
            .iter()
            .zip(&g.arrows)
            .map(|(a, b)| corr::product_corr(a, b))
            .collect();
        Generator::new(layers, arrows)
    }

    /// Depth r (number of arrows).
    pub fn depth(&self) -> usize {
        self.arrows.len()
    }

    pub fn layer(&self, i: usize) -> &SpaceRef {
        &self.layers[i]
    }

    pub fn arrow(&self, i: usize) -> &Arc<Correspondence> {
        &self.arrows[i - 1]
    }

    /// Classifies arrow `i` (1-based) by its construction shape.
    pub fn classify_layer(&self, i: usize) -> LayerKind {
        classify_kind(self.arrows[i - 1].kind(), &self.arrows[i - 1])
    }

    /// Realizes the generator as a feed-forward system. Surjectivity was
    /// validated at construction, which guarantees every non-initial
    /// vertex has an in-neighbor.
    pub fn realize(&self) -> FeedForwardSystem {
        FeedForwardSystem {
            layers: self.layers.clone(),
            arrows: self.arrows.clone(),
        }
    }
}

fn classify_kind(kind: &CorrKind, arrow: &Correspondence) -> LayerKind {
    let leaves = corr::kind_leaves(kind);
    let is_complete = |k: &CorrKind| matches!(k, CorrKind::Complete);
    if leaves.iter().all(|k| is_complete(k)) {
        return LayerKind::FullyConnected;
    }
    // structural fallback: a relation equal to the full product is complete
    if leaves.len() == 1 && arrow.size() == arrow.source().len() * arrow.target().len() {
        return LayerKind::FullyConnected;
    }
    let metric_leaves = leaves
        .iter()
        .filter(|k| matches!(k, CorrKind::Metric { .. }))
        .count();
    let pooling_leaves = leaves
        .iter()
        .filter(|k| matches!(k, CorrKind::Pooling { .. } | CorrKind::Pooling2 { .. }))
        .count();
    let rest_complete = leaves
        .iter()
        .filter(|k| {
            !matches!(
                k,
                CorrKind::Metric { .. } | CorrKind::Pooling { .. } | CorrKind::Pooling2 { .. }
            )
        })
        .all(|k| is_complete(k));
    // a metric factor counts as grid-convolutional only over a grid window
    let metric_on_grid = source_has_grid_factor(arrow.source());
    if metric_leaves == 1 && pooling_leaves == 0 && rest_complete && metric_on_grid {
        return LayerKind::GridConvolutional;
    }
    if pooling_leaves == 1 && metric_leaves == 0 && rest_complete {
        return LayerKind::Pooling;
    }
    LayerKind::Other
}

fn source_has_grid_factor(space: &SpaceRef) -> bool {
    space
        .factors()
        .iter()
        .any(|f| matches!(f.kind(), SpaceKind::Grid { .. }))
}

/// A layered DAG: vertices are the elements of the layer spaces, edges the
/// related pairs of each arrow. Immutable after realization.
#[derive(Debug, Clone)]
pub struct FeedForwardSystem {
    layers: Vec<SpaceRef>,
    arrows: Vec<Arc<Correspondence>>,
}

impl FeedForwardSystem {
    pub fn depth(&self) -> usize {
        self.arrows.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_size(&self, i: usize) -> usize {
        self.layers[i].len()
    }

    pub fn layer_space(&self, i: usize) -> &SpaceRef {
        &self.layers[i]
    }

    /// The correspondence realizing the edges into layer `i` (1-based).
    pub fn arrow(&self, i: usize) -> &Arc<Correspondence> {
        &self.arrows[i - 1]
    }

    /// In-neighborhood of vertex `v` in layer `i` (i >= 1), ascending.
    pub fn in_neighbors(&self, i: usize, v: usize) -> &[u32] {
        self.arrows[i - 1].preimage(v)
    }

    /// Out-neighborhood of vertex `v` in layer `i` (i < depth), ascending.
    pub fn out_neighbors(&self, i: usize, v: usize) -> &[u32] {
        self.arrows[i].image(v)
    }

    pub fn vertex_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.arrows.iter().map(|a| a.size()).sum()
    }

    pub fn vertex_label(&self, layer: usize, v: usize) -> String {
        self.layers[layer].label(v)
    }

    /// Induced sub-system on the kept vertices (one ascending index list
    /// per layer). Fails if a kept non-initial vertex loses its whole
    /// in-neighborhood.
    pub fn restrict(&self, keep: &[Vec<u32>]) -> Result<FeedForwardSystem> {
        if keep.len() != self.layers.len() {
            return Err(Error::InvalidGenerator(format!(
                "need {} keep sets, got {}",
                self.layers.len(),
                keep.len()
            )));
        }
        let sub_layers: Vec<SpaceRef> = self
            .layers
            .iter()
            .zip(keep)
            .map(|(l, k)| subset_space(l, k.clone()))
            .collect::<Result<_>>()?;

        let mut sub_arrows = Vec::with_capacity(self.arrows.len());
        for (i, arrow) in self.arrows.iter().enumerate() {
            let src_keep = &keep[i];
            let tgt_keep = &keep[i + 1];
            let mut pairs = Vec::new();
            for (new_t, &old_t) in tgt_keep.iter().enumerate() {
                let mut found = false;
                for &old_s in arrow.preimage(old_t as usize) {
                    if let Ok(new_s) = src_keep.binary_search(&old_s) {
                        pairs.push((new_s as u32, new_t as u32));
                        found = true;
                    }
                }
                if !found {
                    return Err(Error::OrphanedVertex {
                        layer: i + 1,
                        vertex: old_t as usize,
                        label: self.layers[i + 1].label(old_t as usize),
                    });
                }
            }
            sub_arrows.push(Arc::new(Correspondence::from_pairs(
                &sub_layers[i],
                &sub_layers[i + 1],
                pairs,
                CorrKind::Custom,
            )));
        }
        Ok(FeedForwardSystem {
            layers: sub_layers,
            arrows: sub_arrows,
        })
    }
}
