//! Whitney decomposition of the complement of a graph set: parabolic dyadic
//! boxes accepted when `4 diam(I) <= dist(4I, E)`, which forces
//! `dist(I, E) <= 100 diam(I)` for every box whose parent was refined.
//! Includes Whitney regions around boundary cubes, overlap counts, and the
//! above/below split with its separation guarantee.
//!
//! Boxes are addressed on the absolute ambient lattice (time side `4^-k`,
//! spatial sides `2^-k`), so cubes enumerated by different local queries and
//! by on-demand point location share identity. Cubes store only the lattice
//! key and the cached distance to `E`; geometry is derived.

use std::collections::HashMap;

use serde::Serialize;

use crate::dyadic::{CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::pargeo::{ParaPoint, PBox, SampledGraph, MAX_SPATIAL_DIM};

/// Lattice address of a Whitney box in ambient space-time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct WhitneyKey {
    pub k: i32,
    pub it: i64,
    pub ix: [i64; MAX_SPATIAL_DIM],
}

impl WhitneyKey {
    pub fn to_box(self, dim: usize) -> PBox {
        let ts = (4.0f64).powi(-self.k);
        let xs = (2.0f64).powi(-self.k);
        let mut x_lo = [0.0; MAX_SPATIAL_DIM];
        let mut x_hi = [0.0; MAX_SPATIAL_DIM];
        for a in 0..dim {
            x_lo[a] = self.ix[a] as f64 * xs;
            x_hi[a] = (self.ix[a] + 1) as f64 * xs;
        }
        PBox {
            t_lo: self.it as f64 * ts,
            t_hi: (self.it + 1) as f64 * ts,
            x_lo,
            x_hi,
            dim,
        }
    }

    /// Parabolic diameter of the box: `2^-k (sqrt(dim) + 1)`.
    #[inline]
    pub fn diam(&self, dim: usize) -> f64 {
        (2.0f64).powi(-self.k) * ((dim as f64).sqrt() + 1.0)
    }

    /// The `4 * 2^dim` children (time splits into 4, each spatial side into 2).
    pub fn children(&self, dim: usize) -> Vec<WhitneyKey> {
        let mut out = Vec::with_capacity(4 << dim);
        let spatial = 1usize << dim;
        for s in 0..spatial {
            for dt in 0..4i64 {
                let mut ix = [0i64; MAX_SPATIAL_DIM];
                for a in 0..dim {
                    ix[a] = self.ix[a] * 2 + ((s >> a) & 1) as i64;
                }
                out.push(WhitneyKey {
                    k: self.k + 1,
                    it: self.it * 4 + dt,
                    ix,
                });
            }
        }
        out
    }

    /// Key of the scale-`k` lattice box containing `p`.
    pub fn containing(p: &ParaPoint, k: i32) -> WhitneyKey {
        let ts = (4.0f64).powi(-k);
        let xs = (2.0f64).powi(-k);
        let mut ix = [0i64; MAX_SPATIAL_DIM];
        for a in 0..p.dim() {
            ix[a] = (p.x()[a] / xs).floor() as i64;
        }
        WhitneyKey {
            k,
            it: (p.t / ts).floor() as i64,
            ix,
        }
    }
}

/// An accepted Whitney box with its cached distance to `E`.
#[derive(Clone, Copy, Debug)]
pub struct WhitneyCube {
    pub key: WhitneyKey,
    pub dist_e: f64,
}

#[derive(Clone, Debug)]
pub struct WhitneyDecomposition {
    pub dim: usize,
    /// Sorted by key (scale, then time, then space).
    pub cubes: Vec<WhitneyCube>,
    /// Boxes still unresolved at `max_k` (the sliver hugging `E`).
    pub discarded_volume: f64,
    pub discarded_count: usize,
    /// Boxes skipped by a locality filter (local queries only).
    pub pruned_volume: f64,
    /// Accepted boxes violating `dist(I,E) <= 100 diam(I)` (possible only for
    /// root tiles of an oversized window).
    pub far_field_count: usize,
    pub window: PBox,
    pub k_root: i32,
    pub max_k: i32,
}

impl WhitneyDecomposition {
    pub fn bx(&self, i: usize) -> PBox {
        self.cubes[i].key.to_box(self.dim)
    }

    pub fn diam(&self, i: usize) -> f64 {
        self.cubes[i].key.diam(self.dim)
    }

    /// Contiguous index range of the cubes at scale `k`.
    pub fn scale_range(&self, k: i32) -> std::ops::Range<usize> {
        let lo = self.cubes.partition_point(|c| c.key.k < k);
        let hi = self.cubes.partition_point(|c| c.key.k <= k);
        lo..hi
    }

    pub fn key_index(&self) -> HashMap<WhitneyKey, usize> {
        self.cubes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.key, i))
            .collect()
    }

    /// Index of the accepted cube containing `p`, walking scales via the key
    /// lattice. `None` when `p` lies in the discarded/pruned remainder.
    pub fn locate(&self, p: &ParaPoint, index: &HashMap<WhitneyKey, usize>) -> Option<usize> {
        for k in self.k_root..=self.max_k {
            if let Some(&i) = index.get(&WhitneyKey::containing(p, k)) {
                return Some(i);
            }
        }
        None
    }
}

fn near_int(v: f64) -> Option<i64> {
    let r = v.round();
    ((v - r).abs() <= 1e-9).then_some(r as i64)
}

/// Root tiles of the window at scale `k_root`; the window must be aligned.
fn root_keys(window: &PBox, k_root: i32, dim: usize) -> Result<Vec<WhitneyKey>> {
    let ts = (4.0f64).powi(-k_root);
    let xs = (2.0f64).powi(-k_root);
    let t0 = near_int(window.t_lo / ts).ok_or_else(|| {
        Error::Misaligned(format!("window t_lo {} at scale {k_root}", window.t_lo))
    })?;
    let t1 = near_int(window.t_hi / ts).ok_or_else(|| {
        Error::Misaligned(format!("window t_hi {} at scale {k_root}", window.t_hi))
    })?;
    let mut ranges = [(0i64, 0i64); MAX_SPATIAL_DIM];
    for a in 0..dim {
        let lo = near_int(window.x_lo[a] / xs)
            .ok_or_else(|| Error::Misaligned(format!("window x_lo[{a}]")))?;
        let hi = near_int(window.x_hi[a] / xs)
            .ok_or_else(|| Error::Misaligned(format!("window x_hi[{a}]")))?;
        ranges[a] = (lo, hi);
    }
    let mut keys = Vec::new();
    let (xr0, xr1) = (ranges[0], if dim == 2 { ranges[1] } else { (0, 1) });
    for it in t0..t1 {
        for i0 in xr0.0..xr0.1 {
            for i1 in xr1.0..xr1.1 {
                keys.push(WhitneyKey {
                    k: k_root,
                    it,
                    ix: [i0, i1],
                });
            }
        }
    }
    if keys.is_empty() {
        return Err(Error::Param("empty Whitney window".into()));
    }
    Ok(keys)
}

struct Wctx<'a> {
    g: &'a SampledGraph,
    dim: usize,
    max_k: i32,
    focus: Option<(PBox, f64)>,
}

/// Acceptance predicate shared by enumeration and point location.
fn try_accept(g: &SampledGraph, bx: &PBox, diam: f64) -> Option<f64> {
    let d4 = g.dist_box_to_samples(&bx.dilate(4.0), None);
    if d4 >= 4.0 * diam {
        Some(g.dist_box_to_samples(bx, Some(d4 + 8.0 * diam)))
    } else {
        None
    }
}

#[derive(Default)]
struct DescOut {
    cubes: Vec<WhitneyCube>,
    discarded_volume: f64,
    discarded_count: usize,
    pruned_volume: f64,
    far_field_count: usize,
}

impl DescOut {
    fn merge(mut self, other: DescOut) -> DescOut {
        self.cubes.extend(other.cubes);
        self.discarded_volume += other.discarded_volume;
        self.discarded_count += other.discarded_count;
        self.pruned_volume += other.pruned_volume;
        self.far_field_count += other.far_field_count;
        self
    }
}

fn descend(ctx: &Wctx, key: WhitneyKey, par_depth: u32) -> DescOut {
    let mut out = DescOut::default();
    let bx = key.to_box(ctx.dim);
    if let Some((focus, reach)) = &ctx.focus {
        if bx.dist_to_box(focus) > *reach {
            out.pruned_volume += bx.volume();
            return out;
        }
    }
    let diam = key.diam(ctx.dim);
    if let Some(dist_e) = try_accept(ctx.g, &bx, diam) {
        if dist_e > 100.0 * diam {
            out.far_field_count += 1;
        }
        out.cubes.push(WhitneyCube { key, dist_e });
        return out;
    }
    if key.k >= ctx.max_k {
        out.discarded_volume += bx.volume();
        out.discarded_count += 1;
        return out;
    }
    let children = key.children(ctx.dim);
    if par_depth > 0 {
        use rayon::prelude::*;
        // Ordered collect keeps float accumulation deterministic.
        let parts: Vec<DescOut> = children
            .into_par_iter()
            .map(|c| descend(ctx, c, par_depth - 1))
            .collect();
        parts.into_iter().fold(out, DescOut::merge)
    } else {
        children
            .into_iter()
            .fold(out, |acc, c| acc.merge(descend(ctx, c, 0)))
    }
}

/// Global Whitney decomposition of `window \ E`, refined down to boxes of
/// scale `2^-max_k`. Boxes still meeting the sliver around `E` at `max_k` are
/// discarded and accounted.
pub fn whitney_decompose(
    g: &SampledGraph,
    window: &PBox,
    k_root: i32,
    max_k: i32,
) -> Result<WhitneyDecomposition> {
    decompose_inner(g, window, k_root, max_k, None)
}

/// Local Whitney enumeration: only boxes within `reach` of `focus` are
/// refined or kept. Cube identities agree with the global decomposition.
pub fn whitney_cubes_near(
    g: &SampledGraph,
    window: &PBox,
    k_root: i32,
    max_k: i32,
    focus: &PBox,
    reach: f64,
) -> Result<WhitneyDecomposition> {
    decompose_inner(g, window, k_root, max_k, Some((*focus, reach)))
}

fn decompose_inner(
    g: &SampledGraph,
    window: &PBox,
    k_root: i32,
    max_k: i32,
    focus: Option<(PBox, f64)>,
) -> Result<WhitneyDecomposition> {
    let dim = g.ambient;
    if window.dim != dim {
        return Err(Error::DimensionMismatch(window.dim, dim));
    }
    if max_k < k_root {
        return Err(Error::Param("max_k must be >= k_root".into()));
    }
    let keys = root_keys(window, k_root, dim)?;
    let ctx = Wctx {
        g,
        dim,
        max_k,
        focus,
    };
    use rayon::prelude::*;
    let parts: Vec<DescOut> = keys
        .into_par_iter()
        .map(|key| descend(&ctx, key, 2))
        .collect();
    let merged = parts.into_iter().fold(DescOut::default(), DescOut::merge);
    let mut out = WhitneyDecomposition {
        dim,
        cubes: merged.cubes,
        discarded_volume: merged.discarded_volume,
        discarded_count: merged.discarded_count,
        pruned_volume: merged.pruned_volume,
        far_field_count: merged.far_field_count,
        window: *window,
        k_root,
        max_k,
    };
    if out.cubes.is_empty() && out.pruned_volume == 0.0 {
        return Err(Error::Param(
            "window too small to contain any accepted Whitney cube".into(),
        ));
    }
    out.cubes.sort_by_key(|c| c.key);
    Ok(out)
}

/// The accepted Whitney cube containing `p`, or `None` when `p` falls in the
/// sliver still unresolved at `max_k`. Walks one root-to-leaf path, so it
/// resolves scales far below what a global enumeration could afford.
pub fn locate_cube(
    g: &SampledGraph,
    window: &PBox,
    k_root: i32,
    max_k: i32,
    p: &ParaPoint,
) -> Result<Option<WhitneyCube>> {
    if !window.contains(p) {
        return Err(Error::OutOfWindow {
            t: p.t,
            x: p.x().to_vec(),
        });
    }
    let dim = g.ambient;
    for k in k_root..=max_k {
        let key = WhitneyKey::containing(p, k);
        let bx = key.to_box(dim);
        if let Some(dist_e) = try_accept(g, &bx, key.diam(dim)) {
            return Ok(Some(WhitneyCube { key, dist_e }));
        }
    }
    Ok(None)
}

/// Per-cube check of the defining inequalities; returns the indices of
/// violating cubes (empty on a valid decomposition).
pub fn verify_whitney_bounds(dec: &WhitneyDecomposition, g: &SampledGraph) -> Vec<usize> {
    let mut bad = Vec::new();
    for (i, c) in dec.cubes.iter().enumerate() {
        let bx = c.key.to_box(dec.dim);
        let diam = c.key.diam(dec.dim);
        let d4 = g.dist_box_to_samples(&bx.dilate(4.0), None);
        if !(4.0 * diam <= d4 + 1e-12 && d4 <= c.dist_e + 1e-12 && c.dist_e <= 100.0 * diam) {
            bad.push(i);
        }
    }
    bad
}

/// A Whitney region: the members of a decomposition at the scale and location
/// of a boundary cube `Q`.
#[derive(Clone, Debug)]
pub struct WhitneyRegion {
    pub q: CubeId,
    pub q_diam: f64,
    pub eta: f64,
    pub k_const: f64,
    pub star: bool,
    /// Indices into the source decomposition.
    pub members: Vec<usize>,
    pub dist_iq: Vec<f64>,
}

/// Ambient bounding box of a cube on the graph.
pub fn cube_bbox(tree: &CubeTree, q: &CubeId) -> PBox {
    let d = &tree.cubes[q];
    let sd = tree.graph.grid().spatial_dim;
    let (t_lo, t_hi) = q.base_t_range();
    let mut x_lo = [0.0; MAX_SPATIAL_DIM];
    let mut x_hi = [0.0; MAX_SPATIAL_DIM];
    if sd == 1 {
        let (a, b) = q.base_x_range();
        x_lo[0] = a;
        x_hi[0] = b;
    }
    x_lo[sd] = d.f_min;
    x_hi[sd] = d.f_max;
    PBox {
        t_lo,
        t_hi,
        x_lo,
        x_hi,
        dim: sd + 1,
    }
}

/// Region thresholds: `lo <= dist(I, E)` and `dist(I, Q) <= hi`.
pub fn region_thresholds(eta: f64, k_const: f64, star: bool, dq: f64) -> (f64, f64) {
    if star {
        (eta.powi(4) * dq, k_const * dq)
    } else {
        (eta.powf(0.25) * dq, k_const.powf(0.25) * dq)
    }
}

/// Filter a decomposition into the region of `Q`. Non-star keeps cubes with
/// `eta^(1/4) diam(Q) <= dist(I,E)` and `dist(I,Q) <= K^(1/4) diam(Q)`;
/// star relaxes to `eta^4` and `K`. Requires `eta * K = 1`.
pub fn whitney_region(
    q: &CubeId,
    eta: f64,
    k_const: f64,
    star: bool,
    dec: &WhitneyDecomposition,
    tree: &CubeTree,
) -> Result<WhitneyRegion> {
    if (eta * k_const - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!(
            "eta * K must be 1, got {}",
            eta * k_const
        )));
    }
    let data = tree
        .data(q)
        .ok_or_else(|| Error::Param(format!("{q} not in tree")))?;
    let dq = data.diam;
    let (lo, hi) = region_thresholds(eta, k_const, star, dq);
    let qb = cube_bbox(tree, q);
    let mut members = Vec::new();
    let mut dist_iq = Vec::new();
    for k in dec.k_root..=dec.max_k {
        let range = dec.scale_range(k);
        if range.is_empty() {
            continue;
        }
        // Candidate time slots: boxes farther than `hi` in time alone cannot
        // qualify.
        let ts = (4.0f64).powi(-k);
        let it_lo = ((qb.t_lo - hi * hi) / ts).floor() as i64;
        let it_hi = ((qb.t_hi + hi * hi) / ts).ceil() as i64;
        let slice = &dec.cubes[range.clone()];
        let start = slice.partition_point(|c| c.key.it < it_lo);
        for (off, c) in slice[start..].iter().enumerate() {
            if c.key.it > it_hi {
                break;
            }
            let i = range.start + start + off;
            if c.dist_e < lo {
                continue;
            }
            let bx = c.key.to_box(dec.dim);
            if bx.dist_to_box(&qb) > hi {
                continue;
            }
            let d = tree.dist_box_to_cube(&bx, q, hi + 1e-12);
            if d <= hi {
                debug_assert!(c.dist_e <= d + 1e-9);
                members.push(i);
                dist_iq.push(d);
            }
        }
    }
    Ok(WhitneyRegion {
        q: *q,
        q_diam: dq,
        eta,
        k_const,
        star,
        members,
        dist_iq,
    })
}

/// Where a region query gets its Whitney cubes: a prebuilt global
/// decomposition, or a per-cube local enumeration whose reach and depth are
/// derived from the region thresholds (the only affordable route when the
/// thresholds sit far below the globally enumerable scale).
#[derive(Clone, Debug)]
pub enum RegionSource<'a> {
    Global(&'a WhitneyDecomposition),
    Local {
        window: PBox,
        k_root: i32,
        /// Hard cap on the local refinement depth.
        max_k_cap: i32,
    },
}

/// Decomposition handle returned by [`region_with_source`].
pub enum DecHandle<'a> {
    Ref(&'a WhitneyDecomposition),
    Owned(Box<WhitneyDecomposition>),
}

impl DecHandle<'_> {
    pub fn get(&self) -> &WhitneyDecomposition {
        match self {
            DecHandle::Ref(d) => d,
            DecHandle::Owned(d) => d,
        }
    }
}

/// Region of `Q` from the chosen source. The local route enumerates only
/// boxes within the outer threshold of the cube and refines until the
/// smallest admissible member scale (`lo/32`), so its member set agrees with
/// a sufficiently deep global enumeration on the covered scales.
pub fn region_with_source<'a>(
    q: &CubeId,
    eta: f64,
    k_const: f64,
    star: bool,
    source: &'a RegionSource<'a>,
    tree: &CubeTree,
) -> Result<(DecHandle<'a>, WhitneyRegion)> {
    match source {
        RegionSource::Global(dec) => {
            let r = whitney_region(q, eta, k_const, star, dec, tree)?;
            Ok((DecHandle::Ref(dec), r))
        }
        RegionSource::Local {
            window,
            k_root,
            max_k_cap,
        } => {
            let data = tree
                .data(q)
                .ok_or_else(|| Error::Param(format!("{q} not in tree")))?;
            let (lo, hi) = region_thresholds(eta, k_const, star, data.diam);
            let focus = cube_bbox(tree, q);
            let max_k = ((32.0 / lo).log2().ceil() as i32).min(*max_k_cap).max(*k_root);
            let dec = whitney_cubes_near(&tree.graph, window, *k_root, max_k, &focus, hi)?;
            let r = whitney_region(q, eta, k_const, star, &dec, tree)?;
            Ok((DecHandle::Owned(Box::new(dec)), r))
        }
    }
}

/// Maximum multiplicity with which decomposition cubes are claimed by the
/// given regions.
pub fn overlap_count(regions: &[WhitneyRegion]) -> usize {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for r in regions {
        for &m in &r.members {
            *counts.entry(m).or_insert(0) += 1;
        }
    }
    counts.values().cloned().max().unwrap_or(0)
}

#[derive(Clone, Debug)]
pub struct RegionSplit {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    /// Smallest measured `dist(I, Γ) / diam(Q)` over members.
    pub min_margin: f64,
}

/// Split a region into the members above/below the approximating graph, by
/// the sign of `x_n - f(t, x')` at the box center. Every member must stay at
/// distance `eta^(1/2) diam(Q)` from the graph and must not straddle it;
/// violations signal that `Q` does not belong to a regime this graph
/// approximates.
pub fn split_region_by_graph(
    region: &WhitneyRegion,
    dec: &WhitneyDecomposition,
    gamma: &SampledGraph,
) -> Result<RegionSplit> {
    let required = region.eta.sqrt() * region.q_diam;
    let sd = gamma.grid().spatial_dim;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    let mut min_margin = f64::INFINITY;
    for &i in &region.members {
        let bx = dec.bx(i);
        let dg = gamma.dist_box_to_samples(&bx, None);
        min_margin = min_margin.min(dg / region.q_diam);
        if dg < required {
            return Err(Error::SeparationViolation {
                at: format!("{:?}", dec.cubes[i].key),
                dist: dg,
                required,
            });
        }
        // Sign at the center, corners must agree.
        let center = bx.center();
        let sign = center.x()[sd] - gamma.height(center.t, &center.x()[..sd]);
        let mut consistent = true;
        for corner in box_corners(&bx) {
            let s = corner.x()[sd] - gamma.height(corner.t, &corner.x()[..sd]);
            if s * sign <= 0.0 {
                consistent = false;
            }
        }
        if !consistent {
            return Err(Error::SeparationViolation {
                at: format!("{:?} straddles the graph", dec.cubes[i].key),
                dist: dg,
                required,
            });
        }
        if sign > 0.0 {
            plus.push(i);
        } else {
            minus.push(i);
        }
    }
    Ok(RegionSplit {
        plus,
        minus,
        min_margin,
    })
}

pub(crate) fn box_corners(b: &PBox) -> Vec<ParaPoint> {
    let mut out = Vec::with_capacity(2usize.pow(b.dim as u32 + 1));
    for tm in [b.t_lo, b.t_hi] {
        for mask in 0..(1usize << b.dim) {
            let mut x = [0.0; MAX_SPATIAL_DIM];
            for a in 0..b.dim {
                x[a] = if (mask >> a) & 1 == 0 {
                    b.x_lo[a]
                } else {
                    b.x_hi[a]
                };
            }
            out.push(ParaPoint::new(tm, &x[..b.dim]));
        }
    }
    out
}
