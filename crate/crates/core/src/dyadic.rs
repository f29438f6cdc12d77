//! Parabolic dyadic cubes on the graph domain and the induced cubes on the
//! graph set `E = F(R^n)`: generation arithmetic, dilates, and verification
//! of the partition/nesting/thin-boundary axioms.
//!
//! A base cube at generation `k` has time side `4^-k` and spatial sides
//! `2^-k`, anchored on the absolute lattice. Cubes on `E` are the images
//! `F(base cube)` with centers `F(base-cube center)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pargeo::{ParaPoint, PBox, SampledGraph, MAX_SPATIAL_DIM};

/// Identifier of a base cube: generation plus one time index and one spatial
/// index (the latter fixed to 0 when the graph domain has no spatial axis).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CubeId {
    pub k: i32,
    pub it: i64,
    pub ix: i64,
}

impl CubeId {
    pub fn new(k: i32, it: i64, ix: i64) -> Self {
        Self { k, it, ix }
    }

    /// Spatial side length `2^-k`.
    #[inline]
    pub fn side(&self) -> f64 {
        (2.0f64).powi(-self.k)
    }

    /// Time side length `4^-k`.
    #[inline]
    pub fn t_side(&self) -> f64 {
        (4.0f64).powi(-self.k)
    }

    /// Parent: the time index divides by 4, spatial indices by 2.
    pub fn parent(&self) -> CubeId {
        CubeId {
            k: self.k - 1,
            it: self.it.div_euclid(4),
            ix: self.ix.div_euclid(2),
        }
    }

    /// Children: the time side splits into 4, each spatial side into 2,
    /// giving `4 * 2^(n-1)` children.
    pub fn children(&self, ambient: usize) -> Vec<CubeId> {
        let spatial_splits = if ambient >= 2 { 2 } else { 1 };
        let mut out = Vec::with_capacity(4 * spatial_splits);
        for dx in 0..spatial_splits as i64 {
            for dt in 0..4 {
                out.push(CubeId {
                    k: self.k + 1,
                    it: self.it * 4 + dt,
                    ix: self.ix * 2 + dx,
                });
            }
        }
        out
    }

    /// Ancestor at generation `k <= self.k`.
    pub fn ancestor(&self, k: i32) -> CubeId {
        assert!(k <= self.k);
        let d = self.k - k;
        CubeId {
            k,
            it: self.it.div_euclid(4i64.pow(d as u32)),
            ix: self.ix.div_euclid(2i64.pow(d as u32)),
        }
    }

    /// Whether `other` is contained in `self` (as base boxes).
    pub fn contains(&self, other: &CubeId) -> bool {
        other.k >= self.k && other.ancestor(self.k) == *self
    }

    /// The base box time range in the graph domain.
    pub fn base_t_range(&self) -> (f64, f64) {
        let s = self.t_side();
        (self.it as f64 * s, (self.it + 1) as f64 * s)
    }

    pub fn base_x_range(&self) -> (f64, f64) {
        let s = self.side();
        (self.ix as f64 * s, (self.ix + 1) as f64 * s)
    }
}

impl std::fmt::Display for CubeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q(k={},it={},ix={})", self.k, self.it, self.ix)
    }
}

/// Per-cube data for the cube on `E`.
#[derive(Clone, Debug)]
pub struct CubeData {
    /// `F(base-cube center)`.
    pub center: ParaPoint,
    /// Parabolic diameter of the cube on the graph: box diagonal inflated by
    /// the height oscillation over the cube's samples.
    pub diam: f64,
    /// Projected surface measure (sample count times cell measure; exact for
    /// lattice-aligned grids).
    pub measure: f64,
    /// Half-open sample index ranges covered by the base box.
    pub it_range: (usize, usize),
    pub ix_range: (usize, usize),
    pub f_min: f64,
    pub f_max: f64,
}

/// The full tree of cubes on a graph set over a generation range.
#[derive(Clone, Debug)]
pub struct CubeTree {
    pub graph: Arc<SampledGraph>,
    pub k_min: i32,
    pub k_max: i32,
    pub cubes: BTreeMap<CubeId, CubeData>,
}

fn near_integer(v: f64, tol: f64) -> Option<i64> {
    let r = v.round();
    if (v - r).abs() <= tol {
        Some(r as i64)
    } else {
        None
    }
}

/// Build the cube tree over `[k_min, k_max]`. The grid box must tile exactly
/// by generation-`k_min` cubes and the spatial step must divide the leaf cube
/// sides, so that sample counts give exact cube measures.
pub fn build_cubes_on_graph(
    graph: Arc<SampledGraph>,
    k_min: i32,
    k_max: i32,
) -> Result<CubeTree> {
    let g = graph.grid().clone();
    let sd = g.spatial_dim;
    if k_max < k_min {
        return Err(Error::Param("k_max must be >= k_min".into()));
    }
    let leaf_side = (2.0f64).powi(-k_max);
    if leaf_side < 4.0 * g.delta {
        return Err(Error::ResolutionFloor {
            requested: leaf_side,
            floor: 4.0 * g.delta,
        });
    }
    let t_side_min = (4.0f64).powi(-k_min);
    let x_side_min = (2.0f64).powi(-k_min);
    let tol = 1e-9;
    let it0 = near_integer(g.t0 / t_side_min, tol)
        .ok_or_else(|| Error::Misaligned(format!("t0 = {} vs time side {}", g.t0, t_side_min)))?;
    let nt = near_integer((g.t_end() - g.t0) / t_side_min, tol)
        .ok_or_else(|| Error::Misaligned("time extent not a multiple of the top cube".into()))?;
    let (ix0, nx) = if sd == 1 {
        let a = near_integer(g.x0[0] / x_side_min, tol)
            .ok_or_else(|| Error::Misaligned(format!("x0 = {}", g.x0[0])))?;
        let m = near_integer((g.x_end(0) - g.x0[0]) / x_side_min, tol).ok_or_else(|| {
            Error::Misaligned("spatial extent not a multiple of the top cube".into())
        })?;
        (a, m)
    } else {
        (0, 1)
    };
    let leaf_t = (4.0f64).powi(-k_max);
    if near_integer(leaf_t / g.time_step(), tol).is_none()
        || (sd == 1 && near_integer(leaf_side / g.delta, tol).is_none())
    {
        return Err(Error::Misaligned(
            "grid step does not divide the leaf cube sides".into(),
        ));
    }
    if nt <= 0 || (sd == 1 && nx <= 0) {
        return Err(Error::Param("empty generation range".into()));
    }

    let mut cubes: BTreeMap<CubeId, CubeData> = BTreeMap::new();
    let t_per_leaf = (leaf_t / g.time_step()).round() as usize;
    let x_per_leaf = if sd == 1 {
        (leaf_side / g.delta).round() as usize
    } else {
        1
    };
    let depth = (k_max - k_min) as u32;
    let leaf_it0 = it0 * 4i64.pow(depth);
    let leaf_ix0 = ix0 * 2i64.pow(depth);
    let leaf_nt = nt * 4i64.pow(depth);
    let leaf_nx = if sd == 1 { nx * 2i64.pow(depth) } else { 1 };
    for lt in 0..leaf_nt {
        for lx in 0..leaf_nx {
            let id = CubeId::new(k_max, leaf_it0 + lt, leaf_ix0 + lx);
            let itr = (lt as usize * t_per_leaf, (lt as usize + 1) * t_per_leaf);
            let ixr = (lx as usize * x_per_leaf, (lx as usize + 1) * x_per_leaf);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for it in itr.0..itr.1 {
                for ix in ixr.0..ixr.1 {
                    let v = if sd == 1 {
                        graph.field.at(it, &[ix])
                    } else {
                        graph.field.at(it, &[])
                    };
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            cubes.insert(id, make_data(&graph, id, itr, ixr, lo, hi));
        }
    }
    for k in (k_min..k_max).rev() {
        let child_ids: Vec<CubeId> = cubes.keys().filter(|c| c.k == k + 1).cloned().collect();
        let mut groups: BTreeMap<CubeId, Vec<CubeId>> = BTreeMap::new();
        for c in child_ids {
            groups.entry(c.parent()).or_default().push(c);
        }
        for (pid, kids) in groups {
            let mut itr = (usize::MAX, 0usize);
            let mut ixr = (usize::MAX, 0usize);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for c in &kids {
                let d = &cubes[c];
                itr = (itr.0.min(d.it_range.0), itr.1.max(d.it_range.1));
                ixr = (ixr.0.min(d.ix_range.0), ixr.1.max(d.ix_range.1));
                lo = lo.min(d.f_min);
                hi = hi.max(d.f_max);
            }
            cubes.insert(pid, make_data(&graph, pid, itr, ixr, lo, hi));
        }
    }
    Ok(CubeTree {
        graph,
        k_min,
        k_max,
        cubes,
    })
}

fn make_data(
    graph: &SampledGraph,
    id: CubeId,
    it_range: (usize, usize),
    ix_range: (usize, usize),
    f_min: f64,
    f_max: f64,
) -> CubeData {
    let g = graph.grid();
    let sd = g.spatial_dim;
    let (t_lo, t_hi) = id.base_t_range();
    let osc = f_max - f_min;
    let spatial = if sd == 1 { id.side() } else { 0.0 };
    let diam = (spatial * spatial + osc * osc).sqrt() + (t_hi - t_lo).sqrt();
    let tc = 0.5 * (t_lo + t_hi);
    let mut x = [0.0; MAX_SPATIAL_DIM];
    if sd == 1 {
        let (a, b) = id.base_x_range();
        x[0] = 0.5 * (a + b);
    }
    x[sd] = graph.height(tc, &x[..sd]);
    let count = (it_range.1 - it_range.0) * (ix_range.1 - ix_range.0);
    CubeData {
        center: ParaPoint::new(tc, &x[..sd + 1]),
        diam,
        measure: count as f64 * g.cell_measure(),
        it_range,
        ix_range,
        f_min,
        f_max,
    }
}

impl CubeTree {
    pub fn data(&self, id: &CubeId) -> Option<&CubeData> {
        self.cubes.get(id)
    }

    pub fn generation(&self, k: i32) -> impl Iterator<Item = (&CubeId, &CubeData)> {
        self.cubes
            .range(CubeId::new(k, i64::MIN, i64::MIN)..=CubeId::new(k, i64::MAX, i64::MAX))
    }

    pub fn children_of(&self, id: &CubeId) -> Vec<CubeId> {
        id.children(self.graph.ambient)
            .into_iter()
            .filter(|c| self.cubes.contains_key(c))
            .collect()
    }

    /// All cubes contained in `q`, `q` included.
    pub fn descendants(&self, q: &CubeId) -> Vec<CubeId> {
        self.cubes
            .keys()
            .filter(|c| q.contains(c))
            .cloned()
            .collect()
    }

    /// The cube of generation `k` owning a sample (exists by the partition
    /// property whenever the sample is in the tree's box).
    pub fn cube_of_sample(&self, it: usize, ix: usize, k: i32) -> CubeId {
        let g = self.graph.grid();
        let tc = g.t_center(it);
        let c_it = (tc / (4.0f64).powi(-k)).floor() as i64;
        let c_ix = if g.spatial_dim == 1 {
            (g.x_center(0, ix) / (2.0f64).powi(-k)).floor() as i64
        } else {
            0
        };
        CubeId::new(k, c_it, c_ix)
    }

    /// Exact distance from an ambient point to the sampled cube, capped.
    pub fn dist_point_to_cube(&self, p: &ParaPoint, id: &CubeId, cap: f64) -> f64 {
        let d = &self.cubes[id];
        self.graph
            .dist_point_to_samples_in(p, d.it_range, d.ix_range, cap)
    }

    /// Exact distance from a closed box to the sampled cube, capped.
    pub fn dist_box_to_cube(&self, b: &PBox, id: &CubeId, cap: f64) -> f64 {
        let d = &self.cubes[id];
        self.graph
            .dist_box_to_samples_in(b, d.it_range, d.ix_range, cap)
    }

    /// Base-domain lower bound for `dist_point_to_cube` (cheap reject).
    pub fn dist_lower_bound(&self, p: &ParaPoint, id: &CubeId) -> f64 {
        let sd = self.graph.grid().spatial_dim;
        let (t_lo, t_hi) = id.base_t_range();
        let tg = if p.t < t_lo {
            t_lo - p.t
        } else if p.t > t_hi {
            p.t - t_hi
        } else {
            0.0
        };
        let xg = if sd == 1 {
            let (a, b) = id.base_x_range();
            if p.x()[0] < a {
                a - p.x()[0]
            } else if p.x()[0] > b {
                p.x()[0] - b
            } else {
                0.0
            }
        } else {
            0.0
        };
        xg + tg.sqrt()
    }

    /// Flat sample indices belonging to a cube.
    pub fn sample_indices(&self, id: &CubeId) -> Vec<usize> {
        let d = &self.cubes[id];
        let g = self.graph.grid();
        let mut out =
            Vec::with_capacity((d.it_range.1 - d.it_range.0) * (d.ix_range.1 - d.ix_range.0));
        for ix in d.ix_range.0..d.ix_range.1 {
            for it in d.it_range.0..d.it_range.1 {
                out.push(if g.spatial_dim == 1 {
                    g.index(it, &[ix])
                } else {
                    g.index(it, &[])
                });
            }
        }
        out
    }
}

/// Sampled points of `E` within the `K`-dilate of `Q`:
/// `{p in E : dist(p, Q) < (K-1) diam(Q)}`. Returns flat sample indices.
pub fn dilate(q: &CubeId, k_factor: f64, tree: &CubeTree) -> Result<Vec<usize>> {
    if k_factor <= 1.0 {
        return Err(Error::Param("dilate factor must be > 1".into()));
    }
    let data = tree
        .data(q)
        .ok_or_else(|| Error::Param(format!("{q} not in tree")))?;
    let thr = (k_factor - 1.0) * data.diam;
    let g = tree.graph.grid();
    let mut out = Vec::new();
    for idx in 0..g.len() {
        let p = tree.graph.point_flat(idx);
        if tree.dist_lower_bound(&p, q) >= thr {
            continue;
        }
        let d = tree.dist_point_to_cube(&p, q, thr);
        if d < thr {
            out.push(idx);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomReport {
    /// `diam(Q) / 2^-k` extremes over the tree.
    pub diam_ratio_min: f64,
    pub diam_ratio_max: f64,
    /// Largest `a0` such that every cube contains all samples within
    /// `a0 * 2^-k` of its center.
    pub a0_min: f64,
    /// Thin-boundary exponent fitted from the worst per-cube boundary-layer
    /// fraction against the layer width.
    pub gamma_fit: f64,
    pub gamma_c_fit: f64,
    pub boundary_fractions: Vec<(f64, f64)>,
}

/// Exact checks of the partition/nesting/ancestor/containment axioms, plus a
/// statistical fit of the thin-boundary estimate. Structural violations are
/// hard errors naming the cube.
pub fn verify_cube_axioms(tree: &CubeTree, varrho: &[f64]) -> Result<AxiomReport> {
    let g = tree.graph.grid();
    let total = g.len();
    let sd = g.spatial_dim;
    // Partition: per generation, every sample in exactly one cube.
    for k in tree.k_min..=tree.k_max {
        let mut seen = vec![false; total];
        for (id, d) in tree.generation(k) {
            for ix in d.ix_range.0..d.ix_range.1 {
                for it in d.it_range.0..d.it_range.1 {
                    let f = if sd == 1 {
                        g.index(it, &[ix])
                    } else {
                        g.index(it, &[])
                    };
                    if seen[f] {
                        return Err(Error::AxiomViolation {
                            cube: id.to_string(),
                            what: "sample covered twice in one generation".into(),
                        });
                    }
                    seen[f] = true;
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::AxiomViolation {
                cube: format!("generation {k}"),
                what: "generation does not cover the sampled set".into(),
            });
        }
    }
    // Nesting and unique ancestors: each cube's sample block sits inside its
    // parent's block, and the parent exists.
    for (id, d) in tree.cubes.iter() {
        if id.k == tree.k_min {
            continue;
        }
        let pid = id.parent();
        let pd = tree.data(&pid).ok_or_else(|| Error::AxiomViolation {
            cube: id.to_string(),
            what: "parent missing".into(),
        })?;
        let nested = pd.it_range.0 <= d.it_range.0
            && d.it_range.1 <= pd.it_range.1
            && pd.ix_range.0 <= d.ix_range.0
            && d.ix_range.1 <= pd.ix_range.1;
        if !nested {
            return Err(Error::AxiomViolation {
                cube: id.to_string(),
                what: "sample block not nested in parent".into(),
            });
        }
    }
    // Measures must add up exactly across children.
    for (id, d) in tree.cubes.iter() {
        if id.k == tree.k_max {
            continue;
        }
        let s: f64 = tree
            .children_of(id)
            .iter()
            .map(|c| tree.cubes[c].measure)
            .sum();
        if (s - d.measure).abs() > 1e-12 * d.measure.max(1e-300) {
            return Err(Error::AxiomViolation {
                cube: id.to_string(),
                what: format!("children measures sum to {s}, cube has {}", d.measure),
            });
        }
    }
    // Diameter comparability and the interior-ball property.
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = 0.0f64;
    let mut a0_min = f64::INFINITY;
    for (id, d) in tree.cubes.iter() {
        let ratio = d.diam / id.side();
        ratio_min = ratio_min.min(ratio);
        ratio_max = ratio_max.max(ratio);
        let r = dist_to_complement(tree, &d.center, d, f64::INFINITY);
        if r <= 0.0 {
            return Err(Error::AxiomViolation {
                cube: id.to_string(),
                what: "center touches the complement".into(),
            });
        }
        a0_min = a0_min.min(r / id.side());
    }
    // Thin boundary: fit worst-case layer fraction ~ c * rho^gamma. The
    // base-domain gap to the cube's box faces lower-bounds the distance to
    // the complement, which rejects interior samples in O(1).
    let mut fractions = Vec::new();
    for &rho in varrho {
        let mut worst = 0.0f64;
        for (id, d) in tree.cubes.iter() {
            let thr = rho * id.side();
            let (t_lo, t_hi) = id.base_t_range();
            let (x_lo, x_hi) = id.base_x_range();
            let mut cnt = 0usize;
            for ix in d.ix_range.0..d.ix_range.1 {
                for it in d.it_range.0..d.it_range.1 {
                    let tc = g.t_center(it);
                    let mut lb = (tc - t_lo).min(t_hi - tc).max(0.0).sqrt();
                    if sd == 1 {
                        let xc = g.x_center(0, ix);
                        lb = lb.min((xc - x_lo).min(x_hi - xc).max(0.0));
                    }
                    if lb >= thr {
                        continue;
                    }
                    let p = if sd == 1 {
                        tree.graph.point(it, &[ix])
                    } else {
                        tree.graph.point(it, &[])
                    };
                    if dist_to_complement(tree, &p, d, thr) < thr {
                        cnt += 1;
                    }
                }
            }
            let total_q = (d.it_range.1 - d.it_range.0) * (d.ix_range.1 - d.ix_range.0);
            worst = worst.max(cnt as f64 / total_q as f64);
        }
        fractions.push((rho, worst));
    }
    let (gamma, c) = fit_power(&fractions);
    Ok(AxiomReport {
        diam_ratio_min: ratio_min,
        diam_ratio_max: ratio_max,
        a0_min,
        gamma_fit: gamma,
        gamma_c_fit: c,
        boundary_fractions: fractions,
    })
}

/// Distance from an ambient point to the samples of `E` outside the cube's
/// index block, capped.
fn dist_to_complement(tree: &CubeTree, p: &ParaPoint, d: &CubeData, cap: f64) -> f64 {
    let g = tree.graph.grid();
    let sd = g.spatial_dim;
    let mut best = cap;
    let full_x = (0, g.x_cells[0].max(1));
    if d.it_range.0 > 0 {
        best = tree
            .graph
            .dist_point_to_samples_in(p, (0, d.it_range.0), full_x, best);
    }
    if d.it_range.1 < g.t_cells {
        best = tree
            .graph
            .dist_point_to_samples_in(p, (d.it_range.1, g.t_cells), full_x, best);
    }
    if sd == 1 {
        if d.ix_range.0 > 0 {
            best = tree
                .graph
                .dist_point_to_samples_in(p, d.it_range, (0, d.ix_range.0), best);
        }
        if d.ix_range.1 < g.x_cells[0] {
            best = tree.graph.dist_point_to_samples_in(
                p,
                d.it_range,
                (d.ix_range.1, g.x_cells[0]),
                best,
            );
        }
    }
    best
}

fn fit_power(rows: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, f)| *f > 0.0)
        .map(|(r, f)| (r.ln(), f.ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let gamma = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let c = ((sy - gamma * sx) / n).exp();
    (gamma, c)
}
