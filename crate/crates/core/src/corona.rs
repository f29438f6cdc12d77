//! Stopping-time regimes over a cube tree: coherency validation, the
//! stopping distance `d(p) = min over regime cubes of dist(p, Q) + diam(Q)`,
//! near-optimal cube selection, bilateral approximation checks, Carleson
//! packing ratios, and the three-part decomposition of the cubes under a
//! given top cube.
//!
//! Regimes are inputs here (built-in generators plus a JSON form); nothing in
//! this module constructs them from flatness measurements.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::dyadic::{CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::pargeo::{pdist, ParaPoint, SampledGraph, MAX_SPATIAL_DIM};

/// A coherent set of dyadic cubes together with the regular graph that
/// approximates the set at the scales of its cubes.
pub struct Regime {
    pub cubes: BTreeSet<CubeId>,
    pub maximal: CubeId,
    pub graph: Arc<SampledGraph>,
    index: OnceLock<RegimeIndex>,
}

/// Per-sample diameter of the smallest regime cube containing the sample
/// (infinity off the regime), plus the global minimum.
struct RegimeIndex {
    min_diam: Vec<f64>,
    m_min: f64,
}

impl Clone for Regime {
    fn clone(&self) -> Self {
        Regime {
            cubes: self.cubes.clone(),
            maximal: self.maximal,
            graph: self.graph.clone(),
            index: OnceLock::new(),
        }
    }
}

impl std::fmt::Debug for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Regime")
            .field("maximal", &self.maximal)
            .field("cubes", &self.cubes.len())
            .finish()
    }
}

impl Regime {
    pub fn new(cubes: BTreeSet<CubeId>, maximal: CubeId, graph: Arc<SampledGraph>) -> Result<Self> {
        if !cubes.contains(&maximal) {
            return Err(Error::CoronaInput("maximal cube not in regime".into()));
        }
        Ok(Self {
            cubes,
            maximal,
            graph,
            index: OnceLock::new(),
        })
    }

    /// The regime of all tree cubes under `q` (down to the tree's leaves),
    /// approximated by the tree's own graph.
    pub fn full_descendants(tree: &CubeTree, q: CubeId) -> Result<Self> {
        let cubes: BTreeSet<CubeId> = tree.descendants(&q).into_iter().collect();
        if cubes.is_empty() {
            return Err(Error::CoronaInput(format!("{q} has no tree cubes")));
        }
        Regime::new(cubes, q, tree.graph.clone())
    }

    fn index(&self, tree: &CubeTree) -> &RegimeIndex {
        self.index.get_or_init(|| {
            let g = tree.graph.grid();
            let sd = g.spatial_dim;
            let mut min_diam = vec![f64::INFINITY; g.len()];
            let mut m_min = f64::INFINITY;
            for (idx, slot) in min_diam.iter_mut().enumerate() {
                let (it, ix) = g.unindex(idx);
                let ixx = if sd == 1 { ix[0] } else { 0 };
                for k in (self.maximal.k..=tree.k_max).rev() {
                    let id = tree.cube_of_sample(it, ixx, k);
                    if self.cubes.contains(&id) {
                        *slot = tree.cubes[&id].diam;
                        break;
                    }
                }
                m_min = m_min.min(*slot);
            }
            RegimeIndex { min_diam, m_min }
        })
    }

    /// Stopping distance `min over Q in S of dist(p, Q) + diam(Q)`, computed
    /// as a min over covered samples of `pdist(p, F(q)) + m(q)` with `m` the
    /// smallest containing-cube diameter. Exact over the sampled set; `upper`
    /// is an optional valid upper bound used to narrow the scan.
    pub fn stopping_distance(&self, p: &ParaPoint, tree: &CubeTree, upper: Option<f64>) -> f64 {
        let idx = self.index(tree);
        let graph = &tree.graph;
        let g = graph.grid();
        let sd = g.spatial_dim;
        let xn = p.x()[sd];
        let mut best = upper.unwrap_or(f64::INFINITY);
        let md = &tree.cubes[&self.maximal];
        let clamp =
            |v: i64, lo: usize, hi: usize| -> usize { v.max(lo as i64).min(hi as i64 - 1) as usize };
        // Seed with a sample of the maximal cube nearest to p.
        {
            let it = clamp(g.nearest_t(p.t) as i64, md.it_range.0, md.it_range.1);
            let ix = if sd == 1 {
                clamp(g.nearest_x(0, p.x()[0]) as i64, md.ix_range.0, md.ix_range.1)
            } else {
                0
            };
            let flat = if sd == 1 { g.index(it, &[ix]) } else { g.index(it, &[]) };
            if idx.min_diam[flat].is_finite() {
                let q = graph.point_flat(flat);
                best = best.min(pdist(p, &q) + idx.min_diam[flat]);
            }
        }
        let itc = g.nearest_t(p.t);
        let mut k = 0i64;
        loop {
            let mut alive = false;
            for side in [-1i64, 1] {
                if k == 0 && side == 1 {
                    continue;
                }
                let it = itc as i64 + side * k;
                if it < 0 || it >= g.t_cells as i64 {
                    continue;
                }
                let it = it as usize;
                let tt = (p.t - g.t_center(it)).abs().sqrt();
                if tt + idx.m_min >= best {
                    continue;
                }
                alive = true;
                if sd == 0 {
                    let flat = g.index(it, &[]);
                    let m = idx.min_diam[flat];
                    if m.is_finite() {
                        let f = graph.field.values[flat];
                        best = best.min((xn - f).abs() + tt + m);
                    }
                } else {
                    let jc = g.nearest_x(0, p.x()[0]);
                    let mut mo = 0i64;
                    loop {
                        let mut inner = false;
                        for s2 in [-1i64, 1] {
                            if mo == 0 && s2 == 1 {
                                continue;
                            }
                            let j = jc as i64 + s2 * mo;
                            if j < 0 || j >= g.x_cells[0] as i64 {
                                continue;
                            }
                            let j = j as usize;
                            let dx = (p.x()[0] - g.x_center(0, j)).abs();
                            if dx + tt + idx.m_min >= best {
                                continue;
                            }
                            inner = true;
                            let flat = g.index(it, &[j]);
                            let m = idx.min_diam[flat];
                            if m.is_finite() {
                                let f = graph.field.values[flat];
                                best = best
                                    .min((dx * dx + (xn - f) * (xn - f)).sqrt() + tt + m);
                            }
                        }
                        if !inner && mo > 0 {
                            break;
                        }
                        mo += 1;
                    }
                }
            }
            if !alive && k > 0 {
                break;
            }
            k += 1;
            if k > g.t_cells as i64 {
                break;
            }
        }
        best
    }

    /// Stopping distance at every lifted sample `(t, x', heights[i])`,
    /// defaulting to the graph's own heights. Warm-started column sweeps
    /// make this near-linear in the sample count.
    pub fn stopping_distance_field(&self, tree: &CubeTree, heights: Option<&[f64]>) -> Vec<f64> {
        let g = tree.graph.grid();
        let sd = g.spatial_dim;
        let vals = heights.unwrap_or(&tree.graph.field.values);
        assert_eq!(vals.len(), g.len());
        let mut out = vec![0.0f64; g.len()];
        let cols: usize = g.x_cells[..sd].iter().product::<usize>().max(1);
        let step = g.delta;
        for c in 0..cols {
            let mut prev: Option<(f64, f64)> = None; // (d, height)
            for it in 0..g.t_cells {
                let flat = c * g.t_cells + it;
                let mut x = [0.0; MAX_SPATIAL_DIM];
                if sd == 1 {
                    x[0] = g.x_center(0, c);
                }
                x[sd] = vals[flat];
                let p = ParaPoint::new(g.t_center(it), &x[..sd + 1]);
                let warm = prev.map(|(d, h)| d + (vals[flat] - h).abs() + step);
                out[flat] = self.stopping_distance(&p, tree, warm);
                prev = Some((out[flat], vals[flat]));
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoherencyReport {
    pub a_violations: Vec<CubeId>,
    pub b_violations: Vec<CubeId>,
    pub c_violations: Vec<CubeId>,
}

impl CoherencyReport {
    pub fn coherent(&self) -> bool {
        self.a_violations.is_empty() && self.b_violations.is_empty()
    }

    pub fn fully_coherent(&self) -> bool {
        self.coherent() && self.c_violations.is_empty()
    }
}

/// Check that the regime has a unique maximal element containing every cube,
/// is closed under intermediate ancestors, and (optionally) takes children
/// all-or-none.
pub fn validate_coherent(s: &Regime, require_c: bool, tree: &CubeTree) -> CoherencyReport {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut c = Vec::new();
    for q in &s.cubes {
        if !s.maximal.contains(q) {
            a.push(*q);
            continue;
        }
        let mut cur = *q;
        while cur != s.maximal {
            cur = cur.parent();
            if !s.cubes.contains(&cur) {
                b.push(cur);
            }
        }
    }
    b.sort();
    b.dedup();
    if require_c {
        for q in &s.cubes {
            if q.k >= tree.k_max {
                continue;
            }
            let kids = tree.children_of(q);
            if kids.is_empty() {
                continue;
            }
            let inside = kids.iter().filter(|k| s.cubes.contains(k)).count();
            if inside != 0 && inside != kids.len() {
                c.push(*q);
            }
        }
    }
    CoherencyReport {
        a_violations: a,
        b_violations: b,
        c_violations: c,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectedCube {
    pub id: CubeId,
    pub d: f64,
    pub dist: f64,
    pub diam: f64,
    /// Measured `A diam(Q*) / d`.
    pub c_measured: f64,
}

/// Pick `Q* in S` with `dist(p, Q*) <= 2 d(p) <= A diam(Q*)`, as the smallest
/// ancestor (within the regime) of a minimizing cube that satisfies the
/// diameter bound. Ties break to the smallest generation, then index order.
pub fn select_cube(
    p: &ParaPoint,
    a_factor: f64,
    s: &Regime,
    tree: &CubeTree,
    epsilon: Option<f64>,
) -> Result<SelectedCube> {
    if a_factor <= 1.0 {
        return Err(Error::Param("A must be > 1".into()));
    }
    let d = s.stopping_distance(p, tree, None);
    let target = if d > 0.0 {
        2.0 * d
    } else {
        match epsilon {
            Some(e) if e > 0.0 => e,
            _ => {
                return Err(Error::Param(
                    "stopping distance is zero; pass an epsilon".into(),
                ))
            }
        }
    };
    let max_diam = tree.cubes[&s.maximal].diam;
    if target > a_factor * max_diam {
        return Err(Error::Param(format!(
            "2 d(p) = {target} exceeds A diam(maximal) = {}",
            a_factor * max_diam
        )));
    }
    // Minimizing cube: smallest dist + diam, ties to the coarser generation.
    let mut best: Option<(f64, CubeId, f64)> = None;
    for q in &s.cubes {
        let data = &tree.cubes[q];
        let lb = tree.dist_lower_bound(p, q) + data.diam;
        if let Some((bv, _, _)) = best {
            if lb >= bv {
                continue;
            }
        }
        let dist = tree.dist_point_to_cube(p, q, f64::INFINITY);
        let v = dist + data.diam;
        let better = match best {
            None => true,
            Some((bv, bid, _)) => v < bv - 1e-15 || (v <= bv + 1e-15 && *q < bid),
        };
        if better {
            best = Some((v, *q, dist));
        }
    }
    let (_, q0, _) = best.ok_or_else(|| Error::CoronaInput("empty regime".into()))?;
    // Smallest regime ancestor satisfying the diameter bound.
    let mut cur = q0;
    loop {
        let diam = tree.cubes[&cur].diam;
        if a_factor * diam >= target {
            let dist = tree.dist_point_to_cube(p, &cur, f64::INFINITY);
            debug_assert!(dist <= target + 1e-12);
            return Ok(SelectedCube {
                id: cur,
                d,
                dist,
                diam,
                c_measured: a_factor * diam / d.max(f64::MIN_POSITIVE),
            });
        }
        if cur == s.maximal {
            return Err(Error::CoronaInput(
                "no regime ancestor satisfies the diameter bound".into(),
            ));
        }
        cur = cur.parent();
        if !s.cubes.contains(&cur) {
            return Err(Error::CoronaInput(format!(
                "regime not coherent: missing ancestor {cur}"
            )));
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BilateralRow {
    pub q: CubeId,
    /// sup over sampled set points in the dilate of Q of dist to the regime
    /// graph.
    pub sup_set_to_graph: f64,
    /// sup over sampled graph points in the companion ball of dist to the
    /// set.
    pub sup_graph_to_set: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BilateralReport {
    pub worst_ratio: f64,
    pub rows: Vec<BilateralRow>,
}

/// Two-sided approximation check: for each regime cube, the set stays within
/// `eta diam(Q)` of the regime graph on the K-dilate, and the graph stays
/// within `eta diam(Q)` of the set on the companion ball. `stride`
/// subsamples the sweeps (1 = every sample).
pub fn bilateral_approx_check(
    s: &Regime,
    eta: f64,
    tree: &CubeTree,
    stride: usize,
) -> Result<BilateralReport> {
    let k_const = 1.0 / eta;
    let stride = stride.max(1);
    let mut rows = Vec::with_capacity(s.cubes.len());
    let mut worst: f64 = 0.0;
    let same_graph = Arc::ptr_eq(&s.graph, &tree.graph);
    for q in &s.cubes {
        let data = &tree.cubes[q];
        let dq = data.diam;
        let mut sup1 = 0.0f64;
        let dil = crate::dyadic::dilate(q, k_const, tree)?;
        for idx in dil.into_iter().step_by(stride) {
            let p = tree.graph.point_flat(idx);
            let d = if same_graph {
                0.0
            } else {
                let sd = s.graph.grid().spatial_dim;
                let v = (p.x()[sd] - s.graph.height(p.t, &p.x()[..sd])).abs();
                s.graph.dist_point_to_samples(&p, Some(v.max(1e-300)))
            };
            sup1 = sup1.max(d);
        }
        // Graph samples in B(center_Q, K diam Q).
        let g = s.graph.grid();
        let sd = g.spatial_dim;
        let c = data.center;
        let r = k_const * dq;
        let it_lo = ((c.t - r * r - g.t0) / g.time_step()).floor().max(0.0) as usize;
        let it_hi = (((c.t + r * r - g.t0) / g.time_step()).ceil().max(0.0) as usize).min(g.t_cells);
        let mut sup2 = 0.0f64;
        let mut it = it_lo;
        while it < it_hi {
            let tt = (c.t - g.t_center(it)).abs().sqrt();
            if tt < r {
                let cols = if sd == 1 { g.x_cells[0] } else { 1 };
                let mut j = 0usize;
                while j < cols {
                    let flat = if sd == 1 { g.index(it, &[j]) } else { g.index(it, &[]) };
                    let p = s.graph.point_flat(flat);
                    if pdist(&p, &c) < r {
                        let d = if same_graph {
                            0.0
                        } else {
                            let v =
                                (p.x()[sd] - tree.graph.height(p.t, &p.x()[..sd])).abs();
                            tree.graph.dist_point_to_samples(&p, Some(v.max(1e-300)))
                        };
                        sup2 = sup2.max(d);
                    }
                    j += stride;
                }
            }
            it += stride;
        }
        let ratio = (sup1 + sup2) / (eta * dq);
        worst = worst.max(ratio);
        rows.push(BilateralRow {
            q: *q,
            sup_set_to_graph: sup1,
            sup_graph_to_set: sup2,
            ratio,
        });
    }
    Ok(BilateralReport {
        worst_ratio: worst,
        rows,
    })
}

/// A corona decomposition given as input: disjoint regimes plus bad cubes.
#[derive(Clone, Debug)]
pub struct CoronaInput {
    pub regimes: Vec<Regime>,
    pub bad: BTreeSet<CubeId>,
    pub eta: f64,
}

impl CoronaInput {
    /// Every tree cube must be claimed exactly once (by a regime or as bad).
    pub fn validate(&self, tree: &CubeTree) -> Result<()> {
        if self.eta <= 0.0 || self.eta >= 1.0 {
            return Err(Error::CoronaInput(format!(
                "eta = {} out of (0,1)",
                self.eta
            )));
        }
        let mut claimed: BTreeSet<CubeId> = self.bad.clone();
        let mut count = self.bad.len();
        for r in &self.regimes {
            for q in &r.cubes {
                claimed.insert(*q);
                count += 1;
            }
        }
        if count != claimed.len() {
            return Err(Error::CoronaInput("regimes/bad cubes overlap".into()));
        }
        for q in tree.cubes.keys() {
            if !claimed.contains(q) {
                return Err(Error::CoronaInput(format!("{q} unclaimed")));
            }
        }
        if claimed.len() != tree.cubes.len() {
            return Err(Error::CoronaInput(
                "corona claims cubes outside the tree".into(),
            ));
        }
        Ok(())
    }

    /// The whole tree as one regime per top cube, approximated by its own
    /// graph.
    pub fn single_regime(tree: &CubeTree, eta: f64) -> Result<Self> {
        let top: Vec<CubeId> = tree.generation(tree.k_min).map(|(id, _)| *id).collect();
        let mut regimes = Vec::new();
        for q in top {
            regimes.push(Regime::full_descendants(tree, q)?);
        }
        Ok(CoronaInput {
            regimes,
            bad: BTreeSet::new(),
            eta,
        })
    }

    /// Every cube bad: the degenerate corona that any packing check must
    /// flag.
    pub fn all_bad(tree: &CubeTree, eta: f64) -> Self {
        CoronaInput {
            regimes: Vec::new(),
            bad: tree.cubes.keys().cloned().collect(),
            eta,
        }
    }
}

/// Carleson packing ratio over `q0`: the weights of bad cubes under `q0`
/// plus the weights of regime tops under `q0`, divided by `w(q0)`.
pub fn packing_check(
    c: &CoronaInput,
    q0: &CubeId,
    weights: &std::collections::BTreeMap<CubeId, f64>,
) -> Result<f64> {
    let w0 = *weights
        .get(q0)
        .ok_or_else(|| Error::Param(format!("no weight for {q0}")))?;
    if w0 == 0.0 {
        return Err(Error::Param("zero weight on the top cube".into()));
    }
    let mut sum = 0.0;
    for q in &c.bad {
        if q0.contains(q) {
            sum += weights
                .get(q)
                .ok_or_else(|| Error::Param(format!("no weight for {q}")))?;
        }
    }
    for r in &c.regimes {
        if q0.contains(&r.maximal) {
            sum += weights
                .get(&r.maximal)
                .ok_or_else(|| Error::Param(format!("no weight for {}", r.maximal)))?;
        }
    }
    Ok(sum / w0)
}

/// The three disjoint parts of the cubes under `q0`: bad cubes, regimes whose
/// maximal cube sits strictly inside `q0`, and the restriction of the regime
/// owning `q0` (empty when `q0` is bad).
#[derive(Debug)]
pub struct SubregimeParts {
    pub bad: Vec<CubeId>,
    /// Indices into `corona.regimes` of regimes wholly inside `q0`.
    pub whole: Vec<usize>,
    /// `S* ∩ D(q0)` for the regime containing `q0`, re-rooted at `q0`.
    pub restricted: Option<Regime>,
}

pub fn subregime_decompose(
    q0: &CubeId,
    corona: &CoronaInput,
    tree: &CubeTree,
) -> Result<SubregimeParts> {
    if tree.data(q0).is_none() {
        return Err(Error::Param(format!("{q0} not in tree")));
    }
    let bad: Vec<CubeId> = corona
        .bad
        .iter()
        .filter(|q| q0.contains(q))
        .cloned()
        .collect();
    let mut whole = Vec::new();
    let mut restricted = None;
    for (i, r) in corona.regimes.iter().enumerate() {
        if q0.contains(&r.maximal) && r.maximal != *q0 {
            whole.push(i);
        } else if r.cubes.contains(q0) {
            let cubes: BTreeSet<CubeId> = r
                .cubes
                .iter()
                .filter(|q| q0.contains(q))
                .cloned()
                .collect();
            let sub = Regime::new(cubes, *q0, r.graph.clone())?;
            let rep = validate_coherent(&sub, false, tree);
            if !rep.coherent() {
                return Err(Error::CoronaInput(format!(
                    "restriction to {q0} is not coherent"
                )));
            }
            restricted = Some(sub);
        }
    }
    // Partition audit: every cube under q0 lands in exactly one part.
    let mut count = bad.len();
    for &i in &whole {
        count += corona.regimes[i]
            .cubes
            .iter()
            .filter(|q| q0.contains(q))
            .count();
    }
    if let Some(r) = &restricted {
        count += r.cubes.len();
    }
    let total = tree.descendants(q0).len();
    if count != total {
        return Err(Error::CoronaInput(format!(
            "decomposition under {q0} covers {count} of {total} cubes"
        )));
    }
    Ok(SubregimeParts {
        bad,
        whole,
        restricted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::build_cubes_on_graph;
    use crate::pargeo::{ParaGrid, ScalarField};
    use rand::{Rng, SeedableRng};

    fn flat_tree(delta_exp: i32, k_min: i32, k_max: i32) -> CubeTree {
        let delta = (2.0f64).powi(-delta_exp);
        let t_cells = (0.25 / (delta * delta)) as usize;
        let grid = ParaGrid::new(0, delta, 0.0, t_cells, &[], &[]);
        let field = ScalarField::from_fn(grid, |_, _| 0.0);
        let g = Arc::new(SampledGraph::from_field(
            field,
            Some(Arc::new(|_, _: &[f64]| 0.0)),
        ));
        build_cubes_on_graph(g, k_min, k_max).unwrap()
    }

    #[test]
    fn coherency_of_generators_and_fault_injection() {
        let tree = flat_tree(7, 1, 3);
        let top = CubeId::new(1, 0, 0);
        let single =
            Regime::new([top].into_iter().collect(), top, tree.graph.clone()).unwrap();
        assert!(validate_coherent(&single, true, &tree).fully_coherent());
        let full = Regime::full_descendants(&tree, top).unwrap();
        assert!(validate_coherent(&full, true, &tree).fully_coherent());
        // Remove an intermediate ancestor: its absence is reported by name.
        let mut broken = full.clone();
        let gap = CubeId::new(2, 1, 0);
        broken.cubes.remove(&gap);
        let rep = validate_coherent(&broken, true, &tree);
        assert_eq!(rep.b_violations, vec![gap]);
        assert!(!rep.coherent());
    }

    #[test]
    fn stopping_distance_single_cube_and_upper_bound() {
        let tree = flat_tree(7, 1, 3);
        let qs = CubeId::new(2, 2, 0);
        let s = Regime::new([qs].into_iter().collect(), qs, tree.graph.clone()).unwrap();
        let data = tree.cubes[&qs].clone();
        // A point of the cube itself: d = diam.
        let p = tree.graph.point(data.it_range.0 + 2, &[]);
        let d = s.stopping_distance(&p, &tree, None);
        assert!((d - data.diam).abs() < 1e-12);
        // Any point: d <= dist(p, maximal) + diam(maximal).
        let far = ParaPoint::new(0.24, &[0.3]);
        let df = s.stopping_distance(&far, &tree, None);
        let bound = tree.dist_point_to_cube(&far, &qs, f64::INFINITY) + data.diam;
        assert!(df <= bound + 1e-12);
    }

    #[test]
    fn stopping_distance_is_one_lipschitz() {
        let tree = flat_tree(7, 1, 3);
        let s = Regime::full_descendants(&tree, CubeId::new(1, 0, 0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..60 {
            let p = ParaPoint::new(rng.gen_range(0.0..0.25), &[rng.gen_range(-0.4..0.4)]);
            let q = ParaPoint::new(rng.gen_range(0.0..0.25), &[rng.gen_range(-0.4..0.4)]);
            let dp = s.stopping_distance(&p, &tree, None);
            let dq = s.stopping_distance(&q, &tree, None);
            assert!(
                (dp - dq).abs() <= pdist(&p, &q) + 1e-9,
                "|{dp} - {dq}| > {}",
                pdist(&p, &q)
            );
        }
    }

    #[test]
    fn stopping_distance_field_matches_pointwise() {
        let tree = flat_tree(6, 1, 3);
        let s = Regime::full_descendants(&tree, CubeId::new(1, 0, 0)).unwrap();
        let field = s.stopping_distance_field(&tree, None);
        let g = tree.graph.grid();
        for it in (0..g.t_cells).step_by(97) {
            let p = tree.graph.point(it, &[]);
            let d = s.stopping_distance(&p, &tree, None);
            assert!(
                (field[it] - d).abs() < 1e-12,
                "it={it}: {} vs {d}",
                field[it]
            );
        }
        // On the maximal cube every value is at least the smallest leaf
        // diameter (the truncation floor of the infimum).
        let leaf_diam = tree.cubes[&CubeId::new(3, 0, 0)].diam;
        assert!(field.iter().all(|&v| v >= leaf_diam - 1e-15));
    }

    #[test]
    fn select_cube_inequalities_hold() {
        let tree = flat_tree(7, 1, 3);
        let s = Regime::full_descendants(&tree, CubeId::new(1, 0, 0)).unwrap();
        let qs = CubeId::new(2, 2, 0);
        let single = Regime::new([qs].into_iter().collect(), qs, tree.graph.clone()).unwrap();
        let p = ParaPoint::new(0.14, &[0.02]);
        let got = select_cube(&p, 4.0, &single, &tree, None).unwrap();
        assert_eq!(got.id, qs);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut per_a: Vec<f64> = Vec::new();
        for &a in &[2.0, 8.0, 32.0] {
            let mut worst_c = 0.0f64;
            for _ in 0..40 {
                let p = ParaPoint::new(rng.gen_range(0.0..0.25), &[rng.gen_range(-0.1..0.1)]);
                let d = s.stopping_distance(&p, &tree, None);
                if 2.0 * d > a * tree.cubes[&s.maximal].diam {
                    continue;
                }
                let sel = select_cube(&p, a, &s, &tree, None).unwrap();
                assert!(sel.dist <= 2.0 * sel.d + 1e-12);
                assert!(a * sel.diam >= 2.0 * sel.d - 1e-12);
                worst_c = worst_c.max(sel.c_measured / a);
            }
            per_a.push(worst_c);
        }
        // diam(Q*)/d stays bounded independent of A.
        for w in &per_a {
            assert!(*w <= 8.0 + 1e-9, "diam-to-d ratio {w}");
        }
    }

    #[test]
    fn bilateral_check_identity_and_offset() {
        let tree = flat_tree(7, 2, 3);
        let s = Regime::full_descendants(&tree, CubeId::new(2, 0, 0)).unwrap();
        let rep = bilateral_approx_check(&s, 1.0 / 16.0, &tree, 4).unwrap();
        assert_eq!(rep.worst_ratio, 0.0);
        // Offset graph within eta * min diam / 2 passes.
        let eta = 1.0 / 16.0;
        let min_diam = tree.cubes[&CubeId::new(3, 0, 0)].diam;
        let eps = eta * min_diam / 2.0 * 0.9;
        let g2 = {
            let grid = tree.graph.grid().clone();
            let field = ScalarField::from_fn(grid, move |_, _| eps);
            Arc::new(SampledGraph::from_field(
                field,
                Some(Arc::new(move |_, _: &[f64]| eps)),
            ))
        };
        let s2 = Regime::new(s.cubes.clone(), s.maximal, g2).unwrap();
        let rep2 = bilateral_approx_check(&s2, eta, &tree, 4).unwrap();
        assert!(rep2.worst_ratio < 1.0, "ratio {}", rep2.worst_ratio);
        assert!(rep2.worst_ratio > 0.0);
    }

    #[test]
    fn packing_single_regime_and_all_bad() {
        let tree = flat_tree(7, 1, 4);
        let eta = 1.0 / 16.0;
        let weights: std::collections::BTreeMap<CubeId, f64> =
            tree.cubes.iter().map(|(id, d)| (*id, d.measure)).collect();
        let q0 = CubeId::new(1, 0, 0);
        let single = CoronaInput::single_regime(&tree, eta).unwrap();
        single.validate(&tree).unwrap();
        let r = packing_check(&single, &q0, &weights).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        // All cubes bad: every generation contributes sigma(q0), so the
        // ratio equals the generation count under q0.
        let bad = CoronaInput::all_bad(&tree, eta);
        let rb = packing_check(&bad, &q0, &weights).unwrap();
        assert!((rb - 4.0).abs() < 1e-12, "ratio {rb}");
    }

    #[test]
    fn subregime_decomposition_partitions() {
        let tree = flat_tree(7, 1, 4);
        let eta = 1.0 / 16.0;
        // Two-part corona: a regime under one gen-2 cube, everything else
        // bad.
        let qa = CubeId::new(2, 0, 0);
        let ra = Regime::full_descendants(&tree, qa).unwrap();
        let mut bad: BTreeSet<CubeId> = tree.cubes.keys().cloned().collect();
        for q in &ra.cubes {
            bad.remove(q);
        }
        let corona = CoronaInput {
            regimes: vec![ra],
            bad,
            eta,
        };
        corona.validate(&tree).unwrap();
        let q0 = CubeId::new(1, 0, 0);
        let parts = subregime_decompose(&q0, &corona, &tree).unwrap();
        assert_eq!(parts.whole, vec![0]);
        assert!(parts.restricted.is_none()); // q0 itself is bad
        let q0b = CubeId::new(3, 1, 0); // inside the regime
        let parts2 = subregime_decompose(&q0b, &corona, &tree).unwrap();
        assert!(parts2.whole.is_empty());
        let r = parts2.restricted.expect("restriction exists");
        assert_eq!(r.maximal, q0b);
        assert!(validate_coherent(&r, true, &tree).fully_coherent());
    }
}
