//! Explicit finite-difference caloric fields in graph complements, with the
//! diagnostics built on them: local energy (Caccioppoli) ratios, the
//! distance-weighted Carleson functional over boundary balls, and the
//! region-wise energy pieces with their packing sums.
//!
//! The stored slabs sit at the parabolic time step `delta^2`; the scheme
//! advances in substeps so the explicit stability factor stays at `1/(4n)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corona::CoronaInput;
use crate::dyadic::{CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::pargeo::{ParaBall, ParaGrid, ParaPoint, SampledGraph, MAX_SPATIAL_DIM};
use crate::whitney::{
    locate_cube, region_thresholds, region_with_source, RegionSource, WhitneyDecomposition,
    WhitneyKey, WhitneyRegion,
};

/// Which side of the graph to solve on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
    Both,
}

/// Boundary/initial data fixtures.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSpec {
    Constant { value: f64 },
    /// `u = x_n`: linear in the graph-normal coordinate, scheme-exact.
    LinearNormal,
    /// `u = |X|^2 / (2n) + t`: quadratic caloric polynomial, scheme-exact.
    CaloricQuadratic,
    /// Bounded smoothed step along one coordinate.
    SmoothStep {
        axis: StepAxis,
        center: f64,
        width: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAxis {
    T,
    X1,
}

impl DataSpec {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            DataSpec::Constant { value } => *value,
            DataSpec::LinearNormal => x[x.len() - 1],
            DataSpec::CaloricQuadratic => {
                let n = x.len() as f64;
                x.iter().map(|v| v * v).sum::<f64>() / (2.0 * n) + t
            }
            DataSpec::SmoothStep {
                axis,
                center,
                width,
            } => {
                let v = match axis {
                    StepAxis::T => t,
                    StepAxis::X1 => x[0],
                };
                0.5 * (1.0 + ((v - center) / width).tanh())
            }
        }
    }
}

/// A solved caloric field with cached first derivatives, the distance to the
/// graph per cell, and interior flags (one cell clear of the staircase
/// boundary and the time ends).
pub struct HeatField {
    pub grid: ParaGrid,
    pub side: Side,
    pub graph: Arc<SampledGraph>,
    pub u: Vec<f64>,
    /// Spatial gradient magnitude squared per (slab, cell).
    pub grad2: Vec<f64>,
    /// Time derivative per (slab, cell).
    pub ut: Vec<f64>,
    /// Parabolic distance to the sampled graph at the cell center.
    pub delta_e: Vec<f64>,
    pub active: Vec<bool>,
    pub interior: Vec<bool>,
    pub sup_u: f64,
    pub substeps: usize,
    pub data: DataSpec,
}

impl std::fmt::Debug for HeatField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeatField")
            .field("grid", &self.grid)
            .field("side", &self.side)
            .field("sup_u", &self.sup_u)
            .finish()
    }
}

struct CellGeom {
    nx: [usize; MAX_SPATIAL_DIM],
    n: usize,
}

impl CellGeom {
    fn cells(&self) -> usize {
        self.nx[..self.n].iter().product()
    }

    #[inline]
    fn coords(&self, g: &ParaGrid, c: usize) -> [f64; MAX_SPATIAL_DIM] {
        let mut x = [0.0; MAX_SPATIAL_DIM];
        let mut rem = c;
        for a in 0..self.n {
            x[a] = g.x_center(a, rem % self.nx[a]);
            rem /= self.nx[a];
        }
        x
    }

    #[inline]
    fn neighbor(&self, c: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut rem = c;
        let mut stride = 1usize;
        for a in 0..axis {
            rem /= self.nx[a];
            stride *= self.nx[a];
        }
        let i = (rem % self.nx[axis]) as i64 + dir;
        if i < 0 || i >= self.nx[axis] as i64 {
            None
        } else {
            Some((c as i64 + dir * stride as i64) as usize)
        }
    }
}

fn side_of(side: Side, xn: f64, f: f64) -> bool {
    match side {
        Side::Plus => xn > f,
        Side::Minus => xn < f,
        Side::Both => xn != f,
    }
}

/// Sign bucket used to keep the two sides decoupled on a two-sided solve.
fn sign_of(xn: f64, f: f64) -> i8 {
    if xn > f {
        1
    } else if xn < f {
        -1
    } else {
        0
    }
}

/// Forward-Euler heat solve on the masked grid. The slabs of `grid` are the
/// stored times; each slab advances through `substeps` explicit steps so the
/// stability factor `1/substeps` stays at most `1/(2n)`. Boundary cells (box
/// sides and cells whose stencil crosses the graph) are held at the data.
pub fn solve_heat(
    graph: Arc<SampledGraph>,
    side: Side,
    data: DataSpec,
    grid: ParaGrid,
    substeps: usize,
) -> Result<HeatField> {
    let n = grid.spatial_dim;
    if n != graph.ambient {
        return Err(Error::DimensionMismatch(n, graph.ambient));
    }
    let factor = 1.0 / substeps as f64;
    if factor > 1.0 / (2.0 * n as f64) + 1e-15 {
        return Err(Error::Cfl {
            factor,
            limit: 1.0 / (2.0 * n as f64),
        });
    }
    let geom = CellGeom {
        nx: grid.x_cells,
        n,
    };
    let cells = geom.cells();
    let slabs = grid.t_cells;
    let dt_sub = grid.time_step() / substeps as f64;
    let sd = n - 1; // graph-domain spatial axes
    let height_at = |t: f64, x: &[f64]| -> f64 { graph.height(t, &x[..sd]) };

    let mut u = vec![0.0f64; slabs * cells];
    let mut active = vec![false; slabs * cells];
    let mut cur = vec![0.0f64; cells];
    let mut signs = vec![0i8; cells];
    let mut data_lo = f64::INFINITY;
    let mut data_hi = f64::NEG_INFINITY;

    let eval_signs = |t: f64, signs: &mut Vec<i8>| {
        for c in 0..cells {
            let x = geom.coords(&grid, c);
            signs[c] = sign_of(x[n - 1], height_at(t, &x[..n]));
        }
    };

    // Initial slab: data everywhere.
    let t0 = grid.t_center(0);
    eval_signs(t0, &mut signs);
    let mut any_active = false;
    for c in 0..cells {
        let x = geom.coords(&grid, c);
        let v = data.eval(t0, &x[..n]);
        cur[c] = v;
        data_lo = data_lo.min(v);
        data_hi = data_hi.max(v);
        let on = side_of(side, x[n - 1], height_at(t0, &x[..n]));
        active[c] = on;
        any_active |= on;
    }
    if !any_active {
        return Err(Error::EmptyDomain);
    }
    u[..cells].copy_from_slice(&cur);

    let mut next = vec![0.0f64; cells];
    let mut next_signs = vec![0i8; cells];
    for slab in 1..slabs {
        let t_base = grid.t_center(slab - 1);
        for sub in 1..=substeps {
            let t_new = t_base + dt_sub * sub as f64;
            eval_signs(t_new, &mut next_signs);
            for c in 0..cells {
                let x = geom.coords(&grid, c);
                let on = side_of(side, x[n - 1], height_at(t_new, &x[..n]));
                if !on {
                    next[c] = data.eval(t_new, &x[..n]);
                    continue;
                }
                // A cell is boundary when any stencil neighbor is missing or
                // sits across the graph (at old or new time).
                let mut boundary = false;
                let mut lap = 0.0;
                for a in 0..n {
                    for dir in [-1i64, 1] {
                        match geom.neighbor(c, a, dir) {
                            None => boundary = true,
                            Some(nb) => {
                                if signs[nb] != signs[c] || next_signs[nb] != next_signs[c] {
                                    boundary = true;
                                } else {
                                    lap += cur[nb] - cur[c];
                                }
                            }
                        }
                    }
                }
                if boundary || signs[c] != next_signs[c] {
                    let v = data.eval(t_new, &x[..n]);
                    data_lo = data_lo.min(v);
                    data_hi = data_hi.max(v);
                    next[c] = v;
                } else {
                    next[c] = cur[c] + factor * lap;
                }
            }
            std::mem::swap(&mut cur, &mut next);
            std::mem::swap(&mut signs, &mut next_signs);
            // Discrete maximum principle against the running data bounds.
            let tol = 1e-10 * (data_hi - data_lo).abs().max(1.0);
            for c in 0..cells {
                let x = geom.coords(&grid, c);
                if side_of(side, x[n - 1], height_at(t_new, &x[..n]))
                    && (cur[c] < data_lo - tol || cur[c] > data_hi + tol)
                {
                    return Err(Error::Param(format!(
                        "maximum principle violated at slab {slab}: {} outside [{data_lo}, {data_hi}]",
                        cur[c]
                    )));
                }
            }
        }
        let t_slab = grid.t_center(slab);
        for c in 0..cells {
            let x = geom.coords(&grid, c);
            active[slab * cells + c] = side_of(side, x[n - 1], height_at(t_slab, &x[..n]));
        }
        u[slab * cells..(slab + 1) * cells].copy_from_slice(&cur);
    }

    // Derived fields on the stored slabs.
    let mut grad2 = vec![0.0f64; slabs * cells];
    let mut ut = vec![0.0f64; slabs * cells];
    let mut interior = vec![false; slabs * cells];
    let mut sup_u = 0.0f64;
    for slab in 0..slabs {
        let t_slab = grid.t_center(slab);
        let base = slab * cells;
        let mut slab_signs = vec![0i8; cells];
        for c in 0..cells {
            let x = geom.coords(&grid, c);
            slab_signs[c] = sign_of(x[n - 1], height_at(t_slab, &x[..n]));
        }
        for c in 0..cells {
            if !active[base + c] {
                continue;
            }
            sup_u = sup_u.max(u[base + c].abs());
            let mut ok = slab > 0 && slab + 1 < slabs;
            let mut g2 = 0.0;
            for a in 0..n {
                match (geom.neighbor(c, a, -1), geom.neighbor(c, a, 1)) {
                    (Some(l), Some(r))
                        if slab_signs[l] == slab_signs[c] && slab_signs[r] == slab_signs[c] =>
                    {
                        let d = (u[base + r] - u[base + l]) / (2.0 * grid.delta);
                        g2 += d * d;
                    }
                    _ => ok = false,
                }
            }
            if ok {
                // Same-side requirement across the time stencil too.
                let (pb, nb) = (base - cells, base + cells);
                if active[pb + c] && active[nb + c] {
                    ut[base + c] = (u[nb + c] - u[pb + c]) / (2.0 * grid.time_step());
                } else {
                    ok = false;
                }
            }
            grad2[base + c] = g2;
            interior[base + c] = ok;
        }
    }

    // Distance to the graph per cell, warm-started along time columns.
    let mut delta_e = vec![0.0f64; slabs * cells];
    use rayon::prelude::*;
    let chunks: Vec<Vec<f64>> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let x = geom.coords(&grid, c);
            let mut col = vec![0.0f64; slabs];
            let mut prev: Option<f64> = None;
            for slab in 0..slabs {
                let p = ParaPoint::new(grid.t_center(slab), &x[..n]);
                let vert = (x[n - 1] - height_at(grid.t_center(slab), &x[..n])).abs();
                let warm = match prev {
                    Some(d) => (d + grid.delta).min(vert.max(1e-300)),
                    None => vert.max(1e-300),
                };
                let d = graph.dist_point_to_samples(&p, Some(warm));
                col[slab] = d;
                prev = Some(d);
            }
            col
        })
        .collect();
    for (c, col) in chunks.into_iter().enumerate() {
        for (slab, v) in col.into_iter().enumerate() {
            delta_e[slab * cells + c] = v;
        }
    }

    Ok(HeatField {
        grid,
        side,
        graph,
        u,
        grad2,
        ut,
        delta_e,
        active,
        interior,
        sup_u,
        substeps,
        data,
    })
}

impl HeatField {
    pub fn cells(&self) -> usize {
        self.grid.x_cells[..self.grid.spatial_dim].iter().product()
    }

    pub fn cell_coords(&self, c: usize) -> [f64; MAX_SPATIAL_DIM] {
        let geom = CellGeom {
            nx: self.grid.x_cells,
            n: self.grid.spatial_dim,
        };
        geom.coords(&self.grid, c)
    }

    pub fn cell_point(&self, slab: usize, c: usize) -> ParaPoint {
        let x = self.cell_coords(c);
        ParaPoint::new(self.grid.t_center(slab), &x[..self.grid.spatial_dim])
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_measure()
    }

    /// Iterate (slab, cell) pairs whose centers lie in the parabolic ball.
    fn cells_in_ball<'a>(&'a self, ball: &'a ParaBall) -> impl Iterator<Item = (usize, usize)> + 'a {
        let g = &self.grid;
        let cells = self.cells();
        let t_lo = ball.center.t - ball.radius * ball.radius;
        let t_hi = ball.center.t + ball.radius * ball.radius;
        let s_lo = ((t_lo - g.t0) / g.time_step() - 0.5).ceil().max(0.0) as usize;
        let s_hi = ((((t_hi - g.t0) / g.time_step()) + 0.5).floor().max(0.0) as usize)
            .min(g.t_cells.saturating_sub(1));
        (s_lo..=s_hi.max(s_lo).min(g.t_cells.saturating_sub(1)))
            .flat_map(move |slab| (0..cells).map(move |c| (slab, c)))
            .filter(move |&(slab, c)| {
                let p = self.cell_point(slab, c);
                ball.contains(&p)
            })
    }
}

/// Local energy ratio: the Dirichlet integral over the ball against the
/// scaled square integral over the enlarged ball. The enlarged ball must be
/// solved and active throughout.
pub fn caccioppoli_ratio(field: &HeatField, ball: &ParaBall, alpha: f64) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(Error::Param("alpha must be positive".into()));
    }
    let big = ParaBall::new(ball.center, (1.0 + alpha) * ball.radius);
    let g = &field.grid;
    // The enlarged ball must fit the box in space and time.
    let fits = big.center.t - big.radius * big.radius >= g.t0 - 1e-12
        && big.center.t + big.radius * big.radius <= g.t_end() + 1e-12
        && (0..g.spatial_dim).all(|a| {
            big.center.x()[a] - big.radius >= g.x0[a] - 1e-12
                && big.center.x()[a] + big.radius <= g.x_end(a) + 1e-12
        });
    if !fits {
        return Err(Error::BallExitsDomain);
    }
    let cells = field.cells();
    let mut num = 0.0;
    let mut den = 0.0;
    for (slab, c) in field.cells_in_ball(&big) {
        let idx = slab * cells + c;
        if !field.active[idx] {
            return Err(Error::BallExitsDomain);
        }
        let in_small = {
            let p = field.cell_point(slab, c);
            ball.contains(&p)
        };
        if in_small && field.interior[idx] {
            num += field.grad2[idx];
        }
        den += field.u[idx] * field.u[idx];
    }
    let vol = field.cell_volume();
    Ok((num * vol) / (den * vol / (ball.radius * ball.radius)).max(f64::MIN_POSITIVE))
}

#[derive(Clone, Debug, Serialize)]
pub struct CmeRow {
    pub center_t: f64,
    pub center_x: Vec<f64>,
    pub r: f64,
    pub value: f64,
    pub value_with_time_term: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CmeTable {
    pub rows: Vec<CmeRow>,
    pub sup: f64,
    pub sup_with_time_term: f64,
}

/// Distance-weighted Carleson functional over boundary balls, normalized by
/// the squared sup of the solution: for each (center, r),
/// `r^-(n+1) sum over cells in the ball of (|grad u|^2 + delta^2 |du/dt|^2)
/// delta(cell) vol`. Cells flagged near the staircase boundary are excluded;
/// their distance weight vanishes with the grid there.
pub fn cme_functional(
    field: &HeatField,
    centers: &[ParaPoint],
    radii: &[f64],
) -> Result<CmeTable> {
    let g = &field.grid;
    let n = g.spatial_dim;
    let floor = 8.0 * g.delta;
    for &r in radii {
        if r < floor {
            return Err(Error::ResolutionFloor {
                requested: r,
                floor,
            });
        }
    }
    let norm = field.sup_u * field.sup_u;
    if norm == 0.0 {
        return Err(Error::Param("zero solution".into()));
    }
    let cells = field.cells();
    let vol = field.cell_volume();
    let mut rows = Vec::with_capacity(centers.len() * radii.len());
    let mut sup = 0.0f64;
    let mut sup_t = 0.0f64;
    for c0 in centers {
        for &r in radii {
            let ball = ParaBall::new(*c0, r);
            let mut v = 0.0;
            let mut vt = 0.0;
            for (slab, c) in field.cells_in_ball(&ball) {
                let idx = slab * cells + c;
                if !field.interior[idx] {
                    continue;
                }
                let de = field.delta_e[idx];
                v += field.grad2[idx] * de;
                vt += (field.grad2[idx] + de * de * field.ut[idx] * field.ut[idx]) * de;
            }
            let scale = vol / (r.powi(n as i32 + 1) * norm);
            let value = v * scale;
            let value_t = vt * scale;
            sup = sup.max(value);
            sup_t = sup_t.max(value_t);
            rows.push(CmeRow {
                center_t: c0.t,
                center_x: c0.x().to_vec(),
                r,
                value,
                value_with_time_term: value_t,
            });
        }
    }
    Ok(CmeTable {
        rows,
        sup,
        sup_with_time_term: sup_t,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BetaValue {
    pub q: CubeId,
    pub value: f64,
    pub cells: usize,
    /// Cells skipped because their Whitney cube is unresolved at the
    /// enumeration floor and no deeper location was requested.
    pub skipped_sliver: usize,
}

/// Energy piece of one region: `sum over cells of |grad v|^2 delta vol` with
/// `v = u / sup|u|`, where a cell belongs iff its Whitney cube qualifies for
/// the region. Cells below the materialized floor are resolved by an
/// on-demand location walk down to `deep_max_k` when given.
pub fn beta_q(
    field: &HeatField,
    tree: &CubeTree,
    region: &WhitneyRegion,
    dec: &WhitneyDecomposition,
    key_index: &HashMap<WhitneyKey, usize>,
    deep_max_k: Option<i32>,
) -> Result<BetaValue> {
    let g = &field.grid;
    let n = g.spatial_dim;
    let cells = field.cells();
    let vol = field.cell_volume();
    let norm = field.sup_u * field.sup_u;
    if norm == 0.0 {
        return Err(Error::Param("zero solution".into()));
    }
    let member_set: HashSet<usize> = region.members.iter().cloned().collect();
    let (lo, hi) = region_thresholds(region.eta, region.k_const, region.star, region.q_diam);
    let qb = crate::whitney::cube_bbox(tree, &region.q);
    // A cell of a qualifying cube I sits within diam(I) <= dist(I,E)/4 <=
    // hi/4 of I, and I within hi of Q: sweep margin 1.5 hi covers it.
    let margin = 1.5 * hi;
    let t_lo = qb.t_lo - (margin * margin);
    let t_hi = qb.t_hi + (margin * margin);
    let s_lo = ((t_lo - g.t0) / g.time_step()).floor().max(0.0) as usize;
    let s_hi = ((((t_hi - g.t0) / g.time_step()).ceil()).max(0.0) as usize).min(g.t_cells);
    let mut value = 0.0;
    let mut count = 0usize;
    let mut skipped = 0usize;
    for slab in s_lo..s_hi {
        for c in 0..cells {
            let idx = slab * cells + c;
            if !field.interior[idx] {
                continue;
            }
            // The cell's cube has dist(I, E) <= dist(cell, E): below the
            // inner threshold it can never qualify.
            if field.delta_e[idx] < lo {
                continue;
            }
            let p = field.cell_point(slab, c);
            if qb.dist_to_point(&p) > margin {
                continue;
            }
            // Locate the cell's Whitney cube through the materialized set.
            let mut found: Option<(WhitneyKey, f64)> = None;
            for k in dec.k_root..=dec.max_k {
                let key = WhitneyKey::containing(&p, k);
                if let Some(&i) = key_index.get(&key) {
                    found = Some((key, dec.cubes[i].dist_e));
                    break;
                }
            }
            let (key, dist_e) = match found {
                Some((key, d)) => {
                    // Membership resolved against the precomputed region.
                    if !member_set.contains(&key_index[&key]) {
                        continue;
                    }
                    (key, d)
                }
                None => match deep_max_k {
                    None => {
                        skipped += 1;
                        continue;
                    }
                    Some(maxk) => {
                        match locate_cube(&field.graph, &dec.window, dec.k_root, maxk, &p)? {
                            None => {
                                skipped += 1;
                                continue;
                            }
                            Some(cube) => {
                                // Test the region predicate directly.
                                if cube.dist_e < lo {
                                    continue;
                                }
                                let bx = cube.key.to_box(n);
                                if bx.dist_to_box(&qb) > hi
                                    || tree.dist_box_to_cube(&bx, &region.q, hi + 1e-12) > hi
                                {
                                    continue;
                                }
                                (cube.key, cube.dist_e)
                            }
                        }
                    }
                },
            };
            let _ = (key, dist_e);
            value += field.grad2[idx] * field.delta_e[idx];
            count += 1;
        }
    }
    Ok(BetaValue {
        q: region.q,
        value: value * vol / norm,
        cells: count,
        skipped_sliver: skipped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PackingReport {
    pub q0: CubeId,
    pub sigma_q0: f64,
    pub total: f64,
    pub ratio: f64,
    /// Largest `beta_Q / sigma(Q)` over the swept cubes.
    pub a_max: f64,
    pub per_cube: Vec<BetaValue>,
    /// Ratio split by the corona parts when one is supplied: bad cubes,
    /// whole regimes, the restricted regime.
    pub part_ratios: Option<(f64, f64, f64)>,
}

/// Sum the region energies over every tree cube under `q0`, normalized by
/// `sigma(q0)`; optionally decomposed along a corona input.
pub fn packing_sum(
    field: &HeatField,
    tree: &CubeTree,
    q0: &CubeId,
    eta: f64,
    source: &RegionSource,
    deep_max_k: Option<i32>,
    corona: Option<&CoronaInput>,
) -> Result<PackingReport> {
    let k_const = 1.0 / eta;
    let sigma_q0 = tree
        .data(q0)
        .ok_or_else(|| Error::Param(format!("{q0} not in tree")))?
        .measure;
    use rayon::prelude::*;
    let descendants = tree.descendants(q0);
    let collected: Result<Vec<BetaValue>> = descendants
        .par_iter()
        .map(|q| {
            let (handle, region) = region_with_source(q, eta, k_const, false, source, tree)?;
            let dec = handle.get();
            let key_index = dec.key_index();
            beta_q(field, tree, &region, dec, &key_index, deep_max_k)
        })
        .collect();
    let per_cube = collected?;
    let mut total = 0.0;
    let mut a_max = 0.0f64;
    let mut betas: BTreeMap<CubeId, f64> = BTreeMap::new();
    for beta in &per_cube {
        total += beta.value;
        a_max = a_max.max(beta.value / tree.cubes[&beta.q].measure);
        betas.insert(beta.q, beta.value);
    }
    let part_ratios = corona.map(|c| {
        let mut bad = 0.0;
        let mut whole = 0.0;
        let mut rest = 0.0;
        for (q, b) in &betas {
            if c.bad.contains(q) {
                bad += b;
            } else {
                let mut owner_whole = false;
                let mut owner_rest = false;
                for r in &c.regimes {
                    if r.cubes.contains(q) {
                        if q0.contains(&r.maximal) && r.maximal != *q0 {
                            owner_whole = true;
                        } else {
                            owner_rest = true;
                        }
                    }
                }
                if owner_whole {
                    whole += b;
                } else if owner_rest {
                    rest += b;
                }
            }
        }
        (bad / sigma_q0, whole / sigma_q0, rest / sigma_q0)
    });
    Ok(PackingReport {
        q0: *q0,
        sigma_q0,
        total,
        ratio: total / sigma_q0,
        a_max,
        per_cube,
        part_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pargeo::ScalarField;
    use crate::whitney::whitney_region;
    use approx::assert_relative_eq;

    fn flat_graph(delta: f64, t_extent: f64) -> Arc<SampledGraph> {
        let t_cells = (t_extent / (delta * delta)).round() as usize;
        let grid = ParaGrid::new(0, delta, 0.0, t_cells, &[], &[]);
        let field = ScalarField::from_fn(grid, |_, _| 0.0);
        Arc::new(SampledGraph::from_field(
            field,
            Some(Arc::new(|_, _: &[f64]| 0.0)),
        ))
    }

    fn solve_grid(delta: f64, t_extent: f64, x_lo: f64, x_cells: usize) -> ParaGrid {
        let t_cells = (t_extent / (delta * delta)).round() as usize;
        ParaGrid::new(1, delta, 0.0, t_cells, &[x_lo], &[x_cells])
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let delta = 1.0 / 32.0;
        let graph = flat_graph(delta, 0.125);
        let grid = solve_grid(delta, 0.125, -0.5, 32);
        let f = solve_heat(graph, Side::Both, DataSpec::Constant { value: 1.0 }, grid, 4).unwrap();
        for (i, v) in f.u.iter().enumerate() {
            if f.active[i] {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn linear_profile_is_scheme_exact() {
        let delta = 1.0 / 32.0;
        let graph = flat_graph(delta, 0.125);
        let grid = solve_grid(delta, 0.125, -0.5, 32);
        let f = solve_heat(graph, Side::Both, DataSpec::LinearNormal, grid, 4).unwrap();
        let cells = f.cells();
        for slab in 0..f.grid.t_cells {
            for c in 0..cells {
                let idx = slab * cells + c;
                if f.active[idx] {
                    let x = f.cell_coords(c);
                    assert!((f.u[idx] - x[0]).abs() < 1e-13, "u={} x={}", f.u[idx], x[0]);
                }
            }
        }
    }

    #[test]
    fn caloric_quadratic_is_scheme_exact() {
        let delta = 1.0 / 32.0;
        let graph = flat_graph(delta, 0.125);
        let grid = solve_grid(delta, 0.125, -0.5, 32);
        let f = solve_heat(graph, Side::Plus, DataSpec::CaloricQuadratic, grid, 4).unwrap();
        let cells = f.cells();
        for slab in 0..f.grid.t_cells {
            let t = f.grid.t_center(slab);
            for c in 0..cells {
                let idx = slab * cells + c;
                if f.active[idx] {
                    let x = f.cell_coords(c);
                    let exact = x[0] * x[0] / 2.0 + t;
                    assert!(
                        (f.u[idx] - exact).abs() < 1e-12,
                        "slab {slab}: {} vs {exact}",
                        f.u[idx]
                    );
                }
            }
        }
    }

    #[test]
    fn cfl_and_empty_domain_errors() {
        let delta = 1.0 / 32.0;
        let graph = flat_graph(delta, 0.125);
        let grid = solve_grid(delta, 0.125, -0.5, 32);
        assert!(matches!(
            solve_heat(
                graph.clone(),
                Side::Plus,
                DataSpec::Constant { value: 0.0 },
                grid.clone(),
                1
            ),
            Err(Error::Cfl { .. })
        ));
        // A grid entirely below the graph has no plus side.
        let below = solve_grid(delta, 0.125, -2.0, 32);
        assert!(matches!(
            solve_heat(graph, Side::Plus, DataSpec::Constant { value: 0.0 }, below, 4),
            Err(Error::EmptyDomain)
        ));
    }

    #[test]
    fn caccioppoli_constant_and_linear() {
        let delta = 1.0 / 64.0;
        let graph = flat_graph(delta, 0.25);
        let grid = solve_grid(delta, 0.25, 0.0, 64);
        // Plus side only; the graph sits at the lower box edge.
        let f = solve_heat(
            graph.clone(),
            Side::Plus,
            DataSpec::Constant { value: 2.0 },
            grid.clone(),
            4,
        )
        .unwrap();
        let ball = ParaBall::new(ParaPoint::new(0.125, &[0.5]), 0.15);
        assert_eq!(caccioppoli_ratio(&f, &ball, 1.0).unwrap(), 0.0);
        // Linear solution: ratio equals |B| cap interior over r^-2 integral of
        // x^2; compare against a quadrature oracle on the same cells.
        let fl = solve_heat(graph, Side::Plus, DataSpec::LinearNormal, grid, 4).unwrap();
        let got = caccioppoli_ratio(&fl, &ball, 1.0).unwrap();
        let cells = fl.cells();
        let mut num = 0.0;
        let mut den = 0.0;
        let big = ParaBall::new(ball.center, 2.0 * ball.radius);
        for (slab, c) in fl.cells_in_ball(&big) {
            let idx = slab * cells + c;
            let x = fl.cell_coords(c);
            let p = fl.cell_point(slab, c);
            if ball.contains(&p) && fl.interior[idx] {
                num += 1.0;
            }
            den += x[0] * x[0];
        }
        let oracle = num / (den / (ball.radius * ball.radius));
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
    }

    #[test]
    fn caccioppoli_uniform_over_scales_for_step_datum() {
        let delta = 1.0 / 64.0;
        let graph = flat_graph(delta, 0.25);
        let grid = solve_grid(delta, 0.25, 0.0, 64);
        let f = solve_heat(
            graph,
            Side::Plus,
            DataSpec::SmoothStep {
                axis: StepAxis::T,
                center: 0.125,
                width: 0.02,
            },
            grid,
            4,
        )
        .unwrap();
        // Balls tracking the transition wake, where the energy is active.
        let mut ratios = Vec::new();
        for &(t, x, r) in &[
            (0.125, 0.3, 0.1),
            (0.125, 0.3, 0.05),
            (0.13, 0.2, 0.08),
            (0.13, 0.25, 0.06),
            (0.14, 0.35, 0.1),
            (0.12, 0.3, 0.07),
            (0.135, 0.3, 0.09),
            (0.125, 0.25, 0.12),
        ] {
            let ball = ParaBall::new(ParaPoint::new(t, &[x]), r);
            let v = caccioppoli_ratio(&f, &ball, 1.0).unwrap();
            assert!(v.is_finite() && v >= 0.0);
            if v > 0.0 {
                ratios.push(v);
            }
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
        // Uniformly bounded across balls and scales.
        assert!(hi / lo < 10.0, "spread {lo}..{hi}");
    }

    #[test]
    fn caccioppoli_requires_enlarged_ball_inside() {
        let delta = 1.0 / 32.0;
        let graph = flat_graph(delta, 0.125);
        let grid = solve_grid(delta, 0.125, 0.0, 32);
        let f = solve_heat(graph, Side::Plus, DataSpec::Constant { value: 1.0 }, grid, 4).unwrap();
        let ball = ParaBall::new(ParaPoint::new(0.06, &[0.2]), 0.15);
        assert!(matches!(
            caccioppoli_ratio(&f, &ball, 1.0),
            Err(Error::BallExitsDomain)
        ));
    }

    #[test]
    fn cme_zero_for_constants_and_radius_floor() {
        let delta = 1.0 / 64.0;
        let graph = flat_graph(delta, 0.25);
        let grid = solve_grid(delta, 0.25, -0.5, 64);
        let f = solve_heat(graph, Side::Both, DataSpec::Constant { value: 3.0 }, grid, 4).unwrap();
        let centers = [ParaPoint::new(0.125, &[0.0])];
        let table = cme_functional(&f, &centers, &[0.2]).unwrap();
        assert_eq!(table.sup, 0.0);
        assert!(matches!(
            cme_functional(&f, &centers, &[delta]),
            Err(Error::ResolutionFloor { .. })
        ));
    }

    #[test]
    fn beta_is_additive_over_disjoint_regions() {
        use crate::dyadic::build_cubes_on_graph;
        let delta = 1.0 / 64.0;
        let graph = flat_graph(delta, 0.25);
        let tree = build_cubes_on_graph(graph.clone(), 2, 4).unwrap();
        let grid = solve_grid(delta, 0.25, -0.5, 64);
        let f = solve_heat(
            graph.clone(),
            Side::Both,
            DataSpec::SmoothStep {
                axis: StepAxis::T,
                center: 0.125,
                width: 0.05,
            },
            grid,
            4,
        )
        .unwrap();
        let window = crate::pargeo::PBox {
            t_lo: 0.0,
            t_hi: 0.25,
            x_lo: [-0.5, 0.0],
            x_hi: [0.5, 0.0],
            dim: 1,
        };
        let dec = crate::whitney::whitney_decompose(&graph, &window, 1, 7).unwrap();
        let index = dec.key_index();
        let eta = 1.0 / 16.0;
        let qa = CubeId::new(4, 16, 0);
        let qb = CubeId::new(4, 40, 0); // far apart: disjoint regions
        let ra = whitney_region(&qa, eta, 16.0, false, &dec, &tree).unwrap();
        let rb = whitney_region(&qb, eta, 16.0, false, &dec, &tree).unwrap();
        assert!(ra.members.iter().all(|m| !rb.members.contains(m)));
        // Splitting one region into disjoint halves splits its energy.
        let full = beta_q(&f, &tree, &ra, &dec, &index, None).unwrap();
        let mut half1 = ra.clone();
        let mut half2 = ra.clone();
        let mid = ra.members.len() / 2;
        half1.members.truncate(mid);
        half1.dist_iq.truncate(mid);
        half2.members.drain(..mid);
        half2.dist_iq.drain(..mid);
        let b1 = beta_q(&f, &tree, &half1, &dec, &index, None).unwrap();
        let b2 = beta_q(&f, &tree, &half2, &dec, &index, None).unwrap();
        assert_relative_eq!(
            full.value,
            b1.value + b2.value,
            max_relative = 1e-9,
            epsilon = 1e-300
        );
        // Empty region: zero energy.
        let q_empty = CubeId::new(4, 17, 0);
        let mut empty = whitney_region(&q_empty, eta, 16.0, false, &dec, &tree).unwrap();
        empty.members.clear();
        empty.dist_iq.clear();
        let be = beta_q(&f, &tree, &empty, &dec, &index, None).unwrap();
        assert_eq!(be.value, 0.0);
    }

    #[test]
    fn packing_report_runs_and_is_bounded() {
        use crate::dyadic::build_cubes_on_graph;
        let delta = 1.0 / 64.0;
        let graph = flat_graph(delta, 0.25);
        let tree = build_cubes_on_graph(graph.clone(), 2, 4).unwrap();
        let grid = solve_grid(delta, 0.25, -0.5, 64);
        let f = solve_heat(
            graph.clone(),
            Side::Both,
            DataSpec::SmoothStep {
                axis: StepAxis::T,
                center: 0.125,
                width: 0.05,
            },
            grid,
            4,
        )
        .unwrap();
        let window = crate::pargeo::PBox {
            t_lo: 0.0,
            t_hi: 0.25,
            x_lo: [-0.5, 0.0],
            x_hi: [0.5, 0.0],
            dim: 1,
        };
        let source = RegionSource::Local {
            window,
            k_root: 1,
            max_k_cap: 10,
        };
        let eta = 1.0 / 16.0;
        let q0 = CubeId::new(2, 1, 0);
        let rep = packing_sum(&f, &tree, &q0, eta, &source, Some(9), None).unwrap();
        assert!(rep.ratio.is_finite());
        assert!(rep.a_max.is_finite());
        assert!(rep.per_cube.len() == tree.descendants(&q0).len());
        // v is bounded by 1, delta by the box size: the ratio stays modest.
        assert!(rep.ratio < 100.0, "ratio {}", rep.ratio);
    }
}
