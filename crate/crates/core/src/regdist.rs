//! Regularized companion of a nonnegative Lip(1/2,1) field `h` on the graph
//! domain: a Whitney-type family of parabolic dyadic boxes selected by the
//! `diam(I) <= (1/20) inf_I h` rule, and the smooth sum
//! `H = sum diam(I_i) phi_i` over bumps that are 1 on `2I_i` and supported in
//! `3I_i`. `H` is comparable to `h`, vanishes exactly on the zero set, and
//! has closed-form derivatives of all orders off it.

use std::collections::HashMap;

use serde::Serialize;

use crate::dyadic::CubeId;
use crate::error::{Error, Result};
use crate::halfderiv::{half_time_derivative, pbmo_norm, HalfDerivMethod};
use crate::pargeo::{measure_lip, ParaGrid, ScalarField};

/// Selection and comparability data for the Whitney family of `h`.
#[derive(Debug)]
pub struct HWhitney {
    pub grid: ParaGrid,
    pub k_top: i32,
    pub k_leaf: i32,
    /// Accepted boxes, sorted by id. The spatial index stays 0 when the graph
    /// domain has no spatial axis.
    pub cubes: Vec<CubeId>,
    /// Cubes whose 10-dilate carries a sample violating
    /// `10 diam <= h <= 60 diam`.
    pub a1_violations: Vec<CubeId>,
    /// Intersecting 10-dilate pairs with diameter ratio outside `[1/6, 6]`.
    pub a2_violations: Vec<(CubeId, CubeId)>,
    /// Largest number of 10-dilates covering one sample.
    pub overlap_max: usize,
    /// Volume-comparison cap for the overlap, from the dimension alone.
    pub overlap_bound: f64,
    /// Boxes still unaccepted at `k_leaf` (they hug the zero set).
    pub unresolved_count: usize,
    pub unresolved_volume: f64,
    pub lip_measured: f64,
    /// Dense per-generation index tables, sorted by generation.
    tables: Vec<GenTable>,
}

/// Cube indices of one generation on a dense lattice window.
#[derive(Debug)]
struct GenTable {
    k: i32,
    it0: i64,
    ix0: i64,
    nt: i64,
    nx: i64,
    idx: Vec<u32>,
}

impl GenTable {
    #[inline]
    fn get(&self, it: i64, ix: i64) -> Option<usize> {
        if it < self.it0 || it >= self.it0 + self.nt || ix < self.ix0 || ix >= self.ix0 + self.nx {
            return None;
        }
        let v = self.idx[((ix - self.ix0) * self.nt + (it - self.it0)) as usize];
        (v != u32::MAX).then_some(v as usize)
    }
}

fn build_tables(cubes: &[CubeId]) -> Vec<GenTable> {
    let mut gens: Vec<i32> = cubes.iter().map(|c| c.k).collect();
    gens.sort();
    gens.dedup();
    let mut tables = Vec::with_capacity(gens.len());
    for k in gens {
        let ids: Vec<(usize, &CubeId)> = cubes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.k == k)
            .collect();
        let it0 = ids.iter().map(|(_, c)| c.it).min().unwrap();
        let it1 = ids.iter().map(|(_, c)| c.it).max().unwrap();
        let ix0 = ids.iter().map(|(_, c)| c.ix).min().unwrap();
        let ix1 = ids.iter().map(|(_, c)| c.ix).max().unwrap();
        let (nt, nx) = (it1 - it0 + 1, ix1 - ix0 + 1);
        let mut idx = vec![u32::MAX; (nt * nx) as usize];
        for (i, c) in ids {
            idx[((c.ix - ix0) * nt + (c.it - it0)) as usize] = i as u32;
        }
        tables.push(GenTable {
            k,
            it0,
            ix0,
            nt,
            nx,
            idx,
        });
    }
    tables
}

/// Parabolic diameter of a graph-domain box at generation `k`.
fn cube_diam(k: i32, sd: usize) -> f64 {
    (2.0f64).powi(-k) * ((sd as f64).sqrt() + 1.0)
}

fn near_int(v: f64) -> Option<i64> {
    let r = v.round();
    ((v - r).abs() <= 1e-9).then_some(r as i64)
}

/// Per-generation min pyramid over dyadic blocks of the sampled field.
struct MinPyramid {
    /// generation -> (nt, nx, it0, ix0, mins)
    levels: HashMap<i32, (usize, usize, i64, i64, Vec<f64>)>,
}

impl MinPyramid {
    fn min_of(&self, id: &CubeId) -> f64 {
        let (nt, _nx, it0, ix0, mins) = &self.levels[&id.k];
        let it = (id.it - it0) as usize;
        let ix = (id.ix - ix0) as usize;
        mins[ix * nt + it]
    }
}

fn build_pyramid(h: &ScalarField, k_top: i32, k_leaf: i32) -> Result<MinPyramid> {
    let g = &h.grid;
    let sd = g.spatial_dim;
    let ts_leaf = (4.0f64).powi(-k_leaf);
    let xs_leaf = (2.0f64).powi(-k_leaf);
    let t_per = near_int(ts_leaf / g.time_step())
        .ok_or_else(|| Error::Misaligned("time step does not divide the leaf box".into()))?
        as usize;
    let x_per = if sd == 1 {
        near_int(xs_leaf / g.delta)
            .ok_or_else(|| Error::Misaligned("spatial step does not divide the leaf box".into()))?
            as usize
    } else {
        1
    };
    if t_per == 0 || x_per == 0 {
        return Err(Error::ResolutionFloor {
            requested: ts_leaf,
            floor: g.time_step(),
        });
    }
    let it0_leaf = near_int(g.t0 / ts_leaf)
        .ok_or_else(|| Error::Misaligned(format!("t0 = {} at leaf scale", g.t0)))?;
    let nt_leaf = near_int((g.t_end() - g.t0) / ts_leaf)
        .ok_or_else(|| Error::Misaligned("time extent not a multiple of the leaf box".into()))?
        as usize;
    let (ix0_leaf, nx_leaf) = if sd == 1 {
        let a = near_int(g.x0[0] / xs_leaf)
            .ok_or_else(|| Error::Misaligned(format!("x0 = {}", g.x0[0])))?;
        let m = near_int((g.x_end(0) - g.x0[0]) / xs_leaf)
            .ok_or_else(|| Error::Misaligned("spatial extent not a multiple of the leaf".into()))?
            as usize;
        (a, m)
    } else {
        (0i64, 1usize)
    };
    // Alignment at the top scale too (so parents group evenly).
    let depth = (k_leaf - k_top) as u32;
    if it0_leaf.rem_euclid(4i64.pow(depth)) != 0 && near_int(g.t0 / (4.0f64).powi(-k_top)).is_none()
    {
        return Err(Error::Misaligned("window not aligned at the top scale".into()));
    }
    let mut levels = HashMap::new();
    let mut mins = vec![f64::INFINITY; nt_leaf * nx_leaf];
    for bx in 0..nx_leaf {
        for bt in 0..nt_leaf {
            let mut m = f64::INFINITY;
            for ix in bx * x_per..(bx + 1) * x_per {
                for it in bt * t_per..(bt + 1) * t_per {
                    let v = if sd == 1 {
                        h.at(it, &[ix])
                    } else {
                        h.at(it, &[])
                    };
                    m = m.min(v);
                }
            }
            mins[bx * nt_leaf + bt] = m;
        }
    }
    levels.insert(k_leaf, (nt_leaf, nx_leaf, it0_leaf, ix0_leaf, mins));
    for k in (k_top..k_leaf).rev() {
        let (cnt, cnx, cit0, cix0, cm) = levels[&(k + 1)].clone();
        let nt = cnt / 4;
        let nx = if sd == 1 { cnx / 2 } else { 1 };
        let it0 = cit0.div_euclid(4);
        let ix0 = cix0.div_euclid(2);
        let mut mins = vec![f64::INFINITY; nt * nx];
        for bx in 0..cnx {
            for bt in 0..cnt {
                let v = cm[bx * cnt + bt];
                let px = if sd == 1 { bx / 2 } else { 0 };
                let slot = &mut mins[px * nt + bt / 4];
                *slot = slot.min(v);
            }
        }
        levels.insert(k, (nt, nx, it0, ix0, mins));
    }
    Ok(MinPyramid { levels })
}

/// Select the maximal parabolic dyadic boxes with
/// `diam(I) <= (1/20) inf_I h`, where the sampled infimum is lowered by the
/// Lip slack of one cell so acceptance is conservative. The field must be
/// nonnegative with Lip(1/2,1) constant at most 1 (checked by sampling).
pub fn whitney_wrt_h(h: &ScalarField, k_top: i32, k_leaf: i32) -> Result<HWhitney> {
    let g = h.grid.clone();
    let sd = g.spatial_dim;
    if k_leaf < k_top {
        return Err(Error::Param("k_leaf must be >= k_top".into()));
    }
    let hmin = h.min();
    if hmin < 0.0 {
        return Err(Error::NegativeField(hmin));
    }
    let lip = measure_lip(h);
    if lip > 1.0 + 1e-9 {
        return Err(Error::LipExceeded {
            measured: lip,
            limit: 1.0,
        });
    }
    let pyramid = build_pyramid(h, k_top, k_leaf)?;
    // Farthest any point of a box sits from its nearest sample.
    let slack = if sd == 1 { g.delta / 2.0 } else { 0.0 } + g.delta / (2.0f64).sqrt();
    let mut cubes = Vec::new();
    let mut unresolved_count = 0usize;
    let mut unresolved_volume = 0.0f64;
    let (nt_top, nx_top, it0_top, ix0_top, _) = pyramid.levels[&k_top].clone();
    let mut stack: Vec<CubeId> = Vec::new();
    for bx in 0..nx_top {
        for bt in 0..nt_top {
            stack.push(CubeId::new(k_top, it0_top + bt as i64, ix0_top + bx as i64));
        }
    }
    while let Some(id) = stack.pop() {
        let inf = pyramid.min_of(&id) - slack;
        let diam = cube_diam(id.k, sd);
        if diam <= inf / 20.0 {
            cubes.push(id);
            continue;
        }
        if id.k >= k_leaf {
            unresolved_count += 1;
            unresolved_volume += id.t_side() * if sd == 1 { id.side() } else { 1.0 };
            continue;
        }
        for c in id.children(sd + 1) {
            stack.push(c);
        }
    }
    cubes.sort();
    // Comparability on the 10-dilates, sampled.
    let mut a1 = Vec::new();
    for id in &cubes {
        let diam = cube_diam(id.k, sd);
        let mut ok = true;
        for_samples_in_dilate(&g, id, 10.0, |flat| {
            let v = h.values[flat];
            if v < 10.0 * diam - 1e-12 || v > 60.0 * diam + 1e-12 {
                ok = false;
            }
        });
        if !ok {
            a1.push(*id);
        }
    }
    // Dense index per generation for point queries and pair scans.
    let tables = build_tables(&cubes);
    // Pairwise size comparability of intersecting 10-dilates.
    let mut a2 = Vec::new();
    let gens: Vec<i32> = tables.iter().map(|t| t.k).collect();
    for (ai, a_id) in cubes.iter().enumerate() {
        let (a_t, a_x) = dilate_bounds(a_id, 10.0);
        for &kb in &gens {
            if kb < a_id.k {
                continue; // each unordered pair once, from the coarser side
            }
            let tsb = (4.0f64).powi(-kb);
            let xsb = (2.0f64).powi(-kb);
            let it_lo = ((a_t.0 / tsb).floor() as i64) - 13;
            let it_hi = ((a_t.1 / tsb).ceil() as i64) + 13;
            let ix_lo = ((a_x.0 / xsb).floor() as i64) - 6;
            let ix_hi = ((a_x.1 / xsb).ceil() as i64) + 6;
            let table = tables.iter().find(|t| t.k == kb).unwrap();
            for it in it_lo..=it_hi {
                for ix in ix_lo..=ix_hi {
                    if let Some(bi) = table.get(it, ix) {
                        if bi <= ai {
                            continue;
                        }
                        let b_id = &cubes[bi];
                        let (b_t, b_x) = dilate_bounds(b_id, 10.0);
                        let meet = a_t.0 <= b_t.1
                            && b_t.0 <= a_t.1
                            && (sd == 0 || (a_x.0 <= b_x.1 && b_x.0 <= a_x.1));
                        if meet {
                            let ratio = cube_diam(a_id.k, sd) / cube_diam(b_id.k, sd);
                            if !(1.0 / 6.0..=6.0).contains(&ratio) {
                                a2.push((*a_id, *b_id));
                            }
                        }
                    }
                }
            }
        }
    }
    // Overlap of the 10-dilates, rasterized on the samples.
    let mut counts = vec![0u32; g.len()];
    for id in &cubes {
        for_samples_in_dilate(&g, id, 10.0, |flat| counts[flat] += 1);
    }
    let overlap_max = counts.iter().cloned().max().unwrap_or(0) as usize;
    let overlap_bound = (2.0 * 11.0 / 10.0 * 60.0 * ((sd as f64).sqrt() + 1.0))
        .powi(sd as i32 + 2);
    Ok(HWhitney {
        grid: g,
        k_top,
        k_leaf,
        cubes,
        a1_violations: a1,
        a2_violations: a2,
        overlap_max,
        overlap_bound,
        unresolved_count,
        unresolved_volume,
        lip_measured: lip,
        tables,
    })
}

fn dilate_bounds(id: &CubeId, kappa: f64) -> ((f64, f64), (f64, f64)) {
    let (t_lo, t_hi) = id.base_t_range();
    let tc = 0.5 * (t_lo + t_hi);
    let th = 0.5 * (t_hi - t_lo) * kappa * kappa;
    let (x_lo, x_hi) = id.base_x_range();
    let xc = 0.5 * (x_lo + x_hi);
    let xh = 0.5 * (x_hi - x_lo) * kappa;
    ((tc - th, tc + th), (xc - xh, xc + xh))
}

fn for_samples_in_dilate(g: &ParaGrid, id: &CubeId, kappa: f64, mut f: impl FnMut(usize)) {
    let sd = g.spatial_dim;
    let ((t_lo, t_hi), (x_lo, x_hi)) = dilate_bounds(id, kappa);
    let it_lo = ((t_lo - g.t0) / g.time_step() - 0.5).ceil().max(0.0) as usize;
    let it_hi = ((((t_hi - g.t0) / g.time_step() - 0.5).floor() + 1.0).max(0.0) as usize)
        .min(g.t_cells);
    if sd == 0 {
        for it in it_lo..it_hi {
            f(g.index(it, &[]));
        }
    } else {
        let ix_lo = ((x_lo - g.x0[0]) / g.delta - 0.5).ceil().max(0.0) as usize;
        let ix_hi = ((((x_hi - g.x0[0]) / g.delta - 0.5).floor() + 1.0).max(0.0) as usize)
            .min(g.x_cells[0]);
        for ix in ix_lo..ix_hi {
            for it in it_lo..it_hi {
                f(g.index(it, &[ix]));
            }
        }
    }
}

/// Smooth transition: 1 on `[0, a]`, 0 beyond `b`, C-infinity in between.
#[derive(Clone, Copy, Debug)]
struct SmoothStep;

impl SmoothStep {
    #[inline]
    fn sigma(s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (-1.0 / s).exp()
        }
    }

    #[inline]
    fn sigma_d1(s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (-1.0 / s).exp() / (s * s)
        }
    }

    #[inline]
    fn sigma_d2(s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (-1.0 / s).exp() * (1.0 - 2.0 * s) / s.powi(4)
        }
    }

    /// theta(s) = sigma(s) / (sigma(s) + sigma(1-s)); 0 at 0, 1 at 1.
    fn theta(s: f64) -> (f64, f64, f64) {
        if s <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if s >= 1.0 {
            return (1.0, 0.0, 0.0);
        }
        let a = Self::sigma(s);
        let b = Self::sigma(1.0 - s);
        let a1 = Self::sigma_d1(s);
        let b1 = -Self::sigma_d1(1.0 - s);
        let a2 = Self::sigma_d2(s);
        let b2 = Self::sigma_d2(1.0 - s);
        let den = a + b;
        let v = a / den;
        let num1 = a1 * b - a * b1;
        let d1 = num1 / (den * den);
        let num2 = (a2 * b - a * b2) * den - 2.0 * num1 * (a1 + b1);
        let d2 = num2 / (den * den * den);
        (v, d1, d2)
    }

    /// chi(xi) = 1 for |xi| <= a, 0 for |xi| >= b; value and two derivatives
    /// in xi.
    fn chi(xi: f64, a: f64, b: f64) -> (f64, f64, f64) {
        let r = xi.abs();
        if r <= a {
            return (1.0, 0.0, 0.0);
        }
        if r >= b {
            return (0.0, 0.0, 0.0);
        }
        let w = b - a;
        let s = (b - r) / w;
        let (v, d1, d2) = Self::theta(s);
        let sgn = if xi >= 0.0 { 1.0 } else { -1.0 };
        // d s / d xi = -sgn / w.
        (v, -sgn * d1 / w, d2 / (w * w))
    }
}

/// The regularized field: bump sum over the Whitney family of `h`.
pub struct HField {
    pub hw: HWhitney,
    pub h: ScalarField,
    /// `H` sampled on the carrier grid.
    pub sampled: ScalarField,
}

impl std::fmt::Debug for HField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HField")
            .field("cubes", &self.hw.cubes.len())
            .field("overlap_max", &self.hw.overlap_max)
            .finish()
    }
}

/// First and second derivative magnitudes of `H` at a point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HDerivs {
    pub dt: f64,
    pub dx: f64,
    pub dtt: f64,
    pub dxx: f64,
}

/// Build `H = sum diam(I_i) phi_i` with `phi_i = 1` on `2I_i`, supported in
/// `3I_i`, smooth, and parabolically scaled per cube.
pub fn build_h_field(h: &ScalarField, hw: HWhitney) -> HField {
    let sampled = {
        let g = h.grid.clone();
        let sd = g.spatial_dim;
        let mut vals = vec![0.0f64; g.len()];
        use rayon::prelude::*;
        vals.par_iter_mut().enumerate().for_each(|(flat, v)| {
            let (it, ix) = g.unindex(flat);
            let t = g.t_center(it);
            let x = if sd == 1 { g.x_center(0, ix[0]) } else { 0.0 };
            *v = eval_h_at(&hw, sd, t, x).0;
        });
        ScalarField::new(g, vals)
    };
    HField {
        hw,
        h: h.clone(),
        sampled,
    }
}

/// Value of `H` plus the number of contributing bumps.
fn eval_h_at(hw: &HWhitney, sd: usize, t: f64, x: f64) -> (f64, usize) {
    let mut sum = 0.0;
    let mut terms = 0usize;
    for table in &hw.tables {
        let ts = (4.0f64).powi(-table.k);
        let xs = (2.0f64).powi(-table.k);
        // Support of phi_i is 3I_i: time half-width 4.5 ts, spatial 1.5 xs.
        let it_c = (t / ts).floor() as i64;
        let ix_c = if sd == 1 { (x / xs).floor() as i64 } else { 0 };
        for dit in -5i64..=5 {
            for dix in -2i64..=2 {
                if sd == 0 && dix != 0 {
                    continue;
                }
                if let Some(ci) = table.get(it_c + dit, ix_c + dix) {
                    let id = hw.cubes[ci];
                    let (v, _, _, _, _) = bump(&id, sd, t, x);
                    if v > 0.0 {
                        sum += cube_diam(id.k, sd) * v;
                        terms += 1;
                    }
                }
            }
        }
    }
    (sum, terms)
}

/// Bump value and first/second partials in (t, x) for one cube.
fn bump(id: &CubeId, sd: usize, t: f64, x: f64) -> (f64, f64, f64, f64, f64) {
    let (t_lo, t_hi) = id.base_t_range();
    let tc = 0.5 * (t_lo + t_hi);
    let ht = 0.5 * (t_hi - t_lo);
    let (ct, ct1, ct2) = SmoothStep::chi(t - tc, 4.0 * ht, 9.0 * ht);
    if sd == 0 {
        return (ct, ct1, 0.0, ct2, 0.0);
    }
    let (x_lo, x_hi) = id.base_x_range();
    let xc = 0.5 * (x_lo + x_hi);
    let hx = 0.5 * (x_hi - x_lo);
    let (cx, cx1, cx2) = SmoothStep::chi(x - xc, 2.0 * hx, 3.0 * hx);
    (
        ct * cx,
        ct1 * cx,
        ct * cx1,
        ct2 * cx,
        ct * cx2,
    )
}

impl HField {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let sd = self.h.grid.spatial_dim;
        eval_h_at(&self.hw, sd, t, if sd == 1 { x[0] } else { 0.0 }).0
    }

    /// Analytic derivatives of the bump sum; defined only off the zero set of
    /// `h`.
    pub fn derivs(&self, t: f64, x: &[f64]) -> Result<HDerivs> {
        let sd = self.h.grid.spatial_dim;
        if self.h.eval(t, x) <= 0.0 {
            return Err(Error::UndefinedDerivative);
        }
        let xv = if sd == 1 { x[0] } else { 0.0 };
        let (mut dt, mut dx, mut dtt, mut dxx) = (0.0, 0.0, 0.0, 0.0);
        for table in &self.hw.tables {
            let ts = (4.0f64).powi(-table.k);
            let xs = (2.0f64).powi(-table.k);
            let it_c = (t / ts).floor() as i64;
            let ix_c = if sd == 1 { (xv / xs).floor() as i64 } else { 0 };
            for dit in -5i64..=5 {
                for dix in -2i64..=2 {
                    if sd == 0 && dix != 0 {
                        continue;
                    }
                    if let Some(ci) = table.get(it_c + dit, ix_c + dix) {
                        let id = self.hw.cubes[ci];
                        let w = cube_diam(id.k, sd);
                        let (_, b_t, b_x, b_tt, b_xx) = bump(&id, sd, t, xv);
                        dt += w * b_t;
                        dx += w * b_x;
                        dtt += w * b_tt;
                        dxx += w * b_xx;
                    }
                }
            }
        }
        Ok(HDerivs {
            dt,
            dx,
            dtt,
            dxx,
        })
    }
}

/// Public entry matching the per-point derivative contract: magnitudes of the
/// time and space derivatives at order `m`.
pub fn eval_h_derivs(field: &HField, t: f64, x: &[f64], m: u32) -> Result<(f64, f64)> {
    if !(1..=2).contains(&m) {
        return Err(Error::Param("derivative order must be 1 or 2".into()));
    }
    let d = field.derivs(t, x)?;
    Ok(match m {
        1 => (d.dt.abs(), d.dx.abs()),
        _ => (d.dtt.abs(), d.dxx.abs()),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RegdistReport {
    /// min H/h over samples above the floor (must be >= 1/60).
    pub lower_ratio_min: f64,
    /// max H/(N h) over samples (must be <= 3/5).
    pub upper_ratio_max: f64,
    pub bound_violations: usize,
    /// Samples skipped because `h` is below the resolution floor of the
    /// selection.
    pub below_floor: usize,
    pub floor: f64,
    /// Measured `sup h^(2m-1) |d_t^m H|` and `sup h^(m-1) |grad^m H|`.
    pub c_t: [f64; 2],
    pub c_x: [f64; 2],
    pub lip_h_measured: f64,
    pub overlap: usize,
    pub pbmo_half_derivative: f64,
    pub cube_count: usize,
}

/// Verify the two-sided comparability (hard), measure the derivative
/// constants for m = 1, 2, the Lip constant of `H`, and the parabolic BMO of
/// its half-order time derivative.
pub fn verify_regdist_props(field: &HField) -> Result<RegdistReport> {
    verify_regdist_props_floored(field, None)
}

/// Same checks with an explicit resolution floor on `h` (used to compare
/// measured constants across grid resolutions on matched footing).
pub fn verify_regdist_props_floored(
    field: &HField,
    floor_override: Option<f64>,
) -> Result<RegdistReport> {
    let g = &field.h.grid;
    let sd = g.spatial_dim;
    let n_overlap = field.hw.overlap_max.max(1) as f64;
    // Below this the selection cannot have resolved a covering box.
    let floor = floor_override.unwrap_or(60.0 * cube_diam(field.hw.k_leaf, sd));
    let mut lower = f64::INFINITY;
    let mut upper: f64 = 0.0;
    let mut violations = 0usize;
    let mut below = 0usize;
    let mut c_t = [0.0f64; 2];
    let mut c_x = [0.0f64; 2];
    for flat in 0..g.len() {
        let hv = field.h.values[flat];
        let hh = field.sampled.values[flat];
        if hv <= 0.0 {
            // On the zero set H must vanish identically.
            if hh != 0.0 {
                violations += 1;
            }
            continue;
        }
        // Upper bound holds everywhere.
        let up = hh / (n_overlap * hv);
        upper = upper.max(up);
        if up > 0.6 + 1e-12 {
            violations += 1;
        }
        if hv < floor {
            below += 1;
            continue;
        }
        let low = hh / hv;
        lower = lower.min(low);
        if low < 1.0 / 60.0 - 1e-12 {
            violations += 1;
        }
        let (it, ix) = g.unindex(flat);
        let t = g.t_center(it);
        let x = if sd == 1 { [g.x_center(0, ix[0])] } else { [0.0] };
        let d = field.derivs(t, &x[..sd])?;
        c_t[0] = c_t[0].max(hv * d.dt.abs());
        c_x[0] = c_x[0].max(d.dx.abs());
        c_t[1] = c_t[1].max(hv.powi(3) * d.dtt.abs());
        c_x[1] = c_x[1].max(hv * d.dxx.abs());
    }
    let lip_h = measure_lip(&field.sampled);
    let dh = half_time_derivative(&field.sampled, HalfDerivMethod::Spectral)?;
    let pbmo = pbmo_norm(&dh);
    Ok(RegdistReport {
        lower_ratio_min: lower,
        upper_ratio_max: upper,
        bound_violations: violations,
        below_floor: below,
        floor,
        c_t,
        c_x,
        lip_h_measured: lip_h,
        overlap: field.hw.overlap_max,
        pbmo_half_derivative: pbmo,
        cube_count: field.hw.cubes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid_n1(t_cells: usize, delta: f64, t0: f64) -> ParaGrid {
        ParaGrid::new(0, delta, t0, t_cells, &[], &[])
    }

    #[test]
    fn constant_field_selects_one_generation() {
        let delta = 1.0 / 256.0;
        let g = grid_n1((1.0 / (delta * delta)) as usize, delta, 0.0);
        let h = ScalarField::from_fn(g, |_, _| 1.0);
        let hw = whitney_wrt_h(&h, 0, 8).unwrap();
        assert!(hw.a1_violations.is_empty());
        assert!(hw.a2_violations.is_empty());
        assert_eq!(hw.unresolved_count, 0);
        // All accepted boxes sit at the unique scale with
        // diam <= 1/20 < 2 diam.
        let ks: std::collections::BTreeSet<i32> = hw.cubes.iter().map(|c| c.k).collect();
        assert_eq!(ks.len(), 1);
        let k = *ks.iter().next().unwrap();
        let d = cube_diam(k, 0);
        assert!(d <= 1.0 / 20.0 && 2.0 * d > 1.0 / 20.0, "diam {d}");
    }

    #[test]
    fn distance_like_field_grows_cubes_with_distance() {
        let delta = 1.0 / 256.0;
        let t_cells = (2.0 / (delta * delta)) as usize;
        let g = grid_n1(t_cells, delta, -1.0);
        // Parabolic distance to the origin of the time axis.
        let h = ScalarField::from_fn(g, |t, _| t.abs().sqrt());
        let hw = whitney_wrt_h(&h, 0, 8).unwrap();
        assert!(hw.a1_violations.is_empty(), "{:?}", hw.a1_violations.len());
        assert!(hw.a2_violations.is_empty());
        assert!(hw.overlap_max as f64 <= hw.overlap_bound);
        // Diameters grow linearly with the distance from the zero set.
        for id in &hw.cubes {
            let (t_lo, t_hi) = id.base_t_range();
            let dist = t_lo.abs().min(t_hi.abs()).sqrt();
            let diam = cube_diam(id.k, 0);
            if dist > 0.1 {
                assert!(diam >= dist / 80.0 && diam <= dist / 10.0, "{id}: {diam} at {dist}");
            }
        }
        // The unresolved sliver hugs the zero set.
        assert!(hw.unresolved_count > 0);
    }

    #[test]
    fn h_field_bounds_and_zero_set() {
        let delta = 1.0 / 256.0;
        let t_cells = (2.0 / (delta * delta)) as usize;
        let g = grid_n1(t_cells, delta, -1.0);
        let h = ScalarField::from_fn(g, |t, _| t.abs().sqrt());
        let hw = whitney_wrt_h(&h, 0, 8).unwrap();
        let hf = build_h_field(&h, hw);
        let rep = verify_regdist_props(&hf).unwrap();
        assert_eq!(rep.bound_violations, 0, "{rep:?}");
        assert!(rep.lower_ratio_min >= 1.0 / 60.0);
        assert!(rep.upper_ratio_max <= 0.6);
        assert!(rep.c_t[0].is_finite() && rep.c_t[1].is_finite());
        assert!(rep.pbmo_half_derivative.is_finite());
        // H vanishes at the zero-set sample.
        let z = hf.eval(0.0, &[]);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn constant_field_h_value_in_band() {
        let delta = 1.0 / 256.0;
        let g = grid_n1((1.0 / (delta * delta)) as usize, delta, 0.0);
        let h = ScalarField::from_fn(g, |_, _| 1.0);
        let hw = whitney_wrt_h(&h, 0, 8).unwrap();
        let n = hw.overlap_max as f64;
        let hf = build_h_field(&h, hw);
        let (lo, hi) = (hf.sampled.min(), hf.sampled.max());
        assert!(lo >= 1.0 / 60.0, "lo {lo}");
        assert!(hi <= 0.6 * n, "hi {hi} vs N {n}");
        // Away from the window ends the tiling is periodic: the mid-window
        // oscillation stays well inside the band.
        assert!(hi / lo < 10.0, "unexpected oscillation: {lo}..{hi}");
    }

    #[test]
    fn isolated_bump_has_zero_derivatives_at_center() {
        // A single far-from-everything cube: inside 2I the bump is flat.
        let delta = 1.0 / 64.0;
        let g = grid_n1((1.0 / (delta * delta)) as usize, delta, 0.0);
        let h = ScalarField::from_fn(g.clone(), |_, _| 1.0);
        let id = CubeId::new(4, 8, 0);
        let hw = HWhitney {
            grid: g.clone(),
            k_top: 4,
            k_leaf: 4,
            cubes: vec![id],
            a1_violations: vec![],
            a2_violations: vec![],
            overlap_max: 1,
            overlap_bound: 17424.0,
            unresolved_count: 0,
            unresolved_volume: 0.0,
            lip_measured: 0.0,
            tables: build_tables(&[id]),
        };
        let hf = build_h_field(&h, hw);
        let (t_lo, t_hi) = id.base_t_range();
        let tc = 0.5 * (t_lo + t_hi);
        let d = hf.derivs(tc, &[]).unwrap();
        assert_eq!(d.dt, 0.0);
        assert_eq!(d.dtt, 0.0);
        assert_relative_eq!(hf.eval(tc, &[]), cube_diam(4, 0));
    }

    #[test]
    fn analytic_derivatives_match_finite_differences_at_second_order() {
        let delta = 1.0 / 256.0;
        let t_cells = (2.0 / (delta * delta)) as usize;
        let g = grid_n1(t_cells, delta, -1.0);
        let h = ScalarField::from_fn(g, |t, _| t.abs().sqrt());
        let hw = whitney_wrt_h(&h, 0, 8).unwrap();
        let hf = build_h_field(&h, hw);
        let probe = [0.31017, -0.52951, 0.70213];
        for &t in &probe {
            let d = hf.derivs(t, &[]).unwrap();
            // Step sized to the smallest bump carrying this point, so the
            // difference quotient sits in its asymptotic regime.
            let local = (t.abs().sqrt() / 60.0).powi(2);
            let s0 = local / 200.0;
            let mut errs = Vec::new();
            for &s in &[s0, s0 / 2.0] {
                let fd = (hf.eval(t + s, &[]) - hf.eval(t - s, &[])) / (2.0 * s);
                errs.push((fd - d.dt).abs());
            }
            // Halving the step should shrink the defect about fourfold.
            if errs[0] > 1e-9 * d.dt.abs().max(1.0) {
                assert!(errs[1] < errs[0] / 2.5, "t={t}: errors {errs:?}");
            }
            let fd2 = (hf.eval(t + s0, &[]) - 2.0 * hf.eval(t, &[]) + hf.eval(t - s0, &[]))
                / (s0 * s0);
            assert!(
                (fd2 - d.dtt).abs() <= 1e-2 * d.dtt.abs().max(1.0),
                "t={t}: {fd2} vs {}",
                d.dtt
            );
        }
        // Derivatives are undefined on the zero set; anchor the zero on an
        // actual sample so the sampled field vanishes there exactly.
        let gz = grid_n1(4096, 1.0 / 64.0, 0.0);
        let t_zero = gz.t_center(2048);
        let hz = ScalarField::from_fn(gz, move |t, _| (t - t_zero).abs().sqrt());
        let hwz = whitney_wrt_h(&hz, 0, 6).unwrap();
        let hfz = build_h_field(&hz, hwz);
        assert!(matches!(
            hfz.derivs(t_zero, &[]),
            Err(Error::UndefinedDerivative)
        ));
    }

    #[test]
    fn lip_gate_rejects_steep_fields() {
        let delta = 1.0 / 64.0;
        let g = grid_n1((1.0 / (delta * delta)) as usize, delta, 0.0);
        let steep = ScalarField::from_fn(g.clone(), |t, _| 5.0 * t);
        assert!(matches!(
            whitney_wrt_h(&steep, 0, 5),
            Err(Error::LipExceeded { .. })
        ));
        let neg = ScalarField::from_fn(g, |t, _| t - 0.5);
        assert!(matches!(
            whitney_wrt_h(&neg, 0, 5),
            Err(Error::NegativeField(_))
        ));
    }
}
