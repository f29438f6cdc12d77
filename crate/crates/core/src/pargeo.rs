//! Parabolic metric primitives: points, balls, boxes, grids, sampled graphs,
//! graph distances and surface-measure diagnostics.
//!
//! Space-time is identified with `{(t, X) : t in R, X in R^n}` and carries the
//! metric `|X - Y| + |t - s|^(1/2)`; time scales as length squared throughout
//! the crate. Graphs are functions `f(t, x')` over the first `n - 1` spatial
//! coordinates, with the last coordinate `x_n` as the graph variable.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest ambient spatial dimension supported (X in R^1 or R^2).
pub const MAX_SPATIAL_DIM: usize = 2;

/// A point of space-time under the parabolic metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParaPoint {
    pub t: f64,
    x: [f64; MAX_SPATIAL_DIM],
    dim: u8,
}

impl ParaPoint {
    pub fn new(t: f64, x: &[f64]) -> Self {
        assert!(
            (1..=MAX_SPATIAL_DIM).contains(&x.len()),
            "spatial dimension must be 1 or 2"
        );
        let mut co = [0.0; MAX_SPATIAL_DIM];
        co[..x.len()].copy_from_slice(x);
        Self {
            t,
            x: co,
            dim: x.len() as u8,
        }
    }

    #[inline]
    pub fn x(&self) -> &[f64] {
        &self.x[..self.dim as usize]
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x().iter().all(|v| v.is_finite())
    }
}

/// Parabolic distance, checking that the points share a dimension.
pub fn para_dist(p: &ParaPoint, q: &ParaPoint) -> Result<f64> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch(p.dim(), q.dim()));
    }
    Ok(pdist(p, q))
}

/// Parabolic distance without the dimension check (hot path).
#[inline]
pub fn pdist(p: &ParaPoint, q: &ParaPoint) -> f64 {
    debug_assert_eq!(p.dim, q.dim);
    let mut s2 = 0.0;
    for i in 0..p.dim as usize {
        let d = p.x[i] - q.x[i];
        s2 += d * d;
    }
    s2.sqrt() + (p.t - q.t).abs().sqrt()
}

/// An open parabolic ball.
#[derive(Clone, Copy, Debug)]
pub struct ParaBall {
    pub center: ParaPoint,
    pub radius: f64,
}

impl ParaBall {
    pub fn new(center: ParaPoint, radius: f64) -> Self {
        assert!(radius > 0.0, "ball radius must be positive");
        Self { center, radius }
    }

    #[inline]
    pub fn contains(&self, p: &ParaPoint) -> bool {
        pdist(&self.center, p) < self.radius
    }
}

/// A closed axis-aligned box in space-time. Not necessarily parabolic-shaped;
/// the Whitney machinery only ever creates boxes with `t`-side = spatial side
/// squared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PBox {
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_lo: [f64; MAX_SPATIAL_DIM],
    pub x_hi: [f64; MAX_SPATIAL_DIM],
    pub dim: usize,
}

#[inline]
fn gap(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

#[inline]
fn span(v: f64, lo: f64, hi: f64) -> f64 {
    (v - lo).abs().max((v - hi).abs())
}

impl PBox {
    pub fn center(&self) -> ParaPoint {
        let mut x = [0.0; MAX_SPATIAL_DIM];
        for i in 0..self.dim {
            x[i] = 0.5 * (self.x_lo[i] + self.x_hi[i]);
        }
        ParaPoint::new(0.5 * (self.t_lo + self.t_hi), &x[..self.dim])
    }

    /// Exact parabolic diameter of the closed box.
    pub fn diam(&self) -> f64 {
        let mut s2 = 0.0;
        for i in 0..self.dim {
            let d = self.x_hi[i] - self.x_lo[i];
            s2 += d * d;
        }
        s2.sqrt() + (self.t_hi - self.t_lo).sqrt()
    }

    /// Parabolic dilation by `k` about the center: spatial sides scale by `k`,
    /// the time side by `k^2`.
    pub fn dilate(&self, k: f64) -> PBox {
        let tc = 0.5 * (self.t_lo + self.t_hi);
        let th = 0.5 * (self.t_hi - self.t_lo) * k * k;
        let mut out = *self;
        out.t_lo = tc - th;
        out.t_hi = tc + th;
        for i in 0..self.dim {
            let c = 0.5 * (self.x_lo[i] + self.x_hi[i]);
            let h = 0.5 * (self.x_hi[i] - self.x_lo[i]) * k;
            out.x_lo[i] = c - h;
            out.x_hi[i] = c + h;
        }
        out
    }

    /// Exact parabolic distance from a point to the closed box.
    pub fn dist_to_point(&self, p: &ParaPoint) -> f64 {
        debug_assert_eq!(p.dim(), self.dim);
        let mut s2 = 0.0;
        for i in 0..self.dim {
            let g = gap(p.x()[i], self.x_lo[i], self.x_hi[i]);
            s2 += g * g;
        }
        s2.sqrt() + gap(p.t, self.t_lo, self.t_hi).sqrt()
    }

    /// Exact supremum of the parabolic distance from `p` over the closed box.
    pub fn sup_dist_to_point(&self, p: &ParaPoint) -> f64 {
        debug_assert_eq!(p.dim(), self.dim);
        let mut s2 = 0.0;
        for i in 0..self.dim {
            let g = span(p.x()[i], self.x_lo[i], self.x_hi[i]);
            s2 += g * g;
        }
        s2.sqrt() + span(p.t, self.t_lo, self.t_hi).sqrt()
    }

    /// Exact parabolic distance between two closed boxes.
    pub fn dist_to_box(&self, o: &PBox) -> f64 {
        debug_assert_eq!(o.dim, self.dim);
        let mut s2 = 0.0;
        for i in 0..self.dim {
            let g = if o.x_hi[i] < self.x_lo[i] {
                self.x_lo[i] - o.x_hi[i]
            } else if o.x_lo[i] > self.x_hi[i] {
                o.x_lo[i] - self.x_hi[i]
            } else {
                0.0
            };
            s2 += g * g;
        }
        let tg = if o.t_hi < self.t_lo {
            self.t_lo - o.t_hi
        } else if o.t_lo > self.t_hi {
            o.t_lo - self.t_hi
        } else {
            0.0
        };
        s2.sqrt() + tg.sqrt()
    }

    pub fn contains(&self, p: &ParaPoint) -> bool {
        if p.t < self.t_lo || p.t > self.t_hi {
            return false;
        }
        for i in 0..self.dim {
            if p.x()[i] < self.x_lo[i] || p.x()[i] > self.x_hi[i] {
                return false;
            }
        }
        true
    }

    /// Lebesgue volume in R^{dim+1}.
    pub fn volume(&self) -> f64 {
        let mut v = self.t_hi - self.t_lo;
        for i in 0..self.dim {
            v *= self.x_hi[i] - self.x_lo[i];
        }
        v
    }
}

/// A cell-centered sampling lattice with parabolic anisotropy: the time step
/// is exactly `delta^2`. Sample `i` along an axis sits at the center of cell
/// `[origin + i*step, origin + (i+1)*step)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParaGrid {
    pub spatial_dim: usize,
    pub delta: f64,
    pub t0: f64,
    pub t_cells: usize,
    pub x0: [f64; MAX_SPATIAL_DIM],
    pub x_cells: [usize; MAX_SPATIAL_DIM],
}

impl ParaGrid {
    pub fn new(
        spatial_dim: usize,
        delta: f64,
        t0: f64,
        t_cells: usize,
        x0: &[f64],
        x_cells: &[usize],
    ) -> Self {
        assert!(spatial_dim <= MAX_SPATIAL_DIM);
        assert!(delta > 0.0);
        assert_eq!(x0.len(), spatial_dim);
        assert_eq!(x_cells.len(), spatial_dim);
        let mut xo = [0.0; MAX_SPATIAL_DIM];
        xo[..spatial_dim].copy_from_slice(x0);
        let mut xc = [1usize; MAX_SPATIAL_DIM];
        xc[..spatial_dim].copy_from_slice(x_cells);
        Self {
            spatial_dim,
            delta,
            t0,
            t_cells,
            x0: xo,
            x_cells: xc,
        }
    }

    #[inline]
    pub fn time_step(&self) -> f64 {
        self.delta * self.delta
    }

    #[inline]
    pub fn t_center(&self, it: usize) -> f64 {
        self.t0 + (it as f64 + 0.5) * self.time_step()
    }

    #[inline]
    pub fn x_center(&self, axis: usize, i: usize) -> f64 {
        self.x0[axis] + (i as f64 + 0.5) * self.delta
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.t_cells as f64 * self.time_step()
    }

    pub fn x_end(&self, axis: usize) -> f64 {
        self.x0[axis] + self.x_cells[axis] as f64 * self.delta
    }

    /// One cell's Lebesgue measure: `delta^(spatial_dim) * delta^2`.
    pub fn cell_measure(&self) -> f64 {
        self.time_step() * self.delta.powi(self.spatial_dim as i32)
    }

    pub fn len(&self) -> usize {
        self.t_cells * self.x_cells[..self.spatial_dim].iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index; the time axis is innermost.
    #[inline]
    pub fn index(&self, it: usize, ix: &[usize]) -> usize {
        debug_assert_eq!(ix.len(), self.spatial_dim);
        let mut s = 0usize;
        for a in (0..self.spatial_dim).rev() {
            s = s * self.x_cells[a] + ix[a];
        }
        s * self.t_cells + it
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, [usize; MAX_SPATIAL_DIM]) {
        let it = idx % self.t_cells;
        let mut s = idx / self.t_cells;
        let mut ix = [0usize; MAX_SPATIAL_DIM];
        for a in 0..self.spatial_dim {
            ix[a] = s % self.x_cells[a];
            s /= self.x_cells[a];
        }
        (it, ix)
    }

    /// Nearest sample index to a coordinate, clamped to the grid.
    #[inline]
    pub fn nearest_t(&self, t: f64) -> usize {
        let f = (t - self.t0) / self.time_step() - 0.5;
        f.round().max(0.0).min((self.t_cells - 1) as f64) as usize
    }

    #[inline]
    pub fn nearest_x(&self, axis: usize, x: f64) -> usize {
        let f = (x - self.x0[axis]) / self.delta - 0.5;
        f.round().max(0.0).min((self.x_cells[axis] - 1) as f64) as usize
    }

    /// Parabolic distance from a base-domain point to the grid box.
    pub fn dist_to_box(&self, t: f64, x: &[f64]) -> f64 {
        let mut s2 = 0.0;
        for a in 0..self.spatial_dim {
            let g = gap(x[a], self.x0[a], self.x_end(a));
            s2 += g * g;
        }
        s2.sqrt() + gap(t, self.t0, self.t_end()).sqrt()
    }
}

/// A scalar field sampled on a [`ParaGrid`].
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: ParaGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: ParaGrid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: ParaGrid, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        let sd = grid.spatial_dim;
        for idx in 0..grid.len() {
            let (it, ix) = grid.unindex(idx);
            let mut x = [0.0; MAX_SPATIAL_DIM];
            for a in 0..sd {
                x[a] = grid.x_center(a, ix[a]);
            }
            values[idx] = f(grid.t_center(it), &x[..sd]);
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, it: usize, ix: &[usize]) -> f64 {
        self.values[self.grid.index(it, ix)]
    }

    /// Multilinear interpolation in index space (the time axis is already
    /// scaled by `delta^2`, which makes index space parabolic-isotropic).
    /// Coordinates outside the box are clamped.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let g = &self.grid;
        let ft = ((t - g.t0) / g.time_step() - 0.5)
            .max(0.0)
            .min((g.t_cells - 1) as f64);
        let it0 = ft.floor() as usize;
        let it1 = (it0 + 1).min(g.t_cells - 1);
        let wt = ft - it0 as f64;
        match g.spatial_dim {
            0 => {
                let a = self.values[it0];
                let b = self.values[it1];
                a + wt * (b - a)
            }
            1 => {
                let fx = ((x[0] - g.x0[0]) / g.delta - 0.5)
                    .max(0.0)
                    .min((g.x_cells[0] - 1) as f64);
                let ix0 = fx.floor() as usize;
                let ix1 = (ix0 + 1).min(g.x_cells[0] - 1);
                let wx = fx - ix0 as f64;
                let v00 = self.at(it0, &[ix0]);
                let v01 = self.at(it1, &[ix0]);
                let v10 = self.at(it0, &[ix1]);
                let v11 = self.at(it1, &[ix1]);
                let a = v00 + wt * (v01 - v00);
                let b = v10 + wt * (v11 - v10);
                a + wx * (b - a)
            }
            _ => unreachable!("graph domains have at most one spatial axis"),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub type GraphFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A Lip(1/2,1) function on a parabolic grid over the graph domain `(t, x')`,
/// together with its measured Lip constant. The set `E` is its graph
/// `{(t, x', f(t, x'))}` in `R^(n+1)`.
#[derive(Clone)]
pub struct SampledGraph {
    pub field: ScalarField,
    /// Ambient spatial dimension `n` (the graph domain has `n - 1` axes).
    pub ambient: usize,
    /// Measured Lip(1/2,1) constant over sampled pairs.
    pub b1: f64,
    /// P-BMO bound of the half-order time derivative, when known.
    pub b2: Option<f64>,
    pub closed_form: Option<GraphFn>,
}

impl std::fmt::Debug for SampledGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledGraph")
            .field("ambient", &self.ambient)
            .field("b1", &self.b1)
            .field("b2", &self.b2)
            .field("grid", &self.field.grid)
            .finish()
    }
}

impl SampledGraph {
    pub fn from_field(field: ScalarField, closed_form: Option<GraphFn>) -> Self {
        let ambient = field.grid.spatial_dim + 1;
        let b1 = measure_lip(&field);
        Self {
            field,
            ambient,
            b1,
            b2: None,
            closed_form,
        }
    }

    #[inline]
    pub fn grid(&self) -> &ParaGrid {
        &self.field.grid
    }

    /// Graph height at a base-domain point, via the closed form when present.
    pub fn height(&self, t: f64, x: &[f64]) -> f64 {
        match &self.closed_form {
            Some(f) => f(t, x),
            None => self.field.eval(t, x),
        }
    }

    /// The ambient point `F(sample) = (t, x', f(t, x'))`.
    pub fn point(&self, it: usize, ix: &[usize]) -> ParaPoint {
        let g = self.grid();
        let mut x = [0.0; MAX_SPATIAL_DIM];
        for a in 0..g.spatial_dim {
            x[a] = g.x_center(a, ix[a]);
        }
        x[g.spatial_dim] = self.field.at(it, ix);
        ParaPoint::new(g.t_center(it), &x[..self.ambient])
    }

    pub fn point_flat(&self, idx: usize) -> ParaPoint {
        let (it, ix) = self.grid().unindex(idx);
        self.point(it, &ix[..self.grid().spatial_dim])
    }

    /// Exact minimum of the parabolic distance from `p` to the sampled graph
    /// points. `seed` is an optional valid upper bound attained by some
    /// sample; pruning is by the base-domain distance, which never exceeds
    /// the ambient one.
    pub fn dist_point_to_samples(&self, p: &ParaPoint, seed: Option<f64>) -> f64 {
        debug_assert_eq!(p.dim(), self.ambient);
        let g = self.grid();
        let sd = g.spatial_dim;
        let xn = p.x()[sd];
        let itc = g.nearest_t(p.t);
        let mut best = seed.unwrap_or(f64::INFINITY);
        // Always try the nearest sample so `best` is attained.
        {
            let mut ix = [0usize; MAX_SPATIAL_DIM];
            for a in 0..sd {
                ix[a] = g.nearest_x(a, p.x()[a]);
            }
            best = best.min(self.cand(p, xn, itc, &ix[..sd]));
        }
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
                if tt >= best {
                    continue;
                }
                alive = true;
                if sd == 0 {
                    best = best.min(self.cand(p, xn, it, &[]));
                } else {
                    let jc = g.nearest_x(0, p.x()[0]);
                    let mut m = 0i64;
                    loop {
                        let mut inner_alive = false;
                        for s2 in [-1i64, 1] {
                            if m == 0 && s2 == 1 {
                                continue;
                            }
                            let j = jc as i64 + s2 * m;
                            if j < 0 || j >= g.x_cells[0] as i64 {
                                continue;
                            }
                            let j = j as usize;
                            if (p.x()[0] - g.x_center(0, j)).abs() + tt >= best {
                                continue;
                            }
                            inner_alive = true;
                            best = best.min(self.cand(p, xn, it, &[j]));
                        }
                        if !inner_alive && m > 0 {
                            break;
                        }
                        m += 1;
                    }
                }
            }
            if !alive && k > 0 {
                // Both time sides are beyond the current best.
                let lo = (p.t - g.t_center((itc as i64 - k).max(0) as usize)).abs();
                let hi = (p.t
                    - g.t_center(((itc as i64 + k) as usize).min(g.t_cells - 1)))
                .abs();
                if lo.min(hi).sqrt() >= best {
                    break;
                }
            }
            k += 1;
            if k > g.t_cells as i64 {
                break;
            }
        }
        best
    }

    #[inline]
    fn cand(&self, p: &ParaPoint, xn: f64, it: usize, ix: &[usize]) -> f64 {
        let g = self.grid();
        let f = self.field.at(it, ix);
        let mut s2 = (xn - f) * (xn - f);
        for a in 0..g.spatial_dim {
            let d = p.x()[a] - g.x_center(a, ix[a]);
            s2 += d * d;
        }
        s2.sqrt() + (p.t - g.t_center(it)).abs().sqrt()
    }

    /// Exact minimum over samples of the parabolic distance from the graph
    /// point `F(q)` to the closed box. `warm` is an optional valid upper
    /// bound (not necessarily attained); the result is still the exact
    /// minimum whenever the true minimum is below the warm bound.
    pub fn dist_box_to_samples(&self, b: &PBox, warm: Option<f64>) -> f64 {
        let g = self.grid();
        let sd = g.spatial_dim;
        debug_assert_eq!(b.dim, self.ambient);
        let tc = 0.5 * (b.t_lo + b.t_hi);
        let itc = g.nearest_t(tc);
        let mut best = warm.unwrap_or(f64::INFINITY);
        {
            let mut ix = [0usize; MAX_SPATIAL_DIM];
            for a in 0..sd {
                ix[a] = g.nearest_x(a, 0.5 * (b.x_lo[a] + b.x_hi[a]));
            }
            best = best.min(self.box_cand(b, itc, &ix[..sd]));
        }
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
                let tt = gap(g.t_center(it), b.t_lo, b.t_hi).sqrt();
                if tt >= best {
                    continue;
                }
                alive = true;
                if sd == 0 {
                    best = best.min(self.box_cand(b, it, &[]));
                } else {
                    let jc = g.nearest_x(0, 0.5 * (b.x_lo[0] + b.x_hi[0]));
                    let mut m = 0i64;
                    loop {
                        let mut inner_alive = false;
                        for s2 in [-1i64, 1] {
                            if m == 0 && s2 == 1 {
                                continue;
                            }
                            let j = jc as i64 + s2 * m;
                            if j < 0 || j >= g.x_cells[0] as i64 {
                                continue;
                            }
                            let j = j as usize;
                            let lb = gap(g.x_center(0, j), b.x_lo[0], b.x_hi[0]) + tt;
                            if lb >= best {
                                continue;
                            }
                            inner_alive = true;
                            best = best.min(self.box_cand(b, it, &[j]));
                        }
                        if !inner_alive && m > 0 {
                            break;
                        }
                        m += 1;
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

    #[inline]
    fn box_cand(&self, b: &PBox, it: usize, ix: &[usize]) -> f64 {
        let g = self.grid();
        let sd = g.spatial_dim;
        let f = self.field.at(it, ix);
        let mut s2 = {
            let gn = gap(f, b.x_lo[sd], b.x_hi[sd]);
            gn * gn
        };
        for a in 0..sd {
            let ga = gap(g.x_center(a, ix[a]), b.x_lo[a], b.x_hi[a]);
            s2 += ga * ga;
        }
        s2.sqrt() + gap(g.t_center(it), b.t_lo, b.t_hi).sqrt()
    }

    /// Exact minimum of `pdist(p, F(q))` over samples `q` in the given index
    /// ranges, with early exit once the minimum is known to be >= `cap`.
    /// Returns `cap` if no sample beats it.
    pub fn dist_point_to_samples_in(
        &self,
        p: &ParaPoint,
        it_range: (usize, usize),
        ix_range: (usize, usize),
        cap: f64,
    ) -> f64 {
        let g = self.grid();
        let sd = g.spatial_dim;
        let xn = p.x()[sd];
        let clamp = |v: i64, lo: usize, hi: usize| -> usize {
            v.max(lo as i64).min(hi as i64 - 1) as usize
        };
        let itc = clamp(g.nearest_t(p.t) as i64, it_range.0, it_range.1);
        let mut best = cap;
        let mut k = 0i64;
        loop {
            let mut alive = false;
            for side in [-1i64, 1] {
                if k == 0 && side == 1 {
                    continue;
                }
                let it = itc as i64 + side * k;
                if it < it_range.0 as i64 || it >= it_range.1 as i64 {
                    continue;
                }
                let it = it as usize;
                let tt = (p.t - g.t_center(it)).abs().sqrt();
                if tt >= best {
                    continue;
                }
                alive = true;
                if sd == 0 {
                    best = best.min(self.cand(p, xn, it, &[]));
                } else {
                    let jc = clamp(g.nearest_x(0, p.x()[0]) as i64, ix_range.0, ix_range.1);
                    let mut m = 0i64;
                    loop {
                        let mut inner = false;
                        for s2 in [-1i64, 1] {
                            if m == 0 && s2 == 1 {
                                continue;
                            }
                            let j = jc as i64 + s2 * m;
                            if j < ix_range.0 as i64 || j >= ix_range.1 as i64 {
                                continue;
                            }
                            let j = j as usize;
                            if (p.x()[0] - g.x_center(0, j)).abs() + tt >= best {
                                continue;
                            }
                            inner = true;
                            best = best.min(self.cand(p, xn, it, &[j]));
                        }
                        if !inner && m > 0 {
                            break;
                        }
                        m += 1;
                    }
                }
            }
            if !alive && k > 0 {
                break;
            }
            k += 1;
            if k > (it_range.1 - it_range.0) as i64 + 1 {
                break;
            }
        }
        best
    }

    /// Exact minimum of the parabolic distance from graph samples in the
    /// given index ranges to the closed box, with early exit at `cap`.
    pub fn dist_box_to_samples_in(
        &self,
        b: &PBox,
        it_range: (usize, usize),
        ix_range: (usize, usize),
        cap: f64,
    ) -> f64 {
        let g = self.grid();
        let sd = g.spatial_dim;
        let clamp = |v: i64, lo: usize, hi: usize| -> usize {
            v.max(lo as i64).min(hi as i64 - 1) as usize
        };
        let tc = 0.5 * (b.t_lo + b.t_hi);
        let itc = clamp(g.nearest_t(tc) as i64, it_range.0, it_range.1);
        let mut best = cap;
        let mut k = 0i64;
        loop {
            let mut alive = false;
            for side in [-1i64, 1] {
                if k == 0 && side == 1 {
                    continue;
                }
                let it = itc as i64 + side * k;
                if it < it_range.0 as i64 || it >= it_range.1 as i64 {
                    continue;
                }
                let it = it as usize;
                let tt = gap(g.t_center(it), b.t_lo, b.t_hi).sqrt();
                if tt >= best {
                    continue;
                }
                alive = true;
                if sd == 0 {
                    best = best.min(self.box_cand(b, it, &[]));
                } else {
                    let jc = clamp(
                        g.nearest_x(0, 0.5 * (b.x_lo[0] + b.x_hi[0])) as i64,
                        ix_range.0,
                        ix_range.1,
                    );
                    let mut m = 0i64;
                    loop {
                        let mut inner = false;
                        for s2 in [-1i64, 1] {
                            if m == 0 && s2 == 1 {
                                continue;
                            }
                            let j = jc as i64 + s2 * m;
                            if j < ix_range.0 as i64 || j >= ix_range.1 as i64 {
                                continue;
                            }
                            let j = j as usize;
                            let lb = gap(g.x_center(0, j), b.x_lo[0], b.x_hi[0]) + tt;
                            if lb >= best {
                                continue;
                            }
                            inner = true;
                            best = best.min(self.box_cand(b, it, &[j]));
                        }
                        if !inner && m > 0 {
                            break;
                        }
                        m += 1;
                    }
                }
            }
            if !alive && k > 0 {
                break;
            }
            k += 1;
            if k > (it_range.1 - it_range.0) as i64 + 1 {
                break;
            }
        }
        best
    }

    /// Rough parabolic diameter of the sampled set (box diagonal plus height
    /// oscillation).
    pub fn diam(&self) -> f64 {
        let g = self.grid();
        let osc = self.field.max() - self.field.min();
        let mut s2 = osc * osc;
        for a in 0..g.spatial_dim {
            let e = g.x_end(a) - g.x0[a];
            s2 += e * e;
        }
        s2.sqrt() + (g.t_end() - g.t0).sqrt()
    }
}

/// Measured Lip(1/2,1) constant of a field with respect to the base-domain
/// parabolic metric: all pairs inside a small index window, plus all pairs of
/// a strided global subsample. Deterministic.
pub fn measure_lip(field: &ScalarField) -> f64 {
    let g = &field.grid;
    let sd = g.spatial_dim;
    let mut worst: f64 = 0.0;
    let idxs: Vec<usize> = (0..g.len()).collect();
    let coord = |idx: usize| -> (f64, [f64; MAX_SPATIAL_DIM]) {
        let (it, ix) = g.unindex(idx);
        let mut x = [0.0; MAX_SPATIAL_DIM];
        for a in 0..sd {
            x[a] = g.x_center(a, ix[a]);
        }
        (g.t_center(it), x)
    };
    let base = |p: usize, q: usize| -> f64 {
        let (tp, xp) = coord(p);
        let (tq, xq) = coord(q);
        let mut s2 = 0.0;
        for a in 0..sd {
            let d = xp[a] - xq[a];
            s2 += d * d;
        }
        s2.sqrt() + (tp - tq).abs().sqrt()
    };
    // Local window in time (and neighboring spatial column).
    const W: usize = 24;
    for &p in &idxs {
        let (it, ix) = g.unindex(p);
        for dt in 1..=W {
            if it + dt >= g.t_cells {
                break;
            }
            let q = g.index(it + dt, &ix[..sd]);
            let d = base(p, q);
            if d > 0.0 {
                worst = worst.max((field.values[p] - field.values[q]).abs() / d);
            }
        }
        if sd == 1 && ix[0] + 1 < g.x_cells[0] {
            let q = g.index(it, &[ix[0] + 1]);
            let d = base(p, q);
            worst = worst.max((field.values[p] - field.values[q]).abs() / d);
        }
    }
    // Global strided subsample, all pairs.
    let target = 1200usize;
    let stride = (g.len() / target).max(1);
    let sub: Vec<usize> = (0..g.len()).step_by(stride).collect();
    for (a, &p) in sub.iter().enumerate() {
        for &q in &sub[a + 1..] {
            let d = base(p, q);
            if d > 0.0 {
                worst = worst.max((field.values[p] - field.values[q]).abs() / d);
            }
        }
    }
    worst
}

/// `dist_to_graph` search/window configuration.
#[derive(Clone, Copy, Debug)]
pub struct DistConfig {
    /// Window radius as a multiple of the vertical distance at the clamped
    /// base point.
    pub window_factor: f64,
}

impl Default for DistConfig {
    fn default() -> Self {
        Self { window_factor: 4.0 }
    }
}

/// Parabolic distance from an ambient point `p = (t, x', x_n)` to the sampled
/// graph. When the Lip constant of the graph is below 1/2, the result `r`
/// satisfies `|x_n - f(t,x')| / 2 <= r <= |x_n - f(t,x')|` up to sampling.
pub fn dist_to_graph(p: &ParaPoint, g: &SampledGraph, cfg: &DistConfig) -> Result<f64> {
    if p.dim() != g.ambient {
        return Err(Error::DimensionMismatch(p.dim(), g.ambient));
    }
    let grid = g.grid();
    let sd = grid.spatial_dim;
    let out = grid.dist_to_box(p.t, &p.x()[..sd]);
    if out > 0.0 {
        // Vertical distance at the clamped base point bounds the scale at
        // which the minimizer could still be inside the box.
        let itc = grid.nearest_t(p.t);
        let mut ix = [0usize; MAX_SPATIAL_DIM];
        for a in 0..sd {
            ix[a] = grid.nearest_x(a, p.x()[a]);
        }
        let v = (p.x()[sd] - g.field.at(itc, &ix[..sd])).abs();
        if out > cfg.window_factor * v.max(grid.delta) {
            return Err(Error::OutOfWindow {
                t: p.t,
                x: p.x().to_vec(),
            });
        }
    }
    Ok(g.dist_point_to_samples(p, None))
}

/// Projected surface measure of `ball ∩ Γ`: the base-domain Lebesgue measure
/// of `{(t,x') : F(t,x') ∈ ball}`, counted over sampled cells.
pub fn surface_measure(g: &SampledGraph, ball: &ParaBall) -> Result<f64> {
    if ball.center.dim() != g.ambient {
        return Err(Error::DimensionMismatch(ball.center.dim(), g.ambient));
    }
    let grid = g.grid();
    let sd = grid.spatial_dim;
    let c = &ball.center;
    let r = ball.radius;
    let cn = c.x()[sd];
    let mut count = 0usize;
    let t_min = c.t - r * r;
    let t_max = c.t + r * r;
    let it_lo = ((t_min - grid.t0) / grid.time_step() - 0.5).ceil().max(0.0) as usize;
    let it_hi = (((t_max - grid.t0) / grid.time_step()) as usize).min(grid.t_cells.saturating_sub(1));
    for it in it_lo..=it_hi.min(grid.t_cells.saturating_sub(1)) {
        let tt = (c.t - grid.t_center(it)).abs().sqrt();
        if tt >= r {
            continue;
        }
        let budget = r - tt;
        if sd == 0 {
            let f = g.field.values[it];
            if (f - cn).abs() < budget {
                count += 1;
            }
        } else {
            for j in 0..grid.x_cells[0] {
                let dx = c.x()[0] - grid.x_center(0, j);
                if dx.abs() >= budget {
                    continue;
                }
                let f = g.field.at(it, &[j]);
                if (dx * dx + (f - cn) * (f - cn)).sqrt() < budget {
                    count += 1;
                }
            }
        }
    }
    Ok(count as f64 * grid.cell_measure())
}

/// One row of an ADR sweep.
#[derive(Clone, Debug, Serialize)]
pub struct AdrRow {
    pub center_t: f64,
    pub center_x: Vec<f64>,
    pub r: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdrReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub rows: Vec<AdrRow>,
}

/// Surface-measure-to-`r^(n+1)` ratios over a sweep of balls centered on the
/// graph. Both extremes finite and positive iff the sampled set is
/// Ahlfors-David regular at the swept scales.
pub fn adr_check(g: &SampledGraph, centers: &[ParaPoint], radii: &[f64]) -> Result<AdrReport> {
    let grid = g.grid();
    let sd = grid.spatial_dim;
    let floor = 4.0 * grid.delta;
    let ceil = g.diam() / 4.0;
    let hom = (sd + 2) as i32; // homogeneous dimension of the graph measure
    for &r in radii {
        if r < floor {
            return Err(Error::ResolutionFloor {
                requested: r,
                floor,
            });
        }
        if r > ceil {
            return Err(Error::Param(format!(
                "radius {r} exceeds a quarter of the graph diameter {ceil}"
            )));
        }
    }
    let tol = 1.5 * grid.delta;
    for c in centers {
        let v = (c.x()[sd] - g.height(c.t, &c.x()[..sd])).abs();
        if v > tol {
            return Err(Error::NotOnGraph { offset: v, tol });
        }
    }
    let mut rows = Vec::with_capacity(centers.len() * radii.len());
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    for c in centers {
        for &r in radii {
            let m = surface_measure(g, &ParaBall::new(*c, r))?;
            let ratio = m / r.powi(hom);
            min_ratio = min_ratio.min(ratio);
            max_ratio = max_ratio.max(ratio);
            rows.push(AdrRow {
                center_t: c.t,
                center_x: c.x().to_vec(),
                r,
                ratio,
            });
        }
    }
    Ok(AdrReport {
        min_ratio,
        max_ratio,
        rows,
    })
}
