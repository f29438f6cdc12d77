//! Graph lifting along the stopping distance: `g = f ± eta^alpha d(F(.))`,
//! the smoothed pair `psi± = f ± eta^(15/16) H` built from the regularized
//! half stopping distance, and the verification sweeps for the lifted-domain
//! construction: set-below margins, Whitney-region containment, two-sided
//! distance comparability, and the companion ball inclusions.

use std::sync::Arc;

use serde::Serialize;

use crate::corona::Regime;
use crate::dyadic::{CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::halfderiv::{half_time_derivative, pbmo_norm, HalfDerivMethod};
use crate::pargeo::{measure_lip, pdist, ParaBall, ParaPoint, PBox, SampledGraph, ScalarField, MAX_SPATIAL_DIM};
use crate::regdist::{build_h_field, whitney_wrt_h, HField};
use crate::whitney::{
    cube_bbox, locate_cube, region_thresholds, region_with_source, split_region_by_graph,
    RegionSource, RegionSplit, WhitneyRegion,
};

/// Which lift is carried: a plain exponent or the smoothed variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum LiftExponent {
    Alpha(f64),
    /// Exponent 15/16 applied to the regularized field.
    Psi,
}

/// A lifted graph `f ± eta^alpha d(F(.))` (or its smoothed variant) sampled
/// on the base grid.
#[derive(Clone, Debug)]
pub struct LiftedGraph {
    pub base: Arc<SampledGraph>,
    pub eta: f64,
    pub exponent: LiftExponent,
    pub sign: f64,
    /// The lifted graph as a graph of its own (for distance queries).
    pub graph: Arc<SampledGraph>,
    /// Stopping distance at the base samples.
    pub d_f: Arc<Vec<f64>>,
    /// Measured Lip(1/2,1) constant of the lifted function.
    pub lip: f64,
    /// Extremes of `d(G(.)) / d(F(.))` over samples (two-sided band check).
    pub dg_over_df: (f64, f64),
}

impl LiftedGraph {
    pub fn values(&self) -> &[f64] {
        &self.graph.field.values
    }

    /// Lifted height at a base point.
    pub fn height(&self, t: f64, x: &[f64]) -> f64 {
        self.graph.field.eval(t, x)
    }
}

/// Build `g = f + sign * eta^alpha * d(F(.))` and verify its Lip constant and
/// the two-sided stopping-distance band along the lifted graph.
pub fn lift_graph(
    tree: &CubeTree,
    regime: &Regime,
    eta: f64,
    alpha: f64,
    sign: f64,
) -> Result<LiftedGraph> {
    if !(0.875..=0.96875).contains(&alpha) {
        return Err(Error::Param(format!("alpha = {alpha} outside [7/8, 31/32]")));
    }
    if eta.powf(7.0 / 8.0) > 0.5 {
        return Err(Error::Param(format!("eta = {eta} too large: eta^(7/8) > 1/2")));
    }
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::Param("sign must be +1 or -1".into()));
    }
    let d_f = Arc::new(regime.stopping_distance_field(tree, None));
    let scale = sign * eta.powf(alpha);
    let base = tree.graph.clone();
    let values: Vec<f64> = base
        .field
        .values
        .iter()
        .zip(d_f.iter())
        .map(|(f, d)| f + scale * d)
        .collect();
    let field = ScalarField::new(base.grid().clone(), values);
    let lip = measure_lip(&field);
    let d_g = regime.stopping_distance_field(tree, Some(&field.values));
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (dg, df) in d_g.iter().zip(d_f.iter()) {
        if *df > 0.0 {
            let r = dg / df;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    let graph = Arc::new(SampledGraph {
        ambient: base.ambient,
        b1: lip,
        b2: None,
        closed_form: None,
        field,
    });
    Ok(LiftedGraph {
        base,
        eta,
        exponent: LiftExponent::Alpha(alpha),
        sign,
        graph,
        d_f,
        lip,
        dg_over_df: (lo, hi),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    /// Samples where the wide lift fails to dominate the smoothed one.
    pub upper_violations: usize,
    /// Samples where the smoothed lift fails to dominate the narrow one.
    pub lower_violations: usize,
    pub worst_upper_margin: f64,
    pub worst_lower_margin: f64,
    pub samples: usize,
}

/// The smoothed pair and everything measured while building it.
#[derive(Debug)]
pub struct PsiPair {
    pub plus: LiftedGraph,
    pub minus: LiftedGraph,
    pub h_field: HField,
    pub sandwich_plus: SandwichReport,
    pub sandwich_minus: SandwichReport,
    pub pbmo_base: f64,
    pub pbmo_plus: f64,
    pub pbmo_minus: f64,
    pub lip_plus: f64,
    pub lip_minus: f64,
}

/// Build `psi± = f ± eta^(15/16) H` with `H` the regularized companion of
/// `h = d(F(.)) / 2`, and evaluate the two sandwich inequalities against the
/// extreme plain lifts pointwise. The parabolic BMO of the half derivative of
/// each lift is measured and recorded.
pub fn build_psi(
    tree: &CubeTree,
    regime: &Regime,
    eta: f64,
    k_top: i32,
    k_leaf: i32,
) -> Result<PsiPair> {
    let base = tree.graph.clone();
    let g78 = lift_graph(tree, regime, eta, 7.0 / 8.0, 1.0)?;
    let g3132 = lift_graph(tree, regime, eta, 31.0 / 32.0, 1.0)?;
    let g78m = lift_graph(tree, regime, eta, 7.0 / 8.0, -1.0)?;
    let g3132m = lift_graph(tree, regime, eta, 31.0 / 32.0, -1.0)?;
    let d_f = g78.d_f.clone();
    let h = ScalarField::new(
        base.grid().clone(),
        d_f.iter().map(|d| 0.5 * d).collect(),
    );
    let hw = whitney_wrt_h(&h, k_top, k_leaf)?;
    let hf = build_h_field(&h, hw);
    let scale = eta.powf(15.0 / 16.0);
    let make = |sign: f64| -> LiftedGraph {
        let values: Vec<f64> = base
            .field
            .values
            .iter()
            .zip(hf.sampled.values.iter())
            .map(|(f, hh)| f + sign * scale * hh)
            .collect();
        let field = ScalarField::new(base.grid().clone(), values);
        let lip = measure_lip(&field);
        LiftedGraph {
            base: base.clone(),
            eta,
            exponent: LiftExponent::Psi,
            sign,
            graph: Arc::new(SampledGraph {
                ambient: base.ambient,
                b1: lip,
                b2: None,
                closed_form: None,
                field,
            }),
            d_f: d_f.clone(),
            lip: 0.0,
            dg_over_df: (f64::NAN, f64::NAN),
        }
    };
    let mut plus = make(1.0);
    let mut minus = make(-1.0);
    plus.lip = plus.graph.b1;
    minus.lip = minus.graph.b1;
    let sandwich = |wide: &LiftedGraph, psi: &LiftedGraph, narrow: &LiftedGraph, sgn: f64| {
        let mut upper = 0usize;
        let mut lower = 0usize;
        let mut wu = f64::INFINITY;
        let mut wl = f64::INFINITY;
        let n = psi.values().len();
        for i in 0..n {
            // For the plus side: wide >= psi >= narrow; minus side mirrored.
            let mu = sgn * (wide.values()[i] - psi.values()[i]);
            let ml = sgn * (psi.values()[i] - narrow.values()[i]);
            wu = wu.min(mu);
            wl = wl.min(ml);
            if mu < -1e-12 {
                upper += 1;
            }
            if ml < -1e-12 {
                lower += 1;
            }
        }
        SandwichReport {
            upper_violations: upper,
            lower_violations: lower,
            worst_upper_margin: wu,
            worst_lower_margin: wl,
            samples: n,
        }
    };
    let sandwich_plus = sandwich(&g78, &plus, &g3132, 1.0);
    let sandwich_minus = sandwich(&g78m, &minus, &g3132m, -1.0);
    let pbmo_of = |f: &ScalarField| -> Result<f64> {
        Ok(pbmo_norm(&half_time_derivative(f, HalfDerivMethod::Spectral)?))
    };
    let pbmo_base = pbmo_of(&base.field)?;
    let pbmo_plus = pbmo_of(&plus.graph.field)?;
    let pbmo_minus = pbmo_of(&minus.graph.field)?;
    Ok(PsiPair {
        lip_plus: plus.lip,
        lip_minus: minus.lip,
        plus,
        minus,
        h_field: hf,
        sandwich_plus,
        sandwich_minus,
        pbmo_base,
        pbmo_plus,
        pbmo_minus,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EBelowReport {
    pub samples: usize,
    /// Violations of `dist(p, lifted graph) <= 3 eta^alpha d(p)`.
    pub upper_violations: usize,
    /// Violations of `dist(p, lifted graph) >= (1/8) eta^alpha d(p)`.
    pub lower_violations: usize,
    /// Violations of `x_n <= g(t, x') - (1/4) eta^alpha d(p)`.
    pub below_violations: usize,
    pub worst_upper: f64,
    pub worst_lower: f64,
    pub worst_below: f64,
    /// Measured sup of `dist(p, base graph) / (eta d(p))` over the window.
    pub graph_closeness: f64,
}

/// For every sampled set point in the window ball: the distance to the lifted
/// graph is pinched between `(1/8) eta^alpha d` and `3 eta^alpha d`, and the
/// point sits below the lift by at least `(1/4) eta^alpha d`. Sampling slack
/// of a couple of grid cells is allowed on the distance pinch.
pub fn check_e_below(
    lift: &LiftedGraph,
    regime: &Regime,
    tree: &CubeTree,
    window: &ParaBall,
) -> Result<EBelowReport> {
    let alpha = match lift.exponent {
        LiftExponent::Alpha(a) => a,
        LiftExponent::Psi => {
            return Err(Error::Param(
                "set-below margins are stated for plain lifts".into(),
            ))
        }
    };
    let ea = lift.eta.powf(alpha);
    let g = tree.graph.grid();
    let sd = g.spatial_dim;
    let slack = 2.0 * g.delta * (1.0 + tree.graph.b1);
    let mut report = EBelowReport {
        samples: 0,
        upper_violations: 0,
        lower_violations: 0,
        below_violations: 0,
        worst_upper: f64::NEG_INFINITY,
        worst_lower: f64::NEG_INFINITY,
        worst_below: f64::NEG_INFINITY,
        graph_closeness: 0.0,
    };
    let reuse_df = Arc::ptr_eq(&lift.base, &tree.graph);
    for flat in 0..g.len() {
        let p = tree.graph.point_flat(flat);
        if !window.contains(&p) {
            continue;
        }
        report.samples += 1;
        // On the lift's own base graph the stopping distance is the cached
        // field.
        let d = if reuse_df {
            lift.d_f[flat]
        } else {
            regime.stopping_distance(&p, tree, None)
        };
        let vert = (p.x()[sd] - lift.height(p.t, &p.x()[..sd])).abs();
        let dist = lift.graph.dist_point_to_samples(&p, Some(vert.max(1e-300)));
        // Upper: dist <= 3 eta^alpha d (+slack), lower: dist >= eta^alpha d/8.
        let up = 3.0 * ea * d + slack - dist;
        let low = dist - ea * d / 8.0 + slack;
        report.worst_upper = report.worst_upper.max(-up);
        report.worst_lower = report.worst_lower.max(-low);
        if up < 0.0 {
            report.upper_violations += 1;
        }
        if low < 0.0 {
            report.lower_violations += 1;
        }
        if lift.sign > 0.0 {
            let below = lift.height(p.t, &p.x()[..sd]) - 0.25 * ea * d - p.x()[sd];
            report.worst_below = report.worst_below.max(-below);
            if below < -1e-12 {
                report.below_violations += 1;
            }
        } else {
            let above = p.x()[sd] - (lift.height(p.t, &p.x()[..sd]) + 0.25 * ea * d);
            report.worst_below = report.worst_below.max(-above);
            if above < -1e-12 {
                report.below_violations += 1;
            }
        }
        if d > 0.0 {
            let dg = regime
                .graph
                .dist_point_to_samples(&p, Some((p.x()[sd]
                    - regime.graph.height(p.t, &p.x()[..sd]))
                .abs()
                .max(1e-300)));
            report.graph_closeness = report.graph_closeness.max(dg / (lift.eta * d));
        }
    }
    Ok(report)
}

/// Conservative sup of a sampled function over the base footprint of a box:
/// max over covered samples plus one Lip-cell of slack.
fn sup_on_footprint(field: &ScalarField, lip: f64, bx: &PBox) -> f64 {
    let g = &field.grid;
    let sd = g.spatial_dim;
    let it_lo = ((bx.t_lo - g.t0) / g.time_step() - 1.0).floor().max(0.0) as usize;
    let it_hi = ((((bx.t_hi - g.t0) / g.time_step()) + 1.0).ceil().max(0.0) as usize)
        .min(g.t_cells);
    let mut m = f64::NEG_INFINITY;
    if sd == 0 {
        for it in it_lo..it_hi {
            m = m.max(field.values[it]);
        }
    } else {
        let ix_lo = ((bx.x_lo[0] - g.x0[0]) / g.delta - 1.0).floor().max(0.0) as usize;
        let ix_hi = ((((bx.x_hi[0] - g.x0[0]) / g.delta) + 1.0).ceil().max(0.0) as usize)
            .min(g.x_cells[0]);
        for ix in ix_lo..ix_hi {
            for it in it_lo..it_hi {
                m = m.max(field.at(it, &[ix]));
            }
        }
    }
    m + lip * (g.delta + g.delta)
}

fn inf_on_footprint(field: &ScalarField, lip: f64, bx: &PBox) -> f64 {
    let neg = ScalarField::new(
        field.grid.clone(),
        field.values.iter().map(|v| -v).collect(),
    );
    -sup_on_footprint(&neg, lip, bx)
}

#[derive(Clone, Debug, Serialize)]
pub struct ClauseResult {
    pub pass: bool,
    pub checked: usize,
    pub violations: usize,
    pub witness: Option<String>,
}

impl ClauseResult {
    fn new() -> Self {
        ClauseResult {
            pass: true,
            checked: 0,
            violations: 0,
            witness: None,
        }
    }

    fn fail(&mut self, witness: String) {
        self.pass = false;
        self.violations += 1;
        if self.witness.is_none() {
            self.witness = Some(witness);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop310Report {
    /// Region boxes land in the companion ball and strictly on the correct
    /// side of the smoothed graphs.
    pub clause1: ClauseResult,
    /// Measured two-sided comparability of dist-to-set vs dist-to-lift on the
    /// split regions.
    pub clause2_ratio_plus: (f64, f64),
    pub clause2_ratio_minus: (f64, f64),
    /// dist-to-set dominates dist-to-lift above the smoothed graph.
    pub clause3: ClauseResult,
    /// Points above the smoothed graph near the top cube land in a star
    /// region of some regime cube.
    pub clause4: ClauseResult,
    pub clause4_skipped_sliver: usize,
    /// Companion ball inclusions at the configured factor.
    pub clause5a_pass: bool,
    pub clause5b_pass: bool,
    pub clause5a_lhs: f64,
    pub clause5a_rhs: f64,
    pub clause5b_lhs: f64,
    pub clause5b_rhs: f64,
    pub lip_plus: f64,
    pub lip_minus: f64,
    pub pbmo_plus: f64,
    pub pbmo_minus: f64,
    pub pbmo_budget: f64,
    /// Smallest measured `x_n - g` margin over the plus regions, as a
    /// fraction of `dist(I, base graph)`.
    pub split_margin_min: f64,
}

/// Parameters for the domain verification sweeps.
#[derive(Clone, Copy, Debug)]
pub struct DomainCheckParams {
    /// Window and root scale for the point-location walks.
    pub locate_window: PBox,
    pub locate_k_root: i32,
    /// Point-location floor for the star-region membership walk.
    pub locate_max_k: i32,
    pub m0: f64,
    /// Sample stride over the verification lattices.
    pub stride: usize,
}

/// Verify the lifted-domain construction around the regime's top cube:
/// containment of the split Whitney regions, distance comparability, the
/// one-sided distance domination above the smoothed graph, star-region
/// coverage, and the companion ball inclusions.
#[allow(clippy::too_many_lines)]
pub fn corona_domain_report(
    tree: &CubeTree,
    regime: &Regime,
    eta: f64,
    psi: &PsiPair,
    source: &RegionSource,
    params: &DomainCheckParams,
) -> Result<Prop310Report> {
    let k_const = 1.0 / eta;
    let g = tree.graph.grid();
    let sd = g.spatial_dim;
    let qs = regime.maximal;
    let qs_data = &tree.cubes[&qs];
    let dqs = qs_data.diam;
    let center = qs_data.center;
    let ball1 = ParaBall::new(center, k_const.powf(0.75) * dqs);
    let mut clause1 = ClauseResult::new();
    let mut ratio_plus = (f64::INFINITY, 0.0f64);
    let mut ratio_minus = (f64::INFINITY, 0.0f64);
    let mut split_margin_min = f64::INFINITY;

    let psi_lip_plus = psi.lip_plus;
    let psi_lip_minus = psi.lip_minus;
    for q in &regime.cubes {
        let (handle, region): (_, WhitneyRegion) =
            region_with_source(q, eta, k_const, false, source, tree)?;
        let dec = handle.get();
        if region.members.is_empty() {
            continue;
        }
        let split: RegionSplit = split_region_by_graph(&region, dec, &regime.graph)?;
        for (side, members, lifted, lip) in [
            (1.0f64, &split.plus, &psi.plus, psi_lip_plus),
            (-1.0, &split.minus, &psi.minus, psi_lip_minus),
        ] {
            for &m in members {
                let bx = dec.bx(m);
                clause1.checked += 1;
                // Containment in the companion ball.
                let sup = bx.sup_dist_to_point(&center);
                if sup > ball1.radius {
                    clause1.fail(format!("{:?} leaves the companion ball", dec.cubes[m].key));
                    continue;
                }
                // Strictly on the correct side of the smoothed graph.
                let ok = if side > 0.0 {
                    bx.x_lo[sd] > sup_on_footprint(&lifted.graph.field, lip, &bx)
                } else {
                    bx.x_hi[sd] < inf_on_footprint(&lifted.graph.field, lip, &bx)
                };
                if !ok {
                    clause1.fail(format!(
                        "{:?} not strictly {} the smoothed graph",
                        dec.cubes[m].key,
                        if side > 0.0 { "above" } else { "below" }
                    ));
                    continue;
                }
                // Distance comparability at the box corners and center.
                let mut pts = crate::whitney::box_corners(&bx);
                pts.push(bx.center());
                for p in pts {
                    let de = tree.graph.dist_point_to_samples(&p, None);
                    let vert = (p.x()[sd] - lifted.height(p.t, &p.x()[..sd])).abs();
                    let dg = lifted.graph.dist_point_to_samples(&p, Some(vert.max(1e-300)));
                    if dg > 0.0 {
                        let r = de / dg;
                        if side > 0.0 {
                            ratio_plus.0 = ratio_plus.0.min(r);
                            ratio_plus.1 = ratio_plus.1.max(r);
                        } else {
                            ratio_minus.0 = ratio_minus.0.min(r);
                            ratio_minus.1 = ratio_minus.1.max(r);
                        }
                    }
                }
                // Vertical margin over the base graph.
                let dgamma = regime.graph.dist_box_to_samples(&bx, None);
                let vm = if side > 0.0 {
                    bx.x_lo[sd] - sup_on_footprint(&regime.graph.field, regime.graph.b1, &bx)
                } else {
                    inf_on_footprint(&regime.graph.field, regime.graph.b1, &bx) - bx.x_hi[sd]
                };
                if dgamma > 0.0 {
                    split_margin_min = split_margin_min.min(vm / dgamma);
                }
            }
        }
    }

    // Sample lattice over the inner ball, both sides of the smoothed pair.
    let r_inner = (k_const / 32.0) * dqs;
    let mut clause3 = ClauseResult::new();
    let mut clause4 = ClauseResult::new();
    let mut skipped = 0usize;
    let slack = 3.0 * g.delta * (1.0 + tree.graph.b1);
    let stride = params.stride.max(1);
    let t_lo = center.t - r_inner * r_inner;
    let t_hi = center.t + r_inner * r_inner;
    let mut t = t_lo;
    let dt = g.time_step() * stride as f64;
    let star_cubes: Vec<(CubeId, f64, PBox)> = regime
        .cubes
        .iter()
        .map(|q| (*q, tree.cubes[q].diam, cube_bbox(tree, q)))
        .collect();
    while t <= t_hi {
        let tt = (center.t - t).abs().sqrt();
        if tt >= r_inner {
            t += dt;
            continue;
        }
        let budget = r_inner - tt;
        // Spatial lattice at stride cells.
        let steps = (2.0 * budget / (g.delta * stride as f64)).ceil() as usize + 1;
        for sx in 0..steps.min(4096) {
            let xoff = -budget + sx as f64 * g.delta * stride as f64;
            for sn in 0..steps.min(4096) {
                let noff = -budget + sn as f64 * g.delta * stride as f64;
                let mut x = [0.0; MAX_SPATIAL_DIM];
                if sd == 1 {
                    x[0] = center.x()[0] + xoff;
                }
                x[sd] = center.x()[sd] + noff;
                let p = ParaPoint::new(t, &x[..sd + 1]);
                if pdist(&p, &center) >= r_inner {
                    continue;
                }
                for (side, lifted) in [(1.0f64, &psi.plus), (-1.0, &psi.minus)] {
                    let h = lifted.height(p.t, &p.x()[..sd]);
                    if side * (p.x()[sd] - h) <= 0.0 {
                        continue;
                    }
                    // One-sided domination of distances.
                    let de = tree.graph.dist_point_to_samples(&p, None);
                    let vert = (p.x()[sd] - h).abs();
                    let dg = lifted.graph.dist_point_to_samples(&p, Some(vert.max(1e-300)));
                    clause3.checked += 1;
                    if de + slack < dg {
                        clause3.fail(format!(
                            "dist to set {de} < dist to lift {dg} at t={}, x={:?}",
                            p.t,
                            p.x()
                        ));
                    }
                    // Star-region membership of the containing Whitney cube.
                    if side > 0.0 {
                        match locate_cube(
                            &tree.graph,
                            &params.locate_window,
                            params.locate_k_root,
                            params.locate_max_k,
                            &p,
                        )? {
                            None => skipped += 1,
                            Some(cube) => {
                                clause4.checked += 1;
                                let bx = cube.key.to_box(sd + 1);
                                let mut found = false;
                                for (q, dq, qb) in &star_cubes {
                                    let (lo, hi) = region_thresholds(eta, k_const, true, *dq);
                                    if cube.dist_e < lo {
                                        continue;
                                    }
                                    if bx.dist_to_box(qb) > hi {
                                        continue;
                                    }
                                    let d = tree.dist_box_to_cube(&bx, q, hi + 1e-12);
                                    if d <= hi {
                                        found = true;
                                        break;
                                    }
                                }
                                if !found {
                                    clause4.fail(format!(
                                        "no star region holds {:?}",
                                        cube.key
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        t += dt;
    }

    // Companion centers: the smoothed graph over the base point nearest the
    // top-cube center.
    let nearest = {
        let mut best = (f64::INFINITY, 0usize);
        for flat in 0..g.len() {
            let p = tree.graph.point_flat(flat);
            let d = pdist(&p, &center);
            if d < best.0 {
                best = (d, flat);
            }
        }
        best.1
    };
    let (it, ixb) = g.unindex(nearest);
    let bt = g.t_center(it);
    let bx0 = if sd == 1 { [g.x_center(0, ixb[0])] } else { [0.0] };
    let mk_center = |lifted: &LiftedGraph| -> ParaPoint {
        let mut x = [0.0; MAX_SPATIAL_DIM];
        if sd == 1 {
            x[0] = bx0[0];
        }
        x[sd] = lifted.height(bt, &bx0[..sd]);
        ParaPoint::new(bt, &x[..sd + 1])
    };
    let cp = mk_center(&psi.plus);
    let cm = mk_center(&psi.minus);
    let r78 = k_const.powf(7.0 / 8.0) * dqs;
    let mut a_lhs = 0.0f64;
    let mut b_lhs = 0.0f64;
    for c in [&cp, &cm] {
        let d = pdist(c, &center);
        a_lhs = a_lhs.max(d + params.m0 * k_const.powf(0.75) * dqs);
        b_lhs = b_lhs.max(d + r78);
    }
    let report = Prop310Report {
        clause1,
        clause2_ratio_plus: ratio_plus,
        clause2_ratio_minus: ratio_minus,
        clause3,
        clause4,
        clause4_skipped_sliver: skipped,
        clause5a_pass: a_lhs <= r78,
        clause5b_pass: b_lhs <= r_inner,
        clause5a_lhs: a_lhs,
        clause5a_rhs: r78,
        clause5b_lhs: b_lhs,
        clause5b_rhs: r_inner,
        lip_plus: psi.lip_plus,
        lip_minus: psi.lip_minus,
        pbmo_plus: psi.pbmo_plus,
        pbmo_minus: psi.pbmo_minus,
        pbmo_budget: 1.0 + psi.pbmo_base,
        split_margin_min,
    };
    Ok(report)
}
