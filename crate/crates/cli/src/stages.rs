//! Stage implementations. Every stage writes `<out>/<stage>.json` with the
//! resolved config, its measured results, and the list of hard-check
//! failures; table-producing stages add CSV files next to it.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde_json::{json, Value};

use parcme_core::caloric::{self};
use parcme_core::config::{ExperimentConfig, HSourceSpec};
use parcme_core::corona::{self, Regime};
use parcme_core::dyadic::{self, CubeId, CubeTree};
use parcme_core::halfderiv::{self, HalfDerivMethod};
use parcme_core::lift;
use parcme_core::pargeo::{ParaBall, ParaGrid, ParaPoint, PBox, SampledGraph, ScalarField};
use parcme_core::regdist;
use parcme_core::report;
use parcme_core::whitney;

pub fn run_stage(
    name: &str,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
) -> anyhow::Result<Vec<String>> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out)?;
    match name {
        "cubes" => stage_cubes(&cfg, out),
        "whitney" => stage_whitney(&cfg, out),
        "corona" => stage_corona(&cfg, out),
        "regdist" => stage_regdist(&cfg, out),
        "lift" => stage_lift(&cfg, out),
        "bmo" => stage_bmo(&cfg, out),
        "solve" => stage_solve(&cfg, out),
        "cme" => stage_cme(&cfg, out),
        "pack" => stage_pack(&cfg, out),
        "all" => {
            let mut failures = Vec::new();
            for s in [
                "cubes", "whitney", "corona", "regdist", "lift", "bmo", "solve", "cme", "pack",
            ] {
                failures.extend(run_stage(s, config, out, seed)?);
            }
            Ok(failures)
        }
        other => Err(anyhow!("unknown stage {other:?}")),
    }
}

fn finish(
    out: &Path,
    stage: &str,
    cfg: &ExperimentConfig,
    results: Value,
    failures: Vec<String>,
) -> anyhow::Result<Vec<String>> {
    let doc = json!({
        "config": cfg,
        "results": results,
        "failures": failures,
    });
    report::write_json(&out.join(format!("{stage}.json")), &doc)?;
    println!(
        "[{stage}] {} ({})",
        if failures.is_empty() { "pass" } else { "FAIL" },
        out.join(format!("{stage}.json")).display()
    );
    Ok(failures)
}

fn stage_cubes(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let tree = cfg.build_tree()?;
    let mut failures = Vec::new();
    let rep = match dyadic::verify_cube_axioms(&tree, &[0.1, 0.15, 0.22, 0.33]) {
        Ok(r) => Some(r),
        Err(e) => {
            failures.push(format!("cube axioms: {e}"));
            None
        }
    };
    // Export: one record per cube.
    let export: Vec<Value> = tree
        .cubes
        .iter()
        .map(|(id, d)| {
            json!({
                "id": id,
                "center": {"t": d.center.t, "x": d.center.x()},
                "diam": d.diam,
                "measure": d.measure,
                "parent": if id.k > tree.k_min { Some(id.parent()) } else { None },
            })
        })
        .collect();
    report::write_json(&out.join("cubes_export.json"), &export)?;
    let results = json!({
        "cube_count": tree.cubes.len(),
        "axioms": rep,
    });
    finish(out, "cubes", cfg, results, failures)
}

fn whitney_window(cfg: &ExperimentConfig) -> anyhow::Result<(PBox, i32, i32)> {
    let w = cfg
        .whitney
        .as_ref()
        .ok_or_else(|| anyhow!("config has no whitney window"))?;
    let n = cfg.graph.n;
    if w.x.len() != n {
        return Err(anyhow!(
            "whitney window needs {n} spatial ranges, got {}",
            w.x.len()
        ));
    }
    let mut x_lo = [0.0; 2];
    let mut x_hi = [0.0; 2];
    for (a, r) in w.x.iter().enumerate() {
        x_lo[a] = r[0];
        x_hi[a] = r[1];
    }
    Ok((
        PBox {
            t_lo: w.t[0],
            t_hi: w.t[1],
            x_lo,
            x_hi,
            dim: n,
        },
        w.k_root,
        w.max_k,
    ))
}

fn stage_whitney(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let graph = Arc::new(cfg.graph.build()?);
    let (window, k_root, max_k) = whitney_window(cfg)?;
    let dec = whitney::whitney_decompose(&graph, &window, k_root, max_k)?;
    let mut failures = Vec::new();
    let bad = whitney::verify_whitney_bounds(&dec, &graph);
    if !bad.is_empty() {
        failures.push(format!("{} Whitney cubes violate the 4/100 bounds", bad.len()));
    }
    if dec.far_field_count > 0 {
        failures.push(format!("{} far-field root tiles", dec.far_field_count));
    }
    let accepted_volume: f64 = (0..dec.cubes.len()).map(|i| dec.bx(i).volume()).sum();
    let export: Vec<Value> = dec
        .cubes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let b = dec.bx(i);
            json!({
                "box": {"t": [b.t_lo, b.t_hi], "x_lo": &b.x_lo[..b.dim], "x_hi": &b.x_hi[..b.dim]},
                "diam": dec.diam(i),
                "dist_e": c.dist_e,
            })
        })
        .collect();
    report::write_json(&out.join("whitney_export.json"), &export)?;
    let results = json!({
        "cube_count": dec.cubes.len(),
        "accepted_volume": accepted_volume,
        "discarded_volume": dec.discarded_volume,
        "discarded_count": dec.discarded_count,
        "window_volume": window.volume(),
        "tiling_defect": (accepted_volume + dec.discarded_volume - window.volume()).abs(),
    });
    finish(out, "whitney", cfg, results, failures)
}

fn stage_corona(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let tree = cfg.build_tree()?;
    let corona = cfg.corona.build(&tree, cfg.eta)?;
    corona.validate(&tree)?;
    let mut failures = Vec::new();
    let mut regimes = Vec::new();
    for (i, r) in corona.regimes.iter().enumerate() {
        let coh = corona::validate_coherent(r, true, &tree);
        if !coh.coherent() {
            failures.push(format!("regime {i} fails coherency"));
        }
        let bil = corona::bilateral_approx_check(r, cfg.eta, &tree, 4)?;
        if bil.worst_ratio >= 1.0 {
            failures.push(format!(
                "regime {i}: bilateral approximation ratio {} >= 1",
                bil.worst_ratio
            ));
        }
        regimes.push(json!({
            "maximal": r.maximal,
            "cubes": r.cubes.len(),
            "coherent": coh.fully_coherent(),
            "bilateral_worst_ratio": bil.worst_ratio,
        }));
    }
    // Structural packing with surface-measure weights over every top cube.
    let weights: std::collections::BTreeMap<CubeId, f64> =
        tree.cubes.iter().map(|(id, d)| (*id, d.measure)).collect();
    let mut packing = Vec::new();
    for (q0, _) in tree.generation(tree.k_min) {
        packing.push(json!({
            "q0": q0,
            "sigma_ratio": corona::packing_check(&corona, q0, &weights)?,
        }));
    }
    let results = json!({
        "regimes": regimes,
        "bad_cubes": corona.bad.len(),
        "sigma_packing": packing,
    });
    finish(out, "corona", cfg, results, failures)
}

fn h_source(
    cfg: &ExperimentConfig,
    tree: &CubeTree,
) -> anyhow::Result<(ScalarField, Option<Regime>)> {
    let spec = cfg
        .regdist
        .as_ref()
        .ok_or_else(|| anyhow!("config has no regdist section"))?;
    let grid = tree.graph.grid().clone();
    Ok(match &spec.h {
        HSourceSpec::Constant { value } => {
            let v = *value;
            (ScalarField::from_fn(grid, move |_, _| v), None)
        }
        HSourceSpec::ParabolicOrigin { origin_t } => {
            let o = *origin_t;
            (
                ScalarField::from_fn(grid, move |t, _| (t - o).abs().sqrt()),
                None,
            )
        }
        HSourceSpec::HalfStopping => {
            let corona = cfg.corona.build(tree, cfg.eta)?;
            let regime = corona
                .regimes
                .first()
                .ok_or_else(|| anyhow!("corona has no regimes"))?
                .clone();
            let d = regime.stopping_distance_field(tree, None);
            (
                ScalarField::new(grid, d.iter().map(|v| 0.5 * v).collect()),
                Some(regime),
            )
        }
    })
}

fn stage_regdist(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let spec = cfg
        .regdist
        .clone()
        .ok_or_else(|| anyhow!("config has no regdist section"))?;
    let tree = cfg.build_tree()?;
    let (h, _) = h_source(cfg, &tree)?;
    let hw = regdist::whitney_wrt_h(&h, spec.k_top, spec.k_leaf)?;
    let mut failures = Vec::new();
    if !hw.a1_violations.is_empty() {
        failures.push(format!(
            "{} cubes violate the dilate comparability",
            hw.a1_violations.len()
        ));
    }
    if !hw.a2_violations.is_empty() {
        failures.push(format!(
            "{} intersecting pairs violate the size ratio",
            hw.a2_violations.len()
        ));
    }
    if hw.overlap_max as f64 > hw.overlap_bound {
        failures.push("overlap exceeds the volume-comparison bound".into());
    }
    let hf = regdist::build_h_field(&h, hw);
    let rep = regdist::verify_regdist_props(&hf)?;
    if rep.bound_violations > 0 {
        failures.push(format!(
            "{} samples violate the two-sided comparability",
            rep.bound_violations
        ));
    }
    let export = json!({
        "cubes": hf.hw.cubes,
        "constants": rep,
    });
    report::write_json(&out.join("regdist_export.json"), &export)?;
    let results = json!({
        "cube_count": hf.hw.cubes.len(),
        "overlap_max": hf.hw.overlap_max,
        "overlap_bound": hf.hw.overlap_bound,
        "unresolved_count": hf.hw.unresolved_count,
        "unresolved_volume": hf.hw.unresolved_volume,
        "report": rep,
    });
    finish(out, "regdist", cfg, results, failures)
}

fn first_regime(cfg: &ExperimentConfig, tree: &CubeTree) -> anyhow::Result<Regime> {
    let corona = cfg.corona.build(tree, cfg.eta)?;
    corona
        .regimes
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!("corona has no regimes"))
}

fn stage_lift(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let spec = cfg
        .regdist
        .clone()
        .ok_or_else(|| anyhow!("lift stage needs the regdist section for the smoothing"))?;
    let tree = cfg.build_tree()?;
    let regime = first_regime(cfg, &tree)?;
    let mut failures = Vec::new();
    let mut lifts = Vec::new();
    for &alpha in &cfg.alphas {
        let l = lift::lift_graph(&tree, &regime, cfg.eta, alpha, 1.0)?;
        if l.lip > 3.0 * cfg.eta.powf(alpha) + 1e-9 {
            failures.push(format!("alpha {alpha}: Lip {} exceeds 3 eta^alpha", l.lip));
        }
        let (lo, hi) = l.dg_over_df;
        if lo < 0.5 - 1e-9 || hi > 2.0 + 1e-9 {
            failures.push(format!("alpha {alpha}: lifted-distance band [{lo}, {hi}]"));
        }
        // Set-below margins on the quarter-scale companion ball.
        let qs = &tree.cubes[&regime.maximal];
        let window = ParaBall::new(qs.center, 0.25 / cfg.eta * qs.diam);
        let below = lift::check_e_below(&l, &regime, &tree, &window)?;
        if below.upper_violations + below.lower_violations + below.below_violations > 0 {
            failures.push(format!(
                "alpha {alpha}: set-below margins violated ({} up, {} low, {} below)",
                below.upper_violations, below.lower_violations, below.below_violations
            ));
        }
        lifts.push(json!({
            "alpha": alpha,
            "lip": l.lip,
            "lip_budget": 3.0 * cfg.eta.powf(alpha),
            "band": [lo, hi],
            "set_below": below,
        }));
    }
    let psi = lift::build_psi(&tree, &regime, cfg.eta, spec.k_top, spec.k_leaf)?;
    if psi.sandwich_plus.upper_violations + psi.sandwich_minus.upper_violations > 0 {
        failures.push("wide sandwich side violated".into());
    }
    if psi.sandwich_plus.lower_violations + psi.sandwich_minus.lower_violations > 0 {
        failures.push(format!(
            "narrow sandwich side violated at {} samples (asymptotic-only: needs far smaller eta; worst margin {})",
            psi.sandwich_plus.lower_violations + psi.sandwich_minus.lower_violations,
            psi.sandwich_plus.worst_lower_margin.min(psi.sandwich_minus.worst_lower_margin),
        ));
    }
    if psi.pbmo_plus > 1.0 + psi.pbmo_base || psi.pbmo_minus > 1.0 + psi.pbmo_base {
        failures.push("half-derivative oscillation budget exceeded".into());
    }
    let (window, k_root, max_k) = whitney_window(cfg)?;
    let grid_k = (1.0 / cfg.graph.delta).log2().ceil() as i32 + 2;
    let source = whitney::RegionSource::Local {
        window,
        k_root,
        max_k_cap: grid_k,
    };
    let params = lift::DomainCheckParams {
        locate_window: window,
        locate_k_root: k_root,
        locate_max_k: max_k + 4,
        m0: cfg.m0,
        stride: 4,
    };
    let rep = lift::corona_domain_report(&tree, &regime, cfg.eta, &psi, &source, &params)?;
    if !rep.clause1.pass {
        failures.push(format!("containment clause: {:?}", rep.clause1.witness));
    }
    if !rep.clause3.pass {
        failures.push(format!("distance-domination clause: {:?}", rep.clause3.witness));
    }
    if !rep.clause4.pass {
        failures.push(format!("star-coverage clause: {:?}", rep.clause4.witness));
    }
    if !rep.clause5a_pass || !rep.clause5b_pass {
        failures.push(format!(
            "companion ball inclusions fail ({} vs {}, {} vs {}): arithmetic in eta, needs far smaller eta",
            rep.clause5a_lhs, rep.clause5a_rhs, rep.clause5b_lhs, rep.clause5b_rhs
        ));
    }
    let results = json!({
        "lifts": lifts,
        "sandwich_plus": psi.sandwich_plus,
        "sandwich_minus": psi.sandwich_minus,
        "pbmo": {"base": psi.pbmo_base, "plus": psi.pbmo_plus, "minus": psi.pbmo_minus},
        "domain": rep,
    });
    finish(out, "lift", cfg, results, failures)
}

fn stage_bmo(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let tree = cfg.build_tree()?;
    let field = &tree.graph.field;
    let dp = halfderiv::half_time_derivative(field, HalfDerivMethod::Pv)?;
    let ds = halfderiv::half_time_derivative(field, HalfDerivMethod::Spectral)?;
    let t = field.grid.t_cells;
    let gap = (t / 4..3 * t / 4)
        .map(|i| (dp.values[i] - ds.values[i]).abs())
        .fold(0.0f64, f64::max);
    let pbmo_f = halfderiv::pbmo_norm(&ds);
    let mut failures = Vec::new();
    // Flatness functionals of the regularized field when configured.
    let mut nu_rows = Vec::new();
    if cfg.regdist.is_some() {
        let spec = cfg.regdist.clone().unwrap();
        let (h, _) = h_source(cfg, &tree)?;
        let hw = regdist::whitney_wrt_h(&h, spec.k_top, spec.k_leaf)?;
        let hf = regdist::build_h_field(&h, hw);
        let dh = halfderiv::half_time_derivative(&hf.sampled, HalfDerivMethod::Spectral)?;
        let pbmo_h = halfderiv::pbmo_norm(&dh);
        if !pbmo_h.is_finite() {
            failures.push("oscillation norm of the regularized field not finite".into());
        }
        let g = &hf.sampled.grid;
        let t_span = g.t_end() - g.t0;
        // Smallest usable rho keeps three log-levels above the resolution
        // floor; the largest keeps the doubled ball inside the window.
        let rho_min = 4.0 * g.delta * (2.0f64).powf(3.0 / 8.0) * 1.05;
        // Centers sweep fractions 0.3..0.7 of the window; the doubled ball
        // must stay inside from the worst of them.
        let mut rho_max = (0.14 * t_span).sqrt();
        if g.spatial_dim == 1 {
            rho_max = rho_max.min((g.x_end(0) - g.x0[0]) / 4.2);
        }
        if rho_max < rho_min {
            failures.push("window too small for the flatness sweep".into());
        }
        for frac in [1.0, 0.63, 0.4] {
            let rho = (rho_max * frac).max(rho_min);
            for cfrac in [0.3, 0.5, 0.7] {
                let ct = g.t0 + cfrac * t_span;
                let cx = if g.spatial_dim == 1 {
                    vec![g.x0[0] + 0.5 * (g.x_end(0) - g.x0[0])]
                } else {
                    vec![]
                };
                match halfderiv::carleson_nu(&hf.sampled, ct, &cx, rho) {
                    Ok((nu, ratio)) => {
                        if !ratio.is_finite() {
                            failures.push(format!("flatness ratio not finite at rho {rho}"));
                        }
                        nu_rows.push(json!({"center_t": ct, "rho": rho, "nu": nu, "ratio": ratio}));
                    }
                    Err(e) => failures.push(format!("nu at rho {rho}: {e}")),
                }
            }
        }
        let results = json!({
            "pv_vs_spectral_gap": gap,
            "pbmo_graph_half_derivative": pbmo_f,
            "pbmo_regularized_half_derivative": pbmo_h,
            "nu": nu_rows,
        });
        return finish(out, "bmo", cfg, results, failures);
    }
    let results = json!({
        "pv_vs_spectral_gap": gap,
        "pbmo_graph_half_derivative": pbmo_f,
    });
    finish(out, "bmo", cfg, results, failures)
}

fn build_solve(cfg: &ExperimentConfig, graph: Arc<SampledGraph>) -> anyhow::Result<caloric::HeatField> {
    let spec = cfg
        .solve
        .as_ref()
        .ok_or_else(|| anyhow!("config has no solve section"))?;
    let n = cfg.graph.n;
    let gg = graph.grid();
    let mut x0 = Vec::new();
    let mut cells = Vec::new();
    for a in 0..n - 1 {
        x0.push(gg.x0[a]);
        cells.push(gg.x_cells[a]);
    }
    let normal_cells = ((spec.x_normal[1] - spec.x_normal[0]) / gg.delta).round() as usize;
    x0.push(spec.x_normal[0]);
    cells.push(normal_cells);
    let grid = ParaGrid::new(n, gg.delta, gg.t0, gg.t_cells, &x0, &cells);
    let substeps = if spec.substeps == 0 { 4 * n } else { spec.substeps };
    Ok(caloric::solve_heat(
        graph,
        spec.side,
        spec.data.clone(),
        grid,
        substeps,
    )?)
}

fn stage_solve(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let graph = Arc::new(cfg.graph.build()?);
    let field = build_solve(cfg, graph)?;
    let mut failures = Vec::new();
    // Scheme exactness for the polynomial fixtures.
    let spec = cfg.solve.as_ref().unwrap();
    let exact: Option<Box<dyn Fn(f64, &[f64]) -> f64>> = match &spec.data {
        caloric::DataSpec::Constant { value } => {
            let v = *value;
            Some(Box::new(move |_, _| v))
        }
        caloric::DataSpec::LinearNormal => Some(Box::new(|_, x| x[x.len() - 1])),
        caloric::DataSpec::CaloricQuadratic => Some(Box::new(|t, x| {
            x.iter().map(|v| v * v).sum::<f64>() / (2.0 * x.len() as f64) + t
        })),
        _ => None,
    };
    let mut worst_defect = 0.0f64;
    if let Some(exact) = exact {
        let cells = field.cells();
        for slab in 0..field.grid.t_cells {
            let t = field.grid.t_center(slab);
            for c in 0..cells {
                let idx = slab * cells + c;
                if field.active[idx] {
                    let x = field.cell_coords(c);
                    worst_defect =
                        worst_defect.max((field.u[idx] - exact(t, &x[..field.grid.spatial_dim])).abs());
                }
            }
        }
        if worst_defect > 1e-11 * field.sup_u.max(1.0) {
            failures.push(format!("scheme exactness defect {worst_defect}"));
        }
    }
    let results = json!({
        "sup_u": field.sup_u,
        "substeps": field.substeps,
        "stability_factor": 1.0 / field.substeps as f64,
        "exactness_defect": worst_defect,
        "slabs": field.grid.t_cells,
        "cells": field.cells(),
    });
    finish(out, "solve", cfg, results, failures)
}

fn cme_centers(cfg: &ExperimentConfig, graph: &SampledGraph) -> anyhow::Result<Vec<ParaPoint>> {
    let spec = cfg.cme.as_ref().ok_or_else(|| anyhow!("config has no cme section"))?;
    let sd = graph.grid().spatial_dim;
    let mut out = Vec::new();
    for c in &spec.centers {
        if c.len() != sd + 1 {
            return Err(anyhow!("cme center needs {} coordinates (t, x')", sd + 1));
        }
        let t = c[0];
        let x = &c[1..];
        let mut co = Vec::from(x);
        co.push(graph.height(t, x));
        out.push(ParaPoint::new(t, &co));
    }
    Ok(out)
}

fn stage_cme(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let graph = Arc::new(cfg.graph.build()?);
    let field = build_solve(cfg, graph.clone())?;
    let centers = cme_centers(cfg, &graph)?;
    let spec = cfg.cme.as_ref().unwrap();
    let table = caloric::cme_functional(&field, &centers, &spec.radii)?;
    report::write_csv_cme(&out.join("cme_table.csv"), &table)?;
    let mut failures = Vec::new();
    if !table.sup.is_finite() || !table.sup_with_time_term.is_finite() {
        failures.push("Carleson functional not finite".into());
    }
    let results = json!({
        "sup": table.sup,
        "sup_with_time_term": table.sup_with_time_term,
        "rows": table.rows.len(),
    });
    finish(out, "cme", cfg, results, failures)
}

fn stage_pack(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Vec<String>> {
    let tree = cfg.build_tree()?;
    let field = build_solve(cfg, tree.graph.clone())?;
    let (window, k_root, max_k) = whitney_window(cfg)?;
    // Materialize regions down to half a grid cell; thinner cubes carry no
    // cell centers and are resolved by the per-cell location walk.
    let grid_k = (1.0 / cfg.graph.delta).log2().ceil() as i32 + 1;
    let source = whitney::RegionSource::Local {
        window,
        k_root,
        max_k_cap: grid_k,
    };
    let corona = cfg.corona.build(&tree, cfg.eta)?;
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for (q0, _) in tree.generation(tree.k_min) {
        let rep = caloric::packing_sum(
            &field,
            &tree,
            q0,
            cfg.eta,
            &source,
            Some(max_k + 3),
            Some(&corona),
        )?;
        if !rep.ratio.is_finite() || !rep.a_max.is_finite() {
            failures.push(format!("packing over {q0} not finite"));
        }
        report::write_csv_beta(
            &out.join(format!("beta_{}_{}_{}.csv", q0.k, q0.it, q0.ix)),
            &rep,
        )?;
        reports.push(json!({
            "q0": q0,
            "ratio": rep.ratio,
            "a_max": rep.a_max,
            "parts": rep.part_ratios,
        }));
    }
    let results = json!({"packing": reports});
    finish(out, "pack", cfg, results, failures)
}

pub fn compare(a: &Path, b: &Path, out: Option<&Path>) -> anyhow::Result<f64> {
    let va: Value = serde_json::from_str(&std::fs::read_to_string(a).context("report A")?)?;
    let vb: Value = serde_json::from_str(&std::fs::read_to_string(b).context("report B")?)?;
    let table = report::compare_reports(&va, &vb, &["delta", "cells", "slabs", "cube_count"])?;
    if let Some(p) = out {
        report::write_json(p, &table)?;
    }
    Ok(table.max_rel_drift)
}
