//! JSON-facing specifications: graphs, corona inputs, and the experiment
//! configuration consumed by the CLI driver. Builders resolve specs into the
//! in-memory types, validating alignment and parameter couplings.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::caloric::{DataSpec, Side};
use crate::corona::{CoronaInput, Regime};
use crate::dyadic::{build_cubes_on_graph, CubeId, CubeTree};
use crate::error::{Error, Result};
use crate::pargeo::{GraphFn, ParaGrid, SampledGraph, ScalarField};

/// Graph specification: grid box plus a closed-form kind or a value table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphSpec {
    /// Ambient spatial dimension (1 or 2); the graph domain carries `n - 1`
    /// spatial axes.
    pub n: usize,
    pub delta: f64,
    #[serde(rename = "box")]
    pub bounds: BoxSpec,
    pub kind: GraphKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoxSpec {
    pub t: [f64; 2],
    /// Spatial ranges of the graph domain (empty when n = 1).
    #[serde(default)]
    pub x: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Flat {
        level: f64,
    },
    Sine {
        amp: f64,
        t_freq: f64,
        #[serde(default)]
        x_freq: f64,
        #[serde(default)]
        level: f64,
    },
    Multiscale {
        amps: Vec<f64>,
        t_freqs: Vec<f64>,
        #[serde(default)]
        x_freqs: Vec<f64>,
        #[serde(default)]
        level: f64,
    },
    /// Row-major over (t, x'): the time index varies slowest.
    Table {
        values: Vec<f64>,
    },
}

impl GraphSpec {
    pub fn closed_form(&self) -> Option<GraphFn> {
        let tau = std::f64::consts::TAU;
        match &self.kind {
            GraphKind::Flat { level } => {
                let c = *level;
                Some(Arc::new(move |_, _: &[f64]| c))
            }
            GraphKind::Sine {
                amp,
                t_freq,
                x_freq,
                level,
            } => {
                let (a, ft, fx, c) = (*amp, *t_freq, *x_freq, *level);
                Some(Arc::new(move |t: f64, x: &[f64]| {
                    let sx = if x.is_empty() || fx == 0.0 {
                        1.0
                    } else {
                        (tau * fx * x[0]).cos()
                    };
                    c + a * (tau * ft * t).sin() * sx
                }))
            }
            GraphKind::Multiscale {
                amps,
                t_freqs,
                x_freqs,
                level,
            } => {
                let (a, ft, fx, c) = (
                    amps.clone(),
                    t_freqs.clone(),
                    x_freqs.clone(),
                    *level,
                );
                Some(Arc::new(move |t: f64, x: &[f64]| {
                    let mut v = c;
                    for (j, amp) in a.iter().enumerate() {
                        let sx = match (x.first(), fx.get(j)) {
                            (Some(xv), Some(f)) if *f != 0.0 => (tau * f * xv).cos(),
                            _ => 1.0,
                        };
                        v += amp * (tau * ft[j] * t).sin() * sx;
                    }
                    v
                }))
            }
            GraphKind::Table { .. } => None,
        }
    }

    pub fn grid(&self) -> Result<ParaGrid> {
        if !(1..=2).contains(&self.n) {
            return Err(Error::Config(format!("n = {} unsupported", self.n)));
        }
        let sd = self.n - 1;
        if self.bounds.x.len() != sd {
            return Err(Error::Config(format!(
                "expected {sd} spatial ranges, got {}",
                self.bounds.x.len()
            )));
        }
        let dt = self.delta * self.delta;
        let t_extent = self.bounds.t[1] - self.bounds.t[0];
        let t_cells = (t_extent / dt).round();
        if t_cells < 1.0 || (t_extent / dt - t_cells).abs() > 1e-6 {
            return Err(Error::Config(
                "time extent must be a multiple of delta^2".into(),
            ));
        }
        let mut x0 = Vec::new();
        let mut xc = Vec::new();
        for r in &self.bounds.x {
            let cells = ((r[1] - r[0]) / self.delta).round();
            if cells < 1.0 || ((r[1] - r[0]) / self.delta - cells).abs() > 1e-6 {
                return Err(Error::Config(
                    "spatial extent must be a multiple of delta".into(),
                ));
            }
            x0.push(r[0]);
            xc.push(cells as usize);
        }
        Ok(ParaGrid::new(
            sd,
            self.delta,
            self.bounds.t[0],
            t_cells as usize,
            &x0,
            &xc,
        ))
    }

    pub fn build(&self) -> Result<SampledGraph> {
        let grid = self.grid()?;
        let field = match (&self.kind, self.closed_form()) {
            (GraphKind::Table { values }, _) => {
                if values.len() != grid.len() {
                    return Err(Error::Config(format!(
                        "table has {} values, grid needs {}",
                        values.len(),
                        grid.len()
                    )));
                }
                // File order is row-major over (t, x'); storage is
                // time-innermost.
                let mut v = vec![0.0; grid.len()];
                let sd = grid.spatial_dim;
                let xc = if sd == 1 { grid.x_cells[0] } else { 1 };
                for it in 0..grid.t_cells {
                    for ix in 0..xc {
                        let src = it * xc + ix;
                        let dst = if sd == 1 {
                            grid.index(it, &[ix])
                        } else {
                            grid.index(it, &[])
                        };
                        v[dst] = values[src];
                    }
                }
                ScalarField::new(grid, v)
            }
            (_, Some(f)) => ScalarField::from_fn(grid, |t, x| f(t, x)),
            _ => unreachable!(),
        };
        Ok(SampledGraph::from_field(field, self.closed_form()))
    }

    /// Build with a different resolution (refinement studies).
    pub fn with_delta(&self, delta: f64) -> GraphSpec {
        let mut s = self.clone();
        s.delta = delta;
        s
    }
}

/// Corona decomposition given as input.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoronaSpec {
    /// `"single-regime"`: the whole tree as one regime per top cube.
    Tag(String),
    Explicit {
        regimes: Vec<RegimeSpec>,
        #[serde(default)]
        bad: Vec<CubeId>,
        eta: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub maximal: CubeId,
    /// `"all-descendants"` or an explicit list.
    pub cubes: CubesSpec,
    /// Approximating graph; the tree's own graph when absent.
    #[serde(default)]
    pub graph: Option<GraphSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CubesSpec {
    Tag(String),
    List(Vec<CubeId>),
}

impl CoronaSpec {
    pub fn build(&self, tree: &CubeTree, eta: f64) -> Result<CoronaInput> {
        match self {
            CoronaSpec::Tag(tag) if tag == "single-regime" => {
                CoronaInput::single_regime(tree, eta)
            }
            CoronaSpec::Tag(tag) if tag == "all-bad" => Ok(CoronaInput::all_bad(tree, eta)),
            CoronaSpec::Tag(tag) => Err(Error::Config(format!("unknown corona tag {tag:?}"))),
            CoronaSpec::Explicit {
                regimes,
                bad,
                eta: e,
            } => {
                let mut rs = Vec::new();
                for spec in regimes {
                    let cubes: BTreeSet<CubeId> = match &spec.cubes {
                        CubesSpec::Tag(t) if t == "all-descendants" => {
                            tree.descendants(&spec.maximal).into_iter().collect()
                        }
                        CubesSpec::Tag(t) => {
                            return Err(Error::Config(format!("unknown cubes tag {t:?}")))
                        }
                        CubesSpec::List(l) => l.iter().cloned().collect(),
                    };
                    let graph = match &spec.graph {
                        Some(gs) => Arc::new(gs.build()?),
                        None => tree.graph.clone(),
                    };
                    rs.push(Regime::new(cubes, spec.maximal, graph)?);
                }
                let corona = CoronaInput {
                    regimes: rs,
                    bad: bad.iter().cloned().collect(),
                    eta: *e,
                };
                corona.validate(tree)?;
                Ok(corona)
            }
        }
    }
}

/// Source of the nonnegative field fed to the regularization stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HSourceSpec {
    Constant { value: f64 },
    /// Parabolic distance to a time-axis origin.
    ParabolicOrigin { origin_t: f64 },
    /// Half the stopping distance of the configured regime.
    HalfStopping,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeSpec {
    pub k_min: i32,
    pub k_max: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WhitneyWindowSpec {
    pub t: [f64; 2],
    pub x: Vec<[f64; 2]>,
    pub k_root: i32,
    pub max_k: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSpec {
    pub side: Side,
    pub data: DataSpec,
    /// Normal-axis range of the solve box (the graph domain box supplies the
    /// rest).
    pub x_normal: [f64; 2],
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_substeps() -> usize {
    0 // resolved to 4n at build time
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CmeSpec {
    /// Ball centers given by their base-domain coordinates (t, x'); they are
    /// snapped onto the sampled graph.
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    #[serde(default)]
    pub with_time_term: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegdistSpec {
    pub h: HSourceSpec,
    pub k_top: i32,
    pub k_leaf: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub graph: GraphSpec,
    pub eta: f64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub tree: TreeSpec,
    #[serde(default = "default_corona")]
    pub corona: CoronaSpec,
    /// Resolutions for refinement studies (the graph's own delta first).
    #[serde(default)]
    pub resolutions: Vec<f64>,
    pub whitney: Option<WhitneyWindowSpec>,
    pub regdist: Option<RegdistSpec>,
    pub solve: Option<SolveSpec>,
    pub cme: Option<CmeSpec>,
    #[serde(default = "default_m0")]
    pub m0: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_alphas() -> Vec<f64> {
    vec![7.0 / 8.0, 15.0 / 16.0, 31.0 / 32.0]
}

fn default_corona() -> CoronaSpec {
    CoronaSpec::Tag("single-regime".into())
}

fn default_m0() -> f64 {
    4.0
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 || self.eta >= 1.0 {
            return Err(Error::Config(format!("eta = {} out of (0,1)", self.eta)));
        }
        for a in &self.alphas {
            if !(0.875..=0.96875).contains(a) {
                return Err(Error::Config(format!(
                    "alpha = {a} outside [7/8, 31/32]"
                )));
            }
        }
        if let CoronaSpec::Explicit { eta, .. } = &self.corona {
            if (eta - self.eta).abs() > 1e-12 {
                return Err(Error::Config("corona eta differs from experiment eta".into()));
            }
        }
        Ok(())
    }

    pub fn build_tree(&self) -> Result<CubeTree> {
        let graph = Arc::new(self.graph.build()?);
        build_cubes_on_graph(graph, self.tree.k_min, self.tree.k_max)
    }
}
