//! Experiment configuration: a single JSON document, no environment knobs.

use serde::Deserialize;
use std::sync::Arc;

use fibred::discretize::{equipartition, Partition};
use fibred::dynamics::{CurveMetric, IntegratorSpec};
use fibred::error::{Error, Result};
use fibred::fields::{
    graphon_field, kuramoto_field, leader_follower_field, linear_field, michaelis_menten_field,
    GrowthProfile, LabelFn, LabelKernel, PairKernel, TimeProfile, VectorField,
};
use fibred::measures::{Cell, Fibre, FibredMeasure, LabelMarginal};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub marginal: MarginalSpec,
    pub initial: InitialSpec,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub steps: usize,
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default = "eight")]
    pub quad: usize,
    #[serde(default = "p_one")]
    pub metric_p: u32,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub integrator: IntegratorKind,
    /// For `simulate`: a single (n, m) resolution.
    pub particles: Option<ParticlesSpec>,
    /// For `converge`: the (n, seed) sweep.
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub reference: Option<ReferenceSpec>,
    pub master_seed: u64,
    /// Overrides the analytically derived sublinearity bound; the validator
    /// then checks the a-priori envelopes against the declared value.
    pub declared_m: Option<f64>,
}

fn one() -> usize {
    1
}
fn eight() -> usize {
    8
}
fn p_one() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Graphon {
        kernel: KernelSpec,
        #[serde(default)]
        interaction: InteractionSpec,
        #[serde(default = "one")]
        dim: usize,
    },
    Kuramoto {
        coupling: f64,
        kernel: KernelSpec,
    },
    Mm {
        alpha: f64,
        k: f64,
        beta: f64,
        g: f64,
        a: f64,
        #[serde(default)]
        strict: bool,
    },
    LeaderFollower {
        leaders: Vec<f64>,
        followers: [f64; 2],
        /// constant control applied to every leader
        #[serde(default)]
        control: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    Linear {
        a: KernelSpec,
        b: KernelSpec,
        #[serde(default = "one")]
        dim: usize,
    },
}

#[derive(Debug, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InteractionSpec {
    #[default]
    Difference,
    Sine {
        coupling: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Constant { value: f64 },
    /// Step kernel on the equipartition of the marginal into `n` cells,
    /// row-major `n*n` values.
    Step { n: usize, values: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginalSpec {
    Uniform {
        #[serde(default = "default_grid")]
        grid: usize,
    },
    Density {
        cdf: Vec<f64>,
    },
    Atoms {
        atoms: Vec<(f64, f64)>,
    },
}

fn default_grid() -> usize {
    4096
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Path to a measure JSON file.
    File(String),
    /// Product `π × ρ` on a single cell.
    Product { points: Vec<(f64, f64)> },
    /// Piecewise-constant fibres on the equipartition into `cells` pieces;
    /// one `(x, w)` point list per cell.
    Piecewise { cells: usize, fibres: Vec<Vec<(f64, f64)>> },
}

#[derive(Debug, Deserialize, Default, Clone, Copy)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeometrySpec {
    #[default]
    Euclidean,
    Torus {
        period: f64,
    },
}

#[derive(Debug, Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    Euler,
    #[default]
    Rk4,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSpec {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n: Vec<usize>,
    pub m_rule: MRule,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MRule {
    NSquared,
    Explicit(Vec<usize>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub mode: String,
    pub n_ref: usize,
    pub m_ref: usize,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {path}: {e}")))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {path}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_end <= 0.0 || self.steps == 0 {
            return Err(Error::Config("need T > 0 and steps >= 1".into()));
        }
        if self.metric_p != 1 && self.metric_p != 2 {
            return Err(Error::Config("metric p must be 1 or 2".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.n.len() < 2 {
                return Err(Error::Config("sweep needs at least two n values".into()));
            }
            if let MRule::Explicit(ms) = &sweep.m_rule {
                if ms.len() != sweep.n.len() {
                    return Err(Error::Config("explicit m list must match n list".into()));
                }
            }
            if let Some(rf) = &self.reference {
                if rf.mode != "high_res" {
                    return Err(Error::Config(format!("unknown reference mode {}", rf.mode)));
                }
                let n_max = sweep.n.iter().copied().max().unwrap_or(1);
                if rf.n_ref < 2 * n_max {
                    return Err(Error::Config(format!(
                        "reference resolution n_ref = {} too coarse for max sweep n = {n_max}",
                        rf.n_ref
                    )));
                }
            } else {
                return Err(Error::Config("converge sweeps need a reference spec".into()));
            }
            if self.seeds.is_empty() {
                return Err(Error::Config("sweep needs at least one seed".into()));
            }
        }
        Ok(())
    }

    pub fn marginal(&self) -> Result<LabelMarginal<f64>> {
        let pi = match &self.marginal {
            MarginalSpec::Uniform { grid } => LabelMarginal::uniform(*grid),
            MarginalSpec::Density { cdf } => LabelMarginal::Density { cdf: cdf.clone() },
            MarginalSpec::Atoms { atoms } => LabelMarginal::atoms(atoms.clone()),
        };
        pi.validate()?;
        Ok(pi)
    }

    fn kernel(&self, spec: &KernelSpec, pi: &LabelMarginal<f64>) -> Result<LabelKernel<f64>> {
        Ok(match spec {
            KernelSpec::Constant { value } => LabelKernel::Constant(*value),
            KernelSpec::Step { n, values } => {
                let part = equipartition(pi, *n)?;
                LabelKernel::step(part, values.clone())?
            }
        })
    }

    pub fn field(&self, pi: &LabelMarginal<f64>) -> Result<VectorField<f64>> {
        let field = match &self.model {
            ModelSpec::Graphon { kernel, interaction, dim } => {
                let w = self.kernel(kernel, pi)?;
                let psi = match interaction {
                    InteractionSpec::Difference => PairKernel::Difference,
                    InteractionSpec::Sine { coupling } => PairKernel::Sine { coupling: *coupling },
                };
                graphon_field(w, psi, *dim)
            }
            ModelSpec::Kuramoto { coupling, kernel } => {
                kuramoto_field(*coupling, self.kernel(kernel, pi)?)
            }
            ModelSpec::Mm { alpha, k, beta, g, a, strict } => michaelis_menten_field(
                LabelKernel::Constant(*alpha),
                LabelKernel::Constant(*k),
                *k,
                LabelFn::Constant(*beta),
                LabelFn::Constant(*g),
                LabelFn::Constant(*a),
                *a,
                *strict,
            )?,
            ModelSpec::LeaderFollower { leaders, followers, control, dim } => {
                let c = *control;
                leader_follower_field(
                    leaders.clone(),
                    (followers[0], followers[1]),
                    Arc::new(|_t, _x, out: &mut [f64]| out.iter_mut().for_each(|o| *o = 0.0)),
                    0.0,
                    0.0,
                    Arc::new(move |_t, _omega| c),
                    c.abs(),
                    PairKernel::Difference,
                    *dim,
                )
            }
            ModelSpec::Linear { a, b, dim } => {
                linear_field(self.kernel(a, pi)?, self.kernel(b, pi)?, *dim)
            }
        };
        Ok(match self.declared_m {
            Some(m) => {
                let lip = field.growth().l_r(f64::MAX);
                field.with_growth(GrowthProfile::uniform(TimeProfile::Constant(m), lip))
            }
            None => field,
        })
    }

    pub fn initial_measure(&self, pi: &LabelMarginal<f64>) -> Result<FibredMeasure<f64>> {
        let mu0 = match &self.initial {
            InitialSpec::File(path) => fibred::io::load_measure(path)?,
            InitialSpec::Product { points } => {
                let rho = fibred::measures::DiscreteMeasure::from_scalars(points.clone())?;
                FibredMeasure::product(pi.clone(), vec![Cell::interval(0.0, 1.0)], &rho)?
            }
            InitialSpec::Piecewise { cells, fibres } => {
                if fibres.len() != *cells {
                    return Err(Error::Config("need one fibre point list per cell".into()));
                }
                let part = equipartition(pi, *cells)?;
                let fibres = part
                    .cells()
                    .iter()
                    .zip(part.masses())
                    .zip(fibres)
                    .map(|((&cell, &mass), pts)| {
                        Fibre::new(
                            cell,
                            mass,
                            pts.iter().map(|&(x, w)| (vec![x], w)).collect(),
                            1,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                FibredMeasure::new(pi.clone(), 1, fibres)?
            }
        };
        if !mu0.marginal().approx_eq(pi, 1e-10) {
            return Err(Error::Config(
                "initial measure marginal does not match the configured marginal".into(),
            ));
        }
        Ok(mu0)
    }

    pub fn integrator(&self) -> IntegratorSpec {
        match self.integrator {
            IntegratorKind::Euler => IntegratorSpec::euler(self.substeps),
            IntegratorKind::Rk4 => IntegratorSpec::rk4(self.substeps),
        }
    }

    pub fn curve_metric(&self) -> CurveMetric<f64> {
        match self.geometry {
            GeometrySpec::Euclidean => CurveMetric::FibredW1,
            GeometrySpec::Torus { period } => CurveMetric::FibredW1Torus { period },
        }
    }

    pub fn m_of(&self, n: usize) -> usize {
        match self.sweep.as_ref().map(|s| &s.m_rule) {
            Some(MRule::NSquared) => n * n,
            Some(MRule::Explicit(ms)) => {
                let sweep = self.sweep.as_ref().unwrap();
                let idx = sweep.n.iter().position(|&v| v == n).unwrap_or(0);
                ms[idx]
            }
            None => n,
        }
    }
}

/// Partition helper shared by the commands.
pub fn coarse_and_fine(
    pi: &LabelMarginal<f64>,
    n: usize,
    m: usize,
) -> Result<(Partition<f64>, Partition<f64>)> {
    let coarse = equipartition(pi, n)?;
    let fine = equipartition(pi, n * m)?;
    Ok((coarse, fine))
}
