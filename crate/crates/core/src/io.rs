//! File formats: measure JSON, measure-curve JSON, trajectory CSV, records
//! CSV and the experiment summary JSON.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{BoundReport, ConvergenceRecord};
use crate::dynamics::{MeasureCurve, TimeGrid, TrajectoryEnsemble};
use crate::error::{Error, Result};
use crate::measures::{Cell, Fibre, FibredMeasure, LabelMarginal};
use crate::scalar::Scalar;

// ---------------------------------------------------------------------------
// Measure files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct MeasureDoc<S: Scalar> {
    marginal: LabelMarginal<S>,
    dim: usize,
    fibres: Vec<FibreDoc<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct FibreDoc<S: Scalar> {
    /// `[a, b]` for an interval cell; atoms are written as `[ω, ω]`.
    cell: [S; 2],
    weight: S,
    points: Vec<PointDoc<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct PointDoc<S: Scalar> {
    x: Vec<S>,
    w: S,
}

fn to_doc<S: Scalar>(mu: &FibredMeasure<S>) -> MeasureDoc<S> {
    let dim = mu.dim();
    MeasureDoc {
        marginal: mu.marginal().clone(),
        dim,
        fibres: mu
            .fibres()
            .iter()
            .map(|f| FibreDoc {
                cell: match f.cell {
                    Cell::Interval { a, b } => [a, b],
                    Cell::Atom { omega } => [omega, omega],
                },
                weight: f.weight,
                points: (0..f.len())
                    .map(|j| PointDoc { x: f.point(j, dim).to_vec(), w: f.weights()[j] })
                    .collect(),
            })
            .collect(),
    }
}

fn from_doc<S: Scalar>(doc: MeasureDoc<S>) -> Result<FibredMeasure<S>> {
    let atomic = doc.marginal.is_atomic();
    let fibres = doc
        .fibres
        .into_iter()
        .map(|f| {
            let [a, b] = f.cell;
            let cell = if a == b {
                if !atomic {
                    return Err(Error::Config(format!(
                        "zero-width cell [{a}, {b}] under a density marginal"
                    )));
                }
                Cell::atom(a)
            } else {
                Cell::interval(a, b)
            };
            let points = f.points.into_iter().map(|p| (p.x, p.w)).collect();
            Fibre::new(cell, f.weight, points, doc.dim)
        })
        .collect::<Result<Vec<_>>>()?;
    FibredMeasure::new(doc.marginal, doc.dim, fibres)
}

pub fn measure_to_json<S: Scalar>(mu: &FibredMeasure<S>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_doc(mu))?)
}

pub fn measure_from_json<S: Scalar>(json: &str) -> Result<FibredMeasure<S>> {
    from_doc(serde_json::from_str(json)?)
}

pub fn save_measure<S: Scalar>(path: impl AsRef<Path>, mu: &FibredMeasure<S>) -> Result<()> {
    std::fs::write(path, measure_to_json(mu)?)?;
    Ok(())
}

pub fn load_measure<S: Scalar>(path: impl AsRef<Path>) -> Result<FibredMeasure<S>> {
    measure_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Measure curves
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct CurveDoc<S: Scalar> {
    t_end: S,
    steps: usize,
    measures: Vec<MeasureDoc<S>>,
}

pub fn curve_to_json<S: Scalar>(curve: &MeasureCurve<S>) -> Result<String> {
    let doc = CurveDoc {
        t_end: curve.grid.t_end,
        steps: curve.grid.steps,
        measures: curve.measures.iter().map(to_doc).collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn curve_from_json<S: Scalar>(json: &str) -> Result<MeasureCurve<S>> {
    let doc: CurveDoc<S> = serde_json::from_str(json)?;
    let grid = TimeGrid::new(doc.t_end, doc.steps)?;
    let measures = doc
        .measures
        .into_iter()
        .map(from_doc)
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasureCurve { grid, measures })
}

// ---------------------------------------------------------------------------
// CSV writers
// ---------------------------------------------------------------------------

/// Trajectory dump: columns `t, particle_id, cell_k, x_0..x_{d-1}`.
pub fn write_trajectory_csv<S: Scalar>(
    mut w: impl Write,
    traj: &TrajectoryEnsemble<S>,
) -> Result<()> {
    write!(w, "t,particle_id,cell_k")?;
    for c in 0..traj.dim {
        write!(w, ",x_{c}")?;
    }
    writeln!(w)?;
    for (s, t) in traj.grid.nodes().enumerate() {
        let state = traj.state(s);
        for i in 0..traj.n_particles() {
            write!(w, "{t},{i},{}", traj.cells[i])?;
            for c in 0..traj.dim {
                write!(w, ",{}", state[i * traj.dim + c])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Convergence records: `N, n, m, seed, sup_t_error, runtime_seconds`.
pub fn write_records_csv(mut w: impl Write, records: &[ConvergenceRecord]) -> Result<()> {
    writeln!(w, "N,n,m,seed,sup_t_error,runtime_seconds")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n_total, r.n, r.m, r.seed, r.sup_error, r.runtime_seconds
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Experiment summary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantsSummary {
    #[serde(rename = "R_r")]
    pub r_r: f64,
    #[serde(rename = "C_T")]
    pub c_t: f64,
    #[serde(rename = "D_r")]
    pub d_r: f64,
    #[serde(rename = "C_d_fitted")]
    pub c_d_fitted: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: serde_json::Value,
    pub records: Vec<ConvergenceRecord>,
    pub fit: Option<FitSummary>,
    pub bounds: Vec<BoundReport>,
    pub constants: Option<ConstantsSummary>,
}

pub fn summary_to_json(summary: &Summary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)?)
}
