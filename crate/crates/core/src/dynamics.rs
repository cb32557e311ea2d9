//! Integration of the nonexchangeable particle systems, the auxiliary system,
//! the delayed explicit Euler scheme and the Picard iteration on the flow
//! operator; assembly of empirical measure curves.

use rayon::prelude::*;

use crate::discretize::{AveragedField, Partition};
use crate::error::{Error, Result};
use crate::fields::{FieldKind, PairKernel, VectorField};
use crate::measures::{
    FibreView, FibredMeasure, LabelMarginal, MeasureView, Weights,
};
use crate::scalar::Scalar;
use crate::transport::{classical_w_product, fibred_w, fibred_w_torus};

/// Particle counts above which per-particle loops run on the rayon pool.
/// Work is split into disjoint chunks, so results are identical for any
/// thread count.
const PAR_THRESHOLD: usize = 8192;

// ---------------------------------------------------------------------------
// Time grids and integrators
// ---------------------------------------------------------------------------

/// Uniform time grid on `[0, T]` with `steps` intervals (`steps + 1` nodes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<S: Scalar> {
    pub t_end: S,
    pub steps: usize,
}

impl<S: Scalar> TimeGrid<S> {
    pub fn new(t_end: S, steps: usize) -> Result<Self> {
        if t_end <= S::zero() || steps == 0 {
            return Err(Error::Precondition("time grid needs T > 0 and steps >= 1".into()));
        }
        Ok(TimeGrid { t_end, steps })
    }

    pub fn dt(&self) -> S {
        self.t_end / S::from_usize(self.steps).unwrap()
    }

    pub fn node(&self, s: usize) -> S {
        self.t_end * S::from_usize(s).unwrap() / S::from_usize(self.steps).unwrap()
    }

    pub fn nodes(&self) -> impl Iterator<Item = S> + '_ {
        (0..=self.steps).map(move |s| self.node(s))
    }

    pub fn n_nodes(&self) -> usize {
        self.steps + 1
    }
}

/// Time-stepping method. Grid nodes are the stored states; `substeps`
/// internal steps are taken per grid interval, so the integration step is
/// `dt / substeps`.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorSpec {
    pub method: Method,
    pub substeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

impl IntegratorSpec {
    pub fn euler(substeps: usize) -> Self {
        IntegratorSpec { method: Method::Euler, substeps: substeps.max(1) }
    }

    pub fn rk4(substeps: usize) -> Self {
        IntegratorSpec { method: Method::Rk4, substeps: substeps.max(1) }
    }
}

// ---------------------------------------------------------------------------
// Trajectories and measure curves
// ---------------------------------------------------------------------------

/// Time-gridded particle states with label-cell assignments.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble<S: Scalar> {
    pub grid: TimeGrid<S>,
    /// `states[s]` holds the flat positions at node `s`, `len = N * dim`.
    pub states: Vec<Vec<S>>,
    /// Coarse cell index per particle.
    pub cells: Vec<usize>,
    pub marginal: LabelMarginal<S>,
    pub coarse: Partition<S>,
    pub per_cell: usize,
    pub dim: usize,
}

impl<S: Scalar> TrajectoryEnsemble<S> {
    pub fn n_particles(&self) -> usize {
        self.cells.len()
    }

    pub fn state(&self, s: usize) -> &[S] {
        &self.states[s]
    }

    /// Max per-particle Euclidean norm at a node.
    pub fn max_radius(&self, s: usize) -> S {
        max_particle_norm(&self.states[s], self.dim)
    }
}

fn max_particle_norm<S: Scalar>(state: &[S], dim: usize) -> S {
    let mut r = S::zero();
    for chunk in state.chunks_exact(dim) {
        r = r.max(crate::scalar::norm(chunk));
    }
    r
}

/// Time-indexed sequence of fibred measures sharing one marginal.
#[derive(Debug, Clone)]
pub struct MeasureCurve<S: Scalar> {
    pub grid: TimeGrid<S>,
    pub measures: Vec<FibredMeasure<S>>,
}

impl<S: Scalar> MeasureCurve<S> {
    /// The label marginal is invariant along every produced curve; verify it.
    pub fn marginal_invariant(&self) -> bool {
        let first = self.measures[0].marginal();
        self.measures
            .iter()
            .all(|m| m.marginal().approx_eq(first, S::tol(1e-12)))
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }
}

/// Metric used by [`curve_distance`].
#[derive(Debug, Clone, Copy)]
pub enum CurveMetric<S: Scalar> {
    FibredW1,
    ClassicalW1,
    /// Fibred `W_{π,1}` with the wrap-around ground metric (Kuramoto states).
    FibredW1Torus { period: S },
}

/// Per-node distances between two curves on a shared grid, and their max.
pub fn curve_distance<S: Scalar>(
    a: &MeasureCurve<S>,
    b: &MeasureCurve<S>,
    metric: CurveMetric<S>,
) -> Result<(S, Vec<S>)> {
    if a.grid.steps != b.grid.steps || (a.grid.t_end - b.grid.t_end).abs() > S::tol(1e-12) {
        return Err(Error::Precondition("curves live on different grids".into()));
    }
    let mut per_node = Vec::with_capacity(a.len());
    for (ma, mb) in a.measures.iter().zip(&b.measures) {
        let d = match metric {
            CurveMetric::FibredW1 => fibred_w(ma, mb, 1)?,
            CurveMetric::ClassicalW1 => classical_w_product(ma, mb, 1)?,
            CurveMetric::FibredW1Torus { period } => fibred_w_torus(ma, mb, period)?,
        };
        per_node.push(d);
    }
    let sup = per_node.iter().copied().fold(S::zero(), S::max);
    Ok((sup, per_node))
}

// ---------------------------------------------------------------------------
// Ensemble force evaluation
// ---------------------------------------------------------------------------

/// Precomputed per-fine-cell coefficient rows `c_{i,k} = mass_k · w̄(A_i, θ_k)`
/// against the coarse fibres; rows are deduplicated (step kernels share rows
/// across all fine cells inside one step).
struct Rows<S> {
    rows: Vec<Vec<S>>,
    row_of: Vec<usize>,
}

fn build_rows<S: Scalar>(
    kernel: &crate::fields::LabelKernel<S>,
    avg: &AveragedField<'_, S>,
    coarse: &Partition<S>,
) -> Rows<S> {
    let n = coarse.len();
    let fine_n = avg.partition().len();
    let mut rows: Vec<Vec<S>> = Vec::new();
    let mut row_of = Vec::with_capacity(fine_n);
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    for i in 0..fine_n {
        let mut row = vec![S::zero(); n];
        for (k, item) in row.iter_mut().enumerate() {
            let theta = coarse.reps()[k];
            let mut acc = S::zero();
            for &(omega, wt) in avg.cell_nodes(i) {
                acc = acc + wt * kernel.eval(omega, theta);
            }
            *item = coarse.masses()[k] * acc;
        }
        let key: Vec<u64> = row.iter().map(|v| v.to_f64().unwrap().to_bits()).collect();
        let idx = *index.entry(key).or_insert_with(|| {
            rows.push(row);
            rows.len() - 1
        });
        row_of.push(idx);
    }
    Rows { rows, row_of }
}

enum Plan<S: Scalar> {
    Zero,
    Sine { coupling: S, rows: Rows<S> },
    Difference { rows: Rows<S> },
    Linear { a_rows: Rows<S>, b_rows: Rows<S> },
    Generic,
}

/// Everything needed to evaluate all particle velocities at one stage.
struct EnsembleField<'a, S: Scalar> {
    avg: &'a AveragedField<'a, S>,
    coarse: &'a Partition<S>,
    /// fine-cell index per particle
    fine_of: &'a [usize],
    per_cell: usize,
    dim: usize,
    plan: Plan<S>,
}

impl<'a, S: Scalar> EnsembleField<'a, S> {
    fn new(
        field: &'a VectorField<S>,
        avg: &'a AveragedField<'a, S>,
        coarse: &'a Partition<S>,
        fine_of: &'a [usize],
        per_cell: usize,
    ) -> Self {
        let plan = match field.kind() {
            FieldKind::Zero => Plan::Zero,
            FieldKind::Graphon { w, psi: PairKernel::Sine { coupling } } => {
                Plan::Sine { coupling: *coupling, rows: build_rows(w, avg, coarse) }
            }
            FieldKind::Graphon { w, psi: PairKernel::Difference } => {
                Plan::Difference { rows: build_rows(w, avg, coarse) }
            }
            FieldKind::Linear { a, b } => Plan::Linear {
                a_rows: build_rows(a, avg, coarse),
                b_rows: build_rows(b, avg, coarse),
            },
            _ => Plan::Generic,
        };
        EnsembleField { avg, coarse, fine_of, per_cell, dim: field.dim(), plan }
    }

    /// Borrow the stage state as a fibred measure view (fibres = coarse
    /// cells, uniform point weights).
    fn view(&self, state: &'a [S]) -> MeasureView<'a, S> {
        let m = self.per_cell;
        let d = self.dim;
        let w = S::one() / S::from_usize(m).unwrap();
        MeasureView {
            dim: d,
            fibres: (0..self.coarse.len())
                .map(|k| FibreView {
                    rep: self.coarse.reps()[k],
                    mass: self.coarse.masses()[k],
                    xs: &state[k * m * d..(k + 1) * m * d],
                    ws: Weights::Uniform(w),
                })
                .collect(),
        }
    }

    /// Velocities of all particles at `(t, state)` into `out`.
    fn forces(&self, t: S, state: &[S], out: &mut [S]) -> Result<()> {
        let d = self.dim;
        let m = self.per_cell;
        let n = self.coarse.len();
        match &self.plan {
            Plan::Zero => out.iter_mut().for_each(|o| *o = S::zero()),
            Plan::Sine { coupling, rows } => {
                // per-coarse-cell trig statistics of the stage state
                let mut sin_k = vec![S::zero(); n];
                let mut cos_k = vec![S::zero(); n];
                let w = S::one() / S::from_usize(m).unwrap();
                for k in 0..n {
                    let (mut s_acc, mut c_acc) = (S::zero(), S::zero());
                    for &y in &state[k * m..(k + 1) * m] {
                        s_acc = s_acc + y.sin();
                        c_acc = c_acc + y.cos();
                    }
                    sin_k[k] = s_acc * w;
                    cos_k[k] = c_acc * w;
                }
                // per-row contractions
                let p: Vec<S> = rows
                    .rows
                    .iter()
                    .map(|row| row.iter().zip(&sin_k).map(|(&c, &s)| c * s).sum())
                    .collect();
                let q: Vec<S> = rows
                    .rows
                    .iter()
                    .map(|row| row.iter().zip(&cos_k).map(|(&c, &s)| c * s).sum())
                    .collect();
                let kk = *coupling;
                let fine_of = self.fine_of;
                let row_of = &rows.row_of;
                let apply = |(i, o): (usize, &mut S)| {
                    let r = row_of[fine_of[i]];
                    let x = state[i];
                    *o = kk * (x.cos() * p[r] - x.sin() * q[r]);
                };
                if out.len() >= PAR_THRESHOLD {
                    out.par_iter_mut().enumerate().for_each(|(i, o)| apply((i, o)));
                } else {
                    out.iter_mut().enumerate().for_each(|(i, o)| apply((i, o)));
                }
            }
            Plan::Difference { rows } => {
                let means = cell_means(state, n, m, d);
                // R1[r] = Σ_k c_k mean_k, R0[r] = Σ_k c_k
                let mut r1 = vec![S::zero(); rows.rows.len() * d];
                let mut r0 = vec![S::zero(); rows.rows.len()];
                for (r, row) in rows.rows.iter().enumerate() {
                    for k in 0..n {
                        r0[r] = r0[r] + row[k];
                        for c in 0..d {
                            r1[r * d + c] = r1[r * d + c] + row[k] * means[k * d + c];
                        }
                    }
                }
                for i in 0..state.len() / d {
                    let r = rows.row_of[self.fine_of[i]];
                    for c in 0..d {
                        out[i * d + c] = r1[r * d + c] - r0[r] * state[i * d + c];
                    }
                }
            }
            Plan::Linear { a_rows, b_rows } => {
                let means = cell_means(state, n, m, d);
                let a0: Vec<S> = a_rows
                    .rows
                    .iter()
                    .map(|row| row.iter().copied().sum())
                    .collect();
                let mut b1 = vec![S::zero(); b_rows.rows.len() * d];
                for (r, row) in b_rows.rows.iter().enumerate() {
                    for k in 0..n {
                        for c in 0..d {
                            b1[r * d + c] = b1[r * d + c] + row[k] * means[k * d + c];
                        }
                    }
                }
                for i in 0..state.len() / d {
                    let ra = a_rows.row_of[self.fine_of[i]];
                    let rb = b_rows.row_of[self.fine_of[i]];
                    for c in 0..d {
                        out[i * d + c] = a0[ra] * state[i * d + c] + b1[rb * d + c];
                    }
                }
            }
            Plan::Generic => {
                let view = self.view(state);
                let fine_of = self.fine_of;
                let avg = self.avg;
                let eval_one = |i: usize, o: &mut [S]| -> Result<()> {
                    avg.eval_cell(fine_of[i], t, &view, &state[i * d..(i + 1) * d], o)
                };
                if out.len() >= PAR_THRESHOLD {
                    let results: Result<Vec<()>> = out
                        .par_chunks_mut(d)
                        .enumerate()
                        .map(|(i, o)| eval_one(i, o))
                        .collect();
                    results?;
                } else {
                    for (i, o) in out.chunks_mut(d).enumerate() {
                        eval_one(i, o)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn cell_means<S: Scalar>(state: &[S], n: usize, m: usize, d: usize) -> Vec<S> {
    let w = S::one() / S::from_usize(m).unwrap();
    let mut means = vec![S::zero(); n * d];
    for k in 0..n {
        for j in 0..m {
            for c in 0..d {
                means[k * d + c] = means[k * d + c] + state[(k * m + j) * d + c];
            }
        }
        for c in 0..d {
            means[k * d + c] = means[k * d + c] * w;
        }
    }
    means
}

// ---------------------------------------------------------------------------
// Particle solvers
// ---------------------------------------------------------------------------

/// Solve the nonexchangeable particle system: particle `i` is driven by the
/// field averaged over its own fine cell, with the empirical measure rebuilt
/// from the stage state at every stage evaluation.
#[allow(clippy::too_many_arguments)]
pub fn solve_particles<S: Scalar>(
    field: &VectorField<S>,
    pi: &LabelMarginal<S>,
    fine: &Partition<S>,
    coarse: &Partition<S>,
    x0: &crate::discretize::InitialSample<S>,
    grid: TimeGrid<S>,
    spec: IntegratorSpec,
    quad: usize,
) -> Result<TrajectoryEnsemble<S>> {
    let n_particles = x0.cells.len();
    if fine.len() != n_particles {
        return Err(Error::Precondition(format!(
            "fine partition has {} cells for {} particles",
            fine.len(),
            n_particles
        )));
    }
    if n_particles != coarse.len() * x0.per_cell {
        return Err(Error::Precondition("N must equal n * m".into()));
    }
    if !fine.refines(coarse) {
        return Err(Error::Precondition("fine partition must refine the coarse one".into()));
    }
    let avg = AveragedField::new(field, pi, fine, quad)?;
    let fine_of: Vec<usize> = (0..n_particles).collect();
    let ens = EnsembleField::new(field, &avg, coarse, &fine_of, x0.per_cell);
    let states = integrate(field, &ens, &x0.positions, grid, spec)?;
    Ok(TrajectoryEnsemble {
        grid,
        states,
        cells: x0.cells.clone(),
        marginal: pi.clone(),
        coarse: coarse.clone(),
        per_cell: x0.per_cell,
        dim: x0.dim,
    })
}

/// Solve the auxiliary particle system: all particles of coarse cell `k`
/// share the cell field `v_k^n` (only `n` distinct fields).
pub fn solve_auxiliary<S: Scalar>(
    field: &VectorField<S>,
    pi: &LabelMarginal<S>,
    coarse: &Partition<S>,
    x0: &crate::discretize::InitialSample<S>,
    grid: TimeGrid<S>,
    spec: IntegratorSpec,
    quad: usize,
) -> Result<TrajectoryEnsemble<S>> {
    let n_particles = x0.cells.len();
    if n_particles != coarse.len() * x0.per_cell {
        return Err(Error::Precondition("N must equal n * m".into()));
    }
    let avg = AveragedField::new(field, pi, coarse, quad)?;
    let ens = EnsembleField::new(field, &avg, coarse, &x0.cells, x0.per_cell);
    let states = integrate(field, &ens, &x0.positions, grid, spec)?;
    Ok(TrajectoryEnsemble {
        grid,
        states,
        cells: x0.cells.clone(),
        marginal: pi.clone(),
        coarse: coarse.clone(),
        per_cell: x0.per_cell,
        dim: x0.dim,
    })
}

/// Shared stepping loop with blow-up detection at every stored node.
fn integrate<S: Scalar>(
    field: &VectorField<S>,
    ens: &EnsembleField<'_, S>,
    x0: &[S],
    grid: TimeGrid<S>,
    spec: IntegratorSpec,
) -> Result<Vec<Vec<S>>> {
    let dim = ens.dim;
    let r0 = max_particle_norm(x0, dim);
    let m_l1 = field.growth().m_l1(grid.t_end);
    // Hyp (CL) guarantees boundedness; overflow signals a model/config bug
    let blow_radius = ((r0 + m_l1) * (S::of(2.0) * m_l1).exp() + S::one()) * S::of(1e3);

    let h = grid.dt() / S::from_usize(spec.substeps).unwrap();
    let mut states = Vec::with_capacity(grid.n_nodes());
    states.push(x0.to_vec());
    let mut cur = x0.to_vec();
    let mut step_index = 0usize;
    let n = cur.len();
    let mut k1 = vec![S::zero(); n];
    let mut k2 = vec![S::zero(); n];
    let mut k3 = vec![S::zero(); n];
    let mut k4 = vec![S::zero(); n];
    let mut stage = vec![S::zero(); n];
    for node in 0..grid.steps {
        for sub in 0..spec.substeps {
            let t = grid.node(node) + h * S::from_usize(sub).unwrap();
            match spec.method {
                Method::Euler => {
                    ens.forces(t, &cur, &mut k1)?;
                    axpy(&mut cur, h, &k1);
                }
                Method::Rk4 => {
                    let half = h * S::of(0.5);
                    ens.forces(t, &cur, &mut k1)?;
                    stage_state(&mut stage, &cur, half, &k1);
                    ens.forces(t + half, &stage, &mut k2)?;
                    stage_state(&mut stage, &cur, half, &k2);
                    ens.forces(t + half, &stage, &mut k3)?;
                    stage_state(&mut stage, &cur, h, &k3);
                    ens.forces(t + h, &stage, &mut k4)?;
                    let sixth = h / S::of(6.0);
                    for i in 0..n {
                        cur[i] = cur[i]
                            + sixth * (k1[i] + S::of(2.0) * (k2[i] + k3[i]) + k4[i]);
                    }
                }
            }
            step_index += 1;
        }
        let r = max_particle_norm(&cur, dim);
        if !r.is_finite() || r > blow_radius {
            return Err(Error::BlowUp {
                step: step_index,
                detail: format!("ensemble radius {r} exceeded {blow_radius}"),
            });
        }
        states.push(cur.clone());
    }
    Ok(states)
}

fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

fn stage_state<S: Scalar>(out: &mut [S], base: &[S], a: S, k: &[S]) {
    for i in 0..out.len() {
        out[i] = base[i] + a * k[i];
    }
}

/// Assemble the empirical measure curve
/// `μ^{n,m}(t_s) = Σ_k π_{⌞Ω_k} × (1/m) Σ_ℓ δ_{x_{(k-1)m+ℓ}(t_s)}`.
pub fn empirical_curve<S: Scalar>(traj: &TrajectoryEnsemble<S>) -> Result<MeasureCurve<S>> {
    let m = traj.per_cell;
    let d = traj.dim;
    let w = S::one() / S::from_usize(m).unwrap();
    let mut measures = Vec::with_capacity(traj.states.len());
    for state in &traj.states {
        let fibres = (0..traj.coarse.len())
            .map(|k| {
                let pts = (0..m)
                    .map(|j| {
                        let i = k * m + j;
                        (state[i * d..(i + 1) * d].to_vec(), w)
                    })
                    .collect();
                crate::measures::Fibre::new(
                    traj.coarse.cells()[k],
                    traj.coarse.masses()[k],
                    pts,
                    d,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        measures.push(FibredMeasure::new(traj.marginal.clone(), d, fibres)?);
    }
    Ok(MeasureCurve { grid: traj.grid, measures })
}

// ---------------------------------------------------------------------------
// Measure-level schemes: delayed Euler and the flow fixed-point
// ---------------------------------------------------------------------------

/// Support-point bookkeeping for measure-level schemes: positions move,
/// weights and cells never do.
struct SupportState<S: Scalar> {
    reps: Vec<S>,
    masses: Vec<S>,
    weights: Vec<Vec<S>>,
    /// point-index offset per fibre
    offsets: Vec<usize>,
    n_points: usize,
    dim: usize,
}

impl<S: Scalar> SupportState<S> {
    fn of(mu0: &FibredMeasure<S>) -> (Self, Vec<S>) {
        let dim = mu0.dim();
        let mut reps = Vec::new();
        let mut masses = Vec::new();
        let mut weights = Vec::new();
        let mut offsets = Vec::new();
        let mut positions = Vec::new();
        let mut count = 0usize;
        for fibre in mu0.fibres() {
            reps.push(mu0.marginal().representative(&fibre.cell));
            masses.push(fibre.weight);
            weights.push(fibre.weights().to_vec());
            offsets.push(count);
            count += fibre.len();
            positions.extend_from_slice(fibre.coords());
        }
        (
            SupportState { reps, masses, weights, offsets, n_points: count, dim },
            positions,
        )
    }

    fn view<'a>(&'a self, positions: &'a [S]) -> MeasureView<'a, S> {
        let d = self.dim;
        MeasureView {
            dim: d,
            fibres: (0..self.reps.len())
                .map(|k| {
                    let lo = self.offsets[k] * d;
                    let hi = if k + 1 < self.offsets.len() {
                        self.offsets[k + 1] * d
                    } else {
                        self.n_points * d
                    };
                    FibreView {
                        rep: self.reps[k],
                        mass: self.masses[k],
                        xs: &positions[lo..hi],
                        ws: Weights::Slice(&self.weights[k]),
                    }
                })
                .collect(),
        }
    }

    /// Fibre index of a flat point index.
    fn fibre_of(&self, point: usize) -> usize {
        match self.offsets.binary_search(&point) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    }

    /// Rebuild a fibred measure from transported positions.
    fn measure(
        &self,
        mu0: &FibredMeasure<S>,
        positions: &[S],
    ) -> Result<FibredMeasure<S>> {
        let d = self.dim;
        let fibres = mu0
            .fibres()
            .iter()
            .enumerate()
            .map(|(k, fibre)| {
                let lo = self.offsets[k];
                let pts = (0..fibre.len())
                    .map(|j| {
                        let i = lo + j;
                        (positions[i * d..(i + 1) * d].to_vec(), self.weights[k][j])
                    })
                    .collect();
                crate::measures::Fibre::new(fibre.cell, fibre.weight, pts, d)
            })
            .collect::<Result<Vec<_>>>()?;
        FibredMeasure::new(mu0.marginal().clone(), d, fibres)
    }
}

/// Semi-discrete existence scheme: transport the support of `μ⁰` by the field
/// frozen at the delayed measure `μ(t − T/n_delay)` (with `μ(s) = μ⁰` for
/// `s ≤ 0`), sub-stepped with explicit Euler inside each delay window.
pub fn delayed_euler_curve<S: Scalar>(
    field: &VectorField<S>,
    mu0: &FibredMeasure<S>,
    grid: TimeGrid<S>,
    n_delay: usize,
    substeps: usize,
) -> Result<MeasureCurve<S>> {
    if n_delay == 0 {
        return Err(Error::Precondition("n_delay must be >= 1".into()));
    }
    let substeps = substeps.max(1);
    let total = grid.steps * substeps;
    if !total.is_multiple_of(n_delay) {
        return Err(Error::Precondition(format!(
            "delay windows must align with the step grid: {total} steps vs n_delay {n_delay}"
        )));
    }
    let lag = total / n_delay;
    let (support, x0) = SupportState::of(mu0);
    let d = support.dim;
    let h = grid.t_end / S::from_usize(total).unwrap();
    let r0 = mu0.support_radius();
    let m_l1 = field.growth().m_l1(grid.t_end);
    let blow_radius = ((r0 + m_l1) * (S::of(2.0) * m_l1).exp() + S::one()) * S::of(1e3);

    let mut history: Vec<Vec<S>> = Vec::with_capacity(total + 1);
    history.push(x0);
    let mut vel = vec![S::zero(); support.n_points * d];
    for j in 0..total {
        let t = h * S::from_usize(j).unwrap();
        let delayed = &history[j.saturating_sub(lag)];
        let view = support.view(delayed);
        let cur = &history[j];
        for i in 0..support.n_points {
            let omega = support.reps[support.fibre_of(i)];
            let (x, v) = (&cur[i * d..(i + 1) * d], &mut vel[i * d..(i + 1) * d]);
            field.eval(t, &view, omega, x, v)?;
        }
        let mut next = cur.clone();
        axpy(&mut next, h, &vel);
        let r = max_particle_norm(&next, d);
        if !r.is_finite() || r > blow_radius {
            return Err(Error::BlowUp {
                step: j + 1,
                detail: format!("support radius {r} exceeded {blow_radius}"),
            });
        }
        history.push(next);
    }
    let measures = (0..=grid.steps)
        .map(|s| support.measure(mu0, &history[s * substeps]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasureCurve { grid, measures })
}

/// Convergence diagnostics of the Picard iteration.
#[derive(Debug, Clone)]
pub struct FlowTable<S: Scalar> {
    /// Weighted-sup residuals after each Picard sweep.
    pub residuals: Vec<S>,
    pub iterations: usize,
}

impl<S: Scalar> FlowTable<S> {
    /// Successive residual ratios (contraction factors).
    pub fn contraction_ratios(&self) -> Vec<S> {
        self.residuals
            .windows(2)
            .filter(|w| w[0] > S::zero())
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Picard iteration on the flow operator: integrate the characteristics of
/// every support point against the pushforward curve of the previous iterate,
/// until the weighted-exponential sup distance between sweeps drops below
/// `tol`. Returns the pushforward curve and the iteration table.
pub fn flow_picard<S: Scalar>(
    field: &VectorField<S>,
    mu0: &FibredMeasure<S>,
    grid: TimeGrid<S>,
    spec: IntegratorSpec,
    tol: S,
    max_iter: usize,
) -> Result<(MeasureCurve<S>, FlowTable<S>)> {
    let (support, x0) = SupportState::of(mu0);
    let d = support.dim;
    let total = grid.steps * spec.substeps;
    let h = grid.t_end / S::from_usize(total).unwrap();
    let r0 = mu0.support_radius();
    let m_l1 = field.growth().m_l1(grid.t_end);
    let r_big = (r0 + m_l1) * (S::of(2.0) * m_l1).exp();
    let lip = field.growth().l_r(r_big + S::one());

    // iterate 0: constant-in-time identity flow
    let mut prev: Vec<Vec<S>> = vec![x0.clone(); total + 1];
    let mut residuals = Vec::new();
    let mut iterations = 0usize;
    let max_iter = max_iter.max(1);
    loop {
        iterations += 1;
        let next = picard_sweep(field, &support, &x0, &prev, grid, spec, h)?;
        // weighted sup distance   exp(-2∫₀ᵗ L) |Φ' - Φ|
        let mut res = S::zero();
        for (j, (a, b)) in next.iter().zip(&prev).enumerate() {
            let t = h * S::from_usize(j).unwrap();
            let weight = (-S::of(2.0) * lip.integral(S::zero(), t)).exp();
            for i in 0..support.n_points {
                let dist = crate::scalar::dist(&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d]);
                res = res.max(weight * dist);
            }
        }
        residuals.push(res);
        prev = next;
        if res < tol || (field.is_mu_independent() && iterations >= 1) {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: res.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let measures = (0..=grid.steps)
        .map(|s| support.measure(mu0, &prev[s * spec.substeps]))
        .collect::<Result<Vec<_>>>()?;
    Ok((MeasureCurve { grid, measures }, FlowTable { residuals, iterations }))
}

/// One sweep of the Λ operator: integrate all characteristics against the
/// frozen iterate curve `iter` (stage measures interpolate linearly between
/// the iterate's internal nodes).
fn picard_sweep<S: Scalar>(
    field: &VectorField<S>,
    support: &SupportState<S>,
    x0: &[S],
    iter: &[Vec<S>],
    grid: TimeGrid<S>,
    spec: IntegratorSpec,
    h: S,
) -> Result<Vec<Vec<S>>> {
    let d = support.dim;
    let total = grid.steps * spec.substeps;
    let n = support.n_points * d;
    let mut states = Vec::with_capacity(total + 1);
    states.push(x0.to_vec());
    let mut cur = x0.to_vec();
    let mut scratch = vec![S::zero(); n];
    let mut k1 = vec![S::zero(); n];
    let mut k2 = vec![S::zero(); n];
    let mut k3 = vec![S::zero(); n];
    let mut k4 = vec![S::zero(); n];
    let mut stage = vec![S::zero(); n];

    // interpolate the frozen iterate's support positions at time index t/h
    let interpolate_iterate = |alpha_idx: S, scratch: &mut [S]| {
        let j = alpha_idx.floor().to_usize().unwrap_or(0).min(total - 1);
        let frac = alpha_idx - S::from_usize(j).unwrap();
        let (a, b) = (&iter[j], &iter[j + 1]);
        for (s, (&ai, &bi)) in scratch.iter_mut().zip(a.iter().zip(b)) {
            *s = ai + (bi - ai) * frac;
        }
    };

    let eval_all = |t: S,
                    state: &[S],
                    out: &mut [S],
                    scratch: &mut Vec<S>|
     -> Result<()> {
        interpolate_iterate(t / h, scratch);
        let view = support.view(scratch);
        for i in 0..support.n_points {
            let omega = support.reps[support.fibre_of(i)];
            field.eval(t, &view, omega, &state[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d])?;
        }
        Ok(())
    };

    for j in 0..total {
        let t = h * S::from_usize(j).unwrap();
        match spec.method {
            Method::Euler => {
                eval_all(t, &cur, &mut k1, &mut scratch)?;
                axpy(&mut cur, h, &k1);
            }
            Method::Rk4 => {
                let half = h * S::of(0.5);
                eval_all(t, &cur, &mut k1, &mut scratch)?;
                stage_state(&mut stage, &cur, half, &k1);
                eval_all(t + half, &stage, &mut k2, &mut scratch)?;
                stage_state(&mut stage, &cur, half, &k2);
                eval_all(t + half, &stage, &mut k3, &mut scratch)?;
                stage_state(&mut stage, &cur, h, &k3);
                eval_all(t + h, &stage, &mut k4, &mut scratch)?;
                let sixth = h / S::of(6.0);
                for i in 0..n {
                    cur[i] = cur[i] + sixth * (k1[i] + S::of(2.0) * (k2[i] + k3[i]) + k4[i]);
                }
            }
        }
        if !cur.iter().all(|c| c.is_finite()) {
            return Err(Error::BlowUp { step: j + 1, detail: "non-finite characteristic".into() });
        }
        states.push(cur.clone());
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{equipartition, refine, sample_initial};
    use crate::error::Error;
    use crate::fields::{
        graphon_field, kuramoto_field, linear_field, local_field, zero_field, GrowthProfile,
        LabelKernel, PairKernel, TimeProfile,
    };
    use crate::measures::{Cell, DiscreteMeasure};

    fn uniform_pi() -> LabelMarginal<f64> {
        LabelMarginal::uniform(1024)
    }

    fn product_measure(pi: &LabelMarginal<f64>, pts: Vec<(f64, f64)>) -> FibredMeasure<f64> {
        FibredMeasure::product(
            pi.clone(),
            vec![Cell::interval(0.0, 1.0)],
            &DiscreteMeasure::from_scalars(pts).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_field_keeps_particles_still() {
        let pi = uniform_pi();
        let coarse = equipartition(&pi, 2).unwrap();
        let fine = refine(&pi, &coarse, 3).unwrap();
        let mu0 = product_measure(&pi, vec![(0.5, 0.5), (-1.0, 0.5)]);
        let x0 = sample_initial(&mu0, &coarse, 3, 11).unwrap();
        let field = zero_field(1);
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let traj =
            solve_particles(&field, &pi, &fine, &coarse, &x0, grid, IntegratorSpec::rk4(2), 4)
                .unwrap();
        for s in 0..traj.states.len() {
            assert_eq!(traj.states[s], traj.states[0]);
        }
    }

    #[test]
    fn linear_field_barycentre_growth() {
        // b₀ constant: ensemble barycentre follows X̄(0) e^{b₀ t}
        let pi = uniform_pi();
        let b0 = 0.7;
        let coarse = equipartition(&pi, 4).unwrap();
        let fine = refine(&pi, &coarse, 4).unwrap();
        let mu0 = product_measure(&pi, vec![(0.1, 0.5), (0.7, 0.5)]);
        let x0 = sample_initial(&mu0, &coarse, 4, 3).unwrap();
        let field = linear_field(LabelKernel::Constant(0.0), LabelKernel::Constant(b0), 1);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let traj =
            solve_particles(&field, &pi, &fine, &coarse, &x0, grid, IntegratorSpec::rk4(5), 4)
                .unwrap();
        let n = traj.n_particles() as f64;
        let mean0: f64 = traj.states[0].iter().sum::<f64>() / n;
        for (s, t) in grid.nodes().enumerate() {
            let mean: f64 = traj.states[s].iter().sum::<f64>() / n;
            let expect = mean0 * (b0 * t).exp();
            assert!(
                (mean - expect).abs() < 1e-8,
                "t={t}: barycentre {mean} vs {expect}"
            );
        }
    }

    #[test]
    fn kuramoto_antipodal_clusters_are_stationary() {
        let pi = uniform_pi();
        let coarse = equipartition(&pi, 2).unwrap();
        let fine = refine(&pi, &coarse, 4).unwrap();
        // cluster at phase 0 on [0,½), at π on [½,1)
        let fibres = vec![
            crate::measures::Fibre::new(Cell::interval(0.0, 0.5), 0.5, vec![(vec![0.0], 1.0)], 1)
                .unwrap(),
            crate::measures::Fibre::new(
                Cell::interval(0.5, 1.0),
                0.5,
                vec![(vec![std::f64::consts::PI], 1.0)],
                1,
            )
            .unwrap(),
        ];
        let mu0 = FibredMeasure::new(pi.clone(), 1, fibres).unwrap();
        let x0 = sample_initial(&mu0, &coarse, 4, 5).unwrap();
        let field = kuramoto_field(1.0, LabelKernel::Constant(1.0));
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let traj =
            solve_particles(&field, &pi, &fine, &coarse, &x0, grid, IntegratorSpec::rk4(4), 4)
                .unwrap();
        for s in 0..traj.states.len() {
            for i in 0..traj.n_particles() {
                assert!((traj.states[s][i] - traj.states[0][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn auxiliary_coincides_when_m_is_one() {
        // n = N (m = 1): auxiliary and primary systems are definitionally equal
        let pi = uniform_pi();
        let coarse = equipartition(&pi, 6).unwrap();
        let mu0 = product_measure(&pi, vec![(0.2, 0.25), (1.2, 0.75)]);
        let x0 = sample_initial(&mu0, &coarse, 1, 17).unwrap();
        let w = LabelKernel::Callback { f: std::sync::Arc::new(|o: f64, t: f64| 1.0 + 0.5 * o * t), sup: 1.5 };
        let field = kuramoto_field(0.8, w);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let a = solve_particles(
            &field, &pi, &coarse, &coarse, &x0, grid, IntegratorSpec::rk4(2), 6,
        )
        .unwrap();
        let b = solve_auxiliary(&field, &pi, &coarse, &x0, grid, IntegratorSpec::rk4(2), 6).unwrap();
        for s in 0..a.states.len() {
            for i in 0..a.n_particles() {
                assert!((a.states[s][i] - b.states[s][i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn auxiliary_matches_primary_for_omega_free_field() {
        // ω-independent field: averaging changes nothing, any (n, m) agrees
        let pi = uniform_pi();
        let coarse = equipartition(&pi, 3).unwrap();
        let fine = refine(&pi, &coarse, 5).unwrap();
        let mu0 = product_measure(&pi, vec![(-0.5, 0.5), (0.9, 0.5)]);
        let x0 = sample_initial(&mu0, &coarse, 5, 23).unwrap();
        let field = graphon_field(LabelKernel::Constant(1.0), PairKernel::Difference, 1);
        let grid = TimeGrid::new(1.5, 10).unwrap();
        let a = solve_particles(&field, &pi, &fine, &coarse, &x0, grid, IntegratorSpec::rk4(3), 4)
            .unwrap();
        let b = solve_auxiliary(&field, &pi, &coarse, &x0, grid, IntegratorSpec::rk4(3), 4).unwrap();
        for s in 0..a.states.len() {
            for i in 0..a.n_particles() {
                assert!((a.states[s][i] - b.states[s][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_graphon_aligned_cells_match_primary() {
        // kernel steps aligned with the coarse cells: v_k^n is exact, and the
        // fine averages coincide with the coarse ones
        let pi = uniform_pi();
        let coarse = equipartition(&pi, 4).unwrap();
        let fine = refine(&pi, &coarse, 3).unwrap();
        let steps = equipartition(&pi, 4).unwrap();
        let vals: Vec<f64> = (0..16).map(|i| 0.2 + 0.1 * (i as f64)).collect();
        let w = LabelKernel::step(steps, vals).unwrap();
        let field = kuramoto_field(1.0, w);
        let mu0 = product_measure(&pi, vec![(0.3, 0.4), (2.1, 0.6)]);
        let x0 = sample_initial(&mu0, &coarse, 3, 31).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let a = solve_particles(&field, &pi, &fine, &coarse, &x0, grid, IntegratorSpec::rk4(2), 4)
            .unwrap();
        let b = solve_auxiliary(&field, &pi, &coarse, &x0, grid, IntegratorSpec::rk4(2), 4).unwrap();
        for s in 0..a.states.len() {
            for i in 0..a.n_particles() {
                assert!(
                    (a.states[s][i] - b.states[s][i]).abs() < 1e-10,
                    "node {s} particle {i}"
                );
            }
        }
    }

    #[test]
    fn empirical_curve_preserves_marginal_and_mass() {
        let pi = uniform_pi();
        let coarse = equipartition(&pi, 3).unwrap();
        let fine = refine(&pi, &coarse, 2).unwrap();
        let mu0 = product_measure(&pi, vec![(0.0, 0.5), (1.0, 0.5)]);
        let x0 = sample_initial(&mu0, &coarse, 2, 3).unwrap();
        let field = linear_field(LabelKernel::Constant(-1.0), LabelKernel::Constant(0.0), 1);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let traj =
            solve_particles(&field, &pi, &fine, &coarse, &x0, grid, IntegratorSpec::rk4(2), 4)
                .unwrap();
        let curve = empirical_curve(&traj).unwrap();
        assert!(curve.marginal_invariant());
        for m in &curve.measures {
            m.validate().unwrap();
        }
        // duplicated particles merge with accumulated weight
        let f0 = &curve.measures[0].fibres()[0];
        let total: f64 = f0.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delayed_euler_zero_field_constant() {
        let pi = uniform_pi();
        let mu0 = product_measure(&pi, vec![(0.4, 0.3), (-0.2, 0.7)]);
        let field = zero_field(1);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let curve = delayed_euler_curve(&field, &mu0, grid, 4, 2).unwrap();
        for m in &curve.measures {
            assert!((crate::transport::fibred_w(m, &curve.measures[0], 1).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn delayed_euler_linear_barycentre_first_order() {
        let pi = uniform_pi();
        let b0 = 0.9;
        let mu0 = product_measure(&pi, vec![(0.5, 0.5), (1.5, 0.5)]);
        let field = linear_field(LabelKernel::Constant(0.0), LabelKernel::Constant(b0), 1);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let mut errors = Vec::new();
        for (n_delay, substeps) in [(4usize, 5usize), (8, 10), (16, 20)] {
            let curve = delayed_euler_curve(&field, &mu0, grid, n_delay, substeps).unwrap();
            let last = curve.measures.last().unwrap();
            let bary = last.barycentre()[0];
            let expect = 1.0 * (b0_l(b0)).exp();
            errors.push((bary - expect).abs());
        }
        // refining both the delay and the step roughly halves the error
        assert!(errors[1] < errors[0] * 0.7, "{errors:?}");
        assert!(errors[2] < errors[1] * 0.7, "{errors:?}");

        fn b0_l(b0: f64) -> f64 {
            b0
        }
    }

    #[test]
    fn delayed_euler_product_preserved_for_omega_free_field() {
        // ω-independent field + product initial datum: fibres stay identical
        let pi = uniform_pi();
        let rho = DiscreteMeasure::from_scalars(vec![(0.1, 0.5), (0.8, 0.5)]).unwrap();
        let cells = equipartition(&pi, 4).unwrap().cells().to_vec();
        let mu0 = FibredMeasure::product(pi.clone(), cells, &rho).unwrap();
        let field = graphon_field(LabelKernel::Constant(1.0), PairKernel::Difference, 1);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let curve = delayed_euler_curve(&field, &mu0, grid, 5, 2).unwrap();
        for m in &curve.measures {
            let f0 = &m.fibres()[0];
            for f in m.fibres().iter().skip(1) {
                assert_eq!(f0.coords(), f.coords());
                assert_eq!(f0.weights(), f.weights());
            }
        }
    }

    #[test]
    fn picard_local_field_converges_immediately() {
        let pi = uniform_pi();
        let mu0 = product_measure(&pi, vec![(0.0, 0.5), (1.0, 0.5)]);
        let growth = GrowthProfile::uniform(TimeProfile::Constant(1.0), TimeProfile::Constant(0.0));
        let field = local_field(
            |_t: f64, _omega: f64, _x: &[f64], out: &mut [f64]| out[0] = 1.0,
            1,
            growth,
        );
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let (curve, table) =
            flow_picard(&field, &mu0, grid, IntegratorSpec::rk4(2), 1e-10, 20).unwrap();
        assert_eq!(table.iterations, 1);
        // ẋ = 1 transported exactly
        let last = curve.measures.last().unwrap();
        let b = last.barycentre()[0];
        assert!((b - 1.5).abs() < 1e-12);
    }

    #[test]
    fn picard_linear_field_matches_closed_form() {
        let pi = uniform_pi();
        let b0 = 0.7;
        let mu0 = product_measure(&pi, vec![(0.1, 0.5), (0.7, 0.5)]);
        let field = linear_field(LabelKernel::Constant(0.0), LabelKernel::Constant(b0), 1);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let (curve, table) =
            flow_picard(&field, &mu0, grid, IntegratorSpec::rk4(4), 1e-10, 40).unwrap();
        // stage measures interpolate the frozen iterate, so accuracy is
        // Δt-order (here Δt = 1/200)
        let b = curve.measures.last().unwrap().barycentre()[0];
        let expect = 0.4 * b0.exp();
        assert!((b - expect).abs() < 5e-3, "{b} vs {expect}");
        assert!((b - expect).abs() < 1e-5, "{b} vs {expect}");
        // Banach contraction: residuals decay geometrically
        let ratios = table.contraction_ratios();
        assert!(!ratios.is_empty());
        for r in &ratios {
            assert!(*r <= 0.75, "contraction ratio {r}");
        }
    }

    #[test]
    fn picard_one_point_fibres_stay_one_point() {
        let pi = uniform_pi();
        let cells = equipartition(&pi, 5).unwrap();
        let fibres = cells
            .cells()
            .iter()
            .enumerate()
            .map(|(k, &cell)| {
                crate::measures::Fibre::new(cell, 0.2, vec![(vec![0.2 * k as f64], 1.0)], 1)
                    .unwrap()
            })
            .collect();
        let mu0 = FibredMeasure::new(pi.clone(), 1, fibres).unwrap();
        let field = kuramoto_field(0.6, LabelKernel::Constant(1.0));
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let (curve, _) =
            flow_picard(&field, &mu0, grid, IntegratorSpec::rk4(2), 1e-9, 40).unwrap();
        for m in &curve.measures {
            for f in m.fibres() {
                assert_eq!(f.len(), 1);
            }
        }
    }

    #[test]
    fn picard_reports_no_convergence() {
        let pi = uniform_pi();
        let mu0 = product_measure(&pi, vec![(0.3, 0.5), (1.1, 0.5)]);
        let field = kuramoto_field(1.5, LabelKernel::Constant(1.0));
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let err = flow_picard(&field, &mu0, grid, IntegratorSpec::rk4(2), 1e-14, 1).unwrap_err();
        match err {
            Error::NoConvergence { iterations, residual } => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn curve_distance_cases() {
        let pi = uniform_pi();
        let mu0 = product_measure(&pi, vec![(0.0, 0.5), (1.0, 0.5)]);
        let field = zero_field(1);
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let a = delayed_euler_curve(&field, &mu0, grid, 5, 1).unwrap();
        let (sup, per_node) = curve_distance(&a, &a, CurveMetric::FibredW1).unwrap();
        assert_eq!(sup, 0.0);
        assert!(per_node.iter().all(|&d| d == 0.0));

        // shifted copies: distance h at every node
        let h = 0.35;
        let shifted = MeasureCurve {
            grid,
            measures: a
                .measures
                .iter()
                .map(|m| m.map_points(|x| vec![x[0] + h]).unwrap())
                .collect(),
        };
        let (sup, per_node) = curve_distance(&a, &shifted, CurveMetric::FibredW1).unwrap();
        assert!((sup - h).abs() < 1e-12);
        for d in per_node {
            assert!((d - h).abs() < 1e-12);
        }
    }

    #[test]
    fn blow_up_is_detected() {
        let pi = uniform_pi();
        let mu0 = product_measure(&pi, vec![(1.0, 1.0)]);
        // exponential runaway disguised under a tiny declared growth bound
        let growth = GrowthProfile::uniform(TimeProfile::Constant(0.01), TimeProfile::Constant(0.0));
        let field = local_field(
            |_t: f64, _omega: f64, x: &[f64], out: &mut [f64]| out[0] = 100.0 * x[0],
            1,
            growth,
        );
        let coarse = equipartition(&pi, 1).unwrap();
        let x0 = sample_initial(&mu0, &coarse, 4, 1).unwrap();
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let err = solve_particles(
            &field,
            &pi,
            &refine(&pi, &coarse, 4).unwrap(),
            &coarse,
            &x0,
            grid,
            IntegratorSpec::rk4(1),
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }
}
