//! Canonical equipartitions of `(Ω,π)`, cell-averaged fields, i.i.d. initial
//! sampling and bounded-variation estimation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::measures::{Cell, FibredMeasure, LabelMarginal, MeasureView, WEIGHT_TOL};
use crate::scalar::{splitmix64, Scalar};

/// An ordered partition of `supp(π)` into label cells with their π-masses.
#[derive(Debug, Clone)]
pub struct Partition<S: Scalar> {
    cells: Vec<Cell<S>>,
    masses: Vec<S>,
    reps: Vec<S>,
}

impl<S: Scalar> Partition<S> {
    /// Build a partition from explicit cells; masses and representatives are
    /// computed from the marginal.
    pub fn from_cells(marginal: &LabelMarginal<S>, cells: Vec<Cell<S>>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Precondition("partition needs at least one cell".into()));
        }
        let masses: Vec<S> = cells.iter().map(|c| marginal.mass(c)).collect();
        let total: S = masses.iter().copied().sum();
        if (total - S::one()).abs() > S::tol(1e-9) {
            return Err(Error::Precondition(format!(
                "partition cells carry total mass {total}, expected 1"
            )));
        }
        let reps = cells.iter().map(|c| marginal.representative(c)).collect();
        Ok(Partition { cells, masses, reps })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell<S>] {
        &self.cells
    }

    pub fn masses(&self) -> &[S] {
        &self.masses
    }

    /// Cell representatives (π-mass midpoints / atom positions).
    pub fn reps(&self) -> &[S] {
        &self.reps
    }

    /// Index of the cell containing a label.
    pub fn locate(&self, omega: S) -> Option<usize> {
        self.cells.iter().position(|c| c.contains(omega))
    }

    /// Check that every cell of `self` lies inside a single cell of `coarse`.
    pub fn refines(&self, coarse: &Partition<S>) -> bool {
        self.cells.iter().all(|fine| {
            coarse
                .cells
                .iter()
                .any(|c| fine.intersect(c).is_some_and(|i| cells_eq(&i, fine)))
        })
    }
}

fn cells_eq<S: Scalar>(a: &Cell<S>, b: &Cell<S>) -> bool {
    let tol = S::tol(WEIGHT_TOL);
    match (a, b) {
        (Cell::Interval { a: a0, b: b0 }, Cell::Interval { a: a1, b: b1 }) => {
            (*a0 - *a1).abs() <= tol && (*b0 - *b1).abs() <= tol
        }
        (Cell::Atom { omega: o0 }, Cell::Atom { omega: o1 }) => (*o0 - *o1).abs() <= tol,
        _ => false,
    }
}

/// Canonical equipartition `Ω_i^N = [F⁻¹((i-1)/N), F⁻¹(i/N))` of a nonatomic
/// marginal; every cell carries π-mass `1/N`.
pub fn equipartition<S: Scalar>(pi: &LabelMarginal<S>, n: usize) -> Result<Partition<S>> {
    if n == 0 {
        return Err(Error::Precondition("equipartition needs N >= 1".into()));
    }
    if pi.is_atomic() {
        return Err(Error::NonatomicRequired(
            "equipartition is defined for CDF-form (nonatomic) marginals".into(),
        ));
    }
    let nn = S::from_usize(n).unwrap();
    let mut bounds = Vec::with_capacity(n + 1);
    for i in 0..=n {
        bounds.push(pi.quantile(S::from_usize(i).unwrap() / nn)?);
    }
    bounds[0] = S::zero();
    bounds[n] = S::one();
    let cells = (0..n)
        .map(|i| Cell::interval(bounds[i], bounds[i + 1]))
        .collect();
    Partition::from_cells(pi, cells)
}

/// Split each cell of `coarse` into `factor` equal-π-mass subcells; children
/// tile their parent exactly.
pub fn refine<S: Scalar>(
    pi: &LabelMarginal<S>,
    coarse: &Partition<S>,
    factor: usize,
) -> Result<Partition<S>> {
    if factor == 0 {
        return Err(Error::Precondition("refinement factor must be >= 1".into()));
    }
    if pi.is_atomic() {
        return Err(Error::NonatomicRequired(
            "refinement by mass splitting needs a CDF-form marginal".into(),
        ));
    }
    let mut cells = Vec::with_capacity(coarse.len() * factor);
    for cell in coarse.cells() {
        let Cell::Interval { a, b } = *cell else {
            return Err(Error::NonatomicRequired("cannot split an atom cell".into()));
        };
        let qa = pi.cdf_at(a);
        let qb = pi.cdf_at(b);
        let mut lo = a;
        for j in 1..=factor {
            let hi = if j == factor {
                b
            } else {
                let frac = S::from_usize(j).unwrap() / S::from_usize(factor).unwrap();
                pi.quantile(qa + (qb - qa) * frac)?
            };
            cells.push(Cell::interval(lo, hi));
            lo = hi;
        }
    }
    Partition::from_cells(pi, cells)
}

// ---------------------------------------------------------------------------
// Field averaging
// ---------------------------------------------------------------------------

/// The family of cell-averaged fields `v_i^N(t,μ,x) = ⨍_{Ω_i^N} v(t,μ,ω,x) dπ(ω)`.
///
/// Averages use `quad`-node quadrature at π-quantile nodes (midpoint rule in
/// mass coordinates), exact for ω-constant integrands; fields that are
/// piecewise-constant in ω on a known partition are averaged exactly with
/// overlap weights instead.
pub struct AveragedField<'f, S: Scalar> {
    field: &'f VectorField<S>,
    part: Partition<S>,
    /// per cell: (ω node, weight) pairs with weights summing to 1
    nodes: Vec<Vec<(S, S)>>,
}

impl<'f, S: Scalar> AveragedField<'f, S> {
    pub fn new(
        field: &'f VectorField<S>,
        pi: &LabelMarginal<S>,
        part: &Partition<S>,
        quad: usize,
    ) -> Result<Self> {
        if quad == 0 {
            return Err(Error::Precondition("quadrature needs at least one node".into()));
        }
        let mut nodes = Vec::with_capacity(part.len());
        for (cell, (&mass, &rep)) in part
            .cells()
            .iter()
            .zip(part.masses().iter().zip(part.reps()))
        {
            if let Some(steps) = field.omega_steps() {
                // exact cell averaging over the field's own ω-steps
                let mut cell_nodes = Vec::new();
                for step_cell in steps.cells() {
                    if let Some(inter) = cell.intersect(step_cell) {
                        let overlap = pi.mass(&inter);
                        if overlap > S::tol(WEIGHT_TOL) {
                            cell_nodes.push((pi.representative(&inter), overlap / mass));
                        }
                    }
                }
                if cell_nodes.is_empty() {
                    cell_nodes.push((rep, S::one()));
                }
                nodes.push(cell_nodes);
            } else {
                match cell {
                    Cell::Atom { omega } => nodes.push(vec![(*omega, S::one())]),
                    Cell::Interval { a, b } => {
                        let qa = pi.cdf_at(*a);
                        let qb = pi.cdf_at(*b);
                        let q = S::from_usize(quad).unwrap();
                        let w = S::one() / q;
                        let mut cell_nodes = Vec::with_capacity(quad);
                        for l in 0..quad {
                            let frac = (S::from_usize(l).unwrap() + S::of(0.5)) / q;
                            cell_nodes.push((pi.quantile(qa + (qb - qa) * frac)?, w));
                        }
                        nodes.push(cell_nodes);
                    }
                }
            }
        }
        Ok(AveragedField { field, part: part.clone(), nodes })
    }

    pub fn partition(&self) -> &Partition<S> {
        &self.part
    }

    pub fn field(&self) -> &VectorField<S> {
        self.field
    }

    /// Quadrature nodes of one cell as (ω, weight) pairs.
    pub fn cell_nodes(&self, i: usize) -> &[(S, S)] {
        &self.nodes[i]
    }

    /// Evaluate the averaged field of cell `i` at `(t, μ, x)`.
    pub fn eval_cell(
        &self,
        i: usize,
        t: S,
        mu: &MeasureView<'_, S>,
        x: &[S],
        out: &mut [S],
    ) -> Result<()> {
        out.iter_mut().for_each(|o| *o = S::zero());
        let mut buf = vec![S::zero(); out.len()];
        for &(omega, w) in &self.nodes[i] {
            self.field.eval(t, mu, omega, x, &mut buf)?;
            for (o, &b) in out.iter_mut().zip(&buf) {
                *o = *o + w * b;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Initial sampling
// ---------------------------------------------------------------------------

/// Particle positions sampled per coarse cell, flat layout `[k*m + l]`.
#[derive(Debug, Clone)]
pub struct InitialSample<S: Scalar> {
    /// Flat coordinates, `len = n*m*dim`; particle `i` occupies
    /// `positions[i*dim..(i+1)*dim]` and belongs to coarse cell `i / m`.
    pub positions: Vec<S>,
    /// Coarse cell index per particle.
    pub cells: Vec<usize>,
    pub per_cell: usize,
    pub dim: usize,
}

/// Draw `m` i.i.d. samples per coarse cell from the cell-averaged fibre
/// `⨍_{Ω_k} μ⁰_ω dπ(ω)` (a finite mixture: categorical fibre pick by overlap
/// mass, then categorical point pick by weight). Deterministic given the
/// master seed: cell `k` uses the stream `seed ⊕ splitmix64(k+1)`, so results
/// do not depend on thread scheduling.
pub fn sample_initial<S: Scalar>(
    mu0: &FibredMeasure<S>,
    coarse: &Partition<S>,
    m: usize,
    seed: u64,
) -> Result<InitialSample<S>> {
    if m == 0 {
        return Err(Error::Precondition("need at least one sample per cell".into()));
    }
    let dim = mu0.dim();
    let n = coarse.len();
    let mut positions = vec![S::zero(); n * m * dim];
    let mut cells = vec![0usize; n * m];
    for k in 0..n {
        let cell = &coarse.cells()[k];
        let cell_mass = coarse.masses()[k];
        if cell_mass <= S::tol(WEIGHT_TOL) {
            return Err(Error::DegenerateCell(format!("coarse cell {k} has no mass")));
        }
        let mut mix: Vec<(usize, S)> = Vec::new();
        for (j, fibre) in mu0.fibres().iter().enumerate() {
            if let Some(inter) = fibre.cell.intersect(cell) {
                let overlap = mu0.marginal().mass(&inter);
                if overlap > S::tol(WEIGHT_TOL) {
                    mix.push((j, overlap / cell_mass));
                }
            }
        }
        if mix.is_empty() {
            return Err(Error::DegenerateCell(format!(
                "coarse cell {k} intersects no fibre of the initial measure"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ splitmix64(k as u64 + 1));
        for l in 0..m {
            let uf: f64 = rng.gen();
            let fibre_idx = categorical(&mix, S::of(uf));
            let fibre = &mu0.fibres()[fibre_idx];
            let up: f64 = rng.gen();
            let point_idx = categorical_w(fibre.weights(), S::of(up));
            let i = k * m + l;
            positions[i * dim..(i + 1) * dim].copy_from_slice(fibre.point(point_idx, dim));
            cells[i] = k;
        }
    }
    Ok(InitialSample { positions, cells, per_cell: m, dim })
}

fn categorical<S: Scalar>(mix: &[(usize, S)], u: S) -> usize {
    let mut cum = S::zero();
    for &(idx, w) in mix {
        cum = cum + w;
        if u < cum {
            return idx;
        }
    }
    mix[mix.len() - 1].0
}

fn categorical_w<S: Scalar>(ws: &[S], u: S) -> usize {
    let mut cum = S::zero();
    for (idx, &w) in ws.iter().enumerate() {
        cum = cum + w;
        if u < cum {
            return idx;
        }
    }
    ws.len() - 1
}

// ---------------------------------------------------------------------------
// Bounded variation
// ---------------------------------------------------------------------------

/// Telescoped variation `Σ_i d(f(ω_i), f(ω_{i+1}))` of a map evaluated at the
/// partition's cell representatives in increasing ω order; a lower bound of
/// the true variation over the sampled grid.
pub fn total_variation<S: Scalar, T>(
    part: &Partition<S>,
    f: impl Fn(S) -> T,
    metric: impl Fn(&T, &T) -> S,
) -> S {
    let mut reps: Vec<S> = part.reps().to_vec();
    reps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let vals: Vec<T> = reps.iter().map(|&r| f(r)).collect();
    let mut var = S::zero();
    for w in vals.windows(2) {
        var = var + metric(&w[0], &w[1]);
    }
    var
}
