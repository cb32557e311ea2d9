//! Finite-support fibred probability measures over `Ω × ℝᵈ`, `Ω = [0,1]`.
//!
//! A [`FibredMeasure`] stores the reference marginal `π` (either a density in
//! CDF form or a finite atom list) together with an ordered list of fibres.
//! Each fibre owns a label cell, the π-mass of that cell, and a probability
//! measure on `ℝᵈ` given by weighted points. All measures handled by this
//! crate are piecewise-constant in the label variable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{kahan_sum, norm, Scalar};

/// Weight / mass bookkeeping tolerance (f64). Weights are renormalised on
/// construction so downstream chains do not accumulate drift.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Two point coordinates closer than this are merged into one support point.
pub const MERGE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Label marginal
// ---------------------------------------------------------------------------

/// The reference measure `π` on `[0,1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "")]
pub enum LabelMarginal<S: Scalar> {
    /// Density on `[0,1]` given by its CDF sampled on a uniform grid:
    /// `cdf[i] = F(i/(G-1))` with `F(0)=0`, `F(1)=1`, strictly increasing.
    Density { cdf: Vec<S> },
    /// Finite atom list `(ω_j, w_j)`, positions distinct, weights summing to 1.
    Atoms { atoms: Vec<(S, S)> },
}

impl<S: Scalar> LabelMarginal<S> {
    /// Uniform marginal on `[0,1]` sampled on a `g`-point grid.
    pub fn uniform(g: usize) -> Self {
        let gm1 = S::from_usize(g - 1).unwrap();
        LabelMarginal::Density {
            cdf: (0..g).map(|i| S::from_usize(i).unwrap() / gm1).collect(),
        }
    }

    /// Density marginal from a CDF callback sampled on a `g`-point grid.
    pub fn from_cdf(f: impl Fn(S) -> S, g: usize) -> Self {
        let gm1 = S::from_usize(g - 1).unwrap();
        LabelMarginal::Density {
            cdf: (0..g)
                .map(|i| f(S::from_usize(i).unwrap() / gm1))
                .collect(),
        }
    }

    pub fn atoms(atoms: Vec<(S, S)>) -> Self {
        LabelMarginal::Atoms { atoms }
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, LabelMarginal::Atoms { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let tol = S::tol(WEIGHT_TOL);
        match self {
            LabelMarginal::Density { cdf } => {
                if cdf.len() < 2 {
                    return Err(Error::InvalidMeasure("CDF grid needs >= 2 points".into()));
                }
                if cdf[0].abs() > tol || (cdf[cdf.len() - 1] - S::one()).abs() > tol {
                    return Err(Error::InvalidMeasure("CDF must satisfy F(0)=0, F(1)=1".into()));
                }
                for w in cdf.windows(2) {
                    if w[1] - w[0] < tol {
                        return Err(Error::InvalidMeasure(
                            "CDF must be strictly increasing per grid step".into(),
                        ));
                    }
                }
            }
            LabelMarginal::Atoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidMeasure("atom list is empty".into()));
                }
                let mut sum = S::zero();
                for &(omega, w) in atoms {
                    if w <= S::zero() {
                        return Err(Error::InvalidMeasure("atom weights must be > 0".into()));
                    }
                    if omega < S::zero() || omega > S::one() {
                        return Err(Error::InvalidMeasure("atom positions must lie in [0,1]".into()));
                    }
                    sum = sum + w;
                }
                if (sum - S::one()).abs() > tol {
                    return Err(Error::InvalidMeasure("atom weights must sum to 1".into()));
                }
                let mut pos: Vec<S> = atoms.iter().map(|&(o, _)| o).collect();
                pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for w in pos.windows(2) {
                    if (w[1] - w[0]).abs() <= tol {
                        return Err(Error::InvalidMeasure("atom positions must be distinct".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// `F(ω)` by monotone linear interpolation (density form only).
    pub fn cdf_at(&self, omega: S) -> S {
        match self {
            LabelMarginal::Density { cdf } => {
                let g = cdf.len();
                let t = omega.max(S::zero()).min(S::one()) * S::from_usize(g - 1).unwrap();
                let i = t.floor().to_usize().unwrap().min(g - 2);
                let frac = t - S::from_usize(i).unwrap();
                cdf[i] + (cdf[i + 1] - cdf[i]) * frac
            }
            LabelMarginal::Atoms { atoms } => atoms
                .iter()
                .filter(|&&(o, _)| o < omega)
                .map(|&(_, w)| w)
                .sum(),
        }
    }

    /// `F^{-1}(q)` by monotone linear interpolation on the CDF grid.
    pub fn quantile(&self, q: S) -> Result<S> {
        let cdf = match self {
            LabelMarginal::Density { cdf } => cdf,
            LabelMarginal::Atoms { .. } => {
                return Err(Error::NonatomicRequired(
                    "quantile inversion needs a CDF-form marginal".into(),
                ))
            }
        };
        let q = q.max(S::zero()).min(S::one());
        // binary search for the bracketing grid interval
        let mut lo = 0usize;
        let mut hi = cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if cdf[mid] <= q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let gm1 = S::from_usize(cdf.len() - 1).unwrap();
        let span = cdf[hi] - cdf[lo];
        let frac = if span > S::zero() { (q - cdf[lo]) / span } else { S::zero() };
        Ok((S::from_usize(lo).unwrap() + frac) / gm1)
    }

    /// π-mass of a label cell.
    pub fn mass(&self, cell: &Cell<S>) -> S {
        match (self, cell) {
            (LabelMarginal::Density { .. }, Cell::Interval { a, b }) => {
                self.cdf_at(*b) - self.cdf_at(*a)
            }
            (LabelMarginal::Density { .. }, Cell::Atom { .. }) => S::zero(),
            (LabelMarginal::Atoms { atoms }, Cell::Interval { a, b }) => atoms
                .iter()
                .filter(|&&(o, _)| cell_interval_contains(*a, *b, o))
                .map(|&(_, w)| w)
                .sum(),
            (LabelMarginal::Atoms { atoms }, Cell::Atom { omega }) => {
                let tol = S::tol(WEIGHT_TOL);
                atoms
                    .iter()
                    .filter(|&&(o, _)| (o - *omega).abs() <= tol)
                    .map(|&(_, w)| w)
                    .sum()
            }
        }
    }

    /// Representative label of a cell: the π-mass midpoint for intervals,
    /// the position itself for atoms. Kernels and product-metric costs see
    /// interval cells through this representative.
    pub fn representative(&self, cell: &Cell<S>) -> S {
        match cell {
            Cell::Atom { omega } => *omega,
            Cell::Interval { a, b } => match self {
                LabelMarginal::Density { .. } => {
                    let half = S::of(0.5);
                    let q = self.cdf_at(*a) + (self.cdf_at(*b) - self.cdf_at(*a)) * half;
                    self.quantile(q).unwrap_or_else(|_| (*a + *b) * half)
                }
                // weighted median-ish: midpoint is fine for atom groups
                LabelMarginal::Atoms { .. } => (*a + *b) * S::of(0.5),
            },
        }
    }

    /// Structural equality within tolerance; fibred distances require it.
    pub fn approx_eq(&self, other: &Self, tol: S) -> bool {
        match (self, other) {
            (LabelMarginal::Density { cdf: a }, LabelMarginal::Density { cdf: b }) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(&x, &y)| (x - y).abs() <= tol)
            }
            (LabelMarginal::Atoms { atoms: a }, LabelMarginal::Atoms { atoms: b }) => {
                if a.len() != b.len() {
                    return false;
                }
                let mut sa = a.clone();
                let mut sb = b.clone();
                sa.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
                sb.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
                sa.iter()
                    .zip(&sb)
                    .all(|(x, y)| (x.0 - y.0).abs() <= tol && (x.1 - y.1).abs() <= tol)
            }
            _ => false,
        }
    }
}

fn cell_interval_contains<S: Scalar>(a: S, b: S, omega: S) -> bool {
    // half-open [a, b), closed on the right when the cell ends at 1
    (omega >= a && omega < b) || (b >= S::one() && omega == b)
}

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

/// A label cell: half-open interval `[a, b)` (the final cell of a partition is
/// closed at 1) or a single atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<S: Scalar> {
    Interval { a: S, b: S },
    Atom { omega: S },
}

impl<S: Scalar> Cell<S> {
    pub fn interval(a: S, b: S) -> Self {
        Cell::Interval { a, b }
    }

    pub fn atom(omega: S) -> Self {
        Cell::Atom { omega }
    }

    pub fn lower(&self) -> S {
        match self {
            Cell::Interval { a, .. } => *a,
            Cell::Atom { omega } => *omega,
        }
    }

    pub fn contains(&self, omega: S) -> bool {
        match self {
            Cell::Interval { a, b } => cell_interval_contains(*a, *b, omega),
            Cell::Atom { omega: o } => (*o - omega).abs() <= S::tol(WEIGHT_TOL),
        }
    }

    /// Intersection of two cells, `None` when empty.
    pub fn intersect(&self, other: &Cell<S>) -> Option<Cell<S>> {
        match (self, other) {
            (Cell::Interval { a, b }, Cell::Interval { a: c, b: d }) => {
                let lo = a.max(*c);
                let hi = b.min(*d);
                (hi > lo).then_some(Cell::Interval { a: lo, b: hi })
            }
            (Cell::Interval { .. }, Cell::Atom { omega }) => {
                self.contains(*omega).then_some(*other)
            }
            (Cell::Atom { omega }, Cell::Interval { .. }) => {
                other.contains(*omega).then_some(*self)
            }
            (Cell::Atom { omega: o1 }, Cell::Atom { omega: o2 }) => {
                ((*o1 - *o2).abs() <= S::tol(WEIGHT_TOL)).then_some(*self)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fibres and fibred measures
// ---------------------------------------------------------------------------

/// One fibre: a label cell, its π-mass, and a probability measure on `ℝᵈ`
/// stored as flat coordinates (`xs.len() == ws.len() * dim`).
#[derive(Debug, Clone)]
pub struct Fibre<S: Scalar> {
    pub cell: Cell<S>,
    pub weight: S,
    pub(crate) xs: Vec<S>,
    pub(crate) ws: Vec<S>,
}

impl<S: Scalar> Fibre<S> {
    /// Build a fibre from weighted points; points are merged within
    /// [`MERGE_TOL`] per coordinate and weights renormalised to sum to 1.
    pub fn new(cell: Cell<S>, weight: S, points: Vec<(Vec<S>, S)>, dim: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("fibre with no support points".into()));
        }
        for (x, w) in &points {
            if x.len() != dim {
                return Err(Error::InvalidMeasure("point dimension mismatch".into()));
            }
            if *w <= S::zero() {
                return Err(Error::InvalidMeasure("point weights must be > 0".into()));
            }
            if x.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite point coordinate".into()));
            }
        }
        let (xs, ws) = merge_points(points, dim);
        let mut fibre = Fibre { cell, weight, xs, ws };
        fibre.renormalise();
        Ok(fibre)
    }

    fn renormalise(&mut self) {
        renormalise_weights(&mut self.ws);
    }

    pub fn len(&self) -> usize {
        self.ws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ws.is_empty()
    }

    pub fn point(&self, j: usize, dim: usize) -> &[S] {
        &self.xs[j * dim..(j + 1) * dim]
    }

    pub fn weights(&self) -> &[S] {
        &self.ws
    }

    pub fn coords(&self) -> &[S] {
        &self.xs
    }

    /// The fibre as a standalone probability measure on `ℝᵈ`.
    pub fn as_discrete(&self, dim: usize) -> DiscreteMeasure<S> {
        DiscreteMeasure {
            dim,
            xs: self.xs.clone(),
            ws: self.ws.clone(),
        }
    }
}

/// Divide weights by their compensated sum, skipping the division when the
/// vector is already normalised to a few ulps: renormalising twice is then
/// the identity, which keeps conditional expectations exactly idempotent.
fn renormalise_weights<S: Scalar>(ws: &mut [S]) {
    let sum = kahan_sum(ws);
    if sum <= S::zero() || (sum - S::one()).abs() <= S::epsilon() * S::of(8.0) {
        return;
    }
    for w in ws.iter_mut() {
        *w = *w / sum;
    }
}

/// Merge duplicate points (within MERGE_TOL per coordinate) after a
/// lexicographic sort; weights of merged points accumulate.
fn merge_points<S: Scalar>(mut points: Vec<(Vec<S>, S)>, dim: usize) -> (Vec<S>, Vec<S>) {
    let tol = S::tol(MERGE_TOL);
    points.sort_by(|a, b| {
        for k in 0..dim {
            match a.0[k].partial_cmp(&b.0[k]).unwrap() {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        std::cmp::Ordering::Equal
    });
    let mut xs: Vec<S> = Vec::with_capacity(points.len() * dim);
    let mut ws: Vec<S> = Vec::with_capacity(points.len());
    for (x, w) in points {
        let same = !ws.is_empty() && {
            let last = &xs[xs.len() - dim..];
            last.iter().zip(&x).all(|(&a, &b)| (a - b).abs() <= tol)
        };
        if same {
            let n = ws.len();
            ws[n - 1] = ws[n - 1] + w;
        } else {
            xs.extend_from_slice(&x);
            ws.push(w);
        }
    }
    (xs, ws)
}

/// Atomic fibre description: `(ω, weight, weighted points)`.
pub type AtomFibreSpec<S> = (S, S, Vec<(Vec<S>, S)>);

/// Finite-support fibred probability measure: marginal + ordered fibres
/// whose cells partition `supp(π)`.
#[derive(Debug, Clone)]
pub struct FibredMeasure<S: Scalar> {
    marginal: LabelMarginal<S>,
    dim: usize,
    fibres: Vec<Fibre<S>>,
}

impl<S: Scalar> FibredMeasure<S> {
    pub fn new(marginal: LabelMarginal<S>, dim: usize, fibres: Vec<Fibre<S>>) -> Result<Self> {
        marginal.validate()?;
        let mut fibres = fibres;
        fibres.sort_by(|a, b| a.cell.lower().partial_cmp(&b.cell.lower()).unwrap());
        let mu = FibredMeasure { marginal, dim, fibres };
        mu.validate()?;
        Ok(mu)
    }

    /// Product measure `π × ρ` on the given cells.
    pub fn product(
        marginal: LabelMarginal<S>,
        cells: Vec<Cell<S>>,
        rho: &DiscreteMeasure<S>,
    ) -> Result<Self> {
        let fibres = cells
            .into_iter()
            .map(|cell| {
                let weight = marginal.mass(&cell);
                Fibre {
                    cell,
                    weight,
                    xs: rho.xs.clone(),
                    ws: rho.ws.clone(),
                }
            })
            .collect();
        FibredMeasure::new(marginal, rho.dim, fibres)
    }

    /// Sample a fibre generator on the given cells: continuous-in-ω initial
    /// data enters the pipeline pre-discretised through the cell
    /// representatives.
    pub fn from_fibre_fn(
        marginal: LabelMarginal<S>,
        cells: Vec<Cell<S>>,
        dim: usize,
        f: impl Fn(S) -> Vec<(Vec<S>, S)>,
    ) -> Result<Self> {
        let fibres = cells
            .into_iter()
            .map(|cell| {
                let weight = marginal.mass(&cell);
                let rep = marginal.representative(&cell);
                Fibre::new(cell, weight, f(rep), dim)
            })
            .collect::<Result<Vec<_>>>()?;
        FibredMeasure::new(marginal, dim, fibres)
    }

    /// Measure with atomic marginal built from `(ω, weight, points)` triples;
    /// the marginal is inferred from the atom weights.
    pub fn from_atoms(atoms: Vec<AtomFibreSpec<S>>, dim: usize) -> Result<Self> {
        let marginal = LabelMarginal::atoms(atoms.iter().map(|&(o, w, _)| (o, w)).collect());
        let fibres = atoms
            .into_iter()
            .map(|(omega, weight, pts)| Fibre::new(Cell::atom(omega), weight, pts, dim))
            .collect::<Result<Vec<_>>>()?;
        FibredMeasure::new(marginal, dim, fibres)
    }

    pub fn validate(&self) -> Result<()> {
        let tol = S::tol(WEIGHT_TOL);
        if self.fibres.is_empty() {
            return Err(Error::InvalidMeasure("measure with no fibres".into()));
        }
        let mut total = S::zero();
        for fibre in &self.fibres {
            let mass = self.marginal.mass(&fibre.cell);
            if (mass - fibre.weight).abs() > S::tol(1e-9) {
                return Err(Error::InvalidMeasure(format!(
                    "fibre weight {} does not match cell mass {}",
                    fibre.weight, mass
                )));
            }
            let wsum: S = fibre.ws.iter().copied().sum();
            if (wsum - S::one()).abs() > tol {
                return Err(Error::InvalidMeasure("fibre weights must sum to 1".into()));
            }
            if fibre.xs.len() != fibre.ws.len() * self.dim {
                return Err(Error::InvalidMeasure("fibre coordinate layout mismatch".into()));
            }
            total = total + fibre.weight;
        }
        if (total - S::one()).abs() > S::tol(1e-9) {
            return Err(Error::InvalidMeasure(format!(
                "fibre weights sum to {total}, expected 1"
            )));
        }
        // cells must be disjoint and cover supp(π)
        match &self.marginal {
            LabelMarginal::Density { .. } => {
                let mut end = S::zero();
                for fibre in &self.fibres {
                    match fibre.cell {
                        Cell::Interval { a, b } => {
                            if (a - end).abs() > S::tol(1e-9) || b <= a {
                                return Err(Error::InvalidMeasure(
                                    "interval cells must tile [0,1] in order".into(),
                                ));
                            }
                            end = b;
                        }
                        Cell::Atom { .. } => {
                            return Err(Error::InvalidMeasure(
                                "atom cell under a density marginal".into(),
                            ))
                        }
                    }
                }
                if (end - S::one()).abs() > S::tol(1e-9) {
                    return Err(Error::InvalidMeasure("cells must cover [0,1]".into()));
                }
            }
            LabelMarginal::Atoms { atoms } => {
                for &(omega, _) in atoms {
                    let covering = self
                        .fibres
                        .iter()
                        .filter(|f| f.cell.contains(omega))
                        .count();
                    if covering != 1 {
                        return Err(Error::InvalidMeasure(format!(
                            "atom {omega} covered by {covering} cells, expected exactly 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn marginal(&self) -> &LabelMarginal<S> {
        &self.marginal
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fibres(&self) -> &[Fibre<S>] {
        &self.fibres
    }

    pub fn cells(&self) -> Vec<Cell<S>> {
        self.fibres.iter().map(|f| f.cell).collect()
    }

    /// Zero-copy view used by field evaluators and distance routines.
    pub fn view(&self) -> MeasureView<'_, S> {
        MeasureView {
            dim: self.dim,
            fibres: self
                .fibres
                .iter()
                .map(|f| FibreView {
                    rep: self.marginal.representative(&f.cell),
                    mass: f.weight,
                    xs: &f.xs,
                    ws: Weights::Slice(&f.ws),
                })
                .collect(),
        }
    }

    /// Fibred moment `𝓜_{π,p}(μ) = (Σ_k weight_k Σ_j w_{kj} |x_{kj}|^p)^{1/p}`.
    pub fn fibred_moment(&self, p: u32) -> Result<S> {
        if p != 1 && p != 2 {
            return Err(Error::Precondition(format!("p must be 1 or 2, got {p}")));
        }
        self.validate()?;
        let mut acc = S::zero();
        for fibre in &self.fibres {
            let mut inner = S::zero();
            for j in 0..fibre.len() {
                let r = norm(fibre.point(j, self.dim));
                let rp = if p == 1 { r } else { r * r };
                inner = inner + fibre.ws[j] * rp;
            }
            acc = acc + fibre.weight * inner;
        }
        Ok(if p == 1 { acc } else { acc.sqrt() })
    }

    /// Max Euclidean norm over all support points.
    pub fn support_radius(&self) -> S {
        let mut r = S::zero();
        for fibre in &self.fibres {
            for j in 0..fibre.len() {
                r = r.max(norm(fibre.point(j, self.dim)));
            }
        }
        r
    }

    /// Conditional expectation `E_P[μ]`: each output fibre over a cell `A` is
    /// the π-weighted mixture of the fibres of `μ` intersecting `A`.
    pub fn conditional_expectation(&self, cells: &[Cell<S>]) -> Result<FibredMeasure<S>> {
        let mut out = Vec::with_capacity(cells.len());
        for cell in cells {
            let mass = self.marginal.mass(cell);
            if mass <= S::tol(WEIGHT_TOL) {
                return Err(Error::DegenerateCell(format!(
                    "cell {cell:?} has no π-mass"
                )));
            }
            let mut points: Vec<(Vec<S>, S)> = Vec::new();
            for fibre in &self.fibres {
                let overlap = match fibre.cell.intersect(cell) {
                    Some(inter) => self.marginal.mass(&inter),
                    None => continue,
                };
                if overlap <= S::zero() {
                    continue;
                }
                let scale = overlap / mass;
                for j in 0..fibre.len() {
                    points.push((fibre.point(j, self.dim).to_vec(), fibre.ws[j] * scale));
                }
            }
            if points.is_empty() {
                return Err(Error::DegenerateCell(format!(
                    "cell {cell:?} intersects no fibre of the measure"
                )));
            }
            out.push(Fibre::new(*cell, mass, points, self.dim)?);
        }
        FibredMeasure::new(self.marginal.clone(), self.dim, out)
    }

    /// Space marginal `(𝔭_{ℝᵈ})♯μ`.
    pub fn space_marginal(&self) -> DiscreteMeasure<S> {
        let mut points: Vec<(Vec<S>, S)> = Vec::new();
        for fibre in &self.fibres {
            for j in 0..fibre.len() {
                points.push((fibre.point(j, self.dim).to_vec(), fibre.weight * fibre.ws[j]));
            }
        }
        let (xs, ws) = merge_points(points, self.dim);
        let mut m = DiscreteMeasure { dim: self.dim, xs, ws };
        m.renormalise();
        m
    }

    /// Per-fibre barycentres (weighted means of the support points).
    pub fn barycentres(&self) -> Vec<(Cell<S>, Vec<S>)> {
        self.fibres
            .iter()
            .map(|fibre| {
                let mut mean = vec![S::zero(); self.dim];
                for j in 0..fibre.len() {
                    for (m, &c) in mean.iter_mut().zip(fibre.point(j, self.dim)) {
                        *m = *m + fibre.ws[j] * c;
                    }
                }
                (fibre.cell, mean)
            })
            .collect()
    }

    /// Global barycentre (π-weighted mean over all fibres).
    pub fn barycentre(&self) -> Vec<S> {
        let mut mean = vec![S::zero(); self.dim];
        for (fibre, (_, b)) in self.fibres.iter().zip(self.barycentres()) {
            for (m, c) in mean.iter_mut().zip(b) {
                *m = *m + fibre.weight * c;
            }
        }
        mean
    }

    /// Push every support point through `f` (labels unchanged).
    pub fn map_points(&self, f: impl Fn(&[S]) -> Vec<S>) -> Result<FibredMeasure<S>> {
        let fibres = self
            .fibres
            .iter()
            .map(|fibre| {
                let points = (0..fibre.len())
                    .map(|j| (f(fibre.point(j, self.dim)), fibre.ws[j]))
                    .collect();
                Fibre::new(fibre.cell, fibre.weight, points, self.dim)
            })
            .collect::<Result<Vec<_>>>()?;
        FibredMeasure::new(self.marginal.clone(), self.dim, fibres)
    }
}

// ---------------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------------

/// Per-point weights of a fibre view: either borrowed, or uniform `1/m`
/// (the empirical-ensemble case, avoiding materialised weight vectors).
#[derive(Debug, Clone, Copy)]
pub enum Weights<'a, S: Scalar> {
    Slice(&'a [S]),
    Uniform(S),
}

impl<'a, S: Scalar> Weights<'a, S> {
    #[inline]
    pub fn get(&self, j: usize) -> S {
        match self {
            Weights::Slice(ws) => ws[j],
            Weights::Uniform(w) => *w,
        }
    }
}

/// Borrowed view of one fibre.
#[derive(Debug, Clone, Copy)]
pub struct FibreView<'a, S: Scalar> {
    /// Representative label of the cell (atom position or π-mass midpoint).
    pub rep: S,
    /// π-mass of the cell.
    pub mass: S,
    /// Flat point coordinates, `len = npoints * dim`.
    pub xs: &'a [S],
    pub ws: Weights<'a, S>,
}

impl<'a, S: Scalar> FibreView<'a, S> {
    #[inline]
    pub fn npoints(&self, dim: usize) -> usize {
        self.xs.len().checked_div(dim).unwrap_or(0)
    }

    #[inline]
    pub fn point(&self, j: usize, dim: usize) -> &'a [S] {
        &self.xs[j * dim..(j + 1) * dim]
    }
}

/// Borrowed view of a fibred measure, cheap to build from raw ensemble state.
#[derive(Debug, Clone)]
pub struct MeasureView<'a, S: Scalar> {
    pub dim: usize,
    pub fibres: Vec<FibreView<'a, S>>,
}

impl<'a, S: Scalar> MeasureView<'a, S> {
    /// Fibred first moment of the viewed measure.
    pub fn moment1(&self) -> S {
        let mut acc = S::zero();
        for f in &self.fibres {
            let mut inner = S::zero();
            for j in 0..f.npoints(self.dim) {
                inner = inner + f.ws.get(j) * norm(f.point(j, self.dim));
            }
            acc = acc + f.mass * inner;
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// Discrete measures on ℝᵈ
// ---------------------------------------------------------------------------

/// Finite-support probability measure on `ℝᵈ` (flat coordinate layout).
#[derive(Debug, Clone)]
pub struct DiscreteMeasure<S: Scalar> {
    pub dim: usize,
    pub(crate) xs: Vec<S>,
    pub(crate) ws: Vec<S>,
}

impl<S: Scalar> DiscreteMeasure<S> {
    pub fn new(points: Vec<(Vec<S>, S)>, dim: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("empty discrete measure".into()));
        }
        for (x, w) in &points {
            if x.len() != dim {
                return Err(Error::InvalidMeasure("point dimension mismatch".into()));
            }
            if *w <= S::zero() {
                return Err(Error::InvalidMeasure("point weights must be > 0".into()));
            }
        }
        let (xs, ws) = merge_points(points, dim);
        let mut m = DiscreteMeasure { dim, xs, ws };
        let sum: S = m.ws.iter().copied().sum();
        if (sum - S::one()).abs() > S::tol(1e-9) {
            return Err(Error::InvalidMeasure(format!(
                "discrete weights sum to {sum}, expected 1"
            )));
        }
        m.renormalise();
        Ok(m)
    }

    /// 1-D helper.
    pub fn from_scalars(points: Vec<(S, S)>) -> Result<Self> {
        DiscreteMeasure::new(points.into_iter().map(|(x, w)| (vec![x], w)).collect(), 1)
    }

    /// Dirac mass.
    pub fn dirac(x: Vec<S>) -> Self {
        let dim = x.len();
        DiscreteMeasure { dim, xs: x, ws: vec![S::one()] }
    }

    fn renormalise(&mut self) {
        renormalise_weights(&mut self.ws);
    }

    pub fn len(&self) -> usize {
        self.ws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ws.is_empty()
    }

    pub fn point(&self, j: usize) -> &[S] {
        &self.xs[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weights(&self) -> &[S] {
        &self.ws
    }

    pub fn coords(&self) -> &[S] {
        &self.xs
    }
}

// ---------------------------------------------------------------------------
// Common refinement
// ---------------------------------------------------------------------------

/// One cell of the common refinement of two fibred measures: its π-mass and
/// the indices of the parent fibres in each measure.
#[derive(Debug, Clone, Copy)]
pub struct RefinedCell<S: Scalar> {
    pub cell: Cell<S>,
    pub mass: S,
    pub left: usize,
    pub right: usize,
}

/// Common cell refinement of two measures sharing a label marginal.
///
/// Errors with [`Error::IncomparableMarginals`] when the marginals differ or
/// when the refined cell masses disagree beyond `1e-10`.
pub fn common_refinement<'m, S: Scalar>(
    a: &'m FibredMeasure<S>,
    b: &'m FibredMeasure<S>,
) -> Result<Vec<RefinedCell<S>>> {
    if !a.marginal().approx_eq(b.marginal(), S::tol(1e-10)) {
        return Err(Error::IncomparableMarginals(
            "label marginals differ; fibred distances are undefined".into(),
        ));
    }
    let tol = S::tol(1e-10);
    match a.marginal() {
        LabelMarginal::Density { .. } => {
            let mut bounds: Vec<S> = Vec::new();
            for f in a.fibres().iter().chain(b.fibres()) {
                if let Cell::Interval { a: lo, b: hi } = f.cell {
                    bounds.push(lo);
                    bounds.push(hi);
                }
            }
            bounds.sort_by(|x, y| x.partial_cmp(y).unwrap());
            bounds.dedup_by(|x, y| (*x - *y).abs() <= S::tol(MERGE_TOL));
            let mut cells = Vec::new();
            for w in bounds.windows(2) {
                let cell = Cell::interval(w[0], w[1]);
                let mass = a.marginal().mass(&cell);
                if mass <= S::tol(WEIGHT_TOL) {
                    continue;
                }
                let mid = a.marginal().representative(&cell);
                let left = locate(a, mid)?;
                let right = locate(b, mid)?;
                cells.push(RefinedCell { cell, mass, left, right });
            }
            check_masses(a, b, &cells, tol)?;
            Ok(cells)
        }
        LabelMarginal::Atoms { atoms } => {
            let mut cells = Vec::new();
            for &(omega, w) in atoms {
                let left = locate(a, omega)?;
                let right = locate(b, omega)?;
                cells.push(RefinedCell {
                    cell: Cell::atom(omega),
                    mass: w,
                    left,
                    right,
                });
            }
            Ok(cells)
        }
    }
}

fn locate<S: Scalar>(mu: &FibredMeasure<S>, omega: S) -> Result<usize> {
    mu.fibres()
        .iter()
        .position(|f| f.cell.contains(omega))
        .ok_or_else(|| {
            Error::IncomparableMarginals(format!("label {omega} not covered by any fibre cell"))
        })
}

fn check_masses<S: Scalar>(
    a: &FibredMeasure<S>,
    b: &FibredMeasure<S>,
    cells: &[RefinedCell<S>],
    tol: S,
) -> Result<()> {
    // refined masses must reassemble each side's fibre weights
    for (mu, side) in [(a, 0), (b, 1)] {
        let mut acc = vec![S::zero(); mu.fibres().len()];
        for rc in cells {
            let idx = if side == 0 { rc.left } else { rc.right };
            acc[idx] = acc[idx] + rc.mass;
        }
        for (fibre, got) in mu.fibres().iter().zip(acc) {
            if (fibre.weight - got).abs() > tol {
                return Err(Error::IncomparableMarginals(format!(
                    "cell weight mismatch after refinement: {} vs {}",
                    fibre.weight, got
                )));
            }
        }
    }
    Ok(())
}
