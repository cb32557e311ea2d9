//! Exact Wasserstein distances on finite-support measures.
//!
//! Three computational routes, all exact up to float rounding:
//! - merged-quantile integration for `d = 1` ([`w_1d`]), with a circular
//!   variant for the 1-D torus ([`w_1d_circular`]),
//! - a dense transportation simplex over the bipartite support graph for
//!   general ground costs ([`w_discrete`]),
//! - the fibred distance `W_{π,p}` as a π-weighted aggregate of per-fibre
//!   distances ([`fibred_w`]), plus the classical distance on the product
//!   space ([`classical_w_product`]) and a Kantorovich–Rubinstein dual
//!   lower-bound evaluator ([`kr_dual_value`]).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{common_refinement, DiscreteMeasure, Fibre, FibredMeasure};
use crate::scalar::{dist_pow, Scalar};

/// Support budget for the exact solver (per side).
pub const SOLVER_BUDGET: usize = 512;

/// Ground cost for [`w_discrete`]; entries are `d(x,y)^p` for the chosen `p`.
#[derive(Debug, Clone)]
pub enum CostKind<S: Scalar> {
    /// `|x - y|^p` (Euclidean).
    EuclideanPow,
    /// Wrap-around distance on the 1-D torus of the given period, raised to `p`.
    TorusPow { period: S },
    /// Explicit row-major matrix, `len = |mu| * |nu|`.
    Matrix(Vec<S>),
}

/// Result of an exact transport solve.
#[derive(Debug, Clone, Serialize)]
pub struct TransportPlanResult<S: Scalar> {
    /// Optimal objective `Σ γ_ij c_ij` (the p-th power of the distance when
    /// the cost is a `p`-th power).
    pub cost: S,
    /// Sparse optimal plan entries `(i, j, γ_ij)`.
    pub plan: Vec<(usize, usize, S)>,
    /// `max` deviation of the plan marginals from the input weights.
    pub primal_feasibility_residual: S,
}

impl<S: Scalar> TransportPlanResult<S> {
    /// `W_p = cost^{1/p}`.
    pub fn distance(&self, p: u32) -> S {
        match p {
            1 => self.cost,
            2 => self.cost.max(S::zero()).sqrt(),
            _ => self.cost.max(S::zero()).powf(S::one() / S::from_u32(p).unwrap()),
        }
    }
}

fn check_p(p: u32) -> Result<()> {
    if p == 1 || p == 2 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("p must be 1 or 2, got {p}")))
    }
}

// ---------------------------------------------------------------------------
// 1-D quantile route
// ---------------------------------------------------------------------------

/// Exact `W_p` in d=1 via merged-quantile integration of `|F_μ⁻¹ − F_ν⁻¹|^p`.
pub fn w_1d<S: Scalar>(mu: &DiscreteMeasure<S>, nu: &DiscreteMeasure<S>, p: u32) -> Result<S> {
    check_p(p)?;
    if mu.dim != 1 || nu.dim != 1 {
        return Err(Error::Precondition("w_1d requires d = 1".into()));
    }
    Ok(w_1d_weighted(mu.coords(), mu.weights(), nu.coords(), nu.weights(), p))
}

/// Slice-level 1-D distance; inputs need not be sorted.
pub fn w_1d_weighted<S: Scalar>(xs: &[S], ws: &[S], ys: &[S], wt: &[S], p: u32) -> S {
    let a = sorted_support(xs, ws);
    let b = sorted_support(ys, wt);
    w_1d_sorted(&a, &b, p)
}

fn sorted_support<S: Scalar>(xs: &[S], ws: &[S]) -> Vec<(S, S)> {
    let mut v: Vec<(S, S)> = xs.iter().copied().zip(ws.iter().copied()).collect();
    v.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    v
}

/// Merged-quantile walk over two sorted weighted supports.
fn w_1d_sorted<S: Scalar>(a: &[(S, S)], b: &[(S, S)], p: u32) -> S {
    let mut i = 0;
    let mut j = 0;
    let mut ra = a[0].1; // remaining mass at current atom
    let mut rb = b[0].1;
    let mut acc = S::zero();
    while i < a.len() && j < b.len() {
        let dq = ra.min(rb);
        let d = (a[i].0 - b[j].0).abs();
        let dp = if p == 1 { d } else { d * d };
        acc = acc + dq * dp;
        ra = ra - dq;
        rb = rb - dq;
        if ra <= S::zero() {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= S::zero() {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    if p == 1 {
        acc
    } else {
        acc.max(S::zero()).sqrt()
    }
}

/// Exact `W_1` on the 1-D torus of circumference `period`, via the circular
/// quantile formula: `min_α ∫ |F_μ - F_ν - α|` with `α` the weighted median
/// of `F_μ - F_ν`.
pub fn w_1d_circular<S: Scalar>(xs: &[S], ws: &[S], ys: &[S], wt: &[S], period: S) -> S {
    debug_assert!(period > S::zero());
    let mut events: Vec<(S, S)> = Vec::with_capacity(xs.len() + ys.len());
    for (&x, &w) in xs.iter().zip(ws) {
        events.push((wrap(x, period), w));
    }
    for (&y, &w) in ys.iter().zip(wt) {
        events.push((wrap(y, period), -w));
    }
    events.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    // piecewise-constant G = F_mu - F_nu on [0, period)
    let mut segs: Vec<(S, S)> = Vec::with_capacity(events.len() + 1); // (value, length)
    let mut g = S::zero();
    let mut prev = S::zero();
    for &(pos, dw) in &events {
        if pos > prev {
            segs.push((g, pos - prev));
        }
        g = g + dw;
        prev = pos;
    }
    if period > prev {
        segs.push((g, period - prev));
    }

    // weighted median of segment values (weights = lengths)
    let mut by_val = segs.clone();
    by_val.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let total: S = by_val.iter().map(|s| s.1).sum();
    let half = total * S::of(0.5);
    let mut cum = S::zero();
    let mut alpha = by_val[by_val.len() - 1].0;
    for &(v, len) in &by_val {
        cum = cum + len;
        if cum >= half {
            alpha = v;
            break;
        }
    }
    segs.iter().map(|&(v, len)| len * (v - alpha).abs()).sum()
}

fn wrap<S: Scalar>(x: S, period: S) -> S {
    let r = x % period;
    if r < S::zero() {
        r + period
    } else {
        r
    }
}

// ---------------------------------------------------------------------------
// Exact discrete OT: transportation simplex
// ---------------------------------------------------------------------------

/// Exact optimal transport between two discrete measures under the given
/// ground cost, solved by a dense transportation simplex.
pub fn w_discrete<S: Scalar>(
    mu: &DiscreteMeasure<S>,
    nu: &DiscreteMeasure<S>,
    cost: &CostKind<S>,
    p: u32,
) -> Result<TransportPlanResult<S>> {
    check_p(p)?;
    let m = mu.len();
    let n = nu.len();
    if m > SOLVER_BUDGET || n > SOLVER_BUDGET {
        return Err(Error::BudgetExceeded { got: m.max(n), limit: SOLVER_BUDGET });
    }
    let tol = S::tol(1e-9);
    let sum_mu: S = mu.weights().iter().copied().sum();
    let sum_nu: S = nu.weights().iter().copied().sum();
    if (sum_mu - S::one()).abs() > tol || (sum_nu - S::one()).abs() > tol {
        return Err(Error::InvalidMeasure("transport weights must each sum to 1".into()));
    }
    let costs: Vec<S> = match cost {
        CostKind::EuclideanPow => {
            if mu.dim != nu.dim {
                return Err(Error::Precondition("dimension mismatch".into()));
            }
            let mut c = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    c.push(dist_pow(mu.point(i), nu.point(j), p));
                }
            }
            c
        }
        CostKind::TorusPow { period } => {
            if mu.dim != 1 || nu.dim != 1 {
                return Err(Error::Precondition("torus cost requires d = 1".into()));
            }
            let mut c = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    let d = circ_dist(mu.coords()[i], nu.coords()[j], *period);
                    c.push(if p == 1 { d } else { d * d });
                }
            }
            c
        }
        CostKind::Matrix(c) => {
            if c.len() != m * n {
                return Err(Error::Precondition("cost matrix shape mismatch".into()));
            }
            c.clone()
        }
    };
    let plan = transportation_simplex(mu.weights(), nu.weights(), &costs)?;

    let mut row = vec![S::zero(); m];
    let mut col = vec![S::zero(); n];
    let mut objective = S::zero();
    for &(i, j, f) in &plan {
        row[i] = row[i] + f;
        col[j] = col[j] + f;
        objective = objective + f * costs[i * n + j];
    }
    let mut residual = S::zero();
    for (got, want) in row.iter().zip(mu.weights()).chain(col.iter().zip(nu.weights())) {
        residual = residual.max((*got - *want).abs());
    }
    Ok(TransportPlanResult { cost: objective, plan, primal_feasibility_residual: residual })
}

fn circ_dist<S: Scalar>(x: S, y: S, period: S) -> S {
    let d = (wrap(x, period) - wrap(y, period)).abs();
    d.min(period - d)
}

#[derive(Clone, Copy)]
struct BasisArc<S> {
    i: usize,
    j: usize,
    flow: S,
}

/// Dense transportation simplex with north-west-corner start, Dantzig pricing
/// and a Bland fallback against degenerate cycling.
fn transportation_simplex<S: Scalar>(
    supply: &[S],
    demand: &[S],
    cost: &[S],
) -> Result<Vec<(usize, usize, S)>> {
    let m = supply.len();
    let n = demand.len();

    // north-west corner initial basis: exactly m + n - 1 arcs
    let mut basis: Vec<BasisArc<S>> = Vec::with_capacity(m + n - 1);
    {
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let f = a[i].min(b[j]).max(S::zero());
            basis.push(BasisArc { i, j, flow: f });
            a[i] = a[i] - f;
            b[j] = b[j] - f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if a[i] <= b[j] && i < m - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let scale = cost
        .iter()
        .fold(S::zero(), |acc, &c| acc.max(c.abs()))
        .max(S::one());
    let rc_tol = S::tol(1e-11) * scale;

    let max_pivots = 200 * (m + n) * (m + n) + 1000;
    let mut stagnation = 0usize;
    let mut bland = false;

    for _pivot in 0..max_pivots {
        // duals from the basis tree
        let (u, v) = compute_duals(&basis, cost, m, n)?;

        // entering arc
        let mut enter: Option<(usize, usize, S)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                let rc = cost[i * n + j] - u[i] - v[j];
                if rc < -rc_tol {
                    if bland {
                        enter = Some((i, j, rc));
                        break 'scan;
                    }
                    match enter {
                        Some((_, _, best)) if rc >= best => {}
                        _ => enter = Some((i, j, rc)),
                    }
                }
            }
        }
        let Some((ei, ej, _)) = enter else {
            // optimal
            return Ok(basis
                .iter()
                .filter(|arc| arc.flow > S::zero())
                .map(|arc| (arc.i, arc.j, arc.flow))
                .collect());
        };

        // cycle: unique tree path from source ei to sink ej
        let path = tree_path(&basis, m, n, ei, ej)?;
        // arcs alternate +,-,+,-,... starting with the entering arc (+);
        // path[k] is traversed forward/backward depending on parity
        let mut theta = S::infinity();
        let mut leave = usize::MAX;
        for (pos, &arc_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                // reverse arc: flow decreases
                if basis[arc_idx].flow < theta {
                    theta = basis[arc_idx].flow;
                    leave = arc_idx;
                }
            }
        }
        if leave == usize::MAX {
            return Err(Error::Precondition("transport solver lost the basis cycle".into()));
        }
        let theta = theta.max(S::zero());
        for (pos, &arc_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[arc_idx].flow = basis[arc_idx].flow - theta;
            } else {
                basis[arc_idx].flow = basis[arc_idx].flow + theta;
            }
        }
        basis[leave] = BasisArc { i: ei, j: ej, flow: theta };

        if theta <= S::tol(1e-15) {
            stagnation += 1;
            if stagnation > m + n {
                bland = true;
            }
        } else {
            stagnation = 0;
        }
    }
    Err(Error::Precondition("transport solver exceeded pivot budget".into()))
}


/// Dual potentials on the basis tree (u for sources, v for sinks).
fn compute_duals<S: Scalar>(
    basis: &[BasisArc<S>],
    cost: &[S],
    m: usize,
    n: usize,
) -> Result<(Vec<S>, Vec<S>)> {
    let nodes = m + n; // sources 0..m, sinks m..m+n
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (idx, arc) in basis.iter().enumerate() {
        adj[arc.i].push(idx);
        adj[m + arc.j].push(idx);
    }
    let mut u = vec![S::nan(); m];
    let mut v = vec![S::nan(); n];
    u[0] = S::zero();
    let mut stack = vec![0usize];
    let mut seen = vec![false; nodes];
    seen[0] = true;
    while let Some(node) = stack.pop() {
        for &idx in &adj[node] {
            let arc = basis[idx];
            let (src, snk) = (arc.i, m + arc.j);
            let other = if node == src { snk } else { src };
            if seen[other] {
                continue;
            }
            seen[other] = true;
            if other >= m {
                v[other - m] = cost[arc.i * n + arc.j] - u[arc.i];
            } else {
                u[other] = cost[arc.i * n + arc.j] - v[arc.j];
            }
            stack.push(other);
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Precondition("transport basis is not a spanning tree".into()));
    }
    Ok((u, v))
}

/// Arc indices along the unique tree path from source `si` to sink `sj`.
fn tree_path<S: Scalar>(
    basis: &[BasisArc<S>],
    m: usize,
    n: usize,
    si: usize,
    sj: usize,
) -> Result<Vec<usize>> {
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (idx, arc) in basis.iter().enumerate() {
        adj[arc.i].push(idx);
        adj[m + arc.j].push(idx);
    }
    let target = m + sj;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes]; // (prev node, arc idx)
    let mut seen = vec![false; nodes];
    seen[si] = true;
    let mut queue = std::collections::VecDeque::from([si]);
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for &idx in &adj[node] {
            let arc = basis[idx];
            let other = if node == arc.i { m + arc.j } else { arc.i };
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, idx));
                queue.push_back(other);
            }
        }
    }
    if !seen[target] {
        return Err(Error::Precondition("transport basis is disconnected".into()));
    }
    let mut path = Vec::new();
    let mut node = target;
    while node != si {
        let (prev, idx) = parent[node].unwrap();
        path.push(idx);
        node = prev;
    }
    path.reverse();
    Ok(path)
}

// ---------------------------------------------------------------------------
// Fibred distances
// ---------------------------------------------------------------------------

/// Fibred Wasserstein distance `W_{π,p}(μ,ν) = (Σ_k mass_k W_p(μ_k,ν_k)^p)^{1/p}`.
///
/// Requires matched label marginals; per-fibre distances use the quantile
/// route in d=1 and the exact solver otherwise.
pub fn fibred_w<S: Scalar>(mu: &FibredMeasure<S>, nu: &FibredMeasure<S>, p: u32) -> Result<S> {
    check_p(p)?;
    let cells = common_refinement(mu, nu)?;
    let dim = mu.dim();
    let mut acc = S::zero();
    for rc in &cells {
        let fa = &mu.fibres()[rc.left];
        let fb = &nu.fibres()[rc.right];
        let w = fibre_distance(fa, fb, dim, p)?;
        let wp = if p == 1 { w } else { w * w };
        acc = acc + rc.mass * wp;
    }
    Ok(if p == 1 { acc } else { acc.max(S::zero()).sqrt() })
}

/// Fibred `W_{π,1}` with the wrap-around ground metric on the 1-D torus.
pub fn fibred_w_torus<S: Scalar>(
    mu: &FibredMeasure<S>,
    nu: &FibredMeasure<S>,
    period: S,
) -> Result<S> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Precondition("torus metric requires d = 1".into()));
    }
    let cells = common_refinement(mu, nu)?;
    let mut acc = S::zero();
    for rc in &cells {
        let fa = &mu.fibres()[rc.left];
        let fb = &nu.fibres()[rc.right];
        let w = w_1d_circular(fa.coords(), fa.weights(), fb.coords(), fb.weights(), period);
        acc = acc + rc.mass * w;
    }
    Ok(acc)
}

fn fibre_distance<S: Scalar>(fa: &Fibre<S>, fb: &Fibre<S>, dim: usize, p: u32) -> Result<S> {
    if dim == 1 {
        Ok(w_1d_weighted(fa.coords(), fa.weights(), fb.coords(), fb.weights(), p))
    } else {
        let res = w_discrete(
            &fa.as_discrete(dim),
            &fb.as_discrete(dim),
            &CostKind::EuclideanPow,
            p,
        )?;
        Ok(res.distance(p))
    }
}

/// Classical `W_p` on `Ω × ℝᵈ`, computed on the flattened supports.
///
/// The product space carries the Euclidean ground metric
/// `d((ω,x),(θ,y)) = (d_Ω² + |x-y|²)^{1/2}`, which collapses to `|x-y|`
/// within a fibre; this is the metric under which the swapped-pair and
/// counterexample values take their closed forms.
///
/// No marginal matching is required. Interval cells enter through their
/// π-mass midpoint representative, so the value is exact for atomic
/// marginals and a cell-resolution surrogate otherwise.
pub fn classical_w_product<S: Scalar>(
    mu: &FibredMeasure<S>,
    nu: &FibredMeasure<S>,
    p: u32,
) -> Result<S> {
    check_p(p)?;
    let a = flatten(mu);
    let b = flatten(nu);
    if a.len() > SOLVER_BUDGET || b.len() > SOLVER_BUDGET {
        return Err(Error::BudgetExceeded { got: a.len().max(b.len()), limit: SOLVER_BUDGET });
    }
    let n = b.len();
    let mut costs = Vec::with_capacity(a.len() * n);
    for pa in &a {
        for pb in &b {
            let dl = pa.0 - pb.0;
            let d2 = dl * dl + dist_pow(&pa.1, &pb.1, 2);
            costs.push(if p == 1 { d2.sqrt() } else { d2 });
        }
    }
    let plan = transportation_simplex(
        &a.iter().map(|e| e.2).collect::<Vec<_>>(),
        &b.iter().map(|e| e.2).collect::<Vec<_>>(),
        &costs,
    )?;
    let mut obj = S::zero();
    for (i, j, f) in plan {
        obj = obj + f * costs[i * n + j];
    }
    Ok(if p == 1 { obj } else { obj.max(S::zero()).sqrt() })
}

/// Flatten a fibred measure to `(label representative, point, mass)` triples.
fn flatten<S: Scalar>(mu: &FibredMeasure<S>) -> Vec<(S, Vec<S>, S)> {
    let dim = mu.dim();
    let mut out = Vec::new();
    for fibre in mu.fibres() {
        let rep = mu.marginal().representative(&fibre.cell);
        for j in 0..fibre.len() {
            out.push((rep, fibre.point(j, dim).to_vec(), fibre.weight * fibre.weights()[j]));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Kantorovich–Rubinstein dual
// ---------------------------------------------------------------------------

/// One per-cell test function, sampled at the support points of both fibres
/// of the common refinement (μ-side values, then ν-side values).
#[derive(Debug, Clone)]
pub struct CellPotential<S: Scalar> {
    pub on_mu: Vec<S>,
    pub on_nu: Vec<S>,
}

/// Evaluate `Σ_k mass_k ∫ φ_k d(μ_k − ν_k)` for a family of certified
/// 1-Lipschitz per-cell potentials. Always a lower bound on `W_{π,1}`.
pub fn kr_dual_value<S: Scalar>(
    mu: &FibredMeasure<S>,
    nu: &FibredMeasure<S>,
    potentials: &[CellPotential<S>],
) -> Result<S> {
    let cells = common_refinement(mu, nu)?;
    if potentials.len() != cells.len() {
        return Err(Error::InvalidPotential(format!(
            "expected {} per-cell potentials, got {}",
            cells.len(),
            potentials.len()
        )));
    }
    let dim = mu.dim();
    let lip_tol = S::tol(1e-9);
    let mut value = S::zero();
    for (rc, phi) in cells.iter().zip(potentials) {
        let fa = &mu.fibres()[rc.left];
        let fb = &nu.fibres()[rc.right];
        if phi.on_mu.len() != fa.len() || phi.on_nu.len() != fb.len() {
            return Err(Error::InvalidPotential("potential sample count mismatch".into()));
        }
        // pairwise slope certification over the union support
        let pts: Vec<(&[S], S)> = (0..fa.len())
            .map(|j| (fa.point(j, dim), phi.on_mu[j]))
            .chain((0..fb.len()).map(|j| (fb.point(j, dim), phi.on_nu[j])))
            .collect();
        for (ai, &(xi, vi)) in pts.iter().enumerate() {
            for &(xj, vj) in pts.iter().skip(ai + 1) {
                let d = crate::scalar::dist(xi, xj);
                if (vi - vj).abs() > d + lip_tol {
                    return Err(Error::InvalidPotential(format!(
                        "slope {} exceeds 1 between support points",
                        ((vi - vj).abs() / d.max(S::tol(1e-300)))
                    )));
                }
            }
        }
        let mut cell_val = S::zero();
        for j in 0..fa.len() {
            cell_val = cell_val + fa.weights()[j] * phi.on_mu[j];
        }
        for j in 0..fb.len() {
            cell_val = cell_val - fb.weights()[j] * phi.on_nu[j];
        }
        value = value + rc.mass * cell_val;
    }
    Ok(value)
}

/// Build the optimal 1-D dual potentials from the fibre CDFs:
/// `φ(x) = -∫^x sign(F_μ - F_ν)`, evaluated at every support point.
///
/// For d = 1 these attain the primal `W_{π,1}` exactly.
pub fn cdf_dual_potentials<S: Scalar>(
    mu: &FibredMeasure<S>,
    nu: &FibredMeasure<S>,
) -> Result<Vec<CellPotential<S>>> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Precondition("CDF potentials require d = 1".into()));
    }
    let cells = common_refinement(mu, nu)?;
    let mut out = Vec::with_capacity(cells.len());
    for rc in &cells {
        let fa = &mu.fibres()[rc.left];
        let fb = &nu.fibres()[rc.right];
        // sorted union of support points with signed weights
        let mut events: Vec<(S, S)> = fa
            .coords()
            .iter()
            .copied()
            .zip(fa.weights().iter().copied())
            .chain(
                fb.coords()
                    .iter()
                    .copied()
                    .zip(fb.weights().iter().map(|&w| -w)),
            )
            .collect();
        events.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        // φ at each union point
        let mut phi_at = Vec::with_capacity(events.len());
        let mut phi = S::zero();
        let mut g = S::zero();
        let mut prev = events[0].0;
        for &(x, dw) in &events {
            let sign = if g > S::zero() {
                S::one()
            } else if g < S::zero() {
                -S::one()
            } else {
                S::zero()
            };
            phi = phi - sign * (x - prev);
            phi_at.push((x, phi));
            g = g + dw;
            prev = x;
        }
        let lookup = |x: S| -> S {
            phi_at
                .iter()
                .find(|&&(px, _)| (px - x).abs() <= S::tol(1e-13))
                .map(|&(_, v)| v)
                .unwrap_or(S::zero())
        };
        out.push(CellPotential {
            on_mu: fa.coords().iter().map(|&x| lookup(x)).collect(),
            on_nu: fb.coords().iter().map(|&x| lookup(x)).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Cell, LabelMarginal};

    fn disc1(points: Vec<(f64, f64)>) -> DiscreteMeasure<f64> {
        DiscreteMeasure::from_scalars(points).unwrap()
    }

    fn normalised(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
        let sum: f64 = points.iter().map(|p| p.1).sum();
        points.iter_mut().for_each(|p| p.1 /= sum);
        points
    }

    /// Brute-force oracle for uniform instances with equal support sizes:
    /// minimum over all assignments.
    fn permutation_oracle(mu: &DiscreteMeasure<f64>, nu: &DiscreteMeasure<f64>, p: u32) -> f64 {
        let n = mu.len();
        assert_eq!(n, nu.len());
        let mut idx: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut idx, 0, &mut |perm| {
            let cost: f64 = (0..n)
                .map(|i| dist_pow(mu.point(i), nu.point(perm[i]), p) / n as f64)
                .sum();
            best = best.min(cost);
        });
        if p == 1 {
            best
        } else {
            best.sqrt()
        }
    }

    fn permute(idx: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == idx.len() {
            f(idx);
            return;
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            permute(idx, k + 1, f);
            idx.swap(k, i);
        }
    }

    #[test]
    fn w1d_basics() {
        let d0 = disc1(vec![(0.0, 1.0)]);
        let d1 = disc1(vec![(1.0, 1.0)]);
        assert!((w_1d(&d0, &d1, 1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(w_1d(&d0, &d0, 1).unwrap(), 0.0);

        // ½(δ₀+δ₂) vs δ₁: verified against the LP below
        let a = disc1(vec![(0.0, 0.5), (2.0, 0.5)]);
        let b = disc1(vec![(1.0, 1.0)]);
        let quantile = w_1d(&a, &b, 1).unwrap();
        assert!((quantile - 1.0).abs() < 1e-15);
        let lp = w_discrete(&a, &b, &CostKind::EuclideanPow, 1).unwrap();
        assert!((lp.distance(1) - quantile).abs() < 1e-12);
    }

    #[test]
    fn w1d_matches_lp_random() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rnd = move || {
            state = crate::scalar::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..40 {
            let na = 2 + (trial % 7);
            let nb = 1 + (trial % 5);
            let a = disc1(normalised(
                (0..na)
                    .map(|_| (rnd() * 4.0 - 2.0, rnd() + 0.05))
                    .collect(),
            ));
            let b = disc1(normalised(
                (0..nb)
                    .map(|_| (rnd() * 4.0 - 2.0, rnd() + 0.05))
                    .collect(),
            ));
            for p in [1u32, 2] {
                let fast = w_1d(&a, &b, p).unwrap();
                let lp = w_discrete(&a, &b, &CostKind::EuclideanPow, p)
                    .unwrap()
                    .distance(p);
                assert!(
                    (fast - lp).abs() < 1e-9,
                    "p={p} quantile {fast} vs lp {lp}"
                );
            }
        }
    }

    #[test]
    fn lp_matches_permutation_oracle() {
        let mut state = 42u64;
        let mut rnd = move || {
            state = crate::scalar::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..60 {
            let n = 2 + trial % 5;
            let d = 1 + trial % 3;
            let w = 1.0 / n as f64;
            let mk = |rnd: &mut dyn FnMut() -> f64| {
                DiscreteMeasure::new(
                    (0..n)
                        .map(|_| ((0..d).map(|_| rnd() * 2.0 - 1.0).collect::<Vec<_>>(), w))
                        .collect(),
                    d,
                )
                .unwrap()
            };
            let a = mk(&mut rnd);
            let b = mk(&mut rnd);
            if a.len() != n || b.len() != n {
                continue; // merged duplicates; oracle needs equal counts
            }
            for p in [1u32, 2] {
                let lp = w_discrete(&a, &b, &CostKind::EuclideanPow, p).unwrap();
                let oracle = permutation_oracle(&a, &b, p);
                assert!(
                    (lp.distance(p) - oracle).abs() < 1e-9,
                    "n={n} d={d} p={p}: lp {} vs oracle {oracle}",
                    lp.distance(p)
                );
                assert!(lp.primal_feasibility_residual < 1e-9);
            }
        }
    }

    #[test]
    fn lp_plan_feasibility_nonuniform() {
        let a = disc1(vec![(0.0, 0.1), (0.5, 0.4), (2.0, 0.5)]);
        let b = disc1(vec![(-1.0, 0.25), (1.0, 0.6), (3.0, 0.15)]);
        let res = w_discrete(&a, &b, &CostKind::EuclideanPow, 1).unwrap();
        assert!(res.primal_feasibility_residual < 1e-12);
        let direct: f64 = res
            .plan
            .iter()
            .map(|&(i, j, f)| f * (a.coords()[i] - b.coords()[j]).abs())
            .sum();
        assert!((direct - res.cost).abs() < 1e-12);
        assert!((res.cost - w_1d(&a, &b, 1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let n = SOLVER_BUDGET + 1;
        let w = 1.0 / n as f64;
        let a = DiscreteMeasure::new(
            (0..n).map(|i| (vec![i as f64], w)).collect::<Vec<_>>(),
            1,
        )
        .unwrap();
        assert!(matches!(
            w_discrete(&a, &a, &CostKind::EuclideanPow, 1),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    fn remark31_pair(
        om1: f64,
        om2: f64,
        x1: f64,
        x2: f64,
    ) -> (FibredMeasure<f64>, FibredMeasure<f64>) {
        let mu1 = FibredMeasure::from_atoms(
            vec![
                (om1, 0.5, vec![(vec![x1], 1.0)]),
                (om2, 0.5, vec![(vec![x2], 1.0)]),
            ],
            1,
        )
        .unwrap();
        let mu2 = FibredMeasure::from_atoms(
            vec![
                (om1, 0.5, vec![(vec![x2], 1.0)]),
                (om2, 0.5, vec![(vec![x1], 1.0)]),
            ],
            1,
        )
        .unwrap();
        (mu1, mu2)
    }

    #[test]
    fn remark_3_1_swapped_pair() {
        // swapped empirical pair: fibred = |x₁-x₂|, classical = min{d_Ω, |x₁-x₂|}
        let (om1, om2, x1, x2) = (0.1, 0.8, -0.25, 0.4);
        let (mu1, mu2) = remark31_pair(om1, om2, x1, x2);
        for p in [1u32, 2] {
            let f = fibred_w(&mu1, &mu2, p).unwrap();
            assert!((f - (x1 - x2).abs()).abs() < 1e-12);
            let c = classical_w_product(&mu1, &mu2, p).unwrap();
            let expect = (om2 - om1).abs().min((x1 - x2).abs());
            assert!((c - expect).abs() < 1e-10, "p={p}: {c} vs {expect}");
        }
    }

    #[test]
    fn rademacher_fibre_distance() {
        // per-fibre δ_{±1} vs ½(δ₋₁+δ₁): every fibre contributes W₁ = 1
        let n = 8;
        let marginal = LabelMarginal::uniform(256);
        let cells: Vec<Cell<f64>> = (0..n)
            .map(|k| Cell::interval(k as f64 / n as f64, (k + 1) as f64 / n as f64))
            .collect();
        let fibres = cells
            .iter()
            .enumerate()
            .map(|(k, &cell)| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                Fibre::new(cell, 1.0 / n as f64, vec![(vec![sign], 1.0)], 1).unwrap()
            })
            .collect();
        let mu = FibredMeasure::new(marginal.clone(), 1, fibres).unwrap();
        let rho = disc1(vec![(-1.0, 0.5), (1.0, 0.5)]);
        let nu = FibredMeasure::product(marginal, cells, &rho).unwrap();
        assert!((fibred_w(&mu, &nu, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn remark_4_1_curves() {
        let eps = 0.3;
        let curve = |t: f64, swapped: bool| {
            let (lo, hi) = if swapped { (1.0, t) } else { (0.0, 1.0 + t) };
            FibredMeasure::from_atoms(
                vec![
                    (0.0, 0.5, vec![(vec![lo], 1.0)]),
                    (eps, 0.5, vec![(vec![hi], 1.0)]),
                ],
                1,
            )
            .unwrap()
        };
        for t in [0.0, 0.5, 1.0] {
            let mu = curve(t, false);
            let nu = curve(t, true);
            assert!((fibred_w(&mu, &nu, 1).unwrap() - 1.0).abs() < 1e-12);
            let c = classical_w_product(&mu, &nu, 1).unwrap();
            let expect = 1.0f64.min((eps * eps + t * t).sqrt());
            assert!((c - expect).abs() < 1e-10, "t={t}: {c} vs {expect}");
        }
    }

    #[test]
    fn lemma_3_1_ordering_random_pairs() {
        let mut state = 7u64;
        let mut rnd = move || {
            state = crate::scalar::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let natoms = 2 + (rnd() * 3.0) as usize;
            let mut weights: Vec<f64> = (0..natoms).map(|_| rnd() + 0.1).collect();
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
            let positions: Vec<f64> = (0..natoms).map(|i| (i as f64 + rnd() * 0.5) / natoms as f64).collect();
            let mk = |rnd: &mut dyn FnMut() -> f64| {
                FibredMeasure::from_atoms(
                    positions
                        .iter()
                        .zip(&weights)
                        .map(|(&o, &w)| {
                            let npts = 1 + (rnd() * 3.0) as usize;
                            (
                                o,
                                w,
                                (0..npts)
                                    .map(|_| (vec![rnd() * 4.0 - 2.0], 1.0 / npts as f64))
                                    .collect(),
                            )
                        })
                        .collect(),
                    1,
                )
                .unwrap()
            };
            let mu = mk(&mut rnd);
            let nu = mk(&mut rnd);
            for p in [1u32, 2] {
                let classical = classical_w_product(&mu, &nu, p).unwrap();
                let fibred = fibred_w(&mu, &nu, p).unwrap();
                assert!(
                    classical <= fibred + 1e-9,
                    "ordering violated: {classical} > {fibred}"
                );
            }
        }
    }

    #[test]
    fn kr_dual_zero_and_cdf_potentials() {
        let (mu1, mu2) = remark31_pair(0.2, 0.9, -1.0, 1.5);
        // φ ≡ 0 gives 0 ≤ W
        let zero: Vec<CellPotential<f64>> = mu1
            .fibres()
            .iter()
            .map(|f| CellPotential {
                on_mu: vec![0.0; f.len()],
                on_nu: vec![0.0; f.len()],
            })
            .collect();
        assert_eq!(kr_dual_value(&mu1, &mu2, &zero).unwrap(), 0.0);

        // constructed CDF potentials attain the primal in d=1
        let pots = cdf_dual_potentials(&mu1, &mu2).unwrap();
        let dual = kr_dual_value(&mu1, &mu2, &pots).unwrap();
        let primal = fibred_w(&mu1, &mu2, 1).unwrap();
        assert!((dual - primal).abs() < 1e-10, "{dual} vs {primal}");
    }

    #[test]
    fn kr_dual_rejects_steep_potentials() {
        let (mu1, mu2) = remark31_pair(0.2, 0.9, 0.0, 1.0);
        let bad: Vec<CellPotential<f64>> = mu1
            .fibres()
            .iter()
            .map(|_| CellPotential { on_mu: vec![5.0], on_nu: vec![0.0] })
            .collect();
        assert!(matches!(
            kr_dual_value(&mu1, &mu2, &bad),
            Err(Error::InvalidPotential(_))
        ));
    }

    #[test]
    fn circular_distance_cases() {
        let period = std::f64::consts::TAU;
        // antipodal diracs: W₁ = π
        let d = w_1d_circular(&[0.0], &[1.0], &[std::f64::consts::PI], &[1.0], period);
        assert!((d - std::f64::consts::PI).abs() < 1e-12);
        // wrap beats the line: 0.1 vs 2π-0.1 is 0.2 apart around the seam
        let d = w_1d_circular(&[0.1], &[1.0], &[period - 0.1], &[1.0], period);
        assert!((d - 0.2).abs() < 1e-12);
        // oracle: exact LP with the wrap-around cost on random instances
        let mut state = 99u64;
        let mut rnd = move || {
            state = crate::scalar::splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..30 {
            let na = 2 + (rnd() * 4.0) as usize;
            let nb = 2 + (rnd() * 4.0) as usize;
            let a = disc1(normalised(
                (0..na).map(|_| (rnd() * period, rnd() + 0.1)).collect(),
            ));
            let b = disc1(normalised(
                (0..nb).map(|_| (rnd() * period, rnd() + 0.1)).collect(),
            ));
            let fast = w_1d_circular(a.coords(), a.weights(), b.coords(), b.weights(), period);
            let lp = w_discrete(&a, &b, &CostKind::TorusPow { period }, 1)
                .unwrap()
                .distance(1);
            assert!((fast - lp).abs() < 1e-9, "median {fast} vs lp {lp}");
        }
    }

    #[test]
    fn lipschitz_pushforward_bound() {
        let (mu, nu) = remark31_pair(0.3, 0.6, -0.8, 1.1);
        let lambda = -2.5f64;
        let phi = |x: &[f64]| vec![lambda * x[0]];
        let mu_p = mu.map_points(phi).unwrap();
        let nu_p = nu.map_points(phi).unwrap();
        for p in [1u32, 2] {
            let lhs = fibred_w(&mu_p, &nu_p, p).unwrap();
            let rhs = lambda.abs() * fibred_w(&mu, &nu, p).unwrap();
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn generic_scalar_f32_smoke() {
        let a = DiscreteMeasure::<f32>::from_scalars(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap();
        let b = DiscreteMeasure::<f32>::from_scalars(vec![(1.0, 1.0)]).unwrap();
        let fast = w_1d(&a, &b, 1).unwrap();
        assert!((fast - 1.0).abs() < 1e-6);
        let lp = w_discrete(&a, &b, &CostKind::EuclideanPow, 1).unwrap();
        assert!((lp.distance(1) - fast).abs() < 1e-5);

        let mu = FibredMeasure::<f32>::from_atoms(
            vec![
                (0.1, 0.5, vec![(vec![-1.0], 1.0)]),
                (0.8, 0.5, vec![(vec![1.0], 1.0)]),
            ],
            1,
        )
        .unwrap();
        let nu = FibredMeasure::<f32>::from_atoms(
            vec![
                (0.1, 0.5, vec![(vec![1.0], 1.0)]),
                (0.8, 0.5, vec![(vec![-1.0], 1.0)]),
            ],
            1,
        )
        .unwrap();
        assert!((fibred_w(&mu, &nu, 1).unwrap() - 2.0).abs() < 1e-5);
        let c = classical_w_product(&mu, &nu, 1).unwrap();
        assert!((c - 0.7).abs() < 1e-5);
    }

    #[test]
    fn incomparable_marginals_error() {
        let rho = disc1(vec![(0.0, 1.0)]);
        let a = FibredMeasure::product(
            LabelMarginal::atoms(vec![(0.2, 0.5), (0.7, 0.5)]),
            vec![Cell::atom(0.2), Cell::atom(0.7)],
            &rho,
        )
        .unwrap();
        let b = FibredMeasure::product(
            LabelMarginal::atoms(vec![(0.2, 0.4), (0.7, 0.6)]),
            vec![Cell::atom(0.2), Cell::atom(0.7)],
            &rho,
        )
        .unwrap();
        assert!(matches!(
            fibred_w(&a, &b, 1),
            Err(Error::IncomparableMarginals(_))
        ));
    }
}
