//! Explicit constants, runtime-verified bound envelopes and empirical
//! convergence-rate fitting.

use serde::Serialize;

use crate::dynamics::{MeasureCurve, TrajectoryEnsemble};
use crate::error::{Error, Result};
use crate::fields::{LabelKernel, PairKernel, TimeProfile, VectorField};
use crate::measures::FibredMeasure;
use crate::scalar::Scalar;
use crate::transport::{fibred_w, w_1d_weighted, w_discrete, CostKind};

// ---------------------------------------------------------------------------
// Records and reports
// ---------------------------------------------------------------------------

/// One sweep point of a mean-field convergence experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRecord {
    /// Total particle count `N = n * m`.
    pub n_total: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    /// `sup_t W_{π,1}` against the reference curve.
    pub sup_error: f64,
    /// Wall-clock cost; written to the records CSV but excluded from the
    /// summary JSON so outputs stay byte-identical across runs.
    #[serde(skip_serializing)]
    pub runtime_seconds: f64,
}

/// Outcome of one verified inequality `lhs ≤ rhs` (slack = rhs − lhs).
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl BoundReport {
    /// Slack below `-1e-6` fails: bounds are genuine up to integrator slop.
    pub const SLACK_TOL: f64 = 1e-6;

    pub fn new<S: Scalar>(name: impl Into<String>, lhs: S, rhs: S) -> Self {
        let lhs = lhs.to_f64().unwrap_or(f64::NAN);
        let rhs = rhs.to_f64().unwrap_or(f64::NAN);
        let slack = rhs - lhs;
        BoundReport {
            name: name.into(),
            lhs,
            rhs,
            slack,
            pass: slack >= -Self::SLACK_TOL,
        }
    }
}

// ---------------------------------------------------------------------------
// Explicit constants
// ---------------------------------------------------------------------------

/// Support-propagation constant `R_r = (r + ‖m‖₁) exp(2‖m‖₁)`.
pub fn r_big<S: Scalar>(r: S, m_norm: S) -> S {
    (r + m_norm) * (S::of(2.0) * m_norm).exp()
}

/// Regularity constant of the a-priori AC bound:
/// `C_T = max{1, ‖m‖₁} exp(‖m‖₁)`.
pub fn c_t_moment<S: Scalar>(m_norm: S) -> S {
    S::one().max(m_norm) * m_norm.exp()
}

/// Grönwall constant of the particle-approximation estimates:
/// `C_T = exp(‖L_{R_r}‖₁)`.
pub fn c_t_lip<S: Scalar>(l_norm: S) -> S {
    l_norm.exp()
}

/// Envelope constant `D_r = exp((1 + C_T + 2C_T²) ‖L_{R_r}‖₁)`.
pub fn d_big<S: Scalar>(l_norm: S) -> S {
    let ct = c_t_lip(l_norm);
    ((S::one() + ct + S::of(2.0) * ct * ct) * l_norm).exp()
}

/// Empirical-measure sampling rate `r C_d m^{-1/2}` (times `ln(1+m)` in d=2).
pub fn fg_bound<S: Scalar>(r: S, d: usize, m: usize, c_d: S) -> S {
    let mf = S::from_usize(m).unwrap();
    let base = r * c_d / mf.sqrt();
    if d == 2 {
        base * (S::one() + mf).ln()
    } else {
        base
    }
}

/// Quantitative particle-approximation envelope at `m := n²`:
/// `D_r (2 Var(𝒱_r) + Var(μ⁰)) N^{-1/3} + r C_d D_r ·
///  {N^{-1/3} (d≠2) | N^{-1/3} ln(1+N^{2/3}) (d=2)}`.
pub fn quantitative_bound<S: Scalar>(
    var_mu0: S,
    var_field: S,
    r: S,
    d: usize,
    n_total: usize,
    d_r: S,
    c_d: S,
) -> S {
    let nf = S::from_usize(n_total).unwrap();
    let n_cbrt = nf.powf(-S::one() / S::of(3.0));
    let bv_term = d_r * (S::of(2.0) * var_field + var_mu0) * n_cbrt;
    let sampling = if d == 2 {
        r * c_d * d_r * n_cbrt * (S::one() + nf.powf(S::of(2.0) / S::of(3.0))).ln()
    } else {
        r * c_d * d_r * n_cbrt
    };
    bv_term + sampling
}

// ---------------------------------------------------------------------------
// Variation estimates
// ---------------------------------------------------------------------------

/// Variation of a piecewise-constant fibre map: the telescoped sum of
/// per-fibre `W₁` distances between consecutive cells.
pub fn measure_variation<S: Scalar>(mu: &FibredMeasure<S>) -> Result<S> {
    let dim = mu.dim();
    let mut var = S::zero();
    for pair in mu.fibres().windows(2) {
        let d = if dim == 1 {
            w_1d_weighted(
                pair[0].coords(),
                pair[0].weights(),
                pair[1].coords(),
                pair[1].weights(),
                1,
            )
        } else {
            w_discrete(
                &pair[0].as_discrete(dim),
                &pair[1].as_discrete(dim),
                &CostKind::EuclideanPow,
                1,
            )?
            .distance(1)
        };
        var = var + d;
    }
    Ok(var)
}

/// Variation bound of a graphon field over the label variable:
/// `Var(𝒱_r) ≤ ‖Ψ‖_{C⁰(B_R²)} · T · Σ_θ-cells π(cell) Var_ω(w(·,θ))`.
///
/// Only step kernels carry an exact finite variation; other kernels return
/// `Precondition`.
pub fn graphon_field_variation<S: Scalar>(
    field: &VectorField<S>,
    radius: S,
    t_end: S,
) -> Result<S> {
    let crate::fields::FieldKind::Graphon { w, psi } = field.kind() else {
        return Err(Error::Precondition(
            "field variation is computed for graphon fields".into(),
        ));
    };
    let LabelKernel::Step { partition, values } = w else {
        return Err(Error::Precondition(
            "field variation needs a step kernel (bounded variation by construction)".into(),
        ));
    };
    let psi_sup = match psi {
        PairKernel::Sine { coupling } => coupling.abs(),
        PairKernel::Difference => S::of(2.0) * radius,
        PairKernel::Callback { lip, at_zero, .. } => {
            *at_zero + *lip * S::of(2.0) * radius
        }
    };
    let n = partition.len();
    let mut total = S::zero();
    for (j, &mass) in partition.masses().iter().enumerate() {
        let mut var_omega = S::zero();
        for i in 0..n - 1 {
            var_omega = var_omega + (values[(i + 1) * n + j] - values[i * n + j]).abs();
        }
        total = total + mass * var_omega;
    }
    Ok(psi_sup * t_end * total)
}

// ---------------------------------------------------------------------------
// A-priori bound verification
// ---------------------------------------------------------------------------

/// Particle bound: `max_i |x_i(t)| ≤ (max_i |x_i(0)| + ‖m‖₁) exp(2‖m‖₁)`
/// at every node; the report carries the worst node.
pub fn particle_bound_report<S: Scalar>(
    traj: &TrajectoryEnsemble<S>,
    m_norm: S,
) -> BoundReport {
    let rhs = (traj.max_radius(0) + m_norm) * (S::of(2.0) * m_norm).exp();
    let mut worst_lhs = S::zero();
    for s in 0..traj.states.len() {
        worst_lhs = worst_lhs.max(traj.max_radius(s));
    }
    BoundReport::new("particle_max_bound", worst_lhs, rhs)
}

/// Support bound along a curve: `support_radius(μ(t)) ≤ R_r`.
pub fn support_bound_report<S: Scalar>(curve: &MeasureCurve<S>, m_norm: S) -> BoundReport {
    let r0 = curve.measures[0].support_radius();
    let rhs = r_big(r0, m_norm);
    let mut worst = S::zero();
    for m in &curve.measures {
        worst = worst.max(m.support_radius());
    }
    BoundReport::new("support_radius_bound", worst, rhs)
}

/// Per-fibre moment bound along a curve:
/// `𝓜₁(μ_ω(t)) ≤ (𝓜₁(μ_ω(0)) + ∫₀ᵗ m) exp(∫₀ᵗ m)` for every fibre and node.
pub fn moment_bound_report<S: Scalar>(
    curve: &MeasureCurve<S>,
    m_profile: &TimeProfile<S>,
) -> BoundReport {
    let dim = curve.measures[0].dim();
    let fibre_moment = |f: &crate::measures::Fibre<S>| -> S {
        let mut acc = S::zero();
        for j in 0..f.len() {
            acc = acc + f.weights()[j] * crate::scalar::norm(f.point(j, dim));
        }
        acc
    };
    let m0: Vec<S> = curve.measures[0].fibres().iter().map(fibre_moment).collect();
    let mut worst_slack = S::infinity();
    let mut worst = (S::zero(), S::zero());
    for (s, t) in curve.grid.nodes().enumerate() {
        let integral = m_profile.integral(S::zero(), t);
        for (k, fibre) in curve.measures[s].fibres().iter().enumerate() {
            let lhs = fibre_moment(fibre);
            let rhs = (m0[k] + integral) * integral.exp();
            if rhs - lhs < worst_slack {
                worst_slack = rhs - lhs;
                worst = (lhs, rhs);
            }
        }
    }
    BoundReport::new("fibre_moment_bound", worst.0, worst.1)
}

/// Absolute-continuity bound between consecutive nodes:
/// `W_{π,1}(μ(t₁),μ(t₂)) ≤ (1 + 𝓜_{π,1}(μ⁰))(1 + C_T) ∫_{t₁}^{t₂} m`.
pub fn ac_bound_report<S: Scalar>(
    curve: &MeasureCurve<S>,
    m_profile: &TimeProfile<S>,
    m_norm: S,
) -> Result<BoundReport> {
    let moment0 = curve.measures[0].fibred_moment(1)?;
    let ct = c_t_moment(m_norm);
    let factor = (S::one() + moment0) * (S::one() + ct);
    let mut worst_slack = S::infinity();
    let mut worst = (S::zero(), S::zero());
    for s in 0..curve.measures.len() - 1 {
        let t1 = curve.grid.node(s);
        let t2 = curve.grid.node(s + 1);
        let lhs = fibred_w(&curve.measures[s], &curve.measures[s + 1], 1)?;
        let rhs = factor * m_profile.integral(t1, t2);
        if rhs - lhs < worst_slack {
            worst_slack = rhs - lhs;
            worst = (lhs, rhs);
        }
    }
    Ok(BoundReport::new("absolute_continuity_bound", worst.0, worst.1))
}

// ---------------------------------------------------------------------------
// Stability envelope
// ---------------------------------------------------------------------------

/// Per-node Grönwall envelope between two solution curves:
/// `W_{π,1}(μ(t),ν(t)) ≤ (W_{π,1}(μ⁰,ν⁰) + ∫₀ᵗ ∫_Ω ‖v(s,μ(s),ω) − w(s,ω)‖_{∞;ν_ω(s)} dπ ds) · exp(‖L‖₁)`.
///
/// The sup-norm term is evaluated over the support points of `ν(s)`; the
/// comparison field `w` is evaluated along its own solution curve.
pub fn stability_envelope<S: Scalar>(
    curve_mu: &MeasureCurve<S>,
    curve_nu: &MeasureCurve<S>,
    field_v: &VectorField<S>,
    field_w: &VectorField<S>,
    l_norm: S,
) -> Result<Vec<BoundReport>> {
    if curve_mu.grid.steps != curve_nu.grid.steps
        || (curve_mu.grid.t_end - curve_nu.grid.t_end).abs() > S::tol(1e-12)
    {
        return Err(Error::Precondition("curves live on different grids".into()));
    }
    // both curves must stay inside the ball that localises the Lipschitz bound
    let r0 = curve_mu.measures[0]
        .support_radius()
        .max(curve_nu.measures[0].support_radius());
    let m_norm = field_v
        .growth()
        .m_l1(curve_mu.grid.t_end)
        .max(field_w.growth().m_l1(curve_mu.grid.t_end));
    let rr = r_big(r0, m_norm);
    for (ma, mb) in curve_mu.measures.iter().zip(&curve_nu.measures) {
        if ma.support_radius() > rr + S::tol(1e-6) || mb.support_radius() > rr + S::tol(1e-6) {
            return Err(Error::Precondition(format!(
                "curve support escapes B(0, R_r = {rr})"
            )));
        }
    }

    let dim = curve_mu.measures[0].dim();
    let w0 = fibred_w(&curve_mu.measures[0], &curve_nu.measures[0], 1)?;
    let gronwall = l_norm.exp();

    // field mismatch ∫_Ω ‖v(s,μ(s),ω) − w(s,ω)‖_{∞;ν_ω(s)} dπ(ω) per node
    let mut mismatch = Vec::with_capacity(curve_mu.len());
    for (s, t) in curve_mu.grid.nodes().enumerate() {
        let mu_s = &curve_mu.measures[s];
        let nu_s = &curve_nu.measures[s];
        let mu_view = mu_s.view();
        let nu_view = nu_s.view();
        let mut acc = S::zero();
        let mut va = vec![S::zero(); dim];
        let mut vb = vec![S::zero(); dim];
        for fibre in nu_s.fibres() {
            let omega = nu_s.marginal().representative(&fibre.cell);
            let mut sup = S::zero();
            for j in 0..fibre.len() {
                let y = fibre.point(j, dim);
                field_v.eval(t, &mu_view, omega, y, &mut va)?;
                field_w.eval(t, &nu_view, omega, y, &mut vb)?;
                sup = sup.max(crate::scalar::dist(&va, &vb));
            }
            acc = acc + fibre.weight * sup;
        }
        mismatch.push(acc);
    }

    // trapezoid accumulation of the mismatch integral
    let dt = curve_mu.grid.dt();
    let mut reports = Vec::with_capacity(curve_mu.len());
    let mut integral = S::zero();
    for s in 0..curve_mu.len() {
        if s > 0 {
            integral = integral + (mismatch[s - 1] + mismatch[s]) * dt * S::of(0.5);
        }
        let lhs = fibred_w(&curve_mu.measures[s], &curve_nu.measures[s], 1)?;
        let rhs = (w0 + integral) * gronwall;
        reports.push(BoundReport::new(format!("stability_envelope[{s}]"), lhs, rhs));
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Sampling-rate measurements
// ---------------------------------------------------------------------------

/// `W₁` gap between an `m`-sample empirical law and the cell-averaged fibre
/// it was drawn from (d = 1).
pub fn sampling_gap<S: Scalar>(
    mu0: &FibredMeasure<S>,
    coarse: &crate::discretize::Partition<S>,
    cell_idx: usize,
    m: usize,
    seed: u64,
) -> Result<S> {
    if mu0.dim() != 1 {
        return Err(Error::Precondition("sampling gap is measured in d = 1".into()));
    }
    let averaged = mu0.conditional_expectation(coarse.cells())?;
    let fibre = &averaged.fibres()[cell_idx];
    let sample = crate::discretize::sample_initial(mu0, coarse, m, seed)?;
    let block = &sample.positions[cell_idx * m..(cell_idx + 1) * m];
    let w = S::one() / S::from_usize(m).unwrap();
    let ws = vec![w; m];
    Ok(w_1d_weighted(block, &ws, fibre.coords(), fibre.weights(), 1))
}

/// Calibrate the sampling constant `C_d` (d = 1) on the experiment's own
/// initial mixtures: the smallest constant making `r C_d m^{-1/2}` an
/// envelope of the measured mean gaps over the calibration sizes.
pub fn calibrate_c_d<S: Scalar>(
    mu0: &FibredMeasure<S>,
    coarse: &crate::discretize::Partition<S>,
    sizes: &[usize],
    seeds: &[u64],
    r: S,
) -> Result<S> {
    if r <= S::zero() {
        return Err(Error::Precondition("support radius must be positive".into()));
    }
    let mut c_d = S::zero();
    for &m in sizes {
        let mut mean = S::zero();
        let mut count = 0usize;
        for &seed in seeds {
            for cell in 0..coarse.len() {
                mean = mean + sampling_gap(mu0, coarse, cell, m, seed)?;
                count += 1;
            }
        }
        mean = mean / S::from_usize(count).unwrap();
        c_d = c_d.max(mean * S::from_usize(m).unwrap().sqrt() / r);
    }
    Ok(c_d)
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

/// Least-squares fit of `log E[sup_t err]` against `log N`; errors are
/// averaged over seeds per `N` first.
pub fn fit_rate(records: &[ConvergenceRecord]) -> Result<(f64, f64, f64)> {
    let mut by_n: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for rec in records {
        let e = by_n.entry(rec.n_total).or_insert((0.0, 0));
        e.0 += rec.sup_error;
        e.1 += 1;
    }
    if by_n.len() < 4 {
        return Err(Error::Fit(format!(
            "need >= 4 distinct N values, got {}",
            by_n.len()
        )));
    }
    let points: Vec<(f64, f64)> = by_n
        .iter()
        .map(|(&n, &(sum, cnt))| (n as f64, sum / cnt as f64))
        .collect();
    if points.iter().any(|&(_, e)| e <= 0.0) {
        return Err(Error::Fit("zero or negative mean errors".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((slope, intercept, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::equipartition;
    use crate::dynamics::{delayed_euler_curve, TimeGrid};
    use crate::fields::{local_field, zero_field, GrowthProfile, LabelKernel};
    use crate::measures::{Cell, DiscreteMeasure, LabelMarginal};

    #[test]
    fn r_big_values() {
        assert_eq!(r_big(0.0f64, 0.0), 0.0);
        assert_eq!(r_big(1.0f64, 0.0), 1.0);
        let ln2 = std::f64::consts::LN_2;
        assert!((r_big(1.0, ln2) - (1.0 + ln2) * 4.0).abs() < 1e-12);
        assert!((r_big(1.0, ln2) - 6.772588722239782).abs() < 1e-12);
    }

    #[test]
    fn fg_bound_scaling() {
        // quadrupling m halves the d=1 bound
        let b1 = fg_bound(1.0f64, 1, 100, 2.0);
        let b4 = fg_bound(1.0, 1, 400, 2.0);
        assert!((b1 / b4 - 2.0).abs() < 1e-12);
        // d=2 picks up the log factor
        let b2 = fg_bound(1.0, 2, 100, 2.0);
        assert!((b2 - b1 * (101.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn quantitative_bound_properties() {
        // all variations zero and C_d = 0 → 0
        assert_eq!(quantitative_bound(0.0f64, 0.0, 1.0, 1, 64, 2.0, 0.0), 0.0);
        // doubling both variations doubles the BV summand
        let base = quantitative_bound(1.0f64, 1.0, 0.0, 1, 64, 2.0, 0.0);
        let twice = quantitative_bound(2.0, 2.0, 0.0, 1, 64, 2.0, 0.0);
        assert!((twice - 2.0 * base).abs() < 1e-12);
        // monotone nonincreasing in N
        let mut last = f64::INFINITY;
        for n in [64usize, 512, 4096, 32768] {
            let b = quantitative_bound(1.0f64, 1.0, 1.0, 1, n, 2.0, 1.5);
            assert!(b <= last);
            last = b;
        }
    }

    #[test]
    fn fit_rate_recovers_synthetic_power_laws() {
        let mk = |c: f64, rate: f64| -> Vec<ConvergenceRecord> {
            [64usize, 512, 4096, 32768]
                .iter()
                .map(|&n| ConvergenceRecord {
                    n_total: n,
                    n: 4,
                    m: 4,
                    seed: 0,
                    sup_error: c * (n as f64).powf(rate),
                    runtime_seconds: 0.0,
                })
                .collect()
        };
        let (slope, intercept, residual) = fit_rate(&mk(2.5, -1.0 / 3.0)).unwrap();
        assert!((slope + 1.0 / 3.0).abs() < 1e-10);
        assert!((intercept - 2.5f64.ln()).abs() < 1e-10);
        assert!(residual < 1e-10);

        let (slope, _, residual) = fit_rate(&mk(0.7, -0.5)).unwrap();
        assert!((slope + 0.5).abs() < 1e-10);
        assert!(residual < 1e-10);

        // degenerate input is rejected
        let zeroes: Vec<ConvergenceRecord> = mk(0.0, -0.5);
        assert!(matches!(fit_rate(&zeroes), Err(Error::Fit(_))));
    }

    #[test]
    fn measure_variation_of_step_data() {
        let pi = LabelMarginal::<f64>::uniform(256);
        let cells = equipartition(&pi, 4).unwrap();
        let fibres = cells
            .cells()
            .iter()
            .enumerate()
            .map(|(k, &cell)| {
                crate::measures::Fibre::new(cell, 0.25, vec![(vec![0.5 * k as f64], 1.0)], 1)
                    .unwrap()
            })
            .collect();
        let mu = FibredMeasure::new(pi, 1, fibres).unwrap();
        // consecutive one-point fibres at distance 0.5 each: Var = 1.5
        assert!((measure_variation(&mu).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn graphon_variation_of_step_kernel() {
        let pi = LabelMarginal::<f64>::uniform(256);
        let steps = equipartition(&pi, 2).unwrap();
        // w rows: [0, 1] then [h, 1]: Var_ω(w(·,θ₁)) = h, Var_ω(w(·,θ₂)) = 0
        let h = 0.7;
        let w = LabelKernel::step(steps, vec![0.0, 1.0, h, 1.0]).unwrap();
        let field = crate::fields::kuramoto_field(2.0, w);
        let var = graphon_field_variation(&field, 1.0, 3.0).unwrap();
        // ‖Ψ‖ = K = 2, T = 3, Σ mass·Var = ½h
        assert!((var - 2.0 * 3.0 * 0.5 * h).abs() < 1e-12);
    }

    #[test]
    fn stability_envelope_trivial_and_counterexample() {
        // v = w and equal data: both sides vanish
        let pi = LabelMarginal::<f64>::uniform(128);
        let mu0 = FibredMeasure::product(
            pi.clone(),
            vec![Cell::interval(0.0, 1.0)],
            &DiscreteMeasure::from_scalars(vec![(0.25, 1.0)]).unwrap(),
        )
        .unwrap();
        let field = zero_field(1);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let curve = delayed_euler_curve(&field, &mu0, grid, 2, 1).unwrap();
        let reports = stability_envelope(&curve, &curve, &field, &field, 0.0).unwrap();
        for r in &reports {
            assert_eq!(r.lhs, 0.0);
            assert_eq!(r.rhs, 0.0);
            assert!(r.pass);
        }

        // stability counterexample: labels 0 and ε carry opposite drifts;
        // the fibred envelope is tight (lhs = rhs = 1) with L ≡ 0
        let eps = 0.3;
        let mk = |lo: f64, hi: f64| {
            FibredMeasure::from_atoms(
                vec![
                    (0.0, 0.5, vec![(vec![lo], 1.0)]),
                    (eps, 0.5, vec![(vec![hi], 1.0)]),
                ],
                1,
            )
            .unwrap()
        };
        let mu0 = mk(0.0, 1.0);
        let nu0 = mk(1.0, 0.0);
        let growth = GrowthProfile::uniform(
            crate::fields::TimeProfile::Constant(1.0),
            crate::fields::TimeProfile::Constant(0.0),
        );
        let drift = move |_t: f64, omega: f64, _x: &[f64], out: &mut [f64]| {
            out[0] = if omega > eps / 2.0 { 1.0 } else { 0.0 };
        };
        let field_v = local_field(drift, 1, growth.clone());
        let field_w = local_field(drift, 1, growth);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let curve_mu = delayed_euler_curve(&field_v, &mu0, grid, 2, 10).unwrap();
        let curve_nu = delayed_euler_curve(&field_w, &nu0, grid, 2, 10).unwrap();
        let reports =
            stability_envelope(&curve_mu, &curve_nu, &field_v, &field_w, 0.0).unwrap();
        for r in &reports {
            assert!((r.lhs - 1.0).abs() < 1e-12, "{r:?}");
            assert!((r.rhs - 1.0).abs() < 1e-12, "{r:?}");
            assert!(r.pass);
        }
    }

    #[test]
    fn bound_reports_flag_violations() {
        let fail = BoundReport::new("x", 1.0, 0.5);
        assert!(!fail.pass);
        assert!((fail.slack + 0.5).abs() < 1e-15);
        let pass = BoundReport::new("x", 0.5, 1.0);
        assert!(pass.pass);
    }
}
