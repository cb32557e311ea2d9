//! Nonlocal vector fields `v(t, μ, ω, x)` with declared growth metadata, and
//! the model catalogue: graphon interactions, Kuramoto coupling, heterogeneous
//! Michaelis–Menten kinetics, leader–follower dynamics and linear fields.
//!
//! Measure integrals are evaluated by exact summation over the finite fibred
//! support; the label argument of kernels is the fibre's cell representative,
//! so there is no quadrature error at the measure level.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::discretize::Partition;
use crate::error::{Error, Result};
use crate::measures::{Cell, Fibre, FibredMeasure, LabelMarginal, MeasureView};
use crate::scalar::{norm, Scalar};

// ---------------------------------------------------------------------------
// Time profiles and growth metadata
// ---------------------------------------------------------------------------

/// A nonnegative integrable function of time, closed-form constant or sampled.
#[derive(Debug, Clone)]
pub enum TimeProfile<S: Scalar> {
    Constant(S),
    Sampled { ts: Vec<S>, vals: Vec<S> },
}

impl<S: Scalar> TimeProfile<S> {
    pub fn eval(&self, t: S) -> S {
        match self {
            TimeProfile::Constant(c) => *c,
            TimeProfile::Sampled { ts, vals } => {
                if t <= ts[0] {
                    return vals[0];
                }
                if t >= ts[ts.len() - 1] {
                    return vals[vals.len() - 1];
                }
                let i = ts.partition_point(|&s| s <= t) - 1;
                let frac = (t - ts[i]) / (ts[i + 1] - ts[i]);
                vals[i] + (vals[i + 1] - vals[i]) * frac
            }
        }
    }

    /// `∫_{t0}^{t1}` of the profile (closed form for constants, trapezoid for
    /// sampled profiles).
    pub fn integral(&self, t0: S, t1: S) -> S {
        match self {
            TimeProfile::Constant(c) => *c * (t1 - t0),
            TimeProfile::Sampled { ts, .. } => {
                let steps = 4 * ts.len().max(16);
                let h = (t1 - t0) / S::from_usize(steps).unwrap();
                let mut acc = (self.eval(t0) + self.eval(t1)) * S::of(0.5);
                for i in 1..steps {
                    acc = acc + self.eval(t0 + h * S::from_usize(i).unwrap());
                }
                acc * h
            }
        }
    }

    /// `‖·‖_{L¹([0, t_end])}`.
    pub fn norm_l1(&self, t_end: S) -> S {
        self.integral(S::zero(), t_end)
    }
}

/// Declared regularity of a field: sublinearity profile `m(·)` and local
/// Lipschitz profiles `L_R(·)`, monotone nondecreasing in `R`.
#[derive(Clone)]
pub struct GrowthProfile<S: Scalar> {
    pub m: TimeProfile<S>,
    lip: LipSpec<S>,
}

#[derive(Clone)]
enum LipSpec<S: Scalar> {
    Uniform(TimeProfile<S>),
    PerRadius(Arc<dyn Fn(S) -> TimeProfile<S> + Send + Sync>),
}

impl<S: Scalar> GrowthProfile<S> {
    pub fn uniform(m: TimeProfile<S>, lip: TimeProfile<S>) -> Self {
        GrowthProfile { m, lip: LipSpec::Uniform(lip) }
    }

    pub fn per_radius(
        m: TimeProfile<S>,
        lip: impl Fn(S) -> TimeProfile<S> + Send + Sync + 'static,
    ) -> Self {
        GrowthProfile { m, lip: LipSpec::PerRadius(Arc::new(lip)) }
    }

    /// Lipschitz profile at radius `r`.
    pub fn l_r(&self, r: S) -> TimeProfile<S> {
        match &self.lip {
            LipSpec::Uniform(p) => p.clone(),
            LipSpec::PerRadius(f) => f(r),
        }
    }

    pub fn m_l1(&self, t_end: S) -> S {
        self.m.norm_l1(t_end)
    }

    pub fn l_r_l1(&self, r: S, t_end: S) -> S {
        self.l_r(r).norm_l1(t_end)
    }
}

impl<S: Scalar> std::fmt::Debug for GrowthProfile<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrowthProfile").field("m", &self.m).finish()
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// A bounded kernel `w(ω, θ)` on `[0,1]²`.
#[derive(Clone)]
pub enum LabelKernel<S: Scalar> {
    Constant(S),
    /// Closed-form callback with a declared sup bound.
    Callback { f: Arc<dyn Fn(S, S) -> S + Send + Sync>, sup: S },
    /// Step kernel: `w(ω,θ) = values[i·n + j]` on `cell_i × cell_j`.
    Step { partition: Partition<S>, values: Vec<S> },
}

impl<S: Scalar> LabelKernel<S> {
    pub fn step(partition: Partition<S>, values: Vec<S>) -> Result<Self> {
        let n = partition.len();
        if values.len() != n * n {
            return Err(Error::Precondition(format!(
                "step kernel needs {}x{} values",
                n, n
            )));
        }
        Ok(LabelKernel::Step { partition, values })
    }

    pub fn eval(&self, omega: S, theta: S) -> S {
        match self {
            LabelKernel::Constant(c) => *c,
            LabelKernel::Callback { f, .. } => f(omega, theta),
            LabelKernel::Step { partition, values } => {
                let n = partition.len();
                let i = partition.locate(omega).unwrap_or(0);
                let j = partition.locate(theta).unwrap_or(0);
                values[i * n + j]
            }
        }
    }

    pub fn sup(&self) -> S {
        match self {
            LabelKernel::Constant(c) => c.abs(),
            LabelKernel::Callback { sup, .. } => *sup,
            LabelKernel::Step { values, .. } => values
                .iter()
                .fold(S::zero(), |acc, &v| acc.max(v.abs())),
        }
    }

    /// Partition on which the kernel is piecewise constant in ω, if any.
    pub fn steps(&self) -> Option<&Partition<S>> {
        match self {
            LabelKernel::Step { partition, .. } => Some(partition),
            _ => None,
        }
    }
}

impl<S: Scalar> std::fmt::Debug for LabelKernel<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelKernel::Constant(c) => write!(f, "Constant({c})"),
            LabelKernel::Callback { sup, .. } => write!(f, "Callback(sup={sup})"),
            LabelKernel::Step { partition, .. } => write!(f, "Step(n={})", partition.len()),
        }
    }
}

/// A bounded function of a single label with a declared sup bound.
#[derive(Clone)]
pub enum LabelFn<S: Scalar> {
    Constant(S),
    Callback { f: Arc<dyn Fn(S) -> S + Send + Sync>, sup: S },
}

impl<S: Scalar> LabelFn<S> {
    pub fn eval(&self, omega: S) -> S {
        match self {
            LabelFn::Constant(c) => *c,
            LabelFn::Callback { f, .. } => f(omega),
        }
    }

    pub fn sup(&self) -> S {
        match self {
            LabelFn::Constant(c) => c.abs(),
            LabelFn::Callback { sup, .. } => *sup,
        }
    }
}

/// Pair interaction `Ψ(x, y)` with per-argument Lipschitz constant and the
/// magnitude `|Ψ(0,0)|` declared for the growth profile.
#[derive(Clone)]
pub enum PairKernel<S: Scalar> {
    /// `Ψ(x,y) = K sin(y - x)` on the 1-D torus.
    Sine { coupling: S },
    /// `Ψ(x,y) = y - x`.
    Difference,
    Callback {
        f: Arc<PairFn<S>>,
        lip: S,
        at_zero: S,
    },
}

/// Signature of a generic pair-interaction callback `Ψ(x, y) -> out`.
pub type PairFn<S> = dyn Fn(&[S], &[S], &mut [S]) + Send + Sync;

impl<S: Scalar> PairKernel<S> {
    pub fn lip(&self) -> S {
        match self {
            PairKernel::Sine { coupling } => coupling.abs(),
            PairKernel::Difference => S::one(),
            PairKernel::Callback { lip, .. } => *lip,
        }
    }

    pub fn at_zero(&self) -> S {
        match self {
            PairKernel::Sine { .. } => S::zero(),
            PairKernel::Difference => S::zero(),
            PairKernel::Callback { at_zero, .. } => *at_zero,
        }
    }

    /// Accumulate `scale · Σ_j w_j Ψ(x, y_j)` over one fibre into `out`.
    fn accumulate(
        &self,
        x: &[S],
        fibre: &crate::measures::FibreView<'_, S>,
        dim: usize,
        scale: S,
        out: &mut [S],
    ) {
        if scale == S::zero() {
            return;
        }
        match self {
            PairKernel::Sine { coupling } => {
                let (mut sin_sum, mut cos_sum) = (S::zero(), S::zero());
                for j in 0..fibre.npoints(dim) {
                    let y = fibre.xs[j];
                    sin_sum = sin_sum + fibre.ws.get(j) * y.sin();
                    cos_sum = cos_sum + fibre.ws.get(j) * y.cos();
                }
                out[0] = out[0] + scale * *coupling * (x[0].cos() * sin_sum - x[0].sin() * cos_sum);
            }
            PairKernel::Difference => {
                for k in 0..dim {
                    let mut mean = S::zero();
                    for j in 0..fibre.npoints(dim) {
                        mean = mean + fibre.ws.get(j) * fibre.point(j, dim)[k];
                    }
                    out[k] = out[k] + scale * (mean - x[k]);
                }
            }
            PairKernel::Callback { f, .. } => {
                let mut buf = vec![S::zero(); dim];
                for j in 0..fibre.npoints(dim) {
                    f(x, fibre.point(j, dim), &mut buf);
                    let w = fibre.ws.get(j) * scale;
                    for k in 0..dim {
                        out[k] = out[k] + w * buf[k];
                    }
                }
            }
        }
    }
}

impl<S: Scalar> std::fmt::Debug for PairKernel<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PairKernel::Sine { coupling } => write!(f, "Sine(K={coupling})"),
            PairKernel::Difference => write!(f, "Difference"),
            PairKernel::Callback { lip, .. } => write!(f, "Callback(lip={lip})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Field catalogue
// ---------------------------------------------------------------------------

type LocalFn<S> = dyn Fn(S, S, &[S], &mut [S]) + Send + Sync;
type ExtFn<S> = dyn Fn(S, &[S], &mut [S]) + Send + Sync;
type ControlFn<S> = dyn Fn(S, S) -> S + Send + Sync;

#[derive(Clone)]
pub enum FieldKind<S: Scalar> {
    Zero,
    /// μ-independent field `v(t, ω, x)`.
    Local { f: Arc<LocalFn<S>> },
    /// `(Ψ_w ⋆ μ)(ω,x) = ∫ w(ω,θ) Ψ(x,y) dμ(θ,y)`.
    Graphon { w: LabelKernel<S>, psi: PairKernel<S> },
    /// `v = ∫ (a(ω,θ) x + b(ω,θ) y) dμ(θ,y)`.
    Linear { a: LabelKernel<S>, b: LabelKernel<S> },
    /// `v = ∫ α(ω,θ) y/(k(ω,θ)+y) dμ + F(ω, ∫ β(θ) y dμ)`,
    /// `F(ω,r) = g(ω) r / (a(ω)+r)`.
    MichaelisMenten {
        alpha: LabelKernel<S>,
        k: LabelKernel<S>,
        k_min: S,
        beta: LabelFn<S>,
        g: LabelFn<S>,
        a: LabelFn<S>,
        a_min: S,
        strict: bool,
    },
    /// `v = 1_leaders(ω)(v_ext(t,x) + u(t,ω)) + ∫ 1_followers(θ) Ψ(x-y) dμ(θ,y)`
    /// (the pair kernel is applied as `Ψ(x, y) := Ψ̃(x - y)` via `Difference`
    /// shape conventions: here `psi` consumes `(x, y)` directly).
    LeaderFollower {
        leaders: Vec<S>,
        followers: (S, S),
        v_ext: Arc<ExtFn<S>>,
        u: Arc<ControlFn<S>>,
        psi: PairKernel<S>,
    },
}

/// A nonlocal vector field with its declared growth metadata.
pub struct VectorField<S: Scalar> {
    pub(crate) kind: FieldKind<S>,
    dim: usize,
    growth: GrowthProfile<S>,
}

impl<S: Scalar> VectorField<S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn growth(&self) -> &GrowthProfile<S> {
        &self.growth
    }

    pub fn kind(&self) -> &FieldKind<S> {
        &self.kind
    }

    /// Replace the declared growth metadata (e.g. a user-supplied `m`).
    pub fn with_growth(mut self, growth: GrowthProfile<S>) -> Self {
        self.growth = growth;
        self
    }

    /// Fields that never read the measure argument converge in one Picard sweep.
    pub fn is_mu_independent(&self) -> bool {
        matches!(self.kind, FieldKind::Zero | FieldKind::Local { .. })
    }

    /// Partition on which the field is piecewise constant in ω, if declared.
    pub fn omega_steps(&self) -> Option<&Partition<S>> {
        match &self.kind {
            FieldKind::Graphon { w, .. } => w.steps(),
            FieldKind::Linear { a, b } => a.steps().or_else(|| b.steps()),
            _ => None,
        }
    }

    /// Evaluate `v(t, μ, ω, x)` into `out`.
    pub fn eval(
        &self,
        t: S,
        mu: &MeasureView<'_, S>,
        omega: S,
        x: &[S],
        out: &mut [S],
    ) -> Result<()> {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|o| *o = S::zero());
        match &self.kind {
            FieldKind::Zero => {}
            FieldKind::Local { f } => f(t, omega, x, out),
            FieldKind::Graphon { w, psi } => {
                for fibre in &mu.fibres {
                    let scale = fibre.mass * w.eval(omega, fibre.rep);
                    psi.accumulate(x, fibre, self.dim, scale, out);
                }
            }
            FieldKind::Linear { a, b } => {
                let mut a_tot = S::zero();
                for fibre in &mu.fibres {
                    a_tot = a_tot + fibre.mass * a.eval(omega, fibre.rep);
                    let scale = fibre.mass * b.eval(omega, fibre.rep);
                    if scale != S::zero() {
                        for (k, o) in out.iter_mut().enumerate() {
                            let mut mean = S::zero();
                            for j in 0..fibre.npoints(self.dim) {
                                mean = mean + fibre.ws.get(j) * fibre.point(j, self.dim)[k];
                            }
                            *o = *o + scale * mean;
                        }
                    }
                }
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = *o + a_tot * xi;
                }
            }
            FieldKind::MichaelisMenten { alpha, k, beta, g, a, strict, .. } => {
                let mut sat = S::zero();
                let mut inner = S::zero();
                for fibre in &mu.fibres {
                    let al = alpha.eval(omega, fibre.rep);
                    let kk = k.eval(omega, fibre.rep);
                    let be = beta.eval(fibre.rep);
                    for j in 0..fibre.npoints(1) {
                        let y = fibre.xs[j];
                        if *strict && y < S::zero() {
                            return Err(Error::Domain(format!(
                                "negative substrate concentration {y}"
                            )));
                        }
                        let wy = fibre.ws.get(j) * fibre.mass;
                        sat = sat + wy * al * y / (kk + y);
                        inner = inner + wy * be * y;
                    }
                }
                let go = g.eval(omega);
                let ao = a.eval(omega);
                out[0] = sat + go * inner / (ao + inner);
            }
            FieldKind::LeaderFollower { leaders, followers, v_ext, u, psi } => {
                let tol = S::tol(1e-12);
                if leaders.iter().any(|&l| (l - omega).abs() <= tol) {
                    v_ext(t, x, out);
                    let drift = u(t, omega);
                    for o in out.iter_mut() {
                        *o = *o + drift;
                    }
                }
                for fibre in &mu.fibres {
                    let is_follower = fibre.rep >= followers.0 && fibre.rep < followers.1;
                    if is_follower {
                        psi.accumulate(x, fibre, self.dim, fibre.mass, out);
                    }
                }
            }
        }
        Ok(())
    }
}

impl<S: Scalar> std::fmt::Debug for VectorField<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match &self.kind {
            FieldKind::Zero => "Zero",
            FieldKind::Local { .. } => "Local",
            FieldKind::Graphon { .. } => "Graphon",
            FieldKind::Linear { .. } => "Linear",
            FieldKind::MichaelisMenten { .. } => "MichaelisMenten",
            FieldKind::LeaderFollower { .. } => "LeaderFollower",
        };
        write!(f, "VectorField({name}, d={})", self.dim)
    }
}

/// The zero field.
pub fn zero_field<S: Scalar>(dim: usize) -> VectorField<S> {
    VectorField {
        kind: FieldKind::Zero,
        dim,
        growth: GrowthProfile::uniform(
            TimeProfile::Constant(S::zero()),
            TimeProfile::Constant(S::zero()),
        ),
    }
}

/// A μ-independent field `v(t, ω, x)` with caller-declared growth metadata.
pub fn local_field<S: Scalar>(
    f: impl Fn(S, S, &[S], &mut [S]) + Send + Sync + 'static,
    dim: usize,
    growth: GrowthProfile<S>,
) -> VectorField<S> {
    VectorField { kind: FieldKind::Local { f: Arc::new(f) }, dim, growth }
}

/// Graphon interaction field `(Ψ_w ⋆ μ)(ω,x) = ∫ w(ω,θ)Ψ(x,y) dμ(θ,y)`.
///
/// Growth: `m(t) = ‖w‖_∞ (|Ψ(0,0)| + Lip Ψ)`, `L_R(t) = ‖w‖_∞ Lip Ψ`.
pub fn graphon_field<S: Scalar>(w: LabelKernel<S>, psi: PairKernel<S>, dim: usize) -> VectorField<S> {
    let m = w.sup() * (psi.at_zero() + psi.lip());
    let l = w.sup() * psi.lip();
    VectorField {
        kind: FieldKind::Graphon { w, psi },
        dim,
        growth: GrowthProfile::uniform(TimeProfile::Constant(m), TimeProfile::Constant(l)),
    }
}

/// Kuramoto coupling on the torus: graphon field with `Ψ(x,y) = K sin(y-x)`,
/// state dimension 1; state wrap-around is deferred to the metric layer.
pub fn kuramoto_field<S: Scalar>(coupling: S, w: LabelKernel<S>) -> VectorField<S> {
    graphon_field(w, PairKernel::Sine { coupling }, 1)
}

/// Linear field `v = ∫ (a(ω,θ)x + b(ω,θ)y) dμ(θ,y)`.
pub fn linear_field<S: Scalar>(a: LabelKernel<S>, b: LabelKernel<S>, dim: usize) -> VectorField<S> {
    let bound = a.sup().max(b.sup());
    VectorField {
        kind: FieldKind::Linear { a, b },
        dim,
        growth: GrowthProfile::uniform(
            TimeProfile::Constant(bound),
            TimeProfile::Constant(bound),
        ),
    }
}

/// Heterogeneous Michaelis–Menten kinetics (state dimension 1, `y ≥ 0`).
///
/// `k_min` and `a_min` are the declared positive lower bounds of the kernels
/// `k(ω,θ)` and `a(ω)` entering the Lipschitz profile.
#[allow(clippy::too_many_arguments)]
pub fn michaelis_menten_field<S: Scalar>(
    alpha: LabelKernel<S>,
    k: LabelKernel<S>,
    k_min: S,
    beta: LabelFn<S>,
    g: LabelFn<S>,
    a: LabelFn<S>,
    a_min: S,
    strict: bool,
) -> Result<VectorField<S>> {
    if k_min <= S::zero() || a_min <= S::zero() {
        return Err(Error::Precondition(
            "Michaelis-Menten needs k_min > 0 and a_min > 0".into(),
        ));
    }
    let m = alpha.sup() + g.sup();
    let l = alpha.sup() / k_min + (g.sup() / a_min) * beta.sup();
    Ok(VectorField {
        kind: FieldKind::MichaelisMenten { alpha, k, k_min, beta, g, a, a_min, strict },
        dim: 1,
        growth: GrowthProfile::uniform(TimeProfile::Constant(m), TimeProfile::Constant(l)),
    })
}

/// Leader–follower dynamics: leader atoms are steered by an external field
/// plus a per-label control, followers interact through `Ψ`.
#[allow(clippy::too_many_arguments)]
pub fn leader_follower_field<S: Scalar>(
    leaders: Vec<S>,
    followers: (S, S),
    v_ext: Arc<ExtFn<S>>,
    v_ext_sup: S,
    v_ext_lip: S,
    u: Arc<ControlFn<S>>,
    u_sup: S,
    psi: PairKernel<S>,
    dim: usize,
) -> VectorField<S> {
    let m = (v_ext_sup + u_sup + psi.at_zero()).max(psi.lip());
    let l = v_ext_lip + psi.lip();
    VectorField {
        kind: FieldKind::LeaderFollower { leaders, followers, v_ext, u, psi },
        dim,
        growth: GrowthProfile::uniform(TimeProfile::Constant(m), TimeProfile::Constant(l)),
    }
}

// ---------------------------------------------------------------------------
// Hypotheses check
// ---------------------------------------------------------------------------

/// Monte-Carlo verification report for the declared growth profile:
/// worst observed ratio of `|v|` against the sublinearity envelope and of
/// field increments against the Lipschitz envelope.
#[derive(Debug, Clone)]
pub struct HypothesesReport<S: Scalar> {
    pub sublinearity_worst: S,
    pub lipschitz_worst: S,
    pub samples: usize,
}

impl<S: Scalar> HypothesesReport<S> {
    pub fn passes(&self) -> bool {
        let bound = S::one() + S::tol(1e-7);
        self.sublinearity_worst <= bound && self.lipschitz_worst <= bound
    }
}

/// Sample random measure pairs and probe points inside `B(0, radius)`,
/// reporting worst-case ratios against the declared [`GrowthProfile`].
/// Report-only: never fails on a violated bound.
pub fn hypotheses_check<S: Scalar>(
    field: &VectorField<S>,
    pi: &LabelMarginal<S>,
    samples: usize,
    radius: S,
    t_end: S,
    seed: u64,
) -> Result<HypothesesReport<S>> {
    let dim = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sub_worst = S::zero();
    let mut lip_worst = S::zero();
    let nonneg = matches!(field.kind, FieldKind::MichaelisMenten { .. });
    for _ in 0..samples {
        let ncells = rng.gen_range(1..=4usize);
        let (mu, nu) = random_measure_pair(pi, ncells, dim, radius, nonneg, &mut rng)?;
        let t = S::of(rng.gen::<f64>()) * t_end;
        let omega = random_label(pi, &mut rng);
        let x = random_point(dim, radius, nonneg, &mut rng);
        let y = random_point(dim, radius, nonneg, &mut rng);

        let mut vx = vec![S::zero(); dim];
        field.eval(t, &mu.view(), omega, &x, &mut vx)?;
        let m_t = field.growth().m.eval(t);
        let denom = m_t * (S::one() + norm(&x) + mu.fibred_moment(1)?);
        if denom > S::tol(1e-12) {
            sub_worst = sub_worst.max(norm(&vx) / denom);
        }

        let mut vy = vec![S::zero(); dim];
        field.eval(t, &nu.view(), omega, &y, &mut vy)?;
        let l_t = field.growth().l_r(radius).eval(t);
        let w = crate::transport::fibred_w(&mu, &nu, 1)?;
        let dx = crate::scalar::dist(&x, &y);
        let denom = l_t * (w + dx);
        if denom > S::tol(1e-10) {
            let diff: S = vx
                .iter()
                .zip(&vy)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<S>()
                .sqrt();
            lip_worst = lip_worst.max(diff / denom);
        }
    }
    Ok(HypothesesReport { sublinearity_worst: sub_worst, lipschitz_worst: lip_worst, samples })
}

fn random_label<S: Scalar>(pi: &LabelMarginal<S>, rng: &mut ChaCha8Rng) -> S {
    match pi {
        LabelMarginal::Density { .. } => S::of(rng.gen::<f64>()),
        LabelMarginal::Atoms { atoms } => atoms[rng.gen_range(0..atoms.len())].0,
    }
}

fn random_point<S: Scalar>(dim: usize, radius: S, nonneg: bool, rng: &mut ChaCha8Rng) -> Vec<S> {
    (0..dim)
        .map(|_| {
            let u = S::of(rng.gen::<f64>());
            if nonneg {
                u * radius
            } else {
                (u + u - S::one()) * radius
            }
        })
        .collect()
}

/// Two random measures sharing one random cell layout (so their fibred
/// distance is finite).
fn random_measure_pair<S: Scalar>(
    pi: &LabelMarginal<S>,
    ncells: usize,
    dim: usize,
    radius: S,
    nonneg: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(FibredMeasure<S>, FibredMeasure<S>)> {
    let cells: Vec<Cell<S>> = match pi {
        LabelMarginal::Density { .. } => {
            let mut bounds: Vec<S> = (0..ncells - 1).map(|_| S::of(rng.gen::<f64>())).collect();
            bounds.push(S::zero());
            bounds.push(S::one());
            bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bounds.dedup_by(|a, b| (*a - *b).abs() < S::of(1e-3));
            if *bounds.last().unwrap() < S::one() {
                bounds.push(S::one());
            }
            bounds.windows(2).map(|w| Cell::interval(w[0], w[1])).collect()
        }
        LabelMarginal::Atoms { atoms } => atoms.iter().map(|&(o, _)| Cell::atom(o)).collect(),
    };
    let mk = |rng: &mut ChaCha8Rng| -> Result<FibredMeasure<S>> {
        let fibres = cells
            .iter()
            .map(|&cell| {
                let weight = pi.mass(&cell);
                let npts = rng.gen_range(1..=3usize);
                let pts = (0..npts)
                    .map(|_| {
                        (random_point(dim, radius, nonneg, rng), S::one() / S::from_usize(npts).unwrap())
                    })
                    .collect();
                Fibre::new(cell, weight, pts, dim)
            })
            .collect::<Result<Vec<_>>>()?;
        FibredMeasure::new(pi.clone(), dim, fibres)
    };
    Ok((mk(rng)?, mk(rng)?))
}
