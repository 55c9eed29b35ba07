//! Euler-Lagrange residuals, variational derivatives, action integrals and
//! velocity Hessians for explicit time-dependent Lagrangians.
//!
//! A [`LagrangianSystem`] wraps an evaluation kernel `L(q, qd, t)` that can
//! run on plain scalars or on second-order duals. Expression-authored
//! Lagrangians, pullbacks through coordinate maps and clock-shifted systems
//! all share this interface, so every operation here works unchanged on a
//! composed system.
//!
//! Sign convention: the residual is
//! `E_i = dL/dq_i - d/dt (dL/dqd_i)`, so motions satisfy `E = 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dualnum::{lift, Dual2, Scalar};
use crate::error::EngineError;
use crate::exprlang::{EvalError, Expr};
use crate::linalg;
use crate::map::SmoothMap;

/// Second-order data of a curve at one time: position, velocity and
/// acceleration.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveJet {
    pub t: f64,
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub acc: Vec<f64>,
}

impl CurveJet {
    pub fn dim(&self) -> usize {
        self.pos.len()
    }
}

/// Evaluation kernel behind a [`LagrangianSystem`]. The two entry points
/// must agree: the plain value equals the dual value component.
pub trait LagrangianFn: Send + Sync {
    fn eval_f64(&self, q: &[f64], qd: &[f64], t: f64) -> Result<f64, EvalError>;
    fn eval_dual2(&self, q: &[Dual2], qd: &[Dual2], t: Dual2) -> Result<Dual2, EvalError>;
}

/// Scalar kinds a [`LagrangianFn`] can be driven with.
pub trait ScalarDispatch: Scalar {
    fn eval_lagrangian(
        f: &dyn LagrangianFn,
        q: &[Self],
        qd: &[Self],
        t: Self,
    ) -> Result<Self, EvalError>;
}

impl ScalarDispatch for f64 {
    fn eval_lagrangian(
        f: &dyn LagrangianFn,
        q: &[Self],
        qd: &[Self],
        t: Self,
    ) -> Result<Self, EvalError> {
        f.eval_f64(q, qd, t)
    }
}

impl ScalarDispatch for Dual2 {
    fn eval_lagrangian(
        f: &dyn LagrangianFn,
        q: &[Self],
        qd: &[Self],
        t: Self,
    ) -> Result<Self, EvalError> {
        f.eval_dual2(q, qd, t)
    }
}

/// A Lagrangian on an `n`-dimensional configuration chart.
#[derive(Clone)]
pub struct LagrangianSystem {
    n: usize,
    chart: String,
    kernel: Arc<dyn LagrangianFn>,
}

impl fmt::Debug for LagrangianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LagrangianSystem")
            .field("n", &self.n)
            .field("chart", &self.chart)
            .finish()
    }
}

#[derive(Debug, Clone, Copy)]
enum LSlot {
    Q(usize),
    Qd(usize),
    T,
}

/// Expression-backed kernel over the variables `q1..qn`, `qd1..qdn`, `t`.
struct ExprKernel {
    expr: Expr,
    slots: Vec<LSlot>,
}

impl ExprKernel {
    fn eval_generic<S: Scalar>(&self, q: &[S], qd: &[S], t: S) -> Result<S, EvalError> {
        let vals: Vec<S> = self
            .slots
            .iter()
            .map(|slot| match slot {
                LSlot::Q(i) => q[*i],
                LSlot::Qd(i) => qd[*i],
                LSlot::T => t,
            })
            .collect();
        self.expr.eval_slice(&vals)
    }
}

impl LagrangianFn for ExprKernel {
    fn eval_f64(&self, q: &[f64], qd: &[f64], t: f64) -> Result<f64, EvalError> {
        self.eval_generic(q, qd, t)
    }

    fn eval_dual2(&self, q: &[Dual2], qd: &[Dual2], t: Dual2) -> Result<Dual2, EvalError> {
        self.eval_generic(q, qd, t)
    }
}

/// Pullback kernel: `l(x, xd, t) = L(Q(x, t), dQ(xd) + dQ/dt, t)`.
/// All derivative seeds flow through the map's partials, which are computed
/// one derivative order deeper than the caller's scalar.
struct PullbackKernel {
    inner: LagrangianSystem,
    map: Arc<SmoothMap>,
}

impl PullbackKernel {
    fn eval_generic<S: ScalarDispatch>(&self, x: &[S], xd: &[S], t: S) -> Result<S, EvalError> {
        let (q, qd) = self.map.push(x, xd, t)?;
        S::eval_lagrangian(self.inner.kernel.as_ref(), &q, &qd, t)
    }
}

impl LagrangianFn for PullbackKernel {
    fn eval_f64(&self, q: &[f64], qd: &[f64], t: f64) -> Result<f64, EvalError> {
        self.eval_generic(q, qd, t)
    }

    fn eval_dual2(&self, q: &[Dual2], qd: &[Dual2], t: Dual2) -> Result<Dual2, EvalError> {
        self.eval_generic(q, qd, t)
    }
}

/// Clock-shift kernel: `L'(q, qd, t) = L(q, qd, t + shift)`.
struct ShiftKernel {
    inner: LagrangianSystem,
    shift: f64,
}

impl LagrangianFn for ShiftKernel {
    fn eval_f64(&self, q: &[f64], qd: &[f64], t: f64) -> Result<f64, EvalError> {
        self.inner.kernel.eval_f64(q, qd, t + self.shift)
    }

    fn eval_dual2(&self, q: &[Dual2], qd: &[Dual2], t: Dual2) -> Result<Dual2, EvalError> {
        self.inner
            .kernel
            .eval_dual2(q, qd, t + Dual2::constant(self.shift))
    }
}

impl LagrangianSystem {
    /// Builds a system from an expression over `q1..qn`, `qd1..qdn` and `t`.
    /// Any other identifier is rejected by name.
    pub fn from_expr(n: usize, expr: Expr) -> Result<Self, EngineError> {
        let mut slots = Vec::with_capacity(expr.vars().len());
        for name in expr.vars() {
            let slot = resolve_lagrangian_slot(name, n).ok_or_else(|| {
                EngineError::invalid(format!(
                    "unknown variable `{name}` in Lagrangian (allowed: q1..q{n}, qd1..qd{n}, t)"
                ))
            })?;
            slots.push(slot);
        }
        Ok(LagrangianSystem {
            n,
            chart: "q".to_string(),
            kernel: Arc::new(ExprKernel { expr, slots }),
        })
    }

    /// Parses and builds in one step.
    pub fn from_source(n: usize, src: &str) -> Result<Self, EngineError> {
        let expr = Expr::parse(src).map_err(|e| EngineError::invalid(e.to_string()))?;
        Self::from_expr(n, expr)
    }

    /// The pullback of `self` through `map`: a system on the map's input
    /// chart whose evaluations compose velocity transport with `self`.
    pub fn pullback_through(&self, map: Arc<SmoothMap>, chart: &str) -> Result<Self, EngineError> {
        if map.out_dim() != self.n {
            return Err(EngineError::DimensionMismatch {
                what: "pullback map output",
                expected: self.n,
                got: map.out_dim(),
            });
        }
        Ok(LagrangianSystem {
            n: map.in_dim(),
            chart: chart.to_string(),
            kernel: Arc::new(PullbackKernel { inner: self.clone(), map }),
        })
    }

    /// Same dynamics with the clock relabelled: `t` here means `t + shift`
    /// inside.
    pub fn with_time_shift(&self, shift: f64) -> Self {
        if shift == 0.0 {
            return self.clone();
        }
        LagrangianSystem {
            n: self.n,
            chart: self.chart.clone(),
            kernel: Arc::new(ShiftKernel { inner: self.clone(), shift }),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn chart(&self) -> &str {
        &self.chart
    }

    pub fn eval(&self, q: &[f64], qd: &[f64], t: f64) -> Result<f64, EvalError> {
        self.check_dims(q, qd);
        self.kernel.eval_f64(q, qd, t)
    }

    pub fn eval_dual2(&self, q: &[Dual2], qd: &[Dual2], t: Dual2) -> Result<Dual2, EvalError> {
        assert_eq!(q.len(), self.n);
        assert_eq!(qd.len(), self.n);
        self.kernel.eval_dual2(q, qd, t)
    }

    fn check_dims(&self, q: &[f64], qd: &[f64]) {
        assert_eq!(q.len(), self.n, "position dimension");
        assert_eq!(qd.len(), self.n, "velocity dimension");
    }

    /// One seeded evaluation: direction `u` acts on the slot picked by
    /// `u_on_qd`, direction `v` is the curve direction `(vel, acc, 1)` when
    /// `v_along_jet`, else zero.
    fn seeded_eval(
        &self,
        q: &[f64],
        qd: &[f64],
        t: f64,
        i: usize,
        u_on_qd: bool,
        jet: Option<(&[f64], &[f64])>,
    ) -> Result<Dual2, EvalError> {
        let (vel, acc): (&[f64], &[f64]) = match jet {
            Some((v, a)) => (v, a),
            None => (&[], &[]),
        };
        let dq: Vec<Dual2> = q
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                lift(
                    v,
                    if !u_on_qd && k == i { 1.0 } else { 0.0 },
                    if jet.is_some() { vel[k] } else { 0.0 },
                )
            })
            .collect();
        let dqd: Vec<Dual2> = qd
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                lift(
                    v,
                    if u_on_qd && k == i { 1.0 } else { 0.0 },
                    if jet.is_some() { acc[k] } else { 0.0 },
                )
            })
            .collect();
        let dt = lift(t, 0.0, if jet.is_some() { 1.0 } else { 0.0 });
        self.kernel.eval_dual2(&dq, &dqd, dt)
    }
}

fn resolve_lagrangian_slot(name: &str, n: usize) -> Option<LSlot> {
    if name == "t" {
        return Some(LSlot::T);
    }
    if let Some(rest) = name.strip_prefix("qd") {
        let k: usize = rest.parse().ok()?;
        return (k >= 1 && k <= n).then(|| LSlot::Qd(k - 1));
    }
    if let Some(rest) = name.strip_prefix('q') {
        let k: usize = rest.parse().ok()?;
        return (k >= 1 && k <= n).then(|| LSlot::Q(k - 1));
    }
    None
}

/// Euler-Lagrange residual `E_i = dL/dq_i - d/dt(dL/dqd_i)` along the jet.
/// The total time derivative is expanded through the chain rule, so only
/// pointwise jet data is needed.
pub fn el_residual(sys: &LagrangianSystem, jet: &CurveJet) -> Result<Vec<f64>, EngineError> {
    let n = sys.n();
    if jet.dim() != n {
        return Err(EngineError::DimensionMismatch {
            what: "curve jet",
            expected: n,
            got: jet.dim(),
        });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let along = Some((jet.vel.as_slice(), jet.acc.as_slice()));
        let a = sys.seeded_eval(&jet.pos, &jet.vel, jet.t, i, false, along)?;
        let b = sys.seeded_eval(&jet.pos, &jet.vel, jet.t, i, true, along)?;
        out.push(a.d1 - b.d12);
    }
    Ok(out)
}

/// Variational derivative of the action in direction `xi` at a point of the
/// curve: the residual paired with the displacement.
pub fn variational_derivative(
    sys: &LagrangianSystem,
    jet: &CurveJet,
    xi: &[f64],
) -> Result<f64, EngineError> {
    if xi.len() != sys.n() {
        return Err(EngineError::DimensionMismatch {
            what: "displacement",
            expected: sys.n(),
            got: xi.len(),
        });
    }
    let e = el_residual(sys, jet)?;
    Ok(e.iter().zip(xi).map(|(a, b)| a * b).sum())
}

/// Velocity Hessian `M_ij = d2L/dqd_i dqd_j`, symmetrized. Mixed duals make
/// the raw matrix symmetric already; an asymmetry beyond 1e-8 would signal a
/// broken kernel and is reported instead of hidden.
pub fn mass_matrix(
    sys: &LagrangianSystem,
    q: &[f64],
    qd: &[f64],
    t: f64,
) -> Result<DMatrix<f64>, EngineError> {
    sys.check_dims(q, qd);
    let n = sys.n();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dq: Vec<Dual2> = q.iter().map(|&v| Dual2::constant(v)).collect();
            let dqd: Vec<Dual2> = qd
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    lift(
                        v,
                        if k == i { 1.0 } else { 0.0 },
                        if k == j { 1.0 } else { 0.0 },
                    )
                })
                .collect();
            let r = sys.kernel.eval_dual2(&dq, &dqd, Dual2::constant(t))?;
            m[(i, j)] = r.d12;
        }
    }
    let asymmetry = (&m - m.transpose()).amax();
    if asymmetry > 1e-8 {
        return Err(EngineError::AsymmetricHessian { t, asymmetry });
    }
    let sym = (&m + m.transpose()) * 0.5;
    Ok(sym)
}

/// Solves the Euler-Lagrange equations for the accelerations:
/// `M qdd = dL/dq - (d2L/dqd dq) qd - d2L/dqd dt`.
/// A velocity Hessian with condition estimate beyond 1e12 is degenerate and
/// reported as such; it is never regularized.
pub fn el_accelerations(
    sys: &LagrangianSystem,
    q: &[f64],
    qd: &[f64],
    t: f64,
) -> Result<Vec<f64>, EngineError> {
    sys.check_dims(q, qd);
    let n = sys.n();
    let m = mass_matrix(sys, q, qd, t)?;
    let zero_acc = vec![0.0; n];
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        // v-direction (qd, 0, 1) leaves out the acceleration, so d12 is the
        // velocity-and-clock part of the total derivative of dL/dqd_i.
        let along = Some((qd, zero_acc.as_slice()));
        let b = sys.seeded_eval(q, qd, t, i, true, along)?;
        let a = sys.seeded_eval(q, qd, t, i, false, along)?;
        rhs[i] = a.d1 - b.d12;
    }
    match linalg::solve_checked(&m, &rhs, linalg::COND_LIMIT) {
        Ok(x) => Ok(x.iter().copied().collect()),
        Err(cond) => Err(EngineError::DegenerateLagrangian {
            t: Some(t),
            cond,
            detail: "velocity Hessian is numerically singular",
        }),
    }
}

/// First partials `(dL/dq, dL/dqd, L)` in one seeded pass per coordinate.
pub fn first_partials(
    sys: &LagrangianSystem,
    q: &[f64],
    qd: &[f64],
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64), EngineError> {
    sys.check_dims(q, qd);
    let n = sys.n();
    let mut lq = Vec::with_capacity(n);
    let mut lqd = Vec::with_capacity(n);
    let mut value = 0.0;
    for i in 0..n {
        let dq: Vec<Dual2> = q
            .iter()
            .enumerate()
            .map(|(k, &v)| lift(v, if k == i { 1.0 } else { 0.0 }, 0.0))
            .collect();
        let dqd: Vec<Dual2> = qd
            .iter()
            .enumerate()
            .map(|(k, &v)| lift(v, 0.0, if k == i { 1.0 } else { 0.0 }))
            .collect();
        let r = sys.kernel.eval_dual2(&dq, &dqd, Dual2::constant(t))?;
        lq.push(r.d1);
        lqd.push(r.d2);
        value = r.val;
    }
    if n == 0 {
        value = sys.eval(q, qd, t)?;
    }
    Ok((lq, lqd, value))
}

/// Second partials at a point: `A = d2L/dq dq`, `B[i][j] = d2L/dq_i dqd_j`,
/// `C = d2L/dqd dqd`.
pub fn second_partials(
    sys: &LagrangianSystem,
    q: &[f64],
    qd: &[f64],
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), EngineError> {
    sys.check_dims(q, qd);
    let n = sys.n();
    let seeded = |qi: Option<usize>, qdi: Option<usize>, qj: Option<usize>, qdj: Option<usize>| {
        let dq: Vec<Dual2> = q
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                lift(
                    v,
                    if Some(k) == qi { 1.0 } else { 0.0 },
                    if Some(k) == qj { 1.0 } else { 0.0 },
                )
            })
            .collect();
        let dqd: Vec<Dual2> = qd
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                lift(
                    v,
                    if Some(k) == qdi { 1.0 } else { 0.0 },
                    if Some(k) == qdj { 1.0 } else { 0.0 },
                )
            })
            .collect();
        sys.kernel.eval_dual2(&dq, &dqd, Dual2::constant(t))
    };
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let r = seeded(Some(i), None, Some(j), None)?;
            a[(i, j)] = r.d12;
            a[(j, i)] = r.d12;
            let r = seeded(None, Some(i), None, Some(j))?;
            c[(i, j)] = r.d12;
            c[(j, i)] = r.d12;
        }
        for j in 0..n {
            let r = seeded(Some(i), None, None, Some(j))?;
            b[(i, j)] = r.d12;
        }
    }
    Ok((a, b, c))
}

/// Jacobi energy `qd . dL/dqd - L`; conserved along motions of clock-free
/// Lagrangians.
pub fn jacobi_energy(
    sys: &LagrangianSystem,
    q: &[f64],
    qd: &[f64],
    t: f64,
) -> Result<f64, EngineError> {
    let (_, lqd, value) = first_partials(sys, q, qd, t)?;
    Ok(qd.iter().zip(&lqd).map(|(a, b)| a * b).sum::<f64>() - value)
}

// ------------------------------------------------------------------ curves --

/// A twice-differentiable path `t -> q(t)` that can report its jet.
pub trait Curve: Send + Sync {
    fn dim(&self) -> usize;
    fn jet(&self, t: f64) -> Result<CurveJet, EngineError>;
}

/// Curve authored as expressions of `t` alone.
pub struct ExprCurve {
    comps: Vec<Expr>,
}

impl ExprCurve {
    pub fn new(comps: Vec<Expr>) -> Result<Self, EngineError> {
        for (i, c) in comps.iter().enumerate() {
            for name in c.vars() {
                if name != "t" {
                    return Err(EngineError::invalid(format!(
                        "unknown variable `{name}` in curve component {} (only t is allowed)",
                        i + 1
                    )));
                }
            }
        }
        Ok(ExprCurve { comps })
    }

    pub fn from_sources(sources: &[String]) -> Result<Self, EngineError> {
        let comps = sources
            .iter()
            .map(|s| Expr::parse(s).map_err(|e| EngineError::invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        ExprCurve::new(comps)
    }
}

impl Curve for ExprCurve {
    fn dim(&self) -> usize {
        self.comps.len()
    }

    fn jet(&self, t: f64) -> Result<CurveJet, EngineError> {
        let mut pos = Vec::with_capacity(self.comps.len());
        let mut vel = Vec::with_capacity(self.comps.len());
        let mut acc = Vec::with_capacity(self.comps.len());
        let arg = lift(t, 1.0, 1.0);
        for c in &self.comps {
            let vals: Vec<Dual2> = c.vars().iter().map(|_| arg).collect();
            let r = c.eval_slice(&vals)?;
            pos.push(r.val);
            vel.push(r.d1);
            acc.push(r.d12);
        }
        Ok(CurveJet { t, pos, vel, acc })
    }
}

/// A curve pushed through a coordinate map: `gamma(t) = Q(base(t), t)`.
pub struct MappedCurve {
    base: Arc<dyn Curve>,
    map: Arc<SmoothMap>,
}

impl MappedCurve {
    pub fn new(base: Arc<dyn Curve>, map: Arc<SmoothMap>) -> Result<Self, EngineError> {
        if base.dim() != map.in_dim() {
            return Err(EngineError::DimensionMismatch {
                what: "mapped curve",
                expected: map.in_dim(),
                got: base.dim(),
            });
        }
        Ok(MappedCurve { base, map })
    }
}

impl Curve for MappedCurve {
    fn dim(&self) -> usize {
        self.map.out_dim()
    }

    fn jet(&self, t: f64) -> Result<CurveJet, EngineError> {
        let j = self.base.jet(t)?;
        let (pos, vel, acc) = self.map.accel_push(&j.pos, &j.vel, &j.acc, t)?;
        Ok(CurveJet { t, pos, vel, acc })
    }
}

/// Action of `sys` along `curve` over `[a, b]` by composite Simpson
/// quadrature with `panels` panels (fourth-order accurate).
pub fn action_integral(
    sys: &LagrangianSystem,
    curve: &dyn Curve,
    a: f64,
    b: f64,
    panels: usize,
) -> Result<f64, EngineError> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return Err(EngineError::invalid(format!(
            "integration interval [{a}, {b}] is reversed"
        )));
    }
    if panels < 2 {
        return Err(EngineError::invalid("at least two quadrature panels are required"));
    }
    if curve.dim() != sys.n() {
        return Err(EngineError::DimensionMismatch {
            what: "action curve",
            expected: sys.n(),
            got: curve.dim(),
        });
    }
    let h = (b - a) / panels as f64;
    let eval_at = |t: f64| -> Result<f64, EngineError> {
        let j = curve.jet(t)?;
        Ok(sys.eval(&j.pos, &j.vel, j.t)?)
    };
    let mut sum = 0.0;
    let mut left = eval_at(a)?;
    for k in 0..panels {
        let t0 = a + k as f64 * h;
        let t1 = if k + 1 == panels { b } else { a + (k + 1) as f64 * h };
        let mid = eval_at(0.5 * (t0 + t1))?;
        let right = eval_at(t1)?;
        sum += (t1 - t0) / 6.0 * (left + 4.0 * mid + right);
        left = right;
    }
    Ok(sum)
}

// ------------------------------------------------------- displacement fields --

/// A vertical displacement field `xi^i(q, t)` along trajectories.
pub enum DisplacementField {
    Exprs { comps: Vec<Expr>, slots: Vec<Vec<LSlotPublic>> },
    Constant(Vec<f64>),
}

/// Slot resolution for displacement components (positions and time only).
#[derive(Debug, Clone, Copy)]
pub enum LSlotPublic {
    Q(usize),
    T,
}

impl DisplacementField {
    pub fn from_exprs(n: usize, comps: Vec<Expr>) -> Result<Self, EngineError> {
        if comps.len() != n {
            return Err(EngineError::DimensionMismatch {
                what: "displacement field",
                expected: n,
                got: comps.len(),
            });
        }
        let mut all_slots = Vec::with_capacity(n);
        for (i, c) in comps.iter().enumerate() {
            let mut slots = Vec::with_capacity(c.vars().len());
            for name in c.vars() {
                let slot = displacement_slot(name, n).ok_or_else(|| {
                    EngineError::invalid(format!(
                        "unknown variable `{name}` in displacement component {} \
                         (allowed: q1..q{n} and t)",
                        i + 1
                    ))
                })?;
                slots.push(slot);
            }
            all_slots.push(slots);
        }
        Ok(DisplacementField::Exprs { comps, slots: all_slots })
    }

    pub fn constant(v: Vec<f64>) -> Self {
        DisplacementField::Constant(v)
    }

    pub fn dim(&self) -> usize {
        match self {
            DisplacementField::Exprs { comps, .. } => comps.len(),
            DisplacementField::Constant(v) => v.len(),
        }
    }

    pub fn eval(&self, q: &[f64], t: f64) -> Result<Vec<f64>, EngineError> {
        match self {
            DisplacementField::Constant(v) => Ok(v.clone()),
            DisplacementField::Exprs { comps, slots } => {
                let mut out = Vec::with_capacity(comps.len());
                for (c, cs) in comps.iter().zip(slots) {
                    let vals: Vec<f64> = cs
                        .iter()
                        .map(|s| match s {
                            LSlotPublic::Q(i) => q[*i],
                            LSlotPublic::T => t,
                        })
                        .collect();
                    out.push(c.eval_slice(&vals)?);
                }
                Ok(out)
            }
        }
    }
}

fn displacement_slot(name: &str, n: usize) -> Option<LSlotPublic> {
    if name == "t" {
        return Some(LSlotPublic::T);
    }
    let rest = name.strip_prefix('q')?;
    let k: usize = rest.parse().ok()?;
    (k >= 1 && k <= n).then(|| LSlotPublic::Q(k - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;

    fn oscillator() -> LagrangianSystem {
        LagrangianSystem::from_source(1, "0.5*qd1^2 - 0.5*q1^2").unwrap()
    }

    fn jet1(t: f64, q: f64, v: f64, a: f64) -> CurveJet {
        CurveJet { t, pos: vec![q], vel: vec![v], acc: vec![a] }
    }

    #[test]
    fn oscillator_motion_has_zero_residual() {
        let sys = oscillator();
        for &t in &[0.0, 0.5, 1.3, 2.9] {
            let jet = jet1(t, t.sin(), t.cos(), -t.sin());
            let e = el_residual(&sys, &jet).unwrap();
            assert!(e[0].abs() <= 1e-13, "residual {} at t={t}", e[0]);
        }
    }

    #[test]
    fn oscillator_off_motion_residual_matches_closed_form() {
        // Along q(t) = t: E = -q - qdd = -t.
        let sys = oscillator();
        let jet = jet1(2.0, 2.0, 1.0, 0.0);
        let e = el_residual(&sys, &jet).unwrap();
        assert!((e[0] + 2.0).abs() <= 1e-14);
        let d = variational_derivative(&sys, &jet, &[3.0]).unwrap();
        assert!((d + 6.0).abs() <= 1e-14);
    }

    #[test]
    fn clock_dependent_lagrangian_residual() {
        // L = 0.5 qd^2 + t q: E = t - qdd; along q = t^3/6, qdd = t, E = 0.
        let sys = LagrangianSystem::from_source(1, "0.5*qd1^2 + t*q1").unwrap();
        let t = 1.7;
        let jet = jet1(t, t.powi(3) / 6.0, t * t / 2.0, t);
        let e = el_residual(&sys, &jet).unwrap();
        assert!(e[0].abs() <= 1e-14);
    }

    #[test]
    fn action_of_free_particle_along_line() {
        let sys = LagrangianSystem::from_source(1, "0.5*qd1^2").unwrap();
        let curve = ExprCurve::new(vec![parse("t").unwrap()]).unwrap();
        let s = action_integral(&sys, &curve, 0.0, 1.0, 1000).unwrap();
        assert!((s - 0.5).abs() <= 1e-14);
    }

    #[test]
    fn oscillator_action_along_motion_vanishes_on_half_period() {
        let sys = oscillator();
        let curve = ExprCurve::new(vec![parse("sin(t)").unwrap()]).unwrap();
        let s = action_integral(&sys, &curve, 0.0, std::f64::consts::PI, 1000).unwrap();
        assert!(s.abs() <= 1e-11, "got {s}");
    }

    #[test]
    fn simpson_error_is_fourth_order() {
        // Richardson: doubling the panel count shrinks the error by ~16.
        let sys = LagrangianSystem::from_source(1, "qd1^2").unwrap();
        let curve = ExprCurve::new(vec![parse("sin(t)").unwrap()]).unwrap();
        let exact = 0.5 + (2.0_f64).sin() / 4.0; // int cos^2 over [0,1]
        let e4 = (action_integral(&sys, &curve, 0.0, 1.0, 4).unwrap() - exact).abs();
        let e8 = (action_integral(&sys, &curve, 0.0, 1.0, 8).unwrap() - exact).abs();
        let ratio = e4 / e8;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "convergence ratio {ratio} outside fourth-order band (e4={e4:.3e}, e8={e8:.3e})"
        );
    }

    #[test]
    fn mass_matrix_of_coupled_system() {
        let sys = LagrangianSystem::from_source(2, "0.5*qd1^2 + 1.5*qd2^2 + qd1*qd2 - q1*q2")
            .unwrap();
        let m = mass_matrix(&sys, &[0.3, -0.1], &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 1)], 3.0);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(1, 0)], 1.0);
    }

    #[test]
    fn accelerations_recover_oscillator_force() {
        let sys = oscillator();
        let qdd = el_accelerations(&sys, &[1.0], &[0.0], 0.0).unwrap();
        assert!((qdd[0] + 1.0).abs() <= 1e-14);
    }

    #[test]
    fn accelerations_are_consistent_with_residual() {
        let sys = LagrangianSystem::from_source(
            2,
            "0.5*(qd1^2 + qd2^2) + sin(q1)*qd2 - cos(q2) + 0.3*t*q1",
        )
        .unwrap();
        let (q, qd, t) = ([0.4, -0.8], [1.2, 0.7], 0.9);
        let qdd = el_accelerations(&sys, &q, &qd, t).unwrap();
        let jet = CurveJet { t, pos: q.to_vec(), vel: qd.to_vec(), acc: qdd };
        let e = el_residual(&sys, &jet).unwrap();
        assert!(linalg::max_abs(&e) <= 1e-10, "residual {e:?}");
    }

    #[test]
    fn degenerate_lagrangian_is_reported_not_regularized() {
        let sys = LagrangianSystem::from_source(1, "qd1").unwrap();
        let err = el_accelerations(&sys, &[0.0], &[0.0], 0.0).unwrap_err();
        assert!(matches!(err, EngineError::DegenerateLagrangian { .. }), "{err}");
    }

    #[test]
    fn jacobi_energy_of_oscillator() {
        let sys = oscillator();
        // E = 0.5 v^2 + 0.5 q^2
        let e = jacobi_energy(&sys, &[0.6], &[0.8], 0.0).unwrap();
        assert!((e - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn unknown_lagrangian_variable_is_rejected() {
        let err = LagrangianSystem::from_source(1, "qd1^2 + y").unwrap_err();
        assert!(err.to_string().contains("`y`"));
        let err = LagrangianSystem::from_source(1, "qd2^2").unwrap_err();
        assert!(err.to_string().contains("`qd2`"));
    }

    #[test]
    fn displacement_fields_evaluate_along_points() {
        let f = DisplacementField::from_exprs(
            2,
            vec![parse("q2 + t").unwrap(), parse("-q1").unwrap()],
        )
        .unwrap();
        let v = f.eval(&[1.0, 2.0], 0.5).unwrap();
        assert_eq!(v, vec![2.5, -1.0]);
        let c = DisplacementField::constant(vec![3.0, 4.0]);
        assert_eq!(c.eval(&[0.0, 0.0], 9.9).unwrap(), vec![3.0, 4.0]);
    }
}
