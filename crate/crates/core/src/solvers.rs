//! Two independent trajectory producers: initial-value integration of the
//! explicit Euler-Lagrange form, and direct stationarization of the
//! midpoint-discretized action between fixed endpoints.
//!
//! The discrete action of a node path `q_0..q_N` over `[a, b]` is
//! `S_d = sum_k h L((q_k+q_{k+1})/2, (q_{k+1}-q_k)/h, t_k + h/2)`.
//! Its stationary points are discrete motions: the gradient with respect to
//! every interior node vanishes, which is the discrete d'Alembert statement.

use nalgebra::{DMatrix, DVector};

use crate::error::EngineError;
use crate::linalg;
use crate::mechanics::{
    el_accelerations, first_partials, second_partials, CurveJet, LagrangianSystem,
};

/// Inner Newton tolerance for the implicit midpoint step.
const MIDPOINT_TOL: f64 = 1e-12;
const MIDPOINT_MAX_ITER: usize = 50;

/// Gradient targets for the boundary solver: converge to the tight value,
/// accept the loose one when the line search stalls inside roundoff.
const STATIONARY_TOL: f64 = 1e-13;
const STATIONARY_ACCEPT: f64 = 1e-10;
const STATIONARY_MAX_ITER: usize = 200;
const STATIONARY_MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    ImplicitMidpoint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::ImplicitMidpoint => "implicit_midpoint",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "implicit_midpoint" => Ok(Method::ImplicitMidpoint),
            other => Err(EngineError::invalid(format!(
                "unknown method `{other}` (expected rk4 or implicit_midpoint)"
            ))),
        }
    }
}

/// Uniformly sampled solution curve with full jets.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub chart: String,
    pub samples: Vec<CurveJet>,
    pub step: f64,
    pub method: String,
}

impl Trajectory {
    pub fn validate(&self) -> Result<(), EngineError> {
        for w in self.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            if dt <= 0.0 {
                return Err(EngineError::invalid("trajectory times must increase"));
            }
            if (dt - self.step).abs() > 1e-12 {
                return Err(EngineError::invalid(format!(
                    "non-uniform step: {dt} vs {}",
                    self.step
                )));
            }
        }
        Ok(())
    }

    pub fn last(&self) -> &CurveJet {
        self.samples.last().expect("non-empty trajectory")
    }
}

/// Node path over a uniform time grid with fixed endpoints.
#[derive(Debug, Clone)]
pub struct DiscretePath {
    pub chart: String,
    pub nodes: Vec<Vec<f64>>,
    pub a: f64,
    pub b: f64,
}

impl DiscretePath {
    /// Number of panels N (nodes minus one).
    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / self.segments() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.a + k as f64 * self.step()
    }
}

fn check_state_dims(sys: &LagrangianSystem, q0: &[f64], v0: &[f64]) -> Result<(), EngineError> {
    if q0.len() != sys.n() || v0.len() != sys.n() {
        return Err(EngineError::DimensionMismatch {
            what: "initial state",
            expected: sys.n(),
            got: if q0.len() != sys.n() { q0.len() } else { v0.len() },
        });
    }
    Ok(())
}

/// Advances `(q, v)` with `v' = el_accelerations` from `(q0, v0)` over
/// `[a, b]`. The requested step is rounded so the grid lands exactly on `b`.
pub fn integrate_el(
    sys: &LagrangianSystem,
    q0: &[f64],
    v0: &[f64],
    a: f64,
    b: f64,
    step: f64,
    method: Method,
) -> Result<Trajectory, EngineError> {
    check_state_dims(sys, q0, v0)?;
    if !(step > 0.0) {
        return Err(EngineError::invalid(format!("step {step} must be positive")));
    }
    if !(b > a) {
        return Err(EngineError::invalid(format!("interval [{a}, {b}] is empty")));
    }
    let n_steps = (((b - a) / step).round() as usize).max(1);
    let h = (b - a) / n_steps as f64;
    let n = sys.n();

    let deriv = |t: f64, q: &[f64], v: &[f64]| -> Result<(Vec<f64>, Vec<f64>), EngineError> {
        let acc = el_accelerations(sys, q, v, t)?;
        Ok((v.to_vec(), acc))
    };

    let mut q = q0.to_vec();
    let mut v = v0.to_vec();
    let mut samples = Vec::with_capacity(n_steps + 1);
    for k in 0..=n_steps {
        let t = a + k as f64 * h;
        let acc = el_accelerations(sys, &q, &v, t)?;
        samples.push(CurveJet { t, pos: q.clone(), vel: v.clone(), acc });
        if k == n_steps {
            break;
        }
        match method {
            Method::Rk4 => {
                let (kq1, kv1) = deriv(t, &q, &v)?;
                let (q2, v2) = offset_state(&q, &v, &kq1, &kv1, h / 2.0);
                let (kq2, kv2) = deriv(t + h / 2.0, &q2, &v2)?;
                let (q3, v3) = offset_state(&q, &v, &kq2, &kv2, h / 2.0);
                let (kq3, kv3) = deriv(t + h / 2.0, &q3, &v3)?;
                let (q4, v4) = offset_state(&q, &v, &kq3, &kv3, h);
                let (kq4, kv4) = deriv(t + h, &q4, &v4)?;
                for i in 0..n {
                    q[i] += h / 6.0 * (kq1[i] + 2.0 * kq2[i] + 2.0 * kq3[i] + kq4[i]);
                    v[i] += h / 6.0 * (kv1[i] + 2.0 * kv2[i] + 2.0 * kv3[i] + kv4[i]);
                }
            }
            Method::ImplicitMidpoint => {
                let (qn, vn) = implicit_midpoint_step(sys, &q, &v, t, h)?;
                q = qn;
                v = vn;
            }
        }
    }
    Ok(Trajectory {
        chart: sys.chart().to_string(),
        samples,
        step: h,
        method: method.name().to_string(),
    })
}

fn offset_state(
    q: &[f64],
    v: &[f64],
    kq: &[f64],
    kv: &[f64],
    s: f64,
) -> (Vec<f64>, Vec<f64>) {
    (
        q.iter().zip(kq).map(|(a, b)| a + s * b).collect(),
        v.iter().zip(kv).map(|(a, b)| a + s * b).collect(),
    )
}

/// One step of the implicit midpoint rule, solved by Newton iteration with a
/// finite-difference Jacobian of the (AD-exact) vector field.
fn implicit_midpoint_step(
    sys: &LagrangianSystem,
    q: &[f64],
    v: &[f64],
    t: f64,
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>), EngineError> {
    let n = sys.n();
    let dim = 2 * n;
    let tm = t + h / 2.0;
    let f_at = |y: &[f64]| -> Result<Vec<f64>, EngineError> {
        let (qy, vy) = y.split_at(n);
        let acc = el_accelerations(sys, qy, vy, tm)?;
        let mut out = Vec::with_capacity(dim);
        out.extend_from_slice(vy);
        out.extend(acc);
        Ok(out)
    };
    let y0: Vec<f64> = q.iter().chain(v.iter()).copied().collect();
    // explicit predictor
    let f0 = f_at(&y0)?;
    let mut z: Vec<f64> = y0.iter().zip(&f0).map(|(a, b)| a + h * b).collect();

    let mut best_residual = f64::INFINITY;
    for _ in 0..MIDPOINT_MAX_ITER {
        let mid: Vec<f64> = y0.iter().zip(&z).map(|(a, b)| 0.5 * (a + b)).collect();
        let fm = f_at(&mid)?;
        let r: Vec<f64> = (0..dim).map(|i| z[i] - y0[i] - h * fm[i]).collect();
        let rmax = linalg::max_abs(&r);
        best_residual = best_residual.min(rmax);
        if rmax <= MIDPOINT_TOL {
            let (qn, vn) = z.split_at(n);
            return Ok((qn.to_vec(), vn.to_vec()));
        }
        // J = I - (h/2) dF/dy at the midpoint, dF/dy by forward differences
        let mut jac = DMatrix::identity(dim, dim);
        for j in 0..dim {
            let delta = 1e-7 * (1.0 + mid[j].abs());
            let mut pert = mid.clone();
            pert[j] += delta;
            let fp = f_at(&pert)?;
            for i in 0..dim {
                jac[(i, j)] -= 0.5 * h * (fp[i] - fm[i]) / delta;
            }
        }
        let rhs = DVector::from_column_slice(&r);
        let sol = linalg::solve_checked(&jac, &rhs, linalg::COND_LIMIT)
            .map_err(|cond| EngineError::SingularJacobian { t: tm, cond })?;
        for i in 0..dim {
            z[i] -= sol[i];
        }
    }
    Err(EngineError::NonConvergence { iterations: MIDPOINT_MAX_ITER, best_residual })
}

/// Per-panel midpoint data of a discrete path.
fn panel_point(path: &DiscretePath, k: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let h = path.step();
    let n = path.nodes[0].len();
    let mut mid = Vec::with_capacity(n);
    let mut diff = Vec::with_capacity(n);
    for i in 0..n {
        mid.push(0.5 * (path.nodes[k][i] + path.nodes[k + 1][i]));
        diff.push((path.nodes[k + 1][i] - path.nodes[k][i]) / h);
    }
    (mid, diff, path.a + (k as f64 + 0.5) * h)
}

/// Midpoint-rule action of a node path.
pub fn discrete_action(sys: &LagrangianSystem, path: &DiscretePath) -> Result<f64, EngineError> {
    if path.nodes.len() < 2 {
        return Err(EngineError::invalid("discrete path needs at least two nodes"));
    }
    let h = path.step();
    let mut s = 0.0;
    for k in 0..path.segments() {
        let (mid, diff, tau) = panel_point(path, k);
        s += h * sys.eval(&mid, &diff, tau)?;
    }
    Ok(s)
}

/// Gradient of the discrete action with respect to each interior node.
pub fn discrete_action_gradient(
    sys: &LagrangianSystem,
    path: &DiscretePath,
) -> Result<Vec<Vec<f64>>, EngineError> {
    let n = sys.n();
    let h = path.step();
    let segs = path.segments();
    let mut lq = Vec::with_capacity(segs);
    let mut lqd = Vec::with_capacity(segs);
    for k in 0..segs {
        let (mid, diff, tau) = panel_point(path, k);
        let (gq, gqd, _) = first_partials(sys, &mid, &diff, tau)?;
        lq.push(gq);
        lqd.push(gqd);
    }
    let mut grad = Vec::with_capacity(segs - 1);
    for k in 1..segs {
        let g: Vec<f64> = (0..n)
            .map(|i| 0.5 * h * (lq[k - 1][i] + lq[k][i]) + (lqd[k - 1][i] - lqd[k][i]))
            .collect();
        grad.push(g);
    }
    Ok(grad)
}

/// Block-tridiagonal factorization of the discrete-action Hessian, used for
/// Newton steps and for inverse-power conditioning estimates.
struct BlockTridiag {
    diag_lu: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    upper: Vec<DMatrix<f64>>,
    couplers: Vec<DMatrix<f64>>, // upper[i-1]^T * inv(Dtilde[i-1])
}

impl BlockTridiag {
    /// Schur-complement elimination down the diagonal. `None` when a pivot
    /// block is numerically singular.
    fn factor(diag: &[DMatrix<f64>], upper: &[DMatrix<f64>]) -> Option<BlockTridiag> {
        let m = diag.len();
        let mut diag_lu = Vec::with_capacity(m);
        let mut couplers = Vec::with_capacity(m.saturating_sub(1));
        let mut current = diag[0].clone();
        for i in 0..m {
            if i > 0 {
                let prev_inv = diag_lu
                    .last()
                    .map(|lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>| {
                        lu.try_inverse()
                    })??;
                let coupler = upper[i - 1].transpose() * prev_inv;
                current = &diag[i] - &coupler * &upper[i - 1];
                couplers.push(coupler);
            }
            let lu = current.clone().lu();
            if lu.determinant() == 0.0 || !lu.determinant().is_finite() {
                return None;
            }
            diag_lu.push(lu);
        }
        Some(BlockTridiag { diag_lu, upper: upper.to_vec(), couplers })
    }

    fn solve(&self, rhs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let m = rhs.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(m);
        for i in 0..m {
            let mut r = rhs[i].clone();
            if i > 0 {
                r -= &self.couplers[i - 1] * &y[i - 1];
            }
            y.push(r);
        }
        let mut x = vec![DVector::zeros(0); m];
        for i in (0..m).rev() {
            let mut r = y[i].clone();
            if i + 1 < m {
                r -= &self.upper[i] * &x[i + 1];
            }
            x[i] = self.diag_lu[i].solve(&r).expect("factored block solve");
        }
        x
    }
}

fn block_matvec(
    diag: &[DMatrix<f64>],
    upper: &[DMatrix<f64>],
    v: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let m = v.len();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut w = &diag[i] * &v[i];
        if i + 1 < m {
            w += &upper[i] * &v[i + 1];
        }
        if i > 0 {
            w += upper[i - 1].transpose() * &v[i - 1];
        }
        out.push(w);
    }
    out
}

fn block_norm(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
}

fn deterministic_start(m: usize, n: usize) -> Vec<DVector<f64>> {
    // fixed, seedless start vector for the eigenvalue estimates
    let mut v = Vec::with_capacity(m);
    for i in 0..m {
        v.push(DVector::from_fn(n, |j, _| {
            1.0 + 0.3 * ((1.7 * (i * n + j + 1) as f64).sin())
        }));
    }
    let norm = block_norm(&v);
    for b in v.iter_mut() {
        *b /= norm;
    }
    v
}

/// Condition estimate of the block-tridiagonal Hessian: power iteration for
/// the largest eigenvalue magnitude, inverse iteration (through the
/// factorization) for the smallest.
fn condition_estimate(
    diag: &[DMatrix<f64>],
    upper: &[DMatrix<f64>],
    factored: &BlockTridiag,
) -> f64 {
    let m = diag.len();
    let n = diag[0].nrows();
    let iters = 80;

    let mut v = deterministic_start(m, n);
    let mut lambda_max = 0.0;
    for _ in 0..iters {
        let w = block_matvec(diag, upper, &v);
        lambda_max = block_norm(&w);
        if lambda_max == 0.0 || !lambda_max.is_finite() {
            return f64::INFINITY;
        }
        v = w;
        for b in v.iter_mut() {
            *b /= lambda_max;
        }
    }

    let mut u = deterministic_start(m, n);
    let mut inv_norm = 0.0;
    for _ in 0..iters {
        let w = factored.solve(&u);
        inv_norm = block_norm(&w);
        if inv_norm == 0.0 || !inv_norm.is_finite() {
            return f64::INFINITY;
        }
        u = w;
        for b in u.iter_mut() {
            *b /= inv_norm;
        }
    }
    lambda_max * inv_norm
}

struct HessianBlocks {
    diag: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
}

/// Assembles gradient and Hessian blocks of the discrete action over the
/// interior nodes.
fn assemble(
    sys: &LagrangianSystem,
    path: &DiscretePath,
) -> Result<(Vec<DVector<f64>>, HessianBlocks), EngineError> {
    let n = sys.n();
    let h = path.step();
    let segs = path.segments();
    let mut lq = Vec::with_capacity(segs);
    let mut lqd = Vec::with_capacity(segs);
    let mut aa = Vec::with_capacity(segs);
    let mut bb = Vec::with_capacity(segs);
    let mut cc = Vec::with_capacity(segs);
    for k in 0..segs {
        let (mid, diff, tau) = panel_point(path, k);
        let (gq, gqd, _) = first_partials(sys, &mid, &diff, tau)?;
        let (a, b, c) = second_partials(sys, &mid, &diff, tau)?;
        lq.push(gq);
        lqd.push(gqd);
        aa.push(a);
        bb.push(b);
        cc.push(c);
    }
    let mut grad = Vec::with_capacity(segs - 1);
    for k in 1..segs {
        grad.push(DVector::from_fn(n, |i, _| {
            0.5 * h * (lq[k - 1][i] + lq[k][i]) + (lqd[k - 1][i] - lqd[k][i])
        }));
    }
    // Per panel k, the second derivative of h*L(mid, diff, tau) contributes
    //   right-right: h/4 A + (B + B^T)/2 + C/h     (node k+1)
    //   left-left:   h/4 A - (B + B^T)/2 + C/h     (node k)
    //   left-right:  h/4 A + (B - B^T)/2 - C/h
    let mut diag = Vec::with_capacity(segs - 1);
    let mut upper = Vec::with_capacity(segs.saturating_sub(2));
    for k in 1..segs {
        let sym_prev = (&bb[k - 1] + bb[k - 1].transpose()) * 0.5;
        let sym_here = (&bb[k] + bb[k].transpose()) * 0.5;
        let d = (&aa[k - 1] + &aa[k]) * (h / 4.0)
            + sym_prev
            - sym_here
            + (&cc[k - 1] + &cc[k]) * (1.0 / h);
        diag.push(d);
        if k + 1 < segs {
            let skew = (&bb[k] - bb[k].transpose()) * 0.5;
            upper.push(&aa[k] * (h / 4.0) + skew - &cc[k] * (1.0 / h));
        }
    }
    Ok((grad, HessianBlocks { diag, upper }))
}

fn max_block_abs(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|b| b.amax()).fold(0.0, f64::max)
}

/// Solves the fixed-endpoint problem: find interior nodes that make the
/// discrete-action gradient vanish. Newton iteration with backtracking on
/// the gradient norm; the Hessian's condition estimate is inspected every
/// iteration, so degenerate boundary problems (e.g. with conjugate
/// endpoints) are reported instead of silently "solved".
pub fn stationary_action_solve(
    sys: &LagrangianSystem,
    q_a: &[f64],
    q_b: &[f64],
    a: f64,
    b: f64,
    n_segments: usize,
    init: Option<&[Vec<f64>]>,
) -> Result<DiscretePath, EngineError> {
    check_state_dims(sys, q_a, q_b)?;
    if n_segments < 2 {
        return Err(EngineError::invalid("boundary problems need at least two segments"));
    }
    if !(b > a) {
        return Err(EngineError::invalid(format!("interval [{a}, {b}] is empty")));
    }
    let n = sys.n();
    let nodes: Vec<Vec<f64>> = match init {
        Some(given) => {
            if given.len() != n_segments + 1 {
                return Err(EngineError::DimensionMismatch {
                    what: "initial path nodes",
                    expected: n_segments + 1,
                    got: given.len(),
                });
            }
            given.to_vec()
        }
        None => (0..=n_segments)
            .map(|k| {
                let s = k as f64 / n_segments as f64;
                (0..n).map(|i| q_a[i] + s * (q_b[i] - q_a[i])).collect()
            })
            .collect(),
    };
    let mut path = DiscretePath { chart: sys.chart().to_string(), nodes, a, b };
    path.nodes[0] = q_a.to_vec();
    path.nodes[n_segments] = q_b.to_vec();

    let mut best_residual = f64::INFINITY;
    for iter in 0..STATIONARY_MAX_ITER {
        let (grad, hess) = assemble(sys, &path)?;
        let gmax = max_block_abs(&grad);
        best_residual = best_residual.min(gmax);

        let factored = BlockTridiag::factor(&hess.diag, &hess.upper).ok_or(
            EngineError::DegenerateLagrangian {
                t: None,
                cond: f64::INFINITY,
                detail: "discrete-action Hessian has a singular pivot block",
            },
        )?;
        let cond = condition_estimate(&hess.diag, &hess.upper, &factored);
        if cond > linalg::COND_LIMIT {
            return Err(EngineError::DegenerateLagrangian {
                t: None,
                cond,
                detail: "discrete-action Hessian is numerically singular for this boundary data",
            });
        }
        if gmax <= STATIONARY_TOL {
            return Ok(path);
        }

        let neg_grad: Vec<DVector<f64>> = grad.iter().map(|g| -g).collect();
        let delta = factored.solve(&neg_grad);

        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..STATIONARY_MAX_HALVINGS {
            let mut trial = path.clone();
            for (k, d) in delta.iter().enumerate() {
                for i in 0..n {
                    trial.nodes[k + 1][i] += s * d[i];
                }
            }
            match discrete_action_gradient(sys, &trial) {
                Ok(g) => {
                    let trial_max = g
                        .iter()
                        .map(|v| linalg::max_abs(v))
                        .fold(0.0, f64::max);
                    if trial_max < gmax * (1.0 - 1e-4 * s) || trial_max <= STATIONARY_TOL {
                        path = trial;
                        accepted = true;
                        break;
                    }
                }
                Err(EngineError::Eval(_)) | Err(EngineError::Domain(_)) => {
                    // stepped outside the expression domain; shorten
                }
                Err(other) => return Err(other),
            }
            s *= 0.5;
        }
        if !accepted {
            if gmax <= STATIONARY_ACCEPT {
                return Ok(path);
            }
            return Err(EngineError::NonConvergence { iterations: iter + 1, best_residual });
        }
    }
    if best_residual <= STATIONARY_ACCEPT {
        return Ok(path);
    }
    Err(EngineError::NonConvergence {
        iterations: STATIONARY_MAX_ITER,
        best_residual,
    })
}
