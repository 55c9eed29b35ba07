//! Time-dependent holonomic constraints as parametrized embeddings
//! `q = Q(x, t)` of an m-dimensional chart into an n-dimensional one
//! (m <= n), with the induced affine spaces of admissible velocities,
//! the reduced ("intrinsic") Lagrangian and the d'Alembert pairing.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::EngineError;
use crate::exprlang::{parse, Expr};
use crate::linalg;
use crate::map::SmoothMap;
use crate::mechanics::{el_residual, CurveJet, LagrangianSystem};
use crate::solvers::Trajectory;

/// Relative singular-value threshold below which the embedding Jacobian is
/// treated as rank-deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
enum RSlot {
    Q(usize),
    T,
}

/// Admissible velocities at a constrained point: the affine space
/// `offset + basis . xd`. The basis columns alone span the virtual
/// displacements.
#[derive(Debug, Clone)]
pub struct AffineVelocitySpace {
    pub offset: Vec<f64>,
    pub basis: DMatrix<f64>,
}

impl AffineVelocitySpace {
    /// Distance from `v` to the affine space, via least squares.
    pub fn distance(&self, v: &[f64]) -> f64 {
        let rhs = DVector::from_fn(v.len(), |i, _| v[i] - self.offset[i]);
        let svd = self.basis.clone().svd(true, true);
        let coeffs = svd.solve(&rhs, 0.0).expect("svd solve");
        let res = rhs - &self.basis * coeffs;
        res.amax()
    }
}

/// A parametrized constraint: `n` expressions `Q^i(x1..xm, t)` embedding an
/// m-dimensional chart, with optional implicit residuals `f_a(q1..qn, t)`
/// used only for drift reporting.
#[derive(Debug, Clone)]
pub struct ConstraintEmbedding {
    map: Arc<SmoothMap>,
    residuals: Vec<Expr>,
    residual_slots: Vec<Vec<RSlot>>,
}

impl ConstraintEmbedding {
    pub fn new(
        forward: Vec<Expr>,
        intrinsic_dim: usize,
        residuals: Vec<Expr>,
    ) -> Result<Self, EngineError> {
        let n = forward.len();
        if intrinsic_dim == 0 || intrinsic_dim > n {
            return Err(EngineError::invalid(format!(
                "intrinsic dimension {intrinsic_dim} must lie in 1..={n}"
            )));
        }
        let map = SmoothMap::from_exprs(forward, intrinsic_dim, "x")?;
        let mut residual_slots = Vec::with_capacity(residuals.len());
        for (a, r) in residuals.iter().enumerate() {
            let mut slots = Vec::with_capacity(r.vars().len());
            for name in r.vars() {
                let slot = residual_slot(name, n).ok_or_else(|| {
                    EngineError::invalid(format!(
                        "unknown variable `{name}` in constraint residual {} \
                         (allowed: q1..q{n} and t)",
                        a + 1
                    ))
                })?;
                slots.push(slot);
            }
            residual_slots.push(slots);
        }
        Ok(ConstraintEmbedding { map: Arc::new(map), residuals, residual_slots })
    }

    pub fn from_sources(
        forward: &[String],
        intrinsic_dim: usize,
        residuals: &[String],
    ) -> Result<Self, EngineError> {
        let fw = forward
            .iter()
            .map(|s| parse(s).map_err(|e| EngineError::invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let rs = residuals
            .iter()
            .map(|s| parse(s).map_err(|e| EngineError::invalid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        ConstraintEmbedding::new(fw, intrinsic_dim, rs)
    }

    /// Intrinsic (constrained-chart) dimension m.
    pub fn intrinsic_dim(&self) -> usize {
        self.map.in_dim()
    }

    /// Ambient dimension n.
    pub fn ambient_dim(&self) -> usize {
        self.map.out_dim()
    }

    pub fn forward_map(&self) -> &Arc<SmoothMap> {
        &self.map
    }

    pub fn has_residuals(&self) -> bool {
        !self.residuals.is_empty()
    }

    pub fn embed(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EngineError> {
        Ok(self.map.value(x, t)?)
    }

    /// Admissible velocities at `(x, t)`: offset `dQ/dt`, basis columns
    /// `dQ/dx^j`. Fails when the Jacobian loses rank.
    pub fn velocity_spaces(&self, x: &[f64], t: f64) -> Result<AffineVelocitySpace, EngineError> {
        let p = self.map.partials(x, t)?;
        let n = self.ambient_dim();
        let m = self.intrinsic_dim();
        let basis = DMatrix::from_fn(n, m, |r, c| p.jac[r][c]);
        let ratio = linalg::singular_value_ratio(&basis);
        if ratio <= RANK_TOL {
            return Err(EngineError::RankDeficient { t, ratio });
        }
        Ok(AffineVelocitySpace { offset: p.dt, basis })
    }

    /// The Lagrangian reduced to the constrained chart through the
    /// admissible-velocity law `qd = basis xd + offset`.
    pub fn intrinsic_lagrangian(
        &self,
        sys: &LagrangianSystem,
    ) -> Result<LagrangianSystem, EngineError> {
        sys.pullback_through(Arc::clone(&self.map), "x")
    }

    /// Transports an intrinsic jet to the ambient chart, accelerations
    /// included.
    pub fn ambient_jet(&self, jet: &CurveJet) -> Result<CurveJet, EngineError> {
        let (pos, vel, acc) = self.map.accel_push(&jet.pos, &jet.vel, &jet.acc, jet.t)?;
        Ok(CurveJet { t: jet.t, pos, vel, acc })
    }

    /// d'Alembert pairing: reconstructs the ambient jet, evaluates the
    /// ambient Euler-Lagrange residual and returns the largest pairing with
    /// a virtual-displacement basis vector. Vanishes exactly on motions of
    /// the intrinsic system.
    pub fn dalembert_check(
        &self,
        sys: &LagrangianSystem,
        jet: &CurveJet,
    ) -> Result<f64, EngineError> {
        let space = self.velocity_spaces(&jet.pos, jet.t)?;
        let ambient = self.ambient_jet(jet)?;
        let e = el_residual(sys, &ambient)?;
        let ev = DVector::from_column_slice(&e);
        let pairings = self.basis_pairings(&space, &ev);
        Ok(pairings.amax())
    }

    fn basis_pairings(&self, space: &AffineVelocitySpace, e: &DVector<f64>) -> DVector<f64> {
        space.basis.transpose() * e
    }

    /// Largest implicit-residual violation over the trajectory samples.
    /// Zero (with no work done) when the embedding carries no residuals.
    pub fn constraint_drift(&self, traj: &Trajectory) -> Result<f64, EngineError> {
        let mut worst: f64 = 0.0;
        for jet in &traj.samples {
            for a in 0..self.residuals.len() {
                let v = self.eval_residual(a, &jet.pos, jet.t)?;
                worst = worst.max(v.abs());
            }
        }
        Ok(worst)
    }

    /// Residual value `f_a(q, t)`.
    pub fn eval_residual(&self, a: usize, q: &[f64], t: f64) -> Result<f64, EngineError> {
        let slots = &self.residual_slots[a];
        let vals: Vec<f64> = slots
            .iter()
            .map(|s| match s {
                RSlot::Q(i) => q[*i],
                RSlot::T => t,
            })
            .collect();
        Ok(self.residuals[a].eval_slice(&vals)?)
    }

    /// Checks that the residuals vanish on the image of the embedding at the
    /// given samples (the compatibility identity); returns the worst value.
    pub fn compatibility_error(&self, samples: &[(Vec<f64>, f64)]) -> Result<f64, EngineError> {
        let mut worst: f64 = 0.0;
        for (x, t) in samples {
            let q = self.embed(x, *t)?;
            for a in 0..self.residuals.len() {
                worst = worst.max(self.eval_residual(a, &q, *t)?.abs());
            }
        }
        Ok(worst)
    }
}

fn residual_slot(name: &str, n: usize) -> Option<RSlot> {
    if name == "t" {
        return Some(RSlot::T);
    }
    let rest = name.strip_prefix('q')?;
    let k: usize = rest.parse().ok()?;
    (k >= 1 && k <= n).then(|| RSlot::Q(k - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::FrameMap;
    use crate::mechanics::{action_integral, el_accelerations, mass_matrix, variational_derivative, ExprCurve, MappedCurve};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn circle() -> ConstraintEmbedding {
        ConstraintEmbedding::from_sources(
            &["cos(x1)".into(), "sin(x1)".into()],
            1,
            &["q1^2 + q2^2 - 1".into()],
        )
        .unwrap()
    }

    fn hoop(r: f64, omega: f64) -> ConstraintEmbedding {
        let fw = vec![
            format!("{r}*sin(x1)*cos({omega}*t)"),
            format!("{r}*sin(x1)*sin({omega}*t)"),
            format!("-{r}*cos(x1)"),
        ];
        let res = vec![format!("q1^2 + q2^2 + q3^2 - {}", r * r)];
        ConstraintEmbedding::from_sources(&fw, 1, &res).unwrap()
    }

    fn free2() -> LagrangianSystem {
        LagrangianSystem::from_source(2, "0.5*(qd1^2 + qd2^2)").unwrap()
    }

    #[test]
    fn circle_reduction_gives_angular_kinetic_energy() {
        let l = circle().intrinsic_lagrangian(&free2()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = [rng.gen_range(-3.0..3.0)];
            let xd = [rng.gen_range(-2.0..2.0)];
            let got = l.eval(&x, &xd, 0.0).unwrap();
            assert!((got - 0.5 * xd[0] * xd[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn rotating_hoop_reduction_matches_hand_expansion() {
        let (r, om, g) = (1.0, 2.0, 9.81);
        let sys = LagrangianSystem::from_source(3, "0.5*(qd1^2 + qd2^2 + qd3^2) - 9.81*q3")
            .unwrap();
        let l = hoop(r, om).intrinsic_lagrangian(&sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let th = rng.gen_range(-3.0..3.0);
            let thd = rng.gen_range(-2.0..2.0);
            let t = rng.gen_range(0.0..4.0);
            let got = l.eval(&[th], &[thd], t).unwrap();
            let want = 0.5 * r * r * thd * thd
                + 0.5 * r * r * om * om * th.sin() * th.sin()
                + g * r * th.cos();
            assert!((got - want).abs() <= 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn square_embedding_agrees_with_frame_pullback() {
        let sys = free2();
        let comps = ["x1*cos(t) - x2*sin(t)".to_string(), "x1*sin(t) + x2*cos(t)".to_string()];
        let emb = ConstraintEmbedding::from_sources(&comps, 2, &[]).unwrap();
        let frame = FrameMap::from_sources(&comps, None).unwrap();
        let a = emb.intrinsic_lagrangian(&sys).unwrap();
        let b = frame.pullback_lagrangian(&sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let xd = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(-2.0..2.0);
            let u = a.eval(&x, &xd, t).unwrap();
            let v = b.eval(&x, &xd, t).unwrap();
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn hoop_mass_matrix_scales_with_radius_squared() {
        let sys = LagrangianSystem::from_source(3, "0.5*(qd1^2 + qd2^2 + qd3^2) - 9.81*q3")
            .unwrap();
        let l = hoop(2.0, 2.0).intrinsic_lagrangian(&sys).unwrap();
        let m = mass_matrix(&l, &[0.7], &[0.3], 1.1).unwrap();
        assert!((m[(0, 0)] - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn circle_velocity_space_is_the_tangent_line() {
        let emb = circle();
        let x = [0.9];
        let sp = emb.velocity_spaces(&x, 0.0).unwrap();
        assert_eq!(sp.offset, vec![0.0, 0.0]);
        assert!((sp.basis[(0, 0)] + x[0].sin()).abs() <= 1e-15);
        assert!((sp.basis[(1, 0)] - x[0].cos()).abs() <= 1e-15);
    }

    #[test]
    fn hoop_velocity_offset_matches_closed_form() {
        let (r, om) = (1.0, 2.0);
        let emb = hoop(r, om);
        let (th, t) = (0.8, 0.4);
        let sp = emb.velocity_spaces(&[th], t).unwrap();
        let want = [
            -r * om * th.sin() * (om * t).sin(),
            r * om * th.sin() * (om * t).cos(),
            0.0,
        ];
        for i in 0..3 {
            assert!((sp.offset[i] - want[i]).abs() <= 1e-13);
        }
        // independent check by finite differences in t
        let h = 1e-6;
        let qp = emb.embed(&[th], t + h).unwrap();
        let qm = emb.embed(&[th], t - h).unwrap();
        for i in 0..3 {
            let fd = (qp[i] - qm[i]) / (2.0 * h);
            assert!((sp.offset[i] - fd).abs() <= 1e-8);
        }
    }

    #[test]
    fn pushed_velocities_lie_in_the_affine_space() {
        let emb = hoop(1.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let x = [rng.gen_range(-2.0..2.0)];
            let xd = [rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(0.0..4.0);
            let (_, qd) = emb.forward_map().push(&x, &xd, t).unwrap();
            let sp = emb.velocity_spaces(&x, t).unwrap();
            assert!(sp.distance(&qd) <= 1e-12);
        }
    }

    #[test]
    fn uniform_rotation_passes_the_dalembert_check() {
        let emb = circle();
        let sys = free2();
        for &t in &[0.0, 0.7, 2.1] {
            let c = 1.3;
            let jet = CurveJet { t, pos: vec![c * t], vel: vec![c], acc: vec![0.0] };
            let v = emb.dalembert_check(&sys, &jet).unwrap();
            assert!(v <= 1e-10, "pairing {v} at t={t}");
        }
    }

    #[test]
    fn accelerating_rotation_fails_the_dalembert_check_by_the_known_amount() {
        // theta(t) = t^2 on the unit circle: pairing magnitude is theta_dd.
        let emb = circle();
        let sys = free2();
        let t = 0.9;
        let jet = CurveJet { t, pos: vec![t * t], vel: vec![2.0 * t], acc: vec![2.0] };
        let v = emb.dalembert_check(&sys, &jet).unwrap();
        assert!((v - 2.0).abs() <= 1e-12, "pairing {v}");
    }

    #[test]
    fn intrinsic_motions_satisfy_ambient_dalembert() {
        let (r, om) = (1.0, 2.0);
        let sys = LagrangianSystem::from_source(3, "0.5*(qd1^2 + qd2^2 + qd3^2) - 9.81*q3")
            .unwrap();
        let emb = hoop(r, om);
        let l = emb.intrinsic_lagrangian(&sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let x = vec![rng.gen_range(-2.0..2.0)];
            let xd = vec![rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(0.0..4.0);
            let acc = el_accelerations(&l, &x, &xd, t).unwrap();
            let jet = CurveJet { t, pos: x, vel: xd, acc };
            let v = emb.dalembert_check(&sys, &jet).unwrap();
            assert!(v <= 1e-10, "pairing {v}");
        }
    }

    #[test]
    fn constrained_invariance_identity() {
        // Pairing the ambient residual with a pushed displacement equals the
        // intrinsic variational derivative.
        let sys = LagrangianSystem::from_source(3, "0.5*(qd1^2 + qd2^2 + qd3^2) - 9.81*q3")
            .unwrap();
        let emb = hoop(1.0, 2.0);
        let l = emb.intrinsic_lagrangian(&sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let jet = CurveJet {
                t: rng.gen_range(0.0..4.0),
                pos: vec![rng.gen_range(-2.0..2.0)],
                vel: vec![rng.gen_range(-2.0..2.0)],
                acc: vec![rng.gen_range(-2.0..2.0)],
            };
            let xi = vec![rng.gen_range(-1.0..1.0)];
            let sp = emb.velocity_spaces(&jet.pos, jet.t).unwrap();
            let ambient = emb.ambient_jet(&jet).unwrap();
            let e = el_residual(&sys, &ambient).unwrap();
            let pushed = &sp.basis * DVector::from_column_slice(&xi);
            let lhs: f64 = e.iter().zip(pushed.iter()).map(|(a, b)| a * b).sum();
            let rhs = variational_derivative(&l, &jet, &xi).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9, "lhs {lhs}, rhs {rhs}");
        }
    }

    #[test]
    fn intrinsic_and_ambient_actions_agree() {
        let sys = LagrangianSystem::from_source(3, "0.5*(qd1^2 + qd2^2 + qd3^2) - 9.81*q3")
            .unwrap();
        let emb = hoop(1.0, 2.0);
        let l = emb.intrinsic_lagrangian(&sys).unwrap();
        let gamma = ExprCurve::new(vec![parse("0.4*sin(t) + 0.2*t").unwrap()]).unwrap();
        let mapped = MappedCurve::new(Arc::new(
            ExprCurve::new(vec![parse("0.4*sin(t) + 0.2*t").unwrap()]).unwrap(),
        ), Arc::clone(emb.forward_map())).unwrap();
        let a = action_integral(&l, &gamma, 0.0, 3.0, 1000).unwrap();
        let b = action_integral(&sys, &mapped, 0.0, 3.0, 1000).unwrap();
        assert!((a - b).abs() <= 1e-9, "intrinsic {a}, ambient {b}");
    }

    #[test]
    fn drift_vanishes_on_embedded_trajectories() {
        let emb = hoop(1.0, 2.0);
        let mut samples = Vec::new();
        for k in 0..=200 {
            let t = k as f64 * 0.02;
            let th = 0.3 * t.sin() + 0.5;
            let jet = CurveJet { t, pos: vec![th], vel: vec![0.0], acc: vec![0.0] };
            samples.push(emb.ambient_jet(&jet).unwrap());
        }
        let traj = Trajectory { chart: "q".into(), samples, step: 0.02, method: "analytic".into() };
        let d = emb.constraint_drift(&traj).unwrap();
        assert!(d <= 1e-12, "drift {d}");
    }

    #[test]
    fn drift_detects_displacement_at_first_order() {
        let emb = hoop(1.0, 2.0);
        let jet = CurveJet { t: 0.3, pos: vec![0.9], vel: vec![0.0], acc: vec![0.0] };
        let mut ambient = emb.ambient_jet(&jet).unwrap();
        // push the point off the sphere along its radius by 0.01
        for p in ambient.pos.iter_mut() {
            *p *= 1.01;
        }
        let traj = Trajectory {
            chart: "q".into(),
            samples: vec![ambient],
            step: 1.0,
            method: "analytic".into(),
        };
        let d = emb.constraint_drift(&traj).unwrap();
        // f = |q|^2 - 1 responds with 2*0.01 to first order
        assert!((d - 0.02).abs() <= 2e-4, "drift {d}");
    }

    #[test]
    fn empty_residual_list_reports_zero_drift() {
        let emb = ConstraintEmbedding::from_sources(
            &["cos(x1)".into(), "sin(x1)".into()],
            1,
            &[],
        )
        .unwrap();
        assert!(!emb.has_residuals());
        let traj = Trajectory {
            chart: "q".into(),
            samples: vec![CurveJet { t: 0.0, pos: vec![1.0, 0.0], vel: vec![0.0, 0.0], acc: vec![0.0, 0.0] }],
            step: 1.0,
            method: "analytic".into(),
        };
        assert_eq!(emb.constraint_drift(&traj).unwrap(), 0.0);
    }

    #[test]
    fn compatibility_identity_holds_on_the_image() {
        let emb = hoop(1.0, 2.0);
        let samples: Vec<(Vec<f64>, f64)> =
            vec![(vec![0.3], 0.0), (vec![1.2], 0.7), (vec![-0.8], 2.9)];
        let e = emb.compatibility_error(&samples).unwrap();
        assert!(e <= 1e-10, "compatibility error {e}");
    }

    #[test]
    fn rank_loss_is_reported() {
        // cusp parametrization: Jacobian vanishes at x = 0
        let emb = ConstraintEmbedding::from_sources(&["x1^2".into(), "x1^3".into()], 1, &[])
            .unwrap();
        let err = emb.velocity_spaces(&[0.0], 0.0).unwrap_err();
        assert!(matches!(err, EngineError::RankDeficient { .. }), "{err}");
        assert!(emb.velocity_spaces(&[0.5], 0.0).is_ok());
    }

    #[test]
    fn stray_residual_variables_are_rejected() {
        let err = ConstraintEmbedding::from_sources(
            &["cos(x1)".into(), "sin(x1)".into()],
            1,
            &["q3 - 1".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("`q3`"));
    }
}
