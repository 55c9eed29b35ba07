//! Smooth time-dependent coordinate maps `(x, t) -> Q(x, t)`.
//!
//! [`SmoothMap`] is the shared substrate for moving frames (square maps),
//! constraint embeddings (tall maps) and atlas transitions (compositions).
//! Evaluation is generic over the AD scalar kind, so a map's value, its
//! spatial Jacobian and its explicit time derivative are all available as
//! derivative-carrying quantities: partials are taken by re-evaluating the
//! map on first-order duals over the caller's scalar, which is what keeps
//! pullback Lagrangians differentiable to second order.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dualnum::{lift, Dual1, Dual2, Scalar};
use crate::error::EngineError;
use crate::exprlang::{EvalError, Expr};

#[derive(Debug, Clone, Copy)]
enum VarSlot {
    X(usize),
    T,
}

#[derive(Debug, Clone)]
enum MapKind {
    /// Components authored as expressions over the input chart and `t`.
    Exprs {
        comps: Vec<Expr>,
        slots: Vec<Vec<VarSlot>>,
    },
    /// `outer(inner(x, t), t)`.
    Composed {
        outer: Arc<SmoothMap>,
        inner: Arc<SmoothMap>,
    },
    /// `base(x, t + shift)`.
    Shifted { base: Arc<SmoothMap>, shift: f64 },
    /// The identity chart, kept exact rather than parsed.
    Identity,
}

/// A smooth map from an `in_dim`-dimensional chart (plus time) to an
/// `out_dim`-dimensional one.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    in_dim: usize,
    out_dim: usize,
    kind: MapKind,
}

/// Value, spatial Jacobian and explicit time derivative at a point, all in
/// the caller's scalar kind.
pub struct MapPartials<S> {
    pub value: Vec<S>,
    /// `jac[i][j] = dQ_i / dx_j`.
    pub jac: Vec<Vec<S>>,
    /// `dt[i] = dQ_i / dt` at frozen `x`.
    pub dt: Vec<S>,
}

impl SmoothMap {
    /// Builds a map from component expressions. Components may reference
    /// `{input_prefix}1 ..= {input_prefix}{in_dim}` and `t`; anything else
    /// is rejected by name.
    pub fn from_exprs(
        comps: Vec<Expr>,
        in_dim: usize,
        input_prefix: &str,
    ) -> Result<Self, EngineError> {
        let out_dim = comps.len();
        if out_dim == 0 {
            return Err(EngineError::invalid("a coordinate map needs at least one component"));
        }
        let mut slots = Vec::with_capacity(out_dim);
        for (i, comp) in comps.iter().enumerate() {
            let mut comp_slots = Vec::with_capacity(comp.vars().len());
            for name in comp.vars() {
                comp_slots.push(resolve_slot(name, in_dim, input_prefix).ok_or_else(|| {
                    EngineError::invalid(format!(
                        "unknown variable `{name}` in map component {} (allowed: \
                         {input_prefix}1..{input_prefix}{in_dim} and t)",
                        i + 1
                    ))
                })?);
            }
            slots.push(comp_slots);
        }
        Ok(SmoothMap { in_dim, out_dim, kind: MapKind::Exprs { comps, slots } })
    }

    pub fn identity(dim: usize) -> Self {
        SmoothMap { in_dim: dim, out_dim: dim, kind: MapKind::Identity }
    }

    /// `outer(inner(x, t), t)`; the dimensions must chain.
    pub fn composed(outer: Arc<SmoothMap>, inner: Arc<SmoothMap>) -> Result<Self, EngineError> {
        if inner.out_dim != outer.in_dim {
            return Err(EngineError::DimensionMismatch {
                what: "map composition",
                expected: outer.in_dim,
                got: inner.out_dim,
            });
        }
        Ok(SmoothMap {
            in_dim: inner.in_dim,
            out_dim: outer.out_dim,
            kind: MapKind::Composed { outer, inner },
        })
    }

    /// Same map with its time argument shifted: `(x, t) -> base(x, t + shift)`.
    pub fn shifted(base: Arc<SmoothMap>, shift: f64) -> Self {
        if shift == 0.0 {
            return (*base).clone();
        }
        SmoothMap { in_dim: base.in_dim, out_dim: base.out_dim, kind: MapKind::Shifted { base, shift } }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, MapKind::Identity)
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Evaluates the map at `(x, t)` in any scalar kind.
    pub fn value<S: Scalar>(&self, x: &[S], t: S) -> Result<Vec<S>, EvalError> {
        assert_eq!(x.len(), self.in_dim, "map input dimension");
        match &self.kind {
            MapKind::Exprs { comps, slots } => {
                let mut out = Vec::with_capacity(self.out_dim);
                for (comp, comp_slots) in comps.iter().zip(slots) {
                    let vals: Vec<S> = comp_slots
                        .iter()
                        .map(|slot| match slot {
                            VarSlot::X(j) => x[*j],
                            VarSlot::T => t,
                        })
                        .collect();
                    out.push(comp.eval_slice(&vals)?);
                }
                Ok(out)
            }
            MapKind::Composed { outer, inner } => {
                let mid = inner.value(x, t)?;
                outer.value(&mid, t)
            }
            MapKind::Shifted { base, shift } => base.value(x, t + S::constant(*shift)),
            MapKind::Identity => Ok(x.to_vec()),
        }
    }

    /// Value, Jacobian and time derivative via one extra derivative order.
    pub fn partials<S: Scalar>(&self, x: &[S], t: S) -> Result<MapPartials<S>, EvalError> {
        let lifted: Vec<Dual1<S>> = x.iter().map(|&v| Dual1::plain(v)).collect();
        let t_pass = self.value(&lifted, Dual1::new(t, S::constant(1.0)))?;
        let value: Vec<S> = t_pass.iter().map(|d| d.val).collect();
        let dt: Vec<S> = t_pass.iter().map(|d| d.dot).collect();
        let mut jac = vec![vec![S::constant(0.0); self.in_dim]; self.out_dim];
        for j in 0..self.in_dim {
            let seeded: Vec<Dual1<S>> = x
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    Dual1::new(v, S::constant(if k == j { 1.0 } else { 0.0 }))
                })
                .collect();
            let out = self.value(&seeded, Dual1::plain(t))?;
            for (i, o) in out.iter().enumerate() {
                jac[i][j] = o.dot;
            }
        }
        Ok(MapPartials { value, jac, dt })
    }

    /// Transports a first-order jet: `q = Q(x, t)`,
    /// `qd_i = sum_j dQ_i/dx_j xd_j + dQ_i/dt`.
    pub fn push<S: Scalar>(&self, x: &[S], xd: &[S], t: S) -> Result<(Vec<S>, Vec<S>), EvalError> {
        assert_eq!(xd.len(), self.in_dim, "map velocity dimension");
        let p = self.partials(x, t)?;
        let mut qd = Vec::with_capacity(self.out_dim);
        for i in 0..self.out_dim {
            let mut v = p.dt[i];
            for j in 0..self.in_dim {
                v = v + p.jac[i][j] * xd[j];
            }
            qd.push(v);
        }
        Ok((p.value, qd))
    }

    /// Transports a second-order jet along a curve through `(x, t)`:
    /// the output acceleration collects the full chain-rule expansion
    /// `J xdd + xd^T (d2Q/dx dx) xd + 2 (d2Q/dx dt) xd + d2Q/dt2`.
    pub fn accel_push(
        &self,
        x: &[f64],
        xd: &[f64],
        xdd: &[f64],
        t: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), EvalError> {
        assert_eq!(xdd.len(), self.in_dim, "map acceleration dimension");
        // One hyperdual pass along the curve direction (xd, 1) gives the
        // velocity in d1 and the quadratic curvature term in d12.
        let seeded: Vec<Dual2> = x
            .iter()
            .zip(xd)
            .map(|(&xi, &vi)| lift(xi, vi, vi))
            .collect();
        let along = self.value(&seeded, lift(t, 1.0, 1.0))?;
        let p = self.partials(x, t)?;
        let mut q = Vec::with_capacity(self.out_dim);
        let mut qd = Vec::with_capacity(self.out_dim);
        let mut qdd = Vec::with_capacity(self.out_dim);
        for (i, o) in along.iter().enumerate() {
            q.push(o.val);
            qd.push(o.d1);
            let mut a = o.d12;
            for j in 0..self.in_dim {
                a += p.jac[i][j] * xdd[j];
            }
            qdd.push(a);
        }
        Ok((q, qd, qdd))
    }

    /// Spatial Jacobian as a dense matrix (plain scalars).
    pub fn jacobian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, EvalError> {
        let p = self.partials(x, t)?;
        Ok(DMatrix::from_fn(self.out_dim, self.in_dim, |i, j| p.jac[i][j]))
    }

    /// Explicit time derivative at frozen `x` (plain scalars).
    pub fn time_derivative(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        Ok(self.partials(x, t)?.dt)
    }
}

fn resolve_slot(name: &str, in_dim: usize, prefix: &str) -> Option<VarSlot> {
    if name == "t" {
        return Some(VarSlot::T);
    }
    let rest = name.strip_prefix(prefix)?;
    let k: usize = rest.parse().ok()?;
    if k >= 1 && k <= in_dim {
        Some(VarSlot::X(k - 1))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;

    fn rotation() -> SmoothMap {
        SmoothMap::from_exprs(
            vec![
                parse("x1*cos(t) - x2*sin(t)").unwrap(),
                parse("x1*sin(t) + x2*cos(t)").unwrap(),
            ],
            2,
            "x",
        )
        .unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a}");
    }

    #[test]
    fn rejects_stray_variables() {
        let err = SmoothMap::from_exprs(vec![parse("x1 + y").unwrap()], 1, "x").unwrap_err();
        assert!(err.to_string().contains("`y`"));
        let err = SmoothMap::from_exprs(vec![parse("x3").unwrap()], 2, "x").unwrap_err();
        assert!(err.to_string().contains("`x3`"));
    }

    #[test]
    fn rotation_partials_match_closed_form() {
        let m = rotation();
        let (x, t) = ([0.8, -0.3], 0.6_f64);
        let p = m.partials(&x, t).unwrap();
        let (s, c) = t.sin_cos();
        close(p.jac[0][0], c, 1e-15);
        close(p.jac[0][1], -s, 1e-15);
        close(p.jac[1][0], s, 1e-15);
        close(p.jac[1][1], c, 1e-15);
        close(p.dt[0], -x[0] * s - x[1] * c, 1e-15);
        close(p.dt[1], x[0] * c - x[1] * s, 1e-15);
    }

    #[test]
    fn push_adds_transport_velocity() {
        // Pure translation: q = x + 2t, so qd = xd + 2.
        let m = SmoothMap::from_exprs(vec![parse("x1 + 2*t").unwrap()], 1, "x").unwrap();
        let (q, qd) = m.push(&[0.0], &[1.0], 0.0).unwrap();
        assert_eq!(q[0], 0.0);
        assert_eq!(qd[0], 3.0);
    }

    #[test]
    fn accel_push_reproduces_circular_acceleration() {
        // A point frozen in the rotating chart moves on a circle:
        // qdd = -q exactly.
        let m = rotation();
        let (q, qd, qdd) = m.accel_push(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], 0.4).unwrap();
        close(qdd[0], -q[0], 1e-14);
        close(qdd[1], -q[1], 1e-14);
        // Velocity of the frozen point is the transport field.
        let dt = m.time_derivative(&[1.0, 0.0], 0.4).unwrap();
        close(qd[0], dt[0], 1e-15);
        close(qd[1], dt[1], 1e-15);
    }

    #[test]
    fn composition_chains_jacobians() {
        // inner: scaling by e^t, outer: rotation. Composite Jacobian is
        // R(t) * e^t; time derivative collects both motions.
        let inner = Arc::new(
            SmoothMap::from_exprs(
                vec![parse("exp(t)*x1").unwrap(), parse("exp(t)*x2").unwrap()],
                2,
                "x",
            )
            .unwrap(),
        );
        let outer = Arc::new(rotation());
        let m = SmoothMap::composed(outer.clone(), inner.clone()).unwrap();
        let (x, t) = ([0.5, 0.2], 0.3_f64);
        let p = m.partials(&x, t).unwrap();
        let (s, c) = t.sin_cos();
        let e = t.exp();
        close(p.jac[0][0], c * e, 1e-14);
        close(p.jac[0][1], -s * e, 1e-14);
        // dQ/dt = d(rotation)/dt o inner + R * d(inner)/dt
        let mid = inner.value(&x, t).unwrap();
        let expect0 = (-mid[0] * s - mid[1] * c) + (c * e * x[0] - s * e * x[1]);
        close(p.dt[0], expect0, 1e-14);
    }

    #[test]
    fn shifted_map_moves_its_clock() {
        let base = Arc::new(SmoothMap::from_exprs(vec![parse("x1*t").unwrap()], 1, "x").unwrap());
        let m = SmoothMap::shifted(base, 2.0);
        let v = m.value(&[3.0], 1.0).unwrap();
        assert_eq!(v[0], 9.0);
    }

    #[test]
    fn identity_is_exact() {
        let m = SmoothMap::identity(3);
        let x = [0.1, -0.2, 0.3];
        let (q, qd) = m.push(&x, &[1.0, 2.0, 3.0], 5.0).unwrap();
        assert_eq!(q, x.to_vec());
        assert_eq!(qd, vec![1.0, 2.0, 3.0]);
        let j = m.jacobian(&x, 5.0).unwrap();
        assert_eq!(j, DMatrix::identity(3, 3));
    }

    #[test]
    fn composition_dimension_mismatch_is_rejected() {
        let a = Arc::new(SmoothMap::identity(2));
        let b = Arc::new(SmoothMap::identity(3));
        assert!(SmoothMap::composed(a, b).is_err());
    }
}
