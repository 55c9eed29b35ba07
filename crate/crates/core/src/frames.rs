//! Time-dependent changes of chart ("moving frames"): square smooth maps
//! `q = Q(x, t)` with invertible Jacobian, their angular-velocity fields,
//! velocity transport in both directions, and the pullback of Lagrangians
//! into the moving chart.
//!
//! All Jacobians and time derivatives come from the map's own AD partials;
//! nothing is hand-supplied, so `Q` and its derivatives cannot disagree.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::EngineError;
use crate::linalg;
use crate::map::SmoothMap;
use crate::mechanics::{CurveJet, LagrangianSystem};
use crate::solvers::Trajectory;

/// Position, velocity and time in a named chart.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityState {
    pub chart: String,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub time: f64,
}

impl VelocityState {
    pub fn new(chart: &str, position: Vec<f64>, velocity: Vec<f64>, time: f64) -> Self {
        VelocityState { chart: chart.to_string(), position, velocity, time }
    }
}

/// A time-dependent diffeomorphism between a moving chart (coordinates `x`)
/// and a fixed chart (coordinates `q`).
#[derive(Debug, Clone)]
pub struct FrameMap {
    map: Arc<SmoothMap>,
    inverse: Option<Arc<SmoothMap>>,
    valid_t: (f64, f64),
    moving_chart: String,
    fixed_chart: String,
}

const INVERT_TOL: f64 = 1e-12;
const INVERT_MAX_ITER: usize = 50;

impl FrameMap {
    /// Builds a frame from forward components `Q^i(x1..xn, t)` and optional
    /// inverse components `X^i(q1..qn, t)`.
    pub fn new(forward: Vec<crate::exprlang::Expr>, inverse: Option<Vec<crate::exprlang::Expr>>)
        -> Result<Self, EngineError>
    {
        let n = forward.len();
        let map = SmoothMap::from_exprs(forward, n, "x")?;
        let inv = match inverse {
            Some(comps) => {
                if comps.len() != n {
                    return Err(EngineError::DimensionMismatch {
                        what: "frame inverse components",
                        expected: n,
                        got: comps.len(),
                    });
                }
                Some(Arc::new(SmoothMap::from_exprs(comps, n, "q")?))
            }
            None => None,
        };
        Ok(Self::from_maps(Arc::new(map), inv))
    }

    pub fn from_sources(
        forward: &[String],
        inverse: Option<&[String]>,
    ) -> Result<Self, EngineError> {
        let parse_all = |srcs: &[String]| -> Result<Vec<crate::exprlang::Expr>, EngineError> {
            srcs.iter()
                .map(|s| crate::exprlang::parse(s).map_err(|e| EngineError::invalid(e.to_string())))
                .collect()
        };
        FrameMap::new(parse_all(forward)?, inverse.map(parse_all).transpose()?)
    }

    /// Wraps an existing square map (used for composed transitions).
    pub fn from_maps(map: Arc<SmoothMap>, inverse: Option<Arc<SmoothMap>>) -> Self {
        assert_eq!(map.in_dim(), map.out_dim(), "frame maps must be square");
        if let Some(inv) = &inverse {
            assert_eq!(inv.in_dim(), map.in_dim(), "inverse dimension");
        }
        FrameMap {
            map,
            inverse,
            valid_t: (f64::NEG_INFINITY, f64::INFINITY),
            moving_chart: "x".to_string(),
            fixed_chart: "q".to_string(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_maps(Arc::new(SmoothMap::identity(n)), Some(Arc::new(SmoothMap::identity(n))))
    }

    /// Restricts the frame to a time interval; outside it every operation
    /// fails with the interval in the error.
    pub fn with_validity(mut self, lo: f64, hi: f64) -> Self {
        self.valid_t = (lo, hi);
        self
    }

    pub fn n(&self) -> usize {
        self.map.in_dim()
    }

    pub fn forward_map(&self) -> &Arc<SmoothMap> {
        &self.map
    }

    pub fn inverse_map(&self) -> Option<&Arc<SmoothMap>> {
        self.inverse.as_ref()
    }

    pub fn validity(&self) -> (f64, f64) {
        self.valid_t
    }

    pub fn check_time(&self, t: f64) -> Result<(), EngineError> {
        if t < self.valid_t.0 || t > self.valid_t.1 {
            return Err(EngineError::OutsideValidity { t, lo: self.valid_t.0, hi: self.valid_t.1 });
        }
        Ok(())
    }

    /// `q = Q(x, t)`.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EngineError> {
        self.check_time(t)?;
        Ok(self.map.value(x, t)?)
    }

    fn jacobian_matrix(&self, x: &[f64], t: f64) -> Result<(DMatrix<f64>, Vec<f64>), EngineError> {
        let p = self.map.partials(x, t)?;
        let n = self.n();
        let j = DMatrix::from_fn(n, n, |r, c| p.jac[r][c]);
        Ok((j, p.dt))
    }

    /// Transport term in the fixed chart: `omega = dQ/dt(x, t)` at the image
    /// point.
    pub fn angular_velocity_fixed(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EngineError> {
        self.check_time(t)?;
        Ok(self.map.time_derivative(x, t)?)
    }

    /// Transport term seen from the moving chart: the solution of
    /// `J Omega = dQ/dt`.
    pub fn angular_velocity_moving(&self, x: &[f64], t: f64) -> Result<Vec<f64>, EngineError> {
        self.check_time(t)?;
        let (j, dt) = self.jacobian_matrix(x, t)?;
        let rhs = DVector::from_column_slice(&dt);
        match linalg::solve_checked(&j, &rhs, linalg::COND_LIMIT) {
            Ok(v) => Ok(v.iter().copied().collect()),
            Err(cond) => Err(EngineError::SingularJacobian { t, cond }),
        }
    }

    /// Velocity addition into the fixed chart: `qd = J xd + dQ/dt`.
    pub fn push_velocity(&self, x: &[f64], xd: &[f64], t: f64)
        -> Result<(Vec<f64>, Vec<f64>), EngineError>
    {
        self.check_time(t)?;
        Ok(self.map.push(x, xd, t)?)
    }

    /// Inverse velocity law: `x = X(q, t)`, `xd = J^{-1}(qd - dQ/dt)`.
    /// `seed` starts the Newton fallback when no inverse expressions exist.
    pub fn pull_velocity(&self, q: &[f64], qd: &[f64], t: f64, seed: Option<&[f64]>)
        -> Result<(Vec<f64>, Vec<f64>), EngineError>
    {
        self.check_time(t)?;
        let x = self.invert_point(q, t, seed)?;
        let (j, dt) = self.jacobian_matrix(&x, t)?;
        let rhs = DVector::from_fn(self.n(), |i, _| qd[i] - dt[i]);
        match linalg::solve_checked(&j, &rhs, linalg::COND_LIMIT) {
            Ok(v) => Ok((x, v.iter().copied().collect())),
            Err(cond) => Err(EngineError::SingularJacobian { t, cond }),
        }
    }

    pub fn push_state(&self, state: &VelocityState) -> Result<VelocityState, EngineError> {
        let (q, qd) = self.push_velocity(&state.position, &state.velocity, state.time)?;
        Ok(VelocityState::new(&self.fixed_chart, q, qd, state.time))
    }

    pub fn pull_state(
        &self,
        state: &VelocityState,
        seed: Option<&[f64]>,
    ) -> Result<VelocityState, EngineError> {
        let (x, xd) = self.pull_velocity(&state.position, &state.velocity, state.time, seed)?;
        Ok(VelocityState::new(&self.moving_chart, x, xd, state.time))
    }

    /// Solves `Q(x, t) = q` for `x`: explicit inverse when present,
    /// otherwise Newton from `seed` (default: `q` itself).
    pub fn invert_point(&self, q: &[f64], t: f64, seed: Option<&[f64]>)
        -> Result<Vec<f64>, EngineError>
    {
        self.check_time(t)?;
        if let Some(inv) = &self.inverse {
            return Ok(inv.value(q, t)?);
        }
        let mut x: Vec<f64> = seed.unwrap_or(q).to_vec();
        assert_eq!(x.len(), self.n(), "inversion seed dimension");
        let mut residual = f64::INFINITY;
        for _ in 0..INVERT_MAX_ITER {
            let qx = self.map.value(&x, t)?;
            let r: Vec<f64> = qx.iter().zip(q).map(|(a, b)| a - b).collect();
            residual = linalg::max_abs(&r);
            if residual <= INVERT_TOL {
                return Ok(x);
            }
            let (j, _) = self.jacobian_matrix(&x, t)?;
            let step = linalg::solve_checked(&j, &DVector::from_column_slice(&r), linalg::COND_LIMIT)
                .map_err(|cond| EngineError::SingularJacobian { t, cond })?;
            for (xi, si) in x.iter_mut().zip(step.iter()) {
                *xi -= si;
            }
        }
        Err(EngineError::InversionFailure { t, residual, iterations: INVERT_MAX_ITER })
    }

    /// The Lagrangian rewritten in moving-chart variables through the
    /// velocity-addition law. Derivatives of the result flow through the
    /// composition by AD.
    pub fn pullback_lagrangian(&self, sys: &LagrangianSystem) -> Result<LagrangianSystem, EngineError> {
        sys.pullback_through(Arc::clone(&self.map), &self.moving_chart)
    }

    /// Maps a moving-chart trajectory into the fixed chart, jets included
    /// (second-order transport through `Q`).
    pub fn map_trajectory(&self, traj: &Trajectory) -> Result<Trajectory, EngineError> {
        let mut samples = Vec::with_capacity(traj.samples.len());
        for jet in &traj.samples {
            samples.push(self.map_jet(jet)?);
        }
        Ok(Trajectory {
            chart: self.fixed_chart.clone(),
            samples,
            step: traj.step,
            method: traj.method.clone(),
        })
    }

    /// Maps one jet through the frame.
    pub fn map_jet(&self, jet: &CurveJet) -> Result<CurveJet, EngineError> {
        self.check_time(jet.t)?;
        let (pos, vel, acc) = self.map.accel_push(&jet.pos, &jet.vel, &jet.acc, jet.t)?;
        Ok(CurveJet { t: jet.t, pos, vel, acc })
    }

    /// Spatial differential applied to a chart vector: `J(x, t) v`.
    pub fn push_vector(&self, x: &[f64], v: &[f64], t: f64) -> Result<Vec<f64>, EngineError> {
        let (j, _) = self.jacobian_matrix(x, t)?;
        let out = &j * DVector::from_column_slice(v);
        Ok(out.iter().copied().collect())
    }

    /// Largest round-trip deviation `|X(Q(x,t),t) - x|` over the samples;
    /// also fails if the Jacobian is numerically singular anywhere.
    pub fn inverse_roundtrip_error(&self, samples: &[(Vec<f64>, f64)]) -> Result<f64, EngineError> {
        let mut worst: f64 = 0.0;
        for (x, t) in samples {
            self.check_time(*t)?;
            let (j, _) = self.jacobian_matrix(x, *t)?;
            let cond = linalg::condition(&j);
            if cond > linalg::COND_LIMIT {
                return Err(EngineError::SingularJacobian { t: *t, cond });
            }
            let q = self.map.value(x, *t)?;
            let back = self.invert_point(&q, *t, Some(x))?;
            let dev = x
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            worst = worst.max(dev);
        }
        Ok(worst)
    }
}
