//! Reference frames over a shared event space: each frame is a spatial
//! chart related to a designated standard chart by a time-dependent map,
//! plus a clock offset `c` relating its clock to absolute time,
//! `tau = t_frame + c`.
//!
//! Everything here is evaluated on the absolute clock and converted to frame
//! clocks only at the boundary. Clock offsets then enter exclusively as
//! differences, which keeps the offset-coherence property exact.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::EngineError;
use crate::frames::FrameMap;
use crate::linalg;
use crate::map::SmoothMap;
use crate::mechanics::{
    variational_derivative, Curve, CurveJet, DisplacementField, LagrangianSystem,
};

/// One frame of an atlas: a clock offset and the spatial map into the
/// standard chart, parameterized by absolute time.
#[derive(Debug, Clone)]
pub struct ReferenceFrame {
    pub id: String,
    pub clock_offset: f64,
    pub to_standard: FrameMap,
}

impl ReferenceFrame {
    pub fn standard(id: &str, n: usize) -> Self {
        ReferenceFrame {
            id: id.to_string(),
            clock_offset: 0.0,
            to_standard: FrameMap::identity(n),
        }
    }
}

/// A collection of frames sharing one spatial dimension, with a designated
/// standard frame (offset zero, identity map).
#[derive(Debug, Clone)]
pub struct FrameAtlas {
    frames: Vec<ReferenceFrame>,
    standard: usize,
}

impl FrameAtlas {
    pub fn new(frames: Vec<ReferenceFrame>, standard_id: &str) -> Result<Self, EngineError> {
        if frames.is_empty() {
            return Err(EngineError::invalid("an atlas needs at least one frame"));
        }
        let n = frames[0].to_standard.n();
        let mut standard = None;
        for (i, f) in frames.iter().enumerate() {
            if f.to_standard.n() != n {
                return Err(EngineError::DimensionMismatch {
                    what: "atlas frame dimension",
                    expected: n,
                    got: f.to_standard.n(),
                });
            }
            if frames.iter().filter(|g| g.id == f.id).count() > 1 {
                return Err(EngineError::invalid(format!("duplicate frame id `{}`", f.id)));
            }
            if f.id == standard_id {
                standard = Some(i);
            }
        }
        let standard = standard.ok_or_else(|| {
            EngineError::invalid(format!("standard frame `{standard_id}` is not in the atlas"))
        })?;
        let std_frame = &frames[standard];
        if std_frame.clock_offset != 0.0 {
            return Err(EngineError::invalid(
                "the standard frame must have clock offset 0",
            ));
        }
        if !std_frame.to_standard.forward_map().is_identity() {
            return Err(EngineError::invalid(
                "the standard frame must carry the identity spatial map",
            ));
        }
        Ok(FrameAtlas { frames, standard })
    }

    pub fn n(&self) -> usize {
        self.frames[0].to_standard.n()
    }

    pub fn standard_id(&self) -> &str {
        &self.frames[self.standard].id
    }

    pub fn frame_ids(&self) -> Vec<&str> {
        self.frames.iter().map(|f| f.id.as_str()).collect()
    }

    pub fn frames(&self) -> &[ReferenceFrame] {
        &self.frames
    }

    pub fn frame(&self, id: &str) -> Result<&ReferenceFrame, EngineError> {
        self.frames
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| EngineError::invalid(format!("unknown frame id `{id}`")))
    }

    /// The same atlas with every clock advanced by a shared constant. Only
    /// offset differences are observable, so reports must not change.
    pub fn with_common_clock_shift(&self, shift: f64) -> FrameAtlas {
        let mut frames = self.frames.clone();
        for f in frames.iter_mut() {
            f.clock_offset += shift;
        }
        // the designated standard no longer has offset 0; keep the structure
        // but bypass the constructor checks, the geometry is unchanged
        FrameAtlas { frames, standard: self.standard }
    }

    /// Chart-change map from one frame to another and the clock relabeling:
    /// `t_to = t_from + offset` with `offset = c_from - c_to`. The spatial
    /// map is the composition through the standard chart, parameterized by
    /// the `from` clock.
    pub fn transition(&self, from: &str, to: &str) -> Result<(FrameMap, f64), EngineError> {
        let f = self.frame(from)?;
        let g = self.frame(to)?;
        let offset = f.clock_offset - g.clock_offset;
        if from == to {
            return Ok((FrameMap::identity(self.n()), 0.0));
        }
        // x_to = G^{-1}(F(x_from, tau), tau) at tau = t_from + c_from
        let g_inv = g
            .to_standard
            .inverse_map()
            .cloned()
            .or_else(|| g.to_standard.forward_map().is_identity().then(|| Arc::new(SmoothMap::identity(self.n()))))
            .ok_or(EngineError::MissingInverse)?;
        let shift = f.clock_offset;
        let fwd = SmoothMap::composed(
            Arc::new(SmoothMap::shifted(g_inv, shift)),
            Arc::new(SmoothMap::shifted(Arc::clone(f.to_standard.forward_map()), shift)),
        )?;
        let inv = match f.to_standard.inverse_map() {
            Some(f_inv) => Some(Arc::new(SmoothMap::composed(
                Arc::new(SmoothMap::shifted(Arc::clone(f_inv), shift)),
                Arc::new(SmoothMap::shifted(
                    Arc::clone(g.to_standard.forward_map()),
                    shift,
                )),
            )?)),
            None if f.to_standard.forward_map().is_identity() => {
                Some(Arc::new(SmoothMap::shifted(
                    Arc::clone(g.to_standard.forward_map()),
                    shift,
                )))
            }
            None => None,
        };
        let (flo, fhi) = f.to_standard.validity();
        let (glo, ghi) = g.to_standard.validity();
        let lo = flo.max(glo);
        let hi = fhi.min(ghi);
        let mut map = FrameMap::from_maps(Arc::new(fwd), inv);
        if lo.is_finite() || hi.is_finite() {
            // validity was stated on the absolute clock; relabel
            map = map.with_validity(lo - shift, hi - shift);
        }
        Ok((map, offset))
    }

    /// The standard-chart Lagrangian rewritten for a frame: pulled back
    /// through the frame's spatial map and relabelled to the frame clock.
    pub fn frame_lagrangian(
        &self,
        l_std: &LagrangianSystem,
        target: &str,
    ) -> Result<LagrangianSystem, EngineError> {
        if l_std.n() != self.n() {
            return Err(EngineError::DimensionMismatch {
                what: "atlas Lagrangian",
                expected: self.n(),
                got: l_std.n(),
            });
        }
        let f = self.frame(target)?;
        let pulled = f.to_standard.pullback_lagrangian(l_std)?;
        Ok(pulled.with_time_shift(f.clock_offset))
    }
}

/// A curve through the event space, stored in standard coordinates as a
/// function of absolute time.
pub struct WorldLine {
    pub standard: Arc<dyn Curve>,
}

impl WorldLine {
    pub fn new(standard: Arc<dyn Curve>) -> Self {
        WorldLine { standard }
    }

    pub fn from_sources(sources: &[String]) -> Result<Self, EngineError> {
        Ok(WorldLine {
            standard: Arc::new(crate::mechanics::ExprCurve::from_sources(sources)?),
        })
    }
}

/// Frame-chart data of a worldline point: the intrinsic jet and the spatial
/// Jacobian factorization used to pull displacement vectors.
fn pull_jet(
    frame: &ReferenceFrame,
    std_jet: &CurveJet,
    seed: Option<&[f64]>,
) -> Result<(CurveJet, DMatrix<f64>), EngineError> {
    let tau = std_jet.t;
    let map = &frame.to_standard;
    map.check_time(tau)?;
    let x = map.invert_point(&std_jet.pos, tau, seed)?;
    let p = map.forward_map().partials(&x, tau)?;
    let n = x.len();
    let j = DMatrix::from_fn(n, n, |r, c| p.jac[r][c]);
    let solve = |rhs: DVector<f64>| -> Result<Vec<f64>, EngineError> {
        linalg::solve_checked(&j, &rhs, linalg::COND_LIMIT)
            .map(|v| v.iter().copied().collect())
            .map_err(|cond| EngineError::SingularJacobian { t: tau, cond })
    };
    let xd = solve(DVector::from_fn(n, |i, _| std_jet.vel[i] - p.dt[i]))?;
    // transport curvature: the acceleration the map adds to a chart curve
    // with zero chart acceleration
    let zeros = vec![0.0; n];
    let (_, _, curv) = map.forward_map().accel_push(&x, &xd, &zeros, tau)?;
    let xdd = solve(DVector::from_fn(n, |i, _| std_jet.acc[i] - curv[i]))?;
    Ok((CurveJet { t: tau, pos: x, vel: xd, acc: xdd }, j))
}

/// A worldline expressed in a frame chart, still parameterized by absolute
/// time (clock relabeling does not change any jet component).
pub struct FrameCurve {
    frame: ReferenceFrame,
    line: Arc<dyn Curve>,
}

impl FrameCurve {
    pub fn new(frame: &ReferenceFrame, line: &WorldLine) -> Self {
        FrameCurve { frame: frame.clone(), line: Arc::clone(&line.standard) }
    }
}

impl Curve for FrameCurve {
    fn dim(&self) -> usize {
        self.frame.to_standard.n()
    }

    fn jet(&self, t: f64) -> Result<CurveJet, EngineError> {
        let std_jet = self.line.jet(t)?;
        let (jet, _) = pull_jet(&self.frame, &std_jet, None)?;
        Ok(jet)
    }
}

/// Variational-derivative values per frame and sample time.
#[derive(Debug, Clone)]
pub struct InvarianceReport {
    pub frame_ids: Vec<String>,
    /// `values[f][s]` is frame `f`'s value at sample `s`.
    pub values: Vec<Vec<f64>>,
    /// max minus min across frames, per sample
    pub spreads: Vec<f64>,
    pub max_discrepancy: f64,
}

/// Evaluates the variational derivative of the frame-form Lagrangian along
/// the worldline, in every frame of the atlas, at the given absolute times.
/// The displacement field is stated in standard coordinates and pulled into
/// each frame through the spatial Jacobian.
pub fn invariance_report(
    atlas: &FrameAtlas,
    l_std: &LagrangianSystem,
    line: &WorldLine,
    displacement: &DisplacementField,
    times: &[f64],
) -> Result<InvarianceReport, EngineError> {
    if l_std.n() != atlas.n() {
        return Err(EngineError::DimensionMismatch {
            what: "atlas Lagrangian",
            expected: atlas.n(),
            got: l_std.n(),
        });
    }
    if displacement.dim() != atlas.n() {
        return Err(EngineError::DimensionMismatch {
            what: "displacement field",
            expected: atlas.n(),
            got: displacement.dim(),
        });
    }
    let mut frame_ids = Vec::new();
    let mut values = Vec::new();
    for frame in atlas.frames() {
        let pulled = frame.to_standard.pullback_lagrangian(l_std)?;
        let mut row = Vec::with_capacity(times.len());
        let mut seed: Option<Vec<f64>> = None;
        for &tau in times {
            let std_jet = line.standard.jet(tau)?;
            let (jet, j) = pull_jet(frame, &std_jet, seed.as_deref())?;
            let eta_std = displacement.eval(&std_jet.pos, tau)?;
            let eta = linalg::solve_checked(
                &j,
                &DVector::from_column_slice(&eta_std),
                linalg::COND_LIMIT,
            )
            .map_err(|cond| EngineError::SingularJacobian { t: tau, cond })?;
            let eta: Vec<f64> = eta.iter().copied().collect();
            row.push(variational_derivative(&pulled, &jet, &eta)?);
            seed = Some(jet.pos.clone());
        }
        frame_ids.push(frame.id.clone());
        values.push(row);
    }
    let mut spreads = Vec::with_capacity(times.len());
    let mut max_discrepancy: f64 = 0.0;
    for s in 0..times.len() {
        let column: Vec<f64> = values.iter().map(|row| row[s]).collect();
        let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let spread = hi - lo;
        spreads.push(spread);
        max_discrepancy = max_discrepancy.max(spread);
    }
    Ok(InvarianceReport { frame_ids, values, spreads, max_discrepancy })
}

/// Action of the frame-form Lagrangian along the worldline between two
/// absolute times. Evaluating on the absolute clock is a relabeling of the
/// frame-clock integral, so values must agree across frames.
pub fn frame_action(
    atlas: &FrameAtlas,
    l_std: &LagrangianSystem,
    frame_id: &str,
    line: &WorldLine,
    tau_a: f64,
    tau_b: f64,
    panels: usize,
) -> Result<f64, EngineError> {
    let frame = atlas.frame(frame_id)?;
    let pulled = frame.to_standard.pullback_lagrangian(l_std)?;
    let curve = FrameCurve::new(frame, line);
    crate::mechanics::action_integral(&pulled, &curve, tau_a, tau_b, panels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation_frame(id: &str, c: f64) -> ReferenceFrame {
        ReferenceFrame {
            id: id.to_string(),
            clock_offset: c,
            to_standard: FrameMap::from_sources(
                &["x1*cos(t) - x2*sin(t)".into(), "x1*sin(t) + x2*cos(t)".into()],
                Some(&["q1*cos(t) + q2*sin(t)".into(), "-q1*sin(t) + q2*cos(t)".into()]),
            )
            .unwrap(),
        }
    }

    fn two_frame_atlas() -> FrameAtlas {
        FrameAtlas::new(
            vec![ReferenceFrame::standard("lab", 2), rotation_frame("carousel", 1.0)],
            "lab",
        )
        .unwrap()
    }

    fn free2() -> LagrangianSystem {
        LagrangianSystem::from_source(2, "0.5*(qd1^2 + qd2^2)").unwrap()
    }

    #[test]
    fn self_transition_is_the_identity() {
        let atlas = two_frame_atlas();
        let (map, offset) = atlas.transition("carousel", "carousel").unwrap();
        assert_eq!(offset, 0.0);
        let x = [0.4, -0.9];
        assert_eq!(map.forward(&x, 1.3).unwrap(), x.to_vec());
    }

    #[test]
    fn pure_clock_reset_transition() {
        let atlas = FrameAtlas::new(
            vec![
                ReferenceFrame::standard("lab", 1),
                ReferenceFrame {
                    id: "late".into(),
                    clock_offset: 5.0,
                    to_standard: FrameMap::identity(1),
                },
            ],
            "lab",
        )
        .unwrap();
        let (map, offset) = atlas.transition("lab", "late").unwrap();
        assert_eq!(offset, -5.0);
        assert_eq!(map.forward(&[0.7], 0.2).unwrap(), vec![0.7]);
    }

    #[test]
    fn rotating_transition_round_trip() {
        let atlas = two_frame_atlas();
        let (fwd, o1) = atlas.transition("carousel", "lab").unwrap();
        let (back, o2) = atlas.transition("lab", "carousel").unwrap();
        assert_eq!(o1, 1.0);
        assert_eq!(o2, -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..50 {
            let x = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(-3.0..3.0);
            // carousel -> lab at carousel time t, then lab -> carousel at
            // lab time t + o1
            let q = fwd.forward(&x, t).unwrap();
            let x2 = back.forward(&q, t + o1).unwrap();
            assert!(
                x.iter().zip(&x2).all(|(a, b)| (a - b).abs() <= 1e-10),
                "{x:?} vs {x2:?}"
            );
        }
    }

    #[test]
    fn transition_spatial_part_matches_the_frame_map() {
        let atlas = two_frame_atlas();
        let (map, _) = atlas.transition("carousel", "lab").unwrap();
        let frame = rotation_frame("x", 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for _ in 0..50 {
            let x = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(-3.0..3.0);
            // the transition runs on the carousel clock; the raw map on tau
            let got = map.forward(&x, t).unwrap();
            let want = frame.to_standard.forward(&x, t + 1.0).unwrap();
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }

    #[test]
    fn frame_lagrangian_in_the_standard_frame_is_unchanged() {
        let atlas = two_frame_atlas();
        let l = free2();
        let same = atlas.frame_lagrangian(&l, "lab").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        for _ in 0..20 {
            let q = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let qd = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(-2.0..2.0);
            assert_eq!(l.eval(&q, &qd, t).unwrap(), same.eval(&q, &qd, t).unwrap());
        }
    }

    #[test]
    fn rotating_frame_lagrangian_matches_the_pullback_form() {
        let atlas = two_frame_atlas();
        let l = atlas.frame_lagrangian(&free2(), "carousel").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let xd = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let t = rng.gen_range(-3.0..3.0);
            let got = l.eval(&x, &xd, t).unwrap();
            let want = 0.5 * (xd[0] * xd[0] + xd[1] * xd[1])
                + (x[0] * xd[1] - x[1] * xd[0])
                + 0.5 * (x[0] * x[0] + x[1] * x[1]);
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn clock_offset_shifts_the_time_slot() {
        let l_std = LagrangianSystem::from_source(1, "0.5*qd1^2 + t*q1").unwrap();
        let atlas = FrameAtlas::new(
            vec![
                ReferenceFrame::standard("lab", 1),
                ReferenceFrame {
                    id: "late".into(),
                    clock_offset: 1.0,
                    to_standard: FrameMap::identity(1),
                },
            ],
            "lab",
        )
        .unwrap();
        let l = atlas.frame_lagrangian(&l_std, "late").unwrap();
        for &t in &[0.0, 0.4, -2.0] {
            let got = l.eval(&[0.7], &[0.2], t).unwrap();
            let want = l_std.eval(&[0.7], &[0.2], t + 1.0).unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn single_frame_report_has_zero_spread() {
        let atlas = FrameAtlas::new(vec![ReferenceFrame::standard("lab", 1)], "lab").unwrap();
        let l = LagrangianSystem::from_source(1, "0.5*qd1^2 - 0.5*q1^2").unwrap();
        let line = WorldLine::from_sources(&["0.3*t^2".into()]).unwrap();
        let disp = DisplacementField::constant(vec![1.0]);
        let report = invariance_report(&atlas, &l, &line, &disp, &[0.1, 0.9, 2.3]).unwrap();
        assert_eq!(report.max_discrepancy, 0.0);
        assert!(report.values[0].iter().all(|v| v.abs() > 0.0));
    }

    #[test]
    fn straight_worldline_is_a_motion_in_every_frame() {
        let atlas = two_frame_atlas();
        let line = WorldLine::from_sources(&["0.2 + 0.5*t".into(), "-0.1 + 0.3*t".into()])
            .unwrap();
        let disp = DisplacementField::from_exprs(
            2,
            vec![parse("0.3 + 0.1*q2").unwrap(), parse("1 - 0.2*q1").unwrap()],
        )
        .unwrap();
        let times: Vec<f64> = (0..20).map(|k| 0.15 * k as f64).collect();
        let report = invariance_report(&atlas, &free2(), &line, &disp, &times).unwrap();
        for row in &report.values {
            for v in row {
                assert!(v.abs() <= 1e-10, "delta {v}");
            }
        }
        assert!(report.max_discrepancy <= 1e-10);
    }

    #[test]
    fn non_motion_worldline_gives_equal_nonzero_values() {
        let atlas = two_frame_atlas();
        let line = WorldLine::from_sources(&["sin(2*t)".into(), "0.3*t^2".into()]).unwrap();
        let disp = DisplacementField::constant(vec![0.7, -0.4]);
        let times: Vec<f64> = (1..15).map(|k| 0.2 * k as f64).collect();
        let report = invariance_report(&atlas, &free2(), &line, &disp, &times).unwrap();
        assert!(report.values[0].iter().any(|v| v.abs() > 1e-3));
        assert!(report.max_discrepancy <= 1e-9, "spread {}", report.max_discrepancy);
    }

    #[test]
    fn actions_between_fixed_events_agree_across_frames() {
        let atlas = two_frame_atlas();
        let l = free2();
        let line = WorldLine::from_sources(&["sin(t) + 0.2*t".into(), "cos(0.5*t)".into()])
            .unwrap();
        let a = frame_action(&atlas, &l, "lab", &line, 0.3, 2.7, 600).unwrap();
        let b = frame_action(&atlas, &l, "carousel", &line, 0.3, 2.7, 600).unwrap();
        assert!((a - b).abs() <= 1e-9, "lab {a}, carousel {b}");
    }

    #[test]
    fn common_clock_shifts_change_nothing_observable() {
        let atlas = two_frame_atlas();
        let shifted = atlas.with_common_clock_shift(2.5);
        let l = free2();
        let line = WorldLine::from_sources(&["sin(2*t)".into(), "0.3*t^2".into()]).unwrap();
        let disp = DisplacementField::constant(vec![0.7, -0.4]);
        let times: Vec<f64> = (1..10).map(|k| 0.2 * k as f64).collect();
        let r1 = invariance_report(&atlas, &l, &line, &disp, &times).unwrap();
        let r2 = invariance_report(&shifted, &l, &line, &disp, &times).unwrap();
        assert_eq!(r1.values, r2.values);
        assert_eq!(r1.max_discrepancy, r2.max_discrepancy);
        let (_, o1) = atlas.transition("carousel", "lab").unwrap();
        let (_, o2) = shifted.transition("carousel", "lab").unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn unknown_frames_are_rejected_by_name() {
        let atlas = two_frame_atlas();
        let err = atlas.transition("carousel", "nowhere").unwrap_err();
        assert!(err.to_string().contains("`nowhere`"));
    }

    #[test]
    fn atlas_requires_a_well_formed_standard_frame() {
        let err = FrameAtlas::new(
            vec![ReferenceFrame {
                id: "lab".into(),
                clock_offset: 1.0,
                to_standard: FrameMap::identity(1),
            }],
            "lab",
        )
        .unwrap_err();
        assert!(err.to_string().contains("clock offset 0"));
        let err = FrameAtlas::new(
            vec![ReferenceFrame {
                id: "lab".into(),
                clock_offset: 0.0,
                to_standard: FrameMap::from_sources(&["2*x1".into()], None).unwrap(),
            }],
            "lab",
        )
        .unwrap_err();
        assert!(err.to_string().contains("identity"));
    }

    #[test]
    fn missing_inverse_is_reported_for_transitions() {
        let atlas = FrameAtlas::new(
            vec![
                ReferenceFrame::standard("lab", 1),
                ReferenceFrame {
                    id: "squeeze".into(),
                    clock_offset: 0.0,
                    to_standard: FrameMap::from_sources(&["exp(t)*x1".into()], None).unwrap(),
                },
            ],
            "lab",
        )
        .unwrap();
        let err = atlas.transition("lab", "squeeze").unwrap_err();
        assert!(matches!(err, EngineError::MissingInverse), "{err}");
    }
}
