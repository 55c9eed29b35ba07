//! Scenario files: a TOML description of a mechanical setup (Lagrangian,
//! optional moving frame or constraint embedding, optional frame atlas)
//! together with solver settings and a list of named identity checks.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::constraints::ConstraintEmbedding;
use crate::error::EngineError;
use crate::exprlang::parse;
use crate::frames::{FrameMap, VelocityState};
use crate::mechanics::{
    action_integral, el_accelerations, el_residual, jacobi_energy, variational_derivative, Curve,
    CurveJet, DisplacementField, ExprCurve, LagrangianSystem, MappedCurve,
};
use crate::solvers::{
    discrete_action, discrete_action_gradient, integrate_el, stationary_action_solve,
    DiscretePath, Method, Trajectory,
};
use crate::spacetime::{
    frame_action, invariance_report, FrameAtlas, ReferenceFrame, WorldLine,
};
use crate::verify::{random_curve, random_vector, CheckRecord, VerificationReport};
use crate::linalg;

// Default tolerances per check; --tol-scale multiplies all of them.
const TOL_FRAME_INVARIANCE: f64 = 1e-8;
const TOL_ACTION_EQUIVALENCE: f64 = 1e-8;
const TOL_ANGULAR_CONSISTENCY: f64 = 1e-10;
const TOL_ROUNDTRIP: f64 = 1e-9;
const TOL_FREE_LINE: f64 = 1e-6;
const TOL_EL_CONSISTENCY: f64 = 1e-10;
const TOL_DALEMBERT: f64 = 1e-6;
const TOL_DRIFT: f64 = 1e-9;
const TOL_CONSTRAINED_INVARIANCE: f64 = 1e-9;
const TOL_ACTION_RESTRICTION: f64 = 1e-9;
const TOL_DISCRETE_DALEMBERT: f64 = 1e-9;
const TOL_ENERGY_DRIFT: f64 = 1e-6;
const TOL_ATLAS_INVARIANCE: f64 = 1e-9;
const TOL_ATLAS_ACTION: f64 = 1e-9;
const TOL_TRANSITION: f64 = 1e-10;

// ------------------------------------------------------------ file schema --

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    lagrangian: LagrangianSec,
    frame: Option<FrameSec>,
    constraint: Option<ConstraintSec>,
    atlas: Option<AtlasSec>,
    solver: Option<SolverSec>,
    action: Option<ActionSec>,
    verify: Option<VerifySec>,
    output: Option<OutputSec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LagrangianSec {
    dim: usize,
    expr: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameSec {
    forward: Vec<String>,
    inverse: Option<Vec<String>>,
    valid_t: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintSec {
    intrinsic_dim: usize,
    forward: Vec<String>,
    #[serde(default)]
    residuals: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtlasSec {
    standard: String,
    frames: Vec<AtlasFrameSec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtlasFrameSec {
    id: String,
    #[serde(default)]
    clock_offset: f64,
    to_standard: Option<Vec<String>>,
    inverse: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSec {
    method: String,
    interval: [f64; 2],
    step: Option<f64>,
    initial: Option<InitialSec>,
    segments: Option<usize>,
    boundary: Option<BoundarySec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSec {
    position: Vec<f64>,
    velocity: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundarySec {
    start: Vec<f64>,
    end: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionSec {
    curve: Vec<String>,
    interval: [f64; 2],
    panels: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySec {
    checks: Vec<String>,
    samples: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSec {
    pub trajectory: Option<String>,
    pub report: Option<String>,
}

// --------------------------------------------------------- built scenario --

#[derive(Debug, Clone)]
pub enum SolverSpec {
    InitialValue {
        method: Method,
        step: f64,
        a: f64,
        b: f64,
        position: Vec<f64>,
        velocity: Vec<f64>,
    },
    Boundary {
        a: f64,
        b: f64,
        segments: usize,
        start: Vec<f64>,
        end: Vec<f64>,
    },
}

#[derive(Clone)]
pub struct ActionSpec {
    pub curve: Arc<ExprCurve>,
    pub a: f64,
    pub b: f64,
    pub panels: usize,
}

#[derive(Debug, Clone)]
pub struct VerifySpec {
    pub checks: Vec<String>,
    pub samples: usize,
    pub seed: u64,
}

/// A fully validated scenario, ready to solve and verify.
pub struct Scenario {
    pub name: String,
    /// The Lagrangian in the fixed/ambient chart.
    pub base: LagrangianSystem,
    /// Where solving happens: the pullback when a frame or embedding is
    /// present, otherwise `base` itself.
    pub solve_system: LagrangianSystem,
    pub frame: Option<FrameMap>,
    pub embedding: Option<ConstraintEmbedding>,
    pub atlas: Option<FrameAtlas>,
    pub solver: Option<SolverSpec>,
    pub action: Option<ActionSpec>,
    pub verify: VerifySpec,
    pub output: OutputSec,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("dim", &self.base.n())
            .field("solving_dim", &self.solve_system.n())
            .finish_non_exhaustive()
    }
}

/// Everything a solve produces: the solving-chart trajectory, its image in
/// the fixed chart when a frame or embedding is present, and the raw node
/// path for boundary problems.
#[derive(Debug, Clone)]
pub struct SolveProduct {
    pub intrinsic: Trajectory,
    pub mapped: Option<Trajectory>,
    pub path: Option<DiscretePath>,
}

#[derive(Debug, Clone, Copy)]
pub struct ActionValues {
    pub continuous: f64,
    pub discrete: f64,
    pub panels: usize,
}

fn parse_list(sources: &[String], section: &str) -> Result<Vec<crate::exprlang::Expr>, EngineError> {
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            parse(s).map_err(|e| EngineError::invalid(format!("{section}[{i}]: {e}")))
        })
        .collect()
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::invalid(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario, EngineError> {
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| EngineError::invalid(format!("scenario parse error: {e}")))?;
        Scenario::build(file)
    }

    fn build(file: ScenarioFile) -> Result<Scenario, EngineError> {
        if file.name.trim().is_empty() {
            return Err(EngineError::invalid("scenario field `name` is empty"));
        }
        let dim = file.lagrangian.dim;
        if dim == 0 {
            return Err(EngineError::invalid("[lagrangian].dim must be at least 1"));
        }
        let base = LagrangianSystem::from_source(dim, &file.lagrangian.expr)
            .map_err(|e| EngineError::invalid(format!("[lagrangian].expr: {e}")))?;

        if file.frame.is_some() && file.constraint.is_some() {
            return Err(EngineError::invalid(
                "sections [frame] and [constraint] are mutually exclusive",
            ));
        }

        let frame = match &file.frame {
            None => None,
            Some(sec) => {
                let fwd = parse_list(&sec.forward, "[frame].forward")?;
                if fwd.len() != dim {
                    return Err(EngineError::invalid(format!(
                        "[frame].forward has {} components, [lagrangian].dim is {dim}",
                        fwd.len()
                    )));
                }
                let inv = match &sec.inverse {
                    Some(srcs) => Some(parse_list(srcs, "[frame].inverse")?),
                    None => None,
                };
                let mut f = FrameMap::new(fwd, inv)?;
                if let Some([lo, hi]) = sec.valid_t {
                    f = f.with_validity(lo, hi);
                }
                Some(f)
            }
        };

        let embedding = match &file.constraint {
            None => None,
            Some(sec) => {
                if sec.forward.len() != dim {
                    return Err(EngineError::invalid(format!(
                        "[constraint].forward has {} components, [lagrangian].dim is {dim}",
                        sec.forward.len()
                    )));
                }
                let fwd = parse_list(&sec.forward, "[constraint].forward")?;
                let res = parse_list(&sec.residuals, "[constraint].residuals")?;
                Some(ConstraintEmbedding::new(fwd, sec.intrinsic_dim, res)?)
            }
        };

        let solve_system = if let Some(f) = &frame {
            f.pullback_lagrangian(&base)?
        } else if let Some(e) = &embedding {
            e.intrinsic_lagrangian(&base)?
        } else {
            base.clone()
        };
        let m = solve_system.n();

        let atlas = match &file.atlas {
            None => None,
            Some(sec) => {
                let mut frames = Vec::with_capacity(sec.frames.len());
                for fsec in &sec.frames {
                    let map = match &fsec.to_standard {
                        None => FrameMap::identity(dim),
                        Some(srcs) => {
                            let fwd = parse_list(
                                srcs,
                                &format!("[[atlas.frames]] `{}` to_standard", fsec.id),
                            )?;
                            let inv = match &fsec.inverse {
                                Some(is) => Some(parse_list(
                                    is,
                                    &format!("[[atlas.frames]] `{}` inverse", fsec.id),
                                )?),
                                None => None,
                            };
                            FrameMap::new(fwd, inv)?
                        }
                    };
                    frames.push(ReferenceFrame {
                        id: fsec.id.clone(),
                        clock_offset: fsec.clock_offset,
                        to_standard: map,
                    });
                }
                let atlas = FrameAtlas::new(frames, &sec.standard)?;
                if atlas.n() != dim {
                    return Err(EngineError::invalid(format!(
                        "[atlas] frames map {} coordinates, [lagrangian].dim is {dim}",
                        atlas.n()
                    )));
                }
                Some(atlas)
            }
        };

        let solver = match &file.solver {
            None => None,
            Some(sec) => {
                let [a, b] = sec.interval;
                if !(b > a) {
                    return Err(EngineError::invalid(format!(
                        "[solver].interval [{a}, {b}] is empty"
                    )));
                }
                match sec.method.as_str() {
                    "rk4" | "implicit_midpoint" => {
                        let method = if sec.method == "rk4" {
                            Method::Rk4
                        } else {
                            Method::ImplicitMidpoint
                        };
                        let step = sec.step.ok_or_else(|| {
                            EngineError::invalid("[solver].step is required for time stepping")
                        })?;
                        let init = sec.initial.as_ref().ok_or_else(|| {
                            EngineError::invalid("[solver].initial is required for time stepping")
                        })?;
                        if init.position.len() != m || init.velocity.len() != m {
                            return Err(EngineError::invalid(format!(
                                "[solver].initial state has dimension {}, solving chart has {m}",
                                init.position.len().max(init.velocity.len())
                            )));
                        }
                        Some(SolverSpec::InitialValue {
                            method,
                            step,
                            a,
                            b,
                            position: init.position.clone(),
                            velocity: init.velocity.clone(),
                        })
                    }
                    "stationary" => {
                        let segments = sec.segments.ok_or_else(|| {
                            EngineError::invalid(
                                "[solver].segments is required for boundary problems",
                            )
                        })?;
                        let bnd = sec.boundary.as_ref().ok_or_else(|| {
                            EngineError::invalid(
                                "[solver].boundary is required for boundary problems",
                            )
                        })?;
                        if bnd.start.len() != m || bnd.end.len() != m {
                            return Err(EngineError::invalid(format!(
                                "[solver].boundary data has dimension {}, solving chart has {m}",
                                bnd.start.len().max(bnd.end.len())
                            )));
                        }
                        Some(SolverSpec::Boundary {
                            a,
                            b,
                            segments,
                            start: bnd.start.clone(),
                            end: bnd.end.clone(),
                        })
                    }
                    other => {
                        return Err(EngineError::invalid(format!(
                            "[solver].method `{other}` is not one of rk4, implicit_midpoint, stationary"
                        )))
                    }
                }
            }
        };

        let action = match &file.action {
            None => None,
            Some(sec) => {
                if sec.curve.len() != m {
                    return Err(EngineError::invalid(format!(
                        "[action].curve has {} components, solving chart has {m}",
                        sec.curve.len()
                    )));
                }
                let comps = parse_list(&sec.curve, "[action].curve")?;
                let [a, b] = sec.interval;
                let panels = sec.panels.unwrap_or(1000);
                Some(ActionSpec { curve: Arc::new(ExprCurve::new(comps)?), a, b, panels })
            }
        };

        let verify = match &file.verify {
            None => VerifySpec { checks: Vec::new(), samples: 20, seed: 7 },
            Some(sec) => VerifySpec {
                checks: sec.checks.clone(),
                samples: sec.samples.unwrap_or(20).max(1),
                seed: sec.seed.unwrap_or(7),
            },
        };

        let output = file.output.unwrap_or(OutputSec { trajectory: None, report: None });

        Ok(Scenario {
            name: file.name,
            base,
            solve_system,
            frame,
            embedding,
            atlas,
            solver,
            action,
            verify,
            output,
        })
    }

    // ------------------------------------------------------------ pipelines --

    /// Runs the configured solver and maps the result to the fixed chart
    /// when a frame or embedding is present.
    pub fn solve(&self) -> Result<SolveProduct, EngineError> {
        let spec = self.solver.as_ref().ok_or_else(|| {
            EngineError::invalid("scenario has no [solver] section")
        })?;
        let (intrinsic, path) = match spec {
            SolverSpec::InitialValue { method, step, a, b, position, velocity } => {
                let traj =
                    integrate_el(&self.solve_system, position, velocity, *a, *b, *step, *method)?;
                (traj, None)
            }
            SolverSpec::Boundary { a, b, segments, start, end } => {
                let path = stationary_action_solve(
                    &self.solve_system,
                    start,
                    end,
                    *a,
                    *b,
                    *segments,
                    None,
                )?;
                let traj = path_to_trajectory(&self.solve_system, &path)?;
                (traj, Some(path))
            }
        };
        let mapped = if let Some(f) = &self.frame {
            Some(f.map_trajectory(&intrinsic)?)
        } else if let Some(e) = &self.embedding {
            let samples = intrinsic
                .samples
                .iter()
                .map(|jet| e.ambient_jet(jet))
                .collect::<Result<Vec<_>, _>>()?;
            Some(Trajectory {
                chart: "q".to_string(),
                samples,
                step: intrinsic.step,
                method: intrinsic.method.clone(),
            })
        } else {
            None
        };
        Ok(SolveProduct { intrinsic, mapped, path })
    }

    /// Continuous (quadrature) and discrete (midpoint-sum) action of the
    /// configured curve, both in the solving chart.
    pub fn action_values(&self) -> Result<ActionValues, EngineError> {
        let spec = self.action.as_ref().ok_or_else(|| {
            EngineError::invalid("scenario has no [action] section")
        })?;
        let continuous = action_integral(
            &self.solve_system,
            spec.curve.as_ref(),
            spec.a,
            spec.b,
            spec.panels,
        )?;
        let mut nodes = Vec::with_capacity(spec.panels + 1);
        for k in 0..=spec.panels {
            let t = spec.a + (spec.b - spec.a) * k as f64 / spec.panels as f64;
            nodes.push(spec.curve.jet(t)?.pos);
        }
        let path = DiscretePath {
            chart: self.solve_system.chart().to_string(),
            nodes,
            a: spec.a,
            b: spec.b,
        };
        let discrete = discrete_action(&self.solve_system, &path)?;
        Ok(ActionValues { continuous, discrete, panels: spec.panels })
    }

    /// Runs every configured check; tolerances are multiplied by
    /// `tol_scale`. Sampling is deterministic per (seed, check name).
    pub fn run_checks(&self, tol_scale: f64) -> Result<VerificationReport, EngineError> {
        let mut report = VerificationReport::new(&self.name);
        for name in &self.verify.checks {
            let mut rng = ChaCha8Rng::seed_from_u64(self.verify.seed ^ fnv(name));
            let record = self.run_check(name, tol_scale, &mut rng)?;
            report.push(record);
        }
        Ok(report)
    }

    fn require_frame(&self, check: &str) -> Result<&FrameMap, EngineError> {
        self.frame.as_ref().ok_or_else(|| {
            EngineError::invalid(format!("check `{check}` needs a [frame] section"))
        })
    }

    fn require_embedding(&self, check: &str) -> Result<&ConstraintEmbedding, EngineError> {
        self.embedding.as_ref().ok_or_else(|| {
            EngineError::invalid(format!("check `{check}` needs a [constraint] section"))
        })
    }

    fn require_atlas(&self, check: &str) -> Result<&FrameAtlas, EngineError> {
        self.atlas.as_ref().ok_or_else(|| {
            EngineError::invalid(format!("check `{check}` needs an [atlas] section"))
        })
    }

    /// Time window for random sampling: the solver interval when present,
    /// else the action interval, else [0, 3]; clipped to frame validity.
    fn sample_window(&self) -> (f64, f64) {
        let (mut lo, mut hi) = match &self.solver {
            Some(SolverSpec::InitialValue { a, b, .. }) => (*a, *b),
            Some(SolverSpec::Boundary { a, b, .. }) => (*a, *b),
            None => match &self.action {
                Some(spec) => (spec.a, spec.b),
                None => (0.0, 3.0),
            },
        };
        if let Some(f) = &self.frame {
            let (vlo, vhi) = f.validity();
            lo = lo.max(vlo);
            hi = hi.min(vhi);
        }
        (lo, hi)
    }

    fn run_check(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        match name {
            "frame_invariance" => self.check_frame_invariance(name, scale, rng),
            "action_equivalence" => self.check_action_equivalence(name, scale, rng),
            "angular_velocity_consistency" => self.check_angular_velocity(name, scale, rng),
            "frame_inverse_roundtrip" => self.check_roundtrip(name, scale, rng),
            "mapped_free_motion" => self.check_mapped_free_motion(name, scale),
            "el_consistency" => self.check_el_consistency(name, scale, rng),
            "dalembert_constrained" => self.check_dalembert(name, scale),
            "constraint_drift" => self.check_drift(name, scale),
            "constrained_invariance" => self.check_constrained_invariance(name, scale, rng),
            "action_restriction" => self.check_action_restriction(name, scale, rng),
            "discrete_dalembert" => self.check_discrete_dalembert(name, scale, rng),
            "energy_drift" => self.check_energy_drift(name, scale),
            "spacetime_invariance" => self.check_spacetime_invariance(name, scale, rng),
            "action_frame_equivalence" => self.check_atlas_actions(name, scale, rng),
            "clock_coherence" => self.check_clock_coherence(name, rng),
            "transition_roundtrip" => self.check_transition_roundtrip(name, scale, rng),
            "expected_degeneracy" => self.check_expected_degeneracy(name),
            "expected_conjugate_degeneracy" => self.check_expected_conjugate(name),
            other => Err(EngineError::invalid(format!("unknown check `{other}`"))),
        }
    }

    fn check_frame_invariance(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let frame = self.require_frame(name)?;
        let n = frame.n();
        let (lo, hi) = self.sample_window();
        let mut worst: f64 = 0.0;
        for _ in 0..self.verify.samples {
            let curve = random_curve(rng, n, 1.0)?;
            let t = rng.gen_range(lo..hi);
            let jet = curve.jet(t)?;
            let xi = random_vector(rng, n, 1.0);
            let fixed_jet = frame.map_jet(&jet)?;
            let pushed = frame.push_vector(&jet.pos, &xi, t)?;
            let lhs = variational_derivative(&self.base, &fixed_jet, &pushed)?;
            let rhs = variational_derivative(&self.solve_system, &jet, &xi)?;
            worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
        }
        Ok(CheckRecord::bounded(
            name,
            "variational derivative in the moving chart equals the fixed-chart value \
             paired with the pushed displacement",
            worst,
            TOL_FRAME_INVARIANCE * scale,
        ))
    }

    fn check_action_equivalence(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let frame = self.require_frame(name)?;
        let (curve, a, b, panels): (Arc<dyn Curve>, f64, f64, usize) = match &self.action {
            Some(spec) => (spec.curve.clone(), spec.a, spec.b, spec.panels),
            None => {
                let (lo, hi) = self.sample_window();
                (Arc::new(random_curve(rng, frame.n(), 1.0)?), lo, hi, 1000)
            }
        };
        let moving = action_integral(&self.solve_system, curve.as_ref(), a, b, panels)?;
        let mapped = MappedCurve::new(curve, Arc::clone(frame.forward_map()))?;
        let fixed = action_integral(&self.base, &mapped, a, b, panels)?;
        Ok(CheckRecord::bounded(
            name,
            "the action of a curve is unchanged by rewriting the Lagrangian in the moving chart",
            (moving - fixed).abs(),
            TOL_ACTION_EQUIVALENCE * scale,
        ))
    }

    fn check_angular_velocity(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let frame = self.require_frame(name)?;
        let n = frame.n();
        let (lo, hi) = self.sample_window();
        let mut worst: f64 = 0.0;
        for _ in 0..self.verify.samples {
            let x = random_vector(rng, n, 1.5);
            let t = rng.gen_range(lo..hi);
            let fixed = frame.angular_velocity_fixed(&x, t)?;
            let moving = frame.angular_velocity_moving(&x, t)?;
            let j = frame.forward_map().jacobian(&x, t)?;
            let jo = &j * DVector::from_column_slice(&moving);
            for i in 0..n {
                worst = worst.max((jo[i] - fixed[i]).abs());
            }
        }
        Ok(CheckRecord::bounded(
            name,
            "the moving-chart transport field maps onto the fixed-chart one through \
             the spatial Jacobian",
            worst,
            TOL_ANGULAR_CONSISTENCY * scale,
        ))
    }

    fn check_roundtrip(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let frame = self.require_frame(name)?;
        let n = frame.n();
        let (lo, hi) = self.sample_window();
        let mut worst: f64 = 0.0;
        for _ in 0..self.verify.samples {
            let x = random_vector(rng, n, 1.2);
            let xd = random_vector(rng, n, 1.2);
            let t = rng.gen_range(lo..hi);
            let state = VelocityState::new("x", x.clone(), xd.clone(), t);
            let pushed = frame.push_state(&state)?;
            let back = frame.pull_state(&pushed, Some(&x))?;
            for i in 0..n {
                worst = worst.max((back.position[i] - x[i]).abs());
                worst = worst.max((back.velocity[i] - xd[i]).abs());
            }
        }
        Ok(CheckRecord::bounded(
            name,
            "pushing a velocity state through the frame and pulling it back returns \
             the original state",
            worst,
            TOL_ROUNDTRIP * scale,
        ))
    }

    fn check_mapped_free_motion(&self, name: &str, scale: f64) -> Result<CheckRecord, EngineError> {
        self.require_frame(name)?;
        let product = self.solve()?;
        let mapped = product.mapped.as_ref().expect("frame scenarios map their solutions");
        let first = &mapped.samples[0];
        let mut worst: f64 = 0.0;
        for jet in &mapped.samples {
            let dt = jet.t - first.t;
            for i in 0..jet.dim() {
                let line = first.pos[i] + first.vel[i] * dt;
                worst = worst.max((jet.pos[i] - line).abs());
            }
        }
        Ok(CheckRecord::bounded(
            name,
            "the solution computed in the moving chart maps onto the straight line \
             of free motion",
            worst,
            TOL_FREE_LINE * scale,
        ))
    }

    fn check_el_consistency(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let n = self.solve_system.n();
        let (lo, hi) = self.sample_window();
        let mut worst: f64 = 0.0;
        for _ in 0..self.verify.samples {
            let q = random_vector(rng, n, 1.2);
            let qd = random_vector(rng, n, 1.2);
            let t = rng.gen_range(lo..hi);
            let acc = el_accelerations(&self.solve_system, &q, &qd, t)?;
            let jet = CurveJet { t, pos: q, vel: qd, acc };
            let e = el_residual(&self.solve_system, &jet)?;
            worst = worst.max(e.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        Ok(CheckRecord::bounded(
            name,
            "accelerations solved from the velocity Hessian drive the equation-of-motion \
             residual to zero",
            worst,
            TOL_EL_CONSISTENCY * scale,
        ))
    }

    fn check_dalembert(&self, name: &str, scale: f64) -> Result<CheckRecord, EngineError> {
        let emb = self.require_embedding(name)?;
        let product = self.solve()?;
        let mut worst: f64 = 0.0;
        for jet in &product.intrinsic.samples {
            worst = worst.max(emb.dalembert_check(&self.base, jet)?);
        }
        Ok(CheckRecord::bounded(
            name,
            "along solved constrained motions the ambient residual annihilates every \
             admissible virtual displacement",
            worst,
            TOL_DALEMBERT * scale,
        ))
    }

    fn check_drift(&self, name: &str, scale: f64) -> Result<CheckRecord, EngineError> {
        let emb = self.require_embedding(name)?;
        let product = self.solve()?;
        let mapped = product.mapped.as_ref().expect("constrained scenarios map their solutions");
        let drift = emb.constraint_drift(mapped)?;
        Ok(CheckRecord::bounded(
            name,
            "implicit constraint residuals stay zero along the reconstructed ambient \
             trajectory",
            drift,
            TOL_DRIFT * scale,
        ))
    }

    fn check_constrained_invariance(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let emb = self.require_embedding(name)?;
        let m = emb.intrinsic_dim();
        let (lo, hi) = self.sample_window();
        let mut worst: f64 = 0.0;
        for _ in 0..self.verify.samples {
            let curve = random_curve(rng, m, 1.0)?;
            let t = rng.gen_range(lo..hi);
            let jet = curve.jet(t)?;
            let xi = random_vector(rng, m, 1.0);
            let lhs = variational_derivative(&self.solve_system, &jet, &xi)?;
            let ambient = emb.ambient_jet(&jet)?;
            let e = el_residual(&self.base, &ambient)?;
            let j = emb.forward_map().jacobian(&jet.pos, t)?;
            let pushed = &j * DVector::from_column_slice(&xi);
            let rhs: f64 = e.iter().zip(pushed.iter()).map(|(a, b)| a * b).sum();
            worst = worst.max((lhs - rhs).abs());
        }
        Ok(CheckRecord::bounded(
            name,
            "the intrinsic variational derivative equals the ambient residual paired \
             with the embedded displacement",
            worst,
            TOL_CONSTRAINED_INVARIANCE * scale,
        ))
    }

    fn check_action_restriction(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let emb = self.require_embedding(name)?;
        let (curve, a, b, panels): (Arc<dyn Curve>, f64, f64, usize) = match &self.action {
            Some(spec) => (spec.curve.clone(), spec.a, spec.b, spec.panels),
            None => {
                let (lo, hi) = self.sample_window();
                (Arc::new(random_curve(rng, emb.intrinsic_dim(), 1.0)?), lo, hi, 1000)
            }
        };
        let intrinsic = action_integral(&self.solve_system, curve.as_ref(), a, b, panels)?;
        let mapped = MappedCurve::new(curve, Arc::clone(emb.forward_map()))?;
        let ambient = action_integral(&self.base, &mapped, a, b, panels)?;
        Ok(CheckRecord::bounded(
            name,
            "the action of the reduced Lagrangian equals the ambient action along \
             embedded curves",
            (intrinsic - ambient).abs(),
            TOL_ACTION_RESTRICTION * scale,
        ))
    }

    fn check_discrete_dalembert(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let product = self.solve()?;
        let path = product.path.as_ref().ok_or_else(|| {
            EngineError::invalid(format!("check `{name}` needs the stationary solver"))
        })?;
        let grads = discrete_action_gradient(&self.solve_system, path)?;
        let n = self.solve_system.n();
        let mut worst: f64 = 0.0;
        for _ in 0..self.verify.samples {
            let mut pairing = 0.0;
            for g in &grads {
                for i in 0..n {
                    pairing += g[i] * rng.gen_range(-1.0..1.0);
                }
            }
            worst = worst.max(pairing.abs());
        }
        Ok(CheckRecord::bounded(
            name,
            "the discrete action gradient annihilates random interior displacement \
             fields at the solved path",
            worst,
            TOL_DISCRETE_DALEMBERT * scale,
        ))
    }

    fn check_energy_drift(&self, name: &str, scale: f64) -> Result<CheckRecord, EngineError> {
        let product = self.solve()?;
        let traj = &product.intrinsic;
        let first = &traj.samples[0];
        let e0 = jacobi_energy(&self.solve_system, &first.pos, &first.vel, first.t)?;
        let mut worst: f64 = 0.0;
        for jet in &traj.samples {
            let e = jacobi_energy(&self.solve_system, &jet.pos, &jet.vel, jet.t)?;
            worst = worst.max((e - e0).abs());
        }
        Ok(CheckRecord::bounded(
            name,
            "the Jacobi energy is conserved by the symplectic integrator over the \
             full interval",
            worst,
            TOL_ENERGY_DRIFT * scale,
        ))
    }

    fn check_spacetime_invariance(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let atlas = self.require_atlas(name)?;
        let n = atlas.n();
        let (lo, hi) = self.sample_window();
        let mut worst: f64 = 0.0;
        for _ in 0..self.verify.samples {
            let line = WorldLine::new(Arc::new(random_curve(rng, n, 1.0)?));
            let disp = DisplacementField::constant(random_vector(rng, n, 1.0));
            let t = rng.gen_range(lo..hi);
            let rep = invariance_report(atlas, &self.base, &line, &disp, &[t])?;
            worst = worst.max(rep.max_discrepancy);
        }
        Ok(CheckRecord::bounded(
            name,
            "variational-derivative values agree across every frame of the atlas",
            worst,
            TOL_ATLAS_INVARIANCE * scale,
        ))
    }

    fn check_atlas_actions(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let atlas = self.require_atlas(name)?;
        let (lo, hi) = self.sample_window();
        let line = WorldLine::new(Arc::new(random_curve(rng, atlas.n(), 1.0)?));
        let mut values = Vec::new();
        for id in atlas.frame_ids() {
            values.push(frame_action(atlas, &self.base, id, &line, lo, hi, 600)?);
        }
        let mut worst: f64 = 0.0;
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                worst = worst.max((values[i] - values[j]).abs());
            }
        }
        Ok(CheckRecord::bounded(
            name,
            "the action between two fixed events is the same number in every frame",
            worst,
            TOL_ATLAS_ACTION * scale,
        ))
    }

    fn check_clock_coherence(
        &self,
        name: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let atlas = self.require_atlas(name)?;
        let n = atlas.n();
        let (lo, hi) = self.sample_window();
        let line = WorldLine::new(Arc::new(random_curve(rng, n, 1.0)?));
        let disp = DisplacementField::constant(random_vector(rng, n, 1.0));
        let times: Vec<f64> = (0..5).map(|_| rng.gen_range(lo..hi)).collect();
        let before = invariance_report(atlas, &self.base, &line, &disp, &times)?;
        let shifted = atlas.with_common_clock_shift(2.5);
        let after = invariance_report(&shifted, &self.base, &line, &disp, &times)?;
        let mut worst: f64 = 0.0;
        for (row_b, row_a) in before.values.iter().zip(&after.values) {
            for (vb, va) in row_b.iter().zip(row_a) {
                worst = worst.max((vb - va).abs());
            }
        }
        // Shifting every clock by the same constant must change nothing at
        // all, so the tolerance is exactly zero and is not scaled.
        Ok(CheckRecord::bounded(
            name,
            "advancing every clock in the atlas by a common constant changes no \
             reported value",
            worst,
            0.0,
        ))
    }

    fn check_transition_roundtrip(
        &self,
        name: &str,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckRecord, EngineError> {
        let atlas = self.require_atlas(name)?;
        let n = atlas.n();
        let (lo, hi) = self.sample_window();
        let ids = atlas.frame_ids();
        let mut worst: f64 = 0.0;
        for from in &ids {
            for to in &ids {
                if from == to {
                    continue;
                }
                let x = random_vector(rng, n, 1.2);
                let t_from = rng.gen_range(lo..hi);
                let (fwd, off) = atlas.transition(from, to)?;
                let y = fwd.forward(&x, t_from)?;
                let t_to = t_from + off;
                let (back, off_back) = atlas.transition(to, from)?;
                let x2 = back.forward(&y, t_to)?;
                for i in 0..n {
                    worst = worst.max((x2[i] - x[i]).abs());
                }
                worst = worst.max((off + off_back).abs());
            }
        }
        Ok(CheckRecord::bounded(
            name,
            "frame-to-frame transitions compose back to the identity in both \
             coordinates and clocks",
            worst,
            TOL_TRANSITION * scale,
        ))
    }

    fn check_expected_degeneracy(&self, name: &str) -> Result<CheckRecord, EngineError> {
        let statement = "a singular velocity Hessian is reported as degenerate, \
                         never regularized into a fake solution";
        match self.solve() {
            Err(EngineError::DegenerateLagrangian { cond, .. }) => Ok(CheckRecord::outcome(
                name,
                statement,
                true,
                cond,
                linalg::COND_LIMIT,
            )),
            Err(_) | Ok(_) => Ok(CheckRecord::outcome(
                name,
                statement,
                false,
                0.0,
                linalg::COND_LIMIT,
            )),
        }
    }

    fn check_expected_conjugate(&self, name: &str) -> Result<CheckRecord, EngineError> {
        let statement = "a boundary problem with conjugate endpoints terminates with a \
                         degeneracy or non-convergence report, never a fabricated path";
        match self.solve() {
            Err(EngineError::DegenerateLagrangian { cond, .. }) => Ok(CheckRecord::outcome(
                name,
                statement,
                true,
                cond,
                linalg::COND_LIMIT,
            )),
            Err(EngineError::NonConvergence { best_residual, .. }) => Ok(CheckRecord::outcome(
                name,
                statement,
                true,
                best_residual,
                linalg::COND_LIMIT,
            )),
            Err(_) | Ok(_) => Ok(CheckRecord::outcome(
                name,
                statement,
                false,
                0.0,
                linalg::COND_LIMIT,
            )),
        }
    }
}

/// Node path to full-jet trajectory: velocities by second-order differences
/// (one-sided at the ends), accelerations from the equations of motion.
fn path_to_trajectory(
    sys: &LagrangianSystem,
    path: &DiscretePath,
) -> Result<Trajectory, EngineError> {
    let h = path.step();
    let m = path.nodes.len();
    let n = sys.n();
    let mut samples = Vec::with_capacity(m);
    for k in 0..m {
        let q = path.nodes[k].clone();
        let vel: Vec<f64> = (0..n)
            .map(|i| {
                if k == 0 {
                    (-3.0 * path.nodes[0][i] + 4.0 * path.nodes[1][i] - path.nodes[2][i])
                        / (2.0 * h)
                } else if k == m - 1 {
                    (3.0 * path.nodes[m - 1][i] - 4.0 * path.nodes[m - 2][i]
                        + path.nodes[m - 3][i])
                        / (2.0 * h)
                } else {
                    (path.nodes[k + 1][i] - path.nodes[k - 1][i]) / (2.0 * h)
                }
            })
            .collect();
        let t = path.time(k);
        let acc = el_accelerations(sys, &q, &vel, t)?;
        samples.push(CurveJet { t, pos: q, vel, acc });
    }
    Ok(Trajectory {
        chart: path.chart.clone(),
        samples,
        step: h,
        method: "stationary".to_string(),
    })
}

fn fnv(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn fmt_sig(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with fixed 17-significant-digit columns: time, the solving-chart
/// state, and (when a frame or embedding is present) the fixed-chart image.
pub fn render_trajectory_csv(product: &SolveProduct) -> String {
    let intr = &product.intrinsic;
    let m = intr.samples[0].dim();
    let mut header: Vec<String> = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("xd{i}")));
    if let Some(mapped) = &product.mapped {
        let n = mapped.samples[0].dim();
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("qd{i}")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for (k, jet) in intr.samples.iter().enumerate() {
        let mut row: Vec<String> = vec![fmt_sig(jet.t)];
        row.extend(jet.pos.iter().map(|v| fmt_sig(*v)));
        row.extend(jet.vel.iter().map(|v| fmt_sig(*v)));
        if let Some(mapped) = &product.mapped {
            let mj = &mapped.samples[k];
            row.extend(mj.pos.iter().map(|v| fmt_sig(*v)));
            row.extend(mj.vel.iter().map(|v| fmt_sig(*v)));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROTATING: &str = r#"
        name = "rotating_demo"

        [lagrangian]
        dim = 2
        expr = "0.5*(qd1^2 + qd2^2)"

        [frame]
        forward = ["x1*cos(t) - x2*sin(t)", "x1*sin(t) + x2*cos(t)"]
        inverse = ["q1*cos(t) + q2*sin(t)", "0 - q1*sin(t) + q2*cos(t)"]

        [solver]
        method = "rk4"
        step = 1e-2
        interval = [0.0, 2.0]
        initial = { position = [1.0, 0.0], velocity = [0.0, 0.5] }

        [action]
        curve = ["cos(t)", "sin(2*t)"]
        interval = [0.0, 2.0]
        panels = 400

        [verify]
        checks = [
            "frame_invariance",
            "action_equivalence",
            "angular_velocity_consistency",
            "frame_inverse_roundtrip",
            "el_consistency",
        ]
        samples = 10
        seed = 3
    "#;

    #[test]
    fn rotating_scenario_builds_solves_and_verifies() {
        let scn = Scenario::from_toml(ROTATING).unwrap();
        assert_eq!(scn.name, "rotating_demo");
        assert_eq!(scn.solve_system.n(), 2);
        let product = scn.solve().unwrap();
        assert!(product.mapped.is_some());
        let report = scn.run_checks(1.0).unwrap();
        assert!(report.passed, "{}", report.render_text());
        assert_eq!(report.checks.len(), 5);
    }

    #[test]
    fn reports_are_deterministic() {
        let scn = Scenario::from_toml(ROTATING).unwrap();
        let a = scn.run_checks(1.0).unwrap().to_json();
        let b = scn.run_checks(1.0).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_has_time_moving_and_fixed_columns() {
        let scn = Scenario::from_toml(ROTATING).unwrap();
        let product = scn.solve().unwrap();
        let csv = render_trajectory_csv(&product);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,xd1,xd2,q1,q2,qd1,qd2");
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 9);
        assert!(first.split(',').all(|f| f.parse::<f64>().is_ok()));
    }

    #[test]
    fn action_values_match_between_quadrature_and_midpoint_sum() {
        let scn = Scenario::from_toml(ROTATING).unwrap();
        let vals = scn.action_values().unwrap();
        // midpoint rule is second order; 400 panels on [0, 2]
        assert!((vals.continuous - vals.discrete).abs() < 1e-4);
    }

    #[test]
    fn frame_and_constraint_together_are_rejected() {
        let text = r#"
            name = "bad"
            [lagrangian]
            dim = 1
            expr = "0.5*qd1^2"
            [frame]
            forward = ["x1"]
            [constraint]
            intrinsic_dim = 1
            forward = ["x1"]
        "#;
        let err = Scenario::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"));
    }

    #[test]
    fn dimension_mismatches_name_the_field() {
        let text = r#"
            name = "bad"
            [lagrangian]
            dim = 2
            expr = "0.5*(qd1^2 + qd2^2)"
            [frame]
            forward = ["x1"]
        "#;
        let err = Scenario::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("[frame].forward"), "{err}");
    }

    #[test]
    fn unknown_keys_and_checks_are_rejected() {
        let text = r#"
            name = "bad"
            typo = 1
            [lagrangian]
            dim = 1
            expr = "qd1^2"
        "#;
        assert!(Scenario::from_toml(text).is_err());

        let text2 = r#"
            name = "ok"
            [lagrangian]
            dim = 1
            expr = "qd1^2"
            [verify]
            checks = ["no_such_check"]
        "#;
        let scn = Scenario::from_toml(text2).unwrap();
        let err = scn.run_checks(1.0).unwrap_err();
        assert!(err.to_string().contains("no_such_check"));
    }

    #[test]
    fn constrained_scenario_runs_its_checks() {
        let text = r#"
            name = "circle"
            [lagrangian]
            dim = 2
            expr = "0.5*(qd1^2 + qd2^2)"
            [constraint]
            intrinsic_dim = 1
            forward = ["cos(x1)", "sin(x1)"]
            residuals = ["q1^2 + q2^2 - 1"]
            [solver]
            method = "rk4"
            step = 1e-2
            interval = [0.0, 2.0]
            initial = { position = [0.2], velocity = [0.7] }
            [verify]
            checks = [
                "dalembert_constrained",
                "constraint_drift",
                "constrained_invariance",
                "action_restriction",
            ]
            samples = 8
            seed = 11
        "#;
        let scn = Scenario::from_toml(text).unwrap();
        let report = scn.run_checks(1.0).unwrap();
        assert!(report.passed, "{}", report.render_text());
    }

    #[test]
    fn boundary_scenario_produces_a_path_and_discrete_stationarity() {
        let text = r#"
            name = "ho_bvp"
            [lagrangian]
            dim = 1
            expr = "0.5*qd1^2 - 0.5*q1^2"
            [solver]
            method = "stationary"
            interval = [0.0, 1.5707963267948966]
            segments = 60
            boundary = { start = [0.0], end = [1.0] }
            [verify]
            checks = ["discrete_dalembert"]
            samples = 25
            seed = 5
        "#;
        let scn = Scenario::from_toml(text).unwrap();
        let product = scn.solve().unwrap();
        let path = product.path.as_ref().unwrap();
        assert_eq!(path.segments(), 60);
        // velocity reconstruction: sin' = cos, second-order differences
        let mid = &product.intrinsic.samples[30];
        assert!((mid.vel[0] - mid.t.cos()).abs() < 1e-3);
        let report = scn.run_checks(1.0).unwrap();
        assert!(report.passed, "{}", report.render_text());
    }

    #[test]
    fn atlas_scenario_checks_pass() {
        let text = r#"
            name = "two_frames"
            [lagrangian]
            dim = 2
            expr = "0.5*(qd1^2 + qd2^2)"
            [atlas]
            standard = "lab"
            [[atlas.frames]]
            id = "lab"
            [[atlas.frames]]
            id = "carousel"
            clock_offset = 1.0
            to_standard = ["x1*cos(t) - x2*sin(t)", "x1*sin(t) + x2*cos(t)"]
            inverse = ["q1*cos(t) + q2*sin(t)", "0 - q1*sin(t) + q2*cos(t)"]
            [verify]
            checks = [
                "spacetime_invariance",
                "action_frame_equivalence",
                "clock_coherence",
                "transition_roundtrip",
            ]
            samples = 6
            seed = 13
        "#;
        let scn = Scenario::from_toml(text).unwrap();
        let report = scn.run_checks(1.0).unwrap();
        assert!(report.passed, "{}", report.render_text());
    }

    #[test]
    fn degenerate_scenario_reports_the_designated_error() {
        let text = r#"
            name = "degenerate"
            [lagrangian]
            dim = 1
            expr = "qd1"
            [solver]
            method = "rk4"
            step = 1e-2
            interval = [0.0, 1.0]
            initial = { position = [0.0], velocity = [0.0] }
            [verify]
            checks = ["expected_degeneracy"]
        "#;
        let scn = Scenario::from_toml(text).unwrap();
        match scn.solve() {
            Err(EngineError::DegenerateLagrangian { t, .. }) => assert_eq!(t, Some(0.0)),
            other => panic!("expected degeneracy, got {other:?}"),
        }
        let report = scn.run_checks(1.0).unwrap();
        assert!(report.passed);
    }
}
