//! Verification plumbing: pass/fail records with plain-language statements,
//! deterministic random sampling of curves and displacement data, and a
//! derivative probe that cross-checks the dual-number core against central
//! finite differences on randomly generated expressions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dualnum::{lift, Dual2};
use crate::error::EngineError;
use crate::exprlang::{parse, Expr};
use crate::mechanics::ExprCurve;

/// One verified identity: what was measured, against what bound.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub statement: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRecord {
    /// Pass iff `measured <= tolerance` (NaN fails).
    pub fn bounded(name: &str, statement: &str, measured: f64, tolerance: f64) -> Self {
        CheckRecord {
            name: name.to_string(),
            statement: statement.to_string(),
            measured: sanitize(measured),
            tolerance,
            passed: measured <= tolerance,
        }
    }

    /// Pass/fail decided by the caller; `measured` is informational.
    pub fn outcome(
        name: &str,
        statement: &str,
        passed: bool,
        measured: f64,
        tolerance: f64,
    ) -> Self {
        CheckRecord {
            name: name.to_string(),
            statement: statement.to_string(),
            measured: sanitize(measured),
            tolerance,
            passed,
        }
    }
}

/// JSON cannot carry non-finite floats; clamp them to the largest finite
/// value so a singular condition estimate still serializes.
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        return f64::MAX;
    }
    v.clamp(f64::MIN, f64::MAX)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub scenario: String,
    pub checks: Vec<CheckRecord>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn new(scenario: &str) -> Self {
        VerificationReport { scenario: scenario.to_string(), checks: Vec::new(), passed: true }
    }

    pub fn push(&mut self, record: CheckRecord) {
        self.passed &= record.passed;
        self.checks.push(record);
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario: {}\n", self.scenario));
        out.push_str(&format!(
            "status: {}\n",
            if self.passed { "PASS" } else { "FAIL" }
        ));
        for c in &self.checks {
            out.push_str(&format!(
                "[{}] {}: measured {:.6e} (tolerance {:.1e}) -- {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.statement,
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Formats a float so the expression parser reads back the exact value.
pub fn literal(v: f64) -> String {
    if v < 0.0 {
        format!("(0 - {:e})", -v)
    } else {
        format!("{v:e}")
    }
}

/// A smooth random curve component `a + b t + c sin(t) + d cos(t)`.
fn curve_component(rng: &mut ChaCha8Rng, scale: f64) -> String {
    let a = rng.gen_range(-scale..scale);
    let b = rng.gen_range(-scale..scale);
    let c = rng.gen_range(-scale..scale);
    let d = rng.gen_range(-scale..scale);
    format!(
        "{} + {}*t + {}*sin(t) + {}*cos(t)",
        literal(a),
        literal(b),
        literal(c),
        literal(d)
    )
}

/// Deterministic analytic test curve with `dim` components.
pub fn random_curve(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Result<ExprCurve, EngineError> {
    let comps = (0..dim)
        .map(|_| parse(&curve_component(rng, scale)).map_err(|e| EngineError::invalid(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    ExprCurve::new(comps)
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Worst relative deviations of dual-number derivatives from central finite
/// differences over randomly generated expressions.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeProbe {
    pub expressions: usize,
    pub max_first_error: f64,
    pub max_second_error: f64,
}

/// Grows a random expression tree over up to three variables, restricted to
/// shapes that keep every primitive inside its domain on [-2, 2]^3.
fn random_expression(rng: &mut ChaCha8Rng, depth: usize) -> String {
    if depth == 0 {
        return match rng.gen_range(0..4) {
            0 => format!("v{}", rng.gen_range(1..=3)),
            1 => format!("v{}", rng.gen_range(1..=3)),
            2 => literal(rng.gen_range(0.4..1.6)),
            _ => format!("v{}", rng.gen_range(1..=3)),
        };
    }
    let a = random_expression(rng, depth - 1);
    let b = random_expression(rng, depth - 1);
    match rng.gen_range(0..9) {
        0 => format!("({a} + {b})"),
        1 => format!("({a} - {b})"),
        2 => format!("({a} * {b})"),
        3 => format!("({a} / (1.5 + ({b})^2))"),
        4 => format!("sin({a})"),
        5 => format!("cos({a})"),
        6 => format!("exp(0.3*({a}))"),
        7 => format!("log(1.2 + ({a})^2)"),
        _ => format!("sqrt(1.5 + ({a})^2)"),
    }
}

fn eval_at(expr: &Expr, point: &[f64]) -> Result<f64, EngineError> {
    let vals: Vec<f64> = expr
        .vars()
        .iter()
        .map(|name| {
            let idx: usize = name[1..].parse().unwrap();
            point[idx - 1]
        })
        .collect();
    Ok(expr.eval_slice(&vals)?)
}

fn dual_at(expr: &Expr, point: &[f64], u: usize, v: usize) -> Result<Dual2, EngineError> {
    let vals: Vec<Dual2> = expr
        .vars()
        .iter()
        .map(|name| {
            let idx: usize = name[1..].parse::<usize>().unwrap() - 1;
            lift(
                point[idx],
                if idx == u { 1.0 } else { 0.0 },
                if idx == v { 1.0 } else { 0.0 },
            )
        })
        .collect();
    Ok(expr.eval_slice(&vals)?)
}

/// Compares first and second dual-number derivatives against central
/// differences with step 1e-5, over `count` random expressions. The error
/// is `|ad - fd| / max(1, |ad|)`.
pub fn derivative_probe(seed: u64, count: usize) -> Result<DerivativeProbe, EngineError> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut max_first: f64 = 0.0;
    let mut max_second: f64 = 0.0;
    let mut produced = 0;
    while produced < count {
        let depth = rng.gen_range(1..=3);
        let src = random_expression(&mut rng, depth);
        let expr = parse(&src).map_err(|e| EngineError::invalid(e.to_string()))?;
        let point: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        produced += 1;

        let shifted = |i: usize, s: f64| -> Vec<f64> {
            let mut p = point.clone();
            p[i] += s;
            p
        };
        for i in 0..3 {
            let ad = dual_at(&expr, &point, i, i)?.d1;
            let fd = (eval_at(&expr, &shifted(i, h))? - eval_at(&expr, &shifted(i, -h))?)
                / (2.0 * h);
            max_first = max_first.max((ad - fd).abs() / ad.abs().max(1.0));
        }
        for i in 0..3 {
            for j in i..3 {
                let ad = dual_at(&expr, &point, i, j)?.d12;
                let mut pp = shifted(i, h);
                pp[j] += h;
                let mut pm = shifted(i, h);
                pm[j] -= h;
                let mut mp = shifted(i, -h);
                mp[j] += h;
                let mut mm = shifted(i, -h);
                mm[j] -= h;
                let fd = (eval_at(&expr, &pp)? - eval_at(&expr, &pm)? - eval_at(&expr, &mp)?
                    + eval_at(&expr, &mm)?)
                    / (4.0 * h * h);
                max_second = max_second.max((ad - fd).abs() / ad.abs().max(1.0));
            }
        }
    }
    Ok(DerivativeProbe {
        expressions: produced,
        max_first_error: max_first,
        max_second_error: max_second,
    })
}
