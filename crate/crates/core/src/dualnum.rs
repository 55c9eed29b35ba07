//! Hyperdual scalars: exact first and mixed second directional derivatives.
//!
//! A [`Dual2`] tracks a value together with its sensitivities along two seed
//! directions `u` and `v` and the mixed second derivative along both. All
//! arithmetic propagates these components exactly (product, quotient and
//! chain rules), so a single evaluation of a composite function yields
//! machine-precision derivatives with no step-size tuning.
//!
//! [`Dual1`] is a first-order dual generic over any [`Scalar`]. Nesting it
//! over [`Dual2`] (`Dual1<Dual2>`) propagates one extra derivative order,
//! which is what coordinate-map compositions need: the map's own partial
//! derivatives must remain differentiable quantities.
//!
//! Partial primitives (`/`, `^`, `log`, `sqrt`, `tan`, `atan2`) are checked:
//! evaluating one outside its domain produces a [`DomainError`] naming the
//! primitive and the offending argument instead of a silent NaN.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// A partial primitive was evaluated outside its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainError {
    /// Primitive that failed, e.g. `"/"`, `"log"`, `"sqrt"`.
    pub primitive: &'static str,
    /// Offending argument value (the point, not the derivative seeds).
    pub argument: f64,
    /// Short reason, e.g. `"argument must be positive"`.
    pub detail: &'static str,
}

impl DomainError {
    fn new(primitive: &'static str, argument: f64, detail: &'static str) -> Self {
        DomainError { primitive, argument, detail }
    }

    fn non_finite(primitive: &'static str, argument: f64) -> Self {
        DomainError::new(primitive, argument, "result is not finite")
    }
}

impl fmt::Display for DomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "domain error in `{}` at argument {}: {}",
            self.primitive, self.argument, self.detail
        )
    }
}

impl std::error::Error for DomainError {}

/// Shared exponentiation kernel. Both the plain and the dual scalar use it,
/// so their values agree bit for bit.
fn pow_value(base: f64, exp: f64) -> f64 {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        base.powi(exp as i32)
    } else {
        base.powf(exp)
    }
}

fn is_integral(x: f64) -> bool {
    x.fract() == 0.0 && x.abs() <= i32::MAX as f64
}

/// Arithmetic interface shared by `f64`, [`Dual2`] and [`Dual1`].
///
/// Total primitives return `Self`; partial ones return a [`DomainError`] on
/// violation. Domain membership is always decided by the innermost point
/// value ([`Scalar::primal`]), never by derivative components.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    /// Innermost point value.
    fn primal(self) -> f64;
    /// True when every derivative component is exactly zero.
    fn is_constant(self) -> bool;
    fn div(self, rhs: Self) -> Result<Self, DomainError>;
    fn pow(self, rhs: Self) -> Result<Self, DomainError>;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn tan(self) -> Result<Self, DomainError>;
    fn log(self) -> Result<Self, DomainError>;
    fn sqrt(self) -> Result<Self, DomainError>;
    /// Two-argument arctangent; `self` is the ordinate.
    fn atan2(self, abscissa: Self) -> Result<Self, DomainError>;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }

    fn primal(self) -> f64 {
        self
    }

    fn is_constant(self) -> bool {
        true
    }

    fn div(self, rhs: Self) -> Result<Self, DomainError> {
        if rhs == 0.0 {
            return Err(DomainError::new("/", 0.0, "division by zero"));
        }
        Ok(self / rhs)
    }

    fn pow(self, rhs: Self) -> Result<Self, DomainError> {
        pow_domain_check(self, rhs, true)?;
        Ok(pow_value(self, rhs))
    }

    fn sin(self) -> Self {
        f64::sin(self)
    }

    fn cos(self) -> Self {
        f64::cos(self)
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn tan(self) -> Result<Self, DomainError> {
        if f64::cos(self) == 0.0 {
            return Err(DomainError::new("tan", self, "argument is a pole"));
        }
        Ok(f64::tan(self))
    }

    fn log(self) -> Result<Self, DomainError> {
        if self <= 0.0 {
            return Err(DomainError::new("log", self, "argument must be positive"));
        }
        Ok(f64::ln(self))
    }

    fn sqrt(self) -> Result<Self, DomainError> {
        if self < 0.0 {
            return Err(DomainError::new("sqrt", self, "argument must be non-negative"));
        }
        Ok(f64::sqrt(self))
    }

    fn atan2(self, abscissa: Self) -> Result<Self, DomainError> {
        if self == 0.0 && abscissa == 0.0 {
            return Err(DomainError::new("atan2", 0.0, "undefined at the origin"));
        }
        Ok(f64::atan2(self, abscissa))
    }
}

/// Domain preconditions for `base ^ exp`, shared across scalar kinds.
/// `exp_constant` is true when the exponent carries no derivative seeds.
fn pow_domain_check(base: f64, exp: f64, exp_constant: bool) -> Result<(), DomainError> {
    if !exp_constant {
        if base <= 0.0 {
            return Err(DomainError::new(
                "^",
                base,
                "base must be positive when the exponent varies",
            ));
        }
        return Ok(());
    }
    if is_integral(exp) {
        if base == 0.0 && exp < 0.0 {
            return Err(DomainError::new("^", 0.0, "zero base with negative exponent"));
        }
        return Ok(());
    }
    if base < 0.0 {
        return Err(DomainError::new(
            "^",
            base,
            "negative base with non-integer exponent",
        ));
    }
    if base == 0.0 && exp <= 0.0 {
        return Err(DomainError::new("^", 0.0, "zero base with non-positive exponent"));
    }
    Ok(())
}

/// Second-order hyperdual number.
///
/// Components: the point value `val`, first derivatives `d1`, `d2` along the
/// two seed directions, and the mixed second derivative `d12`. Seeding both
/// directions identically makes `d12` the pure second directional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2 {
    pub val: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

/// Seeds an evaluation point: value with first-order sensitivities
/// `seed_u`, `seed_v` and no curvature.
pub fn lift(value: f64, seed_u: f64, seed_v: f64) -> Dual2 {
    Dual2 { val: value, d1: seed_u, d2: seed_v, d12: 0.0 }
}

impl Dual2 {
    pub fn constant(v: f64) -> Self {
        Dual2 { val: v, d1: 0.0, d2: 0.0, d12: 0.0 }
    }

    fn finite(self) -> bool {
        self.val.is_finite() && self.d1.is_finite() && self.d2.is_finite() && self.d12.is_finite()
    }

    /// Chain rule through a unary primitive with derivatives `f1`, `f2` at
    /// the point.
    fn unary(self, f: f64, f1: f64, f2: f64) -> Dual2 {
        Dual2 {
            val: f,
            d1: f1 * self.d1,
            d2: f1 * self.d2,
            d12: f1 * self.d12 + f2 * self.d1 * self.d2,
        }
    }

    /// Chain rule through a binary primitive with first partials `fa`, `fb`
    /// and second partials `faa`, `fab`, `fbb` at the point.
    #[allow(clippy::too_many_arguments)]
    fn binary(a: Dual2, b: Dual2, f: f64, fa: f64, fb: f64, faa: f64, fab: f64, fbb: f64) -> Dual2 {
        Dual2 {
            val: f,
            d1: fa * a.d1 + fb * b.d1,
            d2: fa * a.d2 + fb * b.d2,
            d12: fa * a.d12
                + fb * b.d12
                + faa * a.d1 * a.d2
                + fab * (a.d1 * b.d2 + a.d2 * b.d1)
                + fbb * b.d1 * b.d2,
        }
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(self, o: Dual2) -> Dual2 {
        Dual2 {
            val: self.val + o.val,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            d12: self.d12 + o.d12,
        }
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, o: Dual2) -> Dual2 {
        Dual2 {
            val: self.val - o.val,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
            d12: self.d12 - o.d12,
        }
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, o: Dual2) -> Dual2 {
        // Leibniz to second order: (ab)'' picks up both cross terms.
        Dual2 {
            val: self.val * o.val,
            d1: self.d1 * o.val + self.val * o.d1,
            d2: self.d2 * o.val + self.val * o.d2,
            d12: self.d12 * o.val + self.d1 * o.d2 + self.d2 * o.d1 + self.val * o.d12,
        }
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        Dual2 { val: -self.val, d1: -self.d1, d2: -self.d2, d12: -self.d12 }
    }
}

impl Scalar for Dual2 {
    fn constant(v: f64) -> Self {
        Dual2::constant(v)
    }

    fn primal(self) -> f64 {
        self.val
    }

    fn is_constant(self) -> bool {
        self.d1 == 0.0 && self.d2 == 0.0 && self.d12 == 0.0
    }

    fn div(self, rhs: Self) -> Result<Self, DomainError> {
        if rhs.val == 0.0 {
            return Err(DomainError::new("/", 0.0, "division by zero"));
        }
        let f = self.val / rhs.val;
        let b = rhs.val;
        let r = Dual2::binary(
            self,
            rhs,
            f,
            1.0 / b,
            -f / b,
            0.0,
            -1.0 / (b * b),
            2.0 * f / (b * b),
        );
        if !r.finite() {
            return Err(DomainError::non_finite("/", b));
        }
        Ok(r)
    }

    fn pow(self, rhs: Self) -> Result<Self, DomainError> {
        let exp_constant = rhs.is_constant();
        pow_domain_check(self.val, rhs.val, exp_constant)?;
        if self.is_constant() && exp_constant {
            return Ok(Dual2::constant(pow_value(self.val, rhs.val)));
        }
        let r = if exp_constant {
            let c = rhs.val;
            if c == 0.0 {
                return Ok(Dual2::constant(1.0));
            }
            let (f, f1, f2) = if self.val == 0.0 && is_integral(c) {
                // x^c is smooth at x = 0 for integer c >= 1; the generic
                // x^(c-k) factors would evaluate to 0 * inf here.
                (
                    0.0,
                    if c == 1.0 { 1.0 } else { 0.0 },
                    if c == 2.0 { 2.0 } else { 0.0 },
                )
            } else {
                (
                    pow_value(self.val, c),
                    c * pow_value(self.val, c - 1.0),
                    c * (c - 1.0) * pow_value(self.val, c - 2.0),
                )
            };
            self.unary(f, f1, f2)
        } else {
            let a = self.val;
            let b = rhs.val;
            let f = pow_value(a, b);
            let la = a.ln();
            let fa = b * f / a;
            let fb = f * la;
            let faa = b * (b - 1.0) * f / (a * a);
            let fab = (f / a) * (1.0 + b * la);
            let fbb = f * la * la;
            Dual2::binary(self, rhs, f, fa, fb, faa, fab, fbb)
        };
        if !r.finite() {
            return Err(DomainError::non_finite("^", self.val));
        }
        Ok(r)
    }

    fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.unary(s, c, -s)
    }

    fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.unary(c, -s, -c)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e, e)
    }

    fn tan(self) -> Result<Self, DomainError> {
        if f64::cos(self.val) == 0.0 {
            return Err(DomainError::new("tan", self.val, "argument is a pole"));
        }
        let tv = f64::tan(self.val);
        let sec2 = 1.0 + tv * tv;
        let r = self.unary(tv, sec2, 2.0 * tv * sec2);
        if !r.finite() {
            return Err(DomainError::non_finite("tan", self.val));
        }
        Ok(r)
    }

    fn log(self) -> Result<Self, DomainError> {
        if self.val <= 0.0 {
            return Err(DomainError::new("log", self.val, "argument must be positive"));
        }
        if self.is_constant() {
            return Ok(Dual2::constant(self.val.ln()));
        }
        let x = self.val;
        let r = self.unary(x.ln(), 1.0 / x, -1.0 / (x * x));
        if !r.finite() {
            return Err(DomainError::non_finite("log", x));
        }
        Ok(r)
    }

    fn sqrt(self) -> Result<Self, DomainError> {
        if self.val < 0.0 {
            return Err(DomainError::new("sqrt", self.val, "argument must be non-negative"));
        }
        if self.is_constant() {
            return Ok(Dual2::constant(self.val.sqrt()));
        }
        if self.val == 0.0 {
            return Err(DomainError::new("sqrt", 0.0, "derivative is unbounded at zero"));
        }
        let s = self.val.sqrt();
        let r = self.unary(s, 0.5 / s, -0.25 / (s * self.val));
        if !r.finite() {
            return Err(DomainError::non_finite("sqrt", self.val));
        }
        Ok(r)
    }

    fn atan2(self, abscissa: Self) -> Result<Self, DomainError> {
        let y = self.val;
        let x = abscissa.val;
        let r2 = x * x + y * y;
        if r2 == 0.0 {
            return Err(DomainError::new("atan2", 0.0, "undefined at the origin"));
        }
        let f = y.atan2(x);
        let r = Dual2::binary(
            self,
            abscissa,
            f,
            x / r2,
            -y / r2,
            -2.0 * x * y / (r2 * r2),
            (y * y - x * x) / (r2 * r2),
            2.0 * x * y / (r2 * r2),
        );
        if !r.finite() {
            return Err(DomainError::non_finite("atan2", y));
        }
        Ok(r)
    }
}

/// First-order dual over any scalar kind. `Dual1<Dual2>` carries three
/// derivative orders in total, which lets coordinate-map partials stay
/// differentiable under an outer second-order evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual1<S: Scalar> {
    pub val: S,
    pub dot: S,
}

impl<S: Scalar> Dual1<S> {
    pub fn new(val: S, dot: S) -> Self {
        Dual1 { val, dot }
    }

    /// Lifts a scalar with tangent seed zero.
    pub fn plain(val: S) -> Self {
        Dual1 { val, dot: S::constant(0.0) }
    }

    fn dot_is_zero(self) -> bool {
        self.dot.is_constant() && self.dot.primal() == 0.0
    }
}

impl<S: Scalar> Add for Dual1<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual1::new(self.val + o.val, self.dot + o.dot)
    }
}

impl<S: Scalar> Sub for Dual1<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual1::new(self.val - o.val, self.dot - o.dot)
    }
}

impl<S: Scalar> Mul for Dual1<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual1::new(self.val * o.val, self.dot * o.val + self.val * o.dot)
    }
}

impl<S: Scalar> Neg for Dual1<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual1::new(-self.val, -self.dot)
    }
}

impl<S: Scalar> Scalar for Dual1<S> {
    fn constant(v: f64) -> Self {
        Dual1::plain(S::constant(v))
    }

    fn primal(self) -> f64 {
        self.val.primal()
    }

    fn is_constant(self) -> bool {
        self.val.is_constant() && self.dot_is_zero()
    }

    fn div(self, rhs: Self) -> Result<Self, DomainError> {
        let val = self.val.div(rhs.val)?;
        let dot = (self.dot - val * rhs.dot).div(rhs.val)?;
        Ok(Dual1::new(val, dot))
    }

    fn pow(self, rhs: Self) -> Result<Self, DomainError> {
        let exp_constant = rhs.is_constant();
        pow_domain_check(self.primal(), rhs.primal(), exp_constant)?;
        if self.is_constant() && exp_constant {
            return Ok(Self::constant(pow_value(self.primal(), rhs.primal())));
        }
        if exp_constant {
            let c = rhs.primal();
            if c == 0.0 {
                return Ok(Self::constant(1.0));
            }
            let val = self.val.pow(S::constant(c))?;
            let slope = S::constant(c) * self.val.pow(S::constant(c - 1.0))?;
            Ok(Dual1::new(val, slope * self.dot))
        } else {
            let val = self.val.pow(rhs.val)?;
            let la = self.val.log()?;
            let ratio = self.dot.div(self.val)?;
            Ok(Dual1::new(val, val * (rhs.dot * la + rhs.val * ratio)))
        }
    }

    fn sin(self) -> Self {
        Dual1::new(self.val.sin(), self.val.cos() * self.dot)
    }

    fn cos(self) -> Self {
        Dual1::new(self.val.cos(), -self.val.sin() * self.dot)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        Dual1::new(e, e * self.dot)
    }

    fn tan(self) -> Result<Self, DomainError> {
        let tv = self.val.tan()?;
        let one = S::constant(1.0);
        Ok(Dual1::new(tv, (one + tv * tv) * self.dot))
    }

    fn log(self) -> Result<Self, DomainError> {
        let val = self.val.log()?;
        Ok(Dual1::new(val, self.dot.div(self.val)?))
    }

    fn sqrt(self) -> Result<Self, DomainError> {
        if self.is_constant() {
            return Ok(Dual1::plain(self.val.sqrt()?));
        }
        let s = self.val.sqrt()?;
        Ok(Dual1::new(s, self.dot.div(s + s)?))
    }

    fn atan2(self, abscissa: Self) -> Result<Self, DomainError> {
        let val = self.val.atan2(abscissa.val)?;
        let r2 = abscissa.val * abscissa.val + self.val * self.val;
        let num = abscissa.val * self.dot - self.val * abscissa.dot;
        Ok(Dual1::new(val, num.div(r2)?))
    }
}

/// Evaluates `f` at `point` with derivative seeds `seed_u`, `seed_v`.
///
/// The result carries the value, the directional derivatives along both
/// seeds, and the mixed second derivative. Seeding `u = v` yields the pure
/// second directional derivative in `d12`.
pub fn d2_eval<F>(f: F, point: &[f64], seed_u: &[f64], seed_v: &[f64]) -> Result<Dual2, DomainError>
where
    F: FnOnce(&[Dual2]) -> Result<Dual2, DomainError>,
{
    assert_eq!(point.len(), seed_u.len(), "seed_u length must match point");
    assert_eq!(point.len(), seed_v.len(), "seed_v length must match point");
    let args: Vec<Dual2> = point
        .iter()
        .zip(seed_u.iter().zip(seed_v.iter()))
        .map(|(&p, (&u, &v))| lift(p, u, v))
        .collect();
    let out = f(&args)?;
    if !out.finite() {
        return Err(DomainError::non_finite("evaluation", out.val));
    }
    Ok(out)
}
