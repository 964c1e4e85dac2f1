//! Exact arithmetic in the real quadratic field `K = Q(sqrt(n))`.
//!
//! Elements are stored with rational coordinates in the integral basis
//! `(1, alpha)` of the ring of integers `Z_K`, where `alpha = sqrt(n)`
//! for `n != 1 (mod 4)` and `alpha = (1 + sqrt(n))/2` for
//! `n == 1 (mod 4)`. Storing the `(1, alpha)` basis (rather than
//! `(1, sqrt(n))`) keeps integer coordinates for every element of
//! `Z_K`; renderers produce `sqrt(n)`-form strings for display.
//!
//! All predicates (`sign`, comparisons) are decided by rational
//! arithmetic alone. Floating point only enters through [`QuadElem::embed`],
//! which the exact layers never consume.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Brute-force minimality of the fundamental unit is cross-checked for
/// all fields with `n` below this threshold.
pub const UNIT_BRUTE_CHECK_THRESHOLD: u64 = 100;

/// Errors from field construction and arithmetic.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuadError {
    #[error("n = {0} is not squarefree (divisible by {1}^2)")]
    NotSquarefree(u64, u64),
    #[error("n = {0} is too small; need n >= 2")]
    TooSmall(u64),
    #[error("elements belong to different fields (n = {0} vs n = {1})")]
    CtxMismatch(u64, u64),
    #[error("no unit > 1 with |norm| = 1 found within coefficient bound {0}")]
    NoUnitFound(u64),
    #[error("continued-fraction convergents exceeded the bit budget ({0} bits)")]
    InternalOverflow(usize),
    #[error("division by zero element")]
    DivisionByZero,
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Which generator the integral basis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlphaKind {
    /// `alpha = sqrt(n)`, used when `n != 1 (mod 4)`.
    Sqrt,
    /// `alpha = (1 + sqrt(n))/2`, used when `n == 1 (mod 4)`.
    HalfPlusSqrt,
}

/// A validated real quadratic field `Q(sqrt(n))`, `n` squarefree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldCtx {
    n: u64,
    alpha_kind: AlphaKind,
}

impl FieldCtx {
    /// Builds the field context for `Q(sqrt(n))`.
    ///
    /// Rejects `n < 2` and non-squarefree `n`. Non-squarefree inputs
    /// are rejected rather than interpreted as the order `Z[sqrt(n)]`:
    /// the ring of integers here is always maximal.
    pub fn new(n: u64) -> Result<FieldCtx, QuadError> {
        if n < 2 {
            return Err(QuadError::TooSmall(n));
        }
        if let Some(p) = square_divisor(n) {
            return Err(QuadError::NotSquarefree(n, p));
        }
        let alpha_kind = if n % 4 == 1 {
            AlphaKind::HalfPlusSqrt
        } else {
            AlphaKind::Sqrt
        };
        Ok(FieldCtx { n, alpha_kind })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn alpha_kind(&self) -> AlphaKind {
        self.alpha_kind
    }

    /// Trace of `alpha`: 0 for the `sqrt` basis, 1 for the half basis.
    fn alpha_trace(&self) -> i64 {
        match self.alpha_kind {
            AlphaKind::Sqrt => 0,
            AlphaKind::HalfPlusSqrt => 1,
        }
    }

    /// Norm of `alpha`: `-n`, or `(1 - n)/4` in the half basis.
    fn alpha_norm(&self) -> BigInt {
        match self.alpha_kind {
            AlphaKind::Sqrt => -BigInt::from(self.n),
            AlphaKind::HalfPlusSqrt => (BigInt::one() - BigInt::from(self.n)) / 4,
        }
    }

    /// The element `alpha` itself.
    pub fn alpha(&self) -> QuadElem {
        QuadElem::from_integers(*self, 0, 1)
    }

    /// The element `sqrt(n)` in the `(1, alpha)` basis:
    /// `alpha` itself, or `2*alpha - 1` in the half basis.
    pub fn sqrt_n(&self) -> QuadElem {
        match self.alpha_kind {
            AlphaKind::Sqrt => QuadElem::from_integers(*self, 0, 1),
            AlphaKind::HalfPlusSqrt => QuadElem::from_integers(*self, -1, 2),
        }
    }

    pub fn zero(&self) -> QuadElem {
        QuadElem::from_integers(*self, 0, 0)
    }

    pub fn one(&self) -> QuadElem {
        QuadElem::from_integers(*self, 1, 0)
    }

    pub fn from_rational(&self, q: BigRational) -> QuadElem {
        QuadElem::new(*self, q, BigRational::zero())
    }
}

fn square_divisor(n: u64) -> Option<u64> {
    let mut m = n;
    let mut p = 2u64;
    while p.saturating_mul(p) <= m {
        if m.is_multiple_of(p) {
            m /= p;
            if m.is_multiple_of(p) {
                return Some(p);
            }
        }
        p += 1;
    }
    None
}

/// An element `a + b*alpha` of `K = Q(sqrt(n))` with exact rational
/// coordinates. Equality is coordinatewise; `BigRational` keeps each
/// coordinate in lowest terms, so the representation is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuadElem {
    ctx: FieldCtx,
    a: BigRational,
    b: BigRational,
}

impl QuadElem {
    pub fn new(ctx: FieldCtx, a: BigRational, b: BigRational) -> QuadElem {
        QuadElem { ctx, a, b }
    }

    pub fn from_integers(ctx: FieldCtx, a: i64, b: i64) -> QuadElem {
        QuadElem {
            ctx,
            a: BigRational::from(BigInt::from(a)),
            b: BigRational::from(BigInt::from(b)),
        }
    }

    pub fn from_bigints(ctx: FieldCtx, a: BigInt, b: BigInt) -> QuadElem {
        QuadElem {
            ctx,
            a: BigRational::from(a),
            b: BigRational::from(b),
        }
    }

    pub fn ctx(&self) -> FieldCtx {
        self.ctx
    }

    pub fn a(&self) -> &BigRational {
        &self.a
    }

    pub fn b(&self) -> &BigRational {
        &self.b
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_zero() && self.b.is_zero()
    }

    /// True if the element lies in `Z_K`, i.e. both coordinates are
    /// integers in the `(1, alpha)` basis.
    pub fn is_integral(&self) -> bool {
        self.a.is_integer() && self.b.is_integer()
    }

    fn check_ctx(&self, other: &QuadElem) -> Result<(), QuadError> {
        if self.ctx != other.ctx {
            return Err(QuadError::CtxMismatch(self.ctx.n, other.ctx.n));
        }
        Ok(())
    }

    pub fn checked_add(&self, rhs: &QuadElem) -> Result<QuadElem, QuadError> {
        self.check_ctx(rhs)?;
        Ok(QuadElem::new(self.ctx, &self.a + &rhs.a, &self.b + &rhs.b))
    }

    pub fn checked_sub(&self, rhs: &QuadElem) -> Result<QuadElem, QuadError> {
        self.check_ctx(rhs)?;
        Ok(QuadElem::new(self.ctx, &self.a - &rhs.a, &self.b - &rhs.b))
    }

    /// Multiplication reduces `alpha^2` by `alpha^2 = n` in the `sqrt`
    /// basis and `alpha^2 = alpha + (n-1)/4` in the half basis; both
    /// cases are captured by `alpha^2 = tr(alpha)*alpha - N(alpha)`.
    pub fn checked_mul(&self, rhs: &QuadElem) -> Result<QuadElem, QuadError> {
        self.check_ctx(rhs)?;
        let tr = BigRational::from(BigInt::from(self.ctx.alpha_trace()));
        let nm = BigRational::from(self.ctx.alpha_norm());
        let bb = &self.b * &rhs.b;
        let a = &self.a * &rhs.a - &bb * nm;
        let b = &self.a * &rhs.b + &self.b * &rhs.a + bb * tr;
        Ok(QuadElem::new(self.ctx, a, b))
    }

    pub fn scale(&self, q: &BigRational) -> QuadElem {
        QuadElem::new(self.ctx, &self.a * q, &self.b * q)
    }

    /// Galois conjugate: `(a, -b)` in the `sqrt` basis and
    /// `(a + b, -b)` in the half basis.
    pub fn conjugate(&self) -> QuadElem {
        match self.ctx.alpha_kind {
            AlphaKind::Sqrt => QuadElem::new(self.ctx, self.a.clone(), -self.b.clone()),
            AlphaKind::HalfPlusSqrt => QuadElem::new(self.ctx, &self.a + &self.b, -self.b.clone()),
        }
    }

    /// Field norm `z * conj(z)` as an exact rational; an integer
    /// whenever `z` lies in `Z_K`.
    pub fn norm(&self) -> BigRational {
        let tr = BigRational::from(BigInt::from(self.ctx.alpha_trace()));
        let nm = BigRational::from(self.ctx.alpha_norm());
        &self.a * &self.a + &self.a * &self.b * tr + &self.b * &self.b * nm
    }

    pub fn trace(&self) -> BigRational {
        let two = BigRational::from(BigInt::from(2));
        let tr = BigRational::from(BigInt::from(self.ctx.alpha_trace()));
        two * &self.a + tr * &self.b
    }

    /// Coordinates `(p, q)` with `z = p + q*sqrt(n)`.
    pub fn sqrt_coords(&self) -> (BigRational, BigRational) {
        match self.ctx.alpha_kind {
            AlphaKind::Sqrt => (self.a.clone(), self.b.clone()),
            AlphaKind::HalfPlusSqrt => {
                let half = BigRational::new(BigInt::one(), BigInt::from(2));
                (&self.a + &half * &self.b, half * &self.b)
            }
        }
    }

    /// Exact sign of the real number `a + b*alpha` under the identity
    /// embedding, by rational case analysis only. With `z = p + q*sqrt(n)`
    /// and mixed coordinate signs, the comparison reduces to `p^2` vs
    /// `q^2 * n`.
    pub fn sign(&self) -> i32 {
        let (p, q) = self.sqrt_coords();
        let sp = rational_sign(&p);
        let sq = rational_sign(&q);
        match (sp, sq) {
            (0, 0) => 0,
            (s, 0) => s,
            (0, s) => s,
            (1, 1) => 1,
            (-1, -1) => -1,
            (1, -1) => {
                // p > 0 > q*sqrt(n): positive iff p^2 > q^2 n.
                let n = BigRational::from(BigInt::from(self.ctx.n));
                rational_sign(&(&p * &p - &q * &q * n))
            }
            (-1, 1) => {
                let n = BigRational::from(BigInt::from(self.ctx.n));
                rational_sign(&(&q * &q * n - &p * &p))
            }
            _ => unreachable!(),
        }
    }

    /// Total order induced by the identity embedding.
    pub fn cmp_value(&self, other: &QuadElem) -> Ordering {
        assert_eq!(
            self.ctx, other.ctx,
            "cannot compare elements of different fields"
        );
        match (self - other).sign() {
            1 => Ordering::Greater,
            -1 => Ordering::Less,
            _ => Ordering::Equal,
        }
    }

    /// Canonical representative of the pair `{z, -z}`: the one that is
    /// positive under the identity embedding. Zero stays zero.
    pub fn canonical_positive(&self) -> QuadElem {
        if self.sign() < 0 {
            -self
        } else {
            self.clone()
        }
    }

    /// Exact division in `K`: `z / w = z * conj(w) / N(w)`.
    pub fn checked_div(&self, rhs: &QuadElem) -> Result<QuadElem, QuadError> {
        self.check_ctx(rhs)?;
        if rhs.is_zero() {
            return Err(QuadError::DivisionByZero);
        }
        let num = self.checked_mul(&rhs.conjugate())?;
        let den = rhs.norm();
        Ok(QuadElem::new(self.ctx, num.a / &den, num.b / den))
    }

    pub fn inverse(&self) -> Result<QuadElem, QuadError> {
        self.ctx.one().checked_div(self)
    }

    pub fn pow(&self, exp: u32) -> QuadElem {
        let mut acc = self.ctx.one();
        for _ in 0..exp {
            acc = &acc * self;
        }
        acc
    }

    /// Both real embeddings `(z, conj(z))` to at least `digits`
    /// decimal digits of accuracy.
    ///
    /// Guard digits are added adaptively until the stored decimal
    /// values carry a relative error below `10^-(digits+2)` in each
    /// embedding, so the `EmbeddedPair` product invariant holds.
    pub fn embed(&self, digits: u32) -> EmbeddedPair {
        let digits = digits.max(1);
        let conj = self.conjugate();
        let mut guard = 4u32;
        loop {
            let scale = digits + guard;
            let first = embed_with_sqrt(self, scale);
            let second = embed_with_sqrt(&conj, scale);
            let err = pow10_inv(scale);
            // |stored - true| <= |b| * err for each embedding; accept once
            // that bound is below 10^-(digits+2) relative to the value.
            let tol = pow10_inv(digits + 2);
            let ok = |val: &BigRational, z: &QuadElem| -> bool {
                if z.is_zero() {
                    return true;
                }
                let bound = z.b.abs() * &err;
                bound <= val.abs() * &tol
            };
            if ok(&first, self) && ok(&second, &conj) {
                return EmbeddedPair {
                    first,
                    second,
                    precision: digits,
                };
            }
            guard *= 2;
            if guard > 1 << 20 {
                // only reachable for z = 0 coordinates, handled above
                return EmbeddedPair {
                    first,
                    second,
                    precision: digits,
                };
            }
        }
    }

    /// Identity embedding as `f64` (export convenience).
    ///
    /// When the two terms of `p + q*sqrt(n)` cancel, the value is
    /// rewritten as `(p^2 - n q^2) / (p - q*sqrt(n))`, whose numerator
    /// is exact and whose denominator has no cancellation; either way
    /// the result is accurate to a few ulps.
    pub fn to_f64(&self) -> f64 {
        let (p, q) = self.sqrt_coords();
        if q.is_zero() {
            return p.to_f64().unwrap_or(f64::NAN);
        }
        let s = (self.ctx.n as f64).sqrt();
        let pf = p.to_f64().unwrap_or(f64::NAN);
        let qf = q.to_f64().unwrap_or(f64::NAN);
        if p.is_zero() || p.is_positive() == q.is_positive() {
            return pf + qf * s;
        }
        let num = &p * &p - &q * &q * BigRational::from(BigInt::from(self.ctx.n));
        num.to_f64().unwrap_or(f64::NAN) / (pf - qf * s)
    }

    /// Renders in the `(1, alpha)` basis, e.g. `1+2a`, `-1/2+a`.
    pub fn display_alpha(&self) -> String {
        render_linear(&self.a, &self.b, "a")
    }

    /// Renders in `sqrt(n)` form with a common denominator:
    /// `x+y*sqrt(n)` or `(x+y*sqrt(n))/d`, e.g. `(3+sqrt(13))/2`.
    pub fn display_sqrt(&self) -> String {
        self.render_sqrt(&format!("sqrt({})", self.ctx.n))
    }

    /// Like [`display_sqrt`](Self::display_sqrt) with the Unicode radical.
    pub fn display_pretty(&self) -> String {
        self.render_sqrt(&format!("\u{221a}{}", self.ctx.n))
    }

    fn render_sqrt(&self, radical: &str) -> String {
        let (p, q) = self.sqrt_coords();
        let d = lcm_bigint(p.denom(), q.denom());
        let x = (&p * BigRational::from(d.clone())).to_integer();
        let y = (&q * BigRational::from(d.clone())).to_integer();
        let g = x.gcd(&y).gcd(&d);
        let (x, y, d) = if g.is_zero() {
            (x, y, BigInt::one())
        } else {
            (x / &g, y / &g, d / &g)
        };
        let body = render_linear(&BigRational::from(x), &BigRational::from(y), radical);
        if d.is_one() {
            body
        } else {
            format!("({body})/{d}")
        }
    }
}

fn lcm_bigint(a: &BigInt, b: &BigInt) -> BigInt {
    a.lcm(b)
}

fn rational_sign(q: &BigRational) -> i32 {
    if q.is_zero() {
        0
    } else if q.is_positive() {
        1
    } else {
        -1
    }
}

fn render_rational(q: &BigRational) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

fn render_linear(a: &BigRational, b: &BigRational, sym: &str) -> String {
    if b.is_zero() {
        return render_rational(a);
    }
    let coeff = if b.abs().is_one() {
        sym.to_string()
    } else {
        format!("{}{}", render_rational(&b.abs()), sym)
    };
    if a.is_zero() {
        return if b.is_negative() {
            format!("-{coeff}")
        } else {
            coeff
        };
    }
    let op = if b.is_negative() { "-" } else { "+" };
    format!("{}{}{}", render_rational(a), op, coeff)
}

/// `10^-(d)` as an exact rational.
fn pow10_inv(d: u32) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(10u32).pow(d))
}

/// Evaluates `a + b*sqrt(n)` with `sqrt(n)` replaced by its decimal
/// truncation to `scale` digits. The result differs from the true
/// embedding by at most `|b| * 10^-scale`.
fn embed_with_sqrt(z: &QuadElem, scale: u32) -> BigRational {
    let (p, q) = z.sqrt_coords();
    let pow = BigInt::from(10u32).pow(scale);
    let scaled = BigInt::from(z.ctx.n) * &pow * &pow;
    let root = scaled.sqrt(); // floor of sqrt
    let approx = BigRational::new(root, pow);
    p + q * approx
}

/// A pair of decimal approximations of the two real embeddings.
///
/// Values are stored as exact rationals (the decimal roundings), so the
/// invariant `|first*second - N(z)| <= 10^-(precision-2) * |N(z)|` can
/// be checked exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPair {
    first: BigRational,
    second: BigRational,
    precision: u32,
}

impl EmbeddedPair {
    pub fn first(&self) -> &BigRational {
        &self.first
    }

    pub fn second(&self) -> &BigRational {
        &self.second
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn first_f64(&self) -> f64 {
        self.first.to_f64().unwrap_or(f64::NAN)
    }

    pub fn second_f64(&self) -> f64 {
        self.second.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for QuadElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_sqrt())
    }
}

macro_rules! forward_binop {
    ($Op:ident, $op:ident, $checked:ident) => {
        impl $Op for &QuadElem {
            type Output = QuadElem;
            fn $op(self, rhs: &QuadElem) -> QuadElem {
                self.$checked(rhs).expect("field context mismatch")
            }
        }
        impl $Op for QuadElem {
            type Output = QuadElem;
            fn $op(self, rhs: QuadElem) -> QuadElem {
                (&self).$checked(&rhs).expect("field context mismatch")
            }
        }
        impl $Op<&QuadElem> for QuadElem {
            type Output = QuadElem;
            fn $op(self, rhs: &QuadElem) -> QuadElem {
                (&self).$checked(rhs).expect("field context mismatch")
            }
        }
    };
}

forward_binop!(Add, add, checked_add);
forward_binop!(Sub, sub, checked_sub);
forward_binop!(Mul, mul, checked_mul);

impl Neg for &QuadElem {
    type Output = QuadElem;
    fn neg(self) -> QuadElem {
        QuadElem::new(self.ctx, -self.a.clone(), -self.b.clone())
    }
}

impl Neg for QuadElem {
    type Output = QuadElem;
    fn neg(self) -> QuadElem {
        QuadElem::new(self.ctx, -self.a, -self.b)
    }
}

/// Fundamental unit `eps = min{ z in Z_K^x | z > 1 }`.
///
/// Expands `alpha` itself (not `sqrt(n)`) by continued fractions, so
/// the half basis finds units outside `Z[sqrt(n)]` (e.g. `n = 5`).
/// Scanning convergents `p/q` of `alpha`, the element
/// `u = p - q*conj(alpha)` is a unit exactly when the Pell-type form
/// `|N(u)| = 1`; the first such convergent is the fundamental unit.
/// For `n` below [`UNIT_BRUTE_CHECK_THRESHOLD`] the result is
/// cross-checked against [`brute_force_unit`].
pub fn fundamental_unit(ctx: &FieldCtx) -> Result<QuadElem, QuadError> {
    let eps = fundamental_unit_uncached(ctx)?;
    if ctx.n < UNIT_BRUTE_CHECK_THRESHOLD {
        let bound_big = eps.a().abs().max(eps.b().abs()).to_integer();
        let bound = bound_big
            .to_u64()
            .ok_or_else(|| QuadError::Internal("unit coefficient exceeds u64".into()))?
            .max(1);
        let brute = brute_force_unit(ctx, bound)?;
        if brute != eps {
            return Err(QuadError::Internal(format!(
                "continued fractions found {} but brute force found {}",
                eps.display_sqrt(),
                brute.display_sqrt()
            )));
        }
    }
    Ok(eps)
}

const UNIT_BIT_BUDGET: usize = 1 << 20;

fn fundamental_unit_uncached(ctx: &FieldCtx) -> Result<QuadElem, QuadError> {
    // PQa expansion of alpha = (p0 + sqrt(n)) / q0.
    let n = BigInt::from(ctx.n);
    let (mut p, mut q) = match ctx.alpha_kind {
        AlphaKind::Sqrt => (BigInt::zero(), BigInt::one()),
        AlphaKind::HalfPlusSqrt => (BigInt::one(), BigInt::from(2)),
    };
    let sqrt_floor = n.sqrt();
    let tr = BigInt::from(ctx.alpha_trace());

    let mut conv_prev = (BigInt::one(), BigInt::zero()); // (p_{-1}, q_{-1})
    let mut conv_prev2 = (BigInt::zero(), BigInt::one()); // (p_{-2}, q_{-2})

    // A state repeats within O(n) steps; the unit shows up inside the
    // first two periods, so cap generously and flag anything beyond.
    let max_steps = 64 + 8 * (ctx.n as usize).max(16);
    for _ in 0..max_steps {
        let a = floor_div_quadratic(&p, &sqrt_floor, &q);
        let num = &a * &conv_prev.0 + &conv_prev2.0;
        let den = &a * &conv_prev.1 + &conv_prev2.1;
        conv_prev2 = conv_prev;
        conv_prev = (num, den);

        if conv_prev.0.bits() as usize > UNIT_BIT_BUDGET {
            return Err(QuadError::InternalOverflow(UNIT_BIT_BUDGET));
        }

        // u = p_i - q_i * conj(alpha) = (p_i - q_i*tr(alpha)) + q_i*alpha
        let u = QuadElem::new(
            *ctx,
            BigRational::from(&conv_prev.0 - &tr * &conv_prev.1),
            BigRational::from(conv_prev.1.clone()),
        );
        let norm = u.norm();
        if norm.is_integer() && norm.numer().abs().is_one() {
            debug_assert_eq!((&u - &ctx.one()).sign(), 1, "unit must exceed 1");
            return Ok(u);
        }

        // continued-fraction state update
        let p_next = &a * &q - &p;
        let q_next = (&n - &p_next * &p_next) / &q;
        p = p_next;
        q = q_next;
        if q.is_zero() {
            return Err(QuadError::Internal("sqrt(n) became rational".into()));
        }
    }
    Err(QuadError::Internal(format!(
        "no unit found for n = {} within {} continued-fraction steps",
        ctx.n, max_steps
    )))
}

/// `floor((p + sqrt(n)) / q)` given `floor(sqrt(n))`, for either sign
/// of `q`. Uses that `sqrt(n)` is irrational, so the quotient is never
/// an exact integer when the radical contributes.
fn floor_div_quadratic(p: &BigInt, sqrt_floor: &BigInt, q: &BigInt) -> BigInt {
    let num = p + sqrt_floor;
    if q.is_positive() {
        num.div_floor(q)
    } else {
        // floor(x / q) = -ceil((p + sqrt(n)) / |q|) = -(floor(...) + 1)
        let qa = -q;
        -(num.div_floor(&qa) + BigInt::one())
    }
}

/// Independent oracle for [`fundamental_unit`].
///
/// Examines every `z = a + b*alpha` with `0 <= a, b <= coeff_bound` and
/// returns the smallest element `> 1` with `|N(z)| = 1`. For each `b`
/// the candidate `a` values come from the quadratic `|N| = 1` in `a`, so
/// the scan stays linear in the bound; a plain nested loop gives the
/// same answer (checked in tests).
pub fn brute_force_unit(ctx: &FieldCtx, coeff_bound: u64) -> Result<QuadElem, QuadError> {
    let mut best: Option<QuadElem> = None;
    let one = ctx.one();
    let tr = BigInt::from(ctx.alpha_trace());
    let alpha_norm = ctx.alpha_norm();
    for b in 0..=coeff_bound {
        let bb = BigInt::from(b);
        // N(a + b*alpha) = a^2 + tr*b*a + N(alpha)*b^2 = +-1
        // => a = (-tr*b +- sqrt(tr^2 b^2 - 4 (N(alpha) b^2 -+ 1))) / 2
        let tb = &tr * &bb;
        let nb2 = &alpha_norm * &bb * &bb;
        for target in [BigInt::one(), -BigInt::one()] {
            let disc: BigInt = &tb * &tb - BigInt::from(4) * (&nb2 - &target);
            if disc.is_negative() {
                continue;
            }
            let root = disc.sqrt();
            if &root * &root != disc {
                continue;
            }
            for r in [root.clone(), -root] {
                let num = -&tb + r;
                if num.is_even() {
                    let a: BigInt = num / BigInt::from(2);
                    if a.is_negative() || a > BigInt::from(coeff_bound) {
                        continue;
                    }
                    let z =
                        QuadElem::new(*ctx, BigRational::from(a), BigRational::from(bb.clone()));
                    debug_assert!(z.norm().numer().abs().is_one());
                    if (&z - &one).sign() == 1 {
                        best = match best {
                            Some(cur) if cur.cmp_value(&z) <= Ordering::Equal => Some(cur),
                            _ => Some(z),
                        };
                    }
                }
            }
        }
    }
    best.ok_or(QuadError::NoUnitFound(coeff_bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(n: u64) -> FieldCtx {
        FieldCtx::new(n).unwrap()
    }

    fn elem(n: u64, a: i64, b: i64) -> QuadElem {
        QuadElem::from_integers(ctx(n), a, b)
    }

    #[test]
    fn make_field_classifies_basis() {
        assert_eq!(ctx(2).alpha_kind(), AlphaKind::Sqrt);
        assert_eq!(ctx(5).alpha_kind(), AlphaKind::HalfPlusSqrt);
        assert_eq!(ctx(13).alpha_kind(), AlphaKind::HalfPlusSqrt);
        assert_eq!(FieldCtx::new(12), Err(QuadError::NotSquarefree(12, 2)));
        assert_eq!(FieldCtx::new(18), Err(QuadError::NotSquarefree(18, 3)));
        assert_eq!(FieldCtx::new(1), Err(QuadError::TooSmall(1)));
        assert_eq!(FieldCtx::new(0), Err(QuadError::TooSmall(0)));
    }

    #[test]
    fn ring_ops_reduce_alpha_square() {
        // (1+sqrt(2))^2 = 3 + 2 sqrt(2)
        let z = elem(2, 1, 1);
        assert_eq!(&z * &z, elem(2, 3, 2));
        // n = 5: eps = alpha, eps^2 = 1 + alpha
        let eps5 = elem(5, 0, 1);
        assert_eq!(&eps5 * &eps5, elem(5, 1, 1));
        // n = 13: eps = 1 + alpha, eps^2 = 4 + 3 alpha
        let eps13 = elem(13, 1, 1);
        assert_eq!(&eps13 * &eps13, elem(13, 4, 3));
    }

    #[test]
    fn ctx_mismatch_is_reported() {
        let z = elem(2, 1, 0);
        let w = elem(3, 1, 0);
        assert_eq!(z.checked_add(&w), Err(QuadError::CtxMismatch(2, 3)));
        assert_eq!(z.checked_mul(&w), Err(QuadError::CtxMismatch(2, 3)));
    }

    #[test]
    fn conjugation_matches_definition() {
        assert_eq!(elem(2, 1, 1).conjugate(), elem(2, 1, -1));
        // sigma((1+sqrt(5))/2) = (1-sqrt(5))/2 = 1 - alpha
        assert_eq!(elem(5, 0, 1).conjugate(), elem(5, 1, -1));
    }

    #[test]
    fn norm_of_table_units() {
        let minus_one = BigRational::from(BigInt::from(-1));
        let plus_one = BigRational::from(BigInt::from(1));
        assert_eq!(elem(2, 1, 1).norm(), minus_one); // 1+sqrt(2)
        assert_eq!(elem(3, 2, 1).norm(), plus_one); // 2+sqrt(3)
        assert_eq!(elem(13, 1, 1).norm(), minus_one); // (3+sqrt(13))/2
    }

    #[test]
    fn exact_sign_cases() {
        assert_eq!(elem(2, 1, -1).sign(), -1); // 1 - sqrt(2)
        assert_eq!(elem(2, 0, 0).sign(), 0);
        assert_eq!(elem(3, 7, -4).sign(), 1); // 7 - 4 sqrt(3): 49 > 48
        assert_eq!(elem(3, -7, 4).sign(), -1);
        assert_eq!(elem(5, -1, 2).sign(), 1); // -1 + (1+sqrt(5)) = sqrt(5)
    }

    #[test]
    fn embed_matches_known_decimals() {
        let e = elem(2, 1, 1).embed(10);
        assert!((e.first_f64() - 2.414213562).abs() < 1e-9);
        assert!((e.second_f64() + 0.414213562).abs() < 1e-9);

        let zero = elem(2, 0, 0).embed(10);
        assert_eq!(zero.first_f64(), 0.0);
        assert_eq!(zero.second_f64(), 0.0);

        let golden = elem(5, 0, 1).embed(10);
        assert!((golden.first_f64() - 1.618033988).abs() < 1e-9);
        assert!((golden.second_f64() + 0.618033988).abs() < 1e-9);
    }

    #[test]
    fn embed_product_tracks_norm() {
        // |first*second - N(z)| <= 10^-(digits-2) * |N(z)|, checked in
        // exact rational arithmetic
        for (n, a, b) in [(2, 3, -2), (5, 7, 11), (13, -4, 9), (3, 1, 1), (17, 33, -8)] {
            let z = elem(n, a, b);
            for digits in [6u32, 12, 30, 50] {
                let e = z.embed(digits);
                let prod = e.first() * e.second();
                let err = (prod - z.norm()).abs();
                let tol = pow10_inv(digits - 2) * z.norm().abs();
                assert!(err <= tol, "n={n} digits={digits}");
            }
        }
    }

    #[test]
    fn fundamental_units_match_table() {
        assert_eq!(fundamental_unit(&ctx(2)).unwrap(), elem(2, 1, 1));
        assert_eq!(fundamental_unit(&ctx(3)).unwrap(), elem(3, 2, 1));
        assert_eq!(fundamental_unit(&ctx(5)).unwrap(), elem(5, 0, 1));
        assert_eq!(fundamental_unit(&ctx(13)).unwrap(), elem(13, 1, 1));
        // larger checks: n = 7 and n = 17
        assert_eq!(fundamental_unit(&ctx(7)).unwrap(), elem(7, 8, 3));
        assert_eq!(fundamental_unit(&ctx(17)).unwrap(), elem(17, 3, 2));
    }

    #[test]
    fn brute_force_unit_examples() {
        assert_eq!(brute_force_unit(&ctx(3), 10).unwrap(), elem(3, 2, 1));
        assert_eq!(brute_force_unit(&ctx(2), 10).unwrap(), elem(2, 1, 1));
        assert_eq!(brute_force_unit(&ctx(2), 0), Err(QuadError::NoUnitFound(0)));
    }

    #[test]
    fn brute_force_unit_agrees_with_nested_scan() {
        // reference: the literal O(bound^2) scan
        for n in [2u64, 3, 5, 6, 7, 10, 13, 17] {
            let c = ctx(n);
            let bound = 30u64;
            let mut best: Option<QuadElem> = None;
            for a in 0..=bound {
                for b in 0..=bound {
                    let z = QuadElem::from_integers(c, a as i64, b as i64);
                    if z.norm().numer().abs().is_one()
                        && (&z - &c.one()).sign() == 1
                        && best
                            .as_ref()
                            .map(|cur| z.cmp_value(cur) == Ordering::Less)
                            .unwrap_or(true)
                    {
                        best = Some(z);
                    }
                }
            }
            assert_eq!(brute_force_unit(&c, bound).ok(), best, "n = {n}");
        }
    }

    #[test]
    fn division_and_inverse() {
        let c = ctx(13);
        let eps = fundamental_unit(&c).unwrap();
        let inv = eps.inverse().unwrap();
        assert_eq!(&eps * &inv, c.one());
        let k = eps.pow(3).checked_div(&eps).unwrap();
        assert_eq!(k, eps.pow(2));
    }

    #[test]
    fn rendering_matches_tables() {
        assert_eq!(elem(2, 1, 1).display_sqrt(), "1+sqrt(2)");
        assert_eq!(elem(3, 2, 1).display_sqrt(), "2+sqrt(3)");
        assert_eq!(elem(5, 0, 1).display_sqrt(), "(1+sqrt(5))/2");
        assert_eq!(elem(13, 1, 1).display_sqrt(), "(3+sqrt(13))/2");
        assert_eq!(elem(13, 1, -1).display_sqrt(), "(1-sqrt(13))/2");
        assert_eq!(elem(2, 0, -1).display_sqrt(), "-sqrt(2)");
        assert_eq!(elem(2, -3, 0).display_sqrt(), "-3");
        assert_eq!(elem(5, 0, 2).display_sqrt(), "1+sqrt(5)");
        assert_eq!(elem(13, 1, 1).display_alpha(), "1+a");
        assert_eq!(elem(2, 0, 0).display_sqrt(), "0");
    }
}
