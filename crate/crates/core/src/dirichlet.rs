//! Per-level geometry of the torus slices.
//!
//! On the leaf at level `k = y1/y2`, the translation `tau_z` contributes
//! the half plane `E(z) = { (x1, x2) : A*x1 + B*x2 + C >= 0 }` with
//!
//! ```text
//! A = 2z,   B = 2 k^2 sigma(z),   C = z^2 + k^2 sigma(z)^2,
//! ```
//!
//! all evaluated under the identity embedding. The boundary line is the
//! mediatrix of `tau_z`; the Dirichlet cell of the translation lattice
//! is the intersection of the strips `E(z) ∩ E(-z)` over nonzero `z`.
//! Everything here is exact: vertices live in `K`, and every predicate
//! is decided by [`QuadElem::sign`].
//!
//! Levels are always represented by their exact square `k^2`, which is
//! an element of `K` for every level this crate produces.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::quadfield::{FieldCtx, QuadElem, QuadError};

#[derive(Debug, Error, PartialEq)]
pub enum DirichletError {
    #[error("leaf points must have positive imaginary parts")]
    NonPositiveImaginary,
    #[error("level k^2 must be positive under the identity embedding, got {0}")]
    NonPositiveLevel(String),
    #[error("the zero translation has no mediatrix")]
    ZeroTranslation,
    #[error("candidate set cannot bound the region (coefficient bound too low)")]
    UnboundedRegion,
    #[error("slice geometry is invalid: {0}")]
    InvalidSliceGeometry(String),
    #[error(transparent)]
    Field(#[from] QuadError),
}

/// Simplest fraction strictly inside the open interval `(a, b)` via
/// the Stern-Brocot recursion on floats; callers must verify the exact
/// inclusion themselves.
pub(crate) fn simplest_rational_in(a: f64, b: f64) -> Option<BigRational> {
    use num_traits::FromPrimitive;
    if !(a.is_finite() && b.is_finite()) || a >= b || a < 0.0 {
        return None;
    }
    let mut terms: Vec<BigInt> = Vec::new();
    let (mut a, mut b) = (a, b);
    for _ in 0..64 {
        let ia = a.floor();
        if ia + 1.0 < b {
            terms.push(BigInt::from_f64(ia + 1.0)?);
            // reconstruct the continued fraction [t0; t1, ..., tk]
            let mut num = terms.pop().unwrap();
            let mut den = BigInt::from(1);
            while let Some(t) = terms.pop() {
                let new_num = t * &num + &den;
                den = num;
                num = new_num;
            }
            return Some(BigRational::new(num, den));
        }
        terms.push(BigInt::from_f64(ia)?);
        let (na, nb) = (1.0 / (b - ia), 1.0 / (a - ia));
        if !(na.is_finite() && nb.is_finite()) {
            return None;
        }
        a = na;
        b = nb;
    }
    None
}

/// A foliation level `k = y1/y2`, stored exactly via `k^2 ∈ K`.
///
/// The construction requires `k^2 > 0` under the identity embedding;
/// levels arising from the parallelogram formula `-z z'/sigma(z z')`
/// are in fact totally positive, but user-supplied levels only need the
/// identity embedding to be positive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Level {
    ksq: QuadElem,
}

impl Level {
    pub fn new(ksq: QuadElem) -> Result<Level, DirichletError> {
        if ksq.sign() != 1 {
            return Err(DirichletError::NonPositiveLevel(ksq.display_sqrt()));
        }
        Ok(Level { ksq })
    }

    /// Level 1 (the leaf `y1 = y2`).
    pub fn one(ctx: FieldCtx) -> Level {
        Level { ksq: ctx.one() }
    }

    pub fn from_rational(ctx: FieldCtx, ksq: BigRational) -> Result<Level, DirichletError> {
        Level::new(ctx.from_rational(ksq))
    }

    pub fn ksq(&self) -> &QuadElem {
        &self.ksq
    }

    pub fn ctx(&self) -> FieldCtx {
        self.ksq.ctx()
    }

    /// Exact comparison through `k1^2 - k2^2`.
    pub fn cmp_level(&self, other: &Level) -> Ordering {
        self.ksq.cmp_value(&other.ksq)
    }

    /// `log_eps(k) = ln(k^2) / (2 ln eps)`, the export view of the level.
    pub fn log_eps(&self, eps: &QuadElem) -> f64 {
        let k2 = self.ksq.to_f64();
        let e = eps.to_f64();
        k2.ln() / (2.0 * e.ln())
    }

    /// A level strictly between two others, chosen with the smallest
    /// possible rational `k^2` (verified exactly; falls back to the
    /// exact arithmetic mean when the float-guided search fails). Small
    /// representatives keep downstream exact arithmetic cheap.
    pub fn simple_between(lo: &Level, hi: &Level) -> Level {
        debug_assert_eq!(lo.cmp_level(hi), Ordering::Less);
        let ctx = lo.ctx();
        let lo_f = lo.ksq().to_f64();
        let hi_f = hi.ksq().to_f64();
        let margin = (hi_f - lo_f) * 1e-3;
        let candidate = simplest_rational_in(lo_f + margin, hi_f - margin)
            .and_then(|q| Level::from_rational(ctx, q).ok())
            .filter(|lvl| {
                lvl.cmp_level(lo) == Ordering::Greater && lvl.cmp_level(hi) == Ordering::Less
            });
        candidate.unwrap_or_else(|| {
            let half = BigRational::new(BigInt::from(1), BigInt::from(2));
            let ksq = (lo.ksq() + hi.ksq()).scale(&half);
            Level::new(ksq).expect("mean of positive levels is positive")
        })
    }

    pub fn to_f64(&self) -> f64 {
        self.ksq.to_f64().sqrt()
    }
}

/// The projected mediatrix of `tau_z` at a fixed level: the line
/// `A*x1 + B*x2 + C = 0` in the `(x1, x2)`-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MediatrixLine {
    z: QuadElem,
    level: Level,
    a: QuadElem,
    b: QuadElem,
    c: QuadElem,
}

impl MediatrixLine {
    pub fn new(z: &QuadElem, level: &Level) -> Result<MediatrixLine, DirichletError> {
        if z.is_zero() {
            return Err(DirichletError::ZeroTranslation);
        }
        let two = QuadElem::from_integers(z.ctx(), 2, 0);
        let sz = z.conjugate();
        let ksq = level.ksq();
        let a = &two * z;
        let b = &two * &(ksq * &sz);
        let c = &(z * z) + &(ksq * &(&sz * &sz));
        Ok(MediatrixLine {
            z: z.clone(),
            level: level.clone(),
            a,
            b,
            c,
        })
    }

    pub fn z(&self) -> &QuadElem {
        &self.z
    }

    pub fn level(&self) -> &Level {
        &self.level
    }

    pub fn coefficients(&self) -> (&QuadElem, &QuadElem, &QuadElem) {
        (&self.a, &self.b, &self.c)
    }

    /// `A*x1 + B*x2 + C` at an exact point.
    pub fn eval(&self, x1: &QuadElem, x2: &QuadElem) -> QuadElem {
        &(&(&self.a * x1) + &(&self.b * x2)) + &self.c
    }

    pub fn contains(&self, x1: &QuadElem, x2: &QuadElem) -> bool {
        self.eval(x1, x2).is_zero()
    }
}

/// Semimetric on the product of upper half planes, restricted to a pair
/// of points `(x1 + y1 i, x2 + y2 i)` given as `[x1, y1, x2, y2]`.
///
/// Float-only utility for tests and numeric spot checks; the exact core
/// never consumes it.
pub fn delta_distance(p: &[f64; 4], q: &[f64; 4]) -> Result<f64, DirichletError> {
    let [px1, py1, px2, py2] = *p;
    let [qx1, qy1, qx2, qy2] = *q;
    if py1 <= 0.0 || py2 <= 0.0 || qy1 <= 0.0 || qy2 <= 0.0 {
        return Err(DirichletError::NonPositiveImaginary);
    }
    let d1 = (px1 - qx1).powi(2) + (py1 - qy1).powi(2);
    let d2 = (px2 - qx2).powi(2) + (py2 - qy2).powi(2);
    Ok(d1 / (py1 * qy1) + d2 / (py2 * qy2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Parallelogram,
    Hexagon,
}

impl Shape {
    pub fn as_str(&self) -> &'static str {
        match self {
            Shape::Parallelogram => "parallelogram",
            Shape::Hexagon => "hexagon",
        }
    }
}

/// The Dirichlet polygon of a leaf: exact vertices in cyclic order, the
/// canonical-positive translations contributing its sides, and the
/// parallelogram/hexagon classification.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusSlice {
    level: Level,
    vertices: Vec<(QuadElem, QuadElem)>,
    contributing: Vec<QuadElem>,
    shape: Shape,
}

impl TorusSlice {
    pub fn level(&self) -> &Level {
        &self.level
    }

    /// Vertices in counterclockwise cyclic order, starting from the
    /// lexicographically smallest vertex (canonical rotation).
    pub fn vertices(&self) -> &[(QuadElem, QuadElem)] {
        &self.vertices
    }

    /// Canonical-positive `z` whose mediatrices carry a side of
    /// positive length, sorted increasingly under the identity
    /// embedding. A mediatrix meeting the polygon only in a vertex is
    /// not contributing.
    pub fn contributing(&self) -> &[QuadElem] {
        &self.contributing
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Exact squared Euclidean area of the vertex polygon. The area is
    /// a rational multiple of `sqrt(n)`, so its square is rational.
    pub fn area_squared(&self) -> BigRational {
        let ctx = self.level.ctx();
        let mut twice = ctx.zero();
        let m = self.vertices.len();
        for i in 0..m {
            let (x1, y1) = &self.vertices[i];
            let (x2, y2) = &self.vertices[(i + 1) % m];
            twice = &twice + &(&(x1 * y2) - &(x2 * y1));
        }
        let sq = &twice * &twice;
        debug_assert!(sq.b().is_zero(), "squared area must be rational");
        sq.a() / BigRational::from(BigInt::from(4))
    }
}

/// Classification by side count (part of the slice, exposed as an
/// operation for symmetry with the construction).
pub fn classify(slice: &TorusSlice) -> Shape {
    slice.shape()
}

/// Exact squared area of the slice polygon; equals the squared
/// covolume of the lattice `{(z, sigma(z))}`: `4n` for `n != 1 (mod 4)`
/// and `n` for `n == 1 (mod 4)`, independent of the level.
pub fn slice_area_squared(slice: &TorusSlice) -> BigRational {
    slice.area_squared()
}

/// All nonzero `z = a + b*alpha` with `|a|, |b| <= coeff_bound`, kept
/// as canonical-positive representatives (one per `{z, -z}` pair).
pub fn candidate_set(ctx: &FieldCtx, coeff_bound: u64) -> Vec<QuadElem> {
    let bound = coeff_bound as i64;
    let mut out = Vec::new();
    for a in -bound..=bound {
        for b in -bound..=bound {
            if a == 0 && b == 0 {
                continue;
            }
            let z = QuadElem::from_integers(*ctx, a, b);
            if z.sign() == 1 {
                out.push(z);
            }
        }
    }
    out
}

/// Dirichlet torus slice at a level, as the exact intersection of the
/// strips of all candidates with `|a|, |b| <= coeff_bound`.
///
/// For small bounds the grid is walked directly; for large bounds the
/// quadratic form `C(z) = z^2 + k^2 sigma(z)^2` is Lagrange-Gauss
/// reduced first, which confines the search to the few lattice vectors
/// that can cut the cell. Both paths intersect the same candidate set
/// and return identical slices (property-tested).
pub fn dirichlet_slice(
    ctx: &FieldCtx,
    level: &Level,
    coeff_bound: u64,
) -> Result<TorusSlice, DirichletError> {
    if coeff_bound <= 70 {
        slice_from_candidate_grid(ctx, level, coeff_bound)
    } else {
        slice_from_reduced_basis(ctx, level, coeff_bound)
            .unwrap_or_else(|| slice_from_candidate_grid(ctx, level, coeff_bound))
    }
}

/// Recomputes the slice from scratch at a caller-chosen (larger) bound
/// and returns its contributing set; used to certify side lists.
pub fn oracle_contributing(
    ctx: &FieldCtx,
    level: &Level,
    coeff_bound: u64,
) -> Result<Vec<QuadElem>, DirichletError> {
    Ok(dirichlet_slice(ctx, level, coeff_bound)?.contributing)
}

/// Intersection of the strips of an explicitly given side set (used by
/// the tower layer, where the side list is known). The same exact
/// clipping path as [`dirichlet_slice`], without grid enumeration.
pub fn slice_from_sides(level: &Level, sides: &[QuadElem]) -> Result<TorusSlice, DirichletError> {
    let mut clip = ClipState::new(level.clone());
    for z in sides {
        if z.is_zero() {
            return Err(DirichletError::ZeroTranslation);
        }
        clip.add_strip(z)?;
    }
    clip.finish(sides.iter().cloned())
}

// ---------------------------------------------------------------------------
// exact convex clipping
// ---------------------------------------------------------------------------

type Point = (QuadElem, QuadElem);

/// Incremental exact intersection of origin-centered strips.
///
/// The polygon starts as the parallelogram cut out by the first two
/// independent strips and is clipped by each further strip. The origin
/// is strictly interior throughout (`C > 0` for every strip), so the
/// polygon never degenerates.
struct ClipState {
    level: Level,
    // strips seen so far, until two independent ones bound a polygon
    pending: Vec<Strip>,
    polygon: Option<Vec<Point>>,
    // exact squared circumradius bound max(x1^2 + k^2 x2^2) over vertices
    radius_sq: Option<QuadElem>,
    // float view of radius_sq, refreshed on polygon changes only
    radius_f: f64,
}

struct Strip {
    a: QuadElem,
    b: QuadElem,
    c: QuadElem,
}

impl Strip {
    fn from_z(z: &QuadElem, level: &Level) -> Strip {
        let line = MediatrixLine::new(z, level).expect("nonzero z");
        Strip {
            a: line.a,
            b: line.b,
            c: line.c,
        }
    }

    /// `A x1 + B x2 + C` for the `+z` side; the `-z` side is `C - (A x1 + B x2)`.
    fn eval_linear(&self, p: &Point) -> QuadElem {
        &(&self.a * &p.0) + &(&self.b * &p.1)
    }

    fn parallel_to(&self, other: &Strip) -> bool {
        (&(&self.a * &other.b) - &(&self.b * &other.a)).is_zero()
    }
}

impl ClipState {
    fn new(level: Level) -> ClipState {
        ClipState {
            level,
            pending: Vec::new(),
            polygon: None,
            radius_sq: None,
            radius_f: f64::INFINITY,
        }
    }

    /// Weighted norm `x1^2 + k^2 x2^2`; the strip of `z` can only cut
    /// the current polygon when `C(z) <= 4 * max` of this over the
    /// vertices (Cauchy-Schwarz in the leaf metric).
    fn weighted_norm(&self, p: &Point) -> QuadElem {
        let ksq = self.level.ksq();
        &(&p.0 * &p.0) + &(ksq * &(&p.1 * &p.1))
    }

    fn recompute_radius(&mut self) {
        let poly = self.polygon.as_ref().expect("polygon exists");
        let mut max: Option<QuadElem> = None;
        for p in poly {
            let w = self.weighted_norm(p);
            max = Some(match max {
                Some(cur) if cur.cmp_value(&w) != Ordering::Less => cur,
                _ => w,
            });
        }
        self.radius_f = max.as_ref().map(|r| r.to_f64()).unwrap_or(f64::INFINITY);
        self.radius_sq = max;
    }

    /// True if the strip of `z` provably cannot touch the polygon.
    fn skippable(&self, c: &QuadElem) -> bool {
        match &self.radius_sq {
            Some(r) => {
                let four = QuadElem::from_integers(c.ctx(), 4, 0);
                c.cmp_value(&(&four * r)) == Ordering::Greater
            }
            None => false,
        }
    }

    fn add_strip(&mut self, z: &QuadElem) -> Result<(), DirichletError> {
        let strip = Strip::from_z(z, &self.level);
        match &mut self.polygon {
            None => {
                if let Some(first) = self.pending.iter().position(|s| !s.parallel_to(&strip)) {
                    let base = self.pending.swap_remove(first);
                    let poly = initial_parallelogram(&base, &strip);
                    self.polygon = Some(poly);
                    self.recompute_radius();
                    let rest = std::mem::take(&mut self.pending);
                    for s in rest {
                        self.clip_with(&s);
                    }
                } else {
                    self.pending.push(strip);
                }
            }
            Some(_) => {
                if !self.skippable(&strip.c) {
                    self.clip_with(&strip);
                }
            }
        }
        Ok(())
    }

    fn clip_with(&mut self, strip: &Strip) {
        let poly = self.polygon.take().expect("polygon exists");
        let upper = clip_half_plane(poly, strip, 1);
        let lower = clip_half_plane(upper, strip, -1);
        self.polygon = Some(lower);
        self.recompute_radius();
    }

    fn finish(
        self,
        candidates: impl Iterator<Item = QuadElem>,
    ) -> Result<TorusSlice, DirichletError> {
        let level = self.level.clone();
        let poly = self.polygon.ok_or(DirichletError::UnboundedRegion)?;
        let poly = remove_collinear(poly);
        let shape = match poly.len() {
            4 => Shape::Parallelogram,
            6 => Shape::Hexagon,
            m => {
                return Err(DirichletError::InvalidSliceGeometry(format!(
                    "polygon has {m} sides; expected 4 or 6"
                )))
            }
        };
        assert_strictly_convex(&poly)?;
        let contributing = contributing_sides(&level, &poly, candidates)?;
        let vertices = canonical_rotation(poly);
        Ok(TorusSlice {
            level,
            vertices,
            contributing,
            shape,
        })
    }
}

/// Every turn of the cycle must have the same strict orientation.
fn assert_strictly_convex(poly: &[Point]) -> Result<(), DirichletError> {
    let m = poly.len();
    for i in 0..m {
        let a = &poly[i];
        let b = &poly[(i + 1) % m];
        let c = &poly[(i + 2) % m];
        let ux = &b.0 - &a.0;
        let uy = &b.1 - &a.1;
        let vx = &c.0 - &b.0;
        let vy = &c.1 - &b.1;
        let cross = &(&ux * &vy) - &(&uy * &vx);
        if cross.sign() != 1 {
            return Err(DirichletError::InvalidSliceGeometry(
                "slice polygon is not strictly convex".into(),
            ));
        }
    }
    Ok(())
}

/// Clip a convex polygon with the half plane `s*(A x1 + B x2) + C >= 0`
/// (`s = +1` for the `+z` side, `s = -1` for `-z`). Points exactly on
/// the boundary are kept.
///
/// Parallel strips need no special casing: for integral `z` and `q*z`
/// the strip of the multiple is strictly wider (proportional `(A,B,C)`
/// would force `q = q^2`), so clipping by it is a no-op.
fn clip_half_plane(poly: Vec<Point>, strip: &Strip, side: i32) -> Vec<Point> {
    let value = |p: &Point| -> QuadElem {
        let lin = strip.eval_linear(p);
        let lin = if side < 0 { -lin } else { lin };
        &lin + &strip.c
    };
    let m = poly.len();
    let mut out = Vec::with_capacity(m + 1);
    for i in 0..m {
        let cur = &poly[i];
        let next = &poly[(i + 1) % m];
        let vc = value(cur);
        let vn = value(next);
        let sc = vc.sign();
        let sn = vn.sign();
        if sc >= 0 {
            out.push(cur.clone());
        }
        if (sc > 0 && sn < 0) || (sc < 0 && sn > 0) {
            // crossing point: cur + t*(next - cur) with t = vc / (vc - vn)
            let t = vc
                .checked_div(&(&vc - &vn))
                .expect("strict sign change implies vc != vn");
            let x = &cur.0 + &(&t * &(&next.0 - &cur.0));
            let y = &cur.1 + &(&t * &(&next.1 - &cur.1));
            out.push((x, y));
        }
    }
    out
}

/// The parallelogram bounded by two independent strips.
fn initial_parallelogram(s1: &Strip, s2: &Strip) -> Vec<Point> {
    let corner = |sign1: i32, sign2: i32| -> Point {
        // solve s1.a x + s1.b y = -sign1*c1 ; s2.a x + s2.b y = -sign2*c2
        let c1 = if sign1 < 0 { -&s1.c } else { s1.c.clone() };
        let c2 = if sign2 < 0 { -&s2.c } else { s2.c.clone() };
        let det = &(&s1.a * &s2.b) - &(&s1.b * &s2.a);
        let x = &(&(-&c1) * &s2.b) - &(&(-&c2) * &s1.b);
        let y = &(&s1.a * &(-&c2)) - &(&s2.a * &(-&c1));
        (
            x.checked_div(&det).expect("independent strips"),
            y.checked_div(&det).expect("independent strips"),
        )
    };
    // cyclic order around the origin: (+,+), (-,+), (-,-), (+,-)
    let poly = vec![corner(1, 1), corner(-1, 1), corner(-1, -1), corner(1, -1)];
    orient_ccw(poly)
}

fn orient_ccw(mut poly: Vec<Point>) -> Vec<Point> {
    if polygon_orientation(&poly) == Ordering::Less {
        poly.reverse();
    }
    poly
}

fn polygon_orientation(poly: &[Point]) -> Ordering {
    let ctx = poly[0].0.ctx();
    let mut twice = ctx.zero();
    let m = poly.len();
    for i in 0..m {
        let (x1, y1) = &poly[i];
        let (x2, y2) = &poly[(i + 1) % m];
        twice = &twice + &(&(x1 * y2) - &(x2 * y1));
    }
    match twice.sign() {
        1 => Ordering::Greater,
        -1 => Ordering::Less,
        _ => Ordering::Equal,
    }
}

/// Remove duplicate consecutive vertices and collinear middle vertices.
fn remove_collinear(poly: Vec<Point>) -> Vec<Point> {
    let mut dedup: Vec<Point> = Vec::with_capacity(poly.len());
    for p in poly {
        if dedup.last() != Some(&p) {
            dedup.push(p);
        }
    }
    while dedup.len() > 1 && dedup.first() == dedup.last() {
        dedup.pop();
    }
    let m = dedup.len();
    if m < 3 {
        return dedup;
    }
    let mut out: Vec<Point> = Vec::with_capacity(m);
    for i in 0..m {
        let prev = &dedup[(i + m - 1) % m];
        let cur = &dedup[i];
        let next = &dedup[(i + 1) % m];
        let ux = &cur.0 - &prev.0;
        let uy = &cur.1 - &prev.1;
        let vx = &next.0 - &cur.0;
        let vy = &next.1 - &cur.1;
        let cross = &(&ux * &vy) - &(&uy * &vx);
        if !cross.is_zero() {
            out.push(cur.clone());
        }
    }
    out
}

/// Rotate the cyclic vertex list to start at the lexicographically
/// smallest vertex (by exact value), keeping orientation. Makes the
/// output independent of clipping order.
fn canonical_rotation(poly: Vec<Point>) -> Vec<Point> {
    if poly.is_empty() {
        return poly;
    }
    let mut best = 0usize;
    for i in 1..poly.len() {
        let ord = poly[i]
            .0
            .cmp_value(&poly[best].0)
            .then_with(|| poly[i].1.cmp_value(&poly[best].1));
        if ord == Ordering::Less {
            best = i;
        }
    }
    let mut out = poly;
    out.rotate_left(best);
    out
}

/// Match each polygon edge to the candidate whose mediatrix contains
/// it; sides require positive length (two distinct on-line vertices).
fn contributing_sides(
    level: &Level,
    poly: &[Point],
    candidates: impl Iterator<Item = QuadElem>,
) -> Result<Vec<QuadElem>, DirichletError> {
    let m = poly.len();
    let mut matched: Vec<Option<QuadElem>> = vec![None; m];
    let mut remaining = m;
    for z in candidates {
        if remaining == 0 {
            break;
        }
        let line = MediatrixLine::new(&z, level).expect("nonzero candidate");
        for i in 0..m {
            if matched[i].is_some() {
                continue;
            }
            let p = &poly[i];
            let q = &poly[(i + 1) % m];
            let vp = line.eval(&p.0, &p.1);
            let vq = line.eval(&q.0, &q.1);
            let on_pos = vp.is_zero() && vq.is_zero();
            let on_neg = {
                // the -z mediatrix: C - (A x1 + B x2) = 0
                let wp = &line.c - &line.eval_linear_pt(p);
                let wq = &line.c - &line.eval_linear_pt(q);
                wp.is_zero() && wq.is_zero()
            };
            if on_pos || on_neg {
                matched[i] = Some(z.canonical_positive());
                remaining -= 1;
            }
        }
    }
    if remaining > 0 {
        return Err(DirichletError::InvalidSliceGeometry(
            "polygon edge not matched to any candidate mediatrix".into(),
        ));
    }
    let mut out: Vec<QuadElem> = matched.into_iter().map(|z| z.unwrap()).collect();
    out.sort_by(|a, b| a.cmp_value(b));
    out.dedup();
    Ok(out)
}

impl MediatrixLine {
    fn eval_linear_pt(&self, p: &Point) -> QuadElem {
        &(&self.a * &p.0) + &(&self.b * &p.1)
    }
}

// ---------------------------------------------------------------------------
// grid enumeration with a conservative float prefilter
// ---------------------------------------------------------------------------

/// Full grid slice. Candidates are streamed as integer pairs; a
/// conservative float bound discards the overwhelming majority before
/// any exact arithmetic happens, and a small exact-nearest seed keeps
/// the circumradius tight from the start. Neither shortcut affects the
/// result: intersection is order-independent and each skip is justified
/// by an exact or safely margined comparison.
fn slice_from_candidate_grid(
    ctx: &FieldCtx,
    level: &Level,
    coeff_bound: u64,
) -> Result<TorusSlice, DirichletError> {
    if coeff_bound == 0 {
        return Err(DirichletError::UnboundedRegion);
    }
    let bound = i64::try_from(coeff_bound)
        .map_err(|_| DirichletError::InvalidSliceGeometry("bound exceeds i64".into()))?;

    let alpha = ctx.alpha().to_f64();
    let alpha_conj = ctx.alpha().conjugate().to_f64();
    let ksq_f = level.ksq().to_f64();

    // approximate strip constant C = z^2 + k^2 sigma(z)^2
    let approx_c = |a: i64, b: i64| -> f64 {
        let z = a as f64 + b as f64 * alpha;
        let s = a as f64 + b as f64 * alpha_conj;
        z * z + ksq_f * s * s
    };
    // canonical-positive filter; safe in floats since |a + b*alpha| >=
    // 1/|sigma(z)| is far above f64 error at these magnitudes, with an
    // exact fallback near zero.
    let is_canonical = |a: i64, b: i64| -> bool {
        let v = a as f64 + b as f64 * alpha;
        if v.abs() < 1e-6 {
            return QuadElem::from_integers(*ctx, a, b).sign() == 1;
        }
        v > 0.0
    };

    let mut grid: Vec<(f64, i64, i64)> = Vec::new();
    for a in -bound..=bound {
        for b in -bound..=bound {
            if (a, b) != (0, 0) && is_canonical(a, b) {
                grid.push((approx_c(a, b), a, b));
            }
        }
    }
    if grid.len() < 2 {
        return Err(DirichletError::UnboundedRegion);
    }

    // seed with the nearest strips so the radius bound is tight early
    let seed = grid.len().min(48);
    let ord = |x: &(f64, i64, i64), y: &(f64, i64, i64)| {
        x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
    };
    if seed < grid.len() {
        grid.select_nth_unstable_by(seed - 1, ord);
    }
    grid[..seed].sort_by(ord);

    let mut clip = ClipState::new(level.clone());
    for &(_, a, b) in &grid[..seed] {
        clip.add_strip(&QuadElem::from_integers(*ctx, a, b))?;
    }
    if clip.polygon.is_none() {
        return Err(DirichletError::UnboundedRegion);
    }

    // conservative float threshold: skip when C(z) clearly exceeds
    // 4 * radius^2; anything within the margin is decided exactly.
    for &(c_f, a, b) in &grid[seed..] {
        if c_f > 4.0 * clip.radius_f * (1.0 + 1e-9) + 1e-12 {
            continue;
        }
        clip.add_strip(&QuadElem::from_integers(*ctx, a, b))?;
    }

    // side matching walks the sorted seed first, then the rest; it
    // stops as soon as every edge is matched
    let candidates = grid
        .into_iter()
        .map(|(_, a, b)| QuadElem::from_integers(*ctx, a, b));
    clip.finish(candidates)
}

// ---------------------------------------------------------------------------
// reduced-basis enumeration for large coefficient bounds
// ---------------------------------------------------------------------------

/// `<u, v> = u v + k^2 sigma(u) sigma(v)`, the bilinear form whose
/// quadratic form is the strip constant `C`.
fn weighted_inner(level: &Level, u: &QuadElem, v: &QuadElem) -> QuadElem {
    let ksq = level.ksq();
    &(u * v) + &(ksq * &(&u.conjugate() * &v.conjugate()))
}

/// Nearest integer to an exact field element, corrected exactly.
fn round_to_integer(r: &QuadElem) -> BigInt {
    use num_traits::FromPrimitive;
    let mut t = BigInt::from_f64(r.to_f64().round()).unwrap_or_else(BigInt::zero);
    let ctx = r.ctx();
    let half = QuadElem::new(
        ctx,
        BigRational::new(BigInt::from(1), BigInt::from(2)),
        BigRational::zero(),
    );
    for _ in 0..1024 {
        let diff = r - &QuadElem::from_bigints(ctx, t.clone(), BigInt::zero());
        if (&diff - &half).sign() > 0 {
            t += 1;
        } else if (&diff + &half).sign() < 0 {
            t -= 1;
        } else {
            return t;
        }
    }
    t
}

/// Lagrange-Gauss reduction of `Z^2` under the level form. Returns the
/// reduced basis as integer coordinate pairs with `C(v1) <= C(v2)` and
/// `|2 <v1,v2>| <= C(v1)`.
fn gauss_reduced_basis(
    ctx: &FieldCtx,
    level: &Level,
) -> Option<((BigInt, BigInt), (BigInt, BigInt))> {
    let elem = |v: &(BigInt, BigInt)| QuadElem::from_bigints(*ctx, v.0.clone(), v.1.clone());
    let mut v1 = (BigInt::from(1), BigInt::from(0));
    let mut v2 = (BigInt::from(0), BigInt::from(1));
    let mut c1 = weighted_inner(level, &elem(&v1), &elem(&v1));
    let mut c2 = weighted_inner(level, &elem(&v2), &elem(&v2));
    if c1.cmp_value(&c2) == Ordering::Greater {
        std::mem::swap(&mut v1, &mut v2);
        std::mem::swap(&mut c1, &mut c2);
    }
    for _ in 0..10_000 {
        let g = weighted_inner(level, &elem(&v1), &elem(&v2));
        let t = round_to_integer(&g.checked_div(&c1).ok()?);
        if !t.is_zero() {
            v2 = (&v2.0 - &t * &v1.0, &v2.1 - &t * &v1.1);
            c2 = weighted_inner(level, &elem(&v2), &elem(&v2));
        }
        if c2.cmp_value(&c1) != Ordering::Less {
            return Some((v1, v2));
        }
        std::mem::swap(&mut v1, &mut v2);
        std::mem::swap(&mut c1, &mut c2);
    }
    None
}

/// Slice path for large bounds: clip the two reduced-basis strips, then
/// enumerate only the lattice vectors `s*v1 + t*v2` that can still cut
/// the polygon (`C <= 4 * radius^2`, which forces `s^2 + t^2` below a
/// small bound in the reduced coordinates). Returns `None` when the
/// reduced vectors fall outside the candidate box, in which case the
/// caller walks the grid instead.
fn slice_from_reduced_basis(
    ctx: &FieldCtx,
    level: &Level,
    coeff_bound: u64,
) -> Option<Result<TorusSlice, DirichletError>> {
    let bound = BigInt::from(coeff_bound);
    let (v1, v2) = gauss_reduced_basis(ctx, level)?;
    let in_box = |v: &(BigInt, BigInt)| v.0.abs() <= bound && v.1.abs() <= bound;
    if !in_box(&v1) || !in_box(&v2) {
        return None;
    }

    let z1 = QuadElem::from_bigints(*ctx, v1.0.clone(), v1.1.clone());
    let z2 = QuadElem::from_bigints(*ctx, v2.0.clone(), v2.1.clone());
    let mut clip = ClipState::new(level.clone());
    clip.add_strip(&z1).ok()?;
    clip.add_strip(&z2).ok()?;
    let threshold = {
        let r = clip.radius_sq.as_ref()?;
        let four = QuadElem::from_integers(*ctx, 4, 0);
        &four * r
    };

    let c1 = weighted_inner(level, &z1, &z1);
    let c1_f = c1.to_f64();
    let t_f = threshold.to_f64();
    if !(c1_f.is_finite() && t_f.is_finite()) || c1_f <= 0.0 {
        return None;
    }
    // C(s v1 + t v2) >= C(v1) (s^2 + t^2) / 2 for a reduced basis
    let s_max_f = (2.0 * t_f / c1_f).sqrt() * 1.01 + 2.0;
    if !(s_max_f.is_finite() && s_max_f < 100_000.0) {
        return None;
    }
    let s_max = s_max_f as i64;

    let mut kept: Vec<(QuadElem, QuadElem)> = Vec::new(); // (C, z)
    for s in -s_max..=s_max {
        for t in -s_max..=s_max {
            if (s, t) == (0, 0) {
                continue;
            }
            let a = &v1.0 * s + &v2.0 * t;
            let b = &v1.1 * s + &v2.1 * t;
            if a.abs() > bound || b.abs() > bound {
                continue;
            }
            let z = QuadElem::from_bigints(*ctx, a, b);
            if z.sign() != 1 {
                continue;
            }
            let c = weighted_inner(level, &z, &z);
            if c.cmp_value(&threshold) == Ordering::Greater {
                continue;
            }
            kept.push((c, z));
        }
    }
    kept.sort_by(|x, y| {
        x.0.cmp_value(&y.0)
            .then_with(|| x.1.a().cmp(y.1.a()).then_with(|| x.1.b().cmp(y.1.b())))
    });
    for (_, z) in &kept {
        if let Err(e) = clip.add_strip(z) {
            return Some(Err(e));
        }
    }
    Some(clip.finish(kept.into_iter().map(|(_, z)| z)))
}
