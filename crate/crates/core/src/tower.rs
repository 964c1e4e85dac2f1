//! The cusp-section tower `T_n`.
//!
//! The tower is the union of torus slices over levels `k` in
//! `[1, eps^4]`. Its boundary sides come from a short list `L` of
//! translations built by a purely arithmetic walk:
//!
//! 1. `z_1 = 1`, `z_1' = alpha`;
//! 2. `z_m = eps^2 z_1`, `z_m' = eps^2 z_1'`;
//! 3. while `{z_i, z_i'} != {z_m, z_m'}`: `z_{i+1} = z_i + z_i'` and
//!    `z_{i+1}'` is the element of `{z_i, z_i'}` with smaller
//!    `|sigma|` (decided exactly by comparing `sigma^2`);
//! 4. `L` collects all `+-z_i, +-z_i'` (plus `+-sigma(z_1')` when
//!    `n == 1 (mod 4)`), deduplicated.
//!
//! Each traced pair bounds a parallelogram slice at the exact level
//! `k^2 = -z z' / sigma(z z')`; between consecutive parallelogram
//! levels the slice is a hexagon with a constant side set. The slices
//! at `k = 1` and `k = eps^4` are glued by the Anosov diffeomorphism
//! `diag(eps, eps^-1)`, which transports the side of `z` to the side
//! of `eps^2 z`.

use std::cmp::Ordering;

use num_rational::BigRational;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::dirichlet::{
    dirichlet_slice, slice_from_sides, DirichletError, Level, Shape, TorusSlice,
};
use crate::quadfield::{fundamental_unit, AlphaKind, FieldCtx, QuadElem, QuadError};

/// Iteration cap for the side-list walk; a run that hits it signals a
/// bug or a bad unit rather than a long field.
pub const DEFAULT_ITERATION_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum TowerError {
    #[error("side-list iteration exceeded {cap} steps without closing")]
    NonTermination { cap: usize },
    #[error("parallelogram level out of range: {0}")]
    LevelOutOfRange(String),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Field(#[from] QuadError),
}

/// A traced pair `(z_i, z_i')`.
#[derive(Debug, Clone, PartialEq)]
pub struct SidePair {
    pub z: QuadElem,
    pub z_prime: QuadElem,
}

impl SidePair {
    /// The side entering just above this pair's parallelogram:
    /// `z + z'`.
    pub fn entering(&self) -> QuadElem {
        &self.z + &self.z_prime
    }

    /// The side vanishing at this pair's parallelogram:
    /// `+-(z - z')`, stored canonically positive.
    pub fn vanishing(&self) -> QuadElem {
        (&self.z - &self.z_prime).canonical_positive()
    }

    pub fn sorted(&self) -> Vec<QuadElem> {
        let mut v = vec![self.z.clone(), self.z_prime.clone()];
        v.sort_by(|a, b| a.cmp_value(b));
        v
    }

    pub fn contains(&self, z: &QuadElem) -> bool {
        self.z == *z || self.z_prime == *z
    }
}

/// Output of the side-list algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct SideList {
    /// Deduplicated side representatives in first-occurrence order
    /// (each stands for the pair `+-z`).
    pub list: Vec<QuadElem>,
    /// The pairs `(z_i, z_i')` for `i = 1..m`, duplicates retained.
    pub trace: Vec<SidePair>,
    pub epsilon: QuadElem,
}

impl SideList {
    pub fn m(&self) -> usize {
        self.trace.len()
    }
}

pub fn side_list(ctx: &FieldCtx) -> Result<SideList, TowerError> {
    side_list_with_cap(ctx, DEFAULT_ITERATION_CAP)
}

pub fn side_list_with_cap(ctx: &FieldCtx, cap: usize) -> Result<SideList, TowerError> {
    let epsilon = fundamental_unit(ctx)?;
    let eps_sq = epsilon.pow(2);
    let z1 = ctx.one();
    let z1p = ctx.alpha(); // sqrt(n), or (1+sqrt(n))/2 when n == 1 mod 4
    let zm = &eps_sq * &z1;
    let zmp = &eps_sq * &z1p;

    let mut trace = vec![SidePair {
        z: z1.clone(),
        z_prime: z1p.clone(),
    }];
    let (mut p, mut q) = (z1, z1p.clone());
    while !unordered_eq(&p, &q, &zm, &zmp) {
        if trace.len() >= cap {
            return Err(TowerError::NonTermination { cap });
        }
        let next = &p + &q;
        let keep = smaller_under_sigma(&p, &q)?;
        p = next;
        q = keep;
        trace.push(SidePair {
            z: p.clone(),
            z_prime: q.clone(),
        });
    }

    let mut list: Vec<QuadElem> = Vec::new();
    for pair in &trace {
        for z in [&pair.z, &pair.z_prime] {
            if !list.contains(z) {
                list.push(z.clone());
            }
        }
    }
    if ctx.alpha_kind() == AlphaKind::HalfPlusSqrt {
        let extra = z1p.conjugate().canonical_positive();
        if !list.contains(&extra) {
            list.push(extra);
        }
    }
    Ok(SideList {
        list,
        trace,
        epsilon,
    })
}

fn unordered_eq(a1: &QuadElem, a2: &QuadElem, b1: &QuadElem, b2: &QuadElem) -> bool {
    (a1 == b1 && a2 == b2) || (a1 == b2 && a2 == b1)
}

/// The element of `{p, q}` with smaller `|sigma|`, compared exactly via
/// `sigma(p)^2 - sigma(q)^2`. A tie would force `sigma(p) = +-sigma(q)`,
/// impossible for independent integral elements, so it is an error.
fn smaller_under_sigma(p: &QuadElem, q: &QuadElem) -> Result<QuadElem, TowerError> {
    let sp = p.conjugate();
    let sq = q.conjugate();
    let diff = &(&sp * &sp) - &(&sq * &sq);
    match diff.sign() {
        -1 => Ok(p.clone()),
        1 => Ok(q.clone()),
        _ => Err(TowerError::Internal(format!(
            "|sigma| tie between {} and {}",
            p.display_sqrt(),
            q.display_sqrt()
        ))),
    }
}

/// A parallelogram cross-section event at `k^2 = -z z'/sigma(z z')`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelogramEvent {
    /// 1-based index `i` of the traced pair.
    pub index: usize,
    pub level: Level,
    pub pair: SidePair,
    /// False only for the `i = m` event when `n == 1 (mod 4)`, whose
    /// parallelogram lies above `eps^4`.
    pub in_range: bool,
}

/// Exact parallelogram level of a pair: `k^2 = -(z z')/sigma(z z')`.
pub fn pair_level(pair: &SidePair) -> Result<Level, TowerError> {
    let w = &pair.z * &pair.z_prime;
    let ksq = (-&w).checked_div(&w.conjugate())?;
    Ok(Level::new(ksq)?)
}

/// All parallelogram events of the tower, sorted by level: the traced
/// pairs `i < m` always, plus `i = m` exactly when `n != 1 (mod 4)`.
/// The out-of-range `i = m` event for `n == 1 (mod 4)` is exposed via
/// [`bifurcation_table`], not here.
pub fn parallelogram_levels(ctx: &FieldCtx) -> Result<Vec<ParallelogramEvent>, TowerError> {
    let sides = side_list(ctx)?;
    Ok(events_from(ctx, &sides)?.0)
}

fn events_from(
    ctx: &FieldCtx,
    sides: &SideList,
) -> Result<(Vec<ParallelogramEvent>, Option<ParallelogramEvent>), TowerError> {
    let m = sides.m();
    let eps8 = Level::new(sides.epsilon.pow(8))?;
    let one = Level::one(*ctx);
    let half_basis = ctx.alpha_kind() == AlphaKind::HalfPlusSqrt;

    let mut events = Vec::with_capacity(m);
    let mut out_of_range = None;
    for (j, pair) in sides.trace.iter().enumerate() {
        let index = j + 1;
        let level = pair_level(pair)?;
        let is_last = index == m;
        if is_last && half_basis {
            // crosses the k-axis above the tower
            if level.cmp_level(&eps8) != Ordering::Greater {
                return Err(TowerError::LevelOutOfRange(format!(
                    "i = m event at k^2 = {} should lie above eps^8",
                    level.ksq().display_sqrt()
                )));
            }
            out_of_range = Some(ParallelogramEvent {
                index,
                level,
                pair: pair.clone(),
                in_range: false,
            });
            continue;
        }
        if level.cmp_level(&one) == Ordering::Less || level.cmp_level(&eps8) == Ordering::Greater {
            return Err(TowerError::LevelOutOfRange(format!(
                "event i = {index} at k^2 = {} outside [1, eps^8]",
                level.ksq().display_sqrt()
            )));
        }
        events.push(ParallelogramEvent {
            index,
            level,
            pair: pair.clone(),
            in_range: true,
        });
    }

    for w in events.windows(2) {
        if w[0].level.cmp_level(&w[1].level) != Ordering::Less {
            return Err(TowerError::Internal(
                "event levels are not strictly increasing".into(),
            ));
        }
    }
    if let Some(first) = events.first() {
        let at_one = first.level.cmp_level(&one) == Ordering::Equal;
        if at_one == half_basis {
            return Err(TowerError::Internal(
                "first event at level 1 exactly when n != 1 (mod 4)".into(),
            ));
        }
    }
    if !half_basis {
        let last = events
            .last()
            .ok_or_else(|| TowerError::Internal("side-list walk produced no events".into()))?;
        if last.level.cmp_level(&eps8) != Ordering::Equal {
            return Err(TowerError::Internal(
                "i = m event must sit at k = eps^4 when n != 1 (mod 4)".into(),
            ));
        }
    }
    Ok((events, out_of_range))
}

/// A side surface `+-z` together with the level interval on which it
/// contributes. The side has positive length strictly between the two
/// endpoints, and also at an endpoint that is a tower boundary
/// (`k = 1` or `k = eps^4`); at an interior endpoint it degenerates to
/// a bifurcation vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SideSurface {
    pub z: QuadElem,
    pub valid_from: Level,
    pub valid_to: Level,
}

/// Side pairings of the tower boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum GluingMap {
    /// `tau_z` glues the side of `z` to the side of `-z` by
    /// `(x1, x2) -> (x1 + z, x2 + sigma(z))`.
    Translation {
        z: QuadElem,
        matrix: [[QuadElem; 2]; 2],
    },
    /// `eta_1 = diag(eps, eps^-1)` glues the level-1 slice to the
    /// level-`eps^4` slice.
    Anosov {
        epsilon: QuadElem,
        matrix: [[QuadElem; 2]; 2],
    },
}

/// The Anosov gluing map `eta_1` of the field.
pub fn anosov(ctx: &FieldCtx) -> Result<GluingMap, TowerError> {
    let epsilon = fundamental_unit(ctx)?;
    Ok(anosov_from_unit(ctx, &epsilon)?)
}

fn anosov_from_unit(ctx: &FieldCtx, epsilon: &QuadElem) -> Result<GluingMap, QuadError> {
    let inv = epsilon.inverse()?;
    Ok(GluingMap::Anosov {
        epsilon: epsilon.clone(),
        matrix: [[epsilon.clone(), ctx.zero()], [ctx.zero(), inv]],
    })
}

fn translation_map(ctx: &FieldCtx, z: &QuadElem) -> GluingMap {
    GluingMap::Translation {
        z: z.clone(),
        matrix: [[ctx.one(), z.clone()], [ctx.zero(), ctx.one()]],
    }
}

/// Image of the side of `z` under `eta_1`: the side of `eps^2 z` (the
/// mediatrix at level `k` maps to the mediatrix of `eps^2 z` at level
/// `eps^4 k`). Requires `z != 0`.
pub fn anosov_side_transport(ctx: &FieldCtx, z: &QuadElem) -> Result<QuadElem, TowerError> {
    debug_assert!(!z.is_zero());
    let epsilon = fundamental_unit(ctx)?;
    Ok(&epsilon.pow(2) * z)
}

/// Action of `eta_1` on levels: `k^2 -> eps^4 k^2`.
pub fn anosov_level_map(epsilon: &QuadElem, level: &Level) -> Result<Level, TowerError> {
    Ok(Level::new(&epsilon.pow(4) * level.ksq())?)
}

/// A maximal level interval on which the slice side set is constant
/// (an open hexagonal band between consecutive events, closed at a
/// tower boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct TowerInterval {
    pub lo: Level,
    pub hi: Level,
    /// The three side representatives of the hexagons inside, sorted.
    pub sides: Vec<QuadElem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Two corner curves from below meet and continue as one.
    Merge,
    /// One corner curve from below splits into two.
    Split,
    /// Endpoint on a tower boundary slice (`k = 1` or `k = eps^4`).
    Boundary,
}

impl NodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::Merge => "merge",
            NodeKind::Split => "split",
            NodeKind::Boundary => "boundary",
        }
    }
}

/// A bifurcation vertex: a polygon corner at an event or boundary
/// level, with its exact position in the `(x1, x2)`-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub level: Level,
    pub kind: NodeKind,
    pub position: (QuadElem, QuadElem),
}

/// One signed mediatrix line `s * z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedSide {
    pub z: QuadElem,
    pub positive: bool,
}

/// A corner curve of the tower boundary: the intersection of two side
/// surfaces, swept over one level interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub sides: [SignedSide; 2],
}

/// The edge graph of the tower boundary. Nodes at interior events are
/// 3-valent; nodes on the two boundary slices are curve endpoints
/// (identified by the Anosov map in the closed manifold).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BifurcationGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl BifurcationGraph {
    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|e| e.from == node || e.to == node)
            .count()
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind != NodeKind::Boundary)
            .map(|(i, _)| i)
    }
}

/// The assembled tower data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub ctx: FieldCtx,
    pub epsilon: QuadElem,
    /// Deduplicated side list `L` in first-occurrence order.
    pub side_list: Vec<QuadElem>,
    pub trace: Vec<SidePair>,
    pub sides: Vec<SideSurface>,
    /// In-range parallelogram events, strictly increasing in level.
    pub events: Vec<ParallelogramEvent>,
    /// For `n == 1 (mod 4)`: the informational `i = m` event above
    /// `eps^4`, excluded from the graph.
    pub out_of_range_event: Option<ParallelogramEvent>,
    /// Contributing sets of the boundary slices at `k = 1` and
    /// `k = eps^4`, sorted.
    pub bottom_sides: Vec<QuadElem>,
    pub top_sides: Vec<QuadElem>,
    pub boundary_shapes: (Shape, Shape),
    pub intervals: Vec<TowerInterval>,
    pub gluings: Vec<GluingMap>,
    pub graph: BifurcationGraph,
}

impl Tower {
    pub fn bottom_level(&self) -> Level {
        Level::one(self.ctx)
    }

    pub fn top_level(&self) -> Level {
        Level::new(self.epsilon.pow(8)).expect("eps^8 > 0")
    }

    /// The side set the tower predicts at a level in `[1, eps^4]`:
    /// the event pair at event levels, the hexagon triple strictly
    /// inside an interval, and the boundary sets at the two ends.
    pub fn predicted_contributing(&self, level: &Level) -> Option<Vec<QuadElem>> {
        let bottom = self.bottom_level();
        let top = self.top_level();
        if level.cmp_level(&bottom) == Ordering::Less || level.cmp_level(&top) == Ordering::Greater
        {
            return None;
        }
        if level.cmp_level(&bottom) == Ordering::Equal {
            return Some(self.bottom_sides.clone());
        }
        if level.cmp_level(&top) == Ordering::Equal {
            return Some(self.top_sides.clone());
        }
        for event in &self.events {
            if level.cmp_level(&event.level) == Ordering::Equal {
                return Some(event.pair.sorted());
            }
        }
        for interval in &self.intervals {
            if level.cmp_level(&interval.lo) == Ordering::Greater
                && level.cmp_level(&interval.hi) == Ordering::Less
            {
                return Some(interval.sides.clone());
            }
        }
        None
    }

    /// Shape predicted at a level: parallelogram exactly at in-range
    /// events (and at the boundaries when `n != 1 (mod 4)`), hexagon
    /// everywhere else inside the tower.
    pub fn predicted_shape(&self, level: &Level) -> Option<Shape> {
        let bottom = self.bottom_level();
        let top = self.top_level();
        if level.cmp_level(&bottom) == Ordering::Less || level.cmp_level(&top) == Ordering::Greater
        {
            return None;
        }
        for event in &self.events {
            if level.cmp_level(&event.level) == Ordering::Equal {
                return Some(Shape::Parallelogram);
            }
        }
        Some(Shape::Hexagon)
    }
}

fn sorted_set(elems: &[QuadElem]) -> Vec<QuadElem> {
    let mut v = elems.to_vec();
    v.sort_by(|a, b| a.cmp_value(b));
    v.dedup();
    v
}

/// Recommended candidate coefficient bound: twice the largest
/// `(1, alpha)` coordinate over the side list, plus two. The side list
/// never exceeds `eps^2 * {z_1, z_1'}`, so this covers every predicted
/// side with margin; the saturation property test backs it empirically.
pub fn default_coeff_bound(ctx: &FieldCtx) -> Result<u64, TowerError> {
    let sides = side_list(ctx)?;
    let mut max = BigRational::from_integer(1.into());
    for z in &sides.list {
        use num_traits::Signed;
        max = max.max(z.a().abs()).max(z.b().abs());
    }
    let max = max
        .to_integer()
        .to_u64()
        .ok_or_else(|| TowerError::Internal("side coefficients exceed u64".into()))?;
    Ok(2 * max + 2)
}

/// Builds the complete tower description.
pub fn bifurcation_table(ctx: &FieldCtx) -> Result<Tower, TowerError> {
    bifurcation_table_with_cap(ctx, DEFAULT_ITERATION_CAP)
}

pub fn bifurcation_table_with_cap(ctx: &FieldCtx, cap: usize) -> Result<Tower, TowerError> {
    let sides = side_list_with_cap(ctx, cap)?;
    let (events, out_of_range_event) = events_from(ctx, &sides)?;
    let half_basis = ctx.alpha_kind() == AlphaKind::HalfPlusSqrt;
    let epsilon = sides.epsilon.clone();
    let bottom = Level::one(*ctx);
    let top = Level::new(epsilon.pow(8))?;

    let first_pair = &sides.trace[0];
    let last_pair = sides.trace.last().expect("trace nonempty");

    let (bottom_sides, top_sides, boundary_shapes) = if half_basis {
        let bottom_set = sorted_set(&[
            first_pair.z.clone(),
            first_pair.z_prime.clone(),
            first_pair.vanishing(),
        ]);
        // at eps^4 the would-be i = m parallelogram has not yet formed
        let top_set = sorted_set(&[
            last_pair.z.clone(),
            last_pair.z_prime.clone(),
            last_pair.vanishing(),
        ]);
        (bottom_set, top_set, (Shape::Hexagon, Shape::Hexagon))
    } else {
        (
            first_pair.sorted(),
            last_pair.sorted(),
            (Shape::Parallelogram, Shape::Parallelogram),
        )
    };

    // hexagonal bands between consecutive stations
    let mut intervals = Vec::new();
    if half_basis {
        intervals.push(TowerInterval {
            lo: bottom.clone(),
            hi: events[0].level.clone(),
            sides: bottom_sides.clone(),
        });
    }
    for j in 0..events.len().saturating_sub(1) {
        let pair = &events[j].pair;
        intervals.push(TowerInterval {
            lo: events[j].level.clone(),
            hi: events[j + 1].level.clone(),
            sides: sorted_set(&[pair.z.clone(), pair.z_prime.clone(), pair.entering()]),
        });
    }
    if half_basis {
        let pair = &events[events.len() - 1].pair;
        intervals.push(TowerInterval {
            lo: events[events.len() - 1].level.clone(),
            hi: top.clone(),
            sides: sorted_set(&[pair.z.clone(), pair.z_prime.clone(), pair.entering()]),
        });
    }
    // each band's set below an event matches {pair, vanishing} of that event
    #[cfg(debug_assertions)]
    for (j, event) in events
        .iter()
        .enumerate()
        .skip(if half_basis { 0 } else { 1 })
    {
        let idx = if half_basis { j } else { j - 1 };
        let below = sorted_set(&[
            event.pair.z.clone(),
            event.pair.z_prime.clone(),
            event.pair.vanishing(),
        ]);
        debug_assert_eq!(intervals[idx].sides, below, "band/event mismatch");
    }

    let side_surfaces = side_surfaces(&sides, &events, &bottom, &top)?;

    let mut gluings: Vec<GluingMap> = sides.list.iter().map(|z| translation_map(ctx, z)).collect();
    gluings.push(anosov_from_unit(ctx, &epsilon)?);

    let graph = build_graph(ctx, &events, &intervals, half_basis, &bottom, &top)?;

    Ok(Tower {
        ctx: *ctx,
        epsilon,
        side_list: sides.list,
        trace: sides.trace,
        sides: side_surfaces,
        events,
        out_of_range_event,
        bottom_sides,
        top_sides,
        boundary_shapes,
        intervals,
        gluings,
        graph,
    })
}

/// Validity interval per unique side: a side enters when it is created
/// by the walk (or at the bottom boundary) and exits at the event where
/// it is the vanishing pair difference (or at the top boundary).
fn side_surfaces(
    sides: &SideList,
    events: &[ParallelogramEvent],
    bottom: &Level,
    top: &Level,
) -> Result<Vec<SideSurface>, TowerError> {
    let mut out = Vec::new();
    for z in &sides.list {
        let enter = if sides.trace[0].contains(z) || *z == sides.trace[0].vanishing() {
            bottom.clone()
        } else {
            let creating = events
                .iter()
                .find(|e| e.pair.entering() == *z)
                .ok_or_else(|| {
                    TowerError::Internal(format!("side {} has no creating event", z.display_sqrt()))
                })?;
            creating.level.clone()
        };
        let exit = events
            .iter()
            .find(|e| e.pair.vanishing() == *z && e.level.cmp_level(&enter) == Ordering::Greater)
            .map(|e| e.level.clone())
            .unwrap_or_else(|| top.clone());
        if enter.cmp_level(&exit) != Ordering::Less {
            return Err(TowerError::Internal(format!(
                "side {} has empty validity interval",
                z.display_sqrt()
            )));
        }
        out.push(SideSurface {
            z: z.clone(),
            valid_from: enter,
            valid_to: exit,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// bifurcation graph
// ---------------------------------------------------------------------------

/// Vertex indices of a polygon lying on each signed mediatrix of a set
/// of sides, computed with one line construction per side.
struct Incidence {
    entries: Vec<(QuadElem, Vec<usize>, Vec<usize>)>, // (z, on +z, on -z)
}

impl Incidence {
    fn build(level: &Level, poly: &[(QuadElem, QuadElem)], sides: &[QuadElem]) -> Incidence {
        let mut entries = Vec::with_capacity(sides.len());
        for z in sides {
            let line = crate::dirichlet::MediatrixLine::new(z, level).expect("nonzero side");
            let (a, b, c) = line.coefficients();
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (i, pt) in poly.iter().enumerate() {
                let lin = &(a * &pt.0) + &(b * &pt.1);
                if (&lin + c).is_zero() {
                    pos.push(i);
                }
                if (c - &lin).is_zero() {
                    neg.push(i);
                }
            }
            entries.push((z.clone(), pos, neg));
        }
        Incidence { entries }
    }

    fn on_line(&self, z: &QuadElem, positive: bool) -> &[usize] {
        self.entries
            .iter()
            .find(|(w, _, _)| w == z)
            .map(|(_, pos, neg)| {
                if positive {
                    pos.as_slice()
                } else {
                    neg.as_slice()
                }
            })
            .unwrap_or(&[])
    }
}

struct Station {
    node_base: usize,
    /// element entering just above this station (event stations only)
    entering: Option<QuadElem>,
    /// element vanishing exactly at this station (event stations only)
    vanishing: Option<QuadElem>,
    incidence: Incidence,
}

fn vertex_on_line(station: &Station, z: &QuadElem, positive: bool) -> Result<usize, TowerError> {
    match station.incidence.on_line(z, positive) {
        [i] => Ok(*i),
        hits => Err(TowerError::Internal(format!(
            "expected one vertex on the {} mediatrix of {}, found {}",
            if positive { "+" } else { "-" },
            z.display_sqrt(),
            hits.len()
        ))),
    }
}

fn vertex_on_two_lines(
    station: &Station,
    s1: &SignedSide,
    s2: &SignedSide,
) -> Result<usize, TowerError> {
    let first = station.incidence.on_line(&s1.z, s1.positive);
    let second = station.incidence.on_line(&s2.z, s2.positive);
    let hits: Vec<usize> = first
        .iter()
        .filter(|i| second.contains(i))
        .copied()
        .collect();
    match hits.as_slice() {
        [i] => Ok(*i),
        _ => Err(TowerError::Internal(format!(
            "expected one vertex on two mediatrices, found {}",
            hits.len()
        ))),
    }
}

/// The two signed sides through each hexagon corner at a sample level.
fn corner_labels(
    slice: &TorusSlice,
    sides: &[QuadElem],
) -> Result<Vec<[SignedSide; 2]>, TowerError> {
    let incidence = Incidence::build(slice.level(), slice.vertices(), sides);
    let mut per_vertex: Vec<Vec<SignedSide>> = vec![Vec::new(); slice.vertices().len()];
    for (z, pos, neg) in &incidence.entries {
        for &i in pos {
            per_vertex[i].push(SignedSide {
                z: z.clone(),
                positive: true,
            });
        }
        for &i in neg {
            per_vertex[i].push(SignedSide {
                z: z.clone(),
                positive: false,
            });
        }
    }
    per_vertex
        .into_iter()
        .map(|mut incident| match incident.len() {
            2 => {
                let b = incident.pop().unwrap();
                let a = incident.pop().unwrap();
                Ok([a, b])
            }
            k => Err(TowerError::Internal(format!(
                "hexagon corner incident to {k} mediatrices; expected 2"
            ))),
        })
        .collect()
}

fn build_graph(
    ctx: &FieldCtx,
    events: &[ParallelogramEvent],
    intervals: &[TowerInterval],
    half_basis: bool,
    bottom: &Level,
    top: &Level,
) -> Result<BifurcationGraph, TowerError> {
    let mut graph = BifurcationGraph::default();
    let mut stations: Vec<Station> = Vec::new();

    // boundary hexagon stations exist only in the half basis; otherwise
    // the first and last events sit on the boundary themselves
    if half_basis {
        let slice = slice_from_sides(bottom, &intervals[0].sides)?;
        push_station(&mut graph, &mut stations, slice, None, None, true)?;
    }
    let last = events.len() - 1;
    for (i, event) in events.iter().enumerate() {
        let slice = slice_from_sides(&event.level, &event.pair.sorted())?;
        let on_boundary = !half_basis && (i == 0 || i == last);
        push_station(
            &mut graph,
            &mut stations,
            slice,
            Some(event.pair.entering()),
            Some(event.pair.vanishing()),
            on_boundary,
        )?;
    }
    if half_basis {
        let top_sides = &intervals[intervals.len() - 1].sides;
        let slice = slice_from_sides(top, top_sides)?;
        push_station(&mut graph, &mut stations, slice, None, None, true)?;
    }

    if stations.len() != intervals.len() + 1 {
        return Err(TowerError::Internal(format!(
            "{} stations vs {} intervals",
            stations.len(),
            intervals.len()
        )));
    }

    for (idx, interval) in intervals.iter().enumerate() {
        let lower = &stations[idx];
        let upper = &stations[idx + 1];
        let mid = Level::simple_between(&interval.lo, &interval.hi);
        let hexagon = slice_from_sides(&mid, &interval.sides)?;
        if hexagon.shape() != Shape::Hexagon {
            return Err(TowerError::Internal(format!(
                "band sample at k^2 = {} is not hexagonal",
                mid.ksq().display_sqrt()
            )));
        }
        for label in corner_labels(&hexagon, &interval.sides)? {
            let from = endpoint(ctx, lower, &label, EndpointRole::Lower)?;
            let to = endpoint(ctx, upper, &label, EndpointRole::Upper)?;
            graph.edges.push(GraphEdge {
                from: lower.node_base + from,
                to: upper.node_base + to,
                sides: label,
            });
        }
    }
    Ok(graph)
}

fn push_station(
    graph: &mut BifurcationGraph,
    stations: &mut Vec<Station>,
    slice: TorusSlice,
    entering: Option<QuadElem>,
    vanishing: Option<QuadElem>,
    on_boundary: bool,
) -> Result<(), TowerError> {
    let level = slice.level().clone();
    let mut relevant: Vec<QuadElem> = slice.contributing().to_vec();
    for extra in [&entering, &vanishing].into_iter().flatten() {
        if !relevant.contains(extra) {
            relevant.push(extra.clone());
        }
    }
    let incidence = Incidence::build(&level, slice.vertices(), &relevant);

    let node_base = graph.nodes.len();
    for (i, pt) in slice.vertices().iter().enumerate() {
        let kind = if on_boundary {
            NodeKind::Boundary
        } else {
            let vanish = vanishing
                .as_ref()
                .expect("interior event has a vanishing side");
            let enter = entering
                .as_ref()
                .expect("interior event has an entering side");
            let on = |z: &QuadElem| {
                incidence.on_line(z, true).contains(&i) || incidence.on_line(z, false).contains(&i)
            };
            match (on(vanish), on(enter)) {
                (true, false) => NodeKind::Merge,
                (false, true) => NodeKind::Split,
                _ => {
                    return Err(TowerError::Internal(
                        "event vertex not classifiable as merge or split".into(),
                    ))
                }
            }
        };
        graph.nodes.push(GraphNode {
            level: level.clone(),
            kind,
            position: pt.clone(),
        });
    }
    stations.push(Station {
        node_base,
        entering,
        vanishing,
        incidence,
    });
    Ok(())
}

enum EndpointRole {
    Lower,
    Upper,
}

/// Station vertex a corner curve converges to. The curve of a corner
/// involving the element entering above the lower station (or
/// vanishing at the upper one) ends on that element's single tangent
/// vertex; any other corner ends on the vertex where both of its lines
/// meet.
fn endpoint(
    _ctx: &FieldCtx,
    station: &Station,
    label: &[SignedSide; 2],
    role: EndpointRole,
) -> Result<usize, TowerError> {
    let special = match role {
        EndpointRole::Lower => station.entering.as_ref(),
        EndpointRole::Upper => station.vanishing.as_ref(),
    };
    if let Some(sp) = special {
        for side in label {
            if side.z == *sp {
                return vertex_on_line(station, &side.z, side.positive);
            }
        }
    }
    vertex_on_two_lines(station, &label[0], &label[1])
}

// ---------------------------------------------------------------------------
// verification against the brute-force oracle
// ---------------------------------------------------------------------------

/// Summary of a successful tower verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub n: u64,
    pub events_checked: usize,
    pub band_samples_checked: usize,
    pub boundaries_checked: usize,
    pub coeff_bound: u64,
}

/// Certifies the tower against [`dirichlet_slice`] run from scratch at
/// `coeff_bound`: every in-range event must produce exactly the
/// predicted parallelogram pair, every sampled band level exactly the
/// predicted hexagon triple, and the two boundary slices the predicted
/// boundary sets.
pub fn verify_tower(
    ctx: &FieldCtx,
    samples_per_interval: usize,
    coeff_bound: u64,
) -> Result<VerifyReport, TowerError> {
    let tower = bifurcation_table(ctx)?;
    verify_against(&tower, samples_per_interval, coeff_bound)
}

pub fn verify_against(
    tower: &Tower,
    samples_per_interval: usize,
    coeff_bound: u64,
) -> Result<VerifyReport, TowerError> {
    let ctx = tower.ctx;
    let check = |level: &Level,
                 want_sides: &[QuadElem],
                 want_shape: Shape,
                 what: &str|
     -> Result<(), TowerError> {
        let slice = dirichlet_slice(&ctx, level, coeff_bound)?;
        if slice.shape() != want_shape {
            return Err(TowerError::VerificationFailed(format!(
                "n = {}: {} at k^2 = {}: oracle shape {} but tower predicts {}",
                ctx.n(),
                what,
                level.ksq().display_sqrt(),
                slice.shape().as_str(),
                want_shape.as_str()
            )));
        }
        if slice.contributing() != want_sides {
            let got: Vec<String> = slice
                .contributing()
                .iter()
                .map(|z| z.display_sqrt())
                .collect();
            let want: Vec<String> = want_sides.iter().map(|z| z.display_sqrt()).collect();
            return Err(TowerError::VerificationFailed(format!(
                "n = {}: {} at k^2 = {}: oracle sides [{}] but tower predicts [{}]",
                ctx.n(),
                what,
                level.ksq().display_sqrt(),
                got.join(", "),
                want.join(", ")
            )));
        }
        Ok(())
    };

    let mut events_checked = 0;
    for event in &tower.events {
        check(
            &event.level,
            &event.pair.sorted(),
            Shape::Parallelogram,
            &format!("event i = {}", event.index),
        )?;
        events_checked += 1;
    }

    let mut band_samples_checked = 0;
    let samples = samples_per_interval.max(1);
    for (j, interval) in tower.intervals.iter().enumerate() {
        for s in 1..=samples {
            // one sample uses the simplest interior level; more samples
            // fall back to exact convex combinations of k^2
            let level = if samples == 1 {
                Level::simple_between(&interval.lo, &interval.hi)
            } else {
                let t = BigRational::new((s as i64).into(), (samples as i64 + 1).into());
                let delta = (interval.hi.ksq() - interval.lo.ksq()).scale(&t);
                Level::new(interval.lo.ksq() + &delta)?
            };
            check(
                &level,
                &interval.sides,
                Shape::Hexagon,
                &format!("band {j} sample {s}"),
            )?;
            band_samples_checked += 1;
        }
    }

    let mut boundaries_checked = 0;
    if tower.ctx.alpha_kind() == AlphaKind::HalfPlusSqrt {
        check(
            &tower.bottom_level(),
            &tower.bottom_sides,
            tower.boundary_shapes.0,
            "bottom boundary",
        )?;
        check(
            &tower.top_level(),
            &tower.top_sides,
            tower.boundary_shapes.1,
            "top boundary",
        )?;
        boundaries_checked = 2;
    }

    Ok(VerifyReport {
        n: ctx.n(),
        events_checked,
        band_samples_checked,
        boundaries_checked,
        coeff_bound,
    })
}
