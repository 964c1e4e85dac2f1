//! Projection to `R^3`, boundary meshes, and serialization.
//!
//! The projection sends `(x1 + y1 i, x2 + y2 i)` at level `k` to
//! `(x1, x2, log_eps k)`; the tower then occupies `0 <= t <= 4` along
//! the third axis. Meshes sample every event level plus geometric
//! intermediates, compute each slice exactly, and stitch consecutive
//! rings side by side; bifurcation vertices come from exact event data,
//! never from float proximity.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{slice_from_sides, DirichletError, Level, MediatrixLine, Shape, TorusSlice};
use crate::quadfield::{AlphaKind, FieldCtx, QuadElem, QuadError};
use crate::tower::{
    BifurcationGraph, GluingMap, GraphEdge, GraphNode, NodeKind, ParallelogramEvent, SidePair,
    SideSurface, SignedSide, Tower, TowerError, TowerInterval,
};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Field(#[from] QuadError),
}

/// Third-coordinate convention for the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// `log_eps(y1/y2)`, the figure convention; the tower spans `[0, 4]`.
    LogEps,
    /// The raw level `y1/y2`.
    Raw,
}

/// Projects an exact slice point at a level to `R^3`.
pub fn psi_project(
    point: (&QuadElem, &QuadElem, &Level),
    epsilon: &QuadElem,
    projection: Projection,
) -> [f64; 3] {
    let (x1, x2, level) = point;
    let third = match projection {
        Projection::LogEps => level.log_eps(epsilon),
        Projection::Raw => level.to_f64(),
    };
    [x1.to_f64(), x2.to_f64(), third]
}

/// One sampled ring of the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePolyline {
    pub ksq: QuadElem,
    pub third: f64,
    pub is_event: bool,
    /// Indices into the mesh vertex list, in cyclic polygon order.
    pub ring: Vec<usize>,
}

/// Triangle mesh of the tower boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    /// Signed side element whose surface carries the face.
    pub face_tags: Vec<QuadElem>,
    pub slice_polylines: Vec<SlicePolyline>,
}

impl Mesh {
    /// Float residual of a mesh vertex against the cubic surface of its
    /// face tag, reconstructing `k^2` from the stored third coordinate.
    pub fn face_vertex_residual(
        &self,
        face: usize,
        corner: usize,
        epsilon_f: f64,
        projection: Projection,
    ) -> f64 {
        let tag = &self.face_tags[face];
        let [x1, x2, third] = self.vertices[self.faces[face][corner]];
        let ksq = match projection {
            Projection::LogEps => epsilon_f.powf(2.0 * third),
            Projection::Raw => third * third,
        };
        let z = tag.to_f64();
        let s = tag.conjugate().to_f64();
        2.0 * z * x1 + z * z + ksq * (2.0 * s * x2 + s * s)
    }
}

struct SampledLevel {
    level: Level,
    sides: Vec<QuadElem>,
    is_event: bool,
}

/// Builds the boundary mesh: every event level plus `subdivisions`
/// near-geometric intermediate levels per band, all slices exact.
pub fn build_mesh(tower: &Tower, subdivisions: usize) -> Result<Mesh, ExportError> {
    build_mesh_with(tower, subdivisions, Projection::LogEps)
}

pub fn build_mesh_with(
    tower: &Tower,
    subdivisions: usize,
    projection: Projection,
) -> Result<Mesh, ExportError> {
    let subdivisions = subdivisions.max(1);
    let samples = sampled_levels(tower, subdivisions)?;

    let mut mesh = Mesh {
        vertices: Vec::new(),
        faces: Vec::new(),
        face_tags: Vec::new(),
        slice_polylines: Vec::new(),
    };
    let mut rings: Vec<(TorusSlice, Vec<usize>)> = Vec::new();
    for sample in &samples {
        let slice = slice_from_sides(&sample.level, &sample.sides)?;
        let base = mesh.vertices.len();
        let ring: Vec<usize> = (0..slice.vertices().len()).map(|i| base + i).collect();
        for (x1, x2) in slice.vertices() {
            mesh.vertices.push(psi_project(
                (x1, x2, &sample.level),
                &tower.epsilon,
                projection,
            ));
        }
        mesh.slice_polylines.push(SlicePolyline {
            ksq: sample.level.ksq().clone(),
            third: match projection {
                Projection::LogEps => sample.level.log_eps(&tower.epsilon),
                Projection::Raw => sample.level.to_f64(),
            },
            is_event: sample.is_event,
            ring: ring.clone(),
        });
        rings.push((slice, ring));
    }

    for w in rings.windows(2) {
        let (lo_slice, lo_ring) = &w[0];
        let (hi_slice, hi_ring) = &w[1];
        stitch_gap(&mut mesh, lo_slice, lo_ring, hi_slice, hi_ring)?;
    }
    Ok(mesh)
}

fn sampled_levels(tower: &Tower, subdivisions: usize) -> Result<Vec<SampledLevel>, ExportError> {
    let half_basis = tower.ctx.alpha_kind() == AlphaKind::HalfPlusSqrt;
    let mut out: Vec<SampledLevel> = Vec::new();

    let event_sides = |e: &ParallelogramEvent| -> Vec<QuadElem> { e.pair.sorted() };

    // lower boundary station
    if half_basis {
        out.push(SampledLevel {
            level: tower.bottom_level(),
            sides: tower.bottom_sides.clone(),
            is_event: false,
        });
    } else {
        out.push(SampledLevel {
            level: tower.events[0].level.clone(),
            sides: event_sides(&tower.events[0]),
            is_event: true,
        });
    }

    for interval in &tower.intervals {
        for level in intermediate_levels(&interval.lo, &interval.hi, subdivisions) {
            out.push(SampledLevel {
                level,
                sides: interval.sides.clone(),
                is_event: false,
            });
        }
        // upper end of the band: an event or the top boundary
        let upper_event = tower
            .events
            .iter()
            .find(|e| e.level.cmp_level(&interval.hi) == std::cmp::Ordering::Equal);
        match upper_event {
            Some(e) => out.push(SampledLevel {
                level: e.level.clone(),
                sides: event_sides(e),
                is_event: true,
            }),
            None => out.push(SampledLevel {
                level: tower.top_level(),
                sides: tower.top_sides.clone(),
                is_event: false,
            }),
        }
    }
    Ok(out)
}

/// `count` levels strictly between `lo` and `hi`, close to geometric
/// spacing in `k^2` (even spacing along the log axis). Each target is
/// snapped to the simplest rational in a window around it; if the snap
/// leaves the open interval, the exact arithmetic mean takes its place.
fn intermediate_levels(lo: &Level, hi: &Level, count: usize) -> Vec<Level> {
    let ctx = lo.ctx();
    let lo_f = lo.ksq().to_f64();
    let hi_f = hi.ksq().to_f64();
    let ratio = (hi_f / lo_f).powf(1.0 / (count as f64 + 1.0));
    let mut out = Vec::with_capacity(count);
    let mut prev = lo.clone();
    for j in 1..=count {
        let target = lo_f * ratio.powi(j as i32);
        let window = (target * ratio.powf(-0.3), target * ratio.powf(0.3));
        let approx = crate::dirichlet::simplest_rational_in(window.0, window.1)
            .and_then(|q| Level::from_rational(ctx, q).ok());
        let candidate = approx.filter(|lvl| {
            lvl.cmp_level(&prev) == std::cmp::Ordering::Greater
                && lvl.cmp_level(hi) == std::cmp::Ordering::Less
        });
        let level = candidate.unwrap_or_else(|| {
            // exact fallback: mean of the previous sample and hi
            let half = BigRational::new(1.into(), 2.into());
            let ksq = (prev.ksq() + hi.ksq()).scale(&half);
            Level::new(ksq).expect("mean of positive levels is positive")
        });
        prev = level.clone();
        out.push(level);
    }
    out
}

/// Edge of the polygon lying on the signed mediatrix, as CCW-consecutive
/// vertex positions, if the side has positive length there.
fn edge_on_line(slice: &TorusSlice, z: &QuadElem, positive: bool) -> Option<(usize, usize)> {
    let m = slice.vertices().len();
    for i in 0..m {
        let j = (i + 1) % m;
        if on_signed_line(slice, z, positive, i) && on_signed_line(slice, z, positive, j) {
            return Some((i, j));
        }
    }
    None
}

fn vertex_on_line(slice: &TorusSlice, z: &QuadElem, positive: bool) -> Option<usize> {
    (0..slice.vertices().len()).find(|&i| on_signed_line(slice, z, positive, i))
}

fn on_signed_line(slice: &TorusSlice, z: &QuadElem, positive: bool, idx: usize) -> bool {
    let line = MediatrixLine::new(z, slice.level()).expect("nonzero side");
    let (a, b, c) = line.coefficients();
    let pt = &slice.vertices()[idx];
    let lin = &(a * &pt.0) + &(b * &pt.1);
    let val = if positive { &lin + c } else { c - &lin };
    val.is_zero()
}

/// Stitches two consecutive rings. Each signed side present in either
/// slice yields a quad (two triangles) when it has positive length on
/// both rings, or a single triangle into the bifurcation vertex when it
/// degenerates on one of them.
fn stitch_gap(
    mesh: &mut Mesh,
    lo_slice: &TorusSlice,
    lo_ring: &[usize],
    hi_slice: &TorusSlice,
    hi_ring: &[usize],
) -> Result<(), ExportError> {
    let mut union: Vec<QuadElem> = lo_slice
        .contributing()
        .iter()
        .chain(hi_slice.contributing())
        .cloned()
        .collect();
    union.sort_by(|a, b| a.cmp_value(b));
    union.dedup();

    for z in &union {
        for positive in [true, false] {
            let tag = if positive { z.clone() } else { -z };
            let lo_edge = edge_on_line(lo_slice, z, positive);
            let hi_edge = edge_on_line(hi_slice, z, positive);
            match (lo_edge, hi_edge) {
                (Some((a, b)), Some((c, d))) => {
                    let (a, b) = (lo_ring[a], lo_ring[b]);
                    let (c, d) = (hi_ring[c], hi_ring[d]);
                    mesh.faces.push([a, b, d]);
                    mesh.face_tags.push(tag.clone());
                    mesh.faces.push([a, d, c]);
                    mesh.face_tags.push(tag);
                }
                (Some((a, b)), None) => {
                    let p = vertex_on_line(hi_slice, z, positive).ok_or_else(|| {
                        ExportError::Schema(format!(
                            "side {} vanished without a bifurcation vertex",
                            z.display_sqrt()
                        ))
                    })?;
                    mesh.faces.push([lo_ring[a], lo_ring[b], hi_ring[p]]);
                    mesh.face_tags.push(tag);
                }
                (None, Some((c, d))) => {
                    let p = vertex_on_line(lo_slice, z, positive).ok_or_else(|| {
                        ExportError::Schema(format!(
                            "side {} appeared without a bifurcation vertex",
                            z.display_sqrt()
                        ))
                    })?;
                    mesh.faces.push([lo_ring[p], hi_ring[d], hi_ring[c]]);
                    mesh.face_tags.push(tag);
                }
                (None, None) => {}
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

/// Wavefront OBJ, `v` records then `f` records, deterministic order and
/// fixed 9-digit formatting.
pub fn write_obj(mesh: &Mesh, w: &mut impl Write) -> Result<(), ExportError> {
    for v in &mesh.vertices {
        writeln!(w, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn write_obj_file(mesh: &Mesh, path: &Path) -> Result<(), ExportError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_obj(mesh, &mut w)
}

// ---------------------------------------------------------------------------
// JSON schema (version 1)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ElemDoc {
    pub a: String,
    pub b: String,
    pub basis: String,
    pub float: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairDoc {
    pub z: ElemDoc,
    pub z_prime: ElemDoc,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventDoc {
    pub index: usize,
    pub ksq: ElemDoc,
    pub pair: PairDoc,
    pub in_range: bool,
    pub log_eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SideDoc {
    pub z: ElemDoc,
    pub valid_from_ksq: ElemDoc,
    pub valid_to_ksq: ElemDoc,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntervalDoc {
    pub lo_ksq: ElemDoc,
    pub hi_ksq: ElemDoc,
    pub sides: Vec<ElemDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GluingDoc {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<ElemDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<ElemDoc>,
    pub matrix: Vec<Vec<ElemDoc>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeDoc {
    pub ksq: ElemDoc,
    pub kind: String,
    pub x1: ElemDoc,
    pub x2: ElemDoc,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SignedSideDoc {
    pub z: ElemDoc,
    pub positive: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: usize,
    pub to: usize,
    pub sides: Vec<SignedSideDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TowerDoc {
    pub schema_version: String,
    pub n: u64,
    pub alpha: String,
    pub epsilon: ElemDoc,
    pub epsilon_norm: String,
    pub side_list: Vec<ElemDoc>,
    pub trace: Vec<PairDoc>,
    pub sides: Vec<SideDoc>,
    pub events: Vec<EventDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_of_range_event: Option<EventDoc>,
    pub bottom_sides: Vec<ElemDoc>,
    pub top_sides: Vec<ElemDoc>,
    pub boundary_shapes: Vec<String>,
    pub intervals: Vec<IntervalDoc>,
    pub gluings: Vec<GluingDoc>,
    pub graph: GraphDoc,
}

pub const SCHEMA_VERSION: &str = "1";

fn rational_str(q: &BigRational) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

fn elem_doc(z: &QuadElem) -> ElemDoc {
    ElemDoc {
        a: rational_str(z.a()),
        b: rational_str(z.b()),
        basis: match z.ctx().alpha_kind() {
            AlphaKind::Sqrt => "sqrt".into(),
            AlphaKind::HalfPlusSqrt => "half_plus_sqrt".into(),
        },
        float: z.to_f64(),
    }
}

fn elem_from_doc(ctx: &FieldCtx, doc: &ElemDoc) -> Result<QuadElem, ExportError> {
    let parse = |s: &str| -> Result<BigRational, ExportError> {
        BigRational::from_str(s)
            .map_err(|e| ExportError::Schema(format!("bad rational {s:?}: {e}")))
    };
    let want = match ctx.alpha_kind() {
        AlphaKind::Sqrt => "sqrt",
        AlphaKind::HalfPlusSqrt => "half_plus_sqrt",
    };
    if doc.basis != want {
        return Err(ExportError::Schema(format!(
            "basis {:?} does not match field n = {}",
            doc.basis,
            ctx.n()
        )));
    }
    Ok(QuadElem::new(*ctx, parse(&doc.a)?, parse(&doc.b)?))
}

fn pair_doc(p: &SidePair) -> PairDoc {
    PairDoc {
        z: elem_doc(&p.z),
        z_prime: elem_doc(&p.z_prime),
    }
}

fn event_doc(e: &ParallelogramEvent, epsilon: &QuadElem) -> EventDoc {
    EventDoc {
        index: e.index,
        ksq: elem_doc(e.level.ksq()),
        pair: pair_doc(&e.pair),
        in_range: e.in_range,
        log_eps: e.level.log_eps(epsilon),
    }
}

fn shape_str(s: Shape) -> String {
    s.as_str().to_string()
}

fn shape_from_str(s: &str) -> Result<Shape, ExportError> {
    match s {
        "parallelogram" => Ok(Shape::Parallelogram),
        "hexagon" => Ok(Shape::Hexagon),
        other => Err(ExportError::Schema(format!("unknown shape {other:?}"))),
    }
}

pub fn tower_to_doc(tower: &Tower) -> TowerDoc {
    let eps = &tower.epsilon;
    TowerDoc {
        schema_version: SCHEMA_VERSION.into(),
        n: tower.ctx.n(),
        alpha: match tower.ctx.alpha_kind() {
            AlphaKind::Sqrt => "sqrt".into(),
            AlphaKind::HalfPlusSqrt => "half_plus_sqrt".into(),
        },
        epsilon: elem_doc(eps),
        epsilon_norm: rational_str(&eps.norm()),
        side_list: tower.side_list.iter().map(elem_doc).collect(),
        trace: tower.trace.iter().map(pair_doc).collect(),
        sides: tower
            .sides
            .iter()
            .map(|s| SideDoc {
                z: elem_doc(&s.z),
                valid_from_ksq: elem_doc(s.valid_from.ksq()),
                valid_to_ksq: elem_doc(s.valid_to.ksq()),
            })
            .collect(),
        events: tower.events.iter().map(|e| event_doc(e, eps)).collect(),
        out_of_range_event: tower.out_of_range_event.as_ref().map(|e| event_doc(e, eps)),
        bottom_sides: tower.bottom_sides.iter().map(elem_doc).collect(),
        top_sides: tower.top_sides.iter().map(elem_doc).collect(),
        boundary_shapes: vec![
            shape_str(tower.boundary_shapes.0),
            shape_str(tower.boundary_shapes.1),
        ],
        intervals: tower
            .intervals
            .iter()
            .map(|iv| IntervalDoc {
                lo_ksq: elem_doc(iv.lo.ksq()),
                hi_ksq: elem_doc(iv.hi.ksq()),
                sides: iv.sides.iter().map(elem_doc).collect(),
            })
            .collect(),
        gluings: tower
            .gluings
            .iter()
            .map(|g| match g {
                GluingMap::Translation { z, matrix } => GluingDoc {
                    kind: "translation".into(),
                    z: Some(elem_doc(z)),
                    epsilon: None,
                    matrix: matrix
                        .iter()
                        .map(|row| row.iter().map(elem_doc).collect())
                        .collect(),
                },
                GluingMap::Anosov { epsilon, matrix } => GluingDoc {
                    kind: "anosov".into(),
                    z: None,
                    epsilon: Some(elem_doc(epsilon)),
                    matrix: matrix
                        .iter()
                        .map(|row| row.iter().map(elem_doc).collect())
                        .collect(),
                },
            })
            .collect(),
        graph: GraphDoc {
            nodes: tower
                .graph
                .nodes
                .iter()
                .map(|nd| NodeDoc {
                    ksq: elem_doc(nd.level.ksq()),
                    kind: nd.kind.as_str().into(),
                    x1: elem_doc(&nd.position.0),
                    x2: elem_doc(&nd.position.1),
                })
                .collect(),
            edges: tower
                .graph
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    from: e.from,
                    to: e.to,
                    sides: e
                        .sides
                        .iter()
                        .map(|s| SignedSideDoc {
                            z: elem_doc(&s.z),
                            positive: s.positive,
                        })
                        .collect(),
                })
                .collect(),
        },
    }
}

pub fn tower_from_doc(doc: &TowerDoc) -> Result<Tower, ExportError> {
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ExportError::Schema(format!(
            "unsupported schema version {:?}",
            doc.schema_version
        )));
    }
    let ctx = FieldCtx::new(doc.n)?;
    let elem = |d: &ElemDoc| elem_from_doc(&ctx, d);
    let level = |d: &ElemDoc| -> Result<Level, ExportError> { Ok(Level::new(elem(d)?)?) };
    let pair = |d: &PairDoc| -> Result<SidePair, ExportError> {
        Ok(SidePair {
            z: elem(&d.z)?,
            z_prime: elem(&d.z_prime)?,
        })
    };
    let event = |d: &EventDoc| -> Result<ParallelogramEvent, ExportError> {
        Ok(ParallelogramEvent {
            index: d.index,
            level: level(&d.ksq)?,
            pair: pair(&d.pair)?,
            in_range: d.in_range,
        })
    };
    let elems =
        |ds: &[ElemDoc]| -> Result<Vec<QuadElem>, ExportError> { ds.iter().map(elem).collect() };

    if doc.boundary_shapes.len() != 2 {
        return Err(ExportError::Schema(
            "need exactly two boundary shapes".into(),
        ));
    }
    let matrix2 = |m: &[Vec<ElemDoc>]| -> Result<[[QuadElem; 2]; 2], ExportError> {
        if m.len() != 2 || m.iter().any(|r| r.len() != 2) {
            return Err(ExportError::Schema("gluing matrix must be 2x2".into()));
        }
        Ok([
            [elem(&m[0][0])?, elem(&m[0][1])?],
            [elem(&m[1][0])?, elem(&m[1][1])?],
        ])
    };

    Ok(Tower {
        ctx,
        epsilon: elem(&doc.epsilon)?,
        side_list: elems(&doc.side_list)?,
        trace: doc.trace.iter().map(&pair).collect::<Result<_, _>>()?,
        sides: doc
            .sides
            .iter()
            .map(|d| {
                Ok(SideSurface {
                    z: elem(&d.z)?,
                    valid_from: level(&d.valid_from_ksq)?,
                    valid_to: level(&d.valid_to_ksq)?,
                })
            })
            .collect::<Result<_, ExportError>>()?,
        events: doc.events.iter().map(&event).collect::<Result<_, _>>()?,
        out_of_range_event: doc.out_of_range_event.as_ref().map(&event).transpose()?,
        bottom_sides: elems(&doc.bottom_sides)?,
        top_sides: elems(&doc.top_sides)?,
        boundary_shapes: (
            shape_from_str(&doc.boundary_shapes[0])?,
            shape_from_str(&doc.boundary_shapes[1])?,
        ),
        intervals: doc
            .intervals
            .iter()
            .map(|d| {
                Ok(TowerInterval {
                    lo: level(&d.lo_ksq)?,
                    hi: level(&d.hi_ksq)?,
                    sides: elems(&d.sides)?,
                })
            })
            .collect::<Result<_, ExportError>>()?,
        gluings: doc
            .gluings
            .iter()
            .map(|d| match d.kind.as_str() {
                "translation" => {
                    let z =
                        d.z.as_ref()
                            .ok_or_else(|| ExportError::Schema("translation needs z".into()))?;
                    Ok(GluingMap::Translation {
                        z: elem(z)?,
                        matrix: matrix2(&d.matrix)?,
                    })
                }
                "anosov" => {
                    let e = d
                        .epsilon
                        .as_ref()
                        .ok_or_else(|| ExportError::Schema("anosov needs epsilon".into()))?;
                    Ok(GluingMap::Anosov {
                        epsilon: elem(e)?,
                        matrix: matrix2(&d.matrix)?,
                    })
                }
                other => Err(ExportError::Schema(format!("unknown gluing {other:?}"))),
            })
            .collect::<Result<_, ExportError>>()?,
        graph: BifurcationGraph {
            nodes: doc
                .graph
                .nodes
                .iter()
                .map(|d| {
                    Ok(GraphNode {
                        level: level(&d.ksq)?,
                        kind: match d.kind.as_str() {
                            "merge" => NodeKind::Merge,
                            "split" => NodeKind::Split,
                            "boundary" => NodeKind::Boundary,
                            other => {
                                return Err(ExportError::Schema(format!(
                                    "unknown node kind {other:?}"
                                )))
                            }
                        },
                        position: (elem(&d.x1)?, elem(&d.x2)?),
                    })
                })
                .collect::<Result<_, ExportError>>()?,
            edges: doc
                .graph
                .edges
                .iter()
                .map(|d| {
                    if d.sides.len() != 2 {
                        return Err(ExportError::Schema(
                            "graph edge needs exactly two sides".into(),
                        ));
                    }
                    Ok(GraphEdge {
                        from: d.from,
                        to: d.to,
                        sides: [
                            SignedSide {
                                z: elem(&d.sides[0].z)?,
                                positive: d.sides[0].positive,
                            },
                            SignedSide {
                                z: elem(&d.sides[1].z)?,
                                positive: d.sides[1].positive,
                            },
                        ],
                    })
                })
                .collect::<Result<_, ExportError>>()?,
        },
    })
}

pub fn write_json(tower: &Tower, w: &mut impl Write) -> Result<(), ExportError> {
    let doc = tower_to_doc(tower);
    serde_json::to_writer_pretty(&mut *w, &doc).map_err(|e| ExportError::Schema(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

pub fn write_json_file(tower: &Tower, path: &Path) -> Result<(), ExportError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_json(tower, &mut w)
}

pub fn read_json(r: &mut impl Read) -> Result<Tower, ExportError> {
    let mut s = String::new();
    r.read_to_string(&mut s)?;
    let doc: TowerDoc = serde_json::from_str(&s).map_err(|e| ExportError::Schema(e.to_string()))?;
    tower_from_doc(&doc)
}

pub fn read_json_file(path: &Path) -> Result<Tower, ExportError> {
    read_json(&mut File::open(path)?)
}

// ---------------------------------------------------------------------------
// SVG slice plot
// ---------------------------------------------------------------------------

const SVG_PALETTE: [&str; 6] = [
    "#c0392b", "#e67e22", "#2980b9", "#27ae60", "#8e44ad", "#16a085",
];

/// 2D plot of a slice: the polygon plus the mediatrix lines of its
/// contributing translations, one color per `+-z` pair.
pub fn write_svg_slice(slice: &TorusSlice, w: &mut impl Write) -> Result<(), ExportError> {
    let pts: Vec<(f64, f64)> = slice
        .vertices()
        .iter()
        .map(|(x, y)| (x.to_f64(), y.to_f64()))
        .collect();
    let max_abs = pts
        .iter()
        .flat_map(|(x, y)| [x.abs(), y.abs()])
        .fold(1e-9_f64, f64::max);
    let half = max_abs * 1.6;
    let view = 640.0;
    let scale = view / (2.0 * half);
    let map = |x: f64, y: f64| ((x + half) * scale, (half - y) * scale);

    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{view}\" height=\"{view}\" viewBox=\"0 0 {view} {view}\">"
    )?;
    writeln!(
        w,
        "  <title>torus slice at k^2 = {} (n = {})</title>",
        slice.level().ksq().display_sqrt(),
        slice.level().ctx().n()
    )?;
    writeln!(
        w,
        "  <rect width=\"{view}\" height=\"{view}\" fill=\"white\"/>"
    )?;

    for (i, z) in slice.contributing().iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        let line = MediatrixLine::new(z, slice.level()).expect("nonzero side");
        let (a, b, c) = line.coefficients();
        let (af, bf, cf) = (a.to_f64(), b.to_f64(), c.to_f64());
        for sign in [1.0, -1.0] {
            if let Some(((x1, y1), (x2, y2))) = clip_line_to_box(sign * af, sign * bf, cf, half) {
                let (px1, py1) = map(x1, y1);
                let (px2, py2) = map(x2, y2);
                writeln!(
                    w,
                    "  <line x1=\"{px1:.9}\" y1=\"{py1:.9}\" x2=\"{px2:.9}\" \
                     y2=\"{py2:.9}\" stroke=\"{color}\" stroke-width=\"1\"/>"
                )?;
            }
        }
    }

    let poly: Vec<String> = pts
        .iter()
        .map(|&(x, y)| {
            let (px, py) = map(x, y);
            format!("{px:.9},{py:.9}")
        })
        .collect();
    writeln!(
        w,
        "  <polygon points=\"{}\" fill=\"#2980b9\" fill-opacity=\"0.25\" \
         stroke=\"#1a5276\" stroke-width=\"2\"/>",
        poly.join(" ")
    )?;
    writeln!(w, "</svg>")?;
    Ok(())
}

pub fn write_svg_slice_file(slice: &TorusSlice, path: &Path) -> Result<(), ExportError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_svg_slice(slice, &mut w)
}

/// Segment of `a x + b y + c = 0` inside the square `|x|, |y| <= half`.
fn clip_line_to_box(a: f64, b: f64, c: f64, half: f64) -> Option<((f64, f64), (f64, f64))> {
    let mut hits: Vec<(f64, f64)> = Vec::new();
    let mut push = |x: f64, y: f64| {
        if x.abs() <= half * (1.0 + 1e-9) && y.abs() <= half * (1.0 + 1e-9) {
            let dedup = hits
                .iter()
                .any(|&(px, py)| (px - x).abs() < 1e-12 && (py - y).abs() < 1e-12);
            if !dedup {
                hits.push((x, y));
            }
        }
    };
    if b.abs() > 1e-15 {
        for x in [-half, half] {
            push(x, (-c - a * x) / b);
        }
    }
    if a.abs() > 1e-15 {
        for y in [-half, half] {
            push((-c - b * y) / a, y);
        }
    }
    if hits.len() >= 2 {
        Some((hits[0], hits[1]))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

/// `eps^2` as an integer combination `a + b*eps`.
fn epsilon_square_combo(tower: &Tower) -> Result<String, ExportError> {
    let eps = &tower.epsilon;
    let eps_sq = eps.pow(2);
    if eps.b().is_zero() {
        return Err(ExportError::Schema("unit has no alpha part".into()));
    }
    let b = eps_sq.b() / eps.b();
    let a = eps_sq.a() - &b * eps.a();
    if !a.is_integer() || !b.is_integer() {
        return Err(ExportError::Schema(
            "eps^2 is not an integer combination of 1 and eps".into(),
        ));
    }
    Ok(render_eps_combo(&a, &b))
}

fn render_eps_combo(a: &BigRational, b: &BigRational) -> String {
    let b_part = if b.abs().numer() == &1.into() && b.is_integer() {
        "eps".to_string()
    } else {
        format!("{}*eps", rational_str(&b.abs()))
    };
    if a.is_zero() {
        return if b.is_negative() {
            format!("-{b_part}")
        } else {
            b_part
        };
    }
    let op = if b.is_negative() { "-" } else { "+" };
    format!("{}{op}{b_part}", rational_str(a))
}

/// Pretty level for tables: `eps^(j/2)` when `k^2 = eps^j`, else
/// `sqrt(<exact k^2>)`.
pub fn render_level(level: &Level, epsilon: &QuadElem) -> String {
    let mut power = level.ctx().one();
    for j in 0..=16u32 {
        if level.ksq() == &power {
            return match j {
                0 => "1".to_string(),
                _ if j % 2 == 0 => {
                    if j / 2 == 1 {
                        "eps".to_string()
                    } else {
                        format!("eps^{}", j / 2)
                    }
                }
                _ => format!("eps^({j}/2)"),
            };
        }
        power = &power * epsilon;
    }
    format!("sqrt({})", level.ksq().display_sqrt())
}

/// Fundamental-unit table row: `n, eps, N(eps), eps^2` as CSV.
pub fn write_unit_csv(tower: &Tower, w: &mut impl Write) -> Result<(), ExportError> {
    write!(w, "n,epsilon,norm,epsilon_squared\r\n")?;
    write!(
        w,
        "{},{},{},{}\r\n",
        tower.ctx.n(),
        tower.epsilon.display_sqrt(),
        rational_str(&tower.epsilon.norm()),
        epsilon_square_combo(tower)?
    )?;
    Ok(())
}

/// Bifurcation-level table: one row per event (plus the hexagonal
/// boundary rows when `n == 1 (mod 4)`), sides joined by `; `.
pub fn write_levels_csv(tower: &Tower, w: &mut impl Write) -> Result<(), ExportError> {
    write!(w, "i,level,ksq,sides\r\n")?;
    let sides_str = |sides: &[QuadElem]| -> String {
        sides
            .iter()
            .map(|z| z.display_sqrt())
            .collect::<Vec<_>>()
            .join("; ")
    };
    let hexagonal = tower.ctx.alpha_kind() == AlphaKind::HalfPlusSqrt;
    if hexagonal {
        write!(w, "hexagonal,1,1,{}\r\n", sides_str(&tower.bottom_sides))?;
    }
    for event in &tower.events {
        write!(
            w,
            "{},{},{},{}\r\n",
            event.index,
            render_level(&event.level, &tower.epsilon),
            event.level.ksq().display_sqrt(),
            sides_str(&event.pair.sorted())
        )?;
    }
    if hexagonal {
        write!(
            w,
            "hexagonal,eps^4,{},{}\r\n",
            tower.top_level().ksq().display_sqrt(),
            sides_str(&tower.top_sides)
        )?;
    }
    Ok(())
}

/// Writes `<stem>_unit.csv` and `<stem>_levels.csv`.
pub fn write_csv_tables(tower: &Tower, stem: &Path) -> Result<(PathBuf, PathBuf), ExportError> {
    let stem_str = stem.to_string_lossy();
    let unit_path = PathBuf::from(format!("{stem_str}_unit.csv"));
    let levels_path = PathBuf::from(format!("{stem_str}_levels.csv"));
    let mut w = BufWriter::new(File::create(&unit_path)?);
    write_unit_csv(tower, &mut w)?;
    let mut w = BufWriter::new(File::create(&levels_path)?);
    write_levels_csv(tower, &mut w)?;
    Ok((unit_path, levels_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::bifurcation_table;

    fn tower(n: u64) -> Tower {
        bifurcation_table(&FieldCtx::new(n).unwrap()).unwrap()
    }

    #[test]
    fn psi_projects_boundary_levels() {
        let t = tower(3);
        let zero = t.ctx.zero();
        let bottom = psi_project(
            (&zero, &zero, &t.bottom_level()),
            &t.epsilon,
            Projection::LogEps,
        );
        assert!(bottom[2].abs() < 1e-12);
        let top = psi_project(
            (&zero, &zero, &t.top_level()),
            &t.epsilon,
            Projection::LogEps,
        );
        assert!((top[2] - 4.0).abs() < 1e-12);
        // n = 3 first interior event at k^2 = eps: third coordinate 1/2
        let ev = psi_project(
            (&zero, &zero, &t.events[1].level),
            &t.epsilon,
            Projection::LogEps,
        );
        assert!((ev[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mesh_n2_counts() {
        let t = tower(2);
        let mesh = build_mesh(&t, 1).unwrap();
        // 5 event rings + 4 intermediates
        assert_eq!(mesh.slice_polylines.len(), 9);
        assert_eq!(
            mesh.slice_polylines.iter().filter(|s| s.is_event).count(),
            5
        );
        for ring in &mesh.slice_polylines {
            assert!(ring.ring.len() == 4 || ring.ring.len() == 6);
        }
        assert_eq!(mesh.faces.len(), mesh.face_tags.len());
        // third coordinates inside [0, 4]
        for v in &mesh.vertices {
            assert!(v[2] >= -1e-12 && v[2] <= 4.0 + 1e-12);
        }
    }

    #[test]
    fn mesh_n5_boundary_rings_are_hexagons() {
        let t = tower(5);
        let mesh = build_mesh(&t, 1).unwrap();
        let first = mesh.slice_polylines.first().unwrap();
        let last = mesh.slice_polylines.last().unwrap();
        assert_eq!(first.ring.len(), 6);
        assert_eq!(last.ring.len(), 6);
        assert!(first.third.abs() < 1e-12);
        assert!((last.third - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mesh_face_residuals_vanish_at_vertices() {
        for n in [2u64, 5] {
            let t = tower(n);
            let mesh = build_mesh(&t, 2).unwrap();
            let eps_f = t.epsilon.to_f64();
            let mut max_res = 0.0_f64;
            for face in 0..mesh.faces.len() {
                for corner in 0..3 {
                    let r = mesh
                        .face_vertex_residual(face, corner, eps_f, Projection::LogEps)
                        .abs();
                    max_res = max_res.max(r);
                }
            }
            assert!(max_res < 1e-9, "n={n} max residual {max_res}");
        }
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        for n in [2u64, 5, 13] {
            let t = tower(n);
            let mut buf = Vec::new();
            write_json(&t, &mut buf).unwrap();
            let back = read_json(&mut buf.as_slice()).unwrap();
            assert_eq!(t, back, "n={n}");
        }
    }

    #[test]
    fn obj_output_is_deterministic() {
        let t = tower(2);
        let mesh = build_mesh(&t, 2).unwrap();
        let mut a = Vec::new();
        write_obj(&mesh, &mut a).unwrap();
        let mesh2 = build_mesh(&t, 2).unwrap();
        let mut b = Vec::new();
        write_obj(&mesh2, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let v_count = text.lines().filter(|l| l.starts_with("v ")).count();
        assert_eq!(v_count, mesh.vertices.len());
    }

    #[test]
    fn unit_csv_matches_table_row() {
        let mut buf = Vec::new();
        write_unit_csv(&tower(2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("2,1+sqrt(2),-1,1+2*eps"));

        let mut buf = Vec::new();
        write_unit_csv(&tower(3), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("3,2+sqrt(3),1,-1+4*eps"));
    }

    #[test]
    fn levels_csv_for_n2_matches_table_block() {
        let mut buf = Vec::new();
        write_levels_csv(&tower(2), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,level,ksq,sides");
        assert_eq!(lines[1], "1,1,1,1; sqrt(2)");
        assert_eq!(lines[2], "2,eps,3+2sqrt(2),1; 1+sqrt(2)");
        assert_eq!(lines[3], "3,eps^2,17+12sqrt(2),1+sqrt(2); 2+sqrt(2)");
        assert_eq!(lines[4], "4,eps^3,99+70sqrt(2),1+sqrt(2); 3+2sqrt(2)");
        assert_eq!(lines[5], "5,eps^4,577+408sqrt(2),3+2sqrt(2); 4+3sqrt(2)");
    }

    #[test]
    fn svg_slice_writes_polygon() {
        let t = tower(2);
        let slice = slice_from_sides(&t.bottom_level(), &t.bottom_sides).unwrap();
        let mut buf = Vec::new();
        write_svg_slice(&slice, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("<polygon"));
        assert!(text.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn raw_projection_uses_plain_levels() {
        let t = tower(2);
        let mesh = build_mesh_with(&t, 1, Projection::Raw).unwrap();
        let eps_f = t.epsilon.to_f64();
        let mut max_third: f64 = 0.0;
        for v in &mesh.vertices {
            assert!(v[2] >= 1.0 - 1e-12);
            max_third = max_third.max(v[2]);
        }
        assert!((max_third - eps_f.powi(4)).abs() < 1e-6);
        // residual reconstruction works for the raw convention too
        let mut max_res = 0.0_f64;
        for face in 0..mesh.faces.len() {
            for corner in 0..3 {
                max_res = max_res.max(
                    mesh.face_vertex_residual(face, corner, eps_f, Projection::Raw)
                        .abs(),
                );
            }
        }
        assert!(max_res < 1e-9, "max residual {max_res}");
    }

    #[test]
    fn levels_csv_for_n13_includes_hexagonal_rows() {
        let mut buf = Vec::new();
        write_levels_csv(&tower(13), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9); // header + hex + 6 events + hex
        assert!(lines[1].starts_with("hexagonal,1,1,"));
        assert_eq!(
            lines[2],
            "1,sqrt((7+sqrt(13))/6),(7+sqrt(13))/6,1; (1+sqrt(13))/2"
        );
        assert!(lines[8].starts_with("hexagonal,eps^4,"));
    }
}
