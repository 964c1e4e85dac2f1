//! Command-line interface: deterministic, scriptable output.
//!
//! Exit codes: 0 on success, 1 when verification finds a mismatch,
//! 2 on bad input or I/O failure. The side-list iteration cap can be
//! overridden with the `CUSP_TOWER_MAX_ITERS` environment variable.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::dirichlet::{dirichlet_slice, Level, TorusSlice};
use crate::export::{
    build_mesh_with, render_level, tower_to_doc, write_csv_tables, write_json_file,
    write_levels_csv, write_obj_file, write_svg_slice, write_unit_csv, Projection,
};
use crate::quadfield::{AlphaKind, FieldCtx, QuadElem};
use crate::tower::{
    bifurcation_table_with_cap, default_coeff_bound, verify_against, Tower, TowerError,
    DEFAULT_ITERATION_CAP,
};

pub const MAX_ITERS_ENV: &str = "CUSP_TOWER_MAX_ITERS";

#[derive(Parser)]
#[command(
    name = "cusp-tower",
    version,
    about = "Exact cusp-section towers for Hilbert modular groups over Q(sqrt(n))"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
    Obj,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Fundamental unit: eps, its norm, and eps^2 as a + b*eps
    Unit { n: u64 },
    /// Side list L and the traced pairs (z_i, z_i')
    Sides { n: u64 },
    /// Bifurcation levels and their side pairs
    Levels {
        n: u64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// With --format csv: write <out>_unit.csv and <out>_levels.csv
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact torus slice at a level given by k^2
    Slice {
        n: u64,
        /// Exact k^2, e.g. "1", "3+2*sqrt(2)", "7/6+1/6*sqrt(13)"
        #[arg(long)]
        ksq: String,
        /// Candidate coefficient bound (default: derived from the side list)
        #[arg(long)]
        bound: Option<u64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Float digits in text output
        #[arg(long, default_value_t = 17)]
        digits: usize,
    },
    /// Boundary mesh: writes <out>.obj and <out>.json
    Mesh {
        n: u64,
        #[arg(long, default_value_t = 16)]
        subdivisions: usize,
        /// Output stem (default "tower_n<n>")
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the raw level as third coordinate instead of log_eps
        #[arg(long)]
        unscaled_psi: bool,
    },
    /// Certify the tower against the brute-force slice oracle
    Verify {
        n: u64,
        /// Oracle samples per hexagonal band
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Oracle coefficient bound (default: 2x the derived bound)
        #[arg(long)]
        bound: Option<u64>,
        /// Multiplier applied to the derived bound when --bound is absent
        #[arg(long, default_value_t = 2)]
        bound_multiplier: u64,
    },
    /// Towers for a range of n ("2..30" inclusive, or a single n) as JSON lines
    Census {
        range: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Verification(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

#[derive(Debug)]
enum CliError {
    Verification(String),
    Other(String),
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Other(e.to_string())
    }
}

fn iteration_cap() -> Result<usize, CliError> {
    match std::env::var(MAX_ITERS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Other(format!("bad {MAX_ITERS_ENV} value {s:?}"))),
        Err(_) => Ok(DEFAULT_ITERATION_CAP),
    }
}

fn build_tower(n: u64) -> Result<Tower, CliError> {
    let ctx = FieldCtx::new(n)?;
    Ok(bifurcation_table_with_cap(&ctx, iteration_cap()?)?)
}

/// `eps^2 = a + b*eps` rendered with the Unicode epsilon.
fn eps_combo_pretty(tower: &Tower) -> String {
    let eps = &tower.epsilon;
    let eps_sq = eps.pow(2);
    let b = eps_sq.b() / eps.b();
    let a = eps_sq.a() - &b * eps.a();
    let coeff = if b.abs() == BigRational::one() {
        "\u{3b5}".to_string()
    } else {
        format!("{}\u{3b5}", b.abs().numer())
    };
    if a.is_zero() {
        return coeff;
    }
    let op = if b.is_negative() { "-" } else { "+" };
    format!("{}{op}{coeff}", a.numer())
}

fn level_pretty(level: &Level, epsilon: &QuadElem) -> String {
    render_level(level, epsilon).replace("eps", "\u{3b5}")
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let stdout = io::stdout();
    match cmd {
        Command::Unit { n } => {
            let tower = build_tower(n)?;
            let mut w = stdout.lock();
            writeln!(
                w,
                "\u{3b5}={}  N={}  \u{3b5}\u{b2}={}",
                tower.epsilon.display_pretty(),
                tower.epsilon.norm().numer(),
                eps_combo_pretty(&tower)
            )?;
            Ok(())
        }
        Command::Sides { n } => {
            let tower = build_tower(n)?;
            let mut w = stdout.lock();
            writeln!(
                w,
                "n={n}  \u{3b5}={}  m={}",
                tower.epsilon.display_pretty(),
                tower.trace.len()
            )?;
            let list: Vec<String> = tower.side_list.iter().map(|z| z.display_pretty()).collect();
            writeln!(w, "L: {}", list.join(", "))?;
            writeln!(w, "trace:")?;
            for (i, pair) in tower.trace.iter().enumerate() {
                writeln!(
                    w,
                    "  i={}: ({}, {})",
                    i + 1,
                    pair.z.display_pretty(),
                    pair.z_prime.display_pretty()
                )?;
            }
            Ok(())
        }
        Command::Levels { n, format, out } => {
            let tower = build_tower(n)?;
            match format {
                Format::Csv => {
                    if let Some(stem) = out {
                        let (unit, levels) = write_csv_tables(&tower, &stem)?;
                        println!("wrote {}", unit.display());
                        println!("wrote {}", levels.display());
                    } else {
                        let mut w = stdout.lock();
                        write_unit_csv(&tower, &mut w)?;
                        write_levels_csv(&tower, &mut w)?;
                    }
                    Ok(())
                }
                Format::Text => {
                    let mut w = stdout.lock();
                    writeln!(
                        w,
                        "n={n}  \u{3b5}={}  events={}",
                        tower.epsilon.display_pretty(),
                        tower.events.len()
                    )?;
                    if tower.ctx.alpha_kind() == AlphaKind::HalfPlusSqrt {
                        writeln!(
                            w,
                            "  level=1 (hexagonal)  sides: {}",
                            join_pretty(&tower.bottom_sides)
                        )?;
                    }
                    for event in &tower.events {
                        writeln!(
                            w,
                            "  i={}  level={}  k\u{b2}={}  sides: {}",
                            event.index,
                            level_pretty(&event.level, &tower.epsilon),
                            event.level.ksq().display_pretty(),
                            join_pretty(&event.pair.sorted())
                        )?;
                    }
                    if tower.ctx.alpha_kind() == AlphaKind::HalfPlusSqrt {
                        writeln!(
                            w,
                            "  level=\u{3b5}\u{2074} (hexagonal)  sides: {}",
                            join_pretty(&tower.top_sides)
                        )?;
                    }
                    Ok(())
                }
                _ => Err(CliError::Other(
                    "levels supports --format text or csv".into(),
                )),
            }
        }
        Command::Slice {
            n,
            ksq,
            bound,
            format,
            out,
            digits,
        } => {
            let ctx = FieldCtx::new(n)?;
            let level = parse_level(&ctx, &ksq)?;
            let bound = match bound {
                Some(b) => b,
                None => default_coeff_bound(&ctx)?,
            };
            let slice = dirichlet_slice(&ctx, &level, bound)?;
            match format {
                Format::Text => {
                    let mut w = stdout.lock();
                    print_slice_text(&mut w, &slice, digits)?;
                    Ok(())
                }
                Format::Json => {
                    let doc = slice_doc(&slice);
                    let text = serde_json::to_string_pretty(&doc)
                        .map_err(|e| CliError::Other(e.to_string()))?;
                    write_text_out(out.as_deref(), &text)?;
                    Ok(())
                }
                Format::Svg => {
                    let mut buf = Vec::new();
                    write_svg_slice(&slice, &mut buf)?;
                    let text =
                        String::from_utf8(buf).map_err(|e| CliError::Other(e.to_string()))?;
                    write_text_out(out.as_deref(), &text)?;
                    Ok(())
                }
                _ => Err(CliError::Other(
                    "slice supports --format text, json or svg".into(),
                )),
            }
        }
        Command::Mesh {
            n,
            subdivisions,
            out,
            unscaled_psi,
        } => {
            if subdivisions == 0 {
                return Err(CliError::Other("--subdivisions must be >= 1".into()));
            }
            let tower = build_tower(n)?;
            let projection = if unscaled_psi {
                Projection::Raw
            } else {
                Projection::LogEps
            };
            let mesh = build_mesh_with(&tower, subdivisions, projection)?;
            let stem = out.unwrap_or_else(|| PathBuf::from(format!("tower_n{n}")));
            let stem_str = stem.to_string_lossy().into_owned();
            let obj_path = PathBuf::from(format!("{stem_str}.obj"));
            let json_path = PathBuf::from(format!("{stem_str}.json"));
            write_obj_file(&mesh, &obj_path)?;
            write_json_file(&tower, &json_path)?;
            println!("wrote {}", obj_path.display());
            println!("wrote {}", json_path.display());
            println!(
                "mesh: {} vertices, {} faces, {} slice rings",
                mesh.vertices.len(),
                mesh.faces.len(),
                mesh.slice_polylines.len()
            );
            Ok(())
        }
        Command::Verify {
            n,
            samples,
            bound,
            bound_multiplier,
        } => {
            let tower = build_tower(n)?;
            let bound = match bound {
                Some(b) => b,
                None => bound_multiplier.max(1) * default_coeff_bound(&tower.ctx)?,
            };
            match verify_against(&tower, samples.max(1), bound) {
                Ok(report) => {
                    println!(
                        "OK: {} events, all oracle checks passed",
                        report.events_checked
                    );
                    Ok(())
                }
                Err(TowerError::VerificationFailed(msg)) => Err(CliError::Verification(msg)),
                Err(e) => Err(CliError::Other(e.to_string())),
            }
        }
        Command::Census { range, out } => {
            let (lo, hi) = parse_range(&range)?;
            let mut sink: Box<dyn Write> = match out {
                Some(path) => Box::new(BufWriter::new(File::create(path)?)),
                None => Box::new(stdout.lock()),
            };
            for n in lo..=hi {
                match FieldCtx::new(n) {
                    Ok(ctx) => {
                        let tower = bifurcation_table_with_cap(&ctx, iteration_cap()?)?;
                        let doc = tower_to_doc(&tower);
                        let line = serde_json::to_string(&doc)
                            .map_err(|e| CliError::Other(e.to_string()))?;
                        writeln!(sink, "{line}")?;
                    }
                    Err(e) => {
                        eprintln!("skipping n={n}: {e}");
                    }
                }
            }
            Ok(())
        }
    }
}

fn join_pretty(elems: &[QuadElem]) -> String {
    elems
        .iter()
        .map(|z| z.display_pretty())
        .collect::<Vec<_>>()
        .join(", ")
}

fn write_text_out(out: Option<&std::path::Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                writeln!(w)?;
            }
            println!("wrote {}", path.display());
        }
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
        }
    }
    Ok(())
}

fn print_slice_text(w: &mut impl Write, slice: &TorusSlice, digits: usize) -> io::Result<()> {
    let digits = digits.clamp(1, 17);
    writeln!(
        w,
        "level k\u{b2} = {}   shape: {}",
        slice.level().ksq().display_pretty(),
        slice.shape().as_str()
    )?;
    writeln!(w, "sides: {}", join_pretty(slice.contributing()))?;
    writeln!(w, "vertices:")?;
    for (x, y) in slice.vertices() {
        writeln!(
            w,
            "  ({}, {})  \u{2248} ({:.*}, {:.*})",
            x.display_pretty(),
            y.display_pretty(),
            digits,
            x.to_f64(),
            digits,
            y.to_f64()
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SliceDoc {
    n: u64,
    ksq: String,
    shape: String,
    contributing: Vec<String>,
    vertices: Vec<SliceVertexDoc>,
    area_squared: String,
}

#[derive(Serialize)]
struct SliceVertexDoc {
    x1: String,
    x2: String,
    x1_float: f64,
    x2_float: f64,
}

fn slice_doc(slice: &TorusSlice) -> SliceDoc {
    SliceDoc {
        n: slice.level().ctx().n(),
        ksq: slice.level().ksq().display_sqrt(),
        shape: slice.shape().as_str().into(),
        contributing: slice
            .contributing()
            .iter()
            .map(|z| z.display_sqrt())
            .collect(),
        vertices: slice
            .vertices()
            .iter()
            .map(|(x, y)| SliceVertexDoc {
                x1: x.display_sqrt(),
                x2: y.display_sqrt(),
                x1_float: x.to_f64(),
                x2_float: y.to_f64(),
            })
            .collect(),
        area_squared: {
            let q = slice.area_squared();
            if q.is_integer() {
                q.numer().to_string()
            } else {
                format!("{}/{}", q.numer(), q.denom())
            }
        },
    }
}

/// Inclusive range "a..b", or a single "n".
fn parse_range(s: &str) -> Result<(u64, u64), CliError> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let lo: u64 = a
            .trim()
            .parse()
            .map_err(|_| CliError::Other(format!("bad range start {a:?}")))?;
        let hi: u64 = b
            .trim_start_matches('=')
            .trim()
            .parse()
            .map_err(|_| CliError::Other(format!("bad range end {b:?}")))?;
        if lo > hi {
            return Err(CliError::Other(format!("empty range {s:?}")));
        }
        Ok((lo, hi))
    } else {
        let n: u64 = s
            .parse()
            .map_err(|_| CliError::Other(format!("bad range {s:?}")))?;
        Ok((n, n))
    }
}

/// Exact level grammar: a sum of terms `p/q` and `r/s*sqrt(n)` (the
/// `*` and parentheses are optional, `sqrt n` also works). The radicand
/// must match the field.
fn parse_level(ctx: &FieldCtx, input: &str) -> Result<Level, CliError> {
    let mut rational = BigRational::zero();
    let mut radical = BigRational::zero();

    let compact: String = input.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err(CliError::Other("empty level expression".into()));
    }
    // split into signed terms
    let mut terms: Vec<(i32, String)> = Vec::new();
    let mut current = String::new();
    let mut sign = 1;
    for (i, c) in compact.chars().enumerate() {
        match c {
            '+' | '-' if i > 0 => {
                if current.is_empty() {
                    return Err(CliError::Other(format!("dangling sign in {input:?}")));
                }
                terms.push((sign, std::mem::take(&mut current)));
                sign = if c == '-' { -1 } else { 1 };
            }
            '-' => sign = -sign,
            '+' => {}
            _ => current.push(c),
        }
    }
    if current.is_empty() {
        return Err(CliError::Other(format!("dangling sign in {input:?}")));
    }
    terms.push((sign, current));

    for (sign, term) in terms {
        let signed = BigRational::from(BigInt::from(sign));
        if let Some(idx) = term.find("sqrt") {
            let coef_part = term[..idx].trim_end_matches('*');
            let radicand_part = term[idx + 4..]
                .trim_start_matches('(')
                .trim_end_matches(')');
            let radicand: u64 = radicand_part
                .parse()
                .map_err(|_| CliError::Other(format!("bad radicand in {term:?}")))?;
            if radicand != ctx.n() {
                return Err(CliError::Other(format!(
                    "radicand {radicand} does not match the field n = {}",
                    ctx.n()
                )));
            }
            let coef = if coef_part.is_empty() {
                BigRational::one()
            } else {
                parse_rational(coef_part)?
            };
            radical += signed * coef;
        } else {
            rational += signed * parse_rational(&term)?;
        }
    }

    // p + q sqrt(n) in the (1, alpha) basis
    let ksq = match ctx.alpha_kind() {
        AlphaKind::Sqrt => QuadElem::new(*ctx, rational, radical),
        AlphaKind::HalfPlusSqrt => {
            let two = BigRational::from(BigInt::from(2));
            QuadElem::new(*ctx, rational - &radical, radical * two)
        }
    };
    Level::new(ksq).map_err(|e| CliError::Other(e.to_string()))
}

fn parse_rational(s: &str) -> Result<BigRational, CliError> {
    use std::str::FromStr;
    BigRational::from_str(s).map_err(|_| CliError::Other(format!("bad rational {s:?}")))
}
