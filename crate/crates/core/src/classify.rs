//! Special points of the real traces and their activity for a direction `x̃`.
//!
//! Saddles on a singularity (SOS) are trace points where `x̃ ⟂` trace; they
//! are active iff `s·sign(x̃·n) = +1`. A transverse crossing, with components
//! ordered so that `Δ = a₁b₂ − a₂b₁ > 0`, is active iff
//! `sign(x̃₁b₂ − x̃₂a₂) = s₁` and `sign(−x̃₁b₁ + x̃₂a₁) = s₂`. Active crossings
//! where `F` splits additively do not contribute.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use crate::bridge::BridgeConfig;
use crate::error::{Error, Result};
use crate::expr::{SingularComponent, WaveFunctionModel, C64};
use crate::geom::{dot, norm, sign_tol, Window, P2};
use crate::quad::{branch_power, term_value};
use crate::trace::{alpha_from, frame_at, RealTrace, DEGENERATE_GRAD2, TRACE_TOL};

/// Dead zone of the activity sign tests.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// `|a₁b₂ − a₂b₁|/(|∇g₁||∇g₂|)` above this is a transverse crossing.
pub const TRANSVERSALITY_TOL: f64 = 1e-8;
/// Relative tolerance of the monodromy additivity test.
pub const ADDITIVITY_TOL: f64 = 1e-10;
/// Newton residual required of located points.
pub const LOCATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    Active,
    Inactive,
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activity::Active => "active",
            Activity::Inactive => "inactive",
        })
    }
}

/// Local amplitude and exponent of one term near an SOS: `F ≈ A g^(−μ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SosAmplitude {
    pub a: C64,
    pub mu: f64,
}

/// Local amplitude and exponents near a crossing: `F ≈ A g₁^(−μ₁) g₂^(−μ₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingAmplitude {
    pub a: C64,
    pub mu1: f64,
    pub mu2: f64,
}

/// Geometry and local data of a point.
#[derive(Debug, Clone, PartialEq)]
pub enum PointKind {
    /// Off every trace.
    Regular,
    /// On one trace; activity requires `x̃ ⟂` trace.
    TracePoint { component: usize, n: P2, s: i8 },
    Sos {
        component: usize,
        alpha: f64,
        s: i8,
        a: f64,
        b: f64,
        amplitudes: Vec<SosAmplitude>,
    },
    /// Components ordered so that `delta = a₁b₂ − a₂b₁ > 0`.
    Crossing {
        comp1: usize,
        comp2: usize,
        delta: f64,
        s1: i8,
        s2: i8,
        grad1: P2,
        grad2: P2,
        amplitudes: Vec<CrossingAmplitude>,
    },
    TangentialTouch {
        comp1: usize,
        comp2: usize,
        n1: P2,
        n2: P2,
        s1: i8,
        s2: i8,
    },
}

impl PointKind {
    pub fn label(&self) -> &'static str {
        match self {
            PointKind::Regular => "regular",
            PointKind::TracePoint { .. } => "trace",
            PointKind::Sos { .. } => "sos",
            PointKind::Crossing { .. } => "crossing",
            PointKind::TangentialTouch { .. } => "touch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecialPoint {
    pub location: P2,
    pub kind: PointKind,
    pub activity: Activity,
    pub contributing: bool,
    pub reason: String,
}

/// A located crossing of two traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingPoint {
    pub location: P2,
    pub transverse: bool,
}

fn tangent_dot(c: &SingularComponent, p: P2, xt: P2) -> f64 {
    let [a, b] = c.grad_real(p);
    (-xt[0] * b + xt[1] * a) / a.hypot(b)
}

/// Newton on `(g, x̃₂a − x̃₁b) = 0`.
fn polish_sos(c: &SingularComponent, mut p: P2, xt: P2) -> Option<P2> {
    for _ in 0..60 {
        let g = c.g_real(p);
        let [a, b] = c.grad_real(p);
        let h = c.hessian_real(p);
        let r2 = xt[1] * a - xt[0] * b;
        let nn = a.hypot(b);
        if g.abs() <= 0.01 * LOCATE_TOL && (r2 / nn).abs() <= 0.01 * LOCATE_TOL {
            return Some(p);
        }
        let j = [
            [a, b],
            [
                xt[1] * h[0][0] - xt[0] * h[0][1],
                xt[1] * h[0][1] - xt[0] * h[1][1],
            ],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = (g * j[1][1] - r2 * j[0][1]) / det;
        let dy = (-g * j[1][0] + r2 * j[0][0]) / det;
        let q = [p[0] - dx, p[1] - dy];
        if q == p {
            break;
        }
        p = q;
    }
    let ok = c.g_real(p).abs() <= LOCATE_TOL && tangent_dot(c, p, xt).abs() <= LOCATE_TOL;
    ok.then_some(p)
}

/// Lexicographic order insensitive to round-off below 1e-9.
pub fn location_order(p: &P2, q: &P2) -> std::cmp::Ordering {
    let key = |v: f64| (v * 1e9).round() as i64;
    key(p[0]).cmp(&key(q[0])).then(key(p[1]).cmp(&key(q[1])))
}

fn sort_dedup(mut pts: Vec<P2>, tol: f64) -> Vec<P2> {
    pts.sort_by(location_order);
    let mut out: Vec<P2> = Vec::with_capacity(pts.len());
    for p in pts {
        if !out.iter().any(|q| norm([p[0] - q[0], p[1] - q[1]]) <= tol) {
            out.push(p);
        }
    }
    out
}

/// Trace points where `x̃` is orthogonal to the trace, located by sign
/// changes of `x̃·t` along the polylines and polished by Newton.
pub fn find_sos_points(c: &SingularComponent, xt: P2, trace: &RealTrace) -> Result<Vec<P2>> {
    if (norm(xt) - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "direction ({}, {}) is not a unit vector",
            xt[0], xt[1]
        )));
    }
    let mut found = Vec::new();
    for pl in &trace.polylines {
        let vals: Vec<f64> = pl.points.iter().map(|p| tangent_dot(c, *p, xt)).collect();
        if vals.iter().all(|v| v.abs() <= BOUNDARY_TOL) {
            return Err(Error::Unsupported(format!(
                "trace of `{}` is orthogonal to the direction along a whole segment (non-isolated SOS)",
                c.id
            )));
        }
        let n = pl.points.len();
        let segs = if pl.closed { n } else { n.saturating_sub(1) };
        for k in 0..n {
            if vals[k] == 0.0 {
                found.push(polish_sos(c, pl.points[k], xt).unwrap_or(pl.points[k]));
            }
        }
        for k in 0..segs {
            let (i, j) = (k, (k + 1) % n);
            if vals[i] * vals[j] < 0.0 {
                let t = vals[i] / (vals[i] - vals[j]);
                let (p, q) = (pl.points[i], pl.points[j]);
                let guess = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                if let Some(s) = polish_sos(c, guess, xt) {
                    found.push(s);
                }
            }
        }
    }
    Ok(sort_dedup(found, 1e-8))
}

/// Levenberg–Marquardt on `(g₁, g₂) = 0`; tolerates parallel gradients.
fn polish_crossing(c1: &SingularComponent, c2: &SingularComponent, mut p: P2) -> Option<P2> {
    let res = |p: P2| [c1.g_real(p), c2.g_real(p)];
    let mut r = res(p);
    let mut lambda = 1e-6;
    for _ in 0..400 {
        if r[0].abs().max(r[1].abs()) <= 1e-3 * LOCATE_TOL {
            break;
        }
        let g1 = c1.grad_real(p);
        let g2 = c2.grad_real(p);
        // Normal equations (JᵀJ + λ diag) δ = −Jᵀr.
        let a11 = g1[0] * g1[0] + g2[0] * g2[0];
        let a12 = g1[0] * g1[1] + g2[0] * g2[1];
        let a22 = g1[1] * g1[1] + g2[1] * g2[1];
        let r1 = g1[0] * r[0] + g2[0] * r[1];
        let r2 = g1[1] * r[0] + g2[1] * r[1];
        let mut improved = false;
        for _ in 0..30 {
            let (m11, m22) = (a11 + lambda * a11.max(1e-12), a22 + lambda * a22.max(1e-12));
            let det = m11 * m22 - a12 * a12;
            if det == 0.0 {
                lambda *= 10.0;
                continue;
            }
            let dx = -(r1 * m22 - r2 * a12) / det;
            let dy = -(-r1 * a12 + r2 * m11) / det;
            let q = [p[0] + dx, p[1] + dy];
            let rq = res(q);
            if rq[0].hypot(rq[1]) < r[0].hypot(r[1]) {
                p = q;
                r = rq;
                lambda = (lambda * 0.1).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (r[0].abs().max(r[1].abs()) <= LOCATE_TOL).then_some(p)
}

/// Newton on `(g₁, a₁b₂ − a₂b₁) = 0`, which locates a simple tangency
/// accurately where the plain system is singular.
fn polish_touch(c1: &SingularComponent, c2: &SingularComponent, mut p: P2) -> Option<P2> {
    for _ in 0..60 {
        let g = c1.g_real(p);
        let (u, v) = (c1.grad_real(p), c2.grad_real(p));
        let (h1, h2) = (c1.hessian_real(p), c2.hessian_real(p));
        let cross = u[0] * v[1] - u[1] * v[0];
        let jx = h1[0][0] * v[1] + u[0] * h2[0][1] - h2[0][0] * u[1] - v[0] * h1[0][1];
        let jy = h1[0][1] * v[1] + u[0] * h2[1][1] - h2[0][1] * u[1] - v[0] * h1[1][1];
        let det = u[0] * jy - u[1] * jx;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = (g * jy - cross * u[1]) / det;
        let dy = (-g * jx + cross * u[0]) / det;
        let q = [p[0] - dx, p[1] - dy];
        if q == p || norm([dx, dy]) <= 1e-15 * (1.0 + norm(p)) {
            p = q;
            break;
        }
        p = q;
    }
    let ok = c1.g_real(p).abs() <= LOCATE_TOL
        && c2.g_real(p).abs() <= LOCATE_TOL
        && transversality(c1, c2, p) <= TRANSVERSALITY_TOL;
    ok.then_some(p)
}

/// Transversality measure `|a₁b₂ − a₂b₁|/(|∇g₁||∇g₂|)`.
pub fn transversality(c1: &SingularComponent, c2: &SingularComponent, p: P2) -> f64 {
    let g1 = c1.grad_real(p);
    let g2 = c2.grad_real(p);
    (g1[0] * g2[1] - g1[1] * g2[0]).abs() / (norm(g1) * norm(g2))
}

/// Real common zeros of two components in `window`, seeded on a grid and
/// polished; each tagged transverse or tangential.
pub fn find_crossings(
    c1: &SingularComponent,
    c2: &SingularComponent,
    window: &Window,
) -> Result<Vec<CrossingPoint>> {
    const SEEDS: usize = 128;
    let hx = window.width() / SEEDS as f64;
    let hy = window.height() / SEEDS as f64;
    let node = |i: usize, j: usize| [window.x0 + i as f64 * hx, window.y0 + j as f64 * hy];
    let grid = |c: &SingularComponent| -> Vec<f64> {
        (0..=SEEDS)
            .flat_map(|i| (0..=SEEDS).map(move |j| (i, j)))
            .map(|(i, j)| c.g_real(node(i, j)))
            .collect()
    };
    let v1 = grid(c1);
    let v2 = grid(c2);
    let changes = |v: &[f64], i: usize, j: usize| {
        let at = |i: usize, j: usize| v[i * (SEEDS + 1) + j];
        let c = [at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lo <= 0.0 && hi >= 0.0
    };
    let mut found = Vec::new();
    for i in 0..SEEDS {
        for j in 0..SEEDS {
            if changes(&v1, i, j) && changes(&v2, i, j) {
                let centre = [
                    window.x0 + (i as f64 + 0.5) * hx,
                    window.y0 + (j as f64 + 0.5) * hy,
                ];
                if let Some(p) = polish_crossing(c1, c2, centre) {
                    if window.expand(1e-9).contains(p) {
                        found.push(p);
                    }
                }
            }
        }
    }
    // Near-parallel gradients: the common zero is only located to about the
    // square root of the residual, so refine on the tangency system.
    let refined: Vec<P2> = found
        .into_iter()
        .map(|p| {
            if transversality(c1, c2, p) < 1e-3 {
                polish_touch(c1, c2, p).unwrap_or(p)
            } else {
                p
            }
        })
        .collect();
    let pts = sort_dedup(refined, 1e-6 * (1.0 + hx.max(hy)));
    Ok(pts
        .into_iter()
        .map(|p| CrossingPoint {
            location: p,
            transverse: transversality(c1, c2, p) > TRANSVERSALITY_TOL,
        })
        .collect())
}

fn normalized(g: P2) -> P2 {
    let n = norm(g);
    [g[0] / n, g[1] / n]
}

/// Activity of a point for direction `x̃`, with the reason that decided it.
pub fn classify_activity(kind: &PointKind, xt: P2) -> Result<(Activity, String)> {
    match kind {
        PointKind::Regular => Ok((Activity::Inactive, "non-singular point".into())),
        PointKind::TracePoint { component, n, s } => {
            let t = [-n[1], n[0]];
            if dot(xt, t).abs() > LOCATE_TOL {
                Ok((
                    Activity::Inactive,
                    "direction not orthogonal to the trace".into(),
                ))
            } else {
                classify_activity(
                    &PointKind::Sos {
                        component: *component,
                        alpha: 0.0,
                        s: *s,
                        a: n[0],
                        b: n[1],
                        amplitudes: vec![],
                    },
                    xt,
                )
            }
        }
        PointKind::Sos { s, a, b, .. } => {
            let xn = dot(xt, normalized([*a, *b]));
            match sign_tol(xn, BOUNDARY_TOL) * s {
                1 => Ok((
                    Activity::Active,
                    "SOS with the direction on the bridged side".into(),
                )),
                -1 => Ok((
                    Activity::Inactive,
                    "SOS with the direction opposite the bridged side".into(),
                )),
                _ => Err(Error::Precondition(
                    "direction tangent to the trace at an SOS".into(),
                )),
            }
        }
        PointKind::Crossing {
            s1,
            s2,
            grad1,
            grad2,
            ..
        } => {
            let (u1, u2) = (normalized(*grad1), normalized(*grad2));
            let e1 = sign_tol(xt[0] * u2[1] - xt[1] * u2[0], BOUNDARY_TOL);
            let e2 = sign_tol(-xt[0] * u1[1] + xt[1] * u1[0], BOUNDARY_TOL);
            if e1 == 0 || e2 == 0 {
                return Err(Error::BoundaryDirection {
                    x: f64::NAN,
                    y: f64::NAN,
                    what: "direction on the edge of the active quadrant (the point is an SOS of one trace)".into(),
                });
            }
            if e1 == *s1 && e2 == *s2 {
                Ok((
                    Activity::Active,
                    "transverse crossing with the direction in the active quadrant".into(),
                ))
            } else {
                Ok((
                    Activity::Inactive,
                    "transverse crossing with the direction outside the active quadrant".into(),
                ))
            }
        }
        PointKind::TangentialTouch { n1, n2, s1, s2, .. } => {
            let par = dot(*n1, *n2).signum() as i8;
            if *s1 * par != *s2 {
                return Err(Error::IncompatibleTouch {
                    x: f64::NAN,
                    y: f64::NAN,
                });
            }
            let u = [*s1 as f64 * n1[0], *s1 as f64 * n1[1]];
            if norm([xt[0] - u[0], xt[1] - u[1]]) <= BOUNDARY_TOL {
                Ok((
                    Activity::Active,
                    "tangential touch seen along the common bridge direction".into(),
                ))
            } else {
                Ok((
                    Activity::Inactive,
                    "tangential touch seen off the common bridge direction".into(),
                ))
            }
        }
    }
}

/// True iff no term is singular (positive exponent) at both components.
pub fn additivity_structural(model: &WaveFunctionModel, c1: usize, c2: usize) -> bool {
    !model
        .terms
        .iter()
        .any(|t| t.exponent_of(c1) > 0.0 && t.exponent_of(c2) > 0.0)
}

/// Continuation test at `probe`: each positive loop around `σⱼ` multiplies a
/// term by `e^(−2πiμⱼ)`; additive iff `F + F(σ₁σ₂) − F(σ₁) − F(σ₂)` vanishes
/// relative to `Σ|term|`.
pub fn additivity_monodromy(
    model: &WaveFunctionModel,
    c1: usize,
    c2: usize,
    probe: P2,
    signs: &[i8],
) -> Result<bool> {
    let xi = [C64::new(probe[0], 0.0), C64::new(probe[1], 0.0)];
    let mut residual = C64::new(0.0, 0.0);
    let mut scale = 0.0;
    for k in 0..model.terms.len() {
        let t = &model.terms[k];
        let (m1, m2) = (t.exponent_of(c1), t.exponent_of(c2));
        if m1 >= 1.0 || m2 >= 1.0 {
            return Err(Error::Precondition(format!(
                "monodromy additivity test needs exponents below 1, term {k} has ({m1}, {m2})"
            )));
        }
        let v = term_value(model, k, xi, C64::new(0.0, 0.0), signs)?;
        let l1 = C64::from_polar(1.0, -2.0 * PI * m1);
        let l2 = C64::from_polar(1.0, -2.0 * PI * m2);
        // F + F(σ₁σ₂) − F(σ₁) − F(σ₂) for this term.
        residual += v * (C64::new(1.0, 0.0) + l1 * l2 - l1 - l2);
        scale += v.norm();
    }
    Ok(residual.norm() <= ADDITIVITY_TOL * scale.max(f64::MIN_POSITIVE))
}

fn is_nonpositive_integer(mu: f64) -> bool {
    mu <= 0.0 && mu.fract() == 0.0
}

/// Product of a term's amplitude and its factors other than `skip`, at a real point.
fn regular_part(
    model: &WaveFunctionModel,
    k: usize,
    p: P2,
    skip: &[usize],
    signs: &[i8],
) -> Result<C64> {
    let t = &model.terms[k];
    let xi = [C64::new(p[0], 0.0), C64::new(p[1], 0.0)];
    let mut v = t.amplitude.value(xi, C64::new(0.0, 0.0));
    for f in t.factors.iter().filter(|f| !skip.contains(&f.component)) {
        let g = model.components[f.component].value(xi, C64::new(0.0, 0.0));
        if g.norm() <= 1e3 * TRACE_TOL && !is_nonpositive_integer(f.mu) {
            return Err(Error::Unsupported(format!(
                "three or more singularities meet at ({}, {})",
                p[0], p[1]
            )));
        }
        v *= branch_power(g, f.mu, signs[f.component])?;
    }
    Ok(v)
}

/// `(A, μ)` of every term singular at component `c`, evaluated at `p`.
pub fn sos_amplitudes(
    model: &WaveFunctionModel,
    c: usize,
    p: P2,
    signs: &[i8],
) -> Result<Vec<SosAmplitude>> {
    let mut out = Vec::new();
    for k in 0..model.terms.len() {
        let mu = model.terms[k].exponent_of(c);
        if mu == 0.0 || is_nonpositive_integer(mu) {
            continue;
        }
        out.push(SosAmplitude {
            a: regular_part(model, k, p, &[c], signs)?,
            mu,
        });
    }
    Ok(out)
}

/// `(A, μ₁, μ₂)` of every term singular at both components.
pub fn crossing_amplitudes(
    model: &WaveFunctionModel,
    c1: usize,
    c2: usize,
    p: P2,
    signs: &[i8],
) -> Result<Vec<CrossingAmplitude>> {
    let mut out = Vec::new();
    for k in 0..model.terms.len() {
        let (mu1, mu2) = (
            model.terms[k].exponent_of(c1),
            model.terms[k].exponent_of(c2),
        );
        if mu1 == 0.0 || mu2 == 0.0 || is_nonpositive_integer(mu1) || is_nonpositive_integer(mu2) {
            continue;
        }
        out.push(CrossingAmplitude {
            a: regular_part(model, k, p, &[c1, c2], signs)?,
            mu1,
            mu2,
        });
    }
    Ok(out)
}

/// A probe point off both traces near a crossing, on the diagonal of the
/// gradient frame.
fn crossing_probe(c1: &SingularComponent, c2: &SingularComponent, p: P2) -> P2 {
    let u1 = normalized(c1.grad_real(p));
    let u2 = normalized(c2.grad_real(p));
    let d = 1e-3;
    [
        p[0] + d * (u1[0] + 0.7 * u2[0]),
        p[1] + d * (u1[1] + 0.7 * u2[1]),
    ]
}

/// All SOS points and crossings of the model in `window`, classified for `x̃`
/// and sorted by location.
pub fn classify_model(
    model: &WaveFunctionModel,
    bridges: &BridgeConfig,
    xt: P2,
    window: &Window,
    cell_size: f64,
) -> Result<Vec<SpecialPoint>> {
    let signs = bridges.for_model(model)?;
    let mut points = Vec::new();

    let mut crossings: Vec<(usize, usize, CrossingPoint)> = Vec::new();
    for i in 0..model.components.len() {
        for j in i + 1..model.components.len() {
            for cp in find_crossings(&model.components[i], &model.components[j], window)? {
                crossings.push((i, j, cp));
            }
        }
    }

    for (ci, c) in model.components.iter().enumerate() {
        let trace = crate::trace::trace_real_curves(c, window, cell_size)?;
        for p in find_sos_points(c, xt, &trace)? {
            if crossings.iter().any(|(i, j, cp)| {
                (*i == ci || *j == ci)
                    && norm([p[0] - cp.location[0], p[1] - cp.location[1]]) <= 1e-8
            }) {
                return Err(Error::Unsupported(format!(
                    "SOS of `{}` coincides with a crossing at ({}, {})",
                    c.id, p[0], p[1]
                )));
            }
            let f = frame_at(c, p)?;
            let alpha = alpha_from(f.a, f.b, c.hessian_real(p));
            let kind = PointKind::Sos {
                component: ci,
                alpha,
                s: signs[ci],
                a: f.a,
                b: f.b,
                amplitudes: sos_amplitudes(model, ci, p, &signs)?,
            };
            let (activity, reason) = classify_activity(&kind, xt).map_err(|e| locate(e, p))?;
            points.push(SpecialPoint {
                location: p,
                kind,
                activity,
                contributing: activity == Activity::Active,
                reason,
            });
        }
    }

    for (i, j, cp) in crossings {
        let p = cp.location;
        let (ci, cj) = (&model.components[i], &model.components[j]);
        let (gi, gj) = (ci.grad_real(p), cj.grad_real(p));
        for g in [gi, gj] {
            let n2 = dot(g, g);
            if n2 <= DEGENERATE_GRAD2 {
                return Err(Error::DegenerateGradient {
                    x: p[0],
                    y: p[1],
                    norm2: n2,
                });
            }
        }
        if !cp.transverse {
            let kind = PointKind::TangentialTouch {
                comp1: i,
                comp2: j,
                n1: normalized(gi),
                n2: normalized(gj),
                s1: signs[i],
                s2: signs[j],
            };
            let (activity, reason) = classify_activity(&kind, xt).map_err(|e| locate(e, p))?;
            points.push(SpecialPoint {
                location: p,
                kind,
                activity,
                contributing: false,
                reason,
            });
            continue;
        }
        let delta_ij = gi[0] * gj[1] - gj[0] * gi[1];
        let (c1, c2, g1, g2) = if delta_ij > 0.0 {
            (i, j, gi, gj)
        } else {
            (j, i, gj, gi)
        };
        let kind = PointKind::Crossing {
            comp1: c1,
            comp2: c2,
            delta: delta_ij.abs(),
            s1: signs[c1],
            s2: signs[c2],
            grad1: g1,
            grad2: g2,
            amplitudes: crossing_amplitudes(model, c1, c2, p, &signs)?,
        };
        let (activity, mut reason) = classify_activity(&kind, xt).map_err(|e| locate(e, p))?;
        let mut contributing = activity == Activity::Active;
        if contributing {
            let probe = crossing_probe(&model.components[c1], &model.components[c2], p);
            let structural = additivity_structural(model, c1, c2);
            let additive = match additivity_monodromy(model, c1, c2, probe, &signs) {
                Ok(m) => structural || m,
                Err(Error::Precondition(_)) => structural,
                Err(e) => return Err(e),
            };
            if additive {
                contributing = false;
                reason.push_str("; additive crossing, non-contributing");
            }
        }
        points.push(SpecialPoint {
            location: p,
            kind,
            activity,
            contributing,
            reason,
        });
    }

    points.sort_by(|a, b| location_order(&a.location, &b.location));
    Ok(points)
}

fn locate(e: Error, p: P2) -> Error {
    match e {
        Error::BoundaryDirection { what, .. } => Error::BoundaryDirection {
            x: p[0],
            y: p[1],
            what,
        },
        Error::IncompatibleTouch { .. } => Error::IncompatibleTouch { x: p[0], y: p[1] },
        Error::Precondition(m) => Error::Precondition(format!("{m} at ({}, {})", p[0], p[1])),
        e => e,
    }
}

/// Writes `x,y,kind,components,delta_or_alpha,signs,activity,contributing,reason`.
pub fn write_classification_csv<W: Write>(
    points: &[SpecialPoint],
    model: &WaveFunctionModel,
    w: W,
) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "x",
        "y",
        "kind",
        "components",
        "delta_or_alpha",
        "signs",
        "activity",
        "contributing",
        "reason",
    ])?;
    let id = |k: usize| model.components[k].id.clone();
    let sgn = |s: i8| if s > 0 { "+1" } else { "-1" };
    for p in points {
        let (comps, val, signs) = match &p.kind {
            PointKind::Sos {
                component,
                alpha,
                s,
                ..
            } => (id(*component), format!("{alpha:.17e}"), sgn(*s).to_string()),
            PointKind::Crossing {
                comp1,
                comp2,
                delta,
                s1,
                s2,
                ..
            } => (
                format!("{};{}", id(*comp1), id(*comp2)),
                format!("{delta:.17e}"),
                format!("{};{}", sgn(*s1), sgn(*s2)),
            ),
            PointKind::TangentialTouch {
                comp1,
                comp2,
                s1,
                s2,
                ..
            } => (
                format!("{};{}", id(*comp1), id(*comp2)),
                String::new(),
                format!("{};{}", sgn(*s1), sgn(*s2)),
            ),
            PointKind::TracePoint { component, s, .. } => {
                (id(*component), String::new(), sgn(*s).to_string())
            }
            PointKind::Regular => (String::new(), String::new(), String::new()),
        };
        wr.write_record([
            format!("{:.17e}", p.location[0]),
            format!("{:.17e}", p.location[1]),
            p.kind.label().to_string(),
            comps,
            val,
            signs,
            p.activity.to_string(),
            p.contributing.to_string(),
            p.reason.clone(),
        ])?;
    }
    wr.flush()
}
