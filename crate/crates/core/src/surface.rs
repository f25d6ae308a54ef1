//! Deformed integration surfaces `ξʳ + iη(ξʳ)`.
//!
//! The global field is a smooth partition of unity:
//!
//! * a tube around each real trace carries a target that lifts the surface to
//!   the bridged side (`η·n` has the bridge sign) and tilts it along the
//!   trace so that `x̃·η < 0`;
//! * away from every trace the target is `−D x̃`, with `D` growing with the
//!   distance to the special points so the integrand decays exponentially;
//! * inactive crossings get a constant target chosen to satisfy both bridges
//!   and the decay condition at once;
//! * the quadratic part of curved components is kept from overtaking the
//!   linear lift by a direction-preserving saturation;
//! * contributing points get the local patch fields, written in the
//!   singular coordinates `ζ` and pulled back through the local Jacobian.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bridge::BridgeConfig;
use crate::classify::{Activity, PointKind, SpecialPoint};
use crate::error::{Error, Result};
use crate::expr::{SingularComponent, WaveFunctionModel, C64};
use crate::geom::{dot, norm, Window, P2};
use crate::quad::branch_log;
use crate::trace::trace_real_curves;

/// `1` for `x ≤ 0`, `0` for `x ≥ 1`, infinitely smooth in between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let f = |t: f64| (-1.0 / t).exp();
    let (a, b) = (f(1.0 - x), f(x));
    a / (a + b)
}

/// Construction parameters; lengths are in `ξ` units.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceParams {
    /// Half-width of the tube around each trace at the special points.
    pub tube_width: f64,
    /// Relative widening of the tube per unit distance from the special points.
    pub tube_growth: f64,
    /// Normal lift towards the bridged side inside a tube.
    pub normal_lift: f64,
    /// Decay magnitude at the special points.
    pub base_decay: f64,
    /// Growth of the decay magnitude per unit distance from the special points.
    pub decay_growth: f64,
    /// Cap on the tangential tilt inside a tube.
    pub max_tilt: f64,
    /// Floor on `|x̃·t|` when sizing the tilt.
    pub min_tangent_projection: f64,
    /// Curvature saturation constant.
    pub curvature_safety: f64,
    pub crossing_rho: f64,
    pub crossing_beta: f64,
    /// Inner/outer blend radii of crossing patches, in units of ρ.
    pub crossing_blend: (f64, f64),
    pub sos_rho: f64,
    pub sos_beta: f64,
    pub sos_blend: (f64, f64),
    /// Magnitude of the constant field at inactive crossings.
    pub inactive_lift: f64,
    /// Inner/outer blend radii at inactive crossings.
    pub inactive_blend: (f64, f64),
    /// Window margin around the special points.
    pub margin: f64,
    pub grid: usize,
    pub eta_max: f64,
    pub clearance_tol: f64,
    /// Width over which the field is tapered to zero at the window edge.
    pub taper: Option<f64>,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        Self {
            tube_width: 0.2,
            tube_growth: 1.0,
            normal_lift: 0.08,
            base_decay: 0.1,
            decay_growth: 1.0,
            max_tilt: 10.0,
            min_tangent_projection: 0.05,
            curvature_safety: 0.5,
            crossing_rho: 0.4,
            crossing_beta: 0.2,
            crossing_blend: (0.7, 1.2),
            sos_rho: 0.5,
            sos_beta: 0.5,
            sos_blend: (0.8, 1.3),
            inactive_lift: 0.3,
            inactive_blend: (0.3, 0.6),
            margin: 2.5,
            grid: 400,
            eta_max: 12.0,
            clearance_tol: 1e-6,
            taper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    Sos,
    Crossing,
}

/// A local patch installed around a contributing point.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchInfo {
    pub center: P2,
    pub kind: PatchKind,
    pub rho: f64,
    pub beta: f64,
    /// Number of β halvings needed to pass the local check.
    pub halvings: u32,
}

/// Crossing patch: `η″ᵢ = β(sᵢρ − 2(|x′₁|+|x′₂|)/x′ᵢ·|ζᵢ|)` with
/// gradient-normalised coordinates `ζᵢ = gᵢ/|∇gᵢ(ξ★)|`.
#[derive(Debug, Clone)]
pub struct CrossingPatch {
    pub center: P2,
    c1: SingularComponent,
    c2: SingularComponent,
    n1: f64,
    n2: f64,
    u1: P2,
    u2: P2,
    s: [f64; 2],
    xp: [f64; 2],
    pub rho: f64,
    pub beta: f64,
    blend: (f64, f64),
}

impl CrossingPatch {
    /// Refuses directions outside the active quadrant.
    pub fn new(
        c1: &SingularComponent,
        c2: &SingularComponent,
        s: [i8; 2],
        center: P2,
        xt: P2,
        rho: f64,
        beta: f64,
        blend: (f64, f64),
    ) -> Result<Self> {
        let g1 = c1.grad_real(center);
        let g2 = c2.grad_real(center);
        let (n1, n2) = (norm(g1), norm(g2));
        let u1 = [g1[0] / n1, g1[1] / n1];
        let u2 = [g2[0] / n2, g2[1] / n2];
        let dl = u1[0] * u2[1] - u2[0] * u1[1];
        if !(dl > 0.0) {
            return Err(Error::Surface(
                "crossing patch needs components ordered with positive Jacobian".into(),
            ));
        }
        let xp = [
            (xt[0] * u2[1] - xt[1] * u2[0]) / dl,
            (-xt[0] * u1[1] + xt[1] * u1[0]) / dl,
        ];
        if xp[0].signum() as i8 != s[0] || xp[1].signum() as i8 != s[1] {
            return Err(Error::Surface(format!(
                "crossing patch refused at ({}, {}): direction outside the active quadrant",
                center[0], center[1]
            )));
        }
        Ok(Self {
            center,
            c1: c1.clone(),
            c2: c2.clone(),
            n1,
            n2,
            u1,
            u2,
            s: [s[0] as f64, s[1] as f64],
            xp,
            rho,
            beta,
            blend,
        })
    }

    /// Singular coordinates `ζ` at `p`.
    pub fn zeta(&self, p: P2) -> P2 {
        [self.c1.g_real(p) / self.n1, self.c2.g_real(p) / self.n2]
    }

    /// `η″` in `ζ` coordinates.
    pub fn eta_zeta(&self, z: P2) -> P2 {
        let l = self.xp[0].abs() + self.xp[1].abs();
        [
            self.beta * (self.s[0] * self.rho - 2.0 * l / self.xp[0] * z[0].abs()),
            self.beta * (self.s[1] * self.rho - 2.0 * l / self.xp[1] * z[1].abs()),
        ]
    }

    /// Field and blend weight at `p`.
    pub fn eval(&self, p: P2) -> (P2, f64) {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let rz = dot(self.u1, d).hypot(dot(self.u2, d));
        let w = smooth_step((rz / self.rho - self.blend.0) / (self.blend.1 - self.blend.0));
        if w == 0.0 {
            return ([0.0, 0.0], 0.0);
        }
        let e = self.eta_zeta(self.zeta(p));
        let g1 = self.c1.grad_real(p);
        let g2 = self.c2.grad_real(p);
        let (j11, j12, j21, j22) = (
            g1[0] / self.n1,
            g1[1] / self.n1,
            g2[0] / self.n2,
            g2[1] / self.n2,
        );
        let det = j11 * j22 - j12 * j21;
        (
            [
                (j22 * e[0] - j12 * e[1]) / det,
                (-j21 * e[0] + j11 * e[1]) / det,
            ],
            w,
        )
    }

    pub fn support_radius(&self) -> f64 {
        let dl = self.u1[0] * self.u2[1] - self.u2[0] * self.u1[1];
        // |J★⁻¹| ≤ √2/|det| for unit rows.
        self.blend.1 * self.rho * 2f64.sqrt() / dl
    }
}

/// SOS patch: `η″₁ = −sign(α)βsζ₁`, `η″₂ = |α|βs(ρ² − 2ζ₂²)` with
/// `ζ₂ = g` and `ζ₁ = b★Δξ₁ − a★Δξ₂ + λg`.
///
/// The shift `λ` removes the `ζ₁ζ₂` term from the phase, so that
/// `x̃·ξ = x̃·ξ★ + (ζ₂ + αζ₁²)/|∇g★| + O(|ζ|³)` on the active side.
#[derive(Debug, Clone)]
pub struct SosPatch {
    pub center: P2,
    c: SingularComponent,
    a: f64,
    b: f64,
    lambda: f64,
    alpha: f64,
    s: f64,
    pub rho: f64,
    pub beta: f64,
    blend: (f64, f64),
}

impl SosPatch {
    pub fn new(
        c: &SingularComponent,
        s: i8,
        center: P2,
        alpha: f64,
        rho: f64,
        beta: f64,
        blend: (f64, f64),
    ) -> Result<Self> {
        if alpha == 0.0 {
            return Err(Error::Surface("SOS patch needs alpha != 0".into()));
        }
        let [a, b] = c.grad_real(center);
        let h = c.hessian_real(center);
        let quad = |x: P2, y: P2| {
            x[0] * (h[0][0] * y[0] + h[0][1] * y[1]) + x[1] * (h[1][0] * y[0] + h[1][1] * y[1])
        };
        let v = [b, -a];
        let vv = quad(v, v);
        let lambda = if vv == 0.0 { 0.0 } else { quad(v, [a, b]) / vv };
        Ok(Self {
            center,
            c: c.clone(),
            a,
            b,
            lambda,
            alpha,
            s: s as f64,
            rho,
            beta,
            blend,
        })
    }

    pub fn zeta(&self, p: P2) -> P2 {
        let g = self.c.g_real(p);
        [
            self.b * (p[0] - self.center[0]) - self.a * (p[1] - self.center[1]) + self.lambda * g,
            g,
        ]
    }

    pub fn eta_zeta(&self, z: P2) -> P2 {
        [
            -self.alpha.signum() * self.beta * self.s * z[0],
            self.alpha.abs() * self.beta * self.s * (self.rho * self.rho - 2.0 * z[1] * z[1]),
        ]
    }

    /// Maps a `ζ`-space vector at `p` back to `ξ` through `∂ζ/∂ξ`.
    pub fn pull_back(&self, p: P2, e: P2) -> P2 {
        let [ga, gb] = self.c.grad_real(p);
        let (j11, j12) = (self.b + self.lambda * ga, -self.a + self.lambda * gb);
        let det = j11 * gb - j12 * ga;
        [(gb * e[0] - j12 * e[1]) / det, (-ga * e[0] + j11 * e[1]) / det]
    }

    fn euclid_radius(&self) -> f64 {
        1.5 * self.blend.1 * self.rho / self.a.hypot(self.b)
    }

    pub fn eval(&self, p: P2) -> (P2, f64) {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let cut = smooth_step(norm(d) / self.euclid_radius() - 1.0);
        if cut == 0.0 {
            return ([0.0, 0.0], 0.0);
        }
        let z = self.zeta(p);
        let w =
            cut * smooth_step((norm(z) / self.rho - self.blend.0) / (self.blend.1 - self.blend.0));
        if w == 0.0 {
            return ([0.0, 0.0], 0.0);
        }
        (self.pull_back(p, self.eta_zeta(z)), w)
    }

    pub fn support_radius(&self) -> f64 {
        2.0 * self.euclid_radius()
    }
}

#[derive(Debug, Clone)]
enum Patch {
    Sos(SosPatch),
    Crossing(CrossingPatch),
}

impl Patch {
    fn eval(&self, p: P2) -> (P2, f64) {
        match self {
            Patch::Sos(s) => s.eval(p),
            Patch::Crossing(c) => c.eval(p),
        }
    }

    fn center(&self) -> P2 {
        match self {
            Patch::Sos(s) => s.center,
            Patch::Crossing(c) => c.center,
        }
    }

    fn support_radius(&self) -> f64 {
        match self {
            Patch::Sos(s) => s.support_radius(),
            Patch::Crossing(c) => c.support_radius(),
        }
    }

    fn info(&self, halvings: u32) -> PatchInfo {
        match self {
            Patch::Sos(s) => PatchInfo {
                center: s.center,
                kind: PatchKind::Sos,
                rho: s.rho,
                beta: s.beta,
                halvings,
            },
            Patch::Crossing(c) => PatchInfo {
                center: c.center,
                kind: PatchKind::Crossing,
                rho: c.rho,
                beta: c.beta,
                halvings,
            },
        }
    }

    fn halve(&mut self) {
        match self {
            Patch::Sos(s) => s.beta *= 0.5,
            Patch::Crossing(c) => c.beta *= 0.5,
        }
    }
}

#[derive(Debug, Clone)]
struct InactiveCrossing {
    center: P2,
    target: P2,
}

/// The analytic field; evaluated node-wise by [`DeformationField`].
#[derive(Debug, Clone)]
pub struct GlobalField {
    components: Vec<SingularComponent>,
    signs: Vec<f64>,
    xt: P2,
    core: Option<Window>,
    window: Window,
    params: SurfaceParams,
    inactive: Vec<InactiveCrossing>,
    patches: Vec<Patch>,
}

impl GlobalField {
    fn core_distance(&self, p: P2) -> f64 {
        self.core.map_or(0.0, |c| c.distance(p))
    }

    /// Field without patches.
    fn exterior(&self, p: P2) -> P2 {
        let prm = &self.params;
        let xt = self.xt;
        let dist = self.core_distance(p);
        let dd = prm.base_decay + prm.decay_growth * dist;
        let tau = prm.tube_width * (1.0 + prm.tube_growth * dist);
        let mut num = [-dd * xt[0], -dd * xt[1]];
        let mut w0 = 1.0;
        let mut phis = 0.0;
        let mut tubes = [0.0, 0.0];
        for (c, s) in self.components.iter().zip(&self.signs) {
            let g = c.g_real(p);
            let [a, b] = c.grad_real(p);
            let nn = a.hypot(b);
            if !(nn > 1e-15) {
                continue;
            }
            let phi = smooth_step((g.abs() / nn / tau - 0.5) / 0.5);
            if phi == 0.0 {
                continue;
            }
            let u = [s * a / nn, s * b / nn];
            let mut t = [-u[1], u[0]];
            if dot(xt, t) > 0.0 {
                t = [-t[0], -t[1]];
            }
            let pu = dot(xt, u);
            let q = dot(xt, t).abs();
            let y = prm.normal_lift * pu + dd;
            let smax = 0.5 * (y + (y * y + 0.02 * 0.02).sqrt());
            let bt = (smax / q.max(prm.min_tangent_projection)).min(prm.max_tilt);
            tubes[0] += phi * (prm.normal_lift * u[0] + bt * t[0]);
            tubes[1] += phi * (prm.normal_lift * u[1] + bt * t[1]);
            phis += phi;
            w0 *= 1.0 - phi;
        }
        num = [num[0] * w0 + tubes[0], num[1] * w0 + tubes[1]];
        let den = phis + w0;
        let mut eta = [num[0] / den, num[1] / den];

        for ic in &self.inactive {
            let (r1, r2) = prm.inactive_blend;
            let psi =
                smooth_step((norm([p[0] - ic.center[0], p[1] - ic.center[1]]) - r1) / (r2 - r1));
            eta = [
                psi * ic.target[0] + (1.0 - psi) * eta[0],
                psi * ic.target[1] + (1.0 - psi) * eta[1],
            ];
        }

        if prm.curvature_safety > 0.0 {
            for c in &self.components {
                if c.g.is_affine() {
                    continue;
                }
                let h = c.hessian_real(p);
                let g = c.g_real(p);
                let nn = norm(c.grad_real(p));
                let gg = (g * g + (0.5 * tau * nn).powi(2)).sqrt();
                let q = 0.5
                    * (h[0][0] * eta[0] * eta[0]
                        + 2.0 * h[0][1] * eta[0] * eta[1]
                        + h[1][1] * eta[1] * eta[1])
                        .abs();
                let sc = (1.0 + (q / (prm.curvature_safety * gg)).powi(2)).powf(-0.25);
                eta = [eta[0] * sc, eta[1] * sc];
            }
        }
        eta
    }

    /// Field value and the largest patch weight at `p`.
    pub fn eval(&self, p: P2) -> (P2, f64) {
        let mut eta = self.exterior(p);
        let mut wmax: f64 = 0.0;
        for patch in &self.patches {
            let (e, w) = patch.eval(p);
            if w > 0.0 {
                eta = [w * e[0] + (1.0 - w) * eta[0], w * e[1] + (1.0 - w) * eta[1]];
                wmax = wmax.max(w);
            }
        }
        if let Some(len) = self.params.taper {
            let w = &self.window;
            let d = (p[0] - w.x0)
                .min(w.x1 - p[0])
                .min(p[1] - w.y0)
                .min(w.y1 - p[1])
                .max(0.0);
            let f = 1.0 - smooth_step(d / len);
            eta = [eta[0] * f, eta[1] * f];
        }
        (eta, wmax)
    }
}

type FieldFn = Arc<dyn Fn(P2) -> (P2, f64) + Send + Sync>;

/// Node-sampled deformation `η` on the cell centres of a regular grid.
#[derive(Clone)]
pub struct DeformationField {
    pub window: Window,
    pub n1: usize,
    pub n2: usize,
    /// `η` at node `(i, j)`, stored at `i * n2 + j`.
    pub eta: Vec<P2>,
    /// Largest patch weight at each node (zero outside every patch).
    pub patch_weight: Vec<f64>,
    pub patches: Vec<PatchInfo>,
    pub eta_max: f64,
    pub clearance_tol: f64,
    source: FieldFn,
}

impl std::fmt::Debug for DeformationField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeformationField")
            .field("window", &self.window)
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("patches", &self.patches)
            .finish()
    }
}

impl DeformationField {
    /// Samples `f` (returning `η` and a patch weight) at the cell centres.
    pub fn sample(window: Window, n1: usize, n2: usize, eta_max: f64, f: FieldFn) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::Precondition(format!(
                "grid must be at least 2x2, got {n1}x{n2}"
            )));
        }
        let h1 = window.width() / n1 as f64;
        let h2 = window.height() / n2 as f64;
        let vals: Vec<(P2, f64)> = (0..n1 * n2)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n2, k % n2);
                f([
                    window.x0 + (i as f64 + 0.5) * h1,
                    window.y0 + (j as f64 + 0.5) * h2,
                ])
            })
            .collect();
        Ok(Self {
            window,
            n1,
            n2,
            eta: vals.iter().map(|v| v.0).collect(),
            patch_weight: vals.iter().map(|v| v.1).collect(),
            patches: Vec::new(),
            eta_max,
            clearance_tol: SurfaceParams::default().clearance_tol,
            source: f,
        })
    }

    /// A field given by a plain function, without patches.
    pub fn from_fn(
        window: Window,
        n1: usize,
        n2: usize,
        eta_max: f64,
        f: impl Fn(P2) -> P2 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::sample(window, n1, n2, eta_max, Arc::new(move |p| (f(p), 0.0)))
    }

    pub fn flat(window: Window, n1: usize, n2: usize) -> Result<Self> {
        Self::from_fn(window, n1, n2, 0.0, |_| [0.0, 0.0])
    }

    pub fn steps(&self) -> (f64, f64) {
        (
            self.window.width() / self.n1 as f64,
            self.window.height() / self.n2 as f64,
        )
    }

    pub fn node(&self, i: usize, j: usize) -> P2 {
        let (h1, h2) = self.steps();
        [
            self.window.x0 + (i as f64 + 0.5) * h1,
            self.window.y0 + (j as f64 + 0.5) * h2,
        ]
    }

    /// Field at an arbitrary point (not restricted to nodes).
    pub fn eval(&self, p: P2) -> P2 {
        (self.source)(p).0
    }

    /// `∂η/∂ξ` at a node: centred differences inside, one-sided at the edges.
    pub fn jacobian(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        let (h1, h2) = self.steps();
        let e = |i: usize, j: usize| self.eta[i * self.n2 + j];
        let (i0, i1) = if i == 0 {
            (0, 1)
        } else if i == self.n1 - 1 {
            (i - 1, i)
        } else {
            (i - 1, i + 1)
        };
        let (j0, j1) = if j == 0 {
            (0, 1)
        } else if j == self.n2 - 1 {
            (j - 1, j)
        } else {
            (j - 1, j + 1)
        };
        let dx = (i1 - i0) as f64 * h1;
        let dy = (j1 - j0) as f64 * h2;
        let (a, b) = (e(i1, j), e(i0, j));
        let (c, d) = (e(i, j1), e(i, j0));
        [
            [(a[0] - b[0]) / dx, (c[0] - d[0]) / dy],
            [(a[1] - b[1]) / dx, (c[1] - d[1]) / dy],
        ]
    }

    /// Complex cell weight `det(I + i ∂η/∂ξ) h₁h₂`.
    pub fn wedge_weight(&self, i: usize, j: usize) -> C64 {
        let m = self.jacobian(i, j);
        let (h1, h2) = self.steps();
        let im = C64::new(0.0, 1.0);
        ((1.0 + im * m[0][0]) * (1.0 + im * m[1][1]) - (im * m[0][1]) * (im * m[1][0])) * (h1 * h2)
    }

    /// Writes `x,y,eta1,eta2` per node.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "eta1", "eta2"])?;
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let p = self.node(i, j);
                let e = self.eta[i * self.n2 + j];
                wr.write_record([p[0], p[1], e[0], e[1]].iter().map(|v| format!("{v:.17e}")))?;
            }
        }
        wr.flush()
    }

    /// Writes `x,y,xt_dot_eta` per node.
    pub fn write_decay_csv<W: Write>(&self, xt: P2, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "xt_dot_eta"])?;
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let p = self.node(i, j);
                let e = self.eta[i * self.n2 + j];
                wr.write_record([p[0], p[1], dot(xt, e)].iter().map(|v| format!("{v:.17e}")))?;
            }
        }
        wr.flush()
    }
}

/// Window covering the special points with `margin` on every side.
pub fn auto_window(points: &[SpecialPoint], margin: f64) -> Window {
    let locs: Vec<P2> = points.iter().map(|p| p.location).collect();
    match Window::bounding(&locs) {
        Some(w) => w.expand(margin),
        None => Window::square(margin),
    }
}

/// Unit vector maximising `min(u₁·v, u₂·v, −x̃·v)`, with that minimum.
fn inactive_direction(u1: P2, u2: P2, xt: P2) -> (P2, f64) {
    let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
    for k in 0..7200 {
        let th = 2.0 * PI * k as f64 / 7200.0;
        let v = [th.cos(), th.sin()];
        let m = dot(u1, v).min(dot(u2, v)).min(-dot(xt, v));
        if m > best.1 {
            best = (v, m);
        }
    }
    best
}

/// Builds the global field for direction `x̃` and samples it on a
/// `grid × grid` lattice over `window` (or the automatic window).
pub fn build_global_field(
    model: &WaveFunctionModel,
    bridges: &BridgeConfig,
    xt: P2,
    points: &[SpecialPoint],
    window: Option<Window>,
    params: &SurfaceParams,
) -> Result<DeformationField> {
    let signs_i8 = bridges.for_model(model)?;
    let signs: Vec<f64> = signs_i8.iter().map(|s| *s as f64).collect();
    let window = window.unwrap_or_else(|| auto_window(points, params.margin));
    let core = Window::bounding(&points.iter().map(|p| p.location).collect::<Vec<_>>());
    for p in points.iter().filter(|p| p.contributing) {
        if !window.contains(p.location) {
            return Err(Error::Surface(format!(
                "contributing point ({}, {}) lies outside the window",
                p.location[0], p.location[1]
            )));
        }
    }

    let mut inactive = Vec::new();
    let mut patches = Vec::new();
    for sp in points {
        match &sp.kind {
            PointKind::Crossing {
                comp1,
                comp2,
                s1,
                s2,
                grad1,
                grad2,
                ..
            } => {
                if sp.activity == Activity::Active {
                    patches.push(Patch::Crossing(CrossingPatch::new(
                        &model.components[*comp1],
                        &model.components[*comp2],
                        [*s1, *s2],
                        sp.location,
                        xt,
                        params.crossing_rho,
                        params.crossing_beta,
                        params.crossing_blend,
                    )?));
                } else {
                    let u1 = [
                        *s1 as f64 * grad1[0] / norm(*grad1),
                        *s1 as f64 * grad1[1] / norm(*grad1),
                    ];
                    let u2 = [
                        *s2 as f64 * grad2[0] / norm(*grad2),
                        *s2 as f64 * grad2[1] / norm(*grad2),
                    ];
                    let (v, margin) = inactive_direction(u1, u2, xt);
                    if margin <= 0.0 {
                        return Err(Error::Surface(format!(
                            "no decaying bridge-consistent direction at inactive crossing ({}, {})",
                            sp.location[0], sp.location[1]
                        )));
                    }
                    inactive.push(InactiveCrossing {
                        center: sp.location,
                        target: [params.inactive_lift * v[0], params.inactive_lift * v[1]],
                    });
                }
            }
            PointKind::Sos {
                component,
                alpha,
                s,
                ..
            } if sp.activity == Activity::Active => {
                patches.push(Patch::Sos(SosPatch::new(
                    &model.components[*component],
                    *s,
                    sp.location,
                    *alpha,
                    params.sos_rho,
                    params.sos_beta,
                    params.sos_blend,
                )?));
            }
            PointKind::TangentialTouch { .. } if sp.activity == Activity::Active => {
                return Err(Error::Unsupported(
                    "deformation near an active tangential touch".into(),
                ));
            }
            _ => {}
        }
    }
    for (k, p) in patches.iter().enumerate() {
        for q in &patches[..k] {
            let (a, b) = (p.center(), q.center());
            let d = norm([a[0] - b[0], a[1] - b[1]]);
            let rho = params.crossing_rho.max(params.sos_rho);
            if d <= 2.0 * rho {
                return Err(Error::Surface(format!(
                    "contributing points ({}, {}) and ({}, {}) are closer than 2 rho",
                    a[0], a[1], b[0], b[1]
                )));
            }
        }
    }

    let mut field = GlobalField {
        components: model.components.clone(),
        signs,
        xt,
        core,
        window,
        params: params.clone(),
        inactive,
        patches: Vec::new(),
    };

    // Install patches one at a time, halving β until the local check passes.
    let mut infos = Vec::new();
    for mut patch in patches {
        let mut halvings = 0;
        loop {
            field.patches.push(patch.clone());
            let ok = local_check(&field, &patch, params.clearance_tol);
            field.patches.pop();
            if ok {
                break;
            }
            if halvings == 8 {
                return Err(Error::Surface(format!(
                    "patch at ({}, {}) fails the clearance check after 8 halvings of beta",
                    patch.center()[0],
                    patch.center()[1]
                )));
            }
            patch.halve();
            halvings += 1;
        }
        infos.push(patch.info(halvings));
        field.patches.push(patch);
    }

    let field = Arc::new(field);
    let f = field.clone();
    let mut out = DeformationField::sample(
        window,
        params.grid,
        params.grid,
        params.eta_max,
        Arc::new(move |p| f.eval(p)),
    )?;
    out.patches = infos;
    out.clearance_tol = params.clearance_tol;
    Ok(out)
}

const EPSILONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Clearance of the field on a small lattice around a patch.
fn local_check(field: &GlobalField, patch: &Patch, tol: f64) -> bool {
    let r = patch.support_radius();
    let c = patch.center();
    let n = 60;
    for i in 0..=n {
        for j in 0..=n {
            let p = [
                c[0] - r + 2.0 * r * i as f64 / n as f64,
                c[1] - r + 2.0 * r * j as f64 / n as f64,
            ];
            let (eta, _) = field.eval(p);
            for comp in &field.components {
                for e in EPSILONS {
                    let xi = [C64::new(p[0], e * eta[0]), C64::new(p[1], e * eta[1])];
                    let g = comp.value(xi, C64::new(0.0, 0.0));
                    if !(g.norm() >= tol) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Outcome of [`verify_field`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldReport {
    pub pass: bool,
    pub max_eta: f64,
    /// Largest finite-difference slope of `η` between neighbouring nodes.
    pub max_slope: f64,
    /// Minimum `|g(ξʳ + iεη)|` over nodes and components, per ε.
    pub min_clearance: Vec<(f64, f64)>,
    /// Grid cells around which some `g(ξʳ + iεη)` winds or jumps.
    pub enclosed_zeros: usize,
    /// Largest jump of the branch argument between neighbouring nodes.
    pub max_branch_jump: f64,
    /// Largest `x̃·η` over nodes outside every patch.
    pub max_exterior_decay: f64,
    pub bridge_agree: usize,
    pub bridge_total: usize,
    pub failures: Vec<String>,
}

/// Argument step of `w` from `a` to `b` in `(−π, π]`.
fn arg_step(a: C64, b: C64) -> f64 {
    (b / a).arg()
}

/// Checks boundedness, clearance and ε-flattability, exterior decay and
/// bridge-sign consistency of a sampled field.
pub fn verify_field(
    field: &DeformationField,
    model: &WaveFunctionModel,
    bridges: &BridgeConfig,
    xt: P2,
) -> Result<FieldReport> {
    let signs = bridges.for_model(model)?;
    let (n1, n2) = (field.n1, field.n2);
    let (h1, h2) = field.steps();
    let idx = |i: usize, j: usize| i * n2 + j;
    let mut failures = Vec::new();

    let max_eta = field.eta.iter().map(|e| norm(*e)).fold(0.0, f64::max);
    let mut max_slope: f64 = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let e = field.eta[idx(i, j)];
            if i + 1 < n1 {
                let f = field.eta[idx(i + 1, j)];
                max_slope = max_slope.max(norm([f[0] - e[0], f[1] - e[1]]) / h1);
            }
            if j + 1 < n2 {
                let f = field.eta[idx(i, j + 1)];
                max_slope = max_slope.max(norm([f[0] - e[0], f[1] - e[1]]) / h2);
            }
        }
    }
    if !(max_eta <= field.eta_max) {
        failures.push(format!(
            "max |eta| = {max_eta} exceeds eta_max = {}",
            field.eta_max
        ));
    }
    // Continuity on the grid: the field must be resolved, not jump.
    if !(max_slope * h1.max(h2) <= 0.25 * field.eta_max.max(1e-300)) && max_slope > 0.0 {
        failures.push(format!(
            "field jumps between neighbouring nodes (slope {max_slope})"
        ));
    }

    let mut min_clearance = Vec::new();
    let mut enclosed = 0;
    let mut max_jump: f64 = 0.0;
    for e in EPSILONS {
        let per: Vec<(f64, usize, f64)> = model
            .components
            .par_iter()
            .enumerate()
            .map(|(ci, c)| {
                let vals: Vec<C64> = (0..n1 * n2)
                    .map(|k| {
                        let p = field.node(k / n2, k % n2);
                        let eta = field.eta[k];
                        c.value(
                            [C64::new(p[0], e * eta[0]), C64::new(p[1], e * eta[1])],
                            C64::new(0.0, 0.0),
                        )
                    })
                    .collect();
                let minv = vals.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
                let mut bad = 0;
                let mut jump: f64 = 0.0;
                for i in 0..n1 - 1 {
                    for j in 0..n2 - 1 {
                        let ring = [
                            vals[idx(i, j)],
                            vals[idx(i + 1, j)],
                            vals[idx(i + 1, j + 1)],
                            vals[idx(i, j + 1)],
                        ];
                        let mut wind = 0.0;
                        let mut unresolved = false;
                        for k in 0..4 {
                            let st = arg_step(ring[k], ring[(k + 1) % 4]);
                            unresolved |= !st.is_finite() || st.abs() >= 0.5 * PI;
                            wind += st;
                        }
                        if unresolved || wind.abs() > PI {
                            bad += 1;
                        }
                    }
                }
                if e == 1.0 {
                    let logs: Vec<f64> = vals
                        .iter()
                        .map(|v| branch_log(*v, signs[ci]).map_or(f64::NAN, |l| l.im))
                        .collect();
                    for i in 0..n1 {
                        for j in 0..n2 {
                            let a = logs[idx(i, j)];
                            if i + 1 < n1 {
                                jump = jump.max((logs[idx(i + 1, j)] - a).abs());
                            }
                            if j + 1 < n2 {
                                jump = jump.max((logs[idx(i, j + 1)] - a).abs());
                            }
                            if a.is_nan() {
                                jump = f64::INFINITY;
                            }
                        }
                    }
                }
                (minv, bad, jump)
            })
            .collect();
        let minv = per.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let bad: usize = per.iter().map(|v| v.1).sum();
        max_jump = per.iter().map(|v| v.2).fold(max_jump, f64::max);
        if !(minv >= field.clearance_tol) {
            failures.push(format!(
                "clearance {minv:e} below {:e} at eps = {e}",
                field.clearance_tol
            ));
        }
        if bad > 0 {
            failures.push(format!(
                "{bad} grid cells enclose or straddle a singularity at eps = {e}"
            ));
        }
        enclosed += bad;
        min_clearance.push((e, minv));
    }
    if !(max_jump < 0.5 * PI) {
        failures.push(format!(
            "branch argument jumps by {max_jump} between neighbouring nodes"
        ));
    }

    let mut max_ext = f64::NEG_INFINITY;
    for k in 0..n1 * n2 {
        if field.patch_weight[k] == 0.0 {
            max_ext = max_ext.max(dot(xt, field.eta[k]));
        }
    }
    if max_ext > -1e-6 * field.eta_max {
        failures.push(format!(
            "x.eta = {max_ext:e} outside the patches is not negative enough"
        ));
    }

    let (mut agree, mut total) = (0, 0);
    let cell = (h1.max(h2) * 4.0).max(1e-3);
    for (ci, c) in model.components.iter().enumerate() {
        let tr = trace_real_curves(c, &field.window, cell)?;
        for (p, g) in tr.vertices() {
            let eta = field.eval(p);
            total += 1;
            if (dot(eta, g).signum() as i8) == signs[ci] && dot(eta, g) != 0.0 {
                agree += 1;
            }
        }
    }
    if agree != total {
        failures.push(format!(
            "bridge sign disagrees at {} of {total} trace nodes",
            total - agree
        ));
    }

    Ok(FieldReport {
        pass: failures.is_empty(),
        max_eta,
        max_slope,
        min_clearance,
        enclosed_zeros: enclosed,
        max_branch_jump: max_jump,
        max_exterior_decay: max_ext,
        bridge_agree: agree,
        bridge_total: total,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::classify::classify_model;
    use crate::expr::{ComponentKind, Expr, WaveFunctionModel};

    fn setup(model: &WaveFunctionModel, xt: P2) -> (BridgeConfig, Vec<SpecialPoint>) {
        let w = Window::square(5.0);
        let br = BridgeConfig::determine(model, &w, 0.05).unwrap();
        let pts = classify_model(model, &br, xt, &w, 0.05).unwrap();
        (br, pts)
    }

    fn params(grid: usize) -> SurfaceParams {
        SurfaceParams {
            grid,
            ..SurfaceParams::default()
        }
    }

    #[test]
    fn smooth_step_shape() {
        assert_eq!(smooth_step(-0.1), 1.0);
        assert_eq!(smooth_step(1.2), 0.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        let mut last = 1.0;
        for k in 1..100 {
            let v = smooth_step(k as f64 / 100.0);
            assert!(v <= last);
            last = v;
        }
    }

    fn line(id: &str, text: &str) -> SingularComponent {
        SingularComponent::parse(id, text, ComponentKind::Branch).unwrap()
    }

    #[test]
    fn crossing_patch_values() {
        let (c1, c2) = (line("a", "xi1"), line("b", "xi2"));
        let xt = [0.6, 0.8];
        let p =
            CrossingPatch::new(&c1, &c2, [1, 1], [0.0, 0.0], xt, 0.3, 0.05, (0.7, 1.2)).unwrap();
        let e0 = p.eta_zeta([0.0, 0.0]);
        assert!((e0[0] - 0.015).abs() < 1e-15 && (e0[1] - 0.015).abs() < 1e-15);
        let l = 1.4;
        let mut rng = 0.123f64;
        for _ in 0..50 {
            rng = (rng * 997.0 + 0.31).fract();
            let z = [0.6 * rng - 0.3, 0.6 * (rng * 7.0).fract() - 0.3];
            let e = p.eta_zeta(z);
            let lhs = dot(xt, e);
            let rhs = 0.05 * l * (0.3 - 2.0 * (z[0].abs() + z[1].abs()));
            assert!((lhs - rhs).abs() < 1e-14, "{lhs} {rhs}");
        }
        // On the square boundary the phase is at most −βρ(|x′₁|+|x′₂|).
        for k in 0..=20 {
            let t = -0.3 + 0.03 * k as f64;
            for z in [[0.3, t], [-0.3, t], [t, 0.3], [t, -0.3]] {
                assert!(dot(xt, p.eta_zeta(z)) <= -0.05 * 0.3 * l + 1e-15);
            }
        }
        // Pulled back through the identity Jacobian, ξ-field equals ζ-field.
        let (e, w) = p.eval([0.01, -0.02]);
        assert_eq!(w, 1.0);
        let ez = p.eta_zeta([0.01, -0.02]);
        assert!((e[0] - ez[0]).abs() < 1e-15 && (e[1] - ez[1]).abs() < 1e-15);
    }

    #[test]
    fn crossing_patch_refuses_inactive_direction() {
        let (c1, c2) = (line("a", "xi1"), line("b", "xi2"));
        let e = CrossingPatch::new(
            &c1,
            &c2,
            [1, 1],
            [0.0, 0.0],
            [-0.6, 0.8],
            0.3,
            0.05,
            (0.7, 1.2),
        )
        .unwrap_err();
        assert!(matches!(e, Error::Surface(_)));
    }

    fn parabola_sos() -> (SosPatch, SingularComponent, P2, f64) {
        let m = builtin::parabola_line();
        let xt = builtin::parabola_line_direction();
        let (_, pts) = setup(&m, xt);
        let sp = pts
            .iter()
            .find(|p| matches!(p.kind, PointKind::Sos { .. }))
            .unwrap();
        let PointKind::Sos {
            component,
            alpha,
            s,
            ..
        } = sp.kind.clone()
        else {
            unreachable!()
        };
        let c = m.components[component].clone();
        (
            SosPatch::new(&c, s, sp.location, alpha, 0.5, 0.5, (0.8, 1.3)).unwrap(),
            c,
            xt,
            alpha,
        )
    }

    #[test]
    fn sos_patch_on_trace_is_transverse() {
        let (p, c, _, alpha) = parabola_sos();
        for x in [-0.3, -0.25, -0.2] {
            let q = [x, x * x];
            let e = p.eta_zeta(p.zeta(q));
            assert!((e[1] - alpha.abs() * 0.5 * 0.25).abs() < 1e-12);
            let (eta, _) = p.eval(q);
            // Row two of the local Jacobian is ∇g, so η·∇g = η″₂.
            assert!((dot(eta, c.grad_real(q)) - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn sos_patch_boundary_phase_negative() {
        let (_, c, xt, alpha) = parabola_sos();
        let beta = 0.5;
        let center = [-0.25, 0.0625];
        let nstar = norm(c.grad_real(center));
        for (rho, tol) in [(0.05, 0.2), (0.005, 0.02)] {
            let p = SosPatch::new(&c, 1, center, alpha, rho, beta, (0.8, 1.3)).unwrap();
            for k in 0..64 {
                let th = 2.0 * PI * k as f64 / 64.0;
                let target = [rho * th.cos(), rho * th.sin()];
                // Newton for ξ with ζ(ξ) = target.
            let mut q = center;
            for _ in 0..30 {
                let z = p.zeta(q);
                let d = p.pull_back(q, [z[0] - target[0], z[1] - target[1]]);
                q = [q[0] - d[0], q[1] - d[1]];
            }
            let pulled = p.pull_back(q, p.eta_zeta(p.zeta(q)));
            let phase = dot(xt, pulled);
                let expect = -alpha.abs() * beta * rho * rho / nstar;
                // Leading order only: the deviation shrinks with ρ.
                assert!(phase < 0.0);
                assert!(
                    (phase - expect).abs() < tol * expect.abs(),
                    "{rho} {th}: {phase} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn sos_patch_half_scaled_clears() {
        let (p, c, _, _) = parabola_sos();
        let r = p.support_radius();
        for i in 0..=80 {
            for j in 0..=80 {
                let q = [
                    p.center[0] - r + 2.0 * r * i as f64 / 80.0,
                    p.center[1] - r + 2.0 * r * j as f64 / 80.0,
                ];
                let (eta, w) = p.eval(q);
                if w < 1.0 {
                    continue;
                }
                let g = c.value(
                    [C64::new(q[0], 0.5 * eta[0]), C64::new(q[1], 0.5 * eta[1])],
                    C64::new(0.0, 0.0),
                );
                assert!(g.norm() > 1e-6);
            }
        }
    }

    #[test]
    fn built_fields_verify() {
        for (m, xt) in [
            (builtin::three_lines(), builtin::three_lines_direction()),
            (builtin::parabola_line(), builtin::parabola_line_direction()),
        ] {
            let (br, pts) = setup(&m, xt);
            let f = build_global_field(&m, &br, xt, &pts, None, &params(400)).unwrap();
            let rep = verify_field(&f, &m, &br, xt).unwrap();
            assert!(rep.pass, "{rep:?}");
            assert_eq!(rep.bridge_agree, rep.bridge_total);
            assert!(rep.bridge_total > 100);
            assert_eq!(f.patches.len(), 2);
        }
    }

    #[test]
    fn three_lines_decays_outside_two_patches() {
        let m = builtin::three_lines();
        let xt = builtin::three_lines_direction();
        let (br, pts) = setup(&m, xt);
        let f = build_global_field(&m, &br, xt, &pts, None, &params(120)).unwrap();
        let kinds: Vec<_> = f.patches.iter().map(|p| p.kind).collect();
        assert_eq!(kinds, vec![PatchKind::Crossing, PatchKind::Crossing]);
        for k in 0..f.eta.len() {
            if f.patch_weight[k] == 0.0 {
                assert!(dot(xt, f.eta[k]) < 0.0);
            }
        }
        // Inside the patches the surface climbs over both traces.
        let e = f.eval([0.0, 0.0]);
        assert!(e[0] > 0.0 && e[1] > 0.0);
    }

    #[test]
    fn no_singularities_give_constant_field() {
        let m = builtin::constant(1.0);
        let xt = [0.6, 0.8];
        let br = BridgeConfig::default();
        let f = build_global_field(&m, &br, xt, &[], None, &params(16)).unwrap();
        for e in &f.eta {
            assert!((e[0] + 0.1 * 0.6).abs() < 1e-15 && (e[1] + 0.1 * 0.8).abs() < 1e-15);
        }
        assert!(verify_field(&f, &m, &br, xt).unwrap().pass);
    }

    #[test]
    fn flat_field_fails_clearance() {
        let m = builtin::three_lines();
        let xt = builtin::three_lines_direction();
        let (br, _) = setup(&m, xt);
        let f = DeformationField::flat(Window::square(2.0), 64, 64).unwrap();
        let rep = verify_field(&f, &m, &br, xt).unwrap();
        assert!(!rep.pass);
        assert!(rep.enclosed_zeros > 0);
    }

    #[test]
    fn tangent_field_fails_clearance() {
        let c = SingularComponent::parse("g", "xi1 - xi2^2", ComponentKind::Branch).unwrap();
        let m = WaveFunctionModel::new(vec![c], vec![(Expr::real(1.0), vec![("g".into(), 0.5)])])
            .unwrap();
        let mut br = BridgeConfig::default();
        br.set("g", 1);
        let f =
            DeformationField::from_fn(Window::square(0.5), 80, 80, 1.0, |_| [0.0, 0.2]).unwrap();
        let rep = verify_field(&f, &m, &br, [1.0, 0.0]).unwrap();
        assert!(!rep.pass);
        assert!(rep.enclosed_zeros > 0, "{rep:?}");
    }

    #[test]
    fn wrong_side_field_fails_bridge_check() {
        let c = SingularComponent::parse("g", "xi1", ComponentKind::Branch).unwrap();
        let m = WaveFunctionModel::new(vec![c], vec![(Expr::real(1.0), vec![("g".into(), 0.5)])])
            .unwrap();
        let mut br = BridgeConfig::default();
        br.set("g", 1);
        let f =
            DeformationField::from_fn(Window::square(1.0), 40, 40, 1.0, |_| [-0.2, 0.1]).unwrap();
        let rep = verify_field(&f, &m, &br, [0.0, -1.0]).unwrap();
        assert_eq!(rep.bridge_agree, 0);
        assert!(rep.failures.iter().any(|s| s.contains("bridge")));
    }

    #[test]
    fn separation_is_enforced() {
        let m = builtin::three_lines();
        let xt = builtin::three_lines_direction();
        let (br, pts) = setup(&m, xt);
        let prm = SurfaceParams {
            crossing_rho: 0.6,
            ..params(32)
        };
        let e = build_global_field(&m, &br, xt, &pts, None, &prm).unwrap_err();
        assert!(matches!(e, Error::Surface(ref s) if s.contains("2 rho")));
    }

    #[test]
    fn csv_exports() {
        let f =
            DeformationField::from_fn(Window::square(1.0), 3, 2, 1.0, |p| [p[0], -p[1]]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,y,eta1,eta2"));
        assert_eq!(text.lines().count(), 7);
        let mut buf = Vec::new();
        f.write_decay_csv([1.0, 0.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,y,xt_dot_eta"));
    }
}
