//! Leading-order far-field contributions of contributing points.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;

use statrs::function::gamma::gamma;

use crate::bridge::BridgeConfig;
use crate::classify::{classify_model, PointKind, SpecialPoint, BOUNDARY_TOL};
use crate::error::{Error, Result};
use crate::expr::{WaveFunctionModel, C64};
use crate::geom::{dot, norm, sign_tol, Window, P2};

fn cis(t: f64) -> C64 {
    C64::from_polar(1.0, t)
}

fn check_mu(mu: f64) -> Result<()> {
    if !mu.is_finite() || (mu <= 0.0 && mu.fract() == 0.0) {
        return Err(Error::Domain(format!(
            "exponent {mu} is a non-positive integer: the point is not singular and does not contribute"
        )));
    }
    Ok(())
}

/// `∫ e^(−iaz²) dz = e^(−iπ/4)√(π/a)` for `a > 0`, `e^(iπ/4)√(−π/a)` for `a < 0`.
pub fn fresnel_i(a: f64) -> Result<C64> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::Domain(format!(
            "Fresnel integral needs a nonzero finite coefficient, got {a}"
        )));
    }
    Ok(if a > 0.0 {
        cis(-FRAC_PI_4) * (PI / a).sqrt()
    } else {
        cis(FRAC_PI_4) * (-PI / a).sqrt()
    })
}

/// `∫ (z + i0s)^(−μ) e^(−iaz) dz = 2π e^(−isμπ/2) a^(μ−1)/Γ(μ)` for `a > 0`, zero for `a < 0`.
pub fn power_j(mu: f64, a: f64, s: i8) -> Result<C64> {
    check_mu(mu)?;
    if a == 0.0 || !a.is_finite() {
        return Err(Error::Domain(format!(
            "power integral needs a nonzero finite coefficient, got {a}"
        )));
    }
    if a < 0.0 {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(2.0 * PI * cis(-(s as f64) * mu * FRAC_PI_2) * a.powf(mu - 1.0) / gamma(mu))
}

/// Local data of an SOS term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SosData {
    pub point: P2,
    pub amplitude: C64,
    pub mu: f64,
    pub alpha: f64,
    pub s: i8,
    pub a: f64,
    pub b: f64,
}

/// Local data of a crossing term, components ordered so that `delta > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingData {
    pub point: P2,
    pub amplitude: C64,
    pub mu1: f64,
    pub mu2: f64,
    pub delta: f64,
    pub s1: i8,
    pub s2: i8,
    pub grad1: P2,
    pub grad2: P2,
}

/// SOS contribution at `x = r x̃`; zero when `x̃` is on the unbridged side.
pub fn sos_contribution(d: &SosData, x: P2) -> Result<C64> {
    check_mu(d.mu)?;
    if d.alpha == 0.0 {
        return Err(Error::Domain("degenerate SOS: alpha = 0".into()));
    }
    let n2 = d.a * d.a + d.b * d.b;
    let nn = n2.sqrt();
    let r = norm(x);
    if sign_tol(dot(x, [d.a, d.b]) / (r * nn), BOUNDARY_TOL) * d.s != 1 {
        return Ok(C64::new(0.0, 0.0));
    }
    let sa = d.s as f64 * d.alpha;
    let curv = if sa > 0.0 {
        cis(-FRAC_PI_4) / sa.sqrt()
    } else {
        cis(FRAC_PI_4) / (-sa).sqrt()
    };
    Ok(2.0
        * PI
        * d.amplitude
        * cis(-dot(x, d.point))
        * PI.sqrt()
        * cis(-(d.s as f64) * d.mu * FRAC_PI_2)
        / (n2 * gamma(d.mu))
        * (r / nn).powf(d.mu - 1.5)
        * curv)
}

/// Crossing contribution at `x`; zero outside the active quadrant.
pub fn crossing_contribution(d: &CrossingData, x: P2) -> Result<C64> {
    check_mu(d.mu1)?;
    check_mu(d.mu2)?;
    if !(d.delta > 0.0) {
        return Err(Error::Precondition(
            "crossing components must be ordered so that delta > 0".into(),
        ));
    }
    let [a1, b1] = d.grad1;
    let [a2, b2] = d.grad2;
    let e1 = x[0] * b2 - x[1] * a2;
    let e2 = -x[0] * b1 + x[1] * a1;
    let scale = norm(x) * norm(d.grad1).max(norm(d.grad2));
    if sign_tol(e1 / scale, BOUNDARY_TOL) != d.s1 || sign_tol(e2 / scale, BOUNDARY_TOL) != d.s2 {
        return Ok(C64::new(0.0, 0.0));
    }
    Ok(4.0
        * PI
        * PI
        * d.amplitude
        * cis(-dot(x, d.point))
        * cis(-FRAC_PI_2 * (d.s1 as f64 * d.mu1 + d.s2 as f64 * d.mu2))
        / (gamma(d.mu1) * gamma(d.mu2) * d.delta.powf(d.mu1 + d.mu2 - 1.0))
        * e1.abs().powf(d.mu1 - 1.0)
        * e2.abs().powf(d.mu2 - 1.0))
}

/// Leading term `a₀ λ⁻¹ e^(λG₀)` of `∫ F e^(λG)` at a non-degenerate saddle,
/// where `G = iΦ` near the saddle and `hessian` is that of `Φ`:
/// `a₀ = 2πF e^(iπδ/2)/√|det H|` with `δ = (#positive − #negative eigenvalues)/2`.
pub fn saddle2d_estimate(
    f_value: C64,
    hessian: [[f64; 2]; 2],
    phase_value: C64,
    lambda: f64,
) -> Result<C64> {
    let [[h11, h12], [h21, h22]] = hessian;
    if (h12 - h21).abs() > 1e-12 * (h12.abs() + h21.abs()).max(1.0) {
        return Err(Error::Precondition("Hessian must be symmetric".into()));
    }
    let det = h11 * h22 - h12 * h21;
    if det == 0.0 || !det.is_finite() {
        return Err(Error::Domain("degenerate Hessian".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!(
            "large parameter must be positive, got {lambda}"
        )));
    }
    let delta = if det < 0.0 {
        0.0
    } else if h11 + h22 > 0.0 {
        1.0
    } else {
        -1.0
    };
    let a0 = 2.0 * PI * f_value * cis(PI * delta / 2.0) / det.abs().sqrt();
    Ok(a0 / lambda * (lambda * phase_value).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContributionData {
    Sos(SosData),
    Crossing(CrossingData),
}

/// One leading-order term of the far field.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub source: SpecialPoint,
    pub phase_point: P2,
    /// Exponent of `r` in `|evaluate(r x̃)|`.
    pub r_power: f64,
    pub data: ContributionData,
}

impl Contribution {
    pub fn evaluate(&self, x: P2) -> Result<C64> {
        match &self.data {
            ContributionData::Sos(d) => sos_contribution(d, x),
            ContributionData::Crossing(d) => crossing_contribution(d, x),
        }
    }

    /// `C(x̃)` such that `evaluate(r x̃) = C(x̃) r^r_power e^(−i r x̃·ξ★)`.
    pub fn complex_amplitude(&self, xt: P2) -> Result<C64> {
        Ok(self.evaluate(xt)? * cis(dot(xt, self.phase_point)))
    }
}

/// Classifies every special point in `window` and returns one contribution
/// per contributing point and singular term, in sorted point order.
pub fn assemble_far_field(
    model: &WaveFunctionModel,
    bridges: &BridgeConfig,
    xt: P2,
    window: &Window,
    cell_size: f64,
) -> Result<Vec<Contribution>> {
    let points = classify_model(model, bridges, xt, window, cell_size)?;
    Ok(contributions_from(&points))
}

/// Contributions of the contributing points among `points`.
pub fn contributions_from(points: &[SpecialPoint]) -> Vec<Contribution> {
    let mut out = Vec::new();
    for p in points.iter().filter(|p| p.contributing) {
        match &p.kind {
            PointKind::Sos {
                alpha,
                s,
                a,
                b,
                amplitudes,
                ..
            } => {
                for amp in amplitudes {
                    out.push(Contribution {
                        source: p.clone(),
                        phase_point: p.location,
                        r_power: amp.mu - 1.5,
                        data: ContributionData::Sos(SosData {
                            point: p.location,
                            amplitude: amp.a,
                            mu: amp.mu,
                            alpha: *alpha,
                            s: *s,
                            a: *a,
                            b: *b,
                        }),
                    });
                }
            }
            PointKind::Crossing {
                delta,
                s1,
                s2,
                grad1,
                grad2,
                amplitudes,
                ..
            } => {
                for amp in amplitudes {
                    out.push(Contribution {
                        source: p.clone(),
                        phase_point: p.location,
                        r_power: amp.mu1 + amp.mu2 - 2.0,
                        data: ContributionData::Crossing(CrossingData {
                            point: p.location,
                            amplitude: amp.a,
                            mu1: amp.mu1,
                            mu2: amp.mu2,
                            delta: *delta,
                            s1: *s1,
                            s2: *s2,
                            grad1: *grad1,
                            grad2: *grad2,
                        }),
                    });
                }
            }
            _ => {}
        }
    }
    out
}

/// Sum of all contributions at `x`.
pub fn far_field(contributions: &[Contribution], x: P2) -> Result<C64> {
    contributions
        .iter()
        .try_fold(C64::new(0.0, 0.0), |acc, c| Ok(acc + c.evaluate(x)?))
}

/// Writes `x,y,kind,r_power,re_c,im_c` with `C(x̃)` as in [`Contribution::complex_amplitude`].
pub fn write_expansion_csv<W: Write>(contributions: &[Contribution], xt: P2, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "kind", "r_power", "re_c", "im_c"])?;
    for c in contributions {
        let amp = c.complex_amplitude(xt)?;
        wr.write_record([
            format!("{:.17e}", c.phase_point[0]),
            format!("{:.17e}", c.phase_point[1]),
            c.source.kind.label().to_string(),
            format!("{:.17e}", c.r_power),
            format!("{:.17e}", amp.re),
            format!("{:.17e}", amp.im),
        ])?;
    }
    Ok(wr.flush()?)
}
