//! Branch-consistent evaluation of `F` off the real plane.

use crate::bridge::BridgeConfig;
use crate::error::{Error, Result};
use crate::expr::{WaveFunctionModel, C64};
use crate::geom::{Window, P2};
use crate::surface::DeformationField;

use rayon::prelude::*;

use std::f64::consts::{FRAC_PI_2, PI};

/// Distance to a cut ray at or below which evaluation is refused.
pub const CUT_TOL: f64 = 1e-14;

/// `log w` with the cut along the ray `arg w = −sπ/2`.
///
/// For `s = +1` the argument lies in `(−π/2, 3π/2]`, for `s = −1` in
/// `(−3π/2, π/2]`, so values with `sign(Im w) = s` and both halves of the real
/// axis are reached continuously.
pub fn branch_log(w: C64, s: i8) -> Result<C64> {
    // Distance from w to the ray {−i s t : t ≥ 0}.
    let along = -(s as f64) * w.im;
    let dist = if along >= 0.0 { w.re.abs() } else { w.norm() };
    if dist <= CUT_TOL {
        return Err(Error::CutProximity { re: w.re, im: w.im });
    }
    let mut a = w.arg();
    if s > 0 {
        if a <= -FRAC_PI_2 {
            a += 2.0 * PI;
        }
    } else if a > FRAC_PI_2 {
        a -= 2.0 * PI;
    }
    Ok(C64::new(w.norm().ln(), a))
}

/// `w^(−μ)` on the branch of [`branch_log`].
pub fn branch_power(w: C64, mu: f64, s: i8) -> Result<C64> {
    Ok((-mu * branch_log(w, s)?).exp())
}

/// Value of term `k` of `model` at `(ξ; κ)` with per-component signs.
pub fn term_value(
    model: &WaveFunctionModel,
    k: usize,
    xi: [C64; 2],
    kappa: C64,
    signs: &[i8],
) -> Result<C64> {
    let t = &model.terms[k];
    let mut v = t.amplitude.value(xi, kappa);
    for f in &t.factors {
        let g = model.components[f.component].value(xi, kappa);
        v *= branch_power(g, f.mu, signs[f.component])?;
    }
    Ok(v)
}

/// `F(ξ; κ)` summed over terms, with signs in component order.
pub fn evaluate_with_signs(
    model: &WaveFunctionModel,
    xi: [C64; 2],
    kappa: C64,
    signs: &[i8],
) -> Result<C64> {
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..model.terms.len() {
        acc += term_value(model, k, xi, kappa, signs)?;
    }
    Ok(acc)
}

/// `F(ξ; 0)` at a complex point under the bridge-dependent branch rule.
pub fn branch_evaluate(
    model: &WaveFunctionModel,
    xi: [C64; 2],
    bridges: &BridgeConfig,
) -> Result<C64> {
    evaluate_with_signs(model, xi, C64::new(0.0, 0.0), &bridges.for_model(model)?)
}

/// Grid used by [`integrate_reference`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub window: Window,
    pub n1: usize,
    pub n2: usize,
}

/// A quadrature value with the magnitude of its outermost ring of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: C64,
    /// Sum of `|integrand · weight|` over the boundary cells, as an
    /// estimate of the truncated tail.
    pub tail_estimate: f64,
}

/// Deterministic pairwise sum.
pub fn pairwise_sum(v: &[C64]) -> C64 {
    if v.len() <= 8 {
        return v.iter().fold(C64::new(0.0, 0.0), |a, b| a + b);
    }
    let m = v.len() / 2;
    pairwise_sum(&v[..m]) + pairwise_sum(&v[m..])
}

fn integrate_nodes(
    model: &WaveFunctionModel,
    field: &DeformationField,
    xs: &[P2],
    kappa: f64,
    signs: &[i8],
    weight: impl Fn(usize, usize) -> C64 + Sync,
) -> Result<Vec<QuadResult>> {
    let (n1, n2) = (field.n1, field.n2);
    let kap = C64::new(kappa, 0.0);
    // Per node: F · weight and the complex point, in node order.
    let nodes: Vec<(C64, [C64; 2])> = (0..n1 * n2)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n2, k % n2);
            let p = field.node(i, j);
            let e = field.eta[k];
            let z = [C64::new(p[0], e[0]), C64::new(p[1], e[1])];
            let f = evaluate_with_signs(model, z, kap, signs)?;
            if !f.is_finite() {
                return Err(Error::NonFinite { i, j });
            }
            Ok((f * weight(i, j), z))
        })
        .collect::<Result<_>>()?;
    let im = C64::new(0.0, 1.0);
    Ok(xs
        .iter()
        .map(|x| {
            let terms: Vec<C64> = nodes
                .par_iter()
                .map(|(fw, z)| fw * (-im * (x[0] * z[0] + x[1] * z[1])).exp())
                .collect();
            let mut tail = 0.0;
            for i in 0..n1 {
                for j in 0..n2 {
                    if i == 0 || j == 0 || i == n1 - 1 || j == n2 - 1 {
                        tail += terms[i * n2 + j].norm();
                    }
                }
            }
            QuadResult {
                value: pairwise_sum(&terms),
                tail_estimate: tail,
            }
        })
        .collect())
}

/// `∫ F(ξ; κ) e^{−i x·ξ} dξ` over the surface `ξʳ + iη(ξʳ)` for every `x`.
///
/// Midpoint rule on the cell centres with the wedge weight
/// `det(I + i ∂η/∂ξ) h₁h₂`; the sum is pairwise in node order, so the
/// result does not depend on the number of threads.
pub fn integrate_on_surface(
    model: &WaveFunctionModel,
    field: &DeformationField,
    xs: &[P2],
    kappa: f64,
    bridges: &BridgeConfig,
) -> Result<Vec<QuadResult>> {
    let signs = bridges.for_model(model)?;
    integrate_nodes(model, field, xs, kappa, &signs, |i, j| {
        field.wedge_weight(i, j)
    })
}

/// Flat-plane integral for `κ > 0`, where `F` is regular on ℝ².
pub fn integrate_reference(
    model: &WaveFunctionModel,
    kappa: f64,
    xs: &[P2],
    config: &QuadratureConfig,
) -> Result<Vec<QuadResult>> {
    if !(kappa > 0.0) {
        return Err(Error::Precondition(format!(
            "reference integral needs kappa > 0, got {kappa}"
        )));
    }
    let flat = DeformationField::flat(config.window, config.n1, config.n2)?;
    let (h1, h2) = flat.steps();
    // With κ > 0 every Im g has the sign of its κ-derivative on the plane.
    let signs: Vec<i8> = model
        .components
        .iter()
        .map(|c| {
            let p = [
                0.5 * (config.window.x0 + config.window.x1),
                0.5 * (config.window.y0 + config.window.y1),
            ];
            let v = c.value(
                [C64::new(p[0], 0.0), C64::new(p[1], 0.0)],
                C64::new(kappa, 0.0),
            );
            if v.im < 0.0 {
                -1
            } else {
                1
            }
        })
        .collect();
    integrate_nodes(model, &flat, xs, kappa, &signs, |_, _| {
        C64::new(h1 * h2, 0.0)
    })
}

/// Writes `x,y,log10_abs` of `|F e^{−i x·ζ} w|` per node.
pub fn write_integrand_heatmap<W: std::io::Write>(
    model: &WaveFunctionModel,
    field: &DeformationField,
    x: P2,
    bridges: &BridgeConfig,
    w: W,
) -> Result<()> {
    let signs = bridges.for_model(model)?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "log10_abs"])?;
    let im = C64::new(0.0, 1.0);
    for i in 0..field.n1 {
        for j in 0..field.n2 {
            let p = field.node(i, j);
            let e = field.eta[i * field.n2 + j];
            let z = [C64::new(p[0], e[0]), C64::new(p[1], e[1])];
            let f = evaluate_with_signs(model, z, C64::new(0.0, 0.0), &signs)?;
            let v = f * (-im * (x[0] * z[0] + x[1] * z[1])).exp() * field.wedge_weight(i, j);
            wr.write_record(
                [p[0], p[1], v.norm().log10()]
                    .iter()
                    .map(|v| format!("{v:.10e}")),
            )?;
        }
    }
    wr.flush()?;
    Ok(())
}
