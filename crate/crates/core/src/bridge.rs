//! Which side the integration surface passes each real trace on.
//!
//! Signs are stored relative to the gradient normal `n = ∇g/|∇g|`: `s = +1`
//! means the surface bypasses the trace from above in the `+n` direction.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::expr::{SingularComponent, WaveFunctionModel};
use crate::geom::{dot, Window, P2};
use crate::trace::{frame_at, trace_real_curves};

/// Below this `|Im ∂g/∂κ|` the limiting process gives no indentation rule.
pub const AMBIGUITY_TOL: f64 = 1e-12;
/// Below this `|e·n|` a direction counts as tangent to the trace.
pub const TANGENT_TOL: f64 = 1e-12;
/// Use the `ξ₂`-root variant when `|a| < SWAP_RATIO·|b|`.
pub const SWAP_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Above,
    Below,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Above => "above",
            Side::Below => "below",
        })
    }
}

/// Bridge sign of `c` at the trace point `p`.
///
/// Follows the singular root `ξ₁†(κ) ≈ ξ₁ − κ ∂g/∂κ / a` (or the `ξ₂`-root
/// when `|a|` is small) for small `κ > 0`: a root approaching the real axis
/// from above forces the surface below it, and vice versa. The side found in
/// the coordinate direction is then translated to the `+n` convention.
pub fn determine_bridge(c: &SingularComponent, p: P2) -> Result<i8> {
    let f = frame_at(c, p)?;
    let dk = c.d_kappa_real(p);
    if dk.re.abs() > AMBIGUITY_TOL {
        return Err(Error::Precondition(format!(
            "dg/dkappa = {dk} is not purely imaginary at ({}, {})",
            p[0], p[1]
        )));
    }
    if dk.im.abs() <= AMBIGUITY_TOL {
        return Err(Error::AmbiguousBridge { x: p[0], y: p[1] });
    }
    let (coef, e) = if f.a.abs() >= SWAP_RATIO * f.b.abs() {
        (f.a, [1.0, 0.0])
    } else {
        (f.b, [0.0, 1.0])
    };
    // Im of the root shift per unit κ.
    let root_im = -dk.im / coef;
    let side = if root_im > 0.0 {
        Side::Below
    } else {
        Side::Above
    };
    let en = dot(e, f.n);
    let sign_en = if en > 0.0 { 1 } else { -1 };
    Ok(match side {
        Side::Above => sign_en,
        Side::Below => -sign_en,
    })
}

/// Side from which the surface passes the trace, seen along `e_z`.
pub fn bypass_side(s: i8, e_z: P2, n: P2) -> Result<Side> {
    let en = dot(e_z, n);
    if en.abs() <= TANGENT_TOL {
        return Err(Error::TangentDirection { dot: en.abs() });
    }
    Ok(if en.signum() as i8 * s == 1 {
        Side::Above
    } else {
        Side::Below
    })
}

/// Per-component bridge signs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BridgeConfig {
    pub signs: BTreeMap<String, i8>,
}

impl BridgeConfig {
    pub fn get(&self, id: &str) -> Result<i8> {
        self.signs
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownComponent(id.to_string()))
    }

    pub fn set(&mut self, id: impl Into<String>, s: i8) {
        self.signs.insert(id.into(), if s >= 0 { 1 } else { -1 });
    }

    /// Signs in the model's component order.
    pub fn for_model(&self, model: &WaveFunctionModel) -> Result<Vec<i8>> {
        model.components.iter().map(|c| self.get(&c.id)).collect()
    }

    /// Determines every component's sign from its traces in `window`,
    /// checking that the sign is constant along each traced polyline.
    pub fn determine(model: &WaveFunctionModel, window: &Window, cell_size: f64) -> Result<Self> {
        let mut out = Self::default();
        for c in &model.components {
            let trace = trace_real_curves(c, window, cell_size)?;
            let mut sign: Option<i8> = None;
            for pl in &trace.polylines {
                let step = (pl.points.len() / 20).max(1);
                for p in pl.points.iter().step_by(step) {
                    let s = determine_bridge(c, *p)?;
                    match sign {
                        None => sign = Some(s),
                        Some(t) if t != s => {
                            return Err(Error::Precondition(format!(
                                "bridge sign of `{}` changes along its trace near ({}, {})",
                                c.id, p[0], p[1]
                            )))
                        }
                        _ => {}
                    }
                }
            }
            // A component without real trace in the window never meets the
            // real plane there; its sign only fixes the branch rule.
            let s = match sign {
                Some(s) => s,
                None => {
                    let centre = [(window.x0 + window.x1) / 2.0, (window.y0 + window.y1) / 2.0];
                    if c.d_kappa_real(centre).im < 0.0 {
                        -1
                    } else {
                        1
                    }
                }
            };
            out.set(c.id.clone(), s);
        }
        Ok(out)
    }
}

impl fmt::Display for BridgeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, s) in &self.signs {
            writeln!(f, "{id} = {}", if *s > 0 { "+1" } else { "-1" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{ComponentKind, Expr, C64};
    use proptest::prelude::*;

    fn comp(s: &str) -> SingularComponent {
        SingularComponent::parse("g", s, ComponentKind::Branch).unwrap()
    }

    /// Follows the root of `g(·, ξ₂★; κ)` (or `g(ξ₁★, ·; κ)`) for decreasing κ
    /// and reports the side of the real axis it approaches from.
    fn tracked_root_side(c: &SingularComponent, p: P2, along_xi2: bool) -> f64 {
        let mut im_sum = 0.0;
        for kappa in [1e-1, 1e-2, 1e-3, 1e-4] {
            let mut z = C64::new(if along_xi2 { p[1] } else { p[0] }, 0.0);
            for _ in 0..50 {
                let xi = if along_xi2 {
                    [C64::new(p[0], 0.0), z]
                } else {
                    [z, C64::new(p[1], 0.0)]
                };
                let j = c.jet(xi, C64::new(kappa, 0.0));
                let d = if along_xi2 { j.d_xi2 } else { j.d_xi1 };
                z -= j.value / d;
            }
            im_sum += z.im.signum();
        }
        im_sum
    }

    #[test]
    fn circle_with_outgoing_condition_bypasses_below() {
        let c = comp("xi1^2 + xi2^2 - (1 + i*kappa)^2");
        assert!(tracked_root_side(&c, [1.0, 0.0], false) > 0.0);
        let s = determine_bridge(&c, [1.0, 0.0]).unwrap();
        assert_eq!(s, -1);
        assert_eq!(bypass_side(s, [1.0, 0.0], [1.0, 0.0]).unwrap(), Side::Below);
    }

    #[test]
    fn shifted_lines_are_positive() {
        for (g, p) in [
            ("xi1 + i*kappa", [0.0, 0.3]),
            ("xi2 + i*kappa", [0.7, 0.0]),
            ("xi1 + xi2 - 1 + i*kappa", [0.4, 0.6]),
        ] {
            assert_eq!(determine_bridge(&comp(g), p).unwrap(), 1, "{g}");
        }
    }

    #[test]
    fn bypass_sides_and_errors() {
        assert_eq!(bypass_side(1, [0.0, 1.0], [0.0, 1.0]).unwrap(), Side::Above);
        assert_eq!(
            bypass_side(1, [0.0, -1.0], [0.0, 1.0]).unwrap(),
            Side::Below
        );
        assert!(matches!(
            bypass_side(1, [1.0, 0.0], [0.0, 1.0]),
            Err(Error::TangentDirection { .. })
        ));
        assert!(matches!(
            determine_bridge(&comp("xi1 - 1"), [1.0, 0.0]),
            Err(Error::AmbiguousBridge { .. })
        ));
    }

    #[test]
    fn constant_along_connected_trace() {
        let c = comp("xi1^2 + xi2^2 - (1 + i*kappa)^2");
        let tr = trace_real_curves(&c, &Window::square(2.0), 0.05).unwrap();
        let pl = &tr.polylines[0];
        let step = pl.points.len() / 20;
        let signs: Vec<i8> = (0..20)
            .map(|k| determine_bridge(&c, pl.points[k * step]).unwrap())
            .collect();
        assert!(signs.iter().all(|s| *s == -1));
        let model =
            WaveFunctionModel::new(vec![c], vec![(Expr::one(), vec![("g".into(), 0.5)])]).unwrap();
        let cfg = BridgeConfig::determine(&model, &Window::square(2.0), 0.05).unwrap();
        assert_eq!(cfg.get("g").unwrap(), -1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn shortcut_matches_root_tracking(
            a in -2.0..2.0f64, b in -2.0..2.0f64, c0 in -1.0..1.0f64,
            k in prop_oneof![-2.0..-0.2f64, 0.2..2.0f64], y in -1.0..1.0f64,
        ) {
            prop_assume!(a.hypot(b) > 0.2);
            let g = comp(&format!("{a}*xi1 + {b}*xi2 + {c0} + {k}*i*kappa"));
            let along_xi2 = a.abs() < SWAP_RATIO * b.abs();
            let p = if along_xi2 { [y, -(a * y + c0) / b] } else { [-(b * y + c0) / a, y] };
            let s = determine_bridge(&g, p).unwrap();
            let side = tracked_root_side(&g, p, along_xi2);
            prop_assert!(side.abs() == 4.0);
            let e = if along_xi2 { [0.0, 1.0] } else { [1.0, 0.0] };
            let n = [a / a.hypot(b), b / a.hypot(b)];
            let expected = if side > 0.0 { Side::Below } else { Side::Above };
            prop_assert_eq!(bypass_side(s, e, n).unwrap(), expected);
            prop_assert_eq!(s, k.signum() as i8);
        }

        /// On a surface `ξʳ + iη` with `sign(η·n) = s`, the transverse
        /// coordinate `z = β′g` satisfies `sign(β′ Im z) = s` whatever the
        /// (β′, β″, β‴), and `Im z > 0` exactly when `bypass_side` says above
        /// along `e_z ∝ n/β′ − (β‴/β″) t`.
        #[test]
        fn sign_product_is_independent_of_coordinates(
            b1 in prop_oneof![-3.0..-0.1f64, 0.1..3.0f64],
            b2 in prop_oneof![-3.0..-0.1f64, 0.1..3.0f64],
            b3 in -3.0..3.0f64,
            theta in 0.0..std::f64::consts::TAU,
            s in prop_oneof![Just(1i8), Just(-1i8)],
            tang in -1.0..1.0f64,
        ) {
            let c = comp("xi1^2 + xi2^2 - 1");
            let p = [theta.cos(), theta.sin()];
            let f = frame_at(&c, p).unwrap();
            let eps = 1e-4;
            let eta = [eps * (s as f64 * f.n[0] + tang * f.t[0]), eps * (s as f64 * f.n[1] + tang * f.t[1])];
            let xi = [C64::new(p[0], eta[0]), C64::new(p[1], eta[1])];
            let z = c.value(xi, C64::new(0.0, 0.0)) * b1;
            prop_assert_eq!((b1 * z.im).signum() as i8, s);
            let e_z = [f.n[0] / b1 - b3 / b2 * f.t[0], f.n[1] / b1 - b3 / b2 * f.t[1]];
            let above = bypass_side(s, e_z, f.n).unwrap() == Side::Above;
            prop_assert_eq!(above, z.im > 0.0);
        }
    }
}
