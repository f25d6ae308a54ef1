//! Reference models used by the built-in scenarios and the tests.

use crate::expr::{parse_expression, ComponentKind, Expr, SingularComponent, WaveFunctionModel};
use crate::geom::P2;

fn model(components: &[(&str, &str)], terms: &[(&str, &[(&str, f64)])]) -> WaveFunctionModel {
    let comps = components
        .iter()
        .map(|(id, g)| {
            SingularComponent::parse(*id, g, ComponentKind::Branch).expect("built-in component")
        })
        .collect();
    let terms = terms
        .iter()
        .map(|(a, fs)| {
            (
                parse_expression(a).expect("built-in amplitude"),
                fs.iter().map(|(id, mu)| (id.to_string(), *mu)).collect(),
            )
        })
        .collect();
    WaveFunctionModel::new(comps, terms).expect("built-in model")
}

/// `1/((ξ₁+iκ)(ξ₂+iκ)(ξ₁+ξ₂−1+iκ))^(1/2)`: three lines crossing pairwise.
pub fn three_lines() -> WaveFunctionModel {
    model(
        &[
            ("g1", "xi1 + i*kappa"),
            ("g2", "xi2 + i*kappa"),
            ("g3", "xi1 + xi2 - 1 + i*kappa"),
        ],
        &[("1", &[("g1", 0.5), ("g2", 0.5), ("g3", 0.5)])],
    )
}

pub fn three_lines_direction() -> P2 {
    let n = 3.06f64.sqrt();
    [1.5 / n, 0.9 / n]
}

/// `1/((ξ₂−2+iκ)(ξ₂−ξ₁²+iκ))^(1/2)`: a parabola cut by a horizontal line.
pub fn parabola_line() -> WaveFunctionModel {
    model(
        &[("g1", "xi2 - 2 + i*kappa"), ("g2", "xi2 - xi1^2 + i*kappa")],
        &[("1", &[("g1", 0.5), ("g2", 0.5)])],
    )
}

pub fn parabola_line_direction() -> P2 {
    let n = 5f64.sqrt();
    [1.0 / n, 2.0 / n]
}

/// `1/((1+iκ)² − ξ₁² − ξ₂²)^(1/2)`: a circular trace.
pub fn circle() -> WaveFunctionModel {
    model(
        &[("c", "(1 + i*kappa)^2 - xi1^2 - xi2^2")],
        &[("1", &[("c", 0.5)])],
    )
}

pub fn circle_direction() -> P2 {
    let h = 0.5f64.sqrt();
    [h, h]
}

/// Constant amplitude with no singular factor.
pub fn constant(value: f64) -> WaveFunctionModel {
    WaveFunctionModel::new(vec![], vec![(Expr::real(value), vec![])]).expect("constant model")
}
