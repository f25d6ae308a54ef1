//! Scenario files: a line-oriented `key = value` format with sections.
//!
//! ```text
//! # comment
//! [scenario]
//! name = three_lines
//! direction = 1.5, 0.9
//! r = 2.0, 4.0, 8.0, 16.0
//! grid = 400
//! window = auto
//! classify_window = -5.0, 5.0, -5.0, 5.0
//! trace_cell = 0.05
//! kappa = 0.2
//! integrate = true
//!
//! [patch]
//! crossing_rho = 0.4
//! crossing_beta = 0.2
//! sos_rho = 0.5
//! sos_beta = 0.5
//!
//! [check]
//! slope_min = -2.6
//! slope_max = -1.4
//! max_rel_first = 0.15
//!
//! [components]
//! g1 = branch: xi1 + i*kappa
//!
//! [terms]
//! term = 1 ; g1^0.5
//!
//! [bridges]
//! g1 = +1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::builtin;
use crate::error::{Error, Result};
use crate::expr::{parse_expression, ComponentKind, SingularComponent, WaveFunctionModel};
use crate::geom::{norm, Window, P2};
use crate::surface::SurfaceParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub id: String,
    pub kind: ComponentKind,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermSpec {
    pub amplitude: String,
    pub factors: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchParams {
    pub crossing_rho: f64,
    pub crossing_beta: f64,
    pub sos_rho: f64,
    pub sos_beta: f64,
}

impl Default for PatchParams {
    fn default() -> Self {
        let d = SurfaceParams::default();
        Self {
            crossing_rho: d.crossing_rho,
            crossing_beta: d.crossing_beta,
            sos_rho: d.sos_rho,
            sos_beta: d.sos_beta,
        }
    }
}

/// Pass/fail thresholds applied by the validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checks {
    pub slope_min: f64,
    pub slope_max: f64,
    /// Largest relative discrepancy allowed at the smallest `r`.
    pub max_rel_first: f64,
}

impl Default for Checks {
    fn default() -> Self {
        Self { slope_min: -2.6, slope_max: -1.4, max_rel_first: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Unit observation direction `x̃`.
    pub direction: P2,
    pub r_values: Vec<f64>,
    pub grid: usize,
    /// Integration window; automatic when `None`.
    pub window: Option<Window>,
    /// Region searched for traces and special points.
    pub classify_window: Window,
    pub trace_cell: f64,
    /// Absorption values for the flat-plane reference integrals.
    pub kappa: Vec<f64>,
    /// Whether the surface and integration stages run.
    pub integrate: bool,
    pub patch: PatchParams,
    pub check: Checks,
    pub components: Vec<ComponentSpec>,
    pub terms: Vec<TermSpec>,
    /// Bridge signs fixed by hand; the rest are determined.
    pub bridges: BTreeMap<String, i8>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            direction: [1.0, 0.0],
            r_values: vec![2.0, 4.0, 8.0, 16.0],
            grid: 400,
            window: None,
            classify_window: Window::square(5.0),
            trace_cell: 0.05,
            kappa: Vec::new(),
            integrate: true,
            patch: PatchParams::default(),
            check: Checks::default(),
            components: Vec::new(),
            terms: Vec::new(),
            bridges: BTreeMap::new(),
        }
    }
}

/// Names accepted by [`builtin_scenario`].
pub const BUILTIN_SCENARIOS: [&str; 3] = ["three_lines", "parabola_line", "circle"];

fn branch(id: &str, expr: &str) -> ComponentSpec {
    ComponentSpec { id: id.into(), kind: ComponentKind::Branch, expr: expr.into() }
}

fn halves(ids: &[&str]) -> TermSpec {
    TermSpec { amplitude: "1".into(), factors: ids.iter().map(|i| (i.to_string(), 0.5)).collect() }
}

/// The reference scenarios shipped with the crate.
pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    let sc = match name {
        "three_lines" => Scenario {
            name: name.into(),
            direction: builtin::three_lines_direction(),
            kappa: vec![0.2],
            components: vec![
                branch("g1", "xi1 + i*kappa"),
                branch("g2", "xi2 + i*kappa"),
                branch("g3", "xi1 + xi2 - 1 + i*kappa"),
            ],
            terms: vec![halves(&["g1", "g2", "g3"])],
            ..Scenario::default()
        },
        "parabola_line" => Scenario {
            name: name.into(),
            direction: builtin::parabola_line_direction(),
            components: vec![branch("g1", "xi2 - 2 + i*kappa"), branch("g2", "xi2 - xi1^2 + i*kappa")],
            terms: vec![halves(&["g1", "g2"])],
            ..Scenario::default()
        },
        "circle" => Scenario {
            name: name.into(),
            direction: builtin::circle_direction(),
            integrate: false,
            components: vec![ComponentSpec {
                id: "c".into(),
                kind: ComponentKind::Pole,
                expr: "(1 + i*kappa)^2 - xi1^2 - xi2^2".into(),
            }],
            terms: vec![TermSpec { amplitude: "1".into(), factors: vec![("c".into(), 1.0)] }],
            ..Scenario::default()
        },
        _ => return None,
    };
    Some(sc)
}

impl Scenario {
    /// Compiles the components and terms.
    pub fn model(&self) -> Result<WaveFunctionModel> {
        let comps = self
            .components
            .iter()
            .map(|c| SingularComponent::parse(c.id.clone(), &c.expr, c.kind).map_err(|e| e.in_scenario(format!("component {}", c.id))))
            .collect::<Result<Vec<_>>>()?;
        let terms = self
            .terms
            .iter()
            .enumerate()
            .map(|(k, t)| {
                parse_expression(&t.amplitude)
                    .map(|a| (a, t.factors.clone()))
                    .map_err(|e| e.in_scenario(format!("term {}", k + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        WaveFunctionModel::new(comps, terms).map_err(|e| e.in_scenario("terms"))
    }

    /// Surface parameters with the scenario's grid and patch sizes.
    pub fn surface_params(&self) -> SurfaceParams {
        SurfaceParams {
            grid: self.grid,
            crossing_rho: self.patch.crossing_rho,
            crossing_beta: self.patch.crossing_beta,
            sos_rho: self.patch.sos_rho,
            sos_beta: self.patch.sos_beta,
            ..SurfaceParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Scenario { line: 0, msg });
        if (norm(self.direction) - 1.0).abs() > 1e-12 {
            return bad(format!("direction {:?} is not a unit vector", self.direction));
        }
        if self.r_values.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("r values must be positive".into());
        }
        if self.grid < 2 {
            return bad("grid must be at least 2".into());
        }
        if !(self.trace_cell > 0.0) {
            return bad("trace_cell must be positive".into());
        }
        if self.kappa.iter().any(|k| !(*k > 0.0)) {
            return bad("reference kappa values must be positive".into());
        }
        for id in self.bridges.keys() {
            if !self.components.iter().any(|c| &c.id == id) {
                return bad(format!("bridge for unknown component `{id}`"));
            }
        }
        Ok(())
    }

    /// Parses scenario text; the direction is normalised.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sc = Scenario::default();
        let mut section = String::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let err = |msg: String| Error::Scenario { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
                section = name.trim().to_string();
                if !["scenario", "patch", "check", "components", "terms", "bridges"].contains(&section.as_str()) {
                    return Err(err(format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| err(format!("bad number `{}`", v.trim())));
            let list = |v: &str| -> Result<Vec<f64>> {
                if v.trim().is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',').map(num).collect()
            };
            match section.as_str() {
                "scenario" => match key {
                    "name" => sc.name = value.to_string(),
                    "direction" => {
                        let v = list(value)?;
                        if v.len() != 2 {
                            return Err(err("direction needs two numbers".into()));
                        }
                        let n = norm([v[0], v[1]]);
                        if !(n > 0.0 && n.is_finite()) {
                            return Err(err("direction must be non-zero".into()));
                        }
                        sc.direction = if (n - 1.0).abs() <= 1e-14 { [v[0], v[1]] } else { [v[0] / n, v[1] / n] };
                    }
                    "r" => sc.r_values = list(value)?,
                    "grid" => sc.grid = value.parse().map_err(|_| err(format!("bad grid `{value}`")))?,
                    "window" => {
                        sc.window = if value == "auto" { None } else { Some(window(&list(value)?).map_err(|e| err(e.to_string()))?) }
                    }
                    "classify_window" => sc.classify_window = window(&list(value)?).map_err(|e| err(e.to_string()))?,
                    "trace_cell" => sc.trace_cell = num(value)?,
                    "kappa" => sc.kappa = list(value)?,
                    "integrate" => {
                        sc.integrate = value.parse().map_err(|_| err(format!("expected true or false, got `{value}`")))?
                    }
                    _ => return Err(err(format!("unknown key `{key}` in [scenario]"))),
                },
                "patch" => {
                    let v = num(value)?;
                    match key {
                        "crossing_rho" => sc.patch.crossing_rho = v,
                        "crossing_beta" => sc.patch.crossing_beta = v,
                        "sos_rho" => sc.patch.sos_rho = v,
                        "sos_beta" => sc.patch.sos_beta = v,
                        _ => return Err(err(format!("unknown key `{key}` in [patch]"))),
                    }
                }
                "check" => {
                    let v = num(value)?;
                    match key {
                        "slope_min" => sc.check.slope_min = v,
                        "slope_max" => sc.check.slope_max = v,
                        "max_rel_first" => sc.check.max_rel_first = v,
                        _ => return Err(err(format!("unknown key `{key}` in [check]"))),
                    }
                }
                "components" => {
                    let (kind, expr) = match value.split_once(':') {
                        Some(("branch", e)) => (ComponentKind::Branch, e.trim()),
                        Some(("pole", e)) => (ComponentKind::Pole, e.trim()),
                        Some((k, _)) => return Err(err(format!("unknown component kind `{k}`"))),
                        None => (ComponentKind::Branch, value),
                    };
                    if sc.components.iter().any(|c| c.id == key) {
                        return Err(err(format!("duplicate component `{key}`")));
                    }
                    parse_expression(expr).map_err(|e| err(format!("component {key}: {e}")))?;
                    sc.components.push(ComponentSpec { id: key.to_string(), kind, expr: expr.to_string() });
                }
                "terms" => {
                    if key != "term" {
                        return Err(err(format!("expected `term = ...`, got `{key}`")));
                    }
                    let (amp, factors) = value.split_once(';').unwrap_or((value, ""));
                    parse_expression(amp.trim()).map_err(|e| err(format!("amplitude: {e}")))?;
                    let factors = factors
                        .split_whitespace()
                        .map(|f| {
                            let (id, mu) = f.split_once('^').ok_or_else(|| err(format!("factor `{f}` needs `id^mu`")))?;
                            Ok((id.to_string(), num(mu)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    sc.terms.push(TermSpec { amplitude: amp.trim().to_string(), factors });
                }
                "bridges" => {
                    let s = match value {
                        "+1" | "1" => 1,
                        "-1" => -1,
                        _ => return Err(err(format!("bridge sign must be +1 or -1, got `{value}`"))),
                    };
                    sc.bridges.insert(key.to_string(), s);
                }
                _ => return Err(err("key outside any section".into())),
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Canonical text; [`Scenario::parse`] inverts it exactly.
    pub fn to_text(&self) -> String {
        let f = |v: f64| format!("{v:?}");
        let fl = |v: &[f64]| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ");
        let win = |w: &Window| fl(&[w.x0, w.x1, w.y0, w.y1]);
        let mut s = String::new();
        let _ = writeln!(s, "[scenario]");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "direction = {}", fl(&self.direction));
        let _ = writeln!(s, "r = {}", fl(&self.r_values));
        let _ = writeln!(s, "grid = {}", self.grid);
        let _ = writeln!(s, "window = {}", self.window.as_ref().map_or("auto".to_string(), win));
        let _ = writeln!(s, "classify_window = {}", win(&self.classify_window));
        let _ = writeln!(s, "trace_cell = {}", f(self.trace_cell));
        let _ = writeln!(s, "kappa = {}", fl(&self.kappa));
        let _ = writeln!(s, "integrate = {}", self.integrate);
        let _ = writeln!(s, "\n[patch]");
        let _ = writeln!(s, "crossing_rho = {}", f(self.patch.crossing_rho));
        let _ = writeln!(s, "crossing_beta = {}", f(self.patch.crossing_beta));
        let _ = writeln!(s, "sos_rho = {}", f(self.patch.sos_rho));
        let _ = writeln!(s, "sos_beta = {}", f(self.patch.sos_beta));
        let _ = writeln!(s, "\n[check]");
        let _ = writeln!(s, "slope_min = {}", f(self.check.slope_min));
        let _ = writeln!(s, "slope_max = {}", f(self.check.slope_max));
        let _ = writeln!(s, "max_rel_first = {}", f(self.check.max_rel_first));
        let _ = writeln!(s, "\n[components]");
        for c in &self.components {
            let kind = match c.kind {
                ComponentKind::Branch => "branch",
                ComponentKind::Pole => "pole",
            };
            let _ = writeln!(s, "{} = {kind}: {}", c.id, c.expr);
        }
        let _ = writeln!(s, "\n[terms]");
        for t in &self.terms {
            let fs: Vec<String> = t.factors.iter().map(|(id, mu)| format!("{id}^{}", f(*mu))).collect();
            let _ = writeln!(s, "term = {} ; {}", t.amplitude, fs.join(" "));
        }
        if !self.bridges.is_empty() {
            let _ = writeln!(s, "\n[bridges]");
            for (id, sg) in &self.bridges {
                let _ = writeln!(s, "{id} = {}", if *sg > 0 { "+1" } else { "-1" });
            }
        }
        s
    }

    /// Loads a scenario file, or a built-in scenario by name.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some(sc) = path.to_str().and_then(builtin_scenario) {
                return Ok(sc);
            }
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

fn window(v: &[f64]) -> Result<Window> {
    if v.len() != 4 {
        return Err(Error::Precondition("window needs x0, x1, y0, y1".into()));
    }
    Window::new(v[0], v[1], v[2], v[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtins_round_trip_and_compile() {
        for name in BUILTIN_SCENARIOS {
            let sc = builtin_scenario(name).unwrap();
            sc.validate().unwrap();
            sc.model().unwrap();
            assert_eq!(Scenario::parse(&sc.to_text()).unwrap(), sc);
        }
        assert!(builtin_scenario("nope").is_none());
    }

    #[test]
    fn direction_is_normalised() {
        let sc = Scenario::parse("[scenario]\ndirection = 3, 4\n").unwrap();
        assert_eq!(sc.direction, [0.6, 0.8]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("[scenario]\nname = x\n\nr = 2, oops\n").unwrap_err();
        assert_eq!(e, Error::Scenario { line: 4, msg: "bad number `oops`".into() });
        let e = Scenario::parse("[nope]\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 1, .. }));
        let e = Scenario::parse("[components]\ng = xi1 +\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { line: 2, .. }));
        let e = Scenario::parse("[scenario]\nr = 2, -1\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { .. }));
        let e = Scenario::parse("[bridges]\ng = +1\n").unwrap_err();
        assert!(matches!(e, Error::Scenario { .. }));
    }

    #[test]
    fn model_errors_name_the_element() {
        let sc = Scenario {
            components: vec![branch("g", "xi1")],
            terms: vec![TermSpec { amplitude: "1".into(), factors: vec![("h".into(), 0.5)] }],
            ..Scenario::default()
        };
        let e = sc.model().unwrap_err();
        assert!(matches!(e, Error::InScenario { ref element, .. } if element == "terms"));
    }

    #[test]
    fn comments_and_kinds() {
        let text = "# header\n[components]\nq = pole: xi1 - xi2 # trailing\n[terms]\nterm = 2*xi1 ; q^1.0\n";
        let sc = Scenario::parse(text).unwrap();
        assert_eq!(sc.components[0].kind, ComponentKind::Pole);
        assert_eq!(sc.components[0].expr, "xi1 - xi2");
        assert_eq!(sc.terms[0].factors, vec![("q".to_string(), 1.0)]);
    }

    fn arb_scenario() -> impl Strategy<Value = Scenario> {
        (
            "[a-z][a-z0-9_]{0,8}",
            (-10.0f64..10.0, -10.0f64..10.0).prop_filter("non-zero", |(a, b)| a.hypot(*b) > 1e-3),
            prop::collection::vec(0.01f64..100.0, 1..6),
            2usize..1000,
            prop::option::of((-9.0f64..-1.0, 1.0f64..9.0)),
            prop::collection::vec(0.001f64..1.0, 0..3),
            any::<bool>(),
            (0.01f64..1.0, 0.01f64..1.0),
            prop::collection::vec((0.05f64..0.95, any::<bool>()), 1..4),
        )
            .prop_map(|(name, d, r, grid, win, kappa, integrate, (rho, beta), comps)| {
                let n = d.0.hypot(d.1);
                let components: Vec<ComponentSpec> = comps
                    .iter()
                    .enumerate()
                    .map(|(k, (_, pole))| ComponentSpec {
                        id: format!("g{k}"),
                        kind: if *pole { ComponentKind::Pole } else { ComponentKind::Branch },
                        expr: format!("xi1 - {k}*xi2 + i*kappa"),
                    })
                    .collect();
                let terms = vec![TermSpec {
                    amplitude: "1".into(),
                    factors: comps.iter().enumerate().map(|(k, (mu, _))| (format!("g{k}"), *mu)).collect(),
                }];
                let bridges = components.iter().take(1).map(|c| (c.id.clone(), -1)).collect();
                Scenario {
                    name,
                    direction: [d.0 / n, d.1 / n],
                    r_values: r,
                    grid,
                    window: win.map(|(a, b)| Window::new(a, b, a, b).unwrap()),
                    kappa,
                    integrate,
                    patch: PatchParams { crossing_rho: rho, crossing_beta: beta, ..PatchParams::default() },
                    components,
                    terms,
                    bridges,
                    ..Scenario::default()
                }
            })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(sc in arb_scenario()) {
            let back = Scenario::parse(&sc.to_text()).unwrap();
            prop_assert_eq!(back, sc);
        }
    }
}
