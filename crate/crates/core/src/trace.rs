//! Real traces `{g(ξʳ; 0) = 0}`: curve tracing, local frames and the
//! quadratic coefficient of the trace seen from its normal.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::expr::SingularComponent;
use crate::geom::{dot, sub, Window, P2};

/// Vertices are polished until `|g| <= TRACE_TOL`.
pub const TRACE_TOL: f64 = 1e-10;
/// `a² + b²` at or below this is a singular point of the trace.
pub const DEGENERATE_GRAD2: f64 = 1e-20;

/// One connected piece of a real trace, oriented along `t = (−b, a)/|∇g|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<P2>,
    /// Gradient `(a, b)` at each vertex.
    pub grads: Vec<P2>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealTrace {
    pub component_id: String,
    pub polylines: Vec<Polyline>,
}

impl RealTrace {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn vertices(&self) -> impl Iterator<Item = (P2, P2)> + '_ {
        self.polylines
            .iter()
            .flat_map(|p| p.points.iter().copied().zip(p.grads.iter().copied()))
    }

    /// Writes `x,y,a,b` rows, one per vertex.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "a", "b"])?;
        for (p, g) in self.vertices() {
            wr.write_record([p[0], p[1], g[0], g[1]].iter().map(|v| format!("{v:.17e}")))?;
        }
        wr.flush()
    }
}

/// Normal/tangent frame at a trace point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub point: P2,
    pub a: f64,
    pub b: f64,
    /// `(a, b)/norm`.
    pub n: P2,
    /// `(−b, a)/norm`.
    pub t: P2,
    pub norm: f64,
}

/// Newton iteration along the gradient onto `g = 0`.
pub fn polish_onto_trace(c: &SingularComponent, mut p: P2) -> Result<P2> {
    for _ in 0..60 {
        let g = c.g_real(p);
        if g.abs() <= 0.01 * TRACE_TOL {
            return Ok(p);
        }
        let [a, b] = c.grad_real(p);
        let n2 = a * a + b * b;
        if n2 <= DEGENERATE_GRAD2 {
            return Err(Error::DegenerateGradient {
                x: p[0],
                y: p[1],
                norm2: n2,
            });
        }
        let q = [p[0] - g * a / n2, p[1] - g * b / n2];
        if q == p {
            break;
        }
        p = q;
    }
    let g = c.g_real(p);
    if g.abs() <= TRACE_TOL {
        Ok(p)
    } else {
        Err(Error::OffTrace {
            x: p[0],
            y: p[1],
            residual: g.abs(),
        })
    }
}

/// Marching-squares scan of the real trace over `window`, vertices polished
/// onto the curve and linked into oriented polylines.
pub fn trace_real_curves(
    c: &SingularComponent,
    window: &Window,
    cell_size: f64,
) -> Result<RealTrace> {
    if !(cell_size > 0.0) {
        return Err(Error::Precondition(format!(
            "cell_size must be positive, got {cell_size}"
        )));
    }
    let nx = (window.width() / cell_size).ceil().max(1.0) as usize;
    let ny = (window.height() / cell_size).ceil().max(1.0) as usize;
    let hx = window.width() / nx as f64;
    let hy = window.height() / ny as f64;
    let node = |i: usize, j: usize| [window.x0 + i as f64 * hx, window.y0 + j as f64 * hy];
    let vals: Vec<f64> = (0..=nx)
        .flat_map(|i| (0..=ny).map(move |j| (i, j)))
        .map(|(i, j)| c.g_real(node(i, j)))
        .collect();
    let v = |i: usize, j: usize| vals[i * (ny + 1) + j];
    let pos = |x: f64| x >= 0.0;

    // Edge keys: (i, j, 0) horizontal from node (i,j) to (i+1,j); (i, j, 1) vertical to (i,j+1).
    type Key = (usize, usize, u8);
    let mut points: HashMap<Key, P2> = HashMap::new();
    let mut edge_point = |k: Key| -> Result<P2> {
        if let Some(p) = points.get(&k) {
            return Ok(*p);
        }
        let (i, j, d) = k;
        let (p0, p1, v0, v1) = if d == 0 {
            (node(i, j), node(i + 1, j), v(i, j), v(i + 1, j))
        } else {
            (node(i, j), node(i, j + 1), v(i, j), v(i, j + 1))
        };
        let t = if v0 == v1 { 0.5 } else { v0 / (v0 - v1) };
        let guess = [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])];
        let p = polish_onto_trace(c, guess)?;
        points.insert(k, p);
        Ok(p)
    };

    let mut adj: HashMap<Key, Vec<Key>> = HashMap::new();
    let mut order: Vec<Key> = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let s = [
                pos(v(i, j)),
                pos(v(i + 1, j)),
                pos(v(i + 1, j + 1)),
                pos(v(i, j + 1)),
            ];
            // Cell edges in counter-clockwise order: bottom, right, top, left.
            let edges: [Key; 4] = [(i, j, 0), (i + 1, j, 1), (i, j + 1, 0), (i, j, 1)];
            let cut: Vec<usize> = (0..4).filter(|&e| s[e] != s[(e + 1) % 4]).collect();
            let pairs: Vec<(usize, usize)> = match cut.len() {
                2 => vec![(cut[0], cut[1])],
                4 => {
                    let centre = c.g_real([
                        window.x0 + (i as f64 + 0.5) * hx,
                        window.y0 + (j as f64 + 0.5) * hy,
                    ]);
                    // Corners sharing the centre's sign are joined through the cell.
                    if pos(centre) == s[0] {
                        vec![(0, 3), (1, 2)]
                    } else {
                        vec![(0, 1), (2, 3)]
                    }
                }
                _ => vec![],
            };
            for (e0, e1) in pairs {
                let (k0, k1) = (edges[e0], edges[e1]);
                for k in [k0, k1] {
                    edge_point(k)?;
                    if !adj.contains_key(&k) {
                        order.push(k);
                    }
                }
                adj.entry(k0).or_default().push(k1);
                adj.entry(k1).or_default().push(k0);
            }
        }
    }

    let mut visited: HashMap<Key, bool> = HashMap::new();
    let mut chains: Vec<(Vec<Key>, bool)> = Vec::new();
    let walk = |start: Key, visited: &mut HashMap<Key, bool>| -> (Vec<Key>, bool) {
        let mut chain = vec![start];
        visited.insert(start, true);
        let mut cur = start;
        loop {
            let next = adj[&cur].iter().copied().find(|k| !visited.contains_key(k));
            match next {
                Some(n) => {
                    visited.insert(n, true);
                    chain.push(n);
                    cur = n;
                }
                None => {
                    let closed = chain.len() > 2 && adj[&cur].contains(&start);
                    return (chain, closed);
                }
            }
        }
    };
    for &k in &order {
        if adj[&k].len() == 1 && !visited.contains_key(&k) {
            chains.push(walk(k, &mut visited));
        }
    }
    for &k in &order {
        if !visited.contains_key(&k) {
            chains.push(walk(k, &mut visited));
        }
    }

    let mut polylines = Vec::with_capacity(chains.len());
    for (keys, closed) in chains {
        let mut pts: Vec<P2> = Vec::with_capacity(keys.len());
        for k in keys {
            let p = points[&k];
            // Polishing can map neighbouring edge points onto the same vertex.
            if pts.last().map_or(true, |q: &P2| sub(p, *q) != [0.0, 0.0]) {
                pts.push(p);
            }
        }
        let mut grads: Vec<P2> = pts.iter().map(|p| c.grad_real(*p)).collect();
        let along: f64 = pts
            .windows(2)
            .zip(&grads)
            .map(|(w, g)| dot(sub(w[1], w[0]), [-g[1], g[0]]).signum())
            .sum();
        if along < 0.0 {
            pts.reverse();
            grads.reverse();
        }
        polylines.push(Polyline {
            points: pts,
            grads,
            closed,
        });
    }
    Ok(RealTrace {
        component_id: c.id.clone(),
        polylines,
    })
}

/// Local frame from the exact gradient at a trace point.
pub fn frame_at(c: &SingularComponent, p: P2) -> Result<LocalFrame> {
    let g = c.g_real(p);
    if g.abs() > TRACE_TOL {
        return Err(Error::OffTrace {
            x: p[0],
            y: p[1],
            residual: g.abs(),
        });
    }
    frame_unchecked(c, p)
}

/// Frame from the gradient without the on-trace check.
pub fn frame_unchecked(c: &SingularComponent, p: P2) -> Result<LocalFrame> {
    let [a, b] = c.grad_real(p);
    let n2 = a * a + b * b;
    if n2 <= DEGENERATE_GRAD2 {
        return Err(Error::DegenerateGradient {
            x: p[0],
            y: p[1],
            norm2: n2,
        });
    }
    let norm = n2.sqrt();
    Ok(LocalFrame {
        point: p,
        a,
        b,
        n: [a / norm, b / norm],
        t: [-b / norm, a / norm],
        norm,
    })
}

/// Quadratic coefficient of `g` along the trace tangent:
/// `α = −(b²α̃ + a²β̃ − abγ̃)/(a²+b²)²` with `α̃ = ½g₁₁`, `β̃ = ½g₂₂`, `γ̃ = g₁₂`.
pub fn alpha_at(c: &SingularComponent, p: P2) -> Result<f64> {
    let f = frame_at(c, p)?;
    Ok(alpha_from(f.a, f.b, c.hessian_real(p)))
}

pub fn alpha_from(a: f64, b: f64, h: [[f64; 2]; 2]) -> f64 {
    let (at, bt, gt) = (0.5 * h[0][0], 0.5 * h[1][1], h[0][1]);
    let n2 = a * a + b * b;
    -(b * b * at + a * a * bt - a * b * gt) / (n2 * n2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ComponentKind;
    use proptest::prelude::*;

    fn comp(s: &str) -> SingularComponent {
        SingularComponent::parse("g", s, ComponentKind::Branch).unwrap()
    }

    #[test]
    fn circle_traces_to_one_closed_loop() {
        let c = comp("xi1^2 + xi2^2 - 1");
        let cell = 0.05;
        let tr = trace_real_curves(&c, &Window::square(2.0), cell).unwrap();
        assert_eq!(tr.polylines.len(), 1);
        let pl = &tr.polylines[0];
        assert!(pl.closed);
        for p in &pl.points {
            assert!((p[0].hypot(p[1]) - 1.0).abs() <= cell * cell);
            assert!(c.g_real(*p).abs() <= TRACE_TOL);
        }
        // Oriented along t = (−b, a): counter-clockwise for the circle.
        let area: f64 = pl
            .points
            .iter()
            .zip(pl.points.iter().cycle().skip(1))
            .map(|(p, q)| p[0] * q[1] - q[0] * p[1])
            .sum();
        assert!(area > 0.0);
    }

    #[test]
    fn vertical_line_and_empty_trace() {
        let c = comp("xi1 - 1");
        let tr = trace_real_curves(&c, &Window::square(2.0), 0.1).unwrap();
        assert_eq!(tr.polylines.len(), 1);
        assert!(!tr.polylines[0].closed);
        assert!(tr.polylines[0]
            .points
            .iter()
            .all(|p| (p[0] - 1.0).abs() <= TRACE_TOL));
        // t = (−b, a) = (0, 1): increasing ξ₂.
        let pts = &tr.polylines[0].points;
        assert!(pts.last().unwrap()[1] > pts[0][1]);
        let none =
            trace_real_curves(&comp("xi1^2 + xi2^2 + 1"), &Window::square(2.0), 0.1).unwrap();
        assert!(none.is_empty());
        assert!(trace_real_curves(&c, &Window::square(2.0), 0.0).is_err());
    }

    #[test]
    fn frames() {
        let c = comp("xi1^2 + xi2^2 - 1");
        let f = frame_at(&c, [1.0, 0.0]).unwrap();
        assert_eq!((f.a, f.b, f.n, f.t), (2.0, 0.0, [1.0, 0.0], [0.0, 1.0]));
        let f = frame_at(&comp("xi2 - 2"), [7.0, 2.0]).unwrap();
        assert_eq!(f.n, [0.0, 1.0]);
        let x = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
        let p = [-x[0] / (2.0 * x[1]), x[0] * x[0] / (4.0 * x[1] * x[1])];
        let f = frame_at(&comp("xi2 - xi1^2"), p).unwrap();
        assert!((f.a - 0.5).abs() < 1e-15 && f.b == 1.0);
        assert!(matches!(
            frame_at(&comp("xi1^2 - xi2^2"), [0.0, 0.0]),
            Err(Error::DegenerateGradient { .. })
        ));
        assert!(matches!(
            frame_at(&c, [0.0, 0.0]),
            Err(Error::OffTrace { .. })
        ));
    }

    #[test]
    fn alphas() {
        let x = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
        let p = [-x[0] / (2.0 * x[1]), x[0] * x[0] / (4.0 * x[1] * x[1])];
        let a = alpha_at(&comp("xi2 - xi1^2"), p).unwrap();
        assert!((a - 16.0 / 25.0).abs() <= 1e-12);
        assert_eq!(alpha_at(&comp("xi2 - 2"), [0.3, 2.0]).unwrap(), 0.0);
        let a = alpha_at(&comp("xi1^2 + xi2^2 - 1"), [1.0, 0.0]).unwrap();
        assert!((a.abs() - 0.25).abs() <= 1e-15);
    }

    #[test]
    fn csv_columns() {
        let tr = trace_real_curves(&comp("xi2 - 0.5"), &Window::square(1.0), 0.5).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,a,b\n"));
        assert_eq!(text.lines().count(), 1 + tr.vertices().count());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn traced_vertices_have_orthonormal_frames(r in 0.3..1.5f64, cx in -0.5..0.5f64, e in 0.3..2.0f64) {
            let c = comp(&format!("(xi1 - {cx})^2 + {e}*xi2^2 - {}", r * r));
            let tr = trace_real_curves(&c, &Window::square(3.0), 0.1).unwrap();
            prop_assert!(!tr.is_empty());
            for (p, _) in tr.vertices() {
                prop_assert!(c.g_real(p).abs() <= TRACE_TOL);
                let f = frame_at(&c, p).unwrap();
                prop_assert!(dot(f.n, f.t).abs() <= 1e-15);
                prop_assert!((dot(f.n, f.n) - 1.0).abs() <= 1e-15 && (dot(f.t, f.t) - 1.0).abs() <= 1e-15);
            }
        }
    }
}
